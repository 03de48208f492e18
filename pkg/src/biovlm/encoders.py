"""Frozen text and image encoders over a shared embedding space.

Both encoders are small two-layer affine/tanh networks whose weights are a
pure function of (seed, dimensions), generated from a counter-based random
stream. They stand in for a pretrained backbone: the text side is
differentiable with respect to its *inputs* (the learnable prompt tokens)
while its weights never receive gradients; the image side is entirely
detached from the tape. Outputs are L2-normalized, so downstream cosine
similarity reduces to a dot product.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from . import autodiff as ad
from . import rng
from .errors import ShapeError


class EncoderRegime(Enum):
    """How text features are produced.

    SYNTHETIC: both encoders active; text features computed live from prompt
    tokens. IMPORTED: embeddings come precomputed from a bundle and learnable
    prompts are parameterized directly in embedding space.
    """

    SYNTHETIC = "synthetic"
    IMPORTED = "imported"


@dataclass(frozen=True)
class EncoderConfig:
    seed: int = 0
    token_dim: int = 16
    embed_dim: int = 64
    image_dim: int = 32
    hidden_dim: int = 128
    # First-layer weight gain of the text tower. Calibrated so the published
    # SGD recipe (lr 2e-3, 50 epochs) trains prompt tokens effectively
    # through this small stand-in stack.
    text_gain: float = 6.0

    def to_dict(self) -> dict:
        return {"seed": self.seed, "token_dim": self.token_dim,
                "embed_dim": self.embed_dim, "image_dim": self.image_dim,
                "hidden_dim": self.hidden_dim, "text_gain": self.text_gain}

    @staticmethod
    def from_dict(d: dict) -> "EncoderConfig":
        return EncoderConfig(seed=int(d["seed"]), token_dim=int(d["token_dim"]),
                             embed_dim=int(d["embed_dim"]),
                             image_dim=int(d["image_dim"]),
                             hidden_dim=int(d.get("hidden_dim", 128)),
                             text_gain=float(d.get("text_gain", 6.0)))


def _affine_weights(seed: int, tag: str, fan_in: int, fan_out: int,
                    gain: float = 1.0):
    scale = gain / np.sqrt(fan_in)
    w = rng.normals(seed, (fan_in, fan_out), "weights", tag, 0, std=scale)
    b = rng.normals(seed, (fan_out,), "weights", tag, 1, std=0.1)
    return w, b


class FrozenTextEncoder:
    """Token rows -> unit-norm embedding: affine, tanh, mean-pool, affine."""

    def __init__(self, token_dim: int, embed_dim: int, seed: int,
                 hidden_dim: int | None = None, gain: float = 6.0):
        self.token_dim = token_dim
        self.embed_dim = embed_dim
        self.hidden_dim = hidden_dim or 2 * embed_dim
        self.seed = seed
        self.gain = gain
        w1, b1 = _affine_weights(seed, "text1", token_dim, self.hidden_dim,
                                 gain=gain)
        w2, b2 = _affine_weights(seed, "text2", self.hidden_dim, embed_dim)
        self.w1, self.b1, self.w2, self.b2 = w1, b1, w2, b2
        self._w1_t = ad.constant(w1)
        self._w2_t = ad.constant(w2)
        self._bias_cache: dict[tuple[str, int], ad.Tensor] = {}

    def weight_arrays(self) -> dict[str, np.ndarray]:
        return {"w1": self.w1, "b1": self.b1, "w2": self.w2, "b2": self.b2}

    def encode_batch(self, tokens: ad.Tensor, num_sequences: int,
                     rows_per_sequence: int) -> ad.Tensor:
        """Encode stacked token rows: (P*T, token_dim) -> (P, embed_dim).

        Gradients flow to ``tokens`` only; weights are tape constants.
        """
        if tokens.data.ndim != 2 or tokens.shape[1] != self.token_dim:
            raise ShapeError(f"expected (*, {self.token_dim}) tokens, "
                             f"got {tokens.shape}")
        if tokens.shape[0] != num_sequences * rows_per_sequence:
            raise ShapeError("token row count does not match sequence layout")
        h = ad.matmul(tokens, self._w1_t)
        h = ad.add(h, self._tiled_bias("b1", tokens.shape[0]))
        h = ad.tanh(h)
        pooled = ad.mean_axis(
            ad.reshape(h, (num_sequences, rows_per_sequence, self.hidden_dim)), 1)
        out = ad.matmul(pooled, self._w2_t)
        out = ad.add(out, self._tiled_bias("b2", num_sequences))
        return ad.l2_normalize(out)

    def _tiled_bias(self, which: str, n_rows: int) -> ad.Tensor:
        key = (which, n_rows)
        cached = self._bias_cache.get(key)
        if cached is None:
            bias = self.b1 if which == "b1" else self.b2
            cached = ad.constant(np.tile(bias, (n_rows, 1)))
            self._bias_cache[key] = cached
        return cached

    def encode(self, tokens: ad.Tensor) -> ad.Tensor:
        """Encode one token sequence (T, token_dim) -> (embed_dim,)."""
        if tokens.data.ndim != 2:
            raise ShapeError("encode expects a 2-D token matrix")
        out = self.encode_batch(tokens, 1, tokens.shape[0])
        return ad.reshape(out, (self.embed_dim,))


class FrozenImageEncoder:
    """Raw feature vector -> unit-norm embedding, never on the tape."""

    def __init__(self, input_dim: int, embed_dim: int, seed: int,
                 hidden_dim: int | None = None):
        self.input_dim = input_dim
        self.embed_dim = embed_dim
        self.hidden_dim = hidden_dim or 2 * embed_dim
        self.seed = seed
        self.w1, self.b1 = _affine_weights(seed, "image1", input_dim,
                                           self.hidden_dim)
        self.w2, self.b2 = _affine_weights(seed, "image2", self.hidden_dim,
                                           embed_dim)

    def weight_arrays(self) -> dict[str, np.ndarray]:
        return {"w1": self.w1, "b1": self.b1, "w2": self.w2, "b2": self.b2}

    def encode_batch(self, samples: np.ndarray) -> np.ndarray:
        """Encode (B, input_dim) raw features into (B, embed_dim) unit rows."""
        samples = np.atleast_2d(np.asarray(samples, dtype=np.float64))
        if samples.shape[1] != self.input_dim:
            raise ShapeError(f"expected (*, {self.input_dim}) samples, "
                             f"got {samples.shape}")
        h = np.tanh(samples @ self.w1 + self.b1)
        out = h @ self.w2 + self.b2
        norms = np.sqrt((out * out).sum(axis=1, keepdims=True))
        return out / norms

    def encode(self, sample: np.ndarray) -> np.ndarray:
        sample = np.asarray(sample, dtype=np.float64)
        if sample.ndim != 1:
            raise ShapeError("encode expects a 1-D raw feature vector")
        return self.encode_batch(sample[None, :])[0]


def build_encoders(cfg: EncoderConfig) -> tuple[FrozenTextEncoder, FrozenImageEncoder]:
    text = FrozenTextEncoder(cfg.token_dim, cfg.embed_dim, cfg.seed,
                             hidden_dim=cfg.hidden_dim, gain=cfg.text_gain)
    image = FrozenImageEncoder(cfg.image_dim, cfg.embed_dim, cfg.seed,
                               hidden_dim=cfg.hidden_dim)
    return text, image
