"""Per-prompt class distributions, self-entropy, and prompt aggregation.

For one input embedding V and the prompt feature grid, each prompt j yields a
class distribution (softmax over cosine similarities at temperature beta).
Prompts whose self-entropy falls at or below the nearest-rank rho-percentile
of the pool are selected, and the prediction is the normalized average of the
selected distributions. Alternative aggregation strategies (mean, softmax
weighting, averaged logits, argmax, top-k) are provided for ablations.

Selection masks and chosen indices are treated as constants on the gradient
tape: gradients flow through the selected distributions only, never through
the indicator.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from . import _kernels as K
from . import autodiff as ad
from .errors import ConfigError, ShapeError
from .promptbank import TextFeatureGrid

STRATEGIES = ("entropy", "softmax", "mean", "avg_logits", "argmax", "topk")


@dataclass(frozen=True)
class SelectionConfig:
    beta: float = 0.01
    rho: float = 50.0
    strategy: str = "entropy"
    top_k: int = 2

    def __post_init__(self):
        if not self.beta > 0.0:
            raise ConfigError(f"temperature beta must be > 0, got {self.beta}")
        if not 0.0 < self.rho <= 100.0:
            raise ConfigError(f"percentile rho must be in (0, 100], got {self.rho}")
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"unknown strategy {self.strategy!r}; "
                              f"choose from {STRATEGIES}")
        if self.strategy == "topk" and self.top_k < 1:
            raise ConfigError("top_k must be >= 1")


@dataclass
class ClassDistribution:
    """A length-K probability vector, possibly tape-attached."""

    probs: ad.Tensor

    def __post_init__(self):
        p = self.probs.data
        if p.ndim != 1:
            raise ShapeError("class distribution must be 1-D")
        if np.any(p < -1e-12) or abs(float(p.sum()) - 1.0) > 1e-10:
            raise ShapeError("probabilities must be non-negative and sum to 1")

    @property
    def num_classes(self) -> int:
        return self.probs.shape[0]

    def as_array(self) -> np.ndarray:
        return self.probs.data.copy()


@dataclass
class SelectionTrace:
    per_prompt_probs: list[ClassDistribution]
    entropies: list[float]
    threshold: float
    selected_mask: list[bool]
    aggregate: ClassDistribution
    strategy: str = "entropy"

    def __post_init__(self):
        if not any(self.selected_mask):
            raise ShapeError("selection mask must keep at least one prompt")

    def to_dict(self) -> dict:
        return {
            "strategy": self.strategy,
            "per_prompt_probs": [d.as_array().tolist()
                                 for d in self.per_prompt_probs],
            "entropies": list(self.entropies),
            "threshold": self.threshold,
            "selected_mask": list(self.selected_mask),
            "aggregate": self.aggregate.as_array().tolist(),
        }


# ---------------------------------------------------------------------------
# Cosine grids
# ---------------------------------------------------------------------------

def prompt_cosines(v: ad.Tensor, grid: TextFeatureGrid) -> ad.Tensor:
    """(N, K) cosine matrix between one embedding and every prompt feature.

    V is re-normalized defensively; grid features are unit-norm by contract,
    so cosines are plain dot products against them.
    """
    if v.data.ndim != 1 or v.shape[0] != grid.embed_dim:
        raise ShapeError(f"embedding must be 1-D of dim {grid.embed_dim}")
    vn = ad.l2_normalize(v)
    col = ad.reshape(vn, (grid.embed_dim, 1))
    flat = ad.matmul(grid.stacked, col)
    return ad.reshape(flat, (grid.prompts_per_class, grid.num_classes))


def batched_prompt_cosines(v_batch: np.ndarray, grid: TextFeatureGrid) -> ad.Tensor:
    """(B, N, K) cosine tensor for a detached batch of image embeddings."""
    v = np.atleast_2d(np.asarray(v_batch, dtype=np.float64))
    norms = np.sqrt((v * v).sum(axis=1, keepdims=True))
    v = v / norms
    flat = ad.matmul(ad.constant(v), ad.transpose(grid.stacked))
    return ad.reshape(flat, (v.shape[0], grid.prompts_per_class,
                             grid.num_classes))


# ---------------------------------------------------------------------------
# Spec operations (per-sample)
# ---------------------------------------------------------------------------

def per_prompt_distribution(v: ad.Tensor, grid: TextFeatureGrid, j: int,
                            beta: float) -> ClassDistribution:
    """Distribution of prompt j: softmax_i of cos(V, T_i^j) / beta."""
    if not beta > 0.0:
        raise ConfigError("beta must be > 0")
    cos = prompt_cosines(v, grid)
    row = ad.reshape(ad.slice_rows(cos, j, j + 1), (grid.num_classes,))
    return ClassDistribution(ad.softmax(ad.scale(row, 1.0 / beta)))


def self_entropy(dist: ClassDistribution | ad.Tensor) -> float:
    """Shannon entropy (natural log) of a distribution; 0*log(0) = 0."""
    probs = dist.probs if isinstance(dist, ClassDistribution) else dist
    return float(ad.entropy_rows(probs).data)


def percentile_threshold(entropies, rho: float) -> float:
    """Nearest-rank percentile: ascending sort, rank ceil(rho/100 * N)."""
    values = [float(v) for v in entropies]
    if not values:
        raise ShapeError("percentile of an empty list")
    if not 0.0 < rho <= 100.0:
        raise ConfigError(f"rho must be in (0, 100], got {rho}")
    values.sort()
    rank = max(1, math.ceil(rho * len(values) / 100.0))
    return values[rank - 1]


def _selection_weights(probs: np.ndarray, entropies: np.ndarray, cfg:
                       SelectionConfig) -> tuple[np.ndarray, float, np.ndarray]:
    """Constant per-prompt aggregation weights for one sample.

    Returns (weights over N, threshold, boolean mask of contributing prompts).
    The weights always sum to 1; the gradient never flows through them.
    """
    n = probs.shape[0]
    if cfg.strategy == "entropy":
        tau = percentile_threshold(entropies, cfg.rho)
        mask = entropies <= tau
        weights = mask.astype(np.float64)
        weights /= weights.sum()
        return weights, tau, mask
    if cfg.strategy == "mean":
        mask = np.ones(n, dtype=bool)
        return np.full(n, 1.0 / n), float(entropies.max()), mask
    if cfg.strategy == "softmax":
        shifted = -(entropies - entropies.min())
        w = np.exp(shifted)
        w /= w.sum()
        mask = np.ones(n, dtype=bool)
        return w, float(entropies.max()), mask
    if cfg.strategy == "argmax":
        conf = probs.max(axis=1)
        j_star = int(np.argmax(conf))  # ties: lowest prompt index
        weights = np.zeros(n)
        weights[j_star] = 1.0
        mask = weights > 0
        return weights, float(entropies[j_star]), mask
    if cfg.strategy == "topk":
        k = cfg.top_k
        if k > n:
            warnings.warn(f"top_k={k} exceeds pool size {n}; clamping")
            k = n
        conf = probs.max(axis=1)
        order = sorted(range(n), key=lambda j: (-conf[j], j))[:k]
        weights = np.zeros(n)
        weights[order] = 1.0 / k
        mask = weights > 0
        return weights, float(entropies[mask].max()), mask
    raise ConfigError(f"strategy {cfg.strategy!r} has no weight rule")


def aggregate(cosines: ad.Tensor, cfg: SelectionConfig) -> SelectionTrace:
    """Full per-sample selection over an (N, K) cosine matrix."""
    if cosines.data.ndim != 2:
        raise ShapeError("aggregate expects an (N, K) cosine matrix")
    n, k = cosines.shape
    probs_t = ad.softmax(ad.scale(cosines, 1.0 / cfg.beta))
    probs = probs_t.data
    entropies = K.entropy_rows(np.ascontiguousarray(probs))

    if cfg.strategy == "avg_logits":
        mean_logits = ad.mean_axis(cosines, 0)
        agg = ad.softmax(ad.scale(mean_logits, 1.0 / cfg.beta))
        mask = np.ones(n, dtype=bool)
        tau = float(entropies.max())
    else:
        weights, tau, mask = _selection_weights(probs, entropies, cfg)
        weighted = ad.mul(probs_t, ad.constant(
            np.repeat(weights[:, None], k, axis=1)))
        agg = ad.sum_axis(weighted, 0)

    per_prompt = [ClassDistribution(
        ad.reshape(ad.slice_rows(probs_t, j, j + 1), (k,))) for j in range(n)]
    return SelectionTrace(per_prompt_probs=per_prompt,
                          entropies=[float(h) for h in entropies],
                          threshold=tau, selected_mask=[bool(m) for m in mask],
                          aggregate=ClassDistribution(agg),
                          strategy=cfg.strategy)


def predict(v: ad.Tensor | np.ndarray, grid: TextFeatureGrid,
            cfg: SelectionConfig) -> tuple[int, SelectionTrace]:
    """Label (argmax of the aggregate, ties to the lowest class index) plus
    the full selection trace."""
    if not isinstance(v, ad.Tensor):
        v = ad.constant(v)
    trace = aggregate(prompt_cosines(v, grid), cfg)
    label = int(np.argmax(trace.aggregate.probs.data))
    return label, trace


# ---------------------------------------------------------------------------
# Batched tape path (training)
# ---------------------------------------------------------------------------

def batched_aggregate(cosines: ad.Tensor, cfg: SelectionConfig) -> ad.Tensor:
    """(B, N, K) cosines -> (B, K) aggregate distributions on the tape.

    Semantically identical to calling :func:`aggregate` per sample; masks and
    weights are computed from detached values and enter as constants.
    """
    if cosines.data.ndim != 3:
        raise ShapeError("batched_aggregate expects (B, N, K) cosines")
    b, n, k = cosines.shape
    probs_t = ad.softmax(ad.scale(cosines, 1.0 / cfg.beta))

    if cfg.strategy == "avg_logits":
        mean_logits = ad.mean_axis(cosines, 1)
        return ad.softmax(ad.scale(mean_logits, 1.0 / cfg.beta))

    probs = probs_t.data
    entropies = K.entropy_rows(
        np.ascontiguousarray(probs.reshape(b * n, k))).reshape(b, n)
    weights = np.empty((b, n))
    for r in range(b):
        weights[r], _, _ = _selection_weights(probs[r], entropies[r], cfg)
    weighted = ad.mul(probs_t, ad.constant(
        np.repeat(weights[:, :, None], k, axis=2)))
    return ad.sum_axis(weighted, 1)
