"""The diverse pool of learnable prompts and its frozen attribute anchors.

A bank holds K classes x N prompts. In the SYNTHETIC regime each prompt is M
learnable context token rows plus one fixed class token row; in the IMPORTED
regime each prompt is a single learnable vector living directly in embedding
space, initialized at its paired attribute embedding. Prompt (i, j) is
permanently paired with attribute embedding (i, j): index identity is the
one-to-one mapping every alignment term relies on.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import rng
from .encoders import EncoderRegime, FrozenTextEncoder
from .errors import ConfigError, ShapeError

CONTEXT_INIT_STD = 0.02
# Class tokens are fixed random embeddings standing in for class-name token
# embeddings; kept near the context scale so prompt features start close
# together and the published learning rate moves them meaningfully.
CLASS_TOKEN_STD = 0.02


@dataclass
class Prompt:
    """One learnable prompt; exactly one parameterization is present."""

    context: ad.Tensor | None = None            # (M, token_dim), learnable
    class_token: ad.Tensor | None = None        # (token_dim,), fixed
    direct_embedding: ad.Tensor | None = None   # (embed_dim,), learnable

    def __post_init__(self):
        token_form = self.context is not None and self.class_token is not None
        direct_form = self.direct_embedding is not None
        if token_form == direct_form:
            raise ConfigError("prompt must be token-form xor embedding-form")
        if token_form:
            if not self.context.requires_grad:
                raise ConfigError("context vectors must be learnable")
            if self.class_token.requires_grad:
                raise ConfigError("class tokens are fixed")
        elif not self.direct_embedding.requires_grad:
            raise ConfigError("direct embeddings must be learnable")


class TextFeatureGrid:
    """K x N unit-norm text features, stacked prompt-major for batched math.

    ``stacked`` has shape (N*K, embed_dim) with row j*K + i holding the
    feature of prompt j for class i; it is tape-attached when produced during
    training.
    """

    def __init__(self, stacked: ad.Tensor, num_classes: int, prompts_per_class: int):
        if stacked.shape != (num_classes * prompts_per_class, stacked.shape[1]):
            raise ShapeError("stacked feature shape does not match grid")
        self.stacked = stacked
        self.num_classes = num_classes
        self.prompts_per_class = prompts_per_class

    @property
    def embed_dim(self) -> int:
        return self.stacked.shape[1]

    def cell(self, class_idx: int, prompt_idx: int) -> ad.Tensor:
        row = prompt_idx * self.num_classes + class_idx
        return ad.reshape(ad.slice_rows(self.stacked, row, row + 1),
                          (self.embed_dim,))

    def as_array(self) -> np.ndarray:
        """Detached (K, N, d) view of the features."""
        n, k, d = self.prompts_per_class, self.num_classes, self.embed_dim
        return self.stacked.data.reshape(n, k, d).transpose(1, 0, 2).copy()


@dataclass
class PromptBank:
    num_classes: int
    prompts_per_class: int
    context_length: int
    regime: EncoderRegime
    prompts: list[list[Prompt]]                 # [class][prompt]
    attribute_embeddings: np.ndarray            # (K, N, d), unit rows, frozen
    attribute_texts: list[list[str]]
    class_tokens: np.ndarray | None = None      # (K, token_dim), SYNTHETIC only
    seed: int = 0
    trained_epochs: int = 0
    _attr_stacked: np.ndarray | None = field(default=None, repr=False)

    def attribute_stacked(self) -> np.ndarray:
        """Attributes in the same prompt-major (N*K, d) layout as features."""
        if self._attr_stacked is None:
            self._attr_stacked = np.ascontiguousarray(
                self.attribute_embeddings.transpose(1, 0, 2).reshape(
                    self.prompts_per_class * self.num_classes, -1))
        return self._attr_stacked


def stack_attributes(attributes: np.ndarray) -> np.ndarray:
    """L2-normalize an attribute grid (K, N, d) defensively, row by row."""
    attrs = np.asarray(attributes, dtype=np.float64)
    if attrs.ndim != 3:
        raise ShapeError("attribute grid must have shape (K, N, d)")
    norms = np.sqrt((attrs * attrs).sum(axis=2, keepdims=True))
    if np.any(norms < 1e-300):
        raise ShapeError("attribute embedding with zero norm")
    return attrs / norms


def init_bank(num_classes: int, prompts_per_class: int, regime: EncoderRegime,
              attributes: np.ndarray, seed: int, context_length: int = 4,
              token_dim: int = 16,
              attribute_texts: list[list[str]] | None = None,
              class_token_ids: list[int] | None = None) -> PromptBank:
    """Create a bank with deterministic initialization.

    SYNTHETIC: context rows ~ N(0, 0.02^2), class tokens ~ N(0, 1) per class
    id, both keyed by the seed. IMPORTED: each direct embedding starts as a
    copy of its paired attribute embedding. ``class_token_ids`` preserves
    token identity when the bank covers a subset of a larger class set.
    """
    if num_classes < 2:
        raise ConfigError("need at least 2 classes")
    if prompts_per_class < 1:
        raise ConfigError("need at least 1 prompt per class")
    attrs = stack_attributes(attributes)
    if attrs.shape[0] != num_classes or attrs.shape[1] != prompts_per_class:
        raise ShapeError(f"attribute grid {attrs.shape} does not match "
                         f"K={num_classes}, N={prompts_per_class}")
    if attribute_texts is None:
        attribute_texts = [[f"class {i} attribute {j}"
                            for j in range(prompts_per_class)]
                           for i in range(num_classes)]
    if class_token_ids is None:
        class_token_ids = list(range(num_classes))
    if len(class_token_ids) != num_classes:
        raise ConfigError("class_token_ids must have one entry per class")

    prompts: list[list[Prompt]] = []
    class_tokens = None
    if regime is EncoderRegime.SYNTHETIC:
        class_tokens = np.stack([
            rng.normals(seed, (token_dim,), "bank", "class_token", cid,
                        std=CLASS_TOKEN_STD)
            for cid in class_token_ids])
        for i in range(num_classes):
            row = []
            for j in range(prompts_per_class):
                ctx = rng.normals(seed, (context_length, token_dim),
                                  "bank", "context", class_token_ids[i], j,
                                  std=CONTEXT_INIT_STD)
                row.append(Prompt(context=ad.parameter(ctx),
                                  class_token=ad.constant(class_tokens[i])))
            prompts.append(row)
    else:
        for i in range(num_classes):
            row = [Prompt(direct_embedding=ad.parameter(attrs[i, j].copy()))
                   for j in range(prompts_per_class)]
            prompts.append(row)

    return PromptBank(num_classes=num_classes, prompts_per_class=prompts_per_class,
                      context_length=context_length, regime=regime,
                      prompts=prompts, attribute_embeddings=attrs,
                      attribute_texts=attribute_texts, class_tokens=class_tokens,
                      seed=seed)


def encode_all(bank: PromptBank,
               encoder: FrozenTextEncoder | None) -> TextFeatureGrid:
    """Produce the K x N unit-norm feature grid, differentiable w.r.t. the
    learnable prompt parameters.

    IMPORTED prompts are re-normalized copies so gradients flow through the
    normalization even at initialization.
    """
    k, n = bank.num_classes, bank.prompts_per_class
    if bank.regime is EncoderRegime.SYNTHETIC:
        if encoder is None:
            raise ConfigError("SYNTHETIC regime requires a text encoder")
        rows: list[ad.Tensor] = []
        for j in range(n):
            for i in range(k):
                p = bank.prompts[i][j]
                rows.append(p.context)
                rows.append(p.class_token)
        tokens = ad.concat_rows(rows)
        stacked = encoder.encode_batch(tokens, n * k, bank.context_length + 1)
    else:
        rows = [bank.prompts[i][j].direct_embedding
                for j in range(n) for i in range(k)]
        stacked = ad.l2_normalize(ad.concat_rows(rows))
    return TextFeatureGrid(stacked, k, n)


def trainable_parameters(bank: PromptBank) -> list[ad.Tensor]:
    """The flat list of leaf tensors SGD updates: contexts (SYNTHETIC) or
    direct embeddings (IMPORTED). Class tokens, encoder weights, and
    attribute embeddings are never included."""
    params: list[ad.Tensor] = []
    for i in range(bank.num_classes):
        for j in range(bank.prompts_per_class):
            p = bank.prompts[i][j]
            params.append(p.context if p.context is not None
                          else p.direct_embedding)
    return params


def parameter_count(bank: PromptBank) -> int:
    return sum(p.size for p in trainable_parameters(bank))


def context_parameter_count(prompts_per_class: int, context_length: int,
                            token_dim: int, num_classes: int | None = None) -> int:
    """Learnable scalar count for token-space prompts.

    With ``num_classes`` given, contexts are class-specific (this package's
    convention); without it, the count is for a single context set shared
    across classes.
    """
    base = prompts_per_class * context_length * token_dim
    return base * num_classes if num_classes is not None else base


def clone_bank(bank: PromptBank) -> PromptBank:
    """Deep copy with fresh leaf tensors (used for checkpoint round-trips)."""
    prompts: list[list[Prompt]] = []
    for i in range(bank.num_classes):
        row = []
        for j in range(bank.prompts_per_class):
            p = bank.prompts[i][j]
            if p.context is not None:
                row.append(Prompt(context=ad.parameter(p.context.data.copy()),
                                  class_token=ad.constant(p.class_token.data.copy())))
            else:
                row.append(Prompt(direct_embedding=ad.parameter(
                    p.direct_embedding.data.copy())))
        prompts.append(row)
    return PromptBank(
        num_classes=bank.num_classes, prompts_per_class=bank.prompts_per_class,
        context_length=bank.context_length, regime=bank.regime, prompts=prompts,
        attribute_embeddings=bank.attribute_embeddings.copy(),
        attribute_texts=[list(r) for r in bank.attribute_texts],
        class_tokens=None if bank.class_tokens is None else bank.class_tokens.copy(),
        seed=bank.seed, trained_epochs=bank.trained_epochs)
