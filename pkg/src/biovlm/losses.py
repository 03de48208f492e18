"""The composite training objective and its teacher distributions.

Four terms combine into the step loss:

* cross-entropy of the selected aggregate against the label;
* attribute-semantic alignment: negative summed cosine between each prompt's
  feature and its paired frozen attribute embedding (one-to-one by index);
* low-entropy regularization: the summed self-entropies of the student
  prediction and both teacher distributions;
* cross-modal distillation: KL(teacher || student) for the attribute-matching
  teacher and the augmentation teacher.

Teachers are gradient-isolated where they act as distillation targets: the
attribute teacher is constant with respect to the prompts by construction,
and the augmentation teacher is detached inside the KL term. Its entropy in
the regularizer stays differentiable, since that distribution does depend on
the learnable prompts.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels as K
from . import autodiff as ad
from .errors import ConfigError, ShapeError
from .promptbank import PromptBank, TextFeatureGrid
from .selection import (ClassDistribution, SelectionConfig, aggregate,
                        batched_aggregate, batched_prompt_cosines)

PROB_FLOOR = 1e-12


@dataclass(frozen=True)
class LossWeights:
    lambda1: float = 1.0   # alignment
    lambda2: float = 0.5   # low-entropy regularization
    lambda3: float = 1.0   # cross-modal distillation

    def __post_init__(self):
        for name in ("lambda1", "lambda2", "lambda3"):
            v = getattr(self, name)
            if not np.isfinite(v) or v < 0.0:
                raise ConfigError(f"{name} must be finite and >= 0, got {v}")


@dataclass
class TeacherSet:
    p_llm: ClassDistribution
    p_aug: ClassDistribution


@dataclass
class LossBreakdown:
    ce: ad.Tensor
    asa: ad.Tensor
    ler: ad.Tensor
    cmd: ad.Tensor
    total: ad.Tensor

    def values(self) -> dict[str, float]:
        return {"ce": self.ce.item(), "asa": self.asa.item(),
                "ler": self.ler.item(), "cmd": self.cmd.item(),
                "total": self.total.item()}


# ---------------------------------------------------------------------------
# Per-sample operations
# ---------------------------------------------------------------------------

def loss_ce(p: ClassDistribution, label: int) -> ad.Tensor:
    """-log p[label], probability floored at 1e-12 before the log."""
    if not 0 <= label < p.num_classes:
        raise IndexError(f"label {label} out of range for K={p.num_classes}")
    row = ad.reshape(p.probs, (1, p.num_classes))
    picked = ad.take_per_row(row, [label])
    return ad.neg(ad.reshape(ad.log_floored(picked, PROB_FLOOR), ()))


def loss_asa(grid: TextFeatureGrid, attributes: np.ndarray) -> ad.Tensor:
    """Negative sum of cosines between features and paired attributes.

    ``attributes`` is the (K, N, d) frozen grid; pairing is positional. No
    averaging: the value lives in [-K*N, K*N].
    """
    k, n = grid.num_classes, grid.prompts_per_class
    attrs = np.asarray(attributes, dtype=np.float64)
    if attrs.shape != (k, n, grid.embed_dim):
        raise ShapeError(f"attribute grid {attrs.shape} does not match "
                         f"features ({k}, {n}, {grid.embed_dim})")
    stacked_attrs = attrs.transpose(1, 0, 2).reshape(n * k, grid.embed_dim)
    norms = np.sqrt((stacked_attrs * stacked_attrs).sum(axis=1, keepdims=True))
    feats = ad.l2_normalize(grid.stacked)
    dots = ad.mul(feats, ad.constant(stacked_attrs / norms))
    return ad.neg(ad.sum_(dots))


def teacher_llm(v: np.ndarray, attributes: np.ndarray, beta: float,
                mode: str = "mean", rho: float = 50.0) -> ClassDistribution:
    """Distribution from matching an image embedding against the frozen
    attribute grid. Constant w.r.t. the learnable prompts.

    mode "mean": per-class logit is the mean cosine over that class's
    attributes, then one softmax at temperature beta. mode "entropy": the
    attribute columns are treated as a prompt pool and run through the
    entropy-percentile selection instead.
    """
    probs = batched_teacher_llm(np.asarray(v)[None, :], attributes, beta,
                                mode=mode, rho=rho)[0]
    return ClassDistribution(ad.constant(probs))


def batched_teacher_llm(v_batch: np.ndarray, attributes: np.ndarray,
                        beta: float, mode: str = "mean",
                        rho: float = 50.0) -> np.ndarray:
    """(B, K) attribute-teacher probabilities, computed off-tape."""
    if not beta > 0.0:
        raise ConfigError("beta must be > 0")
    v = np.atleast_2d(np.asarray(v_batch, dtype=np.float64))
    v = v / np.sqrt((v * v).sum(axis=1, keepdims=True))
    attrs = np.asarray(attributes, dtype=np.float64)
    k, n, d = attrs.shape
    if mode == "mean":
        logits = v @ attrs.mean(axis=1).T  # (B, K)
        return K.softmax_rows(np.ascontiguousarray(logits / beta))
    if mode == "entropy":
        cfg = SelectionConfig(beta=beta, rho=rho, strategy="entropy")
        stacked = attrs.transpose(1, 0, 2).reshape(n * k, d)
        cos = (v @ stacked.T).reshape(v.shape[0], n, k)
        out = np.empty((v.shape[0], k))
        for r in range(v.shape[0]):
            out[r] = aggregate(ad.constant(cos[r]), cfg).aggregate.as_array()
        return out
    raise ConfigError(f"unknown attribute-teacher mode {mode!r}")


def teacher_aug(v_weak: np.ndarray, v_strong: np.ndarray,
                grid: TextFeatureGrid, cfg: SelectionConfig) -> ClassDistribution:
    """Mean of the selection-pipeline outputs for the weak and strong views.

    Tape-attached: the result depends on the learnable prompts through the
    selected distributions.
    """
    probs = batched_teacher_aug(np.asarray(v_weak)[None, :],
                                np.asarray(v_strong)[None, :], grid, cfg)
    return ClassDistribution(ad.reshape(probs, (grid.num_classes,)))


def batched_teacher_aug(v_weak: np.ndarray, v_strong: np.ndarray,
                        grid: TextFeatureGrid,
                        cfg: SelectionConfig) -> ad.Tensor:
    weak = batched_aggregate(batched_prompt_cosines(v_weak, grid), cfg)
    strong = batched_aggregate(batched_prompt_cosines(v_strong, grid), cfg)
    return ad.scale(ad.add(weak, strong), 0.5)


def _entropy_scalar(p: ad.Tensor) -> ad.Tensor:
    return ad.reshape(ad.entropy_rows(ad.reshape(p, (1, p.size))), ())


def loss_ler(p: ClassDistribution, p_llm: ClassDistribution,
             p_aug: ClassDistribution) -> ad.Tensor:
    """H(p) + H(p_llm) + H(p_aug). The attribute-teacher entropy is a logged
    constant (it has no prompt dependence); the other two are differentiable."""
    h_p = _entropy_scalar(p.probs)
    h_llm = _entropy_scalar(ad.detach(p_llm.probs))
    h_aug = _entropy_scalar(p_aug.probs)
    return ad.add(ad.add(h_p, h_llm), h_aug)


def _kl_const_teacher(teacher: np.ndarray, student: ad.Tensor) -> ad.Tensor:
    """KL(teacher || student) rows with a constant teacher, shape-preserving
    over rows: (B, K) -> (B,). Probabilities floored at 1e-12 inside logs."""
    t = np.atleast_2d(teacher)
    log_t = np.log(np.maximum(t, PROB_FLOOR))
    diff = ad.sub(ad.constant(log_t), ad.log_floored(student, PROB_FLOOR))
    return ad.sum_axis(ad.mul(ad.constant(t), diff), 1)


def loss_cmd(p: ClassDistribution, p_llm: ClassDistribution,
             p_aug: ClassDistribution) -> ad.Tensor:
    """KL(p_llm || p) + KL(p_aug || p), teachers first and detached."""
    student = ad.reshape(p.probs, (1, p.num_classes))
    kl_llm = _kl_const_teacher(p_llm.probs.data, student)
    kl_aug = _kl_const_teacher(p_aug.probs.data, student)
    return ad.reshape(ad.add(kl_llm, kl_aug), ())


# ---------------------------------------------------------------------------
# Step-level objective
# ---------------------------------------------------------------------------

@dataclass
class BatchContext:
    """Everything one optimization step needs to evaluate the objective."""

    bank: PromptBank
    grid: TextFeatureGrid
    v_orig: np.ndarray      # (B, d) image embeddings, detached
    v_weak: np.ndarray
    v_strong: np.ndarray
    labels: np.ndarray      # (B,) int
    selection: SelectionConfig
    weights: LossWeights
    llm_teacher_mode: str = "mean"
    # When set, the distillation term uses this (B, K) array as the
    # augmentation teacher instead of the freshly detached one. Finite
    # difference probes need this: the optimized objective treats the teacher
    # as a constant of the step, so the probe must hold it fixed too.
    frozen_aug_teacher: np.ndarray | None = None


def total_loss(ctx: BatchContext) -> LossBreakdown:
    """Batch objective: per-sample terms averaged over the batch, plus the
    data-independent alignment term computed once."""
    b = ctx.v_orig.shape[0]
    if ctx.labels.shape[0] != b:
        raise ShapeError("labels do not match batch size")

    p = batched_aggregate(batched_prompt_cosines(ctx.v_orig, ctx.grid),
                          ctx.selection)                       # (B, K) on tape
    p_aug = batched_teacher_aug(ctx.v_weak, ctx.v_strong, ctx.grid,
                                ctx.selection)                 # (B, K) on tape
    p_llm = batched_teacher_llm(ctx.v_orig, ctx.bank.attribute_embeddings,
                                ctx.selection.beta,
                                mode=ctx.llm_teacher_mode)     # (B, K) const

    ce = ad.neg(ad.mean(ad.log_floored(ad.take_per_row(p, ctx.labels),
                                       PROB_FLOOR)))
    asa = loss_asa(ctx.grid, ctx.bank.attribute_embeddings)

    h_p = ad.mean(ad.entropy_rows(p))
    h_aug = ad.mean(ad.entropy_rows(p_aug))
    h_llm = ad.constant(float(np.mean(K.entropy_rows(
        np.ascontiguousarray(p_llm)))))
    ler = ad.add(ad.add(h_p, h_llm), h_aug)

    kl_llm = ad.mean(_kl_const_teacher(p_llm, p))
    aug_teacher = (ctx.frozen_aug_teacher if ctx.frozen_aug_teacher is not None
                   else p_aug.detach().data)
    kl_aug = ad.mean(_kl_const_teacher(aug_teacher, p))
    cmd = ad.add(kl_llm, kl_aug)

    w = ctx.weights
    total = ad.add(ad.add(ce, ad.scale(asa, w.lambda1)),
                   ad.add(ad.scale(ler, w.lambda2), ad.scale(cmd, w.lambda3)))
    return LossBreakdown(ce=ce, asa=asa, ler=ler, cmd=cmd, total=total)
