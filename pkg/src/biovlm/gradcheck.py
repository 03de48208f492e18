"""Finite-difference verification of the objective's gradients.

Central differences (h = 1e-5) against the tape, for each loss term and for
the weighted total under every on/off combination of the three auxiliary
weights. The augmentation teacher is frozen at the base point (the optimized
objective treats it as a constant of the step, so the probe must as well),
and probes that land on a selection-mask boundary are resampled: the mask is
piecewise constant, so the objective is differentiable only where the
perturbation leaves it unchanged.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .encoders import EncoderRegime
from .errors import NumericalError
from .losses import (BatchContext, LossWeights, batched_teacher_aug,
                     total_loss)
from .promptbank import encode_all, init_bank, trainable_parameters
from .selection import SelectionConfig, batched_prompt_cosines

LAMBDA_GRID = ((0.0, 0.0, 0.0), (0.0, 0.5, 0.0), (0.0, 0.0, 1.0),
               (1.0, 0.0, 0.0), (0.0, 0.5, 1.0), (1.0, 0.0, 1.0),
               (1.0, 0.5, 0.0), (1.0, 0.5, 1.0))
TERMS = ("ce", "asa", "ler", "cmd", "total")


@dataclass
class GradCheckResult:
    max_rel_error: dict[str, float]
    samples: dict[str, int]
    skipped_boundary: int
    tolerance: float = 1e-4

    @property
    def passed(self) -> bool:
        return all(v < self.tolerance for v in self.max_rel_error.values())


def _unit_rows(g, rows, d):
    x = g.standard_normal((rows, d))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def _fixture(seed: int):
    """Small imported-regime bank plus one batch of views."""
    g = np.random.default_rng(seed)
    k, n, d, b = 3, 3, 8, 2
    attrs = _unit_rows(g, k * n, d).reshape(k, n, d)
    bank = init_bank(k, n, EncoderRegime.IMPORTED, attrs, seed=seed)
    for p in trainable_parameters(bank):
        p.data += g.normal(scale=0.3, size=p.data.shape)
    batch = dict(v_orig=_unit_rows(g, b, d), v_weak=_unit_rows(g, b, d),
                 v_strong=_unit_rows(g, b, d),
                 labels=g.integers(0, k, size=b))
    return bank, batch


def _selection_masks(bank, batch, cfg: SelectionConfig) -> np.ndarray:
    """Detached per-view entropy orderings used for boundary detection."""
    grid = encode_all(bank, None)
    masks = []
    for key in ("v_orig", "v_weak", "v_strong"):
        cos = batched_prompt_cosines(batch[key], grid).data
        b, n, k = cos.shape
        from . import _kernels as K
        probs = K.softmax_rows(
            np.ascontiguousarray((cos / cfg.beta).reshape(b * n, k)))
        ents = K.entropy_rows(probs).reshape(b, n)
        order = np.argsort(ents, axis=1, kind="stable")
        masks.append(order)
    return np.stack(masks)


def run_gradcheck(seeds: int = 10, probes_per_seed: int = 12,
                  h: float = 1e-5, tolerance: float = 1e-4,
                  rho: float = 50.0) -> GradCheckResult:
    """Gradient fidelity over the lambda grid; returns per-term worst errors."""
    sel = SelectionConfig(beta=0.3, rho=rho)
    worst = {t: 0.0 for t in TERMS}
    counts = {t: 0 for t in TERMS}
    skipped = 0

    for seed in range(seeds):
        bank, batch = _fixture(seed)
        params = trainable_parameters(bank)

        def breakdown(weights, frozen_aug):
            grid = encode_all(bank, None)
            return total_loss(BatchContext(
                bank=bank, grid=grid, selection=sel, weights=weights,
                frozen_aug_teacher=frozen_aug, **batch))

        def frozen_teacher():
            grid = encode_all(bank, None)
            return batched_teacher_aug(batch["v_weak"], batch["v_strong"],
                                       grid, sel).data.copy()

        base_masks = _selection_masks(bank, batch, sel)
        probe_rng = np.random.default_rng(10_000 + seed)

        def check_term(tag, value_fn, grad_fn):
            nonlocal skipped
            grads = grad_fn()
            attempts = 0
            done = 0
            while done < probes_per_seed and attempts < probes_per_seed * 4:
                attempts += 1
                pi = int(probe_rng.integers(len(params)))
                flat = params[pi].data.reshape(-1)
                idx = int(probe_rng.integers(flat.size))
                orig = flat[idx]
                flat[idx] = orig + h
                if not np.array_equal(_selection_masks(bank, batch, sel),
                                      base_masks):
                    flat[idx] = orig
                    skipped += 1
                    continue
                fp = value_fn()
                flat[idx] = orig - h
                if not np.array_equal(_selection_masks(bank, batch, sel),
                                      base_masks):
                    flat[idx] = orig
                    skipped += 1
                    continue
                fm = value_fn()
                flat[idx] = orig
                fd = (fp - fm) / (2.0 * h)
                tape = grads[pi].reshape(-1)[idx]
                err = abs(fd - tape) / max(abs(fd) + abs(tape), 1e-8)
                worst[tag] = max(worst[tag], err)
                counts[tag] += 1
                done += 1

        # individual terms, with the full-weight objective's teachers
        frozen = frozen_teacher()
        full = LossWeights( 1.0, 0.5, 1.0)
        for term in ("ce", "asa", "ler", "cmd"):
            def value_fn(term=term):
                return getattr(breakdown(full, frozen), term).item()

            def grad_fn(term=term):
                br = breakdown(full, frozen)
                getattr(br, term).backward()
                out = [p.grad.copy() if p.grad is not None
                       else np.zeros_like(p.data) for p in params]
                for p in params:
                    p.zero_grad()
                return out

            check_term(term, value_fn, grad_fn)

        # weighted total under every lambda combination
        for lam in LAMBDA_GRID:
            weights = LossWeights(*lam)

            def value_fn(weights=weights):
                return breakdown(weights, frozen).total.item()

            def grad_fn(weights=weights):
                br = breakdown(weights, frozen)
                br.total.backward()
                out = [p.grad.copy() if p.grad is not None
                       else np.zeros_like(p.data) for p in params]
                for p in params:
                    p.zero_grad()
                return out

            check_term("total", value_fn, grad_fn)

    return GradCheckResult(max_rel_error=worst, samples=counts,
                           skipped_boundary=skipped, tolerance=tolerance)


def assert_gradients(result: GradCheckResult) -> None:
    if not result.passed:
        bad = {k: v for k, v in result.max_rel_error.items()
               if v >= result.tolerance}
        raise NumericalError(f"gradient check failed: {bad}")
