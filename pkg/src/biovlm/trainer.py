"""SGD training of the prompt bank under the composite objective.

The schedule is a constant warm-up learning rate for the first epoch(s)
followed by cosine decay over the remaining steps. Updates are plain SGD by
default (momentum available behind a flag for parity experiments; note that
momentum buffers are not checkpointed, so bit-exact resume holds only for
plain SGD). Every random choice (shot selection, per-epoch shuffle, live
augmentation) is keyed by the config seed, making runs bit-reproducible and
checkpoint-resume exact.
"""

from __future__ import annotations

import math
import sys
from dataclasses import dataclass, field

import numpy as np

from . import rng
from .encoders import EncoderRegime, FrozenTextEncoder
from .errors import ConfigError, DataError
from .losses import BatchContext, LossWeights, total_loss
from .promptbank import PromptBank, encode_all, trainable_parameters
from .selection import SelectionConfig

LOG_COLUMNS = ("step", "ce", "asa", "ler", "cmd", "total", "lr")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 50
    batch_size: int = 32
    shots: int = 16
    lr: float = 2e-3
    warmup_epochs: int = 1
    warmup_lr: float = 1e-5
    schedule: str = "cosine"
    seed: int = 0
    momentum: float = 0.0
    loss_weights: LossWeights = field(default_factory=LossWeights)
    selection: SelectionConfig = field(default_factory=SelectionConfig)
    llm_teacher_mode: str = "mean"
    # Optional alternative aggregation during loss computation only (e.g.
    # train with "mean", infer with the entropy percentile). None applies
    # ``selection`` on both sides.
    train_strategy: str | None = None

    def __post_init__(self):
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.shots < 1:
            raise ConfigError("shots must be >= 1")
        if not (self.lr > 0 and self.warmup_lr > 0):
            raise ConfigError("learning rates must be > 0")
        if self.schedule != "cosine":
            raise ConfigError(f"unknown schedule {self.schedule!r}")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError("momentum must be in [0, 1)")
        if self.train_strategy is not None:
            from .selection import STRATEGIES
            if self.train_strategy not in STRATEGIES:
                raise ConfigError(f"unknown train_strategy "
                                  f"{self.train_strategy!r}")


@dataclass
class TrainState:
    step: int = 0
    lr: float = 0.0
    running: dict[str, float] = field(default_factory=dict)
    bank: PromptBank | None = None


def lr_at(step: int, steps_per_epoch: int, total_steps: int,
          cfg: TrainConfig) -> float:
    """Piecewise schedule: warm-up epochs at warmup_lr, then cosine decay
    from the base rate down to ~0 at the final step."""
    if step < 0:
        raise ConfigError("step must be >= 0")
    warmup_steps = cfg.warmup_epochs * steps_per_epoch
    if step < warmup_steps:
        return cfg.warmup_lr
    remaining = total_steps - warmup_steps
    if remaining <= 0:
        return cfg.warmup_lr
    t = step - warmup_steps
    return cfg.lr * 0.5 * (1.0 + math.cos(math.pi * t / remaining))


def select_shots(dataset, shots: int, seed: int) -> np.ndarray:
    """Deterministic per-class shot selection; errors name the short class."""
    chosen: list[np.ndarray] = []
    for c in range(dataset.num_classes):
        pool = dataset.train_indices_for_class(c)
        if pool.size < shots:
            raise DataError(f"class {c} has only {pool.size} training "
                            f"samples, need {shots} shots")
        g = rng.generator(seed, "shots", c)
        chosen.append(np.sort(g.choice(pool, size=shots, replace=False)))
    return np.sort(np.concatenate(chosen))


def train(bank: PromptBank, dataset, cfg: TrainConfig,
          text_encoder: FrozenTextEncoder | None = None,
          start_epoch: int = 0, stop_epoch: int | None = None,
          progress: bool = False):
    """Optimize the bank's prompts on the dataset's few-shot split.

    Returns (bank, log_rows) where each log row is one optimization step's
    loss breakdown. Training mutates the bank's leaf tensors in place between
    steps and is deterministic given the config seed. ``start_epoch`` and
    ``stop_epoch`` partition one run: the schedule and every random stream
    stay those of the full ``cfg.epochs`` run, so stopping, checkpointing,
    and resuming matches straight-through training bit-exactly under plain
    SGD.
    """
    if bank.regime is EncoderRegime.SYNTHETIC and text_encoder is None:
        raise ConfigError("SYNTHETIC-regime training needs a text encoder")

    shot_indices = select_shots(dataset, cfg.shots, cfg.seed)
    labels = dataset.train_labels[shot_indices]
    n = shot_indices.size
    steps_per_epoch = math.ceil(n / cfg.batch_size)
    total_steps = cfg.epochs * steps_per_epoch
    train_selection = cfg.selection
    if cfg.train_strategy is not None:
        train_selection = SelectionConfig(beta=cfg.selection.beta,
                                          rho=cfg.selection.rho,
                                          strategy=cfg.train_strategy,
                                          top_k=cfg.selection.top_k)

    params = trainable_parameters(bank)
    frozen_attr = bank.attribute_embeddings.copy()
    velocity = {id(p): np.zeros_like(p.data) for p in params} \
        if cfg.momentum > 0 else None

    end_epoch = cfg.epochs if stop_epoch is None else stop_epoch
    if not 0 <= start_epoch <= end_epoch <= cfg.epochs:
        raise ConfigError("need 0 <= start_epoch <= stop_epoch <= epochs")
    state = TrainState(step=start_epoch * steps_per_epoch, bank=bank)
    log_rows: list[dict[str, float]] = []
    for epoch in range(start_epoch, end_epoch):
        v_orig, v_weak, v_strong = dataset.training_views(shot_indices, epoch)
        perm = rng.generator(cfg.seed, "shuffle", epoch).permutation(n)
        epoch_total = 0.0
        for b0 in range(0, n, cfg.batch_size):
            rows = perm[b0:b0 + cfg.batch_size]
            grid = encode_all(bank, text_encoder)
            breakdown = total_loss(BatchContext(
                bank=bank, grid=grid, v_orig=v_orig[rows],
                v_weak=v_weak[rows], v_strong=v_strong[rows],
                labels=labels[rows], selection=train_selection,
                weights=cfg.loss_weights,
                llm_teacher_mode=cfg.llm_teacher_mode))
            breakdown.total.backward()
            lr = lr_at(state.step, steps_per_epoch, total_steps, cfg)
            for p in params:
                if p.grad is None:
                    continue
                if velocity is None:
                    p.data -= lr * p.grad
                else:
                    buf = velocity[id(p)]
                    buf *= cfg.momentum
                    buf += p.grad
                    p.data -= lr * buf
                p.zero_grad()
            values = breakdown.values()
            values["step"] = state.step
            values["lr"] = lr
            log_rows.append(values)
            epoch_total += values["total"]
            state.step += 1
            state.lr = lr
        state.running = {"total": epoch_total / steps_per_epoch}
        if progress:
            print(f"epoch {epoch + 1}/{cfg.epochs} "
                  f"mean total loss {state.running['total']:.6f}",
                  file=sys.stderr)

    if not np.array_equal(frozen_attr, bank.attribute_embeddings):
        raise DataError("attribute embeddings changed during training")
    bank.trained_epochs = end_epoch
    return bank, log_rows


def write_train_log(path, log_rows) -> None:
    """CSV with fixed column order: step, ce, asa, ler, cmd, total, lr."""
    import csv

    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(LOG_COLUMNS)
        for row in log_rows:
            writer.writerow([row["step"]] + [repr(row[c])
                                             for c in LOG_COLUMNS[1:]])
