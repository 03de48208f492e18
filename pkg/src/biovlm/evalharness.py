"""Evaluation protocols: few-shot, base-to-new, out-of-distribution transfer,
plus calibration measurement and report emission.

Few-shot evaluates a trained bank on a held-out split with the same label
set. Base-to-new trains on the first half of the class ids only and reports
base accuracy, new-class accuracy, and their harmonic mean; new-class prompts
are constructed without any new-class supervision (mean learned context
prepended to the new class token by default, or the frozen attribute
embeddings directly). OOD transfer trains once on a source dataset and
evaluates zero-update on each target, using the target's attribute
embeddings as imported-style prompts when the target differs from the
source.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .datahub import ClassSubsetDataset
from .encoders import EncoderRegime, FrozenTextEncoder
from .errors import ConfigError, DataError
from .promptbank import (PromptBank, Prompt, TextFeatureGrid, encode_all,
                         init_bank)
from .selection import SelectionConfig, predict
from .trainer import TrainConfig, train


class ProtocolKind(Enum):
    FEW_SHOT = "fewshot"
    BASE_TO_NEW = "b2n"
    OOD = "ood"


@dataclass
class EvalProtocol:
    kind: ProtocolKind
    base_class_ids: list[int] | None = None
    new_class_ids: list[int] | None = None
    source_id: str | None = None
    target_ids: list[str] | None = None

    def validate(self):
        if self.kind is ProtocolKind.BASE_TO_NEW:
            if not self.base_class_ids or not self.new_class_ids:
                raise ConfigError("base-to-new protocol needs both splits")
            if set(self.base_class_ids) & set(self.new_class_ids):
                raise ConfigError("base and new class sets must be disjoint")
        if self.kind is ProtocolKind.OOD:
            if self.source_id is None or not self.target_ids:
                raise ConfigError("OOD protocol needs source and targets")


@dataclass
class EvalReport:
    protocol: str
    accuracy: dict[str, float] = field(default_factory=dict)
    base_acc: float | None = None
    new_acc: float | None = None
    hm: float | None = None
    ece: float | None = None
    per_target: list[dict] = field(default_factory=list)
    config_snapshot: dict = field(default_factory=dict)
    seeds: list[int] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "protocol": self.protocol, "accuracy": self.accuracy,
            "base_acc": self.base_acc, "new_acc": self.new_acc,
            "hm": self.hm, "ece": self.ece, "per_target": self.per_target,
            "config_snapshot": self.config_snapshot, "seeds": self.seeds,
        }

    @staticmethod
    def from_dict(d: dict) -> "EvalReport":
        return EvalReport(protocol=d["protocol"], accuracy=d["accuracy"],
                          base_acc=d["base_acc"], new_acc=d["new_acc"],
                          hm=d["hm"], ece=d["ece"],
                          per_target=d["per_target"],
                          config_snapshot=d["config_snapshot"],
                          seeds=d["seeds"])


def harmonic_mean(base: float, new: float) -> float:
    """2*base*new / (base + new), 0 when either side is 0."""
    if base < 0 or new < 0:
        raise ConfigError("accuracies must be non-negative")
    if base == 0.0 or new == 0.0:
        return 0.0
    return 2.0 * base * new / (base + new)


def frozen_grid(bank: PromptBank,
                encoder: FrozenTextEncoder | None) -> TextFeatureGrid:
    """Detached feature grid for read-only evaluation."""
    grid = encode_all(bank, encoder)
    return TextFeatureGrid(ad.constant(grid.stacked.data.copy()),
                           grid.num_classes, grid.prompts_per_class)


def evaluate(bank: PromptBank, dataset, selection: SelectionConfig,
             text_encoder: FrozenTextEncoder | None = None) -> float:
    """Percentage of correct predictions on the dataset's test split."""
    acc, _, _ = evaluate_with_confidence(bank, dataset, selection,
                                         text_encoder)
    return acc


def evaluate_with_confidence(bank: PromptBank, dataset,
                             selection: SelectionConfig,
                             text_encoder: FrozenTextEncoder | None = None):
    """(accuracy %, confidences in [0,1], correctness flags)."""
    v_test, labels = dataset.test_set()
    if v_test.shape[0] == 0:
        raise DataError("empty test set")
    grid = frozen_grid(bank, text_encoder)
    confidences = np.empty(v_test.shape[0])
    correct = np.empty(v_test.shape[0], dtype=bool)
    for i, (v, y) in enumerate(zip(v_test, labels)):
        label, trace = predict(v, grid, selection)
        confidences[i] = float(trace.aggregate.probs.data.max())
        correct[i] = (label == int(y))
    return 100.0 * float(correct.mean()), confidences, correct


def expected_calibration_error(confidences, correctness, bins: int = 10) -> float:
    """Equal-width-bin ECE over [0, 1]: sum_b (n_b/n) |acc_b - conf_b|."""
    conf = np.asarray(confidences, dtype=np.float64)
    corr = np.asarray(correctness, dtype=bool)
    if conf.size == 0:
        raise DataError("ECE of an empty sample stream")
    if conf.shape != corr.shape:
        raise DataError("confidences and correctness must align")
    if np.any(conf < 0.0) or np.any(conf > 1.0):
        raise DataError("confidences must lie in [0, 1]")
    idx = np.minimum((conf * bins).astype(np.int64), bins - 1)
    total = 0.0
    n = conf.size
    for b in range(bins):
        members = idx == b
        count = int(members.sum())
        if count == 0:
            continue
        acc_b = float(corr[members].mean())
        conf_b = float(conf[members].mean())
        total += (count / n) * abs(acc_b - conf_b)
    return total


def default_base_new_split(num_classes: int) -> tuple[list[int], list[int]]:
    """First ceil(K/2) class ids are base, the rest are new."""
    if num_classes < 2:
        raise DataError("base-to-new needs at least 2 classes")
    cut = math.ceil(num_classes / 2)
    return list(range(cut)), list(range(cut, num_classes))


def _new_class_bank(trained: PromptBank, new_ds, bank_seed: int,
                    rule: str) -> PromptBank:
    """Prompts for unseen classes, built with zero new-class supervision."""
    k_new = new_ds.num_classes
    n = trained.prompts_per_class
    if rule == "attributes" or trained.regime is EncoderRegime.IMPORTED:
        return init_bank(k_new, n, EncoderRegime.IMPORTED,
                         new_ds.attribute_embeddings, seed=bank_seed,
                         attribute_texts=new_ds.attribute_texts)
    if rule != "mean_context":
        raise ConfigError(f"unknown new-class prompt rule {rule!r}")
    bank = init_bank(k_new, n, EncoderRegime.SYNTHETIC,
                     new_ds.attribute_embeddings, seed=bank_seed,
                     context_length=trained.context_length,
                     token_dim=trained.class_tokens.shape[1],
                     attribute_texts=new_ds.attribute_texts,
                     class_token_ids=new_ds.original_class_ids())
    for j in range(n):
        mean_ctx = np.mean([trained.prompts[i][j].context.data
                            for i in range(trained.num_classes)], axis=0)
        for i in range(k_new):
            bank.prompts[i][j].context.data[:] = mean_ctx
    return bank


def base_to_new(dataset, train_cfg: TrainConfig, prompts_per_class: int,
                text_encoder: FrozenTextEncoder | None = None,
                bank_seed: int | None = None,
                new_prompt_rule: str = "mean_context",
                regime: EncoderRegime = EncoderRegime.SYNTHETIC):
    """Train on base-class shots only; report (base, new, hm, details)."""
    base_ids, new_ids = default_base_new_split(dataset.num_classes)
    if len(base_ids) < 2 or len(new_ids) < 2:
        raise DataError("each split needs at least 2 classes for "
                        "similarity-based prediction")
    base_ds = ClassSubsetDataset(dataset, base_ids)
    new_ds = ClassSubsetDataset(dataset, new_ids)
    seed = train_cfg.seed if bank_seed is None else bank_seed

    bank = init_bank(base_ds.num_classes, prompts_per_class,
                     regime, base_ds.attribute_embeddings, seed=seed,
                     attribute_texts=base_ds.attribute_texts,
                     class_token_ids=base_ds.original_class_ids())
    # protocol isolation: the training split must contain no new-class samples
    trained_labels = base_ds.train_labels
    original = [base_ds.class_ids[int(y)] for y in trained_labels]
    if not set(original) <= set(base_ids):
        raise DataError("base-to-new isolation violated: new-class sample "
                        "in the training split")
    bank, log = train(bank, base_ds, train_cfg, text_encoder=text_encoder)
    base_acc = evaluate(bank, base_ds, train_cfg.selection, text_encoder)

    new_bank = _new_class_bank(bank, new_ds, seed, new_prompt_rule)
    new_acc = evaluate(new_bank, new_ds, train_cfg.selection,
                       text_encoder if new_bank.regime is
                       EncoderRegime.SYNTHETIC else None)
    hm = harmonic_mean(base_acc, new_acc)
    details = {"base_ids": base_ids, "new_ids": new_ids,
               "trained_bank": bank, "new_bank": new_bank, "log": log}
    return base_acc, new_acc, hm, details


def ood_transfer(source_ds, target_datasets, train_cfg: TrainConfig,
                 prompts_per_class: int,
                 text_encoder: FrozenTextEncoder | None = None,
                 regime: EncoderRegime = EncoderRegime.SYNTHETIC):
    """Train once on the source; evaluate zero-update on each target.

    Targets matching the source fingerprint reuse the trained bank (self
    transfer); other targets are scored with their own attribute embeddings
    as imported-style prompts. Returns (per-target list, average)."""
    bank = init_bank(source_ds.num_classes, prompts_per_class, regime,
                     source_ds.attribute_embeddings, seed=train_cfg.seed,
                     attribute_texts=source_ds.attribute_texts)
    bank, _ = train(bank, source_ds, train_cfg, text_encoder=text_encoder)

    rows = []
    for target in target_datasets:
        if target.attribute_embeddings is None:
            raise DataError(f"target {target.name} lacks attribute "
                            "embeddings")
        if target.fingerprint() == source_ds.fingerprint():
            acc = evaluate(bank, target, train_cfg.selection, text_encoder)
        else:
            target_bank = init_bank(
                target.num_classes, target.attribute_embeddings.shape[1],
                EncoderRegime.IMPORTED, target.attribute_embeddings,
                seed=train_cfg.seed, attribute_texts=target.attribute_texts)
            acc = evaluate(target_bank, target, train_cfg.selection, None)
        rows.append({"target": target.name, "accuracy": acc})
    average = float(np.mean([r["accuracy"] for r in rows])) if rows else 0.0
    return rows, average


# ---------------------------------------------------------------------------
# Report emission
# ---------------------------------------------------------------------------

def emit_report(report: EvalReport, out_dir) -> list[Path]:
    """Write report.json (machine) and report.csv (tables); returns paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    json_path = out / "report.json"
    with open(json_path, "w") as f:
        json.dump(report.to_dict(), f, indent=2, sort_keys=True)
        f.write("\n")

    csv_path = out / "report.csv"
    with open(csv_path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["metric", "value"])
        writer.writerow(["protocol", report.protocol])
        for name, value in sorted(report.accuracy.items()):
            writer.writerow([f"accuracy/{name}", repr(value)])
        for name in ("base_acc", "new_acc", "hm", "ece"):
            value = getattr(report, name)
            if value is not None:
                writer.writerow([name, repr(value)])
        for row in report.per_target:
            writer.writerow([f"target/{row['target']}",
                             repr(row["accuracy"])])
    return [json_path, csv_path]
