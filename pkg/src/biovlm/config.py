"""Strict run configuration: one JSON document drives every command.

Unknown keys are rejected at every level. Defaults follow the published
training recipe: N=10 prompts of length M=4 per class, lambda1=lambda3=1,
lambda2=0.5, SGD at 2e-3 with batch 32, 16 shots, 50 epochs, cosine schedule
with a 1-epoch warm-up at 1e-5.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .datahub import SyntheticTask
from .encoders import EncoderConfig, EncoderRegime
from .errors import ConfigError
from .losses import LossWeights
from .selection import SelectionConfig
from .trainer import TrainConfig


@dataclass(frozen=True)
class BankConfig:
    prompts_per_class: int = 10      # N
    context_length: int = 4          # M

    def to_dict(self) -> dict:
        return {"prompts_per_class": self.prompts_per_class,
                "context_length": self.context_length}


@dataclass(frozen=True)
class DataConfig:
    regime: str = "synthetic"
    spec: SyntheticTask | None = None
    bundle: str | None = None

    def to_dict(self) -> dict:
        return {"regime": self.regime,
                "spec": self.spec.to_dict() if self.spec else None,
                "bundle": self.bundle}


@dataclass(frozen=True)
class EvalConfig:
    protocol: str = "fewshot"
    new_prompt_rule: str = "mean_context"
    targets: tuple = ()

    def to_dict(self) -> dict:
        return {"protocol": self.protocol,
                "new_prompt_rule": self.new_prompt_rule,
                "targets": [t.to_dict() if isinstance(t, SyntheticTask) else t
                            for t in self.targets]}


@dataclass
class RunConfig:
    seed: int = 0
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    bank: BankConfig = field(default_factory=BankConfig)
    selection: SelectionConfig = field(default_factory=SelectionConfig)
    loss: LossWeights = field(default_factory=LossWeights)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataConfig = field(default_factory=DataConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    output_dir: str = "out"

    def to_dict(self) -> dict:
        t = self.train
        return {
            "seed": self.seed,
            "encoder": self.encoder.to_dict(),
            "bank": self.bank.to_dict(),
            "selection": {"beta": self.selection.beta,
                          "rho": self.selection.rho,
                          "strategy": self.selection.strategy,
                          "top_k": self.selection.top_k},
            "loss": {"lambda1": self.loss.lambda1,
                     "lambda2": self.loss.lambda2,
                     "lambda3": self.loss.lambda3},
            "train": {"epochs": t.epochs, "batch_size": t.batch_size,
                      "shots": t.shots, "lr": t.lr,
                      "warmup_epochs": t.warmup_epochs,
                      "warmup_lr": t.warmup_lr, "schedule": t.schedule,
                      "momentum": t.momentum,
                      "llm_teacher_mode": t.llm_teacher_mode,
                      "train_strategy": t.train_strategy},
            "data": self.data.to_dict(),
            "eval": self.eval.to_dict(),
            "output": {"dir": self.output_dir},
        }


def _take(section: dict, allowed: set[str], where: str) -> None:
    unknown = set(section) - allowed
    if unknown:
        raise ConfigError(f"unknown keys in {where}: {sorted(unknown)}")


def parse_config(doc: dict) -> RunConfig:
    """Build a RunConfig from a parsed JSON document, strictly."""
    if not isinstance(doc, dict):
        raise ConfigError("config root must be a JSON object")
    _take(doc, {"seed", "encoder", "bank", "selection", "loss", "train",
                "data", "eval", "output"}, "config root")
    cfg = RunConfig()
    seed = int(doc.get("seed", 0))

    enc = dict(doc.get("encoder", {}))
    _take(enc, {"seed", "token_dim", "embed_dim", "image_dim", "hidden_dim",
                "text_gain"}, "encoder")
    enc.setdefault("seed", seed)
    defaults = EncoderConfig()
    encoder = EncoderConfig(
        seed=int(enc["seed"]),
        token_dim=int(enc.get("token_dim", defaults.token_dim)),
        embed_dim=int(enc.get("embed_dim", defaults.embed_dim)),
        image_dim=int(enc.get("image_dim", defaults.image_dim)),
        hidden_dim=int(enc.get("hidden_dim", defaults.hidden_dim)),
        text_gain=float(enc.get("text_gain", defaults.text_gain)))

    bank = dict(doc.get("bank", {}))
    _take(bank, {"prompts_per_class", "context_length", "N", "M"}, "bank")
    n = int(bank.get("prompts_per_class", bank.get("N", 10)))
    m = int(bank.get("context_length", bank.get("M", 4)))
    bank_cfg = BankConfig(prompts_per_class=n, context_length=m)

    sel = dict(doc.get("selection", {}))
    _take(sel, {"beta", "rho", "strategy", "top_k"}, "selection")
    selection = SelectionConfig(beta=float(sel.get("beta", 0.01)),
                                rho=float(sel.get("rho", 50.0)),
                                strategy=str(sel.get("strategy", "entropy")),
                                top_k=int(sel.get("top_k", 2)))

    loss = dict(doc.get("loss", {}))
    _take(loss, {"lambda1", "lambda2", "lambda3"}, "loss")
    weights = LossWeights(lambda1=float(loss.get("lambda1", 1.0)),
                          lambda2=float(loss.get("lambda2", 0.5)),
                          lambda3=float(loss.get("lambda3", 1.0)))

    tr = dict(doc.get("train", {}))
    _take(tr, {"epochs", "batch_size", "shots", "lr", "warmup_epochs",
               "warmup_lr", "schedule", "momentum", "llm_teacher_mode",
               "train_strategy"}, "train")
    train_cfg = TrainConfig(
        epochs=int(tr.get("epochs", 50)),
        batch_size=int(tr.get("batch_size", 32)),
        shots=int(tr.get("shots", 16)),
        lr=float(tr.get("lr", 2e-3)),
        warmup_epochs=int(tr.get("warmup_epochs", 1)),
        warmup_lr=float(tr.get("warmup_lr", 1e-5)),
        schedule=str(tr.get("schedule", "cosine")),
        seed=seed,
        momentum=float(tr.get("momentum", 0.0)),
        loss_weights=weights,
        selection=selection,
        llm_teacher_mode=str(tr.get("llm_teacher_mode", "mean")),
        train_strategy=tr.get("train_strategy"))

    data = dict(doc.get("data", {}))
    _take(data, {"regime", "spec", "bundle"}, "data")
    regime = str(data.get("regime", "synthetic"))
    if regime not in ("synthetic", "imported"):
        raise ConfigError(f"unknown data regime {regime!r}")
    spec = None
    if data.get("spec") is not None:
        spec = SyntheticTask.from_dict(data["spec"])
    data_cfg = DataConfig(regime=regime, spec=spec,
                          bundle=data.get("bundle"))

    ev = dict(doc.get("eval", {}))
    _take(ev, {"protocol", "new_prompt_rule", "targets"}, "eval")
    protocol = str(ev.get("protocol", "fewshot"))
    if protocol not in ("fewshot", "b2n", "ood"):
        raise ConfigError(f"unknown protocol {protocol!r}")
    targets = tuple(SyntheticTask.from_dict(t) if isinstance(t, dict) else t
                    for t in ev.get("targets", ()))
    eval_cfg = EvalConfig(protocol=protocol,
                          new_prompt_rule=str(ev.get("new_prompt_rule",
                                                     "mean_context")),
                          targets=targets)

    out = dict(doc.get("output", {}))
    _take(out, {"dir"}, "output")

    cfg = RunConfig(seed=seed, encoder=encoder, bank=bank_cfg,
                    selection=selection, loss=weights, train=train_cfg,
                    data=data_cfg, eval=eval_cfg,
                    output_dir=str(out.get("dir", "out")))
    return cfg


def load_config(path) -> RunConfig:
    try:
        with open(path) as f:
            doc = json.load(f)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    return parse_config(doc)


def write_resolved_config(cfg: RunConfig, out_dir) -> Path:
    """The snapshot written next to every command's outputs; rerunning with
    it reproduces the run byte-for-byte."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "resolved_config.json"
    with open(path, "w") as f:
        json.dump(cfg.to_dict(), f, indent=2, sort_keys=True)
        f.write("\n")
    return path
