"""Command-line entry point.

Subcommands cover the full workflow: synthetic bundle generation, training,
the three evaluation protocols, the selection-strategy and loss ablations,
the prompt-count sweep, and the finite-difference gradient check. Every run
writes a resolved config snapshot sufficient to reproduce it byte-for-byte.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical
failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .config import RunConfig, load_config, write_resolved_config
from .datahub import (ImportedDataset, SyntheticTask, bundle_from_synthetic,
                      generate_task, load_bundle, load_checkpoint,
                      save_bundle, save_checkpoint)
from .encoders import EncoderRegime, build_encoders
from .errors import BioVLMError, ConfigError, DataError, NumericalError
from .evalharness import (EvalReport, base_to_new, emit_report, evaluate,
                          evaluate_with_confidence, expected_calibration_error,
                          harmonic_mean, ood_transfer)
from .gradcheck import run_gradcheck
from .losses import LossWeights
from .promptbank import init_bank
from .selection import SelectionConfig
from .trainer import TrainConfig, train, write_train_log

SWEEP_DEFAULT_N = (1, 2, 5, 10, 20, 50, 100)
ABLATE_STRATEGIES = ("softmax", "mean", "avg_logits", "argmax", "top2",
                     "top5", "entropy")


def _dataset_from_config(cfg: RunConfig, data_override: str | None = None):
    """Returns (dataset, text_encoder_or_None, regime)."""
    bundle_path = data_override or cfg.data.bundle
    if cfg.data.regime == "imported" or (bundle_path and cfg.data.spec is None
                                         and cfg.data.regime != "synthetic"):
        if not bundle_path:
            raise ConfigError("imported regime needs a bundle path")
        ds = ImportedDataset(load_bundle(bundle_path))
        return ds, None, EncoderRegime.IMPORTED
    task = cfg.data.spec or SyntheticTask(seed=cfg.seed)
    ds = generate_task(task, cfg.encoder)
    return ds, ds.text_encoder, EncoderRegime.SYNTHETIC


def _bank_for(cfg: RunConfig, dataset, regime: EncoderRegime):
    n = cfg.bank.prompts_per_class
    if dataset.attribute_embeddings.shape[1] != n:
        raise ConfigError(
            f"bank expects {n} prompts per class but the dataset carries "
            f"{dataset.attribute_embeddings.shape[1]} attributes per class")
    return init_bank(dataset.num_classes, n, regime,
                     dataset.attribute_embeddings, seed=cfg.seed,
                     context_length=cfg.bank.context_length,
                     token_dim=cfg.encoder.token_dim,
                     attribute_texts=dataset.attribute_texts,
                     class_token_ids=dataset.original_class_ids())


def _strategy_config(base: SelectionConfig, name: str) -> SelectionConfig:
    if name in ("top2", "top5"):
        return SelectionConfig(beta=base.beta, rho=base.rho, strategy="topk",
                               top_k=int(name[3:]))
    return SelectionConfig(beta=base.beta, rho=base.rho, strategy=name,
                           top_k=base.top_k)


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_gen_data(args) -> int:
    cfg = load_config(args.spec)
    if args.seed is not None:
        task = cfg.data.spec or SyntheticTask()
        task = replace(task, seed=int(args.seed))
        cfg.data = type(cfg.data)(regime="synthetic", spec=task, bundle=None)
    ds, _, _ = _dataset_from_config(cfg)
    bundle = bundle_from_synthetic(ds)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_bundle(bundle, out)
    load_bundle(out)  # self-check: the written file must validate
    print(f"wrote {out}")
    return 0


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    out = Path(args.out or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    ds, text_enc, regime = _dataset_from_config(cfg, args.data)
    bank = _bank_for(cfg, ds, regime)
    bank, log = train(bank, ds, cfg.train, text_encoder=text_enc,
                      progress=not args.quiet)
    save_checkpoint(bank, out / "checkpoint.bvlb")
    write_train_log(out / "train_log.csv", log)
    write_resolved_config(cfg, out)
    print(f"trained {cfg.train.epochs} epochs; checkpoint at "
          f"{out / 'checkpoint.bvlb'}")
    return 0


def cmd_eval(args) -> int:
    cfg = load_config(args.config)
    out = Path(args.out or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    protocol = args.protocol or cfg.eval.protocol
    ds, text_enc, regime = _dataset_from_config(cfg, args.data)

    if protocol == "fewshot":
        if not args.checkpoint:
            raise ConfigError("fewshot evaluation needs --checkpoint")
        bank = load_checkpoint(args.checkpoint)
        enc = text_enc if bank.regime is EncoderRegime.SYNTHETIC else None
        acc, conf, corr = evaluate_with_confidence(bank, ds, cfg.selection,
                                                   enc)
        report = EvalReport(protocol="fewshot",
                            accuracy={ds.name: acc},
                            ece=expected_calibration_error(conf, corr),
                            config_snapshot=cfg.to_dict(), seeds=[cfg.seed])
    elif protocol == "b2n":
        base_acc, new_acc, hm, details = base_to_new(
            ds, cfg.train, cfg.bank.prompts_per_class, text_encoder=text_enc,
            new_prompt_rule=cfg.eval.new_prompt_rule, regime=regime)
        report = EvalReport(protocol="b2n", base_acc=base_acc,
                            new_acc=new_acc, hm=hm,
                            accuracy={"base": base_acc, "new": new_acc},
                            config_snapshot=cfg.to_dict(), seeds=[cfg.seed])
    elif protocol == "ood":
        targets = []
        for spec in cfg.eval.targets:
            if not isinstance(spec, SyntheticTask):
                raise ConfigError("OOD targets must be synthetic task specs")
            targets.append(generate_task(spec, cfg.encoder))
        if not targets:
            targets = [ds]
        rows, average = ood_transfer(ds, targets, cfg.train,
                                     cfg.bank.prompts_per_class,
                                     text_encoder=text_enc, regime=regime)
        report = EvalReport(protocol="ood",
                            accuracy={"average": average},
                            per_target=rows, config_snapshot=cfg.to_dict(),
                            seeds=[cfg.seed])
    else:
        raise ConfigError(f"unknown protocol {protocol!r}")

    emit_report(report, out)
    write_resolved_config(cfg, out)
    print(json.dumps(report.to_dict()["accuracy"], sort_keys=True))
    return 0


def cmd_ablate_select(args) -> int:
    cfg = load_config(args.config)
    out = Path(args.out or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    ds, text_enc, _ = _dataset_from_config(cfg, args.data)
    bank = load_checkpoint(args.checkpoint)
    enc = text_enc if bank.regime is EncoderRegime.SYNTHETIC else None

    rows = []
    for name in ABLATE_STRATEGIES:
        acc = evaluate(bank, ds, _strategy_config(cfg.selection, name), enc)
        rows.append({"method": name, "accuracy": acc})
    with open(out / "ablate_select.csv", "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["method", "accuracy"])
        for row in rows:
            writer.writerow([row["method"], repr(row["accuracy"])])
    report = EvalReport(protocol="ablate-select",
                        accuracy={r["method"]: r["accuracy"] for r in rows},
                        config_snapshot=cfg.to_dict(), seeds=[cfg.seed])
    emit_report(report, out)
    write_resolved_config(cfg, out)
    for row in rows:
        print(f"{row['method']:12s} {row['accuracy']:.2f}")
    return 0


LAMBDA_ROWS = ((0, 0, 0), (0, 1, 0), (0, 0, 1), (1, 0, 0),
               (0, 1, 1), (1, 0, 1), (1, 1, 0), (1, 1, 1))


def _row_weights(flags, defaults: LossWeights) -> LossWeights:
    l1, l2, l3 = flags
    return LossWeights(lambda1=defaults.lambda1 if l1 else 0.0,
                       lambda2=defaults.lambda2 if l2 else 0.0,
                       lambda3=defaults.lambda3 if l3 else 0.0)


def cmd_ablate_loss(args) -> int:
    cfg = load_config(args.config)
    out = Path(args.out or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    seeds = [cfg.seed + i for i in range(args.seeds)]
    shots_list = [int(s) for s in args.shots_list.split(",")]

    rows = []
    for flags in LAMBDA_ROWS:
        weights = _row_weights(flags, cfg.loss)
        base_accs, new_accs, fsl = [], [], {k: [] for k in shots_list}
        for seed in seeds:
            task = cfg.data.spec or SyntheticTask(seed=seed)
            task = replace(task, seed=seed)
            ds = generate_task(task, replace(cfg.encoder, seed=seed))
            tcfg = replace(cfg.train, seed=seed, loss_weights=weights)
            if not args.skip_b2n:
                b, nacc, _, _ = base_to_new(ds, tcfg,
                                            cfg.bank.prompts_per_class,
                                            text_encoder=ds.text_encoder,
                                            new_prompt_rule=cfg.eval.new_prompt_rule)
                base_accs.append(b)
                new_accs.append(nacc)
            for shots in shots_list:
                scfg = replace(tcfg, shots=shots)
                bank = _bank_for(replace_seed(cfg, seed), ds,
                                 EncoderRegime.SYNTHETIC)
                bank, _ = train(bank, ds, scfg, text_encoder=ds.text_encoder)
                fsl[shots].append(evaluate(bank, ds, scfg.selection,
                                           ds.text_encoder))
        row = {"ce": 1, "ler": flags[1], "cmd": flags[2], "asa": flags[0]}
        if base_accs:
            row["base"] = float(np.mean(base_accs))
            row["novel"] = float(np.mean(new_accs))
            row["hm"] = harmonic_mean(row["base"], row["novel"])
        for shots in shots_list:
            row[f"k{shots}"] = float(np.mean(fsl[shots]))
        rows.append(row)
        print(" ".join(f"{k}={v if isinstance(v, int) else f'{v:.2f}'}"
                       for k, v in row.items()))

    fieldnames = list(rows[0].keys())
    with open(out / "ablate_loss.csv", "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=fieldnames)
        writer.writeheader()
        writer.writerows(rows)
    write_resolved_config(cfg, out)
    return 0


def replace_seed(cfg: RunConfig, seed: int) -> RunConfig:
    out = RunConfig(seed=seed, encoder=replace(cfg.encoder, seed=seed),
                    bank=cfg.bank, selection=cfg.selection, loss=cfg.loss,
                    train=replace(cfg.train, seed=seed), data=cfg.data,
                    eval=cfg.eval, output_dir=cfg.output_dir)
    return out


def cmd_sweep_prompts(args) -> int:
    cfg = load_config(args.config)
    out = Path(args.out or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    n_list = [int(n) for n in args.n_list.split(",")]
    seeds = [cfg.seed + i for i in range(args.seeds)]

    rows = []
    for n in n_list:
        accs = []
        for seed in seeds:
            base_task = cfg.data.spec or SyntheticTask(seed=seed)
            task = replace(base_task.with_attribute_count(n), seed=seed)
            ds = generate_task(task, replace(cfg.encoder, seed=seed))
            bank = init_bank(ds.num_classes, n, EncoderRegime.SYNTHETIC,
                             ds.attribute_embeddings, seed=seed,
                             context_length=cfg.bank.context_length,
                             token_dim=cfg.encoder.token_dim,
                             attribute_texts=ds.attribute_texts)
            tcfg = replace(cfg.train, seed=seed)
            bank, _ = train(bank, ds, tcfg, text_encoder=ds.text_encoder)
            accs.append(evaluate(bank, ds, tcfg.selection, ds.text_encoder))
        rows.append({"prompts_per_class": n,
                     "accuracy_mean": float(np.mean(accs)),
                     "accuracy_std": float(np.std(accs)),
                     "seeds": len(seeds)})
        print(f"N={n:4d}  accuracy {rows[-1]['accuracy_mean']:.2f} "
              f"± {rows[-1]['accuracy_std']:.2f}")

    with open(out / "sweep_prompts.csv", "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        writer.writerows(rows)
    write_resolved_config(cfg, out)
    return 0


def cmd_gradcheck(args) -> int:
    result = run_gradcheck(seeds=args.seeds,
                           probes_per_seed=args.probes_per_seed)
    for term, err in result.max_rel_error.items():
        print(f"{term:6s} max relative error {err:.3e} "
              f"({result.samples[term]} probes)")
    if result.skipped_boundary:
        print(f"resampled {result.skipped_boundary} probes at selection "
              "boundaries")
    if not result.passed:
        print(f"FAIL: tolerance {result.tolerance}", file=sys.stderr)
        return 4
    print(f"OK: all terms under {result.tolerance}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="biovlm",
        description="Prompt-bank learning with entropy-based prompt "
                    "selection and distillation")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic bundle")
    p.add_argument("--spec", required=True, help="run config JSON")
    p.add_argument("--out", required=True, help="bundle path to write")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(fn=cmd_gen_data)

    p = sub.add_parser("train", help="train a prompt bank")
    p.add_argument("--config", required=True)
    p.add_argument("--data", default=None, help="bundle path (imported)")
    p.add_argument("--out", default=None)
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate under a protocol")
    p.add_argument("--config", required=True)
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--data", default=None)
    p.add_argument("--protocol", choices=["fewshot", "b2n", "ood"],
                   default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("ablate-select",
                       help="evaluate every aggregation strategy")
    p.add_argument("--config", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_ablate_select)

    p = sub.add_parser("ablate-loss", help="run the 8-row loss ablation grid")
    p.add_argument("--config", required=True)
    p.add_argument("--data", default=None)
    p.add_argument("--out", default=None)
    p.add_argument("--seeds", type=int, default=1)
    p.add_argument("--shots-list", default="1,4,8,16")
    p.add_argument("--skip-b2n", action="store_true")
    p.set_defaults(fn=cmd_ablate_loss)

    p = sub.add_parser("sweep-prompts", help="train/eval per prompt count")
    p.add_argument("--config", required=True)
    p.add_argument("--N-list", dest="n_list",
                   default=",".join(map(str, SWEEP_DEFAULT_N)))
    p.add_argument("--seeds", type=int, default=1)
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_sweep_prompts)

    p = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    p.add_argument("--config", default=None)
    p.add_argument("--seeds", type=int, default=10)
    p.add_argument("--probes-per-seed", type=int, default=12)
    p.set_defaults(fn=cmd_gradcheck)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except (NumericalError, BioVLMError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
