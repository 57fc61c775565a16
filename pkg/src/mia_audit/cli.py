"""Command-line entry point: ``mia-audit {gen-data,train,attack,sweep,report}``."""
from __future__ import annotations

import argparse
import csv
import dataclasses
import logging
import os
import sys

from mia_audit.data import SyntheticConfig, generate_synthetic, make_split
from mia_audit.errors import AuditError, ConfigError, IngestionError, ReportVersionError, TrainingError
from mia_audit.evaluation import export_curve
from mia_audit.harness import (
    SEED_OFFSET_TARGET_INIT,
    SEED_OFFSET_TARGET_TRAIN,
    SWEEP_AXES,
    build_config,
    read_report,
    run_experiment,
    run_sweep,
    summarize,
    write_model,
    write_report,
)
from mia_audit.model import Architecture, accuracy, init_mlp, train

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME, EXIT_IO = 0, 1, 2, 3

log = logging.getLogger("mia_audit")


def _overrides(pairs: list[str] | None) -> dict[str, str]:
    out = {}
    for pair in pairs or []:
        if "=" not in pair:
            raise ConfigError(f"--set expects key=value, got {pair!r}")
        k, v = pair.split("=", 1)
        out[k] = v
    return out


def _load_config(args: argparse.Namespace):
    text = None
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            text = fh.read()
    flags = _overrides(args.set)
    for name, key in (("seed", "base_seed"), ("repetitions", "repetitions"), ("csv", "data.csv_path"),
                      ("label_column", "data.label_column"), ("attacks", "attacks"),
                      ("mode", "calibration.mode"), ("n_references", "calibration.n_reference_models")):
        value = getattr(args, name, None)
        if value is not None:
            flags[key] = str(value)
    if getattr(args, "csv", None):
        flags["data.kind"] = "csv"
    return build_config(text, flags)


def cmd_gen_data(args: argparse.Namespace) -> int:
    cfg = SyntheticConfig(args.n_samples, args.n_features, args.n_classes, args.spread, args.seed)
    data = generate_synthetic(cfg)
    with open(args.out, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow([f"x{i}" for i in range(data.n_features)] + ["label"])
        for row, label in zip(data.features, data.labels):
            w.writerow([repr(float(v)) for v in row] + [int(label)])
    print(f"wrote {data.n_samples} samples to {args.out}")
    return EXIT_OK


def cmd_train(args: argparse.Namespace) -> int:
    cfg = _load_config(args)
    data = cfg.data.load()
    plan = make_split(data, cfg.member_fraction, cfg.shadow_fraction, cfg.base_seed)
    arch = Architecture.one_hidden(data.n_features, data.n_classes, cfg.hidden_width or None)
    model = init_mlp(arch, cfg.base_seed + SEED_OFFSET_TARGET_INIT)
    model = train(model, data, plan.member_idx, dataclasses.replace(cfg.target, seed=cfg.base_seed + SEED_OFFSET_TARGET_TRAIN))
    write_model(model, args.out)
    print(f"train accuracy {accuracy(model, data, plan.member_idx):.4f}, "
          f"held-out accuracy {accuracy(model, data, plan.nonmember_idx):.4f}; model written to {args.out}")
    return EXIT_OK


def cmd_attack(args: argparse.Namespace) -> int:
    cfg = _load_config(args)
    report = run_experiment(cfg)
    write_report(report, args.out)
    print(summarize(report))
    return EXIT_OK


def _parse_values(axis: str, raw: str) -> list:
    parts = [p for p in raw.split(",") if p.strip()]
    try:
        if axis in ("train_size", "n_references"):
            return [int(p) for p in parts]
        return [float(p) for p in parts]
    except ValueError:
        raise ConfigError(f"invalid sweep values {raw!r} for axis {axis}") from None


def cmd_sweep(args: argparse.Namespace) -> int:
    cfg = _load_config(args)
    reports = run_sweep(cfg, args.axis, _parse_values(args.axis, args.values))
    write_report(reports, args.out)
    for r in reports:
        print(f"== {r.label}")
        print(summarize(r))
    return EXIT_OK


def cmd_report(args: argparse.Namespace) -> int:
    loaded = read_report(args.path)
    reports = loaded if isinstance(loaded, list) else [loaded]
    for r in reports:
        if r.label:
            print(f"== {r.label}")
        print(summarize(r))
    if args.export_dir:
        os.makedirs(args.export_dir, exist_ok=True)
        for n, r in enumerate(reports):
            for rep in r.repetitions:
                for key, cell in rep.cells.items():
                    stem = f"{n}_{key.replace('|', '_').replace('=', '')}_seed{rep.seed}"
                    export_curve(cell.roc, os.path.join(args.export_dir, stem + "_roc.tsv"))
                    export_curve(cell.pr, os.path.join(args.export_dir, stem + "_pr.tsv"))
        print(f"curves exported to {args.export_dir}")
    return EXIT_OK


def _add_experiment_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key=value config file with dotted keys")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config field (repeatable)")
    p.add_argument("--seed", type=int, help="base seed")
    p.add_argument("--repetitions", type=int)
    p.add_argument("--csv", help="tabular data file instead of synthetic data")
    p.add_argument("--label-column", dest="label_column")
    p.add_argument("--attacks", help="comma-separated attack names")
    p.add_argument("--mode", choices=("from_scratch", "forgetting"), help="reference model training mode")
    p.add_argument("--n-references", dest="n_references", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mia-audit", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="write a synthetic Gaussian dataset as CSV")
    p.add_argument("--out", required=True)
    p.add_argument("--n-samples", type=int, default=1000)
    p.add_argument("--n-features", type=int, default=20)
    p.add_argument("--n-classes", type=int, default=2)
    p.add_argument("--spread", type=float, default=0.8)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train one target model on the member split and save it")
    _add_experiment_flags(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("attack", help="run the full repeated attack protocol")
    _add_experiment_flags(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("sweep", help="repeat the protocol along one ablation axis")
    _add_experiment_flags(p)
    p.add_argument("--axis", required=True, choices=SWEEP_AXES)
    p.add_argument("--values", required=True, help="comma-separated axis values")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("report", help="summarize a saved report and optionally export curves")
    p.add_argument("path")
    p.add_argument("--export-dir")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (IngestionError, ReportVersionError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (TrainingError, AuditError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
