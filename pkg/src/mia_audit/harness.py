"""Repeated-split experiments, ablation sweeps and versioned JSON reports.

Seeds for repetition ``t`` start from ``rep_seed = base_seed + t`` and are
offset per stage by the ``SEED_OFFSET_*`` constants below.
"""
from __future__ import annotations

import dataclasses
import enum
import json
import logging
import math
import os
from typing import Any, Callable, Iterable, Sequence

import numpy as np

from mia_audit.calibration import CalibrationConfig, CalibrationMode, calibrate_scores, train_references
from mia_audit.data import Dataset, SplitPlan, SyntheticConfig, generate_synthetic, load_csv, make_split, subsample_members
from mia_audit.errors import AuditError, ConfigError, ReportVersionError
from mia_audit.evaluation import AttackReport, evaluate_attack, select_ppv_thresholds, select_threshold
from mia_audit.model import Architecture, Model, TrainConfig, accuracy, init_mlp, train
from mia_audit.scores import ScoreKind, ScoreSet, default_merlin_sigma, morgan_decide, score_batch

log = logging.getLogger(__name__)

REPORT_VERSION = "mia-audit-report/1"
SEED_ENV_VAR = "MIA_AUDIT_BASE_SEED"

SEED_OFFSET_SPLIT = 0
SEED_OFFSET_TARGET_INIT = 10_000
SEED_OFFSET_TARGET_TRAIN = 20_000
SEED_OFFSET_REFERENCES = 30_000
SEED_OFFSET_MERLIN_EVAL = 40_000
SEED_OFFSET_MERLIN_SIM = 50_000
SEED_OFFSET_RATIO = 60_000

MORGAN = "morgan"
ATTACKS = tuple(k.value for k in ScoreKind) + (MORGAN,)
SWEEP_AXES = ("train_size", "member_ratio", "n_references", "shadow_fraction")


@dataclasses.dataclass(frozen=True)
class DataSource:
    kind: str = "synthetic"
    synthetic: SyntheticConfig = SyntheticConfig(n_samples=1000, n_features=20, n_classes=2, cluster_spread=0.8)
    csv_path: str = ""
    label_column: str = "label"

    def load(self) -> Dataset:
        if self.kind == "synthetic":
            return generate_synthetic(self.synthetic)
        if self.kind == "csv":
            return load_csv(self.csv_path, self.label_column)
        raise ConfigError(f"unknown data source {self.kind!r}")


@dataclasses.dataclass(frozen=True)
class ExperimentConfig:
    data: DataSource = DataSource()
    member_fraction: float = 0.2
    shadow_fraction: float = 0.4
    hidden_width: int = 0  # 0 means twice the number of input features
    target: TrainConfig = TrainConfig(epochs=200, batch_size=16, learning_rate=0.1,
                                      nesterov_momentum=0.9, weight_decay=3e-2, cosine_schedule=True)
    calibration: CalibrationConfig = CalibrationConfig(reference_train_config=None)
    attacks: tuple[str, ...] = ("loss", "grad_norm", "confidence", "gap")
    repetitions: int = 5
    fpr_levels: tuple[float, ...] = (0.01, 0.05, 0.1)
    top_k: tuple[int, ...] = (10,)
    member_ratios: tuple[float, ...] = (1.0,)
    merlin_trials: int = 100
    merlin_sigma: float = 0.01  # relative to per-feature std
    base_seed: int = 0

    def validate(self) -> None:
        if self.data.kind not in ("synthetic", "csv"):
            raise ConfigError(f"unknown data source {self.data.kind!r}")
        if self.data.kind == "synthetic":
            self.data.synthetic.validate()
        if not (0 < self.member_fraction < 1 and 0 < self.shadow_fraction < 1):
            raise ConfigError("split fractions must lie in (0, 1)")
        if self.member_fraction + self.shadow_fraction > 1 + 1e-12:
            raise ConfigError("member_fraction + shadow_fraction must not exceed 1")
        if self.hidden_width < 0:
            raise ConfigError("hidden_width must be non-negative")
        self.target.validate()
        resolve_reference_config(self).validate()
        if not self.attacks:
            raise ConfigError("no attacks selected")
        for a in self.attacks:
            if a not in ATTACKS:
                raise ConfigError(f"unknown attack {a!r}; choose from {ATTACKS}")
        if self.repetitions < 1:
            raise ConfigError("repetitions must be at least 1")
        if any(not 0 <= f <= 1 for f in self.fpr_levels):
            raise ConfigError("fpr levels must lie in [0, 1]")
        if any(k < 1 for k in self.top_k):
            raise ConfigError("top_k entries must be positive")
        if not self.member_ratios or any(not 0 < r <= 1 for r in self.member_ratios):
            raise ConfigError("member ratios must lie in (0, 1]")
        if self.merlin_trials < 1 or not self.merlin_sigma > 0:
            raise ConfigError("merlin_trials must be >= 1 and merlin_sigma > 0")


def resolve_reference_config(cfg: ExperimentConfig) -> CalibrationConfig:
    """Fill in reference training defaults derived from the target recipe.

    From-scratch references copy the target recipe; forgetting references
    get a quarter of the target's epochs at the same learning rate.
    """
    cal = cfg.calibration
    if cal.reference_train_config is not None:
        return cal
    ref = cfg.target
    if CalibrationMode(cal.mode) is CalibrationMode.FORGETTING:
        ref = dataclasses.replace(ref, epochs=max(1, math.ceil(cfg.target.epochs / 4)))
    return dataclasses.replace(cal, reference_train_config=ref)


def cell_key(attack: str, calibrated: bool, ratio: float = 1.0) -> str:
    return f"{attack}|{'cal' if calibrated else 'uncal'}|ratio={ratio!r}"


@dataclasses.dataclass
class RepetitionResult:
    index: int
    seed: int
    status: str = "ok"
    failed_stage: str | None = None
    error: str | None = None
    plan: SplitPlan | None = None
    target_member_accuracy: float | None = None
    target_nonmember_accuracy: float | None = None
    cells: dict[str, AttackReport] = dataclasses.field(default_factory=dict)
    # populated only when run with keep_scores=True; never serialized
    score_sets: dict[str, tuple[ScoreSet, ScoreSet]] = dataclasses.field(default_factory=dict, repr=False)

    def to_dict(self) -> dict[str, Any]:
        return {
            "index": self.index,
            "seed": self.seed,
            "status": self.status,
            "failed_stage": self.failed_stage,
            "error": self.error,
            "plan": None if self.plan is None else self.plan.to_dict(),
            "target_member_accuracy": self.target_member_accuracy,
            "target_nonmember_accuracy": self.target_nonmember_accuracy,
            "cells": {k: v.to_dict() for k, v in self.cells.items()},
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> RepetitionResult:
        return cls(
            index=d["index"], seed=d["seed"], status=d["status"], failed_stage=d["failed_stage"],
            error=d["error"], plan=None if d["plan"] is None else SplitPlan.from_dict(d["plan"]),
            target_member_accuracy=d["target_member_accuracy"],
            target_nonmember_accuracy=d["target_nonmember_accuracy"],
            cells={k: AttackReport.from_dict(v) for k, v in d["cells"].items()},
        )


@dataclasses.dataclass
class ExperimentReport:
    config: dict[str, Any]
    repetitions: list[RepetitionResult]
    aggregates: dict[str, dict[str, dict[str, float]]] = dataclasses.field(default_factory=dict)
    label: str = ""

    def values(self, key: str, metric: str) -> list[float]:
        """Per-repetition values of one metric for one cell, skipping failed repetitions."""
        return [r.cells[key].scalars()[metric] for r in self.repetitions if key in r.cells]

    def mean(self, key: str, metric: str) -> float:
        return self.aggregates[key][metric]["mean"]

    def to_dict(self) -> dict[str, Any]:
        return {
            "version": REPORT_VERSION,
            "label": self.label,
            "config": self.config,
            "repetitions": [r.to_dict() for r in self.repetitions],
            "aggregates": self.aggregates,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> ExperimentReport:
        if d.get("version") != REPORT_VERSION:
            raise ReportVersionError(f"unsupported report version {d.get('version')!r}, expected {REPORT_VERSION!r}")
        return cls(config=d["config"], repetitions=[RepetitionResult.from_dict(r) for r in d["repetitions"]],
                   aggregates=d["aggregates"], label=d.get("label", ""))


def aggregate(repetitions: Sequence[RepetitionResult]) -> dict[str, dict[str, dict[str, float]]]:
    """Mean and sample standard deviation of every scalar, per cell.

    The standard deviation of a single value is 0.
    """
    keys = sorted({k for r in repetitions for k in r.cells})
    out: dict[str, dict[str, dict[str, float]]] = {}
    for key in keys:
        reports = [r.cells[key] for r in repetitions if key in r.cells]
        metrics = reports[0].scalars().keys()
        out[key] = {}
        for m in metrics:
            vals = np.array([rep.scalars()[m] for rep in reports], dtype=np.float64)
            std = float(np.std(vals, ddof=1)) if len(vals) > 1 else 0.0
            out[key][m] = {"mean": float(np.mean(vals)), "std": std, "n": len(vals)}
    return out


def _score(model: Model, data: Dataset, idx: np.ndarray, members: np.ndarray, kind: str,
           sigma: np.ndarray, trials: int, seed: int) -> ScoreSet:
    return score_batch(model, data, idx, kind, members, sigma=sigma, trials=trials, seed=seed)


def _run_repetition(cfg: ExperimentConfig, data: Dataset, t: int, keep_scores: bool) -> RepetitionResult:
    rep_seed = cfg.base_seed + t
    result = RepetitionResult(index=t, seed=rep_seed)
    stage = "split"
    try:
        plan = make_split(data, cfg.member_fraction, cfg.shadow_fraction, rep_seed + SEED_OFFSET_SPLIT)
        result.plan = plan

        stage = "train_target"
        arch = Architecture.one_hidden(data.n_features, data.n_classes, cfg.hidden_width or None)
        target = init_mlp(arch, rep_seed + SEED_OFFSET_TARGET_INIT)
        target = train(target, data, plan.member_idx,
                       dataclasses.replace(cfg.target, seed=rep_seed + SEED_OFFSET_TARGET_TRAIN))
        result.target_member_accuracy = accuracy(target, data, plan.member_idx)
        result.target_nonmember_accuracy = accuracy(target, data, plan.nonmember_idx)

        stage = "train_references"
        refs = train_references(data, plan.shadow_idx, resolve_reference_config(cfg), target,
                                rep_seed + SEED_OFFSET_REFERENCES)

        stage = "score"
        eval_idx = np.r_[plan.member_idx, plan.nonmember_idx]
        eval_mem = np.r_[np.ones(len(plan.member_idx), bool), np.zeros(len(plan.nonmember_idx), bool)]
        sim_idx = np.r_[plan.sim_member_idx, plan.sim_nonmember_idx]
        sim_mem = np.r_[np.ones(len(plan.sim_member_idx), bool), np.zeros(len(plan.sim_nonmember_idx), bool)]
        sigma = cfg.merlin_sigma * default_merlin_sigma(data, 1.0)
        kinds = [a for a in cfg.attacks if a != MORGAN]
        if MORGAN in cfg.attacks:
            kinds += [k for k in ("loss", "merlin") if k not in kinds]
        # (eval, sim) score sets per (kind, calibrated)
        sets: dict[tuple[str, bool], tuple[ScoreSet, ScoreSet]] = {}
        for kind in kinds:
            pair = []
            for idx, mem, off in ((eval_idx, eval_mem, SEED_OFFSET_MERLIN_EVAL), (sim_idx, sim_mem, SEED_OFFSET_MERLIN_SIM)):
                args = (data, idx, mem, kind, sigma, cfg.merlin_trials, rep_seed + off)
                tgt = _score(target, *args)
                cal = calibrate_scores(tgt, [_score(r, *args) for r in refs])
                pair.append((tgt, cal))
            sets[(kind, False)] = (pair[0][0], pair[1][0])
            sets[(kind, True)] = (pair[0][1], pair[1][1])

        stage = "evaluate"
        ratio_views = {}
        for ratio in cfg.member_ratios:
            sub = subsample_members(plan, ratio, rep_seed + SEED_OFFSET_RATIO)
            ratio_views[ratio] = np.isin(eval_idx, np.r_[sub.member_idx, sub.nonmember_idx])
        for attack in cfg.attacks:
            for calibrated in (False, True):
                if attack == MORGAN:
                    ev, sim = _morgan_sets(sets, calibrated)
                else:
                    ev, sim = sets[(attack, calibrated)]
                tau = select_threshold(sim)
                for ratio, view in ratio_views.items():
                    key = cell_key(attack, calibrated, ratio)
                    prov = {"seed": rep_seed, "attack": attack, "calibrated": calibrated, "member_ratio": ratio}
                    result.cells[key] = evaluate_attack(ev.select(view), tau, cfg.fpr_levels, cfg.top_k, prov)
                    if keep_scores:
                        result.score_sets[key] = (ev.select(view), sim)
    except (AuditError, ValueError, FloatingPointError) as exc:
        log.warning("repetition %d failed during %s: %s", t, stage, exc)
        result.status, result.failed_stage, result.error = "failed", stage, f"{type(exc).__name__}: {exc}"
        result.cells = {}
    return result


def _morgan_sets(sets, calibrated: bool) -> tuple[ScoreSet, ScoreSet]:
    loss_ev, loss_sim = sets[("loss", calibrated)]
    merlin_ev, merlin_sim = sets[("merlin", calibrated)]
    tau_loss, tau_merlin = select_ppv_thresholds(loss_sim, merlin_sim)
    out = []
    for ls, ms in ((loss_ev, merlin_ev), (loss_sim, merlin_sim)):
        decision = morgan_decide(ls, ms, tau_loss, tau_merlin).astype(np.float64)
        meta = {"tau_loss": tau_loss, "tau_merlin": tau_merlin}
        out.append(ScoreSet(decision, ls.is_member, MORGAN if not calibrated else f"calibrated({MORGAN})",
                            ls.sample_idx, meta))
    return out[0], out[1]


def run_experiment(cfg: ExperimentConfig, *, keep_scores: bool = False, label: str = "") -> ExperimentReport:
    """Run ``cfg.repetitions`` independent split/train/attack/evaluate trials."""
    cfg.validate()
    data = cfg.data.load()
    reps = [_run_repetition(cfg, data, t, keep_scores) for t in range(cfg.repetitions)]
    return ExperimentReport(config=config_to_dict(cfg), repetitions=reps, aggregates=aggregate(reps), label=label)


def sweep_configs(cfg: ExperimentConfig, axis: str, values: Sequence[Any]) -> list[ExperimentConfig]:
    """One config per axis value; validates every point before anything runs."""
    if axis not in SWEEP_AXES:
        raise ConfigError(f"unknown sweep axis {axis!r}; choose from {SWEEP_AXES}")
    if not values:
        raise ConfigError("sweep needs at least one value")
    configs = []
    for v in values:
        if axis == "train_size":
            n = cfg.data.synthetic.n_samples if cfg.data.kind == "synthetic" else _csv_size(cfg)
            if not isinstance(v, (int, np.integer)) or v < 2:
                raise ConfigError(f"train_size must be an integer >= 2, got {v!r}")
            c = dataclasses.replace(cfg, member_fraction=2 * v / n)
        elif axis == "member_ratio":
            c = dataclasses.replace(cfg, member_ratios=(float(v),))
        elif axis == "n_references":
            c = dataclasses.replace(cfg, calibration=dataclasses.replace(cfg.calibration, n_reference_models=v))
        else:
            c = dataclasses.replace(cfg, shadow_fraction=float(v))
        c.validate()
        configs.append(c)
    return configs


def _csv_size(cfg: ExperimentConfig) -> int:
    return cfg.data.load().n_samples


def run_sweep(cfg: ExperimentConfig, axis: str, values: Sequence[Any], *, keep_scores: bool = False) -> list[ExperimentReport]:
    configs = sweep_configs(cfg, axis, values)
    return [run_experiment(c, keep_scores=keep_scores, label=f"{axis}={v!r}") for c, v in zip(configs, values)]


# -- serialization -----------------------------------------------------------

def dumps_report(report: ExperimentReport | list[ExperimentReport]) -> str:
    if isinstance(report, list):
        payload: Any = {"version": REPORT_VERSION, "sweep": [r.to_dict() for r in report]}
    else:
        payload = report.to_dict()
    return json.dumps(payload, indent=1, sort_keys=True) + "\n"


def write_report(report: ExperimentReport | list[ExperimentReport], path: str | os.PathLike) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps_report(report))


def read_report(path: str | os.PathLike) -> ExperimentReport | list[ExperimentReport]:
    with open(path, encoding="utf-8") as fh:
        payload = json.load(fh)
    if not isinstance(payload, dict):
        raise ReportVersionError("report is not a JSON object")
    if "sweep" in payload:
        if payload.get("version") != REPORT_VERSION:
            raise ReportVersionError(f"unsupported report version {payload.get('version')!r}")
        return [ExperimentReport.from_dict(r) for r in payload["sweep"]]
    return ExperimentReport.from_dict(payload)


def write_model(model: Model, path: str | os.PathLike) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump({"version": REPORT_VERSION, "model": model.to_dict()}, fh, indent=1, sort_keys=True)


def read_model(path: str | os.PathLike) -> Model:
    with open(path, encoding="utf-8") as fh:
        payload = json.load(fh)
    if payload.get("version") != REPORT_VERSION:
        raise ReportVersionError(f"unsupported model file version {payload.get('version')!r}")
    return Model.from_dict(payload["model"])


# -- dotted-key configuration ------------------------------------------------

def _plain(value: Any) -> Any:
    if dataclasses.is_dataclass(value):
        return {f.name: _plain(getattr(value, f.name)) for f in dataclasses.fields(value)}
    if isinstance(value, enum.Enum):
        return value.value
    if isinstance(value, tuple):
        return [_plain(v) for v in value]
    return value


def config_to_dict(cfg: ExperimentConfig) -> dict[str, Any]:
    return _plain(cfg)


def flatten_config(cfg: ExperimentConfig) -> dict[str, Any]:
    flat: dict[str, Any] = {}

    def walk(prefix: str, obj: Any) -> None:
        for f in dataclasses.fields(obj):
            value = getattr(obj, f.name)
            key = f"{prefix}{f.name}"
            if dataclasses.is_dataclass(value):
                walk(key + ".", value)
            else:
                flat[key] = _plain(value)

    walk("", cfg)
    return flat


# short aliases accepted in config files and on the command line
_ALIASES = {
    "calibration.reference.": "calibration.reference_train_config.",
    "data.n_samples": "data.synthetic.n_samples",
    "data.n_features": "data.synthetic.n_features",
    "data.n_classes": "data.synthetic.n_classes",
    "data.cluster_spread": "data.synthetic.cluster_spread",
    "data.seed": "data.synthetic.seed",
}


def _canonical(key: str) -> str:
    for short, full in _ALIASES.items():
        if key == short or (short.endswith(".") and key.startswith(short)):
            return full + key[len(short):] if short.endswith(".") else full
    return key


def _parse_like(template: Any, raw: str, key: str) -> Any:
    raw = raw.strip()
    try:
        if isinstance(template, bool):
            if raw.lower() in ("1", "true", "yes", "on"):
                return True
            if raw.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(template, enum.Enum):
            return type(template)(raw.lower())
        if isinstance(template, int):
            return int(raw)
        if isinstance(template, float):
            return float(raw)
        if isinstance(template, tuple):
            items = [s for s in raw.split(",") if s.strip()]
            elem = template[0] if template else ""
            return tuple(_parse_like(elem, s, key) for s in items)
        return raw
    except ValueError:
        raise ConfigError(f"invalid value {raw!r} for {key}") from None


def apply_overrides(cfg: ExperimentConfig, overrides: dict[str, str]) -> ExperimentConfig:
    """Return ``cfg`` with dotted-key string overrides applied."""
    for raw_key, raw in overrides.items():
        key = _canonical(raw_key.strip())
        cfg = _set_path(cfg, key.split("."), raw, key)
    return cfg


def _set_path(obj: Any, path: list[str], raw: str, key: str) -> Any:
    name = path[0]
    if not dataclasses.is_dataclass(obj) or name not in {f.name for f in dataclasses.fields(obj)}:
        raise ConfigError(f"unknown config key {key!r}")
    current = getattr(obj, name)
    if len(path) == 1:
        if dataclasses.is_dataclass(current):
            raise ConfigError(f"{key!r} is a section, not a value")
        return dataclasses.replace(obj, **{name: _parse_like(current, raw, key)})
    if current is None and name == "reference_train_config":
        current = TrainConfig()
    return dataclasses.replace(obj, **{name: _set_path(current, path[1:], raw, key)})


def parse_config_text(text: str) -> dict[str, str]:
    """Parse ``key=value`` lines; blank lines and ``#`` comments are skipped."""
    out: dict[str, str] = {}
    for n, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"config line {n}: expected key=value, got {line!r}")
        k, v = line.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def build_config(
    file_text: str | None = None,
    flag_overrides: dict[str, str] | None = None,
    environ: dict[str, str] | None = None,
) -> ExperimentConfig:
    """Layer defaults < environment seed < config file < command-line flags."""
    cfg = ExperimentConfig()
    env = os.environ if environ is None else environ
    if env.get(SEED_ENV_VAR):
        cfg = apply_overrides(cfg, {"base_seed": env[SEED_ENV_VAR]})
    if file_text:
        cfg = apply_overrides(cfg, parse_config_text(file_text))
    if flag_overrides:
        cfg = apply_overrides(cfg, flag_overrides)
    cfg.validate()
    return cfg


def summarize(report: ExperimentReport, metrics: Iterable[str] = ("auc", "accuracy", "best_accuracy", "ppv")) -> str:
    metrics = list(metrics)
    lines = [f"{'cell':40s} " + " ".join(f"{m:>18s}" for m in metrics)]
    for key, agg in report.aggregates.items():
        cols = " ".join(f"{agg[m]['mean']:8.4f}±{agg[m]['std']:<8.4f}" if m in agg else f"{'-':>18s}"
                        for m in metrics)
        lines.append(f"{key:40s} {cols}")
    ok = sum(r.status == "ok" for r in report.repetitions)
    lines.append(f"repetitions: {ok}/{len(report.repetitions)} succeeded")
    return "\n".join(lines)
