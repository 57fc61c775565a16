"""Difficulty calibration against reference models trained on public data."""
from __future__ import annotations

import dataclasses
import enum
import math
from typing import Sequence

import numpy as np

from mia_audit.data import Dataset
from mia_audit.errors import AlignmentError, ConfigError
from mia_audit.model import Model, TrainConfig, init_mlp, train
from mia_audit.scores import ScoreSet, _check_same_samples, calibrated_kind, gap_score


class CalibrationMode(str, enum.Enum):
    FROM_SCRATCH = "from_scratch"
    FORGETTING = "forgetting"


@dataclasses.dataclass(frozen=True)
class CalibrationConfig:
    mode: CalibrationMode = CalibrationMode.FROM_SCRATCH
    n_reference_models: int = 1
    shadow_subsample_fraction: float = 1.0
    reference_train_config: TrainConfig | None = TrainConfig()

    def validate(self) -> None:
        CalibrationMode(self.mode)
        if not isinstance(self.n_reference_models, (int, np.integer)) or self.n_reference_models < 1:
            raise ConfigError("n_reference_models must be a positive integer")
        if not 0 < self.shadow_subsample_fraction <= 1:
            raise ConfigError("shadow_subsample_fraction must lie in (0, 1]")
        if self.reference_train_config is None:
            raise ConfigError("reference_train_config is not set")
        self.reference_train_config.validate()


def train_references(
    data: Dataset,
    shadow_idx: Sequence[int],
    cfg: CalibrationConfig,
    target: Model,
    base_seed: int,
) -> list[Model]:
    """Train ``cfg.n_reference_models`` reference models on subsets of the shadow pool.

    Reference ``j`` uses seed ``base_seed + j`` both for drawing its
    without-replacement subsample and for its initialization and shuffling.
    In forgetting mode each reference continues training from ``target``.
    """
    cfg.validate()
    shadow_idx = np.asarray(shadow_idx, dtype=np.int64)
    if shadow_idx.size == 0:
        raise ConfigError("shadow set is empty")
    size = math.ceil(cfg.shadow_subsample_fraction * shadow_idx.size - 1e-9)
    mode = CalibrationMode(cfg.mode)
    refs = []
    for j in range(cfg.n_reference_models):
        seed = base_seed + j
        rng = np.random.default_rng(seed)
        subset = shadow_idx if size == shadow_idx.size else np.sort(rng.choice(shadow_idx, size, replace=False))
        if mode is CalibrationMode.FORGETTING:
            start = target
        else:
            start = init_mlp(target.architecture, seed)
        tcfg = dataclasses.replace(cfg.reference_train_config, seed=seed)
        refs.append(train(start, data, subset, tcfg))
    return refs


def calibrate_scores(target_scores: ScoreSet, reference_scores: Sequence[ScoreSet]) -> ScoreSet:
    """Subtract the mean reference score from the target score, sample by sample."""
    if not reference_scores:
        raise AlignmentError("need at least one reference score set")
    for ref in reference_scores:
        if ref.kind != target_scores.kind:
            raise AlignmentError(f"kind mismatch: {ref.kind!r} vs {target_scores.kind!r}")
        if len(ref) != len(target_scores):
            raise AlignmentError("reference and target score sets differ in length")
        _check_same_samples(target_scores, ref)
    ref_mean = np.mean([ref.scores for ref in reference_scores], axis=0)
    meta = dict(target_scores.metadata, n_references=len(reference_scores))
    return ScoreSet(target_scores.scores - ref_mean, target_scores.is_member.copy(),
                    calibrated_kind(target_scores.kind), target_scores.sample_idx, meta)


def calibrated_gap_decide(target: Model, reference: Model, data: Dataset, idx: Sequence[int]) -> np.ndarray:
    """Member iff the target classifies correctly and the reference does not."""
    idx = np.asarray(idx, dtype=np.int64)
    x, y = data.features[idx], data.labels[idx]
    return (gap_score(target, x, y) == 1) & (gap_score(reference, x, y) == 0)


def calibrated_gap_accuracy(p_train: float, p_test: float, eps1: float, eps2: float) -> float:
    """Closed-form accuracy of the calibrated gap attack on balanced sets.

    ``eps1`` is the rate at which the reference is right and the target wrong
    on members; ``eps2`` the same rate on non-members.
    """
    for name, v in (("p_train", p_train), ("p_test", p_test), ("eps1", eps1), ("eps2", eps2)):
        if not 0 <= v <= 1:
            raise ConfigError(f"{name} must lie in [0, 1], got {v!r}")
    return 0.5 * (1 - eps2 + p_train - p_test + eps1)


def confusion_gap_accuracy(member_flags: np.ndarray, nonmember_flags: np.ndarray) -> float:
    """Accuracy of a binary membership decision from its member/non-member positive rates.

    Equal-size evaluation sets give ``(r_m + 1 - f) / 2``.
    """
    r_m = float(np.mean(member_flags))
    f = float(np.mean(nonmember_flags))
    return 0.5 * (r_m + 1.0 - f)

