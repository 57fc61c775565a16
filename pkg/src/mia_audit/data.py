"""Datasets, CSV ingestion and the private/public split plan."""
from __future__ import annotations

import csv
import dataclasses
import math
import os
from typing import Any

import numpy as np

from mia_audit.errors import (
    ConfigError,
    MissingColumnError,
    MissingFileError,
    NonNumericCellError,
    SingleClassError,
    SplitError,
)

STD_CLAMP = 1e-12


@dataclasses.dataclass(frozen=True)
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    n_classes: int

    def __post_init__(self):
        features = np.asarray(self.features, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.int64)
        if features.ndim != 2 or features.shape[1] < 1:
            raise ConfigError(f"features must be a 2-D matrix with >=1 column, got {features.shape}")
        if features.shape[0] < 4:
            raise ConfigError(f"need at least 4 samples, got {features.shape[0]}")
        if labels.shape != (features.shape[0],):
            raise ConfigError("labels must be a vector aligned with the feature rows")
        if self.n_classes < 1:
            raise ConfigError("n_classes must be positive")
        if labels.min() < 0 or labels.max() >= self.n_classes:
            raise ConfigError(f"labels must lie in [0, {self.n_classes})")
        if not np.all(np.isfinite(features)):
            raise ConfigError("features contain non-finite values")
        features.setflags(write=False)
        labels.setflags(write=False)
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "labels", labels)

    @property
    def n_samples(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]


@dataclasses.dataclass(frozen=True)
class SyntheticConfig:
    n_samples: int = 1000
    n_features: int = 20
    n_classes: int = 2
    cluster_spread: float = 1.0
    seed: int = 0

    def validate(self) -> None:
        for name in ("n_samples", "n_features", "n_classes"):
            value = getattr(self, name)
            if not isinstance(value, (int, np.integer)) or value <= 0:
                raise ConfigError(f"{name} must be a positive integer, got {value!r}")
        if self.n_samples < 4:
            raise ConfigError("n_samples must be at least 4")
        if not self.cluster_spread > 0:
            raise ConfigError(f"cluster_spread must be positive, got {self.cluster_spread!r}")


@dataclasses.dataclass(frozen=True)
class SplitPlan:
    """Disjoint index sets for one experiment trial.

    ``shadow_idx`` is the whole public pool used to train reference models;
    ``sim_member_idx`` and ``sim_nonmember_idx`` partition that same pool and
    are only used to simulate an attack when picking a threshold.
    """

    member_idx: np.ndarray
    nonmember_idx: np.ndarray
    shadow_idx: np.ndarray
    sim_member_idx: np.ndarray
    sim_nonmember_idx: np.ndarray
    seed: int
    balanced: bool = True

    def to_dict(self) -> dict[str, Any]:
        return {
            "member_idx": self.member_idx.tolist(),
            "nonmember_idx": self.nonmember_idx.tolist(),
            "shadow_idx": self.shadow_idx.tolist(),
            "sim_member_idx": self.sim_member_idx.tolist(),
            "sim_nonmember_idx": self.sim_nonmember_idx.tolist(),
            "seed": int(self.seed),
            "balanced": bool(self.balanced),
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> SplitPlan:
        arr = lambda key: np.asarray(d[key], dtype=np.int64)  # noqa: E731
        return cls(
            member_idx=arr("member_idx"),
            nonmember_idx=arr("nonmember_idx"),
            shadow_idx=arr("shadow_idx"),
            sim_member_idx=arr("sim_member_idx"),
            sim_nonmember_idx=arr("sim_nonmember_idx"),
            seed=int(d["seed"]),
            balanced=bool(d.get("balanced", True)),
        )


def generate_synthetic(cfg: SyntheticConfig) -> Dataset:
    """Sample isotropic Gaussian clusters around unit-norm random centers.

    Labels are assigned round-robin before shuffling, so class counts differ
    by at most one.
    """
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    centers = rng.standard_normal((cfg.n_classes, cfg.n_features))
    centers /= np.linalg.norm(centers, axis=1, keepdims=True)
    labels = rng.permutation(np.arange(cfg.n_samples) % cfg.n_classes)
    noise = rng.standard_normal((cfg.n_samples, cfg.n_features)) * cfg.cluster_spread
    return Dataset(centers[labels] + noise, labels, cfg.n_classes)


def load_csv(path: str | os.PathLike, label_column: str) -> Dataset:
    """Read a headed CSV file into a standardized :class:`Dataset`.

    Every column except ``label_column`` must be numeric. Features are
    standardized per column; label values are re-indexed densely in order of
    first appearance.
    """
    if not os.path.isfile(path):
        raise MissingFileError(f"no such file: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise MissingColumnError(f"{path} is empty") from None
        if label_column not in header:
            raise MissingColumnError(f"label column {label_column!r} not in header {header}")
        label_pos = header.index(label_column)
        rows, raw_labels = [], []
        for line_no, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != len(header):
                raise NonNumericCellError(f"line {line_no}: expected {len(header)} cells, got {len(row)}")
            values = []
            for col, cell in enumerate(row):
                if col == label_pos:
                    continue
                try:
                    values.append(float(cell))
                except ValueError:
                    raise NonNumericCellError(
                        f"line {line_no}, column {header[col]!r}: non-numeric value {cell!r}"
                    ) from None
            rows.append(values)
            raw_labels.append(row[label_pos].strip())

    index: dict[str, int] = {}
    labels = np.array([index.setdefault(v, len(index)) for v in raw_labels], dtype=np.int64)
    if len(index) < 2:
        raise SingleClassError(f"{path}: label column has {len(index)} distinct value(s)")
    features = np.asarray(rows, dtype=np.float64).reshape(len(rows), len(header) - 1)
    if not np.all(np.isfinite(features)):
        raise NonNumericCellError(f"{path}: non-finite feature values")
    return Dataset(standardize(features), labels, len(index))


def standardize(features: np.ndarray) -> np.ndarray:
    mean = features.mean(axis=0)
    std = np.maximum(features.std(axis=0), STD_CLAMP)
    out = (features - mean) / std
    # constant columns: the clamp only guards the division, the result must be exactly zero
    out[:, features.std(axis=0) < STD_CLAMP] = 0.0
    return out


def make_split(data: Dataset, member_fraction: float, shadow_fraction: float, seed: int) -> SplitPlan:
    if not (0 < member_fraction < 1 and 0 < shadow_fraction < 1):
        raise SplitError("member_fraction and shadow_fraction must lie in (0, 1)")
    if member_fraction + shadow_fraction > 1 + 1e-12:
        raise SplitError("member_fraction + shadow_fraction must not exceed 1")
    n = data.n_samples
    n_private = int(round(member_fraction * n))
    n_public = int(round(shadow_fraction * n))
    half_private, half_public = n_private // 2, n_public // 2
    if n_private + n_public > n:
        raise SplitError("rounded split sizes exceed the dataset")
    if half_private < 2 or half_public < 2:
        raise SplitError(f"split too small: {half_private} members, {half_public} per simulation half")

    perm = np.random.default_rng(seed).permutation(n)
    private, public = perm[:n_private], perm[n_private:n_private + n_public]
    # an odd leftover sample in either pool is dropped so the halves stay equal
    public = public[: 2 * half_public]
    return SplitPlan(
        member_idx=private[:half_private],
        nonmember_idx=private[half_private:2 * half_private],
        shadow_idx=public,
        sim_member_idx=public[:half_public],
        sim_nonmember_idx=public[half_public:],
        seed=seed,
    )


def subsample_members(plan: SplitPlan, ratio: float, seed: int) -> SplitPlan:
    """Keep ``ceil(ratio * |members|)`` members for evaluation only."""
    if not 0 < ratio <= 1:
        raise SplitError(f"ratio must lie in (0, 1], got {ratio!r}")
    k = math.ceil(ratio * len(plan.member_idx) - 1e-9)
    if k == len(plan.member_idx):
        return plan
    rng = np.random.default_rng(seed)
    chosen = np.sort(rng.choice(len(plan.member_idx), size=k, replace=False))
    return dataclasses.replace(plan, member_idx=plan.member_idx[chosen], balanced=False)


def check_plan(plan: SplitPlan, n_samples: int) -> None:
    """Raise :class:`SplitError` if the plan breaks disjointness or cardinality."""
    sets = [plan.member_idx, plan.nonmember_idx, plan.sim_member_idx, plan.sim_nonmember_idx]
    pool = np.concatenate([plan.member_idx, plan.nonmember_idx, plan.shadow_idx])
    if len(np.unique(pool)) != len(pool):
        raise SplitError("private and public index sets overlap")
    if len(pool) and (pool.min() < 0 or pool.max() >= n_samples):
        raise SplitError("index out of range")
    sim = np.concatenate(sets[2:])
    if len(np.unique(sim)) != len(sim) or not np.array_equal(np.sort(sim), np.sort(plan.shadow_idx)):
        raise SplitError("simulation halves must partition the shadow pool")
    if plan.balanced and len(plan.member_idx) != len(plan.nonmember_idx):
        raise SplitError("member and non-member sets differ in size")
    if len(plan.sim_member_idx) != len(plan.sim_nonmember_idx):
        raise SplitError("simulation halves differ in size")
