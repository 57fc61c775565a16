"""Membership scores. Every score is oriented so that higher means more member-like."""
from __future__ import annotations

import dataclasses
import enum
from typing import Any, Sequence

import numpy as np

from mia_audit.data import Dataset
from mia_audit.errors import AlignmentError, ConfigError
from mia_audit.model import (
    PROB_CLAMP,
    Model,
    _as_batch,
    _check_labels,
    forward,
    per_example_grad_norm,
    per_example_loss,
    predict,
)


class ScoreKind(str, enum.Enum):
    LOSS = "loss"
    GRAD_NORM = "grad_norm"
    CONFIDENCE = "confidence"
    ENTROPY = "entropy"
    MODIFIED_ENTROPY = "modified_entropy"
    MERLIN = "merlin"
    GAP = "gap"


def calibrated_kind(kind: str) -> str:
    return f"calibrated({kind})"


@dataclasses.dataclass
class ScoreSet:
    """Per-sample scores aligned with ground-truth membership bits.

    ``sample_idx`` records which dataset rows were scored so that sets from
    different models can be checked for alignment before combining them.
    """

    scores: np.ndarray
    is_member: np.ndarray
    kind: str
    sample_idx: np.ndarray | None = None
    metadata: dict[str, Any] = dataclasses.field(default_factory=dict)

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64)
        self.is_member = np.asarray(self.is_member, dtype=bool)
        if isinstance(self.kind, ScoreKind):
            self.kind = self.kind.value
        if self.scores.ndim != 1 or self.scores.shape != self.is_member.shape:
            raise AlignmentError("scores and membership bits must be aligned vectors")
        if self.sample_idx is not None:
            self.sample_idx = np.asarray(self.sample_idx, dtype=np.int64)
            if self.sample_idx.shape != self.scores.shape:
                raise AlignmentError("sample_idx must align with scores")
        if not np.all(np.isfinite(self.scores)):
            raise ConfigError("scores must be finite")

    def __len__(self) -> int:
        return len(self.scores)

    def select(self, mask_or_idx) -> ScoreSet:
        sel = np.asarray(mask_or_idx)
        return ScoreSet(self.scores[sel], self.is_member[sel], self.kind,
                        None if self.sample_idx is None else self.sample_idx[sel], dict(self.metadata))

    def to_dict(self) -> dict[str, Any]:
        return {
            "kind": self.kind,
            "scores": self.scores.tolist(),
            "is_member": self.is_member.astype(int).tolist(),
            "sample_idx": None if self.sample_idx is None else self.sample_idx.tolist(),
            "metadata": self.metadata,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> ScoreSet:
        return cls(np.asarray(d["scores"], dtype=np.float64), np.asarray(d["is_member"], dtype=bool),
                   d["kind"], d.get("sample_idx"), dict(d.get("metadata", {})))


def _log_probs(model: Model, x) -> np.ndarray:
    return np.log(np.clip(forward(model, x), PROB_CLAMP, 1.0))


def loss_score(model: Model, x, y):
    """Log-probability of the true label (negated cross-entropy)."""
    loss = per_example_loss(model, x, y)
    return -loss


def grad_norm_score(model: Model, x, y):
    return -per_example_grad_norm(model, x, y)


def confidence_score(model: Model, x):
    return _log_probs(model, x).max(axis=-1)


def entropy_score(model: Model, x):
    """Negative predictive entropy, ``sum_i p_i log p_i``."""
    p = forward(model, x)
    return (p * np.log(np.clip(p, PROB_CLAMP, 1.0))).sum(axis=-1)


def modified_entropy_score(model: Model, x, y):
    """Negated modified entropy of the prediction w.r.t. the true label."""
    x2, single = _as_batch(model, x)
    y = np.atleast_1d(_check_labels(model, y))
    p = forward(model, x2)
    rows = np.arange(len(y))
    p_true = p[rows, y]
    log_c = lambda v: np.log(np.clip(v, PROB_CLAMP, 1.0))  # noqa: E731
    other = p * log_c(1.0 - p)
    other[rows, y] = 0.0
    mentr = -(1.0 - p_true) * log_c(p_true) - other.sum(axis=1)
    score = -mentr
    return float(score[0]) if single else score


def merlin_score(model: Model, x, y: int, sigma, trials: int = 100, seed=0) -> float:
    """Fraction of Gaussian input perturbations that strictly increase the loss.

    ``sigma`` may be a scalar or a per-feature vector. ``seed`` is anything
    accepted by :func:`numpy.random.default_rng`.
    """
    sigma = np.asarray(sigma, dtype=np.float64)
    if np.any(sigma <= 0):
        raise ConfigError("sigma must be positive")
    if trials < 1:
        raise ConfigError("trials must be at least 1")
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ConfigError("merlin_score takes a single feature vector")
    noise = np.random.default_rng(seed).standard_normal((trials, x.size))
    base = per_example_loss(model, x, y)
    perturbed = per_example_loss(model, x + sigma * noise, np.full(trials, y))
    return float(np.mean(perturbed > base))


def gap_score(model: Model, x, y):
    """1 where the model classifies correctly, else 0."""
    x2, single = _as_batch(model, x)
    y = np.atleast_1d(_check_labels(model, y))
    correct = (predict(model, x2) == y).astype(np.float64)
    return float(correct[0]) if single else correct


def morgan_decide(loss_scores: ScoreSet, merlin_scores: ScoreSet, tau_loss: float, tau_merlin: float) -> np.ndarray:
    """Predict member where both the loss and the Merlin score clear their thresholds."""
    if len(loss_scores) != len(merlin_scores):
        raise AlignmentError("loss and merlin score sets differ in length")
    _check_same_samples(loss_scores, merlin_scores)
    return (loss_scores.scores >= tau_loss) & (merlin_scores.scores >= tau_merlin)


def default_merlin_sigma(data: Dataset, relative: float = 0.01) -> np.ndarray:
    return relative * np.maximum(data.features.std(axis=0), PROB_CLAMP)


def score_batch(
    model: Model,
    data: Dataset,
    idx: Sequence[int],
    kind: ScoreKind | str,
    is_member: Sequence[bool] | None = None,
    *,
    sigma=None,
    trials: int = 100,
    seed: int = 0,
) -> ScoreSet:
    """Score every indexed sample with one score kind.

    Merlin draws noise for the sample at position ``i`` from the stream
    ``default_rng([seed, i])``, so batch results equal single-sample calls.
    """
    kind = ScoreKind(kind)
    idx = np.asarray(idx, dtype=np.int64)
    if idx.size == 0:
        raise ConfigError("score_batch needs at least one index")
    members = np.zeros(idx.size, dtype=bool) if is_member is None else np.asarray(is_member, dtype=bool)
    x, y = data.features[idx], data.labels[idx]
    if kind is ScoreKind.LOSS:
        s = loss_score(model, x, y)
    elif kind is ScoreKind.GRAD_NORM:
        s = grad_norm_score(model, x, y)
    elif kind is ScoreKind.CONFIDENCE:
        s = confidence_score(model, x)
    elif kind is ScoreKind.ENTROPY:
        s = entropy_score(model, x)
    elif kind is ScoreKind.MODIFIED_ENTROPY:
        s = modified_entropy_score(model, x, y)
    elif kind is ScoreKind.GAP:
        s = gap_score(model, x, y)
    else:
        if sigma is None:
            sigma = default_merlin_sigma(data)
        s = np.array([merlin_score(model, x[i], int(y[i]), sigma, trials, [seed, i]) for i in range(idx.size)])
    meta = {"seed": seed, "trials": trials} if kind is ScoreKind.MERLIN else {}
    return ScoreSet(np.asarray(s, dtype=np.float64), members, kind.value, idx, meta)


def _check_same_samples(a: ScoreSet, b: ScoreSet) -> None:
    if a.sample_idx is not None and b.sample_idx is not None and not np.array_equal(a.sample_idx, b.sample_idx):
        raise AlignmentError("score sets refer to different samples")
    if not np.array_equal(a.is_member, b.is_member):
        raise AlignmentError("score sets disagree on membership bits")
