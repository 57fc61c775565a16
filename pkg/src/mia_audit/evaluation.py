"""ROC/PR analysis, threshold selection and attack reports.

A sample is predicted to be a member iff ``score > tau``.
"""
from __future__ import annotations

import dataclasses
import math
from typing import Any, Sequence

import numpy as np

from mia_audit.errors import EvaluationError
from mia_audit.scores import ScoreSet

# fallback threshold for calibrated scores when no simulation set is available
DEFAULT_CALIBRATED_THRESHOLD = 1e-4


@dataclasses.dataclass(frozen=True)
class RocCurve:
    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray

    def __len__(self) -> int:
        return len(self.fpr)

    def points(self) -> list[tuple[float, float, float]]:
        return list(zip(self.fpr.tolist(), self.tpr.tolist(), self.thresholds.tolist()))


@dataclasses.dataclass(frozen=True)
class PrCurve:
    recall: np.ndarray
    precision: np.ndarray
    thresholds: np.ndarray

    def __len__(self) -> int:
        return len(self.recall)

    def points(self) -> list[tuple[float, float, float]]:
        return list(zip(self.recall.tolist(), self.precision.tolist(), self.thresholds.tolist()))


def _require_both_classes(s: ScoreSet) -> tuple[int, int]:
    n_pos = int(s.is_member.sum())
    n_neg = len(s) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise EvaluationError("need at least one member and one non-member")
    return n_pos, n_neg


def _confusion_counts(s: ScoreSet):
    """Cumulative TP/FP counts when predicting the top-k unique score levels as members.

    Returns ``(tp, fp, thresholds)`` where entry ``k`` corresponds to the
    strict threshold equal to the ``k``-th largest unique score (entry 0
    predicts nothing) and the last entry uses ``-inf`` (predicts everything).
    """
    order = np.argsort(-s.scores, kind="stable")
    sorted_scores = s.scores[order]
    members = s.is_member[order]
    # last position of each block of tied scores
    ends = np.flatnonzero(np.r_[sorted_scores[1:] != sorted_scores[:-1], True])
    tp = np.r_[0, np.cumsum(members)[ends]]
    fp = np.r_[0, (ends + 1) - tp[1:]]
    unique_desc = sorted_scores[ends]
    thresholds = np.r_[unique_desc, -np.inf]
    return tp, fp, thresholds


def roc_curve(s: ScoreSet) -> RocCurve:
    n_pos, n_neg = _require_both_classes(s)
    tp, fp, thr = _confusion_counts(s)
    return RocCurve(fp / n_neg, tp / n_pos, thr)


def auc(s: ScoreSet) -> float:
    """Trapezoidal area under the ROC curve; tied scores count one half."""
    roc = roc_curve(s)
    return float(np.sum(np.diff(roc.fpr) * (roc.tpr[1:] + roc.tpr[:-1]) / 2.0))


def pr_curve(s: ScoreSet) -> PrCurve:
    """Precision/recall at every threshold; precision is 1 when nothing is predicted."""
    n_pos, _ = _require_both_classes(s)
    tp, fp, thr = _confusion_counts(s)
    predicted = tp + fp
    precision = np.divide(tp, predicted, out=np.ones(len(tp)), where=predicted > 0)
    return PrCurve(tp / n_pos, precision, thr)


def accuracy_at(s: ScoreSet, tau: float) -> float:
    if len(s) == 0:
        raise EvaluationError("empty score set")
    return float(np.mean((s.scores > tau) == s.is_member))


def threshold_candidates(scores: np.ndarray) -> np.ndarray:
    """Midpoints between adjacent unique scores plus one point beyond each end."""
    u = np.unique(scores)
    return np.r_[u[0] - 1.0, (u[1:] + u[:-1]) / 2.0, u[-1] + 1.0]


def select_threshold(sim: ScoreSet) -> float:
    """Threshold maximizing accuracy on a simulated member/non-member split.

    Ties go to the largest threshold.
    """
    _require_both_classes(sim)
    candidates = threshold_candidates(sim.scores)
    order = np.argsort(sim.scores, kind="stable")
    sorted_scores, members = sim.scores[order], sim.is_member[order]
    # number of samples with score <= tau for each candidate
    below = np.searchsorted(sorted_scores, candidates, side="right")
    neg_below = np.r_[0, np.cumsum(~members)][below]
    pos_above = members.sum() - np.r_[0, np.cumsum(members)][below]
    correct = neg_below + pos_above
    best = np.flatnonzero(correct == correct.max())[-1]
    return float(candidates[best])


def best_accuracy(s: ScoreSet) -> float:
    """Accuracy at the accuracy-optimal threshold for this very set."""
    return accuracy_at(s, select_threshold(s))


def ppv_report(s: ScoreSet) -> tuple[float, int]:
    """Maximum precision over non-empty predictions, and members above every non-member."""
    _require_both_classes(s)
    pr = pr_curve(s)
    ppv = float(pr.precision[1:].max())
    top_nonmember = s.scores[~s.is_member].max()
    zero_fpr = int(np.sum(s.scores[s.is_member] > top_nonmember))
    return ppv, zero_fpr


def tpr_at_fpr(s: ScoreSet, fpr_level: float) -> float:
    """Largest achievable TPR whose FPR does not exceed ``fpr_level`` (staircase)."""
    if not 0 <= fpr_level <= 1:
        raise EvaluationError("fpr_level must lie in [0, 1]")
    n_pos, n_neg = _require_both_classes(s)
    tp, fp, _ = _confusion_counts(s)
    allowed = math.floor(fpr_level * n_neg)
    return float(tp[fp <= allowed].max() / n_pos)


def precision_at_top(s: ScoreSet, k: int) -> float:
    """Fraction of members among the ``k`` highest scores (stable order on ties)."""
    if k < 1:
        raise EvaluationError("k must be positive")
    order = np.argsort(-s.scores, kind="stable")[:k]
    return float(s.is_member[order].mean())


def select_ppv_thresholds(loss_sim: ScoreSet, merlin_sim: ScoreSet) -> tuple[float, float]:
    """Two thresholds for the loss/Merlin AND-rule that maximize PPV on a simulation set.

    Only threshold pairs predicting at least one member are considered. Ties
    prefer more predicted members, then the smaller thresholds.
    """
    if len(loss_sim) != len(merlin_sim):
        raise EvaluationError("simulation sets differ in length")
    _require_both_classes(loss_sim)
    best = (-1.0, -1, 0.0, 0.0)
    member = loss_sim.is_member
    for tm in np.unique(merlin_sim.scores):
        keep = merlin_sim.scores >= tm
        ls = loss_sim.scores[keep]
        lm = member[keep]
        order = np.argsort(-ls, kind="stable")
        ls, lm = ls[order], lm[order]
        ends = np.flatnonzero(np.r_[ls[1:] != ls[:-1], True])
        tp = np.cumsum(lm)[ends]
        n = ends + 1
        prec = tp / n
        for p, cnt, tl in zip(prec, n, ls[ends]):
            if (p, cnt) > best[:2] or ((p, cnt) == best[:2] and (tl, tm) < best[2:]):
                best = (float(p), int(cnt), float(tl), float(tm))
    return best[2], best[3]


@dataclasses.dataclass
class AttackReport:
    """Everything measured for one attack on one evaluation set."""

    auc: float
    accuracy: float
    optimal_threshold: float
    best_accuracy: float
    roc: RocCurve
    pr: PrCurve
    ppv: float
    ppv_zero_fpr_count: int
    tpr_at_fpr: dict[float, float]
    precision_at_top: dict[int, float]
    provenance: dict[str, Any] = dataclasses.field(default_factory=dict)

    SCALARS = ("auc", "accuracy", "optimal_threshold", "best_accuracy", "ppv", "ppv_zero_fpr_count")

    def scalars(self) -> dict[str, float]:
        out = {k: float(getattr(self, k)) for k in self.SCALARS}
        out.update({f"tpr@fpr={k!r}": v for k, v in self.tpr_at_fpr.items()})
        out.update({f"precision@top{k}": v for k, v in self.precision_at_top.items()})
        return out

    def to_dict(self) -> dict[str, Any]:
        return {
            "auc": self.auc,
            "accuracy": self.accuracy,
            "optimal_threshold": self.optimal_threshold,
            "best_accuracy": self.best_accuracy,
            "ppv": self.ppv,
            "ppv_zero_fpr_count": self.ppv_zero_fpr_count,
            "tpr_at_fpr": [[k, v] for k, v in self.tpr_at_fpr.items()],
            "precision_at_top": [[k, v] for k, v in self.precision_at_top.items()],
            "roc": {"fpr": self.roc.fpr.tolist(), "tpr": self.roc.tpr.tolist(),
                    "thresholds": self.roc.thresholds.tolist()},
            "pr": {"recall": self.pr.recall.tolist(), "precision": self.pr.precision.tolist(),
                   "thresholds": self.pr.thresholds.tolist()},
            "provenance": self.provenance,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> AttackReport:
        arr = lambda v: np.asarray(v, dtype=np.float64)  # noqa: E731
        return cls(
            auc=d["auc"],
            accuracy=d["accuracy"],
            optimal_threshold=d["optimal_threshold"],
            best_accuracy=d["best_accuracy"],
            roc=RocCurve(arr(d["roc"]["fpr"]), arr(d["roc"]["tpr"]), arr(d["roc"]["thresholds"])),
            pr=PrCurve(arr(d["pr"]["recall"]), arr(d["pr"]["precision"]), arr(d["pr"]["thresholds"])),
            ppv=d["ppv"],
            ppv_zero_fpr_count=int(d["ppv_zero_fpr_count"]),
            tpr_at_fpr={float(k): v for k, v in d["tpr_at_fpr"]},
            precision_at_top={int(k): v for k, v in d["precision_at_top"]},
            provenance=dict(d.get("provenance", {})),
        )


def evaluate_attack(
    s: ScoreSet,
    threshold: float,
    fpr_levels: Sequence[float] = (0.01, 0.05, 0.1),
    top_k: Sequence[int] = (10,),
    provenance: dict[str, Any] | None = None,
) -> AttackReport:
    ppv, zero_fpr = ppv_report(s)
    return AttackReport(
        auc=auc(s),
        accuracy=accuracy_at(s, threshold),
        optimal_threshold=float(threshold),
        best_accuracy=best_accuracy(s),
        roc=roc_curve(s),
        pr=pr_curve(s),
        ppv=ppv,
        ppv_zero_fpr_count=zero_fpr,
        tpr_at_fpr={float(level): tpr_at_fpr(s, level) for level in fpr_levels},
        precision_at_top={int(k): precision_at_top(s, k) for k in top_k},
        provenance=dict(provenance or {}),
    )


def export_curve(curve: RocCurve | PrCurve, path: str, delimiter: str = "\t") -> None:
    """Write a curve as delimited columns with a header row for external plotting."""
    if isinstance(curve, RocCurve):
        header, cols = ("fpr", "tpr", "threshold"), (curve.fpr, curve.tpr, curve.thresholds)
    else:
        header, cols = ("recall", "precision", "threshold"), (curve.recall, curve.precision, curve.thresholds)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(delimiter.join(header) + "\n")
        for row in zip(*cols):
            fh.write(delimiter.join(repr(float(v)) for v in row) + "\n")
