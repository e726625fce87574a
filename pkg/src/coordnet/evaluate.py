"""Metrics: AUC, precision/recall/F1, NMI, coverage, and report files."""

from __future__ import annotations

import csv
import logging
import math
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.stats import rankdata
from sklearn.metrics import normalized_mutual_info_score

from ._io import dump_json
from .simnet import SimilarityNetwork

logger = logging.getLogger(__name__)

NONE_GROUP = "\x00none"


class UndefinedMetricWarning(UserWarning):
    pass


def harmonic_f1(precision: float, recall: float) -> float:
    if math.isnan(precision) or math.isnan(recall):
        return float("nan")
    if precision + recall == 0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


@dataclass(frozen=True)
class EvalReport:
    """Detector or classifier scores; ``f1`` is always the harmonic mean of P and R."""

    precision: float
    recall: float
    auc: float
    per_fold: tuple[dict, ...] = ()
    config: dict = field(default_factory=dict)
    f1: float = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "f1", harmonic_f1(self.precision, self.recall))

    def to_dict(self) -> dict:
        out = asdict(self)
        out["per_fold"] = [dict(f) for f in self.per_fold]
        return _json_safe(out)


def _json_safe(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {str(k): _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer)):
        return _json_safe(obj.item())
    return obj


# --- ranking ---------------------------------------------------------------------


def roc_auc(scores: Sequence[float], labels: Sequence[int]) -> float:
    """Mann-Whitney AUC: P(random positive outranks random negative), ties count 1/2."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels).astype(bool)
    if s.shape != y.shape or s.ndim != 1:
        raise ValueError("scores and labels must be 1-d and aligned")
    n_pos = int(y.sum())
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("roc_auc needs both classes")
    ranks = rankdata(s)
    # rank sums of midranks are multiples of 1/2, so this is exact in floating point
    u = ranks[y].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def roc_points(scores: Sequence[float], labels: Sequence[int]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(fpr, tpr, thresholds) for every distinct score, highest threshold first."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels).astype(bool)
    order = np.argsort(-s, kind="mergesort")
    s, y = s[order], y[order]
    last = np.r_[np.nonzero(np.diff(s))[0], len(s) - 1]
    tp = np.cumsum(y)[last]
    fp = (last + 1) - tp
    n_pos, n_neg = max(y.sum(), 1), max((~y).sum(), 1)
    fpr = np.r_[0.0, fp / n_neg]
    tpr = np.r_[0.0, tp / n_pos]
    thr = np.r_[np.inf, s[last]]
    return fpr, tpr, thr


def precision_at_recall(scores: Sequence[float], labels: Sequence[int], target: float) -> float:
    """Precision at the highest score threshold whose recall reaches ``target``."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels).astype(bool)
    _, tpr, thr = roc_points(s, y)
    reach = np.nonzero(tpr >= target - 1e-12)[0]
    if len(reach) == 0:
        return 0.0
    cut = thr[reach[0]]
    flagged = s >= cut
    return float(y[flagged].mean()) if flagged.any() else 0.0


def max_positive_recall(scores: Sequence[float], labels: Sequence[int]) -> float:
    """Recall reached by flagging every user with a strictly positive score."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels).astype(bool)
    return float((y & (s > 0)).sum() / max(y.sum(), 1))


def matched_precision(
    scores_a: Sequence[float], scores_b: Sequence[float], labels: Sequence[int], recall: float
) -> tuple[float, float, float]:
    """Precision of two rankings at a common recall.

    The recall is capped at what both rankings reach with a positive score, so
    neither side is forced into the flag-everyone operating point. Returns
    ``(precision_a, precision_b, matched_recall)``.
    """
    r = min(recall, max_positive_recall(scores_a, labels), max_positive_recall(scores_b, labels))
    return precision_at_recall(scores_a, labels, r), precision_at_recall(scores_b, labels, r), r


# --- set metrics ---------------------------------------------------------------------


def precision_recall_f1(
    flagged: Iterable[str], labels: Mapping[str, int]
) -> tuple[float, float, float]:
    """Precision, recall, F1 for the positive class over the labelled users.

    Flagged users without a label are ignored. An empty flagged set gives
    precision 0 and a warning.
    """
    if not labels:
        raise ValueError("labels must be nonempty")
    flagged = {u for u in flagged if u in labels}
    positives = {u for u, y in labels.items() if y}
    tp = len(flagged & positives)
    if not flagged:
        warnings.warn("no users flagged; precision set to 0", UndefinedMetricWarning, stacklevel=2)
        precision = 0.0
    else:
        precision = tp / len(flagged)
    recall = tp / len(positives) if positives else float("nan")
    return precision, recall, harmonic_f1(precision, recall)


def detector_report(result, labels: Mapping[str, int], **config) -> EvalReport:
    """Score a DetectionResult over every labelled user (absent users score 0)."""
    users = sorted(labels)
    y = np.array([labels[u] for u in users])
    p, r, _ = precision_recall_f1(result.flagged, labels)
    auc = roc_auc(result.score_array(users), y)
    cfg = {"method": result.method, **result.params, **config}
    return EvalReport(p, r, auc, config=cfg)


# --- partitions ----------------------------------------------------------------------


def nmi(
    groups_a: Mapping[str, object],
    groups_b: Mapping[str, object],
    universe: Iterable[str] | None = None,
) -> float:
    """Arithmetic-mean NMI between two partitions of one user universe.

    Users missing from a partition fall into a reserved group. A partition with
    a single group carries no information, so the score is 0 by convention.
    """
    users = sorted(set(universe) if universe is not None else set(groups_a) | set(groups_b))
    if not users:
        raise ValueError("empty user universe")
    a = [str(groups_a.get(u, NONE_GROUP)) for u in users]
    b = [str(groups_b.get(u, NONE_GROUP)) for u in users]
    if len(set(a)) < 2 or len(set(b)) < 2:
        return 0.0
    return float(normalized_mutual_info_score(a, b, average_method="arithmetic"))


def membership(net: SimilarityNetwork, universe: Iterable[str]) -> dict[str, int]:
    """1 for users with at least one edge in ``net``, else 0."""
    connected = net.connected_nodes()
    return {u: int(u in connected) for u in universe}


def coverage(net: SimilarityNetwork, labels: Mapping[str, int]) -> float:
    """Fraction of positive users that are nodes of ``net``."""
    positives = [u for u, y in labels.items() if y]
    if not positives:
        raise ValueError("coverage needs at least one positive user")
    return sum(u in net for u in positives) / len(positives)


# --- files -----------------------------------------------------------------------------


def write_report(reports: Mapping[str, EvalReport] | EvalReport, path: str | Path, **extra) -> None:
    if isinstance(reports, EvalReport):
        body = reports.to_dict()
    else:
        body = {name: rep.to_dict() for name, rep in reports.items()}
    dump_json(_json_safe({**body, **extra}) if extra else body, path)


def write_roc_points(scores, labels, path: str | Path) -> None:
    fpr, tpr, thr = roc_points(scores, labels)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["fpr", "tpr", "threshold"])
        for f, t, h in zip(fpr.tolist(), tpr.tolist(), thr.tolist()):
            writer.writerow([repr(f), repr(t), repr(h)])


def write_curve(rows: Sequence[Mapping], path: str | Path) -> None:
    """Plot-ready CSV from a list of flat dicts (columns from the first row)."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        if not rows:
            return
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: ("" if isinstance(v, float) and math.isnan(v) else v) for k, v in row.items()})
