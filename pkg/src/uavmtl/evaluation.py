"""Result processing: geodesic and 3-D errors, error CDFs, confusion matrix and
precision / recall / F1 with micro and macro averaging."""

from __future__ import annotations

import csv
import json
import math
import os
import warnings
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .errors import DegenerateInput, EmptyInput, ShapeMismatch
from .labeler import NUM_STATES, STATE_NAMES

EARTH_RADIUS_M = 6_371_000.0
THRESHOLD = 0.5


# ---------------------------------------------------------------------------
# distances


def haversine_m(lat1, lon1, lat2, lon2):
    """Great-circle distance in metres between points given in degrees."""
    phi1, phi2 = np.radians(lat1), np.radians(lat2)
    dphi = phi2 - phi1
    dlmb = np.radians(np.asarray(lon2) - np.asarray(lon1))
    a = np.sin(dphi / 2) ** 2 + np.cos(phi1) * np.cos(phi2) * np.sin(dlmb / 2) ** 2
    d = 2 * EARTH_RADIUS_M * np.arcsin(np.sqrt(np.clip(a, 0.0, 1.0)))
    return float(d) if np.ndim(d) == 0 else d


def euclidean_3d_error(pred, true, coord_mode: str = "geodetic"):
    """3-D error in metres between ``[..., 3]`` (x, y, z) positions.

    In geodetic mode x/y are longitude/latitude degrees: the horizontal part is
    the haversine distance, combined with the altitude difference.
    """
    pred = np.asarray(pred, dtype=np.float64)
    true = np.asarray(true, dtype=np.float64)
    if pred.shape != true.shape or pred.shape[-1] != 3:
        raise ShapeMismatch(f"positions must match and end in 3, got {pred.shape} vs {true.shape}")
    dz = pred[..., 2] - true[..., 2]
    if coord_mode == "geodetic":
        horiz = haversine_m(true[..., 1], true[..., 0], pred[..., 1], pred[..., 0])
    elif coord_mode == "local":
        horiz = np.hypot(pred[..., 0] - true[..., 0], pred[..., 1] - true[..., 1])
    else:
        raise ValueError(f"unknown coord_mode {coord_mode!r}")
    d = np.sqrt(np.square(horiz) + np.square(dz))
    return float(d) if np.ndim(d) == 0 else d


# ---------------------------------------------------------------------------
# trajectory error table and CDFs


@dataclass
class TrajErrorTable:
    per_second: dict[int, float]
    per_step: np.ndarray
    errors: np.ndarray = field(repr=False)  # [N, HS] metres
    count: int = 0

    def second_errors(self, s: int, sample_rate_hz: float) -> np.ndarray:
        return self.errors[:, int(round(s * sample_rate_hz)) - 1]


def trajectory_errors(preds, trues, coord_mode: str = "geodetic", sample_rate_hz: float = 10.0) -> TrajErrorTable:
    """Mean error per horizon second (step ``s * rate - 1``) and per step, pooled over windows."""
    preds = np.asarray(preds, dtype=np.float64)
    trues = np.asarray(trues, dtype=np.float64)
    if preds.ndim != 3 or preds.shape != trues.shape or preds.shape[2] != 3:
        raise ShapeMismatch(f"expected matching [N, HS, 3] arrays, got {preds.shape} and {trues.shape}")
    errors = euclidean_3d_error(preds, trues, coord_mode)
    per_step = errors.mean(axis=0)
    hs = preds.shape[1]
    per_second = {}
    s = 1
    while int(round(s * sample_rate_hz)) <= hs:
        per_second[s] = float(per_step[int(round(s * sample_rate_hz)) - 1])
        s += 1
    return TrajErrorTable(per_second, per_step, errors, count=len(preds))


@dataclass
class ErrorCDF:
    errors: np.ndarray  # sorted
    fractions: np.ndarray  # k / n, right-continuous step heights

    def __iter__(self):
        return iter(zip(self.errors.tolist(), self.fractions.tolist()))


def error_cdf(errors) -> ErrorCDF:
    e = np.sort(np.asarray(errors, dtype=np.float64).ravel())
    if e.size == 0:
        raise EmptyInput("error_cdf needs at least one error")
    return ErrorCDF(e, np.arange(1, e.size + 1) / e.size)


def percentile(cdf: ErrorCDF, q: float) -> float:
    """Error below which a fraction ``q`` of samples fall (linear interpolation)."""
    if not 0.0 <= q <= 1.0:
        raise ValueError("q must be in [0, 1]")
    return float(np.quantile(cdf.errors, q, method="linear"))


# ---------------------------------------------------------------------------
# classification metrics


@dataclass
class ClassMetrics:
    precision: list[Optional[float]]
    recall: list[Optional[float]]
    f1: list[Optional[float]]
    support: list[int]
    tp: list[int]
    fp: list[int]
    fn: list[int]


@dataclass
class AverageMetrics:
    micro_precision: float
    micro_recall: float
    micro_f1: float
    macro_precision: float
    macro_recall: float
    macro_f1: float
    excluded_classes: list[str] = field(default_factory=list)


def f1_score(precision: float, recall: float) -> float:
    """Harmonic mean of precision and recall; 0 when both are 0."""
    s = precision + recall
    return 2 * precision * recall / s if s else 0.0


def precision_recall_f1(tp: int, fp: int, fn: int) -> tuple[float, float, float]:
    """Precision, recall and F1; zero denominators give 0."""
    p = tp / (tp + fp) if tp + fp else 0.0
    r = tp / (tp + fn) if tp + fn else 0.0
    return p, r, f1_score(p, r)


def dominant_true_class(true_multi_hot, true_counts=None) -> np.ndarray:
    """Single-label reduction of multi-hot truth.

    Single-hot rows map to their set bit.  Multi-hot rows map to the class with
    the most horizon steps when ``true_counts`` is given, else the lowest set
    index; ties go to the lowest index.
    """
    y = np.asarray(true_multi_hot)
    if true_counts is not None:
        counts = np.where(y > 0, np.asarray(true_counts), -1)
        return np.argmax(counts, axis=1)
    return np.argmax(y > 0, axis=1)


def confusion_matrix(true_idx, pred_idx, num_classes: int = NUM_STATES) -> np.ndarray:
    cm = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(cm, (np.asarray(true_idx), np.asarray(pred_idx)), 1)
    return cm


def confusion_and_metrics(state_probs, true_multi_hot, true_counts=None, threshold: float = THRESHOLD):
    """Confusion matrix (argmax vs dominant truth) plus per-class and averaged metrics.

    Per-class TP/FP/FN come from multi-label predictions ``probs >= threshold``.
    Classes absent from the truth get ``None`` metrics and are left out of the
    macro averages (a :class:`DegenerateInput` warning names them).
    """
    probs = np.asarray(state_probs, dtype=np.float64)
    y = np.asarray(true_multi_hot) > 0
    if probs.ndim != 2 or probs.shape != y.shape or probs.shape[1] != NUM_STATES:
        raise ShapeMismatch(f"expected matching [N, {NUM_STATES}] arrays, got {probs.shape} and {y.shape}")
    if len(probs) < 1:
        raise EmptyInput("no samples to evaluate")

    cm = confusion_matrix(dominant_true_class(y, true_counts), np.argmax(probs, axis=1))

    pred = probs >= threshold
    tp = np.sum(pred & y, axis=0)
    fp = np.sum(pred & ~y, axis=0)
    fn = np.sum(~pred & y, axis=0)
    support = np.sum(y, axis=0)

    cls = ClassMetrics([], [], [], support.tolist(), tp.tolist(), fp.tolist(), fn.tolist())
    excluded = []
    for k in range(NUM_STATES):
        if support[k] == 0:
            excluded.append(STATE_NAMES[k])
            cls.precision.append(None)
            cls.recall.append(None)
            cls.f1.append(None)
            continue
        p, r, f = precision_recall_f1(int(tp[k]), int(fp[k]), int(fn[k]))
        cls.precision.append(p)
        cls.recall.append(r)
        cls.f1.append(f)
    if excluded:
        warnings.warn(f"classes absent from ground truth, excluded from macro averages: {excluded}", DegenerateInput)

    TP, FP, FN = int(tp.sum()), int(fp.sum()), int(fn.sum())
    micro_p = TP / (TP + FP) if TP + FP else 0.0
    micro_r = TP / (TP + FN) if TP + FN else 0.0
    # count form of 2PR/(P+R); bit-identical to P when FP == FN
    micro_f1 = 2 * TP / (2 * TP + FP + FN) if TP + FP + FN else 0.0

    present = [k for k in range(NUM_STATES) if support[k] > 0]

    def macro(values):
        return float(np.mean([values[k] for k in present])) if present else 0.0

    avg = AverageMetrics(
        micro_p, micro_r, micro_f1,
        macro(cls.precision), macro(cls.recall), macro(cls.f1),
        excluded,
    )
    return cm, cls, avg


# ---------------------------------------------------------------------------
# report


@dataclass
class EvalReport:
    traj: TrajErrorTable
    cdfs: dict[int, ErrorCDF]
    p90: dict[int, float]
    confusion: np.ndarray
    class_metrics: ClassMetrics
    averages: AverageMetrics
    n_windows: int
    notes: list[str] = field(default_factory=list)

    def summary(self) -> dict:
        return {
            "n_windows": self.n_windows,
            "mean_error_m": {f"t+{s}": v for s, v in self.traj.per_second.items()},
            "p90_error_m": {f"t+{s}": v for s, v in self.p90.items()},
            "per_step_mean_error_m": self.traj.per_step.tolist(),
            "confusion": {"classes": list(STATE_NAMES), "counts": self.confusion.tolist()},
            "class_metrics": {
                name: {
                    "precision": self.class_metrics.precision[k],
                    "recall": self.class_metrics.recall[k],
                    "f1": self.class_metrics.f1[k],
                    "support": self.class_metrics.support[k],
                }
                for k, name in enumerate(STATE_NAMES)
            },
            "averages": asdict(self.averages),
            "notes": self.notes,
        }

    def write(self, out_dir) -> list[str]:
        """Write ``report.json``, ``cdf_t{s}.csv``, ``confusion.csv`` and ``metrics.csv``."""
        os.makedirs(out_dir, exist_ok=True)
        written = []

        path = os.path.join(out_dir, "report.json")
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.summary(), fh, indent=2, sort_keys=True)
            fh.write("\n")
        written.append(path)

        for s, cdf in self.cdfs.items():
            path = os.path.join(out_dir, f"cdf_t{s}.csv")
            with open(path, "w", newline="", encoding="utf-8") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["error", "fraction"])
                for e, q in cdf:
                    w.writerow([repr(e), repr(q)])
            written.append(path)

        path = os.path.join(out_dir, "confusion.csv")
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["true\\pred", *STATE_NAMES])
            for name, row in zip(STATE_NAMES, self.confusion.tolist()):
                w.writerow([name, *row])
        written.append(path)

        path = os.path.join(out_dir, "metrics.csv")
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["class", "precision", "recall", "f1", "support"])
            cm = self.class_metrics
            for k, name in enumerate(STATE_NAMES):
                w.writerow([name, _fmt(cm.precision[k]), _fmt(cm.recall[k]), _fmt(cm.f1[k]), cm.support[k]])
            a = self.averages
            w.writerow(["micro", _fmt(a.micro_precision), _fmt(a.micro_recall), _fmt(a.micro_f1), ""])
            w.writerow(["macro", _fmt(a.macro_precision), _fmt(a.macro_recall), _fmt(a.macro_f1), ""])
        written.append(path)
        return written


def _fmt(v):
    return "" if v is None else repr(float(v))


def build_report(traj_pred, traj_true, state_probs, state_true, *, state_counts=None,
                 coord_mode="geodetic", sample_rate_hz=10.0) -> EvalReport:
    """Assemble an :class:`EvalReport` from predictions already in original units."""
    table = trajectory_errors(traj_pred, traj_true, coord_mode, sample_rate_hz)
    cdfs, p90 = {}, {}
    for s in table.per_second:
        cdfs[s] = error_cdf(table.second_errors(s, sample_rate_hz))
        p90[s] = percentile(cdfs[s], 0.9)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", DegenerateInput)
        cm, cls, avg = confusion_and_metrics(state_probs, state_true, state_counts)
    notes = [str(w.message) for w in caught if issubclass(w.category, DegenerateInput)]
    notes.append("trajectory errors pooled per window across flights")
    return EvalReport(table, cdfs, p90, cm, cls, avg, len(table.errors), notes)


def haversine_closed_form_degree() -> float:
    """Length of one degree of arc on the reference sphere."""
    return math.pi * EARTH_RADIUS_M / 180.0
