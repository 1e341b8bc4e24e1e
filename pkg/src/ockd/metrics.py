"""Biometric error rates, ROC and threshold selection.

Scores are attack-high: a sample is accepted as genuine when its score is
strictly below the threshold and rejected as an attack otherwise.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.stats import rankdata

from .errors import MetricError


def _split(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise MetricError("scores and labels must be 1-D of equal length")
    gen = scores[labels == 0]
    att = scores[labels == 1]
    if gen.size == 0 or att.size == 0:
        raise MetricError("both genuine and attack scores are required")
    return gen, att


def rates_at(scores, labels, threshold: float) -> tuple[float, float]:
    """(FAR, FRR): attacks accepted and genuine samples rejected at ``threshold``."""
    gen, att = _split(scores, labels)
    far = float(np.count_nonzero(att < threshold)) / att.size
    frr = float(np.count_nonzero(gen >= threshold)) / gen.size
    return far, frr


def hter(scores, labels, threshold: float) -> float:
    far, frr = rates_at(scores, labels, threshold)
    return (far + frr) / 2


def apcer_bpcer(scores, labels, threshold: float) -> tuple[float, float]:
    # identical to (FAR, FRR) under the strict-below acceptance rule
    return rates_at(scores, labels, threshold)


def acer(scores, labels, threshold: float) -> float:
    apcer, bpcer = apcer_bpcer(scores, labels, threshold)
    return (apcer + bpcer) / 2


def auc(scores, labels) -> float:
    """Probability that an attack outscores a genuine sample, ties counting half."""
    gen, att = _split(scores, labels)
    ranks = rankdata(np.concatenate([gen, att]))
    r_att = ranks[gen.size:].sum()
    return float((r_att - att.size * (att.size + 1) / 2) / (att.size * gen.size))


def threshold_candidates(scores) -> np.ndarray:
    """-inf, midpoints between adjacent distinct scores, +inf (ascending)."""
    u = np.unique(np.asarray(scores, dtype=np.float64))
    mids = (u[:-1] + u[1:]) / 2
    return np.concatenate([[-np.inf], mids, [np.inf]])


def hter_curve(scores, labels, candidates) -> np.ndarray:
    gen, att = _split(scores, labels)
    gs, as_ = np.sort(gen), np.sort(att)
    c = np.asarray(candidates, dtype=np.float64)
    far = np.searchsorted(as_, c, side="left") / as_.size
    frr = (gs.size - np.searchsorted(gs, c, side="left")) / gs.size
    return (far + frr) / 2


def select_threshold_optimal(scores, labels) -> float:
    """Candidate threshold with minimum HTER on the given scores; smallest on ties."""
    cands = threshold_candidates(scores)
    h = hter_curve(scores, labels, cands)
    return float(cands[int(np.argmin(h))])


def select_threshold_frr(genuine_scores, target_frr: float = 0.10) -> float:
    """Smallest threshold rejecting at most ``target_frr`` of the genuine scores.

    Candidates are the distinct scores themselves plus the float just above
    the maximum, so the answer always exists.
    """
    g = np.sort(np.asarray(genuine_scores, dtype=np.float64))
    if g.size == 0:
        raise MetricError("no genuine validation scores")
    if not (0 <= target_frr <= 1):
        raise MetricError(f"target FRR must be in [0, 1], got {target_frr}")
    cands = np.append(np.unique(g), np.nextafter(g[-1], np.inf))
    frr = (g.size - np.searchsorted(g, cands, side="left")) / g.size
    ok = np.flatnonzero(frr <= target_frr + 1e-12)
    return float(cands[ok[0]])


def roc(scores, labels) -> list[tuple[float, float]]:
    """(FDR, TDR) points: genuine rejected vs attacks detected, from strict to lax."""
    gen, att = _split(scores, labels)
    thresholds = np.concatenate([[np.inf], np.unique(np.concatenate([gen, att]))[::-1]])
    gs, as_ = np.sort(gen), np.sort(att)
    fdr = (gs.size - np.searchsorted(gs, thresholds, side="left")) / gs.size
    tdr = (as_.size - np.searchsorted(as_, thresholds, side="left")) / as_.size
    return list(zip(fdr.tolist(), tdr.tolist()))


def roc_area(points) -> float:
    pts = np.asarray(points, dtype=np.float64)
    return float(np.sum(np.diff(pts[:, 0]) * (pts[1:, 1] + pts[:-1, 1]) / 2))


@dataclass
class EvalReport:
    threshold: float
    far: float
    frr: float
    hter: float
    apcer: float
    bpcer: float
    acer: float
    auc: float
    roc: list[tuple[float, float]] = field(default_factory=list, repr=False)

    METRICS = ("threshold", "far", "frr", "hter", "apcer", "bpcer", "acer", "auc")

    def rows(self) -> list[tuple[str, float]]:
        return [(m, getattr(self, m)) for m in self.METRICS]

    def write_csv(self, path) -> Path:
        path = Path(path)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["metric", "value"])
            for m, v in self.rows():
                w.writerow([m, repr(float(v))])
        return path

    def write_roc_csv(self, path) -> Path:
        path = Path(path)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["fdr", "tdr"])
            for x, y in self.roc:
                w.writerow([repr(float(x)), repr(float(y))])
        return path

    @classmethod
    def read_csv(cls, path) -> "EvalReport":
        with open(path, newline="", encoding="utf-8") as fh:
            vals = {row["metric"]: float(row["value"]) for row in csv.DictReader(fh)}
        return cls(**{m: vals[m] for m in cls.METRICS})


def evaluate(scores, labels, threshold: float) -> EvalReport:
    far, frr = rates_at(scores, labels, threshold)
    return EvalReport(
        threshold=float(threshold),
        far=far,
        frr=frr,
        hter=(far + frr) / 2,
        apcer=far,
        bpcer=frr,
        acer=(far + frr) / 2,
        auc=auc(scores, labels),
        roc=roc(scores, labels),
    )


def mean_std(values) -> tuple[float, float]:
    """Mean and sample standard deviation (n - 1), as used for per-client summaries."""
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        raise MetricError("no values to aggregate")
    std = float(np.std(v, ddof=1)) if v.size > 1 else 0.0
    return float(np.mean(v)), std if not math.isnan(std) else 0.0
