"""Forecast accuracy metrics and best-performance counting.

RMSE, smoothed MAPE (the denominator is z+1 so zero-count weeks stay
defined), Pearson correlation, and FRQBP: how often each method achieves
the lowest per-region RMSE.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class MetricError(ValueError):
    pass


class UndefinedMetric(MetricError):
    """Raised when a metric has no defined value (e.g. constant-series PCORR)."""


@dataclass
class MetricReport:
    method: str
    resolution: str
    horizon: int
    rmse: float
    mape: float
    pcorr: float | None
    n: int


def _pair(truth, pred):
    truth = np.asarray(truth, dtype=np.float64)
    pred = np.asarray(pred, dtype=np.float64)
    if truth.size == 0:
        raise MetricError("empty inputs")
    if truth.shape != pred.shape:
        raise MetricError(f"length mismatch {truth.shape} vs {pred.shape}")
    return truth, pred


def rmse(truth, pred) -> float:
    truth, pred = _pair(truth, pred)
    return float(np.sqrt(np.mean((truth - pred) ** 2)))


def mape(truth, pred) -> float:
    """Mean absolute percentage error with the smoothed (z + 1) denominator."""
    truth, pred = _pair(truth, pred)
    if np.any(truth < 0):
        raise MetricError("MAPE smoothing assumes non-negative truth counts")
    return float(np.mean(np.abs((truth - pred) / (truth + 1.0))) * 100.0)


def pcorr(truth, pred) -> float:
    """Sample Pearson correlation; constant inputs are an explicit error."""
    truth, pred = _pair(truth, pred)
    if truth.size < 2:
        raise MetricError("correlation needs at least two points")
    dt = truth - truth.mean()
    dp = pred - pred.mean()
    st = np.sqrt((dt * dt).sum())
    sp = np.sqrt((dp * dp).sum())
    if st == 0 or sp == 0:
        raise UndefinedMetric("correlation undefined for constant input")
    return float((dt * dp).sum() / (st * sp))


def frqbp(region_rmse: dict, method_order) -> dict:
    """Count, per region and horizon, which method has the lowest RMSE.

    ``region_rmse`` maps (region, horizon) to {method: rmse}. Ties go to
    the earliest method in ``method_order``. Counts over all (region,
    horizon) cells sum to the number of cells.
    """
    method_order = list(method_order)
    counts = {m: 0 for m in method_order}
    for key, scores in region_rmse.items():
        missing = [m for m in scores if m not in counts]
        if missing:
            raise MetricError(f"methods {missing} not in the canonical order list")
        if not scores:
            raise MetricError(f"no scores for {key}")
        best = min(scores, key=lambda m: (scores[m], method_order.index(m)))
        counts[best] += 1
    return counts
