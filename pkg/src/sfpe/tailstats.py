"""Empirical tail estimation.

Survival curves with Wilson confidence intervals, tail-ratio curves against a
reference survival function, the Hill tail-index estimator and plug-in moment
functionals with jackknife standard errors.
"""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np

from .dist import TailModel
from .engine import SampleBatch, smoothed_tail

__all__ = [
    "TailEstimate",
    "RatioCurve",
    "wilson_interval",
    "ecdf_survival",
    "smoothed_survival",
    "ratio_curve",
    "hill",
    "plugin_moment",
    "default_grid",
    "reliable_index",
    "estimate_to_csv",
]

_Z95 = 1.959963984540054  # two-sided 95% normal quantile

RELIABLE_EXCEED = 300


@dataclass
class TailEstimate:
    t_grid: np.ndarray
    p_hat: np.ndarray
    ci_lo: np.ndarray
    ci_hi: np.ndarray
    n_exceed: np.ndarray
    n_total: int


@dataclass
class RatioCurve:
    t_grid: np.ndarray
    ratio: np.ndarray
    ci_lo: np.ndarray
    ci_hi: np.ndarray
    ref_tail: np.ndarray


def wilson_interval(k, n, z=_Z95):
    """Wilson score interval for a binomial proportion; vectorized in k."""
    k = np.asarray(k, dtype=float)
    p = k / n
    denom = 1.0 + z * z / n
    center = (p + z * z / (2 * n)) / denom
    half = (z / denom) * np.sqrt(p * (1.0 - p) / n + z * z / (4.0 * n * n))
    lo = np.where(k == 0, 0.0, np.clip(center - half, 0.0, 1.0))
    hi = np.where(k == n, 1.0, np.clip(center + half, 0.0, 1.0))
    return lo, hi


def _values(batch):
    v = batch.values if isinstance(batch, SampleBatch) else np.asarray(batch, float)
    if v.size == 0:
        raise ValueError("empty batch")
    return v


def ecdf_survival(batch, t_grid) -> TailEstimate:
    """p_hat(t) = #{x_i > t} / N with 95% Wilson intervals; one pass over
    sorted data."""
    values = _values(batch)
    t = np.asarray(t_grid, dtype=float)
    if t.size > 1 and not np.all(np.diff(t) > 0):
        raise ValueError("t_grid must be strictly increasing")
    srt = np.sort(values)
    n = srt.size
    n_exceed = n - np.searchsorted(srt, t, side="right")
    p_hat = n_exceed / n
    lo, hi = wilson_interval(n_exceed, n)
    return TailEstimate(t, p_hat, lo, hi, n_exceed, n)


def smoothed_survival(batch, coeff, kind, t_grid, side=+1) -> TailEstimate:
    """Like ecdf_survival but each point is the smoothed one-step estimator;
    normal-approximation CIs from its (much smaller) standard error.
    n_exceed is the indicator-equivalent count round(p_hat * N)."""
    t = np.asarray(t_grid, dtype=float)
    p = np.empty(t.shape)
    se = np.empty(t.shape)
    for i, ti in enumerate(t):
        p[i], se[i] = smoothed_tail(batch, coeff, kind, float(ti), side=side)
    lo = np.clip(p - _Z95 * se, 0.0, 1.0)
    hi = np.clip(p + _Z95 * se, 0.0, 1.0)
    n = batch.values.size
    return TailEstimate(t, p, lo, hi, np.rint(p * n).astype(int), n)


def ratio_curve(est: TailEstimate, ref) -> RatioCurve:
    """Empirical tail divided by a reference tail; CIs scaled identically.

    ref may be a TailModel or any callable t -> survival."""
    sref = ref.survival(est.t_grid) if isinstance(ref, TailModel) else ref(est.t_grid)
    sref = np.asarray(sref, dtype=float)
    if np.any(sref <= 0.0):
        raise ValueError("reference survival must be positive on the grid")
    return RatioCurve(
        est.t_grid, est.p_hat / sref, est.ci_lo / sref, est.ci_hi / sref, sref
    )


def hill(batch, k: int) -> float:
    """Hill estimator from the k largest order statistics."""
    values = _values(batch)
    if k < 1:
        raise ValueError("k must be >= 1")
    if values.size < k + 1:
        raise ValueError("need at least k+1 samples")
    top = np.partition(values, values.size - (k + 1))[-(k + 1):]
    top.sort()
    pivot = top[0]
    if pivot <= 0.0:
        raise ValueError("Hill estimator needs the k+1 largest samples positive")
    mean_log = float(np.mean(np.log(top[1:] / pivot)))
    if mean_log <= 0.0:
        raise ValueError("degenerate tail")
    return 1.0 / mean_log


def plugin_moment(batch, g):
    """Sample mean of g(x_i) with jackknife standard error.

    g is a callable (vectorized); see pow_plus/pow_minus and the closed-form
    one-step functionals in `maps` for the usual choices."""
    values = _values(batch)
    gx = np.asarray(g(values), dtype=float)
    if not np.all(np.isfinite(gx)):
        raise ValueError("moment estimate non-finite; check the tail index")
    n = gx.size
    mean = float(gx.mean())
    # leave-one-out jackknife; for the plain mean this reduces to std/sqrt(n)
    if n > 1:
        loo = (n * mean - gx) / (n - 1)
        se = float(np.sqrt((n - 1) / n * np.sum((loo - loo.mean()) ** 2)))
    else:
        se = 0.0
    return mean, se


def pow_plus(alpha):
    return lambda x: np.maximum(np.asarray(x, float), 0.0) ** alpha


def pow_minus(alpha):
    return lambda x: np.maximum(-np.asarray(x, float), 0.0) ** alpha


def default_grid(batch, lo_quantile=0.99, hi_exceed=RELIABLE_EXCEED, points=20):
    """Geometric grid from the empirical lo-quantile to the point where
    hi_exceed samples remain above."""
    values = _values(batch)
    srt = np.sort(values)
    n = srt.size
    lo = float(srt[min(int(lo_quantile * n), n - 1)])
    hi = float(srt[max(n - hi_exceed - 1, 0)])
    if not (0.0 < lo < hi):
        raise ValueError("cannot build a geometric grid: need 0 < lo < hi")
    return np.geomspace(lo, hi, points)


def reliable_index(est: TailEstimate, min_exceed=RELIABLE_EXCEED):
    """Index of the largest grid point with n_exceed >= min_exceed."""
    ok = np.nonzero(est.n_exceed >= min_exceed)[0]
    if ok.size == 0:
        raise ValueError(f"no grid point has n_exceed >= {min_exceed}")
    return int(ok[-1])


def estimate_to_csv(est: TailEstimate, curve: RatioCurve) -> str:
    buf = io.StringIO()
    buf.write("t,p_hat,ci_lo,ci_hi,n_exceed,ref_tail,ratio,ratio_ci_lo,ratio_ci_hi\n")
    for i in range(est.t_grid.size):
        row = [
            est.t_grid[i], est.p_hat[i], est.ci_lo[i], est.ci_hi[i],
            int(est.n_exceed[i]), curve.ref_tail[i], curve.ratio[i],
            curve.ci_lo[i], curve.ci_hi[i],
        ]
        buf.write(",".join(repr(float(v)) if not isinstance(v, int) else str(v) for v in row))
        buf.write("\n")
    return buf.getvalue()
