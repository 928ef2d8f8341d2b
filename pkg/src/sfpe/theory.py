"""Closed-form tail constants and numerical checks of their preconditions.

Covers: the regime constants for the affine recursion (B-dominated,
A-dominated, comparable-tail independent, general one-step functional, signed
two-sided), the worked two-input example constants, membership-style checks
for exponential-tilt convolution classes, convolution-limit and
product-convolution diagnostics, and uniformity of regular variation.

All tail-ratio targets are normalized by a single declared reference tail
(P[A > t], except the B-dominated regime which uses P[B > t]).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .dist import Constant, TailModel

__all__ = [
    "Prediction",
    "predictions_to_csv",
    "grey_constant",
    "kevei_constant",
    "affine_constant",
    "indep_constant",
    "ifs_constants",
    "example_constants",
    "predict",
    "salpha_check_dom",
    "salpha_check_convex",
    "convolution_tail",
    "convolution_limit_check",
    "appendix_smallint_diagnostic",
    "product_convolution_check",
    "rv_uniformity_check",
]


class PreconditionError(ValueError):
    """Inputs violate the regime's standing assumptions."""


@dataclass(frozen=True)
class Prediction:
    regime: str
    constant: float
    reference: str  # which marginal tail normalizes the ratio: "A" or "B"
    inputs: dict = field(default_factory=dict)

    def csv_row(self) -> str:
        return (
            f"{self.regime},{self.constant!r},{self.reference},"
            f"{json.dumps(self.inputs, sort_keys=True)}"
        )


def predictions_to_csv(preds) -> str:
    lines = ["regime,constant,reference,inputs_json"]
    lines.extend(p.csv_row() for p in preds)
    return "\n".join(lines) + "\n"


# --- regime constants -------------------------------------------------------

def grey_constant(e_a_alpha: float) -> float:
    """B-tail-dominated regime: P[X>t] ~ P[B>t] / (1 - E[A^alpha])."""
    if not 0.0 <= e_a_alpha < 1.0:
        raise PreconditionError("Cramér boundary: need E[A^alpha] in [0, 1)")
    return 1.0 / (1.0 - e_a_alpha)


def kevei_constant(e_x_alpha: float, e_a_alpha: float) -> float:
    """A-tail-dominated regime: P[X>t] ~ E[X^alpha]/(1-E[A^alpha]) P[A>t]."""
    if not 0.0 <= e_a_alpha < 1.0:
        raise PreconditionError("Cramér boundary: need E[A^alpha] in [0, 1)")
    if e_x_alpha < 0.0:
        raise PreconditionError("E[X^alpha] must be >= 0")
    return e_x_alpha / (1.0 - e_a_alpha)


def affine_constant(xi_plus: float, mu_plus: float) -> float:
    """General one-step functional: P[X>t] ~ xi_+/(1-mu_+) P[A>t]; the left
    tail uses xi_- in the numerator."""
    if not 0.0 <= mu_plus < 1.0:
        raise PreconditionError("need mu_+ in [0, 1)")
    return xi_plus / (1.0 - mu_plus)


def indep_constant(e_xplus_alpha: float, c_b: float, e_a_alpha: float) -> float:
    """Independent comparable-tail regime:
    P[X>t] ~ (E[X_+^alpha] + c_B)/(1 - E[A^alpha]) P[A>t]."""
    if not 0.0 <= e_a_alpha < 1.0:
        raise PreconditionError("Cramér boundary: need E[A^alpha] in [0, 1)")
    if e_xplus_alpha < 0.0 or c_b < 0.0:
        raise PreconditionError("moments must be >= 0")
    return (e_xplus_alpha + c_b) / (1.0 - e_a_alpha)


def ifs_constants(mu_plus, mu_minus, xi_plus, xi_minus):
    """Two-sided constants (D+, D-) solving
    D+ = mu_+ D+ + mu_- D- + xi_+, D- = mu_+ D- + mu_- D+ + xi_-.

    Returns the closed form and cross-checks it against an independent 2x2
    linear solve to 1e-12 relative."""
    if mu_plus < 0.0 or mu_minus < 0.0:
        raise PreconditionError("mu_+ and mu_- must be >= 0")
    if mu_plus + mu_minus >= 1.0:
        raise PreconditionError("contraction violated: mu_+ + mu_- >= 1")
    det = (1.0 - mu_plus - mu_minus) * (1.0 - mu_plus + mu_minus)
    d_plus = ((1.0 - mu_plus) * xi_plus + mu_minus * xi_minus) / det
    d_minus = ((1.0 - mu_plus) * xi_minus + mu_minus * xi_plus) / det
    mat = np.array([[1.0 - mu_plus, -mu_minus], [-mu_minus, 1.0 - mu_plus]])
    sol = np.linalg.solve(mat, np.array([xi_plus, xi_minus]))
    scale = max(abs(d_plus), abs(d_minus), 1.0)
    if abs(sol[0] - d_plus) > 1e-12 * scale or abs(sol[1] - d_minus) > 1e-12 * scale:
        raise ArithmeticError("closed form disagrees with the linear solve")
    return d_plus, d_minus


def example_constants(mu: float, sigma: float):
    """The two-input example with identical marginals Z, alpha = 2,
    mu = E[Z], sigma = E[Z^2]: constants for the independent input
    (d1) and the pathwise-equal input (d2).

    d1 = (2 mu^3 - mu + 1) / ((1-mu)(1-sigma)^2) follows from the moment
    identity E[X^2](1-sigma) = (2 mu^3 + sigma(1-mu))/(1-mu) and
    d1 = (E[X^2]+1)/(1-sigma).  For the equal input the same route gives
    E[(X+1)^2] = (1+mu)/((1-mu)(1-sigma)) and hence
    d2 = (1 + mu) / ((1-mu)(1-sigma)^2).
    """
    if not (0.0 < mu < 1.0 and 0.0 < sigma < 1.0):
        raise PreconditionError("need mu, sigma in (0, 1)")
    denom = (1.0 - mu) * (1.0 - sigma) ** 2
    d1 = (2.0 * mu**3 - mu + 1.0) / denom
    d2 = (1.0 + mu) / denom
    return d1, d2


_REGIMES = {
    "grey": (grey_constant, ("e_a_alpha",), "B"),
    "kevei": (kevei_constant, ("e_x_alpha", "e_a_alpha"), "A"),
    "affine": (affine_constant, ("xi_plus", "mu_plus"), "A"),
    "indep": (indep_constant, ("e_xplus_alpha", "c_b", "e_a_alpha"), "A"),
}


def predict(regime: str, **inputs):
    """Build Prediction rows for a named regime; `ifs` and `example` yield
    two rows (right/left tails resp. the two dependence structures)."""
    if regime in _REGIMES:
        fn, keys, ref = _REGIMES[regime]
        args = [inputs[k] for k in keys]
        return [Prediction(regime, fn(*args), ref, dict(zip(keys, args)))]
    if regime == "ifs":
        keys = ("mu_plus", "mu_minus", "xi_plus", "xi_minus")
        args = [inputs[k] for k in keys]
        dp, dm = ifs_constants(*args)
        inp = dict(zip(keys, args))
        return [
            Prediction("ifs_right", dp, "A", inp),
            Prediction("ifs_left", dm, "A", inp),
        ]
    if regime == "example":
        d1, d2 = example_constants(inputs["mu"], inputs["sigma"])
        inp = {"mu": inputs["mu"], "sigma": inputs["sigma"]}
        return [
            Prediction("example_d1", d1, "A", inp),
            Prediction("example_d2", d2, "A", inp),
        ]
    raise ValueError(f"unknown regime {regime!r}")


# --- exponential-tilt class checks -----------------------------------------

def _tilted(log_tail, alpha):
    """K(t) = e^{alpha t} S(t) and log K, evaluated stably in log space."""

    def lk(t):
        t = np.asarray(t, dtype=float)
        return alpha * t + np.asarray(log_tail.log_survival(t), dtype=float)

    def k(t):
        return np.exp(lk(t))

    return k, lk


@dataclass(frozen=True)
class DomReport:
    shift_dev: dict
    doubling_min: float
    integral_increment: float
    pass_shift: bool
    pass_doubling: bool
    pass_integral: bool

    @property
    def passed(self):
        return self.pass_shift and self.pass_doubling and self.pass_integral


def salpha_check_dom(log_tail, alpha: float, x_max: float = 1e6) -> DomReport:
    """Numeric membership check via the tilted tail K(t) = e^{alpha t} S(t):
    (i) K(x-y)/K(x) -> 1 for y in {1, 2} (deviation < 2% at the largest x),
    (ii) K(2x)/K(x) bounded away from 0 at large x,
    (iii) the integral of K converges (relative increment of the last
    doubling below 1%)."""
    k, lk = _tilted(log_tail, alpha)
    low = log_tail.support_low
    xs = np.geomspace(max(low, 1.0) * 4.0, x_max, 25)
    shift_dev = {}
    for y in (1.0, 2.0):
        dev = np.abs(np.exp(lk(xs - y) - lk(xs)) - 1.0)
        shift_dev[y] = float(dev[-1])
    pass_shift = all(v < 0.02 for v in shift_dev.values())
    top = xs[xs >= xs[-1] ** 0.5]
    doubling = np.exp(lk(2.0 * top) - lk(top))
    doubling_min = float(doubling.min())
    pass_doubling = doubling_min > 1e-4

    # doubling-window trapezoid integrals of K; convergence means the last
    # window contributes under 1% of the running total
    edges = low + np.array([0.0] + [2.0**j for j in range(0, 22)])
    total = 0.0
    increment = math.inf
    for a, b in zip(edges[:-1], edges[1:]):
        grid = np.linspace(a, b, 513)
        piece = float(np.trapezoid(k(grid), grid))
        total += piece
        increment = piece / total if total > 0 else math.inf
    pass_integral = increment < 0.01
    return DomReport(
        shift_dev, doubling_min, increment, pass_shift, pass_doubling, pass_integral
    )


@dataclass(frozen=True)
class ConvexReport:
    concave_from: float
    f_ok_from: float
    sup_dev_final: float
    sup_dev_decreasing: bool
    xk_final: float
    xk_decreasing: bool
    scale: float

    @property
    def passed(self):
        return (
            math.isfinite(self.concave_from)
            and math.isfinite(self.f_ok_from)
            and self.sup_dev_decreasing
            and self.sup_dev_final < 0.05
            and self.xk_decreasing
            and self.xk_final < 0.05
        )


def salpha_check_convex(log_tail, alpha: float, gamma: float) -> ConvexReport:
    """Membership check for stretched-exponential-type corrections.

    Uses the witness function f(x) = (s log x)^{1/gamma} with s large enough
    that x K(f(x)) -> 0 (the corollary only requires existence of some f).
    Checks, each "eventually" on the grid: concavity of -log K, f(x) <= x/2
    with f -> infinity, sup_{y <= f(x)} |K(x-y)/K(x) - 1| -> 0, and
    x K(f(x)) -> 0."""
    if not 0.0 < gamma < 1.0:
        raise PreconditionError("need gamma in (0, 1)")
    k, lk = _tilted(log_tail, alpha)
    low = log_tail.support_low

    # (a) eventual concavity of -log K on a uniform grid
    t = np.linspace(low + 0.5, 1e4, 2001)
    neg_log_k = -lk(t)
    d2 = np.diff(neg_log_k, 2)
    bad = np.nonzero(d2 > 1e-9)[0]
    concave_from = float(t[bad[-1] + 2]) if bad.size else float(t[0])
    if bad.size and bad[-1] + 2 >= t.size - 10:
        concave_from = math.inf  # not concave even at the grid's end

    scale = max(2.0, 2.0 / getattr(log_tail, "beta", 1.0))
    xs = np.geomspace(1e2, 1e12, 21)
    fx = (scale * np.log(xs)) ** (1.0 / gamma)

    # (b) f(x) <= x/2 from some point on, and f increasing to infinity
    ok = fx <= xs / 2.0
    grow = np.all(np.diff(fx) > 0)
    idx = np.nonzero(~ok)[0]
    if idx.size and idx[-1] >= xs.size - 3:
        f_ok_from = math.inf
    else:
        f_ok_from = float(xs[idx[-1] + 1]) if idx.size else float(xs[0])
    if not grow:
        f_ok_from = math.inf

    # (c) sup_{0 < y <= f(x)} |K(x-y)/K(x) - 1|
    frac = np.linspace(1e-3, 1.0, 200)
    sup_dev = np.empty(xs.size)
    for i, (x, f) in enumerate(zip(xs, fx)):
        y = frac * min(f, x / 2.0)
        sup_dev[i] = float(np.max(np.abs(np.exp(lk(x - y) - lk(x)) - 1.0)))
    tail_part = sup_dev[-5:]
    sup_dec = bool(np.all(np.diff(tail_part) <= 1e-12))

    # (d) x K(f(x)) -> 0
    xk = xs * k(fx)
    xk_tail = xk[-5:]
    xk_dec = bool(np.all(np.diff(xk_tail) < 0))
    return ConvexReport(
        concave_from,
        f_ok_from,
        float(sup_dev[-1]),
        sup_dec,
        float(xk[-1]),
        xk_dec,
        scale,
    )


# --- convolution diagnostics ------------------------------------------------

def convolution_tail(g1, g2, t: float, n_grid: int = 400_000) -> float:
    """P[X + Y > t] for independent X ~ g1, Y ~ g2 by Stieltjes quadrature.

    Weights are survival-function differences (never CDF differences: when
    S < 1e-16 the CDF rounds to 1.0 and the tail mass vanishes from the
    quadrature, which visibly corrupts the ratio targets here)."""
    low1, low2 = g1.support_low, g2.support_low
    hi = t - low2
    if hi <= low1:
        return 1.0
    x = np.linspace(low1, hi, n_grid + 1)
    s1 = np.asarray(g1.survival(x), dtype=float)
    w = s1[:-1] - s1[1:]
    mid = 0.5 * (x[:-1] + x[1:])
    s2 = np.asarray(g2.survival(t - mid), dtype=float)
    return float(s1[-1] + np.dot(w, s2))


@dataclass(frozen=True)
class TrajectoryReport:
    t_list: np.ndarray
    estimates: np.ndarray
    target: float
    final_ok: bool
    monotone_ok: bool
    se: np.ndarray | None = None

    @property
    def passed(self):
        return self.final_ok and self.monotone_ok


def _trend_ok(estimates, target):
    """Last three absolute deviations from the target non-increasing."""
    dev = np.abs(np.asarray(estimates) - target)
    tail_part = dev[-3:]
    return bool(np.all(np.diff(tail_part) <= 1e-12 + 1e-9 * np.abs(tail_part[:-1])))


def convolution_limit_check(
    g1, g2, f_ref, k1: float, k2: float, alpha: float, t_list, tol: float = 0.05
) -> TrajectoryReport:
    """Ratio of the two-fold convolution tail to a reference tail against the
    limit k1 m_alpha(G2) + k2 m_alpha(G1)."""
    m1 = g1.exp_moment(alpha)
    m2 = g2.exp_moment(alpha)
    for name, m in (("G1", m1), ("G2", m2)):
        if not math.isfinite(m):
            raise PreconditionError(f"exponential moment of {name} is not finite")
    target = k1 * m2 + k2 * m1
    t_list = np.asarray(t_list, dtype=float)
    est = np.array(
        [convolution_tail(g1, g2, t) / float(f_ref.survival(t)) for t in t_list]
    )
    final_ok = abs(est[-1] - target) <= tol * target
    return TrajectoryReport(t_list, est, target, final_ok, _trend_ok(est, target))


def appendix_smallint_diagnostic(f_model, alpha: float, v_list, x_list, n_grid=200_000):
    """Matrix I(v, x) of the normalized middle-range convolution integrals
    int_v^{x-v} S(x-y)/S(x) dF(y).

    For convolution-equivalent F the integrals stabilize in x for each fixed
    v and the stabilized values decrease to 0 as v grows."""
    v_list = np.asarray(v_list, dtype=float)
    x_list = np.asarray(x_list, dtype=float)
    low = f_model.support_low
    out = np.zeros((v_list.size, x_list.size))
    for i, v in enumerate(v_list):
        for j, x in enumerate(x_list):
            lo = max(v, low)
            hi = x - v
            if hi <= lo:
                continue
            y = np.linspace(lo, hi, n_grid + 1)
            s = np.asarray(f_model.survival(y), dtype=float)
            w = s[:-1] - s[1:]
            mid = 0.5 * (y[:-1] + y[1:])
            sx = float(f_model.survival(x))
            out[i, j] = float(np.dot(w, f_model.survival(x - mid)) / sx)
    if x_list.size >= 2:
        stabilized = bool(
            np.all(
                np.abs(out[:, -1] - out[:, -2])
                <= 0.05 * np.maximum(out[:, -1], 1e-300)
            )
        )
    else:
        stabilized = False  # cannot judge stabilization from one x
    v_monotone = bool(np.all(np.diff(out[:, -1]) <= 1e-12))
    return out, stabilized, v_monotone


def product_convolution_check(
    a_model: TailModel,
    alpha: float,
    t_list,
    n_mc: int,
    rng: np.random.Generator,
    tol: float = 0.25,
) -> TrajectoryReport:
    """Trajectory of P[A A' > t]/P[A > t] versus the limit 2 E[A^alpha].

    The probability is estimated by conditioning on one factor:
    P[A A' > t] = E[S_A(t / A')], which is exact in the heavy factor and
    far lower-variance than the product indicator."""
    if isinstance(a_model, Constant):
        raise PreconditionError("point mass is not regularly varying")
    target = 2.0 * a_model.alpha_moment(alpha)
    t_list = np.asarray(t_list, dtype=float)
    a = a_model.sample(n_mc, rng)
    est = np.empty(t_list.size)
    se = np.empty(t_list.size)
    for i, t in enumerate(t_list):
        cond = np.asarray(a_model.survival(t / a), dtype=float)
        ref = float(a_model.survival(t))
        est[i] = cond.mean() / ref
        se[i] = cond.std(ddof=1) / math.sqrt(n_mc) / ref
    if not math.isfinite(target):
        return TrajectoryReport(t_list, est, target, False, False, se)
    final_ok = abs(est[-1] - target) <= tol * target
    return TrajectoryReport(t_list, est, target, final_ok, _trend_ok(est, target), se)


@dataclass(frozen=True)
class UniformityReport:
    t_list: np.ndarray
    sup_dev: np.ndarray
    strictly_decreasing: bool
    below_threshold: bool


def rv_uniformity_check(
    a_model: TailModel, alpha: float, c: float, t_list, threshold: float = 1e-2
) -> UniformityReport:
    """sup_{y > c} |P[A > y t]/P[A > t] - y^{-alpha}| along t_list.

    For a pure power tail the deviation is float-exact 0 once c t clears the
    support edge.  With a slowly varying correction the supremum is dominated
    by y near c and decays only logarithmically, so the threshold flag is
    reported, not asserted."""
    if c <= 0.0:
        raise PreconditionError("need c > 0")
    t_list = np.asarray(t_list, dtype=float)
    y = np.geomspace(c, 1e3, 4001)[1:]  # open at c
    dev = np.empty(t_list.size)
    for i, t in enumerate(t_list):
        ratio = np.asarray(a_model.survival(y * t), dtype=float) / float(
            a_model.survival(t)
        )
        dev[i] = float(np.max(np.abs(ratio - y ** (-alpha))))
    dec = bool(np.all(np.diff(dev) < 0.0))
    return UniformityReport(t_list, dev, dec, bool(dev[-1] < threshold))
