"""Random Lipschitz map families and their coefficient laws.

A map family fixes a functional form (affine, max-affine, positive-part
affine, sqrt-log) together with the joint law of its coefficients.  Every
family decomposes as x -> A x + Phi(x) with |Phi(x)| <= envelope * phi(|x|),
which is what the tail machinery in `theory` consumes.  Closed-form one-step
tail functionals f+ / f- are provided for the dependence structures that
admit them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dist import TailModel

__all__ = [
    "CoeffLaw",
    "MapFamily",
    "RealizedMap",
    "NoClosedFormError",
    "draw_coeffs",
    "draw_map",
    "f_plus",
    "f_minus",
    "f_bound_check",
    "elton_precheck",
]

INDEPENDENT = "independent"
EQUAL = "equal"
SIGNED = "signed"

AFFINE = "affine"
MAX_AFFINE = "max_affine"
POS_PART_AFFINE = "pos_part_affine"
SQRT_LOG = "sqrt_log"

_KINDS = (AFFINE, MAX_AFFINE, POS_PART_AFFINE, SQRT_LOG)


class NoClosedFormError(ValueError):
    """Requested (kind, dependence) combination has no closed form; use
    empirical f+/- via simulation."""


@dataclass(frozen=True)
class CoeffLaw:
    """Joint law of (A, B).

    dependence:
      independent -- A and B drawn independently from their marginals.
      equal       -- A = B pathwise (c_b is 1 by construction).
      signed      -- A = eps * W with P[eps = +1] = p_plus, W ~ marginal_a,
                     eps independent of (W, B).

    c_b is the tail-ratio constant lim P[B > t] / P[W > t] against the
    unsigned marginal of A.  For positive A this is lim P[B > t] / P[A > t];
    for signed A the reference tail is P[A > t] = p_plus * P[W > t] and the
    closed-form f+/- rescale accordingly.
    """

    marginal_a: TailModel
    marginal_b: TailModel
    dependence: str = INDEPENDENT
    p_plus: float = 1.0
    c_b: float = 0.0

    def __post_init__(self):
        if self.dependence not in (INDEPENDENT, EQUAL, SIGNED):
            raise ValueError(f"unknown dependence {self.dependence!r}")
        if self.dependence == SIGNED and not (0.0 < self.p_plus <= 1.0):
            raise ValueError("signed dependence requires p_plus in (0, 1]")
        if self.dependence == EQUAL:
            object.__setattr__(self, "marginal_b", self.marginal_a)
            object.__setattr__(self, "c_b", 1.0)
        if self.c_b < 0:
            raise ValueError("c_b must be >= 0")

    def a_tail(self, t):
        """P[A > t], the reference tail for every ratio in this package."""
        s = self.marginal_a.survival(t)
        return self.p_plus * s if self.dependence == SIGNED else s


@dataclass(frozen=True)
class MapFamily:
    """One of the supported Psi families with its coefficient law.

    extra pieces: pos_part_affine carries a lower bound b > 0 with B > -b;
    sqrt_log carries a third nonnegative coefficient C with tail constant c_c.
    """

    kind: str
    coeff: CoeffLaw
    b_lower: float = 0.0
    marginal_c: TailModel | None = None
    c_c: float = 0.0

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError(f"unknown map kind {self.kind!r}")
        if self.kind == POS_PART_AFFINE and not self.b_lower > 0:
            raise ValueError("pos_part_affine requires a lower bound b > 0")
        if self.kind == SQRT_LOG and self.marginal_c is None:
            raise ValueError("sqrt_log requires a third coefficient law")


def _sqrtlog(x):
    x = np.asarray(x, dtype=float)
    return np.sqrt(np.maximum(x, 0.0)) * np.log(np.maximum(x, 1.0))


@dataclass(frozen=True)
class RealizedMap:
    """A drawn map together with its coefficients (exposed for smoothing)."""

    kind: str
    a: float
    b: float
    c: float = 0.0
    b_lower: float = 0.0

    def __call__(self, x):
        return apply_map(self.kind, self.a, self.b, self.c, x)

    @property
    def lipschitz(self):
        if self.kind == SQRT_LOG:
            # Lip(sqrt(x+) log+ x) = 1, attained at x = 1
            return abs(self.a) + abs(self.b)
        return abs(self.a)

    def envelope(self):
        """(coefficient, phi) with |Psi(x) - A x| <= coefficient * phi(|x|)."""
        if self.kind == AFFINE:
            return abs(self.b), lambda x: np.ones_like(np.asarray(x, float))
        if self.kind == MAX_AFFINE:
            return self.b, lambda x: np.ones_like(np.asarray(x, float))
        if self.kind == POS_PART_AFFINE:
            return self.a * self.b_lower + self.b, lambda x: np.ones_like(
                np.asarray(x, float)
            )
        return self.b + self.c, lambda x: _sqrtlog(np.abs(x)) + 1.0


def apply_map(kind, a, b, c, x):
    x = np.asarray(x, dtype=float)
    if kind == AFFINE:
        return a * x + b
    if kind == MAX_AFFINE:
        return np.maximum(a * x, b)
    if kind == POS_PART_AFFINE:
        return a * np.maximum(x, 0.0) + b
    if kind == SQRT_LOG:
        return a * x + b * _sqrtlog(x) + c
    raise ValueError(f"unknown map kind {kind!r}")


def draw_coeffs(coeff: CoeffLaw, n: int, rng: np.random.Generator):
    """Draw n (A, B) pairs; the draw order per pair is fixed so that streams
    are reproducible independently of chunking."""
    if coeff.dependence == EQUAL:
        a = coeff.marginal_a.sample(n, rng)
        return a, a
    if coeff.dependence == INDEPENDENT:
        a = coeff.marginal_a.sample(n, rng)
        b = coeff.marginal_b.sample(n, rng)
        return a, b
    w = coeff.marginal_a.sample(n, rng)
    sign = np.where(rng.random(n) < coeff.p_plus, 1.0, -1.0)
    b = coeff.marginal_b.sample(n, rng)
    return sign * w, b


def draw_map(family: MapFamily, rng: np.random.Generator) -> RealizedMap:
    a, b = (float(v[0]) for v in draw_coeffs(family.coeff, 1, rng))
    c = 0.0
    if family.kind == SQRT_LOG:
        c = float(family.marginal_c.sample(1, rng)[0])
    return RealizedMap(family.kind, a, b, c, b_lower=family.b_lower)


# --- closed-form one-step tail functionals --------------------------------

def _pow_plus(y, alpha):
    y = np.asarray(y, dtype=float)
    return np.maximum(y, 0.0) ** alpha


def _pow_minus(y, alpha):
    y = np.asarray(y, dtype=float)
    return np.maximum(-y, 0.0) ** alpha


def f_plus(family: MapFamily, y, alpha: float):
    """lim_t P[Psi(y) > t] / P[A > t], where P[A > t] is the reference tail
    of the (possibly signed) coefficient A."""
    coeff = family.coeff
    kind, dep = family.kind, coeff.dependence
    if kind in (AFFINE, MAX_AFFINE) and dep == INDEPENDENT:
        return _pow_plus(y, alpha) + coeff.c_b
    if kind == AFFINE and dep == EQUAL:
        y = np.asarray(y, dtype=float)
        return np.maximum(y + 1.0, 0.0) ** alpha
    if kind == AFFINE and dep == SIGNED:
        p = coeff.p_plus
        return (
            _pow_plus(y, alpha)
            + (1.0 - p) / p * _pow_minus(y, alpha)
            + coeff.c_b / p
        )
    if kind == POS_PART_AFFINE and dep == INDEPENDENT:
        return _pow_plus(y, alpha) + coeff.c_b
    if kind == SQRT_LOG and dep == INDEPENDENT:
        # the middle coefficient contributes through the sqrt-log envelope
        return (
            _pow_plus(y, alpha)
            + coeff.c_b * _sqrtlog(y) ** alpha
            + family.c_c
        )
    raise NoClosedFormError(
        f"no closed form for ({kind}, {dep}); use empirical f+/- via simulation"
    )


def f_minus(family: MapFamily, y, alpha: float):
    """lim_t P[Psi(y) < -t] / P[A > t]."""
    coeff = family.coeff
    kind, dep = family.kind, coeff.dependence
    if kind in (AFFINE, MAX_AFFINE, POS_PART_AFFINE, SQRT_LOG) and dep in (
        INDEPENDENT,
        EQUAL,
    ):
        # positive A and nonnegative-tailed B: no left tail at the A scale
        y = np.asarray(y, dtype=float)
        return np.zeros_like(y)
    if kind == AFFINE and dep == SIGNED:
        p = coeff.p_plus
        return _pow_minus(y, alpha) + (1.0 - p) / p * _pow_plus(y, alpha)
    raise NoClosedFormError(
        f"no closed form for ({kind}, {dep}); use empirical f+/- via simulation"
    )


@dataclass(frozen=True)
class BoundReport:
    ok: bool
    max_slack: float
    worst_y: float


def f_bound_check(family: MapFamily, alpha: float, y_grid) -> BoundReport:
    """Check f+(y) <= 2^alpha (y+^alpha + f+(0)) and the mirrored bound for
    f-; valid for positive A only."""
    if family.coeff.dependence == SIGNED:
        raise ValueError("f bound is derived for positive A; not valid for signed A")
    y = np.asarray(y_grid, dtype=float)
    fp = f_plus(family, y, alpha)
    fp0 = float(f_plus(family, 0.0, alpha))
    bound_p = 2.0**alpha * (_pow_plus(y, alpha) + fp0)
    fm = f_minus(family, y, alpha)
    fm0 = float(f_minus(family, 0.0, alpha))
    bound_m = 2.0**alpha * (_pow_minus(y, alpha) + fm0)
    slack_p = fp - bound_p
    slack_m = fm - bound_m
    slack = np.maximum(slack_p, slack_m)
    i = int(np.argmax(slack))
    return BoundReport(ok=bool(np.all(slack <= 0.0)), max_slack=float(slack[i]), worst_y=float(y[i]))


# --- Elton preconditions ---------------------------------------------------

@dataclass(frozen=True)
class EltonReport:
    e_log_lip: float
    se_log_lip: float
    e_logplus_lip: float
    se_logplus_lip: float
    e_log_disp: float
    se_log_disp: float
    passed: bool


def _mean_se(x):
    x = np.asarray(x, dtype=float)
    n = x.size
    m = float(x.mean())
    se = float(x.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    return m, se


def elton_precheck(family: MapFamily, n_mc: int, rng: np.random.Generator) -> EltonReport:
    """Monte Carlo check of E[log L] < 0, E[log+ L] < inf and the displacement
    moment at x0 = 0."""
    if n_mc < 1000:
        raise ValueError("n_mc must be >= 1000")
    a, b = draw_coeffs(family.coeff, n_mc, rng)
    c = (
        family.marginal_c.sample(n_mc, rng)
        if family.kind == SQRT_LOG
        else np.zeros(n_mc)
    )
    if family.kind == SQRT_LOG:
        lip = np.abs(a) + np.abs(b)
    else:
        lip = np.abs(a)
    psi0 = apply_map(family.kind, a, b, c, np.zeros(n_mc))
    if not (np.all(np.isfinite(lip)) and np.all(np.isfinite(psi0))):
        i = int(np.argmax(~(np.isfinite(lip) & np.isfinite(psi0))))
        raise ArithmeticError(
            f"non-finite coefficient draw at index {i}: A={a[i]}, B={b[i]}"
        )
    if np.any(lip <= 0.0):
        # log of a zero Lipschitz constant is -inf; treat as strongly contracting
        lip = np.maximum(lip, 1e-300)
    log_lip = np.log(lip)
    e_log, se_log = _mean_se(log_lip)
    e_logp, se_logp = _mean_se(np.maximum(log_lip, 0.0))
    disp = np.log(np.maximum(np.abs(psi0), 1e-300))
    e_disp, se_disp = _mean_se(disp)
    passed = (
        e_log + 3.0 * se_log < 0.0
        and math.isfinite(e_logp)
        and math.isfinite(e_disp)
    )
    return EltonReport(e_log, se_log, e_logp, se_logp, e_disp, se_disp, passed)
