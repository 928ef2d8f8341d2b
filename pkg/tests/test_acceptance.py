"""End-to-end acceptance experiments.

Each test prints a single `criterion N (...): PASS|FAIL` line to the terminal
and then asserts every clause of the criterion.  The asymptotic ratio limits
are t -> infinity statements; the Monte Carlo clauses therefore carry the
declared finite-t tolerances and some are expected to sit outside them at the
sample sizes used here (the pre-asymptotic bias of the ratio decays only like
1/log t).  Those clauses are asserted as stated and allowed to fail honestly
rather than being loosened.
"""

import math
import time

import numpy as np
import pytest
from scipy import stats

from sfpe import tailstats, theory
from sfpe.dist import Constant, ExpPoly, ExpStretched, LogPareto, Pareto, log_view
from sfpe.engine import (
    SampleBatch,
    SimConfig,
    sample_perpetuity,
    sample_stationary_chain,
)
from sfpe.maps import (
    AFFINE,
    EQUAL,
    INDEPENDENT,
    SIGNED,
    CoeffLaw,
    MapFamily,
    f_minus,
    f_plus,
)

LP = LogPareto(2.0, 3.0, 0.4)
MU = LP.alpha_moment(1.0)  # E[A], quadrature
SIGMA = 0.32  # E[A^2], closed form for this parameter choice
N_BIG = 10_000_000


def report(capsys, num, name, clauses):
    ok = all(clauses.values())
    with capsys.disabled():
        print(f"\ncriterion {num} ({name}): {'PASS' if ok else 'FAIL'}")
    failed = [k for k, v in clauses.items() if not v]
    assert not failed, f"criterion {num}: failed clauses {failed}"


def ratio_with_reliability(batch, coeff, kind, side=+1):
    """Smoothed survival on the default geometric grid, ratio against the
    reference tail P[A > t], and the index of the last reliable point."""
    base = batch if side > 0 else SampleBatch(
        -batch.values, batch.method, batch.seed, batch.config
    )
    grid = tailstats.default_grid(base)
    est = tailstats.smoothed_survival(batch, coeff, kind, grid, side=side)
    curve = tailstats.ratio_curve(est, coeff.a_tail)
    final = tailstats.reliable_index(est)
    return est, curve, final


def ratio_clauses(est, curve, final, predicted, tol):
    reliable = est.n_exceed >= tailstats.RELIABLE_EXCEED
    within = np.abs(curve.ratio - predicted) <= tol * predicted
    return {
        f"within {tol:.0%} at every reliable point": bool(np.all(within[reliable])),
        "within 95% CI at final reliable point": bool(
            curve.ci_lo[final] <= predicted <= curve.ci_hi[final]
        ),
    }


# --- shared 1e7-sample experiments -------------------------------------------

@pytest.fixture(scope="module")
def indep_run():
    fam = MapFamily(AFFINE, CoeffLaw(LP, LP, INDEPENDENT, c_b=1.0))
    t0 = time.perf_counter()
    batch = sample_stationary_chain(fam, SimConfig(n_samples=N_BIG, seed=101))
    est, curve, final = ratio_with_reliability(batch, fam.coeff, fam.kind)
    return est, curve, final, time.perf_counter() - t0


@pytest.fixture(scope="module")
def equal_run():
    fam = MapFamily(AFFINE, CoeffLaw(LP, LP, EQUAL))
    batch = sample_stationary_chain(fam, SimConfig(n_samples=N_BIG, seed=202))
    return ratio_with_reliability(batch, fam.coeff, fam.kind)


def test_closed_form_constants_layer(capsys):
    # criterion 1: exact formula layer, fast and deterministic
    t0 = time.perf_counter()
    rng = np.random.default_rng(0)
    worst = 0.0
    for _ in range(10_000):
        mu_p = rng.uniform(0.0, 0.95)
        mu_m = rng.uniform(0.0, 0.95 - mu_p)
        xi_p, xi_m = rng.uniform(0.0, 10.0, size=2)
        dp, dm = theory.ifs_constants(mu_p, mu_m, xi_p, xi_m)
        mat = np.array([[1.0 - mu_p, -mu_m], [-mu_m, 1.0 - mu_p]])
        sp, sm = np.linalg.solve(mat, [xi_p, xi_m])
        scale = max(abs(sp), abs(sm), 1e-300)
        worst = max(worst, abs(dp - sp) / scale, abs(dm - sm) / scale)

    # regime coherence: each more general constant reduces to the simpler one
    coh1 = theory.indep_constant(2.7, 0.0, 0.32) == theory.kevei_constant(2.7, 0.32)
    dp, dm = theory.ifs_constants(0.4, 0.0, 2.0, 0.0)
    coh2 = (
        abs(dp - theory.affine_constant(2.0, 0.4)) <= 1e-15 * dp and dm == 0.0
    )
    dp, _ = theory.ifs_constants(0.32, 0.0, 2.5 + 1.0, 0.0)
    coh3 = abs(dp - theory.indep_constant(2.5, 1.0, 0.32)) <= 1e-15 * dp
    elapsed = time.perf_counter() - t0
    report(capsys, 1, "closed-form constants", {
        "linear-solve agreement to 1e-12 on 1e4 inputs": worst <= 1e-12,
        "constant-B regime coherence": coh1,
        "one-sided regime coherence": coh2,
        "independent-coefficient regime coherence": coh3,
        "runtime < 1 s": elapsed < 1.0,
    })


def test_independent_coefficients_ratio(capsys, indep_run):
    # criterion 2: X = AX + B with A, B iid LogPareto(2, 3, 0.4)
    est, curve, final, elapsed = indep_run
    ex = MU / (1.0 - MU)
    ex2 = (2.0 * MU * MU * ex + SIGMA) / (1.0 - SIGMA)
    predicted = (ex2 + 1.0) / (1.0 - SIGMA)
    clauses = ratio_clauses(est, curve, final, predicted, 0.20)
    clauses["runtime <= 10 min single worker"] = elapsed <= 600.0
    report(capsys, 2, "independent-coefficient tail constant", clauses)


def test_dependence_discrimination(capsys, indep_run, equal_run):
    # criterion 3: identical marginals, Independent vs Equal coefficients
    # produce genuinely different tail constants
    est_i, curve_i, fin_i, _ = indep_run
    est_e, curve_e, fin_e = equal_run
    d1, d2 = theory.example_constants(MU, SIGMA)
    half_i = (curve_i.ci_hi[fin_i] - curve_i.ci_lo[fin_i]) / 2.0
    half_e = (curve_e.ci_hi[fin_e] - curve_e.ci_lo[fin_e]) / 2.0
    separated = abs(curve_i.ratio[fin_i] - curve_e.ratio[fin_e]) > half_i + half_e
    within_i = abs(curve_i.ratio[fin_i] - d1) <= 0.20 * d1
    within_e = abs(curve_e.ratio[fin_e] - d2) <= 0.20 * d2
    report(capsys, 3, "dependence discrimination", {
        "curves separated beyond summed CI half-widths": bool(separated),
        "independent ratio within 20% of its constant": bool(within_i),
        "equal ratio within 20% of its constant": bool(within_e),
    })


def test_constant_b_ratio(capsys):
    # criterion 4: X = AX + 1; the B tail contributes nothing
    fam = MapFamily(AFFINE, CoeffLaw(LP, Constant(1.0), INDEPENDENT))
    batch = sample_stationary_chain(fam, SimConfig(n_samples=N_BIG, seed=303))
    est, curve, final = ratio_with_reliability(batch, fam.coeff, fam.kind)
    ex2 = ((1.0 + MU) / (1.0 - MU)) / (1.0 - SIGMA)
    predicted = ex2 / (1.0 - SIGMA)
    report(capsys, 4, "constant-B tail constant",
           ratio_clauses(est, curve, final, predicted, 0.20))


def test_signed_coefficient_two_sided_ratio(capsys):
    # criterion 5: A = eps*W with P[eps=+1] = 0.75; both tails of X
    fam = MapFamily(AFFINE, CoeffLaw(LP, LP, SIGNED, p_plus=0.75, c_b=1.0))
    batch = sample_stationary_chain(fam, SimConfig(n_samples=N_BIG, seed=404))
    mu_p, mu_m = 0.75 * SIGMA, 0.25 * SIGMA
    xi_p, _ = tailstats.plugin_moment(batch, lambda y: f_plus(fam, y, 2.0))
    xi_m, _ = tailstats.plugin_moment(batch, lambda y: f_minus(fam, y, 2.0))
    d_plus, d_minus = theory.ifs_constants(mu_p, mu_m, xi_p, xi_m)

    _, curve_r, fin_r = ratio_with_reliability(batch, fam.coeff, fam.kind, side=+1)
    _, curve_l, fin_l = ratio_with_reliability(batch, fam.coeff, fam.kind, side=-1)
    right_ok = abs(curve_r.ratio[fin_r] - d_plus) <= 0.25 * d_plus
    left_ok = abs(curve_l.ratio[fin_l] - d_minus) <= 0.25 * d_minus
    report(capsys, 5, "signed-coefficient two-sided constants", {
        "right-tail ratio within 25%": bool(right_ok),
        "left-tail ratio within 25%": bool(left_ok),
    })


def test_tail_class_membership_layer(capsys):
    # criterion 6: regular-variation uniformity and tilted-tail class checks
    t0 = time.perf_counter()
    t_list = [1e2, 1e3, 1e4]
    rep_p = theory.rv_uniformity_check(Pareto(2.0, 1.0), 2.0, 0.1, t_list)
    rep_lp = theory.rv_uniformity_check(LP, 2.0, 0.1, t_list)
    dom_good = theory.salpha_check_dom(ExpPoly(1.0, -2.0, 1.0), 1.0)
    # exponential survival on the log scale has a constant tilted tail, whose
    # integral diverges: only the integrability clause may fail
    dom_flat = theory.salpha_check_dom(log_view(Pareto(2.0, 1.0)), 2.0)
    convex = theory.salpha_check_convex(ExpStretched(1.0, 1.0, 0.5, 1.0), 1.0, 0.5)
    elapsed = time.perf_counter() - t0
    report(capsys, 6, "tail-class membership checks", {
        "pure power deviation float-exact": float(np.max(rep_p.sup_dev)) <= 1e-12,
        "log-corrected deviation strictly decreasing": rep_lp.strictly_decreasing,
        "polynomial-corrected tilt accepted": dom_good.passed,
        "constant tilt rejected on integrability": (
            not dom_flat.pass_integral
            and dom_flat.pass_shift
            and dom_flat.pass_doubling
        ),
        "stretched-exponential tilt accepted": convex.passed,
        "runtime < 10 s": elapsed < 10.0,
    })


def test_convolution_limit_layer(capsys):
    # criterion 7: two-fold convolution tail against 2 m_alpha(F)
    t0 = time.perf_counter()
    ep = ExpPoly(1.0, -2.0, 1.0)
    rep = theory.convolution_limit_check(ep, ep, ep, 1.0, 1.0, 1.0, [20, 40, 80, 160])
    _, _, v_monotone = theory.appendix_smallint_diagnostic(
        ep, 1.0, [1.0, 2.0, 4.0], [80.0, 160.0, 320.0, 640.0]
    )
    elapsed = time.perf_counter() - t0
    report(capsys, 7, "convolution limit", {
        "final ratio within 5% of 2 m_alpha": rep.final_ok,
        "monotone approach": rep.monotone_ok,
        "middle-range integral decreases in v": v_monotone,
        "runtime < 30 s": elapsed < 30.0,
    })


def test_product_convolution_trajectory(capsys):
    # criterion 8: P[A A' > t]/P[A > t] -> 2 E[A^2] = 0.64
    rng = np.random.default_rng(808)
    rep = theory.product_convolution_check(LP, 2.0, [2, 4, 8, 15], N_BIG, rng)
    assert rep.target == pytest.approx(0.64, abs=1e-12)
    report(capsys, 8, "product-convolution trajectory", {
        "final point within 25% of 0.64": rep.final_ok,
        "trend toward the target": rep.monotone_ok,
    })


def test_estimator_layer(capsys):
    # criterion 9: Hill calibration, cross-method agreement, determinism
    rng = np.random.default_rng(99)
    draws = Pareto(2.0, 1.0).sample(10**6, rng)
    alpha_hat = tailstats.hill(draws, 1000)

    coeff = CoeffLaw(LP, LP, INDEPENDENT, c_b=1.0)
    fam = MapFamily(AFFINE, coeff)
    cfg = SimConfig(n_samples=10**5, seed=515)
    chain = sample_stationary_chain(fam, cfg)
    perp = sample_perpetuity(coeff, cfg)
    ks = stats.ks_2samp(chain.values, perp.values).statistic

    cfg_small = SimConfig(n_samples=200_000, seed=616)
    runs = [
        sample_stationary_chain(fam, cfg_small, workers=w).values.tobytes()
        for w in (1, 4, 8)
    ]
    report(capsys, 9, "estimator layer", {
        "Hill index within 0.2 of truth": abs(alpha_hat - 2.0) <= 0.2,
        "perpetuity vs chain KS <= 0.01": ks <= 0.01,
        "byte-identical across 1/4/8 workers": runs[0] == runs[1] == runs[2],
    })
