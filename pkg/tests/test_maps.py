import math

import numpy as np
import pytest

from sfpe.dist import Constant, LogPareto, Pareto
from sfpe.maps import (
    AFFINE,
    EQUAL,
    INDEPENDENT,
    MAX_AFFINE,
    POS_PART_AFFINE,
    SIGNED,
    SQRT_LOG,
    CoeffLaw,
    MapFamily,
    NoClosedFormError,
    RealizedMap,
    apply_map,
    draw_coeffs,
    draw_map,
    elton_precheck,
    f_bound_check,
    f_minus,
    f_plus,
)

LP = LogPareto(2.0, 3.0, 0.4)


def indep_family(kind=AFFINE, **kw):
    return MapFamily(kind, CoeffLaw(LP, LP, INDEPENDENT, c_b=1.0), **kw)


class TestCoeffLaw:
    def test_equal_forces_shared_marginal(self):
        law = CoeffLaw(LP, Pareto(1.5, 1.0), EQUAL)
        assert law.marginal_b == LP
        assert law.c_b == 1.0

    def test_signed_requires_p_plus(self):
        with pytest.raises(ValueError):
            CoeffLaw(LP, LP, SIGNED, p_plus=0.0)
        with pytest.raises(ValueError):
            CoeffLaw(LP, LP, SIGNED, p_plus=1.2)

    def test_reference_tail(self):
        law = CoeffLaw(LP, LP, SIGNED, p_plus=0.75)
        assert law.a_tail(5.0) == pytest.approx(0.75 * LP.survival(5.0))
        law2 = CoeffLaw(LP, LP, INDEPENDENT)
        assert law2.a_tail(5.0) == pytest.approx(LP.survival(5.0))


class TestRealizedMaps:
    def test_affine(self):
        m = RealizedMap(AFFINE, 0.5, 2.0)
        assert m(3.0) == pytest.approx(3.5)
        assert m.lipschitz == 0.5

    def test_max_affine(self):
        m = RealizedMap(MAX_AFFINE, 2.0, 10.0)
        assert m(1.0) == 10.0
        assert m(100.0) == 200.0

    def test_pos_part_affine(self):
        m = RealizedMap(POS_PART_AFFINE, 2.0, 3.0, b_lower=1.0)
        assert m(-5.0) == 3.0
        assert m(2.0) == 7.0

    def test_sqrt_log(self):
        m = RealizedMap(SQRT_LOG, 1.0, 1.0, 1.0)
        x = math.e**2
        assert m(x) == pytest.approx(x + math.e * 2.0 + 1.0)

    def test_draw_map_matches_family_formula(self):
        fam = indep_family()
        rng = np.random.default_rng(3)
        m = draw_map(fam, rng)
        x = np.array([-1.0, 0.0, 2.5])
        np.testing.assert_allclose(m(x), m.a * x + m.b)


class TestDecomposition:
    @pytest.mark.parametrize(
        "fam",
        [
            indep_family(AFFINE),
            indep_family(MAX_AFFINE),
            indep_family(POS_PART_AFFINE, b_lower=0.5),
            indep_family(SQRT_LOG, marginal_c=Constant(1.0), c_c=0.0),
        ],
    )
    def test_envelope_bound(self, fam):
        rng = np.random.default_rng(11)
        # the decomposition bound is stated on the chain's support:
        # x >= 0 for max-affine, x > -b for the positive-part family
        if fam.kind == MAX_AFFINE:
            x = np.linspace(0.0, 20.0, 81)
        elif fam.kind == POS_PART_AFFINE:
            x = np.linspace(-fam.b_lower, 20.0, 81)
        else:
            x = np.linspace(-20.0, 20.0, 81)
        for _ in range(1000):
            m = draw_map(fam, rng)
            coeff, phi = m.envelope()
            assert np.all(np.abs(m(x) - m.a * x) <= coeff * phi(np.abs(x)) + 1e-12)

    @pytest.mark.parametrize("kind", [MAX_AFFINE, POS_PART_AFFINE])
    def test_monotone_for_positive_a(self, kind):
        fam = indep_family(kind, b_lower=0.5 if kind == POS_PART_AFFINE else 0.0)
        rng = np.random.default_rng(5)
        x = np.linspace(-10.0, 10.0, 201)
        for _ in range(200):
            m = draw_map(fam, rng)
            assert np.all(np.diff(m(x)) >= 0)


class TestClosedForms:
    def test_indep_at_zero(self):
        assert f_plus(indep_family(), 0.0, 2.0) == pytest.approx(1.0)

    def test_equal(self):
        fam = MapFamily(AFFINE, CoeffLaw(LP, LP, EQUAL))
        assert f_plus(fam, 1.0, 2.0) == pytest.approx(4.0)
        assert f_plus(fam, -3.0, 2.0) == 0.0

    def test_signed(self):
        fam = MapFamily(AFFINE, CoeffLaw(LP, LP, SIGNED, p_plus=0.75, c_b=1.0))
        assert f_plus(fam, -2.0, 2.0) == pytest.approx(8.0 / 3.0)
        assert f_minus(fam, -2.0, 2.0) == pytest.approx(4.0)
        assert f_minus(fam, 2.0, 2.0) == pytest.approx((0.25 / 0.75) * 4.0)

    def test_positive_a_has_no_left_tail(self):
        y = np.linspace(-5.0, 5.0, 11)
        assert np.all(f_minus(indep_family(), y, 2.0) == 0.0)

    def test_no_closed_form(self):
        fam = MapFamily(MAX_AFFINE, CoeffLaw(LP, LP, SIGNED, p_plus=0.5))
        with pytest.raises(NoClosedFormError):
            f_plus(fam, 1.0, 2.0)

    def test_nonnegative_and_continuous(self):
        y = np.linspace(-10.0, 10.0, 4001)
        for fam in (
            indep_family(),
            MapFamily(AFFINE, CoeffLaw(LP, LP, EQUAL)),
            MapFamily(AFFINE, CoeffLaw(LP, LP, SIGNED, p_plus=0.6, c_b=1.0)),
        ):
            vals = f_plus(fam, y, 2.0)
            assert np.all(vals >= 0.0)
            assert np.max(np.abs(np.diff(vals))) < 0.2  # no jumps on a fine grid

    def test_empirical_ratio_converges_to_closed_form(self):
        # Monte Carlo check of the defining limit at fixed y for the
        # independent affine family
        fam = indep_family()
        y, alpha = 2.0, 2.0
        rng = np.random.default_rng(19)
        n = 4_000_000
        a = LP.sample(n, rng)
        b = LP.sample(n, rng)
        target = float(f_plus(fam, y, alpha))
        devs = []
        for t in (20.0, 60.0, 180.0):
            p = np.mean(a * y + b > t)
            ratio = p / LP.survival(t)
            se = math.sqrt(p * (1 - p) / n) / LP.survival(t)
            devs.append((abs(ratio - target), 3 * se))
        # converged into the 3-se band by the last t
        assert devs[-1][0] <= max(devs[-1][1], 0.05 * target)


class TestFBound:
    def test_holds_for_independent(self):
        rep = f_bound_check(indep_family(), 2.0, np.linspace(-10, 10, 101))
        assert rep.ok
        assert rep.max_slack <= 0.0

    def test_arithmetic_example(self):
        fam = indep_family()
        assert f_plus(fam, 3.0, 2.0) == pytest.approx(10.0)
        assert 10.0 <= 2.0**2 * (9.0 + 1.0)

    def test_holds_for_equal(self):
        fam = MapFamily(AFFINE, CoeffLaw(LP, LP, EQUAL))
        rep = f_bound_check(fam, 2.0, np.linspace(-5, 50, 111))
        assert rep.ok

    def test_signed_rejected(self):
        fam = MapFamily(AFFINE, CoeffLaw(LP, LP, SIGNED, p_plus=0.75))
        with pytest.raises(ValueError, match="positive A"):
            f_bound_check(fam, 2.0, np.linspace(-5, 5, 11))


class TestEltonPrecheck:
    def test_contracting_constant(self):
        fam = MapFamily(AFFINE, CoeffLaw(Constant(0.5), Constant(1.0), INDEPENDENT))
        rep = elton_precheck(fam, 2000, np.random.default_rng(0))
        assert rep.passed
        assert rep.e_log_lip == pytest.approx(math.log(0.5))

    def test_expanding_constant_fails(self):
        fam = MapFamily(AFFINE, CoeffLaw(Constant(2.0), Constant(1.0), INDEPENDENT))
        rep = elton_precheck(fam, 2000, np.random.default_rng(0))
        assert not rep.passed

    def test_log_pareto_contracts(self):
        # E[A^2] = 0.32 < 1 forces E[log A] < 0 by Jensen
        fam = indep_family()
        rep = elton_precheck(fam, 100_000, np.random.default_rng(1))
        assert rep.passed
        assert rep.e_log_lip + 3 * rep.se_log_lip < 0.0

    def test_small_n_rejected(self):
        with pytest.raises(ValueError):
            elton_precheck(indep_family(), 10, np.random.default_rng(0))


class TestDrawCoeffs:
    def test_equal_is_pathwise(self):
        a, b = draw_coeffs(CoeffLaw(LP, LP, EQUAL), 100, np.random.default_rng(0))
        np.testing.assert_array_equal(a, b)

    def test_signed_sign_frequency(self):
        law = CoeffLaw(LP, LP, SIGNED, p_plus=0.75)
        a, _ = draw_coeffs(law, 100_000, np.random.default_rng(2))
        frac = np.mean(a > 0)
        assert abs(frac - 0.75) < 3 * math.sqrt(0.75 * 0.25 / 100_000)

    def test_apply_map_unknown_kind(self):
        with pytest.raises(ValueError):
            apply_map("quadratic", 1.0, 1.0, 0.0, 1.0)
