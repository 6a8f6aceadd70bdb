import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import svyboot as sb
from svyboot.core import EmptySample, TooFewUnits, ZeroVariance


def make_sample(values, probs, kind, indices=None):
    values = np.asarray(values, dtype=float)
    idx = np.arange(values.size) if indices is None else np.asarray(indices)
    return sb.DrawnSample(idx, values, np.asarray(probs, dtype=float), kind)


class TestHtPoisson:
    def test_single_unit_closed_form(self):
        est = sb.ht_poisson(make_sample([2.0], [0.5], "poisson"))
        assert est.y_hat == 4.0
        assert est.v_hat == 8.0
        assert est.tau3_hat == 16.0
        assert est.mu3_hat == 0.0  # pi = 1/2 makes (1-pi)^2/pi^2 = 1

    def test_full_inclusion(self):
        est = sb.ht_poisson(make_sample([1.0, 2.0, 3.0], [0.5] * 3, "poisson"))
        assert est.y_hat == 12.0
        assert est.v_hat == 28.0

    def test_empty_sample(self):
        with pytest.raises(EmptySample):
            sb.ht_poisson(make_sample([], [], "poisson"))

    def test_enumeration_unbiasedness(self):
        pop = sb.FinitePopulation([1.0, 2.0, 3.0])
        spec = sb.DesignSpec.poisson([0.5, 0.5, 0.5])
        exact = sb.enumerate_design_moments(pop, spec)
        assert exact.e_y_hat == pytest.approx(6.0, rel=1e-12)
        assert exact.var_y_hat == pytest.approx(14.0, rel=1e-12)
        assert exact.e_v_hat == pytest.approx(14.0, rel=1e-12)


class TestHtSrs:
    def test_constant_sample(self):
        est = sb.ht_srs(make_sample([4.0, 4.0, 4.0], [0.5] * 3, "srs"), 6)
        assert est.s2 == 0.0 and est.v_hat == 0.0 and est.mu3_hat == pytest.approx(0.0)

    def test_two_point_arithmetic(self):
        est = sb.ht_srs(make_sample([1.0, 3.0], [0.5, 0.5], "srs"), 4)
        assert est.y_hat == 8.0
        assert est.s2 == 1.0
        assert est.v_hat == 4.0

    def test_needs_two_units(self):
        with pytest.raises(TooFewUnits):
            sb.ht_srs(make_sample([1.0], [0.5], "srs"), 4)

    def test_enumeration_relations(self):
        # E[y_hat] = Y exactly; E[v_hat] = (n-1)/n Var(y_hat) with divisor-n s2.
        pop = sb.FinitePopulation([1.0, 2.0, 3.0, 4.0])
        exact = sb.enumerate_design_moments(pop, sb.DesignSpec.srs(2))
        assert exact.e_y_hat == pytest.approx(10.0, rel=1e-12)
        assert exact.var_y_hat == pytest.approx(20.0 / 3.0, rel=1e-12)
        assert exact.e_v_hat == pytest.approx(0.5 * exact.var_y_hat, rel=1e-12)
        assert exact.e_v_hat == pytest.approx(10.0 / 3.0, rel=1e-12)


class TestHhPps:
    def test_repeated_unit_zero_variance(self):
        est = sb.hh_pps(make_sample([3.0, 3.0], [0.4, 0.4], "pps", indices=[1, 1]))
        assert est.v_hat == 0.0
        assert est.y_hat == pytest.approx(3.0 / 0.4)

    def test_balanced_population(self):
        est = sb.hh_pps(make_sample([1.0, 1.0], [0.5, 0.5], "pps", indices=[0, 1]))
        assert est.y_hat == 2.0 and est.v_hat == 0.0

    def test_enumeration_relations(self):
        pop = sb.FinitePopulation([1.0, 2.0, 3.0])
        exact = sb.enumerate_design_moments(pop, sb.DesignSpec.pps([0.2, 0.3, 0.5], 2))
        sigma2 = 0.2 * (1 / 0.2 - 6) ** 2 + 0.3 * (2 / 0.3 - 6) ** 2 + 0.5 * 0.0
        assert sigma2 == pytest.approx(1.0 / 3.0, rel=1e-12)
        assert exact.e_y_hat == pytest.approx(6.0, rel=1e-12)
        assert exact.e_v_hat == pytest.approx((2 - 1) / 4 * sigma2, rel=1e-12)


class TestStudentize:
    def test_values(self):
        assert sb.studentize(10.0, 10.0, 4.0) == 0.0
        assert sb.studentize(12.0, 10.0, 4.0) == 1.0
        assert sb.studentize(9.7, 9.7, 2.5) == 0.0

    def test_zero_variance(self):
        with pytest.raises(ZeroVariance):
            sb.studentize(1.0, 0.0, 0.0)


@st.composite
def poisson_samples(draw):
    n = draw(st.integers(min_value=1, max_value=8))
    values = draw(
        st.lists(
            st.floats(min_value=-50, max_value=50, allow_nan=False),
            min_size=n,
            max_size=n,
        )
    )
    probs = draw(
        st.lists(st.floats(min_value=0.05, max_value=0.95), min_size=n, max_size=n)
    )
    return make_sample(values, probs, "poisson")


class TestScaleEquivariance:
    @given(poisson_samples(), st.floats(min_value=0.25, max_value=8.0))
    @settings(max_examples=200, deadline=None)
    def test_poisson(self, sample, c):
        base = sb.ht_poisson(sample)
        scaled = sb.ht_poisson(
            sb.DrawnSample(sample.unit_indices, c * sample.values, sample.probs, "poisson")
        )
        assert scaled.y_hat == pytest.approx(c * base.y_hat, rel=1e-12, abs=1e-12)
        assert scaled.v_hat == pytest.approx(c * c * base.v_hat, rel=1e-12, abs=1e-12)
        assert scaled.mu3_hat == pytest.approx(c**3 * base.mu3_hat, rel=1e-10, abs=1e-10)
        assert scaled.tau3_hat == pytest.approx(c**3 * base.tau3_hat, rel=1e-10, abs=1e-10)

    def test_studentize_invariant(self):
        rng = sb.RngContract(3).generator()
        for _ in range(100):
            y, ref = rng.normal(size=2)
            v = rng.uniform(0.1, 4.0)
            c = rng.uniform(0.2, 5.0)
            t = sb.studentize(y, ref, v)
            tc = sb.studentize(c * y, c * ref, c * c * v)
            assert tc == pytest.approx(t, rel=1e-12, abs=1e-12)
