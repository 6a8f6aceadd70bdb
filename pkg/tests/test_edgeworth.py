import math

import numpy as np
import pytest

import svyboot as sb
from svyboot.core import DomainError
from svyboot.edgeworth import (
    edgeworth_poisson,
    edgeworth_pps,
    edgeworth_srs,
    std_normal_cdf,
    std_normal_pdf,
    std_normal_quantile,
)

Z_GRID = np.linspace(-6.0, 6.0, 49)


class TestNormalPrimitives:
    def test_cdf_pdf_at_zero(self):
        assert std_normal_cdf(0.0) == 0.5
        assert std_normal_pdf(0.0) == pytest.approx(0.3989422804014327, abs=1e-15)

    def test_quantile_constant(self):
        assert std_normal_quantile(0.95) == pytest.approx(1.6448536269514722, abs=1e-10)
        assert std_normal_quantile(0.05) == pytest.approx(-1.6448536269514722, abs=1e-10)

    def test_cdf_symmetry(self):
        for z in Z_GRID:
            assert std_normal_cdf(-z) == pytest.approx(1.0 - std_normal_cdf(z), abs=1e-14)

    def test_quantile_round_trip(self):
        # Above z ~ 5.3 the stored double p = cdf(z) only pins z down to
        # ulp(1)/pdf(z) > 1e-9, so the bound there is the representation
        # limit, not the algorithm.
        for z in Z_GRID:
            limit = max(1e-9, 0.6 * 2.3e-16 / std_normal_pdf(z)) if z > 0 else 1e-9
            assert std_normal_quantile(std_normal_cdf(z)) == pytest.approx(z, abs=limit)

    def test_quantile_domain(self):
        for bad in (0.0, 1.0, -0.2, 1.3):
            with pytest.raises(DomainError):
                std_normal_quantile(bad)

    def test_cdf_reference_values(self):
        # scipy.stats.norm.cdf agreement at a few points, frozen to 13 digits.
        assert std_normal_cdf(1.0) == pytest.approx(0.8413447460685429, abs=1e-13)
        assert std_normal_cdf(-2.5) == pytest.approx(0.006209665325776132, abs=1e-15)


class TestExpansions:
    def test_poisson_reduces_to_normal(self):
        for z in Z_GRID:
            assert edgeworth_poisson(z, 2.0, 0.0, 0.0) == pytest.approx(
                std_normal_cdf(z), abs=1e-15
            )

    def test_poisson_at_zero(self):
        # mu3 / V^{3/2} = 0.6 gives 0.5 + 0.1 * phi(0).
        val = edgeworth_poisson(0.0, 1.0, 0.6, 0.0)
        assert val == pytest.approx(0.5 + 0.1 * 0.3989422804014327, abs=1e-12)
        assert val == pytest.approx(0.539894, abs=1e-6)

    def test_srs_reduces_to_normal(self):
        for z in Z_GRID:
            assert edgeworth_srs(z, 10, 100, 1.5, 0.0) == pytest.approx(
                std_normal_cdf(z), abs=1e-15
            )

    def test_srs_half_sampling_fraction_drops_term(self):
        # n/N = 1/2 kills the (1 - 2n/N) factor, leaving the 3z^2 shape.
        n, N, s, mu3 = 8, 16, 1.2, 0.9
        for z in (-1.3, -0.4, 0.0, 0.7, 2.1):
            expected = std_normal_cdf(z) + math.sqrt(0.5) * mu3 / (
                6 * math.sqrt(n) * s**3
            ) * 3 * z * z * std_normal_pdf(z)
            assert edgeworth_srs(z, n, N, s, mu3) == pytest.approx(expected, abs=1e-14)

    def test_pps_at_zero(self):
        # mu3 / (sqrt(n) s^3) = 0.3 gives 0.5 + 0.05 * phi(0).
        val = edgeworth_pps(0.0, 4, 1.0, 0.6)
        assert val == pytest.approx(0.5 + 0.05 * 0.3989422804014327, abs=1e-12)
        assert val == pytest.approx(0.519947, abs=1e-6)

    def test_pps_reduces_to_normal(self):
        for z in Z_GRID:
            assert edgeworth_pps(z, 7, 2.0, 0.0) == pytest.approx(
                std_normal_cdf(z), abs=1e-15
            )

    def test_corrections_are_even_in_z(self):
        cases = [
            lambda z: edgeworth_poisson(z, 1.7, 0.4, 0.8),
            lambda z: edgeworth_srs(z, 12, 60, 1.1, -0.5),
            lambda z: edgeworth_pps(z, 9, 0.9, 0.7),
        ]
        for f in cases:
            for z in (0.1, 0.5, 1.0, 1.7, 2.5):
                left = f(-z) - std_normal_cdf(-z)
                right = f(z) - std_normal_cdf(z)
                assert left == pytest.approx(right, abs=1e-14)

    def test_vectorized_evaluation(self):
        z = np.array([-0.5, 0.0, 0.5])
        vec = edgeworth_poisson(z, 1.0, 0.3, 0.2)
        assert vec.shape == (3,)
        for i, zi in enumerate(z):
            assert vec[i] == pytest.approx(edgeworth_poisson(float(zi), 1.0, 0.3, 0.2))


class TestExpansionAgainstExactLaw:
    def test_beats_normal_on_skewed_enumerable_design(self):
        # On a small skewed population the expansion (with population moment
        # inputs) tracks the exact studentized CDF better than Phi does.
        rng = np.random.default_rng(42)
        y = rng.exponential(2.0, 12) + 0.2
        pi = np.full(12, 0.45)
        pop = sb.FinitePopulation(y)
        exact = sb.enumerate_design_moments(pop, sb.DesignSpec.poisson(pi))
        v = float((y * y * (1 - pi) / pi).sum())
        mu3 = float((y**3 * (1 - pi) * ((1 - pi) ** 2 / pi**2 - 1)).sum())
        tau3 = float((y**3 * (1 - pi) ** 2 / pi**2).sum())
        probs = exact.t_probs / exact.t_probs.sum()
        cdf = np.cumsum(probs)
        cdf_left = cdf - probs
        sup_edge = sup_phi = 0.0
        for t, hi, lo in zip(exact.t_values, cdf, cdf_left):
            e = edgeworth_poisson(float(t), v, mu3, tau3)
            f = std_normal_cdf(float(t))
            sup_edge = max(sup_edge, abs(hi - e), abs(lo - e))
            sup_phi = max(sup_phi, abs(hi - f), abs(lo - f))
        assert sup_edge < sup_phi
