import numpy as np
import pytest

import svyboot as sb
from svyboot.core import (
    DomainError,
    LengthMismatch,
    ProbOutOfRange,
    ProbsDontSumToOne,
    SampleTooLarge,
)


@pytest.fixture
def pop3():
    return sb.FinitePopulation([1.0, 2.0, 3.0])


class TestValidateDesign:
    def test_poisson_ok(self, pop3):
        spec = sb.DesignSpec.poisson([0.5, 0.5, 0.5])
        assert sb.validate_design(pop3, spec) == (pop3, spec)

    def test_poisson_prob_out_of_range(self, pop3):
        with pytest.raises(ProbOutOfRange):
            sb.validate_design(pop3, sb.DesignSpec.poisson([0.5, 1.2, 0.5]))

    def test_poisson_boundary_probs_rejected(self, pop3):
        for bad in ([0.0, 0.5, 0.5], [0.5, 1.0, 0.5]):
            with pytest.raises(ProbOutOfRange):
                sb.validate_design(pop3, sb.DesignSpec.poisson(bad))

    def test_pps_probs_dont_sum(self, pop3):
        with pytest.raises(ProbsDontSumToOne):
            sb.validate_design(pop3, sb.DesignSpec.pps([0.2, 0.3, 0.4], 2))

    def test_pps_weights_constructor_normalizes(self, pop3):
        spec = sb.DesignSpec.pps_from_weights([2.0, 3.0, 4.0], 2)
        sb.validate_design(pop3, spec)
        assert spec.selection_probs == pytest.approx([2 / 9, 3 / 9, 4 / 9])

    def test_srs_sample_too_large(self, pop3):
        with pytest.raises(SampleTooLarge):
            sb.validate_design(pop3, sb.DesignSpec.srs(3))

    def test_length_mismatch(self, pop3):
        with pytest.raises(LengthMismatch):
            sb.validate_design(pop3, sb.DesignSpec.poisson([0.5, 0.5]))

    def test_idempotent(self, pop3):
        spec = sb.DesignSpec.pps([0.2, 0.3, 0.5], 2)
        out1 = sb.validate_design(pop3, spec)
        out2 = sb.validate_design(*out1)
        assert out2 == (pop3, spec)
        assert np.array_equal(out2[1].selection_probs, [0.2, 0.3, 0.5])


class TestPopulation:
    def test_requires_two_units(self):
        with pytest.raises(LengthMismatch):
            sb.FinitePopulation([1.0])

    def test_rejects_nonfinite(self):
        with pytest.raises(DomainError):
            sb.FinitePopulation([1.0, np.nan])

    def test_values_are_immutable(self, pop3):
        with pytest.raises(ValueError):
            pop3.values[0] = 99.0

    def test_totals(self, pop3):
        assert pop3.size == 3
        assert pop3.total == 6.0
        assert pop3.mean == 2.0


class TestSubstreams:
    def test_same_inputs_same_stream(self):
        a = sb.derive_substream(sb.RngContract(7), 0)
        b = sb.derive_substream(sb.RngContract(7), 0)
        assert a == b
        ga, gb = a.generator(), b.generator()
        assert np.array_equal(ga.integers(0, 2**63, 8), gb.integers(0, 2**63, 8))

    def test_different_index_different_stream(self):
        a = sb.derive_substream(sb.RngContract(7), 0).generator()
        b = sb.derive_substream(sb.RngContract(7), 1).generator()
        assert not np.array_equal(a.integers(0, 2**63, 4), b.integers(0, 2**63, 4))

    def test_different_seed_different_stream(self):
        a = sb.derive_substream(sb.RngContract(7), 3).generator()
        b = sb.derive_substream(sb.RngContract(8), 3).generator()
        assert not np.array_equal(a.integers(0, 2**63, 4), b.integers(0, 2**63, 4))

    def test_injective_in_index(self):
        master = sb.RngContract(1234)
        ids = {sb.derive_substream(master, r).stream_id for r in range(4096)}
        assert len(ids) == 4096

    def test_negative_index_rejected(self):
        with pytest.raises(DomainError):
            sb.derive_substream(sb.RngContract(1), -1)

    def test_pooled_generator_matches_fresh(self):
        pool = sb.core.StreamPool()
        for seed, stream in ((0, 0), (7, 3), (2**64 - 1, 12345)):
            contract = sb.RngContract(seed, stream)
            fresh = contract.generator().random(16)
            pooled = pool.generator(contract).random(16)
            assert np.array_equal(fresh, pooled)
        # interleaved re-keying still reproduces each stream from scratch
        c1, c2 = sb.RngContract(5, 1), sb.RngContract(5, 2)
        a = pool.generator(c1).multinomial(50, [0.2, 0.8])
        b = pool.generator(c2).multinomial(50, [0.2, 0.8])
        assert np.array_equal(a, c1.generator().multinomial(50, [0.2, 0.8]))
        assert np.array_equal(b, c2.generator().multinomial(50, [0.2, 0.8]))


class TestPopulationCsv:
    def test_round_trip(self, tmp_path):
        pop = sb.FinitePopulation([1.5, 2.25, 3.0], [0.1, 0.2, 0.3])
        path = tmp_path / "pop.csv"
        sb.core.save_population_csv(path, pop)
        back = sb.load_population_csv(path)
        assert np.array_equal(back.values, pop.values)
        assert np.array_equal(back.size_measures, pop.size_measures)

    def test_rejects_nan(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("y\n1.0\nnan\n")
        with pytest.raises(DomainError):
            sb.load_population_csv(path)

    def test_rejects_bad_header(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("value\n1.0\n")
        with pytest.raises(DomainError):
            sb.load_population_csv(path)
