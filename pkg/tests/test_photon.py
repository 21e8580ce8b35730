import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import stats

from nvreadout import photon
from nvreadout.charge import ChargePopulation
from nvreadout.photon import PoissonMixture
from nvreadout._validation import DomainError

READOUT = PoissonMixture(0.45, 10.0, 0.5)


def test_pmf_normalized():
    n = np.arange(photon.poisson_support(READOUT.eta_minus) + 1)
    assert photon.mixture_pmf(READOUT, n).sum() == pytest.approx(1.0, abs=1e-12)


def test_pmf_scalar_and_components():
    m = PoissonMixture(1.0, 5.0, 0.3)
    expected = 0.3 * stats.poisson.pmf(2, 5.0) + 0.7 * stats.poisson.pmf(2, 1.0)
    assert photon.mixture_pmf(m, 2) == pytest.approx(expected)
    with pytest.raises(DomainError):
        photon.mixture_pmf(m, -1)
    with pytest.raises(DomainError):
        photon.mixture_pmf(m, 1.5)


def test_classify_conventions():
    assert photon.classify(3, 3) == photon.NV_ZERO
    assert photon.classify(4, 3) == photon.NV_MINUS
    assert photon.classify(3, 3, inclusive=True) == photon.NV_MINUS


def test_fidelity_at_calibrated_readout():
    strict = photon.charge_fidelity(READOUT, 3)
    inclusive = photon.charge_fidelity(READOUT, 3, inclusive=True)
    assert strict.fidelity == pytest.approx(0.99423, abs=1e-5)
    assert inclusive.fidelity == pytest.approx(0.99318, abs=1e-5)
    assert strict.eps_zero == pytest.approx(stats.poisson.sf(3, 0.45))
    assert strict.eps_minus == pytest.approx(stats.poisson.cdf(3, 10))


def test_optimal_threshold():
    assert photon.optimal_threshold(READOUT) == 3
    with pytest.raises(DomainError):
        photon.optimal_threshold(PoissonMixture(5.0, 5.0))


def test_threshold_zero_inclusive_calls_everything_bright():
    rep = photon.charge_fidelity(READOUT, 0, inclusive=True)
    assert rep.eps_zero == 1.0 and rep.eps_minus == 0.0 and rep.fidelity == 0.5


@given(st.floats(0, 5), st.floats(0, 30), st.integers(0, 60), st.booleans())
def test_fidelity_bounds(eta0, eta1, k, inclusive):
    rep = photon.charge_fidelity(PoissonMixture(eta0, eta1), k, inclusive=inclusive)
    assert 0.0 <= rep.eps_zero <= 1.0 and 0.0 <= rep.eps_minus <= 1.0
    assert 0.0 <= rep.fidelity <= 1.0


@given(st.floats(0, 3), st.floats(4, 30))
def test_optimal_threshold_is_optimal(eta0, eta1):
    m = PoissonMixture(eta0, eta1)
    best = photon.charge_fidelity(m, photon.optimal_threshold(m)).fidelity
    for k in range(0, int(np.ceil(3 * eta1)) + 1):
        assert photon.charge_fidelity(m, k).fidelity <= best + 1e-15


class TestPostSelection:
    prior = ChargePopulation(0.77, 0.23)

    def test_short_verification_window(self):
        purity = photon.post_selection_purity(READOUT, 0.42, 3.0, 0.0094, self.prior)
        assert purity == pytest.approx(0.9672, abs=5e-4)

    def test_empty_window_returns_prior(self):
        assert photon.post_selection_purity(READOUT, 0.0, 3.0, 0.01, self.prior) == 0.77

    def test_no_ionization_is_bayes_posterior(self):
        s = 0.42 / 3.0
        h1, h0 = 1 - np.exp(-10 * s), 1 - np.exp(-0.45 * s)
        expected = 0.77 * h1 / (0.77 * h1 + 0.23 * h0)
        assert photon.post_selection_purity(READOUT, 0.42, 3.0, 0.0, self.prior) == \
            pytest.approx(expected, rel=1e-12)

    @given(st.floats(0.0, 30.0), st.floats(0.0, 0.2))
    def test_purity_is_probability(self, window, p_ion):
        v = photon.post_selection_purity(READOUT, window, 3.0, p_ion, self.prior)
        assert 0.0 <= v <= 1.0

    def test_invalid_inputs(self):
        with pytest.raises(DomainError):
            photon.post_selection_purity(READOUT, -1.0, 3.0, 0.0, self.prior)
        with pytest.raises(DomainError):
            photon.post_selection_purity(READOUT, 1.0, 3.0, 1.5, self.prior)


def test_scaled_mixture():
    m = READOUT.scaled(0.14)
    assert m.eta_zero == pytest.approx(0.063) and m.eta_minus == pytest.approx(1.4)
