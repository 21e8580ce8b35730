import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nvreadout import charge
from nvreadout.charge import (
    ChargePopulation,
    DestructivityMatrix,
    MultiphotonRateModel,
    NirRatePolynomial,
    SteadyStateParams,
)
from nvreadout._validation import DegeneracyError, DomainError

D_READOUT = DestructivityMatrix(np.array([[0.65, 0.05], [0.35, 0.95]]))

prob = st.floats(0.0, 1.0)
rate = st.floats(0.0, 50.0)
coef = st.floats(0.0, 10.0)


def rk4_minus(p, k_ion, k_rec, t, steps=4000):
    """Classical RK4 on dp-/dt = -k_ion p- + k_rec (1 - p-)."""
    f = lambda x: -k_ion * x + k_rec * (1.0 - x)  # noqa: E731
    h = t / steps
    for _ in range(steps):
        a = f(p)
        b = f(p + h * a / 2)
        c = f(p + h * b / 2)
        d = f(p + h * c)
        p += h * (a + 2 * b + 2 * c + d) / 6
    return p


def random_model(rng):
    c20, c11, c12, d20, d11 = rng.uniform(0.01, 2.0, 5)
    return MultiphotonRateModel(c20, c11, c12, d20, d11)


class TestRates:
    def test_no_visible_light_no_transitions(self):
        m = MultiphotonRateModel(1, 2, 3, 4, 5)
        assert charge.ionization_rate(m, 0.0, 37.0) == 0.0
        assert charge.recombination_rate(m, 0.0, 5.0) == 0.0

    def test_unit_coefficients(self):
        assert charge.ionization_rate(MultiphotonRateModel(1, 2, 3, 0, 0), 1, 1) == 6.0
        assert charge.recombination_rate(MultiphotonRateModel(0, 0, 0, 1, 6.69), 1, 1) == \
            pytest.approx(7.69)

    def test_negative_power_rejected(self):
        m = MultiphotonRateModel(1, 1, 1, 1, 1)
        with pytest.raises(DomainError):
            charge.ionization_rate(m, -1.0, 1.0)
        with pytest.raises(DomainError):
            charge.recombination_rate(m, 1.0, -1.0)

    def test_negative_coefficient_rejected(self):
        with pytest.raises(DomainError):
            MultiphotonRateModel(-1, 0, 0, 0, 0)

    def test_recombination_linear_in_nir(self):
        m = MultiphotonRateModel(0.1, 0.2, 0.3, 0.4, 0.5)
        r = np.linspace(0, 100, 11)
        slopes = np.diff([charge.recombination_rate(m, 2.0, x) for x in r]) / np.diff(r)
        assert np.allclose(slopes, slopes[0], rtol=1e-12)


class TestEvolve:
    def test_symmetric_rates_long_time(self):
        p = charge.evolve(ChargePopulation(1, 0), 1.0, 1.0, 1e6)
        assert p.p_minus == pytest.approx(0.5, abs=1e-12)

    def test_zero_time_is_identity(self):
        p0 = ChargePopulation(0.3, 0.7)
        assert charge.evolve(p0, 5.0, 2.0, 0.0) == p0

    def test_zero_rates_leave_population(self):
        p0 = ChargePopulation(0.3, 0.7)
        assert charge.evolve(p0, 0.0, 0.0, 10.0) == p0

    def test_matches_runge_kutta(self):
        exact = charge.evolve(ChargePopulation(0.2, 0.8), 0.3, 0.7, 2.0).p_minus
        assert exact == pytest.approx(rk4_minus(0.2, 0.3, 0.7, 2.0), abs=1e-9)

    def test_negative_time_rejected(self):
        with pytest.raises(DomainError):
            charge.evolve(ChargePopulation(1, 0), 1, 1, -1)

    @given(prob, rate, rate, st.floats(0, 5), st.floats(0, 5))
    def test_semigroup(self, p, ki, kr, t1, t2):
        p0 = ChargePopulation.from_minus(p)
        two = charge.evolve(charge.evolve(p0, ki, kr, t1), ki, kr, t2)
        one = charge.evolve(p0, ki, kr, t1 + t2)
        assert two.p_minus == pytest.approx(one.p_minus, abs=1e-9)

    @given(prob, rate, rate, st.floats(0, 1e3))
    def test_output_is_population(self, p, ki, kr, t):
        out = charge.evolve(ChargePopulation.from_minus(p), ki, kr, t)
        assert 0 <= out.p_minus <= 1
        assert abs(out.p_minus + out.p_zero - 1) < 1e-9

    def test_evolution_matrix_column_stochastic(self):
        M = charge.evolution_matrix(0.4, 1.3, 0.7)
        assert np.allclose(M.sum(axis=0), 1.0, atol=1e-12)


class TestSteadyState:
    def test_visible_only_value(self):
        m = MultiphotonRateModel(0.22, 1.0, 1.0, 0.78, 1.0)
        assert charge.steady_state(m, 3.0, 0.0).p_minus == pytest.approx(0.78, abs=1e-12)

    def test_strong_singlet_ionization_empties_nv_minus(self):
        m = MultiphotonRateModel(0.2, 0.1, 1e9, 0.8, 0.1)
        assert charge.steady_state(m, 1.0, 50.0).p_minus < 1e-6

    def test_no_light_is_degenerate(self):
        with pytest.raises(DegeneracyError):
            charge.steady_state(MultiphotonRateModel(1, 1, 1, 1, 1), 0.0, 0.0)

    @given(st.integers(0, 2**32 - 1), st.floats(0.01, 50), st.floats(0, 100), st.floats(0, 10))
    @settings(max_examples=50)
    def test_is_fixed_point_of_evolve(self, seed, g, r, t):
        m = random_model(np.random.default_rng(seed))
        ss = charge.steady_state(m, g, r)
        out = charge.evolve(ss, charge.ionization_rate(m, g, r), charge.recombination_rate(m, g, r), t)
        assert out.p_minus == pytest.approx(ss.p_minus, abs=1e-12)

    def test_parametric_identity_random_models(self):
        rng = np.random.default_rng(11)
        for _ in range(100):
            m = random_model(rng)
            g, r = rng.uniform(0.1, 50), rng.uniform(0, 100)
            direct = charge.steady_state(m, g, r).p_minus
            via = charge.steady_state_parametric(charge.derive_params(m, g), r)
            assert abs(direct - via) < 1e-12


class TestParametric:
    def test_zero_power_returns_gamma(self):
        assert charge.steady_state_parametric(SteadyStateParams(1, 2, 0.6, 3), 0.0) == 0.6

    def test_cancelling_factors(self):
        p = SteadyStateParams(alpha=0.3, beta=0.0, gamma=0.7, delta=0.3)
        for r in (0, 1, 10, 100):
            assert charge.steady_state_parametric(p, r) == pytest.approx(0.7)

    def test_peak_above_ninety_percent(self):
        p = SteadyStateParams(alpha=0.02, beta=1 / 11200, gamma=0.78, delta=0.01)
        curve = [charge.steady_state_parametric(p, r) for r in np.linspace(0, 100, 1001)]
        i = int(np.argmax(curve))
        assert curve[i] > 0.90 and 0 < i < 1000

    @given(st.floats(0, 1), st.floats(0, 1), prob, st.floats(0, 1), st.floats(0.1, 10),
           st.floats(0, 100))
    def test_unit_rescaling_invariance(self, a, b, g, d, k, r):
        p = SteadyStateParams(a, b, g, d)
        q = SteadyStateParams(k * a, k * k * b, g, k * d)
        assert charge.steady_state_parametric(q, r / k) == pytest.approx(
            charge.steady_state_parametric(p, r), rel=1e-9, abs=1e-12)

    def test_negative_power_rejected(self):
        with pytest.raises(DomainError):
            charge.steady_state_parametric(SteadyStateParams(1, 1, 0.5, 1), -1)


class TestDeriveParams:
    def test_one_over_g_scaling(self):
        m = MultiphotonRateModel(0.3, 0.2, 0.1, 0.9, 0.5)
        p1, p2 = charge.derive_params(m, 1.5), charge.derive_params(m, 3.0)
        assert p2.alpha == pytest.approx(p1.alpha / 2)
        assert p2.beta == pytest.approx(p1.beta / 2)
        assert p2.delta == pytest.approx(p1.delta / 2)
        assert p2.gamma == p1.gamma

    def test_balanced_visible_rates(self):
        p = charge.derive_params(MultiphotonRateModel(1.0, 0, 0, 1.0, 0), 2.0)
        assert p.gamma == 0.5
        assert p.alpha == p.beta == p.delta == 0.0

    def test_errors(self):
        with pytest.raises(DomainError):
            charge.derive_params(MultiphotonRateModel(1, 1, 1, 1, 1), 0.0)
        with pytest.raises(DomainError):
            charge.derive_params(MultiphotonRateModel(1, 1, 1, 0, 1), 1.0)


class TestRatioDiagnostics:
    def test_reported_ratios_recovered(self):
        d11 = 0.0967
        m = MultiphotonRateModel(c20=0.02716, c11=d11 / 6.69, c12=7.4e-3 * d11, d20=0.0963, d11=d11)
        diag = charge.ratio_diagnostics(charge.derive_params(m, 7.0))
        assert diag.d11_over_c11 == pytest.approx(6.69, rel=1e-12)
        assert diag.c12_over_d11 == pytest.approx(7.4e-3, rel=1e-12)
        assert diag.d20_over_c20 == pytest.approx(0.0963 / 0.02716, rel=1e-12)

    def test_unbounded_limit(self):
        diag = charge.ratio_diagnostics(SteadyStateParams(alpha=1.0, beta=0.1, gamma=1.0, delta=1.0))
        assert diag.unbounded and math.isinf(diag.d11_over_c11)

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=30)
    def test_synthetic_ratios_roundtrip(self, seed):
        m = random_model(np.random.default_rng(seed))
        diag = charge.ratio_diagnostics(charge.derive_params(m, 2.0))
        assert diag.d11_over_c11 == pytest.approx(m.d11 / m.c11, rel=1e-9)
        assert diag.c12_over_d11 == pytest.approx(m.c12 / m.d11, rel=1e-9)

    def test_inconsistent_parameters_rejected(self):
        with pytest.raises(DomainError):
            charge.ratio_diagnostics(SteadyStateParams(alpha=0.02, beta=1e-4, gamma=0.78, delta=0.01))


class TestNir:
    def test_ionization_offset(self):
        assert charge.nir_only_rate(NirRatePolynomial(4.7e-7, 0, 0.039), 0.0) == 0.039

    def test_recombination_value(self):
        poly = NirRatePolynomial(5.1e-7, 8.4e-5, 1e-7)
        assert charge.nir_only_rate(poly, 10.0) == pytest.approx(5.1e-4 + 8.4e-3 + 1e-7, rel=1e-12)

    def test_zero_polynomial(self):
        assert charge.nir_only_rate(NirRatePolynomial(1e-6), 0.0) == 0.0

    def test_negative_polynomial_rejected(self):
        with pytest.raises(DomainError):
            NirRatePolynomial(1e-6, -1e-3, 0.0)

    def test_destructive_readout_alone(self):
        zero = NirRatePolynomial(0.0)
        p = charge.nir_equilibrium(zero, zero, 0.0, D_READOUT, 10.0)
        assert p.p_minus == pytest.approx(0.125, abs=1e-12)

    def test_identity_readout_gives_rate_steady_state(self):
        ion, rec = NirRatePolynomial(4.7e-7, 0, 0.039), NirRatePolynomial(5.1e-7, 8.4e-5, 1e-7)
        p = charge.nir_equilibrium(ion, rec, 60.0, DestructivityMatrix.identity(), 10.0)
        k_i, k_r = ion(60.0), rec(60.0)
        assert p.p_minus == pytest.approx(k_r / (k_i + k_r), abs=1e-12)

    def test_degenerate_cycle(self):
        zero = NirRatePolynomial(0.0)
        with pytest.raises(DegeneracyError):
            charge.nir_equilibrium(zero, zero, 10.0, DestructivityMatrix.identity())

    @given(st.floats(0, 100), st.floats(0.1, 100))
    @settings(max_examples=50)
    def test_cycle_matrix_has_unit_eigenvalue(self, r, t):
        ion, rec = NirRatePolynomial(4.7e-7, 0, 0.039), NirRatePolynomial(5.1e-7, 8.4e-5, 1e-7)
        A = charge.evolution_matrix(ion(r), rec(r), t) @ D_READOUT.matrix
        assert np.allclose(A.sum(axis=0), 1.0, atol=1e-12)
        assert abs(np.max(np.abs(np.linalg.eigvals(A))) - 1.0) < 1e-9
        p = charge.nir_equilibrium(ion, rec, r, D_READOUT, t)
        assert np.allclose(A @ p.as_array(), p.as_array(), atol=1e-9)

    def test_band_brackets_curve(self, profile):
        r = np.linspace(0, 100, 11)
        lo, med, up = charge.nir_equilibrium_band(
            profile.nir_ionization, profile.nir_recombination, profile.nir_ionization_sigma,
            profile.nir_recombination_sigma, r, profile.destructivity, 10.0, n_draws=400)
        assert np.all(lo <= med) and np.all(med <= up)
        assert np.all((lo >= 0) & (up <= 1))

    def test_destructivity_matrix_validation(self):
        with pytest.raises(DomainError):
            DestructivityMatrix(np.array([[0.5, 0.1], [0.4, 0.9]]))


class TestChargePopulation:
    def test_sum_enforced(self):
        with pytest.raises(DomainError):
            ChargePopulation(0.5, 0.6)

    def test_round_off_clipped(self):
        assert ChargePopulation.from_minus(1 + 1e-12).p_minus == 1.0
