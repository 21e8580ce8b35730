import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import optimize, stats
from sklearn.base import clone

from nvreadout import charge, estimation, montecarlo, scc
from nvreadout.charge import SteadyStateParams
from nvreadout.estimation import (
    ExponentialDecayRegressor,
    PoissonMixtureEM,
    RatePolynomialRegressor,
    SccJointRegressor,
    SteadyStateRegressor,
)
from nvreadout.estimation._lm import levenberg_marquardt
from nvreadout.montecarlo import TrajectoryConfig
from nvreadout.photon import PoissonMixture
from nvreadout.scc import SccParams
from nvreadout._validation import DomainError

R = np.linspace(5.0, 100.0, 12)
SS_TRUE = SteadyStateParams(alpha=0.02, beta=1 / 11200, gamma=0.78, delta=0.01)
SCC_TRUE = SccParams(p_ion=0.005, k35=0.033, k45=0.25, p_sing=0.32, k51_over_k52=2.26,
                     spin_init=0.85, charge_init_nv0=0.04)


def steady_curve(p, r):
    return np.array([charge.steady_state_parametric(p, x) for x in r])


class TestRatePolynomial:
    a, b, c = 4.7e-7, 1e-5, 0.02

    def rates(self, r):
        return self.a * r**3 + self.b * r**2 + self.c

    def test_exact_recovery(self):
        fit = estimation.fit_rate_polynomial(np.column_stack([R, self.rates(R)]))
        assert np.allclose(fit.values, [self.a, self.b, self.c], rtol=1e-8, atol=1e-12)
        assert fit.r2 == pytest.approx(1.0)

    def test_matches_normal_equations(self):
        rng = np.random.default_rng(3)
        sig = np.full(R.size, 0.002)
        y = self.rates(R) + rng.normal(0, sig)
        fit = estimation.fit_rate_polynomial(np.column_stack([R, y, sig]))
        D = np.column_stack([R**3, R**2, np.ones_like(R)]) / sig[:, None]
        normal = np.linalg.solve(D.T @ D, D.T @ (y / sig))
        assert np.allclose(fit.values, normal, rtol=1e-10, atol=1e-14)
        assert np.allclose(fit.covariance, np.linalg.inv(D.T @ D), rtol=1e-8)

    def test_without_quadratic_term(self):
        y = self.a * R**3 + self.c
        fit = estimation.fit_rate_polynomial(np.column_stack([R, y]), include_quadratic=False)
        assert fit["b"] == 0.0 and fit.error("b") == 0.0 and fit.flags["b_fixed"]
        assert fit["a"] == pytest.approx(self.a)

    def test_ci65_coverage(self):
        rng = np.random.default_rng(11)
        sig = np.full(R.size, 0.003)
        hits = 0
        for _ in range(200):
            y = self.rates(R) + rng.normal(0, sig)
            fit = estimation.fit_rate_polynomial(np.column_stack([R, y, sig]))
            hits += abs(fit["a"] - self.a) <= fit.ci65[0]
        assert hits / 200 >= 0.55

    def test_sklearn_protocol(self):
        est = RatePolynomialRegressor(include_quadratic=False)
        assert clone(est).get_params() == {"include_quadratic": False}
        est.fit(R, self.rates(R))
        assert est.score(R, est.predict(R)) == pytest.approx(1.0)

    def test_too_few_points(self):
        with pytest.raises(DomainError):
            estimation.fit_rate_polynomial([[1.0, 2.0], [2.0, 3.0]])


class TestSteadyState:
    def test_noiseless_recovery(self):
        est = SteadyStateRegressor().fit(R, steady_curve(SS_TRUE, R))
        got = est.fit_result_.values
        assert np.allclose(got, [0.02, 1 / 11200, 0.78, 0.01], rtol=1e-4)

    def test_cost_history_strictly_decreasing(self):
        rng = np.random.default_rng(0)
        y = steady_curve(SS_TRUE, R) + rng.normal(0, 0.01, R.size)
        hist = SteadyStateRegressor().fit(R, y).cost_history_
        assert all(b < a for a, b in zip(hist, hist[1:]))

    def test_agrees_with_scipy(self):
        rng = np.random.default_rng(1)
        y = steady_curve(SS_TRUE, R) + rng.normal(0, 0.01, R.size)
        ours = SteadyStateRegressor().fit(R, y)

        def resid(t):
            a, b, g, d = t
            return g * (1 + a * R) / (1 + d * R + b * R**2) - y

        ref = optimize.least_squares(resid, [0.02, 1e-4, 0.7, 0.01],
                                     bounds=([0, 0, 0, 0], [np.inf, np.inf, 1, np.inf]),
                                     xtol=1e-15, ftol=1e-15, gtol=1e-15)
        cost = float(np.sum(resid(ours.fit_result_.values) ** 2))
        assert cost <= 2 * ref.cost * (1 + 1e-6)

    def test_visible_power_scaling(self, profile):
        model = profile.rate_model
        fits = {}
        for g in (20.0, 40.0):
            p = [charge.steady_state(model, g, r).p_minus for r in R]
            fits[g] = SteadyStateRegressor().fit(R, p).fit_result_
        for name in ("alpha", "beta", "delta"):
            assert fits[20.0][name] / fits[40.0][name] == pytest.approx(2.0, rel=1e-3)
        assert fits[20.0]["gamma"] == pytest.approx(fits[40.0]["gamma"], rel=1e-6)

    def test_scaling_check_is_calibrated(self, profile):
        model, r = profile.rate_model, np.linspace(0.0, 100.0, 21)
        rng = np.random.default_rng(31)
        sig = np.full(r.size, 0.003)
        inside = []
        for _ in range(40):
            fits = []
            for g in (20.0, 40.0):
                p = np.array([charge.steady_state(model, g, x).p_minus for x in r])
                fits.append(estimation.fit_steady_state(
                    np.column_stack([r, p + rng.normal(0, sig), sig])))
            lo, hi = fits
            z = (lo["alpha"] - 2 * hi["alpha"]) / math.hypot(lo.error("alpha"), 2 * hi.error("alpha"))
            inside.append(abs(z) <= 1.96)
        assert np.mean(inside) >= 0.85

    def test_needs_five_points(self):
        with pytest.raises(DomainError):
            estimation.fit_steady_state([[1, 0.5], [2, 0.6], [3, 0.7], [4, 0.7]])


def test_lm_matches_scipy_on_rosenbrock_residuals():
    def fun(x):
        return np.array([10 * (x[1] - x[0] ** 2), 1 - x[0]])

    res = levenberg_marquardt(fun, [-1.2, 1.0])
    assert np.allclose(res.x, [1.0, 1.0], atol=1e-5)
    ref = optimize.least_squares(fun, [-1.2, 1.0])
    assert np.allclose(res.x, ref.x, atol=1e-5)


class TestExponential:
    t = np.linspace(0.0, 800.0, 40)

    def test_recovery(self):
        y = 0.3 * np.exp(-self.t / 182.0) + 0.1
        fit = estimation.fit_exponential(np.column_stack([self.t, y]))
        assert fit.values == pytest.approx([0.3, 182.0, 0.1], rel=1e-5)
        assert not fit.flags["lifetime_unidentifiable"]

    def test_offset_only_flags_lifetime(self):
        rng = np.random.default_rng(4)
        y = 0.5 + rng.normal(0, 0.01, self.t.size)
        fit = ExponentialDecayRegressor().fit(self.t, y, np.full(self.t.size, 0.01)).fit_result_
        assert fit.flags["lifetime_unidentifiable"]
        assert fit["offset"] == pytest.approx(0.5, abs=0.01)


class TestPoissonMixture:
    mixture = PoissonMixture(0.45, 10.0, 0.5)

    def histogram(self, shots=20000, seed=5):
        return montecarlo.simulate_charge_histogram(self.mixture, 3.0, TrajectoryConfig(seed, shots))

    def test_recovery(self):
        fit = estimation.fit_poisson_mixture(self.histogram())
        est = fit.values
        assert abs(est[0] - 0.45) < 4 * fit.stderr[0]
        assert abs(est[1] - 10.0) < 4 * fit.stderr[1]
        assert abs(est[2] - 0.5) < 4 * fit.stderr[2]
        assert not fit.flags["degenerate"]

    def test_log_likelihood_nondecreasing(self):
        em = PoissonMixtureEM().fit_histogram(self.histogram(5000))
        hist = np.asarray(em.log_likelihood_history_)
        assert np.all(np.diff(hist) >= -1e-9)

    def test_single_component_is_degenerate(self):
        counts = np.random.default_rng(2).poisson(4.0, 5000)
        fit = PoissonMixtureEM().fit(counts).fit_result_
        assert fit.flags["degenerate"]
        assert math.isnan(fit["eta_zero"]) and fit["weight_minus"] == 1.0
        assert fit["eta_minus"] == pytest.approx(counts.mean())

    def test_posterior_classification(self):
        em = PoissonMixtureEM().fit_histogram(self.histogram())
        proba = em.predict_proba([0, 12])
        assert proba.shape == (2,) and proba[0] < 0.01 < 0.99 < proba[1]
        assert list(em.predict([0, 12])) == [0, 1]
        assert np.isfinite(em.score(np.arange(20)))


class TestRateFromTransitions:
    def test_values(self):
        est = estimation.rate_from_transitions(50, 1000, 0.5)
        assert est.rate == pytest.approx(0.1) and est.upper_bound is None
        assert est.error == pytest.approx(math.sqrt(0.05 * 0.95 / 1000) / 0.5)

    def test_zero_events_upper_bound(self):
        est = estimation.rate_from_transitions(0, 1000, 1.0)
        assert est.rate == 0.0
        assert est.upper_bound == pytest.approx(1 - 0.05 ** (1 / 1000))

    def test_recovers_simulated_rate(self):
        cfg = TrajectoryConfig(seed=9, shots=40000)
        counts = montecarlo.simulate_rate_experiment(0.1, 0.0, 0.5, cfg)
        est = estimation.rate_from_transitions(counts.minus_transitions, counts.minus_trials, 0.5,
                                               log_correction=True)
        assert abs(est.rate - 0.1) < 4 * est.error

    def test_invalid(self):
        with pytest.raises(DomainError):
            estimation.rate_from_transitions(5, 4, 1.0)


class TestSccJoint:
    ns = np.arange(0, 16)

    def data(self, params=SCC_TRUE):
        return [np.column_stack([self.ns, estimation.scc_curve(params, np.full(self.ns.size, s),
                                                               self.ns)]) for s in (0, 1)]

    def test_noiseless_fit_reproduces_data(self):
        d0, d1 = self.data()
        est = SccJointRegressor().fit(
            np.vstack([np.column_stack([np.zeros(16), self.ns]), np.column_stack([np.ones(16), self.ns])]),
            np.concatenate([d0[:, 1], d1[:, 1]]))
        assert est.cost_ < 1e-16
        assert np.max(np.abs(est.predict(np.column_stack([np.zeros(16), self.ns])) - d0[:, 1])) < 1e-8

    def test_flat_direction_is_reported(self):
        d0, d1 = self.data()
        fit = estimation.fit_scc_joint(d0, d1, n_shots=10000)
        assert fit.flags["non_identifiable"]
        assert fit.flags["binomial_weights"]

    def test_fixing_spin_init_restores_identifiability(self):
        d0, d1 = self.data()
        fit = estimation.fit_scc_joint(d0, d1, n_shots=10000, fixed={"spin_init": 0.85})
        assert fit.flags["non_identifiable"] == []
        assert fit["k45"] == pytest.approx(0.25, rel=1e-4)
        assert fit["p_sing"] == pytest.approx(0.32, rel=1e-4)
        assert fit.error("spin_init") == 0.0

    def test_noisy_free_fit_flags_every_coupled_parameter(self):
        rng = np.random.default_rng(21)
        d0, d1 = self.data()
        for d in (d0, d1):
            d[:, 1] = rng.binomial(10000, d[:, 1]) / 10000
        fit = estimation.fit_scc_joint(d0, d1, n_shots=10000)
        assert set(fit.flags["non_identifiable"]) == {"k35", "k45", "p_sing", "k51_over_k52",
                                                      "spin_init"}
        assert np.isfinite(fit.error("charge_init_nv0"))
        pinned = estimation.fit_scc_joint(d0, d1, n_shots=10000, fixed={"spin_init": 0.85})
        assert pinned.flags["non_identifiable"] == []
        # the branching ratio's error is far from Gaussian, so only the others are z-tested
        assert all(abs(pinned[n] - getattr(SCC_TRUE, n)) <= 4 * pinned.error(n)
                   for n in ("charge_init_nv0", "k35", "k45", "p_sing"))

    def test_unknown_fixed_name(self):
        d0, d1 = self.data()
        with pytest.raises(DomainError):
            estimation.fit_scc_joint(d0, d1, fixed={"p_ion": 0.1})

    def test_sklearn_clone(self):
        est = SccJointRegressor(p_ion=0.01, fixed={"spin_init": 0.9})
        assert clone(est).get_params()["fixed"] == {"spin_init": 0.9}


@given(st.floats(0.01, 0.5), st.floats(20.0, 500.0), st.floats(0.0, 0.3))
@settings(max_examples=15, deadline=None)
def test_exponential_recovers_random_decays(amp, tau, off):
    t = np.linspace(0, 4 * tau, 30)
    fit = estimation.fit_exponential(np.column_stack([t, amp * np.exp(-t / tau) + off]))
    assert fit["lifetime"] == pytest.approx(tau, rel=1e-4)
