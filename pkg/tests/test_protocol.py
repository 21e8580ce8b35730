import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nvreadout import protocol
from nvreadout.protocol import CountRateModel, TimingBudget
from nvreadout.scc import SccEfficiency
from nvreadout._validation import DomainError

MODEL = CountRateModel()
DEMO = SccEfficiency(0.8, 0.6)
IDEAL = SccEfficiency(0.7, 0.19)


def test_calibration_point():
    eta0, eta1 = protocol.expected_counts(MODEL, 3000.0)
    assert eta0 == pytest.approx(0.45, abs=1e-9)
    assert eta1 == pytest.approx(10.08, abs=0.01)


def test_calibrations_invert_the_model():
    g_minus, g_zero = protocol.count_rates(MODEL, 3000.0)
    assert protocol.calibrate_bg_slope(MODEL, 3000.0, g_zero) == pytest.approx(MODEL.bg_slope)
    assert protocol.calibrate_tau_r0(MODEL, 3000.0, g_minus) == pytest.approx(550.0)
    assert protocol.calibrate_tau_r0(MODEL, 3000.0, 3.37) == pytest.approx(553, abs=2)


def test_saturation_limit():
    g_minus, _ = protocol.count_rates(MODEL, 1e-12)
    assert g_minus == pytest.approx(250.0 + 0.02, abs=1e-3)
    assert MODEL.saturated_rate_kcps == pytest.approx(250.0)


def test_printed_form_rate():
    m = CountRateModel(saturation_form="printed")
    x = protocol.scaled_power(m, 3000.0)
    assert protocol.count_rates(m, 3000.0)[0] == pytest.approx(250 / (1 + x) + 0.02)
    with pytest.raises(DomainError):
        protocol.calibrate_tau_r0(m, 3000.0, 3.0)
    with pytest.raises(DomainError):
        CountRateModel(saturation_form="other")


def test_total_time():
    assert protocol.total_time(TimingBudget(1.0, 10.0, 2.0), 0.5) == pytest.approx(13e-6 / 0.25)
    with pytest.raises(DomainError):
        protocol.total_time(TimingBudget(1, 1, 1), 0.0)


@pytest.mark.parametrize("tau_op", [0.1, 10.0, 1000.0])
def test_optimizer_beats_dense_grid(tau_op):
    opt = protocol.optimize_readout(DEMO, MODEL, 1.0, tau_op)
    grid = np.geomspace(0.1, 1e5, 4000)
    brute = min(protocol._scc_total_time(DEMO, MODEL, 1.0, tau_op, t) for t in grid)
    assert opt.total_time <= brute * (1 + 1e-6)
    assert not opt.multimodal


@given(st.floats(0.1, 1e4), st.floats(0.1, 1e4))
@settings(max_examples=20, deadline=None)
def test_speedup_grows_with_operation_time(a, b):
    lo, hi = sorted((a, b))
    s = protocol.speedup_sweep(DEMO, MODEL, [lo, hi])
    assert s[1].speedup >= s[0].speedup * (1 - 1e-6)


def test_optimal_readout_lengthens_with_operation_time():
    pts = protocol.speedup_sweep(DEMO, MODEL, [0.1, 10, 1000])
    assert pts[0].tau_read_opt < pts[1].tau_read_opt < pts[2].tau_read_opt


def test_printed_form_speedups():
    m = CountRateModel(saturation_form="printed")
    taus = np.geomspace(0.1, 1e4, 25)
    pts = protocol.speedup_sweep(DEMO, m, taus)
    assert min(p.speedup for p in pts) >= 1.0
    assert all(p.speedup > 10 for p in pts if p.tau_op >= 30.0)
    assert protocol.speedup(IDEAL, m, 0.05, 0.035, 0.2, 1.0, 1000.0) >= 100


def test_standard_form_speedup_values():
    pts = protocol.speedup_sweep(DEMO, MODEL, [0.1, 100.0, 1000.0])
    assert pts[0].speedup == pytest.approx(0.646, abs=0.01)
    assert pts[1].speedup == pytest.approx(6.0, abs=0.1)
    assert protocol.speedup(IDEAL, MODEL, 0.05, 0.035, 0.2, 1.0, 1000.0) == \
        pytest.approx(108.9, abs=0.5)


def test_zero_contrast_is_numerical_failure():
    from nvreadout._validation import NumericalError
    with pytest.raises(NumericalError):
        protocol.optimize_readout(SccEfficiency(0.5, 0.5), MODEL, 1.0, 1.0)


def test_readout_time_validation():
    with pytest.raises(DomainError):
        protocol.scaled_power(MODEL, 0.0)
    assert protocol.expected_counts(MODEL, 0.0) == (0.0, 0.0)
    assert math.isfinite(protocol.optimize_readout(DEMO, MODEL, 0.0, 0.0).total_time)
