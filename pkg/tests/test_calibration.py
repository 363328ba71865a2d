import pytest

from reramdse.calibration import Anchor, CalibrationError, anchors_from_config, calibrate_to_anchors
from reramdse.circuit import CrossbarConfig
from reramdse.device import DeviceParams
from reramdse.device import calibrate_to_anchors as device_entry


def test_recovers_known_parameters():
    truth = DeviceParams.from_ratio(40e-6)
    anchors = anchors_from_config(CrossbarConfig(64, r_seg=2.0), truth, [(32, None), (32, 64), (64, None)])
    fit = calibrate_to_anchors(anchors)
    assert fit.device.g_lrs == pytest.approx(40e-6, rel=0.02)
    assert fit.r_seg == pytest.approx(2.0, rel=0.02)
    assert fit.max_residual < 1e-3
    assert fit.device.g_lrs / fit.device.g_hrs == pytest.approx(100)
    assert "32x32 of 64x64" in fit.report()


def test_zero_wire_resistance():
    g = 40e-6
    fit = calibrate_to_anchors([(8, 64 * g), (16, 256 * g)])
    assert fit.r_seg == 0.0
    assert fit.device.g_lrs == pytest.approx(g, rel=1e-12)
    assert fit.nonlinear_evaluations == 0


def test_conductance_only_with_fixed_wire():
    truth = DeviceParams.from_ratio(55e-6)
    anchors = anchors_from_config(CrossbarConfig(32, r_seg=1.0), truth, [(32, None)])
    fit = device_entry(anchors, ("g_lrs",), r_seg=1.0)
    assert fit.r_seg == 1.0
    assert fit.device.g_lrs == pytest.approx(55e-6, rel=1e-3)
    fit0 = calibrate_to_anchors([(10, 100 * 3e-5)], ("g_lrs",), r_seg=0.0)
    assert fit0.device.g_lrs == pytest.approx(3e-5)


def test_argument_checks():
    with pytest.raises(ValueError):
        calibrate_to_anchors([(32, 0.05)])  # two free parameters, one anchor
    with pytest.raises(ValueError):
        calibrate_to_anchors([(32, 0.05), (64, 0.2)], ("g_hrs",))
    with pytest.raises(ValueError):
        Anchor(64, 0.1, from_n=32)
    with pytest.raises(ValueError):
        Anchor(64, -0.1)


def test_unreachable_anchors_raise_with_best_attempt():
    # A sub-array can never carry more than the array it is cut from at equal size
    # and at the same time exceed the parasitic-free bound.
    with pytest.raises(CalibrationError) as info:
        calibrate_to_anchors([Anchor(16, 0.010), Anchor(16, 0.020, 32)], max_iter=3)
    assert info.value.result is not None
    assert info.value.result.max_residual > 0.05
