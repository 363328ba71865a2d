import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from oracle import dense_linear_crossbar

from reramdse.circuit import CellArray, CrossbarConfig
from reramdse.device import CellState, DeviceParams, cell_current
from reramdse.testbench import (AdcQuantizer, CharacterizationError, CharacterizationResult, TestbenchConfig,
                                characterize, extract_geff, per_cell_rmse, quantize_current, reference_current,
                                run_segment, sweep_segments, triangle_samples, worst_case_array_power)

DEVICE = DeviceParams()


def test_triangle_samples():
    np.testing.assert_allclose(triangle_samples(0.2, 5), [0, 0.1, 0.2, 0.1, 0], atol=1e-16)
    v = triangle_samples(0.2, 33)
    assert v.size == 33 and v.max() == 0.2 and v.min() == 0
    assert v.sum() == pytest.approx(3.2)
    np.testing.assert_array_equal(v, v[::-1])
    for k in range(3, 12):
        v = triangle_samples(0.3, k)
        assert v.size == k and v.max() == 0.3 and v[0] == v[-1] == 0
    with pytest.raises(ValueError):
        triangle_samples(0.2, 2)


def test_reference_current():
    assert np.all(reference_current(DEVICE.lrs, np.zeros(4)) == 0)
    assert reference_current(DEVICE.lrs, [0.2])[0] == pytest.approx(9.6e-6, rel=1e-12)
    one = run_segment(CrossbarConfig(1, r_seg=0), CellState.LRS, 0, [0.05, 0.2], device=DEVICE)
    np.testing.assert_array_equal(one[0], reference_current(DEVICE.lrs, [0.05, 0.2]))


def test_quantizer_examples():
    adc = AdcQuantizer(1, 1e-6)
    assert quantize_current(adc, 0.0) == 0.0
    assert quantize_current(adc, 0.5e-6) == pytest.approx(0.5e-6)
    assert quantize_current(adc, 2e-6) == 1e-6 and adc.clip_count([2e-6, -1e-9, 0.3e-6]) == 2
    with pytest.raises(ValueError):
        AdcQuantizer(0, 1e-6)
    with pytest.raises(ValueError):
        AdcQuantizer(4, 0.0)


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 20), st.floats(1e-9, 1e-3), st.floats(-0.2, 1.2))
def test_quantizer_properties(bits, fs, frac):
    adc = AdcQuantizer(bits, fs)
    i = frac * fs
    q = quantize_current(adc, i)
    assert quantize_current(adc, q) == q
    assert 0 <= q <= fs
    if 0 <= i <= fs:
        assert abs(q - i) <= adc.lsb / 2 * (1 + 1e-9)


def test_run_segment_parasitic_free_equals_reference():
    v = triangle_samples(0.2, 9)
    cur = run_segment(CrossbarConfig(6, r_seg=0), CellState.LRS, 2, v, device=DEVICE)
    ref = reference_current(DEVICE.lrs, v)
    np.testing.assert_array_equal(cur, np.broadcast_to(ref, cur.shape))


def test_run_segment_matches_oracle_and_far_end_deviates_more():
    n = 2
    g = np.array([[3e-5, 5e-5], [4e-5, 2e-5]])
    v = triangle_samples(0.2, 5)
    cur = run_segment(CrossbarConfig(n, r_seg=50.0), CellArray.linear(g), 1, v)
    for k, vk in enumerate(v):
        _, _, cols = dense_linear_crossbar(g, 50.0, [0.0, vk])
        np.testing.assert_allclose(cur[:, k], cols, rtol=1e-9, atol=1e-30)

    n = 16
    cur = run_segment(CrossbarConfig(n, r_seg=2.0), CellState.LRS, n - 1, triangle_samples(0.2, 7), device=DEVICE)
    dev = np.abs(cur - reference_current(DEVICE.lrs, triangle_samples(0.2, 7))).max(axis=1)
    assert dev[-1] > dev[0]


def test_run_segment_row_check():
    with pytest.raises(IndexError):
        run_segment(CrossbarConfig(3), CellState.LRS, 3, [0.1], device=DEVICE)


def test_rmse_closed_form_small_network():
    n = 2
    g = np.full((n, n), 4e-5)
    v = triangle_samples(0.2, 5)
    cells = CellArray.linear(g)
    tb = TestbenchConfig(samples_per_segment=5)
    dev = DeviceParams(g_lrs=4e-5, g_hrs=4e-7)
    rmse = per_cell_rmse(CrossbarConfig(n, r_seg=30.0), dev, tb, cells=cells)
    expected = np.zeros((n, n))
    for i in range(n):
        cols = np.array([dense_linear_crossbar(g, 30.0, np.eye(n)[i] * vk)[2] for vk in v])
        expected[i] = np.sqrt(np.mean((cols - (4e-5 * v)[:, None]) ** 2, axis=0))
    np.testing.assert_allclose(rmse, expected, rtol=1e-6)


def test_rmse_peaks_at_far_corner():
    rmse = per_cell_rmse(CrossbarConfig(12, r_seg=2.0), DEVICE, TestbenchConfig(samples_per_segment=5,
                                                                              error_state="LRS"))
    assert np.unravel_index(np.argmax(rmse), rmse.shape) == (11, 11)
    assert np.all(np.diff(rmse, axis=0) >= 0) and np.all(np.diff(rmse, axis=1) >= 0)


def test_geff_examples():
    g = extract_geff(CrossbarConfig(5, r_seg=0), DEVICE)
    np.testing.assert_allclose(g, DEVICE.g_lrs, rtol=1e-15)
    g = extract_geff(CrossbarConfig(12, r_seg=2.0), DEVICE)
    assert np.all(g > 0) and np.all(g <= DEVICE.g_lrs)
    assert g[0, 0] > g[-1, -1]
    with pytest.raises(ValueError):
        extract_geff(CrossbarConfig(3), DEVICE, v=0)


def test_worst_case_power():
    p = worst_case_array_power(np.array([[0.5, 0.5]]), 0.2)
    assert p.total == pytest.approx(0.04) and p.sum_g == 1.0 and p.v_squared == pytest.approx(0.04)
    assert worst_case_array_power(np.ones((2, 2)), 0.4).total == pytest.approx(4 * worst_case_array_power(
        np.ones((2, 2)), 0.2).total)
    assert worst_case_array_power(np.full((1, 1), 0.790), 0.2).total == pytest.approx(31.6e-3)


def test_characterize_reuses_currents(monkeypatch):
    import reramdse.testbench as tbm

    calls = []
    real = tbm.sweep_segments

    def counting(*a, **k):
        calls.append(1)
        return real(*a, **k)

    monkeypatch.setattr(tbm, "sweep_segments", counting)
    cfg = CrossbarConfig(8, r_seg=1.0)
    tb = TestbenchConfig(samples_per_segment=9, error_state="LRS")
    res = characterize(cfg, DEVICE, tb, bits_list=[6, 8, 10], workers=1)
    assert len(calls) == 1 and res.bits == [6, 8, 10]
    before = {b: m.copy() for b, m in res.rmse.items()}
    res.add_bits([4, 6, 12])
    assert len(calls) == 1
    for b, m in before.items():
        np.testing.assert_array_equal(res.rmse[b], m)
    empty = characterize(cfg, DEVICE, tb, workers=1)
    assert list(empty.rmse) == [None]


def test_characterize_invariants_and_persistence(tmp_path):
    cfg = CrossbarConfig(10, r_seg=1.5)
    res = characterize(cfg, DEVICE, TestbenchConfig(samples_per_segment=9), bits_list=[4, 6, 8], workers=1)
    assert np.all(res.geff > 0) and np.all(res.geff <= DEVICE.g_lrs)
    maxima = [res.rmse_max(b) for b in (4, 6, 8)]
    assert maxima[0] >= maxima[1] >= maxima[2] >= res.rmse_max()
    res.save(tmp_path / "r")
    back = CharacterizationResult.load(tmp_path / "r")
    np.testing.assert_array_equal(back.geff, res.geff)
    for b in res.rmse:
        np.testing.assert_array_equal(back.rmse[b], res.rmse[b])
    assert back.fingerprint == res.fingerprint
    assert {p.name for p in (tmp_path / "r").iterdir()} == {
        "geff.csv", "rmse_analog.csv", "rmse_b4.csv", "rmse_b6.csv", "rmse_b8.csv", "meta.json"}
    other = characterize(CrossbarConfig(10, r_seg=1.6), DEVICE, TestbenchConfig(samples_per_segment=9), workers=1)
    assert other.fingerprint != res.fingerprint


def test_parasitic_free_characterization_is_exact():
    res = characterize(CrossbarConfig(8, r_seg=0), DEVICE, bits_list=[], workers=1)
    assert np.all(res.rmse[None] == 0)
    assert np.all(res.geff == res.geff[0, 0])


def test_worker_count_does_not_change_results():
    cfg = CrossbarConfig(40, r_seg=1.0)
    cells = CellArray.uniform(40, DEVICE.lrs)
    v = triangle_samples(0.2, 5)
    one = sweep_segments(cfg, cells, v, workers=1)
    three = sweep_segments(cfg, cells, v, workers=3)
    np.testing.assert_array_equal(one, three)


def test_segment_failures_are_aggregated():
    from reramdse.circuit import SolverOptions

    with pytest.raises(CharacterizationError) as info:
        sweep_segments(CrossbarConfig(20, r_seg=1.0), CellArray.uniform(20, DEVICE.lrs), [0.2],
                       options=SolverOptions(max_iter=1))
    assert len(info.value.failures) == 20


def test_fixed_full_scale_mode():
    tb = TestbenchConfig(full_scale_mode="fixed", full_scale_current=1e-5)
    assert tb.full_scale(DEVICE, 128) == 1e-5
    assert TestbenchConfig().full_scale(DEVICE, 4) == pytest.approx(4 * cell_current(DEVICE.lrs, 0.2))
    with pytest.raises(ValueError):
        TestbenchConfig(full_scale_mode="fixed")
    with pytest.raises(ValueError):
        TestbenchConfig(samples_per_segment=2)
