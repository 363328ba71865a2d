import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from reramdse._csv import read_grid
from reramdse.circuit import CrossbarConfig
from reramdse.dse import (AdcEnergyModel, Constraints, DesignPoint, Grid, NoFeasiblePoint, adc_energy,
                          drive_voltage_for_point, energy_efficiency, explore, export_heatmaps, throughput,
                          total_power)
from reramdse.surrogate import SurrogateModel

ADC = AdcEnergyModel.from_anchor(14, 39.19e-12)


@pytest.fixture(scope="module")
def model():
    sizes = (32, 64, 128, 256)
    bits = tuple(range(6, 15))
    grid = np.array([[0.02 * (n / 32) ** 1.5 + 2.0 ** -b * n / 8 for b in bits] for n in sizes])
    return SurrogateModel(
        sizes=sizes, bits=bits, rmse_max_grid=grid, rmse_max_analog=grid[:, -1] * 0.9,
        sum_g=np.array([0.0634, 0.2396, 0.790, 2.4]), profiles=tuple(np.linspace(0, 1, n) for n in sizes),
        fingerprint="synthetic", result_fingerprints=("a", "b", "c", "d"))


def test_adc_energy():
    assert adc_energy(ADC, 14) == pytest.approx(39.19e-12, rel=1e-15)
    assert adc_energy(ADC, 13) == pytest.approx(19.595e-12, rel=1e-15)
    assert adc_energy(ADC, 8) == pytest.approx(0.6123e-12, rel=1e-4)
    assert ADC.fom == pytest.approx(2.392e-15, rel=1e-3)
    np.testing.assert_allclose(ADC.energy(np.array([13, 14])), [19.595e-12, 39.19e-12])
    with pytest.raises(ValueError):
        adc_energy(ADC, 0)


def test_power_terms(model):
    p = total_power(model, ADC, DesignPoint(156, 111e6, 14), 0.2)
    assert p.adc == pytest.approx(156 * 39.19e-12 * 111e6) and p.adc == pytest.approx(0.679, abs=1e-3)
    tiny = total_power(model, ADC, DesignPoint(128, 1e-9, 14), 0.2)
    assert tiny.array == pytest.approx(0.790 * 0.04) and tiny.total == pytest.approx(tiny.array, rel=1e-12)
    p1 = total_power(model, ADC, DesignPoint(100, 1e8, 10), 0.3)
    p2 = total_power(model, ADC, DesignPoint(100, 2e8, 10), 0.3)
    assert p2.adc == pytest.approx(2 * p1.adc) and p2.array == p1.array
    with_dac = total_power(model, ADC, DesignPoint(100, 1e8, 10), 0.3, dac_power_per_row=1e-4)
    assert with_dac.total == pytest.approx(p1.total + 0.01)


def test_throughput():
    assert throughput(DesignPoint(156, 111e6, 8)) == pytest.approx(5.40e12, rel=1e-3)
    assert throughput(DesignPoint(1, 1.0, 8)) == 2
    assert throughput(DesignPoint(64, 1e6, 8)) / throughput(DesignPoint(32, 1e6, 8)) == 4
    assert throughput(DesignPoint(10, 1.0, 8), ops_per_mac=1) == 100


def test_efficiency_limits(model):
    n = 100
    for f in (1e6, 1e8):
        eff = energy_efficiency(model, ADC, DesignPoint(n, f, 10), v=1e-12)
        assert eff == pytest.approx(2 * n * n / (n * adc_energy(ADC, 10)) / 1e12, rel=1e-9)


@settings(max_examples=50, deadline=None)
@given(st.integers(32, 255), st.floats(1e6, 1e9), st.integers(6, 13), st.floats(0.05, 1.0))
def test_power_strictly_increasing(model, n, f, bits, v):
    base = total_power(model, ADC, DesignPoint(n, f, bits), v).total
    assert total_power(model, ADC, DesignPoint(n + 1, f, bits), v).total > base
    assert total_power(model, ADC, DesignPoint(n, f * 1.01, bits), v).total > base
    assert total_power(model, ADC, DesignPoint(n, f, bits + 1), v).total > base


def test_grid_from_ranges():
    g = Grid.from_ranges(n=(32, 40, 4), f=(10e6, 12e6, 1e6), bits=14)
    assert g.n.tolist() == [32, 36, 40] and g.f.tolist() == [10e6, 11e6, 12e6] and g.bits.tolist() == [14]
    with pytest.raises(ValueError):
        Grid(np.array([3, 2]), np.array([1.0]), np.array([8]))


def test_explore_is_exhaustive_argmax(model):
    grid = Grid.from_ranges(n=(32, 256, 8), f=(10e6, 500e6, 10e6), bits=(6, 14, 1))
    res = explore(model, ADC, grid, Constraints(max_power=0.5, max_rmse=0.3), v=0.5)
    eff = np.where(res.feasible, res.metrics["efficiency"], -np.inf)
    assert res.optimum.metrics["efficiency"] == pytest.approx(eff.max(), rel=1e-12)
    assert res.feasible[res.optimum.index]
    i, j, k = res.optimum.index
    assert res.metrics["power"][i, j, k] <= 0.5 and res.metrics["rmse"][i, j, k] <= 0.3


def test_relaxing_constraints_never_hurts(model):
    grid = Grid.from_ranges(n=(32, 256, 16), f=(10e6, 500e6, 20e6), bits=(6, 14, 2))
    tight = explore(model, ADC, grid, Constraints(max_power=0.3, max_rmse=0.2), v=0.5)
    loose = explore(model, ADC, grid, Constraints(max_power=0.6, max_rmse=0.4), v=0.5)
    assert np.all(loose.feasible[tight.feasible])
    assert loose.optimum.metrics["efficiency"] >= tight.optimum.metrics["efficiency"]


def test_unconstrained_power_goes_to_max_frequency(model):
    grid = Grid.from_ranges(n=128, f=(10e6, 500e6, 10e6), bits=10)
    res = explore(model, ADC, grid, Constraints(max_power=np.inf), v=0.5)
    assert res.optimum.point.f == grid.f[-1]


def test_tie_break_prefers_smallest_design(model):
    # v -> 0 makes efficiency independent of f: every f at fixed (n, bits) ties.
    grid = Grid.from_ranges(n=(64, 64, 1), f=(10e6, 50e6, 10e6), bits=(8, 10, 1))
    res = explore(model, ADC, grid, Constraints(max_power=np.inf), v=1e-30)
    assert res.optimum.point == DesignPoint(64, 10e6, 8)


def test_binding_power_boundary(model):
    grid = Grid.from_ranges(n=(32, 256, 1), f=(10e6, 500e6, 1e6), bits=14)
    res = explore(model, ADC, grid, Constraints(max_power=1.2), v=0.5)
    assert "power" in res.optimum.binding
    boundary = res.boundary_f()
    ok = ~np.isnan(boundary)
    assert np.all(np.diff(boundary[ok]) <= 0)


def test_no_feasible_point(model):
    grid = Grid.from_ranges(n=(32, 64, 16), f=(10e6, 20e6, 10e6), bits=(6, 8, 1))
    with pytest.raises(NoFeasiblePoint) as info:
        explore(model, ADC, grid, Constraints(max_power=1e-6), v=0.5)
    assert info.value.least_violating.point == DesignPoint(32, 10e6, 6)
    assert info.value.least_violating.binding == ("power",)


def test_elmore_constraint(model):
    wire = CrossbarConfig(32, r_seg=1e3, c_seg=1e-15)  # f_max 68.7 MHz at n=32, 17.3 MHz at n=64
    grid = Grid.from_ranges(n=(32, 64, 32), f=(10e6, 100e6, 10e6), bits=8)
    res = explore(model, ADC, grid, Constraints(elmore=True), v=0.5, wire=wire)
    assert res.masks["elmore"][0, :6, 0].all() and not res.masks["elmore"][0, 6:, 0].any()
    assert res.masks["elmore"][1, :1, 0].all() and not res.masks["elmore"][1, 1:, 0].any()
    assert np.all(res.metrics["f_max"][res.feasible] >= np.broadcast_to(grid.f[None, :, None],
                                                                         grid.shape)[res.feasible])
    with pytest.raises(ValueError):
        explore(model, ADC, grid, Constraints(elmore=True), v=0.5)


def test_drive_voltage_for_point(model):
    point = DesignPoint(156, 111e6, 14)
    v = drive_voltage_for_point(model, ADC, point, 1.2)
    assert total_power(model, ADC, point, v).total == pytest.approx(1.2, rel=1e-12)
    with pytest.raises(ValueError):
        drive_voltage_for_point(model, ADC, point, 0.1)


def test_export_heatmaps(model, tmp_path):
    one = Grid.from_ranges(n=64, f=100e6, bits=8)
    res = explore(model, ADC, one, Constraints(max_power=10.0), v=0.5)
    export_heatmaps(res, tmp_path / "one")
    rows, cols, m = read_grid(tmp_path / "one" / "efficiency.csv")
    assert m.shape == (1, 1) and rows.tolist() == [64] and cols.tolist() == [100e6]
    assert np.loadtxt(tmp_path / "one" / "axis_n.csv", delimiter=",").size == 1

    grid = Grid.from_ranges(n=(32, 256, 32), f=(10e6, 500e6, 50e6), bits=(6, 14, 4))
    res = explore(model, ADC, grid, Constraints(max_power=1.0), v=0.5)
    a = export_heatmaps(res, tmp_path / "a")
    b = export_heatmaps(res, tmp_path / "b")
    assert [p.name for p in a] == [p.name for p in b]
    for pa, pb in zip(a, b):
        assert pa.read_bytes() == pb.read_bytes()
    assert (tmp_path / "a" / "power_bits10.csv").exists()
    rows, cols, eff = read_grid(tmp_path / "a" / "efficiency_bits6.csv")
    np.testing.assert_array_equal(cols, grid.f)
    np.testing.assert_array_equal(rows, grid.n)
    np.testing.assert_array_equal(eff, res.metrics["efficiency"][:, :, 0])
