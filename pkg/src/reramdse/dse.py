"""Power, throughput and efficiency over the ``(N, f, bits)`` design space.

Power of one array running one full MVM per ADC conversion period::

    P = sum_g(N) * V^2 + N * E_adc(bits) * f + N * P_dac_row

``sum_g`` comes from the surrogate (direct-simulation knots), ``E_adc`` from a
Walden figure of merit anchored at one reference (bits, energy) pair.  The
explorer evaluates every grid point and returns the most efficient feasible
one.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import _csv
from .circuit import CrossbarConfig, max_frequency
from .surrogate import SurrogateModel, predict_rmse_max, predict_sum_g

OPS_PER_MAC = 2
TIE_RTOL = 1e-12


@dataclass(frozen=True)
class AdcEnergyModel:
    """``E(bits) = fom * 2**bits`` (J per conversion)."""

    fom: float = 39.19e-12 / 2**14

    def __post_init__(self):
        if not self.fom > 0:
            raise ValueError("fom must be positive")

    @classmethod
    def from_anchor(cls, bits: int = 14, energy: float = 39.19e-12) -> "AdcEnergyModel":
        return cls(energy / 2.0 ** bits)

    def energy(self, bits):
        return adc_energy(self, bits)


def adc_energy(model: AdcEnergyModel, bits):
    b = np.asarray(bits)
    if np.any(b < 1):
        raise ValueError("bits must be >= 1")
    e = model.fom * np.exp2(b.astype(float))
    return float(e) if e.ndim == 0 else e


@dataclass(frozen=True)
class DesignPoint:
    n: int
    f: float
    bits: int

    def __post_init__(self):
        if self.n < 1 or not self.f > 0 or self.bits < 1:
            raise ValueError(f"invalid design point {self}")


@dataclass(frozen=True)
class PowerBreakdown:
    array: float
    adc: float
    dac: float = 0.0

    @property
    def total(self) -> float:
        return self.array + self.adc + self.dac


def total_power(surrogate: SurrogateModel, adc_model: AdcEnergyModel, point: DesignPoint, v: float,
                dac_power_per_row: float = 0.0) -> PowerBreakdown:
    """Worst-case array power plus ADC (and optional DAC) power at ``point``."""
    if not v > 0:
        raise ValueError("drive voltage must be positive")
    return PowerBreakdown(
        array=predict_sum_g(surrogate, point.n) * v * v,
        adc=point.n * adc_energy(adc_model, point.bits) * point.f,
        dac=point.n * dac_power_per_row,
    )


def throughput(point: DesignPoint, ops_per_mac: float = OPS_PER_MAC) -> float:
    """Operations per second: one ``n x n`` MVM per conversion period."""
    return ops_per_mac * point.n * point.n * point.f


def energy_efficiency(surrogate: SurrogateModel, adc_model: AdcEnergyModel, point: DesignPoint, v: float,
                      ops_per_mac: float = OPS_PER_MAC, dac_power_per_row: float = 0.0) -> float:
    """TOPs/s/W."""
    p = total_power(surrogate, adc_model, point, v, dac_power_per_row).total
    if not p > 0:
        raise ValueError("total power must be positive")
    return throughput(point, ops_per_mac) / p / 1e12


def drive_voltage_for_point(surrogate: SurrogateModel, adc_model: AdcEnergyModel, point: DesignPoint,
                            power: float, dac_power_per_row: float = 0.0) -> float:
    """Drive voltage that puts ``point`` exactly at total power ``power``."""
    rest = power - point.n * adc_energy(adc_model, point.bits) * point.f - point.n * dac_power_per_row
    if not rest > 0:
        raise ValueError(f"ADC and DAC power alone reach {power - rest:.4g} W >= {power:.4g} W at {point}")
    return math.sqrt(rest / predict_sum_g(surrogate, point.n))


# -- exploration ------------------------------------------------------------------

class NoFeasiblePoint(RuntimeError):
    def __init__(self, message, least_violating: "Optimum"):
        super().__init__(message)
        self.least_violating = least_violating


@dataclass(frozen=True)
class Grid:
    n: np.ndarray
    f: np.ndarray
    bits: np.ndarray

    def __post_init__(self):
        for name in ("n", "f", "bits"):
            a = np.atleast_1d(np.asarray(getattr(self, name)))
            if a.size == 0:
                raise ValueError(f"grid axis {name} is empty")
            if np.any(np.diff(a) <= 0):
                raise ValueError(f"grid axis {name} must be strictly increasing")
            object.__setattr__(self, name, a)
        if np.any(self.n < 1) or np.any(self.f <= 0) or np.any(self.bits < 1):
            raise ValueError("grid values must be positive")

    @classmethod
    def from_ranges(cls, n=(32, 256, 1), f=(10e6, 500e6, 1e6), bits=(6, 14, 1)) -> "Grid":
        """Inclusive ``(start, stop, step)`` ranges; a scalar fixes that axis."""
        def axis(spec, integer):
            if np.isscalar(spec):
                return np.array([spec])
            lo, hi, step = spec
            count = int(math.floor((hi - lo) / step + 1e-9)) + 1
            vals = lo + step * np.arange(count)
            return np.rint(vals).astype(int) if integer else vals
        return cls(axis(n, True), axis(f, False), axis(bits, True))

    @property
    def shape(self):
        return (self.n.size, self.f.size, self.bits.size)

    def point(self, idx) -> DesignPoint:
        i, j, k = idx
        return DesignPoint(int(self.n[i]), float(self.f[j]), int(self.bits[k]))


@dataclass(frozen=True)
class Constraints:
    max_power: float | None = None
    max_rmse: float | None = None
    elmore: bool = False

    def echo(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class Optimum:
    point: DesignPoint
    index: tuple
    metrics: dict
    binding: tuple = ()


@dataclass
class ExplorationResult:
    grid: Grid
    metrics: dict  # name -> array of grid.shape
    masks: dict  # constraint name -> bool array (True = satisfied); "feasible" is their conjunction
    optimum: Optimum
    constraints: Constraints
    settings: dict = field(default_factory=dict)

    @property
    def feasible(self) -> np.ndarray:
        return self.masks["feasible"]

    def metrics_at(self, idx) -> dict:
        return {k: float(v[idx]) for k, v in self.metrics.items()}

    def boundary_f(self, bits_index: int = 0) -> np.ndarray:
        """Largest feasible frequency for each ``n`` (NaN where none is feasible)."""
        mask = self.feasible[:, :, bits_index]
        out = np.full(self.grid.n.size, np.nan)
        for i in range(self.grid.n.size):
            ok = np.flatnonzero(mask[i])
            if ok.size:
                out[i] = self.grid.f[ok[-1]]
        return out

    def boundary_bits(self, f_index: int = 0) -> np.ndarray:
        """Smallest feasible resolution for each ``n`` (NaN where none is feasible)."""
        mask = self.feasible[:, f_index, :]
        out = np.full(self.grid.n.size, np.nan)
        for i in range(self.grid.n.size):
            ok = np.flatnonzero(mask[i])
            if ok.size:
                out[i] = self.grid.bits[ok[0]]
        return out

    def summary(self) -> dict:
        o = self.optimum
        return {
            "optimum": {"n": o.point.n, "f": o.point.f, "bits": o.point.bits, **o.metrics},
            "binding": list(o.binding),
            "constraints": self.constraints.echo(),
            "settings": self.settings,
            "grid": {"n": [int(self.grid.n[0]), int(self.grid.n[-1]), int(self.grid.n.size)],
                     "f": [float(self.grid.f[0]), float(self.grid.f[-1]), int(self.grid.f.size)],
                     "bits": [int(self.grid.bits[0]), int(self.grid.bits[-1]), int(self.grid.bits.size)]},
            "feasible_points": int(self.feasible.sum()),
        }


def evaluate_grid(surrogate: SurrogateModel, adc_model: AdcEnergyModel, grid: Grid, v: float,
                  ops_per_mac: float = OPS_PER_MAC, dac_power_per_row: float = 0.0,
                  wire: CrossbarConfig | None = None) -> dict:
    """Every metric at every grid point, as arrays of ``grid.shape``."""
    if not v > 0:
        raise ValueError("drive voltage must be positive")
    n = grid.n.astype(float)[:, None, None]
    f = grid.f[None, :, None]
    e_adc = adc_energy(adc_model, grid.bits)[None, None, :]
    sum_g = np.array([predict_sum_g(surrogate, int(m)) for m in grid.n])[:, None, None]
    rmse = np.array([[predict_rmse_max(surrogate, int(m), int(b)) for b in grid.bits] for m in grid.n])
    shape = grid.shape
    p_array = np.broadcast_to(sum_g * v * v, shape)
    p_adc = n * e_adc * f
    p_dac = np.broadcast_to(n * dac_power_per_row, shape)
    power = p_array + p_adc + p_dac
    thr = np.broadcast_to(ops_per_mac * n * n * f, shape)
    out = {
        "power": power,
        "power_array": p_array,
        "power_adc": p_adc,
        "power_dac": p_dac,
        "throughput": thr,
        "efficiency": thr / power / 1e12,
        "rmse": np.broadcast_to(rmse[:, None, :], shape),
    }
    if wire is not None:
        fmax = np.array([max_frequency(CrossbarConfig(int(m), r_seg=wire.r_seg, c_seg=wire.c_seg,
                                                      termination=wire.termination, k_settle=wire.k_settle))
                         for m in grid.n])
        out["f_max"] = np.broadcast_to(fmax[:, None, None], shape)
    return {k: np.ascontiguousarray(a, dtype=float) for k, a in out.items()}


def _violations(metrics, constraints: Constraints, grid: Grid) -> dict:
    """Relative violation per constraint (0 where satisfied)."""
    out = {}
    if constraints.max_power is not None:
        out["power"] = np.maximum(metrics["power"] / constraints.max_power - 1.0, 0.0)
    if constraints.max_rmse is not None:
        out["rmse"] = np.maximum(metrics["rmse"] / constraints.max_rmse - 1.0, 0.0)
    if constraints.elmore:
        f = np.broadcast_to(grid.f[None, :, None], grid.shape)
        out["elmore"] = np.maximum(f / metrics["f_max"] - 1.0, 0.0)
    return out


def _binding(violations, idx, shape):
    """Constraints violated at some grid neighbor of ``idx``."""
    found = []
    for name, viol in violations.items():
        for axis in range(3):
            for step in (-1, 1):
                nb = list(idx)
                nb[axis] += step
                if 0 <= nb[axis] < shape[axis] and viol[tuple(nb)] > 0:
                    found.append(name)
                    break
            else:
                continue
            break
    return tuple(found)


def explore(surrogate: SurrogateModel, adc_model: AdcEnergyModel, grid: Grid, constraints: Constraints,
            v: float, ops_per_mac: float = OPS_PER_MAC, dac_power_per_row: float = 0.0,
            wire: CrossbarConfig | None = None) -> ExplorationResult:
    """Most efficient feasible grid point.

    Ties go to the smallest ``n``, then ``f``, then ``bits``.  Raises
    :class:`NoFeasiblePoint` (carrying the least-violating point) when nothing
    satisfies the constraints.
    """
    if constraints.elmore and wire is None:
        raise ValueError("the Elmore frequency constraint needs the wire configuration")
    metrics = evaluate_grid(surrogate, adc_model, grid, v, ops_per_mac, dac_power_per_row,
                            wire if constraints.elmore else None)
    viol = _violations(metrics, constraints, grid)
    masks = {k: vv == 0 for k, vv in viol.items()}
    feasible = np.ones(grid.shape, dtype=bool)
    for m in masks.values():
        feasible &= m
    masks["feasible"] = feasible
    settings = {"v_drive": v, "ops_per_mac": ops_per_mac, "dac_power_per_row": dac_power_per_row,
                "adc_fom": adc_model.fom, "surrogate": surrogate.fingerprint}

    if not feasible.any():
        total = sum(viol.values())
        idx = np.unravel_index(int(np.argmin(total)), grid.shape)  # C order: smallest (n, f, bits) on ties
        worst = Optimum(grid.point(idx), tuple(int(i) for i in idx),
                        {k: float(a[idx]) for k, a in metrics.items()}, tuple(k for k in viol if viol[k][idx] > 0))
        raise NoFeasiblePoint(
            f"no feasible design point; least violating is n={worst.point.n}, f={worst.point.f:.6g} Hz, "
            f"bits={worst.point.bits} (violates {', '.join(worst.binding)})", worst)

    eff = np.where(feasible, metrics["efficiency"], -np.inf)
    # Efficiencies equal up to roundoff count as ties; the first in C order wins.
    best = eff.max()
    idx = np.unravel_index(int(np.argmax(eff >= best * (1.0 - TIE_RTOL))), grid.shape)
    idx = tuple(int(i) for i in idx)
    opt = Optimum(grid.point(idx), idx, {k: float(a[idx]) for k, a in metrics.items()},
                  _binding(viol, idx, grid.shape))
    return ExplorationResult(grid, metrics, masks, opt, constraints, settings)


# -- export ---------------------------------------------------------------------------

HEATMAP_METRICS = ("power", "power_array", "power_adc", "efficiency", "throughput", "rmse")


def export_heatmaps(result: ExplorationResult, out_dir) -> list:
    """Write every metric and mask as CSV grids plus the axis vectors.

    Matrices span the two widest grid axes (``n`` always on rows).  When all
    three axes vary, one file per value of the remaining axis is written.
    Returns the written paths.
    """
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create heatmap directory {out}: {exc}") from exc
    g = result.grid
    axes = {"n": g.n, "f": g.f, "bits": g.bits}
    written = []
    for name, vals in axes.items():
        p = out / f"axis_{name}.csv"
        _csv.write_matrix(p, np.asarray(vals, dtype=float)[:, None])
        written.append(p)

    # Columns: f unless it is fixed and bits varies.
    col = "bits" if g.f.size == 1 and g.bits.size > 1 else "f"
    other = "bits" if col == "f" else "f"
    layers = {**{m: result.metrics[m] for m in HEATMAP_METRICS},
              **{f"mask_{k}": result.masks[k].astype(float) for k in result.masks}}
    other_axis = axes[other]
    for name, arr in layers.items():
        for k, val in enumerate(other_axis):
            sl = arr[:, :, k] if col == "f" else arr[:, k, :]
            suffix = "" if other_axis.size == 1 else f"_{other}{_label(val)}"
            p = out / f"{name}{suffix}.csv"
            _csv.write_grid(p, g.n.astype(float), axes[col].astype(float), sl, corner=f"n\\{col}")
            written.append(p)
    p = out / "summary.json"
    _csv.write_json(p, result.summary())
    written.append(p)
    return written


def _label(v) -> str:
    v = float(v)
    return str(int(v)) if v.is_integer() else repr(v)
