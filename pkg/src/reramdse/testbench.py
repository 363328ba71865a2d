"""Per-cell characterization of a crossbar.

Each time segment drives one row with a triangle wave while every other row
is held at 0 V, and records all column currents.  Comparing those currents
against an isolated, parasitic-free cell gives a per-cell RMSE map; dividing
the current at a fixed drive by that drive gives the effective-conductance
map used for worst-case power.
"""

from __future__ import annotations

import enum
import hashlib
import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import _csv
from .circuit import CellArray, CrossbarConfig, NodalSystem, SolverError, SolverOptions
from .device import CellState, DeviceParams, SinhCell, cell_current

log = logging.getLogger(__name__)

FORMAT_VERSION = 1


class FullScaleMode(str, enum.Enum):
    SCALED_BY_N = "scaled_by_n"
    FIXED = "fixed"


class CharacterizationError(SolverError):
    """One or more segments failed; ``failures`` maps row index to message."""

    def __init__(self, n, failures):
        self.failures = dict(failures)
        rows = ", ".join(str(r) for r in sorted(self.failures)[:8])
        super().__init__(f"{len(self.failures)} of {n} segments failed (rows {rows}): "
                         f"{next(iter(self.failures.values()))}")


@dataclass(frozen=True)
class AdcQuantizer:
    """Mid-tread uniform quantizer clamped to ``[0, full_scale_current]``."""

    bits: int
    full_scale_current: float

    def __post_init__(self):
        if int(self.bits) != self.bits or self.bits < 1:
            raise ValueError(f"bits must be a positive integer, got {self.bits}")
        if not self.full_scale_current > 0:
            raise ValueError("full_scale_current must be positive")

    @property
    def lsb(self) -> float:
        return self.full_scale_current / 2.0 ** self.bits

    def clip_count(self, i) -> int:
        i = np.asarray(i, dtype=float)
        return int(np.count_nonzero((i < 0) | (i > self.full_scale_current)))


def quantize_current(adc: AdcQuantizer, i):
    lsb = adc.lsb
    q = np.floor(np.asarray(i, dtype=float) / lsb + 0.5) * lsb
    return np.clip(q, 0.0, adc.full_scale_current)


@dataclass(frozen=True)
class TestbenchConfig:
    """Characterization settings.

    ``v_peak=None`` means the device read voltage.  ``full_scale_current`` is
    only used in ``fixed`` mode; ``scaled_by_n`` sets the ADC range to
    ``n * I_LRS(v_peak)``, the largest column current an all-LRS column can carry.
    """

    __test__ = False

    samples_per_segment: int = 33
    v_peak: float | None = None
    error_state: CellState = CellState.HRS
    full_scale_mode: FullScaleMode = FullScaleMode.SCALED_BY_N
    full_scale_current: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "error_state", CellState(self.error_state))
        object.__setattr__(self, "full_scale_mode", FullScaleMode(self.full_scale_mode))
        if self.samples_per_segment < 3:
            raise ValueError("samples_per_segment must be at least 3")
        if self.v_peak is not None and not self.v_peak > 0:
            raise ValueError("v_peak must be positive")
        if self.full_scale_mode is FullScaleMode.FIXED and not (self.full_scale_current or 0) > 0:
            raise ValueError("fixed full-scale mode needs a positive full_scale_current")

    def peak(self, device: DeviceParams) -> float:
        return device.v_read if self.v_peak is None else self.v_peak

    def full_scale(self, device: DeviceParams, n: int) -> float:
        if self.full_scale_mode is FullScaleMode.FIXED:
            return float(self.full_scale_current)
        return float(n * cell_current(device.lrs, self.peak(device)))


def triangle_samples(v_peak: float, k: int) -> np.ndarray:
    """One period 0 -> v_peak -> 0 in ``k`` points; even ``k`` repeats the peak."""
    if k < 3:
        raise ValueError("need at least 3 samples")
    up = np.linspace(0.0, v_peak, (k + 1) // 2)
    down = up[::-1] if k % 2 == 0 else up[-2::-1]
    return np.concatenate([up, down])


def reference_current(cell: SinhCell, v_samples) -> np.ndarray:
    """Current of an isolated, parasitic-free cell."""
    return cell_current(cell, v_samples)


# -- sweep engine -------------------------------------------------------------

BATCH_ROWS = 16


def _sweep_chunk(config, cells, options, rows, voltages):
    """Column currents ``(len(rows), n, len(voltages))`` for one-hot drives.

    ``voltages`` must be distinct, ascending and non-negative.  Each solve is
    warm-started from the previous two (linear extrapolation in voltage).
    """
    n = config.n
    system = NodalSystem(config, cells, options)
    out = np.zeros((len(rows), n, len(voltages)))
    unit = np.zeros((len(rows), n))
    unit[np.arange(len(rows)), rows] = 1.0
    hist = []  # (v, x)
    for m, v in enumerate(voltages):
        if v == 0:
            continue
        if len(hist) >= 2:
            (v1, x1), (v2, x2) = hist[-2], hist[-1]
            x0 = x2 + (x2 - x1) * ((v - v2) / (v2 - v1))
        elif hist:
            v1, x1 = hist[-1]
            x0 = x1 * (v / v1)
        else:
            x0 = None
        try:
            sol = system.solve_batch(unit * v, x0)
        except SolverError as exc:
            raise SolverError(f"rows {rows[0]}..{rows[-1]}, sample voltage {v:.6g} V: {exc}") from exc
        out[:, :, m] = sol.column_currents
        if not system.parasitic_free:
            hist = (hist + [(v, sol.x)])[-2:]
    return out


def sweep_segments(config: CrossbarConfig, cells: CellArray, voltages, rows=None,
                   options: SolverOptions | None = None, workers: int = 1, progress=None):
    """Run one-hot segments over ``rows`` at each of ``voltages``.

    Returns currents of shape ``(len(rows), n, len(voltages))``.  Repeated
    voltages are solved once.  Rows are processed in fixed chunks, so results
    are bit-identical for any worker count.
    """
    n = config.n
    rows = np.arange(n) if rows is None else np.asarray(rows, dtype=int)
    if rows.size and (rows.min() < 0 or rows.max() >= n):
        raise IndexError(f"active row out of range for n={n}")
    voltages = np.asarray(voltages, dtype=float)
    if np.any(voltages < 0):
        raise ValueError("sweep voltages must be non-negative")
    distinct, inverse = np.unique(voltages, return_inverse=True)
    chunks = [rows[s:s + BATCH_ROWS] for s in range(0, len(rows), BATCH_ROWS)]
    results = [None] * len(chunks)
    failures = {}

    def work(ci):
        try:
            results[ci] = _sweep_chunk(config, cells, options, chunks[ci], distinct)
        except SolverError as exc:
            for r in chunks[ci]:
                failures[int(r)] = str(exc)
        if progress is not None:
            progress(len(chunks[ci]))

    workers = max(1, int(workers))
    if workers == 1:
        for ci in range(len(chunks)):
            work(ci)
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(work, range(len(chunks))))
    if failures:
        raise CharacterizationError(len(rows), failures)
    cur = np.concatenate(results, axis=0) if results else np.zeros((0, n, len(distinct)))
    return cur[:, :, inverse]


def _as_cells(cells, device, n):
    if isinstance(cells, CellArray):
        return cells
    if isinstance(cells, (CellState, str)):
        return CellArray.uniform(n, device.cell(cells))
    return CellArray.from_states(cells, device)


def run_segment(config: CrossbarConfig, cells, active_row: int, v_samples, device=None,
                options: SolverOptions | None = None) -> np.ndarray:
    """Column currents ``(n, k)`` while ``active_row`` follows ``v_samples``."""
    if not 0 <= active_row < config.n:
        raise IndexError(f"active_row {active_row} out of range for n={config.n}")
    cells = _as_cells(cells, device, config.n)
    return sweep_segments(config, cells, v_samples, rows=[active_row], options=options)[0]


def rmse_map(currents, reference, adc: AdcQuantizer | None = None) -> np.ndarray:
    """RMSE over the sample axis; only the array output is quantized."""
    measured = currents if adc is None else quantize_current(adc, currents)
    return np.sqrt(np.mean((measured - reference) ** 2, axis=-1))


def per_cell_rmse(config: CrossbarConfig, device: DeviceParams, testbench: TestbenchConfig | None = None,
                  bits: int | None = None, cells=None, options=None, workers=1) -> np.ndarray:
    """Per-cell RMSE (A) against the isolated reference cell.

    Cells default to a uniform array in ``testbench.error_state``.
    """
    tb = testbench or TestbenchConfig()
    v = triangle_samples(tb.peak(device), tb.samples_per_segment)
    cells = _as_cells(tb.error_state if cells is None else cells, device, config.n)
    ref_cell = SinhCell(float(cells.a.flat[0]), float(cells.b.flat[0]))
    cur = sweep_segments(replace(config, v_drive=tb.peak(device)), cells, v, options=options, workers=workers)
    adc = None if bits is None else AdcQuantizer(bits, tb.full_scale(device, config.n))
    return rmse_map(cur, reference_current(ref_cell, v), adc)


def extract_geff(config: CrossbarConfig, device: DeviceParams, v: float | None = None, cells=None,
                 options=None, workers=1) -> np.ndarray:
    """``G_eff[i, j] = I_col_j / v`` with row ``i`` driven at ``v`` (all-LRS by default)."""
    v = device.v_read if v is None else v
    if not v > 0:
        raise ValueError("drive voltage must be positive")
    cells = _as_cells(CellState.LRS if cells is None else cells, device, config.n)
    cur = sweep_segments(replace(config, v_drive=v), cells, [v], options=options, workers=workers)
    return cur[:, :, 0] / v


@dataclass(frozen=True)
class ArrayPower:
    total: float
    sum_g: float
    v_squared: float


def worst_case_array_power(geff, v: float) -> ArrayPower:
    """``P = V^2 * sum(G_eff)``, with both factors reported."""
    if not v > 0:
        raise ValueError("drive voltage must be positive")
    sum_g = float(np.sum(geff))
    return ArrayPower(total=v * v * sum_g, sum_g=sum_g, v_squared=v * v)


# -- characterization -----------------------------------------------------------

def fingerprint(payload: dict) -> str:
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def physical_echo(config: CrossbarConfig, device: DeviceParams, tb: TestbenchConfig,
                  options: SolverOptions) -> dict:
    """Everything that changes simulated numbers, except the array size."""
    return {
        "device": asdict(device),
        "wire": {"r_seg": config.r_seg, "termination": config.termination.value},
        "testbench": {
            "samples_per_segment": tb.samples_per_segment,
            "v_peak": tb.peak(device),
            "error_state": tb.error_state.value,
            "full_scale_mode": tb.full_scale_mode.value,
            "full_scale_current": tb.full_scale_current,
        },
        "solver": {"abstol": options.abstol, "current_rtol": options.current_rtol},
        "format": FORMAT_VERSION,
    }


@dataclass
class CharacterizationResult:
    """Maps measured on one ``n x n`` array.

    ``rmse`` is keyed by ADC bits, with ``None`` for the unquantized output.
    ``currents`` (segments x columns x samples) is kept in memory so further
    resolutions can be added without re-solving; it is not persisted.
    """

    n: int
    geff: np.ndarray
    rmse: dict
    reference_peak: float
    full_scale_current: float
    v_peak: float
    fingerprint: str
    metadata: dict = field(default_factory=dict)
    currents: np.ndarray | None = field(default=None, repr=False)
    reference: np.ndarray | None = field(default=None, repr=False)
    diagnostics: dict = field(default_factory=dict)

    @property
    def cumulative_conductance(self) -> float:
        return float(self.geff.sum())

    @property
    def bits(self) -> list:
        return sorted(b for b in self.rmse if b is not None)

    def normalized_rmse(self, bits=None) -> np.ndarray:
        return self.rmse[bits] / self.reference_peak

    def rmse_max(self, bits=None, normalized=True) -> float:
        m = float(self.rmse[bits].max())
        return m / self.reference_peak if normalized else m

    def add_bits(self, bits_list):
        """Quantize the stored analog currents at further resolutions."""
        if self.currents is None:
            raise ValueError("analog currents are not available (result was loaded from disk)")
        for b in bits_list:
            if b in self.rmse:
                continue
            adc = AdcQuantizer(int(b), self.full_scale_current)
            self.rmse[int(b)] = rmse_map(self.currents, self.reference, adc)
            self.diagnostics.setdefault("adc_clip_events", {})[int(b)] = adc.clip_count(self.currents)
        return self

    # -- persistence ----------------------------------------------------------

    def save(self, directory):
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        _csv.write_matrix(d / "geff.csv", self.geff)
        _csv.write_matrix(d / "rmse_analog.csv", self.rmse[None])
        for b in self.bits:
            _csv.write_matrix(d / f"rmse_b{b}.csv", self.rmse[b])
        meta = {
            "n": self.n,
            "fingerprint": self.fingerprint,
            "bits": self.bits,
            "reference_peak": self.reference_peak,
            "full_scale_current": self.full_scale_current,
            "v_peak": self.v_peak,
            "cumulative_conductance": self.cumulative_conductance,
            "config": self.metadata,
        }
        _csv.write_json(d / "meta.json", meta)
        return d

    @classmethod
    def load(cls, directory) -> "CharacterizationResult":
        d = Path(directory)
        meta = json.loads((d / "meta.json").read_text())
        rmse = {None: _csv.read_matrix(d / "rmse_analog.csv")}
        for b in meta["bits"]:
            rmse[int(b)] = _csv.read_matrix(d / f"rmse_b{b}.csv")
        return cls(n=meta["n"], geff=_csv.read_matrix(d / "geff.csv"), rmse=rmse,
                   reference_peak=meta["reference_peak"], full_scale_current=meta["full_scale_current"],
                   v_peak=meta["v_peak"], fingerprint=meta["fingerprint"], metadata=meta["config"])


def characterize(config: CrossbarConfig, device: DeviceParams, testbench: TestbenchConfig | None = None,
                 bits_list=(), options: SolverOptions | None = None, workers: int | None = None,
                 progress=None) -> CharacterizationResult:
    """Run every segment once and derive G_eff and RMSE maps.

    All requested resolutions are obtained by re-quantizing the same stored
    analog currents.  When the error state is LRS, G_eff is read from the peak
    sample of the same sweep; otherwise one extra LRS sweep at ``v_peak`` runs.
    """
    tb = testbench or TestbenchConfig()
    options = options or SolverOptions()
    if workers is None:
        workers = os.cpu_count() or 1
    n = config.n
    v_peak = tb.peak(device)
    cfg = replace(config, v_drive=v_peak)
    samples = triangle_samples(v_peak, tb.samples_per_segment)
    err_cell = device.cell(tb.error_state)

    currents = sweep_segments(cfg, CellArray.uniform(n, err_cell), samples, options=options,
                              workers=workers, progress=progress)
    if tb.error_state is CellState.LRS:
        geff = currents[:, :, int(np.argmax(samples))] / v_peak
    else:
        geff = sweep_segments(cfg, CellArray.uniform(n, device.lrs), [v_peak], options=options,
                              workers=workers)[:, :, 0] / v_peak

    reference = reference_current(err_cell, samples)
    echo = physical_echo(cfg, device, tb, options)
    result = CharacterizationResult(
        n=n,
        geff=geff,
        rmse={None: rmse_map(currents, reference)},
        reference_peak=float(cell_current(err_cell, v_peak)),
        full_scale_current=tb.full_scale(device, n),
        v_peak=v_peak,
        fingerprint=fingerprint({"n": n, **echo}),
        metadata=echo,
        currents=currents,
        reference=reference,
    )
    result.add_bits(bits_list)
    log.info("characterized n=%d: sum G_eff = %.6g S, analog RMSE max = %.4g", n,
             result.cumulative_conductance, result.rmse_max())
    return result
