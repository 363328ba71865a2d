"""Interpolated predictors built from a handful of characterized sizes.

A :class:`SurrogateModel` holds, for each characterized size ``N``:

* the maximum normalized RMSE for each ADC resolution (and unquantized),
* the direct-simulation cumulative conductance ``sum(G_eff)``,
* the normalized RMSE profile along the main diagonal, near corner to far
  corner, with both axes scaled to ``[0, 1]``.

RMSE maxima are interpolated bilinearly in ``(log N, bits)`` on the logarithm
of the value by default.  Parasitic error grows roughly as a power of ``N``
and quantization error halves per bit, so both are straight lines in that
space, and any monotone grid stays monotone.  ``mode="linear"`` interpolates
the raw values instead.  Neither predictor extrapolates.
"""

from __future__ import annotations

import itertools
import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .testbench import fingerprint

FORMAT = "reramdse.surrogate/1"
COLLAPSE_GATE = 0.1
PROFILE_POINTS = 101


class SurrogateError(ValueError):
    pass


class FingerprintMismatch(SurrogateError):
    def __init__(self, message, labels=()):
        super().__init__(message)
        self.labels = tuple(labels)


class InsufficientSizes(SurrogateError):
    pass


class OutOfRange(SurrogateError):
    pass


class MonotonicityWarning(UserWarning):
    pass


def diagonal_profile(rmse_map) -> tuple[np.ndarray, np.ndarray]:
    """``(s, p)``: diagonal RMSE at ``s = i / (n - 1)`` divided by its maximum."""
    d = np.diag(np.asarray(rmse_map, dtype=float)).copy()
    n = d.size
    if n < 2:
        raise ValueError("a diagonal profile needs n >= 2")
    peak = d.max()
    p = d / peak if peak > 0 else np.zeros_like(d)
    return np.arange(n) / (n - 1), p


@dataclass(frozen=True)
class SurrogateModel:
    sizes: tuple
    bits: tuple
    rmse_max_grid: np.ndarray  # (len(sizes), len(bits)), normalized
    rmse_max_analog: np.ndarray  # (len(sizes),)
    sum_g: np.ndarray
    profiles: tuple  # per size, ordinate at i / (n - 1)
    fingerprint: str
    result_fingerprints: tuple
    mode: str = "log"
    warnings: tuple = field(default=(), compare=False)

    def __post_init__(self):
        if len(self.sizes) < 2:
            raise InsufficientSizes("a surrogate needs at least two sizes")
        if any(b <= a for a, b in zip(self.sizes, self.sizes[1:])):
            raise SurrogateError(f"sizes must be strictly increasing, got {self.sizes}")
        if self.mode not in ("log", "linear"):
            raise ValueError(f"unknown interpolation mode {self.mode!r}")

    # -- serialization --------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "format": FORMAT,
            "mode": self.mode,
            "fingerprint": self.fingerprint,
            "sizes": list(self.sizes),
            "bits": list(self.bits),
            "rmse_max_grid": self.rmse_max_grid.tolist(),
            "rmse_max_analog": self.rmse_max_analog.tolist(),
            "sum_g": self.sum_g.tolist(),
            "profiles": [p.tolist() for p in self.profiles],
            "result_fingerprints": list(self.result_fingerprints),
            "warnings": list(self.warnings),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SurrogateModel":
        if d.get("format") != FORMAT:
            raise SurrogateError(f"not a surrogate model file (format {d.get('format')!r})")
        return cls(
            sizes=tuple(int(n) for n in d["sizes"]),
            bits=tuple(int(b) for b in d["bits"]),
            rmse_max_grid=np.array(d["rmse_max_grid"], dtype=float).reshape(len(d["sizes"]), len(d["bits"])),
            rmse_max_analog=np.array(d["rmse_max_analog"], dtype=float),
            sum_g=np.array(d["sum_g"], dtype=float),
            profiles=tuple(np.array(p, dtype=float) for p in d["profiles"]),
            fingerprint=d["fingerprint"],
            result_fingerprints=tuple(d["result_fingerprints"]),
            mode=d.get("mode", "log"),
            warnings=tuple(d.get("warnings", ())),
        )

    def save(self, path):
        path = Path(path)
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")
        return path

    @classmethod
    def load(cls, path) -> "SurrogateModel":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def with_mode(self, mode: str) -> "SurrogateModel":
        d = self.to_dict()
        d["mode"] = mode
        return SurrogateModel.from_dict(d)

    def without_size(self, n: int) -> "SurrogateModel":
        """The same model with knot ``n`` removed (for leave-one-out checks)."""
        k = self.sizes.index(n)
        keep = [i for i in range(len(self.sizes)) if i != k]
        return SurrogateModel(
            sizes=tuple(self.sizes[i] for i in keep),
            bits=self.bits,
            rmse_max_grid=self.rmse_max_grid[keep],
            rmse_max_analog=self.rmse_max_analog[keep],
            sum_g=self.sum_g[keep],
            profiles=tuple(self.profiles[i] for i in keep),
            fingerprint=self.fingerprint,
            result_fingerprints=tuple(self.result_fingerprints[i] for i in keep),
            mode=self.mode,
        )


def _check_monotone(sizes, bits, grid, sum_g):
    found = []
    for k in range(len(sizes) - 1):
        drop = sum_g[k] - sum_g[k + 1]
        if drop >= 0:
            found.append(f"sum_g not increasing from N={sizes[k]} to N={sizes[k + 1]} (drop {drop:.3g} S)")
    for j, b in enumerate(bits):
        for k in range(len(sizes) - 1):
            drop = grid[k, j] - grid[k + 1, j]
            if drop > 0:
                found.append(f"RMSE_max decreases from N={sizes[k]} to N={sizes[k + 1]} at {b} bits "
                             f"(by {drop:.3g})")
    for k, n in enumerate(sizes):
        for j in range(len(bits) - 1):
            rise = grid[k, j + 1] - grid[k, j]
            if rise > 0:
                found.append(f"RMSE_max increases from {bits[j]} to {bits[j + 1]} bits at N={n} (by {rise:.3g})")
    return found


def build_surrogate(results, bits_list=None, mode: str = "log") -> SurrogateModel:
    """Collect RMSE maxima, cumulative conductance and diagonal profiles.

    ``bits_list`` defaults to the resolutions present in every result.  Results
    that still hold analog currents are re-quantized for missing resolutions.
    Monotonicity violations are emitted as :class:`MonotonicityWarning` and
    stored on the model.
    """
    results = sorted(results, key=lambda r: r.n)
    if len(results) < 2:
        raise InsufficientSizes(f"need at least two characterized sizes, got {len(results)}")
    sizes = [r.n for r in results]
    dup = sorted({n for n in sizes if sizes.count(n) > 1})
    if dup:
        raise InsufficientSizes(f"duplicate sizes {dup}; each size must be characterized once")
    physical = [fingerprint(r.metadata) for r in results]
    if len(set(physical)) > 1:
        groups = {}
        for r, fp in zip(results, physical):
            groups.setdefault(fp, []).append(f"N{r.n}")
        raise FingerprintMismatch(
            "characterization results come from different device/wire configurations: "
            + "; ".join(f"{fp}: {', '.join(v)}" for fp, v in sorted(groups.items())),
            labels=[f"N{r.n}" for r in results])

    if bits_list is None:
        bits_list = sorted(set.intersection(*(set(r.bits) for r in results)))
    bits_list = sorted(int(b) for b in bits_list)
    for r in results:
        missing = [b for b in bits_list if b not in r.rmse]
        if missing:
            if r.currents is None:
                raise SurrogateError(f"N={r.n} lacks RMSE maps for bits {missing}")
            r.add_bits(missing)

    grid = np.array([[r.rmse_max(b) for b in bits_list] for r in results]).reshape(len(results), len(bits_list))
    analog = np.array([r.rmse_max() for r in results])
    sum_g = np.array([r.cumulative_conductance for r in results])
    profiles = tuple(diagonal_profile(r.rmse[None])[1] for r in results)
    found = _check_monotone(sizes, bits_list, grid, sum_g)
    for msg in found:
        warnings.warn(msg, MonotonicityWarning, stacklevel=2)
    return SurrogateModel(
        sizes=tuple(sizes), bits=tuple(bits_list), rmse_max_grid=grid, rmse_max_analog=analog,
        sum_g=sum_g, profiles=profiles, fingerprint=physical[0],
        result_fingerprints=tuple(r.fingerprint for r in results), mode=mode, warnings=tuple(found))


# -- predictors -----------------------------------------------------------------

def _bracket(knots, q, what):
    knots = np.asarray(knots, dtype=float)
    if not knots[0] <= q <= knots[-1]:
        raise OutOfRange(f"{what}={q} outside characterized range [{knots[0]:g}, {knots[-1]:g}]")
    k = int(np.searchsorted(knots, q, side="right")) - 1
    k = min(max(k, 0), len(knots) - 2)
    return k


def _lerp(a, b, t):
    return a + (b - a) * t


def predict_rmse_max(model: SurrogateModel, n, bits=None) -> float:
    """Normalized RMSE_max at size ``n`` and ``bits`` (``None`` for no ADC)."""
    sizes = np.asarray(model.sizes, dtype=float)
    i = _bracket(sizes, n, "n")
    log_mode = model.mode == "log"
    if bits is None:
        col = model.rmse_max_analog[:, None]
        j, u = 0, 0.0
    else:
        col = model.rmse_max_grid
        b = np.asarray(model.bits, dtype=float)
        if len(b) == 1:
            if bits != b[0]:
                raise OutOfRange(f"bits={bits} outside characterized range [{b[0]:g}, {b[0]:g}]")
            j, u = 0, 0.0
        else:
            j = _bracket(b, bits, "bits")
            u = (bits - b[j]) / (b[j + 1] - b[j])
    jj = min(j + 1, col.shape[1] - 1)
    corners = col[i:i + 2][:, [j, jj]]
    if log_mode and np.all(corners > 0):
        t = (math.log(n) - math.log(sizes[i])) / (math.log(sizes[i + 1]) - math.log(sizes[i]))
        z = np.log(corners)
        return float(np.exp(_lerp(_lerp(z[0, 0], z[0, 1], u), _lerp(z[1, 0], z[1, 1], u), t)))
    t = (n - sizes[i]) / (sizes[i + 1] - sizes[i])
    return float(_lerp(_lerp(corners[0, 0], corners[0, 1], u), _lerp(corners[1, 0], corners[1, 1], u), t))


def predict_sum_g(model: SurrogateModel, n) -> float:
    """Cumulative conductance of a directly simulated ``n x n`` LRS array (piecewise-linear in ``n``)."""
    sizes = np.asarray(model.sizes, dtype=float)
    i = _bracket(sizes, n, "n")
    t = (n - sizes[i]) / (sizes[i + 1] - sizes[i])
    return float(_lerp(model.sum_g[i], model.sum_g[i + 1], t))


# -- profile collapse -------------------------------------------------------------

def _resample(profile, points=PROFILE_POINTS):
    s = np.arange(profile.size) / (profile.size - 1)
    return np.interp(np.linspace(0.0, 1.0, points), s, profile)


@dataclass(frozen=True)
class CollapseReport:
    pairs: dict  # (n1, n2) -> max |p1 - p2| on the common grid
    gate: float

    @property
    def max_deviation(self) -> float:
        return max(self.pairs.values(), default=0.0)

    @property
    def passed(self) -> bool:
        return self.max_deviation <= self.gate

    def lines(self):
        for (a, b), d in sorted(self.pairs.items()):
            yield f"N={a} vs N={b}: max deviation {d:.4f} ({'ok' if d <= self.gate else 'EXCEEDS'} {self.gate})"


def normalized_profile_collapse(model_or_profiles, gate: float = COLLAPSE_GATE,
                                points: int = PROFILE_POINTS) -> CollapseReport:
    """Pairwise maximum deviation between normalized diagonal profiles.

    Accepts a :class:`SurrogateModel` or a mapping ``label -> profile``.
    """
    if isinstance(model_or_profiles, SurrogateModel):
        profiles = dict(zip(model_or_profiles.sizes, model_or_profiles.profiles))
    else:
        profiles = dict(model_or_profiles)
    if len(profiles) < 2:
        raise InsufficientSizes("collapse needs at least two profiles")
    grid = {k: _resample(np.asarray(p, dtype=float), points) for k, p in profiles.items()}
    pairs = {(a, b): float(np.max(np.abs(grid[a] - grid[b])))
             for a, b in itertools.combinations(sorted(grid), 2)}
    return CollapseReport(pairs, gate)


def predict_profile(model: SurrogateModel, n: int) -> np.ndarray:
    """Normalized diagonal profile for size ``n`` (``n`` points).

    Between knots the two neighboring profiles are blended linearly in
    ``log n`` on a common abscissa.
    """
    sizes = np.asarray(model.sizes, dtype=float)
    i = _bracket(sizes, n, "n")
    t = (math.log(n) - math.log(sizes[i])) / (math.log(sizes[i + 1]) - math.log(sizes[i]))
    s = np.arange(n) / (n - 1)
    lo = np.interp(s, np.arange(model.sizes[i]) / (model.sizes[i] - 1), model.profiles[i])
    hi = np.interp(s, np.arange(model.sizes[i + 1]) / (model.sizes[i + 1] - 1), model.profiles[i + 1])
    return _lerp(lo, hi, t)


def reconstruct_diagonal(model: SurrogateModel, n: int, bits=None) -> np.ndarray:
    """Normalized RMSE along the main diagonal: profile times predicted RMSE_max."""
    return predict_profile(model, n) * predict_rmse_max(model, n, bits)


def result_profiles(results) -> dict:
    """``{n: normalized diagonal profile}`` of the analog RMSE maps."""
    return {r.n: diagonal_profile(r.rmse[None])[1] for r in results}


__all__ = [
    "CollapseReport", "FingerprintMismatch", "InsufficientSizes",
    "MonotonicityWarning", "OutOfRange", "SurrogateError", "SurrogateModel", "build_surrogate",
    "diagonal_profile", "normalized_profile_collapse", "predict_profile", "predict_rmse_max",
    "predict_sum_g", "reconstruct_diagonal", "result_profiles",
]
