"""Fit cell conductance and wire resistance to cumulative-conductance anchors.

Simulated ``G_eff / g_lrs`` depends on the wire resistance and the cell
conductance only through the product ``x = r_seg * g_lrs`` (for a fixed sinh
shape and read voltage).  The fit therefore searches one dimension, ``log x``;
when both parameters are free the best ``g_lrs`` for a given ``x`` is a closed
form least-squares solution.

The search itself runs on the exact ohmic-cell model (:func:`linear_geff`),
which costs milliseconds even at ``n = 256``.  Full nonlinear sweeps are then
used only to correct that model multiplicatively, per anchor, until the
optimum stops moving.  Two or three nonlinear evaluations usually suffice.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import minimize_scalar

from .circuit import CrossbarConfig, SolverOptions, linear_geff
from .device import DeviceParams
from .testbench import extract_geff

log = logging.getLogger(__name__)

FREE_PARAMS = frozenset({"g_lrs", "r_seg"})


@dataclass(frozen=True)
class Anchor:
    """A target ``sum(G_eff)`` over the top-left ``n x n`` block.

    ``from_n`` names the simulated array when the anchor is a sub-array sum of
    a larger simulation; ``None`` means the ``n x n`` array is simulated
    directly.
    """

    n: int
    sum_g: float
    from_n: int | None = None

    def __post_init__(self):
        if self.n < 1 or not self.sum_g > 0:
            raise ValueError(f"invalid anchor {self}")
        if self.from_n is not None and self.from_n < self.n:
            raise ValueError(f"sub-array anchor needs from_n >= n, got {self}")

    @property
    def simulated_n(self) -> int:
        return self.n if self.from_n is None else self.from_n

    def block_sum(self, geff: np.ndarray) -> float:
        return float(geff[: self.n, : self.n].sum())


@dataclass(frozen=True)
class CalibrationResult:
    device: DeviceParams
    r_seg: float
    anchors: tuple
    simulated: tuple
    nonlinear_evaluations: int
    history: tuple = field(default=(), repr=False)

    @property
    def residuals(self) -> tuple:
        """Relative error of each anchor, ``simulated / target - 1``."""
        return tuple(s / a.sum_g - 1.0 for s, a in zip(self.simulated, self.anchors))

    @property
    def max_residual(self) -> float:
        return max(abs(r) for r in self.residuals)

    def report(self) -> str:
        lines = [f"g_lrs = {self.device.g_lrs:.6g} S, r_seg = {self.r_seg:.6g} ohm"]
        for a, s, r in zip(self.anchors, self.simulated, self.residuals):
            where = f"{a.n}x{a.n}" if a.from_n is None else f"{a.n}x{a.n} of {a.from_n}x{a.from_n}"
            lines.append(f"  {where}: target {a.sum_g:.6g} S, simulated {s:.6g} S, residual {r:+.3%}")
        return "\n".join(lines)


class CalibrationError(RuntimeError):
    """The fit could not bring every anchor within tolerance; ``result`` holds the best attempt."""

    def __init__(self, message, result: CalibrationResult | None = None):
        super().__init__(message)
        self.result = result


def _as_anchor(a) -> Anchor:
    if isinstance(a, Anchor):
        return a
    if isinstance(a, dict):
        return Anchor(int(a["n"]), float(a["sum_g"]), a.get("from_n"))
    return Anchor(*a)


class _Objective:
    """Sum of squared relative anchor errors as a function of ``x = r * g``."""

    def __init__(self, anchors, free, g_fixed, r_fixed, termination):
        self.anchors = anchors
        self.free = free
        self.g_fixed = g_fixed
        self.r_fixed = r_fixed
        self.termination = termination
        self.correction = np.ones(len(anchors))
        self._sizes = sorted({a.simulated_n for a in anchors})

    def linear_shape(self, x):
        """Per-anchor ``sum(G_eff) / g`` of ohmic cells at ``r * g = x``."""
        maps = {m: linear_geff(CrossbarConfig(m, r_seg=x, termination=self.termination), 1.0)
                for m in self._sizes}
        return np.array([a.block_sum(maps[a.simulated_n]) for a in self.anchors])

    def conductance(self, x, shape):
        if self.free == {"r_seg"}:
            return self.g_fixed
        if self.free == {"g_lrs"}:
            return x / self.r_fixed
        u = shape / self.targets
        return float(u.sum() / (u * u).sum())

    @property
    def targets(self):
        return np.array([a.sum_g for a in self.anchors])

    def relative_errors(self, x, shape):
        return self.conductance(x, shape) * shape / self.targets - 1.0

    def __call__(self, log_x):
        x = math.exp(log_x)
        shape = self.linear_shape(x) * self.correction
        err = self.relative_errors(x, shape)
        return float(err @ err)


def _minimize_near(fun, lo, hi, ref, slack, num=121):
    """Local minima of ``fun`` on ``[lo, hi]``; return the acceptable one nearest ``ref``.

    A minimum is acceptable when it is within ``slack`` of the best one found.
    The anchors can often be matched exactly at more than one ``x``, e.g. on
    both sides of a non-monotone sub-array ratio.
    """
    grid = np.linspace(lo, hi, num)
    vals = np.array([fun(t) for t in grid])
    found = []
    for k in range(num):
        left = vals[k - 1] if k > 0 else np.inf
        right = vals[k + 1] if k < num - 1 else np.inf
        if vals[k] <= left and vals[k] <= right:
            a, b = grid[max(k - 1, 0)], grid[min(k + 1, num - 1)]
            if b > a:
                opt = minimize_scalar(fun, bounds=(a, b), method="bounded",
                                      options={"xatol": 1e-7})
                found.append((float(opt.fun), float(opt.x)))
            else:
                found.append((float(vals[k]), float(grid[k])))
    best = min(v for v, _ in found)
    ok = [(abs(t - ref), t) for v, t in found if v <= best + slack]
    return min(ok)[1]


def calibrate_to_anchors(anchors, free_params=("g_lrs", "r_seg"), device: DeviceParams | None = None,
                         r_seg: float = 1.0, termination="single_sided", tolerance: float = 0.05,
                         max_iter: int = 8, options: SolverOptions | None = None, workers: int = 1,
                         log_x_bounds=(-20.0, -2.0)) -> CalibrationResult:
    """Fit ``g_lrs`` and/or ``r_seg`` so simulated cumulative conductances match ``anchors``.

    Parameters
    ----------
    anchors : sequence of Anchor, ``(n, sum_g[, from_n])`` tuples or dicts
        Targets in siemens.  Fitting both parameters needs at least two.
    free_params : subset of ``{"g_lrs", "r_seg"}``
        Parameters to fit; the others keep their value from ``device`` and
        ``r_seg``.  ``g_hrs`` follows ``g_lrs`` at the device's on/off ratio.
    device, r_seg
        Starting point.  When several fits match the anchors equally well, the
        one closest to the starting ``r_seg * g_lrs`` is returned.
    tolerance : float
        Maximum accepted relative error per anchor.
    log_x_bounds : pair of float
        Search range for ``ln(r_seg * g_lrs)``.  ``r_seg = 0`` is always tried
        as well, exactly.

    Raises
    ------
    CalibrationError
        If some anchor is still off by more than ``tolerance`` after
        ``max_iter`` nonlinear corrections.  The best attempt is attached.
    """
    anchors = tuple(_as_anchor(a) for a in anchors)
    free = set(free_params)
    if not free or not free <= FREE_PARAMS:
        raise ValueError(f"free_params must be a non-empty subset of {sorted(FREE_PARAMS)}")
    if len(anchors) < len(free):
        raise ValueError(f"{len(free)} free parameters need at least {len(free)} anchors, got {len(anchors)}")
    device = device or DeviceParams()
    if not r_seg >= 0:
        raise ValueError("r_seg must be non-negative")
    if free == {"g_lrs"} and r_seg == 0:
        return _parasitic_free_fit(anchors, device)
    ratio = device.g_lrs / device.g_hrs
    objective = _Objective(anchors, free, device.g_lrs, r_seg, termination)

    def simulate(x, g):
        dev = DeviceParams.from_ratio(g, ratio, device.v_read, device.shape_b)
        maps = {}
        for m in sorted({a.simulated_n for a in anchors}):
            cfg = CrossbarConfig(m, r_seg=x / g, termination=termination)
            maps[m] = extract_geff(cfg, dev, options=options, workers=workers) / g
        return np.array([a.block_sum(maps[a.simulated_n]) for a in anchors])

    lo, hi = log_x_bounds
    slack = len(anchors) * 1e-6  # about 0.1 % per anchor
    ref = math.log(max(r_seg * device.g_lrs, math.exp(lo)))
    history = []
    log_x = None
    shape = None
    evaluations = 0
    at_floor = False
    for _ in range(max_iter):
        new = _minimize_near(objective, lo, hi, ref if log_x is None else log_x, slack)
        if "r_seg" in free and new <= lo + 1e-3:
            # Pushed against the floor: the anchors want no wire resistance at
            # all, which the exact candidate below covers.
            at_floor = True
            break
        if log_x is not None and abs(new - log_x) < 1e-4:
            break
        log_x = new
        x = math.exp(log_x)
        g = objective.conductance(x, objective.linear_shape(x) * objective.correction)
        shape = simulate(x, g)
        evaluations += 1
        objective.correction = shape / objective.linear_shape(x)
        history.append((x, g, float(np.max(np.abs(objective.relative_errors(x, shape))))))
        log.info("calibration step %d: r*g = %.4g, g = %.4g S, max residual %.3g",
                 evaluations, x, g, history[-1][2])

    best = None
    if shape is not None:
        x = math.exp(log_x)
        g = objective.conductance(x, shape)
        best = _result(anchors, device, ratio, g, x / g, g * shape, evaluations, history)
    # Exact parasitic-free candidate: every cell conducts its chord conductance.
    if "r_seg" in free:
        ideal = np.array([float(a.n * a.n) for a in anchors])
        g0 = objective.conductance(0.0, ideal) if "g_lrs" in free else device.g_lrs
        cand = _result(anchors, device, ratio, g0, 0.0, g0 * ideal, evaluations, history)
        if best is None or at_floor or cand.max_residual <= best.max_residual:
            best = cand
    if best.max_residual > tolerance:
        raise CalibrationError(
            f"calibration left a residual of {best.max_residual:.2%} (> {tolerance:.0%}):\n{best.report()}", best)
    return best


def _result(anchors, device, ratio, g, r, simulated, evaluations, history):
    dev = DeviceParams.from_ratio(g, ratio, device.v_read, device.shape_b)
    return CalibrationResult(dev, float(r), anchors, tuple(float(s) for s in simulated), evaluations,
                             tuple(history))


def _parasitic_free_fit(anchors, device):
    ideal = np.array([float(a.n * a.n) for a in anchors])
    u = ideal / np.array([a.sum_g for a in anchors])
    g = float(u.sum() / (u * u).sum())
    ratio = device.g_lrs / device.g_hrs
    return _result(anchors, device, ratio, g, 0.0, g * ideal, 0, ())


def anchors_from_config(config: CrossbarConfig, device: DeviceParams, specs, options=None):
    """Synthetic anchors simulated at a known ``(device, config)``; ``specs`` are ``(n, from_n)`` pairs."""
    maps = {}
    out = []
    for n, from_n in specs:
        m = n if from_n is None else from_n
        if m not in maps:
            maps[m] = extract_geff(replace(config, n=m), device, options=options)
        out.append(Anchor(n, float(maps[m][:n, :n].sum()), from_n))
    return out
