"""Nominal ReRAM cell model.

The cell obeys ``I(V) = a * sinh(b * V)``.  ``a`` is chosen so that the chord
conductance ``I(v_read) / v_read`` equals the programmed state's nominal
conductance; ``b`` sets how strongly the cell departs from ohmic behavior.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np


class CellState(str, enum.Enum):
    LRS = "LRS"
    HRS = "HRS"


@dataclass(frozen=True)
class SinhCell:
    """Coefficients of one programmed state: ``I = a * sinh(b * V)``."""

    a: float
    b: float

    def __post_init__(self):
        if not (self.a > 0 and self.b > 0):
            raise ValueError(f"sinh coefficients must be positive, got a={self.a}, b={self.b}")

    def chord_conductance(self, v: float) -> float:
        return float(cell_current(self, v) / v)


@dataclass(frozen=True)
class DeviceParams:
    """Nominal device: LRS/HRS conductance targets at the read voltage.

    Parameters
    ----------
    g_lrs : float
        Low-resistance-state chord conductance at ``v_read`` (S).
    g_hrs : float
        High-resistance-state chord conductance at ``v_read`` (S).
    v_read : float
        Read voltage at which both targets are met exactly (V).
    shape_b : float
        sinh voltage-shape coefficient (1/V), shared by both states.
    """

    g_lrs: float = 48e-6
    g_hrs: float = 0.48e-6
    v_read: float = 0.2
    shape_b: float = 2.0

    def __post_init__(self):
        if not self.g_lrs > self.g_hrs > 0:
            raise ValueError("require g_lrs > g_hrs > 0")
        if not (self.v_read > 0 and self.shape_b > 0):
            raise ValueError("v_read and shape_b must be positive")

    @classmethod
    def from_ratio(cls, g_lrs: float = 48e-6, hrs_ratio: float = 100.0, v_read: float = 0.2,
                   shape_b: float = 2.0) -> "DeviceParams":
        return cls(g_lrs=g_lrs, g_hrs=g_lrs / hrs_ratio, v_read=v_read, shape_b=shape_b)

    def cell(self, state: CellState | str) -> SinhCell:
        state = CellState(state)
        g = self.g_lrs if state is CellState.LRS else self.g_hrs
        a, b = fit_sinh_params(g, self.v_read, self.shape_b)
        return SinhCell(a, b)

    @property
    def lrs(self) -> SinhCell:
        return self.cell(CellState.LRS)

    @property
    def hrs(self) -> SinhCell:
        return self.cell(CellState.HRS)


def cell_current(cell: SinhCell, v):
    """Current through the cell at voltage ``v`` (scalar or array)."""
    return cell.a * np.sinh(cell.b * np.asarray(v, dtype=float))


def cell_small_signal_conductance(cell: SinhCell, v):
    """Exact ``dI/dV = a*b*cosh(b*v)``."""
    return cell.a * cell.b * np.cosh(cell.b * np.asarray(v, dtype=float))


def fit_sinh_params(g_target: float, v_read: float, shape_b: float) -> tuple[float, float]:
    """Return ``(a, b)`` whose chord conductance at ``v_read`` is exactly ``g_target``."""
    if not (g_target > 0 and v_read > 0 and shape_b > 0):
        raise ValueError("g_target, v_read and shape_b must all be positive")
    x = shape_b * v_read
    # sinh(x)/x computed stably for tiny shape coefficients (linear limit).
    ratio = math.sinh(x) / x if x > 1e-8 else 1.0 + x * x / 6.0
    a = g_target / (shape_b * ratio)
    return a, shape_b


def calibrate_to_anchors(anchors, free_params=("g_lrs", "r_seg"), **kwargs):
    """Fit ``g_lrs`` and the wire resistance to cumulative-conductance anchors.

    See :func:`reramdse.calibration.calibrate_to_anchors`.
    """
    from .calibration import calibrate_to_anchors as _fit  # needs the circuit solver

    return _fit(anchors, free_params, **kwargs)
