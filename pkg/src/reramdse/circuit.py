"""Crossbar nodal model and DC solver.

Node layout
-----------
Each cell ``(i, j)`` owns one wordline node and one bitline node, so an
``n x n`` array has ``2 n^2`` unknowns.  Node voltages are held in arrays of
shape ``(2, n, n)``: index 0 is the wordline layer, index 1 the bitline layer.

* Row ``i`` is driven at column 0: driver -> r_seg -> w[i, 0] -> r_seg -> w[i, 1] ...
* Column ``j`` is read at row 0: b[n-1, j] -> ... -> b[0, j] -> r_seg -> virtual ground.
* Cell ``(i, j)`` connects w[i, j] to b[i, j].

Row 0 / column 0 is therefore the corner nearest to both the DAC and the ADC,
and ``(n-1, n-1)`` is the far corner.  With double-sided termination the
opposite ends are also driven (rows) and sunk (columns).

Inactive rows are driven at 0 V through their driver segment, so sneak
currents through unselected cells are part of every solve.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .device import CellState, DeviceParams, SinhCell


class Termination(str, enum.Enum):
    SINGLE_SIDED = "single_sided"
    DOUBLE_SIDED = "double_sided"


class SolverError(RuntimeError):
    pass


class NonConvergence(SolverError):
    def __init__(self, message, last_residual=float("nan")):
        super().__init__(message)
        self.last_residual = last_residual


class SingularSystem(SolverError):
    pass


@dataclass(frozen=True)
class CrossbarConfig:
    """Geometry and wire parasitics of a square crossbar.

    ``r_seg`` and ``c_seg`` are per cell-to-cell segment and apply to both
    wordlines and bitlines.  ``c_seg`` only enters the Elmore estimate.
    """

    n: int
    r_seg: float = 1.0
    c_seg: float = 0.5e-15
    termination: Termination = Termination.SINGLE_SIDED
    v_drive: float = 0.2
    k_settle: float = 7.0

    def __post_init__(self):
        object.__setattr__(self, "termination", Termination(self.termination))
        if int(self.n) != self.n or self.n < 1:
            raise ValueError(f"n must be a positive integer, got {self.n}")
        if self.r_seg < 0 or self.c_seg < 0:
            raise ValueError("r_seg and c_seg must be non-negative")
        if not (self.v_drive > 0 and self.k_settle > 0):
            raise ValueError("v_drive and k_settle must be positive")

    @property
    def double_sided(self) -> bool:
        return self.termination is Termination.DOUBLE_SIDED


@dataclass(frozen=True)
class CellArray:
    """Per-cell sinh coefficients, shape ``(n, n)`` each."""

    a: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.a, dtype=float)
        b = np.asarray(self.b, dtype=float)
        if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape != b.shape:
            raise ValueError(f"cell coefficient arrays must be square and equal-shaped, got {a.shape} and {b.shape}")
        if not (np.all(a > 0) and np.all(b > 0)):
            raise ValueError("cell coefficients must be positive")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)

    @property
    def n(self) -> int:
        return self.a.shape[0]

    @property
    def is_uniform(self) -> bool:
        return bool(np.all(self.a == self.a.flat[0]) and np.all(self.b == self.b.flat[0]))

    @classmethod
    def uniform(cls, n: int, cell: SinhCell) -> "CellArray":
        return cls(np.full((n, n), cell.a), np.full((n, n), cell.b))

    @classmethod
    def from_states(cls, states, device: DeviceParams) -> "CellArray":
        """Build from an ``n x n`` matrix of :class:`CellState` (or their string values)."""
        states = np.asarray(states, dtype=object)
        if states.ndim != 2 or states.shape[0] != states.shape[1]:
            raise ValueError(f"state matrix must be square, got shape {states.shape}")
        lrs, hrs = device.lrs, device.hrs
        is_lrs = np.vectorize(lambda s: CellState(s) is CellState.LRS, otypes=[bool])(states)
        return cls(np.where(is_lrs, lrs.a, hrs.a), np.where(is_lrs, lrs.b, hrs.b))

    @classmethod
    def linear(cls, conductance, b: float = 1e-7) -> "CellArray":
        """Cells that are ohmic to within ``(b*V)^2/6`` relative error."""
        g = np.asarray(conductance, dtype=float)
        return cls(g / b, np.full(g.shape, b))

    def current(self, v):
        return self.a * np.sinh(self.b * v)

    def conductance(self, v):
        return self.a * self.b * np.cosh(self.b * v)


@dataclass
class SolverOptions:
    """Newton controls.

    Convergence needs both ``max |KCL residual| <= abstol`` and a last Newton
    update that moved every terminal current by at most ``current_rtol``
    times the largest terminal current.
    """

    abstol: float = 1e-12
    max_iter: int = 50
    current_rtol: float = 1e-10
    inner_rtol: float = 1e-6
    inner_max_iter: int = 200
    max_halvings: int = 30
    preconditioner: str = "auto"  # "auto" | "spectral" | "lu"


@dataclass
class DcSolution:
    wordline: np.ndarray
    bitline: np.ndarray
    column_currents: np.ndarray
    newton_iterations: int
    kcl_residual: float
    tolerance: float = 1e-12
    driver_currents: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if not self.kcl_residual <= self.tolerance:
            raise SolverError(f"KCL residual {self.kcl_residual:.3e} A exceeds tolerance {self.tolerance:.1e} A")


@dataclass
class BatchSolution:
    """Solutions for ``K`` drive vectors, node voltages of shape ``(K, 2, n, n)``."""

    x: np.ndarray
    iterations: np.ndarray
    residual: np.ndarray
    column_currents: np.ndarray
    driver_currents: np.ndarray


def _tridiag_apply(x, d, g, axis):
    """``T @ x`` along ``axis`` for the segment chain matrix ``T``."""
    y = x * np.expand_dims(d, tuple(k for k in range(-x.ndim, 0) if k != axis))
    lo = [slice(None)] * x.ndim
    hi = [slice(None)] * x.ndim
    lo[axis] = slice(None, -1)
    hi[axis] = slice(1, None)
    y[tuple(lo)] -= g * x[tuple(hi)]
    y[tuple(hi)] -= g * x[tuple(lo)]
    return y


class NodalSystem:
    """Nonlinear nodal equations of one crossbar plus its solver workspace.

    A system is single-use-at-a-time; build one per worker.
    """

    def __init__(self, config: CrossbarConfig, cells: CellArray, options: SolverOptions | None = None):
        if cells.n != config.n:
            raise ValueError(f"cell array is {cells.n}x{cells.n} but config.n = {config.n}")
        self.config = config
        self.cells = cells
        self.options = options or SolverOptions()
        self.n = config.n
        self.parasitic_free = config.r_seg == 0
        if not self.parasitic_free:
            self.g_wire = 1.0 / config.r_seg
            diag = np.full(self.n, 2.0 * self.g_wire)
            if not config.double_sided:
                diag[-1] = self.g_wire
            self._diag = diag
        self._precond = None

    @property
    def n_unknowns(self) -> int:
        return 0 if self.parasitic_free else 2 * self.n * self.n

    # -- sparse description -------------------------------------------------

    def chain_matrix(self) -> sp.csr_matrix:
        """Segment-chain matrix ``T`` shared by every wordline and bitline."""
        n, g = self.n, self.g_wire
        return sp.diags([np.full(n - 1, -g), self._diag, np.full(n - 1, -g)], [-1, 0, 1], format="csr")

    def jacobian(self, cell_conductance: np.ndarray) -> sp.csc_matrix:
        """Sparse nodal matrix for the given per-cell (small-signal) conductances."""
        if self.parasitic_free:
            raise SingularSystem("parasitic-free array has no internal nodes")
        n = self.n
        t = self.chain_matrix()
        eye = sp.identity(n, format="csr")
        gd = sp.diags(np.asarray(cell_conductance, dtype=float).ravel())
        lw = sp.kron(eye, t) + gd
        lb = sp.kron(t, eye) + gd
        return sp.bmat([[lw, -gd], [-gd, lb]], format="csc")

    def triplets(self, cell_conductance=None):
        """``(row, col, value)`` triplets of the nodal matrix, sorted row-major."""
        if cell_conductance is None:
            cell_conductance = self.cells.conductance(0.0)
        m = self.jacobian(cell_conductance).tocoo()
        order = np.lexsort((m.col, m.row))
        return list(zip(m.row[order].tolist(), m.col[order].tolist(), m.data[order].tolist()))

    def dump_triplets(self, path, cell_conductance=None):
        with open(path, "w") as fh:
            for r, c, v in self.triplets(cell_conductance):
                fh.write(f"{r} {c} {v!r}\n")

    # -- residual and Jacobian action ---------------------------------------

    def _injection(self, row_v):
        """Driver current injected at wordline ends for row voltages ``(K, n)``."""
        inj = np.zeros((row_v.shape[0], self.n, self.n))
        inj[:, :, 0] += self.g_wire * row_v
        if self.config.double_sided:
            inj[:, :, -1] += self.g_wire * row_v
        return inj

    def residual(self, x, row_v):
        """Net current leaving every node (A), shape ``(K, 2, n, n)``."""
        w, b = x[:, 0], x[:, 1]
        i_cell = self.cells.current(w - b)
        f = np.empty_like(x)
        f[:, 0] = _tridiag_apply(w, self._diag, self.g_wire, -1) - self._injection(row_v) + i_cell
        f[:, 1] = _tridiag_apply(b, self._diag, self.g_wire, -2) - i_cell
        return f

    def _jac_apply(self, gd, p):
        pw, pb = p[:, 0], p[:, 1]
        c = gd * (pw - pb)
        out = np.empty_like(p)
        out[:, 0] = _tridiag_apply(pw, self._diag, self.g_wire, -1) + c
        out[:, 1] = _tridiag_apply(pb, self._diag, self.g_wire, -2) - c
        return out

    def _terminal_change(self, dx):
        k = dx.shape[0]
        col = np.abs(self.column_currents(dx)).reshape(k, -1).max(axis=1)
        drv = np.abs(self.driver_currents(dx, np.zeros((k, self.n)))).reshape(k, -1).max(axis=1)
        return np.maximum(col, drv)

    def _terminal_scale(self, x, row_v):
        k = x.shape[0]
        col = np.abs(self.column_currents(x)).reshape(k, -1).max(axis=1)
        drv = np.abs(self.driver_currents(x, row_v)).reshape(k, -1).max(axis=1)
        return np.maximum(col, drv)

    def column_currents(self, x):
        cur = self.g_wire * x[:, 1, 0, :]
        if self.config.double_sided:
            cur = cur + self.g_wire * x[:, 1, -1, :]
        return cur

    def driver_currents(self, x, row_v):
        cur = self.g_wire * (row_v - x[:, 0, :, 0])
        if self.config.double_sided:
            cur = cur + self.g_wire * (row_v - x[:, 0, :, -1])
        return cur

    # -- preconditioner -----------------------------------------------------

    def _reference_conductance(self):
        # Linearize halfway up the drive range; the Jacobian spread around it stays small.
        return self.cells.conductance(0.5 * self.config.v_drive)

    def _build_preconditioner(self):
        mode = self.options.preconditioner
        if mode == "auto":
            mode = "spectral" if self.cells.is_uniform else "lu"
        g0 = self._reference_conductance()
        if mode == "spectral":
            if not self.cells.is_uniform:
                raise ValueError("spectral preconditioner needs uniform cells")
            self._precond = _SpectralSolver(self._diag, self.g_wire, float(g0.flat[0]))
        elif mode == "lu":
            try:
                lu = spla.splu(self.jacobian(g0), permc_spec="MMD_AT_PLUS_A")
            except RuntimeError as exc:
                raise SingularSystem(str(exc)) from exc
            self._precond = _LuSolver(lu, self.n)
        else:
            raise ValueError(f"unknown preconditioner {mode!r}")

    def _linear_guess(self, row_v):
        """Operating point of the network linearized at the preconditioner's conductance."""
        if self._precond is None:
            self._build_preconditioner()
        rhs = np.zeros((row_v.shape[0], 2, self.n, self.n))
        rhs[:, 0] = self._injection(row_v)
        return self._precond.solve(rhs)

    def _pcg(self, gd, rhs, rtol):
        """Preconditioned CG on ``J dx = rhs`` independently for every batch column."""
        if self._precond is None:
            self._build_preconditioner()
        axes = (1, 2, 3)
        x = np.zeros_like(rhs)
        r = rhs.copy()
        target = rtol * np.sqrt(np.sum(rhs * rhs, axis=axes))
        done = np.sqrt(np.sum(r * r, axis=axes)) <= target
        z = self._precond.solve(r)
        p = z.copy()
        rz = np.sum(r * z, axis=axes)
        for _ in range(self.options.inner_max_iter):
            if done.all():
                break
            q = self._jac_apply(gd, p)
            pq = np.sum(p * q, axis=axes)
            alpha = np.where(done, 0.0, rz / np.where(pq > 0, pq, 1.0))[:, None, None, None]
            x += alpha * p
            r -= alpha * q
            done |= np.sqrt(np.sum(r * r, axis=axes)) <= target
            z = self._precond.solve(r)
            rz_new = np.sum(r * z, axis=axes)
            beta = np.where(done, 0.0, rz_new / np.where(rz > 0, rz, 1.0))[:, None, None, None]
            p = z + beta * p
            rz = rz_new
        return x

    # -- Newton ---------------------------------------------------------------

    def solve_batch(self, row_voltages, x0=None) -> BatchSolution:
        """Solve the DC operating point for each row-voltage vector.

        ``row_voltages`` has shape ``(K, n)``.  Columns of the batch are solved
        independently; a converged column is frozen, so the answer for one
        drive vector does not depend on what else shares the batch.
        """
        row_v = np.atleast_2d(np.asarray(row_voltages, dtype=float))
        if row_v.shape[1] != self.n:
            raise ValueError(f"expected {self.n} row voltages, got {row_v.shape[1]}")
        k = row_v.shape[0]
        if self.parasitic_free:
            return self._solve_ideal(row_v)

        opt = self.options
        if x0 is None:
            x = self._linear_guess(row_v)
        else:
            x = np.array(x0, dtype=float, copy=True)
        f = self.residual(x, row_v)
        res = np.abs(f).reshape(k, -1).max(axis=1)
        active = res > 0
        iters = np.zeros(k, dtype=int)
        for _ in range(opt.max_iter):
            if not active.any():
                break
            idx = np.flatnonzero(active)
            xa, fa, ra, va = x[idx], f[idx], res[idx], row_v[idx]
            gd = self.cells.conductance(xa[:, 0] - xa[:, 1])
            dx = self._pcg(gd, -fa, opt.inner_rtol)

            step = np.ones(len(idx))
            xt = xa + dx
            ft = self.residual(xt, va)
            rt = np.abs(ft).reshape(len(idx), -1).max(axis=1)
            for _ in range(opt.max_halvings):
                worse = rt > ra * (1 + 1e-9) + 1e-3 * opt.abstol
                if not worse.any():
                    break
                step[worse] *= 0.5
                sub = np.flatnonzero(worse)
                xt[sub] = xa[sub] + step[sub, None, None, None] * dx[sub]
                ft[sub] = self.residual(xt[sub], va[sub])
                rt[sub] = np.abs(ft[sub]).reshape(len(sub), -1).max(axis=1)

            x[idx], f[idx], res[idx] = xt, ft, rt
            iters[idx] += 1
            moved = self._terminal_change(step[:, None, None, None] * dx)
            scale = self._terminal_scale(xt, va)
            # Terminal currents are g_wire * (v - x): below this floor the change is roundoff.
            floor = 16 * np.finfo(float).eps * self.g_wire * np.abs(va).max(axis=1)
            active[idx] = (rt > opt.abstol) | (moved > opt.current_rtol * scale + floor)
        if active.any():
            worst = float(res[active].max())
            raise NonConvergence(
                f"Newton did not converge in {opt.max_iter} iterations "
                f"({int(active.sum())} of {k} drive vectors, residual {worst:.3e} A)", worst)
        return BatchSolution(x, iters, res, self.column_currents(x), self.driver_currents(x, row_v))

    def _solve_ideal(self, row_v):
        k, n = row_v.shape
        x = np.zeros((k, 2, n, n))
        x[:, 0] = row_v[:, :, None]
        cur = self.cells.current(row_v[:, :, None] * np.ones((1, 1, n)))
        return BatchSolution(x, np.zeros(k, dtype=int), np.zeros(k), cur.sum(axis=1), cur.sum(axis=2))


class _SpectralSolver:
    """Exact solve of the uniform-cell linearized system.

    Wordline and bitline chains share the matrix ``T = Q diag(lam) Q^T``, so in
    the basis ``Q (.) Q^T`` every mode ``(k, l)`` decouples into a 2x2 system.
    """

    def __init__(self, diag, g_wire, g0):
        n = len(diag)
        if n == 1:
            lam, q = np.array(diag, dtype=float), np.ones((1, 1))
        else:
            lam, q = scipy.linalg.eigh_tridiagonal(diag, np.full(n - 1, -g_wire))
        self.q = q
        self.g0 = g0
        self.a_w = lam[None, :] + g0
        self.a_b = lam[:, None] + g0
        self.det = self.a_w * self.a_b - g0 * g0

    def solve(self, r):
        q, g0 = self.q, self.g0
        rw = q.T @ r[:, 0] @ q
        rb = q.T @ r[:, 1] @ q
        out = np.empty_like(r)
        out[:, 0] = q @ ((self.a_b * rw + g0 * rb) / self.det) @ q.T
        out[:, 1] = q @ ((g0 * rw + self.a_w * rb) / self.det) @ q.T
        return out


class _LuSolver:
    def __init__(self, lu, n):
        self.lu = lu
        self.n = n

    def solve(self, r):
        k = r.shape[0]
        flat = r.reshape(k, -1).T
        return np.ascontiguousarray(self.lu.solve(np.asfortranarray(flat)).T).reshape(r.shape)


def build_system(config: CrossbarConfig, cells, device: DeviceParams | None = None,
                 options: SolverOptions | None = None) -> NodalSystem:
    """Assemble the nodal system.

    ``cells`` is either a :class:`CellArray` or an ``n x n`` state matrix, in
    which case ``device`` supplies the LRS/HRS coefficients.
    """
    if not isinstance(cells, CellArray):
        if device is None:
            raise ValueError("a state matrix needs DeviceParams")
        cells = CellArray.from_states(cells, device)
    return NodalSystem(config, cells, options)


def solve_dc(system: NodalSystem, row_voltages, x0=None) -> DcSolution:
    """DC operating point for one vector of row voltages."""
    v = np.asarray(row_voltages, dtype=float).reshape(1, -1)
    sol = system.solve_batch(v, None if x0 is None else np.asarray(x0)[None])
    return DcSolution(
        wordline=sol.x[0, 0],
        bitline=sol.x[0, 1],
        column_currents=sol.column_currents[0],
        newton_iterations=int(sol.iterations[0]),
        kcl_residual=float(sol.residual[0]),
        tolerance=system.options.abstol,
        driver_currents=sol.driver_currents[0],
    )


def ladder_length(config: CrossbarConfig) -> int:
    """Segments on the worst-case DAC-to-ADC path."""
    return config.n if config.double_sided else 2 * config.n


def elmore_delay(config: CrossbarConfig) -> float:
    """Elmore delay of the worst-case path, a uniform RC ladder of ``L`` segments.

    The first segment is the driver segment, so the sum
    ``sum_k r*c*(L - k + 1) = r*c*L*(L+1)/2`` already includes it.
    """
    length = ladder_length(config)
    return config.r_seg * config.c_seg * length * (length + 1) / 2.0


def max_frequency(config: CrossbarConfig, k_settle: float | None = None) -> float:
    """Settling-limited clock ``1 / (k_settle * elmore_delay)``; ``inf`` without an RC limit."""
    k = config.k_settle if k_settle is None else k_settle
    delay = elmore_delay(config)
    return math.inf if delay == 0 else 1.0 / (k * delay)


def linear_geff(config: CrossbarConfig, conductance: float) -> np.ndarray:
    """Exact ``G_eff`` map of an array of identical ohmic cells.

    ``G_eff[i, j]`` is the current into column ``j``'s virtual ground per volt
    on row ``i``.  In the eigenbasis of the segment chain a one-hot drive only
    excites separable modes, so the whole map costs two dense products.
    """
    if not conductance > 0:
        raise ValueError("cell conductance must be positive")
    n = config.n
    if config.r_seg == 0:
        return np.full((n, n), float(conductance))
    g_wire = 1.0 / config.r_seg
    diag = np.full(n, 2.0 * g_wire)
    if not config.double_sided:
        diag[-1] = g_wire
    solver = _SpectralSolver(diag, g_wire, float(conductance))
    q = solver.q
    ends = q[0] + q[-1] if config.double_sided else q[0]
    qe = q * ends
    return g_wire * g_wire * conductance * (qe @ (1.0 / solver.det) @ qe.T)
