"""Finite-difference oracle for the degenerate pricing operator.

Discretizes A u = r u - (y/2)(u_xx + 2 rho sigma u_xy + sigma^2 u_yy)
- (r - q - y/2) u_x - kappa (theta - y) u_y on a uniform tensor grid and
solves the elliptic, parabolic and obstacle (LCP) problems independently of
the Monte Carlo engine.

Drift terms use central differences wherever the cell Peclet condition keeps
the row an M-matrix row and fall back to sign-upwinding otherwise, so smooth
solutions away from the degenerate line converge at second order while
monotonicity is preserved everywhere.  On the y = 0 row (Gamma1-only mode)
the second-order terms vanish and the first-order equation
r u - (r - q) u_x - kappa theta u_y = f closes the system with a one-sided
u_y; no data is imposed there.

The linear solves are sparse-LU with iterative refinement to a 1e-10
residual; the obstacle complementarity systems use projected SOR.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from numba import njit
from scipy import sparse
from scipy.sparse.linalg import splu

from .errors import ParameterError, SolverError
from .geometry import BoundaryConditionMode
from .model import HestonParams
from .problems import DataFn, ProblemData

LINEAR_RESIDUAL_TOL = 1e-10
PSOR_OMEGA = 1.2
PSOR_TOL = 1e-11
PSOR_MAX_SWEEPS = 50_000

DIRICHLET = "dirichlet"
EXTRAPOLATE = "extrapolate"  # zero second difference normal to the edge


@dataclass(frozen=True)
class Grid2D:
    """Uniform tensor grid on [x0, x1] x [y0, y1]; y0 = 0 when the domain
    touches the degenerate line."""

    nx: int
    ny: int
    x0: float
    x1: float
    y0: float
    y1: float

    def __post_init__(self):
        if self.nx < 3 or self.ny < 3:
            raise ParameterError("grid needs at least 3 nodes per direction")
        if not (self.x0 < self.x1 and self.y0 < self.y1):
            raise ParameterError("grid ranges must be nonempty")
        if self.y0 < 0.0:
            raise ParameterError("grid must lie in the closed half-plane")

    @property
    def hx(self) -> float:
        return (self.x1 - self.x0) / (self.nx - 1)

    @property
    def hy(self) -> float:
        return (self.y1 - self.y0) / (self.ny - 1)

    @property
    def xs(self) -> np.ndarray:
        return np.linspace(self.x0, self.x1, self.nx)

    @property
    def ys(self) -> np.ndarray:
        return np.linspace(self.y0, self.y1, self.ny)

    @property
    def touches_gamma0(self) -> bool:
        return self.y0 == 0.0

    def index(self, i: int, j: int) -> int:
        return j * self.nx + i

    def meshes(self) -> tuple[np.ndarray, np.ndarray]:
        """(X, Y) arrays of shape (ny, nx)."""
        return np.meshgrid(self.xs, self.ys)


@dataclass(frozen=True)
class EdgeConditions:
    """Condition applied on the three nondegenerate grid edges.

    The bottom edge is governed by the boundary-condition mode: degenerate
    PDE row in Gamma1-only mode (when the grid touches y = 0), Dirichlet in
    full-boundary mode.
    """

    left: str = DIRICHLET
    right: str = DIRICHLET
    top: str = DIRICHLET

    def __post_init__(self):
        for side in (self.left, self.right, self.top):
            if side not in (DIRICHLET, EXTRAPOLATE):
                raise ParameterError(f"unknown edge condition {side!r}")


NodeRole = np.ndarray  # int8 field: 0 interior/PDE row, 1 Dirichlet, 2 extrapolation


_ROLE_PDE = 0
_ROLE_DIRICHLET = 1
_ROLE_EXTRAP = 2


@dataclass
class DiscreteOperator:
    """Assembled stencil L with (L u)_k ~ (A u)(x_k, y_k) on PDE rows.

    Dirichlet rows are identity; extrapolation rows impose a vanishing second
    difference normal to their edge.  ``roles`` records which is which.
    """

    grid: Grid2D
    matrix: sparse.csr_matrix
    roles: NodeRole
    mode: BoundaryConditionMode

    @property
    def n(self) -> int:
        return self.grid.nx * self.grid.ny


def _node_roles(grid: Grid2D, mode: BoundaryConditionMode, edges: EdgeConditions) -> NodeRole:
    nx, ny = grid.nx, grid.ny
    roles = np.zeros(nx * ny, dtype=np.int8)

    def set_edge(sel: np.ndarray, cond: str):
        roles[sel] = _ROLE_DIRICHLET if cond == DIRICHLET else _ROLE_EXTRAP

    left = np.array([grid.index(0, j) for j in range(ny)])
    right = np.array([grid.index(nx - 1, j) for j in range(ny)])
    top = np.array([grid.index(i, ny - 1) for i in range(nx)])
    bottom = np.array([grid.index(i, 0) for i in range(nx)])

    degenerate_bottom = grid.touches_gamma0 and mode == BoundaryConditionMode.GAMMA1_ONLY
    if not degenerate_bottom:
        roles[bottom] = _ROLE_DIRICHLET
    set_edge(top, edges.top)
    set_edge(left, edges.left)
    set_edge(right, edges.right)
    # Bottom corners always follow the lateral edges so the degenerate row
    # has Dirichlet neighbours to lean on.
    if degenerate_bottom:
        roles[grid.index(0, 0)] = _ROLE_DIRICHLET if edges.left == DIRICHLET else _ROLE_EXTRAP
        roles[grid.index(nx - 1, 0)] = _ROLE_DIRICHLET if edges.right == DIRICHLET else _ROLE_EXTRAP
    return roles


def assemble_operator(
    grid: Grid2D,
    p: HestonParams,
    mode: BoundaryConditionMode,
    edges: Optional[EdgeConditions] = None,
) -> DiscreteOperator:
    """Build the sparse operator with boundary rows in place."""
    if edges is None:
        edges = EdgeConditions()
    if mode == BoundaryConditionMode.GAMMA1_ONLY and not grid.touches_gamma0:
        # Interior-in-y grids have no Gamma0 part; the bottom edge is then
        # ordinary Gamma1 and gets a Dirichlet row.
        pass
    roles = _node_roles(grid, mode, edges)

    nx, ny = grid.nx, grid.ny
    hx, hy = grid.hx, grid.hy
    xs, ys = grid.xs, grid.ys
    rows: list[int] = []
    cols: list[int] = []
    vals: list[float] = []

    def add(r_, c_, v_):
        rows.append(r_)
        cols.append(c_)
        vals.append(v_)

    s2 = p.sigma * p.sigma
    cross = p.rho * p.sigma

    for j in range(ny):
        y = ys[j]
        for i in range(nx):
            k = grid.index(i, j)
            role = roles[k]
            if role == _ROLE_DIRICHLET:
                add(k, k, 1.0)
                continue
            if role == _ROLE_EXTRAP:
                # Second difference normal to the edge vanishes.
                if i == 0:
                    add(k, k, 1.0)
                    add(k, grid.index(1, j), -2.0)
                    add(k, grid.index(2, j), 1.0)
                elif i == nx - 1:
                    add(k, k, 1.0)
                    add(k, grid.index(nx - 2, j), -2.0)
                    add(k, grid.index(nx - 3, j), 1.0)
                else:  # top edge
                    add(k, k, 1.0)
                    add(k, grid.index(i, ny - 2), -2.0)
                    add(k, grid.index(i, ny - 3), 1.0)
                continue

            if j == 0:
                # Degenerate row: r u - (r - q) u_x - kappa theta u_y = f.
                diag = p.r
                b1 = p.r - p.q
                if b1 >= 0.0:
                    add(k, grid.index(i + 1, j), -b1 / hx)
                    diag += b1 / hx
                else:
                    add(k, grid.index(i - 1, j), b1 / hx)
                    diag += -b1 / hx
                b2 = p.kappa * p.theta
                add(k, grid.index(i, 1), -b2 / hy)
                diag += b2 / hy
                add(k, k, diag)
                continue

            ax = 0.5 * y           # u_xx coefficient (positive)
            ay = 0.5 * y * s2      # u_yy coefficient
            b1 = p.r - p.q - 0.5 * y
            b2 = p.kappa * (p.theta - y)
            diag = p.r + 2.0 * ax / (hx * hx) + 2.0 * ay / (hy * hy)

            e = -ax / (hx * hx)
            w = -ax / (hx * hx)
            if abs(b1) * hx <= 2.0 * ax:
                e += -b1 / (2.0 * hx)
                w += b1 / (2.0 * hx)
            elif b1 > 0.0:
                e += -b1 / hx
                diag += b1 / hx
            else:
                w += b1 / hx
                diag += -b1 / hx
            add(k, grid.index(i + 1, j), e)
            add(k, grid.index(i - 1, j), w)

            n_ = -ay / (hy * hy)
            s_ = -ay / (hy * hy)
            if abs(b2) * hy <= 2.0 * ay:
                n_ += -b2 / (2.0 * hy)
                s_ += b2 / (2.0 * hy)
            elif b2 > 0.0:
                n_ += -b2 / hy
                diag += b2 / hy
            else:
                s_ += b2 / hy
                diag += -b2 / hy
            add(k, grid.index(i, j + 1), n_)
            add(k, grid.index(i, j - 1), s_)

            c = -y * cross / (4.0 * hx * hy)
            if c != 0.0:
                add(k, grid.index(i + 1, j + 1), c)
                add(k, grid.index(i - 1, j - 1), c)
                add(k, grid.index(i + 1, j - 1), -c)
                add(k, grid.index(i - 1, j + 1), -c)

            add(k, k, diag)

    m = sparse.csr_matrix(
        (vals, (rows, cols)), shape=(nx * ny, nx * ny)
    )
    m.sum_duplicates()
    return DiscreteOperator(grid=grid, matrix=m, roles=roles, mode=mode)


def _eval_field(fn: DataFn, t: float, grid: Grid2D) -> np.ndarray:
    X, Y = grid.meshes()
    return np.asarray(fn(t, X.ravel(), Y.ravel()), dtype=float)


def _rhs_linear(op: DiscreteOperator, f_field: np.ndarray, g_field: np.ndarray) -> np.ndarray:
    rhs = np.where(op.roles == _ROLE_DIRICHLET, g_field, f_field)
    rhs[op.roles == _ROLE_EXTRAP] = 0.0
    return rhs


def _solve_refined(matrix: sparse.csr_matrix, rhs: np.ndarray) -> np.ndarray:
    """Sparse LU plus iterative refinement down to the residual tolerance."""
    lu = splu(matrix.tocsc())
    u = lu.solve(rhs)
    scale = max(np.max(np.abs(rhs)), 1.0)
    for _ in range(10):
        res = rhs - matrix @ u
        if np.max(np.abs(res)) <= LINEAR_RESIDUAL_TOL * scale:
            return u
        u = u + lu.solve(res)
    res = np.max(np.abs(rhs - matrix @ u))
    raise SolverError(f"linear solve stalled at residual {res:.3e}")


def solve_elliptic(
    grid: Grid2D,
    p: HestonParams,
    data: ProblemData,
    mode: BoundaryConditionMode,
    edges: Optional[EdgeConditions] = None,
) -> np.ndarray:
    """Solve A u = f with g on the designated boundary locus.

    Returns the value field with shape (ny, nx).
    """
    op = assemble_operator(grid, p, mode, edges)
    f_field = _eval_field(data.f, 0.0, grid)
    g_field = _eval_field(data.g, 0.0, grid)
    u = _solve_refined(op.matrix, _rhs_linear(op, f_field, g_field))
    return u.reshape(grid.ny, grid.nx)


@dataclass
class ParabolicResult:
    grid: Grid2D
    times: np.ndarray            # requested output times, ascending
    fields: list[np.ndarray]     # value field (ny, nx) at each time
    complementarity: float = 0.0  # max per-step LCP residual (obstacle runs)

    def at(self, t: float) -> np.ndarray:
        k = int(np.argmin(np.abs(self.times - t)))
        return self.fields[k]


def _march_parabolic(
    op: DiscreteOperator,
    p: HestonParams,
    data: ProblemData,
    T: float,
    n_steps: int,
    output_times: list[float],
    rannacher_steps: int = 2,
    obstacle: bool = False,
) -> ParabolicResult:
    """Backward-in-time theta-scheme on w(tau) = u(T - tau).

    Crank-Nicolson with an implicit-Euler (Rannacher) start on half steps;
    with ``obstacle`` each implicit step becomes a projected SOR solve of the
    complementarity system against psi at the new time level.
    """
    grid = op.grid
    n = op.n
    L = op.matrix
    roles = op.roles
    pde_rows = roles == _ROLE_PDE
    dirichlet = roles == _ROLE_DIRICHLET
    extrap = roles == _ROLE_EXTRAP
    # Boundary rows of L already hold the identity/extrapolation stencils;
    # build M(theta, dt) = [pde rows: I + theta dt L] + [boundary rows of L].
    L_pde = sparse.diags(pde_rows.astype(float)) @ L
    L_bnd = sparse.diags((~pde_rows).astype(float)) @ L

    def implicit_matrix(theta: float, dt: float) -> sparse.csr_matrix:
        return (sparse.diags(pde_rows.astype(float)) + theta * dt * L_pde + L_bnd).tocsr()

    dt = T / n_steps
    # Schedule: rannacher_steps full steps split into implicit half steps.
    schedule: list[tuple[float, float]] = []
    for _ in range(rannacher_steps):
        schedule.append((1.0, 0.5 * dt))
        schedule.append((1.0, 0.5 * dt))
    for _ in range(n_steps - rannacher_steps):
        schedule.append((0.5, dt))
    if len(schedule) == 0:
        raise ParameterError("n_steps must be positive")

    X, Y = grid.meshes()
    xf, yf = X.ravel(), Y.ravel()
    f_zero = getattr(data.f, "is_zero", False)

    w = np.asarray(data.g(T, xf, yf), dtype=float).copy()
    tau = 0.0
    out_taus = sorted({T - t for t in output_times})
    results: dict[float, np.ndarray] = {}
    eps = 1e-12

    def maybe_record():
        for ot in out_taus:
            if ot not in results and tau >= ot - eps:
                results[ot] = w.copy().reshape(grid.ny, grid.nx)

    maybe_record()
    comp = 0.0
    solvers: dict[tuple[float, float], object] = {}
    matrices: dict[tuple[float, float], sparse.csr_matrix] = {}
    for key in set(schedule):
        matrices[key] = implicit_matrix(*key)
        if not obstacle:
            solvers[key] = splu(matrices[key].tocsc())

    for (theta, step) in schedule:
        t_new = T - (tau + step)
        t_mid = T - (tau + 0.5 * step)
        rhs = np.zeros(n)
        rhs[pde_rows] = (w - (1.0 - theta) * step * (L_pde @ w))[pde_rows]
        if not f_zero:
            rhs[pde_rows] += step * np.asarray(data.f(t_mid, xf, yf), dtype=float)[pde_rows]
        rhs[dirichlet] = np.asarray(data.g(t_new, xf, yf), dtype=float)[dirichlet]
        rhs[extrap] = 0.0
        key = (theta, step)
        if obstacle:
            psi_field = np.asarray(data.psi(t_new, xf, yf), dtype=float)
            w = _psor_solve(matrices[key], rhs, psi_field, w, obstacle_rows=pde_rows)
            comp = max(
                comp,
                complementarity_residual(matrices[key], w, rhs, psi_field, pde_rows),
            )
        else:
            w = solvers[key].solve(rhs)
        tau += step
        maybe_record()

    times = np.array(sorted(output_times))
    fields = [results[min(out_taus, key=lambda ot: abs(ot - (T - t)))] for t in times]
    return ParabolicResult(grid=grid, times=times, fields=fields, complementarity=comp)


def solve_parabolic(
    grid: Grid2D,
    p: HestonParams,
    data: ProblemData,
    T: float,
    mode: BoundaryConditionMode,
    n_steps: int,
    output_times: Optional[list[float]] = None,
    edges: Optional[EdgeConditions] = None,
) -> ParabolicResult:
    """Backward solve of the terminal value problem; value at the requested
    times (default: t = 0 only)."""
    op = assemble_operator(grid, p, mode, edges)
    if output_times is None:
        output_times = [0.0]
    return _march_parabolic(op, p, data, T, n_steps, output_times)


# ---------------------------------------------------------------------------
# Obstacle problems (projected SOR)
# ---------------------------------------------------------------------------

@njit(cache=True)
def _psor_kernel(indptr, indices, vals, b, psi, x, constrained, omega, tol, max_sweeps):
    n = b.shape[0]
    for sweep in range(max_sweeps):
        max_delta = 0.0
        for i in range(n):
            acc = 0.0
            diag = 0.0
            for idx in range(indptr[i], indptr[i + 1]):
                j = indices[idx]
                if j == i:
                    diag += vals[idx]
                else:
                    acc += vals[idx] * x[j]
            x_gs = (b[i] - acc) / diag
            x_new = x[i] + omega * (x_gs - x[i])
            if constrained[i]:
                if x_new < psi[i]:
                    x_new = psi[i]
            d = abs(x_new - x[i])
            if d > max_delta:
                max_delta = d
            x[i] = x_new
        if max_delta < tol:
            return sweep + 1
    return -1


def _psor_solve(
    matrix: sparse.csr_matrix,
    rhs: np.ndarray,
    psi: np.ndarray,
    x0: np.ndarray,
    obstacle_rows: np.ndarray,
) -> np.ndarray:
    x = np.maximum(x0.astype(float).copy(), np.where(obstacle_rows, psi, -np.inf))
    m = matrix.tocsr()
    sweeps = _psor_kernel(
        m.indptr, m.indices, m.data, rhs.astype(float), psi.astype(float), x,
        obstacle_rows.astype(np.bool_), PSOR_OMEGA, PSOR_TOL, PSOR_MAX_SWEEPS,
    )
    if sweeps < 0:
        raise SolverError(f"projected SOR did not converge in {PSOR_MAX_SWEEPS} sweeps")
    return x


@dataclass
class ObstacleResult:
    grid: Grid2D
    field: np.ndarray          # (ny, nx)
    active_set: np.ndarray     # boolean (ny, nx), u == psi
    complementarity: float     # max over nodes of |min(residual, u - psi)|


def complementarity_residual(
    matrix: sparse.csr_matrix,
    u: np.ndarray,
    rhs: np.ndarray,
    psi: np.ndarray,
    rows: np.ndarray,
) -> float:
    res = matrix @ u - rhs
    comp = np.minimum(res, u - psi)
    return float(np.max(np.abs(comp[rows]))) if rows.any() else 0.0


def solve_obstacle_elliptic(
    grid: Grid2D,
    p: HestonParams,
    data: ProblemData,
    mode: BoundaryConditionMode,
    edges: Optional[EdgeConditions] = None,
) -> ObstacleResult:
    """min{A u - f, u - psi} = 0 with g on the boundary locus."""
    if data.psi is None:
        raise ParameterError("obstacle solve requires psi")
    op = assemble_operator(grid, p, mode, edges)
    if (op.roles == _ROLE_EXTRAP).any():
        raise ParameterError("obstacle solves require Dirichlet edges")
    f_field = _eval_field(data.f, 0.0, grid)
    g_field = _eval_field(data.g, 0.0, grid)
    psi_field = _eval_field(data.psi, 0.0, grid)
    rhs = _rhs_linear(op, f_field, g_field)
    rows = op.roles == _ROLE_PDE
    u0 = np.maximum(g_field, psi_field)
    u = _psor_solve(op.matrix, rhs, psi_field, u0, obstacle_rows=rows)
    comp = complementarity_residual(op.matrix, u, rhs, psi_field, rows)
    active = np.abs(u - psi_field) <= 10.0 * PSOR_TOL
    active[~rows] = False
    return ObstacleResult(
        grid=grid,
        field=u.reshape(grid.ny, grid.nx),
        active_set=active.reshape(grid.ny, grid.nx),
        complementarity=comp,
    )


def solve_obstacle_parabolic(
    grid: Grid2D,
    p: HestonParams,
    data: ProblemData,
    T: float,
    mode: BoundaryConditionMode,
    n_steps: int,
    output_times: Optional[list[float]] = None,
    edges: Optional[EdgeConditions] = None,
) -> ObstacleResult:
    """Parabolic LCP marched backward with a projected SOR solve per step.

    Returns the value at the earliest requested time (default t = 0) together
    with the active set and the final-step complementarity residual.
    """
    if data.psi is None:
        raise ParameterError("obstacle solve requires psi")
    op = assemble_operator(grid, p, mode, edges)
    if (op.roles == _ROLE_EXTRAP).any():
        raise ParameterError("obstacle solves require Dirichlet edges")
    if output_times is None:
        output_times = [0.0]
    res = _march_parabolic(op, p, data, T, n_steps, output_times, obstacle=True)
    t0 = float(min(output_times))
    u = res.at(t0).ravel()
    X, Y = grid.meshes()
    psi_field = np.asarray(data.psi(t0, X.ravel(), Y.ravel()), dtype=float)
    rows = op.roles == _ROLE_PDE
    active = np.abs(u - psi_field) <= 10.0 * PSOR_TOL
    active[~rows] = False
    return ObstacleResult(
        grid=grid,
        field=u.reshape(grid.ny, grid.nx),
        active_set=active.reshape(grid.ny, grid.nx),
        complementarity=res.complementarity,
    )


def observed_order(errors: list[float], ratios: float = 2.0) -> float:
    """Convergence order from errors on successively refined grids."""
    if len(errors) < 2:
        raise ParameterError("need at least two error levels")
    orders = [
        math.log(errors[k] / errors[k + 1]) / math.log(ratios)
        for k in range(len(errors) - 1)
    ]
    return orders[-1]
