"""Implicit finite-difference solver for 2-D transient saturated flow.

Backward-Euler in time, five-point stencil in space with harmonic-mean
interface conductivities. Left/right columns carry fixed (Dirichlet) heads;
top/bottom edges are no-flow. The assembled step operator is symmetric
positive definite and solved with Jacobi-preconditioned conjugate gradients.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp


class SolverError(RuntimeError):
    """Linear solve failed to reach the residual target."""


@dataclass(frozen=True)
class GridSpec:
    nx: int = 51
    ny: int = 51
    dx: float = 20.0
    dy: float = 20.0
    dt: float = 0.2
    nt: int = 50
    ss: float = 1e-4        # specific storage [1/L]

    def __post_init__(self):
        if self.dt <= 0 or self.ss <= 0:
            raise ValueError("dt and specific storage must be positive")

    @property
    def domain_x(self):
        return self.nx * self.dx

    @property
    def domain_y(self):
        return self.ny * self.dy


@dataclass(frozen=True)
class BoundarySpec:
    left_head: float = 202.0
    right_head: float = 200.0
    initial_head: float = 200.0

    def __post_init__(self):
        for v in (self.left_head, self.right_head, self.initial_head):
            if not np.isfinite(v):
                raise ValueError("boundary heads must be finite")


@dataclass
class HeadField:
    """Head tensor indexed (time step 0..nt, y cell, x cell)."""
    heads: np.ndarray
    grid: GridSpec
    boundary: BoundarySpec

    def slice(self, t):
        return self.heads[t]


def interface_conductivity(k_a, k_b):
    """Harmonic-mean face conductivity; zero when either side is zero."""
    k_a = np.asarray(k_a, dtype=np.float64)
    k_b = np.asarray(k_b, dtype=np.float64)
    if np.any(k_a < 0) or np.any(k_b < 0):
        raise ValueError("conductivities must be nonnegative")
    s = k_a + k_b
    out = np.zeros(np.broadcast(k_a, k_b).shape)
    np.divide(2.0 * k_a * k_b, s, out=out, where=s > 0)
    if out.ndim == 0:
        return float(out)
    return out


def face_conductivities(k):
    """(kx, ky): x-face values (ny, nx-1) and y-face values (ny-1, nx)."""
    kx = interface_conductivity(k[:, :-1], k[:, 1:])
    ky = interface_conductivity(k[:-1, :], k[1:, :])
    return np.atleast_2d(kx), np.atleast_2d(ky)


def initial_condition(grid: GridSpec, boundary: BoundarySpec):
    h0 = np.full((grid.ny, grid.nx), boundary.initial_head)
    h0[:, 0] = boundary.left_head
    h0[:, -1] = boundary.right_head
    return h0


class StepSystem:
    """Assembled backward-Euler step for one conductivity field.

    Unknowns are the free cells (all rows, columns 1..nx-2), row-major.
    The matrix is constant in time; only the right-hand side changes with
    the previous head field.
    """

    def __init__(self, matrix, grid, boundary, dirichlet_rhs, free_cols):
        self.matrix = matrix
        self.grid = grid
        self.boundary = boundary
        self.dirichlet_rhs = dirichlet_rhs
        self.free_cols = free_cols
        self.precond = 1.0 / matrix.diagonal()


def assemble_step_system(k, grid: GridSpec, boundary: BoundarySpec) -> StepSystem:
    """Build the SPD system enforcing the implicit five-point stencil."""
    k = np.asarray(k, dtype=np.float64)
    if k.shape != (grid.ny, grid.nx):
        raise ValueError("conductivity shape %s does not match grid" % (k.shape,))
    if np.any(k[:, 1:-1] <= 0):
        raise ValueError("interior conductivity must be strictly positive")

    ny, nx = grid.ny, grid.nx
    kx, ky = face_conductivities(k)
    inv_dx2 = 1.0 / grid.dx ** 2
    inv_dy2 = 1.0 / grid.dy ** 2
    storage = grid.ss / grid.dt

    ncol = nx - 2                       # free columns 1..nx-2
    n = ny * ncol

    def idx(i, j):
        # free-cell index for grid cell (row i, column j)
        return i * ncol + (j - 1)

    rows, cols, vals = [], [], []
    dirichlet_rhs = np.zeros(n)

    for i in range(ny):
        for j in range(1, nx - 1):
            me = idx(i, j)
            west = kx[i, j - 1] * inv_dx2
            east = kx[i, j] * inv_dx2
            south = ky[i - 1, j] * inv_dy2 if i > 0 else 0.0
            north = ky[i, j] * inv_dy2 if i < ny - 1 else 0.0
            center = storage + west + east + south + north
            if center <= 0:
                raise SolverError("singular assembly at cell (%d, %d)" % (i, j))
            rows.append(me); cols.append(me); vals.append(center)
            if j - 1 == 0:
                dirichlet_rhs[me] += west * boundary.left_head
            else:
                rows.append(me); cols.append(idx(i, j - 1)); vals.append(-west)
            if j + 1 == nx - 1:
                dirichlet_rhs[me] += east * boundary.right_head
            else:
                rows.append(me); cols.append(idx(i, j + 1)); vals.append(-east)
            if i > 0:
                rows.append(me); cols.append(idx(i - 1, j)); vals.append(-south)
            if i < ny - 1:
                rows.append(me); cols.append(idx(i + 1, j)); vals.append(-north)

    matrix = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
    return StepSystem(matrix, grid, boundary, dirichlet_rhs, ncol)


def _pcg(matrix, rhs, x0, precond, rel_tol=1e-12):
    """Jacobi-preconditioned conjugate gradients to ||r||/||rhs|| <= rel_tol."""
    rhs_norm = np.linalg.norm(rhs)
    if rhs_norm == 0:
        return np.zeros_like(rhs)
    x = x0.copy()
    r = rhs - matrix @ x
    z = precond * r
    p = z.copy()
    rz = r @ z
    max_iter = 5 * rhs.size
    for _ in range(max_iter):
        if np.linalg.norm(r) <= rel_tol * rhs_norm:
            return x
        ap = matrix @ p
        alpha = rz / (p @ ap)
        x += alpha * p
        r -= alpha * ap
        z = precond * r
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    final = np.linalg.norm(r) / rhs_norm
    if final <= rel_tol:
        return x
    raise SolverError("CG did not converge: relative residual %.3e after %d iterations"
                      % (final, max_iter))


def step(h_prev, system: StepSystem):
    """Advance one time step; Dirichlet columns reimposed exactly."""
    grid, boundary = system.grid, system.boundary
    storage = grid.ss / grid.dt
    interior_prev = h_prev[:, 1:-1].ravel()
    rhs = storage * interior_prev + system.dirichlet_rhs
    sol = _pcg(system.matrix, rhs, interior_prev, system.precond)
    h_next = np.empty_like(h_prev)
    h_next[:, 1:-1] = sol.reshape(grid.ny, system.free_cols)
    h_next[:, 0] = boundary.left_head
    h_next[:, -1] = boundary.right_head
    return h_next


def simulate(k, grid: GridSpec, boundary: BoundarySpec, nt=None) -> HeadField:
    """Full transient run from the initial condition; nt+1 head slices."""
    nt = grid.nt if nt is None else int(nt)
    system = assemble_step_system(k, grid, boundary)
    heads = np.empty((nt + 1, grid.ny, grid.nx))
    heads[0] = initial_condition(grid, boundary)
    for t in range(1, nt + 1):
        heads[t] = step(heads[t - 1], system)
    return HeadField(heads=heads, grid=grid, boundary=boundary)


def timing_profile(k, grid: GridSpec, boundary: BoundarySpec, target_steps):
    """Cumulative wall time to march to each listed step, in seconds."""
    targets = sorted(int(t) for t in target_steps)
    system = assemble_step_system(k, grid, boundary)
    h = initial_condition(grid, boundary)
    out = {}
    elapsed = 0.0
    t_done = 0
    for tgt in targets:
        t0 = time.perf_counter()
        while t_done < tgt:
            h = step(h, system)
            t_done += 1
        elapsed += time.perf_counter() - t0
        out[tgt] = elapsed
    return out


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------

def save_head_field(path, fld: HeadField):
    g, b = fld.grid, fld.boundary
    np.savez_compressed(
        path, heads=fld.heads,
        meta=np.array([g.nx, g.ny, g.dx, g.dy, g.dt, fld.heads.shape[0] - 1,
                       g.ss, b.left_head, b.right_head, b.initial_head]))


def load_head_field(path) -> HeadField:
    with np.load(path) as data:
        heads = data["heads"]
        m = data["meta"]
    grid = GridSpec(nx=int(m[0]), ny=int(m[1]), dx=float(m[2]), dy=float(m[3]),
                    dt=float(m[4]), nt=int(m[5]), ss=float(m[6]))
    boundary = BoundarySpec(left_head=float(m[7]), right_head=float(m[8]),
                            initial_head=float(m[9]))
    return HeadField(heads=heads, grid=grid, boundary=boundary)
