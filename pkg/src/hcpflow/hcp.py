"""Constraint patches, ghost-cell rewrites, and the affine projection.

A patch is the six-point space-time stencil around a target cell. Its row
of coefficients encodes the discretized flow equation; the projection maps
a prediction vector onto the hyperplane where the row is satisfied exactly.

Slot order is fixed throughout:

    0: h at (t - dt, i, j)        3: h at (t, i, j + 1)   x+
    1: h at (t, i, j)  center     4: h at (t, i - 1, j)   y-
    2: h at (t, i, j - 1)  x-     5: h at (t, i + 1, j)   y+
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace

import numpy as np

from .flowsim import BoundarySpec, GridSpec, interface_conductivity

SLOT_PREV, SLOT_CENTER, SLOT_XM, SLOT_XP, SLOT_YM, SLOT_YP = range(6)
NEIGHBOR_SLOTS = (SLOT_XM, SLOT_XP, SLOT_YM, SLOT_YP)
OPPOSITE = {SLOT_XM: SLOT_XP, SLOT_XP: SLOT_XM, SLOT_YM: SLOT_YP, SLOT_YP: SLOT_YM}

UNKNOWN, KNOWN, ELIMINATED = "unknown", "known", "eliminated"


class DegeneratePatchError(ValueError):
    """Patch has nothing left to project."""


@dataclass(frozen=True)
class StencilPatch:
    """Center cell (i, j) at time index t >= 1 on a given grid."""
    i: int
    j: int
    t: int
    grid: GridSpec

    def __post_init__(self):
        if self.t < 1:
            raise ValueError("patch needs a previous time slice; t must be >= 1")
        if not (0 <= self.i < self.grid.ny and 0 <= self.j < self.grid.nx):
            raise ValueError("patch center (%d, %d) outside grid" % (self.i, self.j))

    def slot_cells(self):
        """(t_index, i, j) per slot; ghost slots may index outside the grid."""
        i, j, t = self.i, self.j, self.t
        return [(t - 1, i, j), (t, i, j), (t, i, j - 1), (t, i, j + 1),
                (t, i - 1, j), (t, i + 1, j)]

    def slot_coordinates(self):
        """(6, 3) physical (x, y, time) coordinates at cell centers."""
        g = self.grid
        out = np.empty((6, 3))
        for s, (ti, ii, jj) in enumerate(self.slot_cells()):
            out[s] = ((jj + 0.5) * g.dx, (ii + 0.5) * g.dy, ti * g.dt)
        return out


@dataclass(frozen=True)
class ConstraintSystem:
    """One patch's coefficient row, slot statuses, and folded right-hand side."""
    patch: StencilPatch
    row: np.ndarray                   # (6,), zero at eliminated slots
    status: tuple                     # per-slot UNKNOWN / KNOWN / ELIMINATED
    known_values: np.ndarray          # (6,), zero where not known
    b: float = 0.0

    @property
    def unknown_slots(self):
        return [s for s in range(6) if self.status[s] == UNKNOWN]

    @property
    def reduced_row(self):
        return self.row[np.array(self.status) == UNKNOWN]


def _row_from_faces(grid, storage, west, east, south, north):
    inv_dx2 = 1.0 / grid.dx ** 2
    inv_dy2 = 1.0 / grid.dy ** 2
    cw, ce = west * inv_dx2, east * inv_dx2
    cs, cn = south * inv_dy2, north * inv_dy2
    a2 = -storage - cw - ce - cs - cn
    return np.array([storage, a2, cw, ce, cs, cn])


def build_constraint_row(patch: StencilPatch, k, grid: GridSpec = None) -> ConstraintSystem:
    """Coefficient row from the conductivity field around the patch center.

    Faces that reach outside the grid use a mirrored ghost conductivity as
    a placeholder; edge patches must follow with the appropriate ghost
    rewrite (apply_noflow_ghost or apply_constant_pressure_ghost).
    """
    grid = grid or patch.grid
    k = np.asarray(k, dtype=np.float64)
    i, j = patch.i, patch.j
    kc = k[i, j]
    if kc <= 0 or np.any(k < 0):
        raise ValueError("conductivity must be positive at the patch center")
    west = interface_conductivity(k[i, j - 1], kc) if j > 0 else kc
    east = interface_conductivity(kc, k[i, j + 1]) if j < grid.nx - 1 else kc
    south = interface_conductivity(k[i - 1, j], kc) if i > 0 else kc
    north = interface_conductivity(kc, k[i + 1, j]) if i < grid.ny - 1 else kc
    row = _row_from_faces(grid, grid.ss / grid.dt, west, east, south, north)
    return ConstraintSystem(patch=patch, row=row, status=(UNKNOWN,) * 6,
                            known_values=np.zeros(6))


def apply_noflow_ghost(system: ConstraintSystem, slot: int) -> ConstraintSystem:
    """Zero the ghost face across a no-flow edge and drop its slot."""
    patch = system.patch
    grid = patch.grid
    edge = ((slot == SLOT_YM and patch.i == 0)
            or (slot == SLOT_YP and patch.i == grid.ny - 1)
            or (slot == SLOT_XM and patch.j == 0)
            or (slot == SLOT_XP and patch.j == grid.nx - 1))
    if slot not in NEIGHBOR_SLOTS or not edge:
        raise ValueError("slot %d does not cross a domain edge for this patch" % slot)
    row = system.row.copy()
    # face conductivity set to 0: the slot coefficient vanishes and the
    # composite center coefficient loses that face term
    row[SLOT_CENTER] += row[slot]
    row[slot] = 0.0
    status = list(system.status)
    status[slot] = ELIMINATED
    return replace(system, row=row, status=tuple(status))


def apply_constant_pressure_ghost(system: ConstraintSystem, slot: int) -> ConstraintSystem:
    """Eliminate a constant-pressure ghost slot by reflection.

    The ghost cell mirrors the inner neighbor's conductivity and its head
    extrapolates linearly through the center: h_ghost = 2*h_center - h_inner.
    With ghost/center/inner coefficients (c_g, c_0, c_1), the rewritten row
    has center c_0 + 2*c_g and inner c_1 - c_g.
    """
    patch = system.patch
    grid = patch.grid
    edge = ((slot == SLOT_XM and patch.j == 0)
            or (slot == SLOT_XP and patch.j == grid.nx - 1)
            or (slot == SLOT_YM and patch.i == 0)
            or (slot == SLOT_YP and patch.i == grid.ny - 1))
    if slot not in NEIGHBOR_SLOTS or not edge:
        raise ValueError("slot %d is not a constant-pressure ghost for this patch" % slot)
    inner = OPPOSITE[slot]
    row = system.row.copy()
    # ghost cell mirrors the inner conductivity, so both faces coincide
    c_g = row[inner]
    row[SLOT_CENTER] -= c_g - row[slot]
    row[SLOT_CENTER] += 2.0 * c_g
    row[inner] -= c_g
    row[slot] = 0.0
    status = list(system.status)
    status[slot] = ELIMINATED
    return replace(system, row=row, status=tuple(status))


def fold_known_slots(system: ConstraintSystem, known: dict) -> ConstraintSystem:
    """Move slots with known head values into the right-hand side."""
    if not known:
        raise ValueError("fold_known_slots needs at least one known slot")
    status = list(system.status)
    values = system.known_values.copy()
    b = system.b
    for slot, value in known.items():
        if status[slot] != UNKNOWN:
            raise ValueError("slot %d is not free to mark known" % slot)
        status[slot] = KNOWN
        values[slot] = float(value)
        b -= system.row[slot] * float(value)
    if all(s != UNKNOWN for s in status):
        raise DegeneratePatchError("all slots known; nothing to project")
    return replace(system, status=tuple(status), known_values=values, b=b)


@dataclass(frozen=True)
class ProjectionOperator:
    """Affine projector onto {H : A_u H = b} over the unknown slots."""
    matrix: np.ndarray                # P = I - a a^T / (a.a)
    offset: np.ndarray                # a b / (a.a)
    reduced_row: np.ndarray
    b: float

    @property
    def dim(self):
        return self.reduced_row.shape[0]


def build_projection(system: ConstraintSystem) -> ProjectionOperator:
    a = system.reduced_row
    denom = float(a @ a)
    if denom == 0.0:
        raise ValueError("zero constraint row; projection is singular")
    p = np.eye(a.shape[0]) - np.outer(a, a) / denom
    offset = a * (system.b / denom)
    return ProjectionOperator(matrix=p, offset=offset, reduced_row=a.copy(),
                              b=float(system.b))


def project(op: ProjectionOperator, h):
    """Closest point to h on the constraint hyperplane."""
    h = np.asarray(h, dtype=np.float64)
    if h.shape != (op.dim,):
        raise ValueError("prediction length %s does not match %d unknowns"
                         % (h.shape, op.dim))
    a = op.reduced_row
    return h - a * ((a @ h - op.b) / (a @ a))


def batch_project(ops, hs):
    """Independent per-patch projection of a batch of prediction vectors."""
    if len(ops) != len(hs):
        raise ValueError("batch size mismatch: %d operators, %d vectors"
                         % (len(ops), len(hs)))
    return [project(op, h) for op, h in zip(ops, hs)]


# ---------------------------------------------------------------------------
# patch construction for the standard problem
# ---------------------------------------------------------------------------

def constraint_for_patch(patch: StencilPatch, k, boundary: BoundarySpec) -> ConstraintSystem:
    """Full pipeline for a patch of the default problem.

    No-flow y edges eliminate their ghost slot; Dirichlet x neighbors and
    the initial-condition slot (t = 1) fold into the right-hand side.
    """
    grid = patch.grid
    system = build_constraint_row(patch, k, grid)
    if patch.i == 0:
        system = apply_noflow_ghost(system, SLOT_YM)
    if patch.i == grid.ny - 1:
        system = apply_noflow_ghost(system, SLOT_YP)
    known = {}
    if patch.j - 1 == 0:
        known[SLOT_XM] = boundary.left_head
    if patch.j + 1 == grid.nx - 1:
        known[SLOT_XP] = boundary.right_head
    if patch.t == 1:
        # initial heads: the center column is never the Dirichlet left column
        known[SLOT_PREV] = boundary.initial_head
    if known:
        system = fold_known_slots(system, known)
    return system


def stencil_residual(head_field, k, boundary: BoundarySpec = None):
    """Residual A.H per free cell and step of a head tensor.

    Returns an array of shape (nt, ny, nx-2) for steps 1..nt, evaluated
    with the same harmonic-mean face conductivities as the simulator.
    """
    heads = head_field.heads
    grid = head_field.grid
    k = np.asarray(k, dtype=np.float64)
    from .flowsim import face_conductivities
    kx, ky = face_conductivities(k)
    inv_dx2 = 1.0 / grid.dx ** 2
    inv_dy2 = 1.0 / grid.dy ** 2
    storage = grid.ss / grid.dt

    west = kx[:, :-1] * inv_dx2                       # (ny, nx-2)
    east = kx[:, 1:] * inv_dx2
    south = np.zeros((grid.ny, grid.nx - 2))
    south[1:, :] = ky[:, 1:-1] * inv_dy2
    north = np.zeros((grid.ny, grid.nx - 2))
    north[:-1, :] = ky[:, 1:-1] * inv_dy2

    h = heads[1:, :, 1:-1]                            # (nt, ny, nx-2)
    h_prev = heads[:-1, :, 1:-1]
    h_w = heads[1:, :, :-2]
    h_e = heads[1:, :, 2:]
    h_s = np.zeros_like(h)
    h_s[:, 1:, :] = heads[1:, :-1, 1:-1]
    h_n = np.zeros_like(h)
    h_n[:, :-1, :] = heads[1:, 1:, 1:-1]

    center = -(storage + west + east + south + north)
    return (storage * h_prev + center * h + west * h_w + east * h_e
            + south * h_s + north * h_n)


def dump_patch_debug(path, system: ConstraintSystem, op: ProjectionOperator = None):
    """JSON forensics dump of one patch's constraint and projector."""
    doc = {
        "center": [system.patch.t, system.patch.i, system.patch.j],
        "row": system.row.tolist(),
        "status": list(system.status),
        "known_values": system.known_values.tolist(),
        "b": system.b,
    }
    if op is not None:
        doc["projector"] = op.matrix.tolist()
        doc["offset"] = op.offset.tolist()
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2)
