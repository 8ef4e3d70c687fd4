"""Truncated Karhunen-Loeve generator for heterogeneous log-conductivity fields.

The covariance over cell centers uses the separable exponential kernel
sigma^2 * exp(-(|dx| + |dy|)/eta); the expansion retains the leading M
eigenpairs of the dense covariance matrix.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import diffcore


@dataclass(frozen=True)
class CovarianceSpec:
    """Log-conductivity covariance description on a regular cell grid."""
    sigma2: float = 1.0
    eta: float = 408.0
    domain: float = 1020.0
    nx: int = 51
    ny: int = 51

    def __post_init__(self):
        if self.sigma2 < 0:
            raise ValueError("variance must be nonnegative")
        if self.eta <= 0:
            raise ValueError("correlation length must be positive")

    @property
    def dx(self):
        return self.domain / self.nx

    @property
    def dy(self):
        return self.domain / self.ny

    def cell_centers(self):
        """(n, 2) array of (x, y) cell-center coordinates, row-major in y then x."""
        xs = (np.arange(self.nx) + 0.5) * self.dx
        ys = (np.arange(self.ny) + 0.5) * self.dy
        gx, gy = np.meshgrid(xs, ys)
        return np.column_stack([gx.ravel(), gy.ravel()])


@dataclass
class KleBasis:
    """Retained eigenpairs of the covariance, ready for sampling."""
    spec: CovarianceSpec
    eigenvalues: np.ndarray          # (M,), descending
    modes: np.ndarray                # (M, ny*nx), orthonormal rows

    @property
    def n_terms(self):
        return self.eigenvalues.shape[0]


@dataclass
class ConductivityField:
    """One realization: K = exp(ln K) with ln K the truncated expansion."""
    xi: np.ndarray                   # (M,) standard-normal coefficients
    log_k: np.ndarray                # (ny, nx)
    k: np.ndarray                    # (ny, nx), strictly positive
    spec: CovarianceSpec = field(default=None)
    seed: int | None = None


def build_covariance(spec: CovarianceSpec) -> np.ndarray:
    """Dense covariance matrix over cell centers, entry-wise separable exponential."""
    pts = spec.cell_centers()
    dx = np.abs(pts[:, 0][:, None] - pts[:, 0][None, :])
    dy = np.abs(pts[:, 1][:, None] - pts[:, 1][None, :])
    return spec.sigma2 * np.exp(-(dx + dy) / spec.eta)


def decompose(cov: np.ndarray, n_terms: int, spec: CovarianceSpec) -> KleBasis:
    """Top n_terms eigenpairs of the covariance matrix."""
    cov = np.asarray(cov, dtype=np.float64)
    if n_terms > cov.shape[0]:
        raise ValueError("cannot retain %d terms from a %d-cell grid"
                         % (n_terms, cov.shape[0]))
    vals, vecs = diffcore.symmetric_eigendecomposition(cov)
    vals = vals[:n_terms]
    # covariance is PSD; clip eigenvalue noise at the -1e-10 floor
    if vals.min() < -1e-10:
        raise ValueError("covariance produced a significantly negative eigenvalue")
    vals = np.clip(vals, 0.0, None)
    return KleBasis(spec=spec, eigenvalues=vals, modes=vecs[:, :n_terms].T.copy())


def build_basis(spec: CovarianceSpec, n_terms: int) -> KleBasis:
    return decompose(build_covariance(spec), n_terms, spec)


def retained_energy(basis: KleBasis) -> float:
    """Fraction of the covariance trace captured by the retained terms."""
    trace = basis.spec.sigma2 * basis.spec.nx * basis.spec.ny
    return float(basis.eigenvalues.sum() / trace)


def pointwise_variance(basis: KleBasis) -> np.ndarray:
    """Variance of the truncated ln K per cell: sum_i lambda_i phi_i(cell)^2."""
    v = np.sum(basis.eigenvalues[:, None] * basis.modes ** 2, axis=0)
    return v.reshape(basis.spec.ny, basis.spec.nx)


def sample_field(basis: KleBasis, xi=None, seed=None) -> ConductivityField:
    """Draw one conductivity field, either from explicit xi or a seed."""
    if xi is None:
        rng = np.random.default_rng(seed)
        xi = rng.standard_normal(basis.n_terms)
    xi = np.asarray(xi, dtype=np.float64)
    if xi.shape != (basis.n_terms,):
        raise ValueError("xi length %s does not match %d retained terms"
                         % (xi.shape, basis.n_terms))
    log_k = (np.sqrt(basis.eigenvalues) * xi) @ basis.modes
    log_k = log_k.reshape(basis.spec.ny, basis.spec.nx)
    return ConductivityField(xi=xi, log_k=log_k, k=np.exp(log_k),
                             spec=basis.spec, seed=seed)


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------

def save_field(path, fld: ConductivityField, n_terms=None):
    spec = fld.spec
    doc = {
        "nx": spec.nx, "ny": spec.ny, "dx": spec.dx, "dy": spec.dy,
        "eta": spec.eta, "sigma2": spec.sigma2,
        "seed": fld.seed, "n_terms": int(n_terms or fld.xi.shape[0]),
        "xi": fld.xi.tolist(),
        "k": fld.k.ravel().tolist(),       # row-major, ny*nx values
    }
    with open(path, "w") as fh:
        json.dump(doc, fh)


def load_field(path) -> ConductivityField:
    with open(path) as fh:
        doc = json.load(fh)
    spec = CovarianceSpec(sigma2=doc["sigma2"], eta=doc["eta"],
                          domain=doc["nx"] * doc["dx"],
                          nx=doc["nx"], ny=doc["ny"])
    k = np.asarray(doc["k"], dtype=np.float64).reshape(doc["ny"], doc["nx"])
    return ConductivityField(xi=np.asarray(doc["xi"], dtype=np.float64),
                             log_k=np.log(k), k=k, spec=spec, seed=doc["seed"])
