"""Model variants, losses, and the training loop.

Three variants share one architecture: a plain data-only network (ANN),
a regularized network penalizing the stencil residual (SOFT), and the
hard-constraint variant (HCP) that projects every patch's predictions
onto its constraint hyperplane before the data losses are evaluated.
Gradients pass through the projection as a constant linear map.
"""

from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from . import diffcore, hcp
from .diffcore import ParameterSet
from .flowsim import BoundarySpec, GridSpec

ANN, SOFT, HCP = "ann", "soft", "hcp"
VARIANTS = (ANN, SOFT, HCP)

DEFAULT_LAYERS = [3, 50, 50, 50, 50, 50, 1]


@dataclass
class LossWeights:
    data: float = 1.0
    pde: float = 1.0
    bc: float = 1.0
    ic: float = 1.0

    def __post_init__(self):
        vals = (self.data, self.pde, self.bc, self.ic)
        if any(v < 0 for v in vals):
            raise ValueError("loss weights must be nonnegative")
        if all(v == 0 for v in vals):
            raise ValueError("at least one loss weight must be positive")


@dataclass
class OptimizerConfig:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 200
    weight_decay: float = 0.0         # decoupled decay on the weight matrices
    lr_decay: str = "none"            # "none" or "cosine" (anneal to 0)


@dataclass
class SurrogateModel:
    """Network plus the normalization that maps the problem to the unit cube."""
    params: ParameterSet
    variant: str
    grid: GridSpec
    boundary: BoundarySpec

    @property
    def head_shift(self):
        return self.boundary.right_head

    @property
    def head_scale(self):
        return self.boundary.left_head - self.boundary.right_head

    def normalize_coords(self, coords):
        coords = np.asarray(coords, dtype=np.float64)
        g = self.grid
        scale = np.array([g.domain_x, g.domain_y, g.nt * g.dt])
        return coords / scale

    def normalize_head(self, h):
        return (np.asarray(h, dtype=np.float64) - self.head_shift) / self.head_scale

    def denormalize_head(self, y):
        return self.head_shift + self.head_scale * np.asarray(y, dtype=np.float64)

    def predict(self, coords):
        """Physical head predictions at physical (x, y, t) coordinates."""
        y = _numpy_forward(self.params, self.normalize_coords(coords))
        return self.denormalize_head(y[:, 0])


def _numpy_forward(params, x):
    h = np.asarray(x, dtype=np.float64)
    last = params.n_layers() - 1
    for k, (w, b) in enumerate(zip(params.weights, params.biases)):
        h = h @ w + b
        if k != last:
            h = np.tanh(h)
    return h


@dataclass
class TrainingDataset:
    """Observation, collocation, boundary, and initial samples for one run.

    Observation and collocation points are grid-aligned and stored as
    (time index, y cell, x cell) triples; labels are in normalized head
    units. Boundary/initial samples carry physical coordinates and heads.
    """
    grid: GridSpec
    boundary: BoundarySpec
    obs_cells: np.ndarray             # (N_obs, 3) ints
    obs_labels: np.ndarray            # (N_obs,) normalized heads
    colloc_cells: np.ndarray          # (N_f, 3) ints
    bc_coords: np.ndarray             # (N_bc, 3) physical
    bc_values: np.ndarray             # (N_bc,) physical heads
    ic_coords: np.ndarray             # (N_ic, 3) physical
    ic_values: np.ndarray             # (N_ic,) physical heads

    def __post_init__(self):
        if self.obs_cells.shape[0] != self.obs_labels.shape[0]:
            raise ValueError("observation labels do not match point count")
        if self.obs_cells.size and np.any(self.obs_cells[:, 0] > 18):
            raise ValueError("observations must come from time steps 1..18")
        if self.colloc_cells.size and np.any(self.colloc_cells[:, 0] < 1):
            raise ValueError("collocation patches need t >= 1")

    def obs_coords(self):
        return cell_coords(self.obs_cells, self.grid)


def cell_coords(cells, grid: GridSpec):
    """Physical (x, y, t) coordinates of (t_index, i, j) cell triples."""
    cells = np.asarray(cells)
    out = np.empty((cells.shape[0], 3))
    out[:, 0] = (cells[:, 2] + 0.5) * grid.dx
    out[:, 1] = (cells[:, 1] + 0.5) * grid.dy
    out[:, 2] = cells[:, 0] * grid.dt
    return out


@dataclass
class CorruptionSpec:
    noise_level: float = 0.0          # std as a fraction of the clean value
    outlier_fraction: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.noise_level < 0:
            raise ValueError("noise level must be nonnegative")
        if not 0.0 <= self.outlier_fraction <= 1.0:
            raise ValueError("outlier fraction must lie in [0, 1]")


def corrupt(dataset: TrainingDataset, spec: CorruptionSpec) -> TrainingDataset:
    """Noise and outlier injection on the normalized observation labels only."""
    labels = dataset.obs_labels.copy()
    rng = np.random.default_rng(spec.seed)
    if spec.noise_level > 0:
        labels = labels * (1.0 + spec.noise_level * rng.standard_normal(labels.shape))
    if spec.outlier_fraction > 0:
        n_out = int(round(spec.outlier_fraction * labels.shape[0]))
        idx = rng.choice(labels.shape[0], size=n_out, replace=False)
        labels[idx] = rng.uniform(1.0, 2.0, size=n_out)
    return replace(dataset, obs_labels=labels)


# ---------------------------------------------------------------------------
# patch bundles: vectorized constraint data for a set of patch centers
# ---------------------------------------------------------------------------

@dataclass
class PatchBundle:
    """Per-patch constraint arrays in a batch-friendly layout.

    Eliminated slots have zero row coefficient and zero masks; known slots
    carry their physical head in ``known_vals`` with ``free_mask`` zero.
    """
    cells: np.ndarray                 # (N, 3)
    coords: np.ndarray                # (N, 6, 3) physical
    row: np.ndarray                   # (N, 6) full rows (knowns included)
    free_mask: np.ndarray             # (N, 6) 1 where the network prediction enters
    known_vals: np.ndarray            # (N, 6) physical heads at known slots
    reduced_row: np.ndarray           # (N, 6) row masked to unknown slots
    denom: np.ndarray                 # (N,)  reduced row squared norms

    def __len__(self):
        return self.cells.shape[0]

    def subset(self, idx):
        return PatchBundle(self.cells[idx], self.coords[idx], self.row[idx],
                           self.free_mask[idx], self.known_vals[idx],
                           self.reduced_row[idx], self.denom[idx])


def build_patch_bundle(cells, k, grid: GridSpec, boundary: BoundarySpec) -> PatchBundle:
    cells = np.asarray(cells, dtype=np.int64).reshape(-1, 3)
    n = cells.shape[0]
    coords = np.zeros((n, 6, 3))
    row = np.zeros((n, 6))
    free = np.zeros((n, 6))
    known = np.zeros((n, 6))
    for p, (t, i, j) in enumerate(cells):
        patch = hcp.StencilPatch(i=int(i), j=int(j), t=int(t), grid=grid)
        system = hcp.constraint_for_patch(patch, k, boundary)
        row[p] = system.row
        pc = patch.slot_coordinates()
        for s in range(6):
            st = system.status[s]
            if st == hcp.UNKNOWN:
                free[p, s] = 1.0
                coords[p, s] = pc[s]
            elif st == hcp.KNOWN:
                known[p, s] = system.known_values[s]
                coords[p, s] = pc[1]      # dummy; masked out of the loss
            else:
                coords[p, s] = pc[1]
    reduced = row * free
    denom = np.sum(reduced ** 2, axis=1)
    return PatchBundle(cells, coords, row, free, known, reduced, denom)


# ---------------------------------------------------------------------------
# in-graph loss construction
# ---------------------------------------------------------------------------

def _graph_patch_heads(wl, bl, model, bundle):
    """Substituted physical head tensor of shape (N, 6) for a bundle."""
    n = len(bundle)
    x = diffcore.constant(model.normalize_coords(bundle.coords.reshape(-1, 3)))
    y = diffcore.mlp_forward(wl, bl, x)
    y = diffcore.reshape(y, (n, 6))
    h = diffcore.scale_shift(y, model.head_scale, model.head_shift)
    h = diffcore.mul_const(h, bundle.free_mask)
    return diffcore.add_const(h, bundle.known_vals)


def _graph_project(h, bundle):
    """Batched projection as a constant linear map of the substituted heads."""
    r = diffcore.rowdot_const(h, bundle.row)
    scaled = diffcore.mul_const(r, 1.0 / bundle.denom)
    delta = diffcore.colscale_const(scaled, bundle.reduced_row)
    return diffcore.sub(h, delta), delta


def _graph_pde_loss(h, model, bundle):
    """Mean squared stencil residual, scaled to normalized-head units."""
    scale = 1.0 / (model.head_scale * np.sqrt(bundle.denom))
    r = diffcore.rowdot_const(h, bundle.row)
    r = diffcore.mul_const(r, scale)
    return diffcore.mean(diffcore.square(r))


def _graph_point_mse(wl, bl, model, coords, values_norm):
    x = diffcore.constant(model.normalize_coords(coords))
    y = diffcore.mlp_forward(wl, bl, x)
    y = diffcore.reshape(y, (coords.shape[0],))
    d = diffcore.add_const(y, -np.asarray(values_norm, dtype=np.float64))
    return diffcore.mean(diffcore.square(d))


def _graph_center_mse(h_patches, model, labels_norm):
    center = diffcore.take_column(h_patches, hcp.SLOT_CENTER)
    c_norm = diffcore.scale_shift(center, 1.0 / model.head_scale,
                                  -model.head_shift / model.head_scale)
    d = diffcore.add_const(c_norm, -np.asarray(labels_norm, dtype=np.float64))
    return diffcore.mean(diffcore.square(d))


# ---------------------------------------------------------------------------
# spec-level loss operations (value-returning wrappers)
# ---------------------------------------------------------------------------

def forward_patch(model: SurrogateModel, patch: hcp.StencilPatch, k):
    """Prediction vector H for one patch, known slots substituted.

    Returns (values over non-eliminated slots in canonical order, system).
    """
    system = hcp.constraint_for_patch(patch, k, model.boundary)
    bundle = build_patch_bundle(patch_cells_of(patch), k, model.grid, model.boundary)
    wl, bl = model.params.as_leaves()
    h = _graph_patch_heads(wl, bl, model, bundle).value[0]
    keep = [s for s in range(6) if system.status[s] != hcp.ELIMINATED]
    return h[keep], system


def patch_cells_of(patch):
    return np.array([[patch.t, patch.i, patch.j]])


def observation_loss(model, coords, labels_norm, projected=False,
                     bundle: PatchBundle = None):
    """MSE between (optionally projected) predictions and labels, normalized."""
    labels_norm = np.asarray(labels_norm, dtype=np.float64)
    if labels_norm.size == 0:
        warnings.warn("empty observation set; observation loss is 0")
        return 0.0
    wl, bl = model.params.as_leaves()
    if projected:
        if bundle is None:
            raise ValueError("projected observation loss needs a patch bundle")
        h = _graph_patch_heads(wl, bl, model, bundle)
        h_star, _ = _graph_project(h, bundle)
        return float(_graph_center_mse(h_star, model, labels_norm).value)
    return float(_graph_point_mse(wl, bl, model, np.asarray(coords, dtype=np.float64),
                                  labels_norm).value)


def pde_loss(model, bundle: PatchBundle):
    """Mean squared (scaled) stencil residual over unprojected predictions."""
    wl, bl = model.params.as_leaves()
    h = _graph_patch_heads(wl, bl, model, bundle)
    return float(_graph_pde_loss(h, model, bundle).value)


def condition_losses(model, bc_coords, bc_values, ic_coords, ic_values):
    """(MSE_BC, MSE_IC) in normalized head units."""
    out = []
    for coords, values in ((bc_coords, bc_values), (ic_coords, ic_values)):
        coords = np.asarray(coords, dtype=np.float64)
        if coords.shape[0] == 0:
            out.append(0.0)
            continue
        wl, bl = model.params.as_leaves()
        mse = _graph_point_mse(wl, bl, model, coords,
                               model.normalize_head(values))
        out.append(float(mse.value))
    return tuple(out)


def total_loss(weights: LossWeights, components, variant=SOFT):
    """Weighted sum of (data, pde, bc, ic) loss components."""
    data, pde, bc, ic = components
    if variant == ANN:
        return weights.data * data
    return (weights.data * data + weights.pde * pde
            + weights.bc * bc + weights.ic * ic)


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

@dataclass
class LossHistory:
    epochs: list = field(default_factory=list)
    total: list = field(default_factory=list)
    data: list = field(default_factory=list)
    pde: list = field(default_factory=list)
    bc: list = field(default_factory=list)
    ic: list = field(default_factory=list)
    projection_change: list = field(default_factory=list)

    def append(self, epoch, total, data, pde, bc, ic, proj):
        for v in (total, data, pde, bc, ic):
            if not np.isfinite(v) or v < 0:
                raise ValueError("loss history entries must be finite and nonnegative")
        self.epochs.append(epoch)
        self.total.append(total)
        self.data.append(data)
        self.pde.append(pde)
        self.bc.append(bc)
        self.ic.append(ic)
        self.projection_change.append(proj)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "loss", "mse_data", "mse_pde", "mse_bc",
                        "mse_ic", "mean_projection_change"])
            for k in range(len(self.epochs)):
                w.writerow([self.epochs[k], self.total[k], self.data[k],
                            self.pde[k], self.bc[k], self.ic[k],
                            self.projection_change[k]])


class _Adam:
    def __init__(self, params: ParameterSet, cfg: OptimizerConfig):
        self.cfg = cfg
        self.m = [np.zeros_like(a) for a in params.weights + params.biases]
        self.v = [np.zeros_like(a) for a in params.weights + params.biases]
        self.t = 0
        self.n_weights = len(params.weights)

    def update(self, params: ParameterSet, grads, lr=None):
        cfg = self.cfg
        lr = cfg.learning_rate if lr is None else lr
        self.t += 1
        bias1 = 1.0 - cfg.beta1 ** self.t
        bias2 = 1.0 - cfg.beta2 ** self.t
        arrays = params.weights + params.biases
        for k, (a, g) in enumerate(zip(arrays, grads)):
            self.m[k] = cfg.beta1 * self.m[k] + (1 - cfg.beta1) * g
            self.v[k] = cfg.beta2 * self.v[k] + (1 - cfg.beta2) * g * g
            a -= lr * (self.m[k] / bias1) / (
                np.sqrt(self.v[k] / bias2) + cfg.eps)
            if cfg.weight_decay and k < self.n_weights:
                a -= lr * cfg.weight_decay * a


def train(variant, dataset: TrainingDataset, k, grid: GridSpec,
          weights: LossWeights = None, optimizer: OptimizerConfig = None,
          epochs=500, seed=0, layer_sizes=None):
    """Train one surrogate; returns (SurrogateModel, LossHistory).

    Deterministic for a given seed. HCP projects every patch before the
    observation loss and penalizes the raw stencil residual; SOFT uses the
    same losses without projection; ANN uses the observation loss only.
    """
    if variant not in VARIANTS:
        raise ValueError("unknown variant %r" % variant)
    weights = weights or LossWeights()
    optimizer = optimizer or OptimizerConfig()
    layer_sizes = layer_sizes or DEFAULT_LAYERS
    boundary = dataset.boundary
    rng = np.random.default_rng(seed)
    params = ParameterSet.xavier(layer_sizes, rng)
    model = SurrogateModel(params=params, variant=variant, grid=grid,
                           boundary=boundary)
    history = LossHistory()
    if epochs <= 0:
        return model, history

    needs_physics = variant in (SOFT, HCP)
    have_colloc = dataset.colloc_cells.shape[0] > 0
    if needs_physics and not have_colloc and weights.pde > 0:
        raise ValueError("variant %r needs collocation patches" % variant)
    if variant == ANN and dataset.obs_labels.shape[0] == 0:
        warnings.warn("data-only variant with no observations; returning the "
                      "initialized model untrained")
        return model, history

    obs_coords = dataset.obs_coords() if dataset.obs_cells.size else np.zeros((0, 3))
    obs_labels = dataset.obs_labels
    have_obs = obs_labels.shape[0] > 0
    bc_norm = model.normalize_head(dataset.bc_values)
    ic_norm = model.normalize_head(dataset.ic_values)
    have_bc = dataset.bc_coords.shape[0] > 0
    have_ic = dataset.ic_coords.shape[0] > 0

    use_colloc = needs_physics and have_colloc
    colloc = None
    obs_bundle = None
    if use_colloc:
        colloc = build_patch_bundle(dataset.colloc_cells, k, grid, boundary)
    if variant == HCP and have_obs:
        obs_bundle = build_patch_bundle(dataset.obs_cells, k, grid, boundary)

    adam = _Adam(params, optimizer)
    bs = optimizer.batch_size
    n_items = len(colloc) if use_colloc else max(1, obs_labels.shape[0])
    n_batches = max(1, int(np.ceil(n_items / bs)))

    for epoch in range(epochs):
        if optimizer.lr_decay == "cosine":
            lr = 0.5 * optimizer.learning_rate * (
                1.0 + np.cos(np.pi * epoch / epochs))
        else:
            lr = optimizer.learning_rate
        if use_colloc:
            perm = rng.permutation(len(colloc))
        else:
            perm = rng.permutation(max(1, obs_labels.shape[0]))
        comp_sum = np.zeros(4)
        loss_sum = 0.0
        proj_sum = 0.0
        for bi in range(n_batches):
            sel = perm[bi * bs:(bi + 1) * bs]
            wl, bl = params.as_leaves()
            terms = []
            comps = np.zeros(4)
            proj_change = 0.0

            if variant == HCP and have_obs:
                h_obs = _graph_patch_heads(wl, bl, model, obs_bundle)
                h_star, delta = _graph_project(h_obs, obs_bundle)
                mse_data = _graph_center_mse(h_star, model, obs_labels)
                num = np.linalg.norm(delta.value, axis=1)
                den = np.linalg.norm(h_obs.value, axis=1)
                proj_change = float(np.mean(num / np.maximum(den, 1e-300)))
            elif have_obs and variant == ANN:
                mse_data = _graph_point_mse(wl, bl, model, obs_coords[sel],
                                            obs_labels[sel])
            elif have_obs:
                mse_data = _graph_point_mse(wl, bl, model, obs_coords, obs_labels)
            else:
                mse_data = None
            if mse_data is not None and weights.data > 0:
                terms.append(diffcore.scale_shift(mse_data, weights.data, 0.0))
            comps[0] = 0.0 if mse_data is None else float(mse_data.value)

            if needs_physics:
                if use_colloc:
                    batch = colloc.subset(sel)
                    h_pde = _graph_patch_heads(wl, bl, model, batch)
                    mse_pde = _graph_pde_loss(h_pde, model, batch)
                    comps[1] = float(mse_pde.value)
                    if weights.pde > 0:
                        terms.append(diffcore.scale_shift(mse_pde, weights.pde, 0.0))
                if have_bc:
                    mse_bc = _graph_point_mse(wl, bl, model, dataset.bc_coords, bc_norm)
                    comps[2] = float(mse_bc.value)
                    if weights.bc > 0:
                        terms.append(diffcore.scale_shift(mse_bc, weights.bc, 0.0))
                if have_ic:
                    mse_ic = _graph_point_mse(wl, bl, model, dataset.ic_coords, ic_norm)
                    comps[3] = float(mse_ic.value)
                    if weights.ic > 0:
                        terms.append(diffcore.scale_shift(mse_ic, weights.ic, 0.0))

            if not terms:
                raise ValueError("no loss terms; check weights and dataset")
            loss = terms[0]
            for t in terms[1:]:
                loss = diffcore.add(loss, t)
            lval = float(loss.value)
            if not np.isfinite(lval):
                raise RuntimeError(
                    "non-finite loss at epoch %d: components %s" % (epoch, comps))
            diffcore.backward(loss)
            grads = [w.grad if w.grad is not None else np.zeros_like(w.value)
                     for w in wl + bl]
            adam.update(params, grads, lr)

            loss_sum += lval
            comp_sum += comps
            proj_sum += proj_change

        history.append(epoch, loss_sum / n_batches, *(comp_sum / n_batches),
                       proj_sum / n_batches)

    return model, history


def predict_field(model: SurrogateModel, t_index):
    """Full-grid head slice at one time index via direct evaluation."""
    g = model.grid
    cells = np.array([(t_index, i, j) for i in range(g.ny) for j in range(g.nx)])
    coords = cell_coords(cells, g)
    return model.predict(coords).reshape(g.ny, g.nx)


def predict_head_field(model: SurrogateModel, nt=None):
    """HeadField-shaped prediction tensor over steps 0..nt."""
    from .flowsim import HeadField, initial_condition
    g = model.grid
    nt = g.nt if nt is None else nt
    heads = np.empty((nt + 1, g.ny, g.nx))
    heads[0] = initial_condition(g, model.boundary)
    for t in range(1, nt + 1):
        heads[t] = predict_field(model, t)
    return HeadField(heads=heads, grid=g, boundary=model.boundary)


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def save_checkpoint(path, model: SurrogateModel):
    g, b = model.grid, model.boundary
    doc = {
        "variant": model.variant,
        "layer_sizes": model.params.layer_sizes,
        "parameters": model.params.flat().tolist(),
        "grid": {"nx": g.nx, "ny": g.ny, "dx": g.dx, "dy": g.dy,
                 "dt": g.dt, "nt": g.nt, "ss": g.ss},
        "boundary": {"left": b.left_head, "right": b.right_head,
                     "initial": b.initial_head},
    }
    with open(path, "w") as fh:
        json.dump(doc, fh)


def load_checkpoint(path) -> SurrogateModel:
    with open(path) as fh:
        doc = json.load(fh)
    sizes = doc["layer_sizes"]
    params = ParameterSet.xavier(sizes, np.random.default_rng(0))
    params.set_flat(np.asarray(doc["parameters"]))
    g = doc["grid"]
    b = doc["boundary"]
    return SurrogateModel(
        params=params, variant=doc["variant"],
        grid=GridSpec(nx=g["nx"], ny=g["ny"], dx=g["dx"], dy=g["dy"],
                      dt=g["dt"], nt=g["nt"], ss=g["ss"]),
        boundary=BoundarySpec(left_head=b["left"], right_head=b["right"],
                              initial_head=b["initial"]))
