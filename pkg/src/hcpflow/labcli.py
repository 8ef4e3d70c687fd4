"""Experiment harness: dataset generation, sweeps, metrics, and benchmarks.

Sweep cells are paired: within one (axis value, repeat) every model variant
sees the same conductivity field, dataset, and corruption draws. All seeds
derive deterministically from the master seed.
"""

from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from . import flowsim, randfield, tgtrain
from .flowsim import BoundarySpec, GridSpec
from .tgtrain import CorruptionSpec, LossWeights, OptimizerConfig, TrainingDataset

OBS_MAX_STEP = 18                     # extrapolation split: observed prefix

AXES = ("collocation", "boundary", "observation", "noise", "outlier")

# paper-scale sweep axes; desk presets subsample these
DEFAULT_AXIS_VALUES = {
    "collocation": [40, 70, 90, 100, 180, 400, 700, 1000, 1800],
    "boundary": [1, 4, 7, 10, 100, 400, 700, 1000, 10000],
    "observation": [0, 32, 76, 108, 144, 180, 900, 1800],
    "noise": [1, 10, 20, 40, 60],
    "outlier": [1, 4, 7, 10],
}


@dataclass
class DatasetCounts:
    obs_per_step: int = 10            # over steps 1..18 -> 180 points
    collocation: int = 400
    boundary_per_edge: int = 10       # per constant-pressure edge
    initial: int = 100


@dataclass
class ExperimentConfig:
    axis: str = "collocation"
    values: list = None
    repeats: int = 5
    master_seed: int = 0
    variants: list = field(default_factory=lambda: ["ann", "soft", "hcp"])
    epochs: int = 500
    kle_terms: int = 20
    counts: DatasetCounts = field(default_factory=DatasetCounts)
    weights: LossWeights = field(default_factory=LossWeights)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    out_dir: str = "sweep_out"

    def __post_init__(self):
        if self.axis not in AXES:
            raise ValueError("unknown sweep axis %r" % self.axis)
        if self.values is None:
            self.values = list(DEFAULT_AXIS_VALUES[self.axis])
        if not self.values:
            raise ValueError("sweep value list must be non-empty")
        if self.repeats < 1:
            raise ValueError("repeats must be >= 1")

    @classmethod
    def from_json(cls, path):
        with open(path) as fh:
            doc = json.load(fh)
        if "counts" in doc:
            doc["counts"] = DatasetCounts(**doc["counts"])
        if "weights" in doc:
            doc["weights"] = LossWeights(**doc["weights"])
        if "optimizer" in doc:
            doc["optimizer"] = OptimizerConfig(**doc["optimizer"])
        return cls(**doc)


_BASIS_CACHE = {}


def kle_basis(spec: randfield.CovarianceSpec, n_terms):
    """Covariance eigendecomposition, cached per (spec, n_terms)."""
    key = (spec, n_terms)
    if key not in _BASIS_CACHE:
        _BASIS_CACHE[key] = randfield.build_basis(spec, n_terms)
    return _BASIS_CACHE[key]


def generate_dataset(seed, counts: DatasetCounts = None, grid: GridSpec = None,
                     boundary: BoundarySpec = None, kle_terms=20):
    """Sample a conductivity field, simulate the truth, and draw training sets.

    Observations come uniformly without replacement per step from steps
    1..18, never from the pinned Dirichlet columns.
    """
    counts = counts or DatasetCounts()
    grid = grid or GridSpec()
    boundary = boundary or BoundarySpec()
    cov_spec = randfield.CovarianceSpec(nx=grid.nx, ny=grid.ny,
                                        domain=grid.domain_x)
    basis = kle_basis(cov_spec, kle_terms)
    rng = np.random.default_rng(seed)
    fld = randfield.sample_field(basis, xi=rng.standard_normal(kle_terms), seed=seed)
    truth = flowsim.simulate(fld.k, grid, boundary)

    free_cells = [(i, j) for i in range(grid.ny) for j in range(1, grid.nx - 1)]
    n_free = len(free_cells)
    if counts.obs_per_step > n_free:
        raise ValueError("obs_per_step %d exceeds available cells" % counts.obs_per_step)

    truth_norm = (truth.heads - boundary.right_head) / (
        boundary.left_head - boundary.right_head)

    obs_cells, obs_labels = [], []
    for t in range(1, OBS_MAX_STEP + 1):
        idx = rng.choice(n_free, size=counts.obs_per_step, replace=False)
        for ci in idx:
            i, j = free_cells[ci]
            obs_cells.append((t, i, j))
            obs_labels.append(truth_norm[t, i, j])

    n_patch_space = grid.nt * n_free
    if counts.collocation > n_patch_space:
        raise ValueError("collocation count exceeds patch space")
    flat = rng.choice(n_patch_space, size=counts.collocation, replace=False)
    colloc = []
    for f in flat:
        t = 1 + f // n_free
        i, j = free_cells[f % n_free]
        colloc.append((t, i, j))

    bc_coords, bc_values = [], []
    for j, value in ((0, boundary.left_head), (grid.nx - 1, boundary.right_head)):
        for _ in range(counts.boundary_per_edge):
            i = rng.integers(0, grid.ny)
            t = rng.integers(1, grid.nt + 1)
            bc_coords.append(((j + 0.5) * grid.dx, (i + 0.5) * grid.dy, t * grid.dt))
            bc_values.append(value)

    ic_coords, ic_values = [], []
    for _ in range(counts.initial):
        i = rng.integers(0, grid.ny)
        j = rng.integers(0, grid.nx)
        ic_coords.append(((j + 0.5) * grid.dx, (i + 0.5) * grid.dy, 0.0))
        ic_values.append(boundary.left_head if j == 0 else boundary.initial_head)

    dataset = TrainingDataset(
        grid=grid, boundary=boundary,
        obs_cells=np.array(obs_cells, dtype=np.int64).reshape(-1, 3),
        obs_labels=np.array(obs_labels, dtype=np.float64),
        colloc_cells=np.array(colloc, dtype=np.int64).reshape(-1, 3),
        bc_coords=np.array(bc_coords, dtype=np.float64).reshape(-1, 3),
        bc_values=np.array(bc_values, dtype=np.float64),
        ic_coords=np.array(ic_coords, dtype=np.float64).reshape(-1, 3),
        ic_values=np.array(ic_values, dtype=np.float64))
    return fld, truth, dataset


def relative_l2(pred: flowsim.HeadField, truth: flowsim.HeadField):
    """||pred - truth|| / ||truth|| in normalized head units over steps 1..nt."""
    if pred.heads.shape != truth.heads.shape:
        raise ValueError("prediction and truth shapes differ")
    b = truth.boundary
    scale = b.left_head - b.right_head
    p = (pred.heads[1:] - b.right_head) / scale
    t = (truth.heads[1:] - b.right_head) / scale
    denom = np.linalg.norm(t)
    if denom == 0:
        raise ZeroDivisionError("truth field has zero norm")
    return float(np.linalg.norm(p - t) / denom)


def per_step_relative_l2(pred: flowsim.HeadField, truth: flowsim.HeadField):
    b = truth.boundary
    scale = b.left_head - b.right_head
    p = (pred.heads[1:] - b.right_head) / scale
    t = (truth.heads[1:] - b.right_head) / scale
    num = np.linalg.norm(p - t, axis=(1, 2))
    den = np.linalg.norm(t, axis=(1, 2))
    return num / np.where(den == 0, np.inf, den)


def _cell_seed(master, axis, value_index, repeat):
    ss = np.random.SeedSequence([int(master), AXES.index(axis),
                                 int(value_index), int(repeat)])
    return [int(s) for s in ss.generate_state(2)]


def _cell_counts(config: ExperimentConfig, value):
    counts = DatasetCounts(**asdict(config.counts))
    corruption = None
    if config.axis == "collocation":
        counts.collocation = int(value)
    elif config.axis == "boundary":
        counts.boundary_per_edge = int(value)
    elif config.axis == "observation":
        # total observations spread as evenly as possible over 18 steps
        counts.obs_per_step = int(value) // OBS_MAX_STEP
        counts.obs_remainder = int(value) % OBS_MAX_STEP
    elif config.axis == "noise":
        corruption = float(value) / 100.0
    elif config.axis == "outlier":
        corruption = float(value) / 100.0
    return counts, corruption


def run_sweep(config: ExperimentConfig, grid: GridSpec = None,
              boundary: BoundarySpec = None, progress=None):
    """Run every (axis value, repeat, variant) cell; returns metric rows.

    Emits metrics.csv (one row per cell) and per_step.csv under out_dir.
    Failures are recorded in the status column without aborting the sweep.
    """
    grid = grid or GridSpec()
    boundary = boundary or BoundarySpec()
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    per_step_rows = []

    for vi, value in enumerate(config.values):
        counts, corruption = _cell_counts(config, value)
        obs_remainder = getattr(counts, "obs_remainder", 0)
        for repeat in range(config.repeats):
            data_seed, corrupt_seed = _cell_seed(config.master_seed, config.axis,
                                                 vi, repeat)
            counts_eff = counts
            fld, truth, dataset = generate_dataset(
                data_seed, counts_eff, grid, boundary, config.kle_terms)
            if obs_remainder:
                dataset = _extend_observations(dataset, truth, obs_remainder,
                                               corrupt_seed)
            if config.axis == "noise" and corruption:
                dataset = tgtrain.corrupt(dataset, CorruptionSpec(
                    noise_level=corruption, seed=corrupt_seed))
            elif config.axis == "outlier" and corruption:
                dataset = tgtrain.corrupt(dataset, CorruptionSpec(
                    outlier_fraction=corruption, seed=corrupt_seed))

            for variant in config.variants:
                t0 = time.perf_counter()
                try:
                    model, history = tgtrain.train(
                        variant, dataset, fld.k, grid,
                        weights=config.weights, optimizer=config.optimizer,
                        epochs=config.epochs, seed=data_seed)
                    pred = tgtrain.predict_head_field(model)
                    rel = relative_l2(pred, truth)
                    steps = per_step_relative_l2(pred, truth)
                    status = "ok"
                except Exception as exc:           # record, keep sweeping
                    rel, steps, history = float("nan"), None, None
                    status = "error: %s" % exc
                wall = time.perf_counter() - t0
                rows.append({
                    "axis": config.axis, "value": value, "variant": variant,
                    "repeat": repeat, "seed": data_seed, "rel_l2": rel,
                    "wall_time": wall, "status": status})
                if steps is not None:
                    for s, r in enumerate(steps, start=1):
                        per_step_rows.append({
                            "axis": config.axis, "value": value,
                            "variant": variant, "repeat": repeat,
                            "step": s, "rel_l2": float(r)})
                if history is not None:
                    history.to_csv(out / ("loss_%s_v%s_r%d.csv"
                                          % (variant, value, repeat)))
                if progress:
                    progress(rows[-1])

    _write_csv(out / "metrics.csv",
               ["axis", "value", "variant", "repeat", "seed", "rel_l2",
                "wall_time", "status"], rows)
    _write_csv(out / "per_step.csv",
               ["axis", "value", "variant", "repeat", "step", "rel_l2"],
               per_step_rows)
    return rows


def _extend_observations(dataset, truth, extra_per_sweep, seed):
    """Top up observations when the sweep total is not divisible by 18."""
    rng = np.random.default_rng(seed + 1)
    grid, b = dataset.grid, dataset.boundary
    truth_norm = (truth.heads - b.right_head) / (b.left_head - b.right_head)
    cells = list(map(tuple, dataset.obs_cells))
    have = set(cells)
    labels = list(dataset.obs_labels)
    added = 0
    while added < extra_per_sweep:
        t = int(rng.integers(1, OBS_MAX_STEP + 1))
        i = int(rng.integers(0, grid.ny))
        j = int(rng.integers(1, grid.nx - 1))
        if (t, i, j) in have:
            continue
        have.add((t, i, j))
        cells.append((t, i, j))
        labels.append(truth_norm[t, i, j])
        added += 1
    from dataclasses import replace
    return replace(dataset, obs_cells=np.array(cells, dtype=np.int64),
                   obs_labels=np.array(labels, dtype=np.float64))


def bench_inference_vs_simulation(model, k, target_steps,
                                  grid: GridSpec = None,
                                  boundary: BoundarySpec = None):
    """Cumulative simulation time vs single-slice inference time per step."""
    grid = grid or model.grid
    boundary = boundary or model.boundary
    sim_times = flowsim.timing_profile(k, grid, boundary, target_steps)
    rows = []
    for t in sorted(int(s) for s in target_steps):
        t0 = time.perf_counter()
        tgtrain.predict_field(model, t)
        infer = time.perf_counter() - t0
        rows.append({"step": t, "simulation_time": sim_times[t],
                     "inference_time": infer})
    return rows


def summarize(rows):
    """Mean and sample std of rel_l2 per (axis, value, variant)."""
    groups = {}
    for r in rows:
        key = (r["axis"], r["value"], r["variant"])
        groups.setdefault(key, []).append(float(r["rel_l2"]))
    out = []
    for (axis, value, variant), vals in sorted(groups.items(), key=str):
        vals = np.asarray(vals)
        ok = vals[np.isfinite(vals)]
        out.append({
            "axis": axis, "value": value, "variant": variant,
            "n": int(ok.size),
            "mean": float(ok.mean()) if ok.size else float("nan"),
            "std": float(ok.std(ddof=1)) if ok.size > 1 else 0.0,
            "missing": int(vals.size - ok.size)})
    return out


def report(out_dir, render_figures=True):
    """Aggregate sweep output into summary.csv and boxplot figures."""
    out = Path(out_dir)
    metrics = out / "metrics.csv"
    if not metrics.exists():
        raise FileNotFoundError("no metrics.csv under %s" % out)
    with open(metrics) as fh:
        rows = list(csv.DictReader(fh))
    summary = summarize(rows)
    _write_csv(out / "summary.csv",
               ["axis", "value", "variant", "n", "mean", "std", "missing"],
               summary)
    figures = []
    if render_figures and rows:
        from . import plotting
        for axis in sorted({r["axis"] for r in rows}):
            path = out / ("boxplot_%s.png" % axis)
            plotting.sweep_boxplot([r for r in rows if r["axis"] == axis],
                                   axis, path)
            figures.append(path)
    return summary, figures


def _write_csv(path, fieldnames, rows):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fieldnames)
        w.writeheader()
        for r in rows:
            w.writerow(r)
