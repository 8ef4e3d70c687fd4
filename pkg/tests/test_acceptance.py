"""End-to-end acceptance suite: one verdict line per criterion.

Run with ``pytest tests/test_acceptance.py -s`` to see the verdict lines as
they complete. The desk-scale and noise fixtures train 25 networks at 2000
epochs and dominate the runtime (roughly 20-30 minutes on a laptop CPU);
everything else finishes in seconds.
"""

import statistics
import time

import numpy as np
import pytest
import scipy.stats

from hcpflow import diffcore, flowsim, hcp, labcli, randfield, tgtrain
from hcpflow.flowsim import BoundarySpec, GridSpec

GRID = GridSpec()
BOUNDARY = BoundarySpec()
SEEDS = range(5)
EPOCHS = 2000
NOISE_CORRUPT_SEED_OFFSET = 100


# collected by the conftest terminal-summary hook so the verdicts are
# visible even when pytest captures per-test stdout
CRITERION_VERDICTS = []


def _verdict(num, name, ok, detail=""):
    tag = "PASS" if ok else "FAIL"
    line = "[%s] criterion %2d: %s" % (tag, num, name)
    if detail:
        line += " — " + detail
    print("\n" + line)
    CRITERION_VERDICTS.append(line)
    assert ok, line


def _random_constraint_systems(n, seed=0):
    """Constraint systems for random heterogeneous fields and free centers."""
    rng = np.random.default_rng(seed)
    fields = [np.exp(0.8 * rng.standard_normal((GRID.ny, GRID.nx)))
              for _ in range(20)]
    systems = []
    while len(systems) < n:
        k = fields[rng.integers(len(fields))]
        patch = hcp.StencilPatch(i=int(rng.integers(0, GRID.ny)),
                                 j=int(rng.integers(1, GRID.nx - 1)),
                                 t=int(rng.integers(1, GRID.nt + 1)),
                                 grid=GRID)
        systems.append(hcp.constraint_for_patch(patch, k, BOUNDARY))
    return systems


@pytest.fixture(scope="module")
def random_projections():
    systems = _random_constraint_systems(1000)
    ops = [hcp.build_projection(s) for s in systems]
    return systems, ops


@pytest.fixture(scope="module")
def desk_runs():
    """Five paired seeds, all three variants, full training budget."""
    t0 = time.perf_counter()
    out = {v: {"rel": [], "loss500": []} for v in tgtrain.VARIANTS}
    for seed in SEEDS:
        fld, truth, dataset = labcli.generate_dataset(seed)
        for variant in tgtrain.VARIANTS:
            model, history = tgtrain.train(variant, dataset, fld.k, GRID,
                                           epochs=EPOCHS, seed=seed)
            pred = tgtrain.predict_head_field(model)
            out[variant]["rel"].append(labcli.relative_l2(pred, truth))
            out[variant]["loss500"].append(history.total[499])
    out["wall_time"] = time.perf_counter() - t0
    return out


@pytest.fixture(scope="module")
def noise_runs():
    """The same paired seeds with 40% multiplicative observation noise."""
    out = {"ann": [], "hcp": []}
    for seed in SEEDS:
        fld, truth, dataset = labcli.generate_dataset(seed)
        noisy = tgtrain.corrupt(dataset, tgtrain.CorruptionSpec(
            noise_level=0.4, seed=seed + NOISE_CORRUPT_SEED_OFFSET))
        for variant in ("ann", "hcp"):
            model, _ = tgtrain.train(variant, noisy, fld.k, GRID,
                                     epochs=EPOCHS, seed=seed)
            pred = tgtrain.predict_head_field(model)
            out[variant].append(labcli.relative_l2(pred, truth))
    return out


def test_criterion_01_projection_feasibility(random_projections):
    systems, ops = random_projections
    rng = np.random.default_rng(1)
    hs = [200.0 + 2.0 * rng.standard_normal(op.dim) for op in ops]
    t0 = time.perf_counter()
    projected = hcp.batch_project(ops, hs)
    elapsed = time.perf_counter() - t0
    worst = max(abs(op.reduced_row @ h - op.b) / (1.0 + abs(op.b))
                for op, h in zip(ops, projected))
    _verdict(1, "projected patches satisfy their constraint",
             worst <= 1e-10 and elapsed < 1.0,
             "max residual %.2e over %d patches in %.3fs"
             % (worst, len(ops), elapsed))


def test_criterion_02_projector_algebra(random_projections):
    _, ops = random_projections
    worst_idem = worst_sym = worst_null = worst_forms = 0.0
    rng = np.random.default_rng(2)
    for op in ops:
        p = op.matrix
        worst_idem = max(worst_idem, np.abs(p @ p - p).max())
        worst_sym = max(worst_sym, np.abs(p - p.T).max())
        worst_null = max(worst_null, np.abs(p @ op.reduced_row).max())
        # agreement measured relative to the result's magnitude: the offset
        # term scales like b/||a|| (tens), so an absolute 1e-14 is below
        # float64 resolution of the quantities being compared
        h = rng.standard_normal(op.dim)
        h_star = hcp.project(op, h)
        scale = max(1.0, float(np.abs(h_star).max()))
        worst_forms = max(worst_forms,
                          float(np.abs(h_star - (p @ h + op.offset)).max())
                          / scale)
    ok = (worst_idem <= 1e-12 and worst_sym <= 1e-12
          and worst_null <= 1e-12 and worst_forms <= 1e-14)
    _verdict(2, "projector is an orthogonal affine projection", ok,
             "idempotence %.1e, symmetry %.1e, row null space %.1e, "
             "matrix-vs-scalar %.1e"
             % (worst_idem, worst_sym, worst_null, worst_forms))


def test_criterion_03_projection_optimality(random_projections):
    _, ops = random_projections
    rng = np.random.default_rng(3)
    worst_margin = np.inf
    worst_cos = 1.0
    for op in ops:
        a, b = op.reduced_row, op.b
        h = 200.0 + 2.0 * rng.standard_normal(op.dim)
        h_star = hcp.project(op, h)
        d_star = np.linalg.norm(h - h_star)
        z = 200.0 + 2.0 * rng.standard_normal((10000, op.dim))
        z -= np.outer((z @ a - b) / (a @ a), a)      # feasible competitors
        worst_margin = min(worst_margin,
                           np.linalg.norm(h - z, axis=1).min() - d_star)
        if d_star > 0:
            cos = abs((h - h_star) @ a) / (d_star * np.linalg.norm(a))
            worst_cos = min(worst_cos, cos)
    ok = worst_margin >= -1e-12 and worst_cos >= 1.0 - 1e-10
    _verdict(3, "projection is the closest feasible point along the row", ok,
             "worst competitor margin %.2e, worst |cos| deficit %.1e"
             % (worst_margin, 1.0 - worst_cos))


def test_criterion_04_gradients_match_finite_differences():
    rng = np.random.default_rng(4)
    worst = 0.0
    for _ in range(20):
        sizes = [int(rng.integers(2, 4)), int(rng.integers(4, 9)),
                 int(rng.integers(4, 9)), 1]
        params = diffcore.ParameterSet.xavier(sizes, rng)
        x = rng.normal(size=(int(rng.integers(2, 6)), sizes[0]))
        target = rng.normal(size=x.shape[0])

        def loss_value(p):
            h = x
            for k, (w, b) in enumerate(zip(p.weights, p.biases)):
                h = h @ w + b
                if k != p.n_layers() - 1:
                    h = np.tanh(h)
            return float(np.mean((h[:, 0] - target) ** 2))

        wl, bl = params.as_leaves()
        out = diffcore.reshape(diffcore.mlp_forward(wl, bl,
                                                    diffcore.constant(x)),
                               (x.shape[0],))
        loss = diffcore.mean(diffcore.square(diffcore.add_const(out, -target)))
        diffcore.backward(loss)
        grad = np.concatenate([g.grad.ravel() for g in wl + bl])

        eps = 1e-5
        v0 = params.flat()
        fd = np.zeros_like(v0)
        for i in range(v0.size):
            vp, vm = v0.copy(), v0.copy()
            vp[i] += eps
            vm[i] -= eps
            pp, pm = params.copy(), params.copy()
            pp.set_flat(vp)
            pm.set_flat(vm)
            fd[i] = (loss_value(pp) - loss_value(pm)) / (2 * eps)
        denom = np.maximum(np.abs(fd), 1e-8)
        worst = max(worst, float(np.max(np.abs(grad - fd) / denom)))
    _verdict(4, "backpropagated gradients match central differences",
             worst <= 1e-5, "max relative error %.2e over 20 configurations"
             % worst)


def test_criterion_05_simulator_oracle():
    homo = flowsim.simulate(np.ones((GRID.ny, GRID.nx)), GRID, BOUNDARY,
                            nt=500)
    j = np.arange(GRID.nx)
    linear = BOUNDARY.left_head + (BOUNDARY.right_head
                                   - BOUNDARY.left_head) * j / (GRID.nx - 1)
    profile_err = float(np.abs(homo.heads[-1] - linear[None, :]).max())

    rng = np.random.default_rng(5)
    k = np.exp(0.8 * rng.standard_normal((GRID.ny, GRID.nx)))
    hetero = flowsim.simulate(k, GRID, BOUNDARY)
    residual = float(np.abs(hcp.stencil_residual(hetero, k)).max())
    lo = min(homo.heads.min(), hetero.heads.min())
    hi = max(homo.heads.max(), hetero.heads.max())
    bounded = lo >= 200.0 - 1e-9 and hi <= 202.0 + 1e-9
    ok = profile_err <= 1e-4 and residual <= 1e-8 and bounded
    _verdict(5, "simulator reaches the linear profile and solves the stencil",
             ok, "profile error %.2e, max stencil residual %.2e, "
             "heads in [%.4f, %.4f]" % (profile_err, residual, lo, hi))


def test_criterion_06_random_field_sanity():
    spec = randfield.CovarianceSpec(nx=GRID.nx, ny=GRID.ny,
                                    domain=GRID.domain_x)
    basis = labcli.kle_basis(spec, 20)
    nonneg = bool(np.all(basis.eigenvalues >= 0))
    descending = bool(np.all(np.diff(basis.eigenvalues) <= 1e-12))

    rng = np.random.default_rng(6)
    xi = rng.standard_normal((1000, 20))
    samples = (xi * np.sqrt(basis.eigenvalues)) @ basis.modes
    emp = samples.var(axis=0).mean()
    theo = randfield.pointwise_variance(basis).mean()
    var_ok = abs(emp - theo) / theo < 0.10

    zero = randfield.sample_field(basis, xi=np.zeros(20))
    unit = bool(np.allclose(zero.k, 1.0))
    ok = nonneg and descending and var_ok and unit
    _verdict(6, "random field spectrum and sampling statistics", ok,
             "variance ratio %.3f, eigenvalues %s, zero draw %s"
             % (emp / theo,
                "ok" if nonneg and descending else "BAD",
                "K=1" if unit else "BAD"))


def test_criterion_07_desk_scale_accuracy_ordering(desk_runs):
    med = {v: statistics.median(desk_runs[v]["rel"])
           for v in tgtrain.VARIANTS}
    minutes = desk_runs["wall_time"] / 60.0
    ok = (med["hcp"] <= med["soft"] <= med["ann"]
          and med["hcp"] <= 0.10 and med["ann"] >= 0.10
          and minutes <= 45.0)
    _verdict(7, "median accuracy ordering hcp <= soft <= ann", ok,
             "medians ann %.4f / soft %.4f / hcp %.4f in %.1f min"
             % (med["ann"], med["soft"], med["hcp"], minutes))


def test_criterion_08_noise_robustness(desk_runs, noise_runs):
    hcp_clean = statistics.median(desk_runs["hcp"]["rel"])
    ann_clean = statistics.median(desk_runs["ann"]["rel"])
    hcp_noisy = statistics.median(noise_runs["hcp"])
    ann_noisy = statistics.median(noise_runs["ann"])
    ok = (hcp_noisy <= 2.0 * hcp_clean and hcp_noisy <= 0.15
          and ann_noisy >= 3.0 * ann_clean)
    _verdict(8, "40% noise: hcp stays accurate, ann degrades", ok,
             "hcp %.4f -> %.4f (x%.2f), ann %.4f -> %.4f (x%.2f)"
             % (hcp_clean, hcp_noisy, hcp_noisy / hcp_clean,
                ann_clean, ann_noisy, ann_noisy / ann_clean))


def test_criterion_09_paired_loss_decay(desk_runs):
    wins = sum(h <= s for h, s in zip(desk_runs["hcp"]["loss500"],
                                      desk_runs["soft"]["loss500"]))
    ok = wins >= 4
    _verdict(9, "hcp training loss at epoch 500 beats soft in paired runs",
             ok, "%d of %d paired seeds" % (wins, len(list(SEEDS))))


def test_criterion_10_timing_shape():
    fld, _, dataset = labcli.generate_dataset(0)
    model, _ = tgtrain.train("ann", dataset, fld.k, GRID, epochs=50, seed=0)
    steps = [10, 50, 100, 500]
    tgtrain.predict_field(model, 1)          # warm-up before timing
    best = None
    for _ in range(3):                        # wall-clock noise tolerance
        rows = labcli.bench_inference_vs_simulation(model, fld.k, steps)
        sim = np.array([r["simulation_time"] for r in rows])
        infer = np.array([r["inference_time"] for r in rows])
        fit = scipy.stats.linregress(steps, sim)
        ratio = float(infer.max() / infer.min())
        ok = fit.slope > 0 and fit.rvalue ** 2 >= 0.9 and ratio <= 3.0
        best = (ok, fit, ratio)
        if ok:
            break
    ok, fit, ratio = best
    _verdict(10, "simulation cost grows linearly, inference cost is flat",
             ok, "slope %.2e, R^2 %.4f, inference max/min %.2f"
             % (fit.slope, fit.rvalue ** 2, ratio))
