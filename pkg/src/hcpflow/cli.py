"""Command-line entry points: generate, train, sweep, bench, report."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import flowsim, labcli, randfield, tgtrain
from .flowsim import BoundarySpec, GridSpec


def _cmd_generate(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    counts = labcli.DatasetCounts()
    fld, truth, dataset = labcli.generate_dataset(args.seed, counts)
    randfield.save_field(out / "conductivity.json", fld)
    flowsim.save_head_field(out / "truth.npz", truth)
    doc = {
        "seed": args.seed,
        "obs_cells": dataset.obs_cells.tolist(),
        "obs_labels": dataset.obs_labels.tolist(),
        "colloc_cells": dataset.colloc_cells.tolist(),
        "bc_coords": dataset.bc_coords.tolist(),
        "bc_values": dataset.bc_values.tolist(),
        "ic_coords": dataset.ic_coords.tolist(),
        "ic_values": dataset.ic_values.tolist(),
    }
    with open(out / "dataset.json", "w") as fh:
        json.dump(doc, fh)
    print("wrote conductivity.json, truth.npz, dataset.json to %s" % out)
    return 0


def _cmd_train(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    grid, boundary = GridSpec(), BoundarySpec()
    fld, truth, dataset = labcli.generate_dataset(args.seed)
    model, history = tgtrain.train(args.variant, dataset, fld.k, grid,
                                   epochs=args.epochs, seed=args.seed)
    tgtrain.save_checkpoint(out / "model.json", model)
    history.to_csv(out / "loss_history.csv")
    pred = tgtrain.predict_head_field(model)
    rel = labcli.relative_l2(pred, truth)
    print("variant=%s epochs=%d seed=%d relative_l2=%.4f"
          % (args.variant, args.epochs, args.seed, rel))
    return 0


def _cmd_sweep(args):
    config = labcli.ExperimentConfig.from_json(args.config)
    if args.out:
        config.out_dir = args.out
    if args.seed is not None:
        config.master_seed = args.seed
    if args.epochs is not None:
        config.epochs = args.epochs

    def progress(row):
        print("%-12s value=%-8s %-5s repeat=%d rel_l2=%.4f (%s)"
              % (row["axis"], row["value"], row["variant"], row["repeat"],
                 row["rel_l2"], row["status"]))

    labcli.run_sweep(config, progress=progress)
    print("metrics written to %s" % config.out_dir)
    return 0


def _cmd_bench(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    grid, boundary = GridSpec(), BoundarySpec()
    fld, truth, dataset = labcli.generate_dataset(args.seed)
    if args.checkpoint:
        model = tgtrain.load_checkpoint(args.checkpoint)
    else:
        model, _ = tgtrain.train(args.variant, dataset, fld.k, grid,
                                 epochs=args.epochs, seed=args.seed)
    steps = [int(s) for s in args.steps.split(",")]
    rows = labcli.bench_inference_vs_simulation(model, fld.k, steps,
                                                grid, boundary)
    labcli._write_csv(out / "timing.csv",
                      ["step", "simulation_time", "inference_time"], rows)
    from . import plotting
    plotting.timing_figure(rows, out / "timing.png")
    for r in rows:
        print("step %5d  simulation %.4fs  inference %.4fs"
              % (r["step"], r["simulation_time"], r["inference_time"]))
    return 0


def _cmd_report(args):
    summary, figures = labcli.report(args.out)
    for row in summary:
        print("%-12s value=%-8s %-5s mean=%.4f std=%.4f (n=%d)"
              % (row["axis"], row["value"], row["variant"],
                 row["mean"], row["std"], row["n"]))
    for f in figures:
        print("figure: %s" % f)
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="hcpflow",
                                description="hard-constraint-projection "
                                            "surrogate experiments")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="field + truth + training dataset")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", default="dataset_out")
    g.set_defaults(func=_cmd_generate)

    t = sub.add_parser("train", help="single training run")
    t.add_argument("--variant", choices=list(tgtrain.VARIANTS), default="hcp")
    t.add_argument("--epochs", type=int, default=500)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--out", default="train_out")
    t.set_defaults(func=_cmd_train)

    s = sub.add_parser("sweep", help="experiment sweep from a config file")
    s.add_argument("--config", required=True)
    s.add_argument("--out", default=None)
    s.add_argument("--seed", type=int, default=None)
    s.add_argument("--epochs", type=int, default=None)
    s.set_defaults(func=_cmd_sweep)

    b = sub.add_parser("bench", help="simulation vs inference timing")
    b.add_argument("--variant", choices=list(tgtrain.VARIANTS), default="hcp")
    b.add_argument("--epochs", type=int, default=50)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--steps", default="10,50,100,500")
    b.add_argument("--checkpoint", default=None)
    b.add_argument("--out", default="bench_out")
    b.set_defaults(func=_cmd_bench)

    r = sub.add_parser("report", help="aggregate sweep output")
    r.add_argument("--out", default="sweep_out")
    r.set_defaults(func=_cmd_report)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}),
              file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
