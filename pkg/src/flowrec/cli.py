"""Command-line orchestration: generate, train, evaluate, scaling, plot.

Exit codes: 0 success, 1 configuration/precondition error, 2 runtime failure.

Run directory layout:
    reference.csv                      generated reference dataset
    generate_manifest.json
    train/seed<S>/rank<R>.ckpt         checkpoints per rank
    train/seed<S>/loss_rank<R>.csv     loss history per rank
    train/seed<S>/manifest.json
    metrics.csv  metrics_summary.json  per-seed and aggregated errors
    metrics_snapshots.csv              per-snapshot errors (unsteady)
    interface_jumps.csv
    scaling.csv  scaling_manifest.json
    plots/*.png
"""

import argparse
import json
import os
import sys

import numpy as np

from . import evaluation as ev
from .benchmarks import make_reference_grid
from .config import ConfigError, decomposition_for_procs, load_config
from .decomposition import (
    build_all_rank_datasets,
    identify_masters,
    partition,
    read_reference_csv,
)
from .network import load_checkpoint, save_checkpoint
from .runtime import (
    build_plan,
    train,
    train_many,
    write_loss_history,
    write_run_manifest,
)


class MissingInputError(RuntimeError):
    """A required input artifact (dataset, checkpoint) is absent."""


def _ref_path(out):
    return os.path.join(out, "reference.csv")


def _seed_dir(out, seed):
    return os.path.join(out, "train", f"seed{seed}")


def _ckpt_path(seed_dir, rank):
    return os.path.join(seed_dir, f"rank{rank}.ckpt")


def _subdomains_for(cfg, procs=None):
    if procs is None:
        return cfg.subdomains()
    dom = cfg.domain()
    counts, m = decomposition_for_procs(dom.regime, procs)
    d = cfg.raw["decomposition"]
    return partition(
        dom, counts, time_splits=m,
        delta_space=float(d["delta_space"]), delta_time=float(d["delta_time"]),
    )


def _load_problem(cfg, out, procs=None):
    ref = _ref_path(out)
    if not os.path.exists(ref):
        raise MissingInputError(f"{ref} not found; run `flowrec generate` first")
    table = read_reference_csv(ref, cfg.domain().regime)
    observations = cfg.observation_plan(table)
    subdomains = _subdomains_for(cfg, procs)
    return table, observations, subdomains


def cmd_generate(cfg, out, force=False, config_path=None):
    os.makedirs(out, exist_ok=True)
    ref = _ref_path(out)
    if os.path.exists(ref) and not force:
        raise MissingInputError(f"{ref} exists; pass --force to overwrite")
    sol = cfg.solution()
    nx, snaps = cfg.reference_spec()
    n_rows = make_reference_grid(sol, nx, snaps, ref)
    inputs = [ref] + ([config_path] if config_path else [])
    write_run_manifest(
        os.path.join(out, "generate_manifest.json"),
        cfg.raw,
        input_files=inputs,
        extra={"rows": n_rows, "benchmark": sol.name},
    )
    print(f"wrote {ref} ({n_rows} rows)")
    return 0


def cmd_train(cfg, out, seeds=None, procs=None, backend=None, config_path=None,
              seed_workers=None):
    table, observations, subdomains = _load_problem(cfg, out, procs)
    regime = cfg.domain().regime
    expert_cfg = cfg.expert_config(regime)
    seeds = cfg.seeds if seeds is None else seeds
    n_ranks = len(subdomains)
    if backend is None:
        backend = "process" if n_ranks > 1 else "serial"
    plans = []
    for seed in seeds:
        datasets = build_all_rank_datasets(subdomains, cfg.budget(), observations, seed)
        plans.append(build_plan(subdomains, datasets, expert_cfg, cfg.train_config(seed)))
    if n_ranks == 1 and len(plans) > 1:
        workers = seed_workers or min(len(plans), os.cpu_count() or 1)
        results = train_many(plans, n_workers=workers, backend="serial")
    else:
        results = [train(p, backend=backend) for p in plans]
    label = subdomains[0].label
    for seed, plan, res in zip(seeds, plans, results):
        sdir = _seed_dir(out, seed)
        os.makedirs(sdir, exist_ok=True)
        for rank, params in res.params.items():
            save_checkpoint(_ckpt_path(sdir, rank), params)
            write_loss_history(os.path.join(sdir, f"loss_rank{rank}.csv"), res.history[rank])
        write_run_manifest(
            os.path.join(sdir, "manifest.json"),
            cfg.raw,
            input_files=[_ref_path(out)] + ([config_path] if config_path else []),
            extra={
                "seed": seed,
                "P": n_ranks,
                "decomposition": label,
                "masters": sorted(plan.masters),
                "wall_time_s": res.wall_time_s,
                "median_epoch_s": res.median_epoch_time(),
                "backend": backend if n_ranks > 1 else "serial",
            },
        )
        print(f"seed {seed}: P={n_ranks} ({label}) wall {res.wall_time_s:.1f}s")
    return 0


def _load_experts(out, seed, subdomains):
    sdir = _seed_dir(out, seed)
    experts = {}
    for s in subdomains:
        path = _ckpt_path(sdir, s.rank_index)
        if not os.path.exists(path):
            raise MissingInputError(
                f"missing checkpoint for rank {s.rank_index}, seed {seed}: {path}"
            )
        experts[s.rank_index] = load_checkpoint(path)
    return experts


def cmd_evaluate(cfg, out, seeds=None, procs=None):
    table, observations, subdomains = _load_problem(cfg, out, procs)
    regime = cfg.domain().regime
    anchor = cfg.anchor()
    coupling = cfg.raw["training"]["pressure_coupling"]
    masters = identify_masters(subdomains, anchor) if coupling == "anchored_master" else frozenset()
    seeds = cfg.seeds if seeds is None else seeds
    n_ranks = len(subdomains)
    label = subdomains[0].label
    metric_rows, snapshot_rows, per_seed = [], [], []
    jumps_last = []
    for seed in seeds:
        experts = _load_experts(out, seed, subdomains)
        stitched = ev.stitch(experts, subdomains, table.points)
        errs = ev.field_errors(stitched, table, masters, anchor)
        per_seed.append(errs)
        for var, val in errs.items():
            metric_rows.append((var, seed, n_ranks, label, val))
        if regime.has_time:
            series = ev.error_over_time(stitched, table, masters, anchor)
            for var, s in series.items():
                for t, e in zip(s.times, s.errors):
                    snapshot_rows.append((seed, var, t, e))
        if n_ranks > 1:
            jumps_last = ev.interface_jump(experts, subdomains)
    ev.write_metrics_csv(os.path.join(out, "metrics.csv"), metric_rows)
    if snapshot_rows:
        ev.write_snapshot_csv(os.path.join(out, "metrics_snapshots.csv"), snapshot_rows)
    if jumps_last:
        ev.write_interface_csv(os.path.join(out, "interface_jumps.csv"), jumps_last,
                               seed=seeds[-1])
    summary = {
        var: {"mean": m, "std": s}
        for var, (m, s) in ev.aggregate_seed_errors(per_seed).items()
    }
    with open(os.path.join(out, "metrics_summary.json"), "w") as f:
        json.dump({"P": n_ranks, "decomposition": label, "seeds": list(seeds),
                   "errors": summary}, f, indent=2, sort_keys=True)
        f.write("\n")
    for var, (m, s) in ev.aggregate_seed_errors(per_seed).items():
        pm = "" if s is None else f" +- {s:.3e}"
        print(f"{var:>4s}: {m:.3e}{pm}")
    return 0


def cmd_scaling(cfg, out, procs_list, seeds=None, config_path=None):
    table, observations, _ = _load_problem(cfg, out)
    regime = cfg.domain().regime
    expert_cfg = cfg.expert_config(regime)
    anchor = cfg.anchor()
    seeds = (cfg.seeds if seeds is None else seeds) or [0]
    seed = seeds[0]
    cpu = os.cpu_count() or 1
    flagged = cpu < max(procs_list)
    if flagged:
        print(
            f"warning: machine has {cpu} cores but P up to {max(procs_list)} was "
            "requested; wall times will not reflect parallel capacity",
            file=sys.stderr,
        )
    rows = []
    manifest = {"flagged_insufficient_capacity": flagged, "cpu_count": cpu,
                "seed": seed, "runs": []}
    prev_wall = None
    for procs in procs_list:
        subdomains = _subdomains_for(cfg, procs)
        datasets = build_all_rank_datasets(subdomains, cfg.budget(), observations, seed)
        plan = build_plan(subdomains, datasets, expert_cfg, cfg.train_config(seed))
        res = train(plan, backend="process" if procs > 1 else "serial")
        masters = identify_masters(subdomains, anchor)
        stitched = ev.stitch(res.params, subdomains, table.points)
        errs = ev.field_errors(stitched, table, masters, anchor)
        label = subdomains[0].label
        speed = "" if prev_wall is None else f"{prev_wall / res.wall_time_s:.3g}"
        rows.append(
            f"{procs},{label},{res.wall_time_s:.6g},{speed},"
            f"{errs['vel']:.6g},{errs.get('p', float('nan')):.6g}"
        )
        manifest["runs"].append(
            {"P": procs, "decomposition": label, "wall_time_s": res.wall_time_s,
             "median_epoch_s": res.median_epoch_time(), "errors": errs}
        )
        prev_wall = res.wall_time_s
        print(f"P={procs} ({label}): wall {res.wall_time_s:.1f}s "
              f"median epoch {res.median_epoch_time()*1e3:.1f}ms")
    with open(os.path.join(out, "scaling.csv"), "w") as f:
        f.write("P,decomposition,wall_time_s,speedup_vs_prev,vel_l2,pres_l2\n")
        f.write("\n".join(rows) + "\n")
    with open(os.path.join(out, "scaling_manifest.json"), "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")
    return 0


def cmd_plot(out):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plots = os.path.join(out, "plots")
    os.makedirs(plots, exist_ok=True)
    made = []
    train_root = os.path.join(out, "train")
    if os.path.isdir(train_root):
        for sd in sorted(os.listdir(train_root)):
            sdir = os.path.join(train_root, sd)
            csvs = sorted(f for f in os.listdir(sdir) if f.startswith("loss_rank"))
            if not csvs:
                continue
            fig, ax = plt.subplots(figsize=(7, 4.5))
            labels = ["obs", "pde", "ghost_u", "ghost_p_space", "ghost_p_time"]
            acc = None
            for name in csvs:
                h = np.loadtxt(os.path.join(sdir, name), delimiter=",", skiprows=1, ndmin=2)
                acc = h if acc is None else acc + h
            acc /= len(csvs)
            for i, lab in enumerate(labels):
                col = acc[:, 1 + i]
                if np.any(col > 0):
                    ax.semilogy(acc[:, 0], col, label=lab)
            ax.set_xlabel("epoch")
            ax.set_ylabel("loss (rank average)")
            ax.legend()
            ax.set_title(sd)
            path = os.path.join(plots, f"loss_{sd}.png")
            fig.savefig(path, dpi=120, bbox_inches="tight")
            plt.close(fig)
            made.append(path)
    snap = os.path.join(out, "metrics_snapshots.csv")
    if os.path.exists(snap):
        import csv as csv_mod

        with open(snap) as f:
            rows = list(csv_mod.DictReader(f))
        fig, ax = plt.subplots(figsize=(7, 4.5))
        by_var = {}
        for r in rows:
            by_var.setdefault(r["variable"], []).append((float(r["t"]), float(r["relative_l2"])))
        for var, pts in sorted(by_var.items()):
            pts.sort()
            ax.semilogy([p[0] for p in pts], [p[1] for p in pts], marker=".", label=var)
        ax.set_xlabel("t")
        ax.set_ylabel("relative L2 error")
        ax.legend()
        path = os.path.join(plots, "error_over_time.png")
        fig.savefig(path, dpi=120, bbox_inches="tight")
        plt.close(fig)
        made.append(path)
    for p in made:
        print(f"wrote {p}")
    if not made:
        print("nothing to plot (no training or evaluation outputs found)")
    return 0


def _parse_int_list(text):
    return [int(x) for x in str(text).split(",") if x != ""]


def build_parser():
    ap = argparse.ArgumentParser(
        prog="flowrec",
        description="Distributed physics-informed flow reconstruction",
    )
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, config_required=True):
        p.add_argument("--config", required=config_required, help="YAML run configuration")
        p.add_argument("--out", required=True, help="run output directory")

    p = sub.add_parser("generate", help="write the manufactured reference dataset")
    common(p)
    p.add_argument("--force", action="store_true", help="overwrite existing outputs")

    p = sub.add_parser("train", help="train local experts for every seed")
    common(p)
    p.add_argument("--seeds", type=_parse_int_list, default=None, help="e.g. 0,1,2")
    p.add_argument("--procs", type=int, default=None,
                   help="rank count; overrides the configured decomposition")
    p.add_argument("--backend", choices=["serial", "process"], default=None)

    p = sub.add_parser("evaluate", help="stitch, align pressure, write error reports")
    common(p)
    p.add_argument("--seeds", type=_parse_int_list, default=None)
    p.add_argument("--procs", type=int, default=None)

    p = sub.add_parser("scaling", help="strong-scaling sweep over process counts")
    common(p)
    p.add_argument("--procs", type=_parse_int_list, required=True, help="e.g. 1,2,4")
    p.add_argument("--seeds", type=_parse_int_list, default=None)

    p = sub.add_parser("plot", help="render loss curves and error-over-time figures")
    p.add_argument("--out", required=True)
    return ap


def main(argv=None):
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as e:
        return 0 if e.code in (0, None) else 1
    try:
        if args.command == "plot":
            return cmd_plot(args.out)
        cfg = load_config(args.config)
        if args.command == "generate":
            return cmd_generate(cfg, args.out, force=args.force, config_path=args.config)
        if args.command == "train":
            return cmd_train(cfg, args.out, seeds=args.seeds, procs=args.procs,
                             backend=args.backend, config_path=args.config)
        if args.command == "evaluate":
            return cmd_evaluate(cfg, args.out, seeds=args.seeds, procs=args.procs)
        if args.command == "scaling":
            return cmd_scaling(cfg, args.out, args.procs, seeds=args.seeds,
                               config_path=args.config)
        raise ConfigError(f"unknown command {args.command}")
    except (ConfigError, MissingInputError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except Exception:
        import traceback

        traceback.print_exc()
        return 2


if __name__ == "__main__":
    sys.exit(main())
