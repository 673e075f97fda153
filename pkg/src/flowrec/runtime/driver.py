"""Training driver: plan assembly, serial and process backends.

Both backends execute the same RankWorker code and are bit-identical for a
given (seed, partition, config): per-rank RNG streams are derived from the
global seed, reductions have fixed order, and worker BLAS pools are pinned to
one thread.  The process backend runs one OS process per rank communicating
over point-to-point queues with barrier semantics at exchange epochs.
"""

import hashlib
import json
import multiprocessing as mp
import os
import queue as queue_mod
import time
import traceback
from dataclasses import dataclass

import numpy as np
from threadpoolctl import threadpool_limits

from ..decomposition import identify_masters
from ..network import ExpertConfig, ExpertParams
from ..physics import FlowRegime
from .worker import (
    GhostMessage,
    OutgoingEdge,
    RankWorker,
    TrainConfig,
    WorkerSpec,
    derive_param_seed,
)


class DeadlockError(RuntimeError):
    pass


class RankFailure(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainingPlan:
    regime: FlowRegime
    subdomains: tuple
    masters: frozenset
    expert_config: ExpertConfig
    train_config: TrainConfig
    worker_specs: tuple

    @property
    def n_ranks(self):
        return len(self.worker_specs)


@dataclass
class TrainResult:
    params: dict  # rank -> ExpertParams
    history: dict  # rank -> (epochs, 7) array: epoch, 5 loss parts, lr
    epoch_times: dict  # rank -> (epochs,) seconds
    exchange_log: dict  # rank -> [(epoch, [(src, ghost_index), ...])]
    wall_time_s: float = 0.0

    def median_epoch_time(self):
        """Median over epochs of the slowest rank's epoch duration."""
        stacked = np.stack([self.epoch_times[r] for r in sorted(self.epoch_times)])
        return float(np.median(np.max(stacked, axis=0)))


def build_plan(subdomains, datasets, expert_config: ExpertConfig,
               train_config: TrainConfig) -> TrainingPlan:
    """Assemble per-rank worker specs: roles, effective weights, message routes."""
    domain = subdomains[0].domain
    regime = domain.regime
    anchored = train_config.pressure_coupling == "anchored_master"
    masters = identify_masters(subdomains, train_config.anchor)
    if anchored and subdomains[0].time_splits > 1 and not train_config.weights.ghost_p_time > 0:
        raise ValueError(
            "temporal ghost pressure weight must be positive when the domain is split in time"
        )
    # route: rank r evaluates and sends every ghost set that names r as neighbor
    outgoing = {s.rank_index: [] for s in subdomains}
    for s in subdomains:
        ds = datasets[s.rank_index]
        if len(ds.ghosts) != len(s.ghosts):
            raise ValueError(f"rank {s.rank_index}: datasets do not match the partition")
        for gi, g in enumerate(ds.ghosts):
            outgoing[g.neighbor].append(
                OutgoingEdge(dest=s.rank_index, ghost_index=gi, kind=g.kind, points=g.points)
            )
    specs = []
    for s in subdomains:
        is_master = s.rank_index in masters
        role = "master" if (anchored and is_master) else "slave"
        weights = train_config.weights
        if anchored and is_master:
            weights = weights.as_master()
        specs.append(
            WorkerSpec(
                rank=s.rank_index,
                role=role,
                spec=s,
                regime=regime,
                expert_config=expert_config,
                train_config=train_config,
                datasets=datasets[s.rank_index],
                effective_weights=weights,
                outgoing=tuple(outgoing[s.rank_index]),
                param_seed=derive_param_seed(train_config.seed, s.rank_index),
                normalize_outgoing=anchored and is_master,
            )
        )
    return TrainingPlan(
        regime=regime,
        subdomains=tuple(subdomains),
        masters=masters,
        expert_config=expert_config,
        train_config=train_config,
        worker_specs=tuple(specs),
    )


# -- serial backend ------------------------------------------------------------


def _train_serial(plan: TrainingPlan) -> TrainResult:
    t_start = time.perf_counter()
    with threadpool_limits(limits=1):
        workers = {ws.rank: RankWorker(ws) for ws in plan.worker_specs}
        order = sorted(workers)
        tc = plan.train_config
        for e in range(tc.epochs):
            if e % tc.comm_interval == 0:
                by_dest = {r: [] for r in order}
                for r in order:
                    for m in workers[r].outgoing_messages(e):
                        by_dest[m.dest].append(m)
                for r in order:
                    workers[r].receive_messages(by_dest[r], e)
            for r in order:
                workers[r].run_epoch(e)
    return _collect_results(plan, {r: w.export() for r, w in workers.items()},
                            time.perf_counter() - t_start)


# -- process backend -------------------------------------------------------------


def _drain_round(inbox, expected, rank, epoch, pending, timeout):
    """Collect this round's messages, stashing early arrivals from fast
    neighbors (they may run ahead by up to one communication interval)."""
    got = []
    need = set(expected)
    for key in list(pending):
        src, gi, ep = key
        if ep == epoch and (src, gi) in need:
            got.append(pending.pop(key))
            need.discard((src, gi))
    deadline = time.monotonic() + timeout
    while need:
        remaining = deadline - time.monotonic()
        if remaining <= 0:
            raise DeadlockError(
                f"rank {rank} exchange {epoch}: timed out waiting for {sorted(need)}"
            )
        try:
            m = inbox.get(timeout=min(remaining, 1.0))
        except queue_mod.Empty:
            continue
        key = (m.source, m.ghost_index)
        if m.epoch == epoch and key in need:
            got.append(m)
            need.discard(key)
        elif m.epoch > epoch:
            pending[(m.source, m.ghost_index, m.epoch)] = m
        else:
            raise RuntimeError(
                f"rank {rank} exchange {epoch}: stale message from round {m.epoch}"
            )
    return got


def _worker_main(ws: WorkerSpec, inboxes, result_q, timeout):
    try:
        with threadpool_limits(limits=1):
            w = RankWorker(ws)
            tc = ws.train_config
            pending = {}
            for e in range(tc.epochs):
                if e % tc.comm_interval == 0:
                    for m in w.outgoing_messages(e):
                        inboxes[m.dest].put(m)
                    msgs = _drain_round(
                        inboxes[ws.rank], w.expected_messages, ws.rank, e, pending, timeout
                    )
                    w.receive_messages(msgs, e)
                w.run_epoch(e)
        result_q.put(("ok", ws.rank, w.export()))
    except Exception:
        result_q.put(("error", ws.rank, traceback.format_exc()))


def _train_process(plan: TrainingPlan, timeout) -> TrainResult:
    t_start = time.perf_counter()
    ctx = mp.get_context("spawn")
    inboxes = {ws.rank: ctx.Queue() for ws in plan.worker_specs}
    result_q = ctx.Queue()
    procs = [
        ctx.Process(target=_worker_main, args=(ws, inboxes, result_q, timeout), daemon=True)
        for ws in plan.worker_specs
    ]
    for p in procs:
        p.start()
    exports = {}
    failures = {}
    try:
        for _ in range(len(procs)):
            status, rank, payload = result_q.get(timeout=max(timeout, 60.0) * 4)
            if status == "ok":
                exports[rank] = payload
            else:
                failures[rank] = payload
                break
    except queue_mod.Empty:
        failures["coordinator"] = "timed out waiting for rank results"
    finally:
        if failures:
            for p in procs:
                if p.is_alive():
                    p.terminate()
        for p in procs:
            p.join(timeout=30.0)
    if failures:
        detail = "\n".join(f"--- rank {r} ---\n{tb}" for r, tb in failures.items())
        raise RankFailure(f"training aborted; failing ranks:\n{detail}")
    return _collect_results(plan, exports, time.perf_counter() - t_start)


def _collect_results(plan, exports, wall):
    params = {}
    history = {}
    times = {}
    xlog = {}
    for ws in plan.worker_specs:
        ex = exports[ws.rank]
        params[ws.rank] = ExpertParams(
            plan.expert_config, np.asarray(ex["flat"]), seed=ex["param_seed"]
        )
        history[ws.rank] = np.asarray(ex["history"])
        times[ws.rank] = np.asarray(ex["epoch_times"])
        xlog[ws.rank] = ex["exchange_log"]
    return TrainResult(
        params=params, history=history, epoch_times=times, exchange_log=xlog,
        wall_time_s=wall,
    )


def train(plan: TrainingPlan, backend="serial", exchange_timeout=600.0) -> TrainResult:
    """Run the distributed training loop; deterministic per (plan, backend-independent)."""
    if backend == "serial":
        return _train_serial(plan)
    if backend == "process":
        return _train_process(plan, exchange_timeout)
    raise ValueError(f"unknown backend {backend!r} (use 'serial' or 'process')")


def _train_plan_entry(args):
    plan, backend, timeout = args
    return train(plan, backend=backend, exchange_timeout=timeout)


def train_many(plans, n_workers=1, backend="serial", exchange_timeout=600.0):
    """Train independent plans (e.g. one per seed), optionally in parallel
    processes; each plan runs its own (serial) training loop."""
    jobs = [(p, backend, exchange_timeout) for p in plans]
    if n_workers <= 1 or len(plans) == 1:
        return [_train_plan_entry(j) for j in jobs]
    from concurrent.futures import ProcessPoolExecutor

    ctx = mp.get_context("spawn")
    with ProcessPoolExecutor(max_workers=n_workers, mp_context=ctx) as pool:
        return list(pool.map(_train_plan_entry, jobs))


# -- run outputs -------------------------------------------------------------------

LOSS_CSV_HEADER = "epoch,loss_obs,loss_pde,loss_gh_u,loss_gh_p_space,loss_gh_p_time,lr"


def write_loss_history(path, rows):
    np.savetxt(
        path,
        np.asarray(rows),
        delimiter=",",
        header=LOSS_CSV_HEADER,
        comments="",
        fmt=["%d"] + ["%.17g"] * 6,
    )


def read_loss_history(path):
    return np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)


def content_hash(path):
    """Git-style blob hash of a file's contents."""
    data = open(path, "rb").read()
    h = hashlib.sha1()
    h.update(f"blob {len(data)}\0".encode())
    h.update(data)
    return h.hexdigest()


def write_run_manifest(path, config_echo, input_files=(), extra=None):
    manifest = {
        "config": config_echo,
        "inputs": {os.path.basename(p): content_hash(p) for p in input_files},
    }
    if extra:
        manifest.update(extra)
    with open(path, "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True, default=str)
        f.write("\n")
