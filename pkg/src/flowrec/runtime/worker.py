"""Rank worker: one local expert, its optimizer, and the ghost-message protocol.

A worker never shares mutable state; it produces outgoing ghost messages by
evaluating its current expert at neighbors' ghost points, and consumes incoming
messages into an immutable value cache that the ghost losses train against.
Master ranks (anchor owners) broadcast anchor-normalized pressure; velocity is
never normalized.
"""

import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..autodiff import build_value_tape
from ..decomposition import RankDatasets, SubdomainSpec
from ..network import ExpertConfig, ExpertParams, init_params
from ..physics import FlowRegime, LossWeights, compose_loss
from .objective import LocalObjective
from .optim import AdamState, adam_step, lr_at


def anchor_normalize(p_values, p_at_anchor, times=None):
    """Subtract the instantaneous anchor pressure: out[i] = p[i] - p_anc(t_i).

    `p_at_anchor` may be a scalar (steady case), an array aligned with
    `p_values`, or a mapping time -> anchor pressure (then `times` is required
    and a missing time raises).
    """
    p = np.asarray(p_values, dtype=np.float64)
    if isinstance(p_at_anchor, dict):
        if times is None:
            raise ValueError("anchor pressure given per time requires the times array")
        times = np.asarray(times, dtype=np.float64)
        if times.shape != p.shape:
            raise ValueError("times must align with p_values")
        try:
            anc = np.array([p_at_anchor[float(t)] for t in times])
        except KeyError as e:
            raise ValueError(f"missing anchor evaluation for time coordinate {e.args[0]}") from None
    else:
        anc = np.asarray(p_at_anchor, dtype=np.float64)
        if anc.ndim > 0 and anc.shape != p.shape:
            raise ValueError(f"anchor pressure shape {anc.shape} does not match {p.shape}")
    return p - anc


@dataclass(frozen=True)
class TrainConfig:
    epochs: int
    batch_size: int
    learning_rate: float
    weights: LossWeights
    anchor: tuple
    lr_factor: float = 1.0
    lr_interval: int = 1
    comm_interval: int = 1
    clip_norm: Optional[float] = None
    seed: int = 0
    pressure_coupling: str = "anchored_master"  # or "symmetric" (no anchor, no roles)

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.comm_interval < 1:
            raise ValueError("communication interval must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch size must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning rate must be positive")
        if self.lr_interval < 1:
            raise ValueError("lr decay interval must be >= 1")
        if self.pressure_coupling not in ("anchored_master", "symmetric"):
            raise ValueError(f"unknown pressure coupling {self.pressure_coupling!r}")
        object.__setattr__(self, "anchor", tuple(float(a) for a in self.anchor))

    def lr(self, epoch):
        return lr_at(epoch, self.learning_rate, self.lr_factor, self.lr_interval)


@dataclass(frozen=True)
class OutgoingEdge:
    """A neighbor's ghost points that this rank must evaluate and send."""

    dest: int
    ghost_index: int  # position in the destination's ghost list
    kind: str
    points: np.ndarray


@dataclass(frozen=True)
class GhostMessage:
    source: int
    dest: int
    ghost_index: int
    kind: str
    epoch: int
    points: np.ndarray
    u: np.ndarray
    p: np.ndarray
    normalized: bool


@dataclass(frozen=True)
class WorkerSpec:
    rank: int
    role: str  # "master" | "slave"
    spec: SubdomainSpec
    regime: FlowRegime
    expert_config: ExpertConfig
    train_config: TrainConfig
    datasets: RankDatasets
    effective_weights: LossWeights
    outgoing: tuple
    param_seed: int
    normalize_outgoing: bool


def derive_param_seed(global_seed, rank_index):
    ss = np.random.SeedSequence([int(global_seed), int(rank_index), 7])
    return int(ss.generate_state(1, dtype=np.uint64)[0] % (2**63))


class RankWorker:
    """Executable rank state; driven by a serial loop or a worker process."""

    def __init__(self, ws: WorkerSpec):
        self.ws = ws
        self.rank = ws.rank
        self.role = ws.role
        cfg = ws.expert_config
        tc = ws.train_config
        self.params = init_params(cfg, ws.param_seed)
        self.objective = LocalObjective(
            cfg, ws.regime, ws.datasets, ws.effective_weights, tc.batch_size
        )
        self.adam = AdamState.zeros(cfg.n_params)
        self._grad = np.zeros(cfg.n_params)
        self._shuffle_rng = np.random.Generator(
            np.random.PCG64(np.random.SeedSequence([tc.seed, ws.rank, 11]))
        )
        self._out_tapes = []
        self._anchor_points = []
        for edge in ws.outgoing:
            n = edge.points.shape[0]
            t = build_value_tape(cfg.arch, n, activation=cfg.activation)
            t.bind_inputs(points=edge.points)
            if ws.normalize_outgoing:
                anc = np.tile(np.asarray(tc.anchor), (n, 1))
                if ws.regime.has_time:
                    anc = np.column_stack([edge.points[:, 0], anc])
                at = build_value_tape(cfg.arch, n, activation=cfg.activation)
                at.bind_inputs(points=anc)
            else:
                at = None
            self._out_tapes.append(t)
            self._anchor_points.append(at)
        self.caches = [None] * len(ws.datasets.ghosts)
        self.history = []
        self.epoch_times = []
        self.exchange_log = []

    # -- protocol ---------------------------------------------------------
    @property
    def expected_messages(self):
        """(source, ghost_index) keys this rank must receive per exchange."""
        return [(g.neighbor, gi) for gi, g in enumerate(self.ws.datasets.ghosts)]

    def outgoing_messages(self, epoch):
        """Evaluate each neighbor's ghost points with the current expert."""
        msgs = []
        nv = self.ws.regime.n_vel
        pch = self.ws.regime.p_channel
        for edge, tape, anchor_tape in zip(self.ws.outgoing, self._out_tapes, self._anchor_points):
            tape.bind_params(self.params.tape_arrays())
            tape.forward()
            out = tape.output_values()
            u = out[:, :nv]
            p = out[:, pch]
            if anchor_tape is not None:
                anchor_tape.bind_params(self.params.tape_arrays())
                anchor_tape.forward()
                p = anchor_normalize(p, anchor_tape.output_values()[:, pch])
            msgs.append(
                GhostMessage(
                    source=self.rank,
                    dest=edge.dest,
                    ghost_index=edge.ghost_index,
                    kind=edge.kind,
                    epoch=epoch,
                    points=edge.points,
                    u=u,
                    p=p,
                    normalized=anchor_tape is not None,
                )
            )
        return msgs

    def receive_messages(self, msgs, epoch):
        """Install one exchange round's messages as the new neighbor cache.

        All expected interfaces must be present and tagged with this epoch;
        the cache is replaced atomically only after validation.
        """
        got = {}
        for m in msgs:
            if m.dest != self.rank:
                raise ValueError(f"rank {self.rank} received a message for rank {m.dest}")
            if m.epoch != epoch:
                raise ValueError(
                    f"rank {self.rank} got an epoch-{m.epoch} message during exchange {epoch}"
                )
            got[(m.source, m.ghost_index)] = m
        missing = [k for k in self.expected_messages if k not in got]
        if missing:
            raise RuntimeError(
                f"rank {self.rank} exchange {epoch} missing messages from {missing}"
            )
        new_cache = [None] * len(self.caches)
        for (src, gi), m in got.items():
            g = self.ws.datasets.ghosts[gi]
            if m.u.shape != (g.points.shape[0], self.ws.regime.n_vel):
                raise ValueError("ghost message velocity shape mismatch")
            new_cache[gi] = (m.u, m.p)
        self.caches = new_cache
        self.objective.set_ghost_targets(self.caches)
        self.exchange_log.append((epoch, sorted(got)))

    # -- training ------------------------------------------------------------
    def run_epoch(self, epoch):
        t0 = time.perf_counter()
        lr = self.ws.train_config.lr(epoch)
        self._grad[:] = 0.0
        parts, grad, total = self.objective.epoch(self.params, self._shuffle_rng, self._grad)
        adam_step(
            self.params.flat, grad, self.adam, lr,
            clip_norm=self.ws.train_config.clip_norm,
        )
        self.epoch_times.append(time.perf_counter() - t0)
        row = (float(epoch), parts.obs, parts.pde, parts.ghost_u,
               parts.ghost_p_space, parts.ghost_p_time, lr)
        self.history.append(row)
        return parts, total

    def export(self):
        return {
            "flat": self.params.flat,
            "param_seed": self.ws.param_seed,
            "history": np.array(self.history),
            "epoch_times": np.array(self.epoch_times),
            "exchange_log": self.exchange_log,
        }
