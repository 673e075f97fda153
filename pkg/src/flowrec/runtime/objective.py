"""Per-rank composite objective over static tapes.

One epoch is a full pass over every local dataset in seeded-shuffled
mini-batches with gradient accumulation, so the result equals the gradient of

    w.obs * L_obs + w.pde * L_pde + w.ghost_u * L_gh_u
    + w.ghost_p_space * L_gh_p_space + w.ghost_p_time * L_gh_p_time

with every L a full-dataset mean.  The per-dataset weight/size coefficients
are folded into the tape loss nodes, so per-batch backward passes accumulate
exactly the weighted full-dataset gradient.
"""

import numpy as np

from ..autodiff import build_mse_tape, build_pde_tape
from ..decomposition import RankDatasets
from ..network import ExpertConfig
from ..physics import FlowRegime, LossParts, LossWeights, compose_loss, residual_structure


def _chunks(n, batch):
    sizes = [batch] * (n // batch)
    if n % batch:
        sizes.append(n % batch)
    return sizes


class _MiniBatched:
    """One dataset (points + optional targets) with per-size tape cache."""

    def __init__(self, points, make_tape, targets=None):
        self.points = points
        self.targets = targets or {}
        self.n = points.shape[0]
        self._tapes = {}
        self._make = make_tape

    def tape_for(self, size):
        t = self._tapes.get(size)
        if t is None:
            t = self._make(size)
            self._tapes[size] = t
        return t

    def run(self, param_arrays, batch, rng, grad_out, scalar_names):
        """Forward+backward over all mini-batches; returns summed scalars."""
        order = rng.permutation(self.n)
        sums = dict.fromkeys(scalar_names, 0.0)
        pos = 0
        for size in _chunks(self.n, batch):
            idx = order[pos : pos + size]
            pos += size
            tape = self.tape_for(size)
            tape.bind_params(param_arrays)
            binds = {"points": self.points[idx]}
            for slot, arr in self.targets.items():
                binds[slot] = arr[idx]
            tape.bind_inputs(**binds)
            tape.forward()
            for name in scalar_names:
                sums[name] += tape.scalar(name)
            tape.backward(seed=1.0, out=grad_out)
        return sums


class LocalObjective:
    """Composite loss + gradient for one rank's expert.

    Ghost targets start unset; call set_ghost_targets after every exchange.
    A rank with no ghost data simply has no ghost terms.
    """

    def __init__(self, config: ExpertConfig, regime: FlowRegime,
                 datasets: RankDatasets, weights: LossWeights, batch_size):
        if batch_size < 1:
            raise ValueError("batch size must be >= 1")
        self.config = config
        self.regime = regime
        self.weights = weights
        self.batch = int(batch_size)
        arch = config.arch
        act = config.activation
        nv = regime.n_vel
        self.n_obs = datasets.n_obs
        self.n_colloc = datasets.n_colloc
        if self.n_obs == 0 and weights.obs > 0:
            raise ValueError(
                "observation dataset is empty but the observation weight is positive"
            )
        if self.n_colloc == 0:
            raise ValueError("collocation dataset is empty")

        self._obs = None
        if self.n_obs:
            coef = weights.obs / self.n_obs
            self._obs = _MiniBatched(
                datasets.obs_points,
                lambda b, c=coef: build_mse_tape(
                    arch, b, act, n_vel=nv, vel_weights=weights.velocity, vel_coef=c
                ),
                targets={"target_u": datasets.obs_velocity},
            )

        self._pde = _MiniBatched(
            datasets.colloc_points,
            lambda b: build_pde_tape(
                arch, b, act, residual_structure(regime),
                coef=weights.pde / self.n_colloc,
            ),
        )

        # ghost sets: velocity consistency is normalized over the union of all
        # ghost points; pressure consistency is normalized per interface kind
        self._ghost = {}
        self._ghost_sets = {"spatial": [], "temporal": []}
        for gi, g in enumerate(datasets.ghosts):
            self._ghost_sets[g.kind].append((gi, g))
        counts = {k: sum(g.points.shape[0] for _, g in v) for k, v in self._ghost_sets.items()}
        self.n_ghost_total = counts["spatial"] + counts["temporal"]
        self.n_ghost = counts
        for kind in ("spatial", "temporal"):
            if counts[kind] == 0:
                continue
            pts = np.vstack([g.points for _, g in self._ghost_sets[kind]])
            p_w = weights.ghost_p_space if kind == "spatial" else weights.ghost_p_time
            vel_coef = weights.ghost_u / self.n_ghost_total
            p_coef = p_w / counts[kind]
            targets = {
                "target_u": np.zeros((counts[kind], nv)),
                "target_p": np.zeros(counts[kind]),
            }
            self._ghost[kind] = _MiniBatched(
                pts,
                lambda b, vc=vel_coef, pc=p_coef: build_mse_tape(
                    arch, b, act, n_vel=nv, vel_weights=weights.velocity,
                    vel_coef=vc, p_coef=pc, p_channel=regime.p_channel,
                ),
                targets=targets,
            )
        self._targets_set = {k: False for k in self._ghost}
        self.n_params = config.n_params

    def set_ghost_targets(self, values):
        """values: list aligned with datasets.ghosts of (u (g, n_vel), p (g,))."""
        for kind in ("spatial", "temporal"):
            sets = self._ghost_sets[kind]
            if not sets:
                continue
            tgt = self._ghost[kind].targets
            off = 0
            for gi, g in sets:
                u, p = values[gi]
                n = g.points.shape[0]
                u = np.asarray(u, dtype=np.float64)
                p = np.asarray(p, dtype=np.float64)
                if u.shape != (n, self.regime.n_vel) or p.shape != (n,):
                    raise ValueError("ghost target shape mismatch")
                tgt["target_u"][off : off + n] = u
                tgt["target_p"][off : off + n] = p
                off += n
            self._targets_set[kind] = True

    def epoch(self, params, rng, grad_out=None):
        """One full accumulation pass; returns (LossParts, grad, total)."""
        if grad_out is None:
            grad_out = np.zeros(self.n_params)
        arrays = params.tape_arrays()
        obs_sum = 0.0
        if self._obs is not None:
            obs_sum = self._obs.run(arrays, self.batch, rng, grad_out, ("sq_u",))["sq_u"]
        pde_sum = self._pde.run(arrays, self.batch, rng, grad_out, ("sq_pde",))["sq_pde"]
        gh_u_sum = 0.0
        gh_p = {"spatial": 0.0, "temporal": 0.0}
        for kind, ds in self._ghost.items():
            if not self._targets_set[kind]:
                raise RuntimeError(
                    f"{kind} ghost targets were never set; run an exchange first"
                )
            sums = ds.run(arrays, self.batch, rng, grad_out, ("sq_u", "sq_p"))
            gh_u_sum += sums["sq_u"]
            gh_p[kind] = sums["sq_p"]
        parts = LossParts(
            obs=obs_sum / self.n_obs if self.n_obs else 0.0,
            pde=pde_sum / self.n_colloc,
            ghost_u=gh_u_sum / self.n_ghost_total if self.n_ghost_total else 0.0,
            ghost_p_space=gh_p["spatial"] / self.n_ghost["spatial"]
            if self.n_ghost["spatial"] else 0.0,
            ghost_p_time=gh_p["temporal"] / self.n_ghost["temporal"]
            if self.n_ghost["temporal"] else 0.0,
        )
        total = compose_loss(parts, self.weights)
        if not np.isfinite(total):
            raise FloatingPointError(
                f"non-finite training loss: obs={parts.obs} pde={parts.pde} "
                f"ghost_u={parts.ghost_u} ghost_p_space={parts.ghost_p_space} "
                f"ghost_p_time={parts.ghost_p_time}"
            )
        return parts, grad_out, total
