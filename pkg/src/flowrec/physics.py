"""Incompressible Navier-Stokes residuals and the composite training objective.

Everything is nondimensional.  The residual term table produced by
`residual_structure` is consumed both by the eager evaluator here and by the
tape builder, so the two execution routes share one formula definition.
"""

from dataclasses import dataclass, field

import numpy as np

from .autodiff.jet import Jet

_KINDS = ("steady2d", "unsteady2d", "unsteady3d")


@dataclass(frozen=True)
class FlowRegime:
    """Flow classification: dimensionality, steadiness, Reynolds number."""

    kind: str
    reynolds: float

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError(f"unknown regime kind {self.kind!r} (use one of {_KINDS})")
        if not self.reynolds > 0:
            raise ValueError(f"Reynolds number must be positive, got {self.reynolds}")

    @property
    def has_time(self):
        return self.kind != "steady2d"

    @property
    def n_space(self):
        return 3 if self.kind == "unsteady3d" else 2

    @property
    def n_vel(self):
        return self.n_space

    @property
    def n_inputs(self):
        # input layout: (t,)x,y[,z] with t only for unsteady regimes
        return self.n_space + (1 if self.has_time else 0)

    @property
    def n_outputs(self):
        # velocity components plus pressure
        return self.n_vel + 1

    @property
    def time_index(self):
        return 0 if self.has_time else None

    @property
    def space_indices(self):
        off = 1 if self.has_time else 0
        return tuple(range(off, off + self.n_space))

    @property
    def p_channel(self):
        return self.n_vel

    @property
    def velocity_names(self):
        return ("u", "v", "w")[: self.n_vel]


def residual_structure(regime: FlowRegime):
    """Term table for the momentum and continuity residuals.

    Returns one entry per residual component (momentum components first,
    continuity last) with
      linear: (coef, entry_kind, out_channel, in_index) meaning
              coef * jet[entry_kind][out_channel, in_index]
      conv:   (coef, vel_channel, out_channel, in_index) meaning
              coef * value[vel_channel] * grad[out_channel, in_index]
    """
    inv_re = 1.0 / regime.reynolds
    sp = regime.space_indices
    p = regime.p_channel
    comps = []
    for i in range(regime.n_vel):
        linear = []
        if regime.has_time:
            linear.append((1.0, "grad", i, regime.time_index))
        linear.append((1.0, "grad", p, sp[i]))
        linear.extend((-inv_re, "lap", i, j) for j in sp)
        conv = [(1.0, k, i, sp[k]) for k in range(regime.n_vel)]
        comps.append({"linear": linear, "conv": conv})
    comps.append({"linear": [(1.0, "grad", k, sp[k]) for k in range(regime.n_vel)], "conv": []})
    return comps


def ns_residuals(jets: Jet, regime: FlowRegime):
    """Momentum + continuity residuals per point, shape (n, n_vel + 1)."""
    if jets.n_inputs != regime.n_inputs or jets.n_outputs != regime.n_outputs:
        raise ValueError(
            f"jet dims (in={jets.n_inputs}, out={jets.n_outputs}) do not match "
            f"regime {regime.kind} (in={regime.n_inputs}, out={regime.n_outputs})"
        )
    entry = {"val": lambda c, j: jets.value[:, c], "grad": lambda c, j: jets.grad[:, c, j],
             "lap": lambda c, j: jets.lap[:, c, j]}
    structure = residual_structure(regime)
    out = np.zeros((jets.n_points, len(structure)))
    for i, comp in enumerate(structure):
        acc = out[:, i]
        for coef, kind, c, j in comp["linear"]:
            acc += coef * entry[kind](c, j)
        for coef, a_c, b_c, j in comp["conv"]:
            acc += coef * jets.value[:, a_c] * jets.grad[:, b_c, j]
    return out


def _weighted_sq_err(pred, target, component_weights):
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {target.shape}")
    d = pred - target
    if component_weights is None:
        return np.sum(d * d, axis=1)
    w = np.asarray(component_weights, dtype=np.float64)
    if w.shape != (pred.shape[1],):
        raise ValueError(f"need one weight per component, got {w.shape}")
    return np.sum(w * d * d, axis=1)


def loss_obs(pred_vel, obs_vel, component_weights=None):
    """Mean component-weighted squared velocity error over the batch."""
    pred_vel = np.atleast_2d(pred_vel)
    if pred_vel.shape[0] == 0:
        raise ValueError("observation loss over an empty batch is undefined")
    return float(np.mean(_weighted_sq_err(pred_vel, np.atleast_2d(obs_vel), component_weights)))


def loss_pde(residuals):
    """Mean squared residual norm (all momentum + continuity components)."""
    r = np.atleast_2d(residuals)
    if r.shape[0] == 0:
        raise ValueError("residual loss over an empty batch is undefined")
    return float(np.mean(np.sum(r * r, axis=1)))


def loss_ghost_u(pred_vel, cached_nbr_vel, component_weights=None):
    """Velocity consistency against cached neighbor values on ghost points."""
    return loss_obs(pred_vel, cached_nbr_vel, component_weights)


def loss_ghost_p(pred_p, cached_nbr_p):
    """Mean squared pressure mismatch; an empty subset contributes zero
    (a rank may legitimately have no temporal neighbors)."""
    pred_p = np.asarray(pred_p, dtype=np.float64).ravel()
    cached = np.asarray(cached_nbr_p, dtype=np.float64).ravel()
    if pred_p.shape != cached.shape:
        raise ValueError(f"shape mismatch: {pred_p.shape} vs {cached.shape}")
    if pred_p.size == 0:
        return 0.0
    d = pred_p - cached
    return float(np.mean(d * d))


@dataclass(frozen=True)
class LossWeights:
    """Weights of the composite objective.  `velocity` optionally weights the
    individual velocity components inside the observation and ghost-velocity
    terms (defaults to uniform)."""

    obs: float
    pde: float
    ghost_u: float
    ghost_p_space: float
    ghost_p_time: float
    velocity: tuple = None

    def __post_init__(self):
        for name in ("obs", "pde", "ghost_u", "ghost_p_space", "ghost_p_time"):
            v = getattr(self, name)
            if v < 0:
                raise ValueError(f"loss weight {name} must be nonnegative, got {v}")
        if self.velocity is not None:
            object.__setattr__(self, "velocity", tuple(float(w) for w in self.velocity))
            if any(w < 0 for w in self.velocity):
                raise ValueError("velocity component weights must be nonnegative")

    def as_master(self):
        """Effective weights on a rank that owns the anchor: the spatial ghost
        pressure term is disabled so the rank acts as a one-way gauge reference."""
        return LossWeights(
            obs=self.obs,
            pde=self.pde,
            ghost_u=self.ghost_u,
            ghost_p_space=0.0,
            ghost_p_time=self.ghost_p_time,
            velocity=self.velocity,
        )


@dataclass(frozen=True)
class LossParts:
    """The five unweighted loss components of one rank."""

    obs: float = 0.0
    pde: float = 0.0
    ghost_u: float = 0.0
    ghost_p_space: float = 0.0
    ghost_p_time: float = 0.0

    def astuple(self):
        return (self.obs, self.pde, self.ghost_u, self.ghost_p_space, self.ghost_p_time)


def compose_loss(parts, weights: LossWeights):
    """Weighted sum of the five loss components."""
    if not isinstance(parts, LossParts):
        parts = LossParts(*parts)
    return (
        weights.obs * parts.obs
        + weights.pde * parts.pde
        + weights.ghost_u * parts.ghost_u
        + weights.ghost_p_space * parts.ghost_p_space
        + weights.ghost_p_time * parts.ghost_p_time
    )
