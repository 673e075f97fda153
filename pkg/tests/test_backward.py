"""Parameter gradients of tape losses against high-precision finite
differences of an independent eager implementation."""

import numpy as np
import pytest

from flowrec import autodiff as ad
from flowrec.network import ExpertConfig, ExpertParams, init_params
from flowrec.physics import FlowRegime, LossWeights, residual_structure
from flowrec.runtime import LocalObjective
from flowrec.decomposition import GhostSet, RankDatasets

from oracles import eager_composite_loss, fd_param_gradient


def test_pde_tape_gradient_matches_fd():
    regime = FlowRegime("unsteady2d", 80.0)
    cfg = ExpertConfig.for_regime(regime, hidden_layers=2, width=8, activation="tanh")
    p = init_params(cfg, 5)
    rng = np.random.default_rng(0)
    pts = rng.uniform(0, 1, (9, 3))
    tape = ad.build_tape(cfg.arch, 9, "jet+loss", regime=regime)
    tape.bind_params(p.tape_arrays())
    tape.bind_inputs(points=pts)
    tape.forward()
    g = tape.backward()

    w = LossWeights(0.0, 1.0, 0.0, 0.0, 0.0)
    loss_fn = lambda flat: eager_composite_loss(
        flat, cfg.arch, "tanh", regime, w, {"colloc": pts}
    )
    # the tape loss is the plain residual mean (coef 1/batch) and the eager
    # composite with pde weight 1 matches that definition
    fd = fd_param_gradient(loss_fn, p.flat, h=1e-6)
    denom = np.maximum(np.maximum(np.abs(fd), np.abs(g)), 1e-6)
    assert np.max(np.abs(fd - g) / denom) <= 1e-7


def make_composite(regime, cfg, seed, weights, n_obs=20, n_col=30, n_ghost=10):
    """A full LocalObjective over synthetic datasets plus the matching eager data."""
    rng = np.random.default_rng(seed)
    d = regime.n_inputs
    nv = regime.n_vel
    obs_pts = rng.uniform(0, 1, (n_obs, d))
    obs_vel = rng.normal(size=(n_obs, nv))
    col_pts = rng.uniform(0, 1, (n_col, d))
    gh_pts = rng.uniform(0, 1, (n_ghost, d))
    gh_u = rng.normal(size=(n_ghost, nv))
    gh_p = rng.normal(size=n_ghost)
    datasets = RankDatasets(
        obs_points=obs_pts,
        obs_velocity=obs_vel,
        colloc_points=col_pts,
        ghosts=(GhostSet(neighbor=1, kind="spatial", points=gh_pts),),
    )
    obj = LocalObjective(cfg, regime, datasets, weights, batch_size=64)
    obj.set_ghost_targets([(gh_u, gh_p)])
    data = {
        "obs": (obs_pts, obs_vel),
        "colloc": col_pts,
        "ghost_spatial": (gh_pts, gh_u, gh_p),
    }
    return obj, data


def test_composite_gradient_matches_fd():
    regime = FlowRegime("unsteady2d", 40.0)
    cfg = ExpertConfig.for_regime(regime, hidden_layers=2, width=8, activation="tanh")
    p = init_params(cfg, 1)
    weights = LossWeights(10.0, 4.0, 1.0, 1.0, 1.0)
    obj, data = make_composite(regime, cfg, seed=3, weights=weights)
    rng = np.random.default_rng(9)
    parts, grad, total = obj.epoch(p, rng)
    loss_fn = lambda flat: eager_composite_loss(flat, cfg.arch, "tanh", regime, weights, data)
    assert abs(float(loss_fn(p.flat.astype(np.longdouble))) - total) < 1e-12
    fd = fd_param_gradient(loss_fn, p.flat, h=1e-6)
    denom = np.maximum(np.maximum(np.abs(fd), np.abs(grad)), 1e-6)
    assert np.max(np.abs(fd - grad) / denom) <= 1e-7


def test_gradient_accumulation_is_batch_invariant():
    regime = FlowRegime("unsteady2d", 40.0)
    cfg = ExpertConfig.for_regime(regime, hidden_layers=2, width=8, activation="sin")
    p = init_params(cfg, 2)
    weights = LossWeights(10.0, 4.0, 1.0, 1.0, 1.0)
    obj_full, _ = make_composite(regime, cfg, seed=3, weights=weights, n_obs=16, n_col=32)
    obj_half, _ = make_composite(regime, cfg, seed=3, weights=weights, n_obs=16, n_col=32)
    obj_half.batch = 16  # two accumulated micro-batches over the collocation set
    g_full = obj_full.epoch(p, np.random.default_rng(0))[1]
    g_half = obj_half.epoch(p, np.random.default_rng(0))[1]
    scale = max(np.max(np.abs(g_full)), 1.0)
    assert np.max(np.abs(g_full - g_half)) / scale <= 1e-12
