"""Residual formulas, loss terms, and the composite objective."""

import numpy as np
import pytest

from flowrec.autodiff.jet import Jet
from flowrec.network import ExpertConfig, init_params, predict_jet
from flowrec.physics import (
    FlowRegime,
    LossParts,
    LossWeights,
    compose_loss,
    loss_ghost_p,
    loss_ghost_u,
    loss_obs,
    loss_pde,
    ns_residuals,
)


def test_regime_validation():
    with pytest.raises(ValueError):
        FlowRegime("steady3d", 1.0)
    with pytest.raises(ValueError):
        FlowRegime("steady2d", 0.0)
    with pytest.raises(ValueError):
        FlowRegime("steady2d", -5.0)


def test_regime_layout():
    r2 = FlowRegime("unsteady2d", 10.0)
    assert r2.n_inputs == 3 and r2.n_outputs == 3
    assert r2.time_index == 0 and r2.space_indices == (1, 2)
    rs = FlowRegime("steady2d", 10.0)
    assert rs.n_inputs == 2 and rs.time_index is None and rs.space_indices == (0, 1)
    r3 = FlowRegime("unsteady3d", 10.0)
    assert r3.n_inputs == 4 and r3.n_outputs == 4 and r3.velocity_names == ("u", "v", "w")


def _zero_jet(n, n_out, n_in, p_const=0.0):
    value = np.zeros((n, n_out))
    value[:, -1] = p_const
    return Jet(value=value, grad=np.zeros((n, n_out, n_in)), lap=np.zeros((n, n_out, n_in)))


def test_zero_field_zero_residuals():
    regime = FlowRegime("unsteady2d", 100.0)
    jets = _zero_jet(8, 3, 3, p_const=3.7)
    r = ns_residuals(jets, regime)
    assert r.shape == (8, 3)
    assert np.all(r == 0.0)


def test_hand_computed_polynomial_field():
    # u = (x, -y), p = 0, steady 2D, Re = 1: continuity = 0, r1 = u*u_x = x
    regime = FlowRegime("steady2d", 1.0)
    xs = np.array([[0.5, 0.2], [0.1, -0.3], [2.0, 1.0]])
    n = xs.shape[0]
    value = np.zeros((n, 3))
    value[:, 0] = xs[:, 0]
    value[:, 1] = -xs[:, 1]
    grad = np.zeros((n, 3, 2))
    grad[:, 0, 0] = 1.0
    grad[:, 1, 1] = -1.0
    jets = Jet(value=value, grad=grad, lap=np.zeros((n, 3, 2)))
    r = ns_residuals(jets, regime)
    assert np.allclose(r[:, 2], 0.0)  # continuity: 1 - 1
    assert np.allclose(r[:, 0], xs[:, 0])  # r1 = x
    assert r[0, 0] == pytest.approx(0.5)
    assert np.allclose(r[:, 1], xs[:, 1])  # r2 = (-y)(-1) = y


def test_jet_regime_mismatch():
    regime = FlowRegime("unsteady3d", 10.0)
    with pytest.raises(ValueError, match="match"):
        ns_residuals(_zero_jet(4, 3, 3), regime)


def test_gauge_invariance_pressure_bias_shift():
    # shifting the p-output bias changes no residual entry (p enters only
    # through its derivatives)
    regime = FlowRegime("unsteady2d", 50.0)
    cfg = ExpertConfig.for_regime(regime, 3, 16, "tanh")
    p = init_params(cfg, 0)
    pts = np.random.default_rng(1).uniform(0, 1, (40, 3))
    r0 = ns_residuals(predict_jet(p, pts), regime)
    l0 = loss_pde(r0)
    for shift in (1.0, -3.5, 1e6):
        q = p.copy()
        q.layers[-1][1][regime.p_channel] += shift
        r1 = ns_residuals(predict_jet(q, pts), regime)
        assert np.max(np.abs(r1 - r0)) <= 1e-12
        assert abs(loss_pde(r1) - l0) <= 1e-12


def test_loss_obs_examples():
    assert loss_obs([[1.0, 2.0]], [[1.0, 2.0]]) == 0.0
    assert loss_obs([[1.0, 0.0]], [[0.0, 0.0]]) == 1.0
    # component weights (1, 5, 100) on a single-point error (0.1, 0.1, 0.01)
    val = loss_obs([[0.1, 0.1, 0.01]], [[0.0, 0.0, 0.0]], component_weights=(1, 5, 100))
    assert val == pytest.approx(0.07, abs=1e-15)


def test_loss_obs_empty_batch_is_error():
    with pytest.raises(ValueError, match="empty"):
        loss_obs(np.zeros((0, 2)), np.zeros((0, 2)))


def test_loss_obs_positivity_iff_mismatch():
    rng = np.random.default_rng(0)
    a = rng.normal(size=(30, 2))
    assert loss_obs(a, a) == 0.0
    b = a.copy()
    b[17, 1] += 1e-8
    assert loss_obs(a, b) > 0.0


def test_loss_pde_examples():
    assert loss_pde(np.zeros((5, 3))) == 0.0
    assert loss_pde(np.array([[1.0, 0.0, 0.0]])) == 1.0
    # two points with residual-norm-squares 0.2 and 0.4 -> mean 0.3
    r = np.array([[np.sqrt(0.2), 0.0], [np.sqrt(0.4), 0.0]])
    assert loss_pde(r) == pytest.approx(0.3, abs=1e-15)
    with pytest.raises(ValueError):
        loss_pde(np.zeros((0, 3)))


def test_loss_ghost_u_examples():
    own = np.array([[1.0, 0.0], [0.0, 0.0]])
    assert loss_ghost_u(own, own) == 0.0
    other = np.array([[0.0, 0.0], [0.0, 0.0]])
    assert loss_ghost_u(own, other) == 0.5  # one unit mismatch over two points
    # permutation invariance
    rng = np.random.default_rng(2)
    a = rng.normal(size=(20, 2))
    b = rng.normal(size=(20, 2))
    perm = rng.permutation(20)
    assert loss_ghost_u(a, b) == pytest.approx(loss_ghost_u(a[perm], b[perm]), rel=1e-14)


def test_loss_ghost_p_examples():
    a = np.array([1.0, 2.0, 3.0])
    assert loss_ghost_p(a, a) == 0.0
    assert loss_ghost_p(a + 0.7, a) == pytest.approx(0.49, abs=1e-15)
    assert loss_ghost_p(np.zeros(0), np.zeros(0)) == 0.0  # no temporal neighbors


def test_loss_weights_validation():
    with pytest.raises(ValueError):
        LossWeights(-1.0, 1.0, 1.0, 1.0, 1.0)
    with pytest.raises(ValueError):
        LossWeights(1.0, 1.0, 1.0, 1.0, 1.0, velocity=(1.0, -2.0))
    w = LossWeights(1.0, 2.0, 3.0, 4.0, 5.0)
    m = w.as_master()
    assert m.ghost_p_space == 0.0 and m.ghost_p_time == 5.0 and m.obs == 1.0


def test_compose_loss_reference_weights():
    # steady-cavity-class weights (10, 4, 1, 1)
    w = LossWeights(10.0, 4.0, 1.0, 1.0, 1.0)
    parts = LossParts(0.01, 0.02, 0.003, 0.001, 0.0)
    assert compose_loss(parts, w) == pytest.approx(0.184, abs=1e-15)


def test_compose_loss_master_ignores_spatial_ghost_pressure():
    w = LossWeights(10.0, 4.0, 1.0, 1.0, 1.0).as_master()
    base = LossParts(0.01, 0.02, 0.003, 0.5, 0.002)
    alt = LossParts(0.01, 0.02, 0.003, 123.456, 0.002)
    assert compose_loss(base, w) == compose_loss(alt, w)


def test_compose_loss_zero_parts():
    w = LossWeights(10.0, 4.0, 1.0, 1.0, 1.0)
    assert compose_loss(LossParts(), w) == 0.0


def test_compose_loss_linear_in_each_part():
    w = LossWeights(2.0, 3.0, 5.0, 7.0, 11.0)
    base = np.array([0.1, 0.2, 0.3, 0.4, 0.5])
    for i, coef in enumerate([2.0, 3.0, 5.0, 7.0, 11.0]):
        bumped = base.copy()
        bumped[i] += 1.0
        delta = compose_loss(tuple(bumped), w) - compose_loss(tuple(base), w)
        assert delta == pytest.approx(coef, rel=1e-12)


def test_divergence_free_oracle_continuity():
    from flowrec.benchmarks import get_solution

    for name in ("kovasznay", "taylor_green", "beltrami"):
        sol = get_solution(name)
        rng = np.random.default_rng(11)
        cols = []
        if sol.time_interval is not None:
            cols.append(rng.uniform(*sol.time_interval, size=500))
        for lo, hi in sol.spatial_box:
            cols.append(rng.uniform(lo, hi, size=500))
        pts = np.stack(cols, axis=1)
        r = ns_residuals(sol.evaluate(pts), sol.regime)
        assert np.max(np.abs(r[:, -1])) <= 1e-12
