"""Jet derivative correctness against finite differences of network values."""

import numpy as np
import pytest

from flowrec import autodiff as ad
from flowrec.network import ExpertConfig, init_params, predict

from oracles import fd_jet, rel_err


def make_params(arch, activation, seed):
    cfg = ExpertConfig(
        input_dim=arch[0],
        hidden_layers=len(arch) - 2,
        width=arch[1],
        activation=activation,
        output_dim=arch[-1],
    )
    return init_params(cfg, seed)


def jet_of(params, pts):
    tape = ad.build_jet_tape(params.config.arch, pts.shape[0], params.config.activation)
    return ad.forward_jet(tape, params, pts)


def test_linear_identity_layer_jet_exact():
    # single effective linear map: W = I, zero biases, tanh hidden disabled by
    # driving through the linear output layer only is not possible, so check
    # the exact contract on a hand-built identity: zero hidden weights keep
    # tanh in its linear regime only approximately; instead bind the output
    # affine directly via a jet tape over one affine+identity-free graph.
    arch = [2, 2, 2]
    p = make_params(arch, "tanh", seed=0)
    # zero everything, then wire layer 2 as identity: output = W2 @ tanh(W1 x)
    # with W1 = 0 gives constant output; the linear-map contract is cleaner on
    # the first layer pre-activation, so test via a pure-affine builder graph.
    from flowrec.autodiff.tape import TapeBuilder

    b = TapeBuilder(1, n_jet_inputs=2)
    b.tape.n_coords = 2
    x = b.add_input_points("points", 2)
    y = b.affine(x, 2, 2, b.stacked_rows(True), x_needs_adj=False)
    b.tape.output_id = y
    b.tape.n_outputs = 2
    tape = b.finish()
    tape.bind_params([np.eye(2), np.zeros(2)])
    tape.bind_inputs(points=np.array([[0.3, 0.7]]))
    tape.forward()
    jet = tape.jet()
    assert np.allclose(jet.value, [[0.3, 0.7]], atol=0)
    assert np.array_equal(jet.grad[0], np.eye(2))
    assert np.array_equal(jet.lap[0], np.zeros((2, 2)))


@pytest.mark.parametrize("activation", ["tanh", "sin"])
def test_jet_matches_finite_differences(activation):
    rng = np.random.default_rng(42)
    arch = [2, 16, 16, 3]
    p = make_params(arch, activation, seed=7)
    pts = rng.uniform(-1.0, 1.0, (50, 2))
    jet = jet_of(p, pts)
    g_fd, l_fd = fd_jet(lambda q: predict(p, q), pts, h=1e-4)
    assert rel_err(jet.grad, g_fd) <= 1e-5
    assert rel_err(jet.lap, l_fd) <= 1e-5


def test_sin_first_layer_periodicity():
    # integer frequencies forced by W = I, b = 0: first-layer activations
    # repeat after a 2*pi shift
    w1 = np.eye(2)
    b1 = np.zeros(2)
    x = np.array([[0.35, -1.2]])
    a1 = np.sin(x @ w1 + b1)
    a2 = np.sin((x + 2 * np.pi) @ w1 + b1)
    assert np.max(np.abs(a1 - a2)) <= 1e-12


def test_predict_equals_jet_value():
    rng = np.random.default_rng(3)
    for activation in ("tanh", "sin"):
        arch = [3, 24, 24, 4]
        p = make_params(arch, activation, seed=13)
        pts = rng.uniform(-1, 1, (11, 3))
        jet = jet_of(p, pts)
        assert np.max(np.abs(predict(p, pts) - jet.value)) <= 1e-15


def test_jet_dims():
    p = make_params([4, 8, 8, 4], "sin", seed=1)
    pts = np.random.default_rng(0).uniform(-1, 1, (6, 4))
    jet = jet_of(p, pts)
    assert jet.value.shape == (6, 4)
    assert jet.grad.shape == (6, 4, 4)
    assert jet.lap.shape == (6, 4, 4)
    assert jet.n_points == 6 and jet.n_outputs == 4 and jet.n_inputs == 4
