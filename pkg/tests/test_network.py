"""Expert configuration, initialization, prediction, checkpoint format."""

import numpy as np
import pytest

from flowrec.network import (
    ExpertConfig,
    ExpertParams,
    init_params,
    load_checkpoint,
    predict,
    predict_jet,
    save_checkpoint,
)
from flowrec.physics import FlowRegime


def test_config_validation():
    with pytest.raises(ValueError):
        ExpertConfig(2, 0, 8, "tanh", 3)
    with pytest.raises(ValueError):
        ExpertConfig(2, 2, 0, "tanh", 3)
    with pytest.raises(ValueError):
        ExpertConfig(2, 2, 8, "relu", 3)
    with pytest.raises(ValueError):
        ExpertConfig(2, 2, 8, "tanh", 3, omega0=0.0)


def test_config_for_regime_dims():
    assert ExpertConfig.for_regime(FlowRegime("steady2d", 1.0), 2, 8, "tanh").arch[0] == 2
    assert ExpertConfig.for_regime(FlowRegime("steady2d", 1.0), 2, 8, "tanh").arch[-1] == 3
    assert ExpertConfig.for_regime(FlowRegime("unsteady2d", 1.0), 2, 8, "tanh").arch[0] == 3
    cfg3 = ExpertConfig.for_regime(FlowRegime("unsteady3d", 1.0), 2, 8, "sin")
    assert cfg3.arch[0] == 4 and cfg3.arch[-1] == 4


def test_init_deterministic_per_seed():
    cfg = ExpertConfig(3, 2, 16, "tanh", 3)
    a = init_params(cfg, 42)
    b = init_params(cfg, 42)
    assert np.array_equal(a.flat, b.flat)
    assert a.flat.tobytes() == b.flat.tobytes()


def test_init_seed_sensitivity():
    cfg = ExpertConfig(3, 2, 16, "tanh", 3)
    assert np.any(init_params(cfg, 0).flat != init_params(cfg, 1).flat)


def test_negative_seed_rejected():
    with pytest.raises(ValueError):
        init_params(ExpertConfig(2, 1, 4, "tanh", 3), -1)


def test_param_count_3d_architecture():
    # [4, 200 x 8, 4]: 4*200+200 + 7*(200*200+200) + 200*4+4 = 283,204
    cfg = ExpertConfig(4, 8, 200, "sin", 4)
    expected = 4 * 200 + 200 + 7 * (200 * 200 + 200) + 200 * 4 + 4
    assert expected == 283204
    assert cfg.n_params == expected
    assert init_params(cfg, 0).flat.size == expected


@pytest.mark.parametrize("arch", [(2, 1, 8, 3), (3, 3, 10, 4), (4, 2, 5, 4)])
def test_param_count_formula(arch):
    d_in, hidden, width, d_out = arch
    cfg = ExpertConfig(d_in, hidden, width, "tanh", d_out)
    sizes = cfg.arch
    expected = sum(a * b + b for a, b in zip(sizes[:-1], sizes[1:]))
    assert cfg.n_params == expected


def test_biases_zero_weights_glorot_bounded():
    cfg = ExpertConfig(3, 2, 16, "tanh", 3)
    p = init_params(cfg, 0)
    for (w, b), (fan_in, fan_out) in zip(p.layers, zip(cfg.arch[:-1], cfg.arch[1:])):
        assert np.all(b == 0.0)
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        assert np.max(np.abs(w)) <= limit


def test_zero_weight_network_outputs_final_bias():
    cfg = ExpertConfig(2, 2, 8, "tanh", 3)
    p = init_params(cfg, 0)
    p.flat[:] = 0.0
    w_out, b_out = p.layers[-1]
    b_out[:] = [1.5, -2.0, 0.25]
    pts = np.random.default_rng(0).uniform(-1, 1, (20, 2))
    out = predict(p, pts)
    assert np.array_equal(out, np.tile([1.5, -2.0, 0.25], (20, 1)))


def test_predict_batch_invariance():
    cfg = ExpertConfig(3, 2, 12, "sin", 3)
    p = init_params(cfg, 4)
    pt = np.array([0.3, -0.2, 0.9])
    single = predict(p, pt)
    batch = predict(p, np.tile(pt, (100, 1)))
    # identical rows within one batch; across batch shapes the BLAS kernel
    # may differ in the last ulp, so require <= 1e-15
    assert np.all(batch == batch[0])
    assert np.max(np.abs(batch - single)) <= 1e-15


def test_predict_dimension_mismatch():
    cfg = ExpertConfig(3, 2, 12, "sin", 3)
    p = init_params(cfg, 4)
    with pytest.raises(ValueError, match="coordinates"):
        predict(p, np.zeros((5, 2)))


def test_predict_jet_matches_predict():
    cfg = ExpertConfig(2, 2, 10, "tanh", 3)
    p = init_params(cfg, 8)
    pts = np.random.default_rng(1).uniform(-1, 1, (7, 2))
    jet = predict_jet(p, pts)
    assert np.max(np.abs(jet.value - predict(p, pts))) <= 1e-15


def test_omega0_scales_first_layer():
    base = ExpertConfig(2, 2, 8, "sin", 3, omega0=1.0)
    scaled = ExpertConfig(2, 2, 8, "sin", 3, omega0=30.0)
    p1 = init_params(base, 0)
    p2 = init_params(scaled, 0)
    w1, _ = p1.layers[0]
    w2, _ = p2.layers[0]
    assert np.allclose(w2, 30.0 * w1)
    # remaining layers unchanged
    assert np.array_equal(p1.layers[1][0], p2.layers[1][0])


def test_checkpoint_roundtrip_bit_exact(tmp_path):
    cfg = ExpertConfig(3, 3, 14, "sin", 3, omega0=2.5)
    p = init_params(cfg, 123)
    path = tmp_path / "expert.ckpt"
    save_checkpoint(path, p)
    q = load_checkpoint(path)
    assert q.config == cfg
    assert q.seed == 123
    assert q.flat.tobytes() == p.flat.tobytes()
    # write again: byte-identical file
    path2 = tmp_path / "expert2.ckpt"
    save_checkpoint(path2, q)
    assert path.read_bytes() == path2.read_bytes()


def test_checkpoint_rejects_garbage(tmp_path):
    path = tmp_path / "bad.ckpt"
    path.write_bytes(b"not a checkpoint at all, far too short to parse")
    with pytest.raises(ValueError):
        load_checkpoint(path)


def test_expert_params_pickle_preserves_views():
    import pickle

    cfg = ExpertConfig(2, 1, 4, "tanh", 3)
    p = init_params(cfg, 0)
    q = pickle.loads(pickle.dumps(p))
    q.flat[0] = 99.0
    assert q.layers[0][0].ravel()[0] == 99.0
