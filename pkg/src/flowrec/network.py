"""Per-subdomain fully connected local experts: (t, x, y[, z]) -> (u, v[, w], p)."""

import struct
from dataclasses import dataclass

import numpy as np

from . import autodiff
from .physics import FlowRegime

_ACTIVATIONS = {"tanh": np.tanh, "sin": np.sin}
_ACT_CODES = {"tanh": 0, "sin": 1}
_ACT_NAMES = {v: k for k, v in _ACT_CODES.items()}

_CKPT_MAGIC = b"FRCK"
_CKPT_VERSION = 1


@dataclass(frozen=True)
class ExpertConfig:
    input_dim: int
    hidden_layers: int
    width: int
    activation: str
    output_dim: int
    omega0: float = 1.0  # first-layer frequency scale for sin networks

    def __post_init__(self):
        if self.input_dim < 1 or self.output_dim < 1:
            raise ValueError("input/output dims must be positive")
        if self.hidden_layers < 1:
            raise ValueError("need at least one hidden layer")
        if self.width < 1:
            raise ValueError("zero-width layer")
        if self.activation not in _ACTIVATIONS:
            raise ValueError(
                f"unsupported activation {self.activation!r} "
                f"(supported: {sorted(_ACTIVATIONS)})"
            )
        if self.omega0 <= 0:
            raise ValueError("omega0 must be positive")

    @classmethod
    def for_regime(cls, regime: FlowRegime, hidden_layers, width, activation, omega0=1.0):
        """Config matching a flow regime: inputs (t,)x,y[,z], outputs velocity + p."""
        return cls(
            input_dim=regime.n_inputs,
            hidden_layers=hidden_layers,
            width=width,
            activation=activation,
            output_dim=regime.n_outputs,
            omega0=omega0,
        )

    @property
    def arch(self):
        return [self.input_dim] + [self.width] * self.hidden_layers + [self.output_dim]

    @property
    def layer_shapes(self):
        arch = self.arch
        shapes = []
        for fan_in, fan_out in zip(arch[:-1], arch[1:]):
            shapes.append(((fan_in, fan_out), (fan_out,)))
        return shapes

    @property
    def n_params(self):
        return sum(fi * fo + fo for (fi, fo), _ in self.layer_shapes)


class ExpertParams:
    """Flat float64 parameter vector with per-layer (W, b) views.

    Layout: W0 (row-major fan_in x fan_out), b0, W1, b1, ...  The views share
    memory with `flat`, so in-place optimizer updates are visible to tapes that
    bound these arrays.
    """

    def __init__(self, config: ExpertConfig, flat: np.ndarray, seed=None):
        flat = np.ascontiguousarray(flat, dtype=np.float64)
        if flat.shape != (config.n_params,):
            raise ValueError(
                f"flat vector has shape {flat.shape}, config needs ({config.n_params},)"
            )
        self.config = config
        self.flat = flat
        self.seed = seed
        self.layers = []
        pos = 0
        for (wi_shape, b_shape) in config.layer_shapes:
            n_w = wi_shape[0] * wi_shape[1]
            w = self.flat[pos : pos + n_w].reshape(wi_shape)
            pos += n_w
            b = self.flat[pos : pos + b_shape[0]]
            pos += b_shape[0]
            self.layers.append((w, b))

    @property
    def n_params(self):
        return self.flat.size

    def __reduce__(self):
        # rebuild through __init__ so the per-layer views share the flat vector
        return (ExpertParams, (self.config, self.flat, self.seed))

    def tape_arrays(self):
        """Parameter arrays in tape slot order (W0, b0, W1, b1, ...)."""
        out = []
        for w, b in self.layers:
            out.extend((w, b))
        return out

    def copy(self):
        return ExpertParams(self.config, self.flat.copy(), seed=self.seed)


def init_params(config: ExpertConfig, seed: int) -> ExpertParams:
    """Glorot-uniform weights, zero biases, deterministic per (config, seed).

    For sin activations the first layer is scaled by omega0, which is
    equivalent to a frequency-scaled first activation sin(omega0 * (Wx + b)).
    """
    if seed < 0:
        raise ValueError("seed must be nonnegative")
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed))))
    flat = np.empty(config.n_params)
    pos = 0
    for li, ((fan_in, fan_out), _) in enumerate(config.layer_shapes):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        n_w = fan_in * fan_out
        w = rng.uniform(-limit, limit, size=n_w)
        if li == 0 and config.activation == "sin" and config.omega0 != 1.0:
            w *= config.omega0
        flat[pos : pos + n_w] = w
        pos += n_w
        flat[pos : pos + fan_out] = 0.0
        pos += fan_out
    return ExpertParams(config, flat, seed=seed)


def predict(params: ExpertParams, points) -> np.ndarray:
    """Eager forward pass, any batch size; equals the tape value output."""
    x = np.asarray(points, dtype=np.float64)
    squeeze = x.ndim == 1
    x = np.atleast_2d(x)
    cfg = params.config
    if x.shape[1] != cfg.input_dim:
        raise ValueError(f"points have {x.shape[1]} coordinates, expected {cfg.input_dim}")
    act = _ACTIVATIONS[cfg.activation]
    h = x
    for w, b in params.layers[:-1]:
        h = act(h @ w + b)
    w, b = params.layers[-1]
    out = h @ w + b
    return out[0] if squeeze else out


_jet_tape_cache = {}


def predict_jet(params: ExpertParams, points) -> autodiff.Jet:
    """Network outputs with first/diagonal-second input derivatives.

    Builds (and caches) a jet tape per (config, batch size); intended for
    evaluation and diagnostics, not the training hot path.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    cfg = params.config
    key = (cfg, pts.shape[0])
    tape = _jet_tape_cache.get(key)
    if tape is None:
        tape = autodiff.build_jet_tape(cfg.arch, pts.shape[0], activation=cfg.activation)
        if len(_jet_tape_cache) > 16:
            _jet_tape_cache.clear()
        _jet_tape_cache[key] = tape
    return autodiff.forward_jet(tape, params, pts)


# -- checkpoint format ---------------------------------------------------
#
# Flat little-endian binary file:
#   magic "FRCK" | u32 version | u32 input_dim | u32 hidden_layers | u32 width
#   | u32 activation code (0 tanh, 1 sin) | u32 output_dim | f64 omega0
#   | u64 seed (2**64-1 when unknown) | u32 n_layers
#   then per layer: u32 fan_in | u32 fan_out | fan_in*fan_out f64 (row-major W)
#   | fan_out f64 (b)
# Write/read round-trips are bit-exact.

_HEADER = struct.Struct("<4sIIIIIIdQI")


def save_checkpoint(path, params: ExpertParams):
    cfg = params.config
    seed = params.seed if params.seed is not None else 2**64 - 1
    with open(path, "wb") as f:
        f.write(
            _HEADER.pack(
                _CKPT_MAGIC,
                _CKPT_VERSION,
                cfg.input_dim,
                cfg.hidden_layers,
                cfg.width,
                _ACT_CODES[cfg.activation],
                cfg.output_dim,
                cfg.omega0,
                int(seed),
                len(params.layers),
            )
        )
        for w, b in params.layers:
            f.write(struct.pack("<II", w.shape[0], w.shape[1]))
            f.write(np.ascontiguousarray(w).tobytes())
            f.write(np.ascontiguousarray(b).tobytes())


def load_checkpoint(path) -> ExpertParams:
    with open(path, "rb") as f:
        raw = f.read(_HEADER.size)
        if len(raw) != _HEADER.size:
            raise ValueError(f"truncated checkpoint {path}")
        (magic, version, input_dim, hidden, width, act_code, output_dim,
         omega0, seed, n_layers) = _HEADER.unpack(raw)
        if magic != _CKPT_MAGIC:
            raise ValueError(f"{path} is not a checkpoint file")
        if version != _CKPT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        cfg = ExpertConfig(
            input_dim=input_dim,
            hidden_layers=hidden,
            width=width,
            activation=_ACT_NAMES[act_code],
            output_dim=output_dim,
            omega0=omega0,
        )
        flat = np.empty(cfg.n_params)
        pos = 0
        for _ in range(n_layers):
            fan_in, fan_out = struct.unpack("<II", f.read(8))
            n_w = fan_in * fan_out
            flat[pos : pos + n_w] = np.frombuffer(f.read(8 * n_w), dtype="<f8")
            pos += n_w
            flat[pos : pos + fan_out] = np.frombuffer(f.read(8 * fan_out), dtype="<f8")
            pos += fan_out
        if pos != cfg.n_params:
            raise ValueError(f"checkpoint {path} has {pos} parameters, config needs {cfg.n_params}")
    return ExpertParams(cfg, flat, seed=None if seed == 2**64 - 1 else seed)
