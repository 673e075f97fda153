"""Tape construction: network graphs and loss heads.

The network graph is a chain of stacked-jet affine layers and activations.
Loss heads append squared-error / residual reductions so that one reverse
sweep yields parameter gradients of the scalar objective.
"""

import numpy as np

from .jet import Jet
from .tape import Tape, TapeBuilder, activation_kind


def _validate_arch(arch):
    arch = [int(n) for n in arch]
    if len(arch) < 3:
        raise ValueError(f"architecture needs at least one hidden layer, got {arch}")
    for n in arch:
        if n < 1:
            raise ValueError(f"zero-width layer in architecture {arch}")
    return arch


def network_graph(b: TapeBuilder, arch, act_kind, with_jet):
    """Append the MLP to the builder; returns the output stacked buffer id."""
    rows = b.stacked_rows(with_jet)
    b.tape.n_coords = arch[0]
    x = b.add_input_points("points", arch[0])
    h = x
    first = True
    for fan_in, fan_out in zip(arch[:-1], arch[1:-1]):
        z = b.affine(h, fan_in, fan_out, rows, x_needs_adj=not first)
        h = b.activation(z, fan_out, rows, act_kind, with_jet)
        first = False
    out = b.affine(h, arch[-2], arch[-1], rows, x_needs_adj=not first)
    b.tape.n_outputs = arch[-1]
    b.tape.output_id = out
    return out


def _jet_entry(b, y, kind, channel, in_index, n_jet_inputs):
    if kind == "val":
        block = 0
    elif kind == "grad":
        block = 1 + in_index
    else:  # lap
        block = 1 + n_jet_inputs + in_index
    return b.extract(y, block, channel)


def residual_graph(b: TapeBuilder, y, structure, n_jet_inputs):
    """Build all residual components; returns their (B,) buffer ids."""
    out = []
    for comp in structure:
        terms = [
            (coef, _jet_entry(b, y, kind, c, j, n_jet_inputs))
            for coef, kind, c, j in comp["linear"]
        ]
        for coef, a_c, b_c, j in comp["conv"]:
            va = _jet_entry(b, y, "val", a_c, None, n_jet_inputs)
            gb = _jet_entry(b, y, "grad", b_c, j, n_jet_inputs)
            terms.append((coef, b.mul(va, gb)))
        out.append(b.lincomb(terms))
    return out


def build_value_tape(arch, batch_size, activation="tanh"):
    arch = _validate_arch(arch)
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    b = TapeBuilder(batch_size, n_jet_inputs=0)
    network_graph(b, arch, activation_kind(activation), with_jet=False)
    return b.finish()


def build_jet_tape(arch, batch_size, activation="tanh"):
    arch = _validate_arch(arch)
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    b = TapeBuilder(batch_size, n_jet_inputs=arch[0])
    network_graph(b, arch, activation_kind(activation), with_jet=True)
    return b.finish()


def build_pde_tape(arch, batch_size, activation, structure, coef, scalar_name="sq_pde"):
    """Jet network + residual components + scalar `coef * sum_n |r_n|^2` loss.

    `structure` is the residual term table (see flowrec.physics.residual_structure);
    `coef` is folded into the loss node so accumulated batch losses sum to the
    weighted full-dataset term.
    """
    arch = _validate_arch(arch)
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    b = TapeBuilder(batch_size, n_jet_inputs=arch[0])
    y = network_graph(b, arch, activation_kind(activation), with_jet=True)
    comps = residual_graph(b, y, structure, arch[0])
    sq = b.scalar_comb([(1.0, b.square_sum(c)) for c in comps], name=scalar_name)
    b.set_loss(b.scalar_comb([(coef, sq)]))
    return b.finish()


def build_mse_tape(
    arch,
    batch_size,
    activation,
    n_vel,
    vel_weights=None,
    vel_coef=None,
    p_coef=None,
    p_channel=None,
):
    """Value network + squared-error head against bound targets.

    sq_u = sum_n sum_c w_c (u_pred - u_target)^2       (slot "target_u")
    sq_p = sum_n (p_pred - p_target)^2                  (slot "target_p")
    loss = vel_coef * sq_u + p_coef * sq_p  (terms with None coef are omitted)
    """
    arch = _validate_arch(arch)
    b = TapeBuilder(batch_size, n_jet_inputs=0)
    y = network_graph(b, arch, activation_kind(activation), with_jet=False)
    loss_terms = []
    if vel_coef is not None:
        tu = b.add_input_array("target_u", (batch_size, n_vel))
        w = vel_weights if vel_weights is not None else [1.0] * n_vel
        parts = []
        for c in range(n_vel):
            pc = b.extract(y, 0, c)
            tc = b.column(tu, c)
            diff = b.lincomb([(1.0, pc), (-1.0, tc)])
            parts.append((1.0, b.square_sum(diff, weight=float(w[c]))))
        sq_u = b.scalar_comb(parts, name="sq_u")
        loss_terms.append((float(vel_coef), sq_u))
    if p_coef is not None:
        pp = b.extract(y, 0, p_channel)
        tp = b.add_input_array("target_p", (batch_size,))
        diff = b.lincomb([(1.0, pp), (-1.0, tp)])
        sq_p = b.scalar_comb([(1.0, b.square_sum(diff))], name="sq_p")
        loss_terms.append((float(p_coef), sq_p))
    b.set_loss(b.scalar_comb(loss_terms))
    return b.finish()


def build_tape(arch, batch_size, mode, activation="tanh", regime=None):
    """Build a reusable static tape for the given MLP architecture.

    mode:
      "value"     network outputs only
      "jet"       outputs plus first/diagonal-second input derivatives
      "jet+loss"  jet plus the mean squared momentum/continuity residual as
                  the scalar loss (requires `regime`)
    """
    if mode in ("value", "value-only"):
        return build_value_tape(arch, batch_size, activation)
    if mode == "jet":
        return build_jet_tape(arch, batch_size, activation)
    if mode == "jet+loss":
        if regime is None:
            raise ValueError("mode 'jet+loss' requires a FlowRegime")
        from ..physics import residual_structure

        if regime.n_inputs != arch[0]:
            raise ValueError(
                f"regime expects {regime.n_inputs} inputs, architecture has {arch[0]}"
            )
        if regime.n_outputs != arch[-1]:
            raise ValueError(
                f"regime expects {regime.n_outputs} outputs, architecture has {arch[-1]}"
            )
        return build_pde_tape(
            arch, batch_size, activation, residual_structure(regime), coef=1.0 / batch_size
        )
    raise ValueError(f"unknown tape mode {mode!r}")


def _as_param_arrays(tape, params):
    if isinstance(params, np.ndarray) and params.ndim == 1:
        arrays = []
        pos = 0
        for shape in tape.param_shapes:
            n = int(np.prod(shape))
            arrays.append(params[pos : pos + n].reshape(shape))
            pos += n
        if pos != params.size:
            raise ValueError(f"flat parameter vector has {params.size} entries, expected {pos}")
        return arrays
    if hasattr(params, "tape_arrays"):
        return params.tape_arrays()
    return list(params)


def forward_jet(tape, params, inputs):
    """Run the tape on a batch of points and return the Jet batch."""
    inputs = np.asarray(inputs, dtype=np.float64)
    if inputs.ndim != 2 or inputs.shape != (tape.batch, tape.n_coords):
        raise ValueError(
            f"inputs shape {inputs.shape} does not match tape batch "
            f"({tape.batch}, {tape.n_coords})"
        )
    tape.bind_params(_as_param_arrays(tape, params))
    tape.bind_inputs(points=inputs)
    tape.forward()
    return tape.jet()


def backward(tape, seed=1.0, out=None):
    """Reverse sweep: accumulate seed * d(loss)/d(params) into a flat vector."""
    return tape.backward(seed=seed, out=out)
