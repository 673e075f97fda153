"""Independent reference implementations used as test oracles.

Everything here is deliberately separate from the tape engine: plain eager
numpy, optionally in extended precision (long double), so finite differences
of these functions can adjudicate the tape's analytic gradients.
"""

import numpy as np


def unflatten(flat, arch, dtype=None):
    """Flat vector -> [(W, b), ...] in the package's layout."""
    arrays = []
    pos = 0
    flat = np.asarray(flat, dtype=dtype) if dtype is not None else np.asarray(flat)
    for fan_in, fan_out in zip(arch[:-1], arch[1:]):
        w = flat[pos : pos + fan_in * fan_out].reshape(fan_in, fan_out)
        pos += fan_in * fan_out
        b = flat[pos : pos + fan_out]
        pos += fan_out
        arrays.append((w, b))
    assert pos == flat.size
    return arrays


def _act(name):
    if name == "tanh":
        return np.tanh, lambda s, z: 1.0 - s * s, lambda s, z: -2.0 * s * (1.0 - s * s)
    if name == "sin":
        return np.sin, lambda s, z: np.cos(z), lambda s, z: -s
    raise ValueError(name)


def eager_forward(layers, x, activation):
    """Plain value forward pass (any float dtype)."""
    act, _, _ = _act(activation)
    h = x
    for w, b in layers[:-1]:
        h = act(h @ w + b)
    w, b = layers[-1]
    return h @ w + b


def eager_jet(layers, x, activation):
    """Eager forward jet: (value, grad, lap) with grad/lap shaped
    (n, n_out, n_in).  Layer-by-layer chain rule in the input dtype."""
    act, dact, ddact = _act(activation)
    n, d = x.shape
    dtype = x.dtype
    a = x
    g = np.zeros((n, d, d), dtype=dtype)
    for j in range(d):
        g[:, j, j] = 1.0
    l = np.zeros((n, d, d), dtype=dtype)
    for li, (w, b) in enumerate(layers):
        z = a @ w + b
        gz = np.einsum("nij,ik->nkj", g, w)
        lz = np.einsum("nij,ik->nkj", l, w)
        if li < len(layers) - 1:
            s = act(z)
            d1 = dact(s, z)[:, :, None]
            d2 = ddact(s, z)[:, :, None]
            a = s
            g = d1 * gz
            l = d2 * gz * gz + d1 * lz
        else:
            a, g, l = z, gz, lz
    return a, g, l


def eager_residuals(value, grad, lap, regime):
    """NS residuals evaluated from an eager jet (matches the regime layout)."""
    re = regime.reynolds
    nv = regime.n_vel
    sp = regime.space_indices
    p = nv
    comps = []
    for i in range(nv):
        r = grad[:, p, sp[i]].copy()
        if regime.has_time:
            r += grad[:, i, 0]
        for k in range(nv):
            r += value[:, k] * grad[:, i, sp[k]]
        for j in sp:
            r -= lap[:, i, j] / re
        comps.append(r)
    div = sum(grad[:, k, sp[k]] for k in range(nv))
    comps.append(div)
    return np.stack(comps, axis=1)


def eager_composite_loss(flat, arch, activation, regime, weights, data, dtype=np.longdouble):
    """Full composite objective, eager and high precision.

    data: dict with optional keys
      obs:     (points, velocities)
      colloc:  points
      ghost_spatial / ghost_temporal: (points, u_target, p_target)
    """
    layers = unflatten(flat, arch, dtype=dtype)
    total = np.array(0.0, dtype=dtype)
    vel_w = None if weights.velocity is None else np.asarray(weights.velocity, dtype=dtype)

    def wsq(diff):
        if vel_w is None:
            return np.sum(diff * diff)
        return np.sum(vel_w * diff * diff)

    nv = regime.n_vel
    if "obs" in data:
        pts, target = data["obs"]
        pred = eager_forward(layers, pts.astype(dtype), activation)[:, :nv]
        total = total + weights.obs * wsq(pred - target.astype(dtype)) / pts.shape[0]
    if "colloc" in data:
        pts = data["colloc"].astype(dtype)
        v, g, l = eager_jet(layers, pts, activation)
        r = eager_residuals(v, g, l, regime)
        total = total + weights.pde * np.sum(r * r) / pts.shape[0]
    gh_total = sum(
        data[k][0].shape[0] for k in ("ghost_spatial", "ghost_temporal") if k in data
    )
    for key, p_w in (("ghost_spatial", weights.ghost_p_space),
                     ("ghost_temporal", weights.ghost_p_time)):
        if key not in data:
            continue
        pts, u_t, p_t = data[key]
        pred = eager_forward(layers, pts.astype(dtype), activation)
        du = pred[:, :nv] - u_t.astype(dtype)
        dp = pred[:, nv] - p_t.astype(dtype)
        total = total + weights.ghost_u * wsq(du) / gh_total
        total = total + p_w * np.sum(dp * dp) / pts.shape[0]
    return total


def fd_param_gradient(loss_fn, flat, h=1e-6, dtype=np.longdouble):
    """Central finite differences of a scalar loss over every parameter."""
    flat = np.asarray(flat, dtype=dtype)
    g = np.empty(flat.size, dtype=np.float64)
    for i in range(flat.size):
        fp = flat.copy()
        fp[i] += h
        fm = flat.copy()
        fm[i] -= h
        g[i] = float((loss_fn(fp) - loss_fn(fm)) / (2 * h))
    return g


def fd_jet(value_fn, pts, h=1e-4):
    """Central-difference first and diagonal-second derivatives of a batched
    vector function of the input coordinates."""
    n, d = pts.shape
    f0 = value_fn(pts)
    grad = np.empty((n, f0.shape[1], d))
    lap = np.empty((n, f0.shape[1], d))
    for j in range(d):
        e = np.zeros(d)
        e[j] = h
        fp = value_fn(pts + e)
        fm = value_fn(pts - e)
        grad[:, :, j] = (fp - fm) / (2 * h)
        lap[:, :, j] = (fp - 2 * f0 + fm) / (h * h)
    return grad, lap


def fd_jet_5point(value_fn, pts, h=1e-3):
    """Fourth-order central differences; needed when high derivatives of the
    target (e.g. trigonometric factors) exceed what 2nd-order stencils can
    resolve at 1e-8."""
    n, d = pts.shape
    f0 = value_fn(pts)
    grad = np.empty((n, f0.shape[1], d))
    lap = np.empty((n, f0.shape[1], d))
    for j in range(d):
        e = np.zeros(d)
        e[j] = h
        f1p, f1m = value_fn(pts + e), value_fn(pts - e)
        f2p, f2m = value_fn(pts + 2 * e), value_fn(pts - 2 * e)
        grad[:, :, j] = (8.0 * (f1p - f1m) - (f2p - f2m)) / (12.0 * h)
        lap[:, :, j] = (16.0 * (f1p + f1m) - (f2p + f2m) - 30.0 * f0) / (12.0 * h * h)
    return grad, lap


def rel_err(a, b, floor=1e-12):
    """Elementwise-max relative mismatch with a scale floor."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    scale = max(float(np.max(np.abs(a))), float(np.max(np.abs(b))), floor)
    return float(np.max(np.abs(a - b))) / scale
