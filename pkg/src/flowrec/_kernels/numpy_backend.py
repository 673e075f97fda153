"""Pure-numpy implementations of the hot jet-propagation kernels.

All functions operate on "stacked" jet arrays of shape ((1 + 2*d) * batch, width)
where d is the number of differentiation inputs:

    rows [0, B)                     value
    rows [(1+j)*B, (2+j)*B)         first derivative w.r.t. input j
    rows [(1+d+j)*B, (2+d+j)*B)     diagonal second derivative w.r.t. input j

The activation value rows (sigma of the pre-activation value rows) are computed
by the caller with numpy's vectorized tanh/sin before these kernels run; the
kernels only propagate the derivative blocks.  `aux` carries cos(z_value) for
sin activations and is ignored for tanh.  d1/d2/d3 are caller-provided
(batch, width) work arrays for the activation derivative factors.
"""

import numpy as np

ACT_TANH = 0
ACT_SIN = 1


def _fill_factors(kind, sv, aux, d1, d2, d3=None):
    if kind == ACT_TANH:
        np.multiply(sv, sv, out=d1)
        np.subtract(1.0, d1, out=d1)
        np.multiply(sv, d1, out=d2)
        d2 *= -2.0
        if d3 is not None:
            # d3 = -2*(d1**2 + sv*d2)
            np.multiply(d1, d1, out=d3)
            d3 += sv * d2
            d3 *= -2.0
    elif kind == ACT_SIN:
        d1[...] = aux
        np.negative(sv, out=d2)
        if d3 is not None:
            np.negative(aux, out=d3)
    else:
        raise ValueError(f"unknown activation kind {kind}")


def jet_act_forward(kind, z, s, aux, d1, d2, batch, n_inputs):
    """Fill the derivative blocks of s given s-value rows already set to sigma(z_v).

    s_grad_j = d1 * z_grad_j
    s_lap_j  = d2 * z_grad_j**2 + d1 * z_lap_j
    """
    _fill_factors(kind, s[:batch], aux, d1, d2)
    for j in range(n_inputs):
        g = slice((1 + j) * batch, (2 + j) * batch)
        l = slice((1 + n_inputs + j) * batch, (2 + n_inputs + j) * batch)
        zg = z[g]
        np.multiply(d1, zg, out=s[g])
        s[l] = d2 * zg * zg + d1 * z[l]


def jet_act_backward(kind, z, s, aux, sbar, zbar, d1, d2, d3, batch, n_inputs,
                     accumulate):
    """Adjoints of the jet activation, written (accumulate=False) or added
    (accumulate=True) into zbar.

    With d1..d3 the activation derivatives at z_v:
      zbar_v      += sbar_v*d1 + sum_j [ sbar_g_j*d2*z_g_j
                                         + sbar_l_j*(d3*z_g_j**2 + d2*z_l_j) ]
      zbar_grad_j += sbar_g_j*d1 + 2*d2*z_g_j*sbar_l_j
      zbar_lap_j  += sbar_l_j*d1
    """
    _fill_factors(kind, s[:batch], aux, d1, d2, d3)
    acc = sbar[:batch] * d1
    for j in range(n_inputs):
        g = slice((1 + j) * batch, (2 + j) * batch)
        l = slice((1 + n_inputs + j) * batch, (2 + n_inputs + j) * batch)
        zg = z[g]
        sg_bar = sbar[g]
        sl_bar = sbar[l]
        acc += sg_bar * (d2 * zg) + sl_bar * (d3 * zg * zg + d2 * z[l])
        tg = sg_bar * d1 + (2.0 * d2) * zg * sl_bar
        tl = sl_bar * d1
        if accumulate:
            zbar[g] += tg
            zbar[l] += tl
        else:
            zbar[g] = tg
            zbar[l] = tl
    if accumulate:
        zbar[:batch] += acc
    else:
        zbar[:batch] = acc
