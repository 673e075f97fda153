# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled jet-propagation kernels (see numpy_backend for the reference
semantics and the stacked-array layout).  Block-major loops: derivative
factors are staged once into the d1/d2/d3 work arrays, then every derivative
block is processed in one contiguous fused pass."""

ACT_TANH = 0
ACT_SIN = 1


def jet_act_forward(int kind, double[:, ::1] z, double[:, ::1] s,
                    double[:, ::1] aux, double[:, ::1] d1, double[:, ::1] d2,
                    int batch, int n_inputs):
    cdef Py_ssize_t i, k, j, g0, l0
    cdef Py_ssize_t w = z.shape[1]
    cdef double sv, f1, zg
    for i in range(batch):
        for k in range(w):
            sv = s[i, k]
            if kind == ACT_TANH:
                f1 = 1.0 - sv * sv
                d1[i, k] = f1
                d2[i, k] = -2.0 * sv * f1
            else:
                d1[i, k] = aux[i, k]
                d2[i, k] = -sv
    for j in range(n_inputs):
        g0 = (1 + j) * batch
        l0 = (1 + n_inputs + j) * batch
        for i in range(batch):
            for k in range(w):
                zg = z[g0 + i, k]
                s[g0 + i, k] = d1[i, k] * zg
                s[l0 + i, k] = d2[i, k] * zg * zg + d1[i, k] * z[l0 + i, k]


def jet_act_backward(int kind, double[:, ::1] z, double[:, ::1] s,
                     double[:, ::1] aux, double[:, ::1] sbar,
                     double[:, ::1] zbar, double[:, ::1] d1,
                     double[:, ::1] d2, double[:, ::1] d3,
                     int batch, int n_inputs, bint accumulate):
    cdef Py_ssize_t i, k, j, g0, l0
    cdef Py_ssize_t w = z.shape[1]
    cdef double sv, f1, f2, zg, zl, sg, sl, acc
    for i in range(batch):
        for k in range(w):
            sv = s[i, k]
            if kind == ACT_TANH:
                f1 = 1.0 - sv * sv
                f2 = -2.0 * sv * f1
                d1[i, k] = f1
                d2[i, k] = f2
                d3[i, k] = -2.0 * (f1 * f1 + sv * f2)
            else:
                f1 = aux[i, k]
                d1[i, k] = f1
                d2[i, k] = -sv
                d3[i, k] = -f1
            acc = sbar[i, k] * d1[i, k]
            if accumulate:
                zbar[i, k] += acc
            else:
                zbar[i, k] = acc
    for j in range(n_inputs):
        g0 = (1 + j) * batch
        l0 = (1 + n_inputs + j) * batch
        if accumulate:
            for i in range(batch):
                for k in range(w):
                    zg = z[g0 + i, k]
                    zl = z[l0 + i, k]
                    sg = sbar[g0 + i, k]
                    sl = sbar[l0 + i, k]
                    zbar[i, k] += sg * (d2[i, k] * zg) + sl * (d3[i, k] * zg * zg + d2[i, k] * zl)
                    zbar[g0 + i, k] += sg * d1[i, k] + 2.0 * d2[i, k] * zg * sl
                    zbar[l0 + i, k] += sl * d1[i, k]
        else:
            for i in range(batch):
                for k in range(w):
                    zg = z[g0 + i, k]
                    zl = z[l0 + i, k]
                    sg = sbar[g0 + i, k]
                    sl = sbar[l0 + i, k]
                    zbar[i, k] += sg * (d2[i, k] * zg) + sl * (d3[i, k] * zg * zg + d2[i, k] * zl)
                    zbar[g0 + i, k] = sg * d1[i, k] + 2.0 * d2[i, k] * zg * sl
                    zbar[l0 + i, k] = sl * d1[i, k]
