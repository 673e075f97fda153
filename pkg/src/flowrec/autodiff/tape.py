"""Static reverse-mode tape over dense batched operations.

A tape is built once for a fixed batch size and topology, then re-executed
with new bound values every iteration.  Buffers are preallocated float64
arrays; re-running the same tape with identical bound values is bit-identical
(fixed op order, fixed reduction order).

Jet-carrying buffers use the stacked layout documented in
flowrec._kernels.numpy_backend: ((1 + 2*d) * batch, width), value rows first,
then one first-derivative block and one diagonal-second-derivative block per
differentiation input.
"""

import numpy as np

from .. import _kernels as K
from .jet import Jet

_ACT_KINDS = {"tanh": K.ACT_TANH, "sin": K.ACT_SIN}


class _AffineJet:
    """out = x @ W (+ b on value rows).  One GEMM over all stacked blocks."""

    __slots__ = ("x", "w", "b", "out", "batch", "_x_rows", "_fan_in", "_fan_out",
                 "_x_adj", "_tx", "_tw", "_tb", "_wx", "_ww")

    def __init__(self, x, w, b, out, batch, x_rows, fan_in, fan_out, x_needs_adj):
        self.x, self.w, self.b, self.out, self.batch = x, w, b, out, batch
        self._x_rows, self._fan_in, self._fan_out = x_rows, fan_in, fan_out
        self._x_adj = x_needs_adj
        self._tx = self._tw = self._tb = None
        self._wx = self._ww = False

    def finalize(self, consumers, written):
        # sole-consumer adjoints are written by one GEMM instead of zeroed
        # and accumulated, saving a temporary and a memory pass
        if self._x_adj:
            self._wx = consumers[self.x] == 1
            if self._wx:
                written.add(self.x)
            else:
                self._tx = np.empty((self._x_rows, self._fan_in))
        self._ww = consumers[self.w] == 1 and consumers[self.b] == 1
        if self._ww:
            written.update((self.w, self.b))
        else:
            self._tw = np.empty((self._fan_in, self._fan_out))
            self._tb = np.empty(self._fan_out)

    def forward(self, B):
        np.dot(B[self.x], B[self.w], out=B[self.out])
        B[self.out][: self.batch] += B[self.b]

    def backward(self, B, A):
        ao = A[self.out]
        if self._x_adj:
            if self._wx:
                np.dot(ao, B[self.w].T, out=A[self.x])
            else:
                np.dot(ao, B[self.w].T, out=self._tx)
                A[self.x] += self._tx
        if self._ww:
            np.dot(B[self.x].T, ao, out=A[self.w])
            np.sum(ao[: self.batch], axis=0, out=A[self.b])
        else:
            np.dot(B[self.x].T, ao, out=self._tw)
            A[self.w] += self._tw
            np.sum(ao[: self.batch], axis=0, out=self._tb)
            A[self.b] += self._tb


class _ActJet:
    """s = sigma(z) with jet propagation through the derivative blocks."""

    __slots__ = ("z", "s", "aux", "kind", "batch", "n_inputs", "_d1", "_d2", "_d3", "_wz")

    def __init__(self, z, s, aux, kind, batch, n_inputs, width):
        self.z, self.s, self.aux = z, s, aux
        self.kind, self.batch, self.n_inputs = kind, batch, n_inputs
        if n_inputs:
            self._d1 = np.empty((batch, width))
            self._d2 = np.empty((batch, width))
            self._d3 = np.empty((batch, width))
        else:
            self._d1 = self._d2 = self._d3 = None
        self._wz = False

    def finalize(self, consumers, written):
        self._wz = consumers[self.z] == 1
        if self._wz:
            written.add(self.z)

    def forward(self, B):
        zv = B[self.z][: self.batch]
        sv = B[self.s][: self.batch]
        if self.kind == K.ACT_TANH:
            np.tanh(zv, out=sv)
            aux = None
        else:
            np.sin(zv, out=sv)
            aux = B[self.aux]
            np.cos(zv, out=aux)
        if self.n_inputs:
            K.jet_act_forward(
                self.kind, B[self.z], B[self.s], aux, self._d1, self._d2,
                self.batch, self.n_inputs,
            )

    def backward(self, B, A):
        aux = B[self.aux] if self.aux is not None else None
        if self.n_inputs:
            K.jet_act_backward(
                self.kind, B[self.z], B[self.s], aux, A[self.s], A[self.z],
                self._d1, self._d2, self._d3, self.batch, self.n_inputs,
                accumulate=not self._wz,
            )
        else:
            sv = B[self.s]
            d1 = aux if aux is not None else 1.0 - sv * sv
            if self._wz:
                np.multiply(A[self.s], d1, out=A[self.z])
            else:
                A[self.z] += A[self.s] * d1


class _ExtractColumn:
    """(B,) copy of one column of one stacked block."""

    __slots__ = ("src", "out", "row0", "row1", "ch")

    def __init__(self, src, out, row0, row1, ch):
        self.src, self.out, self.row0, self.row1, self.ch = src, out, row0, row1, ch

    def forward(self, B):
        B[self.out][:] = B[self.src][self.row0 : self.row1, self.ch]

    def backward(self, B, A):
        A[self.src][self.row0 : self.row1, self.ch] += A[self.out]


class _Mul:
    __slots__ = ("a", "b", "out", "_tmp")

    def __init__(self, a, b, out, n):
        self.a, self.b, self.out = a, b, out
        self._tmp = np.empty(n)

    def forward(self, B):
        np.multiply(B[self.a], B[self.b], out=B[self.out])

    def backward(self, B, A):
        ao = A[self.out]
        if A[self.a] is not None:
            np.multiply(ao, B[self.b], out=self._tmp)
            A[self.a] += self._tmp
        if A[self.b] is not None:
            np.multiply(ao, B[self.a], out=self._tmp)
            A[self.b] += self._tmp


class _LinComb:
    """out = sum_i c_i * term_i over (B,) vectors."""

    __slots__ = ("terms", "out", "_tmp")

    def __init__(self, terms, out, n):
        self.terms = tuple(terms)
        self.out = out
        self._tmp = np.empty(n)

    def forward(self, B):
        o = B[self.out]
        c0, t0 = self.terms[0]
        np.multiply(B[t0], c0, out=o)
        for c, t in self.terms[1:]:
            if c == 1.0:
                o += B[t]
            else:
                np.multiply(B[t], c, out=self._tmp)
                o += self._tmp

    def backward(self, B, A):
        ao = A[self.out]
        for c, t in self.terms:
            if A[t] is None:
                continue
            if c == 1.0:
                A[t] += ao
            else:
                np.multiply(ao, c, out=self._tmp)
                A[t] += self._tmp


class _SquareSum:
    """scalar = weight * sum(src**2), fixed sequential reduction via dot."""

    __slots__ = ("src", "weight", "out", "_tmp")

    def __init__(self, src, weight, out, n):
        self.src, self.weight, self.out = src, weight, out
        self._tmp = np.empty(n)

    def forward(self, B):
        v = B[self.src]
        B[self.out][()] = self.weight * np.dot(v, v)

    def backward(self, B, A):
        coef = 2.0 * self.weight * float(A[self.out])
        np.multiply(B[self.src], coef, out=self._tmp)
        A[self.src] += self._tmp


class _ColumnView:
    """(B,) copy of one column of a plain 2D buffer (e.g. target matrices)."""

    __slots__ = ("src", "out", "ch")

    def __init__(self, src, out, ch):
        self.src, self.out, self.ch = src, out, ch

    def forward(self, B):
        B[self.out][:] = B[self.src][:, self.ch]

    def backward(self, B, A):
        if A[self.src] is not None:
            A[self.src][:, self.ch] += A[self.out]


class _ScalarComb:
    """scalar = sum_i c_i * scalar_i (plain Python accumulation, fixed order)."""

    __slots__ = ("terms", "out")

    def __init__(self, terms, out):
        self.terms = tuple(terms)
        self.out = out

    def forward(self, B):
        acc = 0.0
        for c, t in self.terms:
            acc += c * float(B[t])
        B[self.out][()] = acc

    def backward(self, B, A):
        ao = float(A[self.out])
        for c, t in self.terms:
            A[t][()] += c * ao


def _check_finite(name, arr):
    if not np.all(np.isfinite(arr)):
        bad = np.argwhere(~np.isfinite(np.asarray(arr)))[0]
        idx = tuple(int(i) for i in bad)
        raise ValueError(f"non-finite value in {name} at index {idx}")


class Tape:
    """Executable static graph.  Construct through TapeBuilder / build_tape."""

    def __init__(self):
        self._buffers = []
        self._adjoints = None
        self._needs_adj = []
        self._written = set()  # adjoints fully written by their consumer op
        self._zero_list = None
        self._ops = []
        self._input_slots = {}  # name -> (buffer id, value-row count or None)
        self._param_ids = []
        self._param_shapes = []
        self.scalars = {}  # name -> buffer id
        self.loss_id = None
        self.output_id = None
        self.batch = 0
        self.n_jet_inputs = 0
        self.n_outputs = 0
        self.n_coords = 0
        self._ran = False

    # -- introspection ----------------------------------------------------
    @property
    def n_nodes(self):
        return len(self._ops)

    @property
    def param_shapes(self):
        return list(self._param_shapes)

    @property
    def n_params(self):
        return sum(int(np.prod(s)) for s in self._param_shapes)

    @property
    def input_names(self):
        return sorted(self._input_slots)

    # -- binding -----------------------------------------------------------
    def bind_inputs(self, **arrays):
        """Copy values into input slots; raises on shape mismatch or non-finite."""
        for name, arr in arrays.items():
            if name not in self._input_slots:
                raise KeyError(f"tape has no input slot {name!r}")
            bid, value_rows = self._input_slots[name]
            buf = self._buffers[bid]
            arr = np.asarray(arr, dtype=np.float64)
            dest = buf[:value_rows] if value_rows is not None else buf
            if arr.shape != dest.shape:
                raise ValueError(
                    f"input {name!r} has shape {arr.shape}, expected {dest.shape}"
                )
            _check_finite(f"input {name!r}", arr)
            np.copyto(dest, arr)

    def bind_params(self, arrays):
        """Attach parameter arrays (by reference) to the tape's param slots."""
        if len(arrays) != len(self._param_ids):
            raise ValueError(
                f"expected {len(self._param_ids)} parameter arrays, got {len(arrays)}"
            )
        for bid, shape, arr in zip(self._param_ids, self._param_shapes, arrays):
            if arr.shape != shape:
                raise ValueError(f"parameter shape {arr.shape} != expected {shape}")
            if arr.dtype != np.float64:
                raise ValueError("parameters must be float64")
            _check_finite("parameter", arr)
            self._buffers[bid] = arr

    # -- execution ----------------------------------------------------------
    def forward(self):
        B = self._buffers
        for op in self._ops:
            op.forward(B)
        self._ran = True

    def backward(self, seed=1.0, out=None):
        """Accumulate seed * d(loss)/d(theta) into `out` (flat, length n_params).

        Returns `out` (allocated if None).  Requires a prior forward() and a
        tape built with a scalar loss output.
        """
        if self.loss_id is None:
            raise RuntimeError("tape has no scalar loss output; build with a loss mode")
        if not self._ran:
            raise RuntimeError("backward called before forward")
        if self._adjoints is None:
            self._adjoints = [
                np.zeros_like(b) if need else None
                for b, need in zip(self._buffers, self._needs_adj)
            ]
            # param buffers are rebindable; adjoints keep their own arrays
            for bid, shape in zip(self._param_ids, self._param_shapes):
                self._adjoints[bid] = np.zeros(shape)
            self._zero_list = [
                a for bid, a in enumerate(self._adjoints)
                if a is not None and bid not in self._written
            ]
        A = self._adjoints
        for a in self._zero_list:
            a[...] = 0.0
        A[self.loss_id][()] = seed
        B = self._buffers
        for op in reversed(self._ops):
            op.backward(B, A)
        if out is None:
            out = np.zeros(self.n_params)
        pos = 0
        for bid, shape in zip(self._param_ids, self._param_shapes):
            n = int(np.prod(shape))
            out[pos : pos + n] += A[bid].ravel()
            pos += n
        return out

    # -- output access -------------------------------------------------------
    def scalar(self, name):
        return float(self._buffers[self.scalars[name]])

    @property
    def loss(self):
        return float(self._buffers[self.loss_id])

    def output_values(self):
        """Value rows of the network output, shape (batch, n_outputs)."""
        return self._buffers[self.output_id][: self.batch].copy()

    def jet(self):
        """Unstack the output buffer into a Jet batch."""
        if self.n_jet_inputs == 0:
            raise RuntimeError("tape was built in value-only mode; no jet available")
        Y = self._buffers[self.output_id]
        B, d = self.batch, self.n_jet_inputs
        value = Y[:B].copy()
        grad = np.stack([Y[(1 + j) * B : (2 + j) * B] for j in range(d)], axis=2)
        lap = np.stack([Y[(1 + d + j) * B : (2 + d + j) * B] for j in range(d)], axis=2)
        return Jet(value=value, grad=grad, lap=lap)


class TapeBuilder:
    """Incrementally assembles a Tape.  Not thread-safe; use once."""

    def __init__(self, batch, n_jet_inputs):
        self.tape = Tape()
        self.tape.batch = batch
        self.tape.n_jet_inputs = n_jet_inputs
        self.batch = batch
        self.n_jet_inputs = n_jet_inputs
        self._extract_cache = {}
        self._consumers = {}

    def _consume(self, *ids):
        for i in ids:
            self._consumers[i] = self._consumers.get(i, 0) + 1

    # buffer helpers
    def _new_buffer(self, shape, needs_adj=True, fill=None):
        t = self.tape
        bid = len(t._buffers)
        buf = np.zeros(shape) if fill == 0 else np.empty(shape)
        t._buffers.append(buf)
        t._needs_adj.append(needs_adj)
        return bid

    def stacked_rows(self, with_jet=True):
        d = self.n_jet_inputs if with_jet else 0
        return (1 + 2 * d) * self.batch

    def add_input_points(self, name, n_coords):
        """Stacked jet input: value rows bound at runtime, derivative blocks fixed."""
        d = self.n_jet_inputs
        rows = self.stacked_rows()
        bid = self._new_buffer((rows, n_coords), needs_adj=False, fill=0)
        buf = self.tape._buffers[bid]
        # d(input_k)/d(input_j) = delta_kj on the first-derivative blocks
        for j in range(d):
            buf[(1 + j) * self.batch : (2 + j) * self.batch, j] = 1.0
        self.tape._input_slots[name] = (bid, self.batch)
        return bid

    def add_input_array(self, name, shape):
        bid = self._new_buffer(shape, needs_adj=False, fill=0)
        self.tape._input_slots[name] = (bid, None)
        return bid

    def add_param(self, shape):
        bid = self._new_buffer(shape, needs_adj=True, fill=0)
        self.tape._param_ids.append(bid)
        self.tape._param_shapes.append(tuple(shape))
        return bid

    # graph ops
    def affine(self, x, fan_in, fan_out, x_rows, x_needs_adj=True):
        w = self.add_param((fan_in, fan_out))
        b = self.add_param((fan_out,))
        out = self._new_buffer((x_rows, fan_out))
        self._consume(x, w, b)
        self.tape._ops.append(
            _AffineJet(x, w, b, out, self.batch, x_rows, fan_in, fan_out, x_needs_adj)
        )
        return out

    def activation(self, z, width, rows, act_kind, with_jet):
        out = self._new_buffer((rows, width))
        aux = None
        if act_kind == K.ACT_SIN:
            aux = self._new_buffer((self.batch, width), needs_adj=False)
        self._consume(z)
        self.tape._ops.append(
            _ActJet(z, out, aux, act_kind, self.batch,
                    self.n_jet_inputs if with_jet else 0, width)
        )
        return out

    def extract(self, src, block, channel):
        """(B,) view-copy of column `channel` of stacked block `block` (0=value,
        1+j=grad_j, 1+d+j=lap_j).  Memoized."""
        key = (src, block, channel)
        if key in self._extract_cache:
            return self._extract_cache[key]
        out = self._new_buffer((self.batch,))
        row0 = block * self.batch
        self._consume(src)
        self.tape._ops.append(_ExtractColumn(src, out, row0, row0 + self.batch, channel))
        self._extract_cache[key] = out
        return out

    def mul(self, a, b):
        out = self._new_buffer((self.batch,))
        self._consume(a, b)
        self.tape._ops.append(_Mul(a, b, out, self.batch))
        return out

    def column(self, src, channel, needs_adj=False):
        out = self._new_buffer((self.batch,), needs_adj=needs_adj)
        self._consume(src)
        self.tape._ops.append(_ColumnView(src, out, channel))
        return out

    def lincomb(self, terms):
        out = self._new_buffer((self.batch,))
        self._consume(*(t for _, t in terms))
        self.tape._ops.append(_LinComb(terms, out, self.batch))
        return out

    def square_sum(self, src, weight=1.0):
        out = self._new_buffer(())
        self._consume(src)
        self.tape._ops.append(_SquareSum(src, weight, out, self.batch))
        return out

    def scalar_comb(self, terms, name=None):
        out = self._new_buffer(())
        self._consume(*(t for _, t in terms))
        self.tape._ops.append(_ScalarComb(terms, out))
        if name is not None:
            self.tape.scalars[name] = out
        return out

    def set_loss(self, bid):
        self.tape.loss_id = bid
        self.tape.scalars.setdefault("loss", bid)

    def finish(self):
        t = self.tape
        written = set()
        for op in t._ops:
            fin = getattr(op, "finalize", None)
            if fin is not None:
                fin(self._consumers, written)
        t._written = written
        return t


def activation_kind(name):
    try:
        return _ACT_KINDS[name]
    except KeyError:
        raise ValueError(
            f"unsupported activation {name!r} (supported: {sorted(_ACT_KINDS)})"
        ) from None
