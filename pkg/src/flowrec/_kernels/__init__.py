"""Kernel backend selection.

The compiled Cython kernels are used when available; otherwise the numpy
fallback is loaded.  Set FLOWREC_BACKEND=python or =cython to force a choice
(forcing cython raises if the extension was not built).  `set_backend` exists
so tests and benchmarks can switch at runtime.
"""

import os

from . import numpy_backend

ACT_TANH = numpy_backend.ACT_TANH
ACT_SIN = numpy_backend.ACT_SIN

_cy = None
try:
    from . import _cyjet as _cy
except ImportError:
    _cy = None


def _select(name):
    if name == "python":
        return numpy_backend, "python"
    if name == "cython":
        if _cy is None:
            raise ImportError(
                "FLOWREC_BACKEND=cython requested but the compiled extension "
                "is not available; build with `pip install -e . --no-build-isolation`"
            )
        return _cy, "cython"
    if name == "auto":
        return (_cy, "cython") if _cy is not None else (numpy_backend, "python")
    raise ValueError(f"unknown backend {name!r} (use auto, cython, or python)")


_impl, _name = _select(os.environ.get("FLOWREC_BACKEND", "auto"))


def backend_name():
    return _name


def available_backends():
    return ("python", "cython") if _cy is not None else ("python",)


def set_backend(name):
    """Switch the active kernel backend; returns the previous backend name."""
    global _impl, _name
    prev = _name
    _impl, _name = _select(name)
    return prev


def jet_act_forward(kind, z, s, aux, d1, d2, batch, n_inputs):
    # aux is only read for sin activations; substitute z so the compiled
    # kernel always receives a real array.
    _impl.jet_act_forward(kind, z, s, z if aux is None else aux, d1, d2, batch, n_inputs)


def jet_act_backward(kind, z, s, aux, sbar, zbar, d1, d2, d3, batch, n_inputs,
                     accumulate):
    _impl.jet_act_backward(
        kind, z, s, z if aux is None else aux, sbar, zbar, d1, d2, d3,
        batch, n_inputs, accumulate,
    )
