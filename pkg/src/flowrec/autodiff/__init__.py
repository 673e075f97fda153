"""Static-tape reverse-mode differentiation with forward jet propagation."""

from .builders import (
    backward,
    build_jet_tape,
    build_mse_tape,
    build_pde_tape,
    build_tape,
    build_value_tape,
    forward_jet,
)
from .jet import Jet
from .tape import Tape, TapeBuilder

__all__ = [
    "Jet",
    "Tape",
    "TapeBuilder",
    "backward",
    "build_jet_tape",
    "build_mse_tape",
    "build_pde_tape",
    "build_tape",
    "build_value_tape",
    "forward_jet",
]
