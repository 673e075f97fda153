"""Jet bundles: network outputs together with their input derivatives."""

from dataclasses import dataclass

import numpy as np


@dataclass
class Jet:
    """Batched output bundle of a differentiable map R^d -> R^m.

    value: (n, m) outputs
    grad:  (n, m, d) first derivatives d(out_c)/d(in_j)
    lap:   (n, m, d) diagonal second derivatives d^2(out_c)/d(in_j)^2

    Only diagonal second derivatives are carried; the momentum residuals need
    Laplacian entries but no mixed second derivatives.
    """

    value: np.ndarray
    grad: np.ndarray
    lap: np.ndarray

    def __post_init__(self):
        n, m = self.value.shape
        if self.grad.shape[:2] != (n, m) or self.grad.shape != self.lap.shape:
            raise ValueError(
                f"inconsistent jet shapes: value {self.value.shape}, "
                f"grad {self.grad.shape}, lap {self.lap.shape}"
            )

    @property
    def n_points(self):
        return self.value.shape[0]

    @property
    def n_outputs(self):
        return self.value.shape[1]

    @property
    def n_inputs(self):
        return self.grad.shape[2]
