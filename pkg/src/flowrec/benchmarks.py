"""Closed-form incompressible Navier-Stokes solutions.

These stand in for CFD reference datasets at desk scale: they provide exact
(u, p) fields with full first/diagonal-second derivative bundles, serving both
as training-data generators and as the correctness oracle for the residual
evaluator (their residuals vanish identically).
"""

import numpy as np

from .autodiff.jet import Jet
from .physics import FlowRegime


class ManufacturedSolution:
    """Base: exact solution on a natural space(-time) box.

    `evaluate` returns the full Jet bundle (values, first derivatives, diagonal
    second derivatives w.r.t. the regime input layout (t,)x,y[,z])."""

    name = "base"

    def __init__(self, regime, spatial_box, time_interval):
        self.regime = regime
        self.spatial_box = tuple((float(lo), float(hi)) for lo, hi in spatial_box)
        self.time_interval = (
            None if time_interval is None else (float(time_interval[0]), float(time_interval[1]))
        )

    def evaluate(self, points) -> Jet:
        raise NotImplementedError

    def velocity_pressure(self, points):
        jet = self.evaluate(points)
        nv = self.regime.n_vel
        return jet.value[:, :nv], jet.value[:, nv]

    def _check_points(self, points):
        pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
        if pts.shape[1] != self.regime.n_inputs:
            raise ValueError(
                f"{self.name} expects {self.regime.n_inputs} coordinates, got {pts.shape[1]}"
            )
        return pts


class Kovasznay(ManufacturedSolution):
    """Steady 2D wake-like flow; inputs (x, y), outputs (u, v, p)."""

    name = "kovasznay"

    def __init__(self, re=40.0, spatial_box=((0.0, 1.0), (0.0, 1.0))):
        super().__init__(FlowRegime("steady2d", re), spatial_box, None)
        self.lam = re / 2.0 - np.sqrt(re * re / 4.0 + 4.0 * np.pi * np.pi)

    def evaluate(self, points):
        pts = self._check_points(points)
        x, y = pts[:, 0], pts[:, 1]
        lam, b = self.lam, 2.0 * np.pi
        E = np.exp(lam * x)
        E2 = np.exp(2.0 * lam * x)
        c = np.cos(b * y)
        s = np.sin(b * y)
        n = pts.shape[0]
        val = np.empty((n, 3))
        grad = np.empty((n, 3, 2))
        lap = np.empty((n, 3, 2))
        # u = 1 - E c
        val[:, 0] = 1.0 - E * c
        grad[:, 0, 0] = -lam * E * c
        grad[:, 0, 1] = b * E * s
        lap[:, 0, 0] = -lam * lam * E * c
        lap[:, 0, 1] = b * b * E * c
        # v = (lam/b) E s
        val[:, 1] = (lam / b) * E * s
        grad[:, 1, 0] = (lam * lam / b) * E * s
        grad[:, 1, 1] = lam * E * c
        lap[:, 1, 0] = (lam**3 / b) * E * s
        lap[:, 1, 1] = -lam * b * E * s
        # p = (1 - E^2) / 2
        val[:, 2] = 0.5 * (1.0 - E2)
        grad[:, 2, 0] = -lam * E2
        grad[:, 2, 1] = 0.0
        lap[:, 2, 0] = -2.0 * lam * lam * E2
        lap[:, 2, 1] = 0.0
        return Jet(value=val, grad=grad, lap=lap)


class TaylorGreen2D(ManufacturedSolution):
    """Decaying 2D vortex array; inputs (t, x, y), outputs (u, v, p)."""

    name = "taylor_green"

    def __init__(self, re=100.0, spatial_box=((0.0, 2.0 * np.pi), (0.0, 2.0 * np.pi)),
                 time_interval=(0.0, 1.0)):
        super().__init__(FlowRegime("unsteady2d", re), spatial_box, time_interval)

    def evaluate(self, points):
        pts = self._check_points(points)
        t, x, y = pts[:, 0], pts[:, 1], pts[:, 2]
        re = self.regime.reynolds
        k1 = 2.0 / re
        F = np.exp(-k1 * t)
        F2 = F * F
        cx, sx = np.cos(x), np.sin(x)
        cy, sy = np.cos(y), np.sin(y)
        c2x, s2x = np.cos(2.0 * x), np.sin(2.0 * x)
        c2y, s2y = np.cos(2.0 * y), np.sin(2.0 * y)
        n = pts.shape[0]
        val = np.empty((n, 3))
        grad = np.empty((n, 3, 3))
        lap = np.empty((n, 3, 3))
        # u = -cos x sin y F
        u = -cx * sy * F
        val[:, 0] = u
        grad[:, 0, 0] = -k1 * u
        grad[:, 0, 1] = sx * sy * F
        grad[:, 0, 2] = -cx * cy * F
        lap[:, 0, 0] = k1 * k1 * u
        lap[:, 0, 1] = -u
        lap[:, 0, 2] = -u
        # v = sin x cos y F
        v = sx * cy * F
        val[:, 1] = v
        grad[:, 1, 0] = -k1 * v
        grad[:, 1, 1] = cx * cy * F
        grad[:, 1, 2] = -sx * sy * F
        lap[:, 1, 0] = k1 * k1 * v
        lap[:, 1, 1] = -v
        lap[:, 1, 2] = -v
        # p = -(cos 2x + cos 2y)/4 F^2
        p = -0.25 * (c2x + c2y) * F2
        val[:, 2] = p
        grad[:, 2, 0] = -2.0 * k1 * p
        grad[:, 2, 1] = 0.5 * s2x * F2
        grad[:, 2, 2] = 0.5 * s2y * F2
        lap[:, 2, 0] = 4.0 * k1 * k1 * p
        lap[:, 2, 1] = c2x * F2
        lap[:, 2, 2] = c2y * F2
        return Jet(value=val, grad=grad, lap=lap)


class Beltrami3D(ManufacturedSolution):
    """Exponential-trigonometric 3D flow with temporal decay exp(-d^2 t / Re);
    inputs (t, x, y, z), outputs (u, v, w, p).

    The pressure equals -|u|^2/2, so its derivative bundle is assembled
    exactly from the velocity bundle by the product rule.
    """

    name = "beltrami"

    def __init__(self, a=1.0, d=1.0, re=1.0,
                 spatial_box=((-1.0, 1.0), (-1.0, 1.0), (-1.0, 1.0)),
                 time_interval=(0.0, 1.0)):
        super().__init__(FlowRegime("unsteady3d", re), spatial_box, time_interval)
        self.a = float(a)
        self.d = float(d)

    def evaluate(self, points):
        pts = self._check_points(points)
        t = pts[:, 0]
        xyz = [pts[:, 1], pts[:, 2], pts[:, 3]]
        a, d = self.a, self.d
        nu = 1.0 / self.regime.reynolds
        k = nu * d * d
        G = np.exp(-k * t)
        n = pts.shape[0]
        val = np.empty((n, 4))
        grad = np.empty((n, 4, 4))
        lap = np.empty((n, 4, 4))
        # velocity component aligned with axis i uses the cyclic triple (i, j, k2)
        for i in range(3):
            j, k2 = (i + 1) % 3, (i + 2) % 3
            xi, xj, xk = xyz[i], xyz[j], xyz[k2]
            E1 = np.exp(a * xi)
            E2 = np.exp(a * xk)
            s1 = np.sin(a * xj + d * xk)
            c1 = np.cos(a * xj + d * xk)
            s2 = np.sin(a * xi + d * xj)
            c2 = np.cos(a * xi + d * xj)
            T1, T2 = E1 * s1, E2 * c2
            vel = -a * (T1 + T2) * G
            val[:, i] = vel
            grad[:, i, 0] = -k * vel
            lap[:, i, 0] = k * k * vel
            gi = -a * (a * T1 - a * E2 * s2) * G
            gj = -a * (a * E1 * c1 - d * E2 * s2) * G
            gk = -a * (d * E1 * c1 + a * T2) * G
            li = -a * (a * a * T1 - a * a * T2) * G
            lj = -a * (-a * a * T1 - d * d * T2) * G
            lk = -a * (-d * d * T1 + a * a * T2) * G
            for axis, g_val, l_val in ((i, gi, li), (j, gj, lj), (k2, gk, lk)):
                grad[:, i, 1 + axis] = g_val
                lap[:, i, 1 + axis] = l_val
        # p = -(u^2 + v^2 + w^2)/2, differentiated by the product rule
        val[:, 3] = -0.5 * (val[:, 0] ** 2 + val[:, 1] ** 2 + val[:, 2] ** 2)
        for ax in range(4):
            grad[:, 3, ax] = -(
                val[:, 0] * grad[:, 0, ax]
                + val[:, 1] * grad[:, 1, ax]
                + val[:, 2] * grad[:, 2, ax]
            )
            lap[:, 3, ax] = -(
                grad[:, 0, ax] ** 2 + val[:, 0] * lap[:, 0, ax]
                + grad[:, 1, ax] ** 2 + val[:, 1] * lap[:, 1, ax]
                + grad[:, 2, ax] ** 2 + val[:, 2] * lap[:, 2, ax]
            )
        return Jet(value=val, grad=grad, lap=lap)


_SOLUTIONS = {
    "kovasznay": Kovasznay,
    "taylor_green": TaylorGreen2D,
    "beltrami": Beltrami3D,
}


def get_solution(name, **kwargs) -> ManufacturedSolution:
    try:
        cls = _SOLUTIONS[name]
    except KeyError:
        raise ValueError(
            f"unknown benchmark {name!r} (available: {sorted(_SOLUTIONS)})"
        ) from None
    return cls(**kwargs)


def solution_names():
    return sorted(_SOLUTIONS)


def grid_points(solution, nx, n_snapshots=1):
    """Uniform evaluation grid in the regime input layout, t outermost then
    row-major over space; returns (points, row_count)."""
    axes = [np.linspace(lo, hi, nx) for lo, hi in solution.spatial_box]
    if solution.time_interval is not None:
        if n_snapshots < 1:
            raise ValueError("need at least one snapshot")
        t0, t1 = solution.time_interval
        ts = np.linspace(t0, t1, n_snapshots) if n_snapshots > 1 else np.array([t0])
        axes = [ts] + axes
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([m.ravel() for m in mesh], axis=1)
    return pts


def make_reference_grid(solution, nx, n_snapshots, path):
    """Sample the solution on a uniform grid and write the reference CSV.

    Columns: t,x,y[,z],u,v[,w],p with t identically zero for steady flows.
    Regeneration is byte-identical for the same spec.  Returns the row count.
    """
    from .decomposition import write_reference_csv

    pts = grid_points(solution, nx, n_snapshots)
    vel, p = solution.velocity_pressure(pts)
    write_reference_csv(path, solution.regime, pts, vel, p)
    return pts.shape[0]
