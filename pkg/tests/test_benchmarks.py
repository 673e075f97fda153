"""Manufactured solutions: residual gate, derivative bundles, reference grids."""

import numpy as np
import pytest

from flowrec import benchmarks as bm
from flowrec.decomposition import read_reference_csv
from flowrec.physics import ns_residuals

from oracles import fd_jet


def random_points(sol, n, seed=0):
    rng = np.random.default_rng(seed)
    cols = []
    if sol.time_interval is not None:
        cols.append(rng.uniform(*sol.time_interval, size=n))
    for lo, hi in sol.spatial_box:
        cols.append(rng.uniform(lo, hi, size=n))
    return np.stack(cols, axis=1)


def test_unknown_solution():
    with pytest.raises(ValueError, match="unknown benchmark"):
        bm.get_solution("poiseuille")


def test_kovasznay_at_origin():
    sol = bm.get_solution("kovasznay", re=40.0)
    vel, p = sol.velocity_pressure(np.array([[0.0, 0.0]]))
    assert vel[0, 0] == 0.0
    assert vel[0, 1] == 0.0
    assert p[0] == 0.0


def test_kovasznay_lambda_cross_check():
    re = 40.0
    sol = bm.get_solution("kovasznay", re=re)
    # independent evaluation of the same closed form
    lam = 0.5 * re - np.sqrt(0.25 * re * re + 4.0 * np.pi**2)
    assert sol.lam == pytest.approx(lam, rel=0, abs=0)
    # and its defining quadratic: lam^2 - re*lam - 4 pi^2 = 0
    assert lam * lam - re * lam - 4 * np.pi**2 == pytest.approx(0.0, abs=1e-9)


def test_taylor_green_quarter_pi():
    sol = bm.get_solution("taylor_green", re=100.0)
    vel, p = sol.velocity_pressure(np.array([[0.0, np.pi / 2, np.pi / 2]]))
    assert abs(vel[0, 0]) <= 1e-16
    assert abs(vel[0, 1]) <= 1e-16
    assert p[0] == pytest.approx(0.5, abs=1e-15)


@pytest.mark.parametrize(
    "name,kwargs",
    [
        ("kovasznay", {"re": 40.0}),
        ("taylor_green", {"re": 100.0}),
        ("beltrami", {"a": 1.0, "d": 1.0, "re": 1.0}),
    ],
)
def test_residual_gate(name, kwargs):
    sol = bm.get_solution(name, **kwargs)
    pts = random_points(sol, 10000, seed=1)
    r = ns_residuals(sol.evaluate(pts), sol.regime)
    assert np.max(np.abs(r[:, -1])) <= 1e-12  # continuity
    assert np.max(np.abs(r[:, :-1])) <= 1e-10  # momentum


@pytest.mark.parametrize("name", ["kovasznay", "taylor_green", "beltrami"])
def test_derivatives_match_finite_differences(name):
    sol = bm.get_solution(name)
    pts = random_points(sol, 40, seed=2)
    jet = sol.evaluate(pts)
    g_fd, l_fd = fd_jet(lambda q: sol.evaluate(q).value, pts, h=1e-4)
    # per output/axis relative scale: FD noise floors near 1e-8 absolute
    scale_g = max(1.0, float(np.max(np.abs(jet.grad))))
    scale_l = max(1.0, float(np.max(np.abs(jet.lap))))
    assert np.max(np.abs(jet.grad - g_fd)) / scale_g <= 1e-8
    assert np.max(np.abs(jet.lap - l_fd)) / scale_l <= 1e-8


def test_reference_grid_row_convention(tmp_path):
    sol = bm.get_solution("kovasznay", re=40.0)
    path = tmp_path / "ref.csv"
    n = bm.make_reference_grid(sol, 257, 1, path)
    assert n == 257 * 257 == 66049
    with open(path) as f:
        header = f.readline().strip()
    assert header == "t,x,y,u,v,p"
    # loadable and consistent
    table = read_reference_csv(path, sol.regime)
    assert table.n == 66049
    assert table.pressure is not None


def test_reference_grid_two_by_two(tmp_path):
    sol = bm.get_solution("kovasznay", re=40.0)
    path = tmp_path / "tiny.csv"
    n = bm.make_reference_grid(sol, 2, 1, path)
    assert n == 4
    table = read_reference_csv(path, sol.regime)
    corners = {(0.0, 0.0), (0.0, 1.0), (1.0, 0.0), (1.0, 1.0)}
    assert {tuple(p) for p in table.points} == corners


def test_reference_grid_reproducible_bytes(tmp_path):
    sol = bm.get_solution("taylor_green")
    p1 = tmp_path / "a.csv"
    p2 = tmp_path / "b.csv"
    bm.make_reference_grid(sol, 9, 3, p1)
    bm.make_reference_grid(sol, 9, 3, p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_unsteady_grid_has_snapshots(tmp_path):
    sol = bm.get_solution("taylor_green")
    path = tmp_path / "tg.csv"
    n = bm.make_reference_grid(sol, 5, 4, path)
    assert n == 4 * 25
    table = read_reference_csv(path, sol.regime)
    assert len(np.unique(table.points[:, 0])) == 4


def test_beltrami_spans_natural_domain():
    sol = bm.get_solution("beltrami")
    assert sol.spatial_box == ((-1.0, 1.0), (-1.0, 1.0), (-1.0, 1.0))
    assert sol.time_interval == (0.0, 1.0)
    pts = random_points(sol, 10, seed=3)
    jet = sol.evaluate(pts)
    assert jet.value.shape == (10, 4)
    assert np.all(np.isfinite(jet.value))
