"""Space-time partitioning into rank subdomains with ghost layers.

The global box is split into an equal-size grid of K spatial cells times M
time slots.  Each subdomain's extension (interior dilated by the ghost
thickness, clipped to the global domain) is intersected with face-adjacent
neighbors' interiors to produce ghost components; corner-only overlaps are
excluded.  Interior membership uses half-open intervals [lo, hi) per axis,
closed at the global upper boundary, which makes point ownership a partition.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .physics import FlowRegime


# -- geometry -----------------------------------------------------------------


@dataclass(frozen=True)
class Region:
    """Axis-aligned box: spatial intervals plus an optional time interval."""

    spatial: tuple
    time: Optional[tuple] = None

    def __post_init__(self):
        object.__setattr__(
            self, "spatial", tuple((float(a), float(b)) for a, b in self.spatial)
        )
        if self.time is not None:
            object.__setattr__(self, "time", (float(self.time[0]), float(self.time[1])))

    @property
    def has_time(self):
        return self.time is not None

    def intervals(self):
        """Intervals in point-layout order: (t,) then spatial axes."""
        iv = list(self.spatial)
        if self.time is not None:
            iv = [self.time] + iv
        return iv

    def contains(self, points, tol=0.0):
        """Closed-interval membership per point (layout order columns)."""
        pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
        iv = self.intervals()
        if pts.shape[1] != len(iv):
            raise ValueError(f"points have {pts.shape[1]} columns, region has {len(iv)} axes")
        ok = np.ones(pts.shape[0], dtype=bool)
        for j, (lo, hi) in enumerate(iv):
            ok &= (pts[:, j] >= lo - tol) & (pts[:, j] <= hi + tol)
        return ok

    def is_subset_of(self, other, tol=1e-12):
        for (a0, a1), (b0, b1) in zip(self.intervals(), other.intervals()):
            if a0 < b0 - tol or a1 > b1 + tol:
                return False
        return True

    def sample_uniform(self, n, rng):
        """n uniform points in layout order."""
        iv = self.intervals()
        out = np.empty((n, len(iv)))
        for j, (lo, hi) in enumerate(iv):
            out[:, j] = rng.uniform(lo, hi, size=n)
        return out


@dataclass(frozen=True)
class GlobalDomain:
    regime: FlowRegime
    spatial_box: tuple
    time_interval: Optional[tuple] = None

    def __post_init__(self):
        object.__setattr__(
            self, "spatial_box", tuple((float(a), float(b)) for a, b in self.spatial_box)
        )
        if len(self.spatial_box) != self.regime.n_space:
            raise ValueError(
                f"{self.regime.kind} needs {self.regime.n_space} spatial axes, "
                f"got {len(self.spatial_box)}"
            )
        for lo, hi in self.spatial_box:
            if not lo < hi:
                raise ValueError(f"degenerate spatial interval [{lo}, {hi}]")
        if self.regime.has_time:
            if self.time_interval is None:
                raise ValueError("unsteady regime needs a time interval")
            t0, t1 = float(self.time_interval[0]), float(self.time_interval[1])
            if not t0 < t1:
                raise ValueError(f"degenerate time interval [{t0}, {t1}]")
            object.__setattr__(self, "time_interval", (t0, t1))
        elif self.time_interval is not None:
            raise ValueError("steady regime must not carry a time interval")

    @classmethod
    def from_solution(cls, solution):
        return cls(solution.regime, solution.spatial_box, solution.time_interval)

    def region(self):
        return Region(self.spatial_box, self.time_interval)


@dataclass(frozen=True)
class GhostComponent:
    region: Region
    neighbor: int
    kind: str  # "spatial" | "temporal"


@dataclass(frozen=True)
class SubdomainSpec:
    rank_index: int
    cell: tuple  # spatial cell indices
    time_slot: int
    spatial_counts: tuple
    time_splits: int
    domain: GlobalDomain
    interior: Region
    extended: Region
    ghosts: tuple

    @property
    def n_ranks(self):
        return int(np.prod(self.spatial_counts)) * self.time_splits

    @property
    def label(self):
        return "x".join(str(c) for c in self.spatial_counts) + f"t{self.time_splits}"


def _axis_edges(lo, hi, count):
    return np.linspace(lo, hi, count + 1)


def partition(domain: GlobalDomain, spatial_counts, time_splits=1,
              delta_space=0.0, delta_time=0.0):
    """Split the domain into prod(spatial_counts) x time_splits subdomains."""
    counts = tuple(int(c) for c in np.atleast_1d(spatial_counts))
    if len(counts) != domain.regime.n_space:
        raise ValueError(
            f"need {domain.regime.n_space} spatial counts, got {len(counts)}"
        )
    if any(c < 1 for c in counts) or time_splits < 1:
        raise ValueError("partition counts must be >= 1")
    if delta_space < 0 or delta_time < 0:
        raise ValueError("ghost thickness must be nonnegative")
    if not domain.regime.has_time and time_splits != 1:
        raise ValueError("steady regime cannot be split in time")

    edges = [_axis_edges(lo, hi, c) for (lo, hi), c in zip(domain.spatial_box, counts)]
    for (lo, hi), c in zip(domain.spatial_box, counts):
        extent = (hi - lo) / c
        if c > 1 and delta_space >= extent:
            raise ValueError(
                f"delta_space={delta_space} >= subdomain extent {extent}; the ghost "
                "layer would swallow a neighbor"
            )
    if domain.regime.has_time:
        t0, t1 = domain.time_interval
        t_edges = _axis_edges(t0, t1, time_splits)
        t_extent = (t1 - t0) / time_splits
        if time_splits > 1 and delta_time >= t_extent:
            raise ValueError(
                f"delta_time={delta_time} >= time-slot extent {t_extent}; the ghost "
                "layer would swallow a neighbor"
            )
    else:
        t_edges = None

    k_total = int(np.prod(counts))

    def rank_of(cell, m):
        return m * k_total + int(np.ravel_multi_index(cell, counts))

    subdomains = []
    for m in range(time_splits):
        t_int = None if t_edges is None else (t_edges[m], t_edges[m + 1])
        for cell in np.ndindex(*counts):
            spatial_int = tuple(
                (edges[a][i], edges[a][i + 1]) for a, i in enumerate(cell)
            )
            interior = Region(spatial_int, t_int)
            ext_spatial = tuple(
                (max(lo - delta_space, domain.spatial_box[a][0]),
                 min(hi + delta_space, domain.spatial_box[a][1]))
                for a, (lo, hi) in enumerate(spatial_int)
            )
            if t_int is None:
                ext_time = None
            else:
                ext_time = (
                    max(t_int[0] - delta_time, domain.time_interval[0]),
                    min(t_int[1] + delta_time, domain.time_interval[1]),
                )
            extended = Region(ext_spatial, ext_time)

            ghosts = []
            if delta_space > 0:
                for a in range(len(counts)):
                    for direction in (-1, 1):
                        ni = cell[a] + direction
                        if not 0 <= ni < counts[a]:
                            continue
                        lo, hi = spatial_int[a]
                        band = (hi, hi + delta_space) if direction > 0 else (lo - delta_space, lo)
                        g_spatial = tuple(
                            band if b == a else spatial_int[b] for b in range(len(counts))
                        )
                        n_cell = tuple(
                            ni if b == a else cell[b] for b in range(len(counts))
                        )
                        ghosts.append(
                            GhostComponent(
                                region=Region(g_spatial, t_int),
                                neighbor=rank_of(n_cell, m),
                                kind="spatial",
                            )
                        )
            if t_int is not None and delta_time > 0:
                for direction in (-1, 1):
                    nm = m + direction
                    if not 0 <= nm < time_splits:
                        continue
                    band = (
                        (t_int[1], t_int[1] + delta_time)
                        if direction > 0
                        else (t_int[0] - delta_time, t_int[0])
                    )
                    ghosts.append(
                        GhostComponent(
                            region=Region(spatial_int, band),
                            neighbor=rank_of(cell, nm),
                            kind="temporal",
                        )
                    )
            subdomains.append(
                SubdomainSpec(
                    rank_index=rank_of(cell, m),
                    cell=tuple(int(i) for i in cell),
                    time_slot=m,
                    spatial_counts=counts,
                    time_splits=time_splits,
                    domain=domain,
                    interior=interior,
                    extended=extended,
                    ghosts=tuple(ghosts),
                )
            )
    subdomains.sort(key=lambda s: s.rank_index)
    return subdomains


def _owner_index_1d(x, lo, hi, count):
    """Half-open cell index per axis, closed at the global top boundary."""
    idx = np.floor((np.asarray(x) - lo) / (hi - lo) * count).astype(np.int64)
    return np.clip(idx, 0, count - 1)


def owner_ranks(domain: GlobalDomain, spatial_counts, time_splits, points):
    """Rank index owning each point (layout-order columns); raises if any point
    lies outside the global domain."""
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    counts = tuple(int(c) for c in np.atleast_1d(spatial_counts))
    region = domain.region()
    inside = region.contains(pts)
    if not np.all(inside):
        j = int(np.argmin(inside))
        raise ValueError(f"point {pts[j]} lies outside the global domain")
    off = 1 if domain.regime.has_time else 0
    cell_idx = [
        _owner_index_1d(pts[:, off + a], lo, hi, counts[a])
        for a, (lo, hi) in enumerate(domain.spatial_box)
    ]
    cell_lin = np.ravel_multi_index(cell_idx, counts)
    if domain.regime.has_time:
        t0, t1 = domain.time_interval
        m = _owner_index_1d(pts[:, 0], t0, t1, time_splits)
    else:
        m = np.zeros(pts.shape[0], dtype=np.int64)
    return m * int(np.prod(counts)) + cell_lin


def identify_masters(subdomains, anchor):
    """Ranks whose spatial interior contains the anchor point, one per time slot."""
    spec0 = subdomains[0]
    domain = spec0.domain
    anchor = np.asarray(anchor, dtype=np.float64).ravel()
    if anchor.shape != (domain.regime.n_space,):
        raise ValueError(
            f"anchor needs {domain.regime.n_space} coordinates, got {anchor.shape}"
        )
    for x, (lo, hi) in zip(anchor, domain.spatial_box):
        if not lo <= x <= hi:
            raise ValueError(f"anchor {anchor} lies outside the global spatial box")
    counts = spec0.spatial_counts
    cell = tuple(
        int(_owner_index_1d(np.array([anchor[a]]), lo, hi, counts[a])[0])
        for a, (lo, hi) in enumerate(domain.spatial_box)
    )
    cell_lin = int(np.ravel_multi_index(cell, counts))
    k_total = int(np.prod(counts))
    masters = frozenset(m * k_total + cell_lin for m in range(spec0.time_splits))
    assert len(masters) == spec0.time_splits
    return masters


# -- datasets -------------------------------------------------------------------


@dataclass(frozen=True)
class Budget:
    """Global dataset totals; interior budgets are divided across ranks."""

    n_obs: int
    n_pde: int
    n_ghost_per_interface: int

    def __post_init__(self):
        if min(self.n_obs, self.n_pde, self.n_ghost_per_interface) < 0:
            raise ValueError("budgets must be nonnegative")


@dataclass(frozen=True)
class ObservationSet:
    """Global observation plan: points (layout order) with velocity labels."""

    points: np.ndarray
    velocity: np.ndarray

    def __post_init__(self):
        if self.points.shape[0] != self.velocity.shape[0]:
            raise ValueError("points/velocity row mismatch")

    @property
    def n(self):
        return self.points.shape[0]


@dataclass(frozen=True)
class GhostSet:
    neighbor: int
    kind: str
    points: np.ndarray


@dataclass(frozen=True)
class RankDatasets:
    obs_points: np.ndarray
    obs_velocity: np.ndarray
    colloc_points: np.ndarray
    ghosts: tuple  # GhostSet per ghost component, in spec.ghosts order

    @property
    def n_obs(self):
        return self.obs_points.shape[0]

    @property
    def n_colloc(self):
        return self.colloc_points.shape[0]


def _rank_rng(seed, rank_index, tag):
    return np.random.Generator(
        np.random.PCG64(np.random.SeedSequence([int(seed), int(rank_index), int(tag)]))
    )


def interior_share(total, n_ranks, rank_index):
    """Equal split of a global budget; the first (total % n_ranks) ranks absorb
    the remainder, so the shares sum exactly to the total."""
    base, rem = divmod(int(total), int(n_ranks))
    return base + (1 if rank_index < rem else 0)


def sample_rank_datasets(spec: SubdomainSpec, budget: Budget,
                         observations: ObservationSet, seed,
                         allow_empty_obs=False) -> RankDatasets:
    """Assemble one rank's datasets, deterministic per (spec, seed).

    Observations are the subset of the global plan owned by this rank's
    interior (half-open rule); collocation points are sampled uniformly inside
    the interior with this rank's share of the global budget; each ghost
    component receives exactly budget.n_ghost_per_interface uniform points.
    """
    domain = spec.domain
    if budget.n_obs and observations.n != budget.n_obs:
        raise ValueError(
            f"observation plan has {observations.n} points, budget says {budget.n_obs}"
        )
    owners = owner_ranks(
        domain, spec.spatial_counts, spec.time_splits, observations.points
    ) if observations.n else np.empty(0, dtype=np.int64)
    mine = owners == spec.rank_index
    obs_points = observations.points[mine]
    obs_vel = observations.velocity[mine]
    if obs_points.shape[0] == 0 and budget.n_obs > 0 and not allow_empty_obs:
        raise ValueError(
            f"rank {spec.rank_index} (cell {spec.cell}, slot {spec.time_slot}) has no "
            "observations inside its interior"
        )
    n_mine = interior_share(budget.n_pde, spec.n_ranks, spec.rank_index)
    rng = _rank_rng(seed, spec.rank_index, tag=1)
    colloc = spec.interior.sample_uniform(n_mine, rng)
    grng = _rank_rng(seed, spec.rank_index, tag=2)
    ghosts = tuple(
        GhostSet(
            neighbor=g.neighbor,
            kind=g.kind,
            points=g.region.sample_uniform(budget.n_ghost_per_interface, grng),
        )
        for g in spec.ghosts
    )
    return RankDatasets(
        obs_points=obs_points,
        obs_velocity=obs_vel,
        colloc_points=colloc,
        ghosts=ghosts,
    )


def build_all_rank_datasets(subdomains, budget, observations, seed, allow_empty_obs=False):
    return {
        s.rank_index: sample_rank_datasets(s, budget, observations, seed, allow_empty_obs)
        for s in subdomains
    }


# -- observation plans -----------------------------------------------------------


def grid_observations(table, n_per_axis):
    """Steady-flow plan: the table rows nearest to a uniform n x n target grid."""
    pts = table.points
    targets = [
        np.linspace(pts[:, a].min(), pts[:, a].max(), n_per_axis)
        for a in range(pts.shape[1])
    ]
    mesh = np.meshgrid(*targets, indexing="ij")
    want = np.stack([m.ravel() for m in mesh], axis=1)
    rows = []
    for w in want:
        rows.append(int(np.argmin(np.sum((pts - w) ** 2, axis=1))))
    rows = sorted(set(rows))
    if len(rows) != want.shape[0]:
        raise ValueError(
            f"reference grid too coarse for a {n_per_axis}x{n_per_axis} observation plan"
        )
    idx = np.array(rows)
    return ObservationSet(points=pts[idx], velocity=table.velocity[idx])


def snapshot_observations(table, per_snapshot, seed):
    """Unsteady plan: `per_snapshot` random reference rows at every snapshot."""
    t = table.points[:, 0]
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), 3])))
    parts = []
    for tv in np.unique(t):
        rows = np.flatnonzero(t == tv)
        if rows.size < per_snapshot:
            raise ValueError(
                f"snapshot t={tv} has {rows.size} reference rows, need {per_snapshot}"
            )
        parts.append(np.sort(rng.choice(rows, size=per_snapshot, replace=False)))
    idx = np.concatenate(parts)
    return ObservationSet(points=table.points[idx], velocity=table.velocity[idx])


# -- ghost sampling diagnostic ----------------------------------------------------


@dataclass(frozen=True)
class GhostDiagnostic:
    mismatch_selected: float
    mismatch_fresh: float

    @property
    def ratio(self):
        if self.mismatch_selected == 0.0:
            return float("inf") if self.mismatch_fresh > 0 else 1.0
        return self.mismatch_fresh / self.mismatch_selected


def ghost_generalization_diagnostic(expert_predict, neighbor_predict, ghost_region: Region,
                                    selected_points, seed, n_fresh=None) -> GhostDiagnostic:
    """Compare the (u, p) mismatch on the training ghost points against a fresh
    uniform sample of the same layer; a fresh mismatch far above the selected
    one indicates the ghost set is too sparse."""
    selected = np.atleast_2d(np.asarray(selected_points, dtype=np.float64))
    if n_fresh is None:
        n_fresh = selected.shape[0]
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), 4])))
    fresh = ghost_region.sample_uniform(n_fresh, rng)

    def mismatch(pts):
        d = np.atleast_2d(expert_predict(pts)) - np.atleast_2d(neighbor_predict(pts))
        return float(np.mean(np.sum(d * d, axis=1)))

    return GhostDiagnostic(
        mismatch_selected=mismatch(selected),
        mismatch_fresh=mismatch(fresh),
    )


# -- reference CSV ------------------------------------------------------------------


@dataclass(frozen=True)
class ReferenceTable:
    """Reference field samples: points in layout order, velocity, optional p.

    Pressure, when present, is used only for evaluation, never for training.
    """

    regime: FlowRegime
    points: np.ndarray
    velocity: np.ndarray
    pressure: Optional[np.ndarray] = None

    @property
    def n(self):
        return self.points.shape[0]


def _csv_columns(regime: FlowRegime, with_pressure):
    cols = ["t", "x", "y"] + (["z"] if regime.n_space == 3 else [])
    cols += ["u", "v"] + (["w"] if regime.n_vel == 3 else [])
    if with_pressure:
        cols.append("p")
    return cols


def write_reference_csv(path, regime: FlowRegime, points, velocity, pressure=None):
    """Write `t,x,y[,z],u,v[,w][,p]` rows; steady flows carry a constant-zero t."""
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    vel = np.atleast_2d(np.asarray(velocity, dtype=np.float64))
    cols = [pts if regime.has_time else np.zeros((pts.shape[0], 1))]
    if not regime.has_time:
        cols.append(pts)
    cols.append(vel)
    if pressure is not None:
        cols.append(np.asarray(pressure, dtype=np.float64).reshape(-1, 1))
    data = np.hstack(cols)
    header = ",".join(_csv_columns(regime, pressure is not None))
    np.savetxt(path, data, fmt="%.17g", delimiter=",", header=header, comments="")


def read_reference_csv(path, regime: FlowRegime) -> ReferenceTable:
    with open(path) as f:
        header = f.readline().strip().split(",")
    want_no_p = _csv_columns(regime, with_pressure=False)
    want_p = _csv_columns(regime, with_pressure=True)
    if header == want_p:
        has_p = True
    elif header == want_no_p:
        has_p = False
    else:
        raise ValueError(
            f"{path}: header {header} does not match expected {want_p} or {want_no_p}"
        )
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if data.shape[1] != len(header):
        raise ValueError(f"{path}: {data.shape[1]} columns, header lists {len(header)}")
    n_sp = regime.n_space
    pts = data[:, : 1 + n_sp] if regime.has_time else data[:, 1 : 1 + n_sp]
    vel = data[:, 1 + n_sp : 1 + n_sp + regime.n_vel]
    p = data[:, 1 + n_sp + regime.n_vel] if has_p else None
    return ReferenceTable(regime=regime, points=pts, velocity=vel, pressure=p)
