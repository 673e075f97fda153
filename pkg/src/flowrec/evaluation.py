"""Global-field assembly and error metrics.

Predictions are stitched point-by-point from the interior owner's expert
(half-open ownership, never ghost regions).  Pressure is gauge-aligned before
scoring: master-owned predictions are pinned by subtracting the expert's own
anchor pressure, then the per-snapshot spatial mean is removed from both the
prediction and the reference.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .decomposition import owner_ranks
from .network import predict


@dataclass
class StitchedField:
    """Evaluation points with stitched predictions and per-point provenance."""

    regime: object
    points: np.ndarray
    values: np.ndarray  # (n, n_vel + 1): velocity columns then pressure
    owners: np.ndarray  # rank index per point
    experts: dict  # rank -> ExpertParams (used for anchor evaluation)

    @property
    def velocity(self):
        return self.values[:, : self.regime.n_vel]

    @property
    def pressure(self):
        return self.values[:, self.regime.p_channel]


def stitch(experts, subdomains, points) -> StitchedField:
    """Evaluate each point with its interior owner's expert only."""
    spec0 = subdomains[0]
    domain = spec0.domain
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    owners = owner_ranks(domain, spec0.spatial_counts, spec0.time_splits, pts)
    values = np.empty((pts.shape[0], domain.regime.n_outputs))
    for r in np.unique(owners):
        mask = owners == r
        values[mask] = predict(experts[int(r)], pts[mask])
    return StitchedField(
        regime=domain.regime, points=pts, values=values, owners=owners, experts=experts
    )


def _snapshot_groups(regime, points):
    """Index groups per time snapshot (one group for steady fields)."""
    if not regime.has_time:
        return [(None, np.arange(points.shape[0]))]
    t = points[:, 0]
    return [(tv, np.flatnonzero(t == tv)) for tv in np.unique(t)]


def align_pressure(stitched: StitchedField, reference_pressure, masters, anchor):
    """Gauge-align the stitched pressure against the reference.

    Master-owned points get the owner's instantaneous anchor pressure
    subtracted; slave-owned predictions pass through raw (their gauge was
    aligned during training).  Then the per-snapshot spatial mean is removed
    from both fields.  Returns (pred_aligned, ref_aligned).
    """
    p_ref = np.asarray(reference_pressure, dtype=np.float64)
    if p_ref.shape != (stitched.points.shape[0],):
        raise ValueError("reference pressure must align with the evaluation points")
    p_pred = stitched.pressure.copy()
    p_ref = p_ref.copy()
    regime = stitched.regime
    anchor = np.asarray(anchor, dtype=np.float64).ravel()
    for r in masters:
        mask = stitched.owners == r
        if not np.any(mask):
            continue
        if r not in stitched.experts:
            raise ValueError(f"no expert available to evaluate the anchor for rank {r}")
        if regime.has_time:
            ts = stitched.points[mask, 0]
            anchor_pts = np.column_stack([ts, np.tile(anchor, (ts.size, 1))])
        else:
            anchor_pts = np.tile(anchor, (int(mask.sum()), 1))
        p_anchor = predict(stitched.experts[r], anchor_pts)[:, regime.p_channel]
        p_pred[mask] -= p_anchor
    for _, idx in _snapshot_groups(regime, stitched.points):
        p_pred[idx] -= p_pred[idx].mean()
        p_ref[idx] -= p_ref[idx].mean()
    return p_pred, p_ref


def relative_l2(pred, ref):
    """||pred - ref||_2 / ||ref||_2 over all provided values."""
    pred = np.asarray(pred, dtype=np.float64).ravel()
    ref = np.asarray(ref, dtype=np.float64).ravel()
    if pred.shape != ref.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {ref.shape}")
    den = float(np.linalg.norm(ref))
    if den == 0.0:
        raise ValueError("relative L2 error is undefined for a zero reference")
    return float(np.linalg.norm(pred - ref)) / den


def field_errors(stitched: StitchedField, reference, masters, anchor):
    """Relative L2 errors per variable, plus combined velocity and aligned
    pressure.  `reference` is a decomposition.ReferenceTable on the same points."""
    regime = stitched.regime
    if reference.n != stitched.points.shape[0]:
        raise ValueError("reference table does not match the evaluation points")
    out = {}
    for c, name in enumerate(regime.velocity_names):
        out[name] = relative_l2(stitched.velocity[:, c], reference.velocity[:, c])
    out["vel"] = relative_l2(stitched.velocity, reference.velocity)
    if reference.pressure is not None:
        p_pred, p_ref = align_pressure(stitched, reference.pressure, masters, anchor)
        out["p"] = relative_l2(p_pred, p_ref)
    return out


@dataclass
class ErrorSeries:
    """Per-snapshot relative errors with the norm pieces needed to reproduce
    the all-points error exactly."""

    variable: str
    times: np.ndarray
    errors: np.ndarray
    sq_num: np.ndarray  # per-snapshot ||pred - ref||^2
    sq_den: np.ndarray  # per-snapshot ||ref||^2

    def aggregate(self):
        """Norm-weighted aggregation across snapshots == global relative L2."""
        return float(np.sqrt(np.sum(self.sq_num) / np.sum(self.sq_den)))


def error_over_time(stitched: StitchedField, reference, masters, anchor):
    """Relative L2 per snapshot per variable (velocity components, combined
    velocity, aligned pressure)."""
    regime = stitched.regime
    if reference.n != stitched.points.shape[0]:
        raise ValueError("reference table does not match the evaluation points")
    groups = _snapshot_groups(regime, stitched.points)
    fields = {
        name: (stitched.velocity[:, c], reference.velocity[:, c])
        for c, name in enumerate(regime.velocity_names)
    }
    fields["vel"] = (stitched.velocity, reference.velocity)
    if reference.pressure is not None:
        fields["p"] = align_pressure(stitched, reference.pressure, masters, anchor)
    series = {}
    for name, (pred, ref) in fields.items():
        times, errs, nums, dens = [], [], [], []
        for tv, idx in groups:
            dp = np.asarray(pred)[idx] - np.asarray(ref)[idx]
            num = float(np.sum(dp * dp))
            den = float(np.sum(np.asarray(ref)[idx] ** 2))
            if den == 0.0:
                raise ValueError(f"zero reference norm for {name} at snapshot {tv}")
            times.append(0.0 if tv is None else tv)
            errs.append(np.sqrt(num / den))
            nums.append(num)
            dens.append(den)
        series[name] = ErrorSeries(
            variable=name,
            times=np.array(times),
            errors=np.array(errs),
            sq_num=np.array(nums),
            sq_den=np.array(dens),
        )
    return series


def subdomain_pressure_offsets(stitched: StitchedField, reference_pressure, masters, anchor):
    """Per-snapshot, per-rank mean pressure offset after gauge alignment.

    Returns (times, offsets (n_snapshots, n_ranks), spread (n_snapshots,)) with
    spread = max - min of the offsets across ranks; a residual inter-domain
    gauge mismatch shows up directly in the spread.
    """
    p_pred, p_ref = align_pressure(stitched, reference_pressure, masters, anchor)
    ranks = np.unique(stitched.owners)
    groups = _snapshot_groups(stitched.regime, stitched.points)
    times = np.array([0.0 if tv is None else tv for tv, _ in groups])
    offsets = np.empty((len(groups), ranks.size))
    for si, (_, idx) in enumerate(groups):
        d = p_pred[idx] - p_ref[idx]
        own = stitched.owners[idx]
        for ri, r in enumerate(ranks):
            sel = own == r
            if not np.any(sel):
                raise ValueError(f"rank {r} owns no evaluation points in snapshot {si}")
            offsets[si, ri] = float(d[sel].mean())
    spread = offsets.max(axis=1) - offsets.min(axis=1)
    return times, offsets, spread


# -- interface continuity -------------------------------------------------------


@dataclass(frozen=True)
class ProbeSpec:
    n_per_interface: int = 256
    eps_frac: float = 1e-4  # offset as a fraction of the interface axis extent
    seed: int = 0


@dataclass(frozen=True)
class InterfaceJump:
    rank_a: int
    rank_b: int
    kind: str
    axis: int  # layout axis index
    max_jump_u: float
    max_jump_p: float


def interface_jump(experts, subdomains, probes: ProbeSpec = ProbeSpec()):
    """Max |field(A side) - field(B side)| across each interface at +-eps.

    Probe points sit on the shared face, offset by eps_frac of the split
    axis's global extent into each owner's interior.
    """
    spec_by_rank = {s.rank_index: s for s in subdomains}
    domain = subdomains[0].domain
    regime = domain.regime
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([probes.seed, 5])))
    seen = set()
    out = []
    for s in subdomains:
        for g in s.ghosts:
            pair = (min(s.rank_index, g.neighbor), max(s.rank_index, g.neighbor), g.kind)
            if pair in seen:
                continue
            seen.add(pair)
            nb = spec_by_rank[g.neighbor]
            lo_rank, hi_rank = sorted((s, nb), key=lambda q: (q.time_slot, q.cell))
            intervals = s.interior.intervals()
            n_axes = len(intervals)
            if g.kind == "temporal":
                axis = 0
                face = lo_rank.interior.time[1]
                glo, ghi = domain.time_interval
            else:
                # split axis: the one where the two cells differ
                sp_axis = next(
                    a for a in range(len(s.cell)) if lo_rank.cell[a] != hi_rank.cell[a]
                )
                axis = sp_axis + (1 if regime.has_time else 0)
                face = lo_rank.interior.spatial[sp_axis][1]
                glo, ghi = domain.spatial_box[sp_axis]
            eps = probes.eps_frac * (ghi - glo)
            pts = np.empty((probes.n_per_interface, n_axes))
            for a, (lo, hi) in enumerate(intervals):
                pts[:, a] = rng.uniform(lo, hi, size=probes.n_per_interface)
            lo_pts = pts.copy()
            hi_pts = pts.copy()
            lo_pts[:, axis] = face - eps
            hi_pts[:, axis] = face + eps
            va = predict(experts[lo_rank.rank_index], lo_pts)
            vb = predict(experts[hi_rank.rank_index], hi_pts)
            d = np.abs(va - vb)
            out.append(
                InterfaceJump(
                    rank_a=lo_rank.rank_index,
                    rank_b=hi_rank.rank_index,
                    kind=g.kind,
                    axis=axis,
                    max_jump_u=float(d[:, : regime.n_vel].max()),
                    max_jump_p=float(d[:, regime.p_channel].max()),
                )
            )
    out.sort(key=lambda j: (j.rank_a, j.rank_b, j.kind))
    return out


# -- reports ------------------------------------------------------------------------


def aggregate_seed_errors(per_seed):
    """mean (and std when >= 2 seeds) per variable across seed runs."""
    out = {}
    for var in per_seed[0]:
        vals = np.array([d[var] for d in per_seed])
        out[var] = (float(vals.mean()), float(vals.std(ddof=0)) if len(vals) > 1 else None)
    return out


def write_metrics_csv(path, rows):
    """rows: (variable, seed, n_ranks, decomposition_label, relative_l2)"""
    with open(path, "w") as f:
        f.write("variable,seed,P,decomposition,relative_l2\n")
        for var, seed, p, label, err in rows:
            f.write(f"{var},{seed},{p},{label},{err:.12g}\n")


def write_snapshot_csv(path, rows):
    """rows: (seed, variable, t, relative_l2)"""
    with open(path, "w") as f:
        f.write("seed,variable,t,relative_l2\n")
        for seed, var, t, err in rows:
            f.write(f"{seed},{var},{t:.12g},{err:.12g}\n")


def write_interface_csv(path, jumps, seed=None):
    with open(path, "w") as f:
        f.write("seed,rank_a,rank_b,kind,axis,max_jump_u,max_jump_p\n")
        for j in jumps:
            f.write(
                f"{'' if seed is None else seed},{j.rank_a},{j.rank_b},{j.kind},"
                f"{j.axis},{j.max_jump_u:.12g},{j.max_jump_p:.12g}\n"
            )
