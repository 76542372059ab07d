"""Streamline integration and candidate coordinate construction.

An aligned frame field assigns N direction vectors to each covered bin.
For every way of splitting those vectors into two groups, a candidate
coordinate map u(x) is built: flow along the group-1 vectors sweeps out
a base subspace parameterized by the flow parameters, flow along the
group-2 vectors propagates those parameter values off the base subspace,
and the scattered assignments are resampled onto a regular lattice.  If
the data is a mixture of two independent subsystems, one such map is an
unmixing function (up to componentwise monotone reparameterizations).
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field as dc_field

import numpy as np

from .errors import (
    ConstructionFailure,
    CoverageError,
    DomainError,
    OutOfDomainError,
    ShapeError,
)
from .localframes import FrameField
from .tableio import write_csv

__all__ = [
    "Partition",
    "LatticeSpec",
    "CoordinateMap",
    "TransformedSeries",
    "enumerate_partitions",
    "field_at",
    "trace_streamline",
    "build_coordinate",
    "transform_series",
    "write_coordinate_map",
    "write_isoclines",
]


@dataclass(frozen=True)
class Partition:
    """An unordered split of vector indices into two nonempty groups.

    Canonical form: ``group1`` holds the smallest index, both groups are
    sorted.  Indices are 0-based internally; labels are 1-based.
    """

    group1: tuple
    group2: tuple

    def __post_init__(self):
        g1, g2 = tuple(sorted(self.group1)), tuple(sorted(self.group2))
        if not g1 or not g2:
            raise DomainError("both groups must be nonempty")
        if set(g1) & set(g2):
            raise DomainError("groups must be disjoint")
        if min(g2) < min(g1):
            g1, g2 = g2, g1
        object.__setattr__(self, "group1", g1)
        object.__setattr__(self, "group2", g2)

    @property
    def dims(self) -> int:
        return len(self.group1) + len(self.group2)

    @property
    def key(self) -> str:
        """Compact file-name-safe identifier, 1-based (e.g. ``1_23``)."""
        return "{}_{}".format(
            "".join(str(i + 1) for i in self.group1),
            "".join(str(i + 1) for i in self.group2),
        )

    @property
    def label(self) -> str:
        return "{{{}}}|{{{}}}".format(
            ",".join(str(i + 1) for i in self.group1),
            ",".join(str(i + 1) for i in self.group2),
        )


def enumerate_partitions(n_dims):
    """All unordered two-group partitions of N vector indices.

    There are 2^(N-1) - 1 of them; index 0 always sits in group 1.
    """
    if n_dims < 2:
        raise DomainError(f"need at least 2 dimensions, got {n_dims}")
    rest = list(range(1, n_dims))
    parts = []
    for r in range(0, n_dims - 1):
        for extra in itertools.combinations(rest, r):
            g1 = (0,) + extra
            g2 = tuple(i for i in rest if i not in extra)
            if g2:
                parts.append(Partition(g1, g2))
    return sorted(parts, key=lambda p: p.key)


@dataclass(frozen=True)
class LatticeSpec:
    """Bounds and resolution of the output lattice for a coordinate map."""

    lower: np.ndarray
    upper: np.ndarray
    resolution: int = 64

    def __post_init__(self):
        object.__setattr__(self, "lower", np.asarray(self.lower, dtype=float))
        object.__setattr__(self, "upper", np.asarray(self.upper, dtype=float))
        if self.resolution < 2:
            raise DomainError("lattice resolution must be at least 2")

    @classmethod
    def from_grid(cls, grid, resolution=64):
        return cls(lower=grid.lower, upper=grid.upper, resolution=resolution)

    @property
    def dims(self) -> int:
        return self.lower.shape[0]

    @property
    def spacing(self):
        return (self.upper - self.lower) / (self.resolution - 1)

    def axes(self):
        return [
            np.linspace(self.lower[d], self.upper[d], self.resolution)
            for d in range(self.dims)
        ]


@dataclass(frozen=True)
class CoordinateMap:
    """A candidate unmixing map u(x) sampled on a regular lattice.

    ``values`` has shape (resolution, ..., resolution, N); ``mask`` marks
    lattice nodes where the map is defined.  ``diagnostics`` carries
    construction quality numbers (bin reach, node coverage, ordering
    sensitivity for multidimensional groups).
    """

    partition: Partition
    base_point: np.ndarray
    lattice: LatticeSpec
    values: np.ndarray
    mask: np.ndarray
    diagnostics: dict = dc_field(default_factory=dict)
    isoclines: tuple = ()


@dataclass(frozen=True)
class TransformedSeries:
    """A trajectory pushed through a coordinate map, with derivatives."""

    times: np.ndarray
    u: np.ndarray
    udot: np.ndarray
    indices: np.ndarray  # indices into the source trajectory
    coverage: float  # fraction of source samples inside the map


# ---------------------------------------------------------------------------
# Field evaluation


def _as_batch_field(field):
    """Normalize a field argument to ``f(points) -> (vectors, ok)``.

    Accepts a :class:`FrameField` (multilinearly interpolated between bin
    centers) or a callable with the batch signature itself.
    """
    if isinstance(field, FrameField):
        return lambda pts: _interp_frame_field(field, pts)
    if callable(field):
        return field
    raise ShapeError("field must be a FrameField or a batch callable")


def _interp_frame_field(ff, points):
    """Multilinear interpolation of aligned vectors between bin centers.

    Each vector is interpolated componentwise from the 2^N surrounding
    centers, then rescaled to the interpolated magnitude so that
    disagreeing directions do not shrink the field.  Points whose
    containing bin is undefined are flagged invalid.
    """
    grid = ff.grid
    points = np.atleast_2d(np.asarray(points, dtype=float))
    n_pts, n = points.shape
    b = grid.bins_per_dim

    inside = np.all((points >= grid.lower) & (points <= grid.upper), axis=1)
    holder = grid.bin_of(points)
    ok = inside & (holder >= 0) & ff.defined[np.clip(holder, 0, None)]

    rel = (points - (grid.lower + 0.5 * grid.width)) / grid.width
    base = np.clip(np.floor(rel).astype(int), 0, b - 2)
    frac = np.clip(rel - base, 0.0, 1.0)

    vecs = np.zeros((n_pts, n, n))
    mags = np.zeros((n_pts, n))
    wsum = np.zeros(n_pts)
    for offset in itertools.product((0, 1), repeat=n):
        off = np.asarray(offset)
        idx = base + off
        flat = np.ravel_multi_index(idx.T, grid.shape)
        defined = ff.defined[flat]
        w = np.prod(np.where(off, frac, 1.0 - frac), axis=1) * defined
        corner = np.where(defined[:, None, None], ff.vectors[flat], 0.0)
        vecs += w[:, None, None] * corner
        mags += w[:, None] * np.linalg.norm(corner, axis=1)
        wsum += w
    ok &= wsum > 1e-12
    safe = np.where(wsum > 1e-12, wsum, 1.0)[:, None]
    vecs /= safe[:, :, None]
    mags /= safe
    norms = np.linalg.norm(vecs, axis=1)
    scale = np.where(norms > 0, mags / np.where(norms > 0, norms, 1.0), 0.0)
    vecs *= scale[:, None, :]
    return vecs, ok


def field_at(field, x):
    """Evaluate the N frame vectors at a single point.

    Returns an N x N matrix whose columns are the vectors; raises
    :class:`OutOfDomainError` outside the covered region.
    """
    f = _as_batch_field(field)
    vecs, ok = f(np.atleast_2d(np.asarray(x, dtype=float)))
    if not ok[0]:
        raise OutOfDomainError(f"point {np.asarray(x)} is outside field coverage")
    return vecs[0]


# ---------------------------------------------------------------------------
# Streamline integration


def _rk4_step(evalf, pts, axis, h, normalize):
    """One classical Runge-Kutta step for a batch of points.

    Returns ``(new_pts, ok)``; a point fails if any stage leaves the
    field's domain, in which case its position is left unchanged.
    """

    def f(p, ok):
        vecs, good = evalf(p)
        v = vecs[:, :, axis]
        if normalize:
            nrm = np.linalg.norm(v, axis=1, keepdims=True)
            good = good & (nrm[:, 0] > 1e-300)
            v = v / np.where(nrm > 0, nrm, 1.0)
        return v, ok & good

    ok = np.ones(pts.shape[0], dtype=bool)
    k1, ok = f(pts, ok)
    k2, ok = f(pts + 0.5 * h * k1, ok)
    k3, ok = f(pts + 0.5 * h * k2, ok)
    k4, ok = f(pts + h * k3, ok)
    new = pts + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
    _, ok = f(new, ok)  # landing point must stay in coverage
    return np.where(ok[:, None], new, pts), ok


def trace_streamline(field, axis, x0, span, step):
    """Integrate one vector field through ``x0`` over a parameter span.

    Classical fourth-order Runge-Kutta with fixed step, run forward and
    backward from parameter 0 at ``x0``; integration stops early where
    the field is undefined.  Returns ``(sigma, points)`` sampled at
    multiples of ``step`` within ``span``, with ``points[sigma == 0]``
    equal to ``x0`` exactly.
    """
    lo, hi = float(span[0]), float(span[1])
    if step <= 0:
        raise DomainError("step must be positive")
    if lo > 0 or hi < 0:
        raise DomainError("span must contain 0")
    evalf = _as_batch_field(field)
    x0 = np.asarray(x0, dtype=float)
    _, ok = evalf(x0[None])
    if not ok[0]:
        raise DomainError(f"start point {x0} is outside field coverage")

    def march(direction, limit):
        out = []
        pts = x0[None].copy()
        n_steps = int(np.floor(limit / step + 1e-12))
        for k in range(1, n_steps + 1):
            pts, good = _rk4_step(evalf, pts, axis, direction * step, normalize=False)
            if not good[0]:
                break
            out.append((direction * k * step, pts[0].copy()))
        return out

    fwd = march(+1.0, hi)
    bwd = march(-1.0, -lo)
    samples = sorted(bwd) + [(0.0, x0.copy())] + sorted(fwd)
    sigma = np.array([s for s, _ in samples])
    points = np.array([p for _, p in samples])
    return sigma, points


def _march_chain(evalf, starts, h, axis, max_steps, normalize=True):
    """March every start point along one axis in a given signed step.

    Returns ``(origin_index, k, points)`` arrays over all accepted steps,
    where ``k`` counts steps (signed by the direction of ``h``).
    """
    orig = np.arange(starts.shape[0])
    pts = starts.copy()
    out_orig, out_k, out_pts = [], [], []
    for k in range(1, max_steps + 1):
        pts, ok = _rk4_step(evalf, pts, axis, h, normalize)
        if not np.any(ok):
            break
        pts, orig = pts[ok], orig[ok]
        out_orig.append(orig.copy())
        out_k.append(np.full(orig.shape[0], np.sign(h) * k))
        out_pts.append(pts.copy())
    if not out_orig:
        empty = np.empty((0,))
        return empty.astype(int), empty, np.empty((0, starts.shape[1]))
    return (
        np.concatenate(out_orig),
        np.concatenate(out_k),
        np.concatenate(out_pts),
    )


def _sweep_axes(evalf, axes, starts, start_params, h, max_steps):
    """Path-ordered sweep along a sequence of axes from many starts.

    From every start, flow both ways along ``axes[0]``, then extend the
    accumulated point set along ``axes[1]``, and so on.  Each visited
    point carries the parameters (multiples of ``h``) accumulated per
    axis plus the parameter vector of its originating start.  Returns
    ``(params, points)`` with one parameter column per swept axis
    appended after the start columns.
    """
    params = np.atleast_2d(np.asarray(start_params, dtype=float))
    if params.shape[0] != starts.shape[0]:
        raise ShapeError("start_params must match starts")
    pts = starts
    for axis in axes:
        rows_p = [np.column_stack([params, np.zeros(pts.shape[0])])]
        rows_x = [pts]
        for direction in (+1.0, -1.0):
            orig, k, walked = _march_chain(evalf, pts, direction * h, axis, max_steps)
            if orig.size:
                rows_p.append(np.column_stack([params[orig], k * h]))
                rows_x.append(walked)
        params = np.concatenate(rows_p)
        pts = np.concatenate(rows_x)
    return params, pts


def _scatter_to_lattice(points, values, spec):
    """Resample scattered assignments onto lattice nodes.

    Every sample spreads to the 2^N corner nodes of its enclosing cell
    with inverse-square-distance weights; nodes that receive no samples
    stay masked.
    """
    n = spec.dims
    res = spec.resolution
    k = values.shape[1]
    rel = (points - spec.lower) / spec.spacing
    keep = np.all((rel >= 0) & (rel <= res - 1), axis=1)
    rel, vals = rel[keep], values[keep]
    base = np.clip(np.floor(rel).astype(int), 0, res - 2)
    frac = rel - base
    acc = np.zeros((res**n, k))
    wacc = np.zeros(res**n)
    guard = (1e-3 * np.min(spec.spacing)) ** 2
    for offset in itertools.product((0, 1), repeat=n):
        off = np.asarray(offset)
        d2 = np.sum(((frac - off) * spec.spacing) ** 2, axis=1)
        w = 1.0 / (d2 + guard)
        flat = np.ravel_multi_index((base + off).T, (res,) * n)
        np.add.at(acc, flat, w[:, None] * vals)
        np.add.at(wacc, flat, w)
    hit = wacc > 0
    acc[hit] /= wacc[hit, None]
    shape = (res,) * n
    return acc.reshape(shape + (k,)), hit.reshape(shape)


def _default_max_steps(spec, h):
    return int(np.ceil(8.0 * np.max(spec.upper - spec.lower) / h))


def build_coordinate(
    field,
    partition,
    x0,
    lattice=None,
    step=None,
    resolution=64,
    ordering_check=True,
) -> CoordinateMap:
    """Construct the candidate coordinate map for one partition.

    The group-1 vectors sweep a base subspace through ``x0`` by
    path-ordered integration in fixed index order; from each base node
    the group-2 vectors sweep the complementary subspace and every
    visited point inherits the base node's parameters as its group-1
    coordinates.  Swapping the roles of the groups yields the group-2
    coordinates, and both scatters are resampled onto a regular lattice.

    Integration uses unit-normalized direction fields, so each parameter
    is arc length along its generating curve; this changes the recovered
    coordinates only by componentwise monotone reparameterizations,
    which is exactly the freedom the method leaves open anyway.  The
    working step is shrunk below the lattice spacing so resampling has
    dense support.

    For a :class:`FrameField` input the sweep must reach at least half of
    the data-bearing bins, otherwise :class:`ConstructionFailure` is
    raised.  When a group has two or more vectors the sweep is repeated
    with the axis order reversed and the worst node-value discrepancy is
    reported in ``diagnostics["ordering_discrepancy"]`` (path-ordered
    integration only commutes when the group's distribution is
    integrable).
    """
    evalf = _as_batch_field(field)
    is_frame_field = isinstance(field, FrameField)
    if lattice is None:
        if not is_frame_field:
            raise DomainError("a LatticeSpec is required for callable fields")
        lattice = LatticeSpec.from_grid(field.grid, resolution)
    x0 = np.asarray(x0, dtype=float)
    _, ok = evalf(x0[None])
    if not ok[0]:
        raise DomainError(f"base point {x0} is outside field coverage")
    if step is None:
        if is_frame_field:
            step = 0.5 * float(np.min(field.grid.width))
        else:
            step = float(np.min(lattice.spacing))
    h = min(float(step), 0.45 * float(np.min(lattice.spacing)))
    max_steps = _default_max_steps(lattice, h)

    g1, g2 = list(partition.group1), list(partition.group2)
    n = lattice.dims

    def sweep(base_axes, fiber_axes):
        base_params, base_pts = _sweep_axes(
            evalf, base_axes, x0[None], np.zeros((1, 0)), h, max_steps
        )
        all_params, all_pts = _sweep_axes(
            evalf, fiber_axes, base_pts, base_params, h, max_steps
        )
        # Parameters beyond the base columns are fiber parameters; only
        # the base-node parameters label the visited points.
        return base_params, base_pts, all_params[:, : len(base_axes)], all_pts

    p1, base1, val1, pts1 = sweep(g1, g2)
    p2, base2, val2, pts2 = sweep(g2, g1)

    grid1, hit1 = _scatter_to_lattice(pts1, val1, lattice)
    grid2, hit2 = _scatter_to_lattice(pts2, val2, lattice)

    values = np.full(hit1.shape + (n,), np.nan)
    for j, axis in enumerate(g1):
        values[..., axis] = grid1[..., j]
    for j, axis in enumerate(g2):
        values[..., axis] = grid2[..., j]
    mask = hit1 & hit2

    diagnostics = {"nodes_defined": float(mask.mean())}
    if is_frame_field:
        grid = field.grid
        data_bins = np.nonzero(grid.counts > 0)[0]
        visited = set(grid.bin_of(pts1)[grid.bin_of(pts1) >= 0])
        visited |= set(grid.bin_of(pts2)[grid.bin_of(pts2) >= 0])
        reach = np.mean([f in visited for f in data_bins])
        diagnostics["bin_reach"] = float(reach)
        if reach < 0.5:
            raise ConstructionFailure(
                partition.label,
                f"sweeps reached only {reach:.1%} of data-bearing bins",
            )
    if ordering_check and (len(g1) > 1 or len(g2) > 1):
        diagnostics["ordering_discrepancy"] = _ordering_discrepancy(
            evalf, partition, x0, lattice, h, max_steps, values, mask, g1, g2
        )

    isoclines = _collect_isoclines(partition, p1, base1, val1, p2, base2, val2,
                                   evalf, h, max_steps)

    return CoordinateMap(
        partition=partition,
        base_point=x0,
        lattice=lattice,
        values=values,
        mask=mask,
        diagnostics=diagnostics,
        isoclines=isoclines,
    )


def _ordering_discrepancy(
    evalf, partition, x0, lattice, h, max_steps, values, mask, g1, g2
):
    """Worst shared-node |u| difference between the two axis orderings."""
    r1, r2 = list(reversed(g1)), list(reversed(g2))
    bp, bx = _sweep_axes(evalf, r1, x0[None], np.zeros((1, 0)), h, max_steps)
    ap, apts = _sweep_axes(evalf, r2, bx, bp, h, max_steps)
    grid1b, hit1b = _scatter_to_lattice(apts, ap[:, : len(g1)], lattice)
    worst = 0.0
    both = mask & hit1b
    if np.any(both):
        for j, axis in enumerate(reversed(g1)):
            diff = np.abs(values[..., axis][both] - grid1b[..., j][both])
            worst = max(worst, float(np.nanmax(diff)))
    return worst


def _collect_isoclines(partition, p1, base1, val1, p2, base2, val2,
                       evalf, h, max_steps, families=17):
    """Constant-coordinate polylines for figure export (1-D groups only).

    For a one-dimensional group 1, the group-2 flow line through every
    k-th base node is a constant-u1 polyline; likewise with roles
    swapped.  Stored as (family, level, points) triples.
    """
    out = []
    for name, base_params, base_pts, fiber_axes in (
        ("u1", p1, base1, list(partition.group2)),
        ("u2", p2, base2, list(partition.group1)),
    ):
        if base_params.shape[1] != 1 or len(fiber_axes) != 1:
            continue
        order = np.argsort(base_params[:, 0])
        pick = order[:: max(1, len(order) // families)]
        for b in pick:
            level = float(base_params[b, 0])
            axis = fiber_axes[0]
            chains = []
            for direction in (-1.0, +1.0):
                orig, k, pts = _march_chain(
                    evalf, base_pts[b : b + 1], direction * h, axis, max_steps
                )
                chains.append((k, pts))
            ks = np.concatenate([chains[0][0], [0.0], chains[1][0]])
            ps = np.concatenate([chains[0][1], base_pts[b : b + 1], chains[1][1]])
            order2 = np.argsort(ks)
            out.append((name, level, ps[order2]))
    return tuple(out)


def transform_series(cmap, traj, min_coverage=0.8) -> TransformedSeries:
    """Push a trajectory through a coordinate map.

    u(t) is multilinear interpolation on the map's lattice; samples in
    cells with any undefined corner are dropped (their indices are the
    complement of ``indices``).  Derivatives are central differences on
    contiguous runs of retained samples.
    """
    spec = cmap.lattice
    n = spec.dims
    res = spec.resolution
    x = traj.states
    rel = (x - spec.lower) / spec.spacing
    inside = np.all((rel >= 0) & (rel <= res - 1), axis=1)
    base = np.clip(np.floor(rel).astype(int), 0, res - 2)
    frac = np.clip(rel - base, 0.0, 1.0)

    u = np.zeros((x.shape[0], n))
    good = inside.copy()
    for offset in itertools.product((0, 1), repeat=n):
        off = np.asarray(offset)
        flat_idx = tuple((base + off).T)
        good &= cmap.mask[flat_idx]
        w = np.prod(np.where(off, frac, 1.0 - frac), axis=1)
        u += w[:, None] * np.where(
            cmap.mask[flat_idx][:, None], cmap.values[flat_idx], 0.0
        )

    coverage = float(np.mean(good))
    if coverage < min_coverage:
        raise CoverageError(coverage, min_coverage)

    dt = float(np.median(np.diff(traj.times)))
    center = good.copy()
    center[0] = center[-1] = False
    center[1:-1] &= good[:-2] & good[2:]
    idx = np.nonzero(center)[0]
    udot = (u[idx + 1] - u[idx - 1]) / (2.0 * dt)
    return TransformedSeries(
        times=traj.times[idx],
        u=u[idx],
        udot=udot,
        indices=idx,
        coverage=coverage,
    )


def write_coordinate_map(cmap, path) -> None:
    """Export lattice nodes: position, u values, defined mask."""
    spec = cmap.lattice
    n = spec.dims
    mesh = np.meshgrid(*spec.axes(), indexing="ij")
    pos = np.column_stack([m.ravel() for m in mesh])
    vals = cmap.values.reshape(-1, n)
    mask = cmap.mask.reshape(-1, 1).astype(float)
    header = (
        [f"x{d}" for d in range(n)] + [f"u{d}" for d in range(n)] + ["defined"]
    )
    write_csv(path, header, np.hstack([pos, np.nan_to_num(vals, nan=np.nan), mask]))


def write_isoclines(cmap, path) -> None:
    """Export constant-coordinate polylines: family, level, vertex order, x."""
    rows = []
    for name, level, pts in cmap.isoclines:
        fam = 1.0 if name == "u1" else 2.0
        for j, p in enumerate(pts):
            rows.append([fam, level, float(j)] + list(p))
    if not rows:
        rows = [[np.nan] * (3 + cmap.lattice.dims)]
    header = ["family", "level", "vertex"] + [
        f"x{d}" for d in range(cmap.lattice.dims)
    ]
    write_csv(path, header, np.asarray(rows, dtype=float))
