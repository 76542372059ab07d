"""Statistical factorization testing and the full separation pipeline.

A candidate coordinate system separates the data when the joint density
of (u, du/dt) factorizes across the partition's two groups.  Rather than
estimating densities in 2N dimensions, this module checks the moment
consequences of factorization: every mixed moment of group-1 and group-2
variables must equal the product of the two group moments.  The largest
normalized violation over a family of low-order mixed monomials is the
test statistic.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .binning import build_grid
from .errors import (
    ConstructionFailure,
    CoverageError,
    DegeneracyError,
    InsufficientDataError,
)
from .flowcoords import (
    LatticeSpec,
    build_coordinate,
    enumerate_partitions,
    transform_series,
)
from .localframes import align_frames, compute_frames

__all__ = [
    "SeparabilityReport",
    "SeparationResult",
    "factorization_statistic",
    "separate",
    "write_report_table",
]

MIN_SAMPLES = 10**4


@dataclass(frozen=True)
class SeparabilityReport:
    """Outcome of the moment-factorization test for one partition.

    ``rows`` holds (monomial label, joint moment, product of group
    moments, normalized deviation) for every tested mixed monomial.
    """

    partition: object
    rows: tuple
    max_deviation: float
    threshold: float
    n_samples: int

    @property
    def verdict(self) -> str:
        return "separable" if self.max_deviation <= self.threshold else "inseparable"

    @property
    def worst_monomial(self) -> str:
        return max(self.rows, key=lambda r: r[3])[0]

    def to_json_dict(self):
        return {
            "partition": self.partition.label,
            "max_deviation": self.max_deviation,
            "threshold": self.threshold,
            "verdict": self.verdict,
            "n_samples": self.n_samples,
            "worst_monomial": self.worst_monomial,
        }


def _exponent_vectors(n_vars, total_min, total_max):
    """All exponent tuples with total degree in [total_min, total_max]."""
    out = []

    def rec(prefix, remaining, budget):
        if remaining == 0:
            if sum(prefix) >= total_min:
                out.append(tuple(prefix))
            return
        for e in range(budget + 1):
            rec(prefix + [e], remaining - 1, budget - e)

    rec([], n_vars, total_max)
    return out


def _label(exps, names):
    parts = []
    for e, name in zip(exps, names):
        if e == 1:
            parts.append(name)
        elif e > 1:
            parts.append(f"{name}^{e}")
    return "*".join(parts)


def factorization_statistic(
    u, udot, partition, max_order=4, threshold=0.05
) -> SeparabilityReport:
    """Test whether (u, du/dt) factorizes across a partition.

    Components are standardized before testing (the factorization
    property is invariant under componentwise affine maps, so scale and
    offset are pure nuisance).  For every mixed monomial of total degree
    at most ``max_order`` with at least degree 1 in each group, the
    deviation is

        |E[m] - E[m1] E[m2]| / (1 + |E[m1] E[m2]|)

    where m1 and m2 are the group factors.  The maximum deviation over
    the table decides the verdict against ``threshold``.
    """
    u = np.atleast_2d(np.asarray(u, dtype=float))
    udot = np.atleast_2d(np.asarray(udot, dtype=float))
    if u.shape != udot.shape:
        raise InsufficientDataError("u and udot must have matching shapes")
    n = u.shape[0]
    if n < MIN_SAMPLES:
        raise InsufficientDataError(
            f"factorization test needs >= {MIN_SAMPLES} samples, got {n}"
        )

    def standardized(cols):
        sd = cols.std(axis=0)
        if np.any(sd == 0):
            raise DegeneracyError("constant component in the tested series")
        return (cols - cols.mean(axis=0)) / sd

    groups = []
    names = []
    for axes in (partition.group1, partition.group2):
        cols = np.column_stack(
            [u[:, a] for a in axes] + [udot[:, a] for a in axes]
        )
        groups.append(standardized(cols))
        names.append(
            [f"u{a + 1}" for a in axes] + [f"du{a + 1}" for a in axes]
        )

    # Precompute integer powers of every variable once.
    powers = []
    for cols in groups:
        powers.append(
            [np.vander(cols[:, j], max_order + 1, increasing=True).T
             for j in range(cols.shape[1])]
        )

    def monomial(group, exps):
        prod = None
        for j, e in enumerate(exps):
            if e == 0:
                continue
            term = powers[group][j][e]
            prod = term if prod is None else prod * term
        return prod

    rows = []
    exps1 = _exponent_vectors(groups[0].shape[1], 1, max_order - 1)
    for e1 in exps1:
        d1 = sum(e1)
        m1 = monomial(0, e1)
        e_m1 = float(m1.mean())
        for e2 in _exponent_vectors(groups[1].shape[1], 1, max_order - d1):
            m2 = monomial(1, e2)
            e_m2 = float(m2.mean())
            joint = float((m1 * m2).mean())
            product = e_m1 * e_m2
            dev = abs(joint - product) / (1.0 + abs(product))
            rows.append(
                (_label(e1, names[0]) + "*" + _label(e2, names[1]),
                 joint, product, dev)
            )
    max_dev = max(r[3] for r in rows)
    return SeparabilityReport(
        partition=partition,
        rows=tuple(rows),
        max_deviation=max_dev,
        threshold=threshold,
        n_samples=n,
    )


def write_report_table(report, path) -> None:
    """Export the statistic table as CSV (monomial, joint, product, deviation)."""
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", encoding="ascii") as fh:
        fh.write("monomial,joint,product,deviation\n")
        for label, joint, product, dev in report.rows:
            fh.write(f"{label},{joint:.17g},{product:.17g},{dev:.17g}\n")


@dataclass(frozen=True)
class SeparationResult:
    """Full outcome of the candidate-map search.

    ``verdict`` is "separable" when at least one constructed map passes
    the factorization test; the best map/report pair is then attached.
    ``failures`` records partitions whose map construction or transform
    failed (those leave the verdict marked incomplete).
    """

    verdict: str
    best_report: object
    best_map: object
    best_series: object
    reports: dict
    maps: dict
    series: dict
    failures: dict
    frame_field: object
    grid: object

    @property
    def incomplete(self) -> bool:
        return bool(self.failures)

    @property
    def best_partition(self):
        return None if self.best_report is None else self.best_report.partition


def _max_workers(n_tasks):
    env = os.environ.get("VELOBSS_THREADS", "").strip()
    cap = int(env) if env else (os.cpu_count() or 1)
    return max(1, min(n_tasks, cap))


def separate(traj, config=None) -> SeparationResult:
    """Run the full separation pipeline on a whitened trajectory.

    Bins the states, builds and aligns local frames, constructs one
    candidate coordinate map per two-group partition, transforms the
    trajectory through each, and tests factorization.  Returns the
    best-scoring passing partition, or an inseparable verdict carrying
    every report.  Ties break toward the lexicographically first
    partition.
    """
    from .config import PipelineConfig

    cfg = config or PipelineConfig()
    grid = build_grid(traj, cfg.bins_per_dim)
    frames = compute_frames(traj, grid, min_samples=cfg.min_samples_per_bin)
    field_ = align_frames(frames, grid)
    ref_flat = max(field_.valid_bins(), key=lambda f: frames[f].n)
    x0 = grid.center(grid.tuple_of(ref_flat))
    lattice = LatticeSpec.from_grid(grid, cfg.lattice_resolution)
    step = cfg.step_factor * float(np.min(grid.width))
    partitions = enumerate_partitions(traj.dims)

    reports, maps, series, failures = {}, {}, {}, {}

    def run_one(part):
        cmap = build_coordinate(field_, part, x0, lattice=lattice, step=step)
        ts = transform_series(cmap, traj)
        rep = factorization_statistic(
            ts.u, ts.udot, part,
            max_order=cfg.max_order, threshold=cfg.eps_sep,
        )
        return cmap, ts, rep

    workers = _max_workers(len(partitions))
    if workers > 1 and len(partitions) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futures = {p.key: pool.submit(run_one, p) for p in partitions}
            outcomes = {k: _settle(f) for k, f in futures.items()}
    else:
        outcomes = {p.key: _settle_call(run_one, p) for p in partitions}

    for part in partitions:
        ok, payload = outcomes[part.key]
        if ok:
            maps[part.key], series[part.key], reports[part.key] = payload
        else:
            failures[part.key] = payload

    best_key = None
    for key in sorted(reports):
        if best_key is None or reports[key].max_deviation < reports[best_key].max_deviation:
            best_key = key
    verdict = "inseparable"
    best_report = best_map = best_series = None
    if best_key is not None and reports[best_key].max_deviation <= cfg.eps_sep:
        verdict = "separable"
        best_report = reports[best_key]
        best_map = maps[best_key]
        best_series = series[best_key]
    return SeparationResult(
        verdict=verdict,
        best_report=best_report,
        best_map=best_map,
        best_series=best_series,
        reports=reports,
        maps=maps,
        series=series,
        failures=failures,
        frame_field=field_,
        grid=grid,
    )


def _settle(future):
    try:
        return True, future.result()
    except (ConstructionFailure, CoverageError, InsufficientDataError,
            DegeneracyError) as exc:
        return False, str(exc)


def _settle_call(fn, *args):
    try:
        return True, fn(*args)
    except (ConstructionFailure, CoverageError, InsufficientDataError,
            DegeneracyError) as exc:
        return False, str(exc)
