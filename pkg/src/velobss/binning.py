"""Regular binning of the whitened measurement space.

Local velocity statistics are estimated per bin, so the grid is the
spatial backbone of the whole method: bin edges are uniform per
dimension, slightly widened so boundary samples land deterministically.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InsufficientDataError
from .tableio import write_csv

__all__ = ["BinGrid", "build_grid", "write_grid_summary"]

# Relative widening applied to the data's bounding box so samples sitting
# exactly on the min/max fall strictly inside the outer bins.
EDGE_PAD = 1e-9


@dataclass(frozen=True)
class BinGrid:
    """A uniform grid over N-dimensional state space with sample membership."""

    dims: int
    bins_per_dim: int
    lower: np.ndarray
    upper: np.ndarray
    assignments: np.ndarray  # flat bin index per sample
    counts: np.ndarray  # samples per flat bin
    _order: np.ndarray = field(repr=False)  # argsort of assignments
    _offsets: np.ndarray = field(repr=False)  # cumulative counts

    @property
    def width(self):
        return (self.upper - self.lower) / self.bins_per_dim

    @property
    def n_bins(self) -> int:
        return self.bins_per_dim**self.dims

    @property
    def shape(self):
        return (self.bins_per_dim,) * self.dims

    def flat_of(self, index_tuple) -> int:
        return int(np.ravel_multi_index(index_tuple, self.shape))

    def tuple_of(self, flat):
        return tuple(int(i) for i in np.unravel_index(int(flat), self.shape))

    def center(self, index_tuple):
        idx = np.asarray(index_tuple, dtype=float)
        return self.lower + (idx + 0.5) * self.width

    def centers(self):
        """Centers of all bins, flat order, shape (n_bins, dims)."""
        grids = np.meshgrid(
            *[
                self.lower[d] + (np.arange(self.bins_per_dim) + 0.5) * self.width[d]
                for d in range(self.dims)
            ],
            indexing="ij",
        )
        return np.column_stack([g.ravel() for g in grids])

    def bin_of(self, points):
        """Flat bin index per point; -1 for points outside the grid bounds."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        rel = (points - self.lower) / self.width
        idx = np.floor(rel).astype(int)
        inside = np.all((points >= self.lower) & (points <= self.upper), axis=1)
        idx = np.clip(idx, 0, self.bins_per_dim - 1)
        flat = np.ravel_multi_index(idx.T, self.shape)
        return np.where(inside, flat, -1)

    def members(self, index_tuple):
        """Sample indices assigned to one bin."""
        flat = self.flat_of(index_tuple)
        return self._order[self._offsets[flat] : self._offsets[flat + 1]]

    @property
    def membership(self):
        """Mapping bin-index-tuple -> array of sample indices (nonempty bins)."""
        return {
            self.tuple_of(f): self._order[self._offsets[f] : self._offsets[f + 1]]
            for f in np.nonzero(self.counts)[0]
        }


def build_grid(traj, bins_per_dim=16) -> BinGrid:
    """Partition trajectory states into a uniform grid of bins.

    Edges span the per-dimension [min, max] of the states, widened by a
    1e-9 relative margin; intervals are half-open with the upper edge
    folded into the last bin, so every sample lands in exactly one bin.
    """
    if bins_per_dim < 2:
        raise InsufficientDataError("bins_per_dim must be at least 2")
    states = traj.states
    if states.shape[0] == 0:
        raise InsufficientDataError("empty trajectory")
    lo = states.min(axis=0)
    hi = states.max(axis=0)
    span = hi - lo
    pad = EDGE_PAD * np.maximum.reduce([span, np.abs(lo), np.abs(hi), np.ones_like(span)])
    lower = lo - 0.5 * pad
    upper = hi + 0.5 * pad
    width = (upper - lower) / bins_per_dim
    idx = np.floor((states - lower) / width).astype(int)
    idx = np.clip(idx, 0, bins_per_dim - 1)
    dims = states.shape[1]
    flat = np.ravel_multi_index(idx.T, (bins_per_dim,) * dims)
    counts = np.bincount(flat, minlength=bins_per_dim**dims)
    order = np.argsort(flat, kind="stable")
    offsets = np.concatenate([[0], np.cumsum(counts)])
    return BinGrid(
        dims=dims,
        bins_per_dim=bins_per_dim,
        lower=lower,
        upper=upper,
        assignments=flat,
        counts=counts,
        _order=order,
        _offsets=offsets,
    )


def write_grid_summary(grid, path) -> None:
    """Export one row per bin: index tuple, center coordinates, sample count."""
    rows = []
    for f in range(grid.n_bins):
        t = grid.tuple_of(f)
        rows.append(list(t) + list(grid.center(t)) + [grid.counts[f]])
    header = (
        [f"bin{d}" for d in range(grid.dims)]
        + [f"center{d}" for d in range(grid.dims)]
        + ["count"]
    )
    write_csv(path, header, np.asarray(rows, dtype=float))
