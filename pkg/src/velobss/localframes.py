"""Local velocity-correlation frames and their global alignment.

Within each occupied bin of state space, the second- and fourth-order
moments of the centered velocity distribution determine a linear frame:
a matrix that simultaneously normalizes the second-order correlation to
the identity and diagonalizes the contracted fourth-order correlation.
The columns of its inverse are local direction vectors.  For data that
is a mixture of independent subsystems, each vector points along the
direction swept by varying one subsystem alone, so they are the raw
material for constructing candidate unmixing coordinates.

The frame in any single bin is only defined up to a signed permutation
of its vectors; :func:`align_frames` removes that ambiguity by matching
neighboring bins, leaving a single global signed-permutation freedom.
"""

from __future__ import annotations

import itertools
from collections import deque
from dataclasses import dataclass, replace

import numpy as np

from .errors import AlignmentError, DegeneracyError, InsufficientDataError
from .tableio import write_csv

__all__ = [
    "LocalFrame",
    "FrameField",
    "local_correlations",
    "build_frame_matrix",
    "extract_vectors",
    "compute_frames",
    "align_frames",
    "match_signed_permutation",
    "write_frame_field",
]

# Frame status values.
VALID = "valid"
SPARSE = "sparse"
DEGENERATE = "degenerate"

# Relative spectral-gap threshold below which the diagonalized
# fourth-order spectrum is treated as degenerate (frame orientation
# arbitrary within the tied subspace).
TOL_DEGENERATE = 1e-6

# Relative positive-definiteness floor for the second-order correlation.
EPS_PD = 1e-10


@dataclass(frozen=True)
class LocalFrame:
    """Velocity statistics and the derived frame for one bin.

    ``cov2`` is the N x N second-order velocity correlation, ``cov4`` the
    fully symmetric N^4 fourth-order correlation tensor, both of centered
    velocities.  When the frame is valid, ``matrix`` (M) satisfies
    M cov2 M^T = I with the contracted transformed fourth-order tensor
    diagonal; ``spectrum`` holds that diagonal in descending order and
    ``vectors`` the columns of M^{-1}.
    """

    bin: tuple
    center: np.ndarray
    n: int
    cov2: np.ndarray | None
    cov4: np.ndarray | None
    matrix: np.ndarray | None
    spectrum: np.ndarray | None
    vectors: np.ndarray | None
    status: str


@dataclass(frozen=True)
class FrameField:
    """Globally aligned frame vectors over a bin grid.

    ``vectors`` has shape (n_bins, N, N) in flat bin order; column i is
    the aligned direction vector i for that bin (NaN where undefined).
    ``source`` codes how each bin got its vectors: 0 undefined, 1 aligned
    valid frame, 2 interpolated fill.  ``alignment`` maps flat bin index
    to the signed permutation that was applied to the bin's raw vectors.
    """

    grid: object
    frames: dict
    vectors: np.ndarray
    source: np.ndarray
    alignment: dict
    reference_bin: tuple
    n_components: int
    disconnected: bool

    @property
    def defined(self):
        return self.source > 0

    def valid_bins(self):
        """Flat indices of bins whose frames entered alignment as valid."""
        return [f for f, fr in self.frames.items() if fr.status == VALID]


def local_correlations(velocities):
    """Second- and fourth-order moments of bin-centered velocities.

    The velocities are centered on their bin mean (so single-subscript
    correlations vanish identically), then
    ``cov2[k, l] = mean(v_k v_l)`` and
    ``cov4[k, l, m, n] = mean(v_k v_l v_m v_n)``.
    Full permutation symmetry of ``cov4`` holds by construction.
    """
    v = np.atleast_2d(np.asarray(velocities, dtype=float))
    n = v.shape[0]
    if n < 2:
        raise InsufficientDataError(f"need at least 2 velocity samples, got {n}")
    c = v - v.mean(axis=0)
    cov2 = c.T @ c / n
    cov4 = np.einsum("ti,tj,tk,tl->ijkl", c, c, c, c) / n
    return cov2, cov4


def _sorted_eigh(sym):
    """Eigen-decomposition with descending eigenvalues and fixed signs.

    The sign of each eigenvector is chosen so its largest-magnitude entry
    is positive, making the decomposition deterministic across platforms.
    """
    evals, evecs = np.linalg.eigh(sym)
    order = np.argsort(evals)[::-1]
    evals, evecs = evals[order], evecs[:, order]
    idx = np.argmax(np.abs(evecs), axis=0)
    signs = np.sign(evecs[idx, np.arange(evecs.shape[1])])
    signs[signs == 0] = 1.0
    return evals, evecs * signs


def _transform4(tensor, mat):
    """Apply a linear map to all four slots of a rank-4 tensor."""
    return np.einsum("ka,lb,mc,nd,abcd->klmn", mat, mat, mat, mat, tensor)


def build_frame_matrix(cov2, cov4, tol_degenerate=TOL_DEGENERATE, eps_pd=EPS_PD):
    """Construct the frame matrix from local velocity correlations.

    The matrix is a product of three factors: the rotation diagonalizing
    ``cov2``, the rescaling that takes the diagonalized correlation to
    the identity, and the rotation diagonalizing the contraction
    ``sum_m c4t[k, l, m, m]`` of the rescaled fourth-order tensor.

    Returns ``(matrix, spectrum, status)`` where ``spectrum`` holds the
    contraction's eigenvalues in descending order.  ``status`` is
    ``"degenerate"`` when two spectrum entries coincide within
    ``tol_degenerate * max|spectrum|`` (the frame is still returned, but
    its orientation within the tied subspace is arbitrary).
    """
    cov2 = np.asarray(cov2, dtype=float)
    cov4 = np.asarray(cov4, dtype=float)
    evals, rot1 = _sorted_eigh(cov2)
    if evals[-1] <= eps_pd * max(evals[0], 0.0):
        raise DegeneracyError(
            "second-order velocity correlation is not positive definite"
        )
    scale = rot1 / np.sqrt(evals)  # columns rescaled
    pre = scale.T  # pre @ cov2 @ pre.T == I
    c4t = _transform4(cov4, pre)
    contracted = np.einsum("klmm->kl", c4t)
    spectrum, rot2 = _sorted_eigh(contracted)
    matrix = rot2.T @ pre
    gaps = -np.diff(spectrum)
    status = VALID
    if np.any(gaps < tol_degenerate * np.max(np.abs(spectrum))):
        status = DEGENERATE
    return matrix, spectrum, status


def extract_vectors(matrix, max_cond=1e12):
    """Columns of the inverse frame matrix: the local direction vectors."""
    matrix = np.asarray(matrix, dtype=float)
    if np.linalg.cond(matrix) >= max_cond:
        raise DegeneracyError("frame matrix is numerically singular")
    return np.linalg.inv(matrix)


def compute_frames(traj, grid, min_samples=50, tol_degenerate=TOL_DEGENERATE):
    """Build a LocalFrame for every occupied bin of the grid.

    Bins with fewer than ``min_samples`` velocity samples are marked
    sparse (fourth-order moments need on the order of 10 N^2 samples to
    be usable) and left for interpolation during alignment.
    """
    frames = {}
    velocities = traj.velocities
    for tup, members in grid.membership.items():
        flat = grid.flat_of(tup)
        center = grid.center(tup)
        n = len(members)
        if n < max(2, min_samples):
            frames[flat] = LocalFrame(tup, center, n, None, None, None, None, None, SPARSE)
            continue
        cov2, cov4 = local_correlations(velocities[members])
        try:
            matrix, spectrum, status = build_frame_matrix(
                cov2, cov4, tol_degenerate=tol_degenerate
            )
            vectors = extract_vectors(matrix)
        except DegeneracyError:
            frames[flat] = LocalFrame(tup, center, n, cov2, cov4, None, None, None, SPARSE)
            continue
        frames[flat] = LocalFrame(
            tup, center, n, cov2, cov4, matrix, spectrum, vectors, status
        )
    return frames


def _signed_permutations(n):
    """All signed permutation matrices of size n (2^n n! of them)."""
    mats = []
    for perm in itertools.permutations(range(n)):
        for signs in itertools.product((1.0, -1.0), repeat=n):
            p = np.zeros((n, n))
            for i, (j, s) in enumerate(zip(perm, signs)):
                p[j, i] = s
            mats.append(p)
    return mats


def match_signed_permutation(candidate, reference):
    """Best signed permutation aligning candidate columns to reference columns.

    Maximizes the summed |cosine| between matched unit columns, choosing
    signs so every matched cosine is nonnegative.  Returns
    ``(perm_matrix, cosines)`` with ``aligned = candidate @ perm_matrix``
    and ``cosines[i] = cos angle(aligned[:, i], reference[:, i])``.
    """
    cand = np.asarray(candidate, dtype=float)
    ref = np.asarray(reference, dtype=float)
    n = cand.shape[1]
    cu = cand / np.linalg.norm(cand, axis=0)
    ru = ref / np.linalg.norm(ref, axis=0)
    cos = cu.T @ ru  # cos[j, i] between candidate column j and reference column i
    best_score, best_perm = -np.inf, None
    for perm in itertools.permutations(range(n)):
        score = sum(abs(cos[perm[i], i]) for i in range(n))
        if score > best_score:
            best_score, best_perm = score, perm
    p = np.zeros((n, n))
    cosines = np.empty(n)
    for i in range(n):
        j = best_perm[i]
        s = 1.0 if cos[j, i] >= 0 else -1.0
        p[j, i] = s
        cosines[i] = abs(cos[j, i])
    return p, cosines


def _face_neighbors(tup, bins_per_dim):
    for d in range(len(tup)):
        for step in (-1, 1):
            k = tup[d] + step
            if 0 <= k < bins_per_dim:
                yield tup[:d] + (k,) + tup[d + 1 :]


def align_frames(frames, grid) -> FrameField:
    """Orient all valid frames consistently and fill gaps by interpolation.

    Frame vectors are defined per bin only up to a signed permutation;
    continuity of the underlying correlations makes a globally consistent
    choice possible.  Starting from the most-populated valid bin, a
    breadth-first traversal over face-adjacent valid bins applies to each
    frame the signed permutation that maximizes the summed |cosine|
    against its already-aligned neighbors.  Degenerate frames are kept
    but excluded from the traversal (their orientation carries no
    information).  Sparse and degenerate bins within an index radius of 2
    of aligned bins receive inverse-distance-weighted vector fills; bins
    that cannot be filled stay undefined and terminate streamlines.

    If the valid region is disconnected, each component is aligned
    independently and the field is flagged ``disconnected``.
    """
    n_dims = grid.dims
    n_bins = grid.n_bins
    valid_flats = [f for f, fr in frames.items() if fr.status == VALID]
    if not valid_flats:
        raise AlignmentError("no valid frames to align")

    vectors = np.full((n_bins, n_dims, n_dims), np.nan)
    source = np.zeros(n_bins, dtype=np.int8)
    alignment = {}
    aligned_frames = dict(frames)

    valid_set = set(valid_flats)
    unvisited = set(valid_flats)
    reference = max(valid_flats, key=lambda f: frames[f].n)
    reference_tup = grid.tuple_of(reference)
    n_components = 0

    while unvisited:
        n_components += 1
        seed = (
            reference
            if reference in unvisited
            else max(unvisited, key=lambda f: frames[f].n)
        )
        # Seed keeps its raw orientation (the global freedom of the method).
        queue = deque([seed])
        unvisited.discard(seed)
        alignment[seed] = np.eye(n_dims)
        vectors[seed] = frames[seed].vectors
        source[seed] = 1
        while queue:
            current = queue.popleft()
            for nb_tup in _face_neighbors(grid.tuple_of(current), grid.bins_per_dim):
                nb = grid.flat_of(nb_tup)
                if nb not in valid_set or nb not in unvisited:
                    continue
                unvisited.discard(nb)
                neighbors = [
                    grid.flat_of(t)
                    for t in _face_neighbors(nb_tup, grid.bins_per_dim)
                    if source[grid.flat_of(t)] == 1
                ]
                # Unit-normalized average over aligned neighbors: their signs
                # already agree, so the mean is a stable matching target.
                ref = np.zeros((n_dims, n_dims))
                for m in neighbors:
                    ref += vectors[m] / np.linalg.norm(vectors[m], axis=0)
                perm, _ = match_signed_permutation(frames[nb].vectors, ref)
                alignment[nb] = perm
                vectors[nb] = frames[nb].vectors @ perm
                source[nb] = 1
                queue.append(nb)

    # Record aligned frames (matrix rows and spectrum permuted consistently).
    for f in valid_flats:
        p = alignment[f]
        fr = frames[f]
        aligned_frames[f] = replace(
            fr,
            matrix=p.T @ fr.matrix,
            spectrum=fr.spectrum @ np.abs(p),
            vectors=vectors[f],
        )

    _fill_gaps(frames, grid, vectors, source)

    return FrameField(
        grid=grid,
        frames=aligned_frames,
        vectors=vectors,
        source=source,
        alignment=alignment,
        reference_bin=reference_tup,
        n_components=n_components,
        disconnected=n_components > 1,
    )


def _fill_gaps(frames, grid, vectors, source, radius=2.0):
    """Interpolate vectors into non-valid bins near the aligned region."""
    aligned = np.nonzero(source == 1)[0]
    aligned_tuples = np.array([grid.tuple_of(f) for f in aligned], dtype=float)
    for f in range(grid.n_bins):
        if source[f] != 0:
            continue
        tup = np.asarray(grid.tuple_of(f), dtype=float)
        d = np.linalg.norm(aligned_tuples - tup, axis=1)
        near = d <= radius
        if not np.any(near):
            continue
        w = 1.0 / d[near] ** 2
        vals = vectors[aligned[near]]
        vectors[f] = np.einsum("b,bij->ij", w, vals) / w.sum()
        source[f] = 2


def write_frame_field(field, path) -> None:
    """Export the frame field: one row per defined bin.

    Columns: bin index tuple, center, sample count, status code
    (1 valid, 2 filled), flattened aligned matrix (NaN where the bin has
    no valid frame), spectrum, flattened aligned vectors.
    """
    grid = field.grid
    n = grid.dims
    rows = []
    for f in np.nonzero(field.defined)[0]:
        fr = field.frames.get(f)
        tup = grid.tuple_of(f)
        mat = fr.matrix if (fr and fr.matrix is not None and field.source[f] == 1) else np.full((n, n), np.nan)
        spec = fr.spectrum if (fr and fr.spectrum is not None and field.source[f] == 1) else np.full(n, np.nan)
        count = fr.n if fr else 0
        rows.append(
            list(tup)
            + list(grid.center(tup))
            + [count, field.source[f]]
            + list(mat.ravel())
            + list(spec)
            + list(field.vectors[f].ravel())
        )
    header = (
        [f"bin{d}" for d in range(n)]
        + [f"center{d}" for d in range(n)]
        + ["count", "source"]
        + [f"m{i}{j}" for i in range(n) for j in range(n)]
        + [f"spec{i}" for i in range(n)]
        + [f"v{i}{j}" for i in range(n) for j in range(n)]
    )
    write_csv(path, header, np.asarray(rows, dtype=float))
