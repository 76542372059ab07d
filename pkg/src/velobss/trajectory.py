"""Signal ingestion, velocity estimation, and whitening.

The measurement pipeline starts here: raw multichannel amplitude series
are loaded (or generated), whitened into variance-normalized principal
components, and differentiated into a :class:`Trajectory` of states and
state velocities.  Everything downstream works on trajectories.
"""

from __future__ import annotations

import os
import struct
import warnings
import wave
from dataclasses import dataclass

import numpy as np

from .errors import (
    DegeneracyError,
    FormatError,
    InsufficientDataError,
    ShapeError,
)

__all__ = [
    "SignalSeries",
    "Trajectory",
    "WhitenTransform",
    "load_wav",
    "save_wav",
    "estimate_velocity",
    "pca_whiten",
]


def _readonly(a):
    a = np.ascontiguousarray(np.asarray(a, dtype=float))
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class SignalSeries:
    """A uniformly sampled multichannel amplitude series.

    ``data`` is T x N; amplitudes are dimensionless reals.  Instances are
    immutable and safe to share across threads.
    """

    sample_rate: float
    data: np.ndarray

    def __post_init__(self):
        data = np.atleast_2d(np.asarray(self.data, dtype=float))
        if data.ndim != 2 or data.shape[0] < 1:
            raise ShapeError("signal data must be a nonempty T x N matrix")
        if not np.all(np.isfinite(data)):
            raise ShapeError("signal data contains non-finite values")
        if self.sample_rate <= 0:
            raise ShapeError("sample_rate must be positive")
        object.__setattr__(self, "data", _readonly(data))

    @property
    def channels(self) -> int:
        return self.data.shape[1]

    @property
    def length(self) -> int:
        return self.data.shape[0]


@dataclass(frozen=True)
class Trajectory:
    """Time-indexed states x(t) and velocities dx/dt in N dimensions."""

    times: np.ndarray
    states: np.ndarray
    velocities: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        x = np.atleast_2d(np.asarray(self.states, dtype=float))
        v = np.atleast_2d(np.asarray(self.velocities, dtype=float))
        if x.shape != v.shape:
            raise ShapeError("states and velocities must have identical shape")
        if t.shape[0] != x.shape[0]:
            raise ShapeError("times length must match the state count")
        if t.size > 1 and not np.all(np.diff(t) > 0):
            raise ShapeError("times must be strictly increasing")
        for a in (t, x, v):
            if not np.all(np.isfinite(a)):
                raise ShapeError("trajectory contains non-finite values")
        object.__setattr__(self, "times", _readonly(t))
        object.__setattr__(self, "states", _readonly(x))
        object.__setattr__(self, "velocities", _readonly(v))

    @property
    def dims(self) -> int:
        return self.states.shape[1]

    def __len__(self) -> int:
        return self.states.shape[0]


@dataclass(frozen=True)
class WhitenTransform:
    """Affine map taking raw mixtures to variance-normalized principal components.

    ``basis`` columns are the principal directions scaled so the training
    data comes out with unit variance: ``y = (x - mean) @ basis``.
    """

    mean: np.ndarray
    basis: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mean", _readonly(self.mean))
        object.__setattr__(self, "basis", _readonly(self.basis))

    def apply(self, data):
        data = np.atleast_2d(np.asarray(data, dtype=float))
        return (data - self.mean) @ self.basis

    def invert(self, whitened):
        whitened = np.atleast_2d(np.asarray(whitened, dtype=float))
        return whitened @ np.linalg.inv(self.basis) + self.mean


def load_wav(paths, sample_rate=None) -> SignalSeries:
    """Load one or more mono 16-bit PCM WAV files as channels of a series.

    Each file contributes one channel; all files must agree on length and
    sample rate.  Amplitudes are returned as raw integer values cast to
    float (range [-32768, 32767]).
    """
    if isinstance(paths, (str, os.PathLike)):
        paths = [paths]
    channels = []
    rate = sample_rate
    for path in paths:
        try:
            with wave.open(str(path), "rb") as wf:
                if wf.getcomptype() != "NONE":
                    raise FormatError(f"{path}: compressed WAV not supported")
                if wf.getsampwidth() != 2:
                    raise FormatError(
                        f"{path}: only 16-bit PCM supported,"
                        f" got {8 * wf.getsampwidth()}-bit"
                    )
                if wf.getnchannels() != 1:
                    raise FormatError(
                        f"{path}: expected mono, got {wf.getnchannels()} channels"
                    )
                this_rate = wf.getframerate()
                frames = wf.readframes(wf.getnframes())
        except wave.Error as exc:
            raise FormatError(f"{path}: {exc}") from None
        if rate is None:
            rate = this_rate
        elif this_rate != rate:
            raise FormatError(
                f"{path}: sample rate {this_rate} differs from {rate}"
            )
        channels.append(np.frombuffer(frames, dtype="<i2").astype(float))
    if not channels:
        raise FormatError("no input files")
    lengths = {len(c) for c in channels}
    if len(lengths) != 1:
        raise ShapeError(f"channel lengths differ: {sorted(lengths)}")
    return SignalSeries(sample_rate=float(rate), data=np.column_stack(channels))


def save_wav(path, series, channel=0) -> None:
    """Write one channel of a series as a mono 16-bit PCM WAV file.

    Values outside the 16-bit integer range are clipped with a warning.
    """
    data = series.data[:, channel]
    clipped = np.clip(np.round(data), -32768, 32767)
    n_clip = int(np.sum(clipped != np.round(data)))
    if n_clip:
        warnings.warn(
            f"{path}: {n_clip} samples clipped to the 16-bit range",
            stacklevel=2,
        )
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(int(round(series.sample_rate)))
        wf.writeframes(
            struct.pack("<%dh" % len(clipped), *clipped.astype(np.int64))
        )


def estimate_velocity(series, sample_rate=None) -> Trajectory:
    """Differentiate a series into a trajectory by central differences.

    v(t_i) = (x(t_{i+1}) - x(t_{i-1})) / (2 dt); the first and last
    samples are dropped, so the trajectory is two samples shorter than
    the input.  Accepts a :class:`SignalSeries` or a raw T x N array
    (then ``sample_rate`` is required).
    """
    if isinstance(series, SignalSeries):
        data = series.data
        rate = series.sample_rate
    else:
        if sample_rate is None:
            raise ShapeError("sample_rate required for raw array input")
        data = np.atleast_2d(np.asarray(series, dtype=float))
        rate = float(sample_rate)
    if data.shape[0] < 3:
        raise InsufficientDataError(
            f"need at least 3 samples for central differences, got {data.shape[0]}"
        )
    vel = (data[2:] - data[:-2]) * (rate / 2.0)
    times = np.arange(1, data.shape[0] - 1, dtype=float) / rate
    return Trajectory(times=times, states=data[1:-1], velocities=vel)


def _fix_column_signs(vectors):
    """Flip column signs so each column's largest-magnitude entry is positive."""
    vectors = vectors.copy()
    idx = np.argmax(np.abs(vectors), axis=0)
    signs = np.sign(vectors[idx, np.arange(vectors.shape[1])])
    signs[signs == 0] = 1.0
    return vectors * signs


def pca_whiten(series):
    """Whiten a series into variance-normalized principal components.

    Returns ``(whitened_series, transform)``.  The output has per-channel
    mean 0, unit variance, and zero cross-covariance.  Components are
    ordered by descending variance of the input projections; the sign of
    each principal direction is fixed so its largest-magnitude
    coefficient is positive, which makes the decomposition deterministic.
    """
    data = series.data
    if data.shape[0] < 2:
        raise InsufficientDataError("whitening needs at least 2 samples")
    mean = data.mean(axis=0)
    centered = data - mean
    cov = centered.T @ centered / (data.shape[0] - 1)
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1]
    evals, evecs = evals[order], evecs[:, order]
    if evals[-1] <= 1e-10 * max(evals[0], 0) or evals[-1] <= 0:
        null_dir = _fix_column_signs(evecs[:, -1:]).ravel()
        raise DegeneracyError(
            "sample covariance is singular along direction "
            + np.array2string(null_dir, precision=6)
        )
    evecs = _fix_column_signs(evecs)
    basis = evecs / np.sqrt(evals)
    transform = WhitenTransform(mean=mean, basis=basis)
    whitened = SignalSeries(
        sample_rate=series.sample_rate, data=centered @ basis
    )
    return whitened, transform
