"""Synthetic sources, nonlinear mixing, and recovery scoring.

The bundled experiment mixes two independently generated waveforms with
a fixed pair of nonlinear formulas, then asks the pipeline to undo the
mixing blindly.  Real speech is approximated by resonant second-order
autoregressive processes whose innovation power is modulated by a slow
random envelope: the resulting amplitude bursts give the velocity
distributions the strong non-Gaussianity the local-frame construction
feeds on (for Gaussian data the contracted fourth-order spectrum is
exactly degenerate and no direction information survives).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import signal as sig
from scipy import stats

from .errors import DomainError, ShapeError
from .trajectory import SignalSeries, load_wav

__all__ = [
    "MixingSpec",
    "RecoveryScore",
    "gen_sources",
    "gen_coupled_sources",
    "mix",
    "evaluate_recovery",
]

#: Target peak amplitude for generated sources, safely inside the
#: mixing domain bound of 2^15.
PEAK = 32000.0


@dataclass(frozen=True)
class MixingSpec:
    """Coefficients of the two-channel nonlinear mixing map.

    mu1 = a1 s1 + (b1 - c1 s2)^p1
    mu2 = a2 s2 + (b2 - c2 s1 - d2 s2)^p2

    Valid for |s1|, |s2| <= bound; within that square both radicands stay
    strictly positive (minima 220.72 and 4,994,144), so the map is
    real-valued everywhere on the domain.
    """

    a1: float = 0.763
    b1: float = 958.0
    c1: float = 0.0225
    p1: float = 1.5
    a2: float = 0.153
    b2: float = 3.75e7
    c2: float = 763.0
    d2: float = 229.0
    p2: float = 0.5
    bound: float = 2.0**15

    def radicand_minima(self):
        s = self.bound
        return self.b1 - self.c1 * s, self.b2 - self.c2 * s - self.d2 * s

    def jacobian(self, s):
        """Jacobian matrices of the map, shape (..., 2, 2)."""
        s = np.asarray(s, dtype=float)
        s1, s2 = s[..., 0], s[..., 1]
        r1 = self.b1 - self.c1 * s2
        r2 = self.b2 - self.c2 * s1 - self.d2 * s2
        j = np.empty(s.shape[:-1] + (2, 2))
        j[..., 0, 0] = self.a1
        j[..., 0, 1] = -self.p1 * self.c1 * r1 ** (self.p1 - 1.0)
        j[..., 1, 0] = -self.p2 * self.c2 * r2 ** (self.p2 - 1.0)
        j[..., 1, 1] = self.a2 - self.p2 * self.d2 * r2 ** (self.p2 - 1.0)
        return j

    def jacobian_grid_check(self, n=64):
        """Determinants of the Jacobian on an n x n lattice over the domain.

        Returns ``(dets, all_nonzero, sign_consistent)``.  Note the map
        is orientation-reversing in a sliver near the (+,+) corner of the
        full square, so ``sign_consistent`` is False there even though no
        lattice determinant vanishes; bursty sources essentially never
        visit that region.
        """
        ax = np.linspace(-self.bound, self.bound, n)
        g1, g2 = np.meshgrid(ax, ax, indexing="ij")
        pts = np.stack([g1, g2], axis=-1)
        dets = np.linalg.det(self.jacobian(pts))
        return dets, bool(np.all(dets != 0)), bool(
            np.all(dets > 0) or np.all(dets < 0)
        )


def mix(sources, spec=None):
    """Apply the nonlinear mixing map pointwise to a 2-channel series.

    Raises :class:`DomainError` naming the first offending sample index
    if any amplitude exceeds the spec's domain bound.
    """
    if spec is None:
        spec = MixingSpec()
    s = np.atleast_2d(np.asarray(sources, dtype=float))
    if s.shape[1] != 2:
        raise ShapeError(f"mixing expects 2 channels, got {s.shape[1]}")
    bad = np.nonzero(np.any(np.abs(s) > spec.bound, axis=1))[0]
    if bad.size:
        raise DomainError(
            f"sample {bad[0]} exceeds the mixing domain bound {spec.bound}"
        )
    s1, s2 = s[:, 0], s[:, 1]
    mu1 = spec.a1 * s1 + (spec.b1 - spec.c1 * s2) ** spec.p1
    mu2 = spec.a2 * s2 + (spec.b2 - spec.c2 * s1 - spec.d2 * s2) ** spec.p2
    return np.column_stack([mu1, mu2])


def _ar2(innovations, resonance, radius=0.97):
    """Second-order autoregressive filter with poles at radius*e^{+-2 pi i f}."""
    a1 = 2.0 * radius * np.cos(2.0 * np.pi * resonance)
    a2 = -(radius**2)
    return sig.lfilter([1.0], [1.0, -a1, -a2], innovations)


def _envelope(rng, length, pole, depth):
    """Slow lognormal power envelope: exp(depth * smoothed white noise)."""
    z = sig.lfilter([1.0], [1.0, -pole], rng.standard_normal(length))
    z /= np.std(z)
    return np.exp(depth * z)


# Per-channel generator settings: resonance (fraction of the sample
# rate), envelope smoothing pole, envelope depth.  Depths differ so the
# two channels' local velocity kurtoses stay separated, which keeps the
# per-bin frame spectra non-degenerate.
_AR2_CHANNELS = (
    {"resonance": 0.05, "env_pole": 0.9995, "env_depth": 0.9},
    {"resonance": 0.11, "env_pole": 0.9980, "env_depth": 0.5},
)

_BAND_EDGES = ((0.04, 0.12), (0.20, 0.36))  # fractions of Nyquist

_WARMUP = 4000  # samples discarded to wash out filter transients


def gen_sources(kind, length, seed, sample_rate=16000.0, wav_paths=None):
    """Generate two statistically independent source channels.

    ``kind`` selects the generator: ``"ar2"`` (resonant second-order
    autoregressive processes with envelope-modulated innovations,
    resonances at 0.05 and 0.11 of the sample rate, pole radius 0.97),
    ``"bandnoise"`` (independently band-pass-filtered modulated noise),
    or ``"wav"`` (user-supplied files via ``wav_paths``).  Channels use
    independently spawned seeds and are scaled to a common peak inside
    [-2^15, 2^15].  Output is deterministic given the seed.
    """
    if kind == "wav":
        if not wav_paths:
            raise DomainError("kind 'wav' requires wav_paths")
        return load_wav(wav_paths)
    if length < 10**4:
        raise DomainError(f"need at least 10^4 samples, got {length}")
    if kind not in ("ar2", "bandnoise"):
        raise DomainError(f"unknown source kind {kind!r}")
    streams = np.random.SeedSequence(seed).spawn(2)
    channels = []
    for ch, ss in enumerate(streams):
        rng = np.random.default_rng(ss)
        cfg = _AR2_CHANNELS[ch]
        total = length + _WARMUP
        innov = _envelope(rng, total, cfg["env_pole"], cfg["env_depth"])
        innov *= rng.standard_normal(total)
        if kind == "ar2":
            x = _ar2(innov, cfg["resonance"])
        else:
            b, a = sig.butter(4, _BAND_EDGES[ch], btype="bandpass")
            x = sig.lfilter(b, a, innov)
        x = x[_WARMUP:]
        x *= PEAK / np.max(np.abs(x))
        channels.append(x)
    return SignalSeries(sample_rate=sample_rate, data=np.column_stack(channels))


def gen_coupled_sources(length, seed, coupling=0.1, sample_rate=16000.0):
    """Two-channel series with an ineradicable statistical dependence.

    Channel 2 equals channel 1 plus a small disturbance whose innovations
    are modulated by the *same* random envelope that drives channel 1.
    The shared volatility couples the channels' velocity statistics in a
    way no invertible change of coordinates can undo, so this is a
    negative control: a correct separability test must reject it.
    """
    if length < 10**4:
        raise DomainError(f"need at least 10^4 samples, got {length}")
    rng = np.random.default_rng(seed)
    total = length + _WARMUP
    env = _envelope(rng, total, 0.9995, 0.9)
    c1 = _ar2(env * rng.standard_normal(total), 0.05)
    disturb = _ar2(env**1.5 * rng.standard_normal(total), 0.11)
    c1 = c1[_WARMUP:]
    disturb = disturb[_WARMUP:]
    s1 = c1 * ((1.0 - coupling) * PEAK / np.max(np.abs(c1)))
    s2 = s1 + disturb * (coupling * PEAK / np.max(np.abs(disturb)))
    return SignalSeries(sample_rate=sample_rate, data=np.column_stack([s1, s2]))


@dataclass(frozen=True)
class RecoveryScore:
    """Rank-correlation comparison of recovered vs. true sources.

    ``pairing[i]`` is the true-source column matched to recovered
    component i, chosen to maximize the summed matched |rho| over all
    bijections.  ``cross_max`` is the largest |rho| outside the matching.
    """

    pairing: tuple
    spearman: np.ndarray
    matched: np.ndarray
    cross_max: float
    details: dict = field(default_factory=dict)


def evaluate_recovery(recovered, truth) -> RecoveryScore:
    """Spearman rank correlations between recovered and true components.

    Monotone componentwise transformations leave ranks untouched, so
    this measures exactly the equivalence class a blind separation can
    recover.  Rows of the matrix index recovered components, columns
    true sources.
    """
    u = np.atleast_2d(np.asarray(recovered, dtype=float))
    s = np.atleast_2d(np.asarray(truth, dtype=float))
    if u.shape[0] != s.shape[0]:
        raise ShapeError(
            f"series lengths differ: {u.shape[0]} vs {s.shape[0]}"
        )
    nu, ns = u.shape[1], s.shape[1]
    rho = np.empty((nu, ns))
    for i in range(nu):
        for j in range(ns):
            rho[i, j] = stats.spearmanr(u[:, i], s[:, j]).statistic
    # Optimal bijective matching on |rho| (exact, via the assignment problem).
    from scipy.optimize import linear_sum_assignment

    rows, cols = linear_sum_assignment(-np.abs(rho))
    pairing = tuple(int(c) for c in cols[np.argsort(rows)])
    matched = np.abs(rho[np.arange(nu), pairing])
    mask = np.ones_like(rho, dtype=bool)
    mask[np.arange(nu), pairing] = False
    cross = float(np.max(np.abs(rho[mask]))) if np.any(mask) else 0.0
    return RecoveryScore(
        pairing=pairing, spearman=rho, matched=matched, cross_max=cross
    )
