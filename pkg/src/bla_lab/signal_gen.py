"""Random-phase multisine excitation signals.

A multisine is a periodic sum of harmonically related cosines.  Here every
excited harmonic gets the same amplitude and an independent uniform random
phase, so the signal approaches a Gaussian process as the number of excited
lines grows.  The DC level and the standard deviation are properties of the
spec, normalized analytically rather than measured from the draw.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

__all__ = [
    "MultisineSpec",
    "SignalRealization",
    "harmonic_grid",
    "realize_multisine",
    "rescale",
    "oversampled_period",
]


@dataclass(frozen=True)
class MultisineSpec:
    """Definition of a random-phase multisine excitation.

    Parameters
    ----------
    n_samples : int
        Samples per period (N).
    fs : float
        Sampling frequency in Hz; line k sits at k * fs / n_samples.
    excited_harmonics : tuple of int
        Strictly increasing harmonic indices, all in (0, N/2).
    dc : float
        Signal mean.
    std : float
        Standard deviation of the zero-mean part, >= 0.
    seed : int
        Seed for the phase draw.
    """

    n_samples: int
    fs: float
    excited_harmonics: tuple[int, ...]
    dc: float = 0.0
    std: float = 1.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(
            self, "excited_harmonics", tuple(int(k) for k in self.excited_harmonics)
        )
        if self.n_samples < 4:
            raise ValueError("n_samples must be at least 4")
        if self.fs <= 0:
            raise ValueError("fs must be positive")
        ks = self.excited_harmonics
        if len(ks) == 0:
            raise ValueError("excited_harmonics must be non-empty")
        if len(set(ks)) != len(ks):
            raise ValueError("excited_harmonics contains duplicates")
        if any(b <= a for a, b in zip(ks, ks[1:])):
            raise ValueError("excited_harmonics must be strictly increasing")
        if ks[0] <= 0 or ks[-1] >= self.n_samples / 2:
            raise ValueError("excited harmonics must satisfy 0 < k < N/2")
        if self.std < 0:
            raise ValueError("std must be >= 0")

    @property
    def n_excited(self) -> int:
        return len(self.excited_harmonics)

    @property
    def freqs(self) -> np.ndarray:
        """Excited frequencies in Hz."""
        return np.asarray(self.excited_harmonics, dtype=float) * self.fs / self.n_samples

    @property
    def line_amplitude(self) -> float:
        """Per-line cosine amplitude giving the requested std.

        For n_ex equal-amplitude cosines the variance is n_ex * A**2 / 2,
        so A = std * sqrt(2 / n_ex).
        """
        return self.std * np.sqrt(2.0 / self.n_excited)


@dataclass(frozen=True)
class SignalRealization:
    """One sampled realization of a multisine: P periods of N samples."""

    samples: np.ndarray
    spec: MultisineSpec
    phases: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "samples", np.asarray(self.samples, dtype=float))
        object.__setattr__(self, "phases", np.asarray(self.phases, dtype=float))
        if self.samples.size % self.spec.n_samples != 0:
            raise ValueError("samples length must be a multiple of one period")
        if self.phases.size != self.spec.n_excited:
            raise ValueError("one phase per excited harmonic required")

    @property
    def periods(self) -> int:
        return self.samples.size // self.spec.n_samples


def harmonic_grid(first: int, step: int, last: int) -> list[int]:
    """Harmonic indices {first, first+step, ...} up to and including last.

    Mirrors the colon notation first:step:last, e.g. 3:2:399 gives the 199
    odd harmonics 3, 5, ..., 399.
    """
    if first <= 0:
        raise ValueError("first harmonic must be >= 1")
    if step < 1:
        raise ValueError("step must be >= 1")
    if last < first:
        raise ValueError("last must be >= first")
    return list(range(int(first), int(last) + 1, int(step)))


def _period_spectrum(spec: MultisineSpec, phases: np.ndarray) -> np.ndarray:
    """rfft coefficients (numpy scaling) of one period."""
    n = spec.n_samples
    x_f = np.zeros(n // 2 + 1, dtype=complex)
    x_f[0] = n * spec.dc
    amp = spec.line_amplitude
    ks = np.asarray(spec.excited_harmonics)
    x_f[ks] = n * 0.5 * amp * np.exp(1j * phases)
    return x_f


def realize_multisine(spec: MultisineSpec, periods: int = 1) -> SignalRealization:
    """Draw phases and synthesize the sampled multisine.

    Phases are i.i.d. uniform on [0, 2*pi) from a generator seeded with
    spec.seed, so equal specs yield identical samples.  The period is built
    by inverse FFT, which makes the per-period mean exactly dc and the
    per-period standard deviation exactly std (to rounding).
    """
    if periods < 1:
        raise ValueError("periods must be >= 1")
    rng = np.random.default_rng(spec.seed)
    phases = rng.uniform(0.0, 2.0 * np.pi, spec.n_excited)
    period = np.fft.irfft(_period_spectrum(spec, phases), spec.n_samples)
    samples = np.tile(period, periods)
    return SignalRealization(samples=samples, spec=spec, phases=phases)


def rescale(real: SignalRealization, dc: float, std: float) -> SignalRealization:
    """Change DC and STD of a realization while keeping its phases.

    Supports DC/STD sweeps that reuse one phase draw: only the amplitude
    scale and the offset change.
    """
    src = real.spec
    if std < 0:
        raise ValueError("std must be >= 0")
    if std > 0 and src.std == 0:
        raise ValueError("cannot rescale a zero-std realization to nonzero std")
    if std == src.std:
        samples = real.samples if dc == src.dc else real.samples + (dc - src.dc)
    else:
        gain = 0.0 if std == 0 else std / src.std
        samples = (real.samples - src.dc) * gain + dc
    new_spec = replace(src, dc=dc, std=std)
    return SignalRealization(samples=samples, spec=new_spec, phases=real.phases)


def oversampled_period(real: SignalRealization, oversample: int) -> np.ndarray:
    """One period of the band-limited signal sampled at oversample * fs.

    Zero-padded inverse FFT: exact values of the underlying continuous
    multisine at the fine grid points (the signal is band-limited, so this
    is interpolation, not approximation).
    """
    if oversample < 1:
        raise ValueError("oversample must be >= 1")
    spec = real.spec
    n_fine = spec.n_samples * int(oversample)
    x_f = _period_spectrum(spec, real.phases)
    pad = np.zeros(n_fine // 2 + 1, dtype=complex)
    pad[: x_f.size] = x_f * oversample
    return np.fft.irfft(pad, n_fine)
