"""Robust-method estimation of the best linear approximation.

From M phase realizations with P periods each, the estimator averages the
per-period spectra within each realization to suppress noise, averages the
per-realization frequency responses across realizations, and splits the
total variance of the result into a noise part (from the within-realization
scatter) and a stochastic nonlinear part (the across-realization excess).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "ExperimentRecord",
    "BlaEstimate",
    "record_from_time_data",
    "estimate_bla",
    "mse_of_bla",
]

# Sample-power denominators below this fraction of the band median are
# flagged: the noise-variance formula divides by them.
_ILL_COND_REL = 1e-12


@dataclass(frozen=True)
class ExperimentRecord:
    """Input/output spectra of M realizations x P periods at excited bins.

    u_spectra and y_spectra have shape (M, P, K) with K excited bins;
    freqs holds the K excited frequencies in Hz.  M >= 2 is needed for the
    across-realization variance and P >= 2 for the noise variance.
    """

    u_spectra: np.ndarray
    y_spectra: np.ndarray
    freqs: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        u = np.asarray(self.u_spectra, dtype=complex)
        y = np.asarray(self.y_spectra, dtype=complex)
        f = np.asarray(self.freqs, dtype=float)
        object.__setattr__(self, "u_spectra", u)
        object.__setattr__(self, "y_spectra", y)
        object.__setattr__(self, "freqs", f)
        if u.ndim != 3 or u.shape != y.shape:
            raise ValueError("u_spectra and y_spectra must both be (M, P, K)")
        if u.shape[2] != f.size:
            raise ValueError("freqs length must match the spectral axis")
        if u.shape[0] < 2:
            raise ValueError("need M >= 2 realizations")
        if u.shape[1] < 2:
            raise ValueError("need P >= 2 periods")

    @property
    def n_realizations(self) -> int:
        return self.u_spectra.shape[0]

    @property
    def n_periods(self) -> int:
        return self.u_spectra.shape[1]

    @property
    def n_bins(self) -> int:
        return self.u_spectra.shape[2]


@dataclass(frozen=True)
class BlaEstimate:
    """BLA spectrum with its distortion decomposition.

    var_total is the variance of the averaged frequency response;
    var_noise the part explained by measurement noise; var_stoch_nl the
    scaled difference M * (var_total - var_noise), which estimates the
    stochastic nonlinear distortion on a single realization.  The raw
    value may dip below zero where noise dominates; the clamped copy is
    for plotting.
    """

    freqs: np.ndarray
    g_bla: np.ndarray
    var_total: np.ndarray
    var_noise: np.ndarray
    var_stoch_nl: np.ndarray
    var_stoch_nl_clamped: np.ndarray
    u_mean: np.ndarray
    y_mean: np.ndarray
    g_per_realization: np.ndarray
    var_u_noise: np.ndarray
    var_y_noise: np.ndarray
    var_yu_noise: np.ndarray
    s_uu: np.ndarray
    s_yy: np.ndarray
    s_yu: np.ndarray
    ill_conditioned: np.ndarray
    n_realizations: int
    n_periods: int


def record_from_time_data(
    u: np.ndarray,
    y: np.ndarray,
    fs: float,
    n_samples: int,
    excited_harmonics,
    transient_periods: int = 1,
    meta: dict | None = None,
) -> ExperimentRecord:
    """Build a record from real time series, one row per realization.

    Rows hold an integer number of periods; the first transient_periods
    periods are dropped, the rest are DFT'd period by period and sliced to
    the excited bins.  Periodic data needs no window, so the DFT is exact.
    """
    u = np.atleast_2d(np.asarray(u))
    y = np.atleast_2d(np.asarray(y))
    if np.iscomplexobj(u) or np.iscomplexobj(y):
        raise ValueError("time data must be real")
    if u.shape != y.shape:
        raise ValueError("u and y must have identical shape")
    if u.shape[1] % n_samples != 0:
        raise ValueError("row length must be a whole number of periods")
    p_total = u.shape[1] // n_samples
    if p_total - transient_periods < 2:
        raise ValueError("need at least 2 periods after the transient")
    ks = np.asarray(list(excited_harmonics), dtype=int)

    def slice_spectra(x):
        periods = x[:, transient_periods * n_samples :].reshape(
            x.shape[0], p_total - transient_periods, n_samples
        )
        return np.fft.rfft(periods, axis=2)[:, :, ks] / n_samples

    freqs = ks * fs / n_samples
    info = {
        "fs": fs,
        "n_samples": n_samples,
        "excited_harmonics": tuple(int(k) for k in ks),
    }
    if meta:
        info.update(meta)
    return ExperimentRecord(slice_spectra(u), slice_spectra(y), freqs, info)


def estimate_bla(rec: ExperimentRecord) -> BlaEstimate:
    """Robust-method BLA with noise / nonlinear distortion separation.

    Implements the full averaging chain: per-realization period averages
    and within-realization (co)variances with 1/(P(P-1)) scaling, the
    across-realization average of the per-realization frequency responses
    with its 1/(M(M-1)) variance, noise-corrected sample powers, and the
    coherence-style noise variance with the -2*Re(.) cross term.
    """
    u = rec.u_spectra
    y = rec.y_spectra
    m_r = rec.n_realizations
    p_p = rec.n_periods

    u_mean = u.mean(axis=1)
    y_mean = y.mean(axis=1)

    du = u - u_mean[:, None, :]
    dy = y - y_mean[:, None, :]
    denom = p_p * (p_p - 1)
    var_u_m = np.sum(np.abs(du) ** 2, axis=1) / denom
    var_y_m = np.sum(np.abs(dy) ** 2, axis=1) / denom
    var_yu_m = np.sum(dy * np.conj(du), axis=1) / denom

    if np.any(np.abs(u_mean) == 0.0):
        raise ValueError("unexcited bin in record")
    g_per = y_mean / u_mean
    g_bla = g_per.mean(axis=0)
    var_total = np.sum(np.abs(g_per - g_bla) ** 2, axis=0) / (m_r * (m_r - 1))

    var_u_noise = var_u_m.mean(axis=0)
    var_y_noise = var_y_m.mean(axis=0)
    var_yu_noise = var_yu_m.mean(axis=0)

    s_uu = np.mean(np.abs(u_mean) ** 2 - var_u_noise[None, :], axis=0)
    s_yy = np.mean(np.abs(y_mean) ** 2 - var_y_noise[None, :], axis=0)
    s_yu = np.mean(y_mean * np.conj(u_mean) - var_yu_noise[None, :], axis=0)

    tiny = np.finfo(float).tiny
    med = np.median(np.abs(s_uu)), np.median(np.abs(s_yy)), np.median(np.abs(s_yu))
    ill = (
        (np.abs(s_uu) < max(_ILL_COND_REL * med[0], tiny))
        | (np.abs(s_yy) < max(_ILL_COND_REL * med[1], tiny))
        | (np.abs(s_yu) < max(_ILL_COND_REL * med[2], tiny))
    )

    with np.errstate(divide="ignore", invalid="ignore"):
        var_noise = (np.abs(g_bla) ** 2 / m_r) * (
            var_y_noise / s_yy
            + var_u_noise / s_uu
            - 2.0 * np.real(var_yu_noise / s_yu)
        )
    var_noise = np.where(np.isfinite(var_noise), var_noise, 0.0)

    var_stoch = m_r * (var_total - var_noise)

    return BlaEstimate(
        freqs=rec.freqs.copy(),
        g_bla=g_bla,
        var_total=var_total,
        var_noise=var_noise,
        var_stoch_nl=var_stoch,
        var_stoch_nl_clamped=np.maximum(var_stoch, 0.0),
        u_mean=u_mean,
        y_mean=y_mean,
        g_per_realization=g_per,
        var_u_noise=var_u_noise,
        var_y_noise=var_y_noise,
        var_yu_noise=var_yu_noise,
        s_uu=s_uu,
        s_yy=s_yy,
        s_yu=s_yu,
        ill_conditioned=ill,
        n_realizations=m_r,
        n_periods=p_p,
    )


def mse_of_bla(est: BlaEstimate) -> float:
    """Band-average of the total distortion:
    integral of var_total over the excited band divided by its width."""
    if est.freqs.size < 2:
        raise ValueError("MSE needs at least 2 excited bins")
    span = est.freqs[-1] - est.freqs[0]
    return float(np.trapezoid(est.var_total, est.freqs) / span)
