"""Weighted rational fitting of measured frequency responses.

Fits N(s)/D(s) with real coefficients and a monic denominator to complex
FRF data on a frequency grid, by iteratively reweighted linear least
squares: each pass solves the linearized error N - G*D and divides the
weights by |D|^2 from the previous pass, so the fixed point approximates
the true weighted output-error minimizer.  Frequencies are normalized by
the band's geometric mean before building the Vandermonde-like regressors,
otherwise the powers of omega destroy the conditioning.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "FitSpec",
    "RationalModel",
    "fit_rational",
    "weight_from_variance",
    "canonical_roots",
]


@dataclass(frozen=True)
class FitSpec:
    """Orders and solver settings for a rational fit.

    num_order (nb) may not exceed den_order (na).  weights is an optional
    per-bin nonnegative array; None means uniform.
    """

    num_order: int
    den_order: int
    weights: np.ndarray | None = None
    max_iters: int = 50
    rel_tol: float = 1e-10

    def __post_init__(self):
        if self.den_order < self.num_order or self.num_order < 0:
            raise ValueError("need den_order >= num_order >= 0")
        if self.weights is not None:
            w = np.asarray(self.weights, dtype=float)
            if np.any(~np.isfinite(w)) or np.any(w < 0):
                raise ValueError("weights must be finite and nonnegative")
            object.__setattr__(self, "weights", w)


@dataclass(frozen=True)
class RationalModel:
    """Fitted N(s)/D(s) with roots and residual diagnostics.

    Coefficients ascend in s and the denominator is monic.  Poles and
    zeros are the companion-matrix roots sorted canonically (by real part,
    then imaginary part).  Unstable fits are flagged, not rejected: the
    BLA of a feedback system may legitimately wander.
    """

    num_coeffs: np.ndarray
    den_coeffs: np.ndarray
    poles: np.ndarray
    zeros: np.ndarray
    weighted_rms_residual: float
    residuals: np.ndarray
    converged: bool
    n_iters: int
    stable: bool
    meta: dict = field(default_factory=dict)

    def evaluate(self, freqs_hz: np.ndarray) -> np.ndarray:
        """FRF of the model at the given frequencies in Hz."""
        s = 2j * np.pi * np.asarray(freqs_hz, dtype=float)
        num = np.polynomial.polynomial.polyval(s, self.num_coeffs)
        den = np.polynomial.polynomial.polyval(s, self.den_coeffs)
        return num / den


def canonical_roots(roots: np.ndarray) -> np.ndarray:
    """Sort roots by real part, then imaginary part."""
    r = np.asarray(roots, dtype=complex)
    return r[np.lexsort((r.imag, r.real))]


def _roots_ascending(coeffs: np.ndarray) -> np.ndarray:
    c = np.asarray(coeffs, dtype=float)
    nz = np.nonzero(c)[0]
    if nz.size == 0 or nz[-1] == 0:
        return np.array([], dtype=complex)
    c = c[: nz[-1] + 1]
    return canonical_roots(np.roots(c[::-1]))


def fit_rational(freqs, g_bla, spec: FitSpec) -> RationalModel:
    """Fit a rational transfer function to FRF samples.

    Parameters
    ----------
    freqs : array
        Strictly increasing frequencies in Hz.
    g_bla : complex array
        Measured FRF at those frequencies.
    spec : FitSpec
        Orders, per-bin weights, and iteration settings.
    """
    freqs = np.asarray(freqs, dtype=float)
    g = np.asarray(g_bla, dtype=complex)
    nb, na = spec.num_order, spec.den_order
    n_params = nb + 1 + na
    if freqs.size != g.size:
        raise ValueError("freqs and g_bla must have the same length")
    if np.any(np.diff(freqs) <= 0):
        raise ValueError("freqs must be strictly increasing")
    if freqs.size < na + nb + 2:
        raise ValueError("too few bins for the requested orders")
    w_user = (
        np.ones(freqs.size) if spec.weights is None else np.asarray(spec.weights)
    )
    if w_user.size != freqs.size:
        raise ValueError("weights length must match freqs")
    if not np.any(w_user > 0):
        raise ValueError("all weights are zero")

    omega = 2.0 * np.pi * freqs
    w0 = np.sqrt(omega[0] * omega[-1])
    s = 1j * omega / w0

    pow_num = s[:, None] ** np.arange(nb + 1)
    pow_den = s[:, None] ** np.arange(na)
    s_na = s**na

    theta = None
    d_prev = np.ones(freqs.size, dtype=complex)
    converged = False
    n_iters = 0
    rank = n_params
    for n_iters in range(1, spec.max_iters + 1):
        d2 = np.abs(d_prev) ** 2
        # floor keeps a bin with a near-vanishing previous denominator from
        # swallowing the whole fit (and the squared weights finite)
        d2 = np.maximum(d2, 1e-12 * float(np.median(d2)) + np.finfo(float).tiny)
        w_eff = w_user / d2
        sw = np.sqrt(w_eff)
        a_cplx = np.hstack([pow_num, -g[:, None] * pow_den]) * sw[:, None]
        b_cplx = g * s_na * sw
        a_mat = np.vstack([a_cplx.real, a_cplx.imag])
        b_vec = np.concatenate([b_cplx.real, b_cplx.imag])
        theta_new, _, rank, _ = np.linalg.lstsq(a_mat, b_vec, rcond=None)
        if not np.all(np.isfinite(theta_new)):
            raise ValueError("unidentifiable orders")
        if theta is not None:
            delta = np.linalg.norm(theta_new - theta)
            if delta <= spec.rel_tol * max(np.linalg.norm(theta), 1e-300):
                theta = theta_new
                converged = True
                break
        theta = theta_new
        d_prev = np.polynomial.polynomial.polyval(
            s, np.concatenate([theta[nb + 1 :], [1.0]])
        )

    b_scaled = theta[: nb + 1]
    a_scaled = np.concatenate([theta[nb + 1 :], [1.0]])
    if np.all(b_scaled == 0.0) and np.all(a_scaled[:-1] == 0.0):
        raise ValueError("unidentifiable orders")
    # back to physical s, monic denominator
    num = b_scaled * w0 ** (na - np.arange(nb + 1))
    den = a_scaled * w0 ** (na - np.arange(na + 1))

    poles = _roots_ascending(den)
    zeros = _roots_ascending(num)

    num_v = np.polynomial.polynomial.polyval(1j * omega, num)
    den_v = np.polynomial.polynomial.polyval(1j * omega, den)
    residuals = g - num_v / den_v
    w_norm = w_user / w_user.sum()
    wrms = float(np.sqrt(np.sum(w_norm * np.abs(residuals) ** 2)))

    return RationalModel(
        num_coeffs=num,
        den_coeffs=den,
        poles=poles,
        zeros=zeros,
        weighted_rms_residual=wrms,
        residuals=residuals,
        converged=converged,
        n_iters=n_iters,
        stable=bool(np.all(poles.real < 0)) if poles.size else True,
        meta={"rank": int(rank), "n_params": n_params},
    )


def weight_from_variance(est) -> np.ndarray:
    """Per-bin fit weights proportional to 1/var_total.

    The floor keeps noiseless records usable (all weights equal); bins
    flagged ill-conditioned by the estimator get zero weight.  Weights are
    normalized to a unit maximum: only their ratios matter to the fit, and
    the raw reciprocals overflow when the variances sit at the floor.
    """
    var = np.asarray(est.var_total, dtype=float)
    floor = max(1e-12 * float(np.median(var)), np.finfo(float).tiny)
    w = 1.0 / np.maximum(var, floor)
    w[np.asarray(est.ill_conditioned, dtype=bool)] = 0.0
    top = w.max()
    return w / top if top > 0 else w
