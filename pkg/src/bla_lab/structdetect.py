"""Block structure classification from pole/zero movement across a sweep.

Fitted poles and zeros are tracked across experiments with different
excitation DC/STD settings.  Whether a root "moved" is judged against a
bootstrap uncertainty: resampling the realizations of a record gives a
standard deviation per root, and a root counts as moved when some pair of
experiments differs by more than k_sigma combined deviations.  The
resulting (poles moved, zeros moved) pattern selects the structure:

    zeros fixed, poles fixed   -> Wiener-Hammerstein cascade
    zeros moved, poles fixed   -> parallel Wiener-Hammerstein
    zeros fixed, poles moved   -> nonlinear feedback
    both moved                 -> inconclusive

These signatures are necessary, not sufficient: structures outside this
list can produce the same movement pattern.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .bla_robust import ExperimentRecord, estimate_bla
from .ratfit import FitSpec, RationalModel, canonical_roots, fit_rational, weight_from_variance

__all__ = [
    "RootUncertainty",
    "SweepResult",
    "StructureVerdict",
    "bootstrap_root_uncertainty",
    "classify_structure",
    "CAVEAT",
]

CAVEAT = (
    "necessary-condition verdict: the observed pole/zero movement pattern is "
    "compatible with this structure but does not prove it; other structures "
    "can show the same signature"
)

_AMBIG_TOL = 1e-9


@dataclass(frozen=True)
class RootUncertainty:
    """Bootstrap standard deviation per pole and per zero."""

    poles: np.ndarray
    zeros: np.ndarray
    ambiguous: bool = False


@dataclass(frozen=True)
class SweepResult:
    """Fitted models plus uncertainties for >= 3 sweep experiments."""

    settings: tuple
    models: tuple
    root_uncertainties: tuple

    def __post_init__(self):
        object.__setattr__(self, "settings", tuple(self.settings))
        object.__setattr__(self, "models", tuple(self.models))
        object.__setattr__(self, "root_uncertainties", tuple(self.root_uncertainties))
        if len(self.models) < 3:
            raise ValueError("sweep needs at least 3 experiments")
        if not (len(self.settings) == len(self.models) == len(self.root_uncertainties)):
            raise ValueError("settings, models and uncertainties must align")
        np_, nz = self._orders(self.models[0])
        for m in self.models[1:]:
            if self._orders(m) != (np_, nz):
                raise ValueError("inconsistent fit orders")

    @staticmethod
    def _orders(model: RationalModel) -> tuple[int, int]:
        return len(model.poles), len(model.zeros)


@dataclass(frozen=True)
class StructureVerdict:
    label: str
    pole_moved: bool
    zero_moved: bool
    movement_scores: dict
    caveat: str
    k_sigma: float


def _match_to_reference(ref: np.ndarray, candidates: np.ndarray) -> tuple[np.ndarray, bool]:
    """Greedy nearest-neighbour assignment of candidates to ref roots."""
    matched = np.empty_like(ref)
    used = np.zeros(candidates.size, dtype=bool)
    ambiguous = False
    for i, r in enumerate(ref):
        dists = np.abs(candidates - r)
        dists[used] = np.inf
        order = np.argsort(dists)
        best = order[0]
        if order.size > 1 and np.isfinite(dists[order[1]]):
            if abs(dists[order[1]] - dists[best]) < _AMBIG_TOL:
                ambiguous = True
        matched[i] = candidates[best]
        used[best] = True
    return matched, ambiguous


def _complex_std(values: np.ndarray) -> np.ndarray:
    """sqrt(E |z - E z|^2) along axis 0, with the n-1 divisor."""
    n = values.shape[0]
    center = values.mean(axis=0)
    return np.sqrt(np.sum(np.abs(values - center) ** 2, axis=0) / max(n - 1, 1))


def bootstrap_root_uncertainty(
    rec: ExperimentRecord,
    spec: FitSpec,
    n_boot: int = 50,
    seed: int = 0,
) -> RootUncertainty:
    """Root standard deviations by resampling realizations with replacement.

    Each replicate re-estimates the BLA from M drawn realizations, refits
    the rational model, and matches its roots to the point-estimate roots
    by nearest neighbour.  Equidistant match candidates (within 1e-9) set
    the ambiguity flag; the greedy pairing is kept.
    """
    if n_boot < 20:
        raise ValueError("n_boot must be >= 20")
    m_r = rec.n_realizations
    if m_r < 4:
        raise ValueError("bootstrap needs M >= 4 realizations")

    def fit_from(record: ExperimentRecord) -> RationalModel:
        est = estimate_bla(record)
        w = spec.weights if spec.weights is not None else weight_from_variance(est)
        return fit_rational(est.freqs, est.g_bla, replace(spec, weights=w))

    model0 = fit_from(rec)
    ref_poles = model0.poles
    ref_zeros = model0.zeros

    rng = np.random.default_rng(seed)
    poles_b = np.empty((n_boot, ref_poles.size), dtype=complex)
    zeros_b = np.empty((n_boot, ref_zeros.size), dtype=complex)
    ambiguous = False
    for b in range(n_boot):
        idx = rng.integers(0, m_r, size=m_r)
        boot = ExperimentRecord(
            rec.u_spectra[idx], rec.y_spectra[idx], rec.freqs, dict(rec.meta)
        )
        model_b = fit_from(boot)
        if model_b.poles.size != ref_poles.size or model_b.zeros.size != ref_zeros.size:
            # root count collapsed in a resample; treat as maximal ambiguity
            ambiguous = True
            poles_b[b] = ref_poles
            zeros_b[b] = ref_zeros
            continue
        mp, amb_p = _match_to_reference(ref_poles, model_b.poles)
        mz, amb_z = _match_to_reference(ref_zeros, model_b.zeros)
        ambiguous = ambiguous or amb_p or amb_z
        poles_b[b] = mp
        zeros_b[b] = mz

    return RootUncertainty(
        poles=_complex_std(poles_b),
        zeros=_complex_std(zeros_b),
        ambiguous=ambiguous,
    )


def _track(models, attr: str) -> np.ndarray:
    """Chain roots across the sweep; returns (n_exp, n_roots) complex."""
    first = canonical_roots(getattr(models[0], attr))
    rows = [first]
    for model in models[1:]:
        matched, _ = _match_to_reference(rows[-1], getattr(model, attr))
        rows.append(matched)
    return np.array(rows)


def _movement_scores(tracks: np.ndarray, uncs: np.ndarray) -> np.ndarray:
    """Max pairwise displacement over combined uncertainty, per root."""
    n_exp, n_roots = tracks.shape
    scores = np.zeros(n_roots)
    for r in range(n_roots):
        best = 0.0
        for i in range(n_exp):
            for j in range(i + 1, n_exp):
                disp = abs(tracks[i, r] - tracks[j, r])
                if disp == 0.0:
                    continue
                comb = np.hypot(uncs[i, r], uncs[j, r])
                best = max(best, disp / max(comb, np.finfo(float).tiny))
        scores[r] = best
    return scores


def classify_structure(sweep: SweepResult, k_sigma: float = 3.0) -> StructureVerdict:
    """Apply the pole/zero movement table to a fitted sweep.

    A root family counts as moved when any of its tracked roots has a
    movement score above k_sigma.  Raising k_sigma can only turn moved
    flags off, never on.
    """
    if k_sigma <= 0:
        raise ValueError("k_sigma must be positive")

    # canonical experiment order: tracking must not depend on how the
    # sweep was presented
    def sort_key(i):
        m = sweep.models[i]
        return (
            tuple(np.round(np.asarray(sweep.settings[i], dtype=float), 12)),
            tuple(np.round(m.poles.view(float), 9)),
            tuple(np.round(m.zeros.view(float), 9)),
        )

    order = sorted(range(len(sweep.models)), key=sort_key)
    models = tuple(sweep.models[i] for i in order)
    uncs = tuple(sweep.root_uncertainties[i] for i in order)

    pole_tracks = _track(models, "poles")
    zero_tracks = _track(models, "zeros")

    def unc_matrix(attr: str, n_roots: int) -> np.ndarray:
        rows = []
        for i, u in enumerate(uncs):
            vals = np.asarray(getattr(u, attr), dtype=float)
            if vals.size != n_roots:
                raise ValueError("inconsistent fit orders")
            # uncertainties were computed per canonical root of each model;
            # align them with the tracked ordering of this experiment
            roots_i = canonical_roots(getattr(models[i], attr))
            tracked_i = pole_tracks[i] if attr == "poles" else zero_tracks[i]
            idx = [int(np.argmin(np.abs(roots_i - t))) for t in tracked_i]
            rows.append(vals[idx])
        return np.array(rows) if rows else np.zeros((len(models), 0))

    pole_scores = _movement_scores(pole_tracks, unc_matrix("poles", pole_tracks.shape[1]))
    zero_scores = _movement_scores(zero_tracks, unc_matrix("zeros", zero_tracks.shape[1]))

    pole_moved = bool(np.any(pole_scores > k_sigma))
    zero_moved = bool(np.any(zero_scores > k_sigma))

    if not pole_moved and not zero_moved:
        label = "WH"
    elif zero_moved and not pole_moved:
        label = "ParallelWH"
    elif pole_moved and not zero_moved:
        label = "NlFeedback"
    else:
        label = "Inconclusive"

    return StructureVerdict(
        label=label,
        pole_moved=pole_moved,
        zero_moved=zero_moved,
        movement_scores={"poles": pole_scores.tolist(), "zeros": zero_scores.tolist()},
        caveat=CAVEAT,
        k_sigma=float(k_sigma),
    )
