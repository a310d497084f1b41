"""Central composite design over (DC, STD) with eigen-path extraction.

Plans a two-factor CCD (four corners, four axial points at radius sqrt(2),
a replicated center), fits a full quadratic to the measured band-average
distortions, prunes insignificant coefficients by their t-values, solves
for the stationary point, and extracts the direction along which the
fitted surface varies the least.  Walking that line yields a family of
excitation settings whose BLAs carry comparably low distortion.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "DoeRegion",
    "CcdPlan",
    "QuadraticSurface",
    "SurfaceExtremum",
    "EigenPath",
    "normalize",
    "denormalize",
    "build_plan",
    "fit_surface",
    "extremum",
    "eigen_path",
]

_TERM_NAMES = ("x1^2", "x1*x2", "x2^2", "x1", "x2", "1")
_T_DROP = 3.0


@dataclass(frozen=True)
class DoeRegion:
    """Permitted (DC, STD) box with a center point for the design.

    The center defaults to the box midpoint.  l_center is the number of
    replicated center experiments; at least 2 are needed to estimate the
    noise level of the response.
    """

    dc_min: float
    dc_max: float
    std_min: float
    std_max: float
    dc_c: float | None = None
    std_c: float | None = None
    l_center: int = 4

    def __post_init__(self):
        if self.dc_max <= self.dc_min or self.std_max <= self.std_min:
            raise ValueError("region must have positive extent on both axes")
        if self.dc_c is None:
            object.__setattr__(self, "dc_c", 0.5 * (self.dc_min + self.dc_max))
        if self.std_c is None:
            object.__setattr__(self, "std_c", 0.5 * (self.std_min + self.std_max))
        if not (self.dc_min <= self.dc_c <= self.dc_max):
            raise ValueError("dc center must lie inside the region")
        if not (self.std_min <= self.std_c <= self.std_max):
            raise ValueError("std center must lie inside the region")
        if self.l_center < 2:
            raise ValueError("need at least 2 center replicates")

    @property
    def half_dc(self) -> float:
        return 0.5 * (self.dc_max - self.dc_min)

    @property
    def half_std(self) -> float:
        return 0.5 * (self.std_max - self.std_min)


def normalize(dc, std, region: DoeRegion):
    """Affine map of physical (dc, std) to design coordinates (x1, x2)."""
    x1 = (np.asarray(dc, dtype=float) - region.dc_c) / region.half_dc
    x2 = (np.asarray(std, dtype=float) - region.std_c) / region.half_std
    return x1, x2


def denormalize(x1, x2, region: DoeRegion):
    """Inverse of normalize."""
    dc = np.asarray(x1, dtype=float) * region.half_dc + region.dc_c
    std = np.asarray(x2, dtype=float) * region.half_std + region.std_c
    return dc, std


@dataclass(frozen=True)
class CcdPlan:
    """Design matrix rows plus their denormalized settings."""

    x_rows: np.ndarray
    settings: np.ndarray
    l_center: int

    @property
    def n_rows(self) -> int:
        return self.x_rows.shape[0]


def build_plan(region: DoeRegion) -> CcdPlan:
    """Corners at (+-1, +-1), axial points at radius sqrt(2), replicated
    center rows, each with its physical (dc, std)."""
    rt2 = np.sqrt(2.0)
    rows = [
        (+1.0, -1.0),
        (+1.0, +1.0),
        (-1.0, -1.0),
        (-1.0, +1.0),
        (rt2, 0.0),
        (-rt2, 0.0),
        (0.0, rt2),
        (0.0, -rt2),
    ] + [(0.0, 0.0)] * region.l_center
    x_rows = np.array(rows)
    dc, std = denormalize(x_rows[:, 0], x_rows[:, 1], region)
    if np.any(std <= 0):
        raise ValueError(
            "region too wide for axial points: a planned std is not positive"
        )
    return CcdPlan(
        x_rows=x_rows, settings=np.column_stack([dc, std]), l_center=region.l_center
    )


@dataclass(frozen=True)
class QuadraticSurface:
    """Pruned quadratic response model in design coordinates.

    coeffs holds (A20, A11, A02, A10, A01, A00); pruned terms are zero and
    marked inactive.  cov and t_values refer to the final refit on the
    active terms.
    """

    coeffs: np.ndarray
    cov: np.ndarray
    t_values: np.ndarray
    rss: float
    var_mse: float
    active: np.ndarray

    def evaluate(self, x1, x2):
        x1 = np.asarray(x1, dtype=float)
        x2 = np.asarray(x2, dtype=float)
        a20, a11, a02, a10, a01, a00 = self.coeffs
        return a20 * x1**2 + a11 * x1 * x2 + a02 * x2**2 + a10 * x1 + a01 * x2 + a00

    def gradient(self, x1: float, x2: float) -> np.ndarray:
        a20, a11, a02, a10, a01, _ = self.coeffs
        return np.array(
            [2.0 * a20 * x1 + a11 * x2 + a10, a11 * x1 + 2.0 * a02 * x2 + a01]
        )


def _regressors(x_rows: np.ndarray) -> np.ndarray:
    x1, x2 = x_rows[:, 0], x_rows[:, 1]
    return np.column_stack([x1**2, x1 * x2, x2**2, x1, x2, np.ones_like(x1)])


def _ls_solve(x_mat: np.ndarray, mses: np.ndarray):
    """Least squares plus the covariance machinery of the surface fit."""
    n, p = x_mat.shape
    gram = x_mat.T @ x_mat
    if np.linalg.matrix_rank(gram) < p:
        raise ValueError("design degenerate")
    coef, *_ = np.linalg.lstsq(x_mat, mses, rcond=None)
    pred = x_mat @ coef
    rss = float(np.sum((mses - pred) ** 2))
    dof = n - p
    var_mse = rss / dof if dof > 0 else np.inf
    cov = np.linalg.inv(gram) * var_mse
    with np.errstate(divide="ignore", invalid="ignore"):
        t = coef / np.sqrt(np.diag(cov))
    return coef, cov, t, rss, var_mse


def fit_surface(plan: CcdPlan, mses) -> QuadraticSurface:
    """Quadratic response-surface fit with one-at-a-time t-pruning.

    Fits all six terms, then repeatedly drops the active non-constant term
    with the lowest |t| below 3 and refits, until every surviving term is
    significant.  With (numerically) zero residual the t-values are
    meaningless; then pruning switches to a relative-magnitude rule.
    """
    mses = np.asarray(mses, dtype=float)
    if mses.size != plan.n_rows:
        raise ValueError("one response per plan row required")
    if plan.n_rows < 7:
        raise ValueError("need at least 7 rows: six coefficients plus one dof")
    if plan.l_center < 2:
        raise ValueError("need at least 2 center replicates")

    full = _regressors(plan.x_rows)
    active = np.ones(6, dtype=bool)
    coef_a, cov_a, t_a, rss, var_mse = _ls_solve(full[:, active], mses)

    zero_resid = rss <= 1e-20 * max(float(np.sum(mses**2)), np.finfo(float).tiny)
    if zero_resid:
        scale = np.abs(coef_a).max()
        keep = np.abs(coef_a) > 1e-9 * scale if scale > 0 else np.zeros(6, dtype=bool)
        keep[5] = True
        if not np.all(keep):
            active = keep
            coef_a, cov_a, t_a, rss, var_mse = _ls_solve(full[:, active], mses)
    else:
        while True:
            idx_active = np.flatnonzero(active)
            droppable = [
                (abs(t_a[i]), idx_active[i])
                for i in range(idx_active.size)
                if idx_active[i] != 5 and abs(t_a[i]) < _T_DROP
            ]
            if not droppable:
                break
            _, worst = min(droppable)
            active[worst] = False
            coef_a, cov_a, t_a, rss, var_mse = _ls_solve(full[:, active], mses)

    coeffs = np.zeros(6)
    cov = np.zeros((6, 6))
    t_values = np.zeros(6)
    idx = np.flatnonzero(active)
    coeffs[idx] = coef_a
    cov[np.ix_(idx, idx)] = cov_a
    t_values[idx] = t_a
    return QuadraticSurface(
        coeffs=coeffs,
        cov=cov,
        t_values=t_values,
        rss=rss,
        var_mse=var_mse,
        active=active,
    )


@dataclass(frozen=True)
class SurfaceExtremum:
    """Stationary point of the fitted quadratic, with its type."""

    x_star: np.ndarray
    kind: str
    hessian_eigenvalues: np.ndarray


def extremum(surface: QuadraticSurface) -> SurfaceExtremum:
    """Solve the 2x2 stationarity system of the active quadratic."""
    a20, a11, a02, a10, a01, _ = surface.coeffs
    h = np.array([[2.0 * a20, a11], [a11, 2.0 * a02]])
    det = h[0, 0] * h[1, 1] - h[0, 1] * h[1, 0]
    scale = np.abs(h).max()
    if scale == 0.0 or abs(det) < 1e-12 * scale**2:
        raise ValueError("degenerate surface: no isolated extremum")
    x_star = np.linalg.solve(h, -np.array([a10, a01]))
    eigs = np.linalg.eigvalsh(h)
    if np.all(eigs > 0):
        kind = "minimum"
    elif np.all(eigs < 0):
        kind = "maximum"
    else:
        kind = "saddle"
    return SurfaceExtremum(x_star=x_star, kind=kind, hessian_eigenvalues=eigs)


@dataclass(frozen=True)
class EigenPath:
    """Line of least surface variation through the stationary point."""

    x_star: np.ndarray
    q_matrix: np.ndarray
    eigenvalues: np.ndarray
    direction: np.ndarray
    designed_x: np.ndarray
    designed_points: np.ndarray


def _line_box_interval(x0, direction, lo, hi):
    """t-range keeping x0 + t*direction inside [lo, hi] per axis."""
    t_lo, t_hi = -np.inf, np.inf
    for i in range(2):
        d = direction[i]
        if abs(d) < 1e-15:
            if not (lo[i] <= x0[i] <= hi[i]):
                return None
            continue
        a = (lo[i] - x0[i]) / d
        b = (hi[i] - x0[i]) / d
        t_lo = max(t_lo, min(a, b))
        t_hi = min(t_hi, max(a, b))
    if t_lo > t_hi:
        return None
    return t_lo, t_hi


def eigen_path(
    surface: QuadraticSurface,
    x_star: np.ndarray,
    region: DoeRegion,
    n_points: int = 5,
    spacing: float | None = None,
) -> EigenPath:
    """Extract the direction of least MSE variation and design settings.

    Recentring the quadratic at x_star leaves only the second-order form
    x~' Q x~; the unit eigenvector of Q with the smallest-magnitude
    eigenvalue spans the line along which the model varies the least.
    Designed settings are spaced along that line inside the region (with
    std > 0); `spacing` overrides the default equal division from boundary
    to boundary.
    """
    if n_points < 2:
        raise ValueError("need at least 2 designed points")
    a20, a11, a02 = surface.coeffs[0], surface.coeffs[1], surface.coeffs[2]
    q = np.array([[a20, 0.5 * a11], [0.5 * a11, a02]])
    eigvals, eigvecs = np.linalg.eigh(q)
    mags = np.abs(eigvals)
    if abs(mags[0] - mags[1]) <= 1e-12 * max(mags.max(), np.finfo(float).tiny):
        raise ValueError(
            "no preferred direction: eigenvalues have equal magnitude; "
            f"eigenvectors {eigvecs[:, 0].tolist()} and {eigvecs[:, 1].tolist()}"
        )
    sel = int(np.argmin(mags))
    direction = eigvecs[:, sel].copy()
    # orient deterministically: increasing dc, tie-broken by increasing std
    if direction[0] < 0 or (direction[0] == 0 and direction[1] < 0):
        direction = -direction

    x0 = np.asarray(x_star, dtype=float)
    x1_lo, x2_lo = normalize(region.dc_min, region.std_min, region)
    x1_hi, x2_hi = normalize(region.dc_max, region.std_max, region)
    _, x2_zero = normalize(region.dc_min, 0.0, region)
    lo = np.array([x1_lo, max(x2_lo, x2_zero + 1e-12)])
    hi = np.array([x1_hi, x2_hi])
    interval = _line_box_interval(x0, direction, lo, hi)
    if interval is None:
        raise ValueError("eigen-path does not intersect the region")
    t_lo, t_hi = interval
    if spacing is None:
        ts = np.linspace(t_lo, t_hi, n_points)
    else:
        if spacing <= 0:
            raise ValueError("spacing must be positive")
        ts = t_lo + spacing * np.arange(n_points)
        ts = ts[ts <= t_hi + 1e-12]
    designed_x = x0[None, :] + ts[:, None] * direction[None, :]
    dc, std = denormalize(designed_x[:, 0], designed_x[:, 1], region)
    return EigenPath(
        x_star=x0,
        q_matrix=q,
        eigenvalues=eigvals,
        direction=direction,
        designed_x=designed_x,
        designed_points=np.column_stack([dc, std]),
    )
