import numpy as np
import pytest

from bla_lab.ccd_doe import (
    CcdPlan,
    DoeRegion,
    build_plan,
    denormalize,
    eigen_path,
    extremum,
    fit_surface,
    normalize,
)

REGION = DoeRegion(0.0, 0.1, 0.02, 0.11)


def surface_from(fn, region=REGION, noise=0.0, seed=0, l_center=4):
    reg = DoeRegion(
        region.dc_min, region.dc_max, region.std_min, region.std_max, l_center=l_center
    )
    plan = build_plan(reg)
    x1, x2 = plan.x_rows[:, 0], plan.x_rows[:, 1]
    mses = fn(x1, x2)
    if noise:
        mses = mses + np.random.default_rng(seed).normal(0, noise, mses.size)
    return plan, fit_surface(plan, mses)


def test_normalize_center_and_edges():
    assert normalize(REGION.dc_c, REGION.std_c, REGION) == (0.0, 0.0)
    x1, _ = normalize(REGION.dc_max, REGION.std_c, REGION)
    assert x1 == 1.0
    x1, x2 = normalize(REGION.dc_min, REGION.std_min, REGION)
    assert (x1, x2) == (-1.0, -1.0)


def test_normalize_full_range_grid_corners():
    # wide region in device units: corners land exactly at +-1
    reg = DoeRegion(0.0, 0.100, 0.001, 0.110, l_center=2)
    assert normalize(0.100, 0.110, reg) == (1.0, 1.0)
    assert normalize(0.0, 0.001, reg) == (-1.0, -1.0)


def test_denormalize_roundtrip():
    rng = np.random.default_rng(3)
    for _ in range(20):
        dc, std = rng.uniform(-0.05, 0.2), rng.uniform(0.001, 0.2)
        x1, x2 = normalize(dc, std, REGION)
        back = denormalize(x1, x2, REGION)
        assert back[0] == pytest.approx(dc, abs=1e-15)
        assert back[1] == pytest.approx(std, abs=1e-15)


def test_region_validation():
    with pytest.raises(ValueError):
        DoeRegion(0.1, 0.0, 0.02, 0.11)
    with pytest.raises(ValueError):
        DoeRegion(0.0, 0.1, 0.02, 0.11, dc_c=0.5)
    with pytest.raises(ValueError):
        DoeRegion(0.0, 0.1, 0.02, 0.11, l_center=1)


def test_plan_rows_and_radii():
    plan = build_plan(REGION)
    assert plan.n_rows == 8 + 4
    radii = np.sum(plan.x_rows**2, axis=1)
    assert np.allclose(radii[:8], 2.0)
    assert np.allclose(radii[8:], 0.0)
    assert np.allclose(np.abs(plan.x_rows[4:8]).max(axis=1), np.sqrt(2.0))


def test_plan_center_replicates_follow_l_center():
    reg = DoeRegion(0.0, 0.1, 0.02, 0.11, l_center=6)
    assert build_plan(reg).n_rows == 14


def test_plan_symmetry():
    reg = DoeRegion(-0.1, 0.1, 0.02, 0.11)
    plan = build_plan(reg)
    dcs = sorted(plan.settings[:, 0])
    assert np.allclose(sorted(-plan.settings[:, 0]), dcs)


def test_plan_rejects_nonpositive_axial_std():
    # std range so wide that the lower axial point goes negative
    reg = DoeRegion(0.0, 0.1, 0.001, 0.110)
    with pytest.raises(ValueError, match="region too wide"):
        build_plan(reg)


def test_fit_exact_quadratic_recovers_and_prunes():
    _, surf = surface_from(lambda x1, x2: 2 * x1**2 + x2**2 + 3)
    assert surf.coeffs == pytest.approx([2.0, 0.0, 1.0, 0.0, 0.0, 3.0], abs=1e-9)
    assert list(surf.active) == [True, False, True, False, False, True]


def test_fit_constant_response():
    _, surf = surface_from(lambda x1, x2: np.full(x1.size, 7.0))
    assert surf.coeffs == pytest.approx([0, 0, 0, 0, 0, 7.0], abs=1e-12)
    assert list(surf.active) == [False] * 5 + [True]


def test_fit_prunes_insignificant_terms_under_noise():
    plan, surf = surface_from(
        lambda x1, x2: 2 * x1**2 + 0.5 * x1 * x2 + x2**2 + 0.1 * x1 + 3,
        noise=0.01,
        seed=4,
    )
    # A01 is truly zero: should be pruned; the real terms survive
    assert surf.active[0] and surf.active[1] and surf.active[2] and surf.active[3]
    assert surf.coeffs[0] == pytest.approx(2.0, rel=0.05)
    assert abs(surf.t_values[2]) >= 3


def test_fit_pruning_never_decreases_rss():
    plan, surf = surface_from(
        lambda x1, x2: x2**2 + 0.3 * x2 + 1.0, noise=0.05, seed=9
    )
    x_full = np.column_stack(
        [
            plan.x_rows[:, 0] ** 2,
            plan.x_rows[:, 0] * plan.x_rows[:, 1],
            plan.x_rows[:, 1] ** 2,
            plan.x_rows[:, 0],
            plan.x_rows[:, 1],
            np.ones(plan.n_rows),
        ]
    )
    mses = x_full[:, 2] + 0.3 * x_full[:, 4] + 1.0
    mses = mses + np.random.default_rng(9).normal(0, 0.05, mses.size)
    coef, *_ = np.linalg.lstsq(x_full, mses, rcond=None)
    rss_full = float(np.sum((mses - x_full @ coef) ** 2))
    assert surf.rss >= rss_full - 1e-12


def test_fit_validation():
    plan = build_plan(REGION)
    with pytest.raises(ValueError):
        fit_surface(plan, np.ones(5))
    tiny = CcdPlan(x_rows=plan.x_rows[:6], settings=plan.settings[:6], l_center=2)
    with pytest.raises(ValueError, match="at least 7 rows"):
        fit_surface(tiny, np.ones(6))
    degenerate = CcdPlan(
        x_rows=np.zeros((8, 2)), settings=np.tile(plan.settings[8], (8, 1)), l_center=8
    )
    with pytest.raises(ValueError, match="design degenerate"):
        fit_surface(degenerate, np.ones(8))


def test_extremum_minimum():
    _, surf = surface_from(lambda x1, x2: x1**2 + x2**2)
    ext = extremum(surf)
    assert ext.x_star == pytest.approx([0.0, 0.0], abs=1e-12)
    assert ext.kind == "minimum"


def test_extremum_saddle():
    _, surf = surface_from(lambda x1, x2: x1**2 - x2**2)
    assert extremum(surf).kind == "saddle"


def test_extremum_maximum():
    _, surf = surface_from(lambda x1, x2: -x1**2 - x2**2 + 5)
    assert extremum(surf).kind == "maximum"


def test_extremum_degenerate_constant():
    _, surf = surface_from(lambda x1, x2: np.full(x1.size, 1.0))
    with pytest.raises(ValueError, match="degenerate surface"):
        extremum(surf)


def test_eigen_path_diagonal_picks_smaller_curvature():
    _, surf = surface_from(lambda x1, x2: 5 * x1**2 + 0.1 * x2**2)
    ext = extremum(surf)
    path = eigen_path(surf, ext.x_star, REGION, 5)
    assert abs(path.direction[1]) == pytest.approx(1.0, abs=1e-9)
    assert abs(path.direction[0]) < 1e-9


def test_eigen_path_rank_one_valley():
    # MSE = (x1 - x2)^2: constant along (1,1)/sqrt(2) through any
    # stationary point on the valley line
    reg = DoeRegion(-0.1, 0.1, 0.02, 0.11)
    plan = build_plan(reg)
    x1, x2 = plan.x_rows[:, 0], plan.x_rows[:, 1]
    surf = fit_surface(plan, (x1 - x2) ** 2)
    path = eigen_path(surf, np.zeros(2), reg, 5)
    assert path.direction == pytest.approx(np.array([1.0, 1.0]) / np.sqrt(2), abs=1e-9)
    vals = surf.evaluate(path.designed_x[:, 0], path.designed_x[:, 1])
    assert np.max(np.abs(vals - vals[0])) < 1e-9


def test_eigen_path_isotropic_rejected():
    _, surf = surface_from(lambda x1, x2: x1**2 + x2**2)
    with pytest.raises(ValueError, match="no preferred direction"):
        eigen_path(surf, np.zeros(2), REGION, 5)


def test_eigen_path_invariants():
    _, surf = surface_from(
        lambda x1, x2: 2 * x1**2 + 0.5 * x1 * x2 + x2**2 + 0.1 * x1 + 3
    )
    ext = extremum(surf)
    path = eigen_path(surf, ext.x_star, REGION, 7)
    # Q maps the direction onto itself scaled by the selected eigenvalue
    lam = path.eigenvalues[np.argmin(np.abs(path.eigenvalues))]
    assert np.allclose(path.q_matrix @ path.direction, lam * path.direction, atol=1e-12)
    # designed points sit on the line through x_star
    rel = path.designed_x - path.x_star
    cross = rel[:, 0] * path.direction[1] - rel[:, 1] * path.direction[0]
    assert np.abs(cross).max() < 1e-9
    # gradient vanishes at the stationary point
    assert np.abs(surf.gradient(*ext.x_star)).max() < 1e-10
    # variation along the path direction never exceeds the orthogonal one
    t = np.linspace(-1, 1, 11)
    ortho = np.array([-path.direction[1], path.direction[0]])

    def var_along(d):
        pts = ext.x_star[None, :] + t[:, None] * d[None, :]
        vals = surf.evaluate(pts[:, 0], pts[:, 1])
        return vals.max() - vals.min()

    assert var_along(path.direction) <= var_along(ortho) + 1e-12
    # all designed settings stay inside the region with positive std
    dc, std = path.designed_points[:, 0], path.designed_points[:, 1]
    assert np.all((dc >= REGION.dc_min - 1e-9) & (dc <= REGION.dc_max + 1e-9))
    assert np.all(std > 0)


def test_eigen_path_spacing_override():
    _, surf = surface_from(lambda x1, x2: 5 * x1**2 + 0.1 * x2**2)
    ext = extremum(surf)
    path = eigen_path(surf, ext.x_star, REGION, n_points=4, spacing=0.25)
    ts = (path.designed_x - ext.x_star) @ path.direction
    assert np.allclose(np.diff(ts), 0.25, atol=1e-12)


def test_normalization_invariance_under_unit_rescale():
    # same responses, region specified in volts vs millivolts
    reg_v = DoeRegion(0.0, 0.1, 0.02, 0.11)
    reg_mv = DoeRegion(0.0, 100.0, 20.0, 110.0)
    rng = np.random.default_rng(11)
    plan = build_plan(reg_v)
    x1, x2 = plan.x_rows[:, 0], plan.x_rows[:, 1]
    mses = 1.5 * x1**2 + 0.4 * x1 * x2 + 0.8 * x2**2 + 0.2 * x1 + 2.0
    mses = mses + rng.normal(0, 0.01, mses.size)
    out = []
    for reg in (reg_v, reg_mv):
        surf = fit_surface(build_plan(reg), mses)
        ext = extremum(surf)
        path = eigen_path(surf, ext.x_star, reg, 5)
        out.append((ext.x_star, path.direction))
    assert np.allclose(out[0][0], out[1][0], atol=1e-9)
    assert np.allclose(out[0][1], out[1][1], atol=1e-9)
