"""End-to-end experiment pipelines: sweep, design, and single runs.

A pipeline realizes M multisine phase realizations per excitation setting,
simulates the configured model, estimates the BLA with its distortion
split, fits a rational model, and aggregates the per-setting results:
sweeps end in a structure verdict, designed experiments end in an
eigen-path of recommended (DC, STD) settings.

Seeds for every stochastic ingredient are derived from the global seed
and the (level, realization, role) indices through numpy's SeedSequence,
so reruns with one seed are bit-identical while streams stay independent.
"""

from __future__ import annotations

import configparser
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import storage
from .bla_robust import estimate_bla, mse_of_bla, record_from_time_data
from .ccd_doe import DoeRegion, build_plan, eigen_path, extremum, fit_surface
from .ratfit import FitSpec, fit_rational, weight_from_variance
from .signal_gen import MultisineSpec, SignalRealization, realize_multisine
from .structdetect import SweepResult, bootstrap_root_uncertainty, classify_structure
from .sysmodels import (
    LtiSystem,
    NlFeedback,
    NlMsdParams,
    NlXfbParams,
    ParallelWH,
    StaticNl,
    WienerHammerstein,
    add_noise,
    lti_response,
    nl_msd_default,
    simulate_block_model_batch,
    simulate_nl_msd_batch,
    simulate_nl_xfb,
)

__all__ = [
    "PipelineConfig",
    "load_model_config",
    "simulate_model",
    "derive_seed",
    "run_sweep",
    "run_design",
    "run_single",
]

ModelLike = (
    LtiSystem | WienerHammerstein | ParallelWH | NlFeedback | NlMsdParams | NlXfbParams
)


def derive_seed(global_seed: int, *key: int) -> int:
    """Deterministic child seed for (level, realization, role) indices."""
    ss = np.random.SeedSequence(entropy=int(global_seed), spawn_key=tuple(int(k) for k in key))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


# ---------------------------------------------------------------------------
# declarative configs


def _floats(text: str) -> np.ndarray:
    parts = [p for p in text.replace(",", " ").split() if p]
    return np.asarray([float(p) for p in parts])


def _lti_from_section(sec) -> LtiSystem:
    return LtiSystem(_floats(sec["num"]), _floats(sec["den"]))


def _nl_from_section(sec) -> StaticNl:
    return StaticNl(_floats(sec["poly"]))


def load_model_config(path) -> ModelLike:
    """Read a declarative model description (INI sections)."""
    cp = configparser.ConfigParser()
    read = cp.read(path)
    if not read:
        raise ValueError(f"model config not found: {path}")
    return _model_from_parser(cp)


def _model_from_parser(cp: configparser.ConfigParser) -> ModelLike:
    if "model" not in cp or "variant" not in cp["model"]:
        raise ValueError("model config needs [model] variant = ...")
    variant = cp["model"]["variant"].strip().lower()
    if variant == "lti":
        return _lti_from_section(cp["g1"])
    if variant == "wiener_hammerstein":
        return WienerHammerstein(
            g1=_lti_from_section(cp["g1"]),
            f=_nl_from_section(cp["nl"]),
            g2=_lti_from_section(cp["g2"]),
        )
    if variant == "parallel_wh":
        n_branches = cp["model"].getint("branches")
        branches = []
        for b in range(1, n_branches + 1):
            branches.append(
                WienerHammerstein(
                    g1=_lti_from_section(cp[f"branch{b}.g1"]),
                    f=_nl_from_section(cp[f"branch{b}.nl"]),
                    g2=_lti_from_section(cp[f"branch{b}.g2"]),
                )
            )
        return ParallelWH(tuple(branches))
    if variant == "nl_feedback":
        return NlFeedback(
            g1=_lti_from_section(cp["g1"]),
            g21=_lti_from_section(cp["g21"]),
            f=_nl_from_section(cp["nl"]),
            g22=_lti_from_section(cp["g22"]),
        )
    if variant == "nl_msd":
        base = nl_msd_default()
        sec = cp["params"] if "params" in cp else {}
        return NlMsdParams(
            m=float(sec.get("m", base.m)),
            d=float(sec.get("d", base.d)),
            k1=float(sec.get("k1", base.k1)),
            k3=float(sec.get("k3", base.k3)),
        )
    if variant == "nl_xfb":
        sec = cp["params"] if "params" in cp else {}
        base = NlXfbParams()
        return NlXfbParams(
            bp_center_hz=float(sec.get("bp_center_hz", base.bp_center_hz)),
            bp_q=float(sec.get("bp_q", base.bp_q)),
            bp_gain=float(sec.get("bp_gain", base.bp_gain)),
            lp_corner_hz=float(sec.get("lp_corner_hz", base.lp_corner_hz)),
            fb_scale=float(sec.get("fb_scale", base.fb_scale)),
        )
    raise ValueError(f"unknown model variant {variant!r}")


@dataclass
class PipelineConfig:
    """Validated pipeline settings; exactly one mode is active."""

    mode: str
    out_dir: Path
    global_seed: int
    m_realizations: int
    periods: int
    transient_periods: int
    noise_std: float
    jobs: int
    oversample: int
    n_samples: int
    fs: float
    harmonics: tuple[int, ...]
    dc: float
    std: float
    model: ModelLike
    na: int
    nb: int
    # sweep mode
    sweep_axis: str = "dc"
    sweep_levels: tuple[float, ...] = ()
    n_boot: int = 40
    k_sigma: float = 3.0
    # design mode
    region: DoeRegion | None = None
    n_path_points: int = 5
    grid: bool = False
    grid_dc_levels: tuple[float, ...] = ()
    grid_std_levels: tuple[float, ...] = ()
    extra: dict = field(default_factory=dict)

    @classmethod
    def from_file(cls, path, **overrides) -> "PipelineConfig":
        cp = configparser.ConfigParser()
        read = cp.read(path)
        if not read:
            raise ValueError(f"config not found: {path}")
        if "run" not in cp or "signal" not in cp:
            raise ValueError("config needs [run] and [signal] sections")
        run = cp["run"]
        sig = cp["signal"]
        mode = overrides.get("mode", run.get("mode", "single")).strip().lower()
        if mode not in {"sweep", "design", "single"}:
            raise ValueError(f"unknown mode {mode!r}")

        if "model" in cp and "file" in cp["model"]:
            model_path = Path(cp["model"]["file"])
            if not model_path.is_absolute():
                model_path = Path(path).parent / model_path
            model = load_model_config(model_path)
        elif "model" in cp and "variant" in cp["model"]:
            model = _model_from_parser(cp)
        else:
            raise ValueError("config needs [model] with file= or variant=")

        fit = cp["fit"] if "fit" in cp else {}
        cfg = cls(
            mode=mode,
            out_dir=Path(overrides.get("out_dir", run.get("out_dir", "out"))),
            global_seed=int(run.get("global_seed", "0")),
            m_realizations=int(run.get("m_realizations", "8")),
            periods=int(run.get("periods", "2")),
            transient_periods=int(run.get("transient_periods", "1")),
            noise_std=float(overrides.get("noise_std", run.get("noise_std", "0"))),
            jobs=int(overrides.get("jobs", run.get("jobs", "1"))),
            oversample=int(run.get("oversample", "10")),
            n_samples=int(sig["n_samples"]),
            fs=float(sig["fs"]),
            harmonics=storage.parse_harmonics(sig["harmonics"]),
            dc=float(sig.get("dc", "0")),
            std=float(sig.get("std", "1")),
            model=model,
            na=int(fit.get("na", "2")),
            nb=int(fit.get("nb", "0")),
        )
        if mode == "sweep":
            if "sweep" not in cp:
                raise ValueError("sweep mode needs a [sweep] section")
            sw = cp["sweep"]
            cfg.sweep_axis = sw.get("axis", "dc").strip().lower()
            if cfg.sweep_axis not in {"dc", "std"}:
                raise ValueError("sweep axis must be dc or std")
            cfg.sweep_levels = tuple(_floats(sw["levels"]))
            if len(cfg.sweep_levels) < 3:
                raise ValueError("sweep needs at least 3 levels")
            cfg.n_boot = int(sw.get("n_boot", "40"))
            cfg.k_sigma = float(sw.get("k_sigma", "3.0"))
        elif mode == "design":
            if "doe" not in cp:
                raise ValueError("design mode needs a [doe] section")
            doe = cp["doe"]
            kwargs = {}
            if "dc_c" in doe:
                kwargs["dc_c"] = float(doe["dc_c"])
            if "std_c" in doe:
                kwargs["std_c"] = float(doe["std_c"])
            cfg.region = DoeRegion(
                dc_min=float(doe["dc_min"]),
                dc_max=float(doe["dc_max"]),
                std_min=float(doe["std_min"]),
                std_max=float(doe["std_max"]),
                l_center=int(doe.get("l_center", "4")),
                **kwargs,
            )
            cfg.n_path_points = int(doe.get("n_path_points", "5"))
            cfg.grid = overrides.get("grid", doe.getboolean("grid", fallback=False))
            if "grid_dc_levels" in doe:
                cfg.grid_dc_levels = tuple(_floats(doe["grid_dc_levels"]))
            if "grid_std_levels" in doe:
                cfg.grid_std_levels = tuple(_floats(doe["grid_std_levels"]))
        if cfg.m_realizations < 2:
            raise ValueError("need m_realizations >= 2")
        if cfg.periods < 2:
            raise ValueError("need periods >= 2 retained periods")
        return cfg


# ---------------------------------------------------------------------------
# simulation dispatch


def simulate_model(
    model: ModelLike,
    reals: list[SignalRealization],
    transient_periods: int,
    oversample: int,
) -> np.ndarray:
    """Response rows for a batch of realizations, transient removed."""
    n = reals[0].spec.n_samples
    if isinstance(model, LtiSystem):
        rows = [lti_response(model, r)[transient_periods * n :] for r in reals]
        return np.stack(rows)
    if isinstance(model, (WienerHammerstein, ParallelWH, NlFeedback)):
        return simulate_block_model_batch(model, reals, transient_periods, oversample)
    if isinstance(model, NlMsdParams):
        return simulate_nl_msd_batch(model, reals, oversample, transient_periods)
    if isinstance(model, NlXfbParams):
        rows = [simulate_nl_xfb(model, r, oversample, transient_periods) for r in reals]
        return np.stack(rows)
    raise TypeError(f"cannot simulate model of type {type(model).__name__}")


# ---------------------------------------------------------------------------
# per-setting pipeline


@dataclass
class LevelResult:
    index: int
    dc: float
    std: float
    est: object
    model_fit: object
    unc: object | None
    mse: float
    bla_path: Path
    model_path: Path | None


def _run_level(
    cfg: PipelineConfig,
    level_index: int,
    dc: float,
    std: float,
    label: str,
    with_fit: bool = True,
    with_bootstrap: bool = False,
) -> LevelResult:
    stage = "realize"
    try:
        total_periods = cfg.periods + cfg.transient_periods
        reals = [
            realize_multisine(
                MultisineSpec(
                    n_samples=cfg.n_samples,
                    fs=cfg.fs,
                    excited_harmonics=cfg.harmonics,
                    dc=dc,
                    std=std,
                    seed=derive_seed(cfg.global_seed, level_index, m, 0),
                ),
                total_periods,
            )
            for m in range(cfg.m_realizations)
        ]
        stage = "simulate"
        y = simulate_model(cfg.model, reals, cfg.transient_periods, cfg.oversample)
        y = np.stack(
            [
                add_noise(y[m], cfg.noise_std, derive_seed(cfg.global_seed, level_index, m, 1))
                for m in range(cfg.m_realizations)
            ]
        )
        n = cfg.n_samples
        u = np.stack([r.samples[cfg.transient_periods * n :] for r in reals])
        stage = "estimate"
        rec = record_from_time_data(
            u, y, cfg.fs, n, cfg.harmonics, transient_periods=0,
            meta={"dc": dc, "std": std, "global_seed": cfg.global_seed, "level": level_index},
        )
        est = estimate_bla(rec)
        bla_path = cfg.out_dir / f"bla_{label}.csv"
        storage.write_bla_csv(
            bla_path, est, meta={"dc": storage.fmt(dc), "std": storage.fmt(std)}
        )
        mse = mse_of_bla(est)
        model_fit = None
        unc = None
        model_path = None
        if with_fit:
            stage = "fit"
            weights = weight_from_variance(est)
            model_fit = fit_rational(
                est.freqs, est.g_bla, FitSpec(cfg.nb, cfg.na, weights=weights)
            )
            if with_bootstrap:
                stage = "bootstrap"
                unc = bootstrap_root_uncertainty(
                    rec,
                    FitSpec(cfg.nb, cfg.na),
                    n_boot=cfg.n_boot,
                    seed=derive_seed(cfg.global_seed, level_index, 0, 2),
                )
            model_path = cfg.out_dir / f"model_{label}.json"
            storage.write_model_json(model_path, model_fit, unc)
        return LevelResult(
            index=level_index,
            dc=dc,
            std=std,
            est=est,
            model_fit=model_fit,
            unc=unc,
            mse=mse,
            bla_path=bla_path,
            model_path=model_path,
        )
    except Exception as err:
        marker = cfg.out_dir / f"FAILED_{label}"
        marker.write_text(f"stage={stage}\nlevel={level_index}\nerror={err}\n")
        raise RuntimeError(f"stage {stage!r} failed at level {level_index}: {err}") from err


def _map_levels(cfg: PipelineConfig, tasks):
    if cfg.jobs <= 1:
        return [t() for t in tasks]
    with ThreadPoolExecutor(max_workers=cfg.jobs) as pool:
        futures = [pool.submit(t) for t in tasks]
        return [f.result() for f in futures]


def _collect_artifacts(results) -> list[Path]:
    paths = []
    for r in results:
        paths.append(r.bla_path)
        if r.model_path is not None:
            paths.append(r.model_path)
    return paths


# ---------------------------------------------------------------------------
# modes


def run_single(cfg: PipelineConfig) -> dict:
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    res = _run_level(cfg, 0, cfg.dc, cfg.std, "single", with_fit=True, with_bootstrap=False)
    summary = cfg.out_dir / "summary.csv"
    summary.write_text(
        "level,dc,std,mse\n"
        + f"0,{storage.fmt(res.dc)},{storage.fmt(res.std)},{storage.fmt(res.mse)}\n"
    )
    storage.write_manifest(cfg.out_dir, _collect_artifacts([res]) + [summary])
    return {"mse": res.mse, "bla": str(res.bla_path)}


def run_sweep(cfg: PipelineConfig) -> dict:
    """Estimate, fit, and classify across the configured DC or STD levels."""
    if len(cfg.sweep_levels) < 3:
        raise ValueError("sweep needs at least 3 levels")
    cfg.out_dir.mkdir(parents=True, exist_ok=True)

    def make_task(i, level):
        dc = level if cfg.sweep_axis == "dc" else cfg.dc
        std = level if cfg.sweep_axis == "std" else cfg.std
        return lambda: _run_level(
            cfg, i, dc, std, f"level{i:02d}", with_fit=True, with_bootstrap=True
        )

    results = _map_levels(cfg, [make_task(i, lv) for i, lv in enumerate(cfg.sweep_levels)])
    results.sort(key=lambda r: r.index)

    sweep = SweepResult(
        settings=tuple((r.dc, r.std) for r in results),
        models=tuple(r.model_fit for r in results),
        root_uncertainties=tuple(r.unc for r in results),
    )
    verdict = classify_structure(sweep, k_sigma=cfg.k_sigma)
    verdict_path = cfg.out_dir / "verdict.json"
    storage.write_verdict_json(verdict_path, verdict)

    summary = cfg.out_dir / "summary.csv"
    lines = ["level,dc,std,mse,bla_csv,model_json"]
    for r in results:
        lines.append(
            f"{r.index},{storage.fmt(r.dc)},{storage.fmt(r.std)},{storage.fmt(r.mse)},"
            f"{r.bla_path.name},{r.model_path.name}"
        )
    summary.write_text("\n".join(lines) + "\n")

    storage.write_manifest(
        cfg.out_dir, _collect_artifacts(results) + [summary, verdict_path]
    )
    return {"verdict": verdict, "results": results}


def run_design(cfg: PipelineConfig) -> dict:
    """CCD plan -> response surface -> extremum -> eigen-path -> designed runs."""
    if cfg.region is None:
        raise ValueError("design mode needs a region")
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    plan = build_plan(cfg.region)

    def make_task(i):
        dc, std = plan.settings[i]
        return lambda: _run_level(
            cfg, i, float(dc), float(std), f"row{i:02d}", with_fit=False
        )

    results = _map_levels(cfg, [make_task(i) for i in range(plan.n_rows)])
    results.sort(key=lambda r: r.index)
    mses = np.array([r.mse for r in results])

    design: dict = {
        "plan": [
            {
                "x1": float(plan.x_rows[i, 0]),
                "x2": float(plan.x_rows[i, 1]),
                "dc": float(plan.settings[i, 0]),
                "std": float(plan.settings[i, 1]),
                "mse": float(mses[i]),
            }
            for i in range(plan.n_rows)
        ]
    }
    artifacts = _collect_artifacts(results)

    if cfg.grid:
        dc_levels = cfg.grid_dc_levels or tuple(
            np.linspace(cfg.region.dc_min, cfg.region.dc_max, 6)
        )
        std_levels = cfg.grid_std_levels or tuple(
            np.linspace(cfg.region.std_min, cfg.region.std_max, 6)
        )
        grid_rows = []
        gi = 0
        for dc in dc_levels:
            for std in std_levels:
                r = _run_level(
                    cfg, 1000 + gi, float(dc), float(std), f"grid{gi:03d}", with_fit=False
                )
                grid_rows.append((dc, std, r.mse))
                artifacts.append(r.bla_path)
                gi += 1
        grid_path = cfg.out_dir / "grid_mse.csv"
        grid_path.write_text(
            "dc,std,mse\n"
            + "\n".join(
                f"{storage.fmt(a)},{storage.fmt(b)},{storage.fmt(c)}"
                for a, b, c in grid_rows
            )
            + "\n"
        )
        artifacts.append(grid_path)

    design_path = cfg.out_dir / cfg.extra.get("design_json", "design.json")
    try:
        surface = fit_surface(plan, mses)
        design["surface"] = {
            "coeffs": {
                name: float(v)
                for name, v in zip(("A20", "A11", "A02", "A10", "A01", "A00"), surface.coeffs)
            },
            "t_values": [float(t) for t in surface.t_values],
            "active": [bool(a) for a in surface.active],
            "rss": float(surface.rss),
            "var_mse": float(surface.var_mse),
        }
        ext = extremum(surface)
        design["extremum"] = {
            "x_star": [float(v) for v in ext.x_star],
            "kind": ext.kind,
        }
        path = eigen_path(surface, ext.x_star, cfg.region, cfg.n_path_points)
        design["eigen_path"] = {
            "direction": [float(v) for v in path.direction],
            "eigenvalues": [float(v) for v in path.eigenvalues],
            "designed_points": [
                {"dc": float(a), "std": float(b)} for a, b in path.designed_points
            ],
        }
    except ValueError as err:
        design["status"] = f"degenerate: {err}"
        _write_design(design_path, design)
        storage.write_manifest(cfg.out_dir, artifacts + [design_path])
        raise RuntimeError(f"design degenerate: {err}") from err

    designed_runs = []
    for i, (dc, std) in enumerate(path.designed_points):
        r = _run_level(cfg, 2000 + i, float(dc), float(std), f"path{i}", with_fit=True)
        designed_runs.append(
            {
                "dc": float(dc),
                "std": float(std),
                "mse": float(r.mse),
                "max_var_total": float(np.max(r.est.var_total)),
                "bla_csv": r.bla_path.name,
            }
        )
        artifacts.append(r.bla_path)
        if r.model_path:
            artifacts.append(r.model_path)
    design["designed_runs"] = designed_runs
    design["status"] = "ok"
    _write_design(design_path, design)
    storage.write_manifest(cfg.out_dir, artifacts + [design_path])
    return {"design": design, "plan": plan, "results": results}


def _write_design(path: Path, design: dict) -> None:
    import json

    path.write_text(json.dumps(design, indent=2) + "\n")
