"""Command-line interface.

Subcommands cover the pipeline stage by stage (generate, simulate,
estimate, fit, detect) and end to end (sweep, design).  Exit codes:
0 success, 2 configuration error, 3 numeric failure, 4 inconclusive
structure verdict (detect only; outputs are still written).
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import pipeline, storage
from .bla_robust import estimate_bla
from .ratfit import FitSpec, fit_rational
from .signal_gen import MultisineSpec, realize_multisine
from .structdetect import SweepResult, classify_structure
from .sysmodels import add_noise

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_INCONCLUSIVE = 4


def _build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="bla-lab",
        description="BLA measurement, distortion analysis, structure detection, "
        "and DC/STD experiment design for nonlinear systems",
    )
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a random-phase multisine CSV")
    g.add_argument("--n", type=int, required=True, help="samples per period")
    g.add_argument("--fs", type=float, required=True)
    g.add_argument("--harmonics", required=True, help="first:step:last or list")
    g.add_argument("--dc", type=float, default=0.0)
    g.add_argument("--std", type=float, default=1.0)
    g.add_argument("--periods", type=int, default=2)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)

    s = sub.add_parser("simulate", help="simulate a model, write a record directory")
    s.add_argument("--model", required=True, help="model config file")
    s.add_argument("--signal", required=True, help="signal CSV from generate")
    s.add_argument("--noise-std", type=float, default=0.0)
    s.add_argument("--realizations", type=int, default=2)
    s.add_argument("--transient", type=int, default=1)
    s.add_argument("--oversample", type=int, default=10)
    s.add_argument("--out", required=True, help="record directory")

    e = sub.add_parser("estimate", help="robust BLA estimate from a record directory")
    e.add_argument("--rec", required=True)
    e.add_argument("--out", required=True, help="bla CSV path")

    f = sub.add_parser("fit", help="rational fit of a BLA CSV")
    f.add_argument("--bla", required=True)
    f.add_argument("--na", type=int, required=True)
    f.add_argument("--nb", type=int, default=0)
    f.add_argument("--weights", choices=["variance", "uniform"], default="variance")
    f.add_argument("--rec", help="record directory for bootstrap uncertainties")
    f.add_argument("--n-boot", type=int, default=40)
    f.add_argument("--seed", type=int, default=0)
    f.add_argument("--out", required=True, help="model JSON path")

    d = sub.add_parser("detect", help="classify structure from fitted models")
    d.add_argument("--models", nargs="+", required=True)
    d.add_argument("--settings", required=True, help="CSV with dc,std per model")
    d.add_argument("--k-sigma", type=float, default=3.0)
    d.add_argument("--out", required=True, help="verdict JSON path")

    w = sub.add_parser("sweep", help="run a DC or STD sweep pipeline")
    w.add_argument("--config", required=True)
    w.add_argument("--jobs", type=int)
    w.add_argument("--out")

    de = sub.add_parser("design", help="run the CCD + eigen-path pipeline")
    de.add_argument("--region", help="pipeline config with a [doe] section")
    de.add_argument("--config", help="alias for --region")
    de.add_argument("--model", help="override model config file")
    de.add_argument("--noise-std", type=float)
    de.add_argument("--grid", action="store_true", help="also sweep a full grid")
    de.add_argument("--jobs", type=int)
    de.add_argument("--out")
    return ap


def _jobs_override(args) -> dict:
    over = {}
    env = os.environ.get("BLA_LAB_JOBS")
    if getattr(args, "jobs", None) is not None:
        over["jobs"] = args.jobs
    elif env:
        over["jobs"] = int(env)
    if getattr(args, "out", None):
        over["out_dir"] = args.out
    return over


def _cmd_generate(args) -> int:
    spec = MultisineSpec(
        n_samples=args.n,
        fs=args.fs,
        excited_harmonics=storage.parse_harmonics(args.harmonics),
        dc=args.dc,
        std=args.std,
        seed=args.seed,
    )
    real = realize_multisine(spec, args.periods)
    storage.write_signal_csv(args.out, real)
    print(f"wrote {args.out}: {real.periods} periods x {spec.n_samples} samples")
    return EXIT_OK


def _cmd_simulate(args) -> int:
    model = pipeline.load_model_config(args.model)
    base = storage.read_signal_csv(args.signal)
    if args.realizations < 2:
        raise ValueError("need at least 2 realizations for a record")
    if base.periods < args.transient + 2:
        raise ValueError("signal needs at least transient + 2 periods")
    spec = base.spec
    reals = [base]
    for m in range(1, args.realizations):
        seed_m = pipeline.derive_seed(spec.seed, m)
        reals.append(
            realize_multisine(
                MultisineSpec(
                    spec.n_samples, spec.fs, spec.excited_harmonics,
                    spec.dc, spec.std, seed=seed_m,
                ),
                base.periods,
            )
        )
    y = pipeline.simulate_model(model, reals, args.transient, args.oversample)
    y = np.stack(
        [
            add_noise(y[m], args.noise_std, pipeline.derive_seed(spec.seed, m, 1))
            for m in range(args.realizations)
        ]
    )
    n = spec.n_samples
    u = np.stack([r.samples[args.transient * n :] for r in reals])
    storage.write_record_dir(
        args.out, u, y, spec,
        extra_meta={"noise_std": storage.fmt(args.noise_std), "seed": spec.seed},
    )
    print(f"wrote record {args.out}: M={args.realizations} P={base.periods - args.transient}")
    return EXIT_OK


def _cmd_estimate(args) -> int:
    rec = storage.read_record_dir(args.rec)
    est = estimate_bla(rec)
    storage.write_bla_csv(args.out, est, meta=rec.meta)
    print(f"wrote {args.out}: {est.freqs.size} bins")
    return EXIT_OK


def _cmd_fit(args) -> int:
    freqs, g, var_total, _, _, _ = storage.read_bla_csv(args.bla)
    if args.weights == "variance":
        from types import SimpleNamespace

        from .ratfit import weight_from_variance

        shim = SimpleNamespace(
            var_total=var_total, ill_conditioned=np.zeros(var_total.size, dtype=bool)
        )
        weights = weight_from_variance(shim)
    else:
        weights = None
    model = fit_rational(freqs, g, FitSpec(args.nb, args.na, weights=weights))
    unc = None
    if args.rec:
        from .structdetect import bootstrap_root_uncertainty

        rec = storage.read_record_dir(args.rec)
        unc = bootstrap_root_uncertainty(
            rec, FitSpec(args.nb, args.na), n_boot=args.n_boot, seed=args.seed
        )
    storage.write_model_json(args.out, model, unc)
    flag = "" if model.converged else " (non-converged)"
    print(f"wrote {args.out}: poles {model.poles.tolist()}{flag}")
    return EXIT_OK


def _read_settings_csv(path):
    rows = []
    with open(path) as f:
        for line in f:
            line = line.strip()
            if not line or line.startswith("#") or line.lower().startswith("dc"):
                continue
            parts = line.split(",")
            rows.append((float(parts[0]), float(parts[1])))
    return rows


def _cmd_detect(args) -> int:
    settings = _read_settings_csv(args.settings)
    if len(settings) != len(args.models):
        raise ValueError("one settings row per model required")
    models = []
    uncs = []
    for path in args.models:
        model, unc = storage.read_model_json(path)
        if unc is None:
            raise ValueError(
                f"{path} carries no root uncertainties; "
                "produce models with 'fit --rec' or the sweep pipeline"
            )
        models.append(model)
        uncs.append(unc)
    sweep = SweepResult(
        settings=tuple(settings), models=tuple(models), root_uncertainties=tuple(uncs)
    )
    verdict = classify_structure(sweep, k_sigma=args.k_sigma)
    storage.write_verdict_json(args.out, verdict)
    print(f"verdict: {verdict.label} (poles moved: {verdict.pole_moved}, "
          f"zeros moved: {verdict.zero_moved})")
    return EXIT_INCONCLUSIVE if verdict.label == "Inconclusive" else EXIT_OK


def _cmd_sweep(args) -> int:
    cfg = pipeline.PipelineConfig.from_file(args.config, mode="sweep", **_jobs_override(args))
    out = pipeline.run_sweep(cfg)
    verdict = out["verdict"]
    print(f"sweep done: verdict {verdict.label}; outputs in {cfg.out_dir}")
    return EXIT_OK


def _cmd_design(args) -> int:
    cfg_path = args.region or args.config
    if not cfg_path:
        raise ValueError("design needs --region (or --config)")
    over = _jobs_override(args)
    # `--out somewhere/result.json` targets the file; artifacts go beside it
    design_name = None
    if over.get("out_dir", "").endswith(".json"):
        from pathlib import Path

        target = Path(over["out_dir"])
        over["out_dir"] = str(target.parent)
        design_name = target.name
    if args.noise_std is not None:
        over["noise_std"] = args.noise_std
    if args.grid:
        over["grid"] = True
    cfg = pipeline.PipelineConfig.from_file(cfg_path, mode="design", **over)
    if design_name:
        cfg.extra["design_json"] = design_name
    if args.model:
        cfg.model = pipeline.load_model_config(args.model)
    out = pipeline.run_design(cfg)
    pts = out["design"]["eigen_path"]["designed_points"]
    print(f"design done: {len(pts)} path settings; outputs in {cfg.out_dir}")
    return EXIT_OK


_COMMANDS = {
    "generate": _cmd_generate,
    "simulate": _cmd_simulate,
    "estimate": _cmd_estimate,
    "fit": _cmd_fit,
    "detect": _cmd_detect,
    "sweep": _cmd_sweep,
    "design": _cmd_design,
}


def main(argv=None) -> int:
    ap = _build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as e:
        return EXIT_CONFIG if e.code not in (0, None) else EXIT_OK
    try:
        return _COMMANDS[args.command](args)
    except (ValueError, KeyError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except RuntimeError as err:
        print(f"numeric failure: {err}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
