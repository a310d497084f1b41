import json

import numpy as np
import pytest

from bla_lab import cli, storage
from bla_lab.bla_robust import estimate_bla, record_from_time_data
from bla_lab.ratfit import FitSpec, fit_rational
from bla_lab.signal_gen import MultisineSpec, harmonic_grid, realize_multisine
from bla_lab.structdetect import RootUncertainty
from bla_lab.sysmodels import LtiSystem, add_noise, lti_response

KS = tuple(harmonic_grid(3, 2, 101))


def test_parse_harmonics_forms():
    assert storage.parse_harmonics("3:2:9") == (3, 5, 7, 9)
    assert storage.parse_harmonics("[3:2:9]") == (3, 5, 7, 9)
    assert storage.parse_harmonics("1, 4, 9") == (1, 4, 9)
    assert storage.harmonics_text((3, 5, 7, 9)) == "3:2:9"
    assert storage.harmonics_text((1, 4, 9)) == "1,4,9"


def test_signal_csv_roundtrip(tmp_path):
    spec = MultisineSpec(512, 512.0, KS, 0.03, 0.2, seed=5)
    real = realize_multisine(spec, 3)
    path = tmp_path / "sig.csv"
    storage.write_signal_csv(path, real)
    back = storage.read_signal_csv(path)
    assert np.array_equal(back.samples, real.samples)
    assert back.spec == spec


def test_signal_csv_detects_tampering(tmp_path):
    real = realize_multisine(MultisineSpec(512, 512.0, KS, 0.0, 0.2, 5), 2)
    path = tmp_path / "sig.csv"
    storage.write_signal_csv(path, real)
    lines = path.read_text().splitlines()
    lines[20] = "99.9"
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(ValueError, match="do not match"):
        storage.read_signal_csv(path)


def test_record_dir_roundtrip(tmp_path):
    n = 512
    g = LtiSystem([1.0], [1.0, 1.0 / (2 * np.pi * 20)])
    spec = MultisineSpec(n, float(n), KS, 0.0, 0.4, 3)
    us, ys = [], []
    for m in range(3):
        u = realize_multisine(
            MultisineSpec(n, float(n), KS, 0.0, 0.4, 3 + m), 2
        )
        us.append(u.samples)
        ys.append(add_noise(lti_response(g, u), 1e-4, seed=m))
    u_arr, y_arr = np.array(us), np.array(ys)
    storage.write_record_dir(tmp_path / "rec.d", u_arr, y_arr, spec)
    rec = storage.read_record_dir(tmp_path / "rec.d")
    ref = record_from_time_data(u_arr, y_arr, float(n), n, KS, 0)
    assert np.allclose(rec.u_spectra, ref.u_spectra, rtol=0, atol=1e-18)
    assert np.allclose(rec.y_spectra, ref.y_spectra, rtol=0, atol=1e-18)
    assert rec.meta["dc"] == "0"


def test_bla_csv_roundtrip(tmp_path):
    n = 512
    g = LtiSystem([1.0], [1.0, 1.0 / (2 * np.pi * 20)])
    us, ys = [], []
    for m in range(3):
        u = realize_multisine(MultisineSpec(n, float(n), KS, 0.0, 0.4, m), 2)
        us.append(u.samples)
        ys.append(add_noise(lti_response(g, u), 1e-4, seed=m))
    rec = record_from_time_data(np.array(us), np.array(ys), float(n), n, KS, 0)
    est = estimate_bla(rec)
    path = tmp_path / "bla.csv"
    storage.write_bla_csv(path, est)
    freqs, g_read, vt, vn, vs, meta = storage.read_bla_csv(path)
    assert np.array_equal(freqs, est.freqs)
    assert np.array_equal(g_read, est.g_bla)
    assert np.array_equal(vt, est.var_total)
    assert np.array_equal(vn, est.var_noise)
    assert np.array_equal(vs, est.var_stoch_nl)
    assert meta["m"] == "3"


def test_model_json_roundtrip(tmp_path):
    freqs = np.arange(3, 400, 2) * 0.5
    wn = 2 * np.pi * 40
    s = 2j * np.pi * freqs
    g = wn**2 / (s**2 + 2 * 0.2 * wn * s + wn**2)
    model = fit_rational(freqs, g, FitSpec(0, 2))
    unc = RootUncertainty(poles=np.array([0.5, 0.5]), zeros=np.zeros(0))
    path = tmp_path / "model.json"
    storage.write_model_json(path, model, unc)
    back, unc_back = storage.read_model_json(path)
    assert np.array_equal(back.poles, model.poles)
    assert np.array_equal(back.num_coeffs, model.num_coeffs)
    assert np.array_equal(unc_back.poles, unc.poles)
    assert not unc_back.ambiguous


def _write_model_cfg(path, text):
    path.write_text(text)
    return str(path)


# poles at 10 and 20 Hz, zero at 30 Hz: everything inside the excited band
WH_CFG = """
[model]
variant = wiener_hammerstein

[g1]
num = 1.0
den = 1.0 0.015915494309189534

[nl]
poly = 0 1 0.4 0.3

[g2]
num = 1.0 0.005305164769729845
den = 1.0 0.007957747154594767
"""


def test_model_config_variants_parse(tmp_path):
    from bla_lab.pipeline import load_model_config
    from bla_lab.sysmodels import NlFeedback, NlMsdParams, NlXfbParams, ParallelWH

    p = tmp_path / "m.cfg"
    p.write_text(
        """
[model]
variant = parallel_wh
branches = 2

[branch1.g1]
num = 1
den = 1 0.02
[branch1.nl]
poly = 0 1 0.5
[branch1.g2]
num = 1
den = 1
[branch2.g1]
num = 1
den = 1 0.004
[branch2.nl]
poly = 0 1 0 0.7
[branch2.g2]
num = 1
den = 1
"""
    )
    model = load_model_config(p)
    assert isinstance(model, ParallelWH) and len(model.branches) == 2

    p.write_text(
        "[model]\nvariant = nl_feedback\n\n[g1]\nnum = 1\nden = 1 0.01\n\n"
        "[g21]\nnum = 1\nden = 1\n\n[nl]\npoly = 0 1 0 0.5\n\n[g22]\nnum = 1\nden = 1\n"
    )
    assert isinstance(load_model_config(p), NlFeedback)

    p.write_text("[model]\nvariant = nl_msd\n\n[params]\nk3 = 2e16\n")
    msd = load_model_config(p)
    assert isinstance(msd, NlMsdParams) and msd.k3 == 2e16

    p.write_text("[model]\nvariant = nl_xfb\n\n[params]\nfb_scale = 25\n")
    xfb = load_model_config(p)
    assert isinstance(xfb, NlXfbParams) and xfb.fb_scale == 25

    p.write_text("[model]\nvariant = mystery\n")
    with pytest.raises(ValueError, match="unknown model variant"):
        load_model_config(p)


def test_cli_generate_simulate_estimate_fit(tmp_path):
    sig = tmp_path / "sig.csv"
    rc = cli.main(
        [
            "generate", "--n", "512", "--fs", "512", "--harmonics", "3:2:101",
            "--dc", "0.02", "--std", "0.3", "--periods", "3", "--seed", "11",
            "--out", str(sig),
        ]
    )
    assert rc == 0
    model_cfg = _write_model_cfg(tmp_path / "model.cfg", WH_CFG)
    rec = tmp_path / "rec.d"
    rc = cli.main(
        [
            "simulate", "--model", model_cfg, "--signal", str(sig),
            "--noise-std", "1e-5", "--realizations", "6", "--out", str(rec),
        ]
    )
    assert rc == 0
    bla = tmp_path / "bla.csv"
    assert cli.main(["estimate", "--rec", str(rec), "--out", str(bla)]) == 0
    model_json = tmp_path / "model.json"
    rc = cli.main(
        [
            "fit", "--bla", str(bla), "--na", "2", "--nb", "1",
            "--rec", str(rec), "--n-boot", "25", "--out", str(model_json),
        ]
    )
    assert rc == 0
    d = json.loads(model_json.read_text())
    poles = np.array([complex(a, b) for a, b in d["poles"]])
    want = np.array([-2 * np.pi * 10, -2 * np.pi * 20])
    got = np.sort(poles.real)
    assert np.abs(np.sort(want) - got).max() / np.abs(want).max() < 0.05
    assert "root_uncertainty" in d


def test_cli_detect_exit_codes(tmp_path):
    # verdicts straight from hand-written model files
    def write_model(path, poles, zeros, unc):
        d = {
            "num_coeffs": [1.0],
            "den_coeffs": [1.0] * (len(poles) + 1),
            "poles": [[p, 0.0] for p in poles],
            "zeros": [[z, 0.0] for z in zeros],
            "weighted_rms_residual": 0.0,
            "converged": True,
            "n_iters": 1,
            "stable": True,
            "root_uncertainty": {
                "poles": [unc] * len(poles),
                "zeros": [unc] * len(zeros),
                "ambiguous": False,
            },
        }
        path.write_text(json.dumps(d))

    settings = tmp_path / "sweep.csv"
    settings.write_text("dc,std\n0,0.1\n0,0.2\n0,0.3\n")

    # both pole and zero movement -> inconclusive -> exit 4
    for i, (p, z) in enumerate([([-10.0], [-30.0]), ([-15.0], [-40.0]), ([-20.0], [-50.0])]):
        write_model(tmp_path / f"m{i}.json", p, z, unc=0.5)
    out = tmp_path / "verdict.json"
    rc = cli.main(
        ["detect", "--models"]
        + [str(tmp_path / f"m{i}.json") for i in range(3)]
        + ["--settings", str(settings), "--out", str(out)]
    )
    assert rc == 4
    assert json.loads(out.read_text())["label"] == "Inconclusive"

    # stable roots -> WH -> exit 0
    for i in range(3):
        write_model(tmp_path / f"w{i}.json", [-10.0], [-30.0], unc=0.5)
    rc = cli.main(
        ["detect", "--models"]
        + [str(tmp_path / f"w{i}.json") for i in range(3)]
        + ["--settings", str(settings), "--out", str(out)]
    )
    assert rc == 0
    assert json.loads(out.read_text())["label"] == "WH"


def test_cli_detect_requires_uncertainties(tmp_path):
    d = {
        "num_coeffs": [1.0],
        "den_coeffs": [1.0, 1.0],
        "poles": [[-1.0, 0.0]],
        "zeros": [],
        "weighted_rms_residual": 0.0,
        "converged": True,
        "n_iters": 1,
        "stable": True,
    }
    for i in range(3):
        (tmp_path / f"m{i}.json").write_text(json.dumps(d))
    settings = tmp_path / "sweep.csv"
    settings.write_text("dc,std\n0,0.1\n0,0.2\n0,0.3\n")
    rc = cli.main(
        ["detect", "--models"]
        + [str(tmp_path / f"m{i}.json") for i in range(3)]
        + ["--settings", str(settings), "--out", str(tmp_path / "v.json")]
    )
    assert rc == 2


SWEEP_CFG = """
[run]
mode = sweep
out_dir = {out}
global_seed = 902
m_realizations = 6
periods = 2
transient_periods = 1
noise_std = 1e-5
oversample = 8

[signal]
n_samples = 1024
fs = 1024
harmonics = 3:2:201
dc = 0.0
std = 0.25

[model]
file = {model}

[fit]
na = 2
nb = 1

[sweep]
axis = std
levels = 0.1 0.3 0.5 0.7
n_boot = 25
k_sigma = 3.0
"""


def test_cli_sweep_pipeline_and_artifacts(tmp_path):
    model_cfg = _write_model_cfg(tmp_path / "model.cfg", WH_CFG)
    cfg = tmp_path / "sweep.cfg"
    out = tmp_path / "out"
    cfg.write_text(SWEEP_CFG.format(out=out, model=model_cfg))
    rc = cli.main(["sweep", "--config", str(cfg)])
    assert rc == 0
    verdict = json.loads((out / "verdict.json").read_text())
    assert verdict["label"] == "WH"
    summary = (out / "summary.csv").read_text().splitlines()
    assert len(summary) == 5
    manifest = json.loads((out / "run_manifest.json").read_text())
    names = {e["path"] for e in manifest["artifacts"]}
    assert "verdict.json" in names and "summary.csv" in names
    assert sum(1 for p in names if p.startswith("bla_level")) == 4
    # manifest hashes really are the artifact contents
    import hashlib

    for entry in manifest["artifacts"]:
        digest = hashlib.sha256((out / entry["path"]).read_bytes()).hexdigest()
        assert digest == entry["sha256"]
    # total distortion band rises with the excitation std
    band_means = []
    for i in range(4):
        _, _, vt, _, _, _ = storage.read_bla_csv(out / f"bla_level{i:02d}.csv")
        band_means.append(vt.mean())
    assert all(b > a for a, b in zip(band_means, band_means[1:]))


MSD_SWEEP_CFG = """
[run]
mode = sweep
out_dir = {out}
global_seed = 314
m_realizations = 8
periods = 2
transient_periods = 1
noise_std = 1e-8
oversample = 10

[signal]
n_samples = 1220
fs = 2440
harmonics = 3:2:99
std = 0.03

[model]
variant = nl_msd

[fit]
na = 2
nb = 0

[sweep]
axis = dc
levels = 0.0 0.07 0.14 0.2
n_boot = 25
"""


def test_cli_dc_sweep_on_hardening_device_detects_feedback(tmp_path):
    cfg = tmp_path / "sweep.cfg"
    out = tmp_path / "out"
    cfg.write_text(MSD_SWEEP_CFG.format(out=out))
    rc = cli.main(["sweep", "--config", str(cfg)])
    assert rc == 0
    verdict = json.loads((out / "verdict.json").read_text())
    assert verdict["label"] == "NlFeedback"
    assert len(list(out.glob("bla_level*.csv"))) == 4


def test_cli_sweep_rejects_too_few_levels(tmp_path):
    model_cfg = _write_model_cfg(tmp_path / "model.cfg", WH_CFG)
    cfg = tmp_path / "sweep.cfg"
    text = SWEEP_CFG.format(out=tmp_path / "o", model=model_cfg).replace(
        "levels = 0.1 0.3 0.5 0.7", "levels = 0.1"
    )
    cfg.write_text(text)
    assert cli.main(["sweep", "--config", str(cfg)]) == 2


def test_cli_config_error_paths(tmp_path):
    assert cli.main(["sweep", "--config", str(tmp_path / "missing.cfg")]) == 2
    bad = tmp_path / "bad.cfg"
    bad.write_text("[run]\nmode = sweep\n")
    assert cli.main(["sweep", "--config", str(bad)]) == 2


DESIGN_CFG = """
[run]
mode = design
out_dir = {out}
global_seed = 55
m_realizations = 4
periods = 2
transient_periods = 1
noise_std = 0.0

[signal]
n_samples = 512
fs = 512
harmonics = 3:2:101

[model]
variant = lti

[g1]
num = 1.0
den = 1.0 0.01

[fit]
na = 2
nb = 0

[doe]
dc_min = 0.0
dc_max = 0.1
std_min = 0.05
std_max = 0.15
l_center = 4
"""


def test_cli_design_degenerate_surfaces_cleanly(tmp_path):
    # noiseless linear model: zero distortion everywhere, no extremum
    cfg = tmp_path / "design.cfg"
    out = tmp_path / "out"
    cfg.write_text(DESIGN_CFG.format(out=out))
    rc = cli.main(["design", "--region", str(cfg)])
    assert rc == 3
    d = json.loads((out / "design.json").read_text())
    assert d["status"].startswith("degenerate")
    assert len(d["plan"]) == 12
    assert max(abs(r["mse"]) for r in d["plan"]) < 1e-25


def test_cli_design_out_as_json_path(tmp_path):
    cfg = tmp_path / "design.cfg"
    out = tmp_path / "outdir"
    cfg.write_text(DESIGN_CFG.format(out=out))
    target = tmp_path / "elsewhere" / "mydesign.json"
    target.parent.mkdir()
    rc = cli.main(["design", "--region", str(cfg), "--out", str(target)])
    assert rc == 3  # degenerate input model, but the file lands at the target
    assert target.exists()
    assert json.loads(target.read_text())["status"].startswith("degenerate")


def test_cli_design_grid_mode_emits_contour_csv(tmp_path):
    cfg = tmp_path / "design.cfg"
    out = tmp_path / "out"
    cfg.write_text(DESIGN_CFG.format(out=out))
    rc = cli.main(["design", "--region", str(cfg), "--grid"])
    assert rc == 3  # surface still degenerate, but the grid is emitted
    rows = (out / "grid_mse.csv").read_text().splitlines()
    assert rows[0] == "dc,std,mse"
    assert len(rows) == 1 + 36


def test_pipeline_failed_marker_on_stage_error(tmp_path):
    # a resonator pole exactly on an excited bin: the simulate stage of
    # level 0 fails, leaves a marker, and surfaces as a numeric failure
    wk = 2 * np.pi * 32.0
    cfg = tmp_path / "sweep.cfg"
    out = tmp_path / "out"
    cfg.write_text(
        f"""
[run]
mode = sweep
out_dir = {out}
global_seed = 1
m_realizations = 4
periods = 2
transient_periods = 0

[signal]
n_samples = 512
fs = 512
harmonics = 32

[model]
variant = lti

[g1]
num = 1.0
den = {wk * wk} 0.0 1.0

[fit]
na = 2
nb = 0

[sweep]
axis = std
levels = 0.1 0.2 0.3
"""
    )
    assert cli.main(["sweep", "--config", str(cfg)]) == 3
    markers = list(out.glob("FAILED_*"))
    assert len(markers) >= 1
    assert "stage=simulate" in markers[0].read_text()


def test_jobs_override_env(monkeypatch):
    import argparse

    monkeypatch.setenv("BLA_LAB_JOBS", "7")
    args = argparse.Namespace(jobs=None, out=None)
    assert cli._jobs_override(args)["jobs"] == 7
    args = argparse.Namespace(jobs=3, out=None)
    assert cli._jobs_override(args)["jobs"] == 3


def test_threaded_sweep_matches_serial(tmp_path):
    from bla_lab.pipeline import PipelineConfig, run_sweep
    import hashlib

    model_cfg = _write_model_cfg(tmp_path / "model.cfg", WH_CFG)
    cfg_path = tmp_path / "sweep.cfg"
    cfg_path.write_text(SWEEP_CFG.format(out=tmp_path / "serial", model=model_cfg))

    def run(out_dir, jobs):
        cfg = PipelineConfig.from_file(cfg_path, out_dir=str(out_dir), jobs=jobs)
        run_sweep(cfg)
        return {
            p.name: hashlib.sha256(p.read_bytes()).hexdigest()
            for p in sorted(out_dir.glob("*"))
        }

    h1 = run(tmp_path / "serial", 1)
    h2 = run(tmp_path / "threaded", 3)
    assert h1 == h2


def test_run_single_mode(tmp_path):
    from bla_lab.pipeline import PipelineConfig, run_single

    model_cfg = _write_model_cfg(tmp_path / "model.cfg", WH_CFG)
    cfg_path = tmp_path / "single.cfg"
    cfg_path.write_text(
        f"""
[run]
mode = single
out_dir = {tmp_path / "out"}
global_seed = 5
m_realizations = 4
periods = 2
transient_periods = 1
noise_std = 1e-5

[signal]
n_samples = 512
fs = 512
harmonics = 3:2:101
dc = 0.0
std = 0.3

[model]
file = {model_cfg}

[fit]
na = 2
nb = 1
"""
    )
    cfg = PipelineConfig.from_file(cfg_path)
    out = run_single(cfg)
    assert out["mse"] > 0
    assert (tmp_path / "out" / "bla_single.csv").exists()
    assert (tmp_path / "out" / "run_manifest.json").exists()
