"""File formats for signals, records, BLA spectra, models, and verdicts.

Everything numeric is written as decimal text with 17 significant digits,
so a write/read round trip reproduces the float64 values bit for bit and
repeated runs with equal seeds yield byte-identical artifacts.
"""

from __future__ import annotations

import csv
import hashlib
import json
import re
from pathlib import Path

import numpy as np

from .bla_robust import BlaEstimate, ExperimentRecord, record_from_time_data
from .ratfit import RationalModel
from .signal_gen import MultisineSpec, SignalRealization, harmonic_grid, realize_multisine
from .structdetect import RootUncertainty, StructureVerdict

__all__ = [
    "fmt",
    "parse_harmonics",
    "harmonics_text",
    "write_signal_csv",
    "read_signal_csv",
    "write_record_dir",
    "read_record_dir",
    "write_bla_csv",
    "read_bla_csv",
    "model_to_dict",
    "write_model_json",
    "read_model_json",
    "write_verdict_json",
    "write_manifest",
]


def fmt(x: float) -> str:
    return f"{float(x):.17g}"


def parse_harmonics(text: str) -> tuple[int, ...]:
    """Accept 'first:step:last' or a comma/space separated index list."""
    text = text.strip()
    m = re.fullmatch(r"\[?(\d+):(\d+):(\d+)\]?", text)
    if m:
        first, step, last = (int(g) for g in m.groups())
        return tuple(harmonic_grid(first, step, last))
    parts = [p for p in re.split(r"[,\s]+", text) if p]
    if not parts:
        raise ValueError("empty harmonics specification")
    return tuple(int(p) for p in parts)


def harmonics_text(ks) -> str:
    """Compact 'first:step:last' when the grid is regular, else a list."""
    ks = list(ks)
    if len(ks) >= 2:
        step = ks[1] - ks[0]
        if step >= 1 and all(b - a == step for a, b in zip(ks, ks[1:])):
            return f"{ks[0]}:{step}:{ks[-1]}"
    if len(ks) == 1:
        return f"{ks[0]}:1:{ks[0]}"
    return ",".join(str(k) for k in ks)


# ---------------------------------------------------------------------------
# signal CSV


def write_signal_csv(path, real: SignalRealization) -> None:
    spec = real.spec
    lines = [
        f"# n_samples={spec.n_samples}",
        f"# fs={fmt(spec.fs)}",
        f"# harmonics={harmonics_text(spec.excited_harmonics)}",
        f"# dc={fmt(spec.dc)}",
        f"# std={fmt(spec.std)}",
        f"# seed={spec.seed}",
        f"# periods={real.periods}",
        "sample",
    ]
    lines.extend(fmt(v) for v in real.samples)
    Path(path).write_text("\n".join(lines) + "\n")


def read_signal_csv(path) -> SignalRealization:
    """Rebuild the realization from its header; the seed makes the phase
    draw reproducible, and the stored samples are cross-checked."""
    header: dict[str, str] = {}
    samples = []
    with open(path) as f:
        for line in f:
            line = line.strip()
            if not line or line == "sample":
                continue
            if line.startswith("#"):
                key, _, value = line[1:].partition("=")
                header[key.strip()] = value.strip()
            else:
                samples.append(float(line))
    spec = MultisineSpec(
        n_samples=int(header["n_samples"]),
        fs=float(header["fs"]),
        excited_harmonics=parse_harmonics(header["harmonics"]),
        dc=float(header["dc"]),
        std=float(header["std"]),
        seed=int(header["seed"]),
    )
    real = realize_multisine(spec, int(header["periods"]))
    stored = np.asarray(samples)
    if stored.size != real.samples.size or not np.allclose(
        stored, real.samples, rtol=0, atol=1e-9 * max(1.0, np.abs(real.samples).max())
    ):
        raise ValueError(f"{path}: samples do not match the header spec")
    return real


# ---------------------------------------------------------------------------
# record directory: one CSV per (m, p) plus a manifest


def write_record_dir(
    out_dir,
    u: np.ndarray,
    y: np.ndarray,
    spec: MultisineSpec,
    extra_meta: dict | None = None,
) -> None:
    """Persist steady-state time data, shape (M, P*N), one file per period."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    u = np.atleast_2d(u)
    y = np.atleast_2d(y)
    n = spec.n_samples
    m_r, total = u.shape
    p_p = total // n
    meta = {
        "m": m_r,
        "p": p_p,
        "n_samples": n,
        "fs": fmt(spec.fs),
        "harmonics": harmonics_text(spec.excited_harmonics),
        "dc": fmt(spec.dc),
        "std": fmt(spec.std),
    }
    if extra_meta:
        meta.update(extra_meta)
    with open(out / "manifest.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["key", "value"])
        for k, v in meta.items():
            w.writerow([k, v])
    t0 = np.arange(n) / spec.fs
    for m in range(m_r):
        for p in range(p_p):
            seg = slice(p * n, (p + 1) * n)
            rows = np.column_stack([t0 + p * n / spec.fs, u[m, seg], y[m, seg]])
            with open(out / f"m{m:03d}_p{p:02d}.csv", "w", newline="") as f:
                f.write("time,u,y\n")
                for row in rows:
                    f.write(",".join(fmt(v) for v in row) + "\n")


def read_record_dir(rec_dir) -> ExperimentRecord:
    rec = Path(rec_dir)
    meta: dict[str, str] = {}
    with open(rec / "manifest.csv") as f:
        for row in csv.DictReader(f):
            meta[row["key"]] = row["value"]
    m_r = int(meta["m"])
    p_p = int(meta["p"])
    n = int(meta["n_samples"])
    fs = float(meta["fs"])
    ks = parse_harmonics(meta["harmonics"])
    u = np.empty((m_r, p_p * n))
    y = np.empty((m_r, p_p * n))
    for m in range(m_r):
        for p in range(p_p):
            data = np.genfromtxt(rec / f"m{m:03d}_p{p:02d}.csv", delimiter=",", skip_header=1)
            u[m, p * n : (p + 1) * n] = data[:, 1]
            y[m, p * n : (p + 1) * n] = data[:, 2]
    extra = {
        k: v for k, v in meta.items() if k not in {"m", "p", "n_samples", "fs", "harmonics"}
    }
    # record dirs hold steady-state periods only, so no transient to strip
    return record_from_time_data(u, y, fs, n, ks, transient_periods=0, meta=extra)


# ---------------------------------------------------------------------------
# BLA spectrum CSV


def write_bla_csv(path, est: BlaEstimate, meta: dict | None = None) -> None:
    lines = []
    info = {"m": est.n_realizations, "p": est.n_periods}
    if meta:
        info.update(meta)
    if "excited_harmonics" in info:
        info["excited_harmonics"] = harmonics_text(info["excited_harmonics"])
    for k, v in info.items():
        lines.append(f"# {k}={v}")
    lines.append("f_hz,re_g,im_g,var_total,var_noise,var_stoch_nl")
    for i in range(est.freqs.size):
        lines.append(
            ",".join(
                fmt(v)
                for v in (
                    est.freqs[i],
                    est.g_bla[i].real,
                    est.g_bla[i].imag,
                    est.var_total[i],
                    est.var_noise[i],
                    est.var_stoch_nl[i],
                )
            )
        )
    Path(path).write_text("\n".join(lines) + "\n")


def read_bla_csv(path):
    """Returns (freqs, g, var_total, var_noise, var_stoch_nl, meta)."""
    meta: dict[str, str] = {}
    rows = []
    with open(path) as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                key, _, value = line[1:].partition("=")
                meta[key.strip()] = value.strip()
            elif not line.startswith("f_hz"):
                rows.append([float(v) for v in line.split(",")])
    data = np.asarray(rows)
    freqs = data[:, 0]
    g = data[:, 1] + 1j * data[:, 2]
    return freqs, g, data[:, 3], data[:, 4], data[:, 5], meta


# ---------------------------------------------------------------------------
# model / verdict JSON


def _complex_list(values) -> list[list[float]]:
    return [[float(v.real), float(v.imag)] for v in np.asarray(values, dtype=complex)]


def model_to_dict(model: RationalModel, unc: RootUncertainty | None = None) -> dict:
    d = {
        "num_coeffs": [float(c) for c in model.num_coeffs],
        "den_coeffs": [float(c) for c in model.den_coeffs],
        "poles": _complex_list(model.poles),
        "zeros": _complex_list(model.zeros),
        "weighted_rms_residual": float(model.weighted_rms_residual),
        "converged": bool(model.converged),
        "n_iters": int(model.n_iters),
        "stable": bool(model.stable),
    }
    if unc is not None:
        d["root_uncertainty"] = {
            "poles": [float(v) for v in unc.poles],
            "zeros": [float(v) for v in unc.zeros],
            "ambiguous": bool(unc.ambiguous),
        }
    return d


def write_model_json(path, model: RationalModel, unc: RootUncertainty | None = None) -> None:
    Path(path).write_text(json.dumps(model_to_dict(model, unc), indent=2) + "\n")


def read_model_json(path) -> tuple[RationalModel, RootUncertainty | None]:
    d = json.loads(Path(path).read_text())
    poles = np.array([complex(re, im) for re, im in d["poles"]], dtype=complex)
    zeros = np.array([complex(re, im) for re, im in d["zeros"]], dtype=complex)
    model = RationalModel(
        num_coeffs=np.asarray(d["num_coeffs"], dtype=float),
        den_coeffs=np.asarray(d["den_coeffs"], dtype=float),
        poles=poles,
        zeros=zeros,
        weighted_rms_residual=float(d["weighted_rms_residual"]),
        residuals=np.array([]),
        converged=bool(d["converged"]),
        n_iters=int(d["n_iters"]),
        stable=bool(d["stable"]),
    )
    unc = None
    if "root_uncertainty" in d:
        ru = d["root_uncertainty"]
        unc = RootUncertainty(
            poles=np.asarray(ru["poles"], dtype=float),
            zeros=np.asarray(ru["zeros"], dtype=float),
            ambiguous=bool(ru["ambiguous"]),
        )
    return model, unc


def write_verdict_json(path, verdict: StructureVerdict) -> None:
    d = {
        "label": verdict.label,
        "pole_moved": verdict.pole_moved,
        "zero_moved": verdict.zero_moved,
        "movement_scores": verdict.movement_scores,
        "caveat": verdict.caveat,
        "k_sigma": verdict.k_sigma,
    }
    Path(path).write_text(json.dumps(d, indent=2) + "\n")


# ---------------------------------------------------------------------------
# run manifest


def write_manifest(out_dir, paths) -> None:
    """List every artifact of a run with its content hash."""
    out = Path(out_dir)
    entries = []
    for p in sorted(Path(p) for p in paths):
        digest = hashlib.sha256(p.read_bytes()).hexdigest()
        entries.append({"path": str(p.relative_to(out)), "sha256": digest})
    (out / "run_manifest.json").write_text(
        json.dumps({"artifacts": entries}, indent=2) + "\n"
    )
