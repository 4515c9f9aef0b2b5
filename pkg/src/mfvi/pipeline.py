"""Experiment pipeline: simulate -> train-forward -> train-inverse /
train-baseline -> reconstruct -> evaluate.

Each stage owns a directory under the experiment's output directory and
records a ``stage.json`` with the config fingerprint and its outputs; a
rerun with the same fingerprint skips the stage unless forced. A root
``manifest.json`` lists every artifact with a content digest. Timing values
(the one nondeterministic output) are masked when digesting report files,
so identical configs reproduce identical digests.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import time
from pathlib import Path

import numpy as np

from .baselines import train_baseline_cvae
from .checkpoint import load_model, save_model
from .config import ExperimentConfig
from .datasets import (
    ExperimentSplits,
    PairedDataset,
    load_idx_dataset,
    make_splits,
    synthetic_digits,
)
from .errors import ConfigurationError
from .forward_model import MultiFidelityForwardModel
from .inverse_model import VariationalInverseModel
from .metrics import EvalReport, mean_psnr, test_elbo
from .pgm import image_grid, write_pgm
from .rng import RngStream

TRACE_HEADER = "iteration,elbo,kl,recon_loglik\n"


# --------------------------------------------------------------------- utils


def content_digest(path) -> str:
    """sha256 of a file; wall_time_s values in report files are masked."""
    path = Path(path)
    data = path.read_bytes()
    if path.name == "metrics.csv":
        rows = list(csv.reader(io.StringIO(data.decode())))
        if rows and "wall_time_s" in rows[0]:
            col = rows[0].index("wall_time_s")
            for row in rows[1:]:
                if len(row) > col:
                    row[col] = ""
        buf = io.StringIO()
        csv.writer(buf, lineterminator="\n").writerows(rows)
        data = buf.getvalue().encode()
    elif path.name == "report.json":
        doc = json.loads(data)
        for row in doc.get("rows", []):
            row["wall_time_s"] = None
        data = json.dumps(doc, sort_keys=True).encode()
    elif path.name == "config.json":
        doc = json.loads(data)
        doc.pop("out_dir", None)
        data = json.dumps(doc, sort_keys=True).encode()
    return hashlib.sha256(data).hexdigest()


def _stage_path(out_dir, stage: str) -> Path:
    return Path(out_dir) / stage


def _can_skip(stage_dir: Path, fingerprint: str, force: bool) -> bool:
    if force:
        return False
    meta = stage_dir / "stage.json"
    if not meta.exists():
        return False
    try:
        doc = json.loads(meta.read_text())
    except json.JSONDecodeError:
        return False
    if doc.get("fingerprint") != fingerprint:
        return False
    return all((stage_dir / name).exists() for name in doc.get("outputs", []))


def _mark_done(stage_dir: Path, fingerprint: str, outputs, wall_time_s: float):
    doc = {
        "fingerprint": fingerprint,
        "outputs": sorted(outputs),
        "wall_time_s": wall_time_s,
    }
    (stage_dir / "stage.json").write_text(json.dumps(doc, indent=1, sort_keys=True))


def _stage_wall_time(stage_dir: Path) -> float:
    try:
        return float(json.loads((stage_dir / "stage.json").read_text())["wall_time_s"])
    except (OSError, KeyError, ValueError, json.JSONDecodeError):
        return 0.0


def _write_trace(path: Path, trace: np.ndarray):
    with open(path, "w") as fh:
        fh.write(TRACE_HEADER)
        for it, elbo, kl, recon in trace:
            fh.write(f"{int(it)},{elbo!r},{kl!r},{recon!r}\n")


# --------------------------------------------------------------------- stages


def load_dataset(cfg: ExperimentConfig):
    ds = cfg["dataset"]
    if ds["kind"] == "idx":
        return load_idx_dataset(ds["path"])
    return synthetic_digits(int(ds["n"]), int(ds["image_size"]), seed=cfg.seed)


def stage_simulate(cfg: ExperimentConfig, force=False) -> ExperimentSplits:
    """Build splits with true-process measurements and persist them."""
    stage_dir = _stage_path(cfg.out_dir, "data")
    stage_dir.mkdir(parents=True, exist_ok=True)
    fp = cfg.fingerprint()
    npz = stage_dir / "splits.npz"
    if _can_skip(stage_dir, fp, force):
        return _load_splits(npz)
    t0 = time.time()
    data = load_dataset(cfg)
    splits_cfg = cfg["splits"]
    splits = make_splits(
        data,
        int(splits_cfg["K"]),
        int(splits_cfg["L"]),
        int(splits_cfg["test_n"]),
        cfg.true_spec,
        RngStream(cfg.seed).derive("simulate"),
    )
    np.savez_compressed(
        npz,
        paired_images=splits.paired.images,
        paired_measurements=splits.paired.measurements,
        paired_indices=splits.paired.indices,
        unpaired=splits.unpaired,
        unpaired_indices=splits.unpaired_indices,
        test_images=splits.test.images,
        test_measurements=splits.test.measurements,
        test_indices=splits.test.indices,
        measurement_shape=np.asarray(splits.paired.measurement_shape),
    )
    _mark_done(stage_dir, fp, ["splits.npz"], time.time() - t0)
    return splits


def _load_splits(npz_path) -> ExperimentSplits:
    with np.load(npz_path) as z:
        m_shape = tuple(int(s) for s in z["measurement_shape"])
        paired = PairedDataset(
            z["paired_images"], z["paired_measurements"], m_shape, z["paired_indices"]
        )
        test = PairedDataset(
            z["test_images"], z["test_measurements"], m_shape, z["test_indices"]
        )
        return ExperimentSplits(paired, z["unpaired"], test, z["unpaired_indices"])


def stage_train_forward(
    cfg: ExperimentConfig, splits: ExperimentSplits, force=False
) -> MultiFidelityForwardModel:
    stage_dir = _stage_path(cfg.out_dir, "forward")
    stage_dir.mkdir(parents=True, exist_ok=True)
    fp = cfg.fingerprint()
    if _can_skip(stage_dir, fp, force):
        return load_model(stage_dir)
    t0 = time.time()
    fwd_cfg = cfg["forward"]
    model = MultiFidelityForwardModel(
        lowfid=cfg.lowfid_spec,
        latent_dim=int(fwd_cfg["latent_dim"]),
        hidden=tuple(fwd_cfg["hidden"]),
        n_iter=int(fwd_cfg["n_iter"]),
        batch_size=int(fwd_cfg["batch_size"]),
        learning_rate=float(fwd_cfg["learning_rate"]),
        dtype=str(cfg["dtype"]),
        seed=cfg.seed,
        measurement_shape=splits.paired.measurement_shape,
    )
    model.fit(splits.paired.images, splits.paired.measurements)
    save_model(model, stage_dir)
    _write_trace(stage_dir / "trace.csv", model.trace_)
    _mark_done(
        stage_dir, fp, ["manifest.json", "weights.bin", "trace.csv"], time.time() - t0
    )
    return model


def _inverse_params(cfg: ExperimentConfig) -> dict:
    inv_cfg = cfg["inverse"]
    return {
        "latent_dim": int(inv_cfg["latent_dim"]),
        "hidden": tuple(inv_cfg["hidden"]),
        "n_iter": int(inv_cfg["n_iter"]),
        "batch_size": int(inv_cfg["batch_size"]),
        "learning_rate": float(inv_cfg["learning_rate"]),
        "dtype": str(cfg["dtype"]),
        "seed": cfg.seed,
    }


def stage_train_inverse(
    cfg: ExperimentConfig,
    splits: ExperimentSplits,
    forward: MultiFidelityForwardModel,
    force=False,
) -> VariationalInverseModel:
    stage_dir = _stage_path(cfg.out_dir, "inverse")
    stage_dir.mkdir(parents=True, exist_ok=True)
    fp = cfg.fingerprint()
    if _can_skip(stage_dir, fp, force):
        return load_model(stage_dir)
    t0 = time.time()
    model = VariationalInverseModel(
        measurement_sampler=forward, **_inverse_params(cfg)
    )
    model.fit(splits.unpaired)
    save_model(model, stage_dir)
    _write_trace(stage_dir / "trace.csv", model.trace_)
    _mark_done(
        stage_dir, fp, ["manifest.json", "weights.bin", "trace.csv"], time.time() - t0
    )
    return model


def stage_train_baseline(
    cfg: ExperimentConfig, splits: ExperimentSplits, kind: str, force=False
) -> VariationalInverseModel:
    stage_dir = _stage_path(cfg.out_dir, "baselines") / kind
    stage_dir.mkdir(parents=True, exist_ok=True)
    fp = cfg.fingerprint()
    if _can_skip(stage_dir, fp, force):
        return load_model(stage_dir)
    t0 = time.time()
    model = train_baseline_cvae(
        kind,
        paired=splits.paired,
        unpaired=splits.unpaired,
        lowfid=cfg.lowfid_spec,
        **_inverse_params(cfg),
    )
    save_model(model, stage_dir)
    _write_trace(stage_dir / "trace.csv", model.trace_)
    _mark_done(
        stage_dir, fp, ["manifest.json", "weights.bin", "trace.csv"], time.time() - t0
    )
    return model


def _method_list(cfg: ExperimentConfig, methods=None):
    if methods is None:
        methods = ["proposed"] + list(cfg["baselines"])
    return methods


def stage_reconstruct(cfg: ExperimentConfig, splits, models: dict, force=False):
    """Export reconstruction grids (truth, pseudo-max, mean, std, draws)."""
    stage_dir = _stage_path(cfg.out_dir, "reconstructions")
    stage_dir.mkdir(parents=True, exist_ok=True)
    fp = cfg.fingerprint()
    if _can_skip(stage_dir, fp, force):
        return
    t0 = time.time()
    eval_cfg = cfg["eval"]
    n_examples = min(int(eval_cfg["n_grid_examples"]), splits.test.n)
    n_draws = int(eval_cfg["n_grid_draws"])
    outputs = []
    rng = RngStream(cfg.seed).derive("reconstruct")
    for method, model in models.items():
        rows = []
        for i in range(n_examples):
            y = splits.test.measurements[i]
            post = model.sample_posterior(
                y, max(n_draws, 2), rng.derive(method, i)
            )
            shape = model.image_shape_
            std = post.std_image()
            std_peak = std.max()
            rows.append(
                [
                    splits.test.images[i],
                    model.predict(y).reshape(shape),
                    post.mean_image(),
                    std / std_peak if std_peak > 0 else std,
                ]
                + [post.samples[d].reshape(shape) for d in range(n_draws)]
            )
        name = f"{method}_grid.pgm"
        write_pgm(stage_dir / name, image_grid(rows))
        outputs.append(name)
    m_shape = splits.test.measurement_shape
    if m_shape[0] == 1:  # image-shaped measurements export cleanly
        meas_rows = [
            [splits.test.measurements[i].reshape(m_shape[1:])] for i in range(n_examples)
        ]
        peak = max(r[0].max() for r in meas_rows) or 1.0
        write_pgm(
            stage_dir / "measurements.pgm",
            image_grid([[r[0] / peak] for r in meas_rows]),
        )
        outputs.append("measurements.pgm")
    _mark_done(stage_dir, fp, outputs, time.time() - t0)


def _severity_label(cfg: ExperimentConfig):
    spec = cfg.true_spec
    return {
        "blur": spec.sigma_psf,
        "downsample": spec.factor,
        "occlude": "occl",
        "fourier_intensity": spec.saturation_frac,
        "diffusion_lowfid": "tof",
    }[spec.kind]


def stage_evaluate(
    cfg: ExperimentConfig, splits, models: dict, force=False
) -> EvalReport:
    """Per-method PSNR and test ELBO; writes metrics.csv/.txt and report.json."""
    stage_dir = _stage_path(cfg.out_dir, "report")
    stage_dir.mkdir(parents=True, exist_ok=True)
    fp = cfg.fingerprint()
    if _can_skip(stage_dir, fp, force):
        return EvalReport.from_csv((stage_dir / "metrics.csv").read_text())
    t0 = time.time()
    rng = RngStream(cfg.seed).derive("evaluate")
    report = EvalReport()
    extras = {}
    for method, model in models.items():
        elbo_mean, elbo_std, _ = test_elbo(model, splits.test, rng.derive(method))
        n_draws = int(cfg["eval"]["n_posterior_draws"])
        std_means = [
            float(
                model.sample_posterior(
                    splits.test.measurements[i], n_draws, rng.derive("post", method, i)
                ).std.mean()
            )
            for i in range(splits.test.n)
        ]
        train_dir = (
            _stage_path(cfg.out_dir, "inverse")
            if method == "proposed"
            else _stage_path(cfg.out_dir, "baselines") / method
        )
        report.add(
            method=method,
            task=cfg["task"],
            K=int(cfg["splits"]["K"]),
            severity=_severity_label(cfg),
            seed=cfg.seed,
            psnr_mean=mean_psnr(model, splits.test),
            elbo_mean=elbo_mean,
            elbo_std=elbo_std,
            wall_time_s=round(_stage_wall_time(train_dir), 3),
        )
        extras[method] = {"posterior_std_mean": float(np.mean(std_means))}
    (stage_dir / "metrics.csv").write_text(report.to_csv())
    (stage_dir / "metrics.txt").write_text(report.table() + "\n")
    doc = {
        "fingerprint": fp,
        "rows": report.rows,
        "extras": extras,
    }
    (stage_dir / "report.json").write_text(json.dumps(doc, indent=1, sort_keys=True))
    _mark_done(
        stage_dir,
        fp,
        ["metrics.csv", "metrics.txt", "report.json"],
        time.time() - t0,
    )
    return report


# ------------------------------------------------------------------ pipeline


def run_pipeline(cfg: ExperimentConfig, force=False, methods=None) -> Path:
    """Execute all stages in order and write the root artifact manifest."""
    out_dir = cfg.out_dir
    out_dir.mkdir(parents=True, exist_ok=True)
    cfg.save(out_dir / "config.json")
    methods = _method_list(cfg, methods)

    splits = stage_simulate(cfg, force)
    models = {}
    if "proposed" in methods:
        forward = stage_train_forward(cfg, splits, force)
        models["proposed"] = stage_train_inverse(cfg, splits, forward, force)
    for kind in methods:
        if kind != "proposed":
            models[kind] = stage_train_baseline(cfg, splits, kind, force)
    stage_reconstruct(cfg, splits, models, force)
    stage_evaluate(cfg, splits, models, force)

    manifest = {"fingerprint": cfg.fingerprint(), "artifacts": []}
    for path in sorted(out_dir.rglob("*")):
        if path.is_dir() or path.name == "manifest.json" and path.parent == out_dir:
            continue
        rel = path.relative_to(out_dir).as_posix()
        manifest["artifacts"].append(
            {
                "path": rel,
                "sha256": content_digest(path),
                # stage.json carries wall times; metrics.txt pretty-prints them
                "reproducible": path.name not in ("stage.json", "metrics.txt"),
            }
        )
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True))
    return out_dir


def run_sweep_cell(
    base_config: ExperimentConfig,
    vary: str,
    value,
    method: str,
    seed: int,
    out_dir,
    force=False,
) -> dict:
    """One (method, value, seed) cell of a severity/K sweep."""
    cell_cfg = cell_config(base_config, vary, value, method, seed, out_dir)
    run_pipeline(cell_cfg, force=force, methods=[method])
    report_doc = json.loads((cell_cfg.out_dir / "report" / "report.json").read_text())
    row = dict(report_doc["rows"][0])
    row["severity"] = value
    row.update(report_doc["extras"][method])
    return row


def cell_config(
    base_config: ExperimentConfig, vary: str, value, method: str, seed: int, out_dir
) -> ExperimentConfig:
    doc_overrides = {"seed": int(seed)}
    if vary == "K":
        doc_overrides["splits"] = {"K": int(value)}
    elif vary == "sigma_true":
        base_true = float(base_config["true_spec"]["sigma_psf"])
        ratio = float(base_config["lowfid_spec"]["sigma_psf"]) / base_true
        doc_overrides["true_spec"] = {"sigma_psf": float(value)}
        doc_overrides["lowfid_spec"] = {"sigma_psf": float(value) * ratio}
    elif vary == "lowfid_scale":
        base_true = float(base_config["true_spec"]["sigma_psf"])
        doc_overrides["lowfid_spec"] = {"sigma_psf": base_true * float(value)}
    else:
        raise ConfigurationError(f"unknown sweep axis {vary!r}")
    cell_name = f"{vary}_{value}_{method}_seed{seed}"
    doc_overrides["out_dir"] = str(Path(out_dir) / cell_name)
    return base_config.replace(**doc_overrides)
