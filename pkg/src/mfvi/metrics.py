"""Quantitative evaluation: PSNR, held-out ELBO, and sweep reports."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError
from .rng import RngStream

PSNR_CAP_DB = 99.0

REPORT_COLUMNS = (
    "method",
    "task",
    "K",
    "severity",
    "seed",
    "psnr_mean",
    "elbo_mean",
    "elbo_std",
    "wall_time_s",
)


def psnr(x, xhat) -> float:
    """Peak signal-to-noise ratio in dB with peak 1.0, capped at 99 dB."""
    x = np.asarray(x, dtype=np.float64)
    xhat = np.asarray(xhat, dtype=np.float64)
    if x.shape != xhat.shape:
        raise InvalidInputError(f"shape mismatch {x.shape} vs {xhat.shape}")
    mse = float(np.mean((x - xhat) ** 2))
    if mse < 1e-10:
        return PSNR_CAP_DB
    return 10.0 * np.log10(1.0 / mse)


def mean_psnr(model, test) -> float:
    """Average PSNR of pseudo-maximum reconstructions over a paired test set."""
    recon = model.predict(test.measurements)
    truth = test.images.reshape(test.n, -1)
    return float(np.mean([psnr(truth[i], recon[i]) for i in range(test.n)]))


def best_correlation_trivial_group(a, b) -> float:
    """Max zero-mean NCC of two images over circular shifts and the flip twin.

    Phase retrieval recovers objects only up to translation and point
    reflection; reconstructions are scored modulo that group.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise InvalidInputError(f"shape mismatch {a.shape} vs {b.shape}")
    a0 = a - a.mean()
    denom_a = np.linalg.norm(a0)
    best = -1.0
    for cand in (b, b[::-1, ::-1]):
        c0 = cand - cand.mean()
        denom = denom_a * np.linalg.norm(c0)
        if denom == 0:
            continue
        corr = np.fft.ifft2(np.fft.fft2(a0) * np.conj(np.fft.fft2(c0))).real
        best = max(best, float(corr.max() / denom))
    return best


def test_elbo(models, test, rng: RngStream, n_latent_samples: int = 1):
    """Mean test-set ELBO and its spread across checkpoints.

    ``models`` is one fitted inverse model or a list of them (e.g. one per
    training seed); the spread is the standard deviation of the per-model
    means. Test measurements must come from the true observation process.
    """
    if not isinstance(models, (list, tuple)):
        models = [models]
    if test.n == 0:
        raise InvalidInputError("empty test set")
    per_model = []
    for m_idx, model in enumerate(models):
        vals = [
            model.elbo(
                test.images[i],
                test.measurements[i],
                rng.derive("elbo", m_idx, i),
                n_latent_samples=n_latent_samples,
            )
            for i in range(test.n)
        ]
        per_model.append(float(np.mean(vals)))
    per_model = np.asarray(per_model)
    spread = float(per_model.std()) if len(per_model) > 1 else 0.0
    return float(per_model.mean()), spread, per_model


@dataclass
class EvalReport:
    """Rows of (method, task, K, severity, seed, psnr, elbo, spread, time)."""

    rows: list = field(default_factory=list)

    def add(self, **kw):
        row = {c: kw.get(c) for c in REPORT_COLUMNS}
        self.rows.append(row)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=REPORT_COLUMNS, lineterminator="\n")
        writer.writeheader()
        for row in self.rows:
            writer.writerow(row)
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "EvalReport":
        report = cls()
        for row in csv.DictReader(io.StringIO(text)):
            report.rows.append({c: row.get(c) for c in REPORT_COLUMNS})
        return report

    def table(self) -> str:
        """Plain-text table, one line per row."""
        header = "  ".join(f"{c:>12}" for c in REPORT_COLUMNS)
        lines = [header]
        for row in self.rows:
            cells = []
            for c in REPORT_COLUMNS:
                v = row.get(c)
                if isinstance(v, float):
                    cells.append(f"{v:>12.4g}")
                else:
                    cells.append(f"{str(v):>12}")
            lines.append("  ".join(cells))
        return "\n".join(lines)


def severity_sweep(
    base_config,
    vary: str,
    values,
    methods,
    seeds,
    out_dir,
    force: bool = False,
) -> EvalReport:
    """Train and evaluate every (method, value, seed) cell of a task grid.

    ``vary`` names a config axis ("K", "sigma_true", "lowfid_scale"). Each
    cell runs its own pipeline under a derived seed in its own directory;
    cells are independent, so schedule order does not affect results.
    """
    from .pipeline import run_sweep_cell

    report = EvalReport()
    for value in values:
        for method in methods:
            for seed in seeds:
                row = run_sweep_cell(
                    base_config, vary, value, method, seed, out_dir, force=force
                )
                report.add(**row)
    return report
