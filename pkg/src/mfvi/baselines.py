"""Comparison systems: naive CVAE training strategies and HIO phase retrieval.

The three CVAE baselines reuse ``VariationalInverseModel`` unchanged; only
the source of training conditions differs, so architecture and optimizer are
shared with the proposed framework by construction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .degradations import DegradationSpec, Measurement
from .errors import ConfigurationError, InvalidInputError
from .inverse_model import VariationalInverseModel
from .rng import RngStream

BASELINE_KINDS = ("paired_only", "simulated_only", "paired_plus_simulated", "hio")
CVAE_KINDS = BASELINE_KINDS[:3]


def train_baseline_cvae(
    kind: str,
    paired=None,
    unpaired=None,
    lowfid: DegradationSpec = None,
    **estimator_params,
) -> VariationalInverseModel:
    """Fit one of the naive conditioning strategies.

    kind = "paired_only": train on stored (target, measurement) pairs alone.
    kind = "simulated_only": pair every unpaired target with a fresh draw
        from the analytic model each visit.
    kind = "paired_plus_simulated": union of both; batches mix in proportion
        to the set sizes (or 50/50 with ``paired_mix="balanced"``).

    ``paired`` is a PairedDataset-like object with .images/.measurements,
    ``unpaired`` an (L, H, W) target array. Architecture/optimizer settings
    pass through to ``VariationalInverseModel``.
    """
    if kind not in CVAE_KINDS:
        raise ConfigurationError(
            f"kind must be one of {CVAE_KINDS}, got {kind!r} "
            "(hio is not a CVAE strategy)"
        )
    if kind == "paired_only":
        if paired is None or paired.n == 0:
            raise ConfigurationError("paired_only requires paired examples")
        model = VariationalInverseModel(measurement_sampler=None, **estimator_params)
        return model.fit(paired.images, paired.measurements)
    if lowfid is None:
        raise ConfigurationError(f"{kind} requires the analytic lowfid spec")
    if unpaired is None or len(unpaired) == 0:
        raise ConfigurationError(f"{kind} requires unpaired targets")
    if kind == "simulated_only":
        model = VariationalInverseModel(measurement_sampler=lowfid, **estimator_params)
        return model.fit(np.asarray(unpaired))
    # paired_plus_simulated
    if paired is None or paired.n == 0:
        raise ConfigurationError("paired_plus_simulated requires paired examples")
    X = np.concatenate([paired.images, np.asarray(unpaired)], axis=0)
    model = VariationalInverseModel(measurement_sampler=lowfid, **estimator_params)
    return model.fit(X, paired.measurements)


@dataclass(frozen=True)
class HIOConfig:
    """Hybrid input-output settings.

    The object-plane constraints are a centred support rectangle and a
    uniform (zero) phase, i.e. a real non-negative field.
    """

    beta: float = 0.9
    n_iter: int = 500
    support: tuple = None  # (rows, cols) central region; None = full frame
    uniform_phase_constraint: bool = True

    def __post_init__(self):
        if not 0.0 < self.beta <= 1.0:
            raise ConfigurationError("beta must lie in (0, 1]")
        if self.n_iter < 1:
            raise ConfigurationError("n_iter must be >= 1")


def _support_mask(shape, support) -> np.ndarray:
    mask = np.zeros(shape, dtype=bool)
    if support is None:
        mask[...] = True
        return mask
    rows, cols = (int(s) for s in support)
    if rows > shape[0] or cols > shape[1]:
        raise InvalidInputError(f"support {support} larger than frame {shape}")
    r0 = (shape[0] - rows) // 2
    c0 = (shape[1] - cols) // 2
    mask[r0 : r0 + rows, c0 : c0 + cols] = True
    return mask


def _measured_modulus(measurement) -> np.ndarray:
    """Fourier modulus from a (possibly saturated) intensity observation."""
    if isinstance(measurement, Measurement):
        arr = measurement.frames_array()[0]
    else:
        arr = np.asarray(measurement, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
        raise InvalidInputError(
            f"HIO expects a square measurement frame, got shape {arr.shape}"
        )
    return np.sqrt(np.maximum(arr, 0.0))


def hio_retrieve(measurement, config: HIOConfig, rng: RngStream) -> np.ndarray:
    """Fienup hybrid input-output retrieval from a Fourier-plane observation.

    Starts from a random phase guess, then alternates between replacing the
    Fourier modulus with the measured one and imposing the object-plane
    constraints, applying the relaxed feedback update (parameter beta) where
    the constraints are violated. Returns the real amplitude estimate
    normalized to [0, 1].
    """
    modulus = np.fft.ifftshift(_measured_modulus(measurement))
    mask = _support_mask(modulus.shape, config.support)
    phase = rng.derive("phase").uniform(0.0, 2.0 * np.pi, modulus.shape)
    g = np.fft.ifft2(modulus * np.exp(1j * phase)).real
    for _ in range(int(config.n_iter)):
        G = np.fft.fft2(g)
        mag = np.abs(G)
        G_proj = np.where(mag > 0, modulus * G / np.where(mag > 0, mag, 1.0), modulus)
        g_proj = np.fft.ifft2(G_proj).real
        good = mask & (g_proj >= 0.0)
        g = np.where(good, g_proj, g - config.beta * g_proj)
    g = np.where(mask, np.maximum(g, 0.0), 0.0)
    peak = g.max()
    return g / peak if peak > 0 else g


def fourier_residual(estimate, measurement) -> float:
    """Relative modulus mismatch of an object-plane estimate."""
    modulus = np.fft.ifftshift(_measured_modulus(measurement))
    est = np.abs(np.fft.fft2(estimate))
    scale = np.sum(est * modulus) / max(np.sum(est * est), 1e-300)
    return float(
        np.linalg.norm(scale * est - modulus) / max(np.linalg.norm(modulus), 1e-300)
    )


def hio_best_of(
    measurement, config: HIOConfig, rng: RngStream, n_restarts: int = 10
) -> np.ndarray:
    """Best of several random restarts, ranked by Fourier-domain residual."""
    best, best_res = None, np.inf
    for r in range(int(n_restarts)):
        est = hio_retrieve(measurement, config, rng.derive("restart", r))
        res = fourier_residual(est, measurement)
        if res < best_res:
            best, best_res = est, res
    return best
