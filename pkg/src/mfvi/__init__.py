"""Multi-fidelity variational inversion for imaging inverse problems.

Stage one fits a stochastic observation model from a few paired examples
plus an analytic physics approximation; stage two trains a conditional
variational inverse model on abundant unpaired targets, using the learned
observation model as a measurement sampler. Inference is non-iterative:
posterior draws, per-pixel statistics, and a pseudo-maximum retrieval.
"""

from .baselines import BASELINE_KINDS, HIOConfig, hio_best_of, hio_retrieve, train_baseline_cvae
from .checkpoint import load_model, save_model
from .config import ExperimentConfig
from .datasets import (
    DatasetHandle,
    ExperimentSplits,
    PairedDataset,
    load_idx_dataset,
    make_splits,
    synthetic_digits,
)
from .degradations import (
    DegradationSpec,
    Measurement,
    add_noise,
    apply_lowfid,
    downsample,
    fourier_intensity,
    gaussian_blur,
    occlude,
)
from .diffusion import (
    GridSpec,
    MediumSpec,
    SourceSpec,
    ToFVideo,
    ToFVideoSpec,
    diffusion_psf,
    fd_solve,
    lowfid_tof,
    make_diffusion_dataset,
)
from .errors import ConfigurationError, InvalidInputError, NumericalError
from .forward_model import MultiFidelityForwardModel
from .inverse_model import PosteriorSamples, VariationalInverseModel
from .metrics import EvalReport, best_correlation_trivial_group, mean_psnr, psnr, severity_sweep, test_elbo
from .nnet import DiagGaussian, MLPParams, MLPSpec, gaussian_log_likelihood, kl_diag_gaussians, reparam_sample
from .rng import RngStream

__version__ = "0.1.0"

__all__ = [
    "BASELINE_KINDS",
    "ConfigurationError",
    "DatasetHandle",
    "DegradationSpec",
    "DiagGaussian",
    "EvalReport",
    "ExperimentConfig",
    "ExperimentSplits",
    "GridSpec",
    "HIOConfig",
    "InvalidInputError",
    "MLPParams",
    "MLPSpec",
    "Measurement",
    "MediumSpec",
    "MultiFidelityForwardModel",
    "NumericalError",
    "PairedDataset",
    "PosteriorSamples",
    "RngStream",
    "SourceSpec",
    "ToFVideo",
    "ToFVideoSpec",
    "VariationalInverseModel",
    "add_noise",
    "apply_lowfid",
    "best_correlation_trivial_group",
    "diffusion_psf",
    "downsample",
    "fd_solve",
    "fourier_intensity",
    "gaussian_blur",
    "gaussian_log_likelihood",
    "hio_best_of",
    "hio_retrieve",
    "kl_diag_gaussians",
    "load_idx_dataset",
    "load_model",
    "lowfid_tof",
    "make_diffusion_dataset",
    "make_splits",
    "mean_psnr",
    "occlude",
    "psnr",
    "reparam_sample",
    "save_model",
    "severity_sweep",
    "synthetic_digits",
    "test_elbo",
    "train_baseline_cvae",
]
