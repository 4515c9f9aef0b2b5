"""Analytic observation models: blur, noise, down-sampling, occlusion, and
saturated Fourier-intensity measurement.

These are the cheap, closed-form approximations to the true observation
process. ``apply_lowfid`` is the single dispatch point the training loops
use to draw low-fidelity measurements from a target image.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np
from scipy.signal import convolve2d

from .errors import ConfigurationError, InvalidInputError
from .rng import RngStream

KINDS = ("blur", "downsample", "occlude", "fourier_intensity", "diffusion_lowfid")


@dataclass(frozen=True)
class Measurement:
    """Flat observation vector with (frames, height, width) shape metadata."""

    shape: tuple
    data: np.ndarray

    def __post_init__(self):
        shape = tuple(int(s) for s in self.shape)
        data = np.asarray(self.data).ravel()
        if len(shape) != 3:
            raise InvalidInputError("measurement shape must be (frames, height, width)")
        if data.size != int(np.prod(shape)):
            raise InvalidInputError(
                f"data length {data.size} != prod(shape) {int(np.prod(shape))}"
            )
        if not np.all(np.isfinite(data)):
            raise InvalidInputError("measurement data must be finite")
        object.__setattr__(self, "shape", shape)
        object.__setattr__(self, "data", data)

    @property
    def size(self) -> int:
        return self.data.size

    def frames_array(self) -> np.ndarray:
        return self.data.reshape(self.shape)


def validate_image(x) -> np.ndarray:
    x = np.asarray(x)
    if x.ndim != 2:
        raise InvalidInputError(f"image must be 2-D, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise InvalidInputError("image must be finite")
    return x


@dataclass(frozen=True)
class DegradationSpec:
    """Parameters for one analytic observation model.

    Only the fields relevant to ``kind`` are used. ``snr_db=None`` means
    noiseless. ``post_blur_sigma`` composes an extra blur after the primary
    transformation, which is how the "down-sample then blur" true process
    is expressed.
    """

    kind: str
    sigma_psf: float = None
    snr_db: float = None
    factor: int = None
    rect: tuple = None
    saturation_frac: float = 0.4
    fourier_modulus: bool = False
    post_blur_sigma: float = None
    medium: object = None
    video: object = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigurationError(f"unknown degradation kind {self.kind!r}")
        if self.kind == "blur" and (self.sigma_psf is None or self.sigma_psf <= 0):
            raise ConfigurationError("blur requires sigma_psf > 0")
        if self.kind == "downsample" and (self.factor is None or int(self.factor) < 1):
            raise ConfigurationError("downsample requires a positive integer factor")
        if self.kind == "occlude" and self.rect is None:
            raise ConfigurationError("occlude requires rect=(row, col, height, width)")
        if self.kind == "fourier_intensity" and not (0.0 < self.saturation_frac <= 1.0):
            raise ConfigurationError("saturation_frac must lie in (0, 1]")
        if self.kind == "diffusion_lowfid" and (self.medium is None or self.video is None):
            raise ConfigurationError("diffusion_lowfid requires medium and video specs")

    def output_shape(self, image_shape) -> tuple:
        h, w = image_shape
        if self.kind == "downsample":
            f = int(self.factor)
            if h % f or w % f:
                raise InvalidInputError(f"factor {f} does not divide image {h}x{w}")
            return (1, h // f, w // f)
        if self.kind == "diffusion_lowfid":
            return (self.video.frames, self.video.height, self.video.width)
        return (1, h, w)

    def to_dict(self) -> dict:
        out = {k: v for k, v in asdict(self).items() if v is not None}
        if self.kind != "fourier_intensity":
            out.pop("saturation_frac", None)
            out.pop("fourier_modulus", None)
        if self.rect is not None:
            out["rect"] = list(self.rect)
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "DegradationSpec":
        d = dict(d)
        if "rect" in d and d["rect"] is not None:
            d["rect"] = tuple(d["rect"])
        if "medium" in d and isinstance(d["medium"], dict):
            from .diffusion import MediumSpec

            d["medium"] = MediumSpec(**d["medium"])
        if "video" in d and isinstance(d["video"], dict):
            from .diffusion import ToFVideoSpec

            d["video"] = ToFVideoSpec(**d["video"])
        return cls(**d)


def gaussian_kernel(sigma: float) -> np.ndarray:
    """Normalized 2-D Gaussian kernel truncated at +/- 3 sigma."""
    if sigma <= 0:
        raise InvalidInputError("sigma must be positive")
    radius = int(np.ceil(3.0 * sigma))
    coords = np.arange(-radius, radius + 1)
    g1 = np.exp(-(coords**2) / (2.0 * sigma**2))
    kernel = np.outer(g1, g1)
    return kernel / kernel.sum()


def gaussian_blur(x, sigma_psf: float) -> np.ndarray:
    """Blur with the truncated Gaussian PSF, zero padding at borders."""
    x = validate_image(x)
    kernel = gaussian_kernel(sigma_psf)
    return convolve2d(x, kernel, mode="same", boundary="fill", fillvalue=0.0)


def add_noise(y, snr_db, rng: RngStream):
    """Additive iid Gaussian noise at the given SNR.

    Noise variance is mean(y^2) * 10^(-snr_db / 10); the signal power is
    taken over the clean measurement. ``snr_db=None`` returns y unchanged.
    """
    y = np.asarray(y, dtype=np.float64)
    if snr_db is None:
        return y.copy()
    if not np.isfinite(snr_db):
        raise InvalidInputError("snr_db must be finite (use None for noiseless)")
    noise_var = float(np.mean(y**2)) * 10.0 ** (-snr_db / 10.0)
    return y + np.sqrt(noise_var) * rng.standard_normal(y.shape)


def downsample(x, factor: int) -> np.ndarray:
    """Non-overlapping block average; output dims divided by factor."""
    x = validate_image(x)
    f = int(factor)
    h, w = x.shape
    if f < 1 or h % f or w % f:
        raise InvalidInputError(f"factor {f} does not divide image {h}x{w}")
    return x.reshape(h // f, f, w // f, f).mean(axis=(1, 3))


def occlude(x, rect) -> np.ndarray:
    """Zero out a (row, col, height, width) rectangle."""
    x = validate_image(x)
    r, c, rh, rw = (int(v) for v in rect)
    if r < 0 or c < 0 or rh < 0 or rw < 0 or r + rh > x.shape[0] or c + rw > x.shape[1]:
        raise InvalidInputError(f"rect {rect} outside image {x.shape}")
    out = x.copy()
    out[r : r + rh, c : c + rw] = 0.0
    return out


def fourier_intensity(x, saturation_frac: float = 0.4, modulus: bool = False) -> np.ndarray:
    """Saturated Fourier-plane intensity |DFT2(x)|^2, DC at the array center.

    The intensity is normalized by its own maximum, clipped at
    ``saturation_frac``, and the clip level rescaled to 1.0. With
    ``modulus=True`` the unsquared |DFT2(x)| is used instead.
    """
    x = validate_image(x)
    if not (0.0 < saturation_frac <= 1.0):
        raise InvalidInputError("saturation_frac must lie in (0, 1]")
    spectrum = np.abs(np.fft.fftshift(np.fft.fft2(x)))
    intensity = spectrum if modulus else spectrum**2
    peak = intensity.max()
    if peak == 0.0:
        return intensity
    intensity = intensity / peak
    return np.minimum(intensity, saturation_frac) / saturation_frac


def apply_lowfid(spec: DegradationSpec, x, rng: RngStream) -> Measurement:
    """Run the analytic observation model once; the training-loop entry point."""
    x = validate_image(x)
    if spec.kind == "blur":
        out = gaussian_blur(x, spec.sigma_psf)
    elif spec.kind == "downsample":
        out = downsample(x, spec.factor)
    elif spec.kind == "occlude":
        out = occlude(x, spec.rect)
    elif spec.kind == "fourier_intensity":
        out = fourier_intensity(x, spec.saturation_frac, spec.fourier_modulus)
    elif spec.kind == "diffusion_lowfid":
        from .diffusion import lowfid_tof

        video = lowfid_tof(x, spec.medium, spec.video)
        data = add_noise(video.data, spec.snr_db, rng)
        return Measurement((video.frames, video.height, video.width), data)
    else:  # pragma: no cover - guarded by the spec constructor
        raise ConfigurationError(f"unknown degradation kind {spec.kind!r}")
    if spec.post_blur_sigma is not None:
        out = gaussian_blur(out, spec.post_blur_sigma)
    out = add_noise(out, spec.snr_db, rng)
    return Measurement((1,) + out.shape, out)
