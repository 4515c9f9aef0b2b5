"""Photon-diffusion simulators for imaging through scattering media.

Two fidelities of the same physics:

* ``diffusion_psf`` / ``lowfid_tof`` - the infinite-medium analytic point
  spread function and the cheap two-convolution estimate of a time-of-flight
  difference video (low fidelity).
* ``fd_solve`` - explicit finite-difference propagation of the photon flux
  with absorbing (Dirichlet) boundaries and high-absorption object voxels
  (high fidelity).

Units: lengths in cm, times in ps, absorption/scattering in 1/cm, speed of
light in the medium in cm/ps.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.signal import convolve2d

from .errors import InvalidInputError, NumericalError
from .rng import RngStream

# speed of light in a medium with refractive index ~1.4, cm/ps
DEFAULT_C = 0.0214


@dataclass(frozen=True)
class MediumSpec:
    """Optical properties of the scattering medium."""

    mu_a: float = 0.09  # absorption, 1/cm
    mu_s: float = 16.5  # scattering, 1/cm
    c: float = DEFAULT_C  # speed of light in medium, cm/ps
    slab_thickness: float = 2.5  # cm, entry face to object plane (and object to exit)

    def __post_init__(self):
        if self.mu_a < 0 or self.mu_s <= 0 or self.c <= 0:
            raise InvalidInputError("require mu_a >= 0, mu_s > 0, c > 0")

    @property
    def D(self) -> float:
        """Diffusion length 1 / (3 (mu_a + mu_s)), cm."""
        return 1.0 / (3.0 * (self.mu_a + self.mu_s))

    def to_dict(self) -> dict:
        return {
            "mu_a": self.mu_a,
            "mu_s": self.mu_s,
            "c": self.c,
            "slab_thickness": self.slab_thickness,
        }


@dataclass(frozen=True)
class ToFVideoSpec:
    """Shape and sampling of a time-of-flight camera video."""

    frames: int
    frame_period: float  # ps
    height: int
    width: int
    pixel_pitch: float  # cm

    def __post_init__(self):
        if self.frames < 1 or self.height < 1 or self.width < 1:
            raise InvalidInputError("video dims must be >= 1")
        if self.frame_period <= 0 or self.pixel_pitch <= 0:
            raise InvalidInputError("frame_period and pixel_pitch must be positive")

    def to_dict(self) -> dict:
        return {
            "frames": self.frames,
            "frame_period": self.frame_period,
            "height": self.height,
            "width": self.width,
            "pixel_pitch": self.pixel_pitch,
        }


@dataclass
class ToFVideo:
    """Flat video data plus shape metadata. Difference videos may be signed."""

    frames: int
    frame_period: float
    height: int
    width: int
    pixel_pitch: float
    data: np.ndarray

    def __post_init__(self):
        self.data = np.asarray(self.data).ravel()
        expected = self.frames * self.height * self.width
        if self.data.size != expected:
            raise InvalidInputError(
                f"video data length {self.data.size} != frames*h*w {expected}"
            )
        if not np.all(np.isfinite(self.data)):
            raise InvalidInputError("video data must be finite")

    def frames_array(self) -> np.ndarray:
        return self.data.reshape(self.frames, self.height, self.width)


@dataclass(frozen=True)
class GridSpec:
    """Finite-difference grid. 2-D (nx, nz) when ny is None, else 3-D.

    Construction enforces the explicit-scheme stability bound
    dt <= dx^2 / (2 * dim * D * c) when a medium is supplied.
    """

    nx: int
    nz: int
    dx: float  # cm
    dt: float  # ps
    n_steps: int
    ny: int = None
    medium: MediumSpec = None

    def __post_init__(self):
        if self.nx < 3 or self.nz < 3 or (self.ny is not None and self.ny < 3):
            raise InvalidInputError("grid needs at least 3 cells per axis")
        if self.dx <= 0 or self.dt <= 0 or self.n_steps < 0:
            raise InvalidInputError("dx, dt must be positive and n_steps >= 0")
        if self.medium is not None:
            limit = self.stability_limit(self.medium)
            if self.dt > limit * (1.0 + 1e-12):
                raise InvalidInputError(
                    f"unstable grid: dt={self.dt} exceeds stability limit {limit:.6g}"
                )

    @property
    def dim(self) -> int:
        return 2 if self.ny is None else 3

    def stability_limit(self, medium: MediumSpec) -> float:
        return self.dx**2 / (2.0 * self.dim * medium.D * medium.c)


@dataclass(frozen=True)
class SourceSpec:
    """Impulsive photon source at t=0.

    ``entry_face`` deposits a spatial profile one cell inside the z=0
    boundary; ``point`` deposits a delta at a grid cell (used by the
    analytic-solution oracle).
    """

    kind: str = "entry_face"
    profile: np.ndarray = None  # entry-face spatial profile; None = uniform
    position: tuple = None  # cell index for kind="point"
    amplitude: float = 1.0


def diffusion_psf(r, dt_, medium: MediumSpec):
    """Infinite-medium Green's function of the diffusion equation.

    c / [4 pi D c dt_]^(3/2) * exp(-r^2 / (4 D c dt_)) * exp(-mu_a c dt_),
    evaluated at distance r (cm) and elapsed time dt_ (ps). Vectorized in r.
    """
    dt_ = float(dt_)
    if dt_ <= 0:
        raise InvalidInputError("elapsed time must be positive")
    r = np.asarray(r, dtype=np.float64)
    four_dct = 4.0 * medium.D * medium.c * dt_
    prefactor = medium.c / (np.pi * four_dct) ** 1.5
    return prefactor * np.exp(-(r**2) / four_dct) * np.exp(-medium.mu_a * medium.c * dt_)


def _plane_psf_kernel(video: ToFVideoSpec, depth: float, t: float, medium: MediumSpec):
    """PSF sampled on pixel offsets between two planes ``depth`` apart."""
    dy = np.arange(-(video.height - 1), video.height) * video.pixel_pitch
    dx = np.arange(-(video.width - 1), video.width) * video.pixel_pitch
    r = np.sqrt(dy[:, None] ** 2 + dx[None, :] ** 2 + depth**2)
    return diffusion_psf(r, t, medium) * video.pixel_pitch**2


def lowfid_tof(obj, medium: MediumSpec, video: ToFVideoSpec) -> ToFVideo:
    """Two-convolution analytic estimate of the ToF difference video.

    The entry-face illumination (uniform impulse at t=0) is convolved with
    the PSF to the object plane, multiplied by the absorbing object image at
    each frame, and convolved again to the exit surface. Because the model
    is linear, the result equals the background video minus the video with
    the object present.
    """
    obj = np.asarray(obj, dtype=np.float64)
    if obj.ndim == 1:
        obj = obj[None, :]
    if obj.shape != (video.height, video.width):
        raise InvalidInputError(
            f"object grid {obj.shape} inconsistent with video "
            f"{(video.height, video.width)}"
        )
    half = video.frame_period * 0.5
    frame_times = np.arange(video.frames) * video.frame_period + half
    source = np.ones((video.height, video.width))

    # illumination at the object plane, masked by the object
    masked = np.empty((video.frames, video.height, video.width))
    for m, t in enumerate(frame_times):
        k1 = _plane_psf_kernel(video, medium.slab_thickness, t, medium)
        masked[m] = convolve2d(source, k1, mode="same") * obj

    # second propagation to the exit face, time convolution over frame lags
    lag_kernels = [
        _plane_psf_kernel(video, medium.slab_thickness, t, medium) for t in frame_times
    ]
    out = np.zeros((video.frames, video.height, video.width))
    for f in range(video.frames):
        for m in range(f + 1):
            out[f] += convolve2d(masked[m], lag_kernels[f - m], mode="same")
    out *= video.frame_period
    return ToFVideo(
        video.frames,
        video.frame_period,
        video.height,
        video.width,
        video.pixel_pitch,
        out.ravel(),
    )


# absorption assigned to object voxels, as a multiple of the medium mu_a
OBJECT_ABSORPTION_SCALE = 100.0


def _laplacian_into(phi, out, dx):
    """7-point (or 5-point) Laplacian on the interior; boundary stays zero."""
    out.fill(0.0)
    core = out[(slice(1, -1),) * phi.ndim]
    core += -2.0 * phi.ndim * phi[(slice(1, -1),) * phi.ndim]
    for axis in range(phi.ndim):
        lo = [slice(1, -1)] * phi.ndim
        hi = [slice(1, -1)] * phi.ndim
        lo[axis] = slice(0, -2)
        hi[axis] = slice(2, None)
        core += phi[tuple(lo)] + phi[tuple(hi)]
    out /= dx * dx
    return out


def _initial_flux(grid: GridSpec, medium: MediumSpec, source: SourceSpec) -> np.ndarray:
    shape = (grid.nx, grid.nz) if grid.ny is None else (grid.nx, grid.ny, grid.nz)
    phi = np.zeros(shape)
    cell = grid.dx**grid.dim
    if source.kind == "point":
        if source.position is None:
            raise InvalidInputError("point source needs a position")
        phi[tuple(int(i) for i in source.position)] = source.amplitude * medium.c / cell
    elif source.kind == "entry_face":
        profile = source.profile
        face = phi[..., 1]
        if profile is None:
            profile = np.ones(face.shape)
        profile = np.asarray(profile, dtype=np.float64).reshape(face.shape)
        # surface density -> volumetric density over one cell layer
        face[...] = source.amplitude * profile * medium.c / grid.dx
    else:
        raise InvalidInputError(f"unknown source kind {source.kind!r}")
    return phi


def fd_propagate(
    mu_a_field,
    medium: MediumSpec,
    grid: GridSpec,
    source: SourceSpec,
    video: ToFVideoSpec,
    record_z: int = None,
) -> np.ndarray:
    """Explicit-Euler time stepping; returns the recorded plane per frame.

    Dirichlet phi=0 holds on the domain boundary. ``mu_a_field`` is either a
    scalar or a full grid-shaped array of absorption coefficients. Frames are
    recorded at the plane ``record_z`` (defaults to the last interior layer)
    every ``frame_period``.
    """
    if grid.dt > grid.stability_limit(medium) * (1.0 + 1e-12):
        raise InvalidInputError("unstable grid for this medium")
    phi = _initial_flux(grid, medium, source)
    mu_a = np.asarray(mu_a_field if mu_a_field is not None else medium.mu_a)
    steps_per_frame = max(1, int(round(video.frame_period / grid.dt)))
    needed = steps_per_frame * video.frames
    if grid.n_steps < needed:
        raise InvalidInputError(
            f"grid.n_steps={grid.n_steps} cannot cover {video.frames} frames "
            f"({needed} steps needed)"
        )
    if record_z is None:
        record_z = grid.nz - 2

    interior = (slice(1, -1),) * phi.ndim
    lap = np.zeros_like(phi)
    frames_out = []
    factor = grid.dt * medium.c
    for step in range(1, needed + 1):
        _laplacian_into(phi, lap, grid.dx)
        mu_term = mu_a * phi
        phi[interior] += factor * (medium.D * lap[interior] - mu_term[interior])
        if step % steps_per_frame == 0:
            plane = phi[..., record_z].copy()
            if not np.all(np.isfinite(plane)):
                raise NumericalError(
                    "finite-difference solve produced non-finite flux",
                    {"step": step},
                )
            frames_out.append(plane)
    return np.stack(frames_out)


def _object_mu_a(obj, medium: MediumSpec, grid: GridSpec) -> np.ndarray:
    """Absorption field with the object embedded at the mid-depth plane."""
    shape = (grid.nx, grid.nz) if grid.ny is None else (grid.nx, grid.ny, grid.nz)
    mu_a = np.full(shape, medium.mu_a)
    obj = np.asarray(obj, dtype=np.float64)
    z_obj = grid.nz // 2
    extra = (OBJECT_ABSORPTION_SCALE - 1.0) * medium.mu_a
    if grid.ny is None:
        obj = obj.reshape(-1)
        if obj.size != grid.nx:
            raise InvalidInputError(f"object length {obj.size} != nx {grid.nx}")
        mu_a[:, z_obj] += extra * obj
    else:
        if obj.shape != (grid.nx, grid.ny):
            raise InvalidInputError(
                f"object shape {obj.shape} != (nx, ny) {(grid.nx, grid.ny)}"
            )
        mu_a[:, :, z_obj] += extra * obj
    return mu_a


def fd_solve(
    obj,
    medium: MediumSpec,
    grid: GridSpec,
    source: SourceSpec,
    video: ToFVideoSpec,
    background: np.ndarray = None,
    record_z: int = None,
) -> ToFVideo:
    """High-fidelity ToF video from the diffusion equation.

    With ``obj=None`` the raw exit-face video of the homogeneous medium is
    returned. With an object image, object voxels receive a high absorption
    coefficient and the background-subtracted difference video is returned
    (``background`` may pass a precomputed homogeneous run).
    """
    if obj is None:
        frames = fd_propagate(None, medium, grid, source, video, record_z)
    else:
        if background is None:
            background = fd_propagate(None, medium, grid, source, video, record_z)
        with_obj = fd_propagate(
            _object_mu_a(obj, medium, grid), medium, grid, source, video, record_z
        )
        frames = background - with_obj
    if frames.ndim == 2:  # 2-D grid: exit face is a line
        frames = frames[:, None, :]
    if frames.shape[1:] != (video.height, video.width):
        raise InvalidInputError(
            f"grid exit face {frames.shape[1:]} inconsistent with video "
            f"{(video.height, video.width)}"
        )
    return ToFVideo(
        video.frames,
        video.frame_period,
        video.height,
        video.width,
        video.pixel_pitch,
        frames.ravel(),
    )


def make_diffusion_dataset(
    objects,
    medium: MediumSpec,
    grid: GridSpec,
    video: ToFVideoSpec,
    k_highfid: int,
    rng: RngStream,
    snr_db: float = None,
    frames_keep: int = 15,
):
    """Split objects into a high-fidelity paired set and an unpaired remainder.

    Runs the finite-difference solver (plus optional noise) for ``k_highfid``
    rng-chosen objects; keeps only the first ``frames_keep`` frames of each
    video. Returns (paired_objects, paired_videos, unpaired_objects) with
    videos flattened row-wise.
    """
    from .degradations import add_noise

    objects = np.asarray(objects, dtype=np.float64)
    n = objects.shape[0]
    if not 0 <= k_highfid <= n:
        raise InvalidInputError(f"k_highfid={k_highfid} outside [0, {n}]")
    frames_keep = min(frames_keep, video.frames)
    order = rng.derive("pairing").permutation(n)
    paired_idx, unpaired_idx = order[:k_highfid], order[k_highfid:]

    background = None
    if k_highfid > 0:
        background = fd_propagate(None, medium, grid, SourceSpec(), video)
    videos = np.zeros((k_highfid, frames_keep * video.height * video.width))
    for row, idx in enumerate(paired_idx):
        tof = fd_solve(objects[idx], medium, grid, SourceSpec(), video, background)
        kept = tof.frames_array()[:frames_keep]
        kept = add_noise(kept, snr_db, rng.derive("noise", int(idx)))
        videos[row] = kept.ravel()
    return objects[paired_idx], videos, objects[unpaired_idx]
