"""Fully-connected networks with diagonal-Gaussian heads.

Parameters for each network live in a single flat float array plus a layout
manifest, which keeps checkpointing, optimizer state, and finite-difference
gradient checks trivial. Forward passes come in two flavours: a plain numpy
path for sampling/inference and a graph path (``*_vars``) used inside
training losses.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .errors import ConfigurationError, InvalidInputError, NumericalError
from .rng import RngStream

LOG_2PI = float(np.log(2.0 * np.pi))

# Log-variances are hard-clipped to keep likelihoods finite; heads can
# otherwise drive variances to zero on memorized examples.
LOGVAR_MIN = -10.0
LOGVAR_MAX = 10.0

_ACTIVATIONS = ("relu", "tanh")


@dataclass(frozen=True)
class MLPSpec:
    """Widths and hidden activation of a fully-connected network."""

    layer_widths: tuple
    activation: str = "relu"

    def __post_init__(self):
        widths = tuple(int(w) for w in self.layer_widths)
        object.__setattr__(self, "layer_widths", widths)
        if len(widths) < 2:
            raise ConfigurationError("layer_widths needs input and output entries")
        if any(w < 1 for w in widths):
            raise ConfigurationError(f"all widths must be >= 1, got {widths}")
        if self.activation not in _ACTIVATIONS:
            raise ConfigurationError(f"unknown activation {self.activation!r}")

    @property
    def in_width(self) -> int:
        return self.layer_widths[0]

    @property
    def out_width(self) -> int:
        return self.layer_widths[-1]

    @property
    def n_params(self) -> int:
        return sum(
            i * o + o for i, o in zip(self.layer_widths[:-1], self.layer_widths[1:])
        )

    def layout(self):
        """Per-layer (weight_offset, bias_offset, in, out) into the flat array."""
        entries, offset = [], 0
        for i, o in zip(self.layer_widths[:-1], self.layer_widths[1:]):
            entries.append((offset, offset + i * o, i, o))
            offset += i * o + o
        return entries


@dataclass
class MLPParams:
    """Flat parameter vector conforming to an MLPSpec."""

    spec: MLPSpec
    flat: np.ndarray

    def __post_init__(self):
        self.flat = np.asarray(self.flat)
        if self.flat.ndim != 1 or self.flat.size != self.spec.n_params:
            raise InvalidInputError(
                f"flat parameter vector has size {self.flat.size}, "
                f"spec requires {self.spec.n_params}"
            )
        if not np.all(np.isfinite(self.flat)):
            raise InvalidInputError("parameters must be finite")

    def layers(self):
        """Yield (W, b) views into the flat array, one pair per layer."""
        for w_off, b_off, i, o in self.spec.layout():
            yield self.flat[w_off : w_off + i * o].reshape(i, o), self.flat[
                b_off : b_off + o
            ]


def init_mlp_params(spec: MLPSpec, rng: RngStream, dtype=np.float64) -> MLPParams:
    """Glorot-uniform weights, zero biases."""
    flat = np.zeros(spec.n_params, dtype=dtype)
    params = MLPParams(spec, flat)
    for layer_idx, (W, b) in enumerate(params.layers()):
        fan_in, fan_out = W.shape
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        W[...] = rng.derive("init", layer_idx).uniform(-bound, bound, W.shape)
        b[...] = 0.0
    return params


def mlp_forward(params: MLPParams, x: np.ndarray) -> np.ndarray:
    """Plain forward pass; accepts (d,) or (batch, d)."""
    x = np.asarray(x)
    single = x.ndim == 1
    h = x[None, :] if single else x
    if h.shape[-1] != params.spec.in_width:
        raise InvalidInputError(
            f"input width {h.shape[-1]} != spec input width {params.spec.in_width}"
        )
    act = np.tanh if params.spec.activation == "tanh" else lambda v: np.maximum(v, 0.0)
    layers = list(params.layers())
    for W, b in layers[:-1]:
        h = act(h @ W + b)
    W, b = layers[-1]
    h = h @ W + b
    return h[0] if single else h


def mlp_forward_vars(layer_vars, spec: MLPSpec, x) -> ad.Var:
    """Graph forward pass over bound parameter Vars."""
    h = x if isinstance(x, ad.Var) else ad.const(x)
    act = ad.tanh if spec.activation == "tanh" else ad.relu
    for W, b in layer_vars[:-1]:
        h = act(ad.add(ad.matmul(h, W), b))
    W, b = layer_vars[-1]
    return ad.add(ad.matmul(h, W), b)


def bind_params(params: MLPParams):
    """Wrap each layer's views as gradient-carrying Vars for one loss graph."""
    return [(ad.Var(W), ad.Var(b)) for W, b in params.layers()]


def collect_grad(layer_vars, spec: MLPSpec, dtype) -> np.ndarray:
    """Assemble per-layer Var grads back into flat layout order."""
    grad = np.zeros(spec.n_params, dtype=dtype)
    for (W_var, b_var), (w_off, b_off, i, o) in zip(layer_vars, spec.layout()):
        if W_var.grad is not None:
            grad[w_off : w_off + i * o] = W_var.grad.ravel()
        if b_var.grad is not None:
            grad[b_off : b_off + o] = b_var.grad
    return grad


@dataclass(frozen=True)
class DiagGaussian:
    """Diagonal Gaussian given by mean and log-variance vectors."""

    mean: np.ndarray
    log_var: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=np.float64)
        log_var = np.asarray(self.log_var, dtype=np.float64)
        if mean.shape != log_var.shape or mean.ndim != 1:
            raise InvalidInputError("mean and log_var must be equal-length vectors")
        if not (np.all(np.isfinite(mean)) and np.all(np.isfinite(log_var))):
            raise InvalidInputError("DiagGaussian moments must be finite")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "log_var", np.clip(log_var, LOGVAR_MIN, LOGVAR_MAX))

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    @property
    def std(self) -> np.ndarray:
        return np.exp(0.5 * self.log_var)


def gaussian_head(params: MLPParams, x: np.ndarray) -> DiagGaussian:
    """Network output split into mean (first half) and log-variance (second)."""
    out_width = params.spec.out_width
    if out_width % 2 != 0:
        raise ConfigurationError(
            f"gaussian head needs an even output width, got {out_width}"
        )
    out = mlp_forward(params, x)
    d = out_width // 2
    return DiagGaussian(out[..., :d], out[..., d:])


def gaussian_head_moments(params: MLPParams, x: np.ndarray):
    """Batched head: returns (mean, clipped log_var) arrays of shape (B, d)."""
    out_width = params.spec.out_width
    if out_width % 2 != 0:
        raise ConfigurationError(
            f"gaussian head needs an even output width, got {out_width}"
        )
    out = mlp_forward(params, x)
    d = out_width // 2
    return out[..., :d], np.clip(out[..., d:], LOGVAR_MIN, LOGVAR_MAX)


def gaussian_head_vars(layer_vars, spec: MLPSpec, x):
    """Graph version of the head split; log-variance clipped in-graph."""
    if spec.out_width % 2 != 0:
        raise ConfigurationError(
            f"gaussian head needs an even output width, got {spec.out_width}"
        )
    out = mlp_forward_vars(layer_vars, spec, x)
    d = spec.out_width // 2
    mean = ad.slice_cols(out, 0, d)
    log_var = ad.clip(ad.slice_cols(out, d, 2 * d), LOGVAR_MIN, LOGVAR_MAX)
    return mean, log_var


def reparam_sample(g: DiagGaussian, rng: RngStream) -> np.ndarray:
    """mean + exp(log_var / 2) * eps with eps drawn standard normal."""
    eps = rng.standard_normal(g.dim)
    return g.mean + g.std * eps


def reparam_vars(mean: ad.Var, log_var: ad.Var, eps: np.ndarray) -> ad.Var:
    """Reparameterized draw with frozen noise; differentiable in the moments."""
    std = ad.exp(ad.scale(log_var, 0.5))
    return ad.add(mean, ad.mul(std, ad.const(eps)))


def kl_diag_gaussians(q: DiagGaussian, p: DiagGaussian) -> float:
    """Closed-form KL(q || p); zero iff the moments coincide."""
    if q.dim != p.dim:
        raise InvalidInputError(f"dimension mismatch {q.dim} vs {p.dim}")
    dlv = q.log_var - p.log_var
    out = 0.5 * np.sum(
        np.exp(dlv) + (q.mean - p.mean) ** 2 * np.exp(-p.log_var) - 1.0 - dlv
    )
    return float(out)


def kl_vars(mq: ad.Var, lq: ad.Var, mp: ad.Var, lp: ad.Var) -> ad.Var:
    """Graph KL per batch row; (B, d) inputs -> (B,)."""
    dlv = ad.sub(lq, lp)
    dmean = ad.sub(mq, mp)
    terms = ad.add(
        ad.exp(dlv),
        ad.sub(ad.mul(ad.square(dmean), ad.exp(ad.scale(lp, -1.0))), ad.shift(dlv, 1.0)),
    )
    return ad.scale(ad.sum_cols(terms), 0.5)


def gaussian_log_likelihood(g: DiagGaussian, x: np.ndarray) -> float:
    """Exact diagonal-Gaussian log density, normalization included."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != g.mean.shape:
        raise InvalidInputError(f"dimension mismatch {x.shape} vs {g.mean.shape}")
    out = -0.5 * np.sum(g.log_var + LOG_2PI + (x - g.mean) ** 2 * np.exp(-g.log_var))
    return float(out)


def gaussian_loglik_vars(mean: ad.Var, log_var: ad.Var, target: np.ndarray) -> ad.Var:
    """Graph log density per batch row; (B, d) inputs -> (B,)."""
    resid = ad.sub(ad.const(target), mean)
    quad = ad.mul(ad.square(resid), ad.exp(ad.scale(log_var, -1.0)))
    terms = ad.add(ad.shift(log_var, LOG_2PI), quad)
    return ad.scale(ad.sum_cols(terms), -0.5)


@dataclass
class AdamState:
    """First/second-moment accumulators for a flat parameter vector."""

    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    m: np.ndarray = field(default=None, repr=False)
    v: np.ndarray = field(default=None, repr=False)
    step: int = 0

    @classmethod
    def for_params(cls, flat: np.ndarray, learning_rate: float = 1e-3) -> "AdamState":
        return cls(
            learning_rate=learning_rate,
            m=np.zeros_like(flat),
            v=np.zeros_like(flat),
        )


def optimizer_step(state: AdamState, flat: np.ndarray, grad: np.ndarray) -> None:
    """One Adam descent step, in place on ``flat`` and ``state``."""
    if grad.shape != flat.shape:
        raise InvalidInputError("gradient shape does not match parameters")
    if not np.all(np.isfinite(grad)):
        raise NumericalError(
            "non-finite gradient in optimizer step",
            {"step": state.step, "bad_entries": int(np.sum(~np.isfinite(grad)))},
        )
    state.step += 1
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * grad
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * grad * grad
    m_hat = state.m / (1.0 - state.beta1**state.step)
    v_hat = state.v / (1.0 - state.beta2**state.step)
    flat -= (state.learning_rate * m_hat / (np.sqrt(v_hat) + state.eps)).astype(
        flat.dtype
    )
