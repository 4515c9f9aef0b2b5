"""Conditional variational inverse model: an approximate posterior over
targets given a measurement.

Three Gaussian-head networks: a latent prior conditioned on the measurement,
a target decoder conditioned on latent and measurement, and a recognition
model conditioned on target and measurement. Training draws targets from an
(unpaired) image set and conditions from a measurement source, which is
where the framework's strategies differ:

* a fitted ``MultiFidelityForwardModel``  - the proposed two-stage scheme;
* a ``DegradationSpec``                   - naive use of the analytic model;
* stored measurement rows (``Y`` in fit)  - standard paired CVAE training;
* rows + a spec                           - the paired-plus-simulated mix.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator

from . import autodiff as ad
from . import nnet
from .degradations import DegradationSpec, Measurement, apply_lowfid
from .errors import ConfigurationError, InvalidInputError, NumericalError
from .forward_model import MultiFidelityForwardModel, _as_rows
from .rng import RngStream


@dataclass
class PosteriorSamples:
    """Draws from the approximate posterior plus their exact pixel statistics."""

    samples: np.ndarray  # (n, N) target draws, one per row
    measurement: np.ndarray  # the conditioning measurement (flat)
    image_shape: tuple
    mean: np.ndarray = field(init=False)
    std: np.ndarray = field(init=False)

    def __post_init__(self):
        self.samples = np.atleast_2d(np.asarray(self.samples, dtype=np.float64))
        self.measurement = np.asarray(self.measurement, dtype=np.float64).ravel()
        self.image_shape = tuple(int(s) for s in self.image_shape)
        self.mean = self.samples.mean(axis=0)
        self.std = self.samples.std(axis=0)

    @property
    def n(self) -> int:
        return self.samples.shape[0]

    def mean_image(self) -> np.ndarray:
        return self.mean.reshape(self.image_shape)

    def std_image(self) -> np.ndarray:
        return self.std.reshape(self.image_shape)


class VariationalInverseModel(BaseEstimator):
    """Approximate posterior over targets, trained against a measurement source.

    Parameters
    ----------
    measurement_sampler : None, fitted MultiFidelityForwardModel,
        DegradationSpec, or callable(image_2d, RngStream) -> flat vector.
        Source of training conditions for targets without stored
        measurements. With None, ``fit`` requires stored measurements for
        every target (standard paired CVAE training).
    latent_dim, hidden, activation : architecture of the three networks.
    n_iter, batch_size, learning_rate : ascent schedule.
    paired_mix : "proportional" draws batches uniformly over all targets
        (paired and unpaired mix in proportion to their counts);
        "balanced" draws half of each batch from the paired rows.
    dtype : "float64" (default) or "float32" for faster training.
    seed : base seed; fitting is bit-reproducible for a fixed seed.
    """

    def __init__(
        self,
        measurement_sampler=None,
        latent_dim=100,
        hidden=(512,),
        activation="relu",
        n_iter=5000,
        batch_size=64,
        learning_rate=1e-3,
        paired_mix="proportional",
        dtype="float64",
        seed=0,
        trace_every=1,
    ):
        self.measurement_sampler = measurement_sampler
        self.latent_dim = latent_dim
        self.hidden = hidden
        self.activation = activation
        self.n_iter = n_iter
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.paired_mix = paired_mix
        self.dtype = dtype
        self.seed = seed
        self.trace_every = trace_every

    # ------------------------------------------------------------------ setup

    def _np_dtype(self):
        if str(self.dtype) not in ("float64", "float32"):
            raise ConfigurationError(f"dtype must be float32 or float64, got {self.dtype}")
        return np.dtype(str(self.dtype))

    def _sampler_rows(self, images, rng: RngStream) -> np.ndarray:
        """Conditions for a batch of images from the configured sampler."""
        sampler = self.measurement_sampler
        if isinstance(sampler, MultiFidelityForwardModel):
            return sampler.sample_rows(images, rng)
        if isinstance(sampler, DegradationSpec):
            rows = [
                apply_lowfid(sampler, images[k], rng.derive(k)).data
                for k in range(images.shape[0])
            ]
            return np.stack(rows)
        if callable(sampler):
            rows = [
                np.asarray(sampler(images[k], rng.derive(k)), dtype=np.float64).ravel()
                for k in range(images.shape[0])
            ]
            return np.stack(rows)
        raise ConfigurationError(
            "measurement_sampler must be a forward model, DegradationSpec, or callable"
        )

    def _build(self, n_pixels, m_dim, dtype):
        J = int(self.latent_dim)
        if J < 1:
            raise ConfigurationError("latent_dim must be >= 1")
        hidden = tuple(int(h) for h in self.hidden)
        self.theta1_spec_ = nnet.MLPSpec((m_dim, *hidden, 2 * J), self.activation)
        self.theta2_spec_ = nnet.MLPSpec((J + m_dim, *hidden, 2 * n_pixels), self.activation)
        self.phi_spec_ = nnet.MLPSpec((n_pixels + m_dim, *hidden, 2 * J), self.activation)
        sizes = [s.n_params for s in (self.theta1_spec_, self.theta2_spec_, self.phi_spec_)]
        self.params_ = np.zeros(sum(sizes), dtype=dtype)
        self._net_offsets_ = np.cumsum([0] + sizes)
        root = RngStream(int(self.seed))
        offsets = self._net_offsets_
        for name, spec, lo, hi in zip(
            ("theta1", "theta2", "phi"),
            (self.theta1_spec_, self.theta2_spec_, self.phi_spec_),
            offsets[:-1],
            offsets[1:],
        ):
            self.params_[lo:hi] = nnet.init_mlp_params(
                spec, root.derive("init", name), dtype
            ).flat

    def _nets(self):
        o = self._net_offsets_
        return (
            nnet.MLPParams(self.theta1_spec_, self.params_[o[0] : o[1]]),
            nnet.MLPParams(self.theta2_spec_, self.params_[o[1] : o[2]]),
            nnet.MLPParams(self.phi_spec_, self.params_[o[2] : o[3]]),
        )

    # ------------------------------------------------------------------ loss

    def _elbo_graph(self, x_rows, y_rows, eps):
        theta1, theta2, phi = self._nets()
        t1_vars = nnet.bind_params(theta1)
        t2_vars = nnet.bind_params(theta2)
        p_vars = nnet.bind_params(phi)
        m1, l1 = nnet.gaussian_head_vars(t1_vars, self.theta1_spec_, y_rows)
        xy = np.concatenate([x_rows, y_rows], axis=1)
        mq, lq = nnet.gaussian_head_vars(p_vars, self.phi_spec_, xy)
        z = nnet.reparam_vars(mq, lq, eps)
        dec_in = ad.concat_cols([z, ad.const(y_rows)])
        mx, lx = nnet.gaussian_head_vars(t2_vars, self.theta2_spec_, dec_in)
        recon = nnet.gaussian_loglik_vars(mx, lx, x_rows)
        kl = nnet.kl_vars(mq, lq, m1, l1)
        elbo = ad.mean_all(ad.sub(recon, kl))
        loss = ad.scale(elbo, -1.0)
        stats = (float(elbo.value), float(kl.value.mean()), float(recon.value.mean()))
        return loss, (t1_vars, t2_vars, p_vars), stats

    def _collect_grads(self, bound, dtype):
        t1_vars, t2_vars, p_vars = bound
        return np.concatenate(
            [
                nnet.collect_grad(t1_vars, self.theta1_spec_, dtype),
                nnet.collect_grad(t2_vars, self.theta2_spec_, dtype),
                nnet.collect_grad(p_vars, self.phi_spec_, dtype),
            ]
        )

    # ------------------------------------------------------------------ fit

    def fit(self, X, Y=None):
        """Train on targets X (L, H, W); Y optionally pairs the first K rows.

        Rows covered by Y use their stored measurement as the condition;
        remaining rows draw a fresh condition from ``measurement_sampler``
        every time they are visited.
        """
        dtype = self._np_dtype()
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 2:
            X = X[:, None, :]
        if X.ndim != 3:
            raise InvalidInputError("X must be (L, H, W) images")
        L = X.shape[0]
        if L < 1:
            raise InvalidInputError("need at least one target example")
        if Y is not None:
            Y = _as_rows(Y)
            if Y.shape[0] > L:
                raise InvalidInputError("more measurements than targets")
        n_paired = 0 if Y is None else Y.shape[0]
        if self.measurement_sampler is None and n_paired < L:
            raise ConfigurationError(
                "without a measurement_sampler every target needs a stored "
                f"measurement (got {n_paired} of {L})"
            )
        if self.paired_mix not in ("proportional", "balanced"):
            raise ConfigurationError(f"unknown paired_mix {self.paired_mix!r}")
        if self.paired_mix == "balanced" and not 0 < n_paired < L:
            raise ConfigurationError("balanced mix needs paired and unpaired rows")

        batch = int(self.batch_size)
        if int(self.n_iter) > 0 and L < batch:
            raise ConfigurationError(f"batch_size {batch} exceeds dataset size {L}")

        self.image_shape_ = X.shape[1:]
        self.n_pixels_ = X.shape[1] * X.shape[2]
        root = RngStream(int(self.seed))
        if n_paired > 0:
            m_dim = Y.shape[1]
        else:
            m_dim = self._sampler_rows(X[:1], root.derive("probe")).shape[1]
        self.measurement_dim_ = m_dim
        self._build(self.n_pixels_, m_dim, dtype)

        X_rows = X.reshape(L, -1).astype(dtype)
        Y_rows = None if Y is None else Y.astype(dtype)
        adam = nnet.AdamState.for_params(self.params_, float(self.learning_rate))
        trace = []
        for it in range(int(self.n_iter)):
            if self.paired_mix == "balanced" and n_paired > 0:
                h = batch // 2
                gen = root.derive("batch", it)
                idx = np.concatenate(
                    [gen.integers(0, n_paired, h), gen.derive(1).integers(n_paired, L, batch - h)]
                )
            else:
                idx = root.derive("batch", it).integers(0, L, batch)
            y_batch = np.empty((batch, m_dim), dtype=dtype)
            stored = idx < n_paired
            if stored.any():
                y_batch[stored] = Y_rows[idx[stored]]
            if (~stored).any():
                sampled = self._sampler_rows(
                    X[idx[~stored]], root.derive("cond", it)
                )
                if sampled.shape[1] != m_dim:
                    raise ConfigurationError(
                        "sampler measurement width inconsistent with stored rows"
                    )
                y_batch[~stored] = sampled.astype(dtype)
            eps = root.derive("eps", it).standard_normal(
                (batch, int(self.latent_dim)), dtype
            )
            loss, bound, stats = self._elbo_graph(X_rows[idx], y_batch, eps)
            if not np.isfinite(stats[0]):
                raise NumericalError(
                    "non-finite ELBO during inverse-model training",
                    {"iteration": it, "elbo": stats[0]},
                )
            loss.backward()
            grads = self._collect_grads(bound, dtype)
            nnet.optimizer_step(adam, self.params_, grads)
            if it % int(self.trace_every) == 0:
                trace.append((it, *stats))
        self.trace_ = np.asarray(trace, dtype=np.float64).reshape(-1, 4)
        self.n_paired_ = n_paired
        return self

    # ------------------------------------------------------------------ use

    def _check_fitted(self):
        if not hasattr(self, "params_"):
            raise ConfigurationError("model is not fitted")

    def _measurement_rows(self, Y) -> np.ndarray:
        if isinstance(Y, Measurement):
            Y = Y.data
        Y = np.asarray(Y, dtype=np.float64)
        if Y.ndim == 1:
            Y = Y[None, :]
        elif Y.ndim > 2:
            Y = Y.reshape(Y.shape[0], -1)
        if Y.shape[1] != self.measurement_dim_:
            raise InvalidInputError(
                f"measurement width {Y.shape[1]} != fitted {self.measurement_dim_}"
            )
        return Y

    def predict(self, Y) -> np.ndarray:
        """Pseudo-maximum retrieval: decoder mean at the latent prior mean.

        Deterministic and non-iterative; accepts one flat measurement or a
        batch of rows and returns matching (N,) or (n, N) reconstructions.
        """
        self._check_fitted()
        single = not isinstance(Y, Measurement) and np.asarray(Y).ndim == 1
        rows = self._measurement_rows(Y)
        theta1, theta2, _ = self._nets()
        mz, _ = nnet.gaussian_head_moments(theta1, rows)
        mx, _ = nnet.gaussian_head_moments(
            theta2, np.concatenate([mz, rows], axis=1)
        )
        return mx[0] if (single or isinstance(Y, Measurement)) else mx

    def pseudo_max(self, y) -> np.ndarray:
        """Pseudo-maximum reconstruction reshaped to the image grid."""
        return self.predict(y).reshape(self.image_shape_)

    def sample_posterior(self, y, n: int, rng: RngStream = None) -> PosteriorSamples:
        """n two-step posterior draws conditioned on one measurement."""
        self._check_fitted()
        if n < 1:
            raise InvalidInputError("n must be >= 1")
        if rng is None:
            rng = RngStream(int(self.seed), 0xA5A5).derive("posterior")
        row = self._measurement_rows(y)[0]
        theta1, theta2, _ = self._nets()
        prior = nnet.gaussian_head(theta1, row)
        z = prior.mean[None, :] + prior.std[None, :] * rng.derive(
            "z"
        ).standard_normal((n, prior.dim))
        rows = np.repeat(row[None, :], n, axis=0)
        mx, lx = nnet.gaussian_head_moments(theta2, np.concatenate([z, rows], axis=1))
        samples = mx + np.exp(0.5 * lx) * rng.derive("x").standard_normal(mx.shape)
        return PosteriorSamples(samples, row, self.image_shape_)

    def elbo(self, x, y, rng: RngStream, n_latent_samples=1) -> float:
        """Single-example ELBO estimate (deterministic given the rng stream)."""
        self._check_fitted()
        theta1, theta2, phi = self._nets()
        x = np.asarray(x, dtype=np.float64).ravel()
        y = self._measurement_rows(y)[0]
        if x.size != self.n_pixels_:
            raise InvalidInputError("x width inconsistent with fitted model")
        prior = nnet.gaussian_head(theta1, y)
        q = nnet.gaussian_head(phi, np.concatenate([x, y]))
        recon = 0.0
        for s in range(int(n_latent_samples)):
            z = nnet.reparam_sample(q, rng.derive("z", s))
            dec = nnet.gaussian_head(theta2, np.concatenate([z, y]))
            recon += nnet.gaussian_log_likelihood(dec, x)
        recon /= int(n_latent_samples)
        return recon - nnet.kl_diag_gaussians(q, prior)
