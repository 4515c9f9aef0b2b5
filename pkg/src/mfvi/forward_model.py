"""Multi-fidelity forward model: a learned sampler for high-fidelity
measurements conditioned on a target and an analytic low-fidelity prediction.

Three Gaussian-head networks are trained jointly by stochastic ascent on an
evidence lower bound: a latent prior (target + low-fidelity input), a
measurement decoder (target + low-fidelity + latent), and a recognition
model (target + measurement + low-fidelity). Once fitted, measurements are
drawn in three steps: run the analytic model, draw the latent from the
prior head, draw the measurement from the decoder head.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator

from . import autodiff as ad
from . import nnet
from .degradations import DegradationSpec, Measurement, apply_lowfid
from .errors import ConfigurationError, InvalidInputError, NumericalError
from .rng import RngStream


def _as_rows(X, n_pixels=None):
    """Flatten (K, H, W) or (K, d) to (K, d) float64 rows."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 3:
        X = X.reshape(X.shape[0], -1)
    if X.ndim != 2:
        raise InvalidInputError(f"expected 2-D or 3-D array, got shape {X.shape}")
    if n_pixels is not None and X.shape[1] != n_pixels:
        raise InvalidInputError(f"row width {X.shape[1]} != expected {n_pixels}")
    return X


class MultiFidelityForwardModel(BaseEstimator):
    """Learned observation model combining paired data with an analytic model.

    Parameters
    ----------
    lowfid : DegradationSpec or callable(image_2d, RngStream) -> array
        The analytic low-fidelity observation model.
    latent_dim : size of the latent variable of the measurement CVAE.
    hidden : tuple of hidden-layer widths shared by the three networks.
    activation : "relu" or "tanh".
    n_iter, batch_size, learning_rate : ascent schedule.
    dtype : "float64" (default) or "float32" for faster training.
    seed : base seed; fitting is bit-reproducible for a fixed seed.
    trace_every : record (iteration, elbo, kl, recon) every this many steps.
    """

    def __init__(
        self,
        lowfid=None,
        latent_dim=50,
        hidden=(300,),
        activation="relu",
        n_iter=5000,
        batch_size=64,
        learning_rate=1e-3,
        dtype="float64",
        seed=0,
        trace_every=1,
        measurement_shape=None,
    ):
        self.lowfid = lowfid
        self.latent_dim = latent_dim
        self.hidden = hidden
        self.activation = activation
        self.n_iter = n_iter
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.dtype = dtype
        self.seed = seed
        self.trace_every = trace_every
        self.measurement_shape = measurement_shape

    # ------------------------------------------------------------------ setup

    def _np_dtype(self):
        if str(self.dtype) not in ("float64", "float32"):
            raise ConfigurationError(f"dtype must be float32 or float64, got {self.dtype}")
        return np.dtype(str(self.dtype))

    def _lowfid_vector(self, image_2d, rng: RngStream) -> np.ndarray:
        if isinstance(self.lowfid, DegradationSpec):
            return apply_lowfid(self.lowfid, image_2d, rng).data
        if callable(self.lowfid):
            return np.asarray(self.lowfid(image_2d, rng), dtype=np.float64).ravel()
        raise ConfigurationError("lowfid must be a DegradationSpec or a callable")

    def _lowfid_rows(self, images, rng: RngStream, tag: int) -> np.ndarray:
        rows = np.empty((images.shape[0], self.lowfid_dim_))
        for k in range(images.shape[0]):
            rows[k] = self._lowfid_vector(images[k], rng.derive(tag, k))
        return rows

    def _build(self, n_pixels, m_dim, mt_dim, dtype):
        J = int(self.latent_dim)
        if J < 1:
            raise ConfigurationError("latent_dim must be >= 1")
        hidden = tuple(int(h) for h in self.hidden)
        self.alpha1_spec_ = nnet.MLPSpec((n_pixels + mt_dim, *hidden, 2 * J), self.activation)
        self.alpha2_spec_ = nnet.MLPSpec((n_pixels + mt_dim + J, *hidden, 2 * m_dim), self.activation)
        self.beta_spec_ = nnet.MLPSpec((n_pixels + m_dim + mt_dim, *hidden, 2 * J), self.activation)
        sizes = [s.n_params for s in (self.alpha1_spec_, self.alpha2_spec_, self.beta_spec_)]
        self.params_ = np.zeros(sum(sizes), dtype=dtype)
        offsets = np.cumsum([0] + sizes)
        self._net_offsets_ = offsets
        root = RngStream(int(self.seed))
        for name, spec, lo, hi in zip(
            ("alpha1", "alpha2", "beta"),
            (self.alpha1_spec_, self.alpha2_spec_, self.beta_spec_),
            offsets[:-1],
            offsets[1:],
        ):
            self.params_[lo:hi] = nnet.init_mlp_params(
                spec, root.derive("init", name), dtype
            ).flat

    def _nets(self):
        o = self._net_offsets_
        return (
            nnet.MLPParams(self.alpha1_spec_, self.params_[o[0] : o[1]]),
            nnet.MLPParams(self.alpha2_spec_, self.params_[o[1] : o[2]]),
            nnet.MLPParams(self.beta_spec_, self.params_[o[2] : o[3]]),
        )

    # ------------------------------------------------------------------ loss

    def _elbo_graph(self, x_rows, y_rows, yt_rows, eps):
        """Batch ELBO graph; returns (scalar loss Var, bound vars, stats)."""
        alpha1, alpha2, beta = self._nets()
        a1_vars = nnet.bind_params(alpha1)
        a2_vars = nnet.bind_params(alpha2)
        b_vars = nnet.bind_params(beta)
        x_yt = np.concatenate([x_rows, yt_rows], axis=1)
        m1, l1 = nnet.gaussian_head_vars(a1_vars, self.alpha1_spec_, x_yt)
        x_y_yt = np.concatenate([x_rows, y_rows, yt_rows], axis=1)
        mq, lq = nnet.gaussian_head_vars(b_vars, self.beta_spec_, x_y_yt)
        w = nnet.reparam_vars(mq, lq, eps)
        dec_in = ad.concat_cols([ad.const(x_rows), ad.const(yt_rows), w])
        m2, l2 = nnet.gaussian_head_vars(a2_vars, self.alpha2_spec_, dec_in)
        recon = nnet.gaussian_loglik_vars(m2, l2, y_rows)
        kl = nnet.kl_vars(mq, lq, m1, l1)
        elbo = ad.mean_all(ad.sub(recon, kl))
        loss = ad.scale(elbo, -1.0)
        stats = (float(elbo.value), float(kl.value.mean()), float(recon.value.mean()))
        return loss, (a1_vars, a2_vars, b_vars), stats

    def _collect_grads(self, bound, dtype):
        a1_vars, a2_vars, b_vars = bound
        return np.concatenate(
            [
                nnet.collect_grad(a1_vars, self.alpha1_spec_, dtype),
                nnet.collect_grad(a2_vars, self.alpha2_spec_, dtype),
                nnet.collect_grad(b_vars, self.beta_spec_, dtype),
            ]
        )

    # ------------------------------------------------------------------ fit

    def fit(self, X, Y):
        """Train on paired targets X (K, H, W) and measurements Y (K, M).

        Each step draws a batch, runs the analytic model for fresh
        low-fidelity inputs, and ascends the batch-mean ELBO.
        """
        dtype = self._np_dtype()
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 2:
            X = X[:, None, :]
        if X.ndim != 3:
            raise InvalidInputError("X must be (K, H, W) images")
        Y = _as_rows(Y)
        if Y.shape[0] != X.shape[0]:
            raise InvalidInputError("X and Y must have the same number of examples")
        K = X.shape[0]
        if K < 1:
            raise InvalidInputError("need at least one paired example")
        batch = int(self.batch_size)
        if int(self.n_iter) > 0 and K < batch:
            raise ConfigurationError(
                f"batch_size {batch} exceeds number of paired examples {K}"
            )
        self.image_shape_ = X.shape[1:]
        self.n_pixels_ = X.shape[1] * X.shape[2]
        self.measurement_dim_ = Y.shape[1]
        if self.measurement_shape is not None:
            if int(np.prod(self.measurement_shape)) != self.measurement_dim_:
                raise ConfigurationError("measurement_shape inconsistent with Y width")
            self.measurement_shape_ = tuple(int(s) for s in self.measurement_shape)
        else:
            self.measurement_shape_ = (1, 1, self.measurement_dim_)

        root = RngStream(int(self.seed))
        probe = self._lowfid_vector(X[0], root.derive("probe"))
        self.lowfid_dim_ = probe.size
        self._build(self.n_pixels_, self.measurement_dim_, self.lowfid_dim_, dtype)

        X_rows = X.reshape(K, -1).astype(dtype)
        Y_rows = Y.astype(dtype)
        adam = nnet.AdamState.for_params(self.params_, float(self.learning_rate))
        trace = []
        for it in range(int(self.n_iter)):
            idx = root.derive("batch", it).integers(0, K, batch)
            yt = self._lowfid_rows(X[idx], root.derive("lowfid", it), 0).astype(dtype)
            eps = root.derive("eps", it).standard_normal(
                (batch, int(self.latent_dim)), dtype
            )
            loss, bound, stats = self._elbo_graph(X_rows[idx], Y_rows[idx], yt, eps)
            if not np.isfinite(stats[0]):
                raise NumericalError(
                    "non-finite ELBO during forward-model training",
                    {"iteration": it, "elbo": stats[0]},
                )
            loss.backward()
            grads = self._collect_grads(bound, dtype)
            nnet.optimizer_step(adam, self.params_, grads)
            if it % int(self.trace_every) == 0:
                trace.append((it, *stats))
        self.trace_ = np.asarray(trace, dtype=np.float64).reshape(-1, 4)
        self.n_iter_ = int(self.n_iter)
        return self

    # ------------------------------------------------------------------ use

    def _check_fitted(self):
        if not hasattr(self, "params_"):
            raise ConfigurationError("model is not fitted")

    def elbo(self, x, y, ytilde, rng: RngStream, n_latent_samples=1) -> float:
        """Single-example ELBO estimate (deterministic given the rng stream)."""
        self._check_fitted()
        alpha1, alpha2, beta = self._nets()
        x = np.asarray(x, dtype=np.float64).ravel()
        y = np.asarray(y, dtype=np.float64).ravel()
        ytilde = np.asarray(ytilde, dtype=np.float64).ravel()
        if x.size != self.n_pixels_ or y.size != self.measurement_dim_:
            raise InvalidInputError("x or y width inconsistent with fitted model")
        if ytilde.size != self.lowfid_dim_:
            raise InvalidInputError("ytilde width inconsistent with fitted model")
        prior = nnet.gaussian_head(alpha1, np.concatenate([x, ytilde]))
        q = nnet.gaussian_head(beta, np.concatenate([x, y, ytilde]))
        recon = 0.0
        for s in range(int(n_latent_samples)):
            w = nnet.reparam_sample(q, rng.derive("w", s))
            dec = nnet.gaussian_head(alpha2, np.concatenate([x, ytilde, w]))
            recon += nnet.gaussian_log_likelihood(dec, y)
        recon /= int(n_latent_samples)
        return recon - nnet.kl_diag_gaussians(q, prior)

    def held_out_elbo(self, X, Y, rng: RngStream) -> float:
        """Mean single-sample ELBO over a paired set, fresh low-fidelity draws."""
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 2:
            X = X[:, None, :]
        Y = _as_rows(Y, self.measurement_dim_)
        total = 0.0
        for k in range(X.shape[0]):
            yt = self._lowfid_vector(X[k], rng.derive("lowfid", k))
            total += self.elbo(X[k], Y[k], yt, rng.derive("elbo", k))
        return total / X.shape[0]

    def sample_rows(self, images, rng: RngStream) -> np.ndarray:
        """Batched three-step sampler; images (B, H, W) -> measurements (B, M)."""
        self._check_fitted()
        images = np.asarray(images, dtype=np.float64)
        if images.ndim == 2:
            images = images[None]
        alpha1, alpha2, _ = self._nets()
        B = images.shape[0]
        x_rows = images.reshape(B, -1)
        if x_rows.shape[1] != self.n_pixels_:
            raise InvalidInputError("image size inconsistent with fitted model")
        yt = self._lowfid_rows(images, rng, 0)
        m1, l1 = nnet.gaussian_head_moments(alpha1, np.concatenate([x_rows, yt], axis=1))
        w = m1 + np.exp(0.5 * l1) * rng.derive("w").standard_normal(m1.shape)
        m2, l2 = nnet.gaussian_head_moments(
            alpha2, np.concatenate([x_rows, yt, w], axis=1)
        )
        return m2 + np.exp(0.5 * l2) * rng.derive("y").standard_normal(m2.shape)

    def sample(self, x, rng: RngStream) -> np.ndarray:
        """One measurement draw for a single image; returns a flat vector."""
        return self.sample_rows(np.asarray(x)[None], rng)[0]

    def sample_measurement(self, x, rng: RngStream) -> Measurement:
        return Measurement(self.measurement_shape_, self.sample(x, rng))
