"""Quadrature checks for one-dimensional latent spaces.

With a scalar latent variable the marginal likelihood and the expected
evidence lower bound are both one-dimensional integrals, so the bound
property (ELBO <= log marginal likelihood) can be verified numerically to
quadrature accuracy. Used by validation tests on toy models; only valid
when the model's latent_dim is 1.
"""

from __future__ import annotations

import numpy as np
from scipy.special import logsumexp, roots_hermite

from . import nnet
from .errors import InvalidInputError


def _gh_nodes(mean: float, log_var: float, n_quad: int):
    """Gauss-Hermite nodes/log-weights for an expectation under N(mean, var)."""
    x, w = roots_hermite(n_quad)
    nodes = mean + np.sqrt(2.0 * np.exp(log_var)) * x
    log_w = np.log(w) - 0.5 * np.log(np.pi)
    return nodes, log_w


def _check_scalar_latent(model):
    if int(model.latent_dim) != 1:
        raise InvalidInputError("quadrature diagnostics require latent_dim == 1")


def forward_conditional_loglik(model, x, ytilde, y, w) -> float:
    """log p(y | x, ytilde, w) under the fitted decoder head."""
    alpha2 = model._nets()[1]
    dec = nnet.gaussian_head(alpha2, np.concatenate([x, ytilde, [w]]))
    return nnet.gaussian_log_likelihood(dec, y)


def forward_marginal_loglik(model, x, y, ytilde, n_quad: int = 200) -> float:
    """log p(y | x, ytilde) by Gauss-Hermite over the scalar latent prior."""
    _check_scalar_latent(model)
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    ytilde = np.asarray(ytilde, dtype=np.float64).ravel()
    alpha1 = model._nets()[0]
    prior = nnet.gaussian_head(alpha1, np.concatenate([x, ytilde]))
    nodes, log_w = _gh_nodes(prior.mean[0], prior.log_var[0], n_quad)
    logs = [forward_conditional_loglik(model, x, ytilde, y, w) for w in nodes]
    return float(logsumexp(np.asarray(logs) + log_w))

def forward_expected_elbo(model, x, y, ytilde, n_quad: int = 200) -> float:
    """E_q[log p(y|x,ytilde,w)] - KL(q || prior), expectation by quadrature.

    This is the limit of the single-sample ELBO estimator averaged over the
    latent noise, so by Jensen's inequality it never exceeds
    ``forward_marginal_loglik`` (up to quadrature error).
    """
    _check_scalar_latent(model)
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    ytilde = np.asarray(ytilde, dtype=np.float64).ravel()
    alpha1, _, beta = model._nets()
    prior = nnet.gaussian_head(alpha1, np.concatenate([x, ytilde]))
    q = nnet.gaussian_head(beta, np.concatenate([x, y, ytilde]))
    nodes, log_w = _gh_nodes(q.mean[0], q.log_var[0], n_quad)
    logs = np.asarray(
        [forward_conditional_loglik(model, x, ytilde, y, w) for w in nodes]
    )
    expected_recon = float(np.sum(np.exp(log_w) * logs))
    return expected_recon - nnet.kl_diag_gaussians(q, prior)


def inverse_conditional_loglik(model, x, y, z) -> float:
    """log r(x | z, y) under the fitted decoder head."""
    theta2 = model._nets()[1]
    dec = nnet.gaussian_head(theta2, np.concatenate([[z], y]))
    return nnet.gaussian_log_likelihood(dec, x)


def inverse_marginal_loglik(model, x, y, n_quad: int = 200) -> float:
    """log r(x | y) by Gauss-Hermite over the scalar latent prior."""
    _check_scalar_latent(model)
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    theta1 = model._nets()[0]
    prior = nnet.gaussian_head(theta1, y)
    nodes, log_w = _gh_nodes(prior.mean[0], prior.log_var[0], n_quad)
    logs = [inverse_conditional_loglik(model, x, y, z) for z in nodes]
    return float(logsumexp(np.asarray(logs) + log_w))


def inverse_expected_elbo(model, x, y, n_quad: int = 200) -> float:
    """E_q[log r(x|z,y)] - KL(q || prior) with the expectation by quadrature."""
    _check_scalar_latent(model)
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    theta1, _, phi = model._nets()
    prior = nnet.gaussian_head(theta1, y)
    q = nnet.gaussian_head(phi, np.concatenate([x, y]))
    nodes, log_w = _gh_nodes(q.mean[0], q.log_var[0], n_quad)
    logs = np.asarray([inverse_conditional_loglik(model, x, y, z) for z in nodes])
    expected_recon = float(np.sum(np.exp(log_w) * logs))
    return expected_recon - nnet.kl_diag_gaussians(q, prior)


def posterior_mixture_mean(model, y, n_quad: int = 200) -> np.ndarray:
    """E[x | y] of a scalar-latent inverse model by quadrature over the prior."""
    _check_scalar_latent(model)
    y = np.asarray(y, dtype=np.float64).ravel()
    theta1, theta2, _ = model._nets()
    prior = nnet.gaussian_head(theta1, y)
    nodes, log_w = _gh_nodes(prior.mean[0], prior.log_var[0], n_quad)
    w = np.exp(log_w)
    means = np.stack(
        [nnet.gaussian_head(theta2, np.concatenate([[z], y])).mean for z in nodes]
    )
    return (w[:, None] * means).sum(axis=0)
