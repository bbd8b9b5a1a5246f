"""Covariance-head math for heteroscedastic velocity regression.

Six raw parameters ``[d1, d2, d3, o21, o31, o32]`` define a lower-triangular
factor ``L`` with ``diag(L) = exp(d)``; the covariance is ``L @ L.T``.
"""
from dataclasses import dataclass

import numpy as np

from .errors import NotSPD

_TRIL_OFF = ((1, 0), (2, 0), (2, 1))


@dataclass(frozen=True)
class LossConfig:
    lambda1: float = 0.01
    epsilon: float = 1e-6

    def __post_init__(self):
        if not self.lambda1 >= 0:
            raise ValueError("lambda1 must be >= 0")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be > 0")


@dataclass(frozen=True)
class LossBreakdown:
    nll: float
    diag_reg: float
    total: float

    def as_dict(self):
        return {"nll": self.nll, "diag_reg": self.diag_reg, "total": self.total}


def cholesky_factor(p):
    """Lower-triangular factor for parameters of shape ``(..., 6)``."""
    p = np.asarray(p, dtype=float)
    if p.shape[-1] != 6:
        raise ValueError("expected 6 covariance parameters, got shape %s" % (p.shape,))
    L = np.zeros(p.shape[:-1] + (3, 3))
    for i in range(3):
        L[..., i, i] = np.exp(p[..., i])
    for (i, j), k in zip(_TRIL_OFF, range(3, 6)):
        L[..., i, j] = p[..., k]
    return L


def construct_covariance(p):
    """Covariance ``L L^T`` from six Cholesky parameters (batched over leading
    axes). SPD for any finite input."""
    L = cholesky_factor(p)
    return L @ np.swapaxes(L, -1, -2)


def _regularized(sigma, epsilon):
    return np.asarray(sigma, dtype=float) + epsilon * np.eye(3)


def nll_loss(y, y_hat, sigma, cfg):
    """Gaussian negative log-likelihood ``0.5 log|S| + 0.5 r^T S^-1 r`` with ``S = sigma + eps I``."""
    S = _regularized(sigma, cfg.epsilon)
    try:
        L = np.linalg.cholesky(S)
    except np.linalg.LinAlgError:
        raise NotSPD("covariance is not positive definite") from None
    r = np.asarray(y, dtype=float) - np.asarray(y_hat, dtype=float)
    z = np.linalg.solve(L, r)
    logdet = 2.0 * np.sum(np.log(np.diag(L)))
    return float(0.5 * logdet + 0.5 * z @ z)


def nll_grad_y_hat(y, y_hat, sigma, cfg):
    """Analytic gradient of :func:`nll_loss` with respect to ``y_hat``: ``S^-1 (y_hat - y)``."""
    S = _regularized(sigma, cfg.epsilon)
    return np.linalg.solve(S, np.asarray(y_hat, dtype=float) - np.asarray(y, dtype=float))


def diag_regularizer(sigma, cfg):
    d = np.diag(np.asarray(sigma, dtype=float))
    return float(cfg.lambda1 * np.mean(1.0 / (d + cfg.epsilon)))


def total_loss(y, y_hat, p, cfg):
    sigma = construct_covariance(p)
    nll = nll_loss(y, y_hat, sigma, cfg)
    reg = diag_regularizer(sigma, cfg)
    return LossBreakdown(nll=nll, diag_reg=reg, total=nll + reg)


def central_difference(f, x, h):
    x = np.asarray(x, dtype=float)
    g = np.empty_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e.flat[i] = h
        g.flat[i] = (f(x + e) - f(x - e)) / (2.0 * h)
    return g


def nll_grad_params(y, y_hat, p, cfg):
    """Analytic gradient of the NLL with respect to the six Cholesky parameters."""
    L = cholesky_factor(p)
    S = _regularized(L @ L.T, cfg.epsilon)
    Si = np.linalg.inv(S)
    r = np.asarray(y, dtype=float) - np.asarray(y_hat, dtype=float)
    a = Si @ r
    G = 0.5 * (Si - np.outer(a, a))  # dNLL/dSigma, symmetric
    gL = 2.0 * G @ L
    d = np.diag(L)
    return np.array([gL[0, 0] * d[0], gL[1, 1] * d[1], gL[2, 2] * d[2],
                     gL[1, 0], gL[2, 0], gL[2, 1]])


def gradient_check(y, p, y_hat, cfg, h=1e-5):
    """Max relative error between analytic and central-difference NLL gradients.

    Covers all nine inputs: six covariance parameters then the three mean
    components. Relative error is taken against ``max(|grad|_inf, 1)``.
    Returns ``(max_rel_err, analytic, fd)``.
    """
    y = np.asarray(y, dtype=float)
    x0 = np.concatenate([np.asarray(p, dtype=float), np.asarray(y_hat, dtype=float)])

    def f(x):
        return nll_loss(y, x[6:], construct_covariance(x[:6]), cfg)

    fd = central_difference(f, x0, h)
    analytic = np.concatenate([
        nll_grad_params(y, x0[6:], x0[:6], cfg),
        nll_grad_y_hat(y, x0[6:], construct_covariance(x0[:6]), cfg),
    ])
    scale = max(np.max(np.abs(analytic)), 1.0)
    return float(np.max(np.abs(fd - analytic)) / scale), analytic, fd


def _minmax(part):
    lo, hi = part.min(), part.max()
    if hi == lo:
        return np.zeros_like(part)
    return (part - lo) / (hi - lo)


def minmax_normalize(cube):
    """Map real and imaginary parts separately onto [0, 1] using global extrema."""
    cube = np.asarray(cube)
    if cube.size == 0:
        raise ValueError("empty tensor")
    return _minmax(cube.real.astype(float)) + 1j * _minmax(cube.imag.astype(float))
