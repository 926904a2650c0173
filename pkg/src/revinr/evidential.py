"""Normal-Inverse-Gamma (NIG) evidential math.

A NIG over ``(mu, sigma2)`` is ``mu | sigma2 ~ N(v, sigma2 / gamma)`` and
``sigma2 ~ InvGamma(alpha, beta)``. Everything here is vectorized: fields of
:class:`NIGParams` may be scalars or equally shaped arrays.
"""
from __future__ import annotations

from typing import NamedTuple

import numpy as np
from scipy.special import digamma, expit, gammaln, polygamma

from .exceptions import ConfigError, DomainError, InvariantError

LINK_EPS = 1e-6


class NIGParams(NamedTuple):
    v: np.ndarray
    gamma: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray

    def check(self) -> "NIGParams":
        v, g, a, b = (np.asarray(x, dtype=np.float64) for x in self)
        if not (np.all(np.isfinite(v)) and np.all(np.isfinite(g)) and np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
            raise InvariantError("NIG parameters must be finite")
        if np.any(g <= 0) or np.any(a <= 1) or np.any(b <= 0):
            raise InvariantError("NIG parameters need gamma > 0, alpha > 1, beta > 0")
        return NIGParams(v, g, a, b)


def softplus(x):
    return np.logaddexp(0.0, x)


def link(raw) -> NIGParams:
    """Map unconstrained head outputs ``(..., 4)`` onto valid NIG parameters."""
    raw = np.asarray(raw, dtype=np.float64)
    return NIGParams(
        raw[..., 0],
        softplus(raw[..., 1]) + LINK_EPS,
        softplus(raw[..., 2]) + 1.0 + LINK_EPS,
        softplus(raw[..., 3]) + LINK_EPS,
    )


def inverse_link(gamma, alpha, beta):
    """Raw ``(gamma, alpha, beta)`` head outputs that :func:`link` maps onto the given values."""
    vals = np.array([gamma, alpha - 1.0, beta], dtype=np.float64) - LINK_EPS
    if np.any(vals <= 0):
        raise ConfigError("inverse_link needs gamma > 0, alpha > 1, beta > 0 beyond the link floor")
    return vals + np.log(-np.expm1(-vals))


def link_grad(raw, d_nig) -> np.ndarray:
    """Pull gradients w.r.t. ``(v, gamma, alpha, beta)`` back onto the raw outputs."""
    raw = np.asarray(raw, dtype=np.float64)
    out = np.empty_like(raw)
    out[..., 0] = d_nig[0]
    out[..., 1] = d_nig[1] * expit(raw[..., 1])
    out[..., 2] = d_nig[2] * expit(raw[..., 2])
    out[..., 3] = d_nig[3] * expit(raw[..., 3])
    return out


def predictive_moments(nig: NIGParams):
    """``(mean, AU, EU)`` with AU = E[sigma2] and EU = Var[mu]."""
    v, gamma, alpha, beta = nig
    alpha = np.asarray(alpha, dtype=np.float64)
    if np.any(alpha <= 1):
        raise InvariantError("predictive moments need alpha > 1")
    au = beta / (alpha - 1.0)
    eu = au / gamma
    return v, au, eu


def nig_logpdf(mu, sigma2, nig: NIGParams):
    mu = np.asarray(mu, dtype=np.float64)
    sigma2 = np.asarray(sigma2, dtype=np.float64)
    if np.any(sigma2 <= 0):
        raise DomainError("sigma2 must be positive")
    v, gamma, alpha, beta = nig
    return (
        alpha * np.log(beta)
        + 0.5 * np.log(gamma)
        - gammaln(alpha)
        - 0.5 * np.log(2.0 * np.pi * sigma2)
        - (alpha + 1.0) * np.log(sigma2)
        - (2.0 * beta + gamma * (v - mu) ** 2) / (2.0 * sigma2)
    )


def nig_pdf(mu, sigma2, nig: NIGParams):
    return np.exp(nig_logpdf(mu, sigma2, nig))


def nig_kl(p: NIGParams, q: NIGParams):
    """KL(p || q) in closed form.

    Splits into the Gaussian KL on ``mu`` given ``sigma2``, averaged under p's
    inverse-gamma (only ``E[1/sigma2] = alpha_p / beta_p`` survives), plus the
    inverse-gamma KL, which equals the gamma KL of the precision.
    """
    vp, gp, ap, bp = p
    vq, gq, aq, bq = q
    ratio = gp / gq
    normal = 0.5 * (gq * (vp - vq) ** 2 * ap / bp + 1.0 / ratio + np.log(ratio) - 1.0)
    invgamma = (
        (ap - aq) * digamma(ap)
        - gammaln(ap)
        + gammaln(aq)
        + aq * (np.log(bp) - np.log(bq))
        + ap * (bq - bp) / bp
    )
    return normal + invgamma


def nig_kl_grad(p: NIGParams, q: NIGParams):
    """Gradient of :func:`nig_kl` w.r.t. p's ``(v, gamma, alpha, beta)``; q is held fixed."""
    vp, gp, ap, bp = p
    vq, gq, aq, bq = q
    d2 = (vp - vq) ** 2
    dv = gq * (vp - vq) * ap / bp
    dg = 0.5 * (1.0 / gp - gq / gp**2)
    da = 0.5 * gq * d2 / bp + (ap - aq) * polygamma(1, ap) + (bq - bp) / bp
    db = -0.5 * gq * d2 * ap / bp**2 + aq / bp - ap * bq / bp**2
    return dv, dg, da, db


def evidence_penalty(y, nig: NIGParams):
    """``|y - v| * (2 gamma + alpha)``: evidence spent on a wrong prediction."""
    v, gamma, alpha, _ = nig
    return np.abs(y - v) * (2.0 * gamma + alpha)


def evidence_penalty_grad(y, nig: NIGParams):
    v, gamma, alpha, _ = nig
    err = y - v
    # np.sign(0) == 0 picks the zero subgradient at y == v
    dv = -np.sign(err) * (2.0 * gamma + alpha)
    abs_err = np.abs(err)
    return dv, 2.0 * abs_err, abs_err, np.zeros_like(abs_err)


def target_nig(y, gamma_t=10.0, alpha_t=5.0, beta_t=0.01) -> NIGParams:
    """Low-uncertainty target centred on the ground truth; a constant for gradients."""
    if not (gamma_t > 0 and alpha_t > 1 and beta_t > 0):
        raise ConfigError(
            f"target NIG needs gamma_t > 0, alpha_t > 1, beta_t > 0; got ({gamma_t}, {alpha_t}, {beta_t})"
        )
    y = np.asarray(y, dtype=np.float64)
    return NIGParams(y, np.full_like(y, gamma_t), np.full_like(y, alpha_t), np.full_like(y, beta_t))
