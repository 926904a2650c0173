"""Training objectives and their gradients.

Scalar building blocks come in pairs (``f`` and ``f_grad``). The per-variant
totals return a :class:`BatchLossReport` whose ``grad`` is the gradient of the
total w.r.t. the raw head outputs, ready for :func:`revinr.nn.backward`.
Batch-coupled targets (prediction error, gradient magnitude) are constants.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from . import evidential as ev
from .exceptions import ConfigError, InvariantError, UsageError

VAR_EPS = 1e-6
DEGENERATE_VAR = 1e-12
KL_EPS = 1e-8


@dataclass
class LossWeights:
    lambda1: float = 0.01
    lambda2: float = 0.1
    lambda3: float = 0.1
    delta: float = 0.1
    target_gamma: float = 10.0
    target_alpha: float = 5.0
    target_beta: float = 0.01
    rmd_k: float = 5.0

    def __post_init__(self):
        for name in ("lambda1", "lambda2", "lambda3", "delta"):
            if getattr(self, name) < 0:
                raise ConfigError(f"loss weight {name} must be >= 0")
        if self.rmd_k <= 0:
            raise ConfigError("rmd_k must be positive")
        ev.target_nig(0.0, self.target_gamma, self.target_alpha, self.target_beta)

    @classmethod
    def for_variant(cls, variant, **overrides):
        defaults = {
            "det": {},
            "rev": {},
            "mcd": {"lambda1": 0.001},
            "rmd": {"lambda1": 0.001, "lambda2": 0.01},
        }
        if variant not in defaults:
            raise ConfigError(f"unknown variant {variant!r}")
        return cls(**{**defaults[variant], **overrides})


@dataclass
class BatchLossReport:
    total: float
    components: dict
    weights: dict
    phase: int = 1
    grad: object = field(default=None, repr=False, compare=False)

    def weighted_sum(self) -> float:
        return float(sum(self.weights[k] * v for k, v in self.components.items()))

    def to_dict(self):
        return {"total": self.total, "components": dict(self.components), "weights": dict(self.weights), "phase": self.phase}


def _total(components, weights):
    total = 0.0
    for k, v in components.items():
        total += weights[k] * v
    return total


def _as_pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise UsageError(f"length mismatch: {a.shape} vs {b.shape}")
    if a.size < 1:
        raise UsageError("empty batch")
    return a, b


# --------------------------------------------------------------------------- elementary losses


def mse(pred, y) -> float:
    pred, y = _as_pair(pred, y)
    return float(np.mean((pred - y) ** 2))


def mse_grad(pred, y):
    pred, y = _as_pair(pred, y)
    return 2.0 * (pred - y) / pred.size


def _check_var(var):
    var = np.asarray(var, dtype=np.float64)
    if np.any(var <= 0):
        raise InvariantError("Gaussian NLL needs strictly positive variance")
    return var


def gauss_nll(mu, var, y) -> float:
    mu, y = _as_pair(mu, y)
    var = _check_var(var)
    return float(np.mean(0.5 * np.log(2.0 * np.pi * var) + (y - mu) ** 2 / (2.0 * var)))


def gauss_nll_grad(mu, var, y):
    """Gradients w.r.t. ``(mu, var)`` of the batch-mean NLL."""
    mu, y = _as_pair(mu, y)
    var = _check_var(var)
    r = mu - y
    n = mu.size
    return r / var / n, (0.5 / var - 0.5 * r * r / var**2) / n


def pearson(a, b) -> float:
    """Sample Pearson correlation; 0 when either side is (near-)constant."""
    a, b = _as_pair(a, b)
    if a.size < 2:
        raise UsageError("Pearson correlation needs at least 2 samples")
    ac = a - a.mean()
    bc = b - b.mean()
    if np.mean(ac * ac) < DEGENERATE_VAR or np.mean(bc * bc) < DEGENERATE_VAR:
        return 0.0
    r = float(ac @ bc / np.sqrt((ac @ ac) * (bc @ bc)))
    return min(1.0, max(-1.0, r))


def pearson_grad(a, b):
    """d pearson / d a, with b constant."""
    a, b = _as_pair(a, b)
    ac = a - a.mean()
    bc = b - b.mean()
    if a.size < 2 or np.mean(ac * ac) < DEGENERATE_VAR or np.mean(bc * bc) < DEGENERATE_VAR:
        return np.zeros_like(a)
    saa = ac @ ac
    sab = ac @ bc
    sbb = bc @ bc
    norm = np.sqrt(saa * sbb)
    return bc / norm - (sab / norm) * ac / saa


def eu_corr_loss(eu, xi) -> float:
    return 1.0 - pearson(eu, xi)


def au_corr_loss(au, g) -> float:
    return 1.0 - pearson(au, g)


def _to_distribution(x):
    x = np.asarray(x, dtype=np.float64)
    lo = x.min()
    if lo < 0:
        x = x - lo
    x = x + KL_EPS
    s = x.sum()
    return x / s, s


def rmd_kl(eu, err) -> float:
    """Discrete KL between the batch EU and error profiles, each normalized to sum 1."""
    eu, err = _as_pair(eu, err)
    p, _ = _to_distribution(eu)
    q, _ = _to_distribution(err)
    return float(np.sum(p * np.log(p / q)))


def rmd_kl_grad(eu, err):
    eu, err = _as_pair(eu, err)
    p, s = _to_distribution(eu)
    q, _ = _to_distribution(err)
    logr = np.log(p / q)
    return (logr - np.sum(p * logr)) / s


def rmd_lambda(epoch, n_epochs, lambda_max, k=5.0) -> float:
    """Exponential ramp reaching ``lambda_max`` at ``epoch == n_epochs``."""
    return float(lambda_max * np.exp(k * (epoch / n_epochs - 1.0)))


def variance_link(raw):
    return ev.softplus(raw) + VAR_EPS


def variance_link_grad(raw):
    return expit(raw)


def rev_phase(epoch, n_epochs) -> int:
    """1 for pure reconstruction, 2 once ``epoch >= floor(n_epochs / 2)``."""
    return 2 if epoch >= n_epochs // 2 else 1


# --------------------------------------------------------------------------- variant totals


def det_total(raw, y) -> BatchLossReport:
    pred = np.asarray(raw, dtype=np.float64)[:, 0]
    comp = {"mse": mse(pred, y)}
    grad = np.zeros((pred.size, 1))
    grad[:, 0] = mse_grad(pred, y)
    return BatchLossReport(comp["mse"], comp, {"mse": 1.0}, grad=grad)


def rev_total(raw, y, grad_mag, weights: LossWeights, epoch, n_epochs, xi=None) -> BatchLossReport:
    """Two-phase evidential objective on raw ``(N, 4)`` head outputs.

    ``xi`` overrides the error target ``|y - v|``; either way it carries no gradient.
    """
    raw = np.asarray(raw, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    nig = ev.link(raw)
    v = nig.v
    n = y.size
    m = mse(v, y)
    d_v = mse_grad(v, y)
    phase = rev_phase(epoch, n_epochs)
    grad = np.zeros_like(raw)

    if phase == 1:
        grad[:, 0] = d_v
        return BatchLossReport(m, {"mse": m}, {"mse": 1.0}, phase=1, grad=grad)

    w = weights
    target = ev.target_nig(y, w.target_gamma, w.target_alpha, w.target_beta)
    _, au, eu = ev.predictive_moments(nig)
    xi = np.abs(y - v) if xi is None else np.asarray(xi, dtype=np.float64)
    comps = {
        "mse": m,
        "kl": float(np.mean(ev.nig_kl(nig, target))),
        "reg": float(np.mean(ev.evidence_penalty(y, nig))),
        "eu_corr": eu_corr_loss(eu, xi),
        "au_corr": au_corr_loss(au, grad_mag),
    }
    wts = {"mse": 1.0, "kl": w.lambda1, "reg": w.lambda1 * w.delta, "eu_corr": w.lambda2, "au_corr": w.lambda3}

    dkl = ev.nig_kl_grad(nig, target)
    dreg = ev.evidence_penalty_grad(y, nig)
    d_nig = [wts["kl"] * a / n + wts["reg"] * b / n for a, b in zip(dkl, dreg)]
    d_nig[0] = d_nig[0] + d_v

    _, gamma, alpha, beta = nig
    d_eu = -wts["eu_corr"] * pearson_grad(eu, xi)
    d_nig[1] = d_nig[1] - d_eu * eu / gamma
    d_nig[2] = d_nig[2] - d_eu * eu / (alpha - 1.0)
    d_nig[3] = d_nig[3] + d_eu * eu / beta
    d_au = -wts["au_corr"] * pearson_grad(au, grad_mag)
    d_nig[2] = d_nig[2] - d_au * au / (alpha - 1.0)
    d_nig[3] = d_nig[3] + d_au * au / beta

    return BatchLossReport(_total(comps, wts), comps, wts, phase=2, grad=ev.link_grad(raw, d_nig))


def mcd_total(raw, y, weights: LossWeights) -> BatchLossReport:
    """MSE plus weighted Gaussian NLL on raw ``(N, 2)`` (mean, variance-logit) outputs."""
    raw = np.asarray(raw, dtype=np.float64)
    mu = raw[:, 0]
    var = variance_link(raw[:, 1])
    comps = {"mse": mse(mu, y), "nll": gauss_nll(mu, var, y)}
    wts = {"mse": 1.0, "nll": weights.lambda1}
    d_mu, d_var = gauss_nll_grad(mu, var, y)
    grad = np.empty_like(raw)
    grad[:, 0] = mse_grad(mu, y) + wts["nll"] * d_mu
    grad[:, 1] = wts["nll"] * d_var * variance_link_grad(raw[:, 1])
    return BatchLossReport(_total(comps, wts), comps, wts, grad=grad)


def shifted_mean_var(samples):
    """Mean and population variance along axis 0, exact for identical samples."""
    samples = np.asarray(samples, dtype=np.float64)
    base = samples[0]
    d = samples - base
    md = d.mean(axis=0)
    return base + md, np.mean((d - md) ** 2, axis=0)


def rmd_total(raws, y, weights: LossWeights, epoch, n_epochs, err=None) -> BatchLossReport:
    """Multi-decoder objective over a list of raw ``(N, 2)`` decoder outputs.

    ``err`` overrides the error profile ``|y - mean|``, which is a constant for gradients.
    """
    raws = [np.asarray(r, dtype=np.float64) for r in raws]
    d = len(raws)
    if d < 2:
        raise UsageError("multi-decoder loss needs at least 2 decoders")
    y = np.asarray(y, dtype=np.float64)
    mus = np.stack([r[:, 0] for r in raws])
    vars_ = np.stack([variance_link(r[:, 1]) for r in raws])
    mean, eu = shifted_mean_var(mus)
    err = np.abs(y - mean) if err is None else np.asarray(err, dtype=np.float64)
    comps = {
        "mse": mse(mean, y),
        "nll": float(np.mean([gauss_nll(mus[i], vars_[i], y) for i in range(d)])),
        "rmd_kl": rmd_kl(eu, err),
    }
    wts = {"mse": 1.0, "nll": weights.lambda1, "rmd_kl": rmd_lambda(epoch, n_epochs, weights.lambda2, weights.rmd_k)}

    d_mean = mse_grad(mean, y) / d
    d_eu = wts["rmd_kl"] * rmd_kl_grad(eu, err)
    grads = []
    for i, r in enumerate(raws):
        d_mu, d_var = gauss_nll_grad(mus[i], vars_[i], y)
        g = np.empty_like(r)
        g[:, 0] = d_mean + wts["nll"] * d_mu / d + d_eu * 2.0 * (mus[i] - mean) / d
        g[:, 1] = wts["nll"] * d_var / d * variance_link_grad(r[:, 1])
        grads.append(g)
    return BatchLossReport(_total(comps, wts), comps, wts, grad=grads)
