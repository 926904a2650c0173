"""The four INR variants and their prediction rules.

``det`` predicts values only. ``rev`` reads mean/AU/EU from one evidential
head in closed form. ``mcd`` averages stochastic passes with dropout on the
last trunk block. ``rmd`` averages a set of decoder heads on a shared trunk.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import evidential as ev
from .exceptions import ConfigError
from .losses import shifted_mean_var, variance_link
from .nn import Architecture, Network, forward, init_network, parameter_count
from .volume import VolumeGrid

VARIANTS = ("det", "rev", "mcd", "rmd")
CHUNK = 65536


@dataclass
class ModelConfig:
    variant: str = "rev"
    width: int | None = None
    blocks: int | None = None
    decoders: int = 5
    decoder_blocks: int = 1
    dropout_rate: float = 0.1
    mc_passes: int = 20
    omega_first: float = 30.0
    omega_hidden: float = 1.0

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        rmd = self.variant == "rmd"
        if self.width is None:
            self.width = 70 if rmd else 100
        if self.blocks is None:
            self.blocks = 1 if rmd else 3
        if self.width < 1 or self.blocks < 1:
            raise ConfigError("width and blocks must be >= 1")
        if rmd and self.decoders < 2:
            raise ConfigError("rmd needs at least 2 decoders")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError(f"dropout rate must be in [0, 1), got {self.dropout_rate}")
        if self.mc_passes < 2:
            raise ConfigError("mc_passes must be >= 2")

    def architecture(self) -> Architecture:
        common = dict(width=self.width, blocks=self.blocks, omega_first=self.omega_first, omega_hidden=self.omega_hidden)
        if self.variant == "det":
            return Architecture(head_outputs=(1,), **common)
        if self.variant == "rev":
            return Architecture(head_outputs=(4,), **common)
        if self.variant == "mcd":
            return Architecture(head_outputs=(2,), dropout_rate=self.dropout_rate, dropout_block=self.blocks - 1, **common)
        return Architecture(head_outputs=(2,) * self.decoders, head_blocks=self.decoder_blocks, **common)

    def to_dict(self):
        return asdict(self)


def build(config: ModelConfig, rng=None, dtype=np.float32) -> Network:
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    return init_network(config.architecture(), rng, dtype)


def model_size_kb(net_or_arch) -> float:
    """Serialized parameter payload in kilobytes (1000 bytes) at 32 bits per parameter."""
    return 4 * parameter_count(net_or_arch) / 1000.0


def _chunks(x):
    for start in range(0, len(x), CHUNK):
        yield start, x[start : start + CHUNK]


def det_predict(net: Network, coords):
    coords = np.asarray(coords)
    out = np.empty(len(coords))
    for s, c in _chunks(coords):
        out[s : s + len(c)] = forward(net, c)[0][0][:, 0]
    return out


def rev_outputs(net: Network, coords):
    """Raw ``(N, 4)`` evidential head outputs in float64."""
    coords = np.asarray(coords)
    raw = np.empty((len(coords), 4))
    for s, c in _chunks(coords):
        raw[s : s + len(c)] = forward(net, c)[0][0]
    return raw


def rev_predict(net: Network, coords):
    return ev.predictive_moments(ev.link(rev_outputs(net, coords)))


def _pass_streams(rng, n):
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    return [np.random.default_rng(s) for s in rng.integers(0, 2**63, size=n)]


def mcd_predict(net: Network, coords, n=20, rng=None):
    """Mean, AU and EU over ``n`` dropout passes.

    Pass ``i`` draws its dropout masks from its own stream, seeded by the
    ``i``-th integer taken from ``rng``; chunks consume a stream in order, so
    the masks do not depend on chunk size or on how passes are split across
    workers (matrix products may still round differently per chunk size).
    """
    if n < 2:
        raise ConfigError("mcd_predict needs n >= 2 passes")
    coords = np.asarray(coords)
    streams = _pass_streams(rng, n)
    mus = np.empty((n, len(coords)))
    vars_ = np.empty((n, len(coords)))
    for i, stream in enumerate(streams):
        for s, c in _chunks(coords):
            raw = forward(net, c, train=True, rng=stream)[0][0].astype(np.float64)
            mus[i, s : s + len(c)] = raw[:, 0]
            vars_[i, s : s + len(c)] = variance_link(raw[:, 1])
    mean, eu = shifted_mean_var(mus)
    au, _ = shifted_mean_var(vars_)
    return mean, au, eu


def rmd_predict(net: Network, coords):
    coords = np.asarray(coords)
    d = len(net.arch.head_outputs)
    mus = np.empty((d, len(coords)))
    vars_ = np.empty((d, len(coords)))
    for s, c in _chunks(coords):
        for i, raw in enumerate(forward(net, c)[0]):
            raw = raw.astype(np.float64)
            mus[i, s : s + len(c)] = raw[:, 0]
            vars_[i, s : s + len(c)] = variance_link(raw[:, 1])
    mean, eu = shifted_mean_var(mus)
    au, _ = shifted_mean_var(vars_)
    return mean, au, eu


def predict_fields(variant, net: Network, coords, mc_passes=20, rng=None):
    """``(mean, AU, EU)``; AU and EU are ``None`` for ``det``."""
    if variant == "det":
        return det_predict(net, coords), None, None
    if variant == "rev":
        return rev_predict(net, coords)
    if variant == "mcd":
        return mcd_predict(net, coords, mc_passes, rng)
    if variant == "rmd":
        return rmd_predict(net, coords)
    raise ConfigError(f"unknown variant {variant!r}")


@dataclass
class PredictionField:
    """Co-registered mean (data units) and AU/EU (normalized units squared) volumes."""

    mean: VolumeGrid
    au: VolumeGrid | None = None
    eu: VolumeGrid | None = None
    seconds: float = 0.0

    def __post_init__(self):
        for g in (self.au, self.eu):
            if g is None:
                continue
            if g.dims != self.mean.dims:
                raise ConfigError("prediction fields must share dims")
            if np.any(g.data < 0):
                raise ConfigError("uncertainty fields must be non-negative")


def reconstruct(model, dims, memory_budget=4 * 2**30):
    """Evaluate a fitted estimator on a full grid; see ``BaseINR.reconstruct``."""
    return model.reconstruct(dims, memory_budget=memory_budget)
