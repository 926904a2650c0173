"""Epoch-driven training with seeded shuffling, checkpoints and a JSON-lines log.

All randomness derives from ``TrainConfig.seed``: the epoch permutation comes
from ``default_rng([seed, epoch])`` and dropout noise from
``default_rng([seed, epoch, batch, chunk])``. Nothing else carries state
between epochs, which is what makes resume-from-checkpoint exact.
"""
from __future__ import annotations

import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import evidential as ev
from . import losses as L
from .exceptions import ConfigError, NumericError
from .models import ModelConfig, build
from .nn import Adam, Network, StepDecay, backward, forward, load_checkpoint, save_checkpoint
from .volume import NormParams, VolumeGrid, gradient_magnitude, grid_coordinates, normalize

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    epochs: int = 300
    batch_size: int = 4096
    seed: int = 0
    base_lr: float = 5e-5
    lr_decay: float = 0.8
    lr_step: int = 15
    weights: L.LossWeights | None = None
    checkpoint_every: int = 0
    deterministic: bool = True
    workers: int = 1

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 2:
            raise ConfigError(f"batch size must be >= 2, got {self.batch_size}")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if isinstance(self.weights, dict):
            self.weights = L.LossWeights(**self.weights)
        self.schedule  # validates

    @property
    def schedule(self) -> StepDecay:
        return StepDecay(self.base_lr, self.lr_decay, self.lr_step)

    def to_dict(self):
        d = asdict(self)
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass
class TrainLogRecord:
    epoch: int
    phase: int
    lr: float
    total: float
    components: dict
    weights: dict
    seconds: float

    def weighted_sum(self):
        return sum(self.weights[k] * v for k, v in self.components.items())

    def to_json(self):
        return json.dumps(asdict(self), sort_keys=True)


@dataclass
class TrainResult:
    net: Network
    optimizer: Adam
    records: list = field(default_factory=list)
    next_epoch: int = 0
    warnings: list = field(default_factory=list)


def epoch_batches(n_samples, batch_size, seed, epoch):
    """Index arrays covering a seeded permutation of ``range(n_samples)``.

    A trailing batch of a single sample is folded into the previous batch so
    every batch supports a correlation and every sample is still visited.
    """
    perm = np.random.default_rng([seed, epoch]).permutation(n_samples)
    starts = list(range(0, n_samples, batch_size))
    if len(starts) > 1 and n_samples - starts[-1] < 2:
        starts.pop()
    bounds = starts[1:] + [n_samples]
    return [perm[s:e] for s, e in zip(starts, bounds)]


def _batch_loss(variant, outputs, y, g, weights, epoch, n_epochs):
    outs = [o.astype(np.float64) for o in outputs]
    if variant == "det":
        rep = L.det_total(outs[0], y)
    elif variant == "rev":
        rep = L.rev_total(outs[0], y, g, weights, epoch, n_epochs)
    elif variant == "mcd":
        rep = L.mcd_total(outs[0], y, weights)
    else:
        rep = L.rmd_total(outs, y, weights, epoch, n_epochs)
    if variant != "rmd":
        rep.grad = [rep.grad]
    return rep


def batch_gradients(variant, net, x, y, g, weights, epoch, n_epochs, seed=0, batch_index=0, workers=1, deterministic=True, pool=None):
    """Loss report and parameter gradients for one batch.

    With ``workers > 1`` the batch is split into contiguous chunks whose
    forward and backward passes run on a thread pool; the loss itself always
    sees the whole batch. Deterministic mode sums chunk gradients in chunk
    order.
    """
    n_chunks = max(1, min(workers, len(x) // 2))
    splits = np.array_split(np.arange(len(x)), n_chunks)

    def fwd(ci):
        rng = np.random.default_rng([seed, epoch, batch_index, ci])
        return forward(net, x[splits[ci]], train=True, rng=rng, cache=True)

    if pool is None or n_chunks == 1:
        fwd_results = [fwd(ci) for ci in range(n_chunks)]
    else:
        fwd_results = list(pool.map(fwd, range(n_chunks)))
    n_heads = len(net.arch.head_outputs)
    outputs = [np.concatenate([fr[0][h] for fr in fwd_results]) for h in range(n_heads)]
    rep = _batch_loss(variant, outputs, y, g, weights, epoch, n_epochs)
    if not np.isfinite(rep.total):
        bad = [k for k, v in rep.components.items() if not np.isfinite(v)]
        raise NumericError("non-finite loss", epoch=epoch, batch=batch_index, component=",".join(bad) or "total")

    def bwd(ci):
        idx = splits[ci]
        return backward(net, fwd_results[ci][1], [gr[idx] for gr in rep.grad])

    if pool is None or n_chunks == 1:
        parts = [bwd(ci) for ci in range(n_chunks)]
    elif deterministic:
        parts = list(pool.map(bwd, range(n_chunks)))
    else:
        parts = [f.result() for f in as_completed([pool.submit(bwd, ci) for ci in range(n_chunks)])]
    grads = parts[0]
    for part in parts[1:]:
        grads = {k: grads[k] + part[k] for k in grads}
    return rep, grads


def _checkpoint_extra(model_config, train_config, next_epoch, norm, records):
    last = None
    if records:
        # wall-clock time stays out so identical runs give identical files
        last = {k: v for k, v in json.loads(records[-1].to_json()).items() if k != "seconds"}
    return {
        "model_config": model_config.to_dict(),
        "train_config": {**train_config.to_dict(), "weights": asdict(train_config.weights)},
        "next_epoch": next_epoch,
        "norm": norm.to_dict() if norm is not None else None,
        "last_record": last,
    }


def fit_arrays(
    model_config: ModelConfig,
    x,
    y,
    grad_mag=None,
    train_config: TrainConfig | None = None,
    out_dir=None,
    norm: NormParams | None = None,
    net: Network | None = None,
    optimizer: Adam | None = None,
    start_epoch: int = 0,
    log_path=None,
) -> TrainResult:
    """Train on coordinates ``x`` (N, 3) and normalized targets ``y`` (N,)."""
    tc = train_config or TrainConfig()
    if tc.weights is None:
        tc.weights = L.LossWeights.for_variant(model_config.variant)
    variant = model_config.variant
    x = np.ascontiguousarray(x, dtype=np.float32)
    y = np.asarray(y, dtype=np.float64)
    if variant == "rev":
        if grad_mag is None:
            raise ConfigError("rev training needs gradient-magnitude targets")
        grad_mag = np.asarray(grad_mag, dtype=np.float64)
    if net is None:
        net = build(model_config, np.random.default_rng(tc.seed))
        if variant == "rev":
            start_at_target(net, tc.weights)
    if optimizer is None:
        optimizer = Adam(net.params)
    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        log_path = log_path or out_dir / "train_log.jsonl"
    result = TrainResult(net, optimizer, next_epoch=start_epoch)
    if start_epoch >= tc.epochs:
        msg = f"resume at epoch {start_epoch} is past the final epoch {tc.epochs - 1}; nothing to do"
        log.warning(msg)
        result.warnings.append(msg)
        if log_path is not None:
            with open(log_path, "a") as fh:
                fh.write(json.dumps({"warning": msg, "epoch": start_epoch}) + "\n")
        return result

    pool = ThreadPoolExecutor(tc.workers) if tc.workers > 1 else None
    schedule = tc.schedule
    try:
        for epoch in range(start_epoch, tc.epochs):
            t0 = time.perf_counter()
            lr = schedule.lr_at(epoch)
            sums, total_sum, weights, phase = {}, 0.0, {}, 1
            for bi, idx in enumerate(epoch_batches(len(x), tc.batch_size, tc.seed, epoch)):
                g = grad_mag[idx] if grad_mag is not None else None
                rep, grads = batch_gradients(
                    variant, net, x[idx], y[idx], g, tc.weights, epoch, tc.epochs,
                    seed=tc.seed, batch_index=bi, workers=tc.workers,
                    deterministic=tc.deterministic, pool=pool,
                )
                optimizer.step(net.params, grads, lr)
                for k, v in rep.components.items():
                    sums[k] = sums.get(k, 0.0) + v * len(idx)
                total_sum += rep.total * len(idx)
                weights, phase = rep.weights, rep.phase
            record = TrainLogRecord(
                epoch=epoch,
                phase=phase,
                lr=lr,
                total=total_sum / len(x),
                components={k: v / len(x) for k, v in sums.items()},
                weights=weights,
                seconds=time.perf_counter() - t0,
            )
            result.records.append(record)
            result.next_epoch = epoch + 1
            if log_path is not None:
                with open(log_path, "a") as fh:
                    fh.write(record.to_json() + "\n")
            log.info("epoch %d phase %d lr %.3g loss %.6g", epoch, phase, lr, record.total)
            if out_dir is not None and tc.checkpoint_every and (epoch + 1) % tc.checkpoint_every == 0:
                extra = _checkpoint_extra(model_config, tc, epoch + 1, norm, result.records)
                save_checkpoint(out_dir / f"ckpt_epoch{epoch + 1:04d}.bin", net, optimizer, extra)
                save_checkpoint(out_dir / "last_good.bin", net, optimizer, extra)
    finally:
        if pool is not None:
            pool.shutdown()
    if out_dir is not None:
        extra = _checkpoint_extra(model_config, tc, result.next_epoch, norm, result.records)
        save_checkpoint(out_dir / "final.bin", net, optimizer, extra)
    return result


def prepare_volume(volume: VolumeGrid, lo=-1.0, hi=1.0):
    """Normalized copy, coordinates, targets and gradient-magnitude targets."""
    norm_vol, norm = normalize(volume, lo, hi)
    x = grid_coordinates(norm_vol.dims)
    return norm_vol, norm, x, norm_vol.values, gradient_magnitude(norm_vol).values



def start_at_target(net, weights):
    """Bias the evidential head so every point starts at the target NIG.

    Phase one never touches these outputs, so without this the second phase
    opens with a large KL that the shared trunk pays for in fidelity.
    """
    b = net.params["head0.b"]
    raw = ev.inverse_link(weights.target_gamma, weights.target_alpha, weights.target_beta)
    b[1:4] = raw.astype(b.dtype)

def train(model_config: ModelConfig, volume: VolumeGrid, train_config: TrainConfig | None = None, out_dir=None):
    """Normalize ``volume`` to [-1, 1] and train; returns a :class:`TrainResult`."""
    _, norm, x, y, g = prepare_volume(volume)
    return fit_arrays(model_config, x, y, g if model_config.variant == "rev" else None, train_config, out_dir, norm)


def resume(checkpoint, x, y, grad_mag=None, train_config: TrainConfig | None = None, model_config: ModelConfig | None = None, out_dir=None):
    """Continue a run from a checkpoint written by :func:`fit_arrays`.

    ``model_config`` (when given) must describe the checkpointed architecture.
    ``train_config`` defaults to the snapshot stored in the checkpoint.
    """
    _, _, desc = load_checkpoint(checkpoint)
    extra = desc["extra"]
    stored_mc = ModelConfig(**extra["model_config"])
    mc = model_config or stored_mc
    net, optimizer, _ = load_checkpoint(checkpoint, expected_arch=mc.architecture())
    tc = train_config or TrainConfig.from_dict(extra["train_config"])
    norm = NormParams.from_dict(extra["norm"]) if extra.get("norm") else None
    return fit_arrays(mc, x, y, grad_mag, tc, out_dir, norm, net=net, optimizer=optimizer, start_epoch=extra["next_epoch"])
