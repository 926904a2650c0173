"""Scikit-learn style estimators wrapping the four INR variants.

``fit(X, y)`` trains on normalized coordinates and targets you provide;
``fit_volume(vol)`` normalizes a :class:`VolumeGrid` first and remembers the
mapping so predictions come back in data units. Uncertainties are always
reported in normalized units squared.
"""
from __future__ import annotations

import math
import time

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_coordinates, check_targets
from .exceptions import ConfigError, ResourceError
from .losses import LossWeights
from .models import ModelConfig, PredictionField, predict_fields
from .nn import load_checkpoint, save_checkpoint
from .training import TrainConfig, _checkpoint_extra, fit_arrays, prepare_volume
from .volume import NormParams, VolumeGrid, grid_coordinates

BYTES_PER_VOXEL = 8 * 3 + 8 * 3 + 4 * 3


class BaseINR(RegressorMixin, BaseEstimator):
    variant = None

    # ------------------------------------------------------------------ configs

    def _model_config(self) -> ModelConfig:
        extra = {}
        if self.variant == "mcd":
            extra = {"dropout_rate": self.dropout_rate, "mc_passes": self.mc_passes}
        elif self.variant == "rmd":
            extra = {"decoders": self.decoders, "decoder_blocks": self.decoder_blocks}
        return ModelConfig(
            self.variant, width=self.width, blocks=self.blocks,
            omega_first=self.omega_first, omega_hidden=self.omega_hidden, **extra,
        )

    def _loss_weights(self) -> LossWeights:
        overrides = {k: v for k, v in (self.loss_weights or {}).items()}
        return LossWeights.for_variant(self.variant, **overrides)

    def _train_config(self) -> TrainConfig:
        return TrainConfig(
            epochs=self.epochs, batch_size=self.batch_size, seed=self.random_state,
            base_lr=self.learning_rate, lr_decay=self.lr_decay, lr_step=self.lr_step,
            weights=self._loss_weights(), checkpoint_every=self.checkpoint_every,
            deterministic=self.deterministic, workers=self.workers,
        )

    # ------------------------------------------------------------------ fitting

    def fit(self, X, y, grad_mag=None):
        X = check_coordinates(X)
        y = check_targets(y, len(X))
        if self.variant == "rev" and grad_mag is None:
            raise ConfigError("REVINR.fit needs grad_mag (gradient magnitude per sample)")
        if grad_mag is not None:
            grad_mag = check_targets(grad_mag, len(X))
        self._fit(X, y, grad_mag, getattr(self, "norm_", None))
        return self

    def fit_volume(self, volume: VolumeGrid):
        _, norm, X, y, g = prepare_volume(volume)
        self.dims_ = volume.dims
        self._fit(X, y, g if self.variant == "rev" else None, norm)
        return self

    def _fit(self, X, y, g, norm):
        self.model_config_ = self._model_config()
        self.train_config_ = self._train_config()
        self.norm_ = norm
        result = fit_arrays(self.model_config_, X, y, g, self.train_config_, out_dir=self.out_dir, norm=norm)
        self.net_ = result.net
        self.optimizer_ = result.optimizer
        self.train_log_ = result.records
        self.n_features_in_ = 3

    # ------------------------------------------------------------------ inference

    def _denorm(self, mean):
        return self.norm_.denormalize(mean) if getattr(self, "norm_", None) is not None else mean

    def predict_uncertainty(self, X):
        """``(mean, AU, EU)``; AU/EU are ``None`` for the deterministic model."""
        check_is_fitted(self, "net_")
        X = check_coordinates(X)
        mean, au, eu = predict_fields(
            self.variant, self.net_, X.astype(np.float32),
            mc_passes=self.model_config_.mc_passes, rng=self.random_state,
        )
        return self._denorm(mean), au, eu

    def predict(self, X):
        return self.predict_uncertainty(X)[0]

    def transform(self, X):
        """Stack of ``[mean, AU, EU]`` columns (one column for ``det``)."""
        mean, au, eu = self.predict_uncertainty(X)
        cols = [mean] if au is None else [mean, au, eu]
        return np.column_stack(cols)

    def reconstruct(self, dims=None, memory_budget=4 * 2**30) -> PredictionField:
        """Evaluate on every point of a ``dims`` grid spanning the training domain."""
        check_is_fitted(self, "net_")
        dims = tuple(dims or getattr(self, "dims_", None) or ())
        if len(dims) != 3:
            raise ConfigError("reconstruct needs target dims")
        required = math.prod(dims) * BYTES_PER_VOXEL
        if required > memory_budget:
            raise ResourceError(required, memory_budget)
        t0 = time.perf_counter()
        mean, au, eu = self.predict_uncertainty(grid_coordinates(dims))
        seconds = time.perf_counter() - t0
        norm = getattr(self, "norm_", None)

        def grid(values, kind):
            if values is None:
                return None
            return VolumeGrid.from_values(values, dims, norm=norm if kind == "mean" else None, field_kind=kind)

        return PredictionField(grid(mean, "mean"), grid(au, "au"), grid(eu, "eu"), seconds=seconds)

    # ------------------------------------------------------------------ persistence

    def save(self, path):
        check_is_fitted(self, "net_")
        extra = _checkpoint_extra(self.model_config_, self.train_config_, len(self.train_log_), self.norm_, self.train_log_)
        extra["estimator_params"] = self.get_params()
        extra["dims"] = list(getattr(self, "dims_", None) or [])
        return save_checkpoint(path, self.net_, self.optimizer_, extra)


class DetINR(BaseINR):
    variant = "det"

    def __init__(self, width=None, blocks=None, epochs=300, batch_size=4096, learning_rate=5e-5,
                 lr_decay=0.8, lr_step=15, loss_weights=None, random_state=0, deterministic=True,
                 workers=1, checkpoint_every=0, out_dir=None, omega_first=30.0, omega_hidden=1.0):
        self.width = width
        self.blocks = blocks
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.lr_decay = lr_decay
        self.lr_step = lr_step
        self.loss_weights = loss_weights
        self.random_state = random_state
        self.deterministic = deterministic
        self.workers = workers
        self.checkpoint_every = checkpoint_every
        self.out_dir = out_dir
        self.omega_first = omega_first
        self.omega_hidden = omega_hidden


class REVINR(DetINR):
    """Evidential INR: one forward pass gives mean, AU and EU."""

    variant = "rev"


class MCDINR(BaseINR):
    """Dropout on the last residual block, sampled at inference."""

    variant = "mcd"

    def __init__(self, width=None, blocks=None, dropout_rate=0.1, mc_passes=20, epochs=300,
                 batch_size=4096, learning_rate=5e-5, lr_decay=0.8, lr_step=15, loss_weights=None,
                 random_state=0, deterministic=True, workers=1, checkpoint_every=0, out_dir=None,
                 omega_first=30.0, omega_hidden=1.0):
        self.width = width
        self.blocks = blocks
        self.dropout_rate = dropout_rate
        self.mc_passes = mc_passes
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.lr_decay = lr_decay
        self.lr_step = lr_step
        self.loss_weights = loss_weights
        self.random_state = random_state
        self.deterministic = deterministic
        self.workers = workers
        self.checkpoint_every = checkpoint_every
        self.out_dir = out_dir
        self.omega_first = omega_first
        self.omega_hidden = omega_hidden


class RMDINR(BaseINR):
    """Shared trunk with several decoder heads; their spread is the EU."""

    variant = "rmd"

    def __init__(self, width=None, blocks=None, decoders=5, decoder_blocks=1, epochs=300,
                 batch_size=4096, learning_rate=5e-5, lr_decay=0.8, lr_step=15, loss_weights=None,
                 random_state=0, deterministic=True, workers=1, checkpoint_every=0, out_dir=None,
                 omega_first=30.0, omega_hidden=1.0):
        self.width = width
        self.blocks = blocks
        self.decoders = decoders
        self.decoder_blocks = decoder_blocks
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.lr_decay = lr_decay
        self.lr_step = lr_step
        self.loss_weights = loss_weights
        self.random_state = random_state
        self.deterministic = deterministic
        self.workers = workers
        self.checkpoint_every = checkpoint_every
        self.out_dir = out_dir
        self.omega_first = omega_first
        self.omega_hidden = omega_hidden


ESTIMATORS = {"det": DetINR, "rev": REVINR, "mcd": MCDINR, "rmd": RMDINR}


def make_model(variant, **params) -> BaseINR:
    if variant not in ESTIMATORS:
        raise ConfigError(f"unknown variant {variant!r}")
    return ESTIMATORS[variant](**params)


def load_model(path) -> BaseINR:
    """Rebuild a fitted estimator from a checkpoint written by :meth:`BaseINR.save`
    or by the training loop."""
    net, optimizer, desc = load_checkpoint(path)
    extra = desc["extra"]
    mc = ModelConfig(**extra["model_config"])
    params = extra.get("estimator_params")
    if params is None:
        tc = extra["train_config"]
        params = {
            "width": mc.width, "blocks": mc.blocks, "epochs": tc["epochs"], "batch_size": tc["batch_size"],
            "learning_rate": tc["base_lr"], "lr_decay": tc["lr_decay"], "lr_step": tc["lr_step"],
            "loss_weights": tc["weights"], "random_state": tc["seed"], "omega_first": mc.omega_first,
            "omega_hidden": mc.omega_hidden,
        }
        if mc.variant == "mcd":
            params.update(dropout_rate=mc.dropout_rate, mc_passes=mc.mc_passes)
        if mc.variant == "rmd":
            params.update(decoders=mc.decoders, decoder_blocks=mc.decoder_blocks)
    model = make_model(mc.variant, **params)
    model.model_config_ = mc
    model.train_config_ = model._train_config()
    model.net_ = net
    model.optimizer_ = optimizer
    model.norm_ = NormParams.from_dict(extra["norm"]) if extra.get("norm") else None
    if extra.get("dims"):
        model.dims_ = tuple(extra["dims"])
    model.train_log_ = []
    model.n_features_in_ = 3
    return model
