"""Mean-network pretraining and bridge regression training.

Four bridge variants share one loop:

    ``i2sb``         I2SB path between x0 and x1
    ``nadb``         magnitude-aligned path between x0 and M(x1)
    ``i2sb-mean``    I2SB path between x0 and M(x1)
    ``nadb-nomean``  magnitude-aligned path between x0 and x1

The mean network is frozen during bridge training, so its outputs over the
training set are computed once up front.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import rng as rngmod
from .errors import ConfigError, DivergenceError
from .interpolant import I2SB, NADB, ScheduleSpec, make_bridge_sample
from .regressor import (AdamState, RegressorParams, adam_step, backward, forward,
                        mse_and_grad)
from .tasks import PairedSamples

log = logging.getLogger(__name__)

VARIANTS = {
    "i2sb": (I2SB, False),
    "nadb": (NADB, True),
    "i2sb-mean": (I2SB, True),
    "nadb-nomean": (NADB, False),
}


def variant_kind(variant: str) -> tuple[str, bool]:
    """Return ``(interpolant kind, uses mean network)`` for a variant name."""
    try:
        return VARIANTS[variant]
    except KeyError:
        raise ConfigError(f"unknown variant {variant!r}; expected one of {sorted(VARIANTS)}") from None


@dataclass
class TrainConfig:
    batch_size: int = 128
    steps: int = 1000
    lr: float = 1e-4
    seed: int = 0
    t_min: float = 1e-4
    time_bins: int = 20
    bridge: ScheduleSpec | None = None
    use_mean_network: bool = False
    hidden: int = 128
    depth: int = 2
    time_embed_dim: int = 16
    activation: str = "silu"

    def __post_init__(self):
        if self.batch_size < 1 or self.steps < 1:
            raise ConfigError("batch_size and steps must be positive")
        if not (self.lr > 0 and math.isfinite(self.lr)):
            raise ConfigError("lr must be positive")
        if not (0.0 <= self.t_min <= 0.01):
            raise ConfigError("t_min must lie in [0, 0.01]")
        if self.time_bins < 2:
            raise ConfigError("time_bins must be at least 2")

    def layer_dims(self, dim: int, time_embed_dim: int) -> tuple[int, ...]:
        return (dim + time_embed_dim,) + (self.hidden,) * self.depth + (dim,)


@dataclass
class TrainResult:
    params: RegressorParams
    losses: list[float] = field(default_factory=list)
    bin_losses: list[list[float]] = field(default_factory=list)


def _check_data(data: PairedSamples):
    if len(data) == 0:
        raise ValueError("empty dataset")
    if data.x0.shape != data.x1.shape:
        raise ValueError("x0 and x1 must have the same shape")


def _finite_loss(loss: float, step: int) -> float:
    if not math.isfinite(loss):
        raise DivergenceError(f"non-finite loss at step {step}")
    return loss


def train_mean_network(data: PairedSamples, config: TrainConfig) -> TrainResult:
    """Regress x0 on x1 by minimum MSE; the minimiser is E[x0 | x1]."""
    _check_data(data)
    dim = data.x0.shape[1]
    params = RegressorParams.initialize(config.layer_dims(dim, 0),
                                        rngmod.stream(config.seed, rngmod.MEAN_INIT),
                                        time_embed_dim=0, activation=config.activation)
    state = AdamState.for_params(params)
    gen = rngmod.stream(config.seed, rngmod.MEAN_TRAIN)
    result = TrainResult(params)
    for step in range(config.steps):
        idx = gen.integers(0, len(data), size=config.batch_size)
        pred, tape = forward(params, data.x1[idx])
        loss, _, grad = mse_and_grad(pred, data.x0[idx])
        result.losses.append(_finite_loss(loss, step))
        adam_step(params, backward(params, tape, grad), state, config.lr)
    log.info("mean network: loss %.4g -> %.4g", result.losses[0], result.losses[-1])
    return result


def far_endpoints(x1: np.ndarray, mean_params: RegressorParams | None) -> np.ndarray:
    return x1 if mean_params is None else mean_params(x1)


def bin_index(t: np.ndarray, t_min: float, bins: int) -> np.ndarray:
    u = (np.asarray(t) - t_min) / (1.0 - t_min)
    return np.clip((u * bins).astype(np.int64), 0, bins - 1)


def bridge_loss(spec: ScheduleSpec, predict, sample):
    """Loss of ``predict(x_t, t)`` against the sample's coupled target."""
    pred = predict(sample.xt, sample.t)
    return mse_and_grad(pred, sample.yt)


def bridge_training_step(spec: ScheduleSpec, eps_params: RegressorParams, state: AdamState,
                         x0: np.ndarray, xfar: np.ndarray, config: TrainConfig,
                         gen: np.random.Generator, t=None, z=None):
    """One Adam step on ``E |eps(x_t, t) - y_t|^2``.

    ``xfar`` is the bridge endpoint at t=1 (x1 or the frozen mean-network
    output). ``t`` and ``z`` are drawn from ``gen`` unless given. Returns
    ``(loss, per_sample_loss, t)``.
    """
    n = len(x0)
    if t is None:
        t = gen.uniform(config.t_min, 1.0, size=n)
    t = np.broadcast_to(np.asarray(t, dtype=np.float64), (n,))
    if z is None:
        z = gen.standard_normal(x0.shape)
    sample = make_bridge_sample(spec, t, x0, xfar, xfar, z)
    pred, tape = forward(eps_params, sample.xt, t)
    loss, per_sample, grad = mse_and_grad(pred, sample.yt)
    _finite_loss(loss, state.step)
    adam_step(eps_params, backward(eps_params, tape, grad), state, config.lr)
    return loss, per_sample, t


def nadb_training_step(eps_params, mean_params, batch: PairedSamples, config: TrainConfig,
                       state: AdamState, gen: np.random.Generator, t=None, z=None):
    """Magnitude-aligned step; ``mean_params`` (or None) supplies the far endpoint."""
    spec = config.bridge if config.bridge is not None else ScheduleSpec(NADB, t_min=config.t_min)
    if spec.kind != NADB:
        raise ConfigError("nadb_training_step needs a nadb schedule")
    xfar = far_endpoints(batch.x1, mean_params)
    loss, _, _ = bridge_training_step(spec, eps_params, state, batch.x0, xfar, config, gen, t, z)
    return eps_params, loss


def i2sb_training_step(eps_params, batch: PairedSamples, config: TrainConfig,
                       state: AdamState, gen: np.random.Generator, t=None, z=None):
    spec = config.bridge if config.bridge is not None else ScheduleSpec(I2SB, t_min=config.t_min)
    if spec.kind != I2SB:
        raise ConfigError("i2sb_training_step needs an i2sb schedule")
    loss, _, _ = bridge_training_step(spec, eps_params, state, batch.x0, batch.x1, config, gen, t, z)
    return eps_params, loss


def bridge_spec_for(variant: str, base: ScheduleSpec) -> ScheduleSpec:
    kind, _ = variant_kind(variant)
    return replace(base, kind=kind)


def train_bridge(data: PairedSamples, config: TrainConfig, variant: str,
                 mean_params: RegressorParams | None = None) -> TrainResult:
    """Full training loop for one ablation arm with per-time-bin loss logging.

    Each logged row holds the batch loss and the mean per-sample loss of the
    batch members falling in each of ``config.time_bins`` uniform bins over
    ``[t_min, 1]`` (NaN where a bin received no samples).
    """
    _check_data(data)
    kind, uses_mean = variant_kind(variant)
    if uses_mean and mean_params is None:
        raise ConfigError(f"variant {variant!r} needs a trained mean network")
    base = config.bridge if config.bridge is not None else ScheduleSpec(kind, t_min=config.t_min)
    spec = replace(base, kind=kind)
    xfar = far_endpoints(data.x1, mean_params if uses_mean else None)

    dim = data.x0.shape[1]
    params = RegressorParams.initialize(config.layer_dims(dim, config.time_embed_dim),
                                        rngmod.stream(config.seed, rngmod.BRIDGE_INIT),
                                        time_embed_dim=config.time_embed_dim,
                                        activation=config.activation)
    state = AdamState.for_params(params)
    gen = rngmod.stream(config.seed, rngmod.BRIDGE_TRAIN)
    cfg = replace(config, t_min=spec.t_min)
    result = TrainResult(params)
    bins = config.time_bins
    for _ in range(config.steps):
        idx = gen.integers(0, len(data), size=config.batch_size)
        loss, per_sample, t = bridge_training_step(spec, params, state, data.x0[idx], xfar[idx],
                                                   cfg, gen)
        result.losses.append(loss)
        which = bin_index(t, spec.t_min, bins)
        sums = np.bincount(which, weights=per_sample, minlength=bins)
        counts = np.bincount(which, minlength=bins)
        with np.errstate(invalid="ignore", divide="ignore"):
            result.bin_losses.append(list(np.where(counts > 0, sums / counts, np.nan)))
    log.info("%s bridge: loss %.4g -> %.4g", variant, result.losses[0], result.losses[-1])
    return result


def evaluate_bin_losses(eps_params: RegressorParams, spec: ScheduleSpec, x0: np.ndarray,
                        xfar: np.ndarray, bins: int, seed: int, per_bin: int = 256) -> np.ndarray:
    """Mean loss per time bin on a fixed evaluation draw (bin centres, fixed z)."""
    gen = rngmod.stream(seed, rngmod.EVAL_BINS)
    out = np.empty(bins)
    edges = np.linspace(spec.t_min, 1.0, bins + 1)
    for b in range(bins):
        idx = gen.integers(0, len(x0), size=per_bin)
        t = gen.uniform(edges[b], edges[b + 1], size=per_bin)
        z = gen.standard_normal((per_bin, x0.shape[1]))
        sample = make_bridge_sample(spec, t, x0[idx], xfar[idx], xfar[idx], z)
        out[b] = mse_and_grad(eps_params(sample.xt, t), sample.yt)[0]
    return out
