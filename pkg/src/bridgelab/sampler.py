"""Reverse-time generation for both bridge families.

The magnitude-aligned bridge uses two transitions. Above the threshold
``d = (1 - a) / (2 - a)`` it takes the plain step

    x_s = x_t - eps * (t^a - s^a) + sigma * z,
    sigma^2 = [k s (1-s)]^2 - [k s^a t^(1-a) (1-t)]^2,

whose variance term is only real for ``s >= d``. Below it, an
endpoint-conditioned step mixes in the far endpoint ``xhat0``:

    x_s = A eps - B x_t + C xhat0 + sigma_w z,
    C = s^a - w t^a,  B = C - 1,  A = t^a (w - 1 + C),
    sigma_w^2 = [k s (1-s)]^2 - [k w t (1-t)]^2.

The stage is chosen by the destination time ``s`` of each step, since that
is the time the validity condition constrains.

The I2SB baseline uses the exact Gaussian bridge posterior
``q(x_s | x0_hat, x_t)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import rng as rngmod
from .errors import ConfigError, DivergenceError, StageError
from .interpolant import I2SB, NADB, ScheduleSpec, predict_x0, t_pow, target_scale

RADICAND_TOL = 1e-12
W_RULES = ("ratio", "constant", "deterministic")


def _variance(radicand: float, what: str) -> float:
    if radicand < -RADICAND_TOL:
        raise StageError(f"{what}: negative variance {radicand:.3e}")
    return max(radicand, 0.0)


def _check_pair(s: float, t: float):
    if not (0.0 <= s <= t <= 1.0):
        raise StageError(f"need 0 <= s <= t <= 1, got s={s}, t={t}")


def stage1_sigma2(spec: ScheduleSpec, s: float, t: float) -> float:
    """Unclamped variance term of the stage-1 step."""
    a, k = spec.alpha, spec.k
    keep = k * float(t_pow(s, a)) * float(t_pow(t, 1.0 - a)) * (1.0 - t)
    return (k * s * (1.0 - s)) ** 2 - keep**2


def stage2_sigma2(spec: ScheduleSpec, s: float, t: float, w: float) -> float:
    k = spec.k
    return (k * s * (1.0 - s)) ** 2 - (k * w * t * (1.0 - t)) ** 2


def stage1_step(spec: ScheduleSpec, s: float, t: float, xt, eps, z):
    """Plain reverse step; valid only for destinations ``s >= d``."""
    _check_pair(s, t)
    if s < spec.stage_threshold - RADICAND_TOL:
        raise StageError(f"stage-1 step to s={s} is below its validity threshold "
                         f"{spec.stage_threshold:.6g}")
    xt = np.asarray(xt, dtype=np.float64)
    if s == t:
        return xt.copy()
    delta = float(t_pow(t, spec.alpha)) - float(t_pow(s, spec.alpha))
    sigma = np.sqrt(_variance(stage1_sigma2(spec, s, t), "stage-1"))
    return xt - np.asarray(eps) * delta + sigma * np.asarray(z)


def stage2_coefficients(spec: ScheduleSpec, s: float, t: float, w: float):
    """Return ``(A, B, C, sigma_w)`` of the endpoint-conditioned step."""
    _check_pair(s, t)
    sa, ta = float(t_pow(s, spec.alpha)), float(t_pow(t, spec.alpha))
    c = sa - w * ta
    b = c - 1.0
    a = ta * ((w - 1.0) + c)
    sigma = float(np.sqrt(_variance(stage2_sigma2(spec, s, t, w), "stage-2 (w too large)")))
    return a, b, c, sigma


def stage2_step(spec: ScheduleSpec, s: float, t: float, xt, eps, xhat0, w: float, z):
    a, b, c, sigma = stage2_coefficients(spec, s, t, w)
    return (a * np.asarray(eps) - b * np.asarray(xt, dtype=np.float64)
            + c * np.asarray(xhat0) + sigma * np.asarray(z))


def i2sb_posterior(spec: ScheduleSpec, s: float, t: float):
    """Weights ``(on x0, on x_t)`` and std of ``q(x_s | x0, x_t)`` for the I2SB path."""
    _check_pair(s, t)
    s2, t2 = float(spec.sigma2(s)), float(spec.sigma2(t))
    if t2 <= 0.0:
        return 1.0, 0.0, 0.0
    gap = t2 - s2
    return gap / t2, s2 / t2, float(np.sqrt(max(s2 * gap / t2, 0.0)))


def i2sb_reverse_step(spec: ScheduleSpec, s: float, t: float, xt, eps, z):
    _check_pair(s, t)
    xt = np.asarray(xt, dtype=np.float64)
    if s == t:
        return xt.copy()
    x0 = xt - float(target_scale(spec, t)) * np.asarray(eps)
    w0, wt, std = i2sb_posterior(spec, s, t)
    return w0 * x0 + wt * xt + std * np.asarray(z)


@dataclass
class SamplerPlan:
    grid: np.ndarray
    spec: ScheduleSpec
    d: float | None = None
    w_rule: str = "ratio"
    w_const: float = 1.0

    def __post_init__(self):
        self.grid = np.asarray(self.grid, dtype=np.float64)
        g = self.grid
        if g.ndim != 1 or len(g) < 2 or g[0] != 0.0 or g[-1] != 1.0 or np.any(np.diff(g) <= 0):
            raise ConfigError("grid must increase strictly from 0 to 1")
        if self.w_rule not in W_RULES:
            raise ConfigError(f"w_rule must be one of {W_RULES}")
        if self.spec.kind == NADB:
            if self.d is None:
                self.d = self.spec.stage_threshold
            if self.d < self.spec.stage_threshold - RADICAND_TOL:
                raise ConfigError(f"d={self.d} is below the stage-1 threshold "
                                  f"{self.spec.stage_threshold:.6g}")

    @property
    def nfe(self) -> int:
        return len(self.grid) - 1

    def w(self, s: float, t: float) -> float:
        if self.w_rule == "constant":
            return self.w_const
        if self.w_rule == "deterministic" and 0.0 < t < 1.0:
            return s * (1.0 - s) / (t * (1.0 - t))
        # ratio rule; also the fallback at t == 1 where no w removes the noise
        return s / t

    def stage(self, s: float) -> str:
        if self.spec.kind == I2SB:
            return "i2sb"
        return "stage2" if s < self.d else "stage1"


def make_plan(spec: ScheduleSpec, nfe: int, d: float | None = None, w_rule: str = "ratio",
              w_const: float = 1.0, spacing: str = "uniform") -> SamplerPlan:
    if nfe < 1:
        raise ConfigError("nfe must be at least 1")
    u = np.linspace(0.0, 1.0, nfe + 1)
    if spacing == "quadratic":
        u = u**2
    elif spacing != "uniform":
        raise ConfigError(f"unknown grid spacing {spacing!r}")
    u[0], u[-1] = 0.0, 1.0
    return SamplerPlan(u, spec, d, w_rule, w_const)


@dataclass
class TrajectoryRecord:
    t: list[float] = field(default_factory=list)
    states: list[np.ndarray] = field(default_factory=list)
    x0_preds: list[np.ndarray] = field(default_factory=list)
    stages: list[str] = field(default_factory=list)
    sigmas: list[float] = field(default_factory=list)

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]


def _step_sigma(plan: SamplerPlan, s: float, t: float, w: float) -> float:
    st = plan.stage(s)
    if st == "i2sb":
        return i2sb_posterior(plan.spec, s, t)[2]
    if st == "stage1":
        return float(np.sqrt(_variance(stage1_sigma2(plan.spec, s, t), "stage-1")))
    return stage2_coefficients(plan.spec, s, t, w)[3]


def generate(plan: SamplerPlan, eps_fn, mean_fn, x1, seed: int = 0, first_index: int = 0,
             noise: np.ndarray | None = None) -> TrajectoryRecord:
    """Run the reverse chain from t=1 to t=0.

    ``eps_fn(x, t)`` is the trained regressor (a ``RegressorParams`` works);
    ``mean_fn`` maps x1 to the far endpoint, or is None for a plain bridge.
    ``x1`` may be one vector or a batch. Row ``i`` draws its noise from the
    stream ``TRAJECTORY_BASE + first_index + i`` so results do not depend on
    batch composition. ``noise`` of shape ``(nfe, *x1.shape)`` overrides the
    draws (zeros give the noiseless chain).
    """
    x1 = np.asarray(x1, dtype=np.float64)
    single = x1.ndim == 1
    batch = x1[None, :] if single else x1
    xhat0 = batch if mean_fn is None else np.asarray(mean_fn(batch))
    nfe = plan.nfe
    if noise is None:
        draws = np.stack([rngmod.stream(seed, rngmod.TRAJECTORY_BASE + first_index + i)
                          .standard_normal((nfe, batch.shape[1])) for i in range(len(batch))],
                         axis=1)
    else:
        draws = np.asarray(noise, dtype=np.float64).reshape((nfe,) + batch.shape)

    rec = TrajectoryRecord()
    x = xhat0.copy()
    spec = plan.spec
    rec.t.append(1.0)
    rec.states.append(x)
    rec.x0_preds.append(np.full_like(x, np.nan))
    rec.stages.append("start")
    rec.sigmas.append(0.0)
    for step, n in enumerate(range(nfe, 0, -1)):
        t, s = float(plan.grid[n]), float(plan.grid[n - 1])
        eps = np.asarray(eps_fn(x, t))
        z = draws[step]
        stage = plan.stage(s)
        w = plan.w(s, t)
        if stage == "i2sb":
            x = i2sb_reverse_step(spec, s, t, x, eps, z)
        elif stage == "stage1":
            x = stage1_step(spec, s, t, x, eps, z)
        else:
            x = stage2_step(spec, s, t, x, eps, xhat0, w, z)
        if not np.all(np.isfinite(x)):
            raise DivergenceError(f"non-finite state at reverse step {step} (t={t} -> s={s})")
        rec.t.append(s)
        rec.states.append(x)
        rec.x0_preds.append(predict_x0(spec, t, rec.states[-2], eps))
        rec.stages.append(stage)
        rec.sigmas.append(_step_sigma(plan, s, t, w))
    if single:
        rec.states = [a[0] for a in rec.states]
        rec.x0_preds = [a[0] for a in rec.x0_preds]
    return rec


def oracle_eps(spec: ScheduleSpec, x0):
    """Regressor that knows the clean sample: returns the exact target for any ``x_t``."""
    x0 = np.asarray(x0, dtype=np.float64)

    def eps(xt, t):
        return (np.asarray(xt) - x0) / float(target_scale(spec, t))

    return eps


def trajectory_rows(rec: TrajectoryRecord):
    """Rows ``(step, t, mean state norm, stage, sigma)`` for a trajectory dump."""
    for i, (t, st, stage, sig) in enumerate(zip(rec.t, rec.states, rec.stages, rec.sigmas)):
        norm = float(np.mean(np.linalg.norm(np.atleast_2d(st), axis=-1)))
        yield i, t, norm, stage, sig
