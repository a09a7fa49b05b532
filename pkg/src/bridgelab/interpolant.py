"""Closed-form bridge interpolants and their regression targets.

Two families are supported:

* ``i2sb``: the Schrodinger-bridge path whose weights come from the integrated
  beta schedule, ``sigma2(t) = int_0^t beta`` and ``sigma_bar2(t) = int_t^1 beta``.
  The network regresses ``(x_t - x_0) / sigma_t``.
* ``nadb``: the magnitude-aligned path
  ``x_t = (1 - t^a) x_0 + t^a x_far + k t (1 - t) z`` with target
  ``(x_t - x_0) / t^a``.

``x_far`` is the far endpoint of the bridge: the degraded sample itself, or the
mean-network output when one is used.

All functions accept scalar ``t`` or an array of times; vector arguments may be
a single ``(d,)`` vector or a ``(n, d)`` batch whose rows pair with ``t``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize_scalar

from .errors import DimensionError, ScheduleError

I2SB = "i2sb"
NADB = "nadb"
KINDS = (I2SB, NADB)
BETA_SHAPES = ("triangular", "constant")
BETA_GRID_POINTS = 1000


def _beta_table(shape: str, total_variance: float, n: int = BETA_GRID_POINTS):
    tau = np.linspace(0.0, 1.0, n)
    if shape == "triangular":
        beta = np.minimum(tau, 1.0 - tau)
    elif shape == "constant":
        beta = np.ones_like(tau)
    else:
        raise ScheduleError(f"unknown beta shape {shape!r}; expected one of {BETA_SHAPES}")
    # Normalise so the trapezoid rule over this table gives exactly total_variance.
    area = np.trapezoid(beta, tau)
    return tau, beta * (total_variance / area)


@dataclass(frozen=True)
class ScheduleSpec:
    """Parameters of one bridge interpolant.

    ``alpha`` and ``k`` only matter for ``nadb``; the beta table only for
    ``i2sb``. An explicit ``beta_table`` of ``(time, beta)`` pairs overrides
    ``beta_shape`` / ``total_variance``.
    """

    kind: str
    alpha: float = 0.4
    k: float = 0.75
    beta_shape: str = "triangular"
    total_variance: float = 1.0
    t_min: float = 1e-4
    beta_table: tuple[tuple[float, float], ...] | None = None
    _tau: np.ndarray = field(init=False, repr=False, compare=False)
    _beta: np.ndarray = field(init=False, repr=False, compare=False)
    _cum: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ScheduleError(f"kind must be one of {KINDS}, got {self.kind!r}")
        if not (0.0 < self.alpha < 1.0):
            raise ScheduleError(f"alpha must lie strictly inside (0, 1), got {self.alpha}")
        if not (self.k > 0.0 and math.isfinite(self.k)):
            raise ScheduleError(f"k must be a positive finite number, got {self.k}")
        if not (0.0 <= self.t_min <= 0.01):
            raise ScheduleError(f"t_min must lie in [0, 0.01], got {self.t_min}")

        if self.beta_table is not None:
            table = np.asarray(self.beta_table, dtype=np.float64)
            if table.ndim != 2 or table.shape[1] != 2 or table.shape[0] < 2:
                raise ScheduleError("beta_table must be a sequence of (time, beta) pairs")
            tau, beta = table[:, 0].copy(), table[:, 1].copy()
        else:
            if not (self.total_variance >= 0.0 and math.isfinite(self.total_variance)):
                raise ScheduleError("total_variance must be finite and non-negative")
            tau, beta = _beta_table(self.beta_shape, self.total_variance)

        if np.any(np.diff(tau) <= 0.0) or tau[0] != 0.0 or tau[-1] != 1.0:
            raise ScheduleError("beta_table times must be strictly increasing from 0 to 1")
        if not np.all(np.isfinite(beta)) or np.any(beta < 0.0):
            raise ScheduleError("beta values must be finite and non-negative")
        cum = np.concatenate([[0.0], np.cumsum(0.5 * (beta[1:] + beta[:-1]) * np.diff(tau))])
        object.__setattr__(self, "_tau", tau)
        object.__setattr__(self, "_beta", beta)
        object.__setattr__(self, "_cum", cum)

    @property
    def sigma2_total(self) -> float:
        return float(self._cum[-1])

    @property
    def stage_threshold(self) -> float:
        """Smallest destination time for which the stage-1 transition is real."""
        return (1.0 - self.alpha) / (2.0 - self.alpha)

    def sigma2(self, t):
        """Integral of beta over ``[0, t]``, exact for the piecewise-linear beta."""
        t = _check_time(t)
        tau, beta, cum = self._tau, self._beta, self._cum
        i = np.clip(np.searchsorted(tau, t, side="right") - 1, 0, len(tau) - 2)
        h = tau[i + 1] - tau[i]
        u = t - tau[i]
        slope = (beta[i + 1] - beta[i]) / h
        out = cum[i] + beta[i] * u + 0.5 * slope * u * u
        # Pin the endpoints so boundary conditions hold bit-for-bit.
        out = np.where(t == 0.0, 0.0, np.where(t == 1.0, cum[-1], out))
        return out if out.ndim else float(out)

    def sigma_bar2(self, t):
        return self.sigma2_total - self.sigma2(t)

    def grid(self) -> np.ndarray:
        return self._tau.copy()


def _check_time(t, low: float = 0.0, high: float = 1.0):
    arr = np.asarray(t, dtype=np.float64)
    if not np.all(np.isfinite(arr)) or np.any(arr < low) or np.any(arr > high):
        raise ValueError(f"time must lie in [{low}, {high}], got {t!r}")
    return arr


def _out(x):
    return x if np.ndim(x) else float(x)


def _require(spec: ScheduleSpec, kind: str):
    if spec.kind != kind:
        raise ScheduleError(f"expected a {kind} schedule, got {spec.kind}")


def t_pow(t, alpha: float):
    """``t**alpha`` evaluated as ``exp(alpha log t)`` with ``0**alpha == 0``."""
    t = np.asarray(t, dtype=np.float64)
    safe = np.where(t > 0.0, t, 1.0)
    return _out(np.where(t > 0.0, np.exp(alpha * np.log(safe)), 0.0))


def i2sb_coefficients(spec: ScheduleSpec, t):
    """Return ``(w0, w1, noise)`` of the I2SB path at ``t``."""
    _require(spec, I2SB)
    t = _check_time(t)
    total = spec.sigma2_total
    if total <= 0.0:
        raise ScheduleError("degenerate schedule: sigma2_t + sigma_bar2_t == 0")
    s2 = np.asarray(spec.sigma2(t))
    sb2 = total - s2
    w0 = sb2 / total
    w1 = s2 / total
    noise = np.sqrt(np.maximum(s2 * sb2 / total, 0.0))
    return _out(w0), _out(w1), _out(noise)


def nadb_coefficients(spec: ScheduleSpec, t):
    """Return ``(1 - t^a, t^a, k t (1 - t))``."""
    _require(spec, NADB)
    t = _check_time(t)
    ta = np.asarray(t_pow(t, spec.alpha))
    return _out(1.0 - ta), _out(ta), _out(spec.k * t * (1.0 - t))


def input_noise_coefficient(spec: ScheduleSpec, t):
    if spec.kind == NADB:
        return nadb_coefficients(spec, t)[2]
    return i2sb_coefficients(spec, t)[2]


def target_noise_coefficient(spec: ScheduleSpec, t):
    """Coefficient of ``z`` inside the regression target.

    For ``nadb`` this is ``k t^(1-a) (1-t)``. For ``i2sb`` it is
    ``sigma_bar_t / sqrt(sigma2_total)``, which already equals its limit 1 at t=0.
    """
    t = _check_time(t)
    if spec.kind == NADB:
        return _out(spec.k * np.asarray(t_pow(t, 1.0 - spec.alpha)) * (1.0 - t))
    total = spec.sigma2_total
    if total <= 0.0:
        raise ScheduleError("degenerate schedule: sigma2_t + sigma_bar2_t == 0")
    sb2 = np.maximum(total - np.asarray(spec.sigma2(t)), 0.0)
    return _out(np.sqrt(sb2 / total))


def target_mean_coefficient(spec: ScheduleSpec, t):
    """Coefficient of ``x_far - x_0`` inside the regression target."""
    t = _check_time(t)
    if spec.kind == NADB:
        return _out(np.ones_like(t))
    total = spec.sigma2_total
    if total <= 0.0:
        raise ScheduleError("degenerate schedule: sigma2_t + sigma_bar2_t == 0")
    return _out(np.sqrt(np.asarray(spec.sigma2(t))) / total)


def target_scale(spec: ScheduleSpec, t):
    """Divisor turning the displacement ``x_t - x_0`` into the target."""
    t = _check_time(t)
    if spec.kind == NADB:
        return t_pow(t, spec.alpha)
    return _out(np.sqrt(np.asarray(spec.sigma2(t))))


@dataclass
class BridgeSample:
    t: np.ndarray | float
    x0: np.ndarray
    x1: np.ndarray
    xhat0: np.ndarray
    z: np.ndarray
    xt: np.ndarray
    yt: np.ndarray


def _column(t, x: np.ndarray) -> np.ndarray:
    t = np.asarray(t, dtype=np.float64)
    if t.ndim == 0:
        return t
    if x.ndim != 2 or t.shape != (x.shape[0],):
        raise DimensionError(f"times of shape {t.shape} do not pair with vectors of shape {x.shape}")
    return t[:, None]


def _same_shape(*arrays: np.ndarray):
    shapes = {a.shape for a in arrays}
    if len(shapes) != 1:
        raise DimensionError(f"vector shapes disagree: {sorted(shapes)}")


def make_bridge_sample(spec: ScheduleSpec, t, x0, x1, xhat0=None, z=None) -> BridgeSample:
    """Build ``(x_t, y_t)`` from caller-supplied endpoints and noise.

    No randomness is drawn here; ``z`` must be given (``None`` means zero
    noise). The same ``z`` enters both the input and the target. At ``t == 0``
    the target is its limit: ``xhat0 - x0`` for nadb, ``z`` for i2sb.
    """
    x0 = np.asarray(x0, dtype=np.float64)
    x1 = np.asarray(x1, dtype=np.float64)
    xhat0 = x1 if xhat0 is None else np.asarray(xhat0, dtype=np.float64)
    z = np.zeros_like(x0) if z is None else np.asarray(z, dtype=np.float64)
    _same_shape(x0, x1, xhat0, z)
    _check_time(t)
    tc = _column(t, x0)

    if spec.kind == NADB:
        w0, w1, g = (np.asarray(c) for c in nadb_coefficients(spec, t))
    else:
        w0, w1, g = (np.asarray(c) for c in i2sb_coefficients(spec, t))
    if tc.ndim:
        w0, w1, g = w0[:, None], w1[:, None], g[:, None]
    xt = w0 * x0 + w1 * xhat0 + g * z

    scale = np.asarray(target_scale(spec, t))
    if tc.ndim:
        scale = scale[:, None]
    limit = (xhat0 - x0) if spec.kind == NADB else z
    safe = np.where(scale > 0.0, scale, 1.0)
    yt = np.where(scale > 0.0, (xt - x0) / safe, limit)
    return BridgeSample(t=_out(np.asarray(t, dtype=np.float64)), x0=x0, x1=x1,
                        xhat0=xhat0, z=z, xt=xt, yt=yt)


def predict_x0(spec: ScheduleSpec, t, xt, eps):
    """Invert the target definition: ``x0 = x_t - scale(t) * eps``."""
    xt = np.asarray(xt, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    _same_shape(xt, eps)
    tt = _check_time(t)
    if np.any(tt <= 0.0):
        raise ValueError("predict_x0 needs t > 0")
    scale = np.asarray(target_scale(spec, t))
    if _column(t, xt).ndim:
        scale = scale[:, None]
    return xt - scale * eps


def calibrate_k(i2sb_spec: ScheduleSpec) -> float:
    """Scale ``k`` so the nadb noise peak ``k/4`` equals the I2SB noise peak."""
    _require(i2sb_spec, I2SB)
    if i2sb_spec.sigma2_total <= 0.0:
        raise ScheduleError("degenerate schedule: I2SB noise is identically zero")
    grid = i2sb_spec.grid()
    noise = np.asarray(i2sb_coefficients(i2sb_spec, grid)[2])
    j = int(np.argmax(noise))
    peak = float(noise[j])
    # Refine inside the bracketing cells; the grid rarely hits the peak exactly.
    lo, hi = grid[max(j - 1, 0)], grid[min(j + 1, len(grid) - 1)]
    if hi > lo:
        res = minimize_scalar(lambda s: -float(i2sb_coefficients(i2sb_spec, s)[2]),
                              bounds=(lo, hi), method="bounded", options={"xatol": 1e-12})
        peak = max(peak, -float(res.fun))
    if peak <= 0.0:
        raise ScheduleError("degenerate schedule: I2SB noise is identically zero")
    return 4.0 * peak
