"""Endpoint-underfitting probes and distribution checks.

``endpoint_probe`` measures, per time, how well a trained regressor matches
its target in magnitude (per-sample component variance of prediction vs
target) and direction (per-sample cosine similarity). ``noise_curves``
tabulates the input and target noise coefficients of both bridges.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import rng as rngmod
from .errors import DimensionError
from .interpolant import (ScheduleSpec, input_noise_coefficient, make_bridge_sample,
                          target_mean_coefficient, target_noise_coefficient)
from .tasks import PairedDataset, PairedSamples

ORACLE = "oracle"
ZERO_NORM = 1e-12
PSNR_SENTINEL = math.inf


def default_probe_grid(t_low: float = 1e-3, n: int = 10) -> np.ndarray:
    """Geometric grid dense near both ends of ``(0, 1)``."""
    low = np.geomspace(t_low, 0.5, n)
    high = 1.0 - np.geomspace(t_low, 0.5, n)[:-1]
    return np.concatenate([low, high[::-1]])


@dataclass
class ProbeRow:
    t: float
    pred_variance: float
    target_variance: float
    cosine_similarity: float
    n_samples: int

    @property
    def variance_ratio(self) -> float:
        if self.target_variance <= 0.0:
            return math.nan
        return self.pred_variance / self.target_variance


@dataclass
class DiagnosticsReport:
    rows: list[ProbeRow] = field(default_factory=list)
    w2_rho0_rho1: float = math.nan
    w2_rho0_rhohat0: float = math.nan
    mse: float = math.nan
    psnr_toy: float = math.nan

    def at(self, t: float) -> ProbeRow:
        return min(self.rows, key=lambda r: abs(r.t - t))


def cosine_rows(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Row-wise cosine similarity; 0 where either row is numerically zero."""
    na = np.linalg.norm(a, axis=-1)
    nb = np.linalg.norm(b, axis=-1)
    ok = (na >= ZERO_NORM) & (nb >= ZERO_NORM)
    dot = np.sum(a * b, axis=-1)
    cos = np.where(ok, dot / np.where(ok, na * nb, 1.0), 0.0)
    return np.clip(cos, -1.0, 1.0)


def _spread(x: np.ndarray) -> float:
    # Per-sample variance over components, averaged over samples. A single
    # component has no spread within a sample, so 1-D data uses the batch.
    if x.shape[-1] == 1:
        return float(np.var(x))
    return float(np.mean(np.var(x, axis=-1)))


def compare(pred: np.ndarray, target: np.ndarray, t: float) -> ProbeRow:
    pred = np.atleast_2d(pred)
    target = np.atleast_2d(target)
    return ProbeRow(
        t=float(t),
        pred_variance=_spread(pred),
        target_variance=_spread(target),
        cosine_similarity=float(np.mean(cosine_rows(pred, target))),
        n_samples=len(pred),
    )


def endpoint_probe(eps_fn, spec: ScheduleSpec, dataset: PairedDataset, t_grid=None,
                   samples_per_t: int = 256, seed: int = 0, mean_fn=None) -> DiagnosticsReport:
    """Compare ``eps_fn(x_t, t)`` with the coupled target at each probe time.

    Pass ``eps_fn=ORACLE`` to probe the analytic target itself. Probe point
    ``i`` draws from its own stream, so grids can be extended without
    changing earlier rows.
    """
    t_grid = default_probe_grid() if t_grid is None else np.asarray(t_grid, dtype=np.float64)
    report = DiagnosticsReport()
    for i, t in enumerate(t_grid):
        gen = rngmod.stream(seed, rngmod.PROBE_BASE + i)
        pair = dataset.sample(samples_per_t, gen)
        z = gen.standard_normal(pair.x0.shape)
        xfar = pair.x1 if mean_fn is None else mean_fn(pair.x1)
        sample = make_bridge_sample(spec, float(t), pair.x0, pair.x1, xfar, z)
        pred = sample.yt if eps_fn is ORACLE else np.asarray(eps_fn(sample.xt, float(t)))
        report.rows.append(compare(pred, sample.yt, t))
    return report


NOISE_COLUMNS = ("t", "i2sb_input", "i2sb_target", "i2sb_target_mean", "nadb_input", "nadb_target")


def noise_curves(spec_i2sb: ScheduleSpec, spec_nadb: ScheduleSpec, t_grid=None) -> list[tuple]:
    """Rows of input/target noise coefficients for both bridges (columns ``NOISE_COLUMNS``)."""
    t = np.linspace(0.0, 1.0, 1001) if t_grid is None else np.asarray(t_grid, dtype=np.float64)
    cols = [
        t,
        np.asarray(input_noise_coefficient(spec_i2sb, t)),
        np.asarray(target_noise_coefficient(spec_i2sb, t)),
        np.asarray(target_mean_coefficient(spec_i2sb, t)),
        np.asarray(input_noise_coefficient(spec_nadb, t)),
        np.asarray(target_noise_coefficient(spec_nadb, t)),
    ]
    return [tuple(float(c[j]) for c in cols) for j in range(len(t))]


def w2_exact_1d(samples_a, samples_b) -> float:
    """Empirical 2-Wasserstein distance between equal-size 1-D samples."""
    a = np.sort(np.ravel(samples_a))
    b = np.sort(np.ravel(samples_b))
    if a.shape != b.shape:
        raise DimensionError("w2_exact_1d needs equal sample counts")
    return float(np.sqrt(np.mean((a - b) ** 2)))


def _w2_se(a, b) -> float:
    # Delta-method standard error of sqrt(mean(d^2)) over the sorted coupling.
    d2 = (np.sort(np.ravel(a)) - np.sort(np.ravel(b))) ** 2
    w = math.sqrt(float(np.mean(d2)))
    if w == 0.0:
        return 0.0
    return float(np.std(d2) / math.sqrt(len(d2)) / (2.0 * w))


@dataclass
class W2CheckResult:
    w2_before: float
    w2_after: float
    se: float
    holds: bool
    mse_before: float
    mse_after: float
    premise_holds: bool


def theorem1_check(mean_fn, data: PairedSamples) -> W2CheckResult:
    """Check ``W2(rho0, M#rho1) <= W2(rho0, rho1)`` on 1-D paired samples.

    Also checks the premise ``E|x0 - M(x1)|^2 <= E|x0 - x1|^2`` on the same
    pairs. ``holds`` allows three combined standard errors of slack.
    """
    x0 = np.asarray(data.x0, dtype=np.float64)
    x1 = np.asarray(data.x1, dtype=np.float64)
    if x0.ndim == 2 and x0.shape[1] != 1:
        raise DimensionError("theorem1_check works on 1-D samples")
    xhat = np.asarray(mean_fn(x1), dtype=np.float64)
    before, after = w2_exact_1d(x0, x1), w2_exact_1d(x0, xhat)
    se = math.hypot(_w2_se(x0, x1), _w2_se(x0, xhat))
    mse_before = float(np.mean((x0 - x1) ** 2))
    mse_after = float(np.mean((x0 - xhat) ** 2))
    return W2CheckResult(before, after, se, after <= before + 3.0 * se,
                          mse_before, mse_after, mse_after <= mse_before)


def restoration_metrics(reference, output) -> tuple[float, float]:
    """Return ``(mse, psnr)``; PSNR uses values clipped to [0, 1]."""
    ref = np.asarray(reference, dtype=np.float64)
    out = np.asarray(output, dtype=np.float64)
    if ref.shape != out.shape:
        raise DimensionError(f"shape mismatch {ref.shape} vs {out.shape}")
    mse = float(np.mean((out - ref) ** 2))
    clipped = float(np.mean((np.clip(out, 0.0, 1.0) - np.clip(ref, 0.0, 1.0)) ** 2))
    psnr = PSNR_SENTINEL if clipped < 1e-12 else 10.0 * math.log10(1.0 / clipped)
    return mse, psnr
