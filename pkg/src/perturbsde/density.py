"""Monte Carlo estimation of the terminal law, with a closed-form check.

The pipeline is ensemble -> kde -> diagnostics.  Kernel estimates use the
Gaussian kernel; the default bandwidth is the normal-reference rule
``1.06 s N^{-1/5}``.  Estimating density *derivatives* well needs more
smoothing than estimating the density itself, so the bandwidth-ladder
diagnostic is calibrated around the slower-shrinking rule
``1.06 s N^{-1/9}`` (at the density-optimal bandwidth the second
derivative of the estimate is noise-dominated even for a clean Gaussian
at sample sizes around 10^5, and no stability verdict is possible).

In the driftless constant-``sigma`` case the terminal law is known in
closed form (:func:`oracle_driftless`), which turns the whole pipeline
into a measurable quantity: the L1 gap between the kernel estimate and
the oracle.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DegenerateDiffusion, EmptySample, GridMismatch
from .integrate import simulate_terminal
from .model import GridSpec

__all__ = [
    "DensityEstimate",
    "LadderRung",
    "SmoothnessReport",
    "ensemble",
    "oracle_driftless",
    "bandwidth_rule",
    "derivative_bandwidth_rule",
    "kde",
    "smoothness_diagnostic",
    "l1_distance",
    "DEFAULT_GRID_POINTS",
    "GRID_HALFWIDTH_STDS",
    "D1_THRESHOLD",
    "D2_THRESHOLD",
    "CALIBRATED_MIN_SAMPLES",
]

DEFAULT_GRID_POINTS = 512
GRID_HALFWIDTH_STDS = 6.0
_KDE_CHUNK = 8192
_SQRT_2PI = math.sqrt(2.0 * math.pi)

# Ladder verdict thresholds for the relative L2 discrepancy of derivative
# estimates between adjacent rungs on the central window, calibrated on
# N ~ 1e5..2e5 samples at the derivative bandwidth rule: clean Gaussian
# samples stay below ~0.19 (d1) / ~0.39 (d2) while a 10% point-mass
# contamination sits above ~0.45 (d1) / ~0.85 (d2).  Below
# CALIBRATED_MIN_SAMPLES the Gaussian baseline itself crosses the d1
# threshold (measured ~0.25 at N=2e4), so the report flags the verdict.
D1_THRESHOLD = 0.25
D2_THRESHOLD = 0.50
CALIBRATED_MIN_SAMPLES = 50_000


def ensemble(spec, grid: GridSpec, n_paths: int, seed: int) -> np.ndarray:
    """Terminal values of ``n_paths`` simulated paths.

    Reproducible from ``seed`` alone; ``n_paths = 0`` yields an empty
    sample (estimation on it fails downstream with :class:`EmptySample`).
    """
    if n_paths == 0:
        return np.empty(0)
    return simulate_terminal(spec, grid, n_paths, seed).x_final


def oracle_driftless(x0: float, sigma_const: float, alpha: float, t: float,
                     z):
    """Exact terminal density for zero drift and constant diffusion.

    The process is then ``X_t = c + sigma (B_t + beta S_t)`` with
    ``c = x0/(1-alpha)``, ``beta = alpha/(1-alpha)`` and ``S`` the running
    maximum of ``B`` (for negative ``sigma`` replace ``B`` by ``-B``,
    which has the same law).  Integrating the classical joint density

        f(b, s) = sqrt(2/(pi t^3)) (2s - b) exp(-(2s - b)^2 / (2t)),
        s >= max(b, 0),

    over the line ``b + beta s = w`` with ``w = (z - c)/|sigma|`` after the
    substitution ``u = (2 + beta) s - w`` leaves ``u e^{-u^2/(2t)}`` times
    a constant, which integrates in closed form:

        p(w) = sqrt(2/(pi t)) / (2 + beta) * exp(-u_lo^2 / (2t)),
        u_lo = (1 - alpha) w  if w >= 0   (support constraint s >= w (1-alpha)),
        u_lo = -w             if w < 0    (only s >= 0 binds).

    Total mass is 1 because the two half-line Gaussian integrals sum to
    ``1 + 1/(1-alpha) = 2 + beta``.  At ``alpha = 0`` this collapses to the
    ``N(x0, sigma^2 t)`` density.  The two branches meet with equal value
    and slope at ``z = c`` but different curvature, so the density is C^1
    and not C^2 there; the ladder diagnostic can resolve that for large
    ``alpha``.
    """
    if not (alpha < 1.0):
        raise ConfigError(f"alpha must be < 1, got {alpha!r}")
    if not (t > 0.0 and math.isfinite(t)):
        raise ConfigError(f"t must be positive and finite, got {t!r}")
    if sigma_const == 0.0:
        raise DegenerateDiffusion(
            "sigma = 0 gives a point mass, not a density")
    sig = abs(float(sigma_const))
    c = float(x0) / (1.0 - alpha)
    beta = alpha / (1.0 - alpha)
    z_arr = np.asarray(z, float)
    w = (z_arr - c) / sig
    u_lo = np.where(w >= 0.0, (1.0 - alpha) * w, -w)
    p = (math.sqrt(2.0 / (math.pi * t)) / (2.0 + beta)
         * np.exp(-u_lo * u_lo / (2.0 * t)) / sig)
    return float(p) if z_arr.ndim == 0 else p


def bandwidth_rule(sample: np.ndarray) -> float:
    """Normal-reference bandwidth ``1.06 s N^{-1/5}``."""
    n = sample.size
    if n < 2:
        raise EmptySample("bandwidth rule needs at least 2 samples")
    return 1.06 * float(np.std(sample, ddof=1)) * n ** (-0.2)


def derivative_bandwidth_rule(sample: np.ndarray) -> float:
    """Wider rule ``1.06 s N^{-1/9}`` for derivative-ladder estimates."""
    n = sample.size
    if n < 2:
        raise EmptySample("bandwidth rule needs at least 2 samples")
    return 1.06 * float(np.std(sample, ddof=1)) * n ** (-1.0 / 9.0)


@dataclass(frozen=True)
class LadderRung:
    """Kernel estimate of the density and its first two derivatives at
    one bandwidth."""

    bandwidth: float
    pdf: np.ndarray
    d1: np.ndarray
    d2: np.ndarray

    def __post_init__(self) -> None:
        for a in (self.pdf, self.d1, self.d2):
            a.flags.writeable = False


@dataclass(frozen=True)
class DensityEstimate:
    """Kernel density estimate with its bandwidth ladder.

    ``pdf`` is the estimate at ``bandwidth``; ``ladder`` holds rungs at
    half, one and two times that bandwidth (empty when ladder evaluation
    was disabled).
    """

    grid: np.ndarray
    pdf: np.ndarray
    bandwidth: float
    n_samples: int
    sample_mean: float
    sample_std: float
    ladder: tuple[LadderRung, ...]

    def __post_init__(self) -> None:
        self.grid.flags.writeable = False
        self.pdf.flags.writeable = False

    def normalization(self) -> float:
        return float(np.trapezoid(self.pdf, self.grid))


def _kernel_sums(sample: np.ndarray, zs: np.ndarray, h: float
                 ) -> LadderRung:
    n = sample.size
    pdf = np.zeros_like(zs)
    d1 = np.zeros_like(zs)
    d2 = np.zeros_like(zs)
    for i in range(0, n, _KDE_CHUNK):
        u = (zs[:, None] - sample[None, i:i + _KDE_CHUNK]) / h
        phi = np.exp(-0.5 * u * u)
        pdf += phi.sum(axis=1)
        u *= phi
        d1 += u.sum(axis=1)          # sum of u phi(u)
        u *= (zs[:, None] - sample[None, i:i + _KDE_CHUNK]) / h
        d2 += u.sum(axis=1)          # sum of u^2 phi(u)
    d2 -= pdf                        # sum of (u^2 - 1) phi(u)
    norm = n * h * _SQRT_2PI
    return LadderRung(bandwidth=h,
                      pdf=pdf / norm,
                      d1=-d1 / (norm * h),
                      d2=d2 / (norm * h * h))


def kde(sample, bandwidth: float | None = None,
        eval_grid: np.ndarray | None = None,
        ladder: bool = True,
        n_grid: int = DEFAULT_GRID_POINTS) -> DensityEstimate:
    """Gaussian-kernel density estimate.

    ``bandwidth=None`` applies :func:`bandwidth_rule`.  The default grid
    spans the sample mean plus or minus six sample standard deviations,
    wide enough that the estimate integrates to 1 within a couple of
    percent.  With ``ladder`` the first two derivatives are also
    estimated at half, one and two times the bandwidth, the input
    :func:`smoothness_diagnostic` consumes.
    """
    sample = np.ascontiguousarray(np.asarray(sample, float).ravel())
    if sample.size < 2:
        raise EmptySample(
            f"kernel estimation needs at least 2 samples, got {sample.size}")
    if not np.all(np.isfinite(sample)):
        raise EmptySample("sample contains non-finite values")
    mean = float(np.mean(sample))
    std = float(np.std(sample, ddof=1))
    if bandwidth is None:
        bandwidth = bandwidth_rule(sample)
        if bandwidth <= 0.0:
            raise ConfigError(
                "bandwidth rule degenerates on a zero-spread sample; "
                "pass an explicit bandwidth")
    bandwidth = float(bandwidth)
    if not (bandwidth > 0.0 and math.isfinite(bandwidth)):
        raise ConfigError(f"bandwidth must be positive, got {bandwidth!r}")
    if eval_grid is None:
        half = GRID_HALFWIDTH_STDS * (std if std > 0.0 else bandwidth)
        eval_grid = np.linspace(mean - half, mean + half, n_grid)
    zs = np.ascontiguousarray(np.asarray(eval_grid, float))
    if zs.ndim != 1 or zs.size < 2:
        raise ConfigError("eval_grid must be a 1-D array of >= 2 points")

    rungs: tuple[LadderRung, ...]
    if ladder:
        rungs = tuple(_kernel_sums(sample, zs, h)
                      for h in (0.5 * bandwidth, bandwidth, 2.0 * bandwidth))
        base = rungs[1]
    else:
        rungs = ()
        base = _kernel_sums(sample, zs, bandwidth)
    return DensityEstimate(grid=zs, pdf=base.pdf, bandwidth=bandwidth,
                           n_samples=int(sample.size), sample_mean=mean,
                           sample_std=std, ladder=rungs)


@dataclass(frozen=True)
class SmoothnessReport:
    """Bandwidth-ladder stability verdict.

    A stability heuristic, not a proof: it measures how much the
    derivative estimates move when the bandwidth halves or doubles,
    normalized so that 1.0 sits at the configured threshold.  ``pairs``
    holds rows ``(h_low, h_high, d1_discrepancy, d2_discrepancy)``.
    """

    verdict: str
    score: float
    d1_score: float
    d2_score: float
    d1_threshold: float
    d2_threshold: float
    window: tuple[float, float]
    pairs: tuple[tuple[float, float, float, float], ...]
    n_samples: int = 0
    note: str = ("bandwidth-ladder stability heuristic; "
                 "not a proof of smoothness")

    @property
    def passed(self) -> bool:
        return self.verdict == "pass"


def _rel_l2(a: np.ndarray, b: np.ndarray) -> float:
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    denom = max(na, nb)
    if denom == 0.0:
        return 0.0
    return float(np.linalg.norm(a - b)) / denom


def smoothness_diagnostic(estimate: DensityEstimate,
                          d1_threshold: float = D1_THRESHOLD,
                          d2_threshold: float = D2_THRESHOLD
                          ) -> SmoothnessReport:
    """Stability of derivative estimates across the bandwidth ladder.

    For each adjacent rung pair the relative L2 discrepancy of the first
    and second derivative estimates is taken over the central window
    (sample mean plus or minus two standard deviations, where there is
    enough mass for the estimates to mean anything).  The verdict fails
    when any pair exceeds its channel threshold.  Defaults are calibrated
    for ladders built at :func:`derivative_bandwidth_rule`; at the
    density-optimal bandwidth the second-derivative channel is noise even
    for smooth targets and the verdict would be meaningless.
    """
    if len(estimate.ladder) < 3:
        raise ConfigError(
            "smoothness diagnostic needs a ladder with >= 3 bandwidths "
            "(build the estimate with ladder=True)")
    lo = estimate.sample_mean - 2.0 * estimate.sample_std
    hi = estimate.sample_mean + 2.0 * estimate.sample_std
    win = (estimate.grid >= lo) & (estimate.grid <= hi)
    if not np.any(win):
        raise ConfigError("evaluation grid misses the central window")

    pairs = []
    d1_worst = 0.0
    d2_worst = 0.0
    rungs = sorted(estimate.ladder, key=lambda r: r.bandwidth)
    for a, b in zip(rungs[:-1], rungs[1:]):
        disc1 = _rel_l2(a.d1[win], b.d1[win])
        disc2 = _rel_l2(a.d2[win], b.d2[win])
        pairs.append((a.bandwidth, b.bandwidth, disc1, disc2))
        d1_worst = max(d1_worst, disc1)
        d2_worst = max(d2_worst, disc2)

    d1_score = d1_worst / d1_threshold
    d2_score = d2_worst / d2_threshold
    score = max(d1_score, d2_score)
    note = SmoothnessReport.note
    if estimate.n_samples < CALIBRATED_MIN_SAMPLES:
        note += (f"; below the calibrated sample size "
                 f"({estimate.n_samples} < {CALIBRATED_MIN_SAMPLES}), "
                 f"ladder noise may dominate the verdict")
    return SmoothnessReport(
        verdict="pass" if score <= 1.0 else "fail",
        score=score, d1_score=d1_score, d2_score=d2_score,
        d1_threshold=d1_threshold, d2_threshold=d2_threshold,
        window=(float(lo), float(hi)), pairs=tuple(pairs),
        n_samples=estimate.n_samples, note=note)


def l1_distance(estimate: DensityEstimate, oracle_values) -> float:
    """Trapezoidal ``int |p_hat - p| dz`` over the estimate's grid."""
    p = np.asarray(oracle_values, float)
    if p.shape != estimate.pdf.shape:
        raise GridMismatch(
            f"oracle values have shape {p.shape}, "
            f"estimate has {estimate.pdf.shape}")
    return float(np.trapezoid(np.abs(estimate.pdf - p), estimate.grid))
