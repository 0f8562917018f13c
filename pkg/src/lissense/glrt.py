"""Statistical route-anomaly detector for per-antenna received powers.

Conditioned on the channel, each antenna power w = |h + n|^2 is Rician in
power: f(w | g) = exp(-(w + g) / s2) * I0(2 * sqrt(g * w) / s2) / s2 with
g = |h|^2 and s2 the complex noise variance. Training estimates g per
antenna at every point of the correct route via the moment estimator
(sample mean minus s2) and precomputes a rejection threshold from the
limiting quadratic form of the test statistic; evaluation compares
-2 log(likelihood ratio) against the threshold at every trained point and
declares a position anomalous only when all points reject.
"""

from __future__ import annotations

import math
import struct
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import integrate
from scipy.interpolate import PchipInterpolator
from scipy.stats import norm

_SERIES_CUTOFF = 200.0
_MAX_SERIES_TERMS = 600
_FISHER_BRANCH_CUTOFF = 1e3
_FISHER_FLOOR = 1e-8  # relative to the noise variance; removable 1/g singularity


def _log_i0_series(x: np.ndarray) -> np.ndarray:
    # I0(x) = sum_k (x^2/4)^k / (k!)^2; all terms positive, no cancellation.
    q = x * x / 4.0
    term = q.copy()
    total = q.copy()
    for k in range(2, _MAX_SERIES_TERMS):
        term = term * q / (k * k)
        total += term
        if np.all(term <= 1e-17 * np.maximum(total, 1.0)):
            break
    return np.log1p(total)


def _log_i0_asymptotic(x: np.ndarray) -> np.ndarray:
    inv = 1.0 / x
    corr = inv * (0.125 + inv * (9.0 / 128.0 + inv * (225.0 / 3072.0)))
    return x - 0.5 * np.log(2.0 * math.pi * x) + np.log1p(corr)


def log_bessel_i0(x):
    """log I0(x) for x >= 0, elementwise, overflow-safe up to x ~ 1e306.

    Power series below 200, asymptotic expansion above; relative error of
    the returned log stays below 1e-10 over the whole range.
    """
    arr = np.asarray(x, dtype=float)
    if np.any(arr < 0):
        raise ValueError("log_bessel_i0 requires x >= 0")
    out = np.zeros_like(arr)
    small = arr < _SERIES_CUTOFF
    if np.any(small):
        out[small] = _log_i0_series(arr[small])
    if np.any(~small):
        out[~small] = _log_i0_asymptotic(arr[~small])
    return float(out) if np.isscalar(x) or np.ndim(x) == 0 else out


def _log_i1_series(x: np.ndarray) -> np.ndarray:
    # I1(x) = (x/2) * sum_k (x^2/4)^k / (k! (k+1)!)
    q = x * x / 4.0
    term = q / 2.0
    total = term.copy()
    for k in range(2, _MAX_SERIES_TERMS):
        term = term * q / (k * (k + 1))
        total += term
        if np.all(term <= 1e-17 * np.maximum(total, 1.0)):
            break
    with np.errstate(divide="ignore"):
        return np.where(x > 0, np.log(x / 2.0) + np.log1p(total), -np.inf)


def _log_i1_asymptotic(x: np.ndarray) -> np.ndarray:
    inv = 1.0 / x
    corr = -inv * (0.375 + inv * (15.0 / 128.0 + inv * (105.0 / 1024.0)))
    return x - 0.5 * np.log(2.0 * math.pi * x) + np.log1p(corr)


def log_bessel_i1(x):
    """log I1(x) for x >= 0 (I1(0) = 0 maps to -inf)."""
    arr = np.asarray(x, dtype=float)
    if np.any(arr < 0):
        raise ValueError("log_bessel_i1 requires x >= 0")
    out = np.zeros_like(arr)
    small = arr < _SERIES_CUTOFF
    if np.any(small):
        out[small] = _log_i1_series(arr[small])
    if np.any(~small):
        out[~small] = _log_i1_asymptotic(arr[~small])
    return float(out) if np.isscalar(x) or np.ndim(x) == 0 else out


def estimate_channel_power(frames: np.ndarray, noise_var: float) -> np.ndarray:
    """Moment estimate of per-antenna channel power from stacked frames.

    Per-element sample mean minus the noise variance, clamped at zero
    because channel power cannot be negative. The pre-clamp estimator is
    unbiased with variance noise_var * (noise_var + 2 g) / n_frames.
    """
    frames = np.atleast_2d(np.asarray(frames, dtype=float))
    return np.maximum(frames.mean(axis=0) - noise_var, 0.0)


def log_likelihood_ratio(
    trained_power: np.ndarray,
    estimated_power: np.ndarray,
    frames: np.ndarray,
    noise_var: float,
) -> float:
    """Log ratio of the trained-point likelihood to the estimated one.

    Identical trained and estimated powers cancel term by term, so the
    returned value is exactly 0.0 in that case. The decision rule compares
    -2 times this value against the trained threshold.
    """
    if noise_var <= 0:
        raise ValueError("noise variance must be positive")
    g0 = np.asarray(trained_power, dtype=float)
    g1 = np.asarray(estimated_power, dtype=float)
    frames = np.atleast_2d(np.asarray(frames, dtype=float))
    if g0.shape != g1.shape or frames.shape[1] != g0.shape[0]:
        raise ValueError("trained power, estimated power and frames disagree on antenna count")
    n_frames = frames.shape[0]
    null_term = float(np.sum(log_bessel_i0(2.0 * np.sqrt(g0 * frames) / noise_var)))
    alt_term = float(np.sum(log_bessel_i0(2.0 * np.sqrt(g1 * frames) / noise_var)))
    linear = n_frames * float(np.sum((g1 - g0) / noise_var))
    return null_term + linear - alt_term


# ---------------------------------------------------------------------------
# Fisher information of the Rician power density


def _fisher_unit(g_over_s2: float, quad_tol: float = 1e-10) -> float:
    """Fisher information at noise variance 1; scale by 1/s2^2 for general s2.

    Below the branch cutoff this integrates w * exp(-w - g) * I1^2 / I0 with
    amplitude-type Bessel arguments 2 * sqrt(g * w) in the log domain, then
    subtracts 1. Above the cutoff that subtraction cancels catastrophically
    (the result decays like 1 / (2 g)), so the integrand switches to the
    squared score against the power density, which is a perfect square.
    """
    gt = max(g_over_s2, _FISHER_FLOOR)
    sq = math.sqrt(gt)
    if gt <= _FISHER_BRANCH_CUTOFF:

        def integrand(w: float) -> float:
            if w <= 0.0:
                return 0.0
            u = 2.0 * math.sqrt(gt * w)
            log_ratio = 2.0 * log_bessel_i1(u) - log_bessel_i0(u)
            if log_ratio == -math.inf:
                return 0.0
            return math.exp(math.log(w) - w - gt + log_ratio)

        w_up = (sq + 13.0) ** 2  # tail beyond is < 1e-12 of the integral
        with warnings.catch_warnings():
            # near the branch cutoff the trailing "- 1" cancels most of the
            # integral and quad flags roundoff; cross-branch agreement stays
            # below 1e-7 there (pinned by tests), so the warning is noise
            warnings.simplefilter("ignore", integrate.IntegrationWarning)
            value, _ = integrate.quad(
                integrand, 0.0, w_up, epsabs=0.0, epsrel=quad_tol, limit=300,
                points=[max(1.0, gt)],
            )
        result = value / gt - 1.0
    else:

        def integrand(v: float) -> float:
            if v <= 0.0:
                return 0.0
            u = 2.0 * v * sq
            ratio = math.exp(log_bessel_i1(u) - log_bessel_i0(u))
            score = ratio * v / sq - 1.0
            log_pdf = math.log(2.0 * v) - v * v - gt + log_bessel_i0(u)
            return score * score * math.exp(log_pdf)

        lo = max(0.0, sq - 13.0)
        with warnings.catch_warnings():
            # at extreme g/s2 the squared score is ~1e-9 of the density peak
            # and quad flags roundoff; the value still tracks the high-SNR
            # asymptote to better than 1e-6 (pinned by tests)
            warnings.simplefilter("ignore", integrate.IntegrationWarning)
            value, _ = integrate.quad(
                integrand, lo, sq + 13.0, epsabs=0.0, epsrel=quad_tol, limit=300,
                points=[sq],
            )
        result = value
    if not math.isfinite(result):
        raise ArithmeticError(
            f"Fisher quadrature returned {result} at g/s2 = {g_over_s2}"
        )
    return result


def fisher_info(channel_power: float, noise_var: float) -> float:
    """Fisher information of one antenna's power density with respect to g.

    Adaptive quadrature with relative accuracy well below 1e-6; channel
    powers under 1e-8 * noise_var are floored there (the integrand has a
    removable 1/g singularity and the information is continuous at 0).
    """
    if channel_power < 0:
        raise ValueError("channel power cannot be negative")
    if noise_var <= 0:
        raise ValueError("noise variance must be positive")
    return _fisher_unit(channel_power / noise_var) / noise_var**2


class FisherTable:
    """Precomputed Fisher information on a log grid for bulk evaluation.

    Training evaluates J at every antenna of every route point; doing exact
    quadrature each time is wasteful because J(g, s2) = J(g / s2, 1) / s2^2.
    The table interpolates the unit-noise curve with PCHIP in log-log space
    (relative error below 1e-3 at 25 nodes per decade) and falls back to the
    exact 1 / (2 g) tail scaling outside the grid.
    """

    def __init__(self, log10_lo: float = -9.0, log10_hi: float = 9.0, per_decade: int = 20):
        self.log10_lo = float(log10_lo)
        self.log10_hi = float(log10_hi)
        n = int(round((log10_hi - log10_lo) * per_decade)) + 1
        grid = np.linspace(log10_lo, log10_hi, n)
        values = np.array([_fisher_unit(10.0**t) for t in grid])
        self._interp = PchipInterpolator(grid, np.log10(values))
        self._lo_value = values[0]
        self._hi_value = values[-1]

    def unit(self, g_over_s2: np.ndarray) -> np.ndarray:
        gt = np.maximum(np.asarray(g_over_s2, dtype=float), _FISHER_FLOOR)
        t = np.log10(gt)
        out = np.empty_like(gt)
        low = t <= self.log10_lo
        high = t >= self.log10_hi
        mid = ~(low | high)
        out[low] = self._lo_value
        out[high] = self._hi_value * 10.0 ** (self.log10_hi - t[high])
        if np.any(mid):
            out[mid] = 10.0 ** self._interp(t[mid])
        return out

    def __call__(self, channel_power: np.ndarray, noise_var: float) -> np.ndarray:
        return self.unit(np.asarray(channel_power, dtype=float) / noise_var) / noise_var**2


def worst_case_training_error(
    trained_power: np.ndarray,
    noise_var: float,
    n_train: int,
    alpha0: float,
) -> np.ndarray:
    """Gaussian quantile bounding the training estimation error per antenna.

    The bound is the (1 - alpha0/2) quantile of a zero-mean normal with the
    moment-estimator variance (noise_var / n_train) * (noise_var + 2 g),
    using the trained estimate as plug-in for g.
    """
    if not (0.0 < alpha0 <= 1.0):
        raise ValueError("alpha0 must lie in (0, 1]")
    g0 = np.asarray(trained_power, dtype=float)
    std = np.sqrt(noise_var * (noise_var + 2.0 * g0) / n_train)
    return float(norm.ppf(1.0 - alpha0 / 2.0)) * std


def detection_threshold(
    trained_power: np.ndarray,
    error_bound: np.ndarray,
    fisher_diag: np.ndarray,
    noise_var: float,
    n_eval: int,
    alpha: float = 0.05,
    n_mc: int = 100_000,
    seed: int | tuple = 0,
) -> float:
    """Seeded Monte-Carlo (1 - alpha) quantile of the limiting quadratic form.

    D = sum_i n_eval * J_i * (eps_i - bound_i)^2 with eps_i drawn from the
    evaluation-phase estimator error distribution. Same seed, same value.
    """
    if not (0.0 < alpha < 1.0):
        raise ValueError("alpha must lie in (0, 1)")
    if n_mc < 10_000:
        raise ValueError("need at least 1e4 Monte-Carlo draws")
    g0 = np.asarray(trained_power, dtype=float)
    bound = np.broadcast_to(np.asarray(error_bound, dtype=float), g0.shape)
    fisher_diag = np.asarray(fisher_diag, dtype=float)
    std = np.sqrt(noise_var * (noise_var + 2.0 * g0) / n_eval)
    rng = np.random.default_rng(seed)
    m = g0.shape[0]
    chunk = max(1, min(n_mc, 4_000_000 // max(m, 1)))
    stats = np.empty(n_mc)
    done = 0
    while done < n_mc:
        size = min(chunk, n_mc - done)
        eps = rng.standard_normal((size, m)) * std
        stats[done : done + size] = (n_eval * fisher_diag * (eps - bound) ** 2).sum(axis=1)
        done += size
    return float(np.quantile(stats, 1.0 - alpha))


# ---------------------------------------------------------------------------
# route model


@dataclass(frozen=True)
class PointModel:
    """Trained statistics for one correct-route point."""

    point_index: int
    trained_power: np.ndarray
    error_bound: np.ndarray
    fisher_diag: np.ndarray
    threshold: float
    noise_var: float
    alpha: float
    alpha0: float
    n_train: int
    n_eval: int

    def __post_init__(self):
        for name in ("trained_power", "error_bound", "fisher_diag"):
            arr = np.asarray(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if np.any(self.trained_power < 0) or np.any(self.fisher_diag < 0):
            raise ValueError("trained powers and Fisher entries must be nonnegative")
        if not math.isfinite(self.threshold):
            raise ValueError("threshold must be finite")

    @property
    def num_antennas(self) -> int:
        return self.trained_power.shape[0]


@dataclass(frozen=True)
class RouteModel:
    """One PointModel per correct-route point."""

    points: tuple[PointModel, ...]

    def __post_init__(self):
        if len(self.points) == 0:
            raise ValueError("route model needs at least one point")
        m = self.points[0].num_antennas
        s2 = self.points[0].noise_var
        for p in self.points:
            if p.num_antennas != m or p.noise_var != s2:
                raise ValueError("route points disagree on antenna count or noise variance")
        object.__setattr__(self, "points", tuple(self.points))

    @property
    def num_antennas(self) -> int:
        return self.points[0].num_antennas

    @property
    def noise_var(self) -> float:
        return self.points[0].noise_var

    @property
    def n_eval(self) -> int:
        return self.points[0].n_eval


@dataclass(frozen=True)
class PointEvaluation:
    anomalous: bool
    statistics: np.ndarray
    thresholds: np.ndarray
    estimated_power: np.ndarray

    @property
    def rejected(self) -> np.ndarray:
        return self.statistics > self.thresholds


def train_route_model(
    point_frames: Sequence[np.ndarray],
    noise_var: float,
    *,
    point_indices: Sequence[int] | None = None,
    alpha: float = 0.05,
    alpha0: float = 0.05,
    n_eval: int = 10,
    n_mc: int = 100_000,
    seed: int = 0,
    fisher: FisherTable | None = None,
) -> RouteModel:
    """Train one PointModel per correct-route point from stacked frames.

    Each entry of point_frames is an (n_train, M) array of received powers
    for one point. Passing a FisherTable replaces the per-antenna exact
    quadrature with the interpolated curve (same quantity, bulk rate).
    """
    if len(point_frames) == 0:
        raise ValueError("training requires at least one correct point")
    if point_indices is None:
        point_indices = list(range(len(point_frames)))
    models = []
    for idx, frames in zip(point_indices, point_frames):
        frames = np.atleast_2d(np.asarray(frames, dtype=float))
        n_train = frames.shape[0]
        g0 = estimate_channel_power(frames, noise_var)
        bound = worst_case_training_error(g0, noise_var, n_train, alpha0)
        if fisher is not None:
            j_diag = fisher(g0, noise_var)
        else:
            j_diag = np.array([fisher_info(g, noise_var) for g in g0])
        thr = detection_threshold(
            g0, bound, j_diag, noise_var, n_eval,
            alpha=alpha, n_mc=n_mc, seed=(seed, int(idx)),
        )
        models.append(
            PointModel(
                point_index=int(idx),
                trained_power=g0,
                error_bound=bound,
                fisher_diag=j_diag,
                threshold=thr,
                noise_var=noise_var,
                alpha=alpha,
                alpha0=alpha0,
                n_train=n_train,
                n_eval=n_eval,
            )
        )
    return RouteModel(points=tuple(models))


def evaluate_point(model: RouteModel, frames: np.ndarray) -> PointEvaluation:
    """Test frames from an unknown position against every trained point.

    The position is declared anomalous only when the statistic exceeds the
    threshold at every trained point; matching any single point keeps it
    on route.
    """
    frames = np.atleast_2d(np.asarray(frames, dtype=float))
    if frames.shape[1] != model.num_antennas:
        raise ValueError(
            f"frames have {frames.shape[1]} antennas, model expects {model.num_antennas}"
        )
    if frames.shape[0] != model.n_eval:
        raise ValueError(
            f"got {frames.shape[0]} evaluation frames, model was trained for {model.n_eval}"
        )
    estimated = estimate_channel_power(frames, model.noise_var)
    stats = np.empty(len(model.points))
    thresholds = np.empty(len(model.points))
    for i, point in enumerate(model.points):
        stats[i] = -2.0 * log_likelihood_ratio(
            point.trained_power, estimated, frames, model.noise_var
        )
        thresholds[i] = point.threshold
    return PointEvaluation(
        anomalous=bool(np.all(stats > thresholds)),
        statistics=stats,
        thresholds=thresholds,
        estimated_power=estimated,
    )


# ---------------------------------------------------------------------------
# model persistence

_MAGIC = b"LISGLRT\x01"


def save_route_model(model: RouteModel, path: str) -> None:
    """Versioned flat binary: header, config, then per-point arrays."""
    first = model.points[0]
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<II", len(model.points), model.num_antennas))
        fh.write(struct.pack("<3d", first.noise_var, first.alpha, first.alpha0))
        fh.write(struct.pack("<II", first.n_train, first.n_eval))
        for p in model.points:
            fh.write(struct.pack("<Id", p.point_index, p.threshold))
            fh.write(p.trained_power.astype("<f8").tobytes())
            fh.write(p.error_bound.astype("<f8").tobytes())
            fh.write(p.fisher_diag.astype("<f8").tobytes())


def load_route_model(path: str) -> RouteModel:
    with open(path, "rb") as fh:
        if fh.read(8) != _MAGIC:
            raise ValueError(f"{path} is not a route-model file")
        n_points, m = struct.unpack("<II", fh.read(8))
        noise_var, alpha, alpha0 = struct.unpack("<3d", fh.read(24))
        n_train, n_eval = struct.unpack("<II", fh.read(8))
        points = []
        for _ in range(n_points):
            idx, thr = struct.unpack("<Id", fh.read(12))
            arrays = [
                np.frombuffer(fh.read(8 * m), dtype="<f8").copy() for _ in range(3)
            ]
            points.append(
                PointModel(
                    point_index=idx,
                    trained_power=arrays[0],
                    error_bound=arrays[1],
                    fisher_diag=arrays[2],
                    threshold=thr,
                    noise_var=noise_var,
                    alpha=alpha,
                    alpha0=alpha0,
                    n_train=n_train,
                    n_eval=n_eval,
                )
            )
    return RouteModel(points=tuple(points))
