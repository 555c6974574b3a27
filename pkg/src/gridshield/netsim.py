"""Queueing-model network channels and attack-traffic generators.

Every measurement link is an M/M/1 queue polled once per ``poll_interval``
seconds.  For each poll window the simulator draws the realised packet count
``n ~ Poisson(lambda * T)`` and reports

* IAT -- the mean of ``max(n, 1)`` exponential inter-arrival gaps,
* TD  -- the M/M/1 sojourn time ``1 / (mu - n / T)`` at the realised rate,
* PC  -- the packet count ``n`` itself.

Attack traffic raises the arrival rate seen by the victim, either by a
constant factor or through long-range-dependent (FARIMA) or extreme-value
(GPD) rate series.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import signal

__all__ = [
    "QueueError",
    "QueueParams",
    "FarimaParams",
    "IgarchParams",
    "GpdParams",
    "AttackTrafficModel",
    "Channels",
    "utilization",
    "mean_iat",
    "mm1_sojourn",
    "expected_packet_count",
    "gen_normal_channels",
    "gen_attacked_channels",
    "channels_from_rates",
    "scale_channels",
    "farima_generate",
    "gpd_sample",
    "gpd_survival",
    "acf",
    "hurst_rs",
]


class QueueError(ValueError):
    """Raised for unstable or malformed queue parameters."""


@dataclass(frozen=True)
class QueueParams:
    lam: float
    mu: float
    poll_interval: float = 4.0
    td_cap: float | None = None

    def __post_init__(self):
        if not (0 < self.lam < self.mu):
            raise QueueError(f"unstable queue: need 0 < lambda < mu, got {self.lam}, {self.mu}")
        if self.poll_interval <= 0:
            raise QueueError("poll_interval must be positive")

    @property
    def cap(self) -> float:
        """TD reported for an overloaded victim (default ``100 / mu``)."""
        return 100.0 / self.mu if self.td_cap is None else self.td_cap


@dataclass(frozen=True)
class IgarchParams:
    """Integrated GARCH(p, q) conditional variance for the innovations.

    ``sigma_t^2 = omega + sum(arch_i * eps_{t-i}^2) + sum(garch_j * sigma_{t-j}^2)``
    with ``sum(arch) + sum(garch) == 1``.
    """

    omega: float
    arch: tuple[float, ...] = (0.1,)
    garch: tuple[float, ...] = (0.9,)

    def __post_init__(self):
        if self.omega <= 0:
            raise ValueError("omega must be positive")
        if any(a < 0 for a in self.arch + self.garch):
            raise ValueError("IGARCH coefficients must be non-negative")
        if not np.isclose(sum(self.arch) + sum(self.garch), 1.0, atol=1e-9):
            raise ValueError("IGARCH coefficients must sum to one")


@dataclass(frozen=True)
class FarimaParams:
    d_frac: float
    ar_coeffs: tuple[float, ...] = ()
    ma_coeffs: tuple[float, ...] = ()
    innovation_sigma: float = 1.0
    igarch: IgarchParams | None = None
    truncation: int = 1000

    def __post_init__(self):
        if not -0.5 < self.d_frac < 0.5:
            raise ValueError("d_frac must lie in (-0.5, 0.5)")
        if self.innovation_sigma <= 0:
            raise ValueError("innovation_sigma must be positive")
        if self.truncation < 1000:
            raise ValueError("truncation must be at least 1000 lags")
        if self.ar_coeffs:
            # roots of 1 - phi_1 z - ... - phi_p z^p
            poly = np.r_[-np.asarray(self.ar_coeffs)[::-1], 1.0]
            if np.any(np.abs(np.roots(poly)) <= 1.0):
                raise ValueError("AR polynomial is not stationary")

    @property
    def p(self) -> int:
        return len(self.ar_coeffs)

    @property
    def q(self) -> int:
        return len(self.ma_coeffs)

    @property
    def hurst(self) -> float:
        return self.d_frac + 0.5


@dataclass(frozen=True)
class GpdParams:
    xi: float
    sigma_scale: float
    threshold_u: float = 0.0

    def __post_init__(self):
        if self.sigma_scale <= 0:
            raise ValueError("sigma_scale must be positive")


@dataclass(frozen=True)
class AttackTrafficModel:
    kind: str = "rate_scale"
    severity: float = 2.0
    farima: FarimaParams | None = None
    gpd: GpdParams | None = None
    farima_scale: float = 0.5

    def __post_init__(self):
        if self.kind not in ("rate_scale", "farima", "gpd_extremes"):
            raise ValueError(f"unknown attack traffic kind {self.kind!r}")
        if self.severity < 1:
            raise ValueError("severity must be >= 1")
        if (self.kind == "farima") != (self.farima is not None):
            raise ValueError("farima params are required for, and only for, kind='farima'")
        if (self.kind == "gpd_extremes") != (self.gpd is not None):
            raise ValueError("gpd params are required for, and only for, kind='gpd_extremes'")


@dataclass
class Channels:
    """Per-window channel values; arrays share one shape."""

    iat: np.ndarray
    td: np.ndarray
    pc: np.ndarray
    overload: np.ndarray = field(repr=False)

    def __len__(self) -> int:
        return len(self.iat)


def utilization(params: QueueParams) -> float:
    return params.lam / params.mu


def mean_iat(lam: float) -> float:
    return 1.0 / lam


def mm1_sojourn(lam, mu):
    """Mean time in system ``1 / (mu - lambda)``; ``inf`` when ``lambda >= mu``."""
    lam = np.asarray(lam, dtype=float)
    with np.errstate(divide="ignore"):
        out = np.where(lam < mu, 1.0 / (mu - lam), np.inf)
    return out if out.ndim else float(out)


def expected_packet_count(lam: float, poll_interval: float = 4.0) -> float:
    return lam * poll_interval


def _sojourn_at_rate(rate: np.ndarray, mu: float, cap: float) -> tuple[np.ndarray, np.ndarray]:
    overload = rate >= mu
    td = np.full(rate.shape, cap)
    ok = ~overload
    td[ok] = np.minimum(1.0 / (mu - rate[ok]), cap)
    return td, overload


def channels_from_rates(
    rates: np.ndarray, params: QueueParams, rng: np.random.Generator
) -> Channels:
    """Draw one poll window per entry of ``rates`` (packets per second).

    Draw order: all packet counts, then all inter-arrival means.
    """
    rates = np.asarray(rates, dtype=float)
    T = params.poll_interval
    pc = rng.poisson(rates * T).astype(float)
    k = np.maximum(pc, 1.0)
    iat = rng.gamma(k, 1.0 / (k * rates))
    td, overload = _sojourn_at_rate(pc / T, params.mu, params.cap)
    return Channels(iat=iat, td=td, pc=pc, overload=overload)


def gen_normal_channels(
    params: QueueParams, samples: int | tuple[int, ...], seed=None
) -> Channels:
    """Channels of an un-attacked link; ``samples`` may be a shape."""
    rng = np.random.default_rng(seed)
    return channels_from_rates(np.full(samples, params.lam), params, rng)


def _attack_rates(
    params: QueueParams, model: AttackTrafficModel, samples, rng: np.random.Generator
) -> np.ndarray:
    shape = (samples,) if np.isscalar(samples) else tuple(samples)
    base = params.lam * model.severity
    if model.kind == "rate_scale":
        return np.full(shape, base)
    n = int(np.prod(shape))
    if model.kind == "farima":
        sub = int(rng.integers(2**63 - 1))
        x = farima_generate(model.farima, n, seed=sub)
        x = (x - x.mean()) / (x.std() or 1.0)
        rates = base * (1.0 + model.farima_scale * x)
        return np.maximum(rates, 0.1 * params.lam).reshape(shape)
    spikes = _gpd_excess(model.gpd, rng.random(n)) + model.gpd.threshold_u
    return (base + spikes).reshape(shape)


def gen_attacked_channels(
    params: QueueParams, model: AttackTrafficModel, samples, seed=None
) -> Channels:
    """Channels of a victim link whose arrival rate is raised by ``model``.

    Rates at or above ``mu`` are not an error: the window reports the TD cap
    and sets its ``overload`` flag.
    """
    rng = np.random.default_rng(seed)
    rates = _attack_rates(params, model, samples, rng)
    return channels_from_rates(rates, params, rng)


def scale_channels(
    iat: np.ndarray, pc: np.ndarray, severity, params: QueueParams
) -> Channels:
    """Re-express already drawn windows at ``severity`` times the arrival rate.

    The same underlying draws are reused, so ``severity == 1`` is an exact
    identity.
    """
    severity = np.asarray(severity, dtype=float)
    pc_att = pc * severity
    td, overload = _sojourn_at_rate(pc_att / params.poll_interval, params.mu, params.cap)
    return Channels(iat=iat / severity, td=td, pc=pc_att, overload=overload)


def _frac_weights(d: float, n: int) -> np.ndarray:
    """MA weights of ``(1 - B)^(-d)``: ``w_0 = 1, w_j = w_{j-1} (j - 1 + d) / j``."""
    j = np.arange(1, n)
    return np.r_[1.0, np.cumprod((j - 1 + d) / j)]


def _igarch_noise(params: IgarchParams, z: np.ndarray) -> np.ndarray:
    p, q = len(params.arch), len(params.garch)
    lag = max(p, q)
    n = z.size
    eps = np.zeros(n + lag)
    var = np.full(n + lag, params.omega)
    arch = np.asarray(params.arch)
    garch = np.asarray(params.garch)
    for t in range(lag, n + lag):
        v = params.omega
        v += arch @ eps[t - p:t][::-1] ** 2
        v += garch @ var[t - q:t][::-1]
        var[t] = v
        eps[t] = np.sqrt(v) * z[t - lag]
    return eps[lag:]


def farima_generate(params: FarimaParams, length: int, seed=None) -> np.ndarray:
    """Sample ``phi(B) (1 - B)^d X_t = psi(B) eps_t``.

    The fractional integration uses ``max(params.truncation, length)`` terms
    of the binomial expansion and the same number of burn-in samples.
    """
    if length <= 0:
        raise ValueError("length must be positive")
    rng = np.random.default_rng(seed)
    trunc = max(params.truncation, length)
    total = length + trunc
    z = rng.standard_normal(total)
    if params.igarch is not None:
        eps = params.innovation_sigma * _igarch_noise(params.igarch, z)
    else:
        eps = params.innovation_sigma * z
    arma = signal.lfilter(
        np.r_[1.0, params.ma_coeffs], np.r_[1.0, -np.asarray(params.ar_coeffs, dtype=float)], eps
    )
    if params.d_frac == 0.0:
        return arma[trunc:]
    x = signal.fftconvolve(arma, _frac_weights(params.d_frac, trunc))[:total]
    return x[trunc:]


def _gpd_excess(params: GpdParams, u: np.ndarray) -> np.ndarray:
    # inverse of the survival function evaluated at a uniform draw
    u = np.clip(u, np.finfo(float).tiny, 1.0)
    if params.xi == 0.0:
        return -params.sigma_scale * np.log(u)
    return params.sigma_scale / params.xi * (u ** (-params.xi) - 1.0)


def gpd_sample(params: GpdParams, n: int, seed=None) -> np.ndarray:
    """Exceedances ``threshold_u + Y`` with ``Y`` generalized-Pareto distributed."""
    rng = np.random.default_rng(seed)
    return params.threshold_u + _gpd_excess(params, rng.random(n))


def gpd_survival(params: GpdParams, x):
    """``P(X > x)`` for exceedances drawn by :func:`gpd_sample`."""
    y = np.asarray(x, dtype=float) - params.threshold_u
    xi, s = params.xi, params.sigma_scale
    if xi < 0 and np.any(y > -s / xi):
        raise ValueError(f"x beyond the upper end point {params.threshold_u - s / xi}")
    yp = np.maximum(y, 0.0)
    if xi == 0.0:
        out = np.exp(-yp / s)
    else:
        out = (1.0 + xi * yp / s) ** (-1.0 / xi)
    out = np.where(y < 0, 1.0, out)
    return out if out.ndim else float(out)


def acf(x: np.ndarray, max_lag: int) -> np.ndarray:
    """Sample autocorrelation at lags ``0..max_lag`` (biased estimator)."""
    x = np.asarray(x, dtype=float) - np.mean(x)
    n = x.size
    f = np.fft.rfft(x, 2 * n)
    r = np.fft.irfft(f * np.conj(f))[: max_lag + 1]
    return r / r[0]


def hurst_rs(x: np.ndarray, min_window: int = 8, windows: Sequence[int] | None = None) -> float:
    """Classical rescaled-range estimate of the Hurst exponent.

    Slope of ``log E[R/S]`` against ``log n`` over dyadic window sizes from
    ``min_window`` to ``len(x) // 4``, averaging non-overlapping blocks.
    """
    x = np.asarray(x, dtype=float)
    if windows is None:
        windows = []
        n = min_window
        while n <= x.size // 4:
            windows.append(n)
            n *= 2
    if len(windows) < 2:
        raise ValueError("series too short for a rescaled-range fit")
    rs = []
    for n in windows:
        blocks = x[: x.size // n * n].reshape(-1, n)
        dev = blocks - blocks.mean(axis=1, keepdims=True)
        walk = np.cumsum(dev, axis=1)
        r = walk.max(axis=1) - walk.min(axis=1)
        s = blocks.std(axis=1)
        ok = s > 0
        rs.append(np.mean(r[ok] / s[ok]))
    slope, _ = np.polyfit(np.log(windows), np.log(rs), 1)
    return float(slope)
