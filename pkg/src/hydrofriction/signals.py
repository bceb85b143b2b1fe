"""Acquisition-chain preprocessing: causal moving averages, backward
differences and feature standardization.

Every filter here is causal (output ``k`` only sees inputs ``<= k``) so the
batch functions and :class:`StreamingPreprocessor` agree bit-for-bit.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import DegenerateFeature, InsufficientData, InvalidArgument, OrderingError, RateError

SAMPLE_DT = 0.005  # 200 Hz
DT_TOLERANCE = 1e-9
POSITION_WINDOW = 10
ACCEL_WINDOW = 30


@dataclass
class TimeSeries:
    """Uniformly sampled raw record: time, piston position, chamber pressures.

    ``f_true`` is only present for synthetic data.
    """

    t: np.ndarray
    x_p: np.ndarray
    p1: np.ndarray
    p2: np.ndarray
    f_true: Optional[np.ndarray] = None

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float)
        self.x_p = np.asarray(self.x_p, dtype=float)
        self.p1 = np.asarray(self.p1, dtype=float)
        self.p2 = np.asarray(self.p2, dtype=float)
        if self.f_true is not None:
            self.f_true = np.asarray(self.f_true, dtype=float)
        n = len(self.t)
        for name in ("x_p", "p1", "p2", "f_true"):
            arr = getattr(self, name)
            if arr is not None and len(arr) != n:
                raise InvalidArgument(f"column {name} has length {len(arr)}, expected {n}")

    def __len__(self):
        return len(self.t)

    @property
    def dt(self) -> float:
        return check_uniform(self.t)

    def slice(self, start: int, stop: int) -> "TimeSeries":
        f = None if self.f_true is None else self.f_true[start:stop]
        return TimeSeries(self.t[start:stop], self.x_p[start:stop], self.p1[start:stop],
                          self.p2[start:stop], f)


@dataclass
class Frames:
    """Filtered kinematic frames, one per raw sample (struct of arrays)."""

    t: np.ndarray
    x_p: np.ndarray
    v: np.ndarray
    a: np.ndarray
    p1: np.ndarray
    p2: np.ndarray

    def __len__(self):
        return len(self.t)

    @property
    def dt(self) -> float:
        return check_uniform(self.t)

    def slice(self, start: int, stop: int) -> "Frames":
        return Frames(*(getattr(self, k)[start:stop] for k in ("t", "x_p", "v", "a", "p1", "p2")))


def check_uniform(t: np.ndarray, tol: float = DT_TOLERANCE) -> float:
    """Return the sample step of ``t``; raise if it is not strictly increasing
    with a uniform step."""
    t = np.asarray(t, dtype=float)
    if len(t) < 2:
        raise InsufficientData("need at least two samples to determine the step")
    steps = np.diff(t)
    bad = np.nonzero(steps <= 0)[0]
    if bad.size:
        raise OrderingError(f"time not strictly increasing at sample {int(bad[0]) + 1}")
    dt = (t[-1] - t[0]) / (len(t) - 1)
    off = np.nonzero(np.abs(steps - dt) > tol)[0]
    if off.size:
        raise RateError(f"non-uniform sample step at sample {int(off[0]) + 1}")
    return float(dt)


def moving_average(series: Sequence[float], window: int) -> np.ndarray:
    """Causal trailing mean with a shrinking window during warm-up.

    Computed as the newest sample plus the mean deviation of the window from
    it, so constant input is reproduced exactly. Deviations are accumulated
    oldest-first, the same order a running buffer sums them in.
    """
    if window < 1:
        raise InvalidArgument(f"window must be >= 1, got {window}")
    x = np.asarray(series, dtype=float)
    n = len(x)
    if n == 0:
        raise InvalidArgument("series is empty")
    acc = np.zeros(n)
    for lag in range(min(window, n) - 1, -1, -1):
        acc[lag:] += x[: n - lag] - x[lag:]
    counts = np.minimum(np.arange(1, n + 1), window).astype(float)
    return x + acc / counts


def differentiate(series: Sequence[float], dt: float) -> np.ndarray:
    """Backward difference; the first value copies the second."""
    if not dt > 0:
        raise InvalidArgument(f"dt must be positive, got {dt}")
    x = np.asarray(series, dtype=float)
    if len(x) < 2:
        raise InsufficientData("differentiation needs at least two samples")
    out = np.empty_like(x)
    out[1:] = (x[1:] - x[:-1]) / dt
    out[0] = out[1]
    return out


def preprocess(raw: TimeSeries, position_window: int = POSITION_WINDOW,
               accel_window: int = ACCEL_WINDOW, dt: float = SAMPLE_DT) -> Frames:
    """Filter position and pressures, then differentiate position twice.

    MA(position_window) on x_p, p1, p2; v = diff(x_p); a = MA(accel_window) of
    diff(v). Differences are divided by the nominal step ``dt``; the record's
    own spacing must be uniform and agree with it.
    """
    n = len(raw)
    need = max(position_window, accel_window) + 1
    if n < need:
        raise InsufficientData(f"series has {n} samples, preprocessing needs at least {need}")
    measured = raw.dt
    if abs(measured - dt) > DT_TOLERANCE:
        raise RateError(f"sample step {measured!r} differs from the nominal {dt!r}")
    x = moving_average(raw.x_p, position_window)
    p1 = moving_average(raw.p1, position_window)
    p2 = moving_average(raw.p2, position_window)
    v = differentiate(x, dt)
    a = moving_average(differentiate(v, dt), accel_window)
    return Frames(raw.t.copy(), x, v, a, p1, p2)


class _RunningMean:
    __slots__ = ("buf",)

    def __init__(self, window: int):
        self.buf = deque(maxlen=window)

    def push(self, value: float) -> float:
        self.buf.append(value)
        s = 0.0
        for b in self.buf:
            s += b - value
        return value + s / len(self.buf)


class StreamingPreprocessor:
    """Sample-by-sample equivalent of :func:`preprocess`.

    ``push`` returns ``(x_p, v, a, p1, p2)`` for the sample, or ``None`` for the
    very first sample, whose velocity is back-filled once the second arrives.
    Memory is bounded by the filter windows.
    """

    def __init__(self, dt: float = SAMPLE_DT, position_window: int = POSITION_WINDOW,
                 accel_window: int = ACCEL_WINDOW, rate_tolerance: float = 0.01):
        if not dt > 0:
            raise InvalidArgument("dt must be positive")
        self.dt = dt
        self.rate_tolerance = rate_tolerance
        self._x = _RunningMean(position_window)
        self._p1 = _RunningMean(position_window)
        self._p2 = _RunningMean(position_window)
        self._a = _RunningMean(accel_window)
        self._t_prev: Optional[float] = None
        self._x_prev = 0.0
        self._v_prev = 0.0
        self.count = 0

    def push(self, t: float, x_p: float, p1: float, p2: float):
        if self._t_prev is not None:
            step = t - self._t_prev
            if step <= 0:
                raise OrderingError(f"sample at t={t!r} is not after t={self._t_prev!r}")
            if abs(step - self.dt) > self.rate_tolerance * self.dt:
                raise RateError(f"sample step {step!r} deviates from {self.dt!r} by more than "
                                f"{self.rate_tolerance:.0%}")
        self._t_prev = t
        xf = self._x.push(x_p)
        p1f = self._p1.push(p1)
        p2f = self._p2.push(p2)
        self.count += 1
        if self.count == 1:
            self._x_prev = xf
            return None
        v = (xf - self._x_prev) / self.dt
        if self.count == 2:
            # back-filled first velocity equals this one, so both accelerations are 0
            a0 = (v - v) / self.dt
            self._a.push(a0)
            a = self._a.push(a0)
        else:
            a = self._a.push((v - self._v_prev) / self.dt)
        self._x_prev = xf
        self._v_prev = v
        return xf, v, a, p1f, p2f


@dataclass
class StandardizationStats:
    mean: np.ndarray
    std: np.ndarray

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "StandardizationStats":
        return cls(np.asarray(d["mean"], dtype=float), np.asarray(d["std"], dtype=float))


def fit_standardization(features, names: Optional[Sequence[str]] = None) -> StandardizationStats:
    """Per-column mean and population standard deviation."""
    X = np.asarray(features, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.shape[0] < 2:
        raise InsufficientData("standardization needs at least two rows")
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    for j, s in enumerate(std):
        if not s > 0:
            raise DegenerateFeature(names[j] if names is not None else j)
    return StandardizationStats(mean, std)


def apply_standardization(features, stats: StandardizationStats) -> np.ndarray:
    X = np.asarray(features, dtype=float)
    return (X - stats.mean) / stats.std
