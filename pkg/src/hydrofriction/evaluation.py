"""Error metrics, residual diagnostics, parity fits and latency timing."""

from __future__ import annotations

import math
import platform
import time
from dataclasses import asdict, dataclass, field
from typing import Callable, Dict, Mapping, Optional, Sequence

import numpy as np

from .errors import InsufficientData, InvalidArgument, UndefinedBase
from .lugre import LuGreParams, evaluate_series

REPORT_VERSION = 1
MIN_REPEATS = 1000
WARMUP_CALLS = 100
TEST_IDS = (1, 2, 3, 4)


def _pair(actual, estimated):
    y = np.asarray(actual, dtype=float).ravel()
    yh = np.asarray(estimated, dtype=float).ravel()
    if len(y) != len(yh):
        raise InvalidArgument(f"length mismatch: {len(y)} actual vs {len(yh)} estimated")
    if len(y) == 0:
        raise InvalidArgument("empty sequences")
    return y, yh


def mae(actual, estimated) -> float:
    y, yh = _pair(actual, estimated)
    return float(np.mean(np.abs(y - yh)))


def mae_percent(actual, estimated) -> float:
    """100 * MAE / mean |actual|."""
    y, yh = _pair(actual, estimated)
    base = float(np.mean(np.abs(y)))
    if base == 0:
        raise UndefinedBase("mean |actual| is zero; MAE% undefined")
    return 100.0 * float(np.mean(np.abs(y - yh))) / base


def skewness(x) -> float:
    """Adjusted Fisher-Pearson sample skewness; 0 for a constant sample."""
    x = np.asarray(x, dtype=float)
    n = len(x)
    if n < 3:
        raise InsufficientData("skewness needs at least 3 values")
    d = x - x.mean()
    m2 = float(np.mean(d * d))
    if m2 == 0:
        return 0.0
    m3 = float(np.mean(d * d * d))
    return math.sqrt(n * (n - 1)) / (n - 2) * m3 / m2 ** 1.5


@dataclass
class ResidualStats:
    residuals: np.ndarray
    median: float
    q1: float
    q3: float
    skewness: float
    bin_edges: np.ndarray
    counts: np.ndarray

    def summary(self) -> dict:
        return {"n": int(len(self.residuals)), "median": self.median, "q1": self.q1,
                "q3": self.q3, "skewness": self.skewness,
                "mean": float(np.mean(self.residuals))}

    def histogram_csv(self) -> str:
        lines = ["left,right,count"]
        for lo, hi, c in zip(self.bin_edges[:-1], self.bin_edges[1:], self.counts):
            lines.append(f"{float(lo)!r},{float(hi)!r},{int(c)}")
        return "\n".join(lines) + "\n"


def residual_stats(actual, estimated, bins: int = 30) -> ResidualStats:
    """Residuals ``e = actual - estimated`` with linear-interpolation quartiles
    and an equal-width histogram over [min, max]."""
    y, yh = _pair(actual, estimated)
    if len(y) < 4:
        raise InsufficientData("residual statistics need at least 4 values")
    e = y - yh
    q1, med, q3 = (float(q) for q in np.quantile(e, [0.25, 0.5, 0.75], method="linear"))
    counts, edges = np.histogram(e, bins=bins, range=(float(e.min()), float(e.max())))
    return ResidualStats(e, med, q1, q3, skewness(e), edges, counts)


@dataclass
class ParityFit:
    actual: np.ndarray
    estimated: np.ndarray
    slope: float
    intercept: float

    def to_csv(self) -> str:
        lines = ["actual,estimated"]
        lines += [f"{a!r},{b!r}" for a, b in zip(self.actual.tolist(), self.estimated.tolist())]
        return "\n".join(lines) + "\n"


def parity_data(actual, estimated) -> ParityFit:
    """Ordinary least squares of estimated on actual."""
    y, yh = _pair(actual, estimated)
    if len(y) < 2:
        raise InvalidArgument("parity fit needs at least 2 points")
    dy = y - y.mean()
    sxx = float(np.dot(dy, dy))
    if sxx == 0:
        raise InvalidArgument("actual values have zero variance")
    slope = float(np.dot(dy, yh - yh.mean())) / sxx
    return ParityFit(y, yh, slope, float(yh.mean() - slope * y.mean()))


@dataclass
class LatencyStats:
    mean: float
    p50: float
    p99: float
    max: float
    repeats: int
    timed_calls: int

    def to_dict(self) -> dict:
        return asdict(self)


def latency_benchmark(fn: Callable, samples: Sequence, repeats: int = MIN_REPEATS,
                      warmup: int = WARMUP_CALLS) -> LatencyStats:
    """Time ``fn(samples[i])`` for ``i < repeats`` on the monotonic
    high-resolution clock; the first ``warmup`` calls are discarded.

    Samples are fed in order (streaming estimators need increasing time).
    Run single-threaded on an otherwise idle machine.
    """
    if repeats < MIN_REPEATS:
        raise InvalidArgument(f"repeats must be >= {MIN_REPEATS}")
    if len(samples) < repeats:
        raise InvalidArgument(f"need {repeats} samples, got {len(samples)}")
    if not 0 <= warmup < repeats:
        raise InvalidArgument("warm-up count must be below repeats")
    clock = time.perf_counter_ns
    times = np.empty(repeats)
    for i in range(repeats):
        s = samples[i]
        t0 = clock()
        fn(s)
        times[i] = clock() - t0
    timed = times[warmup:] * 1e-9
    return LatencyStats(float(timed.mean()), float(np.percentile(timed, 50)),
                        float(np.percentile(timed, 99)), float(timed.max()), repeats, len(timed))


def machine_info() -> dict:
    return {"machine": platform.machine(), "processor": platform.processor(),
            "python": platform.python_version(), "numpy": np.__version__,
            "system": platform.system()}


@dataclass
class TestResult:
    __test__ = False  # not a pytest class

    test_id: int
    hybrid_mae_percent: float
    lugre_mae_percent: float
    hybrid_mae: float
    lugre_mae: float
    n_rows: int
    friction_range: float
    hybrid_residuals: dict = field(default_factory=dict)
    lugre_residuals: dict = field(default_factory=dict)
    parity: dict = field(default_factory=dict)


@dataclass
class ComparisonReport:
    tests: Dict[int, TestResult]
    latency: Dict[str, dict]
    provenance: dict
    report_version: int = REPORT_VERSION

    def to_dict(self, include_latency: bool = True) -> dict:
        d = {"report_version": self.report_version,
             "tests": {str(k): asdict(v) for k, v in sorted(self.tests.items())},
             "provenance": self.provenance}
        if include_latency:
            d["latency"] = self.latency
        return d


def holdout_rows(ds, ends: np.ndarray, start: int) -> np.ndarray:
    """Positions in ``ends`` that lie in the held-out part and are labelled."""
    return np.nonzero((ends >= start) & ds.mask[ends])[0]


def compare_models(datasets: Mapping[int, object], hybrid_model, lugre: LuGreParams,
                   holdout_start: Mapping[int, int], provenance: Optional[dict] = None,
                   latency_repeats: int = 0, bins: int = 30,
                   raw_series=None) -> ComparisonReport:
    """Per-test MAE% of the hybrid and LuGre estimates on held-out rows.

    ``holdout_start[i]`` is the first held-out sample of test ``i``. Both
    models are scored on the same rows: labelled and past the hybrid warm-up.
    With ``latency_repeats`` > 0 both streaming paths are timed on test 1,
    fed from ``raw_series`` (the unfiltered recording) when given.
    """
    from .hybrid import estimate_series

    for tid in TEST_IDS:
        if tid not in datasets:
            raise InvalidArgument(f"missing test {tid}")
    extra = sorted(set(datasets) - set(TEST_IDS))
    if extra:
        raise InvalidArgument(f"unexpected test ids {extra}")
    results = {}
    for tid in TEST_IDS:
        ds = datasets[tid]
        ends, est = estimate_series(hybrid_model, ds.features)
        sel = holdout_rows(ds, ends, holdout_start[tid])
        if len(sel) < 4:
            raise InsufficientData(f"test {tid}: fewer than 4 held-out rows")
        rows = ends[sel]
        actual = ds.f[rows]
        h_est = est[sel]
        l_est = evaluate_series(ds.frames.v, hybrid_model.dt, lugre)[rows]
        hr = residual_stats(actual, h_est, bins)
        lr = residual_stats(actual, l_est, bins)
        pf = parity_data(actual, h_est)
        results[tid] = TestResult(
            tid, mae_percent(actual, h_est), mae_percent(actual, l_est), mae(actual, h_est),
            mae(actual, l_est), int(len(rows)), float(np.ptp(actual)), hr.summary(),
            lr.summary(), {"slope": pf.slope, "intercept": pf.intercept})
    latency = {}
    if latency_repeats:
        series = datasets[1].frames if raw_series is None else raw_series
        raw = list(zip(series.t.tolist(), series.x_p.tolist(), series.p1.tolist(),
                       series.p2.tolist()))
        latency = benchmark_streaming(hybrid_model, lugre, raw, latency_repeats)
    prov = dict(provenance or {})
    return ComparisonReport(results, latency, prov)


def benchmark_streaming(hybrid_model, lugre: LuGreParams, raw_samples, repeats: int) -> dict:
    """Per-call latency of the streaming hybrid and the per-step LuGre update.

    ``raw_samples`` are ``(t, x_p, p1, p2)`` tuples; the hybrid stream is
    primed through its warm-up before timing starts.
    """
    from .hybrid import StreamingEstimator
    from .lugre import StreamingLuGre

    warm = hybrid_model.warmup + 1
    if len(raw_samples) < warm + repeats:
        raise InvalidArgument(f"need {warm + repeats} samples for the benchmark")
    stream = StreamingEstimator(hybrid_model)
    for s in raw_samples[:warm]:
        stream.push(*s)
    h_stats = latency_benchmark(lambda s: stream.push(*s), raw_samples[warm:warm + repeats],
                                repeats)
    # LuGre driven by the same velocity signal the hybrid sees
    dt = hybrid_model.dt
    x = np.array([s[1] for s in raw_samples[:repeats + 1]])
    v = np.diff(x) / dt
    lg = StreamingLuGre(lugre, dt)
    l_stats = latency_benchmark(lg.update, v.tolist(), repeats)
    return {"hybrid": h_stats.to_dict(), "lugre": l_stats.to_dict(),
            "ratio_mean": h_stats.mean / l_stats.mean, "machine": machine_info()}
