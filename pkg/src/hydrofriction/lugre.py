"""LuGre dynamic friction model and its two-stage no-load identification.

Model (canonical form)::

    g(v)  = f_c + (f_s - f_c) * exp(-|v / v_s|**delta)
    dz/dt = v - sigma0 * |v| * z / g(v)
    F     = sigma0 * z + sigma1 * dz/dt + sigma2 * v

Forces are signed: positive friction opposes motion in the +x direction.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, replace
from typing import Optional

import numpy as np
from scipy import optimize

from .errors import IdentificationError, InvalidArgument, NumericFailure

DEFAULT_SUBSTEPS = 10
SETTLE_DISCARD_S = 1.0


@dataclass(frozen=True)
class LuGreParams:
    sigma0: float  # bristle stiffness, N/m
    sigma1: float  # bristle damping, N s/m
    sigma2: float  # viscous coefficient, N s/m
    f_c: float  # Coulomb level, N
    f_s: float  # static level, N
    v_s: float  # Stribeck velocity, m/s
    delta: float = 2.0  # Stribeck exponent

    def __post_init__(self):
        vals = asdict(self)
        if not all(math.isfinite(x) for x in vals.values()):
            raise InvalidArgument(f"non-finite LuGre parameter in {vals}")
        if not (self.sigma0 > 0 and self.v_s > 0):
            raise InvalidArgument("sigma0 and v_s must be positive")
        if self.sigma1 < 0 or self.sigma2 < 0:
            raise InvalidArgument("sigma1 and sigma2 must be non-negative")
        if not (self.f_s >= self.f_c > 0):
            raise InvalidArgument(f"need f_s >= f_c > 0, got f_c={self.f_c}, f_s={self.f_s}")
        if not self.delta > 0:
            raise InvalidArgument("Stribeck exponent must be positive")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "LuGreParams":
        return cls(**{k: float(d[k]) for k in ("sigma0", "sigma1", "sigma2", "f_c", "f_s", "v_s")},
                   delta=float(d.get("delta", 2.0)))


def stribeck(v: float, p: LuGreParams) -> float:
    return p.f_c + (p.f_s - p.f_c) * math.exp(-abs(v / p.v_s) ** p.delta)


def steady_state_friction(v, p: LuGreParams):
    """Friction once dz/dt = 0: sign(v) g(v) + sigma2 v. Accepts arrays."""
    v = np.asarray(v, dtype=float)
    g = p.f_c + (p.f_s - p.f_c) * np.exp(-np.abs(v / p.v_s) ** p.delta)
    return np.sign(v) * g + p.sigma2 * v


def step(z: float, v: float, dt: float, p: LuGreParams, substeps: int = DEFAULT_SUBSTEPS,
         scale: float = 1.0):
    """Advance the bristle state over ``dt`` with velocity held at ``v``.

    ``scale`` multiplies the Stribeck curve (used by the plant to make the
    friction level pressure dependent). Returns ``(z_new, friction)``.
    """
    if not dt > 0:
        raise InvalidArgument("dt must be positive")
    g = scale * stribeck(v, p)
    rate = p.sigma0 * abs(v) / g
    h = dt / substeps
    for _ in range(substeps):
        k1 = v - rate * z
        k2 = v - rate * (z + 0.5 * h * k1)
        k3 = v - rate * (z + 0.5 * h * k2)
        k4 = v - rate * (z + h * k3)
        z = z + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    zdot = v - rate * z
    f = p.sigma0 * z + p.sigma1 * zdot + p.sigma2 * v
    if not math.isfinite(f):
        raise NumericFailure(f"LuGre step produced non-finite friction (v={v!r}, z={z!r})")
    return z, f


def evaluate_series(velocity, dt: float, p: LuGreParams, z0: float = 0.0,
                    substeps: int = DEFAULT_SUBSTEPS) -> np.ndarray:
    """Integrate the bristle state along a measured velocity sequence.

    ``velocity`` may be an array or anything with a ``v`` attribute
    (e.g. :class:`~hydrofriction.signals.Frames`). Sample ``k`` holds the
    friction after integrating through ``v[k]`` for one step.
    """
    v_arr = np.asarray(getattr(velocity, "v", velocity), dtype=float)
    if not dt > 0:
        raise InvalidArgument("dt must be positive")
    s0, s1, s2 = p.sigma0, p.sigma1, p.sigma2
    fc, dfs, vs, delta = p.f_c, p.f_s - p.f_c, p.v_s, p.delta
    h = dt / substeps
    exp = math.exp
    out = np.empty(len(v_arr))
    z = z0
    for k, v in enumerate(v_arr.tolist()):
        av = abs(v)
        rate = s0 * av / (fc + dfs * exp(-(av / vs) ** delta))
        for _ in range(substeps):
            k1 = v - rate * z
            k2 = v - rate * (z + 0.5 * h * k1)
            k3 = v - rate * (z + 0.5 * h * k2)
            k4 = v - rate * (z + h * k3)
            z = z + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        out[k] = s0 * z + s1 * (v - rate * z) + s2 * v
    if not np.all(np.isfinite(out)):
        bad = int(np.nonzero(~np.isfinite(out))[0][0])
        raise NumericFailure(f"LuGre series diverged at sample {bad}")
    return out


class StreamingLuGre:
    """One LuGre step per incoming velocity sample."""

    def __init__(self, p: LuGreParams, dt: float, substeps: int = DEFAULT_SUBSTEPS):
        self.p = p
        self.dt = dt
        self.substeps = substeps
        self.z = 0.0

    def update(self, v: float) -> float:
        self.z, f = step(self.z, v, self.dt, self.p, self.substeps)
        return f


@dataclass
class IdentificationReport:
    initial_mae: float
    final_mae: float
    static_rms: float
    n_bins: int
    evaluations: int
    budget_exhausted: bool

    def to_dict(self) -> dict:
        return asdict(self)


def _speed_bins(speed, magnitude, bin_ratio, min_count):
    lo, hi = float(speed.min()), float(speed.max())
    n_edges = max(2, int(math.ceil(math.log(hi / lo) / math.log(bin_ratio))) + 1) if hi > lo else 2
    edges = np.geomspace(lo, hi, n_edges) if hi > lo else np.array([lo, hi])
    idx = np.clip(np.searchsorted(edges, speed, side="right") - 1, 0, len(edges) - 2)
    s_mean, m_mean, counts = [], [], []
    for b in range(len(edges) - 1):
        sel = idx == b
        c = int(sel.sum())
        if c >= min_count:
            s_mean.append(speed[sel].mean())
            m_mean.append(magnitude[sel].mean())
            counts.append(c)
    return np.array(s_mean), np.array(m_mean), np.array(counts)


def identify(velocity, acceleration, friction, mask, dt: float, init: LuGreParams,
             budget: int = 200, discard_s: float = SETTLE_DISCARD_S, bin_ratio: float = 1.25,
             min_bin_count: int = 10, min_bins: int = 5, max_accel: Optional[float] = None,
             substeps: int = DEFAULT_SUBSTEPS):
    """Two-stage identification from no-load data.

    Stage 1 fits (f_c, f_s, v_s, sigma2) to binned steady-state friction
    magnitude against speed by bounded least squares; only quasi-steady rows
    (|a| <= ``max_accel``, default the median |a|) are binned. Stage 2 fits
    (sigma0, sigma1) with a Nelder-Mead simplex on the MAE between the
    simulated series and the labels.

    ``mask`` marks usable (sliding) rows. Returns ``(params, report)``; when
    the simplex runs out of ``budget`` evaluations the best point found is
    returned and ``report.budget_exhausted`` is set.
    """
    v = np.asarray(velocity, dtype=float)
    a = np.asarray(acceleration, dtype=float)
    f = np.asarray(friction, dtype=float)
    use = np.asarray(mask, dtype=bool).copy()
    use[: int(round(discard_s / dt))] = False
    if budget < 1:
        raise InvalidArgument("budget must be >= 1")
    if use.sum() == 0:
        raise IdentificationError("no usable rows after the settling discard")

    accel_cap = float(np.median(np.abs(a[use]))) if max_accel is None else max_accel
    steady = use & (np.abs(a) <= accel_cap) & (v != 0)
    speed = np.abs(v[steady])
    magnitude = f[steady] * np.sign(v[steady])
    if speed.size == 0:
        raise IdentificationError("no quasi-steady sliding rows")
    s_b, m_b, counts = _speed_bins(speed, magnitude, bin_ratio, min_bin_count)
    if len(s_b) < min_bins:
        raise IdentificationError(f"insufficient speed coverage: {len(s_b)} populated bins, "
                                  f"need {min_bins}")

    def static_residual(theta):
        fc, dfs, vs, s2 = theta
        g = fc + dfs * np.exp(-(s_b / vs) ** init.delta)
        return (g + s2 * s_b - m_b) * np.sqrt(counts / counts.sum())

    theta0 = np.array([init.f_c, init.f_s - init.f_c, init.v_s, init.sigma2])
    lower = np.array([1e-6, 0.0, 1e-6, 0.0])
    theta0 = np.maximum(theta0, lower + 1e-9)
    fit = optimize.least_squares(static_residual, theta0,
                                 bounds=(lower, np.full(4, np.inf)),
                                 x_scale=np.maximum(np.abs(theta0), 1e-3))
    fc, dfs, vs, s2 = (float(x) for x in fit.x)
    static = replace(init, f_c=fc, f_s=fc + dfs, v_s=vs, sigma2=s2)
    static_rms = float(np.sqrt(np.mean(static_residual(fit.x) ** 2 * counts.sum() / counts)))

    def series_mae(params):
        est = evaluate_series(v, dt, params, substeps=substeps)
        return float(np.mean(np.abs(f[use] - est[use])))

    def decode(x):
        return replace(static, sigma0=float(math.exp(x[0])), sigma1=max(0.0, math.expm1(x[1])))

    def objective(x):
        try:
            return series_mae(decode(x))
        except (NumericFailure, OverflowError, InvalidArgument):
            return math.inf

    x0 = np.array([math.log(init.sigma0), math.log1p(init.sigma1)])
    res = optimize.minimize(objective, x0, method="Nelder-Mead",
                            options={"maxfev": budget, "xatol": 1e-4, "fatol": 1e-8})
    best = decode(res.x)
    final_mae = float(res.fun)
    initial_mae = series_mae(init)
    if not final_mae <= initial_mae:
        best, final_mae = init, initial_mae
    exhausted = (not res.success) and res.nfev >= budget
    report = IdentificationReport(initial_mae, final_mae, static_rms, len(s_b), int(res.nfev),
                                  bool(exhausted))
    return best, report
