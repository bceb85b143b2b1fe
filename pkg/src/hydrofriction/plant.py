"""Forward simulator of a single-rod hydraulic cylinder.

Two modes share the same mechanical core (piston mass, LuGre seal friction,
end stops):

* prescribed-pressure mode: chamber pressures are inputs and the force
  balance carries the equivalent fluid spring ``K_eq(x) * x`` exactly as the
  inverse-dynamics labeler assumes it;
* valve mode: pressures are states driven by orifice flows through a 4/3
  valve and a meter-out restriction; the spring term is left out because the
  pressure states already carry the fluid compressibility.

Non-paper defaults (mass, stroke, dead lengths, supply pressure, bulk
modulus, orifice sizes, friction values) are synthetic and not calibrated to
any physical rig.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from .errors import InvalidArgument, NumericFailure
from .lugre import LuGreParams, stribeck
from .signals import SAMPLE_DT, TimeSeries

PRESSURE_SPAN = 250e5  # 0-250 bar sensors
ADC_LEVELS = 4096  # 12-bit converter
OIL_DENSITY = 860.0
DISCHARGE_COEFF = 0.7


@dataclass(frozen=True)
class CylinderGeometry:
    bore_diameter: float = 0.063
    rod_diameter: float = 0.028
    stroke: float = 0.2
    moving_mass: float = 5.0
    bulk_modulus: float = 1.4e9
    dead_length_1: float = 0.01
    dead_length_2: float = 0.01

    def __post_init__(self):
        if not 0 < self.rod_diameter < self.bore_diameter:
            raise InvalidArgument("need 0 < rod_diameter < bore_diameter")
        if not (self.stroke > 0 and self.moving_mass > 0 and self.bulk_modulus > 0):
            raise InvalidArgument("stroke, moving_mass and bulk_modulus must be positive")
        if self.dead_length_1 < 0 or self.dead_length_2 < 0:
            raise InvalidArgument("dead lengths must be non-negative")

    @property
    def areas(self) -> Tuple[float, float]:
        return derived_areas(self)


def derived_areas(geom: CylinderGeometry) -> Tuple[float, float]:
    """Piston area on the cap side and annulus area on the rod side."""
    a1 = math.pi * (geom.bore_diameter / 2) ** 2
    a2 = a1 - math.pi * (geom.rod_diameter / 2) ** 2
    return a1, a2


def spring_stiffness(geom: CylinderGeometry, x_p: float) -> float:
    """K1 + K2 of the two fluid columns (no range check; see inverse_dynamics)."""
    a1, a2 = derived_areas(geom)
    l1 = geom.dead_length_1 + x_p
    l2 = geom.dead_length_2 + geom.stroke - x_p
    return geom.bulk_modulus * a1 / l1 + geom.bulk_modulus * a2 / l2


@dataclass
class PlantState:
    x_p: float = 0.0
    v: float = 0.0
    z: float = 0.0
    p1: float = 0.0
    p2: float = 0.0


# ---------------------------------------------------------------- friction


class Frictionless:
    """Friction model returning zero force and frozen bristle state."""

    def __call__(self, z, v, p1, p2):
        return 0.0, 0.0


@dataclass(frozen=True)
class PlantFriction:
    """LuGre friction whose Stribeck curve grows with chamber pressure.

    ``g_eff(v) = g(v) * (1 + pressure_gain * (p1 + p2))`` models seal contact
    force rising with pressure; ``pressure_gain = 0`` is plain LuGre.
    Returns ``(dz/dt, friction)``.
    """

    lugre: LuGreParams
    pressure_gain: float = 0.0

    def __call__(self, z, v, p1, p2):
        p = self.lugre
        g = stribeck(v, p) * (1.0 + self.pressure_gain * (p1 + p2))
        zdot = v - p.sigma0 * abs(v) * z / g
        return zdot, p.sigma0 * z + p.sigma1 * zdot + p.sigma2 * v


FrictionModel = Callable[[float, float, float, float], Tuple[float, float]]


# ---------------------------------------------------------- prescribed mode


def _clamp_stops(x, v, stroke):
    if x < 0.0:
        return 0.0, max(v, 0.0)
    if x > stroke:
        return stroke, min(v, 0.0)
    return x, v


def prescribed_acceleration(state: PlantState, p1: float, p2: float, friction: FrictionModel,
                            geom: CylinderGeometry, spring: bool = True):
    """Exact ``(a, zdot, friction)`` of the prescribed-pressure force balance."""
    a1, a2 = derived_areas(geom)
    zdot, f = friction(state.z, state.v, p1, p2)
    k = spring_stiffness(geom, state.x_p) if spring else 0.0
    a = (p1 * a1 - p2 * a2 - k * state.x_p - f) / geom.moving_mass
    return a, zdot, f


def step_prescribed(state: PlantState, p1: float, p2: float, friction: FrictionModel,
                    geom: CylinderGeometry, dt: float = SAMPLE_DT, substeps: int = 10,
                    spring: bool = True, step_index: int = 0) -> PlantState:
    """One RK4 step of (x_p, v, z) with the pressures held over ``dt``.

    Force balance: ``m a = p1 A1 - p2 A2 - K_eq(x) x - F_f``, the rightward
    form of both direction-specific equations of motion.
    """
    if not dt > 0:
        raise InvalidArgument("dt must be positive")
    a1, a2 = derived_areas(geom)
    m = geom.moving_mass
    net_p = p1 * a1 - p2 * a2
    beta, d1, d2, stroke = geom.bulk_modulus, geom.dead_length_1, geom.dead_length_2, geom.stroke

    def rhs(x, v, z):
        zdot, f = friction(z, v, p1, p2)
        k = beta * a1 / (d1 + x) + beta * a2 / (d2 + stroke - x) if spring else 0.0
        return v, (net_p - k * x - f) / m, zdot

    x, v, z = state.x_p, state.v, state.z
    h = dt / substeps
    for _ in range(substeps):
        x, v, z = _rk4(rhs, (x, v, z), h)
        x, v = _clamp_stops(x, v, stroke)
    if not (math.isfinite(x) and math.isfinite(v) and math.isfinite(z)):
        raise NumericFailure(f"plant state became non-finite at step {step_index}")
    return PlantState(x, v, z, p1, p2)


def _rk4(rhs, y, h):
    k1 = rhs(*y)
    y2 = tuple(yi + 0.5 * h * ki for yi, ki in zip(y, k1))
    k2 = rhs(*y2)
    y3 = tuple(yi + 0.5 * h * ki for yi, ki in zip(y, k2))
    k3 = rhs(*y3)
    y4 = tuple(yi + h * ki for yi, ki in zip(y, k3))
    k4 = rhs(*y4)
    return tuple(yi + h / 6.0 * (a + 2.0 * b + 2.0 * c + d)
                 for yi, a, b, c, d in zip(y, k1, k2, k3, k4))


@dataclass
class PrescribedProfile:
    """Reference trajectory tracked by the pressure controller in prescribed mode.

    The piston runs a smooth cosine sweep between ``x_low`` and ``x_high``;
    each half period uses the next period in ``half_periods`` (cycled) so
    several speeds are visited.
    """

    x_low: float = 0.03
    x_high: float = 0.17
    half_periods: Tuple[float, ...] = (2.0, 3.0, 1.5, 4.0)
    base_pressure: float = 20e5
    kp: float = 2e4
    kd: float = 1.5e3
    friction_ff: float = 0.0

    def reference(self, t: float):
        """(x_ref, v_ref, a_ref) at time ``t``."""
        t0 = 0.0
        i = 0
        while True:
            T = self.half_periods[i % len(self.half_periods)]
            if t < t0 + T:
                break
            t0 += T
            i += 1
        phase = math.pi * (t - t0) / T
        amp = 0.5 * (self.x_high - self.x_low)
        mid = 0.5 * (self.x_high + self.x_low)
        s = 1.0 if i % 2 == 0 else -1.0
        w = math.pi / T
        return (mid - s * amp * math.cos(phase), s * amp * w * math.sin(phase),
                s * amp * w * w * math.cos(phase))


@dataclass
class PlantTrace:
    """Simulation output: the sampled series plus exact internal signals."""

    series: TimeSeries
    v: np.ndarray
    a: np.ndarray
    z: np.ndarray
    metadata: dict = field(default_factory=dict)


def simulate_prescribed(duration: float, geom: CylinderGeometry, friction: FrictionModel,
                        profile: Optional[PrescribedProfile] = None, dt: float = SAMPLE_DT,
                        substeps: int = 10) -> PlantTrace:
    """Drive the prescribed-pressure plant with a PD + spring feed-forward
    pressure controller evaluated once per sample (zero-order hold).

    The recorded ``a`` and ``f_true`` come from the force balance at each
    sample instant with the pressures that are applied over the next step.
    """
    profile = profile or PrescribedProfile()
    a1, a2 = derived_areas(geom)
    n = int(round(duration / dt))
    state = PlantState(x_p=profile.reference(0.0)[0])
    t_col, x_col, v_col, a_col, z_col, p1_col, p2_col, f_col = (np.zeros(n) for _ in range(8))
    for k in range(n):
        t = k * dt
        x_ref, v_ref, a_ref = profile.reference(t)
        u = (spring_stiffness(geom, state.x_p) * state.x_p + geom.moving_mass * a_ref
             + profile.kp * (x_ref - state.x_p) + profile.kd * (v_ref - state.v)
             + profile.friction_ff * math.tanh(v_ref / 0.01))
        p2 = profile.base_pressure
        p1 = (u + p2 * a2) / a1
        if p1 < 0.0:
            p1, p2 = 0.0, -u / a2
        a, _, f = prescribed_acceleration(state, p1, p2, friction, geom)
        t_col[k], x_col[k], v_col[k], a_col[k], z_col[k] = t, state.x_p, state.v, a, state.z
        p1_col[k], p2_col[k], f_col[k] = p1, p2, f
        state = step_prescribed(state, p1, p2, friction, geom, dt, substeps, step_index=k)
    series = TimeSeries(t_col, x_col, p1_col, p2_col, f_col)
    meta = {"mode": "prescribed", "spring_term": True, "substeps": substeps, "dt": dt}
    return PlantTrace(series, v_col, a_col, z_col, meta)


# --------------------------------------------------------------- valve mode

DIRECTIONS = {"extend": 1.0, "retract": -1.0, "idle": 0.0}

# meter-out restriction per load test, m^2 (test 1 is effectively unrestricted)
OUTLET_AREAS = {1: 40e-6, 2: 3.0e-6, 3: 2.0e-6, 4: 1.5e-6}


@dataclass
class NoiseConfig:
    pressure_std: float = 5e3  # Pa
    position_std: float = 2e-5  # m
    quantize: bool = True


@dataclass
class ScenarioConfig:
    """One load test in valve mode.

    The valve schedule is a cycle of strokes between ``x_low`` and ``x_high``:
    extend until ``x_p >= x_high``, idle ``idle_time``, retract until
    ``x_p <= x_low``, idle, and so on, with the valve opening of successive
    strokes taken from ``openings`` in turn. The spool moves at a finite rate
    (full travel in ``valve_ramp_time``).
    """

    test_id: int = 1
    duration: float = 40.0
    supply_pressure: float = 100e5
    outlet_orifice_area: Optional[float] = None
    valve_area: float = 4e-6
    return_port_ratio: float = 4.0
    openings: Tuple[float, ...] = (1.0, 0.55, 0.8, 0.3, 0.65, 0.4, 0.9, 0.2)
    x_low: float = 0.03
    x_high: float = 0.17
    idle_time: float = 0.25
    valve_ramp_time: float = 0.05
    tank_pressure: float = 0.0
    laminar_dp: float = 1e5
    initial_pressure: float = 5e5
    pressure_gain: float = 1.0 / 300e5
    substeps: int = 20
    dt: float = SAMPLE_DT
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    seed: int = 0

    def __post_init__(self):
        if self.test_id not in OUTLET_AREAS:
            raise InvalidArgument(f"test_id must be 1..4, got {self.test_id}")
        if self.outlet_orifice_area is None:
            self.outlet_orifice_area = OUTLET_AREAS[self.test_id]
        if not self.duration > 0:
            raise InvalidArgument("duration must be positive")
        if not self.outlet_orifice_area > 0:
            raise InvalidArgument("outlet orifice area must be positive")
        if not self.openings or not all(0 < o <= 1 for o in self.openings):
            raise InvalidArgument("openings must be in (0, 1]")
        self.openings = tuple(float(o) for o in self.openings)

    def to_dict(self) -> dict:
        return asdict(self)


def orifice_flow(dp: float, area: float, laminar_dp: float = 1e5) -> float:
    """Signed turbulent orifice flow, linearised below ``laminar_dp``."""
    c = DISCHARGE_COEFF * area * math.sqrt(2.0 / OIL_DENSITY)
    if abs(dp) >= laminar_dp:
        return math.copysign(c * math.sqrt(abs(dp)), dp)
    return c * dp / math.sqrt(laminar_dp)


def series_area(a: float, b: float) -> float:
    return 1.0 / math.sqrt(1.0 / (a * a) + 1.0 / (b * b))


def valve_flows(opening: float, p1: float, p2: float, cfg: ScenarioConfig):
    """(Q1 into chamber 1, Q2 out of chamber 2) for a signed spool opening."""
    if opening == 0.0:
        return 0.0, 0.0
    a_in = abs(opening) * cfg.valve_area
    a_ret = series_area(a_in * cfg.return_port_ratio, cfg.outlet_orifice_area)
    ps, pt, lam = cfg.supply_pressure, cfg.tank_pressure, cfg.laminar_dp
    if opening > 0:
        return orifice_flow(ps - p1, a_in, lam), orifice_flow(p2 - pt, a_ret, lam)
    return -orifice_flow(p1 - pt, a_ret, lam), -orifice_flow(ps - p2, a_in, lam)


def _valve_rhs_factory(opening, cfg, geom, friction):
    a1, a2 = derived_areas(geom)
    m, beta = geom.moving_mass, geom.bulk_modulus
    d1, d2, stroke = geom.dead_length_1, geom.dead_length_2, geom.stroke

    def rhs(x, v, z, p1, p2, w_in, w_f):
        q1, q2 = valve_flows(opening, p1, p2, cfg)
        zdot, f = friction(z, v, p1, p2)
        drive = p1 * a1 - p2 * a2
        dp1 = beta / (a1 * (d1 + x)) * (q1 - a1 * v)
        dp2 = beta / (a2 * (d2 + stroke - x)) * (a2 * v - q2)
        return v, (drive - f) / m, zdot, dp1, dp2, drive * v, f * v

    return rhs


def step_valve(state: PlantState, command, cfg: ScenarioConfig, geom: CylinderGeometry,
               friction: FrictionModel, dt: Optional[float] = None, step_index: int = 0,
               energy: Optional[List[float]] = None):
    """One RK4 step of (x_p, v, z, p1, p2) with the spool opening held.

    ``command`` is 'extend', 'retract', 'idle' or a signed opening in [-1, 1].
    Returns ``(state, cavitated)``; pressures driven below zero are clamped and
    flagged. ``energy``, if given, is a two-element list ``[hydraulic work on
    the piston, friction work]`` accumulated in place.
    """
    opening = DIRECTIONS[command] if isinstance(command, str) else float(command)
    dt = cfg.dt if dt is None else dt
    if not dt > 0:
        raise InvalidArgument("dt must be positive")
    rhs = _valve_rhs_factory(opening, cfg, geom, friction)
    y = (state.x_p, state.v, state.z, state.p1, state.p2, 0.0, 0.0)
    h = dt / cfg.substeps
    cavitated = False
    w_in = w_f = 0.0
    for _ in range(cfg.substeps):
        y = _rk4(rhs, y, h)
        x, v = _clamp_stops(y[0], y[1], geom.stroke)
        p1, p2 = y[3], y[4]
        if p1 < 0.0 or p2 < 0.0:
            cavitated = True
            p1, p2 = max(p1, 0.0), max(p2, 0.0)
        w_in += y[5]
        w_f += y[6]
        y = (x, v, y[2], p1, p2, 0.0, 0.0)
    if not all(math.isfinite(c) for c in y):
        raise NumericFailure(f"plant state became non-finite at step {step_index}")
    if energy is not None:
        energy[0] += w_in
        energy[1] += w_f
    return PlantState(y[0], y[1], y[2], y[3], y[4]), cavitated


class ValveSchedule:
    """Position-triggered stroke cycle with a rate-limited spool."""

    def __init__(self, cfg: ScenarioConfig):
        self.cfg = cfg
        self.phase = "extend"
        self.stroke_no = 0
        self.idle_left = 0.0
        self.next_dir = "retract"
        self.opening = 0.0

    def target(self) -> float:
        if self.phase == "idle":
            return 0.0
        o = self.cfg.openings[self.stroke_no % len(self.cfg.openings)]
        return o if self.phase == "extend" else -o

    def update(self, x: float, dt: float) -> float:
        """Advance the schedule by one sample given the current position and
        return the spool opening to hold over the next step."""
        cfg = self.cfg
        if self.phase == "extend" and x >= cfg.x_high:
            self.phase, self.idle_left, self.next_dir = "idle", cfg.idle_time, "retract"
        elif self.phase == "retract" and x <= cfg.x_low:
            self.phase, self.idle_left, self.next_dir = "idle", cfg.idle_time, "extend"
        elif self.phase == "idle":
            self.idle_left -= dt
            if self.idle_left <= 1e-12:
                self.phase = self.next_dir
                self.stroke_no += 1
        target = self.target()
        rate = dt / cfg.valve_ramp_time
        delta = max(-rate, min(rate, target - self.opening))
        self.opening += delta
        return self.opening


def generate_scenario(cfg: ScenarioConfig, geom: Optional[CylinderGeometry] = None,
                      lugre: Optional[LuGreParams] = None, noisy: bool = True) -> PlantTrace:
    """Simulate one load test in valve mode and return the sampled trace.

    ``series.f_true`` holds the injected friction at every sample instant;
    sensor noise from ``cfg.noise`` is applied unless ``noisy`` is false.
    """
    geom = geom or CylinderGeometry()
    lugre = lugre or DEFAULT_PLANT_LUGRE
    friction = PlantFriction(lugre, cfg.pressure_gain)
    a1, a2 = derived_areas(geom)
    dt = cfg.dt
    n = int(round(cfg.duration / dt))
    p0 = cfg.initial_pressure
    # start at rest with balanced chamber forces
    state = PlantState(x_p=cfg.x_low, v=0.0, z=0.0, p1=p0 * a2 / a1, p2=p0)
    schedule = ValveSchedule(cfg)
    energy = [0.0, 0.0]
    cols = {k: np.zeros(n) for k in ("t", "x", "v", "a", "z", "p1", "p2", "f", "u", "w_in", "w_f")}
    cavitation_steps = 0
    for k in range(n):
        zdot, f = friction(state.z, state.v, state.p1, state.p2)
        acc = (state.p1 * a1 - state.p2 * a2 - f) / geom.moving_mass
        opening = schedule.update(state.x_p, dt)
        for key, val in (("t", k * dt), ("x", state.x_p), ("v", state.v), ("a", acc),
                         ("z", state.z), ("p1", state.p1), ("p2", state.p2), ("f", f),
                         ("u", opening), ("w_in", energy[0]), ("w_f", energy[1])):
            cols[key][k] = val
        state, cav = step_valve(state, opening, cfg, geom, friction, dt, step_index=k,
                                energy=energy)
        cavitation_steps += cav
    clean = TimeSeries(cols["t"], cols["x"], cols["p1"], cols["p2"], cols["f"])
    series = clean
    if noisy:
        nz = cfg.noise
        series = add_noise(clean, nz.pressure_std, nz.position_std, nz.quantize, cfg.seed,
                           stroke=geom.stroke)
    meta = {
        "mode": "valve",
        "spring_term": False,
        "test_id": cfg.test_id,
        "substeps": cfg.substeps,
        "dt": dt,
        "cavitation_steps": int(cavitation_steps),
        "seed": cfg.seed,
    }
    trace = PlantTrace(series, cols["v"], cols["a"], cols["z"], meta)
    trace.opening = cols["u"]
    trace.work_in = cols["w_in"]
    trace.friction_work = cols["w_f"]
    trace.clean = clean
    return trace


DEFAULT_PLANT_LUGRE = LuGreParams(sigma0=1e6, sigma1=300.0, sigma2=800.0, f_c=150.0, f_s=250.0,
                                  v_s=0.01)


def add_noise(series: TimeSeries, pressure_std: float = 0.0, position_std: float = 0.0,
              quantize: bool = False, seed: int = 0, stroke: float = 0.2) -> TimeSeries:
    """Gaussian sensor noise, then optional 12-bit quantization.

    Pressures are quantized to ``250e5 / 4096`` Pa over a 0-250 bar span and
    position to ``stroke / 4096`` m over [0, stroke]; quantized values saturate
    at the span limits.
    """
    if pressure_std < 0 or position_std < 0:
        raise InvalidArgument("noise standard deviations must be non-negative")
    rng = np.random.default_rng(seed)
    n = len(series)
    x, p1, p2 = series.x_p.copy(), series.p1.copy(), series.p2.copy()
    if pressure_std > 0:
        p1 += rng.normal(0.0, pressure_std, n)
        p2 += rng.normal(0.0, pressure_std, n)
    if position_std > 0:
        x += rng.normal(0.0, position_std, n)
    if quantize:
        qp = PRESSURE_SPAN / ADC_LEVELS
        qx = stroke / ADC_LEVELS
        p1 = np.clip(np.round(p1 / qp), 0, ADC_LEVELS) * qp
        p2 = np.clip(np.round(p2 / qp), 0, ADC_LEVELS) * qp
        x = np.clip(np.round(x / qx), 0, ADC_LEVELS) * qx
    f = None if series.f_true is None else series.f_true.copy()
    return TimeSeries(series.t.copy(), x, p1, p2, f)


def steady_extend_pressures(opening: float, cfg: ScenarioConfig, geom: CylinderGeometry,
                            lugre: LuGreParams, tol: float = 1e-12):
    """Steady extension (v, p1, p2) from the orifice balance, by bisection on v.

    At constant speed the flows are ``Q1 = A1 v`` and ``Q2 = A2 v`` and the
    piston forces balance the steady LuGre friction.
    """
    a1, a2 = derived_areas(geom)
    a_in = opening * cfg.valve_area
    a_ret = series_area(a_in * cfg.return_port_ratio, cfg.outlet_orifice_area)
    c = DISCHARGE_COEFF * math.sqrt(2.0 / OIL_DENSITY)

    def dp_for_flow(q, area):
        # inverse of orifice_flow for q >= 0
        lam = cfg.laminar_dp
        if q >= c * area * math.sqrt(lam):
            return (q / (c * area)) ** 2
        return q * math.sqrt(lam) / (c * area)

    def pressures(v):
        p1 = cfg.supply_pressure - dp_for_flow(a1 * v, a_in)
        p2 = cfg.tank_pressure + dp_for_flow(a2 * v, a_ret)
        return p1, p2

    def excess(v):
        p1, p2 = pressures(v)
        scale = 1.0 + cfg.pressure_gain * (p1 + p2)
        g = stribeck(v, lugre) * scale
        return p1 * a1 - p2 * a2 - g - lugre.sigma2 * v

    lo, hi = 1e-9, 1.0
    while excess(hi) > 0:
        hi *= 2.0
    if excess(lo) <= 0:
        raise InvalidArgument("valve cannot overcome static friction at this opening")
    while hi - lo > tol * max(1.0, hi):
        mid = 0.5 * (lo + hi)
        if excess(mid) > 0:
            lo = mid
        else:
            hi = mid
    v = 0.5 * (lo + hi)
    p1, p2 = pressures(v)
    return v, p1, p2
