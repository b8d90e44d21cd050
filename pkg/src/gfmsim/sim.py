"""Fixed-step RK4 simulation of controller + phasor plant.

Angles are integrated in the frame rotating at the plant's nominal
``omega0``, so in grid-connected mode ``theta`` is the load angle against the
infinite bus and an undisturbed equilibrium keeps every trace column constant.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import root

from . import controllers as ctl
from .analysis import (
    DesignParams,
    LoopFunctions,
    StepMetrics,
    build_gc_design_model,
    build_is_closed_loop,
    max_rocof,
    step_metrics,
)
from .errors import ConfigError, NumericalBlowup, UnstableEquilibrium
from .plant import GC, IS, P_LOAD_BASE, P_RATED, PlantParams, linearized_gain, power_flow
from .tfcore import step_response

log = logging.getLogger(__name__)

STRATEGIES = ("droop", "vsg", "udc")
EVENT_KINDS = ("reference_step", "load_step", "island", "reconnect")
TRACE_COLUMNS = ("t", "omega", "freq", "v", "p", "q", "theta", "p_ref_effective", "p_load_effective")


@dataclass(frozen=True)
class Event:
    time: float
    kind: str
    value: float = 0.0

    def __post_init__(self):
        if self.kind not in EVENT_KINDS:
            raise ConfigError(f"unknown event kind {self.kind!r}", "kind")


@dataclass(frozen=True)
class Scenario:
    mode: str
    strategy: str
    controller: ctl.ControllerParams
    plant: PlantParams = field(default_factory=PlantParams)
    events: tuple[Event, ...] = ()
    t_end: float = 10.0
    dt: float = 1e-4
    p_load: float = P_LOAD_BASE
    linear_plant: bool = False

    def __post_init__(self):
        object.__setattr__(self, "events", tuple(self.events))
        if self.mode not in (GC, IS):
            raise ConfigError(f"unknown mode {self.mode!r}", "scenario.mode")
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"unknown strategy {self.strategy!r}", "scenario.strategy")
        if not (self.dt > 0):
            raise ConfigError("must be > 0", "scenario.dt")
        if not (self.t_end > self.dt):
            raise ConfigError("must exceed dt", "scenario.t_end")
        if self.p_load < 0:
            raise ConfigError("must be >= 0", "scenario.plant.p_load")
        times = [e.time for e in self.events]
        if times != sorted(times):
            raise ConfigError("events must be sorted by time", "scenario.plant.events")
        if any(t < 0 or t > self.t_end for t in times):
            raise ConfigError("event time outside [0, t_end]", "scenario.plant.events")
        tmin = fastest_time_constant(self.controller)
        if self.dt > tmin / 10.0 * (1 + 1e-9):
            raise ConfigError(
                f"dt={self.dt:g} exceeds a tenth of the fastest filter time constant {tmin:g}",
                "scenario.dt",
            )


def fastest_time_constant(params: ctl.ControllerParams) -> float:
    taus = []
    if isinstance(params, ctl.VsgParams):
        if params.tau > 0:
            taus.append(params.tau)
    else:
        taus.append(params.tau)
        if isinstance(params, ctl.UdcParams) and params.active_filter is not None:
            taus.extend(1.0 / abs(p) for p in params.active_filter.poles() if abs(p) > 0)
    return min(taus) if taus else math.inf


@dataclass
class Trace:
    t: np.ndarray
    omega: np.ndarray
    freq: np.ndarray
    v: np.ndarray
    p: np.ndarray
    q: np.ndarray
    theta: np.ndarray
    p_ref_effective: np.ndarray
    p_load_effective: np.ndarray

    def columns(self) -> np.ndarray:
        return np.column_stack([getattr(self, c) for c in TRACE_COLUMNS])

    def to_csv(self, path, precision: int = 9) -> None:
        fmt = f"%.{precision}g"
        np.savetxt(path, self.columns(), fmt=fmt, delimiter=",", header=",".join(TRACE_COLUMNS), comments="")

    def index_of(self, time: float) -> int:
        dt = self.t[1] - self.t[0]
        return int(round(time / dt))


# --- model assembly --------------------------------------------------------


class _Model:
    """Controller law plus plant measurement for one inverter."""

    def __init__(self, sc: Scenario):
        self.sc = sc
        self.plant = sc.plant
        self.k_theta = linearized_gain(sc.plant)
        self.mode = sc.mode
        self.p_ref = sc.controller.p_ref
        self.p_load = sc.p_load
        self.set_law(sc.controller)

    def set_law(self, params):
        self.params = params
        self.law = ctl.make_law(params, v=self.plant.e0)
        self.n = self.law.n_states

    def measure(self, theta, v):
        pl = self.plant
        if self.mode == IS:
            return self.p_load, 0.0
        if self.sc.linear_plant:
            return self.k_theta * theta, v * (v - pl.v0) / pl.x_line
        return power_flow(v, pl.v0, theta, pl.x_line)

    def rhs(self, y):
        x = y[:-1]
        omega, v = self.law.outputs(x)
        P, Q = self.measure(y[-1], v)
        dx = self.law.rates(x, omega, v, P, Q)
        dx.append(omega - self.plant.omega0)
        return dx

    def apply(self, ev: Event):
        if ev.kind == "reference_step":
            self.p_ref += ev.value
            self.set_law(replace(self.params, p_ref=self.p_ref))
        elif ev.kind == "load_step":
            self.p_load += ev.value
            if self.p_load < 0:
                raise ConfigError("load power became negative", "scenario.plant.events")
        elif ev.kind == "island":
            self.mode = IS
        else:
            self.mode = GC


def _initial_guess(model: _Model) -> list[float]:
    law, params, pl = model.law, model.params, model.plant
    p_guess = model.p_ref if model.mode == GC else model.p_load
    theta = math.asin(max(-0.9, min(0.9, p_guess * pl.x_line / (pl.e0 * pl.v0))))
    if isinstance(law, ctl.DroopLaw):
        x = [p_guess, params.q_ref]
    elif isinstance(law, ctl.UdcLaw):
        x = [0.0] * law.n_filter + [params.q_ref]
    else:
        x = [0.0, params.omega0] if law.filtered else [params.omega0]
    return x + [theta]


def _solve(fun, guess, scale, what):
    sol = root(fun, np.asarray(guess, dtype=float), method="hybr", options={"xtol": 1e-14})
    x = sol.x
    for _ in range(3):  # polish with plain Newton on the converged point
        r = np.asarray(fun(x))
        if np.max(np.abs(r)) <= 1e-12 * scale:
            break
        jac = _jacobian(fun, x)
        try:
            x = x - np.linalg.solve(jac, r)
        except np.linalg.LinAlgError:
            break
    resid = float(np.max(np.abs(fun(x))))
    if np.all(np.isfinite(x)):
        # rates are sums of large opposing terms when filter coefficients are big
        scale = max(scale, float(np.max(np.abs(_jacobian(fun, x)) @ np.abs(x))))
    if not np.all(np.isfinite(x)) or resid > 1e-9 * scale:
        raise UnstableEquilibrium(f"{what}: equilibrium not found (residual {resid:.3g})")
    return x.tolist()


def _jacobian(fun, x, rel=1e-7):
    x = np.asarray(x, dtype=float)
    f0 = np.asarray(fun(x))
    jac = np.empty((f0.size, x.size))
    for i in range(x.size):
        h = rel * max(1.0, abs(x[i]))
        xp = x.copy()
        xp[i] += h
        xm = x.copy()
        xm[i] -= h
        jac[:, i] = (np.asarray(fun(xp)) - np.asarray(fun(xm))) / (2 * h)
    return jac


def solve_equilibrium(model: _Model) -> list[float]:
    """Pre-event operating point; the angle is held at zero when islanded."""
    guess = _initial_guess(model)
    scale = max(1.0, abs(model.p_ref), abs(model.p_load), model.plant.omega0)
    if model.mode == GC:
        y = _solve(model.rhs, guess, scale, "grid-connected")
        jac = _jacobian(model.rhs, y)
    else:
        def fun(x):
            return model.rhs(list(x) + [0.0])[:-1]

        y = _solve(fun, guess[:-1], scale, "islanded") + [0.0]
        jac = _jacobian(fun, y[:-1])
    if np.max(np.linalg.eigvals(jac).real) > 1e-6:
        raise UnstableEquilibrium("operating point has an unstable mode")
    return y


def _rk4(rhs, y, dt):
    k1 = rhs(y)
    k2 = rhs([a + 0.5 * dt * b for a, b in zip(y, k1)])
    k3 = rhs([a + 0.5 * dt * b for a, b in zip(y, k2)])
    k4 = rhs([a + dt * b for a, b in zip(y, k3)])
    return [a + dt / 6.0 * (b + 2.0 * c + 2.0 * d + e) for a, b, c, d, e in zip(y, k1, k2, k3, k4)]


def _event_steps(events: Sequence[Event], dt: float) -> dict[int, list[Event]]:
    out: dict[int, list[Event]] = {}
    for ev in events:
        out.setdefault(int(math.ceil(ev.time / dt - 1e-9)), []).append(ev)
    return out


def _report_switch(model: _Model, t: float) -> None:
    """Log the operating point the new configuration heads for; states are
    carried through the switch unchanged."""
    try:
        y = solve_equilibrium(model)
    except UnstableEquilibrium as exc:
        log.warning("t=%.4f s: switched to %s mode, no stable target (%s)", t, model.mode, exc)
        return
    omega, _ = model.law.outputs(y[:-1])
    log.info("t=%.4f s: switched to %s mode, target omega=%.6f rad/s", t, model.mode, omega)


def run_scenario(sc: Scenario) -> Trace:
    model = _Model(sc)
    y = solve_equilibrium(model)
    n = int(round(sc.t_end / sc.dt))
    by_step = _event_steps(sc.events, sc.dt)
    limits = [1e6 * max(abs(a), P_RATED) for a in y[:-1]] + [1e6 * math.pi]
    cols = np.empty((n + 1, len(TRACE_COLUMNS)))
    for k in range(n + 1):
        for ev in by_step.get(k, ()):
            model.apply(ev)
            if ev.kind in ("island", "reconnect"):
                _report_switch(model, k * sc.dt)
        x = y[:-1]
        omega, v = model.law.outputs(x)
        P, Q = model.measure(y[-1], v)
        cols[k] = (k * sc.dt, omega, omega / (2 * math.pi), v, P, Q, y[-1], model.p_ref, model.p_load)
        if k == n:
            break
        y = _rk4(model.rhs, y, sc.dt)
        if not all(abs(a) <= lim for a, lim in zip(y, limits)) or not math.isfinite(sum(y)):
            raise NumericalBlowup(f"state diverged at t={(k + 1) * sc.dt:.4f} s")
    return Trace(*cols.T.copy())


# --- comparisons and cross-checks -------------------------------------------


def _first_step_event(sc: Scenario) -> Event:
    for ev in sc.events:
        if ev.kind in ("reference_step", "load_step"):
            return ev
    raise ConfigError("scenario has no reference or load step", "scenario.plant.events")


def trace_metrics(
    sc: Scenario,
    tr: Trace,
    rocof_window: float = 0.1,
    rise_low: float = 0.1,
    rise_high: float = 0.9,
    settle_band: float = 0.02,
) -> StepMetrics:
    """Step metrics on the post-step segment: power when grid-connected,
    frequency when islanded (frequency traces also carry ROCOF)."""
    ev = _first_step_event(sc)
    k0 = tr.index_of(ev.time)
    series = tr.p[k0:] if sc.mode == GC else tr.freq[k0:]
    change = series[-1] - series[0]
    if change == 0:
        change = ev.value
    m = step_metrics(series, sc.dt, change, rise_low, rise_high, settle_band)
    if sc.mode == IS:
        m = replace(m, max_rocof=max_rocof(tr.freq, sc.dt, rocof_window))
    return m


def run_comparison(scenarios: Sequence[Scenario], **metric_kw) -> list[tuple[str, StepMetrics]]:
    if not scenarios:
        return []
    first = scenarios[0]
    for sc in scenarios[1:]:
        if (sc.mode, sc.plant, sc.events) != (first.mode, first.plant, first.events):
            raise ConfigError("compared scenarios must share mode, plant and events", "scenario")
    return [(sc.strategy, trace_metrics(sc, run_scenario(sc), **metric_kw)) for sc in scenarios]


def small_signal_model(sc: Scenario, dp: Optional[DesignParams] = None):
    """Linear model of the scenario's step response per unit of step.

    Grid-connected runs use the design form; islanded runs linearize the
    controller at its pre-event equilibrium.
    """
    if sc.mode == GC:
        if dp is None:
            raise ConfigError("grid-connected cross-validation needs design parameters", "design")
        return build_gc_design_model(dp, sc.plant)
    return build_is_closed_loop(linearize_scenario(sc))


def linearize_scenario(sc: Scenario) -> LoopFunctions:
    """Controller loop functions at the scenario's pre-event equilibrium."""
    model = _Model(sc)
    y = solve_equilibrium(model)
    st = ctl.unpack_state(model.law, y[:-1], y[-1])
    P, Q = model.measure(y[-1], st.v)
    return ctl.linearize_controller(sc.controller, st, P, Q)


def cross_validate_small_signal(sc: Scenario, dp: Optional[DesignParams] = None) -> dict:
    """Compare the simulated post-step deviation against the linear model.

    The deviation is the largest absolute difference divided by the
    steady-state change of the linear prediction.  Only steps of at most 2 %
    of rated power are judged against the 2 % bound.
    """
    ev = _first_step_event(sc)
    tr = run_scenario(sc)
    k0 = tr.index_of(ev.time)
    if sc.mode == GC:
        sim = tr.p[k0:] - tr.p[k0 - 1 if k0 else 0]
    else:
        sim = tr.omega[k0:] - tr.omega[k0 - 1 if k0 else 0]
    model = small_signal_model(sc, dp)
    horizon = (sim.size - 1) * sc.dt
    _, lin = step_response(model, horizon, sc.dt)
    lin = lin[: sim.size] * ev.value
    ref = abs(model.dc_gain() * ev.value)
    deviation = float(np.max(np.abs(sim - lin)) / ref)
    small = abs(ev.value) <= 0.02 * P_RATED
    return {
        "mode": sc.mode,
        "step_w": ev.value,
        "step_fraction_of_rated": abs(ev.value) / P_RATED,
        "max_rel_deviation": deviation,
        "small_signal": small,
        "pass": (deviation < 0.02) if small else None,
    }


# --- two inverters on one islanded bus -------------------------------------


@dataclass(frozen=True)
class Unit:
    controller: ctl.ControllerParams
    x_line: float = PlantParams().x_line


@dataclass(frozen=True)
class ParallelScenario:
    unit1: Unit
    unit2: Unit
    events: tuple[Event, ...] = ()
    p_load: float = P_LOAD_BASE
    t_end: float = 10.0
    dt: float = 1e-4
    omega0: float = PlantParams().omega0
    v_nominal: float = PlantParams().v0

    def __post_init__(self):
        object.__setattr__(self, "events", tuple(self.events))
        for u in (self.unit1, self.unit2):
            if getattr(u.controller, "omega0", self.omega0) != self.omega0:
                raise ConfigError("units must share omega0", "parallel.omega0")
        if any(e.kind != "load_step" for e in self.events):
            raise ConfigError("parallel scenarios accept load steps only", "parallel.events")


class _ParallelModel:
    def __init__(self, ps: ParallelScenario):
        self.ps = ps
        self.laws = [ctl.make_law(u.controller, v=ps.v_nominal) for u in (ps.unit1, ps.unit2)]
        self.xs = [ps.unit1.x_line, ps.unit2.x_line]
        self.n1 = self.laws[0].n_states
        self.p_load = ps.p_load

    def split(self, y):
        n1 = self.n1
        return y[:n1], y[n1:-2], y[-2], y[-1]

    def network(self, y):
        x1, x2, th1, th2 = self.split(y)
        (w1, v1), (w2, v2) = self.laws[0].outputs(x1), self.laws[1].outputs(x2)
        X1, X2 = self.xs
        vb = (v1 * v1 / X1 + v2 * v2 / X2) / (v1 / X1 + v2 / X2)
        k1, k2 = v1 * vb / X1, v2 * vb / X2
        thb = (k1 * th1 + k2 * th2 - self.p_load) / (k1 + k2)
        p1, p2 = k1 * (th1 - thb), k2 * (th2 - thb)
        q1, q2 = v1 * (v1 - vb) / X1, v2 * (v2 - vb) / X2
        return (x1, w1, v1, p1, q1), (x2, w2, v2, p2, q2)

    def rhs(self, y):
        u1, u2 = self.network(y)
        w0 = self.ps.omega0
        d1 = self.laws[0].rates(u1[0], u1[1], u1[2], u1[3], u1[4])
        d2 = self.laws[1].rates(u2[0], u2[1], u2[2], u2[3], u2[4])
        return d1 + d2 + [u1[1] - w0, u2[1] - w0]


def _parallel_equilibrium(model: _ParallelModel) -> list[float]:
    ps = model.ps
    g1 = _initial_guess(_Model(Scenario(IS, "droop", ps.unit1.controller, p_load=ps.p_load / 2)))[:-1]
    g2 = _initial_guess(_Model(Scenario(IS, "droop", ps.unit2.controller, p_load=ps.p_load / 2)))[:-1]

    def fun(z):
        y = list(z[:-1]) + [z[-1], 0.0]
        r = model.rhs(y)
        return r[:-2] + [r[-2] - r[-1]]

    z = _solve(fun, g1 + g2 + [0.0], max(1.0, ps.p_load, ps.omega0), "parallel")
    return z + [0.0]


def run_parallel_sharing(ps: ParallelScenario, compare_uncompensated: bool = True):
    """Simulate two units on one islanded bus; returns (trace1, trace2, report)."""
    model = _ParallelModel(ps)
    y = _parallel_equilibrium(model)
    n = int(round(ps.t_end / ps.dt))
    by_step = _event_steps(ps.events, ps.dt)
    rows = [np.empty((n + 1, len(TRACE_COLUMNS))) for _ in range(2)]
    for k in range(n + 1):
        for ev in by_step.get(k, ()):
            model.p_load += ev.value
        units = model.network(y)
        thetas = (y[-2], y[-1])
        for i, (_, w, v, p, q) in enumerate(units):
            rows[i][k] = (k * ps.dt, w, w / (2 * math.pi), v, p, q, thetas[i], 0.0, model.p_load)
        if k == n:
            break
        y = _rk4(model.rhs, y, ps.dt)
        if not math.isfinite(sum(y)):
            raise NumericalBlowup(f"state diverged at t={(k + 1) * ps.dt:.4f} s")
    tr1, tr2 = Trace(*rows[0].T.copy()), Trace(*rows[1].T.copy())

    kp = [u.controller.kp_droop for u in (ps.unit1, ps.unit2)]
    p1, p2 = tr1.p[-1], tr2.p[-1]
    report = {
        "p1_steady_w": float(p1),
        "p2_steady_w": float(p2),
        "sharing_ratio": float(p1 / p2) if p2 else math.inf,
        "droop_ratio": kp[1] / kp[0],
        "max_angle_diff_rad": float(np.max(np.abs(tr1.theta - tr2.theta))),
    }
    compensated = any(getattr(u.controller, "m", 0) or getattr(u.controller, "n", 0) for u in (ps.unit1, ps.unit2))
    if compare_uncompensated and compensated:
        off = replace(
            ps,
            unit1=replace(ps.unit1, controller=replace(ps.unit1.controller, m=0.0, n=0.0)),
            unit2=replace(ps.unit2, controller=replace(ps.unit2.controller, m=0.0, n=0.0)),
        )
        _, _, rep_off = run_parallel_sharing(off, compare_uncompensated=False)
        report["max_angle_diff_uncompensated_rad"] = rep_off["max_angle_diff_rad"]
    return tr1, tr2, report
