"""Closed-loop transfer functions, the three-pole/one-zero design form, and
step-response metrics (rise, settling, overshoot, ROCOF)."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from .errors import DegenerateLoop, InvalidDesign, NotSettled
from .plant import PlantParams
from .tfcore import Polynomial, TransferFunction

OVERSHOOT_FLOOR_PCT = 1e-6


@dataclass(frozen=True)
class LoopFunctions:
    g_f: TransferFunction  # frequency feedback / governor branch
    g_l: TransferFunction  # filter / inertia path
    g_b: TransferFunction  # power feedback gain

    def __post_init__(self):
        for name in ("g_f", "g_l", "g_b"):
            if not getattr(self, name).is_proper:
                raise ValueError(f"{name} must be proper")
        if self.g_l.den.degree > 0 and any(p.real > 1e-9 for p in self.g_l.poles()):
            raise ValueError("g_l has right-half-plane poles")


@dataclass(frozen=True)
class DesignParams:
    """Time constants (s) of ``(1 + s t_z1) / prod(1 + s t_pi)``.

    ``gain`` multiplies the shape, in (rad/s)/W; ``beta`` is the lag of the
    power feedback ``(beta s + 1)`` in the grid-connected model.
    """

    t_z1: float
    t_p1: float
    t_p2: float
    t_p3: float
    beta: float = 0.01
    gain: float = 1.0

    def __post_init__(self):
        for name in ("t_z1", "t_p1", "t_p2", "t_p3", "gain"):
            val = getattr(self, name)
            if not (math.isfinite(val) and val > 0):
                raise InvalidDesign(f"must be > 0, got {val!r}", f"design.{name}")
        if not (math.isfinite(self.beta) and self.beta >= 0):
            raise InvalidDesign(f"must be >= 0, got {self.beta!r}", "design.beta")
        # a zero slower than every pole turns the lag network into a lead and
        # can push the frequency past its final value
        if self.t_z1 > max(self.t_p1, self.t_p2, self.t_p3):
            raise InvalidDesign(
                "zero time constant must not exceed the slowest pole time constant",
                "design.t_z1",
            )

    @property
    def pole_times(self) -> tuple[float, float, float]:
        return (self.t_p1, self.t_p2, self.t_p3)


@dataclass(frozen=True)
class StepMetrics:
    rise_time_10_90: float
    settling_time_2pct: float
    overshoot_pct: float
    steady_state: float
    max_rocof: Optional[float] = None

    def to_dict(self) -> dict:
        return asdict(self)


def build_gc_closed_loop(lf: LoopFunctions, plant: PlantParams) -> TransferFunction:
    """dP / dP_r = V0 Vg G_L / (s X + s G_F G_L + V0 Vg G_L G_B)."""
    k = plant.e0 * plant.v0
    nf, df = lf.g_f.num, lf.g_f.den
    nl, dl = lf.g_l.num, lf.g_l.den
    nb, db = lf.g_b.num, lf.g_b.den
    s = Polynomial([0.0, 1.0])
    # multiply through by dl*df*db
    den = (s * dl * df * db).scale(plant.x_line) + s * nf * nl * db + (nl * nb * df).scale(k)
    if den.is_zero:
        raise DegenerateLoop("grid-connected denominator is identically zero")
    return TransferFunction((nl * df * db).scale(k), den)


def gc_loop_functions(lf: LoopFunctions, plant: PlantParams) -> LoopFunctions:
    """Rescale a controller loop for :func:`build_gc_closed_loop`.

    The grid-connected formula carries the frequency-feedback branch in
    reactance-scaled units (``s G_F G_L`` sits next to ``s X``), whereas the
    islanded formula uses it directly.
    """
    return LoopFunctions(g_f=lf.g_f * plant.x_line, g_l=lf.g_l, g_b=lf.g_b)


def build_is_closed_loop(lf: LoopFunctions) -> TransferFunction:
    """d omega / dP_load = -G_B G_L / (1 + G_F G_L)."""
    nf, df = lf.g_f.num, lf.g_f.den
    nl, dl = lf.g_l.num, lf.g_l.den
    nb, db = lf.g_b.num, lf.g_b.den
    den = db * (dl * df + nf * nl)
    if den.is_zero:
        raise DegenerateLoop("1 + G_F G_L is identically zero")
    return TransferFunction((nb * nl * df).scale(-1.0), den)


def design_target(dp: DesignParams) -> TransferFunction:
    """(1 + s T_z1) / ((1 + s T_p1)(1 + s T_p2)(1 + s T_p3))."""
    den = Polynomial([1.0])
    for tp in dp.pole_times:
        den = den * Polynomial([1.0, tp])
    return TransferFunction([1.0, dp.t_z1], den)


def design_loop_functions(dp: DesignParams, plant: PlantParams) -> LoopFunctions:
    """Factoring of the design model onto the generic grid-connected loop.

    The ``(beta s + 1)`` factor is carried by a static frequency feedback
    ``G_F = E0 V0 beta``, which keeps every branch proper.
    """
    return LoopFunctions(
        g_f=TransferFunction.gain(plant.e0 * plant.v0 * dp.beta),
        g_l=design_target(dp) * dp.gain,
        g_b=TransferFunction.gain(1.0),
    )


def build_gc_design_model(dp: DesignParams, plant: PlantParams) -> TransferFunction:
    """V0Vg k (1+sTz) / [s X prod(1+sTp) + V0Vg k (1+sTz)(beta s + 1)]."""
    k = plant.e0 * plant.v0 * dp.gain
    zero = Polynomial([1.0, dp.t_z1])
    poles = Polynomial([1.0])
    for tp in dp.pole_times:
        poles = poles * Polynomial([1.0, tp])
    den = Polynomial([0.0, plant.x_line]) * poles + (zero * Polynomial([1.0, dp.beta])).scale(k)
    return TransferFunction(zero.scale(k), den)


def build_is_design_model(dp: DesignParams) -> TransferFunction:
    """Islanded frequency response of the design form: -k G(s)."""
    return -(design_target(dp) * dp.gain)


def is_monotone(y: np.ndarray, rtol: float = 1e-9) -> bool:
    """True when ``y`` never reverses direction by more than ``rtol`` of its span."""
    d = np.diff(y)
    span = abs(y[-1] - y[0])
    if span == 0:
        return bool(np.all(d == 0))
    sign = math.copysign(1.0, y[-1] - y[0])
    return bool(np.all(sign * d >= -rtol * span))


def _crossing(t: np.ndarray, frac: np.ndarray, level: float) -> float:
    idx = int(np.argmax(frac >= level))
    if idx == 0:
        return float(t[0])
    f0, f1 = frac[idx - 1], frac[idx]
    return float(t[idx - 1] + (level - f0) / (f1 - f0) * (t[idx] - t[idx - 1]))


def step_metrics(
    series,
    dt: float,
    step_magnitude: float,
    rise_low: float = 0.1,
    rise_high: float = 0.9,
    settle_band: float = 0.02,
    initial: Optional[float] = None,
    check_settled: bool = True,
) -> StepMetrics:
    """Rise (low->high fraction), settling (band) and overshoot of a step trace.

    Times are measured from the first sample.  The initial level defaults to
    the first sample and the final level is the mean of the last 5 % of
    samples, which must vary by less than 0.1 % of ``step_magnitude``.
    """
    y = np.asarray(series, dtype=float)
    if y.size == 0 or dt <= 0 or step_magnitude == 0:
        raise ValueError("need a non-empty series, dt > 0 and a nonzero step")
    tail = y[-max(1, int(math.ceil(0.05 * y.size))):]
    if check_settled and np.ptp(tail) >= 1e-3 * abs(step_magnitude):
        raise NotSettled(
            f"last 5% of samples vary by {np.ptp(tail):.4g} "
            f"(limit {1e-3 * abs(step_magnitude):.4g})"
        )
    final = float(tail.mean())
    y0 = float(y[0]) if initial is None else float(initial)
    change = final - y0
    if abs(change) <= 1e-9 * abs(step_magnitude):
        return StepMetrics(0.0, 0.0, 0.0, final)

    t = np.arange(y.size) * dt
    frac = (y - y0) / change
    rise = _crossing(t, frac, rise_high) - _crossing(t, frac, rise_low)

    outside = np.nonzero(np.abs(frac - 1.0) > settle_band)[0]
    if outside.size == 0:
        settling = 0.0
    else:
        i = int(outside[-1])
        if i + 1 >= y.size:
            settling = float(t[-1])
        else:
            e0, e1 = abs(frac[i] - 1.0), abs(frac[i + 1] - 1.0)
            settling = float(t[i] + (e0 - settle_band) / (e0 - e1) * dt)

    overshoot = (float(np.max(frac)) - 1.0) * 100.0
    if overshoot < OVERSHOOT_FLOOR_PCT:  # round-off on a monotone approach
        overshoot = 0.0
    return StepMetrics(rise, settling, overshoot, final)


def max_rocof(freq_series, dt: float, window: float = 0.1) -> float:
    """Largest absolute average slope ``|f(t+w) - f(t)| / w`` over the trace."""
    if window < dt:
        raise ValueError("window must be at least one sample")
    f = np.asarray(freq_series, dtype=float)
    if f.size < 2:
        return 0.0
    k = min(max(1, int(round(window / dt))), f.size - 1)
    return float(np.max(np.abs(f[k:] - f[:-k])) / (k * dt))


def rocof_report(strategy: str, mode: str, metrics: StepMetrics, rocof_limit: float) -> dict:
    """JSON-ready metric row."""
    rocof = metrics.max_rocof
    return {
        "strategy": strategy,
        "mode": mode,
        "rise_time_s": metrics.rise_time_10_90,
        "settling_time_s": metrics.settling_time_2pct,
        "overshoot_pct": metrics.overshoot_pct,
        "max_rocof_hz_s": rocof,
        "rocof_pass": None if rocof is None else bool(rocof <= rocof_limit),
    }
