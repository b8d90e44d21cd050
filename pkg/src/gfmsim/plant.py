"""Phasor-level network: power transfer across a line reactance.

The inverter EMF ``E`` sits behind a purely reactive line ``X`` and drives a
bus of magnitude ``V``.  Grid-connected (GC) mode ties that bus to an infinite
source rotating at ``omega0``; islanded (IS) mode leaves the inverter alone
to serve a stiff resistive load.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .errors import ConfigError, WrongMode
from .tfcore import TransferFunction

OMEGA_NOMINAL = 100.0 * math.pi  # 50 Hz
L_FILTER = 3e-3  # H, Table-1 filter inductor reused as line reactance
V_RATED = 380.0
P_RATED = 12_000.0
P_LOAD_BASE = 1_000.0

GC = "gc"
IS = "is"


@dataclass(frozen=True)
class PlantParams:
    x_line: float = OMEGA_NOMINAL * L_FILTER  # ohm
    e0: float = V_RATED  # inverter EMF magnitude, V
    v0: float = V_RATED  # grid / bus magnitude, V
    omega0: float = OMEGA_NOMINAL  # rad/s

    def __post_init__(self):
        for name in ("x_line", "e0", "v0", "omega0"):
            if not getattr(self, name) > 0:
                raise ConfigError("must be > 0", name)


@dataclass(frozen=True)
class LoadEvent:
    time: float
    delta: float


@dataclass
class GridState:
    mode: str = GC
    p_load: float = P_LOAD_BASE
    theta_grid: float = 0.0
    load_events: list[LoadEvent] = field(default_factory=list)

    def __post_init__(self):
        if self.mode not in (GC, IS):
            raise ConfigError(f"unknown mode {self.mode!r}", "mode")
        if self.p_load < 0:
            raise ConfigError("must be >= 0", "p_load")
        self.load_events = sorted(self.load_events, key=lambda e: e.time)


def power_flow(e: float, v: float, theta: float, x: float) -> tuple[float, float]:
    """Active and reactive power sent from EMF ``e`` at angle ``theta`` to bus ``v``."""
    if x <= 0:
        raise ValueError("line reactance must be positive")
    p = e * v * math.sin(theta) / x
    q = (e * e - e * v * math.cos(theta)) / x
    return p, q


def linearized_gain(p: PlantParams) -> float:
    """Synchronizing power coefficient dP/dtheta at zero angle, W/rad."""
    return p.e0 * p.v0 / p.x_line


def angle_plant(p: PlantParams) -> TransferFunction:
    """Small-signal dP/domega: the angle integrates the frequency deviation."""
    return TransferFunction([linearized_gain(p)], [0.0, 1.0])


def islanded_bus_power(gs: GridState, t: float) -> float:
    """Load demanded at time ``t`` given the load-step schedule."""
    if gs.mode != IS:
        raise WrongMode("islanded_bus_power requires IS mode")
    p = gs.p_load
    for ev in gs.load_events:
        if t >= ev.time:
            p += ev.delta
    return p
