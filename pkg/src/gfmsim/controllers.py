"""Reference-EMF generation laws: filtered droop, VSG and unified droop (UDC).

Each law exists twice: a small stateful-free "law" object working on flat
float lists (used by the simulator's inner loop) and the public
``*_derivatives`` functions that wrap it with :class:`ControllerState`.
Both paths share the same arithmetic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import NamedTuple, Optional, Union

import numpy as np

from .analysis import DesignParams, LoopFunctions, design_target
from .errors import (
    ConfigError,
    NonPhysicalFrequency,
    NotAnEquilibrium,
    SingularCoupling,
)
from .plant import OMEGA_NOMINAL, P_RATED, V_RATED, PlantParams, linearized_gain
from .tfcore import Polynomial, TransferFunction, tf_to_statespace

DEFAULT_TAU = 1.0 / (10.0 * math.pi)  # 5 Hz measurement filter
DEFAULT_KP = math.pi / P_RATED  # rated power -> 0.5 Hz
DEFAULT_KD = 0.05 * V_RATED / P_RATED  # rated reactive power -> 5 % voltage


def _require(cond: bool, key: str, msg: str):
    if not cond:
        raise ConfigError(msg, key)


@dataclass(frozen=True)
class DroopParams:
    kp_droop: float = DEFAULT_KP  # (rad/s)/W
    kd_droop: float = DEFAULT_KD  # V/var
    tau: float = DEFAULT_TAU  # s
    m: float = 0.0  # (rad/s)/V
    n: float = 0.0  # V/(rad/s)
    omega_ref: float = OMEGA_NOMINAL
    v_ref: float = V_RATED
    p_ref: float = 0.0
    q_ref: float = 0.0

    def __post_init__(self):
        _require(self.kp_droop > 0, "kp_droop", "must be > 0")
        _require(self.kd_droop > 0, "kd_droop", "must be > 0")
        _require(self.tau > 0, "tau", "must be > 0")
        _require(self.m >= 0, "m", "must be >= 0")
        _require(self.n >= 0, "n", "must be >= 0")


@dataclass(frozen=True)
class VsgParams:
    """Swing-equation controller.

    ``d`` is expressed in W/(rad/s), like the governor gain, so the damping
    torque is ``d * (omega - omega0) / omega``.  ``tau`` is the governor
    filter; ``tau = 0`` means a static governor.
    """

    j: float = 3.36  # kg m^2
    d: float = 100.0  # W/(rad/s)
    k_omega: float = 1.0 / DEFAULT_KP  # W/(rad/s)
    tau: float = DEFAULT_TAU
    omega0: float = OMEGA_NOMINAL
    omega_ref: float = OMEGA_NOMINAL
    p_ref: float = 0.0

    def __post_init__(self):
        _require(self.j > 0, "j", "must be > 0")
        _require(self.d >= 0, "d", "must be >= 0")
        _require(self.k_omega >= 0, "k_omega", "must be >= 0")
        _require(self.tau >= 0, "tau", "must be >= 0")
        _require(self.omega0 > 0, "omega0", "must be > 0")


@dataclass(frozen=True)
class UdcParams:
    """Unified droop law with a P/f governor on the power reference.

    ``active_filter`` replaces the first-order ``1/(tau s + 1)`` of the active
    channel when a designed loop shape is used; it must be strictly proper
    with unit DC gain.  ``tau`` always filters the reactive channel.
    """

    kp_droop: float = DEFAULT_KP
    tau: float = DEFAULT_TAU
    xi: float = 0.0  # W/(rad/s)
    m: float = 0.0
    omega0: float = OMEGA_NOMINAL
    omega_ref: float = OMEGA_NOMINAL
    v_ref: float = V_RATED
    p_ref: float = 0.0
    kd_droop: float = DEFAULT_KD
    n: float = 0.0
    q_ref: float = 0.0
    active_filter: Optional[TransferFunction] = field(default=None, compare=False)

    def __post_init__(self):
        _require(self.kp_droop > 0, "kp_droop", "must be > 0")
        _require(self.tau > 0, "tau", "must be > 0")
        _require(self.xi >= 0, "xi", "must be >= 0")
        _require(self.m >= 0, "m", "must be >= 0")
        _require(self.n >= 0, "n", "must be >= 0")
        _require(self.kd_droop > 0, "kd_droop", "must be > 0")
        _require(self.omega0 > 0, "omega0", "must be > 0")
        f = self.active_filter
        if f is not None:
            _require(
                f.num.degree < f.den.degree, "active_filter", "must be strictly proper"
            )
            _require(
                abs(f.dc_gain() - 1.0) < 1e-9, "active_filter", "must have unit DC gain"
            )

    def filter_tf(self) -> TransferFunction:
        if self.active_filter is not None:
            return self.active_filter
        return TransferFunction([1.0], [1.0, self.tau])


ControllerParams = Union[DroopParams, VsgParams, UdcParams]


@dataclass(frozen=True)
class ControllerState:
    x_filter_p: float = 0.0  # W
    x_filter_q: float = 0.0  # var
    omega: float = OMEGA_NOMINAL
    theta: float = 0.0
    v: float = V_RATED
    x_aux: tuple[float, ...] = ()  # extra states of a designed active filter


class Derivatives(NamedTuple):
    dx_filter_p: float
    dx_filter_q: float
    dx_aux: tuple[float, ...]
    domega: Optional[float]  # None when omega is an algebraic output
    dtheta: float
    omega: float
    v: float


def solve_coupling(a: float, b: float, m: float, n: float) -> tuple[float, float]:
    """Solve ``omega = a - m v``, ``v = b + n omega`` simultaneously.

    ``a`` and ``b`` collect every term that does not depend on the other
    output (the references and ``+m v_ref`` / ``-n omega_ref``).
    """
    det = 1.0 + m * n
    if abs(det) < 1e-12:
        raise SingularCoupling(f"coupling determinant 1 + m*n = {det:g}")
    return (a - m * b) / det, (b + n * a) / det


# --- flat kernels ---------------------------------------------------------


class DroopLaw:
    """state = [x_p, x_q]: low-pass filtered P and Q."""

    def __init__(self, p: DroopParams):
        self.p = p
        self.n_states = 2
        self._inv_tau = 1.0 / p.tau

    def outputs(self, x):
        p = self.p
        a = p.omega_ref - p.kp_droop * (x[0] - p.p_ref) + p.m * p.v_ref
        b = p.v_ref - p.kd_droop * (x[1] - p.q_ref) - p.n * p.omega_ref
        return solve_coupling(a, b, p.m, p.n)

    def rates(self, x, omega, v, P, Q):
        k = self._inv_tau
        return [(P - x[0]) * k, (Q - x[1]) * k]


class UdcLaw:
    """state = [z_1 .. z_n, x_q]; the active filter output is ``z_n``."""

    def __init__(self, p: UdcParams):
        self.p = p
        ss = tf_to_statespace(p.filter_tf())
        # observable canonical form (dual), output is the last state
        self._A = ss.A.T.tolist()
        self._B = ss.C[0].tolist()
        self.n_filter = ss.order
        self.n_states = ss.order + 1
        self._inv_tau = 1.0 / p.tau

    def outputs(self, x):
        p = self.p
        y = x[self.n_filter - 1]
        a = p.omega0 + p.kp_droop * y + p.m * p.v_ref
        b = p.v_ref - p.kd_droop * (x[-1] - p.q_ref) - p.n * p.omega_ref
        return solve_coupling(a, b, p.m, p.n)

    def rates(self, x, omega, v, P, Q):
        p = self.p
        u = p.p_ref + p.xi * (p.omega_ref - omega) - P
        nf = self.n_filter
        out = []
        for i in range(nf):
            row = self._A[i]
            acc = self._B[i] * u
            for j in range(nf):
                acc += row[j] * x[j]
            out.append(acc)
        out.append((Q - x[-1]) * self._inv_tau)
        return out


class VsgLaw:
    """state = [g, omega] with a filtered governor, [omega] with a static one."""

    def __init__(self, p: VsgParams, v: float = V_RATED):
        self.p = p
        self.v = v
        self.filtered = p.tau > 0
        self.n_states = 2 if self.filtered else 1

    def outputs(self, x):
        return x[-1], self.v

    def governor(self, x, omega):
        p = self.p
        if self.filtered:
            return x[0]
        return p.k_omega * (p.omega_ref - omega)

    def rates(self, x, omega, v, P, Q):
        p = self.p
        if omega <= 0:
            raise NonPhysicalFrequency(f"omega = {omega:g} rad/s")
        g = self.governor(x, omega)
        domega = ((p.p_ref + g - P) - p.d * (omega - p.omega0)) / (p.j * omega)
        if self.filtered:
            dg = (p.k_omega * (p.omega_ref - omega) - g) / p.tau
            return [dg, domega]
        return [domega]


def make_law(params: ControllerParams, v: float = V_RATED):
    if isinstance(params, DroopParams):
        return DroopLaw(params)
    if isinstance(params, UdcParams):
        return UdcLaw(params)
    if isinstance(params, VsgParams):
        return VsgLaw(params, v)
    raise TypeError(f"unknown controller parameters {type(params).__name__}")


def pack_state(law, st: ControllerState) -> list[float]:
    if isinstance(law, DroopLaw):
        return [st.x_filter_p, st.x_filter_q]
    if isinstance(law, UdcLaw):
        aux = list(st.x_aux)
        if len(aux) != law.n_filter - 1:
            raise ValueError(f"expected {law.n_filter - 1} auxiliary filter states")
        return aux + [st.x_filter_p, st.x_filter_q]
    if law.filtered:
        return [st.x_filter_p, st.omega]
    return [st.omega]


def unpack_state(law, x, theta: float) -> ControllerState:
    omega, v = law.outputs(x)
    if isinstance(law, DroopLaw):
        return ControllerState(x[0], x[1], omega, theta, v)
    if isinstance(law, UdcLaw):
        nf = law.n_filter
        return ControllerState(x[nf - 1], x[-1], omega, theta, v, tuple(x[: nf - 1]))
    return ControllerState(law.governor(x, omega), 0.0, omega, theta, v)


# --- public derivative functions -----------------------------------------


def _check_finite(*vals):
    if not all(math.isfinite(v) for v in vals):
        raise ValueError("measured power must be finite")


def droop_derivatives(p: DroopParams, st: ControllerState, meas_P: float, meas_Q: float) -> Derivatives:
    _check_finite(meas_P, meas_Q)
    law = DroopLaw(p)
    x = pack_state(law, st)
    omega, v = law.outputs(x)
    dx = law.rates(x, omega, v, meas_P, meas_Q)
    return Derivatives(dx[0], dx[1], (), None, omega, omega, v)


def udc_derivatives(p: UdcParams, st: ControllerState, meas_P: float, meas_Q: float) -> Derivatives:
    _check_finite(meas_P, meas_Q)
    law = UdcLaw(p)
    x = pack_state(law, st)
    omega, v = law.outputs(x)
    dx = law.rates(x, omega, v, meas_P, meas_Q)
    nf = law.n_filter
    return Derivatives(dx[nf - 1], dx[-1], tuple(dx[: nf - 1]), None, omega, omega, v)


def vsg_derivatives(p: VsgParams, st: ControllerState, meas_P: float) -> Derivatives:
    _check_finite(meas_P)
    if st.omega <= 0:
        raise NonPhysicalFrequency(f"omega = {st.omega:g} rad/s")
    law = VsgLaw(p, st.v)
    x = pack_state(law, st)
    dx = law.rates(x, st.omega, st.v, meas_P, 0.0)
    dg = dx[0] if law.filtered else 0.0
    return Derivatives(dg, 0.0, (), dx[-1], st.omega, st.omega, st.v)


def controller_derivatives(params: ControllerParams, st: ControllerState, meas_P: float, meas_Q: float = 0.0) -> Derivatives:
    if isinstance(params, DroopParams):
        return droop_derivatives(params, st, meas_P, meas_Q)
    if isinstance(params, UdcParams):
        return udc_derivatives(params, st, meas_P, meas_Q)
    return vsg_derivatives(params, st, meas_P)


# --- parameter maps --------------------------------------------------------


def map_droop_to_vsg(p: UdcParams) -> VsgParams:
    """VSG sharing the UDC active-power loop.

    Matching the ``s`` coefficient gives ``J omega0 = tau / K_P``; the damping
    takes the governor coefficient and the (static, unfiltered) VSG governor
    takes the droop stiffness ``1/K_P``.  The two laws then coincide exactly
    when ``omega_ref == omega0`` and ``m == 0``, up to the ``1/omega`` factor
    of the swing equation.
    """
    if p.active_filter is not None:
        raise ValueError("only the first-order UDC filter has a VSG equivalent")
    if not (p.kp_droop > 0 and p.tau > 0 and p.omega0 > 0):
        raise ValueError("kp_droop, tau and omega0 must be positive")
    return VsgParams(
        j=p.tau / (p.kp_droop * p.omega0),
        d=p.xi,
        k_omega=1.0 / p.kp_droop,
        tau=0.0,
        omega0=p.omega0,
        omega_ref=p.omega_ref,
        p_ref=p.p_ref,
    )


def map_vsg_to_droop(p: VsgParams, base: Optional[UdcParams] = None) -> UdcParams:
    """Inverse of :func:`map_droop_to_vsg` (requires a static governor)."""
    if p.tau != 0.0 or p.k_omega <= 0:
        raise ValueError("inverse map needs a static governor with k_omega > 0")
    kp = 1.0 / p.k_omega
    base = base or UdcParams()
    return replace(
        base,
        kp_droop=kp,
        tau=p.j * p.omega0 * kp,
        xi=p.d,
        m=0.0,
        omega0=p.omega0,
        omega_ref=p.omega_ref,
        p_ref=p.p_ref,
        active_filter=None,
    )


def udc_from_design(dp: DesignParams, plant: PlantParams, base: Optional[UdcParams] = None) -> UdcParams:
    """UDC whose grid-connected small-signal loop equals the design model.

    The designed shape becomes the active filter, its gain the droop
    coefficient, and ``beta`` is realised by the governor:
    ``xi = beta * E0 V0 / X``.
    """
    base = base or UdcParams()
    return replace(
        base,
        kp_droop=dp.gain,
        xi=dp.beta * linearized_gain(plant),
        active_filter=design_target(dp),
    )


# --- linearization --------------------------------------------------------


def equilibrium_residual(params: ControllerParams, st: ControllerState, meas_P: float, meas_Q: float) -> float:
    d = controller_derivatives(params, st, meas_P, meas_Q)
    rates = [d.dx_filter_p, d.dx_filter_q, *d.dx_aux]
    if d.domega is not None:
        rates.append(d.domega)
    return max(abs(r) for r in rates)


def linearize_controller(
    params: ControllerParams,
    operating_point: ControllerState,
    meas_P: Optional[float] = None,
    meas_Q: Optional[float] = None,
) -> LoopFunctions:
    """Small-signal active-power loop in power-balance form.

    The frequency deviation obeys
    ``dw = g_l * (g_b * (dP_ref - dP) - g_f * dw)`` with reactive power held
    constant.  ``g_l`` carries the inertia (or filter) path, ``g_f`` the
    frequency stiffness (droop plus governor), ``g_b`` is unity.
    """
    P = params.p_ref if meas_P is None else meas_P
    Q = getattr(params, "q_ref", 0.0) if meas_Q is None else meas_Q
    res = equilibrium_residual(params, operating_point, P, Q)
    scale = max(1.0, abs(P), abs(Q), abs(operating_point.omega))
    if isinstance(params, UdcParams):
        # filter rates cancel terms of size |A| |z|
        law = UdcLaw(params)
        x = pack_state(law, operating_point)
        amax = max(abs(a) for row in law._A for a in row)
        scale = max(scale, amax * max(abs(z) for z in x[: law.n_filter]))
    if res > 1e-9 * scale:
        raise NotAnEquilibrium(f"largest state rate {res:.3g} at the operating point")

    one = TransferFunction.gain(1.0)
    if isinstance(params, VsgParams):
        m_inertia = params.j * operating_point.omega
        g_l = TransferFunction([1.0], [0.0, m_inertia])
        if params.tau > 0:
            gov = TransferFunction([params.k_omega], [1.0, params.tau])
        else:
            gov = TransferFunction.gain(params.k_omega)
        return LoopFunctions(g_f=gov + params.d, g_l=g_l, g_b=one)

    k_eff = params.kp_droop / (1.0 + params.m * params.n)
    if isinstance(params, DroopParams):
        g_l = TransferFunction([k_eff], [0.0, params.tau])
        return LoopFunctions(g_f=TransferFunction.gain(1.0 / k_eff), g_l=g_l, g_b=one)

    f = params.filter_tf()
    num, den = np.asarray(f.num.coeffs), np.asarray(f.den.coeffs)
    diff = np.zeros(len(den))
    diff[:] = den
    diff[: len(num)] -= num
    rest = Polynomial(diff[1:])  # (den - num) / s, exact since DC gain is 1
    g_l = TransferFunction(Polynomial(num).scale(k_eff), Polynomial([0.0, 1.0]) * rest)
    return LoopFunctions(g_f=TransferFunction.gain(1.0 / k_eff + params.xi), g_l=g_l, g_b=one)
