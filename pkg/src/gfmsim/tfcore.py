"""Polynomial and transfer-function algebra in the Laplace variable.

Coefficients are stored in ascending powers of ``s`` so that factored forms
like ``(1 + sT)`` read directly as ``[1, T]``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.linalg import matrix_balance

from .errors import DegenerateLoop, ImproperTransferFunction, NumericalFailure

# relative threshold below which coefficients are treated as zero
COEFF_RTOL = 1e-12
# imaginary parts below this fraction of |root| are round-off; a triple
# real root splits by about eps**(1/3) ~ 6e-6
REAL_SNAP = 2e-5


def _strip(coeffs: Sequence[float], rtol: float = COEFF_RTOL) -> tuple[float, ...]:
    c = [float(x) for x in coeffs]
    if not c:
        return (0.0,)
    scale = max(abs(x) for x in c)
    if scale == 0.0:
        return (0.0,)
    tol = rtol * scale
    c = [0.0 if abs(x) < tol else x for x in c]
    while len(c) > 1 and c[-1] == 0.0:
        c.pop()
    return tuple(c)


@dataclass(frozen=True)
class Polynomial:
    """Real polynomial, ``coeffs[k]`` multiplies ``s**k``."""

    coeffs: tuple[float, ...]

    def __init__(self, coeffs):
        if isinstance(coeffs, (int, float)):
            coeffs = [coeffs]
        object.__setattr__(self, "coeffs", _strip(coeffs))

    @property
    def degree(self) -> int:
        return len(self.coeffs) - 1

    @property
    def is_zero(self) -> bool:
        return self.coeffs == (0.0,)

    @property
    def leading(self) -> float:
        return self.coeffs[-1]

    def __call__(self, s):
        return np.polynomial.polynomial.polyval(s, self.coeffs)

    def __add__(self, other: "Polynomial") -> "Polynomial":
        return poly_add(self, other)

    def __mul__(self, other: "Polynomial") -> "Polynomial":
        return poly_mul(self, other)

    def scale(self, k: float) -> "Polynomial":
        return Polynomial([k * c for c in self.coeffs])


def poly_mul(a: Polynomial, b: Polynomial) -> Polynomial:
    return Polynomial(np.convolve(a.coeffs, b.coeffs))


def poly_add(a: Polynomial, b: Polynomial) -> Polynomial:
    n = max(len(a.coeffs), len(b.coeffs))
    out = np.zeros(n)
    out[: len(a.coeffs)] += a.coeffs
    out[: len(b.coeffs)] += b.coeffs
    return Polynomial(out)


def poly_roots(p: Polynomial) -> np.ndarray:
    """Roots of ``p`` from the eigenvalues of its balanced companion matrix."""
    n = p.degree
    if n < 1:
        return np.zeros(0, dtype=complex)
    monic = np.asarray(p.coeffs[:-1]) / p.leading
    comp = np.zeros((n, n))
    comp[1:, :-1] = np.eye(n - 1)
    comp[:, -1] = -monic
    try:
        balanced, _ = matrix_balance(comp, permute=False)
        roots = np.linalg.eigvals(balanced)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise NumericalFailure(f"companion eigenvalue iteration failed: {exc}") from exc
    if not np.all(np.isfinite(roots)):
        resid = float(np.max(np.abs(p(roots[np.isfinite(roots)])), initial=np.inf))
        raise NumericalFailure(f"non-finite roots (residual {resid:.3g})")
    # repeated real roots come back as near-real conjugate pairs
    tiny = np.abs(roots.imag) <= REAL_SNAP * np.maximum(1.0, np.abs(roots))
    return np.where(tiny, roots.real + 0j, roots)


def _sort_desc(z: np.ndarray) -> list[complex]:
    return sorted((complex(x) for x in z), key=lambda c: (-c.real, -c.imag))


@dataclass(frozen=True)
class TransferFunction:
    """Rational function ``num(s) / den(s)`` with a monic denominator."""

    num: Polynomial
    den: Polynomial

    def __init__(self, num, den=1.0):
        num = num if isinstance(num, Polynomial) else Polynomial(num)
        den = den if isinstance(den, Polynomial) else Polynomial(den)
        if den.is_zero:
            raise ZeroDivisionError("transfer function denominator is the zero polynomial")
        lead = den.leading
        object.__setattr__(self, "num", num.scale(1.0 / lead))
        object.__setattr__(self, "den", den.scale(1.0 / lead))

    @classmethod
    def gain(cls, k: float) -> "TransferFunction":
        return cls([k], [1.0])

    @property
    def is_proper(self) -> bool:
        return self.num.is_zero or self.num.degree <= self.den.degree

    def __call__(self, s):
        return self.num(s) / self.den(s)

    def dc_gain(self) -> float:
        return float(self.num(0.0) / self.den(0.0))

    def poles(self) -> list[complex]:
        return tf_poles(self)

    def zeros(self) -> list[complex]:
        if self.num.is_zero:
            return []
        return _sort_desc(poly_roots(self.num))

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            other = TransferFunction.gain(other)
        return tf_series(self, other)

    __rmul__ = __mul__

    def __add__(self, other):
        if isinstance(other, (int, float)):
            other = TransferFunction.gain(other)
        return tf_parallel(self, other)

    __radd__ = __add__

    def __neg__(self):
        return TransferFunction(self.num.scale(-1.0), self.den)

    def __repr__(self):
        return f"TransferFunction(num={list(self.num.coeffs)}, den={list(self.den.coeffs)})"


@dataclass(frozen=True)
class StateSpace:
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: float

    @property
    def order(self) -> int:
        return self.A.shape[0]

    def freqresp(self, s: complex) -> complex:
        n = self.order
        if n == 0:
            return complex(self.D)
        x = np.linalg.solve(s * np.eye(n) - self.A, self.B)
        return complex((self.C @ x).item() + self.D)


def tf_series(g1: TransferFunction, g2: TransferFunction) -> TransferFunction:
    return TransferFunction(g1.num * g2.num, g1.den * g2.den)


def tf_parallel(g1: TransferFunction, g2: TransferFunction) -> TransferFunction:
    return TransferFunction(g1.num * g2.den + g2.num * g1.den, g1.den * g2.den)


def tf_feedback(forward: TransferFunction, back: TransferFunction) -> TransferFunction:
    """Negative-feedback loop ``forward / (1 + forward * back)``."""
    # forward = nf/df, back = nb/db  ->  nf*db / (df*db + nf*nb)
    den = forward.den * back.den + forward.num * back.num
    if den.is_zero:
        raise DegenerateLoop("1 + forward*back is identically zero")
    return TransferFunction(forward.num * back.den, den)


def tf_poles(g: TransferFunction) -> list[complex]:
    if g.den.degree < 1:
        raise ValueError("transfer function has no poles (constant denominator)")
    return _sort_desc(poly_roots(g.den))


def tf_to_statespace(g: TransferFunction) -> StateSpace:
    """Controllable canonical realization of a proper transfer function."""
    if not g.is_proper:
        raise ImproperTransferFunction(
            f"deg(num)={g.num.degree} > deg(den)={g.den.degree}"
        )
    a = np.asarray(g.den.coeffs)  # monic, ascending
    n = len(a) - 1
    b = np.zeros(n + 1)
    b[: len(g.num.coeffs)] = g.num.coeffs
    d = b[n]
    A = np.zeros((n, n))
    if n:
        A[:-1, 1:] = np.eye(n - 1)
        A[-1, :] = -a[:n]
    B = np.zeros((n, 1))
    if n:
        B[-1, 0] = 1.0
    C = (b[:n] - d * a[:n]).reshape(1, n)
    return StateSpace(A, B, C, float(d))


def rk4_lti_matrices(A: np.ndarray, B: np.ndarray, dt: float) -> tuple[np.ndarray, np.ndarray]:
    """One classical RK4 step of ``x' = A x + B u`` with ``u`` held constant.

    For a linear system the four stages collapse to ``x+ = M x + N u``.
    """
    n = A.shape[0]
    hA = dt * A
    hA2 = hA @ hA
    hA3 = hA2 @ hA
    eye = np.eye(n)
    M = eye + hA + hA2 / 2.0 + hA3 / 6.0 + hA3 @ hA / 24.0
    N = dt * (eye + hA / 2.0 + hA2 / 6.0 + hA3 / 24.0) @ B
    return M, N


def step_response(g: TransferFunction, t_end: float, dt: float) -> tuple[np.ndarray, np.ndarray]:
    """Unit-step response sampled at ``k*dt``, ``k = 0..round(t_end/dt)``."""
    if dt <= 0 or t_end <= dt:
        raise ValueError("need dt > 0 and t_end > dt")
    ss = tf_to_statespace(g)
    nsteps = int(round(t_end / dt))
    t = np.arange(nsteps + 1) * dt
    y = np.empty(nsteps + 1)
    if ss.order == 0:
        y[:] = ss.D
        return t, y
    M, N = rk4_lti_matrices(ss.A, ss.B, dt)
    N = N[:, 0]
    c = ss.C[0]
    x = np.zeros(ss.order)
    for k in range(nsteps + 1):
        y[k] = c @ x + ss.D
        x = M @ x + N
    return t, y
