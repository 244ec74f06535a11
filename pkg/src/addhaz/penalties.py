"""Folded-concave penalty families and their univariate thresholding rules.

Every penalty is written in the lambda-scaled form ``p_lam(theta)``. The
scalar kernels are numba-compiled so the coordinate descent loop can call
them without leaving compiled code; they take an integer penalty code plus
the shape parameters instead of a :class:`PenaltySpec`.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np
from numba import njit

L1, SCAD, MCP, SICA, ENET = 0, 1, 2, 3, 4

# ties between zero and a nonzero minimiser go to zero
TIE_TOL = 1e-12


class PenaltyKind(str, enum.Enum):
    L1 = "lasso"
    SCAD = "scad"
    MCP = "mcp"
    SICA = "sica"
    ENET = "enet"


_CODES = {PenaltyKind.L1: L1, PenaltyKind.SCAD: SCAD, PenaltyKind.MCP: MCP,
          PenaltyKind.SICA: SICA, PenaltyKind.ENET: ENET}

DEFAULT_A = {PenaltyKind.SCAD: 3.7, PenaltyKind.MCP: 3.7, PenaltyKind.SICA: 0.1}


class PenaltyError(ValueError):
    pass


@dataclass(frozen=True)
class PenaltySpec:
    """Penalty family with its shape parameters.

    ``shape_a`` is the SCAD/MCP/SICA shape (ignored for L1 and elastic net);
    ``enet_alpha`` is the L1 share of the elastic net
    ``lam * (alpha * |t| + (1 - alpha) * t**2 / 2)``.
    """

    kind: PenaltyKind
    shape_a: float = float("nan")
    enet_alpha: float = 0.5

    def __post_init__(self):
        try:
            kind = PenaltyKind(self.kind)
        except ValueError:
            raise PenaltyError(f"unknown penalty kind {self.kind!r}") from None
        object.__setattr__(self, "kind", kind)
        a = float(self.shape_a)
        if kind in DEFAULT_A and math.isnan(a):
            a = DEFAULT_A[kind]
        object.__setattr__(self, "shape_a", a)
        if kind is PenaltyKind.SCAD and not a > 2:
            raise PenaltyError(f"SCAD requires a > 2, got a = {a}")
        if kind is PenaltyKind.MCP and not a > 1:
            raise PenaltyError(f"MCP requires a > 1, got a = {a}")
        if kind is PenaltyKind.SICA and not (a > 0 and math.isfinite(a)):
            raise PenaltyError(f"SICA requires a > 0, got a = {a}")
        if kind is PenaltyKind.ENET and not 0 < self.enet_alpha <= 1:
            raise PenaltyError(f"elastic net alpha must lie in (0, 1], got {self.enet_alpha}")

    @classmethod
    def lasso(cls):
        return cls(PenaltyKind.L1)

    @classmethod
    def scad(cls, a=3.7):
        return cls(PenaltyKind.SCAD, a)

    @classmethod
    def mcp(cls, a=3.7):
        return cls(PenaltyKind.MCP, a)

    @classmethod
    def sica(cls, a=0.1):
        return cls(PenaltyKind.SICA, a)

    @classmethod
    def enet(cls, alpha=0.5):
        return cls(PenaltyKind.ENET, enet_alpha=alpha)

    @property
    def code(self) -> int:
        return _CODES[self.kind]

    @property
    def params(self):
        """``(code, a, alpha)`` triple accepted by the compiled kernels."""
        a = 0.0 if math.isnan(self.shape_a) else self.shape_a
        return self.code, a, float(self.enet_alpha)

    def with_a(self, a) -> "PenaltySpec":
        return PenaltySpec(self.kind, a, self.enet_alpha)

    @property
    def label(self) -> str:
        if self.kind in (PenaltyKind.SCAD, PenaltyKind.MCP, PenaltyKind.SICA):
            return f"{self.kind.value}(a={self.shape_a:g})"
        if self.kind is PenaltyKind.ENET:
            return f"enet(alpha={self.enet_alpha:g})"
        return "lasso"


# ---------------------------------------------------------------------------
# compiled scalar kernels
# ---------------------------------------------------------------------------

@njit(cache=True)
def _value(code, a, alpha, theta, lam):
    if code == L1:
        return lam * theta
    if code == SCAD:
        if theta <= lam:
            return lam * theta
        if theta <= a * lam:
            return (2.0 * a * lam * theta - theta * theta - lam * lam) / (2.0 * (a - 1.0))
        return lam * lam * (a + 1.0) / 2.0
    if code == MCP:
        if theta <= a * lam:
            return lam * theta - theta * theta / (2.0 * a)
        return a * lam * lam / 2.0
    if code == SICA:
        return lam * (a + 1.0) * theta / (a + theta)
    return lam * (alpha * theta + (1.0 - alpha) * theta * theta / 2.0)


@njit(cache=True)
def _derivative(code, a, alpha, theta, lam):
    if code == L1:
        return lam
    if code == SCAD:
        if theta <= lam:
            return lam
        return max(a * lam - theta, 0.0) / (a - 1.0)
    if code == MCP:
        return max(a * lam - theta, 0.0) / a
    if code == SICA:
        return lam * a * (a + 1.0) / ((a + theta) * (a + theta))
    return lam * (alpha + (1.0 - alpha) * theta)


@njit(cache=True)
def _soft(z, t):
    if z > t:
        return z - t
    if z < -t:
        return z + t
    return 0.0


@njit(cache=True)
def _sica_prox(z, lam, a):
    x = abs(z)
    if x == 0.0 or lam == 0.0:
        return z
    c2 = 2.0 * a - x
    c1 = a * a - 2.0 * a * x
    c0 = lam * a * (a + 1.0) - a * a * x
    q = (c2 * c2 - 3.0 * c1) / 9.0
    r = (2.0 * c2 ** 3 - 9.0 * c1 * c2 + 27.0 * c0) / 54.0
    q3 = q * q * q
    if q3 <= r * r:
        # one real root (Cardano); rounding can land here when lam is tiny
        # and the pair near -a merges, so the root may still be positive
        big = -math.copysign((abs(r) + math.sqrt(r * r - q3)) ** (1.0 / 3.0), r)
        small = q / big if big != 0.0 else 0.0
        t = big + small - c2 / 3.0
        if t <= 0.0:
            return 0.0
        return _sica_accept(_sica_polish(t, c2, c1, c0), x, lam, a, z)
    sq = math.sqrt(q)
    ratio = min(1.0, max(-1.0, r / math.sqrt(q3)))
    ang = math.acos(ratio)
    t1 = -2.0 * sq * math.cos((ang - 2.0 * math.pi) / 3.0) - c2 / 3.0
    t2 = -2.0 * sq * math.cos((ang + 2.0 * math.pi) / 3.0) - c2 / 3.0
    if t2 <= 0.0:
        return 0.0
    t2 = _sica_polish(t2, c2, c1, c0)
    if t1 > 0.0:
        return _sica_accept(t2, x, lam, a, z)
    return math.copysign(t2, z)


@njit(cache=True)
def _sica_polish(t, c2, c1, c0):
    """Newton steps on the stationarity cubic; only improving steps are kept."""
    for _ in range(2):
        g = ((t + c2) * t + c1) * t + c0
        dg = (3.0 * t + 2.0 * c2) * t + c1
        if dg <= 0.0:
            break
        cand = t - g / dg
        gc = ((cand + c2) * cand + c1) * cand + c0
        if cand > 0.0 and abs(gc) < abs(g):
            t = cand
        else:
            break
    return t


@njit(cache=True)
def _sica_accept(t, x, lam, a, z):
    # objective(t) - objective(0) = t * gap; ties go to zero
    gap = t / 2.0 + lam * (a + 1.0) / (a + t) - x
    if t * gap < -TIE_TOL:
        return math.copysign(t, z)
    return 0.0


@njit(cache=True)
def _prox(code, a, alpha, z, lam):
    """Global minimiser of 0.5 * (theta - z)**2 + p_lam(|theta|)."""
    if code == L1:
        return _soft(z, lam)
    if code == SCAD:
        x = abs(z)
        if x <= 2.0 * lam:
            return _soft(z, lam)
        if x <= a * lam:
            return ((a - 1.0) * z - math.copysign(a * lam, z)) / (a - 2.0)
        return z
    if code == MCP:
        if abs(z) <= a * lam:
            return _soft(z, lam) * a / (a - 1.0)
        return z
    if code == SICA:
        return _sica_prox(z, lam, a)
    return _soft(z, lam * alpha) / (1.0 + lam * (1.0 - alpha))


@njit(cache=True)
def _weighted_penalty(code, a, alpha, beta, weights, lam):
    total = 0.0
    for j in range(beta.shape[0]):
        if beta[j] != 0.0:
            total += weights[j] * _value(code, a, alpha, abs(beta[j]), lam)
    return total


# ---------------------------------------------------------------------------
# public API
# ---------------------------------------------------------------------------

def penalty_value(spec: PenaltySpec, theta, lam) -> float:
    """``p_lam(theta)`` for ``theta >= 0``."""
    if theta < 0 or lam < 0:
        raise PenaltyError("penalty_value needs theta >= 0 and lambda >= 0")
    return float(_value(*spec.params, float(theta), float(lam)))


def penalty_derivative(spec: PenaltySpec, theta, lam) -> float:
    """``p_lam'(theta)`` for ``theta > 0``."""
    if not theta > 0:
        raise PenaltyError("penalty_derivative needs theta > 0")
    if lam < 0:
        raise PenaltyError("lambda must be nonnegative")
    return float(_derivative(*spec.params, float(theta), float(lam)))


def max_concavity(spec: PenaltySpec, lam) -> float:
    """Largest negative slope of ``p_lam'`` on ``(0, inf)``."""
    a = spec.shape_a
    if spec.kind is PenaltyKind.SCAD:
        return 1.0 / (a - 1.0)
    if spec.kind is PenaltyKind.MCP:
        return 1.0 / a
    if spec.kind is PenaltyKind.SICA:
        return 2.0 * lam * (1.0 / a + 1.0 / a ** 2)
    return 0.0


def univariate_minimize(spec: PenaltySpec, theta0, lam) -> float:
    """Minimise ``0.5 * (theta - theta0)**2 + p_lam(|theta|)`` over theta."""
    if not math.isfinite(theta0):
        raise PenaltyError("theta0 must be finite")
    if lam < 0:
        raise PenaltyError("lambda must be nonnegative")
    return float(_prox(*spec.params, float(theta0), float(lam)))


def univariate_objective(spec: PenaltySpec, theta, theta0, lam) -> float:
    return 0.5 * (theta - theta0) ** 2 + float(_value(*spec.params, abs(float(theta)), float(lam)))


def weighted_penalty(spec: PenaltySpec, beta, weights, lam) -> float:
    """``sum_j weights[j] * p_lam(|beta_j|)``."""
    return float(_weighted_penalty(*spec.params, np.asarray(beta, dtype=float),
                                   np.asarray(weights, dtype=float), float(lam)))
