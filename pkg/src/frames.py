"""
Reference-frame transforms: three-phase ↔ α-β (Clarke) ↔ d-q (Park).

Clarke uses the amplitude-invariant 2/3 scaling, so a 1 pu phase peak maps
to |v_αβ| = 1 pu. Angles are canonicalised to [−π, π).
"""

import math
from typing import NamedTuple

import numpy as np

from src.utils.errors import UndefinedAngleError

SQRT3 = math.sqrt(3.0)
TWO_PI = 2.0 * math.pi

Angle = float


class ThreePhase(NamedTuple):
    a: float
    b: float
    c: float


class AlphaBetaPair(NamedTuple):
    alpha: float
    beta: float

    @classmethod
    def from_complex(cls, z: complex) -> "AlphaBetaPair":
        return cls(z.real, z.imag)

    @classmethod
    def polar(cls, magnitude: float, angle: Angle) -> "AlphaBetaPair":
        return cls(magnitude * math.cos(angle), magnitude * math.sin(angle))

    def to_complex(self) -> complex:
        return complex(self.alpha, self.beta)

    def to_array(self) -> np.ndarray:
        return np.array([self.alpha, self.beta])

    def norm(self) -> float:
        return math.hypot(self.alpha, self.beta)


class DqPair(NamedTuple):
    d: float
    q: float

    @classmethod
    def from_complex(cls, z: complex) -> "DqPair":
        return cls(z.real, z.imag)

    @classmethod
    def polar(cls, magnitude: float, angle: Angle) -> "DqPair":
        return cls(magnitude * math.cos(angle), magnitude * math.sin(angle))

    def to_complex(self) -> complex:
        return complex(self.d, self.q)

    def to_array(self) -> np.ndarray:
        return np.array([self.d, self.q])

    def norm(self) -> float:
        return math.hypot(self.d, self.q)


ZERO_AB = AlphaBetaPair(0.0, 0.0)
ZERO_DQ = DqPair(0.0, 0.0)


def wrap_angle(x: float) -> Angle:
    """Reduce an angle to [−π, π)"""
    r = math.fmod(x + math.pi, TWO_PI)
    if r < 0.0:
        r += TWO_PI
    r -= math.pi
    if r >= math.pi:
        r -= TWO_PI
    return r


def clarke(v: ThreePhase) -> AlphaBetaPair:
    alpha = (2.0 / 3.0) * (v.a - 0.5 * v.b - 0.5 * v.c)
    beta = (v.b - v.c) / SQRT3
    return AlphaBetaPair(alpha, beta)


def inv_clarke(v: AlphaBetaPair) -> ThreePhase:
    a = v.alpha
    b = -0.5 * v.alpha + 0.5 * SQRT3 * v.beta
    c = -0.5 * v.alpha - 0.5 * SQRT3 * v.beta
    return ThreePhase(a, b, c)


def park(v: AlphaBetaPair, theta: Angle) -> DqPair:
    # d-axis aligned with α at θ = 0
    cos_t = math.cos(theta)
    sin_t = math.sin(theta)
    return DqPair(v.alpha * cos_t + v.beta * sin_t, -v.alpha * sin_t + v.beta * cos_t)


def inv_park(v: DqPair, theta: Angle) -> AlphaBetaPair:
    cos_t = math.cos(theta)
    sin_t = math.sin(theta)
    return AlphaBetaPair(v.d * cos_t - v.q * sin_t, v.d * sin_t + v.q * cos_t)


def phase_of(v: AlphaBetaPair) -> Angle:
    """Four-quadrant angle of (α, β)"""
    if v.alpha == 0.0 and v.beta == 0.0:
        raise UndefinedAngleError("phase of the zero vector is undefined")
    return wrap_angle(math.atan2(v.beta, v.alpha))


def rotation_matrix(angle: Angle) -> np.ndarray:
    c = math.cos(angle)
    s = math.sin(angle)
    return np.array([[c, -s], [s, c]])


def rotation_generator(omega: float) -> np.ndarray:
    """Generator of dx/dt = [[0, −ω], [ω, 0]] x"""
    return np.array([[0.0, -omega], [omega, 0.0]])


def impedance_matrix(resistance: float, reactance: float) -> np.ndarray:
    """Real 2×2 form of (R + jX)·i acting on an α-β or d-q pair"""
    return np.array([[resistance, -reactance], [reactance, resistance]])
