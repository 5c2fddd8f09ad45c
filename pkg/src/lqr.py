"""
LCL filter model in the synchronous d-q frame, equilibrium computation,
discrete LQR design and the saturated state-feedback law.

State ordering: x = [i_inv,d, i_inv,q, i_pcc,d, i_pcc,q, v_c,d, v_c,q],
input u = [v_inv,d, v_inv,q], disturbance w = [v_pcc,d, v_pcc,q].
The PCC voltage is left out of the LQR design and only enters the plant.
"""

import math
from dataclasses import dataclass, field
from typing import Dict, NamedTuple, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from src import numerics
from src.frames import DqPair, ZERO_DQ
from src.utils.errors import ConfigError, NumericalError, SingularityError
from src.utils.logger import logger

UNITS = ("pu", "si")
RESONANCE_TOL = 1e-6

# first gain row printed for the two reference weight sets
REFERENCE_GAINS: Dict[str, np.ndarray] = {
    "low_gain": np.array([0.426, 0.007, 0.002, 0.001, 0.034, 0.001]),
    "high_gain": np.array([5.292, 0.085, 0.317, 0.003, 0.943, 0.015]),
}


class LqrWeights(NamedTuple):
    """Q = diag(q1, q1, q2, q2, q3, q3), R = r·I₂"""

    q1: float
    q2: float
    q3: float
    r: float

    def Q(self) -> np.ndarray:
        return np.diag([self.q1, self.q1, self.q2, self.q2, self.q3, self.q3])

    def R(self) -> np.ndarray:
        return self.r * np.eye(2)


LOW_GAIN_WEIGHTS = LqrWeights(10.0, 10.0, 10.0, 1e-2)
HIGH_GAIN_WEIGHTS = LqrWeights(1e3, 1e3, 10.0, 1e-2)
REFERENCE_WEIGHTS = {"low_gain": LOW_GAIN_WEIGHTS, "high_gain": HIGH_GAIN_WEIGHTS}
# the reference gain rows come out of a design on SI filter values
REFERENCE_UNIT = "si"


@dataclass(frozen=True)
class LclParams:
    """
    LCL filter parameters.

    Stored in SI; ``unit`` selects whether the model matrices use SI values
    or per-unit values (L/Z_base, C·Z_base, time kept in seconds).
    Parasitic resistances r_f1, r_f2 are given in pu.
    """

    L_f1: float = 500e-6
    L_f2: float = 500e-6
    C_f: float = 100e-6
    omega_g: float = 2.0 * math.pi * 50.0
    v_base: float = 415.0
    s_base: float = 110e3
    unit: str = "pu"
    r_f1: float = 0.0
    r_f2: float = 0.0

    def __post_init__(self):
        for name in ("L_f1", "L_f2", "C_f", "omega_g", "v_base", "s_base"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise ConfigError(f"must be positive, got {value}", field=f"filter.{name}")
        if self.unit not in UNITS:
            raise ConfigError(f"unit must be one of {UNITS}, got {self.unit!r}", field="filter.unit")
        if self.r_f1 < 0 or self.r_f2 < 0:
            raise ConfigError("parasitic resistances must be non-negative", field="filter.r_f")

    @classmethod
    def from_si(
        cls,
        L_f1: float,
        L_f2: float,
        C_f: float,
        v_base: float = 415.0,
        s_base: float = 110e3,
        frequency: float = 50.0,
        unit: str = "pu",
        **kwargs,
    ) -> "LclParams":
        return cls(
            L_f1=L_f1,
            L_f2=L_f2,
            C_f=C_f,
            omega_g=2.0 * math.pi * frequency,
            v_base=v_base,
            s_base=s_base,
            unit=unit,
            **kwargs,
        )

    @property
    def z_base(self) -> float:
        return self.v_base**2 / self.s_base

    @property
    def _scale(self) -> float:
        return self.z_base if self.unit == "pu" else 1.0

    @property
    def l1(self) -> float:
        return self.L_f1 / self._scale

    @property
    def l2(self) -> float:
        return self.L_f2 / self._scale

    @property
    def c(self) -> float:
        return self.C_f * self._scale

    @property
    def r1(self) -> float:
        return self.r_f1 * (1.0 if self.unit == "pu" else self.z_base)

    @property
    def r2(self) -> float:
        return self.r_f2 * (1.0 if self.unit == "pu" else self.z_base)

    def reactance(self, inductance_si: float) -> float:
        """ω·L in pu"""
        return self.omega_g * inductance_si / self.z_base

    def susceptance(self, capacitance_si: float) -> float:
        """ω·C in pu"""
        return self.omega_g * capacitance_si * self.z_base

    def in_unit(self, unit: str) -> "LclParams":
        return LclParams(
            self.L_f1, self.L_f2, self.C_f, self.omega_g, self.v_base, self.s_base, unit, self.r_f1, self.r_f2
        )


def build_plant(p: LclParams) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Continuous d-q model dx/dt = A x + B1 v_inv + B2 v_pcc.

    Returns:
        (A 6×6, B1 6×2, B2 6×2)
    """
    w, l1, l2, c = p.omega_g, p.l1, p.l2, p.c
    A = np.zeros((6, 6))

    # inverter-side inductor
    A[0, 0] = -p.r1 / l1
    A[0, 1] = w
    A[0, 4] = -1.0 / l1
    A[1, 0] = -w
    A[1, 1] = -p.r1 / l1
    A[1, 5] = -1.0 / l1

    # grid-side inductor
    A[2, 2] = -p.r2 / l2
    A[2, 3] = w
    A[2, 4] = 1.0 / l2
    A[3, 2] = -w
    A[3, 3] = -p.r2 / l2
    A[3, 5] = 1.0 / l2

    # filter capacitor
    A[4, 0] = 1.0 / c
    A[4, 2] = -1.0 / c
    A[4, 5] = w
    A[5, 1] = 1.0 / c
    A[5, 3] = -1.0 / c
    A[5, 4] = -w

    B1 = np.zeros((6, 2))
    B1[0, 0] = B1[1, 1] = 1.0 / l1
    B2 = np.zeros((6, 2))
    B2[2, 0] = B2[3, 1] = -1.0 / l2
    return A, B1, B2


def continuous_dynamics(p: LclParams, x, u: DqPair, v_pcc: DqPair) -> np.ndarray:
    A, B1, B2 = build_plant(p)
    return A @ np.asarray(x, dtype=float) + B1 @ np.array(u) + B2 @ np.array(v_pcc)


@dataclass(frozen=True)
class EquilibriumPoint:
    x_bar: np.ndarray
    u_bar: np.ndarray

    @property
    def u(self) -> DqPair:
        return DqPair(float(self.u_bar[0]), float(self.u_bar[1]))

    @classmethod
    def zero(cls) -> "EquilibriumPoint":
        return cls(np.zeros(6), np.zeros(2))


def equilibrium(p: LclParams, i_inv_ref: DqPair, v_pcc_op: DqPair) -> EquilibriumPoint:
    """
    Steady operating point of the LCL filter for a reference inverter current
    and a PCC voltage, both constant in the d-q frame.

    Solved as phasors (d + jq) with the d-q rotation showing up as jω:
        v_c   = (v_pcc + z2·i_ref) / (1 + jωC·z2)
        i_pcc = i_ref − jωC·v_c
        u     = v_c + z1·i_ref
    where z_k = r_k + jωL_k.
    """
    w = p.omega_g
    i_ref = complex(*i_inv_ref)
    v_pcc = complex(*v_pcc_op)
    z1 = complex(p.r1, w * p.l1)
    z2 = complex(p.r2, w * p.l2)
    y_c = 1j * w * p.c

    denominator = 1.0 + y_c * z2
    if abs(denominator) < RESONANCE_TOL:
        logger.error(f"Equilibrium requested at the LC resonance (|1 + jωC·z2| = {abs(denominator):.3e})")
        raise SingularityError(
            "operating frequency sits on the grid-side LC resonance",
            {"denominator": abs(denominator)},
        )

    v_c = (v_pcc + z2 * i_ref) / denominator
    i_pcc = i_ref - y_c * v_c
    u = v_c + z1 * i_ref

    x_bar = np.array([i_ref.real, i_ref.imag, i_pcc.real, i_pcc.imag, v_c.real, v_c.imag])
    return EquilibriumPoint(x_bar=x_bar, u_bar=np.array([u.real, u.imag]))


@dataclass(frozen=True)
class LqrDesign:
    params: LclParams
    weights: LqrWeights
    Ts: float
    A: np.ndarray
    B1: np.ndarray
    B2: np.ndarray
    Ad: np.ndarray
    B1d: np.ndarray
    B2d: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    S: np.ndarray
    K: np.ndarray
    closed_loop: numerics.EigenSpectrum = field(repr=False)

    @property
    def spectral_radius(self) -> float:
        return self.closed_loop.spectral_radius


def design_lqr(p: LclParams, weights: Sequence[float], Ts: float, **dare_kwargs) -> LqrDesign:
    """
    Discrete LQR on the ZOH-discretized filter model.

    Args:
        p: filter parameters (their ``unit`` picks the design convention)
        weights: (q1, q2, q3, r)
        Ts: sampling period in seconds
        **dare_kwargs: forwarded to ``numerics.solve_dare``
    """
    weights = LqrWeights(*weights)
    if Ts <= 0:
        raise ConfigError(f"Ts must be positive, got {Ts}", field="ts")
    if min(weights.q1, weights.q2, weights.q3) < 0:
        raise ConfigError(f"state weights must be non-negative, got {tuple(weights)}", field="lqr.weights")
    if weights.r <= 0:
        raise ConfigError(f"input weight must be positive, got {weights.r}", field="lqr.weights.r")

    A, B1, B2 = build_plant(p)
    Ad, B1d = numerics.zoh_discretize(A, B1, Ts)
    _, B2d = numerics.zoh_discretize(A, B2, Ts)
    Q, R = weights.Q(), weights.R()

    S = numerics.solve_dare(Ad, B1d, Q, R, **dare_kwargs)
    K = numerics.lqr_gain(Ad, B1d, Q, R, S=S)
    closed_loop = numerics.eigvals(Ad - B1d @ K)
    if not closed_loop.is_schur_stable():
        logger.error(f"LQR design is not stabilising (spectral radius {closed_loop.spectral_radius:.6f})")
        raise NumericalError(
            "designed gain does not stabilise the discrete plant",
            {"spectral_radius": closed_loop.spectral_radius, "weights": tuple(weights)},
        )

    logger.info(
        f"✓ LQR designed ({p.unit}, q={weights.q1:g}/{weights.q2:g}/{weights.q3:g}, r={weights.r:g}): "
        f"spectral radius {closed_loop.spectral_radius:.6f}"
    )
    return LqrDesign(p, weights, Ts, A, B1, B2, Ad, B1d, B2d, Q, R, S, K, closed_loop)


def gain_in_pu(design: LqrDesign) -> np.ndarray:
    """Gain acting on pu states and producing pu voltages, whatever the design unit"""
    if design.params.unit == "pu":
        return design.K
    z_base = design.params.z_base
    # currents scale by I_base/V_base = 1/Z_base, voltages are unchanged
    return design.K @ np.diag([1.0 / z_base] * 4 + [1.0, 1.0])


def clamp_magnitude(u: DqPair, v_sat: Optional[float]) -> DqPair:
    """Circular limiter: scale the vector back onto the v_sat circle, keeping its direction"""
    if v_sat is None:
        return u
    norm = u.norm()
    if norm > v_sat:
        scale = v_sat / norm
        return DqPair(u.d * scale, u.q * scale)
    return u


def control_step(
    d: LqrDesign,
    x,
    eq: EquilibriumPoint,
    v_sat: Optional[float],
    feedforward: bool = True,
) -> DqPair:
    """
    u = ū − K(x − x̄), limited to |u| ≤ v_sat.

    With ``feedforward=False`` the law is the bare −K(x − x̄).
    """
    deviation = np.asarray(x, dtype=float) - eq.x_bar
    u = -d.K @ deviation
    if feedforward:
        u = u + eq.u_bar
    return clamp_magnitude(DqPair(float(u[0]), float(u[1])), v_sat)


def gain_symmetry_error(K) -> float:
    """
    Largest defect of the d-q rotation structure of K.

    Each 2×2 block acting on a (d, q) pair must read [[a, b], [−b, a]].
    """
    K = numerics.as_matrix(K, "K")
    if K.shape[0] != 2 or K.shape[1] % 2:
        raise ConfigError(f"K must be 2×2n, got shape {K.shape}", field="K")
    err = 0.0
    for j in range(0, K.shape[1], 2):
        err = max(err, abs(K[1, j] + K[0, j + 1]), abs(K[1, j + 1] - K[0, j]))
    return err


def compare_gains(K, reference) -> pd.DataFrame:
    """Per-entry comparison of the first gain row against a reference row"""
    row = numerics.as_matrix(K, "K")[0]
    reference = np.asarray(reference, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        rel = np.abs(row - reference) / np.abs(reference)
    return pd.DataFrame(
        {
            "column": np.arange(len(reference)),
            "computed": row,
            "reference": reference,
            "relative_deviation": rel,
            "dominant": np.abs(reference) > 0.1,
        }
    )


def dominant_entries_match(comparison: pd.DataFrame, tolerance: float = 0.15) -> bool:
    dominant = comparison[comparison["dominant"]]
    return bool((dominant["relative_deviation"] <= tolerance).all())


def design_report(design: LqrDesign) -> pd.DataFrame:
    """Flat long-format table of the design matrices and closed-loop spectrum"""
    rows = []

    def add_matrix(section: str, M: np.ndarray) -> None:
        for (i, j), value in np.ndenumerate(M):
            rows.append({"section": section, "row": i, "col": j, "real": float(value), "imag": 0.0})

    add_matrix("A", design.A)
    add_matrix("Ad", design.Ad)
    add_matrix("B1d", design.B1d)
    add_matrix("K", design.K)
    try:
        add_matrix("K_continuous", numerics.lqr_gain_continuous(design.A, design.B1, design.Q, design.R))
    except NumericalError as e:
        logger.warning(f"Continuous gain skipped in report: {e}")
    for i, lam in enumerate(design.closed_loop):
        rows.append({"section": "closed_loop_eig", "row": i, "col": 0, "real": lam.real, "imag": lam.imag})
    rows.append(
        {"section": "spectral_radius", "row": 0, "col": 0, "real": design.spectral_radius, "imag": 0.0}
    )
    rows.append(
        {"section": "gain_symmetry_error", "row": 0, "col": 0, "real": gain_symmetry_error(design.K), "imag": 0.0}
    )
    return pd.DataFrame(rows, columns=["section", "row", "col", "real", "imag"])


class PiCurrentController:
    """
    d-q PI regulator on the inverter current with cross-coupling decoupling
    and PCC-voltage feedforward.

    Proportional gain k_p = ω_bw·(L1 + L2) places the current loop near the
    requested bandwidth; the integral zero sits a decade below it.
    """

    def __init__(self, p: LclParams, Ts: float, bandwidth_hz: float = 500.0, v_sat: Optional[float] = None):
        if bandwidth_hz <= 0:
            raise ConfigError(f"bandwidth must be positive, got {bandwidth_hz}", field="pi.bandwidth_hz")
        omega_bw = 2.0 * math.pi * bandwidth_hz
        self.inductance = p.l1 + p.l2
        self.omega = p.omega_g
        self.kp = omega_bw * self.inductance
        self.ki = self.kp * omega_bw / 10.0
        self.Ts = Ts
        self.v_sat = v_sat
        self.integral = ZERO_DQ

    def reset(self) -> None:
        self.integral = ZERO_DQ

    def step(self, i_inv: DqPair, i_ref: DqPair, v_pcc: DqPair) -> DqPair:
        e_d = i_ref.d - i_inv.d
        e_q = i_ref.q - i_inv.q
        wl = self.omega * self.inductance
        raw = DqPair(
            v_pcc.d + self.kp * e_d + self.integral.d - wl * i_inv.q,
            v_pcc.q + self.kp * e_q + self.integral.q + wl * i_inv.d,
        )
        u = clamp_magnitude(raw, self.v_sat)
        # conditional integration while saturated
        if u is raw:
            self.integral = DqPair(
                self.integral.d + self.ki * e_d * self.Ts,
                self.integral.q + self.ki * e_q * self.Ts,
            )
        return u
