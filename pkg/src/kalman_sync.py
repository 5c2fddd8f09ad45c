"""
Kalman-filter grid synchronization (AAEKF / CAEKF).

The filter state is the grid EMF in the stationary frame,
x = [V_g,α, V_g,β], which rotates at the nominal grid frequency. The PCC
voltage is the measurement and the PCC current enters through the
line-drop feedthrough D = [[R_g, −X_g], [X_g, R_g]]:

    x(k+1) = Ad x(k) + v(k)
    y(k)   = Cd x(k) + Dd u(k) + w(k)

AAEKF keeps Dd; CAEKF drops it and therefore locks onto the PCC voltage
instead of the grid source.
"""

import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Optional, Tuple

import numpy as np
from scipy import linalg as la

from src import numerics
from src.frames import (
    AlphaBetaPair,
    Angle,
    ZERO_AB,
    impedance_matrix,
    phase_of,
    rotation_generator,
)
from src.utils.errors import ConfigError, NumericalError
from src.utils.logger import logger

DEFAULT_Q_KF = 1e-6
NOMINAL_OMEGA = 2.0 * math.pi * 50.0


class KfVariant(str, Enum):
    AAEKF = "AAEKF"
    CAEKF = "CAEKF"


class GainMode(str, Enum):
    TIME_VARYING = "time_varying"
    STEADY_STATE = "steady_state"


@dataclass(frozen=True)
class GridImpedance:
    """Thevenin grid impedance R_g + jX_g in pu (X_g at nominal frequency)"""

    resistance: float
    reactance: float

    def __post_init__(self):
        if not (math.isfinite(self.resistance) and math.isfinite(self.reactance)):
            raise ConfigError("impedance components must be finite", field="impedance")

    @classmethod
    def polar(cls, magnitude: float, angle: float) -> "GridImpedance":
        if magnitude < 0:
            raise ConfigError(f"magnitude must be non-negative, got {magnitude}", field="impedance")
        return cls(magnitude * math.cos(angle), magnitude * math.sin(angle))

    @property
    def magnitude(self) -> float:
        return math.hypot(self.resistance, self.reactance)

    @property
    def angle(self) -> float:
        return math.atan2(self.reactance, self.resistance) if self.magnitude > 0 else 0.0

    @property
    def scr(self) -> float:
        """Short-circuit ratio 1/|Z|"""
        return math.inf if self.magnitude == 0 else 1.0 / self.magnitude

    def scaled(self, factor: float) -> "GridImpedance":
        return GridImpedance(self.resistance * factor, self.reactance * factor)

    def matrix(self) -> np.ndarray:
        return impedance_matrix(self.resistance, self.reactance)

    def drop(self, current: AlphaBetaPair) -> AlphaBetaPair:
        """(R + jX)·i on an α-β pair"""
        return AlphaBetaPair(
            self.resistance * current.alpha - self.reactance * current.beta,
            self.resistance * current.beta + self.reactance * current.alpha,
        )


ZERO_IMPEDANCE = GridImpedance(0.0, 0.0)


@dataclass(frozen=True)
class DiscreteKfModel:
    Ad: np.ndarray
    Cd: np.ndarray
    Dd: np.ndarray
    Qkf: np.ndarray
    Rkf: np.ndarray
    Ts: float
    variant: KfVariant
    impedance: GridImpedance
    omega_g: float
    q_kf: float


@dataclass(frozen=True)
class KalmanState:
    x_hat: AlphaBetaPair
    P: np.ndarray
    K_last: np.ndarray = field(default_factory=lambda: np.zeros((2, 2)))
    step_index: int = 0
    innovation: AlphaBetaPair = ZERO_AB

    @classmethod
    def flat_start(cls) -> "KalmanState":
        """Unit magnitude at zero angle, identity covariance"""
        return cls(x_hat=AlphaBetaPair(1.0, 0.0), P=np.eye(2))


def _measurement_covariance(Rkf) -> np.ndarray:
    R = np.asarray(Rkf, dtype=float)
    if R.ndim == 0:
        R = float(R) * np.eye(2)
    if R.shape != (2, 2):
        raise ConfigError(f"R_KF must be a scalar or 2x2, got shape {R.shape}", field="r_kf")
    if not np.allclose(R, R.T):
        raise ConfigError("R_KF must be symmetric", field="r_kf")
    try:
        np.linalg.cholesky(R)
    except np.linalg.LinAlgError:
        raise ConfigError("R_KF must be positive definite", field="r_kf")
    return R


def build_kf_model(
    z: GridImpedance,
    omega_g: float = NOMINAL_OMEGA,
    Ts: float = 1e-4,
    q_kf: float = DEFAULT_Q_KF,
    Rkf=1.0,
    variant: KfVariant = KfVariant.AAEKF,
) -> DiscreteKfModel:
    """
    Discrete measurement model for the grid EMF estimator.

    Ad is the exact rotation by ω_g·Ts; there is no input in the state
    equation, so the PCC current only appears through Dd.
    """
    if Ts <= 0:
        raise ConfigError(f"Ts must be positive, got {Ts}", field="ts")
    if not q_kf > 0:
        raise ConfigError(f"q_kf must be positive, got {q_kf}", field="q_kf")
    variant = KfVariant(variant)
    R = _measurement_covariance(Rkf)

    Ad = numerics.expm(rotation_generator(omega_g), Ts)
    Dd = z.matrix() if variant is KfVariant.AAEKF else np.zeros((2, 2))
    return DiscreteKfModel(
        Ad=Ad,
        Cd=np.eye(2),
        Dd=Dd,
        Qkf=q_kf * np.eye(2),
        Rkf=R,
        Ts=Ts,
        variant=variant,
        impedance=z,
        omega_g=omega_g,
        q_kf=q_kf,
    )


def kf_step(
    model: DiscreteKfModel,
    state: KalmanState,
    y: AlphaBetaPair,
    u: AlphaBetaPair,
    gain: Optional[np.ndarray] = None,
) -> Tuple[KalmanState, Angle]:
    """
    One predict/update cycle with line-drop compensation.

    Args:
        model: discrete filter model
        state: estimate and covariance from the previous sample
        y: measured PCC voltage (α-β)
        u: measured PCC current (α-β)
        gain: fixed gain for steady-state operation; None computes the
            time-varying Kalman gain

    Returns:
        (updated state, estimated grid phase angle)
    """
    Ad, Cd = model.Ad, model.Cd
    x_prior = Ad @ np.array(state.x_hat)
    P_prior = Ad @ state.P @ Ad.T + model.Qkf

    if gain is None:
        S = Cd @ P_prior @ Cd.T + model.Rkf
        if np.linalg.cond(S) > 1e12:
            raise NumericalError(
                "innovation covariance is singular",
                {"step": state.step_index, "cond": float(np.linalg.cond(S))},
            )
        K = la.solve(S, Cd @ P_prior, assume_a="sym").T
    else:
        K = gain

    innovation = np.array(y) - (Cd @ x_prior + model.Dd @ np.array(u))
    x_post = x_prior + K @ innovation

    # Joseph form keeps P PSD for any gain
    I_KC = np.eye(2) - K @ Cd
    P_post = I_KC @ P_prior @ I_KC.T + K @ model.Rkf @ K.T
    P_post = 0.5 * (P_post + P_post.T)

    x_hat = AlphaBetaPair(float(x_post[0]), float(x_post[1]))
    new_state = KalmanState(
        x_hat=x_hat,
        P=P_post,
        K_last=K,
        step_index=state.step_index + 1,
        innovation=AlphaBetaPair(float(innovation[0]), float(innovation[1])),
    )
    return new_state, phase_of(x_hat)


def error_dynamics(model: DiscreteKfModel, K) -> Tuple[np.ndarray, numerics.EigenSpectrum, bool]:
    """A_error = Ad (I − K Cd), its spectrum and whether it is Schur-stable"""
    K = numerics.as_matrix(K, "K")
    Aerr = model.Ad @ (np.eye(2) - K @ model.Cd)
    spectrum = numerics.eigvals(Aerr)
    return Aerr, spectrum, spectrum.is_schur_stable()


def steady_state_gain(model: DiscreteKfModel) -> Tuple[np.ndarray, np.ndarray]:
    return numerics.kalman_steady_gain(model.Ad, model.Cd, model.Qkf, model.Rkf)


class KalmanSynchronizer:
    """Stateful estimator driven sample by sample by the scenario loop"""

    def __init__(
        self,
        impedance: GridImpedance,
        omega_g: float = NOMINAL_OMEGA,
        Ts: float = 1e-4,
        q_kf: float = DEFAULT_Q_KF,
        Rkf=1.0,
        variant: KfVariant = KfVariant.AAEKF,
        gain_mode: GainMode = GainMode.TIME_VARYING,
        initial_state: Optional[KalmanState] = None,
    ):
        self.model = build_kf_model(impedance, omega_g, Ts, q_kf, Rkf, variant)
        self.gain_mode = GainMode(gain_mode)
        self.state = initial_state or KalmanState.flat_start()
        self._fixed_gain = None
        if self.gain_mode is GainMode.STEADY_STATE:
            self._fixed_gain, _ = steady_state_gain(self.model)
        self.angle: Angle = phase_of(self.state.x_hat)
        logger.debug(
            f"{self.model.variant.value} synchroniser ready: q_kf={q_kf:g}, "
            f"|Z|={impedance.magnitude:.3f} pu, gain mode {self.gain_mode.value}"
        )

    @property
    def name(self) -> str:
        return self.model.variant.value

    def step(self, v_pcc: AlphaBetaPair, i_pcc: AlphaBetaPair) -> Angle:
        self.state, self.angle = kf_step(self.model, self.state, v_pcc, i_pcc, self._fixed_gain)
        return self.angle

    def retune(self, impedance: GridImpedance) -> None:
        """Swap the modelled impedance, keeping estimate and covariance"""
        # the gain does not depend on Dd, so a steady-state gain stays valid
        self.model = replace(
            self.model,
            impedance=impedance,
            Dd=impedance.matrix() if self.model.variant is KfVariant.AAEKF else np.zeros((2, 2)),
        )
