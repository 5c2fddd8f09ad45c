"""
SRF-PLL synchronisers: conventional (CPLL), conventional virtual-impedance
(CVI-PLL) and modified virtual-impedance with line-drop compensation
(MVI-PLL).

All three lock an SRF loop onto

    v_sync = v_pcc − κ·(R_v + jX_v)·i_pcc

and differ only in κ: 0 for CPLL, a fraction for CVI, 1 for MVI.
"""

import math
from dataclasses import dataclass, replace
from enum import Enum
from typing import Optional, Tuple

import numpy as np

from src import numerics
from src.frames import AlphaBetaPair, Angle, park, wrap_angle
from src.kalman_sync import NOMINAL_OMEGA, ZERO_IMPEDANCE, GridImpedance
from src.utils.errors import ConfigError
from src.utils.logger import logger

DEFAULT_KP = 5.0
DEFAULT_KI = 5.0
WINDUP_LIMIT = 2.0 * math.pi * 10.0


class PllMode(str, Enum):
    CPLL = "CPLL"
    CVI = "CVI-PLL"
    MVI = "MVI-PLL"


DEFAULT_KAPPA = {PllMode.CPLL: 0.0, PllMode.CVI: 0.5, PllMode.MVI: 1.0}


@dataclass(frozen=True)
class PllConfig:
    mode: PllMode = PllMode.CPLL
    virtual_impedance: GridImpedance = ZERO_IMPEDANCE
    kappa: float = 0.0
    kp: float = DEFAULT_KP
    ki: float = DEFAULT_KI
    omega_nominal: float = NOMINAL_OMEGA
    windup_limit: float = WINDUP_LIMIT

    def __post_init__(self):
        object.__setattr__(self, "mode", PllMode(self.mode))
        if not 0.0 <= self.kappa <= 1.0:
            raise ConfigError(f"kappa must lie in [0, 1], got {self.kappa}", field="pll.kappa")
        if self.kp < 0 or self.ki < 0:
            raise ConfigError("PI gains must be non-negative", field="pll.kp")
        if self.windup_limit <= 0:
            raise ConfigError("windup limit must be positive", field="pll.windup_limit")

    @classmethod
    def for_mode(
        cls,
        mode: PllMode,
        impedance: GridImpedance = ZERO_IMPEDANCE,
        kappa: Optional[float] = None,
        **kwargs,
    ) -> "PllConfig":
        """Config with the mode's default compensation fraction"""
        mode = PllMode(mode)
        if kappa is None:
            kappa = DEFAULT_KAPPA[mode]
        if mode is PllMode.CPLL:
            kappa = 0.0
        elif mode is PllMode.MVI:
            kappa = 1.0
        return cls(mode=mode, virtual_impedance=impedance, kappa=kappa, **kwargs)


@dataclass(frozen=True)
class PllState:
    theta_hat: Angle
    omega_integrator: float
    config: PllConfig

    @property
    def mode(self) -> PllMode:
        return self.config.mode

    @property
    def virtual_impedance(self) -> GridImpedance:
        return self.config.virtual_impedance

    @property
    def kappa(self) -> float:
        return self.config.kappa


def sync_voltage(config: PllConfig, v_pcc: AlphaBetaPair, i_pcc: AlphaBetaPair) -> AlphaBetaPair:
    if config.kappa == 0.0:
        return v_pcc
    drop = config.virtual_impedance.drop(i_pcc)
    return AlphaBetaPair(
        v_pcc.alpha - config.kappa * drop.alpha,
        v_pcc.beta - config.kappa * drop.beta,
    )


def pll_step(
    state: PllState,
    v_pcc: AlphaBetaPair,
    i_pcc: AlphaBetaPair,
    Ts: float,
) -> Tuple[PllState, Angle]:
    """
    Advance the SRF loop by one sample.

    Returns:
        (next state, angle estimate for the current sample)
    """
    if Ts <= 0:
        raise ConfigError(f"Ts must be positive, got {Ts}", field="ts")
    cfg = state.config
    v_sync = sync_voltage(cfg, v_pcc, i_pcc)
    e = park(v_sync, state.theta_hat).q

    omega_hat = cfg.omega_nominal + cfg.kp * e + state.omega_integrator
    integ = state.omega_integrator + cfg.ki * e * Ts
    integ = min(max(integ, -cfg.windup_limit), cfg.windup_limit)

    next_state = PllState(
        theta_hat=wrap_angle(state.theta_hat + omega_hat * Ts),
        omega_integrator=integ,
        config=cfg,
    )
    return next_state, state.theta_hat


def pll_linearized_poles(state: PllState, v_mag: float) -> numerics.EigenSpectrum:
    """Small-signal poles of the [angle error, integrator] loop: s² + k_p·V·s + k_i·V"""
    if v_mag < 0:
        raise ConfigError(f"v_mag must be non-negative, got {v_mag}", field="v_mag")
    cfg = state.config
    A = np.array([[-cfg.kp * v_mag, 1.0], [-cfg.ki * v_mag, 0.0]])
    return numerics.eigvals(A)


class PllSynchronizer:
    """Stateful wrapper exposing the same step/retune surface as the Kalman synchroniser"""

    def __init__(self, config: PllConfig, Ts: float = 1e-4, initial_angle: Angle = 0.0):
        if Ts <= 0:
            raise ConfigError(f"Ts must be positive, got {Ts}", field="ts")
        self.Ts = Ts
        self.state = PllState(theta_hat=wrap_angle(initial_angle), omega_integrator=0.0, config=config)
        self.angle: Angle = self.state.theta_hat
        logger.debug(
            f"{config.mode.value} ready: kappa={config.kappa:g}, kp={config.kp:g}, ki={config.ki:g}"
        )

    @property
    def name(self) -> str:
        return self.state.mode.value

    def step(self, v_pcc: AlphaBetaPair, i_pcc: AlphaBetaPair) -> Angle:
        self.state, self.angle = pll_step(self.state, v_pcc, i_pcc, self.Ts)
        return self.angle

    def retune(self, impedance: GridImpedance) -> None:
        cfg = replace(self.state.config, virtual_impedance=impedance)
        self.state = replace(self.state, config=cfg)
