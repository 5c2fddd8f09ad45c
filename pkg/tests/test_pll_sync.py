import cmath
import math

import pytest

from src.frames import AlphaBetaPair, ZERO_AB, wrap_angle
from src.kalman_sync import NOMINAL_OMEGA, GridImpedance
from src.pll_sync import (
    PllConfig,
    PllMode,
    PllState,
    PllSynchronizer,
    pll_linearized_poles,
    pll_step,
    sync_voltage,
)
from src.utils.errors import ConfigError

TS = 1e-4
I_REL = cmath.rect(0.5, math.radians(-30.0))
FAST = {"kp": 100.0, "ki": 2000.0}


def track(sync, z, steps=5000, phi=0.5):
    zc = complex(z.resistance, z.reactance)
    error = None
    for k in range(steps):
        theta = NOMINAL_OMEGA * k * TS + phi
        e = cmath.rect(1.0, theta)
        i = e * I_REL
        estimate = sync.step(AlphaBetaPair.from_complex(e + zc * i), AlphaBetaPair.from_complex(i))
        error = wrap_angle(estimate - theta)
    return error


def test_cpll_locks_onto_pcc_voltage(weak_impedance):
    sync = PllSynchronizer(PllConfig.for_mode(PllMode.CPLL, weak_impedance, **FAST), TS)
    z = complex(weak_impedance.resistance, weak_impedance.reactance)
    assert track(sync, weak_impedance) == pytest.approx(cmath.phase(1 + z * I_REL), abs=2e-3)


def test_mvi_pll_locks_onto_grid_source(weak_impedance):
    sync = PllSynchronizer(PllConfig.for_mode(PllMode.MVI, weak_impedance, **FAST), TS)
    assert abs(track(sync, weak_impedance)) < 2e-3


def test_cvi_pll_lands_between(weak_impedance):
    sync = PllSynchronizer(PllConfig.for_mode(PllMode.CVI, weak_impedance, kappa=0.5, **FAST), TS)
    z = complex(weak_impedance.resistance, weak_impedance.reactance)
    offset = track(sync, weak_impedance)
    assert 0.0 < offset < cmath.phase(1 + z * I_REL)


def test_step_returns_angle_before_advance():
    state = PllState(0.25, 0.0, PllConfig())
    nxt, angle = pll_step(state, AlphaBetaPair(1.0, 0.0), ZERO_AB, TS)
    assert angle == 0.25
    assert nxt.theta_hat != 0.25


def test_integrator_is_clamped():
    cfg = PllConfig(kp=0.0, ki=1e6, windup_limit=10.0)
    state = PllState(0.0, 0.0, cfg)
    for _ in range(100):
        # constant positive q error: vector at +90° relative to θ̂ = 0
        state = PllState(0.0, state.omega_integrator, cfg)
        state, _ = pll_step(state, AlphaBetaPair(0.0, 1.0), ZERO_AB, TS)
    assert state.omega_integrator == pytest.approx(10.0)


def test_for_mode_fixes_kappa(weak_impedance):
    assert PllConfig.for_mode(PllMode.CPLL, weak_impedance, kappa=0.7).kappa == 0.0
    assert PllConfig.for_mode(PllMode.MVI, weak_impedance, kappa=0.2).kappa == 1.0
    assert PllConfig.for_mode("CVI-PLL", weak_impedance).kappa == 0.5


def test_kappa_outside_unit_interval():
    with pytest.raises(ConfigError):
        PllConfig(mode=PllMode.CVI, kappa=1.5)


def test_sync_voltage_removes_full_drop(weak_impedance):
    cfg = PllConfig.for_mode(PllMode.MVI, weak_impedance)
    i = AlphaBetaPair(0.3, -0.1)
    drop = weak_impedance.drop(i)
    v = AlphaBetaPair(1.0 + drop.alpha, drop.beta)
    out = sync_voltage(cfg, v, i)
    assert out.alpha == pytest.approx(1.0)
    assert out.beta == pytest.approx(0.0, abs=1e-15)


def test_linearized_poles():
    state = PllState(0.0, 0.0, PllConfig())
    poles = sorted(v.real for v in pll_linearized_poles(state, 1.0))
    assert poles == pytest.approx([(-5 - math.sqrt(5)) / 2, (-5 + math.sqrt(5)) / 2])
    with pytest.raises(ConfigError):
        pll_linearized_poles(state, -1.0)


def test_invalid_sample_time():
    with pytest.raises(ConfigError):
        PllSynchronizer(PllConfig(), Ts=0.0)


def test_retune_updates_virtual_impedance(weak_impedance):
    sync = PllSynchronizer(PllConfig.for_mode(PllMode.MVI, weak_impedance))
    z = GridImpedance(0.01, 0.1)
    sync.retune(z)
    assert sync.state.virtual_impedance == z
    assert sync.name == "MVI-PLL"


def test_mvi_pll_default_gains_settle_within_half_second():
    z = GridImpedance.polar(0.1, math.radians(70.0))
    sync = PllSynchronizer(PllConfig.for_mode(PllMode.MVI, z), TS)
    zc = complex(z.resistance, z.reactance)
    late = []
    for k in range(10000):
        theta = NOMINAL_OMEGA * k * TS + 0.05
        e = cmath.rect(1.0, theta)
        i = e * I_REL
        error = wrap_angle(sync.step(AlphaBetaPair.from_complex(e + zc * i), AlphaBetaPair.from_complex(i)) - theta)
        if k * TS >= 0.5:
            late.append(abs(error))
    assert max(late) < 1e-2
