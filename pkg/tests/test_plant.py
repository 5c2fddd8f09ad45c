import cmath
import math

import numpy as np
import pytest

from src.analysis import decay_time_constant
from src.frames import AlphaBetaPair, ZERO_AB
from src.kalman_sync import GridImpedance
from src.plant import (
    LinearNetwork,
    MachineBranch,
    MachineState,
    PlantState,
    damping_for_decay,
    electrical_power,
    inertia_for_frequency,
    injected_current,
    machine_step,
    phasor_steady_state,
    release_machine,
    calibrate_machine,
    machine_only_jacobian,
    step_network,
    swing_mode,
)
from src.utils.errors import ConfigError

TS = 1e-4
OMEGA = 2 * math.pi * 50


def ab(z):
    return AlphaBetaPair.from_complex(complex(z))


def test_network_follows_phasor_solution(filter_params, weak_impedance):
    phasors = phasor_steady_state(filter_params, weak_impedance, 1.0 + 0j)
    network = LinearNetwork(filter_params, weak_impedance, TS)
    state = PlantState(ab(phasors["i_inv"]), ab(phasors["i_pcc"]), ab(phasors["v_c"]), AlphaBetaPair(1.0, 0.0))

    for _ in range(400):
        state = step_network(state, ZERO_AB, network)
    rot = cmath.exp(1j * OMEGA * 400 * TS)
    assert state.i_pcc.to_complex() == pytest.approx(phasors["i_pcc"] * rot, abs=1e-9)
    assert state.v_c.to_complex() == pytest.approx(phasors["v_c"] * rot, abs=1e-9)
    assert state.grid_emf.to_complex() == pytest.approx(rot, abs=1e-12)
    assert network.pcc_voltage(state).to_complex() == pytest.approx(phasors["v_pcc"] * rot, abs=1e-9)


def test_phasor_solution_satisfies_kirchhoff(filter_params, weak_impedance):
    ph = phasor_steady_state(filter_params, weak_impedance, 1.0 + 0j, v_inv=1.05 + 0.2j)
    assert ph["i_inv"] - ph["i_pcc"] == pytest.approx(1j * OMEGA * filter_params.c * ph["v_c"])
    z = complex(weak_impedance.resistance, weak_impedance.reactance)
    assert ph["v_pcc"] == pytest.approx(1.0 + z * ph["i_pcc"])


def test_network_state_counts(filter_params, weak_impedance):
    plain = LinearNetwork(filter_params, weak_impedance, TS)
    assert plain.Ad.shape == (8, 8)
    with_machine = LinearNetwork(filter_params, weak_impedance, TS, MachineBranch(x_sync=0.0602))
    assert with_machine.Ad.shape == (16, 16)
    assert with_machine.has_machine and not plain.has_machine


def test_machine_study_needs_grid_reactance(filter_params):
    with pytest.raises(ConfigError):
        LinearNetwork(filter_params, GridImpedance(0.1, 0.0), TS, MachineBranch(x_sync=0.0602))


def test_pack_unpack_machine_state(filter_params, weak_impedance):
    network = LinearNetwork(filter_params, weak_impedance, TS, MachineBranch(x_sync=0.0602))
    machine = MachineState(delta=0.0, omega_m=OMEGA, H=1.0, D_m=1.0, held=True)
    state = PlantState.energized(AlphaBetaPair(1.0, 0.0), machine)
    x = network.pack(state)
    assert x.shape == (16,)
    back = network.unpack(x, machine)
    assert back.v_pcc_node == state.v_pcc_node
    assert back.machine is machine
    assert network.pcc_voltage(back) == AlphaBetaPair(1.0, 0.0)


def test_energized_state_has_no_current():
    state = PlantState.energized(AlphaBetaPair(0.0, 1.0))
    assert state.i_inv == ZERO_AB and state.i_pcc == ZERO_AB
    assert state.grid_phase == pytest.approx(math.pi / 2)
    assert state.max_abs() == pytest.approx(1.0)


def test_invalid_sample_time(filter_params, weak_impedance):
    with pytest.raises(ConfigError):
        LinearNetwork(filter_params, weak_impedance, 0.0)


def test_stored_energy_is_non_negative(filter_params, weak_impedance):
    network = LinearNetwork(filter_params, weak_impedance, TS)
    state = PlantState(AlphaBetaPair(0.5, 0.1), AlphaBetaPair(0.2, 0.0), AlphaBetaPair(1.0, 0.0), AlphaBetaPair(1.0, 0.0))
    assert network.stored_energy(state) > 0


def test_electrical_power_and_current():
    m = MachineState(delta=0.3, omega_m=OMEGA, H=1.0, D_m=0.0)
    v = AlphaBetaPair(1.0, 0.0)
    assert electrical_power(m, v) == pytest.approx(math.sin(0.3) / 0.0602)
    expected = (cmath.rect(1.0, 0.3) - 1.0) / (1j * 0.0602)
    assert injected_current(m, v).to_complex() == pytest.approx(expected)
    # P_e is the real power injected at the PCC
    s = v.to_complex() * injected_current(m, v).to_complex().conjugate()
    assert s.real == pytest.approx(electrical_power(m, v))


def test_held_machine_tracks_pcc_phase():
    m = MachineState(delta=0.0, omega_m=OMEGA, H=1.0, D_m=0.0, held=True)
    m, current = machine_step(m, AlphaBetaPair.polar(1.0, 0.4), TS)
    assert m.delta == pytest.approx(0.4)
    assert m.omega_m == OMEGA
    assert current.norm() == pytest.approx(0.0, abs=1e-12)


def test_release_balances_mechanical_power():
    m = MachineState(delta=0.2, omega_m=OMEGA, H=1.0, D_m=0.0, held=True)
    released = release_machine(m, AlphaBetaPair(1.0, 0.0), kick=0.1)
    assert not released.held
    assert released.P_m == pytest.approx(electrical_power(m, AlphaBetaPair(1.0, 0.0)))
    assert released.delta == pytest.approx(0.3)


def swing(H, D, seconds, kick=0.01):
    m = MachineState(delta=kick, omega_m=OMEGA, H=H, D_m=D)
    v = AlphaBetaPair(1.0, 0.0)
    deltas = []
    for _ in range(int(round(seconds / TS))):
        m, _ = machine_step(m, v, TS)
        deltas.append(m.delta)
    return np.arange(1, len(deltas) + 1) * TS, np.array(deltas)


def test_inertia_sets_oscillation_frequency():
    H = inertia_for_frequency(8.0)
    t, delta = swing(H, 0.0, 1.0)
    crossings = np.count_nonzero(np.diff(np.sign(delta)) != 0)
    assert crossings == pytest.approx(16, abs=1)


def test_damping_sets_decay_time_constant():
    H = inertia_for_frequency(8.0)
    D = damping_for_decay(H, 0.563)
    t, delta = swing(H, D, 2.0)
    assert decay_time_constant(t, delta) == pytest.approx(0.563, rel=0.08)


def test_inertia_formula():
    k_s = 1.0 / 0.0602
    assert inertia_for_frequency(8.0) == pytest.approx(OMEGA * k_s / (2 * (2 * math.pi * 8.0) ** 2))
    with pytest.raises(ConfigError):
        inertia_for_frequency(0.0)
    with pytest.raises(ConfigError):
        inertia_for_frequency(8.0, delta0=math.pi)


def test_machine_validation():
    with pytest.raises(ConfigError):
        MachineState(delta=0.0, omega_m=OMEGA, H=0.0, D_m=1.0)
    with pytest.raises(ConfigError):
        damping_for_decay(1.0, 0.0)


def test_series_pcc_matches_phasor_in_steady_state(filter_params, weak_impedance):
    phasors = phasor_steady_state(filter_params, weak_impedance, 1.0 + 0j, v_inv=1.02 + 0.15j)
    network = LinearNetwork(filter_params, weak_impedance, TS, pcc_model="series")
    state = PlantState(ab(phasors["i_inv"]), ab(phasors["i_pcc"]), ab(phasors["v_c"]), AlphaBetaPair(1.0, 0.0))
    assert network.pcc_voltage(state).to_complex() == pytest.approx(phasors["v_pcc"], abs=1e-9)


def test_series_pcc_sees_inductive_drop(filter_params, weak_impedance):
    # no current yet, but v_c above the grid drives di/dt through L_f2 + L_g
    state = PlantState(ZERO_AB, ZERO_AB, AlphaBetaPair(1.1, 0.0), AlphaBetaPair(1.0, 0.0))
    phasor = LinearNetwork(filter_params, weak_impedance, TS).pcc_voltage(state)
    series = LinearNetwork(filter_params, weak_impedance, TS, pcc_model="series").pcc_voltage(state)
    l_g = weak_impedance.reactance / OMEGA
    share = l_g / (filter_params.in_unit("pu").l2 + l_g)
    assert phasor.alpha == pytest.approx(1.0)
    assert series.alpha == pytest.approx(1.0 + 0.1 * share)
    assert 1.0 < series.alpha < 1.1


def test_unknown_pcc_model(filter_params, weak_impedance):
    with pytest.raises(ConfigError):
        LinearNetwork(filter_params, weak_impedance, TS, pcc_model="nodal")


def test_lossless_network_keeps_its_energy(filter_params):
    network = LinearNetwork(filter_params, GridImpedance(0.0, 0.5), TS)
    state = PlantState(AlphaBetaPair(0.5, -0.2), AlphaBetaPair(0.1, 0.3), AlphaBetaPair(0.8, 0.4), ZERO_AB)
    e0 = network.stored_energy(state)
    for _ in range(500):
        state = step_network(state, ZERO_AB, network)
    assert network.stored_energy(state) == pytest.approx(e0, rel=1e-9)


def test_airgap_power_equals_terminal_power_for_lossless_tie():
    m = MachineState(delta=0.25, omega_m=OMEGA, H=1.0, D_m=0.0)
    v = AlphaBetaPair.polar(0.98, 0.05)
    i_m = injected_current(m, v)
    assert electrical_power(m, v, i_machine=i_m) == pytest.approx(electrical_power(m, v))


def test_machine_step_uses_branch_current():
    m = MachineState(delta=0.0, omega_m=OMEGA, H=0.5, D_m=0.0)
    v = AlphaBetaPair(1.0, 0.0)
    # machine delivering power through its branch slows down
    m_next, _ = machine_step(m, v, TS, i_machine=AlphaBetaPair(0.5, 0.0))
    assert m_next.omega_m < OMEGA
    m_free, _ = machine_step(m, v, TS)
    assert m_free.omega_m == pytest.approx(OMEGA)


@pytest.fixture
def machine_network(filter_params, weak_impedance):
    branch = MachineBranch(x_sync=filter_params.reactance(300e-6), r_stator=0.029)
    return LinearNetwork(filter_params, weak_impedance, TS, branch)


def test_calibration_hits_reference_mode(machine_network):
    H, D = calibrate_machine(machine_network, 8.0)
    mode = swing_mode(machine_only_jacobian(machine_network, H, D))
    assert mode.frequency == pytest.approx(8.0, rel=1e-3)
    assert mode.decay_time_constant == pytest.approx(0.563, rel=1e-3)


@pytest.mark.parametrize("f_target", [3.0, 15.0])
def test_calibration_moves_frequency_through_inertia(machine_network, f_target):
    H_ref, D_ref = calibrate_machine(machine_network, 8.0)
    H, D = calibrate_machine(machine_network, f_target)
    assert D == pytest.approx(D_ref)
    assert (H > H_ref) == (f_target < 8.0)
    mode = swing_mode(machine_only_jacobian(machine_network, H, D))
    assert mode.frequency == pytest.approx(f_target, rel=1e-3)


def test_calibration_keeps_given_damping(machine_network):
    _, D = calibrate_machine(machine_network, 8.0, damping=3.0)
    assert D == 3.0


def test_calibration_needs_machine(filter_params, weak_impedance):
    with pytest.raises(ConfigError):
        machine_only_jacobian(LinearNetwork(filter_params, weak_impedance, TS), 1.0, 1.0)
