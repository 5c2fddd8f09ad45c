"""
Simulated electrical network in the stationary α-β frame.

An ideal inverter voltage source drives the LCL filter into the PCC, which
connects to a Thevenin grid source behind R_g + jX_g. An optional classical
synchronous machine can be tied to the PCC through its synchronous
reactance.

The grid EMF (and the machine EMF) are carried as rotating-source states
of the linear ODE, so the exact ZOH discretization reproduces them without
error; only the inverter voltage is held over a sample.

Without a machine the PCC voltage is reconstructed either as the phasor
drop V_g + Z·i_pcc or, with the series model, as V_g + R_g·i + L_g·di/dt
read off the branch state. The machine swing equation takes the air-gap
power of the network's own machine branch, and its H and D_m are
calibrated on the eigenvalues of the linearized machine-only network.
"""

import math
from dataclasses import dataclass, replace
from typing import Dict, Optional, Tuple

import numpy as np
from scipy import linalg as la, optimize

from src import numerics
from src.frames import AlphaBetaPair, Angle, ZERO_AB, phase_of, rotation_generator, wrap_angle
from src.kalman_sync import GridImpedance
from src.lqr import LclParams
from src.utils.errors import ConfigError, NumericalError
from src.utils.logger import logger

C_NODE_SI = 1e-6
DEFAULT_TARGET_DECAY = 0.563
# phasor: V_g + Z·i_pcc at the sample; series: V_g + R_g·i + L_g·di/dt from the branch state
PCC_MODELS = ("phasor", "series")


@dataclass(frozen=True)
class MachineState:
    """Classical machine: EMF E∠δ behind X_sync, δ relative to the synchronous reference"""

    delta: Angle
    omega_m: float
    H: float
    D_m: float
    E: float = 1.0
    X_sync: float = 0.0602
    P_m: float = 0.0
    omega_s: float = 2.0 * math.pi * 50.0
    held: bool = False

    def __post_init__(self):
        if self.H <= 0:
            raise ConfigError(f"inertia must be positive, got {self.H}", field="machine.H")
        if self.X_sync <= 0:
            raise ConfigError(f"synchronous reactance must be positive, got {self.X_sync}", field="machine.x_sync")

    def emf(self, reference_angle: Angle = 0.0) -> AlphaBetaPair:
        return AlphaBetaPair.polar(self.E, reference_angle + self.delta)


@dataclass(frozen=True)
class MachineBranch:
    """Machine tie and the PCC node capacitance that keeps the node an ODE (all pu)"""

    x_sync: float
    r_stator: float = 0.0
    c_node: float = C_NODE_SI * (415.0**2 / 110e3)


@dataclass(frozen=True)
class PlantState:
    i_inv: AlphaBetaPair
    i_pcc: AlphaBetaPair
    v_c: AlphaBetaPair
    grid_emf: AlphaBetaPair
    v_pcc_node: Optional[AlphaBetaPair] = None
    grid_current: Optional[AlphaBetaPair] = None
    machine_current: Optional[AlphaBetaPair] = None
    machine: Optional[MachineState] = None

    @property
    def grid_phase(self) -> Angle:
        return phase_of(self.grid_emf)

    @classmethod
    def energized(cls, grid_emf: AlphaBetaPair, machine: Optional[MachineState] = None) -> "PlantState":
        """No current flowing, capacitors charged to the grid EMF"""
        if machine is None:
            return cls(ZERO_AB, ZERO_AB, grid_emf, grid_emf)
        return cls(ZERO_AB, ZERO_AB, grid_emf, grid_emf, grid_emf, ZERO_AB, ZERO_AB, machine)

    def max_abs(self) -> float:
        values = [*self.i_inv, *self.i_pcc, *self.v_c]
        for pair in (self.v_pcc_node, self.grid_current, self.machine_current):
            if pair is not None:
                values.extend(pair)
        return max(abs(v) for v in values)


def _pair(x: np.ndarray, k: int) -> AlphaBetaPair:
    return AlphaBetaPair(float(x[k]), float(x[k + 1]))


class LinearNetwork:
    """
    Assembled and ZOH-discretized α-β network for one grid impedance.

    Without a machine the state is [i_inv, v_c, i_pcc, V_g]; L_f2 and the
    grid inductance carry the same current. With a machine it is
    [i_inv, v_c, i_f2, v_pcc, i_g, i_m, V_g, E_m].
    """

    def __init__(
        self,
        filt: LclParams,
        impedance: GridImpedance,
        Ts: float,
        machine_branch: Optional[MachineBranch] = None,
        pcc_model: str = "phasor",
    ):
        if Ts <= 0:
            raise ConfigError(f"Ts must be positive, got {Ts}", field="ts")
        if pcc_model not in PCC_MODELS:
            raise ConfigError(f"pcc_model must be one of {PCC_MODELS}, got {pcc_model!r}", field="grid.pcc_model")
        self.filt = filt.in_unit("pu")
        self.impedance = impedance
        self.Ts = Ts
        self.machine_branch = machine_branch
        self.pcc_model = pcc_model
        self.omega = self.filt.omega_g

        A, B = self._assemble()
        self.A, self.B = A, B
        self.Ad, self.Bd = numerics.zoh_discretize(A, B, Ts)
        logger.debug(
            f"Network discretized: |Z|={impedance.magnitude:.3f} pu, "
            f"{A.shape[0]} states, machine={'yes' if machine_branch else 'no'}"
        )

    @property
    def has_machine(self) -> bool:
        return self.machine_branch is not None

    def with_impedance(self, impedance: GridImpedance) -> "LinearNetwork":
        return LinearNetwork(self.filt, impedance, self.Ts, self.machine_branch, self.pcc_model)

    def _assemble(self) -> Tuple[np.ndarray, np.ndarray]:
        f = self.filt
        l1, l2, c = f.l1, f.l2, f.c
        r_g = self.impedance.resistance
        l_g = self.impedance.reactance / self.omega
        I2 = np.eye(2)
        rot = rotation_generator(self.omega)

        if not self.has_machine:
            n = 8
            A = np.zeros((n, n))
            A[0:2, 0:2] = -f.r1 / l1 * I2
            A[0:2, 2:4] = -I2 / l1
            A[2:4, 0:2] = I2 / c
            A[2:4, 4:6] = -I2 / c
            l_series = l2 + l_g
            A[4:6, 2:4] = I2 / l_series
            A[4:6, 4:6] = -(f.r2 + r_g) / l_series * I2
            A[4:6, 6:8] = -I2 / l_series
            A[6:8, 6:8] = rot
        else:
            if l_g <= 0:
                raise ConfigError("a machine study needs a positive grid reactance", field="grid.impedance")
            mb = self.machine_branch
            l_m = mb.x_sync / self.omega
            n = 16
            A = np.zeros((n, n))
            A[0:2, 0:2] = -f.r1 / l1 * I2
            A[0:2, 2:4] = -I2 / l1
            A[2:4, 0:2] = I2 / c
            A[2:4, 4:6] = -I2 / c
            A[4:6, 2:4] = I2 / l2
            A[4:6, 4:6] = -f.r2 / l2 * I2
            A[4:6, 6:8] = -I2 / l2
            # PCC node
            A[6:8, 4:6] = I2 / mb.c_node
            A[6:8, 8:10] = -I2 / mb.c_node
            A[6:8, 10:12] = I2 / mb.c_node
            # grid branch, PCC towards the source
            A[8:10, 6:8] = I2 / l_g
            A[8:10, 8:10] = -r_g / l_g * I2
            A[8:10, 12:14] = -I2 / l_g
            # machine branch, machine towards the PCC
            A[10:12, 14:16] = I2 / l_m
            A[10:12, 6:8] = -I2 / l_m
            A[10:12, 10:12] = -mb.r_stator / l_m * I2
            A[12:14, 12:14] = rot
            A[14:16, 14:16] = rot

        B = np.zeros((n, 2))
        B[0:2, 0:2] = I2 / l1
        return A, B

    def pack(self, state: PlantState) -> np.ndarray:
        if not self.has_machine:
            return np.array([*state.i_inv, *state.v_c, *state.i_pcc, *state.grid_emf], dtype=float)
        machine_emf = state.machine.emf(state.grid_phase) if state.machine else ZERO_AB
        return np.array(
            [
                *state.i_inv,
                *state.v_c,
                *state.i_pcc,
                *(state.v_pcc_node if state.v_pcc_node is not None else ZERO_AB),
                *(state.grid_current if state.grid_current is not None else ZERO_AB),
                *(state.machine_current if state.machine_current is not None else ZERO_AB),
                *state.grid_emf,
                *machine_emf,
            ],
            dtype=float,
        )

    def unpack(self, x: np.ndarray, machine: Optional[MachineState] = None) -> PlantState:
        if not self.has_machine:
            return PlantState(_pair(x, 0), _pair(x, 4), _pair(x, 2), _pair(x, 6))
        return PlantState(
            i_inv=_pair(x, 0),
            i_pcc=_pair(x, 4),
            v_c=_pair(x, 2),
            grid_emf=_pair(x, 12),
            v_pcc_node=_pair(x, 6),
            grid_current=_pair(x, 8),
            machine_current=_pair(x, 10),
            machine=machine,
        )

    def pcc_voltage(self, state: PlantState) -> AlphaBetaPair:
        if state.v_pcc_node is not None:
            return state.v_pcc_node
        if self.pcc_model == "series" and self.impedance.reactance > 0:
            # split the series branch voltage at the L_f2 / L_g junction
            f = self.filt
            r_g = self.impedance.resistance
            l_g = self.impedance.reactance / self.omega
            share = l_g / (f.l2 + l_g)
            g, i, v_c = state.grid_emf, state.i_pcc, state.v_c
            return AlphaBetaPair(
                g.alpha + r_g * i.alpha + share * (v_c.alpha - g.alpha - (f.r2 + r_g) * i.alpha),
                g.beta + r_g * i.beta + share * (v_c.beta - g.beta - (f.r2 + r_g) * i.beta),
            )
        drop = self.impedance.drop(state.i_pcc)
        return AlphaBetaPair(state.grid_emf.alpha + drop.alpha, state.grid_emf.beta + drop.beta)

    def step(self, state: PlantState, v_inv: AlphaBetaPair) -> PlantState:
        x = self.Ad @ self.pack(state) + self.Bd @ np.array(v_inv, dtype=float)
        return self.unpack(x, state.machine)

    def stored_energy(self, state: PlantState) -> float:
        """Magnetic plus electric energy of the filter and grid branch (no machine)"""
        f = self.filt
        l_series = f.l2 + self.impedance.reactance / self.omega
        sq = lambda p: p.alpha**2 + p.beta**2  # noqa: E731
        return 0.5 * (f.l1 * sq(state.i_inv) + f.c * sq(state.v_c) + l_series * sq(state.i_pcc))


def step_network(state: PlantState, v_inv: AlphaBetaPair, network: LinearNetwork) -> PlantState:
    return network.step(state, v_inv)


def phasor_steady_state(
    filt: LclParams,
    impedance: GridImpedance,
    v_grid: complex,
    v_inv: complex = 0j,
) -> Dict[str, complex]:
    """
    Sinusoidal steady state of the machine-free network by nodal analysis.

    Phasors are the α-β vectors at t = 0 (α = real part, β = imaginary part).
    """
    f = filt.in_unit("pu")
    w = f.omega_g
    z1 = complex(f.r1, w * f.l1)
    z2 = complex(f.r2 + impedance.resistance, w * f.l2 + impedance.reactance)
    y_c = 1j * w * f.c

    v_c = (v_inv / z1 + v_grid / z2) / (1.0 / z1 + y_c + 1.0 / z2)
    i_inv = (v_inv - v_c) / z1
    i_pcc = (v_c - v_grid) / z2
    v_pcc = v_grid + complex(impedance.resistance, impedance.reactance) * i_pcc
    return {"i_inv": i_inv, "v_c": v_c, "i_pcc": i_pcc, "v_pcc": v_pcc}


def electrical_power(
    m: MachineState,
    v_pcc: AlphaBetaPair,
    reference_angle: Angle = 0.0,
    i_machine: Optional[AlphaBetaPair] = None,
) -> float:
    """
    Machine output power.

    With the branch current given this is the air-gap power E_m·i_m, which
    matches the network's own machine branch; without it, the terminal
    formula E·|v|/X_sync·sin(δ − φ_v).
    """
    if i_machine is not None:
        return _airgap_power(m, m.delta, i_machine, reference_angle)
    v_mag = v_pcc.norm()
    if v_mag == 0.0:
        return 0.0
    phi_v = wrap_angle(phase_of(v_pcc) - reference_angle)
    return m.E * v_mag / m.X_sync * math.sin(m.delta - phi_v)


def _airgap_power(m: MachineState, delta: float, i_machine: AlphaBetaPair, reference_angle: Angle) -> float:
    angle = reference_angle + delta
    return m.E * (math.cos(angle) * i_machine.alpha + math.sin(angle) * i_machine.beta)


def injected_current(m: MachineState, v_pcc: AlphaBetaPair, reference_angle: Angle = 0.0) -> AlphaBetaPair:
    """(E∠δ − v_pcc)/(jX_sync)"""
    e = m.emf(reference_angle)
    da, db = e.alpha - v_pcc.alpha, e.beta - v_pcc.beta
    return AlphaBetaPair(db / m.X_sync, -da / m.X_sync)


def _swing_rates(m: MachineState, omega: float, p_e: float) -> Tuple[float, float]:
    slip = (omega - m.omega_s) / m.omega_s
    d_omega = m.omega_s / (2.0 * m.H) * (m.P_m - p_e - m.D_m * slip)
    return omega - m.omega_s, d_omega


def machine_step(
    m: MachineState,
    v_pcc: AlphaBetaPair,
    Ts: float,
    reference_angle: Angle = 0.0,
    i_machine: Optional[AlphaBetaPair] = None,
) -> Tuple[MachineState, AlphaBetaPair]:
    """
    Advance the swing equation one sample with classical RK4, the PCC
    voltage (or the machine branch current) held over the step. A held
    machine follows the PCC phase at synchronous speed.
    """
    if Ts <= 0:
        raise ConfigError(f"Ts must be positive, got {Ts}", field="ts")
    v_mag = v_pcc.norm()
    phi_v = wrap_angle(phase_of(v_pcc) - reference_angle) if v_mag > 0 else 0.0

    if m.held:
        m_next = replace(m, delta=phi_v, omega_m=m.omega_s)
        return m_next, injected_current(m_next, v_pcc, reference_angle)

    if i_machine is not None:
        def power(delta: float) -> float:
            return _airgap_power(m, delta, i_machine, reference_angle)
    else:
        def power(delta: float) -> float:
            return m.E * v_mag / m.X_sync * math.sin(delta - phi_v)

    d0, w0 = m.delta, m.omega_m
    k1 = _swing_rates(m, w0, power(d0))
    d1, w1 = d0 + 0.5 * Ts * k1[0], w0 + 0.5 * Ts * k1[1]
    k2 = _swing_rates(m, w1, power(d1))
    d2, w2 = d0 + 0.5 * Ts * k2[0], w0 + 0.5 * Ts * k2[1]
    k3 = _swing_rates(m, w2, power(d2))
    d3, w3 = d0 + Ts * k3[0], w0 + Ts * k3[1]
    k4 = _swing_rates(m, w3, power(d3))
    delta = d0 + Ts / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0])
    omega = w0 + Ts / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1])

    m_next = replace(m, delta=delta, omega_m=omega)
    return m_next, injected_current(m_next, v_pcc, reference_angle)


def release_machine(
    m: MachineState,
    v_pcc: AlphaBetaPair,
    reference_angle: Angle = 0.0,
    kick: float = 0.0,
    i_machine: Optional[AlphaBetaPair] = None,
) -> MachineState:
    """Free the rotor: balance P_m against the present P_e, then displace δ by ``kick``"""
    p_e = electrical_power(m, v_pcc, reference_angle, i_machine)
    logger.info(f"Machine released: P_m={p_e:.4f} pu, kick={kick:.4f} rad")
    return replace(m, held=False, P_m=p_e, delta=m.delta + kick, omega_m=m.omega_s)


def synchronizing_coefficient(E: float, V: float, X: float, delta0: float = 0.0) -> float:
    return E * V / X * math.cos(delta0)


def inertia_for_frequency(
    f_target: float,
    E: float = 1.0,
    V: float = 1.0,
    X: float = 0.0602,
    delta0: float = 0.0,
    omega_s: float = 2.0 * math.pi * 50.0,
) -> float:
    """H giving an electromechanical oscillation at ``f_target`` Hz: ω_s·K_s/(2(2πf)²)"""
    if f_target <= 0:
        raise ConfigError(f"target frequency must be positive, got {f_target}", field="machine.target_frequency")
    k_s = synchronizing_coefficient(E, V, X, delta0)
    if k_s <= 0:
        raise ConfigError(
            f"operating point has no synchronizing torque (K_s = {k_s:.4g})", field="machine.delta0"
        )
    return omega_s * k_s / (2.0 * (2.0 * math.pi * f_target) ** 2)


def damping_for_decay(H: float, tau: float = DEFAULT_TARGET_DECAY) -> float:
    """D_m whose swing envelope decays with time constant ``tau``: 4H/τ"""
    if H <= 0 or tau <= 0:
        raise ConfigError("H and tau must be positive", field="machine.damping")
    return 4.0 * H / tau


# ---------------------------------------------------------------------------
# small-signal calibration of the machine-only network
# ---------------------------------------------------------------------------

# machine-branch network states without i_inv and the two sources
_NODE_STATES = slice(2, 12)
_GRID_SOURCE = slice(12, 14)
_MACHINE_SOURCE = slice(14, 16)
_MACHINE_CURRENT = slice(8, 10)


@dataclass(frozen=True)
class SwingMode:
    frequency: float
    decay_time_constant: float
    eigenvalue: complex


def machine_only_jacobian(
    network: LinearNetwork,
    H: float,
    D_m: float,
    E: float = 1.0,
    V: float = 1.0,
) -> np.ndarray:
    """
    Continuous small-signal matrix of the machine tied to the grid with the
    inverter branch open, in the grid-synchronous d-q frame.

    States: [v_c, i_f2, v_pcc, i_g, i_m] as d-q pairs, then δ and ω_m − ω_s.
    The swing equation uses the air-gap power E_m·i_m, linearized at the
    no-load point δ0 = 0.
    """
    if not network.has_machine:
        raise ConfigError("machine calibration needs a network with a machine branch", field="machine")
    if H <= 0:
        raise ConfigError(f"inertia must be positive, got {H}", field="machine.H")
    w = network.omega
    A = network.A
    n = 10
    spin = np.kron(np.eye(n // 2), rotation_generator(w))
    A_dq = A[_NODE_STATES, _NODE_STATES] - spin
    B_g = A[_NODE_STATES, _GRID_SOURCE]
    B_m = A[_NODE_STATES, _MACHINE_SOURCE]

    delta0 = 0.0
    e_dq = E * np.array([math.cos(delta0), math.sin(delta0)])
    x0 = np.linalg.solve(A_dq, -(B_g @ np.array([V, 0.0]) + B_m @ e_dq))
    i_m0 = x0[_MACHINE_CURRENT]

    J = np.zeros((n + 2, n + 2))
    J[:n, :n] = A_dq
    J[:n, n] = B_m @ (E * np.array([-math.sin(delta0), math.cos(delta0)]))
    J[n, n + 1] = 1.0
    scale = w / (2.0 * H)
    J[n + 1, _MACHINE_CURRENT] = -scale * e_dq
    J[n + 1, n] = -scale * E * (-math.sin(delta0) * i_m0[0] + math.cos(delta0) * i_m0[1])
    J[n + 1, n + 1] = -D_m / (2.0 * H)
    return J


def swing_mode(jacobian: np.ndarray) -> SwingMode:
    """The oscillatory mode in which rotor angle and speed participate most"""
    eigenvalues, left, right = la.eig(jacobian, left=True, right=True)
    n = jacobian.shape[0]
    best, best_share = None, -1.0
    for k, lam in enumerate(eigenvalues):
        if lam.imag <= 0:
            continue
        norm = abs(np.vdot(left[:, k], right[:, k]))
        if norm == 0:
            continue
        share = sum(abs(left[j, k] * right[j, k]) for j in (n - 2, n - 1)) / norm
        if share > best_share:
            best, best_share = lam, share
    if best is None:
        raise NumericalError("no oscillatory electromechanical mode", {"eigenvalues": eigenvalues.tolist()})
    tau = math.inf if best.real >= 0 else -1.0 / best.real
    return SwingMode(frequency=best.imag / (2.0 * math.pi), decay_time_constant=tau, eigenvalue=complex(best))


def calibrate_machine(
    network: LinearNetwork,
    f_target: float,
    E: float = 1.0,
    V: float = 1.0,
    f_reference: float = 8.0,
    tau_reference: float = DEFAULT_TARGET_DECAY,
    damping: Optional[float] = None,
) -> Tuple[float, float]:
    """
    (H, D_m) for the machine-only network.

    D_m is fitted once so that a machine swinging at ``f_reference`` decays
    with ``tau_reference``; H is then fitted for ``f_target`` with that D_m
    (or with ``damping`` when given). Both fits run on the eigenvalues of
    ``machine_only_jacobian``, so the network's own damping and the grid
    resistance are accounted for. A fit that does not converge falls back to
    the lossless formulas with a warning.
    """
    if f_target <= 0 or f_reference <= 0:
        raise ConfigError("target frequencies must be positive", field="machine.target_frequency")
    w = network.omega
    x_tie = network.machine_branch.x_sync + network.impedance.reactance
    H_guess = inertia_for_frequency(f_reference, E=E, V=V, X=x_tie, omega_s=w)
    D_guess = damping_for_decay(H_guess, tau_reference) if damping is None else damping

    def mode(H: float, D: float) -> SwingMode:
        return swing_mode(machine_only_jacobian(network, H, D, E, V))

    if damping is None:
        def reference_mismatch(p):
            m = mode(math.exp(p[0]), p[1])
            return [
                m.frequency / f_reference - 1.0,
                -m.eigenvalue.real * tau_reference - 1.0,
            ]

        solution, info, ier, msg = optimize.fsolve(
            reference_mismatch, [math.log(H_guess), D_guess], full_output=True
        )
        if ier == 1:
            D_m = float(solution[1])
        else:
            logger.warning(f"Damping fit did not converge ({msg.strip()}); using 4H/τ")
            D_m = D_guess
    else:
        D_m = float(damping)

    H0 = inertia_for_frequency(f_target, E=E, V=V, X=x_tie, omega_s=w)

    def frequency_mismatch(p):
        return [mode(math.exp(p[0]), D_m).frequency / f_target - 1.0]

    solution, info, ier, msg = optimize.fsolve(frequency_mismatch, [math.log(H0)], full_output=True)
    if ier == 1:
        H = math.exp(float(solution[0]))
    else:
        logger.warning(f"Inertia fit did not converge ({msg.strip()}); using ω_s·K_s/(2(2πf)²)")
        H = H0

    m = mode(H, D_m)
    logger.debug(
        f"Machine calibrated: H={H:.5f} s, D_m={D_m:.4f}, mode {m.frequency:.3f} Hz, τ={m.decay_time_constant:.4f} s"
    )
    return H, D_m
