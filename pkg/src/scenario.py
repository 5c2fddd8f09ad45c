"""
Closed-loop scenario runner.

One pass per control step: measure, synchronise, transform into the
estimated d-q frame, compute the inverter voltage, advance the network
(and the machine), record.
"""

import math
from dataclasses import asdict, dataclass, fields, replace
from typing import Dict, List, Optional, Tuple

import numpy as np

from src.frames import AlphaBetaPair, DqPair, ZERO_DQ, inv_park, park, wrap_angle
from src.kalman_sync import GainMode, GridImpedance, KalmanSynchronizer, KfVariant
from src.lqr import (
    LclParams,
    LqrDesign,
    PiCurrentController,
    control_step,
    design_lqr,
    equilibrium,
    gain_in_pu,
)
from src.plant import (
    LinearNetwork,
    MachineBranch,
    MachineState,
    PlantState,
    calibrate_machine,
    machine_step,
    release_machine,
)
from src.pll_sync import PllConfig, PllMode, PllSynchronizer
from src.schema import ControllerKind, Method, ScenarioConfig
from src.utils.config import config
from src.utils.logger import logger

PLL_MODES = {
    Method.CPLL: PllMode.CPLL,
    Method.CVI_PLL: PllMode.CVI,
    Method.MVI_PLL: PllMode.MVI,
    Method.NONE: PllMode.CPLL,
}


@dataclass(frozen=True)
class TraceRecord:
    t: float
    v_pcc_d: float
    v_pcc_q: float
    v_pcc_alpha: float
    v_pcc_beta: float
    theta_true: float
    theta_hat: float
    phase_error: float
    i_inv_d: float
    i_inv_q: float
    i_pcc_d: float
    i_pcc_q: float
    v_c_d: float
    v_c_q: float
    u_d: float
    u_q: float
    delta: float
    omega_m: float
    z_active: float
    diverged: bool = False

    def state_values(self) -> Tuple[float, ...]:
        return (
            self.v_pcc_d, self.v_pcc_q, self.i_inv_d, self.i_inv_q,
            self.i_pcc_d, self.i_pcc_q, self.v_c_d, self.v_c_q, self.u_d, self.u_q,
        )


TRACE_COLUMNS: List[str] = [f.name for f in fields(TraceRecord)]


def impedance_schedule(cfg: ScenarioConfig) -> List[Tuple[int, GridImpedance]]:
    """(step index, impedance) pairs; entries landing on the same step keep the last"""
    Ts = cfg.scenario.ts
    schedule: Dict[int, GridImpedance] = {}
    for entry in cfg.grid.impedance_schedule:
        schedule[int(round(entry.time / Ts))] = GridImpedance.polar(entry.magnitude, entry.angle)
    if 0 not in schedule:
        first = cfg.grid.impedance_schedule[0]
        schedule[0] = GridImpedance.polar(first.magnitude, first.angle)
    return sorted(schedule.items())


def filter_params(cfg: ScenarioConfig, unit: str = "pu") -> LclParams:
    f = cfg.filter
    return LclParams.from_si(
        f.l_f1, f.l_f2, f.c_f, f.v_base, f.s_base, cfg.grid.frequency, unit=unit, r_f1=f.r_f1, r_f2=f.r_f2
    )


def build_synchronizer(cfg: ScenarioConfig, model_impedance: GridImpedance):
    method = cfg.scenario.method
    omega = 2.0 * math.pi * cfg.grid.frequency
    if method in (Method.AAEKF_LQR, Method.CAEKF):
        variant = KfVariant.AAEKF if method is Method.AAEKF_LQR else KfVariant.CAEKF
        return KalmanSynchronizer(
            model_impedance,
            omega_g=omega,
            Ts=cfg.scenario.ts,
            q_kf=cfg.kalman.q_kf,
            Rkf=cfg.kalman.r_kf,
            variant=variant,
            gain_mode=GainMode(cfg.kalman.gain_mode),
        )
    pll_cfg = PllConfig.for_mode(
        PLL_MODES[method],
        model_impedance,
        kappa=cfg.pll.kappa,
        kp=cfg.pll.kp,
        ki=cfg.pll.ki,
        omega_nominal=omega,
        windup_limit=cfg.pll.windup_limit,
    )
    return PllSynchronizer(pll_cfg, cfg.scenario.ts)


def build_lqr(cfg: ScenarioConfig) -> LqrDesign:
    design = design_lqr(filter_params(cfg, cfg.lqr.unit), cfg.lqr.weights.as_tuple(), cfg.scenario.ts)
    if design.params.unit != "pu":
        design = replace(design, K=gain_in_pu(design))
    return design


def build_machine(
    cfg: ScenarioConfig, filt: LclParams, z0: GridImpedance, Ts: float
) -> Tuple[MachineState, MachineBranch]:
    """
    Machine and tie for the configured study.

    H and D_m come from the small-signal model of the machine-only network,
    so the machine alone swings at the target frequency and, at the
    reference frequency, decays with the reference time constant.
    """
    m = cfg.machine
    omega = filt.omega_g
    x_sync = filt.reactance(m.l_sync)
    branch = MachineBranch(x_sync=x_sync, r_stator=m.r_stator, c_node=m.c_node * filt.z_base)
    H, D = calibrate_machine(
        LinearNetwork(filt, z0, Ts, branch),
        m.target_frequency,
        E=m.e,
        V=cfg.grid.v_g,
        f_reference=m.reference_frequency,
        tau_reference=m.reference_decay,
        damping=m.damping,
    )
    machine = MachineState(delta=0.0, omega_m=omega, H=H, D_m=D, E=m.e, X_sync=x_sync, omega_s=omega, held=True)
    logger.info(f"Machine: f={m.target_frequency:g} Hz, H={H:.5f} s, D_m={D:.4f}, X_sync={x_sync:.4f} pu")
    return machine, branch


def run_scenario(cfg: ScenarioConfig, seed: Optional[int] = None) -> List[TraceRecord]:
    """
    Simulate one configured scenario.

    Returns one TraceRecord per control step. A run whose states leave the
    divergence limit stops early with ``diverged`` set on the last record.
    """
    sc = cfg.scenario
    Ts = sc.ts
    n_steps = int(round(sc.duration / Ts))
    omega = 2.0 * math.pi * cfg.grid.frequency
    seed = seed if seed is not None else (sc.seed if sc.seed is not None else config.DEFAULT_SEED)
    rng = np.random.default_rng(seed)
    limit = config.DIVERGENCE_LIMIT

    filt = filter_params(cfg)
    schedule = impedance_schedule(cfg)
    z_active = schedule[0][1]
    model_error = 1.0 + cfg.grid.impedance_model_error

    machine, branch = (None, None)
    if cfg.machine is not None:
        machine, branch = build_machine(cfg, filt, z_active, Ts)

    networks: Dict[GridImpedance, LinearNetwork] = {}

    def network_for(z: GridImpedance) -> LinearNetwork:
        if z not in networks:
            networks[z] = LinearNetwork(filt, z, Ts, branch, cfg.grid.pcc_model)
        return networks[z]

    network = network_for(z_active)
    state = PlantState.energized(AlphaBetaPair.polar(cfg.grid.v_g, cfg.grid.initial_phase), machine)

    sync = build_synchronizer(cfg, z_active.scaled(model_error))
    kind = sc.resolved_controller
    if sc.method is Method.NONE:
        # inverter disconnected: zero current reference
        i_ref = ZERO_DQ
    else:
        i_ref = DqPair.polar(cfg.reference.magnitude, math.radians(cfg.reference.angle_deg))
    design = build_lqr(cfg) if kind is ControllerKind.LQR else None
    pi = None
    if kind is ControllerKind.PI:
        pi = PiCurrentController(filt, Ts, cfg.pi.bandwidth_hz, v_sat=cfg.lqr.v_sat)
    nominal_eq = equilibrium(filt, i_ref, DqPair(cfg.grid.v_g, 0.0)) if design is not None else None

    hold_advance = 0.5 * omega * Ts if sc.delay_compensation else 0.0
    v_std, i_std = cfg.noise.voltage_std, cfg.noise.current_std
    release_step = int(round(cfg.machine.release_time / Ts)) if cfg.machine is not None else None
    schedule_iter = iter(schedule[1:])
    next_change = next(schedule_iter, None)

    logger.info(
        f"Running {sc.name!r}: {sc.method.value} with {kind.value}, {n_steps} steps, "
        f"|Z|={z_active.magnitude:.3f} pu, seed={seed}"
    )

    trace: List[TraceRecord] = []
    for k in range(n_steps):
        t = k * Ts

        if next_change is not None and k >= next_change[0]:
            z_active = next_change[1]
            network = network_for(z_active)
            if cfg.grid.track_impedance:
                sync.retune(z_active.scaled(model_error))
            logger.info(f"t={t:.4f} s: grid impedance stepped to |Z|={z_active.magnitude:.3f} pu")
            next_change = next(schedule_iter, None)

        # measurements
        v_pcc = network.pcc_voltage(state)
        i_pcc = state.i_pcc
        v_meas, i_meas = v_pcc, i_pcc
        if v_std > 0:
            dv = rng.normal(0.0, v_std, 2)
            v_meas = AlphaBetaPair(v_pcc.alpha + dv[0], v_pcc.beta + dv[1])
        if i_std > 0:
            di = rng.normal(0.0, i_std, 2)
            i_meas = AlphaBetaPair(i_pcc.alpha + di[0], i_pcc.beta + di[1])

        theta_hat = sync.step(v_meas, i_meas)

        v_pcc_dq = park(v_meas, theta_hat)
        i_inv_dq = park(state.i_inv, theta_hat)
        i_pcc_dq = park(i_meas, theta_hat)
        v_c_dq = park(state.v_c, theta_hat)

        if design is not None:
            x = np.array([*i_inv_dq, *i_pcc_dq, *v_c_dq])
            if cfg.lqr.v_pcc_op == "nominal":
                eq = nominal_eq
            else:
                eq = equilibrium(filt, i_ref, v_pcc_dq)
            u = control_step(design, x, eq, cfg.lqr.v_sat, feedforward=cfg.lqr.feedforward)
        else:
            u = pi.step(i_inv_dq, i_ref, v_pcc_dq)

        v_inv = inv_park(u, theta_hat + hold_advance)
        theta_true = state.grid_phase

        m_now = state.machine
        if m_now is not None:
            if m_now.held and k >= release_step:
                m_now = release_machine(m_now, v_pcc, theta_true, cfg.machine.kick, state.machine_current)
                state = replace(state, machine=m_now)
            m_next, _ = machine_step(m_now, v_pcc, Ts, theta_true, state.machine_current)

        next_state = network.step(state, v_inv)
        if m_now is not None:
            next_state = replace(next_state, machine=m_next)

        trace.append(
            TraceRecord(
                t=t,
                v_pcc_d=v_pcc_dq.d,
                v_pcc_q=v_pcc_dq.q,
                v_pcc_alpha=v_pcc.alpha,
                v_pcc_beta=v_pcc.beta,
                theta_true=theta_true,
                theta_hat=theta_hat,
                phase_error=wrap_angle(theta_hat - theta_true),
                i_inv_d=i_inv_dq.d,
                i_inv_q=i_inv_dq.q,
                i_pcc_d=i_pcc_dq.d,
                i_pcc_q=i_pcc_dq.q,
                v_c_d=v_c_dq.d,
                v_c_q=v_c_dq.q,
                u_d=u.d,
                u_q=u.q,
                delta=m_now.delta if m_now is not None else math.nan,
                omega_m=m_now.omega_m if m_now is not None else math.nan,
                z_active=z_active.magnitude,
            )
        )

        peak = next_state.max_abs()
        if not math.isfinite(peak) or peak > limit:
            logger.warning(f"{sc.method.value} diverged at t={t:.4f} s (max |state| = {peak:.3g} pu)")
            trace[-1] = replace(trace[-1], diverged=True)
            break
        state = next_state

    logger.info(f"✓ Scenario {sc.name!r} finished: {len(trace)} records")
    return trace


def records_as_dicts(trace: List[TraceRecord]) -> List[Dict]:
    return [asdict(r) for r in trace]
