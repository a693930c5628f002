//! Multi-rate simulation loop.
//!
//! Electrical states advance every `dt_electrical`; the fast short-circuit
//! detector samples the DC link at its own rate; thermal nodes, supervisory
//! detectors, the protection state machine and the discharge limiter run on
//! the slower control tick. A fast trip calls the state machine immediately
//! instead of waiting for the next tick.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::circuit::{
    accumulate_switch_heat, carrier, step_electrical, CircuitParams, DcLinkDrive, GateVector,
    LegCommand, PhaseLink, PlantState, StepScratch,
};
use crate::config::{integer_ratio, ConfigError, SimConfig};
use crate::detection::{Detection, HighPass, Nominal, ScDetector, Supervisor, SupervisoryInputs};
use crate::discharge::active_discharge_command;
use crate::faults::{
    apply_gate_faults, apply_measurement_faults, effective_params, leg_health, v_dc_spoof,
    validate_scenario, FaultEvent, FaultKind, Measurements, ValidationError,
};
use crate::metrics::{compute_metrics, MetricsReport};
use crate::noise::{NoiseSource, CH_I_PHASE, CH_V_DC_FAST, CH_V_DC_SUP};
use crate::protection::{
    fsm_step, output_for, FsmError, FsmInputs, FsmSnapshot, ProtectionOutput, ProtectionState,
    StateKind, Transition,
};
use crate::thermal::{thermal_step, RcNode, ThermalError};

/// A validated-on-run scenario: configuration plus fault schedule.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Scenario {
    pub config: SimConfig,
    pub faults: Vec<FaultEvent>,
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(#[from] ConfigError),
    #[error("invalid scenario: {}", join_errors(.0))]
    InvalidScenario(Vec<ValidationError>),
    #[error("numerical divergence at t = {t} s: v_dc = {}, i_phase = {:?}, t_junction max = {}", .state.v_dc, .state.i_phase, .state.junction_max())]
    NumericalDivergence { t: f64, state: Box<PlantState> },
    #[error(transparent)]
    Fsm(#[from] FsmError),
    #[error(transparent)]
    Thermal(#[from] ThermalError),
}

fn join_errors(errs: &[ValidationError]) -> String {
    errs.iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join("; ")
}

/// Values derived from the fault-free calibration run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub sc_threshold: f64,
    /// Peak |AC| of the DC-link voltage seen during the calibration window.
    pub peak_ripple: f64,
    pub nominal: Nominal,
    /// Mean back-EMF power of the fault-free drive.
    pub p_emf_nominal: f64,
    /// Duration of the fault-free calibration run.
    pub duration: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub t: f64,
    pub v_dc: f64,
    pub i_phase: Vec<f64>,
    pub tj_max: f64,
    pub t_res: f64,
    pub state: StateKind,
    pub det_flags: u8,
}

/// One control-tick sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TickRecord {
    pub t: f64,
    pub v_dc: f64,
    pub v_dc_meas: f64,
    pub tj_max: f64,
    /// Hottest junction on legs still in service (not isolated or being isolated).
    pub tj_in_service: f64,
    pub t_res: f64,
    /// Mean back-EMF power over the preceding tick.
    pub p_emf: f64,
    pub state: StateKind,
    pub discharge_on: bool,
    /// Bleed plus active-branch energy over the preceding tick.
    pub e_discharge: f64,
}

/// Energy accumulators integrated at the electrical step.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EnergyAudit {
    pub e_source: f64,
    pub e_dissipated: f64,
    pub e_backemf: f64,
    pub e_stored_initial: f64,
    pub e_stored_final: f64,
}

/// Relative energy-balance error of a run.
pub fn energy_audit(a: &EnergyAudit) -> f64 {
    let scale = a.e_source.max(a.e_stored_initial);
    if scale <= 0.0 {
        return 0.0;
    }
    let delta = a.e_stored_final - a.e_stored_initial;
    (delta - (a.e_source - a.e_dissipated - a.e_backemf)).abs() / scale
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub n_phases: usize,
    pub rows: Vec<TraceRow>,
    pub ticks: Vec<TickRecord>,
    pub detections: Vec<Detection>,
    pub transitions: Vec<Transition>,
    pub calibration: Calibration,
    pub audit: EnergyAudit,
    /// Control ticks or fast-path calls that commanded both switches of a
    /// healthy leg on.
    pub healthy_shoot_through_commands: u64,
    /// Gate edges commanded on a clamped leg while degraded.
    pub isolated_leg_edges: u64,
    pub faults: Vec<FaultEvent>,
    pub final_state: PlantState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOutput {
    pub trace: Trace,
    pub metrics: MetricsReport,
}

/// Runs a scenario and computes its metrics.
pub fn run_scenario(scenario: &Scenario) -> Result<RunOutput, EngineError> {
    let trace = simulate(scenario)?;
    let metrics = compute_metrics(&trace, &scenario.config);
    Ok(RunOutput { trace, metrics })
}

/// Runs a scenario and returns its trace.
pub fn simulate(scenario: &Scenario) -> Result<Trace, EngineError> {
    let cfg = &scenario.config;
    cfg.validate()?;
    validate_scenario(&scenario.faults, &cfg.circuit).map_err(EngineError::InvalidScenario)?;
    let cal = calibrate(cfg)?;
    let mut sim = Sim::new(cfg, &scenario.faults, Mode::Run(cal), cfg.engine.t_end);
    sim.run()?;
    Ok(sim.into_trace(cal))
}

/// Fault-free run that sets the fast-detector threshold and the nominal
/// operating point for everything left unset in the configuration.
pub fn calibrate(cfg: &SimConfig) -> Result<Calibration, EngineError> {
    let window = cfg.detector.calibration_window;
    let extra = if cfg.circuit.emf_freq > 0.0 {
        2.0 / cfg.circuit.emf_freq
    } else {
        20e-3
    };
    let duration = window + extra;
    let mut shadow = cfg.clone();
    shadow.protection.enabled = false;
    let mut sim = Sim::new(&shadow, &[], Mode::Calibrate, duration);
    sim.run()?;
    let acc = &sim.cal;
    let n = cfg.circuit.n_phases as f64;
    let count = acc.count.max(1) as f64;
    let i_rms = (acc.sum_i2 / (n * count)).sqrt();
    let nominal = Nominal {
        i_rms: cfg.supervisory.nominal_i_rms.unwrap_or(i_rms),
        v_dc: cfg.supervisory.nominal_v_dc.unwrap_or(acc.sum_v / count),
    };
    let peak = acc.peak_ac;
    let sc_threshold = cfg
        .detector
        .trip_threshold
        .unwrap_or_else(|| (cfg.detector.ripple_factor * peak).max(1e-3));
    Ok(Calibration {
        sc_threshold,
        peak_ripple: peak,
        nominal,
        p_emf_nominal: acc.sum_p / count,
        duration,
    })
}

/// Analytic periodic steady state of the phase currents at t = 0.
fn steady_state_currents(p: &CircuitParams, v_dc: f64) -> Vec<f64> {
    let w = std::f64::consts::TAU * p.emf_freq;
    let r = p.r_load + p.r_on;
    let x = w * p.l_load;
    let amp = (p.mod_index * v_dc / 2.0 - p.emf_amplitude) / r.hypot(x);
    let phi = x.atan2(r);
    (0..p.n_phases)
        .map(|k| amp * (p.phase_angle(0.0, k) - phi).sin())
        .collect()
}

#[derive(Debug, Clone, Copy)]
enum Mode {
    Calibrate,
    Run(Calibration),
}

#[derive(Debug, Default)]
struct CalAccumulator {
    peak_ac: f64,
    sum_i2: f64,
    sum_v: f64,
    sum_p: f64,
    count: u64,
}

struct Strides {
    n_steps: u64,
    sup: u64,
    th: u64,
    fast: u64,
    trace: u64,
}

struct Sim<'a> {
    cfg: &'a SimConfig,
    faults: &'a [FaultEvent],
    mode: Mode,
    strides: Strides,
    dt: f64,
    has_param_faults: bool,
    windows: Vec<(f64, f64)>,

    state: PlantState,
    scratch: StepScratch,
    links: Vec<PhaseLink>,
    cmd: GateVector,
    prev_cmd: GateVector,
    eff: GateVector,
    prev_eff: GateVector,
    was_degraded: bool,
    emf: Vec<f64>,
    heat: Vec<f64>,
    e_res_heat: f64,
    leg_peak: Vec<f64>,
    leg_peak_prev: Vec<f64>,
    tick_emf: f64,
    tick_discharge: f64,

    hp: HighPass,
    sc: ScDetector,
    supervisor: Supervisor,
    fast_index: u64,
    sup_index: u64,
    noise: Option<NoiseSource>,

    fsm: FsmSnapshot,
    out: ProtectionOutput,
    discharge_on: bool,
    health: Vec<bool>,
    meas: Measurements,

    detections: Vec<Detection>,
    transitions: Vec<Transition>,
    det_flags: u8,
    row_pending: bool,
    rows: Vec<TraceRow>,
    ticks: Vec<TickRecord>,
    audit: EnergyAudit,
    healthy_st: u64,
    isolated_edges: u64,
    cal: CalAccumulator,
}

impl<'a> Sim<'a> {
    fn new(cfg: &'a SimConfig, faults: &'a [FaultEvent], mode: Mode, t_end: f64) -> Self {
        let e = &cfg.engine;
        let p = &cfg.circuit;
        let n = p.n_phases;
        let dt = e.dt_electrical;
        let strides = Strides {
            n_steps: (t_end / dt).round() as u64,
            sup: integer_ratio(e.dt_supervisory, dt).unwrap_or(1),
            th: integer_ratio(e.dt_thermal, dt).unwrap_or(1),
            fast: integer_ratio(1.0 / cfg.detector.sample_rate, dt).unwrap_or(1),
            trace: integer_ratio(e.trace_stride, dt).unwrap_or(1),
        };
        let v0 = e.initial_v_dc.unwrap_or(p.v_source);
        let mut state = PlantState::at_rest(p, v0, cfg.thermal.t_ambient);
        if e.start_in_steady_state && p.emf_freq > 0.0 {
            state.i_phase = steady_state_currents(p, v0);
        }
        let fsm = FsmSnapshot::initial(n);
        let out = output_for(&fsm, p).expect("initial snapshot is always valid");
        let has_param_faults = faults.iter().any(|f| {
            matches!(
                f.kind,
                FaultKind::Overcurrent { .. }
                    | FaultKind::Overvoltage { .. }
                    | FaultKind::ThermalOverload { .. }
            )
        });
        let windows = if e.event_window > 0.0 {
            faults
                .iter()
                .map(|f| (f.t_start - e.event_window, f.t_start + e.event_window))
                .collect()
        } else {
            Vec::new()
        };
        let audit = EnergyAudit {
            e_stored_initial: state.capacitor_energy(p) + state.inductor_energy(p),
            ..Default::default()
        };
        Self {
            cfg,
            faults,
            mode,
            dt,
            has_param_faults,
            windows,
            scratch: StepScratch::new(n),
            links: vec![PhaseLink::Open; n],
            cmd: GateVector::uniform(n, LegCommand::LowOn),
            prev_cmd: GateVector::uniform(n, LegCommand::LowOn),
            eff: GateVector::uniform(n, LegCommand::LowOn),
            prev_eff: GateVector::uniform(n, LegCommand::LowOn),
            was_degraded: false,
            emf: vec![0.0; n],
            heat: vec![0.0; 2 * n],
            e_res_heat: 0.0,
            leg_peak: vec![0.0; n],
            leg_peak_prev: vec![0.0; n],
            tick_emf: 0.0,
            tick_discharge: 0.0,
            hp: HighPass::new(
                cfg.detector.hp_time_constant,
                1.0 / cfg.detector.sample_rate,
            ),
            sc: ScDetector::default(),
            supervisor: Supervisor::new(&cfg.supervisory, n, e.dt_supervisory),
            fast_index: 0,
            sup_index: 0,
            noise: e.noise.enabled.then(|| NoiseSource::new(e.seed)),
            fsm,
            out,
            discharge_on: false,
            health: vec![true; n],
            meas: Measurements {
                v_dc: state.v_dc,
                i_phase: state.i_phase.clone(),
                t_junction_max: state.junction_max(),
                t_res: state.t_discharge_resistor,
            },
            detections: Vec::new(),
            transitions: Vec::new(),
            det_flags: 0,
            row_pending: true,
            rows: Vec::new(),
            ticks: Vec::new(),
            audit,
            healthy_st: 0,
            isolated_edges: 0,
            cal: CalAccumulator::default(),
            strides,
            state,
        }
    }

    fn run(&mut self) -> Result<(), EngineError> {
        let n_steps = self.strides.n_steps;
        for i in 0..=n_steps {
            let t = i as f64 * self.dt;
            if i % self.strides.sup == 0 {
                self.tick(i, t)?;
            }
            if i % self.strides.trace == 0 || i == n_steps || self.row_pending || self.in_window(t)
            {
                self.record_row(t);
            }
            if i == n_steps {
                break;
            }
            self.electrical_step(i, t)?;
        }
        let p = &self.cfg.circuit;
        self.audit.e_stored_final = self.state.capacitor_energy(p) + self.state.inductor_energy(p);
        Ok(())
    }

    fn in_window(&self, t: f64) -> bool {
        self.windows.iter().any(|(a, b)| t >= *a && t <= *b)
    }

    fn modulating(&self) -> bool {
        !self.fsm.state.kind().is_shutdown()
    }

    fn record_row(&mut self, t: f64) {
        self.row_pending = false;
        let row = TraceRow {
            t,
            v_dc: self.state.v_dc,
            i_phase: self.state.i_phase.clone(),
            tj_max: self.state.junction_max(),
            t_res: self.state.t_discharge_resistor,
            state: self.fsm.state.kind(),
            det_flags: self.det_flags,
        };
        match self.rows.last_mut() {
            Some(last) if last.t >= t => *last = row,
            _ => self.rows.push(row),
        }
    }

    fn noise(&mut self, channel: u64, index: u64, sigma: f64) -> f64 {
        match self.noise.as_mut() {
            Some(src) => sigma * src.standard(channel, index),
            None => 0.0,
        }
    }

    /// Legs not clamped or being clamped by protection.
    fn in_service(&self) -> Vec<bool> {
        (0..self.cfg.circuit.n_phases)
            .map(|k| {
                !self.fsm.isolated[k]
                    && !matches!(self.fsm.state, ProtectionState::Isolating { leg, .. } if leg == k)
            })
            .collect()
    }

    // A clamped leg holds the failed device; the thermal channel watches the rest.
    fn junction_max_in(&self, legs: &[bool]) -> f64 {
        let t = self
            .state
            .t_junction
            .iter()
            .enumerate()
            .filter(|(j, _)| legs[j / 2])
            .map(|(_, v)| *v)
            .fold(f64::NEG_INFINITY, f64::max);
        if t.is_finite() {
            t
        } else {
            self.cfg.thermal.t_ambient
        }
    }

    fn tick(&mut self, i: u64, t: f64) -> Result<(), EngineError> {
        let cfg = self.cfg;
        if i > 0 && i.is_multiple_of(self.strides.th) {
            self.thermal_update(t)?;
        }

        let idx = self.sup_index;
        self.sup_index += 1;
        let sigma_v = cfg.engine.noise.sigma_v;
        let sigma_i = cfg.engine.noise.sigma_i;
        self.meas.v_dc = self.state.v_dc + self.noise(CH_V_DC_SUP, idx, sigma_v);
        for k in 0..self.state.i_phase.len() {
            self.meas.i_phase[k] =
                self.state.i_phase[k] + self.noise(CH_I_PHASE + k as u64, idx, sigma_i);
        }
        let in_service = self.in_service();
        let tj_in_service = self.junction_max_in(&in_service);
        self.meas.t_junction_max = tj_in_service;
        self.meas.t_res = self.state.t_discharge_resistor;
        apply_measurement_faults(t, self.faults, &mut self.meas);
        leg_health(t, self.faults, cfg.circuit.n_phases, &mut self.health);

        let p_emf = self.tick_emf / cfg.engine.dt_supervisory;
        self.tick_emf = 0.0;

        match self.mode {
            Mode::Calibrate => {
                if t >= cfg.detector.calibration_window {
                    self.cal.sum_i2 += self.state.i_phase.iter().map(|x| x * x).sum::<f64>();
                    self.cal.sum_v += self.state.v_dc;
                    self.cal.sum_p += p_emf;
                    self.cal.count += 1;
                }
            }
            Mode::Run(cal) => {
                let active = in_service;
                let peaks: Vec<f64> = self.leg_peak.clone();
                let inputs = SupervisoryInputs {
                    i_phase: &self.meas.i_phase,
                    v_dc: self.meas.v_dc,
                    t_junction_max: self.meas.t_junction_max,
                    leg_peak_current: &peaks,
                    active_legs: &active,
                    modulating: self.modulating(),
                    reference_scale: if cfg.circuit.mod_index > 0.0 {
                        self.out.amplitudes.iter().copied().fold(0.0, f64::max)
                            / cfg.circuit.mod_index
                    } else {
                        1.0
                    },
                };
                let dets = self.supervisor.update(
                    &inputs,
                    cfg.engine.dt_supervisory,
                    &cfg.supervisory,
                    cal.nominal,
                    cfg.thermal.t_limit_switch,
                    t,
                );
                for d in &dets {
                    self.det_flags |= d.detector.flag();
                }
                self.detections.extend(dets.iter().cloned());
                self.step_fsm(&dets, t)?;
            }
        }

        self.discharge_on = self.out.discharge_cmd
            && active_discharge_command(
                self.meas.v_dc,
                self.meas.t_res,
                &cfg.discharge,
                cfg.thermal.t_limit_res,
                self.discharge_on,
            );

        self.ticks.push(TickRecord {
            t,
            v_dc: self.state.v_dc,
            v_dc_meas: self.meas.v_dc,
            tj_max: self.state.junction_max(),
            tj_in_service,
            t_res: self.state.t_discharge_resistor,
            p_emf,
            state: self.fsm.state.kind(),
            discharge_on: self.discharge_on,
            e_discharge: self.tick_discharge,
        });
        self.tick_discharge = 0.0;
        std::mem::swap(&mut self.leg_peak, &mut self.leg_peak_prev);
        self.leg_peak.iter_mut().for_each(|x| *x = 0.0);
        Ok(())
    }

    fn step_fsm(&mut self, dets: &[Detection], t: f64) -> Result<(), EngineError> {
        let cfg = self.cfg;
        let inputs = FsmInputs {
            leg_healthy: &self.health,
            v_dc: self.meas.v_dc,
            v_safe: cfg.discharge.v_safe,
        };
        let (snap, out, tr) = fsm_step(&self.fsm, dets, &inputs, t, &cfg.protection, &cfg.circuit)?;
        if !tr.is_empty() {
            self.row_pending = true;
            if tr.iter().any(|x| x.to == StateKind::Normal) {
                self.sc.reset();
                self.supervisor.reset_latches();
                self.det_flags = 0;
            }
            self.transitions.extend(tr);
        }
        self.fsm = snap;
        self.out = out;
        Ok(())
    }

    fn thermal_update(&mut self, t: f64) -> Result<(), EngineError> {
        let th = &self.cfg.thermal;
        let dt_th = self.cfg.engine.dt_thermal;
        let mult = if self.has_param_faults {
            effective_params(t, self.faults, &self.cfg.circuit).1
        } else {
            1.0
        };
        let node = RcNode {
            r_th: th.r_th * mult,
            c_th: th.c_th,
        };
        for (tj, q) in self.state.t_junction.iter_mut().zip(self.heat.iter_mut()) {
            *tj = thermal_step(*tj, *q / dt_th, dt_th, node, th.t_ambient)?;
            *q = 0.0;
        }
        self.state.t_discharge_resistor = thermal_step(
            self.state.t_discharge_resistor,
            self.e_res_heat / dt_th,
            dt_th,
            th.resistor(),
            th.t_ambient,
        )?;
        self.e_res_heat = 0.0;
        Ok(())
    }

    fn electrical_step(&mut self, i: u64, t: f64) -> Result<(), EngineError> {
        let cfg = self.cfg;
        let base = &cfg.circuit;
        let p_eff;
        let p: &CircuitParams = if self.has_param_faults {
            p_eff = effective_params(t, self.faults, base).0;
            &p_eff
        } else {
            base
        };
        let n = p.n_phases;
        let c = carrier(t, p.f_pwm);
        let degraded = matches!(self.fsm.state, ProtectionState::Degraded { .. });
        std::mem::swap(&mut self.prev_cmd, &mut self.cmd);
        for k in 0..n {
            let s = p.phase_angle(t, k).sin();
            self.emf[k] = p.emf_amplitude * s;
            let mut cmd = if self.out.amplitudes[k] * s > c {
                LegCommand::HighOn
            } else {
                LegCommand::LowOn
            };
            if let Some(o) = self.out.gate_override[k] {
                cmd = o;
            }
            if cmd == LegCommand::BothOn && self.health[k] {
                self.healthy_st += 1;
            }
            // the clamp itself is applied on the first degraded step
            if degraded && self.was_degraded && self.fsm.isolated[k] && cmd != self.prev_cmd[k] {
                self.isolated_edges += 1;
            }
            self.cmd[k] = cmd;
        }
        self.was_degraded = degraded;
        std::mem::swap(&mut self.prev_eff, &mut self.eff);
        self.eff.0.copy_from_slice(&self.cmd.0);
        if !self.faults.is_empty() {
            apply_gate_faults(t, self.faults, &mut self.eff);
        }
        let half_sw = 0.5 * p.e_switching;
        for k in 0..n {
            let (a, b) = (self.prev_eff[k], self.eff[k]);
            let commutation = a != b
                && matches!(a, LegCommand::HighOn | LegCommand::LowOn)
                && matches!(b, LegCommand::HighOn | LegCommand::LowOn);
            if commutation && i > 0 {
                self.heat[2 * k] += half_sw;
                self.heat[2 * k + 1] += half_sw;
            }
            self.links[k] = PhaseLink::from_gate(b, self.out.asc[k]);
        }
        let drive = DcLinkDrive {
            v_source: p.v_source,
            source_connected: !self.out.contactor_open,
            g_discharge: if self.discharge_on {
                1.0 / cfg.discharge.r_active
            } else {
                0.0
            },
        };
        let flows = step_electrical(
            &mut self.state,
            &self.links,
            p,
            &self.emf,
            drive,
            self.dt,
            &mut self.scratch,
        );
        let t_next = (i + 1) as f64 * self.dt;
        self.state.t = t_next;
        accumulate_switch_heat(
            &mut self.heat,
            &self.links,
            &self.eff,
            &self.scratch,
            p,
            self.dt,
        );

        self.audit.e_source += flows.e_source;
        self.audit.e_dissipated += flows.dissipated();
        self.audit.e_backemf += flows.e_backemf;
        self.e_res_heat += flows.e_active;
        self.tick_emf += flows.e_backemf;
        self.tick_discharge += flows.e_bleed + flows.e_active;
        for (pk, cur) in self
            .leg_peak
            .iter_mut()
            .zip(&self.scratch.leg_switch_current)
        {
            *pk = pk.max(*cur);
        }

        if !self.state.is_finite() {
            return Err(EngineError::NumericalDivergence {
                t: t_next,
                state: Box::new(self.state.clone()),
            });
        }

        if (i + 1).is_multiple_of(self.strides.fast) {
            self.fast_sample(t_next)?;
        }
        Ok(())
    }

    fn fast_sample(&mut self, t: f64) -> Result<(), EngineError> {
        let cfg = self.cfg;
        let idx = self.fast_index;
        self.fast_index += 1;
        let mut v = self.state.v_dc + self.noise(CH_V_DC_FAST, idx, cfg.engine.noise.sigma_v);
        if !self.faults.is_empty() {
            v += v_dc_spoof(t, self.faults);
        }
        let ac = self.hp.update(v);
        match self.mode {
            Mode::Calibrate => {
                if t <= cfg.detector.calibration_window {
                    self.cal.peak_ac = self.cal.peak_ac.max(ac.abs());
                }
            }
            Mode::Run(cal) => {
                if !self.modulating() {
                    return Ok(());
                }
                if let Some(mut d) =
                    self.sc
                        .update(ac, cal.sc_threshold, cfg.detector.confirm_samples, t)
                {
                    d.leg = self.localize();
                    self.det_flags |= d.detector.flag();
                    self.detections.push(d.clone());
                    self.step_fsm(std::slice::from_ref(&d), t)?;
                }
            }
        }
        Ok(())
    }

    /// Leg whose switch current exceeded the desaturation level most recently.
    fn localize(&self) -> Option<usize> {
        let th = self.cfg.detector.desat_current;
        (0..self.leg_peak.len())
            .map(|k| (k, self.leg_peak[k].max(self.leg_peak_prev[k])))
            .filter(|(_, pk)| *pk > th)
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(k, _)| k)
    }

    fn into_trace(self, calibration: Calibration) -> Trace {
        Trace {
            n_phases: self.cfg.circuit.n_phases,
            rows: self.rows,
            ticks: self.ticks,
            detections: self.detections,
            transitions: self.transitions,
            calibration,
            audit: self.audit,
            healthy_shoot_through_commands: self.healthy_st,
            isolated_leg_edges: self.isolated_edges,
            faults: self.faults.to_vec(),
            final_state: self.state,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_duration_audit() {
        assert_eq!(energy_audit(&EnergyAudit::default()), 0.0);
    }

    #[test]
    fn steady_state_currents_sum_to_zero() {
        let p = CircuitParams::default();
        let i = steady_state_currents(&p, 400.0);
        assert!(i.iter().sum::<f64>().abs() < 1e-9);
        let amp = i.iter().map(|x| x.abs()).fold(0.0, f64::max);
        assert!(amp > 100.0 && amp < 120.0, "{amp}");
    }
}
