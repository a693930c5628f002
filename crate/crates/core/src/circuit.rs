//! Electrical model of an N-phase two-level inverter.
//!
//! The plant is a stiff DC source behind `r_source`, a DC-link capacitor with a
//! passive bleed resistor, and a star-connected RL load with a sinusoidal
//! back-EMF per phase. Switches are ideal with an on-resistance; there is no
//! dead time and no diode model. A leg with both switches off is treated as an
//! open phase whose current decays through `r_open`.

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CircuitParams {
    pub n_phases: usize,
    /// Open-circuit source voltage (V).
    pub v_source: f64,
    pub r_source: f64,
    /// DC-link capacitance (F).
    pub c_dc: f64,
    /// Capacitor ESR. Only appears in the shoot-through path.
    pub esr_dc: f64,
    /// On-resistance of one conducting switch.
    pub r_on: f64,
    pub r_load: f64,
    pub l_load: f64,
    pub emf_amplitude: f64,
    pub emf_freq: f64,
    /// Passive bleed resistor across the DC link.
    pub r_bleed: f64,
    pub f_pwm: f64,
    pub mod_index: f64,
    /// Resistance seen by an open (both-off) phase while its current collapses.
    pub r_open: f64,
    /// Heat deposited per leg commutation (J), split between the two switches.
    /// Heat-only: it is not drawn from the electrical network.
    pub e_switching: f64,
}

impl Default for CircuitParams {
    fn default() -> Self {
        Self {
            n_phases: 5,
            v_source: 400.0,
            r_source: 50e-3,
            c_dc: 500e-6,
            esr_dc: 10e-3,
            r_on: 5e-3,
            r_load: 0.5,
            l_load: 200e-6,
            emf_amplitude: 100.0,
            emf_freq: 100.0,
            r_bleed: 10e3,
            f_pwm: 10e3,
            mod_index: 0.8,
            r_open: 1e3,
            e_switching: 5e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParamError {
    #[error("n_phases must be at least 3 (got {0})")]
    TooFewPhases(usize),
    #[error("{name} must be positive (got {value})")]
    NotPositive { name: &'static str, value: f64 },
    #[error("{name} must be finite and non-negative (got {value})")]
    Negative { name: &'static str, value: f64 },
    #[error("mod_index must lie in [0, 1] (got {0})")]
    ModIndex(f64),
}

impl CircuitParams {
    pub fn validate(&self) -> Result<(), ParamError> {
        if self.n_phases < 3 {
            return Err(ParamError::TooFewPhases(self.n_phases));
        }
        let positive = [
            ("r_source", self.r_source),
            ("c_dc", self.c_dc),
            ("esr_dc", self.esr_dc),
            ("r_on", self.r_on),
            ("r_load", self.r_load),
            ("l_load", self.l_load),
            ("r_bleed", self.r_bleed),
            ("f_pwm", self.f_pwm),
            ("r_open", self.r_open),
        ];
        for (name, value) in positive {
            if !(value > 0.0) {
                return Err(ParamError::NotPositive { name, value });
            }
        }
        let non_negative = [
            ("v_source", self.v_source),
            ("emf_amplitude", self.emf_amplitude),
            ("emf_freq", self.emf_freq),
            ("e_switching", self.e_switching),
        ];
        for (name, value) in non_negative {
            if !(value >= 0.0 && value.is_finite()) {
                return Err(ParamError::Negative { name, value });
            }
        }
        if !(0.0..=1.0).contains(&self.mod_index) {
            return Err(ParamError::ModIndex(self.mod_index));
        }
        Ok(())
    }

    /// Electrical angle of phase `k` at time `t`.
    #[inline]
    pub fn phase_angle(&self, t: f64, k: usize) -> f64 {
        TAU * self.emf_freq * t - TAU * k as f64 / self.n_phases as f64
    }

    pub fn back_emf(&self, t: f64, k: usize) -> f64 {
        self.emf_amplitude * self.phase_angle(t, k).sin()
    }

    /// Resistance of the shoot-through loop: two switches plus the capacitor ESR.
    pub fn shoot_through_resistance(&self) -> f64 {
        2.0 * self.r_on + self.esr_dc
    }
}

/// Command for one inverter leg.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LegCommand {
    HighOn,
    LowOn,
    BothOff,
    /// Both switches conducting. Never produced by the modulator.
    BothOn,
}

impl LegCommand {
    /// Leg midpoint as a fraction of `v_dc`; `None` for an open leg.
    pub fn level(self) -> Option<f64> {
        match self {
            LegCommand::HighOn => Some(1.0),
            LegCommand::LowOn => Some(0.0),
            LegCommand::BothOn => Some(0.5),
            LegCommand::BothOff => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GateVector(pub Vec<LegCommand>);

impl GateVector {
    pub fn uniform(n: usize, cmd: LegCommand) -> Self {
        Self(vec![cmd; n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn has_shoot_through(&self) -> bool {
        self.0.contains(&LegCommand::BothOn)
    }
}

impl std::ops::Index<usize> for GateVector {
    type Output = LegCommand;
    fn index(&self, k: usize) -> &LegCommand {
        &self.0[k]
    }
}

impl std::ops::IndexMut<usize> for GateVector {
    fn index_mut(&mut self, k: usize) -> &mut LegCommand {
        &mut self.0[k]
    }
}

/// How a phase winding is connected during one integration step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PhaseLink {
    /// Tied to the star point and driven from a leg at `level · v_dc`.
    Star { level: f64, shoot_through: bool },
    /// Both switches off; current collapses through `r_open`.
    Open,
    /// Active short circuit: the winding freewheels through the low switch,
    /// decoupled from the star point.
    Freewheel,
}

impl PhaseLink {
    pub fn from_gate(cmd: LegCommand, asc: bool) -> Self {
        match (cmd, asc) {
            (LegCommand::LowOn, true) => PhaseLink::Freewheel,
            (LegCommand::BothOff, _) => PhaseLink::Open,
            (cmd, _) => PhaseLink::Star {
                level: cmd.level().unwrap_or(0.0),
                shoot_through: cmd == LegCommand::BothOn,
            },
        }
    }
}

/// Continuous plant state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantState {
    pub t: f64,
    pub i_phase: Vec<f64>,
    pub v_dc: f64,
    /// Junction temperatures, high switch of leg k at `2k`, low switch at `2k + 1`.
    pub t_junction: Vec<f64>,
    pub t_discharge_resistor: f64,
}

impl PlantState {
    pub fn at_rest(p: &CircuitParams, v_dc: f64, t_ambient: f64) -> Self {
        Self {
            t: 0.0,
            i_phase: vec![0.0; p.n_phases],
            v_dc,
            t_junction: vec![t_ambient; 2 * p.n_phases],
            t_discharge_resistor: t_ambient,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.v_dc.is_finite()
            && self.t_discharge_resistor.is_finite()
            && self.i_phase.iter().all(|x| x.is_finite())
            && self.t_junction.iter().all(|x| x.is_finite())
    }

    pub fn capacitor_energy(&self, p: &CircuitParams) -> f64 {
        0.5 * p.c_dc * self.v_dc * self.v_dc
    }

    pub fn inductor_energy(&self, p: &CircuitParams) -> f64 {
        0.5 * p.l_load * self.i_phase.iter().map(|i| i * i).sum::<f64>()
    }

    pub fn junction_max(&self) -> f64 {
        self.t_junction
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Load-neutral-referenced phase voltages `u_k = v_dc·(b_k − mean b)`.
///
/// The mean is taken over conducting legs only; open legs are reported as `None`.
pub fn phase_voltages(gates: &GateVector, v_dc: f64, n: usize) -> Vec<Option<f64>> {
    debug_assert_eq!(gates.len(), n);
    let levels: Vec<Option<f64>> = gates.0.iter().map(|g| g.level()).collect();
    let (sum, count) = levels
        .iter()
        .flatten()
        .fold((0.0, 0usize), |(s, c), b| (s + b, c + 1));
    if count == 0 {
        return vec![None; n];
    }
    let mean = sum / count as f64;
    levels
        .into_iter()
        .map(|b| b.map(|b| v_dc * (b - mean)))
        .collect()
}

/// Time derivatives of the electrical state.
#[derive(Debug, Clone, PartialEq)]
pub struct ElectricalRates {
    pub di_phase: Vec<f64>,
    pub dv_dc: f64,
}

/// Continuous-time right-hand side for the given gate pattern, with the
/// source connected and `i_discharge` drawn by the active discharge branch.
pub fn electrical_derivatives(
    state: &PlantState,
    gates: &GateVector,
    p: &CircuitParams,
    i_discharge: f64,
) -> ElectricalRates {
    let links: Vec<PhaseLink> = gates
        .0
        .iter()
        .map(|&g| PhaseLink::from_gate(g, false))
        .collect();
    let emf: Vec<f64> = (0..p.n_phases).map(|k| p.back_emf(state.t, k)).collect();
    let v = state.v_dc;
    let v_n = star_point(&links, &emf, v);
    let r_phase = p.r_load + p.r_on;
    let mut i_inverter = 0.0;
    let mut n_short = 0usize;
    let di_phase = links
        .iter()
        .zip(&state.i_phase)
        .zip(&emf)
        .map(|((link, &i), &e)| match *link {
            PhaseLink::Star {
                level,
                shoot_through,
            } => {
                i_inverter += level * i;
                n_short += shoot_through as usize;
                (level * v - v_n - e - r_phase * i) / p.l_load
            }
            PhaseLink::Open => -(p.r_load + p.r_open) * i / p.l_load,
            PhaseLink::Freewheel => -r_phase * i / p.l_load,
        })
        .collect();
    let i_shoot = n_short as f64 * v / p.shoot_through_resistance();
    let dv_dc =
        ((p.v_source - v) / p.r_source - i_inverter - v / p.r_bleed - i_discharge - i_shoot)
            / p.c_dc;
    ElectricalRates { di_phase, dv_dc }
}

/// Star-point potential (relative to the negative rail) that keeps the sum of
/// the star-connected phase currents free of drive.
fn star_point(links: &[PhaseLink], emf: &[f64], v_dc: f64) -> f64 {
    let (sum, count) = links
        .iter()
        .zip(emf)
        .fold((0.0, 0usize), |(s, c), (link, e)| match link {
            PhaseLink::Star { level, .. } => (s + level * v_dc - e, c + 1),
            _ => (s, c),
        });
    if count == 0 {
        0.0
    } else {
        sum / count as f64
    }
}

/// Star-node currents must sum to zero. When an open or clamped phase leaves
/// the star it strands its current there; the mismatch is spread evenly over
/// the star phases and the inductor energy this removes is returned.
fn enforce_star_kcl(state: &mut PlantState, links: &[PhaseLink], l: f64) -> f64 {
    let (sum, count) = links
        .iter()
        .zip(&state.i_phase)
        .filter(|(link, _)| matches!(link, PhaseLink::Star { .. }))
        .fold((0.0, 0usize), |(s, c), (_, i)| (s + i, c + 1));
    if count == 0 || sum == 0.0 {
        return 0.0;
    }
    let mean = sum / count as f64;
    for (link, i) in links.iter().zip(state.i_phase.iter_mut()) {
        if matches!(link, PhaseLink::Star { .. }) {
            *i -= mean;
        }
    }
    // Σ(i² − (i − m)²) = 2m·Σi − n·m² = n·m²
    0.5 * l * count as f64 * mean * mean
}

/// DC-link boundary conditions for one integration step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DcLinkDrive {
    /// Effective source voltage (including any surge).
    pub v_source: f64,
    pub source_connected: bool,
    /// Conductance of the active discharge branch when switched in (0 when off).
    pub g_discharge: f64,
}

/// Energy flows and per-leg observations from one integration step.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StepFlows {
    pub e_source: f64,
    pub e_r_source: f64,
    pub e_bleed: f64,
    pub e_active: f64,
    pub e_shoot_through: f64,
    pub e_phase_resistive: f64,
    /// Inductor energy released when star currents are forced back to KCL
    /// after a phase leaves the star (snubber / clamp loss).
    pub e_commutation: f64,
    pub e_backemf: f64,
}

impl StepFlows {
    pub fn dissipated(&self) -> f64 {
        self.e_r_source
            + self.e_bleed
            + self.e_active
            + self.e_shoot_through
            + self.e_phase_resistive
            + self.e_commutation
    }
}

/// Reusable per-step buffers for [`step_electrical`].
#[derive(Debug, Clone)]
pub struct StepScratch {
    pub i_mid: Vec<f64>,
    /// Current through the conducting switch(es) of each leg at the end of the step.
    pub leg_switch_current: Vec<f64>,
    pub shoot_through_current: f64,
}

impl StepScratch {
    pub fn new(n: usize) -> Self {
        Self {
            i_mid: vec![0.0; n],
            leg_switch_current: vec![0.0; n],
            shoot_through_current: 0.0,
        }
    }
}

/// One semi-implicit Euler step of the electrical states.
///
/// Phase currents are advanced first with the resistive terms implicit and the
/// previous `v_dc`; the DC link is then advanced with the new currents and its
/// conductive terms implicit. `emf` holds the back-EMF per phase at the start
/// of the step.
pub fn step_electrical(
    state: &mut PlantState,
    links: &[PhaseLink],
    p: &CircuitParams,
    emf: &[f64],
    drive: DcLinkDrive,
    dt: f64,
    scratch: &mut StepScratch,
) -> StepFlows {
    let mut flows = StepFlows {
        e_commutation: enforce_star_kcl(state, links, p.l_load),
        ..StepFlows::default()
    };
    let v = state.v_dc;
    let v_n = star_point(links, emf, v);
    let r_conducting = p.r_load + p.r_on;
    let mut i_inverter = 0.0;
    let mut g_shoot = 0.0;
    let dt_l = dt / p.l_load;

    for k in 0..links.len() {
        let i = state.i_phase[k];
        let (u, r) = match links[k] {
            PhaseLink::Star {
                level,
                shoot_through,
            } => {
                if shoot_through {
                    g_shoot += 1.0 / p.shoot_through_resistance();
                }
                (level * v - v_n - emf[k], r_conducting)
            }
            PhaseLink::Open => (0.0, p.r_load + p.r_open),
            PhaseLink::Freewheel => (0.0, r_conducting),
        };
        let i_new = (i + dt_l * u) / (1.0 + dt_l * r);
        let i_mid = 0.5 * (i + i_new);
        flows.e_phase_resistive += dt * r * i_new * i_mid;
        if let PhaseLink::Star { level, .. } = links[k] {
            i_inverter += level * i_mid;
            flows.e_backemf += dt * emf[k] * i_mid;
        }
        state.i_phase[k] = i_new;
        scratch.i_mid[k] = i_mid;
    }

    let g_source = if drive.source_connected {
        1.0 / p.r_source
    } else {
        0.0
    };
    let g_bleed = 1.0 / p.r_bleed;
    let g_total = g_source + g_bleed + drive.g_discharge + g_shoot;
    let dt_c = dt / p.c_dc;
    let v_new = (v + dt_c * (drive.v_source * g_source - i_inverter)) / (1.0 + dt_c * g_total);
    let v_mid = 0.5 * (v + v_new);

    if drive.source_connected {
        let i_s = (drive.v_source - v_new) * g_source;
        flows.e_source = dt * drive.v_source * i_s;
        flows.e_r_source = dt * i_s * i_s * p.r_source;
    }
    flows.e_bleed = dt * g_bleed * v_new * v_mid;
    flows.e_active = dt * drive.g_discharge * v_new * v_mid;
    flows.e_shoot_through = dt * g_shoot * v_new * v_mid;

    let i_shoot_leg = v_new / p.shoot_through_resistance();
    scratch.shoot_through_current = if g_shoot > 0.0 { i_shoot_leg } else { 0.0 };
    for (k, link) in links.iter().enumerate() {
        let i = state.i_phase[k].abs();
        scratch.leg_switch_current[k] = match *link {
            PhaseLink::Star {
                shoot_through: true,
                ..
            } => i_shoot_leg + 0.5 * i,
            PhaseLink::Star { .. } | PhaseLink::Freewheel => i,
            PhaseLink::Open => 0.0,
        };
    }

    state.v_dc = v_new;
    state.t += dt;
    flows
}

/// Carrier triangle in [-1, 1], starting at its valley at every period boundary.
#[inline]
pub fn carrier(t: f64, f_pwm: f64) -> f64 {
    let phase = (t * f_pwm).fract();
    if phase < 0.5 {
        -1.0 + 4.0 * phase
    } else {
        3.0 - 4.0 * phase
    }
}

/// Sine-triangle modulation with the nominal `mod_index` on every leg.
pub fn pwm_gate_commands(t: f64, p: &CircuitParams) -> GateVector {
    let amplitudes = vec![p.mod_index; p.n_phases];
    let mut out = GateVector::uniform(p.n_phases, LegCommand::LowOn);
    pwm_with_references(t, p, &amplitudes, &mut out);
    out
}

/// Sine-triangle modulation with a per-leg reference amplitude, written into `out`.
pub fn pwm_with_references(t: f64, p: &CircuitParams, amplitudes: &[f64], out: &mut GateVector) {
    let c = carrier(t, p.f_pwm);
    for (k, a) in amplitudes.iter().enumerate() {
        let reference = a * p.phase_angle(t, k).sin();
        out[k] = if reference > c {
            LegCommand::HighOn
        } else {
            LegCommand::LowOn
        };
    }
}

/// Conduction loss per switch (W), indexed like [`PlantState::t_junction`].
pub fn conduction_losses(state: &PlantState, gates: &GateVector, p: &CircuitParams) -> Vec<f64> {
    let mut out = vec![0.0; 2 * p.n_phases];
    let i_shoot = state.v_dc / p.shoot_through_resistance();
    for (k, g) in gates.0.iter().enumerate() {
        let i = state.i_phase[k];
        match g {
            LegCommand::HighOn => out[2 * k] = p.r_on * i * i,
            LegCommand::LowOn => out[2 * k + 1] = p.r_on * i * i,
            LegCommand::BothOn => {
                out[2 * k] = p.r_on * i_shoot * i_shoot;
                out[2 * k + 1] = p.r_on * i_shoot * i_shoot;
            }
            LegCommand::BothOff => {}
        }
    }
    out
}

/// Conduction losses for the link pattern actually integrated, using the
/// shoot-through current from the last step.
pub(crate) fn accumulate_switch_heat(
    heat: &mut [f64],
    links: &[PhaseLink],
    gates: &GateVector,
    scratch: &StepScratch,
    p: &CircuitParams,
    dt: f64,
) {
    for (k, link) in links.iter().enumerate() {
        let i = scratch.i_mid[k];
        let e = p.r_on * i * i * dt;
        match link {
            PhaseLink::Star {
                shoot_through: true,
                ..
            } => {
                let is = scratch.shoot_through_current;
                let e_st = p.r_on * is * is * dt;
                heat[2 * k] += e_st;
                heat[2 * k + 1] += e_st;
            }
            PhaseLink::Star { .. } => match gates[k] {
                LegCommand::HighOn => heat[2 * k] += e,
                _ => heat[2 * k + 1] += e,
            },
            PhaseLink::Freewheel => heat[2 * k + 1] += e,
            PhaseLink::Open => {}
        }
    }
}
