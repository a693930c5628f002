//! Protection state machine.
//!
//! On a localized short-circuit or phase loss the faulty leg is first blocked,
//! then clamped by an active short circuit (low switch on) once the isolation
//! actuation delay has elapsed, and the remaining legs keep driving the load
//! with rescaled references. Shutdown-class faults and operator stops open the
//! main contactor and hand over to the discharge controller. A cleared leg is
//! switched back on after the re-enable delay plus a hold-off.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::circuit::{CircuitParams, LegCommand};
use crate::detection::{Detection, FaultClass};

/// Adaptive isolation actuation delay, decaying exponentially with the time
/// since scenario start.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IsolationSchedule {
    /// Delay for a fault at t = 0 (s).
    pub t0_delay: f64,
    /// Delay reached at `t_final` and held afterwards (s).
    pub t_final_delay: f64,
    pub t_final: f64,
}

impl Default for IsolationSchedule {
    fn default() -> Self {
        Self {
            t0_delay: 40.00e-3,
            t_final_delay: 11.37e-3,
            t_final: 1.0,
        }
    }
}

impl IsolationSchedule {
    /// Decay rate such that `t0_delay · exp(−λ · t_final) = t_final_delay`.
    pub fn lambda(&self) -> f64 {
        (self.t0_delay / self.t_final_delay).ln() / self.t_final
    }
}

pub fn isolation_delay(t_fault: f64, sched: &IsolationSchedule) -> f64 {
    if t_fault >= sched.t_final {
        sched.t_final_delay
    } else {
        sched.t0_delay * (-sched.lambda() * t_fault.max(0.0)).exp()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProtectionConfig {
    /// When false the state machine never leaves `Normal` and emits no overrides.
    pub enabled: bool,
    pub schedule: IsolationSchedule,
    pub recovery_holdoff: f64,
    /// Detection classes that trigger a safe shutdown.
    pub shutdown_classes: Vec<FaultClass>,
    /// Operator-requested shutdown time.
    pub operator_stop_s: Option<f64>,
}

impl Default for ProtectionConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            schedule: IsolationSchedule::default(),
            recovery_holdoff: 50e-3,
            shutdown_classes: vec![
                FaultClass::Overvoltage,
                FaultClass::Thermal,
                FaultClass::Overcurrent,
            ],
            operator_stop_s: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "state")]
pub enum ProtectionState {
    Normal,
    Detected {
        class: FaultClass,
        t: f64,
        leg: Option<usize>,
    },
    Isolating {
        leg: usize,
        t_started: f64,
        t_complete: f64,
    },
    Degraded {
        healthy_set: Vec<usize>,
    },
    Discharging {
        t_started: f64,
    },
    SafeState {
        t_entered: f64,
    },
    Recovering {
        t_started: f64,
        t_complete: f64,
    },
}

/// Payload-free view of [`ProtectionState`], used in traces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum StateKind {
    Normal,
    Detected,
    Isolating,
    Degraded,
    Discharging,
    SafeState,
    Recovering,
}

impl StateKind {
    pub fn name(self) -> &'static str {
        match self {
            StateKind::Normal => "Normal",
            StateKind::Detected => "Detected",
            StateKind::Isolating => "Isolating",
            StateKind::Degraded => "Degraded",
            StateKind::Discharging => "Discharging",
            StateKind::SafeState => "SafeState",
            StateKind::Recovering => "Recovering",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "Normal" => StateKind::Normal,
            "Detected" => StateKind::Detected,
            "Isolating" => StateKind::Isolating,
            "Degraded" => StateKind::Degraded,
            "Discharging" => StateKind::Discharging,
            "SafeState" => StateKind::SafeState,
            "Recovering" => StateKind::Recovering,
            _ => return None,
        })
    }

    /// Inverter blocked and DC link being (or already) discharged.
    pub fn is_shutdown(self) -> bool {
        matches!(self, StateKind::Discharging | StateKind::SafeState)
    }
}

impl fmt::Display for StateKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl ProtectionState {
    pub fn kind(&self) -> StateKind {
        match self {
            ProtectionState::Normal => StateKind::Normal,
            ProtectionState::Detected { .. } => StateKind::Detected,
            ProtectionState::Isolating { .. } => StateKind::Isolating,
            ProtectionState::Degraded { .. } => StateKind::Degraded,
            ProtectionState::Discharging { .. } => StateKind::Discharging,
            ProtectionState::SafeState { .. } => StateKind::SafeState,
            ProtectionState::Recovering { .. } => StateKind::Recovering,
        }
    }
}

fn is_legal(from: StateKind, to: StateKind) -> bool {
    use StateKind::*;
    matches!(
        (from, to),
        (Normal, Detected)
            | (Normal, Discharging)
            | (Detected, Isolating)
            | (Detected, Discharging)
            | (Isolating, Degraded)
            | (Isolating, Discharging)
            | (Degraded, Detected)
            | (Degraded, Recovering)
            | (Degraded, Discharging)
            | (Recovering, Normal)
            | (Recovering, Detected)
            | (Recovering, Discharging)
            | (Discharging, SafeState)
    )
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FsmError {
    #[error("illegal transition {from} -> {to} at t = {t} s")]
    IllegalTransition {
        from: StateKind,
        to: StateKind,
        t: f64,
    },
    #[error("too few healthy phases ({0}) for degraded operation")]
    TooFewPhases(usize),
    #[error("leg {leg} out of range for {n} phases")]
    LegOutOfRange { leg: usize, n: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub t: f64,
    pub from: StateKind,
    pub to: StateKind,
    /// Leg concerned, for detections and isolation.
    pub leg: Option<usize>,
    pub reason: String,
}

/// Low-side active short circuit on `leg`: override map with only that leg set.
pub fn asc_gate_override(leg: usize, n: usize) -> Result<Vec<Option<LegCommand>>, FsmError> {
    if leg >= n {
        return Err(FsmError::LegOutOfRange { leg, n });
    }
    let mut out = vec![None; n];
    out[leg] = Some(LegCommand::LowOn);
    Ok(out)
}

/// Per-phase reference amplitudes for the given healthy set: faulty phases
/// zeroed, survivors scaled by `n / |healthy|` and clipped to 1.
pub fn reconfigure_references(
    healthy_set: &[usize],
    p: &CircuitParams,
) -> Result<Vec<f64>, FsmError> {
    if healthy_set.len() < 2 {
        return Err(FsmError::TooFewPhases(healthy_set.len()));
    }
    let n = p.n_phases;
    let scaled = (p.mod_index * n as f64 / healthy_set.len() as f64).min(1.0);
    let mut out = vec![0.0; n];
    for &k in healthy_set {
        if k >= n {
            return Err(FsmError::LegOutOfRange { leg: k, n });
        }
        out[k] = if healthy_set.len() == n {
            p.mod_index
        } else {
            scaled
        };
    }
    Ok(out)
}

/// Measurements and diagnostics consumed by the state machine.
#[derive(Debug, Clone, Copy)]
pub struct FsmInputs<'a> {
    /// Gate-driver health per leg.
    pub leg_healthy: &'a [bool],
    pub v_dc: f64,
    /// Safe DC-link voltage at which discharge is complete.
    pub v_safe: f64,
}

/// Commands produced for the gate drivers, modulator and discharge branch.
#[derive(Debug, Clone, PartialEq)]
pub struct ProtectionOutput {
    pub gate_override: Vec<Option<LegCommand>>,
    /// Legs clamped by active short circuit.
    pub asc: Vec<bool>,
    pub amplitudes: Vec<f64>,
    pub discharge_cmd: bool,
    pub contactor_open: bool,
}

impl ProtectionOutput {
    pub fn has_override(&self) -> bool {
        self.gate_override.iter().any(Option::is_some)
    }
}

/// State plus the set of legs currently clamped.
#[derive(Debug, Clone, PartialEq)]
pub struct FsmSnapshot {
    pub state: ProtectionState,
    pub isolated: Vec<bool>,
}

impl FsmSnapshot {
    pub fn initial(n: usize) -> Self {
        Self {
            state: ProtectionState::Normal,
            isolated: vec![false; n],
        }
    }
}

struct Walk<'a> {
    snap: FsmSnapshot,
    transitions: Vec<Transition>,
    t: f64,
    _cfg: &'a ProtectionConfig,
}

impl Walk<'_> {
    fn go(&mut self, to: ProtectionState, reason: impl Into<String>) -> Result<(), FsmError> {
        let from = self.snap.state.kind();
        if !is_legal(from, to.kind()) {
            return Err(FsmError::IllegalTransition {
                from,
                to: to.kind(),
                t: self.t,
            });
        }
        let leg = match &to {
            ProtectionState::Detected { leg, .. } => *leg,
            ProtectionState::Isolating { leg, .. } => Some(*leg),
            _ => None,
        };
        self.transitions.push(Transition {
            t: self.t,
            from,
            to: to.kind(),
            leg,
            reason: reason.into(),
        });
        self.snap.state = to;
        Ok(())
    }

    fn healthy_set(&self) -> Vec<usize> {
        (0..self.snap.isolated.len())
            .filter(|k| !self.snap.isolated[*k])
            .collect()
    }

    fn shutdown(&mut self, reason: &str) -> Result<(), FsmError> {
        self.go(ProtectionState::Discharging { t_started: self.t }, reason)
    }
}

/// Advances the state machine by one control tick.
///
/// Returns the next snapshot, the commands for that snapshot and the
/// transitions taken (several may happen within one tick).
pub fn fsm_step(
    snap: &FsmSnapshot,
    detections: &[Detection],
    inputs: &FsmInputs<'_>,
    t: f64,
    cfg: &ProtectionConfig,
    p: &CircuitParams,
) -> Result<(FsmSnapshot, ProtectionOutput, Vec<Transition>), FsmError> {
    let mut w = Walk {
        snap: snap.clone(),
        transitions: Vec::new(),
        t,
        _cfg: cfg,
    };
    if !cfg.enabled {
        let out = output_for(&w.snap, p)?;
        return Ok((w.snap, out, w.transitions));
    }

    if cfg.operator_stop_s.is_some_and(|ts| t >= ts) && !w.snap.state.kind().is_shutdown() {
        w.shutdown("operator stop")?;
    }

    for d in detections {
        let kind = w.snap.state.kind();
        if kind.is_shutdown() {
            break;
        }
        let leg_already_handled = match (&w.snap.state, d.leg) {
            (ProtectionState::Isolating { leg, .. }, Some(l)) => *leg == l || w.snap.isolated[l],
            (_, Some(l)) => w.snap.isolated.get(l).copied().unwrap_or(false),
            _ => false,
        };
        let isolatable = matches!(d.class, FaultClass::ShortCircuit | FaultClass::PhaseLoss);
        if isolatable && leg_already_handled {
            continue;
        }
        let shutdown_class = cfg.shutdown_classes.contains(&d.class);
        if !shutdown_class && !isolatable {
            // alarm only; the inverter keeps running
            if kind == StateKind::Normal {
                w.go(
                    ProtectionState::Detected {
                        class: d.class,
                        t,
                        leg: d.leg,
                    },
                    format!("{} alarm", d.class),
                )?;
            }
            continue;
        }
        if kind == StateKind::Isolating {
            w.shutdown("second fault while isolating")?;
            break;
        }
        if kind != StateKind::Detected {
            w.go(
                ProtectionState::Detected {
                    class: d.class,
                    t,
                    leg: d.leg,
                },
                format!("{} detected by {:?}", d.class, d.detector),
            )?;
        }
        if shutdown_class {
            w.shutdown(&format!("{} requires safe shutdown", d.class))?;
            break;
        }
        match d.leg {
            Some(leg) if leg < w.snap.isolated.len() => {
                let remaining = w.healthy_set().iter().filter(|&&k| k != leg).count();
                if remaining < 2 {
                    w.shutdown("too few healthy phases")?;
                    break;
                }
                let delay = isolation_delay(t, &cfg.schedule);
                w.go(
                    ProtectionState::Isolating {
                        leg,
                        t_started: t,
                        t_complete: t + delay,
                    },
                    format!("isolating leg {leg}"),
                )?;
            }
            _ => {
                w.shutdown("fault could not be localized")?;
                break;
            }
        }
    }

    match w.snap.state.clone() {
        ProtectionState::Isolating {
            leg, t_complete, ..
        } if t >= t_complete => {
            w.snap.isolated[leg] = true;
            let healthy = w.healthy_set();
            match reconfigure_references(&healthy, p) {
                Ok(_) => w.go(
                    ProtectionState::Degraded {
                        healthy_set: healthy,
                    },
                    format!("leg {leg} clamped, degraded operation"),
                )?,
                Err(FsmError::TooFewPhases(_)) => w.shutdown("too few healthy phases")?,
                Err(e) => return Err(e),
            }
        }
        ProtectionState::Degraded { .. } => {
            let cleared = w
                .snap
                .isolated
                .iter()
                .zip(inputs.leg_healthy)
                .all(|(iso, healthy)| !iso || *healthy);
            if cleared {
                let delay = isolation_delay(t, &cfg.schedule);
                w.snap.isolated.iter_mut().for_each(|x| *x = false);
                w.go(
                    ProtectionState::Recovering {
                        t_started: t,
                        t_complete: t + delay + cfg.recovery_holdoff,
                    },
                    "fault cleared, re-enabling",
                )?;
            }
        }
        ProtectionState::Recovering { t_complete, .. } if t >= t_complete => {
            w.go(ProtectionState::Normal, "recovered")?;
        }
        ProtectionState::Discharging { .. } if inputs.v_dc <= inputs.v_safe => {
            w.go(
                ProtectionState::SafeState { t_entered: t },
                "DC link below safe voltage",
            )?;
        }
        _ => {}
    }

    let out = output_for(&w.snap, p)?;
    Ok((w.snap, out, w.transitions))
}

/// Commands implied by a snapshot.
pub fn output_for(snap: &FsmSnapshot, p: &CircuitParams) -> Result<ProtectionOutput, FsmError> {
    let n = p.n_phases;
    let mut out = ProtectionOutput {
        gate_override: vec![None; n],
        asc: vec![false; n],
        amplitudes: vec![p.mod_index; n],
        discharge_cmd: false,
        contactor_open: false,
    };
    let clamp_isolated = |out: &mut ProtectionOutput| -> Result<(), FsmError> {
        for k in (0..n).filter(|k| snap.isolated[*k]) {
            let asc = asc_gate_override(k, n)?;
            out.gate_override[k] = asc[k];
            out.asc[k] = true;
        }
        let healthy: Vec<usize> = (0..n).filter(|k| !snap.isolated[*k]).collect();
        out.amplitudes = reconfigure_references(&healthy, p)?;
        Ok(())
    };
    match &snap.state {
        ProtectionState::Normal
        | ProtectionState::Detected { .. }
        | ProtectionState::Recovering { .. } => {}
        ProtectionState::Isolating { leg, .. } => {
            clamp_isolated(&mut out)?;
            out.gate_override[*leg] = Some(LegCommand::BothOff);
            out.amplitudes[*leg] = 0.0;
        }
        ProtectionState::Degraded { .. } => clamp_isolated(&mut out)?,
        ProtectionState::Discharging { .. } | ProtectionState::SafeState { .. } => {
            out.gate_override = vec![Some(LegCommand::BothOff); n];
            out.discharge_cmd = true;
            out.contactor_open = true;
        }
    }
    Ok(out)
}
