//! Declarative fault scenarios and their application to the plant.
//!
//! A fault perturbs one of three things: the circuit parameters, the gate
//! pattern reaching the switches, or the measurement copy handed to the
//! detectors. Plant truth is never altered by sensor faults.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::circuit::{CircuitParams, GateVector, LegCommand};
use crate::detection::FaultClass;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SwitchSide {
    High,
    Low,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SensorChannel {
    VDc,
    PhaseCurrent { leg: usize },
    JunctionTemp,
    ResistorTemp,
}

fn default_surge_rise() -> f64 {
    5e-3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", deny_unknown_fields)]
pub enum FaultKind {
    /// One switch of a leg conducts permanently regardless of its gate.
    SwitchShortCircuit { leg: usize, which: SwitchSide },
    /// Gate-driver loss: both switches of the leg stay off.
    PhaseOpen { leg: usize },
    /// Load resistance divided by the given factor.
    Overcurrent { load_r_drop_factor: f64 },
    /// Source voltage raised by `source_surge_volts`, ramped over `rise_time_s`.
    Overvoltage {
        source_surge_volts: f64,
        #[serde(default = "default_surge_rise")]
        rise_time_s: f64,
    },
    /// Switch thermal resistance multiplied (degraded cooling path).
    ThermalOverload { r_th_multiplier: f64 },
    /// Additive offset on one measurement channel.
    SensorSpoof { channel: SensorChannel, offset: f64 },
    /// The commanded gate of one leg is replaced by `forced`.
    GateInjection { leg: usize, forced: LegCommand },
}

impl FaultKind {
    pub fn leg(&self) -> Option<usize> {
        match *self {
            FaultKind::SwitchShortCircuit { leg, .. }
            | FaultKind::PhaseOpen { leg }
            | FaultKind::GateInjection { leg, .. } => Some(leg),
            FaultKind::SensorSpoof {
                channel: SensorChannel::PhaseCurrent { leg },
                ..
            } => Some(leg),
            _ => None,
        }
    }

    /// Detector class expected to catch this fault. `None` means any class counts.
    pub fn expected_class(&self) -> Option<FaultClass> {
        match self {
            FaultKind::SwitchShortCircuit { .. } => Some(FaultClass::ShortCircuit),
            FaultKind::PhaseOpen { .. } => Some(FaultClass::PhaseLoss),
            FaultKind::Overcurrent { .. } => Some(FaultClass::Overcurrent),
            FaultKind::Overvoltage { .. } => Some(FaultClass::Overvoltage),
            FaultKind::ThermalOverload { .. } => Some(FaultClass::Thermal),
            FaultKind::GateInjection {
                forced: LegCommand::BothOn,
                ..
            } => Some(FaultClass::ShortCircuit),
            FaultKind::GateInjection { .. } | FaultKind::SensorSpoof { .. } => None,
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            FaultKind::SwitchShortCircuit { .. } => "SwitchShortCircuit",
            FaultKind::PhaseOpen { .. } => "PhaseOpen",
            FaultKind::Overcurrent { .. } => "Overcurrent",
            FaultKind::Overvoltage { .. } => "Overvoltage",
            FaultKind::ThermalOverload { .. } => "ThermalOverload",
            FaultKind::SensorSpoof { .. } => "SensorSpoof",
            FaultKind::GateInjection { .. } => "GateInjection",
        }
    }

    /// True when the fault leaves a leg unusable until it clears.
    pub fn disables_leg(&self) -> bool {
        matches!(
            self,
            FaultKind::SwitchShortCircuit { .. }
                | FaultKind::PhaseOpen { .. }
                | FaultKind::GateInjection { .. }
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaultEvent {
    pub kind: FaultKind,
    pub t_start: f64,
    /// `None` means the fault never clears.
    #[serde(default)]
    pub t_clear: Option<f64>,
}

impl FaultEvent {
    pub fn new(kind: FaultKind, t_start: f64, t_clear: Option<f64>) -> Self {
        Self {
            kind,
            t_start,
            t_clear,
        }
    }

    pub fn is_active(&self, t: f64) -> bool {
        t >= self.t_start && self.t_clear.is_none_or(|c| t < c)
    }

    fn overlaps(&self, other: &FaultEvent) -> bool {
        let end_a = self.t_clear.unwrap_or(f64::INFINITY);
        let end_b = other.t_clear.unwrap_or(f64::INFINITY);
        self.t_start < end_b && other.t_start < end_a
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValidationError {
    pub index: usize,
    pub message: String,
}

impl fmt::Display for ValidationError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "faults[{}]: {}", self.index, self.message)
    }
}

/// Checks every event and returns all problems found.
pub fn validate_scenario(
    events: &[FaultEvent],
    p: &CircuitParams,
) -> Result<(), Vec<ValidationError>> {
    let mut errors = Vec::new();
    let mut err = |index: usize, message: String| errors.push(ValidationError { index, message });

    for (i, ev) in events.iter().enumerate() {
        if !(ev.t_start >= 0.0 && ev.t_start.is_finite()) {
            err(
                i,
                format!(
                    "t_start must be finite and non-negative (got {})",
                    ev.t_start
                ),
            );
        }
        if let Some(c) = ev.t_clear {
            if !(c > ev.t_start) {
                err(
                    i,
                    format!("t_clear ({c}) must be later than t_start ({})", ev.t_start),
                );
            }
        }
        if let Some(leg) = ev.kind.leg() {
            if leg >= p.n_phases {
                err(
                    i,
                    format!("leg out of range (leg {leg}, n_phases {})", p.n_phases),
                );
            }
        }
        match ev.kind {
            FaultKind::Overcurrent {
                load_r_drop_factor: f,
            } if !(f > 0.0 && f.is_finite()) => {
                err(i, format!("load_r_drop_factor must be positive (got {f})"))
            }
            FaultKind::ThermalOverload { r_th_multiplier: m } if !(m > 0.0 && m.is_finite()) => {
                err(i, format!("r_th_multiplier must be positive (got {m})"))
            }
            FaultKind::Overvoltage {
                source_surge_volts,
                rise_time_s,
            } if !(source_surge_volts.is_finite()
                && rise_time_s >= 0.0
                && rise_time_s.is_finite()) =>
            {
                err(
                    i,
                    "surge voltage and rise time must be finite, rise time non-negative"
                        .to_string(),
                )
            }
            FaultKind::SensorSpoof { offset, .. } if !offset.is_finite() => {
                err(i, "spoof offset must be finite".to_string())
            }
            _ => {}
        }
    }

    for (i, a) in events.iter().enumerate() {
        for (j, b) in events.iter().enumerate().skip(i + 1) {
            if !a.overlaps(b) {
                continue;
            }
            if let (Some(la), Some(lb)) = (a.kind.leg(), b.kind.leg()) {
                if la == lb && a.kind.disables_leg() && b.kind.disables_leg() {
                    let what = if a.kind == b.kind {
                        "duplicate"
                    } else {
                        "contradictory"
                    };
                    err(
                        j,
                        format!("{what} faults on leg {la} overlap with faults[{i}]"),
                    );
                    continue;
                }
            }
            let same_class = match (a.kind.expected_class(), b.kind.expected_class()) {
                (Some(ca), Some(cb)) => ca == cb,
                _ => false,
            };
            let same_spoof = matches!(
                (&a.kind, &b.kind),
                (FaultKind::SensorSpoof { channel: x, .. }, FaultKind::SensorSpoof { channel: y, .. }) if x == y
            );
            if same_class || same_spoof {
                err(j, format!("overlaps faults[{i}] of the same class; detections could not be attributed"));
            }
        }
    }

    if errors.is_empty() {
        Ok(())
    } else {
        Err(errors)
    }
}

/// Measurement copy seen by the detectors and the protection logic.
#[derive(Debug, Clone, PartialEq)]
pub struct Measurements {
    pub v_dc: f64,
    pub i_phase: Vec<f64>,
    pub t_junction_max: f64,
    pub t_res: f64,
}

/// Result of [`apply_active_faults`].
#[derive(Debug, Clone, PartialEq)]
pub struct EffectiveInputs {
    pub params: CircuitParams,
    /// Multiplier on the switch thermal resistance.
    pub r_th_multiplier: f64,
    pub gates: GateVector,
    pub measurements: Measurements,
}

/// Effective circuit parameters and thermal multiplier at time `t`.
pub fn effective_params(
    t: f64,
    events: &[FaultEvent],
    base: &CircuitParams,
) -> (CircuitParams, f64) {
    let mut p = base.clone();
    let mut r_th_multiplier = 1.0;
    for ev in events.iter().filter(|e| e.is_active(t)) {
        match ev.kind {
            FaultKind::Overcurrent { load_r_drop_factor } => p.r_load /= load_r_drop_factor,
            FaultKind::Overvoltage {
                source_surge_volts,
                rise_time_s,
            } => p.v_source += surge_ramp(t - ev.t_start, rise_time_s) * source_surge_volts,
            FaultKind::ThermalOverload { r_th_multiplier: m } => r_th_multiplier *= m,
            _ => {}
        }
    }
    (p, r_th_multiplier)
}

fn surge_ramp(elapsed: f64, rise: f64) -> f64 {
    if rise <= 0.0 {
        1.0
    } else {
        (elapsed / rise).clamp(0.0, 1.0)
    }
}

/// Applies gate injections and switch faults to the commanded gates in place.
///
/// Injections act at the gate-driver input, so a shorted switch still wins over
/// an injected command.
pub fn apply_gate_faults(t: f64, events: &[FaultEvent], gates: &mut GateVector) {
    for ev in events.iter().filter(|e| e.is_active(t)) {
        if let FaultKind::GateInjection { leg, forced } = ev.kind {
            gates[leg] = forced;
        }
    }
    for ev in events.iter().filter(|e| e.is_active(t)) {
        match ev.kind {
            FaultKind::SwitchShortCircuit { leg, which } => {
                gates[leg] = shorted(gates[leg], which);
            }
            FaultKind::PhaseOpen { leg } => gates[leg] = LegCommand::BothOff,
            _ => {}
        }
    }
}

fn shorted(cmd: LegCommand, which: SwitchSide) -> LegCommand {
    use LegCommand::*;
    match (which, cmd) {
        (SwitchSide::Low, HighOn | BothOn) | (SwitchSide::High, LowOn | BothOn) => BothOn,
        (SwitchSide::Low, _) => LowOn,
        (SwitchSide::High, _) => HighOn,
    }
}

/// Applies sensor spoofing to the measurement copy in place.
pub fn apply_measurement_faults(t: f64, events: &[FaultEvent], m: &mut Measurements) {
    for ev in events.iter().filter(|e| e.is_active(t)) {
        if let FaultKind::SensorSpoof { channel, offset } = ev.kind {
            match channel {
                SensorChannel::VDc => m.v_dc += offset,
                SensorChannel::PhaseCurrent { leg } => m.i_phase[leg] += offset,
                SensorChannel::JunctionTemp => m.t_junction_max += offset,
                SensorChannel::ResistorTemp => m.t_res += offset,
            }
        }
    }
}

/// Offset applied to the DC-link voltage channel at `t` (used by the fast path).
pub fn v_dc_spoof(t: f64, events: &[FaultEvent]) -> f64 {
    events
        .iter()
        .filter(|e| e.is_active(t))
        .map(|e| match e.kind {
            FaultKind::SensorSpoof {
                channel: SensorChannel::VDc,
                offset,
            } => offset,
            _ => 0.0,
        })
        .sum()
}

/// Per-leg health as reported by gate-driver diagnostics.
pub fn leg_health(t: f64, events: &[FaultEvent], n: usize, out: &mut Vec<bool>) {
    out.clear();
    out.resize(n, true);
    for ev in events
        .iter()
        .filter(|e| e.is_active(t) && e.kind.disables_leg())
    {
        if let Some(leg) = ev.kind.leg() {
            if leg < n {
                out[leg] = false;
            }
        }
    }
}

/// All three effective outputs for time `t`.
pub fn apply_active_faults(
    t: f64,
    events: &[FaultEvent],
    base: &CircuitParams,
    gates: &GateVector,
    measurements: &Measurements,
) -> EffectiveInputs {
    let (params, r_th_multiplier) = effective_params(t, events, base);
    let mut gates = gates.clone();
    apply_gate_faults(t, events, &mut gates);
    let mut measurements = measurements.clone();
    apply_measurement_faults(t, events, &mut measurements);
    EffectiveInputs {
        params,
        r_th_multiplier,
        gates,
        measurements,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn meas() -> Measurements {
        Measurements {
            v_dc: 395.0,
            i_phase: vec![10.0, -5.0, 0.0, 3.0, -8.0],
            t_junction_max: 60.0,
            t_res: 25.0,
        }
    }

    fn sc(leg: usize, which: SwitchSide, t0: f64, t1: Option<f64>) -> FaultEvent {
        FaultEvent::new(FaultKind::SwitchShortCircuit { leg, which }, t0, t1)
    }

    #[test]
    fn empty_scenario_is_valid() {
        assert!(validate_scenario(&[], &CircuitParams::default()).is_ok());
    }

    #[test]
    fn leg_out_of_range() {
        let errs = validate_scenario(
            &[sc(7, SwitchSide::Low, 0.1, None)],
            &CircuitParams::default(),
        )
        .unwrap_err();
        assert_eq!(errs.len(), 1);
        assert!(errs[0].to_string().contains("leg out of range"));
    }

    #[test]
    fn clear_before_start_rejected() {
        let errs = validate_scenario(
            &[sc(1, SwitchSide::Low, 0.2, Some(0.1))],
            &CircuitParams::default(),
        )
        .unwrap_err();
        assert!(errs[0].message.contains("t_clear"));
    }

    #[test]
    fn contradictory_overlap_on_leg() {
        let events = [
            sc(2, SwitchSide::Low, 0.10, Some(0.30)),
            FaultEvent::new(FaultKind::PhaseOpen { leg: 2 }, 0.25, None),
        ];
        let errs = validate_scenario(&events, &CircuitParams::default()).unwrap_err();
        assert!(errs[0].message.contains("contradictory"), "{errs:?}");
        // disjoint intervals are fine
        let events = [
            sc(2, SwitchSide::Low, 0.10, Some(0.20)),
            FaultEvent::new(FaultKind::PhaseOpen { leg: 2 }, 0.20, None),
        ];
        assert!(validate_scenario(&events, &CircuitParams::default()).is_ok());
    }

    #[test]
    fn same_class_overlap_rejected() {
        let events = [
            sc(0, SwitchSide::Low, 0.10, None),
            sc(3, SwitchSide::High, 0.15, None),
        ];
        let errs = validate_scenario(&events, &CircuitParams::default()).unwrap_err();
        assert!(errs[0].message.contains("same class"));
    }

    #[test]
    fn identity_before_start() {
        let p = CircuitParams::default();
        let events = [
            sc(0, SwitchSide::Low, 0.1, None),
            FaultEvent::new(
                FaultKind::SensorSpoof {
                    channel: SensorChannel::VDc,
                    offset: 50.0,
                },
                0.1,
                None,
            ),
        ];
        let g = GateVector::uniform(5, LegCommand::HighOn);
        let eff = apply_active_faults(0.05, &events, &p, &g, &meas());
        assert_eq!(eff.params, p);
        assert_eq!(eff.gates, g);
        assert_eq!(eff.measurements, meas());
        assert_eq!(eff.r_th_multiplier, 1.0);
    }

    #[test]
    fn low_short_with_high_command_is_shoot_through() {
        let p = CircuitParams::default();
        let events = [sc(0, SwitchSide::Low, 0.1, None)];
        let g = GateVector::uniform(5, LegCommand::HighOn);
        let eff = apply_active_faults(0.1, &events, &p, &g, &meas());
        assert_eq!(eff.gates[0], LegCommand::BothOn);
        assert!(eff.gates.0[1..].iter().all(|g| *g == LegCommand::HighOn));

        let g = GateVector::uniform(5, LegCommand::BothOff);
        let eff = apply_active_faults(0.1, &events, &p, &g, &meas());
        assert_eq!(eff.gates[0], LegCommand::LowOn);
    }

    #[test]
    fn spoof_touches_measurement_only() {
        let p = CircuitParams::default();
        let events = [FaultEvent::new(
            FaultKind::SensorSpoof {
                channel: SensorChannel::VDc,
                offset: 50.0,
            },
            0.0,
            None,
        )];
        let g = GateVector::uniform(5, LegCommand::LowOn);
        let eff = apply_active_faults(0.2, &events, &p, &g, &meas());
        assert_eq!(eff.measurements.v_dc, 445.0);
        assert_eq!(eff.params, p);
        assert_eq!(eff.gates, g);
    }

    #[test]
    fn parameter_faults() {
        let p = CircuitParams::default();
        let events = [
            FaultEvent::new(
                FaultKind::Overcurrent {
                    load_r_drop_factor: 4.0,
                },
                0.0,
                None,
            ),
            FaultEvent::new(
                FaultKind::Overvoltage {
                    source_surge_volts: 100.0,
                    rise_time_s: 1e-3,
                },
                0.0,
                None,
            ),
            FaultEvent::new(
                FaultKind::ThermalOverload {
                    r_th_multiplier: 8.0,
                },
                0.0,
                None,
            ),
        ];
        let (eff, m) = effective_params(0.0005, &events, &p);
        assert_eq!(eff.r_load, 0.125);
        assert!((eff.v_source - 450.0).abs() < 1e-9);
        assert_eq!(m, 8.0);
        let (eff, _) = effective_params(0.01, &events, &p);
        assert_eq!(eff.v_source, 500.0);
    }

    #[test]
    fn injection_overrides_command() {
        let p = CircuitParams::default();
        let events = [FaultEvent::new(
            FaultKind::GateInjection {
                leg: 3,
                forced: LegCommand::BothOn,
            },
            0.0,
            Some(1.0),
        )];
        let g = GateVector::uniform(5, LegCommand::LowOn);
        let eff = apply_active_faults(0.5, &events, &p, &g, &meas());
        assert_eq!(eff.gates[3], LegCommand::BothOn);
    }

    #[test]
    fn serde_shape() {
        let json = r#"{"kind":{"type":"SwitchShortCircuit","leg":0,"which":"Low"},"t_start":0.1}"#;
        let ev: FaultEvent = serde_json::from_str(json).unwrap();
        assert_eq!(ev, sc(0, SwitchSide::Low, 0.1, None));
        let json = r#"{"kind":{"type":"SensorSpoof","channel":{"kind":"v_dc"},"offset":50.0},"t_start":0.1,"t_clear":0.2}"#;
        let ev: FaultEvent = serde_json::from_str(json).unwrap();
        assert_eq!(ev.t_clear, Some(0.2));
    }

    fn arb_event() -> impl Strategy<Value = FaultEvent> {
        let kind = prop_oneof![
            (0usize..5, any::<bool>()).prop_map(|(leg, hi)| FaultKind::SwitchShortCircuit {
                leg,
                which: if hi {
                    SwitchSide::High
                } else {
                    SwitchSide::Low
                }
            }),
            (0usize..5).prop_map(|leg| FaultKind::PhaseOpen { leg }),
            (1.0f64..5.0).prop_map(|f| FaultKind::Overcurrent {
                load_r_drop_factor: f
            }),
            (-50.0f64..50.0).prop_map(|o| FaultKind::SensorSpoof {
                channel: SensorChannel::VDc,
                offset: o
            }),
        ];
        (kind, 0.0f64..1.0, 0.001f64..0.5)
            .prop_map(|(kind, t0, d)| FaultEvent::new(kind, t0, Some(t0 + d)))
    }

    proptest! {
        #[test]
        fn idempotent_and_clears(events in proptest::collection::vec(arb_event(), 0..4), t in 0.0f64..2.0) {
            let p = CircuitParams::default();
            let g = GateVector(vec![LegCommand::HighOn, LegCommand::LowOn, LegCommand::HighOn, LegCommand::LowOn, LegCommand::HighOn]);
            let a = apply_active_faults(t, &events, &p, &g, &meas());
            let b = apply_active_faults(t, &events, &p, &g, &meas());
            prop_assert_eq!(&a, &b);

            let t_after = events.iter().filter_map(|e| e.t_clear).fold(0.0, f64::max);
            let cleared = apply_active_faults(t_after, &events, &p, &g, &meas());
            prop_assert_eq!(cleared.params, p);
            prop_assert_eq!(cleared.gates, g);
            prop_assert_eq!(cleared.measurements, meas());
        }
    }
}
