//! Single-node thermal RC model for the switches and the discharge resistor.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ThermalParams {
    /// Junction-to-ambient thermal resistance per switch (K/W).
    pub r_th: f64,
    /// Thermal capacitance per switch (J/K).
    pub c_th: f64,
    pub t_ambient: f64,
    pub r_th_res: f64,
    pub c_th_res: f64,
    pub t_limit_switch: f64,
    pub t_limit_res: f64,
}

impl Default for ThermalParams {
    fn default() -> Self {
        Self {
            r_th: 0.5,
            c_th: 0.1,
            t_ambient: 25.0,
            r_th_res: 2.0,
            // 5 J/K cannot reach the resistor limit from the 40 J stored in the
            // DC link; 0.2 J/K lets the limiter cycle several times per discharge.
            c_th_res: 0.2,
            t_limit_switch: 150.0,
            t_limit_res: 120.0,
        }
    }
}

/// One thermal RC pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RcNode {
    pub r_th: f64,
    pub c_th: f64,
}

impl RcNode {
    pub fn tau(&self) -> f64 {
        self.r_th * self.c_th
    }
}

impl ThermalParams {
    pub fn switch(&self) -> RcNode {
        RcNode {
            r_th: self.r_th,
            c_th: self.c_th,
        }
    }

    pub fn resistor(&self) -> RcNode {
        RcNode {
            r_th: self.r_th_res,
            c_th: self.c_th_res,
        }
    }

    pub fn validate(&self) -> Result<(), ThermalError> {
        for (name, v) in [
            ("r_th", self.r_th),
            ("c_th", self.c_th),
            ("r_th_res", self.r_th_res),
            ("c_th_res", self.c_th_res),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(ThermalError::InvalidParam { name, value: v });
            }
        }
        if self.t_limit_switch <= self.t_ambient || self.t_limit_res <= self.t_ambient {
            return Err(ThermalError::LimitBelowAmbient);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ThermalError {
    #[error("thermal step {dt} s exceeds 0.1·τ = {limit} s")]
    StepTooLarge { dt: f64, limit: f64 },
    #[error("{name} must be positive and finite (got {value})")]
    InvalidParam { name: &'static str, value: f64 },
    #[error("temperature limits must lie above ambient")]
    LimitBelowAmbient,
}

/// Explicit Euler step of `c·dT/dt = p − (T − T_amb)/r`.
pub fn thermal_step(
    temp: f64,
    p_loss: f64,
    dt: f64,
    node: RcNode,
    t_ambient: f64,
) -> Result<f64, ThermalError> {
    let limit = 0.1 * node.tau();
    if !(dt > 0.0) || dt > limit {
        return Err(ThermalError::StepTooLarge { dt, limit });
    }
    Ok(temp + dt / node.c_th * (p_loss - (temp - t_ambient) / node.r_th))
}
