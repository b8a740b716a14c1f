//! Error-controlled particle step size.

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct AtsController {
    /// Velocity error tolerance (m/s).
    pub tol: f64,
    pub dt_min: f64,
    pub dt_max: f64,
    pub safety: f64,
    pub growth: f64,
    pub shrink: f64,
    /// Step to attempt next.
    pub dt: f64,
}

/// Verdict on one attempted step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AtsOutcome {
    pub accepted: bool,
    pub error: f64,
    pub next_dt: f64,
    /// Accepted at `dt_min` with the error still above tolerance.
    pub violation: bool,
}

impl AtsController {
    pub fn new(tol: f64, dt_min: f64, dt_max: f64, dt_init: f64) -> Result<AtsController> {
        if !(tol > 0.0) {
            return Err(Error::config("ATS tolerance must be positive"));
        }
        if !(dt_min > 0.0 && dt_min <= dt_max) {
            return Err(Error::config(format!("ATS bounds must satisfy 0 < dt_min <= dt_max, got {dt_min:e}, {dt_max:e}")));
        }
        Ok(AtsController {
            tol,
            dt_min,
            dt_max,
            safety: 0.9,
            growth: 2.0,
            shrink: 0.2,
            dt: dt_init.clamp(dt_min, dt_max),
        })
    }

    /// Step-size update for a first-order estimate: the error scales with
    /// dt^2 per step, so the factor is `safety * sqrt(tol / err)`.
    pub fn next_dt(&self, error: f64, dt: f64) -> f64 {
        let ratio = self.tol / error.max(f64::MIN_POSITIVE);
        let factor = (self.safety * ratio.sqrt()).max(self.shrink).min(self.growth);
        (dt * factor).clamp(self.dt_min, self.dt_max)
    }

    pub fn judge(&self, error: f64, dt: f64) -> AtsOutcome {
        let next_dt = self.next_dt(error, dt);
        if error <= self.tol {
            AtsOutcome { accepted: true, error, next_dt, violation: false }
        } else if dt <= self.dt_min {
            AtsOutcome { accepted: true, error, next_dt, violation: true }
        } else {
            AtsOutcome { accepted: false, error, next_dt, violation: false }
        }
    }
}
