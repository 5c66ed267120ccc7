//! Weighted motion cost `M_u * c_u + M_G * c_G + M_sigma * c_sigma`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WeightError {
    #[error("cost weights must be finite and nonnegative")]
    Negative,
    #[error("cost weights must not all be zero")]
    AllZero,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostWeights {
    #[serde(rename = "M_u")]
    pub control: f64,
    #[serde(rename = "M_G")]
    pub goal: f64,
    #[serde(rename = "M_sigma")]
    pub uncertainty: f64,
}

impl CostWeights {
    pub fn new(control: f64, goal: f64, uncertainty: f64) -> Result<Self, WeightError> {
        let w = CostWeights {
            control,
            goal,
            uncertainty,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<(), WeightError> {
        let all = [self.control, self.goal, self.uncertainty];
        if all.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(WeightError::Negative);
        }
        if all.iter().all(|w| *w == 0.0) {
            return Err(WeightError::AllZero);
        }
        Ok(())
    }
}

/// Cost components of one motion.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CostBreakdown {
    /// Summed translation of all commanded controls.
    pub control_usage: f64,
    /// Distance of the final means from the chosen goal nodes.
    pub goal_distance: f64,
    /// Trace of the final joint covariance.
    pub uncertainty: f64,
}

pub fn total_cost(c: &CostBreakdown, w: &CostWeights) -> f64 {
    w.control * c.control_usage + w.goal * c.goal_distance + w.uncertainty * c.uncertainty
}
