//! Plain gradient descent with an independent learning rate per parameter group.

use serde::{Deserialize, Serialize};

use crate::error::{CedoError, Result};
use crate::model::{ModelParams, ParamGrads, ParamGroup};
use crate::numeric::l2_norm;

/// Reference rates (question, image, classifier).
pub const DEFAULT_ETA_Q: f64 = 0.002;
pub const DEFAULT_ETA_V: f64 = 0.003;
pub const DEFAULT_ETA_C: f64 = 0.003;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LearningRates {
    pub eta_q: f64,
    pub eta_v: f64,
    pub eta_c: f64,
}

impl Default for LearningRates {
    fn default() -> Self {
        LearningRates {
            eta_q: DEFAULT_ETA_Q,
            eta_v: DEFAULT_ETA_V,
            eta_c: DEFAULT_ETA_C,
        }
    }
}

pub fn make_rates(eta_q: f64, eta_v: f64, eta_c: f64) -> Result<LearningRates> {
    let rates = LearningRates { eta_q, eta_v, eta_c };
    rates.validate()?;
    Ok(rates)
}

impl LearningRates {
    pub fn uniform(eta: f64) -> Result<Self> {
        make_rates(eta, eta, eta)
    }

    pub fn validate(&self) -> Result<()> {
        for g in ParamGroup::ALL {
            let eta = self.get(g);
            if !(eta > 0.0) || !eta.is_finite() {
                return Err(CedoError::Argument(format!(
                    "learning rate for the {g} group must be positive, got {eta}"
                )));
            }
        }
        Ok(())
    }

    pub fn get(&self, group: ParamGroup) -> f64 {
        match group {
            ParamGroup::Question => self.eta_q,
            ParamGroup::Image => self.eta_v,
            ParamGroup::Classifier => self.eta_c,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UpdateReport {
    pub step: usize,
    pub norm_q: f64,
    pub norm_v: f64,
    pub norm_c: f64,
}

/// `θ_k ← θ_k − η_k ∇_{θ_k} L` for every group. Nothing is written if any check fails.
pub fn apply_update(
    params: &mut ModelParams,
    grads: &ParamGrads,
    rates: &LearningRates,
    step: usize,
) -> Result<UpdateReport> {
    if !params.same_layout(grads) {
        return Err(CedoError::Shape("gradient layout does not match parameters".into()));
    }
    rates.validate()?;
    for g in ParamGroup::ALL {
        if grads.group_values(g).iter().any(|x| !x.is_finite()) {
            return Err(CedoError::Numeric(format!("non-finite gradient in the {g} group")));
        }
    }
    let mut norms = [0.0; 3];
    for (slot, g) in norms.iter_mut().zip(ParamGroup::ALL) {
        let eta = rates.get(g);
        let grad = grads.group_values(g);
        let delta: Vec<f64> = grad.iter().map(|x| eta * x).collect();
        *slot = l2_norm(&delta);
        let updated: Vec<f64> = params.group_values(g).iter().zip(&delta).map(|(p, d)| p - d).collect();
        params.set_group_values(g, &updated)?;
    }
    Ok(UpdateReport {
        step,
        norm_q: norms[0],
        norm_v: norms[1],
        norm_c: norms[2],
    })
}
