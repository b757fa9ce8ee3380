use serde::{Deserialize, Serialize};

use super::{Decision, TrajectoryError};
use crate::capture::Label;

/// Per-inspection reward constants.
///
/// The case naming follows the reward table: `c_tp` pays a benign verdict
/// on benign traffic and `c_tn` a malicious verdict on malicious traffic.
/// Metric positives are defined separately (malicious = positive).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardConfig {
    pub c_tp: f64,
    pub c_tn: f64,
    pub c_fp: f64,
    pub c_fn: f64,
    pub c_wait: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            c_tp: 1.0,
            c_tn: 1.0,
            c_fp: -1.0,
            c_fn: -1.0,
            c_wait: -0.05,
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<(), TrajectoryError> {
        let all = [self.c_tp, self.c_tn, self.c_fp, self.c_fn, self.c_wait];
        if all.iter().any(|c| !c.is_finite()) {
            return Err(TrajectoryError::InvalidRewards("all constants must be finite".into()));
        }
        if self.c_tp <= self.c_fn || self.c_tn <= self.c_fp {
            return Err(TrajectoryError::InvalidRewards(
                "correct decisions must pay strictly more than incorrect ones".into(),
            ));
        }
        Ok(())
    }

    /// Reward of `decision` on a flow with ground truth `label`.
    pub fn reward_for(&self, decision: Decision, label: Label) -> f64 {
        match (decision, label) {
            (Decision::Wait, _) => self.c_wait,
            (Decision::Benign, Label::Malicious) => self.c_fn,
            (Decision::Benign, _) => self.c_tp,
            (Decision::Malicious, Label::Malicious) => self.c_tn,
            (Decision::Malicious, _) => self.c_fp,
        }
    }
}

/// Reward for raw decision/label codes.
pub fn reward(d: u8, label: u8, cfg: &RewardConfig) -> Result<f64, TrajectoryError> {
    let decision = Decision::try_from(d)?;
    let label = Label::from_class(label).ok_or(TrajectoryError::InvalidLabel(label))?;
    Ok(cfg.reward_for(decision, label))
}

/// Suffix sums: `R̂_i = Σ_{k ≥ i} r_k`.
pub fn compute_rtg(rewards: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for (i, r) in rewards.iter().enumerate().rev() {
        acc += r;
        out[i] = acc;
    }
    out
}
