use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{compute_rtg, Decision, EncodedFlow, RewardConfig, Step, Trajectory, TrajectoryError};
use crate::capture::Label;

/// Behavior policy that generated an offline dataset.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicyTag {
    Expert,
    Medium,
    Random,
}

impl PolicyTag {
    pub const ALL: [PolicyTag; 3] = [PolicyTag::Expert, PolicyTag::Medium, PolicyTag::Random];

    pub fn name(self) -> &'static str {
        match self {
            PolicyTag::Expert => "Expert",
            PolicyTag::Medium => "Medium",
            PolicyTag::Random => "Random",
        }
    }
}

impl std::str::FromStr for PolicyTag {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "expert" => Ok(PolicyTag::Expert),
            "medium" => Ok(PolicyTag::Medium),
            "random" => Ok(PolicyTag::Random),
            other => Err(format!("unknown policy `{other}` (expert, medium, random)")),
        }
    }
}

/// Label-aware simulated behavior policy, one instance per episode.
///
/// Expert: terminal packet uniform over the first ⌈I/2⌉, correct with
/// probability 0.9. Medium: terminal packet uniform over all I, correct
/// with probability 0.5. Random: every packet draws uniformly from
/// {benign, malicious, wait}, with wait unavailable at the last packet.
#[derive(Clone, Debug)]
pub struct BehaviorAgent {
    tag: PolicyTag,
    rng: ChaCha8Rng,
    plan: Option<(usize, Decision)>,
}

impl BehaviorAgent {
    pub const EXPERT_ACCURACY: f64 = 0.9;
    pub const MEDIUM_ACCURACY: f64 = 0.5;

    pub fn new(tag: PolicyTag, label: Label, n_packets: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = n_packets.max(1);
        let planned = |rng: &mut ChaCha8Rng, last: usize, accuracy: f64| {
            let k = rng.random_range(1..=last);
            let right = Decision::for_label(label);
            let d = if rng.random_bool(accuracy) { right } else { right.flipped() };
            (k - 1, d)
        };
        let plan = match tag {
            PolicyTag::Expert => Some(planned(&mut rng, n.div_ceil(2), Self::EXPERT_ACCURACY)),
            PolicyTag::Medium => Some(planned(&mut rng, n, Self::MEDIUM_ACCURACY)),
            PolicyTag::Random => None,
        };
        Self { tag, rng, plan }
    }

    pub fn tag(&self) -> PolicyTag {
        self.tag
    }

    /// Decision at packet `step` (0-based).
    pub fn decide(&mut self, step: usize, is_last: bool) -> Decision {
        match self.plan {
            Some((k, d)) if step >= k || is_last => d,
            Some(_) => Decision::Wait,
            None => {
                let n = if is_last { 2 } else { 3 };
                Decision::ALL[self.rng.random_range(0..n)]
            }
        }
    }
}

/// Rolls a behavior policy over one flow.
///
/// Waits are the trace inter-arrival gaps (zero after the last packet).
pub fn simulate_policy(
    flow: &EncodedFlow,
    tag: PolicyTag,
    cfg: &RewardConfig,
    seed: u64,
) -> Result<Trajectory, TrajectoryError> {
    if !flow.label.is_labeled() {
        return Err(TrajectoryError::UnlabeledFlow(flow.flow_id.clone()));
    }
    if flow.is_empty() {
        return Err(TrajectoryError::EmptyFlow(flow.flow_id.clone()));
    }
    let n = flow.len();
    let mut agent = BehaviorAgent::new(tag, flow.label, n, seed);
    let mut steps = Vec::new();
    for i in 0..n {
        let d = agent.decide(i, i + 1 == n);
        steps.push(Step {
            t: flow.times[i],
            rtg: 0.0,
            obs: flow.observations[i].clone(),
            d,
            w: flow.gap_after(i),
            r: cfg.reward_for(d, flow.label),
        });
        if d.is_terminal() {
            break;
        }
    }
    let rewards: Vec<f64> = steps.iter().map(|s| s.r).collect();
    for (s, g) in steps.iter_mut().zip(compute_rtg(&rewards)) {
        s.rtg = g;
    }
    Ok(Trajectory {
        flow_id: flow.flow_id.clone(),
        label: flow.label,
        policy: tag,
        steps,
    })
}

/// Simulates every flow in parallel; flow `i` uses seed `base_seed ^ i`,
/// so the result does not depend on the worker count.
pub fn simulate_dataset(
    flows: &[EncodedFlow],
    tag: PolicyTag,
    cfg: &RewardConfig,
    base_seed: u64,
) -> Result<Vec<Trajectory>, TrajectoryError> {
    flows
        .par_iter()
        .enumerate()
        .map(|(i, f)| simulate_policy(f, tag, cfg, base_seed ^ i as u64))
        .collect()
}
