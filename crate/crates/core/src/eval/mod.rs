//! Replay evaluation: return-conditioned rollout over held-out flows and
//! the flow-level metrics of the results table.

mod report;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::baselines::{bc_predict, dnn_predict, BcModel, DnnModel};
use crate::capture::Label;
use crate::seqmodel::{predict_action, ContextStep, ModelConfig, SeqModelError, SequenceModelParams};
use crate::trajectory::{
    simulate_policy, BehaviorAgent, Decision, EncodedFlow, PolicyTag, RewardConfig, Trajectory, TrajectoryError,
};

pub use report::{render_svg, render_table, ReportRow};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("flow {0} has no ground-truth label")]
    UnlabeledFlow(String),
    #[error("flow {0} has no packets")]
    EmptyFlow(String),
    #[error("no episodes to score")]
    NoResults,
    #[error("expert and random reference returns are equal ({0}); normalization undefined")]
    DegenerateNormalization(f64),
    #[error("policy chose to wait at the last packet of flow {0}")]
    WaitAtLastPacket(String),
    #[error("offline dataset is empty")]
    EmptyDataset,
    #[error(transparent)]
    Model(#[from] SeqModelError),
    #[error(transparent)]
    Trajectory(#[from] TrajectoryError),
}

/// One decision of an agent during replay.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Action {
    pub decision: Decision,
    /// Predicted wait in seconds, when the agent produces one.
    pub wait: Option<f64>,
}

/// Per-episode decision maker created by a [`Policy`].
pub trait Agent {
    /// `context` holds every step of the episode so far, ending with the
    /// pending step whose RTG and observation are to be acted on.
    fn act(&mut self, context: &[ContextStep<'_>], mask_wait: bool) -> Result<Action, EvalError>;
}

/// Anything the harness can replay. External agents plug in here.
pub trait Policy: Sync {
    fn name(&self) -> String;
    /// Starts an episode. Only simulated behavior policies may look at the label.
    fn start<'a>(&'a self, flow: &EncodedFlow, seed: u64) -> Box<dyn Agent + 'a>;
}

pub struct DtPolicy {
    pub params: SequenceModelParams,
    pub config: ModelConfig,
}

struct DtAgent<'a>(&'a DtPolicy);

impl Agent for DtAgent<'_> {
    fn act(&mut self, context: &[ContextStep<'_>], mask_wait: bool) -> Result<Action, EvalError> {
        let p = self.0;
        let from = context.len().saturating_sub(p.config.k);
        let pred = predict_action(&p.params, &p.config, &context[from..], mask_wait)?;
        Ok(Action {
            decision: Decision::from_index(pred.decision).unwrap_or(Decision::Benign),
            wait: Some(pred.wait),
        })
    }
}

impl Policy for DtPolicy {
    fn name(&self) -> String {
        "DT".into()
    }

    fn start<'a>(&'a self, _flow: &EncodedFlow, _seed: u64) -> Box<dyn Agent + 'a> {
        Box::new(DtAgent(self))
    }
}

pub struct BcPolicy(pub BcModel);

struct BcAgent<'a>(&'a BcModel);

impl Agent for BcAgent<'_> {
    fn act(&mut self, context: &[ContextStep<'_>], mask_wait: bool) -> Result<Action, EvalError> {
        let s = context.last().ok_or(SeqModelError::EmptyWindow)?;
        Ok(Action {
            decision: bc_predict(self.0, s.rtg, s.obs, mask_wait),
            wait: Some(self.0.mean_wait),
        })
    }
}

impl Policy for BcPolicy {
    fn name(&self) -> String {
        "BC".into()
    }

    fn start<'a>(&'a self, _flow: &EncodedFlow, _seed: u64) -> Box<dyn Agent + 'a> {
        Box::new(BcAgent(&self.0))
    }
}

/// The simulated Expert/Medium/Random behavior policies.
pub struct BehaviorPolicy(pub PolicyTag);

struct BehaviorEpisode(BehaviorAgent);

impl Agent for BehaviorEpisode {
    fn act(&mut self, context: &[ContextStep<'_>], mask_wait: bool) -> Result<Action, EvalError> {
        Ok(Action {
            decision: self.0.decide(context.len() - 1, mask_wait),
            wait: None,
        })
    }
}

impl Policy for BehaviorPolicy {
    fn name(&self) -> String {
        self.0.name().into()
    }

    fn start<'a>(&'a self, flow: &EncodedFlow, seed: u64) -> Box<dyn Agent + 'a> {
        Box::new(BehaviorEpisode(BehaviorAgent::new(self.0, flow.label, flow.len(), seed)))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub flow_id: String,
    pub label: Label,
    pub decision: Decision,
    /// 1-based index of the packet the verdict was given at.
    pub decision_step: usize,
    /// Seconds since the flow's first packet.
    pub decision_time: f64,
    pub episode_return: f64,
    pub ttr: f64,
    /// RTG presented at each step, starting with the target.
    pub rtgs: Vec<f64>,
    pub rewards: Vec<f64>,
    pub wait_preds: Vec<Option<f64>>,
}

impl EpisodeResult {
    pub fn correct(&self) -> bool {
        Decision::for_label(self.label) == self.decision
    }
}

/// Rolls `policy` over one flow, conditioning on `target_rtg` and
/// subtracting each realized reward from the RTG. Packet times come from
/// the trace; predicted waits are recorded only.
pub fn replay_episode(
    policy: &dyn Policy,
    flow: &EncodedFlow,
    target_rtg: f64,
    cfg: &RewardConfig,
    seed: u64,
) -> Result<EpisodeResult, EvalError> {
    if !flow.label.is_labeled() {
        return Err(EvalError::UnlabeledFlow(flow.flow_id.clone()));
    }
    if flow.is_empty() {
        return Err(EvalError::EmptyFlow(flow.flow_id.clone()));
    }
    let n = flow.len();
    let mut agent = policy.start(flow, seed);
    let mut context: Vec<ContextStep<'_>> = Vec::with_capacity(n);
    let mut rtg = target_rtg;
    let (mut rtgs, mut rewards, mut wait_preds) = (Vec::new(), Vec::new(), Vec::new());
    for i in 0..n {
        let is_last = i + 1 == n;
        context.push(ContextStep::pending(flow.times[i], rtg, &flow.observations[i]));
        let action = agent.act(&context, is_last)?;
        let r = cfg.reward_for(action.decision, flow.label);
        rtgs.push(rtg);
        rewards.push(r);
        wait_preds.push(action.wait);
        if action.decision.is_terminal() {
            let duration = flow.duration();
            let elapsed = flow.times[i] - flow.times[0];
            return Ok(EpisodeResult {
                flow_id: flow.flow_id.clone(),
                label: flow.label,
                decision: action.decision,
                decision_step: i + 1,
                decision_time: flow.times[i],
                episode_return: rewards.iter().sum(),
                ttr: if duration > 0.0 { elapsed / duration } else { 0.0 },
                rtgs,
                rewards,
                wait_preds,
            });
        }
        if is_last {
            return Err(EvalError::WaitAtLastPacket(flow.flow_id.clone()));
        }
        let last = context.last_mut().expect("just pushed");
        last.action = Some(action.decision.index());
        last.wait = Some(flow.gap_after(i));
        rtg -= r;
    }
    unreachable!("every path through the last packet returns")
}

/// Replays every flow in parallel; flow `i` uses seed `base_seed ^ i`.
pub fn evaluate_policy(
    policy: &dyn Policy,
    flows: &[EncodedFlow],
    target_rtg: f64,
    cfg: &RewardConfig,
    base_seed: u64,
) -> Result<Vec<EpisodeResult>, EvalError> {
    flows
        .par_iter()
        .enumerate()
        .map(|(i, f)| replay_episode(policy, f, target_rtg, cfg, base_seed ^ i as u64))
        .collect()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Confusion {
    /// Malicious is the positive class.
    pub fn add(&mut self, label: Label, predicted_malicious: bool) {
        match (label == Label::Malicious, predicted_malicious) {
            (true, true) => self.tp += 1,
            (false, true) => self.fp += 1,
            (false, false) => self.tn += 1,
            (true, false) => self.fn_ += 1,
        }
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn accuracy(&self) -> f64 {
        ratio(self.tp + self.tn, self.total())
    }

    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn f1(&self) -> f64 {
        let (p, r) = (self.precision(), self.recall());
        if p + r > 0.0 {
            2.0 * p * r / (p + r)
        } else {
            0.0
        }
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub episodes: usize,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Absent for models without an episode notion (the packet classifier).
    pub mean_return: Option<f64>,
    pub normalized_reward: Option<f64>,
    pub mean_ttr: Option<f64>,
    pub confusion: Confusion,
}

impl MetricsReport {
    pub fn from_confusion(confusion: Confusion) -> Self {
        Self {
            episodes: confusion.total(),
            accuracy: confusion.accuracy(),
            precision: confusion.precision(),
            recall: confusion.recall(),
            f1: confusion.f1(),
            mean_return: None,
            normalized_reward: None,
            mean_ttr: None,
            confusion,
        }
    }
}

/// `100 · (mean − random) / (expert − random)`.
pub fn normalized_reward(mean_return: f64, expert_return: f64, random_return: f64) -> Result<f64, EvalError> {
    if expert_return == random_return {
        return Err(EvalError::DegenerateNormalization(expert_return));
    }
    Ok(100.0 * ((mean_return - random_return) / (expert_return - random_return)))
}

pub fn compute_metrics(
    results: &[EpisodeResult],
    expert_return: f64,
    random_return: f64,
) -> Result<MetricsReport, EvalError> {
    if results.is_empty() {
        return Err(EvalError::NoResults);
    }
    let mut confusion = Confusion::default();
    for r in results {
        confusion.add(r.label, r.decision == Decision::Malicious);
    }
    let n = results.len() as f64;
    let mean_return = results.iter().map(|r| r.episode_return).sum::<f64>() / n;
    let mean_ttr = results.iter().map(|r| r.ttr).sum::<f64>() / n;
    Ok(MetricsReport {
        mean_return: Some(mean_return),
        normalized_reward: Some(normalized_reward(mean_return, expert_return, random_return)?),
        mean_ttr: Some(mean_ttr),
        ..MetricsReport::from_confusion(confusion)
    })
}

/// Per-packet metrics of the packet classifier over every packet of `flows`.
pub fn packet_metrics(model: &DnnModel, flows: &[EncodedFlow]) -> Result<MetricsReport, EvalError> {
    let mut confusion = Confusion::default();
    for f in flows {
        if !f.label.is_labeled() {
            return Err(EvalError::UnlabeledFlow(f.flow_id.clone()));
        }
        for o in &f.observations {
            confusion.add(f.label, dnn_predict(model, o) == Label::Malicious);
        }
    }
    if confusion.total() == 0 {
        return Err(EvalError::NoResults);
    }
    Ok(MetricsReport::from_confusion(confusion))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReferenceReturns {
    pub expert_return: f64,
    pub random_return: f64,
    pub max_return: f64,
}

/// Mean return of a behavior policy over `rollouts` simulated episodes per flow.
pub fn behavior_mean_return(
    flows: &[EncodedFlow],
    tag: PolicyTag,
    cfg: &RewardConfig,
    rollouts: usize,
    seed: u64,
) -> Result<f64, EvalError> {
    let n = flows.len() * rollouts;
    if n == 0 {
        return Err(EvalError::NoResults);
    }
    let returns: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|j| {
            let f = &flows[j % flows.len()];
            let s = seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ j as u64;
            simulate_policy(f, tag, cfg, s).map(|t| t.total_return())
        })
        .collect::<Result<_, _>>()?;
    Ok(returns.iter().sum::<f64>() / n as f64)
}

/// Expert and Random reference returns on `test_flows`, plus the best
/// return of the training trajectories (the evaluation RTG target).
pub fn reference_returns(
    train: &[Trajectory],
    test_flows: &[EncodedFlow],
    cfg: &RewardConfig,
    rollouts: usize,
    seed: u64,
) -> Result<ReferenceReturns, EvalError> {
    let max_return = train
        .iter()
        .map(Trajectory::total_return)
        .max_by(f64::total_cmp)
        .ok_or(EvalError::EmptyDataset)?;
    Ok(ReferenceReturns {
        expert_return: behavior_mean_return(test_flows, PolicyTag::Expert, cfg, rollouts, seed)?,
        random_return: behavior_mean_return(test_flows, PolicyTag::Random, cfg, rollouts, seed ^ 0x5a5a)?,
        max_return,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flow(times: &[f64], label: Label) -> EncodedFlow {
        EncodedFlow {
            flow_id: "f".into(),
            label,
            times: times.to_vec(),
            observations: vec![vec![0.0]; times.len()],
        }
    }

    struct Scripted(Vec<Decision>);

    struct ScriptedAgent<'a>(&'a [Decision]);

    impl Agent for ScriptedAgent<'_> {
        fn act(&mut self, ctx: &[ContextStep<'_>], mask_wait: bool) -> Result<Action, EvalError> {
            let d = self.0[ctx.len() - 1];
            let d = if mask_wait && d == Decision::Wait { Decision::Benign } else { d };
            Ok(Action { decision: d, wait: None })
        }
    }

    impl Policy for Scripted {
        fn name(&self) -> String {
            "scripted".into()
        }

        fn start<'a>(&'a self, _: &EncodedFlow, _: u64) -> Box<dyn Agent + 'a> {
            Box::new(ScriptedAgent(&self.0))
        }
    }

    #[test]
    fn correct_first_packet() {
        let cfg = RewardConfig::default();
        let p = Scripted(vec![Decision::Malicious; 3]);
        let r = replay_episode(&p, &flow(&[0.0, 1.0, 2.0], Label::Malicious), 1.0, &cfg, 0).unwrap();
        assert_eq!(r.episode_return, cfg.c_tn);
        assert_eq!(r.ttr, 0.0);
        assert_eq!(r.decision_step, 1);
    }

    #[test]
    fn always_wait_is_forced_at_the_end() {
        let cfg = RewardConfig::default();
        let p = Scripted(vec![Decision::Wait; 4]);
        let r = replay_episode(&p, &flow(&[0.0, 1.0, 2.5, 4.0], Label::Benign), 1.0, &cfg, 0).unwrap();
        assert_eq!(r.decision_step, 4);
        assert_eq!(r.ttr, 1.0);
        assert!((r.episode_return - (3.0 * cfg.c_wait + cfg.c_tp)).abs() < 1e-12);
        for i in 0..3 {
            assert_eq!(r.rtgs[i + 1], r.rtgs[i] - r.rewards[i]);
        }
    }

    #[test]
    fn ttr_formula() {
        let p = Scripted(vec![Decision::Wait, Decision::Wait, Decision::Benign, Decision::Benign]);
        let r = replay_episode(&p, &flow(&[0.0, 2.0, 4.0, 10.0], Label::Benign), 1.0, &RewardConfig::default(), 0)
            .unwrap();
        assert_eq!(r.ttr, 0.4);
        let single = replay_episode(&p, &flow(&[3.0], Label::Benign), 1.0, &RewardConfig::default(), 0).unwrap();
        assert_eq!(single.ttr, 0.0);
    }

    #[test]
    fn unlabeled_flow_is_rejected() {
        let p = Scripted(vec![Decision::Benign]);
        assert!(matches!(
            replay_episode(&p, &flow(&[0.0], Label::Unlabeled), 1.0, &RewardConfig::default(), 0),
            Err(EvalError::UnlabeledFlow(_))
        ));
    }

    #[test]
    fn confusion_example() {
        let c = Confusion { tp: 3, fp: 1, fn_: 1, tn: 5 };
        assert!((c.accuracy() - 0.8).abs() < 1e-15);
        assert_eq!(c.precision(), 0.75);
        assert_eq!(c.recall(), 0.75);
        assert!((c.f1() - 0.75).abs() < 1e-15);
    }

    #[test]
    fn normalization_endpoints() {
        assert_eq!(normalized_reward(0.7, 0.7, -0.1).unwrap(), 100.0);
        assert_eq!(normalized_reward(-0.1, 0.7, -0.1).unwrap(), 0.0);
        assert!(matches!(
            normalized_reward(0.3, 0.2, 0.2),
            Err(EvalError::DegenerateNormalization(_))
        ));
    }

    #[test]
    fn reference_max_return() {
        let mk = |r: f64| Trajectory {
            flow_id: "x".into(),
            label: Label::Benign,
            policy: PolicyTag::Expert,
            steps: vec![crate::trajectory::Step {
                t: 0.0,
                rtg: r,
                obs: vec![0.0],
                d: Decision::Benign,
                w: 0.0,
                r,
            }],
        };
        let flows = [flow(&[0.0, 1.0], Label::Benign)];
        let refs = reference_returns(&[mk(0.8), mk(0.5)], &flows, &RewardConfig::default(), 10, 1).unwrap();
        assert_eq!(refs.max_return, 0.8);
        assert!(reference_returns(&[], &flows, &RewardConfig::default(), 10, 1).is_err());
    }
}
