//! End-to-end stages shared by the command-line tool and the tests.
//!
//! Every stage has an in-memory form; the `run_*` functions wrap them over
//! a working directory with fixed file names.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autoencoder::{
    train_autoencoder, AutoencoderConfig, AutoencoderError, AutoencoderParams, Embedding, TrainedAutoencoder,
};
use crate::baselines::{bc_train, dnn_train, BaselineError, BcModel, DnnModel, MlpTrainConfig};
use crate::capture::{
    assemble_flows, extract_all, group_flows, label_flows, parse_capture, CaptureError,
    Flow, IngestStats, LabelTable, LabelTableError, PacketRecord, DEFAULT_GAP_TIMEOUT, DEFAULT_PAYLOAD_LEN,
};
use crate::eval::{
    compute_metrics, evaluate_policy, packet_metrics, render_svg, render_table, BcPolicy, BehaviorPolicy, DtPolicy,
    EpisodeResult, EvalError, MetricsReport, Policy, ReferenceReturns, ReportRow,
};
use crate::capture::jsonl::{read_records, write_records};
use crate::io::{read_json, read_jsonl, write_json, write_jsonl, JsonlError};
use crate::seqmodel::{train, ModelConfig, SeqModelError, SequenceModelParams, TrainConfig, TrainedModel};
use crate::synth::{generate, SynthConfig};
use crate::tensor::Matrix;
use crate::trajectory::{
    balance_oversample, read_dataset, simulate_dataset, split_dataset, write_dataset, EncodedFlow, OfflineDataset,
    PolicyTag, RewardConfig, Split, TrajectoryError, HEADER_FEATURES,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{0}")]
    Missing(String),
    #[error("flow {0} has no ground-truth label")]
    UnlabeledFlow(String),
    #[error(transparent)]
    Capture(#[from] CaptureError),
    #[error(transparent)]
    Labels(#[from] LabelTableError),
    #[error(transparent)]
    Io(#[from] JsonlError),
    #[error(transparent)]
    Autoencoder(#[from] AutoencoderError),
    #[error(transparent)]
    Trajectory(#[from] TrajectoryError),
    #[error(transparent)]
    Model(#[from] SeqModelError),
    #[error(transparent)]
    Baseline(#[from] BaselineError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

pub type Result<T> = std::result::Result<T, PipelineError>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// Libpcap file, or canonical JSONL when the name ends in `.jsonl`.
    pub capture: Option<PathBuf>,
    /// CSV with header `flow_id,label`.
    pub ground_truth: Option<PathBuf>,
    pub workdir: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            capture: None,
            ground_truth: None,
            workdir: PathBuf::from("work"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IngestConfig {
    /// `N_p`.
    pub payload_len: usize,
    pub gap_timeout: f64,
}

impl Default for IngestConfig {
    fn default() -> Self {
        Self {
            payload_len: DEFAULT_PAYLOAD_LEN,
            gap_timeout: DEFAULT_GAP_TIMEOUT,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Seeds {
    pub split: u64,
    pub oversample: u64,
    pub simulate: u64,
    pub eval: u64,
    pub reference: u64,
}

impl Default for Seeds {
    fn default() -> Self {
        Self {
            split: 1,
            oversample: 2,
            simulate: 3,
            eval: 4,
            reference: 5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Simulated episodes per test flow for the Expert/Random references.
    pub reference_rollouts: usize,
    /// Episodes per test flow when replaying a behavior policy.
    pub behavior_rollouts: usize,
    /// Overrides the best training return as the initial RTG.
    pub target_rtg: Option<f64>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            reference_rollouts: 2000,
            behavior_rollouts: 2000,
            target_rtg: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub paths: Paths,
    pub ingest: IngestConfig,
    pub synth: SynthConfig,
    pub autoencoder: AutoencoderConfig,
    pub reward: RewardConfig,
    pub model: ModelConfig,
    pub dt: TrainConfig,
    pub bc: MlpTrainConfig,
    pub dnn: MlpTrainConfig,
    pub policy: PolicyTag,
    pub test_fraction: f64,
    /// Oversample malicious flows (and packets, for the classifier) in training.
    pub oversample: bool,
    pub seeds: Seeds,
    pub eval: EvalConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let autoencoder = AutoencoderConfig::default();
        Self {
            paths: Paths::default(),
            ingest: IngestConfig::default(),
            synth: SynthConfig::default(),
            model: ModelConfig {
                obs_dim: autoencoder.bottleneck + HEADER_FEATURES,
                ..ModelConfig::default()
            },
            autoencoder,
            reward: RewardConfig::default(),
            dt: TrainConfig::default(),
            bc: MlpTrainConfig::bc(),
            dnn: MlpTrainConfig::dnn(),
            policy: PolicyTag::Expert,
            test_fraction: 0.2,
            oversample: true,
            seeds: Seeds::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(PipelineError::Config(m));
        if self.ingest.payload_len == 0 {
            return bad("ingest.payload_len must be positive".into());
        }
        if !(self.ingest.gap_timeout >= 0.0) {
            return bad("ingest.gap_timeout must be non-negative".into());
        }
        self.synth
            .validate(self.ingest.payload_len)
            .map_err(|m| PipelineError::Config(format!("synth: {m}")))?;
        let want = self.autoencoder.bottleneck + HEADER_FEATURES;
        if self.model.obs_dim != want {
            return bad(format!(
                "model.obs_dim is {} but autoencoder.bottleneck + {HEADER_FEATURES} = {want}",
                self.model.obs_dim
            ));
        }
        self.model.validate()?;
        self.reward.validate()?;
        if !(0.0..1.0).contains(&self.test_fraction) {
            return bad(format!("test_fraction {} outside [0, 1)", self.test_fraction));
        }
        if self.eval.reference_rollouts == 0 || self.eval.behavior_rollouts == 0 {
            return bad("eval rollouts must be positive".into());
        }
        Ok(())
    }
}

// ---- in-memory stages ----

/// Decodes the configured capture (or reads canonical JSONL), groups
/// flows and applies the ground-truth table when one is configured.
pub fn ingest(cfg: &PipelineConfig) -> Result<(Vec<PacketRecord>, IngestStats)> {
    let path = cfg
        .paths
        .capture
        .as_deref()
        .ok_or_else(|| PipelineError::Missing("paths.capture is not set".into()))?;
    let mut stats = IngestStats::default();
    let n_p = cfg.ingest.payload_len;
    let flows = if path.extension().is_some_and(|e| e == "jsonl") {
        let records = read_records(path, Some(n_p))?;
        stats.packets = records.len();
        stats.decoded = records.len();
        assemble_flows(records)
    } else {
        let raw = parse_capture(path)?;
        group_flows(extract_all(&raw, n_p, &mut stats), cfg.ingest.gap_timeout)
    };
    let flows = match &cfg.paths.ground_truth {
        Some(gt) => {
            let outcome = label_flows(flows, &LabelTable::read_csv(gt)?);
            stats.dropped_flows = outcome.dropped;
            outcome.flows
        }
        None => flows,
    };
    stats.flows = flows.len();
    Ok((flows.into_iter().flat_map(|f| f.packets).collect(), stats))
}

/// Labeled flows from canonical records; every flow must carry a label.
pub fn labeled_flows(records: Vec<PacketRecord>) -> Result<Vec<Flow>> {
    let flows = assemble_flows(records);
    if let Some(f) = flows.iter().find(|f| !f.label.is_labeled()) {
        return Err(PipelineError::UnlabeledFlow(f.flow_id.clone()));
    }
    Ok(flows)
}

/// Flow ids of the stratified train/test split.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitIds {
    pub train: Vec<String>,
    pub test: Vec<String>,
}

pub fn split_flows(flows: &[Flow], cfg: &PipelineConfig) -> Result<SplitIds> {
    let (train, test) = split_dataset(flows, cfg.test_fraction, |f| f.label, cfg.seeds.split)?;
    let ids = |v: Vec<Flow>| v.into_iter().map(|f| f.flow_id).collect();
    Ok(SplitIds {
        train: ids(train),
        test: ids(test),
    })
}

fn select<'a>(flows: &'a [Flow], ids: &[String]) -> Result<Vec<&'a Flow>> {
    let by_id: HashMap<&str, &Flow> = flows.iter().map(|f| (f.flow_id.as_str(), f)).collect();
    ids.iter()
        .map(|id| {
            by_id
                .get(id.as_str())
                .copied()
                .ok_or_else(|| PipelineError::Missing(format!("flow {id} from the split is not in the packet file")))
        })
        .collect()
}

/// Trains the payload autoencoder on the packets of the training flows only.
pub fn train_ae(flows: &[Flow], split: &SplitIds, cfg: &PipelineConfig) -> Result<TrainedAutoencoder> {
    let data: Vec<Vec<f64>> = select(flows, &split.train)?
        .iter()
        .flat_map(|f| f.packets.iter().map(PacketRecord::scaled_payload))
        .collect();
    Ok(train_autoencoder(&data, &cfg.autoencoder)?)
}

/// One exported payload embedding.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingRow {
    pub flow_id: String,
    pub packet_index: usize,
    pub z: Vec<f64>,
}

pub fn embed_flows(ae: &AutoencoderParams, flows: &[Flow]) -> Result<Vec<EmbeddingRow>> {
    let mut rows = Vec::new();
    for f in flows {
        let x: Vec<f64> = f.packets.iter().flat_map(PacketRecord::scaled_payload).collect();
        let z = ae.encode_batch(&Matrix::from_vec(f.len(), x.len() / f.len().max(1), x))?;
        for i in 0..f.len() {
            rows.push(EmbeddingRow {
                flow_id: f.flow_id.clone(),
                packet_index: i,
                z: z.row(i).to_vec(),
            });
        }
    }
    Ok(rows)
}

/// Joins flows with their exported embeddings into model observations.
pub fn encoded_flows(flows: &[&Flow], embeddings: &[EmbeddingRow]) -> Result<Vec<EncodedFlow>> {
    let mut by_flow: HashMap<&str, BTreeMap<usize, &[f64]>> = HashMap::new();
    for e in embeddings {
        by_flow
            .entry(e.flow_id.as_str())
            .or_default()
            .insert(e.packet_index, &e.z);
    }
    flows
        .iter()
        .map(|f| {
            let zs = by_flow.get(f.flow_id.as_str());
            let z: Vec<Embedding> = (0..f.len())
                .map(|i| {
                    zs.and_then(|m| m.get(&i)).map(|z| Embedding(z.to_vec())).ok_or_else(|| {
                        PipelineError::Missing(format!("no embedding for packet {i} of flow {}", f.flow_id))
                    })
                })
                .collect::<Result<_>>()?;
            Ok(EncodedFlow::new(f.flow_id.clone(), f.label, &f.packets, z))
        })
        .collect()
}

/// Encoded train and test flows, in split order.
pub fn encode_split(
    flows: &[Flow],
    split: &SplitIds,
    embeddings: &[EmbeddingRow],
) -> Result<(Vec<EncodedFlow>, Vec<EncodedFlow>)> {
    Ok((
        encoded_flows(&select(flows, &split.train)?, embeddings)?,
        encoded_flows(&select(flows, &split.test)?, embeddings)?,
    ))
}

/// Rolls the configured behavior policy over the (oversampled) training flows.
pub fn behavior_dataset(train_flows: &[EncodedFlow], cfg: &PipelineConfig) -> Result<OfflineDataset> {
    let flows = if cfg.oversample {
        balance_oversample(train_flows.to_vec(), |f| f.label, cfg.seeds.oversample)?
    } else {
        train_flows.to_vec()
    };
    let trajectories = simulate_dataset(&flows, cfg.policy, &cfg.reward, cfg.seeds.simulate)?;
    Ok(OfflineDataset {
        trajectories,
        policy: cfg.policy,
        reward_config: cfg.reward,
        split: Split::Train,
    })
}

fn check_dataset(ds: &OfflineDataset, cfg: &PipelineConfig) -> Result<()> {
    if ds.is_empty() {
        return Err(TrajectoryError::EmptyDataset.into());
    }
    if ds.reward_config != cfg.reward {
        return Err(PipelineError::Config(
            "the dataset was sampled with different reward constants".into(),
        ));
    }
    Ok(())
}

pub fn train_dt(ds: &OfflineDataset, cfg: &PipelineConfig) -> Result<TrainedModel> {
    check_dataset(ds, cfg)?;
    let init = SequenceModelParams::init(&cfg.model, cfg.dt.seed)?;
    Ok(train(init, &cfg.model, &ds.trajectories, None, &cfg.dt)?)
}

pub fn train_bc(ds: &OfflineDataset, cfg: &PipelineConfig) -> Result<(BcModel, Vec<f64>)> {
    check_dataset(ds, cfg)?;
    Ok(bc_train(&ds.trajectories, ds.mean_wait(), &cfg.bc)?)
}

/// Per-packet classifier on every packet of the training flows.
pub fn train_dnn(train_flows: &[EncodedFlow], cfg: &PipelineConfig) -> Result<(DnnModel, Vec<f64>)> {
    let packets: Vec<(Vec<f64>, _)> = train_flows
        .iter()
        .flat_map(|f| f.observations.iter().map(|o| (o.clone(), f.label)))
        .collect();
    let packets = if cfg.oversample {
        balance_oversample(packets, |p| p.1, cfg.seeds.oversample)?
    } else {
        packets
    };
    Ok(dnn_train(&packets, &cfg.dnn)?)
}

pub fn references(ds: &OfflineDataset, test_flows: &[EncodedFlow], cfg: &PipelineConfig) -> Result<ReferenceReturns> {
    Ok(crate::eval::reference_returns(
        &ds.trajectories,
        test_flows,
        &ds.reward_config,
        cfg.eval.reference_rollouts,
        cfg.seeds.reference,
    )?)
}

/// Replays `policy` on the test flows, `rollouts` episodes per flow.
pub fn evaluate(
    policy: &dyn Policy,
    test_flows: &[EncodedFlow],
    refs: &ReferenceReturns,
    rollouts: usize,
    cfg: &PipelineConfig,
) -> Result<(Vec<EpisodeResult>, MetricsReport)> {
    let target = cfg.eval.target_rtg.unwrap_or(refs.max_return);
    let mut episodes = Vec::with_capacity(test_flows.len() * rollouts);
    for r in 0..rollouts as u64 {
        let seed = cfg.seeds.eval.wrapping_add(r.wrapping_mul(0x9e37_79b9_7f4a_7c15));
        episodes.extend(evaluate_policy(policy, test_flows, target, &cfg.reward, seed)?);
    }
    let metrics = compute_metrics(&episodes, refs.expert_return, refs.random_return)?;
    Ok((episodes, metrics))
}

// ---- working-directory stages ----

pub const PACKETS_FILE: &str = "packets.jsonl";
pub const TRUTH_FILE: &str = "ground_truth.csv";
pub const SPLIT_FILE: &str = "split.json";
pub const AE_FILE: &str = "ae.bin";
pub const EMBEDDINGS_FILE: &str = "embeddings.jsonl";

/// Which trained model a command refers to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelKind {
    Dt,
    Bc,
    Dnn,
    /// The simulated behavior policy itself.
    Behavior,
}

impl ModelKind {
    pub fn label(self) -> &'static str {
        match self {
            ModelKind::Dt => "DT",
            ModelKind::Bc => "BC",
            ModelKind::Dnn => "DNN",
            ModelKind::Behavior => "Behavior",
        }
    }
}

impl std::str::FromStr for ModelKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "dt" => Ok(ModelKind::Dt),
            "bc" => Ok(ModelKind::Bc),
            "dnn" => Ok(ModelKind::Dnn),
            "behavior" => Ok(ModelKind::Behavior),
            other => Err(format!("unknown model `{other}` (dt, bc, dnn, behavior)")),
        }
    }
}

pub struct Workdir<'a> {
    pub root: &'a Path,
    pub policy: PolicyTag,
}

impl<'a> Workdir<'a> {
    pub fn new(cfg: &'a PipelineConfig) -> Self {
        Self {
            root: &cfg.paths.workdir,
            policy: cfg.policy,
        }
    }

    pub fn file(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    fn tag(&self) -> String {
        self.policy.name().to_ascii_lowercase()
    }

    pub fn dataset(&self) -> PathBuf {
        self.file(&format!("dataset_{}.jsonl", self.tag()))
    }

    pub fn model(&self, kind: ModelKind) -> PathBuf {
        match kind {
            ModelKind::Dnn => self.file("dnn.bin"),
            ModelKind::Dt => self.file(&format!("dt_{}.bin", self.tag())),
            ModelKind::Bc => self.file(&format!("bc_{}.bin", self.tag())),
            ModelKind::Behavior => self.file(&format!("behavior_{}.bin", self.tag())),
        }
    }

    pub fn train_log(&self, kind: ModelKind) -> PathBuf {
        self.model(kind).with_extension("losses.json")
    }

    fn eval_stem(&self, kind: ModelKind) -> String {
        match kind {
            ModelKind::Dnn => "dnn".into(),
            _ => format!("{}_{}", kind.label().to_ascii_lowercase(), self.tag()),
        }
    }

    pub fn episodes(&self, kind: ModelKind) -> PathBuf {
        self.file(&format!("episodes_{}.jsonl", self.eval_stem(kind)))
    }

    pub fn metrics(&self, kind: ModelKind) -> PathBuf {
        self.file(&format!("metrics_{}.json", self.eval_stem(kind)))
    }

    fn require(&self, path: PathBuf, hint: &str) -> Result<PathBuf> {
        if path.exists() {
            Ok(path)
        } else {
            Err(PipelineError::Missing(format!("{} not found; run `{hint}` first", path.display())))
        }
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|source| JsonlError::Io {
        path: dir.display().to_string(),
        source,
    })?;
    Ok(())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|source| JsonlError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Ok(())
}

/// Losses written next to a trained model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub final_loss: Option<f64>,
    pub losses: Vec<f64>,
}

impl TrainLog {
    fn new(losses: Vec<f64>) -> Self {
        Self {
            final_loss: losses.last().copied(),
            losses,
        }
    }
}

pub fn run_ingest(cfg: &PipelineConfig) -> Result<IngestStats> {
    let (records, stats) = ingest(cfg)?;
    let wd = Workdir::new(cfg);
    ensure_dir(wd.root)?;
    write_records(&wd.file(PACKETS_FILE), &records)?;
    Ok(stats)
}

/// Writes synthetic packets and their ground truth; returns (packets, flows).
pub fn run_synth(cfg: &PipelineConfig) -> Result<(usize, usize)> {
    let (records, truth) = generate(&cfg.synth, cfg.ingest.payload_len).map_err(PipelineError::Config)?;
    let wd = Workdir::new(cfg);
    ensure_dir(wd.root)?;
    write_records(&wd.file(PACKETS_FILE), &records)?;
    truth.write_csv(&wd.file(TRUTH_FILE))?;
    Ok((records.len(), truth.len()))
}

fn load_flows(wd: &Workdir<'_>, cfg: &PipelineConfig) -> Result<Vec<Flow>> {
    let path = wd.require(wd.file(PACKETS_FILE), "ingest` or `synth")?;
    labeled_flows(read_records(&path, Some(cfg.ingest.payload_len))?)
}

/// Splits flows, trains the autoencoder, writes `split.json` and `ae.bin`.
pub fn run_train_ae(cfg: &PipelineConfig) -> Result<TrainLog> {
    let wd = Workdir::new(cfg);
    let flows = load_flows(&wd, cfg)?;
    let split = split_flows(&flows, cfg)?;
    let trained = train_ae(&flows, &split, cfg)?;
    write_json(&wd.file(SPLIT_FILE), &split)?;
    trained.params.save(&wd.file(AE_FILE))?;
    let log = TrainLog::new(trained.epoch_losses);
    write_json(&wd.file(AE_FILE).with_extension("losses.json"), &log)?;
    Ok(log)
}

pub fn run_encode(cfg: &PipelineConfig) -> Result<usize> {
    let wd = Workdir::new(cfg);
    let flows = load_flows(&wd, cfg)?;
    let ae = AutoencoderParams::load(&wd.require(wd.file(AE_FILE), "train-ae")?)?;
    let rows = embed_flows(&ae, &flows)?;
    write_jsonl(&wd.file(EMBEDDINGS_FILE), &rows)?;
    Ok(rows.len())
}

/// Encoded train and test flows from the working directory.
pub fn load_encoded(cfg: &PipelineConfig) -> Result<(Vec<EncodedFlow>, Vec<EncodedFlow>)> {
    let wd = Workdir::new(cfg);
    let flows = load_flows(&wd, cfg)?;
    let split: SplitIds = read_json(&wd.require(wd.file(SPLIT_FILE), "train-ae")?)?;
    let embeddings: Vec<EmbeddingRow> = read_jsonl(&wd.require(wd.file(EMBEDDINGS_FILE), "encode")?)?;
    let (train, test) = encode_split(&flows, &split, &embeddings)?;
    if let Some(f) = train.iter().chain(&test).find(|f| f.obs_dim() != cfg.model.obs_dim) {
        return Err(PipelineError::Config(format!(
            "flow {} has {}-dimensional observations but model.obs_dim is {}",
            f.flow_id,
            f.obs_dim(),
            cfg.model.obs_dim
        )));
    }
    Ok((train, test))
}

pub fn run_sample(cfg: &PipelineConfig) -> Result<OfflineDataset> {
    let (train, _) = load_encoded(cfg)?;
    let ds = behavior_dataset(&train, cfg)?;
    write_dataset(&Workdir::new(cfg).dataset(), &ds)?;
    Ok(ds)
}

fn load_dataset(wd: &Workdir<'_>) -> Result<OfflineDataset> {
    Ok(read_dataset(&wd.require(wd.dataset(), "sample")?)?)
}

pub fn run_train(cfg: &PipelineConfig, kind: ModelKind) -> Result<TrainLog> {
    let wd = Workdir::new(cfg);
    let losses = match kind {
        ModelKind::Dt => {
            let trained = train_dt(&load_dataset(&wd)?, cfg)?;
            trained.params.save(&cfg.model, &wd.model(kind))?;
            trained.losses
        }
        ModelKind::Bc => {
            let (model, losses) = train_bc(&load_dataset(&wd)?, cfg)?;
            model.save(&wd.model(kind))?;
            losses
        }
        ModelKind::Dnn => {
            let (train, _) = load_encoded(cfg)?;
            let (model, losses) = train_dnn(&train, cfg)?;
            model.save(&wd.model(kind))?;
            losses
        }
        ModelKind::Behavior => {
            return Err(PipelineError::Config("behavior policies are simulated, not trained".into()));
        }
    };
    let log = TrainLog::new(losses);
    write_json(&wd.train_log(kind), &log)?;
    Ok(log)
}

pub fn run_evaluate(cfg: &PipelineConfig, kind: ModelKind) -> Result<ReportRow> {
    let wd = Workdir::new(cfg);
    let (_, test) = load_encoded(cfg)?;
    let row = if kind == ModelKind::Dnn {
        let model = DnnModel::load(&wd.require(wd.model(kind), "train dnn")?)?;
        ReportRow {
            policy: "-".into(),
            model: kind.label().into(),
            metrics: packet_metrics(&model, &test)?,
        }
    } else {
        let ds = load_dataset(&wd)?;
        check_dataset(&ds, cfg)?;
        let refs = references(&ds, &test, cfg)?;
        let (policy, rollouts): (Box<dyn Policy>, usize) = match kind {
            ModelKind::Dt => {
                let (params, config) = SequenceModelParams::load(&wd.require(wd.model(kind), "train dt")?)?;
                (Box::new(DtPolicy { params, config }), 1)
            }
            ModelKind::Bc => {
                let model = BcModel::load(&wd.require(wd.model(kind), "train bc")?)?;
                (Box::new(BcPolicy(model)), 1)
            }
            ModelKind::Behavior => (Box::new(BehaviorPolicy(cfg.policy)), cfg.eval.behavior_rollouts),
            ModelKind::Dnn => unreachable!(),
        };
        let (episodes, metrics) = evaluate(policy.as_ref(), &test, &refs, rollouts, cfg)?;
        write_jsonl(&wd.episodes(kind), &episodes)?;
        ReportRow {
            policy: cfg.policy.name().into(),
            model: if kind == ModelKind::Behavior { cfg.policy.name().into() } else { kind.label().into() },
            metrics,
        }
    };
    write_json(&wd.metrics(kind), &row)?;
    Ok(row)
}

fn row_order(r: &ReportRow) -> (usize, usize, String) {
    let policy = PolicyTag::ALL
        .iter()
        .position(|p| p.name() == r.policy)
        .unwrap_or(PolicyTag::ALL.len());
    let model = ["DT", "BC", "DNN"].iter().position(|m| *m == r.model).unwrap_or(3);
    (policy, model, r.model.clone())
}

/// Every `metrics_*.json` in the working directory, in table order.
pub fn collect_rows(dir: &Path) -> Result<Vec<ReportRow>> {
    let entries = std::fs::read_dir(dir).map_err(|source| JsonlError::Io {
        path: dir.display().to_string(),
        source,
    })?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("metrics_") && n.ends_with(".json"))
        })
        .collect();
    paths.sort();
    let mut rows: Vec<ReportRow> = paths.iter().map(|p| read_json(p)).collect::<std::result::Result<_, _>>()?;
    let mut seen = HashSet::new();
    rows.retain(|r| seen.insert((r.policy.clone(), r.model.clone())));
    rows.sort_by_key(row_order);
    if rows.is_empty() {
        return Err(PipelineError::Missing(format!(
            "no metrics_*.json in {}; run `evaluate` first",
            dir.display()
        )));
    }
    Ok(rows)
}

/// Renders `report.txt` (and `report.svg` when asked); returns the table.
pub fn run_report(dir: &Path, svg: bool) -> Result<String> {
    let rows = collect_rows(dir)?;
    let table = render_table(&rows);
    write_text(&dir.join("report.txt"), &table)?;
    if svg {
        write_text(&dir.join("report.svg"), &render_svg(&rows))?;
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::capture::Label;

    #[test]
    fn stages_report_the_missing_step() {
        let tmp = tempfile::tempdir().unwrap();
        let mut cfg = PipelineConfig::default();
        cfg.paths.workdir = tmp.path().to_path_buf();
        let err = run_train_ae(&cfg).unwrap_err();
        assert!(matches!(err, PipelineError::Missing(_)), "{err}");
        assert!(err.to_string().contains("synth"), "{err}");

        cfg.synth.n_flows = 30;
        cfg.synth.max_len = 4;
        cfg.ingest.payload_len = 16;
        cfg.autoencoder.bottleneck = 4;
        cfg.autoencoder.epochs = 1;
        cfg.model.obs_dim = 4 + HEADER_FEATURES;
        cfg.validate().unwrap();
        run_synth(&cfg).unwrap();
        let err = run_encode(&cfg).unwrap_err();
        assert!(err.to_string().contains("train-ae"), "{err}");
        run_train_ae(&cfg).unwrap();
        assert_eq!(run_encode(&cfg).unwrap(), {
            let (records, _) = generate(&cfg.synth, 16).unwrap();
            records.len()
        });
        let (train, test) = load_encoded(&cfg).unwrap();
        assert_eq!(train.len() + test.len(), 30);
        assert!(train.iter().chain(&test).all(|f| f.obs_dim() == cfg.model.obs_dim));
    }

    #[test]
    fn oversampled_behavior_data_is_balanced() {
        let cfg = PipelineConfig {
            synth: SynthConfig {
                n_flows: 400,
                malicious_fraction: 0.2,
                ..SynthConfig::default()
            },
            ..PipelineConfig::default()
        };
        let (records, _) = generate(&cfg.synth, 64).unwrap();
        let flows = labeled_flows(records).unwrap();
        let encoded: Vec<_> = flows
            .iter()
            .map(|f| EncodedFlow {
                flow_id: f.flow_id.clone(),
                label: f.label,
                times: f.packets.iter().map(|p| p.timestamp).collect(),
                observations: vec![vec![0.0]; f.len()],
            })
            .collect();
        let ds = behavior_dataset(&encoded, &cfg).unwrap();
        let minority = ds.trajectories.iter().filter(|t| t.label == Label::Malicious).count();
        let majority = ds.len() - minority;
        let ratio = minority as f64 / majority as f64;
        assert!(ratio >= 0.9 - 1e-9, "{ratio}");
        assert!(ds.trajectories.iter().all(|t| t.terminal().unwrap().d.is_terminal()));
    }
}
