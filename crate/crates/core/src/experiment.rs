//! Experiment configuration, dispatch and CSV output.
//!
//! A configuration is a TOML document naming one experiment `kind`, a
//! top-level `seed`, a replication count and at most one parameter block
//! for that kind. A block given in the file must be complete; an absent
//! block takes the kind's defaults. Dotted-path overrides such as
//! `feel.train.rounds=50` are applied on top of either.
//!
//! Every emitted file starts with a `# config_hash=<hex>,seed=<seed>` line.
//! The hash covers the validated configuration with its seed and output
//! directory removed, so a hash and a seed together pin the outputs.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::aircomp::feel::{
    train_centralized, train_feel, DetectorKind, FeelConfig, FeelScheme, LogisticTask, TaskConfig,
};
use crate::aircomp::{air_pool, max_approx_error, FeatureBatch, PoolingConfig};
use crate::channels::{DelayModel, DiscreteChannel, GaussianMac, LinkModel};
use crate::edge_batch::{simulate, sweep_batch_size, EdgeConfig};
use crate::error::{Error, Result};
use crate::feedback_codec::{sweep, sweep_csv, SweepConfig};
use crate::policies::{run_tracking_experiment, SchedulerPolicy, TrackingConfig};
use crate::processes::{ProcessModel, SensorSpec};
use crate::remote_mdp::coding::{
    benchmark_graphs, expected_guidance_cost, expected_shortest_cost, GuidanceOracle, GuidanceScheme, StateGraph,
    ORACLE_MAX_VERTICES,
};
use crate::remote_mdp::{evaluate_guidance, q_learn_joint, random_walk, GridWorld, MessagePolicy, QLearningParams};
use crate::simkernel::{RngStream, Timebase};

/// Environment variable naming the default output directory.
pub const OUT_ENV: &str = "GOALSIM_OUT";

/// Name of the marker file written next to the outputs of a failed run.
pub const FAILURE_MARKER: &str = "FAILED";

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Tracking,
    RemoteMdp,
    GraphCoding,
    Aircomp,
    Feel,
    Feedback,
    EdgeBatch,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 7] = [
        ExperimentKind::Tracking,
        ExperimentKind::RemoteMdp,
        ExperimentKind::GraphCoding,
        ExperimentKind::Aircomp,
        ExperimentKind::Feel,
        ExperimentKind::Feedback,
        ExperimentKind::EdgeBatch,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Tracking => "tracking",
            ExperimentKind::RemoteMdp => "remote-mdp",
            ExperimentKind::GraphCoding => "graph-coding",
            ExperimentKind::Aircomp => "aircomp",
            ExperimentKind::Feel => "feel",
            ExperimentKind::Feedback => "feedback",
            ExperimentKind::EdgeBatch => "edge-batch",
        }
    }

    /// Key of the kind's parameter block.
    pub fn block(self) -> &'static str {
        match self {
            ExperimentKind::Tracking => "tracking",
            ExperimentKind::RemoteMdp => "remote_mdp",
            ExperimentKind::GraphCoding => "graph_coding",
            ExperimentKind::Aircomp => "aircomp",
            ExperimentKind::Feel => "feel",
            ExperimentKind::Feedback => "feedback",
            ExperimentKind::EdgeBatch => "edge_batch",
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            ExperimentKind::Tracking => "sensor polling and pushing for remote tracking; AoI and VoI per epoch",
            ExperimentKind::RemoteMdp => "guided agent on a grid world over a noisy discrete channel",
            ExperimentKind::GraphCoding => "expected cost of guidance codes on state graphs against the DP oracle",
            ExperimentKind::Aircomp => "over-the-air p-norm pooling: approximation error and noise variance vs p",
            ExperimentKind::Feel => "federated logistic regression with PA, OBDA and GD-OAC aggregation",
            ExperimentKind::Feedback => "acknowledgement feedback length vs number of acknowledged users",
            ExperimentKind::EdgeBatch => "batched early-exit inference serving and the batch-size sweep",
        }
    }

    /// Files a run writes, besides `summary.csv`.
    pub fn outputs(self) -> &'static [&'static str] {
        match self {
            ExperimentKind::Tracking => &["epochs.csv"],
            ExperimentKind::RemoteMdp => &[
                "episodes.csv",
                "guide_policy.csv",
                "agent_policy.csv",
                "training.csv",
                "eps_sweep.csv",
            ],
            ExperimentKind::GraphCoding => &["costs.csv"],
            ExperimentKind::Aircomp => &["pooling.csv", "pooling_batches.csv"],
            ExperimentKind::Feel => &["curves.csv"],
            ExperimentKind::Feedback => &["sweep.csv"],
            ExperimentKind::EdgeBatch => &["tasks.csv", "batches.csv", "sweep.csv"],
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == name)
    }
}

impl std::fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GuideKind {
    /// The guide sends the shortest-path action and the agent obeys.
    Greedy,
    /// Guide and agent maps learned by alternating Q-learning.
    Learned,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RemoteMdpParams {
    pub grid: GridWorld,
    #[serde(default)]
    pub channel: DiscreteChannel,
    #[serde(default = "greedy_guide")]
    pub guide: GuideKind,
    #[serde(default)]
    pub learning: QLearningParams,
    #[serde(default = "default_episodes")]
    pub episodes: usize,
    /// Symbol error probabilities replayed on paired episode seeds.
    #[serde(default)]
    pub eps_sweep: Vec<f64>,
}

fn greedy_guide() -> GuideKind {
    GuideKind::Greedy
}

fn default_episodes() -> usize {
    1000
}

impl Default for RemoteMdpParams {
    fn default() -> Self {
        RemoteMdpParams {
            grid: GridWorld::empty(5, 5),
            channel: DiscreteChannel::default(),
            guide: GuideKind::Greedy,
            learning: QLearningParams::default(),
            episodes: default_episodes(),
            eps_sweep: vec![0.0, 0.05, 0.1, 0.2],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphCodingParams {
    /// Empty means the built-in benchmark suite.
    #[serde(default)]
    pub graphs: Vec<StateGraph>,
    #[serde(default = "default_bits")]
    pub bits: Vec<usize>,
    /// Block lengths of the horizon schemes.
    #[serde(default = "default_horizons")]
    pub horizons: Vec<usize>,
    #[serde(default = "yes")]
    pub oracle: bool,
}

fn default_bits() -> Vec<usize> {
    vec![1, 2]
}

fn default_horizons() -> Vec<usize> {
    vec![2, 3]
}

fn yes() -> bool {
    true
}

impl Default for GraphCodingParams {
    fn default() -> Self {
        GraphCodingParams {
            graphs: Vec::new(),
            bits: default_bits(),
            horizons: default_horizons(),
            oracle: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AircompParams {
    pub devices: usize,
    pub dim: usize,
    /// Features are uniform on `[0, scale)`; `1 / devices` if unset.
    pub scale: Option<f64>,
    pub p_values: Vec<f64>,
    pub noise_var: f64,
    pub batches: usize,
    /// Noise draws per batch and p for the output variance.
    pub draws: usize,
}

impl Default for AircompParams {
    fn default() -> Self {
        AircompParams {
            devices: 8,
            dim: 16,
            scale: None,
            p_values: vec![1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 64.0],
            noise_var: 1e-2,
            batches: 100,
            draws: 400,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeelParams {
    pub task: TaskConfig,
    pub train: FeelConfig,
    pub schemes: Vec<FeelScheme>,
    /// Also emit the full-batch gradient descent reference.
    pub centralized: bool,
}

impl Default for FeelParams {
    fn default() -> Self {
        FeelParams {
            task: TaskConfig::default(),
            train: FeelConfig::default(),
            schemes: vec![
                FeelScheme::Pa,
                FeelScheme::Obda,
                FeelScheme::GdOac {
                    q: 5,
                    j: 6,
                    detector: DetectorKind::Genie,
                },
            ],
            centralized: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdgeBatchParams {
    #[serde(default = "EdgeConfig::pinned")]
    pub system: EdgeConfig,
    /// Batch caps replayed on the same task trace; empty skips the sweep.
    #[serde(default)]
    pub sweep_b_max: Vec<usize>,
}

impl Default for EdgeBatchParams {
    fn default() -> Self {
        EdgeBatchParams {
            system: EdgeConfig::pinned(),
            sweep_b_max: vec![1, 2, 4, 8, 16, 32],
        }
    }
}

/// Four homogeneous Wiener sensors polled over a lossy link, VoI-greedy
/// with AoI-greedy as the shadow.
pub fn default_tracking() -> TrackingConfig {
    let n = 4;
    TrackingConfig {
        timebase: Timebase::MILLIS,
        components: vec![ProcessModel::Wiener { sigma2: 1.0 }; n],
        sensors: (0..n)
            .map(|c| SensorSpec {
                components: vec![c],
                noise_var: 0.0,
            })
            .collect(),
        link: LinkModel {
            delay: DelayModel::Deterministic { seconds: 0.0 },
            erasure_prob: 0.2,
        },
        policy: SchedulerPolicy::VoiGreedyPull,
        shadow: Some(SchedulerPolicy::AoiGreedyPull { weights: Vec::new() }),
        epoch: 1.0,
        duration: 1000.0,
        pull_period: 1,
        pull_timeout: None,
        jumps: Vec::new(),
        retry_prob: 0.5,
        seed: 0,
    }
}

pub fn default_feedback() -> SweepConfig {
    SweepConfig {
        population: crate::feedback_codec::DEFAULT_POPULATION,
        k_values: (20..=500).step_by(20).collect(),
        eps: vec![1e-2, 1e-4],
        sets: 4,
        probes_per_set: 25_000,
        seed: 0,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "one")]
    pub replications: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tracking: Option<TrackingConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub remote_mdp: Option<RemoteMdpParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub graph_coding: Option<GraphCodingParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aircomp: Option<AircompParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feel: Option<FeelParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feedback: Option<SweepConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edge_batch: Option<EdgeBatchParams>,
}

fn one() -> usize {
    1
}

// Same document with the kind left optional so the CLI can supply it.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    #[serde(default)]
    kind: Option<ExperimentKind>,
    #[serde(default)]
    seed: u64,
    #[serde(default = "one")]
    replications: usize,
    #[serde(default)]
    out: Option<PathBuf>,
    #[serde(default)]
    tracking: Option<TrackingConfig>,
    #[serde(default)]
    remote_mdp: Option<RemoteMdpParams>,
    #[serde(default)]
    graph_coding: Option<GraphCodingParams>,
    #[serde(default)]
    aircomp: Option<AircompParams>,
    #[serde(default)]
    feel: Option<FeelParams>,
    #[serde(default)]
    feedback: Option<SweepConfig>,
    #[serde(default)]
    edge_batch: Option<EdgeBatchParams>,
}

fn config_error(context: &str, e: impl std::fmt::Display) -> Error {
    Error::Config(format!("{context}: {e}"))
}

/// Parses `path=value` and writes it into `table`, creating tables along
/// the path. Values use TOML syntax; anything that does not parse is
/// taken as a bare string.
pub fn apply_override(table: &mut toml::Table, spec: &str) -> Result<()> {
    let (path, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{spec}` is not of the form path=value")))?;
    let path = path.trim();
    let keys: Vec<&str> = path.split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(Error::Config(format!("override `{spec}` has an empty path segment")));
    }
    let raw = raw.trim();
    let value = match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    let (last, parents) = keys.split_last().expect("non-empty path");
    let mut node = table;
    for k in parents {
        let entry = node
            .entry(k.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        node = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override `{path}`: `{k}` is not a table")))?;
    }
    node.insert(last.to_string(), value);
    Ok(())
}

impl ExperimentConfig {
    /// The kind with its default parameter block.
    pub fn for_kind(kind: ExperimentKind) -> Self {
        let mut cfg = ExperimentConfig {
            kind,
            seed: 0,
            replications: 1,
            out: None,
            tracking: None,
            remote_mdp: None,
            graph_coding: None,
            aircomp: None,
            feel: None,
            feedback: None,
            edge_batch: None,
        };
        cfg.fill_default_block();
        cfg.sync_block_seeds();
        cfg
    }

    fn fill_default_block(&mut self) {
        match self.kind {
            ExperimentKind::Tracking => {
                self.tracking.get_or_insert_with(default_tracking);
            }
            ExperimentKind::RemoteMdp => {
                self.remote_mdp.get_or_insert_with(Default::default);
            }
            ExperimentKind::GraphCoding => {
                self.graph_coding.get_or_insert_with(Default::default);
            }
            ExperimentKind::Aircomp => {
                self.aircomp.get_or_insert_with(Default::default);
            }
            ExperimentKind::Feel => {
                self.feel.get_or_insert_with(Default::default);
            }
            ExperimentKind::Feedback => {
                self.feedback.get_or_insert_with(default_feedback);
            }
            ExperimentKind::EdgeBatch => {
                self.edge_batch.get_or_insert_with(Default::default);
            }
        }
    }

    // Block-level seed fields always mirror the top-level seed.
    fn sync_block_seeds(&mut self) {
        let seed = self.seed;
        if let Some(t) = &mut self.tracking {
            t.seed = seed;
        }
        if let Some(f) = &mut self.feedback {
            f.seed = seed;
        }
        if let Some(e) = &mut self.edge_batch {
            e.system.seed = seed;
        }
    }

    /// Loads a configuration from optional TOML text, an optional kind
    /// from the command line, and dotted-path overrides, then validates it.
    pub fn load(text: Option<&str>, kind: Option<ExperimentKind>, overrides: &[String]) -> Result<Self> {
        let raw: RawConfig = match text {
            Some(t) => toml::from_str(t).map_err(|e| config_error("invalid configuration", e))?,
            None => toml::from_str("").expect("empty document"),
        };
        let kind = match (raw.kind, kind) {
            (Some(a), Some(b)) if a != b => {
                return Err(Error::Config(format!(
                    "configuration is for `{a}` but `{b}` was requested"
                )))
            }
            (Some(k), _) | (None, Some(k)) => k,
            (None, None) => return Err(Error::Config("missing field `kind`".into())),
        };
        let mut cfg = ExperimentConfig {
            kind,
            seed: raw.seed,
            replications: raw.replications,
            out: raw.out,
            tracking: raw.tracking,
            remote_mdp: raw.remote_mdp,
            graph_coding: raw.graph_coding,
            aircomp: raw.aircomp,
            feel: raw.feel,
            feedback: raw.feedback,
            edge_batch: raw.edge_batch,
        };
        cfg.fill_default_block();
        if !overrides.is_empty() {
            let mut table = toml::Table::try_from(&cfg).map_err(|e| config_error("configuration", e))?;
            for o in overrides {
                apply_override(&mut table, o)?;
            }
            cfg = table
                .try_into()
                .map_err(|e| config_error("invalid configuration after overrides", e))?;
            cfg.fill_default_block();
        }
        cfg.sync_block_seeds();
        cfg.validate()?;
        Ok(cfg)
    }

    /// Checks every parameter the run will use.
    pub fn validate(&self) -> Result<()> {
        let prefix = |e: Error| Error::Config(format!("{}: {e}", self.kind.block()));
        if self.replications == 0 {
            return Err(Error::Config("replications: must be at least 1".into()));
        }
        // seeds are stored as TOML integers
        if self.seed > i64::MAX as u64 || self.seed.checked_add(self.replications as u64).is_none_or(|s| s > i64::MAX as u64) {
            return Err(Error::Config("seed: seed plus replications must fit a signed 64-bit integer".into()));
        }
        let blocks = [
            (ExperimentKind::Tracking, self.tracking.is_some()),
            (ExperimentKind::RemoteMdp, self.remote_mdp.is_some()),
            (ExperimentKind::GraphCoding, self.graph_coding.is_some()),
            (ExperimentKind::Aircomp, self.aircomp.is_some()),
            (ExperimentKind::Feel, self.feel.is_some()),
            (ExperimentKind::Feedback, self.feedback.is_some()),
            (ExperimentKind::EdgeBatch, self.edge_batch.is_some()),
        ];
        for (k, present) in blocks {
            if present && k != self.kind {
                return Err(Error::Config(format!(
                    "block `{}` does not belong to a `{}` experiment",
                    k.block(),
                    self.kind
                )));
            }
            if !present && k == self.kind {
                return Err(Error::Config(format!("missing block `{}`", k.block())));
            }
        }
        match self.kind {
            ExperimentKind::Tracking => self.tracking.as_ref().expect("checked").validate().map_err(prefix),
            ExperimentKind::RemoteMdp => validate_remote_mdp(self.remote_mdp.as_ref().expect("checked")).map_err(prefix),
            ExperimentKind::GraphCoding => {
                validate_graph_coding(self.graph_coding.as_ref().expect("checked")).map_err(prefix)
            }
            ExperimentKind::Aircomp => validate_aircomp(self.aircomp.as_ref().expect("checked")).map_err(prefix),
            ExperimentKind::Feel => validate_feel(self.feel.as_ref().expect("checked")).map_err(prefix),
            ExperimentKind::Feedback => self.feedback.as_ref().expect("checked").validate().map_err(prefix),
            ExperimentKind::EdgeBatch => {
                validate_edge_batch(self.edge_batch.as_ref().expect("checked")).map_err(prefix)
            }
        }
    }

    /// Canonical TOML of the configuration without seed and output directory.
    pub fn canonical_toml(&self) -> String {
        let mut c = self.clone();
        c.seed = 0;
        c.out = None;
        c.sync_block_seeds();
        toml::to_string(&c).expect("configurations serialize")
    }

    /// SHA-256 of the canonical TOML, in lowercase hex.
    pub fn config_hash(&self) -> String {
        let digest = Sha256::digest(self.canonical_toml().as_bytes());
        digest.iter().fold(String::with_capacity(64), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
    }

    /// Seed of replication `r`.
    pub fn replication_seed(&self, r: usize) -> u64 {
        self.seed + r as u64
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configurations serialize")
    }
}

fn validate_remote_mdp(p: &RemoteMdpParams) -> Result<()> {
    p.grid.validate()?;
    p.channel.validate()?;
    if p.episodes == 0 {
        return Err(Error::invalid("episodes", "at least one episode"));
    }
    for &eps in &p.eps_sweep {
        DiscreteChannel { eps, ..p.channel }.validate()?;
    }
    if p.guide == GuideKind::Learned {
        let l = &p.learning;
        if l.messages == 0 || l.messages > p.channel.words() {
            return Err(Error::invalid("messages", "must fit the channel's word count"));
        }
        if l.phases == 0 || l.episodes_per_phase == 0 || l.eval_episodes == 0 {
            return Err(Error::invalid("phases", "phases and episode counts must be positive"));
        }
        if !(l.alpha > 0.0 && l.alpha <= 1.0) || !(0.0..=1.0).contains(&l.gamma) || !(0.0..=1.0).contains(&l.explore) {
            return Err(Error::invalid("alpha", "alpha in (0, 1], gamma and explore in [0, 1]"));
        }
    } else {
        MessagePolicy::greedy(&p.grid, &p.channel).validate(&p.grid, &p.channel)?;
    }
    Ok(())
}

fn validate_graph_coding(p: &GraphCodingParams) -> Result<()> {
    if p.bits.is_empty() || p.bits.contains(&0) {
        return Err(Error::invalid("bits", "need at least one positive value"));
    }
    if p.horizons.contains(&0) {
        return Err(Error::invalid("horizons", "block lengths must be positive"));
    }
    for g in &p.graphs {
        g.validate()?;
        if p.oracle && g.vertices > ORACLE_MAX_VERTICES {
            return Err(Error::InstanceTooLarge {
                vertices: g.vertices,
                max: ORACLE_MAX_VERTICES,
            });
        }
    }
    Ok(())
}

fn validate_aircomp(p: &AircompParams) -> Result<()> {
    if p.devices == 0 || p.dim == 0 || p.batches == 0 || p.draws < 2 {
        return Err(Error::invalid("aircomp", "devices, dim and batches positive, draws at least 2"));
    }
    if let Some(s) = p.scale {
        if !(s > 0.0) || !s.is_finite() {
            return Err(Error::invalid("scale", "must be positive"));
        }
    }
    if p.p_values.is_empty() {
        return Err(Error::invalid("p_values", "need at least one value"));
    }
    for &v in &p.p_values {
        PoolingConfig::max_approx(v).validate()?;
    }
    GaussianMac::unit(p.devices, p.noise_var).validate()
}

fn validate_feel(p: &FeelParams) -> Result<()> {
    p.task.validate()?;
    p.train.validate()?;
    if p.schemes.is_empty() && !p.centralized {
        return Err(Error::invalid("schemes", "nothing to train"));
    }
    for s in &p.schemes {
        s.validate(p.task.dim)?;
    }
    Ok(())
}

fn validate_edge_batch(p: &EdgeBatchParams) -> Result<()> {
    p.system.validate()?;
    if p.sweep_b_max.contains(&0) {
        return Err(Error::invalid("sweep_b_max", "caps must be positive"));
    }
    Ok(())
}

/// One CSV file without its stamp line.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CsvFile {
    pub name: String,
    pub body: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReplicationOutput {
    pub index: usize,
    pub seed: u64,
    pub files: Vec<CsvFile>,
    pub summary: Vec<(String, String)>,
    /// Set when the replication stopped early or ended unstable.
    pub failure: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunOutput {
    pub kind: ExperimentKind,
    pub config_hash: String,
    pub seed: u64,
    pub replications: Vec<ReplicationOutput>,
}

#[derive(Default)]
struct Sink {
    files: Vec<CsvFile>,
    summary: Vec<(String, String)>,
}

impl Sink {
    fn file(&mut self, name: &str, body: String) {
        self.files.push(CsvFile {
            name: name.to_string(),
            body,
        });
    }

    fn stat(&mut self, key: &str, value: impl std::fmt::Display) {
        self.summary.push((key.to_string(), value.to_string()));
    }
}

/// Runs every replication and collects outputs in replication order.
/// Replications run in parallel, each on its own seed.
pub fn execute(cfg: &ExperimentConfig) -> RunOutput {
    let replications = (0..cfg.replications)
        .into_par_iter()
        .map(|r| {
            let seed = cfg.replication_seed(r);
            let mut sink = Sink::default();
            let failure = run_replication(cfg, seed, &mut sink).err().map(|e| e.to_string());
            ReplicationOutput {
                index: r,
                seed,
                files: sink.files,
                summary: sink.summary,
                failure,
            }
        })
        .collect();
    RunOutput {
        kind: cfg.kind,
        config_hash: cfg.config_hash(),
        seed: cfg.seed,
        replications,
    }
}

fn run_replication(cfg: &ExperimentConfig, seed: u64, sink: &mut Sink) -> Result<()> {
    sink.stat("kind", cfg.kind);
    match cfg.kind {
        ExperimentKind::Tracking => run_tracking(cfg.tracking.as_ref().expect("validated"), seed, sink),
        ExperimentKind::RemoteMdp => run_remote_mdp(cfg.remote_mdp.as_ref().expect("validated"), seed, sink),
        ExperimentKind::GraphCoding => run_graph_coding(cfg.graph_coding.as_ref().expect("validated"), sink),
        ExperimentKind::Aircomp => run_aircomp(cfg.aircomp.as_ref().expect("validated"), seed, sink),
        ExperimentKind::Feel => run_feel(cfg.feel.as_ref().expect("validated"), seed, sink),
        ExperimentKind::Feedback => run_feedback(cfg.feedback.as_ref().expect("validated"), seed, sink),
        ExperimentKind::EdgeBatch => run_edge_batch(cfg.edge_batch.as_ref().expect("validated"), seed, sink),
    }
}

fn run_tracking(p: &TrackingConfig, seed: u64, sink: &mut Sink) -> Result<()> {
    let cfg = TrackingConfig { seed, ..p.clone() };
    let res = run_tracking_experiment(&cfg)?;
    sink.file("epochs.csv", res.epochs_csv());
    sink.stat("policy", cfg.policy.name());
    sink.stat("epochs", res.epochs.len());
    sink.stat("mean_sq_error", res.mean_sq_error);
    sink.stat("mean_aoi", res.mean_aoi);
    sink.stat("time_avg_aoi", res.time_avg_aoi);
    sink.stat("transmissions", res.transmissions);
    sink.stat("deliveries", res.deliveries);
    sink.stat("collisions", res.collisions);
    if let Some(s) = &cfg.shadow {
        let (agree, total) = res.agreement();
        sink.stat("shadow_policy", s.name());
        sink.stat("shadow_agreement", agree);
        sink.stat("shadow_compared", total);
    }
    for (i, d) in res.detection_delays.iter().enumerate() {
        sink.stat(&format!("jump_{i}_detection_delay"), d.map_or(String::new(), |v| v.to_string()));
    }
    Ok(())
}

fn run_remote_mdp(p: &RemoteMdpParams, seed: u64, sink: &mut Sink) -> Result<()> {
    let root = RngStream::new(seed, "remote-mdp");
    let policy = match p.guide {
        GuideKind::Greedy => MessagePolicy::greedy(&p.grid, &p.channel),
        GuideKind::Learned => {
            let trained = q_learn_joint(&p.grid, &p.channel, &p.learning, &mut root.child("learn"))?;
            let mut csv = String::from("phase,learner,mean_return,mean_steps\n");
            for t in &trained.curve {
                let _ = writeln!(csv, "{},{},{},{}", t.phase, t.learner, t.mean_return, t.mean_steps);
            }
            sink.file("training.csv", csv);
            trained.policy
        }
    };
    let (guide_csv, agent_csv) = policy.to_csv();
    sink.file("guide_policy.csv", guide_csv);
    sink.file("agent_policy.csv", agent_csv);
    let stats = evaluate_guidance(&p.grid, &policy, &p.channel, p.episodes, &mut root.child("eval"))?;
    sink.file("episodes.csv", stats.episodes_csv());
    sink.stat("guide", format!("{:?}", p.guide).to_lowercase());
    sink.stat("mean_return", stats.mean_return);
    sink.stat("mean_steps", stats.mean_steps);
    sink.stat("success_rate", stats.success_rate);
    let walk = random_walk(&p.grid, p.episodes, &mut root.child("eval"))?;
    sink.stat("random_walk_mean_return", walk.mean_return);
    sink.stat("random_walk_mean_steps", walk.mean_steps);
    if !p.eps_sweep.is_empty() {
        let mut csv = String::from("eps,mean_return,mean_steps,success_rate\n");
        for &eps in &p.eps_sweep {
            let ch = DiscreteChannel { eps, ..p.channel };
            let s = evaluate_guidance(&p.grid, &policy, &ch, p.episodes, &mut root.child("eval"))?;
            let _ = writeln!(csv, "{eps},{},{},{}", s.mean_return, s.mean_steps, s.success_rate);
        }
        sink.file("eps_sweep.csv", csv);
    }
    Ok(())
}

fn run_graph_coding(p: &GraphCodingParams, sink: &mut Sink) -> Result<()> {
    let graphs = if p.graphs.is_empty() { benchmark_graphs() } else { p.graphs.clone() };
    let mut csv = String::from("graph,vertices,start,bits,scheme,expected_cost\n");
    let mut oracle_wins = 0usize;
    let mut cells = 0usize;
    for (gi, g) in graphs.iter().enumerate() {
        for &b in &p.bits {
            let oracle = if p.oracle && g.vertices <= ORACLE_MAX_VERTICES {
                Some(GuidanceOracle::solve(g, b)?)
            } else {
                None
            };
            for start in 0..g.vertices {
                let mut row = |scheme: &str, cost: f64| {
                    let _ = writeln!(csv, "{gi},{},{start},{b},{scheme},{cost}", g.vertices);
                };
                row("shortest", expected_shortest_cost(g, start)?);
                let mut best = f64::INFINITY;
                let mut schemes = vec![("per_step".to_string(), GuidanceScheme::PerStep)];
                schemes.push(("goal_only".to_string(), GuidanceScheme::GoalOnly));
                for &k in &p.horizons {
                    schemes.push((format!("horizon:{k}"), GuidanceScheme::Horizon { k }));
                }
                for (name, s) in schemes {
                    let c = expected_guidance_cost(g, start, s, b)?;
                    best = best.min(c);
                    row(&name, c);
                }
                if let Some(o) = &oracle {
                    let c = o.expected_cost(start);
                    row("oracle", c);
                    cells += 1;
                    oracle_wins += (c <= best + 1e-9) as usize;
                }
            }
        }
    }
    sink.file("costs.csv", csv);
    sink.stat("graphs", graphs.len());
    sink.stat("oracle_cells", cells);
    sink.stat("oracle_not_worse", oracle_wins);
    Ok(())
}

fn run_aircomp(p: &AircompParams, seed: u64, sink: &mut Sink) -> Result<()> {
    let root = RngStream::new(seed, "aircomp");
    let scale = p.scale.unwrap_or(1.0 / p.devices as f64);
    let mac = GaussianMac::unit(p.devices, p.noise_var);
    let np = p.p_values.len();
    let mut err_sum = vec![0.0; np];
    let mut var_sum = vec![0.0; np];
    let mut batches_csv = String::from("batch,p,approx_error,output_variance\n");
    let mut avg_err: f64 = 0.0;
    for b in 0..p.batches {
        let batch = FeatureBatch::uniform(p.devices, p.dim, scale, &mut root.child(&format!("batch/{b}")))?;
        let noiseless = GaussianMac::unit(p.devices, 0.0);
        let avg = air_pool(&batch, &PoolingConfig::average(), &noiseless, &mut root.child("unused"))?;
        for (j, &y) in avg.iter().enumerate() {
            let mean = batch.rows().iter().map(|r| r[j]).sum::<f64>() / p.devices as f64;
            avg_err = avg_err.max((y - mean).abs());
        }
        for (i, &pv) in p.p_values.iter().enumerate() {
            let err = max_approx_error(&batch, pv);
            // the same noise substream for every p keeps the draws paired
            let mut noise = root.child(&format!("noise/{b}"));
            let cfg = PoolingConfig::max_approx(pv);
            let mut sum = vec![0.0; p.dim];
            let mut sq = vec![0.0; p.dim];
            for _ in 0..p.draws {
                let y = air_pool(&batch, &cfg, &mac, &mut noise)?;
                for j in 0..p.dim {
                    sum[j] += y[j];
                    sq[j] += y[j] * y[j];
                }
            }
            let n = p.draws as f64;
            let var = (0..p.dim).map(|j| sq[j] / n - (sum[j] / n).powi(2)).sum::<f64>() / p.dim as f64;
            err_sum[i] += err;
            var_sum[i] += var;
            let _ = writeln!(batches_csv, "{b},{pv},{err},{var}");
        }
    }
    let mut csv = String::from("p,mean_approx_error,mean_output_variance\n");
    let nb = p.batches as f64;
    for (i, &pv) in p.p_values.iter().enumerate() {
        let _ = writeln!(csv, "{pv},{},{}", err_sum[i] / nb, var_sum[i] / nb);
    }
    sink.file("pooling.csv", csv);
    sink.file("pooling_batches.csv", batches_csv);
    sink.stat("noiseless_average_max_error", avg_err);
    Ok(())
}

fn run_feel(p: &FeelParams, seed: u64, sink: &mut Sink) -> Result<()> {
    let root = RngStream::new(seed, "feel");
    let task = LogisticTask::generate(&p.task, &mut root.child("task"))?;
    let mut csv = String::from("round,scheme,loss,accuracy\n");
    let curves: Vec<_> = p
        .schemes
        .par_iter()
        .enumerate()
        .map(|(i, s)| train_feel(&task, s, &p.train, &mut root.child(&format!("scheme/{i}"))))
        .collect::<Result<_>>()?;
    let mut all = Vec::new();
    if p.centralized {
        all.push(train_centralized(&task, &p.train));
    }
    all.extend(curves);
    for (i, c) in all.iter().enumerate() {
        c.append_rows(&mut csv);
        let last = c.points.last().expect("round zero is always recorded");
        let label = if all.iter().filter(|o| o.scheme == c.scheme).count() > 1 {
            format!("{}_{i}", c.scheme)
        } else {
            c.scheme.clone()
        };
        sink.stat(&format!("{label}_final_loss"), last.loss);
        sink.stat(&format!("{label}_final_accuracy"), last.accuracy);
    }
    sink.file("curves.csv", csv);
    Ok(())
}

fn run_feedback(p: &SweepConfig, seed: u64, sink: &mut Sink) -> Result<()> {
    let cfg = SweepConfig { seed, ..p.clone() };
    let rows = sweep(&cfg)?;
    sink.file("sweep.csv", sweep_csv(&rows));
    if let Some(&k) = cfg.k_values.iter().max() {
        for r in rows.iter().filter(|r| r.k == k) {
            sink.stat(&format!("B_{}_at_K{k}", r.scheme), r.b_bits);
            if let Some(fa) = r.fa_rate {
                sink.stat(&format!("fa_rate_{}_at_K{k}", r.scheme), fa);
            }
        }
    }
    Ok(())
}

fn run_edge_batch(p: &EdgeBatchParams, seed: u64, sink: &mut Sink) -> Result<()> {
    let cfg = EdgeConfig { seed, ..p.system.clone() };
    if !p.sweep_b_max.is_empty() {
        let points = sweep_batch_size(&cfg, &p.sweep_b_max)?;
        let mut csv = String::from("b_max,throughput,goodput,mean_latency,p95_latency,mean_batch_size,unstable\n");
        for pt in &points {
            let s = &pt.stats;
            let _ = writeln!(
                csv,
                "{},{},{},{},{},{},{}",
                pt.b_max, s.throughput, s.goodput, s.mean_latency, s.p95_latency, s.mean_batch_size, s.unstable as u8
            );
        }
        sink.file("sweep.csv", csv);
        if let Some(best) = points
            .iter()
            .filter(|p| !p.stats.unstable)
            .max_by(|a, b| a.stats.goodput.total_cmp(&b.stats.goodput))
        {
            sink.stat("best_b_max", best.b_max);
            sink.stat("best_goodput", best.stats.goodput);
        }
    }
    let res = simulate(&cfg)?;
    sink.file("tasks.csv", res.tasks_csv());
    let tb = res.timebase;
    let mut csv = String::from("batch,tasks,ready,start,end\n");
    for b in &res.batches {
        let _ = writeln!(
            csv,
            "{},{},{},{},{}",
            b.id,
            b.tasks.len(),
            tb.seconds_of(b.ready),
            tb.seconds_of(b.start),
            tb.seconds_of(b.end)
        );
    }
    sink.file("batches.csv", csv);
    let s = &res.stats;
    sink.stat("tasks", s.tasks);
    sink.stat("completed", s.completed);
    sink.stat("throughput", s.throughput);
    sink.stat("goodput", s.goodput);
    sink.stat("mean_latency", s.mean_latency);
    sink.stat("p95_latency", s.p95_latency);
    sink.stat("mean_batch_size", s.mean_batch_size);
    sink.stat("unstable", s.unstable);
    if s.unstable {
        return Err(Error::Unstable {
            queue: res.tasks.len() - s.completed,
        });
    }
    Ok(())
}

fn stamp(hash: &str, seed: u64) -> String {
    format!("# config_hash={hash},seed={seed}\n")
}

impl RunOutput {
    pub fn failed(&self) -> bool {
        self.replications.iter().any(|r| r.failure.is_some())
    }

    /// `summary.csv` with one row per statistic and replication.
    pub fn summary_csv(&self) -> String {
        let mut out = stamp(&self.config_hash, self.seed);
        out.push_str("replication,seed,key,value\n");
        for r in &self.replications {
            let _ = writeln!(out, "{},{},status,{}", r.index, r.seed, if r.failure.is_some() { "failed" } else { "ok" });
            for (k, v) in &r.summary {
                let _ = writeln!(out, "{},{},{k},{v}", r.index, r.seed);
            }
        }
        out
    }

    /// Relative path of a replication's file; replications beyond a single
    /// one get their own `rep_<r>` directory.
    pub fn file_path(&self, r: &ReplicationOutput, file: &CsvFile) -> PathBuf {
        if self.replications.len() > 1 {
            PathBuf::from(format!("rep_{}", r.index)).join(&file.name)
        } else {
            PathBuf::from(&file.name)
        }
    }

    /// Writes all files under `dir`, then the summary, then the failure
    /// marker if any replication failed. A stale marker is removed first.
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(dir)?;
        let marker = dir.join(FAILURE_MARKER);
        if marker.exists() {
            fs::remove_file(&marker)?;
        }
        let mut written = Vec::new();
        for r in &self.replications {
            for f in &r.files {
                let path = dir.join(self.file_path(r, f));
                if let Some(parent) = path.parent() {
                    fs::create_dir_all(parent)?;
                }
                fs::write(&path, stamp(&self.config_hash, r.seed) + &f.body)?;
                written.push(path);
            }
        }
        let summary = dir.join("summary.csv");
        fs::write(&summary, self.summary_csv())?;
        written.push(summary);
        if self.failed() {
            let mut text = stamp(&self.config_hash, self.seed);
            for r in &self.replications {
                if let Some(msg) = &r.failure {
                    let _ = writeln!(text, "replication {} (seed {}): {msg}", r.index, r.seed);
                }
            }
            fs::write(&marker, text)?;
            written.push(marker);
        }
        Ok(written)
    }
}

/// Output directory: the explicit flag, then the configuration's `out`,
/// then the environment default, then `goalsim-out`.
pub fn output_dir(flag: Option<&Path>, cfg: &ExperimentConfig, env: Option<&str>) -> PathBuf {
    flag.map(Path::to_path_buf)
        .or_else(|| cfg.out.clone())
        .or_else(|| env.filter(|s| !s.is_empty()).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("goalsim-out"))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CatalogEntry {
    pub kind: &'static str,
    pub block: &'static str,
    pub description: &'static str,
    pub outputs: Vec<&'static str>,
    /// Complete default configuration in TOML.
    pub default_config: String,
}

/// Every experiment kind with its documented default configuration.
pub fn catalog() -> Vec<CatalogEntry> {
    ExperimentKind::ALL
        .into_iter()
        .map(|k| CatalogEntry {
            kind: k.name(),
            block: k.block(),
            description: k.description(),
            outputs: k.outputs().to_vec(),
            default_config: ExperimentConfig::for_kind(k).to_toml(),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn load(text: &str, overrides: &[&str]) -> Result<ExperimentConfig> {
        let o: Vec<String> = overrides.iter().map(|s| s.to_string()).collect();
        ExperimentConfig::load(Some(text), None, &o)
    }

    #[test]
    fn every_default_config_validates_and_round_trips() {
        for k in ExperimentKind::ALL {
            let cfg = ExperimentConfig::for_kind(k);
            cfg.validate().unwrap();
            let back = ExperimentConfig::load(Some(&cfg.to_toml()), None, &[]).unwrap();
            assert_eq!(back, cfg, "{k}");
        }
    }

    #[test]
    fn kind_names_round_trip() {
        for k in ExperimentKind::ALL {
            assert_eq!(ExperimentKind::from_name(k.name()), Some(k));
        }
        assert_eq!(ExperimentKind::from_name("nope"), None);
    }

    #[test]
    fn overrides_reach_nested_fields() {
        let cfg = load("kind = \"feel\"", &["feel.train.rounds=7", "feel.task.dim=10"]).unwrap();
        let f = cfg.feel.unwrap();
        assert_eq!(f.train.rounds, 7);
        assert_eq!(f.task.dim, 10);
    }

    #[test]
    fn override_values_use_toml_syntax() {
        let mut t = toml::Table::new();
        apply_override(&mut t, "a.b=[1, 2]").unwrap();
        apply_override(&mut t, "a.c=word").unwrap();
        apply_override(&mut t, "d=1e-2").unwrap();
        assert_eq!(t["a"]["b"].as_array().unwrap().len(), 2);
        assert_eq!(t["a"]["c"].as_str(), Some("word"));
        assert_eq!(t["d"].as_float(), Some(1e-2));
        assert!(apply_override(&mut t, "novalue").is_err());
        assert!(apply_override(&mut t, "a..b=1").is_err());
        assert!(apply_override(&mut t, "d.x=1").is_err());
    }

    #[test]
    fn missing_field_is_named_with_its_line() {
        let text = "kind = \"tracking\"\n\n[tracking]\nepoch = 1.0\nduration = 10.0\n";
        let e = load(text, &[]).unwrap_err().to_string();
        assert!(e.contains("missing field `components`"), "{e}");
        assert!(e.contains("line 3"), "{e}");
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let e = load("kind = \"feedback\"\nsed = 3\n", &[]).unwrap_err().to_string();
        assert!(e.contains("sed"), "{e}");
        assert!(e.contains("line 2"), "{e}");
    }

    #[test]
    fn module_preconditions_are_checked_before_running() {
        let e = load("kind = \"feedback\"", &["feedback.k_values=[0]"]).unwrap_err().to_string();
        assert!(e.contains("k_values"), "{e}");
        let e = load("kind = \"aircomp\"", &["aircomp.p_values=[0.5]"]).unwrap_err().to_string();
        assert!(e.contains("`p`"), "{e}");
        let e = load("kind = \"feel\"\n[feedback]\nk_values = [1]\n", &[]).unwrap_err().to_string();
        assert!(e.contains("feedback"), "{e}");
    }

    #[test]
    fn kinds_from_file_and_flag_must_agree() {
        let o: Vec<String> = Vec::new();
        assert!(ExperimentConfig::load(Some("kind = \"feel\""), Some(ExperimentKind::Feedback), &o).is_err());
        let cfg = ExperimentConfig::load(Some("seed = 3"), Some(ExperimentKind::Feedback), &o).unwrap();
        assert_eq!(cfg.kind, ExperimentKind::Feedback);
        assert_eq!(cfg.feedback.unwrap().seed, 3);
        assert!(ExperimentConfig::load(None, None, &o).is_err());
    }

    #[test]
    fn hash_ignores_seed_and_output_but_not_parameters() {
        let a = load("kind = \"feedback\"\nseed = 1\n", &[]).unwrap();
        let b = load("kind = \"feedback\"\nseed = 2\nout = \"x\"\n", &[]).unwrap();
        let c = load("kind = \"feedback\"\nseed = 1\n", &["feedback.sets=2"]).unwrap();
        assert_eq!(a.config_hash(), b.config_hash());
        assert_ne!(a.config_hash(), c.config_hash());
        assert_eq!(a.config_hash().len(), 64);
    }

    #[test]
    fn output_dir_prefers_flag_then_config_then_env() {
        let mut cfg = ExperimentConfig::for_kind(ExperimentKind::Feedback);
        assert_eq!(output_dir(None, &cfg, None), PathBuf::from("goalsim-out"));
        assert_eq!(output_dir(None, &cfg, Some("e")), PathBuf::from("e"));
        cfg.out = Some("c".into());
        assert_eq!(output_dir(None, &cfg, Some("e")), PathBuf::from("c"));
        assert_eq!(output_dir(Some(Path::new("f")), &cfg, Some("e")), PathBuf::from("f"));
    }

    #[test]
    fn replications_get_consecutive_seeds_and_own_directories() {
        let cfg = load(
            "kind = \"feedback\"\nseed = 5\nreplications = 2\n",
            &["feedback.k_values=[10, 20]", "feedback.sets=1", "feedback.probes_per_set=100"],
        )
        .unwrap();
        let out = execute(&cfg);
        assert_eq!(out.replications.iter().map(|r| r.seed).collect::<Vec<_>>(), vec![5, 6]);
        let r = &out.replications[1];
        assert_eq!(out.file_path(r, &r.files[0]), PathBuf::from("rep_1/sweep.csv"));
    }

    #[test]
    fn catalog_lists_seven_kinds_with_parseable_defaults() {
        let cat = catalog();
        assert_eq!(cat.len(), 7);
        for e in &cat {
            let cfg = ExperimentConfig::load(Some(&e.default_config), None, &[]).unwrap();
            assert_eq!(cfg.kind.name(), e.kind);
            assert!(e.default_config.contains(&format!("[{}", e.block)));
        }
        assert_eq!(cat, catalog());
    }
}
