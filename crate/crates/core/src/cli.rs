//! Command-line orchestration: config handling, pipeline stages, manifests and subcommands.

use crate::classifier_head::{evaluate, train_ce, HeadConfig, LinearHead, Metrics};
use crate::contrastive::LossKind;
use crate::encoder::{train_encoder, Activation, MlpEncoder, TrainHyper, TrainingHistory};
use crate::error::{Error, Result};
use crate::generalization_lab::{check_theorem3, AugmentedDataset, BoundConfig, BoundReport, LipschitzSource};
use crate::numerics::{Matrix, RNG_ALGORITHM};
use crate::pu_data::{gen_gmm, sample_pu_case_control, sample_pu_single_dataset, GmmSpec, Observed, PuDataset, PuSetting, SupervisedDataset};
use crate::pupl::{kmeanspp, pupl, PuplConfig, PuplResult};
use crate::suites::{run_suite, Suite, SuiteOptions, SuiteReport};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");
/// Environment variable capping the worker pool size.
pub const WORKERS_ENV: &str = "PUCL_WORKERS";

const TEST_SEED_OFFSET: u64 = 0x5EED_7E57;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub d: usize,
    pub mean_pos: Vec<f64>,
    pub mean_neg: Vec<f64>,
    pub sigma: f64,
    /// Size of the PU training set.
    pub n: usize,
    pub pi_p: f64,
    /// Ratio of labeled to unlabeled rows.
    pub gamma: f64,
    #[serde(default = "default_setting")]
    pub setting: PuSetting,
    /// Size of the held-out test set; defaults to `n`.
    #[serde(default)]
    pub test_n: Option<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub extra_pos_means: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub extra_neg_means: Vec<Vec<f64>>,
}

fn default_setting() -> PuSetting {
    PuSetting::CaseControl
}

impl DataConfig {
    fn gmm(&self, n: usize, seed: u64) -> GmmSpec {
        GmmSpec {
            d: self.d,
            mean_pos: self.mean_pos.clone(),
            mean_neg: self.mean_neg.clone(),
            sigma: self.sigma,
            n,
            pi_p: self.pi_p,
            seed,
            extra_pos_means: self.extra_pos_means.clone(),
            extra_neg_means: self.extra_neg_means.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    pub hidden: Vec<usize>,
    pub out_dim: usize,
    pub activation: Activation,
    pub normalize: bool,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self { hidden: vec![32], out_dim: 8, activation: Activation::Tanh, normalize: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// `sscl`, `scl_pu`, `pucl`, `mcl:<lambda>` or `dcl:<lambda>`.
    pub loss: String,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub tau: f64,
    pub aug_sigma: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let h = TrainHyper::default();
        Self { loss: "pucl".into(), lr: h.lr, epochs: h.epochs, batch_size: h.batch_size, tau: h.tau, aug_sigma: h.aug_sigma }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PuplSection {
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for PuplSection {
    fn default() -> Self {
        let c = PuplConfig::default();
        Self { max_iter: c.max_iter, tol: c.tol }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HeadSection {
    pub lr: f64,
    pub epochs: usize,
    pub l2: f64,
}

impl Default for HeadSection {
    fn default() -> Self {
        let c = HeadConfig::default();
        Self { lr: c.lr, epochs: c.epochs, l2: c.l2 }
    }
}

/// Optional bound evaluation on a slice of the test set after the pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BoundSection {
    pub enabled: bool,
    pub samples: usize,
    pub n_aug: usize,
    pub epsilon: f64,
    pub transform_lipschitz: f64,
}

impl Default for BoundSection {
    fn default() -> Self {
        Self { enabled: false, samples: 60, n_aug: 4, epsilon: 0.1, transform_lipschitz: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    pub data: DataConfig,
    #[serde(default)]
    pub encoder: EncoderConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub pupl: PuplSection,
    #[serde(default)]
    pub head: HeadSection,
    #[serde(default)]
    pub bound: BoundSection,
}

impl RunConfig {
    /// The well-separated two-Gaussian preset: means 4 sigma apart, balanced classes, 5% labeled ratio.
    /// Augmentation noise is wide so each class collapses to a tight cluster.
    pub fn gmm_preset(seed: u64) -> Self {
        Self {
            seed,
            data: DataConfig {
                d: 2,
                mean_pos: vec![2.0, 0.0],
                mean_neg: vec![-2.0, 0.0],
                sigma: 1.0,
                n: 2000,
                pi_p: 0.5,
                gamma: 0.05,
                setting: PuSetting::CaseControl,
                test_n: None,
                extra_pos_means: vec![],
                extra_neg_means: vec![],
            },
            encoder: EncoderConfig::default(),
            train: TrainConfig { tau: 0.2, aug_sigma: 2.0, ..TrainConfig::default() },
            pupl: PuplSection::default(),
            head: HeadSection::default(),
            bound: BoundSection::default(),
        }
    }

    /// Overlapping two-class mixture (Bayes accuracy about 0.933) for the loss ablation.
    pub fn hard_preset(seed: u64) -> Self {
        let mut cfg = Self::gmm_preset(seed);
        cfg.data.mean_pos = vec![1.5, 0.0];
        cfg.data.mean_neg = vec![-1.5, 0.0];
        cfg
    }

    pub fn loss_kind(&self) -> Result<LossKind> {
        LossKind::parse(&self.train.loss)
    }

    pub fn widths(&self) -> Vec<usize> {
        std::iter::once(self.data.d).chain(self.encoder.hidden.iter().copied()).chain([self.encoder.out_dim]).collect()
    }

    pub fn train_hyper(&self) -> TrainHyper {
        let t = &self.train;
        TrainHyper { lr: t.lr, epochs: t.epochs, batch_size: t.batch_size, tau: t.tau, aug_sigma: t.aug_sigma, seed: self.seed }
    }

    pub fn pupl_config(&self) -> PuplConfig {
        PuplConfig { max_iter: self.pupl.max_iter, tol: self.pupl.tol, seed: self.seed }
    }

    pub fn head_config(&self) -> HeadConfig {
        HeadConfig { lr: self.head.lr, epochs: self.head.epochs, l2: self.head.l2, seed: self.seed }
    }

    pub fn seeds(&self) -> BTreeMap<String, u64> {
        let s = self.seed;
        [
            ("train_data", s),
            ("test_data", s.wrapping_add(TEST_SEED_OFFSET)),
            ("pu_sampling", s),
            ("encoder_init", s),
            ("encoder_training", s),
            ("pupl", s),
            ("head", s),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }

    /// Checks everything that can be checked before any work starts.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        self.data.gmm(self.data.n, self.seed).validate().map_err(|e| Error::Config(format!("data: {e}")))?;
        if !(self.data.gamma >= 0.0) || !self.data.gamma.is_finite() {
            return bad(format!("data.gamma: must be a finite non-negative number, got {}", self.data.gamma));
        }
        if self.data.test_n == Some(0) {
            return bad("data.test_n: must be at least 1".into());
        }
        if self.encoder.out_dim == 0 || self.encoder.hidden.contains(&0) {
            return bad("encoder: layer widths must be positive".into());
        }
        let kind = self.loss_kind().map_err(|e| Error::Config(format!("train.loss: {e}")))?;
        if kind == LossKind::Scl {
            return bad("train.loss: scl needs full labels and cannot train on PU data".into());
        }
        if let LossKind::Mcl { lambda } | LossKind::Dcl { lambda } = kind {
            if !(0.0..=1.0).contains(&lambda) || (matches!(kind, LossKind::Dcl { .. }) && lambda >= 1.0) {
                return bad(format!("train.loss: lambda {lambda} out of range"));
            }
        }
        let t = &self.train;
        if !(t.lr > 0.0) || t.batch_size == 0 || !(t.tau > 0.0) || !(t.aug_sigma >= 0.0) {
            return bad("train: lr and tau must be positive, batch_size at least 1, aug_sigma non-negative".into());
        }
        if !(self.head.lr > 0.0) || !(self.head.l2 >= 0.0) {
            return bad("head: lr must be positive and l2 non-negative".into());
        }
        if self.bound.enabled && (self.bound.samples < 2 || self.bound.n_aug == 0 || !(self.bound.epsilon > 0.0)) {
            return bad("bound: samples >= 2, n_aug >= 1 and epsilon > 0 required".into());
        }
        Ok(())
    }
}

fn set_path(root: &mut toml::Table, key: &str, value: toml::Value) -> Result<()> {
    let parts: Vec<&str> = key.split('.').collect();
    let (last, head) = parts.split_last().ok_or_else(|| Error::Config("empty --set key".into()))?;
    let mut table = root;
    for p in head {
        let entry = table.entry(p.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry.as_table_mut().ok_or_else(|| Error::Config(format!("--set {key}: {p} is not a table")))?;
    }
    table.insert(last.to_string(), value);
    Ok(())
}

/// Parses `key.path=value`; the value is read as a TOML literal, falling back to a string.
pub fn apply_override(root: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("--set expects key=value, got {assignment:?}")))?;
    let value = match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    set_path(root, key.trim(), value)
}

/// Deserializes and validates a config table. Errors name the offending key path.
pub fn config_from_table(table: toml::Table) -> Result<RunConfig> {
    let cfg: RunConfig = serde_path_to_error::deserialize(toml::Value::Table(table)).map_err(|e| {
        let path = e.path().to_string();
        Error::Config(format!("{path}: {}", e.into_inner()))
    })?;
    cfg.validate()?;
    Ok(cfg)
}

/// Loads a TOML config, applies `--set` overrides in order, then validates.
/// Precedence: `--set` over the config file over built-in defaults.
pub fn load_config(text: &str, overrides: &[String]) -> Result<RunConfig> {
    let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))?;
    for o in overrides {
        apply_override(&mut table, o)?;
    }
    config_from_table(table)
}

/// Serializes a config back to TOML.
pub fn config_to_toml(cfg: &RunConfig) -> Result<String> {
    toml::to_string(cfg).map_err(|e| Error::Config(e.to_string()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub command: String,
    pub config: RunConfig,
    pub rng_algorithm: String,
    pub seeds: BTreeMap<String, u64>,
    /// File name to hex SHA-256.
    pub artifacts: BTreeMap<String, String>,
    /// Stage name to seconds.
    pub timings: BTreeMap<String, f64>,
}

impl RunManifest {
    pub fn new(command: &str, cfg: &RunConfig) -> Self {
        Self {
            tool_version: TOOL_VERSION.into(),
            command: command.into(),
            config: cfg.clone(),
            rng_algorithm: RNG_ALGORITHM.into(),
            seeds: cfg.seeds(),
            artifacts: BTreeMap::new(),
            timings: BTreeMap::new(),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let m: RunManifest = serde_json::from_str(&text)?;
        m.config.validate()?;
        Ok(m)
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Writes via a temporary sibling file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir)?;
    let name = path.file_name().ok_or_else(|| Error::InvalidArgs(format!("not a file path: {}", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Collects output files and records their hashes.
struct Outputs<'a> {
    dir: PathBuf,
    manifest: &'a mut RunManifest,
}

impl Outputs<'_> {
    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        write_atomic(&self.dir.join(name), bytes)?;
        self.manifest.artifacts.insert(name.into(), sha256_hex(bytes));
        Ok(())
    }

    fn finish(self) -> Result<()> {
        let json = serde_json::to_vec_pretty(&*self.manifest)?;
        write_atomic(&self.dir.join("manifest.json"), &json)
    }
}

fn timed<T>(m: &mut BTreeMap<String, f64>, stage: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
    let t = Instant::now();
    let out = f()?;
    m.insert(stage.into(), t.elapsed().as_secs_f64());
    Ok(out)
}

fn dataset_csv(ds: &PuDataset) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    ds.write_csv(&mut buf)?;
    Ok(buf)
}

fn matrix_csv(m: &Matrix) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    m.write_csv(&mut buf)?;
    Ok(buf)
}

fn labels_csv(labels: &[u8]) -> Result<Vec<u8>> {
    let mut wr = csv::Writer::from_writer(Vec::new());
    wr.write_record(["label"])?;
    for l in labels {
        wr.write_record([l.to_string()])?;
    }
    wr.into_inner().map_err(|e| Error::Io(e.into_error()))
}

pub fn read_labels(path: &Path) -> Result<Vec<u8>> {
    let mut rd = csv::Reader::from_path(path)?;
    rd.records()
        .map(|r| {
            let r = r?;
            match r.get(0).map(str::trim) {
                Some("0") => Ok(0),
                Some("1") => Ok(1),
                other => Err(Error::Parse(format!("label {other:?}"))),
            }
        })
        .collect()
}

fn history_csv(h: &TrainingHistory) -> Result<Vec<u8>> {
    let mut wr = csv::Writer::from_writer(Vec::new());
    wr.write_record(["epoch", "loss", "grad_norm"])?;
    for (e, (l, g)) in h.loss.iter().zip(&h.grad_norm).enumerate() {
        wr.write_record([e.to_string(), crate::numerics::fmt_f64(*l), crate::numerics::fmt_f64(*g)])?;
    }
    wr.into_inner().map_err(|e| Error::Io(e.into_error()))
}

fn to_pu_test(sup: SupervisedDataset) -> PuDataset {
    let n = sup.n();
    PuDataset {
        features: sup.features,
        observed: vec![Observed::U; n],
        truth: Some(sup.truth),
        pi_p: sup.pi_p,
        setting: PuSetting::CaseControl,
    }
}

/// Training PU set and held-out test set (all rows flagged `U`, truth attached).
pub fn generate_data(cfg: &RunConfig) -> Result<(PuDataset, PuDataset)> {
    let d = &cfg.data;
    let gamma = d.gamma;
    let n_u = (d.n as f64 / (1.0 + gamma)).round() as usize;
    let n_p = d.n - n_u;
    let train = match d.setting {
        PuSetting::CaseControl => {
            let pool = gen_gmm(&d.gmm(d.n, cfg.seed))?;
            sample_pu_case_control(&pool, n_p, n_u, cfg.seed)?
        }
        PuSetting::SingleDataset => {
            let pool = gen_gmm(&d.gmm(d.n, cfg.seed))?;
            sample_pu_single_dataset(&pool, n_p, cfg.seed)?
        }
    };
    let test = gen_gmm(&d.gmm(d.test_n.unwrap_or(d.n), cfg.seed.wrapping_add(TEST_SEED_OFFSET)))?;
    Ok((train, to_pu_test(test)))
}

pub fn train_stage(cfg: &RunConfig, train: &PuDataset) -> Result<(MlpEncoder, TrainingHistory)> {
    let mut enc = MlpEncoder::new_random(&cfg.widths(), cfg.encoder.activation, cfg.encoder.normalize, cfg.seed)?;
    let history = train_encoder(&mut enc, train.view(), cfg.loss_kind()?, &cfg.train_hyper())?;
    Ok((enc, history))
}

/// PU-aware pseudo-labeling of the training embeddings. Without labeled rows it falls back
/// to k-means++, whose cluster roles are arbitrary.
pub fn pseudo_label_stage(cfg: &RunConfig, enc: &MlpEncoder, train: &PuDataset) -> Result<(Matrix, PuplResult)> {
    let z = enc.encode(&train.features)?;
    let labeled = train.labeled_mask();
    let res = if labeled.iter().any(|&l| l) {
        pupl(&z, &labeled, &cfg.pupl_config())?
    } else {
        log::warn!("no labeled positives; falling back to k-means++ with arbitrary cluster roles");
        kmeanspp(&z, &cfg.pupl_config())?
    };
    Ok((z, res))
}

pub fn head_stage(cfg: &RunConfig, z: &Matrix, labels: &[u8]) -> Result<LinearHead> {
    Ok(train_ce(z, labels, &cfg.head_config())?.0)
}

pub fn evaluate_stage(enc: &MlpEncoder, head: &LinearHead, test: &PuDataset) -> Result<Metrics> {
    let truth = test.truth.as_ref().ok_or(Error::MissingTruth)?;
    let pred = head.predict(&enc.encode(&test.features)?)?;
    evaluate(&pred, truth)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineMetrics {
    #[serde(flatten)]
    pub test: Metrics,
    pub n_test: usize,
    /// Agreement of pseudo-labels with hidden truth on the training rows.
    pub pseudo_label_accuracy: f64,
    pub final_train_loss: f64,
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub train: PuDataset,
    pub test: PuDataset,
    pub encoder: MlpEncoder,
    pub history: TrainingHistory,
    pub embeddings: Matrix,
    pub pseudo: PuplResult,
    pub head: LinearHead,
    pub metrics: PipelineMetrics,
    pub bound: Option<BoundReport>,
    pub timings: BTreeMap<String, f64>,
}

pub fn run_pipeline(cfg: &RunConfig) -> Result<PipelineOutput> {
    cfg.validate()?;
    let mut timings = BTreeMap::new();
    let (train, test) = timed(&mut timings, "gen_data", || generate_data(cfg))?;
    let (encoder, history) = timed(&mut timings, "train", || train_stage(cfg, &train))?;
    let (embeddings, pseudo) = timed(&mut timings, "pseudo_label", || pseudo_label_stage(cfg, &encoder, &train))?;
    let head = timed(&mut timings, "train_head", || head_stage(cfg, &embeddings, &pseudo.pseudo_labels))?;
    let test_metrics = timed(&mut timings, "eval", || evaluate_stage(&encoder, &head, &test))?;
    let pseudo_label_accuracy = match &train.truth {
        Some(t) => evaluate(&pseudo.pseudo_labels, t)?.accuracy,
        None => f64::NAN,
    };
    let bound = if cfg.bound.enabled { Some(timed(&mut timings, "bound", || bound_stage(cfg, &encoder, &test))?) } else { None };
    let metrics = PipelineMetrics {
        test: test_metrics,
        n_test: test.n(),
        pseudo_label_accuracy,
        final_train_loss: history.loss.last().copied().unwrap_or(f64::NAN),
    };
    Ok(PipelineOutput { train, test, encoder, history, embeddings, pseudo, head, metrics, bound, timings })
}

/// Error-bound report for the trained encoder on the first `bound.samples` test rows.
pub fn bound_stage(cfg: &RunConfig, enc: &MlpEncoder, test: &PuDataset) -> Result<BoundReport> {
    let truth = test.truth.as_ref().ok_or(Error::MissingTruth)?;
    let k = cfg.bound.samples.min(test.n());
    let idx: Vec<usize> = (0..k).collect();
    let sup = SupervisedDataset { features: test.features.select_rows(&idx), truth: truth[..k].to_vec(), pi_p: test.pi_p };
    let ds = AugmentedDataset::gaussian(&sup, cfg.bound.n_aug, cfg.train.aug_sigma, cfg.seed)?;
    let z = enc.encode(&sup.features)?;
    let labeled: Vec<bool> = sup.truth.iter().enumerate().map(|(i, &t)| t && i % 2 == 0).collect();
    let res = if labeled.iter().any(|&l| l) { pupl(&z, &labeled, &cfg.pupl_config())? } else { kmeanspp(&z, &cfg.pupl_config())? };
    let bc = BoundConfig {
        epsilon: cfg.bound.epsilon,
        lipschitz: LipschitzSource::Support,
        delta: None,
        transform_lipschitz: cfg.bound.transform_lipschitz,
        discrete: None,
    };
    check_theorem3(enc, &ds, &res.clustering, &bc)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum SweepAxis {
    Gamma,
    PiP,
    LossKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub axis_value: String,
    pub loss_kind: String,
    pub accuracy: f64,
    pub seed: u64,
}

/// One pipeline run per (value, loss, seed), run in parallel and returned in input order.
pub fn run_sweep(base: &RunConfig, axis: SweepAxis, values: &[String], losses: &[String], seeds: &[u64]) -> Result<Vec<SweepRow>> {
    if values.is_empty() {
        return Err(Error::Config("sweep needs at least one value".into()));
    }
    let mut jobs = Vec::new();
    for v in values {
        let loss_list: Vec<String> = match axis {
            SweepAxis::LossKind => vec![v.clone()],
            _ => losses.to_vec(),
        };
        for l in &loss_list {
            for &s in seeds {
                let mut cfg = base.clone();
                cfg.seed = s;
                cfg.train.loss = l.clone();
                match axis {
                    SweepAxis::Gamma => cfg.data.gamma = parse_value(v)?,
                    SweepAxis::PiP => cfg.data.pi_p = parse_value(v)?,
                    SweepAxis::LossKind => {}
                }
                cfg.validate()?;
                jobs.push((v.clone(), cfg));
            }
        }
    }
    jobs.into_par_iter()
        .map(|(v, cfg)| {
            let out = run_pipeline(&cfg)?;
            Ok(SweepRow { axis_value: v, loss_kind: cfg.loss_kind()?.name(), accuracy: out.metrics.test.accuracy, seed: cfg.seed })
        })
        .collect()
}

fn parse_value(v: &str) -> Result<f64> {
    v.trim().parse::<f64>().map_err(|e| Error::Config(format!("sweep value {v:?}: {e}")))
}

pub fn sweep_csv(rows: &[SweepRow]) -> Result<Vec<u8>> {
    let mut wr = csv::Writer::from_writer(Vec::new());
    for r in rows {
        wr.serialize(r)?;
    }
    wr.into_inner().map_err(|e| Error::Io(e.into_error()))
}

#[derive(Debug, Parser)]
#[command(name = "pucl", version, about = "Contrastive positive-unlabeled learning toolkit")]
pub struct Cli {
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct ConfigArgs {
    /// TOML run configuration.
    #[arg(short, long, conflicts_with = "manifest")]
    pub config: Option<PathBuf>,
    /// Reuse the configuration recorded in a previous run's manifest.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Override a config key, e.g. `--set train.epochs=50`. Applied after the file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

impl ConfigArgs {
    pub fn resolve(&self) -> Result<RunConfig> {
        match (&self.config, &self.manifest) {
            (Some(p), None) => {
                let text = std::fs::read_to_string(p).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
                load_config(&text, &self.overrides)
            }
            (None, Some(m)) => {
                let man = RunManifest::load(m).map_err(|e| Error::Config(format!("{}: {e}", m.display())))?;
                let mut table = toml::Table::try_from(&man.config).map_err(|e| Error::Config(e.to_string()))?;
                for o in &self.overrides {
                    apply_override(&mut table, o)?;
                }
                config_from_table(table)
            }
            _ => Err(Error::Config("one of --config or --manifest is required".into())),
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the PU training set and the held-out test set.
    GenData {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Train the encoder on a PU dataset CSV.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        data: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Pseudo-label the training rows from their embeddings.
    PseudoLabel {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        encoder: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Train the linear head on pseudo-labels.
    TrainHead {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        encoder: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Evaluate encoder and head on a dataset with truth.
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        encoder: PathBuf,
        #[arg(long)]
        head: PathBuf,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Run data generation, training, pseudo-labeling, head training and evaluation.
    Pipeline {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Run the pipeline once per axis value, loss and seed; write long-format CSV.
    Sweep {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, value_enum)]
        axis: SweepAxis,
        /// Comma-separated axis values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
        /// Comma-separated loss kinds; defaults to `train.loss`.
        #[arg(long, value_delimiter = ',')]
        losses: Vec<String>,
        /// Comma-separated seeds; defaults to the config seed.
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
        /// Output CSV; the manifest is written next to it.
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Run a verification suite; exit status 1 when any check fails.
    Verify {
        /// bias, variance, centroid_lemma, pupl_bound, upu, generalization, gradients or all.
        #[arg(long)]
        suite: String,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write the JSON report here instead of stdout.
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
}

fn read_pu(path: &Path, cfg: &RunConfig) -> Result<PuDataset> {
    PuDataset::read_csv(std::fs::File::open(path)?, cfg.data.pi_p, cfg.data.setting)
}

fn read_encoder(path: &Path) -> Result<MlpEncoder> {
    MlpEncoder::from_json(&std::fs::read_to_string(path)?)
}

fn cmd_pipeline(cfg: &RunConfig, out: &Path) -> Result<PipelineOutput> {
    let mut manifest = RunManifest::new("pipeline", cfg);
    let res = run_pipeline(cfg)?;
    manifest.timings = res.timings.clone();
    let mut o = Outputs { dir: out.to_path_buf(), manifest: &mut manifest };
    o.write("train.csv", &dataset_csv(&res.train)?)?;
    o.write("test.csv", &dataset_csv(&res.test)?)?;
    o.write("encoder.json", res.encoder.to_json()?.as_bytes())?;
    o.write("history.csv", &history_csv(&res.history)?)?;
    o.write("embeddings.csv", &matrix_csv(&res.embeddings)?)?;
    o.write("pseudo_labels.csv", &labels_csv(&res.pseudo.pseudo_labels)?)?;
    o.write("head.json", &serde_json::to_vec_pretty(&res.head)?)?;
    if let Some(b) = &res.bound {
        o.write("bound_report.json", &serde_json::to_vec_pretty(b)?)?;
    }
    o.write("metrics.json", &serde_json::to_vec_pretty(&res.metrics)?)?;
    o.finish()?;
    Ok(res)
}

fn verify(suite: &str, trials: Option<usize>, seed: u64) -> Result<Vec<SuiteReport>> {
    let suites: Vec<Suite> = if suite == "all" { Suite::ALL.to_vec() } else { vec![Suite::parse(suite).map_err(|e| Error::Config(e.to_string()))?] };
    let opts = SuiteOptions { seed, trials };
    suites.into_iter().map(|s| run_suite(s, &opts)).collect()
}

fn execute(cmd: Command) -> Result<i32> {
    match cmd {
        Command::GenData { cfg, out } => {
            let cfg = cfg.resolve()?;
            let mut manifest = RunManifest::new("gen-data", &cfg);
            let (train, test) = timed(&mut manifest.timings, "gen_data", || generate_data(&cfg))?;
            let mut o = Outputs { dir: out, manifest: &mut manifest };
            o.write("train.csv", &dataset_csv(&train)?)?;
            o.write("test.csv", &dataset_csv(&test)?)?;
            o.finish()?;
        }
        Command::Train { cfg, data, out } => {
            let cfg = cfg.resolve()?;
            let mut manifest = RunManifest::new("train", &cfg);
            let train = read_pu(&data, &cfg)?;
            let (enc, hist) = timed(&mut manifest.timings, "train", || train_stage(&cfg, &train))?;
            let mut o = Outputs { dir: out, manifest: &mut manifest };
            o.write("encoder.json", enc.to_json()?.as_bytes())?;
            o.write("history.csv", &history_csv(&hist)?)?;
            o.write("embeddings.csv", &matrix_csv(&enc.encode(&train.features)?)?)?;
            o.finish()?;
        }
        Command::PseudoLabel { cfg, data, encoder, out } => {
            let cfg = cfg.resolve()?;
            let mut manifest = RunManifest::new("pseudo-label", &cfg);
            let train = read_pu(&data, &cfg)?;
            let enc = read_encoder(&encoder)?;
            let (_, res) = timed(&mut manifest.timings, "pseudo_label", || pseudo_label_stage(&cfg, &enc, &train))?;
            let mut o = Outputs { dir: out, manifest: &mut manifest };
            o.write("pseudo_labels.csv", &labels_csv(&res.pseudo_labels)?)?;
            o.write("clustering.json", &serde_json::to_vec_pretty(&res.clustering)?)?;
            o.finish()?;
        }
        Command::TrainHead { cfg, data, encoder, labels, out } => {
            let cfg = cfg.resolve()?;
            let mut manifest = RunManifest::new("train-head", &cfg);
            let train = read_pu(&data, &cfg)?;
            let enc = read_encoder(&encoder)?;
            let labels = read_labels(&labels)?;
            let z = enc.encode(&train.features)?;
            let head = timed(&mut manifest.timings, "train_head", || head_stage(&cfg, &z, &labels))?;
            let mut o = Outputs { dir: out, manifest: &mut manifest };
            o.write("head.json", &serde_json::to_vec_pretty(&head)?)?;
            o.finish()?;
        }
        Command::Eval { data, encoder, head, out } => {
            let test = PuDataset::read_csv(std::fs::File::open(&data)?, 0.5, PuSetting::CaseControl)?;
            let enc = read_encoder(&encoder)?;
            let head: LinearHead = serde_json::from_str(&std::fs::read_to_string(&head)?)?;
            let metrics = evaluate_stage(&enc, &head, &test)?;
            let json = serde_json::to_vec_pretty(&metrics)?;
            match out {
                Some(p) => write_atomic(&p, &json)?,
                None => println!("{}", String::from_utf8_lossy(&json)),
            }
        }
        Command::Pipeline { cfg, out } => {
            let cfg = cfg.resolve()?;
            let res = cmd_pipeline(&cfg, &out)?;
            println!("{}", serde_json::to_string(&res.metrics)?);
        }
        Command::Sweep { cfg, axis, values, losses, seeds, out } => {
            let cfg = cfg.resolve()?;
            let losses = if losses.is_empty() { vec![cfg.train.loss.clone()] } else { losses };
            for l in &losses {
                LossKind::parse(l).map_err(|e| Error::Config(format!("--losses: {e}")))?;
            }
            let seeds = if seeds.is_empty() { vec![cfg.seed] } else { seeds };
            let mut manifest = RunManifest::new("sweep", &cfg);
            let rows = timed(&mut manifest.timings, "sweep", || run_sweep(&cfg, axis, &values, &losses, &seeds))?;
            let csv = sweep_csv(&rows)?;
            write_atomic(&out, &csv)?;
            let name = out.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            manifest.artifacts.insert(name, sha256_hex(&csv));
            let mpath = out.with_extension("manifest.json");
            write_atomic(&mpath, &serde_json::to_vec_pretty(&manifest)?)?;
        }
        Command::Verify { suite, trials, seed, out } => {
            let reports = verify(&suite, trials, seed)?;
            let json = serde_json::to_vec_pretty(&reports)?;
            match out {
                Some(p) => write_atomic(&p, &json)?,
                None => println!("{}", String::from_utf8_lossy(&json)),
            }
            for r in &reports {
                for c in &r.checks {
                    eprintln!("{} {}/{}", if c.passed { "PASS" } else { "FAIL" }, r.suite, c.name);
                }
            }
            return Ok(if reports.iter().all(|r| r.passed) { 0 } else { 1 });
        }
    }
    Ok(0)
}

/// Exit status for an error: 2 for configuration problems, 1 otherwise.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => 2,
        _ => 1,
    }
}

fn configure_workers() {
    if let Ok(v) = std::env::var(WORKERS_ENV) {
        match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => {
                if rayon::ThreadPoolBuilder::new().num_threads(n).build_global().is_err() {
                    log::debug!("worker pool already initialized");
                }
            }
            _ => log::warn!("ignoring {WORKERS_ENV}={v:?}"),
        }
    }
}

/// Parses arguments, runs the command and returns the process exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
    configure_workers();
    match execute(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
