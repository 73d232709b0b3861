//! Declarative experiments: load, split, scale, train, select, calibrate,
//! evaluate, detect and quantify uncertainty, then export the results.
//!
//! `report.json` holds only seed-determined content, so reruns with the same
//! configuration reproduce it byte for byte. Wall-clock timings go to
//! `timing.json`.

use crate::classifier::{default_pool, train_pool, ClassifierError, ClassifierSpec, TrainedPool};
use crate::data::{
    blob_centers, held_out_center, inject_anomaly, load_csv, load_te, make_blobs, split_train_valid, AnomalyGenerator,
    DataError, Dataset, LabelMap, Standardizer,
};
use crate::ensemble::{AnomalyThresholds, Branch, EnsembleError, EnsembleModel, DEFAULT_Q_MAX, DEFAULT_Q_MIN};
use crate::evidence::{Frame, Rule};
use crate::metrics::{classification_report, ClassificationReport, MetricsError};
use crate::parallel::Execution;
use crate::selection::{grid_row_name, select_from_pool, selection_grid, Selection, SelectionConfig, SelectionError};
use crate::transform::SensitivityFactor;
use crate::uncertainty::{uq_batch, BatchSampling, ClassifierSource, SeriesSummary, UqConfig, UqError, UqTrace};
use crate::ANOMALY_CODE;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;
use thiserror::Error;

/// Environment variable consulted when neither flag nor config sets a seed.
pub const SEED_ENV: &str = "ECET_SEED";

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("config error: {0}")]
    Config(String),
    #[error("stage `{stage}` failed: {message}")]
    Stage { stage: &'static str, message: String },
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
}

trait StageExt<T> {
    fn stage(self, stage: &'static str) -> Result<T, ExperimentError>;
}

macro_rules! stage_errors {
    ($($t:ty),*) => {$(
        impl<T> StageExt<T> for Result<T, $t> {
            fn stage(self, stage: &'static str) -> Result<T, ExperimentError> {
                self.map_err(|e| ExperimentError::Stage { stage, message: e.to_string() })
            }
        }
    )*};
}
stage_errors!(DataError, ClassifierError, SelectionError, EnsembleError, UqError, MetricsError);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    /// Synthetic blobs; the test set is drawn independently.
    Blobs { n_classes: usize, per_class: usize, test_per_class: usize, n_features: usize, separation: f64 },
    /// Separate training and test CSVs. Test labels unseen in training
    /// become anomalies.
    Csv {
        train: PathBuf,
        test: PathBuf,
        #[serde(default = "default_label_column")]
        label_column: String,
    },
    /// Tennessee Eastman `dNN.dat` / `dNN_te.dat` files.
    Te { dir: PathBuf, faults: Vec<usize> },
}

fn default_label_column() -> String {
    "label".into()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvidenceSettings {
    pub f_sensitivity: u32,
    pub label_rule: Rule,
}

impl Default for EvidenceSettings {
    fn default() -> Self {
        Self { f_sensitivity: crate::transform::DEFAULT_SENSITIVITY_EXPONENT, label_rule: Rule::Dempster }
    }
}

/// Batch UQ parameters; the sampling seed derives from the run seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UqSettings {
    pub enabled: bool,
    pub batch_size: usize,
    pub iterations: usize,
    pub sampling: BatchSampling,
}

impl Default for UqSettings {
    fn default() -> Self {
        let d = UqConfig::default();
        Self { enabled: true, batch_size: d.batch_size, iterations: d.iterations, sampling: d.sampling }
    }
}

/// Where injected anomalies come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InjectSource {
    /// A unit blob at least `min_distance` from every synthetic class mean.
    /// Only valid with blob data.
    HeldOut { min_distance: f64 },
    Blob { center: Vec<f64> },
    Uniform { low: Vec<f64>, high: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InjectSettings {
    /// Injected rows as a fraction of the test rows.
    pub fraction: f64,
    pub source: InjectSource,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnomalySettings {
    pub q_min: f64,
    pub q_max: f64,
    pub inject: Option<InjectSettings>,
}

impl Default for AnomalySettings {
    fn default() -> Self {
        Self { q_min: DEFAULT_Q_MIN, q_max: DEFAULT_Q_MAX, inject: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: Option<u64>,
    pub data: DataSource,
    #[serde(default = "default_split")]
    pub split_ratio: f64,
    #[serde(default = "default_pool")]
    pub pool: Vec<ClassifierSpec>,
    /// Defaults to the performance baseline over the whole pool.
    #[serde(default)]
    pub selection: Option<SelectionConfig>,
    #[serde(default)]
    pub evidence: EvidenceSettings,
    #[serde(default)]
    pub uq: UqSettings,
    #[serde(default)]
    pub anomaly: AnomalySettings,
}

fn default_split() -> f64 {
    0.7
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, ExperimentError> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| ExperimentError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ExperimentError> {
        let text = fs::read_to_string(path).map_err(|e| ExperimentError::Io { path: path.into(), message: e.to_string() })?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        let cfg_err = |m: String| Err(ExperimentError::Config(m));
        if self.pool.len() < 2 {
            return cfg_err(format!("pool needs at least two classifiers, got {}", self.pool.len()));
        }
        for spec in &self.pool {
            spec.params.validate().map_err(|e| ExperimentError::Config(format!("classifier `{}`: {e}", spec.name)))?;
        }
        let sel = self.selection_config();
        sel.validate().map_err(|e| ExperimentError::Config(e.to_string()))?;
        if sel.ensemble_size + usize::from(sel.pc) > self.pool.len() {
            return cfg_err(format!("ensemble_size {} does not fit a pool of {}", sel.ensemble_size, self.pool.len()));
        }
        SensitivityFactor::new(self.evidence.f_sensitivity).map_err(|e| ExperimentError::Config(e.to_string()))?;
        let a = &self.anomaly;
        if !(0.0..=1.0).contains(&a.q_min) || !(0.0..=1.0).contains(&a.q_max) || a.q_min >= a.q_max {
            return cfg_err(format!("quantiles must satisfy 0 <= q_min < q_max <= 1, got ({}, {})", a.q_min, a.q_max));
        }
        if let Some(inj) = &a.inject {
            if !(inj.fraction >= 0.0 && inj.fraction.is_finite()) {
                return cfg_err(format!("inject fraction {} must be non-negative", inj.fraction));
            }
            if matches!(inj.source, InjectSource::HeldOut { .. }) && !matches!(self.data, DataSource::Blobs { .. }) {
                return cfg_err("held_out injection requires blob data".into());
            }
        }
        if !(self.split_ratio > 0.0 && self.split_ratio < 1.0) {
            return cfg_err(format!("split_ratio {} outside (0, 1)", self.split_ratio));
        }
        if self.uq.batch_size == 0 || self.uq.iterations == 0 {
            return cfg_err("uq batch_size and iterations must be positive".into());
        }
        Ok(())
    }

    pub fn selection_config(&self) -> SelectionConfig {
        self.selection.unwrap_or_else(|| SelectionConfig::baseline(self.pool.len()))
    }

    pub fn sensitivity(&self) -> SensitivityFactor {
        SensitivityFactor::new(self.evidence.f_sensitivity).unwrap_or_default()
    }
}

/// Seed precedence: explicit flag, then config, then [`SEED_ENV`], then 0.
pub fn resolve_seed(flag: Option<u64>, config: Option<u64>, env: Option<&str>) -> Result<u64, ExperimentError> {
    if let Some(s) = flag.or(config) {
        return Ok(s);
    }
    match env {
        Some(v) => v.trim().parse().map_err(|_| ExperimentError::Config(format!("{SEED_ENV}=`{v}` is not an integer"))),
        None => Ok(0),
    }
}

// Independent sub-seeds per pipeline stage.
fn derive_seed(seed: u64, stream: u64) -> u64 {
    crate::seeded_rng(seed, stream).random()
}

const STREAM_DEV: u64 = 1;
const STREAM_TEST: u64 = 2;
const STREAM_SPLIT: u64 = 3;
const STREAM_POOL: u64 = 4;
const STREAM_UQ: u64 = 5;
const STREAM_INJECT: u64 = 6;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: String,
    pub seconds: f64,
    /// Percentage of the slowest stage.
    pub relative_percent: f64,
}

#[derive(Debug, Default)]
struct Timer {
    stages: Vec<(String, f64)>,
}

impl Timer {
    fn time<T>(&mut self, stage: &str, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let out = f();
        self.stages.push((stage.to_string(), start.elapsed().as_secs_f64()));
        out
    }

    fn finish(&self) -> Vec<StageTiming> {
        let max = self.stages.iter().map(|s| s.1).fold(0.0, f64::max);
        self.stages
            .iter()
            .map(|(stage, seconds)| StageTiming {
                stage: stage.clone(),
                seconds: *seconds,
                relative_percent: if max > 0.0 { 100.0 * seconds / max } else { 0.0 },
            })
            .collect()
    }
}

/// Loaded, split and standardised data plus the trained pool.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub seed: u64,
    pub config: ExperimentConfig,
    pub label_map: LabelMap,
    pub standardizer: Standardizer,
    pub train: Dataset,
    pub valid: Dataset,
    /// Standardised test data without injected rows.
    pub test: Dataset,
    /// Test data in raw feature units.
    pub raw_test: Dataset,
    pub pool: TrainedPool,
}

impl Prepared {
    pub fn y_train(&self) -> Vec<usize> {
        self.train.dense_labels().expect("training labels are known classes")
    }

    pub fn y_valid(&self) -> Vec<usize> {
        self.valid.dense_labels().expect("validation labels are known classes")
    }

    pub fn frame(&self) -> Frame {
        let labels: Vec<String> = self.label_map.originals().iter().map(|l| format!("F{l}")).collect();
        Frame::new(labels).expect("label map has distinct labels")
    }
}

fn remap(ds: Dataset, to: &LabelMap) -> Dataset {
    let y = ds
        .y
        .iter()
        .map(|&code| {
            ds.label_map
                .decode_code(code)
                .and_then(|orig| to.encode(orig))
                .map_or(ANOMALY_CODE, |c| c as i64)
        })
        .collect();
    Dataset { y, label_map: to.clone(), ..ds }
}

/// Raw development and test data, labels aligned to the development map.
pub fn load_data(cfg: &ExperimentConfig, seed: u64) -> Result<(Dataset, Dataset), ExperimentError> {
    match &cfg.data {
        DataSource::Blobs { n_classes, per_class, test_per_class, n_features, separation } => {
            let dev = make_blobs(*n_classes, *per_class, *n_features, *separation, derive_seed(seed, STREAM_DEV)).stage("load")?;
            let test =
                make_blobs(*n_classes, *test_per_class, *n_features, *separation, derive_seed(seed, STREAM_TEST)).stage("load")?;
            Ok((dev, test))
        }
        DataSource::Csv { train, test, label_column } => {
            let dev = load_csv(train, label_column).stage("load")?;
            let test = load_csv(test, label_column).stage("load")?;
            let map = dev.label_map.clone();
            Ok((dev, remap(test, &map)))
        }
        DataSource::Te { dir, faults } => {
            let suite = load_te(dir, faults).stage("load")?;
            Ok((suite.train, suite.test))
        }
    }
}

/// Loads, splits, standardises and trains the pool.
pub fn prepare(cfg: &ExperimentConfig, seed: u64, exec: Execution) -> Result<Prepared, ExperimentError> {
    prepare_timed(cfg, seed, exec, &mut Timer::default())
}

fn prepare_timed(cfg: &ExperimentConfig, seed: u64, exec: Execution, timer: &mut Timer) -> Result<Prepared, ExperimentError> {
    cfg.validate()?;
    let (dev, raw_test) = timer.time("load", || load_data(cfg, seed))?;
    if dev.y.contains(&ANOMALY_CODE) {
        return Err(ExperimentError::Stage { stage: "load", message: "training data contains anomaly labels".into() });
    }
    if dev.n_features() != raw_test.n_features() {
        return Err(ExperimentError::Stage {
            stage: "load",
            message: format!("training has {} features, test {}", dev.n_features(), raw_test.n_features()),
        });
    }
    let (train, valid) = timer.time("split", || split_train_valid(&dev, cfg.split_ratio, derive_seed(seed, STREAM_SPLIT))).stage("split")?;
    let standardizer = Standardizer::fit(train.x.view()).stage("standardize")?;
    let train = standardizer.apply(&train).stage("standardize")?;
    let valid = standardizer.apply(&valid).stage("standardize")?;
    let test = standardizer.apply(&raw_test).stage("standardize")?;
    let y_tr = train.dense_labels().expect("no anomalies in training data");
    let y_va = valid.dense_labels().expect("no anomalies in training data");
    let pool = timer
        .time("train_pool", || {
            train_pool(&cfg.pool, train.x.view(), &y_tr, valid.x.view(), &y_va, dev.n_classes(), derive_seed(seed, STREAM_POOL), exec)
        })
        .stage("train_pool")?;
    Ok(Prepared {
        seed,
        config: cfg.clone(),
        label_map: dev.label_map.clone(),
        standardizer,
        train,
        valid,
        test,
        raw_test,
        pool,
    })
}

/// Selects the ensemble and calibrates its thresholds on validation data.
pub fn build_ensemble(prep: &Prepared, sel_cfg: &SelectionConfig, exec: Execution) -> Result<(Selection, EnsembleModel), ExperimentError> {
    let y_va = prep.y_valid();
    let selection = select_from_pool(&prep.pool, prep.valid.x.view(), &y_va, sel_cfg, exec).stage("select")?;
    let members = selection.selected.iter().map(|&i| prep.pool.classifiers[i].clone()).collect();
    let mut model = EnsembleModel::new(members, prep.frame(), prep.config.sensitivity())
        .stage("ensemble")?
        .with_label_rule(prep.config.evidence.label_rule);
    let a = &prep.config.anomaly;
    model.calibrate(prep.valid.x.view(), a.q_min, a.q_max, exec).stage("calibrate")?;
    Ok((selection, model))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemberSummary {
    pub name: String,
    pub kind: String,
    pub validation_macro_f1: f64,
    pub weights: Vec<f64>,
    pub test: ClassificationReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionSummary {
    pub injected: usize,
    pub report: ClassificationReport,
    /// Recall of the anomaly class; `None` without anomalous rows.
    pub anomaly_recall: Option<f64>,
    /// Share of in-distribution rows flagged as anomalies.
    pub false_anomaly_rate: f64,
    pub below_min: usize,
    pub above_max: usize,
    pub between: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UqSummary {
    pub subject: String,
    pub uq_p: Option<SeriesSummary>,
    pub uq_ds: SeriesSummary,
    pub uq_y: SeriesSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataSummary {
    pub n_train: usize,
    pub n_valid: usize,
    pub n_test: usize,
    pub n_features: usize,
    pub labels: Vec<i64>,
    pub constant_features: Vec<usize>,
    pub test_checksum: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub seed: u64,
    pub config: ExperimentConfig,
    pub data: DataSummary,
    pub pool: Vec<MemberSummary>,
    pub selection: Selection,
    pub selected_names: Vec<String>,
    pub ensemble: ClassificationReport,
    pub thresholds: AnomalyThresholds,
    pub detection: DetectionSummary,
    pub uq: Vec<UqSummary>,
}

/// One row of the per-sample detection trace, labels in original units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub index: usize,
    pub truth: i64,
    pub pred: i64,
    pub u_d: f64,
    pub u_y: f64,
    pub branch: Branch,
}

/// Everything a run produces, before export.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub report: ExperimentReport,
    pub trace: Vec<TraceRow>,
    pub uq_traces: Vec<(String, UqTrace)>,
    pub timing: Vec<StageTiming>,
    pub model: EnsembleModel,
    pub standardizer: Standardizer,
    pub label_map: LabelMap,
}

fn member_summaries(prep: &Prepared) -> Result<Vec<MemberSummary>, ExperimentError> {
    prep.pool
        .classifiers
        .iter()
        .map(|c| {
            let pred: Vec<i64> = c.model.predict(prep.test.x.view()).stage("evaluate")?.into_iter().map(|p| p as i64).collect();
            Ok(MemberSummary {
                name: c.name().to_string(),
                kind: c.spec.params.kind_name().to_string(),
                validation_macro_f1: c.validation.macro_f1,
                weights: c.weights.as_slice().to_vec(),
                test: classification_report(&prep.test.y, &pred, prep.label_map.len()).stage("evaluate")?,
            })
        })
        .collect()
}

/// Scores the ensemble on `test`.
pub fn evaluate(model: &EnsembleModel, test: &Dataset, exec: Execution) -> Result<ClassificationReport, ExperimentError> {
    let decisions = model.predict_batch_with(test.x.view(), exec).stage("evaluate")?;
    let pred: Vec<i64> = decisions.iter().map(|d| d.label as i64).collect();
    classification_report(&test.y, &pred, model.frame.len()).stage("evaluate")
}

/// Raw test rows plus any configured injected anomalies, and the number
/// injected.
pub fn inject_raw(cfg: &ExperimentConfig, seed: u64, raw_test: &Dataset) -> Result<(Dataset, usize), ExperimentError> {
    let Some(inj) = &cfg.anomaly.inject else {
        return Ok((raw_test.clone(), 0));
    };
    let generator = match (&inj.source, &cfg.data) {
        (InjectSource::HeldOut { min_distance }, DataSource::Blobs { n_classes, n_features, separation, .. }) => {
            let centers = blob_centers(*n_classes, *n_features, *separation);
            AnomalyGenerator::Blob { center: held_out_center(centers.view(), *min_distance) }
        }
        (InjectSource::HeldOut { .. }, _) => return Err(ExperimentError::Config("held_out injection requires blob data".into())),
        (InjectSource::Blob { center }, _) => AnomalyGenerator::Blob { center: center.clone() },
        (InjectSource::Uniform { low, high }, _) => AnomalyGenerator::Uniform { low: low.clone(), high: high.clone() },
    };
    let raw = inject_anomaly(raw_test, &generator, inj.fraction, derive_seed(seed, STREAM_INJECT)).stage("inject")?;
    let injected = raw.n_rows() - raw_test.n_rows();
    Ok((raw, injected))
}

/// Standardised detection set for a prepared run.
pub fn detection_set(prep: &Prepared) -> Result<(Dataset, usize), ExperimentError> {
    let (raw, injected) = inject_raw(&prep.config, prep.seed, &prep.raw_test)?;
    Ok((prep.standardizer.apply(&raw).stage("inject")?, injected))
}

/// Runs the detector over `ds` and summarises it.
pub fn detect(
    model: &EnsembleModel,
    ds: &Dataset,
    injected: usize,
    label_map: &LabelMap,
    exec: Execution,
) -> Result<(DetectionSummary, Vec<TraceRow>), ExperimentError> {
    let decisions = model.detect_batch(ds.x.view(), exec).stage("detect")?;
    let pred: Vec<i64> = decisions.iter().map(|d| d.label.code()).collect();
    let report = classification_report(&ds.y, &pred, model.frame.len()).stage("detect")?;
    let known: Vec<usize> = (0..ds.n_rows()).filter(|&i| ds.y[i] != ANOMALY_CODE).collect();
    let false_flags = known.iter().filter(|&&i| pred[i] == ANOMALY_CODE).count();
    let count = |b: Branch| decisions.iter().filter(|d| d.branch == b).count();
    let summary = DetectionSummary {
        injected,
        anomaly_recall: report.class(ANOMALY_CODE).filter(|c| c.support > 0).map(|c| c.recall),
        false_anomaly_rate: if known.is_empty() { 0.0 } else { false_flags as f64 / known.len() as f64 },
        below_min: count(Branch::BelowMin),
        above_max: count(Branch::AboveMax),
        between: count(Branch::Between),
        report,
    };
    let decode = |code: i64| label_map.decode_code(code).unwrap_or(code);
    let trace = decisions
        .iter()
        .enumerate()
        .map(|(index, d)| TraceRow {
            index,
            truth: decode(ds.y[index]),
            pred: decode(pred[index]),
            u_d: d.basis.u_d,
            u_y: d.basis.u_y,
            branch: d.branch,
        })
        .collect();
    Ok((summary, trace))
}

/// UQ traces over the validation split for every ensemble member and the
/// ensemble itself.
pub fn quantify(prep: &Prepared, model: &EnsembleModel, exec: Execution) -> Result<Vec<(String, UqTrace)>, ExperimentError> {
    let s = &prep.config.uq;
    let cfg = UqConfig {
        batch_size: s.batch_size,
        iterations: s.iterations,
        seed: derive_seed(prep.seed, STREAM_UQ),
        sampling: s.sampling,
        execution: exec,
    };
    let y_va = prep.y_valid();
    let mut out = Vec::new();
    for c in &model.pool {
        let src = ClassifierSource { classifier: c, sensitivity: model.sensitivity };
        out.push((c.name().to_string(), uq_batch(&src, prep.valid.x.view(), &y_va, &cfg).stage("uq")?));
    }
    out.push(("ensemble".to_string(), uq_batch(model, prep.valid.x.view(), &y_va, &cfg).stage("uq")?));
    Ok(out)
}

/// Full pipeline for the configured selection.
pub fn run(cfg: &ExperimentConfig, seed: u64, exec: Execution) -> Result<RunOutput, ExperimentError> {
    let mut timer = Timer::default();
    let prep = prepare_timed(cfg, seed, exec, &mut timer)?;
    let checksum = prep.test.checksum();
    let (selection, model) = timer.time("select_calibrate", || build_ensemble(&prep, &cfg.selection_config(), exec))?;
    if prep.test.checksum() != checksum {
        return Err(ExperimentError::Stage { stage: "calibrate", message: "test split changed during calibration".into() });
    }
    let pool = member_summaries(&prep)?;
    let ensemble = timer.time("evaluate", || evaluate(&model, &prep.test, exec))?;
    let (det_set, injected) = detection_set(&prep)?;
    let (detection, trace) = timer.time("detect", || detect(&model, &det_set, injected, &prep.label_map, exec))?;
    let uq_traces = if cfg.uq.enabled { timer.time("uq", || quantify(&prep, &model, exec))? } else { Vec::new() };

    let report = ExperimentReport {
        seed,
        config: cfg.clone(),
        data: DataSummary {
            n_train: prep.train.n_rows(),
            n_valid: prep.valid.n_rows(),
            n_test: prep.test.n_rows(),
            n_features: prep.train.n_features(),
            labels: prep.label_map.originals().to_vec(),
            constant_features: (0..prep.standardizer.constant.len()).filter(|&j| prep.standardizer.constant[j]).collect(),
            test_checksum: checksum,
        },
        pool,
        selected_names: selection.selected.iter().map(|&i| prep.pool.classifiers[i].name().to_string()).collect(),
        selection,
        ensemble,
        thresholds: model.thresholds.expect("calibrated in build_ensemble"),
        detection,
        uq: uq_traces
            .iter()
            .map(|(subject, t)| UqSummary { subject: subject.clone(), uq_p: t.uq_p, uq_ds: t.uq_ds, uq_y: t.uq_y })
            .collect(),
    };
    Ok(RunOutput {
        report,
        trace,
        uq_traces,
        timing: timer.finish(),
        model,
        standardizer: prep.standardizer,
        label_map: prep.label_map,
    })
}

/// Runs the pipeline and writes its artifacts into `out`.
pub fn run_experiment(cfg: &ExperimentConfig, seed: u64, out: &Path, exec: Execution) -> Result<ExperimentReport, ExperimentError> {
    let output = run(cfg, seed, exec)?;
    write_outputs(&output, out)?;
    Ok(output.report)
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> ExperimentError + '_ {
    move |e| ExperimentError::Io { path: path.to_path_buf(), message: e.to_string() }
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> ExperimentError + '_ {
    move |e| ExperimentError::Io { path: path.to_path_buf(), message: e.to_string() }
}

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<(), ExperimentError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| ExperimentError::Io { path: path.into(), message: e.to_string() })?;
    text.push('\n');
    fs::write(path, text).map_err(io_err(path))
}

pub fn write_trace(rows: &[TraceRow], path: &Path) -> Result<(), ExperimentError> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    w.write_record(["index", "truth", "pred", "u_d", "u_y", "branch"]).map_err(csv_err(path))?;
    for r in rows {
        w.write_record([
            r.index.to_string(),
            r.truth.to_string(),
            r.pred.to_string(),
            r.u_d.to_string(),
            r.u_y.to_string(),
            r.branch.as_str().to_string(),
        ])
        .map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

/// Confusion matrix with truth rows and predicted columns, in original
/// label units.
pub fn write_confusion(report: &ClassificationReport, label_map: &LabelMap, path: &Path) -> Result<(), ExperimentError> {
    let names: Vec<String> =
        report.labels.iter().map(|&l| label_map.decode_code(l).unwrap_or(l).to_string()).collect();
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    let mut header = vec!["truth\\pred".to_string()];
    header.extend(names.iter().cloned());
    w.write_record(&header).map_err(csv_err(path))?;
    for (name, row) in names.iter().zip(&report.confusion) {
        let mut record = vec![name.clone()];
        record.extend(row.iter().map(|v| v.to_string()));
        w.write_record(&record).map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

pub fn write_uq_trace(trace: &UqTrace, path: &Path) -> Result<(), ExperimentError> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    w.write_record(["iteration", "uq_p", "uq_ds", "uq_y"]).map_err(csv_err(path))?;
    for it in &trace.iterations {
        w.write_record([
            it.iteration.to_string(),
            it.uq_p.map(|v| v.to_string()).unwrap_or_default(),
            it.uq_ds.to_string(),
            it.uq_y.to_string(),
        ])
        .map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

fn file_stem(name: &str) -> String {
    name.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect()
}

pub fn write_outputs(output: &RunOutput, out: &Path) -> Result<(), ExperimentError> {
    fs::create_dir_all(out).map_err(io_err(out))?;
    write_json(&output.report, &out.join("report.json"))?;
    write_json(&output.timing, &out.join("timing.json"))?;
    write_trace(&output.trace, &out.join("trace.csv"))?;
    write_confusion(&output.report.ensemble, &output.label_map, &out.join("confusion.csv"))?;
    write_confusion(&output.report.detection.report, &output.label_map, &out.join("detection_confusion.csv"))?;
    for (subject, trace) in &output.uq_traces {
        write_uq_trace(trace, &out.join(format!("uq_{}.csv", file_stem(subject))))?;
    }
    Ok(())
}

/// A trained, calibrated ensemble with the preprocessing it expects.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelBundle {
    pub seed: u64,
    pub label_map: LabelMap,
    pub standardizer: Standardizer,
    pub model: EnsembleModel,
}

impl ModelBundle {
    pub fn from_prepared(prep: &Prepared, model: EnsembleModel) -> Self {
        Self { seed: prep.seed, label_map: prep.label_map.clone(), standardizer: prep.standardizer.clone(), model }
    }

    pub fn save(&self, path: &Path) -> Result<(), ExperimentError> {
        write_json(self, path)
    }

    pub fn load(path: &Path) -> Result<Self, ExperimentError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        serde_json::from_str(&text).map_err(|e| ExperimentError::Io { path: path.into(), message: e.to_string() })
    }

    /// Standardises a raw dataset and aligns its labels with the bundle.
    pub fn prepare_dataset(&self, raw: &Dataset) -> Result<Dataset, ExperimentError> {
        let aligned = remap(raw.clone(), &self.label_map);
        self.standardizer.apply(&aligned).stage("standardize")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub row: String,
    pub exp: bool,
    pub div: bool,
    pub ver: bool,
    pub pc: bool,
    pub selected: Vec<String>,
    pub diversity: Option<f64>,
    pub macro_f1: f64,
    pub accuracy: f64,
    pub anomaly_recall: Option<f64>,
    pub false_anomaly_rate: f64,
}

/// Trains the pool once and evaluates every grid row on it.
pub fn run_grid(cfg: &ExperimentConfig, seed: u64, exec: Execution) -> Result<Vec<GridRow>, ExperimentError> {
    let prep = prepare(cfg, seed, exec)?;
    let (det_set, injected) = detection_set(&prep)?;
    selection_grid(cfg.selection_config().ensemble_size)
        .iter()
        .enumerate()
        .map(|(i, sel)| {
            let (selection, model) = build_ensemble(&prep, sel, exec)?;
            let report = evaluate(&model, &prep.test, exec)?;
            let (detection, _) = detect(&model, &det_set, injected, &prep.label_map, exec)?;
            Ok(GridRow {
                row: grid_row_name(i),
                exp: sel.exp,
                div: sel.div,
                ver: sel.ver,
                pc: sel.pc,
                selected: selection.selected.iter().map(|&j| prep.pool.classifiers[j].name().to_string()).collect(),
                diversity: selection.diversity,
                macro_f1: report.macro_f1,
                accuracy: report.accuracy,
                anomaly_recall: detection.anomaly_recall,
                false_anomaly_rate: detection.false_anomaly_rate,
            })
        })
        .collect()
}

pub fn write_grid(rows: &[GridRow], out: &Path) -> Result<(), ExperimentError> {
    fs::create_dir_all(out).map_err(io_err(out))?;
    write_json(&rows, &out.join("grid.json"))?;
    let path = out.join("grid.csv");
    let mut w = csv::Writer::from_path(&path).map_err(csv_err(&path))?;
    w.write_record(["row", "exp", "div", "ver", "pc", "selected", "diversity", "macro_f1", "accuracy", "anomaly_recall", "false_anomaly_rate"])
        .map_err(csv_err(&path))?;
    for r in rows {
        w.write_record([
            r.row.clone(),
            r.exp.to_string(),
            r.div.to_string(),
            r.ver.to_string(),
            r.pc.to_string(),
            r.selected.join(";"),
            r.diversity.map(|v| v.to_string()).unwrap_or_default(),
            r.macro_f1.to_string(),
            r.accuracy.to_string(),
            r.anomaly_recall.map(|v| v.to_string()).unwrap_or_default(),
            r.false_anomaly_rate.to_string(),
        ])
        .map_err(csv_err(&path))?;
    }
    w.flush().map_err(io_err(&path))
}

/// Small blob experiment used by tests and the bundled example config.
pub fn blob_config(n_classes: usize, per_class: usize, test_per_class: usize) -> ExperimentConfig {
    ExperimentConfig {
        seed: None,
        data: DataSource::Blobs { n_classes, per_class, test_per_class, n_features: 2, separation: 10.0 },
        split_ratio: default_split(),
        pool: default_pool(),
        selection: None,
        evidence: EvidenceSettings::default(),
        uq: UqSettings::default(),
        anomaly: AnomalySettings {
            inject: Some(InjectSettings { fraction: 0.2, source: InjectSource::HeldOut { min_distance: 20.0 } }),
            ..AnomalySettings::default()
        },
    }
}
