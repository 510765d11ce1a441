//! Multi-seed synthetic experiments, their reports and on-disk artifacts.
//!
//! Layout written by [`write_outputs`] under an output directory:
//!
//! * `seed_<s>.csv`: one row per seed (accuracy, epochs, flattened confusion
//!   matrix and log-FDR values)
//! * `history_seed_<s>.csv`: per-epoch losses and accuracies
//! * `checkpoint_seed_<s>.json`: model spec, seed, best epoch and parameters
//! * `metrics.json`: the aggregated [`MetricsReport`]

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hist::Binning;
use crate::metrics::{self, ConfusionMatrix};
use crate::model::{Model, ModelSpec, ModelVariant};
use crate::synth::{self, LabelTarget, Split, SyntheticSample};
use crate::tensor::Tensor;
use crate::train::{self, History, LabeledImages, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    /// 3x3 images: the 3x3 kernel sees the whole image.
    Global,
    /// 7x7 images: features are pooled over 5x5 sliding positions.
    Local,
}

impl Regime {
    pub const ALL: [Regime; 2] = [Self::Global, Self::Local];

    pub fn image_size(self) -> usize {
        match self {
            Self::Global => 3,
            Self::Local => 7,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Global => "global",
            Self::Local => "local",
        }
    }
}

fn default_seeds() -> Vec<u64> {
    vec![0, 1, 2]
}

fn default_true() -> bool {
    true
}

fn default_binning() -> Binning {
    Binning::Rbf
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub name: Option<String>,
    /// Directory written by `gen-data`; when absent the dataset is generated
    /// in memory from `dataset_seed`.
    #[serde(default)]
    pub dataset_dir: Option<PathBuf>,
    #[serde(default)]
    pub dataset_seed: u64,
    pub regime: Regime,
    pub label: LabelTarget,
    pub variant: ModelVariant,
    #[serde(default = "default_binning")]
    pub binning: Binning,
    #[serde(default = "default_true")]
    pub normalize_count: bool,
    #[serde(default)]
    pub sum_to_one: bool,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub train: TrainConfig,
}

impl ExperimentConfig {
    pub fn new(regime: Regime, label: LabelTarget, variant: ModelVariant) -> Self {
        Self {
            name: None,
            dataset_dir: None,
            dataset_seed: 0,
            regime,
            label,
            variant,
            binning: Binning::Rbf,
            normalize_count: true,
            sum_to_one: false,
            seeds: default_seeds(),
            train: TrainConfig::default(),
        }
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let cfg: Self = serde_json::from_slice(&bytes).map_err(|e| Error::Malformed {
            what: "experiment config",
            path: path.to_path_buf(),
            detail: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::InvalidArgument("at least one seed is required".into()));
        }
        self.train.validate()?;
        self.model_spec().validate()
    }

    pub fn experiment_name(&self) -> String {
        self.name.clone().unwrap_or_else(|| {
            let binning = match self.binning {
                Binning::Rbf => "rbf",
                Binning::PiecewiseLinear => "linear",
            };
            format!(
                "{}_{}_{}_{}",
                self.variant.name(),
                self.regime.name(),
                self.label.name(),
                binning
            )
        })
    }

    pub fn model_spec(&self) -> ModelSpec {
        let mut spec = ModelSpec::synthetic(self.variant, self.label.num_classes());
        spec.histogram.binning = self.binning;
        spec.histogram.normalize_count = self.normalize_count;
        spec.histogram.sum_to_one = self.sum_to_one;
        spec
    }

    /// Samples from `dataset_dir`, or freshly generated when none is set.
    pub fn load_samples(&self) -> Result<Vec<SyntheticSample>> {
        let size = self.regime.image_size();
        match &self.dataset_dir {
            Some(dir) => {
                if !dir.join(synth::MANIFEST_FILE).exists() {
                    return Err(Error::InvalidArgument(format!(
                        "no dataset found in {}",
                        dir.display()
                    )));
                }
                let (samples, manifest) = synth::load_dataset(dir)?;
                if manifest.size != size {
                    return Err(Error::InvalidArgument(format!(
                        "dataset in {} has {}x{} images, {} regime needs {size}x{size}",
                        dir.display(),
                        manifest.size,
                        manifest.size,
                        self.regime.name()
                    )));
                }
                Ok(samples)
            }
            None => Ok(synth::generate_dataset(size, self.dataset_seed)?.0),
        }
    }
}

/// Train / validation / test tensors for one label target.
#[derive(Debug, Clone)]
pub struct Splits {
    pub train: LabeledImages,
    pub val: LabeledImages,
    pub test: LabeledImages,
}

impl Splits {
    pub fn from_samples(samples: &[SyntheticSample], target: LabelTarget) -> Result<Self> {
        Ok(Self {
            train: synth::split_tensor(samples, Split::Train, target)?,
            val: synth::split_tensor(samples, Split::Val, target)?,
            test: synth::split_tensor(samples, Split::Test, target)?,
        })
    }
}

/// Pre-FC feature vectors of every image in `data`, `(n, d)`.
pub fn extract_features(model: &Model, data: &LabeledImages) -> Result<Tensor> {
    model.features(&data.images)
}

/// Accuracy (percent) and confusion matrix of `model` on `data`.
pub fn evaluate_split(model: &Model, data: &LabeledImages) -> Result<(f64, ConfusionMatrix)> {
    let preds = model.predict(&data.images)?;
    Ok((
        metrics::accuracy(&preds, &data.labels)?,
        metrics::confusion(&preds, &data.labels, data.num_classes)?,
    ))
}

#[derive(Debug, Clone)]
pub struct SeedResult {
    pub seed: u64,
    pub test_acc: f64,
    pub confusion: ConfusionMatrix,
    pub log_fdr: Vec<f64>,
    pub history: History,
    pub runtime_s: f64,
    pub model: Model,
}

pub fn run_seed(cfg: &ExperimentConfig, splits: &Splits, seed: u64) -> Result<SeedResult> {
    let started = Instant::now();
    let model = Model::build(cfg.model_spec(), seed)?;
    let (model, history) = train::train(model, &splits.train, &splits.val, &cfg.train, seed)?;
    let (test_acc, confusion) = evaluate_split(&model, &splits.test)?;
    let features = extract_features(&model, &splits.test)?;
    let log_fdr = metrics::fdr_per_class(&features, &splits.test.labels, splits.test.num_classes)?;
    Ok(SeedResult {
        seed,
        test_acc,
        confusion,
        log_fdr,
        history,
        runtime_s: started.elapsed().as_secs_f64(),
        model,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionSummary {
    pub per_seed: Vec<Vec<Vec<u64>>>,
    /// Row-normalized sum over seeds.
    pub mean_row_normalized: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub experiment: String,
    pub seeds: Vec<u64>,
    pub per_seed_acc: Vec<f64>,
    pub mean_acc: f64,
    pub std_acc: f64,
    pub confusion: ConfusionSummary,
    /// Per-class log-FDR of test features, averaged over seeds.
    pub log_fdr: Vec<f64>,
    pub runtime_s: f64,
}

impl MetricsReport {
    /// Same report with the wall-clock field cleared, for comparisons.
    pub fn without_runtime(&self) -> Self {
        Self {
            runtime_s: 0.0,
            ..self.clone()
        }
    }
}

pub fn summarize(experiment: &str, results: &[SeedResult]) -> Result<MetricsReport> {
    let rows: Vec<SeedRow> = results.iter().map(SeedRow::from).collect();
    summarize_rows(experiment, &rows)
}

fn summarize_rows(experiment: &str, rows: &[SeedRow]) -> Result<MetricsReport> {
    let first = rows.first().ok_or(Error::Empty("seed results"))?;
    let classes = first.classes;
    let per_seed_acc: Vec<f64> = rows.iter().map(|r| r.test_acc).collect();
    let (mean_acc, std_acc) = metrics::mean_std(&per_seed_acc);
    let mut total = ConfusionMatrix::new(classes);
    let mut per_seed = Vec::with_capacity(rows.len());
    let mut log_fdr = vec![0.0; classes];
    for r in rows {
        let m = r.confusion_matrix()?;
        total.merge(&m)?;
        per_seed.push(m.counts);
        let fdr = parse_floats(&r.log_fdr)?;
        if fdr.len() != classes {
            return Err(Error::shape("summarize", "log-FDR length differs between seeds"));
        }
        for (acc, v) in log_fdr.iter_mut().zip(fdr) {
            *acc += v / rows.len() as f64;
        }
    }
    Ok(MetricsReport {
        experiment: experiment.to_string(),
        seeds: rows.iter().map(|r| r.seed).collect(),
        per_seed_acc,
        mean_acc,
        std_acc,
        confusion: ConfusionSummary {
            per_seed,
            mean_row_normalized: total.row_normalized(),
        },
        log_fdr,
        runtime_s: rows.iter().map(|r| r.runtime_s).sum(),
    })
}

/// Trains and evaluates every seed (concurrently) and aggregates the results.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<(MetricsReport, Vec<SeedResult>)> {
    cfg.validate()?;
    let samples = cfg.load_samples()?;
    run_experiment_on(cfg, &samples)
}

/// [`run_experiment`] on already-loaded samples.
pub fn run_experiment_on(
    cfg: &ExperimentConfig,
    samples: &[SyntheticSample],
) -> Result<(MetricsReport, Vec<SeedResult>)> {
    cfg.validate()?;
    let size = cfg.regime.image_size();
    if samples.iter().any(|s| s.size != size) {
        return Err(Error::InvalidArgument(format!(
            "{} regime needs {size}x{size} images",
            cfg.regime.name()
        )));
    }
    let splits = Splits::from_samples(samples, cfg.label)?;
    let results: Vec<Result<SeedResult>> = std::thread::scope(|scope| {
        let handles: Vec<_> = cfg
            .seeds
            .iter()
            .map(|&seed| {
                let splits = &splits;
                scope.spawn(move || run_seed(cfg, splits, seed))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("seed worker panicked"))
            .collect()
    });
    let results = results.into_iter().collect::<Result<Vec<_>>>()?;
    let report = summarize(&cfg.experiment_name(), &results)?;
    Ok((report, results))
}

/// One line of `seed_<s>.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRow {
    pub seed: u64,
    pub test_acc: f64,
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub runtime_s: f64,
    pub classes: usize,
    /// Row-major confusion counts, space separated.
    pub confusion: String,
    /// Per-class log-FDR, space separated.
    pub log_fdr: String,
}

impl SeedRow {
    fn confusion_matrix(&self) -> Result<ConfusionMatrix> {
        let values: Vec<u64> = self
            .confusion
            .split_whitespace()
            .map(|t| t.parse::<u64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::InvalidArgument(format!("bad confusion entry: {e}")))?;
        if values.len() != self.classes * self.classes {
            return Err(Error::shape(
                "SeedRow",
                format!("{} confusion entries for {} classes", values.len(), self.classes),
            ));
        }
        Ok(ConfusionMatrix {
            classes: self.classes,
            counts: values.chunks(self.classes).map(<[u64]>::to_vec).collect(),
        })
    }
}

fn parse_floats(s: &str) -> Result<Vec<f64>> {
    s.split_whitespace()
        .map(|t| {
            t.parse::<f64>()
                .map_err(|e| Error::InvalidArgument(format!("bad number {t:?}: {e}")))
        })
        .collect()
}

fn join<T: ToString>(values: impl IntoIterator<Item = T>) -> String {
    values
        .into_iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(" ")
}

impl From<&SeedResult> for SeedRow {
    fn from(r: &SeedResult) -> Self {
        Self {
            seed: r.seed,
            test_acc: r.test_acc,
            best_epoch: r.history.best_epoch,
            epochs_run: r.history.epochs.len(),
            runtime_s: r.runtime_s,
            classes: r.confusion.classes,
            confusion: join(r.confusion.counts.iter().flatten()),
            log_fdr: join(&r.log_fdr),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub experiment: String,
    pub spec: ModelSpec,
    pub seed: u64,
    pub epoch: usize,
    pub params: Vec<(String, Vec<f64>)>,
}

impl Checkpoint {
    pub fn from_model(experiment: &str, model: &Model, seed: u64, epoch: usize) -> Self {
        Self {
            experiment: experiment.to_string(),
            spec: model.spec().clone(),
            seed,
            epoch,
            params: model
                .param_groups()
                .into_iter()
                .map(|(n, v)| (n.to_string(), v.to_vec()))
                .collect(),
        }
    }

    pub fn to_model(&self) -> Result<Model> {
        let mut model = Model::build(self.spec.clone(), self.seed)?;
        model.load_params(&self.params)?;
        Ok(model)
    }
}

pub fn seed_csv_path(dir: &Path, seed: u64) -> PathBuf {
    dir.join(format!("seed_{seed}.csv"))
}

pub fn checkpoint_path(dir: &Path, seed: u64) -> PathBuf {
    dir.join(format!("checkpoint_seed_{seed}.json"))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn write_outputs(dir: &Path, report: &MetricsReport, results: &[SeedResult]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for r in results {
        let mut w = csv::Writer::from_path(seed_csv_path(dir, r.seed))?;
        w.serialize(SeedRow::from(r))?;
        w.flush().map_err(|e| Error::io(dir, e))?;
        write_file(
            &dir.join(format!("history_seed_{}.csv", r.seed)),
            r.history.to_csv()?.as_bytes(),
        )?;
        let ckpt = Checkpoint::from_model(&report.experiment, &r.model, r.seed, r.history.best_epoch);
        write_file(&checkpoint_path(dir, r.seed), &serde_json::to_vec_pretty(&ckpt)?)?;
    }
    write_file(&dir.join("metrics.json"), &serde_json::to_vec_pretty(report)?)
}

/// Reads every `seed_*.csv` in `dir`, ordered by seed.
pub fn read_seed_rows(dir: &Path) -> Result<Vec<SeedRow>> {
    let mut rows = Vec::new();
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
        if !(name.starts_with("seed_") && name.ends_with(".csv")) {
            continue;
        }
        let mut reader = csv::Reader::from_path(&path)?;
        for row in reader.deserialize::<SeedRow>() {
            rows.push(row.map_err(|e| Error::Malformed {
                what: "per-seed CSV",
                path: path.clone(),
                detail: e.to_string(),
            })?);
        }
    }
    rows.sort_by_key(|r| r.seed);
    Ok(rows)
}

/// Rebuilds the summary from the per-seed CSVs in `dir`.
pub fn report_from_dir(dir: &Path, experiment: &str) -> Result<MetricsReport> {
    let rows = read_seed_rows(dir)?;
    if rows.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "no seed_*.csv files in {}",
            dir.display()
        )));
    }
    summarize_rows(experiment, &rows)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| Error::Malformed {
        what: "checkpoint",
        path: path.to_path_buf(),
        detail: e.to_string(),
    })
}

/// Mean accuracy of one `(variant, regime, label)` cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub variant: ModelVariant,
    pub regime: Regime,
    pub label: LabelTarget,
    pub report: MetricsReport,
}

/// Runs every variant on every regime and label target with shared settings.
pub fn run_grid(base: &ExperimentConfig) -> Result<Vec<GridCell>> {
    let mut cells = Vec::new();
    for regime in Regime::ALL {
        let samples = synth::generate_dataset(regime.image_size(), base.dataset_seed)?.0;
        let configs: Vec<ExperimentConfig> = LabelTarget::ALL
            .iter()
            .flat_map(|&label| {
                ModelVariant::ALL.iter().map(move |&variant| ExperimentConfig {
                    name: None,
                    dataset_dir: None,
                    regime,
                    label,
                    variant,
                    ..base.clone()
                })
            })
            .collect();
        let reports: Vec<Result<MetricsReport>> = std::thread::scope(|scope| {
            let handles: Vec<_> = configs
                .iter()
                .map(|cfg| {
                    let samples = &samples;
                    scope.spawn(move || run_experiment_on(cfg, samples).map(|(r, _)| r))
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("grid worker panicked"))
                .collect()
        });
        for (cfg, report) in configs.iter().zip(reports) {
            cells.push(GridCell {
                variant: cfg.variant,
                regime,
                label: cfg.label,
                report: report?,
            });
        }
    }
    Ok(cells)
}
