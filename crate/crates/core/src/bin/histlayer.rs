use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::json;

use histlayer::experiment::{self, ExperimentConfig, Splits};
use histlayer::gradcheck;
use histlayer::metrics;
use histlayer::model::{Model, ModelSpec, ModelVariant};
use histlayer::synth::{self, LabelTarget, Split};
use histlayer::{Error, Result};

#[derive(Parser)]
#[command(name = "histlayer", version, about = "Localized histogram layer experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the 9-class synthetic texture dataset as PGM files plus a CSV manifest.
    GenData {
        #[arg(long, value_parser = parse_size)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train every seed of an experiment and write checkpoints, histories and metrics.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate saved checkpoints on the test split.
    Eval {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Finite-difference check of all three synthetic architectures.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1e-5)]
        step: f64,
        #[arg(long, default_value_t = 1e-5)]
        tol: f64,
        #[arg(long, default_value_t = 8)]
        batch: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Per-class log Fisher discriminant ratio of saved checkpoints' test features.
    Fdr {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Merge the per-seed CSVs in a directory into summary.json.
    Report {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        name: Option<String>,
    },
    /// Run every variant x regime x label cell and write grid.json.
    Grid {
        /// Base experiment config; regime, label and variant are overridden.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_size(s: &str) -> std::result::Result<usize, String> {
    let v: usize = s.parse().map_err(|e| format!("{e}"))?;
    if v < 3 || v.is_multiple_of(2) {
        return Err(format!("size must be odd and at least 3, got {v}"));
    }
    Ok(v)
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::Io {
            path: parent.to_path_buf(),
            source: e,
        })?;
    }
    fs::write(path, serde_json::to_vec_pretty(value)?).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn load_models(cfg: &ExperimentConfig, dir: &Path) -> Result<Vec<(u64, Model)>> {
    cfg.seeds
        .iter()
        .map(|&seed| {
            let ckpt = experiment::load_checkpoint(&experiment::checkpoint_path(dir, seed))?;
            Ok((seed, ckpt.to_model()?))
        })
        .collect()
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::GenData { size, seed, out } => {
            let (samples, manifest) = synth::generate_dataset(size, seed)?;
            synth::write_dataset(&samples, &manifest, &out)?;
            println!("wrote {} images to {}", samples.len(), out.display());
        }
        Command::Train { config, out } => {
            let cfg = ExperimentConfig::from_json_file(&config)?;
            let (report, results) = experiment::run_experiment(&cfg)?;
            experiment::write_outputs(&out, &report, &results)?;
            for r in &results {
                println!(
                    "seed {}: test acc {:.2}% (best epoch {}, {} epochs)",
                    r.seed,
                    r.test_acc,
                    r.history.best_epoch,
                    r.history.epochs.len()
                );
            }
            println!(
                "{}: {:.2} +- {:.2}%",
                report.experiment, report.mean_acc, report.std_acc
            );
        }
        Command::Eval { config, out } => {
            let cfg = ExperimentConfig::from_json_file(&config)?;
            let splits = Splits::from_samples(&cfg.load_samples()?, cfg.label)?;
            let mut per_seed_acc = Vec::new();
            let mut confusion = Vec::new();
            for (seed, model) in load_models(&cfg, &out)? {
                let (acc, m) = experiment::evaluate_split(&model, &splits.test)?;
                println!("seed {seed}: test acc {acc:.2}%");
                per_seed_acc.push(acc);
                confusion.push(m.counts);
            }
            let (mean, std) = metrics::mean_std(&per_seed_acc);
            write_json(
                &out.join("eval.json"),
                &json!({
                    "experiment": cfg.experiment_name(),
                    "seeds": cfg.seeds,
                    "per_seed_acc": per_seed_acc,
                    "mean_acc": mean,
                    "std_acc": std,
                    "confusion": confusion,
                }),
            )?;
        }
        Command::Gradcheck {
            seed,
            step,
            tol,
            batch,
            out,
        } => {
            if batch == 0 {
                return Err(Error::InvalidArgument("batch must be positive".into()));
            }
            let samples = synth::generate_dataset(7, seed)?.0;
            let train = synth::split_tensor(&samples, Split::Train, LabelTarget::Both)?;
            let stride = (train.len() / batch).max(1);
            let picks: Vec<usize> = (0..batch).map(|i| (i * stride) % train.len()).collect();
            let data = train.subset(&picks);
            let mut all_passed = true;
            let mut reports = Vec::new();
            for variant in ModelVariant::ALL {
                let model = Model::build(ModelSpec::synthetic(variant, 9), seed)?;
                let report = gradcheck::finite_diff_check(&model, &data.images, &data.labels, step, tol)?;
                for g in &report.groups {
                    println!(
                        "{:<12} {:<14} n={:<3} max_rel_err={:.3e}",
                        variant.name(),
                        g.name,
                        g.len,
                        g.max_relative_error
                    );
                }
                println!(
                    "{:<12} {}",
                    variant.name(),
                    if report.passed { "PASS" } else { "FAIL" }
                );
                all_passed &= report.passed;
                reports.push(json!({ "variant": variant, "report": report }));
            }
            if let Some(dir) = out {
                write_json(&dir.join("gradcheck.json"), &reports)?;
            }
            return Ok(all_passed);
        }
        Command::Fdr { config, out } => {
            let cfg = ExperimentConfig::from_json_file(&config)?;
            let splits = Splits::from_samples(&cfg.load_samples()?, cfg.label)?;
            let mut per_seed = Vec::new();
            for (seed, model) in load_models(&cfg, &out)? {
                let features = experiment::extract_features(&model, &splits.test)?;
                let fdr = metrics::fdr_per_class(&features, &splits.test.labels, splits.test.num_classes)?;
                println!(
                    "seed {seed}: log-FDR {}",
                    fdr.iter().map(|v| format!("{v:.3}")).collect::<Vec<_>>().join(" ")
                );
                per_seed.push(fdr);
            }
            let classes = splits.test.num_classes;
            let mean: Vec<f64> = (0..classes)
                .map(|c| per_seed.iter().map(|f| f[c]).sum::<f64>() / per_seed.len() as f64)
                .collect();
            write_json(
                &out.join("fdr.json"),
                &json!({
                    "experiment": cfg.experiment_name(),
                    "seeds": cfg.seeds,
                    "per_seed_log_fdr": per_seed,
                    "log_fdr": mean,
                }),
            )?;
        }
        Command::Report { out, name } => {
            let name = name.unwrap_or_else(|| {
                out.file_name()
                    .map(|n| n.to_string_lossy().into_owned())
                    .unwrap_or_else(|| "experiment".into())
            });
            let report = experiment::report_from_dir(&out, &name)?;
            write_json(&out.join("summary.json"), &report)?;
            println!(
                "{}: {} seeds, {:.2} +- {:.2}%",
                report.experiment,
                report.seeds.len(),
                report.mean_acc,
                report.std_acc
            );
        }
        Command::Grid { config, out } => {
            let base = match config {
                Some(path) => ExperimentConfig::from_json_file(&path)?,
                None => ExperimentConfig::new(
                    experiment::Regime::Local,
                    LabelTarget::Both,
                    ModelVariant::Combination,
                ),
            };
            let cells = experiment::run_grid(&base)?;
            for c in &cells {
                println!(
                    "{:<7} {:<12} {:<12} {:6.2} +- {:5.2}%",
                    c.regime.name(),
                    c.label.name(),
                    c.variant.name(),
                    c.report.mean_acc,
                    c.report.std_acc
                );
            }
            write_json(&out.join("grid.json"), &cells)?;
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
