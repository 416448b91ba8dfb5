//! The `molgap` command line.

mod grid;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use crate::ensemble::{
    ensemble_mean, read_ensemble, read_prediction_matrix, report_from_summary, summary_line,
    uncertainty_std, write_ensemble, write_predictions, write_report, EnsembleFile, DEFAULT_BINS,
};
use crate::fsutil::write_atomic;
use crate::models::Variant;
use crate::training::{
    load_checkpoint, load_dataset, load_dataset_lenient, load_split, make_split, predict,
    save_checkpoint, save_split, synthetic_corpus, train, write_corpus, write_history, Dataset,
    SplitSpec, TrainConfig,
};

pub use grid::{GridRun, RunManifest};

#[derive(Debug, Parser)]
#[command(name = "molgap", version, about = "GNN ensembles for HOMO-LUMO gap regression")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print molecule, bond, parse-failure and target statistics for a dataset.
    Inspect {
        #[arg(long)]
        data: PathBuf,
    },
    /// Train one weak learner.
    Train(TrainArgs),
    /// Write `index,prediction` for a checkpoint.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// `all`, a comma list such as `0,3,7`, or `split.json:valid`.
        #[arg(long, default_value = "all")]
        indices: String,
        #[arg(long)]
        out: PathBuf,
        /// Refuse checkpoints of any other variant.
        #[arg(long)]
        variant: Option<Variant>,
    },
    /// Average prediction files into `index,mean,std`.
    Ensemble {
        #[arg(long, num_args = 1.., required = true)]
        preds: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Relate ensemble spread to absolute error.
    Analyze {
        #[arg(long)]
        ensemble: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Subset of the ensemble's indices to analyze (default: all of them).
        #[arg(long)]
        indices: Option<String>,
        #[arg(long, default_value_t = DEFAULT_BINS)]
        bins: usize,
        #[arg(long)]
        out_report: PathBuf,
        /// Summary line file (default: the report path with `.summary.txt` appended).
        #[arg(long)]
        out_summary: Option<PathBuf>,
        /// Per-learner prediction files, for the mean individual MAE.
        #[arg(long, num_args = 1..)]
        preds: Vec<PathBuf>,
    },
    /// Train and predict a variants × seeds grid, writing a run manifest.
    Grid(grid::GridArgs),
    /// Write a seeded random split file.
    Split {
        /// Dataset whose size sets `n`.
        #[arg(long, conflicts_with = "n")]
        data: Option<PathBuf>,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long, default_value = "0.8,0.1,0.1")]
        fractions: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a synthetic `smiles,homolumogap` corpus.
    Generate {
        #[arg(long, default_value_t = 500)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Split file; without one a seeded 80/10/10 random split is used.
    #[arg(long)]
    pub split: Option<PathBuf>,
    /// JSON mirroring the training config; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub variant: Option<Variant>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub latent_dim: Option<usize>,
    #[arg(long)]
    pub num_layers: Option<usize>,
    #[arg(long)]
    pub out_checkpoint: PathBuf,
    #[arg(long)]
    pub out_history: Option<PathBuf>,
    /// Print per-epoch progress to standard error.
    #[arg(long)]
    pub verbose: bool,
}

impl TrainArgs {
    pub fn resolve_config(&self) -> Result<TrainConfig> {
        let mut config = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .with_context(|| format!("reading config {}", path.display()))?;
                serde_json::from_str(&text)
                    .with_context(|| format!("parsing config {}", path.display()))?
            }
            None => TrainConfig::default(),
        };
        if let Some(v) = self.variant {
            config.model.variant = v;
        }
        if let Some(s) = self.seed {
            config.seed = s;
        }
        if let Some(e) = self.epochs {
            config.epochs = e;
        }
        if let Some(b) = self.batch_size {
            config.batch_size = b;
        }
        if let Some(lr) = self.lr {
            config.lr = lr;
        }
        if let Some(d) = self.latent_dim {
            config.model.latent_dim = d;
        }
        if let Some(l) = self.num_layers {
            config.model.num_layers = l;
        }
        config.validate()?;
        Ok(config)
    }
}

/// Parses `all`, `0,3,7` or `split.json:valid` against a dataset of `n` molecules.
pub fn parse_indices(spec: &str, n: usize) -> Result<Vec<usize>> {
    let spec = spec.trim();
    if spec == "all" {
        return Ok((0..n).collect());
    }
    if let Some((path, part)) = spec.rsplit_once(':') {
        let split = load_split(Path::new(path), n)?;
        return split
            .part(part)
            .map(<[usize]>::to_vec)
            .ok_or_else(|| anyhow!("unknown split part `{part}` (expected train, valid or test)"));
    }
    let indices = spec
        .split(',')
        .map(|s| s.trim().parse::<usize>().map_err(|_| anyhow!("bad index `{s}` in `{spec}`")))
        .collect::<Result<Vec<_>>>()?;
    if let Some(&bad) = indices.iter().find(|&&i| i >= n) {
        bail!("index {bad} is outside a dataset of {n} molecules");
    }
    Ok(indices)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    write_atomic(path, text.as_bytes()).with_context(|| format!("writing {}", path.display()))
}

fn cmd_inspect(data: &Path) -> Result<()> {
    let (ds, failures) = load_dataset_lenient(data)?;
    let bonds: usize = ds.molecules.iter().map(|m| m.num_bonds()).sum();
    println!("molecules: {}", ds.len());
    println!("bonds: {bonds}");
    let rows: Vec<String> = failures
        .iter()
        .map(|e| match e {
            crate::training::TrainingError::ParseError { row, .. }
            | crate::training::TrainingError::BadTarget { row, .. } => row.to_string(),
            other => other.to_string(),
        })
        .collect();
    if rows.is_empty() {
        println!("parse_failures: 0");
    } else {
        println!("parse_failures: {} (rows {})", rows.len(), rows.join(","));
        for e in &failures {
            eprintln!("{e}");
        }
    }
    let targets: Vec<f64> = ds.targets.iter().flatten().copied().collect();
    println!("targets_missing: {}", ds.len() - targets.len());
    if targets.is_empty() {
        println!("target_min: NA\ntarget_max: NA\ntarget_mean: NA");
    } else {
        let min = targets.iter().copied().fold(f64::INFINITY, f64::min);
        let max = targets.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mean = targets.iter().sum::<f64>() / targets.len() as f64;
        println!("target_min: {min}\ntarget_max: {max}\ntarget_mean: {mean}");
    }
    Ok(())
}

fn dataset_split(ds: &Dataset, split: Option<&Path>) -> Result<SplitSpec> {
    Ok(match split {
        Some(path) => load_split(path, ds.len())?,
        None => make_split(ds.len(), [0.8, 0.1, 0.1], 0)?,
    })
}

pub fn cmd_train(args: &TrainArgs) -> Result<()> {
    let config = args.resolve_config()?;
    let ds = load_dataset(&args.data)?;
    let split = dataset_split(&ds, args.split.as_deref())?;
    let outcome = train(&ds, &split, &config)?;
    if args.verbose {
        for r in &outcome.history {
            let mae = r.valid_mae.map_or("NA".to_string(), |v| format!("{v:.6}"));
            eprintln!("epoch {} train_loss={:.6} valid_mae={mae}", r.epoch, r.train_loss);
        }
    }
    if let Some(path) = &args.out_history {
        write_history(path, &outcome.history)?;
    }
    save_checkpoint(&args.out_checkpoint, &outcome.checkpoint)?;
    match outcome.checkpoint.metadata.valid_mae {
        Some(mae) => println!("valid_mae={mae}"),
        None => println!("valid_mae=NA"),
    }
    Ok(())
}

pub fn cmd_predict(
    checkpoint: &Path,
    data: &Path,
    indices: &str,
    out: &Path,
    variant: Option<Variant>,
) -> Result<()> {
    let ck = load_checkpoint(checkpoint, variant)?;
    let ds = load_dataset(data)?;
    let indices = parse_indices(indices, ds.len())?;
    let preds = predict(&ck, &ds, &indices)?;
    write_predictions(out, &indices, &preds)?;
    println!("wrote {} predictions to {}", preds.len(), out.display());
    Ok(())
}

pub fn cmd_ensemble(preds: &[PathBuf], out: &Path) -> Result<()> {
    let m = read_prediction_matrix(preds)?;
    let std = (m.num_learners() >= 2).then(|| uncertainty_std(&m)).transpose()?;
    let ens = EnsembleFile {
        mean: ensemble_mean(&m),
        indices: m.indices.clone(),
        std,
    };
    write_ensemble(out, &ens)?;
    println!(
        "ensembled {} learners over {} molecules into {}",
        m.num_learners(),
        m.num_molecules(),
        out.display()
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
pub fn cmd_analyze(
    ensemble: &Path,
    data: &Path,
    indices: Option<&str>,
    bins: usize,
    out_report: &Path,
    out_summary: Option<&Path>,
    preds: &[PathBuf],
) -> Result<()> {
    if bins == 0 {
        bail!("--bins must be at least 1");
    }
    let ens = read_ensemble(ensemble)?;
    let ds = load_dataset(data)?;
    let rows: Vec<usize> = match indices {
        None => (0..ens.indices.len()).collect(),
        Some(spec) => parse_indices(spec, ds.len())?
            .into_iter()
            .map(|i| {
                ens.indices
                    .iter()
                    .position(|&e| e == i)
                    .ok_or_else(|| anyhow!("index {i} is not in {}", ensemble.display()))
            })
            .collect::<Result<_>>()?,
    };
    let selected: Vec<usize> = rows.iter().map(|&r| ens.indices[r]).collect();
    if selected.is_empty() {
        bail!("no molecules to analyze");
    }
    let targets = ds.targets_at(&selected)?;
    let std = ens.std.as_ref().ok_or_else(|| {
        anyhow!("{} has no std column (single learner); uncertainty needs at least 2", ensemble.display())
    })?;
    let mean: Vec<f64> = rows.iter().map(|&r| ens.mean[r]).collect();
    let std: Vec<f64> = rows.iter().map(|&r| std[r]).collect();
    let report = report_from_summary(&mean, &std, &targets, bins)?;

    let ensemble_mae = report.abs_error.iter().sum::<f64>() / report.abs_error.len() as f64;
    let mean_individual_mae = if preds.is_empty() {
        None
    } else {
        let m = read_prediction_matrix(preds)?;
        if m.indices != ens.indices {
            bail!("prediction files do not cover the ensemble's indices");
        }
        let per_learner: Vec<f64> = m
            .values
            .iter()
            .map(|row| {
                rows.iter()
                    .zip(&targets)
                    .map(|(&r, t)| (row[r] - t).abs())
                    .sum::<f64>()
                    / rows.len() as f64
            })
            .collect();
        Some(per_learner.iter().sum::<f64>() / per_learner.len() as f64)
    };

    write_report(out_report, &report.bins)?;
    let summary = summary_line(Some(&report), Some(ensemble_mae), mean_individual_mae);
    let summary_path = match out_summary {
        Some(p) => p.to_path_buf(),
        None => {
            let mut name = out_report.as_os_str().to_owned();
            name.push(".summary.txt");
            PathBuf::from(name)
        }
    };
    write_text(&summary_path, &format!("{summary}\n"))?;
    if report.zero_variance() {
        println!("note: uncertainty has zero variance; Pearson correlation omitted");
    }
    println!("{summary}");
    Ok(())
}

fn parse_fractions(s: &str) -> Result<[f64; 3]> {
    let parts = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|_| anyhow!("bad fraction `{p}`")))
        .collect::<Result<Vec<_>>>()?;
    <[f64; 3]>::try_from(parts).map_err(|_| anyhow!("expected three fractions, got `{s}`"))
}

fn cmd_split(data: Option<&Path>, n: Option<usize>, fractions: &str, seed: u64, out: &Path) -> Result<()> {
    let n = match (data, n) {
        (Some(path), _) => load_dataset(path)?.len(),
        (None, Some(n)) => n,
        (None, None) => bail!("pass --data or --n"),
    };
    let split = make_split(n, parse_fractions(fractions)?, seed)?;
    save_split(out, &split)?;
    println!(
        "train={} valid={} test={}",
        split.train.len(),
        split.valid.len(),
        split.test.len()
    );
    Ok(())
}

fn cmd_generate(n: usize, seed: u64, out: &Path) -> Result<()> {
    write_corpus(out, &synthetic_corpus(n, seed))?;
    println!("wrote {n} molecules to {}", out.display());
    Ok(())
}

pub fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Inspect { data } => cmd_inspect(&data),
        Command::Train(args) => cmd_train(&args),
        Command::Predict {
            checkpoint,
            data,
            indices,
            out,
            variant,
        } => cmd_predict(&checkpoint, &data, &indices, &out, variant),
        Command::Ensemble { preds, out } => cmd_ensemble(&preds, &out),
        Command::Analyze {
            ensemble,
            data,
            indices,
            bins,
            out_report,
            out_summary,
            preds,
        } => cmd_analyze(
            &ensemble,
            &data,
            indices.as_deref(),
            bins,
            &out_report,
            out_summary.as_deref(),
            &preds,
        ),
        Command::Grid(args) => grid::cmd_grid(&args),
        Command::Split {
            data,
            n,
            fractions,
            seed,
            out,
        } => cmd_split(data.as_deref(), n, &fractions, seed, &out),
        Command::Generate { n, seed, out } => cmd_generate(n, seed, &out),
    }
}

/// Parses `args` (including the program name) and runs; returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}
