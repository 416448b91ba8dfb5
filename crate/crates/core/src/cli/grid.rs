use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use anyhow::{anyhow, bail, Context, Result};
use clap::Args;
use serde::{Deserialize, Serialize};

use crate::models::Variant;
use crate::training::{load_dataset, make_split, save_split};

use super::write_text;

#[derive(Debug, Args)]
pub struct GridArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Shared split file; without one a seeded 80/10/10 split is written to the output directory.
    #[arg(long)]
    pub split: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_values_t = Variant::ALL)]
    pub variants: Vec<Variant>,
    #[arg(long, value_delimiter = ',', default_values_t = [0u64, 1, 2])]
    pub seeds: Vec<u64>,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Maximum number of concurrent training processes.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    /// Split part to predict after training.
    #[arg(long, default_value = "valid")]
    pub predict_part: String,
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
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRun {
    pub variant: Variant,
    pub seed: u64,
    pub checkpoint: PathBuf,
    pub predictions: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub dataset: PathBuf,
    pub split: PathBuf,
    pub runs: Vec<GridRun>,
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let m: RunManifest = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        m.check_unique()?;
        Ok(m)
    }

    fn check_unique(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for r in &self.runs {
            if !seen.insert((r.variant, r.seed)) {
                bail!("duplicate run {} seed {}", r.variant, r.seed);
            }
        }
        Ok(())
    }
}

/// The binary to launch; `MOLGAP_EXE` overrides the running executable.
fn molgap_exe() -> Result<PathBuf> {
    match std::env::var_os("MOLGAP_EXE") {
        Some(p) => Ok(PathBuf::from(p)),
        None => std::env::current_exe().context("locating the molgap executable"),
    }
}

fn run_child(exe: &Path, args: &[String]) -> Result<()> {
    let out = Command::new(exe)
        .args(args)
        .output()
        .with_context(|| format!("launching {}", exe.display()))?;
    if !out.status.success() {
        bail!("{}", String::from_utf8_lossy(&out.stderr).trim());
    }
    Ok(())
}

fn path_arg(p: &Path) -> String {
    p.display().to_string()
}

pub fn cmd_grid(args: &GridArgs) -> Result<()> {
    if args.jobs == 0 {
        bail!("--jobs must be at least 1");
    }
    std::fs::create_dir_all(&args.out_dir)
        .with_context(|| format!("creating {}", args.out_dir.display()))?;
    let split = match &args.split {
        Some(p) => p.clone(),
        None => {
            let n = load_dataset(&args.data)?.len();
            let p = args.out_dir.join("split.json");
            save_split(&p, &make_split(n, [0.8, 0.1, 0.1], 0)?)?;
            p
        }
    };

    let mut runs = Vec::new();
    for &variant in &args.variants {
        for &seed in &args.seeds {
            let stem = format!("{variant}_seed{seed}");
            runs.push(GridRun {
                variant,
                seed,
                checkpoint: args.out_dir.join(format!("{stem}.json")),
                predictions: args.out_dir.join(format!("{stem}_pred.csv")),
            });
        }
    }
    let manifest = RunManifest {
        dataset: args.data.clone(),
        split: split.clone(),
        runs,
    };
    manifest.check_unique()?;

    let shared = ["--data".to_string(), path_arg(&args.data)];
    let mut train_extra = vec!["--split".to_string(), path_arg(&split)];
    if let Some(c) = &args.config {
        train_extra.extend(["--config".to_string(), path_arg(c)]);
    }
    let overrides = [
        ("--epochs", args.epochs.map(|v| v.to_string())),
        ("--batch-size", args.batch_size.map(|v| v.to_string())),
        ("--lr", args.lr.map(|v| v.to_string())),
        ("--latent-dim", args.latent_dim.map(|v| v.to_string())),
        ("--num-layers", args.num_layers.map(|v| v.to_string())),
    ];
    for (flag, value) in overrides {
        if let Some(v) = value {
            train_extra.extend([flag.to_string(), v]);
        }
    }
    let indices = format!("{}:{}", path_arg(&split), args.predict_part);

    let exe = molgap_exe()?;
    let next = AtomicUsize::new(0);
    let failures = Mutex::new(Vec::new());
    std::thread::scope(|scope| {
        for _ in 0..args.jobs.min(manifest.runs.len()) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(run) = manifest.runs.get(i) else { break };
                let history = run.checkpoint.with_extension("history.csv");
                let mut train_args = vec!["train".to_string()];
                train_args.extend(shared.iter().cloned());
                train_args.extend(train_extra.iter().cloned());
                train_args.extend([
                    "--variant".to_string(),
                    run.variant.to_string(),
                    "--seed".to_string(),
                    run.seed.to_string(),
                    "--out-checkpoint".to_string(),
                    path_arg(&run.checkpoint),
                    "--out-history".to_string(),
                    path_arg(&history),
                ]);
                let mut predict_args = vec!["predict".to_string()];
                predict_args.extend(shared.iter().cloned());
                predict_args.extend([
                    "--checkpoint".to_string(),
                    path_arg(&run.checkpoint),
                    "--indices".to_string(),
                    indices.clone(),
                    "--out".to_string(),
                    path_arg(&run.predictions),
                ]);
                let result = run_child(&exe, &train_args).and_then(|_| run_child(&exe, &predict_args));
                match result {
                    Ok(()) => eprintln!("finished {} seed {}", run.variant, run.seed),
                    Err(e) => failures
                        .lock()
                        .expect("no worker panics while holding the lock")
                        .push(format!("{} seed {}: {e:#}", run.variant, run.seed)),
                }
            });
        }
    });

    let failures = failures.into_inner().expect("workers joined");
    if !failures.is_empty() {
        return Err(anyhow!("{} run(s) failed:\n{}", failures.len(), failures.join("\n")));
    }
    let manifest_path = args.out_dir.join("manifest.json");
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    write_text(&manifest_path, &format!("{json}\n"))?;
    println!("{} runs complete; manifest at {}", manifest.runs.len(), manifest_path.display());
    Ok(())
}
