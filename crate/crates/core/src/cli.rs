//! Command-line entry point. Every path is resolved against `--workdir`.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::autodiff::Real;
use crate::checkpoint::Checkpoint;
use crate::config::{Precision, TrainConfig};
use crate::dataset::{generate_dataset, DatasetConfig};
use crate::error::{Error, Result};
use crate::eval::{emit_report, evaluate, evaluation_to_csv, run_ablation, samples_text, Variant, EVAL_FILE, REPORT_SAMPLES, SAMPLES_FILE};
use crate::io::write_atomic;
use crate::trainer::{load_model, prepare_data, train};

#[derive(Debug, Parser)]
#[command(name = "neurotext", version, about = "EEG and clinical-text representation learning")]
pub struct Cli {
    /// Root that relative paths are resolved against.
    #[arg(long, global = true, default_value = ".")]
    pub workdir: PathBuf,
    /// Overrides the seed of the dataset or config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic dataset (manifest plus W2W1 segments).
    GenData(GenDataArgs),
    /// Train one configuration.
    Train(TrainArgs),
    /// Evaluate a checkpoint on the test split of a dataset.
    Eval(EvalArgs),
    /// Train and evaluate ablation variants of a configuration.
    Ablate(AblateArgs),
    /// Turn run outputs into CSV curves, SVG charts and tables.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[arg(long, default_value = "data")]
    pub out: PathBuf,
    #[arg(long, default_value_t = 60)]
    pub patients: usize,
    #[arg(long, default_value_t = 12)]
    pub segments_per_patient: usize,
    #[arg(long, default_value_t = 18)]
    pub annotators: u32,
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// `key=value` override applied after the config file; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Defaults to the checkpoint's directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Comma-separated variant names, or `all`.
    #[arg(long, default_value = "all")]
    pub variants: String,
    #[arg(long, default_value = "runs/ablation")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

fn resolve(workdir: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        workdir.join(p)
    }
}

fn load_config(args: &ConfigArgs, workdir: &Path, seed: Option<u64>) -> Result<TrainConfig> {
    let mut cfg = match &args.config {
        Some(p) => TrainConfig::load(&resolve(workdir, p))?,
        None => TrainConfig::default(),
    };
    for o in &args.overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override `{o}` is not KEY=VALUE")))?;
        cfg.set(k.trim(), v)?;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn train_cmd<T: Real>(cfg: &TrainConfig, workdir: &Path) -> Result<String> {
    let data = prepare_data(cfg, &resolve(workdir, Path::new(&cfg.data_dir)))?;
    let out = resolve(workdir, Path::new(&cfg.out_dir));
    let outcome = train::<T>(cfg, &data, Some(&out))?;
    let last = outcome.metrics.last().expect("at least one epoch");
    Ok(format!(
        "trained `{}` for {} epochs: val_loss {:.6}, val_acc {:.4}; wrote {}",
        cfg.name,
        outcome.metrics.len(),
        last.val_loss,
        last.val_acc,
        out.display()
    ))
}

fn eval_cmd<T: Real>(ckpt: &Checkpoint, data_dir: &Path, out: &Path) -> Result<String> {
    let cfg = ckpt.config()?;
    let data = prepare_data(&cfg, data_dir)?;
    let (cfg, model, _) = load_model::<T>(ckpt, data.dims)?;
    let e = evaluate(&cfg, &model, &data, &data.test)?;
    write_atomic(&out.join(EVAL_FILE), evaluation_to_csv(&e).as_bytes())?;
    if !e.generations.is_empty() {
        write_atomic(&out.join(SAMPLES_FILE), samples_text(&e.generations, REPORT_SAMPLES).as_bytes())?;
    }
    Ok(format!(
        "test acc {:.4}  R@1 {:.4}  R@5 {:.4}  R@10 {:.4}  (N = {}); wrote {}",
        e.accuracy,
        e.retrieval.at(1).unwrap_or(0.0),
        e.retrieval.at(5).unwrap_or(0.0),
        e.retrieval.at(10).unwrap_or(0.0),
        e.retrieval.n,
        out.join(EVAL_FILE).display()
    ))
}

fn ablate_cmd<T: Real>(cfg: &TrainConfig, variants: &[Variant], workdir: &Path, out: &Path) -> Result<String> {
    let data = prepare_data(cfg, &resolve(workdir, Path::new(&cfg.data_dir)))?;
    let runs = run_ablation::<T>(cfg, variants, &data, Some(out))?;
    let mut msg = format!("{:<20} {:>6} {:>6} {:>6} {:>6} {:>9}", "variant", "acc", "R@1", "R@5", "R@10", "params");
    for r in &runs {
        let r = &r.row;
        msg.push_str(&format!(
            "\n{:<20} {:>6.4} {:>6.4} {:>6.4} {:>6.4} {:>9}",
            r.variant, r.acc, r.r1, r.r5, r.r10, r.params
        ));
    }
    Ok(msg)
}

/// Runs one parsed invocation and returns its summary line(s).
pub fn execute(cli: &Cli) -> Result<String> {
    let wd = &cli.workdir;
    match &cli.command {
        Command::GenData(a) => {
            let cfg = DatasetConfig {
                patients: a.patients,
                segments_per_patient: a.segments_per_patient,
                annotators: a.annotators,
                seed: cli.seed.unwrap_or(0),
                ..DatasetConfig::default()
            };
            let out = resolve(wd, &a.out);
            let rows = generate_dataset(&out, &cfg)?;
            Ok(format!("wrote {} segments to {}", rows.len(), out.display()))
        }
        Command::Train(a) => {
            let cfg = load_config(&a.config, wd, cli.seed)?;
            match cfg.precision {
                Precision::F32 => train_cmd::<f32>(&cfg, wd),
                Precision::F64 => train_cmd::<f64>(&cfg, wd),
            }
        }
        Command::Eval(a) => {
            let path = resolve(wd, &a.checkpoint);
            let ckpt = Checkpoint::load(&path)?;
            let out = match &a.out {
                Some(o) => resolve(wd, o),
                None => path.parent().map_or_else(|| wd.clone(), Path::to_path_buf),
            };
            let data = resolve(wd, &a.data);
            match ckpt.config()?.precision {
                Precision::F32 => eval_cmd::<f32>(&ckpt, &data, &out),
                Precision::F64 => eval_cmd::<f64>(&ckpt, &data, &out),
            }
        }
        Command::Ablate(a) => {
            let cfg = load_config(&a.config, wd, cli.seed)?;
            let variants = Variant::parse_list(&a.variants)?;
            let out = resolve(wd, &a.out);
            match cfg.precision {
                Precision::F32 => ablate_cmd::<f32>(&cfg, &variants, wd, &out),
                Precision::F64 => ablate_cmd::<f64>(&cfg, &variants, wd, &out),
            }
        }
        Command::Report(a) => {
            let files = emit_report(&resolve(wd, &a.input), &resolve(wd, &a.out))?;
            Ok(format!("wrote {} report files to {}", files.len(), resolve(wd, &a.out).display()))
        }
    }
}

/// Parses `argv`, runs it and returns the process exit code: 0 on success,
/// 2 on usage errors, 1 on any other failure.
pub fn dispatch<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(&cli) {
        Ok(msg) => {
            println!("{msg}");
            0
        }
        Err(e) => {
            eprintln!("error: {}", e.to_string().replace('\n', " "));
            1
        }
    }
}
