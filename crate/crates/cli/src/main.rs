//! `mlpk`: train, compress and inspect models from the command line.
//!
//! Every command prints its result as `key=value` pairs on the last line of
//! standard output. Exit status is 0 on success, 2 for bad arguments or
//! inputs and 3 when training diverges.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use mlpk::data::Dataset;
use mlpk::io::{self, SynthConfig};
use mlpk::network::{count_flops, count_params, zoo, LayerKind, NetworkSpec};
use mlpk::pipeline::{self, final_line, RunLog};
use mlpk::train::TrainConfig;
use mlpk::{Error, Result};

const DEFAULT_SEED: u64 = 42;
const CIFAR_VAL: usize = 5000;

#[derive(Parser, Debug)]
#[command(
    name = "mlpk",
    version,
    about = "Structured filter pruning for small CNNs"
)]
struct Cli {
    /// Log verbosity: -v info, -vv debug.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a model from scratch on the task loss.
    Train {
        /// `synth`, `synth:<seed>` or `cifar10:<dir>`.
        #[arg(long)]
        data: String,
        /// `desk`, `vgg16` or a JSON network file.
        #[arg(long, default_value = "desk")]
        spec: String,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f32>,
        #[arg(long, default_value_t = DEFAULT_SEED)]
        seed: u64,
        /// Checkpoint to write.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a multi-phase compression plan on a trained checkpoint.
    Compress {
        /// TOML plan file.
        #[arg(long)]
        plan: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: String,
        /// Overrides the plan's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Directory for checkpoints, reports and the run log.
        #[arg(long)]
        out: PathBuf,
    },
    /// Remove a random fraction of every layer's filters, then retrain.
    BaselineRrf {
        #[arg(long)]
        fraction: f64,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: String,
        #[arg(long, default_value_t = DEFAULT_SEED)]
        seed: u64,
        #[arg(long, default_value_t = 3)]
        epochs: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Per-layer filter, parameter and FLOP table of a checkpoint.
    Inspect {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Reference model shown alongside, usually the unpruned original.
        #[arg(long)]
        baseline: Option<PathBuf>,
    },
    /// Rewrite the CSV reports of a saved run log.
    Report {
        #[arg(long)]
        runlog: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_data(source: &str) -> Result<Dataset> {
    match source.split_once(':') {
        None if source == "synth" => io::synth_dataset(&SynthConfig::default()),
        Some(("synth", seed)) => {
            let seed = seed
                .parse()
                .map_err(|_| Error::InvalidArgument(format!("bad synthetic seed `{seed}`")))?;
            io::synth_dataset(&SynthConfig {
                seed,
                ..SynthConfig::default()
            })
        }
        Some(("cifar10", dir)) => io::load_cifar10(Path::new(dir), true, CIFAR_VAL),
        _ => Err(Error::InvalidArgument(format!(
            "unknown data source `{source}`; use synth, synth:<seed> or cifar10:<dir>"
        ))),
    }
}

fn load_spec(name: &str, data: &Dataset) -> Result<NetworkSpec> {
    match name {
        "desk" | "vgg16" => zoo::builtin(name, data.input_shape(), data.classes),
        path => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::InvalidArgument(format!("{path}: {e}")))?;
            let spec: NetworkSpec = serde_json::from_str(&text)?;
            spec.validate()?;
            Ok(spec)
        }
    }
}

fn check_fit(spec: &NetworkSpec, data: &Dataset) -> Result<()> {
    if spec.input_shape != data.input_shape() {
        return Err(Error::InvalidArgument(format!(
            "model expects inputs {:?} but the data has {:?}",
            spec.input_shape,
            data.input_shape()
        )));
    }
    Ok(())
}

fn train_cmd(
    data: &str,
    spec: &str,
    epochs: Option<usize>,
    lr: Option<f32>,
    seed: u64,
    out: &Path,
) -> Result<()> {
    let data = load_data(data)?;
    let spec = load_spec(spec, &data)?;
    let defaults = pipeline::desk_train_config();
    let cfg = TrainConfig {
        epochs: epochs.unwrap_or(defaults.epochs),
        lr: lr.unwrap_or(defaults.lr),
        seed,
        ..defaults
    };
    let (w, report) = pipeline::train_baseline(&spec, &data, &cfg)?;
    io::save_checkpoint(out, &spec, &w)?;
    println!("val_acc={:?}", (report.val_metric * 100.0).round() / 100.0);
    Ok(())
}

fn compress_cmd(plan: &Path, ckpt: &Path, data: &str, seed: Option<u64>, out: &Path) -> Result<()> {
    let mut plan = io::load_plan(plan)?;
    if let Some(s) = seed {
        plan.seed = s;
    }
    println!("seed={}", plan.seed);
    let data_set = load_data(data)?;
    let (spec, w) = io::load_checkpoint(ckpt)?;
    check_fit(&spec, &data_set)?;
    for p in &plan.phases {
        p.validate(&spec)?;
    }
    std::fs::create_dir_all(out)
        .map_err(|e| Error::InvalidArgument(format!("{}: {e}", out.display())))?;
    let mut index = 0;
    let (final_spec, final_w, mut log) =
        pipeline::run_plan_with(&spec, &w, &data_set, &plan, |rec, s, w| {
            index += 1;
            io::save_checkpoint(&out.join(format!("phase{index}.mlpk")), s, w)?;
            let (_, decisions) = io::reports::phase_files(out, rec);
            io::reports::write_decisions(&decisions, &rec.decisions)
        })?;
    log.dataset = data.to_string();
    io::save_checkpoint(&out.join("final.mlpk"), &final_spec, &final_w)?;
    io::save_runlog(&out.join("runlog.json"), &log)?;
    io::emit_reports(&log, out)?;
    println!("{}", log.final_line());
    Ok(())
}

fn rrf_cmd(
    fraction: f64,
    ckpt: &Path,
    data: &str,
    seed: u64,
    epochs: usize,
    out: Option<&Path>,
) -> Result<()> {
    println!("seed={seed}");
    let data = load_data(data)?;
    let (spec, w) = io::load_checkpoint(ckpt)?;
    check_fit(&spec, &data)?;
    let cfg = TrainConfig {
        epochs,
        seed,
        ..TrainConfig::default()
    };
    let layers = pipeline::prunable_layers(&spec);
    let (s, pruned, run) = pipeline::run_rrf(&spec, &w, &data, fraction, &layers, &cfg)?;
    if let Some(out) = out {
        io::save_checkpoint(out, &s, &pruned)?;
    }
    let before = count_params(&spec, true)?.total;
    println!(
        "{}",
        final_line(
            before as f64 / run.params as f64,
            run.params,
            run.val_metric
        )
    );
    Ok(())
}

fn inspect_cmd(ckpt: &Path, baseline: Option<&Path>) -> Result<()> {
    let (spec, w) = io::load_checkpoint(ckpt)?;
    let reference = baseline.map(io::load_checkpoint).transpose()?;
    let params = count_params(&spec, true)?;
    let flops = count_flops(&spec)?;
    let ref_counts = reference
        .as_ref()
        .map(|(s, _)| mlpk::network::filter_counts(s));
    println!("tag={:?}", w.tag);
    println!(
        "{:<12} {:<6} {:>9} {:>9} {:>12} {:>14}",
        "layer", "kind", "original", "filters", "params", "flops"
    );
    for l in spec.param_layers() {
        let n = l.kind.outputs().unwrap_or(0);
        let orig = ref_counts
            .as_ref()
            .and_then(|c| {
                c.iter()
                    .find(|(name, _)| *name == l.name)
                    .map(|(_, n)| n.to_string())
            })
            .unwrap_or_else(|| "-".into());
        let kind = match l.kind {
            LayerKind::Conv { .. } => "conv",
            LayerKind::Fc { .. } => "fc",
            _ => "head",
        };
        println!(
            "{:<12} {:<6} {:>9} {:>9} {:>12} {:>14}",
            l.name,
            kind,
            orig,
            n,
            params.get(&l.name).unwrap_or(0),
            flops.get(&l.name).unwrap_or(0)
        );
    }
    let size = mlpk::network::bytes_to_mb(mlpk::network::model_size_bytes(&spec)?);
    match reference {
        Some((rs, _)) => {
            let before = count_params(&rs, true)?.total;
            println!(
                "compression={:?}x params={} size_mb={size:.4} flops={}",
                (before as f64 / params.total as f64 * 100.0).round() / 100.0,
                params.total,
                flops.total
            );
        }
        None => println!(
            "params={} size_mb={size:.4} flops={}",
            params.total, flops.total
        ),
    }
    Ok(())
}

fn report_cmd(runlog: &Path, out: &Path) -> Result<()> {
    let log: RunLog = io::load_runlog(runlog)?;
    let files = io::emit_reports(&log, out)?;
    println!("files={} {}", files.len(), log.final_line());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train {
            data,
            spec,
            epochs,
            lr,
            seed,
            out,
        } => {
            println!("seed={seed}");
            train_cmd(&data, &spec, epochs, lr, seed, &out)
        }
        Command::Compress {
            plan,
            checkpoint,
            data,
            seed,
            out,
        } => compress_cmd(&plan, &checkpoint, &data, seed, &out),
        Command::BaselineRrf {
            fraction,
            checkpoint,
            data,
            seed,
            epochs,
            out,
        } => rrf_cmd(fraction, &checkpoint, &data, seed, epochs, out.as_deref()),
        Command::Inspect {
            checkpoint,
            baseline,
        } => inspect_cmd(&checkpoint, baseline.as_deref()),
        Command::Report { runlog, out } => report_cmd(&runlog, &out),
    }
}

fn configure_threads() {
    let Ok(v) = std::env::var("MLPK_THREADS") else {
        return;
    };
    match v.parse::<usize>() {
        Ok(n) if n > 0 => {
            if let Err(e) = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global()
            {
                log::warn!("could not size the thread pool: {e}");
            }
        }
        _ => log::warn!("ignoring MLPK_THREADS={v}; expected a positive integer"),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    configure_threads();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_numerical() {
                ExitCode::from(3)
            } else {
                ExitCode::from(2)
            }
        }
    }
}
