//! Command-line front end: scene simulation, training, evaluation, module
//! comparison, attention benchmarking and gradient checking.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 bad configuration/usage.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use asyncmic::attention::AttentionModuleKind;
use asyncmic::bench::{doubling_ratio, run_bench, write_csv, BenchConfig};
use asyncmic::gradcheck;
use asyncmic::model::Model;
use asyncmic::scene::{mix_scene, write_scene, SceneSpec};
use asyncmic::seed::mix_seed;
use asyncmic::train::{compare_modules, evaluate, train, write_eval_csv, ExperimentConfig};

// real peak-memory numbers for `bench` require counting every allocation
#[global_allocator]
static ALLOC: asyncmic::alloc_counter::CountingAllocator =
    asyncmic::alloc_counter::CountingAllocator;

#[derive(Parser)]
#[command(name = "asyncmic", version, about = "Asynchronous multi-microphone enhancement toolkit")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Render scenes from a scene spec JSON into WAV + metadata directories.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        count: usize,
        #[arg(long)]
        seed: Option<u64>,
        /// Override config fields, e.g. --set room.reflection_coeff=0.6
        #[arg(long = "set")]
        set: Vec<String>,
    },
    /// Train a model from an experiment config JSON.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long = "set")]
        set: Vec<String>,
    },
    /// Evaluate a checkpoint on held-out scenes.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Experiment config; defaults to the config echoed in the checkpoint.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Number of held-out scenes (default: config's eval_scenes).
        #[arg(long)]
        scenes: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long = "set")]
        set: Vec<String>,
    },
    /// Train one model per module kind on identical data and report.
    Compare {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated module kinds (tac, frame_attention, full_x_attn,
        /// windowed_x_attn).
        #[arg(long, value_delimiter = ',', default_values_t = [String::from("tac"), String::from("windowed_x_attn")])]
        kinds: Vec<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long = "set")]
        set: Vec<String>,
    },
    /// Measure peak memory and wall time of full vs windowed attention.
    Bench {
        /// Bench config JSON; defaults are used when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long = "set")]
        set: Vec<String>,
    },
    /// Finite-difference check of every analytic backward pass.
    Gradcheck {
        #[arg(long)]
        seed: Option<u64>,
    },
}

enum CliError {
    Config(String),
    Runtime(String),
}

impl From<asyncmic::Error> for CliError {
    fn from(e: asyncmic::Error) -> Self {
        match e {
            asyncmic::Error::Config(_)
            | asyncmic::Error::Json(_)
            | asyncmic::Error::InvalidGeometry(_) => CliError::Config(e.to_string()),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Config(msg)) => {
            eprintln!("config error: {msg}");
            ExitCode::from(2)
        }
    }
}

/// Seed precedence: --seed flag, then ASYNC_MIC_SEED, then the config file.
fn effective_seed(flag: Option<u64>) -> Option<u64> {
    flag.or_else(|| {
        std::env::var("ASYNC_MIC_SEED")
            .ok()
            .and_then(|s| s.parse().ok())
    })
}

/// Load a JSON config, apply `--set key=value` overrides (dotted paths) and
/// an optional seed override.
fn load_config(
    path: &Path,
    sets: &[String],
    seed: Option<u64>,
) -> Result<serde_json::Value, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let value: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    apply_overrides(value, sets, seed)
}

/// Apply `--set key=value` overrides (dotted paths) and an optional seed
/// override to an already-loaded config value.
fn apply_overrides(
    mut value: serde_json::Value,
    sets: &[String],
    seed: Option<u64>,
) -> Result<serde_json::Value, CliError> {
    for assignment in sets {
        let (key, raw) = assignment
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("--set needs key=value, got {assignment}")))?;
        let parsed: serde_json::Value = serde_json::from_str(raw)
            .unwrap_or_else(|_| serde_json::Value::String(raw.to_string()));
        let (parent, last) = match key.rsplit_once('.') {
            Some((p, l)) => (format!("/{}", p.replace('.', "/")), l),
            None => (String::new(), key),
        };
        let node = if parent.is_empty() {
            &mut value
        } else {
            value
                .pointer_mut(&parent)
                .ok_or_else(|| CliError::Config(format!("cannot set {key}: missing parent")))?
        };
        node.as_object_mut()
            .ok_or_else(|| CliError::Config(format!("cannot set {key}: not an object")))?
            .insert(last.to_string(), parsed);
    }
    if let Some(s) = effective_seed(seed) {
        if let Some(obj) = value.as_object_mut() {
            obj.insert("seed".into(), serde_json::json!(s));
        }
    }
    Ok(value)
}

fn parse<T: serde::de::DeserializeOwned>(value: serde_json::Value) -> Result<T, CliError> {
    serde_json::from_value(value).map_err(|e| CliError::Config(e.to_string()))
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.cmd {
        Cmd::Simulate {
            config,
            out,
            count,
            seed,
            set,
        } => {
            let spec: SceneSpec = parse(load_config(&config, &set, seed)?)?;
            spec.validate().map_err(CliError::from)?;
            for i in 0..count {
                let mut s = spec.clone();
                if i > 0 {
                    s.seed = mix_seed(spec.seed, i as u64);
                }
                let scene = mix_scene(&s)?;
                let dir = out.join(format!("scene_{i:03}"));
                write_scene(&dir, &scene)?;
                println!("wrote {} (seed {})", dir.display(), s.seed);
            }
            Ok(())
        }
        Cmd::Train {
            config,
            out,
            seed,
            set,
        } => {
            let cfg: ExperimentConfig = parse(load_config(&config, &set, seed)?)?;
            cfg.validate().map_err(CliError::from)?;
            let outcome = train(&cfg, &out)?;
            let last = outcome.rows.last();
            println!(
                "trained {} steps; final train loss {}; metrics at {}",
                cfg.steps,
                last.map(|r| format!("{:.6}", r.train_loss))
                    .unwrap_or_else(|| "n/a".into()),
                outcome.metrics_path.display()
            );
            Ok(())
        }
        Cmd::Eval {
            checkpoint,
            config,
            out,
            scenes,
            seed,
            set,
        } => {
            let (store, echo) = asyncmic::attention::load_checkpoint(&checkpoint)?;
            let cfg_value = match config {
                Some(path) => load_config(&path, &set, seed)?,
                None => apply_overrides(echo, &set, seed)?,
            };
            let cfg: ExperimentConfig = parse(cfg_value)?;
            cfg.validate().map_err(CliError::from)?;
            let model = Model::from_store(&cfg.backbone, store)?;
            let seeds = cfg.eval_seeds(scenes.unwrap_or(cfg.eval_scenes));
            let summary = evaluate(&model, &cfg.scenes, cfg.target_strategy, &seeds)?;
            std::fs::create_dir_all(&out).map_err(asyncmic::Error::from)?;
            write_eval_csv(&out.join("eval.csv"), &summary.per_scene)?;
            println!(
                "{}",
                serde_json::json!({
                    "n_scenes": summary.n_scenes,
                    "loss": summary.loss,
                    "cd_est_db": summary.cd_est_db,
                    "cd_noisy_db": summary.cd_noisy_db,
                    "align_acc": summary.align_acc,
                })
            );
            Ok(())
        }
        Cmd::Compare {
            config,
            out,
            kinds,
            seed,
            set,
        } => {
            let cfg: ExperimentConfig = parse(load_config(&config, &set, seed)?)?;
            cfg.validate().map_err(CliError::from)?;
            let kinds: Vec<AttentionModuleKind> = kinds
                .iter()
                .map(|k| {
                    serde_json::from_value(serde_json::Value::String(k.clone()))
                        .map_err(|_| CliError::Config(format!("unknown module kind {k}")))
                })
                .collect::<Result<_, _>>()?;
            let report = compare_modules(&cfg, &kinds, &out)?;
            for e in &report.entries {
                println!(
                    "{}: val loss {}",
                    e.kind.label(),
                    e.final_val_loss
                        .map(|v| format!("{v:.6}"))
                        .unwrap_or_else(|| "n/a".into())
                );
            }
            println!("report at {}", out.join("report.md").display());
            Ok(())
        }
        Cmd::Bench {
            config,
            out,
            seed,
            set,
        } => {
            let cfg: BenchConfig = match config {
                Some(path) => parse(load_config(&path, &set, seed)?)?,
                None => {
                    let mut c = BenchConfig::default();
                    if let Some(s) = effective_seed(seed) {
                        c.seed = s;
                    }
                    c
                }
            };
            let points = run_bench(&cfg)?;
            std::fs::create_dir_all(&out).map_err(asyncmic::Error::from)?;
            write_csv(&out.join("bench.csv"), &points)?;
            let mut ts = cfg.t_values.clone();
            ts.sort_unstable();
            for pair in ts.windows(2) {
                if pair[1] == 2 * pair[0] {
                    for kind in [
                        AttentionModuleKind::FullXAttn,
                        AttentionModuleKind::WindowedXAttn,
                    ] {
                        if let Some(r) = doubling_ratio(&points, kind, pair[0], pair[1]) {
                            println!(
                                "{} T {} -> {}: peak memory ratio {r:.3}",
                                kind.label(),
                                pair[0],
                                pair[1]
                            );
                        }
                    }
                }
            }
            println!("bench CSV at {}", out.join("bench.csv").display());
            Ok(())
        }
        Cmd::Gradcheck { seed } => {
            let seed = effective_seed(seed).unwrap_or(0);
            let results = gradcheck::check_all(seed)?;
            let mut ok = true;
            for r in &results {
                ok &= r.passed();
                println!(
                    "{:<24} max rel err {:.3e} (tol {:.0e}) {}",
                    r.name,
                    r.max_rel_err,
                    r.tolerance,
                    if r.passed() { "PASS" } else { "FAIL" }
                );
            }
            if ok {
                Ok(())
            } else {
                Err(CliError::Runtime("gradient check failed".into()))
            }
        }
    }
}
