use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use aida_core::data::{generate_synthetic, write_jsonl};
use aida_core::experiment::{self, ExperimentConfig};
use aida_core::trainer::{self, Checkpoint, Mode, TrainOptions};
use aida_core::{AidaError, Result};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "aida", version, about = "Partial-and-imbalanced adversarial domain adaptation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment configuration (TOML, or JSON with a .json extension).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    mode: Option<Mode>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Override a configuration field, e.g. `--set train.lambda2=0.6`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic domain pair, its hierarchy and a manifest.
    Generate(Common),
    /// Train one configuration and write its report and checkpoint.
    Train {
        #[command(flatten)]
        common: Common,
        /// Continue from a checkpoint written by an earlier `train`.
        #[arg(long)]
        resume: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        checkpoint_every: u64,
    },
    /// Recompute metrics for a checkpoint.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Compare AIDA with the internal baselines over several seeds.
    Compare {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', default_value = "aida,cdan,dann,source-only")]
        modes: Vec<Mode>,
        #[arg(long, value_delimiter = ',', default_value = "0,1,2,3,4")]
        seeds: Vec<u64>,
    },
    /// Sensitivity grid over the two trade-off weights.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', default_value = "0.2,0.4,0.6,0.8,1.0,2.0")]
        lambda2: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_value = "0.1,0.3,0.5,0.7,0.9,1.0")]
        lambda3: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_value = "0")]
        seeds: Vec<u64>,
    },
    /// Remove the reward, hierarchy or adversarial term one at a time.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
        seeds: Vec<u64>,
    },
    /// Print the effective configuration as TOML.
    Config(Common),
}

fn load_config(c: &Common) -> Result<ExperimentConfig> {
    let base = match &c.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    let mut cfg = base.with_overrides(&c.overrides)?;
    if let Some(s) = c.seed {
        cfg.train.seed = s;
    }
    if let Some(m) = c.mode {
        cfg.train.mode = m;
    }
    Ok(cfg)
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

fn print_report(r: &experiment::MetricsReport) {
    let e = &r.evaluation;
    println!("mode            {}", r.mode);
    println!("seed            {}", r.seed);
    println!("fingerprint     {}", r.config_fingerprint);
    for (split, acc) in &e.accuracy {
        println!("accuracy/{split:<6} {:.2}", 100.0 * acc);
    }
    println!("target macro-F1 {:.2}", 100.0 * e.macro_f1);
    for (class, f) in &e.per_class_f1 {
        println!("  F1 {class:<10} {:.2}", 100.0 * f);
    }
    println!("A-distance      {:.3}", e.a_distance);
    println!("adapt. error    {:.3}", e.adaptability_error);
}

fn generate(c: &Common) -> Result<()> {
    let cfg = load_config(c)?;
    let mut spec = cfg.data.synthetic.clone();
    spec.seed = cfg.train.seed;
    let data = generate_synthetic(&spec)?;
    fs::create_dir_all(&c.out)?;
    write_jsonl(&c.out.join("source.jsonl"), &data.source, &data.tree, data.vocabulary.as_ref())?;
    write_jsonl(&c.out.join("target.jsonl"), &data.target, &data.tree, data.vocabulary.as_ref())?;
    fs::write(c.out.join("hierarchy.json"), data.tree.to_json())?;
    let manifest = serde_json::json!({
        "spec": spec,
        "seed": spec.seed,
        "source_examples": data.source.len(),
        "target_examples": data.target.len(),
        "source_counts": data.source.class_counts(data.tree.num_leaves()),
        "tree_fingerprint": data.tree.fingerprint(),
    });
    write_json(&c.out.join("manifest.json"), &manifest)?;
    println!(
        "wrote {} source and {} target examples to {}",
        data.source.len(),
        data.target.len(),
        c.out.display()
    );
    Ok(())
}

fn train(c: &Common, resume: Option<&Path>, checkpoint_every: u64) -> Result<()> {
    let (cfg, state) = match resume {
        Some(path) => {
            let ck = Checkpoint::load(path)?;
            let embedded = ck
                .experiment
                .clone()
                .ok_or_else(|| AidaError::Checkpoint("checkpoint carries no experiment configuration".into()))?;
            let cfg: ExperimentConfig = serde_json::from_value(embedded)?;
            (cfg, Some(ck))
        }
        None => (load_config(c)?, None),
    };
    let prepared = experiment::prepare(&cfg)?;
    let options = TrainOptions {
        checkpoint_dir: Some(c.out.clone()),
        checkpoint_every: if checkpoint_every == 0 { cfg.train.iterations } else { checkpoint_every },
        stop_after: None,
        vocabulary: prepared.vocabulary.clone(),
        experiment: Some(serde_json::to_value(&cfg)?),
    };
    let data = prepared.train_data();
    let state = match state {
        Some(ck) => {
            ck.check_tree(&prepared.tree)?;
            trainer::resume(ck.state, &cfg.train, &data, &prepared.tree, &options)?
        }
        None => trainer::train(&cfg.train, &prepared.model_spec, &data, &prepared.tree, &options)?,
    };
    let report = experiment::report_for(&cfg, &state, &prepared)?;
    report.write(&c.out.join("report.json"))?;
    fs::write(c.out.join("config.toml"), cfg.to_toml()?)?;
    print_report(&report);
    Ok(())
}

fn evaluate(c: &Common, checkpoint: &Path) -> Result<()> {
    let ck = Checkpoint::load(checkpoint)?;
    let embedded = ck
        .experiment
        .clone()
        .ok_or_else(|| AidaError::Checkpoint("checkpoint carries no experiment configuration".into()))?;
    let cfg: ExperimentConfig = serde_json::from_value(embedded)?;
    let prepared = experiment::prepare(&cfg)?;
    ck.check_tree(&prepared.tree)?;
    let report = experiment::report_for(&cfg, &ck.state, &prepared)?;
    report.write(&c.out.join("report.json"))?;
    print_report(&report);
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate(c) => generate(&c),
        Command::Train {
            common,
            resume,
            checkpoint_every,
        } => train(&common, resume.as_deref(), checkpoint_every),
        Command::Evaluate { common, checkpoint } => evaluate(&common, &checkpoint),
        Command::Compare { common, modes, seeds } => {
            let cfg = load_config(&common)?;
            let r = experiment::compare(&cfg, &modes, &seeds, &common.out)?;
            print!("{}", experiment::format_table(&r.summaries));
            Ok(())
        }
        Command::Sweep {
            common,
            lambda2,
            lambda3,
            seeds,
        } => {
            let cfg = load_config(&common)?;
            let r = experiment::sweep(&cfg, &lambda2, &lambda3, &seeds, &common.out)?;
            print!("{}", experiment::format_table(&r.summaries));
            Ok(())
        }
        Command::Ablate { common, seeds } => {
            let cfg = load_config(&common)?;
            let r = experiment::ablate(&cfg, &seeds, &common.out)?;
            print!("{}", experiment::format_table(&r.summaries));
            Ok(())
        }
        Command::Config(c) => {
            print!("{}", load_config(&c)?.to_toml()?);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let body = serde_json::json!({ "error": { "kind": e.kind(), "message": e.to_string() } });
            eprintln!("{body}");
            ExitCode::FAILURE
        }
    }
}
