//! `latent-langevin`: train and reflow toy flows, compare latent samplers at
//! equal budgets, run the validation suite and plot sample clouds.
//!
//! Exit codes: 0 on success, 1 for configuration, input or validation
//! failures, 2 for numerical failures.

mod config;
mod output;
mod plot;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use latent_langevin::checkpoint;
use latent_langevin::compare::{self, ORACLE_NAME};
use latent_langevin::error::Error;
use latent_langevin::flow::{self, FlowModel};
use latent_langevin::reward::{Generator, PullbackReward, RewardSpec};
use latent_langevin::validate::{self, ValidateOptions};

use config::ExperimentConfig;
use output::ResultRow;

/// Trajectories and Euler steps behind the reported straightness.
const STRAIGHTNESS_EVAL: (usize, usize) = (1000, 100);

#[derive(Parser)]
#[command(name = "latent-langevin", version, about = "Reward-guided Langevin sampling in one-step flow latents")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML experiment config; the committed default when omitted.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, value_name = "DIR", default_value = "out")]
    out: PathBuf,
    /// Overrides the config seed.
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig::load(self.config.as_deref())?;
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        fs::create_dir_all(&self.out).with_context(|| format!("creating {}", self.out.display()))?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train a level-1 flow; writes level1.ckpt and train_loss.csv.
    Train(Common),
    /// Distill a checkpoint one level further; writes level<k+1>.ckpt.
    Reflow {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "PATH")]
        checkpoint: PathBuf,
    },
    /// Equal-budget sampler comparison against the exact target.
    Compare {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "PATH")]
        checkpoint: PathBuf,
    },
    /// Gradient, oracle and stationarity checks; exits 1 if any fails.
    Validate {
        /// Test fixture: inflate the Langevin noise so stationarity fails.
        #[arg(long)]
        corrupt_update: bool,
    },
    /// Scatter SVG with one panel per CSV, in input order.
    Plot {
        #[arg(required = true, value_name = "CSV")]
        inputs: Vec<PathBuf>,
        /// Output SVG file.
        #[arg(long, value_name = "PATH", default_value = "out/samples.svg")]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            let numerical = e.chain().any(|c| c.downcast_ref::<Error>().is_some_and(Error::is_numerical));
            ExitCode::from(if numerical { 2 } else { 1 })
        }
    }
}

fn run(command: Command) -> Result<ExitCode> {
    match command {
        Command::Train(common) => train(&common),
        Command::Reflow { common, checkpoint } => reflow(&common, &checkpoint),
        Command::Compare { common, checkpoint } => compare(&common, &checkpoint),
        Command::Validate { corrupt_update } => validate(corrupt_update),
        Command::Plot { inputs, out } => plot(&inputs, &out),
    }?;
    Ok(ExitCode::SUCCESS)
}

fn load_checkpoint(path: &Path) -> Result<FlowModel> {
    checkpoint::load(path).with_context(|| format!("loading checkpoint {}", path.display()))
}

fn straightness(model: &FlowModel, seed: u64) -> Result<f64> {
    Ok(flow::straightness(model, STRAIGHTNESS_EVAL.0, STRAIGHTNESS_EVAL.1, seed)?)
}

fn train(common: &Common) -> Result<()> {
    let cfg = common.load()?;
    let pipeline = cfg.pipeline()?;
    let (model, report) = flow::train(&cfg.mixture()?, &pipeline.base)?;
    let path = common.out.join("level1.ckpt");
    checkpoint::save(&model, &path)?;
    output::write_loss(&common.out.join("train_loss.csv"), &report.loss_trace)?;
    println!("wrote {}", path.display());
    println!("straightness level 1: {}", output::float(straightness(&model, cfg.seed)?));
    Ok(())
}

fn reflow(common: &Common, path: &Path) -> Result<()> {
    let cfg = common.load()?;
    let teacher = load_checkpoint(path)?;
    let pipeline = cfg.pipeline()?;
    let (student, report) = flow::reflow_distill(&teacher, &pipeline.reflow, pipeline.integration_steps)?;
    let level = student.rectification_level;
    let out = common.out.join(format!("level{level}.ckpt"));
    checkpoint::save(&student, &out)?;
    output::write_loss(&common.out.join(format!("reflow_loss_level{level}.csv")), &report.loss_trace)?;
    println!("wrote {}", out.display());
    println!(
        "straightness level {}: {} -> level {level}: {}",
        teacher.rectification_level,
        output::float(straightness(&teacher, cfg.seed)?),
        output::float(straightness(&student, cfg.seed)?)
    );
    Ok(())
}

fn compare(common: &Common, path: &Path) -> Result<()> {
    let cfg = common.load()?;
    let compare_cfg = cfg.compare()?;
    let model = load_checkpoint(path)?;
    let pr = PullbackReward::new(RewardSpec::ToyMixture, Generator::Flow(Arc::new(model)))?;
    let report = compare::run(&pr, &compare_cfg)?;

    let samples = common.out.join("samples");
    fs::create_dir_all(&samples)?;
    output::write_points(&samples.join(format!("{ORACLE_NAME}_latent.csv")), report.oracle.points.view())?;
    output::write_points(&samples.join(format!("{ORACLE_NAME}_data.csv")), report.oracle_data.view())?;
    let mut rows = vec![
        ResultRow::new(ORACLE_NAME, "mean_reward", report.oracle_mean_reward),
        ResultRow::new(ORACLE_NAME, "effective_sample_size", report.oracle.effective_sample_size),
        ResultRow::new(ORACLE_NAME, "proposals", report.oracle.proposals as f64),
    ];
    push_modes(&mut rows, ORACLE_NAME, &report.oracle_modes.fractions, report.oracle_modes.leftover);
    for m in &report.methods {
        output::write_points(&samples.join(format!("{}_latent.csv", m.name)), m.latents.view())?;
        output::write_points(&samples.join(format!("{}_data.csv", m.name)), m.data.view())?;
        output::write_points(&samples.join(format!("{}_returned.csv", m.name)), m.returned.view())?;
        rows.extend([
            ResultRow::new(&m.name, "mmd", m.mmd.value),
            ResultRow::new(&m.name, "mmd_unbiased", m.mmd.raw),
            ResultRow::new(&m.name, "mmd_bandwidth", m.mmd.bandwidth),
            ResultRow::new(&m.name, "energy_statistic", m.two_sample.statistic),
            ResultRow::new(&m.name, "energy_p_value", m.two_sample.p_value),
            ResultRow::new(&m.name, "mean_reward_final", m.mean_reward_final),
            ResultRow::new(&m.name, "mean_reward_returned", m.mean_reward_returned),
            ResultRow::new(&m.name, "mean_nfe", m.threshold.mean_nfe.unwrap_or(f64::NAN)),
            ResultRow::new(&m.name, "success_rate", m.threshold.success_rate),
        ]);
        push_modes(&mut rows, &m.name, &m.modes.fractions, m.modes.leftover);
        println!(
            "{:<20} mmd {:.5}  energy p {:.3}  mean reward {:.4}  success {:.3}",
            m.name, m.mmd.value, m.two_sample.p_value, m.mean_reward_final, m.threshold.success_rate
        );
    }
    let results = common.out.join("results.csv");
    output::write_results(&results, &rows, cfg.seed, &cfg.hash())?;
    println!("wrote {}", results.display());
    Ok(())
}

fn push_modes(rows: &mut Vec<ResultRow>, method: &str, fractions: &[f64], leftover: f64) {
    for (k, f) in fractions.iter().enumerate() {
        rows.push(ResultRow::new(method, &format!("mode_{k}_fraction"), *f));
    }
    rows.push(ResultRow::new(method, "mode_leftover", leftover));
}

fn validate(corrupt_update: bool) -> Result<()> {
    let report = validate::run(ValidateOptions { corrupt_update })?;
    for line in report.lines() {
        println!("{line}");
    }
    if !report.all_passed() {
        let failed = report.checks.iter().filter(|c| !c.passed).count();
        bail!("{failed} of {} checks failed", report.checks.len());
    }
    Ok(())
}

fn plot(inputs: &[PathBuf], out: &Path) -> Result<()> {
    let panels = inputs
        .iter()
        .map(|p| {
            let file = fs::File::open(p).with_context(|| format!("opening {}", p.display()))?;
            let points = plot::read_points(file).with_context(|| format!("parsing {}", p.display()))?;
            let title = p.file_stem().map_or_else(|| p.display().to_string(), |s| s.to_string_lossy().into_owned());
            Ok(plot::Panel { title, points })
        })
        .collect::<Result<Vec<_>>>()?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(out, plot::render(&panels)).with_context(|| format!("writing {}", out.display()))?;
    println!("wrote {}", out.display());
    Ok(())
}
