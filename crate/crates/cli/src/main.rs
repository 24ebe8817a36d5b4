use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use anyhow::Result;
use clap::{Parser, Subcommand, ValueEnum};

use aploss_cli::config::Settings;
use aploss_cli::runs::Experiment;
use aploss_core::trainer::{Batching, LossKind};

#[derive(Parser, Debug)]
#[command(name = "aploss", version, about = "AP-loss ranking experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// `key = value` file applied over the experiment defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Step budget; for `bound` this sets a single horizon.
    #[arg(long, global = true)]
    steps: Option<usize>,
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[arg(long, global = true)]
    delta: Option<f64>,
    #[arg(long, global = true)]
    interpolated: Option<OnOff>,
    /// ap, ap-margin, auc, smooth-ap or perceptron.
    #[arg(long, global = true)]
    loss: Option<LossKind>,
    /// pooled or per-image.
    #[arg(long, global = true)]
    batching: Option<Batching>,
    /// Number of consecutive seeds to run.
    #[arg(long, global = true)]
    seeds: Option<u64>,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Unit-step updates on separable data, many seeds.
    Convergence,
    /// Smoothed AP-loss against error-driven training on three samples.
    Counterexample,
    /// Average AP-loss of the margin update against the offline bound.
    Bound,
    /// Error-driven updates against cross-entropy and hinge gradients.
    Consistency,
    /// Pooled against per-image minibatches on shifted images.
    Scoreshift,
    /// Train several losses and compare held-out AP.
    Losscmp,
    /// Training curves on synthetic or CSV data.
    Curves,
    /// Write a synthetic dataset.
    GenData,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum OnOff {
    On,
    Off,
}

impl Command {
    fn experiment(self) -> Experiment {
        match self {
            Command::Convergence => Experiment::Convergence,
            Command::Counterexample => Experiment::Counterexample,
            Command::Bound => Experiment::Bound,
            Command::Consistency => Experiment::Consistency,
            Command::Scoreshift => Experiment::Scoreshift,
            Command::Losscmp => Experiment::Losscmp,
            Command::Curves => Experiment::Curves,
            Command::GenData => Experiment::GenData,
        }
    }
}

fn resolve(cli: &Cli, experiment: Experiment) -> Result<Settings> {
    let mut s = experiment.defaults();
    if let Some(path) = &cli.config {
        s.overlay_file(path)?;
    }
    let mut flags: Vec<(&str, &str, String)> = Vec::new();
    if let Some(v) = cli.seed {
        flags.push(("--seed", "seed", v.to_string()));
    }
    if let Some(v) = cli.steps {
        let key = if experiment == Experiment::Bound {
            "horizons"
        } else {
            "max_steps"
        };
        flags.push(("--steps", key, v.to_string()));
    }
    if let Some(v) = cli.delta {
        flags.push(("--delta", "delta", v.to_string()));
    }
    if let Some(v) = cli.interpolated {
        flags.push((
            "--interpolated",
            "interpolated",
            matches!(v, OnOff::On).to_string(),
        ));
    }
    if let Some(v) = cli.loss {
        flags.push(("--loss", "loss_kind", v.as_str().to_string()));
    }
    if let Some(v) = cli.batching {
        flags.push(("--batching", "batching", v.as_str().to_string()));
    }
    if let Some(v) = cli.seeds {
        flags.push(("--seeds", "seeds", v.to_string()));
    }
    for (flag, key, value) in flags {
        s.overlay(key, &value, flag)?;
    }
    Ok(s)
}

fn run(cli: &Cli) -> Result<bool> {
    let experiment = cli.command.experiment();
    let settings = resolve(cli, experiment)?;
    let start = Instant::now();
    let mut report = experiment.run(&settings)?;
    report.wall_clock_seconds = start.elapsed().as_secs_f64();
    report.write(&cli.out, &settings.echo())?;
    for a in &report.assertions {
        let verdict = if a.passed { "PASS" } else { "FAIL" };
        println!("{verdict} {}: {}", a.name, a.detail);
    }
    println!(
        "{} finished in {:.2}s, results in {}",
        experiment.name(),
        report.wall_clock_seconds,
        cli.out.display()
    );
    Ok(report.passed())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
