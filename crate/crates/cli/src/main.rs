use std::path::PathBuf;
use std::process::ExitCode;

use beliefnet::detection::EtaMode;
use beliefnet::experiments::{run_experiment, ExperimentConfig, ExperimentKind, OutputFormat};
use beliefnet::Error;
use clap::{Args, CommandFactory, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "beliefnet", version, about = "Distributed hypothesis detection experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Belief convergence of every agent on a random network.
    Convergence(Flags),
    /// Cost on a network against its optimally lazified chain.
    OptimizeGap(Flags),
    /// Spectrum and cost under sequential link removal.
    LinkFailure(Flags),
    /// Two receivers of a noisy 2-bit message.
    ChannelDemo(Flags),
    /// Informative agent at the center against a leaf of a star.
    Centrality(Flags),
    /// Network and model taken from the config file.
    Custom(Flags),
}

#[derive(Args)]
struct Flags {
    /// JSON run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seed, comma-separated list, or inclusive range `a..b`.
    #[arg(long)]
    seed: Option<String>,
    /// Number of rounds T.
    #[arg(long)]
    horizon: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Confidence parameter of the cost bound, in (0, 1).
    #[arg(long)]
    delta: Option<f64>,
    /// `theorem1` or a positive number.
    #[arg(long)]
    eta: Option<String>,
    /// csv or json.
    #[arg(long)]
    format: Option<String>,
    /// Exit with status 2 if any embedded acceptance check fails.
    #[arg(long)]
    check: bool,
}

fn parse_seeds(text: &str) -> Result<Vec<u64>, Error> {
    let bad = || Error::Config(format!("cannot parse seeds {text:?}"));
    let mut seeds = Vec::new();
    for part in text.split(',').map(str::trim) {
        if let Some((a, b)) = part.split_once("..") {
            let a: u64 = a.parse().map_err(|_| bad())?;
            let b: u64 = b.trim_start_matches('=').parse().map_err(|_| bad())?;
            if b < a {
                return Err(bad());
            }
            seeds.extend(a..=b);
        } else {
            seeds.push(part.parse().map_err(|_| bad())?);
        }
    }
    Ok(seeds)
}

fn build_config(kind: ExperimentKind, flags: &Flags) -> Result<ExperimentConfig, Error> {
    let mut cfg = match &flags.config {
        Some(path) => {
            let cfg = ExperimentConfig::load(path)?;
            if cfg.experiment != kind {
                return Err(Error::Config(format!(
                    "{}: config is for `{}`, not `{}`",
                    path.display(),
                    cfg.experiment.name(),
                    kind.name()
                )));
            }
            cfg
        }
        None => ExperimentConfig::defaults(kind),
    };
    if let Some(s) = &flags.seed {
        cfg.seeds = parse_seeds(s)?;
    }
    if let Some(h) = flags.horizon {
        cfg.horizon = h;
    }
    if let Some(d) = flags.delta {
        cfg.delta = d;
    }
    if let Some(e) = &flags.eta {
        cfg.eta = e.parse::<EtaMode>()?;
    }
    if let Some(f) = &flags.format {
        cfg.format = f.parse::<OutputFormat>()?;
    }
    if let Some(o) = &flags.out {
        cfg.output = Some(o.clone());
    }
    cfg.validate()?;
    Ok(cfg)
}

fn execute(kind: ExperimentKind, flags: &Flags) -> Result<bool, Error> {
    let cfg = build_config(kind, flags)?;
    let out = run_experiment(&cfg)?;
    let dir = cfg
        .output
        .clone()
        .unwrap_or_else(|| PathBuf::from("results").join(kind.name()));
    let files = out.write(&dir, cfg.format)?;
    let r = &out.report;
    println!(
        "{}: {} seed(s), {} file(s) in {}, {:.2}s",
        kind.name(),
        r.seeds.len(),
        files.len(),
        dir.display(),
        r.wall_clock_secs
    );
    if let Some(f) = r.bound_satisfaction {
        println!("cost bound satisfied in {:.3} of seeds", f);
    }
    for c in &r.checks {
        println!("[{}] {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    for n in &r.notes {
        println!("note: {n}");
    }
    Ok(r.all_checks_passed())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            eprint!("{}", e.render());
            let mut cmd = Cli::command();
            let sub = std::env::args().nth(1).unwrap_or_default();
            match cmd.find_subcommand_mut(&sub) {
                Some(s) => eprintln!("\n{}", s.render_help()),
                None => eprintln!("\n{}", cmd.render_help()),
            }
            return ExitCode::from(1);
        }
    };
    let (kind, flags) = match &cli.command {
        Command::Convergence(f) => (ExperimentKind::Convergence, f),
        Command::OptimizeGap(f) => (ExperimentKind::OptimizeGap, f),
        Command::LinkFailure(f) => (ExperimentKind::LinkFailure, f),
        Command::ChannelDemo(f) => (ExperimentKind::ChannelDemo, f),
        Command::Centrality(f) => (ExperimentKind::CentralityAllocation, f),
        Command::Custom(f) => (ExperimentKind::Custom, f),
    };
    match execute(kind, flags) {
        Ok(passed) if flags.check && !passed => ExitCode::from(2),
        Ok(_) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::parse_seeds;

    #[test]
    fn seed_forms() {
        assert_eq!(parse_seeds("7").unwrap(), vec![7]);
        assert_eq!(parse_seeds("1,4, 9").unwrap(), vec![1, 4, 9]);
        assert_eq!(parse_seeds("3..5").unwrap(), vec![3, 4, 5]);
        assert_eq!(parse_seeds("1..=2,8").unwrap(), vec![1, 2, 8]);
        assert!(parse_seeds("5..3").is_err());
        assert!(parse_seeds("x").is_err());
    }
}
