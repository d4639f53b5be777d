use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use focusgrav::io::{RunConfig, Section};
use focusgrav::param::MethodKind;
use focusgrav::StopReason;
use focusgrav_cli::{
    apply_overrides, cmd_forward, cmd_invert, cmd_study, cmd_synth, exit_code, render_report, Overrides,
    EXIT_NOT_CONVERGED,
};

/// Focusing gravity inversion with the minimum-support stabilizer.
#[derive(Parser)]
#[command(name = "focusgrav", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Noise-free gravity of a density model.
    Forward(Common),
    /// Synthetic model plus seeded noisy observation files.
    Synth(Common),
    /// Invert one observation file.
    Invert(Common),
    /// Invert every noise copy of a synthetic experiment and summarize.
    Study(Common),
}

#[derive(Args)]
struct Common {
    /// Run configuration (TOML).
    #[arg(short, long)]
    config: PathBuf,
    /// Parameter-choice rule; `study` runs all three unless given.
    #[arg(long, value_parser = parse_method)]
    method: Option<MethodKind>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long)]
    alpha_tol: Option<f64>,
    #[arg(long)]
    upre_grid: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    epsilon: Option<f64>,
    /// Noise level 1, 2 or 3.
    #[arg(long)]
    level: Option<u8>,
    #[arg(long)]
    eta1: Option<f64>,
    #[arg(long)]
    eta2: Option<f64>,
    #[arg(long)]
    copies: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Density model read by `forward`.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Observation file read by `invert`.
    #[arg(long)]
    obs: Option<PathBuf>,
    /// Reference model for `invert`.
    #[arg(long)]
    prior: Option<PathBuf>,
    /// True model; adds relative errors to the `invert` log.
    #[arg(long)]
    exact: Option<PathBuf>,
    /// Extra section slice such as `y=525`; repeatable.
    #[arg(long = "section", value_parser = parse_section)]
    sections: Vec<Section>,
}

fn parse_method(s: &str) -> Result<MethodKind, String> {
    MethodKind::ALL
        .into_iter()
        .find(|m| m.name() == s)
        .ok_or_else(|| format!("unknown method `{s}` (expected chi2, upre or mdp)"))
}

fn parse_section(s: &str) -> Result<Section, String> {
    s.parse()
}

impl Common {
    fn overrides(&self) -> Overrides {
        Overrides {
            method: self.method,
            gamma: self.gamma,
            max_iters: self.max_iters,
            alpha_tol: self.alpha_tol,
            upre_grid: self.upre_grid,
            seed: self.seed,
            beta: self.beta,
            epsilon: self.epsilon,
            level: self.level,
            eta1: self.eta1,
            eta2: self.eta2,
            copies: self.copies,
            out: self.out.clone(),
            model: self.model.clone(),
            observations: self.obs.clone(),
            prior: self.prior.clone(),
            exact: self.exact.clone(),
            sections: self.sections.clone(),
        }
    }
}

fn run(cli: Cli) -> focusgrav::Result<ExitCode> {
    let (Command::Forward(c) | Command::Synth(c) | Command::Invert(c) | Command::Study(c)) = &cli.command;
    let mut cfg = RunConfig::load(&c.config)?;
    apply_overrides(&mut cfg, &c.overrides())?;

    match &cli.command {
        Command::Forward(_) => {
            println!("{}", cmd_forward(&cfg)?.display());
        }
        Command::Synth(_) => {
            for p in cmd_synth(&cfg)? {
                println!("{}", p.display());
            }
        }
        Command::Invert(_) => {
            let s = cmd_invert(&cfg)?;
            println!(
                "iterations {} stop {} chi2 {:.3} threshold {:.3} alpha {}",
                s.iterations,
                s.reason.name(),
                s.chi2,
                s.threshold,
                s.alpha.map_or("-".into(), |a| format!("{a:.6e}"))
            );
            if let Some(e) = s.relative_error {
                println!("relative error {e:.6}");
            }
            if s.reason == StopReason::MaxIterations {
                eprintln!("warning: stopped at max_iters without reaching the noise level");
                return Ok(ExitCode::from(EXIT_NOT_CONVERGED));
            }
        }
        Command::Study(_) => {
            let methods = match c.method {
                Some(m) => vec![m],
                None => MethodKind::ALL.to_vec(),
            };
            print!("{}", render_report(&cmd_study(&cfg, &methods)?));
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
