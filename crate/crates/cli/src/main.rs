use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use ddm_core::config::InitialSpec;
use ddm_core::report::{Provenance, Report};
use ddm_core::{par, Arith};

mod commands;

/// Dynamically defined outer measures on two-sided shift spaces.
#[derive(Debug, Parser)]
#[command(name = "ddm", version, about)]
struct Cli {
    /// Embedded system: g1, g2 or g3.
    #[arg(long, global = true, conflicts_with = "system")]
    preset: Option<String>,

    /// System file in TOML format.
    #[arg(long, global = true)]
    system: Option<PathBuf>,

    /// Initial distribution: nu0, nuprime:<states>, dirac:<point>, stationary or file:<path>.
    #[arg(long, global = true, default_value = "nu0")]
    initial: InitialSpec,

    /// Arithmetic; defaults to rational for `oracle` and float elsewhere.
    #[arg(long, global = true)]
    arith: Option<Arith>,

    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    output: Format,

    /// Write the report here instead of standard output.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Worker threads (0 uses every available core).
    #[arg(long, global = true, default_value_t = 0)]
    workers: usize,

    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Debug, clap::Args)]
pub struct CoverArgs {
    /// Query as `|`-separated cylinders, e.g. "m=0;w=a|m=-1;w=b,a"; defaults to the whole space.
    #[arg(long)]
    pub set: Option<String>,
    #[arg(long, default_value_t = 4)]
    pub past_depth: usize,
    #[arg(long, default_value_t = 0)]
    pub future_depth: usize,
    #[arg(long, default_value_t = 20_000_000)]
    pub node_budget: u64,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check the structural invariants of a system.
    Validate {
        /// Grid size for interval spaces.
        #[arg(long, default_value_t = 64)]
        grid: usize,
    },
    /// Outer measure of a query with its optimal cover.
    Phi {
        #[command(flatten)]
        cover: CoverArgs,
    },
    /// Path measure `phi_m(nu)` of a set in `A_m`.
    PhiM {
        #[arg(long, allow_hyphen_values = true, default_value_t = 0)]
        m: i64,
        #[arg(long)]
        set: Option<String>,
    },
    /// The sequence `Phi_(-k)(Q)` for `k = 0..=k_max`.
    PhiStar {
        #[command(flatten)]
        cover: CoverArgs,
        #[arg(long, default_value_t = 4)]
        k_max: usize,
    },
    /// `Phi(Q) <= Phi(S^-1 Q) <= Phi_(-1)(Q)` at matched depths.
    Invariance {
        #[command(flatten)]
        cover: CoverArgs,
        /// Allowed excess in float mode.
        #[arg(long, default_value_t = 1e-9)]
        slack: f64,
    },
    /// `Phi(Sigma) <= 1`, the deviation bound, and stationarity equivalence.
    NprReport {
        #[command(flatten)]
        cover: CoverArgs,
        /// Longest cylinder in the test family.
        #[arg(long, default_value_t = 3)]
        max_len: usize,
    },
    /// Exhaustive cover search on a small window, compared with the DP.
    Oracle {
        /// Window `lo:hi` with `lo <= 0`.
        #[arg(long, allow_hyphen_values = true)]
        window: String,
        #[arg(long)]
        set: Option<String>,
    },
    /// Finite-depth coding point of a past `sigma_m .. sigma_0`.
    Coding {
        #[arg(long)]
        word: String,
    },
    /// `u = log p_{sigma_1}(F(sigma))` for the word `sigma_m .. sigma_0 sigma_1`.
    Energy {
        #[arg(long)]
        word: String,
    },
    /// Martingale and Cauchy diagnostics of `p_e(F_m)` along sampled pasts.
    Martingale {
        /// Edge `e`; defaults to the first symbol.
        #[arg(long)]
        symbol: Option<String>,
        #[arg(long, default_value_t = 100)]
        samples: usize,
        #[arg(long, default_value_t = 20)]
        depth: usize,
    },
    /// Entropy of the shift under the normalized outer measure.
    Entropy {
        #[command(flatten)]
        mode: EquilibriumArgs,
    },
    /// The equilibrium identity `h = -int u`.
    Equilibrium {
        #[command(flatten)]
        mode: EquilibriumArgs,
    },
    /// Pushforward of the outer measure to the state space.
    PushforwardCheck {
        #[arg(long, default_value_t = 3)]
        past_depth: usize,
        /// Past length used to code points.
        #[arg(long, default_value_t = 1)]
        coding_len: usize,
    },
    /// Runs the acceptance suite; exits 1 if any criterion fails.
    Selftest,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    /// Exact when the system is a finite chain and `nu` is stationary.
    Auto,
    Exact,
    Estimate,
}

#[derive(Debug, clap::Args)]
pub struct EquilibriumArgs {
    #[arg(long, value_enum, default_value_t = Mode::Auto)]
    pub mode: Mode,
    #[arg(long, default_value_t = 100_000)]
    pub samples: usize,
    #[arg(long, default_value_t = 1000)]
    pub burn_in: usize,
    /// Block length of the entropy estimator.
    #[arg(long, default_value_t = 6)]
    pub block: usize,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Validate { .. } => "validate",
            Command::Phi { .. } => "phi",
            Command::PhiM { .. } => "phi-m",
            Command::PhiStar { .. } => "phi-star",
            Command::Invariance { .. } => "invariance",
            Command::NprReport { .. } => "npr-report",
            Command::Oracle { .. } => "oracle",
            Command::Coding { .. } => "coding",
            Command::Energy { .. } => "energy",
            Command::Martingale { .. } => "martingale",
            Command::Entropy { .. } => "entropy",
            Command::Equilibrium { .. } => "equilibrium",
            Command::PushforwardCheck { .. } => "pushforward-check",
            Command::Selftest => "selftest",
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: &Cli) -> ddm_core::Result<ExitCode> {
    let arith = cli.arith.unwrap_or(match cli.command {
        Command::Oracle { .. } => Arith::Rational,
        _ => Arith::Float,
    });
    let (outcome, workers) = par::with_workers(cli.workers, || {
        let ctx = commands::Context {
            preset: cli.preset.as_deref(),
            system: cli.system.as_deref(),
            initial: &cli.initial,
            arith,
            seed: cli.seed,
        };
        (commands::execute(&ctx, &cli.command), par::workers())
    });
    let outcome = outcome?;
    let mut config = serde_json::json!({
        "command": cli.command.name(),
        "system": match (&cli.preset, &cli.system) {
            (Some(p), _) => format!("preset:{p}"),
            (None, Some(path)) => format!("file:{}", path.display()),
            (None, None) => "none".into(),
        },
        "initial": cli.initial.to_string(),
        "arith": arith,
        "seed": cli.seed,
        "workers": cli.workers,
    });
    if let (Some(obj), serde_json::Value::Object(params)) = (config.as_object_mut(), outcome.params) {
        obj.extend(params);
    }
    let report = Report::new(
        cli.command.name(),
        config,
        outcome.results,
        Provenance::new(Some(cli.seed), workers),
    );
    let text = match cli.output {
        Format::Json => report.to_json() + "\n",
        Format::Csv => report.to_csv()?,
    };
    match &cli.out {
        Some(path) => std::fs::write(path, text)
            .map_err(|e| ddm_core::Error::Config(format!("cannot write `{}`: {e}", path.display())))?,
        None => print!("{text}"),
    }
    for note in &outcome.findings {
        eprintln!("finding: {note}");
    }
    Ok(if outcome.findings.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    })
}
