use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use pphi::harness::{self, Command, Method, RunConfig, Setting, VariationalMode};
use pphi::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "pphi", version, about = "Lattice P(phi)_2 sampling and diagnostics")]
struct Cli {
    #[command(flatten)]
    overrides: Overrides,

    #[command(subcommand)]
    command: Sub,
}

/// Settings that override the configuration file.
#[derive(Args, Debug)]
struct Overrides {
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    n: Option<usize>,
    #[arg(long, global = true)]
    mass2: Option<f64>,
    /// Comma-separated coefficients a_1,...,a_N.
    #[arg(long, global = true, value_delimiter = ',', allow_hyphen_values = true)]
    poly: Option<Vec<f64>>,
    /// Number, "auto" or "inf".
    #[arg(long, global = true)]
    cutoff_e: Option<String>,
    #[arg(long, global = true)]
    rho: Option<f64>,
    /// Number or "auto".
    #[arg(long, global = true)]
    tmax: Option<String>,
    #[arg(long, global = true)]
    mc_inner: Option<usize>,
    #[arg(long, global = true)]
    replicas: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Sub {
    /// Exact GFF samples.
    SampleGff {
        /// Also write each replica's scale path.
        #[arg(long)]
        paths: bool,
    },
    /// Samples of the interacting field.
    SamplePphi {
        #[arg(long, value_enum)]
        method: Option<Method>,
        #[arg(long)]
        paths: bool,
    },
    /// Difference-field regularity and coupling checks.
    CouplingDiagnostics,
    /// Variational objective for open-loop and feedback drifts.
    Variational {
        #[arg(long, value_enum)]
        mode: Option<VariationalMode>,
    },
    /// Gumbel fit of centered maxima from field files or a statistics file.
    Extremes {
        #[arg(long)]
        input: PathBuf,
    },
    /// Norms of one field file.
    Norms {
        #[arg(long)]
        input: PathBuf,
    },
    /// Flow-versus-MCMC comparison on the configured model.
    Validate,
}

fn build_config(cli: &Cli) -> Result<(Command, RunConfig)> {
    let o = &cli.overrides;
    let mut cfg = match &o.config {
        Some(path) => RunConfig::from_toml(&std::fs::read_to_string(path)?)?,
        None => RunConfig::default(),
    };
    if let Some(v) = &o.out {
        cfg.out_dir = v.clone();
    }
    if let Some(v) = o.seed {
        cfg.seed = v;
    }
    if let Some(v) = o.n {
        cfg.model.n = v;
    }
    if let Some(v) = o.mass2 {
        cfg.model.mass2 = v;
    }
    if let Some(v) = &o.poly {
        cfg.model.poly = v.clone();
    }
    if let Some(v) = &o.cutoff_e {
        cfg.model.cutoff_e = v.parse()?;
    }
    if let Some(v) = o.rho {
        cfg.grid.rho = v;
    }
    if let Some(v) = &o.tmax {
        cfg.grid.tmax = match v.parse()? {
            Setting::Infinite => return Err(Error::Config("tmax cannot be \"inf\"".into())),
            s => s,
        };
    }
    if let Some(v) = o.mc_inner {
        cfg.sampler.mc_inner = v;
    }
    if let Some(v) = o.replicas {
        cfg.sampler.replicas = v;
    }
    let command = match &cli.command {
        Sub::SampleGff { paths } => {
            cfg.sampler.write_paths |= paths;
            Command::SampleGff
        }
        Sub::SamplePphi { method, paths } => {
            if let Some(m) = method {
                cfg.sampler.method = *m;
            }
            cfg.sampler.write_paths |= paths;
            Command::SamplePphi
        }
        Sub::CouplingDiagnostics => Command::CouplingDiagnostics,
        Sub::Variational { mode } => {
            if let Some(m) = mode {
                cfg.variational.mode = *m;
            }
            Command::Variational
        }
        Sub::Extremes { input } => Command::Extremes {
            input: input.clone(),
        },
        Sub::Norms { input } => Command::Norms {
            input: input.clone(),
        },
        Sub::Validate => Command::Validate,
    };
    Ok((command, cfg))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = build_config(&cli).and_then(|(command, cfg)| harness::run(&command, &cfg));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("pphi: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
