//! Thin CLI over [`macrotype::runner`]: flags build an `ExperimentConfig`
//! (or `run --config` loads one from JSON), the runner writes CSV + JSON,
//! and the process exits 0 on success, 1 on I/O failure, 2 on validation
//! failure, 3 on a resource-cap breach.

use clap::{Args, Parser, Subcommand};
use macrotype::runner::{
    self, CommutatorConfig, ConditionalConfig, Experiment, ExperimentConfig, HistoriesConfig,
    NmrConfig, OracleCheckConfig, TomographyConfig, TradeoffConfig, TypesConfig,
};
use macrotype::{Error, Result};
use std::path::PathBuf;

#[derive(Parser)]
#[command(
    name = "macrotype",
    version,
    about = "Coarse collective measurements on finite ensembles: config-driven experiment runner"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Master seed; every stochastic output is a deterministic function of it
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Output directory (default: $MACROTYPE_OUT_DIR, then ".")
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker-pool size for grid evaluation
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment described by a JSON config file
    Run {
        /// JSON file holding an ExperimentConfig (fields: subcommand + its
        /// parameters, seed, out_dir, workers)
        #[arg(long)]
        config: PathBuf,
        /// Override the config's output directory
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override the config's seed
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Enumerate the type classes of a product preparation
    Types {
        #[arg(long, alias = "N")]
        n: u32,
        /// Letter probabilities, e.g. "0.5,0.5"
        #[arg(long, default_value = "0.5,0.5")]
        probs: String,
        /// Observable eigenvalues (default: fraction of letter 0)
        #[arg(long)]
        alpha: Option<String>,
        #[command(flatten)]
        common: Common,
    },
    /// Check the symmetric engine against the dense reference on random cases
    OracleCheck {
        #[arg(long, default_value_t = 8)]
        max_qubits: u32,
        #[arg(long, default_value_t = 5)]
        max_qutrits: u32,
        #[arg(long, default_value_t = 50)]
        cases: usize,
        /// Record widths to cycle through (0 = exact measurement)
        #[arg(long, default_value = "0,0.1,0.3")]
        sigmas: String,
        #[arg(long, default_value_t = 1e-9)]
        tolerance: f64,
        #[command(flatten)]
        common: Common,
    },
    /// Sweep the accuracy/disturbance tradeoff over an (N, σ) grid
    Tradeoff {
        /// Ensemble sizes: comma list or geometric range "100..10000[:k]"
        #[arg(long, alias = "N")]
        n: String,
        /// Record widths: comma list or geometric range
        #[arg(long)]
        sigma: String,
        /// Letter probabilities of the prepared state
        #[arg(long, default_value = "0.5,0.5")]
        beta: String,
        #[command(flatten)]
        common: Common,
    },
    /// Sample records and tabulate the conditional post-measurement fidelity
    Conditional {
        #[arg(long, alias = "N")]
        n: u32,
        #[arg(long)]
        sigma: f64,
        /// Up-probability of the prepared qubits
        #[arg(long, default_value_t = 0.5)]
        p: f64,
        #[arg(long, default_value_t = 200)]
        records: usize,
        #[command(flatten)]
        common: Common,
    },
    /// Consistency defect of the longitudinal-then-transverse history family
    Histories {
        #[arg(long, alias = "N")]
        n: u32,
        /// Record widths to sweep (0 = exact projectors)
        #[arg(long)]
        sigma: String,
        /// Entangled-block sizes (1 = product preparation)
        #[arg(long, default_value = "1")]
        xi: String,
        #[arg(long, default_value_t = 5)]
        cells: usize,
        #[command(flatten)]
        common: Common,
    },
    /// Residuals of the collective-observable commutator identity
    Commutator {
        #[arg(long, alias = "N", default_value = "2,3,4")]
        n: String,
        #[arg(long, default_value_t = 10)]
        pairs: usize,
        #[arg(long, default_value_t = 2)]
        d: usize,
        #[command(flatten)]
        common: Common,
    },
    /// Repeated Bayesian-estimation runs on a Bloch-grid posterior
    Tomography {
        #[arg(long, alias = "N")]
        n: u32,
        #[arg(long)]
        sigma: f64,
        #[arg(long, default_value_t = 200)]
        grid_points: usize,
        #[arg(long, default_value_t = 20)]
        runs: usize,
        #[arg(long, default_value_t = 1)]
        rounds: usize,
        /// Bloch vector "x,y,z" of the true state (default: random per run)
        #[arg(long)]
        truth: Option<String>,
        /// Draw a fresh ensemble every round instead of conditioning one
        #[arg(long)]
        fresh_batch: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Coil-readout sweep over (λ, σ_mix) pairs
    Nmr {
        #[arg(long, alias = "N")]
        n: u32,
        #[arg(long, default_value_t = 1.0)]
        gamma_t: f64,
        /// Up-probability of the prepared qubits
        #[arg(long, default_value_t = 0.5)]
        p: f64,
        /// Coherent widths, zipped against --sigma-mix
        #[arg(long)]
        lambda: String,
        /// Thermal spreads (single values broadcast)
        #[arg(long, default_value = "0")]
        sigma_mix: String,
        #[command(flatten)]
        common: Common,
    },
}

fn build_config(command: Command) -> Result<ExperimentConfig> {
    let assemble = |experiment: Experiment, common: Common| ExperimentConfig {
        experiment,
        seed: common.seed,
        out_dir: common.out,
        workers: common.workers,
    };
    Ok(match command {
        Command::Run { config, out, seed } => {
            let text = std::fs::read_to_string(&config)?;
            let mut parsed: ExperimentConfig = serde_json::from_str(&text)?;
            if let Some(out) = out {
                parsed.out_dir = Some(out);
            }
            if let Some(seed) = seed {
                parsed.seed = seed;
            }
            parsed
        }
        Command::Types { n, probs, alpha, common } => assemble(
            Experiment::Types(TypesConfig {
                n,
                probs: runner::parse_f64_grid(&probs)?,
                alpha: alpha.as_deref().map(runner::parse_f64_grid).transpose()?,
            }),
            common,
        ),
        Command::OracleCheck { max_qubits, max_qutrits, cases, sigmas, tolerance, common } => {
            assemble(
                Experiment::OracleCheck(OracleCheckConfig {
                    max_qubits,
                    max_qutrits,
                    cases,
                    sigmas: runner::parse_f64_grid(&sigmas)?,
                    tolerance,
                }),
                common,
            )
        }
        Command::Tradeoff { n, sigma, beta, common } => assemble(
            Experiment::Tradeoff(TradeoffConfig {
                n: runner::parse_u32_grid(&n)?,
                sigma: runner::parse_f64_grid(&sigma)?,
                probs: runner::parse_f64_grid(&beta)?,
            }),
            common,
        ),
        Command::Conditional { n, sigma, p, records, common } => assemble(
            Experiment::Conditional(ConditionalConfig { n, sigma, p, records }),
            common,
        ),
        Command::Histories { n, sigma, xi, cells, common } => assemble(
            Experiment::Histories(HistoriesConfig {
                n,
                sigma: runner::parse_f64_grid(&sigma)?,
                xi: runner::parse_u32_grid(&xi)?,
                cells,
            }),
            common,
        ),
        Command::Commutator { n, pairs, d, common } => assemble(
            Experiment::Commutator(CommutatorConfig {
                n: runner::parse_u32_grid(&n)?,
                pairs,
                d,
            }),
            common,
        ),
        Command::Tomography {
            n,
            sigma,
            grid_points,
            runs,
            rounds,
            truth,
            fresh_batch,
            common,
        } => {
            let truth = match truth {
                Some(spec) => {
                    let v = runner::parse_f64_grid(&spec)?;
                    if v.len() != 3 {
                        return Err(Error::Validation(
                            "a Bloch vector needs exactly three components".into(),
                        ));
                    }
                    Some([v[0], v[1], v[2]])
                }
                None => None,
            };
            assemble(
                Experiment::Tomography(TomographyConfig {
                    n,
                    sigma,
                    grid_points,
                    runs,
                    rounds,
                    truth,
                    fresh_batch,
                    success_mass: 0.9,
                }),
                common,
            )
        }
        Command::Nmr { n, gamma_t, p, lambda, sigma_mix, common } => assemble(
            Experiment::Nmr(NmrConfig {
                n,
                gamma_t,
                p,
                grid: runner::zip_coil_grid(
                    &runner::parse_f64_grid(&lambda)?,
                    &runner::parse_f64_grid(&sigma_mix)?,
                )?,
            }),
            common,
        ),
    })
}

fn main() {
    let cli = Cli::parse();
    let config = match build_config(cli.command) {
        Ok(config) => config,
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(e.exit_code());
        }
    };
    match runner::run(&config) {
        Ok(artifacts) => {
            println!(
                "{}",
                serde_json::to_string_pretty(&artifacts.summary).expect("summary serializes")
            );
            println!("rows: {}", artifacts.csv_path.display());
        }
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(e.exit_code());
        }
    }
}
