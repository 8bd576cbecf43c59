//! Config-driven experiment runner backing the CLI. Every experiment is a
//! plain serializable config; `run` executes it and writes two files into
//! the output directory — `<name>.csv` with one row per grid point and
//! `<name>.json` with the scenario's headline numbers. Outputs are
//! byte-identical for a fixed (config, seed): one master seed, one
//! deterministic sub-stream per grid point, results gathered in grid order
//! no matter how the worker pool schedules them.

use crate::combinatorics::{enumerate_types, log_type_class_size, multinomial_pmf};
use crate::histories::{
    block_preparation, event_statistics, ghz_block_amplitudes, qubit_x_basis, sum_rule_violation,
    Bins, HistoryEvent, HistoryFamily, Preparation,
};
use crate::nmr::{coil_sweep, CoilSweepRow};
use crate::oracle::{
    dense_averaged_post_scalar, dense_conditional_post_scalar, dense_fidelity,
    dense_outcome_density_scalar, dense_product_state, dense_reduce_single, dense_type_projector,
    embed_symmetric, types_by_index,
};
use crate::smoothing::Kernel;
use crate::symmetric::{
    averaged_post_density_scalar, conditional_post_exact, conditional_post_scalar_pure,
    fidelity_pure_mixed, fidelity_pure_pure, outcome_density_scalar_pure, reduce_single_molecule,
    sample_record_scalar, ObservableBasis, SymmetricPureState,
};
use crate::tomography::{
    bloch_state, posterior_concentration, qubit_axes, simulate_tomography, trace_distance,
    NamedBasis, PriorGrid, SampleMode,
};
use crate::tradeoff::{
    bad_outcome_probability, conditional_deficiency, conditional_fidelity,
    conditional_fidelity_threshold, sample_scalar_outcome, scaling_law_fit, tradeoff_sweep,
    TradeoffPoint,
};
use crate::{Error, Result};
use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;
use std::path::{Path, PathBuf};

/// Environment variable consulted for the output directory when the config
/// does not name one. Falls back to the working directory.
pub const OUTPUT_ENV: &str = "MACROTYPE_OUT_DIR";

// ---------------------------------------------------------------------------
// Configs
// ---------------------------------------------------------------------------

/// Top-level runner config: which experiment, the master seed, and where the
/// result files go. Serialized as flat JSON with a "subcommand" tag, e.g.
/// `{"subcommand": "tradeoff", "n": [100, 1000], "sigma": [0.05], "seed": 7}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    #[serde(flatten)]
    pub experiment: Experiment,
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Output directory; falls back to [`OUTPUT_ENV`], then ".".
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    /// Worker-pool size for grid evaluation (default: one per core).
    #[serde(default)]
    pub workers: Option<usize>,
}

fn default_seed() -> u64 {
    7
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "subcommand", rename_all = "kebab-case")]
pub enum Experiment {
    Types(TypesConfig),
    OracleCheck(OracleCheckConfig),
    Tradeoff(TradeoffConfig),
    Conditional(ConditionalConfig),
    Histories(HistoriesConfig),
    Commutator(CommutatorConfig),
    Tomography(TomographyConfig),
    Nmr(NmrConfig),
}

impl Experiment {
    pub fn name(&self) -> &'static str {
        match self {
            Experiment::Types(_) => "types",
            Experiment::OracleCheck(_) => "oracle-check",
            Experiment::Tradeoff(_) => "tradeoff",
            Experiment::Conditional(_) => "conditional",
            Experiment::Histories(_) => "histories",
            Experiment::Commutator(_) => "commutator",
            Experiment::Tomography(_) => "tomography",
            Experiment::Nmr(_) => "nmr",
        }
    }
}

/// Enumerate the type classes of N d-level systems and their probabilities
/// under a product preparation with the given letter probabilities.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TypesConfig {
    pub n: u32,
    pub probs: Vec<f64>,
    /// Observable eigenvalues defining the scalar coordinate (default: the
    /// fraction of letter 0).
    #[serde(default)]
    pub alpha: Option<Vec<f64>>,
}

/// Random-case equivalence check of the symmetric-subspace engine against
/// the dense full-Hilbert-space reference.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OracleCheckConfig {
    #[serde(default = "default_max_qubits")]
    pub max_qubits: u32,
    #[serde(default = "default_max_qutrits")]
    pub max_qutrits: u32,
    #[serde(default = "default_cases")]
    pub cases: usize,
    #[serde(default = "default_check_sigmas")]
    pub sigmas: Vec<f64>,
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
}

fn default_max_qubits() -> u32 {
    8
}
fn default_max_qutrits() -> u32 {
    5
}
fn default_cases() -> usize {
    50
}
fn default_check_sigmas() -> Vec<f64> {
    vec![0.0, 0.1, 0.3]
}
fn default_tolerance() -> f64 {
    1e-9
}

/// Fidelity/coarseness sweep over a (N, σ) grid for a qubit product state.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TradeoffConfig {
    pub n: Vec<u32>,
    pub sigma: Vec<f64>,
    /// Letter probabilities of the prepared state (default balanced).
    #[serde(default = "default_balanced")]
    pub probs: Vec<f64>,
}

fn default_balanced() -> Vec<f64> {
    vec![0.5, 0.5]
}

/// Sample records from one (N, σ) measurement and tabulate the conditional
/// post-measurement fidelity per record.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConditionalConfig {
    pub n: u32,
    pub sigma: f64,
    #[serde(default = "default_half")]
    pub p: f64,
    #[serde(default = "default_records")]
    pub records: usize,
}

fn default_half() -> f64 {
    0.5
}
fn default_records() -> usize {
    200
}

/// Two-event history family (longitudinal then transverse type measurement)
/// over a σ list and a block-size list.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HistoriesConfig {
    pub n: u32,
    pub sigma: Vec<f64>,
    /// Entangled-block sizes; ξ=1 is the plain product preparation, ξ≥2
    /// prepares N/ξ GHZ blocks.
    #[serde(default = "default_xi")]
    pub xi: Vec<u32>,
    #[serde(default = "default_cells")]
    pub cells: usize,
}

fn default_xi() -> Vec<u32> {
    vec![1]
}
fn default_cells() -> usize {
    5
}

/// Residuals of the collective-observable commutator identity on random
/// Hermitian pairs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CommutatorConfig {
    #[serde(default = "default_commutator_ns")]
    pub n: Vec<u32>,
    #[serde(default = "default_pairs")]
    pub pairs: usize,
    #[serde(default = "default_d")]
    pub d: usize,
}

fn default_commutator_ns() -> Vec<u32> {
    vec![2, 3, 4]
}
fn default_pairs() -> usize {
    10
}
fn default_d() -> usize {
    2
}

/// Repeated Bayesian-estimation runs: three spin axes per round, grid
/// posterior, success counted as posterior mass ≥ `success_mass` within
/// trace distance 0.1 of the true state.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TomographyConfig {
    pub n: u32,
    pub sigma: f64,
    #[serde(default = "default_grid_points")]
    pub grid_points: usize,
    #[serde(default = "default_runs")]
    pub runs: usize,
    #[serde(default = "default_rounds")]
    pub rounds: usize,
    /// Bloch vector of the true state; a fresh random pure direction per run
    /// when absent.
    #[serde(default)]
    pub truth: Option<[f64; 3]>,
    /// Draw a fresh ensemble every round instead of conditioning one sample.
    #[serde(default)]
    pub fresh_batch: bool,
    #[serde(default = "default_success_mass")]
    pub success_mass: f64,
}

fn default_grid_points() -> usize {
    200
}
fn default_runs() -> usize {
    20
}
fn default_rounds() -> usize {
    1
}
fn default_success_mass() -> f64 {
    0.9
}

/// Coil-readout sweep over (λ, σ_mix) pairs at fixed sample.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NmrConfig {
    pub n: u32,
    #[serde(default = "default_gamma_t")]
    pub gamma_t: f64,
    #[serde(default = "default_half")]
    pub p: f64,
    /// (coherent width λ, thermal spread σ_mix) pairs.
    pub grid: Vec<(f64, f64)>,
}

fn default_gamma_t() -> f64 {
    1.0
}

// ---------------------------------------------------------------------------
// Rows
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TypeRow {
    pub index: usize,
    /// Letter counts joined with '-'.
    pub counts: String,
    pub coordinate: f64,
    pub probability: f64,
    pub ln_class_size: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OracleCheckRow {
    pub case: usize,
    pub n: u32,
    pub d: usize,
    pub sigma: f64,
    pub density_dev: f64,
    pub conditional_dev: f64,
    pub averaged_dev: f64,
    pub reduction_dev: f64,
    pub fidelity_dev: f64,
    pub pass: bool,
}

impl OracleCheckRow {
    pub fn max_deviation(&self) -> f64 {
        self.density_dev
            .max(self.conditional_dev)
            .max(self.averaged_dev)
            .max(self.reduction_dev)
            .max(self.fidelity_dev)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConditionalRow {
    pub record: f64,
    pub density: f64,
    pub fidelity: f64,
    pub distance_from_mean: f64,
    pub within_window: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HistoriesRow {
    pub xi: u32,
    pub sigma: f64,
    pub cells: usize,
    pub epsilon: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CommutatorRow {
    pub n: u32,
    pub pair: usize,
    /// Operator norm of [A_N, B_N]·N − C_N (an exact identity; the residual
    /// is floating-point noise).
    pub residual: f64,
    pub commutator_norm: f64,
    /// ‖[a, b]‖/N, the scale the commutator norm is bounded by.
    pub decay_bound: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TomographyRow {
    pub run: usize,
    pub concentration_005: f64,
    pub concentration_010: f64,
    pub mode_distance: f64,
    pub success: bool,
}

// ---------------------------------------------------------------------------
// Entry point
// ---------------------------------------------------------------------------

/// Summary written next to the CSV. `runtime_ms` is fixed at 0 so reruns of
/// one (config, seed) stay byte-identical.
#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub subcommand: String,
    pub seed: u64,
    pub rows: usize,
    pub runtime_ms: u64,
    pub headline: serde_json::Value,
}

#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub summary: RunSummary,
    pub csv_path: PathBuf,
    pub json_path: PathBuf,
}

/// Execute a config: evaluate the grid on the worker pool and write
/// `<subcommand>.csv` + `<subcommand>.json` into the output directory.
pub fn run(config: &ExperimentConfig) -> Result<RunArtifacts> {
    match config.workers {
        Some(k) => {
            crate::validate(k >= 1, "worker pool needs at least one thread")?;
            rayon::ThreadPoolBuilder::new()
                .num_threads(k)
                .build()
                .map_err(|e| Error::Validation(format!("worker pool: {e}")))?
                .install(|| run_inner(config))
        }
        None => run_inner(config),
    }
}

fn run_inner(config: &ExperimentConfig) -> Result<RunArtifacts> {
    let dir = resolve_out_dir(config);
    std::fs::create_dir_all(&dir)?;
    let name = config.experiment.name();
    let csv_path = dir.join(format!("{name}.csv"));
    let json_path = dir.join(format!("{name}.json"));

    let (rows, headline) = match &config.experiment {
        Experiment::Types(cfg) => {
            let rows = types_rows(cfg)?;
            let headline = types_headline(&rows);
            write_rows(&csv_path, &rows)?;
            (rows.len(), headline)
        }
        Experiment::OracleCheck(cfg) => {
            let rows = oracle_check_rows(cfg, config.seed)?;
            let worst = rows.iter().map(OracleCheckRow::max_deviation).fold(0.0, f64::max);
            let headline = json!({
                "all_pass": rows.iter().all(|r| r.pass),
                "max_deviation": worst,
                "tolerance": cfg.tolerance,
            });
            write_rows(&csv_path, &rows)?;
            (rows.len(), headline)
        }
        Experiment::Tradeoff(cfg) => {
            let rows = tradeoff_rows(cfg)?;
            let headline = tradeoff_headline(&rows);
            write_rows(&csv_path, &rows)?;
            (rows.len(), headline)
        }
        Experiment::Conditional(cfg) => {
            let (rows, headline) = conditional_rows(cfg, config.seed)?;
            write_rows(&csv_path, &rows)?;
            (rows.len(), headline)
        }
        Experiment::Histories(cfg) => {
            let rows = histories_rows(cfg)?;
            let worst = rows.iter().map(|r| r.epsilon).fold(0.0, f64::max);
            let headline = json!({ "max_epsilon": worst });
            write_rows(&csv_path, &rows)?;
            (rows.len(), headline)
        }
        Experiment::Commutator(cfg) => {
            let rows = commutator_rows(cfg, config.seed)?;
            let worst = rows.iter().map(|r| r.residual).fold(0.0, f64::max);
            let headline = json!({ "max_residual": worst });
            write_rows(&csv_path, &rows)?;
            (rows.len(), headline)
        }
        Experiment::Tomography(cfg) => {
            let rows = tomography_rows(cfg, config.seed)?;
            let successes = rows.iter().filter(|r| r.success).count();
            let headline = json!({
                "runs": rows.len(),
                "successes": successes,
                "success_mass": cfg.success_mass,
            });
            write_rows(&csv_path, &rows)?;
            (rows.len(), headline)
        }
        Experiment::Nmr(cfg) => {
            let rows = nmr_rows(cfg)?;
            let headline = json!({
                "f_post_min": rows.iter().map(|r| r.f_post).fold(f64::INFINITY, f64::min),
                "f_post_max": rows.iter().map(|r| r.f_post).fold(0.0, f64::max),
            });
            write_rows(&csv_path, &rows)?;
            (rows.len(), headline)
        }
    };

    let summary = RunSummary {
        subcommand: name.to_string(),
        seed: config.seed,
        rows,
        runtime_ms: 0,
        headline,
    };
    let mut text = serde_json::to_string_pretty(&summary)?;
    text.push('\n');
    std::fs::write(&json_path, text)?;
    Ok(RunArtifacts { summary, csv_path, json_path })
}

fn resolve_out_dir(config: &ExperimentConfig) -> PathBuf {
    config
        .out_dir
        .clone()
        .or_else(|| std::env::var_os(OUTPUT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."))
}

fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

/// One deterministic RNG per grid point: the master seed keys the cipher and
/// the grid index picks the stream, so scheduling order cannot leak into any
/// sampled value.
pub fn substream(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

// ---------------------------------------------------------------------------
// types
// ---------------------------------------------------------------------------

fn types_rows(cfg: &TypesConfig) -> Result<Vec<TypeRow>> {
    crate::validate(cfg.n >= 1, "need at least one system")?;
    crate::combinatorics::validate_prob_vector(&cfg.probs)?;
    let d = cfg.probs.len();
    let alpha = match &cfg.alpha {
        Some(a) => {
            crate::validate(a.len() == d, "alpha length differs from the letter count")?;
            a.clone()
        }
        None => std::iter::once(1.0).chain(std::iter::repeat(0.0)).take(d).collect(),
    };
    let types = enumerate_types(cfg.n, d)?;
    Ok(types
        .iter()
        .enumerate()
        .map(|(index, t)| TypeRow {
            index,
            counts: t.counts.iter().map(u32::to_string).collect::<Vec<_>>().join("-"),
            coordinate: crate::symmetric::coordinate(&t.counts, cfg.n, &alpha),
            probability: multinomial_pmf(t, &cfg.probs),
            ln_class_size: log_type_class_size(t),
        })
        .collect())
}

fn types_headline(rows: &[TypeRow]) -> serde_json::Value {
    let total: f64 = rows.iter().map(|r| r.probability).sum();
    let modal = rows
        .iter()
        .max_by(|a, b| a.probability.total_cmp(&b.probability))
        .expect("at least one type");
    json!({
        "types": rows.len(),
        "total_probability": total,
        "modal_counts": modal.counts,
        "modal_probability": modal.probability,
    })
}

// ---------------------------------------------------------------------------
// oracle-check
// ---------------------------------------------------------------------------

/// Run the engine-vs-dense-reference equivalence cases. Public so the
/// acceptance suite can reuse the exact CLI semantics.
pub fn oracle_check_rows(cfg: &OracleCheckConfig, seed: u64) -> Result<Vec<OracleCheckRow>> {
    crate::validate(cfg.cases >= 1, "need at least one case")?;
    crate::validate(cfg.max_qubits >= 2 && cfg.max_qutrits >= 2, "need at least two systems")?;
    crate::validate(!cfg.sigmas.is_empty(), "need at least one record width")?;
    crate::validate(cfg.sigmas.iter().all(|&s| s >= 0.0), "record widths must be ≥ 0")?;
    crate::validate(cfg.tolerance > 0.0, "tolerance must be positive")?;
    (0..cfg.cases as u64)
        .into_par_iter()
        .map(|i| oracle_check_case(cfg, seed, i))
        .collect()
}

fn oracle_check_case(cfg: &OracleCheckConfig, seed: u64, i: u64) -> Result<OracleCheckRow> {
    let mut rng = substream(seed, i);
    // every third case exercises d=3; the rest are qubits
    let d = if i % 3 == 2 { 3 } else { 2 };
    let max_n = if d == 2 { cfg.max_qubits } else { cfg.max_qutrits };
    let n = rng.gen_range(2..=max_n);
    let sigma = cfg.sigmas[i as usize % cfg.sigmas.len()];
    let beta = random_amplitudes(d, &mut rng);

    let alpha: Vec<f64> = std::iter::once(1.0).chain(std::iter::repeat(0.0)).take(d).collect();
    let basis = ObservableBasis::computational(alpha.clone());
    let kernel = if sigma > 0.0 { Kernel::Gaussian { sigma } } else { Kernel::Exact };

    let state = SymmetricPureState::product(&beta, n)?;
    let v_dense = dense_product_state(&beta, n)?;
    let rho_dense = &v_dense * v_dense.adjoint();
    let b = symmetric_isometry(n, d)?;

    let (density_dev, conditional_dev, mut fidelity_dev) = if kernel.is_exact() {
        // probabilities of every type, and the conditional collapse onto the
        // modal one
        let pmf = state.type_pmf();
        let types = enumerate_types(n, d)?;
        let mut density_dev = 0.0_f64;
        for (t, &p_sym) in types.iter().zip(&pmf) {
            let proj = dense_type_projector(n, &basis, t)?;
            let p_dense = (&proj * &rho_dense).trace().re;
            density_dev = density_dev.max((p_sym - p_dense).abs());
        }
        let modal = pmf
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(idx, _)| idx)
            .expect("non-empty pmf");
        let post = conditional_post_exact(&state, modal);
        let w = embed_symmetric(&post)?;
        let proj = dense_type_projector(n, &basis, &types[modal])?;
        let num = &proj * &rho_dense * &proj;
        let dense_post = num.unscale(num.trace().re);
        let conditional_dev = (&w * w.adjoint() - &dense_post).norm();
        let f_dev = (fidelity_pure_pure(&state, &post)
            - dense_fidelity(&rho_dense, &dense_post)?)
        .abs();
        (density_dev, conditional_dev, f_dev)
    } else {
        // a record sampled from the outcome density, then the conditioned
        // state at that record
        let ell = sample_record_scalar(&state, &alpha, &kernel, &mut rng);
        let p_sym = outcome_density_scalar_pure(&state, &alpha, &kernel, ell);
        let p_dense = dense_outcome_density_scalar(&rho_dense, n, &basis, &kernel, ell)?;
        let post = conditional_post_scalar_pure(&state, &alpha, &kernel, ell)?;
        let w = embed_symmetric(&post)?;
        let dense_post = dense_conditional_post_scalar(&rho_dense, n, &basis, &kernel, ell)?;
        let conditional_dev = (&w * w.adjoint() - &dense_post).norm();
        let f_dev = (fidelity_pure_pure(&state, &post)
            - dense_fidelity(&rho_dense, &dense_post)?)
        .abs();
        ((p_sym - p_dense).abs(), conditional_dev, f_dev)
    };

    // record-averaged channel, its single-molecule reduction, and the
    // disturbance fidelity
    let avg = averaged_post_density_scalar(&state, &alpha, &kernel)?;
    let dense_avg = dense_averaged_post_scalar(&rho_dense, n, &basis, &kernel)?;
    let averaged_dev = (&b * &avg.mat * b.adjoint() - &dense_avg).norm();
    let reduction_dev =
        (reduce_single_molecule(&avg) - dense_reduce_single(&dense_avg, n, d)).norm();
    fidelity_dev = fidelity_dev.max(
        (fidelity_pure_mixed(&state, &avg) - dense_fidelity(&rho_dense, &dense_avg)?).abs(),
    );

    let row = OracleCheckRow {
        case: i as usize,
        n,
        d,
        sigma,
        density_dev,
        conditional_dev,
        averaged_dev,
        reduction_dev,
        fidelity_dev,
        pass: false,
    };
    Ok(OracleCheckRow { pass: row.max_deviation() <= cfg.tolerance, ..row })
}

fn random_amplitudes<R: Rng>(d: usize, rng: &mut R) -> Vec<Complex64> {
    loop {
        let v: Vec<Complex64> = (0..d)
            .map(|_| Complex64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5))
            .collect();
        let norm = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if norm > 1e-3 {
            return v.into_iter().map(|z| z / norm).collect();
        }
    }
}

/// Isometry from the type basis into the full product space: column L is the
/// normalized uniform superposition of the sequences of type L.
fn symmetric_isometry(n: u32, d: usize) -> Result<DMatrix<Complex64>> {
    let (per_index, types) = types_by_index(n, d)?;
    let inv_sqrt: Vec<f64> = types.iter().map(|t| (-0.5 * log_type_class_size(t)).exp()).collect();
    let mut b = DMatrix::<Complex64>::zeros(per_index.len(), types.len());
    for (idx, &ti) in per_index.iter().enumerate() {
        b[(idx, ti)] = Complex64::new(inv_sqrt[ti], 0.0);
    }
    Ok(b)
}

// ---------------------------------------------------------------------------
// tradeoff
// ---------------------------------------------------------------------------

fn tradeoff_rows(cfg: &TradeoffConfig) -> Result<Vec<TradeoffPoint>> {
    crate::validate(!cfg.n.is_empty() && !cfg.sigma.is_empty(), "empty grid")?;
    crate::validate(cfg.sigma.iter().all(|&s| s > 0.0), "record widths must be positive")?;
    crate::combinatorics::validate_prob_vector(&cfg.probs)?;
    tradeoff_sweep(&cfg.probs, &cfg.n, &cfg.sigma)
}

fn tradeoff_headline(rows: &[TradeoffPoint]) -> serde_json::Value {
    let violations = rows.iter().filter(|r| r.f_bound > 0.0 && r.f_exact < r.f_bound).count();
    match scaling_law_fit(rows, 10.0) {
        Ok((slope, r2)) => json!({
            "bound_violations": violations,
            "scaling_slope": slope,
            "scaling_r_squared": r2,
        }),
        Err(_) => json!({ "bound_violations": violations }),
    }
}

// ---------------------------------------------------------------------------
// conditional
// ---------------------------------------------------------------------------

fn conditional_rows(
    cfg: &ConditionalConfig,
    seed: u64,
) -> Result<(Vec<ConditionalRow>, serde_json::Value)> {
    crate::validate(cfg.n >= 2, "need at least two systems")?;
    crate::validate(cfg.sigma > 0.0, "record width must be positive")?;
    crate::validate((0.0..=1.0).contains(&cfg.p), "letter probability outside [0, 1]")?;
    crate::validate(cfg.records >= 1, "need at least one record")?;
    let r = [cfg.p, 1.0 - cfg.p];
    let window = conditional_fidelity_threshold(cfg.sigma).ok();
    let rows: Vec<ConditionalRow> = (0..cfg.records as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = substream(seed, i);
            let ell = sample_scalar_outcome(&r, cfg.n, cfg.sigma, &mut rng);
            let cf = conditional_fidelity(&r, cfg.n, cfg.sigma, ell)?;
            let distance = (ell - cfg.p).abs();
            Ok(ConditionalRow {
                record: ell,
                density: cf.outcome_density,
                fidelity: cf.normalized,
                distance_from_mean: distance,
                within_window: window.map_or(false, |w| distance <= w),
            })
        })
        .collect::<Result<_>>()?;

    let outside = rows.iter().filter(|row| !row.within_window).count();
    let worst_in_window = rows
        .iter()
        .filter(|row| row.within_window)
        .map(|row| 1.0 - row.fidelity)
        .fold(0.0, f64::max);
    let headline = match window {
        Some(w) => {
            let (tail_bound, tail_exact) = bad_outcome_probability(&r, cfg.n, cfg.sigma, w)?;
            json!({
                "window": w,
                "fraction_outside": outside as f64 / rows.len() as f64,
                "tail_bound": tail_bound,
                "tail_exact": tail_exact,
                "max_infidelity_in_window": worst_in_window,
                "certified_deficiency": conditional_deficiency(cfg.n, cfg.sigma, cfg.p),
            })
        }
        None => json!({ "window": null }),
    };
    Ok((rows, headline))
}

// ---------------------------------------------------------------------------
// histories
// ---------------------------------------------------------------------------

fn histories_rows(cfg: &HistoriesConfig) -> Result<Vec<HistoriesRow>> {
    crate::validate(cfg.n >= 2, "need at least two systems")?;
    crate::validate(!cfg.sigma.is_empty(), "need at least one record width")?;
    crate::validate(cfg.sigma.iter().all(|&s| s >= 0.0), "record widths must be ≥ 0")?;
    crate::validate(cfg.cells >= 2, "need at least two cells")?;
    crate::validate(!cfg.xi.is_empty(), "need at least one block size")?;
    for &xi in &cfg.xi {
        crate::validate(xi >= 1 && cfg.n % xi == 0, "block size must divide N")?;
    }
    let grid: Vec<(u32, f64)> = cfg
        .xi
        .iter()
        .flat_map(|&xi| cfg.sigma.iter().map(move |&s| (xi, s)))
        .collect();
    grid.par_iter()
        .map(|&(xi, sigma)| {
            Ok(HistoriesRow {
                xi,
                sigma,
                cells: cfg.cells,
                epsilon: two_event_violation(cfg.n, xi, sigma, cfg.cells)?,
            })
        })
        .collect()
}

/// ε for the longitudinal-then-transverse family on N/ξ GHZ blocks (plain
/// |+⟩ product at ξ=1), with each event binned around its own record mean at
/// cell width max(σ, 1/N).
pub fn two_event_violation(n: u32, xi: u32, sigma: f64, cells: usize) -> Result<f64> {
    let s = Complex64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
    let prep = if xi == 1 {
        Preparation::pure_product(vec![s, s], n)?
    } else {
        block_preparation(xi, n, 2, ghz_block_amplitudes(xi, 2, s, s))?
    };
    let kernel = if sigma > 0.0 { Kernel::Gaussian { sigma } } else { Kernel::Exact };
    let width = sigma.max(1.0 / n as f64);
    let events = [ObservableBasis::computational(vec![1.0, 0.0]), qubit_x_basis()]
        .into_iter()
        .map(|basis| {
            let (mean, _) = event_statistics(&prep, &basis)?;
            Ok(HistoryEvent {
                basis,
                kernel: kernel.clone(),
                bins: Bins::centered(mean, width, cells)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    sum_rule_violation(&HistoryFamily::new(events, prep)?)
}

// ---------------------------------------------------------------------------
// commutator
// ---------------------------------------------------------------------------

fn commutator_rows(cfg: &CommutatorConfig, seed: u64) -> Result<Vec<CommutatorRow>> {
    crate::validate(!cfg.n.is_empty(), "need at least one ensemble size")?;
    crate::validate(cfg.n.iter().all(|&n| n >= 2), "ensemble sizes must be ≥ 2")?;
    crate::validate(cfg.pairs >= 1, "need at least one observable pair")?;
    crate::validate(cfg.d >= 2, "single-system dimension must be ≥ 2")?;
    let grid: Vec<(usize, u32, usize)> = cfg
        .n
        .iter()
        .enumerate()
        .flat_map(|(ni, &n)| (0..cfg.pairs).map(move |pair| (ni, n, pair)))
        .collect();
    grid.par_iter()
        .map(|&(ni, n, pair)| {
            let mut rng = substream(seed, (ni * cfg.pairs + pair) as u64);
            let a = random_hermitian(cfg.d, &mut rng);
            let b = random_hermitian(cfg.d, &mut rng);
            let (lhs, rhs) = crate::histories::commutator_relation(&a, &b, n)?;
            let residual = operator_norm(&(&lhs - &rhs).scale(n as f64));
            let c = &a * &b - &b * &a;
            Ok(CommutatorRow {
                n,
                pair,
                residual,
                commutator_norm: operator_norm(&lhs),
                decay_bound: operator_norm(&c) / n as f64,
            })
        })
        .collect()
}

fn random_hermitian<R: Rng>(d: usize, rng: &mut R) -> DMatrix<Complex64> {
    let g = DMatrix::from_fn(d, d, |_, _| {
        Complex64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5)
    });
    (&g + g.adjoint()).scale(0.5)
}

fn operator_norm(m: &DMatrix<Complex64>) -> f64 {
    m.clone().singular_values().max()
}

// ---------------------------------------------------------------------------
// tomography
// ---------------------------------------------------------------------------

fn tomography_rows(cfg: &TomographyConfig, seed: u64) -> Result<Vec<TomographyRow>> {
    crate::validate(cfg.n >= 2, "need at least two systems")?;
    crate::validate(cfg.sigma > 0.0, "record width must be positive")?;
    crate::validate(cfg.grid_points >= 5, "grid needs at least one point per shell")?;
    crate::validate(cfg.runs >= 1 && cfg.rounds >= 1, "need at least one run and round")?;
    crate::validate(
        (0.0..=1.0).contains(&cfg.success_mass),
        "success mass outside [0, 1]",
    )?;
    let prior = PriorGrid::fibonacci_shells(cfg.grid_points / 5, &[0.2, 0.4, 0.6, 0.8, 1.0])?;
    let bases: Vec<NamedBasis> = std::iter::repeat_with(qubit_axes)
        .take(cfg.rounds)
        .flatten()
        .collect();
    let mode = if cfg.fresh_batch { SampleMode::FreshBatch } else { SampleMode::SameSample };
    (0..cfg.runs as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = substream(seed, i);
            let truth = match cfg.truth {
                Some(v) => bloch_state(v)?,
                // same-sample conditioning needs a pure state, so default
                // truths are random points of the Bloch sphere's surface
                None => bloch_state(random_unit_vector(&mut rng))?,
            };
            let run_seed = rng.gen::<u64>();
            let (record, posterior) =
                simulate_tomography(&truth, &bases, &prior, cfg.sigma, cfg.n, run_seed, mode)?;
            let mode_state = &posterior.states()[record.mode_index];
            let concentration_010 = posterior_concentration(&posterior, &truth, 0.10)?;
            Ok(TomographyRow {
                run: i as usize,
                concentration_005: posterior_concentration(&posterior, &truth, 0.05)?,
                concentration_010,
                mode_distance: trace_distance(mode_state, &truth)?,
                success: concentration_010 >= cfg.success_mass,
            })
        })
        .collect()
}

fn random_unit_vector<R: Rng>(rng: &mut R) -> [f64; 3] {
    let z: f64 = rng.gen_range(-1.0..1.0);
    let phi: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    let rho = (1.0 - z * z).sqrt();
    [rho * phi.cos(), rho * phi.sin(), z]
}

// ---------------------------------------------------------------------------
// nmr
// ---------------------------------------------------------------------------

fn nmr_rows(cfg: &NmrConfig) -> Result<Vec<CoilSweepRow>> {
    crate::validate(!cfg.grid.is_empty(), "empty coil grid")?;
    coil_sweep(cfg.p, cfg.n, cfg.gamma_t, &cfg.grid)
}

// ---------------------------------------------------------------------------
// Grid specs ("0.02,0.1" lists and "100..10000[:k]" geometric ranges)
// ---------------------------------------------------------------------------

/// Parse a scalar grid: either a comma list ("0.02,0.05,0.1") or a geometric
/// range "lo..hi" with an optional point count ":k" (default: one point per
/// decade, endpoints included).
pub fn parse_f64_grid(spec: &str) -> Result<Vec<f64>> {
    let spec = spec.trim();
    if let Some(range) = split_range(spec)? {
        return Ok(range);
    }
    spec.split(',')
        .map(|tok| {
            tok.trim()
                .parse::<f64>()
                .map_err(|_| Error::Validation(format!("not a number: {tok:?}")))
        })
        .collect()
}

/// Integer grid with the same syntax; geometric ranges are rounded to the
/// nearest integer and deduplicated.
pub fn parse_u32_grid(spec: &str) -> Result<Vec<u32>> {
    let mut vals: Vec<u32> = parse_f64_grid(spec)?
        .into_iter()
        .map(|v| {
            crate::validate(v >= 1.0 && v <= u32::MAX as f64, "value outside u32 range")?;
            Ok(v.round() as u32)
        })
        .collect::<Result<_>>()?;
    vals.dedup();
    Ok(vals)
}

fn split_range(spec: &str) -> Result<Option<Vec<f64>>> {
    let Some((lo, rest)) = spec.split_once("..") else {
        return Ok(None);
    };
    let (hi, count) = match rest.split_once(':') {
        Some((hi, k)) => {
            let k: usize = k
                .trim()
                .parse()
                .map_err(|_| Error::Validation(format!("not a point count: {k:?}")))?;
            (hi, Some(k))
        }
        None => (rest, None),
    };
    let lo: f64 = lo
        .trim()
        .parse()
        .map_err(|_| Error::Validation(format!("not a number: {lo:?}")))?;
    let hi: f64 = hi
        .trim()
        .parse()
        .map_err(|_| Error::Validation(format!("not a number: {hi:?}")))?;
    crate::validate(lo > 0.0 && hi >= lo, "geometric range needs 0 < lo ≤ hi")?;
    let k = match count {
        Some(k) => {
            crate::validate(k >= 2 || (k == 1 && hi == lo), "point count must be ≥ 2")?;
            k
        }
        None => ((hi / lo).log10().round() as usize).max(1) + 1,
    };
    if k == 1 {
        return Ok(Some(vec![lo]));
    }
    let ratio = (hi / lo).powf(1.0 / (k - 1) as f64);
    Ok(Some((0..k).map(|i| lo * ratio.powi(i as i32)).collect()))
}

/// Zip λ and σ_mix lists into coil grid pairs, broadcasting a single value
/// against a longer partner.
pub fn zip_coil_grid(lambda: &[f64], sigma_mix: &[f64]) -> Result<Vec<(f64, f64)>> {
    crate::validate(!lambda.is_empty() && !sigma_mix.is_empty(), "empty coil grid")?;
    let len = lambda.len().max(sigma_mix.len());
    crate::validate(
        (lambda.len() == len || lambda.len() == 1)
            && (sigma_mix.len() == len || sigma_mix.len() == 1),
        "coherent-width and thermal-spread lists must match in length (or be single values)",
    )?;
    Ok((0..len)
        .map(|i| {
            (
                lambda[if lambda.len() == 1 { 0 } else { i }],
                sigma_mix[if sigma_mix.len() == 1 { 0 } else { i }],
            )
        })
        .collect())
}
