//! Bulk state estimation on exchangeable ensembles. A discrete prior over
//! single-molecule states stands in for the de Finetti measure: the ensemble
//! state is ρ_N = Σ_i w_i ν_i^⊗N, a coarse collective record updates the
//! weights by Bayes' rule, and repeated records along informationally
//! complete axes concentrate the posterior around the true state without
//! ever resolving individual molecules.

use crate::combinatorics::{enumerate_types, multinomial_ln_pmf, TypeVector};
use crate::smoothing::Kernel;
use crate::symmetric::{rotate_basis, sample_type, ObservableBasis, SymmetricPureState};
use crate::{Error, Result};
use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

/// Discrete prior/posterior over single-molecule states: pairs (ν_i, w_i)
/// with Σ w_i = 1. The exchangeable ensemble it represents is Σ w_i ν_i^⊗N.
#[derive(Debug, Clone)]
pub struct PriorGrid {
    states: Vec<DMatrix<Complex64>>,
    weights: Vec<f64>,
}

impl PriorGrid {
    pub fn new(states: Vec<DMatrix<Complex64>>, weights: Vec<f64>) -> Result<Self> {
        crate::validate(!states.is_empty(), "prior grid is empty")?;
        crate::validate(states.len() == weights.len(), "states/weights length mismatch")?;
        let d = states[0].nrows();
        for nu in &states {
            crate::validate(nu.nrows() == d && nu.ncols() == d, "mixed dimensions in grid")?;
            validate_density(nu)?;
        }
        crate::validate(weights.iter().all(|&w| w >= 0.0), "negative prior weight")?;
        let total: f64 = weights.iter().sum();
        crate::validate((total - 1.0).abs() <= 1e-10, "prior weights do not sum to 1")?;
        Ok(Self { states, weights })
    }

    /// Point mass on a single state.
    pub fn delta(state: DMatrix<Complex64>) -> Result<Self> {
        Self::new(vec![state], vec![1.0])
    }

    /// Uniform weights over the given states.
    pub fn uniform(states: Vec<DMatrix<Complex64>>) -> Result<Self> {
        let k = states.len();
        crate::validate(k > 0, "prior grid is empty")?;
        Self::new(states, vec![1.0 / k as f64; k])
    }

    /// Qubit grid: `n_dirs` Fibonacci-spiral Bloch directions crossed with
    /// the given radial shells, uniform weights. Directions are spread with
    /// the golden angle, so any prefix of them is close to isotropic.
    pub fn fibonacci_shells(n_dirs: usize, shells: &[f64]) -> Result<Self> {
        crate::validate(n_dirs > 0 && !shells.is_empty(), "empty grid request")?;
        for &r in shells {
            crate::validate(r > 0.0 && r <= 1.0, "shell radius outside (0, 1]")?;
        }
        let golden = std::f64::consts::PI * (3.0 - 5.0_f64.sqrt());
        let mut states = Vec::with_capacity(n_dirs * shells.len());
        for &r in shells {
            for i in 0..n_dirs {
                let z = 1.0 - 2.0 * (i as f64 + 0.5) / n_dirs as f64;
                let rho = (1.0 - z * z).max(0.0).sqrt();
                let phi = golden * i as f64;
                let dir = [rho * phi.cos(), rho * phi.sin(), z];
                states.push(bloch_state([r * dir[0], r * dir[1], r * dir[2]])?);
            }
        }
        Self::uniform(states)
    }

    /// Default qubit estimation grid: 40 directions × 5 shells = 200 points.
    pub fn qubit_default() -> Self {
        Self::fibonacci_shells(40, &[0.2, 0.4, 0.6, 0.8, 1.0]).expect("static grid is valid")
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn states(&self) -> &[DMatrix<Complex64>] {
        &self.states
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Index of the heaviest grid point.
    pub fn mode_index(&self) -> usize {
        self.weights
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
            .unwrap_or(0)
    }

    /// Weighted average Σ w_i ν_i — the single-molecule marginal of the
    /// exchangeable ensemble.
    pub fn mean_state(&self) -> DMatrix<Complex64> {
        let d = self.states[0].nrows();
        let mut acc = DMatrix::<Complex64>::zeros(d, d);
        for (nu, &w) in self.states.iter().zip(&self.weights) {
            acc += nu.scale(w);
        }
        acc
    }
}

pub(crate) fn validate_density(nu: &DMatrix<Complex64>) -> Result<()> {
    let d = nu.nrows();
    crate::validate(d > 0 && nu.ncols() == d, "state is not square")?;
    crate::validate((nu - nu.adjoint()).norm() <= 1e-9, "state is not Hermitian")?;
    let tr: Complex64 = (0..d).map(|i| nu[(i, i)]).sum();
    crate::validate((tr - Complex64::new(1.0, 0.0)).norm() <= 1e-9, "state trace is not 1")?;
    let eig = nu.clone().symmetric_eigen();
    crate::validate(eig.eigenvalues.iter().all(|&l| l >= -1e-9), "state is not PSD")?;
    Ok(())
}

/// Qubit state from a Bloch vector: ν = (I + v·σ⃗)/2, |v| ≤ 1.
pub fn bloch_state(v: [f64; 3]) -> Result<DMatrix<Complex64>> {
    let r2 = v[0] * v[0] + v[1] * v[1] + v[2] * v[2];
    crate::validate(r2 <= 1.0 + 1e-12, "Bloch vector longer than 1")?;
    Ok(DMatrix::from_row_slice(
        2,
        2,
        &[
            Complex64::new(0.5 * (1.0 + v[2]), 0.0),
            Complex64::new(0.5 * v[0], -0.5 * v[1]),
            Complex64::new(0.5 * v[0], 0.5 * v[1]),
            Complex64::new(0.5 * (1.0 - v[2]), 0.0),
        ],
    ))
}

/// Trace distance ½‖a − b‖₁ between two density matrices.
pub fn trace_distance(a: &DMatrix<Complex64>, b: &DMatrix<Complex64>) -> Result<f64> {
    crate::validate(a.nrows() == b.nrows() && a.ncols() == b.ncols(), "dimension mismatch")?;
    let diff = a - b;
    let eig = diff.symmetric_eigen();
    Ok(0.5 * eig.eigenvalues.iter().map(|l| l.abs()).sum::<f64>())
}

/// Probability of reading letter j when one molecule in state ν is measured
/// in the given eigenbasis: p_j = ⟨x_j|ν|x_j⟩.
pub fn letter_probabilities(nu: &DMatrix<Complex64>, basis: &ObservableBasis) -> Vec<f64> {
    let rotated = basis.u.adjoint() * nu * &basis.u;
    (0..nu.nrows()).map(|j| rotated[(j, j)].re.max(0.0)).collect()
}

fn logsumexp(terms: &[f64]) -> f64 {
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + terms.iter().map(|&t| (t - max).exp()).sum::<f64>().ln()
}

/// ln P(record ℓ | ν^⊗N measured in `basis`): the type counts are multinomial
/// with letter probabilities diag(u†νu), and each count fraction is smeared
/// by the kernel. Exact for product components — off-diagonal elements of ν
/// in the measurement basis never enter type-sector traces.
///
/// For qubits the multinomial sum is truncated to the union of ±8 standard
/// deviations around the binomial mean and around the recorded value, which
/// covers every term within e⁻³² of the dominant one.
pub fn component_ln_density(
    nu: &DMatrix<Complex64>,
    n: u32,
    basis: &ObservableBasis,
    kernel: &Kernel,
    ell: &[f64],
) -> Result<f64> {
    let d = nu.nrows();
    crate::validate(ell.len() == d, "record length must match the number of letters")?;
    let p = letter_probabilities(nu, basis);
    if d == 2 {
        let nf = n as f64;
        let sd_pmf = (nf * p[0] * p[1]).sqrt();
        let center_pmf = nf * p[0];
        let center_ell = (ell[0].clamp(0.0, 1.0)) * nf;
        let sd_ell = 8.0 * kernel.sigma() * nf;
        let lo = (center_pmf - 8.0 * sd_pmf).min(center_ell - sd_ell).floor().max(0.0) as u32;
        let hi = (center_pmf + 8.0 * sd_pmf).max(center_ell + sd_ell).ceil().min(nf) as u32;
        let mut terms = Vec::with_capacity((hi - lo + 1) as usize);
        for k in lo..=hi {
            let t = TypeVector { counts: vec![k, n - k] };
            let ln_pmf = multinomial_ln_pmf(&t, &p);
            if ln_pmf == f64::NEG_INFINITY {
                continue;
            }
            terms.push(ln_pmf + kernel.ln_density(&t.fractions(), ell));
        }
        Ok(logsumexp(&terms))
    } else {
        let types = enumerate_types(n, d)?;
        let mut terms = Vec::with_capacity(types.len());
        for t in &types {
            let ln_pmf = multinomial_ln_pmf(t, &p);
            if ln_pmf == f64::NEG_INFINITY {
                continue;
            }
            terms.push(ln_pmf + kernel.ln_density(&t.fractions(), ell));
        }
        Ok(logsumexp(&terms))
    }
}

/// Record density of the exchangeable ensemble: Σ_i w_i P(ℓ | ν_i^⊗N).
pub fn exchangeable_outcome_density(
    prior: &PriorGrid,
    n: u32,
    basis: &ObservableBasis,
    kernel: &Kernel,
    ell: &[f64],
) -> Result<f64> {
    let mut terms = Vec::with_capacity(prior.len());
    for (nu, &w) in prior.states.iter().zip(&prior.weights) {
        if w == 0.0 {
            continue;
        }
        terms.push(w.ln() + component_ln_density(nu, n, basis, kernel, ell)?);
    }
    Ok(logsumexp(&terms).exp())
}

/// Bayes update of the grid weights on record ℓ:
/// w_i ← w_i·P(ℓ|ν_i^⊗N) / Σ_j w_j·P(ℓ|ν_j^⊗N). Uses the exact component
/// densities, so the near-non-disturbance approximation behind "update as if
/// by Bayes" is never assumed — its quality is measurable instead.
pub fn posterior_update(
    prior: &PriorGrid,
    n: u32,
    basis: &ObservableBasis,
    kernel: &Kernel,
    ell: &[f64],
) -> Result<PriorGrid> {
    let mut ln_w = vec![f64::NEG_INFINITY; prior.len()];
    for (i, (nu, &w)) in prior.states.iter().zip(&prior.weights).enumerate() {
        if w == 0.0 {
            continue;
        }
        ln_w[i] = w.ln() + component_ln_density(nu, n, basis, kernel, ell)?;
    }
    let ln_norm = logsumexp(&ln_w);
    // refuse records whose density underflows f64 even for the best grid
    // point: the Bayes precondition is a strictly positive outcome density
    if !ln_norm.is_finite() || ln_norm < -700.0 {
        return Err(Error::ZeroDensity(ell.first().copied().unwrap_or(f64::NAN)));
    }
    let mut weights: Vec<f64> = ln_w.iter().map(|&l| (l - ln_norm).exp()).collect();
    let total: f64 = weights.iter().sum();
    for w in &mut weights {
        *w /= total;
    }
    Ok(PriorGrid { states: prior.states.clone(), weights })
}

/// Total posterior mass within the given trace-distance ball of ν_ref.
pub fn posterior_concentration(
    prior: &PriorGrid,
    nu_ref: &DMatrix<Complex64>,
    radius: f64,
) -> Result<f64> {
    crate::validate(radius >= 0.0, "radius must be non-negative")?;
    let mut mass = 0.0;
    for (nu, &w) in prior.states.iter().zip(&prior.weights) {
        if trace_distance(nu, nu_ref)? <= radius {
            mass += w;
        }
    }
    Ok(mass)
}

/// A measurement axis with a human-readable tag for trajectory records.
#[derive(Debug, Clone)]
pub struct NamedBasis {
    pub tag: String,
    pub basis: ObservableBasis,
}

/// The three qubit spin axes (informationally complete for d=2), each with
/// eigenvalues (1, 0) so the measured coordinate is the fraction of molecules
/// aligned with the axis.
pub fn qubit_axes() -> Vec<NamedBasis> {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let re = |x: f64| Complex64::new(x, 0.0);
    let im = |x: f64| Complex64::new(0.0, x);
    let z = ObservableBasis::computational(vec![1.0, 0.0]);
    let x = ObservableBasis::new(
        DMatrix::from_row_slice(2, 2, &[re(s), re(s), re(s), re(-s)]),
        vec![1.0, 0.0],
    )
    .expect("Hadamard is unitary");
    let y = ObservableBasis::new(
        DMatrix::from_row_slice(2, 2, &[re(s), re(s), im(s), im(-s)]),
        vec![1.0, 0.0],
    )
    .expect("y eigenbasis is unitary");
    vec![
        NamedBasis { tag: "z".into(), basis: z },
        NamedBasis { tag: "x".into(), basis: x },
        NamedBasis { tag: "y".into(), basis: y },
    ]
}

/// How successive rounds obtain their sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleMode {
    /// All rounds measure the same N molecules; the tracked physical state is
    /// conditioned (√-effect update) after every record, so later rounds see
    /// the accumulated disturbance. Requires a pure true state.
    SameSample,
    /// Every round draws a fresh ν_true^⊗N batch; no disturbance carries
    /// over. Works for mixed true states.
    FreshBatch,
}

/// One round of the trajectory: which axis was read, the recorded value per
/// letter, and how concentrated the posterior is around the true state
/// afterwards.
#[derive(Debug, Clone, Serialize)]
pub struct RoundRecord {
    pub round: usize,
    pub basis: String,
    pub outcome: Vec<f64>,
    pub concentration_005: f64,
    pub concentration_010: f64,
}

/// Full trajectory summary of a simulated estimation run.
#[derive(Debug, Clone, Serialize)]
pub struct TomographyRecord {
    pub rounds: Vec<RoundRecord>,
    pub mode_index: usize,
    pub mode_weight: f64,
    pub final_concentration_005: f64,
    pub final_concentration_010: f64,
}

/// Simulate a measure-and-update loop: for each axis in `bases` (in order),
/// draw a record, then Bayes-update the grid posterior with the ideal
/// (undisturbed-ensemble) likelihood. Returns the trajectory and the final
/// posterior.
pub fn simulate_tomography(
    nu_true: &DMatrix<Complex64>,
    bases: &[NamedBasis],
    prior: &PriorGrid,
    sigma: f64,
    n: u32,
    seed: u64,
    mode: SampleMode,
) -> Result<(TomographyRecord, PriorGrid)> {
    crate::validate(!bases.is_empty(), "no measurement axes given")?;
    crate::validate(sigma > 0.0, "record width must be positive")?;
    validate_density(nu_true)?;
    let d = nu_true.nrows();
    crate::validate(
        prior.states[0].nrows() == d,
        "prior grid dimension differs from the true state",
    )?;
    let kernel = Kernel::Gaussian { sigma };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // Same-sample mode tracks the physical state of the one ensemble, so the
    // true state must be pure (a symmetric amplitude vector).
    let mut tracked: Option<SymmetricPureState> = None;
    if mode == SampleMode::SameSample {
        let eig = nu_true.clone().symmetric_eigen();
        let (top, _) = eig
            .eigenvalues
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .expect("d > 0");
        crate::validate(
            eig.eigenvalues[top] >= 1.0 - 1e-9,
            "same-sample rounds need a pure true state",
        )?;
        let beta: Vec<Complex64> = eig.eigenvectors.column(top).iter().copied().collect();
        tracked = Some(SymmetricPureState::product(&beta, n)?);
    }

    let computational = ObservableBasis::computational(vec![0.0; d]);
    let mut posterior = prior.clone();
    let mut rounds = Vec::with_capacity(bases.len());
    for (round, named) in bases.iter().enumerate() {
        let outcome = match mode {
            SampleMode::SameSample => {
                let state = tracked.take().expect("tracked state exists");
                // express the ensemble in the measured eigenbasis
                let mut rotated = rotate_basis(&state, &computational, &named.basis)?;
                let types = enumerate_types(n, d)?;
                let idx = sample_type(&rotated, &mut rng);
                let outcome: Vec<f64> = types[idx]
                    .fractions()
                    .iter()
                    .map(|&f| f + sigma * standard_normal(&mut rng))
                    .collect();
                // √-effect conditioning on the record just produced
                for (i, amp) in rotated.amps.iter_mut().enumerate() {
                    if amp.ln_mag > f64::NEG_INFINITY {
                        amp.ln_mag += 0.5 * kernel.ln_density(&types[i].fractions(), &outcome);
                    }
                }
                rotated.normalize();
                tracked = Some(rotate_basis(&rotated, &named.basis, &computational)?);
                outcome
            }
            SampleMode::FreshBatch => {
                let p = letter_probabilities(nu_true, &named.basis);
                let counts = multinomial_draw(n, &p, &mut rng);
                counts
                    .iter()
                    .map(|&k| k as f64 / n as f64 + sigma * standard_normal(&mut rng))
                    .collect()
            }
        };
        posterior = posterior_update(&posterior, n, &named.basis, &kernel, &outcome)?;
        rounds.push(RoundRecord {
            round,
            basis: named.tag.clone(),
            outcome,
            concentration_005: posterior_concentration(&posterior, nu_true, 0.05)?,
            concentration_010: posterior_concentration(&posterior, nu_true, 0.10)?,
        });
    }
    let mode_index = posterior.mode_index();
    let record = TomographyRecord {
        final_concentration_005: rounds.last().map(|r| r.concentration_005).unwrap_or(0.0),
        final_concentration_010: rounds.last().map(|r| r.concentration_010).unwrap_or(0.0),
        mode_weight: posterior.weights[mode_index],
        mode_index,
        rounds,
    };
    Ok((record, posterior))
}

fn standard_normal<R: Rng>(rng: &mut R) -> f64 {
    // Box-Muller on open-interval uniforms
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen::<f64>();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Draw multinomial counts by sequential conditional binomials.
fn multinomial_draw<R: Rng>(n: u32, p: &[f64], rng: &mut R) -> Vec<u32> {
    let mut counts = vec![0u32; p.len()];
    let mut remaining = n;
    let mut mass_left: f64 = p.iter().sum();
    for (j, &pj) in p.iter().enumerate() {
        if j == p.len() - 1 {
            counts[j] = remaining;
            break;
        }
        if remaining == 0 {
            break;
        }
        let q = (pj / mass_left).clamp(0.0, 1.0);
        let mut k = 0u32;
        for _ in 0..remaining {
            if rng.gen::<f64>() < q {
                k += 1;
            }
        }
        counts[j] = k;
        remaining -= k;
        mass_left = (mass_left - pj).max(f64::MIN_POSITIVE);
    }
    counts
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::kron_power;
    use approx::assert_abs_diff_eq;

    fn diag_state(p: f64) -> DMatrix<Complex64> {
        DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![
            Complex64::new(p, 0.0),
            Complex64::new(1.0 - p, 0.0),
        ]))
    }

    fn z_basis() -> ObservableBasis {
        ObservableBasis::computational(vec![1.0, 0.0])
    }

    #[test]
    fn default_grid_is_normalized_and_physical() {
        let grid = PriorGrid::qubit_default();
        assert_eq!(grid.len(), 200);
        let total: f64 = grid.weights().iter().sum();
        assert_abs_diff_eq!(total, 1.0, epsilon = 1e-12);
        for nu in grid.states() {
            let eig = nu.clone().symmetric_eigen();
            assert!(eig.eigenvalues.iter().all(|&l| l >= -1e-12));
            let tr: Complex64 = nu[(0, 0)] + nu[(1, 1)];
            assert_abs_diff_eq!(tr.re, 1.0, epsilon = 1e-12);
        }
        // rebuilding through the validating constructor must succeed
        PriorGrid::new(grid.states().to_vec(), grid.weights().to_vec()).unwrap();
    }

    #[test]
    fn single_point_density_matches_component_and_two_point_is_mean() {
        let kernel = Kernel::Gaussian { sigma: 0.1 };
        let (a, b) = (diag_state(0.8), diag_state(0.4));
        let ell = [0.7, 0.3];
        let da = component_ln_density(&a, 50, &z_basis(), &kernel, &ell).unwrap().exp();
        let db = component_ln_density(&b, 50, &z_basis(), &kernel, &ell).unwrap().exp();
        let single = exchangeable_outcome_density(
            &PriorGrid::delta(a.clone()).unwrap(),
            50,
            &z_basis(),
            &kernel,
            &ell,
        )
        .unwrap();
        assert_abs_diff_eq!(single, da, epsilon = 1e-12 * da.max(1.0));
        let pair = exchangeable_outcome_density(
            &PriorGrid::uniform(vec![a, b]).unwrap(),
            50,
            &z_basis(),
            &kernel,
            &ell,
        )
        .unwrap();
        assert_abs_diff_eq!(pair, 0.5 * (da + db), epsilon = 1e-12 * pair.max(1.0));
    }

    #[test]
    fn grid_density_integrates_to_one() {
        let kernel = Kernel::Gaussian { sigma: 0.1 };
        let grid = PriorGrid::fibonacci_shells(10, &[0.2, 0.6, 1.0]).unwrap();
        let n = 100;
        let basis = z_basis();
        // trapezoid over both record components; the integrand decays as a
        // σ-width Gaussian outside [0,1]², so ±0.7 truncates below 1e-11
        let step = 0.025_f64;
        let lo = -0.7_f64;
        let count = ((1.7 - lo) / step).round() as usize + 1;
        let mut integral = 0.0;
        for i in 0..count {
            let wi = if i == 0 || i == count - 1 { 0.5 } else { 1.0 };
            for j in 0..count {
                let wj = if j == 0 || j == count - 1 { 0.5 } else { 1.0 };
                let ell = [lo + i as f64 * step, lo + j as f64 * step];
                integral += wi
                    * wj
                    * exchangeable_outcome_density(&grid, n, &basis, &kernel, &ell).unwrap();
            }
        }
        integral *= step * step;
        assert_abs_diff_eq!(integral, 1.0, epsilon = 1e-6);
    }

    #[test]
    fn two_point_posterior_matches_hand_bayes() {
        // direct f64 Bayes arithmetic, no logs, no windows
        let n = 100u32;
        let sigma = 0.05;
        let (pa, pb) = (0.9_f64, 0.5_f64);
        let ell = [0.9, 0.1];
        let gauss = |mu: f64, x: f64| {
            (-(x - mu) * (x - mu) / (2.0 * sigma * sigma)).exp()
                / (sigma * (2.0 * std::f64::consts::PI).sqrt())
        };
        let brute = |p: f64| {
            let mut total = 0.0;
            let mut ln_binom = 0.0;
            for k in 0..=n {
                if k > 0 {
                    ln_binom += (((n - k + 1) as f64) / k as f64).ln();
                }
                let pmf = (ln_binom + k as f64 * p.ln() + (n - k) as f64 * (1.0 - p).ln()).exp();
                let f = k as f64 / n as f64;
                total += pmf * gauss(f, ell[0]) * gauss(1.0 - f, ell[1]);
            }
            total
        };
        let (da, db) = (brute(pa), brute(pb));
        let expected = da / (da + db);
        let prior = PriorGrid::uniform(vec![diag_state(pa), diag_state(pb)]).unwrap();
        let post = posterior_update(
            &prior,
            n,
            &z_basis(),
            &Kernel::Gaussian { sigma },
            &ell,
        )
        .unwrap();
        assert_abs_diff_eq!(post.weights()[0], expected, epsilon = 1e-12);
        assert_abs_diff_eq!(post.weights()[1], 1.0 - expected, epsilon = 1e-12);
    }

    #[test]
    fn huge_width_record_is_uninformative() {
        let prior = PriorGrid::uniform(vec![diag_state(0.9), diag_state(0.2)]).unwrap();
        let post = posterior_update(
            &prior,
            60,
            &z_basis(),
            &Kernel::Gaussian { sigma: 1e6 },
            &[0.3, 0.7],
        )
        .unwrap();
        for (w, w0) in post.weights().iter().zip(prior.weights()) {
            assert_abs_diff_eq!(w, w0, epsilon = 1e-9);
        }
    }

    #[test]
    fn update_chain_stays_normalized() {
        let kernel = Kernel::Gaussian { sigma: 0.08 };
        let mut grid = PriorGrid::qubit_default();
        let axes = qubit_axes();
        for (i, ell0) in [0.62, 0.55, 0.48, 0.71, 0.5].iter().enumerate() {
            let basis = &axes[i % 3].basis;
            grid = posterior_update(&grid, 80, basis, &kernel, &[*ell0, 1.0 - ell0]).unwrap();
            let total: f64 = grid.weights().iter().sum();
            assert_abs_diff_eq!(total, 1.0, epsilon = 1e-10);
        }
    }

    #[test]
    fn impossible_record_reports_zero_density() {
        let prior = PriorGrid::uniform(vec![diag_state(0.9), diag_state(0.2)]).unwrap();
        let err = posterior_update(
            &prior,
            40,
            &z_basis(),
            &Kernel::Gaussian { sigma: 0.01 },
            &[4e3, -4e3],
        )
        .unwrap_err();
        assert!(matches!(err, Error::ZeroDensity(_)));
    }

    #[test]
    fn concentration_counts_mass_inside_ball() {
        let a = bloch_state([0.0, 0.0, 0.5]).unwrap();
        let b = bloch_state([0.0, 0.0, -0.5]).unwrap();
        let prior = PriorGrid::new(vec![a.clone(), b], vec![0.3, 0.7]).unwrap();
        // trace distance between the two grid points is 0.5
        assert_abs_diff_eq!(
            posterior_concentration(&prior, &a, 0.2).unwrap(),
            0.3,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            posterior_concentration(&prior, &a, 0.0).unwrap(),
            0.3,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(posterior_concentration(&prior, &a, 2.0).unwrap(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn z_axis_alone_cannot_split_equal_z_states() {
        // ±x Bloch states have identical z-statistics: any z record leaves
        // their weight ratio untouched
        let plus = bloch_state([0.8, 0.0, 0.0]).unwrap();
        let minus = bloch_state([-0.8, 0.0, 0.0]).unwrap();
        let up = bloch_state([0.0, 0.0, 0.5]).unwrap();
        let prior = PriorGrid::uniform(vec![plus, minus, up]).unwrap();
        let post = posterior_update(
            &prior,
            100,
            &z_basis(),
            &Kernel::Gaussian { sigma: 0.05 },
            &[0.52, 0.48],
        )
        .unwrap();
        assert_abs_diff_eq!(post.weights()[0], post.weights()[1], epsilon = 1e-12);
    }

    #[test]
    fn same_sample_run_identifies_grid_truth() {
        let grid = PriorGrid::qubit_default();
        // a pure state that sits exactly on the grid (outermost shell)
        let true_index = 4 * 40 + 7;
        let nu_true = grid.states()[true_index].clone();
        let (record, posterior) = simulate_tomography(
            &nu_true,
            &qubit_axes(),
            &grid,
            0.02,
            1000,
            424242,
            SampleMode::SameSample,
        )
        .unwrap();
        assert_eq!(posterior.mode_index(), true_index);
        assert_eq!(record.mode_index, true_index);
        assert!(record.final_concentration_010 > 0.5);
        let total: f64 = posterior.weights().iter().sum();
        assert_abs_diff_eq!(total, 1.0, epsilon = 1e-10);
    }

    #[test]
    fn fresh_batch_accepts_mixed_truth_and_records_rounds() {
        let grid = PriorGrid::fibonacci_shells(20, &[0.3, 0.6]).unwrap();
        let nu_true = bloch_state([0.1, 0.2, 0.25]).unwrap();
        let axes = qubit_axes();
        let mut schedule = Vec::new();
        for _ in 0..2 {
            schedule.extend(axes.iter().cloned());
        }
        let (record, posterior) = simulate_tomography(
            &nu_true,
            &schedule,
            &grid,
            0.1,
            200,
            7,
            SampleMode::FreshBatch,
        )
        .unwrap();
        assert_eq!(record.rounds.len(), 6);
        for (i, r) in record.rounds.iter().enumerate() {
            assert_eq!(r.round, i);
            assert_eq!(r.outcome.len(), 2);
            assert!((0.0..=1.0).contains(&r.concentration_005));
            assert!((0.0..=1.0).contains(&r.concentration_010));
        }
        let total: f64 = posterior.weights().iter().sum();
        assert_abs_diff_eq!(total, 1.0, epsilon = 1e-10);
    }

    #[test]
    fn same_sample_rejects_mixed_truth() {
        let grid = PriorGrid::fibonacci_shells(8, &[0.5]).unwrap();
        let nu_true = bloch_state([0.0, 0.0, 0.3]).unwrap();
        let err = simulate_tomography(
            &nu_true,
            &qubit_axes(),
            &grid,
            0.05,
            50,
            1,
            SampleMode::SameSample,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
    }

    #[test]
    fn grid_ensemble_marginal_is_mean_state() {
        // de Finetti structure: tracing an exchangeable 3-molecule ensemble
        // down to one molecule returns the weighted mean of the grid
        let a = bloch_state([0.3, -0.1, 0.4]).unwrap();
        let b = bloch_state([-0.5, 0.2, 0.1]).unwrap();
        let prior = PriorGrid::new(vec![a.clone(), b.clone()], vec![0.4, 0.6]).unwrap();
        let rho3 =
            kron_power(&a, 3).unwrap().scale(0.4) + kron_power(&b, 3).unwrap().scale(0.6);
        // trace out the last two molecules of the 8×8 ensemble state
        let mut reduced = DMatrix::<Complex64>::zeros(2, 2);
        for i in 0..2 {
            for j in 0..2 {
                for rest in 0..4 {
                    reduced[(i, j)] += rho3[(i * 4 + rest, j * 4 + rest)];
                }
            }
        }
        let mean = prior.mean_state();
        assert!((reduced - mean).norm() < 1e-12);
    }
}
