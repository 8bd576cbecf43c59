//! The measurement-coarseness / state-disturbance tradeoff: exact fidelities
//! between pre- and post-measurement ensemble states, the closed-form lower
//! bounds, the conditional-fidelity window, and sweep drivers.
//!
//! Conventions: the prepared ensemble is ν^⊗N; the measurement is the
//! frequency POVM with a Gaussian vector-record kernel of width σ (normalized
//! type units), so the pre/post fidelity of a pure product state is the
//! double sum F = Σ_{L,L'} m(L,R) m(L',R) G(L,L') with
//! G = exp{−‖L−L'‖₂²/8σ²}. The closed-form bounds are kept exactly as their
//! source prints them and checked empirically — the exact engine is the
//! authority on actual values.

use crate::combinatorics::{enumerate_types, ln_binomial, multinomial_ln_pmf, num_types};
use crate::oracle;
use crate::smoothing::{phi, Kernel};
use crate::symmetric::ObservableBasis;
use crate::{Error, Result};
use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erf;

/// Largest type-space dimension the general-d exact double sum will attempt;
/// d=2 has a dedicated windowed path that runs to N = 10^5.
pub const EXACT_SUM_CAP: usize = 4096;

/// Coarseness regime of a (N, σ) pair, classified by x = σ√N: the detector
/// resolves statistical fluctuations (∼1/√N) when x is small and averages
/// over them when x is large. Thresholds (0.5, 2) are reporting conventions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regime {
    Coarse,
    Transition,
    Fine,
}

impl Regime {
    pub fn classify(n: u32, sigma: f64) -> Self {
        let x = sigma * (n as f64).sqrt();
        if x >= 2.0 {
            Regime::Coarse
        } else if x <= 0.5 {
            Regime::Fine
        } else {
            Regime::Transition
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Regime::Coarse => "coarse",
            Regime::Transition => "transition",
            Regime::Fine => "fine",
        }
    }
}

/// One point of a coarseness sweep.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TradeoffPoint {
    pub n: u32,
    pub d: usize,
    pub sigma: f64,
    pub f_exact: f64,
    pub f_bound: f64,
    pub regime: Regime,
}

fn validate_prob(r: &[f64]) -> Result<()> {
    crate::validate(
        r.iter().all(|&p| (0.0..=1.0 + 1e-12).contains(&p))
            && (r.iter().sum::<f64>() - 1.0).abs() <= 1e-10,
        "letter probabilities must form a probability vector",
    )
}

/// ln of the binomial pmf at k, handling the degenerate p ∈ {0,1} cases.
fn ln_binom_pmf(n: u32, p: f64, k: u32) -> f64 {
    if p <= 0.0 {
        return if k == 0 { 0.0 } else { f64::NEG_INFINITY };
    }
    if p >= 1.0 {
        return if k == n { 0.0 } else { f64::NEG_INFINITY };
    }
    ln_binomial(n as u64, k as u64) + k as f64 * p.ln() + (n - k) as f64 * (1.0 - p).ln()
}

/// The k-window outside which the binomial pmf is below e^{-32}: mean ± 8
/// standard deviations (plus one). Truncation error in any of the sums below
/// is under 1e-13 in absolute value.
fn binomial_window(n: u32, p: f64) -> (u32, u32) {
    let mean = n as f64 * p;
    let sd = (n as f64 * p * (1.0 - p)).sqrt().max(1.0);
    let lo = (mean - 8.0 * sd - 1.0).floor().max(0.0) as u32;
    let hi = (mean + 8.0 * sd + 1.0).ceil().min(n as f64) as u32;
    (lo, hi)
}

/// Exact fidelity between ν^⊗N and the record-averaged post-measurement
/// state at σ=0 (bare type measurement): Σ_L m(L,R)², together with the
/// Stirling-approximation companion value (2πN)^{−(d−1)/2}/∏_j|β_j| as
/// printed at its source — `None` when some letter probability vanishes.
pub fn fidelity_zero_sigma(r: &[f64], n: u32) -> Result<(f64, Option<f64>)> {
    validate_prob(r)?;
    let d = r.len();
    let exact = if d == 2 {
        (0..=n).map(|k| (2.0 * ln_binom_pmf(n, r[0], k)).exp()).sum()
    } else {
        let types = enumerate_types(n, d)?;
        types
            .iter()
            .map(|t| (2.0 * multinomial_ln_pmf(t, r)).exp())
            .sum()
    };
    let stirling = if r.iter().all(|&p| p > 0.0) {
        let prod_beta: f64 = r.iter().map(|&p| p.sqrt()).product();
        Some(
            (2.0 * std::f64::consts::PI * n as f64).powf(-((d - 1) as f64) / 2.0) / prod_beta,
        )
    } else {
        None
    };
    Ok((exact, stirling))
}

/// Exact pre/post fidelity F = Σ_{L,L'} m(L,R) m(L',R) G(L,L') for the
/// Gaussian vector-record kernel of width σ. d=2 uses a windowed double sum
/// good to N = 10^5; higher d enumerates the type space under the cap.
pub fn exact_fidelity(r: &[f64], n: u32, sigma: f64) -> Result<f64> {
    validate_prob(r)?;
    crate::validate(sigma >= 0.0, "sigma must be non-negative")?;
    if sigma == 0.0 {
        return Ok(fidelity_zero_sigma(r, n)?.0);
    }
    let d = r.len();
    if d == 2 {
        // ‖L−L'‖₂² between d=2 types k,k' is 2(Δk/N)², so G = e^{−Δk²/(4σ²N²)}
        let (lo, hi) = binomial_window(n, r[0]);
        let pmf: Vec<f64> = (lo..=hi).map(|k| ln_binom_pmf(n, r[0], k).exp()).collect();
        let scale = 1.0 / (4.0 * sigma * sigma * n as f64 * n as f64);
        let mut f = 0.0;
        for (i, &pi) in pmf.iter().enumerate() {
            for (j, &pj) in pmf.iter().enumerate() {
                let dk = i as f64 - j as f64;
                f += pi * pj * (-dk * dk * scale).exp();
            }
        }
        Ok(f.min(1.0))
    } else {
        let t = num_types(n, d)?;
        if t > EXACT_SUM_CAP {
            return Err(Error::CapExceeded(format!(
                "type space {t} too large for the general-d exact sum (cap {EXACT_SUM_CAP})"
            )));
        }
        let types = enumerate_types(n, d)?;
        let kernel = Kernel::Gaussian { sigma };
        let pmf: Vec<f64> = types.iter().map(|ty| multinomial_ln_pmf(ty, r).exp()).collect();
        let fr: Vec<Vec<f64>> = types.iter().map(|ty| ty.fractions()).collect();
        let mut f = 0.0;
        for i in 0..t {
            if pmf[i] < 1e-18 {
                continue;
            }
            for j in 0..t {
                f += pmf[i] * pmf[j] * kernel.decoherence(&fr[i], &fr[j]);
            }
        }
        Ok(f.min(1.0))
    }
}

/// Closed-form Gaussian fidelity lower bound. With an explicit cut-off Δ:
/// exp{−Δ²/2σ²}(1−e^{−NdΔ²/2})². Without, the optimized form
/// 1 − (1+ln(2Nσ²d))/(Nσ²d) — valid only when 2Nσ²d > 1; outside that regime
/// (and whenever the value is negative) the bound is vacuous and 0 is
/// returned.
pub fn gaussian_fidelity_lower_bound(n: u32, sigma: f64, d: usize, delta: Option<f64>) -> f64 {
    let nf = n as f64;
    let df = d as f64;
    match delta {
        Some(dl) => {
            let tail = 1.0 - (-nf * df * dl * dl / 2.0).exp();
            ((-dl * dl / (2.0 * sigma * sigma)).exp() * tail * tail).max(0.0)
        }
        None => {
            let x = nf * sigma * sigma * df;
            if 2.0 * x <= 1.0 {
                return 0.0;
            }
            (1.0 - (1.0 + (2.0 * x).ln()) / x).max(0.0)
        }
    }
}

/// General-kernel fidelity lower bound for a smoothing function satisfying
/// the Lipschitz condition with constants (c, s):
/// {1 − c(Δ/2σ)^s}(1 − e^{−NΔ²/2}), floored at 0.
pub fn general_fidelity_lower_bound(n: u32, sigma: f64, c: f64, s: f64, delta: f64) -> f64 {
    let smooth = 1.0 - c * (delta / (2.0 * sigma)).powf(s);
    if smooth <= 0.0 {
        return 0.0;
    }
    (smooth * (1.0 - (-(n as f64) * delta * delta / 2.0).exp())).max(0.0)
}

/// Fine-regime estimate of the fidelity, erf(σ√N), with its small-argument
/// form 2σ√(N/π) as companion.
pub fn small_sigma_fidelity_estimate(n: u32, sigma: f64) -> (f64, f64) {
    let x = sigma * (n as f64).sqrt();
    (erf(x), 2.0 * x / std::f64::consts::PI.sqrt())
}

/// The constant c = 5√(2π)/8 from the conditional-fidelity window formula.
pub fn appendix_c() -> f64 {
    5.0 * (2.0 * std::f64::consts::PI).sqrt() / 8.0
}

/// Conditional (single-record) fidelity data at a scalar record ℓ for a d=2
/// product state with letter probabilities (p, 1−p), scalar coordinate k/N.
#[derive(Debug, Clone, Copy)]
pub struct ConditionalFidelity {
    /// Record density P(ℓ) = Σ_L q_L(ℓ) m(L).
    pub outcome_density: f64,
    /// The actual Uhlmann fidelity between ν^⊗N and the conditional state:
    /// [Σ_L √q_L(ℓ) m(L)]² / P(ℓ).
    pub normalized: f64,
    /// The unnormalized double sum [Σ_L √q_L(ℓ) m(L)]² as printed in the
    /// closed-form derivation (which omits the 1/P(ℓ) of the ideal update;
    /// the value is not confined to [0,1] — it carries the record density's
    /// dimension).
    pub appendix_functional: f64,
}

/// Exact conditional-fidelity sums for d=2 (the closed-form derivation's
/// scope; higher d is served by the engine directly).
pub fn conditional_fidelity(r: &[f64], n: u32, sigma: f64, ell: f64) -> Result<ConditionalFidelity> {
    validate_prob(r)?;
    crate::validate(r.len() == 2, "closed-form conditional path is d=2")?;
    crate::validate(sigma > 0.0, "conditional fidelity at a real-valued record needs σ > 0")?;
    let p = r[0];
    let ln_norm = -(sigma * (2.0 * std::f64::consts::PI).sqrt()).ln();
    let mut s = 0.0; // Σ √q m
    let mut pd = 0.0; // Σ q m
    for k in 0..=n {
        let ln_b = ln_binom_pmf(n, p, k);
        if ln_b == f64::NEG_INFINITY {
            continue;
        }
        let z = (ell - k as f64 / n as f64) / sigma;
        let ln_q = ln_norm - 0.5 * z * z;
        s += (0.5 * ln_q + ln_b).exp();
        pd += (ln_q + ln_b).exp();
    }
    if pd <= 0.0 {
        return Err(Error::ZeroDensity(ell));
    }
    Ok(ConditionalFidelity {
        outcome_density: pd,
        normalized: (s * s / pd).min(1.0),
        appendix_functional: s * s,
    })
}

/// Window half-width Δ* = σ√(2 ln(1/(cσ))), c = 5√(2π)/8: records within Δ*
/// of the mean are certified near-unit-fidelity by the closed-form chain.
/// Undefined once cσ ≥ 1 (the log vanishes or turns negative).
pub fn conditional_fidelity_threshold(sigma: f64) -> Result<f64> {
    let c = appendix_c();
    crate::validate(
        sigma > 0.0 && c * sigma < 1.0,
        "threshold undefined: need 0 < sigma < 1/c ≈ 0.638",
    )?;
    Ok(sigma * (2.0 * (1.0 / (c * sigma)).ln()).sqrt())
}

/// The two deficiency terms of the conditional-fidelity certification:
/// e^{−4√N/(3√πσ)} + e^{−√(2N)·√((1−p)/p)}. Their sum is the certified
/// distance from unit fidelity inside the Δ* window.
pub fn conditional_deficiency(n: u32, sigma: f64, p: f64) -> f64 {
    let nf = n as f64;
    let t1 = (-4.0 * nf.sqrt() / (3.0 * std::f64::consts::PI.sqrt() * sigma)).exp();
    let t2 = (-(2.0 * nf).sqrt() * ((1.0 - p) / p).sqrt()).exp();
    t1 + t2
}

/// The printed closed-form conditional-fidelity lower bound
/// (1/(cσ))·e^{−Δ²/2σ²}·(1 − deficiency). It equals 1 − deficiency at
/// Δ = Δ* and exceeds 1 inside the window (the chain reads such values as
/// certifying near-unit fidelity).
pub fn conditional_fidelity_bound(n: u32, sigma: f64, p: f64, delta: f64) -> f64 {
    let c = appendix_c();
    (1.0 / (c * sigma))
        * (-delta * delta / (2.0 * sigma * sigma)).exp()
        * (1.0 - conditional_deficiency(n, sigma, p))
}

/// Probability that the record lands more than Δ from the mean coordinate μ:
/// the printed exponential bound e^{−√8Δ/(√(5π)σ)} alongside the exact tail
/// Σ_k m(k)·P(|ℓ−μ| > Δ | k) from the record density.
pub fn bad_outcome_probability(r: &[f64], n: u32, sigma: f64, delta: f64) -> Result<(f64, f64)> {
    validate_prob(r)?;
    crate::validate(r.len() == 2, "scalar-record tail is a d=2 path")?;
    crate::validate(sigma > 0.0 && delta >= 0.0, "need σ > 0 and Δ ≥ 0")?;
    let bound = (-(8.0_f64).sqrt() * delta / ((5.0 * std::f64::consts::PI).sqrt() * sigma)).exp();
    let mu = r[0];
    let (lo, hi) = binomial_window(n, r[0]);
    let mut tail = 0.0;
    for k in lo..=hi {
        let m = ln_binom_pmf(n, r[0], k).exp();
        let mu_k = k as f64 / n as f64;
        let below = phi((mu - delta - mu_k) / sigma);
        let above = 1.0 - phi((mu + delta - mu_k) / sigma);
        tail += m * (below + above);
    }
    Ok((bound.min(1.0), tail))
}

/// Draw a scalar record from the exact density Σ_k m(k) q_{k/N}(ℓ): sample
/// the type from the binomial, then detector noise around its coordinate.
pub fn sample_scalar_outcome<R: Rng>(r: &[f64], n: u32, sigma: f64, rng: &mut R) -> f64 {
    let (lo, hi) = binomial_window(n, r[0]);
    let mut u: f64 = rng.gen();
    let mut k_drawn = hi;
    for k in lo..=hi {
        u -= ln_binom_pmf(n, r[0], k).exp();
        if u <= 0.0 {
            k_drawn = k;
            break;
        }
    }
    k_drawn as f64 / n as f64 + sigma * crate::symmetric::rand_distr_standard_normal(rng)
}

/// Fidelity guarantees for a mixed single-system state ν, via purification:
/// the pure-state machinery applied to |φ⟩ = Σ √λ_i |ψ_i⟩|i⟩ (a d²-level
/// system) lower-bounds the mixed-ensemble fidelity, because the pair-type
/// measurement on the purified ensemble refines the molecule-type
/// measurement and tracing out ancillas cannot decrease fidelity.
#[derive(Debug, Clone, Copy)]
pub struct PurifiedBound {
    /// Exact pure-state fidelity of the purified ensemble under pair-type
    /// smoothing at the same σ.
    pub purified_exact: f64,
    /// Closed-form optimized bound with d → d².
    pub closed_form: f64,
    /// Exact mixed-ensemble fidelity from the dense reference, when d^N is
    /// within the dense cap.
    pub mixed_exact: Option<f64>,
}

pub fn purified_mixed_state_bound(
    nu: &DMatrix<Complex64>,
    basis: &ObservableBasis,
    n: u32,
    sigma: f64,
) -> Result<PurifiedBound> {
    let d = nu.nrows();
    crate::validate(nu.ncols() == d && basis.alpha.len() == d, "state/basis dims mismatch")?;
    crate::validate((nu.trace().re - 1.0).abs() <= 1e-10, "state must have trace 1")?;
    crate::validate((nu - nu.adjoint()).norm() <= 1e-10, "state must be Hermitian")?;
    let se = nu.clone().symmetric_eigen();
    crate::validate(
        se.eigenvalues.iter().all(|&l| l >= -1e-10),
        "state must be positive semidefinite",
    )?;

    // pair-letter probabilities R_(j,i) = λ_i |⟨x_j|ψ_i⟩|² of the purified
    // product state in the (measurement ⊗ ancilla) basis
    let mut r_pair = vec![0.0; d * d];
    for i in 0..d {
        let lam = se.eigenvalues[i].max(0.0);
        let psi = se.eigenvectors.column(i);
        for j in 0..d {
            let amp = (basis.u.column(j).adjoint() * psi)[(0, 0)];
            r_pair[j * d + i] = lam * amp.norm_sqr();
        }
    }
    let total: f64 = r_pair.iter().sum();
    for p in &mut r_pair {
        *p /= total;
    }

    let purified_exact = exact_fidelity(&r_pair, n, sigma)?;
    let closed_form = gaussian_fidelity_lower_bound(n, sigma, d * d, None);

    let mixed_exact = match oracle::dense_dim(d, n, false) {
        Ok(_) => {
            let rho = oracle::dense_product_density(nu, n)?;
            let kernel = Kernel::Gaussian { sigma };
            let post = if sigma == 0.0 {
                oracle::dense_averaged_post(&rho, n, basis, &Kernel::Exact)?
            } else {
                oracle::dense_averaged_post(&rho, n, basis, &kernel)?
            };
            Some(oracle::dense_fidelity(&rho, &post)?)
        }
        Err(_) => None,
    };

    Ok(PurifiedBound { purified_exact, closed_form, mixed_exact })
}

/// Evaluate the exact fidelity and the optimized closed-form bound over a
/// (N, σ) grid. Points evaluate in parallel; output order is the row-major
/// grid order regardless of scheduling.
pub fn tradeoff_sweep(r: &[f64], ns: &[u32], sigmas: &[f64]) -> Result<Vec<TradeoffPoint>> {
    let d = r.len();
    let grid: Vec<(u32, f64)> = ns
        .iter()
        .flat_map(|&n| sigmas.iter().map(move |&s| (n, s)))
        .collect();
    grid.par_iter()
        .map(|&(n, sigma)| {
            Ok(TradeoffPoint {
                n,
                d,
                sigma,
                f_exact: exact_fidelity(r, n, sigma)?,
                f_bound: gaussian_fidelity_lower_bound(n, sigma, d, None),
                regime: Regime::classify(n, sigma),
            })
        })
        .collect()
}

/// Least-squares line fit returning (slope, intercept, R²).
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> Result<(f64, f64, f64)> {
    crate::validate(xs.len() == ys.len() && xs.len() >= 2, "need ≥2 paired points")?;
    let nf = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / nf;
    let my = ys.iter().sum::<f64>() / nf;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    crate::validate(sxx > 0.0, "x values are degenerate")?;
    let slope = sxy / sxx;
    let r2 = if syy > 0.0 { (sxy * sxy) / (sxx * syy) } else { 1.0 };
    Ok((slope, sxy / sxx * -mx + my, r2))
}

/// Regression of the disturbance 1−F on x = ln(Nσ²d)/(Nσ²d) over the sweep
/// points with Nσ²d ≥ min_nsd. Returns (slope, R²).
pub fn scaling_law_fit(points: &[TradeoffPoint], min_nsd: f64) -> Result<(f64, f64)> {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for p in points {
        let nsd = p.n as f64 * p.sigma * p.sigma * p.d as f64;
        if nsd >= min_nsd {
            xs.push(nsd.ln() / nsd);
            ys.push(1.0 - p.f_exact);
        }
    }
    let (slope, _, r2) = linear_fit(&xs, &ys)?;
    Ok((slope, r2))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::symmetric::{
        averaged_post_density, fidelity_pure_mixed, SymmetricPureState,
    };
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const BALANCED: [f64; 2] = [0.5, 0.5];

    #[test]
    fn zero_sigma_small_case_exact() {
        let (f, _) = fidelity_zero_sigma(&BALANCED, 4).unwrap();
        assert_abs_diff_eq!(f, 70.0 / 256.0, epsilon = 1e-12);
        // eigenstate: no disturbance
        let (f1, st) = fidelity_zero_sigma(&[1.0, 0.0], 12).unwrap();
        assert_abs_diff_eq!(f1, 1.0, epsilon = 1e-12);
        assert!(st.is_none());
    }

    #[test]
    fn zero_sigma_d3_matches_direct_enumeration() {
        let r = [0.5, 0.3, 0.2];
        let (f, _) = fidelity_zero_sigma(&r, 5).unwrap();
        let types = enumerate_types(5, 3).unwrap();
        let direct: f64 = types
            .iter()
            .map(|t| multinomial_ln_pmf(t, &r).exp().powi(2))
            .sum();
        assert_abs_diff_eq!(f, direct, epsilon = 1e-14);
    }

    #[test]
    fn stirling_companion_value_and_ratio() {
        let n = 400;
        let (exact, stirling) = fidelity_zero_sigma(&BALANCED, n).unwrap();
        let st = stirling.unwrap();
        // companion formula: (2πN)^{-1/2} / (1/2)
        assert_abs_diff_eq!(
            st,
            2.0 / (2.0 * std::f64::consts::PI * n as f64).sqrt(),
            epsilon = 1e-15
        );
        // the exact sum sits near 1/√2 of the printed line (asymptotically
        // Σ b² = binom(2N,N)/4^N ≈ 1/√(πN)), a gap the acceptance gate
        // reports rather than hides
        let ratio = exact / st;
        assert!((ratio - std::f64::consts::FRAC_1_SQRT_2).abs() < 0.01, "ratio {ratio}");
    }

    #[test]
    fn exact_fidelity_limits_and_monotonicity() {
        let n = 200;
        assert!(exact_fidelity(&BALANCED, n, 100.0).unwrap() > 1.0 - 1e-6);
        let mut prev = 0.0;
        for sigma in [0.0, 0.001, 0.01, 0.05, 0.2, 1.0] {
            let f = exact_fidelity(&BALANCED, n, sigma).unwrap();
            assert!(f >= prev - 1e-12, "σ={sigma}: {f} < {prev}");
            prev = f;
        }
    }

    #[test]
    fn exact_fidelity_agrees_with_engine_average() {
        let r = [0.7, 0.3];
        let beta = [Complex64::new(0.7_f64.sqrt(), 0.0), Complex64::new(0.3_f64.sqrt(), 0.0)];
        let n = 6;
        for sigma in [0.1, 0.3] {
            let fast = exact_fidelity(&r, n, sigma).unwrap();
            let s = SymmetricPureState::product(&beta, n).unwrap();
            let rho = averaged_post_density(&s, &Kernel::Gaussian { sigma }).unwrap();
            let via_engine = fidelity_pure_mixed(&s, &rho);
            assert_abs_diff_eq!(fast, via_engine, epsilon = 1e-9);
        }
    }

    #[test]
    fn exact_fidelity_d3_agrees_with_engine() {
        let r = [0.5_f64, 0.3, 0.2];
        let beta: Vec<Complex64> =
            r.iter().map(|&p| Complex64::new(p.sqrt(), 0.0)).collect();
        let n = 5;
        let sigma = 0.2;
        let fast = exact_fidelity(&r, n, sigma).unwrap();
        let s = SymmetricPureState::product(&beta, n).unwrap();
        let rho = averaged_post_density(&s, &Kernel::Gaussian { sigma }).unwrap();
        assert_abs_diff_eq!(fast, fidelity_pure_mixed(&s, &rho), epsilon = 1e-9);
    }

    #[test]
    fn gaussian_bound_reference_value_and_guard() {
        // N=10⁴, σ=0.05, d=2 → 1 − (1+ln 100)/50
        let b = gaussian_fidelity_lower_bound(10_000, 0.05, 2, None);
        assert_abs_diff_eq!(b, 1.0 - (1.0 + 100.0_f64.ln()) / 50.0, epsilon = 1e-12);
        // out-of-regime: vacuous, not nonsense above 1
        assert_eq!(gaussian_fidelity_lower_bound(10, 0.05, 2, None), 0.0);
        // explicit-Δ branch
        let d = 0.1_f64;
        let want = (-d * d / (2.0 * 0.05 * 0.05)).exp()
            * (1.0 - (-(1e4) * 2.0 * d * d / 2.0).exp()).powi(2);
        assert_abs_diff_eq!(
            gaussian_fidelity_lower_bound(10_000, 0.05, 2, Some(d)),
            want,
            epsilon = 1e-12
        );
    }

    #[test]
    fn bound_grows_to_one_for_supercritical_sigma_scaling() {
        // σ ∝ N^{-s} with s < 1/2 → bound → 1
        let mut prev = 0.0;
        for &n in &[100u32, 1000, 10_000, 100_000] {
            let sigma = (n as f64).powf(-0.25);
            let b = gaussian_fidelity_lower_bound(n, sigma, 2, None);
            assert!(b >= prev);
            prev = b;
        }
        assert!(prev > 0.9, "bound should approach 1, got {prev}");
    }

    #[test]
    fn general_bound_edges_and_dominance() {
        assert_eq!(general_fidelity_lower_bound(100, 0.05, 1.0, 1.0, 0.0), 0.0);
        assert_eq!(general_fidelity_lower_bound(100, 0.05, 50.0, 1.0, 0.2), 0.0);
        // Gaussian-calibrated c at s=1: σ·sup|∂q/∂μ| = 1/(σ√(2πe))
        let sigma = 0.05;
        let c = 1.0 / (sigma * (2.0 * std::f64::consts::PI * std::f64::consts::E).sqrt());
        let delta = sigma / c; // half-way to the smoothness floor
        let bound = general_fidelity_lower_bound(10_000, sigma, c, 1.0, delta);
        let exact = exact_fidelity(&BALANCED, 10_000, sigma).unwrap();
        assert!(bound > 0.0 && bound <= exact, "bound {bound} vs exact {exact}");
    }

    #[test]
    fn small_sigma_estimate_forms() {
        let (e, _) = small_sigma_fidelity_estimate(400, 10.0);
        assert_abs_diff_eq!(e, 1.0, epsilon = 1e-12);
        let n = 10_000;
        let sigma = 0.01 / (n as f64).sqrt();
        let (e, small) = small_sigma_fidelity_estimate(n, sigma);
        assert_abs_diff_eq!(small, 2.0 * 0.01 / std::f64::consts::PI.sqrt(), epsilon = 1e-12);
        assert!((e - small).abs() < 1e-6);
    }

    #[test]
    fn conditional_fidelity_matches_dense_reference() {
        let r = [0.7, 0.3];
        let beta = [Complex64::new(0.7_f64.sqrt(), 0.0), Complex64::new(0.3_f64.sqrt(), 0.0)];
        let n = 6;
        let sigma = 0.15;
        let ell = 0.4;
        let cf = conditional_fidelity(&r, n, sigma, ell).unwrap();

        let basis = ObservableBasis::computational(vec![1.0, 0.0]);
        let kernel = Kernel::Gaussian { sigma };
        let v = oracle::dense_product_state(&beta, n).unwrap();
        let rho = &v * v.adjoint();
        let dense_p = oracle::dense_outcome_density_scalar(&rho, n, &basis, &kernel, ell).unwrap();
        assert_abs_diff_eq!(cf.outcome_density, dense_p, epsilon = 1e-9);
        let post = oracle::dense_conditional_post_scalar(&rho, n, &basis, &kernel, ell).unwrap();
        let overlap = (v.adjoint() * &post * &v)[(0, 0)].re;
        assert_abs_diff_eq!(cf.normalized, overlap, epsilon = 1e-9);
    }

    #[test]
    fn conditional_threshold_and_bound_shape() {
        let sigma = 0.05;
        let dstar = conditional_fidelity_threshold(sigma).unwrap();
        let c = appendix_c();
        assert_abs_diff_eq!(dstar, sigma * (2.0 * (1.0 / (c * sigma)).ln()).sqrt(), epsilon = 1e-15);
        // at the window edge the printed bound equals 1 − deficiency
        let b = conditional_fidelity_bound(4000, sigma, 0.5, dstar);
        assert_abs_diff_eq!(b, 1.0 - conditional_deficiency(4000, sigma, 0.5), epsilon = 1e-12);
        assert!(conditional_deficiency(4000, sigma, 0.5) < 1e-3);
        // undefined once cσ ≥ 1
        assert!(conditional_fidelity_threshold(0.7).is_err());
    }

    #[test]
    fn bad_outcome_tail_below_printed_bound() {
        let (bound, tail) = bad_outcome_probability(&BALANCED, 4000, 0.05, 0.0).unwrap();
        assert_abs_diff_eq!(bound, 1.0, epsilon = 1e-12);
        assert!(tail > 0.99);

        let dstar = conditional_fidelity_threshold(0.05).unwrap();
        let (bound, tail) = bad_outcome_probability(&BALANCED, 4000, 0.05, dstar).unwrap();
        assert!(tail <= bound, "tail {tail} vs bound {bound}");
        assert!(tail < 0.05 && bound < 0.25);
    }

    #[test]
    fn sampled_outcomes_follow_the_record_density() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 4000;
        let sigma = 0.05;
        let samples: Vec<f64> =
            (0..4000).map(|_| sample_scalar_outcome(&BALANCED, n, sigma, &mut rng)).collect();
        let mean = samples.iter().sum::<f64>() / samples.len() as f64;
        let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / samples.len() as f64;
        assert!((mean - 0.5).abs() < 0.005, "mean {mean}");
        let want_var = sigma * sigma + 0.25 / n as f64;
        assert!((var / want_var - 1.0).abs() < 0.1, "var {var} vs {want_var}");
    }

    #[test]
    fn purified_bound_chain_for_maximally_mixed() {
        let nu = DMatrix::from_diagonal_element(2, 2, Complex64::new(0.5, 0.0));
        let basis = ObservableBasis::computational(vec![1.0, 0.0]);
        let pb = purified_mixed_state_bound(&nu, &basis, 6, 0.2).unwrap();
        let mixed = pb.mixed_exact.unwrap();
        assert!(
            mixed + 1e-9 >= pb.purified_exact,
            "mixed {mixed} vs purified {}",
            pb.purified_exact
        );
        assert!(pb.purified_exact >= pb.closed_form);
    }

    #[test]
    fn purified_bound_reduces_for_pure_and_diagonal_inputs() {
        // pure ν: purification adds nothing
        let mut nu = DMatrix::zeros(2, 2);
        nu[(0, 0)] = Complex64::new(1.0, 0.0);
        let basis = ObservableBasis::computational(vec![1.0, 0.0]);
        let pb = purified_mixed_state_bound(&nu, &basis, 6, 0.1).unwrap();
        assert_abs_diff_eq!(
            pb.purified_exact,
            exact_fidelity(&[1.0, 0.0], 6, 0.1).unwrap(),
            epsilon = 1e-12
        );

        // diagonal mixed ν at σ=0: purified value is the diagonal-ensemble sum Σ m²
        let nu = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![
            Complex64::new(0.7, 0.0),
            Complex64::new(0.3, 0.0),
        ]));
        let pb = purified_mixed_state_bound(&nu, &basis, 6, 0.0).unwrap();
        let (direct, _) = fidelity_zero_sigma(&[0.7, 0.3], 6).unwrap();
        assert_abs_diff_eq!(pb.purified_exact, direct, epsilon = 1e-12);
        // the mixed ensemble commutes with the measurement: undisturbed
        assert_abs_diff_eq!(pb.mixed_exact.unwrap(), 1.0, epsilon = 1e-9);
    }

    #[test]
    fn sweep_dominance_and_scaling_fit() {
        let points =
            tradeoff_sweep(&BALANCED, &[100, 1000], &[0.02, 0.05, 0.1, 0.3]).unwrap();
        assert_eq!(points.len(), 8);
        for p in &points {
            assert!(
                p.f_bound == 0.0 || p.f_exact + 1e-12 >= p.f_bound,
                "violation at N={} σ={}: {} < {}",
                p.n,
                p.sigma,
                p.f_exact,
                p.f_bound
            );
        }
        let big = tradeoff_sweep(&BALANCED, &[100, 1000, 10_000], &[0.02, 0.05, 0.1, 0.3]).unwrap();
        let (slope, r2) = scaling_law_fit(&big, 10.0).unwrap();
        assert!(slope > 0.0 && r2 > 0.9, "slope {slope}, R² {r2}");
    }

    #[test]
    fn regime_classification() {
        assert_eq!(Regime::classify(10_000, 0.05), Regime::Coarse);
        assert_eq!(Regime::classify(400, 0.1 / 20.0), Regime::Fine);
        assert_eq!(Regime::classify(100, 0.1), Regime::Transition);
    }
}
