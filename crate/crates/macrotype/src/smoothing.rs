//! Smoothing functions q_L(ℓ) — the detector-resolution model — and their
//! decoherence kernels G(L,L') = ∫ √(q_L q_{L'}) dℓ.
//!
//! A kernel turns the exact type projectors into a coarse POVM: record ℓ is
//! read with density q_L(ℓ) when the true type is L. Records live either in
//! ℝ^d (one coordinate per letter frequency) or in ℝ (a single macroscopic
//! coordinate, e.g. a magnetization); the same kernel handles both, applying
//! its width per record component. Records are allowed outside [0,1]^d —
//! detector noise is part of the model, so no clipping anywhere.

use serde::{Deserialize, Serialize};
use statrs::function::erf::erf;

pub const SQRT_2: f64 = std::f64::consts::SQRT_2;

/// Standard normal CDF.
pub fn phi(x: f64) -> f64 {
    0.5 * (1.0 + erf(x / SQRT_2))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Kernel {
    /// The σ→0 limit: records coincide with exact type coordinates and the
    /// measurement is the bare type-projector measurement.
    Exact,
    /// Per-component Gaussian of width `sigma` (normalized-type units)
    /// centered on the type coordinate.
    Gaussian { sigma: f64 },
    /// Gaussian mass quantized onto a uniform record lattice: the outcome
    /// spectrum is discrete with pitch `spacing`, and cell j carries the
    /// Gaussian mass of [j−1/2, j+1/2)·spacing. One choice of discrete comb
    /// among many; completeness holds exactly by construction.
    Comb { sigma: f64, spacing: f64 },
}

impl Kernel {
    pub fn sigma(&self) -> f64 {
        match *self {
            Kernel::Exact => 0.0,
            Kernel::Gaussian { sigma } | Kernel::Comb { sigma, .. } => sigma,
        }
    }

    pub fn is_exact(&self) -> bool {
        matches!(self, Kernel::Exact)
    }

    pub fn validate(&self) -> crate::Result<()> {
        match *self {
            Kernel::Exact => Ok(()),
            Kernel::Gaussian { sigma } => crate::validate(sigma > 0.0, "kernel width must be > 0"),
            Kernel::Comb { sigma, spacing } => crate::validate(
                sigma > 0.0 && spacing > 0.0,
                "comb kernel needs positive width and spacing",
            ),
        }
    }

    /// 1-D record density q_μ(ℓ) for a scalar macroscopic coordinate μ.
    /// For `Comb` this is the pmf of the nearest lattice cell divided by the
    /// spacing (a density on the lattice measure). Undefined for `Exact`
    /// (records are discrete); callers handle σ=0 through the exact paths.
    pub fn density_1d(&self, mu: f64, ell: f64) -> f64 {
        match *self {
            Kernel::Exact => panic!("Exact kernel has no continuous record density"),
            Kernel::Gaussian { sigma } => {
                let z = (ell - mu) / sigma;
                (-0.5 * z * z).exp() / ((2.0 * std::f64::consts::PI).sqrt() * sigma)
            }
            Kernel::Comb { spacing, .. } => {
                let j = (ell / spacing).round();
                self.comb_cell_mass(mu, j) / spacing
            }
        }
    }

    pub fn ln_density_1d(&self, mu: f64, ell: f64) -> f64 {
        match *self {
            Kernel::Gaussian { sigma } => {
                let z = (ell - mu) / sigma;
                -0.5 * z * z - (2.0 * std::f64::consts::PI).sqrt().ln() - sigma.ln()
            }
            _ => self.density_1d(mu, ell).ln(),
        }
    }

    /// Multi-component record density: product of per-component densities.
    pub fn density(&self, mu: &[f64], ell: &[f64]) -> f64 {
        assert_eq!(mu.len(), ell.len(), "record/type dimension mismatch");
        mu.iter()
            .zip(ell)
            .map(|(&m, &l)| self.density_1d(m, l))
            .product()
    }

    /// Log of the multi-component record density; stays finite where the
    /// product form underflows.
    pub fn ln_density(&self, mu: &[f64], ell: &[f64]) -> f64 {
        assert_eq!(mu.len(), ell.len(), "record/type dimension mismatch");
        mu.iter()
            .zip(ell)
            .map(|(&m, &l)| self.ln_density_1d(m, l))
            .sum()
    }

    /// Decoherence factor G(μ,μ') = ∫ √(q_μ q_{μ'}) dℓ for scalar records.
    /// Gaussian closed form: exp{−(μ−μ')²/8σ²}.
    pub fn decoherence_1d(&self, mu: f64, nu: f64) -> f64 {
        match *self {
            Kernel::Exact => {
                if mu == nu {
                    1.0
                } else {
                    0.0
                }
            }
            Kernel::Gaussian { sigma } => {
                let d = mu - nu;
                (-d * d / (8.0 * sigma * sigma)).exp()
            }
            Kernel::Comb { sigma, spacing } => {
                // lattice sum of √(f_j(μ) f_j(ν)); support effectively ±8σ
                let lo = ((mu.min(nu) - 8.0 * sigma) / spacing).floor() as i64;
                let hi = ((mu.max(nu) + 8.0 * sigma) / spacing).ceil() as i64;
                (lo..=hi)
                    .map(|j| {
                        (self.comb_cell_mass(mu, j as f64) * self.comb_cell_mass(nu, j as f64))
                            .sqrt()
                    })
                    .sum()
            }
        }
    }

    /// Vector-record decoherence factor: product over components, which for
    /// the Gaussian collapses to exp{−‖μ−ν‖₂²/8σ²}.
    pub fn decoherence(&self, mu: &[f64], nu: &[f64]) -> f64 {
        assert_eq!(mu.len(), nu.len());
        mu.iter()
            .zip(nu)
            .map(|(&m, &n)| self.decoherence_1d(m, n))
            .product()
    }

    /// Mass a scalar record falling in [lo, hi) would be read with, given
    /// coordinate μ: ∫_lo^hi q_μ(ℓ) dℓ. For `Exact`, the indicator of μ ∈ [lo, hi).
    pub fn cell_mass_1d(&self, mu: f64, lo: f64, hi: f64) -> f64 {
        debug_assert!(lo <= hi);
        match *self {
            Kernel::Exact => {
                if lo <= mu && mu < hi {
                    1.0
                } else {
                    0.0
                }
            }
            Kernel::Gaussian { sigma } => phi((hi - mu) / sigma) - phi((lo - mu) / sigma),
            Kernel::Comb { sigma, spacing } => {
                // all mass lives within ~12σ of μ; clamping keeps semi-infinite
                // bins (overflow cells) finite
                let lo = lo.max(mu - 12.0 * sigma - spacing);
                let hi = hi.min(mu + 12.0 * sigma + spacing);
                if lo >= hi {
                    return 0.0;
                }
                let jlo = (lo / spacing).ceil() as i64;
                let jhi = (hi / spacing).ceil() as i64; // cells j with j*spacing in [lo,hi)
                (jlo..jhi)
                    .map(|j| self.comb_cell_mass(mu, j as f64))
                    .sum()
            }
        }
    }

    fn comb_cell_mass(&self, mu: f64, j: f64) -> f64 {
        match *self {
            Kernel::Comb { sigma, spacing } => {
                let lo = (j - 0.5) * spacing;
                let hi = (j + 0.5) * spacing;
                phi((hi - mu) / sigma) - phi((lo - mu) / sigma)
            }
            _ => unreachable!(),
        }
    }
}

/// The d-dimensional Gaussian record density
/// (2πσ²)^{−d/2} exp{−‖ℓ−L‖₂²/2σ²} around the normalized type L.
pub fn gaussian_density(sigma: f64, l: &[f64], ell: &[f64]) -> f64 {
    assert!(sigma > 0.0, "kernel width must be positive");
    Kernel::Gaussian { sigma }.density(l, ell)
}

/// Brute-force quadrature of G(μ,ν) = ∫√(q_μ q_ν): tensor grid truncated at
/// ±6σ around the midpoint, step σ/20. The reproducible reference for the
/// closed forms; per-component product keeps it 1-D.
pub fn quadrature_decoherence(kernel: &Kernel, mu: &[f64], nu: &[f64]) -> f64 {
    let sigma = kernel.sigma();
    assert!(sigma > 0.0);
    let step = sigma / 20.0;
    let mut total = 1.0;
    for (&m, &n) in mu.iter().zip(nu) {
        let mid = 0.5 * (m + n);
        let lo = mid - 6.0 * sigma;
        let npts = (12.0 * sigma / step).round() as usize + 1;
        let mut acc = 0.0;
        for i in 0..npts {
            let ell = lo + i as f64 * step;
            let w = if i == 0 || i == npts - 1 { 0.5 } else { 1.0 };
            acc += w * (kernel.density_1d(m, ell) * kernel.density_1d(n, ell)).sqrt();
        }
        total *= acc * step;
    }
    total
}

/// Empirical Lipschitz estimate: the smallest c with
/// |q_L(ℓ) − q_{L'}(ℓ)| ≤ c (‖L−L'‖₁/σ)^s over the sampled triples.
/// An estimate from samples, not a proof; refine the sample to probe
/// non-Lipschitz kernels (the estimate then diverges).
pub fn lipschitz_estimate(kernel: &Kernel, triples: &[(Vec<f64>, Vec<f64>, Vec<f64>)], s: f64) -> f64 {
    assert!(!triples.is_empty(), "need at least one sampled triple");
    let sigma = kernel.sigma();
    let mut c = 0.0_f64;
    for (l, lp, ell) in triples {
        let dist = crate::combinatorics::l1_distance(l, lp);
        if dist == 0.0 {
            continue; // zero difference, any c works
        }
        let dq = (kernel.density(l, ell) - kernel.density(lp, ell)).abs();
        c = c.max(dq / (dist / sigma).powf(s));
    }
    c
}
