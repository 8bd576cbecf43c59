//! Brute-force dense d^N reference implementations.
//!
//! Everything here materializes the full Hilbert space and is meant as ground
//! truth for the polynomial fast paths at small N — verification, not
//! production. Dense vectors index systems big-endian: basis index
//! Σ_k x_k d^{N-1-k}, so system 0 is the most significant digit, matching
//! repeated Kronecker products from the left.

use crate::combinatorics::{enumerate_types, log_type_class_size, TypeVector};
use crate::smoothing::Kernel;
use crate::symmetric::{coordinate, ObservableBasis, SymmetricPureState};
use crate::{Error, Result};
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use std::collections::HashMap;

/// Default dense-dimension cap; `allow_large` raises it to the hard cap.
pub const DENSE_DEFAULT_CAP: usize = 1 << 14;
pub const DENSE_HARD_CAP: usize = 1 << 20;

/// Checked d^N with cap enforcement.
pub fn dense_dim(d: usize, n: u32, allow_large: bool) -> Result<usize> {
    let cap = if allow_large { DENSE_HARD_CAP } else { DENSE_DEFAULT_CAP };
    let mut dim: usize = 1;
    for _ in 0..n {
        dim = dim.checked_mul(d).unwrap_or(usize::MAX);
        if dim > cap {
            return Err(Error::CapExceeded(format!(
                "dense dimension {d}^{n} exceeds cap {cap}"
            )));
        }
    }
    Ok(dim)
}

/// Letters of a basis index, system 0 first.
pub fn index_letters(mut idx: usize, n: u32, d: usize) -> Vec<u8> {
    let mut out = vec![0u8; n as usize];
    for k in (0..n as usize).rev() {
        out[k] = (idx % d) as u8;
        idx /= d;
    }
    out
}

/// Type index (canonical order) of every basis index, plus the type list.
pub fn types_by_index(n: u32, d: usize) -> Result<(Vec<usize>, Vec<TypeVector>)> {
    let dim = dense_dim(d, n, true)?;
    let types = enumerate_types(n, d)?;
    let lookup: HashMap<Vec<u32>, usize> =
        types.iter().enumerate().map(|(i, t)| (t.counts.clone(), i)).collect();
    let mut per_index = Vec::with_capacity(dim);
    for idx in 0..dim {
        let mut counts = vec![0u32; d];
        for &l in &index_letters(idx, n, d) {
            counts[l as usize] += 1;
        }
        per_index.push(lookup[&counts]);
    }
    Ok((per_index, types))
}

/// w^⊗N.
pub fn kron_power(w: &DMatrix<Complex64>, n: u32) -> Result<DMatrix<Complex64>> {
    dense_dim(w.nrows(), n, false)?;
    let mut out = DMatrix::<Complex64>::identity(1, 1);
    for _ in 0..n {
        out = out.kronecker(w);
    }
    Ok(out)
}

/// ν^⊗N for a single-system density matrix ν.
pub fn dense_product_density(nu: &DMatrix<Complex64>, n: u32) -> Result<DMatrix<Complex64>> {
    dense_dim(nu.nrows(), n, false)?;
    let mut out = DMatrix::<Complex64>::identity(1, 1);
    for _ in 0..n {
        out = out.kronecker(nu);
    }
    Ok(out)
}

/// β^⊗N as a dense vector.
pub fn dense_product_state(beta: &[Complex64], n: u32) -> Result<DVector<Complex64>> {
    let d = beta.len();
    let dim = dense_dim(d, n, false)?;
    let mut v = DVector::from_element(1, Complex64::new(1.0, 0.0));
    for _ in 0..n {
        let next_len = v.len() * d;
        let mut next = DVector::from_element(next_len, Complex64::new(0.0, 0.0));
        for i in 0..v.len() {
            for (j, &b) in beta.iter().enumerate() {
                next[i * d + j] = v[i] * b;
            }
        }
        v = next;
    }
    debug_assert_eq!(v.len(), dim);
    Ok(v)
}

/// Embed a symmetric-engine state into the dense space:
/// dense[X] = c_{L(X)} / √|T[L(X)]|.
pub fn embed_symmetric(state: &SymmetricPureState) -> Result<DVector<Complex64>> {
    let (per_index, types) = types_by_index(state.n, state.d)?;
    let inv_sqrt_sizes: Vec<f64> =
        types.iter().map(|t| (-0.5 * log_type_class_size(t)).exp()).collect();
    let c: Vec<Complex64> = state.amps.iter().map(|a| a.to_complex()).collect();
    Ok(DVector::from_iterator(
        per_index.len(),
        per_index.iter().map(|&ti| c[ti].scale(inv_sqrt_sizes[ti])),
    ))
}

/// Project a dense vector onto the symmetric subspace, returning type-basis
/// amplitudes ⟨L|v⟩ = Σ_{X∈T[L]} v[X] / √|T[L]|.
pub fn project_symmetric(v: &DVector<Complex64>, n: u32, d: usize) -> Result<Vec<Complex64>> {
    let (per_index, types) = types_by_index(n, d)?;
    let mut acc = vec![Complex64::new(0.0, 0.0); types.len()];
    for (idx, &ti) in per_index.iter().enumerate() {
        acc[ti] += v[idx];
    }
    for (a, t) in acc.iter_mut().zip(&types) {
        *a = a.scale((-0.5 * log_type_class_size(t)).exp());
    }
    Ok(acc)
}

/// Exact type projector Σ_{X∈T[L]} |X⟩⟨X| in the given observable eigenbasis,
/// materialized as a dense matrix in the computational basis.
pub fn dense_type_projector(
    n: u32,
    basis: &ObservableBasis,
    l: &TypeVector,
) -> Result<DMatrix<Complex64>> {
    let d = basis.alpha.len();
    let dim = dense_dim(d, n, false)?;
    let (per_index, types) = types_by_index(n, d)?;
    let target = types
        .iter()
        .position(|t| t.counts == l.counts)
        .ok_or_else(|| Error::Validation("type does not match N".into()))?;
    let u_n = kron_power(&basis.u, n)?;
    let mut diag = DMatrix::<Complex64>::zeros(dim, dim);
    for (idx, &ti) in per_index.iter().enumerate() {
        if ti == target {
            diag[(idx, idx)] = Complex64::new(1.0, 0.0);
        }
    }
    Ok(&u_n * diag * u_n.adjoint())
}

/// √q values on the diagonal of the observable eigenbasis, one per basis
/// index, for the frequency POVM (vector record ℓ⃗).
fn sqrt_q_diagonal(
    n: u32,
    d: usize,
    kernel: &Kernel,
    ell: &[f64],
) -> Result<Vec<f64>> {
    let (per_index, types) = types_by_index(n, d)?;
    let q: Vec<f64> = types
        .iter()
        .map(|t| kernel.density(&t.fractions(), ell).sqrt())
        .collect();
    Ok(per_index.iter().map(|&ti| q[ti]).collect())
}

/// Coarse POVM amplitude operator Q̃_ℓ = Σ_L √q_L(ℓ⃗) Q_L, dense, in the
/// computational basis.
pub fn dense_coarse_povm(
    n: u32,
    basis: &ObservableBasis,
    kernel: &Kernel,
    ell: &[f64],
) -> Result<DMatrix<Complex64>> {
    let d = basis.alpha.len();
    let dim = dense_dim(d, n, false)?;
    let sq = sqrt_q_diagonal(n, d, kernel, ell)?;
    let u_n = kron_power(&basis.u, n)?;
    let mut diag = DMatrix::<Complex64>::zeros(dim, dim);
    for (idx, &s) in sq.iter().enumerate() {
        diag[(idx, idx)] = Complex64::new(s, 0.0);
    }
    Ok(&u_n * diag * u_n.adjoint())
}

/// Scalar-record coarse POVM amplitude: √q is taken on the observable
/// coordinate μ(L) rather than the full frequency vector.
pub fn dense_coarse_povm_scalar(
    n: u32,
    basis: &ObservableBasis,
    kernel: &Kernel,
    ell: f64,
) -> Result<DMatrix<Complex64>> {
    let d = basis.alpha.len();
    let dim = dense_dim(d, n, false)?;
    let (per_index, types) = types_by_index(n, d)?;
    let sq: Vec<f64> = types
        .iter()
        .map(|t| kernel.density_1d(coordinate(&t.counts, n, &basis.alpha), ell).sqrt())
        .collect();
    let u_n = kron_power(&basis.u, n)?;
    let mut diag = DMatrix::<Complex64>::zeros(dim, dim);
    for (idx, &ti) in per_index.iter().enumerate() {
        diag[(idx, idx)] = Complex64::new(sq[ti], 0.0);
    }
    Ok(&u_n * diag * u_n.adjoint())
}

/// Scalar-record density Tr{Q̃ρQ̃}.
pub fn dense_outcome_density_scalar(
    rho: &DMatrix<Complex64>,
    n: u32,
    basis: &ObservableBasis,
    kernel: &Kernel,
    ell: f64,
) -> Result<f64> {
    let q = dense_coarse_povm_scalar(n, basis, kernel, ell)?;
    Ok((&q * rho * &q).trace().re)
}

/// Scalar-record conditional post state Q̃ρQ̃/P.
pub fn dense_conditional_post_scalar(
    rho: &DMatrix<Complex64>,
    n: u32,
    basis: &ObservableBasis,
    kernel: &Kernel,
    ell: f64,
) -> Result<DMatrix<Complex64>> {
    let q = dense_coarse_povm_scalar(n, basis, kernel, ell)?;
    let num = &q * rho * &q;
    let p = num.trace().re;
    if p <= 0.0 {
        return Err(Error::ZeroDensity(ell));
    }
    Ok(num.unscale(p))
}

/// Record density Tr{Q̃_ℓ ρ Q̃_ℓ†} for the frequency POVM.
pub fn dense_outcome_density(
    rho: &DMatrix<Complex64>,
    n: u32,
    basis: &ObservableBasis,
    kernel: &Kernel,
    ell: &[f64],
) -> Result<f64> {
    let q = dense_coarse_povm(n, basis, kernel, ell)?;
    Ok((&q * rho * &q).trace().re)
}

/// Conditional post-measurement state Q̃ρQ̃/P.
pub fn dense_conditional_post(
    rho: &DMatrix<Complex64>,
    n: u32,
    basis: &ObservableBasis,
    kernel: &Kernel,
    ell: &[f64],
) -> Result<DMatrix<Complex64>> {
    let q = dense_coarse_povm(n, basis, kernel, ell)?;
    let num = &q * rho * &q;
    let p = num.trace().re;
    if p <= 0.0 {
        return Err(Error::ZeroDensity(ell.first().copied().unwrap_or(f64::NAN)));
    }
    Ok(num.unscale(p))
}

/// Record-averaged post state ∫ Q̃ρQ̃ dℓ: elementwise decoherence between
/// type sectors in the observable eigenbasis, G(L(X), L(X')).
pub fn dense_averaged_post(
    rho: &DMatrix<Complex64>,
    n: u32,
    basis: &ObservableBasis,
    kernel: &Kernel,
) -> Result<DMatrix<Complex64>> {
    let d = basis.alpha.len();
    dense_dim(d, n, false)?;
    let (per_index, types) = types_by_index(n, d)?;
    let fr: Vec<Vec<f64>> = types.iter().map(|t| t.fractions()).collect();
    let u_n = kron_power(&basis.u, n)?;
    let mut in_basis = u_n.adjoint() * rho * &u_n;
    let dim = in_basis.nrows();
    for i in 0..dim {
        for j in 0..dim {
            let (ti, tj) = (per_index[i], per_index[j]);
            let g = if kernel.is_exact() {
                if ti == tj { 1.0 } else { 0.0 }
            } else {
                kernel.decoherence(&fr[ti], &fr[tj])
            };
            in_basis[(i, j)] = in_basis[(i, j)].scale(g);
        }
    }
    Ok(&u_n * in_basis * u_n.adjoint())
}

/// Scalar-record variant: decoherence on the coordinates μ(L).
pub fn dense_averaged_post_scalar(
    rho: &DMatrix<Complex64>,
    n: u32,
    basis: &ObservableBasis,
    kernel: &Kernel,
) -> Result<DMatrix<Complex64>> {
    let d = basis.alpha.len();
    dense_dim(d, n, false)?;
    let (per_index, types) = types_by_index(n, d)?;
    let mus: Vec<f64> = types.iter().map(|t| coordinate(&t.counts, n, &basis.alpha)).collect();
    let u_n = kron_power(&basis.u, n)?;
    let mut in_basis = u_n.adjoint() * rho * &u_n;
    let dim = in_basis.nrows();
    for i in 0..dim {
        for j in 0..dim {
            let (mi, mj) = (mus[per_index[i]], mus[per_index[j]]);
            let g = if kernel.is_exact() {
                if mi == mj { 1.0 } else { 0.0 }
            } else {
                kernel.decoherence_1d(mi, mj)
            };
            in_basis[(i, j)] = in_basis[(i, j)].scale(g);
        }
    }
    Ok(&u_n * in_basis * u_n.adjoint())
}

/// A binned history event on the scalar record of one observable.
#[derive(Debug, Clone)]
pub struct DenseEvent<'a> {
    pub basis: &'a ObservableBasis,
    pub kernel: &'a Kernel,
    /// Record bin [lo, hi) on the coordinate μ.
    pub lo: f64,
    pub hi: f64,
}

/// Bin-integrated POVM element E = ∫_bin Q̃_ℓ² dℓ, diagonal in the event's
/// eigenbasis with entries ∫_bin q(μ(L)−ℓ) dℓ.
pub fn dense_binned_effect(n: u32, ev: &DenseEvent) -> Result<DMatrix<Complex64>> {
    let d = ev.basis.alpha.len();
    let dim = dense_dim(d, n, false)?;
    let (per_index, types) = types_by_index(n, d)?;
    let mass: Vec<f64> = types
        .iter()
        .map(|t| ev.kernel.cell_mass_1d(coordinate(&t.counts, n, &ev.basis.alpha), ev.lo, ev.hi))
        .collect();
    let u_n = kron_power(&ev.basis.u, n)?;
    let mut diag = DMatrix::<Complex64>::zeros(dim, dim);
    for (idx, &ti) in per_index.iter().enumerate() {
        diag[(idx, idx)] = Complex64::new(mass[ti], 0.0);
    }
    Ok(&u_n * diag * u_n.adjoint())
}

/// Joint probability of a sequence of binned coarse measurements:
/// Tr{√E_n … √E_1 ρ √E_1 … √E_n}. An empty history has probability 1.
pub fn dense_history_probability(
    rho: &DMatrix<Complex64>,
    n: u32,
    events: &[DenseEvent],
) -> Result<f64> {
    let mut state = rho.clone();
    for ev in events {
        let d = ev.basis.alpha.len();
        let dim = dense_dim(d, n, false)?;
        let (per_index, types) = types_by_index(n, d)?;
        let sqrt_mass: Vec<f64> = types
            .iter()
            .map(|t| {
                ev.kernel
                    .cell_mass_1d(coordinate(&t.counts, n, &ev.basis.alpha), ev.lo, ev.hi)
                    .max(0.0)
                    .sqrt()
            })
            .collect();
        let u_n = kron_power(&ev.basis.u, n)?;
        let mut diag = DMatrix::<Complex64>::zeros(dim, dim);
        for (idx, &ti) in per_index.iter().enumerate() {
            diag[(idx, idx)] = Complex64::new(sqrt_mass[ti], 0.0);
        }
        let sqrt_e = &u_n * diag * u_n.adjoint();
        state = &sqrt_e * state * &sqrt_e;
    }
    Ok(state.trace().re)
}

/// Uhlmann fidelity between dense densities (delegates to the shared
/// eigendecomposition path).
pub fn dense_fidelity(a: &DMatrix<Complex64>, b: &DMatrix<Complex64>) -> Result<f64> {
    crate::symmetric::uhlmann_fidelity(a, b)
}

/// Partial trace down to system 0.
pub fn dense_reduce_single(rho: &DMatrix<Complex64>, n: u32, d: usize) -> DMatrix<Complex64> {
    let rest: usize = rho.nrows() / d;
    let mut out = DMatrix::<Complex64>::zeros(d, d);
    for i in 0..d {
        for j in 0..d {
            let mut acc = Complex64::new(0.0, 0.0);
            for r in 0..rest {
                acc += rho[(i * rest + r, j * rest + r)];
            }
            out[(i, j)] = acc;
        }
    }
    let _ = n;
    out
}

/// Collective (extensive) observable Σ_k 1⊗…⊗a⊗…⊗1 on N systems.
pub fn dense_collective_observable(a: &DMatrix<Complex64>, n: u32) -> Result<DMatrix<Complex64>> {
    let d = a.nrows();
    let dim = dense_dim(d, n, false)?;
    let mut out = DMatrix::<Complex64>::zeros(dim, dim);
    for k in 0..n {
        let left = DMatrix::<Complex64>::identity(d.pow(k), d.pow(k));
        let right = DMatrix::<Complex64>::identity(d.pow(n - 1 - k), d.pow(n - 1 - k));
        out += left.kronecker(a).kronecker(&right);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::smoothing::Kernel;
    use crate::symmetric;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::FRAC_1_SQRT_2;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn z_basis() -> ObservableBasis {
        ObservableBasis::computational(vec![1.0, 0.0])
    }

    fn x_basis() -> ObservableBasis {
        let h = DMatrix::from_row_slice(2, 2, &[
            c(FRAC_1_SQRT_2, 0.0), c(FRAC_1_SQRT_2, 0.0),
            c(FRAC_1_SQRT_2, 0.0), c(-FRAC_1_SQRT_2, 0.0),
        ]);
        ObservableBasis::new(h, vec![1.0, 0.0]).unwrap()
    }

    fn random_beta() -> [Complex64; 2] {
        // fixed "random" case used across the oracle-equivalence tests
        let b = [c(0.7_f64.sqrt(), 0.0), c(0.15_f64.sqrt(), 0.15_f64.sqrt())];
        debug_assert!((b.iter().map(|z| z.norm_sqr()).sum::<f64>() - 1.0).abs() < 1e-12);
        b
    }

    #[test]
    fn projectors_orthogonal_and_complete() {
        let n = 4;
        let basis = z_basis();
        let types = enumerate_types(n, 2).unwrap();
        let projs: Vec<_> = types
            .iter()
            .map(|t| dense_type_projector(n, &basis, t).unwrap())
            .collect();
        let dim = 1 << n;
        let mut sum = DMatrix::<Complex64>::zeros(dim, dim);
        for p in &projs {
            sum += p;
        }
        assert!((sum - DMatrix::<Complex64>::identity(dim, dim)).norm() < 1e-12);
        for (i, p) in projs.iter().enumerate() {
            for (j, q) in projs.iter().enumerate() {
                let prod = p * q;
                let expect = if i == j { p.clone() } else { DMatrix::zeros(dim, dim) };
                assert!((prod - expect).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn projector_rank_counts_sequences() {
        let p = dense_type_projector(4, &z_basis(), &TypeVector { counts: vec![2, 2] }).unwrap();
        assert_abs_diff_eq!(p.trace().re, 6.0, epsilon = 1e-12);
    }

    #[test]
    fn single_system_projector_is_eigenvector() {
        let p = dense_type_projector(1, &x_basis(), &TypeVector { counts: vec![1, 0] }).unwrap();
        // |+⟩⟨+| in the computational basis: all entries 1/2
        for i in 0..2 {
            for j in 0..2 {
                assert_abs_diff_eq!(p[(i, j)].re, 0.5, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn povm_completeness_quadrature() {
        let n = 3;
        let basis = z_basis();
        let kernel = Kernel::Gaussian { sigma: 0.2 };
        let dim = 1 << n;
        let step = 0.2 / 20.0;
        let mut acc = DMatrix::<Complex64>::zeros(dim, dim);
        let mut x = -6.0 * 0.2;
        while x <= 1.0 + 6.0 * 0.2 {
            let mut y = -6.0 * 0.2;
            while y <= 1.0 + 6.0 * 0.2 {
                let q = dense_coarse_povm(n, &basis, &kernel, &[x, y]).unwrap();
                acc += (&q * &q).scale(step * step);
                y += step;
            }
            x += step;
        }
        assert!((acc - DMatrix::<Complex64>::identity(dim, dim)).norm() < 1e-6);
    }

    #[test]
    fn outcome_density_matches_engine() {
        let n = 6;
        let beta = random_beta();
        let kernel = Kernel::Gaussian { sigma: 0.1 };
        let s = SymmetricPureState::product(&beta, n).unwrap();
        let v = dense_product_state(&beta, n).unwrap();
        let rho = &v * v.adjoint();
        for ell in [[0.1, 0.9], [0.62, 0.38], [0.95, 0.05]] {
            let dense = dense_outcome_density(&rho, n, &z_basis(), &kernel, &ell).unwrap();
            let fast = symmetric::outcome_density_pure(&s, &kernel, &ell);
            assert_abs_diff_eq!(dense, fast, epsilon = 1e-9);
        }
    }

    #[test]
    fn conditional_post_matches_engine() {
        let n = 6;
        let beta = random_beta();
        let kernel = Kernel::Gaussian { sigma: 0.1 };
        let ell = [0.6, 0.4];
        let s = SymmetricPureState::product(&beta, n).unwrap();
        let post = symmetric::conditional_post_pure(&s, &kernel, &ell).unwrap();
        let dense_post_embedded = embed_symmetric(&post).unwrap();

        let v = dense_product_state(&beta, n).unwrap();
        let rho = &v * v.adjoint();
        let dense_post = dense_conditional_post(&rho, n, &z_basis(), &kernel, &ell).unwrap();
        let diff = &dense_post - &dense_post_embedded * dense_post_embedded.adjoint();
        assert!(diff.norm() < 1e-9);
    }

    #[test]
    fn averaged_post_matches_engine() {
        let n = 6;
        let beta = random_beta();
        let kernel = Kernel::Gaussian { sigma: 0.2 };
        let s = SymmetricPureState::product(&beta, n).unwrap();
        let avg = symmetric::averaged_post_density(&s, &kernel).unwrap();

        let v = dense_product_state(&beta, n).unwrap();
        let rho = &v * v.adjoint();
        let dense_avg = dense_averaged_post(&rho, n, &z_basis(), &kernel).unwrap();

        // compare on the symmetric subspace, type pair by type pair
        let (per_index, types) = types_by_index(n, 2).unwrap();
        let t = types.len();
        let mut projected = DMatrix::<Complex64>::zeros(t, t);
        let inv: Vec<f64> = types.iter().map(|ty| (-0.5 * log_type_class_size(ty)).exp()).collect();
        for i in 0..rho.nrows() {
            for j in 0..rho.ncols() {
                projected[(per_index[i], per_index[j])] +=
                    dense_avg[(i, j)].scale(inv[per_index[i]] * inv[per_index[j]]);
            }
        }
        assert!((projected - avg.mat).norm() < 1e-9);
    }

    #[test]
    fn reduction_matches_engine() {
        let n = 6;
        let beta = random_beta();
        let kernel = Kernel::Gaussian { sigma: 0.1 };
        let s = SymmetricPureState::product(&beta, n).unwrap();
        let avg = symmetric::averaged_post_density(&s, &kernel).unwrap();
        let fast = symmetric::reduce_single_molecule(&avg);

        let v = dense_product_state(&beta, n).unwrap();
        let rho = &v * v.adjoint();
        let dense_avg = dense_averaged_post(&rho, n, &z_basis(), &kernel).unwrap();
        let dense_red = dense_reduce_single(&dense_avg, n, 2);
        assert!((fast - dense_red).norm() < 1e-9);
    }

    #[test]
    fn induced_unitary_matches_dense_tensor_power() {
        let n = 3;
        let h = x_basis().u;
        let big = symmetric::induced_unitary(&h, n).unwrap();
        let dense = kron_power(&h, n).unwrap();
        // compare action on each symmetric basis vector
        let types = enumerate_types(n, 2).unwrap();
        for (k, _) in types.iter().enumerate() {
            let mut amps = vec![c(0.0, 0.0); types.len()];
            amps[k] = c(1.0, 0.0);
            let sym = SymmetricPureState::from_complex_amps(n, 2, amps);
            let dense_in = embed_symmetric(&sym).unwrap();
            let dense_out = &dense * dense_in;
            let projected = project_symmetric(&dense_out, n, 2).unwrap();
            for (i, &z) in projected.iter().enumerate() {
                let fast = big[(i, k)];
                assert_abs_diff_eq!(z.re, fast.re, epsilon = 1e-10);
                assert_abs_diff_eq!(z.im, fast.im, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn empty_history_and_full_bin() {
        let n = 4;
        let beta = random_beta();
        let v = dense_product_state(&beta, n).unwrap();
        let rho = &v * v.adjoint();
        assert_abs_diff_eq!(dense_history_probability(&rho, n, &[]).unwrap(), 1.0, epsilon = 1e-12);

        let kernel = Kernel::Gaussian { sigma: 0.1 };
        let basis = z_basis();
        let ev = DenseEvent { basis: &basis, kernel: &kernel, lo: f64::NEG_INFINITY, hi: f64::INFINITY };
        assert_abs_diff_eq!(
            dense_history_probability(&rho, n, &[ev]).unwrap(),
            1.0,
            epsilon = 1e-10
        );
    }

    #[test]
    fn repeated_exact_measurement_is_idempotent() {
        let n = 4;
        let beta = random_beta();
        let v = dense_product_state(&beta, n).unwrap();
        let rho = &v * v.adjoint();
        let basis = z_basis();
        let kernel = Kernel::Exact;
        // bin [0.4, 0.8) on the fraction coordinate captures types (2,2) and (3,1)
        let once = dense_history_probability(
            &rho,
            n,
            &[DenseEvent { basis: &basis, kernel: &kernel, lo: 0.4, hi: 0.8 }],
        )
        .unwrap();
        let twice = dense_history_probability(
            &rho,
            n,
            &[
                DenseEvent { basis: &basis, kernel: &kernel, lo: 0.4, hi: 0.8 },
                DenseEvent { basis: &basis, kernel: &kernel, lo: 0.4, hi: 0.8 },
            ],
        )
        .unwrap();
        assert_abs_diff_eq!(once, twice, epsilon = 1e-12);
    }

    #[test]
    fn dense_fidelity_basics_and_symmetry() {
        let n = 2;
        let beta = random_beta();
        let v = dense_product_state(&beta, n).unwrap();
        let rho = &v * v.adjoint();
        assert_abs_diff_eq!(dense_fidelity(&rho, &rho).unwrap(), 1.0, epsilon = 1e-10);

        let kernel = Kernel::Gaussian { sigma: 0.15 };
        let avg = dense_averaged_post(&rho, n, &z_basis(), &kernel).unwrap();
        let f_ab = dense_fidelity(&rho, &avg).unwrap();
        let f_ba = dense_fidelity(&avg, &rho).unwrap();
        // two orderings exercise different eigenproblems; they must agree
        assert_abs_diff_eq!(f_ab, f_ba, epsilon = 1e-10);
        let overlap = (v.adjoint() * &avg * &v)[(0, 0)].re;
        assert_abs_diff_eq!(f_ab, overlap, epsilon = 1e-10);
    }

    #[test]
    fn collective_observable_eigenvalues_are_extensive() {
        let sz = DMatrix::from_row_slice(2, 2, &[c(0.5, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(-0.5, 0.0)]);
        let n = 3;
        let a = dense_collective_observable(&sz, n).unwrap();
        let basis = ObservableBasis::computational(vec![0.5, -0.5]);
        let (per_index, types) = types_by_index(n, 2).unwrap();
        for (idx, &ti) in per_index.iter().enumerate() {
            let want = basis.macro_eigenvalue(&types[ti]);
            assert_abs_diff_eq!(a[(idx, idx)].re, want, epsilon = 1e-12);
        }
    }

    #[test]
    fn dense_cap_enforced() {
        assert!(matches!(dense_dim(2, 15, false), Err(Error::CapExceeded(_))));
        assert!(dense_dim(2, 15, true).is_ok());
        assert!(matches!(dense_dim(2, 21, true), Err(Error::CapExceeded(_))));
    }
}
