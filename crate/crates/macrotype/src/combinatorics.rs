//! Types (empirical frequency vectors), type classes, multinomial weights,
//! and the typical-sequence bound.
//!
//! A length-d *type vector* records how many of the N systems sit in each
//! single-system basis state. All combinatorial magnitudes are kept in log
//! domain (log-gamma); probabilities are exponentiated only at API edges, so
//! N up to 1e5 is safe.

use crate::{Error, Result};
use statrs::function::gamma::ln_gamma;

/// Hard cap on how many types an enumeration may produce.
pub const ENUMERATION_CAP: usize = 10_000_000;

/// Counts per letter; `counts.len() == d`, `counts.iter().sum() == n`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TypeVector {
    pub counts: Vec<u32>,
}

impl TypeVector {
    pub fn n(&self) -> u32 {
        self.counts.iter().sum()
    }

    pub fn d(&self) -> usize {
        self.counts.len()
    }

    /// Normalized view L/N as floats (the per-letter relative frequencies).
    pub fn fractions(&self) -> Vec<f64> {
        let n = self.n() as f64;
        self.counts.iter().map(|&c| c as f64 / n).collect()
    }
}

pub fn ln_factorial(n: u64) -> f64 {
    ln_gamma(n as f64 + 1.0)
}

pub fn ln_binomial(n: u64, k: u64) -> f64 {
    if k > n {
        return f64::NEG_INFINITY;
    }
    ln_factorial(n) - ln_factorial(k) - ln_factorial(n - k)
}

/// Number of types: binom(n+d-1, d-1). Errors if it exceeds the enumeration cap.
pub fn num_types(n: u32, d: usize) -> Result<usize> {
    let ln = ln_binomial(n as u64 + d as u64 - 1, d as u64 - 1);
    if ln > (ENUMERATION_CAP as f64).ln() + 1e-9 {
        return Err(Error::CapExceeded(format!(
            "type space for N={n}, d={d} has ~exp({ln:.1}) elements (cap {ENUMERATION_CAP})"
        )));
    }
    Ok(ln.exp().round() as usize)
}

/// All compositions of `n` into `d` parts, in ascending lexicographic order:
/// (0,0,…,n) first, (n,0,…,0) last. Every module indexes type-basis vectors
/// by this order. For d=2 the index of (k, n−k) is simply k.
pub fn enumerate_types(n: u32, d: usize) -> Result<Vec<TypeVector>> {
    assert!(d >= 1);
    let expected = num_types(n, d)?;
    let mut out = Vec::with_capacity(expected);
    let mut cur = vec![0u32; d];
    fill(&mut out, &mut cur, 0, n);
    debug_assert_eq!(out.len(), expected);
    Ok(out)
}

fn fill(out: &mut Vec<TypeVector>, cur: &mut Vec<u32>, pos: usize, remaining: u32) {
    if pos == cur.len() - 1 {
        cur[pos] = remaining;
        out.push(TypeVector { counts: cur.clone() });
        return;
    }
    for v in 0..=remaining {
        cur[pos] = v;
        fill(out, cur, pos + 1, remaining - v);
    }
}

/// Index of a type vector in the `enumerate_types` order, or None if invalid.
/// Combinatorial ranking, no table needed.
pub fn type_index(counts: &[u32], n: u32) -> Option<usize> {
    if counts.iter().sum::<u32>() != n {
        return None;
    }
    let d = counts.len();
    // rank = Σ over positions of the number of branches skipped before the
    // chosen value; compositions of r into m parts number binom(r+m-1, m-1).
    let mut rank = 0usize;
    let mut remaining = n;
    for (pos, &c) in counts.iter().enumerate().take(d - 1) {
        let parts_after = (d - pos - 1) as u64;
        for v in 0..c {
            let r = (remaining - v) as u64;
            let cnt = ln_binomial(r + parts_after - 1, parts_after - 1).exp().round() as usize;
            rank += cnt;
        }
        remaining -= c;
    }
    Some(rank)
}

/// Counts[j] = occurrences of alphabet[j] in the string.
pub fn type_of_string(x: &str, alphabet: &[char]) -> Result<TypeVector> {
    let mut counts = vec![0u32; alphabet.len()];
    for ch in x.chars() {
        match alphabet.iter().position(|&a| a == ch) {
            Some(j) => counts[j] += 1,
            None => {
                return Err(Error::Validation(format!(
                    "letter {ch:?} not in alphabet {alphabet:?}"
                )))
            }
        }
    }
    Ok(TypeVector { counts })
}

/// ln |T[L]| = ln( N! / ∏_j L_j! ), the log size of the type class.
pub fn log_type_class_size(t: &TypeVector) -> f64 {
    let n = t.n() as u64;
    let mut ln = ln_factorial(n);
    for &c in &t.counts {
        ln -= ln_factorial(c as u64);
    }
    ln
}

/// m(L, R) = |T[L]| ∏_j R_j^{L_j}: the probability that N iid draws from R
/// produce type L. Returns 0 when some R_j = 0 with L_j > 0.
pub fn multinomial_pmf(t: &TypeVector, r: &[f64]) -> f64 {
    multinomial_ln_pmf(t, r).exp()
}

pub fn multinomial_ln_pmf(t: &TypeVector, r: &[f64]) -> f64 {
    assert_eq!(t.d(), r.len(), "type/probability dimension mismatch");
    let mut ln = log_type_class_size(t);
    for (&c, &p) in t.counts.iter().zip(r) {
        if c > 0 {
            if p <= 0.0 {
                return f64::NEG_INFINITY;
            }
            ln += c as f64 * p.ln();
        }
    }
    ln
}

/// Probability bound exp{−N(ε/2 − d·ln(N+1)/N)} on drawing a type with
/// ‖L/N − R‖₁² > ε, clamped to [0,1]. Vacuous (=1) for small N.
pub fn typical_sequence_bound(n: u32, d: usize, eps: f64) -> f64 {
    assert!(eps > 0.0, "typicality margin must be positive");
    let n_f = n as f64;
    let exponent = -n_f * (eps / 2.0 - d as f64 * ((n_f + 1.0).ln()) / n_f);
    exponent.exp().clamp(0.0, 1.0)
}

/// ‖a − b‖₁ over probability vectors.
pub fn l1_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

/// ‖a − b‖₂ over probability vectors.
pub fn l2_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Validates a probability vector: entries in [0,1], summing to 1 within 1e-12.
pub fn validate_prob_vector(r: &[f64]) -> Result<()> {
    crate::validate(
        r.iter().all(|&p| (0.0..=1.0 + 1e-12).contains(&p)),
        "probability entries must lie in [0,1]",
    )?;
    let s: f64 = r.iter().sum();
    crate::validate(
        (s - 1.0).abs() <= 1e-12 * r.len() as f64 + 1e-12,
        format!("probability vector sums to {s}, expected 1"),
    )
}

/// ln of the binomial pmf over k = 0..=n with success probability p;
/// the d=2 workhorse for large-N scenarios.
pub fn binomial_ln_pmf(n: u32, p: f64) -> Vec<f64> {
    let ln_p = if p > 0.0 { p.ln() } else { f64::NEG_INFINITY };
    let ln_q = if p < 1.0 { (1.0 - p).ln() } else { f64::NEG_INFINITY };
    (0..=n)
        .map(|k| {
            let lk = ln_binomial(n as u64, k as u64);
            let a = if k == 0 { 0.0 } else { k as f64 * ln_p };
            let b = if k == n { 0.0 } else { (n - k) as f64 * ln_q };
            lk + a + b
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn enumerates_compositions_in_lex_order() {
        let ts = enumerate_types(2, 2).unwrap();
        let counts: Vec<_> = ts.iter().map(|t| t.counts.clone()).collect();
        assert_eq!(counts, vec![vec![0, 2], vec![1, 1], vec![2, 0]]);
    }

    #[test]
    fn empty_ensemble_has_one_type() {
        let ts = enumerate_types(0, 3).unwrap();
        assert_eq!(ts.len(), 1);
        assert_eq!(ts[0].counts, vec![0, 0, 0]);
    }

    #[test]
    fn type_count_matches_stars_and_bars() {
        let ts = enumerate_types(4, 3).unwrap();
        assert_eq!(ts.len(), 15);
        for (i, t) in ts.iter().enumerate() {
            assert_eq!(type_index(&t.counts, 4), Some(i));
        }
    }

    #[test]
    fn string_typing() {
        let t = type_of_string("cbaa", &['a', 'b', 'c']).unwrap();
        assert_eq!(t.counts, vec![2, 1, 1]);
        assert_eq!(t.fractions(), vec![0.5, 0.25, 0.25]);
        assert!(type_of_string("xyz", &['a']).is_err());
    }

    #[test]
    fn class_sizes() {
        let single = TypeVector { counts: vec![4, 0] };
        assert_abs_diff_eq!(log_type_class_size(&single), 0.0, epsilon = 1e-12);
        let balanced = TypeVector { counts: vec![2, 2] };
        assert_abs_diff_eq!(log_type_class_size(&balanced), 6.0_f64.ln(), epsilon = 1e-10);
        // the (1,0,3) class over a 3-letter alphabet has exactly 4 strings
        let skew = TypeVector { counts: vec![1, 0, 3] };
        assert_abs_diff_eq!(log_type_class_size(&skew), 4.0_f64.ln(), epsilon = 1e-10);
    }

    #[test]
    fn fair_coin_binomial() {
        let r = [0.5, 0.5];
        let pmf: Vec<f64> = enumerate_types(2, 2)
            .unwrap()
            .iter()
            .map(|t| multinomial_pmf(t, &r))
            .collect();
        for (got, want) in pmf.iter().zip([0.25, 0.5, 0.25]) {
            assert_abs_diff_eq!(got, &want, epsilon = 1e-12);
        }
    }

    #[test]
    fn skewed_multinomial_value() {
        let t = TypeVector { counts: vec![3, 1] };
        assert_abs_diff_eq!(multinomial_pmf(&t, &[0.9, 0.1]), 0.2916, epsilon = 1e-12);
    }

    #[test]
    fn multinomial_normalization() {
        let r = [0.2, 0.5, 0.3];
        let total: f64 = enumerate_types(6, 3)
            .unwrap()
            .iter()
            .map(|t| multinomial_pmf(t, &r))
            .sum();
        assert_abs_diff_eq!(total, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn zero_probability_letters() {
        let t = TypeVector { counts: vec![1, 1] };
        assert_eq!(multinomial_pmf(&t, &[1.0, 0.0]), 0.0);
    }

    #[test]
    fn typicality_bound_values() {
        // exponent positive => clamped to the vacuous bound 1
        assert_eq!(typical_sequence_bound(2, 2, 0.1), 1.0);
        let want = (-100.0 * (0.25 - 2.0 * (101.0_f64).ln() / 100.0)).exp();
        assert_abs_diff_eq!(typical_sequence_bound(100, 2, 0.5), want, epsilon = 1e-15);
    }

    #[test]
    fn enumeration_cap_enforced() {
        assert!(matches!(
            enumerate_types(100_000, 4),
            Err(Error::CapExceeded(_))
        ));
    }

    #[test]
    fn binomial_ln_pmf_matches_multinomial() {
        let lp = binomial_ln_pmf(12, 0.3);
        for (k, t) in enumerate_types(12, 2).unwrap().iter().enumerate() {
            // lex order for d=2 puts (k, n-k) at index k, letter 1 first
            let m = multinomial_ln_pmf(t, &[0.3, 0.7]);
            assert_abs_diff_eq!(lp[t.counts[0] as usize], m, epsilon = 1e-10);
            assert_eq!(t.counts[0] as usize, k);
        }
    }
}
