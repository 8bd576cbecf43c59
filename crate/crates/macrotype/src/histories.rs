//! Sequences of coarse collective measurements on one ensemble: joint history
//! probabilities, the sum-rule violation that quantifies how far a family of
//! such sequences is from a consistent (classically additive) description,
//! the 1/N commutator scaling that underwrites it, and type statistics of
//! non-identical product preparations.

use crate::combinatorics::{enumerate_types, ln_binomial, num_types, type_index};
use crate::oracle::{dense_history_probability, kron_power, DenseEvent};
use crate::smoothing::Kernel;
use crate::symmetric::{
    apply_collective_pure, coordinate, ObservableBasis, SymmetricPureState,
};
use crate::tomography::{letter_probabilities, validate_density, PriorGrid};
use crate::{Error, Result};
use nalgebra::{DMatrix, DVector};
use num_bigint::BigInt;
use num_complex::Complex64;
use num_traits::{ToPrimitive, Zero};

/// Cap on the supermolecule alphabet d^ξ for generically entangled blocks.
pub const SUPERMOLECULE_CAP: usize = 8;

/// Cap on the supermolecule type count for the generic block engine; beyond
/// it only the all-aligned (GHZ-form) fast path or the dense oracle apply.
const BLOCK_TYPES_CAP: usize = 5_000;

// ---------------------------------------------------------------------------
// Bins
// ---------------------------------------------------------------------------

/// Partition of the record line into contiguous cells. `edges` are the finite
/// cut points in ascending order; cell 0 is (−∞, e₀), cell i is [e_{i−1},
/// e_i), and the last cell is [e_last, ∞). With no edges there is a single
/// cell covering everything, so the cells always cover the line and never
/// overlap.
#[derive(Debug, Clone, PartialEq)]
pub struct Bins {
    edges: Vec<f64>,
}

impl Bins {
    pub fn from_edges(edges: Vec<f64>) -> Result<Self> {
        crate::validate(edges.iter().all(|e| e.is_finite()), "bin edges must be finite")?;
        crate::validate(
            edges.windows(2).all(|w| w[0] < w[1]),
            "bin edges must be strictly ascending",
        )?;
        Ok(Self { edges })
    }

    /// `cells` equal-width cells of the given width centered on `center`,
    /// the outermost two extending to ±∞.
    pub fn centered(center: f64, width: f64, cells: usize) -> Result<Self> {
        crate::validate(width > 0.0 && width.is_finite(), "cell width must be positive")?;
        crate::validate(cells >= 1, "need at least one cell")?;
        let edges = (0..cells.saturating_sub(1))
            .map(|j| center + width * (j as f64 - (cells as f64 - 1.0) / 2.0 + 0.5))
            .collect();
        Self::from_edges(edges)
    }

    /// Default record binning: width-σ cells covering mean ± 4σ plus the two
    /// overflow cells (10 cells total).
    pub fn default_for(mean: f64, sigma: f64) -> Result<Self> {
        Self::centered(mean, sigma, 10)
    }

    pub fn num_cells(&self) -> usize {
        self.edges.len() + 1
    }

    /// Bounds of cell i as [lo, hi), the outer cells reaching ±∞.
    pub fn cell_bounds(&self, i: usize) -> (f64, f64) {
        let lo = if i == 0 { f64::NEG_INFINITY } else { self.edges[i - 1] };
        let hi = if i == self.edges.len() { f64::INFINITY } else { self.edges[i] };
        (lo, hi)
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }
}

// ---------------------------------------------------------------------------
// Events, preparations, families
// ---------------------------------------------------------------------------

/// One entry of a history: read the macroscopic observable given by `basis`
/// with record width given by `kernel`, and classify the record into `bins`.
#[derive(Debug, Clone)]
pub struct HistoryEvent {
    pub basis: ObservableBasis,
    pub kernel: Kernel,
    pub bins: Bins,
}

/// Initial ensemble the history is run on.
#[derive(Debug, Clone)]
pub enum Preparation {
    /// β^⊗N — every molecule in the same pure state.
    PureProduct { beta: Vec<Complex64>, n: u32 },
    /// Σ_i w_i ν_i^⊗N over a discrete grid (the exchangeable form).
    Exchangeable { grid: PriorGrid, n: u32 },
    /// ν₁ ⊗ … ⊗ ν_N with arbitrary per-molecule states.
    ProductList { states: Vec<DMatrix<Complex64>> },
    /// (N/ξ)-fold product of a pure state on ξ-molecule blocks: entanglement
    /// of range ξ, nothing beyond.
    BlockProduct { xi: u32, n: u32, d: usize, block: Vec<Complex64> },
}

impl Preparation {
    pub fn pure_product(beta: Vec<Complex64>, n: u32) -> Result<Self> {
        crate::validate(n >= 1 && beta.len() >= 2, "need n ≥ 1 and at least two levels")?;
        let norm: f64 = beta.iter().map(|b| b.norm_sqr()).sum();
        crate::validate((norm - 1.0).abs() <= 1e-10, "molecule state must be normalized")?;
        Ok(Self::PureProduct { beta, n })
    }

    pub fn exchangeable(grid: PriorGrid, n: u32) -> Result<Self> {
        crate::validate(n >= 1, "need n ≥ 1")?;
        Ok(Self::Exchangeable { grid, n })
    }

    pub fn product_list(states: Vec<DMatrix<Complex64>>) -> Result<Self> {
        crate::validate(!states.is_empty(), "empty molecule list")?;
        let d = states[0].nrows();
        for nu in &states {
            crate::validate(nu.nrows() == d && nu.ncols() == d, "mixed molecule dimensions")?;
            validate_density(nu)?;
        }
        Ok(Self::ProductList { states })
    }

    pub fn n(&self) -> u32 {
        match self {
            Self::PureProduct { n, .. } => *n,
            Self::Exchangeable { n, .. } => *n,
            Self::ProductList { states } => states.len() as u32,
            Self::BlockProduct { n, .. } => *n,
        }
    }

    pub fn d(&self) -> usize {
        match self {
            Self::PureProduct { beta, .. } => beta.len(),
            Self::Exchangeable { grid, .. } => grid.states()[0].nrows(),
            Self::ProductList { states } => states[0].nrows(),
            Self::BlockProduct { d, .. } => *d,
        }
    }
}

/// Block amplitudes for the maximally aligned ξ-block state
/// a₀|x₀…x₀⟩ + a₁|x_{d−1}…x_{d−1}⟩ (length d^ξ vector).
pub fn ghz_block_amplitudes(xi: u32, d: usize, a0: Complex64, a1: Complex64) -> Vec<Complex64> {
    let dim = d.pow(xi);
    let mut block = vec![Complex64::new(0.0, 0.0); dim];
    block[0] = a0;
    block[dim - 1] = a1;
    block
}

/// Validated block preparation: ξ must divide N, the block state must be
/// normalized, and generically entangled blocks must satisfy d^ξ ≤
/// [`SUPERMOLECULE_CAP`]. All-aligned (GHZ-form) qubit blocks are exempt from
/// the cap: they stay two-dimensional per block no matter how large ξ is.
pub fn block_preparation(xi: u32, n: u32, d: usize, block: Vec<Complex64>) -> Result<Preparation> {
    crate::validate(xi >= 1 && n >= 1 && d >= 2, "need ξ ≥ 1, N ≥ 1, d ≥ 2")?;
    crate::validate(n % xi == 0, "block size must divide the ensemble size")?;
    let dim = (d as u64).checked_pow(xi).ok_or_else(|| {
        Error::CapExceeded("block dimension d^xi overflows".into())
    })? as usize;
    crate::validate(block.len() == dim, "block amplitude count must be d^xi")?;
    let norm: f64 = block.iter().map(|b| b.norm_sqr()).sum();
    crate::validate((norm - 1.0).abs() <= 1e-10, "block state must be normalized")?;
    if ghz_form(&block).is_none() {
        crate::validate(
            dim <= SUPERMOLECULE_CAP,
            "generic block dimension d^xi exceeds the supermolecule cap",
        )?;
    }
    Ok(Preparation::BlockProduct { xi, n, d, block })
}

/// A family: an ordered list of events (every cell of every event's bins is
/// an alternative) run on one preparation.
#[derive(Debug, Clone)]
pub struct HistoryFamily {
    pub events: Vec<HistoryEvent>,
    pub prep: Preparation,
}

impl HistoryFamily {
    pub fn new(events: Vec<HistoryEvent>, prep: Preparation) -> Result<Self> {
        crate::validate(!events.is_empty(), "a family needs at least one event")?;
        for ev in &events {
            crate::validate(
                ev.basis.alpha.len() == prep.d(),
                "event dimension differs from the preparation",
            )?;
            ev.kernel.validate()?;
        }
        Ok(Self { events, prep })
    }
}

/// Transverse qubit observable: Hadamard eigenbasis with eigenvalues (1, 0),
/// so the coordinate is the fraction of molecules aligned along +x.
pub fn qubit_x_basis() -> ObservableBasis {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let re = |x: f64| Complex64::new(x, 0.0);
    ObservableBasis::new(
        DMatrix::from_row_slice(2, 2, &[re(s), re(s), re(s), re(-s)]),
        vec![1.0, 0.0],
    )
    .expect("Hadamard is unitary")
}

// ---------------------------------------------------------------------------
// Evaluators
// ---------------------------------------------------------------------------

/// One event preprocessed for the symmetric engine: rotations in and out of
/// the event eigenbasis (already lifted for purified or block letters) and
/// the coordinate of every type in that eigenbasis.
struct SymEvent {
    w_in: DMatrix<Complex64>,
    w_out: DMatrix<Complex64>,
    kernel: Kernel,
    bins: Bins,
    mu: Vec<f64>,
}

/// A preparation component the symmetric engine can chain directly.
struct SymChain {
    init: SymmetricPureState,
    events: Vec<SymEvent>,
}

/// All-aligned qubit-block preparation with identity-basis events and an
/// optional final Hadamard-basis event; everything is diagonal on the number
/// of flipped blocks except the final transverse read, which is handled by
/// an exact integer pipeline.
struct GhzChain {
    n: u32,
    /// per-subset amplitude for s flipped blocks (real by validation)
    w: Vec<f64>,
    /// (kernel, bins, coordinate per s) for every identity-basis event
    z_events: Vec<(Kernel, Bins, Vec<f64>)>,
    /// (kernel, bins, coordinate per transverse count r) for a final
    /// Hadamard-basis event
    x_event: Option<(Kernel, Bins, Vec<f64>)>,
}

enum Evaluator {
    Sym(Vec<(f64, SymChain)>),
    Ghz(GhzChain),
    Dense { rho: DMatrix<Complex64>, n: u32, events: Vec<HistoryEvent> },
}

fn is_identity(u: &DMatrix<Complex64>, tol: f64) -> bool {
    let d = u.nrows();
    (u - DMatrix::<Complex64>::identity(d, d)).norm() <= tol
}

fn is_hadamard(u: &DMatrix<Complex64>) -> bool {
    if u.nrows() != 2 {
        return false;
    }
    let s = Complex64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
    let h = DMatrix::from_row_slice(2, 2, &[s, s, s, -s]);
    (u - h).norm() <= 1e-12
}

/// Split a block amplitude vector into GHZ form (a₀, a₁ real amplitudes on
/// the all-first and all-last words) if that is what it is.
fn ghz_form(block: &[Complex64]) -> Option<(f64, f64)> {
    let dim = block.len();
    if dim < 2 {
        return None;
    }
    let interior_ok = block[1..dim - 1].iter().all(|b| b.norm() <= 1e-12);
    let real_ok = block[0].im.abs() <= 1e-12 && block[dim - 1].im.abs() <= 1e-12;
    if interior_ok && real_ok {
        Some((block[0].re, block[dim - 1].re))
    } else {
        None
    }
}

/// Pure-state chain with letters of dimension `dim`, initial amplitudes
/// `init`, event bases lifted by `lift` and coordinates by `alpha_of`.
fn sym_chain(
    init: SymmetricPureState,
    events: &[HistoryEvent],
    lift: impl Fn(&DMatrix<Complex64>) -> Result<DMatrix<Complex64>>,
    alpha_of: impl Fn(&[f64]) -> Vec<f64>,
) -> Result<SymChain> {
    let n = init.n;
    let dim = init.d;
    let types = enumerate_types(n, dim)?;
    let mut out = Vec::with_capacity(events.len());
    for ev in events {
        let u = lift(&ev.basis.u)?;
        let alpha = alpha_of(&ev.basis.alpha);
        crate::validate(alpha.len() == dim, "lifted event dimension mismatch")?;
        let mu = types.iter().map(|t| coordinate(&t.counts, n, &alpha)).collect();
        out.push(SymEvent {
            w_in: u.adjoint(),
            w_out: u,
            kernel: ev.kernel.clone(),
            bins: ev.bins.clone(),
            mu,
        });
    }
    Ok(SymChain { init, events: out })
}

/// Purified chain for one mixed molecule state: each letter doubles into
/// (system, ancilla), the initial amplitudes come from the eigen
/// decomposition ν = Σ λ_a|φ_a⟩⟨φ_a| as β[(j,a)] = √λ_a·φ_a[j], events act
/// on the system factor only, and coordinates ignore the ancilla. Norms of
/// chained √-effects then reproduce ν^⊗N statistics exactly.
fn purified_chain(
    nu: &DMatrix<Complex64>,
    n: u32,
    events: &[HistoryEvent],
) -> Result<SymChain> {
    let d = nu.nrows();
    crate::validate(
        num_types(n, d * d)? <= BLOCK_TYPES_CAP,
        "purified mixed-component chain exceeds the fast-path type cap",
    )?;
    let eig = nu.clone().symmetric_eigen();
    let mut beta = vec![Complex64::new(0.0, 0.0); d * d];
    for a in 0..d {
        let lam = eig.eigenvalues[a].max(0.0);
        let root = lam.sqrt();
        for j in 0..d {
            beta[j * d + a] = eig.eigenvectors[(j, a)] * root;
        }
    }
    let init = SymmetricPureState::product(&beta, n)?;
    let anc = DMatrix::<Complex64>::identity(d, d);
    sym_chain(
        init,
        events,
        |u| Ok(u.kronecker(&anc)),
        |alpha| {
            let mut out = Vec::with_capacity(d * d);
            for &a in alpha {
                out.extend(std::iter::repeat(a).take(d));
            }
            out
        },
    )
}

/// Supermolecule chain: blocks of ξ molecules become single molecules with
/// d^ξ letters, events lift as u^⊗ξ, and the coordinate of a word is the
/// mean of its letters' coordinates.
fn block_chain(
    xi: u32,
    n: u32,
    d: usize,
    block: &[Complex64],
    events: &[HistoryEvent],
) -> Result<SymChain> {
    let m = n / xi;
    let dim = block.len();
    crate::validate(
        num_types(m, dim)? <= BLOCK_TYPES_CAP,
        "supermolecule type count exceeds the fast-path cap",
    )?;
    let init = SymmetricPureState::product(block, m)?;
    let word_counts: Vec<Vec<u32>> = (0..dim)
        .map(|w| {
            let mut counts = vec![0u32; d];
            let mut rest = w;
            for _ in 0..xi {
                counts[rest % d] += 1;
                rest /= d;
            }
            counts
        })
        .collect();
    sym_chain(
        init,
        events,
        |u| kron_power(u, xi),
        |alpha| {
            word_counts
                .iter()
                .map(|counts| {
                    counts
                        .iter()
                        .zip(alpha)
                        .map(|(&c, &a)| c as f64 * a)
                        .sum::<f64>()
                        / xi as f64
                })
                .collect()
        },
    )
}

/// GHZ fast-path chain, available when every event is diagonal in the
/// computational basis except for an optional final Hadamard-basis read.
fn ghz_chain(
    xi: u32,
    n: u32,
    a0: f64,
    a1: f64,
    events: &[HistoryEvent],
) -> Result<GhzChain> {
    let m = (n / xi) as usize;
    let nf = n as f64;
    let mut z_events = Vec::new();
    let mut x_event = None;
    for (idx, ev) in events.iter().enumerate() {
        let alpha = &ev.basis.alpha;
        if is_identity(&ev.basis.u, 1e-12) {
            let mu = (0..=m)
                .map(|s| {
                    let k0 = (xi as f64) * (m - s) as f64;
                    (k0 * alpha[0] + (nf - k0) * alpha[1]) / nf
                })
                .collect();
            z_events.push((ev.kernel.clone(), ev.bins.clone(), mu));
        } else if idx == events.len() - 1 && is_hadamard(&ev.basis.u) {
            let mu = (0..=n)
                .map(|r| ((nf - r as f64) * alpha[0] + r as f64 * alpha[1]) / nf)
                .collect();
            x_event = Some((ev.kernel.clone(), ev.bins.clone(), mu));
        } else {
            return Err(Error::CapExceeded(
                "aligned-block fast path needs computational-basis events with at most a final \
                 transverse read"
                    .into(),
            ));
        }
    }
    let w = (0..=m)
        .map(|s| a0.powi((m - s) as i32) * a1.powi(s as i32))
        .collect();
    Ok(GhzChain { n, w, z_events, x_event })
}

fn build_evaluator(prep: &Preparation, events: &[HistoryEvent]) -> Result<Evaluator> {
    for ev in events {
        crate::validate(
            ev.basis.alpha.len() == prep.d(),
            "event dimension differs from the preparation",
        )?;
        ev.kernel.validate()?;
    }
    match prep {
        Preparation::PureProduct { beta, n } => {
            let init = SymmetricPureState::product(beta, *n)?;
            let chain = sym_chain(init, events, |u| Ok(u.clone()), |a| a.to_vec())?;
            Ok(Evaluator::Sym(vec![(1.0, chain)]))
        }
        Preparation::Exchangeable { grid, n } => {
            let mut chains = Vec::with_capacity(grid.len());
            for (nu, &w) in grid.states().iter().zip(grid.weights()) {
                if w == 0.0 {
                    continue;
                }
                let eig = nu.clone().symmetric_eigen();
                let top = eig
                    .eigenvalues
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.total_cmp(b.1))
                    .map(|(i, _)| i)
                    .expect("d > 0");
                let chain = if eig.eigenvalues[top] >= 1.0 - 1e-12 {
                    let beta: Vec<Complex64> =
                        eig.eigenvectors.column(top).iter().copied().collect();
                    let init = SymmetricPureState::product(&beta, *n)?;
                    sym_chain(init, events, |u| Ok(u.clone()), |a| a.to_vec())?
                } else {
                    purified_chain(nu, *n, events)?
                };
                chains.push((w, chain));
            }
            Ok(Evaluator::Sym(chains))
        }
        Preparation::BlockProduct { xi, n, d, block } => {
            if *xi == 1 {
                let init = SymmetricPureState::product(block, *n)?;
                let chain = sym_chain(init, events, |u| Ok(u.clone()), |a| a.to_vec())?;
                return Ok(Evaluator::Sym(vec![(1.0, chain)]));
            }
            if *d == 2 {
                if let Some((a0, a1)) = ghz_form(block) {
                    if let Ok(chain) = ghz_chain(*xi, *n, a0, a1, events) {
                        return Ok(Evaluator::Ghz(chain));
                    }
                }
            }
            let chain = block_chain(*xi, *n, *d, block, events)?;
            Ok(Evaluator::Sym(vec![(1.0, chain)]))
        }
        Preparation::ProductList { states } => {
            let n = states.len() as u32;
            let mut rho = DMatrix::<Complex64>::identity(1, 1);
            crate::oracle::dense_dim(states[0].nrows(), n, false)?;
            for nu in states {
                rho = rho.kronecker(nu);
            }
            Ok(Evaluator::Dense { rho, n, events: events.to_vec() })
        }
    }
}

// ---------------------------------------------------------------------------
// Chain walks and suffix tables
// ---------------------------------------------------------------------------

/// Apply event `ev` with bin `b` to an unnormalized state (already in the
/// computational frame): rotate in, scale each amplitude by the square root
/// of the record mass its coordinate leaves in the bin, rotate back.
fn sym_apply(state: &SymmetricPureState, ev: &SymEvent, b: usize) -> Result<SymmetricPureState> {
    let (lo, hi) = ev.bins.cell_bounds(b);
    let mut s = apply_collective_pure(state, &ev.w_in)?;
    for (amp, &mu) in s.amps.iter_mut().zip(&ev.mu) {
        if amp.ln_mag > f64::NEG_INFINITY {
            amp.ln_mag += 0.5 * ev.kernel.cell_mass_1d(mu, lo, hi).ln();
        }
    }
    apply_collective_pure(&s, &ev.w_out)
}

fn sym_walk(chain: &SymChain, bins: &[usize]) -> Result<f64> {
    let mut state = chain.init.clone();
    for (ev, &b) in chain.events.iter().zip(bins) {
        state = sym_apply(&state, ev, b)?;
    }
    Ok(state.norm_sqr())
}

/// Joint probabilities over all bin tuples of `events[k..]`, the first event
/// varying slowest.
fn sym_suffix_table(chain: &SymChain, k: usize) -> Result<Vec<f64>> {
    fn recurse(state: &SymmetricPureState, events: &[SymEvent], out: &mut Vec<f64>) -> Result<()> {
        match events.split_first() {
            None => {
                out.push(state.norm_sqr());
                Ok(())
            }
            Some((ev, rest)) => {
                for b in 0..ev.bins.num_cells() {
                    let next = sym_apply(state, ev, b)?;
                    recurse(&next, rest, out)?;
                }
                Ok(())
            }
        }
    }
    let mut out = Vec::new();
    recurse(&chain.init, &chain.events[k..], &mut out)?;
    Ok(out)
}

impl GhzChain {
    fn num_events(&self) -> usize {
        self.z_events.len() + usize::from(self.x_event.is_some())
    }

    /// Σ_s binom(M,s)·w_s² — total mass of the (diagonal) chain state.
    fn diagonal_mass(w: &[f64]) -> f64 {
        let m = (w.len() - 1) as u64;
        w.iter()
            .enumerate()
            .map(|(s, &ws)| (ln_binomial(m, s as u64)).exp() * ws * ws)
            .sum()
    }

    fn walk(&self, bins: &[usize]) -> Result<f64> {
        let mut w = self.w.clone();
        for ((kernel, zbins, mu), &b) in self.z_events.iter().zip(bins) {
            let (lo, hi) = zbins.cell_bounds(b);
            for (s, ws) in w.iter_mut().enumerate() {
                *ws *= kernel.cell_mass_1d(mu[s], lo, hi).sqrt();
            }
        }
        match &self.x_event {
            None => Ok(Self::diagonal_mass(&w)),
            Some((kernel, xbins, mu)) => {
                let b = *bins.last().expect("final bin present");
                let (lo, hi) = xbins.cell_bounds(b);
                let p = transverse_distribution(&w, self.n)?;
                Ok(p
                    .iter()
                    .zip(mu)
                    .map(|(&pr, &m)| pr * kernel.cell_mass_1d(m, lo, hi))
                    .sum())
            }
        }
    }

    /// Same contract as [`sym_suffix_table`], with one exact transverse
    /// pipeline run per tuple of identity-basis bins.
    fn suffix_table(&self, k: usize) -> Result<Vec<f64>> {
        fn recurse(
            chain: &GhzChain,
            w: Vec<f64>,
            z_rest: &[(Kernel, Bins, Vec<f64>)],
            out: &mut Vec<f64>,
        ) -> Result<()> {
            match z_rest.split_first() {
                Some(((kernel, bins, mu), rest)) => {
                    for b in 0..bins.num_cells() {
                        let (lo, hi) = bins.cell_bounds(b);
                        let mut next = w.clone();
                        for (s, ws) in next.iter_mut().enumerate() {
                            *ws *= kernel.cell_mass_1d(mu[s], lo, hi).sqrt();
                        }
                        recurse(chain, next, rest, out)?;
                    }
                    Ok(())
                }
                None => match &chain.x_event {
                    None => {
                        out.push(GhzChain::diagonal_mass(&w));
                        Ok(())
                    }
                    Some((kernel, bins, mu)) => {
                        let p = transverse_distribution(&w, chain.n)?;
                        for b in 0..bins.num_cells() {
                            let (lo, hi) = bins.cell_bounds(b);
                            out.push(
                                p.iter()
                                    .zip(mu)
                                    .map(|(&pr, &m)| pr * kernel.cell_mass_1d(m, lo, hi))
                                    .sum(),
                            );
                        }
                        Ok(())
                    }
                },
            }
        }
        let zskip = k.min(self.z_events.len());
        crate::validate(k <= self.num_events(), "suffix index out of range")?;
        let mut out = Vec::new();
        if k == self.num_events() {
            out.push(Self::diagonal_mass(&self.w));
            // an empty suffix has unit probability, not the state mass
            out[0] = 1.0;
            return Ok(out);
        }
        recurse(self, self.w.clone(), &self.z_events[zskip..], &mut out)?;
        Ok(out)
    }
}

/// Exact distribution of the transverse letter count r for the state
/// Σ_s w_s |s flipped blocks⟩ of M = N/ξ aligned qubit blocks.
///
/// Expanding |⟨x-string|state⟩|² block by block, strings contribute through
/// the symmetric difference of the two flipped-block subsets, giving
/// P(r) = 2^{−N} Σ_j W_j·K_r(ξj) with
/// W_j = Σ_{s,s',i: s+s'−2i=j} w_s w_{s'}·binom(M,s)binom(s,i)binom(M−s,s'−i)
/// and K_r(h) = [t^r](1+t)^{N−h}(1−t)^h. Both factors are computed in exact
/// integer arithmetic (amplitudes scaled to 128 dyadic bits), because the
/// alternating Krawtchouk sums cancel catastrophically in floating point.
fn transverse_distribution(w: &[f64], n: u32) -> Result<Vec<f64>> {
    // 96 dyadic bits keep the scaled amplitudes inside i128 while far
    // exceeding the 53-bit precision of the f64 inputs
    const B: u32 = 96;
    let m = w.len() - 1;
    let nn = n as usize;
    let max_w = w.iter().fold(0.0_f64, |acc, &x| acc.max(x.abs()));
    if max_w == 0.0 {
        return Ok(vec![0.0; nn + 1]);
    }
    let scale = 2.0_f64.powi(B as i32);
    let w_int: Vec<BigInt> = w
        .iter()
        .map(|&x| {
            let scaled = (x / max_w) * scale;
            BigInt::from(scaled.round() as i128)
        })
        .collect();

    // Pascal triangle to M
    let mut pascal: Vec<Vec<BigInt>> = Vec::with_capacity(m + 1);
    pascal.push(vec![BigInt::from(1)]);
    for row in 1..=m {
        let prev = &pascal[row - 1];
        let mut cur = vec![BigInt::zero(); row + 1];
        cur[0] = BigInt::from(1);
        cur[row] = BigInt::from(1);
        for k in 1..row {
            cur[k] = &prev[k - 1] + &prev[k];
        }
        pascal.push(cur);
    }

    // W_j over the symmetric-difference size j
    let mut w_j = vec![BigInt::zero(); m + 1];
    for s in 0..=m {
        if w_int[s].is_zero() {
            continue;
        }
        for sp in 0..=m {
            if w_int[sp].is_zero() {
                continue;
            }
            let pair = &(&w_int[s] * &w_int[sp]) * &pascal[m][s];
            let lo = (s + sp).saturating_sub(m);
            for i in lo..=s.min(sp) {
                let j = s + sp - 2 * i;
                w_j[j] += &(&pair * &pascal[s][i]) * &pascal[m - s][sp - i];
            }
        }
    }

    // Krawtchouk rows K_r(h) at h = 0, ξ, 2ξ, …, N via
    // (1+t)·K_{h+1} = (1−t)·K_h
    let xi = n as usize / m.max(1);
    let mut rows: Vec<Vec<BigInt>> = Vec::with_capacity(m + 1);
    let mut cur: Vec<BigInt> = (0..=nn)
        .map(|r| {
            let mut acc = BigInt::from(1);
            for i in 0..r {
                acc = &acc * BigInt::from((nn - i) as u64);
                acc = &acc / BigInt::from((i + 1) as u64);
            }
            acc
        })
        .collect();
    rows.push(cur.clone());
    for h in 0..nn {
        let mut next = vec![BigInt::zero(); nn + 1];
        next[0] = cur[0].clone();
        for r in 1..=nn {
            next[r] = &(&cur[r] - &cur[r - 1]) - &next[r - 1];
        }
        cur = next;
        if (h + 1) % xi == 0 {
            rows.push(cur.clone());
        }
    }

    // assemble p_r = G_r / 2^{N+2B} · max_w²
    let ln_tail = 2.0 * max_w.ln() - (n as f64 + 2.0 * B as f64) * std::f64::consts::LN_2;
    let p: Vec<f64> = (0..=nn)
        .map(|r| {
            let mut g = BigInt::zero();
            for j in 0..=m {
                if !w_j[j].is_zero() {
                    g += &w_j[j] * &rows[j][r];
                }
            }
            if g.sign() != num_bigint::Sign::Plus {
                return 0.0;
            }
            let bits = g.bits();
            let shift = bits.saturating_sub(64);
            let mant = (&g >> shift).to_f64().unwrap_or(0.0);
            (mant.ln() + shift as f64 * std::f64::consts::LN_2 + ln_tail).exp()
        })
        .collect();

    // exact-arithmetic self-check: total transverse mass equals the
    // diagonal mass of the input state
    let expect = GhzChain::diagonal_mass(w);
    let got: f64 = p.iter().sum();
    debug_assert!(
        (got - expect).abs() <= 1e-9 * expect.max(1e-300),
        "transverse pipeline mass mismatch: {got} vs {expect}"
    );
    Ok(p)
}

fn dense_walk(
    rho: &DMatrix<Complex64>,
    n: u32,
    events: &[HistoryEvent],
    bins: &[usize],
) -> Result<f64> {
    let dense_events: Vec<DenseEvent> = events
        .iter()
        .zip(bins)
        .map(|(ev, &b)| {
            let (lo, hi) = ev.bins.cell_bounds(b);
            DenseEvent { basis: &ev.basis, kernel: &ev.kernel, lo, hi }
        })
        .collect();
    dense_history_probability(rho, n, &dense_events)
}

fn evaluator_walk(evaluator: &Evaluator, bins: &[usize]) -> Result<f64> {
    match evaluator {
        Evaluator::Sym(chains) => {
            let mut p = 0.0;
            for (w, chain) in chains {
                p += w * sym_walk(chain, bins)?;
            }
            Ok(p)
        }
        Evaluator::Ghz(chain) => chain.walk(bins),
        Evaluator::Dense { rho, n, events } => dense_walk(rho, *n, events, bins),
    }
}

fn evaluator_suffix_table(
    evaluator: &Evaluator,
    events: &[HistoryEvent],
    k: usize,
) -> Result<Vec<f64>> {
    match evaluator {
        Evaluator::Sym(chains) => {
            let mut table: Option<Vec<f64>> = None;
            for (w, chain) in chains {
                let part = sym_suffix_table(chain, k)?;
                match &mut table {
                    None => table = Some(part.iter().map(|p| w * p).collect()),
                    Some(t) => {
                        for (acc, p) in t.iter_mut().zip(&part) {
                            *acc += w * p;
                        }
                    }
                }
            }
            Ok(table.unwrap_or_else(|| vec![1.0]))
        }
        Evaluator::Ghz(chain) => chain.suffix_table(k),
        Evaluator::Dense { rho, n, events: evs } => {
            let suffix = &evs[k..];
            let mut sizes = vec![0usize; suffix.len()];
            for (i, ev) in suffix.iter().enumerate() {
                sizes[i] = ev.bins.num_cells();
            }
            let total: usize = sizes.iter().product();
            let mut out = Vec::with_capacity(total.max(1));
            let mut bins = vec![0usize; suffix.len()];
            for flat in 0..total.max(1) {
                let mut rest = flat;
                for i in (0..suffix.len()).rev() {
                    bins[i] = rest % sizes[i];
                    rest /= sizes[i];
                }
                out.push(dense_walk(rho, *n, suffix, &bins)?);
            }
            let _ = events;
            Ok(out)
        }
    }
}

// ---------------------------------------------------------------------------
// Public history operations
// ---------------------------------------------------------------------------

/// Probability of one history: the events applied in order, each filtered to
/// its chosen bin, on the given preparation.
pub fn history_probability(prep: &Preparation, history: &[(HistoryEvent, usize)]) -> Result<f64> {
    crate::validate(!history.is_empty(), "empty history")?;
    let events: Vec<HistoryEvent> = history.iter().map(|(ev, _)| ev.clone()).collect();
    let bins: Vec<usize> = history.iter().map(|(_, b)| *b).collect();
    for (ev, &b) in events.iter().zip(&bins) {
        crate::validate(b < ev.bins.num_cells(), "bin index out of range")?;
    }
    let evaluator = build_evaluator(prep, &events)?;
    evaluator_walk(&evaluator, &bins)
}

/// Largest sum-rule violation across the family: for every event position k
/// and every joint outcome of the downstream events, compare the probability
/// computed with event k marginalized out against the same history with
/// event k never performed. A family is consistent exactly when all these
/// agree; the returned ε is the worst absolute discrepancy.
pub fn sum_rule_violation(family: &HistoryFamily) -> Result<f64> {
    let events = &family.events;
    let evaluator = build_evaluator(&family.prep, events)?;
    let mut tables = Vec::with_capacity(events.len() + 1);
    for k in 0..=events.len() {
        tables.push(evaluator_suffix_table(&evaluator, events, k)?);
    }
    let mut eps = 0.0_f64;
    for k in 0..events.len() {
        let cells = events[k].bins.num_cells();
        let tail_len = tables[k + 1].len();
        for t in 0..tail_len {
            let mut summed = 0.0;
            for b in 0..cells {
                summed += tables[k][b * tail_len + t];
            }
            eps = eps.max((summed - tables[k + 1][t]).abs());
        }
    }
    Ok(eps)
}

/// Mean and standard deviation of the coordinate a single read of `basis`
/// would produce on the preparation (the type distribution's moments), used
/// to center record bins.
pub fn event_statistics(prep: &Preparation, basis: &ObservableBasis) -> Result<(f64, f64)> {
    crate::validate(basis.alpha.len() == prep.d(), "basis dimension mismatch")?;
    let n = prep.n() as f64;
    let single = |p: &[f64]| {
        let m1: f64 = p.iter().zip(&basis.alpha).map(|(&q, &a)| q * a).sum();
        let m2: f64 = p.iter().zip(&basis.alpha).map(|(&q, &a)| q * a * a).sum();
        (m1, (m2 - m1 * m1).max(0.0))
    };
    match prep {
        Preparation::PureProduct { beta, n: nn } => {
            let rotated = basis.u.adjoint() * DVector::from_column_slice(beta);
            let p: Vec<f64> = rotated.iter().map(|z| z.norm_sqr()).collect();
            let (m1, v1) = single(&p);
            Ok((m1, (v1 / *nn as f64).sqrt()))
        }
        Preparation::ProductList { states } => {
            let mut mean = 0.0;
            let mut var = 0.0;
            for nu in states {
                let (m1, v1) = single(&letter_probabilities(nu, basis));
                mean += m1;
                var += v1;
            }
            Ok((mean / n, var.sqrt() / n))
        }
        Preparation::Exchangeable { grid, n: nn } => {
            // law of total variance over the mixture components
            let mut mean = 0.0;
            let mut second = 0.0;
            for (nu, &w) in grid.states().iter().zip(grid.weights()) {
                let (m1, v1) = single(&letter_probabilities(nu, basis));
                mean += w * m1;
                second += w * (v1 / *nn as f64 + m1 * m1);
            }
            Ok((mean, (second - mean * mean).max(0.0).sqrt()))
        }
        Preparation::BlockProduct { xi, n: nn, d, block } => {
            let m = (*nn / *xi) as f64;
            let (mean_b, var_b) = if let Some((a0, a1)) = ghz_form(block) {
                // two-branch block: per-word amplitude depends only on the
                // count h of second-letter reads in the block
                crate::validate(*d == 2, "aligned-block statistics need d = 2")?;
                let a_row: Vec<Complex64> = (0..2).map(|w| basis.u[(0, w)].conj()).collect();
                let b_row: Vec<Complex64> = (0..2).map(|w| basis.u[(1, w)].conj()).collect();
                let mut mean = 0.0;
                let mut second = 0.0;
                for h in 0..=*xi {
                    let amp = Complex64::new(a0, 0.0)
                        * a_row[0].powu(*xi - h)
                        * a_row[1].powu(h)
                        + Complex64::new(a1, 0.0) * b_row[0].powu(*xi - h) * b_row[1].powu(h);
                    let q = (ln_binomial(*xi as u64, h as u64)).exp() * amp.norm_sqr();
                    let val = basis.alpha[0] * (*xi - h) as f64 + basis.alpha[1] * h as f64;
                    mean += q * val;
                    second += q * val * val;
                }
                (mean, (second - mean * mean).max(0.0))
            } else {
                let rotated = kron_power(&basis.u, *xi)?.adjoint()
                    * DVector::from_column_slice(block);
                let mut mean = 0.0;
                let mut second = 0.0;
                for (w, amp) in rotated.iter().enumerate() {
                    let q = amp.norm_sqr();
                    let mut rest = w;
                    let mut val = 0.0;
                    for _ in 0..*xi {
                        val += basis.alpha[rest % d];
                        rest /= d;
                    }
                    mean += q * val;
                    second += q * val * val;
                }
                (mean, (second - mean * mean).max(0.0))
            };
            Ok((m * mean_b / n, (m * var_b).sqrt() / n))
        }
    }
}

// ---------------------------------------------------------------------------
// Commutator scaling
// ---------------------------------------------------------------------------

/// Dense check that normalized collective observables nearly commute:
/// returns (lhs, rhs) with lhs = [A_N, B_N] for A_N = (1/N)Σ_k a^{(k)} and
/// rhs = (1/N)·C_N built the same way from the single-molecule commutator
/// c = [a, b]. The two are equal as an operator identity; their operator
/// norm shrinks as ‖c‖/N.
pub fn commutator_relation(
    a: &DMatrix<Complex64>,
    b: &DMatrix<Complex64>,
    n: u32,
) -> Result<(DMatrix<Complex64>, DMatrix<Complex64>)> {
    let d = a.nrows();
    crate::validate(
        a.ncols() == d && b.nrows() == d && b.ncols() == d,
        "observables must be square and same-dimensional",
    )?;
    crate::validate(
        (a - a.adjoint()).norm() <= 1e-12 && (b - b.adjoint()).norm() <= 1e-12,
        "observables must be Hermitian",
    )?;
    let nf = n as f64;
    let a_n = crate::oracle::dense_collective_observable(a, n)?.unscale(nf);
    let b_n = crate::oracle::dense_collective_observable(b, n)?.unscale(nf);
    let c = a * b - b * a;
    let c_n = crate::oracle::dense_collective_observable(&c, n)?.unscale(nf);
    let lhs = &a_n * &b_n - &b_n * &a_n;
    let rhs = c_n.unscale(nf);
    Ok((lhs, rhs))
}

// ---------------------------------------------------------------------------
// Non-identical products and the mean-molecule reduction
// ---------------------------------------------------------------------------

/// Arithmetic mean of the per-molecule states — the single-molecule
/// reduction that governs all type statistics of a product preparation in
/// the large-N, coarse-record regime.
pub fn mean_molecule_state(nus: &[DMatrix<Complex64>]) -> Result<DMatrix<Complex64>> {
    crate::validate(!nus.is_empty(), "empty molecule list")?;
    let d = nus[0].nrows();
    let mut acc = DMatrix::<Complex64>::zeros(d, d);
    for nu in nus {
        crate::validate(nu.nrows() == d && nu.ncols() == d, "mixed molecule dimensions")?;
        validate_density(nu)?;
        acc += nu;
    }
    Ok(acc.unscale(nus.len() as f64))
}

/// Exact type distribution of ν₁⊗…⊗ν_N measured in `basis`: a dynamic
/// program over molecules, convolving each molecule's letter distribution
/// into the running type pmf (the Poisson-multinomial law). Permutation
/// invariance of type effects makes this exact for arbitrary, non-identical
/// products. Returned in canonical type order.
pub fn product_type_pmf(nus: &[DMatrix<Complex64>], basis: &ObservableBasis) -> Result<Vec<f64>> {
    crate::validate(!nus.is_empty(), "empty molecule list")?;
    let d = nus[0].nrows();
    crate::validate(basis.alpha.len() == d, "basis dimension mismatch")?;
    let n = nus.len() as u32;
    num_types(n, d)?;
    let mut pmf = vec![1.0_f64];
    for (m, nu) in nus.iter().enumerate() {
        crate::validate(nu.nrows() == d && nu.ncols() == d, "mixed molecule dimensions")?;
        let p = letter_probabilities(nu, basis);
        let m = m as u32;
        let prev_types = enumerate_types(m, d)?;
        let mut next = vec![0.0_f64; num_types(m + 1, d)?];
        for (i, t) in prev_types.iter().enumerate() {
            if pmf[i] == 0.0 {
                continue;
            }
            let mut counts = t.counts.clone();
            for (j, &pj) in p.iter().enumerate() {
                counts[j] += 1;
                let idx = type_index(&counts, m + 1).expect("incremented type exists");
                next[idx] += pmf[i] * pj;
                counts[j] -= 1;
            }
        }
        pmf = next;
    }
    Ok(pmf)
}

/// Record density (or, for exact records, probability) of the product
/// preparation at the frequency vector ℓ: the type pmf smoothed by the
/// kernel acting on every component of the type fraction.
pub fn product_type_distribution(
    nus: &[DMatrix<Complex64>],
    basis: &ObservableBasis,
    kernel: &Kernel,
    ell: &[f64],
) -> Result<f64> {
    let d = nus[0].nrows();
    crate::validate(ell.len() == d, "record length must match the number of letters")?;
    kernel.validate()?;
    let pmf = product_type_pmf(nus, basis)?;
    let types = enumerate_types(nus.len() as u32, d)?;
    let mut total = 0.0;
    for (t, &p) in types.iter().zip(&pmf) {
        if p == 0.0 {
            continue;
        }
        let f = t.fractions();
        if kernel.is_exact() {
            if f.iter().zip(ell).all(|(&a, &b)| (a - b).abs() <= 1e-12) {
                total += p;
            }
        } else {
            total += p * kernel.density(&f, ell);
        }
    }
    Ok(total)
}

/// Total variation distance between two smoothed scalar type distributions
/// sharing the coordinate list `mu`: ½∫|Σp_a q − Σp_b q| dℓ. Discrete for
/// exact records, lattice-summed for comb records, quadrature otherwise.
pub fn smoothed_tv(mu: &[f64], pa: &[f64], pb: &[f64], kernel: &Kernel) -> f64 {
    assert_eq!(mu.len(), pa.len());
    assert_eq!(mu.len(), pb.len());
    match *kernel {
        Kernel::Exact => 0.5 * pa.iter().zip(pb).map(|(&a, &b)| (a - b).abs()).sum::<f64>(),
        Kernel::Gaussian { sigma } => {
            let lo = mu.iter().cloned().fold(f64::INFINITY, f64::min) - 8.0 * sigma;
            let hi = mu.iter().cloned().fold(f64::NEG_INFINITY, f64::max) + 8.0 * sigma;
            let step = sigma / 6.0;
            let count = ((hi - lo) / step).ceil() as usize + 1;
            let mut acc = 0.0;
            for i in 0..count {
                let x = lo + i as f64 * step;
                let fa: f64 =
                    mu.iter().zip(pa).map(|(&m, &p)| p * kernel.density_1d(m, x)).sum();
                let fb: f64 =
                    mu.iter().zip(pb).map(|(&m, &p)| p * kernel.density_1d(m, x)).sum();
                let w = if i == 0 || i == count - 1 { 0.5 } else { 1.0 };
                acc += w * (fa - fb).abs();
            }
            (0.5 * acc * step).min(1.0)
        }
        Kernel::Comb { sigma, spacing } => {
            let lo = ((mu.iter().cloned().fold(f64::INFINITY, f64::min) - 10.0 * sigma)
                / spacing)
                .floor() as i64;
            let hi = ((mu.iter().cloned().fold(f64::NEG_INFINITY, f64::max) + 10.0 * sigma)
                / spacing)
                .ceil() as i64;
            let mut acc = 0.0;
            for j in lo..=hi {
                let cell_lo = (j as f64 - 0.5) * spacing;
                let cell_hi = (j as f64 + 0.5) * spacing;
                let fa: f64 = mu
                    .iter()
                    .zip(pa)
                    .map(|(&m, &p)| p * kernel.cell_mass_1d(m, cell_lo, cell_hi))
                    .sum();
                let fb: f64 = mu
                    .iter()
                    .zip(pb)
                    .map(|(&m, &p)| p * kernel.cell_mass_1d(m, cell_lo, cell_hi))
                    .sum();
                acc += (fa - fb).abs();
            }
            (0.5 * acc).min(1.0)
        }
    }
}
