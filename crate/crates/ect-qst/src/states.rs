//! Target-state factories: GHZ, W (directly and via the block-tree
//! circuit), seeded random-circuit states, and density-matrix utilities.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::tensor;
use crate::{Error, Result};

const SPARSE_DIM_LIMIT: usize = 1 << 24;
const BLOCK_TREE_MAX_QUBITS: usize = 20;
const RANDOM_CIRCUIT_MAX_QUBITS: usize = 12;

/// Pure state of N qudits storing only its non-zero amplitudes.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseStateVector {
    d: usize,
    n_qudits: usize,
    amps: BTreeMap<usize, Complex64>,
}

impl SparseStateVector {
    /// Build from explicit amplitudes, checking normalization to 1e-12.
    pub fn from_amplitudes(
        d: usize,
        n_qudits: usize,
        amps: BTreeMap<usize, Complex64>,
    ) -> Result<Self> {
        if d < 2 {
            return Err(Error::InvalidDimension(d));
        }
        let dim = checked_dim(d, n_qudits)?;
        if let Some((&idx, _)) = amps.last_key_value() {
            if idx >= dim {
                return Err(Error::IndexOutOfRange(format!(
                    "amplitude index {idx} in a dimension-{dim} space"
                )));
            }
        }
        let norm: f64 = amps.values().map(|a| a.norm_sqr()).sum();
        if (norm - 1.0).abs() > 1e-12 {
            return Err(Error::NotNormalized(norm));
        }
        Ok(Self { d, n_qudits, amps })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn n_qudits(&self) -> usize {
        self.n_qudits
    }

    pub fn dim(&self) -> usize {
        self.d.pow(self.n_qudits as u32)
    }

    pub fn amplitudes(&self) -> &BTreeMap<usize, Complex64> {
        &self.amps
    }

    /// Dense amplitude vector.
    pub fn dense(&self) -> Vec<Complex64> {
        let mut v = vec![Complex64::default(); self.dim()];
        for (&i, &a) in &self.amps {
            v[i] = a;
        }
        v
    }

    /// Diagonal of |psi><psi|: outcome probabilities in the computational
    /// basis, full length d^N.
    pub fn probabilities(&self) -> Vec<f64> {
        let mut p = vec![0.0; self.dim()];
        for (&i, &a) in &self.amps {
            p[i] = a.norm_sqr();
        }
        p
    }

    /// Number of diagonal entries with probability above `tol`.
    pub fn diagonal_fill(&self, tol: f64) -> usize {
        self.amps.values().filter(|a| a.norm_sqr() > tol).count()
    }

    /// Largest amplitude difference from `other` after aligning global
    /// phase on this state's largest amplitude.
    pub fn max_amplitude_error(&self, other: &Self) -> f64 {
        let (&ref_idx, &ref_amp) = self
            .amps
            .iter()
            .max_by(|a, b| a.1.norm_sqr().partial_cmp(&b.1.norm_sqr()).unwrap())
            .expect("state has at least one amplitude");
        let other_ref = other.amps.get(&ref_idx).copied().unwrap_or_default();
        let phase = if other_ref.norm() > 0.0 {
            ref_amp / ref_amp.norm() * (other_ref / other_ref.norm()).conj()
        } else {
            Complex64::new(1.0, 0.0)
        };
        let mut err = 0.0f64;
        let keys: std::collections::BTreeSet<usize> = self
            .amps
            .keys()
            .chain(other.amps.keys())
            .copied()
            .collect();
        for k in keys {
            let a = self.amps.get(&k).copied().unwrap_or_default();
            let b = other.amps.get(&k).copied().unwrap_or_default();
            err = err.max((a - b * phase).norm());
        }
        err
    }
}

fn checked_dim(d: usize, n_qudits: usize) -> Result<usize> {
    let dim = d
        .checked_pow(n_qudits as u32)
        .filter(|&x| x <= SPARSE_DIM_LIMIT)
        .ok_or(Error::SizeGuard {
            what: "state space",
            requested: n_qudits,
            limit: SPARSE_DIM_LIMIT,
        })?;
    Ok(dim)
}

/// N-qudit GHZ state: 1/sqrt(d) on every index whose base-d digits agree.
pub fn ghz_state(d: usize, n_qudits: usize) -> Result<SparseStateVector> {
    if d < 2 {
        return Err(Error::InvalidDimension(d));
    }
    if n_qudits < 2 {
        return Err(Error::IndexOutOfRange(format!(
            "GHZ state needs at least 2 qudits, got {n_qudits}"
        )));
    }
    let dim = checked_dim(d, n_qudits)?;
    let amp = Complex64::new(1.0 / (d as f64).sqrt(), 0.0);
    let mut amps = BTreeMap::new();
    // Index with all digits equal to a is a * (d^N - 1) / (d - 1).
    for a in 0..d {
        amps.insert(a * (dim - 1) / (d - 1), amp);
    }
    SparseStateVector::from_amplitudes(d, n_qudits, amps)
}

/// N-qubit W state: 1/sqrt(N) on each one-hot index 2^(N-1-r).
pub fn w_state_direct(n_qubits: usize) -> Result<SparseStateVector> {
    if n_qubits < 2 {
        return Err(Error::IndexOutOfRange(format!(
            "W state needs at least 2 qubits, got {n_qubits}"
        )));
    }
    checked_dim(2, n_qubits)?;
    let amp = Complex64::new(1.0 / (n_qubits as f64).sqrt(), 0.0);
    let amps = (0..n_qubits).map(|r| (1usize << (n_qubits - 1 - r), amp)).collect();
    SparseStateVector::from_amplitudes(2, n_qubits, amps)
}

/// Two-qubit excitation-distribution block: a controlled rotation followed
/// by an inverted CNOT acting on the ordered pair (first, second).
///
/// B(p)|00> = |00> and B(p)|10> = sqrt(p)|10> + sqrt(1-p)|01>.
#[derive(Debug, Clone, Copy)]
pub struct BlockGate {
    pub p: f64,
    pub first: usize,
    pub second: usize,
}

impl BlockGate {
    /// Apply to a sparse qubit state.
    pub fn apply(&self, state: &mut BTreeMap<usize, Complex64>, n_qubits: usize) {
        let bit_a = 1usize << (n_qubits - 1 - self.first);
        let bit_b = 1usize << (n_qubits - 1 - self.second);
        let sp = self.p.sqrt();
        let sq = (1.0 - self.p).sqrt();
        let mut next: BTreeMap<usize, Complex64> = BTreeMap::new();
        let mut add = |idx: usize, amp: Complex64| {
            if amp != Complex64::default() {
                *next.entry(idx).or_default() += amp;
            }
        };
        for (&idx, &amp) in state.iter() {
            let a = idx & bit_a != 0;
            let b = idx & bit_b != 0;
            match (a, b) {
                (false, false) => add(idx, amp),
                (true, false) => {
                    add(idx, amp * sp);
                    add(idx & !bit_a | bit_b, amp * sq);
                }
                (false, true) => add(idx | bit_a, amp),
                (true, true) => {
                    add(idx & !bit_b, -amp * sq);
                    add(idx & !bit_a, amp * sp);
                }
            }
        }
        *state = next;
    }
}

/// N-qubit W state built by the recursive block-tree circuit.
///
/// A node spanning m qubits with an excitation on its first qubit splits
/// the span into n and m-n qubits with a B(n/m) block, then recurses with
/// upper child (floor(n/2), n) and lower child (floor((m-n)/2), m-n).
/// The result equals [`w_state_direct`] up to global phase.
pub fn w_state_block_tree(n_qubits: usize) -> Result<SparseStateVector> {
    if !(2..=BLOCK_TREE_MAX_QUBITS).contains(&n_qubits) {
        return Err(Error::SizeGuard {
            what: "block-tree W state",
            requested: n_qubits,
            limit: BLOCK_TREE_MAX_QUBITS,
        });
    }
    let mut state = BTreeMap::new();
    state.insert(1usize << (n_qubits - 1), Complex64::new(1.0, 0.0));

    // Depth-first over (base, n, m) nodes.
    let mut stack = vec![(0usize, n_qubits / 2, n_qubits)];
    while let Some((base, n, m)) = stack.pop() {
        if m < 2 {
            continue;
        }
        let gate = BlockGate {
            p: n as f64 / m as f64,
            first: base,
            second: base + n,
        };
        gate.apply(&mut state, n_qubits);
        stack.push((base, n / 2, n));
        stack.push((base + n, (m - n) / 2, m - n));
    }
    SparseStateVector::from_amplitudes(2, n_qubits, state)
}

/// Haar-random 2x2 unitary via QR of a complex Ginibre sample.
fn haar_single_qubit<R: Rng>(rng: &mut R) -> DMatrix<Complex64> {
    let mut g = [[Complex64::default(); 2]; 2];
    for row in &mut g {
        for slot in row.iter_mut() {
            let re: f64 = StandardNormal.sample(rng);
            let im: f64 = StandardNormal.sample(rng);
            *slot = Complex64::new(re, im);
        }
    }
    // Gram-Schmidt on columns, fixing the R-diagonal phases.
    let mut c0 = [g[0][0], g[1][0]];
    let r00 = (c0[0].norm_sqr() + c0[1].norm_sqr()).sqrt();
    c0[0] /= r00;
    c0[1] /= r00;
    let mut c1 = [g[0][1], g[1][1]];
    let proj = c0[0].conj() * c1[0] + c0[1].conj() * c1[1];
    c1[0] -= proj * c0[0];
    c1[1] -= proj * c0[1];
    let r11 = (c1[0].norm_sqr() + c1[1].norm_sqr()).sqrt();
    c1[0] /= r11;
    c1[1] /= r11;
    DMatrix::from_column_slice(2, 2, &[c0[0], c0[1], c1[0], c1[1]])
}

/// Deterministic pure state from `depth` layers of Haar-random single-qubit
/// unitaries followed by CNOTs on a random matching of adjacent qubits.
pub fn random_circuit_state(n_qubits: usize, depth: usize, seed: u64) -> Result<SparseStateVector> {
    if n_qubits == 0 || n_qubits > RANDOM_CIRCUIT_MAX_QUBITS {
        return Err(Error::SizeGuard {
            what: "random-circuit state",
            requested: n_qubits,
            limit: RANDOM_CIRCUIT_MAX_QUBITS,
        });
    }
    let dim = 1usize << n_qubits;
    let mut amps = vec![Complex64::default(); dim];
    amps[0] = Complex64::new(1.0, 0.0);
    let mut rng = ChaCha12Rng::seed_from_u64(seed);

    for _ in 0..depth {
        for q in 0..n_qubits {
            let u = haar_single_qubit(&mut rng);
            tensor::apply_single(&mut amps, 2, n_qubits, q, &u);
        }
        // Random matching over the adjacent pairs (q, q+1).
        let mut edges: Vec<usize> = (0..n_qubits.saturating_sub(1)).collect();
        for i in (1..edges.len()).rev() {
            let j = rng.random_range(0..=i);
            edges.swap(i, j);
        }
        let mut used = vec![false; n_qubits];
        for &q in &edges {
            if used[q] || used[q + 1] {
                continue;
            }
            used[q] = true;
            used[q + 1] = true;
            let (control, target) = if rng.random_bool(0.5) {
                (q, q + 1)
            } else {
                (q + 1, q)
            };
            apply_cnot(&mut amps, n_qubits, control, target);
        }
    }

    let map: BTreeMap<usize, Complex64> = amps
        .into_iter()
        .enumerate()
        .filter(|(_, a)| a.norm_sqr() > 0.0)
        .collect();
    SparseStateVector::from_amplitudes(2, n_qubits, map)
}

fn apply_cnot(amps: &mut [Complex64], n_qubits: usize, control: usize, target: usize) {
    let cbit = 1usize << (n_qubits - 1 - control);
    let tbit = 1usize << (n_qubits - 1 - target);
    for i in 0..amps.len() {
        if i & cbit != 0 && i & tbit == 0 {
            amps.swap(i, i | tbit);
        }
    }
}

/// Hermitian, PSD, trace-1 density matrix of an N-qudit system.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    d: usize,
    n_qudits: usize,
    mat: DMatrix<Complex64>,
}

impl DensityMatrix {
    /// Validate Hermiticity (1e-12), unit trace (1e-10) and positivity
    /// (eigenvalues above -1e-9).
    pub fn try_new(d: usize, n_qudits: usize, mat: DMatrix<Complex64>) -> Result<Self> {
        let dim = checked_dim(d, n_qudits)?;
        if mat.nrows() != dim || mat.ncols() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: mat.nrows(),
            });
        }
        let herm_err = (&mat - mat.adjoint()).map(|z| z.norm()).max();
        if herm_err > 1e-12 {
            return Err(Error::InvalidState(format!(
                "not Hermitian, deviation {herm_err:.3e}"
            )));
        }
        let trace = mat.trace();
        if (trace.re - 1.0).abs() > 1e-10 || trace.im.abs() > 1e-10 {
            return Err(Error::InvalidState(format!("trace is {trace}, expected 1")));
        }
        let min_eig = SymmetricEigen::new(mat.clone())
            .eigenvalues
            .iter()
            .fold(f64::INFINITY, |m, &e| m.min(e));
        if min_eig < -1e-9 {
            return Err(Error::InvalidState(format!(
                "negative eigenvalue {min_eig:.3e}"
            )));
        }
        Ok(Self { d, n_qudits, mat })
    }

    /// Wrap a matrix that is valid by construction.
    pub(crate) fn new_unchecked(d: usize, n_qudits: usize, mat: DMatrix<Complex64>) -> Self {
        Self { d, n_qudits, mat }
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn n_qudits(&self) -> usize {
        self.n_qudits
    }

    pub fn dim(&self) -> usize {
        self.mat.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<Complex64> {
        &self.mat
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.dim()).map(|i| self.mat[(i, i)].re).collect()
    }

    /// tr(rho^2).
    pub fn purity(&self) -> f64 {
        (&self.mat * &self.mat).trace().re
    }
}

/// Outer product |psi><psi| as a dense density matrix.
pub fn to_density(state: &SparseStateVector) -> Result<DensityMatrix> {
    let dim = state.dim();
    let mut mat = DMatrix::zeros(dim, dim);
    for (&i, &a) in state.amplitudes() {
        for (&j, &b) in state.amplitudes() {
            mat[(i, j)] = a * b.conj();
        }
    }
    DensityMatrix::try_new(state.d(), state.n_qudits(), mat)
}

/// Convex mixture of pure states.
pub fn mix(states: &[SparseStateVector], weights: &[f64]) -> Result<DensityMatrix> {
    if states.is_empty() || states.len() != weights.len() {
        return Err(Error::DimensionMismatch {
            expected: states.len(),
            actual: weights.len(),
        });
    }
    if weights.iter().any(|&w| w < 0.0) {
        return Err(Error::InvalidState("mixture weights must be non-negative".into()));
    }
    let total: f64 = weights.iter().sum();
    if (total - 1.0).abs() > 1e-10 {
        return Err(Error::NotNormalized(total));
    }
    let d = states[0].d();
    let n = states[0].n_qudits();
    let dim = states[0].dim();
    let mut mat = DMatrix::zeros(dim, dim);
    for (state, &w) in states.iter().zip(weights) {
        if state.d() != d || state.n_qudits() != n {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: state.dim(),
            });
        }
        for (&i, &a) in state.amplitudes() {
            for (&j, &b) in state.amplitudes() {
                mat[(i, j)] += a * b.conj() * Complex64::new(w, 0.0);
            }
        }
    }
    DensityMatrix::try_new(d, n, mat)
}
