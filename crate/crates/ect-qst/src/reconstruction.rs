//! Maximum-likelihood reconstruction of the density matrix from measured
//! counts, with a low-rank factor model rho = M M^dag / tr(M M^dag).
//!
//! The objective is sum over settings and outcomes of
//! (Nexp - Nobs)^2 / (4 max(Nexp, eps)) with Nexp = shots <phi|rho|phi>.
//! Minimization runs L-BFGS on the factor M with an analytic gradient; the
//! expected outcomes never materialize d^N x d^N projectors, they apply the
//! per-qudit eigenbasis rotations to the columns of M instead. After
//! convergence the rank is checked against the inverse purity and escalated
//! when the model was too small.

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::generators::ObservableCatalog;
use crate::measurement::{record_seed, CountsRecord};
use crate::par;
use crate::states::DensityMatrix;
use crate::tensor;
use crate::{Error, Result};

/// Low-rank factor of a density matrix: rho(M) = M M^dag / tr(M M^dag).
#[derive(Debug, Clone)]
pub struct FactorState {
    pub m: DMatrix<Complex64>,
}

impl FactorState {
    pub fn rank(&self) -> usize {
        self.m.ncols()
    }

    /// The normalized density matrix, hermitized against round-off.
    pub fn density(&self, d: usize, n_qudits: usize) -> DensityMatrix {
        let rho = &self.m * self.m.adjoint();
        let trace = rho.trace().re;
        let rho = rho.map(|z| z / Complex64::new(trace, 0.0));
        let rho = (&rho + rho.adjoint()).map(|z| z * Complex64::new(0.5, 0.0));
        DensityMatrix::new_unchecked(d, n_qudits, rho)
    }

    /// tr(rho^2) from the r x r Gram matrix, without forming rho.
    pub fn purity(&self) -> f64 {
        let gram = self.m.adjoint() * &self.m;
        let trace = gram.trace().re;
        let frob: f64 = gram.iter().map(|z| z.norm_sqr()).sum();
        frob / (trace * trace)
    }
}

/// A set of measured settings with their counts, prepared for likelihood
/// evaluation.
pub struct LikelihoodProblem {
    d: usize,
    n_qudits: usize,
    dim: usize,
    records: Vec<CountsRecord>,
    /// Per record, per qudit: forward eigenbasis matrix and its adjoint.
    ops: Vec<Vec<(DMatrix<Complex64>, DMatrix<Complex64>)>>,
    floor_eps: f64,
}

impl LikelihoodProblem {
    /// Default denominator floor of one count.
    pub fn new(
        catalog: &ObservableCatalog,
        n_qudits: usize,
        records: Vec<CountsRecord>,
    ) -> Result<Self> {
        Self::with_floor(catalog, n_qudits, records, 1.0)
    }

    pub fn with_floor(
        catalog: &ObservableCatalog,
        n_qudits: usize,
        records: Vec<CountsRecord>,
        floor_eps: f64,
    ) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::EmptyProblem);
        }
        let d = catalog.d();
        let dim = d.pow(n_qudits as u32);
        let mut ops = Vec::with_capacity(records.len());
        for rec in &records {
            if rec.setting.n_qudits() != n_qudits || rec.counts.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    actual: rec.counts.len(),
                });
            }
            if rec.shots <= 0.0 {
                return Err(Error::EmptyMeasurement);
            }
            let per_qudit = rec
                .setting
                .indices()
                .iter()
                .map(|&k| {
                    let fwd = catalog.basis_matrix(k)?;
                    let adj = fwd.adjoint();
                    Ok((fwd, adj))
                })
                .collect::<Result<Vec<_>>>()?;
            ops.push(per_qudit);
        }
        Ok(Self {
            d,
            n_qudits,
            dim,
            records,
            ops,
            floor_eps,
        })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn n_qudits(&self) -> usize {
        self.n_qudits
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn records(&self) -> &[CountsRecord] {
        &self.records
    }

    pub fn floor_eps(&self) -> f64 {
        self.floor_eps
    }

    /// Total outcome count over all records (objective degrees of freedom).
    pub fn total_outcomes(&self) -> usize {
        self.records.len() * self.dim
    }

    /// Measured diagonal frequencies, if the diagonal setting was recorded.
    pub fn measured_diagonal(&self) -> Option<Vec<f64>> {
        self.records
            .iter()
            .find(|r| r.setting.is_diagonal())
            .map(|r| r.counts.iter().map(|c| c / r.shots).collect())
    }

    /// The subproblem over the first `len` records.
    pub fn prefix(&self, len: usize) -> Result<Self> {
        if len == 0 || len > self.records.len() {
            return Err(Error::IndexOutOfRange(format!(
                "prefix length {len} of {} records",
                self.records.len()
            )));
        }
        Ok(Self {
            d: self.d,
            n_qudits: self.n_qudits,
            dim: self.dim,
            records: self.records[..len].to_vec(),
            ops: self.ops[..len].to_vec(),
            floor_eps: self.floor_eps,
        })
    }

    /// Apply U^dag (record's eigenbasis, adjoint) to every column of a flat
    /// column-major dim x r buffer.
    fn rotate_columns(&self, record: usize, buf: &mut [Complex64], rank: usize, adjoint: bool) {
        for c in 0..rank {
            let col = &mut buf[c * self.dim..(c + 1) * self.dim];
            for (r, (fwd, adj)) in self.ops[record].iter().enumerate() {
                let mat = if adjoint { adj } else { fwd };
                tensor::apply_single(col, self.d, self.n_qudits, r, mat);
            }
        }
    }

    /// Objective value and, optionally, the Wirtinger gradient dL/dM*
    /// (column-major flat). The gradient with respect to the real
    /// parameters is (2 Re G, 2 Im G).
    fn evaluate(&self, m_flat: &[Complex64], rank: usize, want_grad: bool) -> (f64, Vec<Complex64>) {
        let trace: f64 = m_flat.iter().map(|z| z.norm_sqr()).sum();
        let n_records = self.records.len();
        let per_record: Vec<(f64, Vec<Complex64>)> = par::map_range(n_records, |s| {
            let rec = &self.records[s];
            let mut y = m_flat.to_vec();
            self.rotate_columns(s, &mut y, rank, true);
            let mut value = 0.0;
            let mut d_coef = vec![0.0f64; self.dim];
            let mut dq_sum = 0.0;
            for n in 0..self.dim {
                let mut q = 0.0;
                for c in 0..rank {
                    q += y[c * self.dim + n].norm_sqr();
                }
                let n_exp = rec.shots * q / trace;
                let n_obs = rec.counts[n];
                let resid = n_exp - n_obs;
                if n_exp > self.floor_eps {
                    value += resid * resid / (4.0 * n_exp);
                    if want_grad {
                        let dcoef = (n_exp * n_exp - n_obs * n_obs) / (4.0 * n_exp * n_exp);
                        d_coef[n] = dcoef;
                        dq_sum += dcoef * q;
                    }
                } else {
                    value += resid * resid / (4.0 * self.floor_eps);
                    if want_grad {
                        let dcoef = resid / (2.0 * self.floor_eps);
                        d_coef[n] = dcoef;
                        dq_sum += dcoef * q;
                    }
                }
            }
            if !want_grad {
                return (value, Vec::new());
            }
            // grad_s = (shots/T) U diag(D) Y - (shots/T^2) (sum D q) M.
            for c in 0..rank {
                for n in 0..self.dim {
                    y[c * self.dim + n] *= Complex64::new(d_coef[n], 0.0);
                }
            }
            self.rotate_columns(s, &mut y, rank, false);
            let scale = rec.shots / trace;
            let pull = rec.shots * dq_sum / (trace * trace);
            let grad: Vec<Complex64> = y
                .iter()
                .zip(m_flat)
                .map(|(&uz, &m)| uz * Complex64::new(scale, 0.0) - m * Complex64::new(pull, 0.0))
                .collect();
            (value, grad)
        });

        // Fixed-order reduction keeps results identical across thread counts.
        let mut total = 0.0;
        let mut grad = if want_grad {
            vec![Complex64::default(); m_flat.len()]
        } else {
            Vec::new()
        };
        for (value, g) in per_record {
            total += value;
            if want_grad {
                for (acc, v) in grad.iter_mut().zip(&g) {
                    *acc += v;
                }
            }
        }
        (total, grad)
    }
}

/// Objective value and Wirtinger gradient dL/dM* for a factor M.
///
/// The derivative with respect to Re/Im of an entry is twice the Re/Im of
/// the returned complex gradient.
pub fn likelihood(
    problem: &LikelihoodProblem,
    m: &DMatrix<Complex64>,
) -> Result<(f64, DMatrix<Complex64>)> {
    check_factor(problem, m)?;
    let rank = m.ncols();
    let (value, grad) = problem.evaluate(m.as_slice(), rank, true);
    Ok((
        value,
        DMatrix::from_column_slice(problem.dim, rank, &grad),
    ))
}

/// Objective value only.
pub fn likelihood_value(problem: &LikelihoodProblem, m: &DMatrix<Complex64>) -> Result<f64> {
    check_factor(problem, m)?;
    Ok(problem.evaluate(m.as_slice(), m.ncols(), false).0)
}

fn check_factor(problem: &LikelihoodProblem, m: &DMatrix<Complex64>) -> Result<()> {
    if m.nrows() != problem.dim || m.ncols() == 0 {
        return Err(Error::DimensionMismatch {
            expected: problem.dim,
            actual: m.nrows(),
        });
    }
    Ok(())
}

/// Controls for [`fit`].
#[derive(Debug, Clone)]
pub struct FitConfig {
    /// Starting rank; defaults to the qudit count N.
    pub rank: Option<usize>,
    pub seed: u64,
    /// Relative objective-change tolerance.
    pub tol: f64,
    pub max_iter: usize,
    /// Extra seeded initializations tried when the objective stays
    /// implausibly high.
    pub restarts: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            rank: None,
            seed: 0,
            tol: 1e-10,
            max_iter: 2000,
            restarts: 2,
        }
    }
}

/// Outcome of a maximum-likelihood fit.
#[derive(Debug, Clone)]
pub struct FitReport {
    pub rho: DensityMatrix,
    pub objective: f64,
    pub iterations: usize,
    pub grad_norm: f64,
    /// Ranks visited, first entry the starting rank.
    pub rank_history: Vec<usize>,
    pub purity: f64,
    pub converged: bool,
}

const GRAD_TOL: f64 = 1e-8;
const MAX_ESCALATIONS: usize = 3;

/// Initial factor: column 0 carries sqrt of the measured diagonal with
/// zero phases, the rest small seeded Gaussian perturbations.
fn initial_factor(problem: &LikelihoodProblem, rank: usize, seed: u64) -> Vec<Complex64> {
    let dim = problem.dim;
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let diag = problem
        .measured_diagonal()
        .unwrap_or_else(|| vec![1.0 / dim as f64; dim]);
    let mut m = vec![Complex64::default(); dim * rank];
    for (i, &p) in diag.iter().enumerate() {
        m[i] = Complex64::new(p.max(0.0).sqrt(), 0.0);
    }
    for slot in m.iter_mut().take(dim * rank).skip(dim) {
        let re: f64 = StandardNormal.sample(&mut rng);
        let im: f64 = StandardNormal.sample(&mut rng);
        *slot = Complex64::new(re * 1e-2, im * 1e-2);
    }
    // Unit Frobenius norm start; the objective is scale-invariant.
    let norm: f64 = m.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    if norm > 0.0 {
        for z in &mut m {
            *z /= norm;
        }
    }
    m
}

struct MinimizeOutcome {
    m: Vec<Complex64>,
    value: f64,
    grad_norm: f64,
    iterations: usize,
    converged: bool,
}

/// L-BFGS with two-loop recursion and Armijo backtracking over the real
/// parametrization of M.
fn minimize(
    problem: &LikelihoodProblem,
    mut m: Vec<Complex64>,
    rank: usize,
    tol: f64,
    max_iter: usize,
) -> MinimizeOutcome {
    const MEMORY: usize = 10;
    const ARMIJO: f64 = 1e-4;

    let n_complex = m.len();
    let to_real = |m: &[Complex64], g: &[Complex64]| -> Vec<f64> {
        let _ = m;
        let mut out = Vec::with_capacity(2 * n_complex);
        for z in g {
            out.push(2.0 * z.re);
            out.push(2.0 * z.im);
        }
        out
    };
    let step = |m: &[Complex64], dir: &[f64], t: f64| -> Vec<Complex64> {
        m.iter()
            .enumerate()
            .map(|(i, &z)| z + Complex64::new(t * dir[2 * i], t * dir[2 * i + 1]))
            .collect()
    };

    let (mut value, grad_c) = problem.evaluate(&m, rank, true);
    let mut grad = to_real(&m, &grad_c);
    let mut s_hist: Vec<Vec<f64>> = Vec::new();
    let mut y_hist: Vec<Vec<f64>> = Vec::new();
    let mut rho_hist: Vec<f64> = Vec::new();
    let mut converged = false;
    let mut iterations = 0;

    for iter in 0..max_iter {
        iterations = iter + 1;
        let gnorm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        if gnorm < GRAD_TOL {
            converged = true;
            break;
        }

        // Two-loop recursion for the search direction.
        let mut dir: Vec<f64> = grad.iter().map(|g| -g).collect();
        let k = s_hist.len();
        let mut alphas = vec![0.0; k];
        for i in (0..k).rev() {
            let a = rho_hist[i]
                * s_hist[i]
                    .iter()
                    .zip(&dir)
                    .map(|(s, d)| s * d)
                    .sum::<f64>();
            alphas[i] = a;
            for (d, y) in dir.iter_mut().zip(&y_hist[i]) {
                *d -= a * y;
            }
        }
        if k > 0 {
            let ys: f64 = s_hist[k - 1]
                .iter()
                .zip(&y_hist[k - 1])
                .map(|(s, y)| s * y)
                .sum();
            let yy: f64 = y_hist[k - 1].iter().map(|y| y * y).sum();
            let gamma = ys / yy;
            for d in &mut dir {
                *d *= gamma;
            }
        }
        for i in 0..k {
            let b = rho_hist[i]
                * y_hist[i]
                    .iter()
                    .zip(&dir)
                    .map(|(y, d)| y * d)
                    .sum::<f64>();
            for (d, s) in dir.iter_mut().zip(&s_hist[i]) {
                *d += (alphas[i] - b) * s;
            }
        }

        let mut slope: f64 = grad.iter().zip(&dir).map(|(g, d)| g * d).sum();
        if slope >= 0.0 {
            dir = grad.iter().map(|g| -g).collect();
            slope = -grad.iter().map(|g| g * g).sum::<f64>();
        }

        // Backtracking line search.
        let mut t = if iter == 0 { (1.0 / gnorm).min(1.0) } else { 1.0 };
        let mut m_new = Vec::new();
        let mut value_new = value;
        let mut accepted = false;
        for _ in 0..60 {
            m_new = step(&m, &dir, t);
            value_new = problem.evaluate(&m_new, rank, false).0;
            if value_new <= value + ARMIJO * t * slope {
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            // No descent at machine scale: treat as a stationary point.
            converged = true;
            break;
        }

        let (value_check, grad_c_new) = problem.evaluate(&m_new, rank, true);
        let grad_new = to_real(&m_new, &grad_c_new);
        let s_vec: Vec<f64> = dir.iter().map(|d| d * t).collect();
        let y_vec: Vec<f64> = grad_new
            .iter()
            .zip(&grad)
            .map(|(gn, go)| gn - go)
            .collect();
        let sy: f64 = s_vec.iter().zip(&y_vec).map(|(s, y)| s * y).sum();
        let s_norm = s_vec.iter().map(|v| v * v).sum::<f64>().sqrt();
        let y_norm = y_vec.iter().map(|v| v * v).sum::<f64>().sqrt();
        if sy > 1e-10 * s_norm * y_norm {
            s_hist.push(s_vec);
            y_hist.push(y_vec);
            rho_hist.push(1.0 / sy);
            if s_hist.len() > MEMORY {
                s_hist.remove(0);
                y_hist.remove(0);
                rho_hist.remove(0);
            }
        }

        let rel_change = (value - value_new).abs() / value.abs().max(1.0);
        m = m_new;
        value = value_check;
        grad = grad_new;
        if rel_change < tol {
            converged = true;
            break;
        }
    }

    let grad_norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    MinimizeOutcome {
        m,
        value,
        grad_norm,
        iterations,
        converged,
    }
}

fn fit_at_rank(
    problem: &LikelihoodProblem,
    rank: usize,
    config: &FitConfig,
) -> MinimizeOutcome {
    // Objectives consistent with shot noise sit near a quarter of the
    // outcome count; anything far above that smells like a bad basin.
    let plausible = 0.5 * problem.total_outcomes() as f64;
    let mut best: Option<MinimizeOutcome> = None;
    for attempt in 0..=config.restarts {
        let seed = record_seed(config.seed, attempt);
        let init = initial_factor(problem, rank, seed);
        let outcome = minimize(problem, init, rank, config.tol, config.max_iter);
        let better = best
            .as_ref()
            .map(|b| outcome.value < b.value)
            .unwrap_or(true);
        if better {
            best = Some(outcome);
        }
        if best.as_ref().map(|b| b.value <= plausible).unwrap_or(false) {
            break;
        }
    }
    best.expect("at least one attempt runs")
}

/// Maximum-likelihood fit with purity-driven rank escalation.
///
/// Starts at `config.rank` (default N) and, when the converged state's
/// inverse purity says the rank was too small (r <= 1/tr(rho^2) + 0.5),
/// grows the rank by ceil(N/2) and refits, at most three times.
pub fn fit(problem: &LikelihoodProblem, config: &FitConfig) -> Result<FitReport> {
    if problem.records.is_empty() {
        return Err(Error::EmptyProblem);
    }
    let n = problem.n_qudits;
    let mut rank = config.rank.unwrap_or(n.max(1)).clamp(1, problem.dim);
    let mut rank_history = vec![rank];
    let escalation_step = n.div_ceil(2).max(1);

    let mut outcome = fit_at_rank(problem, rank, config);
    let mut total_iterations = outcome.iterations;
    for _ in 0..MAX_ESCALATIONS {
        let factor = FactorState {
            m: DMatrix::from_column_slice(problem.dim, rank, &outcome.m),
        };
        let purity = factor.purity();
        if rank as f64 > 1.0 / purity + 0.5 || rank >= problem.dim {
            break;
        }
        rank = (rank + escalation_step).min(problem.dim);
        rank_history.push(rank);
        outcome = fit_at_rank(problem, rank, config);
        total_iterations += outcome.iterations;
    }

    let factor = FactorState {
        m: DMatrix::from_column_slice(problem.dim, rank, &outcome.m),
    };
    let rho = factor.density(problem.d, problem.n_qudits);
    let purity = rho.purity();
    Ok(FitReport {
        rho,
        objective: outcome.value,
        iterations: total_iterations,
        grad_norm: outcome.grad_norm,
        rank_history,
        purity,
        converged: outcome.converged,
    })
}

/// Square root of a PSD Hermitian matrix via eigendecomposition, clamping
/// round-off negatives at -1e-9.
fn psd_sqrt(m: &DMatrix<Complex64>) -> Result<DMatrix<Complex64>> {
    let eig = SymmetricEigen::new(m.clone());
    let dim = m.nrows();
    let mut out = DMatrix::zeros(dim, dim);
    for i in 0..dim {
        let lambda = eig.eigenvalues[i];
        if lambda < -1e-9 {
            return Err(Error::InvalidState(format!(
                "matrix square root of a non-PSD input (eigenvalue {lambda:.3e})"
            )));
        }
        let root = lambda.max(0.0).sqrt();
        let v = eig.eigenvectors.column(i);
        out += (v * v.adjoint()).map(|z| z * Complex64::new(root, 0.0));
    }
    Ok(out)
}

/// Uhlmann fidelity (tr sqrt(sqrt(rho1) rho2 sqrt(rho1)))^2, evaluated as
/// the squared trace norm of sqrt(rho1) sqrt(rho2).
pub fn fidelity(rho1: &DensityMatrix, rho2: &DensityMatrix) -> Result<f64> {
    if rho1.dim() != rho2.dim() {
        return Err(Error::DimensionMismatch {
            expected: rho1.dim(),
            actual: rho2.dim(),
        });
    }
    let s1 = psd_sqrt(rho1.matrix())?;
    let s2 = psd_sqrt(rho2.matrix())?;
    let svd = (s1 * s2).svd(false, false);
    let trace_norm: f64 = svd.singular_values.iter().sum();
    Ok((trace_norm * trace_norm).min(1.0))
}

/// Early-stop rule for progressive reconstruction: accept once the
/// step-to-step fidelity stays at or above `f_star` for `stability`
/// further settings.
#[derive(Debug, Clone, Copy)]
pub struct EarlyStop {
    pub f_star: f64,
    pub stability: usize,
}

impl Default for EarlyStop {
    fn default() -> Self {
        Self {
            f_star: 0.95,
            stability: 3,
        }
    }
}

/// One point of the progressive reconstruction curve.
#[derive(Debug, Clone)]
pub struct ProgressivePoint {
    /// Number of settings used, the diagonal included.
    pub l: usize,
    pub rho: DensityMatrix,
    /// Fidelity against the previous point, defined from l = 2 on.
    pub fidelity_prev: Option<f64>,
    pub fidelity_target: Option<f64>,
}

/// Fit growing prefixes of the problem's (plan-ordered) records.
///
/// Without an early-stop rule, every prefix is fitted (in parallel) and
/// the full curve is returned. With one, fitting proceeds sequentially and
/// stops at l* + stability once the rule triggered at l*.
pub fn progressive_fit(
    problem: &LikelihoodProblem,
    config: &FitConfig,
    target: Option<&DensityMatrix>,
    early_stop: Option<EarlyStop>,
) -> Result<Vec<ProgressivePoint>> {
    let total = problem.records.len();
    let reports: Vec<Result<FitReport>> = match early_stop {
        None => par::map_range(total, |idx| fit(&problem.prefix(idx + 1)?, config)),
        Some(rule) => {
            let mut out: Vec<Result<FitReport>> = Vec::new();
            let mut streak = 0usize;
            let mut prev_rho: Option<DensityMatrix> = None;
            for idx in 0..total {
                let report = fit(&problem.prefix(idx + 1)?, config)?;
                if let Some(prev) = &prev_rho {
                    let f = fidelity(&report.rho, prev)?;
                    streak = if f >= rule.f_star { streak + 1 } else { 0 };
                }
                prev_rho = Some(report.rho.clone());
                out.push(Ok(report));
                if streak > rule.stability {
                    break;
                }
            }
            out
        }
    };
    let reports = reports.into_iter().collect::<Result<Vec<_>>>()?;

    let mut points = Vec::with_capacity(reports.len());
    for (idx, report) in reports.iter().enumerate() {
        let fidelity_prev = if idx > 0 {
            Some(fidelity(&report.rho, &reports[idx - 1].rho)?)
        } else {
            None
        };
        let fidelity_target = match target {
            Some(t) => Some(fidelity(&report.rho, t)?),
            None => None,
        };
        points.push(ProgressivePoint {
            l: idx + 1,
            rho: report.rho.clone(),
            fidelity_prev,
            fidelity_target,
        });
    }
    Ok(points)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generators::{build_catalog, MasChoice};
    use crate::measurement::{sample_counts, SamplingMode};
    use crate::planner::{plan_for_targets, Setting, ThresholdProvenance};
    use crate::states::{ghz_state, to_density};
    use crate::target_selection::{select_targets, DiagonalMeasurement};
    use approx::assert_abs_diff_eq;
    use rand::Rng;

    fn exact_records(
        catalog: &ObservableCatalog,
        rho: &DensityMatrix,
        settings: &[Setting],
        shots: u64,
    ) -> Vec<CountsRecord> {
        settings
            .iter()
            .map(|s| sample_counts(catalog, rho, s, shots, SamplingMode::Exact, None).unwrap())
            .collect()
    }

    fn bell_problem() -> (ObservableCatalog, DensityMatrix, LikelihoodProblem) {
        let cat = build_catalog(2, MasChoice::Identity).unwrap();
        let rho = to_density(&ghz_state(2, 2).unwrap()).unwrap();
        let settings = vec![
            Setting::diagonal(2),
            Setting::new(vec![1, 1]),
            Setting::new(vec![2, 1]),
        ];
        let records = exact_records(&cat, &rho, &settings, 10_000);
        let problem = LikelihoodProblem::new(&cat, 2, records).unwrap();
        (cat, rho, problem)
    }

    fn random_factor(dim: usize, rank: usize, seed: u64) -> DMatrix<Complex64> {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        DMatrix::from_fn(dim, rank, |_, _| {
            Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)
        })
    }

    #[test]
    fn self_consistent_counts_have_zero_likelihood() {
        let cat = build_catalog(2, MasChoice::Identity).unwrap();
        let state = ghz_state(2, 3).unwrap();
        let rho = to_density(&state).unwrap();
        let settings = vec![Setting::diagonal(3), Setting::new(vec![1, 1, 1])];
        let records = exact_records(&cat, &rho, &settings, 10_000);
        let problem = LikelihoodProblem::new(&cat, 3, records).unwrap();
        // Factor reproducing rho exactly: one column carrying the state.
        let dim = 8;
        let mut m = DMatrix::<Complex64>::zeros(dim, 1);
        for (&i, &a) in state.amplitudes() {
            m[(i, 0)] = a;
        }
        let value = likelihood_value(&problem, &m).unwrap();
        assert!(value <= 1e-12, "L = {value:.3e}");
    }

    #[test]
    fn single_term_objective_formula() {
        // One setting, one outcome off by delta with a large expectation.
        let cat = build_catalog(2, MasChoice::Identity).unwrap();
        let rho = to_density(&ghz_state(2, 2).unwrap()).unwrap();
        let mut records =
            exact_records(&cat, &rho, &[Setting::diagonal(2)], 10_000);
        let delta = 60.0;
        records[0].counts[0] += delta;
        records[0].counts[3] -= delta;
        let problem = LikelihoodProblem::new(&cat, 2, records).unwrap();
        let mut m = DMatrix::<Complex64>::zeros(4, 1);
        let s = Complex64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
        m[(0, 0)] = s;
        m[(3, 0)] = s;
        let value = likelihood_value(&problem, &m).unwrap();
        // Two outcomes off by delta against expectation 5000 each.
        assert_abs_diff_eq!(value, 2.0 * delta * delta / (4.0 * 5000.0), epsilon = 1e-9);
    }

    #[test]
    fn gradient_matches_central_finite_differences() {
        let cat = build_catalog(2, MasChoice::Identity).unwrap();
        let rho = to_density(&ghz_state(2, 3).unwrap()).unwrap();
        let settings = vec![
            Setting::diagonal(3),
            Setting::new(vec![1, 1, 1]),
            Setting::new(vec![2, 1, 1]),
            Setting::new(vec![0, 1, 0]),
            Setting::new(vec![2, 0, 2]),
        ];
        let records = exact_records(&cat, &rho, &settings, 10_000);
        let problem = LikelihoodProblem::new(&cat, 3, records).unwrap();
        let m = random_factor(8, 3, 77);
        let (_, grad) = likelihood(&problem, &m).unwrap();
        let h = 1e-6;
        let mut worst: f64 = 0.0;
        for (row, col) in [(0usize, 0usize), (3, 1), (7, 2), (5, 0), (2, 2)] {
            for re_part in [true, false] {
                let mut plus = m.clone();
                let mut minus = m.clone();
                let delta = if re_part {
                    Complex64::new(h, 0.0)
                } else {
                    Complex64::new(0.0, h)
                };
                plus[(row, col)] += delta;
                minus[(row, col)] -= delta;
                let fd = (likelihood_value(&problem, &plus).unwrap()
                    - likelihood_value(&problem, &minus).unwrap())
                    / (2.0 * h);
                let analytic = if re_part {
                    2.0 * grad[(row, col)].re
                } else {
                    2.0 * grad[(row, col)].im
                };
                let rel = (fd - analytic).abs() / fd.abs().max(analytic.abs()).max(1e-9);
                worst = worst.max(rel);
            }
        }
        assert!(worst <= 1e-5, "worst relative error {worst:.3e}");
    }

    #[test]
    fn likelihood_is_gauge_invariant() {
        let (_, _, problem) = bell_problem();
        let m = random_factor(4, 2, 5);
        // Right-multiply by a 2x2 unitary (rotation + phase).
        let theta = 0.73f64;
        let phase = Complex64::from_polar(1.0, 0.41);
        let q = DMatrix::from_row_slice(
            2,
            2,
            &[
                Complex64::new(theta.cos(), 0.0),
                Complex64::new(-theta.sin(), 0.0) * phase,
                Complex64::new(theta.sin(), 0.0),
                Complex64::new(theta.cos(), 0.0) * phase,
            ],
        );
        let a = likelihood_value(&problem, &m).unwrap();
        let b = likelihood_value(&problem, &(&m * &q)).unwrap();
        assert_abs_diff_eq!(a, b, epsilon = 1e-9 * a.abs().max(1.0));
    }

    #[test]
    fn bell_fit_reaches_target() {
        let (_, rho, problem) = bell_problem();
        let report = fit(&problem, &FitConfig::default()).unwrap();
        assert!(report.converged);
        let f = fidelity(&report.rho, &rho).unwrap();
        assert!(f >= 0.999, "fidelity {f}");
    }

    #[test]
    fn fit_is_deterministic() {
        let (_, _, problem) = bell_problem();
        let config = FitConfig {
            seed: 9,
            ..FitConfig::default()
        };
        let a = fit(&problem, &config).unwrap();
        let b = fit(&problem, &config).unwrap();
        assert_eq!(a.rho.matrix(), b.rho.matrix());
        assert_eq!(a.iterations, b.iterations);
    }

    #[test]
    fn maximally_mixed_fit_escalates_rank() {
        let cat = build_catalog(2, MasChoice::Identity).unwrap();
        let dim = 4;
        let rho = DensityMatrix::try_new(
            2,
            2,
            DMatrix::identity(dim, dim).map(|z: Complex64| z / Complex64::new(dim as f64, 0.0)),
        )
        .unwrap();
        let settings = vec![
            Setting::diagonal(2),
            Setting::new(vec![1, 1]),
            Setting::new(vec![2, 1]),
            Setting::new(vec![1, 2]),
        ];
        let records = exact_records(&cat, &rho, &settings, 10_000);
        let problem = LikelihoodProblem::new(&cat, 2, records).unwrap();
        let config = FitConfig {
            rank: Some(1),
            ..FitConfig::default()
        };
        let report = fit(&problem, &config).unwrap();
        assert!(
            report.rank_history.len() > 1,
            "rank history {:?}",
            report.rank_history
        );
        assert_eq!(report.rank_history[0], 1);
    }

    #[test]
    fn fidelity_identities() {
        let rho = to_density(&ghz_state(2, 2).unwrap()).unwrap();
        assert_abs_diff_eq!(fidelity(&rho, &rho).unwrap(), 1.0, epsilon = 1e-10);

        let zero = to_density(
            &crate::states::SparseStateVector::from_amplitudes(
                2,
                1,
                std::collections::BTreeMap::from([(0usize, Complex64::new(1.0, 0.0))]),
            )
            .unwrap(),
        )
        .unwrap();
        let one = to_density(
            &crate::states::SparseStateVector::from_amplitudes(
                2,
                1,
                std::collections::BTreeMap::from([(1usize, Complex64::new(1.0, 0.0))]),
            )
            .unwrap(),
        )
        .unwrap();
        assert_abs_diff_eq!(fidelity(&zero, &one).unwrap(), 0.0, epsilon = 1e-12);

        let mixed = DensityMatrix::try_new(
            2,
            1,
            DMatrix::identity(2, 2).map(|z: Complex64| z * Complex64::new(0.5, 0.0)),
        )
        .unwrap();
        assert_abs_diff_eq!(fidelity(&zero, &mixed).unwrap(), 0.5, epsilon = 1e-10);
    }

    #[test]
    fn fidelity_is_symmetric_on_random_pairs() {
        let mut rng = ChaCha12Rng::seed_from_u64(17);
        for _ in 0..5 {
            let a = random_mixed(4, &mut rng);
            let b = random_mixed(4, &mut rng);
            let ab = fidelity(&a, &b).unwrap();
            let ba = fidelity(&b, &a).unwrap();
            assert_abs_diff_eq!(ab, ba, epsilon = 1e-9);
        }
    }

    fn random_mixed(dim: usize, rng: &mut ChaCha12Rng) -> DensityMatrix {
        let mut m = DMatrix::<Complex64>::zeros(dim, dim);
        for i in 0..dim {
            for j in 0..dim {
                m[(i, j)] = Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5);
            }
        }
        let rho = &m * m.adjoint();
        let trace = rho.trace().re;
        DensityMatrix::try_new(2, 2, rho.map(|z| z / Complex64::new(trace, 0.0))).unwrap()
    }

    #[test]
    fn factor_density_invariants_hold_for_random_factors() {
        for seed in 0..5 {
            let factor = FactorState {
                m: random_factor(8, 3, seed),
            };
            let rho = factor.density(2, 3);
            let herm = (rho.matrix() - rho.matrix().adjoint()).map(|z| z.norm()).max();
            assert!(herm <= 1e-12);
            assert_abs_diff_eq!(rho.matrix().trace().re, 1.0, epsilon = 1e-10);
            let min_eig = SymmetricEigen::new(rho.matrix().clone())
                .eigenvalues
                .iter()
                .fold(f64::INFINITY, |m, &e| m.min(e));
            assert!(min_eig >= -1e-9);
            // Gram-based purity agrees with the direct definition.
            assert_abs_diff_eq!(factor.purity(), rho.purity(), epsilon = 1e-10);
        }
    }

    #[test]
    fn progressive_fit_full_prefix_equals_plain_fit() {
        let (_, rho, problem) = bell_problem();
        let config = FitConfig::default();
        let points = progressive_fit(&problem, &config, Some(&rho), None).unwrap();
        assert_eq!(points.len(), 3);
        let plain = fit(&problem, &config).unwrap();
        let f = fidelity(&points.last().unwrap().rho, &plain.rho).unwrap();
        assert!(f >= 1.0 - 1e-9);
        assert!(points.last().unwrap().fidelity_target.unwrap() >= 0.999);
        assert!(points[0].fidelity_prev.is_none());
        assert!(points[1].fidelity_prev.is_some());
    }

    #[test]
    fn noiseless_ghz_reconstruction_via_plan() {
        let cat = build_catalog(2, MasChoice::Identity).unwrap();
        let state = ghz_state(2, 4).unwrap();
        let rho = to_density(&state).unwrap();
        let diag = DiagonalMeasurement::exact(2, 4, state.probabilities()).unwrap();
        let targets = select_targets(&diag, 0.1).unwrap();
        let plan = plan_for_targets(&cat, 4, targets, 0.1, ThresholdProvenance::Fixed).unwrap();
        let records = exact_records(&cat, &rho, &plan.setting_list(), 10_000);
        let problem = LikelihoodProblem::new(&cat, 4, records).unwrap();
        let report = fit(&problem, &FitConfig::default()).unwrap();
        let f = fidelity(&report.rho, &rho).unwrap();
        assert!(f >= 0.999, "fidelity {f}");
    }

    #[test]
    fn empty_problem_rejected() {
        let cat = build_catalog(2, MasChoice::Identity).unwrap();
        assert!(matches!(
            LikelihoodProblem::new(&cat, 2, Vec::new()),
            Err(Error::EmptyProblem)
        ));
    }
}
