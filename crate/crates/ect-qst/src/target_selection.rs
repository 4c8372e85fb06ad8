//! Threshold policies: from a measured diagonal to the set of off-diagonal
//! matrix elements worth determining.
//!
//! Every element obeys |rho_ij| <= r_ij = sqrt(rho_ii rho_jj), so pairs
//! whose bound falls below a threshold `t` are dropped. The threshold can
//! be fixed by hand, derived from the sparsity of the diagonal (Gini
//! index), or calibrated against repeated noisy runs of a known circuit.

use crate::{Error, Result};

/// Which part of a matrix element a target names.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Part {
    Re,
    Im,
}

/// One unknown to determine: the real or imaginary part of rho_ij, i < j,
/// together with its bound r_ij in probability units.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetElement {
    pub i: usize,
    pub j: usize,
    pub part: Part,
    pub bound: f64,
}

/// A measured (or exactly computed) diagonal of the density matrix.
///
/// `counts` holds d^N non-negative values; exact-mode pseudo-counts are
/// real-valued, sampled counts are integers stored as floats. By default
/// the counts must account for every shot; set `allow_lost_shots` for
/// records where some shots went unregistered.
#[derive(Debug, Clone)]
pub struct DiagonalMeasurement {
    d: usize,
    n_qudits: usize,
    counts: Vec<f64>,
    shots: f64,
    allow_lost_shots: bool,
}

impl DiagonalMeasurement {
    pub fn new(d: usize, n_qudits: usize, counts: Vec<f64>, shots: f64) -> Result<Self> {
        Self::build(d, n_qudits, counts, shots, false)
    }

    pub fn with_lost_shots(
        d: usize,
        n_qudits: usize,
        counts: Vec<f64>,
        shots: f64,
    ) -> Result<Self> {
        Self::build(d, n_qudits, counts, shots, true)
    }

    /// Exact diagonal from probabilities (pseudo-shots of 1).
    pub fn exact(d: usize, n_qudits: usize, probabilities: Vec<f64>) -> Result<Self> {
        Self::build(d, n_qudits, probabilities, 1.0, false)
    }

    fn build(
        d: usize,
        n_qudits: usize,
        counts: Vec<f64>,
        shots: f64,
        allow_lost_shots: bool,
    ) -> Result<Self> {
        if d < 2 {
            return Err(Error::InvalidDimension(d));
        }
        let dim = d.checked_pow(n_qudits as u32).ok_or(Error::SizeGuard {
            what: "diagonal",
            requested: usize::MAX,
            limit: 1 << 24,
        })?;
        if counts.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: counts.len(),
            });
        }
        if shots <= 0.0 {
            return Err(Error::EmptyMeasurement);
        }
        if counts.iter().any(|&c| c < 0.0 || !c.is_finite()) {
            return Err(Error::InvalidState(
                "diagonal counts must be finite and non-negative".into(),
            ));
        }
        let total: f64 = counts.iter().sum();
        let tol = 1e-9 * shots.max(1.0);
        if total > shots + tol {
            return Err(Error::InvalidState(format!(
                "diagonal counts sum to {total}, more than {shots} shots"
            )));
        }
        if !allow_lost_shots && (total - shots).abs() > tol {
            return Err(Error::InvalidState(format!(
                "diagonal counts sum to {total}, expected {shots} shots"
            )));
        }
        Ok(Self {
            d,
            n_qudits,
            counts,
            shots,
            allow_lost_shots,
        })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn n_qudits(&self) -> usize {
        self.n_qudits
    }

    pub fn dim(&self) -> usize {
        self.counts.len()
    }

    pub fn counts(&self) -> &[f64] {
        &self.counts
    }

    pub fn shots(&self) -> f64 {
        self.shots
    }

    pub fn allows_lost_shots(&self) -> bool {
        self.allow_lost_shots
    }

    /// Empirical frequencies counts / shots.
    pub fn frequencies(&self) -> Vec<f64> {
        self.counts.iter().map(|c| c / self.shots).collect()
    }
}

/// How the selection threshold is chosen.
#[derive(Debug, Clone, PartialEq)]
pub enum ThresholdPolicy {
    Fixed(f64),
    Gini,
    NoiseCalibrated { threshold: f64 },
}

impl ThresholdPolicy {
    /// Resolve the policy against a measured diagonal.
    pub fn resolve(&self, diag: &DiagonalMeasurement) -> Result<f64> {
        let t = match self {
            ThresholdPolicy::Fixed(t) => *t,
            ThresholdPolicy::Gini => gini_threshold(diag)?,
            ThresholdPolicy::NoiseCalibrated { threshold } => *threshold,
        };
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::Calibration(format!("threshold {t} outside [0, 1]")));
        }
        Ok(t)
    }
}

/// Select every pair i < j whose bound sqrt(p_i p_j) reaches the threshold
/// (inclusive), emitting a Re and an Im target per pair.
///
/// Output is ordered by (i, j, part) with Re before Im.
pub fn select_targets(diag: &DiagonalMeasurement, t: f64) -> Result<Vec<TargetElement>> {
    if t < 0.0 {
        return Err(Error::Calibration(format!("negative threshold {t}")));
    }
    let p = diag.frequencies();
    let mut out = Vec::new();
    for i in 0..p.len() {
        for j in (i + 1)..p.len() {
            let bound = (p[i] * p[j]).sqrt();
            if bound >= t {
                out.push(TargetElement {
                    i,
                    j,
                    part: Part::Re,
                    bound,
                });
                out.push(TargetElement {
                    i,
                    j,
                    part: Part::Im,
                    bound,
                });
            }
        }
    }
    Ok(out)
}

/// Gini sparsity index of a non-negative vector, in [0, 1 - 1/n].
///
/// 0 for a uniform vector, 1 - 1/n for a single spike; scale-invariant.
pub fn gini_index(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::UndefinedSparsity);
    }
    if values.iter().any(|&v| v < 0.0 || !v.is_finite()) {
        return Err(Error::InvalidState(
            "gini index requires finite non-negative values".into(),
        ));
    }
    let norm: f64 = values.iter().sum();
    if norm <= 0.0 {
        return Err(Error::UndefinedSparsity);
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len() as f64;
    let sum: f64 = sorted
        .iter()
        .enumerate()
        .map(|(idx, &c)| {
            let k = (idx + 1) as f64;
            (c / norm) * ((n - k + 0.5) / n)
        })
        .sum();
    Ok(1.0 - 2.0 * sum)
}

/// Sparsity-driven threshold: GI of the normalized diagonal over d^N - 1.
pub fn gini_threshold(diag: &DiagonalMeasurement) -> Result<f64> {
    let gi = gini_index(diag.counts())?;
    Ok(gi / (diag.dim() as f64 - 1.0))
}

/// Noise-calibrated threshold from repeated noisy runs of a circuit whose
/// noiseless diagonal is known.
///
/// `noiseless_counts` splits the indices into expected-zero and
/// expected-non-zero sets. Over all noisy runs, `c0_max` is the largest
/// count seen on the zero set and `cnz_min` the smallest count seen on the
/// non-zero set; the threshold is
/// max(c0_max + N sqrt(c0_max), cnz_min - N sqrt(cnz_min)) / shots,
/// clamped to [0, 1].
pub fn noise_calibrated_threshold(
    noiseless_counts: &[f64],
    noisy_runs: &[Vec<f64>],
    n_qudits: usize,
    shots: f64,
) -> Result<f64> {
    if shots <= 0.0 {
        return Err(Error::EmptyMeasurement);
    }
    if noisy_runs.is_empty() {
        return Err(Error::Calibration("no noisy runs provided".into()));
    }
    let zero_set: Vec<usize> = (0..noiseless_counts.len())
        .filter(|&i| noiseless_counts[i] == 0.0)
        .collect();
    let nonzero_set: Vec<usize> = (0..noiseless_counts.len())
        .filter(|&i| noiseless_counts[i] > 0.0)
        .collect();
    if nonzero_set.is_empty() {
        return Err(Error::Calibration(
            "noiseless diagonal has no non-zero entries".into(),
        ));
    }
    let mut c0_max = 0.0f64;
    let mut cnz_min = f64::INFINITY;
    for run in noisy_runs {
        if run.len() != noiseless_counts.len() {
            return Err(Error::DimensionMismatch {
                expected: noiseless_counts.len(),
                actual: run.len(),
            });
        }
        for &i in &zero_set {
            c0_max = c0_max.max(run[i]);
        }
        let run_min = nonzero_set
            .iter()
            .map(|&i| run[i])
            .fold(f64::INFINITY, f64::min);
        cnz_min = cnz_min.min(run_min);
    }
    let n = n_qudits as f64;
    let t_noise = c0_max + n * c0_max.sqrt();
    let t_signal = cnz_min - n * cnz_min.sqrt();
    Ok((t_noise.max(t_signal) / shots).clamp(0.0, 1.0))
}
