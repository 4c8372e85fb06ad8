//! Measuring a setting on a density matrix: outcome probabilities over the
//! product eigenbasis, shot-noise sampling, and an optional synthetic
//! readout-noise model.

use nalgebra::DVector;
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Binomial, Distribution};

use crate::generators::ObservableCatalog;
use crate::par;
use crate::planner::Setting;
use crate::states::DensityMatrix;
use crate::tensor;
use crate::{Error, Result};

/// The separable measurement basis of one setting: d^N product vectors
/// indexed by the base-d digits of the outcome label.
pub struct SettingBasis<'a> {
    catalog: &'a ObservableCatalog,
    setting: Setting,
    n_qudits: usize,
}

impl<'a> SettingBasis<'a> {
    pub fn new(catalog: &'a ObservableCatalog, setting: Setting) -> Result<Self> {
        for &k in setting.indices() {
            catalog.matrix(k)?;
        }
        let n_qudits = setting.n_qudits();
        Ok(Self {
            catalog,
            setting,
            n_qudits,
        })
    }

    pub fn dim(&self) -> usize {
        self.catalog.d().pow(self.n_qudits as u32)
    }

    pub fn setting(&self) -> &Setting {
        &self.setting
    }

    /// Product basis vector |phi_n> for outcome label `n`.
    pub fn vector(&self, n: usize) -> Result<DVector<Complex64>> {
        let d = self.catalog.d();
        let mut factors: Vec<&[Complex64]> = Vec::with_capacity(self.n_qudits);
        for r in 0..self.n_qudits {
            let eig = self.catalog.eigensystem(self.setting.indices()[r])?;
            let slot = tensor::digit(n, d, self.n_qudits, r);
            factors.push(eig[slot].vector.as_slice());
        }
        Ok(DVector::from_vec(tensor::product_vector(&factors, d)))
    }

    /// Product of single-qudit eigenvalues for outcome label `n`.
    pub fn eigenvalue(&self, n: usize) -> Result<f64> {
        let d = self.catalog.d();
        let mut lambda = 1.0;
        for r in 0..self.n_qudits {
            let eig = self.catalog.eigensystem(self.setting.indices()[r])?;
            lambda *= eig[tensor::digit(n, d, self.n_qudits, r)].value;
        }
        Ok(lambda)
    }
}

/// Outcome probabilities p_n = <phi_n|rho|phi_n> of a setting on a state.
///
/// Round-off negatives above -1e-12 are clamped to zero and the vector is
/// renormalized if its sum drifts past 1e-12 from 1.
pub fn probabilities(
    catalog: &ObservableCatalog,
    rho: &DensityMatrix,
    setting: &Setting,
) -> Result<Vec<f64>> {
    if catalog.d() != rho.d() || setting.n_qudits() != rho.n_qudits() {
        return Err(Error::DimensionMismatch {
            expected: rho.dim(),
            actual: catalog.d().pow(setting.n_qudits() as u32),
        });
    }
    let basis = SettingBasis::new(catalog, setting.clone())?;
    let dim = basis.dim();
    let raw: Vec<Result<f64>> = par::map_range(dim, |n| {
        let phi = basis.vector(n)?;
        let p = (phi.adjoint() * rho.matrix() * &phi)[(0, 0)].re;
        if p < -1e-12 {
            return Err(Error::InvalidState(format!(
                "outcome probability {p:.3e} below tolerance"
            )));
        }
        Ok(p.max(0.0))
    });
    let mut p = raw.into_iter().collect::<Result<Vec<f64>>>()?;
    let total: f64 = p.iter().sum();
    if (total - 1.0).abs() > 1e-12 {
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidState(format!(
                "outcome probabilities sum to {total}"
            )));
        }
        for v in &mut p {
            *v /= total;
        }
    }
    Ok(p)
}

/// Expectation value of the product observable: sum_n lambda_n p_n.
pub fn setting_expectation(
    catalog: &ObservableCatalog,
    rho: &DensityMatrix,
    setting: &Setting,
) -> Result<f64> {
    let basis = SettingBasis::new(catalog, setting.clone())?;
    let p = probabilities(catalog, rho, setting)?;
    let mut value = 0.0;
    for (n, &pn) in p.iter().enumerate() {
        value += basis.eigenvalue(n)? * pn;
    }
    Ok(value)
}

/// The expectation value assembled from matrix elements:
/// 2 sum_{i<j} [Re s_ij Re rho_ij + Im s_ij Im rho_ij] plus the diagonal
/// part of tr(s rho). Cross-checks [`setting_expectation`] term by term.
pub fn expectation_from_elements(
    catalog: &ObservableCatalog,
    rho: &DensityMatrix,
    setting: &Setting,
) -> Result<f64> {
    let dim = rho.dim();
    let mut value = 0.0;
    for i in 0..dim {
        for j in i..dim {
            let s_ij = crate::planner::element_contribution(catalog, setting, i, j)?;
            let r_ij = rho.matrix()[(i, j)];
            if i == j {
                value += s_ij.re * r_ij.re;
            } else {
                value += 2.0 * (s_ij.re * r_ij.re + s_ij.im * r_ij.im);
            }
        }
    }
    Ok(value)
}

/// Per-qudit readout confusion: a symbol read as another symbol with
/// probability eps, split uniformly over the d-1 alternatives; `bias`
/// overrides eps per true symbol.
#[derive(Debug, Clone, PartialEq)]
pub struct ReadoutNoiseModel {
    pub epsilon: f64,
    pub bias: Option<Vec<f64>>,
}

impl ReadoutNoiseModel {
    pub fn uniform(epsilon: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&epsilon) {
            return Err(Error::Calibration(format!(
                "readout flip probability {epsilon} outside [0, 1)"
            )));
        }
        Ok(Self {
            epsilon,
            bias: None,
        })
    }

    pub fn with_bias(epsilon: f64, bias: Vec<f64>) -> Result<Self> {
        if bias.iter().any(|&b| !(0.0..1.0).contains(&b)) {
            return Err(Error::Calibration(
                "per-level flip probabilities must lie in [0, 1)".into(),
            ));
        }
        let mut model = Self::uniform(epsilon)?;
        model.bias = Some(bias);
        Ok(model)
    }

    /// Row-stochastic d x d confusion matrix, rows indexed by true symbol.
    pub fn confusion_matrix(&self, d: usize) -> Result<Vec<Vec<f64>>> {
        if let Some(bias) = &self.bias {
            if bias.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    actual: bias.len(),
                });
            }
        }
        let mut rows = Vec::with_capacity(d);
        for a in 0..d {
            let eps = self.bias.as_ref().map_or(self.epsilon, |b| b[a]);
            let off = eps / (d - 1) as f64;
            rows.push((0..d).map(|b| if a == b { 1.0 - eps } else { off }).collect());
        }
        Ok(rows)
    }

    /// Push outcome-label noise through a probability vector by applying
    /// the confusion matrix independently on every qudit.
    pub fn apply(&self, p: &[f64], d: usize, n_qudits: usize) -> Result<Vec<f64>> {
        let conf = self.confusion_matrix(d)?;
        // Reuse the complex gate kernel; probabilities ride in the real part.
        let mut buf: Vec<Complex64> = p.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        let mut mat = nalgebra::DMatrix::<Complex64>::zeros(d, d);
        for (a, row) in conf.iter().enumerate() {
            for (b, &v) in row.iter().enumerate() {
                // Transition true a -> read b enters outcome b from a.
                mat[(b, a)] = Complex64::new(v, 0.0);
            }
        }
        for r in 0..n_qudits {
            tensor::apply_single(&mut buf, d, n_qudits, r, &mat);
        }
        Ok(buf.into_iter().map(|z| z.re).collect())
    }
}

/// How counts are produced from outcome probabilities.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SamplingMode {
    /// Multinomial draw with the given seed.
    Sampled { seed: u64 },
    /// Round-free expected values shots * p_n.
    Exact,
}

/// Counts of one measured setting.
#[derive(Debug, Clone, PartialEq)]
pub struct CountsRecord {
    pub setting: Setting,
    pub counts: Vec<f64>,
    pub shots: f64,
    pub mode: SamplingMode,
    pub noise: Option<ReadoutNoiseModel>,
}

/// Multinomial draw by sequential binomial splitting; O(d^N) regardless of
/// the shot count and deterministic for a given rng stream.
fn multinomial_counts(rng: &mut ChaCha12Rng, shots: u64, p: &[f64]) -> Vec<f64> {
    let mut counts = vec![0.0; p.len()];
    let mut remaining_shots = shots;
    let mut remaining_p = 1.0f64;
    for (i, &pi) in p.iter().enumerate() {
        if remaining_shots == 0 {
            break;
        }
        if i + 1 == p.len() {
            counts[i] = remaining_shots as f64;
            break;
        }
        let ratio = if remaining_p > 0.0 {
            (pi / remaining_p).clamp(0.0, 1.0)
        } else {
            0.0
        };
        let draw = if ratio >= 1.0 {
            remaining_shots
        } else if ratio <= 0.0 {
            0
        } else {
            Binomial::new(remaining_shots, ratio)
                .expect("ratio validated")
                .sample(rng)
        };
        counts[i] = draw as f64;
        remaining_shots -= draw;
        remaining_p -= pi;
    }
    counts
}

/// Measure one setting: outcome probabilities (after optional readout
/// noise), then exact pseudo-counts or a seeded multinomial draw.
pub fn sample_counts(
    catalog: &ObservableCatalog,
    rho: &DensityMatrix,
    setting: &Setting,
    shots: u64,
    mode: SamplingMode,
    noise: Option<&ReadoutNoiseModel>,
) -> Result<CountsRecord> {
    if shots == 0 {
        return Err(Error::EmptyMeasurement);
    }
    let mut p = probabilities(catalog, rho, setting)?;
    if let Some(model) = noise {
        p = model.apply(&p, rho.d(), rho.n_qudits())?;
    }
    let counts = match mode {
        SamplingMode::Exact => p.iter().map(|&v| v * shots as f64).collect(),
        SamplingMode::Sampled { seed } => {
            let mut rng = ChaCha12Rng::seed_from_u64(seed);
            multinomial_counts(&mut rng, shots, &p)
        }
    };
    Ok(CountsRecord {
        setting: setting.clone(),
        counts,
        shots: shots as f64,
        mode,
        noise: noise.cloned(),
    })
}

/// Derive a per-record seed from a base seed and the record index, so
/// records can be sampled in parallel with reproducible streams.
pub fn record_seed(base: u64, index: usize) -> u64 {
    // splitmix64 step over the combined value.
    let mut z = base ^ (index as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
