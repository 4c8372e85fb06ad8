//! Single-qudit observables: the generalized Gell-Mann matrices of SU(d)
//! together with their analytic eigensystems.
//!
//! For dimension `d` the catalog holds `d(d-1) + 1` observables. Index 0
//! stands for the maximal abelian subgroup (MAS); indices `1..=d(d-1)/2`
//! are the real off-diagonal generators enumerating upper-triangular
//! positions `(a, b)`, `a < b`, in row-major order, and each real index `k`
//! has its imaginary partner at `k + d(d-1)/2`.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::{Error, Result};

/// Index of a single-qudit observable inside an [`ObservableCatalog`].
pub type ObsIndex = u16;

/// What observable represents the maximal abelian subgroup in plans.
///
/// All MAS generators share the computational eigenbasis, so one
/// representative suffices; the identity is an equally valid stand-in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MasChoice {
    /// sigma^(0) = identity.
    #[default]
    Identity,
    /// sigma^(0) = diag(1, -1, 0, ..., 0), the first MAS generator.
    FirstMasGenerator,
}

/// One eigenpair of an observable.
#[derive(Debug, Clone)]
pub struct EigPair {
    pub value: f64,
    pub vector: DVector<Complex64>,
}

/// The single-qudit observables for one dimension, with eigensystems in a
/// fixed canonical slot order.
///
/// Canonical order: for sigma^(0) the computational basis; for an
/// off-diagonal generator at `(a, b)` slot `a` holds the +1 eigenvector,
/// slot `b` the -1 eigenvector, and every other slot `c` holds `|c>`.
#[derive(Debug, Clone)]
pub struct ObservableCatalog {
    d: usize,
    mas: MasChoice,
    matrices: Vec<DMatrix<Complex64>>,
    eigensystems: Vec<Vec<EigPair>>,
}

impl ObservableCatalog {
    pub fn d(&self) -> usize {
        self.d
    }

    pub fn mas(&self) -> MasChoice {
        self.mas
    }

    /// Number of observables, `d(d-1) + 1`.
    pub fn len(&self) -> usize {
        self.matrices.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Largest valid observable index, `d(d-1)`.
    pub fn max_index(&self) -> ObsIndex {
        (self.d * (self.d - 1)) as ObsIndex
    }

    /// Count of real off-diagonal generators, `d(d-1)/2`.
    pub fn real_count(&self) -> usize {
        self.d * (self.d - 1) / 2
    }

    pub fn matrix(&self, k: ObsIndex) -> Result<&DMatrix<Complex64>> {
        self.matrices
            .get(k as usize)
            .ok_or_else(|| Error::IndexOutOfRange(format!("observable index {k}")))
    }

    /// Eigenpairs of observable `k` in canonical slot order.
    pub fn eigensystem(&self, k: ObsIndex) -> Result<&[EigPair]> {
        self.eigensystems
            .get(k as usize)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::IndexOutOfRange(format!("observable index {k}")))
    }

    /// The d x d matrix whose column `n` is the eigenvector in slot `n`.
    pub fn basis_matrix(&self, k: ObsIndex) -> Result<DMatrix<Complex64>> {
        let eig = self.eigensystem(k)?;
        let d = self.d;
        let mut m = DMatrix::zeros(d, d);
        for (n, pair) in eig.iter().enumerate() {
            m.set_column(n, &pair.vector);
        }
        Ok(m)
    }

    /// Eigenvalues in slot order.
    pub fn eigenvalues(&self, k: ObsIndex) -> Result<Vec<f64>> {
        Ok(self.eigensystem(k)?.iter().map(|p| p.value).collect())
    }

    /// Real generator index for the upper-triangular position `(a, b)`.
    pub fn real_index_for_pair(&self, a: usize, b: usize) -> Result<ObsIndex> {
        if a >= b || b >= self.d {
            return Err(Error::IndexOutOfRange(format!("pair ({a}, {b})")));
        }
        let offset = a * self.d - a * (a + 1) / 2;
        Ok((offset + (b - a)) as ObsIndex)
    }

    /// Upper-triangular position `(a, b)` addressed by an off-diagonal
    /// generator index (real or imaginary).
    pub fn pair_for_index(&self, k: ObsIndex) -> Result<(usize, usize)> {
        let half = self.real_count() as ObsIndex;
        if k == 0 || k > self.max_index() {
            return Err(Error::IndexOutOfRange(format!("observable index {k}")));
        }
        let real = if k > half { k - half } else { k };
        let mut idx = 1 as ObsIndex;
        for a in 0..self.d {
            for b in (a + 1)..self.d {
                if idx == real {
                    return Ok((a, b));
                }
                idx += 1;
            }
        }
        unreachable!("index validated above")
    }

    /// Imaginary partner of a real off-diagonal index.
    pub fn imaginary_partner(&self, k: ObsIndex) -> Result<ObsIndex> {
        let half = self.real_count() as ObsIndex;
        if k == 0 || k > half {
            return Err(Error::IndexOutOfRange(format!(
                "real observable index {k}"
            )));
        }
        Ok(k + half)
    }

    /// Whether `k` names an imaginary off-diagonal generator.
    pub fn is_imaginary(&self, k: ObsIndex) -> bool {
        (k as usize) > self.real_count() && k <= self.max_index()
    }

    #[cfg(test)]
    pub(crate) fn permute_eigensystem(&mut self, k: ObsIndex, perm: &[usize]) {
        let eig = &mut self.eigensystems[k as usize];
        let old = eig.clone();
        for (slot, &src) in perm.iter().enumerate() {
            eig[slot] = old[src].clone();
        }
    }
}

fn basis_vector(d: usize, a: usize) -> DVector<Complex64> {
    let mut v = DVector::zeros(d);
    v[a] = Complex64::new(1.0, 0.0);
    v
}

/// Build the observable catalog for dimension `d`.
///
/// Real generator `k` for position `(a, b)` has entries 1 at `(a, b)` and
/// `(b, a)`; its imaginary partner has `i` at `(a, b)` and `-i` at `(b, a)`.
pub fn build_catalog(d: usize, mas: MasChoice) -> Result<ObservableCatalog> {
    if d < 2 {
        return Err(Error::InvalidDimension(d));
    }
    let count = d * (d - 1) + 1;
    let mut matrices = Vec::with_capacity(count);
    let mut eigensystems = Vec::with_capacity(count);

    // sigma^(0): MAS representative, diagonal in the computational basis.
    let (mas_matrix, mas_eigs) = match mas {
        MasChoice::Identity => {
            let m = DMatrix::identity(d, d);
            let eigs = (0..d)
                .map(|n| EigPair {
                    value: 1.0,
                    vector: basis_vector(d, n),
                })
                .collect();
            (m, eigs)
        }
        MasChoice::FirstMasGenerator => {
            let mut m = DMatrix::zeros(d, d);
            m[(0, 0)] = Complex64::new(1.0, 0.0);
            m[(1, 1)] = Complex64::new(-1.0, 0.0);
            let eigs = (0..d)
                .map(|n| EigPair {
                    value: match n {
                        0 => 1.0,
                        1 => -1.0,
                        _ => 0.0,
                    },
                    vector: basis_vector(d, n),
                })
                .collect();
            (m, eigs)
        }
    };
    matrices.push(mas_matrix);
    eigensystems.push(mas_eigs);

    let sqrt_half = Complex64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);

    // Real off-diagonal generators, row-major over (a, b).
    for a in 0..d {
        for b in (a + 1)..d {
            let mut m = DMatrix::zeros(d, d);
            m[(a, b)] = Complex64::new(1.0, 0.0);
            m[(b, a)] = Complex64::new(1.0, 0.0);
            matrices.push(m);

            let mut eigs: Vec<EigPair> = (0..d)
                .map(|c| EigPair {
                    value: 0.0,
                    vector: basis_vector(d, c),
                })
                .collect();
            let mut plus = DVector::zeros(d);
            plus[a] = sqrt_half;
            plus[b] = sqrt_half;
            let mut minus = DVector::zeros(d);
            minus[a] = sqrt_half;
            minus[b] = -sqrt_half;
            eigs[a] = EigPair {
                value: 1.0,
                vector: plus,
            };
            eigs[b] = EigPair {
                value: -1.0,
                vector: minus,
            };
            eigensystems.push(eigs);
        }
    }

    // Imaginary partners, same (a, b) order.
    for a in 0..d {
        for b in (a + 1)..d {
            let mut m = DMatrix::zeros(d, d);
            m[(a, b)] = Complex64::new(0.0, 1.0);
            m[(b, a)] = Complex64::new(0.0, -1.0);
            matrices.push(m);

            let mut eigs: Vec<EigPair> = (0..d)
                .map(|c| EigPair {
                    value: 0.0,
                    vector: basis_vector(d, c),
                })
                .collect();
            // +1 eigenvector (|a> - i|b>)/sqrt(2), -1 eigenvector (|a> + i|b>)/sqrt(2).
            let mut plus = DVector::zeros(d);
            plus[a] = sqrt_half;
            plus[b] = Complex64::new(0.0, -std::f64::consts::FRAC_1_SQRT_2);
            let mut minus = DVector::zeros(d);
            minus[a] = sqrt_half;
            minus[b] = Complex64::new(0.0, std::f64::consts::FRAC_1_SQRT_2);
            eigs[a] = EigPair {
                value: 1.0,
                vector: plus,
            };
            eigs[b] = EigPair {
                value: -1.0,
                vector: minus,
            };
            eigensystems.push(eigs);
        }
    }

    Ok(ObservableCatalog {
        d,
        mas,
        matrices,
        eigensystems,
    })
}
