//! Recovering single-projector tomography from the setting machinery, and
//! measurement-cost accounting across the three tomography styles.
//!
//! For platforms that measure one projector at a time, each target keeps
//! only the basis vector of its own setting with the largest overlap
//! |A_mn|^2; the full-setting approach instead records all d^N outcomes of
//! every kept setting.

use nalgebra::DVector;
use num_complex::Complex64;

use crate::generators::ObservableCatalog;
use crate::measurement::SettingBasis;
use crate::planner::{overlap_tensor, setting_for_element, Setting, TomographyPlan};
use crate::target_selection::TargetElement;
use crate::Result;

/// The single projector retained for one target element.
#[derive(Debug, Clone)]
pub struct ProjectorChoice {
    pub target: TargetElement,
    pub setting: Setting,
    /// Smallest outcome label attaining the maximum overlap.
    pub n_max: usize,
    pub projector: DVector<Complex64>,
}

/// Build the target's own setting, scan its overlap row and keep the
/// smallest outcome label with maximal |A|^2.
pub fn tqst_projector(
    catalog: &ObservableCatalog,
    m: &TargetElement,
    n_qudits: usize,
) -> Result<ProjectorChoice> {
    let setting = setting_for_element(catalog, m, n_qudits)?;
    let (rows, _) = overlap_tensor(catalog, &setting, std::slice::from_ref(m))?;
    let row = &rows[0];
    let mut n_max = 0;
    let mut best = -1.0f64;
    for (n, &a) in row.iter().enumerate() {
        let sq = a * a;
        if sq > best + 1e-15 {
            best = sq;
            n_max = n;
        }
    }
    let basis = SettingBasis::new(catalog, setting.clone())?;
    let projector = basis.vector(n_max)?;
    Ok(ProjectorChoice {
        target: m.clone(),
        setting,
        n_max,
        projector,
    })
}

/// Settings and projective-measurement counts for the three approaches.
#[derive(Debug, Clone, PartialEq)]
pub struct CostReport {
    pub d: usize,
    pub n_qudits: usize,
    /// Full tomography: 3^N settings for qubits, the t -> 0 setting bound
    /// 2 [d(d-1)/2 + 1]^N - 1 otherwise.
    pub fqst_settings: usize,
    pub fqst_measurements: usize,
    /// Projector-per-target tomography: the diagonal basis plus one
    /// projector per target (distinct ones only).
    pub tqst_projectors: usize,
    pub tqst_measurements: usize,
    pub ect_settings: usize,
    pub ect_measurements: usize,
}

/// Count settings and projective measurements for a plan and its targets.
pub fn cost_report(
    catalog: &ObservableCatalog,
    plan: &TomographyPlan,
    targets: &[TargetElement],
) -> Result<CostReport> {
    let d = plan.d;
    let n = plan.n_qudits;
    let dim = plan.dim();

    let fqst_settings = if d == 2 {
        3usize.pow(n as u32)
    } else {
        2 * (d * (d - 1) / 2 + 1).pow(n as u32) - 1
    };
    let fqst_measurements = fqst_settings * dim;

    let mut projectors = std::collections::BTreeSet::new();
    for m in targets {
        let choice = tqst_projector(catalog, m, n)?;
        projectors.insert((choice.setting.indices().to_vec(), choice.n_max));
    }
    let tqst_projectors = projectors.len();
    let tqst_measurements = dim + tqst_projectors;

    let ect_settings = plan.settings.len();
    let ect_measurements = ect_settings * dim;

    Ok(CostReport {
        d,
        n_qudits: n,
        fqst_settings,
        fqst_measurements,
        tqst_projectors,
        tqst_measurements,
        ect_settings,
        ect_measurements,
    })
}
