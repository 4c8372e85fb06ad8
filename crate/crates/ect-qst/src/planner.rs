//! Setting construction, overlap machinery, greedy pruning and weight
//! sorting: everything that turns a list of target elements into an
//! ordered measurement plan.
//!
//! A setting is a multi-index K = (k_1..k_N) naming one single-qudit
//! observable per qudit. The overlap C_sm of a setting with a target m
//! sums |<phi_n|O_m|phi_n>|^2 over the setting's product eigenbasis and is
//! what pruning bounds from below: the surviving settings jointly reach
//! beta_m = max_s C_sm on every target.

use std::collections::BTreeSet;

use num_complex::Complex64;

use crate::generators::{ObsIndex, ObservableCatalog};
use crate::par;
use crate::target_selection::{Part, TargetElement};
use crate::tensor;
use crate::{Error, Result};

/// Multi-index of single-qudit observables, one per qudit.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Setting(Vec<ObsIndex>);

impl Setting {
    pub fn new(indices: Vec<ObsIndex>) -> Self {
        Self(indices)
    }

    /// The all-zero diagonal setting on `n` qudits.
    pub fn diagonal(n_qudits: usize) -> Self {
        Self(vec![0; n_qudits])
    }

    pub fn indices(&self) -> &[ObsIndex] {
        &self.0
    }

    pub fn n_qudits(&self) -> usize {
        self.0.len()
    }

    pub fn is_diagonal(&self) -> bool {
        self.0.iter().all(|&k| k == 0)
    }
}

impl std::fmt::Display for Setting {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "s^(")?;
        for k in &self.0 {
            write!(f, "{k}")?;
        }
        write!(f, ")")
    }
}

/// Construct the setting informing one target element.
///
/// Digit-wise compare the base-d representations of i and j: equal digits
/// measure sigma^(0), differing digits the unique real generator with
/// support at that digit pair. For an imaginary target the first
/// differing position is switched to the imaginary partner.
pub fn setting_for_element(
    catalog: &ObservableCatalog,
    m: &TargetElement,
    n_qudits: usize,
) -> Result<Setting> {
    let d = catalog.d();
    let dim = d.pow(n_qudits as u32);
    if m.i >= m.j || m.j >= dim {
        return Err(Error::IndexOutOfRange(format!(
            "target element ({}, {}) in dimension {dim}",
            m.i, m.j
        )));
    }
    let di = tensor::digits(m.i, d, n_qudits);
    let dj = tensor::digits(m.j, d, n_qudits);
    let mut indices = Vec::with_capacity(n_qudits);
    let mut first_diff: Option<usize> = None;
    for r in 0..n_qudits {
        if di[r] == dj[r] {
            indices.push(0);
        } else {
            let (a, b) = if di[r] < dj[r] {
                (di[r], dj[r])
            } else {
                (dj[r], di[r])
            };
            indices.push(catalog.real_index_for_pair(a, b)?);
            first_diff.get_or_insert(r);
        }
    }
    if m.part == Part::Im {
        let r = first_diff.expect("i != j implies a differing digit");
        indices[r] = catalog.imaginary_partner(indices[r])?;
    }
    Ok(Setting::new(indices))
}

/// Matrix element s^(K)_ij of the product observable: the product of the
/// single-qudit entries at the digit pairs of (i, j).
pub fn element_contribution(
    catalog: &ObservableCatalog,
    setting: &Setting,
    i: usize,
    j: usize,
) -> Result<Complex64> {
    let d = catalog.d();
    let n = setting.n_qudits();
    let mut value = Complex64::new(1.0, 0.0);
    for r in 0..n {
        let m = catalog.matrix(setting.indices()[r])?;
        value *= m[(tensor::digit(i, d, n, r), tensor::digit(j, d, n, r))];
        if value == Complex64::default() {
            break;
        }
    }
    Ok(value)
}

/// Per-qudit slot factors g_r(x) = conj(v_x[i_r]) v_x[j_r] for a target
/// under one observable; the building block of both overlap routes.
fn slot_factors(
    catalog: &ObservableCatalog,
    k: ObsIndex,
    i_digit: usize,
    j_digit: usize,
) -> Result<Vec<Complex64>> {
    let eig = catalog.eigensystem(k)?;
    Ok(eig
        .iter()
        .map(|pair| pair.vector[i_digit].conj() * pair.vector[j_digit])
        .collect())
}

/// Overlap C_sm of a setting with a target element.
///
/// Uses the product structure of the basis: with g(n) = prod_r g_r(n_r),
/// sum_n Re(g)^2 = (prod_r sum_x |g_r|^2 + Re prod_r sum_x g_r^2) / 2 and
/// the imaginary part takes the difference. O(N d) per target instead of
/// enumerating all d^N basis vectors.
pub fn overlap(catalog: &ObservableCatalog, setting: &Setting, m: &TargetElement) -> Result<f64> {
    let d = catalog.d();
    let n = setting.n_qudits();
    let mut prod_abs = 1.0f64;
    let mut prod_sq = Complex64::new(1.0, 0.0);
    for r in 0..n {
        let g = slot_factors(
            catalog,
            setting.indices()[r],
            tensor::digit(m.i, d, n, r),
            tensor::digit(m.j, d, n, r),
        )?;
        let abs: f64 = g.iter().map(|z| z.norm_sqr()).sum();
        let sq: Complex64 = g.iter().map(|z| z * z).sum();
        prod_abs *= abs;
        prod_sq *= sq;
        if prod_abs == 0.0 {
            return Ok(0.0);
        }
    }
    Ok(match m.part {
        Part::Re => 0.5 * (prod_abs + prod_sq.re),
        Part::Im => 0.5 * (prod_abs - prod_sq.re),
    })
}

/// Overlap row A^(s)_mn = <phi_n|O_m|phi_n> over the full product basis,
/// plus its squared sum C_sm. The direct O(d^N) route, kept independent of
/// [`overlap`] so the two can check each other.
pub fn overlap_tensor(
    catalog: &ObservableCatalog,
    setting: &Setting,
    targets: &[TargetElement],
) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    let d = catalog.d();
    let n = setting.n_qudits();
    let dim = d.pow(n as u32);
    let mut rows = Vec::with_capacity(targets.len());
    let mut c = Vec::with_capacity(targets.len());
    for m in targets {
        let factors: Vec<Vec<Complex64>> = (0..n)
            .map(|r| {
                slot_factors(
                    catalog,
                    setting.indices()[r],
                    tensor::digit(m.i, d, n, r),
                    tensor::digit(m.j, d, n, r),
                )
            })
            .collect::<Result<_>>()?;
        let mut row = Vec::with_capacity(dim);
        let mut sum_sq = 0.0;
        for basis_n in 0..dim {
            let mut g = Complex64::new(1.0, 0.0);
            for (r, f) in factors.iter().enumerate() {
                g *= f[tensor::digit(basis_n, d, n, r)];
            }
            let a = match m.part {
                Part::Re => g.re,
                Part::Im => -g.im,
            };
            row.push(a);
            sum_sq += a * a;
        }
        rows.push(row);
        c.push(sum_sq);
    }
    Ok((rows, c))
}

/// The overlap matrix C over an ordered set of settings and targets, with
/// the per-target maxima beta.
#[derive(Debug, Clone)]
pub struct OverlapMatrix {
    pub settings: Vec<Setting>,
    pub targets: Vec<TargetElement>,
    /// Row-major |settings| x |targets|.
    pub c: Vec<Vec<f64>>,
    pub beta: Vec<f64>,
}

impl OverlapMatrix {
    /// Build C over all (setting, target) pairs; rows computed in parallel
    /// and collected in setting order.
    pub fn build(
        catalog: &ObservableCatalog,
        settings: Vec<Setting>,
        targets: Vec<TargetElement>,
    ) -> Result<Self> {
        let rows: Vec<Result<Vec<f64>>> = par::map_collect(&settings, |s| {
            targets.iter().map(|m| overlap(catalog, s, m)).collect()
        });
        let c = rows.into_iter().collect::<Result<Vec<_>>>()?;
        let mut beta = vec![0.0f64; targets.len()];
        for row in &c {
            for (b, &v) in beta.iter_mut().zip(row) {
                *b = b.max(v);
            }
        }
        Ok(Self {
            settings,
            targets,
            c,
            beta,
        })
    }
}

/// Satisfaction tolerance for the coverage condition sum C >= beta.
const COVERAGE_TOL: f64 = 1e-9;

/// Greedy pruning: keep a subset of settings whose summed overlap reaches
/// beta_m on every target.
///
/// Candidates are ranked once by how few zeros their C-row has over all
/// target columns (ties broken by lexicographically smallest K) and
/// appended in that order until every column is covered. Returns indices
/// into `overlap.settings` in selection order.
pub fn prune(overlap: &OverlapMatrix) -> Result<Vec<usize>> {
    let n_targets = overlap.targets.len();
    if n_targets == 0 {
        return Ok(Vec::new());
    }
    if let Some(col) = overlap.beta.iter().position(|&b| b <= 0.0) {
        return Err(Error::Planning(format!(
            "target {:?} has zero maximum overlap",
            overlap.targets[col]
        )));
    }
    let mut order: Vec<usize> = (0..overlap.settings.len()).collect();
    let zero_count = |row: &[f64]| row.iter().filter(|&&v| v == 0.0).count();
    order.sort_by(|&a, &b| {
        zero_count(&overlap.c[a])
            .cmp(&zero_count(&overlap.c[b]))
            .then_with(|| overlap.settings[a].cmp(&overlap.settings[b]))
    });

    let mut selected = Vec::new();
    let mut coverage = vec![0.0f64; n_targets];
    let mut unsatisfied = n_targets;
    for &s in &order {
        if unsatisfied == 0 {
            break;
        }
        selected.push(s);
        for (m, &v) in overlap.c[s].iter().enumerate() {
            let before = coverage[m];
            coverage[m] += v;
            if before < overlap.beta[m] - COVERAGE_TOL
                && coverage[m] >= overlap.beta[m] - COVERAGE_TOL
            {
                unsatisfied -= 1;
            }
        }
    }
    if unsatisfied > 0 {
        return Err(Error::Planning(
            "greedy selection exhausted all settings without covering every target".into(),
        ));
    }
    Ok(selected)
}

/// One pruned, weighted plan entry.
#[derive(Debug, Clone)]
pub struct PlanEntry {
    pub setting: Setting,
    /// w_s = sum_m C_sm r_m.
    pub weight: f64,
    /// Indices into the plan's target list with C_sm > 0.
    pub informs: Vec<usize>,
}

/// Which threshold produced a plan (provenance only).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ThresholdProvenance {
    Fixed,
    Gini,
    NoiseCalibrated,
}

/// A pruned, weight-sorted measurement plan.
///
/// `settings[0]` is always the all-zero diagonal setting; the remaining
/// entries are sorted by non-increasing weight.
#[derive(Debug, Clone)]
pub struct TomographyPlan {
    pub d: usize,
    pub n_qudits: usize,
    pub threshold: f64,
    pub threshold_mode: ThresholdProvenance,
    pub targets: Vec<TargetElement>,
    pub settings: Vec<PlanEntry>,
    pub seed: Option<u64>,
}

impl TomographyPlan {
    pub fn dim(&self) -> usize {
        self.d.pow(self.n_qudits as u32)
    }

    /// Number of settings excluding the diagonal.
    pub fn off_diagonal_count(&self) -> usize {
        self.settings.len() - 1
    }

    pub fn setting_list(&self) -> Vec<Setting> {
        self.settings.iter().map(|e| e.setting.clone()).collect()
    }
}

/// Assemble the plan for a list of selected targets: construct settings,
/// merge duplicates, build overlaps, prune, weight-sort and prepend the
/// diagonal setting.
pub fn plan_for_targets(
    catalog: &ObservableCatalog,
    n_qudits: usize,
    targets: Vec<TargetElement>,
    threshold: f64,
    threshold_mode: ThresholdProvenance,
) -> Result<TomographyPlan> {
    let mut seen = BTreeSet::new();
    let mut settings = Vec::new();
    for m in &targets {
        let s = setting_for_element(catalog, m, n_qudits)?;
        if seen.insert(s.clone()) {
            settings.push(s);
        }
    }
    let overlap_matrix = OverlapMatrix::build(catalog, settings, targets)?;
    let kept = prune(&overlap_matrix)?;

    let mut entries: Vec<PlanEntry> = kept
        .into_iter()
        .map(|s| {
            let row = &overlap_matrix.c[s];
            let weight = row
                .iter()
                .zip(&overlap_matrix.targets)
                .map(|(&c, m)| c * m.bound)
                .sum();
            let informs = row
                .iter()
                .enumerate()
                .filter(|(_, &c)| c > 1e-12)
                .map(|(idx, _)| idx)
                .collect();
            PlanEntry {
                setting: overlap_matrix.settings[s].clone(),
                weight,
                informs,
            }
        })
        .collect();
    entries.sort_by(|a, b| {
        b.weight
            .partial_cmp(&a.weight)
            .unwrap()
            .then_with(|| a.setting.cmp(&b.setting))
    });

    let mut settings = Vec::with_capacity(entries.len() + 1);
    settings.push(PlanEntry {
        setting: Setting::diagonal(n_qudits),
        weight: 0.0,
        informs: Vec::new(),
    });
    settings.extend(entries);

    Ok(TomographyPlan {
        d: catalog.d(),
        n_qudits,
        threshold,
        threshold_mode,
        targets: overlap_matrix.targets,
        settings,
        seed: None,
    })
}

/// Guard for full-tomography enumeration.
const FULL_QST_DIM_LIMIT: usize = 4096;

/// The plan in the t -> 0 limit: every pair of basis indices becomes a
/// target (bounds from a uniform diagonal), so the setting count before
/// pruning is bounded by 2 [d(d-1)/2 + 1]^N.
pub fn full_qst_plan(catalog: &ObservableCatalog, n_qudits: usize) -> Result<TomographyPlan> {
    let d = catalog.d();
    let dim = d
        .checked_pow(n_qudits as u32)
        .filter(|&x| x <= FULL_QST_DIM_LIMIT)
        .ok_or(Error::SizeGuard {
            what: "full tomography plan",
            requested: n_qudits,
            limit: FULL_QST_DIM_LIMIT,
        })?;
    let bound = 1.0 / dim as f64;
    let mut targets = Vec::with_capacity(dim * (dim - 1));
    for i in 0..dim {
        for j in (i + 1)..dim {
            for part in [Part::Re, Part::Im] {
                targets.push(TargetElement { i, j, part, bound });
            }
        }
    }
    plan_for_targets(catalog, n_qudits, targets, 0.0, ThresholdProvenance::Fixed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generators::{build_catalog, MasChoice};
    use crate::target_selection::{select_targets, DiagonalMeasurement};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn target(i: usize, j: usize, part: Part) -> TargetElement {
        TargetElement {
            i,
            j,
            part,
            bound: 0.1,
        }
    }

    #[test]
    fn qubit_setting_construction_matches_worked_case() {
        // i = 4 = 0100, j = 13 = 1101 over four qubits.
        let cat = build_catalog(2, MasChoice::Identity).unwrap();
        let re = setting_for_element(&cat, &target(4, 13, Part::Re), 4).unwrap();
        assert_eq!(re.indices(), &[1, 0, 0, 1]);
        let im = setting_for_element(&cat, &target(4, 13, Part::Im), 4).unwrap();
        assert_eq!(im.indices(), &[2, 0, 0, 1]);
    }

    #[test]
    fn qutrit_setting_construction_matches_worked_cases() {
        let cat = build_catalog(3, MasChoice::Identity).unwrap();
        // i = 12 = 110_3, j = 23 = 212_3 over three qutrits.
        let re = setting_for_element(&cat, &target(12, 23, Part::Re), 3).unwrap();
        assert_eq!(re.indices(), &[3, 0, 2]);
        let im = setting_for_element(&cat, &target(12, 23, Part::Im), 3).unwrap();
        assert_eq!(im.indices(), &[6, 0, 2]);
        // Two qutrits, element (0, 2).
        let re = setting_for_element(&cat, &target(0, 2, Part::Re), 2).unwrap();
        assert_eq!(re.indices(), &[0, 2]);
        let im = setting_for_element(&cat, &target(0, 2, Part::Im), 2).unwrap();
        assert_eq!(im.indices(), &[0, 5]);
    }

    #[test]
    fn diagonal_element_rejected() {
        let cat = build_catalog(2, MasChoice::Identity).unwrap();
        assert!(setting_for_element(&cat, &target(3, 3, Part::Re), 2).is_err());
        assert!(setting_for_element(&cat, &target(1, 4, Part::Re), 2).is_err());
    }

    #[test]
    fn element_contribution_nonzero_for_own_setting() {
        let cat = build_catalog(3, MasChoice::Identity).unwrap();
        let m = target(2, 4, Part::Re);
        let s = setting_for_element(&cat, &m, 2).unwrap();
        let v = element_contribution(&cat, &s, 2, 4).unwrap();
        assert!(v.norm() > 0.0);
        assert_abs_diff_eq!(v.im, 0.0, epsilon = 1e-15);
    }

    #[test]
    fn element_contribution_diagonal_setting_vanishes_off_diagonal() {
        let cat = build_catalog(2, MasChoice::Identity).unwrap();
        let s = Setting::diagonal(3);
        for (i, j) in [(0, 1), (2, 5), (3, 7)] {
            assert_eq!(
                element_contribution(&cat, &s, i, j).unwrap(),
                Complex64::default()
            );
        }
    }

    #[test]
    fn ghz_imaginary_setting_contribution_is_imaginary() {
        let cat = build_catalog(2, MasChoice::Identity).unwrap();
        let n = 4;
        let mut indices = vec![1; n];
        indices[0] = 2;
        let s = Setting::new(indices);
        let v = element_contribution(&cat, &s, 0, (1 << n) - 1).unwrap();
        assert_abs_diff_eq!(v.re, 0.0, epsilon = 1e-15);
        assert!(v.im.abs() > 0.0);
    }

    #[test]
    fn overlap_routes_agree() {
        let cat = build_catalog(3, MasChoice::Identity).unwrap();
        let targets: Vec<TargetElement> = [(0, 2), (0, 4), (2, 5), (4, 5)]
            .iter()
            .flat_map(|&(i, j)| [target(i, j, Part::Re), target(i, j, Part::Im)])
            .collect();
        for m in &targets {
            let s = setting_for_element(&cat, m, 2).unwrap();
            let (rows, c_direct) = overlap_tensor(&cat, &s, &targets).unwrap();
            for (idx, t) in targets.iter().enumerate() {
                let fast = overlap(&cat, &s, t).unwrap();
                assert_abs_diff_eq!(fast, c_direct[idx], epsilon = 1e-12);
                let sum: f64 = rows[idx].iter().map(|a| a * a).sum();
                assert_abs_diff_eq!(sum, c_direct[idx], epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn overlap_invariant_under_eigenvector_slot_permutation() {
        let mut cat = build_catalog(3, MasChoice::Identity).unwrap();
        let targets: Vec<TargetElement> = vec![
            target(0, 2, Part::Re),
            target(0, 2, Part::Im),
            target(2, 4, Part::Re),
        ];
        let settings: Vec<Setting> = targets
            .iter()
            .map(|m| setting_for_element(&cat, m, 2).unwrap())
            .collect();
        let before: Vec<Vec<f64>> = settings
            .iter()
            .map(|s| {
                targets
                    .iter()
                    .map(|m| overlap(&cat, s, m).unwrap())
                    .collect()
            })
            .collect();
        cat.permute_eigensystem(2, &[2, 0, 1]);
        cat.permute_eigensystem(5, &[1, 2, 0]);
        cat.permute_eigensystem(1, &[1, 0, 2]);
        let after: Vec<Vec<f64>> = settings
            .iter()
            .map(|s| {
                targets
                    .iter()
                    .map(|m| overlap(&cat, s, m).unwrap())
                    .collect()
            })
            .collect();
        for (rb, ra) in before.iter().zip(&after) {
            for (&b, &a) in rb.iter().zip(ra) {
                assert_abs_diff_eq!(b, a, epsilon = 1e-12);
            }
        }
    }

    /// Targets of the worked 2-qutrit state |Psi> at t = 0.05.
    fn psi_targets() -> Vec<TargetElement> {
        let diag = DiagonalMeasurement::exact(
            3,
            2,
            vec![
                0.5,
                0.0,
                1.0 / 3.0,
                0.0,
                1.0 / 12.0,
                1.0 / 12.0,
                0.0,
                0.0,
                0.0,
            ],
        )
        .unwrap();
        select_targets(&diag, 0.05).unwrap()
    }

    #[test]
    fn worked_qutrit_plan_prunes_two_settings() {
        let cat = build_catalog(3, MasChoice::Identity).unwrap();
        let plan =
            plan_for_targets(&cat, 2, psi_targets(), 0.05, ThresholdProvenance::Fixed).unwrap();
        // 12 constructed settings, pruning drops s^(10) and s^(40).
        assert_eq!(plan.off_diagonal_count(), 10);
        let kept: BTreeSet<Vec<ObsIndex>> = plan
            .settings
            .iter()
            .skip(1)
            .map(|e| e.setting.indices().to_vec())
            .collect();
        assert!(!kept.contains(&vec![1, 0]));
        assert!(!kept.contains(&vec![4, 0]));
        // Weights are non-increasing past the diagonal entry.
        for w in plan.settings.windows(2).skip(1) {
            assert!(w[0].weight >= w[1].weight - 1e-15);
        }
        assert!(plan.settings[0].setting.is_diagonal());
    }

    #[test]
    fn worked_qutrit_companion_state_resists_pruning() {
        // |Phi> has support on {0, 2, 3, 5}: six merged settings, none
        // removable.
        let cat = build_catalog(3, MasChoice::Identity).unwrap();
        let diag = DiagonalMeasurement::exact(
            3,
            2,
            vec![
                0.5,
                0.0,
                1.0 / 3.0,
                1.0 / 12.0,
                0.0,
                1.0 / 12.0,
                0.0,
                0.0,
                0.0,
            ],
        )
        .unwrap();
        let targets = select_targets(&diag, 0.05).unwrap();
        assert_eq!(targets.len(), 12);
        let plan = plan_for_targets(&cat, 2, targets, 0.05, ThresholdProvenance::Fixed).unwrap();
        assert_eq!(plan.off_diagonal_count(), 6);
    }

    #[test]
    fn ghz_qubit_plan_is_three_settings() {
        let cat = build_catalog(2, MasChoice::Identity).unwrap();
        for n in 2..=7 {
            let dim = 1usize << n;
            let mut p = vec![0.0; dim];
            p[0] = 0.5;
            p[dim - 1] = 0.5;
            let diag = DiagonalMeasurement::exact(2, n, p).unwrap();
            let targets = select_targets(&diag, 0.1).unwrap();
            let plan = plan_for_targets(&cat, n, targets, 0.1, ThresholdProvenance::Fixed).unwrap();
            assert_eq!(plan.off_diagonal_count(), 2, "N = {n}");
            assert_eq!(plan.settings[1].setting.indices(), vec![1; n].as_slice());
            let mut im = vec![1; n];
            im[0] = 2;
            assert_eq!(plan.settings[2].setting.indices(), im.as_slice());
        }
    }

    #[test]
    fn w_state_plan_has_n_times_n_minus_one_settings() {
        let cat = build_catalog(2, MasChoice::Identity).unwrap();
        for n in 3..=6 {
            let dim = 1usize << n;
            let mut p = vec![0.0; dim];
            for r in 0..n {
                p[1 << (n - 1 - r)] = 1.0 / n as f64;
            }
            let diag = DiagonalMeasurement::exact(2, n, p).unwrap();
            let targets = select_targets(&diag, 0.05).unwrap();
            let plan =
                plan_for_targets(&cat, n, targets, 0.05, ThresholdProvenance::Fixed).unwrap();
            assert_eq!(plan.off_diagonal_count(), n * (n - 1), "N = {n}");
        }
    }

    #[test]
    fn qutrit_ghz_plan_has_d_times_d_minus_one_settings() {
        let cat = build_catalog(3, MasChoice::Identity).unwrap();
        let mut p = vec![0.0; 9];
        for idx in [0, 4, 8] {
            p[idx] = 1.0 / 3.0;
        }
        let diag = DiagonalMeasurement::exact(3, 2, p).unwrap();
        let targets = select_targets(&diag, 0.1).unwrap();
        let plan = plan_for_targets(&cat, 2, targets, 0.1, ThresholdProvenance::Fixed).unwrap();
        assert_eq!(plan.off_diagonal_count(), 6);
    }

    #[test]
    fn full_qst_plan_respects_bound() {
        for (d, n) in [(2usize, 2usize), (3, 1)] {
            let cat = build_catalog(d, MasChoice::Identity).unwrap();
            let plan = full_qst_plan(&cat, n).unwrap();
            let bound = 2 * (d * (d - 1) / 2 + 1).pow(n as u32);
            assert!(plan.off_diagonal_count() <= bound, "d={d} N={n}");
        }
        let cat = build_catalog(2, MasChoice::Identity).unwrap();
        let plan = full_qst_plan(&cat, 1).unwrap();
        // Single qubit: settings drawn from sigma_x, sigma_y (plus diagonal).
        for entry in plan.settings.iter().skip(1) {
            assert!(entry.setting.indices()[0] <= 2);
        }
        assert!(full_qst_plan(&cat, 13).is_err());
    }

    #[test]
    fn classic_pauli_plan_covers_two_qubit_full_tomography() {
        // The 9 settings {x,y,z}x{x,y,z} reach beta on every target the
        // zero-threshold plan generates.
        let cat = build_catalog(2, MasChoice::Identity).unwrap();
        let plan = full_qst_plan(&cat, 2).unwrap();
        assert!(plan.settings.len() <= 9);
        let mut pauli = Vec::new();
        for a in [0u16, 1, 2] {
            for b in [0u16, 1, 2] {
                pauli.push(Setting::new(vec![a, b]));
            }
        }
        let classic = OverlapMatrix::build(&cat, pauli, plan.targets.clone()).unwrap();
        let ect = OverlapMatrix::build(&cat, plan.setting_list(), plan.targets.clone()).unwrap();
        for m in 0..plan.targets.len() {
            let covered: f64 = classic.c.iter().map(|row| row[m]).sum();
            assert!(covered + 1e-9 >= ect.beta[m], "target {m}");
        }
    }

    #[test]
    fn pruning_is_deterministic() {
        let cat = build_catalog(3, MasChoice::Identity).unwrap();
        let a = plan_for_targets(&cat, 2, psi_targets(), 0.05, ThresholdProvenance::Fixed).unwrap();
        let b = plan_for_targets(&cat, 2, psi_targets(), 0.05, ThresholdProvenance::Fixed).unwrap();
        let ka: Vec<_> = a.settings.iter().map(|e| e.setting.clone()).collect();
        let kb: Vec<_> = b.settings.iter().map(|e| e.setting.clone()).collect();
        assert_eq!(ka, kb);
    }

    #[test]
    fn equal_bounds_order_by_row_sums() {
        // With all bounds equal the weight is proportional to the row sum
        // of C, so denser settings lead the plan.
        let cat = build_catalog(2, MasChoice::Identity).unwrap();
        let targets: Vec<TargetElement> = vec![
            target(0, 3, Part::Re),
            target(0, 3, Part::Im),
            target(1, 2, Part::Re),
            target(1, 2, Part::Im),
        ];
        let plan = plan_for_targets(&cat, 2, targets, 0.0, ThresholdProvenance::Fixed).unwrap();
        let sums: Vec<f64> = plan
            .settings
            .iter()
            .skip(1)
            .map(|e| {
                plan.targets
                    .iter()
                    .map(|m| overlap(&cat, &e.setting, m).unwrap())
                    .sum()
            })
            .collect();
        for w in sums.windows(2) {
            assert!(w[0] >= w[1] - 1e-12);
        }
    }

    #[test]
    fn single_target_plan_leads_with_its_setting() {
        let cat = build_catalog(2, MasChoice::Identity).unwrap();
        let targets = vec![target(0, 3, Part::Re)];
        let plan = plan_for_targets(&cat, 2, targets, 0.0, ThresholdProvenance::Fixed).unwrap();
        assert_eq!(plan.off_diagonal_count(), 1);
        assert_eq!(plan.settings[1].setting.indices(), &[1, 1]);
        assert_eq!(plan.settings[1].informs, vec![0]);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn own_setting_overlap_is_positive(
            i in 0usize..8,
            j in 0usize..8,
            im in proptest::bool::ANY,
        ) {
            prop_assume!(i < j);
            let cat = build_catalog(2, MasChoice::Identity).unwrap();
            let part = if im { Part::Im } else { Part::Re };
            let m = target(i, j, part);
            let s = setting_for_element(&cat, &m, 3).unwrap();
            let c = overlap(&cat, &s, &m).unwrap();
            prop_assert!(c > 0.0);
        }

        #[test]
        fn pruned_plan_covers_every_target(
            counts in proptest::collection::vec(1u32..50, 9),
        ) {
            let total: u32 = counts.iter().sum();
            let counts: Vec<f64> = counts.iter().map(|&c| c as f64).collect();
            let diag = DiagonalMeasurement::new(3, 2, counts, total as f64).unwrap();
            let targets = select_targets(&diag, 0.02).unwrap();
            prop_assume!(!targets.is_empty());
            let cat = build_catalog(3, MasChoice::Identity).unwrap();
            let plan = plan_for_targets(&cat, 2, targets, 0.02, ThresholdProvenance::Fixed)
                .unwrap();
            let om = OverlapMatrix::build(&cat, plan.setting_list(), plan.targets.clone())
                .unwrap();
            // |S'| <= |S| <= 2E + 1 including the diagonal.
            prop_assert!(plan.settings.len() <= plan.targets.len() + 1);
            for m in 0..plan.targets.len() {
                let covered: f64 = om.c.iter().map(|row| row[m]).sum();
                prop_assert!(covered >= om.beta[m] - 1e-9);
            }
        }
    }
}
