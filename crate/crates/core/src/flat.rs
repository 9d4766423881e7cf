//! Flatness, one-step flat extensions, the end-to-end solver and the
//! nested-truncation (frame) diagnostic.
//!
//! The solver runs the positivity tests in a fixed order (moment matrix,
//! localizing matrices, recursive consistency) and only then looks for a
//! representing measure:
//!
//! 1. if the moment matrix is already flat over its shiftable rows, extract
//!    directly;
//! 2. otherwise extend along borders with the minimum-norm Smul'jan choice;
//! 3. if that fails, or the atoms land outside `K`, and `K` sits in a known
//!    box, fit an atomic measure on a grid and extract from its flat closure.

use std::collections::BTreeMap;
use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::cubature::{constraint_box, fit_atomic, CubatureOptions};
use crate::dominating::dominate_space;
use crate::error::{Error, Result};
use crate::extraction::{
    build_multiplication_system, extract_atoms, verify_representation, ExtractOptions,
    DEFAULT_COMMUTE_TOL, DEFAULT_POINT_TOL, DEFAULT_WEIGHT_FLOOR, DEFAULT_WEIGHT_TOL,
};
use crate::linalg::{lstsq, sym_eigen, sym_norm, sym_pinv};
use crate::matrix::{
    localizing_matrix_ordered, moment_matrix_ordered, psd_rank, recursive_consistency, ConsistencyReport,
    ConsistencyViolation, Constraint, MomentMatrix, PsdReport, DEFAULT_CONSISTENCY_TOL, DEFAULT_PSD_TOL,
    DEFAULT_RANK_TOL,
};
use crate::moments::{moments_of_atomic, AtomicMeasure, MomentSequence};
use crate::poly::{indices_of_degree, MonomialSet, MultiIndex, Polynomial};

pub const DEFAULT_DEPTH: usize = 2;
pub const DEFAULT_RESIDUAL_TOL: f64 = 1e-8;
pub const DEFAULT_STRUCTURE_TOL: f64 = 1e-6;

/// Growth steps allowed when closing a grid-fitted measure to a flat matrix.
const MAX_CLOSURE_STEPS: usize = 8;

pub const GENERATION_NOTE: &str = "whether the extension space generates the whole algebra cannot be \
decided from finite data; representability is certified for the given moments only";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveOptions {
    pub psd_tol: f64,
    pub rank_tol: f64,
    pub consistency_tol: f64,
    /// Range-condition residual and structure-projection drift, relative to
    /// `max(1, |M|)`.
    pub structure_tol: f64,
    pub depth: usize,
    pub seed: u64,
    /// Normalize to total mass 1 before solving; weights are scaled back.
    pub probability: bool,
    pub residual_tol: f64,
    pub point_tol: f64,
    pub commute_tol: f64,
    pub weight_floor: f64,
    pub weight_tol: f64,
    /// Search box for the grid fallback; read from the constraints when
    /// absent.
    pub search_box: Option<Vec<(f64, f64)>>,
    pub cubature: CubatureOptions,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            psd_tol: DEFAULT_PSD_TOL,
            rank_tol: DEFAULT_RANK_TOL,
            consistency_tol: DEFAULT_CONSISTENCY_TOL,
            structure_tol: DEFAULT_STRUCTURE_TOL,
            depth: DEFAULT_DEPTH,
            seed: 0,
            probability: false,
            residual_tol: DEFAULT_RESIDUAL_TOL,
            point_tol: DEFAULT_POINT_TOL,
            commute_tol: DEFAULT_COMMUTE_TOL,
            weight_floor: DEFAULT_WEIGHT_FLOOR,
            weight_tol: DEFAULT_WEIGHT_TOL,
            search_box: None,
            cubature: CubatureOptions::default(),
        }
    }
}

impl SolveOptions {
    pub fn extract_options(&self) -> ExtractOptions {
        ExtractOptions {
            seed: self.seed,
            commute_tol: self.commute_tol,
            weight_floor: self.weight_floor,
            weight_tol: self.weight_tol,
        }
    }
}

/// Rank equality of nested moment matrices.
pub fn is_flat(small: &MomentMatrix, big: &MomentMatrix, rank_tol: f64) -> Result<bool> {
    let k = small.dim();
    if k > big.dim() || small.basis() != &big.basis()[..k] {
        return Err(Error::BasisNesting(format!(
            "{:?}",
            small.basis().iter().map(|a| a.to_string()).collect::<Vec<_>>()
        )));
    }
    let r_small = psd_rank(small, 0.0, rank_tol).rank;
    let r_big = psd_rank(big, 0.0, rank_tol).rank;
    Ok(r_small == r_big)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "stage", rename_all = "snake_case")]
pub enum ExtensionStage {
    /// The starting matrix is not PSD, or not recursively consistent.
    Precondition { reason: String },
    MissingMoments { indices: Vec<MultiIndex> },
    RangeCondition { residual: f64 },
    StructureDrift { index: MultiIndex, drift: f64 },
    NotPsd { min_eigenvalue: f64 },
    Inconsistent { violations: usize },
    FlatnessLost { base_rank: usize, extended_rank: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExtensionFailure {
    pub step: usize,
    pub stage: ExtensionStage,
}

impl fmt::Display for ExtensionFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "extension step {}: ", self.step)?;
        match &self.stage {
            ExtensionStage::Precondition { reason } => write!(f, "precondition fails ({reason})"),
            ExtensionStage::MissingMoments { indices } => write!(
                f,
                "moments unavailable for {}",
                indices.iter().map(|a| a.to_string()).collect::<Vec<_>>().join(", ")
            ),
            ExtensionStage::RangeCondition { residual } => {
                write!(f, "range condition B = MW unsolvable (residual {residual:.3e})")
            }
            ExtensionStage::StructureDrift { index, drift } => {
                write!(f, "structure projection drift {drift:.3e} at index {index}")
            }
            ExtensionStage::NotPsd { min_eigenvalue } => {
                write!(f, "extension not PSD (min eigenvalue {min_eigenvalue:.3e})")
            }
            ExtensionStage::Inconsistent { violations } => {
                write!(f, "extension not recursively consistent ({violations} violations)")
            }
            ExtensionStage::FlatnessLost { base_rank, extended_rank } => {
                write!(f, "flatness lost (rank {base_rank} -> {extended_rank})")
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FlatExtension {
    /// Input moments plus every value introduced by the extension.
    pub extended: MomentSequence,
    pub matrix: MomentMatrix,
    pub rank: usize,
    pub steps: usize,
}

/// [`build_flat_extension_with`] with default tolerances and `tol` as the
/// structure tolerance.
pub fn build_flat_extension(
    gamma: &MomentSequence,
    basis: &MonomialSet,
    depth: usize,
    tol: f64,
) -> std::result::Result<FlatExtension, ExtensionFailure> {
    let opts = SolveOptions {
        structure_tol: tol,
        depth,
        ..SolveOptions::default()
    };
    build_flat_extension_with(gamma, &basis.to_vec(), &opts)
}

/// Up to `opts.depth` border extensions. Each step solves the range
/// condition `K^T B = 0` (K spanning ker M) for the unknown B entries at
/// minimum norm, sets `C = W^T M W` with `W = M^+ B` and projects `C` onto
/// moment structure. Stops at the first flat step.
pub fn build_flat_extension_with(
    gamma: &MomentSequence,
    basis: &[MultiIndex],
    opts: &SolveOptions,
) -> std::result::Result<FlatExtension, ExtensionFailure> {
    let fail = |step, stage| ExtensionFailure { step, stage };
    let m = moment_matrix_ordered(gamma, basis).map_err(|e| fail(0, missing_stage(e)))?;
    let rep = psd_rank(&m, opts.psd_tol, opts.rank_tol);
    if !rep.is_psd {
        let reason = format!("min eigenvalue {:.3e}", rep.min_eigenvalue);
        return Err(fail(0, ExtensionStage::Precondition { reason }));
    }
    let cons = recursive_consistency(&m, gamma, &rep, opts.consistency_tol);
    if !cons.consistent {
        let reason = format!("{} consistency violations", cons.violations.len());
        return Err(fail(0, ExtensionStage::Precondition { reason }));
    }

    let mut values = gamma.clone();
    let mut current = basis.to_vec();
    let mut ranks = (rep.rank, rep.rank);
    for step in 1..=opts.depth {
        let (next, m_ext, base_rank, rank) = extend_once(&values, &current, opts).map_err(|s| fail(step, s))?;
        if rank == base_rank {
            return Ok(FlatExtension {
                extended: next,
                rank,
                matrix: m_ext,
                steps: step,
            });
        }
        ranks = (base_rank, rank);
        values = next;
        current = m_ext.basis().to_vec();
    }
    Err(fail(
        opts.depth,
        ExtensionStage::FlatnessLost {
            base_rank: ranks.0,
            extended_rank: ranks.1,
        },
    ))
}

fn missing_stage(e: Error) -> ExtensionStage {
    match e {
        Error::MissingMoments(indices) => ExtensionStage::MissingMoments { indices },
        Error::MissingMoment(a) => ExtensionStage::MissingMoments { indices: vec![a] },
        other => ExtensionStage::Precondition {
            reason: other.to_string(),
        },
    }
}

fn extend_once(
    values: &MomentSequence,
    basis: &[MultiIndex],
    opts: &SolveOptions,
) -> std::result::Result<(MomentSequence, MomentMatrix, usize, usize), ExtensionStage> {
    let nvars = values.nvars();
    let m = moment_matrix_ordered(values, basis).map_err(missing_stage)?;
    let (eigvals, eigvecs) = sym_eigen(m.entries());
    let norm = sym_norm(&eigvals);
    let scale = norm.max(1.0);
    let cut = opts.rank_tol * norm;
    let base_rank = eigvals.iter().filter(|v| v.abs() > cut).count();
    let set = MonomialSet::new(nvars, basis.iter().cloned()).map_err(missing_stage)?;
    let border = set.border().to_vec();

    // unknown entries of the B block, one per moment index
    let mut unknown: BTreeMap<MultiIndex, usize> = BTreeMap::new();
    for a in basis {
        for b in &border {
            let idx = a.add(b);
            if !values.contains(&idx) && !unknown.contains_key(&idx) {
                let k = unknown.len();
                unknown.insert(idx, k);
            }
        }
    }

    // range condition: every kernel vector of M annihilates every B column
    let kernel: Vec<usize> = (0..eigvals.len()).filter(|&j| eigvals[j].abs() <= cut).collect();
    let nrows = kernel.len() * border.len();
    let mut a_mat = DMatrix::zeros(nrows, unknown.len());
    let mut rhs = DVector::zeros(nrows);
    for (kk, &j) in kernel.iter().enumerate() {
        for (bi, b) in border.iter().enumerate() {
            let row = kk * border.len() + bi;
            for (i, a) in basis.iter().enumerate() {
                let coef = eigvecs[(i, j)];
                let idx = a.add(b);
                match values.get(&idx) {
                    Some(v) => rhs[row] -= coef * v,
                    None => a_mat[(row, unknown[&idx])] += coef,
                }
            }
        }
    }
    let u = lstsq(&a_mat, &rhs, 1e-12);
    if nrows > 0 {
        let residual = (&a_mat * &u - &rhs).amax();
        if residual > opts.structure_tol * scale {
            return Err(ExtensionStage::RangeCondition { residual });
        }
    }
    let with_b = values.extended_with(unknown.iter().map(|(idx, &k)| (idx.clone(), u[k])));

    let b_mat = DMatrix::from_fn(basis.len(), border.len(), |i, j| {
        with_b.get(&basis[i].add(&border[j])).expect("B block filled")
    });
    let w = sym_pinv(m.entries(), opts.rank_tol) * &b_mat;
    let c = w.transpose() * m.entries() * &w;

    // structure projection: known indices pin their entries, fresh ones take the mean
    let mut groups: BTreeMap<MultiIndex, Vec<f64>> = BTreeMap::new();
    for p in 0..border.len() {
        for q in p..border.len() {
            groups.entry(border[p].add(&border[q])).or_default().push(c[(p, q)]);
        }
    }
    let mut fresh = Vec::new();
    for (idx, entries) in groups {
        let target = match with_b.get(&idx) {
            Some(v) => v,
            None => entries.iter().sum::<f64>() / entries.len() as f64,
        };
        let drift = entries.iter().fold(0.0f64, |d, e| d.max((e - target).abs())) / scale;
        if drift > opts.structure_tol {
            return Err(ExtensionStage::StructureDrift { index: idx, drift });
        }
        if !with_b.contains(&idx) {
            fresh.push((idx, target));
        }
    }
    let extended = with_b.extended_with(fresh);

    let ext_basis: Vec<MultiIndex> = basis.iter().chain(&border).cloned().collect();
    let m_ext = moment_matrix_ordered(&extended, &ext_basis).map_err(missing_stage)?;
    let rep = psd_rank(&m_ext, opts.psd_tol, opts.rank_tol);
    if !rep.is_psd {
        return Err(ExtensionStage::NotPsd {
            min_eigenvalue: rep.min_eigenvalue,
        });
    }
    let cons = recursive_consistency(&m_ext, &extended, &rep, opts.consistency_tol);
    if !cons.consistent {
        return Err(ExtensionStage::Inconsistent {
            violations: cons.violations.len(),
        });
    }
    Ok((extended, m_ext, base_rank, rep.rank))
}

/// Largest downward-closed basis `D` (grown in graded order) with
/// `D + D` inside `support`.
pub fn moment_basis(support: &MonomialSet) -> Vec<MultiIndex> {
    grow_basis(support, &[], None)
}

/// Largest downward-closed subset `D_g` of `within` whose localizing matrix
/// for `g` only needs moments in `support`.
pub fn localizing_basis(support: &MonomialSet, g: &Polynomial, within: &[MultiIndex]) -> Vec<MultiIndex> {
    let shifts: Vec<MultiIndex> = g.terms().map(|(a, _)| a.clone()).collect();
    grow_basis(support, &shifts, Some(within))
}

fn grow_basis(support: &MonomialSet, shifts: &[MultiIndex], within: Option<&[MultiIndex]>) -> Vec<MultiIndex> {
    let nvars = support.nvars();
    let zero = [MultiIndex::zero(nvars)];
    let shifts = if shifts.is_empty() { &zero[..] } else { shifts };
    let fits = |a: &MultiIndex, b: &MultiIndex| shifts.iter().all(|d| support.contains(&a.add(b).add(d)));
    let max_degree = support.max_degree().unwrap_or(0);
    let mut chosen: Vec<MultiIndex> = Vec::new();
    for deg in 0..=max_degree / 2 {
        for a in indices_of_degree(nvars, deg) {
            if within.is_some_and(|w| !w.contains(&a)) {
                continue;
            }
            let closed = (0..nvars).all(|i| a.unshift(i).is_none_or(|p| chosen.contains(&p)));
            if closed && fits(&a, &a) && chosen.iter().all(|b| fits(&a, b)) {
                chosen.push(a);
            }
        }
    }
    chosen
}

fn shiftable_positions(basis: &[MultiIndex]) -> Vec<usize> {
    (0..basis.len())
        .filter(|&j| {
            let a = &basis[j];
            (0..a.nvars()).all(|i| basis.contains(&a.shift(i)))
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Representable,
    PsdFailure,
    LocalizingFailure,
    ConsistencyFailure,
    DepthExhausted,
}

impl Verdict {
    pub fn is_success(self) -> bool {
        self == Verdict::Representable
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Verdict::Representable => "representable",
            Verdict::PsdFailure => "psd_failure",
            Verdict::LocalizingFailure => "localizing_failure",
            Verdict::ConsistencyFailure => "consistency_failure",
            Verdict::DepthExhausted => "depth_exhausted",
        };
        f.write_str(s)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Witness {
    None,
    /// `Lambda(p^2) < 0` (or `Lambda(g p^2) < 0`) for `p = sum_i v_i x^basis_i`.
    NegativeEigenvalue {
        matrix: String,
        basis: Vec<MultiIndex>,
        min_eigenvalue: f64,
        eigenvector: Vec<f64>,
    },
    Inconsistency {
        violations: Vec<ConsistencyViolation>,
    },
    Exhausted {
        depth: usize,
        attempts: Vec<String>,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Route {
    /// The data matrix was flat already.
    Flat,
    FlatExtension { steps: usize },
    /// Grid fit on the bounding box, then flat closure of the fitted measure.
    GridFit { points_per_axis: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalizingCheck {
    pub constraint: String,
    pub basis: Vec<MultiIndex>,
    /// `None` when no basis element fits the available moments.
    pub report: Option<PsdReport>,
    /// Elements of the moment basis left out for lack of moments.
    pub untested: Vec<MultiIndex>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub basis: Vec<MultiIndex>,
    pub moment: PsdReport,
    pub localizing: Vec<LocalizingCheck>,
    pub consistency: ConsistencyReport,
    pub warnings: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveCertificate {
    pub verdict: Verdict,
    pub measure: Option<AtomicMeasure>,
    pub witness: Witness,
    pub extended_moments: Option<MomentSequence>,
    /// Worst relative moment mismatch of `measure` on the input set.
    pub residual: Option<f64>,
    pub route: Option<Route>,
    pub check: CheckReport,
    /// The dominating polynomial whose space the extension lives in.
    pub dominating: Option<Polynomial>,
    pub limitations: Vec<String>,
    pub warnings: Vec<String>,
}

/// Positivity, localizing and consistency diagnostics without any extension
/// search. Returns the first failing verdict with its witness, if any.
pub fn check_tmp(
    gamma: &MomentSequence,
    set: &MonomialSet,
    constraints: &[Constraint],
    opts: &SolveOptions,
) -> Result<(CheckReport, Option<(Verdict, Witness)>)> {
    let nvars = gamma.nvars();
    if set.nvars() != nvars {
        return Err(Error::DimensionMismatch {
            expected: nvars,
            got: set.nvars(),
        });
    }
    if let Some(c) = constraints.iter().find(|c| c.g.nvars() != nvars) {
        return Err(Error::DimensionMismatch {
            expected: nvars,
            got: c.g.nvars(),
        });
    }
    if set.is_empty() {
        return Err(Error::EmptyBasis);
    }
    let data = gamma.restrict(set)?;
    let mut warnings = Vec::new();
    if !set.is_connected() {
        warnings.push("index set is not connected".to_string());
    }
    let basis = moment_basis(set);
    let m = moment_matrix_ordered(&data, &basis)?;
    let moment = psd_rank(&m, opts.psd_tol, opts.rank_tol);
    let mut failure = None;
    if !moment.is_psd {
        failure = Some((Verdict::PsdFailure, eigen_witness("M", &m)));
    }

    let mut localizing = Vec::new();
    for c in constraints {
        let lb = localizing_basis(set, &c.g, &basis);
        let untested: Vec<MultiIndex> = basis.iter().filter(|a| !lb.contains(a)).cloned().collect();
        let report = if lb.is_empty() {
            None
        } else {
            let l = localizing_matrix_ordered(&data, c, &lb)?;
            let r = psd_rank(&l, opts.psd_tol, opts.rank_tol);
            if !r.is_psd && failure.is_none() {
                failure = Some((Verdict::LocalizingFailure, eigen_witness(&c.name, &l)));
            }
            Some(r)
        };
        localizing.push(LocalizingCheck {
            constraint: c.name.clone(),
            basis: lb,
            report,
            untested,
        });
    }

    let consistency = recursive_consistency(&m, &data, &moment, opts.consistency_tol);
    if !consistency.consistent && failure.is_none() {
        failure = Some((
            Verdict::ConsistencyFailure,
            Witness::Inconsistency {
                violations: consistency.violations.clone(),
            },
        ));
    }
    Ok((
        CheckReport {
            basis,
            moment,
            localizing,
            consistency,
            warnings,
        },
        failure,
    ))
}

fn eigen_witness(name: &str, m: &MomentMatrix) -> Witness {
    let (vals, vecs) = sym_eigen(m.entries());
    Witness::NegativeEigenvalue {
        matrix: name.to_string(),
        basis: m.basis().to_vec(),
        min_eigenvalue: vals[0],
        eigenvector: vecs.column(0).iter().copied().collect(),
    }
}

/// Full pipeline: checks, then flat extraction, extension or grid fit, then
/// residual verification on `set`.
pub fn solve_tmp(
    gamma: &MomentSequence,
    set: &MonomialSet,
    constraints: &[Constraint],
    opts: &SolveOptions,
) -> Result<SolveCertificate> {
    let nvars = gamma.nvars();
    let (check, failure) = check_tmp(gamma, set, constraints, opts)?;
    let dominating = match set.max_degree() {
        Some(k) if k > 0 => Some(dominate_space(k, nvars)?),
        _ => None,
    };
    let mut cert = SolveCertificate {
        verdict: Verdict::DepthExhausted,
        measure: None,
        witness: Witness::None,
        extended_moments: None,
        residual: None,
        route: None,
        warnings: check.warnings.clone(),
        check,
        dominating,
        limitations: vec![GENERATION_NOTE.to_string()],
    };
    if let Some((verdict, witness)) = failure {
        cert.verdict = verdict;
        cert.witness = witness;
        return Ok(cert);
    }

    let raw = gamma.restrict(set)?;
    let mass = raw.mass();
    let data = if opts.probability {
        cert.warnings.push(format!("moments divided by total mass {mass}"));
        raw.scaled(1.0 / mass)?
    } else {
        raw
    };
    let basis = cert.check.basis.clone();
    let eopts = opts.extract_options();
    let mut attempts: Vec<String> = Vec::new();

    let accept = |mu: &AtomicMeasure| -> std::result::Result<f64, String> {
        let v = verify_representation(&data, mu, set, opts.residual_tol);
        if !v.ok {
            return Err(format!("moment residual {:.3e} exceeds tolerance", v.max_residual));
        }
        for x in mu.atoms() {
            if let Some(c) = constraints.iter().find(|c| !c.holds_at(x, opts.point_tol)) {
                return Err(format!("atom {x:?} violates {}", c.name));
            }
        }
        Ok(v.max_residual)
    };

    let mut found: Option<(AtomicMeasure, f64, Route, Option<MomentSequence>)> = None;

    // 1. already flat
    let m = moment_matrix_ordered(&data, &basis)?;
    let shiftable = shiftable_positions(&basis);
    let rank = cert.check.moment.rank;
    let shift_rank = psd_rank(&m.principal(&shiftable), opts.psd_tol, opts.rank_tol).rank;
    if rank > 0 && shift_rank == rank {
        match extract_from(&m, &data, opts, &eopts).and_then(|mu| accept(&mu).map(|r| (mu, r))) {
            Ok((mu, r)) => found = Some((mu, r, Route::Flat, None)),
            Err(e) => attempts.push(format!("flat data: {e}")),
        }
    } else {
        attempts.push(format!("data matrix not flat (rank {rank}, shiftable rank {shift_rank})"));
    }

    // 2. border extensions
    if found.is_none() && !(rank > 0 && shift_rank == rank) {
        match build_flat_extension_with(&data, &basis, opts) {
            Ok(ext) => {
                let steps = ext.steps;
                match extract_from(&ext.matrix, &ext.extended, opts, &eopts)
                    .and_then(|mu| accept(&mu).map(|r| (mu, r)))
                {
                    Ok((mu, r)) => found = Some((mu, r, Route::FlatExtension { steps }, Some(ext.extended))),
                    Err(e) => attempts.push(format!("flat extension after {steps} step(s): {e}")),
                }
            }
            Err(f) => attempts.push(f.to_string()),
        }
    }

    // 3. grid fit on a bounding box
    if found.is_none() {
        let bounds = opts.search_box.clone().or_else(|| constraint_box(constraints, nvars));
        match bounds {
            None => attempts.push("no bounding box for a grid search".to_string()),
            Some(bounds) => {
                let steps = opts
                    .cubature
                    .points_per_axis
                    .unwrap_or_else(|| crate::cubature::default_points_per_axis(nvars));
                let fitted = fit_atomic(&data, constraints, &bounds, opts.residual_tol * 1e-2, &opts.cubature)
                    .map_err(|e| e.to_string())
                    .and_then(|mu| flat_closure(&mu, &data, &basis, opts).map_err(|e| e.to_string()))
                    .and_then(|(ext, m_ext)| {
                        let mu = extract_from(&m_ext, &ext, opts, &eopts)?;
                        accept(&mu).map(|r| (mu, r, ext))
                    });
                match fitted {
                    Ok((mu, r, ext)) => {
                        found = Some((
                            mu,
                            r,
                            Route::GridFit {
                                points_per_axis: steps,
                            },
                            Some(ext),
                        ))
                    }
                    Err(e) => attempts.push(format!("grid search: {e}")),
                }
            }
        }
    }

    match found {
        Some((mu, r, route, ext)) => {
            assert!(
                mu.len() <= set.len(),
                "{} atoms for {} moments",
                mu.len(),
                set.len()
            );
            let mu = if opts.probability { mu.scaled(mass) } else { mu };
            let ext = match (ext, opts.probability) {
                (Some(e), true) => Some(e.scaled(mass)?),
                (e, _) => e,
            };
            cert.verdict = Verdict::Representable;
            cert.measure = Some(mu);
            cert.residual = Some(r);
            cert.route = Some(route);
            cert.extended_moments = ext;
        }
        None => {
            cert.witness = Witness::Exhausted {
                depth: opts.depth,
                attempts,
            };
        }
    }
    Ok(cert)
}

fn extract_from(
    m: &MomentMatrix,
    seq: &MomentSequence,
    opts: &SolveOptions,
    eopts: &ExtractOptions,
) -> std::result::Result<AtomicMeasure, String> {
    let sys = build_multiplication_system(m, opts.rank_tol).map_err(|e| e.to_string())?;
    extract_atoms(&sys, seq, eopts).map_err(|e| e.to_string())
}

/// Grows the basis along borders until the moment matrix of `data`,
/// completed with the moments of `mu`, is flat over its shiftable rows.
fn flat_closure(
    mu: &AtomicMeasure,
    data: &MomentSequence,
    basis: &[MultiIndex],
    opts: &SolveOptions,
) -> Result<(MomentSequence, MomentMatrix)> {
    let nvars = data.nvars();
    let mut current = MonomialSet::new(nvars, basis.iter().cloned())?;
    for _ in 0..MAX_CLOSURE_STEPS {
        let sums = current.sums();
        let extra = moments_of_atomic(mu, &sums)?;
        let seq = data.extended_with(extra.iter().map(|(a, v)| (a.clone(), v)));
        let m = moment_matrix_ordered(&seq, &current.to_vec())?;
        if build_multiplication_system(&m, opts.rank_tol).is_ok() {
            return Ok((seq, m));
        }
        current = current.union(&current.border());
    }
    Err(Error::Flatness("fitted measure did not close to a flat matrix".into()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameLevel {
    pub max_degree: u32,
    pub size: usize,
    pub verdict: Verdict,
    pub atoms: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameReport {
    pub levels: Vec<FrameLevel>,
    pub masses: Vec<f64>,
    /// Largest disagreement between recovered measures of consecutive
    /// solvable levels on the smaller level's indices.
    pub shared_moment_max_discrepancy: f64,
    pub all_solvable: bool,
    pub certificates: Vec<SolveCertificate>,
}

/// Solves each truncation on its own support and compares the recovered
/// measures on shared indices.
pub fn frame_consistency(
    gammas: &[MomentSequence],
    constraints: &[Constraint],
    opts: &SolveOptions,
) -> Result<FrameReport> {
    if gammas.is_empty() {
        return Err(Error::Invalid("frame needs at least one level".into()));
    }
    let mut levels = Vec::new();
    let mut masses = Vec::new();
    let mut certificates = Vec::new();
    for (i, g) in gammas.iter().enumerate() {
        let support = g.support();
        if i > 0 && !gammas[i - 1].support().iter().all(|a| support.contains(a)) {
            return Err(Error::BasisNesting(format!("level {}", i - 1)));
        }
        let cert = solve_tmp(g, &support, constraints, opts)?;
        levels.push(FrameLevel {
            max_degree: support.max_degree().unwrap_or(0),
            size: support.len(),
            verdict: cert.verdict,
            atoms: cert.measure.as_ref().map(|m| m.len()),
        });
        masses.push(g.mass());
        certificates.push(cert);
    }
    let mut discrepancy = 0.0f64;
    for i in 0..gammas.len() - 1 {
        let (Some(a), Some(b)) = (&certificates[i].measure, &certificates[i + 1].measure) else {
            continue;
        };
        for idx in &gammas[i].support() {
            discrepancy = discrepancy.max((a.moment(idx) - b.moment(idx)).abs());
        }
    }
    Ok(FrameReport {
        all_solvable: levels.iter().all(|l| l.verdict.is_success()),
        levels,
        masses,
        shared_moment_max_discrepancy: discrepancy,
        certificates,
    })
}
