//! Subnormal completion for 2-variable weighted shifts.
//!
//! Weights `alpha_k` (first direction) and `beta_k` (second direction) on
//! `k in N^2` give moments along the staircase path
//! `(0,0) -> (k1,0) -> (k1,k2)`:
//!
//! `gamma_k = alpha_(0,0)^2 ... alpha_(k1-1,0)^2 * beta_(k1,0)^2 ... beta_(k1,k2-1)^2`.
//!
//! A completion exists when these moments come from a measure on the
//! rectangle `[0, a1] x [0, a2]`; the completed weights are then read back
//! from the measure.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flat::{solve_tmp, SolveCertificate, SolveOptions};
use crate::matrix::{localizing_matrix, moment_matrix, psd_rank, Constraint};
use crate::moments::{moments_of_atomic, MomentSequence};
use crate::poly::{MonomialSet, MultiIndex, Polynomial};

pub const DEFAULT_COMM_TOL: f64 = 1e-9;
/// Agreement required between completed and input weights.
pub const DEFAULT_EXTEND_TOL: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Alpha,
    Beta,
}

impl Direction {
    fn name(self) -> &'static str {
        match self {
            Direction::Alpha => "alpha",
            Direction::Beta => "beta",
        }
    }
}

/// Closed-form continuation of a row (alpha) or column (beta) past its last
/// given weight.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Tail {
    /// Repeat the last weight.
    Constant,
    /// Close the gap to 1 geometrically: `1 - w_{j+1}^2 = ratio (1 - w_j^2)`,
    /// `ratio` in `(0, 1]`. A whole line `w_j^2 = 1 - c q^j` is subnormal:
    /// its moments `(c; q)_k` belong to a measure on `{q^j}`.
    Geometric { ratio: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailSpec {
    pub direction: Direction,
    /// `k2` of an alpha row, `k1` of a beta column.
    pub line: u32,
    pub tail: Tail,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightRecord {
    pub direction: Direction,
    pub k1: u32,
    pub k2: u32,
    pub weight: f64,
}

/// Weights of a 2-variable weighted shift, all in `(0, 1]`. Stored squared,
/// since only squares enter the moments.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct WeightFamily {
    alpha: BTreeMap<(u32, u32), f64>,
    beta: BTreeMap<(u32, u32), f64>,
    tails: Vec<TailSpec>,
}

impl WeightFamily {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_records(records: &[WeightRecord]) -> Result<Self> {
        let mut w = Self::new();
        for r in records {
            w.insert(r.direction, r.k1, r.k2, r.weight)?;
        }
        Ok(w)
    }

    /// Unit weights on every `|k| < kmax`.
    pub fn all_ones(kmax: u32) -> Self {
        let mut w = Self::new();
        for k1 in 0..kmax {
            for k2 in 0..kmax - k1 {
                w.alpha.insert((k1, k2), 1.0);
                w.beta.insert((k1, k2), 1.0);
            }
        }
        w
    }

    pub fn insert(&mut self, direction: Direction, k1: u32, k2: u32, weight: f64) -> Result<()> {
        check_unit(direction, k1, k2, weight)?;
        self.map_mut(direction).insert((k1, k2), weight * weight);
        Ok(())
    }

    /// Inserts `weight^2` directly, e.g. the symbols of a moment formula.
    pub fn insert_squared(&mut self, direction: Direction, k1: u32, k2: u32, squared: f64) -> Result<()> {
        check_unit(direction, k1, k2, squared)?;
        self.map_mut(direction).insert((k1, k2), squared);
        Ok(())
    }

    pub fn add_tail(&mut self, spec: TailSpec) -> Result<()> {
        if let Tail::Geometric { ratio } = spec.tail {
            if !(ratio > 0.0 && ratio <= 1.0) {
                return Err(Error::InvalidWeights(format!("geometric ratio {ratio} outside (0, 1]")));
            }
        }
        if self.line(spec.direction, spec.line).is_empty() {
            return Err(Error::InvalidWeights(format!(
                "tail on empty {} line {}",
                spec.direction.name(),
                spec.line
            )));
        }
        self.tails.push(spec);
        Ok(())
    }

    pub fn get(&self, direction: Direction, k1: u32, k2: u32) -> Option<f64> {
        self.squared(direction, k1, k2).map(f64::sqrt)
    }

    pub fn squared(&self, direction: Direction, k1: u32, k2: u32) -> Option<f64> {
        self.map(direction).get(&(k1, k2)).copied()
    }

    pub fn alpha(&self, k1: u32, k2: u32) -> Option<f64> {
        self.get(Direction::Alpha, k1, k2)
    }

    pub fn beta(&self, k1: u32, k2: u32) -> Option<f64> {
        self.get(Direction::Beta, k1, k2)
    }

    pub fn tails(&self) -> &[TailSpec] {
        &self.tails
    }

    pub fn is_empty(&self) -> bool {
        self.alpha.is_empty() && self.beta.is_empty()
    }

    pub fn records(&self) -> Vec<WeightRecord> {
        let mut out = Vec::new();
        for d in [Direction::Alpha, Direction::Beta] {
            for (&(k1, k2), &sq) in self.map(d) {
                out.push(WeightRecord {
                    direction: d,
                    k1,
                    k2,
                    weight: sq.sqrt(),
                });
            }
        }
        out
    }

    /// Which indices are populated, e.g. `alpha: 3 weights (|k| <= 1); beta: ...`.
    pub fn extent(&self) -> String {
        let part = |d: Direction| {
            let m = self.map(d);
            let top = m.keys().map(|(a, b)| a + b).max();
            match top {
                None => format!("{}: none", d.name()),
                Some(t) => format!("{}: {} weights (|k| <= {t})", d.name(), m.len()),
            }
        };
        let mut s = format!("{}; {}", part(Direction::Alpha), part(Direction::Beta));
        for t in &self.tails {
            let _ = write!(s, "; {} line {} continues {:?}", t.direction.name(), t.line, t.tail);
        }
        s
    }

    /// Consecutive weights of a line starting at position 0.
    pub fn line(&self, direction: Direction, line: u32) -> Vec<f64> {
        let mut out = Vec::new();
        for j in 0.. {
            let (k1, k2) = match direction {
                Direction::Alpha => (j, line),
                Direction::Beta => (line, j),
            };
            match self.get(direction, k1, k2) {
                Some(v) => out.push(v),
                None => break,
            }
        }
        out
    }

    /// Tails expanded so every tailed line reaches position `kmax - 1`
    /// (counted along the line, `|k| < kmax`).
    pub fn expanded(&self, kmax: u32) -> WeightFamily {
        let mut w = self.clone();
        for t in &self.tails {
            let given = self.line(t.direction, t.line);
            let Some(&last) = given.last() else { continue };
            let mut prev = last * last;
            let end = kmax.saturating_sub(t.line);
            for j in given.len() as u32..end {
                prev = match t.tail {
                    Tail::Constant => prev,
                    Tail::Geometric { ratio } => 1.0 - ratio * (1.0 - prev),
                };
                let (k1, k2) = match t.direction {
                    Direction::Alpha => (j, t.line),
                    Direction::Beta => (t.line, j),
                };
                w.map_mut(t.direction).insert((k1, k2), prev);
            }
        }
        w.tails.clear();
        w
    }

    fn map(&self, d: Direction) -> &BTreeMap<(u32, u32), f64> {
        match d {
            Direction::Alpha => &self.alpha,
            Direction::Beta => &self.beta,
        }
    }

    fn map_mut(&mut self, d: Direction) -> &mut BTreeMap<(u32, u32), f64> {
        match d {
            Direction::Alpha => &mut self.alpha,
            Direction::Beta => &mut self.beta,
        }
    }

    /// Largest squared weight per direction: the surrogate for `|T_i|^2`.
    pub fn norm_bounds(&self) -> (f64, f64) {
        let sup = |m: &BTreeMap<(u32, u32), f64>| m.values().fold(0.0f64, |a, &w| a.max(w));
        (sup(&self.alpha), sup(&self.beta))
    }
}

fn check_unit(direction: Direction, k1: u32, k2: u32, v: f64) -> Result<()> {
    if v > 0.0 && v <= 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidWeights(format!(
            "{} weight at ({k1}, {k2}) is {v}, outside (0, 1]",
            direction.name()
        )))
    }
}

fn index(k1: u32, k2: u32) -> MultiIndex {
    MultiIndex::new(vec![k1, k2])
}

/// `gamma_k` for every `|k| <= kmax` along the canonical staircase path.
/// With no beta weights at all only the `k2 = 0` row is produced.
pub fn moments_from_weights(w: &WeightFamily, kmax: u32) -> Result<MomentSequence> {
    let rows_only = w.beta.is_empty();
    let mut values = BTreeMap::new();
    for k1 in 0..=kmax {
        let mut g = 1.0;
        for j in 0..k1 {
            g *= w.squared(Direction::Alpha, j, 0).ok_or(Error::MissingWeight {
                direction: "alpha",
                k1: j,
                k2: 0,
            })?;
        }
        values.insert(index(k1, 0), g);
        if rows_only {
            continue;
        }
        for k2 in 1..=kmax - k1 {
            g *= w.squared(Direction::Beta, k1, k2 - 1).ok_or(Error::MissingWeight {
                direction: "beta",
                k1,
                k2: k2 - 1,
            })?;
            values.insert(index(k1, k2), g);
        }
    }
    MomentSequence::new(2, values)
}

/// `gamma_k = omega_0^2 ... omega_(k-1)^2` for `k <= kmax`.
pub fn univariate_moments(omega: &[f64], kmax: usize) -> Result<MomentSequence> {
    if kmax > omega.len() {
        return Err(Error::InvalidWeights(format!(
            "{} weights give moments only through degree {}",
            omega.len(),
            omega.len()
        )));
    }
    let mut g = vec![1.0];
    for w in &omega[..kmax] {
        g.push(g.last().unwrap() * w * w);
    }
    MomentSequence::univariate(&g)
}

/// Squared weights read off moments: `alpha_k^2 = gamma_(k+e1)/gamma_k`,
/// `beta_k^2 = gamma_(k+e2)/gamma_k`, for `|k| < kmax` and `gamma_k > floor`.
pub fn weights_from_moments(gamma: &MomentSequence, kmax: u32, floor: f64) -> WeightFamily {
    let mut w = WeightFamily::new();
    for k1 in 0..kmax {
        for k2 in 0..kmax - k1 {
            let Some(g) = gamma.get(&index(k1, k2)).filter(|&g| g > floor) else {
                continue;
            };
            for (d, next) in [(Direction::Alpha, index(k1 + 1, k2)), (Direction::Beta, index(k1, k2 + 1))] {
                if let Some(h) = gamma.get(&next).filter(|&h| h > 0.0) {
                    // roundoff may push a unit weight just past 1
                    let v = h / g;
                    let v = if v > 1.0 && v < 1.0 + 1e-9 { 1.0 } else { v };
                    if v <= 1.0 {
                        w.map_mut(d).insert((k1, k2), v);
                    }
                }
            }
        }
    }
    w
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CommutativityReport {
    pub ok: bool,
    pub violations: Vec<(u32, u32)>,
}

/// `beta_(k+e1) alpha_k = alpha_(k+e2) beta_k` wherever all four exist.
pub fn commutativity_check(w: &WeightFamily, tol: f64) -> CommutativityReport {
    let mut violations = Vec::new();
    for &(k1, k2) in w.alpha.keys() {
        let (Some(a), Some(b_right), Some(a_up), Some(b)) =
            (w.alpha(k1, k2), w.beta(k1 + 1, k2), w.alpha(k1, k2 + 1), w.beta(k1, k2))
        else {
            continue;
        };
        if (b_right * a - a_up * b).abs() > tol {
            violations.push((k1, k2));
        }
    }
    CommutativityReport {
        ok: violations.is_empty(),
        violations,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HankelFailure {
    /// `"hankel"`, `"shifted"` or `"norm"` (localizing for `|W|^2 - t`).
    pub matrix: String,
    pub min_eigenvalue: f64,
    pub determinant: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BergerReport {
    pub subnormal_consistent: bool,
    pub failing_hankel: Option<HankelFailure>,
    pub norm_sq: f64,
    pub kmax: usize,
}

/// Necessary condition for subnormality of the 1-variable shift with
/// weights `omega` at truncation `kmax`: the Hankel matrix of `gamma`, its
/// shift and the localizing matrix of `|W|^2 - t` are PSD.
///
/// `|W|^2` is estimated by the largest squared weight among *all* of
/// `omega`, which may run past `kmax`. Subnormal weights increase towards
/// the norm, so the estimate is sharpest for long sequences; cut at `kmax`
/// it undershoots and rejects genuine subnormal data.
pub fn berger_check(omega: &[f64], kmax: usize, tol: f64) -> BergerReport {
    let kmax = kmax.min(omega.len());
    let norm_sq = omega.iter().fold(0.0f64, |a, w| a.max(w * w));
    let gamma = univariate_moments(omega, kmax).expect("kmax clamped to available weights");
    let x = Polynomial::var(1, 0);
    let shifted = Constraint::new("t", x.clone()).expect("nonzero");
    let norm = Constraint::new("norm", &Polynomial::constant(1, norm_sq) - &x).expect("nonzero");
    let half = MonomialSet::up_to_degree(1, (kmax / 2) as u32);
    let mut checks = vec![("hankel", moment_matrix(&gamma, &half).expect("moments through kmax"))];
    if kmax >= 1 {
        let half1 = MonomialSet::up_to_degree(1, ((kmax - 1) / 2) as u32);
        checks.push(("shifted", localizing_matrix(&gamma, &shifted, &half1).expect("moments")));
        checks.push(("norm", localizing_matrix(&gamma, &norm, &half1).expect("moments")));
    }
    for (name, m) in checks {
        let r = psd_rank(&m, tol, 0.0);
        if !r.is_psd {
            return BergerReport {
                subnormal_consistent: false,
                failing_hankel: Some(HankelFailure {
                    matrix: name.to_string(),
                    min_eigenvalue: r.min_eigenvalue,
                    determinant: m.entries().determinant(),
                }),
                norm_sq,
                kmax,
            };
        }
    }
    BergerReport {
        subnormal_consistent: true,
        failing_hankel: None,
        norm_sq,
        kmax,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "reason", rename_all = "snake_case")]
pub enum Refusal {
    NotCommuting { violations: Vec<(u32, u32)> },
    NotSubnormalLine { direction: Direction, line: u32, report: BergerReport },
    NoMoments { detail: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScpOptions {
    /// Moment degree; by default the largest degree the weights determine.
    pub kmax: Option<u32>,
    pub comm_tol: f64,
    pub extend_tol: f64,
    pub solve: SolveOptions,
}

impl Default for ScpOptions {
    fn default() -> Self {
        ScpOptions {
            kmax: None,
            comm_tol: DEFAULT_COMM_TOL,
            extend_tol: DEFAULT_EXTEND_TOL,
            solve: SolveOptions::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScpResult {
    pub certificate: Option<SolveCertificate>,
    pub refusal: Option<Refusal>,
    pub moments: Option<MomentSequence>,
    pub kmax: u32,
    pub completed_weights: Option<WeightFamily>,
    /// Largest gap between completed and input weights.
    pub input_mismatch: Option<f64>,
    pub extends_input: bool,
    /// Some completion weight was skipped because its moment vanished.
    pub degenerate: bool,
    pub norms: (f64, f64),
}

/// Largest `kmax` for which every staircase path exists.
pub fn natural_kmax(w: &WeightFamily) -> u32 {
    let mut k = 0;
    while k < 64 && moments_from_weights(w, k + 1).is_ok() {
        k += 1;
    }
    k
}

pub fn scp_solve(w: &WeightFamily, opts: &ScpOptions) -> Result<ScpResult> {
    let kmax = match opts.kmax {
        Some(k) => k,
        None => {
            // tails reach as far as the finite part allows, plus one level
            let base = natural_kmax(&w.expanded(0));
            if w.tails.is_empty() {
                base
            } else {
                base.max(natural_kmax(&w.expanded(base + 1)))
            }
        }
    };
    let full = w.expanded(kmax);
    let norms = full.norm_bounds();
    let mut result = ScpResult {
        certificate: None,
        refusal: None,
        moments: None,
        kmax,
        completed_weights: None,
        input_mismatch: None,
        extends_input: false,
        degenerate: false,
        norms,
    };

    let comm = commutativity_check(&full, opts.comm_tol);
    if !comm.ok {
        result.refusal = Some(Refusal::NotCommuting {
            violations: comm.violations,
        });
        return Ok(result);
    }
    for t in &w.tails {
        let omega = full.line(t.direction, t.line);
        let report = berger_check(&omega, omega.len(), opts.solve.psd_tol);
        if !report.subnormal_consistent {
            result.refusal = Some(Refusal::NotSubnormalLine {
                direction: t.direction,
                line: t.line,
                report,
            });
            return Ok(result);
        }
    }
    if kmax == 0 {
        result.refusal = Some(Refusal::NoMoments {
            detail: "weights determine no moment beyond the mass".into(),
        });
        return Ok(result);
    }
    let gamma = match moments_from_weights(&full, kmax) {
        Ok(g) => g,
        Err(e) => {
            result.refusal = Some(Refusal::NoMoments { detail: e.to_string() });
            return Ok(result);
        }
    };
    let s = Polynomial::var(2, 0);
    let t = Polynomial::var(2, 1);
    let constraints = [
        Constraint::new("s", s.clone())?,
        Constraint::new("a1-s", &Polynomial::constant(2, norms.0) - &s)?,
        Constraint::new("t", t.clone())?,
        Constraint::new("a2-t", &Polynomial::constant(2, norms.1) - &t)?,
    ];
    let set = gamma.support();
    let cert = solve_tmp(&gamma, &set, &constraints, &opts.solve)?;
    result.moments = Some(gamma);
    if let Some(mu) = &cert.measure {
        let reach = MonomialSet::up_to_degree(2, kmax + 1);
        let m = moments_of_atomic(mu, &reach)?;
        let completed = weights_from_moments(&m, kmax + 1, opts.solve.weight_floor);
        let expected = (kmax + 1) * (kmax + 2) / 2;
        result.degenerate = completed.alpha.len() < expected as usize || completed.beta.len() < expected as usize;
        let mut mismatch = 0.0f64;
        let mut covered = true;
        for r in full.records() {
            match completed.get(r.direction, r.k1, r.k2) {
                Some(v) => mismatch = mismatch.max((v - r.weight).abs()),
                None => covered = false,
            }
        }
        result.extends_input = covered && mismatch <= opts.extend_tol;
        result.input_mismatch = Some(mismatch);
        result.completed_weights = Some(completed);
    }
    result.certificate = Some(cert);
    Ok(result)
}

const CELL: usize = 10;

/// Fixed-width lattice of the weights with `|k| < kmax`: nodes `o`,
/// alpha weights on horizontal edges, beta weights on vertical edges,
/// `?` where a weight is missing.
pub fn weight_diagram(w: &WeightFamily, kmax: u32) -> String {
    let fmt = |v: Option<f64>| v.map_or("?".to_string(), |v| format!("{v:.4}"));
    let mut out = String::new();
    for k2 in (0..=kmax).rev() {
        let mut line = format!("{:>5} ", format!("k2={k2}"));
        for k1 in 0..=kmax - k2 {
            line.push('o');
            if k1 + k2 < kmax {
                let label = fmt(w.alpha(k1, k2));
                let _ = write!(line, "{:-^width$}", format!(" {label} "), width = CELL);
            }
        }
        out.push_str(line.trim_end());
        out.push('\n');
        if k2 > 0 {
            let mut bars = " ".repeat(6);
            let mut labels = " ".repeat(6);
            for k1 in 0..=kmax - k2 {
                let _ = write!(bars, "{:<width$}", "|", width = CELL + 1);
                let _ = write!(labels, "{:<width$}", fmt(w.beta(k1, k2 - 1)), width = CELL + 1);
            }
            out.push_str(bars.trim_end());
            out.push('\n');
            out.push_str(labels.trim_end());
            out.push('\n');
            out.push_str(bars.trim_end());
            out.push('\n');
        }
    }
    let mut axis = " ".repeat(6);
    for k1 in 0..=kmax {
        let _ = write!(axis, "{:<width$}", format!("k1={k1}"), width = CELL + 1);
    }
    out.push_str(axis.trim_end());
    out.push('\n');
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flat::Verdict;
    use crate::moments::AtomicMeasure;
    use proptest::prelude::*;

    /// Omega_1 from squared weights a..f (a = alpha_00^2, b = beta_00^2,
    /// c = alpha_10^2, d = beta_01^2, e = alpha_01^2, f = beta_10^2).
    fn omega1(a: f64, b: f64, c: f64, d: f64, e: f64, f: f64) -> WeightFamily {
        let mut w = WeightFamily::new();
        w.insert_squared(Direction::Alpha, 0, 0, a).unwrap();
        w.insert_squared(Direction::Beta, 0, 0, b).unwrap();
        w.insert_squared(Direction::Alpha, 1, 0, c).unwrap();
        w.insert_squared(Direction::Beta, 0, 1, d).unwrap();
        w.insert_squared(Direction::Alpha, 0, 1, e).unwrap();
        w.insert_squared(Direction::Beta, 1, 0, f).unwrap();
        w
    }

    fn close(x: f64, y: f64) -> bool {
        (x - y).abs() < 1e-12
    }

    #[test]
    fn omega1_moments() {
        let (a, b, c, d, e, f) = (0.3, 0.4, 0.5, 0.6, 0.45, 0.6);
        let g = moments_from_weights(&omega1(a, b, c, d, e, f), 2).unwrap();
        assert_eq!(g.len(), 6);
        assert!(close(g.value(&index(0, 0)).unwrap(), 1.0));
        assert!(close(g.value(&index(1, 0)).unwrap(), a));
        assert!(close(g.value(&index(0, 1)).unwrap(), b));
        assert!(close(g.value(&index(2, 0)).unwrap(), a * c));
        assert!(close(g.value(&index(1, 1)).unwrap(), a * f));
        assert!(close(g.value(&index(0, 2)).unwrap(), b * d));
    }

    #[test]
    fn unit_and_univariate_moments() {
        let g = moments_from_weights(&WeightFamily::all_ones(4), 4).unwrap();
        assert!(g.iter().all(|(_, v)| v == 1.0));
        let mut row = WeightFamily::new();
        for (j, w) in [0.9, 0.8, 0.7].iter().enumerate() {
            row.insert(Direction::Alpha, j as u32, 0, *w).unwrap();
        }
        let g = moments_from_weights(&row, 3).unwrap();
        assert_eq!(g.len(), 4);
        assert!(close(g.value(&index(3, 0)).unwrap(), 0.81 * 0.64 * 0.49));
    }

    #[test]
    fn missing_weight_is_named() {
        let w = omega1(0.3, 0.4, 0.5, 0.6, 0.45, 0.6);
        assert_eq!(
            moments_from_weights(&w, 3),
            Err(Error::MissingWeight {
                direction: "beta",
                k1: 0,
                k2: 2
            })
        );
    }

    #[test]
    fn weights_outside_unit_interval_are_rejected() {
        let mut w = WeightFamily::new();
        assert!(w.insert(Direction::Alpha, 0, 0, 1.5).is_err());
        assert!(w.insert(Direction::Alpha, 0, 0, 0.0).is_err());
        assert!(w.insert(Direction::Alpha, 0, 0, 1.0).is_ok());
    }

    #[test]
    fn commutativity_examples() {
        assert!(commutativity_check(&omega1(0.25, 0.25, 0.5, 0.5, 0.5, 0.5), 1e-12).ok);
        let bad = commutativity_check(&omega1(0.25, 0.25, 0.5, 0.5, 0.5, 0.9), 1e-12);
        assert_eq!(bad.violations, vec![(0, 0)]);
        let mut row = WeightFamily::new();
        row.insert(Direction::Alpha, 0, 0, 0.5).unwrap();
        row.insert(Direction::Alpha, 1, 0, 0.5).unwrap();
        assert!(commutativity_check(&row, 1e-12).ok);
    }

    #[test]
    fn berger_examples() {
        assert!(berger_check(&[1.0; 8], 8, 1e-9).subnormal_consistent);

        let mu = AtomicMeasure::new(1, vec![vec![0.25], vec![1.0]], vec![0.5, 0.5]).unwrap();
        let omega: Vec<f64> = (0..256)
            .map(|k| (mu.moment(&MultiIndex::new(vec![k + 1])) / mu.moment(&MultiIndex::new(vec![k]))).sqrt())
            .collect();
        assert!(berger_check(&omega, 8, 1e-9).subnormal_consistent);

        let r = berger_check(&[2f64.sqrt(), 0.1f64.sqrt()], 2, 1e-9);
        assert!(!r.subnormal_consistent);
        let fail = r.failing_hankel.unwrap();
        assert_eq!(fail.matrix, "hankel");
        assert!((fail.determinant + 3.8).abs() < 1e-12);
    }

    #[test]
    fn golden_omega1_is_representable() {
        let w = omega1(0.25, 0.25, 0.5, 0.5, 0.5, 0.5);
        let g = moments_from_weights(&w, 2).unwrap();
        let m = moment_matrix(&g, &MonomialSet::up_to_degree(2, 1)).unwrap();
        let expect = [[1.0, 0.25, 0.25], [0.25, 0.125, 0.125], [0.25, 0.125, 0.125]];
        for (i, row) in expect.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                assert_eq!(m.entries()[(i, j)], v);
            }
        }
        let r = scp_solve(&w, &ScpOptions::default()).unwrap();
        let cert = r.certificate.unwrap();
        assert_eq!(cert.verdict, Verdict::Representable, "{:?}", cert.witness);
        assert!(cert.residual.unwrap() < 1e-8);
        for x in cert.measure.unwrap().atoms() {
            assert!(x.iter().all(|&v| (-1e-9..=0.5 + 1e-9).contains(&v)), "{x:?}");
        }
        assert!(r.extends_input);
    }

    #[test]
    fn completion_of_a_measure_generated_family() {
        let mu = AtomicMeasure::new(2, vec![vec![0.25, 0.25], vec![1.0, 1.0]], vec![0.5, 0.5]).unwrap();
        let m = moments_of_atomic(&mu, &MonomialSet::up_to_degree(2, 2)).unwrap();
        let w = weights_from_moments(&m, 2, 1e-12);
        assert_eq!(w.alpha.len(), 3);
        let r = scp_solve(&w, &ScpOptions::default()).unwrap();
        let cert = r.certificate.as_ref().unwrap();
        assert_eq!(cert.verdict, Verdict::Representable, "{:?}", cert.witness);
        assert!(r.extends_input, "mismatch {:?}", r.input_mismatch);
    }

    #[test]
    fn indefinite_omega1_is_a_psd_failure() {
        // a = b = 1, ac = bd = be = 0.1
        let w = omega1(1.0, 1.0, 0.1, 0.1, 0.1, 0.1);
        let r = scp_solve(&w, &ScpOptions::default()).unwrap();
        assert!(r.refusal.is_none());
        assert_eq!(r.certificate.unwrap().verdict, Verdict::PsdFailure);
    }

    #[test]
    fn unit_weights_complete_to_a_point_mass() {
        let r = scp_solve(&WeightFamily::all_ones(3), &ScpOptions::default()).unwrap();
        let mu = r.certificate.unwrap().measure.unwrap();
        assert_eq!(mu.len(), 1);
        assert!(mu.atoms()[0].iter().all(|v| (v - 1.0).abs() < 1e-9));
        assert!((mu.weights()[0] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn non_commuting_input_is_refused() {
        let r = scp_solve(&omega1(0.25, 0.25, 0.5, 0.5, 0.5, 0.9), &ScpOptions::default()).unwrap();
        assert!(matches!(r.refusal, Some(Refusal::NotCommuting { .. })));
        assert!(r.certificate.is_none());
    }

    #[test]
    fn tails_expand_lines() {
        let mut w = WeightFamily::new();
        w.insert(Direction::Alpha, 0, 0, 0.8).unwrap();
        w.add_tail(TailSpec {
            direction: Direction::Alpha,
            line: 0,
            tail: Tail::Geometric { ratio: 0.5 },
        })
        .unwrap();
        let e = w.expanded(3);
        // squared: 0.64, then gaps 0.18 and 0.09
        assert!((e.squared(Direction::Alpha, 2, 0).unwrap() - 0.91).abs() < 1e-15);
        assert!(e.tails().is_empty());
        assert!(w
            .add_tail(TailSpec {
                direction: Direction::Beta,
                line: 4,
                tail: Tail::Constant
            })
            .is_err());
    }

    #[test]
    fn geometric_tail_matches_its_berger_measure() {
        // w_j^2 = 1 - c q^j; moments (c; q)_k of
        // sum_j (c; q)_inf c^j / (q; q)_j delta_{q^j}.
        let (c, q) = (0.5, 0.5);
        let mut w = WeightFamily::new();
        w.insert_squared(Direction::Alpha, 0, 0, 1.0 - c).unwrap();
        w.add_tail(TailSpec {
            direction: Direction::Alpha,
            line: 0,
            tail: Tail::Geometric { ratio: q },
        })
        .unwrap();
        let kmax = 10;
        let g = moments_from_weights(&w.expanded(kmax), kmax).unwrap();
        let poch_inf: f64 = (0..200).map(|j| 1.0 - c * q.powi(j)).product();
        let mut masses = Vec::new();
        let mut qq = 1.0;
        for j in 0..60 {
            if j > 0 {
                qq *= 1.0 - q.powi(j);
            }
            masses.push(poch_inf * c.powi(j) / qq);
        }
        for k in 0..=kmax {
            let oracle: f64 = masses.iter().enumerate().map(|(j, m)| m * q.powi((j as u32 * k) as i32)).sum();
            assert!((g.value(&index(k, 0)).unwrap() - oracle).abs() < 1e-12, "k = {k}");
        }
        let omega = w.expanded(256).line(Direction::Alpha, 0);
        assert!(berger_check(&omega, 8, 1e-9).subnormal_consistent);
    }

    #[test]
    fn tailed_line_failing_berger_is_refused() {
        let mut w = WeightFamily::new();
        w.insert(Direction::Alpha, 0, 0, 1.0).unwrap();
        w.insert(Direction::Alpha, 1, 0, 0.1f64.sqrt()).unwrap();
        w.add_tail(TailSpec {
            direction: Direction::Alpha,
            line: 0,
            tail: Tail::Constant,
        })
        .unwrap();
        let r = scp_solve(&w, &ScpOptions::default()).unwrap();
        assert!(matches!(r.refusal, Some(Refusal::NotSubnormalLine { line: 0, .. })));
    }

    #[test]
    fn diagram_layout() {
        let d = weight_diagram(&omega1(0.25, 0.25, 0.5, 0.5, 0.5, 0.5), 2);
        let lines: Vec<&str> = d.lines().collect();
        assert_eq!(lines[0], " k2=2 o");
        assert!(lines.last().unwrap().starts_with("      k1=0"));
        assert!(d.contains("o- 0.5000 -o- 0.7071 -o"));
        assert_eq!(d, weight_diagram(&omega1(0.25, 0.25, 0.5, 0.5, 0.5, 0.5), 2));
    }

    fn measure_on_unit_square() -> impl Strategy<Value = AtomicMeasure> {
        proptest::collection::vec(((0.05f64..1.0, 0.05f64..1.0), 0.05f64..1.0), 1..4).prop_map(|v| {
            let (atoms, weights): (Vec<_>, Vec<_>) = v.into_iter().map(|((x, y), w)| (vec![x, y], w)).unzip();
            let total: f64 = weights.iter().sum();
            AtomicMeasure::new(2, atoms, weights.iter().map(|w| w / total).collect()).unwrap()
        })
    }

    fn path_product(w: &WeightFamily, steps: &[Direction]) -> f64 {
        let (mut k1, mut k2, mut g) = (0, 0, 1.0);
        for d in steps {
            let v = w.get(*d, k1, k2).unwrap();
            g *= v * v;
            match d {
                Direction::Alpha => k1 += 1,
                Direction::Beta => k2 += 1,
            }
        }
        g
    }

    proptest! {
        #[test]
        fn weights_moments_weights_identity(mu in measure_on_unit_square()) {
            let m = moments_of_atomic(&mu, &MonomialSet::up_to_degree(2, 4)).unwrap();
            let w = weights_from_moments(&m, 4, 0.0);
            let back = moments_from_weights(&w, 4).unwrap();
            let again = weights_from_moments(&back, 4, 0.0);
            for r in w.records() {
                let v = again.get(r.direction, r.k1, r.k2).unwrap();
                prop_assert!((v - r.weight).abs() < 1e-12);
            }
        }

        #[test]
        fn staircase_paths_agree(mu in measure_on_unit_square(), path in proptest::collection::vec(any::<bool>(), 4)) {
            let m = moments_of_atomic(&mu, &MonomialSet::up_to_degree(2, 4)).unwrap();
            let w = weights_from_moments(&m, 4, 0.0);
            prop_assert!(commutativity_check(&w, 1e-9).ok);
            let steps: Vec<Direction> = path.iter().map(|&b| if b { Direction::Alpha } else { Direction::Beta }).collect();
            let k1 = steps.iter().filter(|d| **d == Direction::Alpha).count() as u32;
            let canonical = moments_from_weights(&w, 4).unwrap().value(&index(k1, 4 - k1)).unwrap();
            let along = path_product(&w, &steps);
            prop_assert!((along - canonical).abs() <= 1e-12 * canonical);
        }

        #[test]
        fn measure_generated_omega1_is_psd(mu in measure_on_unit_square()) {
            let m = moments_of_atomic(&mu, &MonomialSet::up_to_degree(2, 2)).unwrap();
            let w = weights_from_moments(&m, 2, 0.0);
            let g = moments_from_weights(&w, 2).unwrap();
            let mm = moment_matrix(&g, &MonomialSet::up_to_degree(2, 1)).unwrap();
            prop_assert!(psd_rank(&mm, 1e-9, 1e-8).is_psd);
        }
    }
}
