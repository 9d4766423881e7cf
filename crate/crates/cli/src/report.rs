//! Certificate layout. Field order is fixed by the struct; nested objects
//! come from `serde_json::json!`, whose maps are key-sorted, so the same
//! input always prints the same bytes.

use std::path::Path;

use serde::Serialize;
use serde_json::{json, Value};

use tmoment_core::flat::{CheckReport, Witness};
use tmoment_core::matrix::{ConsistencyViolation, PsdReport};
use tmoment_core::poly::variable_names;
use tmoment_core::{AtomicMeasure, MomentSequence, MultiIndex, Polynomial, SolveOptions};

pub const TOOL_VERSION: &str = concat!("tmoment ", env!("CARGO_PKG_VERSION"));

#[derive(Serialize)]
pub struct Tolerances {
    pub psd_tol: f64,
    pub rank_tol: f64,
    pub consistency_tol: f64,
    pub structure_tol: f64,
    pub residual_tol: f64,
    pub point_tol: f64,
    pub commute_tol: f64,
    pub weight_floor: f64,
    pub weight_tol: f64,
    pub depth: usize,
    pub seed: u64,
    pub probability: bool,
    pub grid: Option<String>,
}

impl Tolerances {
    pub fn from_options(o: &SolveOptions, grid: Option<String>) -> Self {
        Tolerances {
            psd_tol: o.psd_tol,
            rank_tol: o.rank_tol,
            consistency_tol: o.consistency_tol,
            structure_tol: o.structure_tol,
            residual_tol: o.residual_tol,
            point_tol: o.point_tol,
            commute_tol: o.commute_tol,
            weight_floor: o.weight_floor,
            weight_tol: o.weight_tol,
            depth: o.depth,
            seed: o.seed,
            probability: o.probability,
            grid,
        }
    }
}

#[derive(Serialize)]
pub struct MomentRecord {
    pub index: MultiIndex,
    pub value: f64,
}

#[derive(Serialize)]
pub struct Certificate {
    pub command: String,
    pub input: Option<String>,
    pub tool_version: &'static str,
    pub verdict: String,
    pub atoms: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
    pub residual: Option<f64>,
    pub witness: Value,
    pub extended_moments: Vec<MomentRecord>,
    pub tolerances: Option<Tolerances>,
    pub report: Value,
    pub warnings: Vec<String>,
}

impl Certificate {
    pub fn new(command: &str, input: Option<&Path>, verdict: impl Into<String>) -> Self {
        Certificate {
            command: command.to_string(),
            input: input.map(|p| p.display().to_string()),
            tool_version: TOOL_VERSION,
            verdict: verdict.into(),
            atoms: Vec::new(),
            weights: Vec::new(),
            residual: None,
            witness: Value::Null,
            extended_moments: Vec::new(),
            tolerances: None,
            report: Value::Null,
            warnings: Vec::new(),
        }
    }

    pub fn with_measure(&mut self, mu: &AtomicMeasure) {
        let sorted = mu.sorted();
        self.atoms = sorted.iter().map(|(x, _)| x.clone()).collect();
        self.weights = sorted.iter().map(|(_, w)| *w).collect();
    }

    pub fn with_moments(&mut self, m: &MomentSequence) {
        self.extended_moments = m
            .iter()
            .map(|(a, v)| MomentRecord {
                index: a.clone(),
                value: v,
            })
            .collect();
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("certificate serializes")
    }
}

fn leading_coefficient(p: &Polynomial) -> Option<f64> {
    p.terms().last().map(|(_, c)| c).filter(|&c| c != 0.0)
}

/// Polynomial text scaled so its highest term has coefficient 1, with
/// coefficients rounded to 13 significant digits for display.
pub fn monic(p: &Polynomial) -> String {
    let scaled = match leading_coefficient(p) {
        Some(c) => p.scale(1.0 / c),
        None => p.clone(),
    };
    let rounded = scaled
        .terms()
        .map(|(a, c)| (a.clone(), format!("{c:.12e}").parse::<f64>().unwrap_or(c)));
    Polynomial::from_terms(p.nvars(), rounded)
        .map(|q| q.to_string())
        .unwrap_or_else(|_| scaled.to_string())
}

pub fn psd_json(r: &PsdReport) -> Value {
    json!({
        "is_psd": r.is_psd,
        "min_eigenvalue": r.min_eigenvalue,
        "rank": r.rank,
        "norm": r.norm,
        "kernel": r.kernel.iter().map(monic).collect::<Vec<_>>(),
    })
}

fn violation_json(v: &ConsistencyViolation, nvars: usize) -> Value {
    json!({
        "kernel": monic(&v.kernel),
        "variable": variable_names(nvars)[v.variable],
        "beta": v.beta,
        // Scaled like the monic kernel text.
        "value": v.value / leading_coefficient(&v.kernel).unwrap_or(1.0),
    })
}

pub fn check_json(c: &CheckReport, nvars: usize) -> Value {
    json!({
        "basis": c.basis,
        "moment_matrix": psd_json(&c.moment),
        "localizing": c.localizing.iter().map(|l| json!({
            "constraint": l.constraint,
            "basis": l.basis,
            "report": l.report.as_ref().map(psd_json),
            "untested": l.untested,
        })).collect::<Vec<_>>(),
        "consistency": {
            "consistent": c.consistency.consistent,
            "tested": c.consistency.tested,
            "untested": c.consistency.untested,
            "violations": c.consistency.violations.iter().map(|v| violation_json(v, nvars)).collect::<Vec<_>>(),
        },
    })
}

pub fn witness_json(w: &Witness, nvars: usize) -> Value {
    match w {
        Witness::None => Value::Null,
        Witness::NegativeEigenvalue {
            matrix,
            basis,
            min_eigenvalue,
            eigenvector,
        } => {
            let p = Polynomial::from_terms(nvars, basis.iter().cloned().zip(eigenvector.iter().copied()))
                .expect("basis labels share nvars");
            json!({
                "kind": "negative_eigenvalue",
                "matrix": matrix,
                "basis": basis,
                "min_eigenvalue": min_eigenvalue,
                "eigenvector": eigenvector,
                "polynomial": p.to_string(),
            })
        }
        Witness::Inconsistency { violations } => json!({
            "kind": "inconsistency",
            "violations": violations.iter().map(|v| violation_json(v, nvars)).collect::<Vec<_>>(),
        }),
        Witness::Exhausted { depth, attempts } => json!({
            "kind": "exhausted",
            "depth": depth,
            "attempts": attempts,
        }),
    }
}

/// Atom table as CSV: one column per variable, then the weight.
pub fn write_atoms_csv(path: &Path, nvars: usize, atoms: &[Vec<f64>], weights: &[f64]) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = variable_names(nvars);
    header.push("weight".into());
    w.write_record(&header)?;
    for (x, wt) in atoms.iter().zip(weights) {
        let mut row: Vec<String> = x.iter().map(|v| v.to_string()).collect();
        row.push(wt.to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}
