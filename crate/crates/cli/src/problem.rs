//! TOML problem and weight files.
//!
//! Semantic errors point at the offending line through `toml::Spanned`;
//! syntax and type errors carry toml's own line/column report.

use std::collections::BTreeMap;
use std::fmt;

use serde::Deserialize;
use toml::Spanned;

use tmoment_core::scp::{Direction, Tail, TailSpec, WeightFamily};
use tmoment_core::{Constraint, MomentSequence, MonomialSet, MultiIndex, Polynomial};

#[derive(Debug)]
pub struct ParseError {
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(l) => write!(f, "line {l}: {}", self.message),
            None => write!(f, "{}", self.message),
        }
    }
}

impl std::error::Error for ParseError {}

fn line_of(src: &str, offset: usize) -> usize {
    src[..offset.min(src.len())].bytes().filter(|&b| b == b'\n').count() + 1
}

fn located<T>(src: &str, at: &Spanned<T>, message: impl Into<String>) -> ParseError {
    ParseError {
        line: Some(line_of(src, at.span().start)),
        message: message.into(),
    }
}

fn from_toml<'de, T: Deserialize<'de>>(src: &'de str) -> Result<T, ParseError> {
    toml::from_str(src).map_err(|e| ParseError {
        line: e.span().map(|s| line_of(src, s.start)),
        message: e.message().to_string(),
    })
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawProblem {
    nvars: Spanned<usize>,
    monomials: Option<Vec<Spanned<Vec<u32>>>>,
    #[serde(default)]
    moments: Vec<RawMoment>,
    #[serde(default)]
    constraints: Vec<RawConstraint>,
    #[serde(default)]
    options: FileOptions,
    /// Frame files: total-degree cut of each level.
    levels: Option<Vec<u32>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMoment {
    index: Spanned<Vec<u32>>,
    value: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConstraint {
    name: String,
    terms: Vec<RawTerm>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTerm {
    index: Spanned<Vec<u32>>,
    coef: f64,
}

/// Solver settings a file may carry; command-line flags take precedence.
#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileOptions {
    pub psd_tol: Option<f64>,
    pub rank_tol: Option<f64>,
    pub consistency_tol: Option<f64>,
    pub residual_tol: Option<f64>,
    pub point_tol: Option<f64>,
    pub depth: Option<usize>,
    pub seed: Option<u64>,
    pub probability: Option<bool>,
    /// `"lo,hi,steps"`, as on the command line.
    pub grid: Option<String>,
    pub kmax: Option<u32>,
}

#[derive(Debug)]
pub struct Problem {
    pub nvars: usize,
    pub set: MonomialSet,
    pub moments: MomentSequence,
    pub constraints: Vec<Constraint>,
    pub options: FileOptions,
    pub levels: Option<Vec<u32>>,
}

fn exponent_vector(src: &str, nvars: usize, raw: &Spanned<Vec<u32>>) -> Result<MultiIndex, ParseError> {
    if raw.get_ref().len() != nvars {
        return Err(located(
            src,
            raw,
            format!(
                "exponent vector {:?} has {} entries, expected {nvars}",
                raw.get_ref(),
                raw.get_ref().len()
            ),
        ));
    }
    Ok(MultiIndex::new(raw.get_ref().clone()))
}

pub fn parse_problem(src: &str) -> Result<Problem, ParseError> {
    let raw: RawProblem = from_toml(src)?;
    let nvars = *raw.nvars.get_ref();
    if nvars == 0 {
        return Err(located(src, &raw.nvars, "nvars must be at least 1"));
    }
    let mut values = BTreeMap::new();
    for m in &raw.moments {
        let a = exponent_vector(src, nvars, &m.index)?;
        if !m.value.is_finite() {
            return Err(located(src, &m.index, "moment value is not finite"));
        }
        if values.insert(a.clone(), m.value).is_some() {
            return Err(located(src, &m.index, format!("moment {a} given twice")));
        }
    }
    let moments = MomentSequence::new(nvars, values).map_err(|e| ParseError {
        line: None,
        message: e.to_string(),
    })?;
    let set = match &raw.monomials {
        None => moments.support(),
        Some(list) => {
            let mut indices = Vec::with_capacity(list.len());
            for m in list {
                let a = exponent_vector(src, nvars, m)?;
                if indices.contains(&a) {
                    return Err(located(src, m, format!("monomial {a} listed twice")));
                }
                if !moments.contains(&a) {
                    return Err(located(src, m, format!("no moment given for monomial {a}")));
                }
                indices.push(a);
            }
            MonomialSet::new(nvars, indices).expect("duplicates rejected above")
        }
    };
    let mut constraints = Vec::with_capacity(raw.constraints.len());
    for c in &raw.constraints {
        let mut terms = Vec::with_capacity(c.terms.len());
        for t in &c.terms {
            terms.push((exponent_vector(src, nvars, &t.index)?, t.coef));
        }
        let g = Polynomial::from_terms(nvars, terms).map_err(|e| ParseError {
            line: None,
            message: format!("constraint {}: {e}", c.name),
        })?;
        constraints.push(Constraint::new(c.name.clone(), g).map_err(|e| ParseError {
            line: None,
            message: format!("constraint {}: {e}", c.name),
        })?);
    }
    Ok(Problem {
        nvars,
        set,
        moments,
        constraints,
        options: raw.options,
        levels: raw.levels,
    })
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawWeights {
    #[serde(default)]
    weights: Vec<RawWeight>,
    #[serde(default)]
    tails: Vec<RawTail>,
    #[serde(default)]
    options: FileOptions,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawWeight {
    direction: Spanned<Direction>,
    k1: u32,
    k2: u32,
    weight: Option<f64>,
    /// The squared weight, as it enters the moments.
    squared: Option<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTail {
    direction: Spanned<Direction>,
    line: u32,
    kind: String,
    ratio: Option<f64>,
}

#[derive(Debug)]
pub struct WeightFile {
    pub family: WeightFamily,
    pub options: FileOptions,
}

pub fn parse_weights(src: &str) -> Result<WeightFile, ParseError> {
    let raw: RawWeights = from_toml(src)?;
    let mut family = WeightFamily::new();
    for w in &raw.weights {
        let d = *w.direction.get_ref();
        let res = match (w.weight, w.squared) {
            (Some(v), None) => family.insert(d, w.k1, w.k2, v),
            (None, Some(v)) => family.insert_squared(d, w.k1, w.k2, v),
            _ => return Err(located(src, &w.direction, "give exactly one of `weight` and `squared`")),
        };
        res.map_err(|e| located(src, &w.direction, e.to_string()))?;
    }
    for t in &raw.tails {
        let tail = match (t.kind.as_str(), t.ratio) {
            ("constant", None) => Tail::Constant,
            ("geometric", Some(ratio)) => Tail::Geometric { ratio },
            _ => {
                return Err(located(
                    src,
                    &t.direction,
                    "tail kind must be `constant`, or `geometric` with a `ratio`",
                ))
            }
        };
        family
            .add_tail(TailSpec {
                direction: *t.direction.get_ref(),
                line: t.line,
                tail,
            })
            .map_err(|e| located(src, &t.direction, e.to_string()))?;
    }
    Ok(WeightFile {
        family,
        options: raw.options,
    })
}

/// `"lo,hi,steps"` from `--grid`.
pub fn parse_grid(spec: &str) -> Result<(f64, f64, usize), ParseError> {
    let bad = |m: &str| ParseError {
        line: None,
        message: format!("grid {spec:?}: {m}"),
    };
    let parts: Vec<&str> = spec.split(',').map(str::trim).collect();
    let [lo, hi, steps] = parts.as_slice() else {
        return Err(bad("expected lo,hi,steps"));
    };
    let lo: f64 = lo.parse().map_err(|_| bad("lo is not a number"))?;
    let hi: f64 = hi.parse().map_err(|_| bad("hi is not a number"))?;
    let steps: usize = steps.parse().map_err(|_| bad("steps is not a positive integer"))?;
    if lo.partial_cmp(&hi) != Some(std::cmp::Ordering::Less) || steps < 2 {
        return Err(bad("need lo < hi and at least 2 steps"));
    }
    Ok((lo, hi, steps))
}
