//! Multi-indices, sparse polynomials and monomial sets.
//!
//! Monomials are ordered graded-lexicographically: total degree first, then
//! by exponent vector with the first variable dominating, so that in two
//! variables the order reads `1, s, t, s^2, st, t^2, s^3, ...`.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Coefficients with magnitude below this are dropped after arithmetic.
pub const COEFF_EPS: f64 = 1e-15;

/// Exponent vector of a monomial.
#[derive(Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MultiIndex(Vec<u32>);

impl MultiIndex {
    pub fn new(exponents: Vec<u32>) -> Self {
        MultiIndex(exponents)
    }

    pub fn zero(nvars: usize) -> Self {
        MultiIndex(vec![0; nvars])
    }

    /// The unit vector `e_i`.
    pub fn unit(nvars: usize, i: usize) -> Self {
        let mut e = vec![0; nvars];
        e[i] = 1;
        MultiIndex(e)
    }

    pub fn nvars(&self) -> usize {
        self.0.len()
    }

    pub fn degree(&self) -> u32 {
        self.0.iter().sum()
    }

    pub fn exponents(&self) -> &[u32] {
        &self.0
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&e| e == 0)
    }

    /// `self + other`, the index of the product monomial.
    pub fn add(&self, other: &MultiIndex) -> MultiIndex {
        debug_assert_eq!(self.nvars(), other.nvars());
        MultiIndex(self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect())
    }

    /// `self + e_i`.
    pub fn shift(&self, i: usize) -> MultiIndex {
        let mut e = self.0.clone();
        e[i] += 1;
        MultiIndex(e)
    }

    /// `self - e_i`, if the i-th exponent is positive.
    pub fn unshift(&self, i: usize) -> Option<MultiIndex> {
        if self.0[i] == 0 {
            return None;
        }
        let mut e = self.0.clone();
        e[i] -= 1;
        Some(MultiIndex(e))
    }

    /// Evaluates `x^alpha`.
    pub fn eval(&self, x: &[f64]) -> f64 {
        self.0
            .iter()
            .zip(x)
            .map(|(&e, &xi)| xi.powi(e as i32))
            .product()
    }

    /// Human-readable monomial (`1`, `X^3`, `s^2 t`, `X1 X3^2`).
    pub fn monomial_string(&self) -> String {
        if self.is_zero() {
            return "1".to_string();
        }
        let names = variable_names(self.nvars());
        let mut parts = Vec::new();
        for (e, name) in self.0.iter().zip(&names) {
            match e {
                0 => {}
                1 => parts.push(name.clone()),
                _ => parts.push(format!("{name}^{e}")),
            }
        }
        parts.join(" ")
    }
}

/// Variable labels: `X` for one variable, `s, t` for two, `X1..Xn` otherwise.
pub fn variable_names(nvars: usize) -> Vec<String> {
    match nvars {
        1 => vec!["X".to_string()],
        2 => vec!["s".to_string(), "t".to_string()],
        n => (1..=n).map(|i| format!("X{i}")).collect(),
    }
}

impl Ord for MultiIndex {
    fn cmp(&self, other: &Self) -> Ordering {
        self.degree()
            .cmp(&other.degree())
            .then_with(|| other.0.cmp(&self.0))
    }
}

impl PartialOrd for MultiIndex {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Debug for MultiIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self}")
    }
}

impl fmt::Display for MultiIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, e) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{e}")?;
        }
        write!(f, ")")
    }
}

impl From<Vec<u32>> for MultiIndex {
    fn from(v: Vec<u32>) -> Self {
        MultiIndex(v)
    }
}

impl<const N: usize> From<[u32; N]> for MultiIndex {
    fn from(v: [u32; N]) -> Self {
        MultiIndex(v.to_vec())
    }
}

/// All multi-indices in `nvars` variables of total degree exactly `degree`,
/// in graded-lex order.
pub fn indices_of_degree(nvars: usize, degree: u32) -> Vec<MultiIndex> {
    fn rec(nvars: usize, remaining: u32, prefix: &mut Vec<u32>, out: &mut Vec<MultiIndex>) {
        if prefix.len() + 1 == nvars {
            prefix.push(remaining);
            out.push(MultiIndex(prefix.clone()));
            prefix.pop();
            return;
        }
        for e in (0..=remaining).rev() {
            prefix.push(e);
            rec(nvars, remaining - e, prefix, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    if nvars == 0 {
        if degree == 0 {
            out.push(MultiIndex(Vec::new()));
        }
        return out;
    }
    rec(nvars, degree, &mut Vec::with_capacity(nvars), &mut out);
    out
}

/// Index-keyed maps serialize as `[[index, value], ...]` so that formats
/// with string-only keys (JSON) can carry them.
pub(crate) mod index_pairs {
    use std::collections::BTreeMap;

    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    use super::MultiIndex;

    pub fn serialize<S: Serializer>(map: &BTreeMap<MultiIndex, f64>, s: S) -> Result<S::Ok, S::Error> {
        let pairs: Vec<(&MultiIndex, f64)> = map.iter().map(|(k, v)| (k, *v)).collect();
        pairs.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BTreeMap<MultiIndex, f64>, D::Error> {
        let pairs: Vec<(MultiIndex, f64)> = Vec::deserialize(d)?;
        Ok(pairs.into_iter().collect())
    }
}

/// Sparse real polynomial in `nvars` variables.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
pub struct Polynomial {
    nvars: usize,
    #[serde(with = "index_pairs")]
    terms: BTreeMap<MultiIndex, f64>,
}

impl Polynomial {
    pub fn zero(nvars: usize) -> Self {
        Polynomial {
            nvars,
            terms: BTreeMap::new(),
        }
    }

    pub fn constant(nvars: usize, c: f64) -> Self {
        Self::monomial(MultiIndex::zero(nvars), c)
    }

    pub fn monomial(alpha: MultiIndex, c: f64) -> Self {
        let nvars = alpha.nvars();
        let mut p = Polynomial::zero(nvars);
        if c.abs() >= COEFF_EPS {
            p.terms.insert(alpha, c);
        }
        p
    }

    /// The coordinate polynomial `X_i`.
    pub fn var(nvars: usize, i: usize) -> Self {
        Self::monomial(MultiIndex::unit(nvars, i), 1.0)
    }

    /// Builds a polynomial from (index, coefficient) pairs, summing repeats.
    pub fn from_terms<I>(nvars: usize, terms: I) -> Result<Self>
    where
        I: IntoIterator<Item = (MultiIndex, f64)>,
    {
        let mut p = Polynomial::zero(nvars);
        for (alpha, c) in terms {
            if alpha.nvars() != nvars {
                return Err(Error::DimensionMismatch {
                    expected: nvars,
                    got: alpha.nvars(),
                });
            }
            *p.terms.entry(alpha).or_insert(0.0) += c;
        }
        p.normalize();
        Ok(p)
    }

    fn normalize(&mut self) {
        self.terms.retain(|_, c| c.abs() >= COEFF_EPS);
    }

    pub fn nvars(&self) -> usize {
        self.nvars
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn terms(&self) -> impl Iterator<Item = (&MultiIndex, f64)> {
        self.terms.iter().map(|(a, &c)| (a, c))
    }

    pub fn num_terms(&self) -> usize {
        self.terms.len()
    }

    pub fn coefficient(&self, alpha: &MultiIndex) -> f64 {
        self.terms.get(alpha).copied().unwrap_or(0.0)
    }

    /// Total degree; `None` for the zero polynomial.
    pub fn degree(&self) -> Option<u32> {
        self.terms.keys().map(|a| a.degree()).max()
    }

    pub fn scale(&self, c: f64) -> Self {
        let mut p = Polynomial {
            nvars: self.nvars,
            terms: self.terms.iter().map(|(a, &v)| (a.clone(), v * c)).collect(),
        };
        p.normalize();
        p
    }

    /// Multiplies by the monomial `x^alpha`.
    pub fn shift_by(&self, alpha: &MultiIndex) -> Self {
        Polynomial {
            nvars: self.nvars,
            terms: self.terms.iter().map(|(a, &v)| (a.add(alpha), v)).collect(),
        }
    }

    pub fn pow(&self, k: u32) -> Self {
        let mut acc = Polynomial::constant(self.nvars, 1.0);
        for _ in 0..k {
            acc = &acc * self;
        }
        acc
    }

    /// Evaluates term by term at `x`.
    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.nvars {
            return Err(Error::DimensionMismatch {
                expected: self.nvars,
                got: x.len(),
            });
        }
        Ok(self.eval_unchecked(x))
    }

    pub(crate) fn eval_unchecked(&self, x: &[f64]) -> f64 {
        self.terms.iter().map(|(a, &c)| c * a.eval(x)).sum()
    }

    fn combine(&self, other: &Polynomial, sign: f64) -> Polynomial {
        assert_eq!(self.nvars, other.nvars, "polynomials over different variables");
        let mut p = self.clone();
        for (a, &c) in &other.terms {
            *p.terms.entry(a.clone()).or_insert(0.0) += sign * c;
        }
        p.normalize();
        p
    }
}

impl fmt::Debug for Polynomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self}")
    }
}

impl fmt::Display for Polynomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        for (i, (a, &c)) in self.terms.iter().enumerate() {
            let (sign, mag) = if c < 0.0 { ("-", -c) } else { ("+", c) };
            if i == 0 {
                if sign == "-" {
                    write!(f, "-")?;
                }
            } else {
                write!(f, " {sign} ")?;
            }
            if a.is_zero() {
                write!(f, "{mag}")?;
            } else if (mag - 1.0).abs() < COEFF_EPS {
                write!(f, "{}", a.monomial_string())?;
            } else {
                write!(f, "{mag} {}", a.monomial_string())?;
            }
        }
        Ok(())
    }
}

impl Add for &Polynomial {
    type Output = Polynomial;
    fn add(self, rhs: &Polynomial) -> Polynomial {
        self.combine(rhs, 1.0)
    }
}

impl Sub for &Polynomial {
    type Output = Polynomial;
    fn sub(self, rhs: &Polynomial) -> Polynomial {
        self.combine(rhs, -1.0)
    }
}

impl Mul for &Polynomial {
    type Output = Polynomial;
    fn mul(self, rhs: &Polynomial) -> Polynomial {
        assert_eq!(self.nvars, rhs.nvars, "polynomials over different variables");
        let mut terms: BTreeMap<MultiIndex, f64> = BTreeMap::new();
        for (a, &ca) in &self.terms {
            for (b, &cb) in &rhs.terms {
                *terms.entry(a.add(b)).or_insert(0.0) += ca * cb;
            }
        }
        let mut p = Polynomial {
            nvars: self.nvars,
            terms,
        };
        p.normalize();
        p
    }
}

impl Neg for &Polynomial {
    type Output = Polynomial;
    fn neg(self) -> Polynomial {
        self.scale(-1.0)
    }
}

macro_rules! forward_owned {
    ($tr:ident, $m:ident) => {
        impl $tr for Polynomial {
            type Output = Polynomial;
            fn $m(self, rhs: Polynomial) -> Polynomial {
                (&self).$m(&rhs)
            }
        }
    };
}
forward_owned!(Add, add);
forward_owned!(Sub, sub);
forward_owned!(Mul, mul);

/// Finite set of monomials kept in graded-lex order.
#[derive(Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MonomialSet {
    nvars: usize,
    indices: BTreeSet<MultiIndex>,
}

impl MonomialSet {
    /// Builds a set, rejecting duplicates and dimension mismatches.
    pub fn new<I>(nvars: usize, indices: I) -> Result<Self>
    where
        I: IntoIterator<Item = MultiIndex>,
    {
        let mut set = BTreeSet::new();
        for a in indices {
            if a.nvars() != nvars {
                return Err(Error::DimensionMismatch {
                    expected: nvars,
                    got: a.nvars(),
                });
            }
            if !set.insert(a.clone()) {
                return Err(Error::Invalid(format!("duplicate monomial {a}")));
            }
        }
        Ok(MonomialSet {
            nvars,
            indices: set,
        })
    }

    pub(crate) fn from_set(nvars: usize, indices: BTreeSet<MultiIndex>) -> Self {
        MonomialSet { nvars, indices }
    }

    pub fn empty(nvars: usize) -> Self {
        MonomialSet {
            nvars,
            indices: BTreeSet::new(),
        }
    }

    /// All monomials of total degree at most `degree`.
    pub fn up_to_degree(nvars: usize, degree: u32) -> Self {
        let indices = (0..=degree)
            .flat_map(|d| indices_of_degree(nvars, d))
            .collect();
        MonomialSet { nvars, indices }
    }

    pub fn nvars(&self) -> usize {
        self.nvars
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn contains(&self, alpha: &MultiIndex) -> bool {
        self.indices.contains(alpha)
    }

    pub fn iter(&self) -> impl Iterator<Item = &MultiIndex> {
        self.indices.iter()
    }

    pub fn to_vec(&self) -> Vec<MultiIndex> {
        self.indices.iter().cloned().collect()
    }

    pub fn max_degree(&self) -> Option<u32> {
        self.indices.iter().map(|a| a.degree()).max()
    }

    pub fn insert(&mut self, alpha: MultiIndex) -> bool {
        self.indices.insert(alpha)
    }

    pub fn union(&self, other: &MonomialSet) -> MonomialSet {
        MonomialSet {
            nvars: self.nvars,
            indices: self.indices.union(&other.indices).cloned().collect(),
        }
    }

    /// True iff the set holds the unit monomial and every member is the end
    /// of a staircase path from the unit that stays inside the set.
    pub fn is_connected(&self) -> bool {
        let zero = MultiIndex::zero(self.nvars);
        if !self.indices.contains(&zero) {
            return false;
        }
        let mut seen: BTreeSet<&MultiIndex> = BTreeSet::new();
        let mut queue = VecDeque::new();
        seen.insert(self.indices.get(&zero).expect("checked above"));
        queue.push_back(zero);
        while let Some(a) = queue.pop_front() {
            for i in 0..self.nvars {
                let next = a.shift(i);
                if let Some(member) = self.indices.get(&next) {
                    if seen.insert(member) {
                        queue.push_back(next);
                    }
                }
            }
        }
        seen.len() == self.indices.len()
    }

    /// `C ∪ X_1 C ∪ ... ∪ X_n C`.
    pub fn closure(&self) -> MonomialSet {
        let mut out = self.indices.clone();
        for a in &self.indices {
            for i in 0..self.nvars {
                out.insert(a.shift(i));
            }
        }
        MonomialSet::from_set(self.nvars, out)
    }

    /// The border `C⁺ \ C`.
    pub fn border(&self) -> MonomialSet {
        let mut out = BTreeSet::new();
        for a in &self.indices {
            for i in 0..self.nvars {
                let b = a.shift(i);
                if !self.indices.contains(&b) {
                    out.insert(b);
                }
            }
        }
        MonomialSet::from_set(self.nvars, out)
    }

    /// True iff every predecessor `alpha - e_i` of a member is a member.
    pub fn is_downward_closed(&self) -> bool {
        self.indices.iter().all(|a| {
            (0..self.nvars).all(|i| a.unshift(i).is_none_or(|b| self.indices.contains(&b)))
        })
    }

    /// Pairwise sums `alpha + beta` over the set.
    pub fn sums(&self) -> MonomialSet {
        let mut out = BTreeSet::new();
        for a in &self.indices {
            for b in &self.indices {
                out.insert(a.add(b));
            }
        }
        MonomialSet::from_set(self.nvars, out)
    }
}

impl fmt::Debug for MonomialSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set()
            .entries(self.indices.iter().map(|a| a.monomial_string()))
            .finish()
    }
}

impl<'a> IntoIterator for &'a MonomialSet {
    type Item = &'a MultiIndex;
    type IntoIter = std::collections::btree_set::Iter<'a, MultiIndex>;
    fn into_iter(self) -> Self::IntoIter {
        self.indices.iter()
    }
}
