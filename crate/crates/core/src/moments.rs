//! Moment sequences, the Riesz functional and finitely atomic measures.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::poly::{MonomialSet, MultiIndex, Polynomial};

/// Atoms closer than this (Euclidean) are merged into one.
pub const ATOM_MERGE_TOL: f64 = 1e-7;

/// Moment values `gamma_alpha` on a finite monomial set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentSequence {
    nvars: usize,
    #[serde(with = "crate::poly::index_pairs")]
    values: BTreeMap<MultiIndex, f64>,
}

impl MomentSequence {
    /// Requires the zero index with a positive value.
    pub fn new(nvars: usize, values: BTreeMap<MultiIndex, f64>) -> Result<Self> {
        for a in values.keys() {
            if a.nvars() != nvars {
                return Err(Error::DimensionMismatch {
                    expected: nvars,
                    got: a.nvars(),
                });
            }
        }
        match values.get(&MultiIndex::zero(nvars)) {
            None => return Err(Error::MissingMass),
            Some(&m) if !(m > 0.0) => return Err(Error::NonPositiveMass(m)),
            _ => {}
        }
        Ok(MomentSequence { nvars, values })
    }

    pub fn from_pairs<I>(nvars: usize, pairs: I) -> Result<Self>
    where
        I: IntoIterator<Item = (MultiIndex, f64)>,
    {
        let mut values = BTreeMap::new();
        for (a, v) in pairs {
            if values.insert(a.clone(), v).is_some() {
                return Err(Error::Invalid(format!("moment {a} given twice")));
            }
        }
        Self::new(nvars, values)
    }

    /// Univariate convenience: `gamma_k = values[k]`.
    pub fn univariate(values: &[f64]) -> Result<Self> {
        Self::from_pairs(
            1,
            values
                .iter()
                .enumerate()
                .map(|(k, &v)| (MultiIndex::from([k as u32]), v)),
        )
    }

    pub fn nvars(&self) -> usize {
        self.nvars
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, alpha: &MultiIndex) -> Option<f64> {
        self.values.get(alpha).copied()
    }

    pub fn value(&self, alpha: &MultiIndex) -> Result<f64> {
        self.get(alpha).ok_or_else(|| Error::MissingMoment(alpha.clone()))
    }

    pub fn contains(&self, alpha: &MultiIndex) -> bool {
        self.values.contains_key(alpha)
    }

    /// `gamma_0`, the total mass.
    pub fn mass(&self) -> f64 {
        self.values[&MultiIndex::zero(self.nvars)]
    }

    pub fn support(&self) -> MonomialSet {
        MonomialSet::from_set(self.nvars, self.values.keys().cloned().collect())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&MultiIndex, f64)> {
        self.values.iter().map(|(a, &v)| (a, v))
    }

    pub fn scaled(&self, c: f64) -> Result<Self> {
        Self::new(
            self.nvars,
            self.values.iter().map(|(a, &v)| (a.clone(), v * c)).collect(),
        )
    }

    /// Restriction to the indices of `set`; every index must be present.
    pub fn restrict(&self, set: &MonomialSet) -> Result<Self> {
        let mut values = BTreeMap::new();
        for a in set {
            values.insert(a.clone(), self.value(a)?);
        }
        Self::new(self.nvars, values)
    }

    /// Adds values for new indices; existing entries are left unchanged.
    pub fn extended_with<I>(&self, extra: I) -> Self
    where
        I: IntoIterator<Item = (MultiIndex, f64)>,
    {
        let mut values = self.values.clone();
        for (a, v) in extra {
            values.entry(a).or_insert(v);
        }
        MomentSequence {
            nvars: self.nvars,
            values,
        }
    }

    /// The Riesz functional `p -> sum_alpha p_alpha gamma_alpha`.
    pub fn riesz(&self, p: &Polynomial) -> Result<f64> {
        riesz_eval(self, p)
    }
}

/// Evaluates the Riesz functional; fails on the first monomial of `p` that
/// has no moment.
pub fn riesz_eval(gamma: &MomentSequence, p: &Polynomial) -> Result<f64> {
    if p.nvars() != gamma.nvars {
        return Err(Error::DimensionMismatch {
            expected: gamma.nvars,
            got: p.nvars(),
        });
    }
    let mut acc = 0.0;
    for (a, c) in p.terms() {
        acc += c * gamma.value(a)?;
    }
    Ok(acc)
}

/// Finitely atomic positive measure `sum_i w_i delta_{x_i}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AtomicMeasure {
    nvars: usize,
    atoms: Vec<Vec<f64>>,
    weights: Vec<f64>,
}

impl AtomicMeasure {
    /// Validates positivity and dimensions, and merges atoms closer than
    /// [`ATOM_MERGE_TOL`] (weights summed, position weight-averaged).
    pub fn new(nvars: usize, atoms: Vec<Vec<f64>>, weights: Vec<f64>) -> Result<Self> {
        if atoms.len() != weights.len() {
            return Err(Error::InvalidMeasure(format!(
                "{} atoms but {} weights",
                atoms.len(),
                weights.len()
            )));
        }
        for x in &atoms {
            if x.len() != nvars {
                return Err(Error::DimensionMismatch {
                    expected: nvars,
                    got: x.len(),
                });
            }
            if x.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidMeasure(format!("non-finite atom {x:?}")));
            }
        }
        if let Some(w) = weights.iter().find(|w| !(**w > 0.0) || !w.is_finite()) {
            return Err(Error::InvalidMeasure(format!("weight {w} is not positive")));
        }
        let mut merged_atoms: Vec<Vec<f64>> = Vec::with_capacity(atoms.len());
        let mut merged_weights: Vec<f64> = Vec::with_capacity(atoms.len());
        for (x, w) in atoms.into_iter().zip(weights) {
            match merged_atoms
                .iter()
                .position(|y| euclidean(&x, y) <= ATOM_MERGE_TOL)
            {
                Some(j) => {
                    let total = merged_weights[j] + w;
                    for (yk, xk) in merged_atoms[j].iter_mut().zip(&x) {
                        *yk = (*yk * merged_weights[j] + xk * w) / total;
                    }
                    merged_weights[j] = total;
                }
                None => {
                    merged_atoms.push(x);
                    merged_weights.push(w);
                }
            }
        }
        Ok(AtomicMeasure {
            nvars,
            atoms: merged_atoms,
            weights: merged_weights,
        })
    }

    pub fn dirac(x: Vec<f64>) -> Self {
        let nvars = x.len();
        AtomicMeasure {
            nvars,
            atoms: vec![x],
            weights: vec![1.0],
        }
    }

    pub fn nvars(&self) -> usize {
        self.nvars
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn atoms(&self) -> &[Vec<f64>] {
        &self.atoms
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn mass(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// `sum_i w_i x_i^alpha`.
    pub fn moment(&self, alpha: &MultiIndex) -> f64 {
        self.atoms
            .iter()
            .zip(&self.weights)
            .map(|(x, w)| w * alpha.eval(x))
            .sum()
    }

    /// `sum_i w_i p(x_i)`.
    pub fn integrate(&self, p: &Polynomial) -> f64 {
        self.atoms
            .iter()
            .zip(&self.weights)
            .map(|(x, w)| w * p.eval_unchecked(x))
            .sum()
    }

    pub fn scaled(&self, c: f64) -> Self {
        AtomicMeasure {
            nvars: self.nvars,
            atoms: self.atoms.clone(),
            weights: self.weights.iter().map(|w| w * c).collect(),
        }
    }

    /// Atoms sorted lexicographically by coordinates, with weights.
    pub fn sorted(&self) -> Vec<(Vec<f64>, f64)> {
        let mut v: Vec<_> = self
            .atoms
            .iter()
            .cloned()
            .zip(self.weights.iter().copied())
            .collect();
        v.sort_by(|a, b| {
            a.0.iter()
                .zip(&b.0)
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        v
    }
}

impl AtomicMeasure {
    /// Pairs each atom of `self` with the nearest unused atom of `other` and
    /// returns the worst (position distance, weight difference). `None` when
    /// the atom counts differ.
    pub fn matching_error(&self, other: &AtomicMeasure) -> Option<(f64, f64)> {
        if self.len() != other.len() {
            return None;
        }
        let mut used = vec![false; other.len()];
        let (mut dx, mut dw) = (0.0f64, 0.0f64);
        for (x, w) in self.atoms.iter().zip(&self.weights) {
            let (j, d) = other
                .atoms
                .iter()
                .enumerate()
                .filter(|(j, _)| !used[*j])
                .map(|(j, y)| (j, euclidean(x, y)))
                .min_by(|a, b| a.1.total_cmp(&b.1))?;
            used[j] = true;
            dx = dx.max(d);
            dw = dw.max((w - other.weights[j]).abs());
        }
        Some((dx, dw))
    }
}

pub(crate) fn euclidean(x: &[f64], y: &[f64]) -> f64 {
    x.iter()
        .zip(y)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt()
}

/// Moments of an atomic measure on the monomial set `set`.
pub fn moments_of_atomic(mu: &AtomicMeasure, set: &MonomialSet) -> Result<MomentSequence> {
    if mu.nvars != set.nvars() {
        return Err(Error::DimensionMismatch {
            expected: set.nvars(),
            got: mu.nvars,
        });
    }
    let values = set.iter().map(|a| (a.clone(), mu.moment(a))).collect();
    MomentSequence::new(set.nvars(), values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn uni(deg: u32) -> MonomialSet {
        MonomialSet::up_to_degree(1, deg)
    }

    #[test]
    fn single_atom_powers() {
        let g = moments_of_atomic(&AtomicMeasure::dirac(vec![2.0]), &uni(2)).unwrap();
        let v: Vec<f64> = g.iter().map(|(_, v)| v).collect();
        assert_eq!(v, vec![1.0, 2.0, 4.0]);
    }

    #[test]
    fn two_atoms_in_the_plane() {
        let mu = AtomicMeasure::new(2, vec![vec![0.0, 0.0], vec![1.0, 1.0]], vec![0.5, 0.5]).unwrap();
        let set = MonomialSet::new(
            2,
            [[0, 0], [1, 0], [0, 1], [1, 1]].map(MultiIndex::from),
        )
        .unwrap();
        let g = moments_of_atomic(&mu, &set).unwrap();
        assert_eq!(g.mass(), 1.0);
        for a in [[1, 0], [0, 1], [1, 1]] {
            assert_eq!(g.get(&MultiIndex::from(a)), Some(0.5));
        }
    }

    #[test]
    fn symmetric_atoms_cancel_odd_moment() {
        let mu = AtomicMeasure::new(1, vec![vec![1.0], vec![-1.0]], vec![1.0, 1.0]).unwrap();
        let g = moments_of_atomic(&mu, &uni(2)).unwrap();
        let v: Vec<f64> = g.iter().map(|(_, v)| v).collect();
        assert_eq!(v, vec![2.0, 0.0, 2.0]);
    }

    #[test]
    fn riesz_examples() {
        let g = MomentSequence::univariate(&[1.0, 1.0, 1.0, 1.0, 2.0]).unwrap();
        let q = Polynomial::from_terms(
            1,
            vec![(MultiIndex::from([4]), 1.0), (MultiIndex::from([3]), -1.0)],
        )
        .unwrap();
        assert_eq!(riesz_eval(&g, &q).unwrap(), 1.0);
        assert_eq!(riesz_eval(&g, &Polynomial::zero(1)).unwrap(), 0.0);

        let mu = AtomicMeasure::new(1, vec![vec![0.0], vec![1.0]], vec![0.5, 0.5]).unwrap();
        let g = moments_of_atomic(&mu, &uni(2)).unwrap();
        let p = Polynomial::from_terms(
            1,
            vec![(MultiIndex::from([2]), 1.0), (MultiIndex::from([1]), -1.0)],
        )
        .unwrap();
        assert_eq!(riesz_eval(&g, &p).unwrap(), 0.0);
    }

    #[test]
    fn missing_moment_is_named() {
        let g = MomentSequence::univariate(&[1.0, 0.5]).unwrap();
        let p = Polynomial::monomial(MultiIndex::from([3]), 1.0);
        assert_eq!(
            riesz_eval(&g, &p),
            Err(Error::MissingMoment(MultiIndex::from([3])))
        );
    }

    #[test]
    fn mass_must_be_positive_and_present() {
        assert_eq!(
            MomentSequence::univariate(&[0.0, 1.0]),
            Err(Error::NonPositiveMass(0.0))
        );
        let r = MomentSequence::from_pairs(1, vec![(MultiIndex::from([1]), 1.0)]);
        assert_eq!(r, Err(Error::MissingMass));
    }

    #[test]
    fn close_atoms_merge() {
        let mu = AtomicMeasure::new(1, vec![vec![1.0], vec![1.0 + 1e-9], vec![2.0]], vec![0.25, 0.25, 0.5])
            .unwrap();
        assert_eq!(mu.len(), 2);
        assert!((mu.weights()[0] - 0.5).abs() < 1e-15);
        assert!(AtomicMeasure::new(1, vec![vec![1.0]], vec![-1.0]).is_err());
    }

    fn arb_measure() -> impl Strategy<Value = AtomicMeasure> {
        proptest::collection::vec(
            (proptest::collection::vec(-2.0f64..2.0, 2), 0.05f64..1.0),
            1..5,
        )
        .prop_map(|v| {
            let (atoms, weights) = v.into_iter().unzip();
            AtomicMeasure::new(2, atoms, weights).unwrap()
        })
    }

    fn arb_poly(deg: u32) -> impl Strategy<Value = Polynomial> {
        let basis = MonomialSet::up_to_degree(2, deg).to_vec();
        let n = basis.len();
        proptest::collection::vec(-1.0f64..1.0, n).prop_map(move |c| {
            Polynomial::from_terms(2, basis.iter().cloned().zip(c)).unwrap()
        })
    }

    proptest! {
        #[test]
        fn riesz_round_trip_matches_integration(mu in arb_measure(), p in arb_poly(4)) {
            let g = moments_of_atomic(&mu, &MonomialSet::up_to_degree(2, 4)).unwrap();
            let lhs = riesz_eval(&g, &p).unwrap();
            let rhs = mu.integrate(&p);
            prop_assert!((lhs - rhs).abs() <= 1e-10 * (1.0 + rhs.abs()));
        }

        #[test]
        fn riesz_is_linear(mu in arb_measure(), p in arb_poly(3), q in arb_poly(3), a in -2.0f64..2.0) {
            let g = moments_of_atomic(&mu, &MonomialSet::up_to_degree(2, 3)).unwrap();
            let lhs = riesz_eval(&g, &(&p.scale(a) + &q)).unwrap();
            let rhs = a * riesz_eval(&g, &p).unwrap() + riesz_eval(&g, &q).unwrap();
            prop_assert!((lhs - rhs).abs() <= 1e-10 * (1.0 + rhs.abs()));
        }

        #[test]
        fn squares_times_box_constraints_are_nonnegative(
            atoms in proptest::collection::vec(proptest::collection::vec(0.0f64..1.0, 2), 1..5),
            q in arb_poly(1),
        ) {
            let n = atoms.len();
            let mu = AtomicMeasure::new(2, atoms, vec![1.0 / n as f64; n]).unwrap();
            let g = moments_of_atomic(&mu, &MonomialSet::up_to_degree(2, 3)).unwrap();
            let s = Polynomial::var(2, 0);
            let one_minus_t = &Polynomial::constant(2, 1.0) - &Polynomial::var(2, 1);
            for c in [s, one_minus_t] {
                let v = riesz_eval(&g, &(&(&q * &q) * &c)).unwrap();
                prop_assert!(v >= -1e-9);
            }
        }
    }
}
