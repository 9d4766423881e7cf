//! Dominating polynomials for monomials and for whole degree-bounded spaces,
//! a sampling falsifier for `sup |b/p| < inf`, and the positive-part norm
//! `max_K max(0, a)` on compact grids.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::poly::{indices_of_degree, variable_names, MultiIndex, Polynomial};

pub const DEFAULT_GRID_STEPS: usize = 101;
pub const DEFAULT_RADII: [f64; 4] = [1.0, 10.0, 100.0, 1000.0];

/// Finite sample standing in for a compact set `K`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridK {
    points: Vec<Vec<f64>>,
    description: String,
}

impl GridK {
    pub fn from_points(points: Vec<Vec<f64>>) -> Result<Self> {
        let Some(first) = points.first() else {
            return Err(Error::Invalid("grid has no points".into()));
        };
        let n = first.len();
        if let Some(p) = points.iter().find(|p| p.len() != n) {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: p.len(),
            });
        }
        let description = format!("explicit list of {} points", points.len());
        Ok(GridK {
            points,
            description,
        })
    }

    /// Axis-aligned box with `steps` equispaced points per axis, endpoints
    /// included.
    pub fn boxed(bounds: &[(f64, f64)], steps: usize) -> Result<Self> {
        if bounds.is_empty() {
            return Err(Error::Invalid("box needs at least one axis".into()));
        }
        if steps == 0 {
            return Err(Error::Invalid("grid needs at least one step".into()));
        }
        if let Some((lo, hi)) = bounds.iter().find(|(lo, hi)| !(lo <= hi)) {
            return Err(Error::Invalid(format!("empty interval [{lo}, {hi}]")));
        }
        let axes: Vec<Vec<f64>> = bounds
            .iter()
            .map(|&(lo, hi)| axis_points(lo, hi, steps))
            .collect();
        let mut points = vec![Vec::with_capacity(bounds.len())];
        for axis in &axes {
            points = points
                .into_iter()
                .flat_map(|p| {
                    axis.iter().map(move |&v| {
                        let mut q = p.clone();
                        q.push(v);
                        q
                    })
                })
                .collect();
        }
        let description = format!(
            "box {} with {steps} points per axis",
            bounds
                .iter()
                .map(|(lo, hi)| format!("[{lo}, {hi}]"))
                .collect::<Vec<_>>()
                .join(" x ")
        );
        Ok(GridK {
            points,
            description,
        })
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn description(&self) -> &str {
        &self.description
    }

    pub fn nvars(&self) -> usize {
        self.points[0].len()
    }
}

pub(crate) fn axis_points(lo: f64, hi: f64, steps: usize) -> Vec<f64> {
    if steps == 1 {
        return vec![lo];
    }
    (0..steps)
        .map(|i| {
            if i + 1 == steps {
                hi
            } else {
                lo + (hi - lo) * i as f64 / (steps - 1) as f64
            }
        })
        .collect()
}

/// Polynomial `p >= 1` with `|x^alpha| <= p(x)` everywhere.
///
/// Writes `alpha = gamma + 2 beta` with `gamma` a 0/1 vector. When `gamma`
/// is nonzero the bound is AM-GM on `|x^gamma|` followed by
/// `|a|^r <= (1 + a^2)^ceil((r+1)/2)`:
///
/// `p = (1/|gamma|) sum_i gamma_i (1 + X_i^2)^ceil((|gamma|+1)/2) * prod_i (1 + X_i^2)^beta_i`
///
/// and otherwise `p = prod_i (1 + X_i^2)^beta_i`.
pub fn dominate_monomial(alpha: &MultiIndex) -> Result<Polynomial> {
    if alpha.is_zero() {
        return Err(Error::ZeroMultiIndex);
    }
    let n = alpha.nvars();
    let one = Polynomial::constant(n, 1.0);
    let lift = |i: usize| {
        let x = Polynomial::var(n, i);
        &one + &(&x * &x)
    };
    let parity: Vec<u32> = alpha.exponents().iter().map(|e| e % 2).collect();
    let half: Vec<u32> = alpha.exponents().iter().map(|e| e / 2).collect();
    let odd_count: u32 = parity.iter().sum();

    let mut even_part = one.clone();
    for (i, &b) in half.iter().enumerate() {
        if b > 0 {
            even_part = &even_part * &lift(i).pow(b);
        }
    }
    if odd_count == 0 {
        return Ok(even_part);
    }
    let power = (odd_count + 2) / 2; // ceil((|gamma| + 1) / 2)
    let mut odd_part = Polynomial::zero(n);
    for (i, &g) in parity.iter().enumerate() {
        if g == 1 {
            odd_part = &odd_part + &lift(i).pow(power);
        }
    }
    Ok(&odd_part.scale(1.0 / odd_count as f64) * &even_part)
}

/// [`dominate_monomial`] in factored form, e.g. `(1+X^2)^2` for `X^3`.
pub fn dominator_formula(alpha: &MultiIndex) -> Result<String> {
    if alpha.is_zero() {
        return Err(Error::ZeroMultiIndex);
    }
    let names = variable_names(alpha.nvars());
    let factor = |i: usize, e: u32| match e {
        1 => format!("(1+{}^2)", names[i]),
        e => format!("(1+{}^2)^{e}", names[i]),
    };
    let mut half: Vec<u32> = alpha.exponents().iter().map(|e| e / 2).collect();
    let odd: Vec<usize> = (0..half.len()).filter(|&i| alpha.exponents()[i] % 2 == 1).collect();
    let power = (odd.len() as u32 + 2) / 2;
    let mut head = String::new();
    match odd.as_slice() {
        [] => {}
        [i] => half[*i] += power,
        many => {
            let sum: Vec<String> = many.iter().map(|&i| factor(i, power)).collect();
            head = format!("(1/{})[{}]", many.len(), sum.join(" + "));
        }
    }
    let product: Vec<String> = half
        .iter()
        .enumerate()
        .filter(|(_, &e)| e > 0)
        .map(|(i, &e)| factor(i, e))
        .collect();
    Ok(format!("{head}{}", product.join("")))
}

/// `1 + sum_{1 <= |alpha| <= k} dominate_monomial(alpha)` in `n` variables.
pub fn dominate_space(k: u32, n: usize) -> Result<Polynomial> {
    if k == 0 {
        return Err(Error::Invalid("degree bound must be at least 1".into()));
    }
    let mut p = Polynomial::constant(n, 1.0);
    for d in 1..=k {
        for alpha in indices_of_degree(n, d) {
            p = &p + &dominate_monomial(&alpha)?;
        }
    }
    Ok(p)
}

/// Where `boundedness_check` samples the ratio.
#[derive(Clone, Debug, PartialEq)]
pub enum Sample {
    Grid(GridK),
    /// Rays through the given directions at growing radii.
    Radial { radii: Vec<f64>, directions: Vec<Vec<f64>> },
}

impl Sample {
    /// Coordinate axes (both signs) and the main diagonals, at the default
    /// radii.
    pub fn default_radial(nvars: usize) -> Sample {
        let mut directions = Vec::new();
        for i in 0..nvars {
            for s in [1.0, -1.0] {
                let mut d = vec![0.0; nvars];
                d[i] = s;
                directions.push(d);
            }
        }
        if nvars > 1 {
            let norm = (nvars as f64).sqrt();
            for s in [1.0, -1.0] {
                directions.push(vec![s / norm; nvars]);
            }
        }
        Sample::Radial {
            radii: DEFAULT_RADII.to_vec(),
            directions,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Boundedness {
    pub sup_estimate: f64,
    /// Evidence only: `false` is a counterexample, `true` is not a proof.
    pub trend_bounded: bool,
    /// Largest log10-slope of the ratio between the two outermost radii.
    pub tail_slope: f64,
}

/// Ratios whose log-log slope between the two outermost radii exceeds this
/// count as growing.
const SLOPE_TOL: f64 = 0.05;

/// Samples `|b/p|`. Always probes rays at the default radii (plus one decade
/// further) for the trend; a grid sample only contributes to the supremum.
pub fn boundedness_check(b: &Polynomial, p: &Polynomial, sample: &Sample) -> Result<Boundedness> {
    let n = p.nvars();
    if b.nvars() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: b.nvars(),
        });
    }
    let ratio = |x: &[f64]| -> Result<f64> {
        let den = p.eval(x)?;
        if !(den > 0.0) {
            return Err(Error::NonPositiveDenominator {
                point: x.to_vec(),
                value: den,
            });
        }
        Ok((b.eval(x)? / den).abs())
    };
    let mut sup = 0.0f64;
    let radial = match sample {
        Sample::Grid(grid) => {
            for x in grid.points() {
                sup = sup.max(ratio(x)?);
            }
            Sample::default_radial(n)
        }
        s @ Sample::Radial { .. } => s.clone(),
    };
    let Sample::Radial { radii, directions } = radial else {
        unreachable!()
    };
    let mut radii = radii;
    radii.sort_by(f64::total_cmp);
    let last = *radii.last().ok_or_else(|| Error::Invalid("no radii".into()))?;
    radii.push(last * 10.0);
    let mut tail_slope = f64::NEG_INFINITY;
    for d in &directions {
        let mut prev: Option<(f64, f64)> = None;
        for &r in &radii {
            let x: Vec<f64> = d.iter().map(|v| v * r).collect();
            let q = ratio(&x)?;
            if r <= last {
                sup = sup.max(q);
            }
            if r > last {
                if let Some((r0, q0)) = prev {
                    let slope = if q0 == 0.0 && q == 0.0 {
                        0.0
                    } else if q0 == 0.0 {
                        f64::INFINITY
                    } else {
                        (q / q0).log10() / (r / r0).log10()
                    };
                    tail_slope = tail_slope.max(slope);
                }
            }
            prev = Some((r, q));
        }
    }
    Ok(Boundedness {
        sup_estimate: sup,
        trend_bounded: tail_slope <= SLOPE_TOL,
        tail_slope,
    })
}

/// `max_{x in K} max(0, a(x))`.
pub fn positive_part_norm(a: &Polynomial, k: &GridK) -> Result<f64> {
    let mut best = 0.0f64;
    for x in k.points() {
        best = best.max(a.eval(x)?);
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn x1() -> Polynomial {
        Polynomial::var(1, 0)
    }

    fn one_plus_sq(n: usize, i: usize) -> Polynomial {
        let x = Polynomial::var(n, i);
        &Polynomial::constant(n, 1.0) + &(&x * &x)
    }

    #[test]
    fn dominators_of_low_monomials() {
        assert_eq!(dominate_monomial(&MultiIndex::from([3])).unwrap(), one_plus_sq(1, 0).pow(2));
        assert_eq!(dominate_monomial(&MultiIndex::from([2])).unwrap(), one_plus_sq(1, 0));
        let expect = (&one_plus_sq(2, 0).pow(2) + &one_plus_sq(2, 1).pow(2)).scale(0.5);
        assert_eq!(dominate_monomial(&MultiIndex::from([1, 1])).unwrap(), expect);
        assert_eq!(dominate_monomial(&MultiIndex::from([0, 0])), Err(Error::ZeroMultiIndex));
    }

    #[test]
    fn factored_forms() {
        assert_eq!(dominator_formula(&MultiIndex::from([3])).unwrap(), "(1+X^2)^2");
        assert_eq!(dominator_formula(&MultiIndex::from([2])).unwrap(), "(1+X^2)");
        assert_eq!(dominator_formula(&MultiIndex::from([1, 1])).unwrap(), "(1/2)[(1+s^2)^2 + (1+t^2)^2]");
        assert_eq!(dominator_formula(&MultiIndex::from([1, 2])).unwrap(), "(1+s^2)(1+t^2)");
    }

    #[test]
    fn space_dominators() {
        let two_plus = &Polynomial::constant(1, 2.0) + &(&x1() * &x1());
        assert_eq!(dominate_space(1, 1).unwrap(), two_plus);
        let three_plus = &Polynomial::constant(1, 3.0) + &(&x1() * &x1()).scale(2.0);
        assert_eq!(dominate_space(2, 1).unwrap(), three_plus);
        assert_eq!(dominate_space(3, 1).unwrap().degree(), Some(4));
        for k in 1..=6u32 {
            for n in 1..=3 {
                let deg = dominate_space(k, n).unwrap().degree().unwrap();
                let bound = if k % 2 == 1 { k + 1 } else { k + 2 };
                assert!(deg <= bound, "k={k} n={n} deg={deg}");
            }
        }
    }

    #[test]
    fn boundedness_examples() {
        let x3 = x1().pow(3);
        let p = one_plus_sq(1, 0).pow(2);
        let grid = GridK::boxed(&[(-50.0, 50.0)], 2001).unwrap();
        let r = boundedness_check(&x3, &p, &Sample::Grid(grid)).unwrap();
        assert!(r.trend_bounded);
        assert!(r.sup_estimate <= 1.0);

        let r = boundedness_check(&x1().pow(4), &one_plus_sq(1, 0), &Sample::default_radial(1)).unwrap();
        assert!(!r.trend_bounded);
        assert!((r.tail_slope - 2.0).abs() < 1e-3);

        let r = boundedness_check(&Polynomial::zero(1), &p, &Sample::default_radial(1)).unwrap();
        assert_eq!(r.sup_estimate, 0.0);
        assert!(r.trend_bounded);

        // same degree: ratio creeps up towards 1 but stays bounded
        let r = boundedness_check(&x1().pow(2), &one_plus_sq(1, 0), &Sample::default_radial(1)).unwrap();
        assert!(r.trend_bounded);
    }

    #[test]
    fn nonpositive_denominator_is_an_error() {
        let grid = GridK::from_points(vec![vec![0.0]]).unwrap();
        let r = boundedness_check(&x1(), &x1(), &Sample::Grid(grid));
        assert!(matches!(r, Err(Error::NonPositiveDenominator { .. })));
    }

    #[test]
    fn positive_part_examples() {
        let grid = GridK::boxed(&[(0.0, 2.0)], DEFAULT_GRID_STEPS).unwrap();
        let a = &x1() - &Polynomial::constant(1, 1.0);
        assert_eq!(positive_part_norm(&a, &grid).unwrap(), 1.0);
        let neg = (&Polynomial::constant(1, 1.0) + &(&x1() * &x1())).scale(-1.0);
        assert_eq!(positive_part_norm(&neg, &grid).unwrap(), 0.0);
        let single = GridK::from_points(vec![vec![0.7]]).unwrap();
        assert_eq!(positive_part_norm(&x1(), &single).unwrap(), 0.7);
    }

    #[test]
    fn grid_endpoints_are_exact() {
        let g = GridK::boxed(&[(0.0, 0.5), (-1.0, 3.0)], 7).unwrap();
        assert_eq!(g.points().len(), 49);
        assert_eq!(g.points().last().unwrap(), &vec![0.5, 3.0]);
        assert_eq!(g.points()[0], vec![0.0, -1.0]);
    }

    proptest! {
        #[test]
        fn dominator_bounds_monomial_pointwise(
            e in proptest::collection::vec(0u32..4, 2),
            x in proptest::collection::vec(-30.0f64..30.0, 2),
        ) {
            let alpha = MultiIndex::new(e);
            prop_assume!(!alpha.is_zero());
            let p = dominate_monomial(&alpha).unwrap();
            let v = p.eval(&x).unwrap();
            prop_assert!(v >= 1.0);
            prop_assert!(v >= alpha.eval(&x).abs() * (1.0 - 1e-12));
        }
    }
}
