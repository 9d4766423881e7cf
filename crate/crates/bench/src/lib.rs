//! Fixed problem instances shared by the benchmarks.

use tmoment_core::moments::moments_of_atomic;
use tmoment_core::scp::{Direction, WeightFamily};
use tmoment_core::{AtomicMeasure, MomentSequence, MonomialSet};

/// Moments through `degree` of a measure with `r` atoms spread over
/// `[-1, 1]^n` along a fixed curve. The curve has no central symmetry, so
/// six planar atoms do not sit on a common conic.
pub fn atomic_problem(n: usize, r: usize, degree: u32) -> (MomentSequence, MonomialSet) {
    let atoms = (0..r)
        .map(|i| {
            let t = -1.0 + 2.0 * (i as f64 + 0.5) / r as f64;
            (0..n).map(|k| (t * (k as f64 + 1.0) + 0.2 + 0.3 * k as f64).sin()).collect()
        })
        .collect();
    let weights = (0..r).map(|i| 1.0 / (i as f64 + 2.0)).collect();
    let mu = AtomicMeasure::new(n, atoms, weights).expect("distinct atoms");
    let set = MonomialSet::up_to_degree(n, degree);
    let gamma = moments_of_atomic(&mu, &set).expect("moments of an atomic measure");
    (gamma, set)
}

/// The 2-by-2 weight family with squared weights a = b = 1/4, c..f = 1/2.
pub fn omega1() -> WeightFamily {
    let mut w = WeightFamily::new();
    for (d, k1, k2, sq) in [
        (Direction::Alpha, 0, 0, 0.25),
        (Direction::Beta, 0, 0, 0.25),
        (Direction::Alpha, 1, 0, 0.5),
        (Direction::Beta, 0, 1, 0.5),
        (Direction::Alpha, 0, 1, 0.5),
        (Direction::Beta, 1, 0, 0.5),
    ] {
        w.insert_squared(d, k1, k2, sq).expect("weights in range");
    }
    w
}
