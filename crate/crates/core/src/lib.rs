//! Numerical toolkit for truncated moment problems on polynomial algebras.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cubature;
pub mod dominating;
pub mod error;
pub mod extraction;
pub mod flat;
pub mod matrix;
pub mod moments;
pub mod poly;
pub mod scp;

mod linalg;

pub use error::{Error, Result};
pub use flat::{solve_tmp, SolveCertificate, SolveOptions, Verdict, Witness};
pub use matrix::{Constraint, MomentMatrix, PsdReport};
pub use moments::{AtomicMeasure, MomentSequence};
pub use poly::{MonomialSet, MultiIndex, Polynomial};
