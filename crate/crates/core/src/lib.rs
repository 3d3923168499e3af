//! Equality-saturation idiom recognition for a small functional array IR.

pub mod codegen;
pub mod cost;
pub mod egraph;
pub mod extract;
pub mod interp;
pub mod ir;
pub mod kernels;
pub mod pattern;
pub mod rewrite;
pub mod rules;

/// Exact cost scalar.
pub type Rational = num_rational::Ratio<i128>;
/// Possibly infinite exact cost.
pub type Cost = cost::Cost<Rational>;
