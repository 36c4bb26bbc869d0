//! Small dense optimisation routines used by the estimators.

pub mod bfgs;
pub mod quadprog;
pub mod simplex;
