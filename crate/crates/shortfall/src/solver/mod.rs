//! Internal LP and QP engines behind the portfolio optimizers.
//!
//! Both solvers target the small, dense master problems produced by the
//! cutting-plane loop (a handful of portfolio variables plus accumulated tail
//! cuts), not general large-scale programs.

pub mod qp;
pub mod simplex;
