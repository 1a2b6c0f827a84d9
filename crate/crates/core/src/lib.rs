// Guards are written as `!(x > 0.0)` on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod curvature;
pub mod experiments;
pub mod io;
pub mod objective;
pub mod optimizer;
pub mod rng;
pub mod spec;
