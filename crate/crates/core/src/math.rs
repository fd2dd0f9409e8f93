// Float functions that are not available in `core`.
pub(crate) use libm::{asin, cos, erf, exp, fabs as abs, round, sin, sqrt, tanh};

pub(crate) const PI: f64 = core::f64::consts::PI;
