//! Numerical laboratory for the Yamabe flow `∂g/∂t = -R g` on rotationally
//! symmetric asymptotically flat manifolds, written as a flow of the
//! conformal factor `u` with `g(t) = u^{4/(n-2)} g_0`.

pub mod background;
pub mod diagnostics;
pub mod domain;
pub mod elliptic;
pub mod error;
pub mod flow;

pub use error::{Error, Result};

/// `a(n) = 4(n-1)/(n-2)`, the conformal Laplacian coefficient.
pub fn conformal_coefficient(n: usize) -> f64 {
    4.0 * (n as f64 - 1.0) / (n as f64 - 2.0)
}

/// `N = (n+2)/(n-2)`, the critical conformal exponent.
pub fn critical_exponent(n: usize) -> f64 {
    (n as f64 + 2.0) / (n as f64 - 2.0)
}
