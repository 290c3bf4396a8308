//! Conformal elliptic problems: the curvature map, scalar-flat factors,
//! Yamabe quotient and sign, and prescribed scalar curvature.
//!
//! Unknowns are carried as departures from one (`v = u - 1`) so that small
//! perturbations keep full relative precision. The outer boundary uses the
//! Robin condition `v' + (n-2) v / r = 0`, exact for the harmonic tail
//! `v ~ A r^{2-n}`.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::background::{BackgroundSpec, InnerBoundary};
use crate::domain::{self, BoundaryFlux, RadialField, RadialGrid, Tridiagonal};
use crate::error::{Error, Result};
use crate::{conformal_coefficient, critical_exponent};

/// Boundary fluxes `r^{n-1} ∂_r v` for the excess `v = u - 1`.
pub fn excess_fluxes(grid: &RadialGrid, inner: InnerBoundary) -> (BoundaryFlux, BoundaryFlux) {
    let k = grid.dim() as f64 - 2.0;
    let inner = match inner {
        InnerBoundary::ZeroFlux => BoundaryFlux::ZERO,
        InnerBoundary::MinimalSphere => {
            // r^{n-1} u' = -(n-2) r^{n-2} u / 2 with u = 1 + v
            let c = -0.5 * k * grid.r_in().powf(k);
            BoundaryFlux { coef: c, constant: c }
        }
    };
    let outer = BoundaryFlux { coef: -k * grid.r_max().powf(k), constant: 0.0 };
    (inner, outer)
}

/// `Δv` with the background's boundary conditions applied at both ends.
pub fn laplacian_of_excess(v: &[f64], grid: &RadialGrid, inner: InnerBoundary) -> Vec<f64> {
    let (fi, fo) = excess_fluxes(grid, inner);
    domain::laplacian_with_flux(grid, v, fi, fo)
}

/// Matrix of [`laplacian_of_excess`] (linear part) and its constant term.
pub(crate) fn excess_operator(grid: &RadialGrid, inner: InnerBoundary) -> (Tridiagonal, Vec<f64>) {
    let (fi, fo) = excess_fluxes(grid, inner);
    let mat = domain::laplacian_matrix(grid, fi.coef, fo.coef);
    let mut constant = vec![0.0; grid.len()];
    constant[0] -= fi.constant / grid.volumes()[0];
    constant[grid.last()] += fo.constant / grid.volumes()[grid.last()];
    (mat, constant)
}

/// `R_g = u^{-N} (-a(n) Δu + R_0 u)` with the free-standing stencil of
/// [`domain::laplacian_radial`]; see [`domain::one_sided_nodes`] for the
/// nodes computed one-sidedly.
#[allow(non_snake_case)]
pub fn compute_R(u: &RadialField, bg: &BackgroundSpec) -> Result<RadialField> {
    u.check_same_grid(&bg.r0_profile)?;
    u.ensure_positive("conformal factor")?;
    let n = bg.dim();
    let a = conformal_coefficient(n);
    let big_n = critical_exponent(n);
    let lap = domain::laplacian_radial(u)?;
    let r0 = bg.r0_profile.values();
    let values = (0..u.len())
        .map(|i| {
            let ui = u.values()[i];
            ui.powf(-big_n) * (-a * lap.values()[i] + r0[i] * ui)
        })
        .collect();
    RadialField::new(u.grid().clone(), values)
}

/// Scalar curvature of `u = 1 + v` using the boundary-aware operator.
pub fn curvature_of_excess(v: &RadialField, bg: &BackgroundSpec) -> Result<RadialField> {
    v.check_same_grid(&bg.r0_profile)?;
    let n = bg.dim();
    let a = conformal_coefficient(n);
    let big_n = critical_exponent(n);
    let lap = laplacian_of_excess(v.values(), v.grid(), bg.inner);
    let r0 = bg.r0_profile.values();
    let mut values = Vec::with_capacity(v.len());
    for (i, (&vi, &li)) in v.values().iter().zip(&lap).enumerate() {
        let u = 1.0 + vi;
        if !(u > 0.0) {
            return Err(Error::Positivity { what: "conformal factor".into(), min: u, node: i });
        }
        values.push(u.powf(-big_n) * (-a * li + r0[i] * u));
    }
    RadialField::new(v.grid().clone(), values)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub converged: bool,
    pub iterations: usize,
    pub final_residual: f64,
    pub positivity: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EllipticConfig {
    /// Residual tolerance relative to the problem scale.
    pub tol: f64,
    pub max_iterations: usize,
    /// Newton iterations allowed without improving the best residual.
    pub stagnation_limit: usize,
}

impl Default for EllipticConfig {
    fn default() -> Self {
        Self { tol: 1e-10, max_iterations: 100, stagnation_limit: 20 }
    }
}

/// Residual level reachable in double precision for `a Δv` with `|v| <= vmax`.
fn roundoff_floor(grid: &RadialGrid, a: f64, vmax: f64) -> f64 {
    64.0 * f64::EPSILON * a * vmax.max(1e-300) / grid.h_min().powi(2)
}

/// Residual `a(n) Δ(1+v) - R_0 (1+v)` of the scalar-flat equation.
pub fn scalar_flat_residual(v: &RadialField, bg: &BackgroundSpec) -> Vec<f64> {
    let a = conformal_coefficient(bg.dim());
    let lap = laplacian_of_excess(v.values(), v.grid(), bg.inner);
    let r0 = bg.r0_profile.values();
    v.values().iter().zip(&lap).zip(r0).map(|((&vi, &l), &r)| a * l - r * (1.0 + vi)).collect()
}

/// Acceptance threshold for [`scalar_flat_residual`].
pub fn scalar_flat_tolerance(v: &RadialField, bg: &BackgroundSpec, cfg: &EllipticConfig) -> f64 {
    let a = conformal_coefficient(bg.dim());
    cfg.tol * (1.0 + bg.r0_profile.max_abs()) + roundoff_floor(v.grid(), a, v.max_abs())
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Positive `u_∞ → 1` with `a(n) Δu_∞ = R_0 u_∞`.
///
/// One tridiagonal solve for `v = u_∞ - 1` plus one refinement sweep.
pub fn solve_scalar_flat(bg: &BackgroundSpec, cfg: &EllipticConfig) -> Result<(RadialField, SolveReport)> {
    let grid = bg.grid();
    let a = conformal_coefficient(bg.dim());
    let r0 = bg.r0_profile.values();
    let (mut mat, constant) = excess_operator(grid, bg.inner);
    mat.scale(a);
    for (d, &r) in mat.diag.iter_mut().zip(r0) {
        *d -= r;
    }
    let rhs: Vec<f64> = r0.iter().zip(&constant).map(|(&r, &c)| r - a * c).collect();
    let v = mat.solve(&rhs).map_err(|_| Error::NonPositiveYamabe { min: f64::NAN, solution: None })?;
    let mut iterations = 1;
    let mut field = RadialField::new(grid.clone(), v.clone())?;
    let mut residual = scalar_flat_residual(&field, bg);
    if max_abs(&residual) > 0.0 {
        let neg: Vec<f64> = residual.iter().map(|r| -r).collect();
        if let Ok(dv) = mat.solve(&neg) {
            let trial: Vec<f64> = v.iter().zip(&dv).map(|(a, b)| a + b).collect();
            let trial_field = RadialField::new(grid.clone(), trial)?;
            let trial_res = scalar_flat_residual(&trial_field, bg);
            if max_abs(&trial_res) < max_abs(&residual) {
                field = trial_field;
                residual = trial_res;
                iterations += 1;
            }
        }
    }
    let u = field.map(|x| 1.0 + x)?;
    let min = u.min();
    if !(min > 0.0) {
        return Err(Error::NonPositiveYamabe { min, solution: Some(Box::new(u)) });
    }
    let final_residual = max_abs(&residual);
    let tol = scalar_flat_tolerance(&field, bg, cfg);
    let report = SolveReport { converged: final_residual <= tol, iterations, final_residual, positivity: min };
    Ok((u, report))
}

/// Conformal Yamabe quotient
/// `Q(v) = [a(n) ∫|v'|² + ∫ R_0 v²] / (∫ |v|^{2n/(n-2)})^{(n-2)/n}` over the background volume.
///
/// Gradients are taken per interval and weighted by exact shell volumes;
/// the other integrals use the trapezoid rule.
pub fn yamabe_quotient(v: &RadialField, bg: &BackgroundSpec) -> Result<f64> {
    v.check_same_grid(&bg.r0_profile)?;
    if v.values().iter().all(|&x| x == 0.0) {
        return Err(Error::Parameter("trial function vanishes identically".into()));
    }
    if v.values()[v.len() - 1] != 0.0 {
        return Err(Error::Support);
    }
    let grid = v.grid();
    let n = grid.dim();
    let a = conformal_coefficient(n);
    let omega = domain::SphereConstants::new(n).omega;
    let x = grid.nodes();
    let vals = v.values();
    let gradient: f64 = (0..grid.last())
        .map(|i| {
            let slope = (vals[i + 1] - vals[i]) / (x[i + 1] - x[i]);
            let shell = omega * (x[i + 1].powi(n as i32) - x[i].powi(n as i32)) / n as f64;
            slope * slope * shell
        })
        .sum();
    let r0 = bg.r0_profile.values();
    let potential = domain::trapezoid(grid, |i| r0[i] * vals[i] * vals[i]);
    let p = domain::volume_exponent(n);
    let norm = domain::trapezoid(grid, |i| vals[i].abs().powf(p)).powf((n as f64 - 2.0) / n as f64);
    Ok((a * gradient + potential) / norm)
}

/// [`yamabe_quotient`] by three-point Gauss–Legendre quadrature on the
/// piecewise-linear interpolants of `v` and `R_0`, an independent check of the trapezoid value.
pub fn yamabe_quotient_gauss(v: &RadialField, bg: &BackgroundSpec) -> Result<f64> {
    v.check_same_grid(&bg.r0_profile)?;
    if v.values()[v.len() - 1] != 0.0 {
        return Err(Error::Support);
    }
    let grid = v.grid();
    let n = grid.dim();
    let a = conformal_coefficient(n);
    let omega = domain::SphereConstants::new(n).omega;
    let p = domain::volume_exponent(n);
    let (x, vals, r0) = (grid.nodes(), v.values(), bg.r0_profile.values());
    let k = (0.6f64).sqrt();
    let rule = [(-k, 5.0 / 9.0), (0.0, 8.0 / 9.0), (k, 5.0 / 9.0)];
    let (mut gradient, mut potential, mut mass) = (0.0, 0.0, 0.0);
    for i in 0..grid.last() {
        let (lo, hi) = (x[i], x[i + 1]);
        let half = 0.5 * (hi - lo);
        let slope = (vals[i + 1] - vals[i]) / (hi - lo);
        for (z, w) in rule {
            let s = 0.5 * (1.0 + z);
            let r = lo + s * (hi - lo);
            let weight = w * half * r.powi(n as i32 - 1);
            let vi = vals[i] + s * (vals[i + 1] - vals[i]);
            let ri = r0[i] + s * (r0[i + 1] - r0[i]);
            gradient += weight * slope * slope;
            potential += weight * ri * vi * vi;
            mass += weight * vi.abs().powf(p);
        }
    }
    if !(mass > 0.0) {
        return Err(Error::Parameter("trial function vanishes identically".into()));
    }
    Ok(omega * (a * gradient + potential) / (omega * mass).powf((n as f64 - 2.0) / n as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum YamabeClass {
    Positive,
    NonPositive,
}

/// Gaussian trial functions `exp(-(r-c)²/w²)`, cut off at `|r - c| = 6w`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialFamily {
    pub centers: Vec<f64>,
    pub widths: Vec<f64>,
}

impl TrialFamily {
    /// Centres at the origin and at the deepest point of `R_0`; widths from 1/4 to 32.
    pub fn for_background(bg: &BackgroundSpec) -> Self {
        let (i, _) = bg.r0_profile.argmin();
        let mut centers = vec![bg.grid().r_in()];
        let deepest = bg.grid().nodes()[i];
        if deepest != centers[0] {
            centers.push(deepest);
        }
        let widths = (0..8).map(|k| 0.25 * 2f64.powi(k)).collect();
        Self { centers, widths }
    }
}

pub fn gaussian_trial(grid: &Arc<RadialGrid>, center: f64, width: f64) -> Result<RadialField> {
    RadialField::from_fn(grid, |r| {
        let z = (r - center) / width;
        if z.abs() < 6.0 {
            (-z * z).exp()
        } else {
            0.0
        }
    })
}

#[derive(Debug, Clone)]
pub enum SignCertificate {
    ScalarFlat { u_inf: RadialField, report: SolveReport },
    Trial { v: RadialField, center: f64, width: f64, quotient: f64 },
    /// No certificate; the scalar-flat solve failed and no trial had `Q <= 0`.
    Unresolved { best_quotient: Option<f64>, reason: String },
}

#[derive(Debug, Clone)]
pub struct YamabeSign {
    pub sign: YamabeClass,
    pub certificate: SignCertificate,
    pub low_confidence: bool,
}

impl YamabeSign {
    /// Re-evaluates the certificate against `bg`. Unresolved certificates never verify.
    pub fn verify(&self, bg: &BackgroundSpec, cfg: &EllipticConfig) -> Result<bool> {
        Ok(match (&self.sign, &self.certificate) {
            (YamabeClass::Positive, SignCertificate::ScalarFlat { u_inf, .. }) => {
                // v = u - 1 carries absolute rounding of order eps, hence the u-based floor
                let v = u_inf.map(|u| u - 1.0)?;
                let res = max_abs(&scalar_flat_residual(&v, bg));
                let a = conformal_coefficient(bg.dim());
                let tol = scalar_flat_tolerance(&v, bg, cfg) + roundoff_floor(v.grid(), a, u_inf.max_abs());
                u_inf.min() > 0.0 && res <= tol
            }
            (YamabeClass::NonPositive, SignCertificate::Trial { v, .. }) => yamabe_quotient_gauss(v, bg)? <= 0.0,
            _ => false,
        })
    }

    pub fn summary(&self) -> serde_json::Value {
        let cert = match &self.certificate {
            SignCertificate::ScalarFlat { u_inf, report } => serde_json::json!({
                "kind": "scalar-flat",
                "min_u_inf": u_inf.min(),
                "report": report,
            }),
            SignCertificate::Trial { center, width, quotient, .. } => serde_json::json!({
                "kind": "trial",
                "center": center,
                "width": width,
                "quotient": quotient,
            }),
            SignCertificate::Unresolved { best_quotient, reason } => serde_json::json!({
                "kind": "unresolved",
                "best_quotient": best_quotient,
                "reason": reason,
            }),
        };
        serde_json::json!({
            "sign": match self.sign { YamabeClass::Positive => "positive", YamabeClass::NonPositive => "nonpositive" },
            "low_confidence": self.low_confidence,
            "certificate": cert,
        })
    }
}

/// Sign of the Yamabe constant with a checkable certificate.
pub fn yamabe_sign(bg: &BackgroundSpec, trials: &TrialFamily, cfg: &EllipticConfig) -> Result<YamabeSign> {
    let scalar_flat = solve_scalar_flat(bg, cfg);
    if let Ok((u_inf, report)) = &scalar_flat {
        if report.converged && report.positivity > 0.0 {
            return Ok(YamabeSign {
                sign: YamabeClass::Positive,
                certificate: SignCertificate::ScalarFlat { u_inf: u_inf.clone(), report: *report },
                low_confidence: false,
            });
        }
    }
    let grid = bg.grid();
    let mut best: Option<(f64, f64, f64, RadialField)> = None;
    for &c in &trials.centers {
        for &w in &trials.widths {
            if c + 6.0 * w >= grid.r_max() {
                continue;
            }
            let v = gaussian_trial(grid, c, w)?;
            let q = match yamabe_quotient(&v, bg) {
                Ok(q) => q,
                Err(Error::Parameter(_)) | Err(Error::Support) => continue,
                Err(e) => return Err(e),
            };
            if best.as_ref().is_none_or(|b| q < b.0) {
                best = Some((q, c, w, v));
            }
        }
    }
    match best {
        Some((q, center, width, v)) if q <= 0.0 => Ok(YamabeSign {
            sign: YamabeClass::NonPositive,
            certificate: SignCertificate::Trial { v, center, width, quotient: q },
            low_confidence: false,
        }),
        other => {
            let reason = match scalar_flat {
                Ok((_, r)) => format!("scalar-flat solve did not converge (residual {:e})", r.final_residual),
                Err(e) => e.to_string(),
            };
            Ok(YamabeSign {
                sign: YamabeClass::NonPositive,
                certificate: SignCertificate::Unresolved { best_quotient: other.map(|b| b.0), reason },
                low_confidence: true,
            })
        }
    }
}

/// Residual `-a(n) Δφ + R_0 φ - R' φ^N` for `φ = 1 + ψ`.
fn prescribe_residual(psi: &[f64], bg: &BackgroundSpec, target: &[f64]) -> Vec<f64> {
    let n = bg.dim();
    let a = conformal_coefficient(n);
    let big_n = critical_exponent(n);
    let lap = laplacian_of_excess(psi, bg.grid(), bg.inner);
    let r0 = bg.r0_profile.values();
    (0..psi.len())
        .map(|i| {
            let phi = 1.0 + psi[i];
            -a * lap[i] + r0[i] * phi - target[i] * phi.powf(big_n)
        })
        .collect()
}

/// Conformal factor `φ → 1` such that `φ^{4/(n-2)} g_0` has scalar curvature `R'`.
///
/// Requires `R' <= R_0` pointwise. Damped Newton from `φ ≡ 1`, halving the
/// step until `φ` stays positive and the residual decreases.
pub fn prescribe_scalar_curvature(
    bg: &BackgroundSpec,
    target: &RadialField,
    cfg: &EllipticConfig,
) -> Result<(RadialField, SolveReport)> {
    target.check_same_grid(&bg.r0_profile)?;
    let r0 = bg.r0_profile.values();
    let t = target.values();
    let scale = 1.0 + bg.r0_profile.max_abs().max(target.max_abs());
    if let Some(i) = (0..t.len()).find(|&i| t[i] > r0[i] + 1e-14 * scale) {
        return Err(Error::Hypothesis(format!(
            "target curvature {:e} exceeds background {:e} at r = {}",
            t[i],
            r0[i],
            bg.grid().nodes()[i]
        )));
    }
    crate::background::check_decay(target, bg.tau).map_err(|e| Error::Hypothesis(e.to_string()))?;

    let grid = bg.grid();
    let n = bg.dim();
    let a = conformal_coefficient(n);
    let big_n = critical_exponent(n);
    let (lap_mat, _) = excess_operator(grid, bg.inner);
    let tolerance = |psi: &[f64]| cfg.tol * scale + roundoff_floor(grid, a, max_abs(psi));

    let mut psi = vec![0.0; grid.len()];
    let mut res = prescribe_residual(&psi, bg, t);
    let mut norm = max_abs(&res);
    let mut best = norm;
    let mut since_best = 0;
    let mut iterations = 0;
    while norm > tolerance(&psi) {
        if iterations >= cfg.max_iterations || since_best >= cfg.stagnation_limit {
            return Err(Error::Convergence(format!(
                "prescribed curvature Newton stalled after {iterations} iterations, residual {norm:e}"
            )));
        }
        iterations += 1;
        let mut jac = lap_mat.clone();
        jac.scale(-a);
        for i in 0..psi.len() {
            jac.diag[i] += r0[i] - big_n * t[i] * (1.0 + psi[i]).powf(big_n - 1.0);
        }
        let neg: Vec<f64> = res.iter().map(|r| -r).collect();
        let delta = jac.solve(&neg)?;
        let mut lambda = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let trial: Vec<f64> = psi.iter().zip(&delta).map(|(p, d)| p + lambda * d).collect();
            if trial.iter().all(|&p| 1.0 + p > 0.0) {
                let trial_res = prescribe_residual(&trial, bg, t);
                let trial_norm = max_abs(&trial_res);
                if trial_norm < norm {
                    accepted = Some((trial, trial_res, trial_norm));
                    break;
                }
            }
            lambda *= 0.5;
        }
        match accepted {
            Some((p, r, nrm)) => {
                psi = p;
                res = r;
                norm = nrm;
            }
            None => since_best = cfg.stagnation_limit,
        }
        if norm < best {
            best = norm;
            since_best = 0;
        } else {
            since_best += 1;
        }
    }
    let phi = RadialField::new(grid.clone(), psi.iter().map(|p| 1.0 + p).collect())?;
    let report = SolveReport { converged: true, iterations, final_residual: norm, positivity: phi.min() };
    Ok((phi, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::background::SyntheticParams;
    use crate::domain::{build_grid, GridPolicy};

    fn grid(r_max: f64, m: usize) -> Arc<RadialGrid> {
        build_grid(3, 0.0, r_max, m, GridPolicy::LogStretched).unwrap()
    }

    fn well(g: &Arc<RadialGrid>) -> BackgroundSpec {
        BackgroundSpec::synthetic(g, SyntheticParams { amplitude: -50.0, center: 2.0, width: 1.0, tau: 1.0 }).unwrap()
    }

    #[test]
    fn curvature_of_unit_factor_is_zero() {
        let g = grid(50.0, 128);
        let bg = BackgroundSpec::flat(&g).unwrap();
        let r = compute_R(&RadialField::constant(&g, 1.0), &bg).unwrap();
        assert!(r.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn curvature_of_gaussian_perturbation_at_origin() {
        // R(0) = -8 u(0)^{-5} Δu(0) = 48 · 0.1 / 1.1^5
        let expect = 48.0 * 0.1 / 1.1f64.powi(5);
        let g = grid(20.0, 1024);
        let bg = BackgroundSpec::flat(&g).unwrap();
        let u = RadialField::from_fn(&g, |r| 1.0 + 0.1 * (-r * r).exp()).unwrap();
        let r = compute_R(&u, &bg).unwrap();
        assert!((r.values()[0] - expect).abs() < 10.0 * g.h().powi(2), "{}", r.values()[0]);
        assert!((expect - 2.98043).abs() < 1e-5);
    }

    #[test]
    fn schwarzschild_is_scalar_flat() {
        let g = build_grid(3, 0.5, 100.0, 512, GridPolicy::LogStretched).unwrap();
        let bg = BackgroundSpec::flat(&g).unwrap();
        let u = RadialField::from_fn(&g, |r| 1.0 + 0.5 / r).unwrap();
        let r = compute_R(&u, &bg).unwrap();
        assert!(r.max_abs() < 10.0 * g.h().powi(2) * 64.0, "{}", r.max_abs());
        let v = u.map(|x| x - 1.0).unwrap();
        let bg = bg.with_inner_boundary(InnerBoundary::MinimalSphere);
        assert!(curvature_of_excess(&v, &bg).unwrap().max_abs() < 1e-9);
    }

    #[test]
    fn compute_r_rejects_nonpositive_factor() {
        let g = grid(20.0, 64);
        let bg = BackgroundSpec::flat(&g).unwrap();
        let u = RadialField::constant(&g, -1.0);
        assert!(matches!(compute_R(&u, &bg), Err(Error::Positivity { .. })));
    }

    #[test]
    fn flat_scalar_flat_solution_is_one() {
        let g = grid(100.0, 256);
        let bg = BackgroundSpec::flat(&g).unwrap();
        let (u, rep) = solve_scalar_flat(&bg, &EllipticConfig::default()).unwrap();
        assert!(u.values().iter().all(|&x| x == 1.0));
        assert_eq!(rep.final_residual, 0.0);
        assert!(rep.converged);
    }

    #[test]
    fn manufactured_scalar_flat_solution() {
        // u* = 1 + e^{-r²}, R_0 = a Δu*/u* in closed form
        let mut errs = Vec::new();
        for m in [512, 1024, 2048] {
            let g = grid(40.0, m);
            let profile = RadialField::from_fn(&g, |r| {
                let e = (-r * r).exp();
                8.0 * (4.0 * r * r - 6.0) * e / (1.0 + e)
            })
            .unwrap();
            let bg = BackgroundSpec::custom("mms", 1.0, profile).unwrap();
            let (u, rep) = solve_scalar_flat(&bg, &EllipticConfig::default()).unwrap();
            assert!(rep.converged, "{rep:?}");
            let err = g
                .nodes()
                .iter()
                .zip(u.values())
                .map(|(&r, &x)| (x - 1.0 - (-r * r).exp()).abs())
                .fold(0.0, f64::max);
            errs.push((g.h(), err));
        }
        for w in errs.windows(2) {
            let order = (w[0].1 / w[1].1).ln() / (w[0].0 / w[1].0).ln();
            assert!((1.8..=2.2).contains(&order), "order {order} from {errs:?}");
        }
    }

    #[test]
    fn negative_well_has_no_positive_scalar_flat_factor() {
        let g = grid(200.0, 1024);
        let res = solve_scalar_flat(&well(&g), &EllipticConfig::default());
        assert!(matches!(res, Err(Error::NonPositiveYamabe { .. })), "{res:?}");
    }

    #[test]
    fn gauss_quotient_agrees_with_trapezoid() {
        let g = grid(200.0, 1024);
        let bg = well(&g);
        let v = gaussian_trial(&g, 0.0, 4.0).unwrap();
        let (q, qg) = (yamabe_quotient(&v, &bg).unwrap(), yamabe_quotient_gauss(&v, &bg).unwrap());
        assert!(qg < 0.0 && (q - qg).abs() < 1e-2 * q.abs(), "{q} vs {qg}");
    }

    #[test]
    fn tent_quotient_on_flat_space() {
        // 8 ∫|v'|² = 8 · 4π/3 and ∫ v⁶ = 4π/252
        let expect = 8.0 * (4.0 * std::f64::consts::PI / 3.0) / (std::f64::consts::PI / 63.0).powf(1.0 / 3.0);
        assert!((expect - 91.06).abs() < 0.05);
        let g = build_grid(3, 0.0, 4.0, 2048, GridPolicy::Uniform).unwrap();
        let bg = BackgroundSpec::flat(&g).unwrap();
        let v = RadialField::from_fn(&g, |r| (1.0 - r).max(0.0)).unwrap();
        let q = yamabe_quotient(&v, &bg).unwrap();
        assert!((q / expect - 1.0).abs() < 0.01, "{q}");
        let q2 = yamabe_quotient(&v.scale(2.0).unwrap(), &bg).unwrap();
        assert!((q2 / q - 1.0).abs() < 1e-12);
    }

    #[test]
    fn quotient_rejects_degenerate_trials() {
        let g = grid(20.0, 64);
        let bg = BackgroundSpec::flat(&g).unwrap();
        assert!(matches!(yamabe_quotient(&RadialField::zeros(&g), &bg), Err(Error::Parameter(_))));
        assert!(matches!(yamabe_quotient(&RadialField::constant(&g, 1.0), &bg), Err(Error::Support)));
    }

    #[test]
    fn sign_certificates() {
        let g = grid(400.0, 2048);
        let cfg = EllipticConfig::default();
        let flat = BackgroundSpec::flat(&g).unwrap();
        let s = yamabe_sign(&flat, &TrialFamily::for_background(&flat), &cfg).unwrap();
        assert_eq!(s.sign, YamabeClass::Positive);
        assert!(s.verify(&flat, &cfg).unwrap());

        let w = well(&g);
        let s = yamabe_sign(&w, &TrialFamily::for_background(&w), &cfg).unwrap();
        assert_eq!(s.sign, YamabeClass::NonPositive);
        assert!(!s.low_confidence);
        assert!(s.verify(&w, &cfg).unwrap());
        match &s.certificate {
            SignCertificate::Trial { quotient, .. } => assert!(*quotient < 0.0),
            other => panic!("{other:?}"),
        }

        let mild =
            BackgroundSpec::synthetic(&g, SyntheticParams { amplitude: 0.01, center: 0.0, width: 1.0, tau: 1.0 })
                .unwrap();
        let s = yamabe_sign(&mild, &TrialFamily::for_background(&mild), &cfg).unwrap();
        assert_eq!(s.sign, YamabeClass::Positive);
        assert!(s.verify(&mild, &cfg).unwrap());
    }

    #[test]
    fn prescribing_the_background_curvature_is_a_no_op() {
        let g = grid(100.0, 512);
        let bg = BackgroundSpec::synthetic(&g, SyntheticParams { amplitude: 3.0, center: 1.0, width: 1.0, tau: 1.0 })
            .unwrap();
        let (phi, rep) = prescribe_scalar_curvature(&bg, &bg.r0_profile, &EllipticConfig::default()).unwrap();
        assert!(rep.iterations <= 1);
        assert!(phi.values().iter().all(|&p| p == 1.0));
    }

    #[test]
    fn prescribing_negative_curvature_on_flat_space() {
        let g = grid(400.0, 2048);
        let bg = BackgroundSpec::flat(&g).unwrap();
        let target = RadialField::from_fn(&g, |r| -0.1 * (1.0 + r * r).powf(-1.5)).unwrap();
        let (phi, rep) = prescribe_scalar_curvature(&bg, &target, &EllipticConfig::default()).unwrap();
        assert!(rep.converged);
        assert!(phi.max() <= 1.0);
        let v = phi.map(|p| p - 1.0).unwrap();
        let r = curvature_of_excess(&v, &bg).unwrap();
        let err = r.zip_map(&target, |a, b| (a - b).abs()).unwrap().max_abs();
        assert!(err <= 10.0 * g.h().powi(2), "err {err}");
    }

    #[test]
    fn prescribe_rejects_target_above_background() {
        let g = grid(100.0, 256);
        let bg = BackgroundSpec::flat(&g).unwrap();
        let target = RadialField::from_fn(&g, |r| (1.0 + r * r).powf(-2.0)).unwrap();
        assert!(matches!(
            prescribe_scalar_curvature(&bg, &target, &EllipticConfig::default()),
            Err(Error::Hypothesis(_))
        ));
    }

    /// `φ* = 1 - ε (1+r²)^{-1/2}` with target `T = -c (1+r²)^{-2}` and the
    /// background `R_0 = T φ*⁴ + 8 Δφ*/φ*` that makes `φ*` an exact solution.
    fn nonpositive_target_case(g: &Arc<RadialGrid>, eps: f64, c: f64) -> (BackgroundSpec, RadialField, RadialField) {
        let phi = |r: f64| 1.0 - eps / (1.0 + r * r).sqrt();
        let target = |r: f64| -c * (1.0 + r * r).powi(-2);
        let lap = |r: f64| 3.0 * eps * (1.0 + r * r).powf(-2.5);
        let r0 = RadialField::from_fn(g, |r| target(r) * phi(r).powi(4) + 8.0 * lap(r) / phi(r)).unwrap();
        let bg = BackgroundSpec::custom("manufactured", 1.0, r0).unwrap();
        (bg, RadialField::from_fn(g, target).unwrap(), RadialField::from_fn(g, phi).unwrap())
    }

    #[test]
    fn manufactured_prescribed_curvature() {
        let mut errs = Vec::new();
        for m in [512, 1024, 2048] {
            let g = grid(400.0, m);
            let (bg, target, exact) = nonpositive_target_case(&g, 0.5, 0.1);
            let (phi, rep) = prescribe_scalar_curvature(&bg, &target, &EllipticConfig::default()).unwrap();
            assert!(rep.converged);
            let err = phi.zip_map(&exact, |a, b| (a - b).abs()).unwrap().max_abs();
            errs.push((g.h(), err));
        }
        for (h, e) in &errs {
            assert!(*e < 10.0 * h * h, "{errs:?}");
        }
        let order = (errs[1].1 / errs[2].1).ln() / (errs[1].0 / errs[2].0).ln();
        assert!((1.8..=2.2).contains(&order), "{errs:?}");
    }

    #[test]
    fn discrete_round_trip_with_nonpositive_target() {
        let g = grid(400.0, 1024);
        let (bg, _, exact) = nonpositive_target_case(&g, 0.3, 0.5);
        let target = compute_R(&exact, &bg).unwrap();
        let (phi, _) = prescribe_scalar_curvature(&bg, &target, &EllipticConfig::default()).unwrap();
        let err = phi.zip_map(&exact, |a, b| (a - b).abs()).unwrap().max_abs();
        assert!(err <= 10.0 * g.h().powi(2), "err {err}");
    }

    #[test]
    fn positive_targets_admit_a_second_root() {
        // φ* = 1 + e^{-r²} has R(φ*) <= R_0 here, yet Newton from φ ≡ 1 lands on another root below 1
        let g = grid(40.0, 512);
        let bg = BackgroundSpec::synthetic(&g, SyntheticParams { amplitude: 10.0, center: 0.0, width: 2.0, tau: 1.0 })
            .unwrap();
        let exact = RadialField::from_fn(&g, |r| 1.0 + (-r * r).exp()).unwrap();
        let target = compute_R(&exact, &bg).unwrap();
        let (phi, rep) = prescribe_scalar_curvature(&bg, &target, &EllipticConfig::default()).unwrap();
        assert!(rep.converged);
        assert!(phi.values()[0] < 1.0 && exact.values()[0] == 2.0);
        let r = curvature_of_excess(&phi.map(|p| p - 1.0).unwrap(), &bg).unwrap();
        let interior = g.last();
        let misfit = (0..interior).map(|i| (r.values()[i] - target.values()[i]).abs()).fold(0.0, f64::max);
        assert!(misfit < 1e-8, "{misfit}");
    }
}
