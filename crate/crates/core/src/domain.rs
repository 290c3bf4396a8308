//! Radial grids, grid functions, stencils, quadrature and norms.
//!
//! Every radial function lives on a [`RadialGrid`] covering `[r_in, R_max]`.
//! The Laplacian is discretised in finite-volume form: node `i` owns the
//! control volume between neighbouring faces, and the face flux
//! `r^{n-1} f'` is approximated with a weight chosen so that the two radial
//! harmonic functions `1` and `r^{2-n}` give exact fluxes. Control volumes are
//! then fixed by requiring `Δ r² = 2n` exactly. The resulting three-point
//! stencil is second order and reproduces `1`, `r²` and `r^{2-n}` to round-off.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::io::{BufRead, Write};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GridPolicy {
    Uniform,
    /// Uniform on `[r_in, 1]`, geometric on `[1, R_max]`.
    LogStretched,
}

impl std::str::FromStr for GridPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(Self::Uniform),
            "log-stretched" | "log" => Ok(Self::LogStretched),
            other => Err(Error::Config(format!("unknown grid policy `{other}`"))),
        }
    }
}

impl std::fmt::Display for GridPolicy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Uniform => "uniform",
            Self::LogStretched => "log-stretched",
        })
    }
}

/// Radial nodes `r_0 < … < r_M` together with the finite-volume geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct RadialGrid {
    dim: usize,
    nodes: Vec<f64>,
    policy: Option<GridPolicy>,
    /// `w_i` such that the flux through the face between nodes `i` and `i+1` is `w_i (f_{i+1} - f_i)`.
    face_weights: Vec<f64>,
    /// Control volumes in the measure `r^{n-1} dr` (no sphere factor).
    volumes: Vec<f64>,
}

/// Minimum node count for log-stretched grids; both segments need room.
pub const MIN_LOG_INTERVALS: usize = 16;

pub fn build_grid(
    n: usize,
    r_in: f64,
    r_max: f64,
    intervals: usize,
    policy: GridPolicy,
) -> Result<Arc<RadialGrid>> {
    if !(r_in.is_finite() && r_max.is_finite()) || r_in < 0.0 || r_in >= 1.0 || r_max <= 1.0 {
        return Err(Error::Config(format!(
            "grid radii must satisfy 0 <= r_in < 1 < R_max, got r_in = {r_in}, R_max = {r_max}"
        )));
    }
    let nodes = match policy {
        GridPolicy::Uniform => {
            if intervals < 2 {
                return Err(Error::Config(format!("uniform grid needs M >= 2, got {intervals}")));
            }
            let h = (r_max - r_in) / intervals as f64;
            let mut nodes: Vec<f64> = (0..=intervals).map(|i| r_in + i as f64 * h).collect();
            nodes[intervals] = r_max;
            nodes
        }
        GridPolicy::LogStretched => {
            if intervals < MIN_LOG_INTERVALS {
                return Err(Error::Config(format!(
                    "log-stretched grid needs M >= {MIN_LOG_INTERVALS}, got {intervals}"
                )));
            }
            log_stretched_nodes(r_in, r_max, intervals)
        }
    };
    RadialGrid::with_policy(n, nodes, Some(policy)).map(Arc::new)
}

/// Picks the number of uniform core intervals so that the core spacing
/// matches the first geometric step `q - 1`.
fn log_stretched_nodes(r_in: f64, r_max: f64, intervals: usize) -> Vec<f64> {
    let log_r = r_max.ln();
    let mismatch = |k: usize| {
        let h = (1.0 - r_in) / k as f64;
        let q1 = (log_r / (intervals - k) as f64).exp_m1();
        (h / q1).ln().abs()
    };
    let core = (2..=intervals - 2)
        .min_by(|&a, &b| mismatch(a).total_cmp(&mismatch(b)))
        .expect("M >= 16 leaves candidates");
    let h = (1.0 - r_in) / core as f64;
    let log_q = log_r / (intervals - core) as f64;
    let mut nodes = Vec::with_capacity(intervals + 1);
    nodes.extend((0..core).map(|i| r_in + i as f64 * h));
    nodes.extend((core..=intervals).map(|i| ((i - core) as f64 * log_q).exp()));
    nodes[core] = 1.0;
    nodes[intervals] = r_max;
    nodes
}

impl RadialGrid {
    /// Grid on arbitrary strictly increasing nodes.
    pub fn from_nodes(n: usize, nodes: Vec<f64>) -> Result<Arc<Self>> {
        Self::with_policy(n, nodes, None).map(Arc::new)
    }

    fn with_policy(n: usize, nodes: Vec<f64>, policy: Option<GridPolicy>) -> Result<Self> {
        if n < 3 {
            return Err(Error::Parameter(format!("dimension must be >= 3, got {n}")));
        }
        if nodes.len() < 2 {
            return Err(Error::Config("grid needs at least two nodes".into()));
        }
        if nodes[0] < 0.0 || nodes.iter().any(|r| !r.is_finite()) {
            return Err(Error::Config("grid nodes must be finite and nonnegative".into()));
        }
        if let Some(i) = nodes.windows(2).position(|w| w[1] <= w[0]) {
            return Err(Error::Config(format!("grid nodes not strictly increasing at index {i}")));
        }
        let face_weights = face_weights(n, &nodes);
        let volumes = control_volumes(n, &nodes, &face_weights);
        if let Some(i) = volumes.iter().position(|v| !(*v > 0.0)) {
            return Err(Error::Config(format!("nonpositive control volume at node {i}")));
        }
        Ok(Self { dim: n, nodes, policy, face_weights, volumes })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Index of the last node, `M`.
    pub fn last(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn r_in(&self) -> f64 {
        self.nodes[0]
    }

    pub fn r_max(&self) -> f64 {
        self.nodes[self.last()]
    }

    pub fn policy(&self) -> Option<GridPolicy> {
        self.policy
    }

    /// Characteristic mesh parameter: the largest spacing relative to `max(r, 1)`.
    ///
    /// For log-stretched grids this equals both the core spacing and `q - 1`.
    pub fn h(&self) -> f64 {
        self.nodes
            .windows(2)
            .map(|w| (w[1] - w[0]) / w[0].max(1.0))
            .fold(0.0, f64::max)
    }

    /// Smallest absolute spacing.
    pub fn h_min(&self) -> f64 {
        self.nodes.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min)
    }

    pub fn face_weights(&self) -> &[f64] {
        &self.face_weights
    }

    pub fn volumes(&self) -> &[f64] {
        &self.volumes
    }

    /// Nodes with `r` in `[lo, hi]`.
    pub fn indices_in(&self, lo: f64, hi: f64) -> impl Iterator<Item = usize> + '_ {
        self.nodes.iter().enumerate().filter(move |(_, &r)| r >= lo && r <= hi).map(|(i, _)| i)
    }

    pub fn same_as(&self, other: &RadialGrid) -> bool {
        std::ptr::eq(self, other) || (self.dim == other.dim && self.nodes == other.nodes)
    }
}

fn face_weights(n: usize, nodes: &[f64]) -> Vec<f64> {
    let k = (n - 2) as f64;
    nodes
        .windows(2)
        .map(|w| {
            let (a, b) = (w[0], w[1]);
            if a == 0.0 {
                (0.5 * b).powi(n as i32 - 1) / b
            } else {
                // r_a^{2-n} - r_b^{2-n}, written to avoid cancellation
                let diff = -a.powf(-k) * (k * (a / b).ln()).exp_m1();
                k / diff
            }
        })
        .collect()
}

fn control_volumes(n: usize, nodes: &[f64], weights: &[f64]) -> Vec<f64> {
    let m = nodes.len() - 1;
    let two_n = 2.0 * n as f64;
    // Flux of r² through each face and through the two boundary spheres.
    let face_flux: Vec<f64> =
        (0..m).map(|i| weights[i] * (nodes[i + 1] - nodes[i]) * (nodes[i + 1] + nodes[i])).collect();
    let wall_flux = |r: f64| 2.0 * r.powi(n as i32);
    (0..=m)
        .map(|i| {
            let right = if i == m { wall_flux(nodes[m]) } else { face_flux[i] };
            let left = if i == 0 { wall_flux(nodes[0]) } else { face_flux[i - 1] };
            (right - left) / two_n
        })
        .collect()
}

/// Volume of the unit `(n-1)`-sphere for one dimension.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SphereConstants {
    pub n: usize,
    pub omega: f64,
}

impl SphereConstants {
    pub fn new(n: usize) -> Self {
        Self { n, omega: 2.0 * pi_power_over_gamma_half(n) }
    }
}

/// `π^{k/2} / Γ(k/2)`, with the `√π` of odd `k` cancelled analytically.
fn pi_power_over_gamma_half(k: usize) -> f64 {
    let (mut g, mut x) = if k % 2 == 0 { (1.0, 1.0) } else { (1.0, 0.5) };
    let target = k as f64 / 2.0;
    while x < target {
        g *= x;
        x += 1.0;
    }
    PI.powi((k / 2) as i32) / g
}

/// Samples of a radial function on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct RadialField {
    grid: Arc<RadialGrid>,
    values: Vec<f64>,
}

impl RadialField {
    pub fn new(grid: Arc<RadialGrid>, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::Shape(format!(
                "field has {} samples, grid has {} nodes",
                values.len(),
                grid.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("field sample {i}")));
        }
        Ok(Self { grid, values })
    }

    pub fn from_fn(grid: &Arc<RadialGrid>, f: impl Fn(f64) -> f64) -> Result<Self> {
        let values = grid.nodes().iter().map(|&r| f(r)).collect();
        Self::new(grid.clone(), values)
    }

    pub fn constant(grid: &Arc<RadialGrid>, c: f64) -> Self {
        Self { grid: grid.clone(), values: vec![c; grid.len()] }
    }

    pub fn zeros(grid: &Arc<RadialGrid>) -> Self {
        Self::constant(grid, 0.0)
    }

    pub fn grid(&self) -> &Arc<RadialGrid> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(self.grid.clone(), self.values.iter().map(|&v| f(v)).collect())
    }

    pub fn zip_map(&self, other: &RadialField, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        self.check_same_grid(other)?;
        let values = self.values.iter().zip(&other.values).map(|(&a, &b)| f(a, b)).collect();
        Self::new(self.grid.clone(), values)
    }

    pub fn scale(&self, c: f64) -> Result<Self> {
        self.map(|v| c * v)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Node index and value of the minimum.
    pub fn argmin(&self) -> (usize, f64) {
        self.values
            .iter()
            .copied()
            .enumerate()
            .fold((0, f64::INFINITY), |best, (i, v)| if v < best.1 { (i, v) } else { best })
    }

    pub fn check_same_grid(&self, other: &RadialField) -> Result<()> {
        if self.grid.same_as(&other.grid) {
            Ok(())
        } else {
            Err(Error::Shape("fields live on different grids".into()))
        }
    }

    pub fn ensure_positive(&self, what: &str) -> Result<()> {
        let (node, min) = self.argmin();
        if min > 0.0 {
            Ok(())
        } else {
            Err(Error::Positivity { what: what.to_string(), min, node })
        }
    }

    /// CSV with header `r,value`, one node per row, 17 significant digits.
    pub fn to_csv(&self, header: &str) -> String {
        let mut out = String::with_capacity(self.len() * 50);
        out.push_str(header);
        out.push('\n');
        for (r, v) in self.grid.nodes().iter().zip(&self.values) {
            let _ = writeln!(out, "{r:.16e},{v:.16e}");
        }
        out
    }

    pub fn write_csv(&self, mut w: impl Write) -> Result<()> {
        w.write_all(self.to_csv("r,value").as_bytes())?;
        Ok(())
    }

    /// Reads `r,<anything>` CSV written by [`RadialField::to_csv`]; nodes must match `grid`.
    pub fn read_csv(grid: &Arc<RadialGrid>, reader: impl BufRead) -> Result<Self> {
        let mut values = Vec::with_capacity(grid.len());
        for (lineno, line) in reader.lines().enumerate() {
            let line = line?;
            if lineno == 0 {
                if !line.starts_with("r,") {
                    return Err(Error::Schema(format!("expected `r,...` header, got `{line}`")));
                }
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let (r, v) = line
                .split_once(',')
                .ok_or_else(|| Error::Schema(format!("line {}: expected two columns", lineno + 1)))?;
            let parse = |s: &str| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Schema(format!("line {}: {e}", lineno + 1)))
            };
            let (r, v) = (parse(r)?, parse(v)?);
            let i = values.len();
            match grid.nodes().get(i) {
                Some(&node) if (node - r).abs() <= 1e-12 * node.abs().max(1.0) => values.push(v),
                _ => return Err(Error::Shape(format!("CSV node {i} at r = {r} does not match grid"))),
            }
        }
        Self::new(grid.clone(), values)
    }
}

/// Boundary flux `r^{n-1} ∂_r f = coef · f_boundary + constant` imposed at one end.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundaryFlux {
    pub coef: f64,
    pub constant: f64,
}

impl BoundaryFlux {
    pub const ZERO: Self = Self { coef: 0.0, constant: 0.0 };

    pub fn eval(&self, f: f64) -> f64 {
        self.coef * f + self.constant
    }
}

/// Finite-volume Laplacian with explicit boundary fluxes.
///
/// `inner` is the flux `r^{n-1} f'` at `r_0` and `outer` the flux at `r_M`.
pub fn laplacian_with_flux(
    grid: &RadialGrid,
    values: &[f64],
    inner: BoundaryFlux,
    outer: BoundaryFlux,
) -> Vec<f64> {
    let m = grid.last();
    let w = grid.face_weights();
    let vol = grid.volumes();
    let flux = |i: usize| w[i] * (values[i + 1] - values[i]);
    (0..=m)
        .map(|i| {
            let right = if i == m { outer.eval(values[m]) } else { flux(i) };
            let left = if i == 0 { inner.eval(values[0]) } else { flux(i - 1) };
            (right - left) / vol[i]
        })
        .collect()
}

/// Tridiagonal matrix of [`laplacian_with_flux`] as `(lower, diag, upper)` rows.
pub fn laplacian_matrix(grid: &RadialGrid, inner_coef: f64, outer_coef: f64) -> Tridiagonal {
    let m = grid.last();
    let w = grid.face_weights();
    let vol = grid.volumes();
    let mut t = Tridiagonal::zeros(m + 1);
    for i in 0..=m {
        let mut d = 0.0;
        if i > 0 {
            t.lower[i] = w[i - 1] / vol[i];
            d -= w[i - 1];
        } else {
            d -= inner_coef;
        }
        if i < m {
            t.upper[i] = w[i] / vol[i];
            d -= w[i];
        } else {
            d += outer_coef;
        }
        t.diag[i] = d / vol[i];
    }
    t
}

/// Discrete radial Laplacian `f'' + (n-1) f'/r`.
///
/// Interior nodes use the finite-volume stencil. At `r = 0` the even extension
/// gives `Δf(0) = n f''(0)`; other boundary nodes use one-sided quadratic
/// interpolation.
pub fn laplacian_radial(f: &RadialField) -> Result<RadialField> {
    let grid = f.grid();
    if grid.len() < 3 {
        return Err(Error::Stencil(grid.len()));
    }
    let x = grid.nodes();
    let v = f.values();
    let m = grid.last();
    let mut out = laplacian_with_flux(grid, v, BoundaryFlux::ZERO, BoundaryFlux::ZERO);
    let n1 = (grid.dim() - 1) as f64;
    // cubic one-sided interpolation keeps f'' second order; three-node grids fall back to the quadratic
    let width = grid.len().min(4);
    if x[0] > 0.0 {
        let (d1, d2) = interpolant_derivatives(&x[..width], &v[..width], x[0]);
        out[0] = d2 + n1 * d1 / x[0];
    }
    let (d1, d2) = interpolant_derivatives(&x[m + 1 - width..], &v[m + 1 - width..], x[m]);
    out[m] = d2 + n1 * d1 / x[m];
    RadialField::new(grid.clone(), out)
}

/// Node indices where [`laplacian_radial`] falls back to one-sided stencils.
pub fn one_sided_nodes(grid: &RadialGrid) -> Vec<usize> {
    if grid.r_in() > 0.0 {
        vec![0, grid.last()]
    } else {
        vec![grid.last()]
    }
}

/// First and second derivative at `at` of the interpolant through the
/// given points, built from divided differences so that constants give
/// exactly zero.
pub fn interpolant_derivatives(x: &[f64], f: &[f64], at: f64) -> (f64, f64) {
    let k = x.len();
    let mut table = f.to_vec();
    // Newton form p(z) = Σ c_j Π_{l<j} (z - x_l); track the basis product and its derivatives
    let (mut d1, mut d2) = (0.0, 0.0);
    let (mut b0, mut b1, mut b2) = (1.0, 0.0, 0.0);
    for j in 0..k {
        if j > 0 {
            for i in (j..k).rev() {
                table[i] = (table[i] - table[i - 1]) / (x[i] - x[i - j]);
            }
            let z = at - x[j - 1];
            b2 = b2 * z + 2.0 * b1;
            b1 = b1 * z + b0;
            b0 *= z;
        }
        d1 += table[j] * b1;
        d2 += table[j] * b2;
    }
    (d1, d2)
}

/// First and second derivative at `at` of the quadratic through three points.
pub fn quadratic_derivatives(x: [f64; 3], f: [f64; 3], at: f64) -> (f64, f64) {
    interpolant_derivatives(&x, &f, at)
}

/// Exponent of the conformal volume factor, `2n/(n-2)`.
pub fn volume_exponent(n: usize) -> f64 {
    2.0 * n as f64 / (n as f64 - 2.0)
}

/// `∫ f dV_t` with `dV_t = u^{2n/(n-2)} ω_{n-1} r^{n-1} dr`, composite trapezoid.
pub fn integrate_dv(f: &RadialField, u: &RadialField) -> Result<f64> {
    f.check_same_grid(u)?;
    u.ensure_positive("conformal factor")?;
    let n = f.grid().dim();
    let p = volume_exponent(n);
    Ok(trapezoid(f.grid(), |i| f.values()[i] * u.values()[i].powf(p)))
}

/// Trapezoid integral of `g(i) ω r^{n-1}` over the grid.
pub(crate) fn trapezoid(grid: &RadialGrid, g: impl Fn(usize) -> f64) -> f64 {
    let n = grid.dim();
    let omega = SphereConstants::new(n).omega;
    let x = grid.nodes();
    let integrand = |i: usize| g(i) * x[i].powi(n as i32 - 1);
    let mut sum = 0.0;
    let mut prev = integrand(0);
    for i in 1..x.len() {
        let cur = integrand(i);
        sum += 0.5 * (prev + cur) * (x[i] - x[i - 1]);
        prev = cur;
    }
    omega * sum
}

/// `(∫ |f|^p dV_t)^{1/p}`.
pub fn lp_norm(f: &RadialField, p: f64, u: &RadialField) -> Result<f64> {
    Ok(lp_integral(f, p, u)?.powf(1.0 / p))
}

/// `∫ |f|^p dV_t` without the root.
pub fn lp_integral(f: &RadialField, p: f64, u: &RadialField) -> Result<f64> {
    if !(p >= 1.0) {
        return Err(Error::Parameter(format!("L^p exponent must be >= 1, got {p}")));
    }
    let g = f.map(|v| v.abs().powf(p))?;
    integrate_dv(&g, u)
}

/// `max_i max(r_i, 1)^{-β} |f_i|`; for `β = -τ'` this is `sup r^{τ'} |f|`.
pub fn weighted_sup_norm(f: &RadialField, beta: f64) -> f64 {
    f.grid()
        .nodes()
        .iter()
        .zip(f.values())
        .map(|(&r, &v)| r.max(1.0).powf(-beta) * v.abs())
        .fold(0.0, f64::max)
}

/// Bound on `∫_{R_max}^∞ C r^{-decay} dV_0` for an integrand decaying at the given order.
///
/// `None` when the tail is not integrable (`decay <= n`).
pub fn truncation_tail_bound(n: usize, r_max: f64, c: f64, decay: f64) -> Option<f64> {
    let excess = decay - n as f64;
    (excess > 0.0).then(|| SphereConstants::new(n).omega * c.abs() * r_max.powf(-excess) / excess)
}

/// Dense tridiagonal system stored by diagonals.
#[derive(Debug, Clone, PartialEq)]
pub struct Tridiagonal {
    /// `lower[i]` multiplies `x[i-1]` in row `i`; `lower[0]` is unused.
    pub lower: Vec<f64>,
    pub diag: Vec<f64>,
    /// `upper[i]` multiplies `x[i+1]` in row `i`; the last entry is unused.
    pub upper: Vec<f64>,
}

impl Tridiagonal {
    pub fn zeros(len: usize) -> Self {
        Self { lower: vec![0.0; len], diag: vec![0.0; len], upper: vec![0.0; len] }
    }

    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    pub fn scale(&mut self, c: f64) {
        for v in self.lower.iter_mut().chain(self.diag.iter_mut()).chain(self.upper.iter_mut()) {
            *v *= c;
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let n = self.len();
        (0..n)
            .map(|i| {
                let mut s = self.diag[i] * x[i];
                if i > 0 {
                    s += self.lower[i] * x[i - 1];
                }
                if i + 1 < n {
                    s += self.upper[i] * x[i + 1];
                }
                s
            })
            .collect()
    }

    /// Thomas elimination. Fails on a zero or non-finite pivot.
    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        let n = self.len();
        if rhs.len() != n {
            return Err(Error::Shape(format!("rhs length {} for a {n}x{n} system", rhs.len())));
        }
        let mut c = vec![0.0; n];
        let mut d = vec![0.0; n];
        let mut pivot = self.diag[0];
        for i in 0..n {
            if i > 0 {
                pivot = self.diag[i] - self.lower[i] * c[i - 1];
            }
            if pivot == 0.0 || !pivot.is_finite() {
                return Err(Error::Convergence(format!("singular tridiagonal pivot at row {i}")));
            }
            c[i] = if i + 1 < n { self.upper[i] / pivot } else { 0.0 };
            d[i] = if i == 0 { rhs[0] / pivot } else { (rhs[i] - self.lower[i] * d[i - 1]) / pivot };
        }
        for i in (0..n - 1).rev() {
            d[i] -= c[i] * d[i + 1];
        }
        if d.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("tridiagonal solve".into()));
        }
        Ok(d)
    }
}
