//! Asymptotically flat backgrounds and initial data.
//!
//! The flow only sees a background through the flat radial Laplacian and the
//! scalar-curvature profile `R_0(r)`. Geometric backgrounds derive `R_0` from a
//! conformal factor over flat space; synthetic ones prescribe it directly,
//! which is the only way to reach a nonpositive Yamabe class in conformally
//! flat radial symmetry.

use std::f64::consts::PI;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::diagnostics::least_squares_line;
use crate::domain::{self, RadialField, RadialGrid};
use crate::error::{Error, Result};
use crate::{conformal_coefficient, critical_exponent};

/// Decay-order margin used for the flat background, `τ = n - 2 - ε`.
pub const FLAT_TAU_MARGIN: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BackgroundMode {
    Geometric,
    Synthetic,
}

/// Condition at the inner radius `r_in`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InnerBoundary {
    /// `u'(r_in) = 0`: regularity at the origin, or a reflecting wall.
    #[default]
    ZeroFlux,
    /// Inversion-symmetric minimal sphere, `u' + (n-2) u / (2 r_in) = 0`.
    ///
    /// The region `r < r_in` is replaced by a mirror copy of the exterior,
    /// as in the two-ended Schwarzschild manifold whose throat sits at
    /// `r_in = (m/2)^{1/(n-2)}`.
    MinimalSphere,
}

impl std::str::FromStr for InnerBoundary {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "zero-flux" => Ok(Self::ZeroFlux),
            "minimal-sphere" => Ok(Self::MinimalSphere),
            other => Err(Error::Config(format!("unknown inner boundary `{other}`"))),
        }
    }
}

impl std::fmt::Display for InnerBoundary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::ZeroFlux => "zero-flux",
            Self::MinimalSphere => "minimal-sphere",
        })
    }
}

#[derive(Debug, Clone)]
pub struct BackgroundSpec {
    pub name: String,
    pub tau: f64,
    pub r0_profile: RadialField,
    pub mode: BackgroundMode,
    /// Seed conformal factor over flat space for geometric backgrounds.
    pub seed: Option<RadialField>,
    /// `C` in `|R_0| <= C max(r,1)^{-2-τ}`.
    pub decay_constant: f64,
    pub inner: InnerBoundary,
}

impl BackgroundSpec {
    pub fn grid(&self) -> &Arc<RadialGrid> {
        self.r0_profile.grid()
    }

    pub fn dim(&self) -> usize {
        self.grid().dim()
    }

    pub fn with_inner_boundary(mut self, inner: InnerBoundary) -> Self {
        self.inner = inner;
        self
    }

    pub fn is_flat(&self) -> bool {
        self.r0_profile.values().iter().all(|&v| v == 0.0)
    }

    /// `R_0 ≡ 0` with `τ = n - 2 - ε`.
    pub fn flat(grid: &Arc<RadialGrid>) -> Result<Self> {
        let n = grid.dim();
        if n < 3 {
            return Err(Error::Parameter(format!("dimension must be >= 3, got {n}")));
        }
        Ok(Self {
            name: format!("flat{n}"),
            tau: n as f64 - 2.0 - FLAT_TAU_MARGIN,
            r0_profile: RadialField::zeros(grid),
            mode: BackgroundMode::Geometric,
            seed: Some(RadialField::constant(grid, 1.0)),
            decay_constant: 0.0,
            inner: InnerBoundary::ZeroFlux,
        })
    }

    /// `R_0(r) = A exp(-(r - r_c)²/σ²) (1 + r²)^{-(2+τ)/2}`.
    pub fn synthetic(grid: &Arc<RadialGrid>, params: SyntheticParams) -> Result<Self> {
        let SyntheticParams { amplitude, center, width, tau } = params;
        if !(width > 0.0) {
            return Err(Error::Parameter(format!("synthetic width must be positive, got {width}")));
        }
        if !(tau > 0.0) {
            return Err(Error::Parameter(format!("decay order must be positive, got {tau}")));
        }
        let profile = RadialField::from_fn(grid, |r| {
            let g = (-(r - center).powi(2) / (width * width)).exp();
            amplitude * g * (1.0 + r * r).powf(-(2.0 + tau) / 2.0)
        })?;
        let decay_constant = check_decay(&profile, tau)?;
        Ok(Self {
            name: params.name(),
            tau,
            r0_profile: profile,
            mode: BackgroundMode::Synthetic,
            seed: None,
            decay_constant,
            inner: InnerBoundary::ZeroFlux,
        })
    }

    /// Synthetic background from an arbitrary curvature profile.
    pub fn custom(name: &str, tau: f64, profile: RadialField) -> Result<Self> {
        let decay_constant = check_decay(&profile, tau)?;
        Ok(Self {
            name: name.to_string(),
            tau,
            r0_profile: profile,
            mode: BackgroundMode::Synthetic,
            seed: None,
            decay_constant,
            inner: InnerBoundary::ZeroFlux,
        })
    }

    /// Geometric background `u_seed^{4/(n-2)} δ`, with `R_0 = u^{-N}(-a(n) Δu)`.
    pub fn geometric(name: &str, tau: f64, seed: RadialField) -> Result<Self> {
        seed.ensure_positive("seed conformal factor")?;
        let n = seed.grid().dim();
        let a = conformal_coefficient(n);
        let big_n = critical_exponent(n);
        let lap = domain::laplacian_radial(&seed)?;
        let profile = lap.zip_map(&seed, |l, u| -a * l * u.powf(-big_n))?;
        let decay_constant = check_decay(&profile, tau)?;
        Ok(Self {
            name: name.to_string(),
            tau,
            r0_profile: profile,
            mode: BackgroundMode::Geometric,
            seed: Some(seed),
            decay_constant,
            inner: InnerBoundary::ZeroFlux,
        })
    }

    /// Re-checks the construction-time decay invariant.
    pub fn verify_decay(&self) -> Result<f64> {
        check_decay(&self.r0_profile, self.tau)
    }
}

/// Returns `C = max |f| max(r,1)^{2+τ}`; fails if the weighted profile is
/// still growing through the outermost decade, i.e. `f` decays slower than `r^{-2-τ}`.
pub fn check_decay(profile: &RadialField, tau: f64) -> Result<f64> {
    let grid = profile.grid();
    let weighted: Vec<f64> = grid
        .nodes()
        .iter()
        .zip(profile.values())
        .map(|(&r, &v)| v.abs() * r.max(1.0).powf(2.0 + tau))
        .collect();
    let c = weighted.iter().copied().fold(0.0, f64::max);
    let decade = grid.r_max() / 10.0;
    let inner_max = grid
        .nodes()
        .iter()
        .zip(&weighted)
        .filter(|(&r, _)| r <= decade)
        .map(|(_, &w)| w)
        .fold(0.0, f64::max);
    let tail = weighted[grid.last()];
    if tail > 0.0 && tail > (1.0 + 1e-6) * inner_max {
        return Err(Error::Decay(format!(
            "|R_0| r^(2+tau) grows to {tail:e} at R_max (inner max {inner_max:e}) for tau = {tau}"
        )));
    }
    Ok(c)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticParams {
    pub amplitude: f64,
    pub center: f64,
    pub width: f64,
    pub tau: f64,
}

impl SyntheticParams {
    pub fn name(&self) -> String {
        format!("synthetic:A={},rc={},sigma={},tau={}", self.amplitude, self.center, self.width, self.tau)
    }
}

/// Background catalog entry addressed by name, e.g. `flat3` or
/// `synthetic:A=-50,rc=2,sigma=1,tau=1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum BackgroundChoice {
    /// `flat` or `flatN`; the dimension, when given, must match the grid.
    Flat { dim: Option<usize> },
    Synthetic(SyntheticParams),
}

impl BackgroundChoice {
    pub fn parse(name: &str) -> Result<Self> {
        let name = name.trim();
        if let Some(rest) = name.strip_prefix("flat") {
            if rest.is_empty() {
                return Ok(Self::Flat { dim: None });
            }
            let dim = rest
                .parse::<usize>()
                .map_err(|_| Error::Config(format!("bad background name `{name}`")))?;
            return Ok(Self::Flat { dim: Some(dim) });
        }
        if let Some(rest) = name.strip_prefix("synthetic") {
            let rest = rest.strip_prefix(':').unwrap_or(rest);
            let mut p = SyntheticParams { amplitude: 0.0, center: 0.0, width: 1.0, tau: 1.0 };
            for kv in rest.split(',').filter(|s| !s.trim().is_empty()) {
                let (k, v) = kv
                    .split_once('=')
                    .ok_or_else(|| Error::Config(format!("expected key=value in `{kv}`")))?;
                let v: f64 = v
                    .trim()
                    .parse()
                    .map_err(|_| Error::Config(format!("bad number `{v}` for `{k}`")))?;
                match k.trim() {
                    "A" | "amplitude" => p.amplitude = v,
                    "rc" | "center" => p.center = v,
                    "sigma" | "width" => p.width = v,
                    "tau" => p.tau = v,
                    other => return Err(Error::Config(format!("unknown synthetic parameter `{other}`"))),
                }
            }
            return Ok(Self::Synthetic(p));
        }
        Err(Error::Config(format!("unknown background `{name}`")))
    }

    pub fn name(&self) -> String {
        match self {
            Self::Flat { dim: Some(d) } => format!("flat{d}"),
            Self::Flat { dim: None } => "flat".into(),
            Self::Synthetic(p) => p.name(),
        }
    }

    pub fn build(&self, grid: &Arc<RadialGrid>) -> Result<BackgroundSpec> {
        match self {
            Self::Flat { dim } => {
                if let Some(d) = dim {
                    if *d != grid.dim() {
                        return Err(Error::Config(format!(
                            "background flat{d} on a grid of dimension {}",
                            grid.dim()
                        )));
                    }
                }
                BackgroundSpec::flat(grid)
            }
            Self::Synthetic(p) => BackgroundSpec::synthetic(grid, *p),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "family")]
pub enum InitialFamily {
    Flat,
    Schwarzschild { m: f64 },
    GaussianBump { eps: f64, sigma: f64 },
    /// `1 + ε (4π s_0)^{-n/2} exp(-r²/(4 s_0))`.
    HeatKernel { eps: f64, s0: f64 },
    /// Newtonian potential of the compact bump `c (1 - r²/s²)^4` with far-field coefficient `a`.
    Newtonian { a: f64, radius: Option<f64> },
    Custom { label: String },
}

/// Initial conformal factor over the flat reference, stored as `u_0 - 1`.
#[derive(Debug, Clone)]
pub struct InitialData {
    pub excess: RadialField,
    pub family: InitialFamily,
    /// Scalar-curvature source used to build Newtonian data.
    pub source: Option<RadialField>,
}

impl InitialData {
    pub fn u0(&self) -> RadialField {
        self.excess.map(|v| 1.0 + v).expect("finite excess stays finite")
    }

    pub fn grid(&self) -> &Arc<RadialGrid> {
        self.excess.grid()
    }

    fn new(excess: RadialField, family: InitialFamily) -> Result<Self> {
        let data = Self { excess, family, source: None };
        data.u0().ensure_positive("initial conformal factor")?;
        Ok(data)
    }

    pub fn flat(grid: &Arc<RadialGrid>) -> Self {
        Self { excess: RadialField::zeros(grid), family: InitialFamily::Flat, source: None }
    }

    pub fn custom(label: &str, u0: &RadialField) -> Result<Self> {
        u0.ensure_positive("initial conformal factor")?;
        Self::new(u0.map(|u| u - 1.0)?, InitialFamily::Custom { label: label.into() })
    }

    /// `u_0 = 1 + m / (2 r^{n-2})`.
    pub fn schwarzschild(grid: &Arc<RadialGrid>, m: f64) -> Result<Self> {
        if !(m >= 0.0) {
            return Err(Error::Parameter(format!("Schwarzschild mass must be >= 0, got {m}")));
        }
        let k = grid.dim() as i32 - 2;
        if m > 0.0 {
            let margin = m.powf(1.0 / k as f64) / 4.0;
            if grid.r_in() < margin {
                return Err(Error::SingularNode {
                    node: 0,
                    r: grid.r_in(),
                    reason: format!("Schwarzschild data need r_in >= m^(1/(n-2))/4 = {margin}"),
                });
            }
        }
        let excess = RadialField::from_fn(grid, |r| if m == 0.0 { 0.0 } else { 0.5 * m / r.powi(k) })?;
        Self::new(excess, InitialFamily::Schwarzschild { m })
    }

    /// `u_0 = 1 + ε exp(-r²/σ²)`.
    pub fn gaussian_bump(grid: &Arc<RadialGrid>, eps: f64, sigma: f64) -> Result<Self> {
        if !(sigma > 0.0) {
            return Err(Error::Parameter(format!("bump width must be positive, got {sigma}")));
        }
        let excess = RadialField::from_fn(grid, |r| eps * (-(r * r) / (sigma * sigma)).exp())?;
        Self::new(excess, InitialFamily::GaussianBump { eps, sigma })
    }

    pub fn heat_kernel(grid: &Arc<RadialGrid>, eps: f64, s0: f64) -> Result<Self> {
        if !(s0 > 0.0) {
            return Err(Error::Parameter(format!("heat-kernel time must be positive, got {s0}")));
        }
        let n = grid.dim();
        let excess = RadialField::from_fn(grid, |r| eps * heat_kernel(n, r, s0))?;
        Self::new(excess, InitialFamily::HeatKernel { eps, s0 })
    }

    /// `u_0 = 1 + w` with `-Δw = f`, `w → 0`, for `n = 3`.
    ///
    /// `w` solves the discrete Poisson problem with the finite-volume
    /// Laplacian and the Robin far-field condition, so beyond the support
    /// it is exactly `a/r`.
    pub fn newtonian(source: &RadialField) -> Result<Self> {
        let grid = source.grid();
        if grid.dim() != 3 {
            return Err(Error::Parameter("Newtonian data are defined for n = 3 only".into()));
        }
        if let Some(i) = source.values().iter().position(|&f| f < 0.0) {
            return Err(Error::Parameter(format!("Newtonian source is negative at node {i}")));
        }
        let x = grid.nodes();
        let support = grid.r_max() / 8.0;
        if let Some(i) = (0..x.len()).find(|&i| x[i] > support && source.values()[i] != 0.0) {
            return Err(Error::Parameter(format!(
                "Newtonian source must vanish beyond R_max/8 = {support}, nonzero at r = {}",
                x[i]
            )));
        }
        let m = grid.last();
        let lap = domain::laplacian_matrix(grid, 0.0, -grid.r_max());
        let rhs: Vec<f64> = source.values().iter().map(|f| -f).collect();
        let excess = lap.solve(&rhs)?;
        let a = excess[m] * x[m];
        let mut data = Self::new(RadialField::new(grid.clone(), excess)?, InitialFamily::Newtonian { a, radius: None })?;
        data.source = Some(source.clone());
        Ok(data)
    }

    /// Newtonian data for `f = c (1 - r²/s²)^4` on `r < s`, normalised so that
    /// `u_0 ~ 1 + a/r` at large `r` (ADM mass `2a`).
    pub fn newtonian_bump(grid: &Arc<RadialGrid>, a: f64, radius: f64) -> Result<Self> {
        if !(radius > 0.0) || !(a >= 0.0) {
            return Err(Error::Parameter(format!("bad Newtonian bump a = {a}, radius = {radius}")));
        }
        let source = RadialField::from_fn(grid, |r| newtonian_bump_source(a, radius, r))?;
        let mut data = Self::newtonian(&source)?;
        data.family = InitialFamily::Newtonian { a, radius: Some(radius) };
        Ok(data)
    }
}

/// `c (1 - r²/s²)^4` with `∫_0^s r² f dr = a`.
pub fn newtonian_bump_source(a: f64, radius: f64, r: f64) -> f64 {
    if r >= radius {
        return 0.0;
    }
    let c = a * 3465.0 / (128.0 * radius.powi(3));
    c * (1.0 - (r / radius).powi(2)).powi(4)
}

/// Euclidean heat kernel `(4π s)^{-n/2} exp(-r²/(4s))`.
pub fn heat_kernel(n: usize, r: f64, s: f64) -> f64 {
    (4.0 * PI * s).powf(-(n as f64) / 2.0) * (-(r * r) / (4.0 * s)).exp()
}

/// Negated least-squares slope of `log|f|` against `log r` over the outermost decade.
pub fn decay_order_estimate(f: &RadialField) -> Result<f64> {
    let grid = f.grid();
    let lo = grid.r_max() / 10.0;
    let (xs, ys): (Vec<f64>, Vec<f64>) = grid
        .nodes()
        .iter()
        .zip(f.values())
        .filter(|(&r, &v)| r >= lo && r > 0.0 && v != 0.0)
        .map(|(&r, &v)| (r.ln(), v.abs().ln()))
        .unzip();
    if xs.len() < 2 {
        return Err(Error::UndefinedFit("field vanishes on the outer decade".into()));
    }
    let (slope, _, _) = least_squares_line(&xs, &ys)?;
    Ok(-slope)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{build_grid, GridPolicy};

    fn grid(n: usize, r_in: f64, r_max: f64, m: usize) -> Arc<RadialGrid> {
        build_grid(n, r_in, r_max, m, GridPolicy::LogStretched).unwrap()
    }

    #[test]
    fn flat_profiles_vanish() {
        for n in [3, 4] {
            let bg = BackgroundSpec::flat(&grid(n, 0.0, 20.0, 64)).unwrap();
            assert!(bg.is_flat());
            assert_eq!(bg.name, format!("flat{n}"));
        }
        assert!(build_grid(2, 0.0, 20.0, 64, GridPolicy::LogStretched).is_err());
    }

    #[test]
    fn zero_amplitude_synthetic_is_flat() {
        let g = grid(3, 0.0, 50.0, 128);
        let p = SyntheticParams { amplitude: 0.0, center: 2.0, width: 1.0, tau: 1.0 };
        assert!(BackgroundSpec::synthetic(&g, p).unwrap().is_flat());
    }

    #[test]
    fn slow_decay_is_rejected() {
        let g = grid(3, 0.0, 1000.0, 256);
        let profile = RadialField::from_fn(&g, |r| (1.0 + r * r).powf(-1.0)).unwrap();
        assert!(matches!(BackgroundSpec::custom("slow", 1.0, profile.clone()), Err(Error::Decay(_))));
        assert!(BackgroundSpec::custom("ok", 0.0, profile).is_ok());
    }

    #[test]
    fn catalog_names_parse() {
        assert_eq!(BackgroundChoice::parse("flat3").unwrap(), BackgroundChoice::Flat { dim: Some(3) });
        let c = BackgroundChoice::parse("synthetic:A=-50,rc=2,sigma=1,tau=1").unwrap();
        assert_eq!(
            c,
            BackgroundChoice::Synthetic(SyntheticParams { amplitude: -50.0, center: 2.0, width: 1.0, tau: 1.0 })
        );
        assert_eq!(BackgroundChoice::parse(&c.name()).unwrap(), c);
        assert!(BackgroundChoice::parse("synthetic:B=1").is_err());
        assert!(BackgroundChoice::parse("sphere").is_err());
        let g = grid(4, 0.0, 20.0, 64);
        assert!(BackgroundChoice::Flat { dim: Some(3) }.build(&g).is_err());
    }

    #[test]
    fn schwarzschild_values() {
        let g = grid(3, 0.5, 100.0, 256);
        let d = InitialData::schwarzschild(&g, 0.0).unwrap();
        assert!(d.excess.values().iter().all(|&v| v == 0.0));
        let d = InitialData::schwarzschild(&g, 1.0).unwrap();
        let nodes = RadialGrid::from_nodes(3, vec![1.0, 2.0, 3.0]).unwrap();
        let e = InitialData::schwarzschild(&nodes, 1.0).unwrap();
        assert_eq!(e.u0().values()[1], 1.25);
        assert!(d.u0().min() > 1.0);
        let origin = grid(3, 0.0, 100.0, 256);
        assert!(matches!(InitialData::schwarzschild(&origin, 1.0), Err(Error::SingularNode { .. })));
    }

    #[test]
    fn newtonian_potential_of_zero_source() {
        let g = grid(3, 0.0, 256.0, 512);
        let d = InitialData::newtonian(&RadialField::zeros(&g)).unwrap();
        assert!(d.excess.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn newtonian_bump_far_field() {
        let g = grid(3, 0.0, 1024.0, 2048);
        let d = InitialData::newtonian_bump(&g, 1.0, 2.0).unwrap();
        // beyond the support the potential is exactly a/r with a = ∫ s² f ds
        let m = g.last();
        let a = d.excess.values()[m] * g.r_max();
        assert!((a - 1.0).abs() < 1e-4, "a = {a}");
        assert!(InitialData::newtonian(&RadialField::constant(&g, -1.0)).is_err());
        let wide = RadialField::from_fn(&g, |r| newtonian_bump_source(1.0, 200.0, r)).unwrap();
        assert!(InitialData::newtonian(&wide).is_err());
    }

    #[test]
    fn newtonian_potential_matches_closed_form() {
        // x = r/s: w = c s² [P(x)/x + (1-x²)^5/10] inside, P(x) = ∫_0^x y²(1-y²)^4 dy
        let closed = |r: f64| {
            let s = 2.0;
            let c = 3465.0 / (128.0 * s * s * s);
            if r >= s {
                return 1.0 / r;
            }
            let x = r / s;
            let p_over_x = x * x / 3.0 - 4.0 * x.powi(4) / 5.0 + 6.0 * x.powi(6) / 7.0 - 4.0 * x.powi(8) / 9.0
                + x.powi(10) / 11.0;
            c * s * s * (p_over_x + (1.0 - x * x).powi(5) / 10.0)
        };
        let mut errs = Vec::new();
        for m in [1024, 2048] {
            let g = grid(3, 0.0, 512.0, m);
            let d = InitialData::newtonian_bump(&g, 1.0, 2.0).unwrap();
            let err = g
                .nodes()
                .iter()
                .zip(d.excess.values())
                .map(|(&r, &w)| (w - closed(r)).abs())
                .fold(0.0, f64::max);
            errs.push((g.h(), err));
        }
        for (h, e) in &errs {
            assert!(*e < 10.0 * h * h, "{errs:?}");
        }
        let order = (errs[0].1 / errs[1].1).ln() / (errs[0].0 / errs[1].0).ln();
        assert!(order > 1.8, "{errs:?}");
    }

    #[test]
    fn decay_order_examples() {
        let g = grid(3, 0.0, 1000.0, 1024);
        let f = RadialField::from_fn(&g, |r| if r > 0.0 { r.powi(-2) } else { 0.0 }).unwrap();
        assert!((decay_order_estimate(&f).unwrap() - 2.0).abs() < 1e-10);
        let f = RadialField::from_fn(&g, |r| if r > 0.0 { 3.0 / r + r.powi(-3) } else { 0.0 }).unwrap();
        assert!((decay_order_estimate(&f).unwrap() - 1.0).abs() < 0.02);
        assert!(matches!(decay_order_estimate(&RadialField::zeros(&g)), Err(Error::UndefinedFit(_))));
    }
}
