//! Time integration of the conformal-factor Yamabe flow
//! `∂_t u = ((n-2)/4) u^{1-N} (a(n) Δu - R_0 u) = -((n-2)/4) R u`.
//!
//! Steps are backward Euler solved by damped Newton on the tridiagonal
//! Jacobian. The state is carried as `v = u - 1`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::background::{BackgroundSpec, InitialData};
use crate::domain::{self, RadialField, RadialGrid};
use crate::elliptic::{self, compute_R, curvature_of_excess};
use crate::error::{Error, Result};
use crate::{conformal_coefficient, critical_exponent};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    BackwardEulerNewton,
    /// One Newton step per time step, without line search.
    LinearlyImplicit,
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "backward-euler-newton" => Ok(Self::BackwardEulerNewton),
            "linearly-implicit" => Ok(Self::LinearlyImplicit),
            _ => Err(Error::Config(format!("unknown scheme `{s}`"))),
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::BackwardEulerNewton => "backward-euler-newton",
            Self::LinearlyImplicit => "linearly-implicit",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowConfig {
    pub scheme: Scheme,
    pub dt0: f64,
    pub dt_max: f64,
    /// Bound on `|(u⁺-u)/dt - ∂_t u(u⁺)|`, raised to the double-precision floor of the operator when needed.
    pub newton_tol: f64,
    pub newton_max: usize,
    pub t_end: f64,
    /// Steps between monitor records.
    pub monitor_every: usize,
    /// Steps between checkpoints; 0 keeps only the first and last.
    pub checkpoint_every: usize,
    pub safety: f64,
    /// Exponents of the monitored `∫|R|^p dV_t`; `None` selects [`default_p_list`].
    pub p_list: Option<Vec<f64>>,
    pub tau_primes: Vec<f64>,
    /// Stop once `max u` reaches this value.
    pub max_u_cap: Option<f64>,
    pub max_steps: Option<usize>,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self {
            scheme: Scheme::BackwardEulerNewton,
            dt0: 1e-3,
            dt_max: 1.0,
            newton_tol: 1e-10,
            newton_max: 25,
            t_end: 1.0,
            monitor_every: 1,
            checkpoint_every: 0,
            safety: 1.05,
            p_list: None,
            tau_primes: vec![0.5],
            max_u_cap: None,
            max_steps: None,
        }
    }
}

/// Halvings of `dt` tried before a step is declared singular.
pub const MAX_HALVINGS: usize = 10;

impl FlowConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(what.to_string()));
        if !(self.dt0 > 0.0 && self.dt0.is_finite()) {
            return bad("dt0 must be positive");
        }
        if !(self.dt_max >= self.dt0) {
            return bad("dt_max must be at least dt0");
        }
        if !(self.t_end > 0.0 && self.t_end.is_finite()) {
            return bad("t_end must be positive");
        }
        if !(self.newton_tol > 0.0) {
            return bad("newton_tol must be positive");
        }
        if self.newton_max == 0 {
            return bad("newton_max must be at least 1");
        }
        if self.monitor_every == 0 {
            return bad("monitor_every must be at least 1");
        }
        if !(self.safety >= 1.0 && self.safety.is_finite()) {
            return bad("safety must be >= 1");
        }
        if let Some(p) = &self.p_list {
            if p.is_empty() || p.iter().any(|&p| !(p >= 1.0 && p.is_finite())) {
                return bad("p_list entries must be >= 1");
            }
        }
        if self.tau_primes.iter().any(|&t| !(t >= 0.0 && t.is_finite())) {
            return bad("tau_primes entries must be >= 0");
        }
        if let Some(cap) = self.max_u_cap {
            if !(cap > 1.0) {
                return bad("max_u_cap must exceed 1");
            }
        }
        Ok(())
    }

    pub fn p_list_for(&self, n: usize) -> Vec<f64> {
        self.p_list.clone().unwrap_or_else(|| default_p_list(n))
    }
}

/// `{n/2 - 0.1, n/2, n/2 + 0.1, 2}`, plus `1` when `n = 3`, sorted.
pub fn default_p_list(n: usize) -> Vec<f64> {
    let half = n as f64 / 2.0;
    let mut p = vec![half - 0.1, half, half + 0.1, 2.0];
    if n == 3 {
        p.push(1.0);
    }
    p.sort_by(f64::total_cmp);
    p.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
    p
}

/// `R_max² / (16(n-1))`: the diffusive front stays inside `R_max/2` up to this time.
pub fn valid_time_horizon(grid: &RadialGrid) -> f64 {
    grid.r_max().powi(2) / (16.0 * (grid.dim() as f64 - 1.0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowState {
    pub t: f64,
    /// `u - 1`.
    pub excess: RadialField,
    /// Step to attempt next.
    pub dt: f64,
    pub step_index: usize,
    /// Rate-form Newton residual of the last accepted step.
    pub residual: f64,
}

impl FlowState {
    pub fn initial(init: &InitialData, dt0: f64) -> Self {
        Self { t: 0.0, excess: init.excess.clone(), dt: dt0, step_index: 0, residual: 0.0 }
    }

    pub fn u(&self) -> RadialField {
        self.excess.map(|v| 1.0 + v).expect("finite excess stays finite")
    }
}

/// `∂_t u = ((n-2)/4) u^{1-N} (a(n) Δu - R_0 u)` with the free-standing stencil.
pub fn rhs(u: &RadialField, bg: &BackgroundSpec) -> Result<RadialField> {
    u.check_same_grid(&bg.r0_profile)?;
    u.ensure_positive("conformal factor")?;
    let n = bg.dim();
    let c = (n as f64 - 2.0) / 4.0;
    let a = conformal_coefficient(n);
    let big_n = critical_exponent(n);
    let lap = domain::laplacian_radial(u)?;
    let r0 = bg.r0_profile.values();
    let values = (0..u.len())
        .map(|i| {
            let ui = u.values()[i];
            c * ui.powf(1.0 - big_n) * (a * lap.values()[i] - r0[i] * ui)
        })
        .collect();
    RadialField::new(u.grid().clone(), values)
}

/// The same rate in curvature form, `-((n-2)/4) R u`.
pub fn rhs_curvature_form(u: &RadialField, bg: &BackgroundSpec) -> Result<RadialField> {
    let c = (bg.dim() as f64 - 2.0) / 4.0;
    let r = compute_R(u, bg)?;
    r.zip_map(u, |r, u| -c * r * u)
}

/// Rate of the excess under the boundary conditions of the background.
pub fn excess_rate(v: &[f64], bg: &BackgroundSpec) -> Vec<f64> {
    let n = bg.dim();
    let c = (n as f64 - 2.0) / 4.0;
    let a = conformal_coefficient(n);
    let big_n = critical_exponent(n);
    let lap = elliptic::laplacian_of_excess(v, bg.grid(), bg.inner);
    let r0 = bg.r0_profile.values();
    (0..v.len())
        .map(|i| {
            let u = 1.0 + v[i];
            c * u.powf(1.0 - big_n) * (a * lap[i] - r0[i] * u)
        })
        .collect()
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Implicit Euler system for one step of size `dt` from `v_old`.
struct StepSystem<'a> {
    bg: &'a BackgroundSpec,
    v_old: &'a [f64],
    dt: f64,
    lap: domain::Tridiagonal,
    lap_const: Vec<f64>,
    c: f64,
    a: f64,
    power: f64,
}

impl<'a> StepSystem<'a> {
    fn new(bg: &'a BackgroundSpec, v_old: &'a [f64], dt: f64) -> Self {
        let n = bg.dim();
        let (lap, lap_const) = elliptic::excess_operator(bg.grid(), bg.inner);
        Self {
            bg,
            v_old,
            dt,
            lap,
            lap_const,
            c: (n as f64 - 2.0) / 4.0,
            a: conformal_coefficient(n),
            power: critical_exponent(n) - 1.0,
        }
    }

    fn laplacian(&self, x: &[f64]) -> Vec<f64> {
        let mut l = self.lap.mul_vec(x);
        for (li, ci) in l.iter_mut().zip(&self.lap_const) {
            *li += ci;
        }
        l
    }

    /// Multiplied form `u^{N-1} (x - v) - dt c (a Δx - R_0 u)` and the rate residual.
    fn residuals(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let lap = self.laplacian(x);
        let r0 = self.bg.r0_profile.values();
        let mut f = Vec::with_capacity(x.len());
        let mut rate = Vec::with_capacity(x.len());
        for i in 0..x.len() {
            let u = 1.0 + x[i];
            let growth = self.c * (self.a * lap[i] - r0[i] * u);
            let w = u.powf(self.power);
            f.push(w * (x[i] - self.v_old[i]) - self.dt * growth);
            rate.push((x[i] - self.v_old[i]) / self.dt - growth / w);
        }
        (f, rate)
    }

    fn jacobian(&self, x: &[f64]) -> domain::Tridiagonal {
        let mut j = self.lap.clone();
        j.scale(-self.dt * self.c * self.a);
        let r0 = self.bg.r0_profile.values();
        for i in 0..x.len() {
            let u = 1.0 + x[i];
            j.diag[i] += self.power * u.powf(self.power - 1.0) * (x[i] - self.v_old[i])
                + u.powf(self.power)
                + self.dt * self.c * r0[i];
        }
        j
    }

    /// Residual level attainable in double precision at iterate `x`.
    fn floor(&self, x: &[f64]) -> f64 {
        let grid = self.bg.grid();
        let vmax = max_abs(x).max(max_abs(self.v_old));
        let umax = 1.0 + vmax;
        16.0 * f64::EPSILON
            * (self.c * self.a * vmax / grid.h_min().powi(2)
                + self.c * self.bg.r0_profile.max_abs() * umax
                + vmax / self.dt)
    }
}

enum Attempt {
    Accepted { x: Vec<f64>, residual: f64 },
    Rejected(String),
}

fn newton_solve(sys: &StepSystem, cfg: &FlowConfig) -> Attempt {
    let mut x = sys.v_old.to_vec();
    let (mut f, rate) = sys.residuals(&x);
    let mut res = max_abs(&rate);
    if res == 0.0 {
        return Attempt::Accepted { x, residual: 0.0 };
    }
    let mut merit = max_abs(&f);
    let linear = cfg.scheme == Scheme::LinearlyImplicit;
    for _ in 0..cfg.newton_max {
        let neg: Vec<f64> = f.iter().map(|v| -v).collect();
        let delta = match sys.jacobian(&x).solve(&neg) {
            Ok(d) => d,
            Err(e) => return Attempt::Rejected(e.to_string()),
        };
        let mut lambda = 1.0;
        let mut accepted = None;
        for _ in 0..30 {
            let trial: Vec<f64> = x.iter().zip(&delta).map(|(a, b)| a + lambda * b).collect();
            if trial.iter().all(|&t| t.is_finite() && 1.0 + t > 0.0) {
                let (tf, trate) = sys.residuals(&trial);
                let tm = max_abs(&tf);
                if linear || tm < merit {
                    accepted = Some((trial, tf, max_abs(&trate), tm));
                    break;
                }
            }
            if linear {
                return Attempt::Rejected("linearized step lost positivity".into());
            }
            lambda *= 0.5;
        }
        let Some((trial, tf, tres, tm)) = accepted else {
            // no descent left: accept if already within tolerance
            if res <= cfg.newton_tol + sys.floor(&x) {
                return Attempt::Accepted { x, residual: res };
            }
            return Attempt::Rejected(format!("line search failed at residual {res:e}"));
        };
        let step = lambda * max_abs(&delta);
        let increment = trial.iter().zip(sys.v_old).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        x = trial;
        f = tf;
        res = tres;
        merit = tm;
        if linear {
            return Attempt::Accepted { x, residual: res };
        }
        let tol = cfg.newton_tol + sys.floor(&x);
        let settled = lambda == 1.0 && step <= (1e-10 * increment).max(1e-15 * max_abs(&x)).max(1e-300);
        if res <= tol || settled {
            return Attempt::Accepted { x, residual: res };
        }
    }
    Attempt::Rejected(format!("Newton did not converge in {} iterations (residual {res:e})", cfg.newton_max))
}

/// One time step of size `state.dt`, halving on failure.
///
/// The returned state carries the next step size, grown by `safety` and
/// capped at `dt_max`.
pub fn step(state: &FlowState, bg: &BackgroundSpec, cfg: &FlowConfig) -> Result<FlowState> {
    state.excess.check_same_grid(&bg.r0_profile)?;
    let mut dt = state.dt;
    let mut last_reason = String::new();
    for _ in 0..=MAX_HALVINGS {
        let sys = StepSystem::new(bg, state.excess.values(), dt);
        match newton_solve(&sys, cfg) {
            Attempt::Accepted { x, residual } => {
                return Ok(FlowState {
                    t: state.t + dt,
                    excess: RadialField::new(state.excess.grid().clone(), x)?,
                    dt: (dt * cfg.safety).min(cfg.dt_max),
                    step_index: state.step_index + 1,
                    residual,
                });
            }
            Attempt::Rejected(reason) => last_reason = reason,
        }
        dt *= 0.5;
    }
    Err(Error::FlowSingularity { t: state.t, reason: format!("{MAX_HALVINGS} step halvings exhausted: {last_reason}") })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MassEstimate {
    /// `2A` from the least-squares fit of `u - 1 ≈ A r^{2-n}` on `[R_max/4, R_max]`.
    pub mass: f64,
    /// `-2 r^{n-1} u'(r) / (n-2)` at the node nearest `R_max/2`.
    pub flux_mass: f64,
    pub disagreement: f64,
}

/// ADM mass of the conformally flat end `u ~ 1 + A r^{2-n}`.
pub fn adm_mass(excess: &RadialField) -> Result<MassEstimate> {
    let grid = excess.grid();
    let n = grid.dim() as f64;
    let r_max = grid.r_max();
    let x = grid.nodes();
    let v = excess.values();
    let (mut sxy, mut sxx, mut count) = (0.0, 0.0, 0);
    for i in grid.indices_in(0.25 * r_max, r_max) {
        let basis = x[i].powf(2.0 - n);
        sxy += basis * v[i];
        sxx += basis * basis;
        count += 1;
    }
    if count < 2 || !(sxx > 0.0) {
        return Err(Error::MassUndefined(format!("{count} nodes in the fit window")));
    }
    let mass = 2.0 * sxy / sxx;

    let target = 0.5 * r_max;
    let nearest = x
        .iter()
        .enumerate()
        .min_by(|a, b| (a.1 - target).abs().total_cmp(&(b.1 - target).abs()))
        .map(|(i, _)| i)
        .unwrap_or(0)
        .clamp(1, grid.last() - 1);
    let (d1, _) = domain::quadratic_derivatives(
        [x[nearest - 1], x[nearest], x[nearest + 1]],
        [v[nearest - 1], v[nearest], v[nearest + 1]],
        x[nearest],
    );
    let flux_mass = -2.0 * x[nearest].powf(n - 1.0) * d1 / (n - 2.0);
    Ok(MassEstimate { mass, flux_mass, disagreement: (mass - flux_mass).abs() })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonitorRecord {
    pub t: f64,
    pub step_index: usize,
    pub dt: f64,
    pub sup_r: f64,
    /// `(p, ∫|R|^p dV_t)` in configured order.
    pub lp_r: Vec<(f64, f64)>,
    /// Signed `∫R dV_t`.
    pub l1_r: f64,
    pub mass: f64,
    pub flux_mass: f64,
    pub min_u: f64,
    pub max_u: f64,
    pub min_r: f64,
    /// `(τ', sup max(r,1)^{τ'} |R|)`.
    pub weighted_sup_r: Vec<(f64, f64)>,
    /// `∫ (u^{2n/(n-2)} - 1) dV_0`, the volume gained relative to the background.
    pub volume_excess: f64,
}

impl MonitorRecord {
    pub fn lp(&self, p: f64) -> Option<f64> {
        self.lp_r.iter().find(|(q, _)| (q - p).abs() < 1e-9).map(|e| e.1)
    }

    pub fn weighted_sup(&self, tau_prime: f64) -> Option<f64> {
        self.weighted_sup_r.iter().find(|(q, _)| (q - tau_prime).abs() < 1e-9).map(|e| e.1)
    }
}

/// Evaluates every monitored quantity at `state`.
pub fn monitor(state: &FlowState, bg: &BackgroundSpec, p_list: &[f64], tau_primes: &[f64]) -> Result<MonitorRecord> {
    let r = curvature_of_excess(&state.excess, bg)?;
    let u = state.u();
    let grid = bg.grid();
    let mut lp_r = Vec::with_capacity(p_list.len());
    for &p in p_list {
        lp_r.push((p, domain::lp_integral(&r, p, &u)?));
    }
    let weighted_sup_r = tau_primes.iter().map(|&tp| (tp, domain::weighted_sup_norm(&r, -tp))).collect();
    let mass = adm_mass(&state.excess)?;
    let q = domain::volume_exponent(grid.dim());
    let omega = domain::SphereConstants::new(grid.dim()).omega;
    let x = grid.nodes();
    let v = state.excess.values();
    let nm1 = grid.dim() as i32 - 1;
    // (1+v)^q - 1 via ln_1p keeps precision for small excess
    let volume_excess = domain::trapezoid(grid, |i| omega * x[i].powi(nm1) * (q * v[i].ln_1p()).exp_m1());
    let record = MonitorRecord {
        t: state.t,
        step_index: state.step_index,
        dt: state.dt,
        sup_r: r.max_abs(),
        lp_r,
        l1_r: domain::integrate_dv(&r, &u)?,
        mass: mass.mass,
        flux_mass: mass.flux_mass,
        min_u: u.min(),
        max_u: u.max(),
        min_r: r.min(),
        weighted_sup_r,
        volume_excess,
    };
    Ok(record)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum HaltReason {
    Singularity { t: f64, reason: String },
    MaxUCap { t: f64, max_u: f64 },
}

#[derive(Debug, Clone)]
pub struct FlowRun {
    pub p_list: Vec<f64>,
    pub tau_primes: Vec<f64>,
    pub records: Vec<MonitorRecord>,
    pub checkpoints: Vec<FlowState>,
    pub final_state: FlowState,
    pub halted: Option<HaltReason>,
}

/// Integrates from `t = 0` to `t_end`, recording monitor rows and checkpoints
/// at their cadences. A flow singularity ends the run early and is reported
/// in `halted` with the partial series.
pub fn run_flow(bg: &BackgroundSpec, init: &InitialData, cfg: &FlowConfig) -> Result<FlowRun> {
    cfg.validate()?;
    init.excess.check_same_grid(&bg.r0_profile)?;
    let p_list = cfg.p_list_for(bg.dim());
    let tau_primes = cfg.tau_primes.clone();
    let mut state = FlowState::initial(init, cfg.dt0);
    let mut records = vec![monitor(&state, bg, &p_list, &tau_primes)?];
    let mut checkpoints = vec![state.clone()];
    let mut halted = None;
    let t_stop = cfg.t_end * (1.0 - 1e-12);
    while state.t < t_stop && cfg.max_steps.is_none_or(|m| state.step_index < m) {
        let mut attempt = state.clone();
        let remaining = cfg.t_end - state.t;
        let clipped = attempt.dt >= remaining;
        if clipped {
            attempt.dt = remaining;
        }
        match step(&attempt, bg, cfg) {
            Ok(mut next) => {
                if clipped {
                    next.t = cfg.t_end;
                }
                state = next;
            }
            Err(Error::FlowSingularity { t, reason }) => {
                halted = Some(HaltReason::Singularity { t, reason });
                break;
            }
            Err(e) => return Err(e),
        }
        let k = state.step_index;
        if k % cfg.monitor_every == 0 {
            records.push(monitor(&state, bg, &p_list, &tau_primes)?);
        }
        if cfg.checkpoint_every > 0 && k % cfg.checkpoint_every == 0 {
            checkpoints.push(state.clone());
        }
        if let Some(cap) = cfg.max_u_cap {
            let max_u = 1.0 + state.excess.max();
            if max_u >= cap {
                halted = Some(HaltReason::MaxUCap { t: state.t, max_u });
                break;
            }
        }
    }
    if records.last().is_some_and(|r| r.step_index != state.step_index) {
        records.push(monitor(&state, bg, &p_list, &tau_primes)?);
    }
    if checkpoints.last().is_some_and(|c| c.step_index != state.step_index) {
        checkpoints.push(state.clone());
    }
    Ok(FlowRun { p_list, tau_primes, records, checkpoints, final_state: state, halted })
}

/// Format tag on the first line of monitor CSV files.
pub const MONITOR_FORMAT: &str = "ylab-monitor/1";

const FIXED_COLUMNS: [&str; 11] =
    ["t", "step", "dt", "sup_R", "l1_R", "mass", "flux_mass", "min_u", "max_u", "min_R", "volume_excess"];

fn fixed_columns() -> &'static [&'static str] {
    &FIXED_COLUMNS
}

/// Monitor series as CSV: a `#` comment line, a header, one row per record.
pub fn monitor_csv(records: &[MonitorRecord], p_list: &[f64], tau_primes: &[f64]) -> String {
    let mut header: Vec<String> = fixed_columns().iter().map(|s| s.to_string()).collect();
    header.extend(p_list.iter().map(|p| format!("lp_R[{p}]")));
    header.extend(tau_primes.iter().map(|t| format!("wsup_R[{t}]")));
    let mut out = format!(
        "# {MONITOR_FORMAT}: lp_R[p] = integral of |R|^p dV_t, wsup_R[tau] = sup max(r,1)^tau |R|, l1_R = signed integral of R dV_t\n"
    );
    out.push_str(&header.join(","));
    out.push('\n');
    for r in records {
        let mut row = vec![
            format!("{:e}", r.t),
            r.step_index.to_string(),
            format!("{:e}", r.dt),
            format!("{:e}", r.sup_r),
            format!("{:e}", r.l1_r),
            format!("{:e}", r.mass),
            format!("{:e}", r.flux_mass),
            format!("{:e}", r.min_u),
            format!("{:e}", r.max_u),
            format!("{:e}", r.min_r),
            format!("{:e}", r.volume_excess),
        ];
        row.extend(p_list.iter().map(|&p| format!("{:e}", r.lp(p).unwrap_or(f64::NAN))));
        row.extend(tau_primes.iter().map(|&t| format!("{:e}", r.weighted_sup(t).unwrap_or(f64::NAN))));
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

/// Parsed monitor CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct MonitorSeries {
    pub p_list: Vec<f64>,
    pub tau_primes: Vec<f64>,
    pub records: Vec<MonitorRecord>,
}

fn bracketed(name: &str, prefix: &str) -> Option<Result<f64>> {
    let inner = name.strip_prefix(prefix)?.strip_prefix('[')?.strip_suffix(']')?;
    Some(inner.parse().map_err(|_| Error::Schema(format!("bad column `{name}`"))))
}

/// Inverse of [`monitor_csv`]; fails with a schema error on missing or malformed columns.
pub fn parse_monitor_csv(text: &str) -> Result<MonitorSeries> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.starts_with('#') && !l.trim().is_empty());
    let (_, header) = lines.next().ok_or_else(|| Error::Schema("monitor CSV has no header".into()))?;
    let names: Vec<&str> = header.split(',').map(str::trim).collect();
    let fixed = fixed_columns();
    if names.len() < fixed.len() || names[..fixed.len()] != *fixed {
        return Err(Error::Schema(format!("monitor header must start with {}", fixed.join(","))));
    }
    let mut p_list = Vec::new();
    let mut tau_primes = Vec::new();
    for name in &names[fixed.len()..] {
        if let Some(p) = bracketed(name, "lp_R") {
            if !tau_primes.is_empty() {
                return Err(Error::Schema("lp_R columns must precede wsup_R columns".into()));
            }
            p_list.push(p?);
        } else if let Some(t) = bracketed(name, "wsup_R") {
            tau_primes.push(t?);
        } else {
            return Err(Error::Schema(format!("unknown monitor column `{name}`")));
        }
    }
    let mut records = Vec::new();
    for (lineno, line) in lines {
        let cells: Vec<&str> = line.split(',').map(str::trim).collect();
        if cells.len() != names.len() {
            return Err(Error::Schema(format!("line {}: {} cells, expected {}", lineno + 1, cells.len(), names.len())));
        }
        let num = |k: usize| -> Result<f64> {
            cells[k].parse::<f64>().map_err(|_| Error::Schema(format!("line {}: bad number `{}`", lineno + 1, cells[k])))
        };
        let step_index = cells[1]
            .parse::<usize>()
            .map_err(|_| Error::Schema(format!("line {}: bad step `{}`", lineno + 1, cells[1])))?;
        let base = fixed.len();
        let mut lp_r = Vec::with_capacity(p_list.len());
        for (j, &p) in p_list.iter().enumerate() {
            lp_r.push((p, num(base + j)?));
        }
        let mut weighted_sup_r = Vec::with_capacity(tau_primes.len());
        for (j, &t) in tau_primes.iter().enumerate() {
            weighted_sup_r.push((t, num(base + p_list.len() + j)?));
        }
        records.push(MonitorRecord {
            t: num(0)?,
            step_index,
            dt: num(2)?,
            sup_r: num(3)?,
            l1_r: num(4)?,
            mass: num(5)?,
            flux_mass: num(6)?,
            min_u: num(7)?,
            max_u: num(8)?,
            min_r: num(9)?,
            volume_excess: num(10)?,
            lp_r,
            weighted_sup_r,
        });
    }
    Ok(MonitorSeries { p_list, tau_primes, records })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::background::InnerBoundary;
    use crate::domain::{build_grid, GridPolicy};
    use std::sync::Arc;

    fn grid(r_in: f64, r_max: f64, m: usize) -> Arc<RadialGrid> {
        build_grid(3, r_in, r_max, m, GridPolicy::LogStretched).unwrap()
    }

    #[test]
    fn default_p_lists() {
        assert_eq!(default_p_list(3), vec![1.0, 1.4, 1.5, 1.6, 2.0]);
        let p4 = default_p_list(4);
        assert_eq!(p4.len(), 3);
        assert!((p4[0] - 1.9).abs() < 1e-15 && p4[1] == 2.0);
    }

    #[test]
    fn flat_fixed_point_is_exact() {
        let g = grid(0.0, 100.0, 256);
        let bg = BackgroundSpec::flat(&g).unwrap();
        let mut s = FlowState::initial(&InitialData::flat(&g), 0.5);
        let cfg = FlowConfig::default();
        for _ in 0..20 {
            s = step(&s, &bg, &cfg).unwrap();
        }
        assert!(s.excess.values().iter().all(|&v| v == 0.0));
        assert_eq!(rhs(&s.u(), &bg).unwrap().max_abs(), 0.0);
    }

    #[test]
    fn schwarzschild_is_stationary() {
        let g = grid(0.5, 200.0, 1024);
        let bg = BackgroundSpec::flat(&g).unwrap().with_inner_boundary(InnerBoundary::MinimalSphere);
        let init = InitialData::schwarzschild(&g, 1.0).unwrap();
        let h2 = g.h().powi(2);
        assert!(rhs(&init.u0(), &bg).unwrap().max_abs() < 100.0 * h2);
        let mut s = FlowState::initial(&init, 0.1);
        let cfg = FlowConfig { dt_max: 0.1, ..FlowConfig::default() };
        for _ in 0..100 {
            s = step(&s, &bg, &cfg).unwrap();
        }
        let drift = s.excess.zip_map(&init.excess, |a, b| (a - b).abs()).unwrap().max_abs();
        assert!(drift <= 10.0 * h2, "{drift}");
        let rec = monitor(&s, &bg, &[1.5], &[0.5]).unwrap();
        assert!(rec.sup_r <= 10.0 * h2);
        assert!((rec.mass - 1.0).abs() < 1e-6);
    }

    #[test]
    fn rate_forms_agree() {
        let g = grid(0.0, 30.0, 256);
        let bg = BackgroundSpec::synthetic(
            &g,
            crate::background::SyntheticParams { amplitude: 2.0, center: 1.0, width: 1.5, tau: 1.0 },
        )
        .unwrap();
        let u = RadialField::from_fn(&g, |r| 1.0 + 0.4 * (-r * r / 3.0).exp() * (1.0 + 0.2 * r.sin())).unwrap();
        let a = rhs(&u, &bg).unwrap();
        let b = rhs_curvature_form(&u, &bg).unwrap();
        let scale = a.max_abs().max(1.0);
        assert!(a.zip_map(&b, |x, y| (x - y).abs()).unwrap().max_abs() <= 1e-12 * scale);
    }

    #[test]
    fn mass_examples() {
        let g = grid(0.0, 1000.0, 512);
        assert_eq!(adm_mass(&RadialField::zeros(&g)).unwrap().mass, 0.0);
        let m = adm_mass(&RadialField::from_fn(&g, |r| 0.5 / r.max(1e-300)).unwrap()).unwrap();
        assert!((m.mass - 1.0).abs() < 1e-6);
        assert!(m.disagreement < 10.0 * g.h().powi(2), "{m:?}");
        let g4 = build_grid(4, 0.0, 1000.0, 512, GridPolicy::LogStretched).unwrap();
        let m4 = adm_mass(&RadialField::from_fn(&g4, |r| 0.3 / (r * r).max(1e-300)).unwrap()).unwrap();
        assert!((m4.mass - 0.6).abs() < 1e-9);
    }

    #[test]
    fn mass_needs_window_nodes() {
        let g = RadialGrid::from_nodes(3, vec![0.0, 0.1, 0.2, 0.3, 2.0]).unwrap();
        assert!(matches!(adm_mass(&RadialField::zeros(&g)), Err(Error::MassUndefined(_))));
    }

    #[test]
    fn identity_holds_at_convergence() {
        let g = grid(0.0, 60.0, 512);
        let bg = BackgroundSpec::flat(&g).unwrap();
        let init = InitialData::gaussian_bump(&g, 0.2, 1.0).unwrap();
        let cfg = FlowConfig::default();
        let s0 = FlowState::initial(&init, 0.01);
        let s1 = step(&s0, &bg, &cfg).unwrap();
        let dt = s1.t - s0.t;
        let r = curvature_of_excess(&s1.excess, &bg).unwrap();
        for i in 0..g.len() {
            let u = 1.0 + s1.excess.values()[i];
            let lhs = (s1.excess.values()[i] - s0.excess.values()[i]) / dt + 0.25 * r.values()[i] * u;
            assert!(lhs.abs() <= cfg.newton_tol * 10.0, "node {i}: {lhs:e}");
        }
    }

    #[test]
    fn flat_bump_run_keeps_max_u() {
        let g = grid(0.0, 60.0, 512);
        let bg = BackgroundSpec::flat(&g).unwrap();
        let init = InitialData::gaussian_bump(&g, 0.2, 1.0).unwrap();
        let cfg = FlowConfig { t_end: 20.0, dt0: 0.01, dt_max: 1.0, ..FlowConfig::default() };
        let run = run_flow(&bg, &init, &cfg).unwrap();
        assert!(run.halted.is_none());
        let u0 = run.records[0].max_u;
        assert!(run.records.iter().all(|r| r.max_u <= u0 * (1.0 + 1e-2)));
        assert!(run.records.windows(2).all(|w| w[1].max_u <= w[0].max_u + 1e-14));
        assert_eq!(run.final_state.t, 20.0);
    }

    #[test]
    fn monitor_csv_round_trip() {
        let g = grid(0.0, 60.0, 128);
        let bg = BackgroundSpec::flat(&g).unwrap();
        let init = InitialData::gaussian_bump(&g, 0.2, 1.0).unwrap();
        let cfg = FlowConfig { t_end: 0.5, dt0: 0.1, max_steps: Some(4), ..FlowConfig::default() };
        let run = run_flow(&bg, &init, &cfg).unwrap();
        assert_eq!(run.records.len(), 5);
        let text = monitor_csv(&run.records, &run.p_list, &run.tau_primes);
        assert!(text.starts_with("# ylab-monitor/1"));
        let parsed = parse_monitor_csv(&text).unwrap();
        assert_eq!(parsed.records, run.records);
        assert_eq!(parsed.p_list, run.p_list);
        assert!(matches!(parse_monitor_csv("t,step\n1,2\n"), Err(Error::Schema(_))));
    }

    #[test]
    fn config_validation() {
        assert!(FlowConfig::default().validate().is_ok());
        for bad in [
            FlowConfig { dt0: -1.0, ..FlowConfig::default() },
            FlowConfig { t_end: 0.0, ..FlowConfig::default() },
            FlowConfig { newton_tol: 0.0, ..FlowConfig::default() },
            FlowConfig { p_list: Some(vec![0.5]), ..FlowConfig::default() },
        ] {
            assert!(matches!(bad.validate(), Err(Error::Config(_))));
        }
        assert_eq!("linearly-implicit".parse::<Scheme>().unwrap(), Scheme::LinearlyImplicit);
    }
}
