//! Auditors that turn monitor series into verdicts and fitted exponents.
//!
//! Every auditor is a pure function of its inputs. The constants in the
//! decay and monotonicity statements are not constructive, so the audits
//! check shapes (signs of exponents, monotonicity, non-degrading bounds)
//! and report the fitted numbers alongside.

use serde::{Deserialize, Serialize};

use crate::domain::{self, RadialField, SphereConstants};
use crate::error::{Error, Result};
use crate::flow::{valid_time_horizon, FlowState, MonitorRecord};

/// Ordinary least squares `y ≈ slope·x + intercept`; returns `(slope, intercept, r²)`.
///
/// A series with no spread in `y` that is fitted exactly reports `r² = 1`.
pub fn least_squares_line(xs: &[f64], ys: &[f64]) -> Result<(f64, f64, f64)> {
    if xs.len() != ys.len() {
        return Err(Error::Shape(format!("{} abscissae for {} ordinates", xs.len(), ys.len())));
    }
    if xs.len() < 2 {
        return Err(Error::UndefinedFit(format!("{} points", xs.len())));
    }
    let k = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / k;
    let my = ys.iter().sum::<f64>() / k;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::UndefinedFit("abscissae coincide".into()));
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_tot: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let ss_res: f64 = xs.iter().zip(ys).map(|(x, y)| (y - slope * x - intercept).powi(2)).sum();
    let r2 = if ss_tot > 0.0 { (1.0 - ss_res / ss_tot).clamp(0.0, 1.0) } else { 1.0 };
    Ok((slope, intercept, r2))
}

/// Minimum number of samples inside a fit window.
pub const MIN_FIT_POINTS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    pub exponent: f64,
    pub constant: f64,
    pub r_squared: f64,
    pub window: (f64, f64),
    pub points: usize,
}

/// Power-law fit `y ≈ constant · t^exponent` over samples with `t` in `window`.
pub fn fit_decay_exponent(series: &[(f64, f64)], window: (f64, f64)) -> Result<DecayFit> {
    let inside: Vec<(f64, f64)> =
        series.iter().copied().filter(|&(t, _)| t >= window.0 && t <= window.1).collect();
    if let Some(&(t, y)) = inside.iter().find(|&&(t, y)| !(t > 0.0 && y > 0.0)) {
        return Err(Error::FitDomain(format!("sample ({t:e}, {y:e}) is not positive")));
    }
    if inside.len() < MIN_FIT_POINTS {
        return Err(Error::UndefinedFit(format!(
            "{} points in [{:e}, {:e}], need {MIN_FIT_POINTS}",
            inside.len(),
            window.0,
            window.1
        )));
    }
    let xs: Vec<f64> = inside.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = inside.iter().map(|p| p.1.ln()).collect();
    let (slope, intercept, r2) = least_squares_line(&xs, &ys)?;
    Ok(DecayFit {
        exponent: slope,
        constant: intercept.exp(),
        r_squared: r2,
        window: (inside[0].0, inside[inside.len() - 1].0),
        points: inside.len(),
    })
}

/// Second half of the audited time range: `[T/2, T]` with `T` the lesser of
/// the valid-time horizon and the last sample time.
pub fn default_fit_window(horizon: f64, t_last: f64) -> (f64, f64) {
    let top = horizon.min(t_last);
    (0.5 * top, top)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Direction {
    Nonincreasing,
    Nondecreasing,
}

impl Direction {
    pub fn opposite(self) -> Self {
        match self {
            Self::Nonincreasing => Self::Nondecreasing,
            Self::Nondecreasing => Self::Nonincreasing,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonotonicityAudit {
    pub quantity: String,
    pub direction: Direction,
    pub violations: usize,
    pub worst_violation: f64,
    pub slack: f64,
    /// Index of the left member of the first violating pair.
    pub first_violation: Option<usize>,
}

impl MonotonicityAudit {
    pub fn passed(&self) -> bool {
        self.violations == 0
    }
}

/// Counts adjacent pairs moving against `direction` by more than `slack`.
pub fn audit_monotone(quantity: &str, series: &[f64], direction: Direction, slack: f64) -> MonotonicityAudit {
    let mut violations = 0;
    let mut worst = 0.0f64;
    let mut first = None;
    for (k, w) in series.windows(2).enumerate() {
        let rise = match direction {
            Direction::Nonincreasing => w[1] - w[0],
            Direction::Nondecreasing => w[0] - w[1],
        };
        // NaN compares false, so it is counted explicitly
        if rise > slack || rise.is_nan() {
            violations += 1;
            let excess = rise - slack;
            worst = if excess.is_nan() { f64::INFINITY } else { worst.max(excess) };
            first.get_or_insert(k);
        }
    }
    MonotonicityAudit { quantity: quantity.into(), direction, violations, worst_violation: worst, slack, first_violation: first }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub tau_prime: f64,
    pub series: Vec<(f64, f64)>,
    /// Set when every sample is exactly zero; the fit is skipped.
    pub zero_series: bool,
    pub fit: Option<DecayFit>,
    pub monotone: MonotonicityAudit,
}

/// Weighted distance `sup max(r,1)^{τ'} |u(t) - u_∞|` along a trajectory, with
/// a decay fit on `window` (default: second half of the valid-time range).
pub fn convergence_to_limit(
    trajectory: &[FlowState],
    u_inf: &RadialField,
    tau_prime: f64,
    window: Option<(f64, f64)>,
) -> Result<ConvergenceReport> {
    let grid = u_inf.grid();
    let n = grid.dim() as f64;
    if !(tau_prime >= 0.0 && tau_prime < n - 2.0) {
        return Err(Error::Parameter(format!("tau' = {tau_prime} outside [0, n-2)")));
    }
    let v_inf: Vec<f64> = u_inf.values().iter().map(|u| u - 1.0).collect();
    let mut series = Vec::with_capacity(trajectory.len());
    for state in trajectory {
        state.excess.check_same_grid(u_inf)?;
        let diff = RadialField::new(
            grid.clone(),
            state.excess.values().iter().zip(&v_inf).map(|(a, b)| a - b).collect(),
        )?;
        series.push((state.t, domain::weighted_sup_norm(&diff, -tau_prime)));
    }
    let values: Vec<f64> = series.iter().map(|p| p.1).collect();
    let monotone = audit_monotone("weighted_distance", &values, Direction::Nonincreasing, 0.0);
    let zero_series = values.iter().all(|&w| w == 0.0);
    let fit = if zero_series || series.is_empty() {
        None
    } else {
        let t_last = series[series.len() - 1].0;
        let window = window.unwrap_or_else(|| default_fit_window(valid_time_horizon(grid), t_last));
        Some(fit_decay_exponent(&series, window)?)
    };
    Ok(ConvergenceReport { tau_prime, series, zero_series, fit, monotone })
}

/// `1 / (2(n-1) ω_{n-1})`, the factor relating total curvature to mass.
pub fn mass_drop_normalization(n: usize) -> f64 {
    1.0 / (2.0 * (n as f64 - 1.0) * SphereConstants::new(n).omega)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MassDropReport {
    pub m0: f64,
    pub m_inf: f64,
    /// `max |m(t) - m(0)| / max(|m(0)|, 1)`, so nearly massless data are judged absolutely; reported for `n <= 5`.
    pub drift: Option<f64>,
    /// `(t, m(t) - κ ∫R dV_t)` with `κ` from [`mass_drop_normalization`].
    pub combination: Vec<(f64, f64)>,
    pub terminal_combination: f64,
    pub combination_gap: f64,
    pub terminal_scaled_integral: f64,
    pub expected_drop: f64,
    pub drop_gap: f64,
}

pub fn mass_drop_report(series: &[MonitorRecord], m_inf: f64, n: usize) -> Result<MassDropReport> {
    let (first, last) = match (series.first(), series.last()) {
        (Some(f), Some(l)) => (f, l),
        _ => return Err(Error::Schema("empty monitor series".into())),
    };
    let kappa = mass_drop_normalization(n);
    let m0 = first.mass;
    let drift = (n <= 5).then(|| {
        let worst = series.iter().map(|r| (r.mass - m0).abs()).fold(0.0, |a: f64, b: f64| {
            if a.is_nan() || b.is_nan() {
                f64::NAN
            } else {
                a.max(b)
            }
        });
        worst / m0.abs().max(1.0)
    });
    let combination: Vec<(f64, f64)> = series.iter().map(|r| (r.t, r.mass - kappa * r.l1_r)).collect();
    let terminal_combination = last.mass - kappa * last.l1_r;
    let terminal_scaled_integral = kappa * last.l1_r;
    let expected_drop = m0 - m_inf;
    Ok(MassDropReport {
        m0,
        m_inf,
        drift,
        combination,
        terminal_combination,
        combination_gap: (terminal_combination - m_inf).abs(),
        terminal_scaled_integral,
        expected_drop,
        drop_gap: (terminal_scaled_integral - expected_drop).abs(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpacetimeAudit {
    pub tau_prime: f64,
    pub delta0: f64,
    pub applicable: bool,
    pub skipped_reason: Option<String>,
    pub pass: bool,
    /// `max |R| max(r,1)^{τ'} (1+t)^{1+δ_0}` over checkpoints with `t >= 1`.
    pub c_star: f64,
    pub c_first: f64,
    pub argmax_t: f64,
    pub noise_floor: f64,
}

/// Checks that the space-time weighted curvature bound is not degrading.
///
/// `samples` holds `(t, R(t))` per checkpoint. The verdict passes when the
/// maximum is attained at the earliest checkpoint with `t >= 1`, or when
/// every value sits below the discretization floor `10 h² (1+t_first)^{1+δ_0}`.
pub fn spacetime_decay_audit(
    samples: &[(f64, RadialField)],
    tau_prime: f64,
    delta0: f64,
    positive_yamabe: bool,
) -> SpacetimeAudit {
    let mut out = SpacetimeAudit {
        tau_prime,
        delta0,
        applicable: false,
        skipped_reason: None,
        pass: false,
        c_star: f64::NAN,
        c_first: f64::NAN,
        argmax_t: f64::NAN,
        noise_floor: f64::NAN,
    };
    if !positive_yamabe {
        out.skipped_reason = Some("Yamabe constant is not positive".into());
        return out;
    }
    let late: Vec<&(f64, RadialField)> = samples.iter().filter(|(t, _)| *t >= 1.0).collect();
    if late.len() < 5 {
        out.skipped_reason = Some(format!("{} checkpoints with t >= 1, need 5", late.len()));
        return out;
    }
    let values: Vec<(f64, f64)> = late
        .iter()
        .map(|(t, r)| (*t, domain::weighted_sup_norm(r, -tau_prime) * (1.0 + t).powf(1.0 + delta0)))
        .collect();
    let (argmax_t, c_star) = values.iter().copied().fold((f64::NAN, f64::NEG_INFINITY), |best, v| {
        if v.1 > best.1 {
            v
        } else {
            best
        }
    });
    let t_first = values[0].0;
    let h = late[0].1.grid().h();
    out.applicable = true;
    out.c_star = c_star;
    out.c_first = values[0].1;
    out.argmax_t = argmax_t;
    out.noise_floor = 10.0 * h * h * (1.0 + t_first).powf(1.0 + delta0);
    out.pass = c_star.is_finite() && (c_star <= out.c_first || c_star <= out.noise_floor);
    out
}

/// Sharp Euclidean Sobolev constant `D` in `‖v‖²_{2n/(n-2)} <= D ∫|∇v|²`.
pub fn sharp_sobolev_constant(n: usize) -> f64 {
    let nf = n as f64;
    let sphere_n = SphereConstants::new(n + 1).omega;
    4.0 / (nf * (nf - 2.0) * sphere_n.powf(2.0 / nf))
}

/// `C(n,p) = 4(n-1)(p-1)/p`, the coercive constant in the `L^p` curvature identity.
pub fn lp_coercivity(n: usize, p: f64) -> f64 {
    4.0 * (n as f64 - 1.0) * (p - 1.0) / p
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LpInequalityAudit {
    pub p: f64,
    pub threshold: f64,
    pub eligible_pairs: usize,
    pub violations: Vec<usize>,
    pub worst_violation: f64,
    pub slack: f64,
    pub pass: bool,
}

/// Conditional monotonicity of `∫|R|^p dV_t`.
///
/// A pair of consecutive records is audited when
/// `|p - n/2| (∫|R|^{n/2} dV)^{2/n} < C(n,p)/D` holds at its left member.
pub fn lp_inequality_audit(
    series: &[MonitorRecord],
    p: f64,
    n: usize,
    sobolev_d: f64,
    slack: f64,
) -> Result<LpInequalityAudit> {
    let half = n as f64 / 2.0;
    let lookup = |r: &MonitorRecord, q: f64| {
        r.lp(q).ok_or_else(|| Error::Schema(format!("monitor series has no lp_R column for p = {q}")))
    };
    let threshold = lp_coercivity(n, p) / sobolev_d;
    let mut eligible = 0;
    let mut violations = Vec::new();
    let mut worst = 0.0f64;
    for (k, w) in series.windows(2).enumerate() {
        let critical = lookup(&w[0], half)?;
        let gauge = (p - half).abs() * critical.powf(2.0 / n as f64);
        if !(gauge < threshold) {
            continue;
        }
        eligible += 1;
        let rise = lookup(&w[1], p)? - lookup(&w[0], p)?;
        if rise > slack || rise.is_nan() {
            violations.push(k);
            worst = worst.max(if rise.is_nan() { f64::INFINITY } else { rise - slack });
        }
    }
    if series.len() == 1 {
        lookup(&series[0], p)?;
        lookup(&series[0], half)?;
    }
    Ok(LpInequalityAudit {
        p,
        threshold,
        eligible_pairs: eligible,
        pass: violations.is_empty(),
        violations,
        worst_violation: worst,
        slack,
    })
}

/// A named pass/fail outcome with structured details, emitted as JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub name: String,
    pub pass: bool,
    pub details: serde_json::Value,
}

impl Verdict {
    pub fn new(name: &str, pass: bool, details: impl Serialize) -> Self {
        let details = serde_json::to_value(details).unwrap_or(serde_json::Value::Null);
        Self { name: name.into(), pass, details }
    }
}

/// Fixed-width table, one verdict per line.
pub fn verdict_table(verdicts: &[Verdict]) -> String {
    let width = verdicts.iter().map(|v| v.name.len()).max().unwrap_or(0).max(7);
    let mut out = format!("{:<width$}  result\n", "verdict");
    for v in verdicts {
        out.push_str(&format!("{:<width$}  {}\n", v.name, if v.pass { "PASS" } else { "FAIL" }));
    }
    out
}
