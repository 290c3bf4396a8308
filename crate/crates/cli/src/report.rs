//! Audits over stored runs, aggregated into JSON, a text table and optional charts.

use std::cell::OnceCell;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::Serialize;
use serde_json::json;
use ylab_core::background::{BackgroundSpec, InitialFamily, InnerBoundary};
use ylab_core::diagnostics::{
    audit_monotone, convergence_to_limit, default_fit_window, fit_decay_exponent, lp_inequality_audit,
    mass_drop_normalization, mass_drop_report, sharp_sobolev_constant, spacetime_decay_audit, Direction, Verdict,
};
use ylab_core::domain::RadialField;
use ylab_core::elliptic::{curvature_of_excess, solve_scalar_flat, EllipticConfig};
use ylab_core::flow::{adm_mass, parse_monitor_csv, valid_time_horizon, FlowState, MonitorRecord, MonitorSeries};

use crate::error::{CliError, CliResult};
use crate::run::{write_file, write_json, StoredRun};
use crate::svg::{line_chart, Axes, Series};

/// Monotonicity audits skip this many leading records (start-up transient).
pub const TRANSIENT_RECORDS: usize = 5;
pub const LP_SLACK: f64 = 1e-8;
/// Width of the exponent window around `n/2` covered by the monotone audits.
pub const LP_WINDOW: f64 = 0.1;
pub const MASS_DRIFT_TOL: f64 = 1e-2;
pub const MASS_DROP_REL_TOL: f64 = 0.05;
pub const SUP_DECAY_MAX_EXPONENT: f64 = -1.0;
pub const SUP_DECAY_MIN_R2: f64 = 0.9;
pub const BLOW_UP_LEVEL: f64 = 1e3;
pub const SPACETIME_DELTA0: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Audit {
    FixedPoint,
    Completed,
    MassDrift,
    MassDrop,
    MonotoneLp,
    LpInequality,
    MinR,
    MaxU,
    SupDecay,
    Convergence,
    Spacetime,
    BlowUp,
}

impl Audit {
    pub const ALL: [Audit; 12] = [
        Audit::FixedPoint,
        Audit::Completed,
        Audit::MassDrift,
        Audit::MassDrop,
        Audit::MonotoneLp,
        Audit::LpInequality,
        Audit::MinR,
        Audit::MaxU,
        Audit::SupDecay,
        Audit::Convergence,
        Audit::Spacetime,
        Audit::BlowUp,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Audit::FixedPoint => "fixed-point",
            Audit::Completed => "completed",
            Audit::MassDrift => "mass-drift",
            Audit::MassDrop => "mass-drop",
            Audit::MonotoneLp => "monotone-lp",
            Audit::LpInequality => "lp-inequality",
            Audit::MinR => "min-r",
            Audit::MaxU => "max-u",
            Audit::SupDecay => "sup-decay",
            Audit::Convergence => "convergence",
            Audit::Spacetime => "spacetime",
            Audit::BlowUp => "blow-up",
        }
    }
}

impl FromStr for Audit {
    type Err = CliError;

    fn from_str(s: &str) -> CliResult<Self> {
        Audit::ALL.into_iter().find(|a| a.name() == s).ok_or_else(|| {
            let names: Vec<&str> = Audit::ALL.iter().map(|a| a.name()).collect();
            CliError::Config(format!("unknown audit `{s}` (known: {})", names.join(", ")))
        })
    }
}

pub fn parse_audit_list(list: &str) -> CliResult<Vec<Audit>> {
    list.split(',').map(str::trim).filter(|s| !s.is_empty()).map(Audit::from_str).collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub run_id: String,
    pub dir: PathBuf,
    pub background: String,
    pub yamabe_positive: bool,
    pub m_inf: Option<f64>,
    pub halted: bool,
    pub required: Vec<Audit>,
    pub verdicts: Vec<Verdict>,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct ReportOutcome {
    pub runs: Vec<RunReport>,
    pub pass: bool,
}

impl ReportOutcome {
    /// 0 when every required audit passed, 4 otherwise.
    pub fn exit_code(&self) -> i32 {
        if self.pass {
            0
        } else {
            4
        }
    }

    pub fn table(&self) -> String {
        let mut out = String::new();
        for run in &self.runs {
            let state = if run.halted { "halted" } else { "completed" };
            let sign = if run.yamabe_positive { "Y>0" } else { "Y<=0" };
            let _ = writeln!(out, "run {} [{}; {sign}; {state}]", run.run_id, run.background);
            let width = run.verdicts.iter().map(|v| v.name.len()).max().unwrap_or(5).max(5);
            for v in &run.verdicts {
                let req = if run.required.iter().any(|a| a.name() == v.name) { "required" } else { "" };
                let _ = writeln!(out, "  {:<width$}  {}  {req}", v.name, if v.pass { "PASS" } else { "FAIL" });
            }
        }
        let _ = writeln!(out, "overall: {}", if self.pass { "PASS" } else { "FAIL" });
        out
    }
}

/// Largest value, or NaN if any value is NaN.
fn nan_max(values: impl Iterator<Item = f64>) -> f64 {
    values.fold(0.0, |a: f64, b: f64| if a.is_nan() || b.is_nan() { f64::NAN } else { a.max(b) })
}

/// Inputs shared by the audits of one run.
struct Context<'a> {
    run: &'a StoredRun,
    bg: BackgroundSpec,
    n: usize,
    h2: f64,
    horizon: f64,
    series: MonitorSeries,
    u_inf: Option<RadialField>,
    m_inf: Option<f64>,
    checkpoints: OnceCell<Result<Vec<FlowState>, String>>,
}

impl Context<'_> {
    fn records(&self) -> &[MonitorRecord] {
        &self.series.records
    }

    fn late_records(&self) -> &[MonitorRecord] {
        let r = self.records();
        &r[TRANSIENT_RECORDS.min(r.len().saturating_sub(2))..]
    }

    fn column(&self, f: impl Fn(&MonitorRecord) -> f64) -> Vec<f64> {
        self.records().iter().map(f).collect()
    }

    fn checkpoints(&self) -> Result<&[FlowState], String> {
        self.checkpoints
            .get_or_init(|| self.run.checkpoints(self.bg.grid()).map_err(|e| e.to_string()))
            .as_deref()
            .map_err(Clone::clone)
    }

    fn stationary(&self) -> bool {
        self.bg.is_flat()
            && match self.run.manifest.initial_data {
                InitialFamily::Flat => true,
                InitialFamily::Schwarzschild { .. } => self.bg.inner == InnerBoundary::MinimalSphere,
                _ => false,
            }
    }

    fn exponents_near_half(&self, include_center: bool) -> Vec<f64> {
        let half = self.n as f64 / 2.0;
        self.series
            .p_list
            .iter()
            .copied()
            .filter(|p| (p - half).abs() <= LP_WINDOW + 1e-9 && (include_center || p != &half))
            .collect()
    }

    fn evaluate(&self, audit: Audit) -> Verdict {
        let name = audit.name();
        match self.try_evaluate(audit) {
            Ok(v) => v,
            Err(msg) => Verdict::new(name, false, json!({ "error": msg })),
        }
    }

    fn try_evaluate(&self, audit: Audit) -> Result<Verdict, String> {
        let name = audit.name();
        let rec = self.records();
        let first = rec.first().ok_or("empty monitor series")?;
        let need_positive = || {
            if self.u_inf.is_some() {
                Ok(())
            } else {
                Err("requires a positive Yamabe class".to_string())
            }
        };
        Ok(match audit {
            Audit::FixedPoint => {
                let expected = match self.run.manifest.initial_data {
                    InitialFamily::Flat => 0.0,
                    InitialFamily::Schwarzschild { m } => m,
                    _ => first.mass,
                };
                let sup_r = nan_max(rec.iter().map(|r| r.sup_r));
                let mass_dev = nan_max(rec.iter().map(|r| (r.mass - expected).abs()));
                let u_dev = nan_max(rec.iter().map(|r| (r.max_u - first.max_u).abs().max((r.min_u - first.min_u).abs())));
                let mass_tol = MASS_DRIFT_TOL * expected.abs().max(1.0);
                let pass = sup_r <= 10.0 * self.h2 && mass_dev <= mass_tol && u_dev <= 10.0 * self.h2;
                Verdict::new(
                    name,
                    pass,
                    json!({"sup_R": sup_r, "sup_R_bound": 10.0 * self.h2, "mass_deviation": mass_dev,
                           "expected_mass": expected, "mass_bound": mass_tol, "u_deviation": u_dev}),
                )
            }
            Audit::Completed => {
                let s = &self.run.summary;
                Verdict::new(name, !s.halted, json!({"halt_reason": s.halt_reason, "final_t": s.final_t}))
            }
            Audit::MassDrift => {
                let report = mass_drop_report(rec, self.m_inf.unwrap_or(f64::NAN), self.n).map_err(|e| e.to_string())?;
                let drift = report.drift.ok_or("mass constancy is only asserted for n <= 5")?;
                Verdict::new(name, drift <= MASS_DRIFT_TOL, json!({"drift": drift, "bound": MASS_DRIFT_TOL, "m0": report.m0}))
            }
            Audit::MassDrop => {
                need_positive()?;
                let m_inf = self.m_inf.ok_or("mass of the scalar-flat limit is undefined")?;
                let report = mass_drop_report(rec, m_inf, self.n).map_err(|e| e.to_string())?;
                let scale = report.m0.abs().max(m_inf.abs());
                let tol = MASS_DROP_REL_TOL * scale + 10.0 * self.h2;
                let pass = report.drop_gap <= tol && report.combination_gap <= tol;
                Verdict::new(
                    name,
                    pass,
                    json!({"m0": report.m0, "m_inf": m_inf, "terminal_scaled_integral": report.terminal_scaled_integral,
                           "expected_drop": report.expected_drop, "drop_gap": report.drop_gap,
                           "terminal_combination": report.terminal_combination,
                           "combination_gap": report.combination_gap, "tolerance": tol,
                           "normalization": mass_drop_normalization(self.n)}),
                )
            }
            Audit::MonotoneLp => {
                let ps = self.exponents_near_half(true);
                if ps.is_empty() {
                    return Err(format!("no monitored exponent within {LP_WINDOW} of n/2"));
                }
                let late = self.late_records();
                let audits: Vec<_> = ps
                    .iter()
                    .map(|&p| {
                        let values: Vec<f64> = late.iter().map(|r| r.lp(p).unwrap_or(f64::NAN)).collect();
                        (p, audit_monotone(&format!("lp_R[{p}]"), &values, Direction::Nonincreasing, LP_SLACK))
                    })
                    .collect();
                let pass = audits.iter().all(|(_, a)| a.passed());
                let details: Vec<_> = audits.iter().map(|(p, a)| json!({"p": p, "audit": a})).collect();
                Verdict::new(name, pass, json!({"skipped_records": rec.len() - late.len(), "audits": details}))
            }
            Audit::LpInequality => {
                need_positive()?;
                let ps = self.exponents_near_half(false);
                if ps.is_empty() {
                    return Err(format!("no monitored exponent p != n/2 within {LP_WINDOW} of n/2"));
                }
                let d = sharp_sobolev_constant(self.n);
                let audits = ps
                    .iter()
                    .map(|&p| lp_inequality_audit(self.late_records(), p, self.n, d, LP_SLACK))
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(|e| e.to_string())?;
                let pass = audits.iter().all(|a| a.pass);
                Verdict::new(name, pass, json!({"sobolev_d": d, "audits": audits}))
            }
            Audit::MinR => {
                let slack = 10.0 * self.h2;
                let a = audit_monotone("min_R", &self.column(|r| r.min_r), Direction::Nondecreasing, slack);
                Verdict::new(name, a.passed(), a)
            }
            Audit::MaxU => {
                if !self.bg.is_flat() {
                    return Err("max u is only monotone on a flat background".into());
                }
                let slack = 10.0 * self.h2;
                let a = audit_monotone("max_u", &self.column(|r| r.max_u), Direction::Nonincreasing, slack);
                Verdict::new(name, a.passed(), a)
            }
            Audit::SupDecay => {
                let points: Vec<(f64, f64)> = rec.iter().map(|r| (r.t, r.sup_r)).collect();
                let t_last = rec.last().map_or(0.0, |r| r.t);
                let fit = fit_decay_exponent(&points, default_fit_window(self.horizon, t_last))
                    .map_err(|e| e.to_string())?;
                let pass = fit.exponent <= SUP_DECAY_MAX_EXPONENT && fit.r_squared >= SUP_DECAY_MIN_R2;
                Verdict::new(
                    name,
                    pass,
                    json!({"fit": fit, "max_exponent": SUP_DECAY_MAX_EXPONENT, "min_r_squared": SUP_DECAY_MIN_R2}),
                )
            }
            Audit::Convergence => {
                need_positive()?;
                let u_inf = self.u_inf.as_ref().ok_or("no scalar-flat limit")?;
                let report = convergence_to_limit(self.checkpoints()?, u_inf, 0.0, None).map_err(|e| e.to_string())?;
                let pass = report.zero_series || report.fit.as_ref().is_some_and(|f| f.exponent < 0.0);
                Verdict::new(
                    name,
                    pass,
                    json!({"tau_prime": 0.0, "zero_series": report.zero_series, "fit": report.fit,
                           "monotone": report.monotone, "points": report.series.len()}),
                )
            }
            Audit::Spacetime => {
                let cap = self.bg.tau.min(self.n as f64 - 2.0);
                let tau_prime = self.series.tau_primes.iter().copied().find(|&t| t < cap).unwrap_or(0.5 * cap);
                let samples = self
                    .checkpoints()?
                    .iter()
                    .map(|s| curvature_of_excess(&s.excess, &self.bg).map(|r| (s.t, r)))
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(|e| e.to_string())?;
                let a = spacetime_decay_audit(&samples, tau_prime, SPACETIME_DELTA0, self.u_inf.is_some());
                Verdict::new(name, a.applicable && a.pass, a)
            }
            Audit::BlowUp => {
                let max_u = rec.iter().map(|r| r.max_u).fold(f64::NEG_INFINITY, f64::max);
                let halted = self.run.summary.halted;
                Verdict::new(
                    name,
                    halted || max_u >= BLOW_UP_LEVEL,
                    json!({"halted": halted, "halt_reason": self.run.summary.halt_reason, "max_u": max_u,
                           "level": BLOW_UP_LEVEL}),
                )
            }
        })
    }

    /// Audits evaluated by default; the required subset is marked separately.
    fn applicable(&self) -> Vec<Audit> {
        let mut out = vec![Audit::Completed];
        let positive = self.u_inf.is_some();
        if self.stationary() {
            out.push(Audit::FixedPoint);
        }
        if self.n <= 5 {
            out.push(Audit::MassDrift);
        }
        if positive {
            out.extend([Audit::MassDrop, Audit::MonotoneLp, Audit::LpInequality, Audit::MinR]);
            if self.bg.is_flat() {
                out.push(Audit::MaxU);
            }
            if !self.stationary() {
                out.extend([Audit::SupDecay, Audit::Convergence, Audit::Spacetime]);
            }
        } else {
            out.push(Audit::BlowUp);
        }
        out
    }

    fn default_required(&self) -> Vec<Audit> {
        if self.u_inf.is_none() {
            return vec![Audit::BlowUp];
        }
        let mut out = vec![Audit::Completed, Audit::MonotoneLp, Audit::MinR];
        if self.n <= 5 {
            out.push(Audit::MassDrift);
        }
        if self.bg.is_flat() {
            out.push(Audit::MaxU);
        }
        if self.stationary() {
            out.push(Audit::FixedPoint);
        }
        out.sort();
        out
    }
}

/// Audits one stored run. `require = None` selects the default required set.
pub fn evaluate_run(run: &StoredRun, require: Option<&[Audit]>) -> CliResult<RunReport> {
    let prepared = run.manifest.prepare()?;
    let bg = prepared.background;
    let grid = bg.grid().clone();
    let (u_inf, m_inf) = match solve_scalar_flat(&bg, &EllipticConfig::default()) {
        Ok((u, _)) => {
            let m = u.map(|x| x - 1.0).ok().and_then(|v| adm_mass(&v).ok()).map(|m| m.mass);
            (Some(u), m)
        }
        Err(_) => (None, None),
    };
    let base = RunReport {
        run_id: run.manifest.run_id.clone(),
        dir: run.dir.clone(),
        background: bg.name.clone(),
        yamabe_positive: u_inf.is_some(),
        m_inf,
        halted: run.summary.halted,
        required: Vec::new(),
        verdicts: Vec::new(),
        pass: false,
    };
    let series = match run.monitor_text().and_then(|t| parse_monitor_csv(&t).map_err(CliError::from)) {
        Ok(s) => s,
        Err(err) => {
            // the series is unreadable, so every required audit fails on it
            let required = require.map(<[Audit]>::to_vec).unwrap_or_else(|| vec![Audit::Completed]);
            let verdicts = required
                .iter()
                .map(|a| Verdict::new(a.name(), false, json!({"error": err.to_string()})))
                .collect();
            return Ok(RunReport { required, verdicts, ..base });
        }
    };
    let ctx = Context {
        run,
        n: grid.dim(),
        h2: grid.h().powi(2),
        horizon: valid_time_horizon(&grid),
        bg,
        series,
        u_inf,
        m_inf,
        checkpoints: OnceCell::new(),
    };
    let required = require.map(<[Audit]>::to_vec).unwrap_or_else(|| ctx.default_required());
    let mut audits = ctx.applicable();
    audits.extend(required.iter().copied());
    audits.sort();
    audits.dedup();
    let verdicts: Vec<Verdict> = audits.iter().map(|&a| ctx.evaluate(a)).collect();
    let pass = required.iter().all(|a| verdicts.iter().any(|v| v.name == a.name() && v.pass));
    Ok(RunReport { required, verdicts, pass, ..base })
}

fn write_charts(run: &StoredRun) -> CliResult<()> {
    let text = run.monitor_text()?;
    let series = parse_monitor_csv(&text)?;
    let rec = &series.records;
    let n = run.manifest.grid.dim;
    let dir = run.dir.join("plots");
    let log = Axes { log_x: true, log_y: true };
    let sup = Series { label: "sup |R|".into(), points: rec.iter().map(|r| (r.t, r.sup_r)).collect() };
    write_file(&dir.join("sup_R.svg"), line_chart("sup |R| (log-log)", "t", &[sup], log))?;
    let lp: Vec<Series> = series
        .p_list
        .iter()
        .map(|&p| Series {
            label: format!("p = {p}"),
            points: rec.iter().map(|r| (r.t, r.lp(p).unwrap_or(f64::NAN))).collect(),
        })
        .collect();
    write_file(&dir.join("lp_R.svg"), line_chart("integral of |R|^p dV (log-log)", "t", &lp, log))?;
    let kappa = mass_drop_normalization(n);
    let mass = [
        Series { label: "m(t)".into(), points: rec.iter().map(|r| (r.t, r.mass)).collect() },
        Series { label: "kappa * int R dV".into(), points: rec.iter().map(|r| (r.t, kappa * r.l1_r)).collect() },
        Series { label: "c(t)".into(), points: rec.iter().map(|r| (r.t, r.mass - kappa * r.l1_r)).collect() },
    ];
    write_file(&dir.join("mass.svg"), line_chart("mass balance", "t", &mass, Axes { log_x: false, log_y: false }))?;
    let u = [
        Series { label: "max u".into(), points: rec.iter().map(|r| (r.t, r.max_u)).collect() },
        Series { label: "min u".into(), points: rec.iter().map(|r| (r.t, r.min_u)).collect() },
    ];
    write_file(&dir.join("u_range.svg"), line_chart("range of u", "t", &u, Axes { log_x: false, log_y: false }))
}

/// Audits every run, writes `report.json` into each run directory and the
/// aggregate to `aggregate`, and optionally draws charts under `<run>/plots`.
pub fn report(dirs: &[PathBuf], require: Option<&[Audit]>, svg: bool, aggregate: &Path) -> CliResult<ReportOutcome> {
    if dirs.is_empty() {
        return Err(CliError::Config("report needs at least one run directory".into()));
    }
    let mut runs = Vec::with_capacity(dirs.len());
    for dir in dirs {
        let stored = StoredRun::open(dir)?;
        let report = evaluate_run(&stored, require)?;
        write_json(&dir.join("report.json"), &report)?;
        if svg {
            if let Err(err) = write_charts(&stored) {
                eprintln!("warning: no charts for {}: {err}", dir.display());
            }
        }
        runs.push(report);
    }
    let pass = runs.iter().all(|r| r.pass);
    let outcome = ReportOutcome { runs, pass };
    write_json(aggregate, &outcome)?;
    Ok(outcome)
}
