//! Per-run commands and the on-disk run layout.
//!
//! ```text
//! <out>/<run_id>/manifest.json
//!                monitor.csv
//!                final_state.csv
//!                summary.json
//!                checkpoints/ckpt_000000.csv (+ .json sidecar)
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::json;
use ylab_core::domain::{RadialField, RadialGrid};
use ylab_core::elliptic::{
    prescribe_scalar_curvature, solve_scalar_flat, yamabe_sign, EllipticConfig, SignCertificate, TrialFamily,
};
use ylab_core::flow::{adm_mass, monitor_csv, run_flow, FlowState, HaltReason};

use crate::config::RunManifest;
use crate::error::{CliError, CliResult};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MONITOR_FILE: &str = "monitor.csv";
pub const FINAL_STATE_FILE: &str = "final_state.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const CHECKPOINT_DIR: &str = "checkpoints";
/// Outputs of the elliptic commands, which may share a run directory.
pub const AUX_FILES: [&str; 6] =
    ["u_inf.csv", "scalar_flat.json", "sign.json", "sign_certificate.csv", "phi.csv", "prescribe.json"];

pub fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> CliResult<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
    }
    fs::write(path, contents).map_err(|e| CliError::io(path, e))
}

pub fn write_json(path: &Path, value: &impl Serialize) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_file(path, text)
}

/// `r,u,excess` rows; the excess column keeps full precision where `u ≈ 1`.
pub fn state_csv(excess: &RadialField) -> String {
    let mut out = String::with_capacity(excess.len() * 72);
    out.push_str("r,u,excess\n");
    for (r, v) in excess.grid().nodes().iter().zip(excess.values()) {
        let _ = writeln!(out, "{r:.16e},{:.16e},{v:.16e}", 1.0 + v);
    }
    out
}

/// Reads a file written by [`state_csv`] back into an excess field on `grid`.
pub fn read_state_csv(grid: &Arc<RadialGrid>, path: &Path) -> CliResult<RadialField> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let schema = |msg: String| CliError::Audit(format!("{}: {msg}", path.display()));
    let mut lines = text.lines();
    if lines.next() != Some("r,u,excess") {
        return Err(schema("expected header `r,u,excess`".into()));
    }
    let mut values = Vec::with_capacity(grid.len());
    for (i, line) in lines.filter(|l| !l.trim().is_empty()).enumerate() {
        let cols: Vec<&str> = line.split(',').collect();
        let parse = |s: &str| s.trim().parse::<f64>().map_err(|e| schema(format!("row {}: {e}", i + 1)));
        if cols.len() != 3 {
            return Err(schema(format!("row {}: expected 3 columns", i + 1)));
        }
        let r = parse(cols[0])?;
        match grid.nodes().get(i) {
            Some(&node) if (node - r).abs() <= 1e-12 * node.max(1.0) => values.push(parse(cols[2])?),
            _ => return Err(schema(format!("row {}: node r = {r} does not match the grid", i + 1))),
        }
    }
    RadialField::new(grid.clone(), values).map_err(|e| schema(e.to_string()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub t: f64,
    pub dt: f64,
    pub step_index: usize,
    pub background_name: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[allow(non_snake_case)]
pub struct RunSummary {
    pub run_id: String,
    pub halted: bool,
    pub halt_reason: Option<HaltReason>,
    pub final_t: f64,
    pub final_sup_R: f64,
    /// Mass at the first and last monitor record.
    pub mass_series_endpoints: (f64, f64),
    pub steps: usize,
    pub records: usize,
    pub checkpoints: usize,
}

#[derive(Debug, Clone)]
pub struct SimulationOutcome {
    pub run_dir: PathBuf,
    pub summary: RunSummary,
}

impl SimulationOutcome {
    /// 0 for a completed run, 3 for a halted one.
    pub fn exit_code(&self) -> i32 {
        if self.summary.halted {
            3
        } else {
            0
        }
    }
}

fn checkpoint_name(step: usize) -> String {
    format!("ckpt_{step:06}")
}

/// Fails before any compute when `<root>/<run_id>` is taken and `force` is off.
fn check_run_dir(root: &Path, run_id: &str, force: bool) -> CliResult<PathBuf> {
    let dir = root.join(run_id);
    if dir.exists() {
        if !dir.join(MANIFEST_FILE).exists() {
            let entries = fs::read_dir(&dir).map_err(|e| CliError::io(&dir, e))?;
            for entry in entries {
                let name = entry.map_err(|e| CliError::io(&dir, e))?.file_name();
                if !AUX_FILES.iter().any(|a| name == *a) {
                    return Err(CliError::Config(format!("{} exists and is not a run directory", dir.display())));
                }
            }
            return Ok(dir);
        }
        if !force {
            return Err(CliError::Config(format!(
                "run `{run_id}` already exists in {}; pass --force to overwrite",
                root.display()
            )));
        }
    }
    Ok(dir)
}

fn reset_run_dir(dir: &Path) -> CliResult<()> {
    if dir.join(MANIFEST_FILE).exists() {
        fs::remove_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

/// Integrates the flow described by `manifest` and persists every artifact.
///
/// A halted run still writes its partial series; the halt is reported through
/// the summary and [`SimulationOutcome::exit_code`].
pub fn simulate(manifest: &RunManifest, root: &Path, force: bool) -> CliResult<SimulationOutcome> {
    let prepared = manifest.prepare()?;
    let dir = check_run_dir(root, &manifest.run_id, force)?;
    let run = run_flow(&prepared.background, &prepared.initial, &prepared.flow)?;
    reset_run_dir(&dir)?;
    let bg_name = prepared.background.name.clone();

    let mut artifacts = BTreeMap::new();
    write_file(&dir.join(MONITOR_FILE), monitor_csv(&run.records, &run.p_list, &run.tau_primes))?;
    artifacts.insert("monitor".to_string(), MONITOR_FILE.to_string());

    for state in &run.checkpoints {
        let stem = checkpoint_name(state.step_index);
        let csv = format!("{CHECKPOINT_DIR}/{stem}.csv");
        let meta = format!("{CHECKPOINT_DIR}/{stem}.json");
        write_file(&dir.join(&csv), state_csv(&state.excess))?;
        let sidecar =
            CheckpointMeta { t: state.t, dt: state.dt, step_index: state.step_index, background_name: bg_name.clone() };
        write_json(&dir.join(&meta), &sidecar)?;
        artifacts.insert(stem.clone(), csv);
        artifacts.insert(format!("{stem}.meta"), meta);
    }

    write_file(&dir.join(FINAL_STATE_FILE), state_csv(&run.final_state.excess))?;
    artifacts.insert("final_state".to_string(), FINAL_STATE_FILE.to_string());

    let first = run.records.first().map_or(f64::NAN, |r| r.mass);
    let last = run.records.last();
    let summary = RunSummary {
        run_id: manifest.run_id.clone(),
        halted: run.halted.is_some(),
        halt_reason: run.halted.clone(),
        final_t: run.final_state.t,
        final_sup_R: last.map_or(f64::NAN, |r| r.sup_r),
        mass_series_endpoints: (first, last.map_or(f64::NAN, |r| r.mass)),
        steps: run.final_state.step_index,
        records: run.records.len(),
        checkpoints: run.checkpoints.len(),
    };
    write_json(&dir.join(SUMMARY_FILE), &summary)?;
    artifacts.insert("summary".to_string(), SUMMARY_FILE.to_string());
    artifacts.insert("manifest".to_string(), MANIFEST_FILE.to_string());

    let mut stored = manifest.clone();
    stored.flow_config = Some(prepared.flow.clone());
    stored.created_at = Some(chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true));
    stored.artifact_paths = artifacts;
    write_json(&dir.join(MANIFEST_FILE), &stored)?;
    Ok(SimulationOutcome { run_dir: dir, summary })
}

fn aux_dir(root: &Path, run_id: &str) -> CliResult<PathBuf> {
    let dir = root.join(run_id);
    fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
    Ok(dir)
}

/// Solves for the scalar-flat factor and writes `u_inf.csv` and `scalar_flat.json`.
pub fn scalar_flat(manifest: &RunManifest, root: &Path) -> CliResult<PathBuf> {
    let grid = manifest.grid.build()?;
    let bg = manifest.build_background(&grid)?;
    let dir = aux_dir(root, &manifest.run_id)?;
    match solve_scalar_flat(&bg, &EllipticConfig::default()) {
        Ok((u_inf, report)) => {
            let excess = u_inf.map(|u| u - 1.0)?;
            let mass = adm_mass(&excess).ok();
            write_file(&dir.join("u_inf.csv"), state_csv(&excess))?;
            write_json(
                &dir.join("scalar_flat.json"),
                &json!({"background": bg.name, "report": report, "m_inf": mass.map(|m| m.mass), "mass": mass}),
            )?;
            Ok(dir)
        }
        Err(err) => {
            write_json(&dir.join("scalar_flat.json"), &json!({"background": bg.name, "error": err.to_string()}))?;
            Err(err.into())
        }
    }
}

/// Classifies the Yamabe sign and writes `sign.json` plus the certificate profile.
pub fn sign(manifest: &RunManifest, root: &Path) -> CliResult<(PathBuf, serde_json::Value)> {
    let grid = manifest.grid.build()?;
    let bg = manifest.build_background(&grid)?;
    let cfg = EllipticConfig::default();
    let verdict = yamabe_sign(&bg, &TrialFamily::for_background(&bg), &cfg)?;
    let verified = verdict.verify(&bg, &cfg)?;
    let dir = aux_dir(root, &manifest.run_id)?;
    let profile = match &verdict.certificate {
        SignCertificate::ScalarFlat { u_inf, .. } => Some(u_inf.to_csv("r,u_inf")),
        SignCertificate::Trial { v, .. } => Some(v.to_csv("r,trial")),
        SignCertificate::Unresolved { .. } => None,
    };
    if let Some(csv) = profile {
        write_file(&dir.join("sign_certificate.csv"), csv)?;
    }
    let mut out = verdict.summary();
    out["background"] = json!(bg.name);
    out["verified"] = json!(verified);
    write_json(&dir.join("sign.json"), &out)?;
    Ok((dir, out))
}

/// Target curvature: `neg-power:c=..,tau=..` for `-c (1+r²)^{-(2+τ)/2}`, or a `r,value` CSV.
pub fn parse_target(target: &str, grid: &Arc<RadialGrid>, default_tau: f64) -> CliResult<RadialField> {
    if let Some(rest) = target.strip_prefix("neg-power") {
        let (mut c, mut tau) = (1.0, default_tau);
        for kv in rest.trim_start_matches(':').split(',').filter(|s| !s.trim().is_empty()) {
            let (k, v) = kv.split_once('=').ok_or_else(|| CliError::Config(format!("expected key=value in `{kv}`")))?;
            let v: f64 = v.trim().parse().map_err(|_| CliError::Config(format!("bad number `{v}` in target")))?;
            match k.trim() {
                "c" => c = v,
                "tau" => tau = v,
                other => return Err(CliError::Config(format!("unknown target parameter `{other}`"))),
            }
        }
        if !(c >= 0.0) {
            return Err(CliError::Config(format!("neg-power target needs c >= 0, got {c}")));
        }
        return Ok(RadialField::from_fn(grid, |r| -c * (1.0 + r * r).powf(-(2.0 + tau) / 2.0))?);
    }
    let path = Path::new(target);
    let file = fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    Ok(RadialField::read_csv(grid, std::io::BufReader::new(file))?)
}

/// Solves the prescribed-curvature problem against `target`; writes `phi.csv` and `prescribe.json`.
pub fn prescribe(manifest: &RunManifest, root: &Path, target: &str) -> CliResult<PathBuf> {
    let grid = manifest.grid.build()?;
    let bg = manifest.build_background(&grid)?;
    let target = parse_target(target, &grid, bg.tau)?;
    let (phi, report) = prescribe_scalar_curvature(&bg, &target, &EllipticConfig::default())?;
    let dir = aux_dir(root, &manifest.run_id)?;
    write_file(&dir.join("phi.csv"), state_csv(&phi.map(|p| p - 1.0)?))?;
    write_json(&dir.join("prescribe.json"), &json!({"background": bg.name, "report": report}))?;
    Ok(dir)
}

/// A run directory read back from disk.
#[derive(Debug, Clone)]
pub struct StoredRun {
    pub dir: PathBuf,
    pub manifest: RunManifest,
    pub summary: RunSummary,
}

impl StoredRun {
    pub fn open(dir: &Path) -> CliResult<Self> {
        let read = |name: &str| {
            let p = dir.join(name);
            fs::read_to_string(&p).map_err(|e| CliError::io(&p, e))
        };
        let manifest: RunManifest = serde_json::from_str(&read(MANIFEST_FILE)?)?;
        let summary: RunSummary = serde_json::from_str(&read(SUMMARY_FILE)?)?;
        Ok(Self { dir: dir.to_path_buf(), manifest, summary })
    }

    pub fn monitor_text(&self) -> CliResult<String> {
        let p = self.dir.join(MONITOR_FILE);
        fs::read_to_string(&p).map_err(|e| CliError::io(&p, e))
    }

    /// Checkpoints in step order as flow states.
    pub fn checkpoints(&self, grid: &Arc<RadialGrid>) -> CliResult<Vec<FlowState>> {
        let mut out = Vec::new();
        for (key, rel) in &self.manifest.artifact_paths {
            if !key.starts_with("ckpt_") || key.ends_with(".meta") {
                continue;
            }
            let meta_rel = self
                .manifest
                .artifact_paths
                .get(&format!("{key}.meta"))
                .ok_or_else(|| CliError::Audit(format!("checkpoint {key} has no sidecar")))?;
            let meta_path = self.dir.join(meta_rel);
            let meta_text = fs::read_to_string(&meta_path).map_err(|e| CliError::io(&meta_path, e))?;
            let meta: CheckpointMeta = serde_json::from_str(&meta_text)
                .map_err(|e| CliError::Audit(format!("{}: {e}", meta_path.display())))?;
            let excess = read_state_csv(grid, &self.dir.join(rel))?;
            out.push(FlowState { t: meta.t, excess, dt: meta.dt, step_index: meta.step_index, residual: 0.0 });
        }
        out.sort_by_key(|s| s.step_index);
        Ok(out)
    }
}
