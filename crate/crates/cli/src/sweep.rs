//! Cartesian parameter sweeps over a template config.
//!
//! Runs land in `<out>/<sweep_id>/<sweep_id>-NNN`; the orchestrator thread is
//! the only writer of `<out>/<sweep_id>/index.jsonl`.

use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::mpsc;

use rayon::prelude::*;
use serde::Serialize;

use crate::config::{load_document, split_qualified, RunManifest};
use crate::error::{CliError, CliResult};
use crate::report::{report, ReportOutcome};
use crate::run::simulate;

pub const INDEX_FILE: &str = "index.jsonl";

#[derive(Debug, Clone, PartialEq)]
pub struct SweepParam {
    pub section: String,
    pub key: String,
    pub values: Vec<String>,
}

impl SweepParam {
    /// `section.key=v1|v2|...`
    pub fn parse(arg: &str) -> CliResult<Self> {
        let (name, values) = arg
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("expected `section.key=v1|v2`, got `{arg}`")))?;
        let (section, key) = split_qualified(name.trim())?;
        if key == "run_id" {
            return Err(CliError::Config("run_id is assigned by the sweep".into()));
        }
        let values: Vec<String> = values.split('|').map(|v| v.trim().to_string()).collect();
        if values.iter().any(String::is_empty) {
            return Err(CliError::Config(format!("empty value in `{arg}`")));
        }
        Ok(Self { section, key, values })
    }

    fn label(&self) -> String {
        format!("{}.{}", self.section, self.key)
    }
}

/// Every combination, first parameter varying slowest.
pub fn expand(params: &[SweepParam]) -> Vec<Vec<(usize, String)>> {
    params.iter().enumerate().fold(vec![Vec::new()], |acc, (i, p)| {
        acc.iter()
            .flat_map(|prefix| {
                p.values.iter().map(move |v| {
                    let mut next = prefix.clone();
                    next.push((i, v.clone()));
                    next
                })
            })
            .collect()
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepEntry {
    pub run_id: String,
    pub params: BTreeMap<String, String>,
    pub status: &'static str,
    pub exit_code: i32,
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub dir: PathBuf,
    pub entries: Vec<SweepEntry>,
    pub report: Option<ReportOutcome>,
}

impl SweepOutcome {
    /// 3 if any run failed outright, otherwise the report's code.
    pub fn exit_code(&self) -> i32 {
        if self.entries.iter().any(|e| e.status == "error") {
            return 3;
        }
        self.report.as_ref().map_or(3, ReportOutcome::exit_code)
    }
}

pub fn sweep(template: &Path, params: &[SweepParam], root: &Path, jobs: usize, force: bool) -> CliResult<SweepOutcome> {
    let (doc, origin, stem) = load_document(template)?;
    let sweep_id = doc.get("", "run_id").unwrap_or(&stem).to_string();

    // every manifest is validated before anything runs
    let mut jobs_list = Vec::new();
    for (k, combo) in expand(params).into_iter().enumerate() {
        let mut d = doc.clone();
        let mut labels = BTreeMap::new();
        for (i, value) in &combo {
            d.set(&params[*i].section, &params[*i].key, value);
            labels.insert(params[*i].label(), value.clone());
        }
        let run_id = format!("{sweep_id}-{k:03}");
        d.set("", "run_id", &run_id);
        let manifest = RunManifest::from_document(d, &origin, &run_id)?;
        jobs_list.push((manifest, labels));
    }

    let dir = root.join(&sweep_id);
    fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
    let index_path = dir.join(INDEX_FILE);
    if index_path.exists() && !force {
        return Err(CliError::Config(format!("sweep `{sweep_id}` already exists; pass --force to overwrite")));
    }
    let mut index = OpenOptions::new()
        .create(true)
        .write(true)
        .truncate(true)
        .open(&index_path)
        .map_err(|e| CliError::io(&index_path, e))?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| CliError::Config(format!("worker pool: {e}")))?;
    let (tx, rx) = mpsc::channel::<SweepEntry>();
    let entries = std::thread::scope(|scope| {
        let writer = scope.spawn(|| -> CliResult<Vec<SweepEntry>> {
            let mut seen = Vec::new();
            for entry in rx {
                let line = serde_json::to_string(&entry)?;
                writeln!(index, "{line}").map_err(|e| CliError::io(&index_path, e))?;
                seen.push(entry);
            }
            Ok(seen)
        });
        pool.install(|| {
            jobs_list.par_iter().for_each_with(tx, |tx, (manifest, labels)| {
                let (status, exit_code, error) = match simulate(manifest, &dir, force) {
                    Ok(out) if out.summary.halted => ("halted", out.exit_code(), None),
                    Ok(out) => ("completed", out.exit_code(), None),
                    Err(e) => ("error", e.exit_code(), Some(e.to_string())),
                };
                let entry = SweepEntry { run_id: manifest.run_id.clone(), params: labels.clone(), status, exit_code, error };
                // the receiver outlives every sender
                let _ = tx.send(entry);
            });
        });
        writer.join().expect("index writer panicked")
    })?;

    let mut entries = entries;
    entries.sort_by(|a, b| a.run_id.cmp(&b.run_id));
    let run_dirs: Vec<PathBuf> = entries.iter().filter(|e| e.status != "error").map(|e| dir.join(&e.run_id)).collect();
    let report = if run_dirs.is_empty() { None } else { Some(report(&run_dirs, None, false, &dir.join("report.json"))?) };
    Ok(SweepOutcome { dir, entries, report })
}
