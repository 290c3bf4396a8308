//! INI run configuration and the manifest it resolves to.
//!
//! ```text
//! run_id = bump
//!
//! [grid]
//! dim = 3
//! r_max = 256
//! intervals = 2048
//!
//! [initial]
//! family = gaussian-bump
//! eps = 0.2
//! ```
//!
//! Every key is optional; missing keys take their defaults. Keys the parser
//! does not recognize, including family parameters that do not apply to the
//! chosen family, are rejected with their line number.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use ylab_core::background::{BackgroundChoice, BackgroundSpec, InitialData, InitialFamily, InnerBoundary};
use ylab_core::domain::{build_grid, GridPolicy, RadialGrid};
use ylab_core::flow::{valid_time_horizon, FlowConfig, Scheme};

use crate::error::{CliError, CliResult};

pub const SECTIONS: [&str; 5] = ["grid", "background", "initial", "flow", "monitor"];

#[derive(Debug, Clone, PartialEq)]
struct Entry {
    value: String,
    /// 0 for values injected programmatically.
    line: usize,
}

/// Raw `section -> key -> value` table; the preamble lives under section `""`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct IniDocument {
    sections: BTreeMap<String, BTreeMap<String, Entry>>,
}

fn line_error(origin: &str, line: usize, msg: impl std::fmt::Display) -> CliError {
    if line == 0 {
        CliError::Config(format!("{origin}: {msg}"))
    } else {
        CliError::Config(format!("{origin}:{line}: {msg}"))
    }
}

impl IniDocument {
    pub fn parse(text: &str, origin: &str) -> CliResult<Self> {
        let mut doc = Self::default();
        let mut section = String::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = match raw.find(['#', ';']) {
                Some(pos) => &raw[..pos],
                None => raw,
            }
            .trim();
            if content.is_empty() {
                continue;
            }
            if let Some(name) = content.strip_prefix('[') {
                let name = name
                    .strip_suffix(']')
                    .ok_or_else(|| line_error(origin, line, "unterminated section header"))?
                    .trim();
                if !SECTIONS.contains(&name) {
                    return Err(line_error(origin, line, format!("unknown section `[{name}]`")));
                }
                section = name.to_string();
                continue;
            }
            let (key, value) = content
                .split_once('=')
                .ok_or_else(|| line_error(origin, line, format!("expected `key = value`, got `{content}`")))?;
            let (key, value) = (key.trim(), value.trim());
            if key.is_empty() {
                return Err(line_error(origin, line, "empty key"));
            }
            let table = doc.sections.entry(section.clone()).or_default();
            if let Some(prev) = table.get(key) {
                return Err(line_error(
                    origin,
                    line,
                    format!("duplicate key `{}` (first set on line {})", qualified(&section, key), prev.line),
                ));
            }
            table.insert(key.to_string(), Entry { value: value.to_string(), line });
        }
        Ok(doc)
    }

    /// Sets or replaces `section.key`; `section` may be `""` for the preamble.
    pub fn set(&mut self, section: &str, key: &str, value: &str) {
        self.sections
            .entry(section.to_string())
            .or_default()
            .insert(key.to_string(), Entry { value: value.to_string(), line: 0 });
    }

    pub fn get(&self, section: &str, key: &str) -> Option<&str> {
        self.sections.get(section)?.get(key).map(|e| e.value.as_str())
    }
}

fn qualified(section: &str, key: &str) -> String {
    if section.is_empty() {
        key.to_string()
    } else {
        format!("{section}.{key}")
    }
}

/// Splits `section.key` (or a bare preamble key such as `run_id`).
pub fn split_qualified(name: &str) -> CliResult<(String, String)> {
    match name.split_once('.') {
        Some((s, k)) if SECTIONS.contains(&s) && !k.is_empty() => Ok((s.to_string(), k.to_string())),
        Some((s, _)) => Err(CliError::Config(format!("unknown section `{s}` in `{name}`"))),
        None if name == "run_id" => Ok((String::new(), name.to_string())),
        None => Err(CliError::Config(format!("expected `section.key`, got `{name}`"))),
    }
}

/// Consumes entries so that whatever is left over is unknown.
struct Reader<'a> {
    doc: IniDocument,
    origin: &'a str,
}

impl Reader<'_> {
    fn raw(&mut self, section: &str, key: &str) -> Option<Entry> {
        self.doc.sections.get_mut(section)?.remove(key)
    }

    fn parsed<T: FromStr>(&mut self, section: &str, key: &str) -> CliResult<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        match self.raw(section, key) {
            None => Ok(None),
            Some(e) => e.value.parse::<T>().map(Some).map_err(|err| {
                line_error(self.origin, e.line, format!("bad value `{}` for `{}`: {err}", e.value, qualified(section, key)))
            }),
        }
    }

    fn or<T: FromStr>(&mut self, section: &str, key: &str, default: T) -> CliResult<T>
    where
        T::Err: std::fmt::Display,
    {
        Ok(self.parsed(section, key)?.unwrap_or(default))
    }

    /// `none` (or absent) maps to `None`.
    fn optional<T: FromStr>(&mut self, section: &str, key: &str) -> CliResult<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        match self.raw(section, key) {
            Some(e) if e.value == "none" => Ok(None),
            Some(e) => {
                self.doc.sections.entry(section.to_string()).or_default().insert(key.to_string(), e);
                self.parsed(section, key)
            }
            None => Ok(None),
        }
    }

    fn list(&mut self, section: &str, key: &str) -> CliResult<Option<Vec<f64>>> {
        let Some(e) = self.raw(section, key) else { return Ok(None) };
        e.value
            .split(',')
            .map(|s| s.trim())
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse::<f64>().map_err(|err| {
                    line_error(self.origin, e.line, format!("bad list entry `{s}` in `{}`: {err}", qualified(section, key)))
                })
            })
            .collect::<CliResult<Vec<f64>>>()
            .map(Some)
    }

    fn finish(self) -> CliResult<()> {
        let mut leftovers: Vec<(usize, String)> = self
            .doc
            .sections
            .iter()
            .flat_map(|(s, table)| table.iter().map(move |(k, e)| (e.line, qualified(s, k))))
            .collect();
        leftovers.sort();
        match leftovers.first() {
            None => Ok(()),
            Some((line, key)) => Err(line_error(self.origin, *line, format!("unknown key `{key}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InnerChoice {
    /// Minimal sphere for Schwarzschild data on a punctured grid, zero flux otherwise.
    Auto,
    ZeroFlux,
    MinimalSphere,
}

impl FromStr for InnerChoice {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "auto" => Ok(Self::Auto),
            other => InnerBoundary::from_str(other)
                .map(|b| match b {
                    InnerBoundary::ZeroFlux => Self::ZeroFlux,
                    InnerBoundary::MinimalSphere => Self::MinimalSphere,
                })
                .map_err(|_| format!("expected auto, zero-flux or minimal-sphere, got `{other}`")),
        }
    }
}

impl std::fmt::Display for InnerChoice {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Auto => "auto",
            Self::ZeroFlux => "zero-flux",
            Self::MinimalSphere => "minimal-sphere",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridParams {
    pub dim: usize,
    pub r_in: f64,
    pub r_max: f64,
    pub intervals: usize,
    pub policy: GridPolicy,
}

impl Default for GridParams {
    fn default() -> Self {
        Self { dim: 3, r_in: 0.0, r_max: 64.0, intervals: 512, policy: GridPolicy::LogStretched }
    }
}

impl GridParams {
    pub fn build(&self) -> CliResult<Arc<RadialGrid>> {
        Ok(build_grid(self.dim, self.r_in, self.r_max, self.intervals, self.policy)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackgroundParams {
    /// Catalog name, e.g. `flat3` or `synthetic:A=-50,rc=2,sigma=1,tau=1`.
    pub name: String,
    pub inner: InnerChoice,
}

impl Default for BackgroundParams {
    fn default() -> Self {
        Self { name: "flat".into(), inner: InnerChoice::Auto }
    }
}

/// Flow settings as written in the config; `t_end = None` means the valid-time horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowParams {
    pub scheme: Scheme,
    pub dt0: f64,
    pub dt_max: f64,
    pub newton_tol: f64,
    pub newton_max: usize,
    pub t_end: Option<f64>,
    pub safety: f64,
    pub max_u_cap: Option<f64>,
    pub max_steps: Option<usize>,
}

impl Default for FlowParams {
    fn default() -> Self {
        let d = FlowConfig::default();
        Self {
            scheme: d.scheme,
            dt0: d.dt0,
            dt_max: d.dt_max,
            newton_tol: d.newton_tol,
            newton_max: d.newton_max,
            t_end: None,
            safety: d.safety,
            max_u_cap: d.max_u_cap,
            max_steps: d.max_steps,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonitorParams {
    pub every: usize,
    pub checkpoint_every: usize,
    /// `None` selects the dimension's default exponent list.
    pub p_list: Option<Vec<f64>>,
    pub tau_primes: Vec<f64>,
}

impl Default for MonitorParams {
    fn default() -> Self {
        let d = FlowConfig::default();
        Self {
            every: d.monitor_every,
            checkpoint_every: d.checkpoint_every,
            p_list: d.p_list,
            tau_primes: d.tau_primes,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub background: BackgroundParams,
    pub initial_data: InitialFamily,
    pub grid: GridParams,
    pub flow: FlowParams,
    pub monitor: MonitorParams,
    /// Accepted for forward compatibility; nothing random is drawn.
    #[serde(default)]
    pub seed: Option<u64>,
    /// The resolved integrator settings, filled in when a run starts.
    #[serde(default)]
    pub flow_config: Option<FlowConfig>,
    #[serde(default)]
    pub created_at: Option<String>,
    /// Artifact name to path relative to the run directory.
    #[serde(default)]
    pub artifact_paths: BTreeMap<String, String>,
}

/// Everything a command needs, built and validated from a manifest.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub grid: Arc<RadialGrid>,
    pub background: BackgroundSpec,
    pub initial: InitialData,
    pub flow: FlowConfig,
}

pub fn valid_run_id(id: &str) -> bool {
    !id.is_empty()
        && id != "."
        && id != ".."
        && id.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
}

impl RunManifest {
    pub fn from_document(doc: IniDocument, origin: &str, default_run_id: &str) -> CliResult<Self> {
        let mut rd = Reader { doc, origin };
        let run_id = rd.or("", "run_id", default_run_id.to_string())?;
        if !valid_run_id(&run_id) {
            return Err(CliError::Config(format!("run_id `{run_id}` must use [A-Za-z0-9._-]")));
        }

        let g = GridParams::default();
        let grid = GridParams {
            dim: rd.or("grid", "dim", g.dim)?,
            r_in: rd.or("grid", "r_in", g.r_in)?,
            r_max: rd.or("grid", "r_max", g.r_max)?,
            intervals: rd.or("grid", "intervals", g.intervals)?,
            policy: rd.or("grid", "policy", g.policy)?,
        };

        let b = BackgroundParams::default();
        let background = BackgroundParams {
            name: rd.or("background", "name", b.name)?,
            inner: rd.or("background", "inner", b.inner)?,
        };

        let initial_data = match rd.or("initial", "family", "flat".to_string())?.as_str() {
            "flat" => InitialFamily::Flat,
            "schwarzschild" => InitialFamily::Schwarzschild { m: rd.or("initial", "m", 1.0)? },
            "gaussian-bump" => {
                InitialFamily::GaussianBump { eps: rd.or("initial", "eps", 0.2)?, sigma: rd.or("initial", "sigma", 1.0)? }
            }
            "heat-kernel" => {
                InitialFamily::HeatKernel { eps: rd.or("initial", "eps", 1e-4)?, s0: rd.or("initial", "s0", 1.0)? }
            }
            "newtonian" => InitialFamily::Newtonian {
                a: rd.or("initial", "a", 1.0)?,
                radius: Some(rd.or("initial", "radius", 2.0)?),
            },
            other => {
                return Err(CliError::Config(format!(
                    "{origin}: unknown initial family `{other}` (flat, schwarzschild, gaussian-bump, heat-kernel, newtonian)"
                )))
            }
        };

        let f = FlowParams::default();
        let t_end = match rd.raw("flow", "t_end") {
            None => None,
            Some(e) if e.value == "horizon" => None,
            Some(e) => Some(e.value.parse::<f64>().map_err(|err| {
                line_error(origin, e.line, format!("bad value `{}` for `flow.t_end`: {err}", e.value))
            })?),
        };
        let flow = FlowParams {
            scheme: rd.or("flow", "scheme", f.scheme)?,
            dt0: rd.or("flow", "dt0", f.dt0)?,
            dt_max: rd.or("flow", "dt_max", f.dt_max)?,
            newton_tol: rd.or("flow", "newton_tol", f.newton_tol)?,
            newton_max: rd.or("flow", "newton_max", f.newton_max)?,
            t_end,
            safety: rd.or("flow", "safety", f.safety)?,
            max_u_cap: rd.optional("flow", "max_u_cap")?,
            max_steps: rd.optional("flow", "max_steps")?,
        };

        let m = MonitorParams::default();
        let p_list = match rd.doc.get("monitor", "p_list") {
            Some("default") => {
                rd.raw("monitor", "p_list");
                None
            }
            _ => rd.list("monitor", "p_list")?,
        };
        let monitor = MonitorParams {
            every: rd.or("monitor", "every", m.every)?,
            checkpoint_every: rd.or("monitor", "checkpoint_every", m.checkpoint_every)?,
            p_list,
            tau_primes: rd.list("monitor", "tau_primes")?.unwrap_or(m.tau_primes),
        };
        rd.finish()?;

        let manifest = Self {
            run_id,
            background,
            initial_data,
            grid,
            flow,
            monitor,
            seed: None,
            flow_config: None,
            created_at: None,
            artifact_paths: BTreeMap::new(),
        };
        manifest.prepare()?;
        Ok(manifest)
    }

    pub fn parse_str(text: &str, origin: &str, default_run_id: &str) -> CliResult<Self> {
        Self::from_document(IniDocument::parse(text, origin)?, origin, default_run_id)
    }

    pub fn inner_boundary(&self) -> InnerBoundary {
        match self.background.inner {
            InnerChoice::ZeroFlux => InnerBoundary::ZeroFlux,
            InnerChoice::MinimalSphere => InnerBoundary::MinimalSphere,
            InnerChoice::Auto => match self.initial_data {
                InitialFamily::Schwarzschild { .. } if self.grid.r_in > 0.0 => InnerBoundary::MinimalSphere,
                _ => InnerBoundary::ZeroFlux,
            },
        }
    }

    pub fn flow_config(&self, grid: &RadialGrid) -> FlowConfig {
        let f = &self.flow;
        FlowConfig {
            scheme: f.scheme,
            dt0: f.dt0,
            dt_max: f.dt_max,
            newton_tol: f.newton_tol,
            newton_max: f.newton_max,
            t_end: f.t_end.unwrap_or_else(|| valid_time_horizon(grid)),
            monitor_every: self.monitor.every,
            checkpoint_every: self.monitor.checkpoint_every,
            safety: f.safety,
            p_list: self.monitor.p_list.clone(),
            tau_primes: self.monitor.tau_primes.clone(),
            max_u_cap: f.max_u_cap,
            max_steps: f.max_steps,
        }
    }

    pub fn build_background(&self, grid: &Arc<RadialGrid>) -> CliResult<BackgroundSpec> {
        let bg = BackgroundChoice::parse(&self.background.name)?.build(grid)?;
        Ok(bg.with_inner_boundary(self.inner_boundary()))
    }

    /// Builds grid, background, initial data and integrator settings; any failure is a config error.
    pub fn prepare(&self) -> CliResult<Prepared> {
        let as_config = |e: CliError| match e {
            CliError::Config(m) => CliError::Config(m),
            other => CliError::Config(other.to_string()),
        };
        let inner = || -> CliResult<Prepared> {
            let grid = self.grid.build()?;
            let background = self.build_background(&grid)?;
            let initial = match &self.initial_data {
                InitialFamily::Flat => InitialData::flat(&grid),
                InitialFamily::Schwarzschild { m } => InitialData::schwarzschild(&grid, *m)?,
                InitialFamily::GaussianBump { eps, sigma } => InitialData::gaussian_bump(&grid, *eps, *sigma)?,
                InitialFamily::HeatKernel { eps, s0 } => InitialData::heat_kernel(&grid, *eps, *s0)?,
                InitialFamily::Newtonian { a, radius: Some(s) } => InitialData::newtonian_bump(&grid, *a, *s)?,
                other => return Err(CliError::Config(format!("initial family {other:?} cannot be rebuilt"))),
            };
            let flow = self.flow_config(&grid);
            flow.validate()?;
            Ok(Prepared { grid, background, initial, flow })
        };
        inner().map_err(as_config)
    }

    /// INI text that parses back to this manifest (run-time fields excluded).
    pub fn to_ini(&self) -> String {
        let mut s = String::new();
        let num = |x: f64| format!("{x:?}");
        let list = |v: &[f64]| v.iter().map(|x| num(*x)).collect::<Vec<_>>().join(", ");
        let _ = writeln!(s, "run_id = {}", self.run_id);
        let g = &self.grid;
        let _ = writeln!(s, "\n[grid]");
        let _ = writeln!(s, "dim = {}\nr_in = {}\nr_max = {}", g.dim, num(g.r_in), num(g.r_max));
        let _ = writeln!(s, "intervals = {}\npolicy = {}", g.intervals, g.policy);
        let _ = writeln!(s, "\n[background]\nname = {}\ninner = {}", self.background.name, self.background.inner);
        let _ = writeln!(s, "\n[initial]");
        match &self.initial_data {
            InitialFamily::Flat => {
                let _ = writeln!(s, "family = flat");
            }
            InitialFamily::Schwarzschild { m } => {
                let _ = writeln!(s, "family = schwarzschild\nm = {}", num(*m));
            }
            InitialFamily::GaussianBump { eps, sigma } => {
                let _ = writeln!(s, "family = gaussian-bump\neps = {}\nsigma = {}", num(*eps), num(*sigma));
            }
            InitialFamily::HeatKernel { eps, s0 } => {
                let _ = writeln!(s, "family = heat-kernel\neps = {}\ns0 = {}", num(*eps), num(*s0));
            }
            InitialFamily::Newtonian { a, radius } => {
                let _ = writeln!(s, "family = newtonian\na = {}", num(*a));
                if let Some(r) = radius {
                    let _ = writeln!(s, "radius = {}", num(*r));
                }
            }
            InitialFamily::Custom { label } => {
                let _ = writeln!(s, "# custom initial data `{label}` cannot be expressed here");
            }
        }
        let f = &self.flow;
        let _ = writeln!(s, "\n[flow]\nscheme = {}", f.scheme);
        let _ = writeln!(s, "dt0 = {}\ndt_max = {}", num(f.dt0), num(f.dt_max));
        let _ = writeln!(s, "newton_tol = {}\nnewton_max = {}", num(f.newton_tol), f.newton_max);
        let _ = writeln!(s, "t_end = {}", f.t_end.map_or("horizon".to_string(), num));
        let _ = writeln!(s, "safety = {}", num(f.safety));
        let _ = writeln!(s, "max_u_cap = {}", f.max_u_cap.map_or("none".to_string(), num));
        let _ = writeln!(s, "max_steps = {}", f.max_steps.map_or("none".to_string(), |k| k.to_string()));
        let m = &self.monitor;
        let _ = writeln!(s, "\n[monitor]\nevery = {}\ncheckpoint_every = {}", m.every, m.checkpoint_every);
        let _ = writeln!(s, "p_list = {}", m.p_list.as_deref().map_or("default".to_string(), list));
        let _ = writeln!(s, "tau_primes = {}", list(&m.tau_primes));
        s
    }
}

/// Reads an INI file; the run id defaults to the file stem.
pub fn parse_config(path: &Path) -> CliResult<RunManifest> {
    load_document(path).and_then(|(doc, origin, stem)| RunManifest::from_document(doc, &origin, &stem))
}

pub fn load_document(path: &Path) -> CliResult<(IniDocument, String, String)> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let origin = path.display().to_string();
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("run").to_string();
    Ok((IniDocument::parse(&text, &origin)?, origin, stem))
}
