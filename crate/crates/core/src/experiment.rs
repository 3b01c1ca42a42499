//! Experiment configuration, the run driver behind the CLI, and the summary
//! table builder.
//!
//! A configuration file is flat `key = value` text (TOML syntax; dotted keys
//! such as `spsa.a` stay flat). Unset keys take per-problem defaults.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::design::{ActiveLearningConfig, SpsaParams};
use crate::error::{Error, Result};
use crate::gad::{
    run_agpr_gad, run_reference_gad, seeded_default_direction, ExactDerivatives, GadConfig,
    GadResult, GadState, NoisyFiniteDifference,
};
use crate::problems::Problem;
use crate::Vector;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Reference,
    Agpr,
}

impl Mode {
    pub fn parse(s: &str) -> Option<Mode> {
        match s {
            "reference" => Some(Mode::Reference),
            "agpr" => Some(Mode::Agpr),
            _ => None,
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            Mode::Reference => "GAD",
            Mode::Agpr => "aGPR-GAD",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Reference => "reference",
            Mode::Agpr => "agpr",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum InitialDirection {
    Explicit(Vec<f64>),
    /// Serialised as the string `"seeded-default"`.
    Named(String),
}

impl InitialDirection {
    pub fn seeded_default() -> Self {
        InitialDirection::Named("seeded-default".into())
    }
}

/// Every key accepted in a configuration file.
pub const CONFIG_KEYS: &[&str] = &[
    "problem",
    "mode",
    "start",
    "v0",
    "dt",
    "tol",
    "t_max",
    "noise_var",
    "sigma_sur",
    "N0",
    "N_D",
    "n_paths",
    "horizon_T",
    "design_dt",
    "init_spread",
    "spsa.a",
    "spsa.A",
    "spsa.alpha",
    "spsa.c",
    "spsa.gamma",
    "spsa.iters",
    "mle_budget",
    "mle_refit_budget",
    "mle_starts",
    "max_updates",
    "fd_min_step",
    "seed",
    "output_dir",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub problem: String,
    pub mode: Mode,
    pub start: Vec<f64>,
    pub v0: InitialDirection,
    pub dt: f64,
    pub tol: f64,
    pub t_max: usize,
    pub noise_var: f64,
    pub sigma_sur: f64,
    #[serde(rename = "N0")]
    pub n0: usize,
    #[serde(rename = "N_D")]
    pub n_d: usize,
    pub n_paths: usize,
    #[serde(rename = "horizon_T")]
    pub horizon_t: f64,
    pub design_dt: f64,
    pub init_spread: f64,
    pub spsa: SpsaParams,
    pub mle_budget: usize,
    pub mle_refit_budget: usize,
    pub mle_starts: usize,
    pub max_updates: usize,
    /// Lower bound on the central-difference step of the noisy reference.
    pub fd_min_step: f64,
    pub seed: u64,
    pub output_dir: PathBuf,
}

/// Default `sigma^2_sur` for the force benchmark, interpolated through the
/// pairs `(0, 0.005)`, `(0.05, 0.007)`, `(0.1, 0.010)`.
fn example2_threshold(noise_var: f64) -> f64 {
    let pts = [(0.0, 0.005), (0.05, 0.007), (0.1, 0.010)];
    let seg = if noise_var <= pts[1].0 { 0 } else { 1 };
    let ((x0, y0), (x1, y1)) = (pts[seg], pts[seg + 1]);
    (y0 + (y1 - y0) * (noise_var - x0) / (x1 - x0)).max(1e-6)
}

/// Tolerance used when `tol` is unset: a residual speed of `1e-3` per unit
/// time, so the stopping test means the same thing at any `dt`.
pub fn default_tol(dt: f64) -> f64 {
    1e-3 * dt
}

impl ExperimentConfig {
    /// Defaults for a named benchmark and mode.
    pub fn defaults(problem: &str, mode: Mode, noise_var: f64) -> Self {
        let example2 = problem == "example2";
        let start = if example2 {
            vec![0.59, 0.73]
        } else {
            vec![0.46, 0.69]
        };
        let dt = if mode == Mode::Reference && !example2 {
            0.1
        } else {
            0.01
        };
        let al = ActiveLearningConfig::default();
        ExperimentConfig {
            problem: problem.to_string(),
            mode,
            start,
            v0: InitialDirection::seeded_default(),
            dt,
            tol: default_tol(dt),
            t_max: if mode == Mode::Reference { 20_000 } else { 5_000 },
            noise_var,
            sigma_sur: if example2 {
                example2_threshold(noise_var)
            } else {
                al.sigma_sur
            },
            n0: al.n0,
            n_d: al.n_d,
            n_paths: al.n_paths,
            horizon_t: al.horizon_t,
            design_dt: dt,
            init_spread: if example2 { 0.3 } else { 0.5 },
            spsa: SpsaParams::default(),
            mle_budget: al.mle_budget,
            mle_refit_budget: al.mle_refit_budget,
            mle_starts: al.mle_starts,
            max_updates: al.max_updates,
            fd_min_step: 0.0,
            seed: 0,
            output_dir: PathBuf::from("runs"),
        }
    }

    /// Parses configuration text. Unknown keys, wrongly typed values and
    /// out-of-range settings are all reported together.
    pub fn parse(text: &str) -> Result<Self> {
        Self::parse_with_overrides(text, &Overrides::default())
    }

    pub fn from_file(path: &Path, overrides: &Overrides) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Self::parse_with_overrides(&text, overrides)
    }

    pub fn parse_with_overrides(text: &str, overrides: &Overrides) -> Result<Self> {
        let table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::Config(vec![format!("syntax: {}", e.message())]))?;
        let mut flat = BTreeMap::new();
        flatten("", &toml::Value::Table(table), &mut flat);

        let mut errs = Vec::new();
        let unknown: Vec<&str> = flat
            .keys()
            .map(String::as_str)
            .filter(|k| !CONFIG_KEYS.contains(k))
            .collect();
        if !unknown.is_empty() {
            errs.push(format!("unknown keys: {}", unknown.join(", ")));
        }

        let mut r = Reader {
            flat: &flat,
            errs: &mut errs,
        };
        let problem = r.string("problem").unwrap_or_else(|| "example1".into());
        let mode = match r.string("mode") {
            None => Mode::Agpr,
            Some(s) => Mode::parse(&s).unwrap_or_else(|| {
                r.errs.push(format!("mode: expected reference or agpr, got {s:?}"));
                Mode::Agpr
            }),
        };
        let mode = overrides.mode.unwrap_or(mode);
        let noise_var = r.float("noise_var").unwrap_or(0.0);
        let mut cfg = ExperimentConfig::defaults(&problem, mode, noise_var);

        if let Some(v) = r.floats("start") {
            cfg.start = v;
        }
        if let Some(v) = flat.get("v0") {
            match v {
                toml::Value::String(s) if s == "seeded-default" => {}
                toml::Value::String(s) => r.errs.push(format!(
                    "v0: expected a vector or \"seeded-default\", got {s:?}"
                )),
                _ => {
                    if let Some(v) = r.floats("v0") {
                        cfg.v0 = InitialDirection::Explicit(v);
                    }
                }
            }
        }
        macro_rules! set {
            ($field:expr, $key:literal, float) => {
                if let Some(v) = r.float($key) {
                    $field = v;
                }
            };
            ($field:expr, $key:literal, count) => {
                if let Some(v) = r.count($key) {
                    $field = v;
                }
            };
        }
        set!(cfg.dt, "dt", float);
        cfg.design_dt = cfg.dt;
        cfg.tol = default_tol(cfg.dt);
        set!(cfg.tol, "tol", float);
        set!(cfg.t_max, "t_max", count);
        set!(cfg.sigma_sur, "sigma_sur", float);
        set!(cfg.n0, "N0", count);
        set!(cfg.n_d, "N_D", count);
        set!(cfg.n_paths, "n_paths", count);
        set!(cfg.horizon_t, "horizon_T", float);
        set!(cfg.design_dt, "design_dt", float);
        set!(cfg.init_spread, "init_spread", float);
        set!(cfg.spsa.a, "spsa.a", float);
        set!(cfg.spsa.big_a, "spsa.A", float);
        set!(cfg.spsa.alpha, "spsa.alpha", float);
        set!(cfg.spsa.c, "spsa.c", float);
        set!(cfg.spsa.gamma, "spsa.gamma", float);
        set!(cfg.spsa.iters, "spsa.iters", count);
        set!(cfg.mle_budget, "mle_budget", count);
        set!(cfg.mle_refit_budget, "mle_refit_budget", count);
        set!(cfg.mle_starts, "mle_starts", count);
        set!(cfg.max_updates, "max_updates", count);
        set!(cfg.fd_min_step, "fd_min_step", float);
        if let Some(s) = r.count("seed") {
            cfg.seed = s as u64;
        }
        if let Some(s) = r.string("output_dir") {
            cfg.output_dir = PathBuf::from(s);
        }

        if let Some(seed) = overrides.seed {
            cfg.seed = seed;
        }
        if let Some(dir) = &overrides.output_dir {
            cfg.output_dir = dir.clone();
        }
        cfg.spsa.seed = cfg.seed;
        errs.extend(cfg.range_errors());
        if errs.is_empty() {
            Ok(cfg)
        } else {
            Err(Error::Config(errs))
        }
    }

    fn range_errors(&self) -> Vec<String> {
        let mut errs = Vec::new();
        let problem = Problem::by_name(&self.problem);
        match &problem {
            None => errs.push(format!(
                "problem: unknown benchmark {:?} (expected example1 or example2)",
                self.problem
            )),
            Some(p) => {
                if self.start.len() != p.dim() {
                    errs.push(format!("start: expected {} coordinates", p.dim()));
                }
                if let InitialDirection::Explicit(v) = &self.v0 {
                    if v.len() != p.dim() || !v.iter().any(|c| *c != 0.0) {
                        errs.push(format!("v0: expected a nonzero {}-vector", p.dim()));
                    }
                }
            }
        }
        if !self.start.iter().all(|c| c.is_finite()) {
            errs.push("start: coordinates must be finite".into());
        }
        let positive = [
            ("dt", self.dt),
            ("tol", self.tol),
            ("sigma_sur", self.sigma_sur),
            ("horizon_T", self.horizon_t),
            ("design_dt", self.design_dt),
            ("init_spread", self.init_spread),
            ("spsa.a", self.spsa.a),
            ("spsa.alpha", self.spsa.alpha),
            ("spsa.c", self.spsa.c),
            ("spsa.gamma", self.spsa.gamma),
        ];
        for (k, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                errs.push(format!("{k}: must be positive and finite, got {v}"));
            }
        }
        let nonnegative = [
            ("noise_var", self.noise_var),
            ("spsa.A", self.spsa.big_a),
            ("fd_min_step", self.fd_min_step),
        ];
        for (k, v) in nonnegative {
            if !(v >= 0.0 && v.is_finite()) {
                errs.push(format!("{k}: must be nonnegative and finite, got {v}"));
            }
        }
        let counts = [
            ("t_max", self.t_max),
            ("N0", self.n0),
            ("N_D", self.n_d),
            ("n_paths", self.n_paths),
            ("mle_starts", self.mle_starts),
        ];
        for (k, v) in counts {
            if v == 0 {
                errs.push(format!("{k}: must be >= 1"));
            }
        }
        errs
    }

    pub fn active_learning(&self) -> ActiveLearningConfig {
        ActiveLearningConfig {
            n0: self.n0,
            n_d: self.n_d,
            sigma_sur: self.sigma_sur,
            n_paths: self.n_paths,
            horizon_t: self.horizon_t,
            design_dt: self.design_dt,
            init_spread: self.init_spread,
            noise_var: self.noise_var,
            spsa: SpsaParams {
                seed: self.seed,
                ..self.spsa
            },
            mle_budget: self.mle_budget,
            mle_refit_budget: self.mle_refit_budget,
            mle_starts: self.mle_starts,
            max_updates: self.max_updates,
        }
    }

    pub fn gad(&self) -> GadConfig {
        GadConfig {
            dt: self.dt,
            tol: self.tol,
            t_max: self.t_max,
        }
    }

    pub fn start_state(&self) -> Result<GadState> {
        let d = self.start.len();
        let v = match &self.v0 {
            InitialDirection::Explicit(v) => Vector::from_column_slice(v),
            InitialDirection::Named(_) => seeded_default_direction(d, self.seed),
        };
        GadState::new(Vector::from_column_slice(&self.start), v)
    }

    /// Flat `key = value` text that parses back to this configuration.
    pub fn to_config_text(&self) -> String {
        let fmt_vec = |v: &[f64]| {
            let items: Vec<String> = v.iter().map(|c| format!("{c:?}")).collect();
            format!("[{}]", items.join(", "))
        };
        let v0 = match &self.v0 {
            InitialDirection::Explicit(v) => fmt_vec(v),
            InitialDirection::Named(s) => format!("{s:?}"),
        };
        let lines = [
            format!("problem = {:?}", self.problem),
            format!("mode = \"{}\"", self.mode),
            format!("start = {}", fmt_vec(&self.start)),
            format!("v0 = {v0}"),
            format!("dt = {:?}", self.dt),
            format!("tol = {:?}", self.tol),
            format!("t_max = {}", self.t_max),
            format!("noise_var = {:?}", self.noise_var),
            format!("sigma_sur = {:?}", self.sigma_sur),
            format!("N0 = {}", self.n0),
            format!("N_D = {}", self.n_d),
            format!("n_paths = {}", self.n_paths),
            format!("horizon_T = {:?}", self.horizon_t),
            format!("design_dt = {:?}", self.design_dt),
            format!("init_spread = {:?}", self.init_spread),
            format!("spsa.a = {:?}", self.spsa.a),
            format!("spsa.A = {:?}", self.spsa.big_a),
            format!("spsa.alpha = {:?}", self.spsa.alpha),
            format!("spsa.c = {:?}", self.spsa.c),
            format!("spsa.gamma = {:?}", self.spsa.gamma),
            format!("spsa.iters = {}", self.spsa.iters),
            format!("mle_budget = {}", self.mle_budget),
            format!("mle_refit_budget = {}", self.mle_refit_budget),
            format!("mle_starts = {}", self.mle_starts),
            format!("max_updates = {}", self.max_updates),
            format!("fd_min_step = {:?}", self.fd_min_step),
            format!("seed = {}", self.seed),
            format!("output_dir = {:?}", self.output_dir.display().to_string()),
        ];
        lines.join("\n") + "\n"
    }
}

/// Command-line values that replace config keys.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub output_dir: Option<PathBuf>,
    pub mode: Option<Mode>,
}

fn flatten(prefix: &str, v: &toml::Value, out: &mut BTreeMap<String, toml::Value>) {
    match v {
        toml::Value::Table(t) => {
            for (k, v) in t {
                let key = if prefix.is_empty() {
                    k.clone()
                } else {
                    format!("{prefix}.{k}")
                };
                flatten(&key, v, out);
            }
        }
        other => {
            out.insert(prefix.to_string(), other.clone());
        }
    }
}

struct Reader<'a> {
    flat: &'a BTreeMap<String, toml::Value>,
    errs: &'a mut Vec<String>,
}

impl Reader<'_> {
    fn float(&mut self, key: &str) -> Option<f64> {
        match self.flat.get(key)? {
            toml::Value::Float(f) => Some(*f),
            toml::Value::Integer(i) => Some(*i as f64),
            other => {
                self.errs.push(format!("{key}: expected a number, got {other}"));
                None
            }
        }
    }

    fn count(&mut self, key: &str) -> Option<usize> {
        match self.flat.get(key)? {
            toml::Value::Integer(i) if *i >= 0 => Some(*i as usize),
            other => {
                self.errs
                    .push(format!("{key}: expected a nonnegative integer, got {other}"));
                None
            }
        }
    }

    fn string(&mut self, key: &str) -> Option<String> {
        match self.flat.get(key)? {
            toml::Value::String(s) => Some(s.clone()),
            other => {
                self.errs.push(format!("{key}: expected a string, got {other}"));
                None
            }
        }
    }

    fn floats(&mut self, key: &str) -> Option<Vec<f64>> {
        let bad = |errs: &mut Vec<String>, other: &toml::Value| {
            errs.push(format!("{key}: expected an array of numbers, got {other}"));
        };
        match self.flat.get(key)? {
            toml::Value::Array(items) => {
                let mut out = Vec::with_capacity(items.len());
                for it in items {
                    match it {
                        toml::Value::Float(f) => out.push(*f),
                        toml::Value::Integer(i) => out.push(*i as f64),
                        other => {
                            bad(self.errs, other);
                            return None;
                        }
                    }
                }
                Some(out)
            }
            other => {
                bad(self.errs, other);
                None
            }
        }
    }
}

/// Where a run's files went and what it found.
#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub dir: PathBuf,
    pub result: GadResult,
    pub report: Value,
}

fn fresh_run_dir(cfg: &ExperimentConfig) -> Result<PathBuf> {
    fs::create_dir_all(&cfg.output_dir)?;
    let stamp = chrono::Local::now().format("%Y%m%dT%H%M%S%.6f");
    let base = format!("{}-{}-seed{}-{stamp}", cfg.problem, cfg.mode, cfg.seed);
    for k in 0.. {
        let name = if k == 0 {
            base.clone()
        } else {
            format!("{base}-{k}")
        };
        let dir = cfg.output_dir.join(name);
        match fs::create_dir(&dir) {
            Ok(()) => return Ok(dir),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(e.into()),
        }
    }
    unreachable!()
}

fn csv_error(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

/// Writes `step, x_1.., v_1..` rows.
pub fn write_trajectory(path: &Path, result: &GadResult) -> Result<()> {
    let d = result.x_sp.len();
    let mut w = csv::Writer::from_path(path).map_err(csv_error)?;
    let mut header = vec!["step".to_string()];
    header.extend((0..d).map(|i| format!("x{i}")));
    header.extend((0..d).map(|i| format!("v{i}")));
    w.write_record(&header).map_err(csv_error)?;
    for s in &result.trajectory {
        let mut row = vec![s.step.to_string()];
        row.extend(s.x.iter().map(|c| format!("{c:?}")));
        row.extend(s.v.iter().map(|c| format!("{c:?}")));
        w.write_record(&row).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `update, p_1.., y_1..` rows.
pub fn write_designs(path: &Path, result: &GadResult, dim: usize, label_dim: usize) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_error)?;
    let mut header = vec!["update".to_string()];
    header.extend((0..dim).map(|i| format!("p{i}")));
    header.extend((0..label_dim).map(|i| format!("y{i}")));
    w.write_record(&header).map_err(csv_error)?;
    for rec in &result.designs {
        let mut row = vec![rec.update.to_string()];
        row.extend(rec.point.iter().map(|c| format!("{c:?}")));
        row.extend(rec.label.iter().map(|c| format!("{c:?}")));
        w.write_record(&row).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

/// Runs the configured method and writes `trajectory.csv`, `designs.csv`
/// (surrogate mode) and `report.json` into a new subdirectory of
/// `output_dir`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunOutcome> {
    let errs = cfg.range_errors();
    if !errs.is_empty() {
        return Err(Error::Config(errs));
    }
    let problem = Problem::by_name(&cfg.problem)
        .ok_or_else(|| Error::Config(vec![format!("problem: unknown {:?}", cfg.problem)]))?;
    let start = cfg.start_state()?;
    let dir = fresh_run_dir(cfg)?;

    let clock = Instant::now();
    let result = match cfg.mode {
        Mode::Reference if cfg.noise_var > 0.0 => {
            let mut src =
                NoisyFiniteDifference::new(&problem, cfg.noise_var, cfg.fd_min_step, cfg.seed)?;
            run_reference_gad(&mut src, &start, &cfg.gad())
        }
        Mode::Reference => run_reference_gad(&mut ExactDerivatives(&problem), &start, &cfg.gad()),
        Mode::Agpr => run_agpr_gad(&problem, &start, &cfg.gad(), &cfg.active_learning(), cfg.seed),
    };
    let wall = clock.elapsed().as_secs_f64();
    let result = match result {
        Ok(r) => r,
        Err(Error::Divergence { state, trajectory }) => {
            log::warn!("dynamics diverged after step {}", state.step);
            let x_sp = state.x.clone();
            let mut trajectory = trajectory;
            if trajectory.last() != Some(&*state) {
                trajectory.push(*state);
            }
            GadResult {
                cost: trajectory.len() as u64 - 1,
                x_sp,
                trajectory,
                converged: false,
                updates: 0,
                designs: Vec::new(),
                final_params: None,
            }
        }
        Err(e) => return Err(e),
    };

    write_trajectory(&dir.join("trajectory.csv"), &result)?;
    if cfg.mode == Mode::Agpr {
        let label_dim = match problem.kind() {
            crate::gpr::ObservationKind::Energy => 1,
            crate::gpr::ObservationKind::Force => problem.dim(),
        };
        write_designs(&dir.join("designs.csv"), &result, problem.dim(), label_dim)?;
    }
    let report = json!({
        "problem": cfg.problem,
        "method": cfg.mode.label(),
        "mode": cfg.mode,
        "start": cfg.start,
        "x_sp": result.x_sp.as_slice(),
        "converged": result.converged,
        "cost": result.cost,
        "true_evaluations": problem.eval_count(),
        "updates": result.updates,
        "steps": result.trajectory.len() - 1,
        "wall_time_s": wall,
        "seed": cfg.seed,
        "final_params": result.final_params.map(|p| json!({
            "eta": p.eta(),
            "length": p.length(),
            "noise_var": p.noise_var(),
        })),
        "config": cfg,
        "config_text": cfg.to_config_text(),
    });
    fs::write(
        dir.join("report.json"),
        serde_json::to_string_pretty(&report)? + "\n",
    )?;
    Ok(RunOutcome {
        dir,
        result,
        report,
    })
}

/// One parsed table row.
#[derive(Clone, Debug, PartialEq)]
pub struct TableRow {
    pub problem: String,
    pub start: Vec<f64>,
    pub method: String,
    pub x_sp: Vec<f64>,
    pub cost: u64,
}

#[derive(Clone, Debug, Default)]
pub struct TableSummary {
    pub rows: Vec<TableRow>,
    /// `(report path, reason)` for every skipped report.
    pub skipped: Vec<(PathBuf, String)>,
}

fn parse_report(path: &Path) -> std::result::Result<TableRow, String> {
    let text = fs::read_to_string(path).map_err(|e| e.to_string())?;
    let v: Value = serde_json::from_str(&text).map_err(|e| e.to_string())?;
    let point = |key: &str| -> std::result::Result<Vec<f64>, String> {
        v.get(key)
            .and_then(Value::as_array)
            .and_then(|a| a.iter().map(Value::as_f64).collect::<Option<Vec<f64>>>())
            .ok_or_else(|| format!("missing or malformed {key}"))
    };
    let text_field = |key: &str| -> std::result::Result<String, String> {
        v.get(key)
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| format!("missing or malformed {key}"))
    };
    Ok(TableRow {
        problem: text_field("problem")?,
        start: point("start")?,
        method: text_field("method")?,
        x_sp: point("x_sp")?,
        cost: v
            .get("cost")
            .and_then(Value::as_u64)
            .ok_or("missing or malformed cost")?,
    })
}

fn fmt_point(p: &[f64]) -> String {
    let items: Vec<String> = p.iter().map(|c| format!("{c:.2}")).collect();
    format!("({})", items.join(", "))
}

/// Builds the summary table from report files. Rows are grouped by problem
/// in order of first appearance and keep their input order within a group.
pub fn collect_table(reports: &[PathBuf]) -> TableSummary {
    let mut summary = TableSummary::default();
    let mut groups: Vec<(String, Vec<TableRow>)> = Vec::new();
    for path in reports {
        match parse_report(path) {
            Ok(row) => match groups.iter_mut().find(|(p, _)| *p == row.problem) {
                Some((_, rows)) => rows.push(row),
                None => groups.push((row.problem.clone(), vec![row])),
            },
            Err(reason) => summary.skipped.push((path.clone(), reason)),
        }
    }
    summary.rows = groups.into_iter().flat_map(|(_, rows)| rows).collect();
    summary
}

/// Writes the table as CSV (`problem,start,method,x_sp,cost`) to `out`;
/// skipped reports are listed in `#` comment lines after the rows.
pub fn emit_table(reports: &[PathBuf], out: &Path) -> Result<TableSummary> {
    let summary = collect_table(reports);
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["problem", "start", "method", "x_sp", "cost"])
        .map_err(csv_error)?;
    for r in &summary.rows {
        w.write_record([
            r.problem.clone(),
            fmt_point(&r.start),
            r.method.clone(),
            fmt_point(&r.x_sp),
            r.cost.to_string(),
        ])
        .map_err(csv_error)?;
    }
    let mut bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    for (path, reason) in &summary.skipped {
        bytes.extend(format!("# skipped {}: {reason}\n", path.display()).into_bytes());
    }
    fs::write(out, bytes)?;
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_gives_defaults() {
        let cfg = ExperimentConfig::parse("").unwrap();
        assert_eq!(cfg, {
            let mut d = ExperimentConfig::defaults("example1", Mode::Agpr, 0.0);
            d.spsa.seed = d.seed;
            d
        });
    }

    #[test]
    fn every_unknown_key_is_listed() {
        let err = ExperimentConfig::parse("foo = 1\nbar = 2\nspsa.zzz = 3\ndt = 0.1\n").unwrap_err();
        let Error::Config(msgs) = err else {
            panic!("expected config error")
        };
        let joined = msgs.join("\n");
        for k in ["foo", "bar", "spsa.zzz"] {
            assert!(joined.contains(k), "{joined}");
        }
    }

    #[test]
    fn threshold_interpolates_the_listed_pairs() {
        assert!((example2_threshold(0.0) - 0.005).abs() < 1e-15);
        assert!((example2_threshold(0.05) - 0.007).abs() < 1e-15);
        assert!((example2_threshold(0.1) - 0.010).abs() < 1e-15);
    }

    #[test]
    fn config_text_round_trips() {
        let text = "problem = \"example2\"\nmode = \"reference\"\nnoise_var = 0.05\nv0 = [0.0, 1.0]\nseed = 9\nspsa.iters = 7\n";
        let cfg = ExperimentConfig::parse(text).unwrap();
        let again = ExperimentConfig::parse(&cfg.to_config_text()).unwrap();
        assert_eq!(cfg, again);
        assert_eq!(cfg.spsa.iters, 7);
        assert_eq!(cfg.v0, InitialDirection::Explicit(vec![0.0, 1.0]));
    }
}
