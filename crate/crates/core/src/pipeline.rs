//! Subcommand configurations and the runners behind the `mmm` binary.
//!
//! Each run writes its artifacts and a [`RunManifest`] into one output
//! directory. [`replay`] re-executes a manifest and compares output digests.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::budget::{
    conflation_cost, enumerate_allocations, loglog_model_optimum, optimize_no_carryover, optimize_per_draw,
    optimize_with_carryover, CarryoverWindow, ConflationCost, LogLogOptimum, Optimum, SpendGrid,
};
use crate::dataset::{fmt_num, load_dataset, save_dataset, sparse_channels_to_dummies};
use crate::dgp::{gen_dataset, gen_intro_with, gen_sigmoid_with, DgpSpec, IntroConfig, SigmoidConfig, SimDataset, SpendingSpec, SIGMOID_SEED};
use crate::error::{Error, Result};
use crate::evaluation::{
    any_major_summary, conflation_label, conflation_label_intervals, holdout_eval, megasim, rate_regression, DgpFamily,
    Factor, HoldoutResult, LabelMode, MegasimConfig, SimulationSetting,
};
use crate::io::{self, FileDigest, ModelDocument, PlotSpec, RunManifest, StageStatus, Table};
use crate::models::{fit, ComponentGrid, ComponentKind, FittedModel, ModelSpec};
use crate::rng::derive_seed;
use crate::separation::{median_separation, run_ensemble, EnvSpec, Policy, SeparationConfig};
use crate::theory;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", deny_unknown_fields)]
pub enum SimSource {
    Dgp {
        dgp: DgpSpec,
        spending: SpendingSpec,
    },
    /// One cell of the factorial grid.
    Setting {
        setting: SimulationSetting,
        #[serde(default = "default_periods")]
        periods: usize,
    },
    Intro {
        #[serde(default)]
        config: IntroConfig,
    },
    Sigmoid {
        #[serde(default)]
        config: SigmoidConfig,
    },
}

fn default_periods() -> usize {
    100
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    /// Defaults to the shipped seed for the sigmoid source and 0 otherwise.
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default = "default_source")]
    pub source: SimSource,
}

fn default_source() -> SimSource {
    SimSource::Sigmoid { config: SigmoidConfig::default() }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitConfig {
    pub data: PathBuf,
    #[serde(default = "nonlinear")]
    pub model: ModelSpec,
    #[serde(default)]
    pub seed: u64,
    /// Channels with spend in fewer than this share of periods become promotion dummies.
    #[serde(default)]
    pub sparse_dummy_threshold: Option<f64>,
    /// Grid size for component curves.
    #[serde(default = "default_points")]
    pub grid_points: usize,
}

fn nonlinear() -> ModelSpec {
    ModelSpec::nonlinear()
}

fn time_varying() -> ModelSpec {
    ModelSpec::time_varying()
}

fn default_points() -> usize {
    50
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluateConfig {
    pub data: PathBuf,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_holdout")]
    pub holdout: usize,
    /// The model treated as true when labeling.
    #[serde(default = "nonlinear")]
    pub reference: ModelSpec,
    #[serde(default = "time_varying")]
    pub competitor: ModelSpec,
    /// Saved models (reference first) whose specifications replace the two above.
    #[serde(default)]
    pub models: Vec<PathBuf>,
    #[serde(default)]
    pub label: LabelMode,
}

fn default_holdout() -> usize {
    10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", deny_unknown_fields)]
pub enum GridSpec {
    /// All 729 settings of a family.
    Full { family: DgpFamily },
    /// Every level combination of the listed factors, others at medium.
    Factors { family: DgpFamily, factors: Vec<Factor> },
    Settings { settings: Vec<SimulationSetting> },
}

impl GridSpec {
    pub fn settings(&self) -> Result<Vec<SimulationSetting>> {
        match self {
            GridSpec::Full { family } => Ok(SimulationSetting::full_grid(*family)),
            GridSpec::Factors { family, factors } => {
                let allowed = family.factors();
                if let Some(f) = factors.iter().find(|f| !allowed.contains(f)) {
                    return Err(Error::Config(format!("factor '{}' does not apply to {}", f.name(), family.label())));
                }
                let mut out = vec![SimulationSetting::medium(*family)];
                for f in factors {
                    out = out.into_iter().flat_map(|s| f.levels().map(|v| s.clone().with(*f, v))).collect();
                }
                Ok(out)
            }
            GridSpec::Settings { settings } => Ok(settings.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MegasimRunConfig {
    #[serde(default)]
    pub seed: u64,
    pub grid: GridSpec,
    #[serde(default)]
    pub simulation: MegasimConfig,
}

/// Candidate levels per channel; `points` levels over the training stock range when absent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridChoice {
    #[serde(default)]
    pub levels: Option<Vec<Vec<f64>>>,
    #[serde(default = "default_points")]
    pub points: usize,
}

impl Default for GridChoice {
    fn default() -> Self {
        GridChoice { levels: None, points: default_points() }
    }
}

impl GridChoice {
    fn build(&self, model: &FittedModel) -> Result<SpendGrid> {
        match &self.levels {
            Some(l) => SpendGrid::explicit(l.clone()),
            None => SpendGrid::training_range(model, self.points),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", deny_unknown_fields)]
pub enum OptimizeMode {
    /// One period, no carryover. `period` defaults to the one after the data.
    OnePeriod {
        #[serde(default)]
        period: Option<i64>,
        #[serde(default)]
        grid: GridChoice,
        /// Also report the optimum under each hyperparameter draw.
        #[serde(default)]
        per_draw: bool,
    },
    /// Closed form for single-channel log-log time-varying models.
    Loglog {
        #[serde(default)]
        period: Option<i64>,
    },
    /// Constant spend over `start..=end` with carryover into later periods.
    Window {
        start: i64,
        end: i64,
        #[serde(default)]
        grid: GridChoice,
        #[serde(default = "yes")]
        stock_filter: bool,
    },
    /// Share allocations of a fixed total over a window; with two models, the conflation cost.
    Allocation {
        total: f64,
        step: f64,
        start: i64,
        end: i64,
        #[serde(default = "yes")]
        range_filter: bool,
    },
}

fn yes() -> bool {
    true
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizeConfig {
    pub models: Vec<PathBuf>,
    /// Revenue per outcome unit.
    #[serde(default = "one")]
    pub price: f64,
    pub mode: OptimizeMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeparateConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_runs")]
    pub runs: usize,
    #[serde(default = "EnvSpec::nonlinear_log")]
    pub env: EnvSpec,
    #[serde(default = "default_test")]
    pub test: SeparationConfig,
}

fn default_runs() -> usize {
    1
}

fn default_test() -> SeparationConfig {
    SeparationConfig::new(Policy::Maximal, 5)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TheoryConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_rw_seeds")]
    pub rw_seeds: usize,
}

fn default_rw_seeds() -> usize {
    2000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlotConfig {
    pub input: PathBuf,
    #[serde(default)]
    pub x: Option<String>,
    #[serde(default)]
    pub series: Option<Vec<String>>,
    #[serde(default)]
    pub points: Vec<String>,
    #[serde(default)]
    pub title: Option<String>,
}

/// A subcommand with its resolved configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "command", content = "config")]
pub enum Job {
    Simulate(SimulateConfig),
    Fit(FitConfig),
    Evaluate(EvaluateConfig),
    Megasim(MegasimRunConfig),
    Optimize(OptimizeConfig),
    Separate(SeparateConfig),
    Theory(TheoryConfig),
    Plot(PlotConfig),
}

pub const COMMANDS: [&str; 8] = ["simulate", "fit", "evaluate", "megasim", "optimize", "separate", "theory", "plot"];

fn absolutize(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

/// Sets `key` (dotted for nesting) in `table`.
pub fn set_key(table: &mut toml::Table, key: &str, value: toml::Value) -> Result<()> {
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().filter(|k| !k.is_empty()).ok_or_else(|| Error::Config(format!("empty key '{key}'")))?;
    let mut t = table;
    for p in parts {
        let entry = t.entry(p.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        t = entry.as_table_mut().ok_or_else(|| Error::Config(format!("'{p}' in '{key}' is not a table")))?;
    }
    t.insert(last.to_string(), value);
    Ok(())
}

/// Parses `key=value`; the value is read as TOML, falling back to a bare string.
pub fn parse_override(s: &str) -> Result<(String, toml::Value)> {
    let (k, v) = s.split_once('=').ok_or_else(|| Error::Config(format!("override '{s}' is not key=value")))?;
    let v = v.trim();
    let value = match toml::from_str::<toml::Table>(&format!("v = {v}")) {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(v.to_string()),
    };
    Ok((k.trim().to_string(), value))
}

impl Job {
    /// Builds a job from an optional config file plus overrides. Relative paths
    /// in the result are resolved against the config file's directory, or `cwd`.
    pub fn build(command: &str, config: Option<&Path>, overrides: &[(String, toml::Value)], cwd: &Path) -> Result<Job> {
        let (mut table, base) = match config {
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
                let t: toml::Table = io::parse_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
                let dir = p.parent().filter(|d| !d.as_os_str().is_empty()).map_or_else(|| cwd.to_path_buf(), |d| cwd.join(d));
                (t, dir)
            }
            None => (toml::Table::new(), cwd.to_path_buf()),
        };
        for (k, v) in overrides {
            set_key(&mut table, k, v.clone())?;
        }
        let doc = serde_json::json!({ "command": command, "config": table });
        if !COMMANDS.contains(&command) {
            return Err(Error::Config(format!("unknown command '{command}'")));
        }
        let mut job: Job = serde_json::from_value(doc).map_err(|e| {
            let where_ = config.map(|p| format!("{}: ", p.display())).unwrap_or_default();
            Error::Config(format!("{where_}{e}"))
        })?;
        job.resolve(&base);
        job.validate()?;
        Ok(job)
    }

    pub fn command(&self) -> &'static str {
        match self {
            Job::Simulate(_) => "simulate",
            Job::Fit(_) => "fit",
            Job::Evaluate(_) => "evaluate",
            Job::Megasim(_) => "megasim",
            Job::Optimize(_) => "optimize",
            Job::Separate(_) => "separate",
            Job::Theory(_) => "theory",
            Job::Plot(_) => "plot",
        }
    }

    /// Fills seed defaults and makes input paths absolute.
    pub fn resolve(&mut self, base: &Path) {
        match self {
            Job::Simulate(c) => {
                if c.seed.is_none() {
                    c.seed = Some(if matches!(c.source, SimSource::Sigmoid { .. }) { SIGMOID_SEED } else { 0 });
                }
            }
            Job::Fit(c) => absolutize(base, &mut c.data),
            Job::Evaluate(c) => {
                absolutize(base, &mut c.data);
                c.models.iter_mut().for_each(|m| absolutize(base, m));
            }
            Job::Optimize(c) => c.models.iter_mut().for_each(|m| absolutize(base, m)),
            Job::Plot(c) => absolutize(base, &mut c.input),
            Job::Megasim(_) | Job::Separate(_) | Job::Theory(_) => {}
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            Job::Evaluate(c) if !c.models.is_empty() && c.models.len() != 2 => {
                Err(Error::Config(format!("evaluate takes exactly 2 saved models, got {}", c.models.len())))
            }
            Job::Optimize(c) if c.models.is_empty() || c.models.len() > 2 => {
                Err(Error::Config(format!("optimize takes 1 or 2 models, got {}", c.models.len())))
            }
            Job::Separate(c) if c.runs == 0 => Err(Error::Config("runs must be at least 1".into())),
            _ => Ok(()),
        }
    }

    pub fn seed(&self) -> u64 {
        match self {
            Job::Simulate(c) => c.seed.unwrap_or(0),
            Job::Fit(c) => c.seed,
            Job::Evaluate(c) => c.seed,
            Job::Megasim(c) => c.seed,
            Job::Separate(c) => c.seed,
            Job::Theory(c) => c.seed,
            Job::Optimize(_) | Job::Plot(_) => 0,
        }
    }

    pub fn inputs(&self) -> Vec<PathBuf> {
        match self {
            Job::Fit(c) => vec![c.data.clone()],
            Job::Evaluate(c) => std::iter::once(c.data.clone()).chain(c.models.iter().cloned()).collect(),
            Job::Optimize(c) => c.models.clone(),
            Job::Plot(c) => vec![c.input.clone()],
            _ => vec![],
        }
    }

    /// The configuration as a TOML document, defaults included.
    pub fn config_toml(&self) -> Result<String> {
        let v = serde_json::to_value(self)?;
        io::to_toml(&v["config"])
    }

    fn config_json(&self) -> Result<serde_json::Value> {
        Ok(serde_json::to_value(self)?["config"].take())
    }

    fn run(&self, out: &mut Output) -> Result<()> {
        match self {
            Job::Simulate(c) => run_simulate(c, out),
            Job::Fit(c) => run_fit(c, out),
            Job::Evaluate(c) => run_evaluate(c, out),
            Job::Megasim(c) => run_megasim(c, out),
            Job::Optimize(c) => run_optimize(c, out),
            Job::Separate(c) => run_separate(c, out),
            Job::Theory(c) => run_theory(c, out),
            Job::Plot(c) => run_plot(c, out),
        }
    }
}

/// Collects artifacts written by one run.
pub struct Output {
    pub dir: PathBuf,
    files: Vec<String>,
    stages: Vec<StageStatus>,
    /// Short human-readable results for the terminal.
    pub summary: Vec<String>,
}

impl Output {
    fn new(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(Output { dir: dir.to_path_buf(), files: vec![], stages: vec![], summary: vec![] })
    }

    fn register(&mut self, name: &str) -> PathBuf {
        if !self.files.iter().any(|f| f == name) {
            self.files.push(name.to_string());
        }
        self.dir.join(name)
    }

    fn table(&mut self, name: &str, t: &Table) -> Result<()> {
        t.write(self.register(name))
    }

    fn json<T: Serialize>(&mut self, name: &str, v: &T) -> Result<()> {
        io::write_json(self.register(name), v)
    }

    fn text(&mut self, name: &str, s: &str) -> Result<()> {
        fs::write(self.register(name), s)?;
        Ok(())
    }

    fn stage(&mut self, stage: &str, ok: bool, message: Option<String>) {
        self.stages.push(StageStatus { stage: stage.into(), ok, message });
    }

    fn say(&mut self, line: String) {
        self.summary.push(line);
    }
}

/// Result of [`execute`]: the manifest plus the terminal summary.
#[derive(Debug)]
pub struct Executed {
    pub manifest: RunManifest,
    pub manifest_path: PathBuf,
    pub summary: Vec<String>,
}

/// Runs `job` into `out_dir` and writes its manifest. The manifest is written
/// even when the run fails, with the failing stage recorded.
pub fn execute(job: &Job, out_dir: &Path) -> Result<Executed> {
    let start = Instant::now();
    let inputs = job.inputs().iter().map(|p| FileDigest::of(p, None)).collect::<Result<Vec<_>>>()?;
    let mut out = Output::new(out_dir)?;
    out.text("resolved-config.toml", &job.config_toml()?)?;
    let result = job.run(&mut out);
    if let Err(e) = &result {
        out.stage(job.command(), false, Some(e.to_string()));
    } else if !out.stages.iter().any(|s| s.stage == job.command()) {
        out.stage(job.command(), true, None);
    }
    let outputs = out.files.iter().map(|f| FileDigest::of(&out.dir.join(f), Some(&out.dir))).collect::<Result<Vec<_>>>()?;
    let manifest = RunManifest {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        command: job.command().to_string(),
        config: job.config_json()?,
        seed: job.seed(),
        inputs,
        outputs,
        elapsed_ms: start.elapsed().as_millis(),
        stages: out.stages.clone(),
    };
    let manifest_path = manifest.save(out_dir)?;
    result?;
    Ok(Executed { manifest, manifest_path, summary: out.summary })
}

/// Re-runs a manifest into `out_dir` and checks that every output digest matches.
pub fn replay(manifest_path: &Path, out_dir: &Path) -> Result<Executed> {
    let original = RunManifest::load(manifest_path)?;
    let job: Job = serde_json::from_value(serde_json::json!({ "command": original.command, "config": original.config }))
        .map_err(|e| Error::Schema { location: manifest_path.display().to_string(), message: e.to_string() })?;
    for d in &original.inputs {
        let now = io::sha256_file(&d.path).map_err(|e| Error::Precondition(format!("input {}: {e}", d.path)))?;
        if now != d.sha256 {
            return Err(Error::Precondition(format!("input {} changed since the original run", d.path)));
        }
    }
    let mut done = execute(&job, out_dir)?;
    let mismatches = original.output_mismatches(&done.manifest);
    if !mismatches.is_empty() {
        return Err(Error::Verification(format!("replay differs: {}", mismatches.join("; "))));
    }
    done.summary.push(format!("replay matches all {} output digests", original.outputs.len()));
    Ok(done)
}

fn sim_from(c: &SimulateConfig) -> Result<SimDataset> {
    let seed = c.seed.unwrap_or(0);
    match &c.source {
        SimSource::Dgp { dgp, spending } => gen_dataset(dgp, spending, seed),
        SimSource::Setting { setting, periods } => {
            setting.validate()?;
            gen_dataset(&setting.dgp(), &setting.spending(*periods), seed)
        }
        SimSource::Intro { config } => gen_intro_with(config, seed),
        SimSource::Sigmoid { config } => gen_sigmoid_with(config, seed),
    }
}

#[derive(Serialize)]
struct SimulationReport<'a> {
    seed: u64,
    periods: usize,
    sigma: f64,
    resolved_scale: Option<f64>,
    resolved_against: Option<&'a str>,
}

fn run_simulate(c: &SimulateConfig, out: &mut Output) -> Result<()> {
    let sim = sim_from(c)?;
    save_dataset(&sim.to_dataset(), out.register("data.csv"))?;
    let mut header = vec!["t", "spend", "stock", "deterministic", "noise", "y"];
    if sim.truth.function_values.is_some() {
        header.push("f");
    }
    if sim.truth.coefficients.is_some() {
        header.push("beta");
    }
    let mut t = Table::new(header);
    for i in 0..sim.len() {
        let mut row = vec![sim.periods[i].to_string()];
        let mut nums = vec![sim.observed_spend()[i], sim.spend[i], sim.truth.deterministic[i], sim.truth.noise[i], sim.y[i]];
        nums.extend(sim.truth.function_values.as_ref().map(|v| v[i]));
        nums.extend(sim.truth.coefficients.as_ref().map(|v| v[i]));
        row.extend(nums.into_iter().map(fmt_num));
        t.push(row);
    }
    out.table("truth.csv", &t)?;
    out.json(
        "simulation.json",
        &SimulationReport {
            seed: sim.seed,
            periods: sim.len(),
            sigma: sim.truth.sigma,
            resolved_scale: sim.truth.resolved_scale,
            resolved_against: sim.truth.resolved_against.as_deref(),
        },
    )?;
    out.say(format!("simulated {} periods (seed {})", sim.len(), sim.seed));
    Ok(())
}

#[derive(Serialize)]
struct FitReport {
    model: String,
    kernel: String,
    periods: usize,
    channels: Vec<String>,
    dummies: Vec<String>,
    converted_to_dummies: Vec<String>,
    r_squared: f64,
    noise_sd: Vec<f64>,
    draws: usize,
    acceptance_rate: Option<f64>,
    stock_range: Vec<(f64, f64)>,
}

fn run_fit(c: &FitConfig, out: &mut Output) -> Result<()> {
    let mut data = load_dataset(&c.data)?;
    let mut spec = c.model.clone();
    let mut converted = vec![];
    if let Some(th) = c.sparse_dummy_threshold {
        if !(0.0..=1.0).contains(&th) {
            return Err(Error::Config(format!("sparse_dummy_threshold must lie in [0, 1], got {th}")));
        }
        converted = sparse_channels_to_dummies(&mut data, th);
        spec.dummies.extend(converted.iter().map(|n| format!("promo_{n}")));
    }
    let m = fit(&data, &spec, c.seed)?;
    io::save_model(&m, out.register("model.json"))?;

    let fitted = m.fitted();
    let mut t = Table::new(["t", "y", "fitted"]);
    for ((p, y), f) in m.training_periods().iter().zip(m.training_targets()).zip(&fitted) {
        t.push(vec![p.to_string(), fmt_num(y), fmt_num(*f)]);
    }
    out.table("fitted.csv", &t)?;

    let grid = ComponentGrid {
        spend: Some(m.stock_range().iter().map(|(lo, hi)| SpendGrid::linspace(*lo, *hi, c.grid_points.max(2))).collect()),
        periods: None,
        rebase: false,
    };
    match m.components(&grid) {
        Ok(curves) => {
            for curve in curves {
                let (axis, name) = match curve.kind {
                    ComponentKind::Response => ("spend", format!("f_{}", curve.channel.clone().unwrap_or_default())),
                    ComponentKind::Coefficient => ("t", format!("beta_{}", curve.channel.clone().unwrap_or_default())),
                    ComponentKind::Intercept => ("t", "intercept".to_string()),
                };
                let mut t = Table::new([axis.to_string(), name.clone(), format!("{name}_lower"), format!("{name}_upper")]);
                for i in 0..curve.grid.len() {
                    t.push_nums(&[curve.grid[i], curve.mean[i], curve.lower[i], curve.upper[i]]);
                }
                out.table(&format!("component_{name}.csv"), &t)?;
            }
        }
        Err(e) => out.stage("components", false, Some(e.to_string())),
    }

    let report = FitReport {
        model: m.kind().label().to_string(),
        kernel: m.kernel_description(),
        periods: m.training_periods().len(),
        channels: m.data.channels.iter().map(|c| c.name.clone()).collect(),
        dummies: m.spec.dummies.clone(),
        converted_to_dummies: converted,
        r_squared: m.r_squared(),
        noise_sd: m.sigmas(),
        draws: m.hyper_draws().map_or(1, |d| d.draws.len()),
        acceptance_rate: m.hyper_draws().and_then(|d| d.acceptance_rate),
        stock_range: m.stock_range().to_vec(),
    };
    out.json("fit.json", &report)?;
    out.say(format!("{} model: R² {:.4}, kernel {}", report.model, report.r_squared, report.kernel));
    Ok(())
}

#[derive(Serialize)]
struct EvaluationReport {
    holdout: usize,
    reference: HoldoutResult,
    competitor: HoldoutResult,
    label: LabelMode,
    /// The competitor is conflated with the reference.
    conflated: bool,
}

fn load_spec(path: &Path) -> Result<ModelSpec> {
    let doc: ModelDocument = io::parse_versioned(&fs::read_to_string(path).map_err(Error::file(path))?, &path.display().to_string())?;
    Ok(doc.spec)
}

fn run_evaluate(c: &EvaluateConfig, out: &mut Output) -> Result<()> {
    let data = load_dataset(&c.data)?;
    let (ref_spec, comp_spec) = if c.models.is_empty() {
        (c.reference.clone(), c.competitor.clone())
    } else {
        (load_spec(&c.models[0])?, load_spec(&c.models[1])?)
    };
    let (r, k) = holdout_eval(&data, (&ref_spec, &comp_spec), c.holdout, c.seed)?;
    let conflated = match c.label {
        LabelMode::Threshold { delta } => conflation_label(r.mse, k.mse, delta),
        LabelMode::Intervals => match (r.interval, k.interval) {
            (Some(a), Some(b)) => conflation_label_intervals(a, b),
            _ => return Err(Error::Config("interval labels need Metropolis inference for both models".into())),
        },
    };
    let n = data.len();
    let mut t = Table::new(["t", "y", "reference", "competitor"]);
    for i in 0..c.holdout {
        let j = n - c.holdout + i;
        t.push(vec![data.periods[j].to_string(), fmt_num(data.y[j]), fmt_num(r.predictions[i]), fmt_num(k.predictions[i])]);
    }
    out.table("holdout.csv", &t)?;
    out.say(format!(
        "holdout RMSE: {} {:.4}, {} {:.4}; conflated: {conflated}",
        r.model, r.rmse, k.model, k.rmse
    ));
    out.json("evaluation.json", &EvaluationReport { holdout: c.holdout, reference: r, competitor: k, label: c.label, conflated })
}

#[derive(Serialize)]
struct MegasimSummary {
    settings: usize,
    replicates: usize,
    invalid_replicates: usize,
    share_any: f64,
    share_major: f64,
}

fn setting_cells(s: &SimulationSetting) -> Vec<String> {
    let mut v = vec![s.family.label().to_string()];
    v.extend(s.family.factors().iter().map(|f| fmt_num(s.value(*f))));
    v
}

fn run_megasim(c: &MegasimRunConfig, out: &mut Output) -> Result<()> {
    let grid = c.grid.settings()?;
    let family = grid.first().ok_or_else(|| Error::Config("the grid is empty".into()))?.family;
    let res = megasim(&grid, &c.simulation, c.seed)?;

    let mut rec = Table::new(["setting_id", "replicate", "seed", "true_mse", "competing_mse", "conflated", "error"]);
    for r in &res.records {
        rec.push(vec![
            r.setting_id.to_string(),
            r.replicate.to_string(),
            r.seed.to_string(),
            io::opt_num(r.true_mse),
            io::opt_num(r.competing_mse),
            r.conflated.map(|b| b.to_string()).unwrap_or_default(),
            r.error.clone().unwrap_or_default(),
        ]);
    }
    out.table("records.csv", &rec)?;

    let single_family = grid.iter().all(|s| s.family == family);
    let mut header = vec!["setting_id".to_string(), "family".to_string()];
    if single_family {
        header.extend(family.factors().iter().map(|f| f.name().to_string()));
    }
    header.extend(["valid", "invalid", "rate"].map(String::from));
    let mut rates = Table::new(header);
    for r in &res.rates {
        let mut row = vec![r.setting_id.to_string()];
        if single_family {
            row.extend(setting_cells(&r.setting));
        } else {
            row.push(r.setting.family.label().to_string());
        }
        row.extend([r.valid.to_string(), r.invalid.to_string(), io::opt_num(r.rate)]);
        rates.push(row);
    }
    out.table("rates.csv", &rates)?;

    match rate_regression(&res.rates) {
        Ok(reg) => {
            let mut t = Table::new(["term", "estimate", "std_error", "t", "p_value"]);
            for row in &reg.rows {
                t.push(vec![row.name.clone(), fmt_num(row.estimate), fmt_num(row.std_error), fmt_num(row.t), fmt_num(row.p)]);
            }
            out.table("regression.csv", &t)?;
            out.json("regression.json", &reg)?;
            out.stage("regression", true, None);
        }
        Err(e) => out.stage("regression", false, Some(format!("skipped: {e}"))),
    }
    let (any, major) = any_major_summary(&res.rates);
    let summary = MegasimSummary {
        settings: grid.len(),
        replicates: c.simulation.replicates,
        invalid_replicates: res.records.iter().filter(|r| r.conflated.is_none()).count(),
        share_any: any,
        share_major: major,
    };
    out.say(format!(
        "{} settings x {} replicates: any conflation in {:.1}% of settings, major in {:.1}%",
        summary.settings,
        summary.replicates,
        100.0 * any,
        100.0 * major
    ));
    out.json("summary.json", &summary)
}

#[derive(Serialize)]
struct ModelOptimum {
    model: String,
    path: String,
    spend: Vec<f64>,
    revenue: Option<f64>,
    profit: Option<f64>,
    filtered: Option<usize>,
    loglog: Option<LogLogOptimum>,
    per_draw: Option<Vec<Vec<f64>>>,
}

#[derive(Serialize)]
struct OptimizeReport {
    price: f64,
    results: Vec<ModelOptimum>,
    conflation_cost: Option<ConflationCostReport>,
}

#[derive(Serialize)]
struct ConflationCostReport {
    optimum_a: Vec<f64>,
    optimum_b: Vec<f64>,
    shares_a: Vec<f64>,
    shares_b: Vec<f64>,
    cost_if_a_true: f64,
    cost_if_b_true: f64,
}

fn surface_table(model: &FittedModel, opt: &Optimum) -> Table {
    let mut header: Vec<String> = model.data.channels.iter().map(|c| format!("x_{}", c.name)).collect();
    header.extend(["revenue", "profit"].map(String::from));
    let mut t = Table::new(header);
    for p in &opt.surface {
        let mut row = p.spend.clone();
        row.extend([p.revenue, p.profit]);
        t.push_nums(&row);
    }
    t
}

fn from_optimum(model: &FittedModel, path: &Path, opt: &Optimum) -> ModelOptimum {
    ModelOptimum {
        model: model.kind().label().to_string(),
        path: path.display().to_string(),
        spend: opt.spend.clone(),
        revenue: Some(opt.revenue),
        profit: Some(opt.profit),
        filtered: Some(opt.filtered),
        loglog: None,
        per_draw: None,
    }
}

fn run_optimize(c: &OptimizeConfig, out: &mut Output) -> Result<()> {
    let models = c.models.iter().map(io::load_model).collect::<Result<Vec<_>>>()?;
    let next = |m: &FittedModel| m.data.last_period() + 1;
    let mut results = Vec::new();
    let mut cost = None;
    match &c.mode {
        OptimizeMode::OnePeriod { period, grid, per_draw } => {
            for (i, (m, path)) in models.iter().zip(&c.models).enumerate() {
                let p = period.unwrap_or_else(|| next(m));
                let g = grid.build(m)?;
                let opt = optimize_no_carryover(m, p, &g, c.price)?;
                out.table(&format!("surface_{i}.csv"), &surface_table(m, &opt))?;
                let mut r = from_optimum(m, path, &opt);
                if *per_draw {
                    r.per_draw = Some(optimize_per_draw(m, p, &g, c.price)?);
                }
                results.push(r);
            }
        }
        OptimizeMode::Loglog { period } => {
            for (m, path) in models.iter().zip(&c.models) {
                let o = loglog_model_optimum(m, period.unwrap_or_else(|| next(m)), c.price)?;
                results.push(ModelOptimum {
                    model: m.kind().label().to_string(),
                    path: path.display().to_string(),
                    spend: vec![o.spend()],
                    revenue: None,
                    profit: None,
                    filtered: None,
                    loglog: Some(o),
                    per_draw: None,
                });
            }
        }
        OptimizeMode::Window { start, end, grid, stock_filter } => {
            for (i, (m, path)) in models.iter().zip(&c.models).enumerate() {
                let win = CarryoverWindow::for_model(m, *start, *end);
                let range = stock_filter.then(|| m.stock_range());
                let opt = optimize_with_carryover(m, &win, &grid.build(m)?, range, c.price)?;
                out.table(&format!("surface_{i}.csv"), &surface_table(m, &opt))?;
                results.push(from_optimum(m, path, &opt));
            }
        }
        OptimizeMode::Allocation { total, step, start, end, range_filter } => {
            let a = &models[0];
            let b = models.get(1).unwrap_or(a);
            let ranges: Vec<(f64, f64)> = a
                .data
                .channels
                .iter()
                .map(|ch| ch.values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(*v), hi.max(*v))))
                .collect();
            let allocs = enumerate_allocations(*total, a.data.n_channels(), *step, range_filter.then_some(ranges.as_slice()))?;
            if allocs.is_empty() {
                return Err(Error::Infeasible(format!("no allocation of {total} at step {step} lies within the historical ranges")));
            }
            let cc: ConflationCost =
                conflation_cost(a, b, &allocs, &CarryoverWindow::for_model(a, *start, *end), &CarryoverWindow::for_model(b, *start, *end))?;
            let mut header: Vec<String> = a.data.channels.iter().map(|ch| format!("share_{}", ch.name)).collect();
            header.extend(a.data.channels.iter().map(|ch| format!("x_{}", ch.name)));
            header.extend(["revenue_a", "revenue_b"].map(String::from));
            let mut t = Table::new(header);
            for (k, al) in allocs.iter().enumerate() {
                let mut row = al.shares.clone();
                row.extend(&al.spend);
                row.extend([cc.revenue_a[k], cc.revenue_b[k]]);
                t.push_nums(&row);
            }
            out.table("allocations.csv", &t)?;
            for (m, path, opt, rev) in [(a, &c.models[0], &cc.optimum_a, &cc.revenue_a), (b, c.models.get(1).unwrap_or(&c.models[0]), &cc.optimum_b, &cc.revenue_b)]
                .into_iter()
                .take(models.len())
            {
                let k = allocs.iter().position(|x| x == opt).expect("optimum is an allocation");
                results.push(ModelOptimum {
                    model: m.kind().label().to_string(),
                    path: path.display().to_string(),
                    spend: opt.spend.clone(),
                    revenue: Some(rev[k]),
                    profit: Some(rev[k] - opt.spend.iter().sum::<f64>()),
                    filtered: None,
                    loglog: None,
                    per_draw: None,
                });
            }
            if models.len() == 2 {
                cost = Some(ConflationCostReport {
                    optimum_a: cc.optimum_a.spend.clone(),
                    optimum_b: cc.optimum_b.spend.clone(),
                    shares_a: cc.optimum_a.shares.clone(),
                    shares_b: cc.optimum_b.shares.clone(),
                    cost_if_a_true: cc.cost_if_a_true,
                    cost_if_b_true: cc.cost_if_b_true,
                });
            }
        }
    }
    for r in &results {
        let spend: Vec<String> = r.spend.iter().map(|v| format!("{v:.2}")).collect();
        out.say(format!("{}: optimal spend [{}]", r.model, spend.join(", ")));
    }
    if let Some(cc) = &cost {
        out.say(format!("conflation cost: {:.2} if A is true, {:.2} if B is true", cc.cost_if_a_true, cc.cost_if_b_true));
    }
    out.json("optimize.json", &OptimizeReport { price: c.price, results, conflation_cost: cost })
}

#[derive(Serialize)]
struct RunSummary {
    seed: u64,
    separation_period: Option<usize>,
    winner: Option<String>,
    status: String,
}

#[derive(Serialize)]
struct SeparateReport {
    true_model: String,
    policy: Policy,
    test_periods: usize,
    runs: Vec<RunSummary>,
    correct: usize,
    median_separation: f64,
}

fn run_separate(c: &SeparateConfig, out: &mut Output) -> Result<()> {
    let seeds: Vec<u64> = (0..c.runs as u64).map(|i| derive_seed(c.seed, &[i])).collect();
    let results = run_ensemble(&c.env, &c.test, &seeds);
    let mut t = Table::new([
        "run", "test_period", "t", "spend", "pred_nl", "pred_tv", "y", "max_separation", "rmse_nl", "rmse_tv",
        "rmse_nl_lower", "rmse_nl_upper", "rmse_tv_lower", "rmse_tv_upper", "fired",
    ]);
    let mut trajs = Vec::new();
    let mut runs = Vec::new();
    for (i, (seed, r)) in seeds.iter().zip(results).enumerate() {
        let traj = r?;
        for row in &traj.rows {
            let mut cells = vec![i.to_string(), row.test_period.to_string(), row.period.to_string()];
            cells.extend(
                [row.spend, row.pred_nl, row.pred_tv, row.y, row.max_separation, row.rmse_nl, row.rmse_tv].map(fmt_num),
            );
            cells.extend([
                io::opt_num(row.interval_nl.map(|v| v.0)),
                io::opt_num(row.interval_nl.map(|v| v.1)),
                io::opt_num(row.interval_tv.map(|v| v.0)),
                io::opt_num(row.interval_tv.map(|v| v.1)),
            ]);
            cells.push(row.fired.to_string());
            t.push(cells);
        }
        runs.push(RunSummary {
            seed: *seed,
            separation_period: traj.separation_period,
            winner: traj.winner.clone(),
            status: match &traj.status {
                crate::separation::TrajectoryStatus::Complete => "complete".into(),
                crate::separation::TrajectoryStatus::Truncated(why) => format!("truncated: {why}"),
            },
        });
        trajs.push(traj);
    }
    out.table("trajectory.csv", &t)?;
    let truth = c.env.true_model();
    let correct = trajs.iter().filter(|tr| tr.separated_within(c.test.test_periods, truth)).count();
    let med = median_separation(&trajs, c.test.test_periods);
    out.say(format!("{correct}/{} runs separated in favour of the {truth} model; median separation period {med}", trajs.len()));
    out.json(
        "summary.json",
        &SeparateReport {
            true_model: truth.to_string(),
            policy: c.test.policy,
            test_periods: c.test.test_periods,
            runs,
            correct,
            median_separation: med,
        },
    )
}

fn run_theory(c: &TheoryConfig, out: &mut Output) -> Result<()> {
    let report = theory::run_suite(c.seed, c.rw_seeds)?;
    out.json("theory.json", &report)?;
    let text = report.to_text();
    out.text("theory.txt", &text)?;
    out.summary.extend(text.lines().map(String::from));
    let failed = report.checks.iter().filter(|c| !c.passed).count();
    if failed > 0 {
        return Err(Error::Verification(format!("{failed} theory check(s) failed")));
    }
    Ok(())
}

fn run_plot(c: &PlotConfig, out: &mut Output) -> Result<()> {
    let table = Table::read(&c.input)?;
    let spec = PlotSpec { x: c.x.clone(), series: c.series.clone(), points: c.points.clone(), title: c.title.clone() };
    let svg = io::svg_plot(&table, &spec)?;
    let stem = c.input.file_stem().and_then(|s| s.to_str()).unwrap_or("plot");
    let name = format!("{stem}.svg");
    out.text(&name, &svg)?;
    out.say(format!("wrote {}", out.dir.join(&name).display()));
    Ok(())
}
