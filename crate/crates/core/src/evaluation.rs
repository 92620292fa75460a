//! Holdout evaluation, conflation labels, the factorial conflation simulation
//! and the regression of conflation rates on factor levels.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::dgp::{gen_dataset, DgpKind, DgpSpec, SpendingSpec};
use crate::error::{Error, Result};
use crate::models::{fit, FittedModel, ModelSpec, Scenario};
use crate::rng::derive_seed;
use crate::stats::{regress, RegressionTable};
use crate::transforms::StockSpec;

pub fn mse(pred: &[f64], truth: &[f64]) -> f64 {
    pred.iter().zip(truth).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / truth.len() as f64
}

pub fn rmse(pred: &[f64], truth: &[f64]) -> f64 {
    mse(pred, truth).sqrt()
}

/// Holdout error of one model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HoldoutResult {
    pub model: String,
    pub mse: f64,
    pub rmse: f64,
    /// RMSE of each posterior hyperparameter draw's mean prediction.
    pub rmse_draws: Option<Vec<f64>>,
    /// Central 95% interval of `rmse_draws`.
    pub interval: Option<(f64, f64)>,
    pub predictions: Vec<f64>,
}

impl HoldoutResult {
    pub fn from_predictions(model: impl Into<String>, pred: Vec<f64>, truth: &[f64], draws: Option<&[Vec<f64>]>) -> Self {
        let m = mse(&pred, truth);
        let rmse_draws: Option<Vec<f64>> =
            draws.filter(|d| d.len() > 1).map(|d| d.iter().map(|p| rmse(p, truth)).collect());
        let interval = rmse_draws.as_ref().map(|r| central_interval(r, 0.95));
        HoldoutResult { model: model.into(), mse: m, rmse: m.sqrt(), rmse_draws, interval, predictions: pred }
    }
}

/// Empirical central interval with linear interpolation between order statistics.
pub fn central_interval(v: &[f64], level: f64) -> (f64, f64) {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let q = |p: f64| {
        let h = p * (s.len() - 1) as f64;
        let (lo, hi) = (h.floor() as usize, h.ceil() as usize);
        s[lo] + (h - lo as f64) * (s[hi] - s[lo])
    };
    let a = (1.0 - level) / 2.0;
    (q(a), q(1.0 - a))
}

/// Fits each spec on the first `T − H` periods and scores the last `H` under observed spend.
pub fn holdout_eval(
    data: &Dataset,
    specs: (&ModelSpec, &ModelSpec),
    holdout: usize,
    seed: u64,
) -> Result<(HoldoutResult, HoldoutResult)> {
    let (a, b) = holdout_models(data, specs, holdout, seed)?;
    Ok((a.1, b.1))
}

/// As `holdout_eval`, also returning the fitted models.
pub fn holdout_models(
    data: &Dataset,
    specs: (&ModelSpec, &ModelSpec),
    holdout: usize,
    seed: u64,
) -> Result<((FittedModel, HoldoutResult), (FittedModel, HoldoutResult))> {
    let n = data.len();
    if holdout == 0 || holdout >= n {
        return Err(Error::Precondition(format!("holdout of {holdout} periods is invalid for T = {n}")));
    }
    let train = data.slice(0..n - holdout);
    let periods = data.periods[n - holdout..].to_vec();
    let truth = &data.y[n - holdout..];
    let base = Scenario::observed(data, &periods)?;
    let one = |spec: &ModelSpec, s: u64| -> Result<(FittedModel, HoldoutResult)> {
        let m = fit(&train, spec, s)?;
        let mut scenario = base.clone();
        if !spec.dummies.is_empty() {
            scenario.dummies = Some(
                periods
                    .iter()
                    .map(|&p| {
                        let i = data.index_of(p).expect("holdout period in data");
                        spec.dummies
                            .iter()
                            .map(|name| data.dummies.iter().find(|d| &d.name == name).map_or(0.0, |d| d.values[i]))
                            .collect()
                    })
                    .collect(),
            );
        }
        let p = m.predict(&scenario)?;
        let r = HoldoutResult::from_predictions(spec.kind.label(), p.mean, truth, Some(&p.draw_means));
        Ok((m, r))
    };
    let (a, b) = rayon::join(|| one(specs.0, derive_seed(seed, &[1])), || one(specs.1, derive_seed(seed, &[2])));
    Ok((a?, b?))
}

/// The competing model is conflated with the true one when its error is no worse
/// than the true model's, up to a relative tolerance `delta`.
pub fn conflation_label(true_mse: f64, competing_mse: f64, delta: f64) -> bool {
    competing_mse <= true_mse * (1.0 + delta)
}

/// Interval mode: conflated when the two 95% RMSE intervals overlap.
pub fn conflation_label_intervals(a: (f64, f64), b: (f64, f64)) -> bool {
    a.0 <= b.1 && b.0 <= a.1
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DgpFamily {
    NonlinearGp,
    TimeVaryingGp,
    Hill,
}

impl DgpFamily {
    pub fn factors(self) -> [Factor; 6] {
        use Factor::*;
        match self {
            DgpFamily::Hill => [HillShape, HillInflection, ArCoef, ArSd, Noise, Carryover],
            _ => [Amplitude, Smoothness, ArCoef, ArSd, Noise, Carryover],
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            DgpFamily::NonlinearGp => "nonlinear-gp",
            DgpFamily::TimeVaryingGp => "time-varying-gp",
            DgpFamily::Hill => "hill",
        }
    }

    /// Model matching the DGP, and its competitor.
    pub fn contenders(self) -> (ModelSpec, ModelSpec) {
        match self {
            DgpFamily::TimeVaryingGp => (ModelSpec::time_varying(), ModelSpec::nonlinear()),
            _ => (ModelSpec::nonlinear(), ModelSpec::time_varying()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Factor {
    Amplitude,
    Smoothness,
    HillShape,
    HillInflection,
    ArCoef,
    ArSd,
    Noise,
    Carryover,
}

impl Factor {
    /// Low, medium and high levels.
    pub fn levels(self) -> [f64; 3] {
        match self {
            Factor::Amplitude => [1.0, 2.0, 5.0],
            Factor::Smoothness => [0.1, 0.5, 1.0],
            Factor::HillShape => [0.5, 2.0, 3.5],
            Factor::HillInflection => [0.1, 0.33, 1.0],
            Factor::ArCoef => [0.0, 0.5, 1.0],
            Factor::ArSd => [1.0, 5.0, 10.0],
            Factor::Noise => [0.01, 0.1, 0.2],
            Factor::Carryover => [0.0, 0.3, 0.8],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Factor::Amplitude => "amplitude",
            Factor::Smoothness => "smoothness",
            Factor::HillShape => "hill_shape",
            Factor::HillInflection => "hill_inflection",
            Factor::ArCoef => "ar_coef",
            Factor::ArSd => "ar_sd",
            Factor::Noise => "noise",
            Factor::Carryover => "carryover",
        }
    }
}

/// Mean of the AR(1) spend process. Draws below zero are clamped to zero.
pub const SPEND_LEVEL: f64 = 0.0;
/// Carryover lags when the carryover factor is positive.
pub const CARRYOVER_LAGS: usize = 8;

/// One cell of the factorial grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSetting {
    pub family: DgpFamily,
    #[serde(default = "mid_amplitude")]
    pub amplitude: f64,
    #[serde(default = "mid_smoothness")]
    pub smoothness: f64,
    #[serde(default = "mid_hill_shape")]
    pub hill_shape: f64,
    #[serde(default = "mid_hill_inflection")]
    pub hill_inflection: f64,
    #[serde(default = "mid_ar_coef")]
    pub ar_coef: f64,
    #[serde(default = "mid_ar_sd")]
    pub ar_sd: f64,
    #[serde(default = "mid_noise")]
    pub noise: f64,
    #[serde(default = "mid_carryover")]
    pub carryover: f64,
    /// Stationary mean and starting value of spend; not a varied factor.
    #[serde(default = "spend_level")]
    pub spend_level: f64,
}

fn spend_level() -> f64 {
    SPEND_LEVEL
}

fn mid_amplitude() -> f64 {
    Factor::Amplitude.levels()[1]
}
fn mid_smoothness() -> f64 {
    Factor::Smoothness.levels()[1]
}
fn mid_hill_shape() -> f64 {
    Factor::HillShape.levels()[1]
}
fn mid_hill_inflection() -> f64 {
    Factor::HillInflection.levels()[1]
}
fn mid_ar_coef() -> f64 {
    Factor::ArCoef.levels()[1]
}
fn mid_ar_sd() -> f64 {
    Factor::ArSd.levels()[1]
}
fn mid_noise() -> f64 {
    Factor::Noise.levels()[1]
}
fn mid_carryover() -> f64 {
    Factor::Carryover.levels()[1]
}

impl SimulationSetting {
    /// Every factor at its medium level.
    pub fn medium(family: DgpFamily) -> Self {
        SimulationSetting {
            family,
            amplitude: mid_amplitude(),
            smoothness: mid_smoothness(),
            hill_shape: mid_hill_shape(),
            hill_inflection: mid_hill_inflection(),
            ar_coef: mid_ar_coef(),
            ar_sd: mid_ar_sd(),
            noise: mid_noise(),
            carryover: mid_carryover(),
            spend_level: SPEND_LEVEL,
        }
    }

    pub fn with(mut self, factor: Factor, value: f64) -> Self {
        *self.value_mut(factor) = value;
        self
    }

    pub fn value(&self, factor: Factor) -> f64 {
        match factor {
            Factor::Amplitude => self.amplitude,
            Factor::Smoothness => self.smoothness,
            Factor::HillShape => self.hill_shape,
            Factor::HillInflection => self.hill_inflection,
            Factor::ArCoef => self.ar_coef,
            Factor::ArSd => self.ar_sd,
            Factor::Noise => self.noise,
            Factor::Carryover => self.carryover,
        }
    }

    fn value_mut(&mut self, factor: Factor) -> &mut f64 {
        match factor {
            Factor::Amplitude => &mut self.amplitude,
            Factor::Smoothness => &mut self.smoothness,
            Factor::HillShape => &mut self.hill_shape,
            Factor::HillInflection => &mut self.hill_inflection,
            Factor::ArCoef => &mut self.ar_coef,
            Factor::ArSd => &mut self.ar_sd,
            Factor::Noise => &mut self.noise,
            Factor::Carryover => &mut self.carryover,
        }
    }

    /// Level index (0 low, 1 medium, 2 high), or `None` for an overridden value.
    pub fn level(&self, factor: Factor) -> Option<usize> {
        let v = self.value(factor);
        factor.levels().iter().position(|l| *l == v)
    }

    pub fn validate(&self) -> Result<()> {
        for f in self.family.factors() {
            if self.level(f).is_none() {
                log::warn!("{} = {} is not one of the enumerated levels", f.name(), self.value(f));
            }
        }
        self.dgp().validate()
    }

    pub fn dgp(&self) -> DgpSpec {
        let kind = match self.family {
            DgpFamily::NonlinearGp => DgpKind::NonlinearGp { eta: self.amplitude, rho_ratio: self.smoothness },
            DgpFamily::TimeVaryingGp => DgpKind::TimeVaryingGp { eta: self.amplitude, rho_ratio: self.smoothness },
            DgpFamily::Hill => DgpKind::Hill { shape: self.hill_shape, k_ratio: self.hill_inflection, amplitude: 1.0 },
        };
        let carryover = (self.carryover > 0.0).then(|| StockSpec::geometric(self.carryover, CARRYOVER_LAGS));
        DgpSpec { kind, noise_ratio: self.noise, carryover, intercept: 0.0 }
    }

    pub fn spending(&self, periods: usize) -> SpendingSpec {
        SpendingSpec::ar1(self.spend_level, self.ar_coef, self.ar_sd, periods)
    }

    /// The full three-level grid for one family (729 settings).
    pub fn full_grid(family: DgpFamily) -> Vec<SimulationSetting> {
        let factors = family.factors();
        (0..3usize.pow(6))
            .map(|code| {
                let mut s = SimulationSetting::medium(family);
                let mut c = code;
                for f in factors {
                    s = s.with(f, f.levels()[c % 3]);
                    c /= 3;
                }
                s
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", deny_unknown_fields)]
pub enum LabelMode {
    Threshold { delta: f64 },
    Intervals,
}

impl Default for LabelMode {
    fn default() -> Self {
        LabelMode::Threshold { delta: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MegasimConfig {
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    #[serde(default = "default_periods")]
    pub periods: usize,
    #[serde(default = "default_holdout")]
    pub holdout: usize,
    #[serde(default)]
    pub label: LabelMode,
    /// Restarts for the point hyperparameter fits.
    #[serde(default = "default_restarts")]
    pub restarts: usize,
}

fn default_replicates() -> usize {
    20
}
fn default_periods() -> usize {
    100
}
fn default_holdout() -> usize {
    10
}
fn default_restarts() -> usize {
    3
}

impl Default for MegasimConfig {
    fn default() -> Self {
        MegasimConfig {
            replicates: default_replicates(),
            periods: default_periods(),
            holdout: default_holdout(),
            label: LabelMode::default(),
            restarts: default_restarts(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConflationRecord {
    pub setting_id: usize,
    pub replicate: usize,
    pub seed: u64,
    pub true_mse: Option<f64>,
    pub competing_mse: Option<f64>,
    pub conflated: Option<bool>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SettingRate {
    pub setting_id: usize,
    pub setting: SimulationSetting,
    pub valid: usize,
    pub invalid: usize,
    /// Percentage of valid replicates labeled conflated; `None` when none were valid.
    pub rate: Option<f64>,
    pub diagnostics: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MegasimResult {
    pub records: Vec<ConflationRecord>,
    pub rates: Vec<SettingRate>,
}

fn run_replicate(setting: &SimulationSetting, cfg: &MegasimConfig, setting_id: usize, replicate: usize, seed: u64) -> ConflationRecord {
    let outcome = (|| -> Result<(f64, f64, bool)> {
        let sim = gen_dataset(&setting.dgp(), &setting.spending(cfg.periods), derive_seed(seed, &[0]))?;
        let (truth_spec, comp_spec) = setting.family.contenders();
        let inference = crate::models::Inference::Point { restarts: cfg.restarts };
        let truth_spec = truth_spec.with_inference(inference.clone());
        let comp_spec = comp_spec.with_inference(inference);
        let (t, c) = holdout_eval(&sim.to_dataset(), (&truth_spec, &comp_spec), cfg.holdout, derive_seed(seed, &[1]))?;
        let label = match cfg.label {
            LabelMode::Threshold { delta } => conflation_label(t.mse, c.mse, delta),
            LabelMode::Intervals => match (t.interval, c.interval) {
                (Some(a), Some(b)) => conflation_label_intervals(a, b),
                _ => conflation_label(t.mse, c.mse, 0.0),
            },
        };
        Ok((t.mse, c.mse, label))
    })();
    match outcome {
        Ok((t, c, l)) => ConflationRecord {
            setting_id,
            replicate,
            seed,
            true_mse: Some(t),
            competing_mse: Some(c),
            conflated: Some(l),
            error: None,
        },
        Err(e) => ConflationRecord {
            setting_id,
            replicate,
            seed,
            true_mse: None,
            competing_mse: None,
            conflated: None,
            error: Some(e.to_string()),
        },
    }
}

/// Runs every (setting, replicate) pair on the rayon pool. Results are merged in
/// `(setting_id, replicate)` order, so the output does not depend on scheduling.
pub fn megasim(grid: &[SimulationSetting], cfg: &MegasimConfig, master_seed: u64) -> Result<MegasimResult> {
    if grid.is_empty() {
        return Err(Error::domain("megasim grid is empty"));
    }
    if cfg.replicates == 0 {
        return Err(Error::domain("megasim needs at least one replicate"));
    }
    for s in grid {
        s.validate()?;
    }
    let jobs: Vec<(usize, usize)> =
        (0..grid.len()).flat_map(|s| (0..cfg.replicates).map(move |r| (s, r))).collect();
    let records: Vec<ConflationRecord> = jobs
        .par_iter()
        .map(|&(s, r)| run_replicate(&grid[s], cfg, s, r, derive_seed(master_seed, &[s as u64, r as u64])))
        .collect();
    let rates = aggregate(grid, &records);
    Ok(MegasimResult { records, rates })
}

/// Per-setting conflation percentages over valid replicates.
pub fn aggregate(grid: &[SimulationSetting], records: &[ConflationRecord]) -> Vec<SettingRate> {
    grid.iter()
        .enumerate()
        .map(|(id, setting)| {
            let mine: Vec<&ConflationRecord> = records.iter().filter(|r| r.setting_id == id).collect();
            let valid: Vec<bool> = mine.iter().filter_map(|r| r.conflated).collect();
            let diagnostics: Vec<String> =
                mine.iter().filter_map(|r| r.error.as_ref().map(|e| format!("replicate {}: {e}", r.replicate))).collect();
            let rate = (!valid.is_empty())
                .then(|| 100.0 * valid.iter().filter(|c| **c).count() as f64 / valid.len() as f64);
            if rate.is_none() {
                log::warn!("setting {id}: every replicate failed");
            }
            SettingRate {
                setting_id: id,
                setting: setting.clone(),
                valid: valid.len(),
                invalid: mine.len() - valid.len(),
                rate,
                diagnostics,
            }
        })
        .collect()
}

/// Shares of settings with any conflation (rate > 0) and major conflation (rate > 25%).
pub fn any_major_summary(rates: &[SettingRate]) -> (f64, f64) {
    let r: Vec<f64> = rates.iter().filter_map(|s| s.rate).collect();
    let n = r.len().max(1) as f64;
    (
        r.iter().filter(|v| **v > 0.0).count() as f64 / n,
        r.iter().filter(|v| **v > 25.0).count() as f64 / n,
    )
}

/// OLS of per-setting conflation percentage on medium/high level dummies of each factor
/// (low level is the baseline), plus an intercept.
pub fn rate_regression(rates: &[SettingRate]) -> Result<RegressionTable> {
    let usable: Vec<&SettingRate> = rates.iter().filter(|r| r.rate.is_some()).collect();
    let family = usable.first().ok_or_else(|| Error::domain("no settings with a conflation rate"))?.setting.family;
    if usable.iter().any(|r| r.setting.family != family) {
        return Err(Error::domain("rate regression needs settings from a single DGP family"));
    }
    let factors = family.factors();
    for f in factors {
        for level in 0..3 {
            let count = usable.iter().filter(|r| r.setting.level(f) == Some(level)).count();
            if count < 2 {
                return Err(Error::Precondition(format!(
                    "factor {} level {level} appears in {count} settings; need at least 2",
                    f.name()
                )));
            }
        }
    }
    let mut names = vec!["intercept".to_string()];
    for f in factors {
        names.push(format!("{}_medium", f.name()));
        names.push(format!("{}_high", f.name()));
    }
    let x = DMatrix::from_fn(usable.len(), names.len(), |i, c| {
        if c == 0 {
            return 1.0;
        }
        let f = factors[(c - 1) / 2];
        let want = 1 + (c - 1) % 2;
        (usable[i].setting.level(f) == Some(want)) as u8 as f64
    });
    let y: Vec<f64> = usable.iter().map(|r| r.rate.expect("filtered")).collect();
    regress(&x, &y, &names)
}
