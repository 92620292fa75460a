//! The focal MMMs: a static nonlinear GP (additive over channels), a linear
//! model with GP time-varying coefficients (optionally log-log), and a
//! parametric Hill model, each with an optional constant or trend-season
//! intercept and fixed-effect dummy columns.
//!
//! Fitting applies carryover, then the input transform, then per-column
//! standardization. All outputs are reported back in outcome units.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::gp::{
    fit_metropolis, fit_point, sample_mean, sample_sd, value_range, CovarianceFamily, GpPosterior, HyperBounds,
    HyperDraws, HyperPrior, MetropolisConfig, Prediction,
};
use crate::optim::{self, Bound, NelderMeadOptions};
use crate::rng::derive_seed;
use crate::transforms::{adstock, hill, log_guard, HillParams, StockSpec};

/// Minimum usable periods after carryover trimming.
pub const MIN_PERIODS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    NonlinearGp,
    TimeVaryingGp,
    HillParametric,
    LogTimeVarying,
}

impl ModelKind {
    pub fn is_time_varying(self) -> bool {
        matches!(self, ModelKind::TimeVaryingGp | ModelKind::LogTimeVarying)
    }

    pub fn label(self) -> &'static str {
        match self {
            ModelKind::NonlinearGp => "nonlinear",
            ModelKind::TimeVaryingGp => "time-varying",
            ModelKind::HillParametric => "hill",
            ModelKind::LogTimeVarying => "log-time-varying",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", deny_unknown_fields)]
pub enum InputTransform {
    #[default]
    None,
    /// `ln(max(v, floor))` on spend and outcome.
    LogGuard { floor: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", deny_unknown_fields)]
pub enum InterceptSpec {
    None,
    #[default]
    Constant,
    /// Constant plus a GP with SE (trend) + periodic (season) kernel over time.
    TrendSeason { cycle: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", deny_unknown_fields)]
pub enum Inference {
    Point { restarts: usize },
    Metropolis { chain: MetropolisConfig },
}

impl Default for Inference {
    fn default() -> Self {
        Inference::Point { restarts: 4 }
    }
}

/// How time-varying coefficients are carried past the last training period.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BetaExtrapolation {
    #[default]
    Gp,
    /// Hold β at its last training-period value.
    Frozen,
}

/// Hyperparameter bounds as multiples of the standardized data scale:
/// amplitude and noise relative to sd(y), lengthscale relative to the input range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RelativeBounds {
    pub eta: (f64, f64),
    pub rho: (f64, f64),
    pub sigma: (f64, f64),
}

impl Default for RelativeBounds {
    fn default() -> Self {
        RelativeBounds { eta: (1e-3, 1e3), rho: (1e-2, 1e1), sigma: (1e-4, 1e1) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub kind: ModelKind,
    #[serde(default)]
    pub intercept: InterceptSpec,
    /// Dummy columns (by name, without the `d_` prefix) entering as fixed effects.
    #[serde(default)]
    pub dummies: Vec<String>,
    #[serde(default)]
    pub transform: InputTransform,
    #[serde(default)]
    pub carryover: Option<StockSpec>,
    #[serde(default)]
    pub inference: Inference,
    #[serde(default)]
    pub beta_extrapolation: BetaExtrapolation,
    #[serde(default)]
    pub bounds: RelativeBounds,
}

pub const DEFAULT_LOG_FLOOR: f64 = 1e-3;

impl ModelSpec {
    pub fn new(kind: ModelKind) -> Self {
        let transform = match kind {
            ModelKind::LogTimeVarying => InputTransform::LogGuard { floor: DEFAULT_LOG_FLOOR },
            _ => InputTransform::None,
        };
        ModelSpec {
            kind,
            intercept: InterceptSpec::Constant,
            dummies: vec![],
            transform,
            carryover: None,
            inference: Inference::default(),
            beta_extrapolation: BetaExtrapolation::Gp,
            bounds: RelativeBounds::default(),
        }
    }

    pub fn nonlinear() -> Self {
        Self::new(ModelKind::NonlinearGp)
    }

    pub fn time_varying() -> Self {
        Self::new(ModelKind::TimeVaryingGp)
    }

    pub fn log_time_varying() -> Self {
        Self::new(ModelKind::LogTimeVarying)
    }

    pub fn hill() -> Self {
        Self::new(ModelKind::HillParametric)
    }

    pub fn with_log(mut self) -> Self {
        self.transform = InputTransform::LogGuard { floor: DEFAULT_LOG_FLOOR };
        self
    }

    pub fn with_intercept(mut self, intercept: InterceptSpec) -> Self {
        self.intercept = intercept;
        self
    }

    pub fn with_inference(mut self, inference: Inference) -> Self {
        self.inference = inference;
        self
    }

    pub fn with_carryover(mut self, carryover: StockSpec) -> Self {
        self.carryover = Some(carryover);
        self
    }

    pub fn with_dummies(mut self, dummies: Vec<String>) -> Self {
        self.dummies = dummies;
        self
    }

    pub fn with_beta_extrapolation(mut self, mode: BetaExtrapolation) -> Self {
        self.beta_extrapolation = mode;
        self
    }

    pub fn is_log(&self) -> bool {
        matches!(self.transform, InputTransform::LogGuard { .. })
    }

    pub fn validate(&self) -> Result<()> {
        match (self.kind, self.transform) {
            (ModelKind::LogTimeVarying, InputTransform::None) => {
                return Err(Error::domain("log-time-varying models require the log transform on x and y"))
            }
            (ModelKind::HillParametric, InputTransform::LogGuard { .. }) => {
                return Err(Error::domain("the Hill model works on untransformed spend"))
            }
            (_, InputTransform::LogGuard { floor }) if !(floor > 0.0) => {
                return Err(Error::domain("log floor must be positive"))
            }
            _ => {}
        }
        if self.kind == ModelKind::HillParametric && matches!(self.intercept, InterceptSpec::TrendSeason { .. }) {
            return Err(Error::domain("the Hill model supports only a constant intercept"));
        }
        if let InterceptSpec::TrendSeason { cycle } = self.intercept {
            if !(cycle > 0.0) {
                return Err(Error::domain("seasonal cycle must be positive"));
            }
        }
        if let Some(c) = &self.carryover {
            c.validate()?;
        }
        let b = &self.bounds;
        for (name, (lo, hi)) in [("eta", b.eta), ("rho", b.rho), ("sigma", b.sigma)] {
            if !(lo > 0.0 && hi > lo) {
                return Err(Error::domain(format!("invalid {name} bounds ({lo}, {hi})")));
            }
        }
        if let Inference::Point { restarts: 0 } = self.inference {
            return Err(Error::domain("point inference needs at least one restart"));
        }
        Ok(())
    }

    fn lags(&self) -> usize {
        self.carryover.map_or(0, |c| c.lags)
    }
}

/// `z = (v − loc) / scale`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Affine {
    pub loc: f64,
    pub scale: f64,
}

impl Affine {
    fn fit(v: &[f64], center: bool) -> Self {
        let loc = if center { sample_mean(v) } else { 0.0 };
        let spread = if center {
            sample_sd(v)
        } else {
            (v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64).sqrt()
        };
        Affine { loc, scale: if spread > 0.0 && spread.is_finite() { spread } else { 1.0 } }
    }

    pub fn apply(&self, v: f64) -> f64 {
        (v - self.loc) / self.scale
    }

    pub fn invert(&self, z: f64) -> f64 {
        self.loc + self.scale * z
    }
}

/// Parametric Hill fit: `y = α + Σ_j A_j·hill(x_j; k_j, s_j) + dummies`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HillFit {
    pub alpha: f64,
    pub amplitude: Vec<f64>,
    pub k: Vec<f64>,
    pub s: Vec<f64>,
    pub dummy_coef: Vec<f64>,
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum ModelState {
    Gp { draws: HyperDraws },
    Hill(HillFit),
}

/// Posterior summary at query periods.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelPrediction {
    pub periods: Vec<i64>,
    /// Outcome units (exponentiated for log models).
    pub mean: Vec<f64>,
    /// Transformed-outcome units, de-standardized.
    pub latent_mean: Vec<f64>,
    pub latent_variance: Vec<f64>,
    /// Per hyperparameter draw, outcome units.
    pub draw_means: Vec<Vec<f64>>,
    /// Spend outside the training stock range, or a period past the training end for time-varying models.
    pub extrapolated: Vec<bool>,
}

/// Counterfactual spend per period (`spend[i][j]` = channel `j` at `periods[i]`).
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub periods: Vec<i64>,
    pub spend: Vec<Vec<f64>>,
    /// Dummy values per period; defaults to the observed values in-sample and 0 afterwards.
    pub dummies: Option<Vec<Vec<f64>>>,
}

impl Scenario {
    pub fn single(period: i64, spend: Vec<f64>) -> Self {
        Scenario { periods: vec![period], spend: vec![spend], dummies: None }
    }

    /// The observed spend of `data` at `periods`.
    pub fn observed(data: &Dataset, periods: &[i64]) -> Result<Self> {
        let spend = periods
            .iter()
            .map(|&p| {
                let i = data.index_of(p).ok_or_else(|| Error::domain(format!("period {p} not in the dataset")))?;
                Ok(data.channels.iter().map(|c| c.values[i]).collect())
            })
            .collect::<Result<_>>()?;
        Ok(Scenario { periods: periods.to_vec(), spend, dummies: None })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Band {
    pub mean: f64,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ComponentKind {
    /// `f_j` over a spend grid.
    Response,
    /// `β_j(t)` over a period grid.
    Coefficient,
    /// `α(t)` over a period grid.
    Intercept,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentCurve {
    pub kind: ComponentKind,
    pub channel: Option<String>,
    pub grid: Vec<f64>,
    pub mean: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

/// Grids for component extraction; `None` uses the training inputs.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ComponentGrid {
    /// Per channel, in post-carryover spend units.
    pub spend: Option<Vec<Vec<f64>>>,
    pub periods: Option<Vec<i64>>,
    /// Shift response curves so the first grid point is 0.
    pub rebase: bool,
}

fn se(d2: f64, eta: f64, rho: f64) -> f64 {
    eta * eta * (-d2 / (2.0 * rho * rho)).exp()
}

fn periodic(d: f64, eta: f64, rho: f64, cycle: f64) -> f64 {
    let s = (PI * d.abs() / cycle).sin();
    eta * eta * (-2.0 * s * s / (rho * rho)).exp()
}

/// Query points for the additive covariance: time, per-channel standardized input,
/// and the time at which time-varying coefficients are read.
struct Query {
    t: Vec<f64>,
    t_beta: Vec<f64>,
    z: Vec<Vec<f64>>,
}

/// Covariance family of a GP model over its training inputs.
struct ModelFamily {
    time_varying: bool,
    cycle: Option<f64>,
    names: Vec<String>,
    t: Vec<f64>,
    z: Vec<Vec<f64>>,
}

impl ModelFamily {
    fn n_channels(&self) -> usize {
        self.z.len()
    }

    /// Covariance between training rows and `q` for the selected parts.
    /// `channel = Some(j)` restricts to channel `j` with unit scaling on the query side
    /// (the coefficient itself for time-varying models); `intercept_only` keeps only the trend-season part.
    fn cross_parts(
        &self,
        params: &[f64],
        q: &Query,
        channels: &[usize],
        unit_query_scale: bool,
        with_intercept: bool,
    ) -> (DMatrix<f64>, Vec<f64>) {
        let n = self.t.len();
        let m = q.t.len();
        let mut k = DMatrix::zeros(n, m);
        let mut prior = vec![0.0; m];
        for &j in channels {
            let (eta, rho) = (params[2 * j], params[2 * j + 1]);
            for c in 0..m {
                let zq = if unit_query_scale { 1.0 } else { q.z[j][c] };
                if self.time_varying {
                    for r in 0..n {
                        let d = self.t[r] - q.t_beta[c];
                        k[(r, c)] += self.z[j][r] * zq * se(d * d, eta, rho);
                    }
                    prior[c] += zq * zq * eta * eta;
                } else {
                    for r in 0..n {
                        let d = self.z[j][r] - q.z[j][c];
                        k[(r, c)] += se(d * d, eta, rho);
                    }
                    prior[c] += eta * eta;
                }
            }
        }
        if with_intercept {
            if let Some(cycle) = self.cycle {
                let b = 2 * self.n_channels();
                let (et, rt, es, rs) = (params[b], params[b + 1], params[b + 2], params[b + 3]);
                for c in 0..m {
                    for r in 0..n {
                        let d = self.t[r] - q.t[c];
                        k[(r, c)] += se(d * d, et, rt) + periodic(d, es, rs, cycle);
                    }
                    prior[c] += et * et + es * es;
                }
            }
        }
        (k, prior)
    }
}

impl CovarianceFamily for ModelFamily {
    fn param_names(&self) -> Vec<String> {
        self.names.clone()
    }

    fn gram(&self, params: &[f64]) -> Result<DMatrix<f64>> {
        let n = self.t.len();
        let mut k = DMatrix::zeros(n, n);
        for j in 0..self.n_channels() {
            let (eta, rho) = (params[2 * j], params[2 * j + 1]);
            for c in 0..n {
                for r in 0..=c {
                    let v = if self.time_varying {
                        let d = self.t[r] - self.t[c];
                        self.z[j][r] * self.z[j][c] * se(d * d, eta, rho)
                    } else {
                        let d = self.z[j][r] - self.z[j][c];
                        se(d * d, eta, rho)
                    };
                    k[(r, c)] += v;
                }
            }
        }
        if let Some(cycle) = self.cycle {
            let b = 2 * self.n_channels();
            let (et, rt, es, rs) = (params[b], params[b + 1], params[b + 2], params[b + 3]);
            for c in 0..n {
                for r in 0..=c {
                    let d = self.t[r] - self.t[c];
                    k[(r, c)] += se(d * d, et, rt) + periodic(d, es, rs, cycle);
                }
            }
        }
        for c in 0..n {
            for r in 0..c {
                k[(c, r)] = k[(r, c)];
            }
        }
        Ok(k)
    }
}

/// Training inputs after carryover, transform and standardization.
struct Prepared {
    periods: Vec<i64>,
    /// Post-carryover spend per channel, untransformed.
    stock: Vec<Vec<f64>>,
    /// Transformed outcome.
    y: Vec<f64>,
    /// Transformed spend per channel.
    x: Vec<Vec<f64>>,
    dummies: Vec<Vec<f64>>,
}

fn prepare(data: &Dataset, spec: &ModelSpec) -> Result<Prepared> {
    let lags = spec.lags();
    if data.len() < MIN_PERIODS + lags {
        return Err(Error::Precondition(format!(
            "need at least {MIN_PERIODS} usable periods after {lags} carryover lags, dataset has {}",
            data.len()
        )));
    }
    let stock: Vec<Vec<f64>> = data
        .channels
        .iter()
        .map(|c| match &spec.carryover {
            Some(s) => adstock(&c.values, s).map(|a| a.values),
            None => Ok(c.values.clone()),
        })
        .collect::<Result<_>>()?;
    let dummies = spec
        .dummies
        .iter()
        .map(|name| {
            data.dummies
                .iter()
                .find(|d| &d.name == name)
                .map(|d| d.values[lags..].to_vec())
                .ok_or_else(|| Error::Config(format!("dummy column '{name}' not in the dataset")))
        })
        .collect::<Result<_>>()?;
    let y_raw = &data.y[lags..];
    let (x, y) = match spec.transform {
        InputTransform::None => (stock.clone(), y_raw.to_vec()),
        InputTransform::LogGuard { floor } => {
            let ly = log_guard(y_raw, floor)?;
            if ly.floored.iter().any(|f| *f) {
                log::warn!("outcome values below the log floor {floor} were floored");
            }
            let lx = stock.iter().map(|s| log_guard(s, floor).map(|l| l.values)).collect::<Result<_>>()?;
            (lx, ly.values)
        }
    };
    Ok(Prepared { periods: data.periods[lags..].to_vec(), stock, y, x, dummies })
}

#[derive(Debug, Clone)]
struct GpCache {
    family_t: Vec<f64>,
    family_z: Vec<Vec<f64>>,
    design: Option<DMatrix<f64>>,
    posteriors: Vec<GpPosterior>,
}

/// A trained model. Immutable after fitting; prediction and component
/// extraction are safe to call concurrently.
#[derive(Debug, Clone)]
pub struct FittedModel {
    pub spec: ModelSpec,
    /// The full training dataset, before carryover trimming.
    pub data: Dataset,
    pub y_std: Affine,
    pub x_std: Vec<Affine>,
    pub state: ModelState,
    pub seed: u64,
    periods: Vec<i64>,
    stock_range: Vec<(f64, f64)>,
    cache: Option<GpCache>,
}

/// Fits `spec` to `data`.
pub fn fit(data: &Dataset, spec: &ModelSpec, seed: u64) -> Result<FittedModel> {
    FittedModel::fit(data, spec, seed)
}

fn design_matrix(n: usize, constant: bool, dummies: &[Vec<f64>]) -> Option<DMatrix<f64>> {
    let cols = constant as usize + dummies.len();
    if cols == 0 {
        return None;
    }
    let mut x = DMatrix::zeros(n, cols);
    for i in 0..n {
        let mut c = 0;
        if constant {
            x[(i, 0)] = 1.0;
            c = 1;
        }
        for d in dummies {
            x[(i, c)] = d[i];
            c += 1;
        }
    }
    Some(x)
}

impl FittedModel {
    pub fn fit(data: &Dataset, spec: &ModelSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        data.validate()?;
        if data.n_channels() == 0 {
            return Err(Error::Precondition("models need at least one spend channel".into()));
        }
        let prep = prepare(data, spec)?;
        match spec.kind {
            ModelKind::HillParametric => Self::fit_hill(data, spec, prep, seed),
            _ => Self::fit_gp(data, spec, prep, seed),
        }
    }

    fn fit_gp(data: &Dataset, spec: &ModelSpec, prep: Prepared, seed: u64) -> Result<Self> {
        let tv = spec.kind.is_time_varying();
        let has_constant = !matches!(spec.intercept, InterceptSpec::None);
        let y_std = Affine::fit(&prep.y, has_constant);
        let centered_x = !tv || spec.kind == ModelKind::LogTimeVarying;
        let x_std: Vec<Affine> = prep.x.iter().map(|x| Affine::fit(x, centered_x)).collect();
        let z: Vec<Vec<f64>> = prep.x.iter().zip(&x_std).map(|(x, a)| x.iter().map(|v| a.apply(*v)).collect()).collect();
        let targets: Vec<f64> = prep.y.iter().map(|v| y_std.apply(*v)).collect();
        let t: Vec<f64> = prep.periods.iter().map(|&p| p as f64).collect();
        let cycle = match spec.intercept {
            InterceptSpec::TrendSeason { cycle } => Some(cycle),
            _ => None,
        };
        let mut names = Vec::new();
        for c in &data.channels {
            names.push(format!("eta_{}", c.name));
            names.push(format!("rho_{}", c.name));
        }
        if cycle.is_some() {
            names.extend(["eta_trend", "rho_trend", "eta_season", "rho_season"].map(String::from));
        }
        let family = ModelFamily { time_varying: tv, cycle, names, t: t.clone(), z: z.clone() };
        let design = design_matrix(targets.len(), has_constant, &prep.dummies);

        let sd = if has_constant { sample_sd(&targets) } else { Affine::fit(&targets, false).scale }.max(1e-12);
        let rb = spec.bounds;
        let t_range = value_range(&t).max(1e-12);
        let mut kb = Vec::new();
        let mut medians = Vec::new();
        for zj in &z {
            let range = if tv { t_range } else { value_range(zj).max(1e-12) };
            kb.push((rb.eta.0 * sd, rb.eta.1 * sd));
            kb.push((rb.rho.0 * range, rb.rho.1 * range));
            medians.extend([sd, 0.25 * range]);
        }
        if cycle.is_some() {
            kb.extend([(rb.eta.0 * sd, rb.eta.1 * sd), (rb.rho.0 * t_range, rb.rho.1 * t_range)]);
            kb.extend([(rb.eta.0 * sd, rb.eta.1 * sd), (0.1, 10.0)]);
            medians.extend([sd, 0.25 * t_range, 0.25 * sd, 1.0]);
        }
        medians.push(0.25 * sd);
        let bounds = HyperBounds::new(kb, (rb.sigma.0 * sd, rb.sigma.1 * sd));

        let draws = match &spec.inference {
            Inference::Point { restarts } => {
                let pf = fit_point(&family, &targets, design.as_ref(), &bounds, *restarts, derive_seed(seed, &[10]))?;
                if pf.failed_restarts > 0 {
                    log::warn!("{} of {restarts} restarts failed to factorize", pf.failed_restarts);
                }
                HyperDraws::point(pf.sample)
            }
            Inference::Metropolis { chain } => {
                let prior = HyperPrior { log_sd: vec![1.0; medians.len()], medians };
                fit_metropolis(&family, &targets, design.as_ref(), &bounds, &prior, chain, derive_seed(seed, &[11]))?
            }
        };
        let mut model = FittedModel {
            spec: spec.clone(),
            data: data.clone(),
            y_std,
            x_std,
            state: ModelState::Gp { draws },
            seed,
            periods: prep.periods.clone(),
            stock_range: prep.stock.iter().map(|s| min_max(s)).collect(),
            cache: None,
        };
        model.cache = Some(model.build_cache(&family, targets, design)?);
        Ok(model)
    }

    fn build_cache(&self, family: &ModelFamily, targets: Vec<f64>, design: Option<DMatrix<f64>>) -> Result<GpCache> {
        let ModelState::Gp { draws } = &self.state else { unreachable!("GP cache for a GP state") };
        let label = self.kernel_description();
        let posteriors = draws
            .draws
            .par_iter()
            .map(|d| {
                let g = family.gram(&d.params)?;
                GpPosterior::from_gram(g, &targets, d.sigma, design.clone(), &label)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(GpCache { family_t: family.t.clone(), family_z: family.z.clone(), design, posteriors })
    }

    /// Rebuilds a fitted model from stored hyperparameters without re-running inference.
    pub fn from_parts(data: &Dataset, spec: &ModelSpec, state: ModelState, seed: u64) -> Result<Self> {
        spec.validate()?;
        let prep = prepare(data, spec)?;
        let tv = spec.kind.is_time_varying();
        let has_constant = !matches!(spec.intercept, InterceptSpec::None);
        let (y_std, x_std) = match spec.kind {
            ModelKind::HillParametric => (Affine { loc: 0.0, scale: 1.0 }, vec![Affine { loc: 0.0, scale: 1.0 }; prep.x.len()]),
            _ => {
                let centered_x = !tv || spec.kind == ModelKind::LogTimeVarying;
                (Affine::fit(&prep.y, has_constant), prep.x.iter().map(|x| Affine::fit(x, centered_x)).collect())
            }
        };
        let mut model = FittedModel {
            spec: spec.clone(),
            data: data.clone(),
            y_std,
            x_std,
            state,
            seed,
            periods: prep.periods.clone(),
            stock_range: prep.stock.iter().map(|s| min_max(s)).collect(),
            cache: None,
        };
        if let ModelState::Gp { .. } = &model.state {
            let z: Vec<Vec<f64>> =
                prep.x.iter().zip(&model.x_std).map(|(x, a)| x.iter().map(|v| a.apply(*v)).collect()).collect();
            let targets: Vec<f64> = prep.y.iter().map(|v| model.y_std.apply(*v)).collect();
            let cycle = match spec.intercept {
                InterceptSpec::TrendSeason { cycle } => Some(cycle),
                _ => None,
            };
            let family = ModelFamily {
                time_varying: tv,
                cycle,
                names: vec![],
                t: prep.periods.iter().map(|&p| p as f64).collect(),
                z,
            };
            let design = design_matrix(targets.len(), has_constant, &prep.dummies);
            model.cache = Some(model.build_cache(&family, targets, design)?);
        }
        Ok(model)
    }

    fn fit_hill(data: &Dataset, spec: &ModelSpec, prep: Prepared, seed: u64) -> Result<Self> {
        let n = prep.y.len();
        let j = prep.stock.len();
        let has_constant = !matches!(spec.intercept, InterceptSpec::None);
        let ranges: Vec<f64> = prep.stock.iter().map(|s| value_range(s)).collect();
        if let Some(i) = ranges.iter().position(|r| !(*r > 0.0)) {
            return Err(Error::domain(format!("channel {} has no spend variation; Hill k is unresolvable", data.channels[i].name)));
        }
        let mut bounds = Vec::new();
        for r in &ranges {
            bounds.push(Bound::new((1e-3 * r).ln(), (1e3 * r).ln()));
        }
        bounds.extend(std::iter::repeat_n(Bound::new(0.01f64.ln(), 20f64.ln()), j));
        let y = DVector::from_column_slice(&prep.y);
        let solve = |theta: &[f64]| -> Option<(DVector<f64>, f64)> {
            let cols = has_constant as usize + j + prep.dummies.len();
            let mut x = DMatrix::zeros(n, cols);
            let mut c = 0;
            if has_constant {
                x.column_mut(0).fill(1.0);
                c = 1;
            }
            for ch in 0..j {
                let p = HillParams { k: theta[ch].exp(), s: theta[j + ch].exp() };
                for i in 0..n {
                    x[(i, c)] = hill(prep.stock[ch][i], p).ok()?;
                }
                c += 1;
            }
            for d in &prep.dummies {
                for i in 0..n {
                    x[(i, c)] = d[i];
                }
                c += 1;
            }
            let coef = x.clone().svd(true, true).solve(&y, 1e-12).ok()?;
            let sse = (&y - &x * &coef).norm_squared();
            sse.is_finite().then_some((coef, sse))
        };
        let objective = |theta: &[f64]| solve(theta).map_or(f64::INFINITY, |(_, sse)| sse);
        let starts = optim::multistart_points(&bounds, 8, derive_seed(seed, &[12]));
        let opts = NelderMeadOptions { max_evals: 3000, f_tol: 1e-14, x_tol: 1e-9, initial_step: 0.1 };
        let best = optim::multistart(objective, &starts, &bounds, &opts)
            .filter(|m| m.converged)
            .ok_or_else(|| Error::Fit("Hill fit did not converge from any of 8 restarts".into()))?;
        let (coef, sse) = solve(&best.x).expect("objective was finite at the optimum");
        let mut c = 0;
        let alpha = if has_constant {
            c = 1;
            coef[0]
        } else {
            0.0
        };
        let amplitude: Vec<f64> = (0..j).map(|i| coef[c + i]).collect();
        let dummy_coef: Vec<f64> = (0..prep.dummies.len()).map(|i| coef[c + j + i]).collect();
        let dof = n.saturating_sub(coef.len() + 2 * j).max(1);
        let fit = HillFit {
            alpha,
            amplitude,
            k: best.x[..j].iter().map(|v| v.exp()).collect(),
            s: best.x[j..].iter().map(|v| v.exp()).collect(),
            dummy_coef,
            sigma: (sse / dof as f64).sqrt(),
        };
        Ok(FittedModel {
            spec: spec.clone(),
            data: data.clone(),
            y_std: Affine { loc: 0.0, scale: 1.0 },
            x_std: vec![Affine { loc: 0.0, scale: 1.0 }; j],
            state: ModelState::Hill(fit),
            seed,
            periods: prep.periods,
            stock_range: prep.stock.iter().map(|s| min_max(s)).collect(),
            cache: None,
        })
    }

    pub fn kind(&self) -> ModelKind {
        self.spec.kind
    }

    /// Human-readable total kernel, used in diagnostics.
    pub fn kernel_description(&self) -> String {
        let mut parts: Vec<String> = self
            .data
            .channels
            .iter()
            .map(|c| match self.spec.kind {
                ModelKind::NonlinearGp => format!("SE(x_{})", c.name),
                ModelKind::HillParametric => format!("Hill(x_{})", c.name),
                _ => format!("ScaledTime(SE(t), x_{})", c.name),
            })
            .collect();
        if let InterceptSpec::TrendSeason { cycle } = self.spec.intercept {
            parts.push(format!("SE(t) + Periodic(t, cycle {cycle})"));
        }
        parts.join(" + ")
    }

    /// Usable training periods (after carryover trimming).
    pub fn training_periods(&self) -> &[i64] {
        &self.periods
    }

    /// Observed outcomes at the usable training periods, outcome units.
    pub fn training_targets(&self) -> Vec<f64> {
        let lags = self.spec.lags();
        self.data.y[lags..].to_vec()
    }

    pub fn stock_range(&self) -> &[(f64, f64)] {
        &self.stock_range
    }

    pub fn hyper_draws(&self) -> Option<&HyperDraws> {
        match &self.state {
            ModelState::Gp { draws } => Some(draws),
            ModelState::Hill(_) => None,
        }
    }

    pub fn hill_fit(&self) -> Option<&HillFit> {
        match &self.state {
            ModelState::Hill(h) => Some(h),
            ModelState::Gp { .. } => None,
        }
    }

    pub fn posteriors(&self) -> &[GpPosterior] {
        self.cache.as_ref().map_or(&[], |c| &c.posteriors)
    }

    /// Noise sd of each draw, transformed-outcome units.
    pub fn sigmas(&self) -> Vec<f64> {
        match &self.state {
            ModelState::Gp { draws } => draws.draws.iter().map(|d| d.sigma * self.y_std.scale).collect(),
            ModelState::Hill(h) => vec![h.sigma],
        }
    }

    fn to_outcome(&self, latent: f64) -> f64 {
        if self.spec.is_log() {
            latent.exp()
        } else {
            latent
        }
    }

    /// In-sample posterior mean per draw, outcome units.
    pub fn fitted_draws(&self) -> Vec<Vec<f64>> {
        match &self.state {
            ModelState::Gp { .. } => self
                .posteriors()
                .iter()
                .map(|p| p.fitted_mean().iter().map(|v| self.to_outcome(self.y_std.invert(*v))).collect())
                .collect(),
            ModelState::Hill(_) => {
                let s = Scenario::observed(&self.data, &self.periods).expect("training periods are in the dataset");
                vec![self.predict(&s).expect("in-sample prediction").mean]
            }
        }
    }

    /// In-sample posterior mean, outcome units.
    pub fn fitted(&self) -> Vec<f64> {
        match &self.state {
            ModelState::Gp { .. } => {
                let latent: Vec<Vec<f64>> = self.posteriors().iter().map(|p| p.fitted_mean()).collect();
                (0..self.periods.len())
                    .map(|i| {
                        let m = latent.iter().map(|d| d[i]).sum::<f64>() / latent.len() as f64;
                        self.to_outcome(self.y_std.invert(m))
                    })
                    .collect()
            }
            ModelState::Hill(_) => self.fitted_draws().remove(0),
        }
    }

    /// Training-set R² in outcome units.
    pub fn r_squared(&self) -> f64 {
        let y = self.training_targets();
        let f = self.fitted();
        let m = sample_mean(&y);
        let ss_res: f64 = y.iter().zip(&f).map(|(a, b)| (a - b) * (a - b)).sum();
        let ss_tot: f64 = y.iter().map(|a| (a - m) * (a - m)).sum();
        1.0 - ss_res / ss_tot
    }

    fn transform_x(&self, j: usize, stock: f64) -> f64 {
        let v = match self.spec.transform {
            InputTransform::None => stock,
            InputTransform::LogGuard { floor } => stock.max(floor).ln(),
        };
        self.x_std[j].apply(v)
    }

    /// Post-carryover spend at each scenario period, splicing scenario spend into the observed history.
    fn scenario_stock(&self, s: &Scenario) -> Result<Vec<Vec<f64>>> {
        let j = self.data.n_channels();
        if s.spend.len() != s.periods.len() {
            return Err(Error::domain("scenario needs one spend row per period"));
        }
        if let Some(row) = s.spend.iter().find(|r| r.len() != j) {
            return Err(Error::domain(format!("scenario rows need {j} channels, got {}", row.len())));
        }
        if let Some(v) = s.spend.iter().flatten().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::domain(format!("counterfactual spend must be finite and nonnegative, got {v}")));
        }
        let first_usable = self.periods[0];
        if let Some(p) = s.periods.iter().find(|&&p| p < first_usable) {
            return Err(Error::domain(format!(
                "period {p} precedes the first usable training period {first_usable}"
            )));
        }
        let lags = self.spec.lags();
        let Some(stock_spec) = self.spec.carryover.filter(|_| lags > 0) else {
            return Ok(s.spend.clone());
        };
        let first = self.data.first_period();
        let raw_at = |p: i64, ch: usize| -> Option<f64> {
            if let Some(i) = s.periods.iter().rposition(|&q| q == p) {
                return Some(s.spend[i][ch]);
            }
            self.data.index_of(p).map(|i| self.data.channels[ch].values[i])
        };
        s.periods
            .iter()
            .map(|&p| {
                (0..j)
                    .map(|ch| {
                        let window: Vec<f64> = (p - lags as i64..=p)
                            .map(|q| {
                                raw_at(q, ch).ok_or_else(|| {
                                    Error::domain(format!("no spend for period {q} (needed for carryover at period {p}; history starts at {first})"))
                                })
                            })
                            .collect::<Result<_>>()?;
                        Ok(adstock(&window, &stock_spec)?.values[0])
                    })
                    .collect()
            })
            .collect()
    }

    fn scenario_dummies(&self, s: &Scenario) -> Result<Vec<Vec<f64>>> {
        let k = self.spec.dummies.len();
        if let Some(d) = &s.dummies {
            if d.len() != s.periods.len() || d.iter().any(|r| r.len() != k) {
                return Err(Error::domain(format!("scenario dummies need {k} columns per period")));
            }
            return Ok(d.clone());
        }
        Ok(s.periods
            .iter()
            .map(|&p| {
                self.spec
                    .dummies
                    .iter()
                    .map(|name| {
                        let col = self.data.dummies.iter().find(|d| &d.name == name).expect("validated at fit");
                        self.data.index_of(p).map_or(0.0, |i| col.values[i])
                    })
                    .collect()
            })
            .collect())
    }

    /// Posterior prediction under counterfactual spend.
    pub fn predict(&self, s: &Scenario) -> Result<ModelPrediction> {
        let stock = self.scenario_stock(s)?;
        let dummies = self.scenario_dummies(s)?;
        self.predict_stock_rows(&s.periods, &stock, &dummies)
    }

    /// Prediction from post-carryover spend directly, with dummies at their observed
    /// values in-sample and 0 afterwards.
    pub fn predict_stock(&self, periods: &[i64], stock: &[Vec<f64>]) -> Result<ModelPrediction> {
        let j = self.data.n_channels();
        if stock.len() != periods.len() || stock.iter().any(|r| r.len() != j) {
            return Err(Error::domain(format!("stock needs one row of {j} channels per period")));
        }
        let first_usable = self.periods[0];
        if let Some(p) = periods.iter().find(|&&p| p < first_usable) {
            return Err(Error::domain(format!("period {p} precedes the first usable training period {first_usable}")));
        }
        let s = Scenario { periods: periods.to_vec(), spend: stock.to_vec(), dummies: None };
        let dummies = self.scenario_dummies(&s)?;
        self.predict_stock_rows(periods, stock, &dummies)
    }

    fn predict_stock_rows(&self, periods: &[i64], stock: &[Vec<f64>], dummies: &[Vec<f64>]) -> Result<ModelPrediction> {
        let last = *self.periods.last().expect("nonempty training");
        let extrapolated: Vec<bool> = periods
            .iter()
            .zip(stock)
            .map(|(&p, row)| {
                let out_of_range = row.iter().zip(&self.stock_range).any(|(v, (lo, hi))| v < lo || v > hi);
                out_of_range || (self.spec.kind.is_time_varying() && p > last)
            })
            .collect();
        let (latent_mean, latent_variance, draw_latent) = match &self.state {
            ModelState::Hill(h) => {
                let m: Vec<f64> = stock
                    .iter()
                    .zip(dummies)
                    .map(|(row, d)| {
                        let mut v = h.alpha;
                        for (ch, x) in row.iter().enumerate() {
                            v += h.amplitude[ch] * hill(*x, HillParams { k: h.k[ch], s: h.s[ch] })?;
                        }
                        v += d.iter().zip(&h.dummy_coef).map(|(a, b)| a * b).sum::<f64>();
                        Ok(v)
                    })
                    .collect::<Result<_>>()?;
                (m.clone(), vec![0.0; m.len()], vec![m])
            }
            ModelState::Gp { draws } => {
                let q = self.query(periods, stock);
                let design = self.query_design(dummies);
                let cache = self.cache.as_ref().expect("GP model has a cache");
                let preds: Vec<Prediction> = draws
                    .draws
                    .par_iter()
                    .zip(&cache.posteriors)
                    .map(|(d, post)| {
                        let fam = self.family_view(cache);
                        let chans: Vec<usize> = (0..fam.n_channels()).collect();
                        let (k, prior) = fam.cross_parts(&d.params, &q, &chans, false, true);
                        post.predict_with(&k, &prior, design.as_ref())
                    })
                    .collect::<Result<_>>()?;
                let m = periods.len();
                let sc = self.y_std.scale;
                let draw_latent: Vec<Vec<f64>> =
                    preds.iter().map(|p| p.mean.iter().map(|v| self.y_std.invert(*v)).collect()).collect();
                let nd = preds.len() as f64;
                let mean: Vec<f64> = (0..m).map(|i| draw_latent.iter().map(|d| d[i]).sum::<f64>() / nd).collect();
                let var: Vec<f64> = (0..m)
                    .map(|i| {
                        let within = preds.iter().map(|p| p.variance[i]).sum::<f64>() / nd * sc * sc;
                        let between = draw_latent.iter().map(|d| (d[i] - mean[i]).powi(2)).sum::<f64>() / nd;
                        within + between
                    })
                    .collect();
                (mean, var, draw_latent)
            }
        };
        Ok(ModelPrediction {
            periods: periods.to_vec(),
            mean: latent_mean.iter().map(|v| self.to_outcome(*v)).collect(),
            latent_mean,
            latent_variance,
            draw_means: draw_latent.iter().map(|d| d.iter().map(|v| self.to_outcome(*v)).collect()).collect(),
            extrapolated,
        })
    }

    fn family_view(&self, cache: &GpCache) -> ModelFamily {
        ModelFamily {
            time_varying: self.spec.kind.is_time_varying(),
            cycle: match self.spec.intercept {
                InterceptSpec::TrendSeason { cycle } => Some(cycle),
                _ => None,
            },
            names: vec![],
            t: cache.family_t.clone(),
            z: cache.family_z.clone(),
        }
    }

    fn query(&self, periods: &[i64], stock: &[Vec<f64>]) -> Query {
        let t: Vec<f64> = periods.iter().map(|&p| p as f64).collect();
        let last = *self.periods.last().expect("nonempty training") as f64;
        let t_beta = match self.spec.beta_extrapolation {
            BetaExtrapolation::Frozen => t.iter().map(|&v| v.min(last)).collect(),
            BetaExtrapolation::Gp => t.clone(),
        };
        let j = self.data.n_channels();
        let z = (0..j).map(|ch| stock.iter().map(|row| self.transform_x(ch, row[ch])).collect()).collect();
        Query { t, t_beta, z }
    }

    fn query_design(&self, dummies: &[Vec<f64>]) -> Option<DMatrix<f64>> {
        let has_constant = !matches!(self.spec.intercept, InterceptSpec::None);
        let cols: Vec<Vec<f64>> = (0..self.spec.dummies.len()).map(|k| dummies.iter().map(|r| r[k]).collect()).collect();
        design_matrix(dummies.len(), has_constant, &cols)
    }

    /// Mixture summary of one component over query points; values de-standardized by `unit`.
    fn component_band(&self, q: &Query, channels: &[usize], unit_scale: bool, with_intercept: bool, unit: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let ModelState::Gp { draws } = &self.state else {
            return Err(Error::domain("components are defined for GP models"));
        };
        let cache = self.cache.as_ref().expect("GP model has a cache");
        let fam = self.family_view(cache);
        let m = q.t.len();
        let zero_design = cache.design.as_ref().map(|d| DMatrix::zeros(m, d.ncols()));
        let preds: Vec<Prediction> = draws
            .draws
            .par_iter()
            .zip(&cache.posteriors)
            .map(|(d, post)| {
                let (k, prior) = fam.cross_parts(&d.params, q, channels, unit_scale, with_intercept);
                post.predict_with(&k, &prior, zero_design.as_ref())
            })
            .collect::<Result<_>>()?;
        let nd = preds.len() as f64;
        let mean: Vec<f64> = (0..m).map(|i| preds.iter().map(|p| p.mean[i]).sum::<f64>() / nd * unit[i]).collect();
        let var: Vec<f64> = (0..m)
            .map(|i| {
                let within = preds.iter().map(|p| p.variance[i]).sum::<f64>() / nd;
                let between = preds.iter().map(|p| (p.mean[i] * unit[i] - mean[i]).powi(2)).sum::<f64>() / nd;
                within * unit[i] * unit[i] + between
            })
            .collect();
        Ok((mean, var))
    }

    /// Constant-intercept estimate per draw averaged, standardized units.
    fn constant_coef(&self) -> f64 {
        if matches!(self.spec.intercept, InterceptSpec::None) {
            return 0.0;
        }
        let posts = self.posteriors();
        posts.iter().map(|p| p.fixed_coef().map_or(0.0, |c| c[0])).sum::<f64>() / posts.len().max(1) as f64
    }

    /// Posterior curves for every channel component and the intercept.
    pub fn components(&self, grid: &ComponentGrid) -> Result<Vec<ComponentCurve>> {
        let cache = self.cache.as_ref().ok_or_else(|| Error::domain("components are defined for GP models"))?;
        let j = self.data.n_channels();
        let periods: Vec<i64> = grid.periods.clone().unwrap_or_else(|| self.periods.clone());
        let t: Vec<f64> = periods.iter().map(|&p| p as f64).collect();
        let last = *self.periods.last().expect("nonempty") as f64;
        let band = |mean: &[f64], var: &[f64]| -> (Vec<f64>, Vec<f64>) {
            mean.iter().zip(var).map(|(m, v)| (m - 1.96 * v.sqrt(), m + 1.96 * v.sqrt())).unzip()
        };
        let mut out = Vec::new();
        for ch in 0..j {
            let name = Some(self.data.channels[ch].name.clone());
            if self.spec.kind.is_time_varying() {
                let t_beta = match self.spec.beta_extrapolation {
                    BetaExtrapolation::Frozen => t.iter().map(|&v| v.min(last)).collect(),
                    BetaExtrapolation::Gp => t.clone(),
                };
                let q = Query { t: t.clone(), t_beta, z: vec![vec![1.0; t.len()]; j] };
                let unit = vec![self.y_std.scale / self.x_std[ch].scale; t.len()];
                let (mean, var) = self.component_band(&q, &[ch], true, false, &unit)?;
                let (lower, upper) = band(&mean, &var);
                out.push(ComponentCurve { kind: ComponentKind::Coefficient, channel: name, grid: t.clone(), mean, lower, upper });
            } else {
                let xs: Vec<f64> = match &grid.spend {
                    Some(g) => g.get(ch).cloned().ok_or_else(|| Error::domain("spend grid missing a channel"))?,
                    None => {
                        let (lo, hi) = self.stock_range[ch];
                        (0..50).map(|i| lo + (hi - lo) * i as f64 / 49.0).collect()
                    }
                };
                let mut z = cache.family_z.iter().map(|_| vec![0.0; xs.len()]).collect::<Vec<_>>();
                z[ch] = xs.iter().map(|&x| self.transform_x(ch, x)).collect();
                let q = Query { t: vec![0.0; xs.len()], t_beta: vec![0.0; xs.len()], z };
                let unit = vec![self.y_std.scale; xs.len()];
                let (mut mean, var) = self.component_band(&q, &[ch], false, false, &unit)?;
                let (mut lower, mut upper) = band(&mean, &var);
                if grid.rebase && !mean.is_empty() {
                    let base = mean[0];
                    for v in mean.iter_mut().chain(lower.iter_mut()).chain(upper.iter_mut()) {
                        *v -= base;
                    }
                }
                out.push(ComponentCurve { kind: ComponentKind::Response, channel: name, grid: xs, mean, lower, upper });
            }
        }
        out.push(self.intercept_curve(&periods)?);
        Ok(out)
    }

    /// `α(t)` in transformed-outcome units: location, constant and trend-season parts.
    pub fn intercept_curve(&self, periods: &[i64]) -> Result<ComponentCurve> {
        let t: Vec<f64> = periods.iter().map(|&p| p as f64).collect();
        let base = self.y_std.invert(self.constant_coef());
        let (mean, var) = if matches!(self.spec.intercept, InterceptSpec::TrendSeason { .. }) {
            let q = Query { t: t.clone(), t_beta: t.clone(), z: vec![vec![0.0; t.len()]; self.data.n_channels()] };
            let unit = vec![self.y_std.scale; t.len()];
            let (m, v) = self.component_band(&q, &[], false, true, &unit)?;
            (m.iter().map(|x| x + base).collect(), v)
        } else {
            (vec![base; t.len()], vec![0.0; t.len()])
        };
        let (lower, upper) = mean.iter().zip(&var).map(|(m, v)| (m - 1.96 * v.sqrt(), m + 1.96 * v.sqrt())).unzip();
        Ok(ComponentCurve { kind: ComponentKind::Intercept, channel: None, grid: t, mean, lower, upper })
    }

    /// Time-varying coefficient of `channel` at `period`, outcome-per-transformed-spend units.
    pub fn coefficient(&self, channel: usize, period: i64) -> Result<Band> {
        if !self.spec.kind.is_time_varying() {
            return Err(Error::domain("coefficients are defined for time-varying models"));
        }
        if channel >= self.data.n_channels() {
            return Err(Error::domain(format!("no channel {channel}")));
        }
        let c = self.components(&ComponentGrid { periods: Some(vec![period]), ..Default::default() })?;
        let curve = &c[channel];
        Ok(Band { mean: curve.mean[0], lower: curve.lower[0], upper: curve.upper[0] })
    }

    /// Elasticity `β_j(period)` of a log-log time-varying model.
    pub fn elasticity(&self, channel: usize, period: i64) -> Result<Band> {
        if self.spec.kind != ModelKind::LogTimeVarying {
            return Err(Error::domain(format!("elasticity needs a log-log time-varying model, got {}", self.spec.kind.label())));
        }
        self.coefficient(channel, period)
    }

    /// Intercept `a(t)` of the local log-log form `ln y = a(t) + β(t)·ln x` for a single-channel
    /// log-log model; the centering of `ln x` is folded back in.
    pub fn loglog_intercept(&self, period: i64) -> Result<f64> {
        if self.spec.kind != ModelKind::LogTimeVarying || self.data.n_channels() != 1 {
            return Err(Error::domain("log-log intercept needs a single-channel log-time-varying model"));
        }
        let beta = self.elasticity(0, period)?.mean;
        let alpha = self.intercept_curve(&[period])?.mean[0];
        Ok(alpha - beta * self.x_std[0].loc)
    }
}

fn min_max(v: &[f64]) -> (f64, f64) {
    v.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Channel;
    use crate::gp::sample_prior;
    use crate::kernels::Kernel;

    fn dataset(x: Vec<f64>, y: Vec<f64>) -> Dataset {
        let n = y.len() as i64;
        Dataset::new((1..=n).collect(), y, vec![Channel::new("x", x)], vec![]).unwrap()
    }

    fn spend(n: usize) -> Vec<f64> {
        (0..n).map(|i| 10.0 + 5.0 * (i as f64 * 0.37).sin() + 0.05 * i as f64).collect()
    }

    #[test]
    fn spec_validation() {
        let mut s = ModelSpec::log_time_varying();
        s.transform = InputTransform::None;
        assert!(s.validate().is_err());
        assert!(ModelSpec::hill().with_log().validate().is_err());
        assert!(ModelSpec::nonlinear().validate().is_ok());
    }

    #[test]
    fn too_few_periods_rejected() {
        let d = dataset(spend(12), vec![1.0; 12]);
        let s = ModelSpec::nonlinear().with_carryover(StockSpec::geometric(0.5, 4));
        assert!(matches!(fit(&d, &s, 1), Err(Error::Precondition(_))));
    }

    #[test]
    fn time_varying_recovers_prior_coefficient() {
        let n = 60;
        let t: Vec<f64> = (1..=n).map(|v| v as f64).collect();
        let eta = 1.0;
        let beta = sample_prior(&Kernel::se(eta, 12.0).unwrap(), &t, 5).unwrap();
        let x = spend(n);
        let y: Vec<f64> = beta.iter().zip(&x).map(|(b, x)| b * x).collect();
        let m = fit(&dataset(x, y), &ModelSpec::time_varying().with_intercept(InterceptSpec::None), 1).unwrap();
        let c = m.components(&ComponentGrid::default()).unwrap();
        let err = c[0].mean.iter().zip(&beta).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 0.05 * eta, "max error {err}");
    }

    #[test]
    fn nonlinear_recovers_prior_function() {
        let n = 60;
        let x: Vec<f64> = (0..n).map(|i| i as f64 * 0.5).collect();
        let eta = 2.0;
        let f = sample_prior(&Kernel::se(eta, 4.0).unwrap(), &x, 8).unwrap();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by_key(|i| (i * 37) % n);
        let xs: Vec<f64> = order.iter().map(|&i| x[i]).collect();
        let ys: Vec<f64> = order.iter().map(|&i| f[i]).collect();
        let m = fit(&dataset(xs.clone(), ys.clone()), &ModelSpec::nonlinear(), 2).unwrap();
        let err = m.fitted().iter().zip(&ys).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 0.05 * eta, "max error {err}");
    }

    #[test]
    fn hill_recovers_parameters() {
        let x: Vec<f64> = (0..80).map(|i| 1.0 + i as f64 * 0.5).collect();
        let k = 20.0;
        let s = 2.0;
        let y: Vec<f64> = x.iter().map(|&v| 3.0 + 10.0 * hill(v, HillParams::new(k, s).unwrap()).unwrap()).collect();
        let m = fit(&dataset(x, y), &ModelSpec::hill(), 3).unwrap();
        let h = m.hill_fit().unwrap();
        assert!((h.k[0] / k - 1.0).abs() < 0.05 && (h.s[0] / s - 1.0).abs() < 0.05, "{h:?}");
    }

    #[test]
    fn counterfactual_on_training_period_equals_fitted() {
        let n = 40;
        let x = spend(n);
        let y: Vec<f64> = x.iter().enumerate().map(|(i, v)| 2.0 + v.sqrt() + 0.1 * (i as f64).cos()).collect();
        let d = dataset(x, y);
        for spec in [ModelSpec::nonlinear(), ModelSpec::time_varying(), ModelSpec::log_time_varying()] {
            let m = fit(&d, &spec, 4).unwrap();
            let p = m.predict(&Scenario::observed(&d, &[7, 20]).unwrap()).unwrap();
            let f = m.fitted();
            assert!((p.mean[0] - f[6]).abs() < 1e-9 && (p.mean[1] - f[19]).abs() < 1e-9);
        }
    }

    #[test]
    fn frozen_beta_times_spend() {
        let n = 40;
        let x = spend(n);
        let y: Vec<f64> = x.iter().enumerate().map(|(i, v)| v * (1.0 + 0.01 * i as f64)).collect();
        let d = dataset(x, y);
        let m = fit(&d, &ModelSpec::time_varying().with_beta_extrapolation(BetaExtrapolation::Frozen), 1).unwrap();
        let beta_t = m.coefficient(0, n as i64).unwrap().mean;
        let alpha = m.intercept_curve(&[n as i64 + 3]).unwrap().mean[0];
        let p = m.predict(&Scenario::single(n as i64 + 3, vec![17.0])).unwrap();
        assert!((p.mean[0] - (alpha + beta_t * 17.0)).abs() < 1e-8);
        assert!(p.extrapolated[0]);
    }

    #[test]
    fn zero_spend_without_intercept_predicts_zero() {
        let n = 30;
        let x = spend(n);
        let y: Vec<f64> = x.iter().map(|v| 1.5 * v).collect();
        let m = fit(&dataset(x, y), &ModelSpec::time_varying().with_intercept(InterceptSpec::None), 1).unwrap();
        let p = m.predict(&Scenario::single(n as i64 + 1, vec![0.0])).unwrap();
        assert_eq!(p.mean[0], 0.0);
    }

    #[test]
    fn period_before_training_rejected() {
        let n = 30;
        let x = spend(n);
        let d = dataset(x.clone(), x);
        let m = fit(&d, &ModelSpec::nonlinear().with_carryover(StockSpec::geometric(0.5, 3)), 1).unwrap();
        assert!(matches!(m.predict(&Scenario::single(2, vec![1.0])), Err(Error::Domain(_))));
        assert!(m.predict(&Scenario::single(4, vec![1.0])).is_ok());
    }

    #[test]
    fn components_sum_to_fitted() {
        let n = 40;
        let x = spend(n);
        let y: Vec<f64> = x.iter().enumerate().map(|(i, v)| 2.0 + v.ln() * (1.0 + 0.01 * i as f64)).collect();
        let d = dataset(x.clone(), y);
        let nl = fit(&d, &ModelSpec::nonlinear(), 1).unwrap();
        let grid = ComponentGrid { spend: Some(vec![x.clone()]), ..Default::default() };
        let c = nl.components(&grid).unwrap();
        let f = nl.fitted();
        for i in 0..n {
            assert!((c[0].mean[i] + c[1].mean[i] - f[i]).abs() < 1e-8);
        }
        let tv = fit(&d, &ModelSpec::time_varying().with_intercept(InterceptSpec::TrendSeason { cycle: 12.0 }), 1).unwrap();
        let c = tv.components(&ComponentGrid::default()).unwrap();
        let f = tv.fitted();
        for i in 0..n {
            assert!((c[0].mean[i] * x[i] + c[1].mean[i] - f[i]).abs() < 1e-8);
        }
    }

    #[test]
    fn rebased_response_starts_at_zero() {
        let x = spend(30);
        let y: Vec<f64> = x.iter().map(|v| v.sqrt()).collect();
        let m = fit(&dataset(x, y), &ModelSpec::nonlinear(), 1).unwrap();
        let c = m.components(&ComponentGrid { rebase: true, ..Default::default() }).unwrap();
        assert_eq!(c[0].mean[0], 0.0);
        assert!(c[0].lower.iter().zip(&c[0].mean).all(|(l, m)| l <= m));
    }

    #[test]
    fn constant_elasticity_recovered() {
        let x = spend(40);
        let y: Vec<f64> = x.iter().map(|v| 3.0 * v.powf(0.5)).collect();
        let m = fit(&dataset(x, y), &ModelSpec::log_time_varying(), 1).unwrap();
        for p in [1, 20, 40] {
            let e = m.elasticity(0, p).unwrap().mean;
            assert!((e - 0.5).abs() < 0.02, "period {p}: {e}");
        }
        assert!((m.loglog_intercept(40).unwrap() - 3f64.ln()).abs() < 0.05);
        let nl = fit(&m.data, &ModelSpec::nonlinear(), 1).unwrap();
        assert!(matches!(nl.elasticity(0, 1), Err(Error::Domain(_))));
    }

    #[test]
    fn predictions_invariant_to_rescaling() {
        let x = spend(35);
        let y: Vec<f64> = x.iter().enumerate().map(|(i, v)| 4.0 + v.sqrt() + 0.3 * (i as f64 * 0.9).sin()).collect();
        let (a, b) = (7.5, 0.02);
        for spec in [ModelSpec::nonlinear(), ModelSpec::time_varying()] {
            let m1 = fit(&dataset(x.clone(), y.clone()), &spec, 3).unwrap();
            let xs: Vec<f64> = x.iter().map(|v| v * a).collect();
            let ys: Vec<f64> = y.iter().map(|v| v * b).collect();
            let m2 = fit(&dataset(xs, ys), &spec, 3).unwrap();
            let p1 = m1.predict(&Scenario::single(36, vec![12.0])).unwrap().mean[0];
            let p2 = m2.predict(&Scenario::single(36, vec![12.0 * a])).unwrap().mean[0];
            assert!((p2 / b - p1).abs() <= 1e-6 * p1.abs(), "{:?}: {p1} vs {}", spec.kind, p2 / b);
        }
    }
}
