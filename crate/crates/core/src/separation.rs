//! Adaptive spending tests that pull the nonlinear and time-varying models
//! apart: the maximal separation policy and the open-loop seesaw.

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::budget::RevenueModel;
use crate::dataset::{Channel, Dataset};
use crate::dgp::{gen_dataset, gen_intro_with, gen_spending, DgpKind, DgpSpec, IntroConfig, SpendingSpec};
use crate::error::{Error, Result};
use crate::evaluation::{central_interval, conflation_label_intervals, rmse};
use crate::gp::GpPosterior;
use crate::kernels::Kernel;
use crate::models::{fit, FittedModel, Inference, ModelSpec};
use crate::rng::{self, derive_seed, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaximalChoice {
    pub spend: f64,
    /// `|ŷ_NL − ŷ_TV|` at the chosen spend.
    pub separation: f64,
    pub pred_nl: f64,
    pub pred_tv: f64,
}

/// Spend among `candidates` at which the two models' next-period predictions differ most.
/// Ties go to the smallest candidate; candidates that fail to predict are skipped.
pub fn maximal_step(nl: &dyn RevenueModel, tv: &dyn RevenueModel, candidates: &[f64], period: i64) -> Result<MaximalChoice> {
    let mut best: Option<MaximalChoice> = None;
    for &x in candidates {
        let row = [vec![x]];
        let (a, b) = match (nl.expected_revenue(&[period], &row), tv.expected_revenue(&[period], &row)) {
            (Ok(a), Ok(b)) => (a[0], b[0]),
            (Err(e), _) | (_, Err(e)) => {
                log::warn!("candidate {x} skipped: {e}");
                continue;
            }
        };
        let sep = (a - b).abs();
        if !sep.is_finite() {
            log::warn!("candidate {x} skipped: non-finite prediction");
            continue;
        }
        if best.is_none_or(|c| sep > c.separation || (sep == c.separation && x < c.spend)) {
            best = Some(MaximalChoice { spend: x, separation: sep, pred_nl: a, pred_tv: b });
        }
    }
    best.ok_or_else(|| Error::Fit("every candidate failed to predict".into()))
}

/// Odd test periods (1-indexed) spend high, even periods low.
pub fn seesaw_step(test_period: usize, x_high: f64, x_low: f64) -> f64 {
    if test_period % 2 == 1 {
        x_high
    } else {
        x_low
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Policy {
    Maximal,
    Seesaw,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", deny_unknown_fields)]
pub enum SeparationRule {
    /// 95% RMSE intervals of the two models no longer overlap.
    DisjointIntervals,
    /// The larger point RMSE is at least `r` times the smaller.
    Ratio { r: f64 },
}

/// Which errors the rolling RMSE is computed over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RmseScope {
    /// Refit models' fitted values against every observation so far.
    InSample,
    /// Each test period's prediction made before its outcome was seen.
    #[default]
    Predictive,
}

pub const DEFAULT_CANDIDATES: usize = 21;
pub const DEFAULT_RATIO: f64 = 1.25;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeparationConfig {
    /// Candidate spend levels; defaults to 21 levels spanning the observed range.
    #[serde(default)]
    pub candidates: Option<Vec<f64>>,
    #[serde(default = "default_policy")]
    pub policy: Policy,
    #[serde(default = "default_test_periods")]
    pub test_periods: usize,
    /// Defaults to disjoint intervals under Metropolis inference, ratio 1.25 otherwise.
    #[serde(default)]
    pub rule: Option<SeparationRule>,
    #[serde(default)]
    pub scope: RmseScope,
    #[serde(default)]
    pub inference: Inference,
}

fn default_policy() -> Policy {
    Policy::Maximal
}

fn default_test_periods() -> usize {
    5
}

impl SeparationConfig {
    pub fn new(policy: Policy, test_periods: usize) -> Self {
        SeparationConfig { candidates: None, policy, test_periods, rule: None, scope: RmseScope::default(), inference: Inference::default() }
    }

    pub fn resolved_rule(&self) -> SeparationRule {
        self.rule.unwrap_or(match self.inference {
            Inference::Metropolis { .. } => SeparationRule::DisjointIntervals,
            Inference::Point { .. } => SeparationRule::Ratio { r: DEFAULT_RATIO },
        })
    }

    pub fn resolved_candidates(&self, history: &Dataset) -> Result<Vec<f64>> {
        let c = match &self.candidates {
            Some(c) => c.clone(),
            None => {
                let x = &history.channels.first().ok_or_else(|| Error::domain("history has no spend channel"))?.values;
                let lo = x.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                crate::budget::SpendGrid::linspace(lo, hi, DEFAULT_CANDIDATES)
            }
        };
        if c.len() < 2 {
            return Err(Error::domain("separation needs at least two candidate levels"));
        }
        if c.windows(2).any(|w| w[1] <= w[0]) || c.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::domain("candidate levels must be finite, nonnegative and strictly increasing"));
        }
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if let SeparationRule::Ratio { r } = self.resolved_rule() {
            if !(r > 1.0) {
                return Err(Error::domain(format!("ratio threshold must exceed 1, got {r}")));
            }
        }
        if self.resolved_rule() == SeparationRule::DisjointIntervals && !matches!(self.inference, Inference::Metropolis { .. }) {
            return Err(Error::domain("interval rule needs Metropolis inference"));
        }
        Ok(())
    }
}

/// Test environment: how history is generated and how outcomes respond during the test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", deny_unknown_fields)]
pub enum EnvSpec {
    /// `y = a + b·ln x + N(0, noise_sd²)` with AR(1) spend.
    NonlinearLog {
        a: f64,
        b: f64,
        noise_sd: f64,
        spending: SpendingSpec,
    },
    /// The cyclic-effectiveness example; `β_t` continues along its sine during the test.
    IntroTimeVarying { config: IntroConfig },
    /// `y = β_t·x_t` with `β` a GP draw in time, continued by conditional simulation.
    TimeVaryingGp {
        eta: f64,
        rho_ratio: f64,
        noise_ratio: f64,
        spending: SpendingSpec,
    },
}

/// History length of the shipped environments.
pub const HISTORY: usize = 48;

impl EnvSpec {
    pub fn nonlinear_log() -> Self {
        let mut spending = SpendingSpec::ar1(50.0, 0.95, 8.0, HISTORY);
        spending.x0 = 50.0;
        spending.clamp_floor = 1.0;
        EnvSpec::NonlinearLog { a: 10.0, b: 20.0, noise_sd: 0.5, spending }
    }

    pub fn intro() -> Self {
        EnvSpec::IntroTimeVarying { config: IntroConfig { periods: HISTORY, ..IntroConfig::default() } }
    }

    pub fn true_model(&self) -> &'static str {
        match self {
            EnvSpec::NonlinearLog { .. } => "nonlinear",
            _ => "time-varying",
        }
    }
}

enum EnvState {
    Log { a: f64, b: f64, sd: f64 },
    Intro { cfg: IntroConfig },
    Gp { kernel: Kernel, beta: Vec<f64>, sigma: f64 },
}

/// A running environment: the data so far and the state needed to draw outcomes.
pub struct Environment {
    pub data: Dataset,
    state: EnvState,
    rng: Rng,
}

impl Environment {
    pub fn new(spec: &EnvSpec, seed: u64) -> Result<Self> {
        let hist_seed = derive_seed(seed, &[1]);
        let rng = rng::rng(derive_seed(seed, &[2]));
        let (data, state) = match spec {
            EnvSpec::NonlinearLog { a, b, noise_sd, spending } => {
                let x = gen_spending(spending, derive_seed(hist_seed, &[1]))?;
                if x.iter().any(|v| *v <= 0.0) {
                    return Err(Error::domain("log environment needs positive spend; raise clamp_floor"));
                }
                let mut r = rng::rng(derive_seed(hist_seed, &[3]));
                let y: Vec<f64> = x.iter().map(|v| a + b * v.ln() + noise_sd * rng::standard_normals(&mut r, 1)[0]).collect();
                let periods = (1..=x.len() as i64).collect();
                (Dataset::new(periods, y, vec![Channel::new("x", x)], vec![])?, EnvState::Log { a: *a, b: *b, sd: *noise_sd })
            }
            EnvSpec::IntroTimeVarying { config } => {
                (gen_intro_with(config, hist_seed)?.to_dataset(), EnvState::Intro { cfg: *config })
            }
            EnvSpec::TimeVaryingGp { eta, rho_ratio, noise_ratio, spending } => {
                let dgp = DgpSpec {
                    kind: DgpKind::TimeVaryingGp { eta: *eta, rho_ratio: *rho_ratio },
                    noise_ratio: *noise_ratio,
                    carryover: None,
                    intercept: 0.0,
                };
                let sim = gen_dataset(&dgp, spending, hist_seed)?;
                let rho = sim.truth.resolved_scale.ok_or_else(|| Error::domain("lengthscale was not resolved"))?;
                let beta = sim.truth.coefficients.clone().ok_or_else(|| Error::domain("no coefficient path"))?;
                (sim.to_dataset(), EnvState::Gp { kernel: Kernel::se(*eta, rho)?, beta, sigma: sim.truth.sigma })
            }
        };
        Ok(Environment { data, state, rng })
    }

    fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.rng)
    }

    /// Draws the outcome of spending `x` in the next period and appends it to the data.
    pub fn step(&mut self, x: f64) -> Result<f64> {
        let t = self.data.last_period() + 1;
        let e = self.normal();
        let y = match &mut self.state {
            EnvState::Log { a, b, sd } => {
                if x <= 0.0 {
                    return Err(Error::domain("log environment needs positive spend"));
                }
                *a + *b * x.ln() + *sd * e
            }
            EnvState::Intro { cfg } => cfg.beta(t as f64) * x + cfg.y_noise * e,
            EnvState::Gp { kernel, beta, sigma } => {
                let inputs: Vec<f64> = (1..=beta.len()).map(|p| p as f64).collect();
                let eta = kernel.variance(0.0)?.sqrt();
                let post = GpPosterior::new(kernel, &inputs, beta, 1e-6 * eta)?;
                let p = post.predict(&[t as f64])?;
                let z: f64 = StandardNormal.sample(&mut self.rng);
                let b = p.mean[0] + p.variance[0].max(0.0).sqrt() * z;
                beta.push(b);
                b * x + *sigma * e
            }
        };
        self.data.push(y, &[x], &[])?;
        Ok(y)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub test_period: usize,
    pub period: i64,
    pub spend: f64,
    pub pred_nl: f64,
    pub pred_tv: f64,
    pub y: f64,
    /// Largest `|ŷ_NL − ŷ_TV|` over the candidates at this step.
    pub max_separation: f64,
    pub rmse_nl: f64,
    pub rmse_tv: f64,
    pub interval_nl: Option<(f64, f64)>,
    pub interval_tv: Option<(f64, f64)>,
    pub fired: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", content = "reason")]
pub enum TrajectoryStatus {
    Complete,
    Truncated(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeparationTrajectory {
    pub rows: Vec<TrajectoryRow>,
    /// First test period (1-indexed) at which the rule fired.
    pub separation_period: Option<usize>,
    /// Model with the lower RMSE when the rule first fired.
    pub winner: Option<String>,
    pub status: TrajectoryStatus,
    pub seed: u64,
}

impl SeparationTrajectory {
    /// Fired within `periods` test periods and picked `model`.
    pub fn separated_within(&self, periods: usize, model: &str) -> bool {
        self.separation_period.is_some_and(|p| p <= periods) && self.winner.as_deref() == Some(model)
    }
}

fn fit_pair(data: &Dataset, inference: &Inference, seed: u64) -> Result<(FittedModel, FittedModel)> {
    let nl = ModelSpec::nonlinear().with_inference(inference.clone());
    let tv = ModelSpec::time_varying().with_inference(inference.clone());
    let (a, b) = rayon::join(|| fit(data, &nl, derive_seed(seed, &[1])), || fit(data, &tv, derive_seed(seed, &[2])));
    Ok((a?, b?))
}

/// Per-draw RMSE interval, when there is more than one draw.
fn draw_interval(draws: &[Vec<f64>], truth: &[f64]) -> Option<(f64, f64)> {
    (draws.len() > 1).then(|| central_interval(&draws.iter().map(|d| rmse(d, truth)).collect::<Vec<_>>(), 0.95))
}

/// Runs the test: choose spend, observe, refit, score, for `config.test_periods` periods.
pub fn run_test(env: &EnvSpec, config: &SeparationConfig, seed: u64) -> Result<SeparationTrajectory> {
    config.validate()?;
    let mut envr = Environment::new(env, seed)?;
    let candidates = config.resolved_candidates(&envr.data)?;
    let rule = config.resolved_rule();
    let (x_low, x_high) = (candidates[0], candidates[candidates.len() - 1]);
    let mut traj = SeparationTrajectory { rows: vec![], separation_period: None, winner: None, status: TrajectoryStatus::Complete, seed };
    if config.test_periods == 0 {
        return Ok(traj);
    }
    let (mut nl, mut tv) = fit_pair(&envr.data, &config.inference, derive_seed(seed, &[3, 0]))?;
    // One-step-ahead predictions during the test, per model, as (mean, per-draw means).
    let mut pred_hist: [Vec<f64>; 2] = [vec![], vec![]];
    let mut pred_draws: [Vec<Vec<f64>>; 2] = [vec![], vec![]];
    let mut outcomes = vec![];
    for p in 1..=config.test_periods {
        let period = envr.data.last_period() + 1;
        let best = match maximal_step(&nl, &tv, &candidates, period) {
            Ok(b) => b,
            Err(e) => {
                traj.status = TrajectoryStatus::Truncated(format!("test period {p}: {e}"));
                break;
            }
        };
        let spend = match config.policy {
            Policy::Maximal => best.spend,
            Policy::Seesaw => seesaw_step(p, x_high, x_low),
        };
        let preds: Vec<crate::models::ModelPrediction> = match [&nl, &tv]
            .iter()
            .map(|m| m.predict_stock(&[period], &[vec![spend]]))
            .collect::<Result<_>>()
        {
            Ok(v) => v,
            Err(e) => {
                traj.status = TrajectoryStatus::Truncated(format!("test period {p}: {e}"));
                break;
            }
        };
        let y = envr.step(spend)?;
        outcomes.push(y);
        for (k, pr) in preds.iter().enumerate() {
            pred_hist[k].push(pr.mean[0]);
            if pred_draws[k].len() < pr.draw_means.len() {
                pred_draws[k].resize(pr.draw_means.len(), vec![]);
            }
            for (d, m) in pr.draw_means.iter().enumerate() {
                pred_draws[k][d].push(m[0]);
            }
        }
        match fit_pair(&envr.data, &config.inference, derive_seed(seed, &[3, p as u64])) {
            Ok((a, b)) => {
                nl = a;
                tv = b;
            }
            Err(e) => {
                traj.status = TrajectoryStatus::Truncated(format!("refit after test period {p}: {e}"));
                break;
            }
        }
        let (rmse_nl, rmse_tv, interval_nl, interval_tv) = match config.scope {
            RmseScope::Predictive => (
                rmse(&pred_hist[0], &outcomes),
                rmse(&pred_hist[1], &outcomes),
                draw_interval(&pred_draws[0], &outcomes),
                draw_interval(&pred_draws[1], &outcomes),
            ),
            RmseScope::InSample => {
                let y = &envr.data.y;
                (
                    rmse(&nl.fitted(), y),
                    rmse(&tv.fitted(), y),
                    draw_interval(&nl.fitted_draws(), y),
                    draw_interval(&tv.fitted_draws(), y),
                )
            }
        };
        let fired = match rule {
            SeparationRule::Ratio { r } => rmse_nl.max(rmse_tv) >= r * rmse_nl.min(rmse_tv),
            SeparationRule::DisjointIntervals => match (interval_nl, interval_tv) {
                (Some(a), Some(b)) => !conflation_label_intervals(a, b),
                _ => false,
            },
        };
        if fired && traj.separation_period.is_none() {
            traj.separation_period = Some(p);
            traj.winner = Some(if rmse_nl <= rmse_tv { "nonlinear" } else { "time-varying" }.to_string());
        }
        traj.rows.push(TrajectoryRow {
            test_period: p,
            period,
            spend,
            pred_nl: preds[0].mean[0],
            pred_tv: preds[1].mean[0],
            y,
            max_separation: best.separation,
            rmse_nl,
            rmse_tv,
            interval_nl,
            interval_tv,
            fired,
        });
    }
    Ok(traj)
}

/// Independent runs over seeds, in parallel, returned in seed order.
pub fn run_ensemble(env: &EnvSpec, config: &SeparationConfig, seeds: &[u64]) -> Vec<Result<SeparationTrajectory>> {
    seeds.par_iter().map(|&s| run_test(env, config, s)).collect()
}

/// Median separation period, counting runs that never fired as `test_periods + 1`.
pub fn median_separation(trajs: &[SeparationTrajectory], test_periods: usize) -> f64 {
    let mut v: Vec<f64> = trajs.iter().map(|t| t.separation_period.unwrap_or(test_periods + 1) as f64).collect();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::budget::ResponseFn;

    fn f(g: fn(f64) -> f64) -> ResponseFn<impl Fn(i64, &[f64]) -> f64 + Sync> {
        ResponseFn { channels: 1, f: move |_, s: &[f64]| g(s[0]) }
    }

    #[test]
    fn maximal_step_by_enumeration() {
        let c = maximal_step(&f(|x| x * x), &f(|x| 2.0 * x), &[0.0, 1.0, 2.0, 3.0], 1).unwrap();
        assert_eq!((c.spend, c.separation), (3.0, 3.0));
        let same = maximal_step(&f(|x| x * x), &f(|x| x * x), &[0.5, 1.0, 2.0], 1).unwrap();
        assert_eq!((same.spend, same.separation), (0.5, 0.0));
    }

    #[test]
    fn seesaw_alternates() {
        let v: Vec<f64> = (1..=4).map(|p| seesaw_step(p, 10.0, 2.0)).collect();
        assert_eq!(v, vec![10.0, 2.0, 10.0, 2.0]);
        assert!((1..=5).all(|p| seesaw_step(p, 3.0, 3.0) == 3.0));
        for p in 1..10 {
            let pair = [seesaw_step(p, 10.0, 2.0), seesaw_step(p + 1, 10.0, 2.0)];
            let m = (pair[0] + pair[1]) / 2.0;
            let var = ((pair[0] - m).powi(2) + (pair[1] - m).powi(2)) / 2.0;
            assert_eq!(var, ((10.0 - 2.0) / 2.0f64).powi(2));
        }
    }

    #[test]
    fn zero_test_periods_is_empty() {
        let t = run_test(&EnvSpec::nonlinear_log(), &SeparationConfig::new(Policy::Maximal, 0), 1).unwrap();
        assert!(t.rows.is_empty());
        assert_eq!(t.separation_period, None);
    }

    #[test]
    fn config_validation() {
        let mut c = SeparationConfig::new(Policy::Maximal, 3);
        c.rule = Some(SeparationRule::Ratio { r: 1.0 });
        assert!(c.validate().is_err());
        c.rule = Some(SeparationRule::DisjointIntervals);
        assert!(c.validate().is_err());
        c.candidates = Some(vec![1.0]);
        let h = Environment::new(&EnvSpec::nonlinear_log(), 1).unwrap().data;
        assert!(c.resolved_candidates(&h).is_err());
    }

    #[test]
    fn environments_are_deterministic_and_continue() {
        for spec in [
            EnvSpec::nonlinear_log(),
            EnvSpec::intro(),
            EnvSpec::TimeVaryingGp { eta: 1.0, rho_ratio: 0.3, noise_ratio: 0.1, spending: SpendingSpec::ar1(50.0, 0.8, 5.0, 30) },
        ] {
            let mut a = Environment::new(&spec, 4).unwrap();
            let mut b = Environment::new(&spec, 4).unwrap();
            assert_eq!(a.data, b.data);
            let n = a.data.len();
            assert_eq!(a.step(20.0).unwrap(), b.step(20.0).unwrap());
            assert_eq!(a.data.len(), n + 1);
            assert_eq!(a.data.channels[0].values[n], 20.0);
        }
    }

    #[test]
    fn agreeing_models_separate_within_noise() {
        let x: Vec<f64> = (0..30).map(|i| 5.0 + 10.0 * (i as f64 * 0.37).sin().abs()).collect();
        let y: Vec<f64> = x.iter().map(|v| 1.0 + 2.0 * v).collect();
        let d = Dataset::new((1..=30).collect(), y, vec![Channel::new("x", x)], vec![]).unwrap();
        let (nl, tv) = fit_pair(&d, &Inference::default(), 2).unwrap();
        for c in [5.0, 8.0, 11.0, 14.0] {
            let a = nl.predict_stock(&[31], &[vec![c]]).unwrap();
            let b = tv.predict_stock(&[31], &[vec![c]]).unwrap();
            let sd = (a.latent_variance[0] + b.latent_variance[0]).sqrt();
            assert!((a.mean[0] - b.mean[0]).abs() < 3.0 * sd.max(1e-6), "{c}: {} vs {} sd {sd}", a.mean[0], b.mean[0]);
        }
    }
}
