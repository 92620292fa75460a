//! Spend optimization under a fitted response: grid search for one period,
//! the log-log closed form, test-window search with carryover, share
//! allocations and the revenue cost of acting on the wrong model.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::models::FittedModel;
use crate::transforms::{adstock, StockSpec};

/// Anything that maps post-carryover spend at given periods to expected revenue.
pub trait RevenueModel: Sync {
    fn n_channels(&self) -> usize;
    fn expected_revenue(&self, periods: &[i64], stock: &[Vec<f64>]) -> Result<Vec<f64>>;
}

impl RevenueModel for FittedModel {
    fn n_channels(&self) -> usize {
        self.data.n_channels()
    }

    fn expected_revenue(&self, periods: &[i64], stock: &[Vec<f64>]) -> Result<Vec<f64>> {
        Ok(self.predict_stock(periods, stock)?.mean)
    }
}

/// A closed-form response `f(period, stock row)`.
pub struct ResponseFn<F> {
    pub channels: usize,
    pub f: F,
}

impl<F: Fn(i64, &[f64]) -> f64 + Sync> RevenueModel for ResponseFn<F> {
    fn n_channels(&self) -> usize {
        self.channels
    }

    fn expected_revenue(&self, periods: &[i64], stock: &[Vec<f64>]) -> Result<Vec<f64>> {
        Ok(periods.iter().zip(stock).map(|(p, s)| (self.f)(*p, s)).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoundsPolicy {
    TrainingRange,
    Explicit,
}

/// Per-channel candidate spend levels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpendGrid {
    pub levels: Vec<Vec<f64>>,
    pub bounds: BoundsPolicy,
}

impl SpendGrid {
    pub fn explicit(levels: Vec<Vec<f64>>) -> Result<Self> {
        let g = SpendGrid { levels, bounds: BoundsPolicy::Explicit };
        g.validate()?;
        Ok(g)
    }

    /// `n` equally spaced levels from `lo` to `hi` inclusive.
    pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
        match n {
            0 => vec![],
            1 => vec![lo],
            _ => (0..n).map(|i| if i + 1 == n { hi } else { lo + (hi - lo) * i as f64 / (n - 1) as f64 }).collect(),
        }
    }

    /// Levels `lo, lo + step, …` up to `hi` (inclusive within a tolerance of step/1e6).
    pub fn stepped(lo: f64, hi: f64, step: f64) -> Vec<f64> {
        let n = ((hi - lo) / step + 1e-6).floor() as usize;
        (0..=n).map(|i| lo + step * i as f64).collect()
    }

    /// `n` levels per channel spanning the post-carryover spend seen in training.
    pub fn training_range(model: &FittedModel, n: usize) -> Result<Self> {
        let levels = model.stock_range().iter().map(|(lo, hi)| Self::linspace(*lo, *hi, n)).collect();
        let g = SpendGrid { levels, bounds: BoundsPolicy::TrainingRange };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if self.levels.is_empty() || self.levels.iter().any(|l| l.is_empty()) {
            return Err(Error::domain("spend grid is empty"));
        }
        for l in &self.levels {
            if l.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                return Err(Error::domain("spend grid levels must be finite and nonnegative"));
            }
            if l.windows(2).any(|w| w[1] <= w[0]) {
                return Err(Error::domain("spend grid levels must be strictly increasing"));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.levels.iter().map(Vec::len).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Cartesian product in lexicographic order.
    pub fn candidates(&self) -> Vec<Vec<f64>> {
        let mut out = vec![vec![]];
        for l in &self.levels {
            out = out.iter().flat_map(|prefix| l.iter().map(move |v| [prefix.as_slice(), &[*v]].concat())).collect();
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurfacePoint {
    pub spend: Vec<f64>,
    pub revenue: f64,
    pub profit: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Optimum {
    pub spend: Vec<f64>,
    pub revenue: f64,
    pub profit: f64,
    /// Every feasible candidate evaluated, in grid order.
    pub surface: Vec<SurfacePoint>,
    /// Candidates dropped by the stock-range filter.
    pub filtered: usize,
}

/// Higher profit wins; ties go to lower total spend, then the lexicographically smaller vector.
fn better(a: &SurfacePoint, b: &SurfacePoint) -> bool {
    if a.profit != b.profit {
        return a.profit > b.profit;
    }
    let (sa, sb): (f64, f64) = (a.spend.iter().sum(), b.spend.iter().sum());
    if sa != sb {
        return sa < sb;
    }
    a.spend.iter().zip(&b.spend).find(|(x, y)| x != y).is_some_and(|(x, y)| x < y)
}

fn argmax(surface: Vec<SurfacePoint>, filtered: usize) -> Result<Optimum> {
    let best = surface
        .iter()
        .fold(None::<&SurfacePoint>, |acc, p| match acc {
            Some(b) if !better(p, b) => Some(b),
            _ => Some(p),
        })
        .cloned()
        .ok_or_else(|| Error::domain("no candidates to evaluate"))?;
    if !best.profit.is_finite() {
        return Err(Error::Fit(format!("profit at the optimum is not finite: {}", best.profit)));
    }
    Ok(Optimum { spend: best.spend, revenue: best.revenue, profit: best.profit, surface, filtered })
}

const CHUNK: usize = 256;

/// Evaluates revenue at one period for many spend rows, in parallel chunks with ordered output.
fn revenue_batch(model: &dyn RevenueModel, period: i64, rows: &[Vec<f64>]) -> Result<Vec<f64>> {
    let parts: Vec<Vec<f64>> = rows
        .par_chunks(CHUNK)
        .map(|c| model.expected_revenue(&vec![period; c.len()], c))
        .collect::<Result<_>>()?;
    Ok(parts.concat())
}

/// Exhaustive one-period search of `price · revenue − Σ spend` over the grid.
pub fn optimize_no_carryover(model: &dyn RevenueModel, period: i64, grid: &SpendGrid, price: f64) -> Result<Optimum> {
    grid.validate()?;
    if grid.levels.len() != model.n_channels() {
        return Err(Error::domain(format!("grid has {} channels, model has {}", grid.levels.len(), model.n_channels())));
    }
    let cands = grid.candidates();
    let rev = revenue_batch(model, period, &cands)?;
    let surface = cands
        .into_iter()
        .zip(rev)
        .map(|(spend, r)| {
            let profit = price * r - spend.iter().sum::<f64>();
            SurfacePoint { spend, revenue: r, profit }
        })
        .collect();
    argmax(surface, 0)
}

/// The profit-maximizing spend under each posterior hyperparameter draw.
pub fn optimize_per_draw(model: &FittedModel, period: i64, grid: &SpendGrid, price: f64) -> Result<Vec<Vec<f64>>> {
    grid.validate()?;
    let cands = grid.candidates();
    let pred = model.predict_stock(&vec![period; cands.len()], &cands)?;
    pred.draw_means
        .iter()
        .map(|rev| {
            let surface = cands
                .iter()
                .zip(rev)
                .map(|(s, r)| SurfacePoint { spend: s.clone(), revenue: *r, profit: price * r - s.iter().sum::<f64>() })
                .collect();
            Ok(argmax(surface, 0)?.spend)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", content = "spend")]
pub enum LogLogOptimum {
    Interior(f64),
    /// Elasticity ≤ 0: spending anything lowers profit.
    ZeroSpend,
}

impl LogLogOptimum {
    pub fn spend(self) -> f64 {
        match self {
            LogLogOptimum::Interior(x) => x,
            LogLogOptimum::ZeroSpend => 0.0,
        }
    }
}

/// Maximizer of `exp(α)·x^β − x`: `x* = (exp(α)·β)^(1/(1−β))`.
pub fn closed_form_loglog(alpha: f64, beta: f64) -> Result<LogLogOptimum> {
    if !(alpha.is_finite() && beta.is_finite()) {
        return Err(Error::domain("log-log parameters must be finite"));
    }
    if beta >= 1.0 {
        return Err(Error::Infeasible(format!("elasticity {beta} ≥ 1 makes profit unbounded in spend")));
    }
    if beta <= 0.0 {
        return Ok(LogLogOptimum::ZeroSpend);
    }
    Ok(LogLogOptimum::Interior((alpha.exp() * beta).powf(1.0 / (1.0 - beta))))
}

/// Closed-form optimum of a single-channel log-log time-varying model at `period`.
pub fn loglog_model_optimum(model: &FittedModel, period: i64, price: f64) -> Result<LogLogOptimum> {
    if model.data.n_channels() != 1 {
        return Err(Error::domain("the closed form applies to a single channel"));
    }
    if !(price > 0.0) {
        return Err(Error::domain("price must be positive"));
    }
    let beta = model.elasticity(0, period)?.mean;
    let alpha = model.loglog_intercept(period)? + price.ln();
    closed_form_loglog(alpha, beta)
}

/// Spend history plus the carryover applied to it.
#[derive(Debug, Clone, Copy)]
pub struct CarryoverWindow<'a> {
    pub history: &'a Dataset,
    pub stock: Option<StockSpec>,
    /// First and last period of the test window.
    pub start: i64,
    pub end: i64,
}

impl<'a> CarryoverWindow<'a> {
    pub fn for_model(model: &'a FittedModel, start: i64, end: i64) -> Self {
        CarryoverWindow { history: &model.data, stock: model.spec.carryover, start, end }
    }

    pub fn lags(&self) -> usize {
        self.stock.map_or(0, |s| s.lags)
    }

    /// Periods whose revenue depends on window spend: `start ..= end + L`.
    pub fn affected(&self) -> Vec<i64> {
        (self.start..=self.end + self.lags() as i64).collect()
    }

    fn validate(&self) -> Result<()> {
        let l = self.lags() as i64;
        let (first, last) = (self.history.first_period(), self.history.last_period());
        if self.start > self.end {
            return Err(Error::domain(format!("window {}..={} is empty", self.start, self.end)));
        }
        if self.start - l < first {
            return Err(Error::Precondition(format!(
                "window starts at {} but carryover needs spend from period {}",
                self.start,
                self.start - l
            )));
        }
        if self.end + l >= last {
            return Err(Error::Precondition(format!(
                "window must end at least {l} periods before the last period {last}; it ends at {}",
                self.end
            )));
        }
        Ok(())
    }

    /// Raw spend with `candidate` spliced into every window period, and the
    /// resulting stock at each affected period.
    fn paths(&self, candidate: &[f64]) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
        let l = self.lags() as i64;
        let j = self.history.n_channels();
        let raw = |p: i64, ch: usize| -> f64 {
            if (self.start..=self.end).contains(&p) {
                candidate[ch]
            } else {
                self.history.channels[ch].values[self.history.index_of(p).expect("validated window")]
            }
        };
        let affected = self.affected();
        let raw_rows: Vec<Vec<f64>> = affected.iter().map(|&p| (0..j).map(|ch| raw(p, ch)).collect()).collect();
        let stock_rows = match self.stock.filter(|_| l > 0) {
            None => raw_rows.clone(),
            Some(spec) => affected
                .iter()
                .map(|&p| {
                    (0..j)
                        .map(|ch| {
                            let w: Vec<f64> = (p - l..=p).map(|q| raw(q, ch)).collect();
                            Ok(adstock(&w, &spec)?.values[0])
                        })
                        .collect::<Result<Vec<f64>>>()
                })
                .collect::<Result<_>>()?,
        };
        Ok((raw_rows, stock_rows))
    }
}

/// Cumulative profit over the affected periods for each candidate held constant over the window.
fn window_profits(
    model: &dyn RevenueModel,
    win: &CarryoverWindow,
    candidates: &[Vec<f64>],
    stock_range: Option<&[(f64, f64)]>,
    price: f64,
) -> Result<(Vec<SurfacePoint>, Vec<String>)> {
    win.validate()?;
    let affected = win.affected();
    let evaluated: Vec<std::result::Result<SurfacePoint, String>> = candidates
        .par_iter()
        .map(|c| {
            let (raw, stock) = win.paths(c).map_err(|e| e.to_string())?;
            if let Some(range) = stock_range {
                for (p, row) in affected.iter().zip(&stock) {
                    for (ch, (v, (lo, hi))) in row.iter().zip(range).enumerate() {
                        let name = &win.history.channels[ch].name;
                        if v < lo {
                            return Err(format!("channel {name}: stock {v} at period {p} is below the training minimum {lo}"));
                        }
                        if v > hi {
                            return Err(format!("channel {name}: stock {v} at period {p} is above the training maximum {hi}"));
                        }
                    }
                }
            }
            let rev: f64 = model.expected_revenue(&affected, &stock).map_err(|e| e.to_string())?.iter().sum();
            let spend: f64 = raw.iter().flatten().sum();
            Ok(SurfacePoint { spend: c.clone(), revenue: rev, profit: price * rev - spend })
        })
        .collect();
    let mut points = Vec::new();
    let mut rejected = Vec::new();
    for e in evaluated {
        match e {
            Ok(p) => points.push(p),
            Err(msg) => rejected.push(msg),
        }
    }
    Ok((points, rejected))
}

/// Best constant per-channel spend over a test window, accounting for carryover
/// into the `L` periods after it. Candidates whose stock path leaves
/// `stock_range` are discarded.
pub fn optimize_with_carryover(
    model: &dyn RevenueModel,
    win: &CarryoverWindow,
    grid: &SpendGrid,
    stock_range: Option<&[(f64, f64)]>,
    price: f64,
) -> Result<Optimum> {
    grid.validate()?;
    if grid.levels.len() != model.n_channels() || win.history.n_channels() != model.n_channels() {
        return Err(Error::domain("grid, history and model disagree on the number of channels"));
    }
    let cands = grid.candidates();
    let (points, rejected) = window_profits(model, win, &cands, stock_range, price)?;
    if points.is_empty() {
        return Err(Error::Infeasible(format!(
            "all {} candidates were filtered; first violation: {}",
            cands.len(),
            rejected.first().map_or("none recorded", String::as_str)
        )));
    }
    argmax(points, rejected.len())
}

/// Channel shares on a lattice, with the spend they imply.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Allocation {
    /// Share of the total in lattice units; sums to `1/step` exactly.
    pub units: Vec<u32>,
    pub shares: Vec<f64>,
    pub spend: Vec<f64>,
}

/// All splits of `total` across `channels` on a `step` share lattice, keeping
/// those whose spend lies within each channel's historical range.
pub fn enumerate_allocations(total: f64, channels: usize, step: f64, ranges: Option<&[(f64, f64)]>) -> Result<Vec<Allocation>> {
    if channels == 0 {
        return Err(Error::domain("need at least one channel"));
    }
    if !(step > 0.0 && step <= 1.0) {
        return Err(Error::Precondition(format!("share step {step} must lie in (0, 1]")));
    }
    let n = (1.0 / step).round() as u32;
    if (n as f64 * step - 1.0).abs() > 1e-9 {
        return Err(Error::Precondition(format!("share step {step} does not divide 1")));
    }
    if ranges.is_some_and(|r| r.len() != channels) {
        return Err(Error::domain("need one historical range per channel"));
    }
    let mut out = Vec::new();
    let mut units = vec![0u32; channels];
    fn rec(pos: usize, left: u32, units: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
        if pos + 1 == units.len() {
            units[pos] = left;
            out.push(units.clone());
            return;
        }
        for k in 0..=left {
            units[pos] = k;
            rec(pos + 1, left - k, units, out);
        }
    }
    let mut all = Vec::new();
    rec(0, n, &mut units, &mut all);
    for u in all {
        let spend: Vec<f64> = u.iter().map(|&k| total * k as f64 / n as f64).collect();
        if let Some(r) = ranges {
            if spend.iter().zip(r).any(|(s, (lo, hi))| s < lo || s > hi) {
                continue;
            }
        }
        out.push(Allocation { shares: u.iter().map(|&k| k as f64 / n as f64).collect(), units: u, spend });
    }
    if out.is_empty() {
        log::warn!("no allocation of {total} fits the historical ranges at step {step}");
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConflationCost {
    pub optimum_a: Allocation,
    pub optimum_b: Allocation,
    /// Revenue under A at A's optimum minus revenue under A at B's optimum.
    pub cost_if_a_true: f64,
    pub cost_if_b_true: f64,
    /// Cumulative revenue of every allocation under each model, in input order.
    pub revenue_a: Vec<f64>,
    pub revenue_b: Vec<f64>,
}

/// The revenue lost by acting on one model's best allocation when the other model is right.
pub fn conflation_cost(
    model_a: &dyn RevenueModel,
    model_b: &dyn RevenueModel,
    allocations: &[Allocation],
    win_a: &CarryoverWindow,
    win_b: &CarryoverWindow,
) -> Result<ConflationCost> {
    if allocations.is_empty() {
        return Err(Error::domain("no allocations to compare"));
    }
    if win_a.history.periods != win_b.history.periods || win_a.history.y != win_b.history.y {
        return Err(Error::Precondition("both models must be fitted on the same dataset".into()));
    }
    let cands: Vec<Vec<f64>> = allocations.iter().map(|a| a.spend.clone()).collect();
    let revenue = |m: &dyn RevenueModel, w: &CarryoverWindow| -> Result<Vec<f64>> {
        let (pts, rejected) = window_profits(m, w, &cands, None, 1.0)?;
        if let Some(e) = rejected.first() {
            return Err(Error::Fit(e.clone()));
        }
        Ok(pts.into_iter().map(|p| p.revenue).collect())
    };
    let ra = revenue(model_a, win_a)?;
    let rb = revenue(model_b, win_b)?;
    let best = |r: &[f64]| -> usize {
        let pts: Vec<SurfacePoint> =
            cands.iter().zip(r).map(|(s, v)| SurfacePoint { spend: s.clone(), revenue: *v, profit: *v }).collect();
        let opt = argmax(pts, 0).expect("nonempty allocations");
        cands.iter().position(|c| *c == opt.spend).expect("optimum is a candidate")
    };
    let (ia, ib) = (best(&ra), best(&rb));
    Ok(ConflationCost {
        optimum_a: allocations[ia].clone(),
        optimum_b: allocations[ib].clone(),
        cost_if_a_true: ra[ia] - ra[ib],
        cost_if_b_true: rb[ib] - rb[ia],
        revenue_a: ra,
        revenue_b: rb,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Channel;
    use crate::models::{fit, ModelSpec};

    fn response(f: impl Fn(f64) -> f64 + Sync) -> ResponseFn<impl Fn(i64, &[f64]) -> f64 + Sync> {
        ResponseFn { channels: 1, f: move |_, s: &[f64]| f(s[0]) }
    }

    fn history(n: usize) -> Dataset {
        let x: Vec<f64> = (0..n).map(|i| 5.0 + (i as f64 * 0.9).sin() * 3.0).collect();
        Dataset::new((1..=n as i64).collect(), vec![0.0; n], vec![Channel::new("tv", x)], vec![]).unwrap()
    }

    #[test]
    fn linear_response_hits_the_corner() {
        let g = SpendGrid::explicit(vec![SpendGrid::stepped(0.0, 10.0, 1.0)]).unwrap();
        let o = optimize_no_carryover(&response(|x| 2.0 * x), 1, &g, 1.0).unwrap();
        assert_eq!(o.spend, vec![10.0]);
        assert_eq!(o.profit, 10.0);
    }

    #[test]
    fn square_root_optimum_at_four() {
        let g = SpendGrid::explicit(vec![SpendGrid::stepped(0.0, 10.0, 0.01)]).unwrap();
        let o = optimize_no_carryover(&response(|x| 4.0 * x.sqrt()), 1, &g, 1.0).unwrap();
        assert!((o.spend[0] - 4.0).abs() <= 0.01, "{:?}", o.spend);
    }

    #[test]
    fn ties_go_to_lower_spend() {
        let g = SpendGrid::explicit(vec![vec![0.0, 1.0, 2.0], vec![0.0, 1.0]]).unwrap();
        let flat = ResponseFn { channels: 2, f: |_, s: &[f64]| s.iter().sum::<f64>() };
        let o = optimize_no_carryover(&flat, 1, &g, 1.0).unwrap();
        assert_eq!(o.spend, vec![0.0, 0.0]);
        let tie = ResponseFn { channels: 2, f: |_, s: &[f64]| if s.iter().sum::<f64>() == 1.0 { 5.0 } else { 0.0 } };
        assert_eq!(optimize_no_carryover(&tie, 1, &g, 1.0).unwrap().spend, vec![0.0, 1.0]);
    }

    #[test]
    fn refinement_never_lowers_profit() {
        let f = response(|x| 6.0 * (1.0 + x).ln());
        let mut last = f64::NEG_INFINITY;
        for k in 0..4 {
            let g = SpendGrid::explicit(vec![SpendGrid::linspace(0.0, 10.0, 10 * 2usize.pow(k) + 1)]).unwrap();
            let o = optimize_no_carryover(&f, 1, &g, 1.0).unwrap();
            assert!(o.profit >= last);
            last = o.profit;
        }
    }

    #[test]
    fn gp_fit_grid_agrees_with_dense_grid() {
        let x: Vec<f64> = (0..40).map(|i| 1.0 + 9.0 * ((i * 17) % 40) as f64 / 39.0).collect();
        let y: Vec<f64> = x.iter().map(|v| 4.0 * v.sqrt()).collect();
        let d = Dataset::new((1..=40).collect(), y, vec![Channel::new("x", x)], vec![]).unwrap();
        let m = fit(&d, &ModelSpec::nonlinear(), 3).unwrap();
        let coarse = SpendGrid::training_range(&m, 10).unwrap();
        let dense = SpendGrid::training_range(&m, 91).unwrap();
        let step = coarse.levels[0][1] - coarse.levels[0][0];
        let a = optimize_no_carryover(&m, 20, &coarse, 1.0).unwrap();
        let b = optimize_no_carryover(&m, 20, &dense, 1.0).unwrap();
        assert!((a.spend[0] - b.spend[0]).abs() <= step + 1e-9, "{:?} vs {:?}", a.spend, b.spend);
        assert!((b.spend[0] - 4.0).abs() < 1.0);
    }

    #[test]
    fn closed_form_examples() {
        assert_eq!(closed_form_loglog(0.0, 0.5).unwrap(), LogLogOptimum::Interior(0.25));
        assert!((closed_form_loglog(4f64.ln(), 0.5).unwrap().spend() - 4.0).abs() < 1e-12);
        assert!(matches!(closed_form_loglog(0.0, 1.0), Err(Error::Infeasible(_))));
        assert_eq!(closed_form_loglog(1.0, -0.2).unwrap(), LogLogOptimum::ZeroSpend);
    }

    #[test]
    fn zero_lag_window_matches_one_period_search() {
        let h = history(20);
        let f = response(|x| 3.0 * x.sqrt());
        let g = SpendGrid::explicit(vec![SpendGrid::linspace(0.0, 8.0, 33)]).unwrap();
        let a = optimize_no_carryover(&f, 10, &g, 1.0).unwrap();
        for stock in [None, Some(StockSpec::none()), Some(StockSpec::geometric(0.0, 3))] {
            let win = CarryoverWindow { history: &h, stock, start: 10, end: 10 };
            let b = optimize_with_carryover(&f, &win, &g, None, 1.0).unwrap();
            assert_eq!(a.spend, b.spend);
        }
    }

    #[test]
    fn linear_carryover_corner_follows_marginal_condition() {
        let h = history(30);
        let spec = StockSpec::geometric(0.6, 4);
        let sum_w: f64 = crate::transforms::stock_weights(&spec).unwrap().iter().sum();
        let g = SpendGrid::explicit(vec![SpendGrid::linspace(0.0, 10.0, 11)]).unwrap();
        for beta in [0.7, 1.4] {
            let f = response(move |s| beta * s);
            let win = CarryoverWindow { history: &h, stock: Some(spec), start: 12, end: 12 };
            let o = optimize_with_carryover(&f, &win, &g, None, 1.0).unwrap();
            let expect = if beta * sum_w >= 1.0 { 10.0 } else { 0.0 };
            assert_eq!(o.spend[0], expect);
        }
    }

    #[test]
    fn window_preconditions_and_infeasibility() {
        let h = history(20);
        let f = response(|x| x);
        let g = SpendGrid::explicit(vec![vec![100.0, 200.0]]).unwrap();
        let late = CarryoverWindow { history: &h, stock: Some(StockSpec::geometric(0.5, 3)), start: 16, end: 17 };
        assert!(matches!(optimize_with_carryover(&f, &late, &g, None, 1.0), Err(Error::Precondition(_))));
        let ok = CarryoverWindow { start: 10, end: 11, ..late };
        let err = optimize_with_carryover(&f, &ok, &g, Some(&[(0.0, 10.0)]), 1.0).unwrap_err();
        assert!(matches!(&err, Error::Infeasible(m) if m.contains("above the training maximum 10")), "{err}");
    }

    #[test]
    fn allocation_counts_and_filter() {
        assert_eq!(enumerate_allocations(1.0, 3, 0.5, None).unwrap().len(), 6);
        let all = enumerate_allocations(100.0, 3, 0.05, None).unwrap();
        assert_eq!(all.len(), 231);
        assert!(all.iter().all(|a| a.units.iter().sum::<u32>() == 20));
        let capped = enumerate_allocations(100.0, 3, 0.05, Some(&[(0.0, 15.0), (0.0, 100.0), (0.0, 100.0)])).unwrap();
        assert!(!capped.is_empty());
        assert!(capped.iter().all(|a| a.shares[0] <= 0.15));
        assert_eq!(capped.len(), 21 + 20 + 19 + 18);
        assert!(matches!(enumerate_allocations(1.0, 3, 0.3, None), Err(Error::Precondition(_))));
    }

    #[test]
    fn conflation_cost_is_zero_for_identical_models_and_nonnegative() {
        let h = Dataset::new(
            (1..=20).collect(),
            vec![0.0; 20],
            vec![Channel::new("a", vec![5.0; 20]), Channel::new("b", vec![3.0; 20])],
            vec![],
        )
        .unwrap();
        let allocs = enumerate_allocations(10.0, 2, 0.1, None).unwrap();
        let win = CarryoverWindow { history: &h, stock: None, start: 5, end: 5 };
        let a = ResponseFn { channels: 2, f: |_, s: &[f64]| 3.0 * s[0].sqrt() + s[1].sqrt() };
        let b = ResponseFn { channels: 2, f: |_, s: &[f64]| s[0].sqrt() + 2.0 * s[1].sqrt() };
        let same = conflation_cost(&a, &a, &allocs, &win, &win).unwrap();
        assert_eq!((same.cost_if_a_true, same.cost_if_b_true), (0.0, 0.0));
        let c = conflation_cost(&a, &b, &allocs, &win, &win).unwrap();
        assert!(c.cost_if_a_true > 0.0 && c.cost_if_b_true > 0.0);
        assert_ne!(c.cost_if_a_true, c.cost_if_b_true);
    }
}
