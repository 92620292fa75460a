//! Gaussian-process prior sampling, exact conjugate prediction, marginal
//! likelihood and hyperparameter inference.
//!
//! The posterior works on precomputed covariance matrices so that composite
//! models (several channels, scaled-time kernels, trend-season intercepts)
//! share one code path. Optional fixed-effect columns (intercept, dummies)
//! are profiled out by generalized least squares.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{Kernel, SeHyper};
use crate::linalg::{self, Factor};
use crate::optim::{self, Bound, NelderMeadOptions};
use crate::rng;

/// Pointwise posterior summary.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub mean: Vec<f64>,
    /// Variance of the latent function (observation noise excluded), floored at 0.
    pub variance: Vec<f64>,
}

/// Fixed-effect columns and their GLS estimates.
#[derive(Debug, Clone)]
struct FixedEffects {
    design: DMatrix<f64>,
    coef: DVector<f64>,
}

/// A factorized GP conditioned on training targets.
#[derive(Debug, Clone)]
pub struct GpPosterior {
    targets: DVector<f64>,
    sigma: f64,
    /// Training covariance without noise.
    gram: DMatrix<f64>,
    factor: Factor,
    /// `(K + σ²I)⁻¹ (y − Xb)`.
    alpha: DVector<f64>,
    fixed: Option<FixedEffects>,
    /// Set when built from a scalar kernel, enabling `predict`.
    scalar: Option<(Kernel, Vec<f64>)>,
}

impl GpPosterior {
    /// Conditions a GP with training covariance `gram` on `targets` with noise sd `sigma`.
    /// `design`, when given, holds fixed-effect columns profiled out by GLS.
    pub fn from_gram(
        gram: DMatrix<f64>,
        targets: &[f64],
        sigma: f64,
        design: Option<DMatrix<f64>>,
        label: &str,
    ) -> Result<Self> {
        let n = targets.len();
        if gram.nrows() != n || gram.ncols() != n {
            return Err(Error::domain(format!("gram is {}x{}, targets have {n}", gram.nrows(), gram.ncols())));
        }
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::domain(format!("noise sd must be positive, got {sigma}")));
        }
        if let Some(i) = targets.iter().position(|v| !v.is_finite()) {
            return Err(Error::domain(format!("non-finite target at index {i}")));
        }
        let mut noisy = gram.clone();
        for i in 0..n {
            noisy[(i, i)] += sigma * sigma;
        }
        let factor = linalg::factorize(&noisy, true, || label.to_string())?;
        let y = DVector::from_column_slice(targets);
        let fixed = match design {
            Some(x) if x.ncols() > 0 => {
                if x.nrows() != n {
                    return Err(Error::domain("design rows must match targets"));
                }
                Some(FixedEffects { coef: gls(&factor, &x, &y), design: x })
            }
            _ => None,
        };
        let resid = match &fixed {
            Some(fe) => &y - &fe.design * &fe.coef,
            None => y.clone(),
        };
        let alpha = factor.solve(&resid);
        Ok(GpPosterior { targets: y, sigma, gram, factor, alpha, fixed, scalar: None })
    }

    /// Conditions a scalar-input kernel on `(inputs, targets)`.
    pub fn new(kernel: &Kernel, inputs: &[f64], targets: &[f64], sigma: f64) -> Result<Self> {
        if inputs.len() != targets.len() {
            return Err(Error::domain("inputs and targets differ in length"));
        }
        let gram = kernel.gram(inputs, 0.0)?;
        let mut gp = Self::from_gram(gram, targets, sigma, None, &kernel.to_string())?;
        gp.scalar = Some((kernel.clone(), inputs.to_vec()));
        Ok(gp)
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn jitter(&self) -> f64 {
        self.factor.jitter
    }

    /// The shared solve `(K + σ²I)⁻¹ (y − Xb)`.
    pub fn alpha(&self) -> &DVector<f64> {
        &self.alpha
    }

    /// GLS estimates of the fixed-effect coefficients, if any.
    pub fn fixed_coef(&self) -> Option<&DVector<f64>> {
        self.fixed.as_ref().map(|f| &f.coef)
    }

    pub fn fixed_design(&self) -> Option<&DMatrix<f64>> {
        self.fixed.as_ref().map(|f| &f.design)
    }

    /// Relative Frobenius error of `L Lᵀ` against `K + σ²I`.
    pub fn factor_error(&self) -> f64 {
        let mut noisy = self.gram.clone();
        for i in 0..noisy.nrows() {
            noisy[(i, i)] += self.sigma * self.sigma;
        }
        let l = self.factor.l();
        (l.clone() * l.transpose() - &noisy).norm() / noisy.norm()
    }

    /// Posterior at query points given the train×query cross covariance, the
    /// prior variance at each query, and the fixed-effect rows of the queries.
    pub fn predict_with(
        &self,
        cross: &DMatrix<f64>,
        prior_var: &[f64],
        query_design: Option<&DMatrix<f64>>,
    ) -> Result<Prediction> {
        let m = cross.ncols();
        if cross.nrows() != self.len() || prior_var.len() != m {
            return Err(Error::domain("cross covariance shape does not match the posterior"));
        }
        let mut mean = cross.tr_mul(&self.alpha);
        if let Some(fe) = &self.fixed {
            let q = query_design.ok_or_else(|| Error::domain("query design required for fixed effects"))?;
            if q.nrows() != m || q.ncols() != fe.design.ncols() {
                return Err(Error::domain("query design shape mismatch"));
            }
            mean += q * &fe.coef;
        }
        let v = self.factor.solve_lower(cross);
        let variance = (0..m)
            .map(|j| (prior_var[j] - v.column(j).norm_squared()).max(0.0))
            .collect();
        Ok(Prediction { mean: mean.iter().copied().collect(), variance })
    }

    /// Posterior mean and latent variance at `test_inputs` for a scalar-kernel GP.
    pub fn predict(&self, test_inputs: &[f64]) -> Result<Prediction> {
        let (kernel, inputs) = self
            .scalar
            .as_ref()
            .ok_or_else(|| Error::domain("predict needs a scalar-kernel posterior; use predict_with"))?;
        let cross = kernel.cross(inputs, test_inputs)?;
        let prior: Vec<f64> = test_inputs.iter().map(|&z| kernel.variance(z)).collect::<Result<_>>()?;
        self.predict_with(&cross, &prior, None)
    }

    /// `log N(y − Xb; 0, K + σ²I)` at the GLS estimate `b`.
    pub fn log_marginal_likelihood(&self) -> f64 {
        let resid = match &self.fixed {
            Some(fe) => &self.targets - &fe.design * &fe.coef,
            None => self.targets.clone(),
        };
        let n = self.len() as f64;
        -0.5 * resid.dot(&self.alpha) - 0.5 * self.factor.log_det() - 0.5 * n * (2.0 * PI).ln()
    }

    /// Joint posterior draws of the latent function at the training inputs
    /// (fixed effects included), used for posterior RMSE distributions.
    pub fn sample_fitted(&self, draws: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
        let n = self.len();
        let v = self.factor.solve_lower(&self.gram);
        let cov = &self.gram - v.tr_mul(&v);
        let sym = (&cov + cov.transpose()) * 0.5;
        let l = linalg::factorize(&sym, false, || "posterior covariance".into())?.l();
        let mean = self.fitted_mean();
        let mut r = rng::rng(seed);
        Ok((0..draws)
            .map(|_| {
                let u = DVector::from_vec(rng::standard_normals(&mut r, n));
                let f = &l * u;
                mean.iter().zip(f.iter()).map(|(m, e)| m + e).collect()
            })
            .collect())
    }

    /// Posterior mean at the training inputs.
    pub fn fitted_mean(&self) -> Vec<f64> {
        let mut m = &self.gram * &self.alpha;
        if let Some(fe) = &self.fixed {
            m += &fe.design * &fe.coef;
        }
        m.iter().copied().collect()
    }
}

fn gls(factor: &Factor, x: &DMatrix<f64>, y: &DVector<f64>) -> DVector<f64> {
    let kx = factor.solve_mat(x);
    let a = x.tr_mul(&kx);
    let b = kx.tr_mul(y);
    match a.clone().cholesky() {
        Some(c) => c.solve(&b),
        None => {
            log::warn!("fixed-effect design is rank deficient; using the pseudo-inverse");
            a.pseudo_inverse(1e-10).map(|p| p * b).unwrap_or_else(|_| DVector::zeros(x.ncols()))
        }
    }
}

/// Draws `L·u` with `L` the jittered Cholesky factor of the Gram matrix and `u`
/// standard normal from the seeded generator.
pub fn sample_prior(kernel: &Kernel, inputs: &[f64], seed: u64) -> Result<Vec<f64>> {
    let gram = kernel.gram(inputs, 0.0)?;
    let l = linalg::factorize(&gram, false, || kernel.to_string())?.l();
    let mut r = rng::rng(seed);
    let u = DVector::from_vec(rng::standard_normals(&mut r, inputs.len()));
    Ok((l * u).iter().copied().collect())
}

/// A parametric family of training covariances. Parameters are on their natural
/// (positive) scale; inference works on their logarithms.
pub trait CovarianceFamily: Sync {
    fn param_names(&self) -> Vec<String>;
    /// Training covariance (noise excluded) at `params`.
    fn gram(&self, params: &[f64]) -> Result<DMatrix<f64>>;

    fn n_params(&self) -> usize {
        self.param_names().len()
    }
}

/// A single squared-exponential kernel over scalar inputs; parameters `[eta, rho]`.
#[derive(Debug, Clone)]
pub struct SeFamily {
    pub inputs: Vec<f64>,
}

impl CovarianceFamily for SeFamily {
    fn param_names(&self) -> Vec<String> {
        vec!["eta".into(), "rho".into()]
    }

    fn gram(&self, params: &[f64]) -> Result<DMatrix<f64>> {
        Kernel::Se(SeHyper::new(params[0], params[1])?).gram(&self.inputs, 0.0)
    }
}

impl SeFamily {
    /// Bounds `eta ∈ [1e-3, 1e3]·sd(y)`, `rho ∈ [1e-2, 1e1]·range(x)`, `sigma ∈ [1e-4, 1e1]·sd(y)`.
    pub fn default_bounds(&self, targets: &[f64]) -> HyperBounds {
        let sd = sample_sd(targets).max(1e-12);
        let range = value_range(&self.inputs).max(1e-12);
        HyperBounds::new(vec![(1e-3 * sd, 1e3 * sd), (1e-2 * range, 1e1 * range)], (1e-4 * sd, 1e1 * sd))
    }

    /// Log-normal priors with medians `sd(y)`, `range(x)/4`, `sd(y)/4`, log-sd 1.
    pub fn default_prior(&self, targets: &[f64]) -> HyperPrior {
        let sd = sample_sd(targets).max(1e-12);
        let range = value_range(&self.inputs).max(1e-12);
        HyperPrior { medians: vec![sd, 0.25 * range, 0.25 * sd], log_sd: vec![1.0; 3] }
    }
}

/// Box bounds on kernel parameters and the noise sd, natural scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperBounds {
    pub kernel: Vec<(f64, f64)>,
    pub sigma: (f64, f64),
}

impl HyperBounds {
    pub fn new(kernel: Vec<(f64, f64)>, sigma: (f64, f64)) -> Self {
        HyperBounds { kernel, sigma }
    }

    fn log_bounds(&self) -> Vec<Bound> {
        self.kernel
            .iter()
            .chain(std::iter::once(&self.sigma))
            .map(|&(lo, hi)| Bound::new(lo.ln(), hi.ln()))
            .collect()
    }
}

/// Independent log-normal priors on kernel parameters followed by sigma.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperPrior {
    pub medians: Vec<f64>,
    pub log_sd: Vec<f64>,
}

impl HyperPrior {
    /// Log density of the log-parameters (normal in log space).
    pub fn log_density(&self, log_params: &[f64]) -> f64 {
        log_params
            .iter()
            .zip(self.medians.iter().zip(&self.log_sd))
            .map(|(&th, (&m, &s))| {
                let z = (th - m.ln()) / s;
                -0.5 * z * z - s.ln() - 0.5 * (2.0 * PI).ln()
            })
            .sum()
    }
}

/// One hyperparameter setting: kernel parameters and the noise sd.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperSample {
    pub params: Vec<f64>,
    pub sigma: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    PointEstimate,
    Metropolis,
}

/// Equally weighted hyperparameter draws.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperDraws {
    pub draws: Vec<HyperSample>,
    pub provenance: Provenance,
    pub acceptance_rate: Option<f64>,
}

impl HyperDraws {
    pub fn point(sample: HyperSample) -> Self {
        HyperDraws { draws: vec![sample], provenance: Provenance::PointEstimate, acceptance_rate: None }
    }
}

/// Result of a point fit.
#[derive(Debug, Clone, PartialEq)]
pub struct PointFit {
    pub sample: HyperSample,
    pub lml: f64,
    /// Restarts whose every evaluation failed to factorize.
    pub failed_restarts: usize,
}

/// Log marginal likelihood at natural-scale `params` and `sigma`; `-inf` on factorization failure.
pub fn lml_at<F: CovarianceFamily + ?Sized>(
    family: &F,
    targets: &[f64],
    design: Option<&DMatrix<f64>>,
    params: &[f64],
    sigma: f64,
) -> f64 {
    family
        .gram(params)
        .and_then(|g| GpPosterior::from_gram(g, targets, sigma, design.cloned(), "lml"))
        .map(|gp| gp.log_marginal_likelihood())
        .unwrap_or(f64::NEG_INFINITY)
}

fn split_log(theta: &[f64]) -> (Vec<f64>, f64) {
    let n = theta.len() - 1;
    (theta[..n].iter().map(|v| v.exp()).collect(), theta[n].exp())
}

/// Maximizes the log marginal likelihood over log-hyperparameters with a
/// bounded simplex search from `restarts` seeded starts.
pub fn fit_point<F: CovarianceFamily + ?Sized>(
    family: &F,
    targets: &[f64],
    design: Option<&DMatrix<f64>>,
    bounds: &HyperBounds,
    restarts: usize,
    seed: u64,
) -> Result<PointFit> {
    if targets.len() < 3 {
        return Err(Error::Precondition(format!("need at least 3 observations, got {}", targets.len())));
    }
    if bounds.kernel.len() != family.n_params() {
        return Err(Error::domain("bounds do not match the covariance family"));
    }
    let lb = bounds.log_bounds();
    let starts = optim::multistart_points(&lb, restarts.max(1), seed);
    let objective = |theta: &[f64]| {
        let (p, s) = split_log(theta);
        -lml_at(family, targets, design, &p, s)
    };
    let opts = NelderMeadOptions { max_evals: 400 * (lb.len() + 1), f_tol: 1e-9, x_tol: 1e-5, initial_step: 0.15 };
    let results: Vec<optim::Minimum> = {
        use rayon::prelude::*;
        starts.par_iter().map(|s| optim::nelder_mead(objective, s, &lb, &opts)).collect()
    };
    let failed_restarts = results.iter().filter(|m| !m.f.is_finite()).count();
    let best = results
        .into_iter()
        .filter(|m| m.f.is_finite())
        .reduce(|a, b| if b.f < a.f { b } else { a })
        .ok_or_else(|| Error::Fit(format!("all {} restarts failed to factorize", restarts.max(1))))?;
    let (params, sigma) = split_log(&best.x);
    Ok(PointFit { sample: HyperSample { params, sigma }, lml: -best.f, failed_restarts })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetropolisConfig {
    pub chain_length: usize,
    pub burn_in: usize,
    /// Keep every `thin`-th post-burn-in state.
    pub thin: usize,
    pub target_acceptance: f64,
}

impl Default for MetropolisConfig {
    fn default() -> Self {
        MetropolisConfig { chain_length: 3000, burn_in: 1000, thin: 20, target_acceptance: 0.3 }
    }
}

/// Output of a raw random-walk Metropolis run over log-parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Chain {
    pub states: Vec<Vec<f64>>,
    pub acceptance_rate: f64,
    pub final_scale: f64,
}

/// Adaptive random-walk Metropolis on an unnormalized log density. The
/// isotropic proposal scale is tuned toward the target acceptance during
/// burn-in in batches of 50 and frozen afterwards. Proposals outside `bounds`
/// are rejected.
pub fn metropolis<T>(log_target: T, start: &[f64], bounds: &[Bound], cfg: &MetropolisConfig, seed: u64) -> Result<Chain>
where
    T: Fn(&[f64]) -> f64,
{
    if cfg.chain_length <= cfg.burn_in {
        return Err(Error::Precondition("chain_length must exceed burn_in".into()));
    }
    let d = start.len();
    let mut r = rng::rng(seed);
    let mut x = start.to_vec();
    let mut lp = log_target(&x);
    if !lp.is_finite() {
        return Err(Error::Sampler("log target is not finite at the start point".into()));
    }
    let mut scale = 2.38 / (d as f64).sqrt() * 0.5;
    let (mut batch_acc, mut batch_n) = (0usize, 0usize);
    let (mut acc_post, mut n_post) = (0usize, 0usize);
    let mut total_acc = 0usize;
    let mut states = Vec::new();
    let thin = cfg.thin.max(1);
    for iter in 0..cfg.chain_length {
        let z = rng::standard_normals(&mut r, d);
        let prop: Vec<f64> = x.iter().zip(&z).map(|(a, e)| a + scale * e).collect();
        let inside = prop.iter().zip(bounds).all(|(v, b)| *v >= b.lo && *v <= b.hi);
        let lp_prop = if inside { log_target(&prop) } else { f64::NEG_INFINITY };
        let u: f64 = r.random();
        let accepted = lp_prop.is_finite() && u.ln() < lp_prop - lp;
        if accepted {
            x = prop;
            lp = lp_prop;
            total_acc += 1;
        }
        if iter < cfg.burn_in {
            batch_n += 1;
            batch_acc += accepted as usize;
            if batch_n == 50 {
                let rate = batch_acc as f64 / 50.0;
                scale *= (2.0 * (rate - cfg.target_acceptance)).exp();
                batch_n = 0;
                batch_acc = 0;
            }
        } else {
            n_post += 1;
            acc_post += accepted as usize;
            if (iter - cfg.burn_in) % thin == 0 {
                states.push(x.clone());
            }
        }
    }
    if total_acc == 0 {
        return Err(Error::Sampler(format!(
            "no proposals accepted in {} iterations (final scale {scale:.3e}, start log density {lp:.4})",
            cfg.chain_length
        )));
    }
    Ok(Chain { states, acceptance_rate: acc_post as f64 / n_post.max(1) as f64, final_scale: scale })
}

/// Posterior draws of the hyperparameters under log-normal priors. The chain starts at the
/// posterior mode, searched from the prior medians (clamped into the bounds) and a few seeded starts.
pub fn fit_metropolis<F: CovarianceFamily + ?Sized>(
    family: &F,
    targets: &[f64],
    design: Option<&DMatrix<f64>>,
    bounds: &HyperBounds,
    prior: &HyperPrior,
    cfg: &MetropolisConfig,
    seed: u64,
) -> Result<HyperDraws> {
    let lb = bounds.log_bounds();
    if prior.medians.len() != lb.len() || prior.log_sd.len() != lb.len() {
        return Err(Error::domain("prior does not match the covariance family"));
    }
    let median: Vec<f64> = prior.medians.iter().zip(&lb).map(|(m, b)| m.ln().clamp(b.lo, b.hi)).collect();
    let target = |theta: &[f64]| {
        let (p, s) = split_log(theta);
        lml_at(family, targets, design, &p, s) + prior.log_density(theta)
    };
    let mut starts = vec![median.clone()];
    starts.extend(optim::multistart_points(&lb, 3, rng::derive_seed(seed, &[0])));
    let opts = NelderMeadOptions { max_evals: 200 * (lb.len() + 1), f_tol: 1e-7, x_tol: 1e-4, initial_step: 0.15 };
    let mode = optim::multistart(|th: &[f64]| -target(th), &starts, &lb, &opts)
        .filter(|m| m.f.is_finite())
        .map_or(median, |m| m.x);
    let chain = metropolis(target, &mode, &lb, cfg, rng::derive_seed(seed, &[1]))?;
    let draws = chain
        .states
        .iter()
        .map(|th| {
            let (params, sigma) = split_log(th);
            HyperSample { params, sigma }
        })
        .collect();
    Ok(HyperDraws { draws, provenance: Provenance::Metropolis, acceptance_rate: Some(chain.acceptance_rate) })
}

pub fn sample_mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Sample standard deviation with the `n − 1` denominator (0 for fewer than two values).
pub fn sample_sd(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = sample_mean(v);
    (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

pub fn value_range(v: &[f64]) -> f64 {
    let (lo, hi) = v.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)));
    hi - lo
}
