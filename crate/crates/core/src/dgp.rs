//! Synthetic data: AR(1) spending, the three data-generating families used by
//! the conflation study, and the two named illustrative datasets.

use std::f64::consts::PI;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::{Channel, Dataset};
use crate::error::{Error, Result};
use crate::gp::{sample_prior, sample_sd, value_range};
use crate::kernels::Kernel;
use crate::rng::{self, derive_seed};
use crate::transforms::{adstock, hill, HillParams, StockSpec};

/// AR(1) spending `x_t ~ N(γ0 + γ1·x_{t−1}, τ²)`, floored at `clamp_floor`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpendingSpec {
    pub gamma0: f64,
    pub gamma1: f64,
    pub tau: f64,
    pub x0: f64,
    pub periods: usize,
    /// Use `f64::NEG_INFINITY` to disable clamping.
    #[serde(default)]
    pub clamp_floor: f64,
}

impl SpendingSpec {
    /// Stationary-mean parameterization: `γ0 = mean·(1 − γ1)`, starting at the mean.
    pub fn ar1(mean: f64, gamma1: f64, tau: f64, periods: usize) -> Self {
        SpendingSpec { gamma0: mean * (1.0 - gamma1), gamma1, tau, x0: mean, periods, clamp_floor: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau >= 0.0) {
            return Err(Error::domain(format!("transition sd must be nonnegative, got {}", self.tau)));
        }
        if self.periods < 2 {
            return Err(Error::domain("spending needs at least 2 periods"));
        }
        Ok(())
    }
}

pub fn gen_spending(spec: &SpendingSpec, seed: u64) -> Result<Vec<f64>> {
    spec.validate()?;
    let mut r = rng::rng(seed);
    let mut x = Vec::with_capacity(spec.periods);
    x.push(spec.x0);
    let mut clamped = 0usize;
    for t in 1..spec.periods {
        let mean = spec.gamma0 + spec.gamma1 * x[t - 1];
        let draw = if spec.tau > 0.0 {
            Normal::new(mean, spec.tau).expect("positive sd").sample(&mut r)
        } else {
            mean
        };
        if draw < spec.clamp_floor {
            clamped += 1;
        }
        x.push(draw.max(spec.clamp_floor));
    }
    if clamped > 0 {
        log::debug!("spending clamped at {} in {clamped} of {} periods", spec.clamp_floor, spec.periods);
    }
    Ok(x)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", deny_unknown_fields)]
pub enum DgpKind {
    /// `y = α + f(x)`, `f ~ GP(0, SE(η, ρ))` with `ρ = rho_ratio·range(x)`.
    NonlinearGp { eta: f64, rho_ratio: f64 },
    /// `y = α + β(t)·x`, `β ~ GP(0, SE(η, ρ))` with `ρ = rho_ratio·range(t)`.
    TimeVaryingGp { eta: f64, rho_ratio: f64 },
    /// `y = α + A·Hill(x; k, s)` with `k = k_ratio·range(x)`.
    Hill { shape: f64, k_ratio: f64, amplitude: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DgpSpec {
    pub kind: DgpKind,
    /// Noise sd as a multiple of the sd of the deterministic component.
    pub noise_ratio: f64,
    #[serde(default)]
    pub carryover: Option<StockSpec>,
    #[serde(default)]
    pub intercept: f64,
}

impl DgpSpec {
    pub fn validate(&self) -> Result<()> {
        let (eta_ok, ratio_ok) = match self.kind {
            DgpKind::NonlinearGp { eta, rho_ratio } | DgpKind::TimeVaryingGp { eta, rho_ratio } => {
                (eta > 0.0, rho_ratio > 0.0)
            }
            DgpKind::Hill { shape, k_ratio, .. } => (shape > 0.0, k_ratio > 0.0),
        };
        if !eta_ok || !ratio_ok {
            return Err(Error::domain(format!("invalid DGP parameters {:?}", self.kind)));
        }
        if !(self.noise_ratio >= 0.0) {
            return Err(Error::domain("noise ratio must be nonnegative"));
        }
        if let Some(c) = &self.carryover {
            c.validate()?;
        }
        Ok(())
    }
}

/// What generated `y`: the deterministic part and the noise, plus the latent function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    pub deterministic: Vec<f64>,
    pub noise: Vec<f64>,
    /// `f(x_t)` for static DGPs.
    pub function_values: Option<Vec<f64>>,
    /// `β_t` for time-varying DGPs.
    pub coefficients: Option<Vec<f64>>,
    pub sigma: f64,
    /// Resolved kernel lengthscale (GP DGPs) or Hill inflection point.
    pub resolved_scale: Option<f64>,
    /// Which input the scale was resolved against: `"x"` or `"t"`.
    pub resolved_against: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimDataset {
    /// Periods `1..=T`.
    pub periods: Vec<i64>,
    /// Raw spend including the `L` leading carryover periods.
    pub spend_raw: Vec<f64>,
    /// Spend after carryover, aligned with `periods`.
    pub spend: Vec<f64>,
    pub y: Vec<f64>,
    pub truth: Truth,
    pub seed: u64,
}

impl SimDataset {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    /// Spend as an analyst would observe it, before carryover.
    pub fn observed_spend(&self) -> &[f64] {
        &self.spend_raw[self.spend_raw.len() - self.spend.len()..]
    }

    /// Single-channel dataset on the observed (pre-carryover) spend.
    pub fn to_dataset(&self) -> Dataset {
        Dataset::new(self.periods.clone(), self.y.clone(), vec![Channel::new("x", self.observed_spend().to_vec())], vec![])
            .expect("simulated data satisfies the dataset schema")
    }

    /// The first `n` periods.
    pub fn truncated(&self, n: usize) -> SimDataset {
        let lead = self.spend_raw.len() - self.spend.len();
        let cut = |v: &Vec<f64>| v[..n].to_vec();
        SimDataset {
            periods: self.periods[..n].to_vec(),
            spend_raw: self.spend_raw[..lead + n].to_vec(),
            spend: cut(&self.spend),
            y: cut(&self.y),
            truth: Truth {
                deterministic: cut(&self.truth.deterministic),
                noise: cut(&self.truth.noise),
                function_values: self.truth.function_values.as_ref().map(cut),
                coefficients: self.truth.coefficients.as_ref().map(cut),
                ..self.truth.clone()
            },
            seed: self.seed,
        }
    }
}

fn add_noise(deterministic: &[f64], noise_ratio: f64, seed: u64) -> (Vec<f64>, Vec<f64>, f64) {
    let sigma = noise_ratio * sample_sd(deterministic);
    let mut r = rng::rng(seed);
    let z = rng::standard_normals(&mut r, deterministic.len());
    let noise: Vec<f64> = z.iter().map(|e| sigma * e).collect();
    let y = deterministic.iter().zip(&noise).map(|(d, e)| d + e).collect();
    (y, noise, sigma)
}

/// Draws spending, applies carryover, draws the response function and adds noise.
/// Spending is drawn for `T + L` periods so that `T` remain after carryover.
pub fn gen_dataset(dgp: &DgpSpec, spending: &SpendingSpec, seed: u64) -> Result<SimDataset> {
    dgp.validate()?;
    let lags = dgp.carryover.map_or(0, |c| c.lags);
    let t_len = spending.periods;
    let raw_spec = SpendingSpec { periods: t_len + lags, ..*spending };
    let spend_raw = gen_spending(&raw_spec, derive_seed(seed, &[1]))?;
    let spend = match &dgp.carryover {
        Some(c) => adstock(&spend_raw, c)?.values,
        None => spend_raw.clone(),
    };
    let periods: Vec<i64> = (1..=t_len as i64).collect();
    let t: Vec<f64> = periods.iter().map(|&p| p as f64).collect();
    let x_range = value_range(&spend);
    let degenerate = |what: &str, range: f64| {
        Error::domain(format!("cannot resolve {what} against a degenerate input range ({range})"))
    };

    let mut function_values = None;
    let mut coefficients = None;
    let (deterministic, scale, against): (Vec<f64>, f64, &str) = match dgp.kind {
        DgpKind::NonlinearGp { eta, rho_ratio } => {
            if !(x_range > 0.0) {
                return Err(degenerate("lengthscale", x_range));
            }
            let rho = rho_ratio * x_range;
            let f = sample_prior(&Kernel::se(eta, rho)?, &spend, derive_seed(seed, &[2]))?;
            let d = f.iter().map(|v| dgp.intercept + v).collect();
            function_values = Some(f);
            (d, rho, "x")
        }
        DgpKind::TimeVaryingGp { eta, rho_ratio } => {
            let t_range = value_range(&t);
            if !(t_range > 0.0) {
                return Err(degenerate("lengthscale", t_range));
            }
            let rho = rho_ratio * t_range;
            let beta = sample_prior(&Kernel::se(eta, rho)?, &t, derive_seed(seed, &[2]))?;
            let d = beta.iter().zip(&spend).map(|(b, x)| dgp.intercept + b * x).collect();
            coefficients = Some(beta);
            (d, rho, "t")
        }
        DgpKind::Hill { shape, k_ratio, amplitude } => {
            if !(x_range > 0.0) {
                return Err(degenerate("inflection point", x_range));
            }
            let k = k_ratio * x_range;
            let p = HillParams::new(k, shape)?;
            let f: Vec<f64> = spend.iter().map(|&x| hill(x, p).map(|h| amplitude * h)).collect::<Result<_>>()?;
            let d = f.iter().map(|v| dgp.intercept + v).collect();
            function_values = Some(f);
            (d, k, "x")
        }
    };
    log::trace!("resolved scale {scale} against {against}");
    let (y, noise, sigma) = add_noise(&deterministic, dgp.noise_ratio, derive_seed(seed, &[3]));
    Ok(SimDataset {
        periods,
        spend_raw,
        spend,
        y,
        truth: Truth {
            deterministic,
            noise,
            function_values,
            coefficients,
            sigma,
            resolved_scale: Some(scale),
            resolved_against: Some(against.to_string()),
        },
        seed,
    })
}

/// Constants of the cyclic-effectiveness example: `β_t = b0 + b1·sin(2πt/P)`,
/// `x_t = c0 + c1·β_{t−ℓ} + N(0, x_noise²)`, `y_t = β_t·x_t + N(0, y_noise²)`.
/// Calibrated for a clear single-valued scatter; these are not published values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IntroConfig {
    pub periods: usize,
    pub cycle: f64,
    pub lag: usize,
    pub b0: f64,
    pub b1: f64,
    pub c0: f64,
    pub c1: f64,
    pub x_noise: f64,
    pub y_noise: f64,
}

impl Default for IntroConfig {
    fn default() -> Self {
        IntroConfig {
            periods: 100,
            cycle: 24.0,
            lag: 2,
            b0: 1.0,
            b1: 0.6,
            c0: -20.0,
            c1: 75.0,
            x_noise: 2.0,
            y_noise: 4.0,
        }
    }
}

impl IntroConfig {
    pub fn beta(&self, t: f64) -> f64 {
        self.b0 + self.b1 * (2.0 * PI * t / self.cycle).sin()
    }
}

pub fn gen_intro_example(seed: u64) -> Result<SimDataset> {
    gen_intro_with(&IntroConfig::default(), seed)
}

pub fn gen_intro_with(cfg: &IntroConfig, seed: u64) -> Result<SimDataset> {
    let n = cfg.periods;
    let mut rx = rng::rng(derive_seed(seed, &[1]));
    let zx = rng::standard_normals(&mut rx, n);
    let periods: Vec<i64> = (1..=n as i64).collect();
    let beta: Vec<f64> = periods.iter().map(|&t| cfg.beta(t as f64)).collect();
    let spend: Vec<f64> = periods
        .iter()
        .zip(&zx)
        .map(|(&t, e)| (cfg.c0 + cfg.c1 * cfg.beta((t - cfg.lag as i64) as f64) + cfg.x_noise * e).max(0.0))
        .collect();
    let deterministic: Vec<f64> = beta.iter().zip(&spend).map(|(b, x)| b * x).collect();
    let mut ry = rng::rng(derive_seed(seed, &[3]));
    let noise: Vec<f64> = rng::standard_normals(&mut ry, n).iter().map(|e| cfg.y_noise * e).collect();
    let y = deterministic.iter().zip(&noise).map(|(d, e)| d + e).collect();
    Ok(SimDataset {
        periods,
        spend_raw: spend.clone(),
        spend,
        y,
        truth: Truth {
            deterministic,
            noise,
            function_values: None,
            coefficients: Some(beta),
            sigma: cfg.y_noise,
            resolved_scale: None,
            resolved_against: None,
        },
        seed,
    })
}

/// Sigmoid response in log spend:
/// `y = y_min + (y_max − y_min) / (1 + exp(−(ln x − ln midpoint)/width))`.
/// Calibrated constants, not published values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SigmoidConfig {
    pub periods: usize,
    pub spend_mean: f64,
    pub gamma1: f64,
    pub tau: f64,
    pub midpoint: f64,
    pub width: f64,
    pub y_min: f64,
    pub y_max: f64,
    pub noise_ratio: f64,
}

impl Default for SigmoidConfig {
    fn default() -> Self {
        SigmoidConfig {
            periods: 100,
            spend_mean: 8500.0,
            gamma1: 0.95,
            tau: 400.0,
            midpoint: 10_000.0,
            width: 0.15,
            y_min: 30_000.0,
            y_max: 38_000.0,
            noise_ratio: 0.25,
        }
    }
}

impl SigmoidConfig {
    pub fn response(&self, x: f64) -> f64 {
        let u = (x.max(f64::MIN_POSITIVE).ln() - self.midpoint.ln()) / self.width;
        self.y_min + (self.y_max - self.y_min) / (1.0 + (-u).exp())
    }
}

/// Seed of the shipped sigmoid case.
pub const SIGMOID_SEED: u64 = 32;

pub fn gen_sigmoid_case(seed: u64) -> Result<SimDataset> {
    gen_sigmoid_with(&SigmoidConfig::default(), seed)
}

pub fn gen_sigmoid_with(cfg: &SigmoidConfig, seed: u64) -> Result<SimDataset> {
    let mut spec = SpendingSpec::ar1(cfg.spend_mean, cfg.gamma1, cfg.tau, cfg.periods);
    spec.clamp_floor = 1.0;
    let spend = gen_spending(&spec, derive_seed(seed, &[1]))?;
    let f: Vec<f64> = spend.iter().map(|&x| cfg.response(x)).collect();
    let (y, noise, sigma) = add_noise(&f, cfg.noise_ratio, derive_seed(seed, &[3]));
    Ok(SimDataset {
        periods: (1..=cfg.periods as i64).collect(),
        spend_raw: spend.clone(),
        spend,
        y,
        truth: Truth {
            deterministic: f.clone(),
            noise,
            function_values: Some(f),
            coefficients: None,
            sigma,
            resolved_scale: None,
            resolved_against: None,
        },
        seed,
    })
}
