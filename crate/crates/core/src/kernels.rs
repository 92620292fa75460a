//! Covariance functions and their composition.
//!
//! Every kernel here takes scalar inputs: spend levels for the static
//! nonlinear model, periods for the time-varying one. Multi-input models
//! build their total covariance by summing Gram matrices computed over
//! different input columns.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Squared-exponential hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeHyper {
    /// Output scale, in the units of the modeled function.
    pub eta: f64,
    /// Lengthscale, in the units of the kernel input.
    pub rho: f64,
}

impl SeHyper {
    pub fn new(eta: f64, rho: f64) -> Result<Self> {
        let h = SeHyper { eta, rho };
        h.validate()?;
        Ok(h)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(Error::domain(format!("SE amplitude must be positive, got {}", self.eta)));
        }
        if !(self.rho > 0.0 && self.rho.is_finite()) {
            return Err(Error::domain(format!("SE lengthscale must be positive, got {}", self.rho)));
        }
        Ok(())
    }

    #[inline]
    pub fn eval(&self, z: f64, z2: f64) -> f64 {
        let d = z - z2;
        self.eta * self.eta * (-(d * d) / (2.0 * self.rho * self.rho)).exp()
    }
}

/// Periodic kernel hyperparameters; `cycle` is measured in periods.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeriodicHyper {
    pub eta: f64,
    pub rho: f64,
    pub cycle: f64,
}

impl PeriodicHyper {
    pub fn new(eta: f64, rho: f64, cycle: f64) -> Result<Self> {
        let h = PeriodicHyper { eta, rho, cycle };
        h.validate()?;
        Ok(h)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("amplitude", self.eta), ("lengthscale", self.rho), ("cycle", self.cycle)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::domain(format!("periodic {name} must be positive, got {v}")));
            }
        }
        Ok(())
    }

    #[inline]
    pub fn eval(&self, z: f64, z2: f64) -> f64 {
        let s = (PI * (z - z2).abs() / self.cycle).sin();
        self.eta * self.eta * (-2.0 * s * s / (self.rho * self.rho)).exp()
    }
}

/// A scalar series indexed by consecutive integer periods.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeriodSeries {
    pub first_period: i64,
    pub values: Vec<f64>,
}

impl PeriodSeries {
    pub fn new(first_period: i64, values: Vec<f64>) -> Self {
        PeriodSeries { first_period, values }
    }

    pub fn last_period(&self) -> i64 {
        self.first_period + self.values.len() as i64 - 1
    }

    /// Value at `period`; the period must be integer-valued and covered.
    pub fn get(&self, period: f64) -> Result<f64> {
        if period.fract() != 0.0 {
            return Err(Error::domain(format!("period {period} is not an integer")));
        }
        let idx = period as i64 - self.first_period;
        if idx < 0 || idx as usize >= self.values.len() {
            return Err(Error::domain(format!(
                "no scale value for period {period} (series covers {}..={})",
                self.first_period,
                self.last_period()
            )));
        }
        Ok(self.values[idx as usize])
    }
}

/// A positive-semidefinite covariance function on scalar inputs.
#[derive(Debug, Clone, PartialEq)]
pub enum Kernel {
    Se(SeHyper),
    Periodic(PeriodicHyper),
    /// Smooth trend plus recurring season.
    TrendSeason { trend: SeHyper, season: PeriodicHyper },
    /// `scale(t)·scale(t')·k_SE(t, t')`: the covariance of `β(t)·x_t` when `β ~ GP(0, k_SE)`.
    ScaledTime { se: SeHyper, scale: Arc<PeriodSeries> },
    Sum(Vec<Kernel>),
}

impl Kernel {
    pub fn se(eta: f64, rho: f64) -> Result<Self> {
        Ok(Kernel::Se(SeHyper::new(eta, rho)?))
    }

    pub fn periodic(eta: f64, rho: f64, cycle: f64) -> Result<Self> {
        Ok(Kernel::Periodic(PeriodicHyper::new(eta, rho, cycle)?))
    }

    pub fn scaled_time(se: SeHyper, scale: Arc<PeriodSeries>) -> Result<Self> {
        se.validate()?;
        Ok(Kernel::ScaledTime { se, scale })
    }

    /// The same kernel with every `ScaledTime` member reading from `scale`.
    /// Used at prediction time, when the caller supplies spend for new periods.
    pub fn with_scale(&self, scale: &Arc<PeriodSeries>) -> Kernel {
        match self {
            Kernel::ScaledTime { se, .. } => Kernel::ScaledTime { se: *se, scale: Arc::clone(scale) },
            Kernel::Sum(ks) => Kernel::Sum(ks.iter().map(|k| k.with_scale(scale)).collect()),
            other => other.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Kernel::Se(h) => h.validate(),
            Kernel::Periodic(h) => h.validate(),
            Kernel::TrendSeason { trend, season } => {
                trend.validate()?;
                season.validate()
            }
            Kernel::ScaledTime { se, .. } => se.validate(),
            Kernel::Sum(ks) => {
                if ks.is_empty() {
                    return Err(Error::domain("empty kernel sum"));
                }
                ks.iter().try_for_each(Kernel::validate)
            }
        }
    }

    /// Prior variance at `z`.
    pub fn variance(&self, z: f64) -> Result<f64> {
        self.evaluate(z, z)
    }

    pub fn evaluate(&self, z: f64, z2: f64) -> Result<f64> {
        if !z.is_finite() || !z2.is_finite() {
            return Err(Error::domain(format!("non-finite kernel input ({z}, {z2})")));
        }
        self.eval_unchecked(z, z2)
    }

    fn eval_unchecked(&self, z: f64, z2: f64) -> Result<f64> {
        Ok(match self {
            Kernel::Se(h) => h.eval(z, z2),
            Kernel::Periodic(h) => h.eval(z, z2),
            Kernel::TrendSeason { trend, season } => trend.eval(z, z2) + season.eval(z, z2),
            Kernel::ScaledTime { se, scale } => scale.get(z)? * scale.get(z2)? * se.eval(z, z2),
            Kernel::Sum(ks) => {
                let mut acc = 0.0;
                for k in ks {
                    acc += k.eval_unchecked(z, z2)?;
                }
                acc
            }
        })
    }

    /// Symmetric Gram matrix over `inputs` with `jitter` added to the diagonal.
    pub fn gram(&self, inputs: &[f64], jitter: f64) -> Result<DMatrix<f64>> {
        if !(jitter >= 0.0) {
            return Err(Error::domain(format!("jitter must be nonnegative, got {jitter}")));
        }
        check_finite(inputs)?;
        let n = inputs.len();
        let mut g = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                let v = self.eval_unchecked(inputs[i], inputs[j])?;
                g[(i, j)] = v;
                g[(j, i)] = v;
            }
            g[(i, i)] += jitter;
        }
        Ok(g)
    }

    /// Rectangular covariance with entry `(i, j) = k(a_i, b_j)`.
    pub fn cross(&self, a: &[f64], b: &[f64]) -> Result<DMatrix<f64>> {
        check_finite(a)?;
        check_finite(b)?;
        let mut m = DMatrix::zeros(a.len(), b.len());
        for (i, &ai) in a.iter().enumerate() {
            for (j, &bj) in b.iter().enumerate() {
                m[(i, j)] = self.eval_unchecked(ai, bj)?;
            }
        }
        Ok(m)
    }
}

impl fmt::Display for Kernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Kernel::Se(h) => write!(f, "SE(eta={:.4}, rho={:.4})", h.eta, h.rho),
            Kernel::Periodic(h) => {
                write!(f, "Periodic(eta={:.4}, rho={:.4}, c={})", h.eta, h.rho, h.cycle)
            }
            Kernel::TrendSeason { trend, season } => write!(
                f,
                "TrendSeason(SE(eta={:.4}, rho={:.4}) + Periodic(eta={:.4}, rho={:.4}, c={}))",
                trend.eta, trend.rho, season.eta, season.rho, season.cycle
            ),
            Kernel::ScaledTime { se, scale } => write!(
                f,
                "ScaledTime(SE(eta={:.4}, rho={:.4}), periods {}..={})",
                se.eta,
                se.rho,
                scale.first_period,
                scale.last_period()
            ),
            Kernel::Sum(ks) => {
                write!(f, "Sum(")?;
                for (i, k) in ks.iter().enumerate() {
                    if i > 0 {
                        write!(f, " + ")?;
                    }
                    write!(f, "{k}")?;
                }
                write!(f, ")")
            }
        }
    }
}

fn check_finite(v: &[f64]) -> Result<()> {
    match v.iter().position(|x| !x.is_finite()) {
        Some(i) => Err(Error::domain(format!("non-finite kernel input at index {i}"))),
        None => Ok(()),
    }
}
