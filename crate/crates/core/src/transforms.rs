//! Media transforms: Hill saturation, AdStock carryover, the Koyck recursion
//! and a guarded logarithm.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HillParams {
    /// Inflection point, in spend units.
    pub k: f64,
    /// Shape; `s = 1` is the reach transformation `x / (x + k)`.
    pub s: f64,
}

impl HillParams {
    pub fn new(k: f64, s: f64) -> Result<Self> {
        if !(k > 0.0 && k.is_finite() && s > 0.0 && s.is_finite()) {
            return Err(Error::domain(format!("Hill parameters must be positive, got k={k}, s={s}")));
        }
        Ok(HillParams { k, s })
    }
}

/// `1 / (1 + (x/k)^(-s))`, with `hill(0) = 0` by continuity.
pub fn hill(x: f64, p: HillParams) -> Result<f64> {
    if x < 0.0 || x.is_nan() {
        return Err(Error::domain(format!("Hill input must be nonnegative, got {x}")));
    }
    if x == 0.0 {
        return Ok(0.0);
    }
    Ok(1.0 / (1.0 + (x / p.k).powf(-p.s)))
}

/// Which binomial coefficient the Pascal weights use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BinomialConvention {
    /// `C(ℓ+τ−1, τ)`, the form printed alongside the weights. Zero at `ℓ = 0`.
    #[default]
    Printed,
    /// `C(ℓ+τ−1, ℓ)`, the textbook negative-binomial PMF.
    Standard,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum StockFamily {
    Geometric,
    Pascal {
        shape: u32,
        #[serde(default)]
        convention: BinomialConvention,
    },
}

/// Carryover specification: decay, number of lags and weight family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StockSpec {
    pub lambda: f64,
    pub lags: usize,
    pub family: StockFamily,
}

impl StockSpec {
    pub fn geometric(lambda: f64, lags: usize) -> Self {
        StockSpec { lambda, lags, family: StockFamily::Geometric }
    }

    pub fn pascal(lambda: f64, lags: usize, shape: u32, convention: BinomialConvention) -> Self {
        StockSpec { lambda, lags, family: StockFamily::Pascal { shape, convention } }
    }

    /// No carryover: the identity transform.
    pub fn none() -> Self {
        Self::geometric(0.0, 0)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::domain(format!("decay must lie in [0, 1], got {}", self.lambda)));
        }
        if let StockFamily::Pascal { shape, .. } = self.family {
            if shape == 0 {
                return Err(Error::domain("Pascal shape must be a positive count"));
            }
        }
        Ok(())
    }
}

fn binomial(n: u64, k: u64) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Normalized lag weights `w_0..=w_L`, nonnegative and summing to 1.
pub fn stock_weights(spec: &StockSpec) -> Result<Vec<f64>> {
    let (raw, total) = raw_stock_weights(spec)?;
    Ok(raw.iter().map(|w| w / total).collect())
}

fn raw_stock_weights(spec: &StockSpec) -> Result<(Vec<f64>, f64)> {
    spec.validate()?;
    let lam = spec.lambda;
    let raw: Vec<f64> = (0..=spec.lags)
        .map(|l| match spec.family {
            // 0^0 = 1 under powi
            StockFamily::Geometric => lam.powi(l as i32),
            StockFamily::Pascal { shape, convention } => {
                let tau = shape as u64;
                let l = l as u64;
                let c = match convention {
                    BinomialConvention::Printed => binomial(l + tau - 1, tau),
                    BinomialConvention::Standard => binomial(l + tau - 1, l),
                };
                (1.0 - lam).powi(l as i32) * c
            }
        })
        .collect();
    let total: f64 = raw.iter().sum();
    if !(total > 0.0) {
        return Err(Error::domain(format!("stock weights for {spec:?} are all zero")));
    }
    Ok((raw, total))
}

/// A transformed series whose first value corresponds to input index `offset`.
#[derive(Debug, Clone, PartialEq)]
pub struct Stocked {
    pub values: Vec<f64>,
    pub offset: usize,
}

/// `out_t = Σ_ℓ w_ℓ x_{t−ℓ}` for every `t ≥ L`; the first `L` periods are dropped.
pub fn adstock(series: &[f64], spec: &StockSpec) -> Result<Stocked> {
    let (w, total) = raw_stock_weights(spec)?;
    let l = spec.lags;
    if series.len() <= l {
        return Err(Error::domain(format!("series of length {} is too short for {l} lags", series.len())));
    }
    let values = (l..series.len())
        .map(|t| w.iter().enumerate().map(|(lag, wl)| wl * series[t - lag]).sum::<f64>() / total)
        .collect();
    Ok(Stocked { values, offset: l })
}

/// One step of the Koyck recursion `stock_t = x_t + λ·stock_{t−1}`; requires `0 ≤ λ < 1`.
pub fn koyck_step(prev_stock: f64, x: f64, lambda: f64) -> f64 {
    debug_assert!((0.0..1.0).contains(&lambda));
    x + lambda * prev_stock
}

#[derive(Debug, Clone, PartialEq)]
pub struct Logged {
    pub values: Vec<f64>,
    /// True where the input was below the floor.
    pub floored: Vec<bool>,
}

/// `ln(max(v, floor))` elementwise.
pub fn log_guard(series: &[f64], floor: f64) -> Result<Logged> {
    if !(floor > 0.0) {
        return Err(Error::domain(format!("log floor must be positive, got {floor}")));
    }
    let floored: Vec<bool> = series.iter().map(|&v| !(v >= floor)).collect();
    let values = series.iter().map(|&v| if v >= floor { v.ln() } else { floor.ln() }).collect();
    Ok(Logged { values, floored })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn hill_examples() {
        let p = HillParams::new(3.0, 2.5).unwrap();
        assert_eq!(hill(3.0, p).unwrap(), 0.5);
        assert_eq!(hill(0.0, p).unwrap(), 0.0);
        assert!(hill(-1.0, p).is_err());
        let reach = HillParams::new(1.0, 1.0).unwrap();
        assert_eq!(hill(1.0, reach).unwrap(), 0.5);
        assert!(HillParams::new(0.0, 1.0).is_err());
    }

    #[test]
    fn hill_steep_shape_is_a_step() {
        let p = HillParams::new(10.0, 50.0).unwrap();
        assert!(hill(9.0, p).unwrap() < 0.1);
        assert!(hill(11.0, p).unwrap() > 0.9);
    }

    #[test]
    fn geometric_weights() {
        let w = stock_weights(&StockSpec::geometric(0.5, 2)).unwrap();
        assert_abs_diff_eq!(w[0], 4.0 / 7.0, epsilon = 1e-15);
        assert_abs_diff_eq!(w[1], 2.0 / 7.0, epsilon = 1e-15);
        assert_abs_diff_eq!(w[2], 1.0 / 7.0, epsilon = 1e-15);
        assert_eq!(stock_weights(&StockSpec::geometric(0.0, 3)).unwrap(), vec![1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn invalid_specs() {
        assert!(stock_weights(&StockSpec::geometric(1.5, 2)).is_err());
        assert!(stock_weights(&StockSpec::pascal(0.5, 2, 0, BinomialConvention::Printed)).is_err());
        // printed convention is zero at lag 0, so a zero-lag Pascal stock has no mass
        assert!(stock_weights(&StockSpec::pascal(0.5, 0, 2, BinomialConvention::Printed)).is_err());
    }

    #[test]
    fn adstock_examples() {
        let out = adstock(&[1.0, 2.0, 4.0], &StockSpec::geometric(0.5, 2)).unwrap();
        assert_eq!(out.offset, 2);
        assert_eq!(out.values, vec![3.0]);
        let x = [1.0, 5.0, 2.0, 7.0];
        let id = adstock(&x, &StockSpec::geometric(0.0, 2)).unwrap();
        assert_eq!(id.values, x[2..].to_vec());
        assert!(adstock(&[1.0, 2.0], &StockSpec::geometric(0.5, 2)).is_err());
        let c = adstock(&[3.5; 10], &StockSpec::geometric(0.7, 4)).unwrap();
        assert!(c.values.iter().all(|v| (v - 3.5).abs() < 1e-14));
    }

    #[test]
    fn koyck_matches_long_unnormalized_convolution() {
        let lam = 0.5;
        let x: Vec<f64> = (0..50).map(|t| ((t * 7 % 11) as f64) + 0.5).collect();
        let mut stock = 0.0;
        for (t, &xt) in x.iter().enumerate() {
            stock = koyck_step(stock, xt, lam);
            let direct: f64 = (0..=t).map(|l| lam.powi(l as i32) * x[t - l]).sum();
            assert!((stock - direct).abs() <= 1e-9);
        }
        assert_eq!(koyck_step(3.0, 2.0, 0.0), 2.0);
        assert_eq!(koyck_step(0.0, 2.0, 0.4), 2.0);
    }

    #[test]
    fn log_guard_examples() {
        let l = log_guard(&[std::f64::consts::E, 0.0, 2.0], 1e-6).unwrap();
        assert_abs_diff_eq!(l.values[0], 1.0, epsilon = 1e-15);
        assert_eq!(l.values[1], (1e-6f64).ln());
        assert_eq!(l.floored, vec![false, true, false]);
        assert!(log_guard(&[1.0], 0.0).is_err());
    }

    fn any_spec() -> impl Strategy<Value = StockSpec> {
        (0.0f64..=1.0, 0usize..8, 0u32..4, any::<bool>()).prop_map(|(lam, lags, shape, std)| {
            if shape == 0 {
                StockSpec::geometric(lam, lags)
            } else {
                let conv = if std { BinomialConvention::Standard } else { BinomialConvention::Printed };
                StockSpec::pascal(lam.min(0.99), lags.max(1), shape, conv)
            }
        })
    }

    proptest! {
        #[test]
        fn weights_normalized(spec in any_spec()) {
            let w = stock_weights(&spec).unwrap();
            prop_assert!((w.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            prop_assert!(w.iter().all(|v| *v >= 0.0));
        }

        #[test]
        fn adstock_linear_and_convex(
            spec in any_spec(),
            x in proptest::collection::vec(0.0f64..100.0, 10..30),
            z in proptest::collection::vec(0.0f64..100.0, 10..30),
            a in -3.0f64..3.0,
            b in -3.0f64..3.0,
        ) {
            let n = x.len().min(z.len());
            let (x, z) = (&x[..n], &z[..n]);
            let combo: Vec<f64> = x.iter().zip(z).map(|(p, q)| a * p + b * q).collect();
            let lhs = adstock(&combo, &spec).unwrap().values;
            let ax = adstock(x, &spec).unwrap().values;
            let az = adstock(z, &spec).unwrap().values;
            for i in 0..lhs.len() {
                prop_assert!((lhs[i] - (a * ax[i] + b * az[i])).abs() <= 1e-10);
            }
            let (lo, hi) = x.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| (l.min(*v), h.max(*v)));
            prop_assert!(ax.iter().all(|v| *v >= lo - 1e-12 && *v <= hi + 1e-12));
        }

        #[test]
        fn hill_monotone_bounded(k in 0.1f64..100.0, s in 0.1f64..10.0, x1 in 0.001f64..1000.0, dx in 0.001f64..100.0) {
            let p = HillParams::new(k, s).unwrap();
            let (a, b) = (hill(x1, p).unwrap(), hill(x1 + dx, p).unwrap());
            prop_assert!(a > 0.0 && a <= 1.0 && b > 0.0 && b <= 1.0);
            prop_assert!(b >= a);
        }

        #[test]
        fn reach_reduction(k in 0.01f64..100.0, x in 0.0f64..1000.0) {
            let v = hill(x, HillParams::new(k, 1.0).unwrap()).unwrap();
            prop_assert!((v - x / (x + k)).abs() <= 1e-12);
        }
    }
}
