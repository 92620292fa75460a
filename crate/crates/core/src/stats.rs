//! Ordinary least squares with classical inference.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::function::beta::beta_reg;

use crate::error::{Error, Result};

/// Two-sided p-value of a Student-t statistic, via the regularized incomplete beta function.
pub fn t_two_sided_p(t: f64, df: f64) -> f64 {
    if t.is_infinite() {
        return 0.0;
    }
    if t.is_nan() || !(df > 0.0) {
        return f64::NAN;
    }
    beta_reg(df / 2.0, 0.5, df / (df + t * t))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefRow {
    pub name: String,
    pub estimate: f64,
    pub std_error: f64,
    pub t: f64,
    pub p: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionTable {
    pub rows: Vec<CoefRow>,
    /// Columns dropped as aliased with earlier ones.
    pub dropped: Vec<String>,
    pub df: usize,
    pub residuals: Vec<f64>,
    pub r_squared: f64,
}

impl RegressionTable {
    pub fn row(&self, name: &str) -> Option<&CoefRow> {
        self.rows.iter().find(|r| r.name == name)
    }
}

/// OLS of `y` on the columns of `x`. Columns that are (numerically) linear
/// combinations of earlier columns are dropped with a warning.
pub fn regress(x: &DMatrix<f64>, y: &[f64], names: &[String]) -> Result<RegressionTable> {
    let n = y.len();
    if x.nrows() != n || x.ncols() != names.len() {
        return Err(Error::domain("design shape does not match targets and names"));
    }
    let mut keep: Vec<usize> = Vec::new();
    let mut dropped = Vec::new();
    for c in 0..x.ncols() {
        let mut trial = keep.clone();
        trial.push(c);
        let sub = x.select_columns(&trial);
        let sv = sub.clone().svd(false, false).singular_values;
        let max = sv.max();
        let min = sv.min();
        if max > 0.0 && min > 1e-10 * max {
            keep = trial;
        } else {
            log::warn!("column '{}' is aliased and was dropped", names[c]);
            dropped.push(names[c].clone());
        }
    }
    let p = keep.len();
    if n <= p {
        return Err(Error::domain(format!("{n} observations cannot identify {p} coefficients")));
    }
    let xs = x.select_columns(&keep);
    let yv = DVector::from_column_slice(y);
    let xtx = xs.tr_mul(&xs);
    let inv = xtx
        .clone()
        .cholesky()
        .map(|c| c.inverse())
        .ok_or_else(|| Error::domain("normal equations are singular"))?;
    let beta = &inv * xs.tr_mul(&yv);
    let resid = &yv - &xs * &beta;
    let df = n - p;
    let s2 = resid.norm_squared() / df as f64;
    let ym = y.iter().sum::<f64>() / n as f64;
    let tss: f64 = y.iter().map(|v| (v - ym).powi(2)).sum();
    let rows = keep
        .iter()
        .enumerate()
        .map(|(i, &c)| {
            let se = (s2 * inv[(i, i)]).sqrt();
            let t = if se > 0.0 {
                beta[i] / se
            } else if beta[i] == 0.0 {
                0.0
            } else {
                beta[i].signum() * f64::INFINITY
            };
            CoefRow { name: names[c].clone(), estimate: beta[i], std_error: se, t, p: t_two_sided_p(t, df as f64) }
        })
        .collect();
    Ok(RegressionTable {
        rows,
        dropped,
        df,
        residuals: resid.iter().copied().collect(),
        r_squared: if tss > 0.0 { 1.0 - resid.norm_squared() / tss } else { f64::NAN },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Two-sided p by Simpson integration of the t density over [|t|, 60] plus the analytic far tail bound.
    fn t_tail_by_quadrature(t: f64, df: f64) -> f64 {
        let ln_c = statrs::function::gamma::ln_gamma((df + 1.0) / 2.0)
            - statrs::function::gamma::ln_gamma(df / 2.0)
            - 0.5 * (df * std::f64::consts::PI).ln();
        let dens = |x: f64| (ln_c - (df + 1.0) / 2.0 * (1.0 + x * x / df).ln()).exp();
        let (a, b, n) = (t.abs(), 2000.0, 400_000);
        let h = (b - a) / n as f64;
        let mut s = dens(a) + dens(b);
        for i in 1..n {
            s += dens(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        2.0 * s * h / 3.0
    }

    #[test]
    fn t_p_value_matches_quadrature() {
        let p = t_two_sided_p(2.0, 10.0);
        assert!((p - 0.0734).abs() < 5e-5, "{p}");
        assert!((p - t_tail_by_quadrature(2.0, 10.0)).abs() < 1e-6);
        assert!((t_two_sided_p(0.0, 5.0) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn exact_line() {
        let x: Vec<f64> = (0..10).map(f64::from).collect();
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
        let d = DMatrix::from_fn(10, 2, |i, j| if j == 0 { 1.0 } else { x[i] });
        let t = regress(&d, &y, &["intercept".into(), "x".into()]).unwrap();
        let slope = t.row("x").unwrap();
        assert!((slope.estimate - 2.0).abs() < 1e-12);
        assert!(t.residuals.iter().all(|r| r.abs() < 1e-12));
        assert!(slope.p < 1e-12);
    }

    #[test]
    fn aliased_column_dropped_and_residuals_orthogonal() {
        let n = 30;
        let d = DMatrix::from_fn(n, 4, |i, j| match j {
            0 => 1.0,
            1 => (i % 3 == 1) as u8 as f64,
            2 => (i % 3 == 2) as u8 as f64,
            _ => 1.0 - (i % 3 == 1) as u8 as f64 - (i % 3 == 2) as u8 as f64,
        });
        let y: Vec<f64> = (0..n).map(|i| (i as f64 * 0.7).sin()).collect();
        let names: Vec<String> = ["c", "b", "d", "alias"].iter().map(|s| s.to_string()).collect();
        let t = regress(&d, &y, &names).unwrap();
        assert_eq!(t.dropped, vec!["alias".to_string()]);
        for c in 0..3 {
            let dot: f64 = (0..n).map(|i| d[(i, c)] * t.residuals[i]).sum();
            assert!(dot.abs() < 1e-8);
        }
    }

    #[test]
    fn constant_data_gives_zero_dummies() {
        let n = 12;
        let d = DMatrix::from_fn(n, 3, |i, j| if j == 0 { 1.0 } else { ((i + j) % 2) as f64 });
        let t = regress(&d, &vec![5.0; n], &["c".into(), "a".into(), "b".into()]).unwrap();
        for r in &t.rows[1..] {
            assert!(r.estimate.abs() < 1e-10);
        }
    }
}
