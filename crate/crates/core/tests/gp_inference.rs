use std::f64::consts::PI;

use mmm_conflation::gp::{
    self, fit_metropolis, fit_point, lml_at, metropolis, sample_prior, GpPosterior, MetropolisConfig, SeFamily,
};
use mmm_conflation::kernels::Kernel;
use mmm_conflation::optim::Bound;
use mmm_conflation::rng;
use nalgebra::{DMatrix, DVector};
use rand::Rng;

/// log N(y; 0, S) through LU determinant and explicit inverse.
fn dense_log_density(s: &DMatrix<f64>, y: &[f64]) -> f64 {
    let n = y.len() as f64;
    let y = DVector::from_column_slice(y);
    let det = s.clone().lu().determinant();
    let inv = s.clone().try_inverse().unwrap();
    -0.5 * (y.transpose() * inv * &y)[(0, 0)] - 0.5 * det.ln() - 0.5 * n * (2.0 * PI).ln()
}

#[test]
fn lml_matches_dense_density() {
    let mut r = rng::rng(11);
    for _ in 0..20 {
        let x: Vec<f64> = (0..5).map(|_| r.random_range(-3.0..3.0)).collect();
        let y: Vec<f64> = (0..5).map(|_| r.random_range(-2.0..2.0)).collect();
        let eta = r.random_range(0.3..2.0);
        let rho = r.random_range(0.3..2.0);
        let sigma = r.random_range(0.1..1.0);
        let k = Kernel::se(eta, rho).unwrap();
        let gp = GpPosterior::new(&k, &x, &y, sigma).unwrap();
        let mut s = k.gram(&x, 0.0).unwrap();
        for i in 0..5 {
            s[(i, i)] += sigma * sigma;
        }
        let diff = (gp.log_marginal_likelihood() - dense_log_density(&s, &y)).abs();
        assert!(diff <= 1e-8, "diff {diff}");
    }
}

#[test]
fn prior_sd_matches_amplitude() {
    let k = Kernel::se(2.0, 1.0).unwrap();
    let draws: Vec<f64> = (0..5000).map(|s| sample_prior(&k, &[0.3], s).unwrap()[0]).collect();
    let sd = gp::sample_sd(&draws);
    assert!((sd - 2.0).abs() < 0.1, "sd {sd}");
}

#[test]
fn prior_empirical_covariance_matches_gram() {
    let k = Kernel::se(1.5, 0.8).unwrap();
    let x = [0.0, 0.5, 1.0, 2.0, 3.5];
    let n = 10_000;
    let mut acc = DMatrix::<f64>::zeros(5, 5);
    for s in 0..n {
        let v = DVector::from_vec(sample_prior(&k, &x, 1000 + s).unwrap());
        acc += &v * v.transpose();
    }
    acc /= n as f64;
    let g = k.gram(&x, 0.0).unwrap();
    let rel = (&acc - &g).norm() / g.norm();
    assert!(rel < 0.05, "relative Frobenius error {rel}");
}

#[test]
fn posterior_mean_linear_in_targets() {
    let k = Kernel::se(1.2, 0.9).unwrap();
    let x = [0.0, 0.4, 1.3, 2.2, 3.0];
    let y1 = [0.5, -0.2, 1.0, 0.3, -0.7];
    let y2 = [1.5, 0.2, -1.0, 0.0, 2.0];
    let y12: Vec<f64> = y1.iter().zip(&y2).map(|(a, b)| a + b).collect();
    let q = [-1.0, 0.2, 1.7, 4.0];
    let p1 = GpPosterior::new(&k, &x, &y1, 0.2).unwrap().predict(&q).unwrap();
    let p2 = GpPosterior::new(&k, &x, &y2, 0.2).unwrap().predict(&q).unwrap();
    let p12 = GpPosterior::new(&k, &x, &y12, 0.2).unwrap().predict(&q).unwrap();
    for i in 0..q.len() {
        assert!((p12.mean[i] - p1.mean[i] - p2.mean[i]).abs() < 1e-10);
        assert!(p12.variance[i] >= 0.0);
    }
}

#[test]
fn lml_finite_differences_are_richardson_consistent() {
    let x: Vec<f64> = (0..15).map(|i| i as f64 * 0.4).collect();
    let y: Vec<f64> = x.iter().map(|v| (0.8 * v).sin() + 0.1 * v).collect();
    let fam = SeFamily { inputs: x };
    let theta = [0.9f64.ln(), 1.3f64.ln(), 0.2f64.ln()];
    let f = |th: &[f64]| lml_at(&fam, &y, None, &[th[0].exp(), th[1].exp()], th[2].exp());
    for i in 0..3 {
        let cd = |h: f64| {
            let mut a = theta;
            let mut b = theta;
            a[i] += h;
            b[i] -= h;
            (f(&a) - f(&b)) / (2.0 * h)
        };
        let (d1, d2) = (cd(1e-3), cd(5e-4));
        let rich = (4.0 * d2 - d1) / 3.0;
        let rel = (rich - d2).abs() / rich.abs().max(1e-8);
        assert!(rel < 1e-4, "param {i}: {d1} {d2} {rich}");
    }
}

fn se_data(seed: u64, n: usize) -> (Vec<f64>, Vec<f64>) {
    let x: Vec<f64> = (0..n).map(|i| i as f64 * 30.0 / (n - 1) as f64).collect();
    let f = sample_prior(&Kernel::se(2.0, 3.0).unwrap(), &x, seed).unwrap();
    let mut r = rng::rng(seed ^ 0xabc);
    let e = rng::standard_normals(&mut r, n);
    let y = f.iter().zip(&e).map(|(a, b)| a + 0.1 * b).collect();
    (x, y)
}

fn within_factor_two(est: f64, truth: f64) -> bool {
    est >= truth / 2.0 && est <= truth * 2.0
}

#[test]
fn point_fit_recovers_generating_hyperparameters() {
    let mut hits = 0;
    for trial in 0..20u64 {
        let (x, y) = se_data(100 + trial, 100);
        let fam = SeFamily { inputs: x };
        let b = fam.default_bounds(&y);
        let fit = fit_point(&fam, &y, None, &b, 4, trial).unwrap();
        let p = &fit.sample;
        if within_factor_two(p.params[0], 2.0) && within_factor_two(p.params[1], 3.0) && within_factor_two(p.sigma, 0.1) {
            hits += 1;
        }
    }
    assert!(hits >= 18, "recovered in {hits}/20 trials");
}

#[test]
fn point_fit_on_white_noise_finds_no_signal() {
    let mut r = rng::rng(3);
    let y: Vec<f64> = rng::standard_normals(&mut r, 100).iter().map(|v| 0.7 * v).collect();
    let x: Vec<f64> = (0..100).map(f64::from).collect();
    let fam = SeFamily { inputs: x };
    let b = fam.default_bounds(&y);
    let fit = fit_point(&fam, &y, None, &b, 6, 1).unwrap();
    let sd = gp::sample_sd(&y);
    let rho_at_upper = fit.sample.params[1] > 0.9 * b.kernel[1].1;
    let eta_small = fit.sample.params[0] < 0.1 * sd;
    assert!(rho_at_upper || eta_small, "{:?}", fit.sample);
    assert!((fit.sample.sigma - sd).abs() < 0.2 * sd, "{:?} vs {sd}", fit.sample);
}

#[test]
fn more_restarts_never_worse() {
    let (x, y) = se_data(7, 60);
    let fam = SeFamily { inputs: x };
    let b = fam.default_bounds(&y);
    let one = fit_point(&fam, &y, None, &b, 1, 21).unwrap();
    let eight = fit_point(&fam, &y, None, &b, 8, 21).unwrap();
    assert!(eight.lml >= one.lml - 1e-9);
    assert_eq!(fit_point(&fam, &y, None, &b, 3, 5).unwrap(), fit_point(&fam, &y, None, &b, 3, 5).unwrap());
}

#[test]
fn metropolis_posterior_median_near_truth() {
    let (x, y) = se_data(42, 80);
    let fam = SeFamily { inputs: x };
    let cfg = MetropolisConfig { chain_length: 3000, burn_in: 1000, thin: 10, target_acceptance: 0.3 };
    let draws = fit_metropolis(&fam, &y, None, &fam.default_bounds(&y), &fam.default_prior(&y), &cfg, 9).unwrap();
    let median = |mut v: Vec<f64>| {
        v.sort_by(f64::total_cmp);
        v[v.len() / 2]
    };
    let eta = median(draws.draws.iter().map(|d| d.params[0]).collect());
    let rho = median(draws.draws.iter().map(|d| d.params[1]).collect());
    let sigma = median(draws.draws.iter().map(|d| d.sigma).collect());
    assert!(within_factor_two(eta, 2.0), "eta {eta}");
    assert!(within_factor_two(rho, 3.0), "rho {rho}");
    assert!(within_factor_two(sigma, 0.1), "sigma {sigma}");
    let rate = draws.acceptance_rate.unwrap();
    assert!(rate > 0.1 && rate < 0.6, "acceptance {rate}");

    let again = fit_metropolis(&fam, &y, None, &fam.default_bounds(&y), &fam.default_prior(&y), &cfg, 9).unwrap();
    assert_eq!(draws, again);
}

#[test]
fn metropolis_on_flat_likelihood_recovers_prior() {
    let prior = gp::HyperPrior { medians: vec![2.0, 0.5, 1.0], log_sd: vec![1.0; 3] };
    let bounds = vec![Bound::new(-20.0, 20.0); 3];
    let cfg = MetropolisConfig { chain_length: 40_000, burn_in: 2000, thin: 5, target_acceptance: 0.3 };
    let chain = metropolis(|th| prior.log_density(th), &[0.0, 0.0, 0.0], &bounds, &cfg, 4).unwrap();
    let n = chain.states.len() as f64;
    for (i, m) in prior.medians.iter().enumerate() {
        let mean = chain.states.iter().map(|s| s[i]).sum::<f64>() / n;
        // effective sample size is well below n for a random walk; 0.15 is ~5 MC standard errors
        assert!((mean - m.ln()).abs() < 0.15, "dim {i}: {mean} vs {}", m.ln());
    }
    assert!(chain.acceptance_rate > 0.2 && chain.acceptance_rate < 0.45, "{}", chain.acceptance_rate);
}
