//! Fits a squared-exponential GP to noisy draws from its own prior, then
//! predicts past the data and compares recovered hyperparameters to the truth.

use mmm_conflation::gp::{fit_point, sample_prior, GpPosterior, SeFamily};
use mmm_conflation::kernels::Kernel;
use mmm_conflation::rng::{derive_seed, rng};
use rand_distr::{Distribution, Normal};

fn main() -> mmm_conflation::Result<()> {
    let (eta, rho, sigma) = (2.0, 3.0, 0.1);
    let t: Vec<f64> = (0..100).map(f64::from).collect();
    let f = sample_prior(&Kernel::se(eta, rho)?, &t, derive_seed(7, &[0]))?;
    let mut r = rng(derive_seed(7, &[1]));
    let noise = Normal::new(0.0, sigma).unwrap();
    let y: Vec<f64> = f.iter().map(|v| v + noise.sample(&mut r)).collect();

    let family = SeFamily { inputs: t.clone() };
    let fitted = fit_point(&family, &y, None, &family.default_bounds(&y), 4, 11)?;
    let [e, p] = [fitted.sample.params[0], fitted.sample.params[1]];
    println!("truth   eta {eta:.3} rho {rho:.3} sigma {sigma:.3}");
    println!("fitted  eta {e:.3} rho {p:.3} sigma {:.3}  (lml {:.2})", fitted.sample.sigma, fitted.lml);

    let gp = GpPosterior::new(&Kernel::se(e, p)?, &t, &y, fitted.sample.sigma)?;
    let ahead = [100.0, 103.0, 110.0, 150.0];
    let pred = gp.predict(&ahead)?;
    for ((z, m), v) in ahead.iter().zip(&pred.mean).zip(&pred.variance) {
        println!("t = {z:>5}: mean {m:>7.3}  sd {:.3}", v.sqrt());
    }
    // far from the data the posterior falls back to the prior
    println!("prior sd {e:.3}");
    Ok(())
}
