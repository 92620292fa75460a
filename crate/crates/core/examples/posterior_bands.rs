//! Samples GP hyperparameters by adaptive Metropolis for a time-varying model
//! and prints the recovered effectiveness β(t) with 95% bands beside the truth.

use mmm_conflation::dgp::gen_intro_example;
use mmm_conflation::gp::MetropolisConfig;
use mmm_conflation::models::{fit, ComponentGrid, ComponentKind, Inference, ModelSpec};

fn main() -> mmm_conflation::Result<()> {
    let sim = gen_intro_example(3)?;
    let truth = sim.truth.coefficients.clone().expect("time-varying truth");
    let chain = MetropolisConfig { chain_length: 1500, burn_in: 500, thin: 10, ..Default::default() };
    let spec = ModelSpec::time_varying().with_inference(Inference::Metropolis { chain });
    let model = fit(&sim.to_dataset(), &spec, 5)?;

    let draws = model.hyper_draws().expect("GP model");
    println!("{} draws, acceptance {:.2}", draws.draws.len(), draws.acceptance_rate.unwrap_or(f64::NAN));
    let sigmas = model.sigmas();
    println!("noise sd: posterior mean {:.3}, truth {:.3}", sigmas.iter().sum::<f64>() / sigmas.len() as f64, sim.truth.sigma);

    let periods: Vec<i64> = (1..=sim.len() as i64).step_by(5).collect();
    let grid = ComponentGrid { periods: Some(periods.clone()), ..Default::default() };
    let beta = model.components(&grid)?.into_iter().find(|c| c.kind == ComponentKind::Coefficient).expect("coefficient curve");
    println!("{:>4} {:>8} {:>8} {:>18}", "t", "true", "mean", "95% band");
    for (i, p) in periods.iter().enumerate() {
        let inside = if (beta.lower[i]..=beta.upper[i]).contains(&truth[*p as usize - 1]) { "" } else { " *" };
        println!("{p:>4} {:>8.3} {:>8.3} [{:>7.3}, {:>7.3}]{inside}", truth[*p as usize - 1], beta.mean[i], beta.lower[i], beta.upper[i]);
    }
    Ok(())
}
