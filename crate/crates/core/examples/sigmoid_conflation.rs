//! One dataset, two stories. Revenue follows a static S-curve in spend, yet a
//! log-log model with a drifting elasticity predicts the holdout just as well.
//! The two fits then disagree about next period's best spend.

use mmm_conflation::budget::{loglog_model_optimum, optimize_no_carryover, SpendGrid};
use mmm_conflation::dgp::{gen_sigmoid_case, SIGMOID_SEED};
use mmm_conflation::evaluation::{conflation_label, holdout_eval};
use mmm_conflation::models::{fit, ModelSpec};

fn main() -> mmm_conflation::Result<()> {
    let sim = gen_sigmoid_case(SIGMOID_SEED)?;
    let data = sim.to_dataset();
    let x = &data.channels[0].values;
    let (lo, hi) = x.iter().fold((f64::MAX, f64::MIN), |(a, b), &v| (a.min(v), b.max(v)));
    println!("{} periods, spend {lo:.0}..{hi:.0}, last {:.0}", data.len(), x[x.len() - 1]);

    let nonlinear = ModelSpec::nonlinear().with_log();
    let drifting = ModelSpec::log_time_varying();
    let (a, b) = holdout_eval(&data, (&nonlinear, &drifting), 10, SIGMOID_SEED)?;
    println!("holdout RMSE  nonlinear {:.2}  time-varying {:.2}", a.rmse, b.rmse);
    println!("conflated: {}", conflation_label(a.mse, b.mse, 0.0));

    let nl = fit(&data, &nonlinear, 1)?;
    let tv = fit(&data, &drifting, 1)?;
    println!("in-sample R²  nonlinear {:.4}  time-varying {:.4}", nl.r_squared(), tv.r_squared());

    let next = data.last_period() + 1;
    let grid = SpendGrid::training_range(&nl, 200)?;
    let from_curve = optimize_no_carryover(&nl, next, &grid, 1.0)?.spend[0];
    let from_elasticity = loglog_model_optimum(&tv, next, 1.0)?.spend();
    println!("recommended spend for period {next}:");
    println!("  S-curve model        {from_curve:>9.2}");
    println!("  elasticity model     {from_elasticity:>9.2}");
    println!("  gap / training range {:.2}", (from_curve - from_elasticity).abs() / (hi - lo));
    Ok(())
}
