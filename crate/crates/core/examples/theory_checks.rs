//! Why the two model classes can mimic each other: OLS on a curve recovers an
//! average derivative, a window of OLS fits traces the derivative, and when
//! spend rises monotonically β(t)·x(t) is exactly a static function of x.

use mmm_conflation::theory::{monotone_conflation_demo, ols, piecewise_ols, run_suite, DEMO_SEED};

fn main() -> mmm_conflation::Result<()> {
    let x: Vec<f64> = (1..=40).map(|i| 1.0 + i as f64 * 0.1).collect();
    let y: Vec<f64> = x.iter().map(|v: &f64| v.ln()).collect();
    let fit = ols(&x, &y)?;
    println!("y = ln x on [1.1, 5]: OLS slope {:.4}", fit.slope);
    for b in piecewise_ols(&x, &y, 10)? {
        let mid = (x[b.start] + x[b.end - 1]) / 2.0;
        if let Ok(f) = b.fit {
            println!("  x in [{:.1}, {:.1}]: slope {:.4}, 1/x at midpoint {:.4}", x[b.start], x[b.end - 1], f.slope, 1.0 / mid);
        }
    }

    let demo = monotone_conflation_demo(DEMO_SEED)?;
    println!("\nmonotone spend: reconstruction residual {:.2e}, shuffled {:.2e}", demo.reconstruction_residual, demo.shuffled_residual);
    println!("holdout RMSE  time-varying {:.4}  static {:.4}  conflated {}", demo.rmse_time_varying, demo.rmse_nonlinear, demo.conflated);

    let report = run_suite(0, 500)?;
    print!("\n{}", report.to_text());
    Ok(())
}
