//! Draws one dataset from each simulation family and reports where the
//! lengthscale was resolved and how loud the noise is.

use mmm_conflation::dgp::{gen_dataset, DgpKind, DgpSpec, SpendingSpec};
use mmm_conflation::transforms::StockSpec;

fn main() -> mmm_conflation::Result<()> {
    let mut spending = SpendingSpec::ar1(50.0, 0.9, 5.0, 100);
    spending.x0 = 50.0;
    let families = [
        ("static GP f(x)", DgpKind::NonlinearGp { eta: 2.0, rho_ratio: 0.5 }),
        ("time-varying GP β(t)", DgpKind::TimeVaryingGp { eta: 2.0, rho_ratio: 0.5 }),
        ("Hill curve", DgpKind::Hill { shape: 2.0, k_ratio: 0.33, amplitude: 10.0 }),
    ];
    for (name, kind) in families {
        let dgp = DgpSpec { kind, noise_ratio: 0.1, carryover: Some(StockSpec::geometric(0.3, 3)), intercept: 5.0 };
        let sim = gen_dataset(&dgp, &spending, 42)?;
        let t = &sim.truth;
        let (lo, hi) = sim.spend.iter().fold((f64::MAX, f64::MIN), |(a, b), &v| (a.min(v), b.max(v)));
        println!("{name}");
        println!("  stock range {lo:.1}..{hi:.1}, {} leading periods of raw spend", sim.spend_raw.len() - sim.spend.len());
        if let (Some(s), Some(against)) = (t.resolved_scale, &t.resolved_against) {
            println!("  scale {s:.3} resolved against {against}");
        }
        println!("  noise sd {:.4}; first outcomes {:?}", t.sigma, sim.y[..4].iter().map(|v| (v * 100.0).round() / 100.0).collect::<Vec<_>>());
    }
    Ok(())
}
