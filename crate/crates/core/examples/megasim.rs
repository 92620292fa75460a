//! A small slice of the factorial conflation study for the time-varying DGP:
//! 27 random cells of the full 3^6 grid, a few replicates each, then the
//! regression of conflation rate on factor levels.
//!
//! cargo run --release --example megasim -- [replicates]

use mmm_conflation::evaluation::{any_major_summary, megasim, rate_regression, DgpFamily, MegasimConfig, SimulationSetting};
use mmm_conflation::rng::rng;

fn main() -> mmm_conflation::Result<()> {
    let replicates = std::env::args().nth(1).map_or(4, |a| a.parse().expect("replicates"));
    let full = SimulationSetting::full_grid(DgpFamily::TimeVaryingGp);
    let mut picked = rand::seq::index::sample(&mut rng(1), full.len(), 27).into_vec();
    picked.sort_unstable();
    let grid: Vec<SimulationSetting> = picked.into_iter().map(|i| full[i].clone()).collect();
    let cfg = MegasimConfig { replicates, ..Default::default() };
    let started = std::time::Instant::now();
    let result = megasim(&grid, &cfg, 2024)?;
    println!("{} settings x {replicates} replicates in {:.1}s", grid.len(), started.elapsed().as_secs_f64());

    println!("{:>6} {:>5} {:>5} {:>5} {:>5} {:>6} {:>6}", "smooth", "amp", "ar", "ar_sd", "noise", "carry", "rate");
    for r in &result.rates {
        let s = &r.setting;
        let rate = r.rate.map_or("-".into(), |v| format!("{v:.0}%"));
        println!("{:>6} {:>5} {:>5} {:>5} {:>5} {:>6} {rate:>6}", s.smoothness, s.amplitude, s.ar_coef, s.ar_sd, s.noise, s.carryover);
    }
    let (any, major) = any_major_summary(&result.rates);
    println!("\nany conflation {:.0}% of settings, major (>25%) {:.0}%", any * 100.0, major * 100.0);

    let table = rate_regression(&result.rates)?;
    println!("\n{:<18} {:>9} {:>8} {:>7}", "term", "estimate", "se", "p");
    for row in &table.rows {
        println!("{:<18} {:>9.2} {:>8.2} {:>7.3}", row.name, row.estimate, row.std_error, row.p);
    }
    Ok(())
}
