//! Splitting a fixed budget across two channels with carryover. Both model
//! classes are fitted to the same history; each picks its best split on a 5%
//! lattice, and the conflation cost is the revenue lost by trusting the other.

use mmm_conflation::budget::{conflation_cost, enumerate_allocations, CarryoverWindow};
use mmm_conflation::dataset::{Channel, Dataset};
use mmm_conflation::dgp::{gen_spending, SpendingSpec};
use mmm_conflation::models::{fit, ModelSpec};
use mmm_conflation::rng::{derive_seed, rng};
use mmm_conflation::transforms::{adstock, StockSpec};
use rand_distr::{Distribution, Normal};

const T: usize = 80;

fn main() -> mmm_conflation::Result<()> {
    let carry = StockSpec::geometric(0.5, 2);
    let mut tv_spend = SpendingSpec::ar1(40.0, 0.8, 6.0, T);
    tv_spend.clamp_floor = 1.0;
    let mut search = SpendingSpec::ar1(25.0, 0.5, 5.0, T);
    search.clamp_floor = 1.0;
    let tv = gen_spending(&tv_spend, derive_seed(9, &[0]))?;
    let sr = gen_spending(&search, derive_seed(9, &[1]))?;

    // tv saturates; search works at a rate that decays over the two years
    let s_tv = adstock(&tv, &carry)?.values;
    let s_sr = adstock(&sr, &carry)?.values;
    let noise = Normal::new(0.0, 2.0).unwrap();
    let mut r = rng(derive_seed(9, &[2]));
    let mut y = Vec::with_capacity(T);
    for i in 0..s_tv.len() {
        let t = (i + carry.lags) as f64;
        y.push(100.0 + 60.0 * s_tv[i] / (s_tv[i] + 30.0) + (1.2 - t / T as f64) * s_sr[i] + noise.sample(&mut r));
    }
    // outcomes before the first full stock are unused by the models
    let y: Vec<f64> = std::iter::repeat_n(y[0], carry.lags).chain(y).collect();
    let data = Dataset::new((1..=T as i64).collect(), y, vec![Channel::new("tv", tv), Channel::new("search", sr)], vec![])?;

    let nl = fit(&data, &ModelSpec::nonlinear().with_carryover(carry), 1)?;
    let tvm = fit(&data, &ModelSpec::time_varying().with_carryover(carry), 2)?;
    println!("R²  nonlinear {:.3}  time-varying {:.3}", nl.r_squared(), tvm.r_squared());

    let (start, end) = (T as i64 - 6, T as i64 - 3);
    let ranges: Vec<(f64, f64)> = data.channels.iter().map(|c| c.values.iter().fold((f64::MAX, f64::MIN), |(a, b), &v| (a.min(v), b.max(v)))).collect();
    let allocations = enumerate_allocations(65.0, 2, 0.05, Some(&ranges))?;
    println!("{} splits of 65 per period within historical ranges", allocations.len());

    let cost = conflation_cost(&nl, &tvm, &allocations, &CarryoverWindow::for_model(&nl, start, end), &CarryoverWindow::for_model(&tvm, start, end))?;
    println!("nonlinear picks     tv {:>5.1}  search {:>5.1}", cost.optimum_a.spend[0], cost.optimum_a.spend[1]);
    println!("time-varying picks  tv {:>5.1}  search {:>5.1}", cost.optimum_b.spend[0], cost.optimum_b.spend[1]);
    println!("cost if nonlinear is right    {:.2}", cost.cost_if_a_true);
    println!("cost if time-varying is right {:.2}", cost.cost_if_b_true);
    Ok(())
}
