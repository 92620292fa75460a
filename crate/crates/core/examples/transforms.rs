//! Saturation and carryover transforms on a short flighted spend series.

use mmm_conflation::transforms::{adstock, hill, koyck_step, stock_weights, BinomialConvention, HillParams, StockSpec};

fn main() -> mmm_conflation::Result<()> {
    let spend = [0.0, 10.0, 10.0, 0.0, 0.0, 0.0, 20.0, 0.0, 0.0, 0.0];

    let reach = HillParams::new(8.0, 1.0)?;
    let s_curve = HillParams::new(8.0, 3.0)?;
    println!("{:>6} {:>8} {:>8}", "x", "reach", "s=3");
    for x in [1.0, 4.0, 8.0, 16.0, 32.0] {
        println!("{x:>6} {:>8.4} {:>8.4}", hill(x, reach)?, hill(x, s_curve)?);
    }

    let geo = StockSpec::geometric(0.6, 4);
    let pascal = StockSpec::pascal(0.6, 4, 2, BinomialConvention::Standard);
    println!("\ngeometric weights {:?}", rounded(&stock_weights(&geo)?));
    println!("pascal weights    {:?}", rounded(&stock_weights(&pascal)?));

    let g = adstock(&spend, &geo)?;
    println!("\nadstock drops the first {} periods: {:?}", g.offset, rounded(&g.values));

    // the Koyck recursion carries an unnormalized, infinite-lag stock
    let mut stock = 0.0;
    let koyck: Vec<f64> = spend.iter().map(|&x| { stock = koyck_step(stock, x, 0.6); stock }).collect();
    println!("koyck stock {:?}", rounded(&koyck));
    Ok(())
}

fn rounded(v: &[f64]) -> Vec<f64> {
    v.iter().map(|x| (x * 1e4).round() / 1e4).collect()
}
