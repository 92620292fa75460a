use mmm_conflation::transforms::{stock_weights, BinomialConvention, StockSpec};

/// Exact integer binomial.
fn choose(n: u64, k: u64) -> u64 {
    if k > n {
        return 0;
    }
    (1..=k).fold(1u64, |acc, i| acc * (n + 1 - i) / i)
}

/// Pascal weights for λ = 1/2 in exact integers: (1/2)^ℓ·C = 2^(L−ℓ)·C / 2^L.
fn exact_half(lags: u64, shape: u64, printed: bool) -> (Vec<u64>, u64) {
    let raw: Vec<u64> = (0..=lags)
        .map(|l| {
            let c = if printed { choose(l + shape - 1, shape) } else { choose(l + shape - 1, l) };
            (1u64 << (lags - l)) * c
        })
        .collect();
    let total = raw.iter().sum();
    (raw, total)
}

#[test]
fn pascal_weights_match_exact_oracle_and_golden_file() {
    let golden: serde_json::Value =
        serde_json::from_str(include_str!("golden/pascal_weights.json")).unwrap();
    for (conv, key, printed) in [
        (BinomialConvention::Printed, "printed", true),
        (BinomialConvention::Standard, "standard", false),
    ] {
        let (num, den) = exact_half(2, 2, printed);
        let w = stock_weights(&StockSpec::pascal(0.5, 2, 2, conv)).unwrap();
        let pinned: Vec<f64> = golden[key].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
        for i in 0..3 {
            let exact = num[i] as f64 / den as f64;
            assert!((w[i] - exact).abs() < 1e-15, "{key}[{i}]: {} vs {exact}", w[i]);
            assert!((w[i] - pinned[i]).abs() < 1e-15);
        }
    }
    // the printed form vanishes at lag 0 for any shape above 1
    assert_eq!(choose(1, 2), 0);
}
