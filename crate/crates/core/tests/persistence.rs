use mmm_conflation::dataset::{load_dataset, save_dataset, Channel, Dataset};
use mmm_conflation::dgp::gen_intro_example;
use mmm_conflation::io::{load_model, save_model, sha256_file};
use mmm_conflation::models::{fit, ModelSpec, Scenario};
use mmm_conflation::transforms::StockSpec;
use mmm_conflation::Error;

fn scenario(d: &Dataset) -> Scenario {
    let last = d.last_period();
    Scenario { periods: vec![last + 1, last + 2], spend: vec![vec![20.0], vec![35.0]], dummies: None }
}

#[test]
fn saved_models_predict_bit_identically() {
    let tmp = tempfile::tempdir().unwrap();
    let data = gen_intro_example(1).unwrap().to_dataset();
    for spec in [
        ModelSpec::nonlinear(),
        ModelSpec::time_varying(),
        ModelSpec::log_time_varying(),
        ModelSpec::nonlinear().with_carryover(StockSpec::geometric(0.4, 2)),
    ] {
        let m = fit(&data, &spec, 3).unwrap();
        let path = tmp.path().join("m.json");
        save_model(&m, &path).unwrap();
        let back = load_model(&path).unwrap();
        let (a, b) = (m.predict(&scenario(&data)).unwrap(), back.predict(&scenario(&data)).unwrap());
        assert_eq!(a.mean, b.mean, "{:?}", spec.kind);
        assert_eq!(a.latent_variance, b.latent_variance);
        assert_eq!(m.fitted(), back.fitted());

        let again = tmp.path().join("again.json");
        save_model(&back, &again).unwrap();
        assert_eq!(sha256_file(&path).unwrap(), sha256_file(&again).unwrap());
    }
}

#[test]
fn dataset_csv_round_trip_is_exact() {
    let tmp = tempfile::tempdir().unwrap();
    let y = vec![0.1 + 0.2, 1e-300, 123456.789, 1.0 / 3.0];
    let d = Dataset::new(
        vec![5, 6, 7, 8],
        y,
        vec![Channel::new("tv", vec![0.0, 2.5, 1e6, 7.0 / 9.0]), Channel::new("search", vec![1.0; 4])],
        vec![Channel::new("promo", vec![0.0, 1.0, 0.0, 1.0])],
    )
    .unwrap();
    let p = tmp.path().join("d.csv");
    save_dataset(&d, &p).unwrap();
    let back = load_dataset(&p).unwrap();
    assert_eq!(back.periods, d.periods);
    assert_eq!(back.y, d.y);
    assert_eq!(back.channels, d.channels);
    assert_eq!(back.dummies, d.dummies);
}

fn read_err(csv: &str) -> Error {
    Dataset::read_csv(csv.as_bytes()).unwrap_err()
}

#[test]
fn malformed_datasets_are_rejected_with_locations() {
    for (csv, needle) in [
        ("t,y,x_tv\n1,1,1\n2,2,-1\n", "line 3, column 3"),
        ("t,y,x_tv\n1,1,1\n2,abc,1\n", "'abc' is not a number"),
        ("t,y,x_tv\n1,1,1\n1,2,1\n", "periods must increase"),
        ("t,y,x_tv\n1,1,1\n3,2,1\n", "period 2 is missing"),
    ] {
        let e = read_err(csv);
        assert!(matches!(e, Error::Schema { .. }), "{csv:?}: {e:?}");
        assert!(e.to_string().contains(needle), "{csv:?}: {e}");
        assert_eq!(e.exit_code(), 1);
    }
}
