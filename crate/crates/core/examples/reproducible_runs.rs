//! The command-line pipeline as a library: simulate, fit, evaluate and plot
//! into a scratch directory, then replay a manifest and compare digests.

use std::path::Path;

use mmm_conflation::pipeline::{execute, parse_override, replay, Job};

fn run(command: &str, sets: &[(&str, toml::Value)], dir: &Path, out: &str) -> mmm_conflation::Result<std::path::PathBuf> {
    let overrides: Vec<(String, toml::Value)> = sets.iter().map(|(k, v)| (k.to_string(), v.clone())).collect();
    let job = Job::build(command, None, &overrides, dir)?;
    let done = execute(&job, &dir.join(out))?;
    println!("$ mmm {command}  ->  {out}/");
    for line in &done.summary {
        println!("    {line}");
    }
    Ok(done.manifest_path)
}

fn path(dir: &Path, rel: &str) -> toml::Value {
    toml::Value::String(dir.join(rel).display().to_string())
}

fn main() -> mmm_conflation::Result<()> {
    let scratch = tempfile::tempdir()?;
    let dir = scratch.path();
    run("simulate", &[], dir, "sim")?;
    let fitted = run("fit", &[("data", path(dir, "sim/data.csv")), ("model.kind", "nonlinear-gp".into())], dir, "fit")?;
    // log outcome and spend on both sides, as the sigmoid case is usually modelled
    let (_, reference) = parse_override(r#"reference={ kind = "nonlinear-gp", transform = { kind = "log-guard", floor = 0.001 } }"#)?;
    let (_, competitor) = parse_override(r#"competitor={ kind = "log-time-varying", transform = { kind = "log-guard", floor = 0.001 } }"#)?;
    run("evaluate", &[("data", path(dir, "sim/data.csv")), ("reference", reference), ("competitor", competitor), ("seed", 32.into())], dir, "eval")?;
    run("plot", &[("input", path(dir, "fit/fitted.csv"))], dir, "plot")?;

    let again = replay(&fitted, &dir.join("fit/replay"))?;
    println!("replayed {} outputs of the fit run: {}", again.manifest.outputs.len(), again.summary.last().map_or("", String::as_str));
    Ok(())
}
