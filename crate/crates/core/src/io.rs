//! Files on disk: configuration documents, versioned JSON results, saved
//! models, run manifests, CSV tables and SVG plots.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{fmt_num, Dataset};
use crate::error::{Error, Result};
use crate::models::{FittedModel, ModelSpec, ModelState};

pub const SCHEMA_VERSION: u32 = 1;

pub fn sha256_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: impl AsRef<Path>) -> Result<String> {
    let path = path.as_ref();
    Ok(sha256_bytes(&fs::read(path).map_err(Error::file(path))?))
}

/// Parses a TOML document; unknown keys are rejected by the target type.
pub fn parse_toml<T: DeserializeOwned>(text: &str) -> Result<T> {
    toml::from_str(text).map_err(|e| Error::Config(e.to_string().trim_end().to_string()))
}

pub fn load_toml<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    parse_toml(&text).map_err(|e| match e {
        Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
        other => other,
    })
}

/// TOML text of `value`; `None` fields are omitted since TOML has no null.
pub fn to_toml<T: Serialize>(value: &T) -> Result<String> {
    fn strip(v: &mut serde_json::Value) {
        match v {
            serde_json::Value::Object(m) => {
                m.retain(|_, x| !x.is_null());
                m.values_mut().for_each(strip);
            }
            serde_json::Value::Array(a) => a.iter_mut().for_each(strip),
            _ => {}
        }
    }
    let mut v = serde_json::to_value(value)?;
    strip(&mut v);
    toml::to_string_pretty(&v).map_err(|e| Error::Config(e.to_string()))
}

/// Serializes `value` as a JSON object carrying `schema_version`.
pub fn versioned_json<T: Serialize>(value: &T) -> Result<String> {
    let mut v = serde_json::to_value(value)?;
    match v.as_object_mut() {
        Some(obj) => {
            obj.insert("schema_version".into(), SCHEMA_VERSION.into());
        }
        None => return Err(Error::domain("only objects can carry a schema version")),
    }
    let mut s = serde_json::to_string_pretty(&v)?;
    s.push('\n');
    Ok(s)
}

/// Parses a versioned JSON document, rejecting other schema versions.
pub fn parse_versioned<T: DeserializeOwned>(text: &str, what: &str) -> Result<T> {
    let mut v: serde_json::Value = serde_json::from_str(text)?;
    let obj = v.as_object_mut().ok_or_else(|| schema(what, "expected a JSON object"))?;
    match obj.remove("schema_version").and_then(|s| s.as_u64()) {
        Some(n) if n == SCHEMA_VERSION as u64 => {}
        Some(n) => return Err(schema(what, format!("schema_version {n} is not supported (expected {SCHEMA_VERSION})"))),
        None => return Err(schema(what, "missing schema_version")),
    }
    serde_json::from_value(v).map_err(|e| schema(what, e.to_string()))
}

fn schema(location: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Schema { location: location.into(), message: message.into() }
}

pub fn write_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    fs::write(path, versioned_json(value)?)?;
    Ok(())
}

/// Everything needed to rebuild a fitted model without refitting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelDocument {
    pub spec: ModelSpec,
    pub data: Dataset,
    pub state: ModelState,
    pub seed: u64,
    pub kernel: String,
}

impl ModelDocument {
    pub fn from_model(m: &FittedModel) -> Self {
        ModelDocument { spec: m.spec.clone(), data: m.data.clone(), state: m.state.clone(), seed: m.seed, kernel: m.kernel_description() }
    }

    pub fn into_model(self) -> Result<FittedModel> {
        FittedModel::from_parts(&self.data, &self.spec, self.state, self.seed)
    }
}

pub fn save_model(m: &FittedModel, path: impl AsRef<Path>) -> Result<()> {
    write_json(path, &ModelDocument::from_model(m))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<FittedModel> {
    let path = path.as_ref();
    let doc: ModelDocument = parse_versioned(&fs::read_to_string(path).map_err(Error::file(path))?, &path.display().to_string())?;
    doc.into_model()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

impl FileDigest {
    pub fn of(path: &Path, relative_to: Option<&Path>) -> Result<Self> {
        let shown = relative_to.and_then(|r| path.strip_prefix(r).ok()).unwrap_or(path);
        Ok(FileDigest { path: shown.display().to_string(), sha256: sha256_file(path)? })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageStatus {
    pub stage: String,
    pub ok: bool,
    pub message: Option<String>,
}

/// Record of one CLI run, sufficient to replay it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub command: String,
    /// Fully resolved configuration, input paths absolute.
    pub config: serde_json::Value,
    pub seed: u64,
    pub inputs: Vec<FileDigest>,
    /// Result files, relative to the output directory.
    pub outputs: Vec<FileDigest>,
    pub elapsed_ms: u128,
    pub stages: Vec<StageStatus>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

impl RunManifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        parse_versioned(&fs::read_to_string(path).map_err(Error::file(path))?, &path.display().to_string())
    }

    pub fn save(&self, dir: &Path) -> Result<PathBuf> {
        let p = dir.join(MANIFEST_FILE);
        write_json(&p, self)?;
        Ok(p)
    }

    /// Output digests that differ from `other`'s, by path.
    pub fn output_mismatches(&self, other: &RunManifest) -> Vec<String> {
        let mut out = Vec::new();
        for d in &self.outputs {
            match other.outputs.iter().find(|o| o.path == d.path) {
                Some(o) if o.sha256 == d.sha256 => {}
                Some(_) => out.push(format!("{}: digest differs", d.path)),
                None => out.push(format!("{}: missing from rerun", d.path)),
            }
        }
        for o in &other.outputs {
            if !self.outputs.iter().any(|d| d.path == o.path) {
                out.push(format!("{}: not in original run", o.path));
            }
        }
        out
    }
}

/// A header plus string cells, written with the csv crate.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new<S: Into<String>>(header: impl IntoIterator<Item = S>) -> Self {
        Table { header: header.into_iter().map(Into::into).collect(), rows: vec![] }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn push_nums(&mut self, row: &[f64]) {
        self.push(row.iter().map(|v| fmt_num(*v)).collect());
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(&self.header)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let f = fs::File::open(path).map_err(Error::file(path))?;
        let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(f);
        let header = r.headers()?.iter().map(String::from).collect();
        let rows = r.records().map(|rec| Ok(rec?.iter().map(String::from).collect())).collect::<Result<_>>()?;
        Ok(Table { header, rows })
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }

    /// Numeric values of a column; blank or unparsable cells become `None`.
    pub fn numbers(&self, col: usize) -> Vec<Option<f64>> {
        self.rows.iter().map(|r| r.get(col).and_then(|c| c.parse::<f64>().ok()).filter(|v| v.is_finite())).collect()
    }
}

pub fn opt_num(v: Option<f64>) -> String {
    v.map(fmt_num).unwrap_or_default()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SeriesStyle {
    #[default]
    Line,
    Points,
}

/// What to draw from a table.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlotSpec {
    /// Horizontal axis column; defaults to the first column.
    #[serde(default)]
    pub x: Option<String>,
    /// Columns to draw; defaults to every other numeric column except band edges.
    #[serde(default)]
    pub series: Option<Vec<String>>,
    /// Columns drawn as points instead of lines.
    #[serde(default)]
    pub points: Vec<String>,
    #[serde(default)]
    pub title: Option<String>,
}

const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf"];

fn band_base(name: &str) -> Option<(&str, bool)> {
    name.strip_suffix("_lower").map(|b| (b, true)).or_else(|| name.strip_suffix("_upper").map(|b| (b, false)))
}

fn nice_ticks(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let span = (hi - lo).max(f64::MIN_POSITIVE);
    let raw = span / n as f64;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0].iter().map(|m| m * mag).find(|s| *s >= raw).unwrap_or(10.0 * mag);
    let first = (lo / step).ceil() as i64;
    let last = (hi / step).floor() as i64;
    (first..=last).map(|k| k as f64 * step).collect()
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Static SVG 1.1: one polyline per line series, circles for point series,
/// shaded polygons for `<name>_lower` / `<name>_upper` column pairs.
pub fn svg_plot(table: &Table, spec: &PlotSpec) -> Result<String> {
    if table.header.len() < 2 {
        return Err(Error::domain("a plot needs at least two columns"));
    }
    let xcol = match &spec.x {
        Some(n) => table.column(n).ok_or_else(|| Error::domain(format!("no column '{n}'")))?,
        None => 0,
    };
    let xs = table.numbers(xcol);
    let numeric = |c: usize| table.numbers(c).iter().any(Option::is_some);
    let series: Vec<usize> = match &spec.series {
        Some(names) => names
            .iter()
            .map(|n| table.column(n).ok_or_else(|| Error::domain(format!("no column '{n}'"))))
            .collect::<Result<_>>()?,
        None => (0..table.header.len()).filter(|&c| c != xcol && band_base(&table.header[c]).is_none() && numeric(c)).collect(),
    };
    let mut series = series;
    for n in &spec.points {
        let c = table.column(n).ok_or_else(|| Error::domain(format!("no column '{n}'")))?;
        if !series.contains(&c) {
            series.push(c);
        }
    }
    if series.is_empty() {
        return Err(Error::domain("no numeric series to plot"));
    }
    let bands: Vec<(String, usize, usize)> = table
        .header
        .iter()
        .enumerate()
        .filter_map(|(c, h)| match band_base(h) {
            Some((base, true)) => table.column(&format!("{base}_upper")).map(|u| (base.to_string(), c, u)),
            _ => None,
        })
        .collect();

    let mut ys_all: Vec<f64> = series.iter().flat_map(|&c| table.numbers(c)).flatten().collect();
    for (_, l, u) in &bands {
        ys_all.extend(table.numbers(*l).into_iter().flatten());
        ys_all.extend(table.numbers(*u).into_iter().flatten());
    }
    let xv: Vec<f64> = xs.iter().flatten().copied().collect();
    if xv.is_empty() || ys_all.is_empty() {
        return Err(Error::domain("no finite values to plot"));
    }
    let fold = |v: &[f64]| v.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(*x), b.max(*x)));
    let (mut x0, mut x1) = fold(&xv);
    let (mut y0, mut y1) = fold(&ys_all);
    if x1 == x0 {
        x0 -= 0.5;
        x1 += 0.5;
    }
    if y1 == y0 {
        y0 -= 0.5;
        y1 += 0.5;
    }
    let pad = 0.05 * (y1 - y0);
    let (y0, y1) = (y0 - pad, y1 + pad);
    let (w, h, ml, mr, mt, mb) = (800.0, 500.0, 70.0, 160.0, 40.0, 50.0);
    let px = |x: f64| ml + (x - x0) / (x1 - x0) * (w - ml - mr);
    let py = |y: f64| h - mb - (y - y0) / (y1 - y0) * (h - mt - mb);
    let f = |v: f64| format!("{v:.2}");

    let mut s = String::new();
    let _ = writeln!(s, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#);
    let _ = writeln!(s, r#"<rect x="0" y="0" width="{w}" height="{h}" fill="white"/>"#);
    if let Some(t) = &spec.title {
        let _ = writeln!(s, r#"<text x="{}" y="24" font-family="sans-serif" font-size="16" text-anchor="middle">{}</text>"#, f(w / 2.0), escape(t));
    }
    let _ = writeln!(s, r##"<g stroke="#444" stroke-width="1" fill="none">"##);
    let _ = writeln!(s, r#"<line x1="{}" y1="{}" x2="{}" y2="{}"/>"#, f(ml), f(h - mb), f(w - mr), f(h - mb));
    let _ = writeln!(s, r#"<line x1="{}" y1="{}" x2="{}" y2="{}"/>"#, f(ml), f(mt), f(ml), f(h - mb));
    let _ = writeln!(s, "</g>");
    let _ = writeln!(s, r##"<g font-family="sans-serif" font-size="11" fill="#333333">"##);
    for t in nice_ticks(x0, x1, 8) {
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, f(px(t)), f(h - mb + 16.0), fmt_tick(t));
    }
    for t in nice_ticks(y0, y1, 6) {
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#, f(ml - 6.0), f(py(t) + 4.0), fmt_tick(t));
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, f((ml + w - mr) / 2.0), f(h - 10.0), escape(&table.header[xcol]));
    let _ = writeln!(s, "</g>");

    for (k, (base, l, u)) in bands.iter().enumerate() {
        let (lo, hi) = (table.numbers(*l), table.numbers(*u));
        let idx: Vec<usize> = (0..xs.len()).filter(|&i| xs[i].is_some() && lo[i].is_some() && hi[i].is_some()).collect();
        let mut pts: Vec<String> = idx.iter().map(|&i| format!("{},{}", f(px(xs[i].unwrap())), f(py(hi[i].unwrap())))).collect();
        pts.extend(idx.iter().rev().map(|&i| format!("{},{}", f(px(xs[i].unwrap())), f(py(lo[i].unwrap())))));
        let color = series.iter().position(|&c| table.header[c] == *base).map_or(PALETTE[k % PALETTE.len()], |p| PALETTE[p % PALETTE.len()]);
        let _ = writeln!(s, r#"<polygon points="{}" fill="{color}" fill-opacity="0.2" stroke="none"><title>{} band</title></polygon>"#, pts.join(" "), escape(base));
    }
    for (k, &c) in series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let ys = table.numbers(c);
        let pts: Vec<(f64, f64)> = xs.iter().zip(&ys).filter_map(|(x, y)| Some((px((*x)?), py((*y)?)))).collect();
        let name = &table.header[c];
        if spec.points.iter().any(|p| p == name) {
            let _ = writeln!(s, r#"<g fill="{color}"><title>{}</title>"#, escape(name));
            for (x, y) in pts {
                let _ = writeln!(s, r#"<circle cx="{}" cy="{}" r="2.5"/>"#, f(x), f(y));
            }
            let _ = writeln!(s, "</g>");
        } else {
            let p: Vec<String> = pts.iter().map(|(x, y)| format!("{},{}", f(*x), f(*y))).collect();
            let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"><title>{}</title></polyline>"#, p.join(" "), escape(name));
        }
        let ly = mt + 18.0 * k as f64;
        let _ = writeln!(
            s,
            r#"<rect x="{}" y="{}" width="12" height="12" fill="{color}"/><text x="{}" y="{}" font-family="sans-serif" font-size="12">{}</text>"#,
            f(w - mr + 12.0),
            f(ly),
            f(w - mr + 30.0),
            f(ly + 10.0),
            escape(name)
        );
    }
    s.push_str("</svg>\n");
    Ok(s)
}

fn fmt_tick(v: f64) -> String {
    let r = (v * 1e6).round() / 1e6;
    if r == r.trunc() && r.abs() < 1e15 {
        format!("{}", r as i64)
    } else {
        format!("{r}")
    }
}
