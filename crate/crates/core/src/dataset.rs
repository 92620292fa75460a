//! Time-indexed MMM datasets and their CSV schema.
//!
//! Columns: `t` (integer period, gapless and increasing), `y` (outcome),
//! `x_<name>` (nonnegative spend per channel), `d_<name>` (0/1 dummies) and an
//! optional informational `date`.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Channel {
    pub name: String,
    pub values: Vec<f64>,
}

impl Channel {
    pub fn new(name: impl Into<String>, values: Vec<f64>) -> Self {
        Channel { name: name.into(), values }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub periods: Vec<i64>,
    pub y: Vec<f64>,
    pub channels: Vec<Channel>,
    pub dummies: Vec<Channel>,
    #[serde(default)]
    pub dates: Option<Vec<String>>,
}

fn schema(location: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Schema { location: location.into(), message: message.into() }
}

impl Dataset {
    pub fn new(periods: Vec<i64>, y: Vec<f64>, channels: Vec<Channel>, dummies: Vec<Channel>) -> Result<Self> {
        let d = Dataset { periods, y, channels, dummies, dates: None };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.periods.len();
        if self.y.len() != n {
            return Err(schema("y", format!("{} values for {n} periods", self.y.len())));
        }
        for w in self.periods.windows(2) {
            if w[1] != w[0] + 1 {
                let msg = if w[1] > w[0] + 1 {
                    format!("period {} is missing", w[0] + 1)
                } else {
                    format!("period {} follows {}; periods must increase by one", w[1], w[0])
                };
                return Err(schema("t", msg));
            }
        }
        if let Some(i) = self.y.iter().position(|v| !v.is_finite()) {
            return Err(schema(format!("y, period {}", self.periods[i]), "outcome must be finite"));
        }
        for c in &self.channels {
            if c.values.len() != n {
                return Err(schema(format!("x_{}", c.name), "length differs from t"));
            }
            if let Some(i) = c.values.iter().position(|v| !(v.is_finite() && *v >= 0.0)) {
                return Err(schema(
                    format!("x_{}, period {}", c.name, self.periods[i]),
                    format!("spend must be finite and nonnegative, got {}", c.values[i]),
                ));
            }
        }
        for d in &self.dummies {
            if d.values.len() != n {
                return Err(schema(format!("d_{}", d.name), "length differs from t"));
            }
            if let Some(i) = d.values.iter().position(|v| *v != 0.0 && *v != 1.0) {
                return Err(schema(format!("d_{}, period {}", d.name, self.periods[i]), "dummy must be 0 or 1"));
            }
        }
        if let Some(dates) = &self.dates {
            if dates.len() != n {
                return Err(schema("date", "length differs from t"));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn n_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn first_period(&self) -> i64 {
        self.periods[0]
    }

    pub fn last_period(&self) -> i64 {
        *self.periods.last().expect("nonempty dataset")
    }

    /// Row index of `period`, if present.
    pub fn index_of(&self, period: i64) -> Option<usize> {
        let i = period.checked_sub(*self.periods.first()?)?;
        (i >= 0 && (i as usize) < self.len()).then_some(i as usize)
    }

    /// Rows `range` as a new dataset.
    pub fn slice(&self, range: std::ops::Range<usize>) -> Dataset {
        let cut = |c: &Channel| Channel::new(c.name.clone(), c.values[range.clone()].to_vec());
        Dataset {
            periods: self.periods[range.clone()].to_vec(),
            y: self.y[range.clone()].to_vec(),
            channels: self.channels.iter().map(cut).collect(),
            dummies: self.dummies.iter().map(cut).collect(),
            dates: self.dates.as_ref().map(|d| d[range.clone()].to_vec()),
        }
    }

    /// Appends the next period.
    pub fn push(&mut self, y: f64, spend: &[f64], dummies: &[f64]) -> Result<()> {
        if spend.len() != self.channels.len() || dummies.len() != self.dummies.len() {
            return Err(Error::domain("row does not match the dataset's columns"));
        }
        let next = self.periods.last().map_or(1, |p| p + 1);
        self.periods.push(next);
        self.y.push(y);
        for (c, v) in self.channels.iter_mut().zip(spend) {
            c.values.push(*v);
        }
        for (c, v) in self.dummies.iter_mut().zip(dummies) {
            c.values.push(*v);
        }
        if let Some(d) = &mut self.dates {
            d.push(String::new());
        }
        self.validate()
    }

    /// Spend columns as a period-major matrix (`rows[i][j]` = channel `j` at row `i`).
    pub fn spend_rows(&self) -> Vec<Vec<f64>> {
        (0..self.len()).map(|i| self.channels.iter().map(|c| c.values[i]).collect()).collect()
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers()?.clone();
        let mut t_col = None;
        let mut y_col = None;
        let mut date_col = None;
        let mut x_cols = Vec::new();
        let mut d_cols = Vec::new();
        for (i, h) in headers.iter().enumerate() {
            match h {
                "t" => t_col = Some(i),
                "y" => y_col = Some(i),
                "date" => date_col = Some(i),
                _ if h.starts_with("x_") && h.len() > 2 => x_cols.push((i, h[2..].to_string())),
                _ if h.starts_with("d_") && h.len() > 2 => d_cols.push((i, h[2..].to_string())),
                _ => {
                    return Err(schema(
                        format!("line 1, column {}", i + 1),
                        format!("unknown column '{h}' (expected t, y, date, x_<name> or d_<name>)"),
                    ))
                }
            }
        }
        let t_col = t_col.ok_or_else(|| schema("line 1", "missing required column 't'"))?;
        let y_col = y_col.ok_or_else(|| schema("line 1", "missing required column 'y'"))?;

        let mut periods = Vec::new();
        let mut y = Vec::new();
        let mut xs: Vec<Vec<f64>> = vec![Vec::new(); x_cols.len()];
        let mut ds: Vec<Vec<f64>> = vec![Vec::new(); d_cols.len()];
        let mut dates = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let line = rec.position().map_or(0, |p| p.line());
            let cell = |i: usize| -> Result<&str> {
                let v = rec.get(i).unwrap_or("");
                if v.is_empty() {
                    Err(schema(format!("line {line}, column {}", i + 1), format!("missing value for '{}'", &headers[i])))
                } else {
                    Ok(v)
                }
            };
            let num = |i: usize| -> Result<f64> {
                let s = cell(i)?;
                s.parse::<f64>().map_err(|_| {
                    schema(format!("line {line}, column {}", i + 1), format!("'{s}' is not a number"))
                })
            };
            let ts = cell(t_col)?;
            let t: i64 = ts.parse().map_err(|_| {
                schema(format!("line {line}, column {}", t_col + 1), format!("period '{ts}' is not an integer"))
            })?;
            if let Some(&prev) = periods.last() {
                if t != prev + 1 {
                    let msg = if t > prev + 1 {
                        format!("period {} is missing", prev + 1)
                    } else {
                        format!("period {t} follows {prev}; periods must increase by one")
                    };
                    return Err(schema(format!("line {line}, column {}", t_col + 1), msg));
                }
            }
            periods.push(t);
            y.push(num(y_col)?);
            for (k, (i, _)) in x_cols.iter().enumerate() {
                let v = num(*i)?;
                if !(v >= 0.0 && v.is_finite()) {
                    return Err(schema(
                        format!("line {line}, column {}", i + 1),
                        format!("spend must be nonnegative, got {v}"),
                    ));
                }
                xs[k].push(v);
            }
            for (k, (i, _)) in d_cols.iter().enumerate() {
                let v = num(*i)?;
                if v != 0.0 && v != 1.0 {
                    return Err(schema(format!("line {line}, column {}", i + 1), format!("dummy must be 0 or 1, got {v}")));
                }
                ds[k].push(v);
            }
            if let Some(i) = date_col {
                dates.push(rec.get(i).unwrap_or("").to_string());
            }
        }
        if periods.is_empty() {
            return Err(schema("line 2", "dataset has no rows"));
        }
        let d = Dataset {
            periods,
            y,
            channels: x_cols.into_iter().zip(xs).map(|((_, n), v)| Channel::new(n, v)).collect(),
            dummies: d_cols.into_iter().zip(ds).map(|((_, n), v)| Channel::new(n, v)).collect(),
            dates: date_col.map(|_| dates),
        };
        d.validate()?;
        log::info!("loaded dataset: T={}, J={}, dummies={:?}", d.len(), d.n_channels(), d.dummies.iter().map(|c| &c.name).collect::<Vec<_>>());
        Ok(d)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["t".to_string()];
        if self.dates.is_some() {
            header.push("date".into());
        }
        header.push("y".into());
        header.extend(self.channels.iter().map(|c| format!("x_{}", c.name)));
        header.extend(self.dummies.iter().map(|c| format!("d_{}", c.name)));
        w.write_record(&header)?;
        for i in 0..self.len() {
            let mut row = vec![self.periods[i].to_string()];
            if let Some(d) = &self.dates {
                row.push(d[i].clone());
            }
            row.push(fmt_num(self.y[i]));
            row.extend(self.channels.iter().map(|c| fmt_num(c.values[i])));
            row.extend(self.dummies.iter().map(|c| fmt_num(c.values[i])));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Shortest representation that parses back to the same `f64`.
pub fn fmt_num(v: f64) -> String {
    format!("{v:?}")
}

/// Loads and validates a dataset CSV.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let f = std::fs::File::open(path.as_ref()).map_err(Error::file(path.as_ref()))?;
    Dataset::read_csv(std::io::BufReader::new(f))
}

pub fn save_dataset(d: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let f = std::fs::File::create(path.as_ref()).map_err(Error::file(path.as_ref()))?;
    d.write_csv(std::io::BufWriter::new(f))
}

/// Replaces channels with spend in fewer than `min_active_share` of periods by
/// 0/1 promotion dummies. Returns the names of converted channels.
pub fn sparse_channels_to_dummies(d: &mut Dataset, min_active_share: f64) -> Vec<String> {
    let n = d.len() as f64;
    let (sparse, dense): (Vec<Channel>, Vec<Channel>) = std::mem::take(&mut d.channels)
        .into_iter()
        .partition(|c| (c.values.iter().filter(|v| **v > 0.0).count() as f64) < min_active_share * n);
    d.channels = dense;
    let names = sparse.iter().map(|c| c.name.clone()).collect();
    for c in sparse {
        log::info!("channel '{}' is sparse; converted to a promotion dummy", c.name);
        let values = c.values.iter().map(|v| if *v > 0.0 { 1.0 } else { 0.0 }).collect();
        d.dummies.push(Channel::new(format!("promo_{}", c.name), values));
    }
    names
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(s: &str) -> Result<Dataset> {
        Dataset::read_csv(s.as_bytes())
    }

    #[test]
    fn minimal_file_has_no_channels() {
        let d = parse("t,y\n1,2.0\n2,3.5\n3,1.0\n").unwrap();
        assert_eq!(d.n_channels(), 0);
        assert_eq!(d.len(), 3);
    }

    #[test]
    fn negative_spend_rejected_with_location() {
        let err = parse("t,y,x_tv\n1,2.0,1\n2,3.0,-4\n").unwrap_err();
        match err {
            Error::Schema { location, .. } => assert_eq!(location, "line 3, column 3"),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn gap_names_missing_period() {
        let err = parse("t,y\n1,2\n2,2\n4,2\n").unwrap_err();
        assert!(err.to_string().contains("period 3 is missing"), "{err}");
    }

    #[test]
    fn unknown_column_and_missing_value_rejected() {
        assert!(matches!(parse("t,y,z\n1,2,3\n"), Err(Error::Schema { .. })));
        assert!(matches!(parse("t,y,x_a\n1,2,\n"), Err(Error::Schema { .. })));
        assert!(matches!(parse("t,y,d_h\n1,2,0.5\n"), Err(Error::Schema { .. })));
    }

    #[test]
    fn round_trip_is_identity() {
        let d = parse("t,date,y,x_a,x_b,d_h\n5,2020-01-01,1.25,3,0.1,1\n6,2020-02-01,0.1,4,0.2,0\n").unwrap();
        let mut buf = Vec::new();
        d.write_csv(&mut buf).unwrap();
        assert_eq!(parse(std::str::from_utf8(&buf).unwrap()).unwrap(), d);
    }

    #[test]
    fn sparse_channel_becomes_dummy() {
        let mut vals = vec![0.0; 20];
        vals[3] = 50.0;
        let mut d = Dataset::new(
            (1..=20).collect(),
            vec![1.0; 20],
            vec![Channel::new("tv", vec![5.0; 20]), Channel::new("event", vals)],
            vec![],
        )
        .unwrap();
        assert_eq!(sparse_channels_to_dummies(&mut d, 0.1), vec!["event".to_string()]);
        assert_eq!(d.n_channels(), 1);
        assert_eq!(d.dummies[0].values[3], 1.0);
        assert_eq!(d.dummies[0].values.iter().sum::<f64>(), 1.0);
    }
}
