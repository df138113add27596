use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};

/// A header plus string cells; numbers are kept in shortest round-trip form.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

pub const BASELINE: &str = "W";
pub const FUSED: &str = "W+T";
pub const DELTA: &str = "Delta";

fn cells(values: &[f64]) -> impl Iterator<Item = String> + '_ {
    values.iter().map(|v| v.to_string())
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation, 0 for a single value.
fn std_dev(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

fn column_stat(rows: &[&[f64]], f: fn(&[f64]) -> f64) -> Vec<f64> {
    let width = rows.first().map_or(0, |r| r.len());
    (0..width)
        .map(|j| f(&rows.iter().map(|r| r[j]).collect::<Vec<_>>()))
        .collect()
}

fn delta(fused: &[f64], baseline: &[f64]) -> Vec<f64> {
    fused.iter().zip(baseline).map(|(t, w)| t - w).collect()
}

/// Per-seed W, W+T and Delta rows followed by seed means (with their Delta)
/// and standard deviations.
pub fn run_report(columns: &[String], seeds: &[(u64, Vec<f64>, Vec<f64>)]) -> Table {
    let mut header = vec!["group".to_string(), "model".to_string()];
    header.extend(columns.iter().cloned());
    let mut rows = Vec::new();
    let mut push = |group: String, model: &str, values: &[f64]| {
        let mut row = vec![group, model.to_string()];
        row.extend(cells(values));
        rows.push(row);
    };
    for (seed, w, wt) in seeds {
        let group = format!("seed={seed}");
        push(group.clone(), BASELINE, w);
        push(group.clone(), FUSED, wt);
        push(group, DELTA, &delta(wt, w));
    }
    let ws: Vec<&[f64]> = seeds.iter().map(|s| s.1.as_slice()).collect();
    let wts: Vec<&[f64]> = seeds.iter().map(|s| s.2.as_slice()).collect();
    let (mean_w, mean_wt) = (column_stat(&ws, mean), column_stat(&wts, mean));
    push("mean".into(), BASELINE, &mean_w);
    push("mean".into(), FUSED, &mean_wt);
    push("mean".into(), DELTA, &delta(&mean_wt, &mean_w));
    push("std".into(), BASELINE, &column_stat(&ws, std_dev));
    push("std".into(), FUSED, &column_stat(&wts, std_dev));
    Table { header, rows }
}

impl Table {
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header)?;
        for row in &self.rows {
            w.write_record(row)?;
        }
        Ok(String::from_utf8(w.into_inner()?)?)
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
        let rows = r
            .records()
            .map(|rec| Ok(rec?.iter().map(str::to_string).collect()))
            .collect::<Result<Vec<Vec<String>>>>()?;
        Ok(Self { header, rows })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_csv(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv()?).with_context(|| format!("writing {}", path.display()))
    }

    pub fn column(&self, name: &str) -> Result<usize> {
        match self.header.iter().position(|h| h == name) {
            Some(i) => Ok(i),
            None => bail!("no column {name:?}"),
        }
    }

    /// The first row whose leading cells equal `key`.
    pub fn find(&self, key: &[&str]) -> Option<&[String]> {
        self.rows
            .iter()
            .find(|r| r.iter().zip(key).all(|(a, b)| a == b) && r.len() >= key.len())
            .map(Vec::as_slice)
    }

    /// Parsed numeric cells of a row from column `from` on.
    pub fn numbers(row: &[String], from: usize) -> Result<Vec<f64>> {
        row[from..]
            .iter()
            .map(|c| c.parse::<f64>().with_context(|| format!("cell {c:?} is not a number")))
            .collect()
    }

    /// Aligned plain-text rendering with numbers to two decimals.
    pub fn render(&self) -> String {
        let fmt = |c: &str| match c.parse::<f64>() {
            Ok(v) => format!("{v:.2}"),
            Err(_) => c.to_string(),
        };
        let body: Vec<Vec<String>> = self.rows.iter().map(|r| r.iter().map(|c| fmt(c)).collect()).collect();
        let widths: Vec<usize> = (0..self.header.len())
            .map(|j| {
                body.iter()
                    .filter_map(|r| r.get(j))
                    .chain(std::iter::once(&self.header[j]))
                    .map(|c| c.chars().count())
                    .max()
                    .unwrap_or(0)
            })
            .collect();
        let line = |cells: &[String], numeric: &dyn Fn(usize) -> bool| {
            cells
                .iter()
                .enumerate()
                .map(|(j, c)| {
                    if numeric(j) {
                        format!("{c:>w$}", w = widths[j])
                    } else {
                        format!("{c:<w$}", w = widths[j])
                    }
                })
                .collect::<Vec<_>>()
                .join("  ")
                .trim_end()
                .to_string()
        };
        let is_numeric = |j: usize| self.rows.iter().any(|r| r.get(j).is_some_and(|c| c.parse::<f64>().is_ok()));
        let mut out = vec![line(&self.header, &is_numeric)];
        out.push(widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>().join("  "));
        for r in &body {
            out.push(line(r, &is_numeric));
        }
        out.join("\n") + "\n"
    }
}
