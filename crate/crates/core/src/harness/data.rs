//! Datasets and CSV ingestion.

use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::likelihoods::Likelihood;

/// Observations sorted by `x`. `order[i]` is the original row of sorted entry `i`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Dataset {
    pub x: Vec<f64>,
    /// Spatial coordinates per row; empty vectors for purely temporal data.
    pub r: Vec<Vec<f64>>,
    pub y: Vec<f64>,
    pub order: Vec<usize>,
}

impl Dataset {
    /// Validate and sort by `x` (stable). `r` may be empty for temporal data.
    pub fn new(x: Vec<f64>, r: Vec<Vec<f64>>, y: Vec<f64>) -> Result<Self> {
        let n = x.len();
        let r = if r.is_empty() { vec![Vec::new(); n] } else { r };
        if y.len() != n || r.len() != n {
            return Err(Error::Dimension(format!(
                "{n} inputs, {} locations, {} targets",
                r.len(),
                y.len()
            )));
        }
        let p = r.first().map_or(0, Vec::len);
        for i in 0..n {
            if !x[i].is_finite() || !y[i].is_finite() || r[i].iter().any(|v| !v.is_finite()) {
                return Err(Error::Data {
                    line: i + 2,
                    reason: "non-finite value".into(),
                });
            }
            if r[i].len() != p {
                return Err(Error::Data {
                    line: i + 2,
                    reason: format!("expected {p} spatial coordinates"),
                });
            }
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
        Ok(Dataset {
            x: order.iter().map(|&i| x[i]).collect(),
            r: order.iter().map(|&i| r[i].clone()).collect(),
            y: order.iter().map(|&i| y[i]).collect(),
            order,
        })
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn spatial_dim(&self) -> usize {
        self.r.first().map_or(0, Vec::len)
    }

    /// Rows at the given sorted positions, keeping their original row ids.
    pub fn subset(&self, idx: &[usize]) -> Dataset {
        let mut idx = idx.to_vec();
        idx.sort_unstable();
        Dataset {
            x: idx.iter().map(|&i| self.x[i]).collect(),
            r: idx.iter().map(|&i| self.r[i].clone()).collect(),
            y: idx.iter().map(|&i| self.y[i]).collect(),
            order: idx.iter().map(|&i| self.order[i]).collect(),
        }
    }

    pub fn check_likelihood(&self, lik: &Likelihood) -> Result<()> {
        for (i, &y) in self.y.iter().enumerate() {
            lik.check_y(y).map_err(|e| match e {
                Error::LikelihoodDomain { likelihood, y } => Error::Data {
                    line: self.order[i] + 2,
                    reason: format!("{y} is invalid for the {likelihood} likelihood"),
                },
                other => other,
            })?;
        }
        Ok(())
    }
}

fn parse(field: &str, line: usize, col: &str) -> Result<f64> {
    let v: f64 = field.trim().parse().map_err(|_| Error::Data {
        line,
        reason: format!("column `{col}`: cannot parse `{field}`"),
    })?;
    if !v.is_finite() {
        return Err(Error::Data {
            line,
            reason: format!("column `{col}` is not finite"),
        });
    }
    Ok(v)
}

/// Header and `(line number, values)` rows.
type Rows = (Vec<String>, Vec<(usize, Vec<f64>)>);

fn read_rows(path: &Path) -> Result<Rows> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| Error::Data {
            line: 1,
            reason: e.to_string(),
        })?
        .iter()
        .map(str::to_owned)
        .collect();
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::Data {
            line: e.position().map_or(0, |p| p.line() as usize),
            reason: e.to_string(),
        })?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let vals = rec
            .iter()
            .zip(&header)
            .map(|(f, col)| parse(f, line, col))
            .collect::<Result<Vec<f64>>>()?;
        rows.push((line, vals));
    }
    Ok((header, rows))
}

/// Load `x[,r1..rp],y` from a headed CSV file.
pub fn load_csv(path: &Path, lik: Option<&Likelihood>) -> Result<Dataset> {
    let (header, rows) = read_rows(path)?;
    let p = header.len().saturating_sub(2);
    let expected: Vec<String> = std::iter::once("x".to_string())
        .chain((1..=p).map(|i| format!("r{i}")))
        .chain(std::iter::once("y".to_string()))
        .collect();
    if header.len() < 2 || header != expected {
        return Err(Error::Data {
            line: 1,
            reason: format!(
                "header must be {}, got {}",
                expected.join(","),
                header.join(",")
            ),
        });
    }
    let mut x = Vec::with_capacity(rows.len());
    let mut r = Vec::with_capacity(rows.len());
    let mut y = Vec::with_capacity(rows.len());
    for (line, v) in rows {
        if let Some(lik) = lik {
            lik.check_y(v[p + 1]).map_err(|_| Error::Data {
                line,
                reason: format!("{} is invalid for the {} likelihood", v[p + 1], lik.name()),
            })?;
        }
        x.push(v[0]);
        r.push(v[1..=p].to_vec());
        y.push(v[p + 1]);
    }
    Dataset::new(x, if p == 0 { Vec::new() } else { r }, y)
}

/// Load a headed CSV of points (e.g. spatial inducing locations), one per row.
pub fn load_points_csv(path: &Path) -> Result<Vec<Vec<f64>>> {
    let (_, rows) = read_rows(path)?;
    if rows.is_empty() {
        return Err(Error::Data {
            line: 2,
            reason: "no points".into(),
        });
    }
    Ok(rows.into_iter().map(|(_, v)| v).collect())
}
