//! Point clouds and weighted point clouds.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Row-major `len × dim` array of points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointCloud {
    dim: usize,
    data: Vec<f64>,
}

impl PointCloud {
    pub fn new(dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(invalid("point dimension must be positive"));
        }
        if data.len() % dim != 0 {
            return Err(invalid(format!(
                "buffer of {} values is not a multiple of dimension {dim}",
                data.len()
            )));
        }
        Ok(Self { dim, data })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let dim = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        let mut data = Vec::with_capacity(rows.len() * dim);
        for r in rows {
            let r = r.as_ref();
            if r.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Self::new(dim.max(1), data)
    }

    pub fn from_scalars(values: Vec<f64>) -> Self {
        Self { dim: 1, data: values }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    /// Column `j` as an owned vector.
    pub fn column(&self, j: usize) -> Vec<f64> {
        self.rows().map(|r| r[j]).collect()
    }

    pub fn map_rows<F: Fn(&[f64]) -> Vec<f64>>(&self, f: F) -> Result<Self> {
        let mut out = Vec::with_capacity(self.data.len());
        let mut dim = None;
        for r in self.rows() {
            let v = f(r);
            dim.get_or_insert(v.len());
            out.extend(v);
        }
        Self::new(dim.unwrap_or(self.dim), out)
    }

    /// Rows `[lo, hi)` as a new cloud.
    pub fn slice(&self, lo: usize, hi: usize) -> Self {
        Self {
            dim: self.dim,
            data: self.data[lo * self.dim..hi * self.dim].to_vec(),
        }
    }
}

/// Weights of a discrete measure.
///
/// Clouds built from unweighted samples keep the exact `1/n` form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Weights {
    Uniform(usize),
    Explicit(Vec<f64>),
}

impl Weights {
    #[inline]
    pub fn get(&self, i: usize) -> f64 {
        match self {
            Weights::Uniform(n) => 1.0 / *n as f64,
            Weights::Explicit(w) => w[i],
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Weights::Uniform(n) => *n,
            Weights::Explicit(w) => w.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn to_vec(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.get(i)).collect()
    }

    pub fn is_uniform(&self) -> bool {
        matches!(self, Weights::Uniform(_))
    }
}

/// Points with nonnegative weights summing to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedCloud {
    pub points: PointCloud,
    pub weights: Weights,
}

impl WeightedCloud {
    pub fn uniform(points: PointCloud) -> Result<Self> {
        if points.is_empty() {
            return Err(invalid("empty cloud"));
        }
        let n = points.len();
        Ok(Self {
            points,
            weights: Weights::Uniform(n),
        })
    }

    /// Weighted cloud; weights must be nonnegative and sum to one within 1e-12.
    pub fn weighted(points: PointCloud, weights: Vec<f64>) -> Result<Self> {
        if points.len() != weights.len() {
            return Err(Error::DimensionMismatch {
                expected: points.len(),
                got: weights.len(),
            });
        }
        if points.is_empty() {
            return Err(invalid("empty cloud"));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(invalid("weights must be finite and nonnegative"));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(invalid(format!("weights sum to {total}, expected 1")));
        }
        Ok(Self {
            points,
            weights: Weights::Explicit(weights),
        })
    }

    /// Rescales arbitrary positive weights to sum to one.
    pub fn normalized(points: PointCloud, weights: Vec<f64>) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if !(total > 0.0 && total.is_finite()) {
            return Err(invalid("weights must have a positive finite sum"));
        }
        Self::weighted(points, weights.into_iter().map(|w| w / total).collect())
    }

    pub fn dim(&self) -> usize {
        self.points.dim()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn weight(&self, i: usize) -> f64 {
        self.weights.get(i)
    }

    /// Sorted `(value, weight)` pairs of a one-dimensional cloud.
    pub fn sorted_1d(&self) -> Vec<(f64, f64)> {
        let mut v: Vec<(f64, f64)> = (0..self.len())
            .map(|i| (self.points.row(i)[0], self.weight(i)))
            .collect();
        v.sort_by(|a, b| a.0.total_cmp(&b.0));
        v
    }

    /// Reads a CSV with header `x1,...,xd,weight` (the weight column is optional).
    pub fn from_csv_reader<R: std::io::Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers()?.clone();
        let weight_col = headers.iter().position(|h| h.eq_ignore_ascii_case("weight"));
        let coord_cols: Vec<usize> = (0..headers.len()).filter(|&c| Some(c) != weight_col).collect();
        for (k, &c) in coord_cols.iter().enumerate() {
            let expected = format!("x{}", k + 1);
            if headers[c] != expected {
                return Err(invalid(format!(
                    "CSV header column {} is `{}`, expected `{expected}`",
                    c + 1,
                    &headers[c]
                )));
            }
        }
        let mut data = Vec::new();
        let mut weights = Vec::new();
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let parse = |c: usize| -> Result<f64> {
                rec.get(c)
                    .and_then(|s| s.parse::<f64>().ok())
                    .ok_or_else(|| {
                        invalid(format!(
                            "line {}, column {}: cannot parse `{}` as a number",
                            line + 2,
                            c + 1,
                            rec.get(c).unwrap_or("")
                        ))
                    })
            };
            for &c in &coord_cols {
                data.push(parse(c)?);
            }
            if let Some(c) = weight_col {
                weights.push(parse(c)?);
            }
        }
        let points = PointCloud::new(coord_cols.len().max(1), data)?;
        if weight_col.is_some() {
            let total: f64 = weights.iter().sum();
            if (total - 1.0).abs() > 1e-12 {
                return Self::normalized(points, weights);
            }
            Self::weighted(points, weights)
        } else {
            Self::uniform(points)
        }
    }

    pub fn from_csv_path(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::from_csv_reader(f)
    }

    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header: Vec<String> = (1..=self.dim()).map(|k| format!("x{k}")).collect();
        header.push("weight".into());
        w.write_record(&header)?;
        for i in 0..self.len() {
            let mut rec: Vec<String> = self.points.row(i).iter().map(|v| format!("{v:.16e}")).collect();
            rec.push(format!("{:.16e}", self.weight(i)));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}
