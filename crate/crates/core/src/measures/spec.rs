//! JSON measure descriptions.

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::{Factor, Measure};
use crate::cloud::{PointCloud, WeightedCloud};
use crate::error::{invalid, Error, Result};

/// `{"family": ..., "dim": d, "params": {...}}`.
///
/// Families and their parameters:
/// - `gaussian`: `variance` (default 1)
/// - `uniform_box`: `lo`, `hi`
/// - `exponential_centered`: none
/// - `quartic`: `alpha` (density proportional to `exp(-x^2/2 - alpha x^4)`)
/// - `product`: `factors`, a list of one-dimensional specs
/// - `empirical`: `points` (list of rows) with optional `weights`, or `csv` (path)
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasureSpec {
    pub family: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dim: Option<usize>,
    #[serde(default)]
    pub params: Map<String, Value>,
}

impl MeasureSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

fn number(params: &Map<String, Value>, key: &str, default: Option<f64>) -> Result<f64> {
    match params.get(key) {
        Some(v) => v
            .as_f64()
            .ok_or_else(|| invalid(format!("parameter `{key}` must be a number"))),
        None => default.ok_or_else(|| invalid(format!("missing parameter `{key}`"))),
    }
}

fn factor_of(spec: &MeasureSpec) -> Result<Factor> {
    let p = &spec.params;
    match spec.family.as_str() {
        "gaussian" => Factor::gaussian(number(p, "variance", Some(1.0))?),
        "uniform_box" => Factor::uniform(number(p, "lo", None)?, number(p, "hi", None)?),
        "exponential_centered" => Ok(Factor::exponential_centered()),
        "quartic" => Factor::quartic(number(p, "alpha", None)?),
        "product" | "empirical" => Err(invalid(format!(
            "`{}` cannot be used as a one-dimensional factor",
            spec.family
        ))),
        other => Err(Error::UnknownFamily(other.to_string())),
    }
}

/// Builds a measure from its description.
///
/// Analytic inputs that are not centered are translated to mean zero and
/// carry the `auto_centered` flag; empirical clouds are kept as given.
pub fn make_measure(spec: &MeasureSpec) -> Result<Measure> {
    let dim = spec.dim.unwrap_or(1);
    if dim == 0 {
        return Err(invalid("dimension must be positive"));
    }
    let measure = match spec.family.as_str() {
        "product" => {
            let list = spec
                .params
                .get("factors")
                .and_then(Value::as_array)
                .ok_or_else(|| invalid("product needs a `factors` list"))?;
            let factors = list
                .iter()
                .map(|v| {
                    let s: MeasureSpec = serde_json::from_value(v.clone())?;
                    if s.dim.unwrap_or(1) != 1 {
                        return Err(invalid("product factors must be one-dimensional"));
                    }
                    factor_of(&s)
                })
                .collect::<Result<Vec<_>>>()?;
            if let Some(d) = spec.dim {
                if d != factors.len() {
                    return Err(Error::DimensionMismatch {
                        expected: d,
                        got: factors.len(),
                    });
                }
            }
            Measure::product(factors)?
        }
        "empirical" => return Measure::empirical(cloud_of(spec)?),
        _ => Measure::iid(dim, factor_of(spec)?)?,
    };
    if measure.flags().centered {
        Ok(measure)
    } else {
        log::warn!("measure `{}` is not centered; translating to mean zero", measure.label());
        measure.centered()
    }
}

fn cloud_of(spec: &MeasureSpec) -> Result<WeightedCloud> {
    let p = &spec.params;
    let cloud = if let Some(path) = p.get("csv").and_then(Value::as_str) {
        WeightedCloud::from_csv_path(path)?
    } else {
        let rows = p
            .get("points")
            .and_then(Value::as_array)
            .ok_or_else(|| invalid("empirical needs `points` or `csv`"))?;
        let rows = rows
            .iter()
            .map(|r| match r {
                Value::Number(n) => Ok(vec![n.as_f64().unwrap_or(f64::NAN)]),
                Value::Array(a) => a
                    .iter()
                    .map(|v| v.as_f64().ok_or_else(|| invalid("point coordinates must be numbers")))
                    .collect(),
                _ => Err(invalid("points must be numbers or lists of numbers")),
            })
            .collect::<Result<Vec<Vec<f64>>>>()?;
        let points = PointCloud::from_rows(&rows)?;
        match p.get("weights").and_then(Value::as_array) {
            Some(w) => {
                let w = w
                    .iter()
                    .map(|v| v.as_f64().ok_or_else(|| invalid("weights must be numbers")))
                    .collect::<Result<Vec<_>>>()?;
                WeightedCloud::weighted(points, w)?
            }
            None => WeightedCloud::uniform(points)?,
        }
    };
    if let Some(d) = spec.dim {
        if d != cloud.dim() {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: cloud.dim(),
            });
        }
    }
    Ok(cloud)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(s: &str) -> Result<Measure> {
        make_measure(&MeasureSpec::from_json(s)?)
    }

    #[test]
    fn families_parse() {
        let g = parse(r#"{"family":"gaussian","dim":2,"params":{"variance":1}}"#).unwrap();
        assert!(g.flags().isotropic);
        let u = parse(r#"{"family":"uniform_box","params":{"lo":-1,"hi":1}}"#).unwrap();
        assert!((u.covariance()[(0, 0)] - 1.0 / 3.0).abs() < 1e-14);
        let p = parse(
            r#"{"family":"product","params":{"factors":[{"family":"gaussian"},{"family":"exponential_centered"}]}}"#,
        )
        .unwrap();
        assert_eq!(p.dim(), 2);
        let e = parse(r#"{"family":"empirical","params":{"points":[-1,1]}}"#).unwrap();
        assert!(e.is_empirical());
    }

    #[test]
    fn uncentered_input_is_translated() {
        let u = parse(r#"{"family":"uniform_box","params":{"lo":0,"hi":2}}"#).unwrap();
        assert!(u.flags().centered && u.flags().auto_centered);
    }

    #[test]
    fn errors_are_specific() {
        assert!(matches!(parse(r#"{"family":"cauchy"}"#), Err(Error::UnknownFamily(_))));
        assert!(matches!(
            parse(r#"{"family":"gaussian","params":{"variance":-1}}"#),
            Err(Error::InvalidParameter(_))
        ));
        assert!(matches!(
            parse(r#"{"family":"empirical","dim":2,"params":{"points":[[0,0],[0,0]]}}"#),
            Err(Error::HyperplaneSupport { .. })
        ));
    }
}
