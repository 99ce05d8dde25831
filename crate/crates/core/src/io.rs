//! JSON representations. Matrices are row-major nested arrays.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::activation::Activation;
use crate::error::{Error, Result};
use crate::identify::NoiseModel;
use crate::linearize::LtiModel;
use crate::reservoir::{Readout, ReservoirParams};

pub fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

/// Builds a matrix from row-major nested arrays. With `shape = None` the
/// column count comes from the first row; an empty array is `0×0`.
pub fn matrix_from_rows(what: &str, rows: &[Vec<f64>], shape: Option<(usize, usize)>) -> Result<DMatrix<f64>> {
    let ncols = match shape {
        Some((r, c)) => {
            if rows.len() != r {
                return Err(Error::Dimension(format!("{what} must have {r} rows, got {}", rows.len())));
            }
            c
        }
        None => rows.first().map_or(0, |r| r.len()),
    };
    for (i, row) in rows.iter().enumerate() {
        if row.len() != ncols {
            return Err(Error::Dimension(format!(
                "{what} row {i} has {} entries, expected {ncols}",
                row.len()
            )));
        }
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

pub fn vector_from_slice(what: &str, v: &[f64], len: Option<usize>) -> Result<DVector<f64>> {
    if let Some(l) = len {
        if v.len() != l {
            return Err(Error::Dimension(format!("{what} must have length {l}, got {}", v.len())));
        }
    }
    Ok(DVector::from_column_slice(v))
}

/// `#[serde(with = "rows")]` for `DMatrix<f64>`.
pub mod rows {
    use super::*;
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
        matrix_to_rows(m).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<DMatrix<f64>, D::Error> {
        let raw = Vec::<Vec<f64>>::deserialize(d)?;
        matrix_from_rows("matrix", &raw, None).map_err(serde::de::Error::custom)
    }
}

/// `#[serde(with = "opt_rows")]` for `Option<DMatrix<f64>>`.
pub mod opt_rows {
    use super::*;
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(m: &Option<DMatrix<f64>>, s: S) -> std::result::Result<S::Ok, S::Error> {
        m.as_ref().map(matrix_to_rows).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Option<DMatrix<f64>>, D::Error> {
        let raw = Option::<Vec<Vec<f64>>>::deserialize(d)?;
        raw.map(|r| matrix_from_rows("matrix", &r, None))
            .transpose()
            .map_err(serde::de::Error::custom)
    }
}

/// `#[serde(with = "vector")]` for `DVector<f64>`.
pub mod vector {
    use super::*;
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &DVector<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
        v.as_slice().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<DVector<f64>, D::Error> {
        Ok(DVector::from_vec(Vec::<f64>::deserialize(d)?))
    }
}

/// `#[serde(with = "opt_vector")]` for `Option<DVector<f64>>`.
pub mod opt_vector {
    use super::*;
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &Option<DVector<f64>>, s: S) -> std::result::Result<S::Ok, S::Error> {
        v.as_ref().map(|x| x.as_slice().to_vec()).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Option<DVector<f64>>, D::Error> {
        Ok(Option::<Vec<f64>>::deserialize(d)?.map(DVector::from_vec))
    }
}

/// Reservoir model file: dimensions, leak, activation, `W`, `U`, `b` and an
/// optional readout `C`, `d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub n: usize,
    pub m: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<usize>,
    pub leak: f64,
    pub activation: Activation,
    #[serde(rename = "W")]
    pub w: Vec<Vec<f64>>,
    #[serde(rename = "U")]
    pub u: Vec<Vec<f64>>,
    pub b: Vec<f64>,
    #[serde(rename = "C", default, skip_serializing_if = "Option::is_none")]
    pub c: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d: Option<Vec<f64>>,
}

impl ModelFile {
    pub fn from_parts(p: &ReservoirParams, readout: Option<&Readout>) -> Self {
        Self {
            n: p.n(),
            m: p.m(),
            p: readout.map(|r| r.p()),
            leak: p.leak,
            activation: p.activation,
            w: matrix_to_rows(&p.w),
            u: matrix_to_rows(&p.u),
            b: p.b.as_slice().to_vec(),
            c: readout.map(|r| matrix_to_rows(&r.c)),
            d: readout.map(|r| r.d.as_slice().to_vec()),
        }
    }

    /// Validated reservoir plus readout. A readout with `C` but no `d`
    /// gets `d = 0`; `d` without `C` is rejected.
    pub fn to_parts(&self) -> Result<(ReservoirParams, Option<Readout>)> {
        let w = matrix_from_rows("W", &self.w, Some((self.n, self.n)))?;
        let u = matrix_from_rows("U", &self.u, Some((self.n, self.m)))?;
        let b = vector_from_slice("b", &self.b, Some(self.n))?;
        let params = ReservoirParams::new(w, u, b, self.leak, self.activation)?;
        let readout = match (&self.c, &self.d) {
            (Some(c), d) => {
                let p = self.p.unwrap_or(c.len());
                let c = matrix_from_rows("C", c, Some((p, self.n)))?;
                let d = match d {
                    Some(d) => vector_from_slice("d", d, Some(p))?,
                    None => DVector::zeros(p),
                };
                Some(Readout::new(c, d)?)
            }
            (None, Some(_)) => return Err(Error::Dimension("model file has d without C".into())),
            (None, None) => None,
        };
        Ok((params, readout))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LtiFile {
    #[serde(rename = "A")]
    pub a: Vec<Vec<f64>>,
    #[serde(rename = "B")]
    pub b: Vec<Vec<f64>>,
    #[serde(rename = "C")]
    pub c: Vec<Vec<f64>>,
    #[serde(rename = "D", default, skip_serializing_if = "Option::is_none")]
    pub d: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x_bar: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub u_bar: Option<Vec<f64>>,
}

impl LtiFile {
    pub fn from_model(m: &LtiModel) -> Self {
        Self {
            a: matrix_to_rows(&m.a),
            b: matrix_to_rows(&m.b),
            c: matrix_to_rows(&m.c),
            d: Some(matrix_to_rows(&m.d)),
            x_bar: m.x_bar.as_ref().map(|v| v.as_slice().to_vec()),
            u_bar: m.u_bar.as_ref().map(|v| v.as_slice().to_vec()),
        }
    }

    /// Missing `D` means zero feedthrough.
    pub fn to_model(&self) -> Result<LtiModel> {
        let n = self.a.len();
        let a = matrix_from_rows("A", &self.a, Some((n, n)))?;
        let m = self.b.first().map_or(0, |r| r.len());
        let b = matrix_from_rows("B", &self.b, Some((n, m)))?;
        let p = self.c.len();
        let c = matrix_from_rows("C", &self.c, Some((p, n)))?;
        let d = match &self.d {
            Some(d) => matrix_from_rows("D", d, Some((p, m)))?,
            None => DMatrix::zeros(p, m),
        };
        let model = LtiModel {
            a,
            b,
            c,
            d,
            x_bar: self.x_bar.as_ref().map(|v| DVector::from_column_slice(v)),
            u_bar: self.u_bar.as_ref().map(|v| DVector::from_column_slice(v)),
        };
        model.validate()?;
        Ok(model)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseFile {
    #[serde(rename = "Q")]
    pub q: Vec<Vec<f64>>,
    #[serde(rename = "R")]
    pub r: Vec<Vec<f64>>,
}

impl NoiseFile {
    pub fn from_model(nm: &NoiseModel) -> Self {
        Self {
            q: matrix_to_rows(&nm.q),
            r: matrix_to_rows(&nm.r),
        }
    }

    pub fn to_model(&self) -> Result<NoiseModel> {
        let n = self.q.len();
        let p = self.r.len();
        NoiseModel::new(
            matrix_from_rows("Q", &self.q, Some((n, n)))?,
            matrix_from_rows("R", &self.r, Some((p, p)))?,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn model_file_round_trip() {
        let json = r#"{"n":2,"m":1,"leak":0.5,"activation":{"leaky_slope":0.1},
            "W":[[0.1,0.2],[0.3,0.4]],"U":[[1.0],[2.0]],"b":[0.0,0.5],"C":[[1.0,0.0]]}"#;
        let f: ModelFile = serde_json::from_str(json).unwrap();
        let (p, r) = f.to_parts().unwrap();
        assert_eq!(p.w[(1, 0)], 0.3);
        assert_eq!(p.u[(1, 0)], 2.0);
        let r = r.unwrap();
        assert_eq!(r.d, DVector::zeros(1));
        let back = ModelFile::from_parts(&p, Some(&r));
        let (p2, r2) = back.to_parts().unwrap();
        assert_eq!(p, p2);
        assert_eq!(r, r2.unwrap());
    }

    #[test]
    fn unknown_key_rejected() {
        let json = r#"{"n":1,"m":1,"leak":0.5,"activation":"tanh","W":[[0.1]],"U":[[1.0]],"b":[0.0],"extra":1}"#;
        let err = serde_json::from_str::<ModelFile>(json).unwrap_err();
        assert!(err.to_string().contains("extra"));
    }

    #[test]
    fn ragged_rows_rejected() {
        let err = matrix_from_rows("W", &[vec![1.0, 2.0], vec![3.0]], None).unwrap_err();
        assert_eq!(err.code(), "dimension_mismatch");
    }
}
