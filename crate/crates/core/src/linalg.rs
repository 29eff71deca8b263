//! Dense helpers on top of nalgebra: symmetric eigen-bounds and a row-major
//! JSON representation for matrices.

use nalgebra::DMatrix;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Largest eigenvalue of a symmetric matrix.
pub fn lambda_max(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return f64::NEG_INFINITY;
    }
    m.clone().symmetric_eigenvalues().max()
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn lambda_min(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return f64::INFINITY;
    }
    m.clone().symmetric_eigenvalues().min()
}

pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in i + 1..n {
            let a = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = a;
            m[(j, i)] = a;
        }
    }
}

#[derive(Serialize, Deserialize)]
struct RowMajor {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

pub fn to_row_major(m: &DMatrix<f64>) -> Vec<f64> {
    let mut data = Vec::with_capacity(m.len());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            data.push(m[(i, j)]);
        }
    }
    data
}

pub fn serialize_matrix<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
    RowMajor { rows: m.nrows(), cols: m.ncols(), data: to_row_major(m) }.serialize(s)
}

pub fn deserialize_matrix<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
    let r = RowMajor::deserialize(d)?;
    if r.data.len() != r.rows * r.cols {
        return Err(serde::de::Error::custom("matrix data length does not match its shape"));
    }
    Ok(DMatrix::from_row_slice(r.rows, r.cols, &r.data))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn row_major_roundtrip() {
        #[derive(Serialize, Deserialize)]
        struct W(
            #[serde(serialize_with = "serialize_matrix", deserialize_with = "deserialize_matrix")] DMatrix<f64>,
        );
        let m = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let text = serde_json::to_string(&W(m.clone())).unwrap();
        assert!(text.contains("[1.0,2.0,3.0,4.0,5.0,6.0]"));
        let back: W = serde_json::from_str(&text).unwrap();
        assert_eq!(back.0, m);
    }

    #[test]
    fn eigen_bounds() {
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        assert!((lambda_max(&m) - 3.0).abs() < 1e-12);
        assert!((lambda_min(&m) - 1.0).abs() < 1e-12);
    }
}
