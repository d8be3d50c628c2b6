use rand::Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Row-major dense matrix. Serializes as nested row arrays.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::dim("matrix data", rows * cols, data.len()));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let n = rows.len();
        let mut data = Vec::with_capacity(n * cols);
        for row in rows {
            if row.len() != cols {
                return Err(Error::dim("matrix row", cols, row.len()));
            }
            data.extend(row);
        }
        Ok(Self { rows: n, cols, data })
    }

    /// Uniform Glorot initialization.
    pub fn glorot<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> Self {
        let limit = (6.0 / (rows + cols).max(1) as f64).sqrt();
        let data = (0..rows * cols).map(|_| rng.random_range(-limit..=limit)).collect();
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.rows).map(|i| self.row(i).to_vec()).collect()
    }

    /// `out += self · x` over the column range `offset..offset + x.len()`.
    pub fn matvec_acc(&self, x: &[f64], offset: usize, out: &mut [f64]) {
        debug_assert!(offset + x.len() <= self.cols);
        for (i, o) in out.iter_mut().enumerate().take(self.rows) {
            let row = &self.row(i)[offset..offset + x.len()];
            *o += super::dot(row, x);
        }
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.rows];
        self.matvec_acc(x, 0, &mut out);
        out
    }

    /// `out += selfᵀ · g`.
    pub fn matvec_t_acc(&self, g: &[f64], out: &mut [f64]) {
        for (i, &gi) in g.iter().enumerate() {
            if gi == 0.0 {
                continue;
            }
            for (o, w) in out.iter_mut().zip(self.row(i)) {
                *o += gi * w;
            }
        }
    }

    /// `out += self[:, offset..offset + out.len()]ᵀ · g`.
    pub fn matvec_t_range_acc(&self, g: &[f64], offset: usize, out: &mut [f64]) {
        debug_assert!(offset + out.len() <= self.cols);
        for (i, &gi) in g.iter().enumerate() {
            if gi == 0.0 {
                continue;
            }
            let row = &self.row(i)[offset..offset + out.len()];
            for (o, w) in out.iter_mut().zip(row) {
                *o += gi * w;
            }
        }
    }

    /// `self[:, offset..offset + x.len()] += g ⊗ x`.
    pub fn add_outer(&mut self, g: &[f64], x: &[f64], offset: usize) {
        let cols = self.cols;
        for (i, &gi) in g.iter().enumerate() {
            if gi == 0.0 {
                continue;
            }
            let row = &mut self.data[i * cols + offset..i * cols + offset + x.len()];
            for (w, xv) in row.iter_mut().zip(x) {
                *w += gi * xv;
            }
        }
    }
}

impl Serialize for Matrix {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        use serde::ser::SerializeSeq;
        let mut seq = serializer.serialize_seq(Some(self.rows))?;
        for i in 0..self.rows {
            seq.serialize_element(self.row(i))?;
        }
        seq.end()
    }
}

impl<'de> Deserialize<'de> for Matrix {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(deserializer)?;
        Matrix::from_rows(rows).map_err(serde::de::Error::custom)
    }
}

/// Weights and bias of one affine layer (`out × in`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseParams {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl DenseParams {
    pub fn zeros(out_dim: usize, in_dim: usize) -> Self {
        Self {
            weight: Matrix::zeros(out_dim, in_dim),
            bias: vec![0.0; out_dim],
        }
    }

    pub fn glorot<R: Rng + ?Sized>(rng: &mut R, out_dim: usize, in_dim: usize) -> Self {
        Self {
            weight: Matrix::glorot(rng, out_dim, in_dim),
            bias: vec![0.0; out_dim],
        }
    }

    pub fn new(weight: Matrix, bias: Vec<f64>) -> Result<Self> {
        if weight.rows() != bias.len() {
            return Err(Error::dim("dense bias", weight.rows(), bias.len()));
        }
        Ok(Self { weight, bias })
    }

    pub fn in_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn is_finite(&self) -> bool {
        self.weight.as_slice().iter().chain(&self.bias).all(|v| v.is_finite())
    }
}

/// `weight · x + bias`.
pub fn affine(params: &DenseParams, x: &[f64]) -> Result<Vec<f64>> {
    if x.len() != params.in_dim() {
        return Err(Error::dim("affine input", params.in_dim(), x.len()));
    }
    let mut out = params.bias.clone();
    params.weight.matvec_acc(x, 0, &mut out);
    Ok(out)
}
