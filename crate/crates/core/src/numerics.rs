//! Dense forward kernels: softmax, exact GeLU, layer normalization, the
//! two-projection FFN block and attention pooling.
//!
//! Values are held as `f64` in memory; the on-disk container stores `f32`.

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};

pub const LAYER_NORM_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows * cols != data.len() {
            return Err(shape_err("Matrix::new", rows * cols, data.len()));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("matrix entries must be finite".into()));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Matrix { rows, cols, data }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != cols) {
            return Err(shape_err("Matrix::from_rows", cols, bad.len()));
        }
        Matrix::new(rows.len(), cols, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn is_empty(&self) -> bool {
        self.rows == 0
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row_iter(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks(self.cols.max(1)).take(self.rows)
    }

    /// Rows `range` as a new matrix.
    pub fn slice_rows(&self, range: std::ops::Range<usize>) -> Matrix {
        Matrix {
            rows: range.len(),
            cols: self.cols,
            data: self.data[range.start * self.cols..range.end * self.cols].to_vec(),
        }
    }

    /// `x · self` for a row vector `x` of length `rows`.
    pub fn vec_mul(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.rows {
            return Err(shape_err("vec_mul", self.rows, x.len()));
        }
        let mut out = vec![0.0; self.cols];
        for (xi, row) in x.iter().zip(self.row_iter()) {
            for (o, w) in out.iter_mut().zip(row) {
                *o += xi * w;
            }
        }
        Ok(out)
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Numerically stable softmax. Entries equal to `-inf` receive zero mass.
pub fn softmax(v: &[f64]) -> Result<Vec<f64>> {
    if v.is_empty() {
        return Err(Error::Empty("softmax input"));
    }
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::Config("softmax input has no finite entry".into()));
    }
    let exps: Vec<f64> = v.iter().map(|x| (x - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / total).collect())
}

/// `x · Φ(x)` with the erf-based normal CDF.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

pub fn layer_norm(v: &[f64], gamma: &[f64], beta: &[f64], eps: f64) -> Result<Vec<f64>> {
    if v.len() != gamma.len() || v.len() != beta.len() {
        return Err(shape_err(
            "layer_norm",
            format!("{} / {}", gamma.len(), beta.len()),
            v.len(),
        ));
    }
    if v.is_empty() {
        return Err(Error::Empty("layer_norm input"));
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let inv = 1.0 / (var + eps).sqrt();
    Ok(v.iter()
        .zip(gamma.iter().zip(beta))
        .map(|(x, (g, b))| (x - mean) * inv * g + b)
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FfnWeights {
    /// `D_in × D_hidden`
    pub w1: Matrix,
    pub b1: Vec<f64>,
    /// `D_hidden × D_out`
    pub w2: Matrix,
    pub b2: Vec<f64>,
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
}

impl FfnWeights {
    pub fn new(w1: Matrix, b1: Vec<f64>, w2: Matrix, b2: Vec<f64>, gamma: Vec<f64>, beta: Vec<f64>) -> Result<Self> {
        let w = FfnWeights {
            w1,
            b1,
            w2,
            b2,
            gamma,
            beta,
        };
        w.validate()?;
        Ok(w)
    }

    /// Zero projections with unit layer-norm scale.
    pub fn zeros(d_in: usize, d_hidden: usize, d_out: usize) -> Self {
        FfnWeights {
            w1: Matrix::zeros(d_in, d_hidden),
            b1: vec![0.0; d_hidden],
            w2: Matrix::zeros(d_hidden, d_out),
            b2: vec![0.0; d_out],
            gamma: vec![1.0; d_hidden],
            beta: vec![0.0; d_hidden],
        }
    }

    pub fn d_in(&self) -> usize {
        self.w1.rows()
    }

    pub fn d_hidden(&self) -> usize {
        self.w1.cols()
    }

    pub fn d_out(&self) -> usize {
        self.w2.cols()
    }

    pub fn validate(&self) -> Result<()> {
        let h = self.w1.cols();
        let checks = [
            ("ffn.b1", h, self.b1.len()),
            ("ffn.w2 rows", h, self.w2.rows()),
            ("ffn.b2", self.w2.cols(), self.b2.len()),
            ("ffn.gamma", h, self.gamma.len()),
            ("ffn.beta", h, self.beta.len()),
        ];
        for (ctx, want, got) in checks {
            if want != got {
                return Err(shape_err(ctx, want, got));
            }
        }
        Ok(())
    }
}

/// `W2 · layer_norm(gelu(W1 · x + b1)) + b2`
pub fn ffn(x: &[f64], w: &FfnWeights) -> Result<Vec<f64>> {
    if x.len() != w.d_in() {
        return Err(shape_err("ffn input", w.d_in(), x.len()));
    }
    let mut hidden = w.w1.vec_mul(x)?;
    for (h, b) in hidden.iter_mut().zip(&w.b1) {
        *h = gelu(*h + b);
    }
    let normed = layer_norm(&hidden, &w.gamma, &w.beta, LAYER_NORM_EPS)?;
    let mut out = w.w2.vec_mul(&normed)?;
    for (o, b) in out.iter_mut().zip(&w.b2) {
        *o += b;
    }
    Ok(out)
}

/// Per-row scoring function for attention pooling.
#[derive(Debug, Clone, PartialEq)]
pub enum Scorer {
    Linear(Vec<f64>),
    /// FFN whose output width is 1.
    Ffn(FfnWeights),
}

impl Scorer {
    pub fn score(&self, row: &[f64]) -> Result<f64> {
        match self {
            Scorer::Linear(w) => {
                if w.len() != row.len() {
                    return Err(shape_err("linear scorer", w.len(), row.len()));
                }
                Ok(dot(w, row))
            }
            Scorer::Ffn(f) => {
                let out = ffn(row, f)?;
                if out.len() != 1 {
                    return Err(shape_err("ffn scorer output", 1, out.len()));
                }
                Ok(out[0])
            }
        }
    }
}

/// Softmax-weighted average of the rows of `x`; returns `(alpha, h)`.
pub fn attention_pool(x: &Matrix, scorer: &Scorer) -> Result<(Vec<f64>, Vec<f64>)> {
    if x.is_empty() {
        return Err(Error::Empty("attention_pool rows"));
    }
    let scores = x.row_iter().map(|r| scorer.score(r)).collect::<Result<Vec<_>>>()?;
    let alpha = softmax(&scores)?;
    let h = x.vec_mul(&alpha)?;
    Ok((alpha, h))
}
