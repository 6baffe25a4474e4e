//! Minimal dense matrix support for the GRU layers. Row-major storage, no
//! broadcasting, panics on shape mismatch (programmer error).

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Mat { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Shape check used after deserializing weight files.
    pub fn has_shape(&self, rows: usize, cols: usize) -> bool {
        self.rows == rows && self.cols == cols && self.data.len() == rows * cols
    }

    /// `out += self * x`
    pub fn matvec_acc(&self, x: &[f64], out: &mut [f64]) {
        assert_eq!(x.len(), self.cols, "matvec shape mismatch");
        assert_eq!(out.len(), self.rows, "matvec shape mismatch");
        for i in 0..self.rows {
            let row = &self.data[i * self.cols..(i + 1) * self.cols];
            let mut acc = 0.0;
            for (w, xv) in row.iter().zip(x) {
                acc += w * xv;
            }
            out[i] += acc;
        }
    }

    /// `out += self^T * y`
    pub fn t_matvec_acc(&self, y: &[f64], out: &mut [f64]) {
        assert_eq!(y.len(), self.rows, "matvec shape mismatch");
        assert_eq!(out.len(), self.cols, "matvec shape mismatch");
        for i in 0..self.rows {
            let row = &self.data[i * self.cols..(i + 1) * self.cols];
            let yi = y[i];
            for (o, w) in out.iter_mut().zip(row) {
                *o += yi * w;
            }
        }
    }

    /// Rank-one update `self += y * x^T`, the gradient of `y = self * x`.
    pub fn outer_acc(&mut self, y: &[f64], x: &[f64]) {
        assert_eq!(y.len(), self.rows, "outer shape mismatch");
        assert_eq!(x.len(), self.cols, "outer shape mismatch");
        for i in 0..self.rows {
            let row = &mut self.data[i * self.cols..(i + 1) * self.cols];
            let yi = y[i];
            for (w, xv) in row.iter_mut().zip(x) {
                *w += yi * xv;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matvec_and_transpose() {
        let m = Mat::from_fn(2, 3, |i, j| (i * 3 + j) as f64); // [[0,1,2],[3,4,5]]
        let mut out = vec![0.0; 2];
        m.matvec_acc(&[1.0, 2.0, 3.0], &mut out);
        assert_eq!(out, vec![8.0, 26.0]);
        let mut tout = vec![0.0; 3];
        m.t_matvec_acc(&[1.0, 10.0], &mut tout);
        assert_eq!(tout, vec![30.0, 41.0, 52.0]);
    }

    #[test]
    fn outer_accumulates() {
        let mut m = Mat::zeros(2, 2);
        m.outer_acc(&[1.0, 2.0], &[3.0, 4.0]);
        m.outer_acc(&[1.0, 0.0], &[1.0, 0.0]);
        assert_eq!(m.data(), &[4.0, 4.0, 6.0, 8.0]);
    }
}
