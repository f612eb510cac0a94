//! Dense row-major matrices in double precision.
//!
//! Everything in the network is a matrix; vectors are 1×n and scalars 1×1.
//! Shapes are explicit — there is no broadcasting except the row-wise bias
//! add exposed by the graph.

use crate::error::{EriError, Result};
use ndarray::ArrayView2;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(EriError::Argument(format!(
                "tensor data length {} does not match shape {}x{}",
                data.len(),
                rows,
                cols
            )));
        }
        Ok(Tensor { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn full(rows: usize, cols: usize, value: f64) -> Self {
        Tensor {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            rows: 1,
            cols: 1,
            data: vec![value],
        }
    }

    pub fn row_vector(data: Vec<f64>) -> Self {
        Tensor {
            rows: 1,
            cols: data.len(),
            data,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> [usize; 2] {
        [self.rows, self.cols]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    pub fn same_shape(&self, other: &Tensor) -> bool {
        self.rows == other.rows && self.cols == other.cols
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// C = self · other.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        if self.cols != other.rows {
            return Err(EriError::shape("matmul", &self.shape(), &other.shape()));
        }
        let a = ArrayView2::from_shape((self.rows, self.cols), &self.data).unwrap();
        let b = ArrayView2::from_shape((other.rows, other.cols), &other.data).unwrap();
        let c = a.dot(&b);
        let (rows, cols) = (self.rows, other.cols);
        Ok(Tensor {
            rows,
            cols,
            data: c.into_raw_vec_and_offset().0,
        })
    }

    /// C = self · otherᵀ.
    pub fn matmul_nt(&self, other: &Tensor) -> Result<Tensor> {
        if self.cols != other.cols {
            return Err(EriError::shape("matmul_nt", &self.shape(), &other.shape()));
        }
        let a = ArrayView2::from_shape((self.rows, self.cols), &self.data).unwrap();
        let b = ArrayView2::from_shape((other.rows, other.cols), &other.data).unwrap();
        let c = a.dot(&b.t());
        let (rows, cols) = (self.rows, other.rows);
        Ok(Tensor {
            rows,
            cols,
            data: c.into_raw_vec_and_offset().0,
        })
    }

    /// C = selfᵀ · other.
    pub fn matmul_tn(&self, other: &Tensor) -> Result<Tensor> {
        if self.rows != other.rows {
            return Err(EriError::shape("matmul_tn", &self.shape(), &other.shape()));
        }
        let a = ArrayView2::from_shape((self.rows, self.cols), &self.data).unwrap();
        let b = ArrayView2::from_shape((other.rows, other.cols), &other.data).unwrap();
        let c = a.t().dot(&b);
        let (rows, cols) = (self.cols, other.cols);
        Ok(Tensor {
            rows,
            cols,
            data: c.into_raw_vec_and_offset().0,
        })
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        debug_assert!(self.same_shape(other));
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale_assign(&mut self, c: f64) {
        for v in &mut self.data {
            *v *= c;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_identity() {
        let i2 = Tensor::new(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let b = Tensor::new(2, 2, vec![5.0, 6.0, 7.0, 8.0]).unwrap();
        assert_eq!(i2.matmul(&b).unwrap(), b);
    }

    #[test]
    fn matmul_matches_triple_loop() {
        // naive oracle
        let a = Tensor::new(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = Tensor::new(2, 1, vec![1.0, 1.0]).unwrap();
        let mut expect = Tensor::zeros(2, 1);
        for i in 0..2 {
            for j in 0..1 {
                let mut s = 0.0;
                for k in 0..2 {
                    s += a.at(i, k) * b.at(k, j);
                }
                expect.set(i, j, s);
            }
        }
        assert_eq!(expect.data(), &[3.0, 7.0]);
        assert_eq!(a.matmul(&b).unwrap(), expect);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let a = Tensor::zeros(2, 3);
        let b = Tensor::zeros(4, 2);
        let err = a.matmul(&b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("[4, 2]"), "{msg}");
    }
}
