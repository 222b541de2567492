//! Dense row-major tensor over a generic scalar.

use crate::{Error, Result, Scalar};

/// Row-major dense tensor. Construction rejects NaN/Inf and shape/value
/// count mismatches, so everything downstream can assume finite data.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<S: Scalar> {
    shape: Vec<usize>,
    values: Vec<S>,
}

impl<S: Scalar> Tensor<S> {
    pub fn new(shape: impl Into<Vec<usize>>, values: Vec<S>) -> Result<Self> {
        let shape = shape.into();
        let expected: usize = shape.iter().product();
        if expected != values.len() {
            return Err(Error::Shape(format!(
                "shape {:?} needs {} values, got {}",
                shape,
                expected,
                values.len()
            )));
        }
        if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("tensor value {bad}")));
        }
        Ok(Self { shape, values })
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        let shape = shape.into();
        let n = shape.iter().product();
        Self { shape, values: vec![S::zero(); n] }
    }

    pub fn full(shape: impl Into<Vec<usize>>, v: S) -> Self {
        let shape = shape.into();
        let n = shape.iter().product();
        Self { shape, values: vec![v; n] }
    }

    pub fn scalar(v: S) -> Self {
        Self { shape: vec![1], values: vec![v] }
    }

    /// Row vector of shape `[1, n]`.
    pub fn row(values: Vec<S>) -> Self {
        let n = values.len();
        Self { shape: vec![1, n], values }
    }

    pub fn from_rows(rows: &[Vec<S>]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Shape("ragged rows".into()));
        }
        let mut values = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            values.extend_from_slice(r);
        }
        Tensor::new(vec![rows.len(), cols], values)
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(vec![n, n]);
        for i in 0..n {
            t.values[i * n + i] = S::one();
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Number of rows / columns under the 2-D view used by the graph ops:
    /// rank-1 tensors are treated as a single row.
    pub fn rows(&self) -> usize {
        if self.shape.len() >= 2 {
            self.shape[0]
        } else {
            1
        }
    }

    pub fn cols(&self) -> usize {
        match self.shape.len() {
            0 => 1,
            1 => self.shape[0],
            _ => self.shape[1..].iter().product(),
        }
    }

    pub fn values(&self) -> &[S] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [S] {
        &mut self.values
    }

    pub fn item(&self) -> S {
        debug_assert_eq!(self.len(), 1, "item() on non-scalar tensor");
        self.values[0]
    }

    pub fn row_slice(&self, r: usize) -> &[S] {
        let c = self.cols();
        &self.values[r * c..(r + 1) * c]
    }

    pub fn map(&self, f: impl Fn(S) -> S) -> Self {
        Self { shape: self.shape.clone(), values: self.values.iter().map(|&v| f(v)).collect() }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(S, S) -> S) -> Result<Self> {
        if self.shape != other.shape {
            return Err(Error::Shape(format!(
                "elementwise op on {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        let values =
            self.values.iter().zip(&other.values).map(|(&a, &b)| f(a, b)).collect();
        Ok(Self { shape: self.shape.clone(), values })
    }

    /// `self += other * scale`, shapes must match.
    pub fn axpy(&mut self, other: &Self, scale: S) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, &b) in self.values.iter_mut().zip(&other.values) {
            *a = *a + b * scale;
        }
    }

    pub fn fill(&mut self, v: S) {
        self.values.iter_mut().for_each(|x| *x = v);
    }

    pub fn norm2(&self) -> f64 {
        self.values.iter().map(|v| v.f64() * v.f64()).sum::<f64>().sqrt()
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Cast through `f64`, used by checkpoints (stored 64-bit).
    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.values.iter().map(|v| v.f64()).collect()
    }
}

/// `y = x · wᵀ + y_in`, with `x: (B, I)`, `w: (O, I)`, `y: (B, O)`.
/// Both operand rows are contiguous, which keeps the dot products
/// vectorizable.
pub fn matmul_nt<S: Scalar>(x: &Tensor<S>, w: &Tensor<S>, y: &mut Tensor<S>) {
    let (b, i) = (x.rows(), x.cols());
    let (o, wi) = (w.rows(), w.cols());
    debug_assert_eq!(i, wi);
    debug_assert_eq!(y.rows(), b);
    debug_assert_eq!(y.cols(), o);
    let xv = &x.values;
    let wv = &w.values;
    let yv = &mut y.values;
    for bi in 0..b {
        let xrow = &xv[bi * i..(bi + 1) * i];
        let yrow = &mut yv[bi * o..(bi + 1) * o];
        for (oi, yo) in yrow.iter_mut().enumerate() {
            let wrow = &wv[oi * i..(oi + 1) * i];
            let mut acc = S::zero();
            for (&a, &c) in xrow.iter().zip(wrow) {
                acc = acc + a * c;
            }
            *yo += acc;
        }
    }
}

/// `y += x · w`, with `x: (B, O)`, `w: (O, I)`, `y: (B, I)`.
/// Used for input gradients of dense layers.
pub fn matmul_nn_acc<S: Scalar>(x: &Tensor<S>, w: &Tensor<S>, y: &mut Tensor<S>) {
    let (b, o) = (x.rows(), x.cols());
    let (wo, i) = (w.rows(), w.cols());
    debug_assert_eq!(o, wo);
    debug_assert_eq!(y.rows(), b);
    debug_assert_eq!(y.cols(), i);
    let xv = &x.values;
    let wv = &w.values;
    let yv = &mut y.values;
    for bi in 0..b {
        let xrow = &xv[bi * o..(bi + 1) * o];
        let yrow = &mut yv[bi * i..(bi + 1) * i];
        for (oi, &xo) in xrow.iter().enumerate() {
            let wrow = &wv[oi * i..(oi + 1) * i];
            for (yi, &wv_) in yrow.iter_mut().zip(wrow) {
                *yi = *yi + xo * wv_;
            }
        }
    }
}

/// `dw += dyᵀ · x`, with `dy: (B, O)`, `x: (B, I)`, `dw: (O, I)`.
/// Weight-gradient accumulation for dense layers.
pub fn matmul_tn_acc<S: Scalar>(dy: &Tensor<S>, x: &Tensor<S>, dw: &mut Tensor<S>) {
    let (b, o) = (dy.rows(), dy.cols());
    let (xb, i) = (x.rows(), x.cols());
    debug_assert_eq!(b, xb);
    debug_assert_eq!(dw.rows(), o);
    debug_assert_eq!(dw.cols(), i);
    let dyv = &dy.values;
    let xv = &x.values;
    let dwv = &mut dw.values;
    for bi in 0..b {
        let dyrow = &dyv[bi * o..(bi + 1) * o];
        let xrow = &xv[bi * i..(bi + 1) * i];
        for (oi, &d) in dyrow.iter().enumerate() {
            let dwrow = &mut dwv[oi * i..(oi + 1) * i];
            for (w, &xvv) in dwrow.iter_mut().zip(xrow) {
                *w = *w + d * xvv;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn construction_validates_shape_and_finiteness() {
        assert!(Tensor::<f64>::new(vec![2, 2], vec![1.0; 4]).is_ok());
        assert!(matches!(
            Tensor::<f64>::new(vec![2, 2], vec![1.0; 3]),
            Err(Error::Shape(_))
        ));
        assert!(matches!(
            Tensor::<f64>::new(vec![2], vec![1.0, f64::NAN]),
            Err(Error::NonFinite(_))
        ));
        assert!(matches!(
            Tensor::<f64>::new(vec![1], vec![f64::INFINITY]),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn matmul_against_scalar_loops() {
        // 2x3 times (4,3)^T checked against a plain triple loop.
        let x = Tensor::new(vec![2, 3], vec![1.0, 2.0, 3.0, -1.0, 0.5, 2.0]).unwrap();
        let w = Tensor::new(
            vec![4, 3],
            vec![0.5, -1.0, 2.0, 1.0, 1.0, 1.0, 0.0, 0.25, -0.5, 2.0, 0.0, 1.0],
        )
        .unwrap();
        let mut y = Tensor::zeros(vec![2, 4]);
        matmul_nt(&x, &w, &mut y);
        for b in 0..2 {
            for o in 0..4 {
                let mut acc = 0.0f64;
                for i in 0..3 {
                    acc += x.values()[b * 3 + i] * w.values()[o * 3 + i];
                }
                assert!((y.values()[b * 4 + o] - acc).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn f32_instantiation_works() {
        let x = Tensor::<f32>::row(vec![1.0, 2.0]);
        let w = Tensor::<f32>::identity(2);
        let mut y = Tensor::zeros(vec![1, 2]);
        matmul_nt(&x, &w, &mut y);
        assert_eq!(y.values(), &[1.0f32, 2.0]);
    }
}
