use crate::error::{contract, Error, Result};
use crate::numerics::kernels;
use crate::Scalar;

/// Dense row-major tensor with an optional gradient buffer.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
    requires_grad: bool,
    grad: Option<Vec<T>>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: &[usize], data: Vec<T>) -> Result<Self> {
        if shape.contains(&0) {
            return Err(contract(format!("zero-sized dimension in shape {shape:?}")));
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::Shape {
                op: "tensor",
                lhs: shape.to_vec(),
                rhs: vec![data.len()],
            });
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
            requires_grad: false,
            grad: None,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::filled(shape, T::zero())
    }

    pub fn filled(shape: &[usize], v: T) -> Self {
        let numel = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![v; numel],
            requires_grad: false,
            grad: None,
        }
    }

    pub fn scalar(v: T) -> Self {
        Self::filled(&[1], v)
    }

    pub fn eye(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = T::one();
        }
        t
    }

    /// Builds a 2-D tensor from nested rows.
    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(contract("ragged rows"));
        }
        Self::new(&[rows.len(), cols], rows.concat())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn set_requires_grad(&mut self, on: bool) {
        self.requires_grad = on;
    }

    pub fn grad(&self) -> Option<&[T]> {
        self.grad.as_deref()
    }

    pub fn grad_mut(&mut self) -> Option<&mut Vec<T>> {
        self.grad.as_mut()
    }

    pub fn set_grad(&mut self, grad: Option<Vec<T>>) {
        debug_assert!(grad.as_ref().is_none_or(|g| g.len() == self.data.len()));
        self.grad = grad;
    }

    /// Adds `g` into the gradient buffer, allocating it on first use.
    pub fn accumulate_grad(&mut self, g: &[T]) {
        debug_assert_eq!(g.len(), self.data.len());
        match &mut self.grad {
            Some(buf) => buf.iter_mut().zip(g).for_each(|(a, &b)| *a += b),
            None => self.grad = Some(g.to_vec()),
        }
    }

    /// Row and column counts of a 2-D tensor.
    pub fn dims2(&self) -> Result<(usize, usize)> {
        match self.shape[..] {
            [r, c] => Ok((r, c)),
            _ => Err(contract(format!("expected a 2-D tensor, got shape {:?}", self.shape))),
        }
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        Self::new(shape, self.data.clone())
    }

    /// Element-wise cast to another scalar type; the gradient is dropped.
    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| U::of(v.to_f64c())).collect(),
            requires_grad: self.requires_grad,
            grad: None,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn matmul(&self, other: &Self) -> Result<Self> {
        let (m, n) = self.dims2()?;
        let (n2, p) = other.dims2()?;
        if n != n2 {
            return Err(Error::Shape {
                op: "matmul",
                lhs: self.shape.clone(),
                rhs: other.shape.clone(),
            });
        }
        let mut out = vec![T::zero(); m * p];
        kernels::gemm_nn(&self.data, &other.data, &mut out, m, n, p);
        Self::new(&[m, p], out)
    }

    pub fn transpose(&self) -> Result<Self> {
        let (r, c) = self.dims2()?;
        Self::new(&[c, r], kernels::transpose(&self.data, r, c))
    }

    pub fn softmax(&self, axis: usize) -> Result<Self> {
        if axis >= self.shape.len() {
            return Err(contract(format!(
                "softmax axis {axis} out of range for {:?}",
                self.shape
            )));
        }
        let (o, l, i) = kernels::axis_split(&self.shape, axis);
        Self::new(&self.shape, kernels::softmax_axis(&self.data, o, l, i))
    }

    /// Normalizes over the last axis, then applies `gamma`/`beta`.
    pub fn layer_norm(&self, gamma: &Self, beta: &Self, eps: T) -> Result<Self> {
        let cols = *self.shape.last().unwrap();
        if gamma.numel() != cols || beta.numel() != cols {
            return Err(Error::Shape {
                op: "layer_norm",
                lhs: self.shape.clone(),
                rhs: gamma.shape.clone(),
            });
        }
        let (y, _, _) = kernels::layer_norm_rows(&self.data, &gamma.data, &beta.data, cols, eps);
        Self::new(&self.shape, y)
    }

    pub fn gelu(&self) -> Self {
        self.map(kernels::gelu)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
            requires_grad: false,
            grad: None,
        }
    }

    pub fn sum(&self) -> T {
        self.data.iter().fold(T::zero(), |a, &b| a + b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(rows: &[&[f64]]) -> Tensor<f64> {
        Tensor::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn matmul_hand_example() {
        let c = t(&[&[1., 2.], &[3., 4.]]).matmul(&t(&[&[5., 6.], &[7., 8.]])).unwrap();
        assert_eq!(c.data(), &[19., 22., 43., 50.]);
    }

    #[test]
    fn matmul_identity() {
        let a = t(&[&[1.5, -2.0, 0.25], &[3.0, 4.0, -1.0]]);
        assert_eq!(a.matmul(&Tensor::eye(3)).unwrap(), a);
    }

    #[test]
    fn matmul_shape_error_names_shapes() {
        let a = Tensor::<f32>::zeros(&[2, 3]);
        let err = a.matmul(&a).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]"), "{msg}");
    }

    #[test]
    fn new_rejects_wrong_length() {
        assert!(Tensor::<f32>::new(&[2, 2], vec![1.0; 3]).is_err());
    }

    #[test]
    fn softmax_examples() {
        let s = t(&[&[0., 0.]]).softmax(1).unwrap();
        assert_eq!(s.data(), &[0.5, 0.5]);
        let s = Tensor::<f32>::from_rows(&[vec![1000.0, 1000.0]])
            .unwrap()
            .softmax(1)
            .unwrap();
        assert_eq!(s.data(), &[0.5, 0.5]);
        let x = t(&[&[0.3, -1.2, 2.0]]);
        let a = x.softmax(1).unwrap();
        let b = x.map(|v| v + 7.5).softmax(1).unwrap();
        for (p, q) in a.data().iter().zip(b.data()) {
            assert!((p - q).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_axis0_columns_sum_to_one() {
        let x = t(&[&[0.1, 5.0], &[2.0, -3.0], &[0.0, 0.0]]);
        let s = x.softmax(0).unwrap();
        for c in 0..2 {
            let sum: f64 = (0..3).map(|r| s.data()[r * 2 + c]).sum();
            assert!((sum - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn layer_norm_constant_rows() {
        let x = Tensor::<f64>::filled(&[1, 4], 3.0);
        let g = Tensor::filled(&[4], 1.0);
        let y = x.layer_norm(&g, &Tensor::zeros(&[4]), 1e-5).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
        let y = x.layer_norm(&g, &Tensor::filled(&[4], 0.7), 1e-5).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.7));
    }

    #[test]
    fn layer_norm_statistics() {
        let mut rng = crate::SeededRng::new(3);
        let data: Vec<f64> = (0..64).map(|_| rng.normal() * 3.0 + 1.0).collect();
        let x = Tensor::new(&[1, 64], data).unwrap();
        let y = x
            .layer_norm(&Tensor::filled(&[64], 1.0), &Tensor::zeros(&[64]), 1e-5)
            .unwrap();
        let mean = y.sum() / 64.0;
        let var = y.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 64.0;
        assert!(mean.abs() < 1e-4);
        assert!((var - 1.0).abs() < 1e-4);
    }

    #[test]
    fn gelu_values() {
        assert_eq!(kernels::gelu(0.0f64), 0.0);
        assert!((kernels::gelu(1.0f64) - 0.841_344_746_068_542_9).abs() < 1e-6);
        assert!((kernels::gelu(10.0f64) - 10.0).abs() < 1e-6);
        assert!((kernels::gelu(1.0f32) - 0.841_345).abs() < 1e-6);
    }
}
