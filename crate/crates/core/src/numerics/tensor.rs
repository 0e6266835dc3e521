use std::fmt;
use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub};

use rayon::prelude::*;

use crate::error::{Error, Result};

/// Element type the kernels are generic over: f32 for inference paths,
/// f64 for verification paths.
pub trait Scalar:
    Copy
    + PartialOrd
    + PartialEq
    + fmt::Debug
    + Send
    + Sync
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + 'static
{
    const ZERO: Self;
    const ONE: Self;

    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
    fn exp(self) -> Self;
    fn sqrt(self) -> Self;
    fn abs(self) -> Self;
    /// Gaussian error function, used by the exact-Φ GELU.
    fn erf(self) -> Self;
    fn is_finite(self) -> bool;
    fn maximum(self, other: Self) -> Self;
}

impl Scalar for f32 {
    const ZERO: Self = 0.0;
    const ONE: Self = 1.0;

    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
    fn exp(self) -> Self {
        f32::exp(self)
    }
    fn sqrt(self) -> Self {
        f32::sqrt(self)
    }
    fn abs(self) -> Self {
        f32::abs(self)
    }
    fn erf(self) -> Self {
        libm::erff(self)
    }
    fn is_finite(self) -> bool {
        f32::is_finite(self)
    }
    fn maximum(self, other: Self) -> Self {
        f32::max(self, other)
    }
}

impl Scalar for f64 {
    const ZERO: Self = 0.0;
    const ONE: Self = 1.0;

    fn from_f64(v: f64) -> Self {
        v
    }
    fn to_f64(self) -> f64 {
        self
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    fn abs(self) -> Self {
        f64::abs(self)
    }
    fn erf(self) -> Self {
        libm::erf(self)
    }
    fn is_finite(self) -> bool {
        f64::is_finite(self)
    }
    fn maximum(self, other: Self) -> Self {
        f64::max(self, other)
    }
}

/// Dense row-major tensor.
#[derive(Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if shape.contains(&0) {
            return Err(Error::config(format!("zero extent in shape {shape:?}")));
        }
        if data.len() != numel {
            return Err(Error::dim("tensor_new", shape, &[data.len()]));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![T::ZERO; numel],
        }
    }

    pub fn full(shape: &[usize], v: T) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![v; numel],
        }
    }

    /// Identity matrix of side `n`.
    pub fn eye(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = T::ONE;
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
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

    /// Extent of the last axis.
    pub fn last_dim(&self) -> usize {
        *self.shape.last().expect("rank >= 1")
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != self.data.len() {
            return Err(Error::dim("reshape", &self.shape, shape));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(T) -> T + Sync) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn add(&self, rhs: &Self) -> Result<Self> {
        if self.shape != rhs.shape {
            return Err(Error::dim("add", &self.shape, &rhs.shape));
        }
        let data = self
            .data
            .iter()
            .zip(&rhs.data)
            .map(|(&a, &b)| a + b)
            .collect();
        Ok(Tensor {
            shape: self.shape.clone(),
            data,
        })
    }

    pub fn sub(&self, rhs: &Self) -> Result<Self> {
        if self.shape != rhs.shape {
            return Err(Error::dim("sub", &self.shape, &rhs.shape));
        }
        let data = self
            .data
            .iter()
            .zip(&rhs.data)
            .map(|(&a, &b)| a - b)
            .collect();
        Ok(Tensor {
            shape: self.shape.clone(),
            data,
        })
    }

    pub fn scale(&self, s: T) -> Self {
        self.map(|v| v * s)
    }

    /// Adds a rank-1 bias over the last axis.
    pub fn add_bias(&self, bias: &Self) -> Result<Self> {
        let c = self.last_dim();
        if bias.shape != [c] {
            return Err(Error::dim("add_bias", &self.shape, &bias.shape));
        }
        let mut out = self.clone();
        for row in out.data.chunks_mut(c) {
            for (v, &b) in row.iter_mut().zip(&bias.data) {
                *v += b;
            }
        }
        Ok(out)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Largest absolute elementwise difference, in f64.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!(self.shape, other.shape, "max_abs_diff shape mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a.to_f64() - b.to_f64()).abs())
            .fold(0.0, f64::max)
    }

    /// Batched matrix product with broadcast over leading extents.
    ///
    /// Shapes `[.., m, k] x [.., k, n] -> [.., m, n]`; leading extents must
    /// agree or be 1 on one side. Parallelism is over output rows only, so
    /// results are bitwise identical regardless of thread count.
    pub fn matmul(&self, rhs: &Self) -> Result<Self> {
        if self.rank() < 2 || rhs.rank() < 2 {
            return Err(Error::dim("matmul", &self.shape, &rhs.shape));
        }
        let (m, ka) = (self.shape[self.rank() - 2], self.shape[self.rank() - 1]);
        let (kb, n) = (rhs.shape[rhs.rank() - 2], rhs.shape[rhs.rank() - 1]);
        if ka != kb {
            return Err(Error::dim("matmul", &self.shape, &rhs.shape));
        }
        let k = ka;

        // Align batch extents by left-padding with 1.
        let ba = &self.shape[..self.rank() - 2];
        let bb = &rhs.shape[..rhs.rank() - 2];
        let brank = ba.len().max(bb.len());
        let mut batch = Vec::with_capacity(brank);
        for i in 0..brank {
            let ea = if i + ba.len() >= brank {
                ba[i + ba.len() - brank]
            } else {
                1
            };
            let eb = if i + bb.len() >= brank {
                bb[i + bb.len() - brank]
            } else {
                1
            };
            if ea != eb && ea != 1 && eb != 1 {
                return Err(Error::dim("matmul", &self.shape, &rhs.shape));
            }
            batch.push(ea.max(eb));
        }
        let nbatch: usize = batch.iter().product();

        let stride_for = |dims: &[usize]| -> Vec<usize> {
            // Stride per broadcast batch axis; 0 where the source extent is 1.
            let mut strides = vec![0usize; brank];
            let mut acc = 1usize;
            for i in (0..dims.len()).rev() {
                let axis = i + brank - dims.len();
                strides[axis] = if dims[i] == 1 { 0 } else { acc };
                acc *= dims[i];
            }
            strides
        };
        let sa = stride_for(ba);
        let sb = stride_for(bb);

        let mut out_shape = batch.clone();
        out_shape.push(m);
        out_shape.push(n);
        let mut out = vec![T::ZERO; nbatch * m * n];

        let a = &self.data;
        let b = &rhs.data;
        out.par_chunks_mut(n).enumerate().for_each(|(row, orow)| {
            let (bi, i) = (row / m, row % m);
            // Decompose the flat batch index over broadcast strides.
            let mut rem = bi;
            let mut abase = 0usize;
            let mut bbase = 0usize;
            for (axis, &extent) in batch.iter().enumerate() {
                let stride_rest: usize = batch[axis + 1..].iter().product();
                let idx = (rem / stride_rest) % extent;
                rem %= stride_rest;
                abase += idx * sa[axis];
                bbase += idx * sb[axis];
            }
            let abase = abase * m * k + i * k;
            let bbase = bbase * k * n;
            for p in 0..k {
                let av = a[abase + p];
                let brow = &b[bbase + p * n..bbase + (p + 1) * n];
                for (o, &bv) in orow.iter_mut().zip(brow) {
                    *o += av * bv;
                }
            }
        });

        Tensor::new(&out_shape, out)
    }
}

impl Tensor<f32> {
    pub fn widen(&self) -> Tensor<f64> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| v as f64).collect(),
        }
    }
}

impl Tensor<f64> {
    pub fn narrow(&self) -> Tensor<f32> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| v as f32).collect(),
        }
    }
}

impl<T: fmt::Debug> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor{:?}", self.shape)?;
        if self.data.len() <= 16 {
            write!(f, " {:?}", self.data)
        } else {
            write!(f, " [{:?}, ...]", &self.data[..8])
        }
    }
}
