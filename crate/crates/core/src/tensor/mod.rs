//! Dense row-major tensors with a tape-based reverse-mode autodiff engine.
//!
//! Storage is 32-bit; every reduction (dot products, norms, softmax sums)
//! accumulates in 64-bit. The [`Tape`] is generic over its element type so
//! the same op code can also run entirely in 64-bit for gradient checking.

mod gradcheck;
pub mod kernels;
mod optim;
mod params;
mod tape;

pub use gradcheck::grad_check;
pub use optim::{Adaptive, AdaptiveConfig};
pub use params::{Bound, ParamStore};
pub use tape::{Tape, Var};

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

/// Layer-norm variance epsilon.
pub const LN_EPS: f64 = 1e-5;

/// Floating element type a [`Tape`] can compute in.
pub trait Element:
    Copy + Default + Send + Sync + PartialEq + PartialOrd + std::fmt::Debug + 'static
{
    fn to_f64(self) -> f64;
    fn from_f64(v: f64) -> Self;
}

impl Element for f32 {
    #[inline(always)]
    fn to_f64(self) -> f64 {
        self as f64
    }
    #[inline(always)]
    fn from_f64(v: f64) -> Self {
        v as f32
    }
}

impl Element for f64 {
    #[inline(always)]
    fn to_f64(self) -> f64 {
        self
    }
    #[inline(always)]
    fn from_f64(v: f64) -> Self {
        v
    }
}

/// A dense tensor of rank 0 to 3.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
    requires_grad: bool,
    grad: Option<Vec<f32>>,
}

impl Tensor {
    pub fn new(shape: &[usize], data: Vec<f32>) -> Result<Self> {
        if shape.len() > 3 {
            return Err(Error::Usage(format!("rank {} exceeds 3", shape.len())));
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::Dimension {
                op: "tensor",
                lhs: shape.to_vec(),
                rhs: vec![data.len()],
            });
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
            requires_grad: false,
            grad: None,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::filled(shape, 0.0)
    }

    pub fn filled(shape: &[usize], value: f32) -> Self {
        let numel = shape.iter().product();
        Tensor::new(shape, vec![value; numel]).expect("rank checked by caller")
    }

    pub fn scalar(value: f32) -> Self {
        Tensor::new(&[], vec![value]).unwrap()
    }

    /// Builds a 2-D tensor from nested rows.
    pub fn from_rows(rows: &[Vec<f32>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Input("ragged rows".into()));
        }
        Tensor::new(&[rows.len(), cols], rows.concat())
    }

    /// Samples entries i.i.d. from N(0, std²).
    pub fn randn<R: Rng + ?Sized>(shape: &[usize], std: f32, rng: &mut R) -> Self {
        let numel: usize = shape.iter().product();
        let data = (0..numel)
            .map(|_| {
                let z: f64 = StandardNormal.sample(rng);
                (z * std as f64) as f32
            })
            .collect();
        Tensor::new(shape, data).expect("rank ≤ 3")
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    /// Rows and columns of a rank-2 tensor; rank-1 is one row.
    pub fn dims2(&self) -> (usize, usize) {
        match self.shape.as_slice() {
            [] => (1, 1),
            [n] => (1, *n),
            [m, n] => (*m, *n),
            [b, m, n] => (b * m, *n),
            _ => unreachable!(),
        }
    }

    pub fn row(&self, i: usize) -> &[f32] {
        let (_, n) = self.dims2();
        &self.data[i * n..(i + 1) * n]
    }

    pub fn item(&self) -> f32 {
        self.data[0]
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn set_requires_grad(&mut self, flag: bool) {
        self.requires_grad = flag;
    }

    pub fn with_requires_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    pub fn grad(&self) -> Option<&[f32]> {
        self.grad.as_deref()
    }

    pub fn zero_grad(&mut self) {
        self.grad = None;
    }

    /// Adds `g` into this tensor's gradient buffer.
    pub fn accumulate_grad(&mut self, g: &[f32]) -> Result<()> {
        if g.len() != self.data.len() {
            return Err(Error::Dimension {
                op: "accumulate_grad",
                lhs: self.shape.clone(),
                rhs: vec![g.len()],
            });
        }
        match &mut self.grad {
            Some(buf) => buf.iter_mut().zip(g).for_each(|(a, b)| *a += b),
            None => self.grad = Some(g.to_vec()),
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Raw little-endian payload bytes.
    pub fn to_le_bytes(&self) -> Vec<u8> {
        self.data.iter().flat_map(|v| v.to_le_bytes()).collect()
    }
}

/// Matrix product of two rank-2 tensors.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = expect_matrix(a, "matmul")?;
    let (k2, n) = expect_matrix(b, "matmul")?;
    if k != k2 {
        return Err(Error::Dimension {
            op: "matmul",
            lhs: a.shape.clone(),
            rhs: b.shape.clone(),
        });
    }
    let mut out = vec![0f32; m * n];
    kernels::matmul(&a.data, &b.data, &mut out, m, k, n);
    Tensor::new(&[m, n], out)
}

/// Row-wise softmax of a rank-2 tensor.
pub fn softmax_rows(x: &Tensor) -> Result<Tensor> {
    let (m, n) = expect_matrix(x, "softmax_rows")?;
    let mut out = vec![0f32; m * n];
    kernels::softmax_rows(&x.data, &mut out, m, n, false);
    Tensor::new(&[m, n], out)
}

/// Logistic function on a scalar.
pub fn sigmoid(x: f64) -> f64 {
    kernels::sigmoid(x)
}

/// Elementwise logistic function.
pub fn sigmoid_tensor(x: &Tensor) -> Tensor {
    let data = x
        .data
        .iter()
        .map(|&v| kernels::sigmoid(v as f64) as f32)
        .collect();
    Tensor::new(&x.shape, data).unwrap()
}

/// Per-row layer normalization followed by an affine map.
pub fn layer_norm(x: &Tensor, gain: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (m, n) = expect_matrix(x, "layer_norm")?;
    if gain.numel() != n || bias.numel() != n {
        return Err(Error::Dimension {
            op: "layer_norm",
            lhs: x.shape.clone(),
            rhs: gain.shape.clone(),
        });
    }
    let mut out = vec![0f32; m * n];
    let mut rstd = vec![0f64; m];
    kernels::layer_norm(&x.data, &gain.data, &bias.data, &mut out, &mut rstd, m, n);
    Tensor::new(&[m, n], out)
}

fn expect_matrix(t: &Tensor, op: &'static str) -> Result<(usize, usize)> {
    match t.shape.as_slice() {
        [m, n] => Ok((*m, *n)),
        _ => Err(Error::Dimension {
            op,
            lhs: t.shape.clone(),
            rhs: vec![],
        }),
    }
}
