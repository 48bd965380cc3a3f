//! Dense tensors with tape-based reverse-mode differentiation.
//!
//! Values live in row-major `Vec<S>` buffers. A [`Tape`] records every
//! operation applied to [`Var`] handles; [`Tape::backward`] replays the record
//! in reverse and returns a [`Gradients`] table. Learned parameters are kept
//! in a [`ParamStore`] and enter a tape through [`Tape::param`].

use alloc::vec;
use alloc::vec::Vec;

use crate::{Error, Real, Result};

mod adam;
mod conv;
pub mod gradcheck;
pub mod linalg;
mod params;
mod reduce;
mod tape;


pub use adam::{AdamConfig, AdamState};
pub use conv::ScatterGeom;
pub use params::{decode_checkpoint, encode_checkpoint, Init, ParamId, ParamStore, CHECKPOINT_VERSION};
pub use reduce::LOG_EPS;
pub use tape::{Gradients, Tape, Var};


/// Dense n-dimensional array with an optional gradient buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<S> {
    shape: Vec<usize>,
    data: Vec<S>,
    pub requires_grad: bool,
    pub grad: Option<Vec<S>>,
}

impl<S: Real> Tensor<S> {
    pub fn new(shape: &[usize], data: Vec<S>) -> Result<Self> {
        let n = numel(shape);
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::shape("Tensor::new", alloc::format!("zero-sized dim in {shape:?}")));
        }
        if data.len() != n {
            return Err(Error::shape(
                "Tensor::new",
                alloc::format!("shape {shape:?} needs {n} values, got {}", data.len()),
            ));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
            requires_grad: false,
            grad: None,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, S::zero())
    }

    pub fn full(shape: &[usize], v: S) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![v; numel(shape)],
            requires_grad: false,
            grad: None,
        }
    }

    pub fn scalar(v: S) -> Self {
        Self::full(&[1], v)
    }

    pub fn from_f64(shape: &[usize], data: &[f64]) -> Result<Self> {
        Self::new(shape, data.iter().map(|&v| S::from_f64(v)).collect())
    }

    pub fn with_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<S> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn reshaped(mut self, shape: &[usize]) -> Result<Self> {
        if numel(shape) != self.data.len() {
            return Err(Error::shape(
                "reshape",
                alloc::format!("{:?} -> {shape:?}", self.shape),
            ));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    /// Row-major flat index of a multi-index.
    pub fn offset(&self, index: &[usize]) -> Result<usize> {
        flat_index(&self.shape, index)
    }

    pub fn get(&self, index: &[usize]) -> Result<S> {
        Ok(self.data[self.offset(index)?])
    }

    pub fn sum_f64(&self) -> f64 {
        self.data.iter().map(|v| v.as_f64()).sum()
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a.as_f64() - b.as_f64()).abs())
            .fold(0.0, f64::max)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn cast<T: Real>(&self) -> Tensor<T> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| T::from_f64(v.as_f64())).collect(),
            requires_grad: self.requires_grad,
            grad: self
                .grad
                .as_ref()
                .map(|g| g.iter().map(|v| T::from_f64(v.as_f64())).collect()),
        }
    }
}

pub fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

pub(crate) fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

pub(crate) fn flat_index(shape: &[usize], index: &[usize]) -> Result<usize> {
    if index.len() != shape.len() || index.iter().zip(shape).any(|(i, d)| i >= d) {
        return Err(Error::IndexOutOfBounds {
            index: index.to_vec(),
            bounds: shape.to_vec(),
        });
    }
    Ok(index
        .iter()
        .zip(strides(shape))
        .map(|(i, s)| i * s)
        .sum())
}

/// Partition of a tensor's elements into groups that share every index
/// outside `axes`. Element `outer[g] + inner[j]` is the `j`-th member of group
/// `g`.
#[derive(Debug, Clone)]
pub(crate) struct AxisGroups {
    pub outer: Vec<usize>,
    pub inner: Vec<usize>,
    /// `(pre, mid, post)` when `axes` is one contiguous run: element
    /// `(p·mid + m)·post + q` is member `m` of group `(p, q)`.
    pub blocks: Option<(usize, usize, usize)>,
}

impl AxisGroups {
    pub fn new(shape: &[usize], axes: &[usize], op: &'static str) -> Result<Self> {
        if axes.is_empty() {
            return Err(Error::EmptyAxes { op });
        }
        let mut in_set = vec![false; shape.len()];
        for &a in axes {
            if a >= shape.len() || in_set[a] {
                return Err(Error::shape(op, alloc::format!("bad axis {a} for {shape:?}")));
            }
            in_set[a] = true;
        }
        let st = strides(shape);
        let offsets = |keep: bool| -> Vec<usize> {
            let mut out = vec![0usize];
            for (d, &n) in shape.iter().enumerate() {
                if in_set[d] != keep {
                    continue;
                }
                let mut next = Vec::with_capacity(out.len() * n);
                for &base in &out {
                    for i in 0..n {
                        next.push(base + i * st[d]);
                    }
                }
                out = next;
            }
            out
        };
        let lo = *axes.iter().min().expect("nonempty");
        let hi = *axes.iter().max().expect("nonempty");
        let blocks = (hi - lo + 1 == axes.len()).then(|| {
            let pre: usize = shape[..lo].iter().product();
            let mid: usize = shape[lo..=hi].iter().product();
            let post: usize = shape[hi + 1..].iter().product();
            (pre, mid, post)
        });
        Ok(Self {
            outer: offsets(false),
            inner: offsets(true),
            blocks,
        })
    }
}
