//! Dense row-major tensors and the numeric primitives the kernels build on.
//!
//! Every reduction in this module sums in ascending index order starting from
//! zero, so results are bit-reproducible and match naive loop references.

use std::fmt;

use num_traits::{Float, FromPrimitive};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Storage type tag used by fixtures and configs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    F32,
    F64,
}

impl DType {
    pub fn size_of(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }
}

impl fmt::Display for DType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DType::F32 => "f32",
            DType::F64 => "f64",
        })
    }
}

/// Scalar element of a [`Tensor`].
pub trait Element:
    Float + FromPrimitive + Default + fmt::Debug + fmt::Display + Send + Sync + 'static
{
    const DTYPE: DType;

    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;

    #[inline]
    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("f64 is representable")
    }
}

impl Element for f32 {
    const DTYPE: DType = DType::F32;

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes.try_into().expect("4 bytes"))
    }
}

impl Element for f64 {
    const DTYPE: DType = DType::F64;

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes.try_into().expect("8 bytes"))
    }
}

/// Dense row-major N-dimensional array. Immutable once built.
#[derive(Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: fmt::Debug> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        const SHOWN: usize = 8;
        let head = &self.data[..self.data.len().min(SHOWN)];
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("head", &head)
            .finish()
    }
}

fn check_shape(shape: &[usize]) -> Result<usize> {
    if shape.is_empty() {
        return Err(Error::shape("tensor shape must have at least one extent"));
    }
    if let Some(pos) = shape.iter().position(|&e| e == 0) {
        return Err(Error::shape(format!(
            "extent {pos} of shape {shape:?} is zero"
        )));
    }
    shape
        .iter()
        .try_fold(1usize, |acc, &e| acc.checked_mul(e))
        .ok_or_else(|| Error::shape(format!("shape {shape:?} overflows usize")))
}

impl<T: Element> Tensor<T> {
    pub fn from_vec(shape: impl Into<Vec<usize>>, data: Vec<T>) -> Result<Self> {
        let shape = shape.into();
        let len = check_shape(&shape)?;
        if len != data.len() {
            return Err(Error::shape(format!(
                "shape {shape:?} needs {len} values, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    /// Builds a tensor whose shape was already validated by the caller.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<T>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { shape, data }
    }

    pub fn full(shape: impl Into<Vec<usize>>, value: T) -> Result<Self> {
        let shape = shape.into();
        let len = check_shape(&shape)?;
        Ok(Self {
            shape,
            data: vec![value; len],
        })
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Result<Self> {
        Self::full(shape, T::zero())
    }

    pub fn eye(n: usize) -> Result<Self> {
        let mut data = vec![T::zero(); n * n];
        for i in 0..n {
            data[i * n + i] = T::one();
        }
        Self::from_vec(vec![n, n], data)
    }

    pub fn from_fn(shape: impl Into<Vec<usize>>, mut f: impl FnMut(usize) -> T) -> Result<Self> {
        let shape = shape.into();
        let len = check_shape(&shape)?;
        Ok(Self {
            shape,
            data: (0..len).map(&mut f).collect(),
        })
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

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn dtype(&self) -> DType {
        T::DTYPE
    }

    /// Row-major flat offset of a multi-index.
    pub fn offset(&self, index: &[usize]) -> usize {
        assert_eq!(index.len(), self.shape.len(), "index rank mismatch");
        index
            .iter()
            .zip(&self.shape)
            .fold(0, |acc, (&i, &e)| {
                assert!(i < e, "index {i} out of bounds for extent {e}");
                acc * e + i
            })
    }

    pub fn at(&self, index: &[usize]) -> T {
        self.data[self.offset(index)]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn ensure_finite(&self, what: &str) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(Error::NonFinite(format!("{what} contains NaN or Inf")))
        }
    }

    /// Expects a rank-2 tensor and returns `(rows, cols)`.
    pub fn dims2(&self, what: &str) -> Result<(usize, usize)> {
        match self.shape[..] {
            [r, c] => Ok((r, c)),
            _ => Err(Error::shape(format!(
                "{what} must be rank 2, got shape {:?}",
                self.shape
            ))),
        }
    }

    /// Expects a rank-3 tensor and returns its extents.
    pub fn dims3(&self, what: &str) -> Result<(usize, usize, usize)> {
        match self.shape[..] {
            [a, b, c] => Ok((a, b, c)),
            _ => Err(Error::shape(format!(
                "{what} must be rank 3, got shape {:?}",
                self.shape
            ))),
        }
    }

    pub fn reshape(&self, new_shape: impl Into<Vec<usize>>) -> Result<Self> {
        let new_shape = new_shape.into();
        let len = check_shape(&new_shape)?;
        if len != self.data.len() {
            return Err(Error::shape(format!(
                "cannot reshape {:?} ({} values) into {new_shape:?} ({len} values)",
                self.shape,
                self.data.len()
            )));
        }
        Ok(Self {
            shape: new_shape,
            data: self.data.clone(),
        })
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scale(&self, k: T) -> Self {
        self.map(|v| v * k)
    }

    fn zip_with(&self, other: &Self, op: &str, f: impl Fn(T, T) -> T) -> Result<Self> {
        if self.shape != other.shape {
            return Err(Error::shape(format!(
                "{op}: shapes {:?} and {:?} differ",
                self.shape, other.shape
            )));
        }
        Ok(Self {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    /// Elementwise sum. Tallied as accumulation adds in an active count scope.
    pub fn add(&self, other: &Self) -> Result<Self> {
        let out = self.zip_with(other, "add", |a, b| a + b)?;
        crate::count::adds(out.len() as u128);
        Ok(out)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, "sub", |a, b| a - b)
    }

    /// Largest absolute elementwise difference.
    pub fn max_abs_diff(&self, other: &Self) -> Result<T> {
        let diff = self.zip_with(other, "max_abs_diff", |a, b| (a - b).abs())?;
        Ok(diff.data.into_iter().fold(T::zero(), T::max))
    }

    /// Transpose of a rank-2 tensor.
    pub fn transpose(&self) -> Result<Self> {
        let (r, c) = self.dims2("transpose input")?;
        let mut data = Vec::with_capacity(r * c);
        for j in 0..c {
            for i in 0..r {
                data.push(self.data[i * c + j]);
            }
        }
        Ok(Self::from_parts(vec![c, r], data))
    }

    /// Columns `[start, end)` of a rank-2 tensor.
    pub fn columns(&self, start: usize, end: usize) -> Result<Self> {
        let (r, c) = self.dims2("column slice input")?;
        if start >= end || end > c {
            return Err(Error::shape(format!(
                "column range {start}..{end} invalid for {c} columns"
            )));
        }
        let mut data = Vec::with_capacity(r * (end - start));
        for row in self.data.chunks_exact(c) {
            data.extend_from_slice(&row[start..end]);
        }
        Ok(Self::from_parts(vec![r, end - start], data))
    }

    /// Concatenates rank-2 tensors along columns.
    pub fn hcat(parts: &[&Self]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::shape("hcat of zero tensors"))?;
        let (rows, _) = first.dims2("hcat part")?;
        let mut widths = Vec::with_capacity(parts.len());
        for p in parts {
            let (r, c) = p.dims2("hcat part")?;
            if r != rows {
                return Err(Error::shape(format!("hcat: row counts {rows} and {r} differ")));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(rows * total);
        for i in 0..rows {
            for (p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&p.data[i * w..(i + 1) * w]);
            }
        }
        Ok(Self::from_parts(vec![rows, total], data))
    }

    /// Concatenates tensors along the leading axis; trailing extents must agree.
    pub fn vcat(parts: &[&Self]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::shape("vcat of zero tensors"))?;
        let tail = &first.shape[1..];
        let mut lead = 0;
        let mut data = Vec::new();
        for p in parts {
            if &p.shape[1..] != tail {
                return Err(Error::shape(format!(
                    "vcat: trailing extents {:?} and {:?} differ",
                    tail,
                    &p.shape[1..]
                )));
            }
            lead += p.shape[0];
            data.extend_from_slice(&p.data);
        }
        let mut shape = vec![lead];
        shape.extend_from_slice(tail);
        Ok(Self::from_parts(shape, data))
    }

    /// Contiguous sub-block `[start, end)` along the leading axis.
    pub fn slice_leading(&self, start: usize, end: usize) -> Result<Self> {
        let lead = self.shape[0];
        if start >= end || end > lead {
            return Err(Error::shape(format!(
                "leading range {start}..{end} invalid for extent {lead}"
            )));
        }
        let stride: usize = self.shape[1..].iter().product();
        let mut shape = self.shape.clone();
        shape[0] = end - start;
        Ok(Self::from_parts(
            shape,
            self.data[start * stride..end * stride].to_vec(),
        ))
    }
}

/// Matrix product with ascending-index accumulation per output element.
///
/// Tallies `m·k·p` multiply-accumulates in an active count scope.
pub fn matmul<T: Element>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (m, k) = a.dims2("matmul lhs")?;
    let (k2, p) = b.dims2("matmul rhs")?;
    if k != k2 {
        return Err(Error::shape(format!(
            "matmul inner extents differ: {m}x{k} · {k2}x{p}"
        )));
    }
    let mut out = vec![T::zero(); m * p];
    // i-k-j order: each out[i][j] still receives its k terms in ascending k.
    for (a_row, out_row) in a.data.chunks_exact(k).zip(out.chunks_exact_mut(p)) {
        for (&aik, b_row) in a_row.iter().zip(b.data.chunks_exact(p)) {
            for (o, &bkj) in out_row.iter_mut().zip(b_row) {
                *o = *o + aik * bkj;
            }
        }
    }
    crate::count::macs((m * k * p) as u128);
    Ok(Tensor::from_parts(vec![m, p], out))
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows<T: Element>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (_, n) = x.dims2("softmax input")?;
    x.ensure_finite("softmax input")?;
    let mut data = Vec::with_capacity(x.len());
    for row in x.data.chunks_exact(n) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let start = data.len();
        let mut sum = T::zero();
        for &v in row {
            let e = (v - max).exp();
            sum = sum + e;
            data.push(e);
        }
        for v in &mut data[start..] {
            *v = *v / sum;
        }
    }
    Ok(Tensor::from_parts(x.shape.clone(), data))
}

/// Free-function form of [`Tensor::reshape`].
pub fn reshape<T: Element>(x: &Tensor<T>, new_shape: impl Into<Vec<usize>>) -> Result<Tensor<T>> {
    x.reshape(new_shape)
}
