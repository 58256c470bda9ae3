use std::fmt;

use crate::error::{shape_err, Result};

/// Row-major general matrix multiply `C = alpha * op(A) * op(B) + beta * C`.
///
/// Strides are given in elements, so transposed operands are expressed by
/// swapping row and column strides instead of copying.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: &[f64],
    rsa: usize,
    csa: usize,
    b: &[f64],
    rsb: usize,
    csb: usize,
    beta: f64,
    c: &mut [f64],
    rsc: usize,
    csc: usize,
) {
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        for i in 0..m {
            for j in 0..n {
                let x = &mut c[i * rsc + j * csc];
                *x = if beta == 0.0 { 0.0 } else { beta * *x };
            }
        }
        return;
    }
    debug_assert!(a.len() > (m - 1) * rsa + (k - 1) * csa);
    debug_assert!(b.len() > (k - 1) * rsb + (n - 1) * csb);
    debug_assert!(c.len() > (m - 1) * rsc + (n - 1) * csc);
    // SAFETY: the bounds above guarantee every addressed element lies inside
    // the three slices, and `c` does not alias `a` or `b` (distinct borrows).
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            csc as isize,
        );
    }
}

/// An M-mode real array stored row-major.
#[derive(Clone, PartialEq)]
pub struct DenseTensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl fmt::Debug for DenseTensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.data.len() <= 16 {
            write!(f, "DenseTensor{:?}{:?}", self.shape, self.data)
        } else {
            write!(f, "DenseTensor{:?}[{} values]", self.shape, self.data.len())
        }
    }
}

impl DenseTensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(shape_err!(
                "shape {:?} holds {} values, got {}",
                shape,
                expected,
                data.len()
            ));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: vec![],
            data: vec![value],
        }
    }

    pub fn vector(values: Vec<f64>) -> Self {
        Self {
            shape: vec![values.len()],
            data: values,
        }
    }

    /// Build a matrix from equally long rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(shape_err!("ragged rows"));
        }
        Ok(Self {
            shape: vec![rows.len(), cols],
            data: rows.concat(),
        })
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(&[usize]) -> f64) -> Self {
        let mut t = Self::zeros(shape);
        let mut idx = vec![0usize; shape.len()];
        for slot in t.data.iter_mut() {
            *slot = f(&idx);
            for ax in (0..shape.len()).rev() {
                idx[ax] += 1;
                if idx[ax] < shape[ax] {
                    break;
                }
                idx[ax] = 0;
            }
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
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

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn strides(&self) -> Vec<usize> {
        strides_of(&self.shape)
    }

    fn offset(&self, idx: &[usize]) -> usize {
        debug_assert_eq!(idx.len(), self.shape.len());
        idx.iter()
            .zip(&self.shape)
            .fold(0, |acc, (&i, &d)| {
                debug_assert!(i < d);
                acc * d + i
            })
    }

    pub fn get(&self, idx: &[usize]) -> f64 {
        self.data[self.offset(idx)]
    }

    pub fn set(&mut self, idx: &[usize], value: f64) {
        let o = self.offset(idx);
        self.data[o] = value;
    }

    /// Scalar value of a one-element tensor.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(shape_err!("cannot reshape {:?} into {:?}", self.shape, shape));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn reshaped(&self, shape: &[usize]) -> Result<Self> {
        self.clone().reshape(shape)
    }

    /// Reorder axes: output axis `i` is input axis `axes[i]`.
    pub fn permute(&self, axes: &[usize]) -> Result<Self> {
        let nd = self.shape.len();
        let mut seen = vec![false; nd];
        if axes.len() != nd || axes.iter().any(|&a| a >= nd || std::mem::replace(&mut seen[a], true)) {
            return Err(shape_err!("invalid permutation {:?} for {}-mode tensor", axes, nd));
        }
        if axes.iter().enumerate().all(|(i, &a)| i == a) {
            return Ok(self.clone());
        }
        let in_strides = self.strides();
        let out_shape: Vec<usize> = axes.iter().map(|&a| self.shape[a]).collect();
        let src_strides: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
        let mut out = Vec::with_capacity(self.data.len());
        let mut idx = vec![0usize; nd];
        let mut src = 0usize;
        for _ in 0..self.data.len() {
            out.push(self.data[src]);
            for ax in (0..nd).rev() {
                idx[ax] += 1;
                src += src_strides[ax];
                if idx[ax] < out_shape[ax] {
                    break;
                }
                src -= src_strides[ax] * out_shape[ax];
                idx[ax] = 0;
            }
        }
        Ok(Self {
            shape: out_shape,
            data: out,
        })
    }

    pub fn transpose(&self) -> Result<Self> {
        if self.ndim() != 2 {
            return Err(shape_err!("transpose needs a matrix, got {:?}", self.shape));
        }
        self.permute(&[1, 0])
    }

    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    pub fn cols(&self) -> usize {
        self.shape[1]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.shape[1..].iter().product::<usize>();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        let c = self.shape[1..].iter().product::<usize>();
        &mut self.data[i * c..(i + 1) * c]
    }

    /// Matrix product of two 2-mode tensors.
    pub fn matmul(&self, other: &Self) -> Result<Self> {
        if self.ndim() != 2 || other.ndim() != 2 || self.shape[1] != other.shape[0] {
            return Err(shape_err!("matmul {:?} x {:?}", self.shape, other.shape));
        }
        let (m, k, n) = (self.shape[0], self.shape[1], other.shape[1]);
        let mut out = Self::zeros(&[m, n]);
        gemm(m, k, n, 1.0, &self.data, k, 1, &other.data, n, 1, 0.0, &mut out.data, n, 1);
        Ok(out)
    }

    /// Mode-`mode` product with a matrix of shape `J x D_mode`, replacing
    /// that mode's size by `J`.
    pub fn mode_product(&self, mode: usize, mat: &Self) -> Result<Self> {
        if mode >= self.ndim() || mat.ndim() != 2 || mat.shape[1] != self.shape[mode] {
            return Err(shape_err!(
                "mode-{} product of {:?} with {:?}",
                mode,
                self.shape,
                mat.shape
            ));
        }
        let outer: usize = self.shape[..mode].iter().product();
        let d = self.shape[mode];
        let inner: usize = self.shape[mode + 1..].iter().product();
        let j = mat.shape[0];
        let mut shape = self.shape.clone();
        shape[mode] = j;
        let mut out = Self::zeros(&shape);
        for o in 0..outer {
            // out[o] (J x inner) = mat (J x D) * self[o] (D x inner)
            gemm(
                j,
                d,
                inner,
                1.0,
                &mat.data,
                d,
                1,
                &self.data[o * d * inner..],
                inner,
                1,
                0.0,
                &mut out.data[o * j * inner..],
                inner,
                1,
            );
        }
        Ok(out)
    }

    /// Full inner product `<self, other>` of equally shaped tensors.
    pub fn dot(&self, other: &Self) -> Result<f64> {
        if self.shape != other.shape {
            return Err(shape_err!("inner product {:?} vs {:?}", self.shape, other.shape));
        }
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum())
    }

    /// Contract the leading modes of `self` against all modes of `other`;
    /// the result carries the remaining trailing modes of `self`.
    pub fn contract_leading(&self, other: &Self) -> Result<Self> {
        let k = other.ndim();
        if k > self.ndim() || self.shape[..k] != other.shape[..] {
            return Err(shape_err!(
                "cannot contract {:?} against leading modes of {:?}",
                other.shape,
                self.shape
            ));
        }
        let rest = self.shape[k..].to_vec();
        let n: usize = rest.iter().product();
        let mut out = Self::zeros(&rest);
        gemm(1, other.len(), n, 1.0, &other.data, other.len(), 1, &self.data, n, 1, 0.0, &mut out.data, n, 1);
        Ok(out)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        if self.shape != other.shape {
            return Err(shape_err!("elementwise op {:?} vs {:?}", self.shape, other.shape));
        }
        Ok(Self {
            shape: self.shape.clone(),
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn scale(&self, s: f64) -> Self {
        self.map(|x| x * s)
    }

    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        if self.shape != other.shape {
            return Err(shape_err!("accumulate {:?} into {:?}", other.shape, self.shape));
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Sub-tensor at position `i` of mode 0.
    pub fn index_first(&self, i: usize) -> Self {
        let inner: usize = self.shape[1..].iter().product();
        Self {
            shape: self.shape[1..].to_vec(),
            data: self.data[i * inner..(i + 1) * inner].to_vec(),
        }
    }

    /// Sub-tensor at position `i` along `axis` (the axis is removed).
    pub fn index_axis(&self, axis: usize, i: usize) -> Self {
        let outer: usize = self.shape[..axis].iter().product();
        let d = self.shape[axis];
        let inner: usize = self.shape[axis + 1..].iter().product();
        let mut data = Vec::with_capacity(outer * inner);
        for o in 0..outer {
            let base = (o * d + i) * inner;
            data.extend_from_slice(&self.data[base..base + inner]);
        }
        let mut shape = self.shape.clone();
        shape.remove(axis);
        Self { shape, data }
    }
}

pub(crate) fn strides_of(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1usize; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Stack equally shaped tensors along a new mode inserted at `position`.
///
/// Slice `i` along the new mode equals `ts[i]`.
pub fn concatenate(ts: &[DenseTensor], position: usize) -> Result<DenseTensor> {
    let first = ts
        .first()
        .ok_or_else(|| crate::error::Error::Argument("concatenate needs at least one tensor".into()))?;
    if let Some(bad) = ts.iter().position(|t| t.shape != first.shape) {
        return Err(crate::error::Error::Argument(format!(
            "tensor {} has shape {:?}, expected {:?}",
            bad, ts[bad].shape, first.shape
        )));
    }
    if position > first.ndim() {
        return Err(crate::error::Error::Argument(format!(
            "new mode position {} out of range for {}-mode inputs",
            position,
            first.ndim()
        )));
    }
    let outer: usize = first.shape[..position].iter().product();
    let inner: usize = first.shape[position..].iter().product();
    let mut data = Vec::with_capacity(outer * inner * ts.len());
    for o in 0..outer {
        for t in ts {
            data.extend_from_slice(&t.data[o * inner..(o + 1) * inner]);
        }
    }
    let mut shape = first.shape.clone();
    shape.insert(position, ts.len());
    Ok(DenseTensor { shape, data })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn permute_matches_index_mapping() {
        let t = DenseTensor::from_fn(&[2, 3, 4], |i| (i[0] * 100 + i[1] * 10 + i[2]) as f64);
        let p = t.permute(&[2, 0, 1]).unwrap();
        assert_eq!(p.shape(), &[4, 2, 3]);
        for a in 0..4 {
            for b in 0..2 {
                for c in 0..3 {
                    assert_eq!(p.get(&[a, b, c]), t.get(&[b, c, a]));
                }
            }
        }
    }

    #[test]
    fn mode_product_against_loops() {
        let t = DenseTensor::from_fn(&[2, 3, 4], |i| (i[0] + 2 * i[1] + 3 * i[2]) as f64 * 0.1);
        let m = DenseTensor::from_fn(&[5, 3], |i| (i[0] as f64 - i[1] as f64).sin());
        let out = t.mode_product(1, &m).unwrap();
        assert_eq!(out.shape(), &[2, 5, 4]);
        for a in 0..2 {
            for j in 0..5 {
                for c in 0..4 {
                    let want: f64 = (0..3).map(|b| m.get(&[j, b]) * t.get(&[a, b, c])).sum();
                    assert!((out.get(&[a, j, c]) - want).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn singleton_concatenation_adds_unit_mode() {
        let t = DenseTensor::from_fn(&[2, 2], |i| (i[0] * 2 + i[1]) as f64);
        let c = concatenate(std::slice::from_ref(&t), 0).unwrap();
        assert_eq!(c.shape(), &[1, 2, 2]);
        assert_eq!(c.data(), t.data());
    }

    #[test]
    fn concatenation_slices_reproduce_inputs() {
        let a = DenseTensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let b = DenseTensor::from_rows(&[vec![5.0, 6.0], vec![7.0, 8.0]]).unwrap();
        for pos in 0..=2 {
            let c = concatenate(&[a.clone(), b.clone()], pos).unwrap();
            assert_eq!(c.shape().len(), 3);
            assert_eq!(c.shape()[pos], 2);
            assert_eq!(c.index_axis(pos, 0), a);
            assert_eq!(c.index_axis(pos, 1), b);
        }
    }

    #[test]
    fn layer_stack_shape() {
        let layers: Vec<_> = (0..3).map(|l| DenseTensor::filled(&[5, 32], l as f64)).collect();
        let x = concatenate(&layers, 1).unwrap();
        assert_eq!(x.shape(), &[5, 3, 32]);
    }

    #[test]
    fn concatenation_rejects_mismatch_naming_index() {
        let a = DenseTensor::zeros(&[2, 2]);
        let b = DenseTensor::zeros(&[2, 3]);
        let err = concatenate(&[a.clone(), a, b], 0).unwrap_err().to_string();
        assert!(err.contains("tensor 2"), "{err}");
    }
}
