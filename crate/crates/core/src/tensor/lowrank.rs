//! Low-rank weight tensors.
//!
//! A weight of shape `D_1 x ... x D_M` can be stored densely or in one of three
//! factored formats. Every format supports [`reconstruct`](LowRankWeight::reconstruct)
//! (materialize the dense tensor) and [`inner_product`](LowRankWeight::inner_product),
//! which contracts the weight's leading modes against a hidden tensor without
//! materializing the weight.

use rand::Rng;

use super::dense::{gemm, DenseTensor};
use crate::error::{arg_err, shape_err, Result};

/// Rank-R CP weight: `sum_r c_r u_{1r} o ... o u_{Mr}`.
#[derive(Debug, Clone, PartialEq)]
pub struct CpWeight {
    /// One `D_m x R` loading matrix per mode.
    pub factors: Vec<DenseTensor>,
    pub coeffs: Vec<f64>,
}

/// Tucker weight: `core x_1 U_1 x_2 ... x_M U_M`.
#[derive(Debug, Clone, PartialEq)]
pub struct TuckerWeight {
    /// Core of shape `R_1 x ... x R_M`.
    pub core: DenseTensor,
    /// One `D_m x R_m` factor per mode.
    pub factors: Vec<DenseTensor>,
}

/// Tensor-train weight: chain of third-order cores `R_{i-1} x D_i x R_i` with
/// boundary ranks 1.
#[derive(Debug, Clone, PartialEq)]
pub struct TtWeight {
    pub cores: Vec<DenseTensor>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LowRankWeight {
    Dense(DenseTensor),
    Cp(CpWeight),
    Tucker(TuckerWeight),
    Tt(TtWeight),
}

fn uniform_matrix(rows: usize, cols: usize, bound: f64, rng: &mut impl Rng) -> DenseTensor {
    let data = (0..rows * cols).map(|_| rng.random_range(-bound..=bound)).collect();
    DenseTensor::new(vec![rows, cols], data).expect("shape matches")
}

fn normalize_columns(m: &mut DenseTensor) {
    let (rows, cols) = (m.rows(), m.cols());
    for c in 0..cols {
        let norm = (0..rows).map(|r| m.get(&[r, c]).powi(2)).sum::<f64>().sqrt();
        if norm > 0.0 {
            for r in 0..rows {
                let v = m.get(&[r, c]) / norm;
                m.set(&[r, c], v);
            }
        }
    }
}

impl CpWeight {
    pub fn new(factors: Vec<DenseTensor>, coeffs: Vec<f64>) -> Result<Self> {
        let w = Self { factors, coeffs };
        w.validate()?;
        Ok(w)
    }

    /// Random initialization: entries uniform in `±1/sqrt(D_m R)`, columns
    /// then scaled to unit norm, coefficients 1.
    pub fn random(shape: &[usize], rank: usize, rng: &mut impl Rng) -> Self {
        let factors = shape
            .iter()
            .map(|&d| {
                let mut u = uniform_matrix(d, rank, 1.0 / ((d * rank) as f64).sqrt(), rng);
                normalize_columns(&mut u);
                u
            })
            .collect();
        Self {
            factors,
            coeffs: vec![1.0; rank],
        }
    }

    pub fn rank(&self) -> usize {
        self.coeffs.len()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.factors.iter().map(DenseTensor::rows).collect()
    }

    fn validate(&self) -> Result<()> {
        let r = self.coeffs.len();
        if r == 0 || self.factors.is_empty() {
            return Err(arg_err!("CP weight needs rank >= 1 and at least one mode"));
        }
        for (m, u) in self.factors.iter().enumerate() {
            if u.ndim() != 2 || u.cols() != r {
                return Err(shape_err!("CP factor {} has shape {:?}, rank is {}", m, u.shape(), r));
            }
        }
        Ok(())
    }

    /// Tucker form with a superdiagonal core.
    pub fn to_tucker(&self) -> TuckerWeight {
        let r = self.rank();
        let m = self.factors.len();
        let mut core = DenseTensor::zeros(&vec![r; m]);
        for (i, &c) in self.coeffs.iter().enumerate() {
            core.set(&vec![i; m], c);
        }
        TuckerWeight {
            core,
            factors: self.factors.clone(),
        }
    }
}

/// Outer-product expansion `sum_r w_r prod_m U_m[i_m, r]` over the given factors.
fn khatri_rao_sum(factors: &[DenseTensor], weights: &[f64]) -> DenseTensor {
    let r = weights.len();
    let mut acc = weights.to_vec();
    let mut rows = 1usize;
    for u in factors {
        let d = u.rows();
        let mut next = vec![0.0; rows * d * r];
        for a in 0..rows {
            for i in 0..d {
                let dst = &mut next[(a * d + i) * r..(a * d + i + 1) * r];
                let src = &acc[a * r..(a + 1) * r];
                let ui = u.row(i);
                for k in 0..r {
                    dst[k] = src[k] * ui[k];
                }
            }
        }
        acc = next;
        rows *= d;
    }
    let data = acc.chunks(r).map(|c| c.iter().sum()).collect();
    let shape: Vec<usize> = factors.iter().map(DenseTensor::rows).collect();
    DenseTensor::new(shape, data).expect("shape matches")
}

/// Dense reconstruction of a CP weight.
pub fn cp_reconstruct(w: &CpWeight) -> DenseTensor {
    khatri_rao_sum(&w.factors, &w.coeffs)
}

impl TuckerWeight {
    pub fn new(core: DenseTensor, factors: Vec<DenseTensor>) -> Result<Self> {
        let w = Self { core, factors };
        w.validate()?;
        Ok(w)
    }

    pub fn random(shape: &[usize], ranks: &[usize], rng: &mut impl Rng) -> Result<Self> {
        if shape.len() != ranks.len() {
            return Err(arg_err!("Tucker ranks {:?} do not match shape {:?}", ranks, shape));
        }
        let factors: Vec<_> = shape
            .iter()
            .zip(ranks)
            .map(|(&d, &r)| {
                let mut u = uniform_matrix(d, r, 1.0 / ((d * r) as f64).sqrt(), rng);
                normalize_columns(&mut u);
                u
            })
            .collect();
        let n: usize = ranks.iter().product();
        let bound = (3.0 / n as f64).sqrt();
        let core = DenseTensor::new(
            ranks.to_vec(),
            (0..n).map(|_| rng.random_range(-bound..=bound)).collect(),
        )?;
        Self::new(core, factors)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.factors.iter().map(DenseTensor::rows).collect()
    }

    fn validate(&self) -> Result<()> {
        if self.core.ndim() != self.factors.len() || self.factors.is_empty() {
            return Err(shape_err!(
                "Tucker core has {} modes but {} factors",
                self.core.ndim(),
                self.factors.len()
            ));
        }
        for (m, u) in self.factors.iter().enumerate() {
            if u.ndim() != 2 || u.cols() != self.core.shape()[m] || u.cols() > u.rows() {
                return Err(shape_err!(
                    "Tucker factor {} has shape {:?} for core {:?}",
                    m,
                    u.shape(),
                    self.core.shape()
                ));
            }
        }
        Ok(())
    }
}

pub fn tucker_reconstruct(w: &TuckerWeight) -> DenseTensor {
    let mut t = w.core.clone();
    for (m, u) in w.factors.iter().enumerate() {
        t = t.mode_product(m, u).expect("validated Tucker weight");
    }
    t
}

impl TtWeight {
    pub fn new(cores: Vec<DenseTensor>) -> Result<Self> {
        let w = Self { cores };
        w.validate()?;
        Ok(w)
    }

    /// Random cores for mode sizes `shape` and interior ranks `ranks`
    /// (`ranks.len() == shape.len() - 1`).
    pub fn random(shape: &[usize], ranks: &[usize], rng: &mut impl Rng) -> Result<Self> {
        if shape.is_empty() || ranks.len() + 1 != shape.len() {
            return Err(arg_err!("TT needs {} interior ranks, got {:?}", shape.len().saturating_sub(1), ranks));
        }
        let mut full = vec![1];
        full.extend_from_slice(ranks);
        full.push(1);
        let cores = shape
            .iter()
            .enumerate()
            .map(|(i, &d)| {
                let (a, b) = (full[i], full[i + 1]);
                let bound = (3.0 / (a * d) as f64).sqrt();
                let data = (0..a * d * b).map(|_| rng.random_range(-bound..=bound)).collect();
                DenseTensor::new(vec![a, d, b], data).expect("shape matches")
            })
            .collect();
        Self::new(cores)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.cores.iter().map(|c| c.shape()[1]).collect()
    }

    pub fn ranks(&self) -> Vec<usize> {
        let mut r: Vec<usize> = self.cores.iter().map(|c| c.shape()[0]).collect();
        r.push(self.cores.last().map_or(1, |c| c.shape()[2]));
        r
    }

    fn validate(&self) -> Result<()> {
        if self.cores.is_empty() {
            return Err(arg_err!("TT weight needs at least one core"));
        }
        let mut prev = 1usize;
        for (i, c) in self.cores.iter().enumerate() {
            if c.ndim() != 3 || c.shape()[0] != prev {
                return Err(shape_err!("TT core {} has shape {:?}, expected leading rank {}", i, c.shape(), prev));
            }
            prev = c.shape()[2];
        }
        if prev != 1 {
            return Err(shape_err!("TT chain must end with rank 1, got {}", prev));
        }
        Ok(())
    }
}

/// Continue a TT chain from a left state `(rows x R)` through `cores`,
/// producing `(rows * prod D) x R_last`.
fn tt_chain(mut state: Vec<f64>, mut rows: usize, mut r: usize, cores: &[DenseTensor]) -> (Vec<f64>, usize, usize) {
    for core in cores {
        let (a, d, b) = (core.shape()[0], core.shape()[1], core.shape()[2]);
        debug_assert_eq!(a, r);
        let mut next = vec![0.0; rows * d * b];
        // (rows x a) @ (a x d*b) -> (rows x d*b) == (rows*d x b)
        gemm(rows, a, d * b, 1.0, &state, a, 1, core.data(), d * b, 1, 0.0, &mut next, d * b, 1);
        state = next;
        rows *= d;
        r = b;
    }
    (state, rows, r)
}

pub fn tt_reconstruct(w: &TtWeight) -> DenseTensor {
    let (data, _, _) = tt_chain(vec![1.0], 1, 1, &w.cores);
    DenseTensor::new(w.shape(), data).expect("validated TT weight")
}

impl LowRankWeight {
    pub fn shape(&self) -> Vec<usize> {
        match self {
            Self::Dense(t) => t.shape().to_vec(),
            Self::Cp(w) => w.shape(),
            Self::Tucker(w) => w.shape(),
            Self::Tt(w) => w.shape(),
        }
    }

    pub fn reconstruct(&self) -> DenseTensor {
        match self {
            Self::Dense(t) => t.clone(),
            Self::Cp(w) => cp_reconstruct(w),
            Self::Tucker(w) => tucker_reconstruct(w),
            Self::Tt(w) => tt_reconstruct(w),
        }
    }

    /// `<W, H>` over the leading modes of `W` that `H` covers; the result keeps
    /// the trailing modes of `W`.
    pub fn inner_product(&self, h: &DenseTensor) -> Result<DenseTensor> {
        let shape = self.shape();
        let k = h.ndim();
        if k == 0 || k > shape.len() || shape[..k] != *h.shape() {
            return Err(shape_err!("cannot contract {:?} with weight of shape {:?}", h.shape(), shape));
        }
        match self {
            Self::Dense(t) => t.contract_leading(h),
            Self::Cp(w) => Ok(cp_inner(w, h)),
            Self::Tucker(w) => tucker_inner(w, h),
            Self::Tt(w) => Ok(tt_inner(w, h)),
        }
    }
}

pub fn low_rank_inner_product(w: &LowRankWeight, h: &DenseTensor) -> Result<DenseTensor> {
    w.inner_product(h)
}

fn cp_inner(w: &CpWeight, h: &DenseTensor) -> DenseTensor {
    let k = h.ndim();
    let r = w.rank();
    // Contract the last shared mode with a plain matrix product, then fold the
    // remaining shared modes in one factor at a time, keeping the rank index.
    let dk = w.factors[k - 1].rows();
    let outer = h.len() / dk;
    let mut z = vec![0.0; outer * r];
    gemm(outer, dk, r, 1.0, h.data(), dk, 1, w.factors[k - 1].data(), r, 1, 0.0, &mut z, r, 1);
    let mut rows = outer;
    for m in (0..k - 1).rev() {
        let u = &w.factors[m];
        let d = u.rows();
        rows /= d;
        let mut next = vec![0.0; rows * r];
        for a in 0..rows {
            let dst = &mut next[a * r..(a + 1) * r];
            for i in 0..d {
                let src = &z[(a * d + i) * r..(a * d + i + 1) * r];
                let ui = u.row(i);
                for q in 0..r {
                    dst[q] += src[q] * ui[q];
                }
            }
        }
        z = next;
    }
    let weights: Vec<f64> = z.iter().zip(&w.coeffs).map(|(a, c)| a * c).collect();
    if k == w.factors.len() {
        DenseTensor::scalar(weights.iter().sum())
    } else {
        khatri_rao_sum(&w.factors[k..], &weights)
    }
}

fn tucker_inner(w: &TuckerWeight, h: &DenseTensor) -> Result<DenseTensor> {
    let k = h.ndim();
    let mut g = h.clone();
    for m in 0..k {
        g = g.mode_product(m, &w.factors[m].transpose()?)?;
    }
    let mut t = w.core.contract_leading(&g)?;
    for (j, u) in w.factors[k..].iter().enumerate() {
        t = t.mode_product(j, u)?;
    }
    Ok(t)
}

fn tt_inner(w: &TtWeight, h: &DenseTensor) -> DenseTensor {
    let k = h.ndim();
    // state: (R_{i} x rest) with rest = product of not-yet-contracted shared modes
    let mut state = h.data().to_vec();
    let mut rest = h.len();
    let mut r = 1usize;
    for core in &w.cores[..k] {
        let (a, d, b) = (core.shape()[0], core.shape()[1], core.shape()[2]);
        rest /= d;
        let mut next = vec![0.0; b * rest];
        // next (b x rest) = core^T (b x a*d) @ state (a*d x rest)
        gemm(b, a * d, rest, 1.0, core.data(), 1, b, &state, rest, 1, 0.0, &mut next, rest, 1);
        state = next;
        r = b;
    }
    let (data, _, _) = tt_chain(state, 1, r, &w.cores[k..]);
    let shape = w.shape()[k..].to_vec();
    DenseTensor::new(shape, data).expect("validated TT weight")
}
