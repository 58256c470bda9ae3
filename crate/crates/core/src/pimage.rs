//! Persistence images and the stacked `K x M x P x P` image tensor.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::eph::{extended_persistence, sublevel_persistence, ExtendedPersistenceDiagram};
use crate::error::{arg_err, Error, Result};
use crate::filtration::{compute_filtration, FiltrationKind};
use crate::graph::Graph;
use crate::tensor::DenseTensor;

/// Images per filtration: one per homology dimension.
pub const IMAGES_PER_FILTRATION: usize = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct EpiConfig {
    pub kinds: Vec<FiltrationKind>,
    pub resolution: usize,
    pub bandwidth: f64,
    /// Use ordinary sublevel persistence instead of extended persistence.
    pub sublevel_only: bool,
}

impl Default for EpiConfig {
    fn default() -> Self {
        Self {
            kinds: FiltrationKind::ALL.to_vec(),
            resolution: 50,
            bandwidth: 0.05,
            sublevel_only: false,
        }
    }
}

impl EpiConfig {
    pub fn shape(&self) -> [usize; 4] {
        [self.kinds.len(), IMAGES_PER_FILTRATION, self.resolution, self.resolution]
    }
}

/// Gaussian-smoothed image of the points of one dimension.
///
/// Each point maps to `(birth, |death - birth|)` and contributes a normalized
/// isotropic Gaussian weighted by its persistence, sampled at the cell centers
/// of `[0, 1]^2`. Entry `[i, j]` indexes birth `i` and persistence `j`.
pub fn persistence_image(d: &ExtendedPersistenceDiagram, dim: usize, p: usize, bandwidth: f64) -> Result<DenseTensor> {
    if p == 0 || !(bandwidth > 0.0) {
        return Err(arg_err!("persistence image needs P >= 1 and positive bandwidth"));
    }
    let mut img = DenseTensor::zeros(&[p, p]);
    let centers: Vec<f64> = (0..p).map(|i| (i as f64 + 0.5) / p as f64).collect();
    let two_var = 2.0 * bandwidth * bandwidth;
    let norm = 1.0 / (std::f64::consts::PI * two_var);
    let profile = |mu: f64| -> Vec<f64> { centers.iter().map(|c| (-(c - mu).powi(2) / two_var).exp()).collect() };
    for pt in d.points.iter().filter(|pt| pt.dim() == dim) {
        let pers = pt.persistence();
        if pers == 0.0 {
            continue;
        }
        let gx = profile(pt.birth);
        let gy = profile(pers);
        let w = pers * norm;
        for (i, &x) in gx.iter().enumerate() {
            for (v, &y) in img.row_mut(i).iter_mut().zip(&gy) {
                *v += w * x * y;
            }
        }
    }
    Ok(img)
}

/// Image tensor of one graph.
#[derive(Debug, Clone, PartialEq)]
pub struct EpiTensor {
    /// `K x M x P x P`.
    pub data: DenseTensor,
}

impl EpiTensor {
    pub fn shape(&self) -> &[usize] {
        self.data.shape()
    }
}

pub fn diagrams(g: &Graph, cfg: &EpiConfig) -> Result<Vec<ExtendedPersistenceDiagram>> {
    cfg.kinds
        .iter()
        .map(|&kind| {
            let f = compute_filtration(g, kind);
            if cfg.sublevel_only {
                sublevel_persistence(g, &f)
            } else {
                extended_persistence(g, &f)
            }
        })
        .collect()
}

pub fn build_epi_tensor(g: &Graph, cfg: &EpiConfig) -> Result<EpiTensor> {
    if cfg.kinds.is_empty() {
        return Err(arg_err!("at least one filtration is required"));
    }
    let p = cfg.resolution;
    let mut data = Vec::with_capacity(cfg.kinds.len() * IMAGES_PER_FILTRATION * p * p);
    for d in diagrams(g, cfg)? {
        for dim in 0..IMAGES_PER_FILTRATION {
            data.extend_from_slice(persistence_image(&d, dim, p, cfg.bandwidth)?.data());
        }
    }
    Ok(EpiTensor {
        data: DenseTensor::new(cfg.shape().to_vec(), data)?,
    })
}

/// Add i.i.d. `Normal(0, sigma^2)` noise to every entry.
pub fn inject_noise(t: &EpiTensor, sigma: f64, rng: &mut impl Rng) -> Result<EpiTensor> {
    if !(sigma >= 0.0) {
        return Err(arg_err!("noise scale must be non-negative, got {sigma}"));
    }
    if sigma == 0.0 {
        return Ok(t.clone());
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::Argument(e.to_string()))?;
    let mut data = t.data.clone();
    data.data_mut().iter_mut().for_each(|x| *x += normal.sample(rng));
    Ok(EpiTensor { data })
}

/// On-disk cache of image tensors: 16-byte header of four little-endian
/// `u32` (K, M, P, float size) followed by row-major little-endian `f32`.
#[derive(Debug, Clone)]
pub struct EpiCache {
    dir: PathBuf,
}

impl EpiCache {
    /// Cache for one dataset and configuration hash under `root`.
    pub fn new(root: &Path, dataset: &str, config_hash: &str) -> Self {
        Self {
            dir: root.join(dataset).join(config_hash),
        }
    }

    fn path(&self, index: usize) -> PathBuf {
        self.dir.join(format!("{index}.epi"))
    }

    pub fn load(&self, index: usize) -> Result<Option<EpiTensor>> {
        let path = self.path(index);
        if !path.exists() {
            return Ok(None);
        }
        decode(&fs::read(&path)?).map(Some)
    }

    /// Atomic write through a temporary file and rename.
    pub fn store(&self, index: usize, t: &EpiTensor) -> Result<()> {
        fs::create_dir_all(&self.dir)?;
        let tmp = self.dir.join(format!(".{index}.epi.{}.tmp", std::process::id()));
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&encode(t)?)?;
        f.sync_all()?;
        fs::rename(&tmp, self.path(index))?;
        Ok(())
    }
}

/// Round every entry to `f32`, the precision the cache stores.
pub fn quantize(t: &EpiTensor) -> EpiTensor {
    EpiTensor {
        data: t.data.map(|x| x as f32 as f64),
    }
}

fn encode(t: &EpiTensor) -> Result<Vec<u8>> {
    let s = t.shape();
    if s.len() != 4 || s[2] != s[3] {
        return Err(arg_err!("image tensor must be K x M x P x P, got {:?}", s));
    }
    let mut buf = Vec::with_capacity(16 + 4 * t.data.len());
    for v in [s[0], s[1], s[2], 4] {
        buf.extend_from_slice(&(v as u32).to_le_bytes());
    }
    for &x in t.data.data() {
        buf.extend_from_slice(&(x as f32).to_le_bytes());
    }
    Ok(buf)
}

fn decode(bytes: &[u8]) -> Result<EpiTensor> {
    let bad = |m: &str| Error::Checkpoint(format!("image cache: {m}"));
    if bytes.len() < 16 {
        return Err(bad("truncated header"));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[4 * i..4 * i + 4].try_into().expect("4 bytes")) as usize;
    let (k, m, p, size) = (word(0), word(1), word(2), word(3));
    if size != 4 {
        return Err(bad("unsupported float size"));
    }
    let n = k * m * p * p;
    if bytes.len() != 16 + 4 * n {
        return Err(bad("length does not match header"));
    }
    let data = bytes[16..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
        .collect();
    Ok(EpiTensor {
        data: DenseTensor::new(vec![k, m, p, p], data)?,
    })
}
