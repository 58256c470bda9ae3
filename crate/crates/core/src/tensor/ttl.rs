//! Tensor transformation layer (TTL).
//!
//! Each layer maps a batch of hidden tensors `B x D_1 x ... x D_M` to
//! `B x O` through a weight of shape `D_1 x ... x D_M x O` stored in CP,
//! Tucker, TT or dense form, adds a bias and applies ReLU. Further layers
//! take the previous layer's output vector as a one-mode tensor.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::Rng;

use super::lowrank::{CpWeight, LowRankWeight, TtWeight, TuckerWeight};
use super::DenseTensor;
use crate::autodiff::{Tape, Var};
use crate::error::{arg_err, shape_err, Error, Result};
use crate::nn::{Mode, ParamStore, Session};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TtlFormat {
    #[default]
    Cp,
    Tucker,
    Tt,
    Dense,
}

impl FromStr for TtlFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cp" => Ok(Self::Cp),
            "tucker" => Ok(Self::Tucker),
            "tt" => Ok(Self::Tt),
            "dense" => Ok(Self::Dense),
            other => Err(Error::Config(format!("unknown TTL format {other:?} (cp|tucker|tt|dense)"))),
        }
    }
}

impl fmt::Display for TtlFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Cp => "cp",
            Self::Tucker => "tucker",
            Self::Tt => "tt",
            Self::Dense => "dense",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TtlConfig {
    pub format: TtlFormat,
    /// CP rank; also the cap on every Tucker and TT rank.
    pub rank: usize,
    /// Output width of each layer.
    pub widths: Vec<usize>,
    pub relu: bool,
}

impl Default for TtlConfig {
    fn default() -> Self {
        Self {
            format: TtlFormat::Cp,
            rank: 32,
            widths: vec![32],
            relu: true,
        }
    }
}

/// Layer description; the parameters live in a [`ParamStore`] under `name`.
#[derive(Debug, Clone, PartialEq)]
pub struct Ttl {
    name: String,
    input_shape: Vec<usize>,
    config: TtlConfig,
}

impl Ttl {
    /// `input_shape` excludes the batch mode.
    pub fn new(name: impl Into<String>, input_shape: &[usize], config: TtlConfig) -> Result<Self> {
        if input_shape.is_empty() || input_shape.contains(&0) {
            return Err(arg_err!("TTL input shape {:?} must be nonempty with positive modes", input_shape));
        }
        if config.widths.is_empty() || config.widths.contains(&0) || config.rank == 0 {
            return Err(arg_err!("TTL needs at least one layer, positive widths and rank"));
        }
        Ok(Self {
            name: name.into(),
            input_shape: input_shape.to_vec(),
            config,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn config(&self) -> &TtlConfig {
        &self.config
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn output_width(&self) -> usize {
        *self.config.widths.last().expect("validated")
    }

    pub fn depth(&self) -> usize {
        self.config.widths.len()
    }

    fn layer_input(&self, layer: usize) -> Vec<usize> {
        if layer == 0 {
            self.input_shape.clone()
        } else {
            vec![self.config.widths[layer - 1]]
        }
    }

    /// Full weight shape of `layer`: its input modes followed by its output width.
    pub fn weight_shape(&self, layer: usize) -> Vec<usize> {
        let mut s = self.layer_input(layer);
        s.push(self.config.widths[layer]);
        s
    }

    fn key(&self, layer: usize, part: &str) -> String {
        format!("{}.{}.{}", self.name, layer, part)
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut impl Rng) -> Result<()> {
        for layer in 0..self.depth() {
            let shape = self.weight_shape(layer);
            let r = self.config.rank;
            let w = match self.config.format {
                TtlFormat::Cp => LowRankWeight::Cp(CpWeight::random(&shape, r, rng)),
                TtlFormat::Tucker => {
                    let ranks: Vec<usize> = shape.iter().map(|&d| d.min(r)).collect();
                    LowRankWeight::Tucker(TuckerWeight::random(&shape, &ranks, rng)?)
                }
                TtlFormat::Tt => {
                    let ranks = vec![r; shape.len() - 1];
                    LowRankWeight::Tt(TtWeight::random(&shape, &ranks, rng)?)
                }
                TtlFormat::Dense => {
                    let fan_in: usize = shape[..shape.len() - 1].iter().product();
                    let bound = 1.0 / (fan_in as f64).sqrt();
                    LowRankWeight::Dense(DenseTensor::from_fn(&shape, |_| rng.random_range(-bound..=bound)))
                }
            };
            self.store_weight(store, layer, w)?;
            store.insert(self.key(layer, "bias"), DenseTensor::zeros(&[self.config.widths[layer]]));
        }
        Ok(())
    }

    /// Write `w` as the weight of `layer`, replacing any previous value.
    pub fn store_weight(&self, store: &mut ParamStore, layer: usize, w: LowRankWeight) -> Result<()> {
        if w.shape() != self.weight_shape(layer) {
            return Err(shape_err!(
                "weight of shape {:?} for layer expecting {:?}",
                w.shape(),
                self.weight_shape(layer)
            ));
        }
        match (self.config.format, w) {
            (TtlFormat::Cp, LowRankWeight::Cp(w)) => {
                for (m, u) in w.factors.into_iter().enumerate() {
                    store.insert(self.key(layer, &format!("factor{m}")), u);
                }
                store.insert(self.key(layer, "coeffs"), DenseTensor::vector(w.coeffs));
            }
            (TtlFormat::Tucker, LowRankWeight::Tucker(w)) => {
                for (m, u) in w.factors.into_iter().enumerate() {
                    store.insert(self.key(layer, &format!("factor{m}")), u);
                }
                store.insert(self.key(layer, "core"), w.core);
            }
            (TtlFormat::Tt, LowRankWeight::Tt(w)) => {
                for (m, c) in w.cores.into_iter().enumerate() {
                    store.insert(self.key(layer, &format!("core{m}")), c);
                }
            }
            (TtlFormat::Dense, LowRankWeight::Dense(w)) => store.insert(self.key(layer, "weight"), w),
            (fmt, _) => return Err(arg_err!("weight format does not match layer format {fmt}")),
        }
        Ok(())
    }

    /// Read back the weight of `layer`.
    pub fn weight(&self, store: &ParamStore, layer: usize) -> Result<LowRankWeight> {
        let modes = self.weight_shape(layer).len();
        Ok(match self.config.format {
            TtlFormat::Cp => LowRankWeight::Cp(CpWeight::new(
                (0..modes)
                    .map(|m| store.get(&self.key(layer, &format!("factor{m}"))).cloned())
                    .collect::<Result<_>>()?,
                store.get(&self.key(layer, "coeffs"))?.data().to_vec(),
            )?),
            TtlFormat::Tucker => LowRankWeight::Tucker(TuckerWeight::new(
                store.get(&self.key(layer, "core"))?.clone(),
                (0..modes)
                    .map(|m| store.get(&self.key(layer, &format!("factor{m}"))).cloned())
                    .collect::<Result<_>>()?,
            )?),
            TtlFormat::Tt => LowRankWeight::Tt(TtWeight::new(
                (0..modes)
                    .map(|m| store.get(&self.key(layer, &format!("core{m}"))).cloned())
                    .collect::<Result<_>>()?,
            )?),
            TtlFormat::Dense => LowRankWeight::Dense(store.get(&self.key(layer, "weight"))?.clone()),
        })
    }

    pub fn bias_name(&self, layer: usize) -> String {
        self.key(layer, "bias")
    }

    /// Apply every layer to `x` of shape `B x input_shape`, giving `B x output_width`.
    pub fn forward(&self, sess: &mut Session<'_>, x: Var) -> Result<Var> {
        let shape = sess.tape.shape(x).to_vec();
        if shape.len() != self.input_shape.len() + 1 || shape[1..] != self.input_shape[..] {
            return Err(shape_err!(
                "TTL {} expects batch x {:?}, got {:?}",
                self.name,
                self.input_shape,
                shape
            ));
        }
        let mut h = x;
        for layer in 0..self.depth() {
            h = match self.config.format {
                TtlFormat::Cp => self.cp_layer(sess, h, layer)?,
                TtlFormat::Tucker => self.tucker_layer(sess, h, layer)?,
                TtlFormat::Tt => self.tt_layer(sess, h, layer)?,
                TtlFormat::Dense => self.dense_layer(sess, h, layer)?,
            };
            let b = sess.param(&self.key(layer, "bias"))?;
            h = sess.tape.add_broadcast(h, b)?;
            if self.config.relu {
                h = sess.tape.relu(h);
            }
        }
        Ok(h)
    }

    fn factor(&self, sess: &mut Session<'_>, layer: usize, m: usize) -> Result<Var> {
        sess.param(&self.key(layer, &format!("factor{m}")))
    }

    /// `B x O` from the output factor `O x R` applied to a `B x R` rank vector.
    fn output_factor(&self, sess: &mut Session<'_>, z: Var, layer: usize, modes: usize) -> Result<Var> {
        let u_out = self.factor(sess, layer, modes)?;
        let ut = sess.tape.transpose(u_out)?;
        sess.tape.matmul(z, ut)
    }

    fn cp_layer(&self, sess: &mut Session<'_>, x: Var, layer: usize) -> Result<Var> {
        let dims = self.layer_input(layer);
        let modes = dims.len();
        let batch = sess.tape.shape(x)[0];
        let r = self.config.rank;
        // Last mode first: one matmul, then diagonal contractions that keep the rank index.
        let last = dims[modes - 1];
        let outer: usize = batch * dims[..modes - 1].iter().product::<usize>();
        let flat = sess.tape.reshape(x, &[outer, last])?;
        let u = self.factor(sess, layer, modes - 1)?;
        let mut z = sess.tape.matmul(flat, u)?;
        for m in (0..modes - 1).rev() {
            let lead: usize = batch * dims[..m].iter().product::<usize>();
            let zr = sess.tape.reshape(z, &[lead, dims[m], r])?;
            let u = self.factor(sess, layer, m)?;
            let prod = sess.tape.mul_broadcast(zr, u)?;
            z = sess.tape.sum_axis(prod, 1)?;
        }
        let c = sess.param(&self.key(layer, "coeffs"))?;
        let z = sess.tape.mul_broadcast(z, c)?;
        self.output_factor(sess, z, layer, modes)
    }

    fn tucker_layer(&self, sess: &mut Session<'_>, x: Var, layer: usize) -> Result<Var> {
        let dims = self.layer_input(layer);
        let modes = dims.len();
        let batch = sess.tape.shape(x)[0];
        // Contract the trailing data mode, then rotate the new rank mode to
        // position 1, so the remaining data modes stay trailing.
        let mut h = x;
        for m in (0..modes).rev() {
            let shape = sess.tape.shape(h).to_vec();
            let d = *shape.last().expect("nonempty");
            let rows: usize = shape[..shape.len() - 1].iter().product();
            let flat = sess.tape.reshape(h, &[rows, d])?;
            let u = self.factor(sess, layer, m)?;
            let z = sess.tape.matmul(flat, u)?;
            let rm = sess.tape.shape(u)[1];
            let mut new_shape = shape[..shape.len() - 1].to_vec();
            new_shape.push(rm);
            let z = sess.tape.reshape(z, &new_shape)?;
            let n = new_shape.len();
            let mut axes = vec![0, n - 1];
            axes.extend(1..n - 1);
            h = sess.tape.permute(z, &axes)?;
        }
        let core = sess.param(&self.key(layer, "core"))?;
        let core_shape = sess.tape.shape(core).to_vec();
        let r_in: usize = core_shape[..modes].iter().product();
        let r_out = core_shape[modes];
        let flat = sess.tape.reshape(h, &[batch, r_in])?;
        let core_mat = sess.tape.reshape(core, &[r_in, r_out])?;
        let z = sess.tape.matmul(flat, core_mat)?;
        self.output_factor(sess, z, layer, modes)
    }

    fn tt_layer(&self, sess: &mut Session<'_>, x: Var, layer: usize) -> Result<Var> {
        let dims = self.layer_input(layer);
        let modes = dims.len();
        let batch = sess.tape.shape(x)[0];
        // State: B x D_m x ... x D_M x R_{m-1}.
        let mut shape = vec![batch];
        shape.extend_from_slice(&dims);
        shape.push(1);
        let mut h = sess.tape.reshape(x, &shape)?;
        for m in 0..modes {
            let n = shape.len();
            let mut axes = vec![0];
            axes.extend(2..n);
            axes.push(1);
            let p = sess.tape.permute(h, &axes)?;
            let rest: usize = shape[2..n - 1].iter().product();
            let (r_prev, d) = (shape[n - 1], shape[1]);
            let flat = sess.tape.reshape(p, &[batch * rest, r_prev * d])?;
            let core = sess.param(&self.key(layer, &format!("core{m}")))?;
            let r_next = sess.tape.shape(core)[2];
            let cm = sess.tape.reshape(core, &[r_prev * d, r_next])?;
            let z = sess.tape.matmul(flat, cm)?;
            let mut next = vec![batch];
            next.extend_from_slice(&shape[2..n - 1]);
            next.push(r_next);
            h = sess.tape.reshape(z, &next)?;
            shape = next;
        }
        // Output core R_M x O x 1.
        let core = sess.param(&self.key(layer, &format!("core{modes}")))?;
        let cs = sess.tape.shape(core).to_vec();
        let cm = sess.tape.reshape(core, &[cs[0], cs[1]])?;
        sess.tape.matmul(h, cm)
    }

    fn dense_layer(&self, sess: &mut Session<'_>, x: Var, layer: usize) -> Result<Var> {
        let dims = self.layer_input(layer);
        let batch = sess.tape.shape(x)[0];
        let fan_in: usize = dims.iter().product();
        let w = sess.param(&self.key(layer, "weight"))?;
        let out = self.config.widths[layer];
        let flat = sess.tape.reshape(x, &[batch, fan_in])?;
        let wm = sess.tape.reshape(w, &[fan_in, out])?;
        sess.tape.matmul(flat, wm)
    }
}

/// Stand-alone TTL with its own parameters and an explicit forward/backward
/// pair, for use outside a model.
#[derive(Debug, Clone)]
pub struct TtlModule {
    pub layer: Ttl,
    pub params: ParamStore,
    recorded: Option<Recorded>,
}

#[derive(Debug, Clone)]
struct Recorded {
    tape: Tape,
    bound: BTreeMap<String, Var>,
    input: Var,
    output: Var,
}

/// Gradients from [`TtlModule::backward`].
#[derive(Debug, Clone)]
pub struct TtlGradients {
    pub params: BTreeMap<String, DenseTensor>,
    pub input: DenseTensor,
}

impl TtlModule {
    pub fn new(layer: Ttl, rng: &mut impl Rng) -> Result<Self> {
        let mut params = ParamStore::new();
        layer.init(&mut params, rng)?;
        Ok(Self {
            layer,
            params,
            recorded: None,
        })
    }

    pub fn with_params(layer: Ttl, params: ParamStore) -> Self {
        Self {
            layer,
            params,
            recorded: None,
        }
    }

    /// Forward pass; records what [`backward`](Self::backward) needs.
    pub fn forward(&mut self, h: &DenseTensor) -> Result<DenseTensor> {
        let mut sess = Session::new(&self.params, Mode::Train, 0);
        let input = sess.tape.leaf(h.clone());
        let output = self.layer.forward(&mut sess, input)?;
        let value = sess.tape.value(output).clone();
        let (tape, bound) = sess.into_parts();
        self.recorded = Some(Recorded {
            tape,
            bound,
            input,
            output,
        });
        Ok(value)
    }

    /// Gradients of the loss with respect to every parameter and the input,
    /// given the upstream gradient of the last forward output.
    pub fn backward(&self, grad_out: &DenseTensor) -> Result<TtlGradients> {
        let rec = self
            .recorded
            .as_ref()
            .ok_or_else(|| Error::State("TTL backward called before forward".into()))?;
        let mut g = rec.tape.backward_from(rec.output, grad_out.clone())?;
        let params = rec
            .bound
            .iter()
            .map(|(k, &v)| {
                let grad = g.take(v).unwrap_or_else(|| DenseTensor::zeros(rec.tape.shape(v)));
                (k.clone(), grad)
            })
            .collect();
        let input = g
            .take(rec.input)
            .unwrap_or_else(|| DenseTensor::zeros(rec.tape.shape(rec.input)));
        Ok(TtlGradients { params, input })
    }
}
