use std::rc::Rc;

use rand::Rng;

use super::{BatchNorm, Linear, ParamStore, Session};
use crate::autodiff::{RowBlock, Var};
use crate::error::{arg_err, Result};
use crate::graph::Graph;
use crate::tensor::DenseTensor;

/// Several graphs stacked into one node matrix with block-diagonal propagation.
#[derive(Debug, Clone)]
pub struct GraphBatch {
    /// `T x F` node features of all graphs, graph after graph.
    pub features: DenseTensor,
    /// Normalized adjacency power of each graph over its row block.
    pub blocks: Rc<Vec<RowBlock>>,
    /// `(first row, node count)` per graph.
    pub segments: Rc<Vec<(usize, usize)>>,
}

impl GraphBatch {
    pub fn new(graphs: &[&Graph], tau: usize) -> Result<Self> {
        let f = graphs.first().map_or(0, |g| g.feature_dim());
        let total: usize = graphs.iter().map(|g| g.node_count()).sum();
        let mut features = DenseTensor::zeros(&[total, f]);
        let mut blocks = Vec::with_capacity(graphs.len());
        let mut segments = Vec::with_capacity(graphs.len());
        let mut offset = 0;
        for g in graphs {
            if g.feature_dim() != f {
                return Err(arg_err!("batch mixes feature widths {} and {}", f, g.feature_dim()));
            }
            let n = g.node_count();
            features.data_mut()[offset * f..(offset + n) * f].copy_from_slice(g.features().data());
            blocks.push(RowBlock {
                offset,
                matrix: g.normalized_adjacency_power(tau)?,
            });
            segments.push((offset, n));
            offset += n;
        }
        Ok(Self {
            features,
            blocks: Rc::new(blocks),
            segments: Rc::new(segments),
        })
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GcnConfig {
    pub layers: usize,
    pub hidden: usize,
    pub tau: usize,
}

impl Default for GcnConfig {
    fn default() -> Self {
        Self {
            layers: 3,
            hidden: 32,
            tau: 1,
        }
    }
}

/// Graph convolution stack. Layer `l` computes
/// `C_{l+1} = ReLU(BN(ReLU(A^tau C_l W_l) V_l + c_l))`.
#[derive(Debug, Clone, PartialEq)]
pub struct Gcn {
    pub config: GcnConfig,
    pub d_in: usize,
    convs: Vec<Linear>,
    heads: Vec<(Linear, BatchNorm)>,
}

impl Gcn {
    pub fn new(name: &str, d_in: usize, config: GcnConfig) -> Result<Self> {
        if config.layers == 0 || config.hidden == 0 || config.tau == 0 {
            return Err(arg_err!("GCN needs at least one layer, positive width and tau >= 1"));
        }
        let h = config.hidden;
        let convs = (0..config.layers)
            .map(|l| Linear::new(format!("{name}.{l}.conv"), if l == 0 { d_in } else { h }, h, false))
            .collect();
        let heads = (0..config.layers)
            .map(|l| (Linear::new(format!("{name}.{l}.mlp"), h, h, true), BatchNorm::new(format!("{name}.{l}.bn"), h)))
            .collect();
        Ok(Self {
            config,
            d_in,
            convs,
            heads,
        })
    }

    pub fn layers(&self) -> &[Linear] {
        &self.convs
    }

    pub fn heads(&self) -> &[(Linear, BatchNorm)] {
        &self.heads
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut impl Rng) {
        for (conv, (lin, bn)) in self.convs.iter().zip(&self.heads) {
            conv.init(store, rng);
            lin.init(store, rng);
            bn.init(store);
        }
    }

    /// Per-layer node embeddings, each `T x hidden`.
    pub fn forward(&self, sess: &mut Session<'_>, batch: &GraphBatch) -> Result<Vec<Var>> {
        if batch.features.cols() != self.d_in {
            return Err(arg_err!(
                "GCN expects {} input features, batch has {}",
                self.d_in,
                batch.features.cols()
            ));
        }
        let mut c = sess.constant(batch.features.clone());
        let mut out = Vec::with_capacity(self.convs.len());
        for (conv, (lin, bn)) in self.convs.iter().zip(&self.heads) {
            let p = sess.tape.propagate(c, batch.blocks.clone())?;
            let z = conv.forward(sess, p)?;
            let z = sess.tape.relu(z);
            let z = lin.forward(sess, z)?;
            let z = bn.forward(sess, z)?;
            c = sess.tape.relu(z);
            out.push(c);
        }
        Ok(out)
    }
}
