//! Two-channel model: a GCN graph encoder, a CNN encoder for image tensors,
//! tensor transformation layers on both, and a fused classifier.
//!
//! Parameter names are prefixed by component: `gcn`, `graph_ttl`, `cnn` and
//! `topo_ttl` form the pretrained encoders; `fusion_ttl` and `mlp` form the
//! classification head that fine-tuning initializes per fold.

use rand::Rng;

use crate::autodiff::Var;
use crate::error::{arg_err, Result};
use crate::nn::{Cnn, CnnConfig, Gcn, GcnConfig, GraphBatch, Mlp, ParamStore, Session};
use crate::pimage::{EpiTensor, IMAGES_PER_FILTRATION};
use crate::tensor::{DenseTensor, Ttl, TtlConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub gcn: GcnConfig,
    pub cnn: CnnConfig,
    pub ttl: TtlConfig,
    /// Number of filtrations `K` in the image tensor.
    pub filtrations: usize,
    pub use_tda: bool,
    pub use_ttl: bool,
    pub mlp_hidden: usize,
    pub dropout: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            gcn: GcnConfig::default(),
            cnn: CnnConfig::default(),
            ttl: TtlConfig::default(),
            filtrations: 4,
            use_tda: true,
            use_ttl: true,
            mlp_hidden: 32,
            dropout: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub feature_dim: usize,
    pub num_classes: usize,
    gcn: Gcn,
    graph_ttl: Option<Ttl>,
    cnn: Option<Cnn>,
    topo_ttl: Option<Ttl>,
    fusion_ttl: Option<Ttl>,
    mlp: Mlp,
}

pub const ENCODER_PREFIXES: [&str; 4] = ["gcn.", "graph_ttl.", "cnn.", "topo_ttl."];

impl Model {
    pub fn new(config: ModelConfig, feature_dim: usize, num_classes: usize) -> Result<Self> {
        if feature_dim == 0 {
            return Err(arg_err!("graphs need at least one node feature"));
        }
        let gcn = Gcn::new("gcn", feature_dim, config.gcn.clone())?;
        let (l, d) = (config.gcn.layers, config.gcn.hidden);
        let graph_ttl = config
            .use_ttl
            .then(|| Ttl::new("graph_ttl", &[l, d], config.ttl.clone()))
            .transpose()?;
        let graph_width = graph_ttl.as_ref().map_or(l * d, Ttl::output_width);

        let (cnn, topo_ttl) = if config.use_tda {
            let cnn = Cnn::new("cnn", config.filtrations, IMAGES_PER_FILTRATION, config.cnn.clone())?;
            let ttl = config
                .use_ttl
                .then(|| Ttl::new("topo_ttl", &[cnn.output_width()], config.ttl.clone()))
                .transpose()?;
            (Some(cnn), ttl)
        } else {
            (None, None)
        };
        let topo_width = match (&cnn, &topo_ttl) {
            (_, Some(t)) => t.output_width(),
            (Some(c), None) => c.output_width(),
            _ => 0,
        };

        let fusion_ttl = if config.use_ttl {
            if config.use_tda && topo_width != graph_width {
                return Err(arg_err!("channel widths {graph_width} and {topo_width} must agree for fusion"));
            }
            let channels = if config.use_tda { 2 } else { 1 };
            Some(Ttl::new("fusion_ttl", &[channels, graph_width], config.ttl.clone())?)
        } else {
            None
        };
        let head_in = fusion_ttl.as_ref().map_or(graph_width + topo_width, Ttl::output_width);
        let mlp = Mlp::new("mlp", head_in, config.mlp_hidden, num_classes, config.dropout);
        Ok(Self {
            config,
            feature_dim,
            num_classes,
            gcn,
            graph_ttl,
            cnn,
            topo_ttl,
            fusion_ttl,
            mlp,
        })
    }

    /// Text that must match between a checkpoint and the model loading it.
    pub fn signature(&self) -> String {
        let c = &self.config;
        format!(
            "features={} gcn={}x{}^{} ttl={}:{}:{:?} cnn={:?}:{}:{}:{} K={} tda={} use_ttl={}",
            self.feature_dim,
            c.gcn.layers,
            c.gcn.hidden,
            c.gcn.tau,
            c.ttl.format,
            c.ttl.rank,
            c.ttl.widths,
            c.cnn.channels,
            c.cnn.kernel,
            c.cnn.stride,
            c.cnn.head_width,
            c.filtrations,
            c.use_tda,
            c.use_ttl,
        )
    }

    pub fn init_encoders(&self, store: &mut ParamStore, rng: &mut impl Rng) -> Result<()> {
        self.gcn.init(store, rng);
        if let Some(t) = &self.graph_ttl {
            t.init(store, rng)?;
        }
        if let Some(c) = &self.cnn {
            c.init(store, rng);
        }
        if let Some(t) = &self.topo_ttl {
            t.init(store, rng)?;
        }
        Ok(())
    }

    pub fn init_head(&self, store: &mut ParamStore, rng: &mut impl Rng) -> Result<()> {
        if let Some(t) = &self.fusion_ttl {
            t.init(store, rng)?;
        }
        self.mlp.init(store, rng);
        Ok(())
    }

    pub fn uses_tda(&self) -> bool {
        self.cnn.is_some()
    }

    /// Graph-channel embeddings, one row per graph of the batch.
    pub fn encode_graph(&self, sess: &mut Session<'_>, batch: &GraphBatch) -> Result<Var> {
        let layers = self.gcn.forward(sess, batch)?;
        let stacked = sess.tape.stack(&layers, 1)?;
        let pooled = sess.tape.segment_sum(stacked, batch.segments.clone())?;
        match &self.graph_ttl {
            Some(t) => t.forward(sess, pooled),
            None => {
                let b = sess.tape.shape(pooled)[0];
                sess.tape.reshape(pooled, &[b, self.config.gcn.layers * self.config.gcn.hidden])
            }
        }
    }

    /// Topological-channel embeddings of a `B x (K*M) x P x P` image stack.
    pub fn encode_topo(&self, sess: &mut Session<'_>, images: Var) -> Result<Var> {
        let cnn = self
            .cnn
            .as_ref()
            .ok_or_else(|| arg_err!("topological channel is disabled"))?;
        let h = cnn.forward(sess, images)?;
        match &self.topo_ttl {
            Some(t) => t.forward(sess, h),
            None => Ok(h),
        }
    }

    /// `B x classes` logits from both channels.
    pub fn logits(&self, sess: &mut Session<'_>, batch: &GraphBatch, images: Option<Var>) -> Result<Var> {
        let g = self.encode_graph(sess, batch)?;
        let t = match (self.uses_tda(), images) {
            (true, Some(x)) => Some(self.encode_topo(sess, x)?),
            (true, None) => return Err(arg_err!("image tensors are required when the topological channel is on")),
            (false, _) => None,
        };
        let fused = match (&self.fusion_ttl, t) {
            (Some(ttl), t) => {
                let parts: Vec<Var> = std::iter::once(g).chain(t).collect();
                let x = sess.tape.stack(&parts, 1)?;
                ttl.forward(sess, x)?
            }
            (None, Some(t)) => sess.tape.concat_last(&[g, t])?,
            (None, None) => g,
        };
        self.mlp.forward(sess, fused)
    }
}

/// Stack per-graph `K x M x P x P` tensors into `B x (K*M) x P x P`.
pub fn stack_images(items: &[&EpiTensor]) -> Result<DenseTensor> {
    let first = items.first().ok_or_else(|| arg_err!("empty image batch"))?.shape().to_vec();
    let mut data = Vec::with_capacity(items.len() * items[0].data.len());
    for t in items {
        if t.shape() != first.as_slice() {
            return Err(arg_err!("image tensors differ in shape: {:?} vs {:?}", first, t.shape()));
        }
        data.extend_from_slice(t.data.data());
    }
    DenseTensor::new(vec![items.len(), first[0] * first[1], first[2], first[3]], data)
}
