//! Contrastive losses and the pretraining epoch.

use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::augment::Augmentation;
use crate::autodiff::{Tape, Var};
use crate::error::{arg_err, shape_err, Error, Result};
use crate::graph::{Graph, GraphDataset};
use crate::model::{stack_images, Model};
use crate::nn::{Adam, GraphBatch, Mode, ParamStore, Session};
use crate::pimage::{build_epi_tensor, inject_noise, EpiConfig, EpiTensor};
use crate::rng::{derive_seed, stream};
use crate::tensor::DenseTensor;

/// Lower bound on vector norms inside cosine similarity.
pub const NORM_FLOOR: f64 = 1e-12;

pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(shape_err!("cosine similarity of lengths {} and {}", a.len(), b.len()));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(NORM_FLOOR);
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt().max(NORM_FLOOR);
    Ok(dot / (na * nb))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Channel {
    Graph,
    Topological,
}

/// Embeddings of the two views of `N` graphs; row `n` of each belongs to graph `n`.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewBatch {
    pub view1: DenseTensor,
    pub view2: DenseTensor,
    pub channel: Channel,
}

impl ViewBatch {
    pub fn new(view1: DenseTensor, view2: DenseTensor, channel: Channel) -> Result<Self> {
        if view1.ndim() != 2 || view1.shape() != view2.shape() {
            return Err(shape_err!("views must be equal matrices: {:?} vs {:?}", view1.shape(), view2.shape()));
        }
        Ok(Self { view1, view2, channel })
    }

    pub fn len(&self) -> usize {
        self.view1.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    /// Temperature.
    pub zeta: f64,
    /// Keep the positive pair in the denominator (the classic form).
    pub include_positive: bool,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 0.3,
            zeta: 0.5,
            include_positive: false,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.beta >= 0.0) {
            return Err(Error::Config("loss weights must be non-negative".into()));
        }
        if !(self.zeta > 0.0) {
            return Err(Error::Config(format!("temperature must be positive, got {}", self.zeta)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NtXentOutput {
    pub loss: f64,
    pub grad_view1: DenseTensor,
    pub grad_view2: DenseTensor,
}

/// Contrastive loss of a view batch and its gradient with respect to both views.
pub fn nt_xent(batch: &ViewBatch, zeta: f64, include_positive: bool) -> Result<NtXentOutput> {
    let mut tape = Tape::new();
    let a = tape.leaf(batch.view1.clone());
    let b = tape.leaf(batch.view2.clone());
    let loss = tape.nt_xent(a, b, zeta, include_positive)?;
    let mut g = tape.backward(loss)?;
    Ok(NtXentOutput {
        loss: tape.value(loss).item(),
        grad_view1: g.take(a).expect("leaf gradient"),
        grad_view2: g.take(b).expect("leaf gradient"),
    })
}

/// `alpha * graph_loss + beta * topo_loss`; a missing topological batch counts as zero.
pub fn combined_loss(graph: &ViewBatch, topo: Option<&ViewBatch>, w: &LossWeights) -> Result<f64> {
    w.validate()?;
    let lg = nt_xent(graph, w.zeta, w.include_positive)?.loss;
    let lt = match topo {
        Some(t) => nt_xent(t, w.zeta, w.include_positive)?.loss,
        None => 0.0,
    };
    Ok(w.alpha * lg + w.beta * lt)
}

/// Tape form of [`combined_loss`] over already computed channel losses.
pub fn combined_loss_var(tape: &mut Tape, graph_loss: Var, topo_loss: Option<Var>, w: &LossWeights) -> Result<Var> {
    let g = tape.scale(graph_loss, w.alpha);
    match topo_loss {
        Some(t) => {
            let t = tape.scale(t, w.beta);
            tape.add(g, t)
        }
        None => Ok(g),
    }
}

/// Rows `start..start+len` of an `R x C` variable, as a matmul with a selection matrix.
pub fn select_rows(tape: &mut Tape, x: Var, start: usize, len: usize) -> Result<Var> {
    let rows = tape.shape(x)[0];
    if start + len > rows {
        return Err(shape_err!("rows {}..{} out of {}", start, start + len, rows));
    }
    let sel = DenseTensor::from_fn(&[len, rows], |i| if i[1] == start + i[0] { 1.0 } else { 0.0 });
    let s = tape.constant(sel);
    tape.matmul(s, x)
}

/// Parameters and optimizer carried across epochs.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub store: ParamStore,
    pub optimizer: Adam,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLoss {
    pub graph: f64,
    pub topo: f64,
    pub total: f64,
}

/// Everything one pretraining epoch needs besides the mutable state.
#[derive(Debug, Clone)]
pub struct PretrainSetup<'a> {
    pub dataset: &'a GraphDataset,
    pub model: &'a Model,
    pub views: (Augmentation, Augmentation),
    /// Image settings; ignored when the model has no topological channel.
    pub epi: EpiConfig,
    pub sigma: f64,
    pub weights: LossWeights,
    pub batch_size: usize,
    pub seed: u64,
}

// Stream tags for `derive_seed`.
pub(crate) const TAG_SHUFFLE: u64 = 1;
pub(crate) const TAG_AUGMENT: u64 = 2;
pub(crate) const TAG_NOISE: u64 = 3;
pub(crate) const TAG_DROPOUT: u64 = 4;

/// Split `order` into batches of `size`, folding a trailing single graph into
/// the previous batch so every batch has negatives and batch statistics.
pub fn make_batches(order: &[usize], size: usize) -> Vec<Vec<usize>> {
    let mut batches: Vec<Vec<usize>> = order.chunks(size.max(2)).map(<[usize]>::to_vec).collect();
    if batches.len() > 1 && batches.last().is_some_and(|b| b.len() == 1) {
        let last = batches.pop().expect("nonempty");
        batches.last_mut().expect("nonempty").extend(last);
    }
    batches
}

struct ViewPair {
    graphs: [Graph; 2],
    images: Option<[EpiTensor; 2]>,
}

fn make_views(setup: &PretrainSetup<'_>, epoch: usize, order: &[usize]) -> Result<Vec<ViewPair>> {
    let tda = setup.model.uses_tda();
    order
        .par_iter()
        .map(|&i| {
            let g = &setup.dataset.graphs[i];
            let path = |tag: u64, v: u64| [tag, epoch as u64, i as u64, v];
            let augs = [setup.views.0, setup.views.1];
            let graphs = [0u64, 1].map(|v| augs[v as usize].apply(g, &mut stream(setup.seed, &path(TAG_AUGMENT, v))));
            let images = if tda {
                let mut out = Vec::with_capacity(2);
                for (v, view) in graphs.iter().enumerate() {
                    let clean = build_epi_tensor(view, &setup.epi)?;
                    out.push(inject_noise(&clean, setup.sigma, &mut stream(setup.seed, &path(TAG_NOISE, v as u64)))?);
                }
                let [a, b]: [EpiTensor; 2] = out.try_into().map_err(|_| arg_err!("two views"))?;
                Some([a, b])
            } else {
                None
            };
            Ok(ViewPair { graphs, images })
        })
        .collect()
}

/// One pass over the dataset: augment, encode both views through both
/// channels, take an Adam step on the combined loss per batch. Returns the
/// batch-mean losses.
pub fn pretrain_epoch(setup: &PretrainSetup<'_>, state: &mut TrainState, epoch: usize) -> Result<EpochLoss> {
    setup.weights.validate()?;
    let n = setup.dataset.len();
    if n < 2 {
        return Err(arg_err!("contrastive pretraining needs at least two graphs"));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut stream(setup.seed, &[TAG_SHUFFLE, epoch as u64]));
    let views = make_views(setup, epoch, &order)?;
    let position: Vec<usize> = {
        let mut p = vec![0; n];
        for (k, &i) in order.iter().enumerate() {
            p[i] = k;
        }
        p
    };
    let tau = setup.model.config.gcn.tau;
    let batches = make_batches(&order, setup.batch_size);
    let mut sum = EpochLoss {
        graph: 0.0,
        topo: 0.0,
        total: 0.0,
    };
    for (bi, batch) in batches.iter().enumerate() {
        let pairs: Vec<&ViewPair> = batch.iter().map(|&i| &views[position[i]]).collect();
        let b = pairs.len();
        let graphs: Vec<&Graph> = (0..2).flat_map(|v| pairs.iter().map(move |p| &p.graphs[v])).collect();
        let gb = GraphBatch::new(&graphs, tau)?;
        let dropout_seed = derive_seed(setup.seed, &[TAG_DROPOUT, epoch as u64, bi as u64]);
        let mut sess = Session::new(&state.store, Mode::Train, dropout_seed);

        let z = setup.model.encode_graph(&mut sess, &gb)?;
        let z1 = select_rows(&mut sess.tape, z, 0, b)?;
        let z2 = select_rows(&mut sess.tape, z, b, b)?;
        let lg = sess.tape.nt_xent(z1, z2, setup.weights.zeta, setup.weights.include_positive)?;
        let lt = if setup.model.uses_tda() {
            let imgs: Vec<&EpiTensor> = (0..2)
                .flat_map(|v| pairs.iter().map(move |p| &p.images.as_ref().expect("images built")[v]))
                .collect();
            let x = sess.constant(stack_images(&imgs)?);
            let t = setup.model.encode_topo(&mut sess, x)?;
            let t1 = select_rows(&mut sess.tape, t, 0, b)?;
            let t2 = select_rows(&mut sess.tape, t, b, b)?;
            Some(sess.tape.nt_xent(t1, t2, setup.weights.zeta, setup.weights.include_positive)?)
        } else {
            None
        };
        let total = combined_loss_var(&mut sess.tape, lg, lt, &setup.weights)?;

        sum.graph += sess.tape.value(lg).item();
        sum.topo += lt.map_or(0.0, |v| sess.tape.value(v).item());
        sum.total += sess.tape.value(total).item();
        let grads = sess.gradients(total)?;
        let updates = sess.into_buffer_updates();
        state.optimizer.step(&mut state.store, &grads)?;
        state.store.apply_buffer_updates(updates);
    }
    let k = batches.len() as f64;
    Ok(EpochLoss {
        graph: sum.graph / k,
        topo: sum.topo / k,
        total: sum.total / k,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn batch(a: Vec<Vec<f64>>, b: Vec<Vec<f64>>) -> ViewBatch {
        ViewBatch::new(
            DenseTensor::from_rows(&a).unwrap(),
            DenseTensor::from_rows(&b).unwrap(),
            Channel::Graph,
        )
        .unwrap()
    }

    #[test]
    fn cosine_examples() {
        assert!((cosine_similarity(&[1.0, 2.0], &[1.0, 2.0]).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert!((cosine_similarity(&[1.0, -3.0], &[-1.0, 3.0]).unwrap() + 1.0).abs() < 1e-15);
        assert_eq!(cosine_similarity(&[0.0, 0.0], &[1.0, 1.0]).unwrap(), 0.0);
        assert!(cosine_similarity(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn two_anchor_closed_form() {
        // positives identical, every negative orthogonal
        let vb = batch(vec![vec![1.0, 0.0], vec![0.0, 1.0]], vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        let out = nt_xent(&vb, 1.0, false).unwrap();
        assert!((out.loss - (2f64.ln() - 1.0)).abs() < 1e-12);
    }

    #[test]
    fn single_pair_has_no_negatives() {
        let vb = batch(vec![vec![1.0]], vec![vec![1.0]]);
        assert!(nt_xent(&vb, 0.5, false).is_err());
    }

    #[test]
    fn beta_zero_and_alpha_zero() {
        let g = batch(vec![vec![1.0, 0.2], vec![0.3, 1.0]], vec![vec![0.9, 0.1], vec![0.1, 1.0]]);
        let t = batch(vec![vec![0.5, 1.0], vec![1.0, 0.1]], vec![vec![0.2, 1.0], vec![1.0, 0.7]]);
        let lg = nt_xent(&g, 0.5, false).unwrap().loss;
        let lt = nt_xent(&t, 0.5, false).unwrap().loss;
        let w = LossWeights {
            beta: 0.0,
            ..LossWeights::default()
        };
        assert_eq!(combined_loss(&g, Some(&t), &w).unwrap(), lg);
        let w = LossWeights {
            alpha: 0.0,
            beta: 1.0,
            ..LossWeights::default()
        };
        assert_eq!(combined_loss(&g, Some(&t), &w).unwrap(), lt);
        let d = LossWeights::default();
        assert!((combined_loss(&g, Some(&t), &d).unwrap() - (lg + 0.3 * lt)).abs() < 1e-15);
    }

    #[test]
    fn batches_fold_trailing_singleton() {
        let order: Vec<usize> = (0..9).collect();
        let b = make_batches(&order, 4);
        assert_eq!(b.iter().map(Vec::len).collect::<Vec<_>>(), vec![4, 5]);
        assert_eq!(make_batches(&order, 3).len(), 3);
    }

    #[test]
    fn select_rows_picks_block() {
        let mut tape = Tape::new();
        let x = tape.leaf(DenseTensor::from_fn(&[4, 2], |i| (i[0] * 2 + i[1]) as f64));
        let y = select_rows(&mut tape, x, 2, 2).unwrap();
        assert_eq!(tape.value(y).data(), &[4.0, 5.0, 6.0, 7.0]);
    }
}
