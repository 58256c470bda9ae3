use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use super::config::RunConfig;
use super::report::EvalReport;
use crate::contrastive::{make_batches, pretrain_epoch, EpochLoss, PretrainSetup, TrainState};
use crate::error::{Error, Result};
use crate::graph::{load_tudataset, Graph, GraphDataset};
use crate::model::{stack_images, Model, ENCODER_PREFIXES};
use crate::nn::{Adam, GraphBatch, Mode, ParamStore, Session};
use crate::pimage::{build_epi_tensor, quantize, EpiCache, EpiConfig, EpiTensor};
use crate::rng::{derive_seed, stream};
use crate::tensor::checkpoint::Checkpoint;
use crate::tensor::DenseTensor;

pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const LOSS_FILE: &str = "pretrain_loss.csv";
pub const LOSS_HEADER: &str = "epoch,graph_loss,topo_loss,total_loss";
pub const DATA_ENV: &str = "TOPOTENSOR_DATA";

const TAG_INIT: u64 = 10;
const TAG_FOLDS: u64 = 11;
const TAG_HEAD: u64 = 12;
const TAG_FT_SHUFFLE: u64 = 13;
const TAG_FT_DROPOUT: u64 = 14;

/// `data_root` from the config, then `$TOPOTENSOR_DATA`, then `./data`.
pub fn resolve_data_root(cfg: &RunConfig) -> PathBuf {
    cfg.data_root
        .clone()
        .or_else(|| std::env::var_os(DATA_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("data"))
}

pub fn load_dataset(cfg: &RunConfig) -> Result<GraphDataset> {
    load_tudataset(&resolve_data_root(cfg), &cfg.dataset)
}

fn build_model(cfg: &RunConfig, ds: &GraphDataset) -> Result<Model> {
    Model::new(cfg.model_config(), ds.feature_dim, ds.num_classes.max(2))
}

fn checkpoint_metadata(model: &Model, cfg: &RunConfig) -> String {
    format!("signature={}\nconfig={}\n", model.signature(), cfg.hash())
}

fn signature_of(metadata: &str) -> Option<&str> {
    metadata.lines().find_map(|l| l.strip_prefix("signature="))
}

#[derive(Debug, Clone)]
pub struct PretrainOutcome {
    pub checkpoint: Checkpoint,
    pub losses: Vec<EpochLoss>,
}

/// Contrastive pretraining of the encoders.
pub fn pretrain(cfg: &RunConfig, ds: &GraphDataset) -> Result<PretrainOutcome> {
    cfg.validate()?;
    let model = build_model(cfg, ds)?;
    let mut store = ParamStore::new();
    model.init_encoders(&mut store, &mut stream(cfg.seed, &[TAG_INIT]))?;
    let mut state = TrainState {
        store,
        optimizer: Adam::new(cfg.pretrain_lr),
    };
    let setup = PretrainSetup {
        dataset: ds,
        model: &model,
        views: cfg.augmentations()?,
        epi: cfg.epi_config(),
        sigma: cfg.effective_sigma(),
        weights: cfg.loss_weights(),
        batch_size: cfg.batch,
        seed: cfg.seed,
    };
    let mut losses = Vec::with_capacity(cfg.pretrain_epochs);
    for epoch in 0..cfg.pretrain_epochs {
        let loss = pretrain_epoch(&setup, &mut state, epoch)?;
        log::info!(
            "pretrain epoch {}/{}: graph {:.5} topo {:.5} total {:.5}",
            epoch + 1,
            cfg.pretrain_epochs,
            loss.graph,
            loss.topo,
            loss.total
        );
        losses.push(loss);
    }
    Ok(PretrainOutcome {
        checkpoint: Checkpoint {
            metadata: checkpoint_metadata(&model, cfg),
            store: state.store,
        },
        losses,
    })
}

pub fn loss_csv(losses: &[EpochLoss]) -> String {
    let mut s = format!("{LOSS_HEADER}\n");
    for (i, l) in losses.iter().enumerate() {
        s.push_str(&format!("{},{},{},{}\n", i + 1, l.graph, l.topo, l.total));
    }
    s
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", dir.display()))))
}

/// Pretrain and write `checkpoint.bin` and `pretrain_loss.csv` into `cfg.out`.
pub fn cmd_pretrain(cfg: &RunConfig) -> Result<PretrainOutcome> {
    let ds = load_dataset(cfg)?;
    ensure_dir(&cfg.out)?;
    let outcome = pretrain(cfg, &ds)?;
    outcome.checkpoint.save(&cfg.out.join(CHECKPOINT_FILE))?;
    fs::write(cfg.out.join(LOSS_FILE), loss_csv(&outcome.losses))?;
    Ok(outcome)
}

/// Stratified folds: the test indices of each fold. Depends only on the
/// labels, the dataset name and the seed.
pub fn stratified_folds(labels: &[usize], k: usize, dataset: &str, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k < 2 || labels.len() < k {
        return Err(Error::Config(format!("cannot split {} graphs into {k} folds", labels.len())));
    }
    let name_hash = Sha256::digest(dataset.to_ascii_lowercase().as_bytes());
    let name_key = u64::from_le_bytes(name_hash[..8].try_into().expect("8 bytes"));
    let mut rng = stream(seed, &[TAG_FOLDS, name_key]);
    let classes = labels.iter().max().map_or(0, |m| m + 1);
    let mut folds = vec![Vec::new(); k];
    let mut next = 0;
    for c in 0..classes {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        members.shuffle(&mut rng);
        for i in members {
            folds[next % k].push(i);
            next += 1;
        }
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    Ok(folds)
}

/// Clean image tensors of every graph, optionally through the disk cache.
pub fn original_images(cfg: &RunConfig, ds: &GraphDataset) -> Result<Vec<EpiTensor>> {
    let epi = cfg.epi_config();
    let cache = cfg.epi_cache.as_ref().map(|root| EpiCache::new(root, &ds.name, &epi_key(&epi)));
    ds.graphs
        .par_iter()
        .enumerate()
        .map(|(i, g)| match &cache {
            None => build_epi_tensor(g, &epi),
            Some(cache) => {
                if let Some(t) = cache.load(i)? {
                    return Ok(t);
                }
                let t = quantize(&build_epi_tensor(g, &epi)?);
                cache.store(i, &t)?;
                Ok(t)
            }
        })
        .collect()
}

/// Cache directory name: digest of every image setting.
fn epi_key(epi: &EpiConfig) -> String {
    let d = Sha256::digest(format!("{epi:?}").as_bytes());
    d.iter().take(8).map(|b| format!("{b:02x}")).collect()
}

fn batch_inputs<'a>(
    ds: &'a GraphDataset,
    images: &'a [EpiTensor],
    idx: &[usize],
    tau: usize,
    tda: bool,
) -> Result<(GraphBatch, Option<DenseTensor>)> {
    let graphs: Vec<&Graph> = idx.iter().map(|&i| &ds.graphs[i]).collect();
    let gb = GraphBatch::new(&graphs, tau)?;
    let imgs = if tda {
        let items: Vec<&EpiTensor> = idx.iter().map(|&i| &images[i]).collect();
        Some(stack_images(&items)?)
    } else {
        None
    };
    Ok((gb, imgs))
}

/// Predicted classes of `idx` in inference mode.
pub fn predict(model: &Model, store: &ParamStore, ds: &GraphDataset, images: &[EpiTensor], idx: &[usize]) -> Result<Vec<usize>> {
    let (gb, imgs) = batch_inputs(ds, images, idx, model.config.gcn.tau, model.uses_tda())?;
    let mut sess = Session::new(store, Mode::Eval, 0);
    let x = imgs.map(|t| sess.constant(t));
    let logits = model.logits(&mut sess, &gb, x)?;
    let v = sess.tape.value(logits);
    Ok((0..v.rows())
        .map(|r| {
            v.row(r)
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0)))
                .map_or(0, |(c, _)| c)
        })
        .collect())
}

/// Everything a fold reads besides its index sets.
struct FoldInputs<'a> {
    model: &'a Model,
    pretrained: &'a ParamStore,
    ds: &'a GraphDataset,
    images: &'a [EpiTensor],
    labels: &'a [usize],
}

/// Fine-tune encoders and head on `train`, then score `test`. Returns accuracy in percent.
fn finetune_fold(cfg: &RunConfig, inputs: &FoldInputs<'_>, fold: usize, train: &[usize], test: &[usize]) -> Result<f64> {
    let FoldInputs { model, pretrained, ds, images, labels } = *inputs;
    let mut store = pretrained.clone();
    model.init_head(&mut store, &mut stream(cfg.seed, &[TAG_HEAD, fold as u64]))?;
    let mut adam = Adam::new(cfg.finetune_lr);
    let tau = model.config.gcn.tau;
    for epoch in 0..cfg.finetune_epochs {
        let mut order = train.to_vec();
        order.shuffle(&mut stream(cfg.seed, &[TAG_FT_SHUFFLE, fold as u64, epoch as u64]));
        for (bi, batch) in make_batches(&order, cfg.batch).iter().enumerate() {
            let (gb, imgs) = batch_inputs(ds, images, batch, tau, model.uses_tda())?;
            let seed = derive_seed(cfg.seed, &[TAG_FT_DROPOUT, fold as u64, epoch as u64, bi as u64]);
            let mut sess = Session::new(&store, Mode::Train, seed);
            let x = imgs.map(|t| sess.constant(t));
            let logits = model.logits(&mut sess, &gb, x)?;
            let y: Vec<usize> = batch.iter().map(|&i| labels[i]).collect();
            let loss = sess.tape.cross_entropy(logits, std::rc::Rc::new(y))?;
            let grads = sess.gradients(loss)?;
            let updates = sess.into_buffer_updates();
            adam.step(&mut store, &grads)?;
            store.apply_buffer_updates(updates);
        }
    }
    let pred = predict(model, &store, ds, images, test)?;
    let correct = pred.iter().zip(test).filter(|(p, &i)| **p == labels[i]).count();
    Ok(100.0 * correct as f64 / test.len() as f64)
}

/// Stratified cross-validation starting every fold from the pretrained encoders.
pub fn finetune(cfg: &RunConfig, ds: &GraphDataset, checkpoint: &Checkpoint) -> Result<EvalReport> {
    cfg.validate()?;
    let start = Instant::now();
    let model = build_model(cfg, ds)?;
    match signature_of(&checkpoint.metadata) {
        Some(sig) if sig == model.signature() => {}
        Some(sig) => {
            return Err(Error::Checkpoint(format!(
                "checkpoint was trained for `{sig}` but the configuration builds `{}`",
                model.signature()
            )))
        }
        None => return Err(Error::Checkpoint("checkpoint has no model signature".into())),
    }
    let mut pretrained = ParamStore::new();
    for prefix in ENCODER_PREFIXES {
        pretrained.copy_prefix(&checkpoint.store, prefix);
    }
    let labels = ds.labels()?;
    if ds.num_classes < 2 {
        return Err(Error::Config("classification needs at least two classes".into()));
    }
    let images = if model.uses_tda() {
        original_images(cfg, ds)?
    } else {
        Vec::new()
    };
    let folds = stratified_folds(&labels, cfg.folds, &ds.name, cfg.seed)?;
    let inputs = FoldInputs {
        model: &model,
        pretrained: &pretrained,
        ds,
        images: &images,
        labels: &labels,
    };
    let mut accuracies = Vec::with_capacity(folds.len());
    for (f, test) in folds.iter().enumerate() {
        let train: Vec<usize> = folds
            .iter()
            .enumerate()
            .filter(|(g, _)| *g != f)
            .flat_map(|(_, idx)| idx.iter().copied())
            .collect();
        let acc = finetune_fold(cfg, &inputs, f, &train, test)?;
        log::info!("fold {}/{}: {:.2}%", f + 1, folds.len(), acc);
        accuracies.push(acc);
    }
    Ok(EvalReport::new(cfg, &ds.name, accuracies, start.elapsed().as_secs_f64()))
}

/// Fine-tune from `checkpoint` (default `out/checkpoint.bin`) and write the reports.
pub fn cmd_finetune(cfg: &RunConfig, checkpoint: Option<&Path>) -> Result<EvalReport> {
    let ds = load_dataset(cfg)?;
    let path = checkpoint.map_or_else(|| cfg.out.join(CHECKPOINT_FILE), Path::to_path_buf);
    let ck = Checkpoint::load(&path)?;
    ensure_dir(&cfg.out)?;
    let report = finetune(cfg, &ds, &ck)?;
    report.write(&cfg.out)?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn folds_are_stratified_partitions() {
        let labels: Vec<usize> = (0..43).map(|i| usize::from(i % 3 == 0)).collect();
        let folds = stratified_folds(&labels, 10, "toy", 5).unwrap();
        let mut all: Vec<usize> = folds.concat();
        all.sort_unstable();
        assert_eq!(all, (0..43).collect::<Vec<_>>());
        for f in &folds {
            let ones = f.iter().filter(|&&i| labels[i] == 1).count();
            assert!((1..=2).contains(&ones), "{f:?}");
            assert!((4..=5).contains(&f.len()));
        }
        assert_eq!(folds, stratified_folds(&labels, 10, "TOY", 5).unwrap());
        assert_ne!(folds, stratified_folds(&labels, 10, "toy", 6).unwrap());
        assert_ne!(folds, stratified_folds(&labels, 10, "other", 5).unwrap());
    }

    #[test]
    fn too_few_graphs_for_folds() {
        assert!(stratified_folds(&[0, 1, 0], 10, "x", 0).is_err());
    }

    #[test]
    fn loss_csv_layout() {
        let l = EpochLoss {
            graph: 1.5,
            topo: 0.0,
            total: 1.5,
        };
        assert_eq!(loss_csv(&[l]), "epoch,graph_loss,topo_loss,total_loss\n1,1.5,0,1.5\n");
    }
}
