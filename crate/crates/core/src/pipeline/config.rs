//! Run configuration: flat `key = value` text with command-line overrides.

use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::augment::{pair_for_dataset, Augmentation, AugmentationKind, DEFAULT_RATIO};
use crate::contrastive::LossWeights;
use crate::error::{Error, Result};
use crate::filtration::FiltrationKind;
use crate::model::ModelConfig;
use crate::nn::{CnnConfig, GcnConfig};
use crate::pimage::EpiConfig;
use crate::tensor::{TtlConfig, TtlFormat};

#[derive(Debug, Clone, PartialEq)]
pub struct Ablations {
    /// Ordinary sublevel persistence in place of extended persistence.
    pub ph_only: bool,
    /// Drop the topological channel and its loss term.
    pub disable_tda: bool,
    pub disable_noise: bool,
    /// Flatten and concatenate instead of tensor transformation layers.
    pub disable_ttl: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub dataset: String,
    pub data_root: Option<PathBuf>,
    pub out: PathBuf,
    pub seed: u64,
    pub batch: usize,
    pub pretrain_epochs: usize,
    pub finetune_epochs: usize,
    pub pretrain_lr: f64,
    pub finetune_lr: f64,
    pub folds: usize,
    pub gcn_layers: usize,
    pub gcn_hidden: usize,
    pub gcn_tau: usize,
    pub ttl_format: TtlFormat,
    pub ttl_rank: usize,
    pub ttl_width: usize,
    pub cnn_channels: Vec<usize>,
    pub cnn_kernel: usize,
    pub cnn_stride: usize,
    pub cnn_head: usize,
    pub filtrations: Vec<FiltrationKind>,
    pub resolution: usize,
    pub bandwidth: f64,
    pub sigma: f64,
    pub epi_cache: Option<PathBuf>,
    pub alpha: f64,
    pub beta: f64,
    pub zeta: f64,
    pub include_positive: bool,
    /// `None` means the dataset's entry in the augmentation table.
    pub view1: Option<AugmentationKind>,
    pub view2: Option<AugmentationKind>,
    pub aug_ratio: f64,
    pub mlp_hidden: usize,
    pub dropout: f64,
    pub ablations: Ablations,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dataset: "MUTAG".into(),
            data_root: None,
            out: PathBuf::from("runs"),
            seed: 0,
            batch: 32,
            pretrain_epochs: 50,
            finetune_epochs: 30,
            pretrain_lr: 1e-3,
            finetune_lr: 1e-3,
            folds: 10,
            gcn_layers: 3,
            gcn_hidden: 32,
            gcn_tau: 1,
            ttl_format: TtlFormat::Cp,
            ttl_rank: 32,
            ttl_width: 32,
            cnn_channels: vec![16, 32],
            cnn_kernel: 3,
            cnn_stride: 1,
            cnn_head: 32,
            filtrations: FiltrationKind::ALL.to_vec(),
            resolution: 50,
            bandwidth: 0.05,
            sigma: 1.0,
            epi_cache: None,
            alpha: 1.0,
            beta: 0.3,
            zeta: 0.5,
            include_positive: false,
            view1: None,
            view2: None,
            aug_ratio: DEFAULT_RATIO,
            mlp_hidden: 32,
            dropout: 0.5,
            ablations: Ablations {
                ph_only: false,
                disable_tda: false,
                disable_noise: false,
                disable_ttl: false,
            },
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.to_ascii_lowercase().as_str() {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected a boolean, got {value:?}"))),
    }
}

fn parse_list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse(key, s))
        .collect()
}

fn join<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

fn view_text(v: Option<AugmentationKind>) -> String {
    v.map_or_else(|| "auto".to_string(), |k| k.to_string())
}

impl RunConfig {
    /// Apply one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "dataset" => self.dataset = v.to_string(),
            "data_root" => self.data_root = Some(PathBuf::from(v)),
            "out" => self.out = PathBuf::from(v),
            "seed" => self.seed = parse(key, v)?,
            "batch" => self.batch = parse(key, v)?,
            "pretrain.epochs" => self.pretrain_epochs = parse(key, v)?,
            "finetune.epochs" => self.finetune_epochs = parse(key, v)?,
            "pretrain.lr" => self.pretrain_lr = parse(key, v)?,
            "finetune.lr" => self.finetune_lr = parse(key, v)?,
            "folds" => self.folds = parse(key, v)?,
            "gcn.layers" => self.gcn_layers = parse(key, v)?,
            "gcn.hidden" => self.gcn_hidden = parse(key, v)?,
            "gcn.tau" => self.gcn_tau = parse(key, v)?,
            "ttl.format" => self.ttl_format = v.parse()?,
            "ttl.rank" => self.ttl_rank = parse(key, v)?,
            "ttl.width" => self.ttl_width = parse(key, v)?,
            "cnn.channels" => self.cnn_channels = parse_list(key, v)?,
            "cnn.kernel" => self.cnn_kernel = parse(key, v)?,
            "cnn.stride" => self.cnn_stride = parse(key, v)?,
            "cnn.head" => self.cnn_head = parse(key, v)?,
            "epi.filtrations" => {
                self.filtrations = v.split(',').map(str::trim).filter(|s| !s.is_empty()).map(str::parse).collect::<Result<_>>()?
            }
            "epi.resolution" => self.resolution = parse(key, v)?,
            "epi.bandwidth" => self.bandwidth = parse(key, v)?,
            "epi.sigma" => self.sigma = parse(key, v)?,
            "epi.cache" => self.epi_cache = (!v.is_empty()).then(|| PathBuf::from(v)),
            "loss.alpha" => self.alpha = parse(key, v)?,
            "loss.beta" => self.beta = parse(key, v)?,
            "loss.zeta" => self.zeta = parse(key, v)?,
            "loss.include_positive_in_denominator" => self.include_positive = parse_bool(key, v)?,
            "aug.view1" => self.view1 = if v == "auto" { None } else { Some(v.parse()?) },
            "aug.view2" => self.view2 = if v == "auto" { None } else { Some(v.parse()?) },
            "aug.ratio" => self.aug_ratio = parse(key, v)?,
            "mlp.hidden" => self.mlp_hidden = parse(key, v)?,
            "mlp.dropout" => self.dropout = parse(key, v)?,
            "ablation.ph_only" => self.ablations.ph_only = parse_bool(key, v)?,
            "ablation.disable_tda" => self.ablations.disable_tda = parse_bool(key, v)?,
            "ablation.disable_noise" => self.ablations.disable_noise = parse_bool(key, v)?,
            "ablation.disable_ttl" => self.ablations.disable_ttl = parse_bool(key, v)?,
            other => return Err(Error::Config(format!("unknown configuration key {other:?}"))),
        }
        Ok(())
    }

    /// Apply every setting of a `key = value` text. `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", i + 1)))?;
            self.set(k, v).map_err(|e| Error::Config(format!("line {}: {e}", i + 1)))?;
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::default();
        cfg.apply_text(&text)?;
        Ok(cfg)
    }

    /// Settings that determine results, in canonical order. Paths are left
    /// out so moving data or outputs keeps the hash.
    pub fn canonical_entries(&self) -> Vec<(&'static str, String)> {
        let a = &self.ablations;
        vec![
            ("dataset", self.dataset.clone()),
            ("seed", self.seed.to_string()),
            ("batch", self.batch.to_string()),
            ("pretrain.epochs", self.pretrain_epochs.to_string()),
            ("finetune.epochs", self.finetune_epochs.to_string()),
            ("pretrain.lr", self.pretrain_lr.to_string()),
            ("finetune.lr", self.finetune_lr.to_string()),
            ("folds", self.folds.to_string()),
            ("gcn.layers", self.gcn_layers.to_string()),
            ("gcn.hidden", self.gcn_hidden.to_string()),
            ("gcn.tau", self.gcn_tau.to_string()),
            ("ttl.format", self.ttl_format.to_string()),
            ("ttl.rank", self.ttl_rank.to_string()),
            ("ttl.width", self.ttl_width.to_string()),
            ("cnn.channels", join(&self.cnn_channels)),
            ("cnn.kernel", self.cnn_kernel.to_string()),
            ("cnn.stride", self.cnn_stride.to_string()),
            ("cnn.head", self.cnn_head.to_string()),
            ("epi.filtrations", join(&self.filtrations)),
            ("epi.resolution", self.resolution.to_string()),
            ("epi.bandwidth", self.bandwidth.to_string()),
            ("epi.sigma", self.sigma.to_string()),
            ("loss.alpha", self.alpha.to_string()),
            ("loss.beta", self.beta.to_string()),
            ("loss.zeta", self.zeta.to_string()),
            ("loss.include_positive_in_denominator", self.include_positive.to_string()),
            ("aug.view1", view_text(self.view1)),
            ("aug.view2", view_text(self.view2)),
            ("aug.ratio", self.aug_ratio.to_string()),
            ("mlp.hidden", self.mlp_hidden.to_string()),
            ("mlp.dropout", self.dropout.to_string()),
            ("ablation.ph_only", a.ph_only.to_string()),
            ("ablation.disable_tda", a.disable_tda.to_string()),
            ("ablation.disable_noise", a.disable_noise.to_string()),
            ("ablation.disable_ttl", a.disable_ttl.to_string()),
        ]
    }

    pub fn to_text(&self) -> String {
        self.canonical_entries()
            .into_iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    /// First 16 hex digits of the SHA-256 of the canonical text.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_text().as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.pretrain_epochs == 0 || self.finetune_epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if self.batch < 2 {
            return bad(format!("batch size must be at least 2, got {}", self.batch));
        }
        if self.folds < 2 {
            return bad(format!("need at least 2 folds, got {}", self.folds));
        }
        if self.filtrations.is_empty() {
            return bad("at least one filtration is required".into());
        }
        if self.sigma < 0.0 {
            return bad(format!("noise scale must be non-negative, got {}", self.sigma));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout must be in [0, 1), got {}", self.dropout));
        }
        if self.resolution < self.cnn_kernel {
            return bad(format!("resolution {} is below the kernel size {}", self.resolution, self.cnn_kernel));
        }
        self.loss_weights().validate()?;
        self.augmentations()?;
        Ok(())
    }

    /// A short label naming the active ablations.
    pub fn variant(&self) -> String {
        let a = &self.ablations;
        let parts: Vec<&str> = [
            (a.ph_only, "ph-only"),
            (a.disable_tda, "no-tda"),
            (a.disable_noise, "no-noise"),
            (a.disable_ttl, "no-ttl"),
        ]
        .iter()
        .filter(|(on, _)| *on)
        .map(|&(_, name)| name)
        .collect();
        if parts.is_empty() {
            "full".into()
        } else {
            parts.join("+")
        }
    }

    pub fn loss_weights(&self) -> LossWeights {
        LossWeights {
            alpha: self.alpha,
            beta: if self.ablations.disable_tda { 0.0 } else { self.beta },
            zeta: self.zeta,
            include_positive: self.include_positive,
        }
    }

    pub fn effective_sigma(&self) -> f64 {
        if self.ablations.disable_noise {
            0.0
        } else {
            self.sigma
        }
    }

    pub fn augmentations(&self) -> Result<(Augmentation, Augmentation)> {
        let (d1, d2) = pair_for_dataset(&self.dataset);
        Ok((
            Augmentation::new(self.view1.unwrap_or(d1), self.aug_ratio)?,
            Augmentation::new(self.view2.unwrap_or(d2), self.aug_ratio)?,
        ))
    }

    pub fn epi_config(&self) -> EpiConfig {
        EpiConfig {
            kinds: self.filtrations.clone(),
            resolution: self.resolution,
            bandwidth: self.bandwidth,
            sublevel_only: self.ablations.ph_only,
        }
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            gcn: GcnConfig {
                layers: self.gcn_layers,
                hidden: self.gcn_hidden,
                tau: self.gcn_tau,
            },
            cnn: CnnConfig {
                channels: self.cnn_channels.clone(),
                kernel: self.cnn_kernel,
                stride: self.cnn_stride,
                head_width: self.cnn_head,
            },
            ttl: TtlConfig {
                format: self.ttl_format,
                rank: self.ttl_rank,
                widths: vec![self.ttl_width],
                relu: true,
            },
            filtrations: self.filtrations.len(),
            use_tda: !self.ablations.disable_tda,
            use_ttl: !self.ablations.disable_ttl,
            mlp_hidden: self.mlp_hidden,
            dropout: self.dropout,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip_preserves_hash() {
        let mut cfg = RunConfig::default();
        cfg.apply_text("seed = 7\nttl.format = tucker # comment\n\naug.view1 = Subgraph\n").unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.ttl_format, TtlFormat::Tucker);
        let mut again = RunConfig::default();
        again.apply_text(&cfg.to_text()).unwrap();
        assert_eq!(again, cfg);
        assert_eq!(again.hash(), cfg.hash());
        assert_eq!(cfg.hash().len(), 16);
    }

    #[test]
    fn hash_ignores_paths_but_not_settings() {
        let a = RunConfig::default();
        let mut b = a.clone();
        b.out = PathBuf::from("elsewhere");
        b.data_root = Some(PathBuf::from("/data"));
        assert_eq!(a.hash(), b.hash());
        b.seed = 1;
        assert_ne!(a.hash(), b.hash());
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        let mut cfg = RunConfig::default();
        assert!(cfg.apply_text("nope = 1").is_err());
        assert!(cfg.apply_text("seed = x").is_err());
        assert!(cfg.apply_text("seed").is_err());
        cfg.batch = 1;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn ablations_map_to_subsystems() {
        let mut cfg = RunConfig::default();
        assert_eq!(cfg.variant(), "full");
        cfg.ablations.disable_tda = true;
        cfg.ablations.disable_noise = true;
        assert_eq!(cfg.loss_weights().beta, 0.0);
        assert_eq!(cfg.effective_sigma(), 0.0);
        assert!(!cfg.model_config().use_tda);
        assert_eq!(cfg.variant(), "no-tda+no-noise");
        cfg.ablations.ph_only = true;
        assert!(cfg.epi_config().sublevel_only);
    }

    #[test]
    fn default_views_follow_dataset() {
        let cfg = RunConfig {
            dataset: "DHFR".into(),
            ..RunConfig::default()
        };
        let (a, b) = cfg.augmentations().unwrap();
        assert_eq!((a.kind(), b.kind()), (AugmentationKind::EdgePert, AugmentationKind::Identical));
    }
}
