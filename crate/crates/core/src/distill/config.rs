//! Training configuration, the line-oriented config file format, and the
//! ablation switches.

use super::{DistillError, ReconKind};
use crate::dataio::PairMode;
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::path::Path;

/// Where the training flow targets come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FlowSource {
    /// Exact analytic flow from the scene parameters.
    Oracle,
    /// Oracle flow passed through the corruption model.
    Corrupted,
    /// `flow_%03d_%03d.flo` files next to the sequence frames.
    FloDir,
}

impl FlowSource {
    pub fn as_str(&self) -> &'static str {
        match self {
            FlowSource::Oracle => "oracle",
            FlowSource::Corrupted => "corrupted",
            FlowSource::FloDir => "flo-dir",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    // loss and solver
    pub lambda: f32,
    pub sigma: f32,
    pub gamma: f32,
    pub recon: ReconKind,
    pub use_grad_loss: bool,
    pub naive: bool,
    pub naive_lr: f32,
    // model
    pub feature_dim: usize,
    pub hidden: usize,
    pub enc_dim: usize,
    pub patch: usize,
    pub encoder_seed: u64,
    pub ema_momentum: f32,
    // schedule
    pub batch_size: usize,
    pub crop_size: usize,
    pub min_overlap: f32,
    pub pair_mode: PairMode,
    pub epochs: usize,
    pub lr: f32,
    pub seed: u64,
    pub checkpoint_every: usize,
    // flow targets
    pub flow_source: FlowSource,
    pub corrupt_sigma: f32,
    pub corrupt_fraction: f32,
    pub corrupt_patch: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda: 0.1,
            sigma: 0.1,
            gamma: 1.0,
            recon: ReconKind::L1,
            use_grad_loss: true,
            naive: false,
            naive_lr: 0.01,
            feature_dim: 128,
            hidden: 64,
            enc_dim: 64,
            patch: 8,
            encoder_seed: 7,
            ema_momentum: 0.99,
            batch_size: 16,
            crop_size: 64,
            min_overlap: 0.25,
            pair_mode: PairMode::Window(5),
            epochs: 4,
            lr: 1e-4,
            seed: 0,
            checkpoint_every: 0,
            flow_source: FlowSource::Oracle,
            corrupt_sigma: 0.0,
            corrupt_fraction: 0.0,
            corrupt_patch: 8,
        }
    }
}

/// Table 3 style configuration switches.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Ablation {
    None,
    /// Single shared linear map fitted by SGD instead of per-sample ridge.
    Naive,
    /// γ = 1e-3.
    GammaSmall,
    /// Drop the gradient-matching terms.
    NoGrad,
    /// L2 reconstruction instead of L1.
    L2,
    /// λ = 0 (no reconstruction term).
    NoL1,
    /// Temporal window of 9 frames.
    Window9,
    /// Only sample the immediate next frame.
    NextFrame,
}

impl Ablation {
    pub fn parse(s: &str) -> Result<Ablation, DistillError> {
        Ok(match s {
            "none" => Ablation::None,
            "naive" => Ablation::Naive,
            "gamma-small" => Ablation::GammaSmall,
            "no-grad" => Ablation::NoGrad,
            "l2" => Ablation::L2,
            "no-l1" => Ablation::NoL1,
            "window9" => Ablation::Window9,
            "next-frame" => Ablation::NextFrame,
            other => {
                return Err(DistillError::Config(format!("unknown ablation {other:?}")));
            }
        })
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Ablation::None => "none",
            Ablation::Naive => "naive",
            Ablation::GammaSmall => "gamma-small",
            Ablation::NoGrad => "no-grad",
            Ablation::L2 => "l2",
            Ablation::NoL1 => "no-l1",
            Ablation::Window9 => "window9",
            Ablation::NextFrame => "next-frame",
        }
    }
}

impl TrainConfig {
    pub fn apply_ablation(&mut self, ablation: Ablation) {
        match ablation {
            Ablation::None => {}
            Ablation::Naive => self.naive = true,
            Ablation::GammaSmall => self.gamma = 1e-3,
            Ablation::NoGrad => self.use_grad_loss = false,
            Ablation::L2 => self.recon = ReconKind::L2,
            Ablation::NoL1 => self.lambda = 0.0,
            Ablation::Window9 => self.pair_mode = PairMode::Window(9),
            Ablation::NextFrame => self.pair_mode = PairMode::NextFrame,
        }
    }

    pub fn validate(&self) -> Result<(), DistillError> {
        let err = |msg: String| Err(DistillError::Config(msg));
        if self.gamma < 0.0 || self.sigma <= 0.0 || self.lambda < 0.0 {
            return err(format!(
                "hyperparameters out of range: lambda {} sigma {} gamma {}",
                self.lambda, self.sigma, self.gamma
            ));
        }
        if self.crop_size == 0 || self.crop_size % self.patch != 0 {
            return err(format!(
                "crop_size {} must be a positive multiple of patch {}",
                self.crop_size, self.patch
            ));
        }
        if self.batch_size == 0 {
            return err("batch_size must be positive".into());
        }
        if self.enc_dim == 0 || self.enc_dim > 3 * self.patch * self.patch {
            return err(format!(
                "enc_dim {} outside (0, {}]",
                self.enc_dim,
                3 * self.patch * self.patch
            ));
        }
        if self.feature_dim == 0 || self.hidden == 0 {
            return err("model dims must be positive".into());
        }
        if !(0.0..1.0).contains(&self.ema_momentum) {
            return err(format!("ema_momentum {} outside [0, 1)", self.ema_momentum));
        }
        if let PairMode::Window(w) = self.pair_mode {
            if w == 0 {
                return err("temporal window must be at least 1".into());
            }
        }
        if !(0.0..=0.5).contains(&self.corrupt_fraction) {
            return err("outlier_fraction outside [0, 0.5]".into());
        }
        Ok(())
    }

    /// Canonical key = value rendering, used for manifests and hashing.
    pub fn manifest_lines(&self) -> Vec<(String, String)> {
        let kv = |k: &str, v: String| (format!("cfg_{k}"), v);
        let (window, next_frame) = match self.pair_mode {
            PairMode::Window(w) => (w, false),
            PairMode::NextFrame => (1, true),
        };
        vec![
            kv("lambda", self.lambda.to_string()),
            kv("sigma", self.sigma.to_string()),
            kv("gamma", self.gamma.to_string()),
            kv(
                "recon",
                match self.recon {
                    ReconKind::L1 => "l1".into(),
                    ReconKind::L2 => "l2".into(),
                },
            ),
            kv("use_grad_loss", self.use_grad_loss.to_string()),
            kv("naive", self.naive.to_string()),
            kv("naive_lr", self.naive_lr.to_string()),
            kv("feature_dim", self.feature_dim.to_string()),
            kv("hidden", self.hidden.to_string()),
            kv("enc_dim", self.enc_dim.to_string()),
            kv("patch", self.patch.to_string()),
            kv("encoder_seed", self.encoder_seed.to_string()),
            kv("ema_momentum", self.ema_momentum.to_string()),
            kv("batch_size", self.batch_size.to_string()),
            kv("crop_size", self.crop_size.to_string()),
            kv("min_overlap", self.min_overlap.to_string()),
            kv("temporal_window", window.to_string()),
            kv("next_frame_only", next_frame.to_string()),
            kv("epochs", self.epochs.to_string()),
            kv("lr", self.lr.to_string()),
            kv("seed", self.seed.to_string()),
            kv("checkpoint_every", self.checkpoint_every.to_string()),
            kv("flow_source", self.flow_source.as_str().to_string()),
            kv("corrupt_sigma", self.corrupt_sigma.to_string()),
            kv("corrupt_fraction", self.corrupt_fraction.to_string()),
            kv("corrupt_patch", self.corrupt_patch.to_string()),
        ]
    }

    /// Hash of the resolved configuration; resume refuses a mismatch.
    pub fn content_hash(&self) -> String {
        let mut hasher = Sha256::new();
        for (k, v) in self.manifest_lines() {
            hasher.update(k.as_bytes());
            hasher.update(b"=");
            hasher.update(v.as_bytes());
            hasher.update(b"\n");
        }
        let digest = hasher.finalize();
        digest.iter().take(16).map(|b| format!("{b:02x}")).collect()
    }

    /// Apply `[encoder]`, `[decoder]`, `[train]` and `[corrupt]` sections
    /// from a parsed config file on top of the current values.
    pub fn apply_config_file(&mut self, file: &ConfigFile) -> Result<(), DistillError> {
        if let Some(v) = file.get_u64("encoder", "seed")? {
            self.encoder_seed = v;
        }
        if let Some(v) = file.get_usize("encoder", "patch")? {
            self.patch = v;
        }
        if let Some(v) = file.get_usize("encoder", "dim")? {
            self.enc_dim = v;
        }
        if let Some(v) = file.get_usize("decoder", "hidden")? {
            self.hidden = v;
        }
        if let Some(v) = file.get_usize("decoder", "feature_dim")? {
            self.feature_dim = v;
        }
        if let Some(v) = file.get_f32("decoder", "ema_momentum")? {
            self.ema_momentum = v;
        }
        if let Some(v) = file.get_f32("train", "lambda")? {
            self.lambda = v;
        }
        if let Some(v) = file.get_f32("train", "sigma")? {
            self.sigma = v;
        }
        if let Some(v) = file.get_f32("train", "gamma")? {
            self.gamma = v;
        }
        if let Some(v) = file.get_f32("train", "lr")? {
            self.lr = v;
        }
        if let Some(v) = file.get_f32("train", "naive_lr")? {
            self.naive_lr = v;
        }
        if let Some(v) = file.get_usize("train", "batch_size")? {
            self.batch_size = v;
        }
        if let Some(v) = file.get_usize("train", "crop_size")? {
            self.crop_size = v;
        }
        if let Some(v) = file.get_f32("train", "min_overlap")? {
            self.min_overlap = v;
        }
        if let Some(v) = file.get_usize("train", "temporal_window")? {
            self.pair_mode = PairMode::Window(v);
        }
        if let Some(v) = file.get_bool("train", "next_frame_only")? {
            if v {
                self.pair_mode = PairMode::NextFrame;
            }
        }
        if let Some(v) = file.get_usize("train", "epochs")? {
            self.epochs = v;
        }
        if let Some(v) = file.get_u64("train", "seed")? {
            self.seed = v;
        }
        if let Some(v) = file.get_usize("train", "checkpoint_every")? {
            self.checkpoint_every = v;
        }
        if let Some(v) = file.get_f32("corrupt", "gaussian_sigma")? {
            self.corrupt_sigma = v;
        }
        if let Some(v) = file.get_f32("corrupt", "outlier_fraction")? {
            self.corrupt_fraction = v;
        }
        if let Some(v) = file.get_usize("corrupt", "outlier_patch")? {
            self.corrupt_patch = v;
        }
        Ok(())
    }
}

/// Known config keys, per section; unknown keys are rejected to catch typos.
const KNOWN_KEYS: &[(&str, &[&str])] = &[
    (
        "data",
        &[
            "height",
            "width",
            "frames",
            "sprites_min",
            "sprites_max",
            "max_speed",
            "max_spin",
            "static_prob",
            "camera_pan",
        ],
    ),
    ("encoder", &["seed", "patch", "dim"]),
    ("decoder", &["hidden", "feature_dim", "ema_momentum"]),
    (
        "train",
        &[
            "lambda",
            "sigma",
            "gamma",
            "lr",
            "naive_lr",
            "batch_size",
            "crop_size",
            "min_overlap",
            "temporal_window",
            "next_frame_only",
            "epochs",
            "seed",
            "checkpoint_every",
        ],
    ),
    (
        "corrupt",
        &["gaussian_sigma", "outlier_fraction", "outlier_patch"],
    ),
    (
        "probe",
        &[
            "iterations",
            "lr",
            "weight_decay",
            "seed",
            "knn_k",
            "knn_radius",
            "knn_tau",
            "knn_context",
            "pamr_kernel",
            "pamr_scale",
            "pamr_steps",
        ],
    ),
];

/// Parsed `key = value` config file with `[section]` headers.
#[derive(Debug, Clone, Default)]
pub struct ConfigFile {
    entries: BTreeMap<(String, String), String>,
}

impl ConfigFile {
    pub fn parse_str(text: &str) -> Result<ConfigFile, DistillError> {
        let mut entries = BTreeMap::new();
        let mut section = String::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
                section = name.trim().to_string();
                if !KNOWN_KEYS.iter().any(|(s, _)| *s == section) {
                    return Err(DistillError::Config(format!(
                        "line {}: unknown section [{section}]",
                        lineno + 1
                    )));
                }
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                DistillError::Config(format!("line {}: expected key = value", lineno + 1))
            })?;
            let key = k.trim().to_string();
            if section.is_empty() {
                return Err(DistillError::Config(format!(
                    "line {}: key {key:?} outside any [section]",
                    lineno + 1
                )));
            }
            let known = KNOWN_KEYS
                .iter()
                .find(|(s, _)| *s == section)
                .is_some_and(|(_, keys)| keys.contains(&key.as_str()));
            if !known {
                return Err(DistillError::Config(format!(
                    "line {}: unknown key {key:?} in section [{section}]",
                    lineno + 1
                )));
            }
            entries.insert((section.clone(), key), v.trim().to_string());
        }
        Ok(ConfigFile { entries })
    }

    pub fn parse(path: &Path) -> Result<ConfigFile, DistillError> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            DistillError::Config(format!("cannot read {}: {e}", path.display()))
        })?;
        Self::parse_str(&text)
    }

    pub fn get(&self, section: &str, key: &str) -> Option<&str> {
        self.entries
            .get(&(section.to_string(), key.to_string()))
            .map(String::as_str)
    }

    fn parse_typed<T: std::str::FromStr>(
        &self,
        section: &str,
        key: &str,
    ) -> Result<Option<T>, DistillError> {
        match self.get(section, key) {
            None => Ok(None),
            Some(raw) => raw.parse::<T>().map(Some).map_err(|_| {
                DistillError::Config(format!("[{section}] {key} = {raw:?} is not valid"))
            }),
        }
    }

    pub fn get_f32(&self, s: &str, k: &str) -> Result<Option<f32>, DistillError> {
        self.parse_typed(s, k)
    }

    pub fn get_usize(&self, s: &str, k: &str) -> Result<Option<usize>, DistillError> {
        self.parse_typed(s, k)
    }

    pub fn get_u64(&self, s: &str, k: &str) -> Result<Option<u64>, DistillError> {
        self.parse_typed(s, k)
    }

    pub fn get_bool(&self, s: &str, k: &str) -> Result<Option<bool>, DistillError> {
        self.parse_typed(s, k)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_sections_and_overrides() {
        let text = "
# comment
[train]
gamma = 0.5
epochs = 9

[encoder]
seed = 42
";
        let file = ConfigFile::parse_str(text).unwrap();
        let mut cfg = TrainConfig::default();
        cfg.apply_config_file(&file).unwrap();
        assert_eq!(cfg.gamma, 0.5);
        assert_eq!(cfg.epochs, 9);
        assert_eq!(cfg.encoder_seed, 42);
        assert_eq!(cfg.lambda, 0.1); // untouched default
    }

    #[test]
    fn rejects_unknown_keys_and_sections() {
        assert!(ConfigFile::parse_str("[train]\ngama = 1\n").is_err());
        assert!(ConfigFile::parse_str("[nope]\nx = 1\n").is_err());
        assert!(ConfigFile::parse_str("loose = 1\n").is_err());
        assert!(ConfigFile::parse_str("[train]\ngamma 1\n").is_err());
    }

    #[test]
    fn ablations_mutate_expected_fields() {
        let base = TrainConfig::default();
        let mut c = base.clone();
        c.apply_ablation(Ablation::GammaSmall);
        assert_eq!(c.gamma, 1e-3);
        let mut c = base.clone();
        c.apply_ablation(Ablation::NoL1);
        assert_eq!(c.lambda, 0.0);
        let mut c = base.clone();
        c.apply_ablation(Ablation::L2);
        assert_eq!(c.recon, ReconKind::L2);
        let mut c = base.clone();
        c.apply_ablation(Ablation::Window9);
        assert_eq!(c.pair_mode, PairMode::Window(9));
        let mut c = base.clone();
        c.apply_ablation(Ablation::NextFrame);
        assert_eq!(c.pair_mode, PairMode::NextFrame);
        let mut c = base.clone();
        c.apply_ablation(Ablation::NoGrad);
        assert!(!c.use_grad_loss);
        let mut c = base;
        c.apply_ablation(Ablation::Naive);
        assert!(c.naive);
    }

    #[test]
    fn hash_tracks_content() {
        let a = TrainConfig::default();
        let mut b = TrainConfig::default();
        assert_eq!(a.content_hash(), b.content_hash());
        b.gamma = 0.123;
        assert_ne!(a.content_hash(), b.content_hash());
    }

    #[test]
    fn validation_catches_bad_values() {
        let mut cfg = TrainConfig::default();
        cfg.crop_size = 63;
        assert!(cfg.validate().is_err());
        let mut cfg = TrainConfig::default();
        cfg.sigma = 0.0;
        assert!(cfg.validate().is_err());
        let mut cfg = TrainConfig::default();
        cfg.ema_momentum = 1.0;
        assert!(cfg.validate().is_err());
        assert!(TrainConfig::default().validate().is_ok());
    }
}
