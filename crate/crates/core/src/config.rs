//! Experiment configuration: a single TOML file describing data, victims,
//! attacks, parser models, and evaluation, with strict unknown-key
//! rejection and a canonical JSON echo for provenance.

use crate::attack::{AttackMethod, AttackSpec};
use crate::data::SyntheticSpec;
use crate::error::{Error, Result};
use crate::parser::Backbone;
use crate::redset::InputFormat;
use crate::victim::{ArchFamily, TrainRecipe, ACTIVATIONS, KERNEL_SIZES, SPARSITIES};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    pub dataset: DatasetConfig,
    pub victims: VictimConfig,
    #[serde(default)]
    pub split: SplitConfig,
    pub attacks: Vec<AttackConfig>,
    pub mpn: MpnConfig,
    #[serde(default)]
    pub pen: PenConfig,
    #[serde(default)]
    pub joint: JointConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    /// "synthetic" or "cifar10".
    pub source: String,
    #[serde(default)]
    pub path: Option<String>,
    #[serde(default = "d_classes")]
    pub classes: usize,
    #[serde(default = "d_image_size")]
    pub image_size: usize,
    #[serde(default = "d_sigma")]
    pub noise_sigma: f64,
    #[serde(default = "d_spc")]
    pub samples_per_class: usize,
    #[serde(default = "d_tseed")]
    pub template_seed: u64,
}

fn d_classes() -> usize {
    10
}
fn d_image_size() -> usize {
    16
}
fn d_sigma() -> f64 {
    0.1
}
fn d_spc() -> usize {
    100
}
fn d_tseed() -> u64 {
    7
}

impl DatasetConfig {
    pub fn synthetic_spec(&self) -> SyntheticSpec {
        SyntheticSpec {
            classes: self.classes,
            image_size: self.image_size,
            template_seed: self.template_seed,
            noise_sigma: self.noise_sigma,
            samples_per_class: self.samples_per_class,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VictimConfig {
    pub families: Vec<String>,
    #[serde(default = "d_vepochs")]
    pub epochs: usize,
    #[serde(default = "d_vbatch")]
    pub batch_size: usize,
    #[serde(default = "d_vlr")]
    pub lr: f64,
    #[serde(default = "d_vwd")]
    pub weight_decay: f64,
    #[serde(default = "d_vmom")]
    pub momentum: f64,
    #[serde(default = "d_vwidth")]
    pub width: f64,
    /// Adversarially train the zoo (PGD l-inf on the first attack entry).
    #[serde(default)]
    pub adversarial: bool,
}

fn d_vepochs() -> usize {
    75
}
fn d_vbatch() -> usize {
    256
}
fn d_vlr() -> f64 {
    0.1
}
fn d_vwd() -> f64 {
    5e-4
}
fn d_vmom() -> f64 {
    0.9
}
fn d_vwidth() -> f64 {
    0.25
}

impl VictimConfig {
    pub fn families(&self) -> Result<Vec<ArchFamily>> {
        self.families.iter().map(|s| ArchFamily::parse(s)).collect()
    }

    pub fn recipe(&self, seed: u64) -> TrainRecipe {
        TrainRecipe {
            epochs: self.epochs,
            batch_size: self.batch_size,
            lr: self.lr,
            weight_decay: self.weight_decay,
            momentum: self.momentum,
            width: self.width,
            seed,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitConfig {
    #[serde(default = "d_ratio")]
    pub ratio: f64,
    #[serde(default = "d_sseed")]
    pub seed: u64,
}

fn d_ratio() -> f64 {
    0.8
}
fn d_sseed() -> u64 {
    1
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            ratio: d_ratio(),
            seed: d_sseed(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackConfig {
    pub method: String,
    pub eps: f64,
    #[serde(default)]
    pub alpha: Option<f64>,
    #[serde(default)]
    pub steps: Option<usize>,
    #[serde(default)]
    pub c: Option<f64>,
    #[serde(default)]
    pub kappa: Option<f64>,
    #[serde(default)]
    pub mu: Option<f64>,
    #[serde(default)]
    pub q: Option<usize>,
    #[serde(default)]
    pub max_queries: Option<usize>,
    #[serde(default)]
    pub max_iters: Option<usize>,
    #[serde(default)]
    pub lr: Option<f64>,
    #[serde(default)]
    pub random_init: Option<bool>,
}

impl AttackConfig {
    pub fn to_spec(&self, seed: u64) -> Result<AttackSpec> {
        let method = AttackMethod::parse(&self.method)?;
        let mut spec = AttackSpec::defaults(method, self.eps, seed);
        if let Some(v) = self.alpha {
            spec.alpha = v;
        }
        if let Some(v) = self.steps {
            spec.steps = v;
        }
        if let Some(v) = self.c {
            spec.c = v;
        }
        if let Some(v) = self.kappa {
            spec.kappa = v;
        }
        if let Some(v) = self.mu {
            spec.mu = v;
        }
        if let Some(v) = self.q {
            spec.q = v;
        }
        if let Some(v) = self.max_queries {
            spec.max_queries = v;
        }
        if let Some(v) = self.max_iters {
            spec.max_iters = v;
        }
        if let Some(v) = self.lr {
            spec.lr = v;
        }
        if let Some(v) = self.random_init {
            spec.random_init = v;
        }
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MpnConfig {
    pub backbone: String,
    #[serde(default = "d_format")]
    pub format: String,
    #[serde(default = "d_mepochs")]
    pub epochs: usize,
    #[serde(default = "d_vbatch")]
    pub batch_size: usize,
    #[serde(default = "d_vlr")]
    pub lr: f64,
    #[serde(default = "d_vwd")]
    pub weight_decay: f64,
}

fn d_format() -> String {
    "perturbation".into()
}
fn d_mepochs() -> usize {
    100
}

impl MpnConfig {
    pub fn backbone(&self) -> Result<Backbone> {
        Backbone::parse(&self.backbone)
    }

    pub fn format(&self) -> Result<InputFormat> {
        InputFormat::parse(&self.format)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PenConfig {
    #[serde(default = "d_pdepth")]
    pub depth: usize,
    #[serde(default = "d_pch")]
    pub channels: usize,
    #[serde(default = "d_pepochs")]
    pub pretrain_epochs: usize,
    #[serde(default = "d_plr")]
    pub pretrain_lr: f64,
    #[serde(default = "d_vbatch")]
    pub batch_size: usize,
}

fn d_pdepth() -> usize {
    7
}
fn d_pch() -> usize {
    64
}
fn d_pepochs() -> usize {
    20
}
fn d_plr() -> f64 {
    0.01
}

impl Default for PenConfig {
    fn default() -> Self {
        PenConfig {
            depth: d_pdepth(),
            channels: d_pch(),
            pretrain_epochs: d_pepochs(),
            pretrain_lr: d_plr(),
            batch_size: d_vbatch(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JointConfig {
    #[serde(default = "d_beta")]
    pub beta: f64,
    #[serde(default = "d_jepochs")]
    pub epochs: usize,
    #[serde(default = "d_vbatch")]
    pub batch_size: usize,
    #[serde(default = "d_jmlr")]
    pub mpn_lr: f64,
    #[serde(default = "d_jplr")]
    pub pen_lr: f64,
}

fn d_beta() -> f64 {
    1.0
}
fn d_jepochs() -> usize {
    50
}
fn d_jmlr() -> f64 {
    1e-3
}
fn d_jplr() -> f64 {
    1e-5
}

impl Default for JointConfig {
    fn default() -> Self {
        JointConfig {
            beta: d_beta(),
            epochs: d_jepochs(),
            batch_size: d_vbatch(),
            mpn_lr: d_jmlr(),
            pen_lr: d_jplr(),
        }
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::config(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    /// All vocabulary checks happen before any compute.
    pub fn validate(&self) -> Result<()> {
        match self.dataset.source.as_str() {
            "synthetic" => {
                if self.dataset.classes < 2 {
                    return Err(Error::config("synthetic dataset needs >= 2 classes"));
                }
            }
            "cifar10" => {
                if self.dataset.path.is_none() {
                    return Err(Error::config("cifar10 source requires a path"));
                }
            }
            other => {
                return Err(Error::config(format!(
                    "unknown dataset source `{other}` (expected synthetic or cifar10)"
                )));
            }
        }
        let families = self.victims.families()?;
        if families.is_empty() {
            return Err(Error::config("victims.families is empty"));
        }
        // the grid vocabulary itself is fixed; just touch the tables so a
        // drifting constant shows up here
        debug_assert_eq!(KERNEL_SIZES.len(), 3);
        debug_assert_eq!(ACTIVATIONS.len(), 3);
        debug_assert_eq!(SPARSITIES.len(), 3);
        if !(self.split.ratio > 0.0 && self.split.ratio < 1.0) {
            return Err(Error::config("split.ratio must be in (0,1)"));
        }
        if self.attacks.is_empty() {
            return Err(Error::config("at least one attack must be configured"));
        }
        for a in &self.attacks {
            a.to_spec(self.seed)?;
        }
        self.mpn.backbone()?;
        self.mpn.format()?;
        if self.pen.depth < 3 {
            return Err(Error::config("pen.depth must be >= 3"));
        }
        if self.joint.beta <= 0.0 {
            return Err(Error::config("joint.beta must be > 0"));
        }
        Ok(())
    }

    /// Canonical JSON form; the basis for config hashing and the echo file.
    pub fn canonical_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn hash(&self) -> Result<String> {
        let json = self.canonical_json()?;
        let digest = Sha256::digest(json.as_bytes());
        Ok(digest[..8].iter().map(|b| format!("{b:02x}")).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
seed = 3

[dataset]
source = "synthetic"
classes = 4
image_size = 8
samples_per_class = 10

[victims]
families = ["resnet9"]
epochs = 1
width = 0.125

[[attacks]]
method = "pgd-linf"
eps = 0.0313725490196

[mpn]
backbone = "mlp"
"#;

    #[test]
    fn minimal_config_parses_with_defaults() {
        let cfg = ExperimentConfig::parse(MINIMAL).unwrap();
        assert_eq!(cfg.seed, 3);
        assert_eq!(cfg.split.ratio, 0.8);
        assert_eq!(cfg.mpn.epochs, 100);
        assert_eq!(cfg.pen.depth, 7);
        assert!((cfg.joint.beta - 1.0).abs() < 1e-12);
        let spec = cfg.attacks[0].to_spec(cfg.seed).unwrap();
        assert_eq!(spec.steps, 10);
    }

    #[test]
    fn unknown_keys_rejected() {
        let text = MINIMAL.replace("[mpn]", "[mpn]\nwhatever = 1");
        assert!(ExperimentConfig::parse(&text).is_err());
        let text = format!("{MINIMAL}\n[extra]\nx = 1\n");
        assert!(ExperimentConfig::parse(&text).is_err());
    }

    #[test]
    fn invalid_vocabulary_rejected() {
        let text = MINIMAL.replace("resnet9", "resnet99");
        assert!(ExperimentConfig::parse(&text).is_err());
        let text = MINIMAL.replace("pgd-linf", "gradient-boost");
        assert!(ExperimentConfig::parse(&text).is_err());
        let text = MINIMAL.replace("backbone = \"mlp\"", "backbone = \"transformer\"");
        assert!(ExperimentConfig::parse(&text).is_err());
    }

    #[test]
    fn canonical_round_trip() {
        let cfg = ExperimentConfig::parse(MINIMAL).unwrap();
        let json = cfg.canonical_json().unwrap();
        let back: ExperimentConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(back.canonical_json().unwrap(), json);
        assert_eq!(back.hash().unwrap(), cfg.hash().unwrap());
    }
}
