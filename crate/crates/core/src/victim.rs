//! The victim-model zoo: architecture grid construction, training,
//! one-shot magnitude pruning, and adversarially trained variants.

use crate::attack::{pgd, AttackMethod, AttackSpec};
use crate::data::LabeledImages;
use crate::diffnet::layer::{ActKind, LayerSpec};
use crate::diffnet::{cross_entropy, instantiate, sgd_step, Network, OptimizerState};
use crate::error::{Error, Result};
use crate::rng::{stream_key, stream_rng};
use crate::tensor::{Real, Tensor};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArchFamily {
    Resnet9,
    Resnet18,
    Resnet20,
    Vgg11,
    Vgg13,
}

impl ArchFamily {
    pub const ALL: [ArchFamily; 5] = [
        ArchFamily::Resnet9,
        ArchFamily::Resnet18,
        ArchFamily::Resnet20,
        ArchFamily::Vgg11,
        ArchFamily::Vgg13,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            ArchFamily::Resnet9 => "resnet9",
            ArchFamily::Resnet18 => "resnet18",
            ArchFamily::Resnet20 => "resnet20",
            ArchFamily::Vgg11 => "vgg11",
            ArchFamily::Vgg13 => "vgg13",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .iter()
            .copied()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::config(format!("unknown architecture family `{s}`")))
    }
}

pub const KERNEL_SIZES: [usize; 3] = [3, 5, 7];
pub const ACTIVATIONS: [ActKind; 3] = [ActKind::Relu, ActKind::Tanh, ActKind::Elu];
pub const SPARSITIES: [f64; 3] = [0.0, 0.375, 0.625];

/// The (AT, KS, AF, WS) quadruple labeling each victim model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelAttributes {
    pub at: ArchFamily,
    pub ks: usize,
    pub af: ActKind,
    pub ws: f64,
    #[serde(default)]
    pub robust: bool,
}

impl ModelAttributes {
    pub fn validate(&self) -> Result<()> {
        if !KERNEL_SIZES.contains(&self.ks) {
            return Err(Error::config(format!(
                "kernel size {} not in {KERNEL_SIZES:?}",
                self.ks
            )));
        }
        if !SPARSITIES.iter().any(|w| (w - self.ws).abs() < 1e-9) {
            return Err(Error::config(format!(
                "weight sparsity {} not in {SPARSITIES:?}",
                self.ws
            )));
        }
        Ok(())
    }

    pub fn id(&self) -> String {
        format!(
            "{}-k{}-{}-ws{}{}",
            self.at.name(),
            self.ks,
            self.af.name(),
            (self.ws * 1000.0).round() as u64,
            if self.robust { "-robust" } else { "" }
        )
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TrainRecipe {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub momentum: f64,
    pub width: f64,
    pub seed: u64,
}

impl Default for TrainRecipe {
    fn default() -> Self {
        TrainRecipe {
            epochs: 75,
            batch_size: 256,
            lr: 0.1,
            weight_decay: 5e-4,
            momentum: 0.9,
            width: 0.25,
            seed: 0,
        }
    }
}

impl TrainRecipe {
    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 {
            return Err(Error::config("recipe needs epochs >= 1"));
        }
        if !(self.width > 0.0 && self.width <= 1.0) {
            return Err(Error::config("width multiplier must lie in (0, 1]"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainedVictim {
    pub attributes: ModelAttributes,
    pub network: Network<Real>,
    pub clean_acc: f64,
    pub robust_acc: Option<f64>,
}

fn scaled(base: usize, width: f64) -> usize {
    ((base as f64 * width).round() as usize).max(1)
}

struct SpecBuilder {
    specs: Vec<LayerSpec>,
    ks: usize,
    af: ActKind,
    spatial: usize,
    ch: usize,
}

impl SpecBuilder {
    fn new(attrs: &ModelAttributes, in_ch: usize, spatial: usize) -> Self {
        SpecBuilder {
            specs: vec![],
            ks: attrs.ks,
            af: attrs.af,
            spatial,
            ch: in_ch,
        }
    }

    fn conv_bn_act(&mut self, out_ch: usize) {
        self.specs.push(LayerSpec::Conv2d {
            in_ch: self.ch,
            out_ch,
            kernel: self.ks,
            stride: 1,
        });
        self.specs.push(LayerSpec::Batchnorm2d { channels: out_ch });
        self.specs.push(LayerSpec::Activation { act: self.af });
        self.ch = out_ch;
    }

    /// 2x2 maxpool; skipped once the spatial size cannot halve.
    fn pool(&mut self) {
        if self.spatial >= 2 {
            self.specs.push(LayerSpec::Maxpool { kernel: 2, stride: 2 });
            self.spatial /= 2;
        }
    }

    /// Identity residual block: conv-bn-act-conv-bn + skip + act.
    fn res_block(&mut self) {
        let from = self.specs.len() - 1; // block input node
        let ch = self.ch;
        self.specs.push(LayerSpec::Conv2d {
            in_ch: ch,
            out_ch: ch,
            kernel: self.ks,
            stride: 1,
        });
        self.specs.push(LayerSpec::Batchnorm2d { channels: ch });
        self.specs.push(LayerSpec::Activation { act: self.af });
        self.specs.push(LayerSpec::Conv2d {
            in_ch: ch,
            out_ch: ch,
            kernel: self.ks,
            stride: 1,
        });
        self.specs.push(LayerSpec::Batchnorm2d { channels: ch });
        self.specs.push(LayerSpec::ResidualAdd { from });
        self.specs.push(LayerSpec::Activation { act: self.af });
    }

    fn head(&mut self, classes: usize) {
        if self.spatial > 1 {
            self.specs.push(LayerSpec::Avgpool {
                kernel: self.spatial,
                stride: self.spatial,
            });
            self.spatial = 1;
        }
        self.specs.push(LayerSpec::Flatten);
        self.specs.push(LayerSpec::Dense {
            in_dim: self.ch,
            out_dim: classes,
        });
    }
}

/// Layer specs for a victim with the requested attributes. Every conv block
/// uses kernel side `ks` and activation `af`; channel counts scale with the
/// width multiplier.
pub fn build_victim_specs(
    attrs: &ModelAttributes,
    width: f64,
    input_shape: &[usize],
    classes: usize,
) -> Result<Vec<LayerSpec>> {
    attrs.validate()?;
    if !(width > 0.0 && width <= 1.0) {
        return Err(Error::config("width multiplier must lie in (0, 1]"));
    }
    let (in_ch, spatial) = (input_shape[0], input_shape[1]);
    let mut b = SpecBuilder::new(attrs, in_ch, spatial);
    match attrs.at {
        ArchFamily::Resnet9 => {
            b.conv_bn_act(scaled(64, width));
            b.conv_bn_act(scaled(128, width));
            b.pool();
            b.res_block();
            b.conv_bn_act(scaled(256, width));
            b.pool();
            b.conv_bn_act(scaled(512, width));
            b.pool();
            b.res_block();
        }
        ArchFamily::Resnet18 => {
            b.conv_bn_act(scaled(64, width));
            for (i, base) in [64, 128, 256, 512].into_iter().enumerate() {
                if i > 0 {
                    b.conv_bn_act(scaled(base, width));
                    b.pool();
                }
                b.res_block();
                b.res_block();
            }
        }
        ArchFamily::Resnet20 => {
            b.conv_bn_act(scaled(16, width.max(0.25)));
            for (i, base) in [16, 32, 64].into_iter().enumerate() {
                if i > 0 {
                    b.conv_bn_act(scaled(base, width.max(0.25)));
                    b.pool();
                }
                for _ in 0..3 {
                    b.res_block();
                }
            }
        }
        ArchFamily::Vgg11 => {
            for stage in [vec![64], vec![128], vec![256, 256], vec![512, 512], vec![512, 512]] {
                for base in stage {
                    b.conv_bn_act(scaled(base, width));
                }
                b.pool();
            }
        }
        ArchFamily::Vgg13 => {
            for stage in [
                vec![64, 64],
                vec![128, 128],
                vec![256, 256],
                vec![512, 512],
                vec![512, 512],
            ] {
                for base in stage {
                    b.conv_bn_act(scaled(base, width));
                }
                b.pool();
            }
        }
    }
    b.head(classes);
    Ok(b.specs)
}

pub fn build_victim(
    attrs: &ModelAttributes,
    width: f64,
    input_shape: &[usize],
    classes: usize,
    seed: u64,
) -> Result<Network<Real>> {
    let specs = build_victim_specs(attrs, width, input_shape, classes)?;
    instantiate(&specs, input_shape, seed)
}

fn accuracy(net: &Network<Real>, data: &LabeledImages, batch: usize) -> Result<f64> {
    if data.is_empty() {
        return Ok(0.0);
    }
    let mut correct = 0usize;
    let idx: Vec<usize> = (0..data.len()).collect();
    for chunk in idx.chunks(batch) {
        let logits = net.predict(&data.batch(chunk))?;
        let k = logits.shape()[1];
        for (row, &i) in chunk.iter().enumerate() {
            let pred = argmax(&logits.data()[row * k..(row + 1) * k]);
            if pred == data.labels[i] {
                correct += 1;
            }
        }
    }
    Ok(correct as f64 / data.len() as f64)
}

pub fn argmax(row: &[Real]) -> usize {
    row.iter()
        .enumerate()
        .max_by(|a, b| a.1.partial_cmp(b.1).unwrap().then(b.0.cmp(&a.0)))
        .map(|(i, _)| i)
        .unwrap()
}

/// Inner loop shared by standard and adversarial training. When `attack` is
/// set, each minibatch is replaced by PGD adversarial examples before the
/// gradient step.
fn train_loop(
    mut net: Network<Real>,
    train: &LabeledImages,
    recipe: &TrainRecipe,
    attack: Option<&AttackSpec>,
) -> Result<Network<Real>> {
    // zero epochs is a legal degenerate case: the initialized net comes back
    if !(recipe.width > 0.0 && recipe.width <= 1.0) {
        return Err(Error::config("width multiplier must lie in (0, 1]"));
    }
    if train.is_empty() {
        return Err(Error::config("training set is empty"));
    }
    let steps_per_epoch = train.len().div_ceil(recipe.batch_size);
    let mut opt = OptimizerState::new(
        &net,
        recipe.lr,
        recipe.momentum,
        recipe.weight_decay,
        recipe.epochs * steps_per_epoch,
    );
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 0..recipe.epochs {
        let mut rng = stream_rng(recipe.seed, 1_000_000 + epoch as u64);
        order.shuffle(&mut rng);
        for chunk in order.chunks(recipe.batch_size) {
            let labels: Vec<usize> = chunk.iter().map(|&i| train.labels[i]).collect();
            let batch = if let Some(spec) = attack {
                // min-max training: attack the current weights in eval mode
                net.set_train(false);
                let mut adv = Vec::with_capacity(chunk.len() * train.shape.iter().product::<usize>());
                for (bi, &i) in chunk.iter().enumerate() {
                    let rec = pgd(
                        &net,
                        &train.images[i],
                        train.labels[i],
                        spec,
                        stream_key(spec.seed, (epoch * train.len() + bi) as u64),
                    )?;
                    adv.extend_from_slice(rec.x_adv.data());
                }
                let mut shape = vec![chunk.len()];
                shape.extend_from_slice(&train.shape);
                Tensor::new(shape, adv)
            } else {
                train.batch(chunk)
            };
            net.set_train(true);
            let (logits, tape) = net.forward(&batch)?;
            let (loss, dlogits) = cross_entropy(&logits, &labels)?;
            if !loss.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    detail: format!("loss = {loss}"),
                });
            }
            let grads = net.backward(&tape, &dlogits, true, false)?;
            sgd_step(&mut net, &grads, &mut opt)?;
        }
    }
    net.set_train(false);
    Ok(net)
}

/// Standard victim training; returns the network in eval mode plus measured
/// clean accuracy on the validation split.
pub fn train_victim(
    net: Network<Real>,
    attrs: ModelAttributes,
    train: &LabeledImages,
    val: &LabeledImages,
    recipe: &TrainRecipe,
) -> Result<TrainedVictim> {
    let network = train_loop(net, train, recipe, None)?;
    let clean_acc = accuracy(&network, val, recipe.batch_size)?;
    Ok(TrainedVictim {
        attributes: attrs,
        network,
        clean_acc,
        robust_acc: None,
    })
}

/// One-shot global magnitude pruning over conv+dense weights (biases and
/// batchnorm excluded), followed by fine-tuning with masks fixed.
pub fn prune_magnitude(
    mut victim: TrainedVictim,
    ws: f64,
    train: &LabeledImages,
    val: &LabeledImages,
    finetune: &TrainRecipe,
) -> Result<TrainedVictim> {
    if ws >= 1.0 {
        return Err(Error::config("sparsity must be < 1"));
    }
    if ws <= 0.0 {
        return Ok(victim);
    }
    // (|w|, layer, entry) over all prunable weights, ties broken by position
    let mut magnitudes: Vec<(Real, usize, usize)> = Vec::new();
    for (li, layer) in victim.network.layers.iter().enumerate() {
        if matches!(layer.spec, LayerSpec::Conv2d { .. } | LayerSpec::Dense { .. }) {
            for (ei, &w) in layer.params[0].data().iter().enumerate() {
                magnitudes.push((w.abs(), li, ei));
            }
        }
    }
    let total = magnitudes.len();
    let k = ((ws * total as f64).round() as usize).min(total);
    magnitudes.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut masks: std::collections::HashMap<usize, Tensor<Real>> = std::collections::HashMap::new();
    for (li, layer) in victim.network.layers.iter().enumerate() {
        if matches!(layer.spec, LayerSpec::Conv2d { .. } | LayerSpec::Dense { .. }) {
            masks.insert(li, Tensor::ones(layer.params[0].shape().to_vec()));
        }
    }
    for &(_, li, ei) in magnitudes.iter().take(k) {
        masks.get_mut(&li).unwrap()[ei] = 0.0;
    }
    for (li, mask) in masks {
        victim.network.layers[li].weight_mask = Some(mask);
    }
    victim.network.apply_masks();
    let network = train_loop(victim.network, train, finetune, None)?;
    let clean_acc = accuracy(&network, val, finetune.batch_size)?;
    Ok(TrainedVictim {
        attributes: victim.attributes,
        network,
        clean_acc,
        robust_acc: None,
    })
}

/// Min-max adversarial training with a PGD l-inf inner attack; reports clean
/// and PGD-robust accuracy.
pub fn adversarial_train(
    net: Network<Real>,
    attrs: ModelAttributes,
    train: &LabeledImages,
    val: &LabeledImages,
    attack: &AttackSpec,
    recipe: &TrainRecipe,
) -> Result<TrainedVictim> {
    if attack.method != AttackMethod::PgdLinf {
        return Err(Error::Unsupported(format!(
            "adversarial training requires pgd-linf, got {}",
            attack.method.name()
        )));
    }
    let network = train_loop(net, train, recipe, Some(attack))?;
    let clean_acc = accuracy(&network, val, recipe.batch_size)?;
    // robust accuracy under a fresh PGD attack on the validation set
    let mut robust_correct = 0usize;
    for (i, (img, &label)) in val.images.iter().zip(&val.labels).enumerate() {
        let rec = pgd(&network, img, label, attack, stream_key(attack.seed ^ 0xdead, i as u64))?;
        if !rec.success {
            robust_correct += 1;
        }
    }
    let attrs = ModelAttributes { robust: true, ..attrs };
    Ok(TrainedVictim {
        attributes: attrs,
        network,
        clean_acc,
        robust_acc: Some(robust_correct as f64 / val.len().max(1) as f64),
    })
}

/// Measure robust accuracy of any victim under a fresh PGD attack.
pub fn pgd_robust_accuracy(
    net: &Network<Real>,
    val: &LabeledImages,
    attack: &AttackSpec,
) -> Result<f64> {
    let mut correct = 0usize;
    for (i, (img, &label)) in val.images.iter().zip(&val.labels).enumerate() {
        let rec = pgd(net, img, label, attack, stream_key(attack.seed ^ 0xdead, i as u64))?;
        if !rec.success {
            correct += 1;
        }
    }
    Ok(correct as f64 / val.len().max(1) as f64)
}

/// Build the cartesian attribute grid for the given families.
pub fn attribute_grid(families: &[ArchFamily]) -> Vec<ModelAttributes> {
    let mut grid = Vec::new();
    for &at in families {
        for &ks in &KERNEL_SIZES {
            for &af in &ACTIVATIONS {
                for &ws in &SPARSITIES {
                    grid.push(ModelAttributes {
                        at,
                        ks,
                        af,
                        ws,
                        robust: false,
                    });
                }
            }
        }
    }
    grid
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ZooEntry {
    pub attributes: ModelAttributes,
    pub seed: u64,
    pub clean_acc: f64,
    pub robust_acc: Option<f64>,
    pub nonzero_fraction: f64,
    pub error: Option<String>,
}

pub struct Zoo {
    pub victims: Vec<TrainedVictim>,
    pub manifest: Vec<ZooEntry>,
}

/// Train one victim per attribute combination. Members train independently
/// on per-victim seed streams, so parallel and serial runs agree.
pub fn zoo_build(
    grid: &[ModelAttributes],
    train: &LabeledImages,
    val: &LabeledImages,
    recipe: &TrainRecipe,
    adv_attack: Option<&AttackSpec>,
) -> Result<Zoo> {
    if grid.is_empty() {
        return Err(Error::config("victim grid is empty"));
    }
    let results: Vec<(Option<TrainedVictim>, ZooEntry)> = grid
        .par_iter()
        .enumerate()
        .map(|(i, attrs)| {
            let seed = stream_key(recipe.seed, i as u64);
            let member = build_and_train(attrs, train, val, recipe, seed, adv_attack);
            match member {
                Ok(v) => {
                    let entry = ZooEntry {
                        attributes: v.attributes,
                        seed,
                        clean_acc: v.clean_acc,
                        robust_acc: v.robust_acc,
                        nonzero_fraction: v.network.nonzero_weight_fraction(),
                        error: None,
                    };
                    (Some(v), entry)
                }
                Err(e) => (
                    None,
                    ZooEntry {
                        attributes: *attrs,
                        seed,
                        clean_acc: 0.0,
                        robust_acc: None,
                        nonzero_fraction: 1.0,
                        error: Some(e.to_string()),
                    },
                ),
            }
        })
        .collect();
    let mut victims = Vec::new();
    let mut manifest = Vec::new();
    for (v, entry) in results {
        if let Some(v) = v {
            victims.push(v);
        }
        manifest.push(entry);
    }
    Ok(Zoo { victims, manifest })
}

fn build_and_train(
    attrs: &ModelAttributes,
    train: &LabeledImages,
    val: &LabeledImages,
    recipe: &TrainRecipe,
    seed: u64,
    adv_attack: Option<&AttackSpec>,
) -> Result<TrainedVictim> {
    let net = build_victim(attrs, recipe.width, &train.shape, train.class_count, seed)?;
    let recipe = TrainRecipe { seed, ..recipe.clone() };
    let dense = if let Some(atk) = adv_attack {
        adversarial_train(net, *attrs, train, val, atk, &recipe)?
    } else {
        train_victim(net, *attrs, train, val, &recipe)?
    };
    if attrs.ws > 0.0 {
        let finetune = TrainRecipe {
            epochs: (recipe.epochs / 5).max(1),
            ..recipe.clone()
        };
        prune_magnitude(dense, attrs.ws, train, val, &finetune)
    } else {
        Ok(dense)
    }
}
