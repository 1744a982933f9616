//! Model parsing network (shared trunk + per-attribute heads) and the
//! perturbation estimation network (residual denoiser), with their training
//! loops: attribute classification, denoising pretraining, and joint
//! training where head gradients flow through the estimated perturbation.

use crate::diffnet::{
    cross_entropy, instantiate, mae, sgd_step, softmax, ActKind, LayerSpec, Network,
    OptimizerState, Tape,
};
use crate::error::{Error, Result};
use crate::redset::{AttributeSchema, ParsingDataset, ParsingExample};
use crate::rng::stream_rng;
use crate::tensor::{Real, Tensor};
use crate::victim::argmax;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Backbone {
    Convnet4,
    Mlp,
}

impl Backbone {
    pub fn name(&self) -> &'static str {
        match self {
            Backbone::Convnet4 => "convnet4",
            Backbone::Mlp => "mlp",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "convnet4" => Ok(Backbone::Convnet4),
            "mlp" => Ok(Backbone::Mlp),
            other => Err(Error::config(format!("unknown backbone `{other}`"))),
        }
    }
}

pub const TRUNK_DIM: usize = 128;

/// Shared trunk emitting a 128-d representation plus one dense head per
/// attribute.
#[derive(Debug, Clone)]
pub struct MpnModel {
    pub backbone: Backbone,
    pub trunk: Network<Real>,
    pub heads: Vec<Network<Real>>,
    pub schema: AttributeSchema,
    pub input_shape: Vec<usize>,
}

fn trunk_specs(backbone: Backbone, input_shape: &[usize]) -> Result<Vec<LayerSpec>> {
    let (c, h, w) = (input_shape[0], input_shape[1], input_shape[2]);
    match backbone {
        Backbone::Mlp => Ok(vec![
            LayerSpec::Flatten,
            LayerSpec::Dense {
                in_dim: c * h * w,
                out_dim: TRUNK_DIM,
            },
            LayerSpec::Activation { act: ActKind::Relu },
            LayerSpec::Dense {
                in_dim: TRUNK_DIM,
                out_dim: TRUNK_DIM,
            },
            LayerSpec::Activation { act: ActKind::Relu },
        ]),
        Backbone::Convnet4 => {
            if h < 4 || w < 4 {
                return Err(Error::config(format!(
                    "convnet4 needs at least 4x4 inputs, got {h}x{w}"
                )));
            }
            let ch = 64;
            let conv = |i, o| LayerSpec::Conv2d {
                in_ch: i,
                out_ch: o,
                kernel: 3,
                stride: 1,
            };
            let relu = LayerSpec::Activation { act: ActKind::Relu };
            let pool = LayerSpec::Maxpool {
                kernel: 2,
                stride: 2,
            };
            Ok(vec![
                conv(c, ch),
                relu,
                conv(ch, ch),
                relu,
                pool,
                conv(ch, ch),
                relu,
                conv(ch, ch),
                relu,
                pool,
                LayerSpec::Flatten,
                LayerSpec::Dense {
                    in_dim: ch * (h / 4) * (w / 4),
                    out_dim: TRUNK_DIM,
                },
                relu,
            ])
        }
    }
}

pub fn build_mpn(
    backbone: Backbone,
    schema: &AttributeSchema,
    input_shape: &[usize],
    seed: u64,
) -> Result<MpnModel> {
    if input_shape.len() != 3 {
        return Err(Error::config("MPN input shape must be [C,H,W]"));
    }
    let counts = schema.class_counts();
    if counts.is_empty() {
        return Err(Error::config("empty attribute schema"));
    }
    let trunk = instantiate(&trunk_specs(backbone, input_shape)?, input_shape, seed)?;
    let heads = counts
        .iter()
        .enumerate()
        .map(|(i, &n)| {
            instantiate(
                &[
                    LayerSpec::Flatten,
                    LayerSpec::Dense {
                        in_dim: TRUNK_DIM,
                        out_dim: n,
                    },
                ],
                &[TRUNK_DIM, 1, 1],
                seed.wrapping_add(1 + i as u64),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MpnModel {
        backbone,
        trunk,
        heads,
        schema: schema.clone(),
        input_shape: input_shape.to_vec(),
    })
}

impl MpnModel {
    pub fn param_count(&self) -> usize {
        self.trunk.param_count() + self.heads.iter().map(|h| h.param_count()).sum::<usize>()
    }

    fn check_input(&self, shape: &[usize]) -> Result<()> {
        if shape != self.input_shape.as_slice() {
            return Err(Error::config(format!(
                "input shape {shape:?} does not match model shape {:?}",
                self.input_shape
            )));
        }
        Ok(())
    }
}

/// Stack examples into one [n, C, H, W] batch plus per-head label columns.
pub fn stack_examples(examples: &[&ParsingExample]) -> Result<(Tensor<Real>, Vec<Vec<usize>>)> {
    let first = examples
        .first()
        .ok_or_else(|| Error::config("empty example batch"))?;
    let shape = first.z.shape();
    let heads = first.y.len();
    let mut batch_shape = vec![examples.len()];
    batch_shape.extend_from_slice(shape);
    let mut data = Vec::with_capacity(examples.len() * first.z.data().len());
    let mut labels = vec![Vec::with_capacity(examples.len()); heads];
    for e in examples {
        if e.z.shape() != shape || e.y.len() != heads {
            return Err(Error::config("inconsistent example shapes in batch"));
        }
        data.extend_from_slice(e.z.data());
        for (h, &yi) in e.y.iter().enumerate() {
            labels[h].push(yi);
        }
    }
    Ok((Tensor::new(batch_shape, data), labels))
}

/// Sum of per-head cross-entropies on one batch; returns the loss value and
/// the gradient w.r.t. the trunk's input batch when requested.
fn mpn_batch_loss(
    mpn: &mut MpnModel,
    batch: &Tensor<Real>,
    labels: &[Vec<usize>],
    train: bool,
) -> Result<(f64, Tape<Real>, Vec<(Tape<Real>, Tensor<Real>)>, Tensor<Real>)> {
    let (features, trunk_tape) = if train {
        mpn.trunk.forward(batch)?
    } else {
        mpn.trunk.eval_forward(batch)?
    };
    let n = batch.shape()[0];
    let feat_batch = features.clone().reshape(vec![n, TRUNK_DIM, 1, 1]);
    let mut total = 0.0;
    let mut head_info = Vec::with_capacity(mpn.heads.len());
    let mut dfeat = Tensor::zeros(vec![n, TRUNK_DIM]);
    for (h, head) in mpn.heads.iter_mut().enumerate() {
        let (logits, tape) = head.eval_forward(&feat_batch)?;
        let (loss, dlogits) = cross_entropy(&logits, &labels[h])?;
        total += loss as f64;
        let grads = head.backward(&tape, &dlogits, train, true)?;
        let dinput = grads
            .input
            .clone()
            .ok_or_else(|| Error::numeric("mpn", "missing head input gradient"))?;
        dfeat.add_assign(&dinput.reshape(vec![n, TRUNK_DIM]));
        head_info.push((tape, dlogits));
    }
    Ok((total, trunk_tape, head_info, dfeat))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MpnRecipe {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub momentum: f64,
    pub seed: u64,
}

impl Default for MpnRecipe {
    fn default() -> Self {
        MpnRecipe {
            epochs: 100,
            batch_size: 256,
            lr: 0.1,
            weight_decay: 5e-4,
            momentum: 0.9,
            seed: 0,
        }
    }
}

/// Minimize the summed per-head cross-entropy with SGD + cosine schedule.
/// Returns the mean training loss per epoch.
pub fn train_mpn(mpn: &mut MpnModel, ds: &ParsingDataset, recipe: &MpnRecipe) -> Result<Vec<f64>> {
    if ds.schema != mpn.schema {
        return Err(Error::config("dataset schema does not match the model"));
    }
    if ds.examples.is_empty() {
        return Err(Error::config("empty training dataset"));
    }
    mpn.check_input(ds.examples[0].z.shape())?;
    if recipe.epochs == 0 || recipe.batch_size == 0 {
        return Err(Error::config("epochs and batch size must be positive"));
    }
    let n = ds.examples.len();
    let steps_per_epoch = n.div_ceil(recipe.batch_size);
    let t_total = recipe.epochs * steps_per_epoch;
    let mut trunk_opt = OptimizerState::new(
        &mpn.trunk,
        recipe.lr,
        recipe.momentum,
        recipe.weight_decay,
        t_total,
    );
    let mut head_opts: Vec<OptimizerState<Real>> = mpn
        .heads
        .iter()
        .map(|h| OptimizerState::new(h, recipe.lr, recipe.momentum, recipe.weight_decay, t_total))
        .collect();
    let mut order: Vec<usize> = (0..n).collect();
    let mut curve = Vec::with_capacity(recipe.epochs);
    mpn.trunk.set_train(true);
    for epoch in 0..recipe.epochs {
        let mut rng = stream_rng(recipe.seed, 500_000 + epoch as u64);
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(recipe.batch_size) {
            let refs: Vec<&ParsingExample> = chunk.iter().map(|&i| &ds.examples[i]).collect();
            let (batch, labels) = stack_examples(&refs)?;
            let (loss, trunk_tape, head_info, dfeat) = mpn_batch_loss(mpn, &batch, &labels, true)?;
            if !loss.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    detail: format!("MPN loss {loss}"),
                });
            }
            epoch_loss += loss;
            batches += 1;
            for (h, (tape, dlogits)) in head_info.iter().enumerate() {
                let grads = mpn.heads[h].backward(tape, dlogits, true, false)?;
                sgd_step(&mut mpn.heads[h], &grads, &mut head_opts[h])?;
            }
            let trunk_grads = mpn.trunk.backward(&trunk_tape, &dfeat, true, false)?;
            sgd_step(&mut mpn.trunk, &trunk_grads, &mut trunk_opt)?;
        }
        curve.push(epoch_loss / batches.max(1) as f64);
    }
    mpn.trunk.set_train(false);
    Ok(curve)
}

#[derive(Debug, Clone)]
pub struct Prediction {
    /// Per-head probability rows, each [n, N_i].
    pub probs: Vec<Tensor<Real>>,
    /// Per-sample argmax tuples, each of length H.
    pub argmax: Vec<Vec<usize>>,
}

/// Per-head softmax probabilities + argmax tuples. When a PEN is supplied
/// the input is x' and the MPN consumes the estimated perturbation.
pub fn predict(
    mpn: &MpnModel,
    pen: Option<&Network<Real>>,
    batch: &Tensor<Real>,
) -> Result<Prediction> {
    let n = batch.shape()[0];
    mpn.check_input(&batch.shape()[1..])?;
    let owned;
    let z = match pen {
        Some(pen) => {
            owned = pen.predict(batch)?;
            &owned
        }
        None => batch,
    };
    let (features, _) = mpn.trunk.eval_forward(z)?;
    let feat_batch = features.reshape(vec![n, TRUNK_DIM, 1, 1]);
    let mut probs = Vec::with_capacity(mpn.heads.len());
    for head in &mpn.heads {
        let logits = head.predict(&feat_batch)?;
        probs.push(softmax(&logits));
    }
    let mut tuples = Vec::with_capacity(n);
    for i in 0..n {
        let tuple = probs
            .iter()
            .map(|p| {
                let k = p.shape()[1];
                argmax(&p.data()[i * k..(i + 1) * k])
            })
            .collect();
        tuples.push(tuple);
    }
    Ok(Prediction {
        probs,
        argmax: tuples,
    })
}

/// DnCNN-style residual estimator: conv+relu, (depth-2) x conv+BN+relu,
/// final conv back to the input channel count, zero-initialized so the
/// initial estimate is exactly zero.
pub fn build_pen(
    input_shape: &[usize],
    depth: usize,
    channels: usize,
    seed: u64,
) -> Result<Network<Real>> {
    if depth < 3 {
        return Err(Error::config(format!("PEN depth {depth} < 3")));
    }
    if input_shape.len() != 3 {
        return Err(Error::config("PEN input shape must be [C,H,W]"));
    }
    let c = input_shape[0];
    let relu = LayerSpec::Activation { act: ActKind::Relu };
    let mut specs = vec![
        LayerSpec::Conv2d {
            in_ch: c,
            out_ch: channels,
            kernel: 3,
            stride: 1,
        },
        relu,
    ];
    for _ in 0..depth - 2 {
        specs.push(LayerSpec::Conv2d {
            in_ch: channels,
            out_ch: channels,
            kernel: 3,
            stride: 1,
        });
        specs.push(LayerSpec::Batchnorm2d { channels });
        specs.push(relu);
    }
    specs.push(LayerSpec::Conv2d {
        in_ch: channels,
        out_ch: c,
        kernel: 3,
        stride: 1,
    });
    let mut net = instantiate(&specs, input_shape, seed)?;
    let last = net.layers.len() - 1;
    for p in net.layers[last].params.iter_mut() {
        for v in p.data_mut() {
            *v = 0.0;
        }
    }
    Ok(net)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JointTrainConfig {
    pub beta: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub mpn_lr: f64,
    pub pen_lr: f64,
    pub momentum: f64,
    pub seed: u64,
}

impl Default for JointTrainConfig {
    fn default() -> Self {
        JointTrainConfig {
            beta: 1.0,
            epochs: 50,
            batch_size: 256,
            mpn_lr: 1e-3,
            pen_lr: 1e-5,
            momentum: 0.9,
            seed: 0,
        }
    }
}

/// A denoising pair: attacked input and the true perturbation.
#[derive(Debug, Clone)]
pub struct DenoisePair {
    pub x_adv: Tensor<Real>,
    pub delta: Tensor<Real>,
}

fn stack_pairs(pairs: &[&DenoisePair]) -> Result<(Tensor<Real>, Tensor<Real>)> {
    let first = pairs
        .first()
        .ok_or_else(|| Error::config("empty denoising batch"))?;
    let shape = first.x_adv.shape();
    let mut batch_shape = vec![pairs.len()];
    batch_shape.extend_from_slice(shape);
    let mut xs = Vec::new();
    let mut ds = Vec::new();
    for p in pairs {
        if p.x_adv.shape() != shape || p.delta.shape() != shape {
            return Err(Error::config("inconsistent pair shapes"));
        }
        xs.extend_from_slice(p.x_adv.data());
        ds.extend_from_slice(p.delta.data());
    }
    Ok((
        Tensor::new(batch_shape.clone(), xs),
        Tensor::new(batch_shape, ds),
    ))
}

/// Minimize MAE(g(x'), delta) with SGD + cosine schedule. Returns the mean
/// training MAE per epoch.
pub fn pretrain_pen(
    pen: &mut Network<Real>,
    pairs: &[DenoisePair],
    epochs: usize,
    lr: f64,
    batch_size: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    if pairs.is_empty() {
        return Err(Error::config("no denoising pairs"));
    }
    if epochs == 0 || batch_size == 0 {
        return Err(Error::config("epochs and batch size must be positive"));
    }
    let n = pairs.len();
    let steps = epochs * n.div_ceil(batch_size);
    let mut opt = OptimizerState::new(pen, lr, 0.9, 0.0, steps);
    let mut order: Vec<usize> = (0..n).collect();
    let mut curve = Vec::with_capacity(epochs);
    pen.set_train(true);
    for epoch in 0..epochs {
        let mut rng = stream_rng(seed, 600_000 + epoch as u64);
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(batch_size) {
            let refs: Vec<&DenoisePair> = chunk.iter().map(|&i| &pairs[i]).collect();
            let (xs, deltas) = stack_pairs(&refs)?;
            let (pred, tape) = pen.forward(&xs)?;
            let (loss, dpred) = mae(&pred, &deltas)?;
            if !(loss as f64).is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    detail: format!("PEN MAE {loss}"),
                });
            }
            epoch_loss += loss as f64;
            batches += 1;
            let grads = pen.backward(&tape, &dpred, true, false)?;
            sgd_step(pen, &grads, &mut opt)?;
        }
        curve.push(epoch_loss / batches.max(1) as f64);
    }
    pen.set_train(false);
    Ok(curve)
}

/// Mean MAE of the PEN against true perturbations, in eval mode.
pub fn pen_validation_mae(pen: &Network<Real>, pairs: &[DenoisePair]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::config("no validation pairs"));
    }
    let refs: Vec<&DenoisePair> = pairs.iter().collect();
    let (xs, deltas) = stack_pairs(&refs)?;
    let pred = pen.predict(&xs)?;
    let (loss, _) = mae(&pred, &deltas)?;
    Ok(loss as f64)
}

/// Jointly minimize `beta * MAE(g(x'), delta) + sum_i CE(h_i(g(x')), y_i)`.
/// Gradients reach the PEN from both terms. Labeled pairs must align with
/// the MPN's schema. Returns the mean joint objective per epoch.
pub fn train_joint(
    mpn: &mut MpnModel,
    pen: &mut Network<Real>,
    pairs: &[DenoisePair],
    labels: &[Vec<usize>],
    cfg: &JointTrainConfig,
) -> Result<Vec<f64>> {
    if cfg.beta <= 0.0 {
        return Err(Error::config(format!("beta {} must be > 0", cfg.beta)));
    }
    if pairs.is_empty() || pairs.len() != labels.len() {
        return Err(Error::config("joint training needs aligned pairs and labels"));
    }
    let heads = mpn.schema.class_counts().len();
    for y in labels {
        if y.len() != heads {
            return Err(Error::config("label tuple length does not match schema"));
        }
    }
    let n = pairs.len();
    let steps = cfg.epochs * n.div_ceil(cfg.batch_size);
    let mut pen_opt = OptimizerState::new(pen, cfg.pen_lr, cfg.momentum, 0.0, steps);
    let mut trunk_opt = OptimizerState::new(&mpn.trunk, cfg.mpn_lr, cfg.momentum, 0.0, steps);
    let mut head_opts: Vec<OptimizerState<Real>> = mpn
        .heads
        .iter()
        .map(|h| OptimizerState::new(h, cfg.mpn_lr, cfg.momentum, 0.0, steps))
        .collect();
    let mut order: Vec<usize> = (0..n).collect();
    let mut curve = Vec::with_capacity(cfg.epochs);
    pen.set_train(true);
    mpn.trunk.set_train(true);
    let beta = cfg.beta as Real;
    for epoch in 0..cfg.epochs {
        let mut rng = stream_rng(cfg.seed, 700_000 + epoch as u64);
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let refs: Vec<&DenoisePair> = chunk.iter().map(|&i| &pairs[i]).collect();
            let (xs, deltas) = stack_pairs(&refs)?;
            let mut batch_labels = vec![Vec::with_capacity(chunk.len()); heads];
            for &i in chunk {
                for (h, &yi) in labels[i].iter().enumerate() {
                    batch_labels[h].push(yi);
                }
            }
            let (est, pen_tape) = pen.forward(&xs)?;
            let (mae_loss, dmae) = mae(&est, &deltas)?;
            let (ce_loss, trunk_tape, head_info, dfeat) =
                mpn_batch_loss(mpn, &est, &batch_labels, true)?;
            let total = cfg.beta * mae_loss as f64 + ce_loss;
            if !total.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    detail: format!("joint objective {total}"),
                });
            }
            epoch_loss += total;
            batches += 1;
            for (h, (tape, dlogits)) in head_info.iter().enumerate() {
                let grads = mpn.heads[h].backward(tape, dlogits, true, false)?;
                sgd_step(&mut mpn.heads[h], &grads, &mut head_opts[h])?;
            }
            let trunk_grads = mpn.trunk.backward(&trunk_tape, &dfeat, true, true)?;
            let d_est_ce = trunk_grads
                .input
                .clone()
                .ok_or_else(|| Error::numeric("joint", "missing trunk input gradient"))?;
            sgd_step(&mut mpn.trunk, &trunk_grads, &mut trunk_opt)?;
            let d_est = dmae.scale(beta).add(&d_est_ce);
            let pen_grads = pen.backward(&pen_tape, &d_est, true, false)?;
            sgd_step(pen, &pen_grads, &mut pen_opt)?;
        }
        curve.push(epoch_loss / batches.max(1) as f64);
    }
    pen.set_train(false);
    mpn.trunk.set_train(false);
    Ok(curve)
}

/// Eq.-1 objective value at the current parameters, in eval mode.
pub fn mpn_loss(mpn: &mut MpnModel, ds: &ParsingDataset) -> Result<f64> {
    let refs: Vec<&ParsingExample> = ds.examples.iter().collect();
    let (batch, labels) = stack_examples(&refs)?;
    let (loss, _, _, _) = mpn_batch_loss(mpn, &batch, &labels, false)?;
    Ok(loss)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::redset::{DatasetManifest, InputFormat};
    use crate::victim::{attribute_grid, ArchFamily};
    use rand::Rng;

    fn schema3() -> AttributeSchema {
        AttributeSchema::from_grid(&attribute_grid(&[ArchFamily::Resnet9])).unwrap()
    }

    fn manifest() -> DatasetManifest {
        DatasetManifest {
            format: InputFormat::Perturbation,
            attack_hash: String::new(),
            zoo_hash: String::new(),
            split_seed: 0,
            retain_failures: false,
            balanced: false,
            per_victim: Vec::new(),
            example_count: 0,
        }
    }

    #[test]
    fn head_shapes_match_schema() {
        let schema = schema3();
        let mpn = build_mpn(Backbone::Convnet4, &schema, &[3, 32, 32], 1).unwrap();
        assert_eq!(mpn.heads.len(), 3);
        for (head, n) in mpn.heads.iter().zip(schema.class_counts()) {
            assert_eq!(head.class_count(), n);
        }
    }

    #[test]
    fn mlp_parameter_count_matches_hand_count() {
        // flatten -> 3072x128 + 128 -> 128x128 + 128, heads 3 x (128x3 + 3)
        let schema = schema3();
        let mpn = build_mpn(Backbone::Mlp, &schema, &[3, 32, 32], 1).unwrap();
        let expected = (3072 * 128 + 128) + (128 * 128 + 128) + 3 * (128 * 3 + 3);
        assert_eq!(mpn.param_count(), expected);
    }

    #[test]
    fn merged_schema_gets_four_heads() {
        let grid = attribute_grid(&[ArchFamily::Resnet9, ArchFamily::Vgg11]);
        let schema = AttributeSchema::from_grid(&grid).unwrap();
        let mpn = build_mpn(Backbone::Mlp, &schema, &[3, 16, 16], 1).unwrap();
        assert_eq!(mpn.heads.len(), 4);
        assert_eq!(mpn.heads[0].class_count(), 2);
    }

    #[test]
    fn initial_loss_is_near_sum_log_classes() {
        let schema = schema3();
        let mut mpn = build_mpn(Backbone::Mlp, &schema, &[1, 4, 4], 3).unwrap();
        let mut rng = stream_rng(4, 0);
        let examples: Vec<ParsingExample> = (0..30)
            .map(|i| ParsingExample {
                z: Tensor::new(vec![1, 4, 4], (0..16).map(|_| rng.gen_range(-0.05..0.05)).collect()),
                y: vec![i % 3, (i / 3) % 3, (i / 9) % 3],
            })
            .collect();
        let ds = ParsingDataset {
            examples,
            schema,
            format: InputFormat::Perturbation,
            manifest: manifest(),
        };
        let loss = mpn_loss(&mut mpn, &ds).unwrap();
        let expected = 3.0 * (3.0f64).ln();
        assert!((loss - expected).abs() < 0.15, "loss {loss} vs {expected}");
    }

    #[test]
    fn degenerate_dataset_is_memorized() {
        // constant labels with distinctive inputs: CE -> ~0
        let schema = schema3();
        let mut mpn = build_mpn(Backbone::Mlp, &schema, &[1, 4, 4], 5).unwrap();
        let examples: Vec<ParsingExample> = (0..24)
            .map(|i| ParsingExample {
                z: Tensor::full(vec![1, 4, 4], (i % 3) as Real * 0.3 + 0.1),
                y: vec![i % 3, i % 3, i % 3],
            })
            .collect();
        let ds = ParsingDataset {
            examples,
            schema,
            format: InputFormat::Perturbation,
            manifest: manifest(),
        };
        let recipe = MpnRecipe {
            epochs: 60,
            batch_size: 8,
            lr: 0.05,
            weight_decay: 0.0,
            seed: 1,
            ..MpnRecipe::default()
        };
        let curve = train_mpn(&mut mpn, &ds, &recipe).unwrap();
        assert!(curve.last().unwrap() < &0.05, "final loss {}", curve.last().unwrap());
        let refs: Vec<&ParsingExample> = ds.examples.iter().collect();
        let (batch, _) = stack_examples(&refs).unwrap();
        let pred = predict(&mpn, None, &batch).unwrap();
        for (i, tuple) in pred.argmax.iter().enumerate() {
            assert_eq!(tuple, &ds.examples[i].y);
        }
    }

    #[test]
    fn shared_trunk_isolates_heads() {
        let schema = schema3();
        let mpn = build_mpn(Backbone::Mlp, &schema, &[1, 4, 4], 7).unwrap();
        let batch = Tensor::full(vec![2, 1, 4, 4], 0.3);
        let base = predict(&mpn, None, &batch).unwrap();
        // perturbing head 0 leaves heads 1,2 unchanged
        let mut poked = mpn.clone();
        for v in poked.heads[0].layers[1].params[0].data_mut() {
            *v += 0.5;
        }
        let after = predict(&poked, None, &batch).unwrap();
        assert_ne!(base.probs[0].data(), after.probs[0].data());
        assert_eq!(base.probs[1].data(), after.probs[1].data());
        assert_eq!(base.probs[2].data(), after.probs[2].data());
        // perturbing the trunk changes every head
        let mut poked = mpn.clone();
        for v in poked.trunk.layers[1].params[0].data_mut() {
            *v += 0.1;
        }
        let after = predict(&poked, None, &batch).unwrap();
        for h in 0..3 {
            assert_ne!(base.probs[h].data(), after.probs[h].data());
        }
    }

    #[test]
    fn probabilities_sum_to_one_and_batch_equals_singles() {
        let schema = schema3();
        let mpn = build_mpn(Backbone::Mlp, &schema, &[1, 4, 4], 9).unwrap();
        let mut rng = stream_rng(11, 0);
        let batch: Tensor<Real> =
            Tensor::new(vec![3, 1, 4, 4], (0..48).map(|_| rng.gen_range(0.0..1.0)).collect());
        let joint = predict(&mpn, None, &batch).unwrap();
        for p in &joint.probs {
            let k = p.shape()[1];
            for i in 0..p.shape()[0] {
                let s: Real = p.data()[i * k..(i + 1) * k].iter().sum();
                assert!((s - 1.0).abs() < 1e-6);
            }
        }
        for i in 0..3 {
            let single = Tensor::new(
                vec![1, 1, 4, 4],
                batch.data()[i * 16..(i + 1) * 16].to_vec(),
            );
            let one = predict(&mpn, None, &single).unwrap();
            assert_eq!(one.argmax[0], joint.argmax[i]);
            for h in 0..3 {
                for (a, b) in one.probs[h]
                    .data()
                    .iter()
                    .zip(&joint.probs[h].data()[i * 3..(i + 1) * 3])
                {
                    assert!((a - b).abs() < 1e-5);
                }
            }
        }
    }

    #[test]
    fn pen_shapes_and_zero_init() {
        for hw in [4usize, 6] {
            let pen = build_pen(&[3, hw, hw], 5, 8, 2).unwrap();
            let x = Tensor::full(vec![2, 3, hw, hw], 0.5);
            let out = pen.predict(&x).unwrap();
            assert_eq!(out.shape(), x.shape());
            // zero final layer: initial estimate exactly zero
            assert_eq!(out.norm_linf(), 0.0);
        }
        assert!(build_pen(&[3, 4, 4], 2, 8, 2).is_err());
    }

    #[test]
    fn pen_learns_constant_shift() {
        // x' = x + 0.1: the denoiser should beat the zero predictor
        let mut rng = stream_rng(13, 0);
        let pairs: Vec<DenoisePair> = (0..16)
            .map(|_| {
                let x: Tensor<Real> =
                    Tensor::new(vec![1, 4, 4], (0..16).map(|_| rng.gen_range(0.0..0.8)).collect());
                DenoisePair {
                    x_adv: x.map(|v| v + 0.1),
                    delta: Tensor::full(vec![1, 4, 4], 0.1),
                }
            })
            .collect();
        let mut pen = build_pen(&[1, 4, 4], 3, 4, 1).unwrap();
        let before = pen_validation_mae(&pen, &pairs).unwrap();
        assert!((before - 0.1).abs() < 1e-6); // zero predictor baseline
        pretrain_pen(&mut pen, &pairs, 40, 0.01, 8, 3).unwrap();
        let after = pen_validation_mae(&pen, &pairs).unwrap();
        assert!(after < before, "MAE {after} did not beat baseline {before}");
        // determinism: same seeds, same trajectory
        let mut pen2 = build_pen(&[1, 4, 4], 3, 4, 1).unwrap();
        let c1 = pretrain_pen(&mut pen2, &pairs, 5, 0.01, 8, 3).unwrap();
        let mut pen3 = build_pen(&[1, 4, 4], 3, 4, 1).unwrap();
        let c2 = pretrain_pen(&mut pen3, &pairs, 5, 0.01, 8, 3).unwrap();
        assert_eq!(c1, c2);
    }

    #[test]
    fn joint_training_decreases_objective() {
        let schema = schema3();
        let mut mpn = build_mpn(Backbone::Mlp, &schema, &[1, 4, 4], 21).unwrap();
        let mut pen = build_pen(&[1, 4, 4], 3, 4, 22).unwrap();
        let mut rng = stream_rng(23, 0);
        let mut pairs = Vec::new();
        let mut labels = Vec::new();
        for i in 0..18 {
            let y = vec![i % 3, (i / 3) % 3, (i / 9) % 3];
            let x: Tensor<Real> =
                Tensor::new(vec![1, 4, 4], (0..16).map(|_| rng.gen_range(0.2..0.8)).collect());
            let delta = Tensor::full(vec![1, 4, 4], 0.02 * (i % 3) as Real);
            pairs.push(DenoisePair {
                x_adv: x.add(&delta),
                delta,
            });
            labels.push(y);
        }
        let cfg = JointTrainConfig {
            epochs: 15,
            batch_size: 6,
            seed: 3,
            ..JointTrainConfig::default()
        };
        let curve = train_joint(&mut mpn, &mut pen, &pairs, &labels, &cfg).unwrap();
        assert!(
            curve.last().unwrap() < &(curve[0] + 1e-3),
            "joint objective rose: {curve:?}"
        );
        let bad = JointTrainConfig {
            beta: 0.0,
            ..JointTrainConfig::default()
        };
        assert!(train_joint(&mut mpn, &mut pen, &pairs, &labels, &bad).is_err());
    }
}
