//! Layer-sequence networks with reverse-mode gradients.

use super::layer::*;
use crate::error::{Error, Result};
use crate::rng::stream_rng;
use crate::tensor::{Scalar, Tensor};
use rand::Rng;
use serde::{Deserialize, Serialize};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// One node of the network: spec plus its parameters and pruning masks.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Layer<F: Scalar> {
    pub spec: LayerSpec,
    /// conv/dense: [weight, bias]; batchnorm: [gamma, beta]; else empty.
    pub params: Vec<Tensor<F>>,
    /// Pruning mask over the weight (params[0]) when pruned; `None` means all-ones.
    pub weight_mask: Option<Tensor<F>>,
    /// batchnorm running statistics: [mean, var]; else empty.
    pub running: Vec<Tensor<F>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Network<F: Scalar> {
    /// Input shape per example, `[C, H, W]`.
    pub input_shape: Vec<usize>,
    pub layers: Vec<Layer<F>>,
    pub train_mode: bool,
}

/// Per-node shape as data flows through the network: `Chw` before flatten,
/// `Flat` after.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeShape {
    Chw(usize, usize, usize),
    Flat(usize),
}

impl NodeShape {
    pub fn numel(&self) -> usize {
        match *self {
            NodeShape::Chw(c, h, w) => c * h * w,
            NodeShape::Flat(d) => d,
        }
    }
}

/// Recorded forward pass: every node output plus per-layer auxiliaries.
pub struct Tape<F> {
    pub input: Tensor<F>,
    pub outputs: Vec<Tensor<F>>,
    pub aux: Vec<Aux<F>>,
    pub shapes: Vec<NodeShape>,
    pub batch: usize,
}

pub enum Aux<F> {
    None,
    MaxPool(Vec<u32>),
    /// Saved per-channel batch statistics (train mode) or running stats (eval).
    BatchNorm { mean: Vec<F>, var: Vec<F> },
}

/// Gradients from one backward pass, aligned with `Network::layers`.
pub struct Gradients<F> {
    pub params: Vec<Vec<Tensor<F>>>,
    pub input: Option<Tensor<F>>,
}

impl<F: Scalar> Gradients<F> {
    pub fn zeros_like(net: &Network<F>) -> Self {
        Gradients {
            params: net
                .layers
                .iter()
                .map(|l| l.params.iter().map(|p| Tensor::zeros(p.shape().to_vec())).collect())
                .collect(),
            input: None,
        }
    }

    pub fn add_assign(&mut self, other: &Gradients<F>) {
        for (a, b) in self.params.iter_mut().zip(&other.params) {
            for (x, y) in a.iter_mut().zip(b) {
                x.add_assign(y);
            }
        }
    }

    pub fn scale_in_place(&mut self, s: F) {
        for layer in self.params.iter_mut() {
            for t in layer.iter_mut() {
                for v in t.data_mut() {
                    *v = *v * s;
                }
            }
        }
    }
}

/// Trace the shape through the spec list, validating consistency.
pub fn infer_shapes(specs: &[LayerSpec], input: &[usize]) -> Result<Vec<NodeShape>> {
    if input.len() != 3 {
        return Err(Error::config(format!(
            "input shape must be [C, H, W], got {input:?}"
        )));
    }
    let mut cur = NodeShape::Chw(input[0], input[1], input[2]);
    let mut shapes = Vec::with_capacity(specs.len());
    for (i, spec) in specs.iter().enumerate() {
        let prev_name = if i == 0 {
            "input".to_string()
        } else {
            format!("layer {} ({})", i - 1, specs[i - 1].kind_name())
        };
        let here = format!("layer {} ({})", i, spec.kind_name());
        let mismatch = |detail: String| Error::ShapeMismatch {
            a: prev_name.clone(),
            b: here.clone(),
            detail,
        };
        cur = match *spec {
            LayerSpec::Conv2d {
                in_ch,
                out_ch,
                kernel,
                stride,
            } => match cur {
                NodeShape::Chw(c, h, w) => {
                    if c != in_ch {
                        return Err(mismatch(format!("expected {in_ch} channels, found {c}")));
                    }
                    let pad = conv_padding(kernel)?;
                    NodeShape::Chw(
                        out_ch,
                        conv_out_size(h, kernel, stride, pad),
                        conv_out_size(w, kernel, stride, pad),
                    )
                }
                NodeShape::Flat(_) => {
                    return Err(mismatch("conv2d requires CHW input".into()));
                }
            },
            LayerSpec::Dense { in_dim, out_dim } => {
                let d = cur.numel();
                if d != in_dim {
                    return Err(mismatch(format!("expected {in_dim} features, found {d}")));
                }
                NodeShape::Flat(out_dim)
            }
            LayerSpec::Batchnorm2d { channels } => match cur {
                NodeShape::Chw(c, h, w) if c == channels => NodeShape::Chw(c, h, w),
                NodeShape::Chw(c, ..) => {
                    return Err(mismatch(format!("expected {channels} channels, found {c}")));
                }
                NodeShape::Flat(_) => {
                    return Err(mismatch("batchnorm2d requires CHW input".into()));
                }
            },
            LayerSpec::Avgpool { kernel, stride } | LayerSpec::Maxpool { kernel, stride } => {
                match cur {
                    NodeShape::Chw(c, h, w) => {
                        let oh = pooled_size(h, kernel, stride);
                        let ow = pooled_size(w, kernel, stride);
                        if oh == 0 || ow == 0 {
                            return Err(mismatch(format!(
                                "pool kernel {kernel} exceeds spatial size {h}x{w}"
                            )));
                        }
                        NodeShape::Chw(c, oh, ow)
                    }
                    NodeShape::Flat(_) => return Err(mismatch("pool requires CHW input".into())),
                }
            }
            LayerSpec::Activation { .. } => cur,
            LayerSpec::Flatten => NodeShape::Flat(cur.numel()),
            LayerSpec::ResidualAdd { from } => {
                if from >= i {
                    return Err(Error::config(format!(
                        "residual-add at node {i} references node {from}, which is not earlier"
                    )));
                }
                if shapes[from] != cur {
                    return Err(mismatch(format!(
                        "residual-add shape {:?} != skip source shape {:?}",
                        cur, shapes[from]
                    )));
                }
                cur
            }
        };
        shapes.push(cur);
    }
    Ok(shapes)
}

/// Build a network with Kaiming-uniform weights (fan-in), zero biases,
/// batchnorm scale 1 / shift 0, all-ones masks. Reproducible from `seed`.
pub fn instantiate<F: Scalar>(
    specs: &[LayerSpec],
    input_shape: &[usize],
    seed: u64,
) -> Result<Network<F>> {
    infer_shapes(specs, input_shape)?;
    let mut layers = Vec::with_capacity(specs.len());
    for (i, spec) in specs.iter().enumerate() {
        let mut rng = stream_rng(seed, i as u64);
        let mut kaiming = |shape: Vec<usize>, fan_in: usize| {
            let bound = (6.0 / fan_in as f64).sqrt();
            let n: usize = shape.iter().product();
            let data: Vec<F> = (0..n)
                .map(|_| F::from_f64(rng.gen_range(-bound..bound)))
                .collect();
            Tensor::new(shape, data)
        };
        let (params, running) = match *spec {
            LayerSpec::Conv2d {
                in_ch,
                out_ch,
                kernel,
                ..
            } => (
                vec![
                    kaiming(vec![out_ch, in_ch, kernel, kernel], in_ch * kernel * kernel),
                    Tensor::zeros(vec![out_ch]),
                ],
                vec![],
            ),
            LayerSpec::Dense { in_dim, out_dim } => (
                vec![kaiming(vec![out_dim, in_dim], in_dim), Tensor::zeros(vec![out_dim])],
                vec![],
            ),
            LayerSpec::Batchnorm2d { channels } => (
                vec![Tensor::ones(vec![channels]), Tensor::zeros(vec![channels])],
                vec![Tensor::zeros(vec![channels]), Tensor::ones(vec![channels])],
            ),
            _ => (vec![], vec![]),
        };
        layers.push(Layer {
            spec: *spec,
            params,
            weight_mask: None,
            running,
        });
    }
    Ok(Network {
        input_shape: input_shape.to_vec(),
        layers,
        train_mode: false,
    })
}

impl<F: Scalar> Network<F> {
    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(|l| l.spec).collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .flat_map(|l| l.params.iter())
            .map(|p| p.len())
            .sum()
    }

    pub fn class_count(&self) -> usize {
        match infer_shapes(&self.specs(), &self.input_shape)
            .expect("stored specs are consistent")
            .last()
        {
            Some(NodeShape::Flat(d)) => *d,
            Some(NodeShape::Chw(c, h, w)) => c * h * w,
            None => 0,
        }
    }

    pub fn set_train(&mut self, train: bool) {
        self.train_mode = train;
    }

    /// Forward a batch shaped `[N, C, H, W]`; returns logits `[N, K]` and the
    /// tape. Train mode updates batchnorm running statistics.
    pub fn forward(&mut self, batch: &Tensor<F>) -> Result<(Tensor<F>, Tape<F>)> {
        let training = self.train_mode;
        let (logits, tape, updates) = forward_core(&self.layers, &self.input_shape, batch, training)?;
        for (i, mean, var) in updates {
            self.layers[i].running[0] = mean;
            self.layers[i].running[1] = var;
        }
        Ok((logits, tape))
    }

    /// Eval-mode forward with tape; never mutates running statistics.
    pub fn eval_forward(&self, batch: &Tensor<F>) -> Result<(Tensor<F>, Tape<F>)> {
        let (logits, tape, _) = forward_core(&self.layers, &self.input_shape, batch, false)?;
        Ok((logits, tape))
    }

    /// Eval-mode logits without mutating batchnorm statistics.
    pub fn predict(&self, batch: &Tensor<F>) -> Result<Tensor<F>> {
        Ok(self.eval_forward(batch)?.0)
    }

    /// Reverse-mode pass from `dlogits`. Computes parameter gradients when
    /// `want_params` and the input-batch gradient when `want_input`.
    /// Masked weight entries receive zero gradient.
    pub fn backward(
        &self,
        tape: &Tape<F>,
        dlogits: &Tensor<F>,
        want_params: bool,
        want_input: bool,
    ) -> Result<Gradients<F>> {
        let n = tape.batch;
        let nl = self.layers.len();
        let mut dout: Vec<Option<Tensor<F>>> = vec![None; nl];
        if nl == 0 {
            return Ok(Gradients {
                params: vec![],
                input: want_input.then(|| dlogits.clone()),
            });
        }
        dout[nl - 1] = Some(dlogits.clone());
        let mut param_grads: Vec<Vec<Tensor<F>>> = self
            .layers
            .iter()
            .map(|l| {
                l.params
                    .iter()
                    .map(|p| Tensor::zeros(p.shape().to_vec()))
                    .collect()
            })
            .collect();
        let mut dinput: Option<Tensor<F>> = None;
        for i in (0..nl).rev() {
            let g = match dout[i].take() {
                Some(g) => g,
                None => continue, // no gradient reached this node
            };
            let layer = &self.layers[i];
            let x: &Tensor<F> = if i == 0 { &tape.input } else { &tape.outputs[i - 1] };
            let in_shape = if i == 0 {
                NodeShape::Chw(
                    self.input_shape[0],
                    self.input_shape[1],
                    self.input_shape[2],
                )
            } else {
                tape.shapes[i - 1]
            };
            let dx: Tensor<F> = match layer.spec {
                LayerSpec::Conv2d {
                    in_ch,
                    out_ch,
                    kernel,
                    stride,
                } => {
                    let (h, w) = match in_shape {
                        NodeShape::Chw(_, h, w) => (h, w),
                        _ => unreachable!(),
                    };
                    let d = ConvDims::new(n, in_ch, h, w, out_ch, kernel, stride)?;
                    if want_params {
                        let (mut dw, db) = conv2d_backward_params(x.data(), g.data(), &d);
                        if let Some(mask) = &layer.weight_mask {
                            for (v, m) in dw.iter_mut().zip(mask.data()) {
                                *v = *v * *m;
                            }
                        }
                        param_grads[i][0]
                            .add_assign(&Tensor::new(layer.params[0].shape().to_vec(), dw));
                        param_grads[i][1].add_assign(&Tensor::new(vec![out_ch], db));
                    }
                    Tensor::new(
                        vec![n, in_ch, h, w],
                        conv2d_backward_input(g.data(), layer.params[0].data(), &d),
                    )
                }
                LayerSpec::Dense { in_dim, out_dim } => {
                    let (pg, dx) = dense_backward(
                        x.data(),
                        layer.params[0].data(),
                        g.data(),
                        n,
                        in_dim,
                        out_dim,
                        want_params,
                    );
                    if let Some((mut dw, db)) = pg {
                        if let Some(mask) = &layer.weight_mask {
                            for (v, m) in dw.iter_mut().zip(mask.data()) {
                                *v = *v * *m;
                            }
                        }
                        param_grads[i][0]
                            .add_assign(&Tensor::new(vec![out_dim, in_dim], dw));
                        param_grads[i][1].add_assign(&Tensor::new(vec![out_dim], db));
                    }
                    Tensor::new(x.shape().to_vec(), dx)
                }
                LayerSpec::Batchnorm2d { channels } => {
                    let (h, w) = match in_shape {
                        NodeShape::Chw(_, h, w) => (h, w),
                        _ => unreachable!(),
                    };
                    let (mean, var) = match &tape.aux[i] {
                        Aux::BatchNorm { mean, var } => (mean, var),
                        _ => unreachable!(),
                    };
                    let (dg, db, dx) = bn_backward(
                        x,
                        &g,
                        layer.params[0].data(),
                        mean,
                        var,
                        n,
                        channels,
                        h,
                        w,
                        self.train_mode,
                    );
                    if want_params {
                        param_grads[i][0].add_assign(&Tensor::new(vec![channels], dg));
                        param_grads[i][1].add_assign(&Tensor::new(vec![channels], db));
                    }
                    dx
                }
                LayerSpec::Activation { act } => Tensor::new(
                    x.shape().to_vec(),
                    activation_backward(x.data(), tape.outputs[i].data(), g.data(), act),
                ),
                LayerSpec::Maxpool { kernel, stride } => {
                    let (c, h, w) = match in_shape {
                        NodeShape::Chw(c, h, w) => (c, h, w),
                        _ => unreachable!(),
                    };
                    let d = PoolDims::new(n, c, h, w, kernel, stride);
                    let arg = match &tape.aux[i] {
                        Aux::MaxPool(a) => a,
                        _ => unreachable!(),
                    };
                    Tensor::new(vec![n, c, h, w], maxpool_backward(g.data(), arg, &d))
                }
                LayerSpec::Avgpool { kernel, stride } => {
                    let (c, h, w) = match in_shape {
                        NodeShape::Chw(c, h, w) => (c, h, w),
                        _ => unreachable!(),
                    };
                    let d = PoolDims::new(n, c, h, w, kernel, stride);
                    Tensor::new(vec![n, c, h, w], avgpool_backward(g.data(), &d))
                }
                LayerSpec::Flatten => {
                    let shape = match in_shape {
                        NodeShape::Chw(c, h, w) => vec![n, c, h, w],
                        NodeShape::Flat(d) => vec![n, d],
                    };
                    g.clone().reshape(shape)
                }
                LayerSpec::ResidualAdd { from } => {
                    // identity on both branches
                    match &mut dout[from] {
                        Some(existing) => existing.add_assign(&g),
                        slot => *slot = Some(g.clone()),
                    }
                    g.clone()
                }
            };
            if i == 0 {
                if want_input {
                    match &mut dinput {
                        Some(existing) => existing.add_assign(&dx),
                        slot => *slot = Some(dx),
                    }
                }
            } else {
                match &mut dout[i - 1] {
                    Some(existing) => existing.add_assign(&dx),
                    slot => *slot = Some(dx),
                }
            }
        }
        Ok(Gradients {
            params: param_grads,
            input: dinput,
        })
    }

    /// Reapply pruning masks so masked weights are exactly zero.
    pub fn apply_masks(&mut self) {
        for layer in &mut self.layers {
            if let Some(mask) = &layer.weight_mask {
                let w = &mut layer.params[0];
                for (v, m) in w.data_mut().iter_mut().zip(mask.data()) {
                    *v = *v * *m;
                }
            }
        }
    }

    /// Fraction of nonzero entries among prunable (conv/dense) weights.
    pub fn nonzero_weight_fraction(&self) -> f64 {
        let mut total = 0usize;
        let mut nonzero = 0usize;
        for layer in &self.layers {
            if matches!(layer.spec, LayerSpec::Conv2d { .. } | LayerSpec::Dense { .. }) {
                total += layer.params[0].len();
                nonzero += layer.params[0].data().iter().filter(|v| **v != F::zero()).count();
            }
        }
        if total == 0 {
            1.0
        } else {
            nonzero as f64 / total as f64
        }
    }
}

type BnUpdate<F> = (usize, Tensor<F>, Tensor<F>);

fn forward_core<F: Scalar>(
    layers: &[Layer<F>],
    input_shape: &[usize],
    batch: &Tensor<F>,
    training: bool,
) -> Result<(Tensor<F>, Tape<F>, Vec<BnUpdate<F>>)> {
    let per = input_shape.iter().product::<usize>();
    if batch.shape().is_empty() || batch.shape()[0] * per != batch.len() {
        return Err(Error::ShapeMismatch {
            a: "batch".into(),
            b: "network input".into(),
            detail: format!(
                "batch shape {:?} incompatible with input shape {:?}",
                batch.shape(),
                input_shape
            ),
        });
    }
    let n = batch.shape()[0];
    let specs: Vec<LayerSpec> = layers.iter().map(|l| l.spec).collect();
    let shapes = infer_shapes(&specs, input_shape)?;
    let mut outputs: Vec<Tensor<F>> = Vec::with_capacity(layers.len());
    let mut aux: Vec<Aux<F>> = Vec::with_capacity(layers.len());
    let mut updates: Vec<BnUpdate<F>> = Vec::new();
    let mut cur_shape = NodeShape::Chw(input_shape[0], input_shape[1], input_shape[2]);
    for (i, layer) in layers.iter().enumerate() {
        let x: &Tensor<F> = if i == 0 { batch } else { &outputs[i - 1] };
        let (out, a) = match layer.spec {
            LayerSpec::Conv2d {
                in_ch,
                out_ch,
                kernel,
                stride,
            } => {
                let (h, w) = match cur_shape {
                    NodeShape::Chw(_, h, w) => (h, w),
                    _ => unreachable!(),
                };
                let d = ConvDims::new(n, in_ch, h, w, out_ch, kernel, stride)?;
                let out = conv2d_forward(x.data(), layer.params[0].data(), layer.params[1].data(), &d);
                (Tensor::new(vec![n, out_ch, d.oh, d.ow], out), Aux::None)
            }
            LayerSpec::Dense { in_dim, out_dim } => {
                let out = dense_forward(
                    x.data(),
                    layer.params[0].data(),
                    layer.params[1].data(),
                    n,
                    in_dim,
                    out_dim,
                );
                (Tensor::new(vec![n, out_dim], out), Aux::None)
            }
            LayerSpec::Batchnorm2d { channels } => {
                let (h, w) = match cur_shape {
                    NodeShape::Chw(_, h, w) => (h, w),
                    _ => unreachable!(),
                };
                let (out, a, upd) = bn_forward(x, layer, n, channels, h, w, training);
                if let Some((mean, var)) = upd {
                    updates.push((i, mean, var));
                }
                (out, a)
            }
            LayerSpec::Activation { act } => (
                Tensor::new(x.shape().to_vec(), activation_forward(x.data(), act)),
                Aux::None,
            ),
            LayerSpec::Maxpool { kernel, stride } => {
                let (c, h, w) = match cur_shape {
                    NodeShape::Chw(c, h, w) => (c, h, w),
                    _ => unreachable!(),
                };
                let d = PoolDims::new(n, c, h, w, kernel, stride);
                let (out, arg) = maxpool_forward(x.data(), &d);
                (Tensor::new(vec![n, c, d.oh, d.ow], out), Aux::MaxPool(arg))
            }
            LayerSpec::Avgpool { kernel, stride } => {
                let (c, h, w) = match cur_shape {
                    NodeShape::Chw(c, h, w) => (c, h, w),
                    _ => unreachable!(),
                };
                let d = PoolDims::new(n, c, h, w, kernel, stride);
                (
                    Tensor::new(vec![n, c, d.oh, d.ow], avgpool_forward(x.data(), &d)),
                    Aux::None,
                )
            }
            LayerSpec::Flatten => (x.clone().reshape(vec![n, cur_shape.numel()]), Aux::None),
            LayerSpec::ResidualAdd { from } => (x.add(&outputs[from]), Aux::None),
        };
        if !out.all_finite() {
            return Err(Error::numeric(
                format!("layer {i} ({})", layer.spec.kind_name()),
                "non-finite activation".to_string(),
            ));
        }
        outputs.push(out);
        aux.push(a);
        cur_shape = shapes[i];
    }
    let logits = outputs.last().cloned().unwrap_or_else(|| batch.clone());
    Ok((
        logits,
        Tape {
            input: batch.clone(),
            outputs,
            aux,
            shapes,
            batch: n,
        },
        updates,
    ))
}

#[allow(clippy::too_many_arguments)]
fn bn_forward<F: Scalar>(
    x: &Tensor<F>,
    layer: &Layer<F>,
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    training: bool,
) -> (Tensor<F>, Aux<F>, Option<(Tensor<F>, Tensor<F>)>) {
    let m = (n * h * w) as f64;
    let eps = F::from_f64(BN_EPS);
    let mut mean = vec![F::zero(); c];
    let mut var = vec![F::zero(); c];
    let mut update = None;
    if training {
        for ch in 0..c {
            let mut s = F::zero();
            for i in 0..n {
                let base = (i * c + ch) * h * w;
                for v in &x.data()[base..base + h * w] {
                    s = s + *v;
                }
            }
            mean[ch] = s / F::from_f64(m);
        }
        for ch in 0..c {
            let mu = mean[ch];
            let mut s = F::zero();
            for i in 0..n {
                let base = (i * c + ch) * h * w;
                for v in &x.data()[base..base + h * w] {
                    let d = *v - mu;
                    s = s + d * d;
                }
            }
            var[ch] = s / F::from_f64(m);
        }
        let mom = F::from_f64(BN_MOMENTUM);
        let keep = F::one() - mom;
        let mut new_mean = layer.running[0].clone();
        let mut new_var = layer.running[1].clone();
        for ch in 0..c {
            new_mean[ch] = keep * new_mean[ch] + mom * mean[ch];
            new_var[ch] = keep * new_var[ch] + mom * var[ch];
        }
        update = Some((new_mean, new_var));
    } else {
        mean.copy_from_slice(layer.running[0].data());
        var.copy_from_slice(layer.running[1].data());
    }
    let gamma = layer.params[0].data();
    let beta = layer.params[1].data();
    let mut out = vec![F::zero(); x.len()];
    for ch in 0..c {
        let istd = F::one() / (var[ch] + eps).sqrt();
        let g = gamma[ch];
        let b = beta[ch];
        let mu = mean[ch];
        for i in 0..n {
            let base = (i * c + ch) * h * w;
            for j in 0..h * w {
                out[base + j] = (x.data()[base + j] - mu) * istd * g + b;
            }
        }
    }
    (
        Tensor::new(vec![n, c, h, w], out),
        Aux::BatchNorm { mean, var },
        update,
    )
}

#[allow(clippy::too_many_arguments)]
fn bn_backward<F: Scalar>(
    x: &Tensor<F>,
    dout: &Tensor<F>,
    gamma: &[F],
    mean: &[F],
    var: &[F],
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    training: bool,
) -> (Vec<F>, Vec<F>, Tensor<F>) {
    let eps = F::from_f64(BN_EPS);
    let m = F::from_f64((n * h * w) as f64);
    let mut dgamma = vec![F::zero(); c];
    let mut dbeta = vec![F::zero(); c];
    let mut dx = vec![F::zero(); x.len()];
    for ch in 0..c {
        let mu = mean[ch];
        let istd = F::one() / (var[ch] + eps).sqrt();
        let mut sum_d = F::zero();
        let mut sum_dxhat = F::zero();
        for i in 0..n {
            let base = (i * c + ch) * h * w;
            for j in 0..h * w {
                let d = dout.data()[base + j];
                let xhat = (x.data()[base + j] - mu) * istd;
                sum_d = sum_d + d;
                sum_dxhat = sum_dxhat + d * xhat;
            }
        }
        dgamma[ch] = sum_dxhat;
        dbeta[ch] = sum_d;
        let g = gamma[ch];
        if training {
            for i in 0..n {
                let base = (i * c + ch) * h * w;
                for j in 0..h * w {
                    let d = dout.data()[base + j];
                    let xhat = (x.data()[base + j] - mu) * istd;
                    dx[base + j] =
                        g * istd * (d - sum_d / m - xhat * sum_dxhat / m);
                }
            }
        } else {
            for i in 0..n {
                let base = (i * c + ch) * h * w;
                for j in 0..h * w {
                    dx[base + j] = dout.data()[base + j] * g * istd;
                }
            }
        }
    }
    (dgamma, dbeta, Tensor::new(vec![n, c, h, w], dx))
}
