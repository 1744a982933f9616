//! Finite-difference validation of analytic gradients (f64 only).

use super::loss::{cross_entropy, cw_margin, dlr, mae, LossKind};
use super::network::Network;
use crate::error::Result;
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// (layer index, layer kind, max relative error over its parameters)
    pub per_layer: Vec<(usize, String, f64)>,
    pub input_rel_err: f64,
    pub max_rel_err: f64,
}

fn loss_value(
    net: &Network<f64>,
    x: &Tensor<f64>,
    labels: &[usize],
    kind: LossKind,
    target: Option<&Tensor<f64>>,
) -> Result<f64> {
    let mut n2 = net.clone();
    let (logits, _) = n2.forward(x)?;
    Ok(match kind {
        LossKind::CrossEntropy => cross_entropy(&logits, labels)?.0,
        LossKind::CwMargin => cw_margin(&logits, labels, 0.0)?.0,
        LossKind::Dlr => dlr(&logits, labels)?.0,
        LossKind::Mae => mae(&logits, target.expect("mae needs a target"))?.0,
    })
}

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / (a.abs() + n.abs()).max(1e-6)
}

/// Compare analytic gradients against central finite differences.
///
/// Checks every parameter entry and every input entry; report lists the max
/// relative error per layer. Report-only: thresholds live in the caller.
pub fn grad_check(
    net: &Network<f64>,
    input: &Tensor<f64>,
    labels: &[usize],
    kind: LossKind,
    target: Option<&Tensor<f64>>,
    eps_fd: f64,
) -> Result<GradCheckReport> {
    let mut work = net.clone();
    let (logits, tape) = work.forward(input)?;
    let dlogits = match kind {
        LossKind::CrossEntropy => cross_entropy(&logits, labels)?.1,
        LossKind::CwMargin => cw_margin(&logits, labels, 0.0)?.1,
        LossKind::Dlr => dlr(&logits, labels)?.1,
        LossKind::Mae => mae(&logits, target.expect("mae needs a target"))?.1,
    };
    let grads = net.backward(&tape, &dlogits, true, true)?;

    let mut per_layer = Vec::new();
    let mut max_all: f64 = 0.0;
    for (li, layer) in net.layers.iter().enumerate() {
        let mut worst: f64 = 0.0;
        for (pi, p) in layer.params.iter().enumerate() {
            for ei in 0..p.len() {
                if let Some(mask) = &layer.weight_mask {
                    if pi == 0 && mask[ei] == 0.0 {
                        continue; // masked entries carry zero gradient by contract
                    }
                }
                let mut plus = net.clone();
                plus.layers[li].params[pi][ei] += eps_fd;
                let lp = loss_value(&plus, input, labels, kind, target)?;
                let mut minus = net.clone();
                minus.layers[li].params[pi][ei] -= eps_fd;
                let lm = loss_value(&minus, input, labels, kind, target)?;
                let numeric = (lp - lm) / (2.0 * eps_fd);
                worst = worst.max(rel_err(grads.params[li][pi][ei], numeric));
            }
        }
        if !layer.params.is_empty() {
            max_all = max_all.max(worst);
            per_layer.push((li, layer.spec.kind_name().to_string(), worst));
        }
    }

    let analytic_input = grads.input.expect("input gradient requested");
    let mut input_worst: f64 = 0.0;
    for ei in 0..input.len() {
        let mut xp = input.clone();
        xp[ei] += eps_fd;
        let lp = loss_value(net, &xp, labels, kind, target)?;
        let mut xm = input.clone();
        xm[ei] -= eps_fd;
        let lm = loss_value(net, &xm, labels, kind, target)?;
        let numeric = (lp - lm) / (2.0 * eps_fd);
        input_worst = input_worst.max(rel_err(analytic_input[ei], numeric));
    }
    max_all = max_all.max(input_worst);

    Ok(GradCheckReport {
        per_layer,
        input_rel_err: input_worst,
        max_rel_err: max_all,
    })
}
