//! Attack and training losses with analytic logit gradients.
//!
//! Every function returns the mean loss over the batch together with the
//! gradient w.r.t. the logits (or raw output for MAE), already divided by
//! the batch size.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    CrossEntropy,
    CwMargin,
    Dlr,
    Mae,
}

/// Row-wise softmax probabilities.
pub fn softmax<F: Scalar>(logits: &Tensor<F>) -> Tensor<F> {
    let n = logits.shape()[0];
    let k = logits.shape()[1];
    let mut out = vec![F::zero(); n * k];
    for i in 0..n {
        let row = &logits.data()[i * k..(i + 1) * k];
        let mx = row.iter().fold(F::neg_infinity(), |a, &b| a.max(b));
        let mut z = F::zero();
        for (j, &v) in row.iter().enumerate() {
            let e = (v - mx).exp();
            out[i * k + j] = e;
            z = z + e;
        }
        for j in 0..k {
            out[i * k + j] = out[i * k + j] / z;
        }
    }
    Tensor::new(vec![n, k], out)
}

/// Mean softmax cross-entropy and its logit gradient `(p - onehot)/N`.
pub fn cross_entropy<F: Scalar>(logits: &Tensor<F>, labels: &[usize]) -> Result<(F, Tensor<F>)> {
    let n = logits.shape()[0];
    let k = logits.shape()[1];
    check_labels(n, k, labels)?;
    let p = softmax(logits);
    let mut loss = F::zero();
    let mut grad = p.clone();
    let invn = F::from_f64(1.0 / n as f64);
    let tiny = F::from_f64(1e-40);
    for (i, &y) in labels.iter().enumerate() {
        loss = loss - (p[i * k + y] + tiny).ln();
        grad[i * k + y] = grad[i * k + y] - F::one();
    }
    for v in grad.data_mut() {
        *v = *v * invn;
    }
    let loss = loss * invn;
    if !loss.is_finite() {
        return Err(Error::numeric("cross-entropy", "non-finite loss"));
    }
    Ok((loss, grad))
}

/// CW hinge margin `mean(max(z_y - max_{j!=y} z_j, -kappa))`. Minimizing it
/// drives examples toward misclassification with confidence `kappa`.
pub fn cw_margin<F: Scalar>(
    logits: &Tensor<F>,
    labels: &[usize],
    kappa: F,
) -> Result<(F, Tensor<F>)> {
    let n = logits.shape()[0];
    let k = logits.shape()[1];
    check_labels(n, k, labels)?;
    let mut loss = F::zero();
    let mut grad = Tensor::zeros(vec![n, k]);
    let invn = F::from_f64(1.0 / n as f64);
    for (i, &y) in labels.iter().enumerate() {
        let row = &logits.data()[i * k..(i + 1) * k];
        let (j_best, z_best) = row
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != y)
            .fold((usize::MAX, F::neg_infinity()), |acc, (j, &v)| {
                if v > acc.1 {
                    (j, v)
                } else {
                    acc
                }
            });
        let margin = row[y] - z_best;
        if margin > -kappa {
            loss = loss + margin;
            grad[i * k + y] = grad[i * k + y] + invn;
            grad[i * k + j_best] = grad[i * k + j_best] - invn;
        } else {
            loss = loss - kappa;
        }
    }
    Ok((loss * invn, grad))
}

const DLR_TINY: f64 = 1e-12;

/// Difference-of-logits-ratio loss:
/// `-(z_y - max_{i!=y} z_i) / (z_pi1 - z_pi3 + tiny)`.
pub fn dlr<F: Scalar>(logits: &Tensor<F>, labels: &[usize]) -> Result<(F, Tensor<F>)> {
    let n = logits.shape()[0];
    let k = logits.shape()[1];
    if k < 3 {
        return Err(Error::config(format!(
            "DLR loss requires at least 3 classes, got {k}"
        )));
    }
    check_labels(n, k, labels)?;
    let mut loss = F::zero();
    let mut grad = Tensor::zeros(vec![n, k]);
    let invn = F::from_f64(1.0 / n as f64);
    let tiny = F::from_f64(DLR_TINY);
    for (i, &y) in labels.iter().enumerate() {
        let row = &logits.data()[i * k..(i + 1) * k];
        let mut order: Vec<usize> = (0..k).collect();
        order.sort_by(|&a, &b| row[b].partial_cmp(&row[a]).unwrap().then(a.cmp(&b)));
        let (p1, p3) = (order[0], order[2]);
        let (j_best, z_best) = row
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != y)
            .fold((usize::MAX, F::neg_infinity()), |acc, (j, &v)| {
                if v > acc.1 {
                    (j, v)
                } else {
                    acc
                }
            });
        let num = row[y] - z_best;
        let den = row[p1] - row[p3] + tiny;
        loss = loss - num / den;
        // d(-num/den): -1/den on z_y, +1/den on the runner-up, +num/den^2 on
        // pi1 and -num/den^2 on pi3, accumulated (indices may coincide).
        let inv_d = F::one() / den;
        let ratio = num * inv_d * inv_d;
        grad[i * k + y] = grad[i * k + y] - inv_d * invn;
        grad[i * k + j_best] = grad[i * k + j_best] + inv_d * invn;
        grad[i * k + p1] = grad[i * k + p1] + ratio * invn;
        grad[i * k + p3] = grad[i * k + p3] - ratio * invn;
    }
    Ok((loss * invn, grad))
}

/// Mean absolute error against a target of the same shape; gradient is
/// `sign(out - target) / numel`.
pub fn mae<F: Scalar>(output: &Tensor<F>, target: &Tensor<F>) -> Result<(F, Tensor<F>)> {
    if output.shape() != target.shape() {
        return Err(Error::ShapeMismatch {
            a: "output".into(),
            b: "mae target".into(),
            detail: format!("{:?} vs {:?}", output.shape(), target.shape()),
        });
    }
    let n = output.len();
    let inv = F::from_f64(1.0 / n as f64);
    let mut loss = F::zero();
    let mut grad = Tensor::zeros(output.shape().to_vec());
    for i in 0..n {
        let d = output[i] - target[i];
        loss = loss + d.abs();
        grad[i] = if d > F::zero() {
            inv
        } else if d < F::zero() {
            -inv
        } else {
            F::zero()
        };
    }
    Ok((loss * inv, grad))
}

fn check_labels(n: usize, k: usize, labels: &[usize]) -> Result<()> {
    if labels.len() != n {
        return Err(Error::ShapeMismatch {
            a: "logits".into(),
            b: "labels".into(),
            detail: format!("{n} rows vs {} labels", labels.len()),
        });
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= k) {
        return Err(Error::config(format!("label {bad} out of range for {k} classes")));
    }
    Ok(())
}
