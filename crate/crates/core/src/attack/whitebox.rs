//! Gradient-based attacks: FGSM, PGD (CE and DLR losses), and CW l2.

use super::project::{project_lp, sign, LpNorm};
use super::spec::{AttackMethod, AttackSpec};
use crate::diffnet::{cross_entropy, cw_margin, dlr, Network};
use crate::error::{Error, Result};
use crate::rng::stream_rng;
use crate::tensor::{Real, Tensor};
use crate::victim::argmax;
use rand::Rng;
use rand_distr::StandardNormal;

/// Raw attack output before labeling with victim attributes.
#[derive(Debug, Clone)]
pub struct AttackOutcome {
    pub x_adv: Tensor<Real>,
    pub success: bool,
    pub queries: usize,
    pub steps: usize,
}

fn as_batch(x: &Tensor<Real>) -> Tensor<Real> {
    let mut shape = vec![1];
    shape.extend_from_slice(x.shape());
    x.clone().reshape(shape)
}

fn from_batch(x: Tensor<Real>, shape: &[usize]) -> Tensor<Real> {
    x.reshape(shape.to_vec())
}

pub fn misclassified(net: &Network<Real>, x: &Tensor<Real>, y: usize) -> Result<bool> {
    let logits = net.predict(&as_batch(x))?;
    Ok(argmax(logits.data()) != y)
}

/// Input gradient of the given attack loss at `x`.
fn input_grad(
    net: &Network<Real>,
    x: &Tensor<Real>,
    y: usize,
    loss: AttackLoss,
) -> Result<Tensor<Real>> {
    let batch = as_batch(x);
    let (logits, tape) = net.eval_forward(&batch)?;
    let dlogits = match loss {
        AttackLoss::Ce => cross_entropy(&logits, &[y])?.1,
        AttackLoss::Dlr => dlr(&logits, &[y])?.1,
        AttackLoss::CwMargin(kappa) => cw_margin(&logits, &[y], kappa as Real)?.1,
    };
    let grads = net.backward(&tape, &dlogits, false, true)?;
    Ok(from_batch(grads.input.expect("input grad requested"), x.shape()))
}

#[derive(Clone, Copy)]
enum AttackLoss {
    Ce,
    Dlr,
    CwMargin(f64),
}

/// One-step sign ascent on cross-entropy: `x' = clip(x + eps*sign(grad))`.
pub fn fgsm(net: &Network<Real>, x: &Tensor<Real>, y: usize, eps: f64) -> Result<AttackOutcome> {
    if eps < 0.0 {
        return Err(Error::config("FGSM strength eps must be >= 0"));
    }
    let g = input_grad(net, x, y, AttackLoss::Ce)?;
    let e = eps as Real;
    let x_adv = x.zip_map(&g, |xv, gv| xv + e * sign(gv)).clamp(0.0, 1.0);
    let success = misclassified(net, &x_adv, y)?;
    Ok(AttackOutcome {
        x_adv,
        success,
        queries: 0,
        steps: 1,
    })
}

/// K-step PGD under l-inf or l2 with CE or DLR loss, ascending the loss.
/// Random initialization inside the ball unless disabled in the spec.
pub fn pgd(
    net: &Network<Real>,
    x: &Tensor<Real>,
    y: usize,
    spec: &AttackSpec,
    stream: u64,
) -> Result<AttackOutcome> {
    let (norm, loss) = match spec.method {
        AttackMethod::PgdLinf => (LpNorm::Linf, AttackLoss::Ce),
        AttackMethod::PgdL2 => (LpNorm::L2, AttackLoss::Ce),
        AttackMethod::PgdDlrLinf => (LpNorm::Linf, AttackLoss::Dlr),
        AttackMethod::PgdDlrL2 => (LpNorm::L2, AttackLoss::Dlr),
        m => {
            return Err(Error::config(format!(
                "pgd called with non-PGD method {}",
                m.name()
            )))
        }
    };
    spec.validate()?;
    let eps = spec.eps as Real;
    let alpha = spec.alpha as Real;
    let mut delta = if spec.random_init && spec.eps > 0.0 {
        let mut rng = stream_rng(stream, 0);
        let raw = x.map(|_| rng.gen_range(-1.0f64..1.0) as Real);
        match norm {
            LpNorm::Linf => raw.scale(eps),
            LpNorm::L2 => {
                let dir: Tensor<Real> = x.map(|_| {
                    let g: f64 = rng.sample(StandardNormal);
                    g as Real
                });
                let n = dir.norm_l2().max(1e-12);
                let radius = (rng.gen_range(0.0f64..1.0)) as Real * eps;
                dir.scale(radius / n)
            }
        }
    } else {
        Tensor::zeros(x.shape().to_vec())
    };
    // keep the start point feasible
    delta = project_lp(&delta, norm, spec.eps);
    delta = x.add(&delta).clamp(0.0, 1.0).sub(x);
    for _ in 0..spec.steps {
        let x_cur = x.add(&delta);
        let g = input_grad(net, &x_cur, y, loss)?;
        let step = match norm {
            LpNorm::Linf => g.map(|v| alpha * sign(v)),
            LpNorm::L2 => {
                let n = g.norm_l2();
                if n == 0.0 {
                    g.clone()
                } else {
                    g.scale(alpha / n)
                }
            }
        };
        delta = project_lp(&delta.add(&step), norm, spec.eps);
        delta = x.add(&delta).clamp(0.0, 1.0).sub(x);
    }
    let x_adv = x.add(&delta);
    let success = misclassified(net, &x_adv, y)?;
    Ok(AttackOutcome {
        x_adv,
        success,
        queries: 0,
        steps: spec.steps,
    })
}

/// CW l2: plain gradient descent on `||delta||^2 + c * hinge-margin`,
/// delta parameterized directly with [0,1] clipping. Returns the successful
/// iterate with the smallest l2 norm, else the last iterate.
pub fn cw(
    net: &Network<Real>,
    x: &Tensor<Real>,
    y: usize,
    spec: &AttackSpec,
) -> Result<AttackOutcome> {
    if spec.c <= 0.0 {
        return Err(Error::config("CW regularization weight c must be > 0"));
    }
    let lr = spec.lr as Real;
    let c = spec.c as Real;
    let iters = spec.steps.max(1);
    let mut delta: Tensor<Real> = Tensor::zeros(x.shape().to_vec());
    let mut best: Option<(Real, Tensor<Real>)> = None;
    for _ in 0..iters {
        let x_cur = x.add(&delta);
        if misclassified(net, &x_cur, y)? {
            let norm = delta.norm_l2();
            if best.as_ref().map_or(true, |(b, _)| norm < *b) {
                best = Some((norm, delta.clone()));
            }
        }
        let g_margin = input_grad(net, &x_cur, y, AttackLoss::CwMargin(spec.kappa))?;
        // d/ddelta (||delta||^2 + c*margin) = 2*delta + c*dmargin/dx
        let grad = delta.scale(2.0).add(&g_margin.scale(c));
        delta = delta.sub(&grad.scale(lr));
        delta = x.add(&delta).clamp(0.0, 1.0).sub(x);
    }
    let (x_adv, success) = match best {
        Some((_, d)) => (x.add(&d), true),
        None => {
            let x_adv = x.add(&delta);
            let success = misclassified(net, &x_adv, y)?;
            (x_adv, success)
        }
    };
    Ok(AttackOutcome {
        x_adv,
        success,
        queries: 0,
        steps: iters,
    })
}
