//! Query-only attacks: Square (random search) and ZOO gradient estimators
//! (NES central difference, ZO-signSGD forward difference).
//!
//! These functions only see a [`QueryOracle`], which exposes logits and a
//! query counter but no gradients.

use super::project::{project_lp, sign, LpNorm};
use super::spec::{AttackMethod, AttackSpec};
use super::whitebox::AttackOutcome;
use crate::diffnet::Network;
use crate::error::{Error, Result};
use crate::rng::stream_rng;
use crate::tensor::{Real, Tensor};
use crate::victim::argmax;
use rand::Rng;
use rand_distr::StandardNormal;
use std::cell::Cell;

/// Logits-only victim handle; black-box attacks cannot reach gradients
/// through it.
pub struct QueryOracle<'a> {
    net: &'a Network<Real>,
    queries: Cell<usize>,
}

impl<'a> QueryOracle<'a> {
    pub fn new(net: &'a Network<Real>) -> Self {
        QueryOracle {
            net,
            queries: Cell::new(0),
        }
    }

    /// Logits for a single image; counted against the query budget.
    pub fn logits(&self, x: &Tensor<Real>) -> Result<Vec<Real>> {
        self.queries.set(self.queries.get() + 1);
        self.logits_uncounted(x)
    }

    /// Success bookkeeping only; excluded from the per-estimate query
    /// accounting (NES uses exactly 2q queries per iteration).
    pub fn logits_uncounted(&self, x: &Tensor<Real>) -> Result<Vec<Real>> {
        let mut shape = vec![1];
        shape.extend_from_slice(x.shape());
        let batch = x.clone().reshape(shape);
        Ok(self.net.predict(&batch)?.into_data())
    }

    pub fn queries(&self) -> usize {
        self.queries.get()
    }
}

/// Margin `z_y - max_{j!=y} z_j`; negative means misclassified.
fn margin(logits: &[Real], y: usize) -> Real {
    let best_other = logits
        .iter()
        .enumerate()
        .filter(|(j, _)| *j != y)
        .map(|(_, &v)| v)
        .fold(Real::NEG_INFINITY, Real::max);
    logits[y] - best_other
}

/// Cross-entropy of the true class from raw logits.
fn ce_loss(logits: &[Real], y: usize) -> Real {
    let mx = logits.iter().copied().fold(Real::NEG_INFINITY, Real::max);
    let z: Real = logits.iter().map(|&v| (v - mx).exp()).sum();
    z.ln() - (logits[y] - mx)
}

/// Patch side schedule: starts near sqrt(0.08*H*W), halves at fixed budget
/// fractions, floor 1.
fn patch_side(h: usize, w: usize, t: usize, budget: usize) -> usize {
    let mut side = ((0.08 * (h * w) as f64).sqrt()).round() as usize;
    let frac = t as f64 / budget as f64;
    for boundary in [0.1, 0.25, 0.5, 0.75] {
        if frac >= boundary {
            side /= 2;
        }
    }
    side.max(1)
}

/// Square attack: random-search proposals flipping a square patch to +-eps
/// per channel, accepted iff the margin loss strictly improves. The l2
/// variant renormalizes each candidate onto the l2 ball.
pub fn square(
    oracle: &QueryOracle,
    x: &Tensor<Real>,
    y: usize,
    spec: &AttackSpec,
    stream: u64,
) -> Result<AttackOutcome> {
    let norm = match spec.method {
        AttackMethod::SquareLinf => LpNorm::Linf,
        AttackMethod::SquareL2 => LpNorm::L2,
        m => {
            return Err(Error::config(format!(
                "square called with non-square method {}",
                m.name()
            )))
        }
    };
    spec.validate()?;
    let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let eps = spec.eps as Real;
    let mut rng = stream_rng(stream, 1);

    let feasible = |delta: &Tensor<Real>| -> Tensor<Real> {
        let d = project_lp(delta, norm, spec.eps);
        x.add(&d).clamp(0.0, 1.0).sub(x)
    };

    // vertical stripe initialization at +-eps per (channel, column)
    let mut init = Tensor::zeros(x.shape().to_vec());
    for ch in 0..c {
        for col in 0..w {
            let v = if rng.gen_bool(0.5) { eps } else { -eps };
            for row in 0..h {
                init[(ch * h + row) * w + col] = v;
            }
        }
    }
    let mut delta = feasible(&init);
    let logits = oracle.logits(&x.add(&delta))?;
    let mut best_loss = margin(&logits, y);
    let mut steps = 0usize;
    while best_loss >= 0.0 && oracle.queries() < spec.max_queries {
        steps += 1;
        let side = patch_side(h, w, oracle.queries(), spec.max_queries).min(h).min(w);
        let y0 = rng.gen_range(0..=h - side);
        let x0 = rng.gen_range(0..=w - side);
        let mut cand = delta.clone();
        for ch in 0..c {
            let v = if rng.gen_bool(0.5) { eps } else { -eps };
            for dy in 0..side {
                for dx in 0..side {
                    cand[(ch * h + y0 + dy) * w + x0 + dx] = v;
                }
            }
        }
        let cand = feasible(&cand);
        let logits = oracle.logits(&x.add(&cand))?;
        let loss = margin(&logits, y);
        if loss < best_loss {
            best_loss = loss;
            delta = cand;
        }
    }
    Ok(AttackOutcome {
        x_adv: x.add(&delta),
        success: best_loss < 0.0,
        queries: oracle.queries(),
        steps,
    })
}

/// ZOO attacks: estimate the CE input gradient from queries, then ascend via
/// sign steps inside the l-inf ball. Early stop at first misclassification.
pub fn zoo_attack(
    oracle: &QueryOracle,
    x: &Tensor<Real>,
    y: usize,
    spec: &AttackSpec,
    stream: u64,
) -> Result<AttackOutcome> {
    let central = match spec.method {
        AttackMethod::Nes => true,
        AttackMethod::ZoSignsgd => false,
        m => {
            return Err(Error::config(format!(
                "zoo_attack called with non-ZOO method {}",
                m.name()
            )))
        }
    };
    spec.validate()?;
    let mu = spec.mu as Real;
    let lr = spec.lr as Real;
    let mut rng = stream_rng(stream, 2);
    let mut delta: Tensor<Real> = Tensor::zeros(x.shape().to_vec());
    let mut steps = 0usize;
    for _ in 0..spec.max_iters {
        let x_cur = x.add(&delta);
        // success bookkeeping: ZO-signSGD reuses its counted base query
        let success = if central {
            argmax(&oracle.logits_uncounted(&x_cur)?) != y
        } else {
            false // checked below from the counted base query
        };
        if success {
            break;
        }
        let base_loss = if central {
            0.0
        } else {
            let logits = oracle.logits(&x_cur)?;
            if argmax(&logits) != y {
                break;
            }
            ce_loss(&logits, y)
        };
        steps += 1;
        let mut ghat: Tensor<Real> = Tensor::zeros(x.shape().to_vec());
        for _ in 0..spec.q {
            let u: Tensor<Real> = x.map(|_| {
                let g: f64 = rng.sample(StandardNormal);
                g as Real
            });
            let coeff = if central {
                let lp = ce_loss(&oracle.logits(&x_cur.add(&u.scale(mu)))?, y);
                let lm = ce_loss(&oracle.logits(&x_cur.sub(&u.scale(mu)))?, y);
                (lp - lm) / (2.0 * mu * spec.q as Real)
            } else {
                let lp = ce_loss(&oracle.logits(&x_cur.add(&u.scale(mu)))?, y);
                (lp - base_loss) / (mu * spec.q as Real)
            };
            ghat.add_assign(&u.scale(coeff));
        }
        delta = project_lp(&delta.add(&ghat.map(|v| lr * sign(v))), LpNorm::Linf, spec.eps);
        delta = x.add(&delta).clamp(0.0, 1.0).sub(x);
    }
    let x_adv = x.add(&delta);
    let success = argmax(&oracle.logits_uncounted(&x_adv)?) != y;
    Ok(AttackOutcome {
        x_adv,
        success,
        queries: oracle.queries(),
        steps,
    })
}

/// The raw NES / ZO-signSGD gradient estimators on an arbitrary scalar
/// function, exposed for estimator-consistency checks.
pub fn zoo_gradient_estimate(
    f: &dyn Fn(&Tensor<f64>) -> f64,
    x: &Tensor<f64>,
    mu: f64,
    q: usize,
    central: bool,
    stream: u64,
) -> Tensor<f64> {
    let mut rng = stream_rng(stream, 3);
    let base = if central { 0.0 } else { f(x) };
    let mut ghat = Tensor::zeros(x.shape().to_vec());
    for _ in 0..q {
        let u: Tensor<f64> = x.map(|_| rng.sample(StandardNormal));
        let coeff = if central {
            (f(&x.add(&u.scale(mu))) - f(&x.sub(&u.scale(mu)))) / (2.0 * mu * q as f64)
        } else {
            (f(&x.add(&u.scale(mu))) - base) / (mu * q as f64)
        };
        ghat.add_assign(&u.scale(coeff));
    }
    ghat
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn patch_schedule_shrinks() {
        let s0 = patch_side(16, 16, 0, 1000);
        let s_mid = patch_side(16, 16, 500, 1000);
        let s_end = patch_side(16, 16, 990, 1000);
        assert!(s0 >= s_mid && s_mid >= s_end && s_end >= 1);
    }

    #[test]
    fn estimator_aligns_with_linear_gradient() {
        // f(x) = c . x on a 10-dim toy: cosine similarity > 0.9 at q=100
        let c: Tensor<f64> = Tensor::new(vec![10], (1..=10).map(|i| i as f64 / 10.0).collect());
        let f = |x: &Tensor<f64>| c.dot(x);
        let x = Tensor::zeros(vec![10]);
        for central in [true, false] {
            let g = zoo_gradient_estimate(&f, &x, 0.01, 100, central, 7);
            let cos = g.dot(&c) / (g.norm_l2() * c.norm_l2());
            assert!(cos > 0.9, "cos = {cos}, central = {central}");
        }
    }
}
