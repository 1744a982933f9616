//! Per-example attack execution and auditing.

use super::blackbox::{square, zoo_attack, QueryOracle};
use super::spec::{AttackMethod, AttackSpec};
use super::whitebox::{cw, fgsm, pgd, AttackOutcome};
use crate::diffnet::Network;
use crate::error::{Error, Result};
use crate::rng::stream_key;
use crate::tensor::{Real, Tensor};
use crate::victim::ModelAttributes;
use rayon::prelude::*;

/// One attacked example: the clean image, its adversarial counterpart, and
/// the residual `delta = x_adv - x`, tagged with the victim's attributes.
#[derive(Debug, Clone)]
pub struct AttackRecord {
    pub x: Tensor<Real>,
    pub x_adv: Tensor<Real>,
    pub delta: Tensor<Real>,
    pub label: usize,
    pub attributes: ModelAttributes,
    pub success: bool,
    pub queries: usize,
    pub steps: usize,
}

/// Run one attack on one image, dispatching on the method.
pub fn single_attack(
    net: &Network<Real>,
    x: &Tensor<Real>,
    y: usize,
    spec: &AttackSpec,
    stream: u64,
) -> Result<AttackOutcome> {
    match spec.method {
        AttackMethod::Fgsm => fgsm(net, x, y, spec.eps),
        AttackMethod::PgdLinf
        | AttackMethod::PgdL2
        | AttackMethod::PgdDlrLinf
        | AttackMethod::PgdDlrL2 => pgd(net, x, y, spec, stream),
        AttackMethod::CwL2 => cw(net, x, y, spec),
        AttackMethod::SquareLinf | AttackMethod::SquareL2 => {
            let oracle = QueryOracle::new(net);
            square(&oracle, x, y, spec, stream)
        }
        AttackMethod::Nes | AttackMethod::ZoSignsgd => {
            let oracle = QueryOracle::new(net);
            zoo_attack(&oracle, x, y, spec, stream)
        }
    }
}

/// Attack a batch of images against a single victim. Each example draws from
/// its own RNG stream keyed by `(spec.seed, index)`, so results do not depend
/// on thread count or execution order.
pub fn attack_batch(
    net: &Network<Real>,
    images: &[Tensor<Real>],
    labels: &[usize],
    attributes: ModelAttributes,
    spec: &AttackSpec,
) -> Result<Vec<AttackRecord>> {
    if images.len() != labels.len() {
        return Err(Error::config(format!(
            "attack_batch: {} images but {} labels",
            images.len(),
            labels.len()
        )));
    }
    spec.validate()?;
    images
        .par_iter()
        .zip(labels.par_iter())
        .enumerate()
        .map(|(i, (x, &y))| {
            let stream = stream_key(spec.seed, i as u64);
            let out = single_attack(net, x, y, spec, stream)?;
            let record = AttackRecord {
                delta: out.x_adv.sub(x),
                x: x.clone(),
                x_adv: out.x_adv,
                label: y,
                attributes,
                success: out.success,
                queries: out.queries,
                steps: out.steps,
            };
            audit_record(&record, spec)?;
            Ok(record)
        })
        .collect()
}

/// Check the feasibility invariants every record must satisfy: x_adv in
/// [0,1]^d, delta inside the attack's norm ball (with float slack), and
/// delta consistent with x_adv - x.
pub fn audit_record(record: &AttackRecord, spec: &AttackSpec) -> Result<()> {
    let slack = 1e-5;
    for &v in record.x_adv.data() {
        if !(-(slack as Real)..=1.0 + slack as Real).contains(&v) {
            return Err(Error::numeric(
                "audit_record",
                format!("x_adv value {v} outside [0,1]"),
            ));
        }
    }
    let recon = record.x.add(&record.delta);
    let drift = recon.sub(&record.x_adv).norm_linf();
    if drift as f64 > slack {
        return Err(Error::numeric(
            "audit_record",
            format!("delta inconsistent with x_adv - x (drift {drift})"),
        ));
    }
    if spec.method.is_linf() {
        let linf = record.delta.norm_linf() as f64;
        if linf > spec.eps + slack {
            return Err(Error::numeric(
                "audit_record",
                format!("l-inf norm {linf} exceeds eps {}", spec.eps),
            ));
        }
    } else if spec.method.is_l2_constrained() {
        let l2 = record.delta.norm_l2() as f64;
        if l2 > spec.eps + slack {
            return Err(Error::numeric(
                "audit_record",
                format!("l2 norm {l2} exceeds eps {}", spec.eps),
            ));
        }
    }
    if !record.x_adv.all_finite() || !record.delta.all_finite() {
        return Err(Error::numeric("audit_record", "non-finite values"));
    }
    Ok(())
}
