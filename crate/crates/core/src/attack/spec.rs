//! Attack method identifiers and hyperparameter bundles.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttackMethod {
    Fgsm,
    PgdLinf,
    PgdL2,
    PgdDlrLinf,
    PgdDlrL2,
    CwL2,
    SquareLinf,
    SquareL2,
    Nes,
    ZoSignsgd,
}

impl AttackMethod {
    pub const ALL: [AttackMethod; 10] = [
        AttackMethod::Fgsm,
        AttackMethod::PgdLinf,
        AttackMethod::PgdL2,
        AttackMethod::PgdDlrLinf,
        AttackMethod::PgdDlrL2,
        AttackMethod::CwL2,
        AttackMethod::SquareLinf,
        AttackMethod::SquareL2,
        AttackMethod::Nes,
        AttackMethod::ZoSignsgd,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            AttackMethod::Fgsm => "fgsm",
            AttackMethod::PgdLinf => "pgd-linf",
            AttackMethod::PgdL2 => "pgd-l2",
            AttackMethod::PgdDlrLinf => "pgd-dlr-linf",
            AttackMethod::PgdDlrL2 => "pgd-dlr-l2",
            AttackMethod::CwL2 => "cw-l2",
            AttackMethod::SquareLinf => "square-linf",
            AttackMethod::SquareL2 => "square-l2",
            AttackMethod::Nes => "nes",
            AttackMethod::ZoSignsgd => "zo-signsgd",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .iter()
            .copied()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::config(format!("unknown attack method `{s}`")))
    }

    /// Methods constrained in the l-inf ball. CW and the l2 family are not.
    pub fn is_linf(&self) -> bool {
        matches!(
            self,
            AttackMethod::Fgsm
                | AttackMethod::PgdLinf
                | AttackMethod::PgdDlrLinf
                | AttackMethod::SquareLinf
                | AttackMethod::Nes
                | AttackMethod::ZoSignsgd
        )
    }

    /// Methods constrained in the l2 ball (CW excluded: regularized, not
    /// constrained).
    pub fn is_l2_constrained(&self) -> bool {
        matches!(
            self,
            AttackMethod::PgdL2 | AttackMethod::PgdDlrL2 | AttackMethod::SquareL2
        )
    }

    /// Query-only methods (no gradient access).
    pub fn is_black_box(&self) -> bool {
        matches!(
            self,
            AttackMethod::SquareLinf
                | AttackMethod::SquareL2
                | AttackMethod::Nes
                | AttackMethod::ZoSignsgd
        )
    }
}

/// Attack hyperparameters. Fields not used by a method are ignored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackSpec {
    pub method: AttackMethod,
    /// Radius in pixel units (l-inf as k/255, l2 absolute).
    pub eps: f64,
    /// Step size.
    pub alpha: f64,
    /// Iteration count for PGD-family attacks.
    pub steps: usize,
    /// CW regularization weight.
    pub c: f64,
    /// CW confidence margin.
    pub kappa: f64,
    /// ZOO smoothing radius.
    pub mu: f64,
    /// Queries per gradient estimate.
    pub q: usize,
    /// Query budget for random-search attacks.
    pub max_queries: usize,
    /// Iteration budget for ZOO attacks.
    pub max_iters: usize,
    /// ZOO / CW learning rate.
    pub lr: f64,
    /// PGD random initialization inside the ball.
    pub random_init: bool,
    pub seed: u64,
}

impl AttackSpec {
    /// Paper-default hyperparameters for each method at a given strength.
    pub fn defaults(method: AttackMethod, eps: f64, seed: u64) -> Self {
        let alpha = match method {
            AttackMethod::PgdLinf | AttackMethod::PgdDlrLinf => default_linf_alpha(eps),
            AttackMethod::PgdL2 | AttackMethod::PgdDlrL2 => eps / 5.0,
            _ => 0.0,
        };
        AttackSpec {
            method,
            eps,
            alpha,
            steps: match method {
                AttackMethod::CwL2 => 50,
                _ => 10,
            },
            c: 1.0,
            kappa: 0.0,
            mu: 0.01,
            q: 10,
            max_queries: 5000,
            max_iters: 500,
            lr: match method {
                AttackMethod::CwL2 => 0.01,
                _ => 0.0005,
            },
            random_init: true,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.eps < 0.0 {
            return Err(Error::config("attack strength eps must be >= 0"));
        }
        match self.method {
            AttackMethod::PgdLinf
            | AttackMethod::PgdL2
            | AttackMethod::PgdDlrLinf
            | AttackMethod::PgdDlrL2 => {
                if self.steps == 0 {
                    return Err(Error::config("PGD needs at least one step"));
                }
            }
            AttackMethod::CwL2 => {
                if self.c <= 0.0 {
                    return Err(Error::config("CW regularization weight c must be > 0"));
                }
            }
            AttackMethod::SquareLinf | AttackMethod::SquareL2 => {
                if self.max_queries < 1 {
                    return Err(Error::config("square attack needs a query budget >= 1"));
                }
            }
            AttackMethod::Nes | AttackMethod::ZoSignsgd => {
                if self.mu <= 0.0 {
                    return Err(Error::config("ZOO smoothing mu must be > 0"));
                }
                if self.q < 1 {
                    return Err(Error::config("ZOO needs q >= 1 queries per estimate"));
                }
            }
            AttackMethod::Fgsm => {}
        }
        Ok(())
    }

    /// Short stable hash for provenance manifests.
    pub fn hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let json = serde_json::to_string(self).expect("spec serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Appendix strength/step-size pairings for PGD l-inf; other strengths fall
/// back to eps/4 with a warning left to the caller.
pub fn default_linf_alpha(eps: f64) -> f64 {
    let table = [
        (4.0 / 255.0, 0.5 / 255.0),
        (8.0 / 255.0, 1.0 / 255.0),
        (12.0 / 255.0, 2.0 / 255.0),
        (16.0 / 255.0, 2.0 / 255.0),
    ];
    for (e, a) in table {
        if (eps - e).abs() < 1e-9 {
            return a;
        }
    }
    eps / 4.0
}

pub const LINF_STRENGTHS: [f64; 4] = [4.0 / 255.0, 8.0 / 255.0, 12.0 / 255.0, 16.0 / 255.0];
pub const L2_STRENGTHS: [f64; 4] = [0.25, 0.5, 0.75, 1.0];
pub const CW_STRENGTHS: [f64; 3] = [0.1, 1.0, 10.0];

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn method_names_round_trip() {
        for m in AttackMethod::ALL {
            assert_eq!(AttackMethod::parse(m.name()).unwrap(), m);
        }
        assert!(AttackMethod::parse("autoattack").is_err());
    }

    #[test]
    fn appendix_pairings() {
        assert!((default_linf_alpha(8.0 / 255.0) - 1.0 / 255.0).abs() < 1e-12);
        assert!((default_linf_alpha(16.0 / 255.0) - 2.0 / 255.0).abs() < 1e-12);
    }

    #[test]
    fn validation_catches_bad_specs() {
        let mut s = AttackSpec::defaults(AttackMethod::PgdLinf, 8.0 / 255.0, 0);
        s.steps = 0;
        assert!(s.validate().is_err());
        let mut s = AttackSpec::defaults(AttackMethod::Nes, 8.0 / 255.0, 0);
        s.mu = 0.0;
        assert!(s.validate().is_err());
        let mut s = AttackSpec::defaults(AttackMethod::Fgsm, 8.0 / 255.0, 0);
        s.eps = -1.0;
        assert!(s.validate().is_err());
    }
}
