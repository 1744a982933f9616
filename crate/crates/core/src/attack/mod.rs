//! White-box and black-box lp attack generation.

pub mod blackbox;
pub mod project;
pub mod record;
pub mod spec;
pub mod whitebox;

pub use blackbox::{square, zoo_attack, zoo_gradient_estimate, QueryOracle};
pub use project::{project_lp, LpNorm};
pub use record::{attack_batch, audit_record, single_attack, AttackRecord};
pub use spec::{AttackMethod, AttackSpec};
pub use whitebox::{cw, fgsm, pgd};
