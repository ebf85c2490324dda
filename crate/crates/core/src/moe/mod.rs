//! Sparse filter-expert backbone, dense residual expert pool and the CKA
//! diversity regulariser.

mod backbone;
mod cka;
mod residual;

pub use self::backbone::{
    backbone_forward, load_balance_loss, load_balance_value, top_k_mask, write_routing_csv,
    BackboneOutput, Channel, ExpertBank, RoutingRecord, RoutingStats,
};
pub use self::cka::{cka, cka_value, diversity_loss, DiversityTarget};
pub use self::residual::{
    enhance, expert_forward, residual_forward, ExpertKind, ResidualExpert, ResidualOutput,
    ResidualPool, DEFAULT_GAMMA_INIT,
};
