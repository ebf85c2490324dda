//! Reverse-mode differentiation engine, parameter storage, Adam, Gumbel
//! noise and the checkpoint archive.

pub mod adam;
pub mod checkpoint;
pub mod gumbel;
pub mod params;
pub mod tape;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use gumbel::gumbel_pair;
pub use params::{ParamId, ParamStore};
pub use tape::{Tape, Var, EPS};
