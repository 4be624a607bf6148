//! Grid-routing autoencoder workbench.
//!
//! The crate is organized around the routing domain model ([`grid`]), a
//! deterministic capacity-aware maze router used as the label oracle
//! ([`oracle`]), synthetic dataset generation ([`data`]), a small CPU layer
//! engine with the count-penalizing loss ([`nn`]), progressive resolution
//! growth of autoencoders ([`progressive`]), and routability evaluation
//! ([`eval`]).
//!
//! Data-parallel inner loops go through [`par`], which falls back to
//! sequential execution when the `parallel` feature is disabled (or at
//! runtime via [`par::run_sequential`]). All randomized operations take
//! explicit seeds and produce identical results regardless of worker count.

pub mod data;
pub mod eval;
pub mod grid;
pub mod nn;
pub mod oracle;
pub mod par;
pub mod progressive;
pub mod util;
