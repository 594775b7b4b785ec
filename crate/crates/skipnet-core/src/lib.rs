//! Skip-connection network topologies as explicit DAGs, plus the analyses
//! that make them comparable: backpropagation distances, connection budgets,
//! FLOP/parameter cost models, and a desk-scale differentiable reference
//! implementation for gradient verification.
//!
//! The crate is `no_std` (with `alloc`) so the graph and cost machinery can
//! be embedded anywhere; IO, serialization, and the CLI live in
//! `skipnet-cli`.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod analysis;
pub mod cost;
pub mod micronet;
pub mod topology;
