//! Deterministic federated-learning simulator with ephemeral backdoor-based
//! aggregation auditing.
//!
//! A set of clients trains a shared model through an untrusted aggregation
//! server. Each round one secretly scheduled client doubles as the verifier:
//! it superimposes a boosted trigger-set gradient onto its clean update, then
//! checks the next global model for the corresponding behavioural response
//! (the attack success rate on its private trigger set). A missing response
//! is evidence that the server omitted or tampered with the update. Because
//! the trigger is never reinforced, ordinary training erases it within a few
//! rounds, so the audit leaves no lasting mark on the model.
//!
//! Modules:
//! - [`nn`] — flat-parameter MLP engine (forward, exact backprop, SGD with
//!   momentum).
//! - [`data`] — synthetic image generation, Dirichlet non-IID partitioning,
//!   trigger credentials, and pixel stamping.
//! - [`protocol`] — scheduling tokens, proof injection/verification, server
//!   policies (honest / omit / tamper), and the round loop.
//! - [`analysis`] — the detection-probability law, Monte Carlo validation,
//!   and round-log post-processing.
//!
//! The crate is `no_std`-compatible (with `alloc`); all float math is routed
//! through `libm` so results do not depend on the platform's libm or on the
//! `std` feature. Simulations are pure functions of their configuration:
//! every random choice derives from the master seed via [`seeds::derive`].

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod analysis;
pub mod data;
pub mod error;
pub mod nn;
pub mod protocol;
pub mod seeds;

pub use error::{Error, Result};
