//! Packet-level network intrusion detection as offline reinforcement
//! learning with a return-conditioned, continuous-time decision transformer.
//!
//! The pipeline runs capture ingest → payload autoencoder → offline
//! trajectory construction → sequence-model training → replay evaluation.

pub mod autoencoder;
pub mod baselines;
pub mod capture;
pub mod container;
pub mod eval;
pub mod io;
pub mod optim;
pub mod pipeline;
pub mod seqmodel;
pub mod synth;
pub mod tensor;
pub mod trajectory;
