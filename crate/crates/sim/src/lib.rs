//! Seeded discrete-event simulation of a Tree-Chain network.

pub mod adversary;
pub mod config;
pub mod net;
pub mod retrieval;
pub mod scenarios;
pub mod workload;
pub mod world;
