//! Tree-structured multi-ledger blockchain primitives and protocol logic.

pub mod codec;
pub mod merkle;
pub mod range;
pub mod sig;
pub mod types;
pub mod wire;
pub mod consensus;
pub mod ledger;
pub mod protocol;
pub mod node;
