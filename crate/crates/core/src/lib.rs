//! Simulation models for reputation-driven vehicle-twin migration.
//!
//! The crate is split along the migration workflow:
//!
//! - [`reputation`]: subjective-logic opinions, interaction freshness and
//!   recommendation fusion, producing one scalar reputation per RSU.
//! - [`coalition`]: the NTU coalition game over RSU nodes, solved with
//!   Pareto-order merge-and-split.
//! - [`stackelberg`]: the bandwidth market between the selected coalition
//!   (leader) and vehicular metaverse users (followers).
//! - [`consensus`]: reputation-tiered miner groups and the PBFT safety model.
//!
//! [`channel`] holds the radio link model shared by the coalition and market.

pub mod channel;
pub mod coalition;
pub mod consensus;
pub mod ids;
pub mod reputation;
pub mod stackelberg;

pub use channel::ChannelParams;
pub use ids::{NodeId, RsuId, VmuId};
