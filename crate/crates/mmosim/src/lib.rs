//! Deterministic agent-based simulator of an MMO game economy.
//!
//! A fixed-endowment grid world supplies collectible resources (EXP, MAT);
//! agents convert them through upgrades, trade MAT for TOK on a continuous
//! double auction or through chat-negotiated P2P deals, and recharge TOK
//! from real currency. Agent decisions are delegated to pluggable policy
//! backends (random, rule-based, scripted, remote LLM); every run is fully
//! reproducible from its seed.
//!
//! Module map:
//! - [`world`] — grid map, scenario generation, navigation (A* / DFS burst)
//! - [`economy`] — resource ledgers, conversion rules, the action verifier
//! - [`market`] — order book with escrow and price-time priority matching
//! - [`comms`] — chat channels and the P2P negotiation state machine
//! - [`agent`] — profiles, observations, numeric STM/LTM memory, reflection
//! - [`policy`] — decision backends and the ACTION-line grammar
//! - [`metrics`] — capability, diversity, equality/profitability, Pearson
//! - [`sim`] — step resolver, trace stream, config, run orchestration

pub mod agent;
pub mod comms;
pub mod economy;
pub mod market;
pub mod metrics;
pub mod policy;
pub mod sim;
pub mod world;

use serde::{Deserialize, Serialize};

/// Identifier of a simulated player. Agents are numbered `0..N` within a run.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default,
)]
#[serde(transparent)]
pub struct AgentId(pub u32);

impl AgentId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl std::fmt::Display for AgentId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}
