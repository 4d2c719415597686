//! Communication accounting.
//!
//! Payload bytes count only algorithm data (uploads and broadcasts);
//! coordination frames (hello, sync-request, bye) count as messages but
//! carry zero payload bytes. The counts are derived from envelopes, not
//! from wire frames, so both transports account identically.

use std::collections::BTreeMap;

#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct Counters {
    pub messages_sent: u64,
    pub messages_received: u64,
    pub bytes_sent: u64,
    pub bytes_received: u64,
    /// Communication rounds this party participated in.
    pub comm_rounds: u64,
}

/// Per-agent counters plus the server's own, for one run.
#[derive(Debug, Default, Clone, PartialEq, Eq)]
pub struct CommLedger {
    pub agents: BTreeMap<u32, Counters>,
    pub server: Counters,
}

impl CommLedger {
    pub fn agent(&self, agent_id: u32) -> Counters {
        self.agents.get(&agent_id).copied().unwrap_or_default()
    }

    pub fn total_agent_bytes_sent(&self) -> u64 {
        self.agents.values().map(|c| c.bytes_sent).sum()
    }

    pub fn total_agent_bytes_received(&self) -> u64 {
        self.agents.values().map(|c| c.bytes_received).sum()
    }

    /// Conservation check: all agent payload traffic is matched by the
    /// server's mirror counters.
    pub fn is_conserved(&self) -> bool {
        self.total_agent_bytes_sent() == self.server.bytes_received
            && self.total_agent_bytes_received() == self.server.bytes_sent
    }
}
