//! Bipartite user-slot contention graph and successive interference
//! cancellation via iterative peeling.
//!
//! A singleton slot resolves its user; removing that user's replicas from
//! every other slot it transmitted in can expose new singletons, and the
//! process repeats until no exploitable degree-1 slot remains (a stopping
//! set). Slots born with more interfering transmissions than the degree
//! cap are never exploitable, no matter how far replica removal thins
//! them, though removal bookkeeping is still applied to them.

use std::collections::{HashSet, VecDeque};

use thiserror::Error;

use crate::channel::SlotRecord;

/// Whether peeling may use slots from earlier rounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SicMode {
    /// Keep all past slots; replicas cancel across round boundaries.
    Backtrack,
    /// Start each round from an empty slot set.
    NoBacktrack,
}

impl SicMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            SicMode::Backtrack => "backtrack",
            SicMode::NoBacktrack => "no-backtrack",
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum GraphError {
    #[error("slot ({round}, {slot}) already present")]
    DuplicateSlot { round: u32, slot: u32 },
    #[error("contributor {user} out of range for a {n_users}-user graph")]
    UnknownUser { user: u32, n_users: u32 },
}

#[derive(Debug, Clone)]
struct SlotNode {
    original_degree: u32,
    exploitable: bool,
    unresolved: Vec<u32>,
}

#[derive(Debug, Clone, Default)]
struct UserNode {
    resolved: bool,
    incident: Vec<usize>,
}

/// The decoder state for one protocol run.
#[derive(Debug, Clone)]
pub struct ContentionGraph {
    slots: Vec<SlotNode>,
    users: Vec<UserNode>,
    degree_cap: u32,
    seen: HashSet<(u32, u32)>,
    /// Exploitable slots whose unresolved set reached size one.
    ready: VecDeque<usize>,
    resolved_count: u32,
}

impl ContentionGraph {
    pub fn new(n_users: u32, degree_cap: u32) -> Self {
        Self {
            slots: Vec::new(),
            users: vec![UserNode::default(); n_users as usize],
            degree_cap,
            seen: HashSet::new(),
            ready: VecDeque::new(),
            resolved_count: 0,
        }
    }

    pub fn n_users(&self) -> u32 {
        self.users.len() as u32
    }

    pub fn degree_cap(&self) -> u32 {
        self.degree_cap
    }

    pub fn slot_count(&self) -> usize {
        self.slots.len()
    }

    pub fn resolved_count(&self) -> u32 {
        self.resolved_count
    }

    pub fn is_resolved(&self, user: u32) -> bool {
        self.users[user as usize].resolved
    }

    /// Current unresolved-contributor count of slot `idx`, in insertion
    /// order of the slots still in the graph.
    pub fn unresolved_degree(&self, idx: usize) -> usize {
        self.slots[idx].unresolved.len()
    }

    pub fn is_exploitable(&self, idx: usize) -> bool {
        self.slots[idx].exploitable
    }

    /// Degree the slot was born with, before any replica removal.
    pub fn original_degree(&self, idx: usize) -> u32 {
        self.slots[idx].original_degree
    }

    /// Inserts a slot node. Contributors already resolved are excluded
    /// from the unresolved set immediately; the exploitable flag is fixed
    /// from the original degree and never changes afterwards.
    pub fn add_slot(&mut self, record: &SlotRecord) -> Result<(), GraphError> {
        let n_users = self.n_users();
        for &u in &record.contributors {
            if u >= n_users {
                return Err(GraphError::UnknownUser { user: u, n_users });
            }
        }
        if !self.seen.insert((record.round_index, record.slot_index)) {
            return Err(GraphError::DuplicateSlot {
                round: record.round_index,
                slot: record.slot_index,
            });
        }
        let original_degree = record.contributors.len() as u32;
        let exploitable = original_degree <= self.degree_cap;
        let unresolved: Vec<u32> = record
            .contributors
            .iter()
            .copied()
            .filter(|&u| !self.users[u as usize].resolved)
            .collect();
        let idx = self.slots.len();
        for &u in &unresolved {
            self.users[u as usize].incident.push(idx);
        }
        if exploitable && unresolved.len() == 1 {
            self.ready.push_back(idx);
        }
        self.slots.push(SlotNode {
            original_degree,
            exploitable,
            unresolved,
        });
        Ok(())
    }

    /// Runs peeling to its fixed point and returns the users resolved by
    /// this call, in resolution order.
    ///
    /// Replica removal is applied to every incident slot, exploitable or
    /// not; only exploitable slots may act as resolvers.
    pub fn peel(&mut self) -> Vec<u32> {
        let mut newly = Vec::new();
        while let Some(idx) = self.ready.pop_front() {
            if self.slots[idx].unresolved.len() != 1 {
                continue; // stale entry: the slot was thinned meanwhile
            }
            let user = self.slots[idx].unresolved[0];
            if self.users[user as usize].resolved {
                continue;
            }
            self.users[user as usize].resolved = true;
            self.resolved_count += 1;
            newly.push(user);
            let incident = std::mem::take(&mut self.users[user as usize].incident);
            for s_idx in incident {
                let slot = &mut self.slots[s_idx];
                if let Some(pos) = slot.unresolved.iter().position(|&u| u == user) {
                    slot.unresolved.swap_remove(pos);
                    if slot.exploitable && slot.unresolved.len() == 1 {
                        self.ready.push_back(s_idx);
                    }
                }
            }
        }
        newly
    }

    /// Round-boundary reset. No-backtrack discards every slot node while
    /// resolved flags persist, so carried-over users never re-enter an
    /// unresolved set; backtrack leaves the graph untouched.
    pub fn reset_for_round(&mut self, mode: SicMode) {
        match mode {
            SicMode::Backtrack => {}
            SicMode::NoBacktrack => {
                self.slots.clear();
                self.ready.clear();
                for user in &mut self.users {
                    user.incident.clear();
                }
            }
        }
    }
}
