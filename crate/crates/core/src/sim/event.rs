use std::collections::BTreeMap;

use crate::model::{ItemId, NodeId, ProtocolMessage, SimTime};

#[derive(Debug, Clone, PartialEq)]
pub enum EventKind {
    /// Kicks off elections (or the first report tick) at time zero.
    Start,
    Deliver {
        to: NodeId,
        from: NodeId,
        msg: ProtocolMessage,
    },
    LocalQuery {
        client: NodeId,
        item: ItemId,
    },
    ScheduledUpdate(ItemId),
    Sleep(NodeId),
    Wake(NodeId),
    Roam(NodeId),
    ElectionTimeout,
    IrTick,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimEvent {
    pub at: SimTime,
    pub seq: u64,
    pub kind: EventKind,
}

/// Pending events, popped in `(at, seq)` order. `seq` is a global counter
/// so same-tick events run in the order they were scheduled.
#[derive(Debug, Default)]
pub struct EventQueue {
    events: BTreeMap<(SimTime, u64), EventKind>,
    next_seq: u64,
}

impl EventQueue {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, at: SimTime, kind: EventKind) -> u64 {
        let seq = self.next_seq;
        self.next_seq += 1;
        self.events.insert((at, seq), kind);
        seq
    }

    pub fn pop(&mut self) -> Option<SimEvent> {
        self.events
            .pop_first()
            .map(|((at, seq), kind)| SimEvent { at, seq, kind })
    }

    pub fn peek_time(&self) -> Option<SimTime> {
        self.events.keys().next().map(|(at, _)| *at)
    }

    pub fn next_seq(&self) -> u64 {
        self.next_seq
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = SimEvent> + '_ {
        self.events.iter().map(|((at, seq), kind)| SimEvent {
            at: *at,
            seq: *seq,
            kind: kind.clone(),
        })
    }
}
