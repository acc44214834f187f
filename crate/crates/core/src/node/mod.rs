//! Protocol state machines for the base station, clients (ordinary and DTA)
//! and the database server.
//!
//! Each machine is a deterministic step function: given its state, one input
//! event and the current time, it mutates the state and returns the messages
//! to send plus [`Note`]s describing what happened. Nothing here touches the
//! event queue; the simulator routes the output.

mod base_station;
mod client;
mod server;

pub use base_station::{bs_step, BaseStationState, BsParams, LapsePolicy};
pub use client::{client_step, dta_bootstrap, dta_step, ClientParams, ClientState, Role};
pub use server::{server_step, ServerState};

use crate::model::{DataItem, GroupId, ItemId, NodeId, ProtocolMessage, SimTime, Ticks};

#[derive(Debug, Clone, PartialEq)]
pub enum Dest {
    To(NodeId),
    /// Base-station downlink broadcast to every client in the cell.
    Broadcast,
    /// DTA multicast to the joined group members.
    Group,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Outgoing {
    pub to: Dest,
    pub msg: ProtocolMessage,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Timer {
    ElectionTimeout(SimTime),
    IrTick(SimTime),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnswerVia {
    Local,
    Dta,
    Server,
}

impl AnswerVia {
    pub fn as_str(self) -> &'static str {
        match self {
            AnswerVia::Local => "local",
            AnswerVia::Dta => "dta",
            AnswerVia::Server => "server",
        }
    }
}

/// Observable facts produced by a step, turned into trace records and metrics.
#[derive(Debug, Clone, PartialEq)]
pub enum Note {
    QueryIssued {
        item: ItemId,
        lookup: &'static str,
    },
    Answered {
        item: ItemId,
        data: DataItem,
        issued_at: SimTime,
        via: AnswerVia,
    },
    Coalesced {
        item: ItemId,
    },
    Elected {
        dta: NodeId,
        successor: Option<NodeId>,
        group: GroupId,
    },
    ElectionRetry {
        deadline: SimTime,
    },
    AviObserved {
        item: ItemId,
        version: u64,
        old: Option<Ticks>,
        new: Ticks,
        ir: bool,
    },
    Renewed {
        item: ItemId,
        avi: Ticks,
    },
    Parked {
        item: ItemId,
        requester: NodeId,
    },
    RoleChanged {
        role: Role,
    },
    Joined {
        dta: NodeId,
    },
    Left,
    Invalidated {
        item: ItemId,
    },
    Evicted {
        item: ItemId,
    },
    Purged {
        entries: usize,
    },
    Slept,
    Woke,
    SleepSkipped,
    Departed,
    Updated {
        item: ItemId,
        version: u64,
    },
    Violation {
        reason: String,
    },
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct StepOutput {
    pub sends: Vec<Outgoing>,
    pub notes: Vec<Note>,
    pub timers: Vec<Timer>,
}

impl StepOutput {
    pub fn send(&mut self, to: Dest, msg: ProtocolMessage) {
        self.sends.push(Outgoing { to, msg });
    }

    pub fn note(&mut self, note: Note) {
        self.notes.push(note);
    }

    pub fn violation(&mut self, reason: impl Into<String>) {
        self.notes.push(Note::Violation {
            reason: reason.into(),
        });
    }
}

/// Input to a client machine.
#[derive(Debug, Clone, PartialEq)]
pub enum ClientEvent {
    Deliver { from: NodeId, msg: ProtocolMessage },
    LocalQuery(ItemId),
    Sleep,
    Wake,
    Roam,
}

/// Input to the base station.
#[derive(Debug, Clone, PartialEq)]
pub enum BsEvent {
    Deliver { from: NodeId, msg: ProtocolMessage },
    ElectionTimeout,
    IrTick,
}

/// Input to the database server.
#[derive(Debug, Clone, PartialEq)]
pub enum ServerEvent {
    ScheduledUpdate(ItemId),
    Deliver { from: NodeId, msg: ProtocolMessage },
}
