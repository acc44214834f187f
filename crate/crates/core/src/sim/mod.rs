//! Discrete-event simulator: event queue, channels, workload and the run
//! loop that routes events to the protocol machines.

mod engine;
mod event;
mod network;
mod trace;
mod workload;

pub use engine::{run, RunOutput};
pub use event::{EventKind, EventQueue, SimEvent};
pub use network::{
    broadcast, multicast, unicast, uplink, wired, ChannelParams, Delivery, DropReason, Fanout,
    Reach,
};
pub use trace::{TraceFooter, TraceHeader, TraceLog, TraceParseError, TraceRecord, TRACE_VERSION};
pub use workload::{gen_workload, Workload, WorkloadParams, WorkloadShape};
