//! Delivery channels. Latencies are constants in ticks.

use serde::{Deserialize, Serialize};

use crate::model::{NodeId, NodeKind, ProtocolMessage, SimTime, Ticks};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChannelParams {
    /// Client to BS uplink.
    pub d_up: Ticks,
    /// BS downlink, unicast or broadcast.
    pub d_down: Ticks,
    /// DTA multicast to its group.
    pub d_mc: Ticks,
    /// BS to server, both ways.
    pub d_wire: Ticks,
    /// Client to DTA unicast.
    pub d_peer: Ticks,
}

impl Default for ChannelParams {
    fn default() -> Self {
        ChannelParams {
            d_up: 5,
            d_down: 5,
            d_mc: 2,
            d_wire: 10,
            d_peer: 3,
        }
    }
}

impl ChannelParams {
    /// Latency of a unicast between two nodes, `None` where no link exists
    /// (server to client, for instance).
    pub fn unicast_latency(&self, from: NodeKind, to: NodeKind) -> Option<Ticks> {
        use NodeKind::*;
        match (from, to) {
            (Client, BaseStation) => Some(self.d_up),
            (Client, Client) => Some(self.d_peer),
            (BaseStation, Client) => Some(self.d_down),
            (BaseStation, Server) | (Server, BaseStation) => Some(self.d_wire),
            _ => None,
        }
    }
}

/// Reachability of one client, as seen by the channel when a message is sent.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Reach {
    pub id: NodeId,
    pub asleep: bool,
    pub departed: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DropReason {
    Sleep,
    Departed,
}

impl DropReason {
    pub fn event_name(self) -> &'static str {
        match self {
            DropReason::Sleep => "dropped-sleep",
            DropReason::Departed => "dropped-departed",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Delivery {
    pub at: SimTime,
    pub to: NodeId,
    pub from: NodeId,
    pub msg: ProtocolMessage,
}

/// Deliveries scheduled by one send, plus the recipients it could not reach.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Fanout {
    pub deliveries: Vec<Delivery>,
    pub dropped: Vec<(NodeId, DropReason)>,
}

impl Fanout {
    fn to_clients<'a>(
        recipients: impl IntoIterator<Item = &'a Reach>,
        from: NodeId,
        msg: &ProtocolMessage,
        at: SimTime,
    ) -> Fanout {
        let mut f = Fanout::default();
        for r in recipients {
            if r.departed {
                f.dropped.push((r.id, DropReason::Departed));
            } else if r.asleep {
                f.dropped.push((r.id, DropReason::Sleep));
            } else {
                f.deliveries.push(Delivery {
                    at,
                    to: r.id,
                    from,
                    msg: msg.clone(),
                });
            }
        }
        f
    }

    pub fn copies(&self) -> usize {
        self.deliveries.len() + self.dropped.len()
    }
}

/// BS downlink broadcast to every client in the cell.
pub fn broadcast(
    ch: &ChannelParams,
    clients: &[Reach],
    msg: &ProtocolMessage,
    now: SimTime,
) -> Fanout {
    Fanout::to_clients(clients, NodeId::BASE_STATION, msg, now + ch.d_down)
}

/// Client to BS.
pub fn uplink(ch: &ChannelParams, from: NodeId, msg: ProtocolMessage, now: SimTime) -> Delivery {
    Delivery {
        at: now + ch.d_up,
        to: NodeId::BASE_STATION,
        from,
        msg,
    }
}

/// DTA to its joined members.
pub fn multicast(
    ch: &ChannelParams,
    dta: NodeId,
    members: &[Reach],
    msg: &ProtocolMessage,
    now: SimTime,
) -> Fanout {
    Fanout::to_clients(members, dta, msg, now + ch.d_mc)
}

/// BS and server over the wired link.
pub fn wired(
    ch: &ChannelParams,
    from: NodeId,
    to: NodeId,
    msg: ProtocolMessage,
    now: SimTime,
) -> Delivery {
    Delivery {
        at: now + ch.d_wire,
        to,
        from,
        msg,
    }
}

/// Any point-to-point send. Client recipients that are asleep or gone are
/// dropped at send time.
pub fn unicast(
    ch: &ChannelParams,
    from: NodeId,
    to: Reach,
    msg: &ProtocolMessage,
    now: SimTime,
) -> Option<Fanout> {
    let latency = ch.unicast_latency(from.kind, to.id.kind)?;
    Some(Fanout::to_clients([&to], from, msg, now + latency))
}
