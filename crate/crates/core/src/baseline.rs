//! Periodic timestamp-broadcast invalidation, the comparison baseline.
//!
//! The base station broadcasts a report every `period` ticks listing the
//! items updated within the last `window` ticks. A client holds every query
//! until the next report confirms or refutes its cached copy, then either
//! answers from cache or uplinks its own request. There is no DTA and no
//! cross-client coalescing. A client that slept longer than the window has
//! missed reports it cannot reconstruct and drops its whole cache on wake.

use std::collections::{BTreeMap, BTreeSet};

use crate::model::{
    CacheEntry, ClientCache, DataItem, IrEntry, ItemId, NodeId, ProtocolMessage, SimTime, Ticks,
};
use crate::node::{AnswerVia, BsEvent, ClientEvent, Dest, Note, StepOutput, Timer};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TsParams {
    /// Report period L.
    pub period: Ticks,
    /// Report history window w = k * L.
    pub window: Ticks,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TsBaseStationState {
    pub db_cache: BTreeMap<ItemId, DataItem>,
    /// Timestamp of the latest update per item, from server pushes.
    pub last_update: BTreeMap<ItemId, SimTime>,
    seen_version: BTreeMap<ItemId, u64>,
    waiting: BTreeMap<ItemId, BTreeSet<NodeId>>,
    forwarded: BTreeSet<ItemId>,
    params: TsParams,
}

impl TsBaseStationState {
    pub fn new(params: TsParams) -> Self {
        TsBaseStationState {
            db_cache: BTreeMap::new(),
            last_update: BTreeMap::new(),
            seen_version: BTreeMap::new(),
            waiting: BTreeMap::new(),
            forwarded: BTreeSet::new(),
            params,
        }
    }

    pub fn start(&self, now: SimTime) -> StepOutput {
        let mut out = StepOutput::default();
        out.timers.push(Timer::IrTick(now + self.params.period));
        out
    }

    pub fn step(&mut self, event: BsEvent, now: SimTime) -> StepOutput {
        let mut out = StepOutput::default();
        match event {
            BsEvent::IrTick => {
                let since = now.ticks().saturating_sub(self.params.window);
                let entries = self
                    .last_update
                    .iter()
                    .filter(|(_, ts)| ts.ticks() > since && **ts <= now)
                    .map(|(item, ts)| IrEntry {
                        item: *item,
                        avi: None,
                        ts: *ts,
                    })
                    .collect();
                out.send(
                    Dest::Broadcast,
                    ProtocolMessage::InvalidationReport { entries },
                );
                out.timers.push(Timer::IrTick(now + self.params.period));
            }
            BsEvent::ElectionTimeout => out.violation("no election under timestamp broadcast"),
            BsEvent::Deliver {
                msg: ProtocolMessage::ServerUpdate { item, version, ts },
                ..
            } => {
                let seen = self.seen_version.get(&item).copied();
                if seen.is_none_or(|s| version > s) {
                    self.seen_version.insert(item, version);
                    if version > 0 {
                        self.last_update.insert(item, ts);
                    }
                    self.db_cache.insert(
                        item,
                        DataItem {
                            id: item,
                            version,
                            last_update_ts: ts,
                            avi: 0,
                        },
                    );
                }
                self.forwarded.remove(&item);
                for who in self.waiting.remove(&item).unwrap_or_default() {
                    self.serve(item, who, &mut out);
                }
            }
            BsEvent::Deliver {
                msg: ProtocolMessage::Query { item, from },
                ..
            } => self.serve(item, from, &mut out),
            BsEvent::Deliver {
                msg: ProtocolMessage::RoamNotice { .. },
                ..
            } => {}
            BsEvent::Deliver { from, msg } => out.violation(format!(
                "base station cannot handle {} from {from}",
                msg.name()
            )),
        }
        out
    }

    fn serve(&mut self, item: ItemId, who: NodeId, out: &mut StepOutput) {
        match self.db_cache.get(&item) {
            Some(data) => out.send(Dest::To(who), ProtocolMessage::ValidData { data: *data }),
            None => {
                self.waiting.entry(item).or_default().insert(who);
                out.note(Note::Parked {
                    item,
                    requester: who,
                });
                if self.forwarded.insert(item) {
                    out.send(
                        Dest::To(NodeId::SERVER),
                        ProtocolMessage::Query { item, from: who },
                    );
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TsClientState {
    pub id: NodeId,
    pub cache: ClientCache,
    pub asleep: bool,
    pub departed: bool,
    pub slept_at: Option<SimTime>,
    pub pending: BTreeMap<ItemId, Vec<SimTime>>,
    /// Items with queries held until the next report.
    pub awaiting_report: BTreeSet<ItemId>,
    outstanding: BTreeSet<ItemId>,
    params: TsParams,
}

impl TsClientState {
    pub fn new(id: NodeId, cache_capacity: Option<usize>, params: TsParams) -> Self {
        TsClientState {
            id,
            cache: ClientCache::new(cache_capacity),
            asleep: false,
            departed: false,
            slept_at: None,
            pending: BTreeMap::new(),
            awaiting_report: BTreeSet::new(),
            outstanding: BTreeSet::new(),
            params,
        }
    }

    fn uplink(&mut self, item: ItemId, out: &mut StepOutput) {
        self.outstanding.insert(item);
        out.send(
            Dest::To(NodeId::BASE_STATION),
            ProtocolMessage::Query {
                item,
                from: self.id,
            },
        );
    }

    fn answer(&mut self, item: ItemId, data: DataItem, via: AnswerVia, out: &mut StepOutput) {
        if let Some(issued) = self.pending.remove(&item) {
            self.cache.touch(item);
            for issued_at in issued {
                out.note(Note::Answered {
                    item,
                    data,
                    issued_at,
                    via,
                });
            }
        }
    }

    pub fn step(&mut self, event: ClientEvent, now: SimTime) -> StepOutput {
        let mut out = StepOutput::default();
        if self.departed {
            out.violation(format!("{} has left the cell", self.id));
            return out;
        }
        match event {
            ClientEvent::LocalQuery(item) => {
                let lookup = if self.cache.get(item).is_some() {
                    "hit"
                } else {
                    "miss"
                };
                out.note(Note::QueryIssued { item, lookup });
                self.pending.entry(item).or_default().push(now);
                if !self.outstanding.contains(&item) {
                    self.awaiting_report.insert(item);
                }
            }
            ClientEvent::Sleep => {
                if !self.asleep {
                    self.asleep = true;
                    self.slept_at = Some(now);
                    out.note(Note::Slept);
                }
            }
            ClientEvent::Wake => {
                if self.asleep {
                    self.asleep = false;
                    out.note(Note::Woke);
                    let slept = self.slept_at.take().map_or(0, |t| now.since(t));
                    if slept > self.params.window {
                        let entries = self.cache.clear();
                        out.note(Note::Purged { entries });
                    }
                    // Replies may have been lost while asleep.
                    let lost: Vec<_> = self.outstanding.iter().copied().collect();
                    for item in lost {
                        self.uplink(item, &mut out);
                    }
                }
            }
            ClientEvent::Roam => {
                out.send(
                    Dest::To(NodeId::BASE_STATION),
                    ProtocolMessage::RoamNotice { from: self.id },
                );
                self.departed = true;
                out.note(Note::Departed);
            }
            ClientEvent::Deliver {
                msg: ProtocolMessage::InvalidationReport { entries },
                ..
            } => {
                for e in &entries {
                    if self
                        .cache
                        .get(e.item)
                        .is_some_and(|c| e.ts > c.item.last_update_ts)
                    {
                        self.cache.remove(e.item);
                        out.note(Note::Invalidated { item: e.item });
                    }
                }
                let held = std::mem::take(&mut self.awaiting_report);
                for item in held {
                    match self.cache.get(item).map(|e| e.item) {
                        Some(data) => self.answer(item, data, AnswerVia::Local, &mut out),
                        None if !self.outstanding.contains(&item) => self.uplink(item, &mut out),
                        None => {}
                    }
                }
            }
            ClientEvent::Deliver {
                msg: ProtocolMessage::ValidData { data },
                ..
            } => {
                let item = data.id;
                let (_, evicted) = self
                    .cache
                    .install(CacheEntry::new(data, now.max(data.last_update_ts)));
                if let Some(e) = evicted {
                    out.note(Note::Evicted { item: e });
                }
                self.outstanding.remove(&item);
                self.awaiting_report.remove(&item);
                let current = self.cache.get(item).map_or(data, |e| e.item);
                self.answer(item, current, AnswerVia::Server, &mut out);
            }
            ClientEvent::Deliver { from, msg } => out.violation(format!(
                "client cannot handle {} from {from} under timestamp broadcast",
                msg.name()
            )),
        }
        out
    }
}

/// Either side of the baseline protocol.
#[derive(Debug, Clone, PartialEq)]
pub enum TsNode {
    BaseStation(TsBaseStationState),
    Client(TsClientState),
}

/// Input for [`ts_baseline_step`], matching the node it is delivered to.
#[derive(Debug, Clone, PartialEq)]
pub enum TsEvent {
    BaseStation(BsEvent),
    Client(ClientEvent),
}

pub fn ts_baseline_step(mut state: TsNode, event: TsEvent, now: SimTime) -> (TsNode, StepOutput) {
    let out = match (&mut state, event) {
        (TsNode::BaseStation(bs), TsEvent::BaseStation(ev)) => bs.step(ev, now),
        (TsNode::Client(c), TsEvent::Client(ev)) => c.step(ev, now),
        _ => {
            let mut out = StepOutput::default();
            out.violation("event addressed to the wrong kind of node");
            out
        }
    };
    (state, out)
}
