//! Domain types shared by every protocol role, plus cache lookup.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::{Add, Sub};

use crate::avi;

/// A duration in simulated milliseconds.
pub type Ticks = u64;

/// Simulated time in integer milliseconds.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SimTime(pub u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);

    pub fn ticks(self) -> u64 {
        self.0
    }

    /// Ticks elapsed since `earlier`, zero if `earlier` is in the future.
    pub fn since(self, earlier: SimTime) -> Ticks {
        self.0.saturating_sub(earlier.0)
    }
}

impl Add<Ticks> for SimTime {
    type Output = SimTime;

    fn add(self, rhs: Ticks) -> SimTime {
        SimTime(self.0.saturating_add(rhs))
    }
}

impl Sub<SimTime> for SimTime {
    type Output = Ticks;

    fn sub(self, rhs: SimTime) -> Ticks {
        self.since(rhs)
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ItemId(pub u32);

impl fmt::Display for ItemId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Multicast group generation. Bumped every time the base station names a new DTA.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct GroupId(pub u32);

impl fmt::Display for GroupId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum NodeKind {
    Server,
    BaseStation,
    Client,
}

impl NodeKind {
    pub fn as_str(self) -> &'static str {
        match self {
            NodeKind::Server => "server",
            NodeKind::BaseStation => "bs",
            NodeKind::Client => "client",
        }
    }
}

/// Address of a simulated host. Clients are numbered from 1; the DTA is a
/// client role, not a node kind.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId {
    pub kind: NodeKind,
    pub index: u32,
}

impl NodeId {
    pub const SERVER: NodeId = NodeId {
        kind: NodeKind::Server,
        index: 0,
    };
    pub const BASE_STATION: NodeId = NodeId {
        kind: NodeKind::BaseStation,
        index: 0,
    };

    pub fn client(index: u32) -> NodeId {
        NodeId {
            kind: NodeKind::Client,
            index,
        }
    }

    pub fn is_client(self) -> bool {
        self.kind == NodeKind::Client
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.kind.as_str(), self.index)
    }
}

impl std::str::FromStr for NodeId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (kind, idx) = s
            .split_once(':')
            .ok_or_else(|| format!("node id `{s}` is not <kind>:<index>"))?;
        let kind = match kind {
            "server" => NodeKind::Server,
            "bs" => NodeKind::BaseStation,
            "client" => NodeKind::Client,
            other => return Err(format!("unknown node kind `{other}`")),
        };
        let index = idx
            .parse()
            .map_err(|_| format!("bad node index in `{s}`"))?;
        Ok(NodeId { kind, index })
    }
}

/// A versioned datum. The version counter stands in for the payload.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct DataItem {
    pub id: ItemId,
    pub version: u64,
    pub last_update_ts: SimTime,
    pub avi: Ticks,
}

impl DataItem {
    pub fn initial(id: ItemId) -> Self {
        DataItem {
            id,
            version: 0,
            last_update_ts: SimTime::ZERO,
            avi: 0,
        }
    }

    /// First instant at which this copy is no longer valid.
    pub fn expires_at(&self) -> SimTime {
        self.last_update_ts + self.avi
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CacheEntry {
    pub item: DataItem,
    pub fetched_at: SimTime,
}

impl CacheEntry {
    pub fn new(item: DataItem, fetched_at: SimTime) -> Self {
        debug_assert!(fetched_at >= item.last_update_ts);
        CacheEntry { item, fetched_at }
    }
}

/// One entry of an invalidation report. `avi` is absent in timestamp-only
/// reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IrEntry {
    pub item: ItemId,
    pub avi: Option<Ticks>,
    pub ts: SimTime,
}

/// Size of an invalidation report under the fixed accounting rule:
/// a 4-byte header plus 12 bytes per entry.
pub fn ir_bytes(entries: usize) -> u64 {
    4 + 12 * entries as u64
}

/// Every message that crosses a simulated link.
#[derive(Debug, Clone, PartialEq)]
pub enum ProtocolMessage {
    CandidacyReport {
        from: NodeId,
        score: f64,
    },
    DtaAnnouncement {
        dta: NodeId,
        successor: Option<NodeId>,
        group: GroupId,
    },
    /// The DTA left with no successor; clients fall back to the base station.
    DtaVacant {
        group: GroupId,
    },
    Query {
        item: ItemId,
        from: NodeId,
    },
    Redirect {
        to_dta: NodeId,
        item: ItemId,
    },
    ValidData {
        data: DataItem,
    },
    MulticastUpdate {
        data: DataItem,
    },
    InvalidationReport {
        entries: Vec<IrEntry>,
    },
    ServerUpdate {
        item: ItemId,
        version: u64,
        ts: SimTime,
    },
    Register {
        from: NodeId,
    },
    RoamNotice {
        from: NodeId,
    },
}

impl ProtocolMessage {
    pub fn name(&self) -> &'static str {
        match self {
            ProtocolMessage::CandidacyReport { .. } => "candidacy",
            ProtocolMessage::DtaAnnouncement { .. } => "dta-announcement",
            ProtocolMessage::DtaVacant { .. } => "dta-vacant",
            ProtocolMessage::Query { .. } => "query",
            ProtocolMessage::Redirect { .. } => "redirect",
            ProtocolMessage::ValidData { .. } => "valid-data",
            ProtocolMessage::MulticastUpdate { .. } => "multicast",
            ProtocolMessage::InvalidationReport { .. } => "ir",
            ProtocolMessage::ServerUpdate { .. } => "server-update",
            ProtocolMessage::Register { .. } => "register",
            ProtocolMessage::RoamNotice { .. } => "roam-notice",
        }
    }

    /// Message payload as trace key/value pairs, in a fixed order.
    pub fn fields(&self) -> Vec<(&'static str, String)> {
        fn data_fields(d: &DataItem) -> Vec<(&'static str, String)> {
            vec![
                ("item", d.id.to_string()),
                ("version", d.version.to_string()),
                ("ts", d.last_update_ts.to_string()),
                ("avi", d.avi.to_string()),
            ]
        }
        match self {
            ProtocolMessage::CandidacyReport { from, score } => {
                vec![("origin", from.to_string()), ("score", score.to_string())]
            }
            ProtocolMessage::DtaAnnouncement {
                dta,
                successor,
                group,
            } => vec![
                ("dta", dta.to_string()),
                ("successor", opt_node(*successor)),
                ("group", group.to_string()),
            ],
            ProtocolMessage::DtaVacant { group } => vec![("group", group.to_string())],
            ProtocolMessage::Query { item, from } => {
                vec![("item", item.to_string()), ("origin", from.to_string())]
            }
            ProtocolMessage::Redirect { to_dta, item } => {
                vec![("dta", to_dta.to_string()), ("item", item.to_string())]
            }
            ProtocolMessage::ValidData { data } | ProtocolMessage::MulticastUpdate { data } => {
                data_fields(data)
            }
            ProtocolMessage::InvalidationReport { entries } => {
                let list = if entries.is_empty() {
                    "-".to_string()
                } else {
                    entries
                        .iter()
                        .map(|e| {
                            let avi = e.avi.map_or_else(|| "-".to_string(), |a| a.to_string());
                            format!("{}:{}@{}", e.item, avi, e.ts)
                        })
                        .collect::<Vec<_>>()
                        .join(",")
                };
                vec![("entries", list)]
            }
            ProtocolMessage::ServerUpdate { item, version, ts } => vec![
                ("item", item.to_string()),
                ("version", version.to_string()),
                ("ts", ts.to_string()),
            ],
            ProtocolMessage::Register { from } | ProtocolMessage::RoamNotice { from } => {
                vec![("origin", from.to_string())]
            }
        }
    }
}

pub(crate) fn opt_node(n: Option<NodeId>) -> String {
    n.map_or_else(|| "-".to_string(), |n| n.to_string())
}

/// Outcome of looking an item up in a local cache.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Lookup<'a> {
    HitValid(&'a CacheEntry),
    HitStale(&'a CacheEntry),
    Miss,
}

impl Lookup<'_> {
    pub fn label(&self) -> &'static str {
        match self {
            Lookup::HitValid(_) => "valid",
            Lookup::HitStale(_) => "stale",
            Lookup::Miss => "miss",
        }
    }
}

/// Look `item` up without touching the cache.
pub fn cache_lookup(
    cache: &BTreeMap<ItemId, CacheEntry>,
    item: ItemId,
    now: SimTime,
) -> Lookup<'_> {
    match cache.get(&item) {
        None => Lookup::Miss,
        Some(entry) if avi::is_valid(entry, now) => Lookup::HitValid(entry),
        Some(entry) => Lookup::HitStale(entry),
    }
}

/// A client cache with optional LRU capacity.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ClientCache {
    entries: BTreeMap<ItemId, CacheEntry>,
    last_used: BTreeMap<ItemId, u64>,
    clock: u64,
    capacity: Option<usize>,
}

impl ClientCache {
    pub fn new(capacity: Option<usize>) -> Self {
        ClientCache {
            capacity,
            ..Default::default()
        }
    }

    pub fn entries(&self) -> &BTreeMap<ItemId, CacheEntry> {
        &self.entries
    }

    pub fn get(&self, item: ItemId) -> Option<&CacheEntry> {
        self.entries.get(&item)
    }

    pub fn lookup(&self, item: ItemId, now: SimTime) -> Lookup<'_> {
        cache_lookup(&self.entries, item, now)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn touch(&mut self, item: ItemId) {
        if self.entries.contains_key(&item) {
            self.clock += 1;
            self.last_used.insert(item, self.clock);
        }
    }

    /// Install `entry` unless a newer version is already cached. Returns
    /// whether the entry was written and the item evicted to make room, if any.
    pub fn install(&mut self, entry: CacheEntry) -> (bool, Option<ItemId>) {
        let id = entry.item.id;
        if let Some(existing) = self.entries.get(&id) {
            if existing.item.version > entry.item.version {
                return (false, None);
            }
        }
        self.entries.insert(id, entry);
        self.touch(id);
        let mut evicted = None;
        if let Some(cap) = self.capacity {
            if self.entries.len() > cap {
                let victim = self
                    .last_used
                    .iter()
                    .filter(|(k, _)| **k != id)
                    .min_by_key(|(k, used)| (**used, **k))
                    .map(|(k, _)| *k);
                if let Some(v) = victim {
                    self.remove(v);
                    evicted = Some(v);
                }
            }
        }
        (true, evicted)
    }

    pub fn set_avi(&mut self, item: ItemId, avi: Ticks) {
        if let Some(e) = self.entries.get_mut(&item) {
            e.item.avi = avi;
        }
    }

    pub fn remove(&mut self, item: ItemId) -> Option<CacheEntry> {
        self.last_used.remove(&item);
        self.entries.remove(&item)
    }

    pub fn clear(&mut self) -> usize {
        let n = self.entries.len();
        self.entries.clear();
        self.last_used.clear();
        n
    }
}
