use std::collections::{BTreeMap, BTreeSet};

use super::{AnswerVia, ClientEvent, Dest, Note, StepOutput};
use crate::election::CandidateFactors;
use crate::model::{
    CacheEntry, ClientCache, DataItem, ItemId, Lookup, NodeId, ProtocolMessage, SimTime,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Ordinary,
    Dta,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::Ordinary => "ordinary",
            Role::Dta => "dta",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClientParams {
    /// Candidacy score, computed once from the client's factors.
    pub score: f64,
    /// Items a freshly named DTA fetches in addition to its own cache.
    pub hot_set: Vec<ItemId>,
    pub cache_capacity: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClientState {
    pub id: NodeId,
    pub cache: ClientCache,
    pub role: Role,
    pub known_dta: Option<NodeId>,
    pub registered: bool,
    pub group_joined: bool,
    pub asleep: bool,
    pub departed: bool,
    /// Issue times of local queries not yet answered, per item.
    pub pending: BTreeMap<ItemId, Vec<SimTime>>,
    pub factors: CandidateFactors,
    /// Items with a query in flight (to the DTA, or to the BS when acting as DTA).
    outstanding: BTreeSet<ItemId>,
    /// DTA only: items requested by members while an uplink is in flight.
    member_waiting: BTreeSet<ItemId>,
    members: BTreeSet<NodeId>,
    params: ClientParams,
}

impl ClientState {
    pub fn new(id: NodeId, factors: CandidateFactors, params: ClientParams) -> Self {
        ClientState {
            id,
            cache: ClientCache::new(params.cache_capacity),
            role: Role::Ordinary,
            known_dta: None,
            registered: false,
            group_joined: false,
            asleep: false,
            departed: false,
            pending: BTreeMap::new(),
            factors,
            outstanding: BTreeSet::new(),
            member_waiting: BTreeSet::new(),
            members: BTreeSet::new(),
            params,
        }
    }

    pub fn is_dta(&self) -> bool {
        self.role == Role::Dta
    }

    pub fn members(&self) -> &BTreeSet<NodeId> {
        &self.members
    }

    pub fn outstanding(&self) -> &BTreeSet<ItemId> {
        &self.outstanding
    }

    /// Report this client's candidacy score to the base station.
    pub fn candidacy(&self) -> StepOutput {
        let mut out = StepOutput::default();
        out.send(
            Dest::To(NodeId::BASE_STATION),
            ProtocolMessage::CandidacyReport {
                from: self.id,
                score: self.params.score,
            },
        );
        out
    }

    pub fn step(&mut self, event: ClientEvent, now: SimTime) -> StepOutput {
        let mut out = StepOutput::default();
        if self.departed {
            out.violation(format!("{} has left the cell", self.id));
            return out;
        }
        match event {
            ClientEvent::LocalQuery(item) => self.local_query(item, now, &mut out),
            ClientEvent::Sleep => {
                if self.is_dta() {
                    out.note(Note::SleepSkipped);
                } else if !self.asleep {
                    self.asleep = true;
                    out.note(Note::Slept);
                }
            }
            ClientEvent::Wake => {
                if self.asleep {
                    self.asleep = false;
                    out.note(Note::Woke);
                    let items: Vec<_> = self.pending.keys().copied().collect();
                    for item in items {
                        self.send_query(item, &mut out);
                    }
                }
            }
            ClientEvent::Roam => {
                out.send(
                    Dest::To(NodeId::BASE_STATION),
                    ProtocolMessage::RoamNotice { from: self.id },
                );
                self.departed = true;
                self.group_joined = false;
                out.note(Note::Departed);
            }
            ClientEvent::Deliver { from, msg } => self.on_message(from, msg, now, &mut out),
        }
        out
    }

    /// Where queries go: the BS when acting as DTA or when no DTA is known.
    fn query_target(&self) -> NodeId {
        match (self.role, self.known_dta) {
            (Role::Ordinary, Some(dta)) => dta,
            _ => NodeId::BASE_STATION,
        }
    }

    fn send_query(&mut self, item: ItemId, out: &mut StepOutput) {
        self.outstanding.insert(item);
        out.send(
            Dest::To(self.query_target()),
            ProtocolMessage::Query {
                item,
                from: self.id,
            },
        );
    }

    fn local_query(&mut self, item: ItemId, now: SimTime, out: &mut StepOutput) {
        let lookup = self.cache.lookup(item, now);
        out.note(Note::QueryIssued {
            item,
            lookup: lookup.label(),
        });
        if let Lookup::HitValid(entry) = lookup {
            let data = entry.item;
            self.cache.touch(item);
            out.note(Note::Answered {
                item,
                data,
                issued_at: now,
                via: AnswerVia::Local,
            });
            return;
        }
        self.pending.entry(item).or_default().push(now);
        if self.outstanding.contains(&item) {
            out.note(Note::Coalesced { item });
        } else {
            self.send_query(item, out);
        }
    }

    fn on_message(
        &mut self,
        from: NodeId,
        msg: ProtocolMessage,
        now: SimTime,
        out: &mut StepOutput,
    ) {
        match msg {
            ProtocolMessage::DtaAnnouncement { dta, .. } => self.on_announcement(dta, out),
            ProtocolMessage::DtaVacant { .. } => {
                self.role = Role::Ordinary;
                self.known_dta = None;
                self.registered = false;
                if self.group_joined {
                    self.group_joined = false;
                    out.note(Note::Left);
                }
                self.resend_pending(out);
            }
            ProtocolMessage::Redirect { to_dta, item } => {
                if self.known_dta != Some(to_dta) {
                    self.join(to_dta, out);
                }
                if self.pending.contains_key(&item) {
                    self.send_query(item, out);
                }
            }
            ProtocolMessage::ValidData { data } => self.on_data(data, AnswerVia::Server, now, out),
            ProtocolMessage::MulticastUpdate { data } => {
                self.on_data(data, AnswerVia::Dta, now, out)
            }
            ProtocolMessage::InvalidationReport { entries } => {
                for e in entries {
                    let Some(cached) = self.cache.get(e.item).copied() else {
                        continue;
                    };
                    // A report about an older version than the one held says nothing new.
                    let Some(avi) = e.avi.filter(|_| cached.item.last_update_ts <= e.ts) else {
                        continue;
                    };
                    let was_valid = matches!(self.cache.lookup(e.item, now), Lookup::HitValid(_));
                    if avi < cached.item.avi {
                        self.cache.set_avi(e.item, avi);
                        if was_valid
                            && !matches!(self.cache.lookup(e.item, now), Lookup::HitValid(_))
                        {
                            out.note(Note::Invalidated { item: e.item });
                            if self.is_dta() && !self.outstanding.contains(&e.item) {
                                self.send_query(e.item, out);
                            }
                        }
                    }
                }
            }
            ProtocolMessage::Query { .. } | ProtocolMessage::Register { .. } => {
                if self.is_dta() {
                    self.dta_on_message(msg, now, out);
                } else {
                    out.violation(format!("{} is not the DTA but got {}", self.id, msg.name()));
                }
            }
            other => out.violation(format!("client cannot handle {} from {from}", other.name())),
        }
    }

    fn join(&mut self, dta: NodeId, out: &mut StepOutput) {
        self.known_dta = Some(dta);
        self.registered = true;
        self.group_joined = true;
        out.send(Dest::To(dta), ProtocolMessage::Register { from: self.id });
        out.note(Note::Joined { dta });
    }

    fn resend_pending(&mut self, out: &mut StepOutput) {
        self.outstanding.clear();
        let items: Vec<_> = self.pending.keys().copied().collect();
        for item in items {
            self.send_query(item, out);
        }
    }

    fn on_announcement(&mut self, dta: NodeId, out: &mut StepOutput) {
        if dta == self.id {
            if !self.is_dta() {
                self.role = Role::Dta;
                self.known_dta = Some(self.id);
                self.registered = true;
                self.group_joined = true;
                out.note(Note::RoleChanged { role: Role::Dta });
                self.bootstrap(out);
            }
            return;
        }
        if self.is_dta() {
            self.role = Role::Ordinary;
            self.members.clear();
            self.member_waiting.clear();
            out.note(Note::RoleChanged {
                role: Role::Ordinary,
            });
        }
        if self.known_dta != Some(dta) || !self.group_joined {
            self.join(dta, out);
            self.resend_pending(out);
        }
    }

    fn bootstrap(&mut self, out: &mut StepOutput) {
        // Anything still in flight went to the previous DTA.
        self.outstanding.clear();
        let items: BTreeSet<ItemId> = self
            .cache
            .entries()
            .keys()
            .chain(self.params.hot_set.iter())
            .chain(self.pending.keys())
            .copied()
            .collect();
        for item in items {
            self.send_query(item, out);
        }
    }

    fn install(&mut self, data: DataItem, now: SimTime, out: &mut StepOutput) {
        let fetched_at = now.max(data.last_update_ts);
        let (_, evicted) = self.cache.install(CacheEntry::new(data, fetched_at));
        if let Some(item) = evicted {
            out.note(Note::Evicted { item });
        }
    }

    fn on_data(&mut self, data: DataItem, via: AnswerVia, now: SimTime, out: &mut StepOutput) {
        let item = data.id;
        self.install(data, now, out);
        let lookup = self.cache.lookup(item, now);
        let valid = match lookup {
            Lookup::HitValid(e) => Some(e.item),
            _ => None,
        };
        let interested = self.pending.contains_key(&item) || self.member_waiting.contains(&item);
        match valid {
            Some(current) => {
                self.outstanding.remove(&item);
                if self.is_dta() {
                    self.member_waiting.remove(&item);
                    out.send(
                        Dest::Group,
                        ProtocolMessage::MulticastUpdate { data: current },
                    );
                }
                if let Some(issued) = self.pending.remove(&item) {
                    self.cache.touch(item);
                    for issued_at in issued {
                        out.note(Note::Answered {
                            item,
                            data: current,
                            issued_at,
                            via,
                        });
                    }
                }
            }
            // Expired on arrival; ask again if someone still wants it.
            None if interested => self.send_query(item, out),
            None => {
                self.outstanding.remove(&item);
            }
        }
    }

    fn dta_on_message(&mut self, msg: ProtocolMessage, now: SimTime, out: &mut StepOutput) {
        match msg {
            ProtocolMessage::Register { from } => {
                self.members.insert(from);
            }
            ProtocolMessage::Query { item, .. } => match self.cache.lookup(item, now) {
                Lookup::HitValid(entry) => {
                    let data = entry.item;
                    self.cache.touch(item);
                    out.send(Dest::Group, ProtocolMessage::MulticastUpdate { data });
                }
                Lookup::HitStale(_) | Lookup::Miss => {
                    self.member_waiting.insert(item);
                    if self.outstanding.contains(&item) {
                        out.note(Note::Coalesced { item });
                    } else {
                        self.send_query(item, out);
                    }
                }
            },
            _ => unreachable!("only queries and registrations reach the DTA handler"),
        }
    }
}

/// Step an ordinary client or a DTA.
pub fn client_step(
    mut state: ClientState,
    event: ClientEvent,
    now: SimTime,
) -> (ClientState, StepOutput) {
    let out = state.step(event, now);
    (state, out)
}

/// Step a client acting as DTA. Anything that only a DTA may receive is a
/// protocol violation otherwise.
pub fn dta_step(
    mut state: ClientState,
    event: ClientEvent,
    now: SimTime,
) -> (ClientState, StepOutput) {
    if !state.is_dta() {
        let mut out = StepOutput::default();
        out.violation(format!("{} is not the DTA", state.id));
        return (state, out);
    }
    let out = state.step(event, now);
    (state, out)
}

/// Run the newly-named-DTA fetch: one query to the BS per cached or hot item.
pub fn dta_bootstrap(mut state: ClientState) -> (ClientState, StepOutput) {
    let mut out = StepOutput::default();
    state.bootstrap(&mut out);
    (state, out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{GroupId, IrEntry};
    use crate::node::Outgoing;

    fn factors() -> CandidateFactors {
        CandidateFactors {
            energy: 0.5,
            distance: 10.0,
            access_rate: 1.0,
        }
    }

    fn client(i: u32, hot: &[u32]) -> ClientState {
        ClientState::new(
            NodeId::client(i),
            factors(),
            ClientParams {
                score: 0.5,
                hot_set: hot.iter().map(|&h| ItemId(h)).collect(),
                cache_capacity: None,
            },
        )
    }

    fn data(item: u32, version: u64, ts: u64, avi: u64) -> DataItem {
        DataItem {
            id: ItemId(item),
            version,
            last_update_ts: SimTime(ts),
            avi,
        }
    }

    fn announce(dta: u32) -> ClientEvent {
        ClientEvent::Deliver {
            from: NodeId::BASE_STATION,
            msg: ProtocolMessage::DtaAnnouncement {
                dta: NodeId::client(dta),
                successor: None,
                group: GroupId(1),
            },
        }
    }

    fn query_from(i: u32, item: u32) -> ClientEvent {
        ClientEvent::Deliver {
            from: NodeId::client(i),
            msg: ProtocolMessage::Query {
                item: ItemId(item),
                from: NodeId::client(i),
            },
        }
    }

    fn queries(out: &StepOutput) -> Vec<&Outgoing> {
        out.sends
            .iter()
            .filter(|o| matches!(o.msg, ProtocolMessage::Query { .. }))
            .collect()
    }

    #[test]
    fn valid_hit_answers_locally_without_messages() {
        let mut c = client(1, &[]);
        c.cache
            .install(CacheEntry::new(data(4, 1, 100, 50), SimTime(100)));
        let out = c.step(ClientEvent::LocalQuery(ItemId(4)), SimTime(120));
        assert!(out.sends.is_empty());
        assert!(matches!(
            out.notes[1],
            Note::Answered {
                via: AnswerVia::Local,
                ..
            }
        ));
    }

    #[test]
    fn stale_hit_with_dta_queries_the_dta_only() {
        let mut c = client(1, &[]);
        c.step(announce(2), SimTime(10));
        c.cache
            .install(CacheEntry::new(data(4, 1, 100, 50), SimTime(100)));
        let out = c.step(ClientEvent::LocalQuery(ItemId(4)), SimTime(200));
        assert_eq!(out.sends.len(), 1);
        assert_eq!(out.sends[0].to, Dest::To(NodeId::client(2)));
    }

    #[test]
    fn miss_before_announcement_goes_to_bs() {
        let mut c = client(1, &[]);
        let out = c.step(ClientEvent::LocalQuery(ItemId(4)), SimTime(2));
        assert_eq!(out.sends[0].to, Dest::To(NodeId::BASE_STATION));
        assert!(c.outstanding().contains(&ItemId(4)));
    }

    #[test]
    fn announcement_registers_and_joins() {
        let mut c = client(1, &[]);
        let out = c.step(announce(3), SimTime(10));
        assert_eq!(
            out.sends,
            vec![Outgoing {
                to: Dest::To(NodeId::client(3)),
                msg: ProtocolMessage::Register {
                    from: NodeId::client(1)
                }
            }]
        );
        assert!(c.group_joined);
        assert_eq!(c.known_dta, Some(NodeId::client(3)));
    }

    #[test]
    fn bootstrap_queries_hot_set() {
        let (c, out) = dta_bootstrap(client(1, &[1, 2]));
        assert_eq!(queries(&out).len(), 2);
        assert!(queries(&out)
            .iter()
            .all(|o| o.to == Dest::To(NodeId::BASE_STATION)));
        assert_eq!(c.outstanding().len(), 2);

        let mut c = client(1, &[]);
        c.cache
            .install(CacheEntry::new(data(5, 0, 0, 10), SimTime(0)));
        let (_, out) = dta_bootstrap(c);
        assert_eq!(
            out.sends[0].msg,
            ProtocolMessage::Query {
                item: ItemId(5),
                from: NodeId::client(1)
            }
        );
    }

    #[test]
    fn dta_with_valid_copy_multicasts() {
        let mut dta = client(3, &[]);
        dta.step(announce(3), SimTime(10));
        dta.cache
            .install(CacheEntry::new(data(4, 1, 100, 500), SimTime(100)));
        let out = dta.step(query_from(1, 4), SimTime(200));
        assert_eq!(out.sends.len(), 1);
        assert_eq!(out.sends[0].to, Dest::Group);
        assert!(queries(&out).is_empty());
    }

    #[test]
    fn dta_with_stale_copy_uplinks_once_then_multicasts() {
        let mut dta = client(3, &[]);
        dta.step(announce(3), SimTime(10));
        dta.cache
            .install(CacheEntry::new(data(4, 1, 100, 50), SimTime(100)));
        let first = dta.step(query_from(1, 4), SimTime(200));
        assert_eq!(first.sends.len(), 1);
        assert_eq!(first.sends[0].to, Dest::To(NodeId::BASE_STATION));
        // Second member asks before the reply: coalesced.
        let second = dta.step(query_from(2, 4), SimTime(201));
        assert!(second.sends.is_empty());
        assert!(second.notes.contains(&Note::Coalesced { item: ItemId(4) }));
        let reply = dta.step(
            ClientEvent::Deliver {
                from: NodeId::BASE_STATION,
                msg: ProtocolMessage::ValidData {
                    data: data(4, 2, 190, 500),
                },
            },
            SimTime(210),
        );
        assert_eq!(reply.sends.len(), 1);
        assert_eq!(reply.sends[0].to, Dest::Group);
        assert!(dta.outstanding().is_empty());
    }

    #[test]
    fn query_to_non_dta_is_violation() {
        let mut c = client(1, &[]);
        let (_, out) = dta_step(c.clone(), query_from(2, 1), SimTime(5));
        assert!(matches!(out.notes[0], Note::Violation { .. }));
        let out = c.step(query_from(2, 1), SimTime(5));
        assert!(matches!(out.notes[0], Note::Violation { .. }));
    }

    #[test]
    fn multicast_answers_pending_member_query() {
        let mut c = client(1, &[]);
        c.step(announce(3), SimTime(10));
        c.step(ClientEvent::LocalQuery(ItemId(4)), SimTime(100));
        let out = c.step(
            ClientEvent::Deliver {
                from: NodeId::client(3),
                msg: ProtocolMessage::MulticastUpdate {
                    data: data(4, 1, 90, 100),
                },
            },
            SimTime(110),
        );
        assert!(out.notes.iter().any(|n| matches!(
            n,
            Note::Answered {
                via: AnswerVia::Dta,
                issued_at: SimTime(100),
                ..
            }
        )));
        assert!(c.pending.is_empty());
        assert!(c.outstanding().is_empty());
    }

    #[test]
    fn expired_multicast_triggers_requery() {
        let mut c = client(1, &[]);
        c.step(announce(3), SimTime(10));
        c.step(ClientEvent::LocalQuery(ItemId(4)), SimTime(100));
        let out = c.step(
            ClientEvent::Deliver {
                from: NodeId::client(3),
                msg: ProtocolMessage::MulticastUpdate {
                    data: data(4, 1, 0, 50),
                },
            },
            SimTime(110),
        );
        assert_eq!(queries(&out).len(), 1);
        assert!(c.pending.contains_key(&ItemId(4)));
    }

    fn ir(item: u32, avi: u64, ts: u64) -> ClientEvent {
        ClientEvent::Deliver {
            from: NodeId::BASE_STATION,
            msg: ProtocolMessage::InvalidationReport {
                entries: vec![IrEntry {
                    item: ItemId(item),
                    avi: Some(avi),
                    ts: SimTime(ts),
                }],
            },
        }
    }

    #[test]
    fn ir_shrinks_avi_and_dta_refetches_what_lapsed() {
        let mut c = client(1, &[]);
        c.cache
            .install(CacheEntry::new(data(4, 1, 100, 1000), SimTime(100)));
        let out = c.step(ir(4, 20, 300), SimTime(305));
        assert_eq!(c.cache.get(ItemId(4)).unwrap().item.avi, 20);
        assert!(out.notes.contains(&Note::Invalidated { item: ItemId(4) }));
        assert!(out.sends.is_empty());

        let mut dta = client(3, &[]);
        dta.step(announce(3), SimTime(10));
        dta.cache
            .install(CacheEntry::new(data(4, 1, 100, 1000), SimTime(100)));
        let out = dta.step(ir(4, 20, 300), SimTime(305));
        assert_eq!(queries(&out).len(), 1);
    }

    #[test]
    fn ir_leaving_copy_valid_costs_nothing() {
        let mut dta = client(3, &[]);
        dta.step(announce(3), SimTime(10));
        dta.cache
            .install(CacheEntry::new(data(4, 1, 290, 1000), SimTime(290)));
        let out = dta.step(ir(4, 20, 300), SimTime(305));
        assert!(out.sends.is_empty() && out.notes.is_empty());
        assert_eq!(dta.cache.get(ItemId(4)).unwrap().item.avi, 20);
    }

    #[test]
    fn ir_on_already_expired_copy_costs_nothing() {
        let mut dta = client(3, &[]);
        dta.step(announce(3), SimTime(10));
        dta.cache
            .install(CacheEntry::new(data(4, 1, 100, 100), SimTime(100)));
        let out = dta.step(ir(4, 20, 300), SimTime(305));
        assert!(out.sends.is_empty() && out.notes.is_empty());
    }

    #[test]
    fn ir_about_older_version_is_ignored() {
        let mut c = client(1, &[]);
        c.cache
            .install(CacheEntry::new(data(4, 2, 400, 1000), SimTime(400)));
        c.step(ir(4, 20, 300), SimTime(405));
        assert_eq!(c.cache.get(ItemId(4)).unwrap().item.avi, 1000);
    }

    #[test]
    fn sleeping_then_waking_reissues_pending() {
        let mut c = client(1, &[]);
        c.step(announce(3), SimTime(10));
        c.step(ClientEvent::LocalQuery(ItemId(4)), SimTime(100));
        c.step(ClientEvent::Sleep, SimTime(101));
        assert!(c.asleep);
        let out = c.step(ClientEvent::Wake, SimTime(400));
        assert_eq!(queries(&out).len(), 1);
        assert_eq!(out.sends[0].to, Dest::To(NodeId::client(3)));
    }

    #[test]
    fn dta_does_not_sleep() {
        let mut dta = client(3, &[]);
        dta.step(announce(3), SimTime(10));
        let out = dta.step(ClientEvent::Sleep, SimTime(20));
        assert_eq!(out.notes, vec![Note::SleepSkipped]);
        assert!(!dta.asleep);
    }

    #[test]
    fn roaming_dta_notifies_bs() {
        let mut dta = client(3, &[]);
        dta.step(announce(3), SimTime(10));
        let out = dta.step(ClientEvent::Roam, SimTime(50));
        assert_eq!(
            out.sends[0].msg,
            ProtocolMessage::RoamNotice {
                from: NodeId::client(3)
            }
        );
        assert!(dta.departed);
    }
}
