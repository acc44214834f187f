use crate::avi::is_valid;
use crate::baseline::{TsBaseStationState, TsClientState, TsParams};
use crate::config::{ConfigError, ScenarioConfig, ScriptedEvent, Strategy};
use crate::election::candidate_score;
use crate::metrics::Metrics;
use crate::model::{
    ir_bytes, opt_node, CacheEntry, ItemId, NodeId, NodeKind, ProtocolMessage, SimTime,
};
use crate::node::{
    BaseStationState, BsEvent, BsParams, ClientEvent, ClientParams, ClientState, Dest, Note,
    ServerEvent, ServerState, StepOutput, Timer,
};

use super::event::{EventKind, EventQueue, SimEvent};
use super::network::{self, ChannelParams, Fanout, Reach};
use super::trace::{TraceFooter, TraceHeader, TraceLog, TraceRecord};
use super::workload::{gen_workload, WorkloadShape};

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub trace: TraceLog,
    pub metrics: Metrics,
}

/// Run one scenario to its horizon.
pub fn run(cfg: &ScenarioConfig, seed: u64) -> Result<RunOutput, ConfigError> {
    cfg.validate()?;
    let mut engine = Engine::new(cfg, seed);
    engine.run();
    Ok(engine.finish())
}

enum Bs {
    Avi(BaseStationState),
    Ts(TsBaseStationState),
}

impl Bs {
    fn step(&mut self, ev: BsEvent, now: SimTime) -> StepOutput {
        match self {
            Bs::Avi(b) => b.step(ev, now),
            Bs::Ts(b) => b.step(ev, now),
        }
    }
}

enum Client {
    Avi(ClientState),
    Ts(TsClientState),
}

impl Client {
    fn reach(&self) -> Reach {
        match self {
            Client::Avi(c) => Reach {
                id: c.id,
                asleep: c.asleep,
                departed: c.departed,
            },
            Client::Ts(c) => Reach {
                id: c.id,
                asleep: c.asleep,
                departed: c.departed,
            },
        }
    }

    fn step(&mut self, ev: ClientEvent, now: SimTime) -> StepOutput {
        match self {
            Client::Avi(c) => c.step(ev, now),
            Client::Ts(c) => c.step(ev, now),
        }
    }

    fn pending(&self) -> u64 {
        let p = match self {
            Client::Avi(c) => &c.pending,
            Client::Ts(c) => &c.pending,
        };
        p.values().map(|v| v.len() as u64).sum()
    }
}

struct Engine<'c> {
    cfg: &'c ScenarioConfig,
    ch: ChannelParams,
    queue: EventQueue,
    server: ServerState,
    bs: Bs,
    clients: Vec<Client>,
    records: Vec<TraceRecord>,
    metrics: Metrics,
    header: TraceHeader,
    now: SimTime,
    seq: u64,
}

fn kv(k: &str, v: impl ToString) -> (String, String) {
    (k.to_string(), v.to_string())
}

impl<'c> Engine<'c> {
    fn new(cfg: &'c ScenarioConfig, seed: u64) -> Self {
        let shape = WorkloadShape {
            num_clients: cfg.num_clients,
            num_items: cfg.num_items,
            horizon: cfg.horizon,
            max_distance: cfg.election.max_distance,
            max_access: cfg.election.max_access,
        };
        let workload = gen_workload(&cfg.workload, &shape, seed);
        let mut factors = workload.factors;
        for f in &cfg.scripted_factors {
            factors[f.client as usize - 1] = f.factors();
        }

        let ts = TsParams {
            period: cfg.baseline.period,
            window: cfg.baseline.window(),
        };
        let hot_set: Vec<ItemId> = cfg.dta.hot_set.iter().map(|i| ItemId(*i)).collect();
        let clients = factors
            .iter()
            .enumerate()
            .map(|(i, f)| {
                let id = NodeId::client(i as u32 + 1);
                match cfg.strategy {
                    Strategy::DtaMulticast => {
                        let score = candidate_score(f, cfg.election.mode, &cfg.election.bounds())
                            .expect("generated and validated factors score");
                        Client::Avi(ClientState::new(
                            id,
                            *f,
                            ClientParams {
                                score,
                                hot_set: hot_set.clone(),
                                cache_capacity: cfg.cache.lru,
                            },
                        ))
                    }
                    Strategy::TsBroadcast => Client::Ts(TsClientState::new(id, cfg.cache.lru, ts)),
                }
            })
            .collect();
        let bs = match cfg.strategy {
            Strategy::DtaMulticast => Bs::Avi(BaseStationState::new(BsParams {
                num_items: cfg.num_items,
                expected_candidates: cfg.num_clients as usize,
                election_deadline: cfg.election.deadline,
                lapse: cfg.avi.lapse,
                transit: cfg.channel.d_down + cfg.channel.d_mc,
                avi: cfg.avi.params(),
            })),
            Strategy::TsBroadcast => Bs::Ts(TsBaseStationState::new(ts)),
        };

        let mut queue = EventQueue::new();
        queue.push(SimTime::ZERO, EventKind::Start);
        match &cfg.scripted_events {
            Some(script) => {
                let mut events: Vec<(SimTime, EventKind)> = script.iter().map(scripted).collect();
                events.sort_by_key(|(at, _)| *at);
                for (at, kind) in events {
                    queue.push(at, kind);
                }
            }
            None => {
                for (at, kind) in workload.events {
                    queue.push(at, kind);
                }
            }
        }

        Engine {
            cfg,
            ch: cfg.channel,
            queue,
            server: ServerState::new(cfg.num_items),
            bs,
            clients,
            records: Vec::new(),
            metrics: Metrics::default(),
            header: TraceHeader {
                strategy: cfg.strategy,
                seed,
                clients: cfg.num_clients,
                items: cfg.num_items,
                horizon: cfg.horizon,
            },
            now: SimTime::ZERO,
            seq: 0,
        }
    }

    fn run(&mut self) {
        let horizon = SimTime(self.cfg.horizon);
        while self.queue.peek_time().is_some_and(|t| t <= horizon) {
            let ev = self.queue.pop().expect("peeked");
            self.now = ev.at;
            self.seq = ev.seq;
            self.handle(ev);
        }
    }

    fn finish(self) -> RunOutput {
        let inflight = self
            .queue
            .iter()
            .filter(|e| matches!(e.kind, EventKind::Deliver { .. }))
            .count() as u64;
        let pending = self.clients.iter().map(Client::pending).sum();
        RunOutput {
            trace: TraceLog {
                header: self.header,
                records: self.records,
                footer: Some(TraceFooter { inflight, pending }),
            },
            metrics: self.metrics,
        }
    }

    fn record(&mut self, node: NodeId, ev: &str, fields: Vec<(String, String)>) {
        self.records.push(TraceRecord {
            t: self.now,
            seq: self.seq,
            node,
            ev: ev.to_string(),
            fields,
        });
    }

    fn client_mut(&mut self, id: NodeId) -> &mut Client {
        &mut self.clients[id.index as usize - 1]
    }

    /// Checks a client can act; logs a skip otherwise.
    fn client_available(&mut self, id: NodeId, what: &str, extra: Vec<(String, String)>) -> bool {
        let r = self.client_mut(id).reach();
        let reason = if r.departed {
            "departed"
        } else if r.asleep {
            "asleep"
        } else {
            return true;
        };
        let mut fields = vec![kv("what", what), kv("reason", reason)];
        fields.extend(extra);
        self.record(id, "skip", fields);
        false
    }

    fn handle(&mut self, ev: SimEvent) {
        let now = self.now;
        match ev.kind {
            EventKind::Start => {
                let outputs: Vec<(NodeId, StepOutput)> = match &mut self.bs {
                    Bs::Avi(bs) => {
                        let mut outs: Vec<(NodeId, StepOutput)> = self
                            .clients
                            .iter()
                            .map(|c| match c {
                                Client::Avi(c) => (c.id, c.candidacy()),
                                Client::Ts(_) => unreachable!("strategy mismatch"),
                            })
                            .collect();
                        outs.push((NodeId::BASE_STATION, bs.start_election(now)));
                        outs
                    }
                    Bs::Ts(bs) => vec![(NodeId::BASE_STATION, bs.start(now))],
                };
                for (node, out) in outputs {
                    self.apply(node, out);
                }
            }
            EventKind::Deliver { to, from, msg } => self.deliver(to, from, msg),
            EventKind::LocalQuery { client, item } => {
                if self.client_available(client, "query", vec![kv("item", item)]) {
                    let out = self
                        .client_mut(client)
                        .step(ClientEvent::LocalQuery(item), now);
                    self.apply(client, out);
                }
            }
            EventKind::ScheduledUpdate(item) => {
                let out = self.server.step(ServerEvent::ScheduledUpdate(item), now);
                self.apply(NodeId::SERVER, out);
            }
            EventKind::Sleep(c) | EventKind::Wake(c) | EventKind::Roam(c) => {
                let (what, cev) = match ev.kind {
                    EventKind::Sleep(_) => ("sleep", ClientEvent::Sleep),
                    EventKind::Wake(_) => ("wake", ClientEvent::Wake),
                    _ => ("roam", ClientEvent::Roam),
                };
                let r = self.client_mut(c).reach();
                if r.departed {
                    self.record(c, "skip", vec![kv("what", what), kv("reason", "departed")]);
                } else {
                    let out = self.client_mut(c).step(cev, now);
                    self.apply(c, out);
                }
            }
            EventKind::ElectionTimeout => {
                self.record(NodeId::BASE_STATION, "timeout", vec![]);
                let out = self.bs.step(BsEvent::ElectionTimeout, now);
                self.apply(NodeId::BASE_STATION, out);
            }
            EventKind::IrTick => {
                let out = self.bs.step(BsEvent::IrTick, now);
                self.apply(NodeId::BASE_STATION, out);
            }
        }
    }

    fn deliver(&mut self, to: NodeId, from: NodeId, msg: ProtocolMessage) {
        let now = self.now;
        if to.is_client() {
            let r = self.client_mut(to).reach();
            if r.departed || r.asleep {
                let reason = if r.departed {
                    network::DropReason::Departed
                } else {
                    network::DropReason::Sleep
                };
                self.record(
                    to,
                    reason.event_name(),
                    vec![kv("msg", msg.name()), kv("from", from)],
                );
                return;
            }
        }
        let mut fields = vec![kv("msg", msg.name()), kv("from", from)];
        fields.extend(msg.fields().into_iter().map(|(k, v)| (k.to_string(), v)));
        self.record(to, "recv", fields);
        let is_query = matches!(msg, ProtocolMessage::Query { .. });
        let out = match to.kind {
            NodeKind::Client => {
                if is_query {
                    self.metrics.dta_uplinks += 1;
                }
                self.client_mut(to)
                    .step(ClientEvent::Deliver { from, msg }, now)
            }
            NodeKind::BaseStation => {
                if is_query {
                    self.metrics.server_uplinks += 1;
                }
                self.bs.step(BsEvent::Deliver { from, msg }, now)
            }
            NodeKind::Server => self.server.step(ServerEvent::Deliver { from, msg }, now),
        };
        self.apply(to, out);
    }

    fn apply(&mut self, node: NodeId, out: StepOutput) {
        for note in out.notes {
            self.note(node, note);
        }
        for send in out.sends {
            self.send(node, send.to, send.msg);
        }
        for timer in out.timers {
            match timer {
                Timer::ElectionTimeout(at) => self.queue.push(at, EventKind::ElectionTimeout),
                Timer::IrTick(at) => self.queue.push(at, EventKind::IrTick),
            };
        }
    }

    fn violation(&mut self, node: NodeId, reason: &str) {
        let reason: String = reason
            .chars()
            .map(|c| {
                if c.is_whitespace() || c == '=' {
                    '_'
                } else {
                    c
                }
            })
            .collect();
        self.record(node, "violation", vec![kv("reason", reason)]);
    }

    fn note(&mut self, node: NodeId, note: Note) {
        let now = self.now;
        match note {
            Note::QueryIssued { item, lookup } => {
                self.metrics.queries_issued += 1;
                self.record(node, "query", vec![kv("item", item), kv("lookup", lookup)]);
            }
            Note::Answered {
                item,
                data,
                issued_at,
                via,
            } => {
                let latency = now.since(issued_at);
                let stale = self.server.version(item).is_some_and(|v| v > data.version);
                self.metrics.latency.record(latency);
                if stale {
                    self.metrics.stale_answers += 1;
                }
                match via {
                    crate::node::AnswerVia::Local => self.metrics.answered_local += 1,
                    crate::node::AnswerVia::Dta => self.metrics.answered_dta += 1,
                    crate::node::AnswerVia::Server => self.metrics.answered_server += 1,
                }
                self.record(
                    node,
                    "answer",
                    vec![
                        kv("item", item),
                        kv("version", data.version),
                        kv("ts", data.last_update_ts),
                        kv("avi", data.avi),
                        kv("via", via.as_str()),
                        kv("issued", issued_at),
                        kv("latency", latency),
                        kv("stale", stale),
                    ],
                );
                if self.cfg.strategy == Strategy::DtaMulticast
                    && !is_valid(
                        &CacheEntry {
                            item: data,
                            fetched_at: now,
                        },
                        now,
                    )
                {
                    self.violation(node, "avi-safety: answered after ts+avi");
                }
            }
            Note::Coalesced { item } => self.record(node, "coalesce", vec![kv("item", item)]),
            Note::Elected {
                dta,
                successor,
                group,
            } => self.record(
                node,
                "elect",
                vec![
                    kv("dta", dta),
                    kv("successor", opt_node(successor)),
                    kv("group", group),
                ],
            ),
            Note::ElectionRetry { deadline } => {
                self.record(node, "election-retry", vec![kv("deadline", deadline)])
            }
            Note::AviObserved {
                item,
                version,
                old,
                new,
                ir,
            } => self.record(
                node,
                "avi",
                vec![
                    kv("item", item),
                    kv("version", version),
                    kv(
                        "old",
                        old.map_or_else(|| "-".to_string(), |o| o.to_string()),
                    ),
                    kv("new", new),
                    kv("ir", ir),
                ],
            ),
            Note::Renewed { item, avi } => {
                self.record(node, "renew", vec![kv("item", item), kv("avi", avi)])
            }
            Note::Parked { item, requester } => self.record(
                node,
                "park",
                vec![kv("item", item), kv("requester", requester)],
            ),
            Note::RoleChanged { role } => {
                self.record(node, "role", vec![kv("role", role.as_str())])
            }
            Note::Joined { dta } => self.record(node, "join", vec![kv("dta", dta)]),
            Note::Left => self.record(node, "leave", vec![]),
            Note::Invalidated { item } => self.record(node, "invalidate", vec![kv("item", item)]),
            Note::Evicted { item } => self.record(node, "evict", vec![kv("item", item)]),
            Note::Purged { entries } => self.record(node, "purge", vec![kv("entries", entries)]),
            Note::Slept => self.record(node, "sleep", vec![]),
            Note::Woke => self.record(node, "wake", vec![]),
            Note::SleepSkipped => self.record(node, "sleep-skipped", vec![]),
            Note::Departed => self.record(node, "depart", vec![]),
            Note::Updated { item, version } => self.record(
                node,
                "update",
                vec![kv("item", item), kv("version", version)],
            ),
            Note::Violation { reason } => self.violation(node, &reason),
        }
    }

    fn send(&mut self, from: NodeId, dest: Dest, msg: ProtocolMessage) {
        let now = self.now;
        let (to_label, fanout) = match dest {
            Dest::Broadcast => {
                if from != NodeId::BASE_STATION {
                    self.violation(
                        from,
                        &format!("only the base station broadcasts, not {from}"),
                    );
                    return;
                }
                let reach: Vec<Reach> = self.clients.iter().map(Client::reach).collect();
                (
                    "broadcast".to_string(),
                    network::broadcast(&self.ch, &reach, &msg, now),
                )
            }
            Dest::Group => {
                let members: Option<Vec<Reach>> = match from
                    .is_client()
                    .then(|| &self.clients[from.index as usize - 1])
                {
                    Some(Client::Avi(c)) if c.is_dta() => Some(
                        c.members()
                            .iter()
                            .map(|m| self.clients[m.index as usize - 1].reach())
                            .collect(),
                    ),
                    _ => None,
                };
                let Some(members) = members else {
                    self.violation(
                        from,
                        &format!("multicast from {from}, which is not the DTA"),
                    );
                    return;
                };
                (
                    "group".to_string(),
                    network::multicast(&self.ch, from, &members, &msg, now),
                )
            }
            Dest::To(to) => {
                let reach = if to.is_client() {
                    self.clients[to.index as usize - 1].reach()
                } else {
                    Reach {
                        id: to,
                        asleep: false,
                        departed: false,
                    }
                };
                match network::unicast(&self.ch, from, reach, &msg, now) {
                    Some(f) => (to.to_string(), f),
                    None => {
                        self.violation(from, &format!("no link from {from} to {to}"));
                        return;
                    }
                }
            }
        };
        self.emit(from, to_label, fanout, msg);
    }

    fn emit(&mut self, from: NodeId, to_label: String, fanout: Fanout, msg: ProtocolMessage) {
        if let ProtocolMessage::InvalidationReport { entries } = &msg {
            self.metrics.ir_count += 1;
            self.metrics.ir_bytes += ir_bytes(entries.len());
        }
        let mut fields = vec![
            kv("msg", msg.name()),
            kv("to", to_label),
            kv("copies", fanout.copies()),
        ];
        fields.extend(msg.fields().into_iter().map(|(k, v)| (k.to_string(), v)));
        self.record(from, "send", fields);
        for (who, reason) in fanout.dropped {
            self.record(
                who,
                reason.event_name(),
                vec![kv("msg", msg.name()), kv("from", from)],
            );
        }
        for d in fanout.deliveries {
            self.queue.push(
                d.at,
                EventKind::Deliver {
                    to: d.to,
                    from: d.from,
                    msg: d.msg,
                },
            );
        }
    }
}

fn scripted(ev: &ScriptedEvent) -> (SimTime, EventKind) {
    let at = SimTime(ev.at());
    let kind = match *ev {
        ScriptedEvent::Query { client, item, .. } => EventKind::LocalQuery {
            client: NodeId::client(client),
            item: ItemId(item),
        },
        ScriptedEvent::Update { item, .. } => EventKind::ScheduledUpdate(ItemId(item)),
        ScriptedEvent::Sleep { client, .. } => EventKind::Sleep(NodeId::client(client)),
        ScriptedEvent::Wake { client, .. } => EventKind::Wake(NodeId::client(client)),
        ScriptedEvent::Roam { client, .. } => EventKind::Roam(NodeId::client(client)),
    };
    (at, kind)
}
