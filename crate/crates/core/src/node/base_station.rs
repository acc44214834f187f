use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{BsEvent, Dest, Note, StepOutput, Timer};
use crate::avi::{AviEstimator, AviParams};
use crate::election::select_dta;
use crate::model::{DataItem, GroupId, IrEntry, ItemId, NodeId, ProtocolMessage, SimTime, Ticks};

/// What the base station does with a query for an item whose AVI has run out
/// (or would run out before the answer reaches a group member) while no newer
/// version exists.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LapsePolicy {
    /// Re-validate the current version for one more estimated interval,
    /// measured from now.
    #[default]
    Renew,
    /// Hold the query until the server reports a newer version.
    AwaitUpdate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BsParams {
    pub num_items: u32,
    pub expected_candidates: usize,
    pub election_deadline: Ticks,
    pub lapse: LapsePolicy,
    /// Worst-case downlink plus multicast latency; served copies must stay
    /// valid at least this long.
    pub transit: Ticks,
    pub avi: AviParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaseStationState {
    pub db_cache: BTreeMap<ItemId, DataItem>,
    pub estimator: AviEstimator,
    pub candidacy: BTreeMap<NodeId, f64>,
    pub current_dta: Option<NodeId>,
    pub successor_dta: Option<NodeId>,
    pub registered: BTreeSet<NodeId>,
    pub election_deadline: Option<SimTime>,
    pub group: GroupId,
    seen_version: BTreeMap<ItemId, u64>,
    waiting: BTreeMap<ItemId, BTreeSet<NodeId>>,
    forwarded: BTreeSet<ItemId>,
    params: BsParams,
}

impl BaseStationState {
    /// Every item exists from t=0, so the estimator starts with that creation
    /// as its first observation. The data cache itself starts cold.
    pub fn new(params: BsParams) -> Self {
        let mut estimator = AviEstimator::new(params.avi);
        for i in 0..params.num_items {
            estimator
                .observe(ItemId(i), SimTime::ZERO)
                .expect("first observation cannot fail");
        }
        BaseStationState {
            db_cache: BTreeMap::new(),
            estimator,
            candidacy: BTreeMap::new(),
            current_dta: None,
            successor_dta: None,
            registered: BTreeSet::new(),
            election_deadline: None,
            group: GroupId(0),
            seen_version: (0..params.num_items).map(|i| (ItemId(i), 0)).collect(),
            waiting: BTreeMap::new(),
            forwarded: BTreeSet::new(),
            params,
        }
    }

    pub fn params(&self) -> &BsParams {
        &self.params
    }

    /// Open the candidacy window.
    pub fn start_election(&mut self, now: SimTime) -> StepOutput {
        let mut out = StepOutput::default();
        let deadline = now + self.params.election_deadline;
        self.election_deadline = Some(deadline);
        out.timers.push(Timer::ElectionTimeout(deadline));
        out
    }

    pub fn step(&mut self, event: BsEvent, now: SimTime) -> StepOutput {
        let mut out = StepOutput::default();
        match event {
            BsEvent::ElectionTimeout => {
                if self.election_deadline.is_some_and(|d| d <= now) {
                    self.elect(now, &mut out);
                }
            }
            BsEvent::IrTick => out.violation("periodic reports are not part of this strategy"),
            BsEvent::Deliver { from, msg } => self.on_message(from, msg, now, &mut out),
        }
        out
    }

    fn on_message(
        &mut self,
        from: NodeId,
        msg: ProtocolMessage,
        now: SimTime,
        out: &mut StepOutput,
    ) {
        match msg {
            ProtocolMessage::CandidacyReport { from: who, score } => {
                self.candidacy.insert(who, score);
                self.registered.insert(who);
                if self.election_deadline.is_some()
                    && self.candidacy.len() >= self.params.expected_candidates
                {
                    self.elect(now, out);
                }
            }
            ProtocolMessage::ServerUpdate { item, version, ts } => {
                self.on_server_update(item, version, ts, now, out)
            }
            ProtocolMessage::Query { item, from: who } => {
                match self.current_dta {
                    Some(dta) if dta != who => out.send(
                        Dest::To(who),
                        ProtocolMessage::Redirect { to_dta: dta, item },
                    ),
                    // From the DTA, or nobody to redirect to.
                    _ => self.serve(item, who, now, out),
                }
            }
            ProtocolMessage::RoamNotice { from: who } => self.on_roam(who, out),
            other => out.violation(format!(
                "base station cannot handle {} from {from}",
                other.name()
            )),
        }
    }

    fn elect(&mut self, now: SimTime, out: &mut StepOutput) {
        match select_dta(self.candidacy.iter().map(|(k, v)| (*k, *v))) {
            Ok((dta, successor)) => {
                self.election_deadline = None;
                self.current_dta = Some(dta);
                self.successor_dta = successor;
                self.group = GroupId(self.group.0 + 1);
                self.announce(out);
            }
            Err(_) => {
                let deadline = now + self.params.election_deadline;
                self.election_deadline = Some(deadline);
                out.timers.push(Timer::ElectionTimeout(deadline));
                out.note(Note::ElectionRetry { deadline });
            }
        }
    }

    fn announce(&self, out: &mut StepOutput) {
        let dta = self.current_dta.expect("announce requires a DTA");
        out.note(Note::Elected {
            dta,
            successor: self.successor_dta,
            group: self.group,
        });
        out.send(
            Dest::Broadcast,
            ProtocolMessage::DtaAnnouncement {
                dta,
                successor: self.successor_dta,
                group: self.group,
            },
        );
    }

    fn next_successor(&self) -> Option<NodeId> {
        let current = self.current_dta;
        select_dta(
            self.candidacy
                .iter()
                .filter(|(k, _)| Some(**k) != current)
                .map(|(k, v)| (*k, *v)),
        )
        .ok()
        .map(|(best, _)| best)
    }

    fn on_roam(&mut self, who: NodeId, out: &mut StepOutput) {
        self.candidacy.remove(&who);
        self.registered.remove(&who);
        if Some(who) == self.current_dta {
            self.current_dta = self.successor_dta.take();
            self.group = GroupId(self.group.0 + 1);
            if self.current_dta.is_some() {
                self.successor_dta = self.next_successor();
                self.announce(out);
            } else {
                out.send(
                    Dest::Broadcast,
                    ProtocolMessage::DtaVacant { group: self.group },
                );
            }
        } else if Some(who) == self.successor_dta {
            self.successor_dta = self.next_successor();
            if self.current_dta.is_some() {
                self.announce(out);
            }
        }
    }

    fn on_server_update(
        &mut self,
        item: ItemId,
        version: u64,
        ts: SimTime,
        now: SimTime,
        out: &mut StepOutput,
    ) {
        let seen = self.seen_version.get(&item).copied().unwrap_or(0);
        if version > seen || !self.seen_version.contains_key(&item) {
            self.seen_version.insert(item, version);
            let avi = match self.estimator.observe(item, ts) {
                Ok(obs) => {
                    let ir = obs.is_reduction();
                    out.note(Note::AviObserved {
                        item,
                        version,
                        old: obs.old_avi,
                        new: obs.new_avi,
                        ir,
                    });
                    if ir {
                        out.send(
                            Dest::Broadcast,
                            ProtocolMessage::InvalidationReport {
                                entries: vec![IrEntry {
                                    item,
                                    avi: Some(obs.new_avi),
                                    ts,
                                }],
                            },
                        );
                    }
                    obs.new_avi
                }
                Err(e) => {
                    out.violation(e.to_string());
                    self.estimator.avi(item)
                }
            };
            self.db_cache.insert(
                item,
                DataItem {
                    id: item,
                    version,
                    last_update_ts: ts,
                    avi,
                },
            );
        } else if !self.db_cache.contains_key(&item) {
            self.db_cache.insert(
                item,
                DataItem {
                    id: item,
                    version,
                    last_update_ts: ts,
                    avi: self.estimator.avi(item),
                },
            );
        }
        self.forwarded.remove(&item);
        for who in self.waiting.remove(&item).unwrap_or_default() {
            self.serve(item, who, now, out);
        }
    }

    fn park(&mut self, item: ItemId, who: NodeId, out: &mut StepOutput) {
        self.waiting.entry(item).or_default().insert(who);
        out.note(Note::Parked {
            item,
            requester: who,
        });
    }

    fn serve(&mut self, item: ItemId, who: NodeId, now: SimTime, out: &mut StepOutput) {
        let Some(data) = self.db_cache.get(&item).copied() else {
            if item.0 >= self.params.num_items {
                out.violation(format!("query for unknown item {item}"));
                return;
            }
            self.park(item, who, out);
            if self.forwarded.insert(item) {
                out.send(
                    Dest::To(NodeId::SERVER),
                    ProtocolMessage::Query { item, from: who },
                );
            }
            return;
        };
        let transit = self.params.transit;
        if data.expires_at() > now + transit {
            out.send(Dest::To(who), ProtocolMessage::ValidData { data });
            return;
        }
        match self.params.lapse {
            LapsePolicy::Renew => {
                let lease = self.estimator.avi(item).max(transit + 1);
                let renewed = DataItem {
                    avi: now.since(data.last_update_ts) + lease,
                    ..data
                };
                out.note(Note::Renewed {
                    item,
                    avi: renewed.avi,
                });
                out.send(Dest::To(who), ProtocolMessage::ValidData { data: renewed });
            }
            LapsePolicy::AwaitUpdate => self.park(item, who, out),
        }
    }
}

pub fn bs_step(
    mut state: BaseStationState,
    event: BsEvent,
    now: SimTime,
) -> (BaseStationState, StepOutput) {
    let out = state.step(event, now);
    (state, out)
}
