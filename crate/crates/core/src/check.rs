//! Invariant checks over a finished trace.
//!
//! Everything here works from the trace text alone, so a saved log can be
//! re-verified without re-running the simulation.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use crate::config::Strategy;
use crate::model::{ItemId, NodeId, SimTime};
use crate::sim::{TraceLog, TraceRecord};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InvariantViolation {
    pub invariant: &'static str,
    /// 1-based line in the rendered trace.
    pub line: usize,
    pub detail: String,
}

impl fmt::Display for InvariantViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "invariant `{}` violated at trace line {}: {}",
            self.invariant, self.line, self.detail
        )
    }
}

pub const INVARIANTS: &[&str] = &[
    "time-order",
    "protocol",
    "avi-safety",
    "ir-rule",
    "single-leader",
    "successor-promotion",
    "routing",
    "multicast-delivery",
    "conservation",
    "stale-accounting",
    "latency",
];

#[derive(Default)]
struct ClientView {
    announced: bool,
    dta: bool,
    vacant: bool,
    departed: bool,
}

#[derive(Default)]
struct Checker {
    out: Vec<InvariantViolation>,
    clients: BTreeMap<NodeId, ClientView>,
    members: BTreeMap<NodeId, BTreeSet<NodeId>>,
    versions: BTreeMap<ItemId, Vec<(u64, SimTime)>>,
    current: Option<(NodeId, Option<NodeId>)>,
    expect_promotion: Option<(Option<NodeId>, usize)>,
    ir_sends: u64,
    reductions: u64,
    copies: u64,
    arrived: u64,
    queries: u64,
    answers: u64,
}

fn field<T: std::str::FromStr>(r: &TraceRecord, key: &str) -> Option<T> {
    r.parse(key)
}

impl Checker {
    fn fail(&mut self, invariant: &'static str, line: usize, detail: impl Into<String>) {
        self.out.push(InvariantViolation {
            invariant,
            line,
            detail: detail.into(),
        });
    }

    fn client(&mut self, id: NodeId) -> &mut ClientView {
        self.clients.entry(id).or_default()
    }

    fn live_dtas(&self) -> usize {
        self.clients
            .values()
            .filter(|c| c.dta && !c.departed)
            .count()
    }

    fn record(&mut self, strategy: Strategy, line: usize, r: &TraceRecord) {
        match r.ev.as_str() {
            "violation" => {
                let reason = r.get("reason").unwrap_or("-").to_string();
                self.fail("protocol", line, format!("{} reported {reason}", r.node));
            }
            "send" => self.send(line, r),
            "recv" => {
                self.arrived += 1;
                match (r.get("msg"), r.node.is_client()) {
                    (Some("register"), true) => {
                        if let Some(from) = field::<NodeId>(r, "from") {
                            self.members.entry(r.node).or_default().insert(from);
                        }
                    }
                    (Some("dta-vacant"), true) => {
                        let c = self.client(r.node);
                        c.vacant = true;
                    }
                    (Some("roam-notice"), false) => {
                        let origin = field::<NodeId>(r, "origin");
                        if let Some((dta, successor)) = self.current {
                            if origin == Some(dta) {
                                self.expect_promotion = Some((successor, line));
                            }
                        }
                    }
                    _ => {}
                }
            }
            "dropped-sleep" | "dropped-departed" => self.arrived += 1,
            "elect" => {
                let dta: Option<NodeId> = field(r, "dta");
                let successor: Option<NodeId> = field(r, "successor");
                let Some(dta) = dta else {
                    self.fail("protocol", line, "elect record without a dta");
                    return;
                };
                if successor == Some(dta) {
                    self.fail("single-leader", line, format!("{dta} is its own successor"));
                }
                if let Some((expected, roam_line)) = self.expect_promotion.take() {
                    if expected != Some(dta) {
                        self.fail(
                            "successor-promotion",
                            line,
                            format!(
                                "after the roam at line {roam_line} expected {} but {dta} was elected",
                                crate::model::opt_node(expected)
                            ),
                        );
                    }
                }
                self.current = Some((dta, successor));
            }
            "role" => {
                let dta = r.get("role") == Some("dta");
                self.client(r.node).dta = dta;
                if dta {
                    let c = self.client(r.node);
                    c.announced = true;
                    c.vacant = false;
                } else {
                    self.members.remove(&r.node);
                }
                if self.live_dtas() > 1 {
                    self.fail(
                        "single-leader",
                        line,
                        format!("{} live clients act as DTA", self.live_dtas()),
                    );
                }
            }
            "join" => {
                let c = self.client(r.node);
                c.announced = true;
                c.vacant = false;
            }
            "depart" => {
                self.client(r.node).departed = true;
                self.members.remove(&r.node);
            }
            "update" => {
                if let (Some(item), Some(version)) =
                    (field::<u32>(r, "item"), field::<u64>(r, "version"))
                {
                    let history = self.versions.entry(ItemId(item)).or_default();
                    let regressed = history.last().is_some_and(|(v, _)| *v >= version);
                    history.push((version, r.t));
                    if regressed {
                        self.fail(
                            "protocol",
                            line,
                            format!("item {item} version did not increase"),
                        );
                    }
                }
            }
            "avi" => {
                let old: Option<u64> = field(r, "old");
                let new: Option<u64> = field(r, "new");
                let ir = r.get("ir") == Some("true");
                let reduction = matches!((old, new), (Some(o), Some(n)) if n < o);
                if ir != reduction {
                    self.fail(
                        "ir-rule",
                        line,
                        format!("ir={ir} but the AVI went from {:?} to {:?}", old, new),
                    );
                }
                if reduction {
                    self.reductions += 1;
                }
            }
            "query" => self.queries += 1,
            "answer" => self.answer(strategy, line, r),
            _ => {}
        }
    }

    fn send(&mut self, line: usize, r: &TraceRecord) {
        let copies: u64 = field(r, "copies").unwrap_or(0);
        self.copies += copies;
        match r.get("msg") {
            Some("ir") => self.ir_sends += 1,
            Some("multicast") => {
                let members = self.members.get(&r.node).map_or(0, BTreeSet::len) as u64;
                if copies != members {
                    self.fail(
                        "multicast-delivery",
                        line,
                        format!("{copies} copies for {members} registered members"),
                    );
                }
            }
            Some("query") if r.node.is_client() && r.get("to") == Some("bs:0") => {
                let c = self.client(r.node);
                if c.announced && !c.dta && !c.vacant {
                    let node = r.node;
                    self.fail(
                        "routing",
                        line,
                        format!("{node} sent a query to the base station after joining a DTA"),
                    );
                }
            }
            _ => {}
        }
    }

    fn answer(&mut self, strategy: Strategy, line: usize, r: &TraceRecord) {
        self.answers += 1;
        let (Some(item), Some(version), Some(ts), Some(avi)) = (
            field::<u32>(r, "item"),
            field::<u64>(r, "version"),
            field::<u64>(r, "ts"),
            field::<u64>(r, "avi"),
        ) else {
            self.fail("protocol", line, "answer record is missing fields");
            return;
        };
        let now = r.t.ticks();
        if strategy == Strategy::DtaMulticast && ts + avi <= now {
            self.fail(
                "avi-safety",
                line,
                format!("item {item} answered at {now} but ts+avi = {}", ts + avi),
            );
        }
        let issued: Option<u64> = field(r, "issued");
        let latency: Option<u64> = field(r, "latency");
        if issued.zip(latency).is_none_or(|(i, l)| i + l != now) {
            self.fail(
                "latency",
                line,
                "latency is not answer time minus issue time",
            );
        }

        let history = self
            .versions
            .get(&ItemId(item))
            .cloned()
            .unwrap_or_default();
        let server_version = history.last().map_or(0, |(v, _)| *v);
        let stale = server_version > version;
        if r.get("stale") != Some(if stale { "true" } else { "false" }) {
            self.fail(
                "stale-accounting",
                line,
                format!("stale flag disagrees with server version {server_version} vs answered {version}"),
            );
        }
        if stale && strategy == Strategy::DtaMulticast {
            // The answer must fall in a false-valid window: after the next
            // update, before the copy's AVI ran out.
            let next = history
                .iter()
                .find(|(v, _)| *v == version + 1)
                .map(|(_, t)| t.ticks());
            let inside = next.is_some_and(|t_next| ts < t_next && t_next <= now && now < ts + avi);
            if !inside {
                self.fail(
                    "stale-accounting",
                    line,
                    format!("stale answer for item {item} outside a false-valid window"),
                );
            }
        }
    }
}

/// Check every invariant against a trace; an empty result means it passed.
pub fn check_trace(log: &TraceLog) -> Vec<InvariantViolation> {
    let strategy = log.header.strategy;
    let mut c = Checker::default();
    let mut prev: Option<(SimTime, u64)> = None;
    let horizon = SimTime(log.header.horizon);
    for (i, r) in log.records.iter().enumerate() {
        let line = TraceLog::line_of(i);
        if prev.is_some_and(|p| p > (r.t, r.seq)) || r.t > horizon {
            c.fail(
                "time-order",
                line,
                format!("t={} seq={} is out of order", r.t, r.seq),
            );
        }
        prev = Some((r.t, r.seq));
        if r.node.is_client() && (r.node.index == 0 || r.node.index > log.header.clients) {
            c.fail("protocol", line, format!("unknown node {}", r.node));
        }
        c.record(strategy, line, r);
    }

    let end_line = TraceLog::line_of(log.records.len());
    if strategy == Strategy::DtaMulticast && c.ir_sends != c.reductions {
        let (sends, reductions) = (c.ir_sends, c.reductions);
        c.fail(
            "ir-rule",
            end_line,
            format!("{sends} invalidation reports for {reductions} AVI reductions"),
        );
    }
    match log.footer {
        Some(f) => {
            if c.copies != c.arrived + f.inflight {
                let (copies, arrived) = (c.copies, c.arrived);
                c.fail(
                    "conservation",
                    end_line,
                    format!(
                        "{copies} copies sent, {arrived} delivered or dropped, {} in flight",
                        f.inflight
                    ),
                );
            }
            if c.answers + f.pending > c.queries {
                let (answers, queries) = (c.answers, c.queries);
                c.fail(
                    "conservation",
                    end_line,
                    format!(
                        "{answers} answers and {} pending exceed {queries} queries",
                        f.pending
                    ),
                );
            }
        }
        None => c.fail("conservation", end_line, "trace has no end line"),
    }
    c.out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{TraceFooter, TraceHeader};

    fn rec(t: u64, seq: u64, node: NodeId, ev: &str, fields: &[(&str, &str)]) -> TraceRecord {
        TraceRecord {
            t: SimTime(t),
            seq,
            node,
            ev: ev.into(),
            fields: fields
                .iter()
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .collect(),
        }
    }

    fn log(records: Vec<TraceRecord>) -> TraceLog {
        TraceLog {
            header: TraceHeader {
                strategy: Strategy::DtaMulticast,
                seed: 1,
                clients: 3,
                items: 2,
                horizon: 1000,
            },
            records,
            footer: Some(TraceFooter {
                inflight: 0,
                pending: 0,
            }),
        }
    }

    #[test]
    fn empty_trace_passes() {
        assert!(check_trace(&log(vec![])).is_empty());
    }

    #[test]
    fn unsafe_answer_is_flagged_with_its_line() {
        let v = check_trace(&log(vec![
            rec(
                0,
                0,
                NodeId::client(1),
                "query",
                &[("item", "0"), ("lookup", "miss")],
            ),
            rec(
                50,
                1,
                NodeId::client(1),
                "answer",
                &[
                    ("item", "0"),
                    ("version", "0"),
                    ("ts", "0"),
                    ("avi", "50"),
                    ("via", "server"),
                    ("issued", "0"),
                    ("latency", "50"),
                    ("stale", "false"),
                ],
            ),
        ]));
        assert_eq!(v.len(), 1, "{v:?}");
        assert_eq!(v[0].invariant, "avi-safety");
        assert_eq!(v[0].line, 3);
    }

    #[test]
    fn out_of_order_time_is_flagged() {
        let v = check_trace(&log(vec![
            rec(
                5,
                1,
                NodeId::SERVER,
                "update",
                &[("item", "0"), ("version", "1")],
            ),
            rec(
                4,
                2,
                NodeId::SERVER,
                "update",
                &[("item", "1"), ("version", "1")],
            ),
        ]));
        assert!(
            v.iter().any(|x| x.invariant == "time-order" && x.line == 3),
            "{v:?}"
        );
    }

    #[test]
    fn unpaired_reduction_breaks_ir_rule() {
        let v = check_trace(&log(vec![rec(
            5,
            1,
            NodeId::BASE_STATION,
            "avi",
            &[
                ("item", "0"),
                ("version", "2"),
                ("old", "10"),
                ("new", "5"),
                ("ir", "true"),
            ],
        )]));
        assert!(v.iter().any(|x| x.invariant == "ir-rule"), "{v:?}");
    }

    #[test]
    fn lost_copy_breaks_conservation() {
        let v = check_trace(&log(vec![rec(
            0,
            0,
            NodeId::client(1),
            "send",
            &[("msg", "register"), ("to", "client:2"), ("copies", "1")],
        )]));
        assert!(v.iter().any(|x| x.invariant == "conservation"), "{v:?}");
    }

    #[test]
    fn routing_after_join() {
        let v = check_trace(&log(vec![
            rec(0, 0, NodeId::client(1), "join", &[("dta", "client:2")]),
            rec(
                1,
                1,
                NodeId::client(1),
                "send",
                &[("msg", "query"), ("to", "bs:0"), ("copies", "1")],
            ),
            rec(
                6,
                2,
                NodeId::BASE_STATION,
                "recv",
                &[("msg", "query"), ("from", "client:1")],
            ),
        ]));
        assert_eq!(v.len(), 1, "{v:?}");
        assert_eq!(v[0].invariant, "routing");
    }
}
