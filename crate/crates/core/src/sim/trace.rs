//! Run log.
//!
//! ```text
//! # avicast-trace v1 strategy=dta-multicast seed=1 clients=3 items=1 horizon=5000
//! t=0 seq=0 node=client:1 ev=send msg=candidacy to=bs:0 copies=1 origin=client:1 score=0.5
//! ...
//! # end inflight=0 pending=0
//! ```
//!
//! Every record is `t=<ticks> seq=<n> node=<kind:idx> ev=<name>` followed by
//! event-specific `key=value` pairs in a fixed order. `seq` is the sequence
//! number of the queue event being processed. Values never contain spaces.
//!
//! | ev | keys |
//! |----|------|
//! | send | msg to copies, then the message fields |
//! | recv | msg from, then the message fields |
//! | dropped-sleep, dropped-departed | msg from |
//! | skip | what reason \[item\] |
//! | query | item lookup |
//! | answer | item version ts avi via issued latency stale |
//! | coalesce, invalidate, evict | item |
//! | elect | dta successor group |
//! | election-retry | deadline |
//! | timeout | |
//! | avi | item version old new ir |
//! | renew | item avi |
//! | park | item requester |
//! | role | role |
//! | join | dta |
//! | purge | entries |
//! | update | item version |
//! | leave, sleep, wake, sleep-skipped, depart | |
//! | violation | reason |

use std::fmt;

use thiserror::Error;

use crate::config::Strategy;
use crate::model::{NodeId, SimTime, Ticks};

pub const TRACE_VERSION: &str = "# avicast-trace v1";

#[derive(Debug, Error, PartialEq, Eq)]
#[error("trace line {line}: {message}")]
pub struct TraceParseError {
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceHeader {
    pub strategy: Strategy,
    pub seed: u64,
    pub clients: u32,
    pub items: u32,
    pub horizon: Ticks,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TraceFooter {
    /// Message copies still queued at the horizon.
    pub inflight: u64,
    /// Local queries not yet answered at the horizon.
    pub pending: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceRecord {
    pub t: SimTime,
    pub seq: u64,
    pub node: NodeId,
    pub ev: String,
    pub fields: Vec<(String, String)>,
}

impl TraceRecord {
    pub fn get(&self, key: &str) -> Option<&str> {
        self.fields
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    /// Parse a field; `None` when it is absent, `-`, or malformed.
    pub fn parse<T: std::str::FromStr>(&self, key: &str) -> Option<T> {
        self.get(key).and_then(|v| v.parse().ok())
    }
}

impl fmt::Display for TraceRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "t={} seq={} node={} ev={}",
            self.t, self.seq, self.node, self.ev
        )?;
        for (k, v) in &self.fields {
            write!(f, " {k}={v}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceLog {
    pub header: TraceHeader,
    pub records: Vec<TraceRecord>,
    pub footer: Option<TraceFooter>,
}

impl TraceLog {
    /// 1-based line number of a record in the rendered log.
    pub fn line_of(index: usize) -> usize {
        index + 2
    }

    pub fn render(&self) -> String {
        self.to_string()
    }

    pub fn parse(text: &str) -> Result<TraceLog, TraceParseError> {
        let mut lines = text.lines().enumerate();
        let err = |line: usize, message: String| TraceParseError {
            line: line + 1,
            message,
        };

        let (n, first) = lines
            .next()
            .ok_or_else(|| err(0, "empty trace".to_string()))?;
        let header = parse_header(first).map_err(|m| err(n, m))?;

        let mut records = Vec::new();
        let mut footer = None;
        for (n, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            if footer.is_some() {
                return Err(err(n, "content after the end line".to_string()));
            }
            if let Some(rest) = line.strip_prefix("# end") {
                let kv = pairs(rest.split_whitespace()).map_err(|m| err(n, m))?;
                footer = Some(TraceFooter {
                    inflight: number(&kv, "inflight").map_err(|m| err(n, m))?,
                    pending: number(&kv, "pending").map_err(|m| err(n, m))?,
                });
                continue;
            }
            records.push(parse_record(line).map_err(|m| err(n, m))?);
        }
        Ok(TraceLog {
            header,
            records,
            footer,
        })
    }
}

impl fmt::Display for TraceLog {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let h = &self.header;
        writeln!(
            f,
            "{TRACE_VERSION} strategy={} seed={} clients={} items={} horizon={}",
            h.strategy.as_str(),
            h.seed,
            h.clients,
            h.items,
            h.horizon
        )?;
        for r in &self.records {
            writeln!(f, "{r}")?;
        }
        if let Some(e) = &self.footer {
            writeln!(f, "# end inflight={} pending={}", e.inflight, e.pending)?;
        }
        Ok(())
    }
}

fn pairs<'a>(tokens: impl Iterator<Item = &'a str>) -> Result<Vec<(String, String)>, String> {
    tokens
        .map(|tok| {
            tok.split_once('=')
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .ok_or_else(|| format!("expected key=value, got `{tok}`"))
        })
        .collect()
}

fn number<T: std::str::FromStr>(kv: &[(String, String)], key: &str) -> Result<T, String> {
    let v = kv
        .iter()
        .find(|(k, _)| k == key)
        .map(|(_, v)| v)
        .ok_or_else(|| format!("missing `{key}`"))?;
    v.parse().map_err(|_| format!("bad `{key}` value `{v}`"))
}

fn parse_header(line: &str) -> Result<TraceHeader, String> {
    let rest = line
        .strip_prefix(TRACE_VERSION)
        .ok_or_else(|| format!("expected header starting with `{TRACE_VERSION}`"))?;
    let kv = pairs(rest.split_whitespace())?;
    let strategy: String = number(&kv, "strategy")?;
    Ok(TraceHeader {
        strategy: strategy.parse()?,
        seed: number(&kv, "seed")?,
        clients: number(&kv, "clients")?,
        items: number(&kv, "items")?,
        horizon: number(&kv, "horizon")?,
    })
}

fn parse_record(line: &str) -> Result<TraceRecord, String> {
    let mut kv = pairs(line.split_whitespace())?;
    if kv.len() < 4 || kv[0].0 != "t" || kv[1].0 != "seq" || kv[2].0 != "node" || kv[3].0 != "ev" {
        return Err("record must start with t= seq= node= ev=".to_string());
    }
    let fields = kv.split_off(4);
    let t: u64 = number(&kv, "t")?;
    Ok(TraceRecord {
        t: SimTime(t),
        seq: number(&kv, "seq")?,
        node: kv[2].1.parse()?,
        ev: kv[3].1.clone(),
        fields,
    })
}
