use std::collections::BTreeMap;

use super::{Dest, Note, ServerEvent, StepOutput};
use crate::model::{DataItem, ItemId, NodeId, ProtocolMessage, SimTime};

/// The database of record. Only the server creates new versions.
#[derive(Debug, Clone, PartialEq)]
pub struct ServerState {
    pub db: BTreeMap<ItemId, DataItem>,
}

impl ServerState {
    pub fn new(num_items: u32) -> Self {
        ServerState {
            db: (0..num_items)
                .map(|i| (ItemId(i), DataItem::initial(ItemId(i))))
                .collect(),
        }
    }

    pub fn version(&self, item: ItemId) -> Option<u64> {
        self.db.get(&item).map(|d| d.version)
    }

    fn report(&self, item: ItemId, out: &mut StepOutput) {
        let d = &self.db[&item];
        out.send(
            Dest::To(NodeId::BASE_STATION),
            ProtocolMessage::ServerUpdate {
                item,
                version: d.version,
                ts: d.last_update_ts,
            },
        );
    }

    pub fn step(&mut self, event: ServerEvent, now: SimTime) -> StepOutput {
        let mut out = StepOutput::default();
        match event {
            ServerEvent::ScheduledUpdate(item) => {
                let Some(d) = self.db.get_mut(&item) else {
                    out.violation(format!("update for unknown item {item}"));
                    return out;
                };
                d.version += 1;
                d.last_update_ts = now;
                out.note(Note::Updated {
                    item,
                    version: d.version,
                });
                self.report(item, &mut out);
            }
            ServerEvent::Deliver {
                msg: ProtocolMessage::Query { item, .. },
                ..
            } => {
                if self.db.contains_key(&item) {
                    self.report(item, &mut out);
                } else {
                    out.violation(format!("query for unknown item {item}"));
                }
            }
            ServerEvent::Deliver { msg, .. } => {
                out.violation(format!("server cannot handle {}", msg.name()));
            }
        }
        out
    }
}

pub fn server_step(
    mut state: ServerState,
    event: ServerEvent,
    now: SimTime,
) -> (ServerState, StepOutput) {
    let out = state.step(event, now);
    (state, out)
}
