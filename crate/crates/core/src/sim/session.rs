use std::collections::BTreeMap;

use crate::tagbus::{decode_message, TagMessage, TagbusError, MIN_INTERVAL_MS, PROTO_VERSION};

use super::{ResetError, Simulator};

/// Frames that fail to decode this many times close the connection.
pub const MAX_STRIKES: u32 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Subscription {
    interval_ms: u64,
    next_due: u64,
}

/// Per-connection protocol state.
#[derive(Debug, Clone, Default)]
pub struct Session {
    greeted: bool,
    subscriptions: BTreeMap<String, Subscription>,
    strikes: u32,
}

impl Session {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn strikes(&self) -> u32 {
        self.strikes
    }

    pub fn is_subscribed(&self) -> bool {
        !self.subscriptions.is_empty()
    }

    /// Updates whose subscription interval has elapsed at the simulator's clock.
    pub fn due_updates(&mut self, sim: &Simulator) -> Vec<TagMessage> {
        let now = sim.clock();
        let mut out = Vec::new();
        for (node, sub) in &mut self.subscriptions {
            if sub.next_due > now {
                continue;
            }
            if let Some(update) = sim.read(node) {
                out.push(TagMessage::Update(update));
            }
            // one push per tick even if the interval is shorter than the tick
            let behind = (now - sub.next_due) / sub.interval_ms + 1;
            sub.next_due += behind * sub.interval_ms;
        }
        out
    }
}

/// Decodes one frame and answers it. Returns the responses and whether the
/// connection must close (after too many undecodable frames).
pub fn handle_frame(
    sim: &mut Simulator,
    session: &mut Session,
    line: &[u8],
) -> (Vec<TagMessage>, bool) {
    match decode_message(line) {
        Ok(msg) => (handle_request(sim, session, msg), false),
        Err(err) => {
            session.strikes += 1;
            let code = match err {
                TagbusError::MalformedFrame(_) => "malformed",
                TagbusError::UnknownOp(_) => "unknown_op",
                TagbusError::MissingField(_) => "missing_field",
            };
            let close = session.strikes >= MAX_STRIKES;
            let msg = if close {
                format!("{err}; closing after {} bad frames", session.strikes)
            } else {
                err.to_string()
            };
            (vec![TagMessage::error(code, msg)], close)
        }
    }
}

/// Answers one decoded request. Errors are reported as `error` frames.
pub fn handle_request(
    sim: &mut Simulator,
    session: &mut Session,
    msg: TagMessage,
) -> Vec<TagMessage> {
    if let TagMessage::Hello { proto, .. } = &msg {
        if *proto != PROTO_VERSION {
            return vec![TagMessage::error(
                "proto",
                format!("protocol version {proto} not supported; server speaks {PROTO_VERSION}"),
            )];
        }
        session.greeted = true;
        return vec![TagMessage::Hello {
            client: "pea-sim".into(),
            proto: PROTO_VERSION,
        }];
    }
    if !session.greeted {
        return vec![TagMessage::error("hello_required", "send hello first")];
    }
    match msg {
        TagMessage::Hello { .. } => unreachable!("handled above"),
        TagMessage::Browse => vec![TagMessage::BrowseResult {
            items: sim.browse(),
        }],
        TagMessage::Read { nodes, id } => {
            let mut out: Vec<TagMessage> = nodes
                .iter()
                .map(|node| match sim.read(node) {
                    Some(update) => TagMessage::Update(update),
                    None => {
                        TagMessage::error("unknown_node", format!("node `{node}` is not served"))
                    }
                })
                .collect();
            out.push(TagMessage::Ack { id });
            out
        }
        TagMessage::Subscribe {
            nodes,
            interval_ms,
            id,
        } => {
            if interval_ms < MIN_INTERVAL_MS {
                return vec![TagMessage::error(
                    "bad_interval",
                    format!("interval_ms must be at least {MIN_INTERVAL_MS}"),
                )];
            }
            if let Some(node) = nodes.iter().find(|n| !sim.has_node(n)) {
                return vec![TagMessage::error(
                    "unknown_node",
                    format!("node `{node}` is not served"),
                )];
            }
            let now = sim.clock();
            let mut out = Vec::with_capacity(nodes.len() + 1);
            for node in nodes {
                if let Some(update) = sim.read(&node) {
                    out.push(TagMessage::Update(update));
                }
                session.subscriptions.insert(
                    node,
                    Subscription {
                        interval_ms,
                        next_due: now + interval_ms,
                    },
                );
            }
            out.push(TagMessage::Ack { id });
            out
        }
        TagMessage::Reset { node, id } => match sim.reset(&node) {
            Ok(()) => vec![TagMessage::Ack { id }],
            Err(ResetError::UnknownNode) => {
                vec![TagMessage::error(
                    "unknown_node",
                    format!("node `{node}` is not served"),
                )]
            }
            Err(ResetError::NotCounter) => {
                vec![TagMessage::error(
                    "not_counter",
                    format!("`{node}` is not a counter"),
                )]
            }
        },
        other @ (TagMessage::BrowseResult { .. }
        | TagMessage::Update(_)
        | TagMessage::Ack { .. }
        | TagMessage::Error { .. }) => vec![TagMessage::error(
            "unexpected_op",
            format!("`{}` is sent by servers, not clients", other.op()),
        )],
    }
}
