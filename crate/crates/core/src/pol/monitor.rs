use std::collections::BTreeSet;
use std::io::{BufRead, BufReader, ErrorKind, Write};
use std::net::{SocketAddr, TcpStream, ToSocketAddrs};
use std::time::{Duration, Instant};

use crate::caex::CaexDocument;
use crate::enrg::MidRegistry;
use crate::mtp::{extract_measurement_registry, validate_energy_mtp, MtpError};
use crate::tagbus::{decode_message, encode_message, TagMessage, PROTO_VERSION};

use super::{PolError, SampleLog};

const CONNECT_TIMEOUT: Duration = Duration::from_secs(5);
/// Longest wait for any single frame before the server is considered gone.
const READ_TIMEOUT: Duration = Duration::from_secs(30);

/// When monitoring stops.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Budget {
    /// After this many update rounds across all subscribed nodes.
    Ticks(u64),
    /// After this much wall time.
    Duration(Duration),
    /// When the server closes the connection.
    UntilClose,
}

#[derive(Debug, Clone)]
pub struct MonitorOptions {
    /// `host:port`; defaults to the manifest's first server endpoint.
    pub endpoint: Option<String>,
    pub interval_ms: u64,
    pub budget: Budget,
}

impl Default for MonitorOptions {
    fn default() -> Self {
        Self {
            endpoint: None,
            interval_ms: 100,
            budget: Budget::UntilClose,
        }
    }
}

struct Link {
    reader: BufReader<TcpStream>,
    writer: TcpStream,
    line: String,
}

impl Link {
    fn send(&mut self, msg: &TagMessage) -> Result<(), PolError> {
        self.writer.write_all(encode_message(msg).as_bytes())?;
        self.writer.flush()?;
        Ok(())
    }

    /// Next frame, or `None` at end of stream.
    fn recv(&mut self) -> Result<Option<TagMessage>, PolError> {
        loop {
            self.line.clear();
            match self.reader.read_line(&mut self.line) {
                Ok(0) => return Ok(None),
                Ok(_) => {}
                Err(e)
                    if matches!(
                        e.kind(),
                        ErrorKind::ConnectionReset | ErrorKind::ConnectionAborted
                    ) =>
                {
                    return Ok(None)
                }
                Err(e) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => {
                    return Err(PolError::protocol("server stopped responding", None))
                }
                Err(e) => return Err(e.into()),
            }
            if self.line.trim().is_empty() {
                continue;
            }
            let msg = decode_message(self.line.as_bytes())
                .map_err(|e| PolError::protocol(e.to_string(), Some(&self.line)))?;
            if let TagMessage::Error { code, msg } = &msg {
                return Err(PolError::protocol(
                    format!("server error `{code}`: {msg}"),
                    Some(&self.line),
                ));
            }
            return Ok(Some(msg));
        }
    }

    fn expect(&mut self, what: &str) -> Result<TagMessage, PolError> {
        self.recv()?.ok_or_else(|| {
            PolError::protocol(format!("connection closed while waiting for {what}"), None)
        })
    }
}

fn connect(endpoint: &str) -> Result<Link, PolError> {
    let failure = |message: String| PolError::ConnectFailure {
        endpoint: endpoint.to_owned(),
        message,
    };
    let addrs: Vec<SocketAddr> = endpoint
        .to_socket_addrs()
        .map_err(|e| failure(e.to_string()))?
        .collect();
    let mut last = String::from("no address");
    for addr in addrs {
        match TcpStream::connect_timeout(&addr, CONNECT_TIMEOUT) {
            Ok(stream) => {
                let _ = stream.set_nodelay(true);
                stream.set_read_timeout(Some(READ_TIMEOUT))?;
                let writer = stream.try_clone()?;
                return Ok(Link {
                    reader: BufReader::new(stream),
                    writer,
                    line: String::new(),
                });
            }
            Err(e) => last = e.to_string(),
        }
    }
    Err(failure(last))
}

/// Connects to the tag server of a validated manifest, subscribes to every
/// energy node and records updates until the budget is spent.
pub fn monitor(
    doc: &CaexDocument,
    mids: &MidRegistry,
    options: &MonitorOptions,
) -> Result<SampleLog, PolError> {
    let report = validate_energy_mtp(doc, mids);
    if report.has_errors() {
        return Err(PolError::ValidationFailed(report));
    }
    let registry = match extract_measurement_registry(doc, mids) {
        Ok(registry) => registry,
        Err(MtpError::ExtractionFailed(report)) => return Err(PolError::ValidationFailed(report)),
        Err(e) => return Err(PolError::protocol(e.to_string(), None)),
    };
    let expected: BTreeSet<String> = registry.nodes().map(|n| n.item.node_id.clone()).collect();
    let endpoint = match &options.endpoint {
        Some(endpoint) => endpoint.clone(),
        None => registry
            .entries
            .first()
            .map(|m| m.endpoint.clone())
            .ok_or_else(|| PolError::protocol("manifest declares no energy measurements", None))?,
    };

    let mut link = connect(&endpoint)?;
    link.send(&TagMessage::Hello {
        client: "pol-client".into(),
        proto: PROTO_VERSION,
    })?;
    match link.expect("hello")? {
        TagMessage::Hello { proto, .. } if proto == PROTO_VERSION => {}
        TagMessage::Hello { proto, .. } => {
            return Err(PolError::protocol(
                format!("server speaks protocol {proto}"),
                None,
            ))
        }
        other => {
            return Err(PolError::protocol(
                format!("expected hello, got `{}`", other.op()),
                None,
            ))
        }
    }

    link.send(&TagMessage::Browse)?;
    let served: BTreeSet<String> = match link.expect("browse_result")? {
        TagMessage::BrowseResult { items } => items.into_iter().map(|i| i.node).collect(),
        other => {
            return Err(PolError::protocol(
                format!("expected browse_result, got `{}`", other.op()),
                None,
            ))
        }
    };
    if served != expected {
        let missing: Vec<_> = expected.difference(&served).cloned().collect();
        let extra: Vec<_> = served.difference(&expected).cloned().collect();
        return Err(PolError::protocol(
            format!(
                "served nodes differ from the manifest; missing {missing:?}, unexpected {extra:?}"
            ),
            None,
        ));
    }

    let nodes: Vec<String> = expected.into_iter().collect();
    link.send(&TagMessage::Subscribe {
        nodes: nodes.clone(),
        interval_ms: options.interval_ms,
        id: Some(1),
    })?;
    let mut log = SampleLog::new();
    loop {
        match link.expect("subscription ack")? {
            TagMessage::Update(update) => log.record(update)?,
            TagMessage::Ack { id: Some(1) } => break,
            other => {
                return Err(PolError::protocol(
                    format!("unexpected `{}` before ack", other.op()),
                    None,
                ))
            }
        }
    }

    let target = match options.budget {
        Budget::Ticks(n) => Some(n.saturating_mul(nodes.len() as u64)),
        _ => None,
    };
    let deadline = match options.budget {
        Budget::Duration(d) => Some(Instant::now() + d),
        _ => None,
    };
    let mut received = 0u64;
    loop {
        if target.is_some_and(|t| received >= t) {
            break;
        }
        if let Some(deadline) = deadline {
            let left = deadline.saturating_duration_since(Instant::now());
            if left.is_zero() {
                break;
            }
            link.reader
                .get_ref()
                .set_read_timeout(Some(left.min(READ_TIMEOUT)))?;
        }
        let msg = match link.recv() {
            Ok(Some(msg)) => msg,
            Ok(None) => break,
            Err(PolError::ProtocolError { frame: None, .. })
                if deadline.is_some_and(|d| Instant::now() >= d) =>
            {
                break
            }
            Err(e) => return Err(e),
        };
        match msg {
            TagMessage::Update(update) => {
                log.record(update)?;
                received += 1;
            }
            other => {
                return Err(PolError::protocol(
                    format!("unexpected `{}` while monitoring", other.op()),
                    None,
                ))
            }
        }
    }
    Ok(log)
}
