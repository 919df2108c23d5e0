use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, BufWriter, ErrorKind, Read, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream};
use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{channel, Receiver, Sender};
use std::sync::{Arc, Mutex, MutexGuard};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use crate::caex::CaexDocument;
use crate::enrg::MidRegistry;
use crate::mtp::{extract_measurement_registry, validate_energy_mtp, MtpError};
use crate::tagbus::encode_message;

use super::{handle_frame, load_profile, Session, SimError, Simulator};

/// Longest accepted frame; longer input is handled as a malformed frame.
const MAX_FRAME: u64 = 64 * 1024;

#[derive(Debug, Clone)]
pub struct ServeOptions {
    /// `host:port`; port 0 picks a free port.
    pub bind: String,
    /// Simulated time runs this many times faster than wall time.
    pub accelerate: f64,
    /// Stop after this many ticks and close every connection.
    pub ticks: Option<u64>,
    /// Hold the clock at zero until the first subscription arrives.
    pub start_on_subscribe: bool,
}

impl Default for ServeOptions {
    fn default() -> Self {
        Self {
            bind: "127.0.0.1:4840".into(),
            accelerate: 1.0,
            ticks: None,
            start_on_subscribe: false,
        }
    }
}

struct Connection {
    session: Session,
    tx: Sender<String>,
}

struct Core {
    sim: Simulator,
    connections: BTreeMap<u64, Connection>,
}

type Shared = Arc<Mutex<Core>>;

fn lock(core: &Shared) -> MutexGuard<'_, Core> {
    // a panicking handler must not take the whole server down
    core.lock().unwrap_or_else(|p| p.into_inner())
}

/// A bound tag server; [`Server::run`] drives the clock.
pub struct Server {
    listener: TcpListener,
    core: Shared,
    options: ServeOptions,
}

impl Server {
    pub fn bind(sim: Simulator, options: ServeOptions) -> Result<Self, SimError> {
        let listener =
            TcpListener::bind(&options.bind).map_err(|source| SimError::BindFailure {
                addr: options.bind.clone(),
                source,
            })?;
        listener.set_nonblocking(true)?;
        Ok(Self {
            listener,
            core: Arc::new(Mutex::new(Core {
                sim,
                connections: BTreeMap::new(),
            })),
            options,
        })
    }

    pub fn local_addr(&self) -> std::io::Result<SocketAddr> {
        self.listener.local_addr()
    }

    /// Serves until the tick budget is spent (forever without one).
    /// Returns the number of ticks run.
    pub fn run(self) -> Result<u64, SimError> {
        let stop = Arc::new(AtomicBool::new(false));
        let writers: Arc<Mutex<Vec<JoinHandle<()>>>> = Arc::default();
        let acceptor = {
            let (core, stop, writers) = (self.core.clone(), stop.clone(), writers.clone());
            let listener = self.listener;
            thread::spawn(move || accept_loop(listener, core, stop, writers))
        };

        if self.options.start_on_subscribe {
            while !lock(&self.core)
                .connections
                .values()
                .any(|c| c.session.is_subscribed())
            {
                thread::sleep(Duration::from_millis(1));
            }
        }
        let tick_ms = lock(&self.core).sim.profile().tick_ms;
        let period =
            Duration::from_secs_f64(tick_ms as f64 / 1000.0 / self.options.accelerate.max(1e-9));
        let start = Instant::now();
        let mut ticks = 0u64;
        while self.options.ticks.is_none_or(|max| ticks < max) {
            ticks += 1;
            let deadline = start + period.mul_f64(ticks as f64);
            if let Some(wait) = deadline.checked_duration_since(Instant::now()) {
                thread::sleep(wait);
            }
            let mut guard = lock(&self.core);
            let Core { sim, connections } = &mut *guard;
            sim.step();
            for conn in connections.values_mut() {
                for msg in conn.session.due_updates(sim) {
                    let _ = conn.tx.send(encode_message(&msg));
                }
            }
            sim.apply_scheduled_resets();
        }

        stop.store(true, Ordering::SeqCst);
        let _ = acceptor.join();
        // dropping the senders lets every writer drain its queue and close
        lock(&self.core).connections.clear();
        let handles: Vec<_> =
            std::mem::take(&mut *writers.lock().unwrap_or_else(|p| p.into_inner()));
        for handle in handles {
            let _ = handle.join();
        }
        Ok(ticks)
    }
}

fn accept_loop(
    listener: TcpListener,
    core: Shared,
    stop: Arc<AtomicBool>,
    writers: Arc<Mutex<Vec<JoinHandle<()>>>>,
) {
    let mut next_id = 0u64;
    while !stop.load(Ordering::SeqCst) {
        match listener.accept() {
            Ok((stream, _)) => {
                if stream.set_nonblocking(false).is_err() {
                    continue;
                }
                let _ = stream.set_nodelay(true);
                let Ok(write_half) = stream.try_clone() else {
                    continue;
                };
                let (tx, rx) = channel();
                let id = next_id;
                next_id += 1;
                lock(&core).connections.insert(
                    id,
                    Connection {
                        session: Session::new(),
                        tx,
                    },
                );
                let writer = thread::spawn(move || write_loop(write_half, rx));
                writers
                    .lock()
                    .unwrap_or_else(|p| p.into_inner())
                    .push(writer);
                let core = core.clone();
                thread::spawn(move || read_loop(stream, id, core));
            }
            Err(e) if e.kind() == ErrorKind::WouldBlock => thread::sleep(Duration::from_millis(1)),
            Err(_) => thread::sleep(Duration::from_millis(5)),
        }
    }
}

fn read_loop(stream: TcpStream, id: u64, core: Shared) {
    let mut reader = BufReader::new(stream);
    let mut frame = Vec::new();
    loop {
        frame.clear();
        match reader
            .by_ref()
            .take(MAX_FRAME)
            .read_until(b'\n', &mut frame)
        {
            Ok(0) | Err(_) => break,
            Ok(_) => {}
        }
        if frame.iter().all(u8::is_ascii_whitespace) {
            continue;
        }
        let mut guard = lock(&core);
        let Core { sim, connections } = &mut *guard;
        let Some(conn) = connections.get_mut(&id) else {
            break;
        };
        let (responses, close) = handle_frame(sim, &mut conn.session, &frame);
        for msg in responses {
            let _ = conn.tx.send(encode_message(&msg));
        }
        if close {
            break;
        }
    }
    lock(&core).connections.remove(&id);
}

fn write_loop(stream: TcpStream, rx: Receiver<String>) {
    let mut out = BufWriter::new(&stream);
    'outer: while let Ok(line) = rx.recv() {
        if out.write_all(line.as_bytes()).is_err() {
            break;
        }
        while let Ok(more) = rx.try_recv() {
            if out.write_all(more.as_bytes()).is_err() {
                break 'outer;
            }
        }
        if out.flush().is_err() {
            break;
        }
    }
    let _ = out.flush();
    drop(out);
    let _ = stream.shutdown(Shutdown::Both);
}

/// Loads and validates a manifest and profile, binds, reports the bound
/// address through `ready`, then serves.
pub fn run_server(
    manifest_path: &Path,
    profile_path: &Path,
    mids: &MidRegistry,
    options: ServeOptions,
    ready: impl FnOnce(SocketAddr),
) -> Result<u64, SimError> {
    let server = prepare(manifest_path, profile_path, mids, options)?;
    ready(server.local_addr()?);
    server.run()
}

fn prepare(
    manifest_path: &Path,
    profile_path: &Path,
    mids: &MidRegistry,
    options: ServeOptions,
) -> Result<Server, SimError> {
    let text = std::fs::read_to_string(manifest_path)?;
    let doc = CaexDocument::parse(&text)
        .map_err(|e| SimError::ParseError(format!("{}: {e}", manifest_path.display())))?;
    let report = validate_energy_mtp(&doc, mids);
    if report.has_errors() {
        return Err(SimError::InvalidManifest(report));
    }
    let registry = match extract_measurement_registry(&doc, mids) {
        Ok(registry) => registry,
        Err(MtpError::ExtractionFailed(report)) => return Err(SimError::InvalidManifest(report)),
        Err(e) => return Err(SimError::ParseError(e.to_string())),
    };
    let profile_text = std::fs::read_to_string(profile_path)?;
    let profile = load_profile(&profile_text, &registry)?;
    Server::bind(Simulator::new(registry, profile, mids), options)
}
