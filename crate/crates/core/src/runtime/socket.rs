//! TCP transport: the server accepts exactly N agents, validates their
//! hellos, and then drives the same round/barrier state machine as the
//! in-process bus. Connection loss aborts the run; there is no retry or
//! reconnect.

use std::net::{TcpListener, TcpStream, ToSocketAddrs};
use std::time::{Duration, Instant};

use super::envelope::{MsgType, SyncEnvelope};
use super::ledger::Counters;
use super::link::{Link, TcpLink};
use super::RuntimeError;

pub(crate) struct ServerSetup {
    pub links: Vec<(u32, Box<dyn Link>)>,
    /// Hello traffic observed during the handshake.
    pub counters: Counters,
}

/// Accepts connections until every expected agent id `0..n` has sent a
/// valid hello, or the deadline passes. Duplicate or out-of-range ids
/// and dimension mismatches are rejected at hello with a `Bye`; the
/// offending connection is dropped and the slot stays open.
pub(crate) fn accept_agents(
    listener: &TcpListener,
    n_agents: u32,
    dim: usize,
    timeout: Duration,
) -> Result<ServerSetup, RuntimeError> {
    let deadline = Instant::now() + timeout;
    listener.set_nonblocking(true)?;
    let mut counters = Counters::default();
    let mut links: Vec<(u32, Box<dyn Link>)> = Vec::with_capacity(n_agents as usize);

    while links.len() < n_agents as usize {
        if Instant::now() >= deadline {
            return Err(RuntimeError::Timeout(format!(
                "waited {timeout:?} for agents: expected {n_agents}, connected {}",
                links.len()
            )));
        }
        let stream = match listener.accept() {
            Ok((stream, _)) => stream,
            Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => {
                std::thread::sleep(Duration::from_millis(2));
                continue;
            }
            Err(e) => return Err(e.into()),
        };
        stream.set_nonblocking(false)?;
        let mut link = TcpLink::new(stream)?;
        link.set_read_timeout(Some(
            deadline
                .saturating_duration_since(Instant::now())
                .max(Duration::from_millis(1)),
        ))?;

        let hello = match link.recv() {
            Ok(env) => env,
            // a connection that never says hello does not burn the run
            Err(_) => continue,
        };
        counters.messages_received += 1;
        let acceptable = hello.msg_type == MsgType::Hello
            && hello.d as usize == dim
            && hello.agent_id < n_agents
            && !links.iter().any(|(id, _)| *id == hello.agent_id);
        if !acceptable {
            // rejected at hello: best-effort Bye, then drop the connection
            counters.messages_sent += 1;
            let _ = link.send(SyncEnvelope::bye(hello.agent_id, 0, dim));
            continue;
        }
        link.set_read_timeout(None)?;
        links.push((hello.agent_id, Box::new(link)));
    }

    links.sort_by_key(|(id, _)| *id);
    Ok(ServerSetup { links, counters })
}

/// Connects to a serving federation endpoint, retrying until the
/// deadline so agents may start before the server socket is ready.
pub(crate) fn connect_with_retry(addr: &str, timeout: Duration) -> Result<TcpStream, RuntimeError> {
    let deadline = Instant::now() + timeout;
    let addrs: Vec<_> = addr.to_socket_addrs().map_err(RuntimeError::Io)?.collect();
    loop {
        for a in &addrs {
            if let Ok(stream) = TcpStream::connect_timeout(a, Duration::from_millis(250)) {
                return Ok(stream);
            }
        }
        if Instant::now() >= deadline {
            return Err(RuntimeError::Timeout(format!(
                "could not connect to {addr} within {timeout:?}"
            )));
        }
        std::thread::sleep(Duration::from_millis(10));
    }
}
