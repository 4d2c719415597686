//! Message pipes between agents and the server.
//!
//! `Link` is the only thing the session loops see; the in-process
//! transport backs it with mpsc channels, the socket transport with a
//! framed TCP stream. Envelopes are validated on both paths so the two
//! transports reject the same inputs.

use std::io::{BufReader, BufWriter};
use std::net::TcpStream;
use std::sync::mpsc::{Receiver, Sender};

use super::envelope::{read_envelope, write_envelope, SyncEnvelope};
use super::RuntimeError;

pub trait Link: Send {
    fn send(&mut self, env: SyncEnvelope) -> Result<(), RuntimeError>;
    fn recv(&mut self) -> Result<SyncEnvelope, RuntimeError>;
}

/// One side of an in-process duplex channel.
pub struct ChannelLink {
    tx: Sender<SyncEnvelope>,
    rx: Receiver<SyncEnvelope>,
}

/// Duplex channel pair: `(agent side, server side)`.
pub fn channel_pair() -> (ChannelLink, ChannelLink) {
    let (a_tx, a_rx) = std::sync::mpsc::channel();
    let (s_tx, s_rx) = std::sync::mpsc::channel();
    (
        ChannelLink { tx: a_tx, rx: s_rx },
        ChannelLink { tx: s_tx, rx: a_rx },
    )
}

impl Link for ChannelLink {
    fn send(&mut self, env: SyncEnvelope) -> Result<(), RuntimeError> {
        env.validate()?;
        self.tx.send(env).map_err(|_| RuntimeError::ChannelClosed)
    }

    fn recv(&mut self) -> Result<SyncEnvelope, RuntimeError> {
        let env = self.rx.recv().map_err(|_| RuntimeError::ChannelClosed)?;
        env.validate()?;
        Ok(env)
    }
}

/// Framed TCP link.
pub struct TcpLink {
    reader: BufReader<TcpStream>,
    writer: BufWriter<TcpStream>,
}

impl TcpLink {
    pub fn new(stream: TcpStream) -> Result<Self, RuntimeError> {
        stream.set_nodelay(true)?;
        let reader = BufReader::new(stream.try_clone()?);
        let writer = BufWriter::new(stream);
        Ok(Self { reader, writer })
    }

    pub fn set_read_timeout(
        &mut self,
        timeout: Option<std::time::Duration>,
    ) -> Result<(), RuntimeError> {
        self.reader.get_ref().set_read_timeout(timeout)?;
        Ok(())
    }
}

impl Link for TcpLink {
    fn send(&mut self, env: SyncEnvelope) -> Result<(), RuntimeError> {
        write_envelope(&mut self.writer, &env)?;
        Ok(())
    }

    fn recv(&mut self) -> Result<SyncEnvelope, RuntimeError> {
        Ok(read_envelope(&mut self.reader)?)
    }
}
