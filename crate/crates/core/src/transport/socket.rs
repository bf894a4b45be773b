use std::io::{BufReader, BufWriter, Read, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream};
use std::sync::mpsc::{channel, Receiver, RecvTimeoutError};
use std::thread;
use std::time::{Duration, Instant};

use log::debug;

use super::{Channel, Frame, SessionId};
use crate::error::{Error, Result};
use crate::field::PartyId;

const MAGIC: &[u8; 4] = b"CGNN";
const VERSION: u16 = 1;
const HANDSHAKE_LEN: usize = 4 + 2 + 16 + 2;

#[derive(Clone, Debug)]
pub struct SocketConfig {
    /// Listening address of every party, indexed by party.
    pub peers: Vec<SocketAddr>,
    pub me: PartyId,
    pub session_id: SessionId,
    /// Deadline for establishing all connections.
    pub connect_timeout: Duration,
}

/// TCP transport: one outgoing connection per peer for sending and one
/// accepted connection per peer for receiving.
///
/// Every accepted connection is drained by a reader thread, so two parties
/// writing large frames to each other at the same time cannot deadlock on
/// full socket buffers.
pub struct TcpChannel {
    me: PartyId,
    parties: usize,
    writers: Vec<Option<BufWriter<TcpStream>>>,
    inboxes: Vec<Option<Receiver<Result<Frame>>>>,
}

fn handshake(session: &SessionId, me: PartyId) -> [u8; HANDSHAKE_LEN] {
    let mut out = [0u8; HANDSHAKE_LEN];
    out[..4].copy_from_slice(MAGIC);
    out[4..6].copy_from_slice(&VERSION.to_le_bytes());
    out[6..22].copy_from_slice(session);
    out[22..24].copy_from_slice(&(me as u16).to_le_bytes());
    out
}

impl TcpChannel {
    /// Binds this party's listener, then connects to everyone.
    pub fn establish(config: &SocketConfig) -> Result<Self> {
        let listener = TcpListener::bind(config.peers[config.me])?;
        Self::establish_with_listener(listener, config)
    }

    /// Connects using an already-bound listener (handy with port 0).
    pub fn establish_with_listener(listener: TcpListener, config: &SocketConfig) -> Result<Self> {
        let parties = config.peers.len();
        if parties < 2 || config.me >= parties {
            return Err(Error::Config(format!(
                "party {} is not part of a {parties}-party ring",
                config.me
            )));
        }
        let deadline = Instant::now() + config.connect_timeout;
        let session = config.session_id;
        let me = config.me;

        let acceptor = {
            let listener = listener.try_clone()?;
            thread::spawn(move || accept_peers(listener, session, me, parties, deadline))
        };

        let mut writers: Vec<Option<BufWriter<TcpStream>>> = (0..parties).map(|_| None).collect();
        for (peer, addr) in config.peers.iter().enumerate() {
            if peer == me {
                continue;
            }
            let mut stream = connect_until(addr, deadline, peer)?;
            stream.set_nodelay(true)?;
            stream.write_all(&handshake(&session, me))?;
            writers[peer] = Some(BufWriter::with_capacity(1 << 16, stream));
        }

        let incoming = acceptor
            .join()
            .map_err(|_| Error::Protocol("connection acceptor panicked".into()))??;
        let mut inboxes: Vec<Option<Receiver<Result<Frame>>>> = (0..parties).map(|_| None).collect();
        for (peer, stream) in incoming {
            let (tx, rx) = channel();
            thread::spawn(move || {
                let mut reader = BufReader::with_capacity(1 << 16, stream);
                loop {
                    match Frame::read_from(&mut reader) {
                        Ok(Some(frame)) => {
                            if tx.send(Ok(frame)).is_err() {
                                break;
                            }
                        }
                        Ok(None) => break,
                        Err(e) => {
                            let _ = tx.send(Err(e));
                            break;
                        }
                    }
                }
                debug!("reader for party {peer} finished");
            });
            inboxes[peer] = Some(rx);
        }
        Ok(TcpChannel {
            me,
            parties,
            writers,
            inboxes,
        })
    }
}

fn connect_until(addr: &SocketAddr, deadline: Instant, peer: PartyId) -> Result<TcpStream> {
    loop {
        match TcpStream::connect_timeout(addr, Duration::from_millis(500)) {
            Ok(s) => return Ok(s),
            Err(e) if Instant::now() >= deadline => {
                debug!("giving up on party {peer}: {e}");
                return Err(Error::Timeout {
                    peer,
                    after: Duration::ZERO,
                });
            }
            Err(_) => thread::sleep(Duration::from_millis(20)),
        }
    }
}

fn accept_peers(
    listener: TcpListener,
    session: SessionId,
    me: PartyId,
    parties: usize,
    deadline: Instant,
) -> Result<Vec<(PartyId, TcpStream)>> {
    listener.set_nonblocking(true)?;
    let mut out: Vec<(PartyId, TcpStream)> = Vec::new();
    while out.len() < parties - 1 {
        match listener.accept() {
            Ok((mut stream, _)) => {
                stream.set_nonblocking(false)?;
                stream.set_read_timeout(Some(deadline.saturating_duration_since(Instant::now()).max(Duration::from_millis(100))))?;
                let mut hello = [0u8; HANDSHAKE_LEN];
                stream.read_exact(&mut hello)?;
                stream.set_read_timeout(None)?;
                if &hello[..4] != MAGIC || u16::from_le_bytes([hello[4], hello[5]]) != VERSION {
                    return Err(Error::Frame("bad handshake".into()));
                }
                if hello[6..22] != session {
                    return Err(Error::Protocol("peer joined with a different session id".into()));
                }
                let peer = u16::from_le_bytes([hello[22], hello[23]]) as usize;
                if peer >= parties || peer == me || out.iter().any(|(p, _)| *p == peer) {
                    return Err(Error::Protocol(format!("unexpected handshake from party {peer}")));
                }
                out.push((peer, stream));
            }
            Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => {
                if Instant::now() >= deadline {
                    let missing = (0..parties)
                        .find(|p| *p != me && !out.iter().any(|(q, _)| q == p))
                        .unwrap_or(me);
                    return Err(Error::Timeout {
                        peer: missing,
                        after: Duration::ZERO,
                    });
                }
                thread::sleep(Duration::from_millis(5));
            }
            Err(e) => return Err(e.into()),
        }
    }
    Ok(out)
}

impl Channel for TcpChannel {
    fn party_count(&self) -> usize {
        self.parties
    }

    fn my_index(&self) -> PartyId {
        self.me
    }

    fn send(&mut self, to: PartyId, frame: Frame) -> Result<()> {
        let w = self
            .writers
            .get_mut(to)
            .and_then(Option::as_mut)
            .ok_or_else(|| Error::Protocol(format!("no connection to party {to}")))?;
        let res = frame.write_to(w).and_then(|_| w.flush().map_err(Error::from));
        res.map_err(|e| match e {
            Error::Io(_) => Error::Disconnected { peer: to },
            other => other,
        })
    }

    fn recv(&mut self, from: PartyId, timeout: Duration) -> Result<Frame> {
        let rx = self
            .inboxes
            .get(from)
            .and_then(Option::as_ref)
            .ok_or_else(|| Error::Protocol(format!("no connection from party {from}")))?;
        match rx.recv_timeout(timeout) {
            Ok(frame) => frame,
            Err(RecvTimeoutError::Timeout) => Err(Error::Timeout { peer: from, after: timeout }),
            Err(RecvTimeoutError::Disconnected) => Err(Error::Disconnected { peer: from }),
        }
    }
}

impl Drop for TcpChannel {
    fn drop(&mut self) {
        for w in self.writers.iter_mut().flatten() {
            let _ = w.flush();
            let _ = w.get_ref().shutdown(Shutdown::Write);
        }
    }
}
