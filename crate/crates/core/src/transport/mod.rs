//! Ring-ordered message exchange between the computing parties.
//!
//! A [`Session`] wraps one party's [`Channel`] and keeps the
//! [`Transcript`]: rounds, bytes per peer, bytes per protocol phase and an
//! optional running SHA-256 of every frame in wire encoding. Backends only
//! move [`Frame`]s; all accounting lives here so loopback and TCP runs
//! produce identical transcripts.

mod loopback;
mod socket;

use std::io::{self, Read, Write};
use std::time::Duration;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::field::{FieldElement, FieldMatrix, PartyId};

pub use loopback::{loopback_network, LoopbackChannel};
pub use socket::{SocketConfig, TcpChannel};

pub type SessionId = [u8; 16];

/// Bytes of the length prefix plus the fixed header.
pub const FRAME_OVERHEAD: usize = 4 + HEADER_LEN;
const HEADER_LEN: usize = 16 + 4 + 2 + 2;
/// Per-matrix shape header.
pub const MATRIX_HEADER: usize = 8;
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, Serialize)]
#[repr(u16)]
pub enum PayloadTag {
    ReadPass = 1,
    WritePass = 2,
    BeaverOpen = 3,
    AlphaOpen = 4,
    Result = 5,
    Control = 6,
}

impl PayloadTag {
    fn from_u16(v: u16) -> Result<Self> {
        Ok(match v {
            1 => PayloadTag::ReadPass,
            2 => PayloadTag::WritePass,
            3 => PayloadTag::BeaverOpen,
            4 => PayloadTag::AlphaOpen,
            5 => PayloadTag::Result,
            6 => PayloadTag::Control,
            other => return Err(Error::Frame(format!("unknown payload tag {other}"))),
        })
    }
}

/// One message on the wire.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Frame {
    pub session: SessionId,
    pub round: u32,
    pub sender: u16,
    pub tag: PayloadTag,
    pub payload: Vec<FieldMatrix>,
}

fn payload_len(payload: &[FieldMatrix]) -> usize {
    payload.iter().map(|m| MATRIX_HEADER + 8 * m.len()).sum()
}

impl Frame {
    /// Total bytes on the wire, length prefix included.
    pub fn encoded_len(&self) -> usize {
        FRAME_OVERHEAD + payload_len(&self.payload)
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        let body = HEADER_LEN + payload_len(&self.payload);
        let body = u32::try_from(body)
            .map_err(|_| Error::Frame(format!("frame of {body} bytes exceeds the 4 GiB limit")))?;
        let mut head = Vec::with_capacity(FRAME_OVERHEAD);
        head.extend_from_slice(&body.to_le_bytes());
        head.extend_from_slice(&self.session);
        head.extend_from_slice(&self.round.to_le_bytes());
        head.extend_from_slice(&self.sender.to_le_bytes());
        head.extend_from_slice(&(self.tag as u16).to_le_bytes());
        w.write_all(&head)?;
        let mut buf = Vec::with_capacity(8 * 1024);
        for m in &self.payload {
            w.write_all(&(m.rows() as u32).to_le_bytes())?;
            w.write_all(&(m.cols() as u32).to_le_bytes())?;
            for chunk in m.as_slice().chunks(1024) {
                buf.clear();
                for v in chunk {
                    buf.extend_from_slice(&v.value().to_le_bytes());
                }
                w.write_all(&buf)?;
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::with_capacity(self.encoded_len());
        self.write_to(&mut out)?;
        Ok(out)
    }

    /// Reads one length-prefixed frame. `Ok(None)` on a clean end of stream.
    pub fn read_from<R: Read>(r: &mut R) -> Result<Option<Frame>> {
        let mut len = [0u8; 4];
        match r.read_exact(&mut len) {
            Ok(()) => {}
            Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Ok(None),
            Err(e) => return Err(e.into()),
        }
        let body = u32::from_le_bytes(len) as usize;
        if body < HEADER_LEN {
            return Err(Error::Frame(format!("frame body of {body} bytes is shorter than the header")));
        }
        let mut head = [0u8; HEADER_LEN];
        read_body(r, &mut head)?;
        let mut session = [0u8; 16];
        session.copy_from_slice(&head[..16]);
        let round = u32::from_le_bytes(head[16..20].try_into().unwrap());
        let sender = u16::from_le_bytes(head[20..22].try_into().unwrap());
        let tag = PayloadTag::from_u16(u16::from_le_bytes(head[22..24].try_into().unwrap()))?;

        let mut remaining = body - HEADER_LEN;
        let mut payload = Vec::new();
        let mut buf = vec![0u8; 8 * 1024];
        while remaining > 0 {
            if remaining < MATRIX_HEADER {
                return Err(Error::Frame("truncated matrix header".into()));
            }
            let mut shape = [0u8; MATRIX_HEADER];
            read_body(r, &mut shape)?;
            remaining -= MATRIX_HEADER;
            let rows = u32::from_le_bytes(shape[..4].try_into().unwrap()) as usize;
            let cols = u32::from_le_bytes(shape[4..].try_into().unwrap()) as usize;
            let count = rows
                .checked_mul(cols)
                .filter(|c| c.checked_mul(8).is_some_and(|b| b <= remaining))
                .ok_or_else(|| {
                    Error::Frame(format!("matrix {rows}x{cols} does not fit the declared frame length"))
                })?;
            remaining -= 8 * count;
            let mut data = Vec::with_capacity(count);
            let mut left = count;
            while left > 0 {
                let take = left.min(buf.len() / 8);
                read_body(r, &mut buf[..8 * take])?;
                for word in buf[..8 * take].chunks_exact(8) {
                    let v = u64::from_le_bytes(word.try_into().unwrap());
                    data.push(
                        FieldElement::from_canonical(v)
                            .ok_or_else(|| Error::Frame(format!("non-canonical field element {v}")))?,
                    );
                }
                left -= take;
            }
            payload.push(FieldMatrix::from_vec(rows, cols, data)?);
        }
        Ok(Some(Frame {
            session,
            round,
            sender,
            tag,
            payload,
        }))
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Frame> {
        let mut cursor = bytes;
        let frame = Frame::read_from(&mut cursor)?.ok_or_else(|| Error::Frame("empty input".into()))?;
        if !cursor.is_empty() {
            return Err(Error::Frame(format!("{} trailing bytes", cursor.len())));
        }
        Ok(frame)
    }
}

fn read_body<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf).map_err(|e| {
        if e.kind() == io::ErrorKind::UnexpectedEof {
            Error::Frame("stream ended inside a frame".into())
        } else {
            Error::Io(e)
        }
    })
}

/// A point-to-point transport between the parties of one session.
pub trait Channel: Send {
    fn party_count(&self) -> usize;
    fn my_index(&self) -> PartyId;
    fn send(&mut self, to: PartyId, frame: Frame) -> Result<()>;
    fn recv(&mut self, from: PartyId, timeout: Duration) -> Result<Frame>;
}

/// Traffic attributed to one protocol phase.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct PhaseStats {
    pub name: String,
    pub rounds: u64,
    pub bytes_sent: u64,
    pub bytes_received: u64,
}

/// Per-party communication record.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct Transcript {
    pub rounds_used: u64,
    pub messages_sent: u64,
    pub bytes_sent: Vec<u64>,
    pub bytes_received: Vec<u64>,
    pub phases: Vec<PhaseStats>,
    /// Hex SHA-256 over every frame sent and received, in order.
    pub digest: Option<String>,
}

impl Transcript {
    fn new(parties: usize) -> Self {
        Transcript {
            bytes_sent: vec![0; parties],
            bytes_received: vec![0; parties],
            ..Default::default()
        }
    }

    pub fn total_sent(&self) -> u64 {
        self.bytes_sent.iter().sum()
    }

    pub fn total_received(&self) -> u64 {
        self.bytes_received.iter().sum()
    }

    pub fn phase(&self, name: &str) -> Option<&PhaseStats> {
        self.phases.iter().find(|p| p.name == name)
    }

    /// Sum over phases whose name starts with `prefix`.
    pub fn phase_total(&self, prefix: &str) -> PhaseStats {
        let mut out = PhaseStats {
            name: prefix.to_string(),
            ..Default::default()
        };
        for p in self.phases.iter().filter(|p| p.name.starts_with(prefix)) {
            out.rounds += p.rounds;
            out.bytes_sent += p.bytes_sent;
            out.bytes_received += p.bytes_received;
        }
        out
    }
}

#[derive(Clone, Debug)]
pub struct SessionConfig {
    pub session_id: SessionId,
    pub timeout: Duration,
    /// Hash every frame into the transcript digest. Costs one SHA-256 pass
    /// over all traffic.
    pub record_digest: bool,
}

impl SessionConfig {
    pub fn new(session_id: SessionId) -> Self {
        SessionConfig {
            session_id,
            timeout: DEFAULT_TIMEOUT,
            record_digest: true,
        }
    }
}

struct HashWriter<'a>(&'a mut Sha256);

impl Write for HashWriter<'_> {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        self.0.update(buf);
        Ok(buf.len())
    }

    fn flush(&mut self) -> io::Result<()> {
        Ok(())
    }
}

/// One party's view of a running protocol session.
pub struct Session {
    channel: Box<dyn Channel>,
    config: SessionConfig,
    me: PartyId,
    parties: usize,
    transcript: Transcript,
    phase: usize,
    awaiting_reply: bool,
    hasher: Option<Sha256>,
}

impl Session {
    pub fn new(channel: Box<dyn Channel>, config: SessionConfig) -> Self {
        let me = channel.my_index();
        let parties = channel.party_count();
        let hasher = config.record_digest.then(Sha256::new);
        let mut transcript = Transcript::new(parties);
        transcript.phases.push(PhaseStats {
            name: "setup".into(),
            ..Default::default()
        });
        Session {
            channel,
            config,
            me,
            parties,
            transcript,
            phase: 0,
            awaiting_reply: false,
            hasher,
        }
    }

    pub fn me(&self) -> PartyId {
        self.me
    }

    pub fn parties(&self) -> usize {
        self.parties
    }

    pub fn next(&self) -> PartyId {
        (self.me + 1) % self.parties
    }

    pub fn prev(&self) -> PartyId {
        (self.me + self.parties - 1) % self.parties
    }

    pub fn id(&self) -> &SessionId {
        &self.config.session_id
    }

    pub fn rounds(&self) -> u64 {
        self.transcript.rounds_used
    }

    pub fn transcript(&self) -> &Transcript {
        &self.transcript
    }

    /// Attributes subsequent traffic to `name`.
    pub fn set_phase(&mut self, name: &str) {
        self.phase = match self.transcript.phases.iter().position(|p| p.name == name) {
            Some(i) => i,
            None => {
                self.transcript.phases.push(PhaseStats {
                    name: name.to_string(),
                    ..Default::default()
                });
                self.transcript.phases.len() - 1
            }
        };
    }

    pub fn phase(&self) -> &str {
        &self.transcript.phases[self.phase].name
    }

    /// Final transcript, with the digest filled in when recording.
    pub fn finish(mut self) -> Transcript {
        if let Some(h) = self.hasher.take() {
            self.transcript.digest = Some(hex_string(&h.finalize()));
        }
        self.transcript
    }

    fn hash_frame(&mut self, direction: u8, frame: &Frame) -> Result<()> {
        if let Some(h) = self.hasher.as_mut() {
            h.update([direction]);
            frame.write_to(&mut HashWriter(h))?;
        }
        Ok(())
    }

    pub fn send_to(&mut self, to: PartyId, tag: PayloadTag, payload: Vec<FieldMatrix>) -> Result<()> {
        if to == self.me || to >= self.parties {
            return Err(Error::Protocol(format!("party {} cannot send to {to}", self.me)));
        }
        let frame = Frame {
            session: self.config.session_id,
            round: self.transcript.rounds_used as u32,
            sender: self.me as u16,
            tag,
            payload,
        };
        let len = frame.encoded_len() as u64;
        self.hash_frame(0, &frame)?;
        self.channel.send(to, frame)?;
        self.transcript.bytes_sent[to] += len;
        self.transcript.phases[self.phase].bytes_sent += len;
        self.transcript.messages_sent += 1;
        self.awaiting_reply = true;
        Ok(())
    }

    pub fn recv_from(&mut self, from: PartyId, tag: PayloadTag) -> Result<Vec<FieldMatrix>> {
        if from == self.me || from >= self.parties {
            return Err(Error::Protocol(format!("party {} cannot receive from {from}", self.me)));
        }
        let frame = self.channel.recv(from, self.config.timeout)?;
        if frame.session != self.config.session_id {
            return Err(Error::Protocol(format!("frame from party {from} belongs to another session")));
        }
        if frame.sender as usize != from {
            return Err(Error::Protocol(format!(
                "expected a frame from party {from}, got one from {}",
                frame.sender
            )));
        }
        if frame.tag != tag {
            return Err(Error::Protocol(format!(
                "expected {tag:?} from party {from}, got {:?}",
                frame.tag
            )));
        }
        if frame.round as u64 != self.transcript.rounds_used {
            return Err(Error::Protocol(format!(
                "party {from} is in round {}, we are in round {}",
                frame.round, self.transcript.rounds_used
            )));
        }
        let len = frame.encoded_len() as u64;
        self.hash_frame(1, &frame)?;
        self.transcript.bytes_received[from] += len;
        self.transcript.phases[self.phase].bytes_received += len;
        Ok(frame.payload)
    }

    /// Closes the current round if a send is outstanding.
    fn end_round(&mut self) {
        if self.awaiting_reply {
            self.transcript.rounds_used += 1;
            self.transcript.phases[self.phase].rounds += 1;
            self.awaiting_reply = false;
        }
    }

    pub fn send_to_next(&mut self, tag: PayloadTag, payload: Vec<FieldMatrix>) -> Result<()> {
        self.send_to(self.next(), tag, payload)
    }

    pub fn receive_from_prev(&mut self, tag: PayloadTag) -> Result<Vec<FieldMatrix>> {
        let out = self.recv_from(self.prev(), tag)?;
        self.end_round();
        Ok(out)
    }

    /// One ring hop: send to the successor, receive from the predecessor.
    pub fn ring_hop(&mut self, tag: PayloadTag, payload: Vec<FieldMatrix>) -> Result<Vec<FieldMatrix>> {
        self.send_to_next(tag, payload)?;
        self.receive_from_prev(tag)
    }

    /// Sends `payload` to every peer and collects theirs, indexed by party.
    pub fn all_gather(&mut self, tag: PayloadTag, payload: Vec<FieldMatrix>) -> Result<Vec<Vec<FieldMatrix>>> {
        for peer in 0..self.parties {
            if peer != self.me {
                self.send_to(peer, tag, payload.clone())?;
            }
        }
        let mut out = Vec::with_capacity(self.parties);
        let expected = payload.len();
        let mut own = Some(payload);
        for peer in 0..self.parties {
            if peer == self.me {
                out.push(own.take().expect("own payload used once"));
                continue;
            }
            let theirs = self.recv_from(peer, tag)?;
            if theirs.len() != expected {
                return Err(Error::Protocol(format!(
                    "party {peer} sent {} matrices, expected {expected}",
                    theirs.len()
                )));
            }
            out.push(theirs);
        }
        self.end_round();
        Ok(out)
    }

    /// Opens additively shared matrices: every party learns the sums.
    pub fn broadcast_open(&mut self, tag: PayloadTag, shares: Vec<FieldMatrix>) -> Result<Vec<FieldMatrix>> {
        let mut all = self.all_gather(tag, shares)?.into_iter();
        let mut sums = all.next().expect("at least two parties");
        for theirs in all {
            for (acc, m) in sums.iter_mut().zip(&theirs) {
                acc.add_assign(m)?;
            }
        }
        Ok(sums)
    }

    /// Opens a single matrix.
    pub fn open(&mut self, tag: PayloadTag, share: FieldMatrix) -> Result<FieldMatrix> {
        Ok(self.broadcast_open(tag, vec![share])?.pop().expect("one matrix opened"))
    }
}

pub fn hex_string(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prf::SeededPrf;

    fn frame() -> Frame {
        let mut prf = SeededPrf::new([1; 32], 0);
        Frame {
            session: [7; 16],
            round: 3,
            sender: 1,
            tag: PayloadTag::ReadPass,
            payload: vec![
                FieldMatrix::random(3, 2, &mut prf),
                FieldMatrix::zeros(0, 0),
                FieldMatrix::random(1, 5, &mut prf),
            ],
        }
    }

    #[test]
    fn frame_roundtrip() {
        let f = frame();
        let bytes = f.to_bytes().unwrap();
        assert_eq!(bytes.len(), f.encoded_len());
        assert_eq!(bytes.len(), 4 + 24 + 3 * 8 + 8 * (6 + 5));
        assert_eq!(Frame::from_bytes(&bytes).unwrap(), f);
    }

    #[test]
    fn header_layout_is_little_endian() {
        let bytes = frame().to_bytes().unwrap();
        assert_eq!(u32::from_le_bytes(bytes[..4].try_into().unwrap()) as usize, bytes.len() - 4);
        assert_eq!(&bytes[4..20], &[7u8; 16]);
        assert_eq!(&bytes[20..24], &3u32.to_le_bytes());
        assert_eq!(&bytes[24..26], &1u16.to_le_bytes());
        assert_eq!(&bytes[26..28], &1u16.to_le_bytes());
        assert_eq!(&bytes[28..32], &3u32.to_le_bytes());
        assert_eq!(&bytes[32..36], &2u32.to_le_bytes());
    }

    #[test]
    fn corrupt_frames_are_rejected() {
        let bytes = frame().to_bytes().unwrap();
        assert!(matches!(Frame::from_bytes(&bytes[..bytes.len() - 3]), Err(Error::Frame(_))));

        let mut bad_tag = bytes.clone();
        bad_tag[26] = 99;
        assert!(matches!(Frame::from_bytes(&bad_tag), Err(Error::Frame(_))));

        let mut bad_shape = bytes.clone();
        bad_shape[28] = 200;
        assert!(matches!(Frame::from_bytes(&bad_shape), Err(Error::Frame(_))));

        let mut bad_value = bytes.clone();
        bad_value[36..44].copy_from_slice(&u64::MAX.to_le_bytes());
        assert!(matches!(Frame::from_bytes(&bad_value), Err(Error::Frame(_))));
    }

    #[test]
    fn empty_stream_is_clean_eof() {
        let mut empty: &[u8] = &[];
        assert!(Frame::read_from(&mut empty).unwrap().is_none());
    }
}
