use std::sync::mpsc::{channel, Receiver, RecvTimeoutError, Sender};
use std::time::Duration;

use super::{Channel, Frame};
use crate::error::{Error, Result};
use crate::field::PartyId;

/// In-process transport: one unbounded queue per ordered party pair.
///
/// Frames are moved, never serialized; byte accounting uses the wire length.
pub struct LoopbackChannel {
    me: PartyId,
    outboxes: Vec<Option<Sender<Frame>>>,
    inboxes: Vec<Option<Receiver<Frame>>>,
}

/// Builds the fully connected loopback mesh for `parties` parties.
pub fn loopback_network(parties: usize) -> Vec<LoopbackChannel> {
    let mut outboxes: Vec<Vec<Option<Sender<Frame>>>> = (0..parties).map(|_| Vec::new()).collect();
    let mut inboxes: Vec<Vec<Option<Receiver<Frame>>>> =
        (0..parties).map(|_| (0..parties).map(|_| None).collect()).collect();
    for (from, out) in outboxes.iter_mut().enumerate() {
        for to in 0..parties {
            if from == to {
                out.push(None);
            } else {
                let (tx, rx) = channel();
                out.push(Some(tx));
                inboxes[to][from] = Some(rx);
            }
        }
    }
    outboxes
        .into_iter()
        .zip(inboxes)
        .enumerate()
        .map(|(me, (outboxes, inboxes))| LoopbackChannel { me, outboxes, inboxes })
        .collect()
}

impl Channel for LoopbackChannel {
    fn party_count(&self) -> usize {
        self.outboxes.len()
    }

    fn my_index(&self) -> PartyId {
        self.me
    }

    fn send(&mut self, to: PartyId, frame: Frame) -> Result<()> {
        let tx = self
            .outboxes
            .get(to)
            .and_then(Option::as_ref)
            .ok_or_else(|| Error::Protocol(format!("no link from {} to {to}", self.me)))?;
        tx.send(frame).map_err(|_| Error::Disconnected { peer: to })
    }

    fn recv(&mut self, from: PartyId, timeout: Duration) -> Result<Frame> {
        let rx = self
            .inboxes
            .get(from)
            .and_then(Option::as_ref)
            .ok_or_else(|| Error::Protocol(format!("no link from {from} to {}", self.me)))?;
        rx.recv_timeout(timeout).map_err(|e| match e {
            RecvTimeoutError::Timeout => Error::Timeout { peer: from, after: timeout },
            RecvTimeoutError::Disconnected => Error::Disconnected { peer: from },
        })
    }
}
