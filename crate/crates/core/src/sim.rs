//! Runs all parties of a session as threads in one process.

use std::fmt;
use std::net::{SocketAddr, TcpListener};
use std::str::FromStr;
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::transport::{loopback_network, Channel, Session, SessionConfig, SocketConfig, TcpChannel, Transcript};

#[derive(Copy, Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Backend {
    #[default]
    Loopback,
    Socket,
}

impl FromStr for Backend {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "loopback" => Ok(Backend::Loopback),
            "socket" => Ok(Backend::Socket),
            other => Err(Error::Config(format!("unknown backend {other:?} (loopback|socket)"))),
        }
    }
}

impl fmt::Display for Backend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Backend::Loopback => "loopback",
            Backend::Socket => "socket",
        })
    }
}

/// What one party returned, with its communication record.
#[derive(Clone, Debug)]
pub struct PartyOutcome<T> {
    pub value: T,
    pub transcript: Transcript,
}

enum Link {
    Loopback(Box<dyn Channel>),
    Socket(TcpListener, SocketConfig),
}

/// Runs `f` once per party, party `p` receiving `inputs[p]`.
///
/// When several parties fail, the reported error is the first one that is
/// not a mere consequence of a peer going away.
pub fn run_parties<I, T, F>(
    backend: Backend,
    config: &SessionConfig,
    inputs: Vec<I>,
    f: F,
) -> Result<Vec<PartyOutcome<T>>>
where
    I: Send,
    T: Send,
    F: Fn(&mut Session, I) -> Result<T> + Sync,
{
    let parties = inputs.len();
    if parties < 2 {
        return Err(Error::Config(format!("need at least 2 parties, got {parties}")));
    }
    let links: Vec<Link> = match backend {
        Backend::Loopback => loopback_network(parties)
            .into_iter()
            .map(|c| Link::Loopback(Box::new(c)))
            .collect(),
        Backend::Socket => {
            let listeners = (0..parties)
                .map(|_| TcpListener::bind("127.0.0.1:0"))
                .collect::<std::io::Result<Vec<_>>>()?;
            let peers = listeners
                .iter()
                .map(|l| l.local_addr())
                .collect::<std::io::Result<Vec<SocketAddr>>>()?;
            listeners
                .into_iter()
                .enumerate()
                .map(|(me, l)| {
                    Link::Socket(
                        l,
                        SocketConfig {
                            peers: peers.clone(),
                            me,
                            session_id: config.session_id,
                            connect_timeout: Duration::from_secs(10),
                        },
                    )
                })
                .collect()
        }
    };

    let results: Vec<Result<PartyOutcome<T>>> = thread::scope(|scope| {
        let handles: Vec<_> = links
            .into_iter()
            .zip(inputs)
            .map(|(link, input)| {
                let f = &f;
                scope.spawn(move || {
                    let channel: Box<dyn Channel> = match link {
                        Link::Loopback(c) => c,
                        Link::Socket(listener, cfg) => Box::new(TcpChannel::establish_with_listener(listener, &cfg)?),
                    };
                    let mut session = Session::new(channel, config.clone());
                    let value = f(&mut session, input)?;
                    Ok(PartyOutcome {
                        value,
                        transcript: session.finish(),
                    })
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|_| Err(Error::Protocol("party thread panicked".into()))))
            .collect()
    });

    if results.iter().all(Result::is_ok) {
        return Ok(results.into_iter().map(|r| r.unwrap()).collect());
    }
    let mut errors: Vec<Error> = results.into_iter().filter_map(|r| r.err()).collect();
    let root = errors
        .iter()
        .position(|e| !matches!(e, Error::Disconnected { .. } | Error::Timeout { .. }))
        .unwrap_or(0);
    Err(errors.swap_remove(root))
}

/// Session id derived from a label, for reproducible test runs.
pub fn session_id(label: &str) -> crate::transport::SessionId {
    let seed = crate::prf::derive_seed(&[0; 32], label, 0);
    let mut id = [0u8; 16];
    id.copy_from_slice(&seed[..16]);
    id
}
