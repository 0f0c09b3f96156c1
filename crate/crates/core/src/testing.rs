//! Threaded in-memory harness for unit tests.

use alloc::vec::Vec;
use std::sync::mpsc::{sync_channel, Receiver, SyncSender};
use std::thread;

use crate::error::{Error, Result};
use crate::transport::{Link, PartyId, Session, SessionConfig};

pub struct ChanLink {
    tx: SyncSender<Vec<u8>>,
    rx: Receiver<Vec<u8>>,
}

impl Link for ChanLink {
    fn send(&mut self, frame: &[u8]) -> Result<()> {
        self.tx
            .send(frame.to_vec())
            .map_err(|_| Error::Transport("peer hung up".into()))
    }
    fn flush(&mut self) -> Result<()> {
        Ok(())
    }
    fn recv(&mut self) -> Result<Vec<u8>> {
        self.rx
            .recv()
            .map_err(|_| Error::Transport("peer hung up".into()))
    }
}

pub fn link_pair() -> (ChanLink, ChanLink) {
    let (tx0, rx1) = sync_channel(1 << 16);
    let (tx1, rx0) = sync_channel(1 << 16);
    (ChanLink { tx: tx0, rx: rx0 }, ChanLink { tx: tx1, rx: rx1 })
}

/// Run `f` once per party on two threads, handing each its own session
/// seeded by `seed`.
pub fn run_owned<T, F>(seed: u64, f: F) -> (T, T)
where
    T: Send + 'static,
    F: Fn(Session<ChanLink>) -> T + Send + Sync + Clone + 'static,
{
    let (l0, l1) = link_pair();
    let mut shared = [0u8; 32];
    shared[..8].copy_from_slice(&seed.to_le_bytes());
    let f1 = f.clone();
    let h = thread::spawn(move || {
        let mut s = Session::new(l1, &SessionConfig::deterministic(PartyId::P1, shared));
        s.set_check_sync(true);
        f1(s)
    });
    let r0 = {
        let mut s = Session::new(l0, &SessionConfig::deterministic(PartyId::P0, shared));
        s.set_check_sync(true);
        f(s)
    };
    let r1 = h.join().expect("party 1 panicked");
    (r0, r1)
}

/// [`run_owned`] with the session lent rather than moved.
pub fn run_pair<T, F>(seed: u64, f: F) -> (T, T)
where
    T: Send + 'static,
    F: Fn(&mut Session<ChanLink>) -> T + Send + Sync + Clone + 'static,
{
    run_owned(seed, move |mut s| f(&mut s))
}
