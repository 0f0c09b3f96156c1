//! Metered, ordered duplex session between the two parties.
//!
//! A [`Session`] sits on top of any [`Link`] (a reliable FIFO frame pipe)
//! and adds party identity, per-phase metering, an optional transcript
//! digest, the shared randomness stream `theta`, and each party's private
//! randomness.
//!
//! Rounds are counted at flush boundaries: a flush that carries at least one
//! message is one round for the sender, the first receive after the peer's
//! flush is the same round for the receiver, and a symmetric
//! [`exchange`](Session::exchange) is one round for both.

use alloc::collections::VecDeque;
use alloc::format;
use alloc::vec::Vec;

use rand_chacha::ChaCha20Rng;
use rand_core::{RngCore, SeedableRng};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Which of the two computing parties this is.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum PartyId {
    P0,
    P1,
}

impl PartyId {
    pub fn index(self) -> usize {
        match self {
            PartyId::P0 => 0,
            PartyId::P1 => 1,
        }
    }

    pub fn from_index(i: usize) -> Result<Self> {
        match i {
            0 => Ok(PartyId::P0),
            1 => Ok(PartyId::P1),
            _ => Err(Error::protocol(format!("party index {i} is not 0 or 1"))),
        }
    }

    pub fn peer(self) -> Self {
        match self {
            PartyId::P0 => PartyId::P1,
            PartyId::P1 => PartyId::P0,
        }
    }

    #[inline]
    pub fn is_p0(self) -> bool {
        self == PartyId::P0
    }
}

/// A reliable, ordered pipe of frames to the peer.
pub trait Link {
    /// Queue one frame; may buffer until [`flush`](Link::flush).
    fn send(&mut self, frame: &[u8]) -> Result<()>;
    fn flush(&mut self) -> Result<()>;
    /// Block until the next frame from the peer arrives.
    fn recv(&mut self) -> Result<Vec<u8>>;
}

impl<L: Link + ?Sized> Link for &mut L {
    fn send(&mut self, frame: &[u8]) -> Result<()> {
        (**self).send(frame)
    }
    fn flush(&mut self) -> Result<()> {
        (**self).flush()
    }
    fn recv(&mut self) -> Result<Vec<u8>> {
        (**self).recv()
    }
}

impl<L: Link + ?Sized> Link for alloc::boxed::Box<L> {
    fn send(&mut self, frame: &[u8]) -> Result<()> {
        (**self).send(frame)
    }
    fn flush(&mut self) -> Result<()> {
        (**self).flush()
    }
    fn recv(&mut self) -> Result<Vec<u8>> {
        (**self).recv()
    }
}

/// Accounting bucket for traffic.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Phase {
    Offline,
    Online,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PhaseMetrics {
    pub rounds: u64,
    pub messages: u64,
    /// Payload bytes only; framing is never counted.
    pub bytes_sent: u64,
    pub bytes_received: u64,
}

impl PhaseMetrics {
    pub fn delta(&self, earlier: &PhaseMetrics) -> PhaseMetrics {
        PhaseMetrics {
            rounds: self.rounds - earlier.rounds,
            messages: self.messages - earlier.messages,
            bytes_sent: self.bytes_sent - earlier.bytes_sent,
            bytes_received: self.bytes_received - earlier.bytes_received,
        }
    }
}

/// Per-party traffic counters, split by phase.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Metrics {
    pub offline: PhaseMetrics,
    pub online: PhaseMetrics,
}

impl Metrics {
    pub fn phase(&self, phase: Phase) -> &PhaseMetrics {
        match phase {
            Phase::Offline => &self.offline,
            Phase::Online => &self.online,
        }
    }

    fn phase_mut(&mut self, phase: Phase) -> &mut PhaseMetrics {
        match phase {
            Phase::Offline => &mut self.offline,
            Phase::Online => &mut self.online,
        }
    }

    pub fn delta(&self, earlier: &Metrics) -> Metrics {
        Metrics {
            offline: self.offline.delta(&earlier.offline),
            online: self.online.delta(&earlier.online),
        }
    }
}

/// Everything a party needs to open a session besides the link itself.
#[derive(Clone, Debug)]
pub struct SessionConfig {
    pub party: PartyId,
    /// Seed of the common randomness stream; identical on both sides.
    pub shared_seed: [u8; 32],
    /// Seed of this party's private randomness.
    pub local_seed: [u8; 32],
    pub phase: Phase,
    /// Verify theta-stream alignment with an unmetered handshake before
    /// every shared shuffle.
    pub check_sync: bool,
}

impl SessionConfig {
    /// Private seed derived from the shared one, for reproducible runs.
    pub fn deterministic(party: PartyId, shared_seed: [u8; 32]) -> Self {
        let mut h = Sha256::new();
        h.update(b"secshare/local-seed");
        h.update(shared_seed);
        h.update([party.index() as u8]);
        SessionConfig {
            party,
            shared_seed,
            local_seed: h.finalize().into(),
            phase: Phase::Online,
            check_sync: false,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Flight {
    /// Our last action was a send/flush/exchange; the next receive opens a
    /// round.
    Sent,
    Receiving,
}

/// One party's end of a metered two-party session.
pub struct Session<L: Link> {
    party: PartyId,
    link: L,
    phase: Phase,
    metrics: Metrics,
    pending: VecDeque<Vec<u8>>,
    flight: Flight,
    shared: ChaCha20Rng,
    shared_draws: u64,
    local: ChaCha20Rng,
    transcript: Option<Sha256>,
    check_sync: bool,
}

impl<L: Link> Session<L> {
    pub fn new(link: L, cfg: &SessionConfig) -> Self {
        Session {
            party: cfg.party,
            link,
            phase: cfg.phase,
            metrics: Metrics::default(),
            pending: VecDeque::new(),
            flight: Flight::Sent,
            shared: ChaCha20Rng::from_seed(cfg.shared_seed),
            shared_draws: 0,
            local: ChaCha20Rng::from_seed(cfg.local_seed),
            transcript: None,
            check_sync: cfg.check_sync,
        }
    }

    #[inline]
    pub fn party(&self) -> PartyId {
        self.party
    }

    pub fn metrics(&self) -> Metrics {
        self.metrics
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    /// Switch the accounting bucket; returns the previous one.
    pub fn set_phase(&mut self, phase: Phase) -> Phase {
        core::mem::replace(&mut self.phase, phase)
    }

    pub fn set_check_sync(&mut self, on: bool) {
        self.check_sync = on;
    }

    /// Start hashing every payload this party sends and receives.
    pub fn record_transcript(&mut self) {
        self.transcript = Some(Sha256::new());
    }

    /// SHA-256 over the ordered (direction, length, payload) records so far.
    pub fn transcript_digest(&self) -> Option<[u8; 32]> {
        self.transcript.as_ref().map(|h| h.clone().finalize().into())
    }

    pub fn link_mut(&mut self) -> &mut L {
        &mut self.link
    }

    pub fn into_link(self) -> L {
        self.link
    }

    /// The private randomness of this party.
    pub fn rng(&mut self) -> &mut ChaCha20Rng {
        &mut self.local
    }

    /// The common randomness stream shared by both parties.
    pub fn shared_rng(&mut self) -> &mut ChaCha20Rng {
        self.shared_draws += 1;
        &mut self.shared
    }

    fn note(&mut self, dir: u8, payload: &[u8]) {
        if let Some(h) = self.transcript.as_mut() {
            h.update([dir]);
            h.update((payload.len() as u64).to_le_bytes());
            h.update(payload);
        }
    }

    fn direction(&self, sending: bool) -> u8 {
        // 0 = P0 -> P1, 1 = P1 -> P0
        match (self.party, sending) {
            (PartyId::P0, true) | (PartyId::P1, false) => 0,
            _ => 1,
        }
    }

    /// Queue a one-way message; delivered on the next [`flush`](Self::flush).
    pub fn send(&mut self, payload: &[u8]) -> Result<()> {
        self.pending.push_back(payload.to_vec());
        Ok(())
    }

    /// Push all queued messages to the peer as one flight.
    pub fn flush(&mut self) -> Result<()> {
        if self.pending.is_empty() {
            return Ok(());
        }
        let dir = self.direction(true);
        let phase = self.phase;
        while let Some(msg) = self.pending.pop_front() {
            self.link.send(&msg)?;
            let m = self.metrics.phase_mut(phase);
            m.messages += 1;
            m.bytes_sent += msg.len() as u64;
            self.note(dir, &msg);
        }
        self.link.flush()?;
        self.metrics.phase_mut(phase).rounds += 1;
        self.flight = Flight::Sent;
        Ok(())
    }

    /// Send one message and flush.
    pub fn send_oneway(&mut self, payload: &[u8]) -> Result<()> {
        self.send(payload)?;
        self.flush()
    }

    /// Receive the next one-way message from the peer.
    pub fn recv_oneway(&mut self) -> Result<Vec<u8>> {
        if !self.pending.is_empty() {
            return Err(Error::protocol("receive issued with unflushed outgoing messages"));
        }
        let msg = self.link.recv()?;
        let phase = self.phase;
        let m = self.metrics.phase_mut(phase);
        if self.flight == Flight::Sent {
            m.rounds += 1;
            self.flight = Flight::Receiving;
        }
        m.bytes_received += msg.len() as u64;
        let dir = self.direction(false);
        self.note(dir, &msg);
        Ok(msg)
    }

    /// Receive and check the length against the protocol schema.
    pub fn recv_exact(&mut self, len: usize) -> Result<Vec<u8>> {
        let msg = self.recv_oneway()?;
        if msg.len() != len {
            return Err(Error::protocol(format!("expected {len} bytes from peer, got {}", msg.len())));
        }
        Ok(msg)
    }

    /// Symmetric swap of one message each way, counted as a single round.
    pub fn exchange(&mut self, payload: &[u8]) -> Result<Vec<u8>> {
        if !self.pending.is_empty() {
            return Err(Error::protocol("exchange issued with unflushed outgoing messages"));
        }
        // P0 writes first and P1 reads first so stream transports with small
        // buffers cannot deadlock on large payloads.
        let incoming = match self.party {
            PartyId::P0 => {
                self.link.send(payload)?;
                self.link.flush()?;
                self.link.recv()?
            }
            PartyId::P1 => {
                let incoming = self.link.recv()?;
                self.link.send(payload)?;
                self.link.flush()?;
                incoming
            }
        };
        let phase = self.phase;
        let m = self.metrics.phase_mut(phase);
        m.rounds += 1;
        m.messages += 1;
        m.bytes_sent += payload.len() as u64;
        m.bytes_received += incoming.len() as u64;
        // Both parties hash P0's payload first.
        let (first, second) = match self.party {
            PartyId::P0 => (payload, incoming.as_slice()),
            PartyId::P1 => (incoming.as_slice(), payload),
        };
        if let Some(h) = self.transcript.as_mut() {
            for (dir, p) in [(0u8, first), (1u8, second)] {
                h.update([dir]);
                h.update((p.len() as u64).to_le_bytes());
                h.update(p);
            }
        }
        self.flight = Flight::Sent;
        Ok(incoming)
    }

    /// [`exchange`](Self::exchange) with a length check on the reply.
    pub fn exchange_exact(&mut self, payload: &[u8]) -> Result<Vec<u8>> {
        let incoming = self.exchange(payload)?;
        if incoming.len() != payload.len() {
            return Err(Error::protocol(format!(
                "peer sent {} bytes where {} were expected",
                incoming.len(),
                payload.len()
            )));
        }
        Ok(incoming)
    }

    /// Unmetered control exchange (handshakes, sync checks).
    pub fn control_exchange(&mut self, payload: &[u8]) -> Result<Vec<u8>> {
        match self.party {
            PartyId::P0 => {
                self.link.send(payload)?;
                self.link.flush()?;
                self.link.recv()
            }
            PartyId::P1 => {
                let incoming = self.link.recv()?;
                self.link.send(payload)?;
                self.link.flush()?;
                Ok(incoming)
            }
        }
    }

    /// Confirm both parties sit at the same position of the theta stream.
    pub fn verify_shared_stream(&mut self) -> Result<()> {
        let mut probe = self.shared.clone();
        let mut token = [0u8; 16];
        token[..8].copy_from_slice(&self.shared_draws.to_le_bytes());
        token[8..].copy_from_slice(&probe.next_u64().to_le_bytes());
        let theirs = self.control_exchange(&token)?;
        if theirs != token {
            return Err(Error::protocol("shared randomness streams are desynchronised"));
        }
        Ok(())
    }

    /// A permutation of `0..n` drawn from the shared stream; both parties
    /// obtain the same one when their streams are aligned.
    pub fn shared_shuffle_permutation(&mut self, n: usize) -> Result<Vec<usize>> {
        if self.check_sync {
            self.verify_shared_stream()?;
        }
        let mut perm: Vec<usize> = (0..n).collect();
        let rng = self.shared_rng();
        fisher_yates(&mut perm, rng);
        Ok(perm)
    }

    /// `count` independent shared permutations of `0..n` behind a single
    /// synchronisation check.
    pub fn shared_permutations(&mut self, n: usize, count: usize) -> Result<Vec<Vec<usize>>> {
        if self.check_sync && count > 0 {
            self.verify_shared_stream()?;
        }
        let rng = self.shared_rng();
        Ok((0..count)
            .map(|_| {
                let mut perm: Vec<usize> = (0..n).collect();
                fisher_yates(&mut perm, rng);
                perm
            })
            .collect())
    }
}

/// Uniform index below `bound` by rejection sampling.
pub fn uniform_below<R: RngCore>(rng: &mut R, bound: u64) -> u64 {
    debug_assert!(bound > 0);
    let zone = u64::MAX - (u64::MAX % bound) - 1;
    loop {
        let v = rng.next_u64();
        if v <= zone {
            return v % bound;
        }
    }
}

pub fn fisher_yates<T, R: RngCore>(items: &mut [T], rng: &mut R) {
    for i in (1..items.len()).rev() {
        let j = uniform_below(rng, i as u64 + 1) as usize;
        items.swap(i, j);
    }
}


#[cfg(test)]
mod tests {
    use alloc::vec;
    use super::testing::pair;
    use super::*;

    fn sessions() -> (Session<testing::QueueLink>, Session<testing::QueueLink>) {
        let (a, b) = pair();
        let seed = [9u8; 32];
        (
            Session::new(a, &SessionConfig::deterministic(PartyId::P0, seed)),
            Session::new(b, &SessionConfig::deterministic(PartyId::P1, seed)),
        )
    }

    #[test]
    fn batched_sends_are_one_round() {
        let (mut s0, mut s1) = sessions();
        s0.send(&[1]).unwrap();
        s0.send(&[2, 3]).unwrap();
        s0.flush().unwrap();
        assert_eq!(s1.recv_oneway().unwrap(), vec![1]);
        assert_eq!(s1.recv_oneway().unwrap(), vec![2, 3]);
        let m0 = s0.metrics().online;
        assert_eq!((m0.rounds, m0.messages, m0.bytes_sent), (1, 2, 3));
        let m1 = s1.metrics().online;
        assert_eq!((m1.rounds, m1.bytes_received), (1, 3));
    }

    #[test]
    fn one_way_prime_shares() {
        let (mut s0, mut s1) = sessions();
        s0.send_oneway(&[5u8; 32]).unwrap();
        assert_eq!(s1.recv_exact(32).unwrap().len(), 32);
        assert!(s1.recv_oneway().is_err());
    }

    #[test]
    fn flush_without_messages_is_free() {
        let (mut s0, _) = sessions();
        s0.flush().unwrap();
        assert_eq!(s0.metrics().online.rounds, 0);
    }

    #[test]
    fn receive_with_unflushed_sends_is_rejected() {
        let (mut s0, _) = sessions();
        s0.send(&[1]).unwrap();
        assert!(matches!(s0.recv_oneway(), Err(Error::Protocol(_))));
    }

    #[test]
    fn shuffle_permutations_agree() {
        let (mut s0, mut s1) = sessions();
        assert_eq!(s0.shared_shuffle_permutation(1).unwrap(), vec![0]);
        let p0 = s0.shared_shuffle_permutation(64).unwrap();
        let p1 = s1.shared_shuffle_permutation(1).unwrap();
        assert_eq!(p1, vec![0]);
        assert_eq!(p0, s1.shared_shuffle_permutation(64).unwrap());
        let mut sorted = p0.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..64).collect::<Vec<_>>());
    }

    #[test]
    fn different_seeds_give_different_permutations() {
        let (a, b) = pair();
        let mut s0 = Session::new(a, &SessionConfig::deterministic(PartyId::P0, [1; 32]));
        let mut s1 = Session::new(b, &SessionConfig::deterministic(PartyId::P1, [2; 32]));
        assert_ne!(
            s0.shared_shuffle_permutation(64).unwrap(),
            s1.shared_shuffle_permutation(64).unwrap()
        );
    }

    #[test]
    fn uniform_below_stays_in_range() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let mut seen = [0u32; 7];
        for _ in 0..7000 {
            seen[uniform_below(&mut rng, 7) as usize] += 1;
        }
        assert!(seen.iter().all(|c| (800..1200).contains(c)));
    }
}
