//! 1-out-of-2 oblivious transfer behind a provider trait.
//!
//! Messages are fixed-width byte strings; a batch of `n` transfers of
//! `width`-byte messages moves as one flight each way. [`DealerOt`] runs
//! Beaver's precomputed OT on correlations from a trusted dealer stream; the
//! `secshare` crate supplies a public-key provider with the same interface.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand_chacha::ChaCha20Rng;
use rand_core::{RngCore, SeedableRng};

use crate::error::{Error, Result};
use crate::transport::{Link, Session};

/// Sender input: `n` pairs of `width`-byte messages, stored flat.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OtBatch {
    pub width: usize,
    pub m0: Vec<u8>,
    pub m1: Vec<u8>,
}

impl OtBatch {
    pub fn new(width: usize, m0: Vec<u8>, m1: Vec<u8>) -> Result<Self> {
        if width == 0 || m0.len() != m1.len() || !m0.len().is_multiple_of(width) {
            return Err(Error::protocol(format!(
                "malformed OT batch: width {width}, {} and {} bytes",
                m0.len(),
                m1.len()
            )));
        }
        Ok(OtBatch { width, m0, m1 })
    }

    /// A batch of one-byte pairs.
    pub fn from_byte_pairs(pairs: &[(u8, u8)]) -> Self {
        OtBatch {
            width: 1,
            m0: pairs.iter().map(|p| p.0).collect(),
            m1: pairs.iter().map(|p| p.1).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.m0.len() / self.width
    }

    pub fn is_empty(&self) -> bool {
        self.m0.is_empty()
    }
}

/// A 1-out-of-2 OT provider. Both calls must be made in matching protocol
/// steps, the sender on one party and the receiver on the other.
pub trait ObliviousTransfer {
    fn send<L: Link>(&mut self, session: &mut Session<L>, batch: &OtBatch) -> Result<()>;

    /// Returns the chosen messages, concatenated.
    fn receive<L: Link>(&mut self, session: &mut Session<L>, choices: &[bool], width: usize) -> Result<Vec<u8>>;
}

impl<T: ObliviousTransfer + ?Sized> ObliviousTransfer for &mut T {
    fn send<L: Link>(&mut self, session: &mut Session<L>, batch: &OtBatch) -> Result<()> {
        (**self).send(session, batch)
    }
    fn receive<L: Link>(&mut self, session: &mut Session<L>, choices: &[bool], width: usize) -> Result<Vec<u8>> {
        (**self).receive(session, choices, width)
    }
}

/// Precomputed OT on dealer correlations.
///
/// The dealer hands the sender random pads `(r0, r1)` and the receiver a
/// random bit `c'` with `r_{c'}`. Online, the receiver publishes
/// `e = c xor c'` and the sender answers `(m0 xor r_e, m1 xor r_{1-e})`.
///
/// Both parties construct the provider from the same dealer seed and each
/// keeps only its own half of every correlation, simulating the dealer in
/// process.
pub struct DealerOt {
    stream: ChaCha20Rng,
}

impl DealerOt {
    pub fn new(dealer_seed: [u8; 32]) -> Self {
        DealerOt {
            stream: ChaCha20Rng::from_seed(dealer_seed),
        }
    }

    /// Draw `n` correlations: pads `r0 || r1` and the receiver's bit.
    fn correlations(&mut self, n: usize, width: usize) -> (Vec<u8>, Vec<u8>, Vec<bool>) {
        let mut r0 = vec![0u8; n * width];
        let mut r1 = vec![0u8; n * width];
        let mut bits = Vec::with_capacity(n);
        for j in 0..n {
            self.stream.fill_bytes(&mut r0[j * width..(j + 1) * width]);
            self.stream.fill_bytes(&mut r1[j * width..(j + 1) * width]);
            bits.push(self.stream.next_u32() & 1 == 1);
        }
        (r0, r1, bits)
    }
}

impl ObliviousTransfer for DealerOt {
    fn send<L: Link>(&mut self, session: &mut Session<L>, batch: &OtBatch) -> Result<()> {
        let (n, w) = (batch.len(), batch.width);
        let (r0, r1, _) = self.correlations(n, w);
        let flips = session.recv_exact(n)?;
        let mut out = Vec::with_capacity(2 * n * w);
        for (j, &e) in flips.iter().enumerate() {
            if e > 1 {
                return Err(Error::protocol("OT receiver sent a non-bit"));
            }
            let (pad0, pad1) = if e == 0 { (&r0, &r1) } else { (&r1, &r0) };
            let span = j * w..(j + 1) * w;
            out.extend(batch.m0[span.clone()].iter().zip(&pad0[span.clone()]).map(|(m, r)| m ^ r));
            out.extend(batch.m1[span.clone()].iter().zip(&pad1[span]).map(|(m, r)| m ^ r));
        }
        session.send_oneway(&out)
    }

    fn receive<L: Link>(&mut self, session: &mut Session<L>, choices: &[bool], width: usize) -> Result<Vec<u8>> {
        let n = choices.len();
        let (r0, r1, bits) = self.correlations(n, width);
        let flips: Vec<u8> = choices.iter().zip(&bits).map(|(&c, &b)| (c ^ b) as u8).collect();
        session.send_oneway(&flips)?;
        let reply = session.recv_exact(2 * n * width)?;
        let mut out = Vec::with_capacity(n * width);
        for (j, (&c, &b)) in choices.iter().zip(&bits).enumerate() {
            let base = 2 * j * width + if c { width } else { 0 };
            let pad = if b { &r1 } else { &r0 };
            out.extend(
                reply[base..base + width]
                    .iter()
                    .zip(&pad[j * width..(j + 1) * width])
                    .map(|(y, r)| y ^ r),
            );
        }
        Ok(out)
    }
}
