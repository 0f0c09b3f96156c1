//! Public-key oblivious transfer: the Chou-Orlandi protocol over the
//! Ristretto group.
//!
//! Per batch the sender publishes `A = aG`. For choice `c` the receiver
//! sends `B = bG + cA`. The sender derives pads `H(aB)` and `H(a(B - A))`;
//! the receiver knows exactly one of them, `H(bA)`. Three one-way flights
//! per batch.

use curve25519_dalek::constants::RISTRETTO_BASEPOINT_TABLE;
use curve25519_dalek::ristretto::{CompressedRistretto, RistrettoPoint};
use curve25519_dalek::scalar::Scalar;
use rand_chacha::ChaCha20Rng;
use rand_core::{RngCore, SeedableRng};
use sha2::{Digest, Sha256};

use secshare_core::ot::{ObliviousTransfer, OtBatch};
use secshare_core::transport::{Link, Session};
use secshare_core::{Error, Result};

const POINT: usize = 32;

#[derive(Debug, Default)]
pub struct ChouOrlandiOt {
    batches: u64,
}

impl ChouOrlandiOt {
    pub fn new() -> Self {
        Self::default()
    }
}

fn fresh_rng<L: Link>(session: &mut Session<L>) -> ChaCha20Rng {
    let mut seed = [0u8; 32];
    session.rng().fill_bytes(&mut seed);
    ChaCha20Rng::from_seed(seed)
}

fn decompress(bytes: &[u8]) -> Result<RistrettoPoint> {
    CompressedRistretto::from_slice(bytes)
        .ok()
        .and_then(|c| c.decompress())
        .ok_or_else(|| Error::Protocol("OT peer sent an invalid group element".into()))
}

/// `width` pad bytes from a shared point, domain-separated by batch, index
/// and the sender's key.
fn pad(batch: u64, index: usize, a: &RistrettoPoint, key: &RistrettoPoint, width: usize) -> Vec<u8> {
    let mut out = Vec::with_capacity(width);
    let mut block = 0u32;
    while out.len() < width {
        let mut h = Sha256::new();
        h.update(b"secshare/co-ot");
        h.update(batch.to_le_bytes());
        h.update((index as u64).to_le_bytes());
        h.update(block.to_le_bytes());
        h.update(a.compress().as_bytes());
        h.update(key.compress().as_bytes());
        out.extend_from_slice(&h.finalize());
        block += 1;
    }
    out.truncate(width);
    out
}

impl ObliviousTransfer for ChouOrlandiOt {
    fn send<L: Link>(&mut self, session: &mut Session<L>, batch: &OtBatch) -> Result<()> {
        let id = self.batches;
        self.batches += 1;
        let (n, w) = (batch.len(), batch.width);
        let mut rng = fresh_rng(session);
        let a = Scalar::random(&mut rng);
        let big_a = &a * RISTRETTO_BASEPOINT_TABLE;
        session.send_oneway(big_a.compress().as_bytes())?;
        let bs = session.recv_exact(n * POINT)?;
        let a_a = a * big_a;
        let mut out = Vec::with_capacity(2 * n * w);
        for j in 0..n {
            let b = decompress(&bs[j * POINT..(j + 1) * POINT])?;
            let k0 = a * b;
            let k1 = k0 - a_a;
            let span = j * w..(j + 1) * w;
            out.extend(batch.m0[span.clone()].iter().zip(pad(id, j, &big_a, &k0, w)).map(|(m, p)| m ^ p));
            out.extend(batch.m1[span].iter().zip(pad(id, j, &big_a, &k1, w)).map(|(m, p)| m ^ p));
        }
        session.send_oneway(&out)
    }

    fn receive<L: Link>(&mut self, session: &mut Session<L>, choices: &[bool], width: usize) -> Result<Vec<u8>> {
        let id = self.batches;
        self.batches += 1;
        let n = choices.len();
        let mut rng = fresh_rng(session);
        let big_a = decompress(&session.recv_exact(POINT)?)?;
        let mut secrets = Vec::with_capacity(n);
        let mut msg = Vec::with_capacity(n * POINT);
        for &c in choices {
            let b = Scalar::random(&mut rng);
            let mut big_b = &b * RISTRETTO_BASEPOINT_TABLE;
            if c {
                big_b += big_a;
            }
            msg.extend_from_slice(big_b.compress().as_bytes());
            secrets.push(b);
        }
        session.send_oneway(&msg)?;
        let reply = session.recv_exact(2 * n * width)?;
        let mut out = Vec::with_capacity(n * width);
        for (j, (&c, b)) in choices.iter().zip(&secrets).enumerate() {
            let key = b * big_a;
            let base = 2 * j * width + if c { width } else { 0 };
            out.extend(reply[base..base + width].iter().zip(pad(id, j, &big_a, &key, width)).map(|(y, p)| y ^ p));
        }
        Ok(out)
    }
}
