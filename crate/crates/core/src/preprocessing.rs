//! Input-independent correlations: comparison masks, Beaver triples over
//! Z_{2^64} and Z_p, and matrix triples.
//!
//! Masks can be generated interactively (OT for the bit shares, the wrap
//! circuit for alpha) or handed out by a trusted dealer. Triples always come
//! from a dealer. Protocols draw everything through the [`Correlations`]
//! trait so the source is interchangeable.

use alloc::collections::VecDeque;
use alloc::format;
use alloc::vec::Vec;

use rand_chacha::ChaCha20Rng;
use rand_core::{RngCore, SeedableRng};

use crate::error::{Error, Result};
use crate::gc::WrapEvaluator;
use crate::ot::{ObliviousTransfer, OtBatch};
use crate::ring::{CompareRing, PrimeField, PrimeShare, RingElement};
use crate::tensor::Matrix;
use crate::transport::{uniform_below, Link, PartyId, Phase, Session};

/// One party's share of the randomness consumed by a single comparison.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MaskRecord {
    /// Position in the stream this record came from; strictly increasing.
    pub serial: u64,
    /// Additive share of `r` in the comparison ring.
    pub r: u64,
    /// Shares of the bits of `r` over Z_p, MSB first, unreduced in `[0, p]`.
    pub bits: Vec<PrimeShare>,
    /// XOR share of `wrap(r_0, r_1)`.
    pub alpha: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Triple {
    pub x: RingElement,
    pub y: RingElement,
    pub z: RingElement,
}

/// Beaver triple over Z_p, shares reduced.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PrimeTriple {
    pub x: u8,
    pub y: u8,
    pub z: u8,
}

/// Shares of `U (m x n)`, `V (n x v)` and `Z = U V`.
#[derive(Clone, Debug, PartialEq)]
pub struct MatTriple {
    pub u: Matrix,
    pub v: Matrix,
    pub z: Matrix,
}

impl MatTriple {
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.u.rows(), self.u.cols(), self.v.cols())
    }
}

/// Party `i`'s share of `r` from its bit shares:
/// `sum_j 2^(bits-1-j) (r[j]_i - floor(p/2) - i)`.
pub fn mask_share_from_bits(bits: &[PrimeShare], party: PartyId, ring: CompareRing) -> u64 {
    let offset = i64::from(ring.half_prime()) + party.index() as i64;
    let n = ring.bits() as usize;
    let mut acc = 0u64;
    for (j, b) in bits.iter().enumerate() {
        let coeff = (i64::from(b.0) - offset) as u64;
        acc = acc.wrapping_add(coeff.wrapping_shl((n - 1 - j) as u32));
    }
    ring.reduce(acc)
}

/// OT-based generation of `count` masks without alpha: party 0 offers
/// `{p - a, p - a + 1}` in random order for every bit and keeps `a`; party
/// 1 takes one of the two at random. The shares then sum to `p + bit`.
///
/// Returns `(r share, bit shares)` per mask.
pub fn generate_masks<L: Link, O: ObliviousTransfer>(
    session: &mut Session<L>,
    ot: &mut O,
    count: usize,
    ring: CompareRing,
) -> Result<Vec<(u64, Vec<PrimeShare>)>> {
    let width = ring.bits() as usize;
    let p = ring.prime();
    let party = session.party();
    let total = count * width;
    let shares: Vec<u8> = match party {
        PartyId::P0 => {
            let mut own = Vec::with_capacity(total);
            let mut pairs = Vec::with_capacity(total);
            let rng = session.rng();
            for _ in 0..total {
                let a = 1 + uniform_below(rng, u64::from(p) - 1) as u8;
                let (lo, hi) = (p - a, p - a + 1);
                // The slot holding the +1 is forgotten right away.
                pairs.push(if rng.next_u32() & 1 == 0 { (lo, hi) } else { (hi, lo) });
                own.push(a);
            }
            ot.send(session, &OtBatch::from_byte_pairs(&pairs))?;
            own
        }
        PartyId::P1 => {
            let choices: Vec<bool> = {
                let rng = session.rng();
                (0..total).map(|_| rng.next_u32() & 1 == 1).collect()
            };
            let got = ot.receive(session, &choices, 1)?;
            for &b in &got {
                if b == 0 || b > p {
                    return Err(Error::protocol(format!("mask bit share {b} outside [1, {p}]")));
                }
            }
            got
        }
    };
    Ok(shares
        .chunks(width.max(1))
        .take(count)
        .map(|c| {
            let bits: Vec<PrimeShare> = c.iter().map(|&b| PrimeShare(b)).collect();
            (mask_share_from_bits(&bits, party, ring), bits)
        })
        .collect())
}

/// Shares of `wrap(r_0, r_1)` for each mask via the wrap circuit, fed with
/// `m_i = MSB(r_i)` and `mh_i = (r[0]_i + i) mod 2`.
pub fn get_wrapped<L: Link, G: WrapEvaluator>(
    session: &mut Session<L>,
    gc: &mut G,
    masks: &[(u64, Vec<PrimeShare>)],
    ring: CompareRing,
) -> Result<Vec<bool>> {
    let i = session.party().index() as u8;
    let inputs: Vec<(bool, bool)> = masks
        .iter()
        .map(|(r, bits)| (ring.msb(*r), (bits[0].0.wrapping_add(i)) % 2 == 1))
        .collect();
    gc.eval_wrap(session, &inputs)
}

/// A trusted dealer driven by a seed. Every call returns both parties'
/// shares; a party simulating the dealer in process keeps one side.
pub struct Dealer {
    rng: ChaCha20Rng,
    mask_serial: u64,
}

impl Dealer {
    pub fn new(seed: [u8; 32]) -> Self {
        Dealer {
            rng: ChaCha20Rng::from_seed(seed),
            mask_serial: 0,
        }
    }

    fn split(&mut self, v: RingElement) -> [RingElement; 2] {
        let s0 = RingElement(self.rng.next_u64());
        [s0, v - s0]
    }

    pub fn triples(&mut self, n: usize) -> [Vec<Triple>; 2] {
        let mut out = [Vec::with_capacity(n), Vec::with_capacity(n)];
        for _ in 0..n {
            let x = RingElement(self.rng.next_u64());
            let y = RingElement(self.rng.next_u64());
            let [x0, x1] = self.split(x);
            let [y0, y1] = self.split(y);
            let [z0, z1] = self.split(x * y);
            out[0].push(Triple { x: x0, y: y0, z: z0 });
            out[1].push(Triple { x: x1, y: y1, z: z1 });
        }
        out
    }

    pub fn prime_triples(&mut self, n: usize, field: PrimeField) -> [Vec<PrimeTriple>; 2] {
        let p = u64::from(field.modulus());
        let mut out = [Vec::with_capacity(n), Vec::with_capacity(n)];
        for _ in 0..n {
            let mut draw = || uniform_below(&mut self.rng, p) as u8;
            let (x, y) = (draw(), draw());
            let (x0, y0, z0) = (draw(), draw(), draw());
            let z = field.mul(x, y);
            out[0].push(PrimeTriple { x: x0, y: y0, z: z0 });
            out[1].push(PrimeTriple {
                x: field.sub(x, x0),
                y: field.sub(y, y0),
                z: field.sub(z, z0),
            });
        }
        out
    }

    fn random_matrix(&mut self, rows: usize, cols: usize) -> Matrix {
        Matrix::from_fn(rows, cols, |_, _| RingElement(self.rng.next_u64()))
    }

    pub fn mat_triple(&mut self, m: usize, n: usize, v: usize) -> [MatTriple; 2] {
        let u = self.random_matrix(m, n);
        let vv = self.random_matrix(n, v);
        let z = u.matmul(&vv).expect("shapes agree by construction");
        let u0 = self.random_matrix(m, n);
        let v0 = self.random_matrix(n, v);
        let z0 = self.random_matrix(m, v);
        let share1 = MatTriple {
            u: u.sub(&u0).expect("same shape"),
            v: vv.sub(&v0).expect("same shape"),
            z: z.sub(&z0).expect("same shape"),
        };
        [MatTriple { u: u0, v: v0, z: z0 }, share1]
    }

    /// Complete mask records with the same share structure the OT-based
    /// generator produces.
    pub fn masks(&mut self, n: usize, ring: CompareRing) -> [Vec<MaskRecord>; 2] {
        let p = ring.prime();
        let width = ring.bits() as usize;
        let mut out = [Vec::with_capacity(n), Vec::with_capacity(n)];
        for _ in 0..n {
            let mut b0 = Vec::with_capacity(width);
            let mut b1 = Vec::with_capacity(width);
            let mut word = self.rng.next_u64();
            for _ in 0..width {
                let bit = (word & 1) as u8;
                word >>= 1;
                let a = 1 + uniform_below(&mut self.rng, u64::from(p) - 1) as u8;
                b0.push(PrimeShare(a));
                b1.push(PrimeShare(p - a + bit));
            }
            let r0 = mask_share_from_bits(&b0, PartyId::P0, ring);
            let r1 = mask_share_from_bits(&b1, PartyId::P1, ring);
            let alpha = ring.wrap(r0, r1);
            let a0 = self.rng.next_u32() & 1 == 1;
            let serial = self.mask_serial;
            self.mask_serial += 1;
            out[0].push(MaskRecord { serial, r: r0, bits: b0, alpha: a0 });
            out[1].push(MaskRecord { serial, r: r1, bits: b1, alpha: a0 ^ alpha });
        }
        out
    }
}

/// A source of correlated randomness. `step` names the protocol step asking,
/// for underrun reports.
pub trait Correlations {
    fn triples<L: Link>(&mut self, session: &mut Session<L>, n: usize, step: &str) -> Result<Vec<Triple>>;

    fn prime_triples<L: Link>(
        &mut self,
        session: &mut Session<L>,
        n: usize,
        field: PrimeField,
        step: &str,
    ) -> Result<Vec<PrimeTriple>>;

    fn mat_triple<L: Link>(
        &mut self,
        session: &mut Session<L>,
        shape: (usize, usize, usize),
        step: &str,
    ) -> Result<MatTriple>;

    fn masks<L: Link>(&mut self, session: &mut Session<L>, n: usize, ring: CompareRing, step: &str) -> Result<Vec<MaskRecord>>;
}

/// Simulates the dealer inside each party: both run a [`Dealer`] from the
/// same seed in lock step and keep their own half.
pub struct DealerStream {
    dealer: Dealer,
    party: PartyId,
}

impl DealerStream {
    pub fn new(party: PartyId, dealer_seed: [u8; 32]) -> Self {
        DealerStream {
            dealer: Dealer::new(dealer_seed),
            party,
        }
    }

    fn take<T>(&self, pair: [T; 2]) -> T {
        let [a, b] = pair;
        match self.party {
            PartyId::P0 => a,
            PartyId::P1 => b,
        }
    }
}

impl Correlations for DealerStream {
    fn triples<L: Link>(&mut self, _: &mut Session<L>, n: usize, _: &str) -> Result<Vec<Triple>> {
        let pair = self.dealer.triples(n);
        Ok(self.take(pair))
    }

    fn prime_triples<L: Link>(&mut self, _: &mut Session<L>, n: usize, field: PrimeField, _: &str) -> Result<Vec<PrimeTriple>> {
        let pair = self.dealer.prime_triples(n, field);
        Ok(self.take(pair))
    }

    fn mat_triple<L: Link>(&mut self, _: &mut Session<L>, (m, n, v): (usize, usize, usize), _: &str) -> Result<MatTriple> {
        let pair = self.dealer.mat_triple(m, n, v);
        Ok(self.take(pair))
    }

    fn masks<L: Link>(&mut self, _: &mut Session<L>, n: usize, ring: CompareRing, _: &str) -> Result<Vec<MaskRecord>> {
        let pair = self.dealer.masks(n, ring);
        Ok(self.take(pair))
    }
}

/// Correlations loaded ahead of time and consumed strictly in FIFO order.
#[derive(Clone, Debug, Default)]
pub struct Pool {
    pub triples: VecDeque<Triple>,
    /// Prime triples together with the modulus they were drawn for.
    pub prime_triples: VecDeque<PrimeTriple>,
    pub prime: Option<u8>,
    pub mat_triples: VecDeque<MatTriple>,
    pub masks: VecDeque<MaskRecord>,
    /// Comparison parameters the masks were drawn for.
    pub mask_ring: Option<CompareRing>,
}

impl Pool {
    pub fn new() -> Self {
        Pool::default()
    }

    /// Fill a pair of pools from a dealer.
    pub fn from_dealer(dealer: &mut Dealer, plan: &PoolPlan) -> [Pool; 2] {
        let mut pools = [Pool::new(), Pool::new()];
        let [t0, t1] = dealer.triples(plan.triples);
        pools[0].triples.extend(t0);
        pools[1].triples.extend(t1);
        let [p0, p1] = dealer.prime_triples(plan.prime_triples, plan.ring.field());
        pools[0].prime_triples.extend(p0);
        pools[1].prime_triples.extend(p1);
        for &(m, n, v, count) in &plan.mat_triples {
            for _ in 0..count {
                let [a, b] = dealer.mat_triple(m, n, v);
                pools[0].mat_triples.push_back(a);
                pools[1].mat_triples.push_back(b);
            }
        }
        let [m0, m1] = dealer.masks(plan.masks, plan.ring);
        pools[0].masks.extend(m0);
        pools[1].masks.extend(m1);
        for p in pools.iter_mut() {
            p.prime = Some(plan.ring.prime());
            p.mask_ring = Some(plan.ring);
        }
        pools
    }

    fn drain<T>(q: &mut VecDeque<T>, n: usize, what: &str, step: &str) -> Result<Vec<T>> {
        if q.len() < n {
            return Err(Error::underrun(step, format!("needed {n} {what}, {} left", q.len())));
        }
        Ok(q.drain(..n).collect())
    }
}

/// How many correlations of each kind a dealer should emit.
#[derive(Clone, Debug)]
pub struct PoolPlan {
    pub ring: CompareRing,
    pub triples: usize,
    pub prime_triples: usize,
    pub masks: usize,
    /// `(m, n, v, count)`
    pub mat_triples: Vec<(usize, usize, usize, usize)>,
}

impl Correlations for Pool {
    fn triples<L: Link>(&mut self, _: &mut Session<L>, n: usize, step: &str) -> Result<Vec<Triple>> {
        Pool::drain(&mut self.triples, n, "triples", step)
    }

    fn prime_triples<L: Link>(&mut self, _: &mut Session<L>, n: usize, field: PrimeField, step: &str) -> Result<Vec<PrimeTriple>> {
        if n > 0 && self.prime.is_some_and(|p| p != field.modulus()) {
            return Err(Error::protocol(format!(
                "pooled prime triples are mod {}, step needs mod {}",
                self.prime.unwrap_or(0),
                field.modulus()
            )));
        }
        Pool::drain(&mut self.prime_triples, n, "prime triples", step)
    }

    fn mat_triple<L: Link>(&mut self, _: &mut Session<L>, shape: (usize, usize, usize), step: &str) -> Result<MatTriple> {
        let t = self
            .mat_triples
            .pop_front()
            .ok_or_else(|| Error::underrun(step, format!("no matrix triple left for shape {shape:?}")))?;
        if t.shape() != shape {
            return Err(Error::dimension(format!(
                "{step}: next pooled matrix triple has shape {:?}, needed {shape:?}",
                t.shape()
            )));
        }
        Ok(t)
    }

    fn masks<L: Link>(&mut self, _: &mut Session<L>, n: usize, ring: CompareRing, step: &str) -> Result<Vec<MaskRecord>> {
        if n > 0 && self.mask_ring.is_some_and(|r| r != ring) {
            return Err(Error::protocol("pooled masks were drawn for different comparison parameters"));
        }
        Pool::drain(&mut self.masks, n, "masks", step)
    }
}

/// Masks generated on demand with OT and the wrap circuit, charged to the
/// offline phase; triples come from the wrapped source.
pub struct InteractiveMasks<C, O, G> {
    inner: C,
    ot: O,
    gc: G,
    serial: u64,
}

impl<C, O, G> InteractiveMasks<C, O, G> {
    pub fn new(inner: C, ot: O, gc: G) -> Self {
        InteractiveMasks { inner, ot, gc, serial: 0 }
    }
}

impl<C: Correlations, O: ObliviousTransfer, G: WrapEvaluator> Correlations for InteractiveMasks<C, O, G> {
    fn triples<L: Link>(&mut self, s: &mut Session<L>, n: usize, step: &str) -> Result<Vec<Triple>> {
        self.inner.triples(s, n, step)
    }

    fn prime_triples<L: Link>(&mut self, s: &mut Session<L>, n: usize, field: PrimeField, step: &str) -> Result<Vec<PrimeTriple>> {
        self.inner.prime_triples(s, n, field, step)
    }

    fn mat_triple<L: Link>(&mut self, s: &mut Session<L>, shape: (usize, usize, usize), step: &str) -> Result<MatTriple> {
        self.inner.mat_triple(s, shape, step)
    }

    fn masks<L: Link>(&mut self, s: &mut Session<L>, n: usize, ring: CompareRing, _: &str) -> Result<Vec<MaskRecord>> {
        if n == 0 {
            return Ok(Vec::new());
        }
        let prev = s.set_phase(Phase::Offline);
        let result = generate_masks(s, &mut self.ot, n, ring)
            .and_then(|raw| get_wrapped(s, &mut self.gc, &raw, ring).map(|alpha| (raw, alpha)));
        s.set_phase(prev);
        let (raw, alpha) = result?;
        Ok(raw
            .into_iter()
            .zip(alpha)
            .map(|((r, bits), alpha)| {
                let serial = self.serial;
                self.serial += 1;
                MaskRecord { serial, r, bits, alpha }
            })
            .collect())
    }
}

impl<T: Correlations + ?Sized> Correlations for &mut T {
    fn triples<L: Link>(&mut self, s: &mut Session<L>, n: usize, step: &str) -> Result<Vec<Triple>> {
        (**self).triples(s, n, step)
    }
    fn prime_triples<L: Link>(&mut self, s: &mut Session<L>, n: usize, field: PrimeField, step: &str) -> Result<Vec<PrimeTriple>> {
        (**self).prime_triples(s, n, field, step)
    }
    fn mat_triple<L: Link>(&mut self, s: &mut Session<L>, shape: (usize, usize, usize), step: &str) -> Result<MatTriple> {
        (**self).mat_triple(s, shape, step)
    }
    fn masks<L: Link>(&mut self, s: &mut Session<L>, n: usize, ring: CompareRing, step: &str) -> Result<Vec<MaskRecord>> {
        (**self).masks(s, n, ring, step)
    }
}
