//! Two-party evaluation of the wrap bit of a pair of mask shares.
//!
//! Party `i` holds `m_i = MSB(r_i)` and `mh_i`, the parity-adjusted low bit
//! of its share of `r[0]`; `mh_0 ^ mh_1` is the MSB of `r`. The carry out
//! of `r_0 + r_1` is a fixed boolean function of these four bits. Both
//! providers below leave the result XOR-shared between the parties.

use alloc::format;
use alloc::vec::Vec;

use rand_chacha::ChaCha20Rng;
use rand_core::{RngCore, SeedableRng};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::ot::{ObliviousTransfer, OtBatch};
use crate::transport::{Link, PartyId, Session};

/// Truth table of the wrap function as a sum of products, index order
/// `(m0, m1, mh0, mh1)`.
pub fn wrap_function(m0: bool, m1: bool, mh0: bool, mh1: bool) -> bool {
    (m0 & mh0 & mh1) | (m1 & mh0 & mh1) | (m0 & !mh0 & !mh1) | (m1 & !mh0 & !mh1) | (m0 & m1)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum GateKind {
    Xor,
    And,
    /// `a & !b`
    AndNot,
    Or,
}

impl GateKind {
    fn eval(self, a: bool, b: bool) -> bool {
        match self {
            GateKind::Xor => a ^ b,
            GateKind::And => a & b,
            GateKind::AndNot => a & !b,
            GateKind::Or => a | b,
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct Gate {
    kind: GateKind,
    a: usize,
    b: usize,
}

/// Wires 0..4 are inputs `m0, mh0` (garbler) and `m1, mh1` (evaluator).
const INPUTS: usize = 4;
const GATES: [Gate; 5] = [
    // 4: m0 ^ m1
    Gate { kind: GateKind::Xor, a: 0, b: 2 },
    // 5: mh0 ^ mh1 = MSB(r)
    Gate { kind: GateKind::Xor, a: 1, b: 3 },
    // 6: (m0 ^ m1) & !MSB(r)
    Gate { kind: GateKind::AndNot, a: 4, b: 5 },
    // 7: m0 & m1
    Gate { kind: GateKind::And, a: 0, b: 2 },
    // 8: output
    Gate { kind: GateKind::Or, a: 6, b: 7 },
];
const WIRES: usize = INPUTS + GATES.len();
const OUT: usize = WIRES - 1;

/// Plain evaluation of the five-gate circuit.
pub fn wrap_circuit(m0: bool, m1: bool, mh0: bool, mh1: bool) -> bool {
    let mut w = [false; WIRES];
    w[0] = m0;
    w[1] = mh0;
    w[2] = m1;
    w[3] = mh1;
    for (g, gate) in GATES.iter().enumerate() {
        w[INPUTS + g] = gate.kind.eval(w[gate.a], w[gate.b]);
    }
    w[OUT]
}

type Label = [u8; 16];

const LABEL: usize = 16;
const TABLE_BYTES: usize = GATES.len() * 4 * LABEL;
/// Garbled tables, the garbler's two input labels, two output check tags.
const GARBLED_BYTES: usize = TABLE_BYTES + 2 * LABEL + 2 * LABEL;

#[inline]
fn color(l: &Label) -> usize {
    (l[0] & 1) as usize
}

fn gate_pad(instance: u64, gate: usize, a: &Label, b: &Label) -> Label {
    let mut h = Sha256::new();
    h.update(b"secshare/gc");
    h.update(instance.to_le_bytes());
    h.update([gate as u8]);
    h.update(a);
    h.update(b);
    let d = h.finalize();
    let mut out = [0u8; LABEL];
    out.copy_from_slice(&d[..LABEL]);
    out
}

fn tag(instance: u64, l: &Label) -> Label {
    let mut h = Sha256::new();
    h.update(b"secshare/gc-out");
    h.update(instance.to_le_bytes());
    h.update(l);
    let d = h.finalize();
    let mut out = [0u8; LABEL];
    out.copy_from_slice(&d[..LABEL]);
    out
}

fn xor(a: &Label, b: &Label) -> Label {
    let mut o = [0u8; LABEL];
    for i in 0..LABEL {
        o[i] = a[i] ^ b[i];
    }
    o
}

/// Garbler-side secrets of one circuit instance.
struct Garbling {
    /// `labels[w][v]` encodes value `v` on wire `w`.
    labels: [[Label; 2]; WIRES],
    blob: Vec<u8>,
}

fn garble<R: RngCore>(rng: &mut R, instance: u64, m0: bool, mh0: bool) -> Garbling {
    let mut labels = [[[0u8; LABEL]; 2]; WIRES];
    for w in labels.iter_mut() {
        rng.fill_bytes(&mut w[0]);
        rng.fill_bytes(&mut w[1]);
        // Point-and-permute: the two labels carry opposite colours.
        w[1][0] = (w[1][0] & !1) | (1 ^ (w[0][0] & 1));
    }
    let mut blob = Vec::with_capacity(GARBLED_BYTES);
    for (g, gate) in GATES.iter().enumerate() {
        let mut rows = [[0u8; LABEL]; 4];
        for va in 0..2 {
            for vb in 0..2 {
                let la = &labels[gate.a][va];
                let lb = &labels[gate.b][vb];
                let out = &labels[INPUTS + g][gate.kind.eval(va == 1, vb == 1) as usize];
                rows[2 * color(la) + color(lb)] = xor(&gate_pad(instance, g, la, lb), out);
            }
        }
        for row in rows.iter() {
            blob.extend_from_slice(row);
        }
    }
    blob.extend_from_slice(&labels[0][m0 as usize]);
    blob.extend_from_slice(&labels[1][mh0 as usize]);
    // Output check tags ordered by colour, so they reveal nothing about the
    // value a label stands for.
    let out = &labels[OUT];
    let (c0, c1) = if color(&out[0]) == 0 { (&out[0], &out[1]) } else { (&out[1], &out[0]) };
    blob.extend_from_slice(&tag(instance, c0));
    blob.extend_from_slice(&tag(instance, c1));
    Garbling { labels, blob }
}

/// Evaluates one garbled instance; returns the colour of the output label.
fn evaluate(instance: u64, blob: &[u8], m1_label: Label, mh1_label: Label) -> Result<bool> {
    let mut wires = [[0u8; LABEL]; WIRES];
    wires[0].copy_from_slice(&blob[TABLE_BYTES..TABLE_BYTES + LABEL]);
    wires[1].copy_from_slice(&blob[TABLE_BYTES + LABEL..TABLE_BYTES + 2 * LABEL]);
    wires[2] = m1_label;
    wires[3] = mh1_label;
    for (g, gate) in GATES.iter().enumerate() {
        let (la, lb) = (wires[gate.a], wires[gate.b]);
        let row = 2 * color(&la) + color(&lb);
        let off = (g * 4 + row) * LABEL;
        let mut ct = [0u8; LABEL];
        ct.copy_from_slice(&blob[off..off + LABEL]);
        wires[INPUTS + g] = xor(&ct, &gate_pad(instance, g, &la, &lb));
    }
    let out = &wires[OUT];
    let c = color(out);
    let off = TABLE_BYTES + 2 * LABEL + c * LABEL;
    if blob[off..off + LABEL] != tag(instance, out) {
        return Err(Error::protocol(format!("garbled circuit {instance} failed its output check")));
    }
    Ok(c == 1)
}

/// Secure evaluation of the wrap circuit on per-party input bits.
pub trait WrapEvaluator {
    /// `inputs[k] = (m_i, mh_i)` for instance `k`; returns this party's XOR
    /// shares of the wrap bits.
    fn eval_wrap<L: Link>(&mut self, session: &mut Session<L>, inputs: &[(bool, bool)]) -> Result<Vec<bool>>;
}

/// Yao's protocol with point-and-permute. Party 0 garbles, party 1 fetches
/// its input labels by OT and evaluates. The garbler keeps the permute bit
/// of the output wire as its share and the evaluator keeps the colour it
/// lands on, so the result is never opened.
pub struct GarbledWrap<O> {
    ot: O,
    instances: u64,
}

impl<O: ObliviousTransfer> GarbledWrap<O> {
    pub fn new(ot: O) -> Self {
        GarbledWrap { ot, instances: 0 }
    }

    pub fn ot_mut(&mut self) -> &mut O {
        &mut self.ot
    }
}

impl<O: ObliviousTransfer> WrapEvaluator for GarbledWrap<O> {
    fn eval_wrap<L: Link>(&mut self, session: &mut Session<L>, inputs: &[(bool, bool)]) -> Result<Vec<bool>> {
        let n = inputs.len();
        let base = self.instances;
        self.instances += n as u64;
        match session.party() {
            PartyId::P0 => {
                let mut rng = ChaCha20Rng::from_seed({
                    let mut s = [0u8; 32];
                    session.rng().fill_bytes(&mut s);
                    s
                });
                let mut payload = Vec::with_capacity(n * GARBLED_BYTES);
                let mut m0 = Vec::with_capacity(2 * n * LABEL);
                let mut m1 = Vec::with_capacity(2 * n * LABEL);
                let mut shares = Vec::with_capacity(n);
                for (k, &(msb, mh)) in inputs.iter().enumerate() {
                    let g = garble(&mut rng, base + k as u64, msb, mh);
                    payload.extend_from_slice(&g.blob);
                    for w in [2usize, 3] {
                        m0.extend_from_slice(&g.labels[w][0]);
                        m1.extend_from_slice(&g.labels[w][1]);
                    }
                    shares.push(color(&g.labels[OUT][0]) == 1);
                }
                session.send_oneway(&payload)?;
                self.ot.send(session, &OtBatch::new(LABEL, m0, m1)?)?;
                Ok(shares)
            }
            PartyId::P1 => {
                let blobs = session.recv_exact(n * GARBLED_BYTES)?;
                let choices: Vec<bool> = inputs.iter().flat_map(|&(a, b)| [a, b]).collect();
                let labels = self.ot.receive(session, &choices, LABEL)?;
                (0..n)
                    .map(|k| {
                        let mut l1 = [0u8; LABEL];
                        let mut l2 = [0u8; LABEL];
                        l1.copy_from_slice(&labels[2 * k * LABEL..(2 * k + 1) * LABEL]);
                        l2.copy_from_slice(&labels[(2 * k + 1) * LABEL..(2 * k + 2) * LABEL]);
                        evaluate(base + k as u64, &blobs[k * GARBLED_BYTES..(k + 1) * GARBLED_BYTES], l1, l2)
                    })
                    .collect()
            }
        }
    }
}

/// Dealer-assisted evaluation with one-time truth tables.
///
/// Per instance the dealer picks input masks `s_0, s_1` (two bits each) and
/// XOR-shares the table `T[u] = wrap(u ^ s)`. The parties swap their masked
/// inputs in one round and each reads its table share at the joint index.
pub struct DealerWrap {
    stream: ChaCha20Rng,
}

impl DealerWrap {
    pub fn new(dealer_seed: [u8; 32]) -> Self {
        DealerWrap {
            stream: ChaCha20Rng::from_seed(dealer_seed),
        }
    }
}

/// Table index in `(m0, m1, mh0, mh1)` order.
#[inline]
fn table_index(m0: bool, m1: bool, mh0: bool, mh1: bool) -> usize {
    (m0 as usize) << 3 | (m1 as usize) << 2 | (mh0 as usize) << 1 | mh1 as usize
}

impl WrapEvaluator for DealerWrap {
    fn eval_wrap<L: Link>(&mut self, session: &mut Session<L>, inputs: &[(bool, bool)]) -> Result<Vec<bool>> {
        let party = session.party();
        let mut masks = Vec::with_capacity(inputs.len());
        let mut tables = Vec::with_capacity(inputs.len());
        for _ in inputs {
            let draw = self.stream.next_u64();
            let s = (draw & 0xf) as usize;
            let share0 = (draw >> 4) as u16;
            let mut table = 0u16;
            for u in 0..16usize {
                let x = u ^ s;
                let v = wrap_function(x & 8 != 0, x & 4 != 0, x & 2 != 0, x & 1 != 0);
                table |= (v as u16) << u;
            }
            // Party 0's mask covers (m0, mh0), party 1's covers (m1, mh1).
            let own_mask = match party {
                PartyId::P0 => ((s >> 3) & 1, (s >> 1) & 1),
                PartyId::P1 => ((s >> 2) & 1, s & 1),
            };
            masks.push(own_mask);
            tables.push(match party {
                PartyId::P0 => share0,
                PartyId::P1 => share0 ^ table,
            });
        }
        let masked: Vec<u8> = inputs
            .iter()
            .zip(&masks)
            .map(|(&(m, mh), &(a, b))| ((m as usize ^ a) << 1 | (mh as usize ^ b)) as u8)
            .collect();
        let theirs = session.exchange_exact(&masked)?;
        inputs
            .iter()
            .enumerate()
            .map(|(k, _)| {
                let (own, other) = (masked[k] as usize, theirs[k] as usize);
                if other > 3 {
                    return Err(Error::protocol("masked wrap input out of range"));
                }
                let (p0, p1) = match party {
                    PartyId::P0 => (own, other),
                    PartyId::P1 => (other, own),
                };
                let idx = table_index(p0 >> 1 == 1, p1 >> 1 == 1, p0 & 1 == 1, p1 & 1 == 1);
                Ok((tables[k] >> idx) & 1 == 1)
            })
            .collect()
    }
}
