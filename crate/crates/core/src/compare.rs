//! Secure comparison and the bit-level tools built on it.
//!
//! [`compare_positive`] decides `a >= 0` for a shared `a` in four online
//! rounds: one to open `2a + r` and three for [`check_zero`], which tells
//! whether the shared `r` exceeds the opened value. Every function is
//! batched: `k` instances cost the same number of rounds as one.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::arith::mul_raw;
use crate::error::{Error, Result};
use crate::party::Party;
use crate::preprocessing::Correlations;
use crate::ring::{CompareRing, PrimeShare, RingElement};
use crate::tensor::Matrix;
use crate::transport::{fisher_yates, uniform_below, Link, PartyId};

/// Zero test over Z_p for `k` vectors of `ring.bits()` shared values each,
/// laid out back to back in `c` (shares reduced mod p).
///
/// Both parties permute each vector with the common seed, multiply the two
/// halves pairwise with Beaver triples, and then mask the products: party 0
/// by one nonzero `N` per vector, party 1 by a nonzero `M_j` per entry and a
/// private shuffle. Party 0 unmasks and learns whether any product vanished,
/// which happens exactly when some `c[j]` is zero. Party 1's output share is
/// always `false`.
pub fn check_zero<L: Link, C: Correlations>(party: &mut Party<L, C>, c: &[u8]) -> Result<Vec<bool>> {
    check_zero_observed(party, c, &mut |_| {})
}

/// [`check_zero`] that hands party 0's unmasked products to `observe`, in
/// the order received. Tests use it to inspect what party 0 learns.
pub(crate) fn check_zero_observed<L: Link, C: Correlations>(party: &mut Party<L, C>, c: &[u8], observe: &mut dyn FnMut(&[u8])) -> Result<Vec<bool>> {
    let width = party.ring.bits() as usize;
    let half = width / 2;
    let field = party.ring.field();
    let p = field.modulus();
    if !c.len().is_multiple_of(width) {
        return Err(Error::dimension(format!("{} zero-test inputs do not split into vectors of {width}", c.len())));
    }
    let k = c.len() / width;
    if k == 0 {
        return Ok(Vec::new());
    }
    let perms = party.session.shared_permutations(width, k)?;
    let triples = party.corr.prime_triples(&mut party.session, k * half, field, "check_zero")?;

    // Round 1: open e = a - x and f = b - y for every pair (a, b).
    let mut opening = Vec::with_capacity(2 * k * half);
    for (v, perm) in perms.iter().enumerate() {
        let row = &c[v * width..(v + 1) * width];
        for j in 0..half {
            let t = &triples[v * half + j];
            opening.push(field.sub(row[perm[j]], t.x));
            opening.push(field.sub(row[perm[j + half]], t.y));
        }
    }
    let theirs = party.session.exchange_exact(&opening)?;
    let i = party.id().index() as u8;
    let d: Vec<u8> = triples
        .iter()
        .enumerate()
        .map(|(n, t)| {
            let e = field.add(opening[2 * n], theirs[2 * n]);
            let f = field.add(opening[2 * n + 1], theirs[2 * n + 1]);
            let mut acc = field.add(field.mul(f, t.x), field.mul(e, t.y));
            acc = field.add(acc, t.z);
            if i == 1 {
                acc = field.add(acc, field.mul(e, f));
            }
            acc
        })
        .collect();

    match party.id() {
        PartyId::P0 => {
            // Round 2: d_0 * N to party 1.
            let rng = party.session.rng();
            let ns: Vec<u8> = (0..k).map(|_| 1 + uniform_below(rng, u64::from(p) - 1) as u8).collect();
            let masked: Vec<u8> = d.iter().enumerate().map(|(n, &v)| field.mul(v, ns[n / half])).collect();
            party.session.send_oneway(&masked)?;
            // Round 3: (d_0 N M_j, d_1 M_j) pairs back, shuffled.
            let back = party.session.recv_exact(2 * k * half)?;
            let opened: Vec<u8> = (0..k * half)
                .map(|n| field.add(back[2 * n], field.mul(back[2 * n + 1], ns[n / half])))
                .collect();
            observe(&opened);
            Ok(opened.chunks(half).map(|v| v.contains(&0)).collect())
        }
        PartyId::P1 => {
            let masked = party.session.recv_exact(k * half)?;
            let rng = party.session.rng();
            let mut reply = Vec::with_capacity(2 * k * half);
            for v in 0..k {
                let mut order: Vec<usize> = (0..half).collect();
                fisher_yates(&mut order, rng);
                for &j in &order {
                    let n = v * half + j;
                    let m = 1 + uniform_below(rng, u64::from(p) - 1) as u8;
                    reply.push(field.mul(field.reduce(u16::from(masked[n])), m));
                    reply.push(field.mul(d[n], m));
                }
            }
            party.session.send_oneway(&reply)?;
            Ok(vec![false; k])
        }
    }
}

fn element_bytes(ring: CompareRing) -> usize {
    (ring.bits() as usize).div_ceil(8)
}

/// This party's shares of `c[j] = 1 - r[j] + x[j] + sum_{k<j} (x[k] ^ r[k])`
/// over Z_p, MSB first, for public `x` and shared bits of `r`. Some `c[j]`
/// is zero exactly when `r > x`, at the first bit where they differ.
pub(crate) fn comparison_terms(ring: CompareRing, x: u64, r_bits: &[PrimeShare], party: usize, out: &mut Vec<u8>) {
    let field = ring.field();
    let mut prefix = 0u8;
    for (j, rb) in r_bits.iter().enumerate().take(ring.bits() as usize) {
        let xj = ring.bit(x, j);
        let rj = field.reduce(u16::from(rb.0));
        let mut cj = field.sub(prefix, rj);
        if party == 0 {
            cj = field.add(cj, 1 + xj as u8);
        }
        out.push(cj);
        let xor = if xj {
            field.sub(if party == 0 { 1 } else { 0 }, rj)
        } else {
            rj
        };
        prefix = field.add(prefix, xor);
    }
}

/// XOR shares of `[a >= 0]` (MSB clear) for shared `a` in the comparison
/// ring. The MSB of `a` is the XOR of the share MSBs and the carry out of
/// `2a_0 + 2a_1`; that carry is what the masked opening recovers, so every
/// value of the ring is handled.
pub fn compare_positive<L: Link, C: Correlations>(party: &mut Party<L, C>, a: &[u64]) -> Result<Vec<bool>> {
    let k = a.len();
    if k == 0 {
        return Ok(Vec::new());
    }
    let ring = party.ring;
    let width = ring.bits() as usize;
    let masks = party.take_masks(k, "compare")?;
    let i = party.id().index();
    let eb = element_bytes(ring);

    // Open x = 2a + r.
    let mut beta = Vec::with_capacity(k);
    let mut own_x = Vec::with_capacity(k);
    let mut payload = Vec::with_capacity(k * eb);
    for (&ai, m) in a.iter().zip(&masks) {
        let y = ring.add(ai, ai);
        let x = ring.add(y, m.r);
        beta.push(ring.wrap(y, m.r));
        own_x.push(x);
        payload.extend_from_slice(&x.to_le_bytes()[..eb]);
    }
    let theirs = party.session.exchange_exact(&payload)?;

    let mut c = Vec::with_capacity(k * width);
    let mut delta = Vec::with_capacity(k);
    for (n, m) in masks.iter().enumerate() {
        let mut buf = [0u8; 8];
        buf[..eb].copy_from_slice(&theirs[n * eb..(n + 1) * eb]);
        let other = u64::from_le_bytes(buf);
        if other & !ring.mask() != 0 {
            return Err(Error::protocol("opened comparison value exceeds the ring"));
        }
        let x = ring.add(own_x[n], other);
        // wrap(x_0, x_1) is visible to both: the sum fell below a summand.
        delta.push(x < own_x[n]);
        comparison_terms(ring, x, &m.bits, i, &mut c);
    }
    let eta = check_zero(party, &c)?;
    Ok((0..k)
        .map(|n| {
            let theta = beta[n] ^ (i == 1 && delta[n]) ^ eta[n] ^ masks[n].alpha;
            ring.msb(a[n]) ^ theta ^ (i == 0)
        })
        .collect())
}

/// [`compare_positive`] on 64-bit ring shares.
pub fn drelu_bits<L: Link, C: Correlations>(party: &mut Party<L, C>, a: &[RingElement]) -> Result<Vec<bool>> {
    if party.ring.bits() != 64 {
        return Err(Error::protocol("ring-element comparison needs the 64-bit comparison ring"));
    }
    let raw: Vec<u64> = a.iter().map(|e| e.0).collect();
    compare_positive(party, &raw)
}

/// Arithmetic shares of XOR-shared bits, via `u ^ v = u + v - 2uv`.
pub fn bit_to_arith<L: Link, C: Correlations>(party: &mut Party<L, C>, bits: &[bool]) -> Result<Vec<RingElement>> {
    let p0 = party.is_p0();
    let own: Vec<RingElement> = bits.iter().map(|&b| RingElement(b as u64)).collect();
    let zero = vec![RingElement::ZERO; bits.len()];
    let (u, v) = if p0 { (&own, &zero) } else { (&zero, &own) };
    let uv = mul_raw(party, u, v)?;
    Ok(own.iter().zip(uv).map(|(&b, w)| b - (w + w)).collect())
}

/// Arithmetic shares of `[a >= 0]`.
pub fn drelu<L: Link, C: Correlations>(party: &mut Party<L, C>, a: &[RingElement]) -> Result<Vec<RingElement>> {
    let bits = drelu_bits(party, a)?;
    bit_to_arith(party, &bits)
}

/// `max(x, 0)` elementwise, with the derivative bits kept for the backward
/// pass.
pub fn relu<L: Link, C: Correlations>(party: &mut Party<L, C>, x: &[RingElement]) -> Result<(Vec<RingElement>, Vec<RingElement>)> {
    let d = drelu(party, x)?;
    let y = mul_raw(party, x, &d)?;
    Ok((y, d))
}

/// Row-wise maximum of a shared matrix by a pairwise tournament. Ties go to
/// the earlier column. With `track_argmax` the one-hot position of the
/// maximum is returned too (shares of 0/1 integers).
pub fn max_tree<L: Link, C: Correlations>(
    party: &mut Party<L, C>,
    x: &Matrix,
    track_argmax: bool,
) -> Result<(Vec<RingElement>, Option<Matrix>)> {
    let (rows, cols) = x.shape();
    if cols == 0 {
        return Err(Error::dimension("max over an empty window"));
    }
    // Candidates per row: (value, one-hot).
    let one = party.constant(RingElement::ONE);
    let mut cand: Vec<Vec<(RingElement, Vec<RingElement>)>> = (0..rows)
        .map(|r| {
            (0..cols)
                .map(|c| {
                    let oh = if track_argmax {
                        let mut v = vec![RingElement::ZERO; cols];
                        v[c] = one;
                        v
                    } else {
                        Vec::new()
                    };
                    (x.get(r, c), oh)
                })
                .collect()
        })
        .collect();
    while cand[0].len() > 1 {
        let pairs = cand[0].len() / 2;
        let mut diffs = Vec::with_capacity(rows * pairs);
        for row in &cand {
            for q in 0..pairs {
                diffs.push(row[2 * q].0 - row[2 * q + 1].0);
            }
        }
        let d = drelu(party, &diffs)?;
        // One multiplication batch for values and one-hot vectors.
        let mut lhs = Vec::with_capacity(diffs.len() * (1 + cols));
        let mut rhs = Vec::with_capacity(lhs.capacity());
        for (row_idx, row) in cand.iter().enumerate() {
            for q in 0..pairs {
                let n = row_idx * pairs + q;
                lhs.push(d[n]);
                rhs.push(diffs[n]);
                if track_argmax {
                    let (a, b) = (&row[2 * q].1, &row[2 * q + 1].1);
                    for t in 0..cols {
                        lhs.push(d[n]);
                        rhs.push(a[t] - b[t]);
                    }
                }
            }
        }
        let prod = mul_raw(party, &lhs, &rhs)?;
        let stride = if track_argmax { 1 + cols } else { 1 };
        for (row_idx, row) in cand.iter_mut().enumerate() {
            let mut next = Vec::with_capacity(pairs + 1);
            for q in 0..pairs {
                let base = (row_idx * pairs + q) * stride;
                let b = &row[2 * q + 1];
                let value = b.0 + prod[base];
                let oh = if track_argmax {
                    b.1.iter().zip(&prod[base + 1..base + stride]).map(|(&o, &p)| o + p).collect()
                } else {
                    Vec::new()
                };
                next.push((value, oh));
            }
            if row.len() % 2 == 1 {
                next.push(row.pop().expect("odd row has a last element"));
            }
            *row = next;
        }
    }
    let values = cand.iter().map(|r| r[0].0).collect();
    let onehot = if track_argmax {
        let data = cand.into_iter().flat_map(|mut r| r.swap_remove(0).1).collect();
        Some(Matrix::from_vec(rows, cols, data)?)
    } else {
        None
    };
    Ok((values, onehot))
}

/// Plain reference for [`max_tree`] including the tie rule.
pub fn max_plain(row: &[i64]) -> (i64, usize) {
    let mut cand: Vec<(i64, usize)> = row.iter().copied().zip(0..).collect();
    while cand.len() > 1 {
        let mut next = Vec::with_capacity(cand.len() / 2 + 1);
        for q in 0..cand.len() / 2 {
            let (a, b) = (cand[2 * q], cand[2 * q + 1]);
            next.push(if a.0.wrapping_sub(b.0) >= 0 { a } else { b });
        }
        if cand.len() % 2 == 1 {
            next.push(cand[cand.len() - 1]);
        }
        cand = next;
    }
    cand[0]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::party::test_support::*;
    use crate::preprocessing::DealerStream;
    use crate::testing::run_owned;
    use crate::transport::Phase;
    use rand_chacha::ChaCha20Rng;
    use rand_core::{RngCore, SeedableRng};

    fn random_bit<R: RngCore>(rng: &mut R) -> bool {
        rng.next_u32() & 1 == 1
    }

    fn secure_signs(vals: Vec<RingElement>, seed: u64) -> Vec<bool> {
        let shares = share(&vals, seed);
        let (a, b) = run_parties(seed, move |p| {
            let mine = mine(p, &shares);
            drelu_bits(p, &mine).unwrap()
        });
        a.iter().zip(&b).map(|(x, y)| x ^ y).collect()
    }

    #[test]
    fn sign_examples() {
        let c = crate::FixedPointCodec::default();
        let vals = vec![c.encode(5.0).unwrap(), c.encode(-3.0).unwrap(), RingElement::ZERO];
        assert_eq!(secure_signs(vals, 1), vec![true, false, true]);
    }

    #[test]
    fn boundary_values() {
        let vals: Vec<RingElement> = [0i64, 1, -1, (1 << 62) - 1, -(1 << 62), 2, -2]
            .iter()
            .map(|&v| RingElement::from_i64(v))
            .collect();
        let want: Vec<bool> = vals.iter().map(|v| !v.msb()).collect();
        assert_eq!(secure_signs(vals, 2), want);
    }

    #[test]
    fn random_values_match_sign() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let vals: Vec<RingElement> = (0..2000).map(|_| RingElement(rng.next_u64())).collect();
        let want: Vec<bool> = vals.iter().map(|v| !v.msb()).collect();
        assert_eq!(secure_signs(vals, 3), want);
    }

    #[test]
    fn exhaustive_small_ring() {
        let ring = CompareRing::new(8, 11).unwrap();
        let (a, b) = run_owned(4, move |s| {
            let corr = DealerStream::new(s.party(), [7; 32]);
            let mut p = Party::new(s, corr).with_ring(ring);
            // Both sides derive the same split from the common stream.
            let mut split = ChaCha20Rng::seed_from_u64(99);
            let mut shares = Vec::new();
            let mut values = Vec::new();
            for v in 0..256u64 {
                for _ in 0..20 {
                    let s0 = split.next_u64() & 0xff;
                    values.push(v);
                    shares.push(if p.is_p0() { s0 } else { v.wrapping_sub(s0) & 0xff });
                }
            }
            (compare_positive(&mut p, &shares).unwrap(), values)
        });
        for ((x, y), v) in a.0.iter().zip(&b.0).zip(&a.1) {
            let want = v & 0x80 == 0;
            assert_eq!(x ^ y, want, "value {v}");
        }
    }

    #[test]
    fn comparison_costs_four_rounds_in_batch() {
        let (m, _) = run_parties(5, |p| {
            let before = p.session.metrics();
            let vals = vec![RingElement::from_i64(-7); 50];
            drelu_bits(p, &vals).unwrap();
            p.session.metrics().delta(&before)
        });
        assert_eq!(m.phase(Phase::Online).rounds, 4);
    }

    #[test]
    fn check_zero_cost_and_result() {
        for (zero_at, want) in [(None, false), (Some(17usize), true)] {
            let (a, b) = run_parties(6, move |p| {
                // Shares of a vector of ones, or of random nonzero values
                // with one zero.
                let f = p.ring.field();
                let mut split = ChaCha20Rng::seed_from_u64(11);
                let c: Vec<u8> = (0..64)
                    .map(|j| {
                        let v = match zero_at {
                            None => 1,
                            Some(z) if z == j => 0,
                            Some(_) => 1 + uniform_below(&mut split, 66) as u8,
                        };
                        let s0 = uniform_below(&mut split, 67) as u8;
                        if p.is_p0() { s0 } else { f.sub(v, s0) }
                    })
                    .collect();
                let before = p.session.metrics();
                let eta = check_zero(p, &c).unwrap();
                (eta[0], p.session.metrics().delta(&before))
            });
            assert_eq!(a.0 ^ b.0, want);
            assert!(!b.0);
            for m in [a.1, b.1] {
                assert_eq!(m.online.rounds, 3);
            }
            assert_eq!(a.1.online.bytes_sent + b.1.online.bytes_sent, 224);
        }
    }

    #[test]
    fn check_zero_matches_scan_oracle() {
        let (a, want) = run_parties(7, |p| {
            let f = p.ring.field();
            let mut split = ChaCha20Rng::seed_from_u64(12);
            let mut c = Vec::new();
            let mut want = Vec::new();
            for _ in 0..300 {
                let vals: Vec<u8> = (0..64).map(|_| if uniform_below(&mut split, 40) == 0 { 0 } else { 1 + uniform_below(&mut split, 66) as u8 }).collect();
                want.push(vals.contains(&0));
                for v in vals {
                    let s0 = uniform_below(&mut split, 67) as u8;
                    c.push(if p.is_p0() { s0 } else { f.sub(v, s0) });
                }
            }
            (check_zero(p, &c).unwrap(), want)
        });
        assert_eq!(a.0, a.1);
        assert_eq!(want.0.len(), 300);
    }

    /// Zeros among the reconstructed terms for public `x` and mask `r`.
    fn term_zeros(ring: CompareRing, x: u64, r: u64, a: &[u8]) -> Vec<usize> {
        let p = ring.prime();
        let width = ring.bits() as usize;
        let b0: Vec<PrimeShare> = a.iter().map(|&v| PrimeShare(v)).collect();
        let b1: Vec<PrimeShare> = (0..width).map(|j| PrimeShare(p - a[j] + ring.bit(r, j) as u8)).collect();
        let (mut c0, mut c1) = (Vec::new(), Vec::new());
        comparison_terms(ring, x, &b0, 0, &mut c0);
        comparison_terms(ring, x, &b1, 1, &mut c1);
        let f = ring.field();
        (0..width).filter(|&j| f.add(c0[j], c1[j]) == 0).collect()
    }

    fn first_difference(ring: CompareRing, x: u64, r: u64) -> usize {
        (0..ring.bits() as usize).find(|&j| ring.bit(x, j) != ring.bit(r, j)).unwrap()
    }

    #[test]
    fn terms_vanish_only_where_the_mask_first_exceeds() {
        let mut rng = ChaCha20Rng::seed_from_u64(31);
        let narrow = CompareRing::new(8, 11).unwrap();
        let mut pairs: Vec<(CompareRing, u64, u64)> = (0..256u64).flat_map(|x| (0..256u64).map(move |r| (narrow, x, r))).collect();
        let wide = CompareRing::new(16, 19).unwrap();
        pairs.extend((0..100_000).map(|_| (wide, rng.next_u64() & 0xffff, rng.next_u64() & 0xffff)));
        for (ring, x, r) in pairs {
            let a: Vec<u8> = (0..ring.bits()).map(|_| 1 + uniform_below(&mut rng, u64::from(ring.prime()) - 1) as u8).collect();
            let zeros = term_zeros(ring, x, r, &a);
            if r > x {
                assert_eq!(zeros, vec![first_difference(ring, x, r)], "x={x} r={r}");
            } else {
                assert!(zeros.is_empty(), "x={x} r={r}");
            }
        }
    }

    /// Pearson statistic of `counts` against a uniform expectation.
    fn chi_square(counts: &[u64]) -> f64 {
        let total: u64 = counts.iter().sum();
        let e = total as f64 / counts.len() as f64;
        counts.iter().map(|&c| (c as f64 - e).powi(2) / e).sum()
    }

    #[test]
    fn zero_test_leaks_only_the_answer() {
        let vectors = 2000;
        let (opened, _) = run_parties(32, move |p| {
            let f = p.ring.field();
            let mut split = ChaCha20Rng::seed_from_u64(33);
            // Odd vectors hold exactly one zero.
            let mut c = Vec::with_capacity(vectors * 64);
            for v in 0..vectors {
                let zero_at = (v % 2 == 1).then(|| uniform_below(&mut split, 64) as usize);
                for j in 0..64 {
                    let val = if zero_at == Some(j) { 0 } else { 1 + uniform_below(&mut split, 66) as u8 };
                    let s0 = uniform_below(&mut split, 67) as u8;
                    c.push(if p.is_p0() { s0 } else { f.sub(val, s0) });
                }
            }
            let mut seen = Vec::new();
            check_zero_observed(p, &c, &mut |o| seen.extend_from_slice(o)).unwrap();
            seen
        });
        assert_eq!(opened.len(), vectors * 32);
        let mut values = [0u64; 66];
        let mut positions = [0u64; 32];
        for (v, row) in opened.chunks(32).enumerate() {
            let zeros: Vec<usize> = (0..32).filter(|&j| row[j] == 0).collect();
            if v % 2 == 0 {
                assert!(zeros.is_empty(), "vector {v}");
            } else {
                assert_eq!(zeros.len(), 1, "vector {v}");
                positions[zeros[0]] += 1;
            }
            for &o in row.iter().filter(|&&o| o != 0) {
                values[o as usize - 1] += 1;
            }
        }
        // 99.99th percentiles: 65 degrees of freedom about 120, 31 about 70.
        assert!(chi_square(&values) < 120.0, "nonzero openings not uniform: {}", chi_square(&values));
        assert!(chi_square(&positions) < 70.0, "zero position not uniform: {}", chi_square(&positions));
    }

    #[test]
    fn bit_conversion_matches_xor() {
        let mut rng = ChaCha20Rng::seed_from_u64(8);
        let pairs: Vec<(bool, bool)> = (0..1000).map(|_| (random_bit(&mut rng), random_bit(&mut rng))).collect();
        let input = pairs.clone();
        let (a, b) = run_parties(8, move |p| {
            let mine: Vec<bool> = input.iter().map(|&(u, v)| if p.is_p0() { u } else { v }).collect();
            bit_to_arith(p, &mine).unwrap()
        });
        for ((x, y), (u, v)) in a.iter().zip(&b).zip(&pairs) {
            assert_eq!(*x + *y, RingElement((u ^ v) as u64));
        }
    }

    #[test]
    fn relu_examples() {
        let c = crate::FixedPointCodec::default();
        let vals: Vec<RingElement> = [-1.0, 2.0, 0.0, -0.5].iter().map(|&v| c.encode(v).unwrap()).collect();
        let shares = share(&vals, 9);
        let (a, b) = run_parties(9, move |p| relu(p, &mine(p, &shares)).unwrap().0);
        let got: Vec<f64> = a.iter().zip(&b).map(|(x, y)| c.decode(*x + *y)).collect();
        assert_eq!(got, vec![0.0, 2.0, 0.0, 0.0]);
    }

    #[test]
    fn max_tree_examples_and_ties() {
        let c = crate::FixedPointCodec::default();
        let rows: Vec<Vec<f64>> = vec![vec![1.0, 4.0, 2.0, 3.0], vec![2.0, 2.0, 2.0, 2.0], vec![-1.0, -3.0, 5.0, 0.5]];
        let flat: Vec<RingElement> = rows.iter().flatten().map(|&v| c.encode(v).unwrap()).collect();
        let shares = share(&flat, 10);
        let (a, b) = run_parties(10, move |p| {
            let m = Matrix::from_vec(3, 4, mine(p, &shares)).unwrap();
            let (v, oh) = max_tree(p, &m, true).unwrap();
            (v, oh.unwrap())
        });
        let maxes: Vec<f64> = a.0.iter().zip(&b.0).map(|(x, y)| c.decode(*x + *y)).collect();
        assert_eq!(maxes, vec![4.0, 2.0, 5.0]);
        let oh = a.1.add(&b.1).unwrap();
        for (r, pos) in [1usize, 0, 2].iter().enumerate() {
            for col in 0..4 {
                assert_eq!(oh.get(r, col), RingElement((col == *pos) as u64));
            }
        }
    }

    #[test]
    fn max_tree_matches_plain_on_random_windows() {
        let mut rng = ChaCha20Rng::seed_from_u64(11);
        let vals: Vec<i64> = (0..3 * 400).map(|_| (rng.next_u64() % 64) as i64 - 32).collect();
        let ring_vals: Vec<RingElement> = vals.iter().map(|&v| RingElement::from_i64(v)).collect();
        let shares = share(&ring_vals, 11);
        let (a, b) = run_parties(11, move |p| {
            let m = Matrix::from_vec(400, 3, mine(p, &shares)).unwrap();
            let (v, oh) = max_tree(p, &m, true).unwrap();
            (v, oh.unwrap())
        });
        let oh = a.1.add(&b.1).unwrap();
        for r in 0..400 {
            let (want, pos) = max_plain(&vals[3 * r..3 * r + 3]);
            assert_eq!((a.0[r] + b.0[r]).as_i64(), want);
            assert_eq!(oh.get(r, pos), RingElement::ONE);
        }
    }
}
