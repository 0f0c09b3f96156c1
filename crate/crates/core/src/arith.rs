//! Products, matrix products and the nonlinear functions built from them:
//! the exponent of a power of two, Newton division, piecewise-linear
//! exponential, softmax and sigmoid.
//!
//! Fixed-point variants truncate locally after each product. The [`plain`]
//! module evaluates the same pipelines on clear fixed-point values with
//! exact floor truncation; secure results match it up to the ±1 ulp slack
//! of every local truncation.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::compare::{bit_to_arith, drelu, drelu_bits, max_tree};
use crate::error::{Error, Result};
use crate::fixed::{truncate_share, FixedPointCodec};
use crate::party::{decode_elements, encode_elements, Party};
use crate::preprocessing::Correlations;
use crate::ring::RingElement;
use crate::tensor::Matrix;
use crate::transport::Link;

/// `round(2.9142 * 2^16)`, the linear initial guess of `1/c` on `(0.5, 1]`.
pub const NEWTON_SEED: RingElement = RingElement(190_985);

/// Elementwise Beaver products, exact in the ring.
pub fn mul_raw<L: Link, C: Correlations>(party: &mut Party<L, C>, a: &[RingElement], b: &[RingElement]) -> Result<Vec<RingElement>> {
    if a.len() != b.len() {
        return Err(Error::dimension(format!("cannot multiply {} by {} elements", a.len(), b.len())));
    }
    if a.is_empty() {
        return Ok(Vec::new());
    }
    let triples = party.corr.triples(&mut party.session, a.len(), "mul")?;
    let mut open = Vec::with_capacity(2 * a.len());
    for ((&x, &y), t) in a.iter().zip(b).zip(&triples) {
        open.push(x - t.x);
        open.push(y - t.y);
    }
    let theirs = decode_elements(&party.session.exchange_exact(&encode_elements(&open))?)?;
    let p1 = !party.is_p0();
    Ok(triples
        .iter()
        .enumerate()
        .map(|(n, t)| {
            let e = open[2 * n] + theirs[2 * n];
            let f = open[2 * n + 1] + theirs[2 * n + 1];
            let mut z = f * t.x + e * t.y + t.z;
            if p1 {
                z += e * f;
            }
            z
        })
        .collect())
}

/// Local truncation of every share by `k` bits.
pub fn truncate<L: Link, C: Correlations>(party: &Party<L, C>, x: &[RingElement], k: u32) -> Vec<RingElement> {
    let id = party.id();
    x.iter().map(|&v| truncate_share(v, id, k)).collect()
}

/// Fixed-point elementwise product.
pub fn mul_fixed<L: Link, C: Correlations>(party: &mut Party<L, C>, a: &[RingElement], b: &[RingElement]) -> Result<Vec<RingElement>> {
    let raw = mul_raw(party, a, b)?;
    let f = party.codec.frac_bits();
    Ok(truncate(party, &raw, f))
}

/// Matrix product with one matrix triple: open `E = A - U`, `F = B - V`,
/// then `C_i = i E F + U_i F + E V_i + Z_i`.
pub fn matmul_raw<L: Link, C: Correlations>(party: &mut Party<L, C>, a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols() != b.rows() {
        return Err(Error::dimension(format!("cannot multiply {:?} by {:?}", a.shape(), b.shape())));
    }
    let shape = (a.rows(), a.cols(), b.cols());
    let t = party.corr.mat_triple(&mut party.session, shape, "matmul")?;
    let e_own = a.sub(&t.u)?;
    let f_own = b.sub(&t.v)?;
    let mut payload = encode_elements(e_own.data());
    payload.extend_from_slice(&encode_elements(f_own.data()));
    let theirs = decode_elements(&party.session.exchange_exact(&payload)?)?;
    let (te, tf) = theirs.split_at(e_own.len());
    let e = e_own.add(&Matrix::from_vec(a.rows(), a.cols(), te.to_vec())?)?;
    let f = f_own.add(&Matrix::from_vec(b.rows(), b.cols(), tf.to_vec())?)?;
    let mut c = t.u.matmul(&f)?.add(&e.matmul(&t.v)?)?.add(&t.z)?;
    if !party.is_p0() {
        c = c.add(&e.matmul(&f)?)?;
    }
    Ok(c)
}

/// Fixed-point matrix product.
pub fn matmul_fixed<L: Link, C: Correlations>(party: &mut Party<L, C>, a: &Matrix, b: &Matrix) -> Result<Matrix> {
    let raw = matmul_raw(party, a, b)?;
    let (r, c) = raw.shape();
    let f = party.codec.frac_bits();
    Matrix::from_vec(r, c, truncate(party, raw.data(), f))
}

/// Compare every value against zero and open the result.
fn revealed_signs<L: Link, C: Correlations>(party: &mut Party<L, C>, v: &[RingElement]) -> Result<Vec<bool>> {
    if v.is_empty() {
        return Ok(Vec::new());
    }
    let bits = drelu_bits(party, v)?;
    party.reveal_bits(&bits)
}

/// Public exponents `alpha` with `2^(alpha-1) < b <= 2^alpha` on the raw
/// representation of each shared `b`. The exponent is opened by design.
///
/// With `t = floor(log2(b - 1))` for `b > 1` the answer is `t + 1`; `t` is
/// found bit by bit from the top, each step opening one comparison
/// `b - 1 - 2^(t + 2^i) >= 0`.
pub fn pow_alpha<L: Link, C: Correlations>(party: &mut Party<L, C>, b: &[RingElement]) -> Result<Vec<u32>> {
    let k = b.len();
    let one = party.constant(RingElement::ONE);
    let two = party.constant(RingElement(2));
    let mut probe = Vec::with_capacity(2 * k);
    for &v in b {
        probe.push(v - one);
        probe.push(v - two);
    }
    let signs = revealed_signs(party, &probe)?;
    if signs.chunks(2).any(|s| !s[0]) {
        return Err(Error::Domain("power-of-two exponent needs a positive argument".into()));
    }
    let above_one: Vec<bool> = signs.chunks(2).map(|s| s[1]).collect();
    let mut t = vec![0u32; k];
    for i in (0..6).rev() {
        let step = 1u32 << i;
        let active: Vec<usize> = (0..k).filter(|&n| above_one[n] && t[n] + step <= 62).collect();
        let probe: Vec<RingElement> = active
            .iter()
            .map(|&n| b[n] - one - party.constant(RingElement(1u64 << (t[n] + step))))
            .collect();
        let ge = revealed_signs(party, &probe)?;
        for (&n, &hit) in active.iter().zip(&ge) {
            if hit {
                t[n] += step;
            }
        }
    }
    Ok((0..k).map(|n| if above_one[n] { t[n] + 1 } else { 0 }).collect())
}

/// Shares of `1 / c` for `c` in `(0.5, 1]` by the Newton product
/// `w_0 (1 + e_0)(1 + e_1)(1 + e_2)` with `w_0 = 2.9142 - 2c`,
/// `e_0 = 1 - c w_0`, `e_{k+1} = e_k^2`.
fn newton_reciprocal<L: Link, C: Correlations>(party: &mut Party<L, C>, c: &[RingElement]) -> Result<Vec<RingElement>> {
    let one = party.constant(RingElement::ONE.shl(party.codec.frac_bits()));
    let seed = party.constant(NEWTON_SEED);
    let w0: Vec<RingElement> = c.iter().map(|&v| seed - v - v).collect();
    let cw = mul_fixed(party, c, &w0)?;
    let e0: Vec<RingElement> = cw.iter().map(|&v| one - v).collect();
    let k = c.len();
    let step = |party: &mut Party<L, C>, acc: &[RingElement], e: &[RingElement]| -> Result<(Vec<RingElement>, Vec<RingElement>)> {
        let mut lhs = acc.to_vec();
        lhs.extend_from_slice(e);
        let mut rhs: Vec<RingElement> = e.iter().map(|&v| one + v).collect();
        rhs.extend_from_slice(e);
        let prod = mul_fixed(party, &lhs, &rhs)?;
        let (next_acc, sq) = prod.split_at(k);
        Ok((next_acc.to_vec(), sq.to_vec()))
    };
    let (w1, e1) = step(party, &w0, &e0)?;
    let (w2, e2) = step(party, &w1, &e1)?;
    let factor: Vec<RingElement> = e2.iter().map(|&v| one + v).collect();
    mul_fixed(party, &w2, &factor)
}

/// Fixed-point `a / b` for `b > 0`.
///
/// `b` is normalised to `c = b 2^-alpha` in `(0.5, 1]` with the public
/// exponent, inverted by Newton's method, and the product `a (1/c)` is
/// rescaled by `2^-(alpha - f)` inside a single truncation.
pub fn divide<L: Link, C: Correlations>(party: &mut Party<L, C>, a: &[RingElement], b: &[RingElement]) -> Result<Vec<RingElement>> {
    if a.len() != b.len() {
        return Err(Error::dimension("numerator and denominator lengths differ"));
    }
    let alpha = pow_alpha(party, b)?;
    let f = party.codec.frac_bits();
    let id = party.id();
    let c: Vec<RingElement> = b
        .iter()
        .zip(&alpha)
        .map(|(&v, &al)| if al > f { truncate_share(v, id, al - f) } else { v.shl(f - al) })
        .collect();
    let w = newton_reciprocal(party, &c)?;
    let raw = mul_raw(party, a, &w)?;
    Ok(raw.iter().zip(&alpha).map(|(&v, &al)| truncate_share(v, id, al)).collect())
}

/// Fixed-point `1 / b` for `b > 0`.
pub fn reciprocal<L: Link, C: Correlations>(party: &mut Party<L, C>, b: &[RingElement]) -> Result<Vec<RingElement>> {
    let one = party.constant(RingElement::ONE.shl(party.codec.frac_bits()));
    divide(party, &vec![one; b.len()], b)
}

/// Knots, slope jumps, intercept jumps and the base value, encoded.
type EncodedTable = (Vec<RingElement>, Vec<RingElement>, Vec<RingElement>, RingElement);

/// Chord interpolation of `e^x` on `n` equal segments of `[x_lo, x_hi]`.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PwlTable {
    pub n: usize,
    pub x_lo: f64,
    pub x_hi: f64,
    pub knots: Vec<f64>,
    pub values: Vec<f64>,
    pub slopes: Vec<f64>,
}

impl PwlTable {
    pub fn exp(n: usize) -> Result<Self> {
        Self::exp_on(n, -10.0, 0.0)
    }

    pub fn exp_on(n: usize, x_lo: f64, x_hi: f64) -> Result<Self> {
        if n == 0 || x_lo.is_nan() || x_hi.is_nan() || x_lo >= x_hi {
            return Err(Error::Range(format!("bad segmentation: {n} segments on [{x_lo}, {x_hi}]")));
        }
        let h = (x_hi - x_lo) / n as f64;
        let knots: Vec<f64> = (0..=n).map(|j| x_lo + j as f64 * h).collect();
        let values: Vec<f64> = knots.iter().map(|&x| libm::exp(x)).collect();
        let slopes = (0..n).map(|j| (values[j + 1] - values[j]) / (knots[j + 1] - knots[j])).collect();
        Ok(PwlTable { n, x_lo, x_hi, knots, values, slopes })
    }

    fn check(&self) -> Result<()> {
        if self.n == 0 || self.knots.len() != self.n + 1 || self.values.len() != self.n + 1 || self.slopes.len() != self.n {
            return Err(Error::dimension("piecewise table arrays do not match its segment count"));
        }
        Ok(())
    }

    /// Encoded lines: knot offsets, and per knot the jump in slope and
    /// intercept relative to the line below. Below the first knot the
    /// function is the constant `values[0]`.
    fn encoded(&self, codec: &FixedPointCodec) -> Result<EncodedTable> {
        self.check()?;
        let mut knots = Vec::with_capacity(self.n);
        let mut dk = Vec::with_capacity(self.n);
        let mut di = Vec::with_capacity(self.n);
        let base = codec.encode(self.values[0])?;
        let (mut prev_k, mut prev_i) = (RingElement::ZERO, base);
        for j in 0..self.n {
            knots.push(codec.encode(self.knots[j])?);
            let k = codec.encode(self.slopes[j])?;
            let i = codec.encode(self.values[j] - self.slopes[j] * self.knots[j])?;
            dk.push(k - prev_k);
            di.push(i - prev_i);
            prev_k = k;
            prev_i = i;
        }
        Ok((knots, dk, di, base))
    }

    /// The table as a float function.
    pub fn eval(&self, x: f64) -> f64 {
        if x < self.knots[0] {
            return self.values[0];
        }
        let j = self.knots[..self.n].iter().rposition(|&k| x >= k).unwrap_or(0);
        self.values[j] + self.slopes[j] * (x - self.knots[j])
    }
}

/// Oblivious piecewise-linear evaluation. One batch of comparisons against
/// the knots yields arithmetic bits `b_j = [x >= x_j]`; since they are
/// monotone in `j`, the active line's slope and intercept are the
/// telescoping sums of `b_j` times public jumps, and one product finishes.
pub fn exp_pwl<L: Link, C: Correlations>(party: &mut Party<L, C>, x: &[RingElement], table: &PwlTable) -> Result<Vec<RingElement>> {
    let (knots, dk, di, base) = table.encoded(&party.codec)?;
    let n = table.n;
    let mut diffs = Vec::with_capacity(x.len() * n);
    for &v in x {
        for &kn in &knots {
            diffs.push(v - party.constant(kn));
        }
    }
    let bits = drelu(party, &diffs)?;
    let base = party.constant(base);
    let mut slope = Vec::with_capacity(x.len());
    let mut intercept = Vec::with_capacity(x.len());
    for row in bits.chunks(n.max(1)) {
        let mut s = RingElement::ZERO;
        let mut i = base;
        for (j, &b) in row.iter().enumerate() {
            s += b * dk[j];
            i += b * di[j];
        }
        slope.push(s);
        intercept.push(i);
    }
    let sx = mul_fixed(party, &slope, x)?;
    Ok(sx.iter().zip(&intercept).map(|(&a, &b)| a + b).collect())
}

/// Row-wise softmax of a shared logit matrix.
pub fn softmax<L: Link, C: Correlations>(party: &mut Party<L, C>, u: &Matrix, table: &PwlTable) -> Result<Matrix> {
    let (rows, cols) = u.shape();
    if cols < 2 {
        return Err(Error::dimension("softmax needs at least two classes"));
    }
    let (max, _) = max_tree(party, u, false)?;
    let shifted: Vec<RingElement> = (0..rows).flat_map(|r| (0..cols).map(move |c| (r, c))).map(|(r, c)| u.get(r, c) - max[r]).collect();
    let e = exp_pwl(party, &shifted, table)?;
    let sums: Vec<RingElement> = e.chunks(cols).map(|row| row.iter().copied().sum()).collect();
    let inv = reciprocal(party, &sums)?;
    let spread: Vec<RingElement> = (0..rows * cols).map(|n| inv[n / cols]).collect();
    Matrix::from_vec(rows, cols, mul_fixed(party, &e, &spread)?)
}

/// Logistic function as `1 / (1 + e^-|x|)` mirrored for negative inputs.
pub fn sigmoid<L: Link, C: Correlations>(party: &mut Party<L, C>, x: &[RingElement], table: &PwlTable) -> Result<Vec<RingElement>> {
    let d = drelu(party, x)?;
    let one_int = party.constant(RingElement::ONE);
    let sign: Vec<RingElement> = d.iter().map(|&b| b + b - one_int).collect();
    let abs = mul_raw(party, x, &sign)?;
    let neg: Vec<RingElement> = abs.iter().map(|&v| -v).collect();
    let e = exp_pwl(party, &neg, table)?;
    let one = party.constant(RingElement::ONE.shl(party.codec.frac_bits()));
    let denom: Vec<RingElement> = e.iter().map(|&v| one + v).collect();
    let s = reciprocal(party, &denom)?;
    let twice: Vec<RingElement> = s.iter().map(|&v| v + v - one).collect();
    let ds = mul_raw(party, &d, &twice)?;
    Ok(s.iter().zip(&ds).map(|(&sv, &dv)| one - sv + dv).collect())
}

/// Convert XOR-shared comparison bits to fixed-point 0/1 values.
pub fn bits_to_fixed<L: Link, C: Correlations>(party: &mut Party<L, C>, bits: &[bool]) -> Result<Vec<RingElement>> {
    let f = party.codec.frac_bits();
    Ok(bit_to_arith(party, bits)?.into_iter().map(|b| b.shl(f)).collect())
}

/// Clear-value mirrors of the protocols above, truncating by exact floor.
pub mod plain {
    use super::*;
    use crate::fixed::truncate_plain;

    pub fn mul_fixed(a: RingElement, b: RingElement, f: u32) -> RingElement {
        truncate_plain(a * b, f)
    }

    pub fn matmul_fixed(a: &Matrix, b: &Matrix, f: u32) -> Result<Matrix> {
        Ok(a.matmul(b)?.map(|v| truncate_plain(v, f)))
    }

    #[inline]
    pub fn nonneg(v: RingElement) -> bool {
        !v.msb()
    }

    pub fn pow_alpha(b: RingElement) -> Result<u32> {
        let v = b.as_i64();
        if v < 1 {
            return Err(Error::Domain("power-of-two exponent needs a positive argument".into()));
        }
        if v == 1 {
            return Ok(0);
        }
        Ok(64 - ((v - 1) as u64).leading_zeros())
    }

    fn newton_reciprocal(c: RingElement, f: u32) -> RingElement {
        let one = RingElement::ONE.shl(f);
        let w0 = NEWTON_SEED - c - c;
        let e0 = one - mul_fixed(c, w0, f);
        let w1 = mul_fixed(w0, one + e0, f);
        let e1 = mul_fixed(e0, e0, f);
        let w2 = mul_fixed(w1, one + e1, f);
        let e2 = mul_fixed(e1, e1, f);
        mul_fixed(w2, one + e2, f)
    }

    pub fn divide(a: RingElement, b: RingElement, f: u32) -> Result<RingElement> {
        let al = pow_alpha(b)?;
        let c = if al > f { truncate_plain(b, al - f) } else { b.shl(f - al) };
        let w = newton_reciprocal(c, f);
        Ok(truncate_plain(a * w, al))
    }

    pub fn reciprocal(b: RingElement, f: u32) -> Result<RingElement> {
        divide(RingElement::ONE.shl(f), b, f)
    }

    pub fn exp_pwl(x: RingElement, table: &PwlTable, codec: &FixedPointCodec) -> Result<RingElement> {
        let (knots, dk, di, base) = table.encoded(codec)?;
        let mut s = RingElement::ZERO;
        let mut i = base;
        for j in 0..table.n {
            if nonneg(x - knots[j]) {
                s += dk[j];
                i += di[j];
            }
        }
        Ok(mul_fixed(s, x, codec.frac_bits()) + i)
    }

    pub fn max_row(row: &[RingElement]) -> (RingElement, usize) {
        let mut cand: Vec<(RingElement, usize)> = row.iter().copied().zip(0..).collect();
        while cand.len() > 1 {
            let mut next = Vec::with_capacity(cand.len() / 2 + 1);
            for q in 0..cand.len() / 2 {
                let (a, b) = (cand[2 * q], cand[2 * q + 1]);
                next.push(if nonneg(a.0 - b.0) { a } else { b });
            }
            if cand.len() % 2 == 1 {
                next.push(cand[cand.len() - 1]);
            }
            cand = next;
        }
        cand[0]
    }

    pub fn softmax(u: &Matrix, table: &PwlTable, codec: &FixedPointCodec) -> Result<Matrix> {
        let f = codec.frac_bits();
        let (rows, cols) = u.shape();
        let mut out = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            let (m, _) = max_row(u.row(r));
            let e: Vec<RingElement> = u.row(r).iter().map(|&v| exp_pwl(v - m, table, codec)).collect::<Result<_>>()?;
            let inv = reciprocal(e.iter().copied().sum(), f)?;
            out.extend(e.iter().map(|&v| mul_fixed(v, inv, f)));
        }
        Matrix::from_vec(rows, cols, out)
    }

    pub fn sigmoid(x: RingElement, table: &PwlTable, codec: &FixedPointCodec) -> Result<RingElement> {
        let f = codec.frac_bits();
        let one = RingElement::ONE.shl(f);
        let pos = nonneg(x);
        let abs = if pos { x } else { -x };
        let s = reciprocal(one + exp_pwl(-abs, table, codec)?, f)?;
        Ok(if pos { s } else { one - s })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::party::test_support::*;
    use crate::transport::Phase;
    use rand_chacha::ChaCha20Rng;
    use rand_core::{RngCore, SeedableRng};

    fn codec() -> FixedPointCodec {
        FixedPointCodec::default()
    }

    fn enc(v: &[f64]) -> Vec<RingElement> {
        v.iter().map(|&x| codec().encode(x).unwrap()).collect()
    }

    fn open(a: &[RingElement], b: &[RingElement]) -> Vec<RingElement> {
        a.iter().zip(b).map(|(&x, &y)| x + y).collect()
    }

    #[test]
    fn mul_examples_and_random() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let mut xs = vec![RingElement(3), RingElement(123)];
        let mut ys = vec![RingElement(4), RingElement::ZERO];
        for _ in 0..2000 {
            xs.push(RingElement(rng.next_u64()));
            ys.push(RingElement(rng.next_u64()));
        }
        let want: Vec<RingElement> = xs.iter().zip(&ys).map(|(&a, &b)| a * b).collect();
        let (sx, sy) = (share(&xs, 2), share(&ys, 3));
        let (a, b) = run_parties(1, move |p| {
            let before = p.session.metrics();
            let out = mul_raw(p, &mine(p, &sx), &mine(p, &sy)).unwrap();
            (out, p.session.metrics().delta(&before).phase(Phase::Online).rounds)
        });
        assert_eq!(open(&a.0, &b.0), want);
        assert_eq!(a.1, 1);
    }

    #[test]
    fn matmul_identity_zero_and_oracle() {
        let c = codec();
        let id = Matrix::from_fn(2, 2, |i, j| if i == j { c.encode(1.0).unwrap() } else { RingElement::ZERO });
        let bm = Matrix::from_vec(2, 3, enc(&[1.5, -2.0, 0.25, 3.0, 0.0, -1.0])).unwrap();
        let a23 = Matrix::from_vec(2, 3, enc(&[0.5, -1.25, 2.0, 1.0, 0.75, -0.5])).unwrap();
        let b32 = Matrix::from_vec(3, 2, enc(&[1.0, 2.0, -0.5, 0.25, 3.0, -1.5])).unwrap();
        let cases = vec![(id.clone(), bm.clone()), (Matrix::zeros(2, 2), bm.clone()), (a23.clone(), b32.clone())];
        for (n, (x, y)) in cases.into_iter().enumerate() {
            let want = plain::matmul_fixed(&x, &y, 16).unwrap();
            let (sx, sy) = (share(x.data(), 10 + n as u64), share(y.data(), 20 + n as u64));
            let (xs, ys) = (x.shape(), y.shape());
            let (a, b) = run_parties(n as u64, move |p| {
                let mx = Matrix::from_vec(xs.0, xs.1, mine(p, &sx)).unwrap();
                let my = Matrix::from_vec(ys.0, ys.1, mine(p, &sy)).unwrap();
                matmul_fixed(p, &mx, &my).unwrap()
            });
            let got = a.add(&b).unwrap();
            for (g, w) in got.data().iter().zip(want.data()) {
                assert!((g.as_i64() - w.as_i64()).abs() <= 1, "{g:?} vs {w:?}");
            }
        }
    }

    #[test]
    fn matmul_is_one_round() {
        let (m, _) = run_parties(3, |p| {
            let a = Matrix::zeros(8, 8);
            let before = p.session.metrics();
            matmul_raw(p, &a, &a).unwrap();
            p.session.metrics().delta(&before)
        });
        assert_eq!(m.online.rounds, 1);
    }

    #[test]
    fn fixed_point_chain_tracks_oracle() {
        // Five chained products; every truncation may add one ulp.
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        let vals: Vec<f64> = (0..600).map(|_| 0.5 + (rng.next_u32() % 500) as f64 / 1000.0).collect();
        let x = enc(&vals);
        let mut want = x.clone();
        for _ in 0..5 {
            want = want.iter().zip(&x).map(|(&a, &b)| plain::mul_fixed(a, b, 16)).collect();
        }
        let sx = share(&x, 5);
        let (a, b) = run_parties(4, move |p| {
            let x = mine(p, &sx);
            let mut acc = x.clone();
            for _ in 0..5 {
                acc = mul_fixed(p, &acc, &x).unwrap();
            }
            acc
        });
        for (g, w) in open(&a, &b).iter().zip(&want) {
            assert!((g.as_i64() - w.as_i64()).abs() <= 5);
        }
    }

    fn secure_pow(vals: Vec<RingElement>) -> Result<Vec<u32>> {
        let sx = share(&vals, 6);
        let (a, _) = run_parties(6, move |p| pow_alpha(p, &mine(p, &sx)));
        a
    }

    #[test]
    fn pow_alpha_examples() {
        let vals = vec![RingElement(196_608), RingElement(65_536), RingElement(1), RingElement(2), RingElement(3), RingElement((1 << 62) - 1)];
        let got = secure_pow(vals.clone()).unwrap();
        assert_eq!(got, vec![18, 16, 0, 1, 2, 62]);
        for (v, al) in vals.iter().zip(&got) {
            assert_eq!(plain::pow_alpha(*v).unwrap(), *al);
        }
    }

    #[test]
    fn pow_alpha_random_bracket() {
        let mut rng = ChaCha20Rng::seed_from_u64(7);
        let vals: Vec<RingElement> = (0..300).map(|_| RingElement(1 + (rng.next_u64() >> (2 + rng.next_u32() % 60)))).collect();
        let got = secure_pow(vals.clone()).unwrap();
        for (v, &al) in vals.iter().zip(&got) {
            let v = v.0 as u128;
            assert!(v <= 1u128 << al && (al == 0 || v > 1u128 << (al - 1)), "{v} -> {al}");
        }
    }

    #[test]
    fn pow_alpha_rejects_nonpositive() {
        assert!(matches!(secure_pow(vec![RingElement(5), RingElement::ZERO]), Err(Error::Domain(_))));
        assert!(matches!(secure_pow(vec![RingElement::from_i64(-3)]), Err(Error::Domain(_))));
    }

    #[test]
    fn divide_examples() {
        let c = codec();
        let num = enc(&[1.0, 0.0, 3.7, -2.5, 100.0]);
        let den = enc(&[2.0, 3.0, 1.0, 0.125, 7.0]);
        let want = [0.5, 0.0, 3.7, -20.0, 100.0 / 7.0];
        let (sa, sb) = (share(&num, 8), share(&den, 9));
        let (a, b) = run_parties(8, move |p| divide(p, &mine(p, &sa), &mine(p, &sb)).unwrap());
        for (g, w) in open(&a, &b).iter().zip(want) {
            let g = c.decode(*g);
            if w == 0.0 {
                assert!(g.abs() <= c.ulp());
            } else {
                assert!(((g - w) / w).abs() <= 1.0 / 1024.0, "{g} vs {w}");
            }
        }
    }

    #[test]
    fn divide_matches_plain_mirror() {
        let mut rng = ChaCha20Rng::seed_from_u64(10);
        let num: Vec<RingElement> = (0..200).map(|_| RingElement(rng.next_u64() % (1 << 24))).collect();
        let den: Vec<RingElement> = (0..200).map(|_| RingElement(1 + rng.next_u64() % (1 << 22))).collect();
        let want: Vec<RingElement> = num.iter().zip(&den).map(|(&a, &b)| plain::divide(a, b, 16).unwrap()).collect();
        let (sa, sb) = (share(&num, 11), share(&den, 12));
        let (a, b) = run_parties(10, move |p| divide(p, &mine(p, &sa), &mine(p, &sb)).unwrap());
        for (g, w) in open(&a, &b).iter().zip(&want) {
            // Truncation slack compounds through the Newton chain.
            let tol = 8 + (w.as_i64().abs() >> 12);
            assert!((g.as_i64() - w.as_i64()).abs() <= tol, "{g:?} vs {w:?}");
        }
    }

    #[test]
    fn pwl_table_shape() {
        let t = PwlTable::exp(16).unwrap();
        assert_eq!(t.knots.len(), 17);
        assert_eq!(t.knots[0], -10.0);
        assert_eq!(t.knots[16], 0.0);
        assert!(t.values.windows(2).all(|w| w[0] < w[1]));
        for j in 0..16 {
            let k = (t.values[j + 1] - t.values[j]) / (t.knots[j + 1] - t.knots[j]);
            assert!((t.slopes[j] - k).abs() < 1e-15);
        }
        // Chord midpoint of the top segment.
        let mid = t.eval(-0.3125);
        assert!((mid - (1.0 + libm::exp(-0.625)) / 2.0).abs() < 1e-12);
        assert!((mid - libm::exp(-0.3125)).abs() < 0.037);
    }

    #[test]
    fn exp_knots_and_clamp() {
        let c = codec();
        let t = PwlTable::exp(16).unwrap();
        let xs = enc(&[0.0, -10.0, -0.3125, -25.0, -4.1]);
        let want: Vec<RingElement> = xs.iter().map(|&x| plain::exp_pwl(x, &t, &c).unwrap()).collect();
        let sx = share(&xs, 13);
        let table = t.clone();
        let (a, b) = run_parties(13, move |p| exp_pwl(p, &mine(p, &sx), &table).unwrap());
        let got = open(&a, &b);
        assert!((got[0].as_i64() - 65536).abs() <= 1);
        assert!((c.decode(got[1]) - libm::exp(-10.0)).abs() <= 2.0 * c.ulp());
        assert!((c.decode(got[2]) - 0.7676).abs() < 1e-3);
        assert!((c.decode(got[3]) - libm::exp(-10.0)).abs() <= 2.0 * c.ulp());
        for (g, w) in got.iter().zip(&want) {
            assert!((g.as_i64() - w.as_i64()).abs() <= 1);
        }
    }

    #[test]
    fn softmax_examples() {
        let c = codec();
        let t = PwlTable::exp(16).unwrap();
        let logits = Matrix::from_vec(3, 2, enc(&[5.0, -5.0, 1.0, 1.0, -2.0, 3.0])).unwrap();
        let want = plain::softmax(&logits, &t, &c).unwrap();
        let sx = share(logits.data(), 14);
        let table = t.clone();
        let (a, b) = run_parties(14, move |p| {
            let m = Matrix::from_vec(3, 2, mine(p, &sx)).unwrap();
            softmax(p, &m, &table).unwrap()
        });
        let got = a.add(&b).unwrap();
        let row0 = [c.decode(got.get(0, 0)), c.decode(got.get(0, 1))];
        assert!((row0[0] - 1.0).abs() < 1e-3 && row0[1].abs() < 1e-3, "{row0:?}");
        assert!((c.decode(got.get(1, 0)) - 0.5).abs() < 1.0 / 256.0);
        assert!(got.get(2, 1).as_i64() > got.get(2, 0).as_i64());
        for (g, w) in got.data().iter().zip(want.data()) {
            assert!((g.as_i64() - w.as_i64()).abs() <= 8);
        }
    }

    #[test]
    fn uniform_softmax_over_ten_classes() {
        let c = codec();
        let t = PwlTable::exp(16).unwrap();
        let logits = Matrix::from_vec(1, 10, enc(&[0.7; 10])).unwrap();
        let sx = share(logits.data(), 15);
        let (a, b) = run_parties(15, move |p| {
            let m = Matrix::from_vec(1, 10, mine(p, &sx)).unwrap();
            softmax(p, &m, &t).unwrap()
        });
        for v in a.add(&b).unwrap().data() {
            assert!((c.decode(*v) - 0.1).abs() < 1.0 / 256.0);
        }
    }

    #[test]
    fn random_softmax_rows_are_distributions() {
        let c = codec();
        let (rows, cols) = (1000, 10);
        let mut rng = ChaCha20Rng::seed_from_u64(17);
        let vals: Vec<f64> = (0..rows * cols).map(|_| (rng.next_u32() % 16001) as f64 / 1000.0 - 8.0).collect();
        let sx = share(&enc(&vals), 17);
        let (a, b) = run_parties(17, move |p| {
            let m = Matrix::from_vec(rows, cols, mine(p, &sx)).unwrap();
            softmax(p, &m, &PwlTable::exp(16).unwrap()).unwrap()
        });
        let got = a.add(&b).unwrap();
        for r in 0..rows {
            let row: Vec<f64> = got.row(r).iter().map(|&v| c.decode(v)).collect();
            assert!(row.iter().all(|&v| v >= 0.0), "row {r}: {row:?}");
            let sum: f64 = row.iter().sum();
            assert!((sum - 1.0).abs() <= cols as f64 / 1024.0, "row {r} sums to {sum}");
        }
    }

    #[test]
    fn sigmoid_examples() {
        let c = codec();
        let t = PwlTable::exp(16).unwrap();
        let xs = enc(&[0.0, 10.0, -10.0, 1.5, -1.5]);
        let sx = share(&xs, 16);
        let table = t.clone();
        let (a, b) = run_parties(16, move |p| sigmoid(p, &mine(p, &sx), &table).unwrap());
        let got: Vec<f64> = open(&a, &b).iter().map(|&v| c.decode(v)).collect();
        assert!((got[0] - 0.5).abs() < 1.0 / 256.0);
        assert!(got[1] >= 0.9999 - 1e-3);
        assert!((got[1] + got[2] - 1.0).abs() < 2.0 / 256.0);
        assert!((got[3] + got[4] - 1.0).abs() < 2.0 / 256.0);
        let want: Vec<f64> = xs.iter().map(|&x| c.decode(plain::sigmoid(x, &t, &c).unwrap())).collect();
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() < 1e-3);
        }
    }
}
