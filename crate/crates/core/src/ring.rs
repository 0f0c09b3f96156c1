//! Arithmetic over Z_{2^64} and the small prime field used by the
//! comparison stack.
//!
//! Every shared numeric value lives in [`RingElement`]. Addition and
//! multiplication wrap silently; the signed reading is two's complement.
//! Bit vectors are indexed most-significant-bit first throughout the crate.

use core::fmt;
use core::iter::Sum;
use core::ops::{Add, AddAssign, Mul, MulAssign, Neg, Sub, SubAssign};

use crate::error::{Error, Result};

/// Width of the arithmetic ring.
pub const RING_BITS: u32 = 64;

/// Prime modulus for per-bit shares.
pub const PRIME: u8 = 67;

/// A residue modulo 2^64.
#[derive(Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[repr(transparent)]
pub struct RingElement(pub u64);

impl RingElement {
    pub const ZERO: RingElement = RingElement(0);
    pub const ONE: RingElement = RingElement(1);

    #[inline]
    pub const fn new(v: u64) -> Self {
        RingElement(v)
    }

    #[inline]
    pub const fn from_i64(v: i64) -> Self {
        RingElement(v as u64)
    }

    /// Two's complement reading.
    #[inline]
    pub const fn as_i64(self) -> i64 {
        self.0 as i64
    }

    #[inline]
    pub const fn msb(self) -> bool {
        self.0 >> 63 == 1
    }

    #[inline]
    pub fn to_le_bytes(self) -> [u8; 8] {
        self.0.to_le_bytes()
    }

    #[inline]
    pub fn from_le_bytes(b: [u8; 8]) -> Self {
        RingElement(u64::from_le_bytes(b))
    }

    /// Multiplication by 2^k, wrapping.
    #[inline]
    pub fn shl(self, k: u32) -> Self {
        if k >= 64 {
            RingElement(0)
        } else {
            RingElement(self.0 << k)
        }
    }

    /// Arithmetic (sign-extending) shift right.
    #[inline]
    pub fn sar(self, k: u32) -> Self {
        RingElement((self.as_i64() >> k.min(63)) as u64)
    }
}

impl fmt::Debug for RingElement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "R({})", self.as_i64())
    }
}

impl fmt::Display for RingElement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl From<u64> for RingElement {
    fn from(v: u64) -> Self {
        RingElement(v)
    }
}

impl Add for RingElement {
    type Output = RingElement;
    #[inline]
    fn add(self, rhs: RingElement) -> RingElement {
        RingElement(self.0.wrapping_add(rhs.0))
    }
}

impl Sub for RingElement {
    type Output = RingElement;
    #[inline]
    fn sub(self, rhs: RingElement) -> RingElement {
        RingElement(self.0.wrapping_sub(rhs.0))
    }
}

impl Mul for RingElement {
    type Output = RingElement;
    #[inline]
    fn mul(self, rhs: RingElement) -> RingElement {
        RingElement(self.0.wrapping_mul(rhs.0))
    }
}

impl Neg for RingElement {
    type Output = RingElement;
    #[inline]
    fn neg(self) -> RingElement {
        RingElement(self.0.wrapping_neg())
    }
}

impl AddAssign for RingElement {
    #[inline]
    fn add_assign(&mut self, rhs: RingElement) {
        self.0 = self.0.wrapping_add(rhs.0);
    }
}

impl SubAssign for RingElement {
    #[inline]
    fn sub_assign(&mut self, rhs: RingElement) {
        self.0 = self.0.wrapping_sub(rhs.0);
    }
}

impl MulAssign for RingElement {
    #[inline]
    fn mul_assign(&mut self, rhs: RingElement) {
        self.0 = self.0.wrapping_mul(rhs.0);
    }
}

impl Sum for RingElement {
    fn sum<I: Iterator<Item = RingElement>>(iter: I) -> RingElement {
        iter.fold(RingElement::ZERO, |a, b| a + b)
    }
}

impl<'a> Sum<&'a RingElement> for RingElement {
    fn sum<I: Iterator<Item = &'a RingElement>>(iter: I) -> RingElement {
        iter.fold(RingElement::ZERO, |a, b| a + *b)
    }
}

/// Carry out of the top bit when `a + b` is formed as unsigned integers.
#[inline]
pub fn wrap(a: RingElement, b: RingElement) -> bool {
    a.0.overflowing_add(b.0).1
}

#[inline]
pub fn msb(a: RingElement) -> bool {
    a.msb()
}

/// The 64 bits of a ring element, index 0 holding the MSB.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct BitVector64(pub [bool; 64]);

impl BitVector64 {
    pub fn reconstruct(&self) -> RingElement {
        let v = self
            .0
            .iter()
            .enumerate()
            .fold(0u64, |acc, (j, &b)| acc | ((b as u64) << (63 - j)));
        RingElement(v)
    }
}

pub fn bit_decompose(a: RingElement) -> BitVector64 {
    let mut bits = [false; 64];
    for (j, b) in bits.iter_mut().enumerate() {
        *b = (a.0 >> (63 - j)) & 1 == 1;
    }
    BitVector64(bits)
}

/// A share of a bit over Z_p, stored as a byte.
///
/// Fresh shares from mask generation are unreduced in `[0, p]` so that the
/// parity of the pair still encodes the bit; reduce before field arithmetic.
#[derive(Clone, Copy, Default, PartialEq, Eq, Hash, Debug)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[repr(transparent)]
pub struct PrimeShare(pub u8);

/// Parameters of the comparison stack: the width of the ring being compared
/// and the prime that carries the per-bit shares.
///
/// Production code uses `(64, 67)`. Narrow variants exist so exhaustive
/// sweeps can run the same code path.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CompareRing {
    bits: u32,
    prime: u8,
}

impl Default for CompareRing {
    fn default() -> Self {
        CompareRing {
            bits: RING_BITS,
            prime: PRIME,
        }
    }
}

impl CompareRing {
    /// `prime` must exceed `bits + 1` so that no sum formed during the
    /// bitwise comparison can wrap to zero, and fit a byte when unreduced.
    pub fn new(bits: u32, prime: u8) -> Result<Self> {
        if !(2..=64).contains(&bits) || !bits.is_multiple_of(2) {
            return Err(Error::Range(alloc::format!("ring width {bits} not an even value in 2..=64")));
        }
        if prime < 3 || u32::from(prime) <= bits + 1 || !is_prime(prime) {
            return Err(Error::Range(alloc::format!(
                "modulus {prime} must be a prime greater than {}",
                bits + 1
            )));
        }
        Ok(CompareRing { bits, prime })
    }

    #[inline]
    pub fn bits(&self) -> u32 {
        self.bits
    }

    #[inline]
    pub fn prime(&self) -> u8 {
        self.prime
    }

    /// floor(p / 2).
    #[inline]
    pub fn half_prime(&self) -> u8 {
        self.prime / 2
    }

    #[inline]
    pub fn mask(&self) -> u64 {
        if self.bits == 64 {
            u64::MAX
        } else {
            (1u64 << self.bits) - 1
        }
    }

    #[inline]
    pub fn reduce(&self, v: u64) -> u64 {
        v & self.mask()
    }

    #[inline]
    pub fn add(&self, a: u64, b: u64) -> u64 {
        a.wrapping_add(b) & self.mask()
    }

    #[inline]
    pub fn sub(&self, a: u64, b: u64) -> u64 {
        a.wrapping_sub(b) & self.mask()
    }

    #[inline]
    pub fn wrap(&self, a: u64, b: u64) -> bool {
        let (a, b) = (a & self.mask(), b & self.mask());
        if self.bits == 64 {
            a.overflowing_add(b).1
        } else {
            a + b > self.mask()
        }
    }

    #[inline]
    pub fn msb(&self, a: u64) -> bool {
        (a >> (self.bits - 1)) & 1 == 1
    }

    /// Bit `j` of `a`, MSB-first.
    #[inline]
    pub fn bit(&self, a: u64, j: usize) -> bool {
        (a >> (self.bits as usize - 1 - j)) & 1 == 1
    }

    /// Z_p view of this parameter set.
    #[inline]
    pub fn field(&self) -> PrimeField {
        PrimeField { p: self.prime }
    }
}

fn is_prime(p: u8) -> bool {
    (2..p).take_while(|d| u16::from(*d) * u16::from(*d) <= u16::from(p)).all(|d| !p.is_multiple_of(d))
}

/// Arithmetic in Z_p for a byte-sized prime.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PrimeField {
    p: u8,
}

impl PrimeField {
    #[inline]
    pub fn modulus(&self) -> u8 {
        self.p
    }

    #[inline]
    pub fn reduce(&self, v: u16) -> u8 {
        (v % u16::from(self.p)) as u8
    }

    #[inline]
    pub fn add(&self, a: u8, b: u8) -> u8 {
        self.reduce(u16::from(a) + u16::from(b))
    }

    #[inline]
    pub fn sub(&self, a: u8, b: u8) -> u8 {
        let p = u16::from(self.p);
        self.reduce(u16::from(a) % p + p - u16::from(b) % p)
    }

    #[inline]
    pub fn neg(&self, a: u8) -> u8 {
        self.sub(0, a)
    }

    #[inline]
    pub fn mul(&self, a: u8, b: u8) -> u8 {
        self.reduce(u16::from(a) * u16::from(b))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn wrap_examples() {
        assert!(wrap(RingElement(1 << 63), RingElement(1 << 63)));
        assert!(!wrap(RingElement(0), RingElement(5)));
        assert!(wrap(RingElement(u64::MAX), RingElement(1)));
    }

    #[test]
    fn msb_examples() {
        assert!(!msb(RingElement(0)));
        assert!(msb(RingElement(1 << 63)));
        assert!(!msb(RingElement((1 << 63) - 1)));
    }

    #[test]
    fn decompose_examples() {
        assert_eq!(bit_decompose(RingElement(0)).0, [false; 64]);
        let top = bit_decompose(RingElement(1 << 63)).0;
        assert!(top[0]);
        assert!(top[1..].iter().all(|b| !b));
        let three = bit_decompose(RingElement(3)).0;
        assert!(three[62] && three[63]);
        assert_eq!(three.iter().filter(|b| **b).count(), 2);
    }

    #[test]
    fn wrap_exhaustive_narrow_ring() {
        let ring = CompareRing::new(8, 11).unwrap();
        for a in 0..256u64 {
            for b in 0..256u64 {
                let sum = ring.add(a, b);
                assert_eq!(ring.wrap(a, b), sum < a, "a={a} b={b}");
                assert_eq!(ring.wrap(a, b), a + b >= 256);
            }
        }
    }

    #[test]
    fn compare_ring_rejects_bad_params() {
        assert!(CompareRing::new(64, 65).is_err());
        assert!(CompareRing::new(8, 9).is_err());
        assert!(CompareRing::new(8, 7).is_err());
        assert!(CompareRing::new(7, 11).is_err());
        assert!(CompareRing::new(8, 11).is_ok());
        assert_eq!(CompareRing::default(), CompareRing::new(64, 67).unwrap());
    }

    #[test]
    fn prime_field_ops() {
        let f = CompareRing::default().field();
        assert_eq!(f.add(66, 1), 0);
        assert_eq!(f.sub(0, 1), 66);
        assert_eq!(f.mul(66, 66), 1);
        assert_eq!(f.neg(67), 0);
    }

    proptest! {
        #[test]
        fn decompose_roundtrip(v in any::<u64>()) {
            prop_assert_eq!(bit_decompose(RingElement(v)).reconstruct(), RingElement(v));
        }

        #[test]
        fn wrap_matches_carry(a in any::<u64>(), b in any::<u64>()) {
            let sum = RingElement(a) + RingElement(b);
            prop_assert_eq!(wrap(RingElement(a), RingElement(b)), sum.0 < a);
        }
    }
}
