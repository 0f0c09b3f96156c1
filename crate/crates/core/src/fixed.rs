//! Fixed-point encoding of reals into the ring and share-local truncation.

use crate::error::{Error, Result};
use crate::ring::RingElement;
use crate::transport::PartyId;

/// Default number of fractional bits.
pub const FRAC_BITS: u32 = 16;

/// Encodes reals as `round(x * 2^frac_bits)` in two's complement.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FixedPointCodec {
    frac_bits: u32,
}

impl Default for FixedPointCodec {
    fn default() -> Self {
        FixedPointCodec { frac_bits: FRAC_BITS }
    }
}

impl FixedPointCodec {
    pub fn new(frac_bits: u32) -> Result<Self> {
        if frac_bits == 0 || frac_bits >= 31 {
            return Err(Error::Range(alloc::format!("frac_bits {frac_bits} outside 1..=30")));
        }
        Ok(FixedPointCodec { frac_bits })
    }

    #[inline]
    pub fn frac_bits(&self) -> u32 {
        self.frac_bits
    }

    #[inline]
    pub fn scale(&self) -> f64 {
        (1u64 << self.frac_bits) as f64
    }

    /// Largest magnitude accepted by [`encode`](Self::encode).
    pub fn max_magnitude(&self) -> f64 {
        (1u64 << (63 - self.frac_bits)) as f64
    }

    /// Rounds half away from zero.
    pub fn encode(&self, x: f64) -> Result<RingElement> {
        if !x.is_finite() || libm::fabs(x) >= self.max_magnitude() {
            return Err(Error::Range(alloc::format!("{x} cannot be encoded with {} fractional bits", self.frac_bits)));
        }
        Ok(RingElement::from_i64(libm::round(x * self.scale()) as i64))
    }

    pub fn decode(&self, v: RingElement) -> f64 {
        v.as_i64() as f64 / self.scale()
    }

    /// One unit in the last place.
    pub fn ulp(&self) -> f64 {
        1.0 / self.scale()
    }

    /// Rescale a share after a fixed-point product.
    #[inline]
    pub fn truncate_share(&self, share: RingElement, party: PartyId) -> RingElement {
        truncate_share(share, party, self.frac_bits)
    }
}

/// Local probabilistic truncation of one additive share by `k` bits.
///
/// Party 0 shifts its share arithmetically; party 1 shifts the negation of
/// its share and negates back. The reconstruction equals `floor(x / 2^k)`
/// or one more, except with probability about `|x| / 2^63`.
#[inline]
pub fn truncate_share(share: RingElement, party: PartyId, k: u32) -> RingElement {
    if k == 0 {
        return share;
    }
    match party {
        PartyId::P0 => share.sar(k),
        PartyId::P1 => -((-share).sar(k)),
    }
}

/// Plaintext counterpart of [`truncate_share`]: floor division by `2^k`.
#[inline]
pub fn truncate_plain(v: RingElement, k: u32) -> RingElement {
    v.sar(k)
}
