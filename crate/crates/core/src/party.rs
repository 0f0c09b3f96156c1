//! A party's protocol context: its session, its correlation source and the
//! numeric parameters every protocol agrees on.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::fixed::FixedPointCodec;
use crate::preprocessing::{Correlations, MaskRecord};
use crate::ring::{CompareRing, RingElement};
use crate::transport::{Link, PartyId, Session};

pub struct Party<L: Link, C> {
    pub session: Session<L>,
    pub corr: C,
    pub ring: CompareRing,
    pub codec: FixedPointCodec,
    next_mask: u64,
}

impl<L: Link, C: Correlations> Party<L, C> {
    pub fn new(session: Session<L>, corr: C) -> Self {
        Party {
            session,
            corr,
            ring: CompareRing::default(),
            codec: FixedPointCodec::default(),
            next_mask: 0,
        }
    }

    pub fn with_ring(mut self, ring: CompareRing) -> Self {
        self.ring = ring;
        self
    }

    pub fn with_codec(mut self, codec: FixedPointCodec) -> Self {
        self.codec = codec;
        self
    }

    #[inline]
    pub fn id(&self) -> PartyId {
        self.session.party()
    }

    #[inline]
    pub fn is_p0(&self) -> bool {
        self.session.party().is_p0()
    }

    /// Number of comparison masks consumed so far.
    pub fn masks_consumed(&self) -> u64 {
        self.next_mask
    }

    /// Fetch `n` fresh masks; a record whose serial was already passed is
    /// rejected so no mask is ever used twice.
    pub fn take_masks(&mut self, n: usize, step: &str) -> Result<Vec<MaskRecord>> {
        let masks = self.corr.masks(&mut self.session, n, self.ring, step)?;
        if masks.len() != n {
            return Err(Error::underrun(step, format!("source returned {} of {n} masks", masks.len())));
        }
        for m in &masks {
            if m.serial < self.next_mask {
                return Err(Error::protocol(format!("{step}: mask {} was already consumed", m.serial)));
            }
            if m.bits.len() != self.ring.bits() as usize {
                return Err(Error::protocol(format!("{step}: mask {} has {} bit shares", m.serial, m.bits.len())));
            }
            self.next_mask = m.serial + 1;
        }
        Ok(masks)
    }

    /// Public constant as this party's share: party 0 holds it, party 1
    /// holds zero.
    #[inline]
    pub fn constant(&self, v: RingElement) -> RingElement {
        if self.is_p0() {
            v
        } else {
            RingElement::ZERO
        }
    }

    /// Encode a public real as a share.
    pub fn constant_real(&self, x: f64) -> Result<RingElement> {
        Ok(self.constant(self.codec.encode(x)?))
    }

    /// Open shared values to both parties in one round.
    pub fn reveal(&mut self, shares: &[RingElement]) -> Result<Vec<RingElement>> {
        let payload = encode_elements(shares);
        let theirs = self.session.exchange_exact(&payload)?;
        Ok(decode_elements(&theirs)?.into_iter().zip(shares).map(|(a, &b)| a + b).collect())
    }

    /// Open XOR-shared bits to both parties in one round.
    pub fn reveal_bits(&mut self, bits: &[bool]) -> Result<Vec<bool>> {
        let payload: Vec<u8> = bits.iter().map(|&b| b as u8).collect();
        let theirs = self.session.exchange_exact(&payload)?;
        Ok(theirs.iter().zip(bits).map(|(&t, &b)| (t & 1 == 1) ^ b).collect())
    }
}

pub fn encode_elements(v: &[RingElement]) -> Vec<u8> {
    let mut out = Vec::with_capacity(v.len() * 8);
    for e in v {
        out.extend_from_slice(&e.to_le_bytes());
    }
    out
}

pub fn decode_elements(b: &[u8]) -> Result<Vec<RingElement>> {
    if !b.len().is_multiple_of(8) {
        return Err(Error::protocol(format!("{} bytes is not a whole number of ring elements", b.len())));
    }
    Ok(b.chunks_exact(8)
        .map(|c| {
            let mut a = [0u8; 8];
            a.copy_from_slice(c);
            RingElement::from_le_bytes(a)
        })
        .collect())
}
