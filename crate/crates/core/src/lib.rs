//! Two-party secure computation over additive secret shares.
//!
//! Two non-colluding parties hold additive shares of every value in
//! Z_{2^64}. Linear operations are local; products consume Beaver triples;
//! comparisons consume preprocessed masks whose bits are shared over a small
//! prime field and are resolved with a three-round zero test. On top of that
//! sit exponentiation, division, softmax and a fixed-point training loop.
//!
//! The crate is `no_std` and needs only `alloc`. Networking, files and the
//! command line live in the companion `secshare` crate; this crate talks to
//! the peer exclusively through the [`transport::Link`] trait.
//!
//! Module map:
//!
//! * [`ring`], [`fixed`]: arithmetic, bit utilities and fixed-point codec.
//! * [`transport`]: metered session, common randomness.
//! * [`ot`], [`gc`]: oblivious transfer and the garbled wrap circuit.
//! * [`preprocessing`]: masks, triples, dealer, pools.
//! * [`compare`]: zero test, secure comparison, ReLU, max.
//! * [`arith`]: products, matrix products, exp, division, softmax, sigmoid.
//! * [`tensor`], [`nn`]: shared matrices and the training loop.

#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod arith;
pub mod compare;
pub mod error;
pub mod fixed;
pub mod gc;
pub mod nn;
pub mod ot;
pub mod party;
pub mod preprocessing;
pub mod ring;
pub mod tensor;
pub mod transport;

#[cfg(test)]
pub(crate) mod testing;

pub use error::{Error, Result};
pub use fixed::FixedPointCodec;
pub use party::Party;
pub use ring::{CompareRing, PrimeShare, RingElement};
pub use tensor::Matrix;
pub use transport::{Link, Metrics, PartyId, Phase, Session, SessionConfig};
