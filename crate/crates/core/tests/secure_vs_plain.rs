//! Secure protocols against their clear oracles on random inputs.

use std::sync::mpsc::{sync_channel, Receiver, SyncSender};
use std::thread;

use proptest::prelude::*;
use rand_chacha::ChaCha20Rng;
use rand_core::{RngCore, SeedableRng};

use secshare_core::arith::{self, plain};
use secshare_core::compare::{drelu_bits, max_tree, relu};
use secshare_core::preprocessing::DealerStream;
use secshare_core::transport::{Link, Session, SessionConfig};
use secshare_core::{Error, FixedPointCodec, Matrix, Party, PartyId, RingElement};

struct Chan {
    tx: SyncSender<Vec<u8>>,
    rx: Receiver<Vec<u8>>,
}

impl Link for Chan {
    fn send(&mut self, frame: &[u8]) -> secshare_core::Result<()> {
        self.tx.send(frame.to_vec()).map_err(|_| Error::Transport("peer hung up".into()))
    }
    fn flush(&mut self) -> secshare_core::Result<()> {
        Ok(())
    }
    fn recv(&mut self) -> secshare_core::Result<Vec<u8>> {
        self.rx.recv().map_err(|_| Error::Transport("peer hung up".into()))
    }
}

type P = Party<Chan, DealerStream>;

/// Shares `values`, runs `f` on both parties and reconstructs.
fn secure<F>(seed: u64, values: &[RingElement], f: F) -> Vec<RingElement>
where
    F: Fn(&mut P, Vec<RingElement>) -> Vec<RingElement> + Sync,
{
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let s0: Vec<RingElement> = values.iter().map(|_| RingElement(rng.next_u64())).collect();
    let s1: Vec<RingElement> = values.iter().zip(&s0).map(|(&v, &a)| v - a).collect();
    let (t0, r1) = sync_channel(1 << 12);
    let (t1, r0) = sync_channel(1 << 12);
    let run = |link: Chan, party: PartyId, mine: Vec<RingElement>| {
        let mut s = [0u8; 32];
        s[..8].copy_from_slice(&seed.to_le_bytes());
        let session = Session::new(link, &SessionConfig::deterministic(party, s));
        let mut p = Party::new(session, DealerStream::new(party, [s[0] ^ 0x3c; 32]));
        f(&mut p, mine)
    };
    let (a, b) = thread::scope(|sc| {
        let h = sc.spawn(|| run(Chan { tx: t1, rx: r1 }, PartyId::P1, s1.clone()));
        let a = run(Chan { tx: t0, rx: r0 }, PartyId::P0, s0.clone());
        (a, h.join().unwrap())
    });
    a.iter().zip(&b).map(|(&x, &y)| x + y).collect()
}

fn codec() -> FixedPointCodec {
    FixedPointCodec::default()
}

fn ulps(a: RingElement, b: RingElement) -> u64 {
    (a - b).as_i64().unsigned_abs()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn sign_test_matches_msb(v in proptest::collection::vec(any::<i64>(), 1..40), seed in any::<u64>()) {
        let vals: Vec<RingElement> = v.iter().map(|&x| RingElement::from_i64(x)).collect();
        let out = secure(seed, &vals, |p, mine| {
            drelu_bits(p, &mine).unwrap().into_iter().map(|b| RingElement(b as u64)).collect()
        });
        for (x, o) in v.iter().zip(out) {
            // Each party's output is an XOR share; the sum has the XOR in its low bit.
            prop_assert_eq!(o.0 & 1 == 1, *x >= 0);
        }
    }

    #[test]
    fn fixed_products_within_one_ulp(v in proptest::collection::vec((-3000.0f64..3000.0, -3000.0f64..3000.0), 1..30), seed in any::<u64>()) {
        let c = codec();
        let a: Vec<RingElement> = v.iter().map(|p| c.encode(p.0).unwrap()).collect();
        let b: Vec<RingElement> = v.iter().map(|p| c.encode(p.1).unwrap()).collect();
        let joined: Vec<RingElement> = a.iter().chain(&b).copied().collect();
        let n = a.len();
        let out = secure(seed, &joined, move |p, mine| arith::mul_fixed(p, &mine[..n], &mine[n..]).unwrap());
        for k in 0..n {
            prop_assert!(ulps(out[k], plain::mul_fixed(a[k], b[k], c.frac_bits())) <= 1);
        }
    }

    #[test]
    fn relu_keeps_nonnegatives(v in proptest::collection::vec(-1.0e6f64..1.0e6, 1..40), seed in any::<u64>()) {
        let c = codec();
        let vals: Vec<RingElement> = v.iter().map(|&x| c.encode(x).unwrap()).collect();
        let out = secure(seed, &vals, |p, mine| relu(p, &mine).unwrap().0);
        for (x, o) in vals.iter().zip(out) {
            let want = if plain::nonneg(*x) { *x } else { RingElement::ZERO };
            prop_assert_eq!(o, want);
        }
    }

    #[test]
    fn row_maximum_and_position(rows in 1usize..4, cols in 1usize..9, seed in any::<u64>()) {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let vals: Vec<RingElement> = (0..rows * cols).map(|_| RingElement::from_i64((rng.next_u32() % 64) as i64 - 32)).collect();
        let x = Matrix::from_vec(rows, cols, vals.clone()).unwrap();
        let out = secure(seed, &vals, move |p, mine| {
            let m = Matrix::from_vec(rows, cols, mine).unwrap();
            let (max, onehot) = max_tree(p, &m, true).unwrap();
            max.into_iter().chain(onehot.unwrap().data().iter().copied()).collect()
        });
        for r in 0..rows {
            let (m, at) = plain::max_row(x.row(r));
            prop_assert_eq!(out[r], m);
            for c in 0..cols {
                prop_assert_eq!(out[rows + r * cols + c].0, (c == at) as u64);
            }
        }
    }

    #[test]
    fn division_tracks_the_quotient(v in proptest::collection::vec((0.05f64..500.0, 0.02f64..60.0), 1..20), seed in any::<u64>()) {
        let c = codec();
        let a: Vec<RingElement> = v.iter().map(|p| c.encode(p.0).unwrap()).collect();
        let b: Vec<RingElement> = v.iter().map(|p| c.encode(p.1).unwrap()).collect();
        let joined: Vec<RingElement> = a.iter().chain(&b).copied().collect();
        let n = a.len();
        let out = secure(seed, &joined, move |p, mine| arith::divide(p, &mine[..n], &mine[n..]).unwrap());
        for k in 0..n {
            let want = c.decode(a[k]) / c.decode(b[k]);
            let got = c.decode(out[k]);
            // Relative bound, plus a few ulps for tiny quotients.
            prop_assert!((got - want).abs() <= want * 2f64.powi(-10) + 4.0 / 65536.0, "{} / {} = {} not {}", c.decode(a[k]), c.decode(b[k]), got, want);
        }
    }
}

#[test]
fn matrix_product_matches_plain() {
    let c = codec();
    let (m, n, v) = (3, 5, 4);
    let vals: Vec<RingElement> = (0..m * n + n * v).map(|k| c.encode((k as f64 - 15.0) / 7.0).unwrap()).collect();
    let x = Matrix::from_vec(m, n, vals[..m * n].to_vec()).unwrap();
    let y = Matrix::from_vec(n, v, vals[m * n..].to_vec()).unwrap();
    let want = plain::matmul_fixed(&x, &y, c.frac_bits()).unwrap();
    let out = secure(5, &vals, move |p, mine| {
        let a = Matrix::from_vec(m, n, mine[..m * n].to_vec()).unwrap();
        let b = Matrix::from_vec(n, v, mine[m * n..].to_vec()).unwrap();
        arith::matmul_fixed(p, &a, &b).unwrap().data().to_vec()
    });
    for (g, w) in out.iter().zip(want.data()) {
        assert!(ulps(*g, *w) <= 1);
    }
}
