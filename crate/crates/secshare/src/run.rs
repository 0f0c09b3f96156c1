//! Command implementations shared by the binary and the tests.
//!
//! Each command runs per party over any [`Link`]. [`run_both`] drives both
//! parties over an in-process channel; [`run_tcp`] drives one party over
//! TCP. Given the same configuration the two produce identical transcripts.

use std::path::{Path, PathBuf};
use std::thread;
use std::time::{Duration, Instant};

use rand_core::RngCore;
use sha2::{Digest, Sha256};

use secshare_core::arith::{self, PwlTable};
use secshare_core::compare::{check_zero, drelu_bits};
use secshare_core::gc::{DealerWrap, GarbledWrap, WrapEvaluator};
use secshare_core::nn::{self, Backend, Model, SecureBackend};
use secshare_core::ot::{DealerOt, ObliviousTransfer, OtBatch};
use secshare_core::preprocessing::{Correlations, Dealer, DealerStream, InteractiveMasks, MaskRecord, MatTriple, Pool, PrimeTriple, Triple};
use secshare_core::ring::PrimeField;
use secshare_core::transport::{uniform_below, Link, PhaseMetrics, Session, SessionConfig};
use secshare_core::{CompareRing, Error, FixedPointCodec, Matrix, Metrics, Party, PartyId, RingElement};

use crate::config::{derive_seed, derive_u64, handshake, MaskSource, OtKind, RunConfig, WrapKind};
use crate::error::{AppError, AppResult};
use crate::formats::{self, Holder};
use crate::link::{MemLink, TcpLink};
use crate::ot::ChouOrlandiOt;
use crate::report::{BenchReport, DealerReport, EpochReport, InferenceReport, RunReport, TrainReport};

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Command {
    Train,
    Infer,
    Bench { suite: BenchSuite, n: usize },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Train => "train",
            Command::Infer => "infer",
            Command::Bench { .. } => "bench",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum BenchSuite {
    Compare,
    Checkzero,
    Exp,
    Div,
    Matmul,
}

#[allow(clippy::large_enum_variant)]
pub enum OtProvider {
    Dealer(DealerOt),
    ChouOrlandi(ChouOrlandiOt),
}

impl ObliviousTransfer for OtProvider {
    fn send<L: Link>(&mut self, s: &mut Session<L>, batch: &OtBatch) -> secshare_core::Result<()> {
        match self {
            OtProvider::Dealer(o) => o.send(s, batch),
            OtProvider::ChouOrlandi(o) => o.send(s, batch),
        }
    }

    fn receive<L: Link>(&mut self, s: &mut Session<L>, choices: &[bool], width: usize) -> secshare_core::Result<Vec<u8>> {
        match self {
            OtProvider::Dealer(o) => o.receive(s, choices, width),
            OtProvider::ChouOrlandi(o) => o.receive(s, choices, width),
        }
    }
}

pub enum WrapProvider {
    Dealer(DealerWrap),
    Garbled(GarbledWrap<OtProvider>),
}

impl WrapEvaluator for WrapProvider {
    fn eval_wrap<L: Link>(&mut self, s: &mut Session<L>, inputs: &[(bool, bool)]) -> secshare_core::Result<Vec<bool>> {
        match self {
            WrapProvider::Dealer(w) => w.eval_wrap(s, inputs),
            WrapProvider::Garbled(w) => w.eval_wrap(s, inputs),
        }
    }
}

#[allow(clippy::large_enum_variant)]
pub enum Base {
    Stream(DealerStream),
    Pool(Pool),
}

#[allow(clippy::large_enum_variant)]
enum Inner {
    Plain(Base),
    Interactive(InteractiveMasks<Base, OtProvider, WrapProvider>),
}

/// The correlation source chosen by the configuration, timing every fetch
/// as offline work.
pub struct Source {
    inner: Inner,
    pub offline: Duration,
}

macro_rules! delegate_base {
    ($self:ident, $method:ident ( $($arg:expr),* )) => {
        match $self {
            Base::Stream(c) => c.$method($($arg),*),
            Base::Pool(c) => c.$method($($arg),*),
        }
    };
}

impl Correlations for Base {
    fn triples<L: Link>(&mut self, s: &mut Session<L>, n: usize, step: &str) -> secshare_core::Result<Vec<Triple>> {
        delegate_base!(self, triples(s, n, step))
    }
    fn prime_triples<L: Link>(&mut self, s: &mut Session<L>, n: usize, field: PrimeField, step: &str) -> secshare_core::Result<Vec<PrimeTriple>> {
        delegate_base!(self, prime_triples(s, n, field, step))
    }
    fn mat_triple<L: Link>(&mut self, s: &mut Session<L>, shape: (usize, usize, usize), step: &str) -> secshare_core::Result<MatTriple> {
        delegate_base!(self, mat_triple(s, shape, step))
    }
    fn masks<L: Link>(&mut self, s: &mut Session<L>, n: usize, ring: CompareRing, step: &str) -> secshare_core::Result<Vec<MaskRecord>> {
        delegate_base!(self, masks(s, n, ring, step))
    }
}

macro_rules! timed {
    ($self:ident, $method:ident ( $($arg:expr),* )) => {{
        let t = Instant::now();
        let out = match &mut $self.inner {
            Inner::Plain(c) => c.$method($($arg),*),
            Inner::Interactive(c) => c.$method($($arg),*),
        };
        $self.offline += t.elapsed();
        out
    }};
}

impl Correlations for Source {
    fn triples<L: Link>(&mut self, s: &mut Session<L>, n: usize, step: &str) -> secshare_core::Result<Vec<Triple>> {
        timed!(self, triples(s, n, step))
    }
    fn prime_triples<L: Link>(&mut self, s: &mut Session<L>, n: usize, field: PrimeField, step: &str) -> secshare_core::Result<Vec<PrimeTriple>> {
        timed!(self, prime_triples(s, n, field, step))
    }
    fn mat_triple<L: Link>(&mut self, s: &mut Session<L>, shape: (usize, usize, usize), step: &str) -> secshare_core::Result<MatTriple> {
        timed!(self, mat_triple(s, shape, step))
    }
    fn masks<L: Link>(&mut self, s: &mut Session<L>, n: usize, ring: CompareRing, step: &str) -> secshare_core::Result<Vec<MaskRecord>> {
        timed!(self, masks(s, n, ring, step))
    }
}

impl Source {
    /// Correlations for `party`: pool files from `pools` when given,
    /// otherwise the dealer stream; masks optionally generated
    /// interactively.
    pub fn build(cfg: &RunConfig, party: PartyId, pools: Option<&Path>) -> AppResult<Self> {
        let base = match pools {
            Some(dir) => {
                let path = formats::pool_path(dir, party);
                let (owner, pool) = formats::read_pool(&path)?;
                if owner != party {
                    return Err(AppError::format(&path, format!("pool belongs to party {}", owner.index())));
                }
                Base::Pool(pool)
            }
            None => Base::Stream(DealerStream::new(party, derive_seed(cfg.seed, "dealer"))),
        };
        let inner = match cfg.providers.masks {
            MaskSource::Dealer => Inner::Plain(base),
            MaskSource::Interactive => {
                // Separate dealer streams so the two OT users never share pads.
                let ot = |purpose: &str| match cfg.providers.ot {
                    OtKind::Dealer => OtProvider::Dealer(DealerOt::new(derive_seed(cfg.seed, purpose))),
                    OtKind::ChouOrlandi => OtProvider::ChouOrlandi(ChouOrlandiOt::new()),
                };
                let wrap = match cfg.providers.wrap {
                    WrapKind::Dealer => WrapProvider::Dealer(DealerWrap::new(derive_seed(cfg.seed, "dealer-wrap"))),
                    WrapKind::Garbled => WrapProvider::Garbled(GarbledWrap::new(ot("dealer-ot/wrap"))),
                };
                Inner::Interactive(InteractiveMasks::new(base, ot("dealer-ot/masks"), wrap))
            }
        };
        Ok(Source { inner, offline: Duration::ZERO })
    }
}

pub type AppParty<L> = Party<L, Source>;

/// Open a session, agree on the configuration and set up correlations.
pub fn connect<L: Link>(link: L, party: PartyId, cfg: &RunConfig, pools: Option<&Path>) -> AppResult<AppParty<L>> {
    let mut session = Session::new(link, &SessionConfig::deterministic(party, derive_seed(cfg.seed, "shared")));
    handshake(&mut session, cfg)?;
    let source = Source::build(cfg, party, pools)?;
    Ok(Party::new(session, source))
}

fn exp_table(cfg: &RunConfig) -> AppResult<PwlTable> {
    match &cfg.exp_table {
        Some(p) => formats::read_table(p),
        None => Ok(PwlTable::exp(cfg.train.exp_segments)?),
    }
}

fn require<'a>(p: &'a Option<PathBuf>, what: &str) -> AppResult<&'a Path> {
    p.as_deref().ok_or_else(|| AppError::Config(format!("data.{what} is not set")))
}

fn load_train(cfg: &RunConfig) -> AppResult<secshare_core::nn::Dataset> {
    let limit = if cfg.train.full_run { None } else { cfg.train.train_limit };
    formats::load_idx(require(&cfg.data.train_images, "train_images")?, require(&cfg.data.train_labels, "train_labels")?, limit)
}

fn load_test(cfg: &RunConfig) -> AppResult<secshare_core::nn::Dataset> {
    let limit = if cfg.train.full_run { None } else { cfg.train.test_limit };
    formats::load_idx(require(&cfg.data.test_images, "test_images")?, require(&cfg.data.test_labels, "test_labels")?, limit)
}

/// `<stem>.p<i>.2pck`
pub fn checkpoint_path(stem: &Path, party: PartyId) -> PathBuf {
    let mut s = stem.as_os_str().to_owned();
    s.push(format!(".p{}.2pck", party.index()));
    PathBuf::from(s)
}

/// SHA-256 over the fixed-point encodings of a clear model.
pub fn weights_digest(model: &Model<f64>, codec: &FixedPointCodec) -> AppResult<String> {
    let mut h = Sha256::new();
    for p in &model.params {
        for v in p.w.data().iter().chain(p.b.data()) {
            h.update(codec.encode(*v)?.0.to_le_bytes());
        }
    }
    Ok(hex::encode(h.finalize()))
}

fn finish<L: Link>(p: &AppParty<L>, mut report: RunReport, started: Instant, metrics: Metrics) -> RunReport {
    let total = started.elapsed().as_secs_f64();
    report.offline_seconds = p.corr.offline.as_secs_f64();
    report.online_seconds = (total - report.offline_seconds).max(0.0);
    report.metrics = metrics;
    report
}

pub fn train<L: Link>(p: &mut AppParty<L>, cfg: &RunConfig) -> AppResult<RunReport> {
    let started = Instant::now();
    let spec = cfg.spec()?;
    let tcfg = cfg.train_config(&spec);
    let table = exp_table(cfg)?;
    let train_set = load_train(cfg)?;
    let test_set = load_test(cfg)?;
    let codec = p.codec;
    let party = p.id();
    let init = Model::init(&spec, derive_u64(cfg.seed, "init"), &codec);
    let mut eval_metrics = Metrics::default();
    let mut epochs = Vec::with_capacity(tcfg.epochs);
    let mut opened = init.clone();
    let mut be = SecureBackend::new(p, table, derive_u64(cfg.seed, "client"));
    let before = be.party.session.metrics();
    let mut model = nn::load_model(&mut be, &init)?;
    let mut train_metrics = be.party.session.metrics().delta(&before);
    for epoch in 0..tcfg.epochs {
        let t = Instant::now();
        let before = be.party.session.metrics();
        nn::train_epoch(&mut be, &spec, &mut model, &train_set, &tcfg, |_, _| {})?;
        let seconds = t.elapsed().as_secs_f64();
        let mid = be.party.session.metrics();
        train_metrics = add(train_metrics, mid.delta(&before));
        opened = nn::reveal_model(&mut be, &model)?;
        eval_metrics = add(eval_metrics, be.party.session.metrics().delta(&mid));
        epochs.push(EpochReport { epoch, accuracy: nn::accuracy(&spec, &opened, &test_set)?, seconds });
    }
    let checkpoint = match &cfg.train.checkpoint {
        Some(stem) => {
            let path = checkpoint_path(stem, party);
            formats::write_checkpoint(&path, Holder::Share(party), &spec.name, &model)?;
            Some(path.display().to_string())
        }
        None => None,
    };
    let mut report = RunReport::new("train", party.index(), cfg);
    report.train = Some(TrainReport {
        network: spec.name.clone(),
        train_samples: train_set.len(),
        test_samples: test_set.len(),
        epochs,
        evaluation_metrics: eval_metrics,
        weights_digest: weights_digest(&opened, &codec)?,
        checkpoint,
    });
    Ok(finish(p, report, started, train_metrics))
}

fn add(a: Metrics, b: Metrics) -> Metrics {
    let sum = |x: PhaseMetrics, y: PhaseMetrics| PhaseMetrics {
        rounds: x.rounds + y.rounds,
        messages: x.messages + y.messages,
        bytes_sent: x.bytes_sent + y.bytes_sent,
        bytes_received: x.bytes_received + y.bytes_received,
    };
    Metrics { offline: sum(a.offline, b.offline), online: sum(a.online, b.online) }
}

pub fn infer<L: Link>(p: &mut AppParty<L>, cfg: &RunConfig) -> AppResult<RunReport> {
    let started = Instant::now();
    let spec = cfg.spec()?;
    let table = exp_table(cfg)?;
    let images = formats::load_idx(require(&cfg.data.test_images, "test_images")?, require(&cfg.data.test_labels, "test_labels")?, Some(cfg.infer.images))?;
    if images.features != spec.input_len() {
        return Err(Error::Dimension(format!("images have {} pixels, network {} takes {}", images.features, spec.name, spec.input_len())).into());
    }
    let party = p.id();
    let codec = p.codec;
    let client = derive_u64(cfg.seed, "client");
    let mut be = SecureBackend::new(p, table, client);
    let model = match &cfg.infer.checkpoint {
        Some(stem) => {
            let own = checkpoint_path(stem, party);
            if own.exists() {
                let (holder, m) = formats::read_checkpoint(&own, &spec)?;
                if holder != Holder::Share(party) {
                    return Err(AppError::format(&own, "checkpoint holds another party's share"));
                }
                m
            } else {
                let (_, clear) = formats::read_checkpoint(stem, &spec)?;
                nn::load_model(&mut be, &clear.map(|v| codec.decode(v)))?
            }
        }
        None => nn::load_model(&mut be, &Model::init(&spec, derive_u64(cfg.seed, "init"), &codec))?,
    };
    let mut labels = Vec::with_capacity(images.len());
    let mut per_query = Vec::with_capacity(images.len());
    let mut total = Metrics::default();
    let t = Instant::now();
    for q in 0..images.len() {
        let before = be.party.session.metrics();
        let x = be.input(&images.images(q, q + 1))?;
        let logits = nn::forward(&mut be, &spec, &model, &x)?.logits;
        let opened = be.reveal(&logits)?;
        labels.push(nn::argmax_rows(&opened)[0]);
        let d = be.party.session.metrics().delta(&before);
        per_query.push((d.online.rounds, d.online.bytes_sent + d.online.bytes_received));
        total = add(total, d);
    }
    let n = images.len().max(1) as f64;
    let mut report = RunReport::new("infer", party.index(), cfg);
    report.inference = Some(InferenceReport {
        network: spec.name.clone(),
        labels,
        queries: images.len(),
        online_rounds_per_query: total.online.rounds as f64 / n,
        online_bytes_per_query: (total.online.bytes_sent + total.online.bytes_received) as f64 / n,
        seconds_per_query: t.elapsed().as_secs_f64() / n,
        bytes_stable: per_query.windows(2).all(|w| w[0] == w[1]),
    });
    Ok(finish(p, report, started, total))
}

/// Shares of `v` with the whole value on party 0.
fn public<L: Link>(p: &AppParty<L>, v: RingElement) -> RingElement {
    p.constant(v)
}

pub fn bench<L: Link>(p: &mut AppParty<L>, cfg: &RunConfig, suite: BenchSuite, n: usize) -> AppResult<RunReport> {
    let started = Instant::now();
    let codec = p.codec;
    let table = exp_table(cfg)?;
    let width = p.ring.bits() as usize;
    let prime = u64::from(p.ring.prime());
    let mut ops = Duration::ZERO;
    let mut metrics = Metrics::default();
    for i in 0..n {
        // Inputs come from the shared stream so both parties agree on the
        // clear values; they are not the object of measurement.
        let x = RingElement(p.session.shared_rng().next_u64());
        let before = p.session.metrics();
        let t = Instant::now();
        match suite {
            BenchSuite::Checkzero => {
                let c: Vec<u8> = (0..width).map(|_| uniform_below(p.session.rng(), prime) as u8).collect();
                let m = p.session.metrics();
                check_zero(p, &c)?;
                let d = p.session.metrics().delta(&m);
                if d.online.rounds != 3 || d.online.bytes_sent + d.online.bytes_received > 224 {
                    return Err(Error::Protocol(format!(
                        "zero test {i} took {} rounds and {} bytes",
                        d.online.rounds,
                        d.online.bytes_sent + d.online.bytes_received
                    ))
                    .into());
                }
            }
            BenchSuite::Compare => {
                drelu_bits(p, &[public(p, x)])?;
            }
            BenchSuite::Exp => {
                let v = codec.encode(-10.0 * (x.0 >> 11) as f64 / (1u64 << 53) as f64)?;
                arith::exp_pwl(p, &[public(p, v)], &table)?;
            }
            BenchSuite::Div => {
                let a = codec.encode(1.0 + (x.0 % 1000) as f64)?;
                let b = codec.encode(0.5 + (x.0 % 37) as f64)?;
                arith::divide(p, &[public(p, a)], &[public(p, b)])?;
            }
            BenchSuite::Matmul => {
                let a = Matrix::from_fn(128, 128, |r, c| public(p, RingElement((r * 131 + c) as u64)));
                arith::matmul_raw(p, &a, &a)?;
            }
        }
        ops += t.elapsed();
        metrics = add(metrics, p.session.metrics().delta(&before));
    }
    let k = n.max(1) as f64;
    let mut report = RunReport::new("bench", p.id().index(), cfg);
    report.bench = Some(BenchReport {
        suite: format!("{suite:?}").to_lowercase(),
        n,
        rounds_per_op: metrics.online.rounds as f64 / k,
        bytes_per_op: (metrics.online.bytes_sent + metrics.online.bytes_received) as f64 / k,
        seconds_per_op: ops.as_secs_f64() / k,
    });
    Ok(finish(p, report, started, metrics))
}

pub fn run_command<L: Link>(p: &mut AppParty<L>, cfg: &RunConfig, cmd: &Command) -> AppResult<RunReport> {
    match cmd {
        Command::Train => train(p, cfg),
        Command::Infer => infer(p, cfg),
        Command::Bench { suite, n } => bench(p, cfg, *suite, *n),
    }
}

/// Both parties in this process, on two threads over a channel pair.
pub fn run_both(cfg: &RunConfig, cmd: &Command, pools: Option<&Path>) -> AppResult<[RunReport; 2]> {
    run_both_with(cfg, cfg, cmd, pools)
}

/// [`run_both`] with a separate configuration per party, for exercising
/// the handshake.
pub fn run_both_with(cfg0: &RunConfig, cfg1: &RunConfig, cmd: &Command, pools: Option<&Path>) -> AppResult<[RunReport; 2]> {
    let (l0, l1) = MemLink::pair(1 << 12);
    let (c1, cmd1, pools1) = (cfg1.clone(), cmd.clone(), pools.map(Path::to_path_buf));
    let h = thread::spawn(move || -> AppResult<RunReport> {
        let mut p = connect(l1, PartyId::P1, &c1, pools1.as_deref())?;
        run_command(&mut p, &c1, &cmd1)
    });
    let r0 = connect(l0, PartyId::P0, cfg0, pools).and_then(|mut p| run_command(&mut p, cfg0, cmd));
    let r1 = h.join().map_err(|_| AppError::Config(format!("party 1 panicked during {}", cmd.name())))?;
    Ok([r0?, r1?])
}

/// One party over TCP: party 0 listens on the configured address, party 1
/// connects to it.
pub fn run_tcp(cfg: &RunConfig, party: PartyId, cmd: &Command, pools: Option<&Path>, address: &str) -> AppResult<RunReport> {
    let link = match party {
        PartyId::P0 => TcpLink::listen(address)?,
        PartyId::P1 => TcpLink::connect(address.to_string(), Duration::from_secs(30))?,
    };
    let mut p = connect(link, party, cfg, pools)?;
    run_command(&mut p, cfg, cmd)
}

/// Write one pool file per party into `dir`.
pub fn dealer_gen(cfg: &RunConfig, dir: &Path) -> AppResult<RunReport> {
    let plan = cfg.pools.plan();
    let mut dealer = Dealer::new(derive_seed(cfg.seed, "dealer"));
    let pools = Pool::from_dealer(&mut dealer, &plan);
    std::fs::create_dir_all(dir).map_err(|e| AppError::io(dir, e))?;
    let mut files = Vec::with_capacity(2);
    for (i, pool) in pools.iter().enumerate() {
        let party = PartyId::from_index(i)?;
        let path = formats::pool_path(dir, party);
        formats::write_pool(&path, party, pool)?;
        files.push(path.display().to_string());
    }
    let mut report = RunReport::new("dealer-gen", 0, cfg);
    report.dealer = Some(DealerReport {
        files,
        triples: plan.triples,
        prime_triples: plan.prime_triples,
        masks: plan.masks,
        mat_triples: plan.mat_triples.iter().map(|t| t.3).sum(),
    });
    Ok(report)
}
