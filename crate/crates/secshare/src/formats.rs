//! On-disk formats: share pools (`2PCP`), model checkpoints (`2PCK`), MNIST
//! IDX files and piecewise-linear tables as JSON.
//!
//! Pool and checkpoint files are sequences of little-endian records behind
//! a small header; IDX is big-endian as published.

use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use secshare_core::arith::PwlTable;
use secshare_core::nn::{Dataset, Model, NetworkSpec, Params};
use secshare_core::preprocessing::{MaskRecord, MatTriple, Pool, PrimeTriple, Triple};
use secshare_core::{CompareRing, Matrix, PartyId, PrimeShare, RingElement};

use crate::error::{AppError, AppResult};

pub const POOL_MAGIC: &[u8; 4] = b"2PCP";
pub const CHECKPOINT_MAGIC: &[u8; 4] = b"2PCK";
pub const FORMAT_VERSION: u16 = 1;

pub const IDX_IMAGES: u32 = 0x0000_0803;
pub const IDX_LABELS: u32 = 0x0000_0801;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u8)]
enum Kind {
    Owner = 0,
    Triples = 1,
    PrimeTriples = 2,
    Masks = 3,
    MatTriples = 4,
}

impl Kind {
    fn from_u8(b: u8) -> Option<Kind> {
        Some(match b {
            0 => Kind::Owner,
            1 => Kind::Triples,
            2 => Kind::PrimeTriples,
            3 => Kind::Masks,
            4 => Kind::MatTriples,
            _ => return None,
        })
    }
}

/// Byte cursor that reports truncation as a format error.
struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }

    fn done(&self) -> bool {
        self.pos == self.buf.len()
    }

    fn bytes(&mut self, n: usize) -> Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or("file is truncated")?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, String> {
        Ok(self.bytes(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, String> {
        Ok(u16::from_le_bytes(self.bytes(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, String> {
        Ok(u32::from_le_bytes(self.bytes(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, String> {
        Ok(u64::from_le_bytes(self.bytes(8)?.try_into().unwrap()))
    }

    fn ring(&mut self) -> Result<RingElement, String> {
        self.u64().map(RingElement)
    }

    fn matrix(&mut self, rows: usize, cols: usize) -> Result<Matrix, String> {
        let data = (0..rows * cols).map(|_| self.ring()).collect::<Result<Vec<_>, _>>()?;
        Matrix::from_vec(rows, cols, data).map_err(|e| e.to_string())
    }
}

fn put_matrix(out: &mut Vec<u8>, m: &Matrix) {
    for v in m.data() {
        out.extend_from_slice(&v.0.to_le_bytes());
    }
}

fn section(out: &mut Vec<u8>, kind: Kind, count: usize, dims: &[u32]) {
    out.extend_from_slice(POOL_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.push(kind as u8);
    out.extend_from_slice(&(count as u32).to_le_bytes());
    out.push(dims.len() as u8);
    for d in dims {
        out.extend_from_slice(&d.to_le_bytes());
    }
}

/// Serialise one party's pool. Each kind becomes a section
/// `{magic, version u16, kind u8, count u32, ndims u8, dims u32..}` followed
/// by packed records; matrix triples get one section per run of equal
/// shapes so FIFO order survives. The leading owner section also records
/// how many sections follow, so a file cut at a section boundary is caught.
pub fn encode_pool(party: PartyId, pool: &Pool) -> Vec<u8> {
    let mut out = Vec::new();
    let mats: Vec<&MatTriple> = pool.mat_triples.iter().collect();
    let sections = 3 + mats.chunk_by(|a, b| a.shape() == b.shape()).count();
    section(&mut out, Kind::Owner, 0, &[party.index() as u32, sections as u32]);
    section(&mut out, Kind::Triples, pool.triples.len(), &[]);
    for t in &pool.triples {
        for v in [t.x, t.y, t.z] {
            out.extend_from_slice(&v.0.to_le_bytes());
        }
    }
    section(&mut out, Kind::PrimeTriples, pool.prime_triples.len(), &[u32::from(pool.prime.unwrap_or(0))]);
    for t in &pool.prime_triples {
        out.extend_from_slice(&[t.x, t.y, t.z]);
    }
    let ring = pool.mask_ring.unwrap_or_default();
    section(&mut out, Kind::Masks, pool.masks.len(), &[ring.bits(), u32::from(ring.prime())]);
    for m in &pool.masks {
        out.extend_from_slice(&m.serial.to_le_bytes());
        out.extend_from_slice(&m.r.to_le_bytes());
        out.push(m.alpha as u8);
        out.extend(m.bits.iter().map(|b| b.0));
    }
    for run in mats.chunk_by(|a, b| a.shape() == b.shape()) {
        let (m, n, v) = run[0].shape();
        section(&mut out, Kind::MatTriples, run.len(), &[m as u32, n as u32, v as u32]);
        for t in run {
            put_matrix(&mut out, &t.u);
            put_matrix(&mut out, &t.v);
            put_matrix(&mut out, &t.z);
        }
    }
    out
}

pub fn decode_pool(bytes: &[u8]) -> Result<(PartyId, Pool), String> {
    let mut r = Reader::new(bytes);
    let mut pool = Pool::new();
    let mut owner = None;
    let mut expected = 0;
    let mut seen = 0;
    while !r.done() {
        if r.bytes(4)? != POOL_MAGIC {
            return Err("bad pool section magic".into());
        }
        let version = r.u16()?;
        if version != FORMAT_VERSION {
            return Err(format!("unsupported pool version {version}"));
        }
        let kind = Kind::from_u8(r.u8()?).ok_or("unknown pool section kind")?;
        let count = r.u32()? as usize;
        let ndims = r.u8()? as usize;
        let dims = (0..ndims).map(|_| r.u32()).collect::<Result<Vec<_>, _>>()?;
        let dim = |i: usize| dims.get(i).copied().ok_or_else(|| format!("{kind:?} section lacks dimension {i}"));
        match kind {
            Kind::Owner => {
                if owner.is_some() || seen > 0 {
                    return Err("owner section must come first, once".into());
                }
                owner = Some(PartyId::from_index(dim(0)? as usize).map_err(|e| e.to_string())?);
                expected = dim(1)?;
                continue;
            }
            Kind::Triples => {
                for _ in 0..count {
                    pool.triples.push_back(Triple { x: r.ring()?, y: r.ring()?, z: r.ring()? });
                }
            }
            Kind::PrimeTriples => {
                let p = dim(0)?;
                if count > 0 {
                    pool.prime = Some(u8::try_from(p).map_err(|_| "prime out of range")?);
                }
                for _ in 0..count {
                    let b = r.bytes(3)?;
                    pool.prime_triples.push_back(PrimeTriple { x: b[0], y: b[1], z: b[2] });
                }
            }
            Kind::Masks => {
                let bits = dim(0)?;
                let prime = u8::try_from(dim(1)?).map_err(|_| "prime out of range")?;
                if count > 0 {
                    pool.mask_ring = Some(CompareRing::new(bits, prime).map_err(|e| e.to_string())?);
                }
                for _ in 0..count {
                    let serial = r.u64()?;
                    let share = r.u64()?;
                    let alpha = match r.u8()? {
                        0 => false,
                        1 => true,
                        _ => return Err("mask wrap share is not a bit".into()),
                    };
                    let bits = r.bytes(bits as usize)?.iter().map(|&b| PrimeShare(b)).collect();
                    pool.masks.push_back(MaskRecord { serial, r: share, bits, alpha });
                }
            }
            Kind::MatTriples => {
                let (m, n, v) = (dim(0)? as usize, dim(1)? as usize, dim(2)? as usize);
                for _ in 0..count {
                    let u = r.matrix(m, n)?;
                    let vv = r.matrix(n, v)?;
                    let z = r.matrix(m, v)?;
                    pool.mat_triples.push_back(MatTriple { u, v: vv, z });
                }
            }
        }
        seen += 1;
    }
    let owner = owner.ok_or("pool file names no owner")?;
    if seen != expected {
        return Err(format!("pool file holds {seen} of {expected} sections"));
    }
    Ok((owner, pool))
}

pub fn pool_path(dir: &Path, party: PartyId) -> std::path::PathBuf {
    dir.join(format!("pool-p{}.2pcp", party.index()))
}

pub fn write_pool(path: &Path, party: PartyId, pool: &Pool) -> AppResult<()> {
    write_file(path, &encode_pool(party, pool))
}

pub fn read_pool(path: &Path) -> AppResult<(PartyId, Pool)> {
    decode_pool(&read_file(path)?).map_err(|d| AppError::format(path, d))
}

/// Who holds the tensors of a checkpoint.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Holder {
    Share(PartyId),
    /// Clear fixed-point values.
    Clear,
}

impl Holder {
    fn byte(self) -> u8 {
        match self {
            Holder::Share(p) => p.index() as u8,
            Holder::Clear => 0xff,
        }
    }
}

/// Header `{magic, version u16, holder u8, name len u16 + utf8, tensors
/// u32}`, then per tensor `{layer u16, tag u8 (0 weights, 1 bias), rows
/// u32, cols u32}` and the ring elements.
pub fn encode_checkpoint(holder: Holder, network: &str, model: &Model) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.push(holder.byte());
    out.extend_from_slice(&(network.len() as u16).to_le_bytes());
    out.extend_from_slice(network.as_bytes());
    out.extend_from_slice(&(2 * model.params.len() as u32).to_le_bytes());
    for (layer, p) in model.params.iter().enumerate() {
        for (tag, m) in [(0u8, &p.w), (1, &p.b)] {
            out.extend_from_slice(&(layer as u16).to_le_bytes());
            out.push(tag);
            out.extend_from_slice(&(m.rows() as u32).to_le_bytes());
            out.extend_from_slice(&(m.cols() as u32).to_le_bytes());
            put_matrix(&mut out, m);
        }
    }
    out
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<(Holder, String, Model), String> {
    let mut r = Reader::new(bytes);
    if r.bytes(4)? != CHECKPOINT_MAGIC {
        return Err("not a checkpoint file".into());
    }
    let version = r.u16()?;
    if version != FORMAT_VERSION {
        return Err(format!("unsupported checkpoint version {version}"));
    }
    let holder = match r.u8()? {
        0xff => Holder::Clear,
        b => Holder::Share(PartyId::from_index(b as usize).map_err(|e| e.to_string())?),
    };
    let len = r.u16()? as usize;
    let name = String::from_utf8(r.bytes(len)?.to_vec()).map_err(|_| "network name is not UTF-8")?;
    let count = r.u32()? as usize;
    if !count.is_multiple_of(2) {
        return Err("weights and biases must come in pairs".into());
    }
    let mut params = Vec::with_capacity(count / 2);
    for i in 0..count / 2 {
        let mut pair = [None, None];
        for _ in 0..2 {
            let layer = r.u16()? as usize;
            let tag = r.u8()? as usize;
            if layer != i || tag > 1 || pair[tag].is_some() {
                return Err(format!("tensor for layer {layer} tag {tag} is out of order"));
            }
            let (rows, cols) = (r.u32()? as usize, r.u32()? as usize);
            pair[tag] = Some(r.matrix(rows, cols)?);
        }
        let [w, b] = pair;
        params.push(Params { w: w.unwrap(), b: b.unwrap() });
    }
    if !r.done() {
        return Err("trailing bytes after the last tensor".into());
    }
    Ok((holder, name, Model { params }))
}

pub fn write_checkpoint(path: &Path, holder: Holder, network: &str, model: &Model) -> AppResult<()> {
    write_file(path, &encode_checkpoint(holder, network, model))
}

/// Load a checkpoint and check it against the network it claims to be.
pub fn read_checkpoint(path: &Path, spec: &NetworkSpec) -> AppResult<(Holder, Model)> {
    let (holder, name, model) = decode_checkpoint(&read_file(path)?).map_err(|d| AppError::format(path, d))?;
    if name != spec.name {
        return Err(AppError::format(path, format!("checkpoint is for network {name}, not {}", spec.name)));
    }
    model.check(spec)?;
    Ok((holder, model))
}

fn be_u32(r: &mut Reader) -> Result<u32, String> {
    Ok(u32::from_be_bytes(r.bytes(4)?.try_into().unwrap()))
}

/// `(count, rows, cols, pixels)` from an IDX image file.
pub fn decode_idx_images(bytes: &[u8]) -> Result<(usize, usize, usize, Vec<u8>), String> {
    let mut r = Reader::new(bytes);
    let magic = be_u32(&mut r)?;
    if magic != IDX_IMAGES {
        return Err(format!("magic {magic:#010x} is not an IDX image file"));
    }
    let (n, rows, cols) = (be_u32(&mut r)? as usize, be_u32(&mut r)? as usize, be_u32(&mut r)? as usize);
    let pixels = r.bytes(n * rows * cols)?.to_vec();
    if !r.done() {
        return Err("trailing bytes after the last image".into());
    }
    Ok((n, rows, cols, pixels))
}

pub fn decode_idx_labels(bytes: &[u8]) -> Result<Vec<u8>, String> {
    let mut r = Reader::new(bytes);
    let magic = be_u32(&mut r)?;
    if magic != IDX_LABELS {
        return Err(format!("magic {magic:#010x} is not an IDX label file"));
    }
    let n = be_u32(&mut r)? as usize;
    let labels = r.bytes(n)?.to_vec();
    if !r.done() {
        return Err("trailing bytes after the last label".into());
    }
    Ok(labels)
}

pub fn encode_idx_images(rows: usize, cols: usize, pixels: &[u8]) -> Vec<u8> {
    let n = pixels.len() / (rows * cols).max(1);
    let mut out = Vec::with_capacity(16 + pixels.len());
    for v in [IDX_IMAGES, n as u32, rows as u32, cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(pixels);
    out
}

pub fn encode_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&IDX_LABELS.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

/// Images and labels as a dataset, keeping at most `limit` samples.
pub fn load_idx(images: &Path, labels: &Path, limit: Option<usize>) -> AppResult<Dataset> {
    let (n, rows, cols, pixels) = decode_idx_images(&read_file(images)?).map_err(|d| AppError::format(images, d))?;
    let labels_v = decode_idx_labels(&read_file(labels)?).map_err(|d| AppError::format(labels, d))?;
    if labels_v.len() != n {
        return Err(AppError::format(labels, format!("{} labels for {n} images", labels_v.len())));
    }
    if let Some(&bad) = labels_v.iter().find(|&&l| l > 9) {
        return Err(AppError::format(labels, format!("label {bad} is not a digit")));
    }
    let data = Dataset::new(pixels, labels_v, rows * cols)?;
    Ok(match limit {
        Some(k) => data.take(k),
        None => data,
    })
}

pub fn read_table(path: &Path) -> AppResult<PwlTable> {
    serde_json::from_slice(&read_file(path)?).map_err(|e| AppError::format(path, e.to_string()))
}

pub fn write_table(path: &Path, table: &PwlTable) -> AppResult<()> {
    let json = serde_json::to_vec_pretty(table).map_err(|e| AppError::format(path, e.to_string()))?;
    write_file(path, &json)
}

pub fn read_file(path: &Path) -> AppResult<Vec<u8>> {
    let mut f = fs::File::open(path).map_err(|e| AppError::io(path, e))?;
    let mut buf = Vec::new();
    f.read_to_end(&mut buf).map_err(|e| AppError::io(path, e))?;
    Ok(buf)
}

pub fn write_file(path: &Path, bytes: &[u8]) -> AppResult<()> {
    let write = || -> io::Result<()> {
        let mut f = fs::File::create(path)?;
        f.write_all(bytes)?;
        f.sync_all()
    };
    write().map_err(|e| AppError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use secshare_core::preprocessing::{Dealer, PoolPlan};

    #[test]
    fn pool_round_trip() {
        let plan = PoolPlan {
            ring: CompareRing::default(),
            triples: 5,
            prime_triples: 7,
            masks: 3,
            mat_triples: vec![(2, 3, 4, 2), (1, 1, 1, 1), (2, 3, 4, 1)],
        };
        let pools = Pool::from_dealer(&mut Dealer::new([4; 32]), &plan);
        for (i, pool) in pools.iter().enumerate() {
            let party = PartyId::from_index(i).unwrap();
            let (who, back) = decode_pool(&encode_pool(party, pool)).unwrap();
            assert_eq!(who, party);
            assert_eq!(back.triples, pool.triples);
            assert_eq!(back.prime_triples, pool.prime_triples);
            assert_eq!(back.prime, pool.prime);
            assert_eq!(back.masks, pool.masks);
            assert_eq!(back.mask_ring, pool.mask_ring);
            assert_eq!(back.mat_triples, pool.mat_triples);
        }
    }

    #[test]
    fn empty_pool_round_trips() {
        let (_, back) = decode_pool(&encode_pool(PartyId::P1, &Pool::new())).unwrap();
        assert!(back.triples.is_empty() && back.masks.is_empty() && back.mat_triples.is_empty());
    }

    #[test]
    fn truncated_pool_is_rejected() {
        let pools = Pool::from_dealer(&mut Dealer::new([1; 32]), &PoolPlan {
            ring: CompareRing::default(),
            triples: 2,
            prime_triples: 0,
            masks: 1,
            mat_triples: vec![],
        });
        let bytes = encode_pool(PartyId::P0, &pools[0]);
        assert!(decode_pool(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode_pool(&bad).is_err());
    }

    #[test]
    fn checkpoint_round_trip() {
        let spec = NetworkSpec::network_d();
        let model = Model::init(&spec, 3, &Default::default()).map(|v| RingElement::from_i64((v * 65536.0) as i64));
        let bytes = encode_checkpoint(Holder::Share(PartyId::P1), "D", &model);
        let (h, name, back) = decode_checkpoint(&bytes).unwrap();
        assert_eq!((h, name.as_str()), (Holder::Share(PartyId::P1), "D"));
        assert_eq!(back, model);
        assert!(decode_checkpoint(&bytes[..bytes.len() - 3]).is_err());
    }

    #[test]
    fn idx_round_trip() {
        let pixels: Vec<u8> = (0..2 * 4 * 3).map(|v| v as u8).collect();
        let (n, r, c, back) = decode_idx_images(&encode_idx_images(4, 3, &pixels)).unwrap();
        assert_eq!((n, r, c), (2, 4, 3));
        assert_eq!(back, pixels);
        assert_eq!(decode_idx_labels(&encode_idx_labels(&[3, 9])).unwrap(), vec![3, 9]);
        assert!(decode_idx_labels(&encode_idx_images(4, 3, &pixels)).is_err());
    }

    proptest::proptest! {
        #[test]
        fn idx_round_trips(rows in 1usize..6, cols in 1usize..6, count in 0usize..5, seed in proptest::prelude::any::<u8>()) {
            let pixels: Vec<u8> = (0..rows * cols * count).map(|k| (k as u8).wrapping_mul(31) ^ seed).collect();
            let (n, r, c, back) = decode_idx_images(&encode_idx_images(rows, cols, &pixels)).unwrap();
            proptest::prop_assert_eq!((n, r, c), (count, rows, cols));
            proptest::prop_assert_eq!(back, pixels);
        }

        #[test]
        fn truncated_files_are_rejected(cut in 0usize..40) {
            let bytes = encode_idx_images(3, 3, &[7; 18]);
            let short = &bytes[..cut.min(bytes.len() - 1)];
            proptest::prop_assert!(decode_idx_images(short).is_err());
            let plan = PoolPlan { ring: CompareRing::default(), triples: 2, prime_triples: 0, masks: 1, mat_triples: vec![] };
            let [p0, _] = Pool::from_dealer(&mut Dealer::new([2; 32]), &plan);
            let pool = encode_pool(PartyId::P0, &p0);
            proptest::prop_assert!(decode_pool(&pool[..cut.min(pool.len() - 1)]).is_err());
        }
    }
}
