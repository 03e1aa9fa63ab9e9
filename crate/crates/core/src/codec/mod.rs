//! Packed serving format for frozen models.
//!
//! All integers are little-endian. Layout:
//!
//! ```text
//! magic "MGQE" | version u32 | file length u64 | model tag u8 | d u32 | tables u32
//! per table:
//!   scheme u8 | n u64 | d u32 | D u32 | m u32
//!   (m + 1) x boundary u64 | m x K_i u32 | m x D_i u32 | variant u8 | extra u32
//!   code bits u64 | code bytes | float count u64 | f32 values
//! dense float count u64 | f32 values
//! FNV-1a 64 checksum of every preceding byte, u64
//! ```
//!
//! Schemes are 0 full, 1 low-rank, 2 scalar, 3 DPQ, 4 MGQE. Unquantized
//! tables have `D = m = 0` and no boundaries. `variant` is the MGQE variant
//! tag or 255; `extra` holds the rank (low-rank) or bit width (scalar).
//!
//! Codes are packed item by item, subspace by subspace, each in
//! `ceil(log2 K_i)` bits, first field in the lowest bits. Floats per scheme:
//! full `n x d` table; low-rank `P` then `Q`; scalar the per-dimension
//! minima then maxima; quantized the codebooks of every instance, each
//! subspace-major, then centroid, then dimension.

mod bits;

use std::fs;
use std::hash::Hasher;
use std::path::Path;

use fnv::FnvHasher;
use ndarray::Array2;

use bits::{BitReader, BitWriter};

use crate::embedding::{
    Code, CodebookSet, DpqEmbedding, EmbeddingScheme, FullEmbedding, LowRankEmbedding, MgqeEmbedding, MgqeVariant,
    ScalarQuantizedEmbedding, ScalarQuantizedState, TierPartition,
};
use crate::error::{Error, Result};
use crate::eval::size::code_width;
use crate::models::{dense_shapes, AnyModel, Model, ModelKind};

pub const MAGIC: [u8; 4] = *b"MGQE";
pub const VERSION: u32 = 1;
pub const EXTENSION: &str = "mgqe";

const NO_VARIANT: u8 = 255;

fn checksum(bytes: &[u8]) -> u64 {
    let mut h = FnvHasher::default();
    h.write(bytes);
    h.finish()
}

#[derive(Default)]
struct Out {
    buf: Vec<u8>,
    /// Code-stream and float bits written so far.
    payload_bits: u64,
}

impl Out {
    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn len32(&mut self, v: usize) -> Result<()> {
        let v = u32::try_from(v).map_err(|_| Error::Config(format!("{v} does not fit the format")))?;
        self.u32(v);
        Ok(())
    }
    fn floats<'a>(&mut self, values: impl IntoIterator<Item = &'a f32>) {
        let start = self.buf.len();
        self.u64(0);
        let mut count = 0u64;
        for v in values {
            self.buf.extend_from_slice(&v.to_le_bytes());
            count += 1;
        }
        self.buf[start..start + 8].copy_from_slice(&count.to_le_bytes());
        self.payload_bits += 32 * count;
    }
    fn codes(&mut self, w: BitWriter) {
        self.u64(w.bit_len());
        self.payload_bits += w.bit_len();
        self.buf.extend_from_slice(&w.into_bytes());
    }
}

struct TableHeader {
    scheme: u8,
    n: usize,
    d: usize,
    subspaces: usize,
    boundaries: Vec<usize>,
    centroids: Vec<usize>,
    tier_subspaces: Vec<usize>,
    variant: u8,
    extra: u32,
}

fn write_header(out: &mut Out, h: &TableHeader) -> Result<()> {
    out.u8(h.scheme);
    out.u64(h.n as u64);
    out.len32(h.d)?;
    out.len32(h.subspaces)?;
    out.len32(h.centroids.len())?;
    for &b in &h.boundaries {
        out.u64(b as u64);
    }
    for &k in &h.centroids {
        out.len32(k)?;
    }
    for &dd in &h.tier_subspaces {
        out.len32(dd)?;
    }
    out.u8(h.variant);
    out.u32(h.extra);
    Ok(())
}

fn plain_header(scheme: u8, n: usize, d: usize, extra: u32) -> TableHeader {
    TableHeader {
        scheme,
        n,
        d,
        subspaces: 0,
        boundaries: Vec::new(),
        centroids: Vec::new(),
        tier_subspaces: Vec::new(),
        variant: NO_VARIANT,
        extra,
    }
}

fn push_codes(w: &mut BitWriter, codes: &[Code], centroids: usize) {
    let width = code_width(centroids) as u32;
    for &c in codes {
        w.push(u32::from(c), width);
    }
}

fn write_table(out: &mut Out, scheme: &EmbeddingScheme) -> Result<()> {
    let (n, d) = (scheme.len(), scheme.dim());
    match scheme {
        EmbeddingScheme::Full(t) => {
            write_header(out, &plain_header(0, n, d, 0))?;
            out.codes(BitWriter::new());
            out.floats(t.table().iter());
        }
        EmbeddingScheme::LowRank(t) => {
            write_header(out, &plain_header(1, n, d, t.rank() as u32))?;
            out.codes(BitWriter::new());
            out.floats(t.p().iter().chain(t.q().iter()));
        }
        EmbeddingScheme::ScalarQuantized(ScalarQuantizedState::Frozen(sq)) => {
            write_header(out, &plain_header(2, n, d, sq.bits()))?;
            let mut w = BitWriter::new();
            for &c in sq.codes() {
                w.push(u32::from(c), sq.bits());
            }
            out.codes(w);
            out.floats(sq.mins().iter().chain(sq.maxs()));
        }
        EmbeddingScheme::Dpq(t) => {
            let codes = t.stored_codes().ok_or(Error::NotFrozen)?;
            write_header(
                out,
                &TableHeader {
                    scheme: 3,
                    n,
                    d,
                    subspaces: t.subspaces(),
                    boundaries: vec![0, n],
                    centroids: vec![t.centroids()],
                    tier_subspaces: vec![t.subspaces()],
                    variant: NO_VARIANT,
                    extra: 0,
                },
            )?;
            let mut w = BitWriter::new();
            push_codes(&mut w, codes, t.centroids());
            out.codes(w);
            out.floats(t.codebooks().values().iter());
        }
        EmbeddingScheme::Mgqe(t) => {
            if !t.is_frozen() {
                return Err(Error::NotFrozen);
            }
            let p = t.partition();
            write_header(
                out,
                &TableHeader {
                    scheme: 4,
                    n,
                    d,
                    subspaces: p.subspaces()[0],
                    boundaries: p.boundaries().to_vec(),
                    centroids: p.centroids().to_vec(),
                    tier_subspaces: p.subspaces().to_vec(),
                    variant: p.variant().tag(),
                    extra: 0,
                },
            )?;
            let mut w = BitWriter::new();
            for id in 0..n {
                let codes = t.item_codes(id).ok_or(Error::NotFrozen)?;
                push_codes(&mut w, codes, p.centroids()[p.tier_of(id)]);
            }
            out.codes(w);
            out.floats(t.instances().iter().flat_map(|i| i.codebooks().values().iter()));
        }
        EmbeddingScheme::ScalarQuantized(ScalarQuantizedState::Training { .. }) => return Err(Error::NotFrozen),
    }
    Ok(())
}

fn encode_inner<M: Model>(model: &M) -> Result<(Vec<u8>, u64)> {
    if !model.is_frozen() {
        return Err(Error::NotFrozen);
    }
    let schemes = model.schemes();
    let d = schemes.first().map(|s| s.dim()).unwrap_or(0);
    let mut out = Out::default();
    out.buf.extend_from_slice(&MAGIC);
    out.u32(VERSION);
    out.u64(0);
    out.u8(model.kind().tag());
    out.len32(d)?;
    out.len32(schemes.len())?;
    for s in schemes {
        write_table(&mut out, s)?;
    }
    out.floats(model.dense().into_iter().flat_map(|p| p.value.iter()));
    let total = out.buf.len() as u64 + 8;
    out.buf[8..16].copy_from_slice(&total.to_le_bytes());
    let sum = checksum(&out.buf);
    out.u64(sum);
    Ok((out.buf, out.payload_bits))
}

/// Serializes a frozen model.
pub fn encode<M: Model>(model: &M) -> Result<Vec<u8>> {
    Ok(encode_inner(model)?.0)
}

/// Code-stream and float bits of the packed file, excluding headers, byte
/// padding of code streams and the checksum.
pub fn packed_size_bits<M: Model>(model: &M) -> Result<u64> {
    Ok(encode_inner(model)?.1)
}

/// Writes a frozen model to `path`; returns the file size in bytes.
pub fn export<M: Model>(model: &M, path: &Path) -> Result<u64> {
    let bytes = encode(model)?;
    fs::write(path, &bytes).map_err(|e| Error::io(path, e))?;
    Ok(bytes.len() as u64)
}

pub fn import(path: &Path) -> Result<AnyModel> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

struct In<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> In<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let available = self.bytes.len() - self.pos;
        if n > available {
            return Err(Error::Truncated {
                offset: self.pos,
                needed: n - available,
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn usize32(&mut self) -> Result<usize> {
        Ok(self.u32()? as usize)
    }
    fn usize64(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::Malformed("count exceeds address space".into()))
    }
    fn floats(&mut self) -> Result<Vec<f32>> {
        let count = self.usize64()?;
        let raw = self.take(count.checked_mul(4).ok_or_else(|| Error::Malformed("float count overflow".into()))?)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect())
    }
    fn code_stream(&mut self) -> Result<(u64, &'a [u8])> {
        let bits = self.u64()?;
        let len = usize::try_from(bits.div_ceil(8)).map_err(|_| Error::Malformed("code stream too long".into()))?;
        Ok((bits, self.take(len)?))
    }
}

fn malformed(e: Error) -> Error {
    match e {
        Error::Config(m) => Error::Malformed(m),
        other => other,
    }
}

fn matrix(rows: usize, cols: usize, values: Vec<f32>) -> Result<Array2<f32>> {
    Array2::from_shape_vec((rows, cols), values)
        .map_err(|_| Error::Malformed(format!("expected a {rows} x {cols} float block")))
}

fn expect_len(what: &str, got: usize, want: usize) -> Result<()> {
    if got != want {
        return Err(Error::Malformed(format!("{what}: expected {want} values, found {got}")));
    }
    Ok(())
}

fn read_codes(r: &mut BitReader<'_>, count: usize, centroids: usize) -> Result<Vec<Code>> {
    let width = code_width(centroids) as u32;
    (0..count)
        .map(|_| {
            let c = r.read(width).ok_or_else(|| Error::Malformed("code stream too short".into()))?;
            if c as usize >= centroids {
                return Err(Error::Malformed(format!("code {c} out of range for {centroids} centroids")));
            }
            Ok(c as Code)
        })
        .collect()
}

fn read_table(input: &mut In<'_>) -> Result<EmbeddingScheme> {
    let scheme = input.u8()?;
    let n = input.usize64()?;
    let d = input.usize32()?;
    let subspaces = input.usize32()?;
    let m = input.usize32()?;
    let boundaries = if m > 0 {
        (0..=m).map(|_| input.usize64()).collect::<Result<Vec<_>>>()?
    } else {
        Vec::new()
    };
    let centroids = (0..m).map(|_| input.usize32()).collect::<Result<Vec<_>>>()?;
    let tier_subspaces = (0..m).map(|_| input.usize32()).collect::<Result<Vec<_>>>()?;
    let variant = input.u8()?;
    let extra = input.u32()?;
    let (code_bits, code_bytes) = input.code_stream()?;
    let floats = input.floats()?;
    let mut reader = BitReader::new(code_bytes);

    let table = match scheme {
        0 => {
            expect_len("full table", floats.len(), n * d)?;
            EmbeddingScheme::Full(FullEmbedding::from_table(matrix(n, d, floats)?))
        }
        1 => {
            let r = extra as usize;
            expect_len("low-rank factors", floats.len(), n * r + r * d)?;
            let q = floats[n * r..].to_vec();
            let mut p = floats;
            p.truncate(n * r);
            EmbeddingScheme::LowRank(LowRankEmbedding::from_factors(matrix(n, r, p)?, matrix(r, d, q)?).map_err(malformed)?)
        }
        2 => {
            let bits = extra;
            if !(1..=16).contains(&bits) {
                return Err(Error::Malformed(format!("scalar bit width {bits}")));
            }
            expect_len("scalar min/max", floats.len(), 2 * d)?;
            if code_bits != (n * d) as u64 * u64::from(bits) {
                return Err(Error::Malformed("scalar code stream length".into()));
            }
            let codes = (0..n * d)
                .map(|_| reader.read(bits).map(|c| c as u16))
                .collect::<Option<Vec<_>>>()
                .ok_or_else(|| Error::Malformed("code stream too short".into()))?;
            let maxs = floats[d..].to_vec();
            let mut mins = floats;
            mins.truncate(d);
            EmbeddingScheme::ScalarQuantized(ScalarQuantizedState::Frozen(
                ScalarQuantizedEmbedding::from_parts(bits, matrix_u16(n, d, codes)?, mins, maxs).map_err(malformed)?,
            ))
        }
        3 => {
            if m != 1 || boundaries != [0, n] || tier_subspaces != [subspaces] {
                return Err(Error::Malformed("DPQ table must have exactly one tier".into()));
            }
            let k = centroids[0];
            let expected_bits = (n * subspaces) as u64 * code_width(k);
            if code_bits != expected_bits {
                return Err(Error::Malformed("DPQ code stream length".into()));
            }
            let cb = codebook(d, subspaces, k, floats)?;
            let codes = read_codes(&mut reader, n * subspaces, k)?;
            EmbeddingScheme::Dpq(DpqEmbedding::from_codes(n, cb, codes).map_err(malformed)?)
        }
        4 => {
            let variant = MgqeVariant::from_tag(variant)
                .ok_or_else(|| Error::Malformed(format!("unknown MGQE variant {variant}")))?;
            let partition =
                TierPartition::new(boundaries, centroids, tier_subspaces, variant).map_err(malformed)?;
            if partition.len() != n {
                return Err(Error::Malformed("tier boundaries do not cover the table".into()));
            }
            let expected_bits: u64 = (0..m)
                .map(|t| (partition.tier_len(t) * partition.subspaces()[t]) as u64 * code_width(partition.centroids()[t]))
                .sum();
            if code_bits != expected_bits {
                return Err(Error::Malformed("MGQE code stream length".into()));
            }
            let mut tier_codes: Vec<Vec<Code>> = Vec::with_capacity(m);
            for t in 0..m {
                let count = partition.tier_len(t) * partition.subspaces()[t];
                tier_codes.push(read_codes(&mut reader, count, partition.centroids()[t])?);
            }
            let instances = if variant == MgqeVariant::SharedVarK {
                let k = partition.centroids()[0];
                expect_len("shared codebook", floats.len(), k * d)?;
                let cb = codebook(d, subspaces, k, floats)?;
                vec![DpqEmbedding::from_codes(n, cb, tier_codes.concat()).map_err(malformed)?]
            } else {
                let total: usize = partition.centroids().iter().map(|&k| k * d).sum();
                expect_len("tier codebooks", floats.len(), total)?;
                let mut offset = 0;
                let mut instances = Vec::with_capacity(m);
                for (t, codes) in tier_codes.into_iter().enumerate() {
                    let k = partition.centroids()[t];
                    let cb = codebook(d, partition.subspaces()[t], k, floats[offset..offset + k * d].to_vec())?;
                    offset += k * d;
                    instances.push(DpqEmbedding::from_codes(partition.tier_len(t), cb, codes).map_err(malformed)?);
                }
                instances
            };
            EmbeddingScheme::Mgqe(MgqeEmbedding::from_instances(partition, instances).map_err(malformed)?)
        }
        other => return Err(Error::Malformed(format!("unknown scheme tag {other}"))),
    };
    if table.len() != n || table.dim() != d {
        return Err(Error::Malformed("table shape disagrees with its header".into()));
    }
    Ok(table)
}

fn matrix_u16(rows: usize, cols: usize, values: Vec<u16>) -> Result<Array2<u16>> {
    Array2::from_shape_vec((rows, cols), values).map_err(|_| Error::Malformed("scalar code block shape".into()))
}

fn codebook(d: usize, subspaces: usize, centroids: usize, floats: Vec<f32>) -> Result<CodebookSet> {
    if subspaces == 0 || d % subspaces != 0 {
        return Err(Error::Malformed(format!("{subspaces} subspaces do not divide d = {d}")));
    }
    let values = matrix(subspaces * centroids, d / subspaces, floats)?;
    CodebookSet::new(d, subspaces, centroids, values).map_err(malformed)
}

/// Parses a packed model, validating magic, version, length and checksum in
/// that order.
pub fn decode(bytes: &[u8]) -> Result<AnyModel> {
    let mut input = In { bytes, pos: 0 };
    if input.take(4)? != MAGIC {
        return Err(Error::BadMagic);
    }
    let version = input.u32()?;
    if version != VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let total = input.usize64()?;
    if bytes.len() < total {
        return Err(Error::Truncated {
            offset: bytes.len(),
            needed: total - bytes.len(),
        });
    }
    if bytes.len() > total {
        return Err(Error::Malformed(format!("{} bytes after the checksum", bytes.len() - total)));
    }
    if total < 16 + 8 {
        return Err(Error::Malformed("file length too small".into()));
    }
    let body = &bytes[..total - 8];
    let stored = u64::from_le_bytes(bytes[total - 8..].try_into().expect("8 bytes"));
    let computed = checksum(body);
    if stored != computed {
        return Err(Error::Checksum { stored, computed });
    }
    let mut input = In {
        bytes: body,
        pos: input.pos,
    };
    let kind = ModelKind::from_tag(input.u8()?).ok_or_else(|| Error::Malformed("unknown model tag".into()))?;
    let d = input.usize32()?;
    let count = input.usize32()?;
    let tables = (0..count).map(|_| read_table(&mut input)).collect::<Result<Vec<_>>>()?;
    if tables.iter().any(|t| t.dim() != d) {
        return Err(Error::Malformed("table width differs from model width".into()));
    }
    let dense = input.floats()?;
    let shapes = dense_shapes(kind, d);
    expect_len("dense weights", dense.len(), shapes.iter().map(|(r, c)| r * c).sum())?;
    let mut offset = 0;
    let mut tensors = Vec::with_capacity(shapes.len());
    for (r, c) in shapes {
        tensors.push(matrix(r, c, dense[offset..offset + r * c].to_vec())?);
        offset += r * c;
    }
    if input.pos != body.len() {
        return Err(Error::Malformed("unparsed bytes before the checksum".into()));
    }
    AnyModel::from_parts(kind, tables, tensors).map_err(malformed)
}

#[cfg(test)]
mod tests;
