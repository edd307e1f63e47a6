//! Compression operators for client uplinks.
//!
//! Three unbiased operators (identity, stochastic affine quantizer, rand-k)
//! satisfy `E[Q(x) | x] = x` with `E||Q(x) - x||^2 <= q ||x||^2`. Top-k is
//! biased and only legal inside the sparsified-with-memory variant.
//!
//! Messages carry full-precision values in memory. Their accounted size and
//! their on-disk encoding use 32-bit floats for every real scalar.

use std::collections::HashMap;
use std::sync::{Mutex, OnceLock};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, ModelVector};
use crate::rng::{derive_stream, stream_ids, RngStream};

/// Bits used for one real scalar on the wire.
pub const FLOAT_BITS: u64 = 32;

const MAX_QUANTIZER_BITS: u32 = 16;

/// Operator family and its size parameter, independent of dimension.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum CompressorKind {
    Identity,
    /// Affine grid over `[min(x), max(x)]` with `2^bits` levels.
    StochasticQuantizer { bits: u32 },
    /// Keep `k` uniformly chosen coordinates, rescaled by `d / k`.
    RandK { k: usize },
    /// Keep the `k` largest magnitudes (biased).
    TopK { k: usize },
}

impl CompressorKind {
    pub fn name(&self) -> &'static str {
        match self {
            CompressorKind::Identity => "identity",
            CompressorKind::StochasticQuantizer { .. } => "stochastic-quantizer",
            CompressorKind::RandK { .. } => "rand-k",
            CompressorKind::TopK { .. } => "top-k",
        }
    }

    fn wire_tag(&self) -> u8 {
        match self {
            CompressorKind::Identity => 0,
            CompressorKind::StochasticQuantizer { .. } => 1,
            CompressorKind::RandK { .. } => 2,
            CompressorKind::TopK { .. } => 3,
        }
    }

    fn wire_param(&self) -> u32 {
        match *self {
            CompressorKind::Identity => 0,
            CompressorKind::StochasticQuantizer { bits } => bits,
            CompressorKind::RandK { k } | CompressorKind::TopK { k } => k as u32,
        }
    }
}

/// A compressor bound to a vector dimension.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct CompressorSpec {
    kind: CompressorKind,
    dim: usize,
}

/// Encoded contents of a compressed message.
#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    Dense(Vec<f64>),
    Quantized {
        min: f64,
        max: f64,
        bits: u32,
        codes: Vec<u32>,
    },
    /// `(index, value)` pairs in ascending index order. Values are already
    /// rescaled where the operator requires it.
    Sparse(Vec<(u32, f64)>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompressedMessage {
    pub kind: CompressorKind,
    pub origin_dim: usize,
    pub payload: Payload,
    pub bit_size: u64,
}

impl CompressedMessage {
    /// Uncompressed message carrying `values` at full wire width.
    pub fn dense(values: Vec<f64>) -> Self {
        let d = values.len();
        Self {
            kind: CompressorKind::Identity,
            origin_dim: d,
            payload: Payload::Dense(values),
            bit_size: d as u64 * FLOAT_BITS,
        }
    }
}

fn index_bits(d: usize) -> u64 {
    if d <= 1 {
        0
    } else {
        u64::from(usize::BITS - (d - 1).leading_zeros())
    }
}

impl CompressorSpec {
    pub fn new(kind: CompressorKind, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::config("compressor", "dimension must be at least 1"));
        }
        match kind {
            CompressorKind::Identity => {}
            CompressorKind::StochasticQuantizer { bits } => {
                if bits == 0 || bits > MAX_QUANTIZER_BITS {
                    return Err(Error::config(
                        "compressor.bits",
                        format!("must be in 1..={MAX_QUANTIZER_BITS}, got {bits}"),
                    ));
                }
            }
            CompressorKind::RandK { k } | CompressorKind::TopK { k } => {
                if k == 0 || k > dim {
                    return Err(Error::config(
                        "compressor.k",
                        format!("must be in 1..={dim}, got {k}"),
                    ));
                }
            }
        }
        Ok(Self { kind, dim })
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            kind: CompressorKind::Identity,
            dim,
        }
    }

    pub fn kind(&self) -> CompressorKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_unbiased(&self) -> bool {
        !matches!(self.kind, CompressorKind::TopK { .. })
    }

    /// Closed-form distortion constant, when one exists.
    ///
    /// The quantizer has none; use [`CompressorSpec::resolve_q`] for a
    /// measured value. Top-k is biased and has no `q`.
    pub fn declared_q(&self) -> Option<f64> {
        match self.kind {
            CompressorKind::Identity => Some(0.0),
            CompressorKind::RandK { k } => Some(self.dim as f64 / k as f64 - 1.0),
            CompressorKind::StochasticQuantizer { .. } | CompressorKind::TopK { .. } => None,
        }
    }

    /// Declared `q`, or a cached calibration for the quantizer.
    pub fn resolve_q(&self, seed: u64) -> Result<f64> {
        if let Some(q) = self.declared_q() {
            return Ok(q);
        }
        if !self.is_unbiased() {
            return Err(Error::Unsupported(format!(
                "{} is biased and has no distortion constant",
                self.kind.name()
            )));
        }
        static CACHE: OnceLock<Mutex<HashMap<(CompressorSpec, u64), f64>>> = OnceLock::new();
        let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
        if let Some(q) = cache.lock().unwrap().get(&(*self, seed)) {
            return Ok(*q);
        }
        let q = self.calibrate_q(16, 256, seed)?;
        cache.lock().unwrap().insert((*self, seed), q);
        Ok(q)
    }

    /// Mean distortion ratio over `n_vectors` standard Gaussian inputs.
    pub fn calibrate_q(&self, n_vectors: usize, n_samples: usize, seed: u64) -> Result<f64> {
        let mut rng = derive_stream(seed, stream_ids::CALIBRATION, self.dim as u64);
        let mut total = 0.0;
        for _ in 0..n_vectors {
            let x: ModelVector = (0..self.dim)
                .map(|_| rng.sample::<f64, _>(StandardNormal))
                .collect();
            total += estimate_q(self, &x, n_samples, &mut rng)?;
        }
        Ok(total / n_vectors as f64)
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::Dimension {
                expected: self.dim,
                actual: x.len(),
            });
        }
        Ok(())
    }

    pub fn compress(&self, x: &[f64], rng: &mut RngStream) -> Result<CompressedMessage> {
        self.check_dim(x)?;
        let payload = match self.kind {
            CompressorKind::Identity => Payload::Dense(x.to_vec()),
            CompressorKind::StochasticQuantizer { bits } => quantize(x, bits, rng),
            CompressorKind::RandK { k } => {
                let mut support = rand::seq::index::sample(rng, self.dim, k).into_vec();
                support.sort_unstable();
                return self.compress_with_support(x, &support);
            }
            CompressorKind::TopK { k } => Payload::Sparse(top_k(x, k)),
        };
        Ok(self.seal(payload))
    }

    /// Rand-k with a caller-chosen support; every kept value is scaled by
    /// `d / k`. `support` must hold `k` distinct indices.
    pub fn compress_with_support(&self, x: &[f64], support: &[usize]) -> Result<CompressedMessage> {
        self.check_dim(x)?;
        let CompressorKind::RandK { k } = self.kind else {
            return Err(Error::Unsupported(format!(
                "explicit support requires rand-k, not {}",
                self.kind.name()
            )));
        };
        if support.len() != k {
            return Err(Error::config("support", format!("expected {k} indices")));
        }
        let scale = self.dim as f64 / k as f64;
        let mut entries = Vec::with_capacity(k);
        for &i in support {
            if i >= self.dim {
                return Err(Error::config("support", format!("index {i} out of range")));
            }
            entries.push((i as u32, x[i] * scale));
        }
        entries.sort_unstable_by_key(|e| e.0);
        if entries.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(Error::config("support", "indices must be distinct"));
        }
        Ok(self.seal(Payload::Sparse(entries)))
    }

    fn seal(&self, payload: Payload) -> CompressedMessage {
        CompressedMessage {
            kind: self.kind,
            origin_dim: self.dim,
            payload,
            bit_size: self.message_bits(),
        }
    }

    /// Exact payload size of any message this compressor emits.
    pub fn message_bits(&self) -> u64 {
        let d = self.dim as u64;
        match self.kind {
            CompressorKind::Identity => d * FLOAT_BITS,
            CompressorKind::StochasticQuantizer { bits } => 2 * FLOAT_BITS + d * u64::from(bits),
            CompressorKind::RandK { k } | CompressorKind::TopK { k } => {
                k as u64 * (index_bits(self.dim) + FLOAT_BITS)
            }
        }
    }
}

fn quantize(x: &[f64], bits: u32, rng: &mut RngStream) -> Payload {
    let min = x.iter().copied().fold(f64::INFINITY, f64::min);
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let top = (1u32 << bits) - 1;
    let codes = if max > min {
        let step = (max - min) / f64::from(top);
        x.iter()
            .map(|&v| {
                if v >= max {
                    return top;
                }
                let t = (v - min) / step;
                let lo = (t.floor().max(0.0) as u32).min(top - 1);
                let frac = t - f64::from(lo);
                let u: f64 = rng.random();
                if u < frac {
                    lo + 1
                } else {
                    lo
                }
            })
            .collect()
    } else {
        // Constant vector: every entry sits on the (single) grid point.
        vec![0; x.len()]
    };
    Payload::Quantized {
        min,
        max,
        bits,
        codes,
    }
}

fn top_k(x: &[f64], k: usize) -> Vec<(u32, f64)> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    // Larger magnitude first; equal magnitudes keep the lower index.
    order.sort_by(|&a, &b| x[b].abs().total_cmp(&x[a].abs()).then(a.cmp(&b)));
    let mut kept: Vec<(u32, f64)> = order[..k].iter().map(|&i| (i as u32, x[i])).collect();
    kept.sort_unstable_by_key(|e| e.0);
    kept
}

/// Dense vector represented by `msg`.
pub fn decompress(msg: &CompressedMessage) -> Result<ModelVector> {
    let d = msg.origin_dim;
    match &msg.payload {
        Payload::Dense(values) => {
            if values.len() != d {
                return Err(Error::Decode(format!(
                    "dense payload has {} values for dimension {d}",
                    values.len()
                )));
            }
            Ok(values.clone())
        }
        Payload::Quantized {
            min,
            max,
            bits,
            codes,
        } => {
            if codes.len() != d {
                return Err(Error::Decode(format!(
                    "{} codes for dimension {d}",
                    codes.len()
                )));
            }
            if *bits == 0 || *bits > MAX_QUANTIZER_BITS {
                return Err(Error::Decode(format!("unsupported bit width {bits}")));
            }
            let top = (1u32 << bits) - 1;
            let step = (max - min) / f64::from(top);
            codes
                .iter()
                .map(|&c| {
                    if c > top {
                        Err(Error::Decode(format!("code {c} exceeds level {top}")))
                    } else if c == top {
                        Ok(*max)
                    } else {
                        Ok(min + f64::from(c) * step)
                    }
                })
                .collect()
        }
        Payload::Sparse(entries) => {
            let mut out = vec![0.0; d];
            for &(i, v) in entries {
                let slot = out.get_mut(i as usize).ok_or_else(|| {
                    Error::Decode(format!("index {i} out of range for dimension {d}"))
                })?;
                *slot = v;
            }
            Ok(out)
        }
    }
}

pub fn payload_bits(msg: &CompressedMessage) -> u64 {
    msg.bit_size
}

/// Monte Carlo estimate of `E||Q(x) - x||^2 / ||x||^2`.
pub fn estimate_q(
    spec: &CompressorSpec,
    x: &[f64],
    n_samples: usize,
    rng: &mut RngStream,
) -> Result<f64> {
    spec.check_dim(x)?;
    if n_samples == 0 {
        return Err(Error::config("n_samples", "must be at least 1"));
    }
    let denom = linalg::norm_sq(x);
    if denom == 0.0 {
        return Err(Error::UndefinedRatio);
    }
    let mut total = 0.0;
    for _ in 0..n_samples {
        let y = decompress(&spec.compress(x, rng)?)?;
        total += y.iter().zip(x).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
    }
    Ok(total / n_samples as f64 / denom)
}

/// Monte Carlo estimate of
/// `E[ ||mean_j Q(x_j)||^2 - ||Q(mean_j x_j)||^2 ]`.
///
/// Each sample draws fresh, independent compressions for every term and
/// differences them before averaging. The result may be negative.
///
/// For unbiased kinds both norms are taken around the exact mean, which
/// leaves the expectation unchanged (the cross terms vanish) and removes
/// most of the sampling noise. Biased kinds use the raw norms.
pub fn measure_gq(
    spec: &CompressorSpec,
    vectors: &[&[f64]],
    n_samples: usize,
    rng: &mut RngStream,
) -> Result<f64> {
    if vectors.is_empty() {
        return Err(Error::config("vectors", "at least one vector is required"));
    }
    if n_samples == 0 {
        return Err(Error::config("n_samples", "must be at least 1"));
    }
    for v in vectors {
        spec.check_dim(v)?;
    }
    let avg = linalg::mean(vectors);
    let center = if spec.is_unbiased() {
        avg.clone()
    } else {
        vec![0.0; avg.len()]
    };
    let mut total = 0.0;
    for _ in 0..n_samples {
        let compressed = vectors
            .iter()
            .map(|v| decompress(&spec.compress(v, rng)?))
            .collect::<Result<Vec<_>>>()?;
        let refs: Vec<&[f64]> = compressed.iter().map(Vec::as_slice).collect();
        let mean_of_compressed = linalg::mean(&refs);
        let compressed_mean = decompress(&spec.compress(&avg, rng)?)?;
        total += linalg::norm_sq(&linalg::sub(&mean_of_compressed, &center))
            - linalg::norm_sq(&linalg::sub(&compressed_mean, &center));
    }
    Ok(total / n_samples as f64)
}

// On-disk record:
//   [kind: u8][d: u32 LE][param: u32 LE][bitstream, zero-padded to a byte]
// `param` is the bit width for the quantizer, k for sparsifiers, 0 otherwise.
// The bitstream is exactly `bit_size` bits, least significant bit first:
//   identity:  d f32 values
//   quantizer: min f32, max f32, then d codes of `bits` bits
//   sparse:    k pairs of (index in ceil(log2 d) bits, f32 value)

/// Bytes preceding the payload bitstream in an encoded record.
pub const HEADER_BYTES: usize = 9;

struct BitWriter {
    bytes: Vec<u8>,
    used: u64,
}

impl BitWriter {
    fn new() -> Self {
        Self {
            bytes: Vec::new(),
            used: 0,
        }
    }

    fn put(&mut self, value: u64, width: u64) {
        for bit in 0..width {
            if self.used.is_multiple_of(8) {
                self.bytes.push(0);
            }
            if (value >> bit) & 1 == 1 {
                let last = self.bytes.len() - 1;
                self.bytes[last] |= 1 << (self.used % 8);
            }
            self.used += 1;
        }
    }

    fn put_f32(&mut self, v: f64) {
        self.put(u64::from((v as f32).to_bits()), FLOAT_BITS);
    }
}

struct BitReader<'a> {
    bytes: &'a [u8],
    pos: u64,
}

impl BitReader<'_> {
    fn take(&mut self, width: u64) -> Result<u64> {
        let mut value = 0u64;
        for bit in 0..width {
            let byte = self
                .bytes
                .get((self.pos / 8) as usize)
                .ok_or_else(|| Error::Decode("truncated payload".into()))?;
            if (byte >> (self.pos % 8)) & 1 == 1 {
                value |= 1 << bit;
            }
            self.pos += 1;
        }
        Ok(value)
    }

    fn take_f32(&mut self) -> Result<f64> {
        Ok(f64::from(f32::from_bits(self.take(FLOAT_BITS)? as u32)))
    }
}

/// Serializes a message; the result is `HEADER_BYTES + ceil(bit_size / 8)` long.
pub fn encode(msg: &CompressedMessage) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_BYTES + msg.bit_size.div_ceil(8) as usize);
    out.push(msg.kind.wire_tag());
    out.extend_from_slice(&(msg.origin_dim as u32).to_le_bytes());
    out.extend_from_slice(&msg.kind.wire_param().to_le_bytes());
    let mut w = BitWriter::new();
    match &msg.payload {
        Payload::Dense(values) => values.iter().for_each(|&v| w.put_f32(v)),
        Payload::Quantized {
            min,
            max,
            bits,
            codes,
        } => {
            w.put_f32(*min);
            w.put_f32(*max);
            for &c in codes {
                w.put(u64::from(c), u64::from(*bits));
            }
        }
        Payload::Sparse(entries) => {
            let width = index_bits(msg.origin_dim);
            for &(i, v) in entries {
                w.put(u64::from(i), width);
                w.put_f32(v);
            }
        }
    }
    debug_assert_eq!(w.used, msg.bit_size);
    out.extend_from_slice(&w.bytes);
    out
}

/// Parses a record produced by [`encode`]. Real scalars come back rounded
/// to 32-bit precision.
pub fn decode(bytes: &[u8]) -> Result<CompressedMessage> {
    if bytes.len() < HEADER_BYTES {
        return Err(Error::Decode("record shorter than header".into()));
    }
    let tag = bytes[0];
    let dim = u32::from_le_bytes(bytes[1..5].try_into().unwrap()) as usize;
    let param = u32::from_le_bytes(bytes[5..9].try_into().unwrap());
    let kind = match tag {
        0 => CompressorKind::Identity,
        1 => CompressorKind::StochasticQuantizer { bits: param },
        2 => CompressorKind::RandK { k: param as usize },
        3 => CompressorKind::TopK { k: param as usize },
        other => return Err(Error::Decode(format!("unknown kind tag {other}"))),
    };
    let spec = CompressorSpec::new(kind, dim).map_err(|e| Error::Decode(e.to_string()))?;
    let bit_size = spec.message_bits();
    let body = &bytes[HEADER_BYTES..];
    if body.len() as u64 != bit_size.div_ceil(8) {
        return Err(Error::Decode(format!(
            "payload is {} bytes, expected {}",
            body.len(),
            bit_size.div_ceil(8)
        )));
    }
    let mut r = BitReader { bytes: body, pos: 0 };
    let payload = match kind {
        CompressorKind::Identity => {
            Payload::Dense((0..dim).map(|_| r.take_f32()).collect::<Result<_>>()?)
        }
        CompressorKind::StochasticQuantizer { bits } => {
            let min = r.take_f32()?;
            let max = r.take_f32()?;
            let codes = (0..dim)
                .map(|_| r.take(u64::from(bits)).map(|c| c as u32))
                .collect::<Result<_>>()?;
            Payload::Quantized {
                min,
                max,
                bits,
                codes,
            }
        }
        CompressorKind::RandK { k } | CompressorKind::TopK { k } => {
            let width = index_bits(dim);
            let mut entries = Vec::with_capacity(k);
            for _ in 0..k {
                let i = r.take(width)? as u32;
                if i as usize >= dim {
                    return Err(Error::Decode(format!("index {i} out of range")));
                }
                entries.push((i, r.take_f32()?));
            }
            Payload::Sparse(entries)
        }
    };
    Ok(CompressedMessage {
        kind,
        origin_dim: dim,
        payload,
        bit_size,
    })
}
