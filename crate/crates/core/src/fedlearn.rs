//! Federated-learning primitives: parameter vectors, the fp16 wire payload, the
//! synthetic ridge-regression reference task, the local trainer and weighted
//! federated averaging.
//!
//! Round orchestration over the simulated constellation lives in
//! [`crate::sim`], which drives these pure functions from the event loop.

use std::cmp::Ordering;

use half::f16;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::scalar::Scalar;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FedError {
    #[error("parameter vector must be non-empty")]
    EmptyVector,
    #[error("parameter {index} is not finite")]
    NonFinite { index: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("no updates to aggregate")]
    NoUpdates,
    #[error("update {0} has zero samples")]
    ZeroWeight(usize),
    #[error("training diverged at step {step}: |w| = {norm:e} (learning rate too high?)")]
    Diverged { step: usize, norm: f64 },
    #[error("invalid payload: {0}")]
    Payload(&'static str),
    #[error("dataset invalid: {0}")]
    Dataset(&'static str),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamVector<T> {
    values: Vec<T>,
}

impl<T: Scalar> ParamVector<T> {
    pub fn new(values: Vec<T>) -> Result<Self, FedError> {
        if values.is_empty() {
            return Err(FedError::EmptyVector);
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(FedError::NonFinite { index });
        }
        Ok(Self { values })
    }

    pub fn zeros(dim: usize) -> Self {
        assert!(dim > 0);
        Self {
            values: vec![T::zero(); dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn norm(&self) -> T {
        self.values.iter().fold(T::zero(), |a, &v| a + v * v).sqrt()
    }

    /// `‖self − other‖ / ‖other‖`.
    pub fn relative_error(&self, other: &Self) -> T {
        let diff = self
            .values
            .iter()
            .zip(&other.values)
            .fold(T::zero(), |a, (&x, &y)| a + (x - y) * (x - y))
            .sqrt();
        diff / other.norm()
    }

    /// SHA-256 over the little-endian `f64` encoding of the values, hex.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        for v in &self.values {
            h.update(v.as_f64().to_le_bytes());
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Element encoding used on the wire.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WireFormat {
    /// IEEE 754 binary16, round-to-nearest-even.
    #[default]
    Fp16,
    /// Full-precision binary64; disables quantisation.
    F64,
}

impl WireFormat {
    fn version(self) -> u16 {
        match self {
            WireFormat::Fp16 => 1,
            WireFormat::F64 => 2,
        }
    }

    fn from_version(v: u16) -> Option<Self> {
        match v {
            1 => Some(WireFormat::Fp16),
            2 => Some(WireFormat::F64),
            _ => None,
        }
    }

    pub fn element_bytes(self) -> usize {
        match self {
            WireFormat::Fp16 => 2,
            WireFormat::F64 => 8,
        }
    }

    /// Header plus elements.
    pub fn payload_size(self, dim: usize) -> usize {
        HEADER_BYTES + self.element_bytes() * dim
    }
}

pub const PAYLOAD_MAGIC: [u8; 4] = *b"CLFP";
pub const HEADER_BYTES: usize = 16;
pub const FP16_MAX: f64 = 65504.0;

/// Serialized model parameters.
///
/// Layout, little-endian: magic `"CLFP"` (4), version (u16: 1 = fp16,
/// 2 = f64), reserved zero (u16), dim (u32), round id (u32), then `dim`
/// elements.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuantizedPayload {
    bytes: Vec<u8>,
}

impl QuantizedPayload {
    pub fn from_bytes(bytes: Vec<u8>) -> Self {
        Self { bytes }
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.bytes
    }

    pub fn bytes_mut(&mut self) -> &mut [u8] {
        &mut self.bytes
    }

    pub fn byte_size(&self) -> usize {
        self.bytes.len()
    }

    pub fn flip_bit(&mut self, bit: usize) {
        self.bytes[bit / 8] ^= 1 << (bit % 8);
    }

    /// Parses the header, returning `(format, dim, round_id)`.
    pub fn header(&self) -> Result<(WireFormat, usize, u32), FedError> {
        let b = &self.bytes;
        if b.len() < HEADER_BYTES {
            return Err(FedError::Payload("truncated header"));
        }
        if b[0..4] != PAYLOAD_MAGIC {
            return Err(FedError::Payload("bad magic"));
        }
        let format = WireFormat::from_version(u16::from_le_bytes([b[4], b[5]]))
            .ok_or(FedError::Payload("unknown version"))?;
        if u16::from_le_bytes([b[6], b[7]]) != 0 {
            return Err(FedError::Payload("reserved field not zero"));
        }
        let dim = u32::from_le_bytes([b[8], b[9], b[10], b[11]]) as usize;
        let round = u32::from_le_bytes([b[12], b[13], b[14], b[15]]);
        if dim == 0 || b.len() != format.payload_size(dim) {
            return Err(FedError::Payload("length does not match dim"));
        }
        Ok((format, dim, round))
    }
}

/// Encoded payload plus the number of elements clamped to the fp16 range.
#[derive(Clone, Debug, PartialEq)]
pub struct Quantized {
    pub payload: QuantizedPayload,
    pub saturated: usize,
}

/// Round-to-nearest-even binary16 bits of `x`, clamped to ±65504.
pub fn fp16_bits(x: f64) -> (u16, bool) {
    let sign: u16 = if x.is_sign_negative() { 0x8000 } else { 0 };
    let a = x.abs();
    if a > FP16_MAX {
        return (sign | 0x7bff, true);
    }
    let exp = ((a.to_bits() >> 52) & 0x7ff) as i32 - 1023;
    if exp < -14 {
        // subnormal quantum 2^-24; 1024 units lands on the smallest normal
        let units = (a * 2f64.powi(24)).round_ties_even() as u16;
        return (sign | units, false);
    }
    let mut e = exp;
    let mut m = (a * 2f64.powi(10 - e)).round_ties_even() as u16;
    if m == 2048 {
        m = 1024;
        e += 1;
    }
    (sign | (((e + 15) as u16) << 10) | (m - 1024), false)
}

pub fn quantize<T: Scalar>(v: &ParamVector<T>, round_id: u32, format: WireFormat) -> Quantized {
    let dim = v.dim();
    let mut bytes = Vec::with_capacity(format.payload_size(dim));
    bytes.extend_from_slice(&PAYLOAD_MAGIC);
    bytes.extend_from_slice(&format.version().to_le_bytes());
    bytes.extend_from_slice(&0u16.to_le_bytes());
    bytes.extend_from_slice(&(dim as u32).to_le_bytes());
    bytes.extend_from_slice(&round_id.to_le_bytes());
    let mut saturated = 0;
    for &x in v.values() {
        match format {
            WireFormat::Fp16 => {
                let (bits, sat) = fp16_bits(x.as_f64());
                saturated += sat as usize;
                bytes.extend_from_slice(&bits.to_le_bytes());
            }
            WireFormat::F64 => bytes.extend_from_slice(&x.as_f64().to_le_bytes()),
        }
    }
    Quantized {
        payload: QuantizedPayload { bytes },
        saturated,
    }
}

/// Decodes a payload. Non-finite decoded values are rejected as corruption.
pub fn dequantize<T: Scalar>(p: &QuantizedPayload) -> Result<(ParamVector<T>, u32), FedError> {
    let (format, dim, round) = p.header()?;
    let body = &p.as_bytes()[HEADER_BYTES..];
    let values: Vec<T> = match format {
        WireFormat::Fp16 => body
            .chunks_exact(2)
            .map(|c| T::lit(f16::from_bits(u16::from_le_bytes([c[0], c[1]])).to_f64()))
            .collect(),
        WireFormat::F64 => body
            .chunks_exact(8)
            .map(|c| T::lit(f64::from_le_bytes(c.try_into().expect("8 bytes"))))
            .collect(),
    };
    debug_assert_eq!(values.len(), dim);
    Ok((ParamVector::new(values)?, round))
}

/// Synthetic linear-regression data `y = X·w_true + ε`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClientDataset<T> {
    /// Row-major n×d design matrix.
    x: Vec<T>,
    y: Vec<T>,
    dim: usize,
}

impl<T: Scalar> ClientDataset<T> {
    pub fn new(x: Vec<T>, y: Vec<T>, dim: usize) -> Result<Self, FedError> {
        if dim == 0 || y.is_empty() {
            return Err(FedError::Dataset("need at least one sample and one feature"));
        }
        if x.len() != y.len() * dim {
            return Err(FedError::Dataset("design matrix shape does not match targets"));
        }
        if !x.iter().chain(&y).all(|v| v.is_finite()) {
            return Err(FedError::Dataset("non-finite entry"));
        }
        Ok(Self { x, y, dim })
    }

    /// Standard-normal features and Gaussian noise from a seeded stream.
    pub fn synthetic(seed: u64, n: usize, w_true: &[T], noise_std: T) -> Result<Self, FedError> {
        let dim = w_true.len();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = Vec::with_capacity(n * dim);
        let mut y = Vec::with_capacity(n);
        for _ in 0..n {
            let row: Vec<T> = (0..dim)
                .map(|_| T::lit(StandardNormal.sample(&mut rng)))
                .collect();
            let eps: f64 = StandardNormal.sample(&mut rng);
            let target = row.iter().zip(w_true).fold(T::zero(), |a, (&xi, &wi)| a + xi * wi);
            y.push(target + noise_std * T::lit(eps));
            x.extend(row);
        }
        Self::new(x, y, dim)
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.x[i * self.dim..(i + 1) * self.dim]
    }

    pub fn target(&self, i: usize) -> T {
        self.y[i]
    }

    /// Contiguous near-equal split into `parts` client datasets.
    pub fn split(&self, parts: usize) -> Result<Vec<Self>, FedError> {
        if parts == 0 || parts > self.len() {
            return Err(FedError::Dataset("cannot split into that many parts"));
        }
        let n = self.len();
        (0..parts)
            .map(|p| {
                let (lo, hi) = (p * n / parts, (p + 1) * n / parts);
                Self::new(
                    self.x[lo * self.dim..hi * self.dim].to_vec(),
                    self.y[lo..hi].to_vec(),
                    self.dim,
                )
            })
            .collect()
    }

    /// Gradient of `(1/2n)‖Xw − y‖² + (l2/2)‖w‖²`.
    pub fn gradient(&self, w: &[T], l2: T) -> Vec<T> {
        let n = T::count(self.len() as u64);
        let mut g = vec![T::zero(); self.dim];
        for i in 0..self.len() {
            let row = self.row(i);
            let resid = row.iter().zip(w).fold(T::zero(), |a, (&x, &wi)| a + x * wi) - self.y[i];
            for (gj, &xj) in g.iter_mut().zip(row) {
                *gj = *gj + xj * resid;
            }
        }
        g.iter_mut().zip(w).for_each(|(gj, &wj)| *gj = *gj / n + l2 * wj);
        g
    }
}

/// Norm beyond which training is declared divergent.
pub const DIVERGENCE_NORM: f64 = 1e8;

/// `steps` full-batch gradient-descent updates on the ridge objective.
pub fn local_train<T: Scalar>(
    w: &ParamVector<T>,
    data: &ClientDataset<T>,
    steps: usize,
    lr: T,
    l2: T,
) -> Result<ParamVector<T>, FedError> {
    if w.dim() != data.dim() {
        return Err(FedError::DimMismatch {
            expected: data.dim(),
            got: w.dim(),
        });
    }
    let mut cur = w.values.clone();
    for step in 0..steps {
        let g = data.gradient(&cur, l2);
        cur.iter_mut().zip(&g).for_each(|(c, &gi)| *c = *c - lr * gi);
        let norm = cur.iter().fold(T::zero(), |a, &v| a + v * v).sqrt();
        if !(norm.as_f64() <= DIVERGENCE_NORM) {
            return Err(FedError::Diverged {
                step: step + 1,
                norm: norm.as_f64(),
            });
        }
    }
    ParamVector::new(cur)
}

/// Sample-size-weighted mean `Σ (n_k/N)·w_k`.
///
/// Updates are combined in a canonical order so the result does not depend on
/// the order they arrived in, and identical updates average to themselves.
pub fn fedavg<T: Scalar>(updates: &[(ParamVector<T>, u64)]) -> Result<ParamVector<T>, FedError> {
    let first = updates.first().ok_or(FedError::NoUpdates)?;
    let dim = first.0.dim();
    for (i, (w, n)) in updates.iter().enumerate() {
        if w.dim() != dim {
            return Err(FedError::DimMismatch { expected: dim, got: w.dim() });
        }
        if *n == 0 {
            return Err(FedError::ZeroWeight(i));
        }
    }
    let mut order: Vec<&(ParamVector<T>, u64)> = updates.iter().collect();
    order.sort_by(|a, b| {
        a.1.cmp(&b.1).then_with(|| {
            a.0.values
                .iter()
                .zip(&b.0.values)
                .map(|(x, y)| x.as_f64().total_cmp(&y.as_f64()))
                .find(|o| *o != Ordering::Equal)
                .unwrap_or(Ordering::Equal)
        })
    });
    let total = T::count(order.iter().map(|u| u.1).sum());
    let base = &order[0].0.values;
    let mut acc = vec![T::zero(); dim];
    for (w, n) in &order[1..] {
        let weight = T::count(*n) / total;
        for (a, (&x, &b)) in acc.iter_mut().zip(w.values.iter().zip(base)) {
            *a = *a + weight * (x - b);
        }
    }
    ParamVector::new(base.iter().zip(&acc).map(|(&b, &a)| b + a).collect())
}

/// Synchronous federated round configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundPlan {
    /// Ground station that holds the global model.
    pub server: crate::ActorId,
    pub clients: Vec<crate::ActorId>,
    /// Updates needed before the server aggregates.
    pub quorum: usize,
    pub local_steps: usize,
    pub learning_rate: f64,
    pub l2: f64,
}

impl RoundPlan {
    pub fn validate(&self) -> Result<(), String> {
        if self.clients.is_empty() {
            return Err("clients must not be empty".into());
        }
        let mut sorted = self.clients.clone();
        sorted.sort();
        sorted.dedup();
        if sorted.len() != self.clients.len() {
            return Err("clients must be distinct".into());
        }
        if self.clients.contains(&self.server) {
            return Err("server cannot also be a client".into());
        }
        if self.quorum < 1 || self.quorum > self.clients.len() {
            return Err(format!("quorum must be in 1..={}, got {}", self.clients.len(), self.quorum));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err("learning_rate must be positive".into());
        }
        if !(self.l2 >= 0.0 && self.l2.is_finite()) {
            return Err("l2 must be non-negative".into());
        }
        Ok(())
    }
}

/// Seeded ridge-regression task shared out across clients.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticTask {
    pub dim: usize,
    pub samples_per_client: usize,
    pub noise_std: f64,
    pub seed: u64,
}

impl SyntheticTask {
    /// Ground-truth weights, uniform in [-1, 1).
    pub fn true_weights(&self) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ 0x5eed_5eed_5eed_5eed);
        (0..self.dim).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    /// All clients' samples as one dataset, client 0 first.
    pub fn pooled(&self, clients: usize) -> Result<ClientDataset<f64>, FedError> {
        if self.dim == 0 || self.samples_per_client == 0 || clients == 0 {
            return Err(FedError::Dataset("dim, samples_per_client and clients must be positive"));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(FedError::Dataset("noise_std must be non-negative"));
        }
        ClientDataset::synthetic(self.seed, clients * self.samples_per_client, &self.true_weights(), self.noise_std)
    }

    pub fn client_splits(&self, clients: usize) -> Result<Vec<ClientDataset<f64>>, FedError> {
        self.pooled(clients)?.split(clients)
    }
}
