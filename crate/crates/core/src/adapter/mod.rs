//! Linear projection adapter over frozen embeddings and its contrastive loss.

mod train;

use std::fs;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::embedding::{EmbedError, EmbeddingVector};
use crate::scalar::{dot, l2_norm, Scalar};

pub use train::{train_adapter, train_on_vectors, TrainConfig, TrainExample, TrainLog};

const MAGIC: &[u8; 8] = b"DBRADP01";

/// Standard deviation of the initial noise added to the identity (variance 1e-4).
pub const INIT_NOISE_STD: f64 = 0.01;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("zero vector has no direction")]
    ZeroVector,
    #[error("label must be 0 or 1, got {0}")]
    Label(u8),
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("training pairs need both positive and negative labels")]
    OneClass,
    #[error("no training pairs")]
    NoPairs,
    #[error("loss became non-finite at epoch {epoch}, step {step}")]
    Divergence { epoch: usize, step: usize },
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error("adapter file {path}: {message}")]
    File { path: String, message: String },
}

/// Which reading of the contrastive loss to optimize.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossMode {
    /// With d = 1 - cos: 0.5 (l d² + (1 - l) relu(m - d)²).
    #[default]
    DistanceStandard,
    /// 0.5 (l cos² + (1 - l) relu(m - cos²)), as the formula is usually printed.
    PaperLiteral,
}

impl FromStr for LossMode {
    type Err = TrainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "distance-standard" => Ok(LossMode::DistanceStandard),
            "paper-literal" => Ok(LossMode::PaperLiteral),
            _ => Err(TrainError::Config(format!(
                "unknown loss mode `{s}` (expected distance-standard or paper-literal)"
            ))),
        }
    }
}

impl LossMode {
    pub fn as_str(self) -> &'static str {
        match self {
            LossMode::DistanceStandard => "distance-standard",
            LossMode::PaperLiteral => "paper-literal",
        }
    }
}

/// Loss and its derivative with respect to the cosine.
pub fn loss_from_cos<T: Scalar>(c: T, label: u8, margin: T, mode: LossMode) -> Result<(T, T), TrainError> {
    let l = match label {
        0 => T::zero(),
        1 => T::one(),
        x => return Err(TrainError::Label(x)),
    };
    let one = T::one();
    let half = T::HALF;
    Ok(match mode {
        LossMode::DistanceStandard => {
            let d = one - c;
            let slack = (margin - d).max(T::zero());
            let loss = half * (l * d * d + (one - l) * slack * slack);
            (loss, -l * d + (one - l) * slack)
        }
        LossMode::PaperLiteral => {
            let active = if margin - c * c > T::zero() { one } else { T::zero() };
            let loss = half * (l * c * c + (one - l) * (margin - c * c).max(T::zero()));
            (loss, l * c - (one - l) * c * active)
        }
    })
}

fn cos_parts<T: Scalar>(zi: &[T], zj: &[T]) -> Result<(T, T, T), TrainError> {
    if zi.len() != zj.len() {
        return Err(TrainError::DimensionMismatch {
            expected: zi.len(),
            got: zj.len(),
        });
    }
    let (ni, nj) = (l2_norm(zi), l2_norm(zj));
    if ni == T::zero() || nj == T::zero() {
        return Err(TrainError::ZeroVector);
    }
    Ok((dot(zi, zj) / (ni * nj), ni, nj))
}

/// Contrastive loss between two (projected) embeddings.
pub fn contrastive_loss<T: Scalar>(zi: &[T], zj: &[T], label: u8, margin: T, mode: LossMode) -> Result<T, TrainError> {
    let (c, _, _) = cos_parts(zi, zj)?;
    Ok(loss_from_cos(c, label, margin, mode)?.0)
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
struct Header {
    d_out: usize,
    d_in: usize,
    margin: f64,
    mode: LossMode,
    seed: u64,
    digest: String,
}

/// z = W e, followed by L2 normalization when applied to embeddings.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearAdapter<T: Scalar> {
    d_out: usize,
    d_in: usize,
    /// Row-major d_out × d_in.
    weight: Vec<T>,
    margin: T,
    mode: LossMode,
    seed: u64,
}

impl<T: Scalar> LinearAdapter<T> {
    pub fn from_weights(
        d_out: usize,
        d_in: usize,
        weight: Vec<T>,
        margin: T,
        mode: LossMode,
        seed: u64,
    ) -> Result<Self, TrainError> {
        if d_out == 0 || d_in == 0 {
            return Err(TrainError::Config("adapter dimensions must be at least 1".into()));
        }
        if weight.len() != d_out * d_in {
            return Err(TrainError::DimensionMismatch {
                expected: d_out * d_in,
                got: weight.len(),
            });
        }
        if margin <= T::zero() || !margin.is_finite() {
            return Err(TrainError::Config(format!("margin must be positive, got {margin}")));
        }
        if weight.iter().any(|w| !w.is_finite()) {
            return Err(TrainError::Config("non-finite adapter weight".into()));
        }
        Ok(LinearAdapter {
            d_out,
            d_in,
            weight,
            margin,
            mode,
            seed,
        })
    }

    pub fn identity(dim: usize, margin: T, mode: LossMode) -> Result<Self, TrainError> {
        let mut w = vec![T::zero(); dim * dim];
        for i in 0..dim {
            w[i * dim + i] = T::one();
        }
        Self::from_weights(dim, dim, w, margin, mode, 0)
    }

    /// Identity plus seeded Gaussian noise of standard deviation [`INIT_NOISE_STD`].
    pub fn init(dim: usize, margin: T, mode: LossMode, seed: u64) -> Result<Self, TrainError> {
        let mut a = Self::identity(dim, margin, mode)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, INIT_NOISE_STD).expect("valid normal");
        for w in &mut a.weight {
            *w += T::of(noise.sample(&mut rng));
        }
        a.seed = seed;
        Ok(a)
    }

    pub fn d_out(&self) -> usize {
        self.d_out
    }

    pub fn d_in(&self) -> usize {
        self.d_in
    }

    pub fn weight(&self) -> &[T] {
        &self.weight
    }

    pub(crate) fn weight_mut(&mut self) -> &mut [T] {
        &mut self.weight
    }

    pub fn margin(&self) -> T {
        self.margin
    }

    pub fn mode(&self) -> LossMode {
        self.mode
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Unnormalized W e.
    pub fn project(&self, e: &[T]) -> Result<Vec<T>, TrainError> {
        if e.len() != self.d_in {
            return Err(TrainError::DimensionMismatch {
                expected: self.d_in,
                got: e.len(),
            });
        }
        Ok(self.weight.chunks_exact(self.d_in).map(|row| dot(row, e)).collect())
    }

    /// Normalized W e.
    pub fn apply(&self, e: &EmbeddingVector<T>) -> Result<EmbeddingVector<T>, TrainError> {
        if l2_norm(e.values()) == T::zero() {
            return Err(TrainError::ZeroVector);
        }
        let z = self.project(e.values())?;
        EmbeddingVector::normalized(z).map_err(|e| match e {
            EmbedError::ZeroVector => TrainError::ZeroVector,
            other => TrainError::Embed(other),
        })
    }

    /// Loss of one pair through the adapter and its gradient with respect to W
    /// (row-major, same shape as the weight).
    pub fn loss_gradient(&self, ei: &[T], ej: &[T], label: u8) -> Result<(T, Vec<T>), TrainError> {
        let mut grad = vec![T::zero(); self.weight.len()];
        let loss = self.accumulate_gradient(ei, ej, label, T::one(), &mut grad)?;
        Ok((loss, grad))
    }

    /// Adds `scale · dL/dW` into `grad` and returns the loss.
    pub(crate) fn accumulate_gradient(
        &self,
        ei: &[T],
        ej: &[T],
        label: u8,
        scale: T,
        grad: &mut [T],
    ) -> Result<T, TrainError> {
        let zi = self.project(ei)?;
        let zj = self.project(ej)?;
        let (c, ni, nj) = cos_parts(&zi, &zj)?;
        let (loss, dl_dc) = loss_from_cos(c, label, self.margin, self.mode)?;
        if dl_dc == T::zero() {
            return Ok(loss);
        }
        let g = dl_dc * scale;
        let inv = T::one() / (ni * nj);
        let (ci, cj) = (c / (ni * ni), c / (nj * nj));
        for r in 0..self.d_out {
            let gi = g * (zj[r] * inv - ci * zi[r]);
            let gj = g * (zi[r] * inv - cj * zj[r]);
            let row = &mut grad[r * self.d_in..(r + 1) * self.d_in];
            for ((w, &a), &b) in row.iter_mut().zip(ei).zip(ej) {
                *w += gi * a + gj * b;
            }
        }
        Ok(loss)
    }

    pub fn cast<U: Scalar>(&self) -> LinearAdapter<U> {
        LinearAdapter {
            d_out: self.d_out,
            d_in: self.d_in,
            weight: self.weight.iter().map(|w| U::of(w.as_f64())).collect(),
            margin: U::of(self.margin.as_f64()),
            mode: self.mode,
            seed: self.seed,
        }
    }

    fn payload(&self) -> Vec<u8> {
        self.weight.iter().flat_map(|w| w.as_f32().to_le_bytes()).collect()
    }

    /// Content hash over the dimensions and the float32 weights.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.d_out as u64).to_le_bytes());
        h.update((self.d_in as u64).to_le_bytes());
        h.update(self.payload());
        hex::encode(h.finalize())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), TrainError> {
        let path = path.as_ref();
        let header = Header {
            d_out: self.d_out,
            d_in: self.d_in,
            margin: self.margin.as_f64(),
            mode: self.mode,
            seed: self.seed,
            digest: self.digest(),
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut bytes = Vec::with_capacity(12 + json.len() + self.weight.len() * 4);
        bytes.extend_from_slice(MAGIC);
        bytes.extend_from_slice(&(json.len() as u32).to_le_bytes());
        bytes.extend_from_slice(&json);
        bytes.extend_from_slice(&self.payload());
        let io = |e: std::io::Error| file_err(path, e.to_string());
        let mut f = fs::File::create(path).map_err(io)?;
        f.write_all(&bytes).map_err(io)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, TrainError> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| file_err(path, e.to_string()))?;
        if bytes.len() < 12 || &bytes[..8] != MAGIC {
            return Err(file_err(path, "not an adapter file".into()));
        }
        let hlen = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let header: Header = bytes
            .get(12..12 + hlen)
            .ok_or_else(|| file_err(path, "truncated header".into()))
            .and_then(|h| serde_json::from_slice(h).map_err(|e| file_err(path, e.to_string())))?;
        let payload = &bytes[12 + hlen..];
        if payload.len() != header.d_out * header.d_in * 4 {
            return Err(file_err(path, "weight payload has the wrong size".into()));
        }
        let weight = payload
            .chunks_exact(4)
            .map(|c| T::of(f32::from_le_bytes(c.try_into().unwrap()) as f64))
            .collect();
        let a = Self::from_weights(header.d_out, header.d_in, weight, T::of(header.margin), header.mode, header.seed)?;
        if a.digest() != header.digest {
            return Err(file_err(path, "digest does not match the weights".into()));
        }
        Ok(a)
    }
}

fn file_err(path: &Path, message: String) -> TrainError {
    TrainError::File {
        path: path.display().to_string(),
        message,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn loss_examples() {
        let m = 0.5;
        let v = [0.3f64, -0.2, 0.9];
        assert_eq!(loss_from_cos(1.0f64, 1, m, LossMode::DistanceStandard).unwrap(), (0.0, 0.0));
        assert_abs_diff_eq!(contrastive_loss(&v, &v, 1, m, LossMode::DistanceStandard).unwrap(), 0.0, epsilon = 1e-30);
        let (l, g) = loss_from_cos(1.0 - 0.8, 0, m, LossMode::DistanceStandard).unwrap();
        assert_eq!((l, g), (0.0, 0.0));
        let (l, _) = loss_from_cos(1.0 - 0.3f64, 0, m, LossMode::DistanceStandard).unwrap();
        assert_abs_diff_eq!(l, 0.02, epsilon = 1e-15);
        let (l, _) = loss_from_cos(0.6f64, 1, m, LossMode::PaperLiteral).unwrap();
        assert_abs_diff_eq!(l, 0.18, epsilon = 1e-15);
        assert!(loss_from_cos(0.1f64, 2, m, LossMode::PaperLiteral).is_err());
        assert!(matches!(contrastive_loss(&[0.0f64, 0.0], &[1.0, 0.0], 1, m, LossMode::PaperLiteral), Err(TrainError::ZeroVector)));
    }

    #[test]
    fn aligned_positive_has_zero_gradient() {
        let a = LinearAdapter::<f64>::init(4, 0.5, LossMode::DistanceStandard, 1).unwrap();
        let e = [0.1, 0.5, -0.3, 0.7];
        let (loss, grad) = a.loss_gradient(&e, &e, 1).unwrap();
        assert_abs_diff_eq!(loss, 0.0, epsilon = 1e-30);
        assert!(grad.iter().all(|&g| g.abs() < 1e-14));
    }

    #[test]
    fn apply_matches_matrix_product() {
        let w = vec![1.0f64, 2.0, 0.0, -1.0, 0.5, 3.0];
        let a = LinearAdapter::from_weights(2, 3, w, 0.5, LossMode::DistanceStandard, 0).unwrap();
        let e = EmbeddingVector::new(vec![1.0, 1.0, 2.0]).unwrap();
        let z = a.apply(&e).unwrap();
        let raw = [3.0f64, 5.5];
        let n = (raw[0] * raw[0] + raw[1] * raw[1]).sqrt();
        assert_abs_diff_eq!(z.values()[0], raw[0] / n, epsilon = 1e-15);
        assert_abs_diff_eq!(z.values()[1], raw[1] / n, epsilon = 1e-15);
        assert!(a.apply(&EmbeddingVector::new(vec![0.0, 0.0, 0.0]).unwrap()).is_err());
        assert!(a.apply(&EmbeddingVector::new(vec![1.0]).unwrap()).is_err());
        let id = LinearAdapter::<f64>::identity(3, 0.5, LossMode::DistanceStandard).unwrap();
        let u = EmbeddingVector::normalized(vec![1.0, 2.0, 2.0]).unwrap();
        assert_eq!(id.apply(&u).unwrap().values(), u.values());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.bin");
        let a = LinearAdapter::<f32>::init(5, 0.4, LossMode::PaperLiteral, 9).unwrap();
        a.save(&p).unwrap();
        let b = LinearAdapter::<f32>::load(&p).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.digest(), b.digest());
        let mut bytes = fs::read(&p).unwrap();
        let last = bytes.len() - 1;
        bytes[last] ^= 0x40;
        fs::write(&p, bytes).unwrap();
        assert!(LinearAdapter::<f32>::load(&p).is_err());
    }
}
