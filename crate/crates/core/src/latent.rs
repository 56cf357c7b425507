//! Latent value types and the deterministic random-stream contract.
//!
//! All latent arithmetic is carried out in `f64`. Reductions go through
//! [`dot`], which uses compensated summation so that norm-preservation checks
//! stay well below `1e-12` relative even at tens of thousands of dimensions.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A flat real vector with shape metadata and an optional diffusion timestep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentState {
    data: Vec<f64>,
    shape: Vec<usize>,
    timestep: Option<usize>,
}

impl LatentState {
    pub fn new(data: Vec<f64>, shape: Vec<usize>) -> Result<Self> {
        if shape.is_empty() || shape.iter().any(|&e| e == 0) {
            return Err(Error::invalid(format!(
                "latent shape must be non-empty with positive extents, got {shape:?}"
            )));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::invalid(format!(
                "latent shape {shape:?} holds {expected} values but data has {}",
                data.len()
            )));
        }
        if let Some(k) = data.iter().position(|x| !x.is_finite()) {
            return Err(Error::invalid(format!(
                "latent entry {k} is not finite ({})",
                data[k]
            )));
        }
        Ok(Self {
            data,
            shape,
            timestep: None,
        })
    }

    /// One-dimensional latent of shape `[len]`.
    pub fn from_vec(data: Vec<f64>) -> Result<Self> {
        let len = data.len();
        Self::new(data, vec![len])
    }

    pub fn with_timestep(mut self, t: usize) -> Self {
        self.timestep = Some(t);
        self
    }

    /// Replaces the data, keeping shape and timestep. Used by the diffusion
    /// updates, which preserve dimension by construction.
    pub(crate) fn with_data(&self, data: Vec<f64>, timestep: Option<usize>) -> Result<Self> {
        debug_assert_eq!(data.len(), self.data.len());
        if let Some(k) = data.iter().position(|x| !x.is_finite()) {
            return Err(Error::numeric(
                format!("latent entry {k} became non-finite"),
                timestep,
            ));
        }
        Ok(Self {
            data,
            shape: self.shape.clone(),
            timestep,
        })
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn timestep(&self) -> Option<usize> {
        self.timestep
    }

    pub fn dim(&self) -> usize {
        self.data.len()
    }

    pub fn norm(&self) -> f64 {
        norm(&self.data)
    }
}

/// Conditioning embedding fed to the noise predictor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ConditioningVector(Vec<f64>);

impl ConditioningVector {
    pub fn new(data: Vec<f64>) -> Result<Self> {
        if let Some(k) = data.iter().position(|x| !x.is_finite()) {
            return Err(Error::invalid(format!(
                "conditioning entry {k} is not finite"
            )));
        }
        Ok(Self(data))
    }

    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// A seeded, replayable random stream.
///
/// The generator is ChaCha8 with its 256-bit key expanded from `seed` by
/// `rand_core`'s portable `seed_from_u64`, and `stream_id` selecting the
/// ChaCha stream. The same `(seed, stream_id)` produces the same sequence on
/// every platform; distinct stream ids are independent keystreams.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream_id);
        Self {
            seed,
            stream_id,
            rng,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// A child stream that depends only on this stream's identity and `index`,
    /// never on how far this stream has advanced.
    pub fn fork(&self, index: u64) -> RngStream {
        let child_seed = splitmix64(self.seed ^ splitmix64(self.stream_id.wrapping_add(0x5EED)));
        RngStream::new(child_seed, index)
    }

    pub fn standard_normal_vector(&mut self, dim: usize) -> Result<Vec<f64>> {
        if dim == 0 {
            return Err(Error::invalid("normal vector dimension must be >= 1"));
        }
        Ok((0..dim).map(|_| self.standard_normal()).collect())
    }

    pub fn standard_normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    /// Uniform draw in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    /// Uniform integer in `lo..=hi`.
    pub fn uniform_int(&mut self, lo: usize, hi: usize) -> usize {
        self.rng.random_range(lo..=hi)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Inner product with Neumaier compensated summation.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for (x, y) in a.iter().zip(b) {
        let term = x * y;
        let t = sum + term;
        if sum.abs() >= term.abs() {
            comp += (sum - t) + term;
        } else {
            comp += (term - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}
