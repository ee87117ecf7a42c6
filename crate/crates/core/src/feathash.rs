//! Seeded feature hashing ("hashing trick").
//!
//! A [`HashSpec`] defines a bucket map `h: index -> 0..s` and a sign map
//! `xi: index -> {-1, +1}`. Hashing a vector sums the signed entries that land
//! in each bucket. Both maps come from one stateless 64-bit mixer applied to
//! `(seed, index)`, so outputs are bit-reproducible on every platform.

use std::ops::{AddAssign, Neg};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HashError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("degenerate input: vector is all zero")]
    DegenerateInput,
    #[error("degenerate hash: hashed vector is exactly zero")]
    DegenerateHash,
}

/// Stateless 64-bit mixer (splitmix64 finalizer over a seeded index).
#[inline]
fn mix(seed: u64, index: u64) -> u64 {
    let mut z = seed
        .wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15))
        ^ seed.rotate_left(29);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct HashSpec {
    seed: u64,
    out_dim: usize,
}

impl HashSpec {
    pub fn new(seed: u64, out_dim: usize) -> Result<Self, HashError> {
        if out_dim == 0 {
            return Err(HashError::InvalidArgument("out_dim must be positive".into()));
        }
        Ok(Self { seed, out_dim })
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    /// Bucket and sign for input index `j` (0-based).
    #[inline]
    pub fn bucket_sign(&self, j: usize) -> (usize, bool) {
        let z = mix(self.seed, j as u64);
        ((z % self.out_dim as u64) as usize, z >> 63 == 1)
    }

    pub fn bucket(&self, j: usize) -> usize {
        self.bucket_sign(j).0
    }

    /// `+1` or `-1`.
    pub fn sign(&self, j: usize) -> i8 {
        if self.bucket_sign(j).1 {
            -1
        } else {
            1
        }
    }

    /// `out[i] = sum_{j : h(j) = i} xi(j) x[j]`.
    pub fn hash<T>(&self, x: &[T]) -> Result<Vec<T>, HashError>
    where
        T: Copy + Default + AddAssign + Neg<Output = T>,
    {
        if x.is_empty() {
            return Err(HashError::InvalidArgument("empty input vector".into()));
        }
        let mut out = vec![T::default(); self.out_dim];
        self.hash_into(x, &mut out);
        Ok(out)
    }

    fn hash_into<T>(&self, x: &[T], out: &mut [T])
    where
        T: Copy + AddAssign + Neg<Output = T>,
    {
        for (j, &v) in x.iter().enumerate() {
            let (i, neg) = self.bucket_sign(j);
            if neg {
                out[i] += -v;
            } else {
                out[i] += v;
            }
        }
    }

    /// Transpose of [`HashSpec::hash`]: `out[j] = xi(j) g[h(j)]` for `j < n`.
    pub fn hash_transpose(&self, g: &[f32], n: usize) -> Vec<f32> {
        (0..n)
            .map(|j| {
                let (i, neg) = self.bucket_sign(j);
                if neg {
                    -g[i]
                } else {
                    g[i]
                }
            })
            .collect()
    }

    /// Hash of `x / ||x||_inf`, rescaled to unit 2-norm.
    pub fn hash_normalized(&self, x: &[f32]) -> Result<HashedVec, HashError> {
        if x.is_empty() {
            return Err(HashError::InvalidArgument("empty input vector".into()));
        }
        let inf = x.iter().fold(0.0f32, |m, v| m.max(v.abs()));
        if inf == 0.0 || !inf.is_finite() {
            return Err(HashError::DegenerateInput);
        }
        let scaled: Vec<f32> = x.iter().map(|v| v / inf).collect();
        let mut values = vec![0.0f32; self.out_dim];
        self.hash_into(&scaled, &mut values);
        let norm = values.iter().map(|v| (*v as f64) * (*v as f64)).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(HashError::DegenerateHash);
        }
        for v in values.iter_mut() {
            *v = (*v as f64 / norm) as f32;
        }
        Ok(HashedVec { values, source_dim: x.len() })
    }
}

/// A unit 2-norm hashed feature vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HashedVec {
    pub values: Vec<f32>,
    pub source_dim: usize,
}

impl HashedVec {
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| (*v as f64).powi(2)).sum::<f64>().sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct InnerProductEstimate {
    /// Mean of `phi(a)^T phi(b) - a^T b`.
    pub mean_error: f64,
    /// Standard error of `mean_error`.
    pub std_error: f64,
    /// Empirical variance of `phi(a)^T phi(b)`.
    pub variance: f64,
}

fn random_unit(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Monte-Carlo check that hashing preserves inner products in expectation.
///
/// Each trial draws fresh random unit vectors `a`, `b` of dimension `n` and a
/// fresh hash seed of output dimension `s`.
pub fn estimate_inner_product_bias(
    s: usize,
    n: usize,
    trials: usize,
    seed: u64,
) -> Result<InnerProductEstimate, HashError> {
    estimate_inner_product(s, n, trials, seed, false)
}

/// Same estimator with `b = a`; the mean hashed self-product should be 1.
pub fn estimate_self_product(
    s: usize,
    n: usize,
    trials: usize,
    seed: u64,
) -> Result<InnerProductEstimate, HashError> {
    estimate_inner_product(s, n, trials, seed, true)
}

fn estimate_inner_product(
    s: usize,
    n: usize,
    trials: usize,
    seed: u64,
    same: bool,
) -> Result<InnerProductEstimate, HashError> {
    if trials < 1000 {
        return Err(HashError::InvalidArgument("trials must be at least 1000".into()));
    }
    if s == 0 || n == 0 {
        return Err(HashError::InvalidArgument("dimensions must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut errors = Vec::with_capacity(trials);
    let mut products = Vec::with_capacity(trials);
    for _ in 0..trials {
        let a = random_unit(&mut rng, n);
        let b = if same { a.clone() } else { random_unit(&mut rng, n) };
        let spec = HashSpec::new(rng.gen(), s)?;
        let pa = spec.hash(&a)?;
        let pb = spec.hash(&b)?;
        let hashed = dot(&pa, &pb);
        errors.push(hashed - dot(&a, &b));
        products.push(hashed);
    }
    let (mean_error, err_var) = mean_var(&errors);
    let (_, variance) = mean_var(&products);
    Ok(InnerProductEstimate {
        mean_error,
        std_error: (err_var / trials as f64).sqrt(),
        variance,
    })
}

fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

/// Data-independent tail bound `2 exp(-(eps^2/2) / (n/s + eps/3))`.
pub fn orthogonality_bound(epsilon: f64, n: usize, s: usize) -> f64 {
    2.0 * (-(epsilon * epsilon / 2.0) / (n as f64 / s as f64 + epsilon / 3.0)).exp()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TailEstimate {
    pub probability: f64,
    pub std_error: f64,
    pub bound: f64,
}

impl TailEstimate {
    /// Empirical probability within `sigmas` standard errors of the bound.
    pub fn within_bound(&self, sigmas: f64) -> bool {
        self.probability <= self.bound + sigmas * self.std_error
    }
}

/// Empirical `Pr(|v^T phi_b(x)| > eps)` for unit `v` in the image of
/// `phi_a` and `x` of dimension `n` with `||x||_inf = 1`.
pub fn estimate_orthogonality_tail(
    spec_a: &HashSpec,
    spec_b: &HashSpec,
    epsilon: f64,
    n: usize,
    trials: usize,
    seed: u64,
) -> Result<TailEstimate, HashError> {
    if spec_a.seed == spec_b.seed {
        return Err(HashError::InvalidArgument("hash seeds must differ".into()));
    }
    if spec_a.out_dim != spec_b.out_dim {
        return Err(HashError::InvalidArgument("hash output dimensions differ".into()));
    }
    if !(epsilon > 0.0) {
        return Err(HashError::InvalidArgument("epsilon must be positive".into()));
    }
    if trials == 0 || n == 0 {
        return Err(HashError::InvalidArgument("trials and n must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut hits = 0usize;
    for _ in 0..trials {
        let z: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let mut v = spec_a.hash(&z)?;
        let norm = dot(&v, &v).sqrt();
        if norm == 0.0 {
            continue;
        }
        v.iter_mut().for_each(|e| *e /= norm);

        let mut x: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..=1.0)).collect();
        let inf = x.iter().fold(0.0f64, |m, e| m.max(e.abs()));
        x.iter_mut().for_each(|e| *e /= inf);
        let w = spec_b.hash(&x)?;
        if dot(&v, &w).abs() > epsilon {
            hits += 1;
        }
    }
    let p = hits as f64 / trials as f64;
    Ok(TailEstimate {
        probability: p,
        std_error: (p * (1.0 - p) / trials as f64).sqrt(),
        bound: orthogonality_bound(epsilon, n, spec_a.out_dim),
    })
}
