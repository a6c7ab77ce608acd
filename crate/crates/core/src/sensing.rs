//! Random interpolation-direction matrices.
//!
//! Row `j` of a [`SensingMatrix`] is the probe direction `v^j`; the model
//! builder evaluates the residual map at `x + σ v^j`. Entries are i.i.d. from
//! one of three zero-mean distributions with variance `1/p`, so every column
//! has unit expected squared norm (`E[AᵀA] = I`).

use std::fmt;
use std::str::FromStr;

use itertools::Itertools;
use nalgebra::SymmetricEigen;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::{Error, Matrix, Result};

/// Default number of column subsets `rip_constant_bruteforce` may enumerate.
pub const DEFAULT_ENUMERATION_CAP: u128 = 1_000_000;

/// Entry distribution of a sensing matrix with `p` rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Distribution {
    /// `N(0, 1/p)`.
    Gaussian,
    /// `±1/√p`, each with probability 1/2.
    Bernoulli,
    /// `±√(3/p)` with probability 1/6 each, `0` with probability 2/3.
    BernoulliLike,
}

impl Distribution {
    pub const ALL: [Distribution; 3] = [
        Distribution::Gaussian,
        Distribution::Bernoulli,
        Distribution::BernoulliLike,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Distribution::Gaussian => "gaussian",
            Distribution::Bernoulli => "bernoulli",
            Distribution::BernoulliLike => "bernoulli-like",
        }
    }

    fn sample<R: Rng>(self, rng: &mut R, p: usize) -> f64 {
        let p = p as f64;
        match self {
            Distribution::Gaussian => {
                let z: f64 = rng.sample(StandardNormal);
                z / p.sqrt()
            }
            Distribution::Bernoulli => {
                if rng.random::<bool>() {
                    1.0 / p.sqrt()
                } else {
                    -1.0 / p.sqrt()
                }
            }
            Distribution::BernoulliLike => match rng.random_range(0u8..6) {
                0 => (3.0 / p).sqrt(),
                1 => -(3.0 / p).sqrt(),
                _ => 0.0,
            },
        }
    }
}

impl fmt::Display for Distribution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Distribution {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "gaussian" | "normal" => Ok(Distribution::Gaussian),
            "bernoulli" => Ok(Distribution::Bernoulli),
            "bernoulli-like" | "bernoullilike" | "sparse-bernoulli" => Ok(Distribution::BernoulliLike),
            other => Err(Error::InvalidArgument(format!(
                "unknown distribution `{other}` (expected gaussian, bernoulli or bernoulli-like)"
            ))),
        }
    }
}

/// A `p × n` matrix whose rows are the probe directions of one model build.
#[derive(Debug, Clone, PartialEq)]
pub struct SensingMatrix {
    entries: Matrix,
    distribution: Distribution,
    seed: u64,
}

impl SensingMatrix {
    /// Wraps an explicit matrix, e.g. an identity for exact-model tests.
    pub fn from_matrix(entries: Matrix, distribution: Distribution, seed: u64) -> Self {
        Self {
            entries,
            distribution,
            seed,
        }
    }

    pub fn entries(&self) -> &Matrix {
        &self.entries
    }

    pub fn p(&self) -> usize {
        self.entries.nrows()
    }

    pub fn n(&self) -> usize {
        self.entries.ncols()
    }

    pub fn distribution(&self) -> Distribution {
        self.distribution
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// `p ≥ n`: more probe points than unknowns, outside the sparse regime.
    pub fn is_overdetermined(&self) -> bool {
        self.p() >= self.n()
    }

    /// Largest Euclidean norm over the probe directions.
    pub fn max_row_norm(&self) -> f64 {
        self.entries.row_iter().map(|r| r.norm()).fold(0.0, f64::max)
    }
}

/// Draws a `p × n` sensing matrix. Identical arguments give bit-identical
/// matrices on every platform and thread.
pub fn generate(p: usize, n: usize, dist: Distribution, seed: u64) -> Result<SensingMatrix> {
    if p == 0 || n == 0 {
        return Err(Error::InvalidArgument(format!(
            "sensing matrix needs p >= 1 and n >= 1 (got p={p}, n={n})"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Row-major fill so that row j only depends on the first j+1 rows' draws.
    let mut data = Vec::with_capacity(p * n);
    for _ in 0..p * n {
        data.push(dist.sample(&mut rng, p));
    }
    let entries = Matrix::from_row_slice(p, n, &data);
    Ok(SensingMatrix {
        entries,
        distribution: dist,
        seed,
    })
}

/// Mixes a run seed with a stream index (iteration counter, solver id, ...).
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    splitmix64(base ^ splitmix64(stream.wrapping_add(0x9E37_79B9_7F4A_7C15)))
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Number of probe points suggested by the RIP sizing rule
/// `p ≥ 2s·ln(n/(2s)) / a1`, clamped to `[1, n-1]`.
///
/// Advisory only; the solver never calls it.
pub fn recommended_p(n: usize, s: usize, a1: f64) -> Result<usize> {
    if s == 0 {
        return Err(Error::InvalidArgument("sparsity level must be >= 1".into()));
    }
    if !(a1 > 0.0 && a1.is_finite()) {
        return Err(Error::InvalidArgument(format!("a1 must be positive, got {a1}")));
    }
    let two_s = 2 * s;
    if two_s >= n {
        return Err(Error::SparsityTooHigh { two_s, n });
    }
    let raw = (two_s as f64 * (n as f64 / two_s as f64).ln() / a1).ceil();
    Ok((raw as usize).clamp(1, n - 1))
}

pub(crate) fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
    }
    acc
}

/// Exact restricted isometry constant `δ_s` by enumerating every `s`-column
/// submatrix. Test oracle only; refuses instances above `cap` subsets.
pub fn rip_constant_bruteforce(a: &SensingMatrix, s: usize, cap: u128) -> Result<f64> {
    let n = a.n();
    if s == 0 || s > n {
        return Err(Error::InvalidArgument(format!(
            "RIP order must satisfy 1 <= s <= n (s={s}, n={n})"
        )));
    }
    let subsets = binomial(n, s);
    if subsets > cap {
        return Err(Error::EnumerationCap { subsets, cap });
    }
    let gram = a.entries().transpose() * a.entries();
    let mut delta: f64 = 0.0;
    for cols in (0..n).combinations(s) {
        let sub = Matrix::from_fn(s, s, |i, j| gram[(cols[i], cols[j])]);
        let eig = SymmetricEigen::new(sub).eigenvalues;
        let lmax = eig.max();
        let lmin = eig.min();
        delta = delta.max(lmax - 1.0).max(1.0 - lmin);
    }
    Ok(delta)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bernoulli_entries_and_row_norms() {
        for seed in 0..5 {
            let a = generate(4, 16, Distribution::Bernoulli, seed).unwrap();
            assert!(a.entries().iter().all(|&v| v == 0.5 || v == -0.5));
            for row in a.entries().row_iter() {
                assert!((row.norm() - 2.0).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn bernoulli_like_zero_fraction() {
        let mut zeros = 0usize;
        let mut total = 0usize;
        let level = (1.0f64 / 3.0).sqrt();
        let mut stream = 0u64;
        while total < 100_000 {
            let a = generate(9, 27, Distribution::BernoulliLike, derive_seed(7, stream)).unwrap();
            for &v in a.entries().iter() {
                assert!(v == 0.0 || (v.abs() - level).abs() < 1e-15);
                zeros += usize::from(v == 0.0);
            }
            total += a.entries().len();
            stream += 1;
        }
        let frac = zeros as f64 / total as f64;
        assert!((0.663..=0.670).contains(&frac), "zero fraction {frac}");
    }

    #[test]
    fn bernoulli_like_row_norm_bound() {
        let a = generate(9, 27, Distribution::BernoulliLike, 7).unwrap();
        assert!(a.max_row_norm() <= (3.0f64 * 27.0 / 9.0).sqrt() + 1e-12);
    }

    #[test]
    fn gaussian_moments() {
        let a = generate(50, 100, Distribution::Gaussian, 1).unwrap();
        let len = a.entries().len() as f64;
        let mean = a.entries().sum() / len;
        let var = a.entries().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (len - 1.0);
        assert!((-0.01..=0.01).contains(&mean), "mean {mean}");
        assert!((0.018..=0.022).contains(&var), "variance {var}");
    }

    #[test]
    fn generation_is_deterministic() {
        for dist in Distribution::ALL {
            let a = generate(7, 19, dist, 99).unwrap();
            let b = generate(7, 19, dist, 99).unwrap();
            assert_eq!(a, b);
            let c = generate(7, 19, dist, 100).unwrap();
            assert_ne!(a.entries(), c.entries());
        }
    }

    #[test]
    fn zero_dimensions_rejected() {
        assert!(generate(0, 3, Distribution::Gaussian, 0).is_err());
        assert!(generate(3, 0, Distribution::Gaussian, 0).is_err());
    }

    #[test]
    fn overdetermined_flag() {
        assert!(generate(5, 5, Distribution::Bernoulli, 0).unwrap().is_overdetermined());
        assert!(!generate(4, 5, Distribution::Bernoulli, 0).unwrap().is_overdetermined());
    }

    #[test]
    fn recommended_p_values() {
        // ceil(10 ln 10) = ceil(23.0258...) = 24
        assert_eq!(recommended_p(100, 5, 1.0).unwrap(), 24);
        // ceil(2 ln 500 / 0.5) = ceil(24.858...) = 25
        assert_eq!(recommended_p(1000, 1, 0.5).unwrap(), 25);
        assert!(matches!(
            recommended_p(4, 2, 1.0),
            Err(Error::SparsityTooHigh { two_s: 4, n: 4 })
        ));
        assert!(recommended_p(10, 1, 0.0).is_err());
    }

    #[test]
    fn recommended_p_monotone_in_s() {
        for n in [20usize, 64, 100, 500] {
            let mut last = 0;
            // 2s·ln(n/2s) increases only while 2s <= n/e.
            for s in 1.. {
                if (2 * s) as f64 > n as f64 / std::f64::consts::E {
                    break;
                }
                let p = recommended_p(n, s, 1.0).unwrap();
                assert!(p >= last, "n={n} s={s}: {p} < {last}");
                last = p;
            }
        }
    }

    #[test]
    fn rip_of_identity_is_zero() {
        let a = SensingMatrix::from_matrix(Matrix::identity(6, 6), Distribution::Bernoulli, 0);
        for s in 1..=6 {
            assert!(rip_constant_bruteforce(&a, s, DEFAULT_ENUMERATION_CAP).unwrap().abs() < 1e-15);
        }
    }

    #[test]
    fn rip_of_all_ones_row() {
        let a = SensingMatrix::from_matrix(Matrix::from_row_slice(1, 2, &[1.0, 1.0]), Distribution::Bernoulli, 0);
        // Gram [[1,1],[1,1]]: 1x1 blocks are exactly 1; the 2x2 block has eigenvalues {0, 2}.
        assert!(rip_constant_bruteforce(&a, 1, DEFAULT_ENUMERATION_CAP).unwrap().abs() < 1e-15);
        assert!((rip_constant_bruteforce(&a, 2, DEFAULT_ENUMERATION_CAP).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rip_cap_enforced() {
        let a = generate(10, 60, Distribution::Gaussian, 0).unwrap();
        assert!(matches!(
            rip_constant_bruteforce(&a, 5, DEFAULT_ENUMERATION_CAP),
            Err(Error::EnumerationCap { .. })
        ));
    }

    #[test]
    fn gaussian_rip_smoke() {
        // Monte-Carlo reference (independent generator): about two thirds of
        // 50x100 Gaussian draws have delta_2 < 1, and none exceeds 1.5.
        let deltas: Vec<f64> = (0..100)
            .map(|seed| {
                let a = generate(50, 100, Distribution::Gaussian, seed).unwrap();
                rip_constant_bruteforce(&a, 2, DEFAULT_ENUMERATION_CAP).unwrap()
            })
            .collect();
        assert!(
            deltas.iter().all(|&d| d < 1.5),
            "max {:?}",
            deltas.iter().cloned().fold(0.0, f64::max)
        );
        let below_one = deltas.iter().filter(|&&d| d < 1.0).count();
        assert!((50..=90).contains(&below_one), "{below_one}/100");
    }

    #[test]
    fn binomial_small_values() {
        assert_eq!(binomial(40, 2), 780);
        assert_eq!(binomial(5, 0), 1);
        assert_eq!(binomial(3, 4), 0);
        assert_eq!(binomial(64, 3), 41_664);
    }
}
