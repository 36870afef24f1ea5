//! Simulation ground truth, the two-coin label channel, and worker splits.
//!
//! Three ground-truth designs are available:
//!
//! * Sim 1: `f1 = N(0, I)`, `f0 = N((2/sqrt d) 1, I)`, `P(Y = 1) = 1/3`.
//! * Sim 2: `f1 = N(0, I)/2 + N(3 1, 2I)/2`, `f0 = N(1.5 1, I)/2 + N(4.5 1, 2I)/2`, `P(Y = 1) = 1/3`.
//! * Sim 3: Sim 2 with `I` replaced by the Toeplitz matrix `T_ij = 0.6^|i-j|`, `P(Y = 1) = 1/2`.
//!
//! Every sampler takes an explicit RNG; [`rng::stream`] derives independent
//! streams from a base seed so that replications never share draws.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::classify::LabeledDataset;
use crate::enn::{CrowdData, Worker, WorkerQuality};
use crate::error::{invalid, Result};
use crate::points::Points;
use crate::scalar::Scalar;

pub mod rng {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Purpose of a random stream. Each purpose gets its own ChaCha stream.
    #[derive(Debug, Clone, Copy, PartialEq, Eq)]
    pub enum Purpose {
        Sample = 1,
        Corrupt = 2,
        Partition = 3,
        Test = 4,
        Oracle = 5,
        Folds = 6,
    }

    fn splitmix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Independent base seed for a sub-experiment tagged `tag`.
    pub fn derive(seed: u64, tag: u64) -> u64 {
        splitmix(seed ^ splitmix(tag ^ 0xD1B5_4A32_D192_ED03))
    }

    /// Deterministic stream for `(seed, replication, purpose, sub)`.
    ///
    /// `sub` separates draws of the same purpose, e.g. one corruption stream
    /// per worker.
    pub fn stream(seed: u64, replication: u64, purpose: Purpose, sub: u32) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(splitmix(seed ^ splitmix(replication)));
        rng.set_stream(((purpose as u64) << 32) | sub as u64);
        rng
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum SimulationId {
    #[serde(rename = "1")]
    Gaussian,
    #[serde(rename = "2")]
    Bimodal,
    #[serde(rename = "3")]
    BimodalCorrelated,
}

impl SimulationId {
    pub fn from_number(id: u32) -> Result<Self> {
        match id {
            1 => Ok(Self::Gaussian),
            2 => Ok(Self::Bimodal),
            3 => Ok(Self::BimodalCorrelated),
            _ => Err(invalid(format!("unknown simulation {id}; expected 1, 2 or 3"))),
        }
    }

    pub fn number(self) -> u32 {
        match self {
            Self::Gaussian => 1,
            Self::Bimodal => 2,
            Self::BimodalCorrelated => 3,
        }
    }

    pub fn class_one_probability(self) -> f64 {
        match self {
            Self::Gaussian | Self::Bimodal => 1.0 / 3.0,
            Self::BimodalCorrelated => 0.5,
        }
    }
}

/// Gaussian component with covariance `scale * C`, stored through the
/// Cholesky factor of `C`.
#[derive(Debug, Clone)]
struct Component {
    mean: Vec<f64>,
    scale: f64,
}

/// Ground-truth distribution of one simulation design.
#[derive(Debug, Clone)]
pub struct SimulationSpec {
    pub sim: SimulationId,
    pub d: usize,
    pub pi1: f64,
    /// Lower Cholesky factor of the base covariance, row major.
    chol: Vec<f64>,
    log_det: f64,
    class1: Vec<Component>,
    class0: Vec<Component>,
}

/// Symmetric Toeplitz matrix `T_ij = rho^|i-j|`, row major.
pub fn toeplitz(d: usize, rho: f64) -> Vec<f64> {
    let mut m = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..d {
            m[i * d + j] = rho.powi((i as i32 - j as i32).abs());
        }
    }
    m
}

/// Lower Cholesky factor of a symmetric positive definite matrix.
pub fn cholesky(m: &[f64], d: usize) -> Result<Vec<f64>> {
    let mut l = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..=i {
            let mut sum = m[i * d + j];
            for k in 0..j {
                sum -= l[i * d + k] * l[j * d + k];
            }
            if i == j {
                if sum <= 0.0 {
                    return Err(invalid("matrix is not positive definite"));
                }
                l[i * d + i] = sum.sqrt();
            } else {
                l[i * d + j] = sum / l[j * d + j];
            }
        }
    }
    Ok(l)
}

impl SimulationSpec {
    pub fn new(sim: SimulationId, d: usize) -> Result<Self> {
        if d == 0 {
            return Err(invalid("simulation dimension must be at least 1"));
        }
        let constant = |v: f64| vec![v; d];
        let comp = |v: f64, scale: f64| Component { mean: constant(v), scale };
        let (class1, class0) = match sim {
            SimulationId::Gaussian => {
                (vec![comp(0.0, 1.0)], vec![comp(2.0 / (d as f64).sqrt(), 1.0)])
            }
            SimulationId::Bimodal | SimulationId::BimodalCorrelated => (
                vec![comp(0.0, 1.0), comp(3.0, 2.0)],
                vec![comp(1.5, 1.0), comp(4.5, 2.0)],
            ),
        };
        let base = match sim {
            SimulationId::BimodalCorrelated => toeplitz(d, 0.6),
            _ => {
                let mut id = vec![0.0; d * d];
                (0..d).for_each(|i| id[i * d + i] = 1.0);
                id
            }
        };
        let chol = cholesky(&base, d)?;
        let log_det = 2.0 * (0..d).map(|i| chol[i * d + i].ln()).sum::<f64>();
        Ok(Self { sim, d, pi1: sim.class_one_probability(), chol, log_det, class1, class0 })
    }

    /// Log density of `N(mean, scale * C)` up to the `(2 pi)^(-d/2)` factor,
    /// which is common to every component.
    fn component_log_density(&self, c: &Component, x: &[f64]) -> f64 {
        let d = self.d;
        // Solve L z = (x - mean) by forward substitution.
        let mut z = vec![0.0; d];
        for i in 0..d {
            let mut v = x[i] - c.mean[i];
            for k in 0..i {
                v -= self.chol[i * d + k] * z[k];
            }
            z[i] = v / self.chol[i * d + i];
        }
        let quad: f64 = z.iter().map(|v| v * v).sum::<f64>() / c.scale;
        -0.5 * (quad + self.log_det + d as f64 * c.scale.ln())
    }

    fn class_log_density(&self, comps: &[Component], x: &[f64]) -> f64 {
        let weight = -(comps.len() as f64).ln();
        log_sum_exp(comps.iter().map(|c| weight + self.component_log_density(c, x)))
    }

    /// `P(Y = 1 | X = x)`.
    pub fn eta0<T: Scalar>(&self, x: &[T]) -> T {
        let x: Vec<f64> = x.iter().map(|v| v.to_f64_lossy()).collect();
        T::of(self.eta0_f64(&x))
    }

    pub fn eta0_f64(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.d);
        let l1 = self.pi1.ln() + self.class_log_density(&self.class1, x);
        let l0 = (1.0 - self.pi1).ln() + self.class_log_density(&self.class0, x);
        // Logistic of the log-odds, stable in both tails.
        let t = l1 - l0;
        if t >= 0.0 {
            1.0 / (1.0 + (-t).exp())
        } else {
            let e = t.exp();
            e / (1.0 + e)
        }
    }

    fn sample_point<R: Rng>(&self, comps: &[Component], rng: &mut R, out: &mut Vec<f64>) {
        let d = self.d;
        let c = &comps[if comps.len() > 1 { rng.random_range(0..comps.len()) } else { 0 }];
        let z: Vec<f64> = (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let s = c.scale.sqrt();
        for i in 0..d {
            let lz: f64 = (0..=i).map(|k| self.chol[i * d + k] * z[k]).sum();
            out.push(c.mean[i] + s * lz);
        }
    }
}

fn log_sum_exp(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// `n` draws of `(X, Y)` from the ground truth.
pub fn sample_ground_truth<T: Scalar, R: Rng>(
    spec: &SimulationSpec,
    n: usize,
    rng: &mut R,
) -> Result<LabeledDataset<T>> {
    if n == 0 {
        return Err(invalid("sample size must be at least 1"));
    }
    let mut coords = Vec::with_capacity(n * spec.d);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let y = u8::from(rng.random::<f64>() < spec.pi1);
        let comps = if y == 1 { &spec.class1 } else { &spec.class0 };
        spec.sample_point(comps, rng, &mut coords);
        labels.push(y);
    }
    let coords = coords.into_iter().map(T::of).collect();
    LabeledDataset::new(Points::new(coords, spec.d)?, labels)
}

/// Seeded convenience wrapper over [`sample_ground_truth`].
pub fn sample_ground_truth_seeded<T: Scalar>(
    spec: &SimulationSpec,
    n: usize,
    seed: u64,
) -> Result<LabeledDataset<T>> {
    sample_ground_truth(spec, n, &mut rng::stream(seed, 0, rng::Purpose::Sample, 0))
}

/// Two-coin channel: a true 1 stays 1 with probability `a`, a true 0 stays 0
/// with probability `b`. One uniform draw per row, in row order.
pub fn corrupt_labels<T: Scalar, R: Rng>(
    truth: &LabeledDataset<T>,
    quality: &WorkerQuality<T>,
    rng: &mut R,
) -> Result<LabeledDataset<T>> {
    let (a, b) = (quality.a.to_f64_lossy(), quality.b.to_f64_lossy());
    if !((0.0..=1.0).contains(&a) && (0.0..=1.0).contains(&b)) {
        return Err(invalid("quality outside [0, 1]"));
    }
    let labels = truth
        .labels()
        .iter()
        .map(|&y| {
            let u = rng.random::<f64>();
            match y {
                1 => u8::from(u < a),
                _ => u8::from(u >= b),
            }
        })
        .collect();
    truth.with_labels(labels)
}

/// Worker qualities and sizes of one crowd design.
#[derive(Debug, Clone, PartialEq)]
pub struct QualitySetup {
    pub id: usize,
    pub a: [f64; 5],
    pub b: [f64; 5],
    pub sizes: [usize; 5],
    pub has_expert: bool,
}

const PLAIN_SIZES: [usize; 5] = [2000, 3000, 4000, 5000, 6000];
const EXPERT_SIZES: [usize; 5] = [1000, 2000, 3000, 4000, 10000];

/// The ten crowd designs. Setups 1-5 have no expert; in 6-10 worker 5 is.
pub const QUALITY_SETUPS: [QualitySetup; 10] = [
    QualitySetup { id: 1, a: [0.90, 0.90, 0.95, 0.90, 1.00], b: [0.80, 0.80, 0.85, 0.85, 0.90], sizes: PLAIN_SIZES, has_expert: false },
    QualitySetup { id: 2, a: [0.80, 0.80, 0.85, 0.80, 0.80], b: [0.90, 0.95, 0.95, 0.90, 1.00], sizes: PLAIN_SIZES, has_expert: false },
    QualitySetup { id: 3, a: [0.60, 0.65, 0.85, 0.80, 0.80], b: [0.75, 0.75, 0.95, 0.90, 0.95], sizes: PLAIN_SIZES, has_expert: false },
    QualitySetup { id: 4, a: [0.80, 0.85, 0.85, 0.90, 0.80], b: [0.90, 0.80, 0.95, 0.80, 0.95], sizes: PLAIN_SIZES, has_expert: false },
    QualitySetup { id: 5, a: [0.80, 0.85, 0.95, 0.85, 0.90], b: [0.80, 0.85, 0.95, 0.85, 0.90], sizes: PLAIN_SIZES, has_expert: false },
    QualitySetup { id: 6, a: [0.90, 0.90, 0.95, 0.90, 1.00], b: [0.80, 0.80, 0.85, 0.85, 1.00], sizes: EXPERT_SIZES, has_expert: true },
    QualitySetup { id: 7, a: [0.80, 0.80, 0.85, 0.80, 1.00], b: [0.90, 0.95, 0.95, 0.90, 1.00], sizes: EXPERT_SIZES, has_expert: true },
    QualitySetup { id: 8, a: [0.60, 0.65, 0.85, 0.80, 1.00], b: [0.75, 0.75, 0.95, 0.90, 1.00], sizes: EXPERT_SIZES, has_expert: true },
    QualitySetup { id: 9, a: [0.80, 0.85, 0.85, 0.90, 1.00], b: [0.90, 0.80, 0.95, 0.80, 1.00], sizes: EXPERT_SIZES, has_expert: true },
    QualitySetup { id: 10, a: [0.80, 0.85, 0.95, 0.85, 1.00], b: [0.80, 0.85, 0.95, 0.85, 1.00], sizes: EXPERT_SIZES, has_expert: true },
];

impl QualitySetup {
    pub fn get(id: usize) -> Result<&'static QualitySetup> {
        QUALITY_SETUPS
            .iter()
            .find(|s| s.id == id)
            .ok_or_else(|| invalid(format!("unknown quality setup {id}; expected 1..=10")))
    }

    pub fn total_size(&self) -> usize {
        self.sizes.iter().sum()
    }

    /// Worker sizes multiplied by `scale` and rounded, each at least 1.
    pub fn scaled_sizes(&self, scale: f64) -> Vec<usize> {
        self.sizes.iter().map(|&n| ((n as f64 * scale).round() as usize).max(1)).collect()
    }

    pub fn qualities<T: Scalar>(&self) -> Vec<WorkerQuality<T>> {
        self.a
            .iter()
            .zip(&self.b)
            .map(|(&a, &b)| WorkerQuality::known(T::of(a), T::of(b)).expect("table values lie in [0, 1]"))
            .collect()
    }

    pub fn is_expert(&self, j: usize) -> bool {
        self.has_expert && self.a[j] == 1.0 && self.b[j] == 1.0
    }
}

/// Randomly splits `truth` into blocks of `sizes` and passes each block
/// through its worker's channel. Workers with `a = b = 1` keep clean labels;
/// they are flagged as experts when `flag_experts` is set.
pub fn partition_with_sizes<T: Scalar>(
    truth: &LabeledDataset<T>,
    sizes: &[usize],
    qualities: &[WorkerQuality<T>],
    flag_experts: bool,
    seed: u64,
    replication: u64,
) -> Result<CrowdData<T>> {
    if sizes.len() != qualities.len() {
        return Err(invalid("one quality per worker size required"));
    }
    let blocks = partition_rows(truth.len(), sizes, seed, replication)?;
    let mut workers = Vec::with_capacity(sizes.len());
    for (j, (rows, q)) in blocks.iter().zip(qualities).enumerate() {
        let block = truth.select(rows)?;
        let clean = q.a == T::one() && q.b == T::one();
        let data = if clean {
            block
        } else {
            corrupt_labels(&block, q, &mut rng::stream(seed, replication, rng::Purpose::Corrupt, j as u32))?
        };
        workers.push(Worker { data, quality: Some(*q), is_expert: clean && flag_experts });
    }
    CrowdData::new(workers)
}

/// Rows of the source dataset assigned to each worker by
/// [`partition_with_sizes`] under the same seed and replication.
pub fn partition_rows(n: usize, sizes: &[usize], seed: u64, replication: u64) -> Result<Vec<Vec<usize>>> {
    let total: usize = sizes.iter().sum();
    if total != n {
        return Err(invalid(format!("worker sizes sum to {total}, dataset has {n} rows")));
    }
    if sizes.contains(&0) {
        return Err(invalid("every worker needs at least one row"));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::stream(seed, replication, rng::Purpose::Partition, 0));
    let mut start = 0;
    Ok(sizes
        .iter()
        .map(|&nj| {
            start += nj;
            order[start - nj..start].to_vec()
        })
        .collect())
}

/// Crowd for a catalog setup at the setup's full sizes.
pub fn partition_to_workers<T: Scalar>(
    truth: &LabeledDataset<T>,
    setup: &QualitySetup,
    seed: u64,
) -> Result<CrowdData<T>> {
    partition_with_sizes(truth, &setup.sizes, &setup.qualities(), setup.has_expert, seed, 0)
}

/// Sizes of `s` equal blocks of `n` rows; the remainder goes to the last block.
pub fn equal_sizes(n: usize, s: usize) -> Result<Vec<usize>> {
    if s == 0 || s > n {
        return Err(invalid(format!("cannot split {n} rows across {s} workers")));
    }
    let base = n / s;
    let mut sizes = vec![base; s];
    sizes[s - 1] += n - base * s;
    Ok(sizes)
}

/// `s` clean expert workers over a fresh ground-truth sample of size `n`.
pub fn equal_expert_crowd<T: Scalar>(
    n: usize,
    s: usize,
    spec: &SimulationSpec,
    seed: u64,
) -> Result<CrowdData<T>> {
    let truth = sample_ground_truth_seeded(spec, n, seed)?;
    split_experts(&truth, s, seed, 0)
}

/// Splits clean data into `s` equal expert workers.
pub fn split_experts<T: Scalar>(
    truth: &LabeledDataset<T>,
    s: usize,
    seed: u64,
    replication: u64,
) -> Result<CrowdData<T>> {
    let sizes = equal_sizes(truth.len(), s)?;
    let experts = vec![WorkerQuality::expert(); s];
    partition_with_sizes(truth, &sizes, &experts, true, seed, replication)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::collections::HashMap;

    #[test]
    fn eta0_gaussian_values() {
        let spec = SimulationSpec::new(SimulationId::Gaussian, 4).unwrap();
        // Midpoint between the class means: densities equal, eta0 = pi1.
        let mid = [0.5; 4];
        assert_relative_eq!(spec.eta0_f64(&mid), 1.0 / 3.0, epsilon = 1e-12);
        // Origin: f1/f0 = exp(|mu0|^2 / 2) = e^2.
        let e2 = 2f64.exp();
        let expect = (e2 / 3.0) / (e2 / 3.0 + 2.0 / 3.0);
        assert_relative_eq!(spec.eta0_f64(&[0.0; 4]), expect, epsilon = 1e-12);
        assert_relative_eq!(expect, 0.7869, epsilon = 1e-4);
        // Far tails stay finite.
        assert!(spec.eta0_f64(&[1e3; 4]) >= 0.0);
        assert!(spec.eta0_f64(&[-1e3; 4]) <= 1.0);
    }

    #[test]
    fn eta0_mixture_matches_direct_density() {
        // Direct evaluation with explicit normalizing constants.
        let d = 3;
        let spec = SimulationSpec::new(SimulationId::Bimodal, d).unwrap();
        let normal = |x: &[f64], m: f64, var: f64| {
            let q: f64 = x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / var;
            (2.0 * std::f64::consts::PI * var).powf(-(d as f64) / 2.0) * (-0.5 * q).exp()
        };
        for x in [[0.1, 0.2, -0.3], [1.5, 1.0, 2.0], [3.0, 4.0, 4.5]] {
            let f1 = 0.5 * normal(&x, 0.0, 1.0) + 0.5 * normal(&x, 3.0, 2.0);
            let f0 = 0.5 * normal(&x, 1.5, 1.0) + 0.5 * normal(&x, 4.5, 2.0);
            let expect = f1 / 3.0 / (f1 / 3.0 + 2.0 * f0 / 3.0);
            assert_relative_eq!(spec.eta0_f64(&x), expect, max_relative = 1e-10);
        }
    }

    #[test]
    fn eta0_correlated_matches_d1_reduction() {
        // For d = 1 the Toeplitz matrix is [1], so Sim 3 differs from Sim 2 only in pi1.
        let s2 = SimulationSpec::new(SimulationId::Bimodal, 1).unwrap();
        let s3 = SimulationSpec::new(SimulationId::BimodalCorrelated, 1).unwrap();
        for x in [-1.0, 0.7, 2.2, 5.0] {
            let odds2 = s2.eta0_f64(&[x]) / (1.0 - s2.eta0_f64(&[x]));
            let odds3 = s3.eta0_f64(&[x]) / (1.0 - s3.eta0_f64(&[x]));
            assert_relative_eq!(odds3, 2.0 * odds2, max_relative = 1e-10);
        }
    }

    #[test]
    fn toeplitz_is_positive_definite() {
        for d in 1..=12 {
            let t = toeplitz(d, 0.6);
            assert!(cholesky(&t, d).is_ok(), "d = {d}");
            for i in 0..d {
                for j in 0..d {
                    assert_eq!(t[i * d + j], t[j * d + i]);
                }
            }
        }
        assert!(cholesky(&[1.0, 2.0, 2.0, 1.0], 2).is_err());
    }

    #[test]
    fn correlated_samples_have_target_covariance() {
        let d = 3;
        let spec = SimulationSpec::new(SimulationId::BimodalCorrelated, d).unwrap();
        let mut r = rng::stream(2, 0, rng::Purpose::Sample, 0);
        let comp = Component { mean: vec![0.0; d], scale: 1.0 };
        let n = 100_000;
        let mut buf = Vec::with_capacity(n * d);
        for _ in 0..n {
            spec.sample_point(std::slice::from_ref(&comp), &mut r, &mut buf);
        }
        let cov01: f64 = buf.chunks(d).map(|p| p[0] * p[1]).sum::<f64>() / n as f64;
        let cov02: f64 = buf.chunks(d).map(|p| p[0] * p[2]).sum::<f64>() / n as f64;
        assert!((cov01 - 0.6).abs() < 0.02, "{cov01}");
        assert!((cov02 - 0.36).abs() < 0.02, "{cov02}");
    }

    #[test]
    fn sampling_contract() {
        let spec = SimulationSpec::new(SimulationId::Gaussian, 2).unwrap();
        assert!(sample_ground_truth_seeded::<f64>(&spec, 0, 1).is_err());
        let a = sample_ground_truth_seeded::<f64>(&spec, 500, 7).unwrap();
        let b = sample_ground_truth_seeded::<f64>(&spec, 500, 7).unwrap();
        assert_eq!(a, b);
        let c = sample_ground_truth_seeded::<f64>(&spec, 500, 8).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn class_balance_concentrates() {
        let spec = SimulationSpec::new(SimulationId::Gaussian, 2).unwrap();
        let n = 100_000;
        let data = sample_ground_truth_seeded::<f64>(&spec, n, 99).unwrap();
        let frac = data.labels().iter().filter(|&&y| y == 1).count() as f64 / n as f64;
        let p = 1.0 / 3.0;
        assert!((frac - p).abs() <= 4.0 * (p * (1.0 - p) / n as f64).sqrt(), "{frac}");
    }

    #[test]
    fn corruption_examples() {
        let spec = SimulationSpec::new(SimulationId::Gaussian, 2).unwrap();
        let truth = sample_ground_truth_seeded::<f64>(&spec, 2000, 1).unwrap();
        let mut r = rng::stream(1, 0, rng::Purpose::Corrupt, 0);
        let same = corrupt_labels(&truth, &WorkerQuality::known(1.0, 1.0).unwrap(), &mut r).unwrap();
        assert_eq!(same, truth);
        let ones = corrupt_labels(&truth, &WorkerQuality::known(1.0, 0.0).unwrap(), &mut r).unwrap();
        assert!(ones.labels().iter().all(|&y| y == 1));
        assert_eq!(ones.points(), truth.points());
    }

    #[test]
    fn flip_rate_concentrates() {
        let n = 100_000;
        let pts = Points::new(vec![0.0; n], 1).unwrap();
        let truth = LabeledDataset::new(pts, vec![1; n]).unwrap();
        let mut r = rng::stream(3, 0, rng::Purpose::Corrupt, 0);
        let out = corrupt_labels(&truth, &WorkerQuality::known(0.9, 0.5).unwrap(), &mut r).unwrap();
        let flips = out.labels().iter().filter(|&&y| y == 0).count() as f64 / n as f64;
        assert!((flips - 0.1).abs() <= 4.0 * (0.09 / n as f64).sqrt(), "{flips}");
    }

    #[test]
    fn corruption_distribution_is_row_exchangeable() {
        // Exact distribution of the corrupted vector is a product over rows;
        // frequencies for a permuted input must match the permuted product.
        let labels = vec![1u8, 0, 1, 0];
        let perm = [2usize, 0, 3, 1];
        let (a, b) = (0.7, 0.6);
        let pts = Points::new(vec![0.0, 1.0, 2.0, 3.0], 1).unwrap();
        let truth = LabeledDataset::new(pts, labels.clone()).unwrap();
        let permuted = truth.select(&perm).unwrap();
        let q = WorkerQuality::known(a, b).unwrap();
        let prob = |src: &[u8], out: &[u8]| -> f64 {
            src.iter()
                .zip(out)
                .map(|(&y, &o)| match (y, o) {
                    (1, 1) => a,
                    (1, _) => 1.0 - a,
                    (_, 0) => b,
                    _ => 1.0 - b,
                })
                .product()
        };
        let draws = 40_000;
        let mut counts: HashMap<Vec<u8>, usize> = HashMap::new();
        let mut r = rng::stream(5, 0, rng::Purpose::Corrupt, 0);
        for _ in 0..draws {
            let out = corrupt_labels(&permuted, &q, &mut r).unwrap();
            // Undo the permutation to compare against the original ordering.
            let mut back = vec![0u8; 4];
            for (i, &p) in perm.iter().enumerate() {
                back[p] = out.labels()[i];
            }
            *counts.entry(back).or_default() += 1;
        }
        let mut total_p = 0.0;
        for mask in 0..16u32 {
            let out: Vec<u8> = (0..4).map(|i| ((mask >> i) & 1) as u8).collect();
            let p = prob(&labels, &out);
            total_p += p;
            let freq = *counts.get(&out).unwrap_or(&0) as f64 / draws as f64;
            let sd = (p * (1.0 - p) / draws as f64).sqrt();
            assert!((freq - p).abs() <= 5.0 * sd + 1e-12, "{out:?}: {freq} vs {p}");
        }
        assert_relative_eq!(total_p, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn setup_catalog() {
        let s1 = QualitySetup::get(1).unwrap();
        assert_eq!(s1.sizes, [2000, 3000, 4000, 5000, 6000]);
        assert_eq!(s1.total_size(), 20000);
        let s3 = QualitySetup::get(3).unwrap();
        assert_eq!(s3.a, [0.60, 0.65, 0.85, 0.80, 0.80]);
        assert_eq!(s3.b, [0.75, 0.75, 0.95, 0.90, 0.95]);
        for id in 6..=10 {
            let s = QualitySetup::get(id).unwrap();
            assert_eq!(s.sizes, [1000, 2000, 3000, 4000, 10000]);
            assert!(s.is_expert(4) && (0..4).all(|j| !s.is_expert(j)));
        }
        assert!(QualitySetup::get(11).is_err());
        assert_eq!(s1.scaled_sizes(0.25), vec![500, 750, 1000, 1250, 1500]);
    }

    #[test]
    fn partition_preserves_points() {
        let spec = SimulationSpec::new(SimulationId::Gaussian, 2).unwrap();
        let setup = QualitySetup::get(6).unwrap();
        let truth = sample_ground_truth_seeded::<f64>(&spec, setup.total_size(), 3).unwrap();
        let crowd = partition_to_workers(&truth, setup, 3).unwrap();
        assert_eq!(crowd.sizes(), setup.sizes.to_vec());
        assert_eq!(crowd.expert_index().unwrap(), 4);
        let key = |p: &[f64]| (p[0].to_bits(), p[1].to_bits());
        let mut pooled: Vec<_> = crowd.pooled().points().rows().map(key).collect();
        let mut orig: Vec<_> = truth.points().rows().map(key).collect();
        pooled.sort();
        orig.sort();
        assert_eq!(pooled, orig);
        let short = truth.select(&[0, 1, 2]).unwrap();
        assert!(partition_to_workers(&short, setup, 3).is_err());
    }

    #[test]
    fn expert_crowds() {
        let spec = SimulationSpec::new(SimulationId::Gaussian, 2).unwrap();
        let one = equal_expert_crowd::<f64>(100, 1, &spec, 1).unwrap();
        assert_eq!(one.sizes(), vec![100]);
        let five = equal_expert_crowd::<f64>(20000, 5, &spec, 1).unwrap();
        assert_eq!(five.sizes(), vec![4000; 5]);
        assert!(five.workers().iter().all(|w| w.is_expert));
        let all = equal_expert_crowd::<f64>(7, 7, &spec, 1).unwrap();
        assert_eq!(all.sizes(), vec![1; 7]);
        assert_eq!(equal_sizes(10, 3).unwrap(), vec![3, 3, 4]);
        assert!(equal_sizes(3, 4).is_err());
    }
}
