//! Neighbor weight profiles and the regret algebra built on them.
//!
//! A [`WeightVector`] assigns weight `w_i` to the `i`-th nearest neighbor.
//! Besides the uniform kNN profile and the optimally weighted (OWNN) profile,
//! this module evaluates the leading-order regret expansions for a single
//! weighted classifier and for the crowd ensemble, the matching ratios between
//! the two, and the admissibility conditions those expansions require.

use crate::error::{invalid, Error, Result};
use crate::scalar::{ceil_count, Scalar};

/// Nonnegative neighbor weights summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector<T> {
    w: Vec<T>,
    support: usize,
    clipped: bool,
}

impl<T: Scalar> WeightVector<T> {
    /// Validates an arbitrary profile: nonnegative, finite, sum within 1e-9 of one.
    pub fn new(w: Vec<T>) -> Result<Self> {
        if w.is_empty() {
            return Err(invalid("weight vector must be nonempty"));
        }
        if w.iter().any(|&x| !x.is_finite() || x < T::zero()) {
            return Err(invalid("weights must be finite and nonnegative"));
        }
        let sum: T = w.iter().copied().sum();
        if (sum - T::one()).abs() > T::of(1e-9).max(T::epsilon() * T::of_usize(w.len())) {
            return Err(invalid(format!("weights sum to {sum}, not 1")));
        }
        let support = w.iter().rposition(|&x| x > T::zero()).map_or(0, |p| p + 1);
        Ok(Self { w, support, clipped: false })
    }

    pub fn as_slice(&self) -> &[T] {
        &self.w
    }

    /// Nonzero prefix; entries past it are zero.
    pub fn support(&self) -> &[T] {
        &self.w[..self.support]
    }

    pub fn support_size(&self) -> usize {
        self.support
    }

    pub fn len(&self) -> usize {
        self.w.len()
    }

    pub fn is_empty(&self) -> bool {
        self.w.is_empty()
    }

    /// True when negative entries were zeroed and the vector renormalized.
    pub fn was_clipped(&self) -> bool {
        self.clipped
    }

    pub fn sum_squares(&self) -> T {
        self.support().iter().map(|&x| x * x).sum()
    }

    /// `sum_i alpha_i w_i`.
    pub fn alpha_moment(&self, d: usize) -> T {
        self.support()
            .iter()
            .enumerate()
            .map(|(i, &x)| alpha_unchecked::<T>(i + 1, d) * x)
            .sum()
    }
}

/// Bias and variance scale constants of the regret expansion.
///
/// Only the ratio is needed to choose neighbor counts; the absolute values are
/// required to evaluate a regret number.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegretConstants<T> {
    ratio: T,
    b1: Option<T>,
    b2: Option<T>,
}

impl<T: Scalar> RegretConstants<T> {
    pub fn from_ratio(ratio: T) -> Result<Self> {
        if !(ratio.is_finite() && ratio > T::zero()) {
            return Err(invalid("B1/B2 ratio must be positive and finite"));
        }
        Ok(Self { ratio, b1: None, b2: None })
    }

    /// Absolute constants. `b2 = 0` is allowed for evaluation; the ratio is
    /// then infinite and count selection saturates at `n`.
    pub fn from_absolute(b1: T, b2: T) -> Result<Self> {
        if !(b1.is_finite() && b2.is_finite() && b1 >= T::zero() && b2 >= T::zero()) {
            return Err(invalid("B1 and B2 must be finite and nonnegative"));
        }
        let ratio = if b2 > T::zero() { b1 / b2 } else { T::infinity() };
        Ok(Self { ratio, b1: Some(b1), b2: Some(b2) })
    }

    pub fn ratio(&self) -> T {
        self.ratio
    }

    pub fn absolute(&self) -> Option<(T, T)> {
        self.b1.zip(self.b2)
    }
}

impl<T: Scalar> Default for RegretConstants<T> {
    /// `B1/B2 = 1`. Arbitrary; use cross-validation when it matters.
    fn default() -> Self {
        Self { ratio: T::one(), b1: None, b2: None }
    }
}

/// `alpha_i = i^(1+2/d) - (i-1)^(1+2/d)`.
pub fn alpha<T: Scalar>(i: usize, d: usize) -> Result<T> {
    if i == 0 || d == 0 {
        return Err(invalid("alpha requires i >= 1 and d >= 1"));
    }
    Ok(alpha_unchecked(i, d))
}

fn alpha_unchecked<T: Scalar>(i: usize, d: usize) -> T {
    if i == 1 {
        return T::one();
    }
    let p = T::one() + T::of(2.0) / T::of_usize(d);
    let x = T::of_usize(i);
    // i^p * (1 - (1 - 1/i)^p) without the cancellation of the direct form.
    -x.powf(p) * (p * (-x.recip()).ln_1p()).exp_m1()
}

pub fn knn_weights<T: Scalar>(n: usize, k: usize) -> Result<WeightVector<T>> {
    if k == 0 || k > n {
        return Err(invalid(format!("kNN weights need 1 <= k <= n (k = {k}, n = {n})")));
    }
    let mut w = vec![T::zero(); n];
    let v = T::one() / T::of_usize(k);
    w[..k].fill(v);
    Ok(WeightVector { w, support: k, clipped: false })
}

/// OWNN profile `w_i = (1/m)[1 + d/2 - d alpha_i / (2 m^(2/d))]` on `i <= m`.
pub fn ownn_weights<T: Scalar>(n: usize, m: usize, d: usize) -> Result<WeightVector<T>> {
    if m == 0 || m > n {
        return Err(invalid(format!("OWNN weights need 1 <= m <= n (m = {m}, n = {n})")));
    }
    if d == 0 {
        return Err(Error::ZeroDimension);
    }
    let mf = T::of_usize(m);
    let df = T::of_usize(d);
    let two = T::of(2.0);
    let lead = T::one() + df / two;
    let scale = df / (two * mf.powf(two / df));
    let mut w = vec![T::zero(); n];
    let mut clipped = false;
    for (i, wi) in w[..m].iter_mut().enumerate() {
        let v = (lead - scale * alpha_unchecked::<T>(i + 1, d)) / mf;
        if v < T::zero() {
            clipped = true;
            *wi = T::zero();
        } else {
            *wi = v;
        }
    }
    let sum: T = w[..m].iter().copied().sum();
    if clipped || (sum - T::one()).abs() > T::of(1e-13) {
        for wi in &mut w[..m] {
            *wi = *wi / sum;
        }
    }
    let support = w[..m].iter().rposition(|&x| x > T::zero()).map_or(0, |p| p + 1);
    Ok(WeightVector { w, support, clipped })
}

fn clamp_count(c: usize, n: usize) -> usize {
    c.clamp(1, n)
}

/// OWNN support size `m*`, clamped to `[1, n]`.
pub fn optimal_m_star<T: Scalar>(n: usize, d: usize, constants: &RegretConstants<T>) -> usize {
    if !constants.ratio().is_finite() {
        return n.max(1);
    }
    let df = T::of_usize(d);
    let e = df / (df + T::of(4.0));
    let lead = (df * (df + T::of(4.0)) / (T::of(2.0) * (df + T::of(2.0)))).powf(e);
    let raw = lead * constants.ratio().powf(e) * T::of_usize(n).powf(T::of(4.0) / (df + T::of(4.0)));
    clamp_count(ceil_count(raw), n.max(1))
}

/// kNN-optimal global neighbor count `K*`, clamped to `[1, n]`.
pub fn optimal_k_star<T: Scalar>(n: usize, d: usize, constants: &RegretConstants<T>) -> usize {
    if !constants.ratio().is_finite() {
        return n.max(1);
    }
    let df = T::of_usize(d);
    let e = df / (df + T::of(4.0));
    let raw = (df * constants.ratio() / T::of(4.0)).powf(e)
        * T::of_usize(n).powf(T::of(4.0) / (df + T::of(4.0)));
    clamp_count(ceil_count(raw), n.max(1))
}

/// Global count `ceil(n^exponent)` clamped to `[1, n]`.
pub fn power_count(n: usize, exponent: f64) -> usize {
    clamp_count(ceil_count((n as f64).powf(exponent)), n.max(1))
}

/// Per-worker share `max(1, ceil(n_j * global / n))`, at most `n_j`.
///
/// Computed in integers, so `n_j = n` returns `global` exactly.
pub fn local_count(n_j: usize, n: usize, global: usize) -> usize {
    if n == 0 || n_j == 0 {
        return 1;
    }
    let num = n_j as u128 * global as u128;
    let c = num.div_ceil(n as u128) as usize;
    c.max(1).min(n_j)
}

/// One admissibility inequality `value <= bound`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Condition<T> {
    pub value: T,
    pub bound: T,
    pub holds: bool,
}

impl<T: Scalar> Condition<T> {
    fn new(value: T, bound: T) -> Self {
        Self { value, bound, holds: value <= bound }
    }
}

/// Verdicts for the five weight-admissibility conditions at a given `beta`.
///
/// Inequalities are evaluated non-strictly, exactly as written, at finite `n`;
/// they are asymptotic requirements, so a failure at small `n` is informative
/// rather than disqualifying.
#[derive(Debug, Clone, PartialEq)]
pub struct AdmissibilityReport<T> {
    pub n: usize,
    pub beta: T,
    /// Tail cut-off `ceil(n^(1-beta))`.
    pub k2: usize,
    /// `sum w^2 <= n^-beta`
    pub w1: Condition<T>,
    /// `n^(-4/d) (sum alpha_i w_i)^2 <= n^-beta`
    pub w2: Condition<T>,
    /// `n^(2/d) sum_{i>k2} w_i / sum alpha_i w_i <= 1/log n`
    pub w3: Condition<T>,
    /// `sum_{i>k2} w_i^2 / sum w^2 <= 1/log n`
    pub w4: Condition<T>,
    /// `sum w^3 / (sum w^2)^(3/2) <= 1/log n`
    pub w5: Condition<T>,
}

impl<T: Scalar> AdmissibilityReport<T> {
    pub fn conditions(&self) -> [Condition<T>; 5] {
        [self.w1, self.w2, self.w3, self.w4, self.w5]
    }

    pub fn all_hold(&self) -> bool {
        self.conditions().iter().all(|c| c.holds)
    }
}

pub fn check_admissibility<T: Scalar>(
    w: &WeightVector<T>,
    d: usize,
    beta: T,
) -> Result<AdmissibilityReport<T>> {
    let n = w.len();
    if n < 3 {
        return Err(invalid("admissibility needs n >= 3 so that log n > 1"));
    }
    if d == 0 {
        return Err(Error::ZeroDimension);
    }
    if !(beta > T::zero() && beta < T::of(0.5)) {
        return Err(invalid("beta must lie in (0, 1/2)"));
    }
    let nf = T::of_usize(n);
    let df = T::of_usize(d);
    let inv_log = nf.ln().recip();
    let n_beta = nf.powf(-beta);
    let k2 = ceil_count(nf.powf(T::one() - beta)).min(n);

    let ws = w.as_slice();
    let sq = w.sum_squares();
    let cube: T = w.support().iter().map(|&x| x * x * x).sum();
    let moment = w.alpha_moment(d);
    let tail: T = ws[k2..].iter().copied().sum();
    let tail_sq: T = ws[k2..].iter().map(|&x| x * x).sum();

    Ok(AdmissibilityReport {
        n,
        beta,
        k2,
        w1: Condition::new(sq, n_beta),
        w2: Condition::new(nf.powf(-T::of(4.0) / df) * moment * moment, n_beta),
        w3: Condition::new(nf.powf(T::of(2.0) / df) * tail / moment, inv_log),
        w4: Condition::new(tail_sq / sq, inv_log),
        w5: Condition::new(cube / sq.powf(T::of(1.5)), inv_log),
    })
}

/// `B1 sum w^2 + B2 (sum alpha_i w_i / n^(2/d))^2`.
pub fn asymptotic_regret_wnn<T: Scalar>(
    w: &WeightVector<T>,
    n: usize,
    d: usize,
    constants: &RegretConstants<T>,
) -> Result<T> {
    let (b1, b2) = constants
        .absolute()
        .ok_or_else(|| invalid("regret evaluation needs absolute B1 and B2"))?;
    if w.len() != n {
        return Err(invalid(format!("weight length {} does not match n = {n}", w.len())));
    }
    let bias = w.alpha_moment(d) / T::of_usize(n).powf(T::of(2.0) / T::of_usize(d));
    Ok(b1 * w.sum_squares() + b2 * bias * bias)
}

struct EnsembleSums<T> {
    variance: T,
    bias: T,
}

fn ensemble_sums<T: Scalar>(
    workers: &[WeightVector<T>],
    sizes: &[usize],
    d: usize,
) -> Result<EnsembleSums<T>> {
    if workers.is_empty() || workers.len() != sizes.len() {
        return Err(invalid("need one weight vector per worker size"));
    }
    if d == 0 {
        return Err(Error::ZeroDimension);
    }
    for (j, (w, &nj)) in workers.iter().zip(sizes).enumerate() {
        if w.len() != nj {
            return Err(invalid(format!("worker {j}: weight length {} != n_j = {nj}", w.len())));
        }
    }
    let total: usize = sizes.iter().sum();
    let nf = T::of_usize(total);
    let exp = T::of(2.0) / T::of_usize(d);
    let mut variance = T::zero();
    let mut bias = T::zero();
    for (w, &nj) in workers.iter().zip(sizes) {
        let share = T::of_usize(nj) / nf;
        variance = variance + share * share * w.sum_squares();
        bias = bias + share * w.alpha_moment(d) / T::of_usize(nj).powf(exp);
    }
    Ok(EnsembleSums { variance, bias })
}

/// `B1 sum_j (n_j/N)^2 sum_i w_ji^2 + B2 (sum_j (n_j/N) sum_i alpha_i w_ji / n_j^(2/d))^2`.
pub fn asymptotic_regret_enn<T: Scalar>(
    workers: &[WeightVector<T>],
    sizes: &[usize],
    d: usize,
    constants: &RegretConstants<T>,
) -> Result<T> {
    let (b1, b2) = constants
        .absolute()
        .ok_or_else(|| invalid("regret evaluation needs absolute B1 and B2"))?;
    let s = ensemble_sums(workers, sizes, d)?;
    Ok(b1 * s.variance + b2 * s.bias * s.bias)
}

/// Variance-term and bias-term ratios of the ensemble against a global profile.
/// Both tend to one when the local weights match the global ones.
pub fn weight_matching_ratios<T: Scalar>(
    workers: &[WeightVector<T>],
    sizes: &[usize],
    global: &WeightVector<T>,
    d: usize,
) -> Result<(T, T)> {
    let s = ensemble_sums(workers, sizes, d)?;
    let total: usize = sizes.iter().sum();
    if global.len() != total {
        return Err(invalid(format!(
            "global weight length {} != total size {total}",
            global.len()
        )));
    }
    let g_var = global.sum_squares();
    let g_bias = global.alpha_moment(d) / T::of_usize(total).powf(T::of(2.0) / T::of_usize(d));
    if g_var == T::zero() {
        return Err(Error::ZeroDenominator("global sum of squared weights".into()));
    }
    if g_bias == T::zero() {
        return Err(Error::ZeroDenominator("global alpha moment".into()));
    }
    Ok((s.variance / g_var, s.bias / g_bias))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn alpha_values() {
        for d in 1..10 {
            assert_eq!(alpha::<f64>(1, d).unwrap(), 1.0);
        }
        assert_relative_eq!(alpha::<f64>(2, 2).unwrap(), 3.0, max_relative = 1e-14);
        assert!(alpha::<f64>(0, 2).is_err());
    }

    #[test]
    fn alpha_telescopes() {
        for d in [1, 2, 4, 8] {
            let mut acc = 0.0_f64;
            for k in 1..=50 {
                acc += alpha::<f64>(k, d).unwrap();
                let exact = (k as f64).powf(1.0 + 2.0 / d as f64);
                assert_relative_eq!(acc, exact, max_relative = 1e-12);
            }
        }
    }

    #[test]
    fn knn_profiles() {
        assert_eq!(knn_weights::<f64>(5, 5).unwrap().as_slice(), &[0.2; 5]);
        assert_eq!(knn_weights::<f64>(4, 1).unwrap().as_slice(), &[1.0, 0.0, 0.0, 0.0]);
        let w = knn_weights::<f64>(10, 3).unwrap();
        assert_eq!(w.support_size(), 3);
        assert_relative_eq!(w.as_slice().iter().sum::<f64>(), 1.0, epsilon = 1e-15);
        assert!(knn_weights::<f64>(3, 4).is_err());
        assert!(knn_weights::<f64>(3, 0).is_err());
    }

    #[test]
    fn ownn_collapses_at_m1() {
        for d in 1..8 {
            let w = ownn_weights::<f64>(4, 1, d).unwrap();
            assert_eq!(w.as_slice(), &[1.0, 0.0, 0.0, 0.0]);
        }
        assert!(ownn_weights::<f64>(4, 0, 2).is_err());
        assert!(ownn_weights::<f64>(4, 5, 2).is_err());
    }

    #[test]
    fn ownn_m2_d4() {
        // alpha_2 = 2^(3/2) - 1; w_i = (1/2)(3 - 2 alpha_i / 2^(1/2)).
        let a2 = 2f64.powf(1.5) - 1.0;
        let w1 = 0.5 * (3.0 - 2.0 / 2f64.sqrt());
        let w2 = 0.5 * (3.0 - 2.0 * a2 / 2f64.sqrt());
        let w = ownn_weights::<f64>(10, 2, 4).unwrap();
        assert_relative_eq!(w.as_slice()[0], w1, max_relative = 1e-12);
        assert_relative_eq!(w.as_slice()[1], w2, max_relative = 1e-12);
        assert_relative_eq!(w.as_slice()[0], 0.79289, epsilon = 1e-5);
        assert_relative_eq!(w.as_slice()[1], 0.20711, epsilon = 1e-5);
        assert!(!w.was_clipped());
    }

    #[test]
    fn m_star_and_k_star() {
        let one = RegretConstants::<f64>::default();
        let direct = ((32.0_f64 / 12.0).sqrt() * 20000f64.sqrt()).ceil() as usize;
        assert_eq!(direct, 231);
        assert_eq!(optimal_m_star(20000, 4, &one), 231);
        // (d B1 / 4 B2)^(1/2) sqrt(N) at d = 4.
        assert_eq!(optimal_k_star(10000, 4, &one), 100);
        let four = RegretConstants::from_ratio(4.0).unwrap();
        assert_eq!(optimal_k_star(10000, 4, &four), 200);
        let huge = RegretConstants::from_ratio(1e30).unwrap();
        assert_eq!(optimal_m_star(50, 4, &huge), 50);
        assert_eq!(optimal_k_star(50, 4, &huge), 50);
        let tiny = RegretConstants::from_ratio(1e-30).unwrap();
        assert_eq!(optimal_m_star(50, 4, &tiny), 1);
        assert_eq!(optimal_k_star(50, 4, &tiny), 1);
        let mut prev = 0;
        for n in (1..5000).step_by(37) {
            let m = optimal_m_star(n, 3, &one);
            assert!(m >= prev);
            prev = m;
        }
    }

    #[test]
    fn local_counts() {
        assert_eq!(local_count(2000, 20000, 100), 10);
        assert_eq!(local_count(10, 20000, 100), 1);
        assert_eq!(local_count(777, 777, 123), 123);
        assert_eq!(local_count(3, 10, 10), 3);
    }

    #[test]
    fn admissibility_single_neighbor_fails_w1() {
        let w = knn_weights::<f64>(10_000, 1).unwrap();
        let r = check_admissibility(&w, 4, 0.3).unwrap();
        assert!(!r.w1.holds);
        assert_eq!(r.w1.value, 1.0);
        assert!(check_admissibility(&knn_weights::<f64>(2, 1).unwrap(), 4, 0.3).is_err());
        assert!(check_admissibility(&w, 4, 0.5).is_err());
    }

    #[test]
    fn admissibility_knn_band() {
        let (n, d, beta) = (10_000usize, 4usize, 0.1_f64);
        let nf = n as f64;
        let lo = nf.powf(beta).max(nf.ln().powi(2)).ceil() as usize;
        let hi = nf.powf(1.0 - beta * d as f64 / 4.0).min(nf.powf(1.0 - beta)).floor() as usize;
        for k in [lo, (lo + hi) / 2, hi] {
            let r = check_admissibility(&knn_weights::<f64>(n, k).unwrap(), d, beta).unwrap();
            assert!(r.w1.holds && r.w2.holds, "k = {k}: {r:?}");
        }
    }

    #[test]
    fn admissibility_ownn_at_m_star() {
        let n = 100_000;
        let m = optimal_m_star(n, 4, &RegretConstants::<f64>::default());
        let w = ownn_weights::<f64>(n, m, 4).unwrap();
        let r = check_admissibility(&w, 4, 0.1).unwrap();
        // Independent recomputation of the two nontrivial sums.
        let sq: f64 = w.as_slice().iter().map(|x| x * x).sum();
        let cube: f64 = w.as_slice().iter().map(|x| x * x * x).sum();
        assert_relative_eq!(r.w1.value, sq, max_relative = 1e-12);
        assert_relative_eq!(r.w5.value, cube / sq.powf(1.5), max_relative = 1e-12);
        assert!(r.all_hold(), "{r:?}");
    }

    #[test]
    fn regret_wnn_examples() {
        let c = RegretConstants::from_absolute(1.0, 1.0).unwrap();
        let w = knn_weights::<f64>(10_000, 100).unwrap();
        assert_relative_eq!(asymptotic_regret_wnn(&w, 10_000, 4, &c).unwrap(), 0.02, max_relative = 1e-10);
        let c0 = RegretConstants::from_absolute(2.0, 0.0).unwrap();
        assert_relative_eq!(asymptotic_regret_wnn(&w, 10_000, 4, &c0).unwrap(), 0.02, max_relative = 1e-10);
        let ratio_only = RegretConstants::from_ratio(1.0).unwrap();
        assert!(asymptotic_regret_wnn(&w, 10_000, 4, &ratio_only).is_err());
        // kNN reduction B1/k + B2 (k/N)^(4/d).
        let c = RegretConstants::from_absolute(0.7, 1.3).unwrap();
        for (n, k, d) in [(500, 17, 2), (3000, 90, 5), (40, 40, 1)] {
            let w = knn_weights::<f64>(n, k).unwrap();
            let expect = 0.7 / k as f64 + 1.3 * (k as f64 / n as f64).powf(4.0 / d as f64);
            assert_relative_eq!(asymptotic_regret_wnn(&w, n, d, &c).unwrap(), expect, max_relative = 1e-10);
        }
    }

    #[test]
    fn regret_enn_examples() {
        let c = RegretConstants::from_absolute(0.9, 1.7).unwrap();
        let w = ownn_weights::<f64>(800, 40, 3).unwrap();
        assert_eq!(
            asymptotic_regret_enn(std::slice::from_ref(&w), &[800], 3, &c).unwrap(),
            asymptotic_regret_wnn(&w, 800, 3, &c).unwrap()
        );
        // Equal workers, k_j = K/s: reduces to the oracle kNN value.
        let (s, nj, kj, d) = (4usize, 2500usize, 25usize, 4usize);
        let ws: Vec<_> = (0..s).map(|_| knn_weights::<f64>(nj, kj).unwrap()).collect();
        let (n, k) = ((s * nj) as f64, (s * kj) as f64);
        let expect = 0.9 / k + 1.7 * (k / n).powf(4.0 / d as f64);
        assert_relative_eq!(asymptotic_regret_enn(&ws, &[nj; 4], d, &c).unwrap(), expect, max_relative = 1e-10);
        let zero = RegretConstants::from_absolute(0.0, 0.0).unwrap();
        assert_eq!(asymptotic_regret_enn(&ws, &[nj; 4], d, &zero).unwrap(), 0.0);
        assert!(asymptotic_regret_enn(&ws, &[nj; 3], d, &c).is_err());
    }

    #[test]
    fn matching_ratios_single_worker() {
        let w = ownn_weights::<f64>(300, 20, 4).unwrap();
        let (r1, r2) = weight_matching_ratios(std::slice::from_ref(&w), &[300], &w, 4).unwrap();
        assert_relative_eq!(r1, 1.0, epsilon = 1e-14);
        assert_relative_eq!(r2, 1.0, epsilon = 1e-14);
    }

    proptest! {
        #[test]
        fn ownn_invariants(m in 1usize..400, extra in 0usize..50, d in 1usize..12) {
            let w = ownn_weights::<f64>(m + extra, m, d).unwrap();
            let s: f64 = w.as_slice().iter().sum();
            prop_assert!((s - 1.0).abs() <= 1e-12);
            prop_assert!(w.as_slice().iter().all(|&x| x >= 0.0));
            prop_assert!(w.as_slice()[..m].windows(2).all(|p| p[0] >= p[1]));
            prop_assert!(w.as_slice()[m..].iter().all(|&x| x == 0.0));
        }

        #[test]
        fn local_counts_sum_within_slack(s in 1usize..40, nj in 1usize..2000, frac in 0.0f64..1.0) {
            let n = s * nj;
            let m = ((n as f64 * frac) as usize).max(1);
            let total: usize = (0..s).map(|_| local_count(nj, n, m)).sum();
            prop_assert!(total >= m && total <= m + s);
        }
    }
}
