//! Enhanced nearest neighbor (ENN) classification of crowdsourced labels.
//!
//! Each worker `j` labels its own slice of the data through a two-coin channel
//! with sensitivity `a_j` and specificity `b_j`. ENN maps every observed label
//! to the enhanced value `(y + b_j - 1) / (a_j + b_j - 1)`, whose conditional
//! mean is the clean regression function, runs a weighted nearest-neighbor
//! vote inside each worker's data, and combines the local votes with worker
//! weights `W_j = n_j / N`:
//!
//! ```text
//! score(x) = sum_j W_j sum_i w_{j,i} enhanced_j(Y^j_(i)(x)),   label = 1{score >= 1/2}
//! ```
//!
//! Worker qualities are either known or estimated, from an expert worker
//! ([`estimate_quality_expert`]) or iteratively from ENN's own predictions
//! ([`estimate_quality_iterative`]). Workers with `a + b <= 1` carry no usable
//! signal and are dropped before enhancement.

use std::sync::Arc;

use log::warn;
use rayon::prelude::*;

use crate::classify::{threshold, weighted_vote, LabeledDataset, WnnModel};
use crate::error::{invalid, Error, Result};
use crate::neighbors::NeighborIndex;
use crate::points::{check_query, Points};
use crate::scalar::Scalar;
use crate::weights::{knn_weights, local_count, ownn_weights, WeightVector};

/// Workers must clear `a + b > 1 + ADVERSARIAL_MARGIN` to be used.
pub const ADVERSARIAL_MARGIN: f64 = 1e-6;

/// Stop threshold on the mean absolute quality change.
pub const DEFAULT_STOP_C: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QualitySource {
    Known,
    EstimatedExpert,
    EstimatedIterative,
}

/// Sensitivity `a = P(Y^j = 1 | Y = 1)` and specificity `b = P(Y^j = 0 | Y = 0)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WorkerQuality<T> {
    pub a: T,
    pub b: T,
    pub source: QualitySource,
}

impl<T: Scalar> WorkerQuality<T> {
    pub fn new(a: T, b: T, source: QualitySource) -> Result<Self> {
        let unit = |v: T| v >= T::zero() && v <= T::one();
        if !(unit(a) && unit(b)) {
            return Err(invalid(format!("worker quality ({a}, {b}) outside [0, 1]")));
        }
        Ok(Self { a, b, source })
    }

    pub fn known(a: T, b: T) -> Result<Self> {
        Self::new(a, b, QualitySource::Known)
    }

    pub fn expert() -> Self {
        Self { a: T::one(), b: T::one(), source: QualitySource::Known }
    }

    pub fn is_adversarial(&self) -> bool {
        self.a + self.b <= T::one() + T::of(ADVERSARIAL_MARGIN)
    }
}

/// `(y + b - 1) / (a + b - 1)`. Unbounded; values below 0 or above 1 are expected.
pub fn enhance_label<T: Scalar>(y: u8, q: &WorkerQuality<T>) -> Result<T> {
    if y > 1 {
        return Err(Error::InvalidLabel { row: 0, label: y });
    }
    if q.is_adversarial() {
        return Err(Error::AdversarialWorker { worker: 0, sum: (q.a + q.b).to_f64_lossy() });
    }
    Ok((T::of_usize(y as usize) + q.b - T::one()) / (q.a + q.b - T::one()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Worker<T> {
    pub data: LabeledDataset<T>,
    pub quality: Option<WorkerQuality<T>>,
    pub is_expert: bool,
}

impl<T: Scalar> Worker<T> {
    pub fn new(data: LabeledDataset<T>) -> Self {
        Self { data, quality: None, is_expert: false }
    }

    pub fn with_quality(data: LabeledDataset<T>, quality: WorkerQuality<T>) -> Self {
        Self { data, quality: Some(quality), is_expert: false }
    }

    pub fn expert(data: LabeledDataset<T>) -> Self {
        Self { data, quality: Some(WorkerQuality::expert()), is_expert: true }
    }
}

/// Ordered per-worker datasets sharing one feature space.
#[derive(Debug, Clone, PartialEq)]
pub struct CrowdData<T> {
    workers: Vec<Worker<T>>,
    dim: usize,
}

impl<T: Scalar> CrowdData<T> {
    pub fn new(workers: Vec<Worker<T>>) -> Result<Self> {
        let dim = workers.first().ok_or_else(|| invalid("crowd has no workers"))?.data.dim();
        for w in &workers {
            if w.data.dim() != dim {
                return Err(Error::DimensionMismatch { expected: dim, found: w.data.dim() });
            }
        }
        Ok(Self { workers, dim })
    }

    pub fn workers(&self) -> &[Worker<T>] {
        &self.workers
    }

    pub fn num_workers(&self) -> usize {
        self.workers.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.workers.iter().map(|w| w.data.len()).collect()
    }

    pub fn total_size(&self) -> usize {
        self.workers.iter().map(|w| w.data.len()).sum()
    }

    /// All workers' data stacked in worker order.
    pub fn pooled(&self) -> LabeledDataset<T> {
        LabeledDataset::concat(self.workers.iter().map(|w| &w.data))
            .expect("workers share a dimension")
    }

    /// Position of the single designated expert.
    pub fn expert_index(&self) -> Result<usize> {
        let mut experts = self.workers.iter().enumerate().filter(|(_, w)| w.is_expert);
        let (first, _) = experts.next().ok_or(Error::NoExpert)?;
        if experts.next().is_some() {
            return Err(Error::MultipleExperts);
        }
        Ok(first)
    }

    /// Qualities attached to the workers, if every worker has one.
    pub fn known_qualities(&self) -> Option<Vec<WorkerQuality<T>>> {
        self.workers.iter().map(|w| w.quality).collect()
    }
}

/// Outcome of dropping adversarial workers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FilterReport {
    pub retained: Vec<usize>,
    pub dropped: Vec<usize>,
}

pub fn filter_adversarial<T: Scalar>(qualities: &[WorkerQuality<T>]) -> Result<FilterReport> {
    let (dropped, retained): (Vec<usize>, Vec<usize>) =
        (0..qualities.len()).partition(|&j| qualities[j].is_adversarial());
    if retained.is_empty() {
        return Err(Error::NoWorkersRetained);
    }
    Ok(FilterReport { retained, dropped })
}

/// Local kNN weights with `k_j = local_count(n_j, N, global_k)`.
pub fn local_knn_weights<T: Scalar>(sizes: &[usize], global_k: usize) -> Result<Vec<WeightVector<T>>> {
    let n: usize = sizes.iter().sum();
    sizes.iter().map(|&nj| knn_weights(nj, local_count(nj, n, global_k))).collect()
}

/// Local OWNN weights `w*(n_j, l_j)` with `l_j = local_count(n_j, N, global_m)`.
pub fn local_ownn_weights<T: Scalar>(
    sizes: &[usize],
    global_m: usize,
    d: usize,
) -> Result<Vec<WeightVector<T>>> {
    let n: usize = sizes.iter().sum();
    sizes.iter().map(|&nj| ownn_weights(nj, local_count(nj, n, global_m), d)).collect()
}

/// Per-worker neighbor indexes. Independent of worker quality, so one index
/// serves every quality iterate.
#[derive(Debug)]
pub struct CrowdIndex<T> {
    indexes: Vec<NeighborIndex<T>>,
    labels: Vec<Vec<u8>>,
    dim: usize,
}

impl<T: Scalar> CrowdIndex<T> {
    pub fn build(crowd: &CrowdData<T>) -> Self {
        let indexes = crowd
            .workers()
            .par_iter()
            .map(|w| NeighborIndex::build(w.data.points().clone()))
            .collect();
        let labels = crowd.workers().iter().map(|w| w.data.labels().to_vec()).collect();
        Self { indexes, labels, dim: crowd.dim() }
    }

    pub fn num_workers(&self) -> usize {
        self.indexes.len()
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.indexes.iter().map(|i| i.len()).collect()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn index(&self, j: usize) -> &NeighborIndex<T> {
        &self.indexes[j]
    }

    fn check_weights(&self, local_weights: &[WeightVector<T>]) -> Result<()> {
        if local_weights.len() != self.indexes.len() {
            return Err(invalid(format!(
                "{} local weight vectors for {} workers",
                local_weights.len(),
                self.indexes.len()
            )));
        }
        for (j, (w, idx)) in local_weights.iter().zip(&self.indexes).enumerate() {
            if w.len() != idx.len() {
                return Err(invalid(format!(
                    "worker {j}: weight length {} != n_j = {}",
                    w.len(),
                    idx.len()
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct RetainedWorker<T> {
    worker: usize,
    weight: T,
    /// Enhanced value of an observed 0 and an observed 1.
    enhanced: [T; 2],
}

/// Algorithm-1 classifier over a crowd with fixed qualities and local weights.
#[derive(Debug, Clone)]
pub struct EnnModel<T> {
    index: Arc<CrowdIndex<T>>,
    qualities: Vec<WorkerQuality<T>>,
    local_weights: Arc<Vec<WeightVector<T>>>,
    retained: Vec<RetainedWorker<T>>,
    report: FilterReport,
}

impl<T: Scalar> EnnModel<T> {
    pub fn fit(
        crowd: &CrowdData<T>,
        qualities: Vec<WorkerQuality<T>>,
        local_weights: Vec<WeightVector<T>>,
    ) -> Result<Self> {
        Self::with_index(Arc::new(CrowdIndex::build(crowd)), qualities, Arc::new(local_weights))
    }

    pub fn with_index(
        index: Arc<CrowdIndex<T>>,
        qualities: Vec<WorkerQuality<T>>,
        local_weights: Arc<Vec<WeightVector<T>>>,
    ) -> Result<Self> {
        if qualities.len() != index.num_workers() {
            return Err(invalid(format!(
                "{} qualities for {} workers",
                qualities.len(),
                index.num_workers()
            )));
        }
        index.check_weights(&local_weights)?;
        let report = filter_adversarial(&qualities)?;
        let sizes = index.sizes();
        let total: usize = report.retained.iter().map(|&j| sizes[j]).sum();
        let retained = report
            .retained
            .iter()
            .map(|&j| {
                let q = &qualities[j];
                Ok(RetainedWorker {
                    worker: j,
                    weight: T::of_usize(sizes[j]) / T::of_usize(total),
                    enhanced: [enhance_label(0, q)?, enhance_label(1, q)?],
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { index, qualities, local_weights, retained, report })
    }

    pub fn qualities(&self) -> &[WorkerQuality<T>] {
        &self.qualities
    }

    pub fn local_weights(&self) -> &[WeightVector<T>] {
        &self.local_weights
    }

    pub fn filter_report(&self) -> &FilterReport {
        &self.report
    }

    /// `(worker, W_j)` for every retained worker.
    pub fn worker_weights(&self) -> Vec<(usize, T)> {
        self.retained.iter().map(|r| (r.worker, r.weight)).collect()
    }

    /// Enhanced local WNN estimate of one worker.
    pub fn local_score(&self, worker: usize, query: &[T]) -> Result<T> {
        let r = self
            .retained
            .iter()
            .find(|r| r.worker == worker)
            .ok_or_else(|| invalid(format!("worker {worker} is not retained")))?;
        self.local_score_of(r, query)
    }

    fn local_score_of(&self, r: &RetainedWorker<T>, query: &[T]) -> Result<T> {
        let w = &self.local_weights[r.worker];
        let nl = self.index.index(r.worker).k_nearest(query, w.support_size().max(1))?;
        let labels = &self.index.labels[r.worker];
        Ok(weighted_vote(&nl, w.support(), |i| r.enhanced[labels[i] as usize]))
    }

    pub fn score(&self, query: &[T]) -> Result<T> {
        check_query(query, self.index.dim())?;
        let mut acc = T::zero();
        for r in &self.retained {
            acc = acc + r.weight * self.local_score_of(r, query)?;
        }
        Ok(acc)
    }

    pub fn classify(&self, query: &[T]) -> Result<u8> {
        self.score(query).map(threshold)
    }

    pub fn score_all(&self, queries: &Points<T>) -> Result<Vec<T>> {
        (0..queries.len())
            .into_par_iter()
            .map(|i| self.score(queries.row(i)))
            .collect()
    }
}

/// `#{pred = 1, y = 1} / #{pred = 1}` and `#{pred = 0, y = 0} / #{pred = 0}`;
/// `None` where the denominator is zero.
fn agreement_fractions<T: Scalar>(predicted: &[u8], observed: &[u8]) -> (Option<T>, Option<T>) {
    let mut counts = [[0usize; 2]; 2];
    for (&p, &y) in predicted.iter().zip(observed) {
        counts[p as usize][y as usize] += 1;
    }
    let frac = |p: usize| {
        let den = counts[p][0] + counts[p][1];
        (den > 0).then(|| T::of_usize(counts[p][p]) / T::of_usize(den))
    };
    (frac(1), frac(0))
}

/// Qualities estimated against an expert worker's kNN predictions.
#[derive(Debug, Clone)]
pub struct ExpertEstimate<T> {
    pub qualities: Vec<WorkerQuality<T>>,
    /// Neighbor count used on the expert data.
    pub k: usize,
    pub warnings: Vec<String>,
}

/// `round_half_up(n^(4/(d+4)))`, clamped to `[1, n]`.
pub fn expert_neighbor_count(n_expert: usize, d: usize) -> usize {
    let raw = (n_expert as f64).powf(4.0 / (d as f64 + 4.0));
    ((raw + 0.5).floor() as usize).clamp(1, n_expert.max(1))
}

/// Expert-anchored estimation: kNN trained on the expert worker relabels every
/// other worker's points, and each worker's quality is read off the agreement
/// between its labels and those predictions. The expert gets `(1, 1)`.
pub fn estimate_quality_expert<T: Scalar>(crowd: &CrowdData<T>) -> Result<ExpertEstimate<T>> {
    let s = crowd.expert_index()?;
    let expert = &crowd.workers()[s].data;
    if expert.len() < 2 {
        return Err(invalid("expert data needs at least 2 points"));
    }
    let k = expert_neighbor_count(expert.len(), crowd.dim());
    let model = WnnModel::new(expert.clone(), knn_weights(expert.len(), k)?)?;
    let mut warnings = Vec::new();
    let mut qualities = Vec::with_capacity(crowd.num_workers());
    for (j, w) in crowd.workers().iter().enumerate() {
        if j == s {
            qualities.push(WorkerQuality { a: T::one(), b: T::one(), source: QualitySource::EstimatedExpert });
            continue;
        }
        let pts = w.data.points();
        let predicted: Vec<u8> = (0..pts.len())
            .into_par_iter()
            .map(|i| model.classify(pts.row(i)))
            .collect::<Result<_>>()?;
        let (a, b) = agreement_fractions::<T>(&predicted, w.data.labels());
        let a = a.unwrap_or_else(|| {
            let msg = format!("worker {j}: no point predicted as 1; sensitivity set to 1");
            warn!("{msg}");
            warnings.push(msg);
            T::one()
        });
        let b = b.unwrap_or_else(|| {
            let msg = format!("worker {j}: no point predicted as 0; specificity set to 1");
            warn!("{msg}");
            warnings.push(msg);
            T::one()
        });
        qualities.push(WorkerQuality { a, b, source: QualitySource::EstimatedExpert });
    }
    Ok(ExpertEstimate { qualities, k, warnings })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterativeOptions<T> {
    /// Stop once the mean absolute quality change is at most this.
    pub stop_c: T,
    pub max_iters: usize,
    /// Exclude each training point from its own worker's neighbor set when
    /// relabeling it. Off by default.
    pub leave_one_out: bool,
}

impl<T: Scalar> Default for IterativeOptions<T> {
    fn default() -> Self {
        Self { stop_c: T::of(DEFAULT_STOP_C), max_iters: 50, leave_one_out: false }
    }
}

#[derive(Debug, Clone)]
pub struct IterativeEstimate<T> {
    pub qualities: Vec<WorkerQuality<T>>,
    pub iterations: usize,
    pub final_delta: T,
    /// `final_delta <= stop_c`.
    pub converged: bool,
    /// Change after each iteration.
    pub deltas: Vec<T>,
    pub warnings: Vec<String>,
}

/// Label-class weight masses `(sum_{y=0} w_i, sum_{y=1} w_i)` that each
/// worker's local WNN assigns to each training point.
///
/// ENN's score is linear in a worker's two enhanced values, so these masses
/// fix every training-point score for every quality iterate.
struct VoteCache<T> {
    /// `masses[p * s + l]` for global training row `p` and worker `l`.
    masses: Vec<[T; 2]>,
    /// Global rows owned by each worker.
    rows: Vec<std::ops::Range<usize>>,
    s: usize,
}

impl<T: Scalar> VoteCache<T> {
    fn build(
        crowd: &CrowdData<T>,
        index: &CrowdIndex<T>,
        weights: &[WeightVector<T>],
        leave_one_out: bool,
    ) -> Result<Self> {
        let s = crowd.num_workers();
        let mut rows = Vec::with_capacity(s);
        let mut owner = Vec::with_capacity(crowd.total_size());
        let mut start = 0;
        for (j, w) in crowd.workers().iter().enumerate() {
            rows.push(start..start + w.data.len());
            owner.extend((0..w.data.len()).map(|i| (j, i)));
            start += w.data.len();
        }
        let per_point: Vec<Vec<[T; 2]>> = owner
            .par_iter()
            .map(|&(j, i)| {
                let x = crowd.workers()[j].data.points().row(i);
                (0..s)
                    .map(|l| {
                        let w = &weights[l];
                        let k = w.support_size().max(1);
                        let skip_self = leave_one_out && l == j;
                        let nl = index.index(l).k_nearest(x, k + usize::from(skip_self))?;
                        let labels = &index.labels[l];
                        let mut mass = [T::zero(); 2];
                        let neighbors = nl.entries().iter().filter(|n| !(skip_self && n.index == i));
                        for (n, &wi) in neighbors.zip(w.support()) {
                            let y = labels[n.index] as usize;
                            mass[y] = mass[y] + wi;
                        }
                        Ok(mass)
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<_>>()?;
        Ok(Self { masses: per_point.into_iter().flatten().collect(), rows, s })
    }

    fn predict(&self, model_weights: &[(usize, T, [T; 2])], p: usize) -> u8 {
        let base = p * self.s;
        let mut acc = T::zero();
        for &(l, wl, enh) in model_weights {
            let m = self.masses[base + l];
            acc = acc + wl * (enh[0] * m[0] + enh[1] * m[1]);
        }
        threshold(acc)
    }
}

/// Iterative estimation without expert data: start from `(1, 1)` for every
/// worker, relabel all training points with ENN under the current qualities,
/// re-estimate each worker's quality from agreement with those labels, and
/// repeat until the mean absolute change drops to `stop_c` or `max_iters`.
pub fn estimate_quality_iterative<T: Scalar>(
    crowd: &CrowdData<T>,
    local_weights: &[WeightVector<T>],
    options: &IterativeOptions<T>,
) -> Result<IterativeEstimate<T>> {
    let index = CrowdIndex::build(crowd);
    estimate_quality_iterative_with_index(crowd, &index, local_weights, options)
}

pub fn estimate_quality_iterative_with_index<T: Scalar>(
    crowd: &CrowdData<T>,
    index: &CrowdIndex<T>,
    local_weights: &[WeightVector<T>],
    options: &IterativeOptions<T>,
) -> Result<IterativeEstimate<T>> {
    if !(options.stop_c > T::zero()) {
        return Err(invalid("stop criterion must be positive"));
    }
    if options.max_iters == 0 {
        return Err(invalid("max_iters must be at least 1"));
    }
    index.check_weights(local_weights)?;
    let s = crowd.num_workers();
    let sizes = crowd.sizes();
    let cache = VoteCache::build(crowd, index, local_weights, options.leave_one_out)?;

    let mut current: Vec<WorkerQuality<T>> = (0..s)
        .map(|_| WorkerQuality { a: T::one(), b: T::one(), source: QualitySource::EstimatedIterative })
        .collect();
    let mut warnings = Vec::new();
    let mut deltas = Vec::new();
    let two_s = T::of_usize(2 * s);

    for iteration in 1..=options.max_iters {
        let report = filter_adversarial(&current).map_err(|_| {
            invalid(format!("iteration {iteration}: every worker has a + b <= 1"))
        })?;
        let total: usize = report.retained.iter().map(|&j| sizes[j]).sum();
        let model: Vec<(usize, T, [T; 2])> = report
            .retained
            .iter()
            .map(|&l| {
                let q = &current[l];
                Ok((
                    l,
                    T::of_usize(sizes[l]) / T::of_usize(total),
                    [enhance_label(0, q)?, enhance_label(1, q)?],
                ))
            })
            .collect::<Result<_>>()?;

        let mut next = current.clone();
        let mut change = T::zero();
        for j in 0..s {
            let predicted: Vec<u8> = cache.rows[j].clone().map(|p| cache.predict(&model, p)).collect();
            let (a, b) = agreement_fractions::<T>(&predicted, crowd.workers()[j].data.labels());
            if a.is_none() || b.is_none() {
                let msg = format!(
                    "iteration {iteration}, worker {j}: empty predicted class; keeping previous estimate"
                );
                warn!("{msg}");
                warnings.push(msg);
            }
            next[j].a = a.unwrap_or(current[j].a);
            next[j].b = b.unwrap_or(current[j].b);
            change = change + (next[j].a - current[j].a).abs() + (next[j].b - current[j].b).abs();
        }
        let delta = change / two_s;
        deltas.push(delta);
        current = next;
        if delta <= options.stop_c {
            return Ok(IterativeEstimate {
                qualities: current,
                iterations: iteration,
                final_delta: delta,
                converged: true,
                deltas,
                warnings,
            });
        }
    }
    let final_delta = *deltas.last().expect("max_iters >= 1");
    Ok(IterativeEstimate {
        qualities: current,
        iterations: options.max_iters,
        final_delta,
        converged: false,
        deltas,
        warnings,
    })
}
