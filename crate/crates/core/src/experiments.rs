//! Monte-Carlo studies: risk comparison across methods, quality-estimation
//! accuracy, weight matching between local and global OWNN weights, and the
//! sweep over the number of workers.
//!
//! Replications run in parallel; results are collected in replication order
//! so every table is reproducible from the seed.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classify::{smoothed_risk, threshold, LabeledDataset, WnnModel};
use crate::datagen::rng::{self, Purpose};
use crate::datagen::{
    partition_with_sizes, sample_ground_truth, split_experts, QualitySetup, SimulationId,
    SimulationSpec,
};
use crate::enn::{
    estimate_quality_expert, estimate_quality_iterative_with_index, filter_adversarial,
    local_knn_weights, local_ownn_weights, CrowdData, CrowdIndex, EnnModel, IterativeOptions,
    WorkerQuality,
};
use crate::error::{Error, Result};
use crate::neighbors::NeighborIndex;
use crate::points::Points;
use crate::scalar::{pairwise_sum, Scalar};
use crate::weights::{
    knn_weights, local_count, optimal_m_star, ownn_weights, power_count, weight_matching_ratios,
    RegretConstants, WeightVector,
};

/// Replication index reserved for the pilot sample used to tune counts.
const PILOT_REP: u64 = u64::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// kNN on the pooled, corrupted labels.
    NaiveKnn,
    /// kNN on an independent clean sample of the same size.
    OracleKnn,
    /// OWNN on an independent clean sample of the same size.
    OracleOwnn,
    /// ENN with local kNN weights and known qualities.
    EnnK,
    /// ENN with local OWNN weights and known qualities.
    EnnOwnn,
    /// ENN(k) with qualities estimated against the expert worker.
    Enn2,
    /// ENN(k) with iteratively estimated qualities.
    Enn3,
    Bayes,
}

impl Method {
    pub const ALL: [Method; 8] = [
        Method::NaiveKnn,
        Method::OracleKnn,
        Method::OracleOwnn,
        Method::EnnK,
        Method::EnnOwnn,
        Method::Enn2,
        Method::Enn3,
        Method::Bayes,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::NaiveKnn => "naive_knn",
            Method::OracleKnn => "oracle_knn",
            Method::OracleOwnn => "oracle_ownn",
            Method::EnnK => "enn_k",
            Method::EnnOwnn => "enn_ownn",
            Method::Enn2 => "enn2",
            Method::Enn3 => "enn3",
            Method::Bayes => "bayes",
        }
    }

    fn uses_k(self) -> bool {
        matches!(
            self,
            Method::NaiveKnn | Method::OracleKnn | Method::EnnK | Method::Enn2 | Method::Enn3
        )
    }

    fn uses_m(self) -> bool {
        matches!(self, Method::OracleOwnn | Method::EnnOwnn)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| config_error("methods", format!("unknown method `{s}`")))
    }
}

/// Global kNN count rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum KRule {
    /// `ceil(N^0.7)`.
    #[serde(rename = "power_0.7")]
    Power07,
    #[serde(rename = "cv")]
    Cv,
}

/// Global OWNN count rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MstarRule {
    Cv,
    /// Closed form with the configured `B1/B2`.
    Constants,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightScheme {
    Knn,
    Ownn,
}

fn scheme_weights<T: Scalar>(scheme: WeightScheme, n: usize, count: usize, d: usize) -> Result<WeightVector<T>> {
    match scheme {
        WeightScheme::Knn => knn_weights(n, count),
        WeightScheme::Ownn => ownn_weights(n, count, d),
    }
}

fn config_error(field: &str, reason: impl Into<String>) -> Error {
    Error::Config { field: field.into(), reason: reason.into() }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub sim: SimulationId,
    pub d: usize,
    pub setup_ids: Vec<usize>,
    pub methods: Vec<Method>,
    /// Total training size before `scale` is applied.
    pub n: usize,
    pub test_size: usize,
    pub reps: usize,
    pub seed: u64,
    pub k_rule: KRule,
    pub mstar_rule: MstarRule,
    pub stop_c: f64,
    /// Multiplier on `n`, e.g. 0.25 for quick runs.
    pub scale: f64,
    /// `B1/B2` for the closed-form counts.
    pub regret_ratio: f64,
    pub cv_folds: usize,
    pub gammas: Vec<f64>,
    pub matching_sizes: Vec<usize>,
    pub matching_workers: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            sim: SimulationId::Gaussian,
            d: 4,
            setup_ids: vec![1, 2, 3, 4, 5],
            methods: vec![
                Method::NaiveKnn,
                Method::OracleKnn,
                Method::OracleOwnn,
                Method::EnnK,
                Method::EnnOwnn,
                Method::Enn3,
                Method::Bayes,
            ],
            n: 20000,
            test_size: 1000,
            reps: 100,
            seed: 1,
            k_rule: KRule::Power07,
            mstar_rule: MstarRule::Cv,
            stop_c: 0.02,
            scale: 0.25,
            regret_ratio: 1.0,
            cv_folds: 5,
            gammas: vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7],
            matching_sizes: vec![1_000, 10_000, 100_000],
            matching_workers: 5,
        }
    }
}

impl ExperimentConfig {
    /// `round(scale * n)`, at least 1.
    pub fn effective_n(&self) -> usize {
        ((self.n as f64 * self.scale).round() as usize).max(1)
    }

    pub fn constants(&self) -> Result<RegretConstants<f64>> {
        RegretConstants::from_ratio(self.regret_ratio)
            .map_err(|e| config_error("regret_ratio", e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 {
            return Err(config_error("d", "must be at least 1"));
        }
        if self.reps == 0 {
            return Err(config_error("reps", "must be at least 1"));
        }
        if self.test_size == 0 {
            return Err(config_error("test_size", "must be at least 1"));
        }
        if self.methods.is_empty() {
            return Err(config_error("methods", "must not be empty"));
        }
        if self.setup_ids.is_empty() {
            return Err(config_error("setups", "must not be empty"));
        }
        for &id in &self.setup_ids {
            let setup = QualitySetup::get(id).map_err(|e| config_error("setups", e.to_string()))?;
            if self.methods.contains(&Method::Enn2) && !setup.has_expert {
                return Err(config_error(
                    "methods",
                    format!("enn2 needs an expert worker; setup {id} has none (use setups 6-10)"),
                ));
            }
            setup_sizes(setup, self.effective_n()).map_err(|e| config_error("scale", e.to_string()))?;
        }
        if !(self.scale.is_finite() && self.scale > 0.0) {
            return Err(config_error("scale", "must be positive"));
        }
        if self.n == 0 {
            return Err(config_error("n", "must be at least 1"));
        }
        if !(self.stop_c.is_finite() && self.stop_c > 0.0) {
            return Err(config_error("stop_c", "must be positive"));
        }
        self.constants()?;
        if self.cv_folds < 2 {
            return Err(config_error("cv_folds", "cross-validation needs at least 2 folds"));
        }
        if self.gammas.iter().any(|g| !(g.is_finite() && (0.0..=1.0).contains(g))) {
            return Err(config_error("gammas", "each gamma must lie in [0, 1]"));
        }
        if self.matching_workers == 0 {
            return Err(config_error("matching_workers", "must be at least 1"));
        }
        if self.matching_sizes.iter().any(|&n| n < self.matching_workers) {
            return Err(config_error("matching_sizes", "each size must be at least the worker count"));
        }
        Ok(())
    }
}

/// Worker sizes of `setup` rescaled to total `n`. Rounded per worker, with
/// the rounding slack absorbed by the last worker.
pub fn setup_sizes(setup: &QualitySetup, n: usize) -> Result<Vec<usize>> {
    let total = setup.total_size();
    let mut sizes: Vec<usize> = setup
        .sizes
        .iter()
        .map(|&nj| ((nj as u128 * n as u128 * 2 + total as u128) / (2 * total as u128)) as usize)
        .collect();
    let head: usize = sizes[..sizes.len() - 1].iter().sum();
    if head >= n || sizes.contains(&0) {
        return Err(crate::error::invalid(format!(
            "setup {} cannot be scaled to {n} rows",
            setup.id
        )));
    }
    *sizes.last_mut().expect("five workers") = n - head;
    Ok(sizes)
}

/// `ceil(n^p)` for `p` in {0.5, 0.6, 0.7, 0.8}, deduplicated.
pub fn default_count_grid(n: usize) -> Vec<usize> {
    let mut grid: Vec<usize> = [0.5, 0.6, 0.7, 0.8].iter().map(|&p| power_count(n, p)).collect();
    grid.dedup();
    grid
}

/// Data scored by [`cross_validate_global`].
#[derive(Debug, Clone, Copy)]
pub enum CvTarget<'a, T> {
    /// Clean labels; plain WNN.
    Labeled(&'a LabeledDataset<T>),
    /// Crowd data with qualities; ENN.
    Crowd(&'a CrowdData<T>, &'a [WorkerQuality<T>]),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvOutcome<T> {
    pub best: usize,
    pub grid: Vec<usize>,
    /// Mean held-out loss per grid value.
    pub losses: Vec<T>,
}

/// Picks the global neighbor count from `grid` by `folds`-fold cross-validation.
///
/// A held-out point with prediction `p` costs `p (1 - t) + (1 - p) t`, where `t`
/// is its enhanced label. The enhanced label is unbiased for `eta0`, so the
/// mean cost estimates the smoothed risk. Ties go to the smaller count.
pub fn cross_validate_global<T: Scalar>(
    grid: &[usize],
    target: CvTarget<'_, T>,
    folds: usize,
    scheme: WeightScheme,
    seed: u64,
) -> Result<CvOutcome<T>> {
    if folds < 2 {
        return Err(config_error("cv_folds", "cross-validation needs at least 2 folds"));
    }
    let mut grid = grid.to_vec();
    grid.sort_unstable();
    grid.dedup();
    if grid.is_empty() || grid[0] == 0 {
        return Err(crate::error::invalid("count grid must be nonempty with entries >= 1"));
    }
    let expert = [WorkerQuality::expert()];
    let (data, qualities): (Vec<&LabeledDataset<T>>, &[WorkerQuality<T>]) = match target {
        CvTarget::Labeled(ds) => (vec![ds], &expert),
        CvTarget::Crowd(crowd, q) => {
            if q.len() != crowd.num_workers() {
                return Err(crate::error::invalid("one quality per worker required"));
            }
            (crowd.workers().iter().map(|w| &w.data).collect(), q)
        }
    };
    let dim = data[0].dim();
    let retained = filter_adversarial(qualities)?.retained;
    let enhanced: Vec<[T; 2]> = retained
        .iter()
        .map(|&j| {
            let q = &qualities[j];
            Ok([crate::enn::enhance_label(0, q)?, crate::enn::enhance_label(1, q)?])
        })
        .collect::<Result<_>>()?;

    let mut rng = rng::stream(seed, 0, Purpose::Folds, 0);
    let fold_of: Vec<Vec<usize>> = retained
        .iter()
        .map(|&j| {
            let mut perm: Vec<usize> = (0..data[j].len()).collect();
            perm.shuffle(&mut rng);
            let mut f = vec![0; perm.len()];
            for (pos, &row) in perm.iter().enumerate() {
                f[row] = pos % folds;
            }
            f
        })
        .collect();

    let mut per_point: Vec<Vec<T>> = Vec::new();
    for fold in 0..folds {
        let mut train = Vec::with_capacity(retained.len());
        for (r, &j) in retained.iter().enumerate() {
            let rows: Vec<usize> = (0..data[j].len()).filter(|&i| fold_of[r][i] != fold).collect();
            if rows.is_empty() {
                return Err(crate::error::invalid(format!(
                    "worker {} has too few points for {folds} folds",
                    j + 1
                )));
            }
            train.push(data[j].select(&rows)?);
        }
        let n_train: usize = train.iter().map(|t| t.len()).sum();
        let share: Vec<T> = train.iter().map(|t| T::of_usize(t.len()) / T::of_usize(n_train)).collect();
        let weights: Vec<Vec<WeightVector<T>>> = train
            .iter()
            .map(|t| {
                grid.iter()
                    .map(|&g| scheme_weights(scheme, t.len(), local_count(t.len(), n_train, g), dim))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<_>>()?;
        let indexes: Vec<NeighborIndex<T>> =
            train.par_iter().map(|t| NeighborIndex::build(t.points().clone())).collect();
        let held: Vec<(usize, usize)> = retained
            .iter()
            .enumerate()
            .flat_map(|(r, &j)| {
                let fold_of = &fold_of[r];
                (0..data[j].len()).filter(move |&i| fold_of[i] == fold).map(move |i| (r, i))
            })
            .collect();
        let losses = held
            .par_iter()
            .map(|&(r, i)| {
                let src = data[retained[r]];
                let x = src.points().row(i);
                let mut scores = vec![T::zero(); grid.len()];
                for (l, idx) in indexes.iter().enumerate() {
                    let kmax = weights[l].iter().map(|w| w.support_size()).max().unwrap_or(1).max(1);
                    let nl = idx.k_nearest(x, kmax)?;
                    let labels = train[l].labels();
                    let values: Vec<T> =
                        nl.entries().iter().map(|n| enhanced[l][labels[n.index] as usize]).collect();
                    for (g, w) in weights[l].iter().enumerate() {
                        let local: Vec<T> =
                            w.support().iter().zip(&values).map(|(&wi, &v)| wi * v).collect();
                        scores[g] = scores[g] + share[l] * pairwise_sum(&local);
                    }
                }
                let t = enhanced[r][src.labels()[i] as usize];
                Ok(scores
                    .into_iter()
                    .map(|s| if threshold(s) == 1 { T::one() - t } else { t })
                    .collect::<Vec<T>>())
            })
            .collect::<Result<Vec<_>>>()?;
        per_point.extend(losses);
    }
    let count = T::of_usize(per_point.len());
    let losses: Vec<T> = (0..grid.len())
        .map(|g| {
            let col: Vec<T> = per_point.iter().map(|p| p[g]).collect();
            pairwise_sum(&col) / count
        })
        .collect();
    let mut best = 0;
    for g in 1..grid.len() {
        if losses[g] < losses[best] {
            best = g;
        }
    }
    Ok(CvOutcome { best: grid[best], grid, losses })
}

/// Global counts shared by all methods of a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct TunedCounts {
    pub k: usize,
    pub m_star: usize,
}

/// Resolves `K` and `m*` for training size `n`. Cross-validated rules run once
/// on a clean pilot sample drawn from a dedicated stream.
pub fn tune_counts<T: Scalar>(
    cfg: &ExperimentConfig,
    spec: &SimulationSpec,
    n: usize,
    need_k: bool,
    need_m: bool,
) -> Result<TunedCounts> {
    let cv_k = need_k && cfg.k_rule == KRule::Cv;
    let cv_m = need_m && cfg.mstar_rule == MstarRule::Cv;
    let pilot = if cv_k || cv_m {
        Some(sample_ground_truth::<T, _>(
            spec,
            n,
            &mut rng::stream(cfg.seed, PILOT_REP, Purpose::Oracle, 0),
        )?)
    } else {
        None
    };
    let grid = default_count_grid(n);
    let cv = |scheme| -> Result<usize> {
        let pilot = pilot.as_ref().expect("pilot sampled for cross-validation");
        let seed = rng::derive(cfg.seed, PILOT_REP);
        Ok(cross_validate_global(&grid, CvTarget::Labeled(pilot), cfg.cv_folds, scheme, seed)?.best)
    };
    let k = if cv_k { cv(WeightScheme::Knn)? } else { power_count(n, 0.7) };
    let m_star = if cv_m {
        cv(WeightScheme::Ownn)?
    } else {
        optimal_m_star(n, cfg.d, &cfg.constants()?)
    };
    Ok(TunedCounts { k, m_star })
}

fn predict_all<T, F>(classify: F, points: &Points<T>) -> Result<Vec<u8>>
where
    T: Scalar,
    F: Fn(&[T]) -> Result<u8> + Sync,
{
    (0..points.len()).into_par_iter().map(|i| classify(points.row(i))).collect()
}

fn eta_at<T: Scalar>(spec: &SimulationSpec, points: &Points<T>) -> Vec<T> {
    (0..points.len()).into_par_iter().map(|i| spec.eta0(points.row(i))).collect()
}

/// Mean and standard error `sd / sqrt(n)`; the error is 0 for one value.
pub fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = pairwise_sum(xs) / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let sq: Vec<f64> = xs.iter().map(|x| (x - mean) * (x - mean)).collect();
    (mean, (pairwise_sum(&sq) / (n - 1.0)).sqrt() / n.sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RiskRow {
    pub method: Method,
    pub setup_id: usize,
    pub d: usize,
    pub mean_risk: f64,
    pub stderr: f64,
    pub reps: usize,
    /// Smoothed risk of each replication.
    pub risks: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RiskTable {
    pub rows: Vec<RiskRow>,
    pub counts: TunedCounts,
    pub n: usize,
    /// Replication-level cases where a method beat the Bayes rule.
    pub dominance_violations: usize,
}

impl RiskTable {
    pub fn row(&self, method: Method, setup_id: usize) -> Option<&RiskRow> {
        self.rows.iter().find(|r| r.method == method && r.setup_id == setup_id)
    }
}

/// Smoothed test risk of every configured method on every configured setup.
pub fn run_risk_comparison<T: Scalar>(cfg: &ExperimentConfig) -> Result<RiskTable> {
    cfg.validate()?;
    let spec = SimulationSpec::new(cfg.sim, cfg.d)?;
    let n = cfg.effective_n();
    let need_k = cfg.methods.iter().any(|m| m.uses_k());
    let need_m = cfg.methods.iter().any(|m| m.uses_m());
    let counts = tune_counts::<T>(cfg, &spec, n, need_k, need_m)?;
    let setups: Vec<&QualitySetup> =
        cfg.setup_ids.iter().map(|&id| QualitySetup::get(id)).collect::<Result<_>>()?;
    let has = |m: Method| cfg.methods.contains(&m);
    let d = cfg.d;

    // Per replication: one risk per (setup, method) in configuration order.
    let per_rep: Vec<(Vec<f64>, usize)> = (0..cfg.reps as u64)
        .into_par_iter()
        .map(|rep| -> Result<(Vec<f64>, usize)> {
            let truth = sample_ground_truth::<T, _>(&spec, n, &mut rng::stream(cfg.seed, rep, Purpose::Sample, 0))?;
            let test = sample_ground_truth::<T, _>(
                &spec,
                cfg.test_size,
                &mut rng::stream(cfg.seed, rep, Purpose::Test, 0),
            )?;
            let tp = test.points();
            let eta = eta_at(&spec, tp);
            let bayes: Vec<u8> = eta.iter().map(|&e| threshold(e)).collect();
            let risk = |preds: &[u8]| smoothed_risk(preds, &eta).map(|r| r.to_f64_lossy());
            let bayes_risk = risk(&bayes)?;

            let oracle = if has(Method::OracleKnn) || has(Method::OracleOwnn) {
                Some(sample_ground_truth::<T, _>(&spec, n, &mut rng::stream(cfg.seed, rep, Purpose::Oracle, 0))?)
            } else {
                None
            };
            let oracle_knn = match (&oracle, has(Method::OracleKnn)) {
                (Some(o), true) => {
                    let model = WnnModel::new(o.clone(), knn_weights(n, counts.k)?)?;
                    Some(risk(&predict_all(|x| model.classify(x), tp)?)?)
                }
                _ => None,
            };
            let oracle_ownn = match (&oracle, has(Method::OracleOwnn)) {
                (Some(o), true) => {
                    let model = WnnModel::new(o.clone(), ownn_weights(n, counts.m_star, d)?)?;
                    Some(risk(&predict_all(|x| model.classify(x), tp)?)?)
                }
                _ => None,
            };

            let mut out = Vec::new();
            for setup in &setups {
                let sizes = setup_sizes(setup, n)?;
                let crowd = partition_with_sizes(
                    &truth,
                    &sizes,
                    &setup.qualities::<T>(),
                    setup.has_expert,
                    rng::derive(cfg.seed, setup.id as u64),
                    rep,
                )?;
                let known = setup.qualities::<T>();
                let index = Arc::new(CrowdIndex::build(&crowd));
                let k_weights = if need_k {
                    Some(Arc::new(local_knn_weights::<T>(&sizes, counts.k)?))
                } else {
                    None
                };
                let enn_risk = |q: Vec<WorkerQuality<T>>, w: Arc<Vec<WeightVector<T>>>| -> Result<f64> {
                    let model = EnnModel::with_index(index.clone(), q, w)?;
                    risk(&predict_all(|x| model.classify(x), tp)?)
                };
                for &method in &cfg.methods {
                    let r = match method {
                        Method::Bayes => bayes_risk,
                        Method::OracleKnn => oracle_knn.expect("oracle kNN evaluated"),
                        Method::OracleOwnn => oracle_ownn.expect("oracle OWNN evaluated"),
                        Method::NaiveKnn => {
                            let model = WnnModel::new(crowd.pooled(), knn_weights(n, counts.k)?)?;
                            risk(&predict_all(|x| model.classify(x), tp)?)?
                        }
                        Method::EnnK => enn_risk(known.clone(), k_weights.clone().expect("k weights"))?,
                        Method::EnnOwnn => {
                            enn_risk(known.clone(), Arc::new(local_ownn_weights(&sizes, counts.m_star, d)?))?
                        }
                        Method::Enn2 => {
                            let est = estimate_quality_expert(&crowd)?;
                            enn_risk(est.qualities, k_weights.clone().expect("k weights"))?
                        }
                        Method::Enn3 => {
                            let w = k_weights.clone().expect("k weights");
                            let opts = IterativeOptions { stop_c: T::of(cfg.stop_c), ..Default::default() };
                            let est = estimate_quality_iterative_with_index(&crowd, &index, &w, &opts)?;
                            enn_risk(est.qualities, w)?
                        }
                    };
                    out.push(r);
                }
            }
            let violations = out.iter().filter(|&&r| r < bayes_risk).count();
            Ok((out, violations))
        })
        .collect::<Result<_>>()?;

    let mut rows = Vec::new();
    let mut col = 0;
    for setup in &setups {
        for &method in &cfg.methods {
            let risks: Vec<f64> = per_rep.iter().map(|(r, _)| r[col]).collect();
            let (mean_risk, stderr) = mean_stderr(&risks);
            rows.push(RiskRow { method, setup_id: setup.id, d, mean_risk, stderr, reps: cfg.reps, risks });
            col += 1;
        }
    }
    let dominance_violations = per_rep.iter().map(|(_, v)| v).sum();
    Ok(RiskTable { rows, counts, n, dominance_violations })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QualityRow {
    pub sim: u32,
    pub d: usize,
    pub setup_id: usize,
    /// 1-based worker number.
    pub worker: usize,
    pub method: Method,
    pub true_a: f64,
    pub est_a: f64,
    pub true_b: f64,
    pub est_b: f64,
    pub reps: usize,
}

/// Outcome of one iterative estimation run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterativeRun {
    pub setup_id: usize,
    pub rep: u64,
    pub iterations: usize,
    pub final_delta: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QualityEval {
    pub rows: Vec<QualityRow>,
    pub iterative_runs: Vec<IterativeRun>,
}

/// Mean estimated qualities per worker. Expert-anchored estimation runs when
/// `enn2` is configured, iterative estimation when `enn3` is.
pub fn run_quality_estimation_eval<T: Scalar>(cfg: &ExperimentConfig) -> Result<QualityEval> {
    cfg.validate()?;
    let run_expert = cfg.methods.contains(&Method::Enn2);
    let run_iter = cfg.methods.contains(&Method::Enn3);
    if !run_expert && !run_iter {
        return Err(config_error("methods", "quality evaluation needs enn2 or enn3"));
    }
    let spec = SimulationSpec::new(cfg.sim, cfg.d)?;
    let n = cfg.effective_n();
    let counts = tune_counts::<T>(cfg, &spec, n, run_iter, false)?;
    let mut rows = Vec::new();
    let mut iterative_runs = Vec::new();
    for &id in &cfg.setup_ids {
        let setup = QualitySetup::get(id)?;
        let sizes = setup_sizes(setup, n)?;
        let weights = local_knn_weights::<T>(&sizes, counts.k)?;
        type RepOut = (Option<Vec<(f64, f64)>>, Option<(Vec<(f64, f64)>, IterativeRun)>);
        let per_rep: Vec<RepOut> = (0..cfg.reps as u64)
            .into_par_iter()
            .map(|rep| -> Result<RepOut> {
                let truth =
                    sample_ground_truth::<T, _>(&spec, n, &mut rng::stream(cfg.seed, rep, Purpose::Sample, 0))?;
                let crowd = partition_with_sizes(
                    &truth,
                    &sizes,
                    &setup.qualities::<T>(),
                    setup.has_expert,
                    rng::derive(cfg.seed, id as u64),
                    rep,
                )?;
                let as_f64 = |q: &[WorkerQuality<T>]| -> Vec<(f64, f64)> {
                    q.iter().map(|q| (q.a.to_f64_lossy(), q.b.to_f64_lossy())).collect()
                };
                let expert = if run_expert {
                    Some(as_f64(&estimate_quality_expert(&crowd)?.qualities))
                } else {
                    None
                };
                let iterative = if run_iter {
                    let index = CrowdIndex::build(&crowd);
                    let opts = IterativeOptions { stop_c: T::of(cfg.stop_c), ..Default::default() };
                    let est = estimate_quality_iterative_with_index(&crowd, &index, &weights, &opts)?;
                    let run = IterativeRun {
                        setup_id: id,
                        rep,
                        iterations: est.iterations,
                        final_delta: est.final_delta.to_f64_lossy(),
                        converged: est.converged,
                    };
                    Some((as_f64(&est.qualities), run))
                } else {
                    None
                };
                Ok((expert, iterative))
            })
            .collect::<Result<_>>()?;

        let mut emit = |method: Method, ests: Vec<&Vec<(f64, f64)>>| {
            for j in 0..5 {
                let a: Vec<f64> = ests.iter().map(|e| e[j].0).collect();
                let b: Vec<f64> = ests.iter().map(|e| e[j].1).collect();
                rows.push(QualityRow {
                    sim: cfg.sim.number(),
                    d: cfg.d,
                    setup_id: id,
                    worker: j + 1,
                    method,
                    true_a: setup.a[j],
                    est_a: mean_stderr(&a).0,
                    true_b: setup.b[j],
                    est_b: mean_stderr(&b).0,
                    reps: cfg.reps,
                });
            }
        };
        if run_expert {
            emit(Method::Enn2, per_rep.iter().filter_map(|r| r.0.as_ref()).collect());
        }
        if run_iter {
            emit(Method::Enn3, per_rep.iter().filter_map(|r| r.1.as_ref().map(|x| &x.0)).collect());
            iterative_runs.extend(per_rep.iter().filter_map(|r| r.1.as_ref().map(|x| x.1.clone())));
        }
    }
    Ok(QualityEval { rows, iterative_runs })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MatchingRow {
    pub n: usize,
    pub s: usize,
    pub m_star: usize,
    /// Local OWNN count of each worker.
    pub local_counts: Vec<usize>,
    /// Ensemble over global sum of squared weights.
    pub ratio_variance: f64,
    /// Ensemble over global bias moment.
    pub ratio_bias: f64,
}

/// Local versus global OWNN weight sums for `s` equal workers. No randomness.
pub fn run_weight_matching_check<T: Scalar>(
    d: usize,
    n_list: &[usize],
    s: usize,
    constants: &RegretConstants<T>,
) -> Result<Vec<MatchingRow>> {
    n_list
        .iter()
        .map(|&n| {
            let sizes = crate::datagen::equal_sizes(n, s)?;
            let m_star = optimal_m_star(n, d, constants);
            let global = ownn_weights::<T>(n, m_star, d)?;
            let local = local_ownn_weights::<T>(&sizes, m_star, d)?;
            let (rv, rb) = weight_matching_ratios(&local, &sizes, &global, d)?;
            Ok(MatchingRow {
                n,
                s,
                m_star,
                local_counts: sizes.iter().map(|&nj| local_count(nj, n, m_star)).collect(),
                ratio_variance: rv.to_f64_lossy(),
                ratio_bias: rb.to_f64_lossy(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GammaRow {
    pub gamma: f64,
    pub s: usize,
    pub mean_risk_enn: f64,
    pub mean_risk_ownn: f64,
    pub mean_risk_bayes: f64,
    /// Mean of the paired differences ENN - oracle OWNN.
    pub mean_gap: f64,
    pub gap_stderr: f64,
    pub reps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GammaSweep {
    pub rows: Vec<GammaRow>,
    pub n: usize,
    pub m_star: usize,
    /// `4 / (d + 4)`, the largest exponent at which ENN can still match.
    pub gamma_threshold: f64,
    pub dominance_violations: usize,
}

/// Number of equal workers `round(n^gamma)`, clamped to `[1, n]`.
pub fn workers_for_gamma(n: usize, gamma: f64) -> usize {
    ((n as f64).powf(gamma).round() as usize).clamp(1, n.max(1))
}

/// ENN over `round(N^gamma)` equal clean workers against OWNN on the pooled
/// sample. Both use the same training sample in each replication.
pub fn run_gamma_sweep<T: Scalar>(cfg: &ExperimentConfig) -> Result<GammaSweep> {
    cfg.validate()?;
    if cfg.gammas.is_empty() {
        return Err(config_error("gammas", "must not be empty"));
    }
    let spec = SimulationSpec::new(cfg.sim, cfg.d)?;
    let n = cfg.effective_n();
    let d = cfg.d;
    let m_star = tune_counts::<T>(cfg, &spec, n, false, true)?.m_star;
    let global = ownn_weights::<T>(n, m_star, d)?;
    let worker_counts: Vec<usize> = cfg.gammas.iter().map(|&g| workers_for_gamma(n, g)).collect();

    // Per replication: (risk_enn per gamma, risk_ownn, risk_bayes, violations).
    type RepOut = (Vec<f64>, f64, f64, usize);
    let per_rep: Vec<RepOut> = (0..cfg.reps as u64)
        .into_par_iter()
        .map(|rep| -> Result<RepOut> {
            let truth = sample_ground_truth::<T, _>(&spec, n, &mut rng::stream(cfg.seed, rep, Purpose::Sample, 0))?;
            let test = sample_ground_truth::<T, _>(
                &spec,
                cfg.test_size,
                &mut rng::stream(cfg.seed, rep, Purpose::Test, 0),
            )?;
            let tp = test.points();
            let eta = eta_at(&spec, tp);
            let risk = |preds: &[u8]| smoothed_risk(preds, &eta).map(|r| r.to_f64_lossy());
            let bayes = risk(&eta.iter().map(|&e| threshold(e)).collect::<Vec<_>>())?;
            let oracle = WnnModel::new(truth.clone(), global.clone())?;
            let ownn = risk(&predict_all(|x| oracle.classify(x), tp)?)?;
            let enn = worker_counts
                .iter()
                .enumerate()
                .map(|(g, &s)| {
                    let crowd = split_experts(&truth, s, rng::derive(cfg.seed, 1000 + g as u64), rep)?;
                    let q = vec![WorkerQuality::expert(); s];
                    let model = EnnModel::fit(&crowd, q, local_ownn_weights(&crowd.sizes(), m_star, d)?)?;
                    risk(&predict_all(|x| model.classify(x), tp)?)
                })
                .collect::<Result<Vec<f64>>>()?;
            let violations =
                enn.iter().chain(std::iter::once(&ownn)).filter(|&&r| r < bayes).count();
            Ok((enn, ownn, bayes, violations))
        })
        .collect::<Result<_>>()?;

    let ownn: Vec<f64> = per_rep.iter().map(|r| r.1).collect();
    let bayes: Vec<f64> = per_rep.iter().map(|r| r.2).collect();
    let rows = cfg
        .gammas
        .iter()
        .zip(&worker_counts)
        .enumerate()
        .map(|(g, (&gamma, &s))| {
            let enn: Vec<f64> = per_rep.iter().map(|r| r.0[g]).collect();
            let gaps: Vec<f64> = per_rep.iter().map(|r| r.0[g] - r.1).collect();
            let (mean_gap, gap_stderr) = mean_stderr(&gaps);
            GammaRow {
                gamma,
                s,
                mean_risk_enn: mean_stderr(&enn).0,
                mean_risk_ownn: mean_stderr(&ownn).0,
                mean_risk_bayes: mean_stderr(&bayes).0,
                mean_gap,
                gap_stderr,
                reps: cfg.reps,
            }
        })
        .collect();
    Ok(GammaSweep {
        rows,
        n,
        m_star,
        gamma_threshold: 4.0 / (d as f64 + 4.0),
        dominance_violations: per_rep.iter().map(|r| r.3).sum(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::equal_sizes;
    use crate::enn::Worker;
    use approx::assert_relative_eq;

    fn quick() -> ExperimentConfig {
        ExperimentConfig {
            d: 2,
            setup_ids: vec![1],
            methods: vec![Method::Bayes],
            n: 400,
            scale: 1.0,
            test_size: 200,
            reps: 3,
            mstar_rule: MstarRule::Constants,
            ..Default::default()
        }
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
        assert!("knn".parse::<Method>().is_err());
    }

    #[test]
    fn validation_names_fields() {
        let field = |cfg: ExperimentConfig| match cfg.validate() {
            Err(Error::Config { field, .. }) => field,
            other => panic!("expected config error, got {other:?}"),
        };
        assert_eq!(field(ExperimentConfig { reps: 0, ..quick() }), "reps");
        assert_eq!(field(ExperimentConfig { test_size: 0, ..quick() }), "test_size");
        assert_eq!(field(ExperimentConfig { methods: vec![], ..quick() }), "methods");
        assert_eq!(field(ExperimentConfig { methods: vec![Method::Enn2], ..quick() }), "methods");
        assert_eq!(field(ExperimentConfig { setup_ids: vec![11], ..quick() }), "setups");
        assert_eq!(field(ExperimentConfig { cv_folds: 1, ..quick() }), "cv_folds");
        assert_eq!(field(ExperimentConfig { stop_c: 0.0, ..quick() }), "stop_c");
        assert!(ExperimentConfig { methods: vec![Method::Enn2], setup_ids: vec![6], ..quick() }
            .validate()
            .is_ok());
        assert!(quick().validate().is_ok());
        assert!(ExperimentConfig::default().validate().is_ok());
    }

    #[test]
    fn setup_sizes_scale() {
        let s1 = QualitySetup::get(1).unwrap();
        assert_eq!(setup_sizes(s1, 5000).unwrap(), vec![500, 750, 1000, 1250, 1500]);
        assert_eq!(setup_sizes(s1, 20000).unwrap(), s1.sizes.to_vec());
        assert_eq!(setup_sizes(s1, 1001).unwrap().iter().sum::<usize>(), 1001);
        assert!(setup_sizes(s1, 3).is_err());
    }

    #[test]
    fn bayes_only_table() {
        let table = run_risk_comparison::<f64>(&quick()).unwrap();
        assert_eq!(table.rows.len(), 1);
        let row = &table.rows[0];
        assert_eq!(row.risks.len(), 3);
        assert!(row.stderr >= 0.0);
        assert_eq!(table.dominance_violations, 0);
        // Direct recomputation of the first replication.
        let spec = SimulationSpec::new(SimulationId::Gaussian, 2).unwrap();
        let test = sample_ground_truth::<f64, _>(&spec, 200, &mut rng::stream(1, 0, Purpose::Test, 0)).unwrap();
        let direct: f64 = test
            .points()
            .rows()
            .map(|x| {
                let e = spec.eta0_f64(x);
                e.min(1.0 - e)
            })
            .sum::<f64>()
            / 200.0;
        assert_relative_eq!(row.risks[0], direct, max_relative = 1e-12);
    }

    #[test]
    fn risk_comparison_is_deterministic_and_dominated() {
        let cfg = ExperimentConfig {
            methods: vec![Method::NaiveKnn, Method::OracleKnn, Method::EnnK, Method::EnnOwnn, Method::Bayes],
            setup_ids: vec![1, 3],
            reps: 2,
            ..quick()
        };
        let a = run_risk_comparison::<f64>(&cfg).unwrap();
        let b = run_risk_comparison::<f64>(&cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.rows.len(), 10);
        assert_eq!(a.dominance_violations, 0);
        for setup in [1, 3] {
            let bayes = a.row(Method::Bayes, setup).unwrap();
            for r in a.rows.iter().filter(|r| r.setup_id == setup) {
                for (x, y) in r.risks.iter().zip(&bayes.risks) {
                    assert!(x >= y);
                }
            }
        }
    }

    #[test]
    fn enn2_and_enn3_run() {
        let cfg = ExperimentConfig {
            methods: vec![Method::Enn2, Method::Enn3],
            setup_ids: vec![6],
            reps: 1,
            ..quick()
        };
        let table = run_risk_comparison::<f64>(&cfg).unwrap();
        assert_eq!(table.rows.len(), 2);
        let eval = run_quality_estimation_eval::<f64>(&cfg).unwrap();
        assert_eq!(eval.rows.len(), 10);
        let expert = eval.rows.iter().find(|r| r.method == Method::Enn2 && r.worker == 5).unwrap();
        assert_eq!((expert.est_a, expert.est_b), (1.0, 1.0));
        assert_eq!(eval.iterative_runs.len(), 1);
        let no_est = ExperimentConfig { methods: vec![Method::Bayes], ..cfg };
        assert!(run_quality_estimation_eval::<f64>(&no_est).is_err());
    }

    #[test]
    fn weight_matching() {
        let one = RegretConstants::from_ratio(1.0).unwrap();
        let single = run_weight_matching_check::<f64>(4, &[1000, 5000], 1, &one).unwrap();
        for r in &single {
            assert_eq!((r.ratio_variance, r.ratio_bias), (1.0, 1.0));
        }
        let rows = run_weight_matching_check::<f64>(4, &[1000, 10_000, 100_000], 5, &one).unwrap();
        let last = rows.last().unwrap();
        assert!((last.ratio_variance - 1.0).abs() < 0.1 && (last.ratio_bias - 1.0).abs() < 0.1);
        assert_eq!(rows, run_weight_matching_check::<f64>(4, &[1000, 10_000, 100_000], 5, &one).unwrap());
    }

    #[test]
    fn gamma_zero_matches_oracle() {
        let cfg = ExperimentConfig { gammas: vec![0.0, 0.5], reps: 2, ..quick() };
        let sweep = run_gamma_sweep::<f64>(&cfg).unwrap();
        assert_eq!(sweep.rows[0].s, 1);
        assert_eq!(sweep.rows[1].s, 20);
        assert_eq!(sweep.rows[0].mean_gap, 0.0);
        assert_relative_eq!(sweep.gamma_threshold, 2.0 / 3.0);
        assert_eq!(sweep.dominance_violations, 0);
        for r in &sweep.rows {
            assert!(r.mean_risk_enn >= r.mean_risk_bayes && r.mean_risk_ownn >= r.mean_risk_bayes);
        }
    }

    #[test]
    fn cv_contract() {
        // Two runs of unit-spaced points separated by a gap of 6.
        let pts = Points::new((0..40).map(|i| i as f64 - 19.5 + if i >= 20 { 5.0 } else { 0.0 }).collect(), 1).unwrap();
        let labels: Vec<u8> = (0..40).map(|i| u8::from(i >= 20)).collect();
        let data = LabeledDataset::new(pts, labels).unwrap();
        let one = cross_validate_global(&[7], CvTarget::Labeled(&data), 5, WeightScheme::Knn, 1).unwrap();
        assert_eq!(one.best, 7);
        assert!(cross_validate_global(&[7], CvTarget::Labeled(&data), 1, WeightScheme::Knn, 1).is_err());
        assert!(cross_validate_global(&[], CvTarget::Labeled(&data), 5, WeightScheme::Knn, 1).is_err());
        // Separable line: small counts are perfect, a count covering most of the
        // training data votes with the majority everywhere.
        let out = cross_validate_global(&[1, 3, 5, 31], CvTarget::Labeled(&data), 5, WeightScheme::Knn, 1).unwrap();
        assert_eq!(out.best, 1);
        assert_eq!(out.losses[0], 0.0);
        assert!(out.losses[3] > 0.0);
    }

    #[test]
    fn cv_prefers_oracle_optimal_count_on_noisy_toy() {
        // Labels flip with probability 0.3 away from a threshold at 0; large k
        // averages the noise, so the oracle-best grid value is the largest one
        // that stays within a side.
        let spec = SimulationSpec::new(SimulationId::Gaussian, 1).unwrap();
        let data = sample_ground_truth::<f64, _>(&spec, 2000, &mut rng::stream(4, 0, Purpose::Sample, 0)).unwrap();
        let grid = [1, 5, 45, 1500];
        let out = cross_validate_global(&grid, CvTarget::Labeled(&data), 5, WeightScheme::Knn, 4).unwrap();
        // Oracle choice by smoothed risk on fresh test points.
        let test = sample_ground_truth::<f64, _>(&spec, 2000, &mut rng::stream(4, 0, Purpose::Test, 0)).unwrap();
        let eta: Vec<f64> = test.points().rows().map(|x| spec.eta0_f64(x)).collect();
        let risks: Vec<f64> = grid
            .iter()
            .map(|&k| {
                let m = WnnModel::new(data.clone(), knn_weights(2000, k).unwrap()).unwrap();
                let p = predict_all(|x| m.classify(x), test.points()).unwrap();
                smoothed_risk(&p, &eta).unwrap()
            })
            .collect();
        let oracle = (0..grid.len()).min_by(|&a, &b| risks[a].total_cmp(&risks[b])).unwrap();
        let chosen = grid.iter().position(|&g| g == out.best).unwrap();
        assert!(chosen.abs_diff(oracle) <= 1, "cv {chosen} oracle {oracle} {risks:?}");
    }

    #[test]
    fn crowd_cv_with_single_expert_equals_labeled_cv() {
        let spec = SimulationSpec::new(SimulationId::Gaussian, 2).unwrap();
        let data = sample_ground_truth::<f64, _>(&spec, 300, &mut rng::stream(9, 0, Purpose::Sample, 0)).unwrap();
        let crowd = CrowdData::new(vec![Worker::expert(data.clone())]).unwrap();
        let q = [WorkerQuality::expert()];
        let grid = default_count_grid(300);
        let a = cross_validate_global(&grid, CvTarget::Labeled(&data), 3, WeightScheme::Ownn, 2).unwrap();
        let b = cross_validate_global(&grid, CvTarget::Crowd(&crowd, &q), 3, WeightScheme::Ownn, 2).unwrap();
        assert_eq!(a, b);
        assert_eq!(equal_sizes(300, 1).unwrap(), vec![300]);
    }

    #[test]
    fn stats() {
        let (m, s) = mean_stderr(&[1.0, 2.0, 3.0]);
        assert_relative_eq!(m, 2.0);
        assert_relative_eq!(s, 1.0 / 3f64.sqrt());
        assert_eq!(mean_stderr(&[5.0]), (5.0, 0.0));
        assert_eq!(workers_for_gamma(20000, 0.0), 1);
        assert_eq!(workers_for_gamma(20000, 1.0), 20000);
        assert_eq!(workers_for_gamma(20000, 0.5), 141);
    }
}
