//! Weighted nearest-neighbor classification on a single dataset, the Bayes
//! rule, and risk estimators.

use rayon::prelude::*;

use crate::error::{invalid, Error, Result};
use crate::neighbors::{NeighborIndex, NeighborList};
use crate::points::Points;
use crate::scalar::{pairwise_sum, Scalar};
use crate::weights::WeightVector;

/// Points with binary labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset<T> {
    points: Points<T>,
    labels: Vec<u8>,
}

impl<T: Scalar> LabeledDataset<T> {
    pub fn new(points: Points<T>, labels: Vec<u8>) -> Result<Self> {
        if labels.len() != points.len() {
            return Err(invalid(format!(
                "{} labels for {} points",
                labels.len(),
                points.len()
            )));
        }
        if let Some(row) = labels.iter().position(|&y| y > 1) {
            return Err(Error::InvalidLabel { row, label: labels[row] });
        }
        Ok(Self { points, labels })
    }

    pub fn points(&self) -> &Points<T> {
        &self.points
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points.dim()
    }

    pub fn select(&self, rows: &[usize]) -> Result<Self> {
        let labels = rows.iter().map(|&r| self.labels[r]).collect();
        Self::new(self.points.select(rows)?, labels)
    }

    pub fn with_labels(&self, labels: Vec<u8>) -> Result<Self> {
        Self::new(self.points.clone(), labels)
    }

    /// Concatenates datasets of equal dimension, in order.
    pub fn concat<'a>(parts: impl IntoIterator<Item = &'a Self>) -> Result<Self>
    where
        T: 'a,
    {
        let mut data = Vec::new();
        let mut labels = Vec::new();
        let mut dim = None;
        for p in parts {
            match dim {
                None => dim = Some(p.dim()),
                Some(d) if d != p.dim() => {
                    return Err(Error::DimensionMismatch { expected: d, found: p.dim() })
                }
                _ => {}
            }
            data.extend_from_slice(p.points.as_slice());
            labels.extend_from_slice(&p.labels);
        }
        let dim = dim.ok_or(Error::EmptyDataset)?;
        Self::new(Points::new(data, dim)?, labels)
    }
}

/// `sum_i w_i v_(i)` over the retrieved neighbors, in neighbor order.
#[inline]
pub(crate) fn weighted_vote<T: Scalar>(
    neighbors: &NeighborList<T>,
    weights: &[T],
    mut value: impl FnMut(usize) -> T,
) -> T {
    let mut acc = T::zero();
    for (n, &w) in neighbors.entries().iter().zip(weights) {
        acc = acc + w * value(n.index);
    }
    acc
}

/// Threshold rule shared by every plug-in classifier: `1` iff `score >= 1/2`.
#[inline]
pub fn threshold<T: Scalar>(score: T) -> u8 {
    u8::from(score >= T::of(0.5))
}

/// Weighted nearest-neighbor classifier.
#[derive(Debug, Clone)]
pub struct WnnModel<T> {
    labels: Vec<u8>,
    weights: WeightVector<T>,
    index: NeighborIndex<T>,
}

impl<T: Scalar> WnnModel<T> {
    pub fn new(data: LabeledDataset<T>, weights: WeightVector<T>) -> Result<Self> {
        if weights.len() != data.len() {
            return Err(invalid(format!(
                "weight vector has length {}, dataset has {} rows",
                weights.len(),
                data.len()
            )));
        }
        let LabeledDataset { points, labels } = data;
        Ok(Self { labels, weights, index: NeighborIndex::build(points) })
    }

    pub fn weights(&self) -> &WeightVector<T> {
        &self.weights
    }

    pub fn index(&self) -> &NeighborIndex<T> {
        &self.index
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    /// WNN estimate of `P(Y = 1 | x)`.
    pub fn score(&self, query: &[T]) -> Result<T> {
        let k = self.weights.support_size().max(1);
        let nl = self.index.k_nearest(query, k)?;
        Ok(weighted_vote(&nl, self.weights.support(), |i| T::of_usize(self.labels[i] as usize)))
    }

    pub fn classify(&self, query: &[T]) -> Result<u8> {
        self.score(query).map(threshold)
    }

    /// Scores every row of `queries`, in parallel, preserving row order.
    pub fn score_all(&self, queries: &Points<T>) -> Result<Vec<T>> {
        (0..queries.len())
            .into_par_iter()
            .map(|i| self.score(queries.row(i)))
            .collect()
    }
}

pub fn bayes_classify<T: Scalar>(eta0: impl Fn(&[T]) -> T, query: &[T]) -> u8 {
    threshold(eta0(query))
}

fn risk_terms<T: Scalar>(predictions: &[u8], eta: &[T]) -> Result<Vec<T>> {
    if predictions.len() != eta.len() {
        return Err(invalid("predictions and eta0 values differ in length"));
    }
    if predictions.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(predictions
        .iter()
        .zip(eta)
        .map(|(&p, &e)| if p == 1 { T::one() - e } else { e })
        .collect())
}

/// Smoothed risk `(1/m) sum [eta0 1{pred = 0} + (1 - eta0) 1{pred = 1}]`
/// from precomputed predictions and `eta0` values at the test points.
pub fn smoothed_risk<T: Scalar>(predictions: &[u8], eta: &[T]) -> Result<T> {
    let terms = risk_terms(predictions, eta)?;
    Ok(pairwise_sum(&terms) / T::of_usize(terms.len()))
}

/// Plain test error against sampled labels.
pub fn zero_one_risk<T: Scalar>(predictions: &[u8], labels: &[u8]) -> Result<T> {
    if predictions.len() != labels.len() || predictions.is_empty() {
        return Err(invalid("predictions and labels must be nonempty and of equal length"));
    }
    let wrong = predictions.iter().zip(labels).filter(|(p, y)| p != y).count();
    Ok(T::of_usize(wrong) / T::of_usize(labels.len()))
}

/// Smoothed risk of `classifier` over `test_points`. Evaluation runs in
/// parallel; the reduction order is fixed.
pub fn expected_risk<T, C, E>(classifier: C, test_points: &Points<T>, eta0: E) -> Result<T>
where
    T: Scalar,
    C: Fn(&[T]) -> Result<u8> + Sync,
    E: Fn(&[T]) -> T + Sync,
{
    let (preds, eta): (Vec<u8>, Vec<T>) = (0..test_points.len())
        .into_par_iter()
        .map(|i| {
            let x = test_points.row(i);
            classifier(x).map(|p| (p, eta0(x)))
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .unzip();
    smoothed_risk(&preds, &eta)
}

/// `expected_risk(classifier) - expected_risk(bayes)`. Pointwise the Bayes
/// term is `min(eta0, 1 - eta0)`, so the result is never negative.
pub fn empirical_regret<T, C, E>(classifier: C, test_points: &Points<T>, eta0: E) -> Result<T>
where
    T: Scalar,
    C: Fn(&[T]) -> Result<u8> + Sync,
    E: Fn(&[T]) -> T + Sync,
{
    let terms: Vec<T> = (0..test_points.len())
        .into_par_iter()
        .map(|i| {
            let x = test_points.row(i);
            let e = eta0(x);
            let p = classifier(x)?;
            let b = bayes_classify(|_| e, x);
            let loss = |c: u8| if c == 1 { T::one() - e } else { e };
            Ok(loss(p) - loss(b))
        })
        .collect::<Result<Vec<_>>>()?;
    if terms.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(pairwise_sum(&terms) / T::of_usize(terms.len()))
}
