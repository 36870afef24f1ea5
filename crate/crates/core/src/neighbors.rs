//! Exact Euclidean k-nearest-neighbor search.
//!
//! Neighbors are ordered by `(distance, row index)`, so equal distances are
//! resolved toward the lower row. [`NeighborIndex`] answers queries with a
//! kd-tree for low dimensions and a linear scan otherwise; in both cases the
//! result is identical to [`brute_force_nearest`].

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{invalid, Result};
use crate::points::{check_query, squared_distance, Points};
use crate::scalar::Scalar;

/// Dimensions above this use the linear scan.
pub const MAX_TREE_DIM: usize = 16;
const LEAF_SIZE: usize = 24;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor<T> {
    pub index: usize,
    pub distance: T,
}

/// Neighbors sorted by ascending distance, ties by ascending row index.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborList<T> {
    entries: Vec<Neighbor<T>>,
}

impl<T: Scalar> NeighborList<T> {
    pub fn entries(&self) -> &[Neighbor<T>] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.entries.iter().map(|n| n.index)
    }

    fn from_candidates(mut cands: Vec<Candidate<T>>) -> Self {
        cands.sort_unstable();
        let entries = cands
            .into_iter()
            .map(|c| Neighbor { index: c.index, distance: c.d2.sqrt() })
            .collect();
        Self { entries }
    }
}

#[derive(Debug, Clone, Copy)]
struct Candidate<T> {
    d2: T,
    index: usize,
}

impl<T: Scalar> PartialEq for Candidate<T> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl<T: Scalar> Eq for Candidate<T> {}

impl<T: Scalar> PartialOrd for Candidate<T> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<T: Scalar> Ord for Candidate<T> {
    fn cmp(&self, other: &Self) -> Ordering {
        // Distances are finite by construction.
        self.d2
            .partial_cmp(&other.d2)
            .unwrap_or(Ordering::Equal)
            .then(self.index.cmp(&other.index))
    }
}

#[derive(Debug, Clone)]
enum Node<T> {
    Leaf { start: usize, end: usize },
    Split { axis: usize, value: T, left: usize, right: usize },
}

#[derive(Debug, Clone)]
struct KdTree<T> {
    nodes: Vec<Node<T>>,
    /// Bounding box of each node, `dim` lows then `dim` highs.
    boxes: Vec<T>,
    /// Original row of each tree position.
    order: Vec<usize>,
    /// Coordinates in tree order, so leaves scan contiguous memory.
    coords: Vec<T>,
    dim: usize,
}

impl<T: Scalar> KdTree<T> {
    fn build(points: &Points<T>) -> Self {
        let dim = points.dim();
        let mut tree = KdTree {
            nodes: Vec::new(),
            boxes: Vec::new(),
            order: (0..points.len()).collect(),
            coords: Vec::new(),
            dim,
        };
        tree.build_node(points, 0, points.len());
        tree.coords = tree.order.iter().flat_map(|&i| points.row(i).iter().copied()).collect();
        tree
    }

    fn build_node(&mut self, points: &Points<T>, start: usize, end: usize) -> usize {
        let id = self.nodes.len();
        let dim = self.dim;
        let (mut lo, mut hi) = (vec![T::infinity(); dim], vec![T::neg_infinity(); dim]);
        for &r in &self.order[start..end] {
            for (axis, &v) in points.row(r).iter().enumerate() {
                lo[axis] = lo[axis].min(v);
                hi[axis] = hi[axis].max(v);
            }
        }
        self.boxes.extend_from_slice(&lo);
        self.boxes.extend_from_slice(&hi);
        self.nodes.push(Node::Leaf { start, end });
        if end - start <= LEAF_SIZE {
            return id;
        }
        let axis = (0..dim)
            .map(|a| (a, hi[a] - lo[a]))
            .fold((0, T::neg_infinity()), |best, c| if c.1 > best.1 { c } else { best })
            .0;
        if hi[axis] == lo[axis] {
            // Every point coincides: nothing to split.
            return id;
        }
        let slice = &mut self.order[start..end];
        let mid = slice.len() / 2;
        slice.select_nth_unstable_by(mid, |&a, &b| {
            points.row(a)[axis]
                .partial_cmp(&points.row(b)[axis])
                .unwrap_or(Ordering::Equal)
        });
        let value = points.row(slice[mid])[axis];
        let left = self.build_node(points, start, start + mid);
        let right = self.build_node(points, start + mid, end);
        self.nodes[id] = Node::Split { axis, value, left, right };
        id
    }

    /// Lower bound on the squared distance from `query` to any point in
    /// `node`. Accumulated in the same order as [`squared_distance`]; rounding
    /// is monotone, so the bound never exceeds a computed point distance.
    #[inline]
    fn box_distance(&self, node: usize, query: &[T]) -> T {
        let b = &self.boxes[node * 2 * self.dim..(node + 1) * 2 * self.dim];
        let (lo, hi) = b.split_at(self.dim);
        let mut acc = T::zero();
        for ((&q, &l), &h) in query.iter().zip(lo).zip(hi) {
            let t = if q < l {
                l - q
            } else if q > h {
                q - h
            } else {
                T::zero()
            };
            acc = acc + t * t;
        }
        acc
    }

    fn search(&self, node: usize, query: &[T], k: usize, heap: &mut BinaryHeap<Candidate<T>>) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                let dim = self.dim;
                for pos in start..end {
                    let d2 = squared_distance(&self.coords[pos * dim..(pos + 1) * dim], query);
                    push_bounded(heap, Candidate { d2, index: self.order[pos] }, k);
                }
            }
            Node::Split { axis, value, left, right } => {
                let (near, far) = if query[axis] < value { (left, right) } else { (right, left) };
                for child in [near, far] {
                    // Equal bounds are kept: a tie may still win on row index.
                    let prune = heap.len() == k
                        && heap.peek().is_some_and(|w| self.box_distance(child, query) > w.d2);
                    if !prune {
                        self.search(child, query, k, heap);
                    }
                }
            }
        }
    }
}

#[inline]
fn push_bounded<T: Scalar>(heap: &mut BinaryHeap<Candidate<T>>, c: Candidate<T>, k: usize) {
    if heap.len() < k {
        heap.push(c);
    } else if let Some(mut worst) = heap.peek_mut() {
        if c.d2 <= worst.d2 && c < *worst {
            *worst = c;
        }
    }
}

/// Immutable search structure over a point set.
#[derive(Debug, Clone)]
pub struct NeighborIndex<T> {
    points: Points<T>,
    tree: Option<KdTree<T>>,
}

impl<T: Scalar> NeighborIndex<T> {
    /// Builds an index. `Points` already guarantees a non-empty, finite matrix.
    pub fn build(points: Points<T>) -> Self {
        let tree = (points.dim() <= MAX_TREE_DIM && points.len() > LEAF_SIZE)
            .then(|| KdTree::build(&points));
        Self { points, tree }
    }

    pub fn points(&self) -> &Points<T> {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points.dim()
    }

    pub fn uses_tree(&self) -> bool {
        self.tree.is_some()
    }

    /// The first `min(k, n)` neighbors of `query`.
    pub fn k_nearest(&self, query: &[T], k: usize) -> Result<NeighborList<T>> {
        check_query(query, self.dim())?;
        if k == 0 {
            return Err(invalid("k must be at least 1"));
        }
        let Some(tree) = &self.tree else {
            return brute_force_nearest(&self.points, query, k);
        };
        let k = k.min(self.len());
        let mut heap = BinaryHeap::with_capacity(k + 1);
        tree.search(0, query, k, &mut heap);
        Ok(NeighborList::from_candidates(heap.into_vec()))
    }
}

/// Reference linear scan.
pub fn brute_force_nearest<T: Scalar>(
    points: &Points<T>,
    query: &[T],
    k: usize,
) -> Result<NeighborList<T>> {
    check_query(query, points.dim())?;
    if k == 0 {
        return Err(invalid("k must be at least 1"));
    }
    let mut cands: Vec<Candidate<T>> = points
        .rows()
        .enumerate()
        .map(|(index, row)| Candidate { d2: squared_distance(row, query), index })
        .collect();
    let k = k.min(cands.len());
    if k < cands.len() {
        cands.select_nth_unstable(k - 1);
        cands.truncate(k);
    }
    Ok(NeighborList::from_candidates(cands))
}
