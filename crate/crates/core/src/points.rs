use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Row-major `n x d` matrix of finite coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Points<T> {
    data: Vec<T>,
    dim: usize,
}

impl<T: Scalar> Points<T> {
    pub fn new(data: Vec<T>, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::ZeroDimension);
        }
        if data.len() % dim != 0 {
            return Err(Error::RaggedPoints { len: data.len(), dim });
        }
        if data.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if let Some(pos) = data.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite { row: pos / dim, col: pos % dim });
        }
        Ok(Self { data, dim })
    }

    pub fn from_rows<R: AsRef<[T]>>(rows: &[R]) -> Result<Self> {
        let dim = rows.first().map(|r| r.as_ref().len()).ok_or(Error::EmptyDataset)?;
        let mut data = Vec::with_capacity(rows.len() * dim);
        for r in rows {
            let r = r.as_ref();
            if r.len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, found: r.len() });
            }
            data.extend_from_slice(r);
        }
        Self::new(data, dim)
    }

    /// Gathers the given rows, in order, into a new matrix.
    pub fn select(&self, rows: &[usize]) -> Result<Self> {
        let mut data = Vec::with_capacity(rows.len() * self.dim);
        for &r in rows {
            data.extend_from_slice(self.row(r));
        }
        Self::new(data, self.dim)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[T]> + '_ {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }
}

/// Squared Euclidean distance. Every distance in the crate goes through this
/// function so that tree search and the linear scan agree bit for bit.
#[inline]
pub fn squared_distance<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut acc = T::zero();
    for (&x, &y) in a.iter().zip(b) {
        let diff = x - y;
        acc = acc + diff * diff;
    }
    acc
}

pub(crate) fn check_query<T: Scalar>(query: &[T], dim: usize) -> Result<()> {
    if query.len() != dim {
        return Err(Error::DimensionMismatch { expected: dim, found: query.len() });
    }
    if let Some(col) = query.iter().position(|x| !x.is_finite()) {
        return Err(Error::NonFinite { row: 0, col });
    }
    Ok(())
}
