//! Latent feature sets: N rows of D-dimensional encoded vectors.

use std::cmp::Ordering;

use crate::error::{Error, Result};

/// N×D matrix of latent vectors, one row per image.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    data: Vec<f64>,
    n: usize,
    d: usize,
}

impl FeatureSet {
    pub fn new(data: Vec<f64>, n: usize, d: usize) -> Result<Self> {
        if data.len() != n * d {
            return Err(Error::shape(format!(
                "feature buffer holds {} values, expected {n}×{d}",
                data.len()
            )));
        }
        Ok(FeatureSet { data, n, d })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let d = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::shape("feature rows have inconsistent lengths"));
        }
        let mut data = Vec::with_capacity(n * d);
        for r in rows {
            data.extend_from_slice(r);
        }
        Ok(FeatureSet { data, n, d })
    }

    /// Number of rows (images).
    pub fn n(&self) -> usize {
        self.n
    }

    /// Latent dimensionality.
    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.d..(i + 1) * self.d]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// New set holding the given rows, in the given order.
    pub fn select(&self, indices: &[usize]) -> Result<FeatureSet> {
        let mut data = Vec::with_capacity(indices.len() * self.d);
        for &i in indices {
            if i >= self.n {
                return Err(Error::input(format!(
                    "row index {i} out of bounds for {} rows",
                    self.n
                )));
            }
            data.extend_from_slice(self.row(i));
        }
        FeatureSet::new(data, indices.len(), self.d)
    }

    /// Rounds every value through 32-bit precision. Applied at the
    /// encoder boundary so in-memory features and reloaded feature
    /// files are bit-identical.
    pub fn quantize_f32(&mut self) {
        for v in &mut self.data {
            *v = *v as f32 as f64;
        }
    }

    /// Total order on feature sets: by row count, then dimensionality,
    /// then lexicographic over values. Used to canonicalize argument
    /// order in symmetric-by-definition statistics.
    pub fn total_cmp(&self, other: &FeatureSet) -> Ordering {
        self.n
            .cmp(&other.n)
            .then(self.d.cmp(&other.d))
            .then_with(|| {
                for (a, b) in self.data.iter().zip(&other.data) {
                    let ord = a.total_cmp(b);
                    if ord != Ordering::Equal {
                        return ord;
                    }
                }
                Ordering::Equal
            })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_rows_checks_consistency() {
        assert!(FeatureSet::from_rows(&[vec![1.0, 2.0], vec![3.0]]).is_err());
        let f = FeatureSet::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        assert_eq!(f.n(), 2);
        assert_eq!(f.dim(), 2);
        assert_eq!(f.row(1), &[3.0, 4.0]);
    }

    #[test]
    fn select_extracts_rows_in_order() {
        let f = FeatureSet::from_rows(&[vec![0.0], vec![1.0], vec![2.0]]).unwrap();
        let s = f.select(&[2, 0]).unwrap();
        assert_eq!(s.data(), &[2.0, 0.0]);
        assert!(f.select(&[3]).is_err());
    }

    #[test]
    fn quantization_is_idempotent() {
        let mut f = FeatureSet::from_rows(&[vec![0.12345678901234568]]).unwrap();
        f.quantize_f32();
        let once = f.data().to_vec();
        f.quantize_f32();
        assert_eq!(once, f.data());
    }

    #[test]
    fn total_cmp_orders_consistently() {
        let a = FeatureSet::from_rows(&[vec![1.0, 2.0]]).unwrap();
        let b = FeatureSet::from_rows(&[vec![1.0, 3.0]]).unwrap();
        assert_eq!(a.total_cmp(&b), Ordering::Less);
        assert_eq!(b.total_cmp(&a), Ordering::Greater);
        assert_eq!(a.total_cmp(&a), Ordering::Equal);
    }
}
