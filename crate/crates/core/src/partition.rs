//! Row-block distribution of a matrix across ranks.
//!
//! Ranks own contiguous row ranges, and the right-hand-side and result
//! vectors are partitioned the same way. Ranges are chosen so nonzeros, not
//! rows, are balanced: with wildly varying row lengths an equal-rows split
//! can leave one rank doing most of the flops.

use crate::sparse::{balanced_row_cuts, CsrMatrix};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum PartitionError {
    #[error("rank count must be at least 1")]
    NoRanks,
    #[error("invalid row starts: {0}")]
    InvalidRowStarts(String),
}

/// Assignment of contiguous row ranges to ranks: rank `r` owns rows
/// `[row_start[r], row_start[r+1])`. Ranges may be empty.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PartitionMap {
    row_start: Vec<usize>,
}

impl PartitionMap {
    pub fn from_row_starts(row_start: Vec<usize>) -> Result<Self, PartitionError> {
        if row_start.len() < 2 {
            return Err(PartitionError::InvalidRowStarts(
                "need at least one rank (two boundaries)".into(),
            ));
        }
        if row_start[0] != 0 {
            return Err(PartitionError::InvalidRowStarts(format!(
                "first boundary is {}, must be 0",
                row_start[0]
            )));
        }
        if row_start.windows(2).any(|w| w[0] > w[1]) {
            return Err(PartitionError::InvalidRowStarts(
                "boundaries are not nondecreasing".into(),
            ));
        }
        Ok(PartitionMap { row_start })
    }

    /// Single rank owning everything.
    pub fn trivial(n_rows: usize) -> Self {
        PartitionMap {
            row_start: vec![0, n_rows],
        }
    }

    pub fn n_ranks(&self) -> usize {
        self.row_start.len() - 1
    }

    pub fn n_rows(&self) -> usize {
        *self.row_start.last().unwrap()
    }

    pub fn rows_of(&self, rank: usize) -> std::ops::Range<usize> {
        self.row_start[rank]..self.row_start[rank + 1]
    }

    pub fn n_rows_of(&self, rank: usize) -> usize {
        self.rows_of(rank).len()
    }

    /// Owner of a global row (equivalently, of a global vector index). Rows
    /// on an empty-range boundary belong to the later, nonempty rank.
    pub fn rank_of_row(&self, row: usize) -> usize {
        debug_assert!(row < self.n_rows());
        self.row_start.partition_point(|&s| s <= row) - 1
    }

    pub fn row_starts(&self) -> &[usize] {
        &self.row_start
    }
}

/// Cuts rows into `n_ranks` contiguous blocks by walking the nonzero prefix
/// sum and cutting at the row boundary nearest each multiple of
/// `n_nz / n_ranks`. The heaviest rank then exceeds the mean by at most the
/// largest single-row nonzero count.
pub fn partition_by_nonzeros(
    a: &CsrMatrix,
    n_ranks: usize,
) -> Result<PartitionMap, PartitionError> {
    let cuts = balanced_row_cuts(&a.row_ptr, n_ranks).map_err(|_| PartitionError::NoRanks)?;
    Ok(PartitionMap { row_start: cuts })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sparse::coo_to_csr;
    use crate::sparse::CooTriples;

    /// Matrix with exactly `per_row` nonzeros in every row.
    fn uniform_matrix(n: usize, per_row: usize) -> CsrMatrix {
        let mut t = CooTriples::new(n, n);
        for i in 0..n {
            for k in 0..per_row {
                t.push(i, (i + k) % n, 1.0);
            }
        }
        coo_to_csr(&t).unwrap()
    }

    fn rank_nnz(a: &CsrMatrix, p: &PartitionMap, r: usize) -> usize {
        let rows = p.rows_of(r);
        a.row_ptr[rows.end] - a.row_ptr[rows.start]
    }

    #[test]
    fn uniform_rows_split_evenly() {
        let a = uniform_matrix(1000, 7);
        let p = partition_by_nonzeros(&a, 4).unwrap();
        for r in 0..4 {
            assert_eq!(p.n_rows_of(r), 250, "rank {r}");
        }
    }

    #[test]
    fn one_rank_owns_all_rows() {
        let a = uniform_matrix(17, 3);
        let p = partition_by_nonzeros(&a, 1).unwrap();
        assert_eq!(p.n_ranks(), 1);
        assert_eq!(p.rows_of(0), 0..17);
    }

    #[test]
    fn skewed_matrix_cut_is_optimal_for_two_ranks() {
        // first 10 rows carry half the nonzeros: 50 each, then 1000 rows of 1
        let n = 1010;
        let mut t = CooTriples::new(n, n);
        for i in 0..10 {
            for k in 0..50 {
                t.push(i, (i + k) % n, 1.0);
            }
        }
        for i in 10..n {
            t.push(i, i, 1.0);
        }
        let a = coo_to_csr(&t).unwrap();
        let p = partition_by_nonzeros(&a, 2).unwrap();
        let imbalance = (rank_nnz(&a, &p, 0) as i64 - rank_nnz(&a, &p, 1) as i64).unsigned_abs();

        // exhaustive scan over every possible cut point
        let best = (0..=n)
            .map(|cut| {
                let first = a.row_ptr[cut];
                (first as i64 - (a.n_nz() - first) as i64).unsigned_abs()
            })
            .min()
            .unwrap();
        assert_eq!(imbalance, best);
        assert!(imbalance <= a.max_row_nnz() as u64);
    }

    #[test]
    fn heaviest_rank_stays_near_the_mean() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let n = 400;
        let mut t = CooTriples::new(n, n);
        for i in 0..n {
            for _ in 0..rng.random_range(1..20) {
                t.push(i, rng.random_range(0..n), 1.0);
            }
        }
        let a = coo_to_csr(&t).unwrap();
        for ranks in [2, 3, 5, 8] {
            let p = partition_by_nonzeros(&a, ranks).unwrap();
            let mean = a.n_nz() as f64 / ranks as f64;
            let heaviest = (0..ranks).map(|r| rank_nnz(&a, &p, r)).max().unwrap();
            assert!(
                heaviest as f64 <= mean + a.max_row_nnz() as f64,
                "ranks = {ranks}: heaviest {heaviest}, mean {mean}"
            );
        }
    }

    #[test]
    fn rank_of_row_matches_ranges() {
        let a = uniform_matrix(100, 5);
        let p = partition_by_nonzeros(&a, 3).unwrap();
        for r in 0..3 {
            for row in p.rows_of(r) {
                assert_eq!(p.rank_of_row(row), r);
            }
        }
    }

    #[test]
    fn empty_ranges_are_resolved_to_owning_rank() {
        // more ranks than rows forces empty ranges somewhere
        let a = uniform_matrix(3, 1);
        let p = partition_by_nonzeros(&a, 8).unwrap();
        assert_eq!(p.n_ranks(), 8);
        let total: usize = (0..8).map(|r| p.n_rows_of(r)).sum();
        assert_eq!(total, 3);
        for row in 0..3 {
            let r = p.rank_of_row(row);
            assert!(p.rows_of(r).contains(&row));
        }
    }

    #[test]
    fn zero_ranks_is_an_error() {
        let a = uniform_matrix(4, 1);
        assert_eq!(partition_by_nonzeros(&a, 0), Err(PartitionError::NoRanks));
    }

    #[test]
    fn row_starts_validation() {
        assert!(PartitionMap::from_row_starts(vec![0]).is_err());
        assert!(PartitionMap::from_row_starts(vec![1, 2]).is_err());
        assert!(PartitionMap::from_row_starts(vec![0, 3, 2]).is_err());
        assert!(PartitionMap::from_row_starts(vec![0, 2, 2, 5]).is_ok());
    }
}
