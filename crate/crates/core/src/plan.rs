//! Per-rank communication plans.
//!
//! Built once from the sparsity pattern before any multiplication runs, a
//! [`CommPlan`] answers every question the execution engine will ask: which
//! of my vector entries do other ranks need (`send_to`), which entries do I
//! receive and from whom (`recv_from`), where each source's block lands in
//! my halo buffer (`halo_offset`), and how my row block splits into a
//! local-columns part and a remote-columns part.

use crate::partition::PartitionMap;
use crate::sparse::CsrMatrix;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum PlanError {
    #[error("communication plan needs a square matrix, got {n_rows}x{n_cols}")]
    NonSquare { n_rows: usize, n_cols: usize },
    #[error("rank {rank} out of range for {n_ranks} ranks")]
    RankOutOfRange { rank: usize, n_ranks: usize },
    #[error("partition covers {partition_rows} rows but the matrix has {matrix_rows}")]
    RowCountMismatch {
        partition_rows: usize,
        matrix_rows: usize,
    },
    #[error("expected plans for {expected} ranks, got {got}")]
    WrongPlanCount { expected: usize, got: usize },
    #[error("plans for sender rank {sender} and receiver rank {receiver} disagree: {detail}")]
    Inconsistent {
        sender: usize,
        receiver: usize,
        detail: String,
    },
}

/// Communication plan of one rank. Immutable after construction; the engine
/// shares it across threads freely.
#[derive(Debug, Clone, PartialEq)]
pub struct CommPlan {
    pub my_rank: usize,
    pub n_ranks: usize,
    /// Global rows (and therefore vector entries) this rank owns.
    pub row_begin: usize,
    pub row_end: usize,
    /// `send_to[q]`: sorted local indices of my B entries that rank q needs.
    /// An index is listed once no matter how many of q's rows reference it.
    pub send_to: Vec<Vec<usize>>,
    /// `recv_from[q]`: ascending global column indices I receive from q.
    pub recv_from: Vec<Vec<usize>>,
    /// `halo_offset[q]`: where q's block starts in my halo buffer. Blocks
    /// are ordered by source rank, then ascending global index — which is
    /// also globally ascending, since ranks own ascending contiguous ranges.
    pub halo_offset: Vec<usize>,
    pub halo_len: usize,
    /// My row block restricted to owned columns, remapped to local numbering.
    pub a_local: CsrMatrix,
    /// My row block restricted to non-owned columns, remapped to halo
    /// positions.
    pub a_remote: CsrMatrix,
    /// My whole row block over the concatenated [local | halo] numbering,
    /// each row's entries kept in the original global column order. Running
    /// the plain kernel on this matrix reproduces the sequential result bit
    /// for bit.
    pub a_combined: CsrMatrix,
    /// References to non-owned columns before deduplication — what the
    /// exchange volume would be if every reference were shipped separately.
    pub raw_remote_refs: usize,
}

impl CommPlan {
    pub fn local_len(&self) -> usize {
        self.row_end - self.row_begin
    }

    /// Global column indices of the halo, in buffer order.
    pub fn halo_cols(&self) -> Vec<usize> {
        self.recv_from.concat()
    }

    /// Bytes this rank sends per multiplication (8 bytes per vector entry).
    pub fn sent_bytes(&self) -> u64 {
        8 * self.send_to.iter().map(|s| s.len() as u64).sum::<u64>()
    }

    /// Bytes this rank receives per multiplication.
    pub fn received_bytes(&self) -> u64 {
        8 * self.recv_from.iter().map(|r| r.len() as u64).sum::<u64>()
    }

    /// Number of nonempty outgoing messages per multiplication.
    pub fn messages_out(&self) -> usize {
        self.send_to.iter().filter(|s| !s.is_empty()).count()
    }

    /// Checksum of the index contract between this rank and `peer`, with the
    /// lower rank's outgoing list hashed first so both sides agree. Used by
    /// the socket transport handshake to reject mismatched plans early.
    pub fn pair_checksum(&self, peer: usize) -> u64 {
        let mine: Vec<usize> = self.send_to[peer]
            .iter()
            .map(|&i| i + self.row_begin)
            .collect();
        let theirs = &self.recv_from[peer];
        let (first, second): (&[usize], &[usize]) = if self.my_rank < peer {
            (&mine, theirs)
        } else {
            (theirs, &mine)
        };
        let mut h = Fnv1a::new();
        h.write_usize(first.len());
        first.iter().for_each(|&i| h.write_usize(i));
        h.write_usize(second.len());
        second.iter().for_each(|&i| h.write_usize(i));
        h.finish()
    }

    /// Counts-and-volumes view for the CLI's plan report.
    pub fn summary(&self) -> PlanSummary {
        PlanSummary {
            rank: self.my_rank,
            rows: self.local_len(),
            nnz_local: self.a_local.n_nz(),
            nnz_remote: self.a_remote.n_nz(),
            halo_len: self.halo_len,
            sent_bytes: self.sent_bytes(),
            received_bytes: self.received_bytes(),
            messages_out: self.messages_out(),
            raw_remote_refs: self.raw_remote_refs,
            send_counts: self.send_to.iter().map(Vec::len).collect(),
            recv_counts: self.recv_from.iter().map(Vec::len).collect(),
        }
    }
}

/// JSON-friendly per-rank plan digest.
#[derive(Debug, Clone, Serialize)]
pub struct PlanSummary {
    pub rank: usize,
    pub rows: usize,
    pub nnz_local: usize,
    pub nnz_remote: usize,
    pub halo_len: usize,
    pub sent_bytes: u64,
    pub received_bytes: u64,
    pub messages_out: usize,
    pub raw_remote_refs: usize,
    pub send_counts: Vec<usize>,
    pub recv_counts: Vec<usize>,
}

/// 64-bit FNV-1a, enough to catch plan mismatches across processes.
struct Fnv1a(u64);

impl Fnv1a {
    fn new() -> Self {
        Fnv1a(0xcbf2_9ce4_8422_2325)
    }
    fn write_usize(&mut self, v: usize) {
        for b in (v as u64).to_le_bytes() {
            self.0 ^= b as u64;
            self.0 = self.0.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    fn finish(&self) -> u64 {
        self.0
    }
}

/// Builds rank `my_rank`'s plan from the global matrix and the partition.
/// Deterministic: identical inputs give identical plans.
pub fn build_comm_plan(
    a: &CsrMatrix,
    p: &PartitionMap,
    my_rank: usize,
) -> Result<CommPlan, PlanError> {
    if a.n_rows != a.n_cols {
        return Err(PlanError::NonSquare {
            n_rows: a.n_rows,
            n_cols: a.n_cols,
        });
    }
    if my_rank >= p.n_ranks() {
        return Err(PlanError::RankOutOfRange {
            rank: my_rank,
            n_ranks: p.n_ranks(),
        });
    }
    if p.n_rows() != a.n_rows {
        return Err(PlanError::RowCountMismatch {
            partition_rows: p.n_rows(),
            matrix_rows: a.n_rows,
        });
    }
    let n_ranks = p.n_ranks();
    let rows = p.rows_of(my_rank);
    let (row_begin, row_end) = (rows.start, rows.end);
    let local_len = row_end - row_begin;

    // halo: distinct non-owned columns my rows reference, ascending
    let mut halo_cols: Vec<usize> = Vec::new();
    let mut raw_remote_refs = 0usize;
    for i in rows.clone() {
        for &c in a.row(i).0 {
            let c = c as usize;
            if !(row_begin..row_end).contains(&c) {
                halo_cols.push(c);
                raw_remote_refs += 1;
            }
        }
    }
    halo_cols.sort_unstable();
    halo_cols.dedup();
    let halo_len = halo_cols.len();

    // group the halo by source rank; ascending ranks own ascending ranges,
    // so each rank's block is a contiguous run of halo_cols
    let mut recv_from: Vec<Vec<usize>> = vec![Vec::new(); n_ranks];
    for &c in &halo_cols {
        recv_from[p.rank_of_row(c)].push(c);
    }
    let mut halo_offset = vec![0usize; n_ranks];
    let mut acc = 0;
    for q in 0..n_ranks {
        halo_offset[q] = acc;
        acc += recv_from[q].len();
    }
    debug_assert_eq!(acc, halo_len);

    // split/combined matrices over my rows, entries kept in storage order
    let halo_pos = |c: usize| halo_cols.binary_search(&c).expect("column is in the halo");
    let mut local = CsrBuilder::new(local_len);
    let mut remote = CsrBuilder::new(local_len);
    let mut combined = CsrBuilder::new(local_len);
    for i in rows.clone() {
        let (cols, vals) = a.row(i);
        for (c, v) in cols.iter().zip(vals) {
            let c = *c as usize;
            if (row_begin..row_end).contains(&c) {
                local.push(c - row_begin, *v);
                combined.push(c - row_begin, *v);
            } else {
                let h = halo_pos(c);
                remote.push(h, *v);
                combined.push(local_len + h, *v);
            }
        }
        local.end_row();
        remote.end_row();
        combined.end_row();
    }
    let a_local = local.finish(local_len);
    let a_remote = remote.finish(halo_len);
    let a_combined = combined.finish(local_len + halo_len);

    // who needs my entries: scan every other rank's rows for columns I own
    let mut send_to: Vec<Vec<usize>> = vec![Vec::new(); n_ranks];
    for (q, dest) in send_to.iter_mut().enumerate() {
        if q == my_rank {
            continue;
        }
        let mut needed: Vec<usize> = Vec::new();
        for i in p.rows_of(q) {
            for &c in a.row(i).0 {
                let c = c as usize;
                if (row_begin..row_end).contains(&c) {
                    needed.push(c - row_begin);
                }
            }
        }
        needed.sort_unstable();
        needed.dedup();
        *dest = needed;
    }

    Ok(CommPlan {
        my_rank,
        n_ranks,
        row_begin,
        row_end,
        send_to,
        recv_from,
        halo_offset,
        halo_len,
        a_local,
        a_remote,
        a_combined,
        raw_remote_refs,
    })
}

/// Row-at-a-time CRS assembly that preserves insertion order within rows.
struct CsrBuilder {
    row_ptr: Vec<usize>,
    col_idx: Vec<u32>,
    val: Vec<f64>,
}

impl CsrBuilder {
    fn new(n_rows: usize) -> Self {
        let mut row_ptr = Vec::with_capacity(n_rows + 1);
        row_ptr.push(0);
        CsrBuilder {
            row_ptr,
            col_idx: Vec::new(),
            val: Vec::new(),
        }
    }
    fn push(&mut self, col: usize, v: f64) {
        self.col_idx.push(col as u32);
        self.val.push(v);
    }
    fn end_row(&mut self) {
        self.row_ptr.push(self.val.len());
    }
    fn finish(self, n_cols: usize) -> CsrMatrix {
        let n_rows = self.row_ptr.len() - 1;
        CsrMatrix::from_parts(n_rows, n_cols, self.row_ptr, self.col_idx, self.val)
            .expect("builder output is structurally valid")
    }
}

/// Per-rank and total exchange volumes, plus consistency validation across
/// all plans. The error names the first disagreeing rank pair.
#[derive(Debug, Clone, Serialize)]
pub struct VolumeReport {
    pub n_ranks: usize,
    pub per_rank_sent_bytes: Vec<u64>,
    pub per_rank_recv_bytes: Vec<u64>,
    pub total_bytes: u64,
    pub per_rank_messages: Vec<usize>,
    pub per_rank_raw_remote_refs: Vec<usize>,
}

pub fn exchange_volume(plans: &[CommPlan]) -> Result<VolumeReport, PlanError> {
    if plans.is_empty() {
        return Err(PlanError::WrongPlanCount {
            expected: 1,
            got: 0,
        });
    }
    let n_ranks = plans[0].n_ranks;
    if plans.len() != n_ranks {
        return Err(PlanError::WrongPlanCount {
            expected: n_ranks,
            got: plans.len(),
        });
    }
    for (r, plan) in plans.iter().enumerate() {
        if plan.my_rank != r || plan.n_ranks != n_ranks {
            return Err(PlanError::Inconsistent {
                sender: r,
                receiver: plan.my_rank,
                detail: format!(
                    "plan at position {r} claims rank {} of {}",
                    plan.my_rank, plan.n_ranks
                ),
            });
        }
    }
    for sender in 0..n_ranks {
        for receiver in 0..n_ranks {
            if sender == receiver {
                continue;
            }
            let sent: Vec<usize> = plans[sender].send_to[receiver]
                .iter()
                .map(|&i| i + plans[sender].row_begin)
                .collect();
            let expected = &plans[receiver].recv_from[sender];
            if &sent != expected {
                return Err(PlanError::Inconsistent {
                    sender,
                    receiver,
                    detail: format!(
                        "sender lists {} indices, receiver expects {}",
                        sent.len(),
                        expected.len()
                    ),
                });
            }
        }
    }
    let per_rank_sent_bytes: Vec<u64> = plans.iter().map(CommPlan::sent_bytes).collect();
    let per_rank_recv_bytes: Vec<u64> = plans.iter().map(CommPlan::received_bytes).collect();
    let total_bytes = per_rank_sent_bytes.iter().sum();
    debug_assert_eq!(total_bytes, per_rank_recv_bytes.iter().sum::<u64>());
    Ok(VolumeReport {
        n_ranks,
        per_rank_sent_bytes,
        per_rank_recv_bytes,
        total_bytes,
        per_rank_messages: plans.iter().map(CommPlan::messages_out).collect(),
        per_rank_raw_remote_refs: plans.iter().map(|p| p.raw_remote_refs).collect(),
    })
}

/// Convenience: plans for every rank of a partition.
pub fn build_all_plans(a: &CsrMatrix, p: &PartitionMap) -> Result<Vec<CommPlan>, PlanError> {
    (0..p.n_ranks()).map(|r| build_comm_plan(a, p, r)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::partition::partition_by_nonzeros;
    use crate::sparse::{coo_to_csr, spmv, CooTriples};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tridiagonal(n: usize) -> CsrMatrix {
        let mut t = CooTriples::new(n, n);
        for i in 0..n {
            t.push(i, i, 2.0);
            if i > 0 {
                t.push(i, i - 1, -1.0);
            }
            if i + 1 < n {
                t.push(i, i + 1, -1.0);
            }
        }
        coo_to_csr(&t).unwrap()
    }

    fn random_matrix(seed: u64, n: usize, per_row: usize) -> CsrMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut t = CooTriples::new(n, n);
        for i in 0..n {
            t.push(i, i, 4.0);
            for _ in 0..per_row {
                t.push(i, rng.random_range(0..n), rng.random_range(-1.0..1.0));
            }
        }
        coo_to_csr(&t).unwrap()
    }

    #[test]
    fn block_diagonal_needs_no_communication() {
        // two decoupled 4x4 dense blocks, cut exactly at the block boundary
        let mut t = CooTriples::new(8, 8);
        for b in [0usize, 4] {
            for i in 0..4 {
                for j in 0..4 {
                    t.push(b + i, b + j, 1.0 + (i * 4 + j) as f64);
                }
            }
        }
        let a = coo_to_csr(&t).unwrap();
        let p = partition_by_nonzeros(&a, 2).unwrap();
        assert_eq!(p.rows_of(0), 0..4);
        let plans = build_all_plans(&a, &p).unwrap();
        for plan in &plans {
            assert!(plan.send_to.iter().all(Vec::is_empty));
            assert!(plan.recv_from.iter().all(Vec::is_empty));
            assert_eq!(plan.a_remote.n_nz(), 0);
            assert_eq!(plan.halo_len, 0);
        }
        assert_eq!(exchange_volume(&plans).unwrap().total_bytes, 0);
    }

    #[test]
    fn tridiagonal_two_ranks_exchange_one_boundary_value_each() {
        let a = tridiagonal(8);
        let p = partition_by_nonzeros(&a, 2).unwrap();
        assert_eq!(p.rows_of(0), 0..4);
        let plans = build_all_plans(&a, &p).unwrap();

        // rank 0's row 3 references column 4; rank 1's row 4 references column 3
        assert_eq!(plans[0].send_to[1], vec![3]);
        assert_eq!(plans[0].recv_from[1], vec![4]);
        assert_eq!(plans[1].send_to[0], vec![0]);
        assert_eq!(plans[1].recv_from[0], vec![3]);
        assert_eq!(plans[0].halo_len, 1);

        let vol = exchange_volume(&plans).unwrap();
        assert_eq!(vol.total_bytes, 16);
        assert_eq!(vol.per_rank_sent_bytes, vec![8, 8]);
    }

    #[test]
    fn split_parts_reassemble_to_the_global_row_block() {
        let a = random_matrix(3, 200, 5);
        let p = partition_by_nonzeros(&a, 4).unwrap();
        for plan in build_all_plans(&a, &p).unwrap() {
            let halo = plan.halo_cols();
            // unmap both parts back to (global row, global col, value)
            let mut rebuilt = CooTriples::new(a.n_rows, a.n_cols);
            for i in 0..plan.a_local.n_rows {
                let (cols, vals) = plan.a_local.row(i);
                for (c, v) in cols.iter().zip(vals) {
                    rebuilt.push(plan.row_begin + i, *c as usize + plan.row_begin, *v);
                }
                let (cols, vals) = plan.a_remote.row(i);
                for (c, v) in cols.iter().zip(vals) {
                    rebuilt.push(plan.row_begin + i, halo[*c as usize], *v);
                }
            }
            let rebuilt = coo_to_csr(&rebuilt).unwrap();
            for i in plan.row_begin..plan.row_end {
                assert_eq!(rebuilt.row(i), a.row(i), "row {i}");
            }
            // nonzeros are partitioned exactly, none lost or duplicated
            assert_eq!(
                plan.a_local.n_nz() + plan.a_remote.n_nz(),
                a.row_ptr[plan.row_end] - a.row_ptr[plan.row_begin]
            );
        }
    }

    #[test]
    fn combined_matrix_reproduces_sequential_rows_bitwise() {
        let a = random_matrix(9, 150, 6);
        let b: Vec<f64> = (0..150).map(|i| (i as f64).sin()).collect();
        let reference = spmv(&a, &b).unwrap();
        let p = partition_by_nonzeros(&a, 3).unwrap();
        for plan in build_all_plans(&a, &p).unwrap() {
            // combined input = owned slice followed by gathered halo values
            let mut x: Vec<f64> = b[plan.row_begin..plan.row_end].to_vec();
            x.extend(plan.halo_cols().iter().map(|&c| b[c]));
            let c = spmv(&plan.a_combined, &x).unwrap();
            let want = &reference[plan.row_begin..plan.row_end];
            assert!(
                c.iter().zip(want).all(|(x, y)| x.to_bits() == y.to_bits()),
                "rank {}",
                plan.my_rank
            );
        }
    }

    #[test]
    fn coverage_is_exact_and_disjoint() {
        let a = random_matrix(17, 300, 4);
        let p = partition_by_nonzeros(&a, 5).unwrap();
        for plan in build_all_plans(&a, &p).unwrap() {
            let halo: std::collections::BTreeSet<usize> = plan.halo_cols().into_iter().collect();
            let owned = plan.row_begin..plan.row_end;
            let mut referenced = std::collections::BTreeSet::new();
            for i in owned.clone() {
                for &c in a.row(i).0 {
                    referenced.insert(c as usize);
                }
            }
            for &c in &referenced {
                let in_owned = owned.contains(&c);
                let in_halo = halo.contains(&c);
                assert!(
                    in_owned ^ in_halo,
                    "column {c} covered {in_owned}/{in_halo}"
                );
            }
            // halo never contains an unreferenced or owned column
            for &c in &halo {
                assert!(referenced.contains(&c) && !owned.contains(&c));
            }
        }
    }

    #[test]
    fn gather_scatter_reproduces_halo_values() {
        let a = random_matrix(29, 240, 5);
        let b: Vec<f64> = (0..240).map(|i| 1.0 + i as f64 * 0.25).collect();
        let p = partition_by_nonzeros(&a, 3).unwrap();
        let plans = build_all_plans(&a, &p).unwrap();
        for plan in &plans {
            let mut halo = vec![f64::NAN; plan.halo_len];
            for q in 0..plans.len() {
                // what q would put on the wire for me
                let payload: Vec<f64> = plans[q].send_to[plan.my_rank]
                    .iter()
                    .map(|&i| b[plans[q].row_begin + i])
                    .collect();
                halo[plan.halo_offset[q]..plan.halo_offset[q] + payload.len()]
                    .copy_from_slice(&payload);
            }
            let halo_cols = plan.halo_cols();
            for (h, &c) in halo_cols.iter().enumerate() {
                assert_eq!(halo[h], b[c], "halo slot {h} (global column {c})");
            }
        }
    }

    #[test]
    fn plans_are_deterministic() {
        let a = random_matrix(31, 120, 4);
        let p = partition_by_nonzeros(&a, 4).unwrap();
        assert_eq!(
            build_all_plans(&a, &p).unwrap(),
            build_all_plans(&a, &p).unwrap()
        );
    }

    #[test]
    fn consistency_holds_for_seeded_matrices() {
        for seed in [1u64, 2, 3, 4, 5] {
            let a = random_matrix(seed, 180, 3);
            for ranks in [2, 3, 5] {
                let p = partition_by_nonzeros(&a, ranks).unwrap();
                let plans = build_all_plans(&a, &p).unwrap();
                exchange_volume(&plans)
                    .unwrap_or_else(|e| panic!("seed {seed}, ranks {ranks}: {e}"));
            }
        }
    }

    #[test]
    fn tampered_plan_is_reported_with_the_rank_pair() {
        let a = tridiagonal(8);
        let p = partition_by_nonzeros(&a, 2).unwrap();
        let mut plans = build_all_plans(&a, &p).unwrap();
        plans[1].recv_from[0].clear();
        let err = exchange_volume(&plans).unwrap_err();
        match err {
            PlanError::Inconsistent {
                sender, receiver, ..
            } => {
                assert_eq!((sender, receiver), (0, 1));
            }
            other => panic!("unexpected error {other:?}"),
        }
        assert!(err.to_string().contains("rank 0"));
        assert!(err.to_string().contains("rank 1"));
    }

    #[test]
    fn stencil_volume_matches_brute_force_count() {
        let t = crate::workload::gen_stencil7(32, 32, 32).unwrap();
        let a = coo_to_csr(&t).unwrap();
        let p = partition_by_nonzeros(&a, 8).unwrap();
        let plans = build_all_plans(&a, &p).unwrap();
        let vol = exchange_volume(&plans).unwrap();

        // every distinct (receiving rank, non-owned column) pair costs 8 bytes
        let mut pairs = std::collections::BTreeSet::new();
        for i in 0..a.n_rows {
            let owner = p.rank_of_row(i);
            for &c in a.row(i).0 {
                if p.rank_of_row(c as usize) != owner {
                    pairs.insert((owner, c as usize));
                }
            }
        }
        assert_eq!(vol.total_bytes, 8 * pairs.len() as u64);
    }

    #[test]
    fn pair_checksums_agree_between_peers() {
        let a = random_matrix(41, 160, 5);
        let p = partition_by_nonzeros(&a, 4).unwrap();
        let plans = build_all_plans(&a, &p).unwrap();
        for r in 0..4 {
            for q in 0..4 {
                if r != q {
                    assert_eq!(plans[r].pair_checksum(q), plans[q].pair_checksum(r));
                }
            }
        }
        // and a tampered plan no longer matches
        let mut bad = plans[1].clone();
        bad.recv_from[0].push(0);
        assert_ne!(bad.pair_checksum(0), plans[0].pair_checksum(1));
    }

    #[test]
    fn rejects_nonsquare_and_bad_rank() {
        let a = CsrMatrix::zero(3, 4);
        let p = PartitionMap::from_row_starts(vec![0, 3]).unwrap();
        assert!(matches!(
            build_comm_plan(&a, &p, 0),
            Err(PlanError::NonSquare { .. })
        ));
        let a = tridiagonal(4);
        let p = partition_by_nonzeros(&a, 2).unwrap();
        assert!(matches!(
            build_comm_plan(&a, &p, 2),
            Err(PlanError::RankOutOfRange { .. })
        ));
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        fn arb_case() -> impl Strategy<Value = (CsrMatrix, usize)> {
            (2usize..80, 1usize..6, proptest::num::u64::ANY, 2usize..6).prop_map(
                |(n, per_row, seed, ranks)| {
                    let mut rng = ChaCha8Rng::seed_from_u64(seed);
                    let mut t = CooTriples::new(n, n);
                    for i in 0..n {
                        for _ in 0..per_row {
                            t.push(i, rng.random_range(0..n), 1.0);
                        }
                    }
                    (coo_to_csr(&t).unwrap(), ranks)
                },
            )
        }

        proptest! {
            #[test]
            fn plans_always_mutually_consistent((a, ranks) in arb_case()) {
                let p = partition_by_nonzeros(&a, ranks).unwrap();
                let plans = build_all_plans(&a, &p).unwrap();
                prop_assert!(exchange_volume(&plans).is_ok());
            }

            #[test]
            fn nonzeros_split_exactly((a, ranks) in arb_case()) {
                let p = partition_by_nonzeros(&a, ranks).unwrap();
                let total: usize = build_all_plans(&a, &p)
                    .unwrap()
                    .iter()
                    .map(|pl| pl.a_local.n_nz() + pl.a_remote.n_nz())
                    .sum();
                prop_assert_eq!(total, a.n_nz());
            }

            #[test]
            fn volume_matches_brute_force((a, ranks) in arb_case()) {
                let p = partition_by_nonzeros(&a, ranks).unwrap();
                let plans = build_all_plans(&a, &p).unwrap();
                let vol = exchange_volume(&plans).unwrap();
                let mut pairs = std::collections::BTreeSet::new();
                for i in 0..a.n_rows {
                    let owner = p.rank_of_row(i);
                    for &c in a.row(i).0 {
                        if p.rank_of_row(c as usize) != owner {
                            pairs.insert((owner, c as usize));
                        }
                    }
                }
                prop_assert_eq!(vol.total_bytes, 8 * pairs.len() as u64);
            }
        }
    }
}
