//! Deterministic matrix generators.
//!
//! Both generators produce structural stand-ins for the two matrix families
//! the benchmarks care about: a 7-point stencil with about 7 nonzeros per
//! row, and a block-banded matrix with a tunable average row occupancy
//! around 15. Output is a pure function of the parameters and seed.

use super::WorkloadError;
use crate::sparse::CooTriples;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::HashSet;

fn params_err(msg: impl Into<String>) -> WorkloadError {
    WorkloadError::Params(msg.into())
}

/// 7-point Laplacian on an nx × ny × nz grid: every row has 6.0 on the
/// diagonal and -1.0 toward each of its up-to-six axis neighbors. Grid point
/// (x, y, z) maps to row (z·ny + y)·nx + x.
pub fn gen_stencil7(nx: usize, ny: usize, nz: usize) -> Result<CooTriples, WorkloadError> {
    if nx == 0 || ny == 0 || nz == 0 {
        return Err(params_err(format!(
            "stencil dimensions must all be at least 1, got {nx}x{ny}x{nz}"
        )));
    }
    let dim = nx
        .checked_mul(ny)
        .and_then(|p| p.checked_mul(nz))
        .and_then(|d| d.checked_mul(7).map(|_| d))
        .ok_or_else(|| params_err(format!("grid {nx}x{ny}x{nz} overflows the address space")))?;
    if dim > u32::MAX as usize {
        return Err(params_err(format!(
            "grid {nx}x{ny}x{nz} has {dim} points, beyond the 4-byte column index range"
        )));
    }
    let id = |x: usize, y: usize, z: usize| (z * ny + y) * nx + x;
    let mut t = CooTriples::new(dim, dim);
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let row = id(x, y, z);
                t.push(row, row, 6.0);
                if x > 0 {
                    t.push(row, id(x - 1, y, z), -1.0);
                }
                if x + 1 < nx {
                    t.push(row, id(x + 1, y, z), -1.0);
                }
                if y > 0 {
                    t.push(row, id(x, y - 1, z), -1.0);
                }
                if y + 1 < ny {
                    t.push(row, id(x, y + 1, z), -1.0);
                }
                if z > 0 {
                    t.push(row, id(x, y, z - 1), -1.0);
                }
                if z + 1 < nz {
                    t.push(row, id(x, y, z + 1), -1.0);
                }
            }
        }
    }
    Ok(t)
}

/// Block-banded matrix: a band of half-width `inner_band` inside each
/// diagonal `block`×`block` block, plus randomly filled off-diagonal blocks
/// `outer_stride` block-rows away on both sides, topped up until the average
/// row occupancy reaches `target_nnzr` (within 5%). The pattern is
/// structurally symmetric and every value lies in [0.5, 1.5). The same seed
/// always yields bitwise-identical triples.
pub fn gen_block_band(
    dim: usize,
    block: usize,
    inner_band: usize,
    outer_stride: usize,
    target_nnzr: f64,
    seed: u64,
) -> Result<CooTriples, WorkloadError> {
    let mut problems = Vec::new();
    if dim == 0 {
        problems.push("dim must be at least 1".to_string());
    }
    if block == 0 {
        problems.push("block must be at least 1".to_string());
    } else if !dim.is_multiple_of(block) {
        problems.push(format!("block {block} must divide dim {dim}"));
    }
    if target_nnzr < 3.0 || target_nnzr.is_nan() {
        problems.push(format!("target_nnzr must be at least 3, got {target_nnzr}"));
    }
    if dim > u32::MAX as usize {
        problems.push(format!("dim {dim} exceeds the 4-byte column index range"));
    }
    if !problems.is_empty() {
        return Err(params_err(problems.join("; ")));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = CooTriples::new(dim, dim);
    let mut occupied: HashSet<(u32, u32)> = HashSet::new();
    let place = |t: &mut CooTriples,
                 occupied: &mut HashSet<(u32, u32)>,
                 rng: &mut ChaCha8Rng,
                 r: usize,
                 c: usize|
     -> bool {
        if occupied.insert((r as u32, c as u32)) {
            let v = rng.random_range(0.5..1.5);
            t.push(r, c, v);
            if r != c {
                occupied.insert((c as u32, r as u32));
                t.push(c, r, v);
            }
            true
        } else {
            false
        }
    };

    // deterministic skeleton: banded diagonal blocks (upper side; mirroring
    // fills the lower)
    for r in 0..dim {
        place(&mut t, &mut occupied, &mut rng, r, r);
        let block_end = (r / block + 1) * block;
        for d in 1..=inner_band {
            let c = r + d;
            if c < block_end {
                place(&mut t, &mut occupied, &mut rng, r, c);
            }
        }
    }
    let skeleton = t.nnz();
    let target_total = (target_nnzr * dim as f64).round() as usize;
    if skeleton > target_total {
        return Err(params_err(format!(
            "banded skeleton already holds {skeleton} nonzeros, above the target of \
             {target_total}; reduce inner_band or raise target_nnzr"
        )));
    }

    // random fill toward the target, placed in the ±outer_stride off-diagonal
    // blocks when those exist, otherwise inside the diagonal blocks
    let n_blocks = dim / block;
    let off_pairs = if outer_stride >= 1 && outer_stride < n_blocks {
        n_blocks - outer_stride
    } else {
        0
    };
    let quota = target_total - skeleton;
    let mut added = 0usize;
    let mut attempts = 0usize;
    let attempt_cap = quota * 50 + 1000;
    while added < quota && attempts < attempt_cap {
        attempts += 1;
        let (r, c) = if off_pairs > 0 {
            let pair = rng.random_range(0..off_pairs);
            let r = pair * block + rng.random_range(0..block);
            let c = (pair + outer_stride) * block + rng.random_range(0..block);
            (r, c)
        } else {
            let b = rng.random_range(0..n_blocks);
            let r = b * block + rng.random_range(0..block);
            let c = b * block + rng.random_range(0..block);
            (r, c)
        };
        if place(&mut t, &mut occupied, &mut rng, r, c) {
            added += if r == c { 1 } else { 2 };
        }
    }
    let achieved = t.nnz() as f64 / dim as f64;
    if (achieved - target_nnzr).abs() > 0.05 * target_nnzr {
        return Err(params_err(format!(
            "could not reach target_nnzr {target_nnzr} (achieved {achieved:.2}): the \
             off-diagonal blocks saturate; widen block, lower target_nnzr, or change outer_stride"
        )));
    }
    Ok(t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sparse::coo_to_csr;

    #[test]
    fn single_point_stencil_is_just_the_diagonal() {
        let t = gen_stencil7(1, 1, 1).unwrap();
        assert_eq!(t.triples, vec![(0, 0, 6.0)]);
    }

    #[test]
    fn stencil_center_row_has_seven_entries_summing_to_zero() {
        let t = gen_stencil7(3, 3, 3).unwrap();
        let a = coo_to_csr(&t).unwrap();
        let center = 13; // (x, y, z) = (1, 1, 1) in the (x*ny + y)*nz + z numbering
        let (cols, vals) = a.row(center);
        assert_eq!(cols.len(), 7);
        assert_eq!(vals.iter().sum::<f64>(), 0.0);
    }

    #[test]
    fn stencil_average_occupancy_approaches_seven() {
        let t = gen_stencil7(32, 32, 32).unwrap();
        let a = coo_to_csr(&t).unwrap();
        assert_eq!(a.n_rows, 32 * 32 * 32);
        let nnzr = a.nnzr();
        assert!((6.5..=7.0).contains(&nnzr), "nnzr = {nnzr}");
        // enumeration cross-check: 7 per row minus one per face-adjacent
        // missing neighbor, i.e. 2 faces per axis of 32x32 points each
        let expected = 7 * 32768 - 3 * 2 * 32 * 32;
        assert_eq!(a.n_nz(), expected);
    }

    #[test]
    fn stencil_is_value_symmetric() {
        let a = coo_to_csr(&gen_stencil7(4, 3, 2).unwrap()).unwrap();
        for i in 0..a.n_rows {
            let (cols, vals) = a.row(i);
            for (c, v) in cols.iter().zip(vals) {
                let (tc, tv) = a.row(*c as usize);
                let k = tc.binary_search(&(i as u32)).expect("mirror entry exists");
                assert_eq!(tv[k], *v);
            }
        }
    }

    #[test]
    fn stencil_rejects_zero_dimensions() {
        assert!(gen_stencil7(0, 3, 3).is_err());
        assert!(gen_stencil7(3, 0, 3).is_err());
        assert!(gen_stencil7(3, 3, 0).is_err());
    }

    #[test]
    fn block_band_hits_its_occupancy_target() {
        let t = gen_block_band(5000, 50, 2, 3, 15.0, 7).unwrap();
        let a = coo_to_csr(&t).unwrap();
        let nnzr = a.nnzr();
        assert!((nnzr - 15.0).abs() <= 0.05 * 15.0, "achieved nnzr = {nnzr}");
    }

    #[test]
    fn block_band_pattern_is_structurally_symmetric() {
        let a = coo_to_csr(&gen_block_band(600, 20, 2, 4, 12.0, 3).unwrap()).unwrap();
        assert!(a.pattern_symmetric());
    }

    #[test]
    fn block_band_is_deterministic_per_seed() {
        let a = gen_block_band(400, 20, 1, 2, 9.0, 11).unwrap();
        let b = gen_block_band(400, 20, 1, 2, 9.0, 11).unwrap();
        assert_eq!(a, b);
        let c = gen_block_band(400, 20, 1, 2, 9.0, 12).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn block_band_values_stay_in_range() {
        let t = gen_block_band(300, 30, 2, 2, 10.0, 5).unwrap();
        assert!(t.triples.iter().all(|&(_, _, v)| (0.5..1.5).contains(&v)));
    }

    #[test]
    fn block_band_nonzeros_live_only_in_declared_blocks() {
        let (dim, block, stride) = (240, 24, 3);
        let t = gen_block_band(dim, block, 2, stride, 9.0, 13).unwrap();
        for &(r, c, _) in &t.triples {
            let (br, bc) = (r / block, c / block);
            let dist = br.abs_diff(bc);
            assert!(
                dist == 0 || dist == stride,
                "entry ({r}, {c}) in block pair ({br}, {bc})"
            );
        }
    }

    #[test]
    fn block_band_parameter_errors_are_collected() {
        let err = gen_block_band(100, 7, 1, 2, 1.0, 0)
            .unwrap_err()
            .to_string();
        assert!(err.contains("must divide"), "{err}");
        assert!(err.contains("target_nnzr"), "{err}");
    }

    #[test]
    fn block_band_rejects_unreachable_targets() {
        // a 10x10 fully dense matrix cannot reach 50 nonzeros per row
        let err = gen_block_band(10, 10, 0, 1, 50.0, 1)
            .unwrap_err()
            .to_string();
        assert!(err.contains("could not reach"), "{err}");
    }

    #[test]
    fn block_band_with_overwide_band_is_rejected() {
        let err = gen_block_band(100, 50, 40, 1, 3.0, 1)
            .unwrap_err()
            .to_string();
        assert!(err.contains("skeleton"), "{err}");
    }
}
