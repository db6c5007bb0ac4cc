//! Code-balance performance model for CRS matrix-vector multiplication.
//!
//! Each nonzero costs two flops and moves, on average, a fixed number of
//! bytes: 12 for the value and column index, 16/N_nzr for the result update
//! (write-allocate plus evict), 8/N_nzr for loading the right-hand side
//! once, and κ extra bytes for the part of the right-hand side that falls
//! out of cache and must be re-loaded. Dividing by the two flops gives the
//! balance in bytes per flop:
//!
//! ```text
//! unsplit:  6 + 12/N_nzr + κ/2
//! split:    6 + 20/N_nzr + κ/2     (the result is written twice)
//! ```
//!
//! Achievable performance is bounded by bandwidth / balance. Units are
//! decimal throughout: GB/s means 10⁹ bytes/s and GFlop/s means 10⁹ flop/s.

use crate::sparse::CsrMatrix;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("{name} must be positive, got {value}")]
    NonPositive { name: &'static str, value: f64 },
    #[error("kappa must be nonnegative, got {0}")]
    NegativeKappa(f64),
    #[error(
        "measurement implies kappa = {implied_kappa:.4} < 0: the measured {gflops} GFlop/s at \
         {bandwidth} GB/s beats the model floor of {floor:.4} bytes/flop — check the inputs"
    )]
    ModelViolation {
        implied_kappa: f64,
        gflops: f64,
        bandwidth: f64,
        floor: f64,
    },
}

/// Inputs to the balance formula.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BalanceInputs {
    /// Average nonzeros per row (a real number; never rounded).
    pub n_nzr: f64,
    /// Extra right-hand-side traffic per inner iteration, in bytes.
    pub kappa: f64,
    /// Whether the kernel runs as two passes (local then remote).
    pub split: bool,
}

/// Rejects zero, negatives, and NaN in one place; NaN compares as
/// non-greater, so it cannot slip through as "positive".
fn require_positive(name: &'static str, value: f64) -> Result<(), ModelError> {
    if value.partial_cmp(&0.0) == Some(std::cmp::Ordering::Greater) {
        Ok(())
    } else {
        Err(ModelError::NonPositive { name, value })
    }
}

/// Bytes of memory traffic per floating-point operation.
pub fn code_balance(inputs: BalanceInputs) -> Result<f64, ModelError> {
    require_positive("n_nzr", inputs.n_nzr)?;
    if inputs.kappa < 0.0 {
        return Err(ModelError::NegativeKappa(inputs.kappa));
    }
    let rhs_and_result = if inputs.split { 20.0 } else { 12.0 };
    Ok(6.0 + rhs_and_result / inputs.n_nzr + inputs.kappa / 2.0)
}

/// Bandwidth-limited performance bound: bandwidth / balance.
pub fn max_performance(balance: f64, bandwidth: f64) -> Result<f64, ModelError> {
    require_positive("balance", balance)?;
    require_positive("bandwidth", bandwidth)?;
    Ok(bandwidth / balance)
}

/// Solves the balance formula for κ given a measurement:
/// κ = 2·(bandwidth/gflops − 6 − 12/N_nzr), with 20/N_nzr when split.
/// A negative solution means the measurement beats the κ=0 floor; that is
/// reported as a diagnostic error rather than clamped, because it signals a
/// bad measurement or a wrong assumption, not a valid κ.
pub fn estimate_kappa(
    measured_gflops: f64,
    measured_bandwidth: f64,
    n_nzr: f64,
    split: bool,
) -> Result<f64, ModelError> {
    require_positive("measured_gflops", measured_gflops)?;
    require_positive("measured_bandwidth", measured_bandwidth)?;
    let floor = code_balance(BalanceInputs {
        n_nzr,
        kappa: 0.0,
        split,
    })?;
    let kappa = 2.0 * (measured_bandwidth / measured_gflops - floor);
    if kappa < 0.0 {
        return Err(ModelError::ModelViolation {
            implied_kappa: kappa,
            gflops: measured_gflops,
            bandwidth: measured_bandwidth,
            floor,
        });
    }
    Ok(kappa)
}

/// How many times the full right-hand-side vector crosses memory per
/// multiplication: one mandatory traversal plus κ/(8/N_nzr) extra ones,
/// since one extra full traversal costs 8/N_nzr bytes per inner iteration.
pub fn b_load_count(kappa: f64, n_nzr: f64) -> f64 {
    1.0 + kappa * n_nzr / 8.0
}

/// Extra right-hand-side bytes per row caused by cache misses: κ·N_nzr.
pub fn per_row_extra_bytes(kappa: f64, n_nzr: f64) -> f64 {
    kappa * n_nzr
}

/// Predicted memory traffic of one multiplication in bytes, κ=0 component:
/// 12 bytes per nonzero (value + column index), 16 per row (result update),
/// 8 per column (one right-hand-side traversal), and another 16 per row
/// when the kernel is split into two passes.
pub fn model_traffic(a: &CsrMatrix, split: bool) -> u64 {
    let base = a.n_nz() as u64 * 12 + a.n_rows as u64 * 16 + a.n_cols as u64 * 8;
    if split {
        base + a.n_rows as u64 * 16
    } else {
        base
    }
}

/// Everything the model can say about one configuration, for reports.
#[derive(Debug, Clone, Serialize)]
pub struct BalanceReport {
    pub inputs: BalanceInputs,
    pub bytes_per_flop: f64,
    /// Bound from a supplied bandwidth, GFlop/s.
    pub predicted_max_gflops: Option<f64>,
    /// Bandwidth a supplied measurement would need, GB/s.
    pub effective_bandwidth: Option<f64>,
    /// κ solved from measurement + bandwidth when both are given.
    pub kappa_estimate: Option<f64>,
    /// Full traversals of the right-hand side implied by `inputs.kappa`.
    pub b_load_count: f64,
    /// Extra right-hand-side bytes per row implied by `inputs.kappa`.
    pub per_row_extra_bytes: f64,
}

/// Builds a [`BalanceReport`], deriving every field that the optional
/// bandwidth / measured-GFlop/s inputs make computable.
pub fn balance_report(
    inputs: BalanceInputs,
    bandwidth: Option<f64>,
    measured_gflops: Option<f64>,
) -> Result<BalanceReport, ModelError> {
    let bytes_per_flop = code_balance(inputs)?;
    let predicted_max_gflops = match bandwidth {
        Some(bw) => Some(max_performance(bytes_per_flop, bw)?),
        None => None,
    };
    let effective_bandwidth = measured_gflops.map(|g| g * bytes_per_flop);
    let kappa_estimate = match (measured_gflops, bandwidth) {
        (Some(g), Some(bw)) => Some(estimate_kappa(g, bw, inputs.n_nzr, inputs.split)?),
        _ => None,
    };
    Ok(BalanceReport {
        inputs,
        bytes_per_flop,
        predicted_max_gflops,
        effective_bandwidth,
        kappa_estimate,
        b_load_count: b_load_count(inputs.kappa, inputs.n_nzr),
        per_row_extra_bytes: per_row_extra_bytes(inputs.kappa, inputs.n_nzr),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unsplit(n_nzr: f64, kappa: f64) -> BalanceInputs {
        BalanceInputs {
            n_nzr,
            kappa,
            split: false,
        }
    }

    fn split(n_nzr: f64, kappa: f64) -> BalanceInputs {
        BalanceInputs {
            n_nzr,
            kappa,
            split: true,
        }
    }

    #[test]
    fn balance_at_fifteen_per_row_is_six_point_eight() {
        assert_eq!(code_balance(unsplit(15.0, 0.0)).unwrap(), 6.8);
    }

    #[test]
    fn split_balance_at_fifteen_per_row() {
        let b = code_balance(split(15.0, 0.0)).unwrap();
        assert!((b - (6.0 + 20.0 / 15.0)).abs() < 1e-15);
        // penalty relative to the split balance: about 7.3%, inside the
        // 7%-15% band the two-pass write traffic can cost
        let unsplit_b = code_balance(unsplit(15.0, 0.0)).unwrap();
        let penalty = 1.0 - unsplit_b / b;
        assert!((0.07..=0.15).contains(&penalty), "penalty = {penalty}");
    }

    #[test]
    fn split_penalty_band_covers_sparse_and_dense_rows() {
        for n_nzr in [7.0, 15.0] {
            let u = code_balance(unsplit(n_nzr, 0.0)).unwrap();
            let s = code_balance(split(n_nzr, 0.0)).unwrap();
            let penalty = 1.0 - u / s;
            assert!(
                (0.07..=0.15).contains(&penalty),
                "n_nzr = {n_nzr}: penalty = {penalty}"
            );
        }
    }

    #[test]
    fn balance_floor_is_six_bytes_per_flop() {
        let b = code_balance(unsplit(1e9, 0.0)).unwrap();
        assert!((6.0..6.0 + 1e-6).contains(&b), "b = {b}");
    }

    #[test]
    fn performance_bounds_for_measured_bandwidths() {
        // 18.1 GB/s in-kernel draw and 21.2 GB/s triad limit
        let bound_kernel = max_performance(6.8, 18.1).unwrap();
        let bound_triad = max_performance(6.8, 21.2).unwrap();
        assert!((bound_kernel - 2.662).abs() < 0.005, "{bound_kernel}");
        assert!((bound_triad - 3.118).abs() < 0.005, "{bound_triad}");
        assert_eq!(max_performance(1.0, 7.5).unwrap(), 7.5);
    }

    #[test]
    fn kappa_from_a_realistic_measurement() {
        // 2.25 GFlop/s measured against an 18.1 GB/s draw at 15 nonzeros/row
        let kappa = estimate_kappa(2.25, 18.1, 15.0, false).unwrap();
        assert!((kappa - 2.5).abs() < 0.05, "kappa = {kappa}");
        // that kappa means the right-hand side crosses memory about 6 times
        assert_eq!(b_load_count(2.5, 15.0).round(), 6.0);
        // and costs about 37.3 extra bytes per row
        let extra = per_row_extra_bytes(kappa, 15.0);
        assert!((extra - 37.3).abs() < 0.3, "extra = {extra}");
    }

    #[test]
    fn larger_kappa_means_proportionally_more_extra_bytes() {
        // 3.79 vs ~2.49: a bit over 50% more per-row traffic
        let base = per_row_extra_bytes(estimate_kappa(2.25, 18.1, 15.0, false).unwrap(), 15.0);
        let worse = per_row_extra_bytes(3.79, 15.0);
        assert!((worse - 56.85).abs() < 1e-10);
        let increase = worse / base - 1.0;
        assert!((0.45..0.60).contains(&increase), "increase = {increase}");
    }

    #[test]
    fn kappa_estimate_round_trips_through_the_model() {
        for &kappa in &[0.0, 0.5, 2.5, 3.79] {
            for &split_flag in &[false, true] {
                let inputs = BalanceInputs {
                    n_nzr: 15.0,
                    kappa,
                    split: split_flag,
                };
                let balance = code_balance(inputs).unwrap();
                let gflops = max_performance(balance, 18.1).unwrap();
                let back = estimate_kappa(gflops, 18.1, 15.0, split_flag).unwrap();
                assert!((back - kappa).abs() < 1e-12, "kappa {kappa} -> {back}");
            }
        }
    }

    #[test]
    fn perfect_measurement_implies_zero_kappa() {
        let bw = 21.2;
        let gflops = bw / (6.0 + 12.0 / 15.0);
        let kappa = estimate_kappa(gflops, bw, 15.0, false).unwrap();
        assert!(kappa.abs() < 1e-12);
    }

    #[test]
    fn impossible_measurement_is_a_diagnostic() {
        // faster than the kappa=0 floor allows
        let err = estimate_kappa(4.0, 18.1, 15.0, false).unwrap_err();
        match err {
            ModelError::ModelViolation { implied_kappa, .. } => assert!(implied_kappa < 0.0),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn b_load_count_basics() {
        assert_eq!(b_load_count(0.0, 15.0), 1.0);
        assert_eq!(b_load_count(2.5, 15.0), 5.6875);
        // kappa = 8/N_nzr is the definition of exactly one extra traversal
        assert!((b_load_count(8.0 / 7.0, 7.0) - 2.0).abs() < 1e-15);
    }

    #[test]
    fn traffic_term_evaluation_on_identity() {
        let a = CsrMatrix::identity(100);
        assert_eq!(model_traffic(&a, false), 100 * 12 + 100 * 16 + 100 * 8);
        assert_eq!(model_traffic(&a, true), 3600 + 1600);
    }

    #[test]
    fn traffic_normalized_by_flops_equals_balance() {
        use crate::sparse::{coo_to_csr, CooTriples};
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(13);
        for n in [10usize, 57, 333] {
            let mut t = CooTriples::new(n, n);
            for i in 0..n {
                t.push(i, i, 1.0);
                for _ in 0..rng.random_range(0..9) {
                    t.push(i, rng.random_range(0..n), 1.0);
                }
            }
            let a = coo_to_csr(&t).unwrap();
            for &split_flag in &[false, true] {
                let per_flop = model_traffic(&a, split_flag) as f64 / (2.0 * a.n_nz() as f64);
                let balance = code_balance(BalanceInputs {
                    n_nzr: a.nnzr(),
                    kappa: 0.0,
                    split: split_flag,
                })
                .unwrap();
                assert!(
                    (per_flop - balance).abs() < 1e-12,
                    "n = {n}, split = {split_flag}: {per_flop} vs {balance}"
                );
            }
        }
    }

    #[test]
    fn report_collects_all_derived_fields() {
        let r = balance_report(unsplit(15.0, 2.5), Some(18.1), Some(2.25)).unwrap();
        assert_eq!(r.bytes_per_flop, 6.8 + 1.25);
        assert!(r.predicted_max_gflops.unwrap() > 0.0);
        assert!((r.effective_bandwidth.unwrap() - 2.25 * 8.05).abs() < 1e-12);
        assert!((r.kappa_estimate.unwrap() - 2.49).abs() < 0.05);
        assert_eq!(r.b_load_count, 5.6875);
        // report with no measurement still works
        let bare = balance_report(unsplit(15.0, 0.0), None, None).unwrap();
        assert!(bare.predicted_max_gflops.is_none());
        assert!(bare.kappa_estimate.is_none());
    }

    #[test]
    fn invalid_inputs_are_rejected() {
        assert!(code_balance(unsplit(0.0, 0.0)).is_err());
        assert!(code_balance(unsplit(-3.0, 0.0)).is_err());
        assert!(code_balance(unsplit(15.0, -1.0)).is_err());
        assert!(max_performance(0.0, 18.1).is_err());
        assert!(max_performance(6.8, 0.0).is_err());
        assert!(estimate_kappa(0.0, 18.1, 15.0, false).is_err());
        assert!(estimate_kappa(f64::NAN, 18.1, 15.0, false).is_err());
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn balance_decreases_with_denser_rows(
                n in 1.0f64..500.0,
                extra in 0.1f64..100.0,
                kappa in 0.0f64..10.0,
            ) {
                let lo = code_balance(unsplit(n, kappa)).unwrap();
                let hi = code_balance(unsplit(n + extra, kappa)).unwrap();
                prop_assert!(hi < lo);
            }

            #[test]
            fn balance_increases_with_kappa(
                n in 1.0f64..500.0,
                kappa in 0.0f64..10.0,
                extra in 0.1f64..10.0,
            ) {
                let lo = code_balance(unsplit(n, kappa)).unwrap();
                let hi = code_balance(unsplit(n, kappa + extra)).unwrap();
                prop_assert!(hi > lo);
            }

            #[test]
            fn split_costs_eight_over_nnzr(n in 1.0f64..500.0, kappa in 0.0f64..10.0) {
                let u = code_balance(unsplit(n, kappa)).unwrap();
                let s = code_balance(split(n, kappa)).unwrap();
                let diff = s - u;
                prop_assert!((diff - 8.0 / n).abs() < 1e-12 * (1.0 + 8.0 / n));
                prop_assert!(s >= u);
            }

            #[test]
            fn kappa_round_trip_is_identity(
                n in 1.0f64..500.0,
                kappa in 0.0f64..10.0,
                bw in 1.0f64..100.0,
                split_flag in proptest::bool::ANY,
            ) {
                let inputs = BalanceInputs { n_nzr: n, kappa, split: split_flag };
                let gflops = max_performance(code_balance(inputs).unwrap(), bw).unwrap();
                let back = estimate_kappa(gflops, bw, n, split_flag).unwrap();
                prop_assert!((back - kappa).abs() < 1e-9 * (1.0 + kappa));
            }

            #[test]
            fn integer_extra_traversals(m in 0u32..12, n in 1.0f64..500.0) {
                let kappa = 8.0 / n * m as f64;
                let count = b_load_count(kappa, n);
                prop_assert!((count - (1.0 + m as f64)).abs() < 1e-9);
            }
        }
    }
}
