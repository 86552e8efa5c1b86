//! Property tests for the algebraic invariants.

use mosaic_core::invariance::{Invariance, InvarianceKind};
use mosaic_core::mosaic::{default_weights, mosaic_test, Statistic, StatWeights};
use mosaic_core::panel::{Clustering, PanelData};
use nalgebra::DMatrix;
use proptest::prelude::*;

fn kind_strategy() -> impl Strategy<Value = InvarianceKind> {
    prop_oneof![
        Just(InvarianceKind::Symmetry),
        Just(InvarianceKind::TimeReversal),
        Just(InvarianceKind::LocalExchangeability),
    ]
}

proptest! {
    #[test]
    fn apply_twice_is_identity(
        t in 1usize..9,
        kind in kind_strategy(),
        rows in 1usize..5,
        seed in 0u64..1000,
    ) {
        let inv = Invariance::new(kind, t).unwrap();
        let a = DMatrix::from_fn(rows, t, |i, j| {
            ((seed as f64 + 1.0) * (i as f64 + 1.5) * (j as f64 + 2.5)).sin()
        });
        let twice = inv.apply(&inv.apply(&a).unwrap()).unwrap();
        prop_assert!((&twice - &a).abs().max() < 1e-12);
    }

    #[test]
    fn transform_is_self_adjoint(
        t in 1usize..9,
        kind in kind_strategy(),
        rows in 1usize..5,
        seed in 0u64..1000,
    ) {
        let inv = Invariance::new(kind, t).unwrap();
        let a = DMatrix::from_fn(rows, t, |i, j| {
            ((seed as f64 + 2.0) * (i as f64 + 0.5) + j as f64).cos()
        });
        let b = DMatrix::from_fn(rows, t, |i, j| {
            ((seed as f64 + 3.0) * (j as f64 + 0.5) - i as f64).sin()
        });
        let lhs = inv.apply(&a).unwrap().dot(&b);
        let rhs = a.dot(&inv.apply(&b).unwrap());
        prop_assert!((lhs - rhs).abs() <= 1e-10 * lhs.abs().max(1.0));
    }

    #[test]
    fn default_weights_normalize_every_pair(assignment in proptest::collection::vec(0usize..4, 8..20)) {
        // Make the labels dense so the partition is valid.
        let mut labels: Vec<usize> = assignment.clone();
        let mut seen: Vec<usize> = labels.clone();
        seen.sort_unstable();
        seen.dedup();
        prop_assume!(seen.len() >= 2);
        for l in labels.iter_mut() {
            *l = seen.iter().position(|s| s == l).unwrap();
        }
        let clustering = Clustering::new(labels).unwrap();
        let w = default_weights(&clustering);
        // The validating constructor re-checks symmetry, the zero diagonal
        // blocks, and the unit normalization of every cluster pair.
        prop_assert!(StatWeights::new(w.matrix().clone(), clustering).is_ok());
    }

    #[test]
    fn p_value_respects_its_bounds(seed in 0u64..200, r in 1usize..40) {
        let n = 6;
        let t = 4;
        let y = DMatrix::from_fn(n, t, |i, j| {
            ((seed as f64 + 1.0) * (i * t + j + 1) as f64).sin() * 3.0
        });
        let panel = PanelData::new(
            y,
            vec![],
            (0..n).map(|i| format!("u{i}")).collect(),
            (1..=t).map(|j| j.to_string()).collect(),
            Clustering::contiguous(n, 3).unwrap(),
        )
        .unwrap();
        let inv = Invariance::local_exchangeability(t).unwrap();
        let stat = Statistic::quadratic(default_weights(panel.clustering()));
        let result = mosaic_test(&panel, &inv, &stat, r, seed).unwrap();
        let floor = 1.0 / (r as f64 + 1.0);
        prop_assert!(result.p_value >= floor - 1e-15);
        prop_assert!(result.p_value <= 1.0 + 1e-15);
    }
}
