use proptest::collection::vec;
use proptest::prelude::*;

use sami_harness::export::Pca;
use sami_harness::stats::{mean_std, paired_t_test};
use sami_harness::sweep::SweepAxis;
use sami_harness::ExperimentConfig;

fn pairs() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (2usize..12).prop_flat_map(|n| (vec(-50.0f64..50.0, n), vec(-50.0f64..50.0, n)))
}

proptest! {
    #[test]
    fn t_test_is_antisymmetric_with_valid_p((a, b) in pairs()) {
        let ab = paired_t_test(&a, &b).unwrap();
        let ba = paired_t_test(&b, &a).unwrap();
        prop_assert!((0.0..=1.0).contains(&ab.p));
        prop_assert!((ab.p - ba.p).abs() < 1e-12);
        prop_assert!(ab.t == -ba.t || (ab.t - -ba.t).abs() < 1e-9 * ab.t.abs().max(1.0));
    }

    #[test]
    fn t_test_ignores_common_shift((a, b) in pairs(), shift in -100.0f64..100.0) {
        let base = paired_t_test(&a, &b).unwrap();
        let a2: Vec<f64> = a.iter().map(|x| x + shift).collect();
        let b2: Vec<f64> = b.iter().map(|x| x + shift).collect();
        let moved = paired_t_test(&a2, &b2).unwrap();
        prop_assert!((base.p - moved.p).abs() < 1e-6);
    }

    #[test]
    fn pca_eigenvalues_sum_to_total_variance(rows in vec(vec(-5.0f64..5.0, 6), 3..40)) {
        let pca = Pca::fit(&rows, 2).unwrap();
        let total: f64 = (0..6)
            .map(|j| {
                let col: Vec<f64> = rows.iter().map(|r| r[j]).collect();
                mean_std(&col).1.powi(2)
            })
            .sum();
        let eig: f64 = pca.eigenvalues.iter().sum();
        prop_assert!((total - eig).abs() < 1e-8 * total.max(1.0));
        prop_assert!(pca.eigenvalues.windows(2).all(|w| w[0] >= w[1]));
        for c in &pca.components {
            let norm: f64 = c.iter().map(|x| x * x).sum();
            prop_assert!((norm - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn sweep_values_land_in_config(k in 2usize..512, alpha in 0.0f64..10.0) {
        let base = ExperimentConfig::default();
        prop_assert_eq!(SweepAxis::K.apply(&base, k as f64).unwrap().contrastive.batch_size, k);
        prop_assert_eq!(SweepAxis::Alpha.apply(&base, alpha).unwrap().contrastive.alpha, alpha);
    }
}
