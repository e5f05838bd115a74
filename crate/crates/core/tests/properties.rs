//! Property tests for the structural invariants.

use aptmle::config::{CvFolds, Estimand, SapConfig, VarianceKind};
use aptmle::data::{scale_outcome, OutcomeScale, ScaleKind, TrialDataset, Unit};
use aptmle::learners::{LearnerKind, LearnerSpec};
use aptmle::tmle::{run_tmle, wald_inference};
use proptest::prelude::*;

fn dataset(arms: &[u8], outcomes: &[f64]) -> TrialDataset {
    let units: Vec<Unit> = arms
        .iter()
        .zip(outcomes)
        .enumerate()
        .map(|(i, (a, y))| Unit {
            id: format!("u{i}"),
            cluster_id: None,
            arm: *a,
            outcome: *y,
            covariates: vec![],
        })
        .collect();
    TrialDataset::new(units, vec![]).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn scale_round_trips_interior_outcomes(
        raw in proptest::collection::vec(0.02f64..0.98, 4..40),
        lower in -5.0f64..0.0,
        width in 0.5f64..10.0,
    ) {
        // Interior points: scaled strictly inside (0, 1), so the clip rule
        // never bites and the affine map inverts to within 1e-12.
        let outcomes: Vec<f64> = raw.iter().map(|v| lower + v * width).collect();
        let arms: Vec<u8> = (0..outcomes.len()).map(|i| (i % 2) as u8).collect();
        let data = dataset(&arms, &outcomes);
        let scaled = scale_outcome(&data, Some((lower, lower + width))).unwrap();
        for (orig, s) in data.units.iter().zip(&scaled.data.units) {
            let back = scaled.scale.to_natural(s.outcome);
            prop_assert!((back - orig.outcome).abs() < 1e-12);
        }
    }

    #[test]
    fn wald_interval_is_homogeneous(
        ic in proptest::collection::vec(-3.0f64..3.0, 4..50),
        scale in 0.1f64..10.0,
    ) {
        let n = ic.len();
        let scaled: Vec<f64> = ic.iter().map(|v| v * scale).collect();
        let (_, se1, ci1) = wald_inference(0.0, &ic, n, 0.05, false).unwrap();
        let (_, se2, ci2) = wald_inference(0.0, &scaled, n, 0.05, false).unwrap();
        prop_assert!((se2 - scale * se1).abs() <= 1e-12 * (1.0 + se2.abs()));
        prop_assert!((ci2.1 - scale * ci1.1).abs() <= 1e-10 * (1.0 + ci2.1.abs()));
    }

    #[test]
    fn binary_scale_is_identity(
        flips in proptest::collection::vec(proptest::bool::ANY, 8..40),
    ) {
        let arms: Vec<u8> = (0..flips.len()).map(|i| (i % 2) as u8).collect();
        let outcomes: Vec<f64> = flips.iter().map(|&b| f64::from(b)).collect();
        let data = dataset(&arms, &outcomes);
        let scaled = scale_outcome(&data, None).unwrap();
        prop_assert_eq!(scaled.scale.kind, ScaleKind::Binary);
        for (orig, s) in data.units.iter().zip(&scaled.data.units) {
            prop_assert_eq!(orig.outcome.to_bits(), s.outcome.to_bits());
        }
    }

    #[test]
    fn influence_curve_is_centered_on_random_trials(
        flips in proptest::collection::vec(proptest::bool::ANY, 12..60),
        seed in 0u64..1000,
    ) {
        let arms: Vec<u8> = (0..flips.len()).map(|i| (i % 2) as u8).collect();
        let outcomes: Vec<f64> = flips.iter().map(|&b| f64::from(b)).collect();
        // Skip degenerate arms (all 0s or all 1s in an arm is fine for the
        // estimator but makes the RR side meaningless).
        let data = dataset(&arms, &outcomes);
        let config = SapConfig {
            estimand: Estimand::Ate,
            or_candidates: vec![LearnerKind::Unadjusted],
            ps_candidates: vec![LearnerKind::Unadjusted],
            cv_folds: CvFolds::Auto,
            stratify_by_arm: true,
            variance: VarianceKind::Standard,
            seed,
            outcome_bounds: None,
            alpha: 0.05,
        };
        let scaled = scale_outcome(&data, None).unwrap();
        let est = run_tmle(
            &LearnerSpec::outcome(LearnerKind::Unadjusted),
            &LearnerSpec::pscore(LearnerKind::Unadjusted),
            &config,
            &scaled,
        ).unwrap();
        let mean = est.ic.iter().sum::<f64>() / est.ic.len() as f64;
        prop_assert!(mean.abs() < 1e-8, "mean IC {}", mean);
        prop_assert!(est.ci.0 <= est.effect && est.effect <= est.ci.1);
    }

    #[test]
    fn natural_ate_scales_with_the_outcome_range(
        raw in proptest::collection::vec(0.05f64..0.95, 10..40),
        width in 0.5f64..20.0,
    ) {
        let arms: Vec<u8> = (0..raw.len()).map(|i| (i % 2) as u8).collect();
        let outcomes: Vec<f64> = raw.iter().map(|v| v * width).collect();
        let data = dataset(&arms, &outcomes);
        let config = SapConfig {
            estimand: Estimand::Ate,
            or_candidates: vec![LearnerKind::Unadjusted],
            ps_candidates: vec![LearnerKind::Unadjusted],
            cv_folds: CvFolds::Auto,
            stratify_by_arm: true,
            variance: VarianceKind::Standard,
            seed: 1,
            outcome_bounds: Some((0.0, width)),
            alpha: 0.05,
        };
        let scaled = config.scale_dataset(&data).unwrap();
        let est = run_tmle(
            &LearnerSpec::outcome(LearnerKind::Unadjusted),
            &LearnerSpec::pscore(LearnerKind::Unadjusted),
            &config,
            &scaled,
        ).unwrap();
        // Recompute the scaled-outcome contrast and check the range factor.
        let scale = OutcomeScale { lower: 0.0, upper: width, kind: ScaleKind::BoundedContinuous };
        let mean = |arm: u8| {
            let v: Vec<f64> = scaled.data.units.iter()
                .filter(|u| u.arm == arm)
                .map(|u| u.outcome)
                .collect();
            v.iter().sum::<f64>() / v.len() as f64
        };
        let scaled_ate = mean(1) - mean(0);
        prop_assert!((est.effect - scale.range() * scaled_ate).abs() < 1e-10 * (1.0 + width));
    }
}
