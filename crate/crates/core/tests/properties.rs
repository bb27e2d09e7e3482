//! Randomized invariants over the numeric core.

use proptest::prelude::*;

use stochastic_gaze::grid::{
    entropy, gumbel_softmax_sample, kl_divergence, normalize, GridDist, LogitGrid,
};
use stochastic_gaze::prior::{build_prior, GazeKind, GazeRecord};
use stochastic_gaze::{GridShape, PriorConfig};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn small_shape() -> impl Strategy<Value = GridShape> {
    (1usize..3, 1usize..5, 1usize..5)
        .prop_map(|(t, m, n)| GridShape::new(t, m, n).unwrap())
}

fn logits_for(shape: GridShape) -> impl Strategy<Value = LogitGrid> {
    proptest::collection::vec(-20.0..20.0f64, shape.cells())
        .prop_map(move |values| LogitGrid { shape, values })
}

fn dist_for(shape: GridShape) -> impl Strategy<Value = GridDist> {
    proptest::collection::vec(1e-6..1.0f64, shape.cells())
        .prop_map(move |mass| GridDist::from_mass(shape, mass).unwrap())
}

proptest! {
    #[test]
    fn softmax_is_shift_invariant(
        (logits, offset) in small_shape()
            .prop_flat_map(|s| (logits_for(s), -50.0..50.0f64))
    ) {
        let base = normalize(&logits).unwrap();
        let shifted = LogitGrid {
            shape: logits.shape,
            values: logits.values.iter().map(|v| v + offset).collect(),
        };
        let moved = normalize(&shifted).unwrap();
        for (a, b) in base.probs.iter().zip(&moved.probs) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn normalized_logits_give_valid_distribution(
        logits in small_shape().prop_flat_map(logits_for)
    ) {
        let d = normalize(&logits).unwrap();
        prop_assert!(d.is_valid());
        let h = entropy(&d);
        prop_assert!(h >= -1e-12);
        prop_assert!(h <= (d.shape.cells() as f64).ln() + 1e-12);
    }

    #[test]
    fn kl_is_nonnegative_and_zero_on_self(
        (q, p) in small_shape().prop_flat_map(|s| (dist_for(s), dist_for(s)))
    ) {
        prop_assert!(kl_divergence(&q, &p).unwrap() >= 0.0);
        prop_assert!(kl_divergence(&q, &q).unwrap().abs() < 1e-12);
    }

    #[test]
    fn gumbel_samples_are_valid_distributions(
        (logits, tau, seed) in small_shape()
            .prop_flat_map(|s| (logits_for(s), 0.05..10.0f64, any::<u64>()))
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sample = gumbel_softmax_sample(&logits, tau, &mut rng).unwrap();
        prop_assert!(sample.is_valid());
    }

    #[test]
    fn priors_are_valid_distributions(
        (shape, records) in small_shape().prop_flat_map(|s| {
            let record = (0usize..40, 0usize..4, 0.0..1.0f64, 0.0..1.0f64).prop_map(
                |(frame, kind, u, v)| match kind {
                    0 => GazeRecord::fixation(frame, u, v),
                    1 => GazeRecord {
                        frame_index: frame,
                        kind: GazeKind::Saccade,
                        position: Some((u, v)),
                    },
                    2 => GazeRecord {
                        frame_index: frame,
                        kind: GazeKind::Unknown,
                        position: Some((u, v)),
                    },
                    _ => GazeRecord {
                        frame_index: frame,
                        kind: GazeKind::Untracked,
                        position: None,
                    },
                },
            );
            (Just(s), proptest::collection::vec(record, 0..12))
        })
    ) {
        let prior = build_prior(&records, &PriorConfig::default(), shape).unwrap();
        prop_assert!(prior.is_valid());
    }
}
