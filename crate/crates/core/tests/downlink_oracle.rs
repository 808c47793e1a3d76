mod common;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{hybrid_oracle, random_records};
use tinysat_core::downlink::{simulate, DownlinkScenario, LinkBudget};
use tinysat_core::exec::InferenceRecord;

const UHF: LinkBudget = LinkBudget {
    data_rate_bps: 9_600.0,
    passes_per_day: 4,
    pass_duration_s: 600.0,
};

fn scenario(onboard: &[InferenceRecord], ground: Option<&[InferenceRecord]>, threshold: f64) -> DownlinkScenario {
    DownlinkScenario {
        num_samples: onboard.len(),
        bytes_per_sample: 3072.0,
        threshold,
        onboard_records: onboard.to_vec(),
        ground_records: ground.map(<[_]>::to_vec),
    }
}

#[test]
fn hybrid_accuracy_matches_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for _ in 0..200 {
        let onboard = random_records(&mut rng, 100, 0.8);
        let ground = {
            let p = rng.random_range(0.5..1.0);
            let mut g = random_records(&mut rng, 100, p);
            g.shuffle(&mut rng);
            g
        };
        let threshold = rng.random_range(1..=20) as f64 / 20.0;
        let r = simulate(&scenario(&onboard, Some(&ground), threshold), &UHF).unwrap();
        assert_eq!(r.hybrid_accuracy, Some(hybrid_oracle(&onboard, &ground, threshold)));
        let below = onboard.iter().filter(|x| x.confidence < threshold).count();
        assert_eq!(r.transmitted_count, below);
        assert_eq!(r.transmitted_volume_bytes, below as f64 * 3072.0);
        assert!((0.0..=100.0).contains(&r.reduction_pct));
    }
}

#[test]
fn transmitted_count_grows_with_the_threshold() {
    let mut rng = ChaCha8Rng::seed_from_u64(32);
    for _ in 0..50 {
        let onboard = random_records(&mut rng, 100, 0.7);
        let mut last = 0;
        for k in 1..=20 {
            let r = simulate(&scenario(&onboard, None, k as f64 / 20.0), &UHF).unwrap();
            assert!(r.transmitted_count >= last);
            last = r.transmitted_count;
        }
        assert_eq!(last, onboard.iter().filter(|x| x.confidence < 1.0).count());
    }
}

#[test]
fn better_ground_model_never_lowers_accuracy() {
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    for _ in 0..100 {
        let onboard = random_records(&mut rng, 100, 0.6);
        // ground model is right wherever onboard is, and on some others
        let ground: Vec<InferenceRecord> = onboard
            .iter()
            .map(|r| {
                let fix = r.correct || rng.random_bool(0.5);
                let predicted = if fix { r.true_label } else { r.predicted_class };
                InferenceRecord::new(r.sample_id.clone(), predicted, 0.9, r.true_label)
            })
            .collect();
        let r = simulate(&scenario(&onboard, Some(&ground), 0.8), &UHF).unwrap();
        assert!(r.hybrid_accuracy.unwrap() >= r.onboard_accuracy);
    }
}

#[test]
fn record_order_does_not_matter() {
    let mut rng = ChaCha8Rng::seed_from_u64(34);
    let onboard = random_records(&mut rng, 100, 0.8);
    let ground = random_records(&mut rng, 100, 0.9);
    let base = simulate(&scenario(&onboard, Some(&ground), 0.6), &UHF).unwrap();
    for _ in 0..10 {
        let (mut a, mut b) = (onboard.clone(), ground.clone());
        a.shuffle(&mut rng);
        b.shuffle(&mut rng);
        assert_eq!(simulate(&scenario(&a, Some(&b), 0.6), &UHF).unwrap(), base);
    }
}
