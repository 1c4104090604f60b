mod oracles;

use std::collections::BTreeSet;

use famf_core::data::{generate, sample_frame_indices, sample_frames, stratified_split, FrameQuality, SynthSpec};
use famf_core::eval::{average_precision, map_at_100, score_tables, ScoreTable};
use oracles::Rng64;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Random `(id, score)` list with coarse scores so ties are common.
fn random_instance(rng: &mut Rng64) -> (Vec<(u64, f64)>, BTreeSet<u64>) {
    let n = rng.int(1, 20);
    let items: Vec<(u64, f64)> = (0..n).map(|i| (i as u64 * 3 + 1, rng.int(0, 6) as f64 * 0.5)).collect();
    let m = rng.int(0, 5.min(n));
    let mut ids: Vec<u64> = items.iter().map(|p| p.0).collect();
    for i in (1..ids.len()).rev() {
        ids.swap(i, rng.int(0, i));
    }
    (items, ids[..m].iter().copied().collect())
}

fn ap_via_table(items: &[(u64, f64)], positives: &BTreeSet<u64>, cutoff: usize) -> Option<f64> {
    ScoreTable::new(0, items.to_vec(), positives.clone(), cutoff).average_precision()
}

fn ap_via_oracle(items: &[(u64, f64)], positives: &BTreeSet<u64>, cutoff: usize) -> Option<f64> {
    let ranked = oracles::brute_force_rank(items);
    let rel: Vec<bool> = ranked.iter().map(|id| positives.contains(id)).collect();
    oracles::average_precision(&rel, positives.len(), cutoff)
}

#[test]
fn average_precision_equals_prefix_enumeration() {
    for seed in 0..30 {
        let mut rng = Rng64::new(seed);
        let (items, positives) = random_instance(&mut rng);
        for cutoff in [100, 5] {
            assert_eq!(
                ap_via_table(&items, &positives, cutoff),
                ap_via_oracle(&items, &positives, cutoff),
                "seed {seed} cutoff {cutoff}"
            );
        }
    }
}

#[test]
fn ranking_matches_brute_force_selection() {
    for seed in 0..30 {
        let (items, positives) = random_instance(&mut Rng64::new(100 + seed));
        let table = ScoreTable::new(0, items.clone(), positives, 100);
        let ids: Vec<u64> = table.ranked.iter().map(|p| p.0).collect();
        assert_eq!(ids, oracles::brute_force_rank(&items));
    }
}

#[test]
fn monotone_score_transforms_keep_average_precision() {
    let transforms: [fn(f64) -> f64; 3] = [|s| 3.0 * s + 7.0, f64::exp, |s| s * s * s + s];
    for seed in 0..30 {
        let (items, positives) = random_instance(&mut Rng64::new(200 + seed));
        let base = ap_via_table(&items, &positives, 100);
        for f in transforms {
            let moved: Vec<(u64, f64)> = items.iter().map(|(id, s)| (*id, f(*s))).collect();
            assert_eq!(ap_via_table(&moved, &positives, 100), base, "seed {seed}");
        }
    }
}

#[test]
fn hand_worked_examples() {
    let set = |v: &[u64]| v.iter().copied().collect::<BTreeSet<u64>>();
    // Positives at ranks 1 and 3 of 4: (1/1 + 2/3) / 2.
    let ap = average_precision(&[10, 11, 12, 13], &set(&[10, 12]), 2, 100).unwrap();
    assert!((ap - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-15);
    // A positive that never shows up still counts in the denominator.
    let ap = average_precision(&[10, 11], &set(&[10, 99]), 2, 100).unwrap();
    assert_eq!(ap, 0.5);
}

proptest! {
    #[test]
    fn average_precision_lies_in_unit_interval(
        scores in prop::collection::vec(0u8..8, 1..30),
        mask in prop::collection::vec(any::<bool>(), 30),
    ) {
        let items: Vec<(u64, f64)> = scores.iter().enumerate().map(|(i, s)| (i as u64, *s as f64)).collect();
        let positives: BTreeSet<u64> = items.iter().filter(|(i, _)| mask[*i as usize]).map(|p| p.0).collect();
        match ap_via_table(&items, &positives, 100) {
            None => prop_assert!(positives.is_empty()),
            Some(ap) => {
                prop_assert!((0.0..=1.0).contains(&ap));
                prop_assert_eq!(Some(ap), ap_via_oracle(&items, &positives, 100));
            }
        }
    }

    #[test]
    fn positives_ranked_first_score_one(n in 1usize..25, m in 1usize..6) {
        let m = m.min(n);
        let items: Vec<(u64, f64)> = (0..n).map(|i| (i as u64, (n - i) as f64)).collect();
        let positives: BTreeSet<u64> = (0..m as u64).collect();
        prop_assert_eq!(ap_via_table(&items, &positives, 100), Some(1.0));
    }

    #[test]
    fn sampled_indices_are_in_range_and_cover_short_sets(available in 1usize..40, target in 1usize..40, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let idx = sample_frame_indices(available, target, &mut rng).unwrap();
        prop_assert_eq!(idx.len(), target);
        prop_assert!(idx.iter().all(|i| *i < available));
        let distinct: BTreeSet<usize> = idx.iter().copied().collect();
        prop_assert_eq!(distinct.len(), available.min(target));
    }
}

#[test]
fn enough_frames_are_sampled_without_replacement() {
    let mut picks = BTreeSet::new();
    for seed in 0..50 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let idx = sample_frame_indices(40, 24, &mut rng).unwrap();
        let distinct: BTreeSet<usize> = idx.iter().copied().collect();
        assert_eq!(distinct.len(), 24, "seed {seed}");
        picks.insert(idx);
    }
    // Different seeds pick different subsets.
    assert!(picks.len() > 45);
}

#[test]
fn short_episodes_use_every_frame() {
    for seed in 0..50 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let idx = sample_frame_indices(5, 24, &mut rng).unwrap();
        let distinct: BTreeSet<usize> = idx.iter().copied().collect();
        assert_eq!(distinct, (0..5).collect());
    }
    assert!(sample_frame_indices(0, 24, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
}

#[test]
fn frame_sampling_is_seeded() {
    let data = generate(&SynthSpec {
        num_classes: 2,
        episodes_per_class: 1,
        dim: 4,
        ..SynthSpec::default()
    })
    .unwrap();
    let face = &data.episodes[0].face;
    assert_eq!(sample_frames(face, 24, 5).unwrap(), sample_frames(face, 24, 5).unwrap());
}

#[test]
fn generation_is_a_pure_function_of_the_spec() {
    let spec = SynthSpec {
        num_classes: 6,
        episodes_per_class: 3,
        dim: 8,
        seed: 11,
        ..SynthSpec::default()
    };
    let a = generate(&spec).unwrap();
    assert_eq!(a, generate(&spec).unwrap());
    assert_ne!(a, generate(&SynthSpec { seed: 12, ..spec.clone() }).unwrap());
    let ids: BTreeSet<u64> = a.episodes.iter().map(|e| e.id).collect();
    assert_eq!(ids.len(), a.len());
    for e in &a.episodes {
        assert!((spec.min_frames..=spec.max_frames).contains(&e.frames()));
        for f in [&e.audio, &e.body, &e.text].into_iter().flatten() {
            let n: f64 = f.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-12);
        }
    }
}

#[test]
fn corrupt_fraction_is_respected() {
    let data = generate(&SynthSpec {
        num_classes: 10,
        episodes_per_class: 10,
        dim: 4,
        corrupt_fraction: 0.3,
        ..SynthSpec::default()
    })
    .unwrap();
    let flags: Vec<FrameQuality> = data.episodes.iter().flat_map(|e| e.quality.clone().unwrap()).collect();
    let corrupt = flags.iter().filter(|q| **q == FrameQuality::Corrupt).count() as f64 / flags.len() as f64;
    assert!((corrupt - 0.3).abs() < 0.05, "{corrupt}");
}

#[test]
fn split_is_disjoint_and_stratified() {
    let data = generate(&SynthSpec {
        num_classes: 7,
        episodes_per_class: 10,
        dim: 4,
        ..SynthSpec::default()
    })
    .unwrap();
    let (train, val) = stratified_split(&data, 0.2, 3).unwrap();
    let t: BTreeSet<usize> = train.iter().copied().collect();
    assert!(val.iter().all(|v| !t.contains(v)));
    assert_eq!(train.len() + val.len(), data.len());
    for class in 0..7 {
        let n = val.iter().filter(|&&i| data.episodes[i].label == class).count();
        assert_eq!(n, 2, "class {class}");
    }
    assert_eq!(stratified_split(&data, 0.2, 3).unwrap(), (train, val));
}

/// With no corruption the class centroid of mean face features retrieves
/// held-out episodes almost perfectly, which bounds what a learned model
/// can reach on this data.
#[test]
fn clean_data_centroid_oracle_is_near_perfect() {
    let data = generate(&SynthSpec {
        corrupt_fraction: 0.0,
        ..SynthSpec::default()
    })
    .unwrap();
    let (train, val) = stratified_split(&data, 0.2, 0).unwrap();
    let d = data.dim;
    let mean_face = |i: usize| -> Vec<f64> {
        let f = &data.episodes[i].face;
        (0..d).map(|c| (0..f.rows()).map(|r| f.get(r, c)).sum::<f64>() / f.rows() as f64).collect()
    };
    let mut centroids = vec![vec![0.0; d]; data.num_classes];
    for &i in &train {
        for (c, v) in centroids[data.episodes[i].label].iter_mut().zip(mean_face(i)) {
            *c += v;
        }
    }
    let cosine = |a: &[f64], b: &[f64]| {
        let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        dot / (na * nb)
    };
    let ids: Vec<u64> = val.iter().map(|&i| data.episodes[i].id).collect();
    let labels: Vec<usize> = val.iter().map(|&i| data.episodes[i].label).collect();
    let scores: Vec<Vec<f64>> = val
        .iter()
        .map(|&i| {
            let m = mean_face(i);
            centroids.iter().map(|c| cosine(&m, c)).collect()
        })
        .collect();
    let map = map_at_100(&score_tables(&ids, &labels, &scores, data.num_classes, 100)).unwrap();
    assert!(map >= 0.99, "centroid mAP {map}");
}
