mod common;

use protoseg::analysis::{per_layer_outcomes, AnalysisParams};
use protoseg::episodes::{generate_synthetic, SynthConfig};
use protoseg::matching::{segment_episode_detailed, MatchMode};
use protoseg::prototypes::{build_prototypes, PrototypeParams};
use protoseg::{
    segment_episode, validate_episode, ClassMask, Episode, Error, FeatureMap, Layer, LayerStack,
    RegisterTokens, SegmentParams,
};

fn noiseless(n_way: usize, k_shot: usize, seed: u64) -> Episode {
    generate_synthetic(&SynthConfig {
        n_way,
        k_shot,
        layers: 3,
        peak_layer: 3,
        off_peak_sigma: 0.0,
        seed,
        ..Default::default()
    })
    .unwrap()
}

fn with_mode(mode: MatchMode) -> SegmentParams {
    SegmentParams {
        mode,
        ..Default::default()
    }
}

#[test]
fn noiseless_fixture_is_recovered_at_every_layer() {
    for seed in 0..4 {
        let ep = noiseless(3, 2, seed);
        for layer in 1..=3 {
            let pred = segment_episode(&ep, layer, &SegmentParams::default()).unwrap();
            assert_eq!(
                &pred,
                ep.query_gt.as_ref().unwrap(),
                "seed {seed} layer {layer}"
            );
        }
    }
}

#[test]
fn combined_matches_prototype_only_without_noise() {
    for seed in 0..5 {
        let ep = noiseless(4, 1, seed);
        let a = segment_episode(&ep, 3, &with_mode(MatchMode::Combined)).unwrap();
        let b = segment_episode(&ep, 3, &with_mode(MatchMode::PrototypeOnly)).unwrap();
        assert_eq!(a, b);
    }
}

#[test]
fn duplicated_supports_match_one_shot() {
    let cfg = SynthConfig {
        noise_sigma: 0.3,
        layers: 1,
        peak_layer: 1,
        seed: 9,
        ..Default::default()
    };
    let one = generate_synthetic(&cfg).unwrap();
    let mut five = one.clone();
    five.supports = vec![one.supports[0].clone(); 5];
    let five = validate_episode(five).unwrap();
    let params = SegmentParams::default();
    assert_eq!(
        segment_episode(&one, 1, &params).unwrap(),
        segment_episode(&five, 1, &params).unwrap()
    );
}

#[test]
fn support_order_does_not_change_prediction() {
    let cfg = SynthConfig {
        noise_sigma: 0.4,
        k_shot: 4,
        layers: 1,
        peak_layer: 1,
        seed: 2,
        ..Default::default()
    };
    let ep = generate_synthetic(&cfg).unwrap();
    let mut rev = ep.clone();
    rev.supports.reverse();
    rev.supports.swap(0, 2);
    let params = SegmentParams::default();
    assert_eq!(
        segment_episode(&ep, 1, &params).unwrap(),
        segment_episode(&rev, 1, &params).unwrap()
    );
}

/// One support whose features are a fixed direction per class.
fn tiny_episode(labels: Vec<u8>, h: usize, w: usize) -> Episode {
    let d = 4;
    let mut data = Vec::new();
    for (i, &l) in labels.iter().enumerate() {
        let mut v = vec![0.1 * (i % 3) as f32; d];
        v[l as usize] += 1.0;
        data.extend(v);
    }
    let fm = FeatureMap::new(h, w, d, data).unwrap();
    let stack = LayerStack::new(
        vec![Layer::new(fm, RegisterTokens::empty(d).unwrap()).unwrap()],
        (h, w),
    )
    .unwrap();
    let mask = ClassMask::new(h, w, labels).unwrap();
    validate_episode(Episode {
        supports: vec![(stack.clone(), mask.clone())],
        query: stack,
        query_gt: Some(mask),
        class_list: vec![1],
    })
    .unwrap()
}

#[test]
fn prototype_sets_cover_background_and_cap_cluster_count() {
    let mut labels = vec![0u8; 16];
    labels[..8].fill(1);
    let ep = tiny_episode(labels, 4, 4);
    let params = PrototypeParams {
        n_clusters: 1,
        ..Default::default()
    };
    let sets = build_prototypes(&ep, 1, &params).unwrap();
    assert_eq!(sets.keys().copied().collect::<Vec<_>>(), vec![0, 1]);

    let mut labels = vec![0u8; 16];
    labels[..3].fill(1);
    let ep = tiny_episode(labels, 4, 4);
    let sets = build_prototypes(&ep, 1, &PrototypeParams::default()).unwrap();
    assert!(sets[&1].prototypes.len() <= 3);
    for set in sets.values() {
        for p in &set.prototypes {
            let n: f64 = p.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-6);
        }
    }
    assert_eq!(
        sets,
        build_prototypes(&ep, 1, &PrototypeParams::default()).unwrap()
    );
}

#[test]
fn score_maps_are_in_range() {
    let cfg = SynthConfig {
        noise_sigma: 0.5,
        layers: 1,
        peak_layer: 1,
        ..Default::default()
    };
    let ep = generate_synthetic(&cfg).unwrap();
    let seg = segment_episode_detailed(&ep, 1, &SegmentParams::default()).unwrap();
    for map in seg.scores.values() {
        assert!(map.values.iter().all(|v| (-1.0..=1.0).contains(v)));
        assert_eq!(map.size(), ep.query.image_size());
    }
}

#[test]
fn one_outcome_per_layer_and_identical_layers_agree() {
    let ep = noiseless(2, 1, 4);
    let params = AnalysisParams::for_episode(&ep, SegmentParams::default());
    let outcomes = per_layer_outcomes(&ep, &params).unwrap();
    assert_eq!(outcomes.len(), 3);
    assert!(outcomes
        .windows(2)
        .all(|w| w[0].prediction == w[1].prediction));

    let twelve = generate_synthetic(&SynthConfig {
        noise_sigma: 0.1,
        ..Default::default()
    })
    .unwrap();
    let params = AnalysisParams::for_episode(&twelve, SegmentParams::default());
    assert_eq!(per_layer_outcomes(&twelve, &params).unwrap().len(), 12);
}

#[test]
fn layer_out_of_range_is_rejected() {
    let ep = noiseless(1, 1, 0);
    for layer in [0, 4] {
        let err = segment_episode(&ep, layer, &SegmentParams::default()).unwrap_err();
        assert!(matches!(err, Error::InvalidLayer { .. }), "{err}");
    }
}
