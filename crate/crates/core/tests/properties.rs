mod common;

use proptest::prelude::*;

use common::{brute_nms, brute_soi};
use fewshot_tad::diffmath::{sgd_step, smooth_l1, softmax_cross_entropy, ParamStore, Tensor};
use fewshot_tad::engine::{detect, EpisodeData, EvalConfig, Model, TrainConfig};
use fewshot_tad::episodes::{EpisodeSampler, Phase};
use fewshot_tad::proposals::{nms_indices, soi_pool, tiou, Segment};
use fewshot_tad::splits::random_split;
use fewshot_tad::synthcorpus::{generate_corpus, CorpusConfig};

fn segments(raw: &[(f64, f64)]) -> Vec<Segment> {
    raw.iter()
        .map(|&(s, l)| Segment::new(s, s + l).unwrap())
        .collect()
}

fn small_corpus(seed: u64) -> CorpusConfig {
    CorpusConfig {
        num_classes: 12,
        exemplars_per_class: 2,
        sequences_per_class: 2,
        ..CorpusConfig::with_seed(seed)
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn cross_entropy_is_shift_invariant_and_positive(
        logits in prop::collection::vec(-20.0f64..20.0, 2..8),
        shift in -50.0f64..50.0,
        pick in 0usize..8,
    ) {
        let label = pick % logits.len();
        let a = softmax_cross_entropy(&logits, label).unwrap();
        let shifted: Vec<f64> = logits.iter().map(|v| v + shift).collect();
        let b = softmax_cross_entropy(&shifted, label).unwrap();
        prop_assert!(a.loss > 0.0);
        prop_assert!((a.loss - b.loss).abs() < 1e-9);
        for (x, y) in a.grad.iter().zip(&b.grad) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn smooth_l1_gradient_is_bounded_by_one(
        pairs in prop::collection::vec((-1e3f64..1e3, -1e3f64..1e3), 1..16),
    ) {
        let (pred, target): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let l = smooth_l1(&pred, &target).unwrap();
        prop_assert!(l.loss >= 0.0);
        prop_assert!(l.grad.iter().all(|g| g.abs() <= 1.0));
    }

    #[test]
    fn sgd_with_zero_rate_is_identity(
        values in prop::collection::vec(-5.0f64..5.0, 1..12),
        grads in prop::collection::vec(-5.0f64..5.0, 12),
    ) {
        let mut p = ParamStore::new();
        p.insert("w", Tensor::vector(values.clone()).unwrap());
        p.accumulate("w", &grads[..values.len()]);
        let before = p.clone();
        sgd_step(&mut p, 0.0);
        prop_assert_eq!(p.value("w"), before.value("w"));
    }

    #[test]
    fn nms_keeps_a_non_overlapping_subset_matching_the_reference(
        raw in prop::collection::vec((0.0f64..60.0, 1.0f64..20.0, 0.0f64..1.0), 0..32),
        threshold in 0.05f64..1.0,
    ) {
        let segs = segments(&raw.iter().map(|&(s, l, _)| (s, l)).collect::<Vec<_>>());
        let scores: Vec<f64> = raw.iter().map(|r| r.2).collect();
        let kept = nms_indices(&segs, &scores, threshold);
        prop_assert!(kept.iter().all(|&i| i < segs.len()));
        let mut unique = kept.clone();
        unique.sort_unstable();
        unique.dedup();
        prop_assert_eq!(unique.len(), kept.len());
        for (a, &i) in kept.iter().enumerate() {
            for &j in &kept[a + 1..] {
                prop_assert!(tiou(&segs[i], &segs[j]) <= threshold);
            }
        }
        prop_assert_eq!(kept, brute_nms(&segs, &scores, threshold));
    }

    #[test]
    fn soi_pool_matches_per_bin_scan(
        rows in 1usize..20,
        d in 1usize..4,
        seed_values in prop::collection::vec(-1.0f64..1.0, 80),
        start in 0.0f64..20.0,
        length in 0.5f64..20.0,
        bins in 1usize..5,
    ) {
        let values: Vec<f64> = (0..rows * d).map(|i| seed_values[i % 80] + i as f64 * 1e-3).collect();
        let map = Tensor::matrix(rows, d, values).unwrap();
        let seg = Segment { start, end: start + length };
        let pooled = soi_pool(&map, &seg, bins).unwrap();
        let want = brute_soi(&map, &seg, bins);
        prop_assert_eq!(pooled.output.values(), want.as_slice());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn corpus_is_a_pure_function_of_its_config(seed in 0u64..1000) {
        let cfg = small_corpus(seed);
        let a = generate_corpus(&cfg).unwrap();
        let b = generate_corpus(&cfg).unwrap();
        prop_assert_eq!(&a, &b);
        let limit = cfg.sequence_length as f64;
        for seq in &a.sequences {
            for g in &seq.segments {
                prop_assert!(0.0 <= g.start && g.start < g.end && g.end <= limit);
            }
        }
    }

    #[test]
    fn episodes_are_pure_functions_of_seed_and_index(seed in 0u64..1000, index in 0u64..10_000) {
        let corpus = generate_corpus(&small_corpus(seed)).unwrap();
        let split = random_split(&corpus.catalog, 6, seed).unwrap();
        let sampler = EpisodeSampler::new(&corpus, &split, Phase::Test, 5, 2).unwrap();
        let a = sampler.episode(seed, index).unwrap();
        let b = sampler.episode(seed, index).unwrap();
        prop_assert_eq!(&a.classes, &b.classes);
        prop_assert_eq!(a.query_index, b.query_index);
        prop_assert!(a.support.iter().zip(&b.support).all(|(x, y)| std::ptr::eq(*x, *y)));
        prop_assert!(a.query.classes().iter().any(|c| a.classes.contains(c)));
        prop_assert_eq!(a.support.len(), 10);
    }
}

#[test]
fn identical_five_shot_support_detects_like_one_shot() {
    let corpus = generate_corpus(&CorpusConfig::with_seed(21)).unwrap();
    let split = random_split(&corpus.catalog, 20, 21).unwrap();
    let model = Model::init(
        &TrainConfig {
            seed: 21,
            ..TrainConfig::default()
        },
        corpus.feature_dim(),
    )
    .unwrap();
    let sampler = EpisodeSampler::new(&corpus, &split, Phase::Test, 5, 1).unwrap();
    let eval = EvalConfig {
        proposal_threshold: 0.0,
        similarity_threshold: -1.0,
        ..EvalConfig::default()
    };
    for i in 0..10 {
        let one = EpisodeData::from_episode(&sampler.episode(5, i).unwrap()).unwrap();
        let d = corpus.feature_dim();
        let five = EpisodeData {
            support_raw: one
                .support_raw
                .chunks(d)
                .flat_map(|row| std::iter::repeat_n(row, 5).flatten().copied())
                .collect(),
            support_labels: one
                .support_labels
                .iter()
                .flat_map(|&l| std::iter::repeat_n(l, 5))
                .collect(),
            ..one.clone()
        };
        let a = detect(&model.params, &model.config, &one, &eval).unwrap();
        let b = detect(&model.params, &model.config, &five, &eval).unwrap();
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            assert_eq!((x.start, x.end, x.label), (y.start, y.end, y.label));
            assert_eq!(x.proposal_score, y.proposal_score);
            assert!((x.similarity - y.similarity).abs() < 1e-12);
        }
        assert_eq!(
            a,
            detect(&model.params, &model.config, &one, &eval).unwrap()
        );
    }
}
