use adm_core::episodes::{episode_stream, sample_episode};
use adm_core::model::{argmin, distance_scores, i2c_scores, predict_episode};
use adm_core::{
    branch_scores, classify, evaluate, fuse, fuse_batch, summarize_accuracies,
    synth_gaussian_dataset, CovarianceKind, DescriptorSet, Embedding, Episode, EpisodeSpec,
    EvalConfig, FusionHead, LabeledClass, LabeledDataset, Matrix, MeasureKind, Params, Scorer,
    Standardization, SynthSpec,
};

fn dataset(seed: u64, classes: usize, cov: CovarianceKind, sep: f64) -> LabeledDataset {
    synth_gaussian_dataset(
        &SynthSpec {
            classes,
            images_per_class: 8,
            descriptors_per_image: 12,
            dim: 4,
            separation: sep,
            covariance: cov,
        },
        seed,
    )
    .unwrap()
}

fn episode<'a>(ds: &'a LabeledDataset, spec: &EpisodeSpec, seed: u64, t: u64) -> Episode<'a> {
    let split: Vec<u32> = ds.class_ids().collect();
    sample_episode(ds, &split, spec, &mut episode_stream(seed, t)).unwrap()
}

#[test]
fn self_match_scores() {
    let ds = dataset(1, 5, CovarianceKind::RandomSpd, 1.0);
    let spec = EpisodeSpec::new(5, 1, 3).unwrap();
    let mut ep = episode(&ds, &spec, 2, 0);
    // replace the first query by class 2's support image
    ep.queries[0].set = ep.support[2][0];
    let k = 2;
    let s = branch_scores(&ep, &Embedding::Identity, 0.1, k, false).unwrap();
    assert_eq!(s.kl[0].len(), 5);
    assert_eq!(s.i2c[0].len(), 5);
    assert!(s.kl[0][2].abs() < 1e-12);
    let n = ep.support[2][0].len();
    // k = 2 but each descriptor only has one exact copy in the pool
    let k1 = branch_scores(&ep, &Embedding::Identity, 0.1, 1, false).unwrap();
    assert!((k1.i2c[0][2] - n as f64).abs() < 1e-12);
    assert!(s.i2c[0][2] <= (n * k) as f64 + 1e-12);
}

#[test]
fn identity_and_identity_matrix_agree() {
    let ds = dataset(3, 5, CovarianceKind::RandomSpd, 1.0);
    let ep = episode(&ds, &EpisodeSpec::new(5, 2, 2).unwrap(), 4, 1);
    let a = branch_scores(&ep, &Embedding::Identity, 0.1, 1, true).unwrap();
    let b = branch_scores(&ep, &Embedding::Linear(Matrix::identity(4)), 0.1, 1, true).unwrap();
    assert_eq!(a, b);
}

#[test]
fn fuse_example_and_classify() {
    let head = FusionHead::with_mode(Standardization::Off);
    let f = fuse(&[0.5, 2.0], &[3.0, 1.0], &head, None).unwrap();
    assert_eq!(f, vec![2.5, -1.0]);
    assert_eq!(classify(&f), 0);
    assert_eq!(classify(&[1.0, 1.0]), 0);
    assert_eq!(classify(&[7.0]), 0);
    assert!(fuse(&[0.5], &[1.0], &FusionHead::default(), None).is_err());
}

#[test]
fn branch_ablation_matches_standalone_measures() {
    let ds = dataset(5, 8, CovarianceKind::RandomSpd, 1.2);
    let spec = EpisodeSpec::new(5, 1, 4).unwrap();
    for mode in [Standardization::EpisodeStats, Standardization::Off] {
        for t in 0..100 {
            let ep = episode(&ds, &spec, 6, t);
            let scores = branch_scores(&ep, &Embedding::Identity, 0.1, 1, false).unwrap();
            let kl =
                distance_scores(&ep, &Embedding::Identity, 0.1, MeasureKind::Kl, false).unwrap();
            let i2c = i2c_scores(&ep, &Embedding::Identity, 1).unwrap();

            let mut head = FusionHead::with_mode(mode);
            head.w = [1.0, 0.0];
            let fused = fuse_batch(&scores, &head).unwrap();
            for (f, d) in fused.iter().zip(&kl) {
                assert_eq!(classify(f), argmin(d));
            }
            head.w = [0.0, 1.0];
            let fused = fuse_batch(&scores, &head).unwrap();
            for (f, s) in fused.iter().zip(&i2c) {
                assert_eq!(classify(f), classify(s));
            }
        }
    }
}

#[test]
fn scaling_w_keeps_decisions() {
    let ds = dataset(7, 6, CovarianceKind::DiagonalRandom, 1.0);
    let spec = EpisodeSpec::new(4, 2, 3).unwrap();
    for t in 0..30 {
        let ep = episode(&ds, &spec, 8, t);
        let scores = branch_scores(&ep, &Embedding::Identity, 0.1, 1, false).unwrap();
        let mut head = FusionHead::with_mode(Standardization::Off);
        head.w = [0.7, 1.3];
        let base: Vec<usize> = fuse_batch(&scores, &head)
            .unwrap()
            .iter()
            .map(|f| classify(f))
            .collect();
        for scale in [0.01, 3.0, 250.0] {
            head.w = [0.7 * scale, 1.3 * scale];
            let got: Vec<usize> = fuse_batch(&scores, &head)
                .unwrap()
                .iter()
                .map(|f| classify(f))
                .collect();
            assert_eq!(got, base);
        }
    }
}

#[test]
fn two_way_contrastive_is_antisymmetric() {
    let ds = dataset(9, 6, CovarianceKind::RandomSpd, 1.0);
    let spec = EpisodeSpec::new(2, 2, 3).unwrap();
    for t in 0..100 {
        let ep = episode(&ds, &spec, 10, t);
        let con = distance_scores(&ep, &Embedding::Identity, 0.1, MeasureKind::Kl, true).unwrap();
        for row in &con {
            assert_eq!(row[0], -row[1]);
            let pred = argmin(row);
            assert_eq!(pred, if row[0] <= 0.0 { 0 } else { 1 });
        }
    }
}

#[test]
fn query_equal_to_pooled_support_is_classified_to_it() {
    let ds = dataset(11, 5, CovarianceKind::RandomSpd, 0.5);
    let spec = EpisodeSpec::new(5, 3, 1).unwrap();
    for t in 0..20 {
        let ep = episode(&ds, &spec, 12, t);
        let pools: Vec<DescriptorSet> = ep
            .support
            .iter()
            .map(|s| DescriptorSet::concat(s.iter().copied()).unwrap())
            .collect();
        for (i, pool) in pools.iter().enumerate() {
            let mut e = ep.clone();
            e.queries[0].set = pool;
            let d = distance_scores(&e, &Embedding::Identity, 0.1, MeasureKind::Kl, false).unwrap();
            assert_eq!(argmin(&d[0]), i);
            assert!(d[0][i].abs() < 1e-12);
        }
    }
}

fn collapsed_dataset() -> LabeledDataset {
    let classes = (0..6u32)
        .map(|id| LabeledClass {
            id,
            images: (0..5)
                .map(|img| {
                    let data: Vec<f64> = (0..8)
                        .flat_map(|d| {
                            let jitter = 1e-3 * ((img * 8 + d) % 5) as f64;
                            [100.0 * id as f64 + jitter, -50.0 * id as f64 - jitter]
                        })
                        .collect();
                    DescriptorSet::new(8, 2, data).unwrap()
                })
                .collect(),
        })
        .collect();
    LabeledDataset::new(classes).unwrap()
}

#[test]
fn collapsed_classes_are_perfect() {
    let ds = collapsed_dataset();
    let split: Vec<u32> = ds.class_ids().collect();
    for scorer in [
        Scorer::Kl,
        Scorer::WassersteinApprox,
        Scorer::WassersteinExact,
        Scorer::Adm,
    ] {
        let cfg = EvalConfig {
            scorer,
            spec: EpisodeSpec::new(5, 1, 3).unwrap(),
            tasks: 20,
            reps: 2,
            ..Default::default()
        };
        let r = evaluate(&ds, &split, &cfg).unwrap();
        assert_eq!(r.mean_acc, 1.0, "{scorer}");
        assert_eq!(r.ci95, 0.0);
        assert_eq!(r.tasks, 20);
        assert_eq!(r.reps, 2);
    }
}

#[test]
fn ci95_hand_example() {
    let (mean, ci) = summarize_accuracies(&[1.0, 0.5]);
    assert_eq!(mean, 0.75);
    let expected = 1.96 * (0.125f64).sqrt() / 2f64.sqrt();
    assert!((ci - expected).abs() < 1e-12);
    assert!((ci - 0.49).abs() < 1e-12);
}

#[test]
fn evaluation_is_deterministic() {
    let ds = dataset(13, 8, CovarianceKind::RandomSpd, 1.0);
    let split: Vec<u32> = ds.class_ids().collect();
    let cfg = EvalConfig {
        scorer: Scorer::Adm,
        cms: true,
        spec: EpisodeSpec::new(5, 1, 2).unwrap(),
        tasks: 15,
        reps: 2,
        seed: 77,
        ..Default::default()
    };
    assert_eq!(
        evaluate(&ds, &split, &cfg).unwrap(),
        evaluate(&ds, &split, &cfg).unwrap()
    );
}

#[test]
fn report_values_are_in_range() {
    let ds = dataset(14, 5, CovarianceKind::Isotropic, 3.0);
    let split: Vec<u32> = ds.class_ids().collect();
    let cfg = EvalConfig {
        tasks: 3,
        reps: 1,
        spec: EpisodeSpec::new(5, 1, 2).unwrap(),
        ..Default::default()
    };
    let r = evaluate(&ds, &split, &cfg).unwrap();
    assert!((0.0..=1.0).contains(&r.mean_acc));
    assert!(r.ci95 >= 0.0);
}

#[test]
fn adm_prediction_matches_manual_fusion() {
    let ds = dataset(15, 6, CovarianceKind::RandomSpd, 1.0);
    let spec = EpisodeSpec::new(3, 1, 4).unwrap();
    let ep = episode(&ds, &spec, 16, 3);
    let cfg = EvalConfig {
        scorer: Scorer::Adm,
        spec,
        params: Params::default(),
        ..Default::default()
    };
    let scores = branch_scores(&ep, &Embedding::Identity, cfg.shrinkage, cfg.topk, false).unwrap();
    let manual: Vec<usize> = scores
        .kl
        .iter()
        .zip(&scores.i2c)
        .map(|(k, s)| classify(&fuse(k, s, &cfg.params.head, Some(&scores)).unwrap()))
        .collect();
    assert_eq!(predict_episode(&ep, &cfg).unwrap(), manual);
}
