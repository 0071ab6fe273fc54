use dgfilter::filter::{audit_report, filter_cloud, filter_cloud_with, FilterConfig, VoteRule};
use dgfilter::invert::invert_cloud;
use dgfilter::model::{train, NetworkConfig, TrainConfig, TrainingBatch};
use dgfilter::phantom::{build_cloud, gen_phantom, BoneLabel, LabeledCloud, PhantomConfig, Position, ScanKind};
use dgfilter::sampling::{augment_minority, normalize, sample_batches, AugmentConfig, SampleConfig};
use dgfilter::Result;
use proptest::prelude::*;

fn scan(position: Position, kind: ScanKind, seed: u64) -> dgfilter::phantom::ScanRecord {
    gen_phantom(&PhantomConfig { position, scan_kind: kind, ..Default::default() }, seed).unwrap()
}

fn cloud(position: Position, kind: ScanKind, seed: u64) -> LabeledCloud {
    build_cloud(&scan(position, kind, seed)).unwrap()
}

fn small_filter(seed: u64, rule: VoteRule) -> FilterConfig {
    FilterConfig { k: 10, vote_rule: rule, n_clouds: 12, n_points: 160, seed, ..Default::default() }
}

/// A per-point label that ignores geometry, drawn from `salt`.
fn scrambled(salt: u64, classes: u64) -> impl Fn(&[usize], &[[f64; 3]]) -> Result<Vec<BoneLabel>> + Sync {
    move |idx: &[usize], _: &[[f64; 3]]| {
        Ok(idx
            .iter()
            .map(|&i| {
                let h = (i as u64 ^ salt).wrapping_mul(0x9E37_79B9_7F4A_7C15).rotate_left(17);
                BoneLabel::ALL[(h % classes) as usize]
            })
            .collect())
    }
}

fn in_pool<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap().install(f)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn filter_partitions_audits_and_respects_rule_dominance(seed in 0u64..1000, salt in any::<u64>(), pos in 1usize..4) {
        let c = cloud(Position::ALL[pos], ScanKind::Partial, seed);
        let predictor = scrambled(salt, 3);
        let (kept, majority) = filter_cloud_with(&c, &predictor, &small_filter(seed, VoteRule::Majority)).unwrap();
        let (_, any) = filter_cloud_with(&c, &predictor, &small_filter(seed, VoteRule::Any)).unwrap();

        majority.check_consistent(c.len()).unwrap();
        prop_assert_eq!(majority.retained.len() + majority.deleted.len(), c.len());
        prop_assert_eq!(kept.len(), majority.retained.len());
        for (p, &i) in kept.points.iter().zip(&majority.retained) {
            prop_assert_eq!(p, &c.points[i]);
        }
        prop_assert!(majority.deleted.iter().all(|i| any.deleted.binary_search(i).is_ok()));
        prop_assert_eq!(audit_report(&c, &majority).unwrap(), 0);
        prop_assert_eq!(audit_report(&c, &any).unwrap(), 0);
    }

    #[test]
    fn unanimous_predictions_delete_nothing(seed in 0u64..1000, pos in 0usize..4, rule in prop_oneof![Just(VoteRule::Any), Just(VoteRule::Majority)]) {
        let c = cloud(Position::ALL[pos], ScanKind::Partial, seed);
        let (kept, report) = filter_cloud_with(&c, &scrambled(seed, 1), &small_filter(seed, rule)).unwrap();
        prop_assert!(report.deleted.is_empty());
        prop_assert_eq!(kept, c);
    }

    #[test]
    fn report_round_trips_and_inverts_to_a_partition(seed in 0u64..1000, salt in any::<u64>()) {
        let s = scan(Position::P2, ScanKind::Partial, seed);
        let c = build_cloud(&s).unwrap();
        let (_, report) = filter_cloud_with(&c, &scrambled(salt, 3), &small_filter(seed, VoteRule::Majority)).unwrap();
        let back = dgfilter::filter::FilterReport::from_json(&report.to_json()).unwrap();
        prop_assert_eq!(&back, &report);

        let overlays = invert_cloud(&back, &c, &s).unwrap();
        let pixels: usize = overlays.iter().map(|o| o.retained.len() + o.deleted.len()).sum();
        prop_assert_eq!(pixels, c.len());
        let deleted: usize = overlays.iter().map(|o| o.deleted.len()).sum();
        prop_assert_eq!(deleted, report.deleted.len());
        for o in &overlays {
            for line in &o.lines {
                prop_assert_eq!(line.retained + line.deleted(), line.total);
                prop_assert_eq!(line.whole_line_deleted, line.retained == 0);
            }
            prop_assert_eq!(o.has_deletions(), report.frame_deletions.contains_key(&o.frame_index));
        }
    }

    #[test]
    fn augmentation_keeps_originals_verbatim(seed in 0u64..1000, pos in 0usize..4) {
        let c = cloud(Position::ALL[pos], ScanKind::Thorough, seed);
        let (_, norm) = normalize(&c.coords());
        let aug = augment_minority(&c, &AugmentConfig::for_scale(BoneLabel::Patella, norm.scale), seed).unwrap();
        prop_assert_eq!(&aug.points[..c.len()], &c.points[..]);
        let count = |cl: &LabeledCloud, l: BoneLabel| cl.points.iter().filter(|p| p.label == l).count();
        prop_assert_eq!(count(&aug, BoneLabel::Femur), count(&c, BoneLabel::Femur));
        prop_assert_eq!(count(&aug, BoneLabel::Tibia), count(&c, BoneLabel::Tibia));
        prop_assert!(aug.points[c.len()..].iter().all(|p| p.synthetic && p.label == BoneLabel::Patella));
    }
}

#[test]
fn true_bone_surfaces_keep_the_configured_gap() {
    for kind in [ScanKind::Thorough, ScanKind::Partial] {
        for position in Position::ALL {
            for seed in [0, 1] {
                let cfg = PhantomConfig { position, scan_kind: kind, ..Default::default() };
                let c = build_cloud(&gen_phantom(&cfg, seed).unwrap()).unwrap();
                let bone: Vec<_> = c.points.iter().filter(|p| !p.is_artifact).collect();
                let mut min = f64::INFINITY;
                for (i, a) in bone.iter().enumerate() {
                    for b in &bone[i + 1..] {
                        if a.label != b.label {
                            let d2: f64 = a.xyz.iter().zip(&b.xyz).map(|(x, y)| (x - y) * (x - y)).sum();
                            min = min.min(d2);
                        }
                    }
                }
                assert!(min.sqrt() >= cfg.gap_mm, "{position} {kind} seed {seed}: gap {}", min.sqrt());
            }
        }
    }
}

#[test]
fn phantom_is_reproducible_and_seed_sensitive() {
    for position in Position::ALL {
        assert_eq!(scan(position, ScanKind::Partial, 11), scan(position, ScanKind::Partial, 11));
        assert_ne!(scan(position, ScanKind::Partial, 11), scan(position, ScanKind::Partial, 12));
    }
}

#[test]
fn sampling_ignores_thread_count() {
    let c = cloud(Position::P1, ScanKind::Thorough, 3);
    let cfg = SampleConfig { n_clouds: 40, n_points: 256, seed: 3 };
    let one = in_pool(1, || sample_batches(&c, &cfg).unwrap());
    let many = in_pool(4, || sample_batches(&c, &cfg).unwrap());
    assert_eq!(one, many);
    assert!(one.iter().all(|b| b.indices.len() == 256));
}

#[test]
fn training_and_filtering_ignore_thread_count() {
    let c = cloud(Position::P0, ScanKind::Thorough, 4);
    let cfg = SampleConfig { n_clouds: 10, n_points: 96, seed: 4 };
    let batches: Vec<TrainingBatch> = sample_batches(&c, &cfg)
        .unwrap()
        .iter()
        .map(|b| TrainingBatch {
            coords: normalize(&b.coords(&c)).0,
            labels: b.labels(&c),
            group: "P0".into(),
        })
        .collect();
    let net_cfg = NetworkConfig { widths: vec![8, 8, 16], head_hidden: 16, k: 6, ..Default::default() };
    let tcfg = TrainConfig { max_epochs: 3, seed: 4, ..Default::default() };
    let run = || train(&batches, &net_cfg, &tcfg, &mut |_| {}).unwrap();
    let (a, b) = (in_pool(1, run), in_pool(3, run));
    assert_eq!(a.metrics, b.metrics);
    assert_eq!(a.network.params.flatten(), b.network.params.flatten());

    let target = cloud(Position::P1, ScanKind::Partial, 4);
    let fcfg = small_filter(4, VoteRule::Majority);
    let fa = in_pool(1, || filter_cloud(&target, &a.network, &fcfg).unwrap().1);
    let fb = in_pool(3, || filter_cloud(&target, &b.network, &fcfg).unwrap().1);
    assert_eq!(fa.to_json(), fb.to_json());
}
