//! Precise testing, fast evaluation and cross-domain scoring.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use shellseg::augment::TtaConfig;
use shellseg::eval::{cross_domain_eval, fast_eval, precise_test, precise_votes, ConfusionMatrix};
use shellseg::labelspace::{target_space, AliasTable, LabelSpace};
use shellseg::model::{Model, ModelConfig};
use shellseg::rng::derive;
use shellseg::training::input_features;
use shellseg::{Label, PointCloud};

fn model(classes: usize, seed: u64) -> Model {
    Model::new(ModelConfig {
        stage_widths: vec![8, 16],
        k_neighbors: 6,
        pool_voxel_sizes: vec![0.3, 0.6],
        num_classes: classes,
        seed,
        ..ModelConfig::default()
    })
    .unwrap()
}

fn random_scene(n: usize, classes: usize, seed: u64) -> PointCloud {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    PointCloud::new(
        format!("r{seed}"),
        (0..n)
            .map(|_| std::array::from_fn(|_| rng.random_range(0.0..2.0)))
            .collect(),
    )
    .with_colors(
        (0..n)
            .map(|_| std::array::from_fn(|_| rng.random()))
            .collect(),
    )
    .with_labels(
        (0..n)
            .map(|_| rng.random_range(0..classes as Label))
            .collect(),
    )
}

#[test]
fn identity_tta_on_single_fragment_equals_forward() {
    let mut pc = random_scene(0, 4, 0);
    pc.positions = (0..10)
        .flat_map(|i| {
            (0..10).map(move |j| [i as f64 * 0.2, j as f64 * 0.2, ((i * j) % 3) as f64 * 0.2])
        })
        .collect();
    let n = pc.positions.len();
    pc.colors = Some((0..n).map(|i| [(i * 37 % 256) as u8, 90, 10]).collect());
    pc.labels = Some((0..n).map(|i| (i % 4) as Label).collect());
    let m = model(4, 1);
    let out = precise_test(&m, &pc, 0.1, &TtaConfig::identity(), 5).unwrap();
    let direct: Vec<Label> = m
        .forward(&pc.positions, &input_features(&pc).unwrap())
        .unwrap()
        .argmax_rows()
        .into_iter()
        .map(|c| c as Label)
        .collect();
    assert_eq!(out.labels, direct);
    assert!(out.report.unwrap().precise);
}

#[test]
fn every_tta_instance_votes_each_point_once() {
    let pc = random_scene(400, 5, 2);
    let tta = TtaConfig::default();
    let votes = precise_votes(&model(5, 3), &pc, 0.1, &tta, 9, 60).unwrap();
    assert!(votes
        .coverage()
        .iter()
        .all(|&c| c as usize == tta.num_instances()));
}

#[test]
fn reports_are_reproducible_and_unlabeled_clouds_get_none() {
    let pc = random_scene(300, 3, 4);
    let m = model(3, 4);
    let a = precise_test(&m, &pc, 0.15, &TtaConfig::default(), 1).unwrap();
    let b = precise_test(&m, &pc, 0.15, &TtaConfig::default(), 1).unwrap();
    assert_eq!(a, b);
    let mut bare = pc.clone();
    bare.labels = None;
    let c = precise_test(&m, &bare, 0.15, &TtaConfig::default(), 1).unwrap();
    assert!(c.report.is_none());
    assert_eq!(c.labels, a.labels);
}

#[test]
fn fast_eval_covers_every_point() {
    let pc = random_scene(500, 3, 6);
    let pred = fast_eval(&model(3, 1), &pc, 0.3, 2).unwrap();
    assert_eq!(pred.len(), pc.len());
    assert!(pred.iter().all(|&p| p < 3));
    assert!(fast_eval(&model(3, 1), &PointCloud::new("e", vec![]), 0.3, 2).is_err());
}

#[test]
fn same_space_cross_domain_matches_precise_test() {
    let space = target_space();
    let m = model(space.len(), 8);
    let scenes: Vec<PointCloud> = (0..2)
        .map(|s| random_scene(250, space.len(), 20 + s))
        .collect();
    let tta = TtaConfig::identity();
    let report = cross_domain_eval(
        &m,
        &space,
        &scenes,
        &space,
        &AliasTable::new(),
        0.2,
        &tta,
        3,
    )
    .unwrap();
    let mut conf = ConfusionMatrix::new(space.len());
    for (i, pc) in scenes.iter().enumerate() {
        let out = precise_test(&m, pc, 0.2, &tta, derive(3, &[i as u64])).unwrap();
        conf.accumulate(&out.labels, pc.labels.as_ref().unwrap())
            .unwrap();
    }
    let direct = conf.metrics().unwrap();
    assert_eq!(report.iou, direct.iou);
    assert_eq!(report.miou, direct.miou);
    assert_eq!(report.all_acc, direct.all_acc);
}

/// Scores predictions directly on class names both spaces share.
fn intersection_oracle(
    model_space: &LabelSpace,
    scene_space: &LabelSpace,
    aliases: &AliasTable,
    truth: &[Label],
    pred: &[Label],
) -> BTreeMap<String, Option<f64>> {
    let canon = |s: &str| aliases.canonical(s).unwrap();
    let model_names: Vec<String> = model_space.classes.iter().map(|c| canon(c)).collect();
    let scene_names: Vec<String> = scene_space.classes.iter().map(|c| canon(c)).collect();
    let mut shared: BTreeSet<String> = model_names
        .iter()
        .filter(|n| scene_names.contains(n))
        .cloned()
        .collect();
    if scene_names.iter().any(|n| !model_names.contains(n)) {
        // Unmatched classes are routed into the model's none class, which is then not scored.
        shared.remove(&model_names[model_space.none_indices[0]]);
    }
    let mut counts: BTreeMap<(String, String), u64> = BTreeMap::new();
    for (&t, &p) in truth.iter().zip(pred) {
        let tn = &scene_names[t as usize];
        if shared.contains(tn) {
            *counts
                .entry((tn.clone(), model_names[p as usize].clone()))
                .or_default() += 1;
        }
    }
    shared
        .iter()
        .map(|c| {
            let get = |f: &dyn Fn(&(String, String)) -> bool| {
                counts
                    .iter()
                    .filter(|(k, _)| f(k))
                    .map(|(_, v)| v)
                    .sum::<u64>()
            };
            let tp = get(&|k| k.0 == *c && k.1 == *c);
            let fn_ = get(&|k| k.0 == *c && k.1 != *c);
            let fp = get(&|k| k.0 != *c && k.1 == *c);
            let union = tp + fp + fn_;
            (c.clone(), (union > 0).then(|| tp as f64 / union as f64))
        })
        .collect()
}

#[test]
fn cross_domain_equals_intersection_scoring() {
    let aliases = AliasTable::new()
        .with("stairs", "stair")
        .with("other", "none")
        .with("clutter", "none");
    let spaces = [
        LabelSpace::new("a", &["wall", "floor", "door", "clutter"], &["clutter"]).unwrap(),
        LabelSpace::new(
            "b",
            &["floor", "wall", "stair", "window", "other"],
            &["other"],
        )
        .unwrap(),
        LabelSpace::new(
            "c",
            &["ceiling", "floor", "wall", "stairs", "none"],
            &["none"],
        )
        .unwrap(),
    ];
    let tta = TtaConfig::identity();
    for (mi, model_space) in spaces.iter().enumerate() {
        for (si, scene_space) in spaces.iter().enumerate() {
            let m = model(model_space.len(), 30 + mi as u64);
            let scenes: Vec<PointCloud> = (0..2)
                .map(|s| random_scene(200, scene_space.len(), 100 * si as u64 + s))
                .collect();
            let report = cross_domain_eval(
                &m,
                model_space,
                &scenes,
                scene_space,
                &aliases,
                0.25,
                &tta,
                7,
            )
            .unwrap();
            let mut truth = Vec::new();
            let mut pred = Vec::new();
            for (i, pc) in scenes.iter().enumerate() {
                let mut unlabeled = pc.clone();
                truth.extend(unlabeled.labels.take().unwrap());
                let out = precise_test(&m, &unlabeled, 0.25, &tta, derive(7, &[i as u64])).unwrap();
                pred.extend(out.labels);
            }
            let oracle = intersection_oracle(model_space, scene_space, &aliases, &truth, &pred);
            let mut valid_ious = Vec::new();
            for (j, name) in model_space.classes.iter().enumerate() {
                let key = aliases.canonical(name).unwrap();
                match oracle.get(&key) {
                    Some(Some(iou)) => {
                        assert!(report.valid[j], "{name} should be scored ({mi}, {si})");
                        assert_eq!(report.iou[j], *iou, "{name} ({mi}, {si})");
                        valid_ious.push(*iou);
                    }
                    _ => assert!(!report.valid[j], "{name} should not be scored ({mi}, {si})"),
                }
            }
            let mean = valid_ious.iter().sum::<f64>() / valid_ious.len() as f64;
            assert!((report.miou - mean).abs() <= 1e-15);
        }
    }
}

#[test]
fn stairs_are_excluded_for_a_stairless_model() {
    let pre = shellseg::labelspace::pretrain_space();
    let target = target_space();
    let m = model(pre.len(), 2);
    let stairs = target.index_of("stairs").unwrap() as Label;
    let mut pc = random_scene(200, target.len(), 3);
    pc.labels = Some(
        (0..200)
            .map(|i| if i % 2 == 0 { stairs } else { 2 })
            .collect(),
    );
    let report = cross_domain_eval(
        &m,
        &pre,
        &[pc],
        &target,
        &shellseg::labelspace::default_aliases(),
        0.2,
        &TtaConfig::identity(),
        0,
    )
    .unwrap();
    let clutter = pre.index_of("clutter").unwrap();
    assert!(!report.valid[clutter]);
    assert!(report.valid[pre.index_of("wall").unwrap()]);
    assert!(cross_domain_eval(
        &m,
        &target,
        &[],
        &target,
        &AliasTable::new(),
        0.2,
        &TtaConfig::identity(),
        0
    )
    .is_err());
}
