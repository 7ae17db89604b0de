//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
//! failure. Pass criterion numbers as arguments to run a subset.

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use rand::Rng as _;
use shellseg::augment::TtaConfig;
use shellseg::autodiff::Tensor;
use shellseg::eval::{
    cross_domain_eval, fast_eval, precise_test, ConfusionMatrix, MetricsReport, VoteBuffer,
};
use shellseg::labelspace::{build_translation, target_space, AliasTable, LabelSpace};
use shellseg::manifest::{DatasetManifest, Split};
use shellseg::model::{Checkpoint, Model, ModelConfig};
use shellseg::rng::{derive, stream};
use shellseg::sampling::{fragment_partition_positions, knn_self, voxel_key};
use shellseg::synth::{generate_dataset, LabelVariant, SceneSpec};
use shellseg::training::{
    finetune, lovasz_softmax, onecycle_lr, total_loss, train, AdamW, AdamWConfig, OneCycleConfig,
    TrainConfig, TrainHistory, Validation,
};
use shellseg::{Label, PointCloud};

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

// ---------------------------------------------------------------------------
// 1. Gradients

fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

fn gradient_check(cfg: ModelConfig, n: usize, seed: u64) -> Result<(usize, f64), String> {
    let classes = cfg.num_classes;
    let model = Model::new(cfg).map_err(|e| e.to_string())?;
    let mut rng = stream(seed, &[1]);
    let pos: Vec<[f64; 3]> = (0..n)
        .map(|_| std::array::from_fn(|_| rng.random_range(0.0..1.0)))
        .collect();
    let feats = Tensor::from_vec(
        n,
        3,
        (0..n * 3).map(|_| rng.random_range(-1.0..1.0)).collect(),
    );
    let targets: Vec<Label> = (0..n)
        .map(|_| rng.random_range(0..classes as Label))
        .collect();
    let loss_of = |m: &Model| {
        total_loss(&m.forward(&pos, &feats).unwrap(), &targets)
            .unwrap()
            .loss
    };
    let upstream = total_loss(&model.forward(&pos, &feats).unwrap(), &targets)
        .unwrap()
        .grad;
    let grads = model.backward(&pos, &feats, &upstream).unwrap();
    // Five-point central stencil: truncation error O(h^4).
    let h = 1e-4;
    let mut probe = model.clone();
    let (mut checked, mut worst) = (0, 0.0f64);
    for p in 0..model.params().len() {
        for e in 0..model.params()[p].tensor.data.len() {
            let orig = model.params()[p].tensor.data[e];
            let mut at = |d: f64| {
                probe.params_mut()[p].tensor.data[e] = orig + d;
                loss_of(&probe)
            };
            let fd = (at(-2.0 * h) - 8.0 * at(-h) + 8.0 * at(h) - at(2.0 * h)) / (12.0 * h);
            probe.params_mut()[p].tensor.data[e] = orig;
            let err = relative_error(grads[p].data[e], fd);
            ensure!(
                err <= 1e-4,
                "{}[{e}]: analytic {} vs numeric {fd}",
                model.params()[p].name,
                grads[p].data[e]
            );
            worst = worst.max(err);
            checked += 1;
        }
    }
    Ok((checked, worst))
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let small = |widths: Vec<usize>, pools: Vec<f64>, k, classes, seed| ModelConfig {
        stage_widths: widths,
        pool_voxel_sizes: pools,
        k_neighbors: k,
        num_classes: classes,
        seed,
        ..ModelConfig::default()
    };
    let (a, wa) = gradient_check(small(vec![8, 16], vec![0.25, 0.5], 6, 4, 3), 64, 11)?;
    let (b, wb) = gradient_check(small(vec![16], vec![0.3], 4, 11, 5), 40, 2)?;
    let elapsed = start.elapsed();
    ensure!(elapsed < Duration::from_secs(120), "took {elapsed:?}");
    Ok(format!(
        "{} gradient entries, worst relative error {:.2e}",
        a + b,
        wa.max(wb)
    ))
}

// ---------------------------------------------------------------------------
// 2. Lovász oracle

fn criterion_2() -> Outcome {
    let mut rng = stream(2, &[]);
    let mut worst = 0.0f64;
    for case in 0..10_000 {
        let n = rng.random_range(1..=12usize);
        let c = rng.random_range(1..=4usize);
        let targets: Vec<Label> = (0..n).map(|_| rng.random_range(0..c as Label)).collect();
        let preds: Vec<usize> = (0..n).map(|_| rng.random_range(0..c)).collect();
        let mut probs = Tensor::zeros(n, c);
        for (i, &p) in preds.iter().enumerate() {
            probs.row_mut(i)[p] = 1.0;
        }
        let got = lovasz_softmax(&probs, &targets)
            .map_err(|e| e.to_string())?
            .loss;
        let present: BTreeSet<usize> = targets.iter().map(|&t| t as usize).collect();
        let expect = present
            .iter()
            .map(|&k| {
                let inter = (0..n)
                    .filter(|&i| targets[i] as usize == k && preds[i] == k)
                    .count();
                let union = (0..n)
                    .filter(|&i| targets[i] as usize == k || preds[i] == k)
                    .count();
                1.0 - inter as f64 / union as f64
            })
            .sum::<f64>()
            / present.len() as f64;
        let err = (got - expect).abs();
        ensure!(err <= 1e-12, "instance {case}: {got} vs {expect}");
        worst = worst.max(err);
    }
    Ok(format!("10000 instances, worst error {worst:.1e}"))
}

// ---------------------------------------------------------------------------
// 3. Metrics oracle

fn criterion_3() -> Outcome {
    let m = ConfusionMatrix::from_counts(&[vec![2, 1], vec![0, 1]])
        .and_then(|c| c.metrics())
        .map_err(|e| e.to_string())?;
    ensure!(m.iou == vec![2.0 / 3.0, 1.0 / 2.0], "IoU {:?}", m.iou);
    ensure!(m.miou == 7.0 / 12.0, "mIoU {}", m.miou);
    ensure!(m.all_acc == 3.0 / 4.0, "allAcc {}", m.all_acc);
    let z = ConfusionMatrix::from_counts(&[vec![2, 1, 0], vec![0, 1, 0], vec![0, 0, 0]])
        .and_then(|c| c.metrics())
        .map_err(|e| e.to_string())?;
    ensure!(z.valid == vec![true, true, false], "valid {:?}", z.valid);
    ensure!(
        z.miou == 7.0 / 12.0,
        "zero-union class changed mIoU to {}",
        z.miou
    );
    Ok("fixture exact, zero-union class excluded".into())
}

// ---------------------------------------------------------------------------
// 4. Sampling and voting oracles

fn brute_knn(pts: &[[f64; 3]], q: usize, k: usize, include_self: bool) -> Vec<usize> {
    let mut order: Vec<(f64, usize)> = (0..pts.len())
        .filter(|&j| include_self || j != q)
        .map(|j| (shellseg::cloud::dist2(&pts[q], &pts[j]), j))
        .collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    order.into_iter().take(k).map(|(_, j)| j).collect()
}

fn criterion_4() -> Outcome {
    for seed in 0..6u64 {
        let mut rng = stream(4, &[seed]);
        // Even seeds use an integer lattice so that distance ties occur.
        let pts: Vec<[f64; 3]> = (0..500)
            .map(|_| {
                std::array::from_fn(|_| {
                    if seed % 2 == 0 {
                        rng.random_range(0..6) as f64
                    } else {
                        rng.random_range(-3.0..3.0)
                    }
                })
            })
            .collect();
        for &k in &[1usize, 8, 16] {
            for include_self in [true, false] {
                let nb = knn_self(&pts, k, include_self).map_err(|e| e.to_string())?;
                for q in 0..pts.len() {
                    let mut got = nb.row(q).to_vec();
                    got.sort_by(|&a, &b| {
                        shellseg::cloud::dist2(&pts[q], &pts[a])
                            .total_cmp(&shellseg::cloud::dist2(&pts[q], &pts[b]))
                            .then(a.cmp(&b))
                    });
                    ensure!(
                        got == brute_knn(&pts, q, k, include_self),
                        "kNN mismatch: cloud {seed}, k {k}, query {q}"
                    );
                }
            }
        }
    }
    for seed in 0..100u64 {
        let mut rng = stream(40, &[seed]);
        let n = rng.random_range(1..1500);
        let pts: Vec<[f64; 3]> = (0..n)
            .map(|_| std::array::from_fn(|_| rng.random_range(0.0..2.0)))
            .collect();
        let voxel = 0.25;
        let frags = fragment_partition_positions(&pts, voxel, seed).map_err(|e| e.to_string())?;
        let mut seen = vec![0u32; n];
        let origin = shellseg::cloud::bounds(&pts).unwrap().0;
        let mut occupancy: BTreeMap<_, usize> = BTreeMap::new();
        for p in &pts {
            *occupancy.entry(voxel_key(p, &origin, voxel)).or_default() += 1;
        }
        ensure!(
            frags.len() == occupancy.values().copied().max().unwrap_or(0),
            "seed {seed}: fragment count"
        );
        for f in &frags {
            let keys: BTreeSet<_> = f
                .indices
                .iter()
                .map(|&i| voxel_key(&pts[i], &origin, voxel))
                .collect();
            ensure!(
                keys.len() == f.indices.len(),
                "seed {seed}: two points of one voxel in a fragment"
            );
            f.indices.iter().for_each(|&i| seen[i] += 1);
        }
        ensure!(seen.iter().all(|&c| c == 1), "seed {seed}: not a partition");
    }
    for seed in 0..50u64 {
        let mut rng = stream(41, &[seed]);
        let (n, c) = (rng.random_range(1..60usize), rng.random_range(1..6usize));
        let mut votes = VoteBuffer::new(n, c);
        let mut tally = vec![vec![0u32; c]; n];
        for i in 0..n {
            votes.add(&[i], &[rng.random_range(0..c as Label)]).unwrap();
        }
        for i in 0..n {
            tally[i][votes.votes(i).iter().position(|&v| v > 0).unwrap()] += 1;
        }
        for _ in 0..rng.random_range(0..8) {
            let idx: Vec<usize> = (0..rng.random_range(1..=n))
                .map(|_| rng.random_range(0..n))
                .collect();
            let pred: Vec<Label> = idx
                .iter()
                .map(|_| rng.random_range(0..c as Label))
                .collect();
            votes.add(&idx, &pred).unwrap();
            for (&i, &p) in idx.iter().zip(&pred) {
                tally[i][p as usize] += 1;
            }
        }
        let expect: Vec<Label> = tally
            .iter()
            .map(|t| {
                let best = *t.iter().max().unwrap();
                t.iter().position(|&v| v == best).unwrap() as Label
            })
            .collect();
        ensure!(
            votes.finalize().unwrap() == expect,
            "seed {seed}: vote winner"
        );
        ensure!(
            (0..n).all(|i| votes.votes(i) == tally[i].as_slice()),
            "seed {seed}: vote counts"
        );
    }
    Ok("kNN on 6 clouds of 500 points, 100 fragment partitions, 50 vote tallies".into())
}

// ---------------------------------------------------------------------------
// 5. Cross-domain translation

fn tiny_model(classes: usize, seed: u64) -> Model {
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
    let mut rng = stream(5, &[seed]);
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

/// IoU per shared canonical class, scored only on truth points of shared
/// classes. The model's none class is dropped when it absorbs unmatched
/// scene classes.
fn intersection_oracle(
    model_space: &LabelSpace,
    scene_space: &LabelSpace,
    aliases: &AliasTable,
    truth: &[Label],
    pred: &[Label],
) -> BTreeMap<String, Option<f64>> {
    let canon = |s: &String| aliases.canonical(s).unwrap();
    let model_names: Vec<String> = model_space.classes.iter().map(canon).collect();
    let scene_names: Vec<String> = scene_space.classes.iter().map(canon).collect();
    let mut shared: BTreeSet<String> = model_names
        .iter()
        .filter(|n| scene_names.contains(n))
        .cloned()
        .collect();
    if scene_names.iter().any(|n| !model_names.contains(n)) {
        shared.remove(&model_names[model_space.none_indices[0]]);
    }
    shared
        .iter()
        .map(|c| {
            let (mut tp, mut fp, mut fn_) = (0u64, 0u64, 0u64);
            for (&t, &p) in truth.iter().zip(pred) {
                let (tn, pn) = (&scene_names[t as usize], &model_names[p as usize]);
                if !shared.contains(tn) {
                    continue;
                }
                match (tn == c, pn == c) {
                    (true, true) => tp += 1,
                    (true, false) => fn_ += 1,
                    (false, true) => fp += 1,
                    _ => {}
                }
            }
            let union = tp + fp + fn_;
            (c.clone(), (union > 0).then(|| tp as f64 / union as f64))
        })
        .collect()
}

fn criterion_5() -> Outcome {
    let aliases = AliasTable::new()
        .with("stairs", "stair")
        .with("other", "_none")
        .with("clutter", "_none")
        .with("none", "_none");
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
    let mut pairs = 0;
    for (mi, model_space) in spaces.iter().enumerate() {
        for (si, scene_space) in spaces.iter().enumerate() {
            let m = tiny_model(model_space.len(), 30 + mi as u64);
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
            .map_err(|e| e.to_string())?;
            let (mut truth, mut pred) = (Vec::new(), Vec::new());
            for (i, pc) in scenes.iter().enumerate() {
                let mut bare = pc.clone();
                truth.extend(bare.labels.take().unwrap());
                pred.extend(
                    precise_test(&m, &bare, 0.25, &tta, derive(7, &[i as u64]))
                        .unwrap()
                        .labels,
                );
            }
            let oracle = intersection_oracle(model_space, scene_space, &aliases, &truth, &pred);
            let mut ious = Vec::new();
            for (j, name) in model_space.classes.iter().enumerate() {
                match oracle.get(&aliases.canonical(name).unwrap()) {
                    Some(Some(iou)) => {
                        ensure!(
                            report.valid[j] && report.iou[j] == *iou,
                            "{name}: ({mi}, {si})"
                        );
                        ious.push(*iou);
                    }
                    _ => ensure!(!report.valid[j], "{name} scored for ({mi}, {si})"),
                }
            }
            let mean = ious.iter().sum::<f64>() / ious.len() as f64;
            ensure!((report.miou - mean).abs() <= 1e-15, "mIoU ({mi}, {si})");
            // Unmatched scene classes land in the model's none class, which is not scored.
            let map = build_translation(scene_space, model_space, &aliases).unwrap();
            let none = model_space.none_indices[0];
            for (s, name) in scene_space.classes.iter().enumerate() {
                let key = aliases.canonical(name).unwrap();
                if !model_space
                    .classes
                    .iter()
                    .any(|c| aliases.canonical(c).unwrap() == key)
                {
                    ensure!(
                        map.mapping[s] == none,
                        "`{name}` not routed to the none class"
                    );
                    ensure!(!report.valid[none], "none class scored for ({mi}, {si})");
                }
            }
            pairs += 1;
        }
    }
    Ok(format!(
        "{pairs} model/scene space pairs match intersection scoring"
    ))
}

// ---------------------------------------------------------------------------
// 6-8. Desk-scale training on synthetic data

const THRESHOLD: f64 = 0.80;
const VOXEL: f64 = 0.1;

fn model_config(classes: usize, seed: u64) -> ModelConfig {
    ModelConfig {
        stage_widths: vec![32, 64],
        pool_voxel_sizes: vec![0.2, 0.4],
        k_neighbors: 8,
        num_classes: classes,
        seed,
        ..ModelConfig::default()
    }
}

fn train_config(seed: u64, epochs: usize, max_lr: f64) -> TrainConfig {
    TrainConfig {
        max_epochs: epochs,
        patience: epochs,
        max_lr,
        seed,
        voxel_size: VOXEL,
        eval_voxel_size: Some(VOXEL),
        crop_points: 3000,
        batch_size: 2,
        ..TrainConfig::default()
    }
}

struct Baseline {
    _dir: tempfile::TempDir,
    manifest: DatasetManifest,
    model: Model,
    test: Vec<PointCloud>,
    history: TrainHistory,
    elapsed: Duration,
    precise: MetricsReport,
}

fn precise_report(model: &Model, scenes: &[PointCloud], seed: u64) -> MetricsReport {
    let mut conf = ConfusionMatrix::new(model.num_classes());
    for (i, pc) in scenes.iter().enumerate() {
        let mut bare = pc.clone();
        let truth = bare.labels.take().unwrap();
        let out = precise_test(
            model,
            &bare,
            VOXEL,
            &TtaConfig::default(),
            derive(seed, &[i as u64]),
        )
        .unwrap();
        conf.accumulate(&out.labels, &truth).unwrap();
    }
    let mut r = conf.metrics().unwrap().with_names(&target_space());
    r.precise = true;
    r
}

fn fast_report(model: &Model, scenes: &[PointCloud], seed: u64) -> MetricsReport {
    let mut conf = ConfusionMatrix::new(model.num_classes());
    for (i, pc) in scenes.iter().enumerate() {
        let pred = fast_eval(model, pc, VOXEL, derive(seed, &[i as u64])).unwrap();
        conf.accumulate(&pred, pc.labels.as_ref().unwrap()).unwrap();
    }
    conf.metrics().unwrap().with_names(&target_space())
}

fn baseline() -> &'static Baseline {
    static CELL: OnceLock<Baseline> = OnceLock::new();
    CELL.get_or_init(|| {
        let start = Instant::now();
        let dir = tempfile::tempdir().unwrap();
        let manifest = generate_dataset(
            &SceneSpec::default(),
            36,
            [0.7, 0.15, 0.15],
            0,
            dir.path(),
            LabelVariant::Target,
        )
        .unwrap();
        let space = target_space();
        let train_scenes = manifest.load_split(Split::Train).unwrap();
        let val = manifest.load_split(Split::Val).unwrap();
        let test = manifest.load_split(Split::Test).unwrap();
        let model = Model::new(model_config(space.len(), 0)).unwrap();
        let (model, history) = train(
            model,
            &train_scenes,
            &val,
            &space,
            &train_config(0, 30, 0.006),
        )
        .unwrap();
        let precise = precise_report(&model, &test, 0);
        Baseline {
            _dir: dir,
            manifest,
            model,
            test,
            history,
            elapsed: start.elapsed(),
            precise,
        }
    })
}

fn criterion_6() -> Outcome {
    let b = baseline();
    let counts = b.manifest.counts();
    ensure!(counts == (24, 6, 6), "split {counts:?}");
    let r = &b.precise;
    let planar = ["ceiling", "floor", "wall"].map(|c| (c, r.iou_of(c).unwrap()));
    let detail = format!(
        "split 24/6/6, {} epochs, test mIoU* {:.4}, {}, {:.0}s",
        b.history.len(),
        r.miou,
        planar
            .iter()
            .map(|(c, v)| format!("{c} {v:.4}"))
            .collect::<Vec<_>>()
            .join(", "),
        b.elapsed.as_secs_f64()
    );
    ensure!(r.miou >= THRESHOLD, "{detail}");
    ensure!(planar.iter().all(|(_, v)| *v >= 0.90), "{detail}");
    ensure!(b.elapsed < Duration::from_secs(30 * 60), "{detail}");
    Ok(detail)
}

fn best_val(h: &TrainHistory) -> f64 {
    h.epochs
        .iter()
        .filter_map(|e| e.val)
        .map(|v| v.miou)
        .fold(0.0, f64::max)
}

fn criterion_7() -> Outcome {
    let b = baseline();
    let dir = tempfile::tempdir().unwrap();
    let pre = generate_dataset(
        &SceneSpec::default(),
        36,
        [0.7, 0.15, 0.15],
        1,
        dir.path(),
        LabelVariant::Pretrain,
    )
    .map_err(|e| e.to_string())?;
    let pre_space = shellseg::labelspace::pretrain_space();
    let pre_model = Model::new(model_config(pre_space.len(), 100)).unwrap();
    let (pre_model, _) = train(
        pre_model,
        &pre.load_split(Split::Train).unwrap(),
        &pre.load_split(Split::Val).unwrap(),
        &pre_space,
        &train_config(100, 20, 0.006),
    )
    .map_err(|e| e.to_string())?;
    let ckpt = Checkpoint {
        model: pre_model,
        label_space: pre_space.name.clone(),
        step: 0,
    };
    let space = target_space();
    let few: Vec<PointCloud> = b
        .manifest
        .load_split(Split::Train)
        .unwrap()
        .into_iter()
        .take(6)
        .collect();
    let val = b.manifest.load_split(Split::Val).unwrap();
    const EPOCHS: usize = 40;
    let mut lines = Vec::new();
    let mut ok = true;
    for seed in 0..3u64 {
        let stop = |mut c: TrainConfig| {
            c.target_miou = Some(THRESHOLD);
            c.validation = Validation::Precise(TtaConfig::identity());
            c
        };
        let scratch = train(
            Model::new(model_config(space.len(), seed)).unwrap(),
            &few,
            &val,
            &space,
            &stop(train_config(seed, EPOCHS, 0.006)),
        )
        .map_err(|e| e.to_string())?
        .1;
        let tuned = finetune(
            &ckpt,
            &space,
            &few,
            &val,
            &stop(train_config(seed, EPOCHS, 0.001)),
            0.006,
        )
        .map_err(|e| e.to_string())?
        .1;
        // A scratch run that never reaches the threshold needs more than EPOCHS.
        let scratch_epochs = scratch.epochs_to_reach(THRESHOLD).unwrap_or(EPOCHS + 1);
        let pass = tuned
            .epochs_to_reach(THRESHOLD)
            .is_some_and(|e| 2 * e <= scratch_epochs);
        ok &= pass;
        let reached = |h: &TrainHistory| {
            h.epochs_to_reach(THRESHOLD).map_or_else(
                || format!(">{EPOCHS} (best {:.4})", best_val(h)),
                |e| e.to_string(),
            )
        };
        lines.push(format!(
            "seed {seed}: fine-tuned {} vs scratch {}{}",
            reached(&tuned),
            reached(&scratch),
            if pass { "" } else { " (fail)" }
        ));
    }
    let detail = format!("epochs to val mIoU* {THRESHOLD}: {}", lines.join("; "));
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn criterion_8() -> Outcome {
    let b = baseline();
    let mut lines = Vec::new();
    let mut ok = true;
    for seed in 0..3u64 {
        let precise = if seed == 0 {
            b.precise.miou
        } else {
            precise_report(&b.model, &b.test, seed).miou
        };
        let fast = fast_report(&b.model, &b.test, seed).miou;
        ok &= precise >= fast;
        lines.push(format!(
            "seed {seed}: precise {precise:.4} vs fast {fast:.4}"
        ));
    }
    let detail = lines.join("; ");
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

// ---------------------------------------------------------------------------
// 9. Schedule and optimizer

fn criterion_9() -> Outcome {
    let cfg = OneCycleConfig::default();
    for max_lr in [0.006, 0.001] {
        for total in [3usize, 7, 100, 1234] {
            let trace: Vec<f64> = (0..total)
                .map(|s| onecycle_lr(s, total, max_lr, &cfg))
                .collect();
            ensure!(
                trace[0] == max_lr / 10.0,
                "lr(0) = {} for {max_lr}, {total}",
                trace[0]
            );
            ensure!(
                trace[total - 1] == max_lr / 1000.0,
                "final lr {} for {max_lr}, {total}",
                trace[total - 1]
            );
            let peak = trace.iter().copied().fold(f64::MIN, f64::max);
            ensure!(peak == max_lr, "peak {peak} for {max_lr}, {total}");
        }
    }
    let mut rng = stream(9, &[]);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let ac = AdamWConfig {
            beta1: rng.random_range(0.5..0.99),
            beta2: rng.random_range(0.9..0.9999),
            epsilon: 10f64.powf(rng.random_range(-10.0..-6.0)),
            weight_decay: rng.random_range(0.0..0.1),
        };
        let lr = rng.random_range(1e-4..1e-2);
        let w: Vec<f64> = (0..6).map(|_| rng.random_range(-2.0..2.0)).collect();
        let g: Vec<f64> = (0..6).map(|_| rng.random_range(-3.0..3.0)).collect();
        let mut p = Tensor::from_vec(2, 3, w.clone());
        AdamW::new(ac)
            .step([&mut p], &[Tensor::from_vec(2, 3, g.clone())], lr)
            .map_err(|e| e.to_string())?;
        for i in 0..6 {
            // First step: bias-corrected moments equal g and g².
            let expect = w[i] - lr * g[i] / (g[i].abs() + ac.epsilon) - lr * ac.weight_decay * w[i];
            let err = (p.data[i] - expect).abs();
            ensure!(err <= 1e-12, "AdamW first step: {} vs {expect}", p.data[i]);
            worst = worst.max(err);
        }
    }
    Ok(format!(
        "one-cycle endpoints and peaks exact, AdamW first step within {worst:.1e}"
    ))
}

// ---------------------------------------------------------------------------
// 10. CLI determinism

fn run_cli(dir: &Path, args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_shellseg"))
        .current_dir(dir)
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    ensure!(
        out.status.success(),
        "`shellseg {}` failed: {}",
        args.join(" "),
        String::from_utf8_lossy(&out.stderr)
    );
    Ok(())
}

fn files(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(
                    p.strip_prefix(root).unwrap().to_path_buf(),
                    std::fs::read(&p).unwrap(),
                );
            }
        }
    }
    out
}

fn criterion_10() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let dir = tmp.path();
    let model = "[model]\nstage_widths = [8, 16]\npool_voxel_sizes = [0.3, 0.6]\nk_neighbors = 6\n";
    let train =
        "[train]\nmax_epochs = 2\nvoxel_size = 0.2\ncrop_points = 600\neval_voxel_size = 0.2\n";
    let configs = [
        ("synth", "out = \"data\"\nseed = 4\n[synth]\nn_scenes = 6\n[synth.scene]\ndensity = 60.0\n".to_string()),
        ("stats", "out = \"stats\"\n[stats]\nmanifest = \"data/manifest.txt\"\n".to_string()),
        ("train", format!("out = \"train\"\nseed = 5\n[data]\nmanifest = \"data/manifest.txt\"\n{model}{train}")),
        (
            "finetune",
            format!(
                "out = \"finetune\"\nseed = 6\n[data]\nmanifest = \"data/manifest.txt\"\nlabel_space = \"pretrain-9\"\n[finetune]\ncheckpoint = \"train/checkpoint.bin\"\n{}",
                train.replace("[train]\n", "[train]\nmax_lr = 0.001\n")
            ),
        ),
        (
            "eval",
            "out = \"eval\"\nseed = 7\n[eval]\ncheckpoint = \"finetune/checkpoint.bin\"\nmanifest = \"data/manifest.txt\"\nvoxel_size = 0.2\n[eval.tta]\nyaw_angles = [0.0, 3.14159]\nmirror_x = false\n".to_string(),
        ),
        (
            "prelabel",
            "out = \"prelabel\"\nseed = 8\n[prelabel]\ncheckpoint = \"train/checkpoint.bin\"\nscenes = [\"data/scenes/scene_000.ply\", \"data/scenes/scene_001.ply\"]\nvoxel_size = 0.2\n".to_string(),
        ),
        (
            "render",
            "out = \"render\"\n[render]\nscene = \"data/scenes/scene_002.ply\"\nwidth = 256\nheight = 128\nlabels = \"class\"\n".to_string(),
        ),
    ];
    let mut compared = 0;
    for (cmd, text) in &configs {
        let cfg = dir.join(format!("{cmd}.toml"));
        std::fs::write(&cfg, text).map_err(|e| e.to_string())?;
        run_cli(dir, &[cmd, "--config", cfg.to_str().unwrap()])?;
        let out_dir = if *cmd == "synth" { "data" } else { cmd };
        let echo = dir.join(out_dir).join("resolved_config.toml");
        if *cmd == "synth" {
            // Later commands read this dataset; regenerate it in a sibling directory.
            run_cli(
                dir,
                &[
                    cmd,
                    "--config",
                    echo.to_str().unwrap(),
                    "--out",
                    "data_rerun",
                ],
            )?;
            let (a, b) = (files(&dir.join("data")), files(&dir.join("data_rerun")));
            ensure!(
                strip_echo(a) == strip_echo(b),
                "synth outputs differ on rerun"
            );
            compared += 1;
            continue;
        }
        let rerun = format!("{cmd}_rerun");
        run_cli(
            dir,
            &[cmd, "--config", echo.to_str().unwrap(), "--out", &rerun],
        )?;
        let (a, b) = (
            strip_echo(files(&dir.join(cmd))),
            strip_echo(files(&dir.join(&rerun))),
        );
        ensure!(!a.is_empty(), "{cmd} wrote nothing");
        for (name, bytes) in &a {
            ensure!(
                b.get(name) == Some(bytes),
                "{cmd}: {} differs on rerun",
                name.display()
            );
        }
        ensure!(a.len() == b.len(), "{cmd}: different file sets");
        compared += 1;
    }
    Ok(format!(
        "{compared} commands rerun from their config echo byte-identically"
    ))
}

fn strip_echo(mut files: BTreeMap<PathBuf, Vec<u8>>) -> BTreeMap<PathBuf, Vec<u8>> {
    files.remove(Path::new("resolved_config.toml"));
    files
}

// ---------------------------------------------------------------------------

fn main() -> ExitCode {
    let criteria: [(usize, &str, fn() -> Outcome); 10] = [
        (1, "gradient correctness", criterion_1),
        (2, "Lovász oracle", criterion_2),
        (3, "metrics oracle", criterion_3),
        (4, "sampling and voting oracles", criterion_4),
        (5, "translation correctness", criterion_5),
        (6, "end-to-end baseline", criterion_6),
        (7, "transfer-learning direction", criterion_7),
        (8, "precise test beats fast test", criterion_8),
        (9, "schedule and optimizer", criterion_9),
        (10, "determinism", criterion_10),
    ];
    let selected: BTreeSet<usize> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    let mut failed = 0;
    for (id, name, check) in criteria {
        if !selected.is_empty() && !selected.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|panic| {
            let msg = panic
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {id:>2} {name}: {detail} [{secs:.1}s]"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {id:>2} {name}: {detail} [{secs:.1}s]");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
