//! One function per subcommand. Each writes `resolved_config.toml` into the
//! output directory before doing any work.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use shellseg::augment::TtaConfig;
use shellseg::eval::{cross_domain_eval, fast_eval, precise_test, ConfusionMatrix, MetricsReport};
use shellseg::io::{load_auto, save_pointcloud, PointFormat};
use shellseg::labelspace::{
    build_translation, builtin, default_aliases, translate_labels, LabelSpace, TranslationMap,
};
use shellseg::manifest::{DatasetManifest, Split};
use shellseg::model::{Checkpoint, Model};
use shellseg::rng::derive;
use shellseg::stats::{mean_std, ClassStats};
use shellseg::training::{self, TrainHistory};
use shellseg::{Label, PointCloud};

use crate::config::{require, resolve_space, RunConfig};
use crate::render;
use crate::CliError;

/// Label-space definition written next to checkpoints and datasets.
pub const SPACE_FILE: &str = "label_space.txt";
pub const CONFIG_ECHO: &str = "resolved_config.toml";

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    std::fs::write(path, contents).map_err(|e| CliError::io(path, e))
}

fn require_file(path: &Path, field: &str) -> Result<(), CliError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::Config(format!(
            "`{field}`: {} does not exist",
            path.display()
        )))
    }
}

/// Creates the output directory and writes the configuration echo.
fn prepare(cfg: &RunConfig) -> Result<PathBuf, CliError> {
    let out = cfg.out_dir()?;
    std::fs::create_dir_all(&out).map_err(|e| CliError::io(&out, e))?;
    write(&out.join(CONFIG_ECHO), cfg.to_toml())?;
    Ok(out)
}

fn seed_line(seed: u64) -> String {
    format!("# seed\t{seed}\n")
}

/// A built-in space by name, or the definition file in `dir` carrying that name.
fn named_space(name: &str, dir: &Path) -> Result<LabelSpace, CliError> {
    if let Some(s) = builtin(name) {
        return Ok(s);
    }
    let file = dir.join(SPACE_FILE);
    if file.is_file() {
        let space = LabelSpace::load(&file)?;
        if space.name == name {
            return Ok(space);
        }
    }
    Err(CliError::Config(format!(
        "label space `{name}` is neither built in nor defined in {}",
        file.display()
    )))
}

fn parent(path: &Path) -> &Path {
    path.parent().unwrap_or(Path::new("."))
}

fn load_manifest(path: &Path, field: &str) -> Result<(DatasetManifest, LabelSpace), CliError> {
    require_file(path, field)?;
    let manifest = DatasetManifest::load(path)?;
    let space = named_space(&manifest.label_space, parent(path))?;
    Ok((manifest, space))
}

fn load_model(path: &Path, field: &str) -> Result<(Checkpoint, LabelSpace), CliError> {
    require_file(path, field)?;
    let ckpt = Checkpoint::load(path)?;
    let space = named_space(&ckpt.label_space, parent(path))?;
    if space.len() != ckpt.model.num_classes() {
        return Err(CliError::Config(format!(
            "checkpoint predicts {} classes but `{}` has {}",
            ckpt.model.num_classes(),
            space.name,
            space.len()
        )));
    }
    Ok((ckpt, space))
}

/// Loads one split, with labels re-expressed in `space`.
fn load_split(
    manifest: &DatasetManifest,
    manifest_space: &LabelSpace,
    split: Split,
    space: &LabelSpace,
) -> Result<Vec<PointCloud>, CliError> {
    let mut scenes = manifest.load_split(split)?;
    if manifest_space != space {
        let map = build_translation(manifest_space, space, &default_aliases())?;
        for pc in &mut scenes {
            if let Some(labels) = &pc.labels {
                pc.labels = Some(translate_labels(labels, &map)?);
            }
        }
    }
    Ok(scenes)
}

fn save_run(
    out: &Path,
    model: Model,
    space: &LabelSpace,
    history: &TrainHistory,
    seed: u64,
) -> Result<(), CliError> {
    let ckpt = Checkpoint {
        model,
        label_space: space.name.clone(),
        step: history.lr_trace.len() as u64,
    };
    ckpt.save(&out.join("checkpoint.bin"))?;
    write(&out.join(SPACE_FILE), space.to_text())?;
    write(
        &out.join("history.tsv"),
        seed_line(seed) + &history.to_table(),
    )?;
    if let Some(last) = history.epochs.last() {
        let val = last
            .val
            .map(|v| format!(", val mIoU {:.4}", v.miou))
            .unwrap_or_default();
        println!(
            "{} epochs ({}), final loss {:.4}{val}",
            history.len(),
            history.stop_reason,
            last.loss
        );
    }
    Ok(())
}

/// Training space and manifest for train/finetune.
fn training_data(
    cfg: &RunConfig,
) -> Result<(Vec<PointCloud>, Vec<PointCloud>, LabelSpace), CliError> {
    let path = require(&cfg.data.manifest, "data.manifest")?;
    let (manifest, manifest_space) = load_manifest(path, "data.manifest")?;
    let space = match &cfg.data.label_space {
        Some(name) => resolve_space(name)?,
        None => manifest_space.clone(),
    };
    let train = load_split(&manifest, &manifest_space, Split::Train, &space)?;
    let val = load_split(&manifest, &manifest_space, Split::Val, &space)?;
    if train.is_empty() {
        return Err(CliError::Config(format!(
            "{} has no training scenes",
            path.display()
        )));
    }
    Ok((train, val, space))
}

fn seed_training(cfg: &mut RunConfig) -> Result<(), CliError> {
    cfg.train.seed = cfg.seed;
    cfg.model.seed = cfg.seed;
    if cfg.train.dump_path.is_none() {
        cfg.train.dump_path = Some(cfg.out_dir()?.join("diverged.bin"));
    }
    Ok(())
}

pub fn train(mut cfg: RunConfig) -> Result<(), CliError> {
    seed_training(&mut cfg)?;
    let (train, val, space) = training_data(&cfg)?;
    cfg.model.num_classes = space.len();
    let out = prepare(&cfg)?;
    let model = Model::new(cfg.model.clone())?;
    let (model, history) = training::train(model, &train, &val, &space, &cfg.train)?;
    save_run(&out, model, &space, &history, cfg.seed)
}

pub fn finetune(mut cfg: RunConfig) -> Result<(), CliError> {
    seed_training(&mut cfg)?;
    let path = require(&cfg.finetune.checkpoint, "finetune.checkpoint")?.clone();
    let (ckpt, _) = load_model(&path, "finetune.checkpoint")?;
    let (train, val, space) = training_data(&cfg)?;
    cfg.model = ckpt.model.config().clone();
    cfg.model.num_classes = space.len();
    cfg.model.seed = cfg.seed;
    let out = prepare(&cfg)?;
    if cfg.train.max_lr >= cfg.finetune.baseline_max_lr {
        eprintln!(
            "warning: fine-tuning max_lr {} is not below the pretraining max_lr {}; a reduced rate such as 0.001 is recommended",
            cfg.train.max_lr, cfg.finetune.baseline_max_lr
        );
    }
    let (model, history) = training::finetune(
        &ckpt,
        &space,
        &train,
        &val,
        &cfg.train,
        cfg.finetune.baseline_max_lr,
    )?;
    save_run(&out, model, &space, &history, cfg.seed)
}

/// Model classes excluded when scoring scenes from `map.source`: classes that
/// collect unmatched scene classes and classes no scene class maps to.
fn excluded_classes(map: &TranslationMap, num_classes: usize) -> BTreeSet<usize> {
    let reached: BTreeSet<usize> = map.mapping.iter().copied().collect();
    let mut excluded = map.excluded.clone();
    excluded.extend((0..num_classes).filter(|c| !reached.contains(c)));
    excluded
}

fn write_report(out: &Path, stem: &str, report: &MetricsReport, seed: u64) -> Result<(), CliError> {
    write(
        &out.join(format!("{stem}.tsv")),
        seed_line(seed) + &report.to_table(),
    )?;
    write(
        &out.join(format!("{stem}.txt")),
        format!("seed={seed}\n") + &report.to_key_values(),
    )
}

pub fn eval(mut cfg: RunConfig) -> Result<(), CliError> {
    if cfg.eval.manifest.is_none() {
        cfg.eval.manifest = cfg.data.manifest.clone();
    }
    let ckpt_path = require(&cfg.eval.checkpoint, "eval.checkpoint")?.clone();
    let manifest_path = require(&cfg.eval.manifest, "eval.manifest")?.clone();
    let (ckpt, model_space) = load_model(&ckpt_path, "eval.checkpoint")?;
    let (manifest, scene_space) = load_manifest(&manifest_path, "eval.manifest")?;
    let out = prepare(&cfg)?;
    let scenes = manifest.load_split(cfg.eval.split)?;
    if scenes.is_empty() {
        return Err(CliError::Config(format!(
            "split `{}` has no scenes",
            cfg.eval.split
        )));
    }
    let aliases = default_aliases();
    let map = build_translation(&scene_space, &model_space, &aliases)?;
    if !map.is_identity() {
        write(&out.join("translation.tsv"), map.to_table())?;
    }
    let model = &ckpt.model;
    let report = if cfg.eval.fast {
        let preds = shellseg::exec::map_range(scenes.len(), |i| {
            fast_eval(
                model,
                &scenes[i],
                cfg.eval.voxel_size,
                derive(cfg.seed, &[i as u64]),
            )
        });
        let mut conf = ConfusionMatrix::new(model.num_classes())
            .with_excluded(excluded_classes(&map, model.num_classes()));
        for (pc, pred) in scenes.iter().zip(preds) {
            let truth = pc
                .labels
                .as_ref()
                .ok_or_else(|| shellseg::Error::MissingLabels(pc.scene_id.clone()))?;
            conf.accumulate(&pred?, &translate_labels(truth, &map)?)?;
        }
        conf.metrics()?.with_names(&model_space)
    } else {
        let tta = if cfg.eval.tta_enabled {
            cfg.eval.tta.clone()
        } else {
            TtaConfig::identity()
        };
        cross_domain_eval(
            model,
            &model_space,
            &scenes,
            &scene_space,
            &aliases,
            cfg.eval.voxel_size,
            &tta,
            cfg.seed,
        )?
    };
    write_report(&out, "metrics", &report, cfg.seed)?;
    println!(
        "mIoU {:.4}  mAcc {:.4}  allAcc {:.4}",
        report.miou, report.macc, report.all_acc
    );
    Ok(())
}

/// Per-scene prelabel summary: class histogram and vote-margin statistics.
fn prelabel_summary(
    scene: &str,
    space: &LabelSpace,
    labels: &[Label],
    margins: &[f64],
    seed: u64,
) -> String {
    let mut out = seed_line(seed);
    let _ = writeln!(out, "# scene\t{scene}");
    out.push_str("class\tpoints\tshare\n");
    let mut counts = vec![0usize; space.len()];
    for &l in labels {
        counts[l as usize] += 1;
    }
    let n = labels.len().max(1) as f64;
    for (c, &k) in counts.iter().enumerate() {
        let _ = writeln!(out, "{}\t{k}\t{}", space.classes[c], k as f64 / n);
    }
    let (mean, std) = mean_std(margins);
    let min = margins.iter().copied().fold(f64::INFINITY, f64::min);
    let low = margins.iter().filter(|&&m| m < 0.5).count() as f64 / n;
    let _ = writeln!(out, "# margin_mean\t{mean}");
    let _ = writeln!(out, "# margin_std\t{std}");
    let _ = writeln!(out, "# margin_min\t{min}");
    let _ = writeln!(out, "# margin_below_half\t{low}");
    out
}

pub fn prelabel(cfg: RunConfig) -> Result<(), CliError> {
    let ckpt_path = require(&cfg.prelabel.checkpoint, "prelabel.checkpoint")?.clone();
    let (ckpt, model_space) = load_model(&ckpt_path, "prelabel.checkpoint")?;
    if cfg.prelabel.scenes.is_empty() {
        return Err(CliError::Config("`prelabel.scenes` is empty".into()));
    }
    let mut stems = BTreeSet::new();
    for p in &cfg.prelabel.scenes {
        require_file(p, "prelabel.scenes")?;
        let stem = p
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        if !stems.insert(stem.clone()) {
            return Err(CliError::Config(format!(
                "two scenes share the file name `{stem}`"
            )));
        }
    }
    let (space, map) = match &cfg.prelabel.translate_to {
        Some(name) => {
            let target = resolve_space(name)?;
            let map = build_translation(&model_space, &target, &default_aliases())?;
            (target, Some(map))
        }
        None => (model_space.clone(), None),
    };
    let out = prepare(&cfg)?;
    let tta = if cfg.prelabel.tta_enabled {
        cfg.prelabel.tta.clone()
    } else {
        TtaConfig::identity()
    };
    for (i, path) in cfg.prelabel.scenes.iter().enumerate() {
        let pc = load_auto(path)?;
        if let Some(truth) = &pc.labels {
            if let Some(&bad) = truth
                .iter()
                .find(|&&l| l != shellseg::IGNORE_LABEL && l as usize >= space.len())
            {
                return Err(CliError::Config(format!(
                    "{}: label {bad} does not fit the {} classes of `{}`; set `prelabel.translate_to`",
                    path.display(),
                    space.len(),
                    space.name
                )));
            }
        }
        let mut unlabeled = pc.clone();
        let truth = unlabeled.labels.take();
        let result = precise_test(
            &ckpt.model,
            &unlabeled,
            cfg.prelabel.voxel_size,
            &tta,
            derive(cfg.seed, &[i as u64]),
        )?;
        let labels = match &map {
            Some(m) => translate_labels(&result.labels, m)?,
            None => result.labels,
        };
        let stem = path.file_stem().unwrap().to_string_lossy().into_owned();
        let summary = prelabel_summary(
            &pc.scene_id,
            &space,
            &labels,
            &result.votes.margins(),
            cfg.seed,
        );
        write(&out.join(format!("{stem}.summary.tsv")), summary)?;
        if let Some(truth) = truth {
            let excluded = map.as_ref().map(|m| m.excluded.clone()).unwrap_or_default();
            let mut conf = ConfusionMatrix::new(space.len()).with_excluded(excluded);
            conf.accumulate(&labels, &truth)?;
            let mut report = conf.metrics()?.with_names(&space);
            report.precise = true;
            write_report(&out, &format!("{stem}.metrics"), &report, cfg.seed)?;
        }
        let labeled = PointCloud {
            labels: Some(labels),
            ..pc
        };
        save_pointcloud(
            &labeled,
            &out.join(format!("{stem}.ply")),
            PointFormat::PlyBinaryLe,
        )?;
        println!("{}: {} points labeled", path.display(), labeled.len());
    }
    write(&out.join(SPACE_FILE), space.to_text())
}

pub fn stats(mut cfg: RunConfig) -> Result<(), CliError> {
    if cfg.stats.manifest.is_none() {
        cfg.stats.manifest = cfg.data.manifest.clone();
    }
    let path = require(&cfg.stats.manifest, "stats.manifest")?.clone();
    let (manifest, space) = load_manifest(&path, "stats.manifest")?;
    let out = prepare(&cfg)?;
    let clouds = manifest.load_all()?;
    let stats = ClassStats::from_clouds(&clouds, space.len())?;
    let mut table = seed_line(cfg.seed);
    table.push_str("class\tpoints_mean\tpoints_std\tinstances_mean\tinstances_std\tpoint_share\n");
    for (c, name) in space.classes.iter().enumerate() {
        let inst = |v: &Option<Vec<f64>>| {
            v.as_ref()
                .map(|v| v[c].to_string())
                .unwrap_or_else(|| "-".into())
        };
        let _ = writeln!(
            table,
            "{name}\t{}\t{}\t{}\t{}\t{}",
            stats.points_mean[c],
            stats.points_std[c],
            inst(&stats.instances_mean),
            inst(&stats.instances_std),
            stats.point_share[c]
        );
    }
    write(&out.join("stats.tsv"), table)?;
    let planar: Vec<usize> = ["wall", "floor", "ceiling"]
        .iter()
        .filter_map(|n| space.index_of(n))
        .collect();
    let share = stats.share_of(&planar);
    let chart = out.join("stats.png");
    let bars = render::class_chart(&stats, cfg.stats.chart_width, cfg.stats.chart_height)?;
    bars.save(&chart).map_err(|e| CliError::Output {
        path: chart.clone(),
        message: e.to_string(),
    })?;
    let mut summary = seed_line(cfg.seed);
    let _ = writeln!(summary, "scenes\t{}", stats.num_scenes);
    let _ = writeln!(summary, "planar_share\t{share}");
    let _ = writeln!(summary, "ignore_share\t{}", stats.ignore_share);
    let _ = writeln!(summary, "bars\t{}", render::present_classes(&stats).len());
    write(&out.join("summary.tsv"), summary)?;
    println!("wall+floor+ceiling share: {share:.4}");
    Ok(())
}

pub fn synth(cfg: RunConfig) -> Result<(), CliError> {
    let out = prepare(&cfg)?;
    let s = &cfg.synth;
    let manifest = shellseg::synth::generate_dataset(
        &s.scene, s.n_scenes, s.split, cfg.seed, &out, s.variant,
    )?;
    let (train, val, test) = manifest.counts();
    println!(
        "{} scenes: {train} train / {val} val / {test} test",
        manifest.scenes.len()
    );
    Ok(())
}

pub fn render(cfg: RunConfig) -> Result<(), CliError> {
    let path = require(&cfg.render.scene, "render.scene")?.clone();
    require_file(&path, "render.scene")?;
    let out = prepare(&cfg)?;
    let pc = load_auto(&path)?;
    if pc.is_empty() {
        return Err(
            shellseg::Error::InvalidCloud(format!("{} has no points", path.display())).into(),
        );
    }
    let kept = shellseg::cloud::distance_filter(&pc, cfg.render.max_range)?;
    if kept.is_empty() {
        eprintln!(
            "warning: no point of {} lies within {} m; the panorama is empty",
            path.display(),
            cfg.render.max_range
        );
    }
    let img = render::panorama(
        &kept,
        cfg.render.width,
        cfg.render.height,
        cfg.render.labels,
    )?;
    let file = out.join("panorama.png");
    img.save(&file).map_err(|e| CliError::Output {
        path: file.clone(),
        message: e.to_string(),
    })
}
