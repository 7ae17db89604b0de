use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use image::Rgb;
use shellseg::eval::ConfusionMatrix;
use shellseg::io::{load_auto, save_pointcloud, PointFormat};
use shellseg::labelspace::target_space;
use shellseg::PointCloud;
use tempfile::TempDir;

fn shellseg(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_shellseg"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(out: Output) -> Output {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout:\n{}\nstderr:\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn read(path: impl AsRef<Path>) -> String {
    std::fs::read_to_string(path.as_ref())
        .unwrap_or_else(|e| panic!("{}: {e}", path.as_ref().display()))
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

const TRAIN: &str = r#"
[data]
manifest = "data/manifest.txt"
[model]
stage_widths = [8, 16]
pool_voxel_sizes = [0.3, 0.6]
k_neighbors = 6
[train]
max_epochs = 2
voxel_size = 0.2
crop_points = 600
eval_voxel_size = 0.2
"#;

/// Six small synthetic scenes under `dir/data`.
fn dataset(dir: &Path) {
    write(
        dir,
        "synth.toml",
        "out = \"data\"\n[synth]\nn_scenes = 6\n[synth.scene]\ndensity = 60.0\n",
    );
    ok(shellseg(dir, &["synth", "--config", "synth.toml"]));
}

fn trained(dir: &Path) {
    dataset(dir);
    write(dir, "train.toml", &format!("out = \"run\"\n{TRAIN}"));
    ok(shellseg(dir, &["train", "--config", "train.toml"]));
}

fn kv(text: &str, key: &str) -> String {
    text.lines()
        .find_map(|l| l.strip_prefix(&format!("{key}=")))
        .unwrap_or_else(|| panic!("no `{key}`"))
        .to_string()
}

#[test]
fn training_writes_checkpoint_history_and_echo() {
    let tmp = TempDir::new().unwrap();
    trained(tmp.path());
    let run = tmp.path().join("run");
    for f in [
        "checkpoint.bin",
        "history.tsv",
        "resolved_config.toml",
        "label_space.txt",
    ] {
        assert!(run.join(f).is_file(), "{f}");
    }
    let history = read(run.join("history.tsv"));
    assert!(history.starts_with("# seed\t0\n"));
    let rows: Vec<&str> = history
        .lines()
        .filter(|l| l.starts_with(char::is_numeric))
        .collect();
    assert_eq!(rows.len(), 2);
    assert!(rows
        .iter()
        .all(|r| !r.split('\t').nth(3).unwrap().starts_with('-')));
}

#[test]
fn rerun_from_echo_is_byte_identical() {
    let tmp = TempDir::new().unwrap();
    trained(tmp.path());
    let dir = tmp.path();
    ok(shellseg(
        dir,
        &[
            "train",
            "--config",
            "run/resolved_config.toml",
            "--out",
            "rerun",
        ],
    ));
    assert_eq!(
        read(dir.join("run/history.tsv")),
        read(dir.join("rerun/history.tsv"))
    );
    assert_eq!(
        std::fs::read(dir.join("run/checkpoint.bin")).unwrap(),
        std::fs::read(dir.join("rerun/checkpoint.bin")).unwrap()
    );

    write(dir, "eval.toml", "out = \"ev\"\n[eval]\ncheckpoint = \"run/checkpoint.bin\"\nmanifest = \"data/manifest.txt\"\nvoxel_size = 0.2\n");
    ok(shellseg(
        dir,
        &["eval", "--config", "eval.toml", "--tta", "off"],
    ));
    ok(shellseg(
        dir,
        &[
            "eval",
            "--config",
            "ev/resolved_config.toml",
            "--out",
            "ev2",
        ],
    ));
    assert_eq!(
        read(dir.join("ev/metrics.txt")),
        read(dir.join("ev2/metrics.txt"))
    );
    assert_eq!(
        read(dir.join("ev/metrics.tsv")),
        read(dir.join("ev2/metrics.tsv"))
    );
    assert!(read(dir.join("ev/resolved_config.toml")).contains("tta_enabled = false"));
}

#[test]
fn seed_flag_changes_the_run() {
    let tmp = TempDir::new().unwrap();
    trained(tmp.path());
    ok(shellseg(
        tmp.path(),
        &[
            "train",
            "--config",
            "train.toml",
            "--out",
            "s7",
            "--seed",
            "7",
        ],
    ));
    let history = read(tmp.path().join("s7/history.tsv"));
    assert!(history.starts_with("# seed\t7\n"));
    assert_ne!(history, read(tmp.path().join("run/history.tsv")));
}

#[test]
fn finetune_warns_about_an_unreduced_rate_and_proceeds() {
    let tmp = TempDir::new().unwrap();
    trained(tmp.path());
    let base = format!("out = \"ft\"\n{TRAIN}\n[finetune]\ncheckpoint = \"run/checkpoint.bin\"\nbaseline_max_lr = 0.006\n");
    write(
        tmp.path(),
        "ft.toml",
        &base.replace("[train]\n", "[train]\nmax_lr = 0.006\n"),
    );
    let out = ok(shellseg(tmp.path(), &["finetune", "--config", "ft.toml"]));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(
        stderr.contains("warning") && stderr.contains("0.001"),
        "{stderr}"
    );
    assert!(tmp.path().join("ft/checkpoint.bin").is_file());

    write(
        tmp.path(),
        "ft2.toml",
        &base
            .replace("[train]\n", "[train]\nmax_lr = 0.001\n")
            .replace("\"ft\"", "\"ft2\""),
    );
    let out = ok(shellseg(tmp.path(), &["finetune", "--config", "ft2.toml"]));
    assert!(!String::from_utf8_lossy(&out.stderr).contains("warning"));
}

#[test]
fn prelabel_round_trip_matches_in_process_scoring() {
    let tmp = TempDir::new().unwrap();
    trained(tmp.path());
    let dir = tmp.path();
    let scene = dir.join("data/scenes/scene_002.ply");
    let before = std::fs::read(&scene).unwrap();
    let unlabeled = PointCloud {
        labels: None,
        ..load_auto(&scene).unwrap()
    };
    save_pointcloud(&unlabeled, &dir.join("bare.ply"), PointFormat::PlyBinaryLe).unwrap();
    write(dir, "pl.toml", "out = \"pl\"\n[prelabel]\ncheckpoint = \"run/checkpoint.bin\"\nvoxel_size = 0.2\ntta_enabled = false\n");
    ok(shellseg(
        dir,
        &[
            "prelabel",
            "--config",
            "pl.toml",
            "data/scenes/scene_002.ply",
            "bare.ply",
        ],
    ));
    assert_eq!(std::fs::read(&scene).unwrap(), before);

    let out = dir.join("pl");
    let predicted = load_auto(&out.join("scene_002.ply")).unwrap();
    let truth = load_auto(&scene).unwrap().labels.unwrap();
    let mut conf = ConfusionMatrix::new(11);
    conf.accumulate(predicted.labels.as_ref().unwrap(), &truth)
        .unwrap();
    let report = conf.metrics().unwrap();
    let written = read(out.join("scene_002.metrics.txt"));
    assert_eq!(kv(&written, "miou"), report.miou.to_string());
    assert_eq!(kv(&written, "all_acc"), report.all_acc.to_string());
    assert_eq!(kv(&written, "iou.wall"), report.iou[2].to_string());

    assert!(out.join("bare.ply").is_file());
    assert!(!out.join("bare.metrics.txt").exists());
    let summary = read(out.join("bare.summary.tsv"));
    assert!(summary.contains("# margin_mean\t"));
    let counted: usize = summary
        .lines()
        .filter(|l| !l.starts_with('#') && !l.starts_with("class"))
        .map(|l| l.split('\t').nth(1).unwrap().parse::<usize>().unwrap())
        .sum();
    assert_eq!(counted, unlabeled.len());
    assert_eq!(predicted.positions, unlabeled.positions);
}

#[test]
fn prelabel_translates_into_another_space() {
    let tmp = TempDir::new().unwrap();
    trained(tmp.path());
    write(tmp.path(), "pl.toml", "out = \"pl\"\n[prelabel]\ncheckpoint = \"run/checkpoint.bin\"\nvoxel_size = 0.2\ntta_enabled = false\ntranslate_to = \"pretrain-9\"\n");
    let pc = load_auto(&tmp.path().join("data/scenes/scene_001.ply")).unwrap();
    let bare = PointCloud {
        labels: None,
        ..pc.clone()
    };
    save_pointcloud(
        &bare,
        &tmp.path().join("bare.ply"),
        PointFormat::PlyBinaryLe,
    )
    .unwrap();
    ok(shellseg(
        tmp.path(),
        &["prelabel", "--config", "pl.toml", "bare.ply"],
    ));
    let labels = load_auto(&tmp.path().join("pl/bare.ply"))
        .unwrap()
        .labels
        .unwrap();
    assert!(labels.iter().all(|&l| l < 9));
    assert!(read(tmp.path().join("pl/label_space.txt")).starts_with("# label_space pretrain-9"));

    // Target-space truth does not fit the nine pretraining classes.
    assert!(pc.labels.as_ref().unwrap().iter().any(|&l| l >= 9));
    let out = shellseg(
        tmp.path(),
        &[
            "prelabel",
            "--config",
            "pl.toml",
            "--out",
            "pl2",
            "data/scenes/scene_001.ply",
        ],
    );
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn stats_chart_and_planar_share() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    ok(shellseg(dir, &["synth", "--out", "data"]));
    assert_eq!(
        read(dir.join("data/manifest.txt"))
            .lines()
            .filter(|l| !l.starts_with('#'))
            .count(),
        36
    );
    write(
        dir,
        "stats.toml",
        "out = \"st\"\n[stats]\nmanifest = \"data/manifest.txt\"\n",
    );
    ok(shellseg(dir, &["stats", "--config", "stats.toml"]));
    let summary = read(dir.join("st/summary.tsv"));
    let field = |k: &str| -> f64 {
        summary
            .lines()
            .find_map(|l| l.strip_prefix(&format!("{k}\t")))
            .unwrap()
            .parse()
            .unwrap()
    };
    assert!((field("planar_share") - 0.943).abs() <= 0.01, "{summary}");
    let table = read(dir.join("st/stats.tsv"));
    let present = table
        .lines()
        .skip(2)
        .filter(|l| l.split('\t').nth(1).unwrap().parse::<f64>().unwrap() > 0.0)
        .count();
    assert_eq!(field("bars") as usize, present);
    let chart = image::open(dir.join("st/stats.png")).unwrap();
    assert_eq!((chart.width(), chart.height()), (800, 600));
}

#[test]
fn single_scene_stats_have_zero_spread() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    write(dir, "synth.toml", "out = \"data\"\n[synth]\nn_scenes = 1\n");
    ok(shellseg(dir, &["synth", "--config", "synth.toml"]));
    write(
        dir,
        "stats.toml",
        "out = \"st\"\n[stats]\nmanifest = \"data/manifest.txt\"\n",
    );
    ok(shellseg(dir, &["stats", "--config", "stats.toml"]));
    for line in read(dir.join("st/stats.tsv")).lines().skip(2) {
        let cols: Vec<&str> = line.split('\t').collect();
        assert_eq!(cols[2].parse::<f64>().unwrap(), 0.0, "{line}");
        assert_eq!(cols[4].parse::<f64>().unwrap(), 0.0, "{line}");
    }
}

fn render(
    dir: &Path,
    points: Vec<[f64; 3]>,
    colors: Vec<[u8; 3]>,
    extra: &[&str],
) -> (Output, Option<image::RgbImage>) {
    let pc = PointCloud::new("r", points).with_colors(colors);
    save_pointcloud(&pc, &dir.join("scene.ply"), PointFormat::PlyAscii).unwrap();
    let mut args = vec!["render", "--out", "pano", "scene.ply"];
    args.extend_from_slice(extra);
    let out = shellseg(dir, &args);
    let img = image::open(dir.join("pano/panorama.png"))
        .ok()
        .map(|i| i.to_rgb8());
    (out, img)
}

#[test]
fn render_places_a_horizon_point_at_the_center() {
    let tmp = TempDir::new().unwrap();
    write(tmp.path(), "r.toml", "[render]\nwidth = 64\nheight = 32\n");
    let (out, img) = render(
        tmp.path(),
        vec![[5.0, 0.0, 0.0]],
        vec![[9, 99, 199]],
        &["--config", "r.toml"],
    );
    ok(out);
    let img = img.unwrap();
    for (x, y, p) in img.enumerate_pixels() {
        let expected = if (x, y) == (32, 16) {
            Rgb([9, 99, 199])
        } else {
            Rgb([255, 255, 0])
        };
        assert_eq!(*p, expected, "({x}, {y})");
    }
}

#[test]
fn render_depth_test_and_empty_after_filter() {
    let tmp = TempDir::new().unwrap();
    write(
        tmp.path(),
        "r.toml",
        "[render]\nwidth = 16\nheight = 8\nmax_range = 25.0\n",
    );
    let (out, img) = render(
        tmp.path(),
        vec![[0.0, 2.0, 0.0], [0.0, 1.0, 0.0]],
        vec![[1, 2, 3], [4, 5, 6]],
        &["--config", "r.toml"],
    );
    ok(out);
    let img = img.unwrap();
    assert!(img.pixels().any(|p| *p == Rgb([4, 5, 6])));
    assert!(!img.pixels().any(|p| *p == Rgb([1, 2, 3])));

    let (out, img) = render(
        tmp.path(),
        vec![[30.0, 0.0, 0.0]],
        vec![[1, 2, 3]],
        &["--config", "r.toml"],
    );
    let out = ok(out);
    assert!(String::from_utf8_lossy(&out.stderr).contains("warning"));
    assert!(img.unwrap().pixels().all(|p| *p == Rgb([255, 255, 0])));

    let (out, _) = render(tmp.path(), vec![], vec![], &["--config", "r.toml"]);
    assert!(!out.status.success());
}

#[test]
fn render_class_coloring_needs_labels() {
    let tmp = TempDir::new().unwrap();
    let (out, _) = render(
        tmp.path(),
        vec![[1.0, 0.0, 0.0]],
        vec![[1, 1, 1]],
        &["--labels", "class"],
    );
    assert!(!out.status.success());
    let pc = PointCloud::new("r", vec![[1.0, 0.0, 0.0]])
        .with_colors(vec![[1, 1, 1]])
        .with_labels(vec![2]);
    save_pointcloud(&pc, &tmp.path().join("l.ply"), PointFormat::PlyAscii).unwrap();
    ok(shellseg(
        tmp.path(),
        &["render", "--out", "p2", "--labels", "class", "l.ply"],
    ));
    let img = image::open(tmp.path().join("p2/panorama.png"))
        .unwrap()
        .to_rgb8();
    let wall = shellseg::synth::default_palette()[target_space().index_of("wall").unwrap()];
    assert_eq!(img.pixels().filter(|p| **p == Rgb(wall)).count(), 1);
}

#[test]
fn exit_codes_separate_config_io_and_divergence() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    write(dir, "bad.toml", "[train]\nmax_epoch = 3\n");
    let out = shellseg(dir, &["train", "--config", "bad.toml"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("max_epoch"));

    write(
        dir,
        "nodata.toml",
        "out = \"x\"\n[data]\nmanifest = \"missing.txt\"\n",
    );
    assert_eq!(
        shellseg(dir, &["train", "--config", "nodata.toml"])
            .status
            .code(),
        Some(2)
    );

    dataset(dir);
    std::fs::write(
        dir.join("data/scenes/scene_003.ply"),
        b"ply\nformat ascii 1.0\nelement vertex 2\n",
    )
    .unwrap();
    write(dir, "t.toml", &format!("out = \"run\"\n{TRAIN}"));
    assert_eq!(
        shellseg(dir, &["train", "--config", "t.toml"])
            .status
            .code(),
        Some(3)
    );

    dataset(dir);
    write(
        dir,
        "div.toml",
        &format!("out = \"div\"\n{TRAIN}").replace("[train]\n", "[train]\nmax_lr = 1e300\n"),
    );
    let out = shellseg(dir, &["train", "--config", "div.toml"]);
    assert_eq!(
        out.status.code(),
        Some(4),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(dir.join("div/diverged.bin").is_file());
}
