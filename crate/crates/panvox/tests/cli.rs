//! End-to-end checks of the `panvox` binary: exit codes, output files,
//! report formats.

use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn panvox(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_panvox")).args(args).output().expect("binary runs")
}

fn small_scene_file(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("scene.toml");
    std::fs::write(
        &path,
        r#"
        width = 64
        height = 48
        fx = 48.0
        fy = 48.0
        gt_voxel_size = 0.05

        [[class]]
        id = 1
        name = "wall"
        kind = "stuff"

        [[class]]
        id = 2
        name = "floor"
        kind = "stuff"

        [[class]]
        id = 3
        name = "crate"
        kind = "thing"

        [room]
        extents = [6.0, 6.0, 3.0]
        wall_class = 1
        floor_class = 2
        ceiling_class = 1

        [[object]]
        shape = "box"
        class = 3
        center = [3.0, 3.0, 0.5]
        size = [1.0, 1.0, 1.0]

        [trajectory]
        center = [3.0, 3.0, 0.7]
        radius = 2.0
        height = 1.5
        frames = 6
        "#,
    )
    .unwrap();
    path
}

#[test]
fn synth_reconstruct_evaluate_round_trip() {
    let tmp = TempDir::new().unwrap();
    let spec = small_scene_file(tmp.path());
    let seq = tmp.path().join("seq");
    let out = tmp.path().join("out");

    let synth = panvox(&[
        "synth",
        spec.to_str().unwrap(),
        seq.to_str().unwrap(),
        "--seed",
        "3",
    ]);
    assert!(synth.status.success(), "{synth:?}");
    let stdout = String::from_utf8(synth.stdout).unwrap();
    assert!(stdout.contains("6 frames"), "{stdout}");
    for name in ["intrinsics.txt", "labels.txt", "gt.panvox", "depth/000000.png", "segm/000005.cls"]
    {
        assert!(seq.join(name).is_file(), "missing {name}");
    }

    let recon = panvox(&[
        "reconstruct",
        seq.to_str().unwrap(),
        out.to_str().unwrap(),
        "--min-segment-pixels",
        "20",
    ]);
    assert!(recon.status.success(), "{recon:?}");
    for name in ["map.panvox", "registry.txt", "association.log", "timing.log", "run.cfg"] {
        assert!(out.join(name).is_file(), "missing {name}");
    }
    let cfg = std::fs::read_to_string(out.join("run.cfg")).unwrap();
    assert!(cfg.contains("voxel-size 0.05"));
    assert!(cfg.contains("min-segment-pixels 20"));

    let eval = panvox(&[
        "evaluate",
        out.join("map.panvox").to_str().unwrap(),
        seq.join("gt.panvox").to_str().unwrap(),
        seq.join("labels.txt").to_str().unwrap(),
        "--format",
        "tsv",
    ]);
    assert!(eval.status.success(), "{eval:?}");
    let report = String::from_utf8(eval.stdout).unwrap();
    let mean = report.lines().find(|l| l.starts_with("mean")).expect("mean line");
    let pq: f64 = mean.split('\t').nth(1).unwrap().parse().unwrap();
    assert!(pq > 0.5, "tiny scene PQ suspiciously low: {report}");
}

#[test]
fn evaluating_identical_dumps_gives_pq_one() {
    let tmp = TempDir::new().unwrap();
    let spec = small_scene_file(tmp.path());
    let seq = tmp.path().join("seq");
    assert!(panvox(&["synth", spec.to_str().unwrap(), seq.to_str().unwrap()]).status.success());

    let eval = panvox(&[
        "evaluate",
        seq.join("gt.panvox").to_str().unwrap(),
        seq.join("gt.panvox").to_str().unwrap(),
        seq.join("labels.txt").to_str().unwrap(),
        "--format",
        "tsv",
    ]);
    assert!(eval.status.success());
    let report = String::from_utf8(eval.stdout).unwrap();
    assert!(report.contains("mean\t1.000000\t1.000000\t1.000000"), "{report}");
}

#[test]
fn usage_errors_exit_one() {
    let out = panvox(&["reconstruct"]); // missing args
    assert_eq!(out.status.code(), Some(1), "{out:?}");
    let out = panvox(&["no-such-command"]);
    assert_eq!(out.status.code(), Some(1));
    let out = panvox(&["--help"]);
    assert_eq!(out.status.code(), Some(0));
}

#[test]
fn empty_sequence_is_a_data_error() {
    let tmp = TempDir::new().unwrap();
    let seq = tmp.path().join("seq");
    std::fs::create_dir_all(&seq).unwrap();
    std::fs::write(seq.join("labels.txt"), "1 wall stuff\n").unwrap();
    std::fs::write(seq.join("intrinsics.txt"), "48 48 32 24 64 48\n").unwrap();
    let out = panvox(&["reconstruct", seq.to_str().unwrap(), tmp.path().join("out").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2), "{out:?}");
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert!(stderr.contains("no frames"), "{stderr}");
    // Failed runs leave no partial outputs.
    assert!(!tmp.path().join("out").join("run.cfg").exists());
    assert!(!tmp.path().join("out").join("map.panvox").exists());
}

#[test]
fn voxel_size_mismatch_is_a_data_error() {
    let tmp = TempDir::new().unwrap();
    let a = tmp.path().join("a.panvox");
    let b = tmp.path().join("b.panvox");
    let labels = tmp.path().join("labels.txt");
    std::fs::write(&a, "panvox v1 0.05 1\n0 0 0 0 1 1 0\n").unwrap();
    std::fs::write(&b, "panvox v1 0.1 1\n0 0 0 0 1 1 0\n").unwrap();
    std::fs::write(&labels, "1 wall stuff\n").unwrap();
    let out = panvox(&[
        "evaluate",
        a.to_str().unwrap(),
        b.to_str().unwrap(),
        labels.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert!(stderr.contains("voxel size mismatch"), "{stderr}");
}

#[test]
fn invalid_scene_spec_names_the_field() {
    let tmp = TempDir::new().unwrap();
    let spec = small_scene_file(tmp.path());
    let text = std::fs::read_to_string(&spec).unwrap();
    std::fs::write(&spec, text.replace("center = [3.0, 3.0, 0.5]", "center = [5.9, 3.0, 0.5]"))
        .unwrap();
    let out = panvox(&["synth", spec.to_str().unwrap(), tmp.path().join("x").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert!(stderr.contains("object[0]"), "{stderr}");
    assert!(stderr.contains("out of bounds"), "{stderr}");
}

#[test]
fn synth_same_seed_is_byte_identical() {
    let tmp = TempDir::new().unwrap();
    let spec = small_scene_file(tmp.path());
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    assert!(panvox(&["synth", spec.to_str().unwrap(), a.to_str().unwrap(), "--seed", "9"])
        .status
        .success());
    assert!(panvox(&["synth", spec.to_str().unwrap(), b.to_str().unwrap(), "--seed", "9"])
        .status
        .success());
    for name in ["gt.panvox", "depth/000003.png", "segm/000003.png", "pose/000003.txt"] {
        assert_eq!(
            std::fs::read(a.join(name)).unwrap(),
            std::fs::read(b.join(name)).unwrap(),
            "{name} differs"
        );
    }
}
