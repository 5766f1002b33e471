use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ttogm::cloud::{write_cloud, CloudFormat};
use ttogm::datagen::{fixtures, lidar, poses_along};
use ttogm::gridmap::{read_map, write_map, CodeMap, GridGeometry, FREE, OCCUPIED, UNKNOWN};

fn ttogm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ttogm")).args(args).output().expect("spawn ttogm")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Twelve scans along a straight stretch of the corridor fixture.
fn write_scans(dir: &Path, count: usize) {
    let fp = fixtures::corridor_and_room(0.05);
    let poses = poses_along(&[(5.0, 1.2), (12.0, 1.2)], 0.3, 0.1);
    let clouds = lidar::simulate_sequence(&fp, &poses[..count], &lidar::LidarConfig::default(), 3);
    fs::create_dir_all(dir).unwrap();
    for c in &clouds {
        write_cloud(dir.join(format!("scan_{:04}.pcd", c.scan_index)), c, CloudFormat::PcdBinary).unwrap();
    }
}

fn gap_map() -> CodeMap {
    let geo = GridGeometry {
        width: 12,
        height: 5,
        resolution: 0.05,
        origin_x: 0.0,
        origin_y: 0.0,
    };
    let mut m = CodeMap::filled(geo, FREE);
    for c in (0..5).chain(6..11) {
        m.set(2, c, OCCUPIED);
    }
    m
}

#[test]
fn usage_errors_exit_1() {
    assert_eq!(code(&ttogm(&["frobnicate"])), 1);
    assert_eq!(code(&ttogm(&["eval"])), 1);
    assert_eq!(code(&ttogm(&["--help"])), 0);
}

#[test]
fn bad_thresholds_are_rejected_before_reading_input() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.toml");
    fs::write(&cfg, "[filtration]\nt2 = 0.99\nt3 = 0.96\n").unwrap();
    let out = ttogm(&["map", "/nonexistent/scans", "--config", s(&cfg), "--output", s(&tmp.path().join("o"))]);
    assert_eq!(code(&out), 1, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("invalid configuration"));
    assert!(!tmp.path().join("o").exists());
}

#[test]
fn datagen_writes_pairs_and_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let out = ttogm(&["datagen", "--count", "3", "--seed", "5", "--output", s(tmp.path())]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let pgms: Vec<PathBuf> = fs::read_dir(tmp.path().join("pairs"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "pgm"))
        .collect();
    assert_eq!(pgms.len(), 6);
    let manifest = fs::read_to_string(tmp.path().join("manifest.csv")).unwrap();
    assert_eq!(manifest.lines().count(), 4);
    assert!(manifest.starts_with("id,floorplan,seed,"));
}

#[test]
fn eval_identical_maps_and_missing_truth() {
    let tmp = tempfile::tempdir().unwrap();
    let map = tmp.path().join("map.pgm");
    write_map(&map, &gap_map(), None).unwrap();
    let csv = tmp.path().join("iou.csv");
    let out = ttogm(&["eval", s(&map), "--truth", s(&map), "--csv", s(&csv)]);
    assert_eq!(code(&out), 0);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("occupied IoU 1.000000"), "{stdout}");
    assert!(stdout.contains("unoccupied IoU 1.000000"), "{stdout}");
    assert!(fs::read_to_string(&csv).unwrap().contains("occupied,1"));

    let out = ttogm(&["eval", s(&map), "--truth", s(&tmp.path().join("missing.pgm"))]);
    assert_eq!(code(&out), 2);
}

#[test]
fn clean_identity_morph_and_missing_model() {
    let tmp = tempfile::tempdir().unwrap();
    let map = tmp.path().join("gap.pgm");
    write_map(&map, &gap_map(), None).unwrap();

    let out_id = tmp.path().join("identity");
    let out = ttogm(&["clean", s(&map), "--cleaner", "identity", "--output", s(&out_id)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(fs::read(out_id.join("gap.pgm")).unwrap(), fs::read(&map).unwrap());

    let out_m = tmp.path().join("morph");
    assert_eq!(code(&ttogm(&["clean", s(&map), "--cleaner", "morph", "--output", s(&out_m)])), 0);
    let (cleaned, _) = read_map(&out_m.join("gap.pgm")).unwrap();
    assert_eq!(cleaned.get(2, 5), OCCUPIED);

    let out_x = tmp.path().join("model");
    let out = ttogm(&["clean", s(&map), "--cleaner", "model:/nonexistent/model.onnx", "--output", s(&out_x)]);
    assert_eq!(code(&out), 3);
    assert!(String::from_utf8_lossy(&out.stderr).contains("model not found"));
    assert!(!out_x.exists());
}

#[test]
fn clean_through_external_stub() {
    let tmp = tempfile::tempdir().unwrap();
    let map = tmp.path().join("gap.pgm");
    write_map(&map, &gap_map(), None).unwrap();
    let model = format!("model:{}", env!("CARGO_BIN_EXE_ttogm-model-stub"));
    let out = ttogm(&["clean", s(&map), "--cleaner", &model, "--output", s(&tmp.path().join("o"))]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let (cleaned, _) = read_map(&tmp.path().join("o/gap.pgm")).unwrap();
    assert!(cleaned.codes.iter().all(|&c| matches!(c, FREE | OCCUPIED | UNKNOWN)));
}

#[test]
fn map_is_deterministic_and_writes_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let scans = tmp.path().join("scans");
    write_scans(&scans, 12);
    let cfg = tmp.path().join("cfg.toml");
    fs::write(&cfg, "initial_pose = [5.0, 1.2, 0.0]\n").unwrap();
    let run = |name: &str| {
        let dir = tmp.path().join(name);
        let out = ttogm(&["map", s(&scans), "--config", s(&cfg), "--cleaner", "morph", "--every-n", "5", "--output", s(&dir)]);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
        dir
    };
    let (a, b) = (run("a"), run("b"));
    for f in ["map.pgm", "map.meta.toml", "evidence.pgm", "trajectory.txt"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let traj = fs::read_to_string(a.join("trajectory.txt")).unwrap();
    assert_eq!(traj.lines().filter(|l| !l.starts_with('#')).count(), 12);
    let (map, _) = read_map(&a.join("map.pgm")).unwrap();
    assert!(map.count(OCCUPIED) > 0 && map.count(FREE) > 0);
}

#[test]
fn map_needs_two_scans() {
    let tmp = tempfile::tempdir().unwrap();
    let scans = tmp.path().join("scans");
    write_scans(&scans, 1);
    let out = ttogm(&["map", s(&scans), "--output", s(&tmp.path().join("o"))]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("at least 2"));
}

#[test]
fn bench_reports_every_scan() {
    let tmp = tempfile::tempdir().unwrap();
    let scans = tmp.path().join("scans");
    write_scans(&scans, 10);
    let cfg = tmp.path().join("cfg.toml");
    fs::write(&cfg, "initial_pose = [5.0, 1.2, 0.0]\n[cleaner]\nkind = \"morph\"\nevery_n = 5\n").unwrap();
    let out = ttogm(&["bench", s(&scans), "--config", s(&cfg), "--output", s(tmp.path())]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(tmp.path().join("latency.csv")).unwrap();
    assert!(csv.lines().count() > 1);
    assert!(String::from_utf8_lossy(&out.stdout).contains("registration"));
}
