use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use ttogm::datagen::{fixtures, lidar, poses_along};
use ttogm_ffi::*;
use TtogmStatus::*;

fn last_error() -> String {
    let p = ttogm_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn map_from(info: &TtogmMapInfo, codes: &[u8]) -> Result<*mut TtogmMap, TtogmStatus> {
    let mut out = ptr::null_mut();
    match unsafe { ttogm_map_from_codes(info, codes.as_ptr(), &mut out) } {
        TTOGM_OK => Ok(out),
        s => Err(s),
    }
}

fn info(w: usize, h: usize) -> TtogmMapInfo {
    TtogmMapInfo {
        width: w,
        height: h,
        resolution: 0.05,
        origin_x: -1.0,
        origin_y: 2.0,
    }
}

#[test]
fn map_round_trip_and_queries() {
    let tmp = tempfile::tempdir().unwrap();
    let mut codes = vec![0u8; 8 * 6];
    codes[9] = 100;
    codes[40] = 255;
    let map = map_from(&info(8, 6), &codes).unwrap();
    unsafe {
        let got = std::slice::from_raw_parts(ttogm_map_codes(map), 48);
        assert_eq!(got, &codes[..]);
        let path = CString::new(tmp.path().join("m.pgm").to_str().unwrap()).unwrap();
        assert_eq!(ttogm_map_write(map, path.as_ptr()), TTOGM_OK);
        let mut back = ptr::null_mut();
        assert_eq!(ttogm_map_read(path.as_ptr(), &mut back), TTOGM_OK);
        let mut i = TtogmMapInfo::default();
        assert_eq!(ttogm_map_info(back, &mut i), TTOGM_OK);
        assert_eq!(i, info(8, 6));
        let mut v = f64::NAN;
        assert_eq!(ttogm_map_iou(map, back, TtogmIouClass::TTOGM_IOU_UNOCCUPIED as i32, &mut v), TTOGM_OK);
        assert_eq!(v, 1.0);
        ttogm_map_free(back);
        ttogm_map_free(map);
    }
}

#[test]
fn invalid_arguments_are_reported_not_crashed() {
    unsafe {
        let mut out = ptr::null_mut();
        assert_eq!(ttogm_map_read(ptr::null(), &mut out), TTOGM_ERR_INVALID_ARGUMENT);
        assert!(last_error().contains("path is null"));
        let bad = [0xffu8, 0xfe, 0];
        assert_eq!(ttogm_map_read(bad.as_ptr().cast(), &mut out), TTOGM_ERR_INVALID_ARGUMENT);
        assert!(last_error().contains("UTF-8"));
        assert_eq!(ttogm_map_read(c"x.pgm".as_ptr(), ptr::null_mut()), TTOGM_ERR_INVALID_ARGUMENT);

        assert_eq!(map_from(&info(0, 3), &[]), Err(TTOGM_ERR_INVALID_ARGUMENT));
        assert_eq!(map_from(&info(2, 1), &[0, 7]), Err(TTOGM_ERR_DATA));
        assert!(last_error().contains("holds 7"));

        let map = map_from(&info(2, 1), &[0, 100]).unwrap();
        let mut v = 0.0;
        assert_eq!(ttogm_map_iou(map, map, 5, &mut v), TTOGM_ERR_INVALID_ARGUMENT);
        let mut cleaned = ptr::null_mut();
        assert_eq!(ttogm_map_clean(map, c"sharpen".as_ptr(), &mut cleaned), TTOGM_ERR_INVALID_CONFIG);
        assert_eq!(ttogm_map_clean(map, c"model:/no/such.onnx".as_ptr(), &mut cleaned), TTOGM_ERR_MODEL);
        assert!(cleaned.is_null());
        ttogm_map_free(map);

        assert_eq!(ttogm_map_codes(ptr::null()), ptr::null());
        assert_eq!(ttogm_mapper_scan_count(ptr::null()), 0);
        ttogm_map_free(ptr::null_mut());
        ttogm_mapper_free(ptr::null_mut());
    }
}

#[test]
fn last_error_is_per_thread() {
    unsafe {
        let mut out = ptr::null_mut();
        assert_eq!(ttogm_map_read(c"/nonexistent/a.pgm".as_ptr(), &mut out), TTOGM_ERR_IO);
    }
    assert!(last_error().contains("/nonexistent/a."), "{}", last_error());
    let other = std::thread::spawn(|| ttogm_last_error().is_null()).join().unwrap();
    assert!(other);
}

#[test]
fn bad_config_is_rejected() {
    let mut m = ptr::null_mut();
    unsafe {
        assert_eq!(ttogm_mapper_new(c"[gicp]\nknn = 0\n".as_ptr(), &mut m), TTOGM_ERR_INVALID_CONFIG);
        assert!(m.is_null());
        assert_eq!(ttogm_mapper_new(c"not toml [".as_ptr(), &mut m), TTOGM_ERR_INVALID_CONFIG);
    }
}

#[test]
fn mapper_tracks_a_simulated_corridor() {
    let fp = fixtures::corridor_and_room(0.05);
    let poses = poses_along(&[(5.0, 1.2), (9.0, 1.2)], 0.3, 0.1);
    let clouds = lidar::simulate_sequence(&fp, &poses, &lidar::LidarConfig::default(), 1);
    let config = CString::new("initial_pose = [5.0, 1.2, 0.0]\n[cleaner]\nkind = \"morph\"\nevery_n = 0\n").unwrap();
    let mut mapper = ptr::null_mut();
    unsafe {
        assert_eq!(ttogm_mapper_new(config.as_ptr(), &mut mapper), TTOGM_OK);
        for (cloud, truth) in clouds.iter().zip(&poses) {
            let xyzi: Vec<f64> = cloud.points.iter().flat_map(|p| [p.x, p.y, p.z, p.intensity]).collect();
            let mut pose = TtogmPose2D::default();
            assert_eq!(ttogm_mapper_process(mapper, xyzi.as_ptr(), cloud.len(), &mut pose), TTOGM_OK);
            assert!((pose.x - truth.x).hypot(pose.y - truth.y) < 0.05, "{pose:?} vs {truth:?}");
        }
        assert_eq!(ttogm_mapper_scan_count(mapper), poses.len() as u64);

        let mut snap = ptr::null_mut();
        assert_eq!(ttogm_mapper_snapshot(mapper, &mut snap), TTOGM_OK);
        let mut map = ptr::null_mut();
        assert_eq!(ttogm_mapper_finish(mapper, &mut map), TTOGM_OK);
        let mut i = TtogmMapInfo::default();
        assert_eq!(ttogm_map_info(map, &mut i), TTOGM_OK);
        let codes = std::slice::from_raw_parts(ttogm_map_codes(map), i.width * i.height);
        assert!(codes.contains(&100) && codes.contains(&0));

        // a finished mapper refuses further work but can still be freed
        assert_eq!(ttogm_mapper_process(mapper, ptr::null(), 0, ptr::null_mut()), TTOGM_ERR_INVALID_ARGUMENT);
        assert!(last_error().contains("finished"));
        let mut again = ptr::null_mut();
        assert_eq!(ttogm_mapper_finish(mapper, &mut again), TTOGM_ERR_INVALID_ARGUMENT);

        ttogm_map_free(snap);
        ttogm_map_free(map);
        ttogm_mapper_free(mapper);
    }
}

#[test]
fn empty_scan_is_a_data_error() {
    let mut mapper = ptr::null_mut();
    unsafe {
        assert_eq!(ttogm_mapper_new(ptr::null(), &mut mapper), TTOGM_OK);
        assert_eq!(ttogm_mapper_process(mapper, ptr::null(), 0, ptr::null_mut()), TTOGM_ERR_DATA);
        assert_eq!(ttogm_mapper_scan_count(mapper), 0);
        ttogm_mapper_free(mapper);
    }
}

/// Every exported function appears in the generated header.
#[test]
fn header_declares_every_export() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR"));
    let header = std::fs::read_to_string(dir.join("include/ttogm.h")).unwrap();
    let src = std::fs::read_to_string(dir.join("src/lib.rs")).unwrap();
    let exports: Vec<&str> = src
        .split("extern \"C\" fn ")
        .skip(1)
        .map(|s| s.split('(').next().unwrap())
        .collect();
    assert!(exports.len() >= 14, "{exports:?}");
    for name in exports {
        assert!(header.contains(&format!("{name}(")), "{name} missing from header");
    }
}

fn target_dir() -> PathBuf {
    // target/<profile>/deps/<test binary>
    std::env::current_exe().unwrap().parent().unwrap().parent().unwrap().to_path_buf()
}

/// Compiles the C program in tests/c against the header and the static library.
#[test]
fn c_program_links_and_runs() {
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    if Command::new(&cc).arg("--version").output().is_err() {
        eprintln!("c_program_links_and_runs: no C compiler ({cc}), skipped");
        return;
    }
    let lib = target_dir().join("libttogm_ffi.a");
    assert!(lib.exists(), "{} not built", lib.display());
    let dir = Path::new(env!("CARGO_MANIFEST_DIR"));
    let tmp = tempfile::tempdir().unwrap();
    let exe = tmp.path().join("smoke");
    let out = Command::new(&cc)
        .args(["-std=c99", "-Wall", "-Wextra", "-Werror", "-I"])
        .arg(dir.join("include"))
        .arg(dir.join("tests/c/smoke.c"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let run = Command::new(&exe).arg(tmp.path()).output().unwrap();
    let stdout = String::from_utf8_lossy(&run.stdout);
    assert!(run.status.success(), "{stdout}{}", String::from_utf8_lossy(&run.stderr));
    assert!(stdout.ends_with("ok\n"), "{stdout}");
}
