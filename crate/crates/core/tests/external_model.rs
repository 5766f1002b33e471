//! The external cleaner protocol, exercised against the `ttogm-model-stub`
//! test double and, when onnxruntime is importable, a real `.onnx` file.

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use ttogm::cleaner::{
    build_cleaner, clean_map, tile_map, CleanerConfig, CleanerKind, ExternalModel, ModelCommand,
};
use ttogm::gridmap::{CodeMap, FiltrationConfig, GridGeometry, FREE, OCCUPIED, UNKNOWN};
use ttogm::Error;

const STUB: &str = env!("CARGO_BIN_EXE_ttogm-model-stub");

fn stub(args: &[&str]) -> ModelCommand {
    ModelCommand::new(STUB, args.iter().copied())
}

fn launch(args: &[&str], tile: usize) -> Result<ExternalModel, Error> {
    ExternalModel::launch(&stub(args), tile, Duration::from_secs(5))
}

/// A 100 x 70 map: free interior, occupied border, unknown corner block.
fn sample_map() -> CodeMap {
    let geo = GridGeometry {
        width: 100,
        height: 70,
        resolution: 0.05,
        origin_x: -2.0,
        origin_y: 1.0,
    };
    let mut m = CodeMap::filled(geo, FREE);
    for r in 0..70 {
        for c in 0..100 {
            if r == 0 || c == 0 || r == 69 || c == 99 {
                m.set(r, c, OCCUPIED);
            } else if r > 50 && c > 80 {
                m.set(r, c, UNKNOWN);
            }
        }
    }
    m
}

fn tiling(tile: usize, overlap: usize) -> CleanerConfig {
    CleanerConfig {
        tile_size: tile,
        overlap,
        timeout_secs: 5.0,
    }
}

#[test]
fn echo_returns_patch_unchanged() {
    let mut model = launch(&["echo"], 32).unwrap();
    assert!(!model.pipelining());
    let patches = tile_map(&sample_map(), 32, 0).unwrap();
    for p in &patches {
        assert_eq!(&model.run_patch(p).unwrap(), p);
    }
    assert_eq!(model.clamped_values(), 0);
}

#[test]
fn echo_clean_map_is_identity() {
    let map = sample_map();
    let mut model = launch(&["echo"], 48).unwrap();
    let out = clean_map(&map, &mut model, &tiling(48, 8), &FiltrationConfig::default()).unwrap();
    assert_eq!(out, map);
}

#[test]
fn pipelined_model_matches_sequential() {
    let map = sample_map();
    let cfg = tiling(32, 4);
    let mut seq = launch(&["echo"], 32).unwrap();
    let mut pip = launch(&["echo", "--pipelined"], 32).unwrap();
    assert!(pip.pipelining());
    let a = clean_map(&map, &mut seq, &cfg, &FiltrationConfig::default()).unwrap();
    let b = clean_map(&map, &mut pip, &cfg, &FiltrationConfig::default()).unwrap();
    assert_eq!(a, b);
    // a second batch on the same process keeps working
    assert_eq!(clean_map(&map, &mut pip, &cfg, &FiltrationConfig::default()).unwrap(), a);
}

#[test]
fn wrong_sized_response_is_a_shape_mismatch() {
    let mut model = launch(&["wrong-size"], 32).unwrap();
    let patch = &tile_map(&sample_map(), 32, 0).unwrap()[0];
    let err = model.run_patch(patch).unwrap_err();
    assert!(matches!(err, Error::ShapeMismatch { .. }), "{err}");
    assert_eq!(err.exit_code(), 3);
}

#[test]
fn handshake_tile_disagreement_is_rejected() {
    let err = launch(&["echo", "--tile", "64"], 32).err().expect("launch must fail");
    assert!(matches!(err, Error::ShapeMismatch { .. }), "{err}");
}

#[test]
fn slow_model_times_out() {
    let mut model = ExternalModel::launch(&stub(&["sleep:5"]), 16, Duration::from_millis(300)).unwrap();
    let patch = &tile_map(&sample_map(), 16, 0).unwrap()[0];
    let t = Instant::now();
    let err = model.run_patch(patch).unwrap_err();
    assert!(matches!(err, Error::ModelTimeout { patch_id: 0, .. }), "{err}");
    assert!(t.elapsed() < Duration::from_secs(3));
}

#[test]
fn garbage_response_is_malformed() {
    let mut model = launch(&["garbage"], 16).unwrap();
    let patch = &tile_map(&sample_map(), 16, 0).unwrap()[0];
    let err = model.run_patch(patch).unwrap_err();
    assert!(matches!(err, Error::MalformedResponse(_)), "{err}");
}

#[test]
fn crash_surfaces_model_diagnostics() {
    let mut model = launch(&["crash"], 16).unwrap();
    let patch = &tile_map(&sample_map(), 16, 0).unwrap()[0];
    let err = model.run_patch(patch).unwrap_err();
    let text = err.to_string();
    assert!(text.contains("crashing on patch 0"), "{text}");
    assert!(err.is_model_error());
}

#[test]
fn refusal_at_startup_is_reported() {
    let err = launch(&["refuse"], 16).err().expect("launch must fail");
    assert!(err.to_string().contains("refusing"), "{err}");
}

#[test]
fn out_of_range_values_are_clamped_and_counted() {
    let mut model = launch(&["scale:4"], 16).unwrap();
    let patch = &tile_map(&sample_map(), 16, 0).unwrap()[0];
    let out = model.run_patch(patch).unwrap();
    assert!(out.pixels.iter().all(|v| (0.0..=1.0).contains(v)));
    assert!(model.clamped_values() > 0);
}

#[test]
fn grayscale_walls_are_discretized_by_output_filter() {
    // walls come back as 0.9, above T2' = 0.86, so they read as unknown
    let map = sample_map();
    let mut model = launch(&["wall:0.9"], 32).unwrap();
    let out = clean_map(&map, &mut model, &tiling(32, 0), &FiltrationConfig::default()).unwrap();
    assert!(out.codes.iter().all(|&c| matches!(c, FREE | OCCUPIED | UNKNOWN)));
    assert_eq!(out.get(0, 10), UNKNOWN);
    assert_eq!(out.get(10, 10), FREE);
    assert_eq!(out.count(OCCUPIED), 0);
    assert_eq!(out.geometry, map.geometry);
}

#[test]
fn missing_model_file_fails_at_construction() {
    let err = CleanerKind::parse("model:/no/such/model.onnx").unwrap_err();
    assert!(err.is_model_error() || matches!(err, Error::Model(_)), "{err}");
}

fn onnx_available() -> bool {
    Command::new("python3")
        .args(["-c", "import onnx, onnxruntime"])
        .output()
        .is_ok_and(|o| o.status.success())
}

/// Writes a model with `map_in` -> `map_out`, both [1, 1, T, T] (`T` symbolic
/// when `side` is None).
fn write_onnx(path: &Path, op: &str, side: Option<usize>) {
    let dim = side.map_or("'T'".to_string(), |s| s.to_string());
    let script = format!(
        r#"
import onnx
from onnx import helper, TensorProto
shape = [1, 1, {dim}, {dim}]
x = helper.make_tensor_value_info("map_in", TensorProto.FLOAT, shape)
y = helper.make_tensor_value_info("map_out", TensorProto.FLOAT, shape)
nodes = [helper.make_node("Identity", ["map_in"], ["map_out"])] if "{op}" == "identity" else [
    helper.make_node("Constant", [], ["k"], value=helper.make_tensor("k", TensorProto.FLOAT, [], [0.5])),
    helper.make_node("Mul", ["map_in", "k"], ["map_out"]),
]
g = helper.make_graph(nodes, "g", [x], [y])
m = helper.make_model(g, opset_imports=[helper.make_opsetid("", 13)])
m.ir_version = 8
onnx.checker.check_model(m)
onnx.save(m, r"{path}")
"#,
        path = path.display()
    );
    let out = Command::new("python3").args(["-c", &script]).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn onnx_model_through_python_adapter() {
    if !onnx_available() {
        eprintln!("onnx_model_through_python_adapter: python onnx/onnxruntime not importable, skipped");
        return;
    }
    let tmp = tempfile::tempdir().unwrap();
    let map = sample_map();

    let identity = tmp.path().join("identity.onnx");
    write_onnx(&identity, "identity", None);
    let kind = CleanerKind::parse(&format!("model:{}", identity.display())).unwrap();
    let mut cleaner = build_cleaner(&kind, &tiling(64, 16)).unwrap();
    let out = clean_map(&map, cleaner.as_mut(), &tiling(64, 16), &FiltrationConfig::default()).unwrap();
    assert_eq!(out, map);

    // halving maps walls (100/255) to ~0.196, below T1' = 0.21: free
    let half = tmp.path().join("half.onnx");
    write_onnx(&half, "half", Some(32));
    let mut cleaner = build_cleaner(&CleanerKind::external(&half).unwrap(), &tiling(32, 0)).unwrap();
    let patches = tile_map(&map, 32, 0).unwrap();
    let cleaned = cleaner.clean_patches(patches.clone()).unwrap();
    for (a, b) in patches.iter().zip(&cleaned) {
        assert_eq!(a.offset, b.offset);
        for (x, y) in a.pixels.iter().zip(&b.pixels) {
            assert!((x * 0.5 - y).abs() < 1e-6);
        }
    }

    // a fixed 32 x 32 model refuses 64-cell tiles at the handshake
    let err = build_cleaner(&CleanerKind::external(&half).unwrap(), &tiling(64, 0)).err().unwrap();
    assert!(matches!(err, Error::ShapeMismatch { .. }), "{err}");
}
