use serde_json::Value;
use wfr_shapes_wasm_demo::{length_measure_json, srvt_polygons_json, wfr_polygons_json};

const SQUARE: &str = r#"{"vertices":[[-1,-1],[1,-1],[1,1],[-1,1]]}"#;
const DIAMOND: &str = r#"{"vertices":[[0,-1.4142135623730951],[1.4142135623730951,0],[0,1.4142135623730951],[-1.4142135623730951,0]]}"#;

fn parse(s: &str) -> Value {
    serde_json::from_str(s).unwrap()
}

#[test]
fn length_measure_of_a_square() {
    let v = parse(&length_measure_json(SQUARE).unwrap());
    assert_eq!(v["perimeter"], 8.0);
    let atoms = v["measure"]["atoms"].as_array().unwrap();
    assert_eq!(atoms.len(), 4);
    assert!(atoms.iter().all(|a| a["mass"] == 2.0));
    assert_eq!(v["reconstructed"]["vertices"].as_array().unwrap().len(), 4);
}

#[test]
fn wfr_square_against_rotated_square() {
    let v = parse(&wfr_polygons_json(SQUARE, DIAMOND).unwrap());
    // Unit atoms give 8 - 4√2; masses of 2 scale the value by 2.
    let want = 2.0 * (8.0 - 4.0 * 2f64.sqrt());
    assert!((v["value"].as_f64().unwrap() - want).abs() < 1e-9);
    assert!(v["singular0"]["atoms"].as_array().unwrap().is_empty());
}

#[test]
fn srvt_of_identical_polygons_is_zero() {
    let v = parse(&srvt_polygons_json(SQUARE, SQUARE, 256).unwrap());
    assert!(v["distance"].as_f64().unwrap() < 1e-6);
    assert_eq!(v["method"], "plan");
    assert_eq!(v["matched"].as_array().unwrap().len(), 256);
}

#[test]
fn errors_are_json() {
    let e = parse(&length_measure_json(r#"{"vertices":[[0,0],[1,0],[0,1],[1,1]]}"#).unwrap_err());
    assert_eq!(e["kind"], "not_convex");
    let e = parse(&wfr_polygons_json("{", SQUARE).unwrap_err());
    assert_eq!(e["kind"], "malformed_json");
}
