//! Browser bindings for three operations on convex polygons: the length
//! measure, the WFR distance between length measures, and the SRVT distance
//! with its optimal reparametrization.
//!
//! Each binding takes and returns JSON strings; the plain functions below
//! them carry the logic and run natively in tests.

use serde::Serialize;
use wasm_bindgen::prelude::*;
use wfr_shapes::geometry::{ConvexLoop, PolygonJson};
use wfr_shapes::measures::DiscreteMeasure;
use wfr_shapes::srvt::{polygon_curve, srvt_distance_polygons, SrvtOptions};
use wfr_shapes::wfr::{wfr_distance, DEFAULT_TOL};

/// Samples per rounded polygon; smaller than the CLI default to keep the page
/// responsive.
pub const DEMO_SAMPLES: usize = 1024;
/// Curve points returned for drawing.
const DRAW_POINTS: usize = 256;

#[derive(Debug, Serialize)]
struct Failure<'a> {
    kind: &'a str,
    message: String,
}

fn failure(e: wfr_shapes::Error) -> String {
    serde_json::to_string(&Failure { kind: e.kind(), message: e.to_string() }).expect("serializable error")
}

fn polygon(json: &str) -> Result<ConvexLoop, String> {
    let p: PolygonJson = serde_json::from_str(json)
        .map_err(|e| serde_json::to_string(&Failure { kind: "malformed_json", message: e.to_string() }).expect("serializable error"))?;
    ConvexLoop::from_polygon(&p.vertices).map_err(failure)
}

#[derive(Serialize)]
struct LengthMeasure {
    measure: DiscreteMeasure,
    perimeter: f64,
    /// Polygon with the first vertex at the origin, rebuilt from the measure.
    reconstructed: PolygonJson,
}

pub fn length_measure_json(polygon_json: &str) -> Result<String, String> {
    let p = polygon(polygon_json)?;
    let out = LengthMeasure { measure: p.length_measure(), perimeter: p.perimeter(), reconstructed: PolygonJson::from(&p) };
    Ok(serde_json::to_string(&out).expect("serializable result"))
}

#[derive(Serialize)]
struct Transport {
    theta0: f64,
    theta1: f64,
    mass: f64,
}

#[derive(Serialize)]
struct WfrOut {
    distance: f64,
    value: f64,
    singular0: DiscreteMeasure,
    singular1: DiscreteMeasure,
    plan: Vec<Transport>,
}

pub fn wfr_polygons_json(a: &str, b: &str) -> Result<String, String> {
    let (p0, p1) = (polygon(a)?, polygon(b)?);
    let (m0, m1) = (p0.length_measure(), p1.length_measure());
    let r = wfr_distance((&m0).into(), (&m1).into(), DEFAULT_TOL).map_err(failure)?;
    let (singular0, singular1) = r.plan.singular_measures();
    let (x, y) = (r.plan.atoms0.atoms(), r.plan.atoms1.atoms());
    let plan = r
        .plan
        .pairs
        .iter()
        .map(|p| Transport { theta0: x[p.i].angle.radians(), theta1: y[p.j].angle.radians(), mass: p.mass })
        .collect();
    let out = WfrOut { distance: r.distance, value: r.plan.value, singular0, singular1, plan };
    Ok(serde_json::to_string(&out).expect("serializable result"))
}

#[derive(Serialize)]
struct SrvtOut {
    distance: f64,
    wfr_value: f64,
    gap: f64,
    method: String,
    /// `[t, φ(t)]` knots of the reparametrization, when one exists.
    breakpoints: Vec<[f64; 2]>,
    /// Points of both curves at equal parameter steps, for drawing matches.
    curve0: Vec<[f64; 2]>,
    curve1: Vec<[f64; 2]>,
    /// `c1(φ(t))` at the same steps as `curve0`.
    matched: Vec<[f64; 2]>,
}

pub fn srvt_polygons_json(a: &str, b: &str, samples: usize) -> Result<String, String> {
    let (p0, p1) = (polygon(a)?, polygon(b)?);
    let samples = samples.max(64);
    let opts = SrvtOptions { grid: 256, tol: DEFAULT_TOL };
    let r = srvt_distance_polygons(&p0, &p1, samples, &opts).map_err(failure)?;
    let (c0, c1) = (polygon_curve(&p0, samples).map_err(failure)?, polygon_curve(&p1, samples).map_err(failure)?);
    let ts: Vec<f64> = (0..DRAW_POINTS).map(|k| std::f64::consts::TAU * k as f64 / DRAW_POINTS as f64).collect();
    let matched = match &r.reparam {
        Some(phi) => ts.iter().map(|&t| c1.eval(phi.eval(t))).collect(),
        None => Vec::new(),
    };
    let method = match serde_json::to_value(&r.method).expect("serializable method").get("kind") {
        Some(serde_json::Value::String(k)) => k.clone(),
        _ => "unknown".into(),
    };
    let out = SrvtOut {
        distance: r.distance,
        wfr_value: r.wfr_value,
        gap: r.gap,
        method,
        breakpoints: r.reparam.as_ref().map_or_else(Vec::new, |phi| phi.breakpoints().iter().map(|&(t, p)| [t, p]).collect()),
        curve0: ts.iter().map(|&t| c0.eval(t)).collect(),
        curve1: ts.iter().map(|&t| c1.eval(t)).collect(),
        matched,
    };
    Ok(serde_json::to_string(&out).expect("serializable result"))
}

fn to_js(r: Result<String, String>) -> Result<String, JsValue> {
    r.map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn length_measure(polygon_json: &str) -> Result<String, JsValue> {
    to_js(length_measure_json(polygon_json))
}

#[wasm_bindgen]
pub fn wfr_polygons(a: &str, b: &str) -> Result<String, JsValue> {
    to_js(wfr_polygons_json(a, b))
}

#[wasm_bindgen]
pub fn srvt_polygons(a: &str, b: &str, samples: usize) -> Result<String, JsValue> {
    to_js(srvt_polygons_json(a, b, samples))
}

#[wasm_bindgen]
pub fn version() -> String {
    wfr_shapes::VERSION.to_string()
}
