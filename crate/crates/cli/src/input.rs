//! Loading the JSON input formats.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde_json::Value;
use wfr_shapes::geometry::{ConvexLoop, CurveJson, ParamCurve, PolygonJson};
use wfr_shapes::measures::{DiscreteMeasure, GridDensity};

use crate::CliError;

/// One of the accepted input files, told apart by its top-level key.
pub enum Input {
    Measure(DiscreteMeasure),
    Grid(GridDensity),
    Polygon(ConvexLoop),
    Curve(ParamCurve),
}

impl Input {
    pub fn kind(&self) -> &'static str {
        match self {
            Input::Measure(_) => "measure",
            Input::Grid(_) => "grid",
            Input::Polygon(_) => "polygon",
            Input::Curve(_) => "curve",
        }
    }
}

fn parse<T: DeserializeOwned>(path: &Path, text: &str) -> Result<T, CliError> {
    serde_json::from_str(text).map_err(|e| CliError::parse(path, &e))
}

pub fn load(path: &Path) -> Result<Input, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::input(format!("cannot read {}: {e}", path.display())))?;
    let value: Value = parse(path, &text)?;
    let has = |k: &str| value.get(k).is_some();
    // Typed parsing goes through the text again so errors keep their position.
    if has("atoms") {
        Ok(Input::Measure(parse(path, &text)?))
    } else if has("resolution") || has("values") {
        Ok(Input::Grid(parse(path, &text)?))
    } else if has("vertices") {
        let p: PolygonJson = parse(path, &text)?;
        Ok(Input::Polygon(ConvexLoop::from_polygon(&p.vertices)?))
    } else if has("samples") {
        let c: CurveJson = parse(path, &text)?;
        Ok(Input::Curve(ParamCurve::try_from(c)?))
    } else {
        Err(CliError::input(format!(
            "{}: expected one of the keys \"atoms\", \"resolution\", \"vertices\", \"samples\"",
            path.display()
        )))
    }
}

fn wrong(path: &Path, got: &Input, want: &str) -> CliError {
    CliError::input(format!("{}: expected a {want}, got a {}", path.display(), got.kind()))
}

pub fn load_measure(path: &Path) -> Result<DiscreteMeasure, CliError> {
    match load(path)? {
        Input::Measure(m) => Ok(m),
        other => Err(wrong(path, &other, "measure")),
    }
}
