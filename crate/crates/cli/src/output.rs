//! JSON and CSV writers. Both embed the library version and the run config.

use serde::Serialize;
use serde_json::{json, Value};

use crate::RunConfig;

/// Result of a subcommand: a JSON body plus a table for CSV output.
pub struct Report {
    pub result: Value,
    /// Scalars repeated in the CSV preamble.
    pub summary: Value,
    pub header: Vec<&'static str>,
    pub rows: Vec<Vec<f64>>,
}

#[derive(Serialize)]
struct Envelope<'a, T: Serialize> {
    version: &'static str,
    config: Option<&'a RunConfig>,
    #[serde(flatten)]
    body: T,
}

pub fn render_json(config: &RunConfig, report: &Report) -> String {
    let env = Envelope { version: wfr_shapes::VERSION, config: Some(config), body: json!({ "result": report.result }) };
    let mut s = serde_json::to_string_pretty(&env).expect("serializable output");
    s.push('\n');
    s
}

pub fn render_csv(config: &RunConfig, report: &Report) -> String {
    let mut buf = Vec::new();
    preamble(&mut buf, config);
    buf.extend(format!("# summary {}\n", report.summary).bytes());
    let mut w = csv::Writer::from_writer(buf);
    w.write_record(&report.header).expect("in-memory write");
    for row in &report.rows {
        w.write_record(row.iter().map(|v| v.to_string())).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("ascii output")
}

fn preamble(buf: &mut Vec<u8>, config: &RunConfig) {
    buf.extend(format!("# wfr-shapes {}\n", wfr_shapes::VERSION).bytes());
    buf.extend(format!("# config {}\n", serde_json::to_string(config).expect("serializable config")).bytes());
}

pub fn render_error(config: Option<&RunConfig>, error: &Value) -> String {
    let env = Envelope { version: wfr_shapes::VERSION, config, body: json!({ "error": error }) };
    let mut s = serde_json::to_string_pretty(&env).expect("serializable error");
    s.push('\n');
    s
}
