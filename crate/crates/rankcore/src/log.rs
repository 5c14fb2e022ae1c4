//! Line-delimited JSON events on stderr.

use std::io::Write;
use std::time::Instant;

use serde_json::{json, Map, Value};

#[derive(Clone, Debug)]
pub struct Logger {
    quiet: bool,
    start: Instant,
}

impl Logger {
    pub fn new(quiet: bool) -> Self {
        Self { quiet, start: Instant::now() }
    }

    pub fn quiet(&self) -> bool {
        self.quiet
    }

    /// Emits `{"elapsed_ms", "stage", "event", ...fields}`.
    pub fn event(&self, stage: &str, event: &str, fields: Value) {
        if self.quiet {
            return;
        }
        let mut obj = Map::new();
        obj.insert("elapsed_ms".into(), json!(self.start.elapsed().as_millis() as u64));
        obj.insert("stage".into(), json!(stage));
        obj.insert("event".into(), json!(event));
        if let Value::Object(extra) = fields {
            obj.extend(extra);
        }
        let line = Value::Object(obj).to_string();
        let _ = writeln!(std::io::stderr().lock(), "{line}");
    }
}
