//! Stderr logger with an optional one-JSON-object-per-line mode.

use std::io::Write as _;
use std::time::{SystemTime, UNIX_EPOCH};

use log::{Level, LevelFilter, Log, Metadata, Record};

struct StderrLogger {
    json: bool,
    level: LevelFilter,
}

impl Log for StderrLogger {
    fn enabled(&self, m: &Metadata<'_>) -> bool {
        m.level() <= self.level
    }

    fn log(&self, record: &Record<'_>) {
        if !self.enabled(record.metadata()) {
            return;
        }
        let line = if self.json {
            let ts = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0.0, |d| d.as_secs_f64());
            serde_json::json!({
                "ts": ts,
                "level": record.level().as_str(),
                "target": record.target(),
                "msg": record.args().to_string(),
            })
            .to_string()
        } else {
            match record.level() {
                Level::Info => record.args().to_string(),
                l => format!("{}: {}", l.as_str().to_lowercase(), record.args()),
            }
        };
        let _ = writeln!(std::io::stderr().lock(), "{line}");
    }

    fn flush(&self) {}
}

/// Installs the logger; later calls are ignored.
pub fn init(json: bool, level: LevelFilter) {
    if log::set_boxed_logger(Box::new(StderrLogger { json, level })).is_ok() {
        log::set_max_level(level);
    }
}
