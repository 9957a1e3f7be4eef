//! Run directories and JSON-lines logging.

use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::Serialize;
use serde_json::{json, Map, Value};

use crate::config::RunConfig;
use crate::error::{io_error, Result};

/// Log file of the most recently created run; `log` records from the
/// library crates land there as well as on stdout.
static RUN_LOG: Mutex<Option<File>> = Mutex::new(None);

fn emit(mut fields: Map<String, Value>) {
    let mut record = Map::new();
    record.insert("ts".into(), Value::String(chrono::Utc::now().to_rfc3339()));
    record.append(&mut fields);
    let line = Value::Object(record).to_string();
    println!("{line}");
    if let Some(file) = RUN_LOG.lock().expect("log lock").as_mut() {
        let _ = writeln!(file, "{line}");
    }
}

struct JsonLogger;

impl log::Log for JsonLogger {
    fn enabled(&self, metadata: &log::Metadata) -> bool {
        metadata.level() <= log::max_level()
    }

    fn log(&self, record: &log::Record) {
        if !self.enabled(record.metadata()) {
            return;
        }
        let fields = json!({
            "level": record.level().as_str().to_ascii_lowercase(),
            "target": record.target(),
            "message": record.args().to_string(),
        });
        if let Value::Object(map) = fields {
            emit(map);
        }
    }

    fn flush(&self) {
        if let Some(file) = RUN_LOG.lock().expect("log lock").as_mut() {
            let _ = file.flush();
        }
    }
}

static LOGGER: JsonLogger = JsonLogger;

/// Routes `log` records to JSON lines. Calling it more than once is
/// harmless.
pub fn init_logging(level: log::LevelFilter) {
    if log::set_logger(&LOGGER).is_ok() {
        log::set_max_level(level);
    }
}

/// One invocation's output directory, named `<command>-<UTC timestamp>`
/// with a numeric suffix when that name is taken. Existing directories are
/// never reused.
#[derive(Debug)]
pub struct RunDir {
    path: PathBuf,
}

impl RunDir {
    pub fn create(root: &Path, command: &str) -> Result<Self> {
        fs::create_dir_all(root).map_err(io_error(root))?;
        let stamp = chrono::Utc::now().format("%Y%m%dT%H%M%SZ");
        let base = format!("{command}-{stamp}");
        let mut suffix = 1;
        let path = loop {
            let name = if suffix == 1 { base.clone() } else { format!("{base}-{suffix}") };
            let candidate = root.join(name);
            match fs::create_dir(&candidate) {
                Ok(()) => break candidate,
                Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => suffix += 1,
                Err(e) => return Err(io_error(&candidate)(e)),
            }
        };
        let log_path = path.join("log.jsonl");
        let file = OpenOptions::new()
            .create_new(true)
            .append(true)
            .open(&log_path)
            .map_err(io_error(&log_path))?;
        *RUN_LOG.lock().expect("log lock") = Some(file);
        let run = Self { path };
        run.event("run_started", json!({ "command": command, "dir": run.path }));
        Ok(run)
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn join(&self, name: &str) -> PathBuf {
        self.path.join(name)
    }

    /// Structured log line `{"ts", "event", ...fields}`.
    pub fn event(&self, name: &str, fields: Value) {
        let mut map = Map::new();
        map.insert("level".into(), Value::String("info".into()));
        map.insert("event".into(), Value::String(name.into()));
        if let Value::Object(mut extra) = fields {
            map.append(&mut extra);
        }
        emit(map);
    }

    pub fn write_config(&self, name: &str, cfg: &RunConfig) -> Result<()> {
        self.write_text(name, &cfg.to_toml())
    }

    pub fn write_text(&self, name: &str, text: &str) -> Result<()> {
        let path = self.join(name);
        fs::write(&path, text).map_err(io_error(&path))
    }

    /// Pretty JSON with a trailing newline; identical values give identical
    /// bytes.
    pub fn write_json(&self, name: &str, value: &impl Serialize) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value).expect("outputs serialize to JSON");
        text.push('\n');
        self.write_text(name, &text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn run_directories_are_never_reused() {
        let root = tempfile::tempdir().unwrap();
        let a = RunDir::create(root.path(), "encode").unwrap();
        let b = RunDir::create(root.path(), "encode").unwrap();
        assert_ne!(a.path(), b.path());
        assert!(a.join("log.jsonl").exists() && b.join("log.jsonl").exists());
        let name = b.path().file_name().unwrap().to_string_lossy().into_owned();
        assert!(name.starts_with("encode-"), "{name}");
    }
}
