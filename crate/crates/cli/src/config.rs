//! `--config` handling and resolved-config snapshots.
//!
//! A config file is a JSON object. Scalar top-level keys (e.g. `"seed"`)
//! apply to every command; an object under a command's name (e.g.
//! `"build-lt": {...}`) applies to that command only. Keys use the flag
//! names with `-` replaced by `_`. Explicit flags win over both.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{json, Map, Value};

use crate::CliError;

pub fn load(path: Option<&Path>) -> Result<Option<Value>, CliError> {
    let Some(path) = path else { return Ok(None) };
    let value: Value = tailgraft::dataio::read_json(path)?;
    if !value.is_object() {
        return Err(CliError::Usage(format!("{}: config must be a JSON object", path.display())));
    }
    Ok(Some(value))
}

/// Layers config globals, the command section and explicit flags, in that
/// order, and deserializes the result back into the flag struct.
pub fn resolve<T: Serialize + DeserializeOwned>(section: &str, flags: &T, config: Option<&Value>) -> Result<T, CliError> {
    let mut merged = Map::new();
    if let Some(Value::Object(cfg)) = config {
        for (k, v) in cfg {
            if !v.is_object() {
                merged.insert(k.clone(), v.clone());
            }
        }
        if let Some(Value::Object(sec)) = cfg.get(section) {
            merged.extend(sec.iter().map(|(k, v)| (k.clone(), v.clone())));
        }
    }
    let flags = serde_json::to_value(flags).expect("flag structs serialize");
    if let Value::Object(f) = flags {
        merged.extend(f.into_iter().filter(|(_, v)| !v.is_null()));
    }
    serde_json::from_value(Value::Object(merged)).map_err(|e| CliError::Usage(format!("config for {section}: {e}")))
}

pub fn required<T>(value: Option<T>, flag: &str) -> Result<T, CliError> {
    value.ok_or_else(|| CliError::Usage(format!("--{flag} is required (flag or config)")))
}

/// Snapshot path for a command whose output is a directory.
pub fn dir_snapshot(dir: &Path, command: &str) -> PathBuf {
    dir.join(format!("{command}.run.json"))
}

/// Snapshot path for a command whose output is one file: `x.json` gets
/// `x.run.json` beside it.
pub fn file_snapshot(file: &Path) -> PathBuf {
    file.with_extension("run.json")
}

pub fn write_snapshot(path: &Path, command: &str, resolved: &impl Serialize) -> Result<(), CliError> {
    let doc = json!({
        "tool": "tailgraft",
        "version": tailgraft::VERSION,
        "command": command,
        "config": resolved,
    });
    tailgraft::dataio::write_json(path, &doc)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde::Deserialize;

    #[derive(Debug, Default, PartialEq, Serialize, Deserialize)]
    #[serde(default)]
    struct Args {
        seed: Option<u64>,
        out: Option<String>,
        q: Option<f64>,
    }

    #[test]
    fn flags_win_over_section_over_globals() {
        let cfg = json!({ "seed": 1, "q": 0.1, "resample": { "seed": 2, "out": "a.json" }, "other": { "q": 9.0 } });
        let flags = Args { seed: None, out: Some("b.json".into()), q: None };
        let r = resolve("resample", &flags, Some(&cfg)).unwrap();
        assert_eq!(r, Args { seed: Some(2), out: Some("b.json".into()), q: Some(0.1) });
        assert_eq!(resolve("resample", &Args::default(), None).unwrap(), Args::default());
    }

    #[test]
    fn bad_types_are_usage_errors() {
        let cfg = json!({ "resample": { "seed": "seven" } });
        assert!(matches!(resolve("resample", &Args::default(), Some(&cfg)), Err(CliError::Usage(_))));
    }

    #[test]
    fn snapshot_names() {
        assert_eq!(file_snapshot(Path::new("out/schedule.json")), PathBuf::from("out/schedule.run.json"));
        assert_eq!(dir_snapshot(Path::new("d"), "synth"), PathBuf::from("d/synth.run.json"));
    }
}
