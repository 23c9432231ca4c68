//! `--config FILE` overlay: a flat TOML file of `flag-name = value` pairs
//! supplying defaults for flags absent from the command line.

use std::ffi::OsString;

/// Finds `--config PATH` or `--config=PATH` in `argv`.
fn config_path(argv: &[OsString]) -> Option<String> {
    let mut it = argv.iter().map(|a| a.to_string_lossy());
    while let Some(a) = it.next() {
        if a == "--config" {
            return it.next().map(|s| s.into_owned());
        }
        if let Some(p) = a.strip_prefix("--config=") {
            return Some(p.to_string());
        }
    }
    None
}

fn present(argv: &[OsString], flag: &str) -> bool {
    argv.iter().any(|a| {
        let a = a.to_string_lossy();
        a == flag || a.starts_with(&format!("{flag}="))
    })
}

/// Appends flags from the config file named in `argv`, skipping any flag the
/// command line already sets. Booleans become bare flags when true.
pub fn overlay(argv: Vec<OsString>) -> Result<Vec<OsString>, String> {
    let Some(path) = config_path(&argv) else {
        return Ok(argv);
    };
    let text = std::fs::read_to_string(&path).map_err(|e| format!("cannot read config {path}: {e}"))?;
    let table: toml::Table = text.parse().map_err(|e| format!("invalid config {path}: {e}"))?;
    let mut out = argv.clone();
    for (key, value) in table {
        let flag = format!("--{key}");
        if present(&argv, &flag) {
            continue;
        }
        let value = match value {
            toml::Value::Boolean(true) => {
                out.push(flag.into());
                continue;
            }
            toml::Value::Boolean(false) => continue,
            toml::Value::String(s) => s,
            toml::Value::Integer(i) => i.to_string(),
            toml::Value::Float(f) => f.to_string(),
            other => return Err(format!("config key {key}: unsupported value {other}")),
        };
        out.push(flag.into());
        out.push(value.into());
    }
    Ok(out)
}
