//! Merging a JSON settings file with command-line flags, and writing reports.

use std::fs;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context};
use clap::parser::ValueSource;
use clap::ArgMatches;
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{json, Map, Value};

use crate::Globals;

pub const SCHEMA: u32 = 1;

pub fn load(path: &Path) -> anyhow::Result<Map<String, Value>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    match serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))? {
        Value::Object(map) => Ok(map),
        _ => bail!("{} must hold a JSON object", path.display()),
    }
}

/// Applies the settings file to `args`. Keys must name flags of the
/// subcommand (with `_` for `-`); an optional `"command"` key must match it.
pub fn resolve<A>(
    args: A,
    command: &str,
    matches: &ArgMatches,
    file: Option<&Map<String, Value>>,
) -> anyhow::Result<A>
where
    A: Serialize + DeserializeOwned,
{
    let Some(file) = file else {
        return Ok(args);
    };
    let mut value = serde_json::to_value(&args)?;
    let fields = value
        .as_object_mut()
        .expect("argument structs serialise to objects");
    for (key, v) in file {
        if key == "command" {
            if v.as_str() != Some(command) {
                bail!("settings file is for command {v}, not {command:?}");
            }
            continue;
        }
        if !fields.contains_key(key) {
            bail!("unknown setting {key:?} for command {command:?}");
        }
        // Fields without a flag (`#[arg(skip)]`) are not known to clap.
        let on_command_line = matches.ids().any(|id| id.as_str() == key)
            && matches.value_source(key) == Some(ValueSource::CommandLine);
        if !on_command_line {
            fields.insert(key.clone(), v.clone());
        }
    }
    serde_json::from_value(value).context("settings file has a value of the wrong type")
}

/// Writes `{"schema", "command", "config", "passed", "result"}` as pretty JSON.
pub fn write_report<C: Serialize, R: Serialize>(
    globals: &Globals,
    command: &str,
    config: &C,
    passed: bool,
    result: &R,
) -> anyhow::Result<()> {
    let mut report = json!({
        "schema": SCHEMA,
        "command": command,
        "config": config,
        "passed": passed,
        "result": result,
    });
    if globals.timestamp {
        let secs = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        report["generated_at_unix"] = json!(secs);
    }
    let mut text = serde_json::to_string_pretty(&report)?;
    text.push('\n');
    match &globals.report {
        Some(path) => {
            fs::write(path, text).with_context(|| format!("writing {}", path.display()))?
        }
        None => print!("{text}"),
    }
    Ok(())
}
