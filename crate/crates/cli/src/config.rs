//! Config file support. A TOML file holds one table per subcommand; its
//! entries are turned into flags and spliced in right after the subcommand
//! name, so anything given on the command line later wins.
//!
//! ```toml
//! [train]
//! dim = 100
//! input = ["a.txt", "b.txt"]
//! no_subsample = true
//! ```

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context};

use crate::args::SUBCOMMANDS;

/// A problem with how the tool was invoked (exit status 1).
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    anyhow!(UsageError(msg.into()))
}

/// Locate `--config` and the subcommand in `argv` (program name first).
fn scan(argv: &[OsString]) -> (Option<PathBuf>, Option<usize>) {
    let mut config = None;
    let mut sub = None;
    let mut i = 1;
    while i < argv.len() {
        let a = argv[i].to_string_lossy();
        if a == "--" {
            break;
        }
        if a == "--config" {
            config = argv.get(i + 1).map(PathBuf::from);
            i += 2;
            continue;
        }
        if let Some(p) = a.strip_prefix("--config=") {
            config = Some(PathBuf::from(p));
        } else if sub.is_none() && SUBCOMMANDS.contains(&a.as_ref()) {
            sub = Some(i);
        }
        i += 1;
    }
    (config, sub)
}

fn scalar(key: &str, v: &toml::Value) -> anyhow::Result<String> {
    Ok(match v {
        toml::Value::String(s) => s.clone(),
        toml::Value::Integer(n) => n.to_string(),
        toml::Value::Float(x) => x.to_string(),
        other => bail!(UsageError(format!("config key '{key}': unsupported value {other}"))),
    })
}

/// Long flags present in `args`, without their values.
fn given_flags(args: &[OsString]) -> Vec<String> {
    args.iter()
        .map(|a| a.to_string_lossy())
        .take_while(|a| a != "--")
        .filter(|a| a.starts_with("--"))
        .map(|a| a.split('=').next().unwrap_or_default().to_string())
        .collect()
}

/// Flags equivalent to one subcommand table, leaving out those in `skip`.
pub fn table_flags(table: &toml::Table, skip: &[String]) -> anyhow::Result<Vec<OsString>> {
    let mut out = Vec::new();
    for (key, value) in table {
        let flag = format!("--{}", key.replace('_', "-"));
        if skip.contains(&flag) {
            continue;
        }
        match value {
            toml::Value::Boolean(true) => out.push(flag.into()),
            toml::Value::Boolean(false) => {}
            toml::Value::Array(items) => {
                if items.is_empty() {
                    continue;
                }
                out.push(flag.into());
                for item in items {
                    out.push(scalar(key, item)?.into());
                }
            }
            v => {
                out.push(flag.into());
                out.push(scalar(key, v)?.into());
            }
        }
    }
    Ok(out)
}

fn load(path: &Path) -> anyhow::Result<toml::Table> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
    text.parse::<toml::Table>()
        .map_err(|e| usage(format!("config {}: {e}", path.display())))
}

/// Expand `--config` into flags. Returns `argv` unchanged when there is no
/// config file or no recognizable subcommand (clap reports the latter).
pub fn inject(argv: Vec<OsString>) -> anyhow::Result<Vec<OsString>> {
    let (Some(path), Some(sub)) = scan(&argv) else {
        return Ok(argv);
    };
    let table = load(&path)?;
    for (key, value) in &table {
        if !value.is_table() {
            return Err(usage(format!("config key '{key}' must be inside a [subcommand] table")));
        }
        let name = key.replace('_', "-");
        if !SUBCOMMANDS.contains(&name.as_str()) {
            return Err(usage(format!("config table [{key}] is not a subcommand")));
        }
    }
    let name = argv[sub].to_string_lossy().into_owned();
    let section = table
        .iter()
        .find(|(k, _)| k.replace('_', "-") == name)
        .and_then(|(_, v)| v.as_table());
    let Some(section) = section else {
        return Ok(argv);
    };
    // a flag on the command line replaces the config entry as a whole, so
    // list-valued flags are not merged
    let flags = table_flags(section, &given_flags(&argv[sub + 1..]))?;
    log::debug!("flags from {}: {flags:?}", path.display());
    let mut out = argv[..=sub].to_vec();
    out.extend(flags);
    out.extend_from_slice(&argv[sub + 1..]);
    Ok(out)
}
