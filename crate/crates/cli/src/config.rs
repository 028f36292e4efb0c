//! `--config` files.
//!
//! A config file is a flat TOML document of `key = value` lines. Each key is
//! the long name of a flag of the chosen subcommand (or a global flag), so
//! `particles = 5000` means `--particles 5000`. Booleans toggle switches,
//! arrays become comma-separated lists. Flags given on the command line
//! override the file.

use std::ffi::OsString;
use std::path::Path;

use crate::CliError;

pub fn config_args(path: &Path) -> Result<Vec<OsString>, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    let table: toml::Table = text
        .parse()
        .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    let mut args = Vec::new();
    for (key, value) in table {
        if key == "config" {
            return Err(CliError::Usage("config files cannot include other config files".into()));
        }
        let flag = OsString::from(format!("--{key}"));
        match value {
            toml::Value::Boolean(true) => args.push(flag),
            toml::Value::Boolean(false) => {}
            toml::Value::Array(items) => {
                let parts = items.iter().map(scalar).collect::<Result<Vec<_>, _>>()?;
                args.push(flag);
                args.push(parts.join(",").into());
            }
            other => {
                args.push(flag);
                args.push(scalar(&other)?.into());
            }
        }
    }
    Ok(args)
}

fn scalar(v: &toml::Value) -> Result<String, CliError> {
    match v {
        toml::Value::String(s) => Ok(s.clone()),
        toml::Value::Integer(i) => Ok(i.to_string()),
        toml::Value::Float(f) => Ok(f.to_string()),
        toml::Value::Boolean(b) => Ok(b.to_string()),
        other => Err(CliError::Usage(format!("unsupported config value {other}"))),
    }
}

/// Splices config-file arguments in right after the subcommand so that
/// later command-line flags take precedence.
pub fn expand(argv: Vec<OsString>, subcommands: &[&str]) -> Result<Vec<OsString>, CliError> {
    let mut config = None;
    for (i, a) in argv.iter().enumerate() {
        let s = a.to_string_lossy();
        if s == "--config" {
            config = argv.get(i + 1).cloned();
        } else if let Some(v) = s.strip_prefix("--config=") {
            config = Some(v.into());
        }
    }
    let Some(config) = config else {
        return Ok(argv);
    };
    let Some(sub) = argv.iter().position(|a| subcommands.iter().any(|s| a == s)) else {
        return Ok(argv);
    };
    let mut out: Vec<OsString> = argv[..=sub].to_vec();
    out.extend(config_args(Path::new(&config))?);
    out.extend(argv[sub + 1..].iter().cloned());
    Ok(out)
}
