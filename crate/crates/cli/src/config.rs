//! `--config run.json`: a flat JSON object whose keys are flag names
//! (`max_lag` or `max-lag`) plus an optional `command`. Flags given on the
//! command line win over the file.

use std::path::{Path, PathBuf};

use clap::Parser;
use serde_json::Value;

use crate::{Cli, Command};

fn flag_args(key: &str, value: &Value) -> Result<Vec<String>, String> {
    let flag = format!("--{}", key.replace('_', "-"));
    let scalar = |v: &Value| -> Result<String, String> {
        match v {
            Value::String(s) => Ok(s.clone()),
            Value::Number(n) => Ok(n.to_string()),
            other => Err(format!("unsupported value for `{key}`: {other}")),
        }
    };
    match value {
        Value::Bool(true) => Ok(vec![flag]),
        Value::Bool(false) | Value::Null => Ok(Vec::new()),
        Value::Array(items) => {
            let mut out = Vec::new();
            for v in items {
                out.push(flag.clone());
                out.push(scalar(v)?);
            }
            Ok(out)
        }
        v => Ok(vec![flag, scalar(v)?]),
    }
}

/// Translate the config into arguments placed before the user's own.
pub fn config_args(config: &Value) -> Result<(Option<String>, Vec<String>), String> {
    let obj = config.as_object().ok_or("top level must be a JSON object")?;
    let mut command = None;
    let mut args = Vec::new();
    for (key, value) in obj {
        match key.as_str() {
            "command" => {
                command = Some(value.as_str().ok_or("`command` must be a string")?.to_string());
            }
            "config" => return Err("nested `config` is not supported".into()),
            _ => args.extend(flag_args(key, value)?),
        }
    }
    Ok((command, args))
}

/// Value of `--config FILE` or `--config=FILE`, if present.
pub fn config_path(argv: &[String]) -> Option<PathBuf> {
    let mut it = argv.iter().skip(1);
    while let Some(a) = it.next() {
        if a == "--" {
            break;
        }
        if a == "--config" {
            return it.next().map(PathBuf::from);
        }
        if let Some(p) = a.strip_prefix("--config=") {
            return Some(PathBuf::from(p));
        }
    }
    None
}

pub fn reparse_with_config(path: &Path, argv: &[String]) -> Result<Result<Cli, clap::Error>, String> {
    let text = std::fs::read_to_string(path).map_err(|e| e.to_string())?;
    let value: Value = serde_json::from_str(&text).map_err(|e| e.to_string())?;
    let (file_command, file_args) = config_args(&value)?;

    let user = &argv[1..];
    let pos = user.iter().position(|a| Command::NAMES.contains(&a.as_str()));
    let command = match (pos, file_command) {
        (Some(i), _) => user[i].clone(),
        (None, Some(c)) => c,
        (None, None) => return Err("no command on the command line or in the config".into()),
    };
    let rest = user.iter().enumerate().filter(|(i, _)| Some(*i) != pos).map(|(_, a)| a.clone());

    let mut merged = vec![argv[0].clone(), command];
    merged.extend(file_args);
    merged.extend(rest);
    Ok(Cli::try_parse_from(merged))
}
