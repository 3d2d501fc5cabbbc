//! `--config` files: `key = value` lines supplying defaults for flags of the
//! chosen subcommand. Flags given on the command line win.

use std::ffi::OsString;

use anyhow::{bail, Context, Result};
use clap::CommandFactory;

use crate::Cli;

/// Parses `key=value` lines; `#` starts a comment line.
pub fn parse_config(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            bail!("config line {}: expected key=value", i + 1);
        };
        let k = k.trim().replace('_', "-");
        if k.is_empty() {
            bail!("config line {}: empty key", i + 1);
        }
        out.push((k, v.trim().to_string()));
    }
    Ok(out)
}

/// Splices config entries into `args` right after the subcommand name.
pub fn apply_config(args: Vec<OsString>) -> Result<Vec<OsString>> {
    let strs: Vec<String> = args.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    let mut config_path = None;
    let mut rest: Vec<OsString> = Vec::new();
    let mut i = 0;
    while i < args.len() {
        if strs[i] == "--config" {
            config_path = Some(strs.get(i + 1).context("--config needs a path")?.clone());
            i += 2;
            continue;
        }
        if let Some(p) = strs[i].strip_prefix("--config=") {
            config_path = Some(p.to_string());
            i += 1;
            continue;
        }
        rest.push(args[i].clone());
        i += 1;
    }
    let Some(path) = config_path else {
        return Ok(rest);
    };
    let text = std::fs::read_to_string(&path).with_context(|| format!("reading config {path}"))?;
    let entries = parse_config(&text)?;

    let cmd = Cli::command();
    let rest_strs: Vec<String> = rest.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    let Some(sub_pos) = rest_strs
        .iter()
        .skip(1)
        .position(|a| cmd.find_subcommand(a).is_some())
        .map(|p| p + 1)
    else {
        return Ok(rest);
    };
    let sub = cmd.find_subcommand(&rest_strs[sub_pos]).expect("found above");
    let given: Vec<&str> = rest_strs[sub_pos + 1..]
        .iter()
        .filter_map(|a| a.strip_prefix("--"))
        .map(|a| a.split('=').next().unwrap_or(a))
        .collect();

    let mut inserted: Vec<OsString> = Vec::new();
    for (key, value) in entries {
        let Some(arg) = sub.get_arguments().find(|a| a.get_long() == Some(key.as_str())) else {
            bail!("config key `{key}` is not a flag of `{}`", sub.get_name());
        };
        if given.contains(&key.as_str()) {
            continue;
        }
        let takes_value = arg.get_action().takes_values();
        if takes_value {
            inserted.push(format!("--{key}").into());
            inserted.push(value.into());
        } else if matches!(value.as_str(), "true" | "yes" | "1") {
            inserted.push(format!("--{key}").into());
        }
    }
    let mut out: Vec<OsString> = rest[..=sub_pos].to_vec();
    out.extend(inserted);
    out.extend_from_slice(&rest[sub_pos + 1..]);
    Ok(out)
}
