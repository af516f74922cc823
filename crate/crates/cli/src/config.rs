//! Flat `key = value` config files. Every key is a long flag of the chosen
//! subcommand; the file's entries are spliced in ahead of the real arguments
//! so that flags given on the command line win.

use std::path::Path;

use anyhow::{bail, Context, Result};

/// Parses `key = value` lines. `#` starts a comment, blank lines are skipped.
pub fn parse(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            bail!("config line {}: expected key = value", i + 1);
        };
        let key = k.trim().trim_start_matches("--").replace('_', "-");
        if key.is_empty() || key == "config" {
            bail!("config line {}: bad key `{}`", i + 1, k.trim());
        }
        out.push((key, v.trim().to_string()));
    }
    Ok(out)
}

/// Turns config entries into argv tokens. `key = true` becomes a bare
/// switch and `key = false` is dropped.
pub fn to_args(entries: &[(String, String)]) -> Vec<String> {
    let mut out = Vec::new();
    for (k, v) in entries {
        match v.as_str() {
            "true" => out.push(format!("--{k}")),
            "false" => {}
            _ => out.push(format!("--{k}={v}")),
        }
    }
    out
}

fn config_path(args: &[String]) -> Option<String> {
    let mut it = args.iter();
    while let Some(a) = it.next() {
        if a == "--config" {
            return it.next().cloned();
        }
        if let Some(p) = a.strip_prefix("--config=") {
            return Some(p.to_string());
        }
    }
    None
}

/// Expands `--config FILE` into the flags it holds. The entries go right after
/// the subcommand name, before any flag from the command line.
pub fn expand(args: Vec<String>) -> Result<Vec<String>> {
    let Some(path) = config_path(&args) else {
        return Ok(args);
    };
    let text = std::fs::read_to_string(Path::new(&path))
        .with_context(|| format!("reading config {path}"))?;
    let injected = to_args(&parse(&text)?);
    // argv[0], then global flags, then the subcommand.
    let sub = args
        .iter()
        .skip(1)
        .position(|a| !a.starts_with('-'))
        .map_or(args.len(), |p| p + 2);
    let mut out = args[..sub].to_vec();
    out.extend(injected);
    out.extend_from_slice(&args[sub..]);
    Ok(out)
}
