//! Experiment configuration files.
//!
//! A config is TOML whose keys flatten to the dotted names understood by
//! [`ExperimentConfig::apply`]; `model.d_model = 8` and a `[model]` table
//! with `d_model = 8` are equivalent. Layer ranges may be written as
//! `"[1-3]"`, `[1, 3]` or `"none"`.

use std::path::Path;

use rgse_core::config::{DataSource, ExperimentConfig};
use toml::{Table, Value};

use crate::error::{self, Error, Result};

/// Overrides `train.seed` when set.
pub const SEED_ENV: &str = "RGSE_SEED";

fn scalar(key: &str, v: &Value) -> Result<String, String> {
    Ok(match v {
        Value::String(s) => s.clone(),
        Value::Integer(i) => i.to_string(),
        Value::Float(f) => format!("{f:?}"),
        Value::Boolean(b) => b.to_string(),
        Value::Array(a) if a.is_empty() => "none".to_string(),
        Value::Array(a) => match a.as_slice() {
            [Value::Integer(x)] => format!("[{x}-{x}]"),
            [Value::Integer(x), Value::Integer(y)] => format!("[{x}-{y}]"),
            _ => return Err(format!("`{key}`: arrays must hold one or two integers")),
        },
        Value::Datetime(_) | Value::Table(_) => return Err(format!("`{key}`: unsupported value type")),
    })
}

/// Dotted `(key, value)` pairs of a TOML table, sorted by key.
pub fn flatten(table: &Table) -> Result<Vec<(String, String)>, String> {
    fn walk(prefix: &str, t: &Table, out: &mut Vec<(String, String)>) -> Result<(), String> {
        for (k, v) in t {
            let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
            match v {
                Value::Table(inner) => walk(&key, inner, out)?,
                other => out.push((key.clone(), scalar(&key, other)?)),
            }
        }
        Ok(())
    }
    let mut out = Vec::new();
    walk("", table, &mut out)?;
    out.sort();
    Ok(out)
}

pub(crate) fn parse_table(path: &Path, text: &str) -> Result<Table> {
    text.parse::<Table>().map_err(|e| Error::format(path, e.to_string()))
}

/// Resolve relative data paths against `base` and check that they exist.
fn check_files(cfg: &mut ExperimentConfig, base: Option<&Path>) -> Vec<rgse_core::Error> {
    let mut problems = Vec::new();
    if let DataSource::Files {
        train_src,
        train_tgt,
        test_src,
        test_tgt,
        ..
    } = &mut cfg.data
    {
        for (field, p) in [
            ("data.train_src", train_src),
            ("data.train_tgt", train_tgt),
            ("data.test_src", test_src),
            ("data.test_tgt", test_tgt),
        ] {
            if p.is_empty() {
                continue;
            }
            if let Some(b) = base {
                if Path::new(p.as_str()).is_relative() {
                    *p = b.join(&*p).to_string_lossy().into_owned();
                }
            }
            if !Path::new(p.as_str()).is_file() {
                problems.push(rgse_core::Error::config(field, format!("file not found: {p}")));
            }
        }
    }
    problems
}

/// Build a validated config from dotted pairs. `base` anchors relative data
/// paths. Every field-level problem is reported at once.
pub fn resolve(pairs: &[(String, String)], base: Option<&Path>) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::from_pairs(pairs.iter().map(|(k, v)| (k.as_str(), v.as_str())))?;
    if let Ok(seed) = std::env::var(SEED_ENV) {
        cfg.apply([("train.seed", seed.as_str())])?;
    }
    let mut problems = cfg.problems();
    problems.extend(check_files(&mut cfg, base));
    if problems.is_empty() {
        Ok(cfg)
    } else {
        Err(Error::Invalid(problems))
    }
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let table = parse_table(path, &error::read(path)?)?;
    let pairs = flatten(&table).map_err(|m| Error::format(path, m))?;
    resolve(&pairs, path.parent())
}
