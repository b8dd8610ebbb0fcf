//! Layered configuration: defaults, then a JSON config file, then flags.
//!
//! Every layer is a JSON object. A config file may only name keys that the
//! defaults already have; nested objects merge key by key, except tagged
//! objects whose `kind` changes, which are replaced whole and checked when
//! the result is deserialised.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

use crate::CliError;

pub fn merge(base: &mut Value, overlay: Value, path: &str) -> Result<(), CliError> {
    match (base, overlay) {
        (Value::Object(b), Value::Object(o)) => {
            let kind_changes = matches!((b.get("kind"), o.get("kind")), (Some(x), Some(y)) if x != y);
            if kind_changes {
                *b = o;
                return Ok(());
            }
            for (k, v) in o {
                let key = if path.is_empty() { k.clone() } else { format!("{path}.{k}") };
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v, &key)?,
                    None => return Err(CliError::Usage(format!("unknown config key '{key}'"))),
                }
            }
            Ok(())
        }
        (slot, v) => {
            *slot = v;
            Ok(())
        }
    }
}

pub fn read_json(path: &Path) -> Result<Value, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::parse(path, e))
}

/// `defaults <- config file <- flags`, then deserialised strictly.
pub fn resolve<T: Serialize + DeserializeOwned>(
    defaults: &T,
    file: Option<&Path>,
    flags: Value,
) -> Result<T, CliError> {
    let mut v = serde_json::to_value(defaults).expect("config types serialise");
    if let Some(path) = file {
        let overlay = read_json(path)?;
        if !overlay.is_object() {
            return Err(CliError::Usage(format!(
                "{}: config file must hold a JSON object",
                path.display()
            )));
        }
        merge(&mut v, overlay, "")?;
    }
    merge(&mut v, flags, "")?;
    serde_json::from_value(v).map_err(|e| CliError::Usage(format!("invalid configuration: {e}")))
}

/// Parses `a,b,c`, `lo..hi` (unit steps) or `lo..hi:step`, inclusive.
pub fn parse_list(s: &str) -> Result<Vec<f64>, String> {
    let num = |t: &str| {
        t.trim()
            .parse::<f64>()
            .map_err(|_| format!("'{t}' is not a number"))
    };
    if let Some((lo, rest)) = s.split_once("..") {
        let (hi, step) = match rest.split_once(':') {
            Some((hi, step)) => (num(hi)?, num(step)?),
            None => (num(rest)?, 1.0),
        };
        let lo = num(lo)?;
        if !(step > 0.0) || hi < lo {
            return Err(format!("bad range '{s}'"));
        }
        let n = ((hi - lo) / step + 1e-9).floor() as usize;
        return Ok((0..=n).map(|k| lo + k as f64 * step).collect());
    }
    s.split(',').map(num).collect()
}
