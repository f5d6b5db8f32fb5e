//! Parameter checkpoints.
//!
//! ```text
//! rgse-params v1 <count>\n
//! <name> <d1>x<d2>...\n <d1*d2*... little-endian f64>
//! ...
//! ```
//!
//! Tensors appear in name order. Vocabularies and the configuration live in
//! a JSON sidecar next to the parameter file.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rgse_core::{ParamStore, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{self, Error, Result};

const MAGIC: &str = "rgse-params v1";

pub fn encode_params(store: &ParamStore) -> Vec<u8> {
    let mut out = format!("{MAGIC} {}\n", store.len()).into_bytes();
    for (name, t) in store.iter() {
        let dims: Vec<String> = t.shape().iter().map(|d| d.to_string()).collect();
        out.extend_from_slice(format!("{name} {}\n", dims.join("x")).as_bytes());
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

fn take_line<'a>(bytes: &'a [u8], pos: &mut usize) -> Option<&'a str> {
    let rest = bytes.get(*pos..)?;
    let end = rest.iter().position(|&b| b == b'\n')?;
    *pos += end + 1;
    std::str::from_utf8(&rest[..end]).ok()
}

/// Inverse of [`encode_params`]. The returned store has seed 0; only its
/// values matter.
pub fn decode_params(bytes: &[u8]) -> std::result::Result<ParamStore, String> {
    let mut pos = 0;
    let header = take_line(bytes, &mut pos).ok_or("missing header")?;
    let count: usize = header
        .strip_prefix(MAGIC)
        .and_then(|c| c.trim().parse().ok())
        .ok_or_else(|| format!("bad header `{header}`"))?;
    let mut store = ParamStore::new(0);
    for i in 0..count {
        let line = take_line(bytes, &mut pos).ok_or_else(|| format!("tensor {i}: missing name line"))?;
        let (name, dims) = line.rsplit_once(' ').ok_or_else(|| format!("tensor {i}: bad line `{line}`"))?;
        let shape: Vec<usize> = dims
            .split('x')
            .map(|d| d.parse())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| format!("{name}: bad shape `{dims}`"))?;
        let n: usize = shape.iter().product();
        let raw = bytes.get(pos..pos + 8 * n).ok_or_else(|| format!("{name}: truncated data"))?;
        pos += 8 * n;
        let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8"))).collect();
        let t = Tensor::new(shape, data).map_err(|e| format!("{name}: {e}"))?;
        store.insert(name, t).map_err(|e| e.to_string())?;
    }
    if pos != bytes.len() {
        return Err(format!("{} trailing bytes", bytes.len() - pos));
    }
    Ok(store)
}

/// Everything besides the weights needed to rebuild a model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub config: BTreeMap<String, String>,
    pub src_vocab: Vec<String>,
    pub tgt_vocab: Vec<String>,
    pub labels: Vec<String>,
    #[serde(default)]
    pub src_merges: Vec<(String, String)>,
    #[serde(default)]
    pub tgt_merges: Vec<(String, String)>,
}

pub fn meta_path(params: &Path) -> PathBuf {
    params.with_extension("meta.json")
}

pub fn save(path: &Path, store: &ParamStore, meta: &CheckpointMeta) -> Result<()> {
    error::write(path, encode_params(store))?;
    let json = serde_json::to_string_pretty(meta).expect("meta is plain data");
    error::write(meta_path(path), json + "\n")
}

pub fn load(path: &Path) -> Result<(ParamStore, CheckpointMeta)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let store = decode_params(&bytes).map_err(|m| Error::format(path, m))?;
    let mp = meta_path(path);
    let meta = serde_json::from_str(&error::read(&mp)?).map_err(|e| Error::format(&mp, e.to_string()))?;
    Ok((store, meta))
}

/// Copy checkpoint values into a freshly registered store, failing with the
/// full shape diff when they disagree.
pub fn restore(target: &mut ParamStore, saved: &ParamStore) -> Result<()> {
    let diff = target.shape_diff(saved);
    if !diff.is_empty() {
        return Err(Error::Mismatch(diff));
    }
    for (name, t) in saved.iter() {
        target.set(name, t.data())?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store() -> ParamStore {
        let mut s = ParamStore::new(3);
        s.matrix("b.w", 3, 2).unwrap();
        s.bias("a.bias", 4).unwrap();
        s.set("a.bias", &[1.0, -0.0, f64::MIN_POSITIVE, 1e300]).unwrap();
        s
    }

    #[test]
    fn bytes_round_trip() {
        let s = store();
        let bytes = encode_params(&s);
        assert!(bytes.starts_with(b"rgse-params v1 2\na.bias 4\n"));
        let back = decode_params(&bytes).unwrap();
        for ((n1, t1), (n2, t2)) in s.iter().zip(back.iter()) {
            assert_eq!(n1, n2);
            assert_eq!(t1.shape(), t2.shape());
            assert_eq!(t1.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(), t2.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        }
    }

    #[test]
    fn truncated_is_rejected() {
        let bytes = encode_params(&store());
        assert!(decode_params(&bytes[..bytes.len() - 3]).is_err());
        assert!(decode_params(b"nonsense\n").is_err());
    }

    #[test]
    fn restore_reports_shape_diff() {
        let saved = store();
        let mut other = ParamStore::new(0);
        other.matrix("b.w", 2, 2).unwrap();
        match restore(&mut other, &saved).unwrap_err() {
            Error::Mismatch(d) => {
                assert!(d.iter().any(|l| l.starts_with("b.w")));
                assert!(d.iter().any(|l| l.starts_with("a.bias")));
            }
            e => panic!("{e}"),
        }
    }
}
