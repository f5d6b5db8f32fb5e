//! BPE merge tables as `left right` lines in priority order.

use rgse_core::bpe::BpeModel;
use rgse_core::{Error, Result};

pub fn write_merges(model: &BpeModel) -> String {
    model.merges().iter().map(|(l, r)| format!("{l} {r}\n")).collect()
}

/// Blank lines and `#` comments are ignored.
pub fn read_merges(text: &str) -> Result<BpeModel> {
    let mut merges = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let l = line.trim();
        if l.is_empty() || l.starts_with('#') {
            continue;
        }
        let mut parts = l.split_whitespace();
        match (parts.next(), parts.next(), parts.next()) {
            (Some(a), Some(b), None) => merges.push((a.to_string(), b.to_string())),
            _ => {
                return Err(Error::Parse {
                    line: i + 1,
                    msg: format!("expected `left right`, got `{l}`"),
                })
            }
        }
    }
    Ok(BpeModel::from_merges(merges))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rgse_core::bpe::learn_bpe;

    #[test]
    fn round_trip() {
        let corpus: Vec<String> = ["lower", "lowest", "newer", "wider"].iter().map(|s| s.to_string()).collect();
        let m = learn_bpe(&corpus, 6).unwrap();
        let back = read_merges(&write_merges(&m)).unwrap();
        assert_eq!(back.merges(), m.merges());
        assert_eq!(back.segment("lowest"), m.segment("lowest"));
    }

    #[test]
    fn malformed_line() {
        assert!(matches!(read_merges("a b\nc\n"), Err(Error::Parse { line: 2, .. })));
    }
}
