//! CoNLL-U reading and writing.
//!
//! Only ID, FORM, HEAD and DEPREL are used. Multiword-token ranges (`1-2`)
//! and empty nodes (`3.1`) are skipped.

use std::fmt::Write as _;

use rgse_core::graph::{DepEdge, DepGraph};
use rgse_core::{Error, Result};

const COLUMNS: usize = 10;

struct Row {
    line: usize,
    form: String,
    head: usize,
    label: String,
}

fn parse_err(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse { line, msg: msg.into() }
}

fn finish(id: Option<String>, count: usize, rows: &mut Vec<Row>, out: &mut Vec<DepGraph>) -> Result<()> {
    if rows.is_empty() {
        return Ok(());
    }
    let n = rows.len();
    let mut edges = Vec::new();
    for (i, r) in rows.iter().enumerate() {
        if r.head > n {
            return Err(parse_err(r.line, format!("head {} out of range for a {n}-token sentence", r.head)));
        }
        if r.head == i + 1 {
            return Err(parse_err(r.line, "token is its own head"));
        }
        if r.head > 0 {
            edges.push(DepEdge {
                dependent: i,
                head: r.head - 1,
                label: r.label.clone(),
            });
        }
    }
    let tokens = rows.iter().map(|r| r.form.clone()).collect();
    let id = id.unwrap_or_else(|| format!("s{}", count + 1));
    out.push(DepGraph::new(id, tokens, edges)?);
    rows.clear();
    Ok(())
}

/// One graph per sentence. A `# sent_id = ...` comment names the sentence;
/// otherwise sentences are numbered `s1, s2, ...`.
pub fn parse_conllu(text: &str) -> Result<Vec<DepGraph>> {
    let mut out = Vec::new();
    let mut rows: Vec<Row> = Vec::new();
    let mut sent_id: Option<String> = None;
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let l = raw.trim_end_matches('\r');
        if l.trim().is_empty() {
            finish(sent_id.take(), out.len(), &mut rows, &mut out)?;
            continue;
        }
        if let Some(comment) = l.strip_prefix('#') {
            if let Some((k, v)) = comment.split_once('=') {
                if k.trim() == "sent_id" {
                    sent_id = Some(v.trim().to_string());
                }
            }
            continue;
        }
        let cols: Vec<&str> = l.split('\t').collect();
        if cols.len() != COLUMNS {
            return Err(parse_err(line, format!("expected {COLUMNS} tab-separated columns, found {}", cols.len())));
        }
        if cols[0].contains('-') || cols[0].contains('.') {
            continue;
        }
        let id: usize = cols[0].parse().map_err(|_| parse_err(line, format!("bad token id `{}`", cols[0])))?;
        if id != rows.len() + 1 {
            return Err(parse_err(line, format!("token id {id} out of sequence, expected {}", rows.len() + 1)));
        }
        let head: usize = cols[6].parse().map_err(|_| parse_err(line, format!("bad head `{}`", cols[6])))?;
        rows.push(Row {
            line,
            form: cols[1].to_string(),
            head,
            label: cols[7].to_string(),
        });
    }
    finish(sent_id, out.len(), &mut rows, &mut out)?;
    Ok(out)
}

/// Write graphs back as CoNLL-U. Unused columns are `_`; roots get the
/// label `root`. Graphs with more than one head per token (subword graphs)
/// cannot be written.
pub fn to_conllu(graphs: &[DepGraph]) -> Result<String> {
    let mut s = String::new();
    for g in graphs {
        let heads = g
            .heads()
            .ok_or_else(|| Error::Argument(format!("sentence {} has a token with several heads", g.sentence_id())))?;
        let _ = writeln!(s, "# sent_id = {}", g.sentence_id());
        for (i, tok) in g.tokens().iter().enumerate() {
            let (head, label) = match heads[i] {
                Some(h) => (h + 1, g.label(i, h).unwrap_or("dep")),
                None => (0, "root"),
            };
            let _ = writeln!(s, "{}\t{tok}\t_\t_\t_\t_\t{head}\t{label}\t_\t_", i + 1);
        }
        s.push('\n');
    }
    Ok(s)
}
