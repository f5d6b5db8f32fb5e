//! CSV and SVG renderings of training and evaluation results.

use std::fmt::Write as _;

use rgse_core::eval::{Bucket, EvalReport};
use rgse_core::train::EpochRecord;

fn render(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for r in rows {
        w.write_record(&r).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv output is utf-8")
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

/// `epoch,train_loss,valid_loss`; the validation cell is empty on epochs
/// without validation.
pub fn loss_csv(records: &[EpochRecord]) -> String {
    render(
        &["epoch", "train_loss", "valid_loss"],
        records
            .iter()
            .map(|r| vec![r.epoch.to_string(), r.train_loss.to_string(), opt(r.valid_loss)]),
    )
}

/// One row per length bucket plus a final `corpus` row. Empty buckets have
/// an empty score.
pub fn eval_csv(report: &EvalReport) -> String {
    let total: usize = report.buckets.iter().map(|b| b.count).sum();
    let buckets = report
        .buckets
        .iter()
        .map(|b| vec![b.label(), b.count.to_string(), opt(b.bleu), String::new()]);
    let corpus = std::iter::once(vec![
        "corpus".to_string(),
        total.to_string(),
        report.bleu.to_string(),
        report.token_accuracy.to_string(),
    ]);
    render(&["bucket", "count", "bleu", "token_accuracy"], buckets.chain(corpus))
}

/// One row of the ablation table.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub cell_id: String,
    pub setting: String,
    pub steps_per_sec: f64,
    /// Test BLEU-4 in points.
    pub val_score: f64,
    /// `None` on the baseline row.
    pub delta: Option<f64>,
}

pub const ABLATION_HEADER: [&str; 5] = ["cell_id", "setting", "steps_per_sec", "val_score", "delta"];

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    render(
        &ABLATION_HEADER,
        rows.iter().map(|r| {
            vec![
                r.cell_id.clone(),
                r.setting.clone(),
                format!("{:.3}", r.steps_per_sec),
                r.val_score.to_string(),
                r.delta.map_or_else(|| "-".to_string(), |d| d.to_string()),
            ]
        }),
    )
}

/// BLEU per length bucket as a line chart. Empty buckets break the line.
pub fn bleu_chart_svg(buckets: &[Bucket]) -> String {
    let (w, h, pad) = (480.0, 300.0, 40.0);
    let n = buckets.len().max(1);
    let x = |i: usize| pad + (w - 2.0 * pad) * (i as f64 + 0.5) / n as f64;
    let y = |v: f64| h - pad - (h - 2.0 * pad) * v.clamp(0.0, 1.0);
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#);
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<line x1="{pad}" y1="{}" x2="{}" y2="{}" stroke="black"/><line x1="{pad}" y1="{pad}" x2="{pad}" y2="{}" stroke="black"/>"#,
        h - pad,
        w - pad,
        h - pad,
        h - pad
    );
    let _ = writeln!(s, r#"<text x="{}" y="{}" font-size="12" text-anchor="middle">source length</text>"#, w / 2.0, h - 6.0);
    let _ = writeln!(s, r#"<text x="12" y="{}" font-size="12" transform="rotate(-90 12 {})" text-anchor="middle">BLEU</text>"#, h / 2.0, h / 2.0);
    let mut segment: Vec<String> = Vec::new();
    let mut lines = Vec::new();
    for (i, b) in buckets.iter().enumerate() {
        let _ = writeln!(s, r#"<text x="{:.1}" y="{}" font-size="10" text-anchor="middle">{}</text>"#, x(i), h - pad + 14.0, b.label());
        match b.bleu {
            Some(v) => {
                segment.push(format!("{:.1},{:.1}", x(i), y(v)));
                let _ = writeln!(s, r#"<circle cx="{:.1}" cy="{:.1}" r="3" fill="steelblue"/>"#, x(i), y(v));
            }
            None => lines.push(std::mem::take(&mut segment)),
        }
    }
    lines.push(segment);
    for l in lines.into_iter().filter(|l| l.len() > 1) {
        let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="steelblue" stroke-width="2"/>"#, l.join(" "));
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report() -> EvalReport {
        EvalReport {
            bleu: 0.5,
            buckets: vec![
                Bucket { lower: 0, upper: Some(10), count: 3, bleu: Some(0.25) },
                Bucket { lower: 10, upper: None, count: 0, bleu: None },
            ],
            token_accuracy: 0.75,
            loss: None,
            fingerprint: String::new(),
        }
    }

    #[test]
    fn eval_rows() {
        let csv = eval_csv(&report());
        assert_eq!(csv, "bucket,count,bleu,token_accuracy\n\"(0,10]\",3,0.25,\n\"(10,inf)\",0,,\ncorpus,3,0.5,0.75\n");
    }

    #[test]
    fn loss_rows() {
        let r = [EpochRecord { epoch: 0, train_loss: 2.5, valid_loss: None }, EpochRecord { epoch: 1, train_loss: 1.0, valid_loss: Some(1.5) }];
        assert_eq!(loss_csv(&r), "epoch,train_loss,valid_loss\n0,2.5,\n1,1,1.5\n");
    }

    #[test]
    fn ablation_header_only() {
        assert_eq!(ablation_csv(&[]), "cell_id,setting,steps_per_sec,val_score,delta\n");
    }

    #[test]
    fn chart_has_one_point_per_scored_bucket() {
        let svg = bleu_chart_svg(&report().buckets);
        assert_eq!(svg.matches("<circle").count(), 1);
        assert!(svg.ends_with("</svg>\n"));
    }
}
