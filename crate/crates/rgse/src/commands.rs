//! The operations behind each subcommand.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use rgse_core::config::ExperimentConfig;
use rgse_core::eval::EvalReport;
use rgse_core::train::TrainReport;
use toml::Value;

use crate::checkpoint;
use crate::config_file::{self, flatten, load_config, parse_table};
use crate::conllu::parse_conllu;
use crate::error::{self, Error, Result};
use crate::manifest::{fingerprint, RunManifest};
use crate::pipeline::{evaluate, fit, Corpus, Loaded};
use crate::report::{ablation_csv, bleu_chart_svg, eval_csv, loss_csv, AblationRow};
use crate::verify::{self, Check, Suite};

pub const CHECKPOINT: &str = "model.params";
pub const LOSS_CSV: &str = "loss.csv";
pub const EVAL_CSV: &str = "eval.csv";
pub const EVAL_SVG: &str = "eval.svg";
pub const ABLATION_CSV: &str = "ablation.csv";

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Everything a training run produced.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub manifest: RunManifest,
    pub report: TrainReport,
    pub eval: EvalReport,
    pub steps_per_sec: f64,
}

/// Train and evaluate `config`, writing the checkpoint, loss and evaluation
/// reports and a manifest entry into `out_dir`.
pub fn train_config(config: &ExperimentConfig, out_dir: &Path) -> Result<TrainOutcome> {
    create_dir(out_dir)?;
    let mut manifest = RunManifest::new("train", fingerprint(config));
    let corpus = Corpus::prepare(config)?;
    log::info!(
        "{} training / {} test pairs, vocab {} -> {}",
        corpus.train.len(),
        corpus.test.len(),
        corpus.src_vocab.len(),
        corpus.tgt_vocab.len()
    );
    let trained = fit(config, &corpus, |r| match r.valid_loss {
        Some(v) => log::info!("epoch {:>3}  train {:.4}  valid {:.4}", r.epoch, r.train_loss, v),
        None => log::info!("epoch {:>3}  train {:.4}", r.epoch, r.train_loss),
    })?;
    let ckpt = out_dir.join(CHECKPOINT);
    checkpoint::save(&ckpt, &trained.store, &corpus.meta(config))?;
    error::write(out_dir.join(LOSS_CSV), loss_csv(&trained.report.epochs))?;
    let eval = if corpus.test.is_empty() {
        None
    } else {
        let e = evaluate(config, &trained, &corpus)?;
        error::write(out_dir.join(EVAL_CSV), eval_csv(&e))?;
        error::write(out_dir.join(EVAL_SVG), bleu_chart_svg(&e.buckets))?;
        log::info!("test BLEU {:.2}, token accuracy {:.4}", 100.0 * e.bleu, e.token_accuracy);
        Some(e)
    };
    let meta = checkpoint::meta_path(&ckpt);
    let mut artifacts = vec![CHECKPOINT.to_string(), meta.file_name().expect("has a name").to_string_lossy().into_owned(), LOSS_CSV.into()];
    if eval.is_some() {
        artifacts.extend([EVAL_CSV.to_string(), EVAL_SVG.to_string()]);
    }
    manifest.artifacts = artifacts;
    manifest.append(out_dir)?;
    Ok(TrainOutcome {
        manifest,
        steps_per_sec: trained.steps_per_sec(),
        report: trained.report,
        eval: eval.unwrap_or(EvalReport {
            bleu: 0.0,
            buckets: Vec::new(),
            token_accuracy: 0.0,
            loss: None,
            fingerprint: fingerprint(config),
        }),
    })
}

pub fn cmd_train(config_path: &Path, out_dir: &Path) -> Result<RunManifest> {
    let config = load_config(config_path)?;
    Ok(train_config(&config, out_dir)?.manifest)
}

/// Keys an ablation cell may change.
pub const GRID_KEYS: [&str; 4] = ["rgse.variant", "rgse.phi", "rgse.tau", "rgse.layers"];

#[derive(Debug, Clone, PartialEq)]
pub struct GridCell {
    pub id: String,
    pub set: Vec<(String, String)>,
}

/// An ablation grid: a base configuration, optional overrides for the
/// reference row, and the cells.
///
/// ```toml
/// [base]
/// model.kind = "hybrid"
///
/// [baseline]
/// rgse.layers = "none"
///
/// [[cells]]
/// id = "1-3"
/// set = { "rgse.layers" = "[1-3]" }
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub base: Vec<(String, String)>,
    pub baseline: Vec<(String, String)>,
    pub cells: Vec<GridCell>,
    /// Anchor for relative data paths.
    pub dir: Option<PathBuf>,
}

fn sub_table(path: &Path, table: &toml::Table, key: &str) -> Result<Vec<(String, String)>> {
    match table.get(key) {
        None => Ok(Vec::new()),
        Some(Value::Table(t)) => flatten(t).map_err(|m| Error::format(path, m)),
        Some(_) => Err(Error::format(path, format!("`{key}` must be a table"))),
    }
}

pub fn read_grid(path: &Path) -> Result<Grid> {
    let table = parse_table(path, &error::read(path)?)?;
    if let Some(k) = table.keys().find(|k| !["base", "baseline", "cells"].contains(&k.as_str())) {
        return Err(Error::format(path, format!("unknown grid key `{k}`")));
    }
    let mut cells = Vec::new();
    if let Some(list) = table.get("cells") {
        let Value::Array(list) = list else {
            return Err(Error::format(path, "`cells` must be an array of tables"));
        };
        for (i, c) in list.iter().enumerate() {
            let Value::Table(c) = c else {
                return Err(Error::format(path, format!("cell {i} is not a table")));
            };
            let id = match c.get("id") {
                Some(Value::String(s)) => s.clone(),
                Some(other) => other.to_string(),
                None => format!("cell{}", i + 1),
            };
            cells.push(GridCell {
                id,
                set: sub_table(path, c, "set")?,
            });
        }
    }
    Ok(Grid {
        base: sub_table(path, &table, "base")?,
        baseline: sub_table(path, &table, "baseline")?,
        cells,
        dir: path.parent().map(Path::to_path_buf),
    })
}

fn merged(base: &[(String, String)], over: &[(String, String)]) -> Vec<(String, String)> {
    let mut m: std::collections::BTreeMap<String, String> = base.iter().cloned().collect();
    m.extend(over.iter().cloned());
    m.into_iter().collect()
}

fn setting(set: &[(String, String)]) -> String {
    match set {
        [] => "base".to_string(),
        [(_, v)] => v.clone(),
        many => many.iter().map(|(k, v)| format!("{k}={v}")).collect::<Vec<_>>().join(";"),
    }
}

fn safe_dir_name(id: &str) -> String {
    id.chars().map(|c| if c.is_ascii_alphanumeric() || "-_.".contains(c) { c } else { '_' }).collect()
}

struct Job {
    id: String,
    setting: String,
    config: ExperimentConfig,
}

/// Train the baseline and every valid cell with the base seed and write
/// `ablation.csv`. Invalid cells are logged and skipped; a grid without
/// cells yields a header-only table.
pub fn run_grid(grid: &Grid, out_dir: &Path, jobs: usize) -> Result<Vec<AblationRow>> {
    create_dir(out_dir)?;
    let base_pairs = merged(&grid.base, &[]);
    let base = config_file::resolve(&base_pairs, grid.dir.as_deref())?;
    let mut manifest = RunManifest::new("ablate", fingerprint(&base));
    let mut queue = Vec::new();
    if !grid.cells.is_empty() {
        queue.push(Job {
            id: "baseline".to_string(),
            setting: setting(&grid.baseline),
            config: config_file::resolve(&merged(&grid.base, &grid.baseline), grid.dir.as_deref())?,
        });
    }
    for cell in &grid.cells {
        if let Some((k, _)) = cell.set.iter().find(|(k, _)| !GRID_KEYS.contains(&k.as_str())) {
            log::warn!("skipping cell `{}`: `{k}` is not one of {GRID_KEYS:?}", cell.id);
            continue;
        }
        if cell.id == "baseline" || queue.iter().any(|j: &Job| j.id == cell.id) {
            log::warn!("skipping cell `{}`: duplicate id", cell.id);
            continue;
        }
        match config_file::resolve(&merged(&grid.base, &cell.set), grid.dir.as_deref()) {
            Ok(config) => queue.push(Job {
                id: cell.id.clone(),
                setting: setting(&cell.set),
                config,
            }),
            Err(e) => log::warn!("skipping cell `{}`: {e}", cell.id),
        }
    }

    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<TrainOutcome>>>> = Mutex::new((0..queue.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..jobs.max(1).min(queue.len().max(1)) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(job) = queue.get(i) else { break };
                log::info!("cell `{}` ({})", job.id, job.setting);
                let r = train_config(&job.config, &out_dir.join("cells").join(safe_dir_name(&job.id)));
                results.lock().expect("no worker panicked")[i] = Some(r);
            });
        }
    });
    let results = results.into_inner().expect("no worker panicked");

    let mut rows = Vec::new();
    let mut baseline_score = None;
    for (job, r) in queue.iter().zip(results) {
        let outcome = match r.expect("every job ran") {
            Ok(o) => o,
            Err(e) if job.id == "baseline" => return Err(e),
            Err(e) => {
                log::warn!("cell `{}` failed: {e}", job.id);
                continue;
            }
        };
        let score = 100.0 * outcome.eval.bleu;
        let delta = match baseline_score {
            None => {
                baseline_score = Some(score);
                None
            }
            Some(b) => Some(score - b),
        };
        rows.push(AblationRow {
            cell_id: job.id.clone(),
            setting: job.setting.clone(),
            steps_per_sec: outcome.steps_per_sec,
            val_score: score,
            delta,
        });
    }
    error::write(out_dir.join(ABLATION_CSV), ablation_csv(&rows))?;
    manifest.artifacts = vec![ABLATION_CSV.to_string()];
    manifest.append(out_dir)?;
    Ok(rows)
}

pub fn cmd_ablate(grid_path: &Path, out_dir: &Path, jobs: usize) -> Result<PathBuf> {
    run_grid(&read_grid(grid_path)?, out_dir, jobs)?;
    Ok(out_dir.join(ABLATION_CSV))
}

/// Run a verification suite; the error carries the failure count.
pub fn cmd_verify(suite: Suite) -> (Vec<Check>, Result<()>) {
    let checks = verify::run(suite);
    let failed = checks.iter().filter(|c| !c.passed).count();
    let status = if failed == 0 { Ok(()) } else { Err(Error::Verification { failed }) };
    (checks, status)
}

/// Greedy translations of every sentence in a CoNLL-U file, in order.
pub fn cmd_translate(checkpoint: &Path, input: &Path) -> Result<Vec<String>> {
    let loaded = Loaded::open(checkpoint)?;
    let graphs = parse_conllu(&error::read(input)?).map_err(|e| Error::format(input, e.to_string()))?;
    graphs.into_iter().map(|g| loaded.translate(g)).collect()
}
