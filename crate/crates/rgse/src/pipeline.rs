//! From a configuration to a trained, evaluated model.

use std::path::Path;
use std::time::Instant;

use rgse_core::bpe::{join_pieces, learn_bpe, BpeModel};
use rgse_core::config::{DataSource, ExperimentConfig};
use rgse_core::encoders::Vocab;
use rgse_core::eval::{decode_limit, length_bucket_eval, EvalReport, DEFAULT_BOUNDARIES};
use rgse_core::graph::apply_subwords;
use rgse_core::models::{Example, Model};
use rgse_core::synth::{generate_task, source_words, target_words, SynthSpec};
use rgse_core::train::{mean_loss, train, EpochRecord, TrainReport};
use rgse_core::{DepGraph, ParamStore};

use crate::checkpoint::{self, CheckpointMeta};
use crate::conllu::parse_conllu;
use crate::error::{self, Error, Result};
use crate::manifest::fingerprint;

/// Vocabularies, subword models and id-encoded splits of one experiment.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub src_vocab: Vocab,
    pub tgt_vocab: Vocab,
    pub labels: Vec<String>,
    pub src_bpe: Option<BpeModel>,
    pub tgt_bpe: Option<BpeModel>,
    pub train: Vec<Example>,
    pub test: Vec<Example>,
}

fn read_split(src: &str, tgt: &str, tgt_field: &str) -> Result<Vec<(DepGraph, Vec<String>)>> {
    let graphs = parse_conllu(&error::read(src)?).map_err(|e| Error::format(src, e.to_string()))?;
    let targets: Vec<Vec<String>> = error::read(tgt)?
        .lines()
        .map(|l| l.split_whitespace().map(str::to_string).collect())
        .collect();
    if graphs.len() != targets.len() {
        return Err(rgse_core::Error::config(
            tgt_field,
            format!("{} target lines for {} source sentences", targets.len(), graphs.len()),
        )
        .into());
    }
    Ok(graphs.into_iter().zip(targets).collect())
}

fn segment_source(bpe: Option<&BpeModel>, g: DepGraph) -> Result<DepGraph> {
    match bpe {
        Some(m) => Ok(apply_subwords(&g, &m.subword_map(g.tokens()))?),
        None => Ok(g),
    }
}

fn segment_target(bpe: Option<&BpeModel>, words: Vec<String>) -> Vec<String> {
    match bpe {
        Some(m) => words.iter().flat_map(|w| m.segment(w)).collect(),
        None => words,
    }
}

fn labels_of<'a>(graphs: impl Iterator<Item = &'a DepGraph>) -> Vec<String> {
    let mut labels: Vec<String> = graphs.flat_map(|g| g.edges().iter().map(|e| e.label.clone())).collect();
    labels.sort();
    labels.dedup();
    labels
}

impl Corpus {
    pub fn prepare(config: &ExperimentConfig) -> Result<Self> {
        if let Some(spec) = SynthSpec::from_source(&config.data) {
            return Self::synthetic(&spec);
        }
        let DataSource::Files {
            train_src,
            train_tgt,
            test_src,
            test_tgt,
            bpe_merges,
        } = &config.data
        else {
            unreachable!("synthetic sources are handled above")
        };
        let train_pairs = read_split(train_src, train_tgt, "data.train_tgt")?;
        let test_pairs = read_split(test_src, test_tgt, "data.test_tgt")?;
        if train_pairs.is_empty() {
            return Err(rgse_core::Error::config("data.train_src", "no training sentences").into());
        }
        let (src_bpe, tgt_bpe) = if *bpe_merges > 0 {
            let src_text: Vec<String> = train_pairs.iter().map(|(g, _)| g.tokens().join(" ")).collect();
            let tgt_text: Vec<String> = train_pairs.iter().map(|(_, t)| t.join(" ")).collect();
            (Some(learn_bpe(&src_text, *bpe_merges)?), Some(learn_bpe(&tgt_text, *bpe_merges)?))
        } else {
            (None, None)
        };
        let lift = |pairs: Vec<(DepGraph, Vec<String>)>| -> Result<Vec<(DepGraph, Vec<String>)>> {
            pairs
                .into_iter()
                .map(|(g, t)| Ok((segment_source(src_bpe.as_ref(), g)?, segment_target(tgt_bpe.as_ref(), t))))
                .collect()
        };
        let train_pairs = lift(train_pairs)?;
        let test_pairs = lift(test_pairs)?;
        let src_vocab = Vocab::build(train_pairs.iter().flat_map(|(g, _)| g.tokens().iter().map(String::as_str)));
        let tgt_vocab = Vocab::build(train_pairs.iter().flat_map(|(_, t)| t.iter().map(String::as_str)));
        let labels = labels_of(train_pairs.iter().map(|(g, _)| g));
        let encode = |pairs: Vec<(DepGraph, Vec<String>)>| -> Vec<Example> {
            pairs.into_iter().map(|(g, t)| Example::new(g, &t, &src_vocab, &tgt_vocab)).collect()
        };
        Ok(Corpus {
            train: encode(train_pairs),
            test: encode(test_pairs),
            src_vocab,
            tgt_vocab,
            labels,
            src_bpe,
            tgt_bpe,
        })
    }

    pub fn synthetic(spec: &SynthSpec) -> Result<Self> {
        let task = generate_task(spec)?;
        let src_words = source_words(spec);
        let tgt_words = target_words(spec);
        let src_vocab = Vocab::build(src_words.iter().map(String::as_str));
        let tgt_vocab = Vocab::build(tgt_words.iter().map(String::as_str));
        let encode = |pairs: &[rgse_core::synth::SynthPair]| -> Vec<Example> {
            pairs
                .iter()
                .map(|p| Example::new(p.source.clone(), &p.target, &src_vocab, &tgt_vocab))
                .collect()
        };
        Ok(Corpus {
            train: encode(&task.train),
            test: encode(&task.test),
            labels: labels_of(task.train.iter().map(|p| &p.source)),
            src_vocab,
            tgt_vocab,
            src_bpe: None,
            tgt_bpe: None,
        })
    }

    pub fn meta(&self, config: &ExperimentConfig) -> CheckpointMeta {
        CheckpointMeta {
            config: config.to_pairs().into_iter().collect(),
            src_vocab: self.src_vocab.tokens().to_vec(),
            tgt_vocab: self.tgt_vocab.tokens().to_vec(),
            labels: self.labels.clone(),
            src_merges: self.src_bpe.as_ref().map(|m| m.merges().to_vec()).unwrap_or_default(),
            tgt_merges: self.tgt_bpe.as_ref().map(|m| m.merges().to_vec()).unwrap_or_default(),
        }
    }
}

/// A trained model together with its training record.
#[derive(Debug, Clone)]
pub struct Trained {
    pub model: Model,
    pub store: ParamStore,
    pub report: TrainReport,
    pub seconds: f64,
}

impl Trained {
    pub fn steps_per_sec(&self) -> f64 {
        if self.seconds > 0.0 {
            self.report.steps as f64 / self.seconds
        } else {
            0.0
        }
    }
}

/// Initialise from `config.seed` and train on `corpus.train`, validating
/// on `corpus.test`.
pub fn fit(config: &ExperimentConfig, corpus: &Corpus, on_epoch: impl FnMut(&EpochRecord)) -> Result<Trained> {
    let mut store = ParamStore::new(config.seed);
    let model = Model::build(config, &mut store, corpus.src_vocab.len(), corpus.tgt_vocab.len(), &corpus.labels)?;
    let start = Instant::now();
    let valid = (!corpus.test.is_empty()).then_some(corpus.test.as_slice());
    let report = train(&model, &mut store, &corpus.train, valid, config, on_epoch)?;
    Ok(Trained {
        model,
        store,
        report,
        seconds: start.elapsed().as_secs_f64(),
    })
}

/// Decode the test split and score it by length bucket.
pub fn evaluate(config: &ExperimentConfig, trained: &Trained, corpus: &Corpus) -> Result<EvalReport> {
    let mut report = length_bucket_eval(&trained.model, &trained.store, &corpus.test, &DEFAULT_BOUNDARIES)?;
    report.loss = Some(mean_loss(&trained.model, &trained.store, &corpus.test, config.batch_size)?);
    report.fingerprint = fingerprint(config);
    Ok(report)
}

/// A model restored from a checkpoint, ready for decoding.
#[derive(Debug, Clone)]
pub struct Loaded {
    pub config: ExperimentConfig,
    pub model: Model,
    pub store: ParamStore,
    pub src_vocab: Vocab,
    pub tgt_vocab: Vocab,
    pub src_bpe: Option<BpeModel>,
    pub tgt_bpe: Option<BpeModel>,
}

impl Loaded {
    pub fn open(path: &Path) -> Result<Self> {
        let (saved, meta) = checkpoint::load(path)?;
        let config = ExperimentConfig::from_pairs(meta.config.iter())?;
        let src_vocab = Vocab::from_tokens(meta.src_vocab);
        let tgt_vocab = Vocab::from_tokens(meta.tgt_vocab);
        let mut store = ParamStore::new(config.seed);
        let model = Model::build(&config, &mut store, src_vocab.len(), tgt_vocab.len(), &meta.labels)?;
        checkpoint::restore(&mut store, &saved)?;
        let bpe = |m: Vec<(String, String)>| (!m.is_empty()).then(|| BpeModel::from_merges(m));
        Ok(Loaded {
            config,
            model,
            store,
            src_vocab,
            tgt_vocab,
            src_bpe: bpe(meta.src_merges),
            tgt_bpe: bpe(meta.tgt_merges),
        })
    }

    /// Greedy translation of one parsed sentence as space-separated words.
    pub fn translate(&self, graph: DepGraph) -> Result<String> {
        if graph.is_empty() {
            return Ok(String::new());
        }
        let graph = segment_source(self.src_bpe.as_ref(), graph)?;
        let src = self.src_vocab.ids(graph.tokens());
        let out = self.model.greedy_decode(&self.store, &graph, &src, decode_limit(src.len()))?;
        let pieces: Vec<String> = out.iter().map(|&i| self.tgt_vocab.token(i).to_string()).collect();
        let words = if self.tgt_bpe.is_some() { join_pieces(&pieces) } else { pieces };
        Ok(words.join(" "))
    }
}
