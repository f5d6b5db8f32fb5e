//! Experiment configuration as flat dotted keys (`model.d_model`,
//! `rgse.variant`, ...). Values travel as strings so a grid cell is just a
//! handful of key overrides.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::error::{Error, Result};
use crate::optim::{Optimizer, OptimizerKind};
use crate::rgse::{PhiMode, TauMode, Variant};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModelKind {
    Rnmt,
    Hybrid,
}

/// Encoder stack of the recurrent model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RnmtEncoder {
    BiGru,
    BiGruRgse,
    BiGruGcn,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OptimizerName {
    Sgd,
    Adam,
}

macro_rules! keyword_enum {
    ($ty:ty, $what:literal, $($variant:path => $s:literal),+ $(,)?) => {
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self { $($variant => $s),+ })
            }
        }
        impl FromStr for $ty {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($s => Ok($variant),)+
                    other => Err(Error::arg(format!(concat!("unknown ", $what, " `{}`"), other))),
                }
            }
        }
    };
}

keyword_enum!(ModelKind, "model kind", ModelKind::Rnmt => "rnmt", ModelKind::Hybrid => "hybrid");
keyword_enum!(RnmtEncoder, "encoder",
    RnmtEncoder::BiGru => "bigru",
    RnmtEncoder::BiGruRgse => "bigru_rgse",
    RnmtEncoder::BiGruGcn => "bigru_gcn",
);
keyword_enum!(OptimizerName, "optimizer", OptimizerName::Sgd => "sgd", OptimizerName::Adam => "adam");

/// Contiguous 1-based inclusive layer range such as `[1-3]`, or empty.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct LayerRange(Option<(usize, usize)>);

impl LayerRange {
    pub const EMPTY: LayerRange = LayerRange(None);

    pub fn new(first: usize, last: usize) -> Result<Self> {
        if first == 0 || last < first {
            return Err(Error::arg(format!("invalid layer range [{first}-{last}]")));
        }
        Ok(LayerRange(Some((first, last))))
    }

    pub fn bounds(&self) -> Option<(usize, usize)> {
        self.0
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_none()
    }

    /// Whether 1-based layer `layer` falls inside the range.
    pub fn contains(&self, layer: usize) -> bool {
        self.0.is_some_and(|(a, b)| (a..=b).contains(&layer))
    }

    pub fn len(&self) -> usize {
        self.0.map_or(0, |(a, b)| b - a + 1)
    }
}

impl fmt::Display for LayerRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.0 {
            Some((a, b)) => write!(f, "[{a}-{b}]"),
            None => f.write_str("none"),
        }
    }
}

impl FromStr for LayerRange {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim();
        if matches!(t, "" | "none" | "[]") {
            return Ok(LayerRange::EMPTY);
        }
        let inner = t.strip_prefix('[').and_then(|r| r.strip_suffix(']')).unwrap_or(t);
        let bad = || Error::arg(format!("layer range `{s}` is not of the form [a-b]"));
        let (a, b) = match inner.split_once('-') {
            Some((a, b)) => (a.trim(), b.trim()),
            None => (inner, inner),
        };
        LayerRange::new(a.parse().map_err(|_| bad())?, b.parse().map_err(|_| bad())?)
    }
}

/// Where the training data comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    /// Generated tree-traversal task.
    Synth {
        vocab: usize,
        min_len: usize,
        max_len: usize,
        train: usize,
        test: usize,
        locality: f64,
        root_words: usize,
        seed: u64,
    },
    /// CoNLL-U sources with one tokenised target line per sentence.
    Files {
        train_src: String,
        train_tgt: String,
        test_src: String,
        test_tgt: String,
        bpe_merges: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub model: ModelKind,
    pub encoder: RnmtEncoder,
    pub d_emb: usize,
    pub d_hidden: usize,
    pub d_model: usize,
    pub heads: usize,
    pub layers: usize,
    pub ffn_dim: usize,
    pub share_embeddings: bool,
    pub variant: Variant,
    pub phi: PhiMode,
    pub tau: TauMode,
    pub rgse_layers: LayerRange,
    pub gcn_layers: usize,
    pub edge_dropout: f64,
    pub optimizer: OptimizerName,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub clip_norm: f64,
    pub max_len: usize,
    pub validate_every: usize,
    pub seed: u64,
    pub data: DataSource,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            model: ModelKind::Rnmt,
            encoder: RnmtEncoder::BiGruRgse,
            d_emb: 16,
            d_hidden: 16,
            d_model: 16,
            heads: 2,
            layers: 6,
            ffn_dim: 32,
            share_embeddings: false,
            variant: Variant::BiTotal,
            phi: PhiMode::Sum,
            tau: TauMode::Normal,
            rgse_layers: LayerRange(Some((1, 3))),
            gcn_layers: 1,
            edge_dropout: 0.2,
            optimizer: OptimizerName::Adam,
            learning_rate: 1e-3,
            epochs: 10,
            batch_size: 16,
            clip_norm: 5.0,
            max_len: 50,
            validate_every: 1,
            seed: 1,
            data: DataSource::Synth {
                vocab: 32,
                min_len: 4,
                max_len: 16,
                train: 2000,
                test: 200,
                locality: 0.5,
                root_words: 8,
                seed: 7,
            },
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: fmt::Display,
{
    value.trim().parse().map_err(|e: T::Err| Error::config(key, format!("cannot parse `{value}`: {e}")))
}

impl ExperimentConfig {
    /// Apply `key = value` overrides on top of the defaults. Unknown keys
    /// are rejected.
    pub fn from_pairs<K: AsRef<str>, V: AsRef<str>>(pairs: impl IntoIterator<Item = (K, V)>) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        cfg.apply(pairs)?;
        Ok(cfg)
    }

    pub fn apply<K: AsRef<str>, V: AsRef<str>>(&mut self, pairs: impl IntoIterator<Item = (K, V)>) -> Result<()> {
        let pairs: BTreeMap<String, String> =
            pairs.into_iter().map(|(k, v)| (k.as_ref().to_string(), v.as_ref().to_string())).collect();
        // the data source decides which data.* / synth.* keys are legal
        if let Some(src) = pairs.get("data.source") {
            self.data = match src.trim() {
                "synth" => match self.data {
                    DataSource::Synth { .. } => self.data.clone(),
                    _ => ExperimentConfig::default().data,
                },
                "files" => match self.data {
                    DataSource::Files { .. } => self.data.clone(),
                    _ => DataSource::Files {
                        train_src: String::new(),
                        train_tgt: String::new(),
                        test_src: String::new(),
                        test_tgt: String::new(),
                        bpe_merges: 0,
                    },
                },
                other => return Err(Error::config("data.source", format!("expected `synth` or `files`, got `{other}`"))),
            };
        }
        for (k, v) in &pairs {
            self.set(k, v)?;
        }
        Ok(())
    }

    fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "data.source" => {}
            "model.kind" => self.model = parse(key, v)?,
            "model.encoder" => self.encoder = parse(key, v)?,
            "model.d_emb" => self.d_emb = parse(key, v)?,
            "model.d_hidden" => self.d_hidden = parse(key, v)?,
            "model.d_model" => self.d_model = parse(key, v)?,
            "model.heads" => self.heads = parse(key, v)?,
            "model.layers" => self.layers = parse(key, v)?,
            "model.ffn_dim" => self.ffn_dim = parse(key, v)?,
            "model.share_embeddings" => self.share_embeddings = parse(key, v)?,
            "rgse.variant" => self.variant = parse(key, v)?,
            "rgse.phi" => self.phi = parse(key, v)?,
            "rgse.tau" => self.tau = parse(key, v)?,
            "rgse.layers" => self.rgse_layers = parse(key, v)?,
            "gcn.layers" => self.gcn_layers = parse(key, v)?,
            "gcn.edge_dropout" => self.edge_dropout = parse(key, v)?,
            "train.optimizer" => self.optimizer = parse(key, v)?,
            "train.lr" => self.learning_rate = parse(key, v)?,
            "train.epochs" => self.epochs = parse(key, v)?,
            "train.batch_size" => self.batch_size = parse(key, v)?,
            "train.clip_norm" => self.clip_norm = parse(key, v)?,
            "train.max_len" => self.max_len = parse(key, v)?,
            "train.validate_every" => self.validate_every = parse(key, v)?,
            "train.seed" => self.seed = parse(key, v)?,
            _ => return self.set_data(key, v),
        }
        Ok(())
    }

    fn set_data(&mut self, key: &str, v: &str) -> Result<()> {
        match &mut self.data {
            DataSource::Synth {
                vocab,
                min_len,
                max_len,
                train,
                test,
                locality,
                root_words,
                seed,
            } => match key {
                "synth.vocab" => *vocab = parse(key, v)?,
                "synth.min_len" => *min_len = parse(key, v)?,
                "synth.max_len" => *max_len = parse(key, v)?,
                "synth.train" => *train = parse(key, v)?,
                "synth.test" => *test = parse(key, v)?,
                "synth.locality" => *locality = parse(key, v)?,
                "synth.root_words" => *root_words = parse(key, v)?,
                "synth.seed" => *seed = parse(key, v)?,
                _ => return Err(Error::config(key, "unknown key")),
            },
            DataSource::Files {
                train_src,
                train_tgt,
                test_src,
                test_tgt,
                bpe_merges,
            } => match key {
                "data.train_src" => *train_src = v.trim().to_string(),
                "data.train_tgt" => *train_tgt = v.trim().to_string(),
                "data.test_src" => *test_src = v.trim().to_string(),
                "data.test_tgt" => *test_tgt = v.trim().to_string(),
                "data.bpe_merges" => *bpe_merges = parse(key, v)?,
                _ => return Err(Error::config(key, "unknown key")),
            },
        }
        Ok(())
    }

    /// Every setting as sorted `(key, value)` strings; round-trips through
    /// [`ExperimentConfig::from_pairs`].
    pub fn to_pairs(&self) -> Vec<(String, String)> {
        let mut m: BTreeMap<&str, String> = BTreeMap::new();
        m.insert("model.kind", self.model.to_string());
        m.insert("model.encoder", self.encoder.to_string());
        m.insert("model.d_emb", self.d_emb.to_string());
        m.insert("model.d_hidden", self.d_hidden.to_string());
        m.insert("model.d_model", self.d_model.to_string());
        m.insert("model.heads", self.heads.to_string());
        m.insert("model.layers", self.layers.to_string());
        m.insert("model.ffn_dim", self.ffn_dim.to_string());
        m.insert("model.share_embeddings", self.share_embeddings.to_string());
        m.insert("rgse.variant", self.variant.to_string());
        m.insert("rgse.phi", self.phi.to_string());
        m.insert("rgse.tau", self.tau.to_string());
        m.insert("rgse.layers", self.rgse_layers.to_string());
        m.insert("gcn.layers", self.gcn_layers.to_string());
        m.insert("gcn.edge_dropout", format!("{:?}", self.edge_dropout));
        m.insert("train.optimizer", self.optimizer.to_string());
        m.insert("train.lr", format!("{:?}", self.learning_rate));
        m.insert("train.epochs", self.epochs.to_string());
        m.insert("train.batch_size", self.batch_size.to_string());
        m.insert("train.clip_norm", format!("{:?}", self.clip_norm));
        m.insert("train.max_len", self.max_len.to_string());
        m.insert("train.validate_every", self.validate_every.to_string());
        m.insert("train.seed", self.seed.to_string());
        match &self.data {
            DataSource::Synth {
                vocab,
                min_len,
                max_len,
                train,
                test,
                locality,
                root_words,
                seed,
            } => {
                m.insert("data.source", "synth".to_string());
                m.insert("synth.vocab", vocab.to_string());
                m.insert("synth.min_len", min_len.to_string());
                m.insert("synth.max_len", max_len.to_string());
                m.insert("synth.train", train.to_string());
                m.insert("synth.test", test.to_string());
                m.insert("synth.locality", format!("{locality:?}"));
                m.insert("synth.root_words", root_words.to_string());
                m.insert("synth.seed", seed.to_string());
            }
            DataSource::Files {
                train_src,
                train_tgt,
                test_src,
                test_tgt,
                bpe_merges,
            } => {
                m.insert("data.source", "files".to_string());
                m.insert("data.train_src", train_src.clone());
                m.insert("data.train_tgt", train_tgt.clone());
                m.insert("data.test_src", test_src.clone());
                m.insert("data.test_tgt", test_tgt.clone());
                m.insert("data.bpe_merges", bpe_merges.to_string());
            }
        }
        m.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
    }

    /// Keys whose values differ between two configurations.
    pub fn diff(&self, other: &ExperimentConfig) -> Vec<String> {
        let a: BTreeMap<String, String> = self.to_pairs().into_iter().collect();
        let b: BTreeMap<String, String> = other.to_pairs().into_iter().collect();
        let mut keys: Vec<&String> = a.keys().chain(b.keys()).collect();
        keys.sort();
        keys.dedup();
        keys.into_iter().filter(|k| a.get(*k) != b.get(*k)).cloned().collect()
    }

    /// All field-level problems, one entry per offending key.
    pub fn problems(&self) -> Vec<Error> {
        let mut out = Vec::new();
        let mut bad = |field: &str, msg: String| out.push(Error::config(field, msg));
        for (k, v) in [
            ("model.d_emb", self.d_emb),
            ("model.d_hidden", self.d_hidden),
            ("model.d_model", self.d_model),
            ("train.batch_size", self.batch_size),
            ("train.max_len", self.max_len),
        ] {
            if v == 0 {
                bad(k, "must be positive".to_string());
            }
        }
        if self.model == ModelKind::Hybrid {
            if self.heads == 0 || !self.d_model.is_multiple_of(self.heads) {
                bad("model.heads", format!("must divide model.d_model = {}", self.d_model));
            }
            if !self.d_model.is_multiple_of(2) {
                bad("model.d_model", "must be even".to_string());
            }
            if self.layers == 0 {
                bad("model.layers", "must be positive".to_string());
            }
            if let Some((_, last)) = self.rgse_layers.bounds() {
                if last > self.layers {
                    bad("rgse.layers", format!("{} exceeds model.layers = {}", self.rgse_layers, self.layers));
                }
            }
            if self.ffn_dim == 0 {
                bad("model.ffn_dim", "must be positive".to_string());
            }
        }
        if !(0.0..1.0).contains(&self.edge_dropout) {
            bad("gcn.edge_dropout", format!("must lie in [0, 1), got {}", self.edge_dropout));
        }
        if self.encoder == RnmtEncoder::BiGruGcn && self.gcn_layers == 0 {
            bad("gcn.layers", "must be positive".to_string());
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            bad("train.lr", format!("must be a non-negative number, got {}", self.learning_rate));
        }
        if self.clip_norm.is_nan() || self.clip_norm <= 0.0 {
            bad("train.clip_norm", format!("must be positive, got {}", self.clip_norm));
        }
        match &self.data {
            DataSource::Synth {
                vocab,
                min_len,
                max_len,
                train,
                locality,
                root_words,
                ..
            } => {
                if *vocab < 8 {
                    bad("synth.vocab", format!("must be at least 8, got {vocab}"));
                }
                if *min_len < 2 || max_len < min_len {
                    bad("synth.min_len", format!("need 2 <= min_len <= max_len, got {min_len}..{max_len}"));
                }
                if *train == 0 {
                    bad("synth.train", "must be positive".to_string());
                }
                if !(0.0..=1.0).contains(locality) {
                    bad("synth.locality", format!("must lie in [0, 1], got {locality}"));
                }
                if *root_words >= *vocab {
                    bad("synth.root_words", format!("must be below synth.vocab = {vocab}"));
                }
            }
            DataSource::Files {
                train_src,
                train_tgt,
                test_src,
                test_tgt,
                ..
            } => {
                for (k, v) in [
                    ("data.train_src", train_src),
                    ("data.train_tgt", train_tgt),
                    ("data.test_src", test_src),
                    ("data.test_tgt", test_tgt),
                ] {
                    if v.is_empty() {
                        bad(k, "path is required".to_string());
                    }
                }
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        match self.problems().into_iter().next() {
            Some(e) => Err(e),
            None => Ok(()),
        }
    }

    pub fn optimizer(&self) -> Result<Optimizer> {
        let kind = match self.optimizer {
            OptimizerName::Sgd => OptimizerKind::Sgd,
            OptimizerName::Adam => OptimizerKind::adam(),
        };
        Optimizer::new(kind, self.learning_rate)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn layer_range_parsing() {
        assert_eq!("[1-3]".parse::<LayerRange>().unwrap(), LayerRange::new(1, 3).unwrap());
        assert_eq!("4-6".parse::<LayerRange>().unwrap().bounds(), Some((4, 6)));
        assert_eq!("[2]".parse::<LayerRange>().unwrap().bounds(), Some((2, 2)));
        assert!("none".parse::<LayerRange>().unwrap().is_empty());
        assert!("[3-1]".parse::<LayerRange>().is_err());
        assert!("[0-1]".parse::<LayerRange>().is_err());
        assert_eq!(LayerRange::new(1, 6).unwrap().to_string(), "[1-6]");
        let r = LayerRange::new(2, 4).unwrap();
        assert!(!r.contains(1) && r.contains(2) && r.contains(4) && !r.contains(5));
    }

    #[test]
    fn pairs_round_trip() {
        let cfg = ExperimentConfig {
            model: ModelKind::Hybrid,
            phi: PhiMode::Gated,
            learning_rate: 0.0025,
            ..ExperimentConfig::default()
        };
        let again = ExperimentConfig::from_pairs(cfg.to_pairs()).unwrap();
        assert_eq!(again, cfg);
    }

    #[test]
    fn files_source_round_trip() {
        let cfg = ExperimentConfig::from_pairs([
            ("data.source", "files"),
            ("data.train_src", "a.conllu"),
            ("data.train_tgt", "a.txt"),
            ("data.test_src", "b.conllu"),
            ("data.test_tgt", "b.txt"),
        ])
        .unwrap();
        assert!(matches!(cfg.data, DataSource::Files { .. }));
        assert_eq!(ExperimentConfig::from_pairs(cfg.to_pairs()).unwrap(), cfg);
        assert!(ExperimentConfig::from_pairs([("data.source", "files"), ("synth.vocab", "9")]).is_err());
    }

    #[test]
    fn unknown_key_names_field() {
        let err = ExperimentConfig::from_pairs([("model.width", "3")]).unwrap_err();
        assert!(matches!(err, Error::Config { ref field, .. } if field == "model.width"));
        let err = ExperimentConfig::from_pairs([("rgse.phi", "max")]).unwrap_err();
        assert!(matches!(err, Error::Config { ref field, .. } if field == "rgse.phi"));
    }

    #[test]
    fn validation_reports_fields() {
        let cfg = ExperimentConfig::from_pairs([
            ("model.kind", "hybrid"),
            ("model.d_model", "10"),
            ("model.heads", "4"),
            ("rgse.layers", "[4-8]"),
        ])
        .unwrap();
        let fields: Vec<String> = cfg
            .problems()
            .into_iter()
            .map(|e| match e {
                Error::Config { field, .. } => field,
                other => panic!("{other}"),
            })
            .collect();
        assert!(fields.contains(&"model.heads".to_string()));
        assert!(fields.contains(&"rgse.layers".to_string()));
        assert!(ExperimentConfig::default().validate().is_ok());
    }

    #[test]
    fn diff_lists_changed_keys() {
        let a = ExperimentConfig::default();
        let mut b = a.clone();
        b.variant = Variant::BiPast;
        b.seed = 9;
        assert_eq!(a.diff(&b), vec!["rgse.variant".to_string(), "train.seed".to_string()]);
    }
}
