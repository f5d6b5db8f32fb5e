//! Teacher-forced training with length-grouped mini-batches.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::models::{Example, Model};
use crate::params::ParamStore;
use crate::tape::Tape;

/// Loss after one epoch; epoch 0 is measured before any update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub valid_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    pub steps: u64,
    /// Training pairs dropped for exceeding the maximum length.
    pub skipped: usize,
}

impl TrainReport {
    pub fn final_loss(&self) -> f64 {
        self.epochs.last().map_or(f64::NAN, |r| r.train_loss)
    }
}

/// Indices grouped by source length (shortest first), in chunks of at most
/// `batch_size`. Source lengths within a batch are equal.
pub fn length_batches(examples: &[Example], batch_size: usize) -> Vec<Vec<usize>> {
    let mut by_len: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, e) in examples.iter().enumerate() {
        by_len.entry(e.src.len()).or_default().push(i);
    }
    let mut out = Vec::new();
    for idx in by_len.values() {
        for chunk in idx.chunks(batch_size.max(1)) {
            out.push(chunk.to_vec());
        }
    }
    out
}

fn tokens(batch: &[&Example]) -> usize {
    batch.iter().map(|e| e.tgt.len() + 1).sum()
}

/// Token-weighted mean loss over `examples` without dropout or updates.
pub fn mean_loss(model: &Model, store: &ParamStore, examples: &[Example], batch_size: usize) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0;
    for idx in length_batches(examples, batch_size) {
        let batch: Vec<&Example> = idx.iter().map(|&i| &examples[i]).collect();
        let mut tape = Tape::new();
        let loss = model.loss(&mut tape, store, &batch, None)?;
        let n = tokens(&batch);
        total += tape.scalar(loss) * n as f64;
        count += n;
    }
    if count == 0 {
        return Err(Error::arg("no examples to score"));
    }
    Ok(total / count as f64)
}

fn numeric_abort(store: &ParamStore, epoch: usize, batch: usize, what: String) -> Error {
    let (param, norm) = store.largest_param().unwrap_or_default();
    Error::Numeric {
        param,
        detail: format!("{what} at epoch {epoch}, batch {batch}; offending parameter norm {norm}"),
    }
}

/// Train `model` in place. `on_epoch` sees every record as it is produced.
pub fn train(
    model: &Model,
    store: &mut ParamStore,
    train_set: &[Example],
    valid_set: Option<&[Example]>,
    config: &ExperimentConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainReport> {
    let kept: Vec<Example> = train_set
        .iter()
        .filter(|e| e.src.len() <= config.max_len && e.tgt.len() <= config.max_len)
        .cloned()
        .collect();
    let skipped = train_set.len() - kept.len();
    if skipped > 0 {
        log::info!("skipping {skipped} training pairs longer than {} tokens", config.max_len);
    }
    if kept.is_empty() {
        return Err(Error::arg("training set is empty"));
    }
    let mut optimizer = config.optimizer()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let batches = length_batches(&kept, config.batch_size);
    let validate = |epoch: usize, store: &ParamStore| -> Result<Option<f64>> {
        match valid_set {
            Some(v) if !v.is_empty() && config.validate_every > 0 && epoch.is_multiple_of(config.validate_every) => {
                Ok(Some(mean_loss(model, store, v, config.batch_size)?))
            }
            _ => Ok(None),
        }
    };

    let mut records = Vec::with_capacity(config.epochs + 1);
    let initial = mean_loss(model, store, &kept, config.batch_size)?;
    if !initial.is_finite() {
        return Err(numeric_abort(store, 0, 0, format!("initial loss {initial}")));
    }
    let first = EpochRecord {
        epoch: 0,
        train_loss: initial,
        valid_loss: validate(0, store)?,
    };
    on_epoch(&first);
    records.push(first);

    store.zero_grad();
    let mut order: Vec<usize> = (0..batches.len()).collect();
    let mut batch_losses = alloc::vec![0.0; batches.len()];
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        for &b in &order {
            let batch: Vec<&Example> = batches[b].iter().map(|&i| &kept[i]).collect();
            let mut tape = Tape::new();
            let loss = model.loss(&mut tape, store, &batch, Some(&mut rng))?;
            let value = tape.scalar(loss);
            if !value.is_finite() {
                return Err(numeric_abort(store, epoch, b, format!("loss {value}")));
            }
            tape.backward_into(loss, store)?;
            let norm = store.clip_grad_norm(config.clip_norm);
            if !norm.is_finite() {
                return Err(numeric_abort(store, epoch, b, format!("gradient norm {norm}")));
            }
            optimizer.step(store)?;
            batch_losses[b] = value * tokens(&batch) as f64;
        }
        // sum in batch order so the figure does not depend on the shuffle
        let total_tokens: usize = batches.iter().map(|ix| ix.iter().map(|&i| kept[i].tgt.len() + 1).sum::<usize>()).sum();
        let record = EpochRecord {
            epoch,
            train_loss: batch_losses.iter().sum::<f64>() / total_tokens as f64,
            valid_loss: validate(epoch, store)?,
        };
        on_epoch(&record);
        records.push(record);
    }
    store.clear_grad();
    Ok(TrainReport {
        epochs: records,
        steps: optimizer.steps(),
        skipped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::RnmtEncoder;
    use crate::graph::DepGraph;
    use alloc::string::ToString;
    use alloc::vec;

    fn example(len: usize) -> Example {
        let toks = (0..len).map(|i| i.to_string()).collect();
        let heads: Vec<Option<usize>> = (0..len).map(|i| if i == 0 { None } else { Some(0) }).collect();
        Example {
            graph: DepGraph::from_heads("s", toks, &heads, None).unwrap(),
            src: vec![4; len],
            tgt: vec![5; len],
        }
    }

    #[test]
    fn batches_share_length() {
        let ex = vec![example(3), example(2), example(3), example(3), example(2)];
        let b = length_batches(&ex, 2);
        assert_eq!(b, vec![vec![1, 4], vec![0, 2], vec![3]]);
    }

    #[test]
    fn zero_learning_rate_keeps_loss_constant() {
        let cfg = ExperimentConfig {
            encoder: RnmtEncoder::BiGru,
            d_emb: 4,
            d_hidden: 3,
            learning_rate: 0.0,
            epochs: 3,
            ..ExperimentConfig::default()
        };
        let ex = vec![example(3), example(2), example(3)];
        let mut store = ParamStore::new(1);
        let model = Model::build(&cfg, &mut store, 8, 8, &[]).unwrap();
        let report = train(&model, &mut store, &ex, None, &cfg, |_| {}).unwrap();
        assert_eq!(report.epochs.len(), 4);
        for r in &report.epochs {
            assert_eq!(r.train_loss, report.epochs[0].train_loss);
        }
    }

    #[test]
    fn nan_parameter_aborts_with_diagnostics() {
        let cfg = ExperimentConfig {
            encoder: RnmtEncoder::BiGru,
            d_emb: 4,
            d_hidden: 3,
            epochs: 1,
            ..ExperimentConfig::default()
        };
        let mut store = ParamStore::new(1);
        let model = Model::build(&cfg, &mut store, 8, 8, &[]).unwrap();
        let n = store.get("dec.out.b").unwrap().len();
        store.set("dec.out.b", &vec![f64::NAN; n]).unwrap();
        let err = train(&model, &mut store, &[example(2)], None, &cfg, |_| {}).unwrap_err();
        match err {
            Error::Numeric { detail, .. } => assert!(detail.contains("epoch 0"), "{detail}"),
            other => panic!("unexpected {other}"),
        }
    }
}
