use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{build_vocab, DatasetSplit, Triple};
use crate::error::{Error, Result};
use crate::metrics::{accuracy, avg_edit_distance};
use crate::numeric::Adadelta;
use crate::parallel::{self, Execution};

use super::model::{Selection, Seq2SeqConfig, Seq2SeqModel};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean per-example loss over the epoch.
    pub train_loss: f64,
    pub dev_accuracy: f64,
    pub dev_edit: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
    pub best: Selection,
}

/// Greedy 1-best accuracy and mean edit distance of `model` on `data`.
pub fn dev_scores(model: &Seq2SeqModel, data: &[Triple], exec: Execution) -> Result<(f64, f64)> {
    let preds = parallel::map(exec, data, |t| model.greedy(&t.base, &t.tag).map(|(s, _)| s))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let gold: Vec<&str> = data.iter().map(|t| t.derived.as_str()).collect();
    Ok((accuracy(&preds, &gold)?, avg_edit_distance(&preds, &gold)?))
}

fn improves(candidate: &EpochRecord, best: Option<&Selection>) -> bool {
    match best {
        None => true,
        Some(b) => {
            candidate.dev_accuracy > b.dev_accuracy
                || (candidate.dev_accuracy == b.dev_accuracy && candidate.dev_edit < b.dev_edit)
        }
    }
}

/// Trains on `split.train` with Adadelta over shuffled minibatches and
/// returns the parameters of the epoch that scored best on `split.dev`.
///
/// `exec` only controls how per-example gradients inside a batch are
/// computed; they are always summed in batch order, so the result does not
/// depend on it. `on_epoch` sees every epoch record as it is produced.
pub fn train(
    split: &DatasetSplit,
    config: &Seq2SeqConfig,
    exec: Execution,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<(Seq2SeqModel, TrainLog)> {
    if split.train.is_empty() || split.dev.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut model = Seq2SeqModel::new(build_vocab(&split.train), config.clone())?;
    let data: Vec<(Vec<usize>, Vec<usize>)> = split
        .train
        .iter()
        .map(|t| {
            (
                model.encode_source(&t.base, &t.tag),
                model.vocab.encode_target(&t.derived),
            )
        })
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);
    let mut optimizer = Adadelta::new(config.adadelta(), model.net.params());
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut epochs = Vec::with_capacity(config.epochs);
    let mut best: Option<(Selection, Seq2SeqModel)> = None;

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(config.batch_size) {
            let net = &model.net;
            let results = parallel::map(exec, batch, |&i| net.loss_and_gradients(&data[i].0, &data[i].1));
            let params = model.net.params_mut();
            for r in results {
                let (loss, grads) = r?;
                total += loss;
                params.accumulate(&grads);
            }
            params.scale_grads(1.0 / batch.len() as f64);
            if let Some(clip) = config.clip {
                let norm = params.grad_norm();
                if norm > clip {
                    params.scale_grads(clip / norm);
                }
            }
            optimizer.step(params);
        }

        let (dev_accuracy, dev_edit) = dev_scores(&model, &split.dev, exec)?;
        let record = EpochRecord {
            epoch,
            train_loss: total / data.len() as f64,
            dev_accuracy,
            dev_edit,
        };
        on_epoch(&record);
        if improves(&record, best.as_ref().map(|(s, _)| s)) {
            let sel = Selection {
                epoch,
                dev_accuracy,
                dev_edit,
            };
            best = Some((sel, model.clone()));
        }
        epochs.push(record);
    }

    let (sel, mut chosen) = best.ok_or_else(|| Error::Config("epochs must be positive".into()))?;
    chosen.selection = Some(sel);
    Ok((chosen, TrainLog { epochs, best: sel }))
}
