//! Training loop, cross-validation driver and fold-best ensembling.

mod loss;
mod optim;

pub use loss::{
    dimension_weights, multi_label_loss, rdrop_loss, rdrop_loss_gradients, LossBreakdown,
    LossConfig,
};
pub use optim::{learning_rate_at, Adam, OptimizerConfig};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{mix_seed, sub_seed};
use crate::corpus::{compose_document, ArticleRecord, FoldAssignment, OVERALL_INDEX};
use crate::eval::{clip, pearson};
use crate::model::{
    init_model, Gradients, ModelConfig, ModelError, ModelParameters, Prediction, PREDICTION_DIMS,
};
use crate::tokenize::{encode_pair, Tokenizer, TruncationPolicy};

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("fold index {fold_index} out of range for {k} folds")]
    BadFoldIndex { fold_index: usize, k: usize },
    #[error("no fold assignment for record {pair_id}")]
    MissingFold { pair_id: String },
    #[error("{which} split is empty for fold {fold_index}")]
    EmptySplit {
        which: &'static str,
        fold_index: usize,
    },
    #[error("wrong number of forward passes: got {got}, loss config expects {expected}")]
    WrongForwardCount { got: usize, expected: usize },
    #[error("non-finite loss at global step {step}")]
    NonFiniteLoss { step: usize },
    #[error("ensemble has no members")]
    EmptyEnsemble,
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// One record tokenized, truncated and paired with its label.
#[derive(Debug, Clone)]
pub struct PreparedExample {
    pub pair_id: String,
    pub source_pair_id: String,
    pub ids: Vec<u32>,
    pub label: [f64; PREDICTION_DIMS],
    pub group: String,
}

/// Composes each record's title and body, encodes the pair once, and keeps
/// the label in component order.
pub fn prepare_examples(
    records: &[ArticleRecord],
    tokenizer: &Tokenizer,
    policy: TruncationPolicy,
) -> Vec<PreparedExample> {
    records
        .iter()
        .map(|record| {
            let doc1 = compose_document(&record.title1, &record.text1);
            let doc2 = compose_document(&record.title2, &record.text2);
            let encoded = encode_pair(tokenizer, &doc1, &doc2, policy);
            PreparedExample {
                pair_id: record.pair_id.clone(),
                source_pair_id: record.source_pair_id().to_string(),
                ids: encoded.ids,
                label: record.scores.as_array(),
                group: record.lang_pair_tag(),
            }
        })
        .collect()
}

/// Validation and training statistics for one epoch.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    /// `None` when the validation Pearson is undefined (degenerate split).
    pub val_pearson: Option<f64>,
}

/// Outcome of training one fold: the checkpoint of the best epoch by
/// validation Pearson (ties resolved to the earlier epoch).
#[derive(Debug)]
pub struct FoldResult {
    pub fold_index: usize,
    pub best_checkpoint: ModelParameters,
    pub best_epoch: usize,
    pub best_val_pearson: Option<f64>,
    pub training_curve: Vec<EpochStats>,
}

/// Index split for one fold: validation is the fold itself, training is
/// everything else. Augmented records follow their source's fold, so a
/// source never appears on both sides.
pub fn split_train_val(
    examples: &[PreparedExample],
    folds: &FoldAssignment,
    fold_index: usize,
) -> Result<(Vec<usize>, Vec<usize>), TrainError> {
    if fold_index >= folds.k {
        return Err(TrainError::BadFoldIndex {
            fold_index,
            k: folds.k,
        });
    }
    let mut train = Vec::new();
    let mut val = Vec::new();
    for (i, example) in examples.iter().enumerate() {
        let fold = folds
            .fold(&example.pair_id)
            .ok_or_else(|| TrainError::MissingFold {
                pair_id: example.pair_id.clone(),
            })?;
        if fold == fold_index {
            val.push(i);
        } else {
            train.push(i);
        }
    }
    if train.is_empty() {
        return Err(TrainError::EmptySplit {
            which: "training",
            fold_index,
        });
    }
    if val.is_empty() {
        return Err(TrainError::EmptySplit {
            which: "validation",
            fold_index,
        });
    }
    Ok((train, val))
}

/// Clipped-Overall validation Pearson of the current parameters.
pub fn validation_pearson(
    params: &ModelParameters,
    examples: &[PreparedExample],
    indices: &[usize],
) -> Result<Option<f64>, ModelError> {
    let mut preds = Vec::with_capacity(indices.len());
    let mut golds = Vec::with_capacity(indices.len());
    for &i in indices {
        let prediction = params.predict(&examples[i].ids)?;
        preds.push(clip(prediction[OVERALL_INDEX], 1.0, 4.0));
        golds.push(examples[i].label[OVERALL_INDEX]);
    }
    Ok(pearson(&preds, &golds).ok())
}

/// Trains one fold to completion and returns the fold-best checkpoint.
///
/// Each optimizer step draws a batch, runs `F` stochastic forwards per
/// sample with dropout seeds derived from (step, sample, forward index),
/// backpropagates the mean consistency loss, and applies one Adam update
/// under the warmup/decay schedule. Fully deterministic for a fixed seed.
pub fn train_fold(
    examples: &[PreparedExample],
    folds: &FoldAssignment,
    fold_index: usize,
    model_cfg: &ModelConfig,
    loss_cfg: &LossConfig,
    opt_cfg: &OptimizerConfig,
    seed: u64,
) -> Result<FoldResult, TrainError> {
    model_cfg
        .validate()
        .map_err(|e| TrainError::InvalidConfig(e.to_string()))?;
    loss_cfg.validate()?;
    opt_cfg.validate()?;
    let (train_idx, val_idx) = split_train_val(examples, folds, fold_index)?;

    let mut params = init_model(model_cfg, sub_seed(seed, "init"))?;
    let mut adam = Adam::new(&params, opt_cfg.clone());
    let mut grads = Gradients::zeros_for(&params);

    let steps_per_epoch = train_idx.len().div_ceil(opt_cfg.batch_size);
    let total_steps = steps_per_epoch * opt_cfg.epochs;
    let warmup_steps = opt_cfg.warmup_steps(total_steps);
    let shuffle_seed = sub_seed(seed, "shuffle");
    let dropout_seed = sub_seed(seed, "dropout");

    let mut curve = Vec::with_capacity(opt_cfg.epochs);
    let mut best: Option<(f64, usize, ModelParameters)> = None;
    let mut global_step = 0usize;

    for epoch in 1..=opt_cfg.epochs {
        let mut order = train_idx.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(shuffle_seed, epoch as u64));
        order.shuffle(&mut rng);

        let mut epoch_loss_sum = 0.0;
        for batch in order.chunks(opt_cfg.batch_size) {
            let lr = learning_rate_at(global_step, total_steps, warmup_steps, opt_cfg.learning_rate);
            grads.fill_zero();
            let inv_batch = 1.0 / batch.len() as f64;
            let mut batch_loss = 0.0;
            for &sample in batch {
                let example = &examples[sample];
                let mut preds: Vec<Prediction> = Vec::with_capacity(loss_cfg.forwards);
                let mut tapes = Vec::with_capacity(loss_cfg.forwards);
                for k in 0..loss_cfg.forwards {
                    let pass_seed = mix_seed(
                        mix_seed(dropout_seed, global_step as u64),
                        (sample as u64) << 2 | k as u64,
                    );
                    let (pred, tape) = params.forward(&example.ids, true, pass_seed)?;
                    preds.push(pred);
                    tapes.push(tape);
                }
                let breakdown = rdrop_loss(&preds, &example.label, loss_cfg)?;
                batch_loss += breakdown.total;
                let mut loss_grads = rdrop_loss_gradients(&preds, &example.label, loss_cfg)?;
                for (tape, loss_grad) in tapes.iter().zip(&mut loss_grads) {
                    for g in loss_grad.iter_mut() {
                        *g *= inv_batch;
                    }
                    params.backward_into(tape, loss_grad, &mut grads);
                }
            }
            batch_loss *= inv_batch;
            if !batch_loss.is_finite() {
                return Err(TrainError::NonFiniteLoss { step: global_step });
            }
            epoch_loss_sum += batch_loss * batch.len() as f64;
            adam.step(&mut params, &grads, lr);
            global_step += 1;
        }

        let train_loss = epoch_loss_sum / train_idx.len() as f64;
        let val = validation_pearson(&params, examples, &val_idx)?;
        curve.push(EpochStats {
            epoch,
            train_loss,
            val_pearson: val,
        });
        if let Some(v) = val {
            let improved = match &best {
                Some((best_v, _, _)) => v > *best_v,
                None => true,
            };
            if improved {
                best = Some((v, epoch, params.clone()));
            }
        }
    }

    let (best_val_pearson, best_epoch, best_checkpoint) = match best {
        Some((v, epoch, checkpoint)) => (Some(v), epoch, checkpoint),
        // No epoch produced a defined Pearson; fall back to the final state.
        None => (None, opt_cfg.epochs, params),
    };
    Ok(FoldResult {
        fold_index,
        best_checkpoint,
        best_epoch,
        best_val_pearson,
        training_curve: curve,
    })
}

/// Trains every fold. `jobs > 1` trains folds on that many threads; folds
/// are independent and individually seeded, so results do not depend on
/// the job count.
pub fn cross_validate(
    examples: &[PreparedExample],
    folds: &FoldAssignment,
    model_cfg: &ModelConfig,
    loss_cfg: &LossConfig,
    opt_cfg: &OptimizerConfig,
    seed: u64,
    jobs: usize,
) -> Result<Vec<FoldResult>, TrainError> {
    let k = folds.k;
    let jobs = jobs.max(1).min(k);
    let mut results: Vec<Option<Result<FoldResult, TrainError>>> = Vec::new();
    results.resize_with(k, || None);

    if jobs == 1 {
        for (fold_index, slot) in results.iter_mut().enumerate() {
            *slot = Some(train_fold(
                examples,
                folds,
                fold_index,
                model_cfg,
                loss_cfg,
                opt_cfg,
                mix_seed(seed, fold_index as u64),
            ));
        }
    } else {
        let slots = std::sync::Mutex::new(&mut results);
        std::thread::scope(|scope| {
            for worker in 0..jobs {
                let slots = &slots;
                scope.spawn(move || {
                    let mut fold_index = worker;
                    while fold_index < k {
                        let result = train_fold(
                            examples,
                            folds,
                            fold_index,
                            model_cfg,
                            loss_cfg,
                            opt_cfg,
                            mix_seed(seed, fold_index as u64),
                        );
                        slots.lock().unwrap()[fold_index] = Some(result);
                        fold_index += jobs;
                    }
                });
            }
        });
    }

    results
        .into_iter()
        .map(|slot| slot.expect("every fold trained"))
        .collect()
}

/// The fold-best checkpoints, averaged at prediction time.
pub struct EnsembleModel {
    pub members: Vec<ModelParameters>,
}

impl EnsembleModel {
    pub fn from_results(results: Vec<FoldResult>) -> Self {
        Self {
            members: results.into_iter().map(|r| r.best_checkpoint).collect(),
        }
    }

    /// Arithmetic mean of the members' eval-mode predictions. Clipping is
    /// a post-processing step applied by callers after averaging.
    pub fn predict(&self, ids: &[u32]) -> Result<Prediction, TrainError> {
        if self.members.is_empty() {
            return Err(TrainError::EmptyEnsemble);
        }
        let mut mean = [0.0; PREDICTION_DIMS];
        for member in &self.members {
            let pred = member.predict(ids)?;
            for (acc, value) in mean.iter_mut().zip(pred.iter()) {
                *acc += value;
            }
        }
        let inv = 1.0 / self.members.len() as f64;
        for value in mean.iter_mut() {
            *value *= inv;
        }
        Ok(mean)
    }
}
