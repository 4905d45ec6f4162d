use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::nets::Dropout;
use super::{Counts, Example, Model, ModelError};
use crate::corpus::SentenceRecord;
use crate::neuralcore::{sgd_step, Graph, ModelConfig, ParamId, TensorError};
use crate::Task;

const SHUFFLE_SALT: u64 = 0x5348_5546_464c_4521;
const DROPOUT_SALT: u64 = 0x4452_4f50_4f55_5421;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainOptions {
    /// Worker threads for the per-batch gradient computation. Results are
    /// reproducible for a fixed thread count.
    pub threads: usize,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions { threads: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub task: Task,
    pub examples: usize,
    /// Records that could not be turned into training targets.
    pub skipped: usize,
    pub steps: usize,
    /// Loss of the initial parameters, without dropout.
    pub initial_loss: f64,
    /// Mean training loss of each epoch (with dropout, as seen by SGD).
    pub epoch_losses: Vec<f64>,
}

#[derive(Debug)]
pub struct Trained {
    pub model: Model,
    pub log: TrainLog,
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    /// Training hit a non-finite loss or gradient. `model` holds the
    /// parameters from before the failing step.
    #[error("non-finite value in epoch {epoch}, step {step}: {detail}")]
    NonFinite {
        epoch: usize,
        step: usize,
        detail: String,
        model: Box<Model>,
        log: TrainLog,
    },
}

/// Builds vocabularies and a fresh model from `records`, then trains it.
pub fn train(
    task: Task,
    records: &[SentenceRecord],
    config: ModelConfig,
    options: &TrainOptions,
) -> Result<Trained, TrainError> {
    let model = Model::new(task, config, records)?;
    train_model(model, records, options)
}

fn prepare_all(model: &Model, records: &[SentenceRecord]) -> (Vec<Example>, usize) {
    let mut examples = Vec::with_capacity(records.len());
    let mut skipped = 0;
    for (i, r) in records.iter().enumerate() {
        match model.prepare(r) {
            Some(ex) => examples.push(ex),
            None => {
                log::warn!("record {i}: no {} training targets, skipped", model.task);
                skipped += 1;
            }
        }
    }
    (examples, skipped)
}

fn totals(examples: &[&Example]) -> Counts {
    let mut c = Counts::default();
    examples.iter().for_each(|e| c.add(e.counts()));
    c
}

/// Thread-local gradient sums, one buffer per parameter.
struct GradBuffer {
    grads: Vec<Option<Vec<f32>>>,
    loss: f64,
}

impl GradBuffer {
    fn new(n: usize) -> Self {
        GradBuffer {
            grads: vec![None; n],
            loss: 0.0,
        }
    }
}

impl Model {
    fn batch_gradients(
        &self,
        batch: &[&Example],
        totals: Counts,
        rng_base: &ChaCha8Rng,
        stream0: u64,
    ) -> Result<GradBuffer, ModelError> {
        let mut buf = GradBuffer::new(self.params.len());
        for (k, ex) in batch.iter().enumerate() {
            let mut rng = rng_base.clone();
            rng.set_stream(stream0 + k as u64);
            let mut drop = Dropout {
                rng: Some(&mut rng),
                p: self.config.dropout,
            };
            let mut g = Graph::new(&self.params);
            let loss = self.example_loss(&mut g, ex, totals, &mut drop)?;
            buf.loss += g.scalar(loss) as f64;
            let grads = g.backward(loss)?;
            for (id, gv) in grads.params() {
                match &mut buf.grads[id.index()] {
                    Some(acc) => acc.iter_mut().zip(gv).for_each(|(a, &v)| *a += v),
                    slot => *slot = Some(gv.to_vec()),
                }
            }
        }
        Ok(buf)
    }

    /// Sum over examples of the per-head normalised losses, without dropout.
    pub(super) fn loss_over(&self, examples: &[&Example]) -> Result<f64, ModelError> {
        let t = totals(examples);
        let mut sum = 0.0;
        for ex in examples {
            let mut g = Graph::new(&self.params);
            let loss = self.example_loss(&mut g, ex, t, &mut Dropout::eval())?;
            sum += g.scalar(loss) as f64;
        }
        Ok(sum)
    }

    /// Copies every parameter of `other` whose name and shape match, provided
    /// both models share a character vocabulary. Returns the number copied.
    pub fn init_from(&mut self, other: &Model) -> Result<usize, ModelError> {
        if self.chars != other.chars {
            return Err(ModelError::Checkpoint(
                "cannot initialise from a model with a different character vocabulary".into(),
            ));
        }
        if self.translit != other.translit {
            return Err(ModelError::Checkpoint(
                "cannot initialise from a model with a different transliteration".into(),
            ));
        }
        let mut copied = 0;
        for (_, name, src) in other.params.iter() {
            if let Some(id) = self.params.id(name) {
                let dst = self.params.get_mut(id);
                if dst.shape() == src.shape() {
                    dst.data_mut().copy_from_slice(src.data());
                    copied += 1;
                }
            }
        }
        Ok(copied)
    }
}

/// Trains `model` for `config.epochs` passes over `records` with SGD and the
/// one-cycle schedule, one step per batch.
pub fn train_model(mut model: Model, records: &[SentenceRecord], options: &TrainOptions) -> Result<Trained, TrainError> {
    let (examples, skipped) = prepare_all(&model, records);
    if examples.is_empty() {
        return Err(ModelError::NoTrainingData.into());
    }
    let cfg = model.config.clone();
    let n = examples.len();
    let batch_size = cfg.batch_size.max(1);
    let per_epoch = n.div_ceil(batch_size);
    let total_steps = per_epoch * cfg.epochs;
    let schedule = cfg.schedule(total_steps.max(1));
    let all: Vec<&Example> = examples.iter().collect();
    let initial_loss = model.loss_over(&all)?;
    let mut log = TrainLog {
        task: model.task,
        examples: n,
        skipped,
        steps: 0,
        initial_loss,
        epoch_losses: Vec::with_capacity(cfg.epochs),
    };
    log::info!(
        "{}: {n} examples, {per_epoch} batches per epoch, initial loss {initial_loss:.4}",
        model.task
    );
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ SHUFFLE_SALT);
    let drop_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ DROPOUT_SALT);
    let threads = options.threads.max(1);
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut shuffle_rng);
        let mut epoch_loss = 0.0;
        for (b, chunk) in order.chunks(batch_size).enumerate() {
            let batch: Vec<&Example> = chunk.iter().map(|&i| &examples[i]).collect();
            let t = totals(&batch);
            let stream0 = (epoch * n + b * batch_size) as u64;
            let parts = compute_parts(&model, &batch, t, &drop_rng, stream0, threads)?;
            let mut batch_loss = 0.0;
            model.params.zero_grad();
            for part in parts {
                batch_loss += part.loss;
                for (i, g) in part.grads.into_iter().enumerate() {
                    let Some(g) = g else { continue };
                    let dst = model.params.get_mut(ParamId(i)).grad_mut();
                    dst.iter_mut().zip(g).for_each(|(d, v)| *d += v);
                }
            }
            let fail = |detail: String, model: Model, log: TrainLog| TrainError::NonFinite {
                epoch,
                step,
                detail,
                model: Box::new(model),
                log,
            };
            if !batch_loss.is_finite() {
                model.params.zero_grad();
                return Err(fail(format!("loss {batch_loss}"), model, log));
            }
            let lr = schedule.lr(step) as f32;
            if let Err(e) = sgd_step(&mut model.params, lr) {
                model.params.zero_grad();
                return Err(fail(e.to_string(), model, log));
            }
            epoch_loss += batch_loss;
            step += 1;
            log.steps = step;
        }
        let mean = epoch_loss / per_epoch as f64;
        log::info!("{} epoch {}: loss {mean:.4}", model.task, epoch + 1);
        log.epoch_losses.push(mean);
    }
    model.params.zero_grad();
    Ok(Trained { model, log })
}

/// Splits the batch into contiguous slices, one per thread, and returns their
/// gradient sums in slice order so the reduction order is fixed.
fn compute_parts(
    model: &Model,
    batch: &[&Example],
    totals: Counts,
    rng: &ChaCha8Rng,
    stream0: u64,
    threads: usize,
) -> Result<Vec<GradBuffer>, ModelError> {
    if threads == 1 || batch.len() < 2 {
        return Ok(vec![model.batch_gradients(batch, totals, rng, stream0)?]);
    }
    let per = batch.len().div_ceil(threads);
    std::thread::scope(|s| {
        let handles: Vec<_> = batch
            .chunks(per)
            .enumerate()
            .map(|(k, part)| {
                let start = stream0 + (k * per) as u64;
                s.spawn(move || model.batch_gradients(part, totals, rng, start))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("training worker panicked"))
            .collect()
    })
}

impl From<TensorError> for TrainError {
    fn from(e: TensorError) -> Self {
        TrainError::Model(e.into())
    }
}
