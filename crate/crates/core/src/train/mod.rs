//! Seeded mini-batch training with Adam, evaluation, and checkpoints.

mod checkpoint;
mod config;

pub use checkpoint::{Checkpoint, MAGIC, VERSION};
pub use config::TrainConfig;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::TrackSample;
use crate::error::{Error, Result};
use crate::metrics::{self, MetricsReport};
use crate::model::{EgoKind, ModelConfig, ModelInput, Observation, TrajMamba, OFFSET_DIM};
use crate::numerics::{adam_step, clip_global_norm, grad_check, AdamState, Bound, GradCheckReport, Graph, Tensor};
use crate::representation::{offsets_from_targets, reference_for_window, BoundingBox};

pub const LOG_HEADER: &str = "step,train_loss,val_ade,val_fde";

/// Windows per forward pass during evaluation.
const EVAL_BATCH: usize = 256;

/// Offsets the shuffling stream from the initialization stream.
const SHUFFLE_STREAM: u64 = 0x5eed_5a3f_1e00_0001;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogRow {
    /// Optimizer steps applied before this row was evaluated.
    pub step: usize,
    /// Mean mini-batch loss since the previous row.
    pub train_loss: f64,
    pub val_ade: f64,
    pub val_fde: f64,
}

impl LogRow {
    pub fn csv(&self) -> String {
        format!("{},{:?},{:?},{:?}", self.step, self.train_loss, self.val_ade, self.val_fde)
    }
}

pub fn log_to_csv(rows: &[LogRow]) -> String {
    let mut out = format!("{LOG_HEADER}\n");
    for r in rows {
        out.push_str(&r.csv());
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters at the evaluation with the lowest validation ADE.
    pub best: Checkpoint,
    pub log: Vec<LogRow>,
    /// Optimizer steps actually taken.
    pub steps_run: usize,
    pub stopped_early: bool,
}

fn observation(s: &TrackSample) -> Observation<'_> {
    Observation {
        boxes: &s.obs_boxes,
        ego: &s.obs_ego,
    }
}

/// Network inputs and offset targets `[B, n, 4]` for a batch of windows.
pub fn batch_tensors(cfg: &ModelConfig, samples: &[&TrackSample]) -> Result<(ModelInput, Tensor)> {
    let input = ModelInput::build(cfg, samples.iter().map(|s| observation(s)))?;
    let mut target = Vec::with_capacity(samples.len() * cfg.n_pred * OFFSET_DIM);
    for (s, r) in samples.iter().zip(&input.references) {
        target.extend(offsets_from_targets(r, &s.future_boxes)?.flat());
    }
    let t = Tensor::new(&[samples.len(), cfg.n_pred, OFFSET_DIM], target)?;
    Ok((input, t))
}

/// Smooth-L1 loss of the model's offsets on a batch, without gradients.
pub fn batch_loss(model: &TrajMamba, samples: &[&TrackSample], beta: f64) -> Result<f64> {
    let (input, target) = batch_tensors(model.config(), samples)?;
    let g = Graph::new();
    let w = model.store().bind(&g, false);
    let pred = model.forward_offsets(&g, &input, &w, false)?;
    Ok(pred.smooth_l1(g.constant(target), beta)?.item().expect("scalar loss"))
}

/// Mean and standard deviation of every observed speed value. A constant
/// signal yields a standard deviation of 1.
pub fn ego_statistics(samples: &[TrackSample]) -> Result<(f64, f64)> {
    let vals: Vec<f64> = samples.iter().flat_map(|s| s.obs_ego.iter().copied()).collect();
    if vals.is_empty() {
        return Err(Error::EmptyDataset("ego statistics"));
    }
    let n = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / n;
    let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    Ok((mean, if std > 0.0 { std } else { 1.0 }))
}

/// Model predictions for every window, in sample order.
pub fn predict_samples(model: &TrajMamba, samples: &[TrackSample], ablate_ego_zero: bool) -> Result<Vec<Vec<BoundingBox>>> {
    let mut out = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(EVAL_BATCH) {
        let input = ModelInput::build(model.config(), chunk.iter().map(observation))?;
        out.extend(model.predict_batch(&input, ablate_ego_zero)?);
    }
    Ok(out)
}

fn ground_truth(samples: &[TrackSample]) -> Vec<Vec<BoundingBox>> {
    samples.iter().map(|s| s.future_boxes.clone()).collect()
}

/// Metrics of the model on `samples`; `ablate_ego_zero` zeroes the ego
/// encoder output.
pub fn evaluate(samples: &[TrackSample], model: &TrajMamba, ablate_ego_zero: bool) -> Result<MetricsReport> {
    if samples.is_empty() {
        return Err(Error::EmptyDataset("evaluation samples"));
    }
    let pred = predict_samples(model, samples, ablate_ego_zero)?;
    metrics::report(&pred, &ground_truth(samples))
}

/// Metrics of the CV-CS extrapolation alone.
pub fn evaluate_cvcs(samples: &[TrackSample], n_pred: usize) -> Result<MetricsReport> {
    if samples.is_empty() {
        return Err(Error::EmptyDataset("evaluation samples"));
    }
    let pred = samples
        .iter()
        .map(|s| reference_for_window(&s.obs_boxes, n_pred).map(|r| r.boxes))
        .collect::<Result<Vec<_>>>()?;
    metrics::report(&pred, &ground_truth(samples))
}

/// Builds the model for `cfg`, fitting speed standardization on the
/// training windows when `ego_zscore` is set.
pub fn init_model(train: &[TrackSample], cfg: &TrainConfig) -> Result<TrajMamba> {
    let mut model = TrajMamba::new(cfg.model.clone())?;
    if cfg.model.ego_zscore && cfg.model.ego_kind == EgoKind::Speed {
        let (mean, std) = ego_statistics(train)?;
        model.set_ego_statistics(mean, std)?;
    }
    Ok(model)
}

/// Trains from scratch. Validation ADE decides the returned parameters and
/// early stopping; with no validation windows the training windows are
/// used instead.
pub fn train_loop(train: &[TrackSample], val: &[TrackSample], cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_loop_with(train, val, cfg, |_| {})
}

/// [`train_loop`] with a callback invoked on each log row as it is produced.
pub fn train_loop_with(
    train: &[TrackSample],
    val: &[TrackSample],
    cfg: &TrainConfig,
    mut on_log: impl FnMut(&LogRow),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::EmptyDataset("training samples"));
    }
    let selection = if val.is_empty() { train } else { val };
    let mut model = init_model(train, cfg)?;
    let mut adam = AdamState::for_params(model.store().tensors(), cfg.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ SHUFFLE_STREAM);
    let mut order: Vec<usize> = (0..train.len()).collect();
    order.shuffle(&mut rng);
    let batch = cfg.batch_size.min(train.len());
    let mut cursor = 0;

    let mut log = Vec::new();
    let mut pending = Vec::new();
    let mut best: Option<Checkpoint> = None;
    let mut since_best = 0;
    let mut stopped_early = false;
    let mut steps_run = 0;

    for step in 0..=cfg.max_steps {
        if cursor + batch > order.len() {
            order.shuffle(&mut rng);
            cursor = 0;
        }
        let picked: Vec<&TrackSample> = order[cursor..cursor + batch].iter().map(|&i| &train[i]).collect();
        cursor += batch;
        let update = step < cfg.max_steps;

        let (input, target) = batch_tensors(model.config(), &picked)?;
        let g = Graph::new();
        let w = model.store().bind(&g, update);
        let pred = model.forward_offsets(&g, &input, &w, false)?;
        let loss = pred.smooth_l1(g.constant(target), cfg.beta)?;
        let loss_value = loss.item().expect("scalar loss");
        if !loss_value.is_finite() {
            return Err(Error::NonFiniteLoss { step, loss: loss_value });
        }
        pending.push(loss_value);

        if step % cfg.eval_every == 0 || !update {
            let r = evaluate(selection, &model, false)?;
            let row = LogRow {
                step,
                train_loss: pending.iter().sum::<f64>() / pending.len() as f64,
                val_ade: r.ade,
                val_fde: r.fde,
            };
            pending.clear();
            on_log(&row);
            log.push(row);
            if best.as_ref().is_none_or(|b| r.ade < b.best_val_ade) {
                best = Some(Checkpoint::from_model(cfg, &model, step, r.ade));
                since_best = 0;
            } else {
                since_best += 1;
                if since_best >= cfg.patience {
                    stopped_early = update;
                    break;
                }
            }
        }
        if !update {
            break;
        }

        g.backward(loss)?;
        let mut grads = w.grads(&g);
        drop(w);
        clip_global_norm(&mut grads, cfg.grad_clip);
        adam_step(model.store_mut().tensors_mut(), &grads, &mut adam)?;
        steps_run += 1;
    }

    Ok(TrainOutcome {
        best: best.expect("step 0 is always evaluated"),
        log,
        steps_run,
        stopped_early,
    })
}

/// Compares reverse-mode gradients of the training loss with central
/// differences for every parameter. Weights, two observation windows and
/// the offset targets are all drawn from `seed`; jittered random boxes keep
/// every motion-state channel away from zero.
pub fn grad_check_model(cfg: &ModelConfig, eps: f64, seed: u64) -> Result<GradCheckReport> {
    const BATCH: usize = 2;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = TrajMamba::new(cfg.clone())?;
    model.randomize_for_grad_check(&mut rng);
    let mut boxes = Vec::with_capacity(BATCH);
    let mut egos = Vec::with_capacity(BATCH);
    for _ in 0..BATCH {
        let (mut x, mut y) = (rng.gen_range(200.0..1500.0), rng.gen_range(300.0..700.0));
        let (vx, vy) = (rng.gen_range(-6.0..6.0), rng.gen_range(-2.0..2.0));
        let mut w = rng.gen_range(20.0..60.0);
        let mut track = Vec::with_capacity(cfg.m_obs);
        for _ in 0..cfg.m_obs {
            x += vx + rng.gen_range(-2.0..2.0);
            y += vy + rng.gen_range(-1.0..1.0);
            w *= rng.gen_range(0.97..1.03);
            track.push(BoundingBox::new(x, y, w, 2.5 * w)?);
        }
        boxes.push(track);
        egos.push(
            (0..cfg.m_obs)
                .map(|_| match cfg.ego_kind {
                    EgoKind::Speed => rng.gen_range(0.0..3.0),
                    EgoKind::Behavior => rng.gen_range(0..5) as f64,
                })
                .collect::<Vec<f64>>(),
        );
    }
    let input = ModelInput::build(cfg, boxes.iter().zip(&egos).map(|(b, e)| Observation { boxes: b, ego: e }))?;
    let target = Tensor::from_fn(&[BATCH, cfg.n_pred, OFFSET_DIM], |_| rng.gen_range(-1.0..1.0));
    let mut params = model.store().tensors().to_vec();
    grad_check(&mut params, eps, |g, vars| {
        let w = Bound::from_vars(vars.to_vec());
        model.forward_offsets(g, &input, &w, false)?.smooth_l1(g.constant(target.clone()), 1.0)
    })
}

#[cfg(test)]
mod tests;
