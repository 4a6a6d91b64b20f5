//! Mini-batch training with AdamW and linear warm-up.

use std::collections::BTreeMap;
use std::time::Instant;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::loss::{loss_terms, LossBatch, LossTerms};
use super::network::{condition_feature, denoiser_forward, ffm_matrix, init_params, ParamSet};
use super::schedule::NoiseSchedule;
use super::tape::{Tape, Var};
use super::{
    DiffusionError, LossWeights, ModelParams, ModelWeights, MotionSample, Normalizer, Variant, CHANNELS, COND_DIM,
    SEQ_LEN,
};
use crate::scalar::Real;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub warmup_epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 500,
            batch_size: 16,
            lr: 2e-4,
            weight_decay: 1.2e-4,
            warmup_epochs: 20,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean total loss over the batches of each epoch.
    pub epoch_losses: Vec<f64>,
    pub seconds: f64,
}

/// Network inputs and loss targets of one batch.
#[derive(Clone, Debug, PartialEq)]
pub struct PreparedBatch<T> {
    pub loss: LossBatch<T>,
    /// `B x 7` condition rows: start, end, `l_valid / 80`.
    pub cond: Array2<T>,
}

/// Condition row in normalized units.
pub(super) fn condition_row<T: Real>(start: &[T; 3], end: &[T; 3], l_valid: usize) -> [T; COND_DIM] {
    let l = T::of_usize(l_valid) / T::of_usize(SEQ_LEN);
    [start[0], start[1], start[2], end[0], end[1], end[2], l]
}

/// Draws a diffusion step and Gaussian noise for each normalized sample.
pub fn prepare_batch<T: Real>(
    samples: &[&MotionSample<T>],
    schedule: &NoiseSchedule<T>,
    rng: &mut ChaCha8Rng,
) -> PreparedBatch<T> {
    let b = samples.len();
    let mut x0 = Array2::zeros((b * SEQ_LEN, CHANNELS));
    let mut x_t = Array2::zeros((b * SEQ_LEN, CHANNELS));
    let mut cond = Array2::zeros((b, COND_DIM));
    let mut steps = Vec::with_capacity(b);
    let mut l_valid = Vec::with_capacity(b);
    for (k, s) in samples.iter().enumerate() {
        let t = rng.random_range(0..schedule.len());
        let (a, n) = (schedule.alpha_bar[t].sqrt(), (T::one() - schedule.alpha_bar[t]).sqrt());
        for i in 0..SEQ_LEN {
            for c in 0..CHANNELS {
                let e: f64 = StandardNormal.sample(rng);
                let v = s.data[[i, c]];
                x0[[k * SEQ_LEN + i, c]] = v;
                x_t[[k * SEQ_LEN + i, c]] = a * v + n * T::of(e);
            }
        }
        let p = s.positions();
        let row = condition_row(&p[0], &p[s.l_valid - 1], s.l_valid);
        for (c, v) in row.into_iter().enumerate() {
            cond[[k, c]] = v;
        }
        steps.push(t);
        l_valid.push(s.l_valid);
    }
    PreparedBatch {
        loss: LossBatch { x0, x_t, steps, l_valid },
        cond,
    }
}

/// Forward pass and loss of one batch on `tape`.
pub fn batch_loss<T: Real>(
    tape: &mut Tape<T>,
    bound: &BTreeMap<String, Var>,
    params: &ModelParams,
    schedule: &NoiseSchedule<T>,
    batch: &PreparedBatch<T>,
    weights: &LossWeights<T>,
) -> LossTerms {
    let cond = tape.constant(batch.cond.clone());
    let feature = condition_feature(tape, bound, params, cond, &batch.loss.steps);
    let x_t = tape.constant(batch.loss.x_t.clone());
    let ffm = tape.constant(ffm_matrix(&batch.loss.l_valid, params.hidden, params.sigma_frac));
    let out = denoiser_forward(tape, bound, params, x_t, feature, ffm);
    loss_terms(tape, out, &batch.loss, schedule, weights, params.learn_variance)
}

struct AdamW<T> {
    m: ParamSet<T>,
    v: ParamSet<T>,
    step: i32,
}

impl<T: Real> AdamW<T> {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(params: &ParamSet<T>) -> Self {
        let zeros: ParamSet<T> = params.iter().map(|(k, v)| (k.clone(), Array2::zeros(v.raw_dim()))).collect();
        Self { m: zeros.clone(), v: zeros, step: 0 }
    }

    fn update(&mut self, params: &mut ParamSet<T>, grads: &ParamSet<T>, lr: T, weight_decay: T) {
        self.step += 1;
        let (b1, b2, eps) = (T::of(Self::BETA1), T::of(Self::BETA2), T::of(Self::EPS));
        let c1 = T::one() - b1.powi(self.step);
        let c2 = T::one() - b2.powi(self.step);
        for (name, p) in params.iter_mut() {
            let Some(g) = grads.get(name) else { continue };
            let m = self.m.get_mut(name).expect("moment exists");
            let v = self.v.get_mut(name).expect("moment exists");
            ndarray::Zip::from(p).and(m).and(v).and(g).for_each(|p, m, v, &g| {
                *m = b1 * *m + (T::one() - b1) * g;
                *v = b2 * *v + (T::one() - b2) * g * g;
                let update = (*m / c1) / ((*v / c2).sqrt() + eps);
                *p -= lr * (update + weight_decay * *p);
            });
        }
    }
}

/// Trains a fresh network on `dataset` (physical units).
pub fn train<T: Real>(
    dataset: &[MotionSample<T>],
    variant: Variant,
    params: &ModelParams,
    loss_weights: &LossWeights<T>,
    cfg: &TrainConfig,
) -> Result<(ModelWeights, TrainReport), DiffusionError> {
    train_with_progress(dataset, variant, params, loss_weights, cfg, |_, _| {})
}

/// [`train`] calling `progress(epoch, mean_loss)` after every epoch.
pub fn train_with_progress<T: Real>(
    dataset: &[MotionSample<T>],
    variant: Variant,
    params: &ModelParams,
    loss_weights: &LossWeights<T>,
    cfg: &TrainConfig,
    mut progress: impl FnMut(usize, f64),
) -> Result<(ModelWeights, TrainReport), DiffusionError> {
    params.validate()?;
    loss_weights.validate()?;
    if dataset.is_empty() {
        return Err(DiffusionError::EmptyDataset);
    }
    if cfg.batch_size == 0 || !(cfg.lr > 0.0) || cfg.weight_decay < 0.0 {
        return Err(DiffusionError::BadParams("batch size and learning rate must be positive".into()));
    }
    let start = Instant::now();
    let norm = Normalizer::fit(dataset);
    let normalized: Vec<MotionSample<T>> = dataset
        .iter()
        .map(|s| {
            let mut s = s.clone();
            norm.normalize(&mut s.data);
            s
        })
        .collect();

    let schedule = NoiseSchedule::<T>::cosine(params.steps);
    let mut weights: ParamSet<T> = init_params(params, cfg.seed);
    let mut opt = AdamW::new(&weights);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x5EED));
    let batches_per_epoch = normalized.len().div_ceil(cfg.batch_size);
    let warmup = (cfg.warmup_epochs * batches_per_epoch).max(1);
    let mut order: Vec<usize> = (0..normalized.len()).collect();
    let mut report = TrainReport::default();
    let mut step = 0usize;

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let members: Vec<&MotionSample<T>> = chunk.iter().map(|&i| &normalized[i]).collect();
            let batch = prepare_batch(&members, &schedule, &mut rng);
            let mut tape = Tape::new();
            let bound = super::network::bind(&mut tape, &weights);
            let terms = batch_loss(&mut tape, &bound, params, &schedule, &batch, loss_weights);
            total += tape.scalar(terms.total).to_f64_lossless();
            let mut g = tape.backward(terms.total);
            let grads: ParamSet<T> = bound
                .iter()
                .filter_map(|(k, v)| g.take(*v).map(|a| (k.clone(), a)))
                .collect();
            step += 1;
            let lr = cfg.lr * (step as f64 / warmup as f64).min(1.0);
            opt.update(&mut weights, &grads, T::of(lr), T::of(cfg.weight_decay));
        }
        let mean = total / batches_per_epoch as f64;
        report.epoch_losses.push(mean);
        progress(epoch + 1, mean);
    }
    report.seconds = start.elapsed().as_secs_f64();

    let mut tensors: BTreeMap<String, Array2<f32>> = weights
        .into_iter()
        .map(|(k, v)| (k, v.mapv(|x| x.to_f64_lossless() as f32)))
        .collect();
    tensors.extend(norm.to_tensors());
    Ok((
        ModelWeights {
            variant,
            params: *params,
            seed: cfg.seed,
            tensors,
        },
        report,
    ))
}
