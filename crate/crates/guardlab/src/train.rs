//! Denoiser + text-encoder joint training: noise-prediction MSE, Adam, and
//! a finite-difference gradient check.
//!
//! Noise draws are a pure function of the batch seed so finite differences
//! and analytic gradients see identical randomness. Gradient computation is
//! data-parallel over fixed chunks with a fixed reduction order, keeping
//! results deterministic for any worker count.

use ndarray::{ArrayD, Axis, IxDyn};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    batch_time_embedding, forward_denoiser, noise_mse, Model, IMG_CHANNELS, IMG_SIZE,
};
use crate::store::ArrayStore;
use crate::tape::Tape;
use crate::text::{tokenize, PromptTokens};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Probability of replacing the prompt with the empty prompt, giving
    /// the unconditional branch something to learn.
    pub cond_dropout: f64,
    pub seed: u64,
    /// 0 means use all available cores.
    pub workers: usize,
    /// Abort with a training error if the final epoch loss exceeds this.
    pub target_loss: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 60,
            batch_size: 32,
            lr: 2e-3,
            cond_dropout: 0.1,
            seed: 0,
            workers: 0,
            target_loss: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainReport {
    pub epoch_losses: Vec<f64>,
    pub final_loss: f64,
}

/// One fully materialized training example: everything random already drawn.
#[derive(Debug, Clone)]
pub struct TrainItem {
    pub tokens: PromptTokens,
    pub t: usize,
    pub eps: ArrayD<f64>,
    pub x_t: ArrayD<f64>,
}

/// Draw (t, ε, conditioning dropout) for a batch. Pure in `seed`.
pub fn sample_batch_noise(
    batch: &[(PromptTokens, ArrayD<f64>)],
    model: &Model,
    seed: u64,
    cond_dropout: f64,
) -> Result<Vec<TrainItem>> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty training batch".into()));
    }
    let empty = tokenize("", &model.vocab)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut items = Vec::with_capacity(batch.len());
    for (tokens, x0) in batch {
        let (t, eps, x_t) = crate::model::sample_noised(x0, &model.schedule, &mut rng);
        let drop: f64 = rng.gen();
        let tokens = if drop < cond_dropout { empty.clone() } else { tokens.clone() };
        items.push(TrainItem { tokens, t, eps, x_t });
    }
    Ok(items)
}

fn stack_items(items: &[TrainItem]) -> (ArrayD<f64>, ArrayD<f64>, ArrayD<f64>, Vec<&PromptTokens>) {
    let b = items.len();
    let mut x = ArrayD::zeros(IxDyn(&[b, IMG_CHANNELS, IMG_SIZE, IMG_SIZE]));
    let mut eps = ArrayD::zeros(IxDyn(&[b, IMG_CHANNELS, IMG_SIZE, IMG_SIZE]));
    for (i, item) in items.iter().enumerate() {
        x.index_axis_mut(Axis(0), i).assign(&item.x_t);
        eps.index_axis_mut(Axis(0), i).assign(&item.eps);
    }
    let ts: Vec<usize> = items.iter().map(|i| i.t).collect();
    let temb = batch_time_embedding(&ts);
    let prompts: Vec<&PromptTokens> = items.iter().map(|i| &i.tokens).collect();
    (x, eps, temb, prompts)
}

/// Sum over the chunk of per-sample ‖ε − ε̂‖² (no batch mean), optionally
/// with gradients of that sum for every parameter in binding order.
fn chunk_loss(model: &Model, items: &[TrainItem], want_grads: bool) -> Result<(f64, Vec<ArrayD<f64>>)> {
    let (x, eps, temb, prompts) = stack_items(items);
    let mut tape = Tape::new();
    let pv = model.bind(&mut tape)?;
    let enc = pv.text_encoder()?;
    let cond = enc.encode_batch(&mut tape, &prompts);
    let xv = tape.leaf(x);
    let ev = tape.leaf(eps);
    let tv = tape.leaf(temb);
    let pred = forward_denoiser(&mut tape, &pv, xv, tv, cond, 0, None)?;
    let diff = tape.sub(pred, ev);
    let loss = tape.sum_squares(diff);
    let value = tape.scalar(loss);
    if !value.is_finite() {
        return Err(Error::Training(format!("non-finite loss {value}")));
    }
    if !want_grads {
        return Ok((value, Vec::new()));
    }
    let grads = tape.backward(loss);
    let out = pv
        .all()
        .map(|(name, var)| match grads.get(var) {
            Some(g) => g.clone(),
            None => ArrayD::zeros(model.params.get(name).unwrap().raw_dim()),
        })
        .collect();
    Ok((value, out))
}

fn worker_count(cfg_workers: usize) -> usize {
    if cfg_workers > 0 {
        cfg_workers
    } else {
        std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
    }
}

/// Work-unit size for parallel gradient computation. Fixed so the
/// floating-point reduction order is independent of the worker count.
const MICRO_CHUNK: usize = 4;

/// Mean batch loss plus gradients, computed over fixed-size micro-chunks
/// and reduced in index order; identical for any worker count.
pub fn batch_loss_grads(
    model: &Model,
    items: &[TrainItem],
    workers: usize,
) -> Result<(f64, Vec<ArrayD<f64>>)> {
    let workers = worker_count(workers).max(1);
    let chunks: Vec<&[TrainItem]> = items.chunks(MICRO_CHUNK).collect();
    let mut results: Vec<Result<(f64, Vec<ArrayD<f64>>)>> = Vec::with_capacity(chunks.len());
    for wave in chunks.chunks(workers) {
        let wave_results: Vec<_> = std::thread::scope(|scope| {
            let handles: Vec<_> = wave
                .iter()
                .map(|c| scope.spawn(move || chunk_loss(model, c, true)))
                .collect();
            handles.into_iter().map(|h| h.join().expect("worker panicked")).collect()
        });
        results.extend(wave_results);
    }
    let b = items.len() as f64;
    let mut total = 0.0;
    let mut grads: Option<Vec<ArrayD<f64>>> = None;
    for res in results {
        let (loss, g) = res?;
        total += loss;
        match &mut grads {
            Some(acc) => {
                for (a, gi) in acc.iter_mut().zip(g) {
                    *a += &gi;
                }
            }
            None => grads = Some(g),
        }
    }
    let mut grads = grads.expect("at least one chunk");
    for g in &mut grads {
        g.mapv_inplace(|v| v / b);
    }
    Ok((total / b, grads))
}

/// Mean batch loss only; the quantity the gradient check differentiates.
pub fn batch_loss(model: &Model, items: &[TrainItem]) -> Result<f64> {
    let (sum, _) = chunk_loss(model, items, false)?;
    Ok(sum / items.len() as f64)
}

/// Deterministic noise-prediction loss on a batch: mean over the batch of
/// ‖ε − ε_θ(x_t, t, e_p)‖² with (t, ε) drawn from `seed`.
pub fn training_loss(model: &Model, batch: &[(PromptTokens, ArrayD<f64>)], seed: u64) -> Result<f64> {
    let items = sample_batch_noise(batch, model, seed, 0.0)?;
    batch_loss(model, &items)
}

/// Same statistic with an arbitrary predictor, for oracle tests.
pub fn training_loss_with<F>(
    batch: &[(PromptTokens, ArrayD<f64>)],
    model: &Model,
    seed: u64,
    mut predict: F,
) -> Result<f64>
where
    F: FnMut(&ArrayD<f64>, usize, &PromptTokens) -> ArrayD<f64>,
{
    let items = sample_batch_noise(batch, model, seed, 0.0)?;
    let mut total = 0.0;
    for item in &items {
        let pred = predict(&item.x_t, item.t, &item.tokens);
        total += noise_mse(&item.eps, &pred);
    }
    Ok(total / items.len() as f64)
}

struct Adam {
    m: Vec<ArrayD<f64>>,
    v: Vec<ArrayD<f64>>,
    step: usize,
    lr: f64,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(shapes: &[Vec<usize>], lr: f64) -> Self {
        let zero = |s: &Vec<usize>| ArrayD::zeros(IxDyn(s));
        Adam {
            m: shapes.iter().map(zero).collect(),
            v: shapes.iter().map(zero).collect(),
            step: 0,
            lr,
        }
    }

    fn update(&mut self, params: &mut [ArrayD<f64>], grads: &[ArrayD<f64>]) {
        self.step += 1;
        let bc1 = 1.0 - Self::BETA1.powi(self.step as i32);
        let bc2 = 1.0 - Self::BETA2.powi(self.step as i32);
        let lr = self.lr;
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            azip(p, g, m, v, |p, g, m, v| {
                *m = Self::BETA1 * *m + (1.0 - Self::BETA1) * g;
                *v = Self::BETA2 * *v + (1.0 - Self::BETA2) * g * g;
                let mhat = *m / bc1;
                let vhat = *v / bc2;
                *p -= lr * mhat / (vhat.sqrt() + Self::EPS);
            });
        }
    }
}

fn azip(
    p: &mut ArrayD<f64>,
    g: &ArrayD<f64>,
    m: &mut ArrayD<f64>,
    v: &mut ArrayD<f64>,
    mut f: impl FnMut(&mut f64, f64, &mut f64, &mut f64),
) {
    let g = g.as_standard_layout();
    let gs = g.as_slice().unwrap();
    let ps = p.as_slice_mut().unwrap();
    let ms = m.as_slice_mut().unwrap();
    let vs = v.as_slice_mut().unwrap();
    for i in 0..ps.len() {
        f(&mut ps[i], gs[i], &mut ms[i], &mut vs[i]);
    }
}

/// Minimize the noise-prediction loss over the dataset. Deterministic per
/// config; the returned model carries the training note in its metadata.
pub fn train(
    dataset: &[(PromptTokens, ArrayD<f64>)],
    config: &TrainConfig,
) -> Result<(Model, TrainReport)> {
    if dataset.is_empty() {
        return Err(Error::InvalidArgument("empty dataset".into()));
    }
    let mut model = Model::init(config.seed);
    let names: Vec<String> = crate::model::param_shapes(model.vocab.size())
        .iter()
        .map(|(n, _)| n.clone())
        .collect();
    let shapes: Vec<Vec<usize>> = crate::model::param_shapes(model.vocab.size())
        .iter()
        .map(|(_, s)| s.clone())
        .collect();
    let mut params: Vec<ArrayD<f64>> = names
        .iter()
        .map(|n| model.params.get(n).unwrap().clone())
        .collect();
    let mut adam = Adam::new(&shapes, config.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x7261696e);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut epoch_losses = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for batch_idx in order.chunks(config.batch_size) {
            let batch: Vec<(PromptTokens, ArrayD<f64>)> = batch_idx
                .iter()
                .map(|&i| dataset[i].clone())
                .collect();
            let batch_seed: u64 = rng.gen();
            // Sync current params into the model the workers read.
            for (n, p) in names.iter().zip(&params) {
                model.params.insert(n.clone(), p.clone());
            }
            let items = sample_batch_noise(&batch, &model, batch_seed, config.cond_dropout)?;
            let (loss, grads) = batch_loss_grads(&model, &items, config.workers)?;
            adam.update(&mut params, &grads);
            epoch_loss += loss;
            batches += 1;
        }
        epoch_losses.push(epoch_loss / batches as f64);
    }

    for (n, p) in names.iter().zip(&params) {
        model.params.insert(n.clone(), p.clone());
    }
    let final_loss = *epoch_losses.last().unwrap();
    if let Some(target) = config.target_loss {
        if final_loss > target {
            return Err(Error::Training(format!(
                "final loss {final_loss} above target {target}"
            )));
        }
    }
    model.meta.train_note = format!(
        "epochs={} batch={} lr={} final_loss={:.4}",
        config.epochs, config.batch_size, config.lr, final_loss
    );
    Ok((model, TrainReport { epoch_losses, final_loss }))
}

/// Compare analytic gradients with central finite differences on a random
/// sample of parameter coordinates. Returns (max relative error, count).
pub fn gradient_check(
    model: &Model,
    batch: &[(PromptTokens, ArrayD<f64>)],
    seed: u64,
    sample_fraction: f64,
    fd_step: f64,
) -> Result<(f64, usize)> {
    let items = sample_batch_noise(batch, model, seed, 0.0)?;
    let (_, grads) = batch_loss_grads(model, &items, 1)?;
    let names: Vec<String> = crate::model::param_shapes(model.vocab.size())
        .iter()
        .map(|(n, _)| n.clone())
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6664);
    let mut max_rel: f64 = 0.0;
    let mut checked = 0usize;
    let mut perturbed = model.clone();
    for (name, g) in names.iter().zip(&grads) {
        let base = model.params.get(name)?.clone();
        let flat_len = base.len();
        for idx in 0..flat_len {
            if rng.gen::<f64>() >= sample_fraction {
                continue;
            }
            let analytic = g.as_slice().unwrap()[idx];
            let mut plus = base.clone();
            plus.as_slice_mut().unwrap()[idx] += fd_step;
            perturbed.params.insert(name.clone(), plus);
            let lp = batch_loss(&perturbed, &items)?;
            let mut minus = base.clone();
            minus.as_slice_mut().unwrap()[idx] -= fd_step;
            perturbed.params.insert(name.clone(), minus);
            let lm = batch_loss(&perturbed, &items)?;
            perturbed.params.insert(name.clone(), base.clone());
            let fd = (lp - lm) / (2.0 * fd_step);
            let denom = analytic.abs().max(fd.abs()).max(1e-4);
            max_rel = max_rel.max((analytic - fd).abs() / denom);
            checked += 1;
        }
    }
    Ok((max_rel, checked))
}

/// Scratch copy of a model's parameters for optimizer-free experiments.
pub fn params_snapshot(model: &Model) -> ArrayStore {
    model.params.clone()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::ArrayD;
    use rand::SeedableRng;
    use rand_distr::StandardNormal;

    fn toy_batch(model: &Model, n: usize) -> Vec<(PromptTokens, ArrayD<f64>)> {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let prompts = ["red square tag0", "blue circle tag1", "teal cross tag2"];
        (0..n)
            .map(|i| {
                let tokens = tokenize(prompts[i % prompts.len()], &model.vocab).unwrap();
                let img = ArrayD::from_shape_fn(
                    IxDyn(&[IMG_CHANNELS, IMG_SIZE, IMG_SIZE]),
                    |_| rng.sample::<f64, _>(StandardNormal) * 0.5,
                );
                (tokens, img)
            })
            .collect()
    }

    #[test]
    fn perfect_predictor_has_zero_loss() {
        let model = Model::init(1);
        let batch = toy_batch(&model, 4);
        let items = sample_batch_noise(&batch, &model, 7, 0.0).unwrap();
        let eps: Vec<ArrayD<f64>> = items.iter().map(|i| i.eps.clone()).collect();
        let mut k = 0;
        let loss = training_loss_with(&batch, &model, 7, |_, _, _| {
            let e = eps[k].clone();
            k += 1;
            e
        })
        .unwrap();
        assert!(loss.abs() < 1e-24);
    }

    #[test]
    fn loss_is_deterministic_per_seed() {
        let model = Model::init(2);
        let batch = toy_batch(&model, 3);
        let a = training_loss(&model, &batch, 11).unwrap();
        let b = training_loss(&model, &batch, 11).unwrap();
        let c = training_loss(&model, &batch, 12).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn empty_batch_rejected() {
        let model = Model::init(3);
        assert!(training_loss(&model, &[], 0).is_err());
        assert!(train(&[], &TrainConfig::default()).is_err());
    }

    #[test]
    fn grads_deterministic_across_worker_counts() {
        let model = Model::init(4);
        let batch = toy_batch(&model, 6);
        let items = sample_batch_noise(&batch, &model, 5, 0.0).unwrap();
        let (l1, g1) = batch_loss_grads(&model, &items, 1).unwrap();
        let (l3, g3) = batch_loss_grads(&model, &items, 3).unwrap();
        assert_eq!(l1, l3);
        for (a, b) in g1.iter().zip(&g3) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn one_epoch_training_is_reproducible_and_descends() {
        let model0 = Model::init(5);
        let batch = toy_batch(&model0, 8);
        let cfg = TrainConfig { epochs: 6, batch_size: 4, seed: 5, ..Default::default() };
        let (m1, r1) = train(&batch, &cfg).unwrap();
        let (m2, r2) = train(&batch, &cfg).unwrap();
        assert_eq!(r1.epoch_losses, r2.epoch_losses);
        assert_eq!(m1.params, m2.params);
        assert!(
            r1.epoch_losses.last().unwrap() < r1.epoch_losses.first().unwrap(),
            "losses: {:?}",
            r1.epoch_losses
        );
    }

    #[test]
    fn analytic_gradients_match_finite_differences() {
        let model = Model::init(6);
        let batch = toy_batch(&model, 2);
        let (max_rel, checked) = gradient_check(&model, &batch, 17, 0.002, 1e-4).unwrap();
        assert!(checked > 20, "only {checked} coordinates sampled");
        assert!(max_rel <= 1e-3, "max relative error {max_rel} over {checked} coords");
    }
}
