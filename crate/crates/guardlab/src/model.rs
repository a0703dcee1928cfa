//! The toy denoiser: a three-block U-Net-style backbone (down / mid / up)
//! with one two-head cross-attention layer per block, conditioned on time
//! via sinusoidal embeddings and on text via the causal encoder.
//!
//! All forward math goes through one tape-based composition used by both
//! training and inference; observers see raw attention logits per site and
//! may replace them (inference only), which is the sole intervention seam.

use ndarray::{Array1, Array2, ArrayD, IxDyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::attention::{
    AttentionSite, AttentionTrace, Block, LogitInterceptor, TraceEntry,
};
use crate::error::{Error, Result};
use crate::kernels::time_embedding;
use crate::schedule::NoiseSchedule;
use crate::store::ArrayStore;
use crate::tape::{Tape, Var};
use crate::text::{PromptTokens, TextEncoderVars, Vocab, D_TEXT, L_MAX};

pub const IMG_CHANNELS: usize = 3;
pub const IMG_SIZE: usize = 16;
/// Feature channels in every block.
pub const CHANNELS: usize = 32;
pub const D_K: usize = 16;
pub const HEADS: usize = 2;
pub const T_EMB: usize = 32;

/// Checkpoint sidecar.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ModelMeta {
    pub schema_version: u32,
    pub t_train: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub vocab: Vocab,
    pub init_seed: u64,
    pub train_note: String,
}

/// Trained (or freshly initialized) weights plus everything needed to run
/// them. Immutable after training; safe to sample from concurrently.
#[derive(Debug, Clone)]
pub struct Model {
    pub params: ArrayStore,
    pub vocab: Vocab,
    pub schedule: NoiseSchedule,
    pub meta: ModelMeta,
}

/// All parameter names with shapes, text encoder included.
pub fn param_shapes(vocab_size: usize) -> Vec<(String, Vec<usize>)> {
    let mut shapes: Vec<(String, Vec<usize>)> = crate::text::text_param_shapes(vocab_size)
        .into_iter()
        .map(|(n, s)| (n.to_string(), s))
        .collect();
    let conv_in = [
        ("down", IMG_CHANNELS, IMG_SIZE),
        ("mid", CHANNELS, IMG_SIZE / 2),
        ("up", 2 * CHANNELS, IMG_SIZE),
    ];
    for (name, cin, size) in conv_in {
        shapes.push((format!("{name}/conv_w"), vec![CHANNELS, cin, 3, 3]));
        shapes.push((format!("{name}/conv_b"), vec![CHANNELS]));
        shapes.push((format!("{name}/temb_w"), vec![T_EMB, CHANNELS]));
        shapes.push((format!("{name}/temb_b"), vec![CHANNELS]));
        // Learned positional bias; without it the attention queries at high
        // noise carry no spatial information and prompt-specific images
        // cannot be painted at a fixed location.
        shapes.push((format!("{name}/pos"), vec![CHANNELS, size, size]));
        for h in 0..HEADS {
            shapes.push((format!("{name}/ca/h{h}/wq"), vec![CHANNELS, D_K]));
            shapes.push((format!("{name}/ca/h{h}/wk"), vec![D_TEXT, D_K]));
            shapes.push((format!("{name}/ca/h{h}/wv"), vec![D_TEXT, D_K]));
        }
        shapes.push((format!("{name}/ca/wo"), vec![HEADS * D_K, CHANNELS]));
        shapes.push((format!("{name}/ca/wo_b"), vec![CHANNELS]));
    }
    shapes.push(("out/conv_w".into(), vec![IMG_CHANNELS, CHANNELS, 3, 3]));
    shapes.push(("out/conv_b".into(), vec![IMG_CHANNELS]));
    shapes
}

impl Model {
    pub fn init(seed: u64) -> Self {
        let vocab = Vocab::default();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ArrayStore::new();
        for (name, shape) in param_shapes(vocab.size()) {
            let fan_in: usize = shape[..shape.len().saturating_sub(1)].iter().product::<usize>().max(1);
            let std = if name.ends_with("_b") || name.ends_with("wo_b") {
                0.0
            } else if name.starts_with("text/table") {
                // Full-scale embeddings keep never-trained words far from the
                // trained manifold instead of collapsing them onto the mean
                // prompt, so novel tokens do not silently alias trained ones.
                1.0
            } else if name.starts_with("text/pos") {
                0.1
            } else if name.contains("conv_w") {
                (2.0 / fan_in as f64).sqrt()
            } else {
                1.0 / (shape[0] as f64).sqrt()
            };
            let arr = ArrayD::from_shape_fn(IxDyn(&shape), |_| {
                let g: f64 = rng.sample(StandardNormal);
                g * std
            });
            params.insert(name, arr);
        }
        let schedule = NoiseSchedule::default_toy();
        let meta = ModelMeta {
            schema_version: 1,
            t_train: schedule.len(),
            beta_start: 1e-4,
            beta_end: 0.02,
            vocab: vocab.clone(),
            init_seed: seed,
            train_note: String::new(),
        };
        Model { params, vocab, schedule, meta }
    }

    pub fn sites(&self) -> Vec<AttentionSite> {
        let mut v = Vec::new();
        for block in Block::ALL {
            for head in 0..HEADS {
                v.push(AttentionSite { block, layer_index: 0, head_index: head });
            }
        }
        v
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        crate::store::save_with_sidecar(&self.params, &self.meta, path)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let (params, meta): (ArrayStore, ModelMeta) = crate::store::load_with_sidecar(path)?;
        let schedule = NoiseSchedule::linear(meta.t_train, meta.beta_start, meta.beta_end)?;
        for (name, shape) in param_shapes(meta.vocab.size()) {
            let arr = params.get(&name)?;
            if arr.shape() != shape.as_slice() {
                return Err(Error::shape("checkpoint param", &shape, arr.shape()));
            }
        }
        Ok(Model { vocab: meta.vocab.clone(), params, schedule, meta })
    }

    /// Bind every parameter as a tape leaf. Iteration order is the fixed
    /// order of [`param_shapes`].
    pub fn bind(&self, tape: &mut Tape) -> Result<ParamVars> {
        let mut names = Vec::new();
        let mut vars = Vec::new();
        for (name, _) in param_shapes(self.vocab.size()) {
            let v = tape.leaf(self.params.get(&name)?.clone());
            names.push(name);
            vars.push(v);
        }
        Ok(ParamVars { names, vars })
    }

    pub fn encode_prompt(&self, prompt: &PromptTokens) -> Result<Array2<f64>> {
        let mut tape = Tape::new();
        let pv = self.bind(&mut tape)?;
        let enc = pv.text_encoder()?;
        Ok(enc.encode_one(&mut tape, prompt))
    }

    pub fn null_embedding(&self) -> Result<Array2<f64>> {
        let empty = crate::text::tokenize("", &self.vocab)?;
        self.encode_prompt(&empty)
    }

    /// Single noise prediction with optional interception and tracing.
    /// `step` only labels trace entries.
    pub fn predict_noise(
        &self,
        x_t: &ArrayD<f64>,
        t: usize,
        cond: &Array2<f64>,
        interceptor: Option<&dyn LogitInterceptor>,
        record: bool,
        step: usize,
    ) -> Result<(ArrayD<f64>, AttentionTrace)> {
        if let Some(ic) = interceptor {
            ic.selector().validate(&self.sites())?;
        }
        let x = x_t
            .to_shape(IxDyn(&[1, IMG_CHANNELS, IMG_SIZE, IMG_SIZE]))
            .map_err(|_| Error::shape(
                "predict_noise input",
                &[IMG_CHANNELS, IMG_SIZE, IMG_SIZE],
                x_t.shape(),
            ))?
            .to_owned();
        let mut tape = Tape::new();
        let pv = self.bind(&mut tape)?;
        let xv = tape.leaf(x);
        let temb = tape.leaf(batch_time_embedding(&[t]));
        let cv = tape.leaf(
            cond.clone()
                .into_shape((1, L_MAX, D_TEXT))
                .map_err(|_| Error::shape("predict_noise cond", &[L_MAX, D_TEXT], cond.shape()))?
                .into_dyn(),
        );
        let mut adapter = InterceptAdapter { interceptor, record, trace: AttentionTrace::new(), pending: Vec::new() };
        let out = forward_denoiser(&mut tape, &pv, xv, temb, cv, step, Some(&mut adapter))?;
        let eps = tape
            .value(out)
            .to_shape(IxDyn(&[IMG_CHANNELS, IMG_SIZE, IMG_SIZE]))
            .unwrap()
            .to_owned();
        Ok((eps, adapter.trace))
    }
}

/// Parameter handles bound to one tape.
pub struct ParamVars {
    names: Vec<String>,
    vars: Vec<Var>,
}

impl ParamVars {
    pub fn get(&self, name: &str) -> Result<Var> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| self.vars[i])
            .ok_or_else(|| Error::Config(format!("unknown parameter {name:?}")))
    }

    pub fn all(&self) -> impl Iterator<Item = (&str, Var)> {
        self.names.iter().map(String::as_str).zip(self.vars.iter().copied())
    }

    pub fn text_encoder(&self) -> Result<TextEncoderVars> {
        Ok(TextEncoderVars {
            table: self.get("text/table")?,
            pos: self.get("text/pos")?,
            wq: self.get("text/wq")?,
            wk: self.get("text/wk")?,
            wv: self.get("text/wv")?,
            wo: self.get("text/wo")?,
        })
    }
}

/// Sees the raw per-head logits of one attention site before softmax and
/// may replace them; then sees the post-softmax weights. Head index is the
/// position in the slice. Arrays are shaped (B, N_queries, L).
pub trait SiteObserver {
    fn on_site_logits(
        &mut self,
        block: Block,
        layer: usize,
        step: usize,
        logits: &[ArrayD<f64>],
    ) -> Result<Option<Vec<Option<ArrayD<f64>>>>>;

    fn on_site_weights(
        &mut self,
        block: Block,
        layer: usize,
        step: usize,
        weights: &[ArrayD<f64>],
    ) -> Result<()>;
}

/// Stacked sinusoidal embeddings for per-sample timesteps, shape (B, T_EMB).
pub fn batch_time_embedding(ts: &[usize]) -> ArrayD<f64> {
    let mut out = Array2::zeros((ts.len(), T_EMB));
    for (i, &t) in ts.iter().enumerate() {
        out.row_mut(i).assign(&time_embedding(t, T_EMB));
    }
    out.into_dyn()
}

/// Full backbone forward. `x` is (B, 3, 16, 16), `temb` (B, T_EMB), `cond`
/// (B, L_MAX, D_TEXT); returns predicted noise (B, 3, 16, 16).
pub fn forward_denoiser(
    tape: &mut Tape,
    pv: &ParamVars,
    x: Var,
    temb: Var,
    cond: Var,
    step: usize,
    mut observer: Option<&mut dyn SiteObserver>,
) -> Result<Var> {
    let down = conditioned_block(tape, pv, "down", x, temb)?;
    let down = ca_block(tape, pv, "down", Block::Down, down, cond, IMG_SIZE, step, &mut observer)?;
    let skip = down;

    let pooled = tape.avg_pool2(down);
    let mid = conditioned_block(tape, pv, "mid", pooled, temb)?;
    let mid = ca_block(tape, pv, "mid", Block::Mid, mid, cond, IMG_SIZE / 2, step, &mut observer)?;

    let upsampled = tape.upsample2(mid);
    let cat = tape.concat_chan(skip, upsampled);
    let up = conditioned_block(tape, pv, "up", cat, temb)?;
    let up = ca_block(tape, pv, "up", Block::Up, up, cond, IMG_SIZE, step, &mut observer)?;

    let w = pv.get("out/conv_w")?;
    let b = pv.get("out/conv_b")?;
    Ok(tape.conv2d(up, w, b))
}

/// conv → add time channel bias → silu.
fn conditioned_block(tape: &mut Tape, pv: &ParamVars, name: &str, x: Var, temb: Var) -> Result<Var> {
    let w = pv.get(&format!("{name}/conv_w"))?;
    let b = pv.get(&format!("{name}/conv_b"))?;
    let h = tape.conv2d(x, w, b);
    let tw = pv.get(&format!("{name}/temb_w"))?;
    let tb = pv.get(&format!("{name}/temb_b"))?;
    let tproj = tape.matmul(temb, tw);
    let tproj = tape.add_row_bias(tproj, tb);
    let h = tape.add_chan_vec(h, tproj);
    let h = tape.silu(h);
    let pos = pv.get(&format!("{name}/pos"))?;
    Ok(tape.add_bcast0(h, pos))
}

/// Residual multi-head cross-attention over the spatial grid.
fn ca_block(
    tape: &mut Tape,
    pv: &ParamVars,
    name: &str,
    block: Block,
    h: Var,
    cond: Var,
    size: usize,
    step: usize,
    observer: &mut Option<&mut dyn SiteObserver>,
) -> Result<Var> {
    let seq = tape.spatial_to_seq(h);
    let scale = 1.0 / (D_K as f64).sqrt();
    let mut logit_vars = Vec::with_capacity(HEADS);
    let mut v_vars = Vec::with_capacity(HEADS);
    for head in 0..HEADS {
        let wq = pv.get(&format!("{name}/ca/h{head}/wq"))?;
        let wk = pv.get(&format!("{name}/ca/h{head}/wk"))?;
        let wv = pv.get(&format!("{name}/ca/h{head}/wv"))?;
        let q = tape.linear(seq, wq, None);
        let k = tape.linear(cond, wk, None);
        let v = tape.linear(cond, wv, None);
        let logits = tape.batch_matmul_nt(q, k);
        let logits = tape.scale(logits, scale);
        logit_vars.push(logits);
        v_vars.push(v);
    }

    if let Some(obs) = observer {
        let vals: Vec<ArrayD<f64>> = logit_vars.iter().map(|&v| tape.value(v).clone()).collect();
        if let Some(replacements) = obs.on_site_logits(block, 0, step, &vals)? {
            if replacements.len() != HEADS {
                return Err(Error::ContractViolation(format!(
                    "observer returned {} head replacements, site has {HEADS}",
                    replacements.len()
                )));
            }
            for (&var, repl) in logit_vars.iter().zip(replacements) {
                if let Some(r) = repl {
                    tape.replace_value(var, r)?;
                }
            }
        }
        let mut weight_vars = Vec::with_capacity(HEADS);
        for &lv in &logit_vars {
            weight_vars.push(tape.softmax_last(lv));
        }
        let wvals: Vec<ArrayD<f64>> = weight_vars.iter().map(|&v| tape.value(v).clone()).collect();
        obs.on_site_weights(block, 0, step, &wvals)?;
        finish_ca(tape, pv, name, h, &weight_vars, &v_vars, size)
    } else {
        let weight_vars: Vec<Var> = logit_vars.iter().map(|&lv| tape.softmax_last(lv)).collect();
        finish_ca(tape, pv, name, h, &weight_vars, &v_vars, size)
    }
}

fn finish_ca(
    tape: &mut Tape,
    pv: &ParamVars,
    name: &str,
    h: Var,
    weights: &[Var],
    values: &[Var],
    size: usize,
) -> Result<Var> {
    let mut heads_out = Vec::with_capacity(HEADS);
    for (&w, &v) in weights.iter().zip(values) {
        heads_out.push(tape.batch_matmul(w, v));
    }
    let mut cat = heads_out[0];
    for &o in &heads_out[1..] {
        cat = tape.concat_last(cat, o);
    }
    let wo = pv.get(&format!("{name}/ca/wo"))?;
    let wo_b = pv.get(&format!("{name}/ca/wo_b"))?;
    let proj = tape.linear(cat, wo, Some(wo_b));
    let spatial = tape.seq_to_spatial(proj, size, size);
    Ok(tape.add(h, spatial))
}

/// Bridges the per-sample [`LogitInterceptor`] contract and trace recording
/// onto the batched observer seam (batch size 1).
struct InterceptAdapter<'a> {
    interceptor: Option<&'a dyn LogitInterceptor>,
    record: bool,
    trace: AttentionTrace,
    /// Effective (post-interception) logits awaiting their weights.
    pending: Vec<(AttentionSite, Array2<f64>)>,
}

impl SiteObserver for InterceptAdapter<'_> {
    fn on_site_logits(
        &mut self,
        block: Block,
        layer: usize,
        step: usize,
        logits: &[ArrayD<f64>],
    ) -> Result<Option<Vec<Option<ArrayD<f64>>>>> {
        self.pending.clear();
        let mut replacements: Vec<Option<ArrayD<f64>>> = vec![None; logits.len()];
        for (head, l) in logits.iter().enumerate() {
            let site = AttentionSite { block, layer_index: layer, head_index: head };
            let shape = l.shape().to_vec();
            let l2 = l
                .to_shape((shape[1], shape[2]))
                .expect("observer logits are (1, N, L)")
                .to_owned();
            let effective = match self.interceptor {
                Some(ic) if ic.selector().matches(&site) => {
                    let out = ic.transform(&l2, &site, step);
                    if out.dim() != l2.dim() {
                        return Err(Error::ContractViolation(format!(
                            "interceptor changed logit shape {:?} -> {:?}",
                            l2.dim(),
                            out.dim()
                        )));
                    }
                    replacements[head] =
                        Some(out.clone().into_shape(IxDyn(&shape)).unwrap());
                    out
                }
                _ => l2,
            };
            if self.record {
                self.pending.push((site, effective));
            }
        }
        Ok(if replacements.iter().any(Option::is_some) {
            Some(replacements)
        } else {
            None
        })
    }

    fn on_site_weights(
        &mut self,
        _block: Block,
        _layer: usize,
        step: usize,
        weights: &[ArrayD<f64>],
    ) -> Result<()> {
        if !self.record {
            return Ok(());
        }
        for ((site, logits), w) in self.pending.drain(..).zip(weights) {
            let shape = w.shape().to_vec();
            let w2 = w.to_shape((shape[1], shape[2])).unwrap().to_owned();
            self.trace.push(TraceEntry { step, site, logits, weights: w2 });
        }
        Ok(())
    }
}

/// Sum over dimensions of ‖ε − ε̂‖²; training averages this over a batch.
pub fn noise_mse(eps: &ArrayD<f64>, eps_hat: &ArrayD<f64>) -> f64 {
    eps.iter()
        .zip(eps_hat.iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum()
}

/// Sample a training pair (t, ε) and x_t for one image.
pub fn sample_noised(
    x0: &ArrayD<f64>,
    schedule: &NoiseSchedule,
    rng: &mut ChaCha8Rng,
) -> (usize, ArrayD<f64>, ArrayD<f64>) {
    let t = rng.gen_range(0..schedule.len());
    let eps = ArrayD::from_shape_fn(x0.raw_dim(), |_| rng.sample::<f64, _>(StandardNormal));
    let x_t = crate::schedule::diffuse_at(x0, &eps, schedule.alpha_bar(t));
    (t, eps, x_t)
}

pub fn seeded_latent(seed: u64) -> ArrayD<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ArrayD::from_shape_fn(IxDyn(&[IMG_CHANNELS, IMG_SIZE, IMG_SIZE]), |_| {
        rng.sample::<f64, _>(StandardNormal)
    })
}

pub fn zero_time_embedding_check() -> Array1<f64> {
    time_embedding(0, T_EMB)
}
