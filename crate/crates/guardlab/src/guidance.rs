//! Contrastive guidance and the three-stream denoising loop.
//!
//! Each step runs one batched backbone call over three rows: unconditional,
//! standard conditional (traced, the repulsion target), and the attenuated
//! conditional (the attraction target). Spikes are re-detected from the
//! conditional stream's attention at every step; when none are found the
//! attenuated stream degenerates to the plain conditional one.

use ndarray::{Array2, ArrayD, Axis, IxDyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::attention::{
    AttentionSite, AttentionTrace, Block, LogitInterceptor, SiteSelector, TraceEntry,
};
use crate::attenuate::{
    attenuate_logits_gated, entry_hotness, step_gate, AttenuationPolicy, HeadMode, StepMode,
};
use crate::baselines::{rta, semantic_positive_tokens, ParaphraseTable, RenMaskInterceptor};
use crate::error::{Error, Result};
use crate::kernels::softmax_rows;
use crate::model::{batch_time_embedding, forward_denoiser, Model, SiteObserver, IMG_CHANNELS, IMG_SIZE};
use crate::schedule::inference_timesteps;
use crate::spike::{token_max_mass, zscores, SpikeSet};
use crate::tape::Tape;
use crate::text::{tokenize, D_TEXT, L_MAX};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Sampler {
    Ddim,
    /// DDIM update with η = 1 stochastic noise injection (seeded).
    Ancestral,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GuidanceConfig {
    /// Attraction scale toward the positive target.
    pub s: f64,
    /// Repulsion scale away from the memorized conditional target.
    pub r: f64,
    pub attenuation: AttenuationPolicy,
    pub tau: f64,
    pub include_eot_floor: bool,
    pub steps: usize,
    pub sampler: Sampler,
    /// Per-step multiplier schedules on s and r.
    pub s_schedule: StepMode,
    pub r_schedule: StepMode,
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        GuidanceConfig {
            s: 7.5,
            r: 1.0,
            attenuation: AttenuationPolicy::default(),
            tau: 3.0,
            include_eot_floor: false,
            steps: 50,
            sampler: Sampler::Ddim,
            s_schedule: StepMode::EveryStep,
            r_schedule: StepMode::EveryStep,
        }
    }
}

impl GuidanceConfig {
    pub fn validate(&self) -> Result<()> {
        if self.r < 0.0 {
            return Err(Error::Config(format!("r = {} must be >= 0", self.r)));
        }
        if self.steps == 0 {
            return Err(Error::Config("steps must be >= 1".into()));
        }
        self.attenuation.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Method {
    /// Plain classifier-free guidance, no mitigation.
    None,
    /// Random token addition into the prompt.
    Rta { k: usize },
    /// Conditional-signal scaling.
    WenScale { gamma: f64 },
    /// EOT/padding masking with BOT boost.
    RenMask { bot_boost: f64 },
    /// Spike attenuation alone (repulsion off).
    CaAttenuation,
    /// Full contrastive guidance with the attenuated positive target.
    CaGuard,
    /// Contrastive guidance with a paraphrased positive target instead of
    /// attention edits.
    SemanticGuard { table: ParaphraseTable },
}

impl Method {
    pub fn tag(&self) -> &'static str {
        match self {
            Method::None => "none",
            Method::Rta { .. } => "rta",
            Method::WenScale { .. } => "wen_scale",
            Method::RenMask { .. } => "ren_mask",
            Method::CaAttenuation => "ca_attenuation",
            Method::CaGuard => "ca_guard",
            Method::SemanticGuard { .. } => "semantic_guard",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSpec {
    pub method: Method,
    pub guidance: GuidanceConfig,
    pub seed: u64,
    #[serde(default)]
    pub record_trace: bool,
}

impl RunSpec {
    pub fn new(method: Method, guidance: GuidanceConfig, seed: u64) -> Self {
        RunSpec { method, guidance, seed, record_trace: false }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepRecord {
    pub step_index: usize,
    pub t: usize,
    pub spikes: SpikeSet,
    pub uncond_norm: f64,
    pub cond_norm: f64,
    pub pos_norm: f64,
    /// ‖ε_cond − ε_∅‖₂ at this step, the detection statistic's summand.
    pub wen_norm: f64,
    pub attenuation_gate: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub prompt: String,
    pub effective_prompt: String,
    pub spec: RunSpec,
    pub steps: Vec<StepRecord>,
    pub notes: Vec<String>,
}

pub struct GenerationOutput {
    pub image: ArrayD<f64>,
    pub report: RunReport,
    pub trace: Option<AttentionTrace>,
}

/// ε̂ = ε_∅ + s·(ε_cond − ε_∅).
pub fn cfg_compose(eps_uncond: &ArrayD<f64>, eps_cond: &ArrayD<f64>, s: f64) -> Result<ArrayD<f64>> {
    if eps_uncond.shape() != eps_cond.shape() {
        return Err(Error::shape("cfg_compose", eps_uncond.shape(), eps_cond.shape()));
    }
    let mut out = eps_uncond.clone();
    ndarray::Zip::from(&mut out)
        .and(eps_cond)
        .and(eps_uncond)
        .for_each(|o, &c, &u| *o = u + s * (c - u));
    Ok(out)
}

/// ε̂ = ε_∅ + s·(ε⁺ − ε_∅) − r·(ε⁻ − ε_∅).
pub fn guard_compose(
    eps_uncond: &ArrayD<f64>,
    eps_pos: &ArrayD<f64>,
    eps_neg: &ArrayD<f64>,
    s: f64,
    r: f64,
) -> Result<ArrayD<f64>> {
    if eps_uncond.shape() != eps_pos.shape() || eps_uncond.shape() != eps_neg.shape() {
        return Err(Error::shape("guard_compose", eps_uncond.shape(), eps_pos.shape()));
    }
    let mut out = eps_uncond.clone();
    ndarray::Zip::from(&mut out)
        .and(eps_pos)
        .and(eps_neg)
        .and(eps_uncond)
        .for_each(|o, &p, &n, &u| *o = u + s * (p - u) - r * (n - u));
    Ok(out)
}

/// Observer for the batched multi-stream pass: traces the conditional row,
/// detects spikes per site, and attenuates the positive row's logits.
struct StreamObserver<'a> {
    /// Batch row holding the standard conditional stream.
    cond_row: usize,
    /// Batch row to attenuate, when attenuation is on.
    pos_row: Option<usize>,
    policy: &'a AttenuationPolicy,
    tau: f64,
    include_eot_floor: bool,
    eot_pos: usize,
    /// step_gate factor for the attenuation schedule at this step.
    gate: f64,
    /// Interceptor applied to the conditional row (masking baseline).
    row_interceptor: Option<&'a dyn LogitInterceptor>,
    trace: AttentionTrace,
}

impl StreamObserver<'_> {
    fn slice_row(arr: &ArrayD<f64>, row: usize) -> Array2<f64> {
        arr.index_axis(Axis(0), row)
            .to_owned()
            .into_dimensionality()
            .expect("site logits are (B, N, L)")
    }

    fn put_row(arr: &mut ArrayD<f64>, row: usize, value: &Array2<f64>) {
        arr.index_axis_mut(Axis(0), row).assign(value);
    }
}

impl SiteObserver for StreamObserver<'_> {
    fn on_site_logits(
        &mut self,
        block: Block,
        layer: usize,
        step: usize,
        logits: &[ArrayD<f64>],
    ) -> Result<Option<Vec<Option<ArrayD<f64>>>>> {
        let mut replacements: Vec<Option<ArrayD<f64>>> = vec![None; logits.len()];

        // Conditional-row interception (independent of spike machinery).
        if let Some(ic) = self.row_interceptor {
            for (head, l) in logits.iter().enumerate() {
                let site = AttentionSite { block, layer_index: layer, head_index: head };
                if !ic.selector().matches(&site) {
                    continue;
                }
                let row = Self::slice_row(l, self.cond_row);
                let out = ic.transform(&row, &site, step);
                if out.dim() != row.dim() {
                    return Err(Error::ContractViolation(format!(
                        "interceptor changed logit shape {:?} -> {:?}",
                        row.dim(),
                        out.dim()
                    )));
                }
                let mut full = l.clone();
                Self::put_row(&mut full, self.cond_row, &out);
                replacements[head] = Some(full);
            }
        }

        // Trace the conditional stream (post-interception view).
        let mut site_entries = Vec::with_capacity(logits.len());
        for (head, l) in logits.iter().enumerate() {
            let effective = replacements[head].as_ref().unwrap_or(l);
            let row_logits = Self::slice_row(effective, self.cond_row);
            let weights = softmax_rows(&row_logits);
            site_entries.push(TraceEntry {
                step,
                site: AttentionSite { block, layer_index: layer, head_index: head },
                logits: row_logits,
                weights,
            });
        }

        // Per-site spike detection and positive-row attenuation.
        if let Some(pos_row) = self.pos_row {
            let attenuating = self.policy.blocks.contains(&block) && self.gate > 0.0;
            if attenuating {
                let refs: Vec<&TraceEntry> = site_entries.iter().collect();
                let profile = token_max_mass(&refs, &SiteSelector::all_blocks())?;
                let z = zscores(&profile);
                let mut positions: std::collections::BTreeSet<usize> = z
                    .iter()
                    .enumerate()
                    .filter(|(_, &zi)| zi > self.tau)
                    .map(|(i, _)| i)
                    .collect();
                if self.include_eot_floor {
                    positions.insert(self.eot_pos);
                }
                if !positions.is_empty() {
                    let spikes = SpikeSet { positions, zscores: z.clone(), step, tau: self.tau };
                    let heads = self.heads_to_edit(&site_entries, &z)?;
                    for head in heads {
                        let base = replacements[head].clone().unwrap_or_else(|| logits[head].clone());
                        let pos_logits = Self::slice_row(&base, pos_row);
                        let edited = attenuate_logits_gated(
                            &pos_logits,
                            &spikes,
                            self.policy.alpha,
                            self.gate,
                        );
                        let mut full = base;
                        Self::put_row(&mut full, pos_row, &edited);
                        replacements[head] = Some(full);
                    }
                }
            }
        }

        for e in site_entries {
            self.trace.push(e);
        }

        Ok(if replacements.iter().any(Option::is_some) {
            Some(replacements)
        } else {
            None
        })
    }

    fn on_site_weights(&mut self, _: Block, _: usize, _: usize, _: &[ArrayD<f64>]) -> Result<()> {
        Ok(())
    }
}

impl StreamObserver<'_> {
    /// Heads whose positive-row logits get edited at this site.
    fn heads_to_edit(&self, entries: &[TraceEntry], z: &[f64]) -> Result<Vec<usize>> {
        match self.policy.head_mode {
            HeadMode::AllHeads => Ok((0..entries.len()).collect()),
            HeadMode::TopKHot { fraction } => {
                // Trigger for hotness = the top-Z token at this site.
                let trigger = z
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.partial_cmp(b.1).unwrap_or(std::cmp::Ordering::Equal))
                    .map(|(i, _)| i)
                    .unwrap_or(self.eot_pos);
                let mut hot: Vec<(usize, f64)> = entries
                    .iter()
                    .enumerate()
                    .map(|(h, e)| Ok((h, entry_hotness(e, trigger)?)))
                    .collect::<Result<_>>()?;
                hot.sort_by(|a, b| {
                    b.1.partial_cmp(&a.1)
                        .unwrap_or(std::cmp::Ordering::Equal)
                        .then(a.0.cmp(&b.0))
                });
                let take = ((fraction * entries.len() as f64).ceil() as usize).max(1);
                let mut heads: Vec<usize> = hot.into_iter().take(take).map(|(h, _)| h).collect();
                heads.sort_unstable();
                Ok(heads)
            }
        }
    }
}

/// One batched backbone evaluation over several conditioning rows, with the
/// stream observer plugged into every attention site.
fn batched_predict(
    model: &Model,
    x_t: &ArrayD<f64>,
    t: usize,
    conds: &[&Array2<f64>],
    observer: &mut StreamObserver<'_>,
    step: usize,
) -> Result<Vec<ArrayD<f64>>> {
    let rows = conds.len();
    let mut x = ArrayD::zeros(IxDyn(&[rows, IMG_CHANNELS, IMG_SIZE, IMG_SIZE]));
    for r in 0..rows {
        x.index_axis_mut(Axis(0), r).assign(x_t);
    }
    let mut cond = ArrayD::zeros(IxDyn(&[rows, L_MAX, D_TEXT]));
    for (r, c) in conds.iter().enumerate() {
        cond.index_axis_mut(Axis(0), r).assign(*c);
    }
    let ts = vec![t; rows];
    let mut tape = Tape::new();
    let pv = model.bind(&mut tape)?;
    let xv = tape.leaf(x);
    let tv = tape.leaf(batch_time_embedding(&ts));
    let cv = tape.leaf(cond);
    let out = forward_denoiser(&mut tape, &pv, xv, tv, cv, step, Some(observer))?;
    let val = tape.value(out);
    Ok((0..rows)
        .map(|r| val.index_axis(Axis(0), r).to_owned().into_dyn())
        .collect())
}

/// The three noise predictions of one step plus the step's diagnostics.
pub struct ThreeStream {
    pub eps_uncond: ArrayD<f64>,
    pub eps_neg: ArrayD<f64>,
    pub eps_pos: ArrayD<f64>,
    pub spikes: SpikeSet,
    pub trace: AttentionTrace,
}

/// Single batched forward over (unconditional, conditional, attenuated)
/// with per-site detection feeding the attenuation.
pub fn three_stream_predict(
    model: &Model,
    x_t: &ArrayD<f64>,
    t: usize,
    e_null: &Array2<f64>,
    e_neg: &Array2<f64>,
    e_pos: &Array2<f64>,
    config: &GuidanceConfig,
    eot_pos: usize,
    step_index: usize,
    attenuate: bool,
) -> Result<ThreeStream> {
    config.validate()?;
    let gate = step_gate(step_index, config.steps, config.attenuation.step_mode);
    let mut observer = StreamObserver {
        cond_row: 1,
        pos_row: if attenuate { Some(2) } else { None },
        policy: &config.attenuation,
        tau: config.tau,
        include_eot_floor: config.include_eot_floor,
        eot_pos,
        gate,
        row_interceptor: None,
        trace: AttentionTrace::new(),
    };
    let eps = batched_predict(model, x_t, t, &[e_null, e_neg, e_pos], &mut observer, step_index)?;
    let spikes = report_spikes(&observer.trace, config, eot_pos, step_index)?;
    let mut it = eps.into_iter();
    Ok(ThreeStream {
        eps_uncond: it.next().unwrap(),
        eps_neg: it.next().unwrap(),
        eps_pos: it.next().unwrap(),
        spikes,
        trace: observer.trace,
    })
}

/// Report-level spike set for one step: full detector pass over the
/// conditional stream's trace, restricted to the attenuation blocks.
fn report_spikes(
    trace: &AttentionTrace,
    config: &GuidanceConfig,
    eot_pos: usize,
    step_index: usize,
) -> Result<SpikeSet> {
    let det = crate::spike::Detector {
        tau: config.tau,
        selector: SiteSelector::blocks(config.attenuation.blocks.iter().copied()),
        include_eot_floor: config.include_eot_floor,
    };
    let entries: Vec<&TraceEntry> = trace.at_step(step_index).collect();
    det.detect(&entries, step_index, Some(eot_pos))
}

fn l2(a: &ArrayD<f64>) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn diff_l2(a: &ArrayD<f64>, b: &ArrayD<f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// One full guided denoising step: three-stream prediction, contrastive
/// composition, sampler update.
pub fn guard_denoise_step(
    model: &Model,
    x_t: &ArrayD<f64>,
    t: usize,
    t_prev: Option<usize>,
    e_null: &Array2<f64>,
    e_p: &Array2<f64>,
    config: &GuidanceConfig,
    eot_pos: usize,
    step_index: usize,
) -> Result<(ArrayD<f64>, SpikeSet, ThreeStream)> {
    let three = three_stream_predict(
        model, x_t, t, e_null, e_p, e_p, config, eot_pos, step_index, true,
    )?;
    let s_eff = config.s * step_gate(step_index, config.steps, config.s_schedule);
    let r_eff = config.r * step_gate(step_index, config.steps, config.r_schedule);
    let eps_hat = guard_compose(&three.eps_uncond, &three.eps_pos, &three.eps_neg, s_eff, r_eff)?;
    let x_prev = crate::schedule::ddim_step(x_t, &eps_hat, t, t_prev, &model.schedule)?;
    let spikes = three.spikes.clone();
    Ok((x_prev, spikes, three))
}

/// Full generation under any method, emitting the uniform run report.
pub fn generate(model: &Model, prompt: &str, spec: &RunSpec) -> Result<GenerationOutput> {
    spec.guidance.validate()?;
    let base_tokens = tokenize(prompt, &model.vocab)?;
    let mut notes: Vec<String> = Vec::new();

    let tokens = match &spec.method {
        Method::Rta { k } => {
            let t = rta(&base_tokens, *k, &model.vocab, spec.seed ^ 0x727461)?;
            notes.push(format!(
                "rta inserted {k} tokens: \"{}\"",
                crate::text::detokenize(&t, &model.vocab)
            ));
            t
        }
        _ => base_tokens.clone(),
    };
    let effective_prompt = crate::text::detokenize(&tokens, &model.vocab);

    let e_null = model.null_embedding()?;
    let e_p = model.encode_prompt(&tokens)?;
    let e_pos = match &spec.method {
        Method::SemanticGuard { table } => {
            let para = semantic_positive_tokens(&tokens, table, model)?;
            notes.push(format!(
                "semantic positive target: \"{}\"",
                crate::text::detokenize(&para, &model.vocab)
            ));
            model.encode_prompt(&para)?
        }
        _ => e_p.clone(),
    };

    let ren_interceptor = match &spec.method {
        Method::RenMask { bot_boost } => Some(RenMaskInterceptor::new(&tokens, *bot_boost)?),
        _ => None,
    };
    if let Some(ic) = &ren_interceptor {
        ic.selector().validate(&model.sites())?;
    }

    let cfg = &spec.guidance;
    let ts = inference_timesteps(model.schedule.len(), cfg.steps)?;
    let n = ts.len();
    let mut x = crate::model::seeded_latent(spec.seed);
    let mut anc_rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x616e63);
    let mut steps_out = Vec::with_capacity(n);
    let mut full_trace = AttentionTrace::new();

    for (i, &t) in ts.iter().enumerate() {
        let t_prev = ts.get(i + 1).copied();
        let gate = step_gate(i, n, cfg.attenuation.step_mode);
        let s_eff = cfg.s * step_gate(i, n, cfg.s_schedule);
        let r_eff = cfg.r * step_gate(i, n, cfg.r_schedule);

        let three_stream = matches!(
            spec.method,
            Method::CaAttenuation | Method::CaGuard | Method::SemanticGuard { .. }
        );

        let (eps_hat, spikes, uncond_norm, cond_norm, pos_norm, wen_norm) = if three_stream {
            let attenuate = !matches!(spec.method, Method::SemanticGuard { .. });
            let three = three_stream_predict(
                model, &x, t, &e_null, &e_p, &e_pos, cfg, tokens.eot_pos, i, attenuate,
            )?;
            let r_used = match spec.method {
                Method::CaAttenuation => 0.0,
                _ => r_eff,
            };
            let eps_hat =
                guard_compose(&three.eps_uncond, &three.eps_pos, &three.eps_neg, s_eff, r_used)?;
            if spec.record_trace {
                for e in three.trace.entries.iter() {
                    full_trace.push(e.clone());
                }
            }
            (
                eps_hat,
                three.spikes,
                l2(&three.eps_uncond),
                l2(&three.eps_neg),
                l2(&three.eps_pos),
                diff_l2(&three.eps_neg, &three.eps_uncond),
            )
        } else {
            let mut observer = StreamObserver {
                cond_row: 1,
                pos_row: None,
                policy: &cfg.attenuation,
                tau: cfg.tau,
                include_eot_floor: cfg.include_eot_floor,
                eot_pos: tokens.eot_pos,
                gate,
                row_interceptor: ren_interceptor.as_ref().map(|ic| ic as &dyn LogitInterceptor),
                trace: AttentionTrace::new(),
            };
            let eps = batched_predict(model, &x, t, &[&e_null, &e_p], &mut observer, i)?;
            let spikes = report_spikes(&observer.trace, cfg, tokens.eot_pos, i)?;
            if spec.record_trace {
                for e in observer.trace.entries.iter() {
                    full_trace.push(e.clone());
                }
            }
            let (u, c) = (&eps[0], &eps[1]);
            let eps_hat = match &spec.method {
                Method::WenScale { gamma } => {
                    crate::baselines::wen_scale_compose(u, c, s_eff, *gamma)?
                }
                _ => cfg_compose(u, c, s_eff)?,
            };
            (eps_hat, spikes, l2(u), l2(c), l2(c), diff_l2(c, u))
        };

        x = match cfg.sampler {
            Sampler::Ddim => crate::schedule::ddim_step(&x, &eps_hat, t, t_prev, &model.schedule)?,
            Sampler::Ancestral => {
                ancestral_step(&x, &eps_hat, t, t_prev, &model.schedule, &mut anc_rng)?
            }
        };

        steps_out.push(StepRecord {
            step_index: i,
            t,
            spikes,
            uncond_norm,
            cond_norm,
            pos_norm,
            wen_norm,
            attenuation_gate: gate,
        });
    }

    let image = x.mapv(|v| v.clamp(-1.0, 1.0));
    let report = RunReport {
        schema_version: REPORT_SCHEMA_VERSION,
        prompt: prompt.to_string(),
        effective_prompt,
        spec: spec.clone(),
        steps: steps_out,
        notes,
    };
    Ok(GenerationOutput {
        image,
        report,
        trace: spec.record_trace.then_some(full_trace),
    })
}

/// η = 1 stochastic variant of the deterministic update.
fn ancestral_step(
    x: &ArrayD<f64>,
    eps_hat: &ArrayD<f64>,
    t: usize,
    t_prev: Option<usize>,
    schedule: &crate::schedule::NoiseSchedule,
    rng: &mut ChaCha8Rng,
) -> Result<ArrayD<f64>> {
    let abar_t = schedule.alpha_bar(t);
    let abar_prev = match t_prev {
        Some(p) => {
            if p >= t {
                return Err(Error::InvalidArgument(format!(
                    "t_prev = {p} must be below t = {t}"
                )));
            }
            schedule.alpha_bar(p)
        }
        None => 1.0,
    };
    let sigma2 = ((1.0 - abar_prev) / (1.0 - abar_t)) * (1.0 - abar_t / abar_prev);
    let sigma2 = sigma2.max(0.0).min(1.0 - abar_prev);
    let at = abar_t.sqrt();
    let bt = (1.0 - abar_t).sqrt();
    let x0 = (x - &eps_hat.mapv(|v| v * bt)).mapv(|v| v / at);
    let dir = (1.0 - abar_prev - sigma2).max(0.0).sqrt();
    let mut out = x0.mapv(|v| v * abar_prev.sqrt()) + &eps_hat.mapv(|v| v * dir);
    if sigma2 > 0.0 {
        let sigma = sigma2.sqrt();
        let noise = ArrayD::from_shape_fn(x.raw_dim(), |_| rng.sample::<f64, _>(StandardNormal));
        out = out + &noise.mapv(|v| v * sigma);
    }
    Ok(out)
}

/// A reference two-stream CFG trajectory (the reduction target for the
/// identity checks): same seed, same sampler, no mitigation.
pub fn generate_cfg_reference(model: &Model, prompt: &str, guidance: &GuidanceConfig, seed: u64) -> Result<GenerationOutput> {
    let spec = RunSpec::new(Method::None, guidance.clone(), seed);
    generate(model, prompt, &spec)
}
