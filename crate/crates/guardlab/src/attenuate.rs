//! Surgical multiplicative attenuation of cross-attention logits, with the
//! block / head / timestep policies that govern where and when it applies.

use std::collections::BTreeSet;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::attention::{AttentionSite, Block, SiteSelector, TraceEntry};
use crate::error::{Error, Result};
use crate::spike::SpikeSet;

/// Entropy floor (nats) protecting hotness against one-hot heads.
pub const ENTROPY_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HeadMode {
    AllHeads,
    /// Keep only the top `fraction` hottest heads per block.
    TopKHot { fraction: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StepMode {
    EveryStep,
    FirstHalf,
    CosineDecay,
    LinearDecay,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AttenuationPolicy {
    pub alpha: f64,
    pub blocks: BTreeSet<Block>,
    pub head_mode: HeadMode,
    pub step_mode: StepMode,
}

impl Default for AttenuationPolicy {
    fn default() -> Self {
        AttenuationPolicy {
            alpha: 0.25,
            blocks: [Block::Down, Block::Mid].into_iter().collect(),
            head_mode: HeadMode::AllHeads,
            step_mode: StepMode::EveryStep,
        }
    }
}

impl AttenuationPolicy {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0) {
            return Err(Error::Config(format!("alpha = {} must be > 0", self.alpha)));
        }
        if self.blocks.is_empty() {
            return Err(Error::Config("attenuation needs at least one block".into()));
        }
        if let HeadMode::TopKHot { fraction } = self.head_mode {
            if !(fraction > 0.0 && fraction <= 1.0) {
                return Err(Error::Config(format!(
                    "head fraction {fraction} outside (0, 1]"
                )));
            }
        }
        Ok(())
    }
}

/// ℓ'_{q,i} = ℓ_{q,i}·α^[i ∈ S]. Non-spike columns pass through bitwise.
pub fn attenuate_logits(logits: &Array2<f64>, spikes: &SpikeSet, alpha: f64) -> Array2<f64> {
    attenuate_logits_gated(logits, spikes, alpha, 1.0)
}

/// Timestep-gated variant: the exponent interpolates, ℓ·α^(factor·[i ∈ S]),
/// identity at factor 0 and full attenuation at factor 1.
pub fn attenuate_logits_gated(
    logits: &Array2<f64>,
    spikes: &SpikeSet,
    alpha: f64,
    factor: f64,
) -> Array2<f64> {
    let eff = alpha.powf(factor);
    if eff == 1.0 || spikes.is_empty() {
        return logits.clone();
    }
    let mut out = logits.clone();
    for &i in &spikes.positions {
        for mut row in out.rows_mut() {
            row[i] *= eff;
        }
    }
    out
}

/// Per-step multiplier on the attenuation amount. `t` is the 0-based index
/// of the inference step, `total` the step count.
pub fn step_gate(t: usize, total: usize, mode: StepMode) -> f64 {
    debug_assert!(t < total);
    match mode {
        StepMode::EveryStep => 1.0,
        StepMode::FirstHalf => {
            if t < total / 2 {
                1.0
            } else {
                0.0
            }
        }
        StepMode::LinearDecay => 1.0 - t as f64 / total as f64,
        StepMode::CosineDecay => 0.5 * (1.0 + (std::f64::consts::PI * t as f64 / total as f64).cos()),
    }
}

/// H = AttnScore × (1/Entropy) for one trace entry: AttnScore is the mean
/// over queries of the weight on the trigger token, Entropy the Shannon
/// entropy (nats) of the query-averaged token distribution.
pub fn entry_hotness(entry: &TraceEntry, trigger: usize) -> Result<f64> {
    let w = &entry.weights;
    if trigger >= w.ncols() {
        return Err(Error::InvalidArgument(format!(
            "trigger position {trigger} outside {} tokens",
            w.ncols()
        )));
    }
    let nq = w.nrows() as f64;
    let score = w.column(trigger).sum() / nq;
    let mut entropy = 0.0;
    for i in 0..w.ncols() {
        let p = w.column(i).sum() / nq;
        if p > 0.0 {
            entropy -= p * p.ln();
        }
    }
    Ok(score / entropy.max(ENTROPY_FLOOR))
}

/// Hotness per (block, head), averaged over matching trace entries.
pub fn head_hotness(
    entries: &[&TraceEntry],
    trigger: usize,
) -> Result<Vec<(Block, usize, f64)>> {
    let mut acc: Vec<((Block, usize), f64, usize)> = Vec::new();
    for e in entries {
        let h = entry_hotness(e, trigger)?;
        let key = (e.site.block, e.site.head_index);
        match acc.iter_mut().find(|(k, _, _)| *k == key) {
            Some((_, sum, n)) => {
                *sum += h;
                *n += 1;
            }
            None => acc.push((key, h, 1)),
        }
    }
    Ok(acc
        .into_iter()
        .map(|((b, h), sum, n)| (b, h, sum / n as f64))
        .collect())
}

/// Top ⌈k·heads-per-block⌉ heads in each block; ties go to the lower head
/// index. `k = 1` keeps everything.
pub fn select_heads(
    hotness: &[(Block, usize, f64)],
    fraction: f64,
) -> Result<BTreeSet<(Block, usize)>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "head fraction {fraction} outside (0, 1]"
        )));
    }
    let mut selected = BTreeSet::new();
    for block in Block::ALL {
        let mut heads: Vec<(usize, f64)> = hotness
            .iter()
            .filter(|(b, _, _)| *b == block)
            .map(|(_, h, score)| (*h, *score))
            .collect();
        if heads.is_empty() {
            continue;
        }
        let take = ((fraction * heads.len() as f64).ceil() as usize).max(1);
        heads.sort_by(|a, b| {
            b.1.partial_cmp(&a.1)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.0.cmp(&b.0))
        });
        for (h, _) in heads.into_iter().take(take) {
            selected.insert((block, h));
        }
    }
    Ok(selected)
}

/// Resolve a policy into the concrete site selector used at one step,
/// given per-head hotness from a reference trace.
pub fn policy_selector(
    policy: &AttenuationPolicy,
    hotness: Option<&[(Block, usize, f64)]>,
) -> Result<SiteSelector> {
    policy.validate()?;
    let heads = match policy.head_mode {
        HeadMode::AllHeads => None,
        HeadMode::TopKHot { fraction } => {
            let hot = hotness.ok_or_else(|| {
                Error::Config("top-k-hot head mode needs hotness scores".into())
            })?;
            Some(select_heads(hot, fraction)?)
        }
    };
    Ok(SiteSelector { blocks: policy.blocks.clone(), heads })
}

/// The spike-attenuation interceptor: scales spike columns at the sites the
/// policy selects, gated by the step schedule.
pub struct AttenuationInterceptor {
    pub selector: SiteSelector,
    pub spikes: SpikeSet,
    pub alpha: f64,
    pub gate: f64,
}

impl crate::attention::LogitInterceptor for AttenuationInterceptor {
    fn selector(&self) -> &SiteSelector {
        &self.selector
    }
    fn transform(&self, logits: &Array2<f64>, _: &AttentionSite, _: usize) -> Array2<f64> {
        attenuate_logits_gated(logits, &self.spikes, self.alpha, self.gate)
    }
}
