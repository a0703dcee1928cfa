//! Cross-attention with a pre-softmax logit-interception seam.
//!
//! Every mitigation method in this crate edits attention the same way: a
//! [`LogitInterceptor`] picks sites and rewrites raw logits before the
//! softmax. Post-softmax edits are deliberately not offered.

use std::collections::BTreeSet;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{matmul, matmul_nt, softmax_rows};
use crate::store::ArrayStore;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Block {
    Down,
    Mid,
    Up,
}

impl Block {
    pub const ALL: [Block; 3] = [Block::Down, Block::Mid, Block::Up];

    pub fn index(self) -> usize {
        match self {
            Block::Down => 0,
            Block::Mid => 1,
            Block::Up => 2,
        }
    }
}

impl std::fmt::Display for Block {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Block::Down => "down",
            Block::Mid => "mid",
            Block::Up => "up",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct AttentionSite {
    pub block: Block,
    pub layer_index: usize,
    pub head_index: usize,
}

/// Which sites an interceptor acts on. `heads = None` means every head in
/// the selected blocks.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SiteSelector {
    pub blocks: BTreeSet<Block>,
    pub heads: Option<BTreeSet<(Block, usize)>>,
}

impl SiteSelector {
    pub fn all_blocks() -> Self {
        SiteSelector { blocks: Block::ALL.into_iter().collect(), heads: None }
    }

    pub fn blocks(blocks: impl IntoIterator<Item = Block>) -> Self {
        SiteSelector { blocks: blocks.into_iter().collect(), heads: None }
    }

    pub fn matches(&self, site: &AttentionSite) -> bool {
        self.blocks.contains(&site.block)
            && self
                .heads
                .as_ref()
                .map_or(true, |h| h.contains(&(site.block, site.head_index)))
    }

    /// Reject selectors naming sites the backbone does not have.
    pub fn validate(&self, existing: &[AttentionSite]) -> Result<()> {
        for b in &self.blocks {
            if !existing.iter().any(|s| s.block == *b) {
                return Err(Error::Config(format!("selector names absent block {b}")));
            }
        }
        if let Some(heads) = &self.heads {
            for (b, h) in heads {
                let ok = existing
                    .iter()
                    .any(|s| s.block == *b && s.head_index == *h);
                if !ok {
                    return Err(Error::Config(format!(
                        "selector names absent head {h} in block {b}"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Pre-softmax logit transform. Must be pure and shape-preserving.
pub trait LogitInterceptor {
    fn selector(&self) -> &SiteSelector;
    fn transform(&self, logits: &Array2<f64>, site: &AttentionSite, step: usize) -> Array2<f64>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceEntry {
    pub step: usize,
    pub site: AttentionSite,
    pub logits: Array2<f64>,
    pub weights: Array2<f64>,
}

/// Per-(step, site) record of logits and post-softmax weights.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AttentionTrace {
    pub entries: Vec<TraceEntry>,
}

impl AttentionTrace {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, entry: TraceEntry) {
        self.entries.push(entry);
    }

    pub fn at_step(&self, step: usize) -> impl Iterator<Item = &TraceEntry> {
        self.entries.iter().filter(move |e| e.step == step)
    }

    pub fn steps(&self) -> Vec<usize> {
        let mut s: Vec<usize> = self.entries.iter().map(|e| e.step).collect();
        s.sort_unstable();
        s.dedup();
        s
    }

    fn key(entry: &TraceEntry, kind: &str) -> String {
        format!(
            "step{}/block{}/layer{}/head{}/{kind}",
            entry.step,
            entry.site.block.index(),
            entry.site.layer_index,
            entry.site.head_index
        )
    }

    pub fn to_store(&self) -> ArrayStore {
        let mut store = ArrayStore::new();
        for e in &self.entries {
            store.insert(Self::key(e, "logits"), e.logits.clone().into_dyn());
            store.insert(Self::key(e, "weights"), e.weights.clone().into_dyn());
        }
        store
    }

    pub fn from_store(store: &ArrayStore) -> Result<Self> {
        let mut trace = AttentionTrace::new();
        for name in store.names() {
            let Some(rest) = name.strip_suffix("/logits") else { continue };
            let (step, site) = parse_key(rest)?;
            let logits = store.get(name)?.clone();
            let weights = store.get(&format!("{rest}/weights"))?.clone();
            let to2 = |a: ndarray::ArrayD<f64>, what| {
                a.into_dimensionality::<ndarray::Ix2>()
                    .map_err(|_| Error::Serialization(format!("{what} at {rest} is not 2-d")))
            };
            trace.push(TraceEntry {
                step,
                site,
                logits: to2(logits, "logits")?,
                weights: to2(weights, "weights")?,
            });
        }
        trace.entries.sort_by_key(|e| (e.step, e.site));
        Ok(trace)
    }
}

fn parse_key(key: &str) -> Result<(usize, AttentionSite)> {
    let bad = || Error::Serialization(format!("malformed trace key {key:?}"));
    let parts: Vec<&str> = key.split('/').collect();
    if parts.len() != 4 {
        return Err(bad());
    }
    let num = |s: &str, prefix: &str| -> Result<usize> {
        s.strip_prefix(prefix)
            .and_then(|v| v.parse().ok())
            .ok_or_else(bad)
    };
    let step = num(parts[0], "step")?;
    let block = match num(parts[1], "block")? {
        0 => Block::Down,
        1 => Block::Mid,
        2 => Block::Up,
        _ => return Err(bad()),
    };
    let layer_index = num(parts[2], "layer")?;
    let head_index = num(parts[3], "head")?;
    Ok((step, AttentionSite { block, layer_index, head_index }))
}

/// `Q·Kᵀ/√d_k` with `Q = H·W_Q`, `K = E·W_K`.
pub fn attention_logits(
    h: &Array2<f64>,
    e: &Array2<f64>,
    wq: &Array2<f64>,
    wk: &Array2<f64>,
    d_k: usize,
) -> Result<Array2<f64>> {
    if h.ncols() != wq.nrows() {
        return Err(Error::shape("attention_logits queries", &[h.ncols(), d_k], &[wq.nrows(), wq.ncols()]));
    }
    if e.ncols() != wk.nrows() {
        return Err(Error::shape("attention_logits keys", &[e.ncols(), d_k], &[wk.nrows(), wk.ncols()]));
    }
    if wq.ncols() != d_k || wk.ncols() != d_k {
        return Err(Error::InvalidArgument(format!(
            "projection widths {} / {} do not match d_k = {d_k}",
            wq.ncols(),
            wk.ncols()
        )));
    }
    let q = matmul(h, wq);
    let k = matmul(e, wk);
    let mut logits = matmul_nt(&q, &k);
    let scale = 1.0 / (d_k as f64).sqrt();
    logits.mapv_inplace(|v| v * scale);
    Ok(logits)
}

/// Softmax-attend over `v`, routing logits through the interceptor when its
/// selector matches this site.
pub fn attend(
    logits: &Array2<f64>,
    v: &Array2<f64>,
    interceptor: Option<&dyn LogitInterceptor>,
    site: &AttentionSite,
    step: usize,
) -> Result<(Array2<f64>, Array2<f64>)> {
    if logits.ncols() != v.nrows() {
        return Err(Error::shape("attend values", &[logits.ncols()], &[v.nrows()]));
    }
    let effective = match interceptor {
        Some(ic) if ic.selector().matches(site) => {
            let out = ic.transform(logits, site, step);
            if out.dim() != logits.dim() {
                return Err(Error::ContractViolation(format!(
                    "interceptor changed logit shape {:?} -> {:?}",
                    logits.dim(),
                    out.dim()
                )));
            }
            out
        }
        _ => logits.clone(),
    };
    let weights = softmax_rows(&effective);
    let out = matmul(&weights, v);
    Ok((out, weights))
}
