//! Comparison mitigation methods, each reduced to its published essence and
//! run through the same generation interface as the main method.

use std::collections::BTreeMap;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attention::{AttentionSite, LogitInterceptor, SiteSelector};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::text::{detokenize, tokenize, PromptTokens, L_MAX};

/// Insert `k` random vocabulary tokens at random positions between BOT and
/// EOT. Deterministic per seed.
pub fn rta(tokens: &PromptTokens, k: usize, vocab: &crate::text::Vocab, seed: u64) -> Result<PromptTokens> {
    let content_len = tokens.eot_pos - 1;
    if content_len + k > L_MAX - 2 {
        return Err(Error::PromptOverflow(format!(
            "{k} inserted tokens push the prompt past {} content slots",
            L_MAX - 2
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut content: Vec<usize> = tokens.ids[1..tokens.eot_pos].to_vec();
    let word_ids: Vec<usize> = (3..vocab.size()).collect();
    for _ in 0..k {
        let word = word_ids[rng.gen_range(0..word_ids.len())];
        let pos = rng.gen_range(0..=content.len());
        content.insert(pos, word);
    }
    let mut ids = Vec::with_capacity(L_MAX);
    ids.push(crate::text::BOT_ID);
    ids.extend_from_slice(&content);
    let eot_pos = ids.len();
    ids.push(crate::text::EOT_ID);
    ids.resize(L_MAX, crate::text::PAD_ID);
    Ok(PromptTokens { ids, bot_pos: 0, eot_pos })
}

/// ε̂ = ε_∅ + s·γ·(ε_cond − ε_∅): classifier-free guidance with the
/// conditional signal scaled down by γ ∈ [0, 1].
pub fn wen_scale_compose(
    eps_uncond: &ndarray::ArrayD<f64>,
    eps_cond: &ndarray::ArrayD<f64>,
    s: f64,
    gamma: f64,
) -> Result<ndarray::ArrayD<f64>> {
    if !(0.0..=1.0).contains(&gamma) {
        return Err(Error::InvalidArgument(format!("gamma = {gamma} outside [0, 1]")));
    }
    crate::guidance::cfg_compose(eps_uncond, eps_cond, s * gamma)
}

/// Masks cross-attention at EOT and padding (logits to −∞) and adds a bias
/// to the BOT column, at every site.
pub struct RenMaskInterceptor {
    selector: SiteSelector,
    bot_pos: usize,
    eot_pos: usize,
    bot_boost: f64,
}

impl RenMaskInterceptor {
    pub fn new(tokens: &PromptTokens, bot_boost: f64) -> Result<Self> {
        if bot_boost < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "bot boost {bot_boost} must be non-negative"
            )));
        }
        Ok(RenMaskInterceptor {
            selector: SiteSelector::all_blocks(),
            bot_pos: tokens.bot_pos,
            eot_pos: tokens.eot_pos,
            bot_boost,
        })
    }
}

impl LogitInterceptor for RenMaskInterceptor {
    fn selector(&self) -> &SiteSelector {
        &self.selector
    }

    fn transform(&self, logits: &Array2<f64>, _: &AttentionSite, _: usize) -> Array2<f64> {
        let mut out = logits.clone();
        for mut row in out.rows_mut() {
            for i in self.eot_pos..row.len() {
                row[i] = f64::NEG_INFINITY;
            }
            row[self.bot_pos] += self.bot_boost;
        }
        out
    }
}

/// Word-for-word synonym substitution used to build the semantic positive
/// target. Every content word must have a mapping (identity by default).
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParaphraseTable {
    pub synonyms: BTreeMap<String, String>,
}

impl ParaphraseTable {
    /// The toy renderer's color synonyms, in both directions.
    pub fn default_toy() -> Self {
        let pairs = [
            ("red", "crimson"),
            ("green", "emerald"),
            ("blue", "azure"),
        ];
        let mut synonyms = BTreeMap::new();
        for (a, b) in pairs {
            synonyms.insert(a.to_string(), b.to_string());
            synonyms.insert(b.to_string(), a.to_string());
        }
        ParaphraseTable { synonyms }
    }

    pub fn apply(&self, prompt: &str) -> String {
        prompt
            .split_whitespace()
            .map(|w| self.synonyms.get(w).map_or(w, String::as_str))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

/// Tokens of the paraphrased prompt, the conditioning for the positive
/// stream in the semantic variant.
pub fn semantic_positive_tokens(
    tokens: &PromptTokens,
    table: &ParaphraseTable,
    model: &Model,
) -> Result<PromptTokens> {
    let prompt = detokenize(tokens, &model.vocab);
    let para = table.apply(&prompt);
    tokenize(&para, &model.vocab)
}
