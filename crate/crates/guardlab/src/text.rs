//! Prompt tokenization and the tiny text encoder.
//!
//! Prompts come from a closed vocabulary of colors, shapes, and caption-id
//! words. Every token sequence is padded to [`L_MAX`] with explicit BOT,
//! EOT, and padding positions, and the encoder is causal so the EOT
//! embedding summarizes the whole prompt.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use ndarray::{Array2, ArrayD, IxDyn};

/// Global token-sequence length shared with all attention shapes.
pub const L_MAX: usize = 8;
/// Token embedding width.
pub const D_TEXT: usize = 32;

pub const PAD_ID: usize = 0;
pub const BOT_ID: usize = 1;
pub const EOT_ID: usize = 2;

/// Closed toy vocabulary. Word ids start after the three specials.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct Vocab {
    words: Vec<String>,
}

impl Default for Vocab {
    fn default() -> Self {
        let mut words: Vec<String> = [
            // colors
            "red", "green", "blue", "yellow", "purple", "orange", "teal", "white",
            // color synonyms (render identically to their base color)
            "crimson", "emerald", "azure",
            // shapes
            "square", "circle", "cross", "stripes", "poster",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        // Caption-id words keying duplicated pairs.
        for t in 0..32 {
            words.push(format!("tag{t}"));
        }
        Vocab { words }
    }
}

impl Vocab {
    pub fn size(&self) -> usize {
        self.words.len() + 3
    }

    pub fn id(&self, word: &str) -> Result<usize> {
        self.words
            .iter()
            .position(|w| w == word)
            .map(|i| i + 3)
            .ok_or_else(|| Error::UnknownWord { word: word.to_string() })
    }

    pub fn word(&self, id: usize) -> Option<&str> {
        match id {
            PAD_ID => Some("<pad>"),
            BOT_ID => Some("<bot>"),
            EOT_ID => Some("<eot>"),
            _ => self.words.get(id - 3).map(String::as_str),
        }
    }

    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.words.iter().map(String::as_str)
    }
}

/// Fixed-length token sequence with marked structural positions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTokens {
    pub ids: Vec<usize>,
    pub bot_pos: usize,
    pub eot_pos: usize,
}

impl PromptTokens {
    pub fn pad_positions(&self) -> impl Iterator<Item = usize> {
        self.eot_pos + 1..L_MAX
    }

    pub fn content_positions(&self) -> impl Iterator<Item = usize> {
        1..self.eot_pos
    }
}

pub fn tokenize(prompt: &str, vocab: &Vocab) -> Result<PromptTokens> {
    let words: Vec<&str> = prompt.split_whitespace().collect();
    if words.len() > L_MAX - 2 {
        return Err(Error::PromptOverflow(format!(
            "{} words exceed the {} content slots",
            words.len(),
            L_MAX - 2
        )));
    }
    let mut ids = Vec::with_capacity(L_MAX);
    ids.push(BOT_ID);
    for w in &words {
        ids.push(vocab.id(w)?);
    }
    let eot_pos = ids.len();
    ids.push(EOT_ID);
    ids.resize(L_MAX, PAD_ID);
    Ok(PromptTokens { ids, bot_pos: 0, eot_pos })
}

pub fn detokenize(tokens: &PromptTokens, vocab: &Vocab) -> String {
    tokens.ids[1..tokens.eot_pos]
        .iter()
        .filter_map(|&id| vocab.word(id))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Parameter handles for the encoder: embedding table, learned positions,
/// one causal self-attention layer with a residual connection.
#[derive(Debug, Clone, Copy)]
pub struct TextEncoderVars {
    pub table: Var,
    pub pos: Var,
    pub wq: Var,
    pub wk: Var,
    pub wv: Var,
    pub wo: Var,
}

/// Names of the encoder parameters inside a checkpoint, with their shapes.
pub fn text_param_shapes(vocab_size: usize) -> Vec<(&'static str, Vec<usize>)> {
    vec![
        ("text/table", vec![vocab_size, D_TEXT]),
        ("text/pos", vec![L_MAX, D_TEXT]),
        ("text/wq", vec![D_TEXT, D_TEXT]),
        ("text/wk", vec![D_TEXT, D_TEXT]),
        ("text/wv", vec![D_TEXT, D_TEXT]),
        ("text/wo", vec![D_TEXT, D_TEXT]),
    ]
}

impl TextEncoderVars {
    /// Encode a batch of prompts into `(B, L_MAX, D_TEXT)`.
    pub fn encode_batch(&self, tape: &mut Tape, prompts: &[&PromptTokens]) -> Var {
        let b = prompts.len();
        let mut flat_ids = Vec::with_capacity(b * L_MAX);
        for p in prompts {
            flat_ids.extend_from_slice(&p.ids);
        }
        let e = tape.embed(self.table, &flat_ids);
        let e = tape.reshape(e, &[b, L_MAX, D_TEXT]);
        let e = tape.add_bcast0(e, self.pos);

        let q = tape.linear(e, self.wq, None);
        let k = tape.linear(e, self.wk, None);
        let v = tape.linear(e, self.wv, None);
        let logits = tape.batch_matmul_nt(q, k);
        let logits = tape.scale(logits, 1.0 / (D_TEXT as f64).sqrt());
        let logits = tape.add_const(logits, &causal_mask());
        let a = tape.softmax_last(logits);
        let o = tape.batch_matmul(a, v);
        let o = tape.linear(o, self.wo, None);
        tape.add(e, o)
    }

    /// Convenience single-prompt encode on a throwaway tape.
    pub fn encode_one(&self, tape: &mut Tape, prompt: &PromptTokens) -> Array2<f64> {
        let out = self.encode_batch(tape, &[prompt]);
        tape.value(out)
            .to_shape((L_MAX, D_TEXT))
            .unwrap()
            .to_owned()
    }
}

/// Additive causal mask: position i may attend to positions ≤ i.
fn causal_mask() -> ArrayD<f64> {
    let mut m = ArrayD::zeros(IxDyn(&[L_MAX, L_MAX]));
    for i in 0..L_MAX {
        for j in (i + 1)..L_MAX {
            m[[i, j]] = f64::NEG_INFINITY;
        }
    }
    m
}
