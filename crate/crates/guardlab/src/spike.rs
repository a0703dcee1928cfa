//! Statistical detection of memorization-critical token positions.
//!
//! A token is flagged when its max-over-queries attention mass is a Z-score
//! outlier among the prompt's tokens. Note the hard ceiling: with n token
//! positions, a single outlier's population Z-score cannot exceed √(n−1)
//! (≈ 2.65 at n = 8), so thresholds must be chosen with the sequence length
//! in mind; the sweep covers τ below that ceiling.

use std::collections::BTreeSet;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::attention::{Block, SiteSelector, TraceEntry};
use crate::error::{Error, Result};

/// Per-token max-over-queries attention mass, aggregated over sites.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenMassProfile {
    pub m: Vec<f64>,
}

/// Spike positions for one prompt at one step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpikeSet {
    pub positions: BTreeSet<usize>,
    pub zscores: Vec<f64>,
    pub step: usize,
    pub tau: f64,
}

impl SpikeSet {
    pub fn empty(step: usize, tau: f64) -> Self {
        SpikeSet { positions: BTreeSet::new(), zscores: Vec::new(), step, tau }
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn contains(&self, pos: usize) -> bool {
        self.positions.contains(&pos)
    }
}

/// Site-aggregated token mass. Heads within a (block, layer) group share a
/// query grid and are averaged before the max over queries; groups with
/// different grids are then averaged (a plain mean over every selected
/// entry is ill-defined across blocks whose query counts differ).
pub fn token_max_mass(entries: &[&TraceEntry], selector: &SiteSelector) -> Result<TokenMassProfile> {
    let selected: Vec<&TraceEntry> = entries
        .iter()
        .copied()
        .filter(|e| selector.matches(&e.site))
        .collect();
    if selected.is_empty() {
        return Err(Error::Config("site policy selects no trace entries".into()));
    }
    let l = selected[0].weights.ncols();
    let mut groups: Vec<((Block, usize), Array2<f64>, usize)> = Vec::new();
    for e in &selected {
        if e.weights.ncols() != l {
            return Err(Error::shape("token_max_mass", &[l], &[e.weights.ncols()]));
        }
        let key = (e.site.block, e.site.layer_index);
        match groups.iter_mut().find(|(k, _, _)| *k == key) {
            Some((_, acc, n)) => {
                if acc.dim() != e.weights.dim() {
                    return Err(Error::shape(
                        "token_max_mass group",
                        &[acc.nrows(), acc.ncols()],
                        &[e.weights.nrows(), e.weights.ncols()],
                    ));
                }
                *acc += &e.weights;
                *n += 1;
            }
            None => groups.push((key, e.weights.clone(), 1)),
        }
    }
    let mut m = vec![0.0; l];
    for (_, acc, n) in &groups {
        let mean = acc.mapv(|v| v / *n as f64);
        for i in 0..l {
            let col_max = mean
                .column(i)
                .iter()
                .cloned()
                .fold(f64::NEG_INFINITY, f64::max);
            m[i] += col_max;
        }
    }
    let ng = groups.len() as f64;
    for v in &mut m {
        *v /= ng;
    }
    Ok(TokenMassProfile { m })
}

/// Z_i = (M_i − μ)/σ with population σ; a degenerate spread (σ < 1e-12)
/// yields all zeros.
pub fn zscores(profile: &TokenMassProfile) -> Vec<f64> {
    let n = profile.m.len() as f64;
    let mu = profile.m.iter().sum::<f64>() / n;
    let var = profile.m.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / n;
    let sigma = var.sqrt();
    if sigma < 1e-12 {
        return vec![0.0; profile.m.len()];
    }
    profile.m.iter().map(|v| (v - mu) / sigma).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detector {
    pub tau: f64,
    pub selector: SiteSelector,
    /// Force EOT into the detected set regardless of its Z-score.
    /// Off by default; the detected set may still include EOT on merit.
    pub include_eot_floor: bool,
}

impl Default for Detector {
    fn default() -> Self {
        Detector {
            tau: 3.0,
            selector: SiteSelector::blocks([Block::Down, Block::Mid]),
            include_eot_floor: false,
        }
    }
}

impl Detector {
    /// Flag positions with Z strictly above τ; the boundary Z = τ is out.
    pub fn detect(
        &self,
        entries: &[&TraceEntry],
        step: usize,
        eot_pos: Option<usize>,
    ) -> Result<SpikeSet> {
        let profile = token_max_mass(entries, &self.selector)?;
        let z = zscores(&profile);
        let mut positions: BTreeSet<usize> = z
            .iter()
            .enumerate()
            .filter(|(_, &zi)| zi > self.tau)
            .map(|(i, _)| i)
            .collect();
        if self.include_eot_floor {
            if let Some(e) = eot_pos {
                positions.insert(e);
            }
        }
        Ok(SpikeSet { positions, zscores: z, step, tau: self.tau })
    }
}
