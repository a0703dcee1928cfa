//! Procedural dataset with controlled duplication, plus the desk-scale
//! stand-in metrics. The renderer is the ground truth for alignment: the
//! classifier inverts it exactly, so renderer output always scores 1.

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayD, IxDyn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::guidance::RunReport;
use crate::model::{IMG_CHANNELS, IMG_SIZE};
use crate::store::ArrayStore;

pub const PIXELS: usize = IMG_CHANNELS * IMG_SIZE * IMG_SIZE;

/// Canonical render colors in [-1, 1] RGB. Synonyms map onto these.
const COLORS: [(&str, [f64; 3]); 8] = [
    ("red", [1.0, -1.0, -1.0]),
    ("green", [-1.0, 1.0, -1.0]),
    ("blue", [-1.0, -1.0, 1.0]),
    ("yellow", [1.0, 1.0, -1.0]),
    ("purple", [1.0, -1.0, 1.0]),
    ("orange", [1.0, 0.0, -1.0]),
    ("teal", [-1.0, 1.0, 1.0]),
    ("white", [1.0, 1.0, 1.0]),
];

const SHAPES: [&str; 5] = ["square", "circle", "cross", "stripes", "poster"];
const TAGS: usize = 32;
const BACKGROUND: [f64; 3] = [-1.0, -1.0, -1.0];

/// Canonical color for a color word, resolving synonyms.
pub fn canonical_color(word: &str) -> Option<&'static str> {
    match word {
        "crimson" => Some("red"),
        "emerald" => Some("green"),
        "azure" => Some("blue"),
        _ => COLORS.iter().map(|(n, _)| *n).find(|n| *n == word),
    }
}

fn color_rgb(name: &str) -> Option<[f64; 3]> {
    let canon = canonical_color(name)?;
    COLORS.iter().find(|(n, _)| *n == canon).map(|(_, c)| *c)
}

/// Geometry of one shape: where it paints, and which of those pixels carry
/// the prompt's color. They coincide except for the poster, whose interior
/// pattern is fixed and only the border ring takes the color.
fn shape_masks(shape: &str) -> Option<(Vec<(usize, usize)>, Vec<(usize, usize)>)> {
    let n = IMG_SIZE;
    let mut support = Vec::new();
    let mut colored = Vec::new();
    match shape {
        "square" => {
            for r in 4..12 {
                for c in 4..12 {
                    support.push((r, c));
                }
            }
            colored = support.clone();
        }
        "circle" => {
            for r in 0..n {
                for c in 0..n {
                    let dr = r as f64 - 7.5;
                    let dc = c as f64 - 7.5;
                    if dr * dr + dc * dc <= 5.5 * 5.5 {
                        support.push((r, c));
                    }
                }
            }
            colored = support.clone();
        }
        "cross" => {
            for r in 0..n {
                for c in 0..n {
                    let horiz = (6..10).contains(&r) && (2..14).contains(&c);
                    let vert = (6..10).contains(&c) && (2..14).contains(&r);
                    if horiz || vert {
                        support.push((r, c));
                    }
                }
            }
            colored = support.clone();
        }
        "stripes" => {
            for r in 0..n {
                if (r / 2) % 2 == 0 {
                    for c in 0..n {
                        support.push((r, c));
                    }
                }
            }
            colored = support.clone();
        }
        "poster" => {
            // 2-pixel frame takes the color; interior checkerboard is fixed.
            for r in 0..n {
                for c in 0..n {
                    if r < 2 || r >= n - 2 || c < 2 || c >= n - 2 {
                        support.push((r, c));
                        colored.push((r, c));
                    } else if (4..12).contains(&r) && (4..12).contains(&c) && (r + c) % 2 == 0 {
                        support.push((r, c));
                    }
                }
            }
        }
        _ => return None,
    }
    Some((support, colored))
}

fn parse_prompt(prompt: &str) -> Result<(String, String)> {
    let words: Vec<&str> = prompt.split_whitespace().collect();
    let color = words
        .iter()
        .find(|w| canonical_color(w).is_some())
        .ok_or_else(|| Error::InvalidArgument(format!("no color word in \"{prompt}\"")))?;
    let shape = words
        .iter()
        .find(|w| SHAPES.contains(w))
        .ok_or_else(|| Error::InvalidArgument(format!("no shape word in \"{prompt}\"")))?;
    Ok((color.to_string(), shape.to_string()))
}

/// Renders "[color] [shape] [caption-id]" to a (3, 16, 16) image in [-1, 1].
/// Caption-id words do not affect pixels.
pub fn render(prompt: &str) -> Result<ArrayD<f64>> {
    let (color, shape) = parse_prompt(prompt)?;
    let rgb = color_rgb(&color).unwrap();
    let (support, colored) = shape_masks(&shape).unwrap();
    let mut img = ArrayD::zeros(IxDyn(&[IMG_CHANNELS, IMG_SIZE, IMG_SIZE]));
    for ch in 0..IMG_CHANNELS {
        for r in 0..IMG_SIZE {
            for c in 0..IMG_SIZE {
                img[[ch, r, c]] = BACKGROUND[ch];
            }
        }
    }
    for &(r, c) in &support {
        // Poster interior cells paint white; they are support but not colored.
        for ch in 0..IMG_CHANNELS {
            img[[ch, r, c]] = 1.0;
        }
    }
    for &(r, c) in &colored {
        for ch in 0..IMG_CHANNELS {
            img[[ch, r, c]] = rgb[ch];
        }
    }
    Ok(img)
}

/// Rule-based inversion of the renderer: recovered (color, shape), or None
/// when no shape stands out from the background.
pub fn classify(image: &ArrayD<f64>) -> Option<(String, String)> {
    if image.shape() != [IMG_CHANNELS, IMG_SIZE, IMG_SIZE] {
        return None;
    }
    // Foreground = pixels far from the background color.
    let mut fg = vec![false; IMG_SIZE * IMG_SIZE];
    let mut fg_count = 0usize;
    for r in 0..IMG_SIZE {
        for c in 0..IMG_SIZE {
            let d = (0..IMG_CHANNELS)
                .map(|ch| (image[[ch, r, c]] - BACKGROUND[ch]).abs())
                .fold(0.0, f64::max);
            if d > 0.5 {
                fg[r * IMG_SIZE + c] = true;
                fg_count += 1;
            }
        }
    }
    if fg_count == 0 {
        return None;
    }
    let mut best: Option<(&str, f64)> = None;
    for shape in SHAPES {
        let (support, _) = shape_masks(shape).unwrap();
        let inter = support
            .iter()
            .filter(|&&(r, c)| fg[r * IMG_SIZE + c])
            .count();
        let union = support.len() + fg_count - inter;
        let jaccard = inter as f64 / union as f64;
        if best.map_or(true, |(_, j)| jaccard > j) {
            best = Some((shape, jaccard));
        }
    }
    let (shape, jaccard) = best?;
    if jaccard < 0.5 {
        return None;
    }
    let (_, colored) = shape_masks(shape).unwrap();
    let mut mean = [0.0; 3];
    for &(r, c) in &colored {
        for ch in 0..IMG_CHANNELS {
            mean[ch] += image[[ch, r, c]];
        }
    }
    for m in mean.iter_mut() {
        *m /= colored.len() as f64;
    }
    let color = COLORS
        .iter()
        .min_by(|a, b| {
            let da: f64 = (0..3).map(|i| (a.1[i] - mean[i]).powi(2)).sum();
            let db: f64 = (0..3).map(|i| (b.1[i] - mean[i]).powi(2)).sum();
            da.partial_cmp(&db).unwrap()
        })
        .map(|(n, _)| n.to_string())?;
    Some((color, shape.to_string()))
}

/// Fraction of prompt attributes (color, shape) the classifier recovers.
pub fn alignment_score(image: &ArrayD<f64>, prompt: &str) -> Result<f64> {
    let (want_color, want_shape) = parse_prompt(prompt)?;
    let want_color = canonical_color(&want_color).unwrap();
    match classify(image) {
        None => Ok(0.0),
        Some((color, shape)) => {
            let mut hits = 0;
            if color == want_color {
                hits += 1;
            }
            if shape == want_shape {
                hits += 1;
            }
            Ok(hits as f64 / 2.0)
        }
    }
}

// Patch grid for the similarity features: 4x4 spatial tiles of 4x4 pixels
// across all channels.
const PATCH: usize = 4;
const PATCH_DIM: usize = IMG_CHANNELS * PATCH * PATCH;

/// Structure feature vector: each tile keeps only its deviation from the
/// tile mean, then the whole vector is unit-normalized. Removing per-tile DC
/// makes the score copy-specific; two images sharing only a flat background
/// or the same coarse brightness layout stop correlating, while matching
/// edges and local texture still do.
fn patch_features(image: &ArrayD<f64>) -> Option<Array1<f64>> {
    let tiles = IMG_SIZE / PATCH;
    let mut out = Array1::zeros(PIXELS);
    let mut patch = [0.0f64; PATCH_DIM];
    for py in 0..tiles {
        for px in 0..tiles {
            let mut k = 0;
            for c in 0..IMG_CHANNELS {
                for y in 0..PATCH {
                    for x in 0..PATCH {
                        patch[k] = image[[c, py * PATCH + y, px * PATCH + x]];
                        k += 1;
                    }
                }
            }
            let mean = patch.iter().sum::<f64>() / PATCH_DIM as f64;
            let base = (py * tiles + px) * PATCH_DIM;
            for (i, v) in patch.iter().enumerate() {
                out[base + i] = v - mean;
            }
        }
    }
    let norm = out.iter().map(|v| v * v).sum::<f64>().sqrt();
    // Roundoff leaves piecewise-constant images with a tiny nonzero
    // residual; treat them as structure-free.
    if norm < 1e-9 {
        return None;
    }
    Some(out.mapv(|v| v / norm))
}

/// Max similarity to the training images: cosine of the DC-removed
/// structure features, maximized over the set. Structure-free inputs
/// score 0.
pub fn sim_score(generated: &ArrayD<f64>, train_set: &[ArrayD<f64>]) -> Result<f64> {
    if train_set.is_empty() {
        return Err(Error::InvalidArgument("empty reference set".into()));
    }
    let g = match patch_features(generated) {
        Some(g) => g,
        None => return Ok(0.0),
    };
    let mut best = -1.0f64;
    for t in train_set {
        if let Some(tv) = patch_features(t) {
            best = best.max(g.dot(&tv));
        }
    }
    Ok(best)
}

/// Precomputed references for repeated sim_score queries.
pub struct SimReference {
    rows: Array2<f64>,
}

impl SimReference {
    pub fn new(train_set: &[ArrayD<f64>]) -> Result<Self> {
        if train_set.is_empty() {
            return Err(Error::InvalidArgument("empty reference set".into()));
        }
        let normed: Vec<Array1<f64>> = train_set.iter().filter_map(patch_features).collect();
        let mut rows = Array2::zeros((normed.len(), PIXELS));
        for (i, v) in normed.iter().enumerate() {
            rows.row_mut(i).assign(v);
        }
        Ok(SimReference { rows })
    }

    pub fn score(&self, generated: &ArrayD<f64>) -> f64 {
        match patch_features(generated) {
            None => 0.0,
            Some(g) => {
                if self.rows.nrows() == 0 {
                    return 0.0;
                }
                self.rows.dot(&g).iter().copied().fold(-1.0, f64::max)
            }
        }
    }
}

/// Mean per-step conditional-minus-unconditional norm: the detection
/// statistic for memorized prompts.
pub fn wen_signal(report: &RunReport) -> f64 {
    if report.steps.is_empty() {
        return 0.0;
    }
    report.steps.iter().map(|s| s.wen_norm).sum::<f64>() / report.steps.len() as f64
}

const PROJECTION_SEED: u64 = 0x70726f6a;
pub const FEATURE_DIM: usize = 32;

fn projection_matrix() -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(PROJECTION_SEED);
    let scale = 1.0 / (PIXELS as f64).sqrt();
    Array2::from_shape_fn((FEATURE_DIM, PIXELS), |_| {
        Distribution::<f64>::sample(&StandardNormal, &mut rng) * scale
    })
}

/// Symmetric eigendecomposition by cyclic Jacobi rotations.
fn jacobi_eigh(a: &Array2<f64>) -> (Array1<f64>, Array2<f64>) {
    let n = a.nrows();
    let mut m = a.clone();
    let mut v: Array2<f64> = Array2::eye(n);
    for _ in 0..100 {
        let mut off = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                off += m[[i, j]] * m[[i, j]];
            }
        }
        if off < 1e-24 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                if m[[p, q]].abs() < 1e-18 {
                    continue;
                }
                let theta = (m[[q, q]] - m[[p, p]]) / (2.0 * m[[p, q]]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[[k, p]];
                    let mkq = m[[k, q]];
                    m[[k, p]] = c * mkp - s * mkq;
                    m[[k, q]] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[[p, k]];
                    let mqk = m[[q, k]];
                    m[[p, k]] = c * mpk - s * mqk;
                    m[[q, k]] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let vkp = v[[k, p]];
                    let vkq = v[[k, q]];
                    v[[k, p]] = c * vkp - s * vkq;
                    v[[k, q]] = s * vkp + c * vkq;
                }
            }
        }
    }
    let eig = Array1::from_shape_fn(n, |i| m[[i, i]]);
    (eig, v)
}

/// Principal square root of a symmetric PSD matrix (negative eigenvalues
/// from roundoff are clamped to zero).
fn sym_sqrt(a: &Array2<f64>) -> Array2<f64> {
    let (eig, v) = jacobi_eigh(a);
    let sq = eig.mapv(|e| e.max(0.0).sqrt());
    let vs = &v * &sq.view().insert_axis(ndarray::Axis(0));
    vs.dot(&v.t())
}

fn gaussian_fit(features: &Array2<f64>) -> (Array1<f64>, Array2<f64>) {
    let n = features.nrows() as f64;
    let mu = features.mean_axis(ndarray::Axis(0)).unwrap();
    let centered = features - &mu.view().insert_axis(ndarray::Axis(0));
    let mut cov = centered.t().dot(&centered) / n;
    for i in 0..cov.nrows() {
        cov[[i, i]] += 1e-6;
    }
    (mu, cov)
}

/// Fréchet distance between Gaussian fits of a fixed 32-dim random
/// projection of each image set.
pub fn distribution_score(generated: &[ArrayD<f64>], reference: &[ArrayD<f64>]) -> Result<f64> {
    if generated.len() < 16 || reference.len() < 16 {
        return Err(Error::InvalidArgument(format!(
            "need at least 16 images per set, got {} and {}",
            generated.len(),
            reference.len()
        )));
    }
    let proj = projection_matrix();
    let feats = |set: &[ArrayD<f64>]| -> Result<Array2<f64>> {
        let mut out = Array2::zeros((set.len(), FEATURE_DIM));
        for (i, img) in set.iter().enumerate() {
            if img.len() != PIXELS {
                return Err(Error::shape("distribution_score", &[PIXELS], img.shape()));
            }
            let flat = Array1::from_iter(img.iter().copied());
            out.row_mut(i).assign(&proj.dot(&flat));
        }
        Ok(out)
    };
    let (mu1, cov1) = gaussian_fit(&feats(generated)?);
    let (mu2, cov2) = gaussian_fit(&feats(reference)?);
    let dmu = &mu1 - &mu2;
    let mean_term = dmu.dot(&dmu);
    let s1 = sym_sqrt(&cov1);
    let inner = s1.dot(&cov2).dot(&s1);
    let cross = sym_sqrt(&inner);
    let trace = |m: &Array2<f64>| (0..m.nrows()).map(|i| m[[i, i]]).sum::<f64>();
    let score = mean_term + trace(&cov1) + trace(&cov2) - 2.0 * trace(&cross);
    Ok(score.max(0.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    /// Unique base pairs before duplication.
    pub base_size: usize,
    /// How many base prompts get duplicated (verbatim setting).
    pub memorized_count: usize,
    /// Total copies of each memorized pair.
    pub copies: usize,
    /// Copy count at or above which a prompt counts as memorized.
    pub duplication_threshold: usize,
    /// Template setting: add trigger-phrase variants over one template.
    pub template_variants: usize,
    pub seed: u64,
}

impl DatasetSpec {
    pub fn verbatim_default(seed: u64) -> Self {
        DatasetSpec {
            base_size: 256,
            memorized_count: 8,
            copies: 64,
            duplication_threshold: 8,
            template_variants: 0,
            seed,
        }
    }

    pub fn template_default(seed: u64) -> Self {
        DatasetSpec {
            base_size: 256,
            memorized_count: 0,
            copies: 1,
            duplication_threshold: 8,
            template_variants: 64,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemplateGroup {
    pub trigger: String,
    pub prompts: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyDataset {
    pub pairs: Vec<(String, ArrayD<f64>)>,
    pub duplication_map: BTreeMap<String, usize>,
    pub memorized_prompts: Vec<String>,
    pub template_groups: Vec<TemplateGroup>,
    /// Base prompts excluded from training, for held-out evaluation.
    pub held_out_prompts: Vec<String>,
}

pub fn make_dataset(spec: &DatasetSpec) -> Result<ToyDataset> {
    if spec.base_size == 0 || spec.copies == 0 || spec.duplication_threshold == 0 {
        return Err(Error::InvalidArgument(
            "base_size, copies, and duplication_threshold must be positive".into(),
        ));
    }
    if spec.memorized_count > spec.base_size {
        return Err(Error::InvalidArgument(
            "more memorized prompts than base pairs".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    // Hold out one whole color and one whole shape; the held-out prompts
    // combine the two, so neither of their content words is ever trained.
    // Caption-id words are pixel-inert and images sharing a color or a shape
    // correlate strongly, so holding out anything less leaves every held-out
    // image aliased by a near-identical training image (or renderable from
    // trained tokens) and the "non-memorized" control is not novel at all.
    let mut colors: Vec<usize> = (0..COLORS.len()).collect();
    colors.shuffle(&mut rng);
    let held_color = colors.pop().expect("palette is non-empty");
    let mut shapes: Vec<usize> = (0..4).collect();
    shapes.shuffle(&mut rng);
    let held_shape = shapes.pop().expect("shape list is non-empty");
    let mut held_out_prompts: Vec<String> = (0..TAGS)
        .map(|t| format!("{} {} tag{t}", COLORS[held_color].0, SHAPES[held_shape]))
        .collect();
    held_out_prompts.shuffle(&mut rng);
    held_out_prompts.truncate(32);
    let mut space: Vec<String> = colors
        .iter()
        .flat_map(|&c| {
            shapes.iter().flat_map(move |&s| {
                (0..TAGS).map(move |t| format!("{} {} tag{t}", COLORS[c].0, SHAPES[s]))
            })
        })
        .collect();
    if spec.base_size > space.len() {
        return Err(Error::InvalidArgument(format!(
            "base_size {} exceeds the {} prompts left after the held-out split",
            spec.base_size,
            space.len()
        )));
    }
    space.shuffle(&mut rng);
    let base: Vec<String> = space[..spec.base_size].to_vec();

    let mut pairs: Vec<(String, ArrayD<f64>)> = Vec::new();
    let mut duplication_map = BTreeMap::new();
    for (i, prompt) in base.iter().enumerate() {
        let img = render(prompt)?;
        let copies = if i < spec.memorized_count { spec.copies } else { 1 };
        for _ in 0..copies {
            pairs.push((prompt.clone(), img.clone()));
        }
        duplication_map.insert(prompt.clone(), copies);
    }

    let mut template_groups = Vec::new();
    if spec.template_variants > 0 {
        // Variants share the poster template; only the frame color and the
        // (pixel-inert) caption word vary.
        let mut variants: Vec<String> = Vec::new();
        for &c in &colors {
            for tag in 0..TAGS {
                variants.push(format!("{} poster tag{tag}", COLORS[c].0));
            }
        }
        if spec.template_variants > variants.len() {
            return Err(Error::InvalidArgument(format!(
                "at most {} template variants available",
                variants.len()
            )));
        }
        variants.shuffle(&mut rng);
        variants.truncate(spec.template_variants);
        variants.sort();
        for prompt in &variants {
            let img = render(prompt)?;
            pairs.push((prompt.clone(), img.clone()));
            duplication_map.insert(prompt.clone(), 1);
        }
        template_groups.push(TemplateGroup {
            trigger: "poster".into(),
            prompts: variants,
        });
    }

    let memorized_prompts: Vec<String> = base
        .iter()
        .filter(|p| duplication_map[*p] >= spec.duplication_threshold)
        .cloned()
        .collect();

    Ok(ToyDataset {
        pairs,
        duplication_map,
        memorized_prompts,
        template_groups,
        held_out_prompts,
    })
}

impl ToyDataset {
    /// Prompts evaluated as memorized: duplicated pairs plus template-group
    /// members (template memorization has no per-prompt duplication).
    pub fn evaluation_prompts(&self) -> Vec<String> {
        let mut out = self.memorized_prompts.clone();
        for g in &self.template_groups {
            out.extend(g.prompts.iter().cloned());
        }
        out
    }

    pub fn training_images(&self) -> Vec<ArrayD<f64>> {
        let mut seen = std::collections::BTreeSet::new();
        let mut out = Vec::new();
        for (p, img) in &self.pairs {
            if seen.insert(p.clone()) {
                out.push(img.clone());
            }
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut store = ArrayStore::new();
        let mut seen: BTreeMap<String, usize> = BTreeMap::new();
        let mut order: Vec<(String, usize)> = Vec::new();
        for (prompt, img) in &self.pairs {
            let next = seen.len();
            let idx = *seen.entry(prompt.clone()).or_insert(next);
            if idx == next {
                store.insert(format!("img{idx}"), img.clone());
            }
            order.push((prompt.clone(), idx));
        }
        let manifest = DatasetManifest {
            schema_version: 1,
            pairs: order,
            duplication_map: self.duplication_map.clone(),
            memorized_prompts: self.memorized_prompts.clone(),
            template_groups: self.template_groups.clone(),
            held_out_prompts: self.held_out_prompts.clone(),
        };
        let sidecar = toml::to_string_pretty(&manifest)
            .map_err(|e| Error::Serialization(e.to_string()))?;
        store.save(path)?;
        std::fs::write(path.with_extension("manifest.toml"), sidecar)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<ToyDataset> {
        let store = ArrayStore::load(path)?;
        let text = std::fs::read_to_string(path.with_extension("manifest.toml"))?;
        let manifest: DatasetManifest =
            toml::from_str(&text).map_err(|e| Error::Serialization(e.to_string()))?;
        let mut pairs = Vec::with_capacity(manifest.pairs.len());
        for (prompt, idx) in manifest.pairs {
            let img = store.get(&format!("img{idx}"))?.clone();
            pairs.push((prompt, img));
        }
        Ok(ToyDataset {
            pairs,
            duplication_map: manifest.duplication_map,
            memorized_prompts: manifest.memorized_prompts,
            template_groups: manifest.template_groups,
            held_out_prompts: manifest.held_out_prompts,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct DatasetManifest {
    schema_version: u32,
    pairs: Vec<(String, usize)>,
    duplication_map: BTreeMap<String, usize>,
    memorized_prompts: Vec<String>,
    template_groups: Vec<TemplateGroup>,
    held_out_prompts: Vec<String>,
}

/// One run's metric triple: similarity to training data, prompt alignment,
/// distribution distance (the latter filled at set level).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub sim: f64,
    pub align: f64,
    pub dist: f64,
}
