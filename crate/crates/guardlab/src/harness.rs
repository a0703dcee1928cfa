//! Experiment orchestration: sweeps over mitigation configs, the
//! budgeted selection rule, attention-mass trajectories, and the
//! non-memorized robustness comparison.
//!
//! Sweep records are content-addressed by config hash and written
//! atomically, so re-running a sweep skips finished points.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::attention::{AttentionTrace, Block, SiteSelector, TraceEntry};
use crate::error::{Error, Result};
use crate::guidance::{generate, GuidanceConfig, Method, RunSpec};
use crate::lab::{alignment_score, distribution_score, wen_signal, SimReference};
use crate::model::Model;
use crate::spike::token_max_mass;

/// Fixed by the evaluation protocol: four generations per prompt.
pub const GENERATIONS_PER_PROMPT: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub method: Method,
    pub guidance: GuidanceConfig,
}

impl SweepPoint {
    /// Canonical serialized form; selection ties break on this string.
    pub fn canonical(&self) -> String {
        serde_json::to_string(self).expect("sweep point serializes")
    }

    pub fn config_id(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.canonical().as_bytes());
        let digest = h.finalize();
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub prompts: Vec<String>,
    pub generations_per_prompt: usize,
    pub base_seed: u64,
    pub points: Vec<SweepPoint>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PromptMetrics {
    pub prompt: String,
    pub sim_mean: f64,
    pub sim_ci: f64,
    pub align_mean: f64,
    pub align_ci: f64,
    pub wen_mean: f64,
    /// Fraction of denoising steps with a non-empty spike set.
    pub spike_fraction: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub schema_version: u32,
    pub config_id: String,
    pub point: SweepPoint,
    pub per_prompt: Vec<PromptMetrics>,
    pub sim: f64,
    pub align: f64,
    /// Computed over the entire generation set without a confidence
    /// interval; absent when either set is below the 16-image minimum.
    pub dist: Option<f64>,
    pub spike_fraction: f64,
}

/// mean ± 1.96 · s/√n half-width; zero for fewer than two samples.
pub fn ci_half_width(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    1.96 * (var.sqrt() / (n as f64).sqrt())
}

fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.iter().sum::<f64>() / values.len() as f64
}

/// Seed for one generation, derived from stable strings so both sweep
/// resumption and paired comparisons see identical draws.
pub fn derive_seed(base: u64, parts: &[&str]) -> u64 {
    let mut h = Sha256::new();
    h.update(base.to_le_bytes());
    for p in parts {
        h.update([0u8]);
        h.update(p.as_bytes());
    }
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().unwrap())
}

/// Evaluate one config over the prompt set. Seeds depend on prompt and
/// generation index only, so different configs see paired latents.
pub fn evaluate_point(
    model: &Model,
    point: &SweepPoint,
    prompts: &[String],
    generations: usize,
    base_seed: u64,
    sim_ref: &SimReference,
    reference_images: &[ndarray::ArrayD<f64>],
) -> Result<ExperimentRecord> {
    if prompts.is_empty() || generations == 0 {
        return Err(Error::InvalidArgument("empty evaluation protocol".into()));
    }
    let mut per_prompt = Vec::with_capacity(prompts.len());
    let mut all_images = Vec::new();
    for prompt in prompts {
        let mut sims = Vec::new();
        let mut aligns = Vec::new();
        let mut wens = Vec::new();
        let mut spike_fracs = Vec::new();
        for g in 0..generations {
            let seed = derive_seed(base_seed, &[prompt, &g.to_string()]);
            let spec = RunSpec::new(point.method.clone(), point.guidance.clone(), seed);
            let out = generate(model, prompt, &spec)?;
            sims.push(sim_ref.score(&out.image));
            aligns.push(alignment_score(&out.image, prompt)?);
            wens.push(wen_signal(&out.report));
            let fired = out.report.steps.iter().filter(|s| !s.spikes.is_empty()).count();
            spike_fracs.push(fired as f64 / out.report.steps.len().max(1) as f64);
            all_images.push(out.image);
        }
        per_prompt.push(PromptMetrics {
            prompt: prompt.clone(),
            sim_mean: mean(&sims),
            sim_ci: ci_half_width(&sims),
            align_mean: mean(&aligns),
            align_ci: ci_half_width(&aligns),
            wen_mean: mean(&wens),
            spike_fraction: mean(&spike_fracs),
        });
    }
    let dist = if all_images.len() >= 16 && reference_images.len() >= 16 {
        Some(distribution_score(&all_images, reference_images)?)
    } else {
        None
    };
    let sims: Vec<f64> = per_prompt.iter().map(|p| p.sim_mean).collect();
    let aligns: Vec<f64> = per_prompt.iter().map(|p| p.align_mean).collect();
    let fracs: Vec<f64> = per_prompt.iter().map(|p| p.spike_fraction).collect();
    Ok(ExperimentRecord {
        schema_version: 1,
        config_id: point.config_id(),
        point: point.clone(),
        per_prompt,
        sim: mean(&sims),
        align: mean(&aligns),
        dist,
        spike_fraction: mean(&fracs),
    })
}

fn record_path(out_dir: &Path, config_id: &str) -> std::path::PathBuf {
    out_dir.join(format!("record-{config_id}.json"))
}

fn write_record_atomic(out_dir: &Path, record: &ExperimentRecord) -> Result<()> {
    std::fs::create_dir_all(out_dir)?;
    let final_path = record_path(out_dir, &record.config_id);
    let tmp = out_dir.join(format!(".tmp-{}", record.config_id));
    std::fs::write(&tmp, serde_json::to_vec_pretty(record)?)?;
    std::fs::rename(&tmp, &final_path)?;
    Ok(())
}

pub fn load_records(out_dir: &Path) -> Result<Vec<ExperimentRecord>> {
    let mut records = Vec::new();
    if !out_dir.exists() {
        return Ok(records);
    }
    let mut paths: Vec<_> = std::fs::read_dir(out_dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .map_or(false, |n| n.starts_with("record-") && n.ends_with(".json"))
        })
        .collect();
    paths.sort();
    for p in paths {
        let text = std::fs::read_to_string(&p)?;
        records.push(serde_json::from_str(&text)?);
    }
    Ok(records)
}

/// Run every sweep point, skipping those with a finished record on disk.
/// Points execute in waves of `workers` threads (0 = all cores).
pub fn run_sweep(
    model: &Model,
    spec: &SweepSpec,
    sim_ref: &SimReference,
    reference_images: &[ndarray::ArrayD<f64>],
    out_dir: &Path,
    workers: usize,
) -> Result<Vec<ExperimentRecord>> {
    let workers = if workers == 0 {
        std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
    } else {
        workers
    };
    let mut records: Vec<Option<ExperimentRecord>> = vec![None; spec.points.len()];
    let mut pending: Vec<usize> = Vec::new();
    for (i, point) in spec.points.iter().enumerate() {
        let path = record_path(out_dir, &point.config_id());
        if path.exists() {
            let text = std::fs::read_to_string(&path)?;
            records[i] = Some(serde_json::from_str(&text)?);
        } else {
            pending.push(i);
        }
    }
    for wave in pending.chunks(workers.max(1)) {
        let results: Vec<(usize, Result<ExperimentRecord>)> = std::thread::scope(|scope| {
            let handles: Vec<_> = wave
                .iter()
                .map(|&i| {
                    let point = &spec.points[i];
                    scope.spawn(move || {
                        (
                            i,
                            evaluate_point(
                                model,
                                point,
                                &spec.prompts,
                                spec.generations_per_prompt,
                                spec.base_seed,
                                sim_ref,
                                reference_images,
                            ),
                        )
                    })
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("sweep worker")).collect()
        });
        for (i, result) in results {
            let record = result?;
            write_record_atomic(out_dir, &record)?;
            records[i] = Some(record);
        }
    }
    Ok(records.into_iter().map(|r| r.expect("all points evaluated")).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Objective {
    BestSim,
    BestAlign,
    BestDist,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionRule {
    pub reference_align: f64,
    pub degradation_budget: f64,
    pub objective: Objective,
}

impl SelectionRule {
    pub fn new(reference_align: f64, objective: Objective) -> Self {
        SelectionRule { reference_align, degradation_budget: 0.15, objective }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.degradation_budget > 0.0 && self.degradation_budget < 1.0) {
            return Err(Error::Config(format!(
                "degradation budget {} outside (0, 1)",
                self.degradation_budget
            )));
        }
        Ok(())
    }

    pub fn alignment_floor(&self) -> f64 {
        (1.0 - self.degradation_budget) * self.reference_align
    }
}

/// Filter to records meeting the alignment floor, then optimize the
/// objective. None = no feasible config. Ties break on the lexicographic
/// order of the canonical config string.
pub fn run_selection<'a>(
    records: &'a [ExperimentRecord],
    rule: &SelectionRule,
) -> Result<Option<&'a ExperimentRecord>> {
    rule.validate()?;
    let floor = rule.alignment_floor();
    let feasible: Vec<&ExperimentRecord> =
        records.iter().filter(|r| r.align >= floor).collect();
    let key = |r: &ExperimentRecord| -> Option<f64> {
        match rule.objective {
            Objective::BestSim => Some(r.sim),
            Objective::BestAlign => Some(-r.align),
            Objective::BestDist => r.dist,
        }
    };
    let mut best: Option<&ExperimentRecord> = None;
    for r in feasible {
        let Some(k) = key(r) else { continue };
        match best {
            None => best = Some(r),
            Some(b) => {
                let bk = key(b).unwrap();
                let better = k < bk
                    || (k == bk && r.point.canonical() < b.point.canonical());
                if better {
                    best = Some(r);
                }
            }
        }
    }
    Ok(best)
}

/// Per-step series of aggregated attention mass at one token position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub steps: Vec<usize>,
    pub values: Vec<f64>,
    /// False when some steps were missing from the archive.
    pub complete: bool,
}

pub fn ca_mass_trajectory(
    trace: &AttentionTrace,
    token_pos: usize,
    selector: &SiteSelector,
    expected_steps: usize,
) -> Result<Trajectory> {
    let mut steps = Vec::new();
    let mut values = Vec::new();
    for step in 0..expected_steps {
        let entries: Vec<&TraceEntry> = trace
            .at_step(step)
            .filter(|e| selector.matches(&e.site))
            .collect();
        if entries.is_empty() {
            continue;
        }
        let profile = token_max_mass(&entries, selector)?;
        let v = *profile.m.get(token_pos).ok_or_else(|| {
            Error::InvalidArgument(format!("token position {token_pos} out of range"))
        })?;
        steps.push(step);
        values.push(v);
    }
    let complete = steps.len() == expected_steps;
    Ok(Trajectory { steps, values, complete })
}

/// Per-block trajectories as contributions to the all-block mean, so the
/// three series sum pointwise to the aggregate trajectory.
pub fn block_mass_trajectory(
    trace: &AttentionTrace,
    token_pos: usize,
    expected_steps: usize,
) -> Result<Vec<(Block, Trajectory)>> {
    let blocks = [Block::Down, Block::Mid, Block::Up];
    let mut present: BTreeSet<Block> = BTreeSet::new();
    for e in &trace.entries {
        present.insert(e.site.block);
    }
    let n = present.len().max(1) as f64;
    let mut out = Vec::new();
    for block in blocks {
        if !present.contains(&block) {
            continue;
        }
        let selector = SiteSelector::blocks([block]);
        let mut t = ca_mass_trajectory(trace, token_pos, &selector, expected_steps)?;
        for v in t.values.iter_mut() {
            *v /= n;
        }
        out.push((block, t));
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RobustnessArm {
    pub per_prompt: Vec<PromptMetrics>,
    pub sim: f64,
    pub align: f64,
    /// 95% half-widths over the per-prompt means.
    pub sim_ci: f64,
    pub align_ci: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PromptDelta {
    pub prompt: String,
    pub sim_delta: f64,
    pub align_delta: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RobustnessReport {
    pub baseline: RobustnessArm,
    pub mitigated: RobustnessArm,
    pub deltas: Vec<PromptDelta>,
}

fn arm_from_record(record: &ExperimentRecord) -> RobustnessArm {
    let sims: Vec<f64> = record.per_prompt.iter().map(|p| p.sim_mean).collect();
    let aligns: Vec<f64> = record.per_prompt.iter().map(|p| p.align_mean).collect();
    RobustnessArm {
        per_prompt: record.per_prompt.clone(),
        sim: mean(&sims),
        align: mean(&aligns),
        sim_ci: ci_half_width(&sims),
        align_ci: ci_half_width(&aligns),
    }
}

/// Paired comparison on non-memorized prompts: mitigation config as tuned
/// for the memorized setting, against the no-mitigation arm, same seeds.
pub fn nonmemorized_robustness(
    model: &Model,
    prompts: &[String],
    mitigation: &SweepPoint,
    base_seed: u64,
    sim_ref: &SimReference,
) -> Result<RobustnessReport> {
    let baseline_point = SweepPoint {
        method: Method::None,
        guidance: GuidanceConfig {
            // Match sampler geometry so only the mitigation differs.
            steps: mitigation.guidance.steps,
            s: mitigation.guidance.s,
            sampler: mitigation.guidance.sampler,
            ..GuidanceConfig::default()
        },
    };
    let base = evaluate_point(
        model, &baseline_point, prompts, GENERATIONS_PER_PROMPT, base_seed, sim_ref, &[],
    )?;
    let mit = evaluate_point(
        model, mitigation, prompts, GENERATIONS_PER_PROMPT, base_seed, sim_ref, &[],
    )?;
    let deltas = base
        .per_prompt
        .iter()
        .zip(mit.per_prompt.iter())
        .map(|(b, m)| PromptDelta {
            prompt: b.prompt.clone(),
            sim_delta: m.sim_mean - b.sim_mean,
            align_delta: m.align_mean - b.align_mean,
        })
        .collect();
    Ok(RobustnessReport {
        baseline: arm_from_record(&base),
        mitigated: arm_from_record(&mit),
        deltas,
    })
}

/// Flat CSV view of sweep records for offline inspection.
pub fn records_csv(records: &[ExperimentRecord]) -> String {
    let mut out = String::from(
        "config_id,method,tau,alpha,r,s,steps,sim,align,dist,spike_fraction\n",
    );
    for r in records {
        let g = &r.point.guidance;
        let dist = r.dist.map_or(String::new(), |d| format!("{d:.6}"));
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{:.6},{:.6},{},{:.6}\n",
            r.config_id,
            r.point.method.tag(),
            g.tau,
            g.attenuation.alpha,
            g.r,
            g.s,
            g.steps,
            r.sim,
            r.align,
            dist,
            r.spike_fraction,
        ));
    }
    out
}

/// The Table-3-shaped toy grids over the mitigation knobs.
pub fn default_ca_grids(guard: bool, base: &GuidanceConfig) -> Vec<SweepPoint> {
    let taus = [1.0, 2.0, 3.0];
    let alphas = [0.1, 0.25, 0.5, 0.75, 1.0];
    let rs: &[f64] = if guard { &[0.0, 0.5, 1.0, 2.0] } else { &[0.0] };
    let mut points = Vec::new();
    for &tau in &taus {
        for &alpha in &alphas {
            for &r in rs {
                let mut g = base.clone();
                g.tau = tau;
                g.attenuation.alpha = alpha;
                g.r = r;
                let method = if guard { Method::CaGuard } else { Method::CaAttenuation };
                points.push(SweepPoint { method, guidance: g });
            }
        }
    }
    points
}
