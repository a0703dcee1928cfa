//! Acceptance gate. One line per criterion; the test fails if any criterion
//! fails, but all criteria always run so the report is complete.
//!
//! Trained checkpoints are cached in the cargo target tmpdir keyed by their
//! training setup, so reruns skip the expensive inductions.

use std::collections::BTreeSet;
use std::path::PathBuf;
use std::time::Instant;

use ndarray::{Array2, ArrayD};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use guardlab::attention::{
    AttentionSite, AttentionTrace, Block, LogitInterceptor, SiteSelector, TraceEntry,
};
use guardlab::attenuate::attenuate_logits;
use guardlab::baselines::ParaphraseTable;
use guardlab::guidance::{
    cfg_compose, generate, guard_denoise_step, three_stream_predict, GuidanceConfig, Method,
    RunSpec,
};
use guardlab::harness::{
    evaluate_point, nonmemorized_robustness, run_selection, ExperimentRecord, Objective,
    SelectionRule, SweepPoint,
};
use guardlab::kernels::softmax_rows;
use guardlab::lab::{make_dataset, wen_signal, DatasetSpec, SimReference, ToyDataset};
use guardlab::model::{seeded_latent, Model};
use guardlab::schedule::{ddim_step, inference_timesteps};
use guardlab::spike::Detector;
use guardlab::text::tokenize;
use guardlab::train::{gradient_check, train, TrainConfig};

type CheckResult = Result<String, String>;

struct Gate {
    failures: Vec<String>,
}

impl Gate {
    fn run(&mut self, name: &str, what: &str, check: impl FnOnce() -> CheckResult) {
        let started = Instant::now();
        let outcome = check();
        let secs = started.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("[PASS] {name} {what} ({secs:.1}s) {detail}"),
            Err(detail) => {
                println!("[FAIL] {name} {what} ({secs:.1}s) {detail}");
                self.failures.push(format!("{name}: {detail}"));
            }
        }
    }
}

fn ensure(cond: bool, msg: String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg)
    }
}

// ---------------------------------------------------------------------------
// Shared trained artifacts

struct TrainedSetting {
    model: Model,
    dataset: ToyDataset,
    sim_ref: SimReference,
}

fn cached_training(tag: &str, spec: &DatasetSpec, config: &TrainConfig) -> TrainedSetting {
    let dir = PathBuf::from(env!("CARGO_TARGET_TMPDIR"));
    let key = format!(
        "{tag}-{}-{}-{}-{}-{}-e{}-b{}-lr{}-s{}",
        spec.base_size,
        spec.memorized_count,
        spec.copies,
        spec.template_variants,
        spec.seed,
        config.epochs,
        config.batch_size,
        config.lr,
        config.seed,
    );
    let model_path = dir.join(format!("{key}.model.bin"));
    let dataset_path = dir.join(format!("{key}.dataset.bin"));
    let dataset = if dataset_path.exists() {
        ToyDataset::load(&dataset_path).expect("cached dataset loads")
    } else {
        let ds = make_dataset(spec).expect("dataset builds");
        ds.save(&dataset_path).expect("dataset saves");
        ds
    };
    let model = if model_path.exists() {
        Model::load(&model_path).expect("cached model loads")
    } else {
        let items: Vec<_> = dataset
            .pairs
            .iter()
            .map(|(p, img)| {
                (
                    tokenize(p, &guardlab::text::Vocab::default()).expect("dataset prompt"),
                    img.clone(),
                )
            })
            .collect();
        eprintln!("[{tag}] training {} pairs x {} epochs...", items.len(), config.epochs);
        let (model, report) = train(&items, config).expect("training succeeds");
        eprintln!("[{tag}] final loss {:.2}", report.final_loss);
        model.save(&model_path).expect("model saves");
        model
    };
    let sim_ref = SimReference::new(&dataset.training_images()).expect("references");
    TrainedSetting { model, dataset, sim_ref }
}

fn training_config() -> TrainConfig {
    TrainConfig { seed: 1, ..TrainConfig::default() }
}

fn verbatim_setting() -> TrainedSetting {
    cached_training("verbatim", &DatasetSpec::verbatim_default(1), &training_config())
}

fn template_setting() -> TrainedSetting {
    cached_training("template", &DatasetSpec::template_default(1), &training_config())
}

fn eval_guidance(steps: usize) -> GuidanceConfig {
    GuidanceConfig { steps, ..GuidanceConfig::default() }
}

// ---------------------------------------------------------------------------
// P1: with r = 0, alpha = 1, tau = +inf, the guarded trajectory is bitwise
// identical to plain classifier-free guidance at the same seed.

fn p1_reduction_identity() -> CheckResult {
    let model = Model::init(11);
    let mut cfg = eval_guidance(8);
    cfg.r = 0.0;
    cfg.attenuation.alpha = 1.0;
    cfg.tau = f64::INFINITY;
    let tokens = tokenize("red square tag0", &model.vocab).map_err(|e| e.to_string())?;
    let e_null = model.null_embedding().map_err(|e| e.to_string())?;
    let e_p = model.encode_prompt(&tokens).map_err(|e| e.to_string())?;
    let ts = inference_timesteps(model.schedule.len(), cfg.steps).map_err(|e| e.to_string())?;

    let mut x_guard = seeded_latent(3);
    let mut x_cfg = x_guard.clone();
    for (i, &t) in ts.iter().enumerate() {
        let t_prev = ts.get(i + 1).copied();
        let (next, _, _) = guard_denoise_step(
            &model, &x_guard, t, t_prev, &e_null, &e_p, &cfg, tokens.eot_pos, i,
        )
        .map_err(|e| e.to_string())?;
        x_guard = next;

        let (u, _) = model.predict_noise(&x_cfg, t, &e_null, None, false, i).map_err(|e| e.to_string())?;
        let (c, _) = model.predict_noise(&x_cfg, t, &e_p, None, false, i).map_err(|e| e.to_string())?;
        let eps = cfg_compose(&u, &c, cfg.s).map_err(|e| e.to_string())?;
        x_cfg = ddim_step(&x_cfg, &eps, t, t_prev, &model.schedule).map_err(|e| e.to_string())?;

        ensure(x_guard == x_cfg, format!("trajectories diverge at step {i}"))?;
    }

    // End to end through the generation interface as well.
    let guard = generate(&model, "red square tag0", &RunSpec::new(Method::CaGuard, cfg.clone(), 3))
        .map_err(|e| e.to_string())?;
    let plain = generate(&model, "red square tag0", &RunSpec::new(Method::None, cfg, 3))
        .map_err(|e| e.to_string())?;
    ensure(guard.image == plain.image, "generated images differ".into())?;
    Ok(format!("{} steps bitwise-equal", ts.len()))
}

// ---------------------------------------------------------------------------
// P2: batched three-stream prediction vs three independent backbone calls,
// 1e-5 max-abs over 100 random states.

struct FrozenSpikes {
    selector: SiteSelector,
    per_block: std::collections::BTreeMap<Block, guardlab::spike::SpikeSet>,
    alpha: f64,
}

impl LogitInterceptor for FrozenSpikes {
    fn selector(&self) -> &SiteSelector {
        &self.selector
    }
    fn transform(&self, l: &Array2<f64>, site: &AttentionSite, _: usize) -> Array2<f64> {
        match self.per_block.get(&site.block) {
            Some(s) => attenuate_logits(l, s, self.alpha),
            None => l.clone(),
        }
    }
}

fn p2_batching_fidelity() -> CheckResult {
    let model = Model::init(12);
    let table = ParaphraseTable::default_toy();
    let prompts = ["red square tag0", "blue circle tag3", "emerald stripes tag7"];
    let mut cfg = eval_guidance(4);
    cfg.tau = 1.0;
    let e_null = model.null_embedding().map_err(|e| e.to_string())?;
    let mut worst = 0.0f64;
    for i in 0..100 {
        let prompt = prompts[i % prompts.len()];
        let tokens = tokenize(prompt, &model.vocab).map_err(|e| e.to_string())?;
        let para = tokenize(&table.apply(prompt), &model.vocab).map_err(|e| e.to_string())?;
        let e_neg = model.encode_prompt(&tokens).map_err(|e| e.to_string())?;
        let e_pos = model.encode_prompt(&para).map_err(|e| e.to_string())?;
        let x = seeded_latent(1000 + i as u64);
        let t = (i * 7) % model.schedule.len();

        let three = three_stream_predict(
            &model, &x, t, &e_null, &e_neg, &e_pos, &cfg, tokens.eot_pos, 0, true,
        )
        .map_err(|e| e.to_string())?;

        let (u, _) = model.predict_noise(&x, t, &e_null, None, false, 0).map_err(|e| e.to_string())?;
        let (n, trace) = model.predict_noise(&x, t, &e_neg, None, true, 0).map_err(|e| e.to_string())?;
        // Rebuild the per-block spike sets seen inside the batched pass.
        let mut per_block = std::collections::BTreeMap::new();
        for block in cfg.attenuation.blocks.iter() {
            let entries: Vec<&TraceEntry> =
                trace.entries.iter().filter(|e| e.site.block == *block).collect();
            let det = Detector {
                tau: cfg.tau,
                selector: SiteSelector::blocks([*block]),
                include_eot_floor: false,
            };
            per_block.insert(*block, det.detect(&entries, 0, None).map_err(|e| e.to_string())?);
        }
        let frozen = FrozenSpikes {
            selector: SiteSelector::blocks(cfg.attenuation.blocks.iter().copied()),
            per_block,
            alpha: cfg.attenuation.alpha,
        };
        let (p, _) = model.predict_noise(&x, t, &e_pos, Some(&frozen), false, 0).map_err(|e| e.to_string())?;

        let max_abs = |a: &ArrayD<f64>, b: &ArrayD<f64>| {
            a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
        };
        worst = worst
            .max(max_abs(&three.eps_uncond, &u))
            .max(max_abs(&three.eps_neg, &n))
            .max(max_abs(&three.eps_pos, &p));
    }
    ensure(worst < 1e-5, format!("max abs error {worst:.2e} over 100 states"))?;
    Ok(format!("max abs error {worst:.2e} over 100 states"))
}

// ---------------------------------------------------------------------------
// P3: spike recovery on synthetic maps.

fn uniform_entry(cols: usize, step: usize) -> TraceEntry {
    let w = Array2::from_elem((4, cols), 1.0 / cols as f64);
    TraceEntry {
        step,
        site: AttentionSite { block: Block::Down, layer_index: 0, head_index: 0 },
        logits: w.mapv(f64::ln),
        weights: w,
    }
}

fn p3_spike_recovery() -> CheckResult {
    let cols = 32;
    let detector = Detector {
        tau: 3.0,
        selector: SiteSelector::all_blocks(),
        include_eot_floor: false,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let mut recovered = 0usize;
    let trials = 1000;
    for _ in 0..trials {
        let planted = rng.gen_range(0..cols);
        let boost = rng.gen_range(0.4..0.9);
        let mut entry = uniform_entry(cols, 0);
        // One tall column over a uniform background.
        let rest = (1.0 - boost) / (cols - 1) as f64;
        for mut row in entry.weights.rows_mut() {
            row.fill(rest);
            row[planted] = boost;
        }
        entry.logits = entry.weights.mapv(f64::ln);
        // Hand Z for a lone outlier among n uniform values is sqrt(n-1)
        // toward the outlier only if it dominates; verify the construction
        // directly instead of trusting the formula.
        let m: Vec<f64> = (0..cols)
            .map(|c| if c == planted { boost } else { rest })
            .collect();
        let mu = m.iter().sum::<f64>() / cols as f64;
        let sigma = (m.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / cols as f64).sqrt();
        let hand_z = (boost - mu) / sigma;
        ensure(hand_z >= 5.0, format!("construction broke: hand Z {hand_z:.2}"))?;
        let spikes = detector.detect(&[&entry], 0, None).map_err(|e| e.to_string())?;
        if spikes.positions == BTreeSet::from([planted]) {
            recovered += 1;
        }
    }
    ensure(
        recovered == trials,
        format!("recovered {recovered}/{trials} planted spikes"),
    )?;
    // Spike-free uniform maps stay empty.
    for step in 0..50 {
        let entry = uniform_entry(cols, 0);
        let spikes = detector.detect(&[&entry], step, None).map_err(|e| e.to_string())?;
        ensure(spikes.is_empty(), format!("false positive on uniform map {step}"))?;
    }
    Ok(format!("{trials}/{trials} planted columns recovered, no false positives"))
}

// ---------------------------------------------------------------------------
// P4: attenuation locality.

fn p4_attenuation_locality() -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(44);
    for trial in 0..500 {
        let cols = 8;
        let rows = 5;
        let logits = Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-3.0..3.0f64));
        let spike_col = rng.gen_range(0..cols);
        let alpha = rng.gen_range(0.05..0.95f64);
        let spikes = guardlab::spike::SpikeSet {
            positions: BTreeSet::from([spike_col]),
            zscores: vec![0.0; cols],
            step: 0,
            tau: 1.0,
        };
        let out = attenuate_logits(&logits, &spikes, alpha);
        // Non-spike columns bitwise untouched.
        for r in 0..rows {
            for c in 0..cols {
                if c != spike_col {
                    ensure(
                        out[[r, c]] == logits[[r, c]],
                        format!("trial {trial}: non-spike logit changed"),
                    )?;
                }
            }
        }
        let w_before = softmax_rows(&logits);
        let w_after = softmax_rows(&out);
        for r in 0..rows {
            // Non-spike weight ratios preserved.
            let mut reference: Option<f64> = None;
            for c in 0..cols {
                if c == spike_col {
                    continue;
                }
                let ratio = w_after[[r, c]] / w_before[[r, c]];
                match reference {
                    None => reference = Some(ratio),
                    Some(q) => ensure(
                        (ratio - q).abs() < 1e-6,
                        format!("trial {trial}: ratio drift {:.2e}", (ratio - q).abs()),
                    )?,
                }
            }
            // Positive spike logits strictly lose weight for alpha < 1.
            if logits[[r, spike_col]] > 0.0 {
                ensure(
                    w_after[[r, spike_col]] < w_before[[r, spike_col]],
                    format!("trial {trial}: spike weight did not decrease"),
                )?;
            }
        }
    }
    Ok("500 random maps: bitwise locality, ratios within 1e-6".into())
}

// ---------------------------------------------------------------------------
// P5: memorization induction.

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

fn no_mitigation_point(steps: usize) -> SweepPoint {
    SweepPoint { method: Method::None, guidance: eval_guidance(steps) }
}

fn p5_induction(setting: &TrainedSetting) -> CheckResult {
    let point = no_mitigation_point(50);
    let memorized = evaluate_point(
        &setting.model,
        &point,
        &setting.dataset.memorized_prompts,
        4,
        100,
        &setting.sim_ref,
        &[],
    )
    .map_err(|e| e.to_string())?;
    let held_out = evaluate_point(
        &setting.model,
        &point,
        &setting.dataset.held_out_prompts[..8].to_vec(),
        4,
        100,
        &setting.sim_ref,
        &[],
    )
    .map_err(|e| e.to_string())?;
    let detail = format!(
        "memorized sim {:.3} (need >= 0.8), held-out sim {:.3} (need <= 0.4)",
        memorized.sim, held_out.sim
    );
    ensure(memorized.sim >= 0.8 && held_out.sim <= 0.4, detail.clone())?;
    Ok(detail)
}

// ---------------------------------------------------------------------------
// P6: mitigation trend under the selection rule, on both settings.

fn mitigation_points(guard: bool) -> Vec<SweepPoint> {
    let mut out = Vec::new();
    for tau in [1.0, 2.0] {
        for alpha in [0.25, 0.5] {
            let rs: &[f64] = if guard { &[0.5, 1.0] } else { &[0.0] };
            for &r in rs {
                let mut g = eval_guidance(50);
                g.tau = tau;
                g.attenuation.alpha = alpha;
                g.r = r;
                out.push(SweepPoint {
                    method: if guard { Method::CaGuard } else { Method::CaAttenuation },
                    guidance: g,
                });
            }
        }
    }
    out
}

fn evaluate_points(
    setting: &TrainedSetting,
    prompts: &[String],
    points: &[SweepPoint],
) -> Result<Vec<ExperimentRecord>, String> {
    points
        .iter()
        .map(|p| {
            evaluate_point(&setting.model, p, prompts, 4, 100, &setting.sim_ref, &[])
                .map_err(|e| e.to_string())
        })
        .collect()
}

fn p6_one_setting(setting: &TrainedSetting, label: &str) -> CheckResult {
    let prompts: Vec<String> = {
        let all = setting.dataset.evaluation_prompts();
        all.into_iter().take(8).collect()
    };
    let baseline = evaluate_points(setting, &prompts, &[no_mitigation_point(50)])?
        .pop()
        .unwrap();
    let rule = SelectionRule::new(baseline.align, Objective::BestSim);
    let floor = rule.alignment_floor();

    let ca_records = evaluate_points(setting, &prompts, &mitigation_points(false))?;
    let guard_records = evaluate_points(setting, &prompts, &mitigation_points(true))?;
    let ca = run_selection(&ca_records, &rule)
        .map_err(|e| e.to_string())?
        .ok_or_else(|| format!("{label}: no feasible CA attenuation config"))?;
    let guard = run_selection(&guard_records, &rule)
        .map_err(|e| e.to_string())?
        .ok_or_else(|| format!("{label}: no feasible guard config"))?;

    let detail = format!(
        "{label}: sim none {:.3} -> CA {:.3} -> guard {:.3}; align floor {:.3} (CA {:.3}, guard {:.3})",
        baseline.sim, ca.sim, guard.sim, floor, ca.align, guard.align
    );
    ensure(ca.sim <= 0.5 * baseline.sim, detail.clone())?;
    ensure(guard.sim <= ca.sim + 0.02, detail.clone())?;
    ensure(ca.align >= floor && guard.align >= floor, detail.clone())?;
    Ok(detail)
}

fn p6_mitigation_trend(verbatim: &TrainedSetting, template: &TrainedSetting) -> CheckResult {
    let v = p6_one_setting(verbatim, "verbatim")?;
    let t = p6_one_setting(template, "template")?;
    Ok(format!("{v}; {t}"))
}

// ---------------------------------------------------------------------------
// P7: per-step EOT mass dominance, memorized vs matched non-memorized.

fn eot_trajectory(
    setting: &TrainedSetting,
    prompt: &str,
    seed: u64,
) -> Result<(Vec<f64>, f64), String> {
    let mut spec = RunSpec::new(Method::None, eval_guidance(50), seed);
    spec.record_trace = true;
    let out = generate(&setting.model, prompt, &spec).map_err(|e| e.to_string())?;
    let tokens = tokenize(prompt, &setting.model.vocab).map_err(|e| e.to_string())?;
    let trace: &AttentionTrace = out.trace.as_ref().expect("trace recorded");
    let traj = guardlab::harness::ca_mass_trajectory(
        trace,
        tokens.eot_pos,
        &SiteSelector::all_blocks(),
        50,
    )
    .map_err(|e| e.to_string())?;
    ensure(traj.complete, format!("partial trajectory for {prompt}"))?;
    Ok((traj.values, wen_signal(&out.report)))
}

fn p7_p8_diagnostics(setting: &TrainedSetting) -> Result<(String, String), String> {
    let pairs: Vec<(String, String)> = setting
        .dataset
        .memorized_prompts
        .iter()
        .cloned()
        .zip(setting.dataset.held_out_prompts.iter().cloned())
        .collect();
    ensure(pairs.len() >= 8, format!("only {} prompt pairs", pairs.len()))?;
    let mut dominance = Vec::new();
    let mut wen_mem = Vec::new();
    let mut wen_other = Vec::new();
    for (i, (mem, other)) in pairs.iter().enumerate() {
        let (tm, wm) = eot_trajectory(setting, mem, 500 + i as u64)?;
        let (to, wo) = eot_trajectory(setting, other, 500 + i as u64)?;
        let dominated = tm.iter().zip(to.iter()).filter(|(a, b)| a > b).count();
        dominance.push(dominated as f64 / tm.len() as f64);
        wen_mem.push(wm);
        wen_other.push(wo);
    }
    let mean_dom = mean(&dominance);
    let p7 = {
        let detail = format!(
            "EOT dominance {:.0}% of steps over {} pairs (need >= 80%)",
            100.0 * mean_dom,
            pairs.len()
        );
        ensure(mean_dom >= 0.8, detail.clone())?;
        detail
    };
    let p8 = {
        let sd = |v: &[f64]| {
            let m = mean(v);
            (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
        };
        let gap = mean(&wen_mem) - mean(&wen_other);
        let pooled_se = (sd(&wen_mem).powi(2) / wen_mem.len() as f64
            + sd(&wen_other).powi(2) / wen_other.len() as f64)
            .sqrt();
        let detail = format!(
            "wen signal {:.3} vs {:.3}, gap {:.3} = {:.1} pooled SEs (need >= 2)",
            mean(&wen_mem),
            mean(&wen_other),
            gap,
            gap / pooled_se
        );
        ensure(gap >= 2.0 * pooled_se, detail.clone())?;
        detail
    };
    Ok((p7, p8))
}

// ---------------------------------------------------------------------------
// P9: non-memorized robustness with memorized-setting hyperparameters.

fn p9_robustness(setting: &TrainedSetting, mitigation: &SweepPoint) -> CheckResult {
    let prompts = setting.dataset.held_out_prompts.clone();
    ensure(prompts.len() >= 32, format!("only {} held-out prompts", prompts.len()))?;
    let report = nonmemorized_robustness(&setting.model, &prompts, mitigation, 900, &setting.sim_ref)
        .map_err(|e| e.to_string())?;
    let sim_delta = (report.mitigated.sim - report.baseline.sim).abs();
    let align_delta = (report.mitigated.align - report.baseline.align).abs();
    let detail = format!(
        "sim delta {:.4} (ci {:.4}), align delta {:.4} (ci {:.4}) over {} prompts",
        sim_delta,
        report.baseline.sim_ci,
        align_delta,
        report.baseline.align_ci,
        prompts.len()
    );
    ensure(
        sim_delta < report.baseline.sim_ci && align_delta < report.baseline.align_ci,
        detail.clone(),
    )?;
    Ok(detail)
}

// ---------------------------------------------------------------------------
// P10: selection protocol oracle.

fn synthetic_record(tau: f64, sim: f64, align: f64, dist: Option<f64>) -> ExperimentRecord {
    let mut g = GuidanceConfig::default();
    g.tau = tau;
    let point = SweepPoint { method: Method::CaGuard, guidance: g };
    ExperimentRecord {
        schema_version: 1,
        config_id: point.config_id(),
        point,
        per_prompt: vec![],
        sim,
        align,
        dist,
        spike_fraction: 0.0,
    }
}

fn p10_selection_protocol() -> CheckResult {
    let rule = SelectionRule::new(0.299, Objective::BestSim);
    let floor = rule.alignment_floor();
    ensure(
        (floor - 0.25415).abs() < 1e-12 && (floor - 0.254).abs() < 5e-4,
        format!("floor {floor} from reference 0.299"),
    )?;

    // Known feasible region: records 2 and 3 clear the floor.
    let records = vec![
        synthetic_record(1.0, 0.05, 0.20, Some(9.0)), // infeasible
        synthetic_record(2.0, 0.30, 0.40, Some(2.0)),
        synthetic_record(3.0, 0.20, 0.30, Some(4.0)),
    ];
    let best_sim = run_selection(&records, &rule).map_err(|e| e.to_string())?.unwrap();
    ensure(best_sim.sim == 0.20, format!("best-sim picked sim {}", best_sim.sim))?;
    let rule_a = SelectionRule::new(0.299, Objective::BestAlign);
    let best_align = run_selection(&records, &rule_a).map_err(|e| e.to_string())?.unwrap();
    ensure(best_align.align == 0.40, format!("best-align picked {}", best_align.align))?;
    let rule_d = SelectionRule::new(0.299, Objective::BestDist);
    let best_dist = run_selection(&records, &rule_d).map_err(|e| e.to_string())?.unwrap();
    ensure(best_dist.dist == Some(2.0), format!("best-dist picked {:?}", best_dist.dist))?;
    // Everything below the floor: explicit no-feasible answer.
    let strict = SelectionRule::new(0.9, Objective::BestSim);
    ensure(
        run_selection(&records, &strict).map_err(|e| e.to_string())?.is_none(),
        "expected no feasible config".into(),
    )?;
    Ok("hand-computed optima recovered for all three objectives".into())
}

// ---------------------------------------------------------------------------
// P11: gradient sanity on a 1% parameter sample.

fn p11_gradient_sanity() -> CheckResult {
    let model = Model::init(15);
    let vocab = guardlab::text::Vocab::default();
    let batch: Vec<_> = ["red square tag0", "blue circle tag1", "teal cross tag2", ""]
        .iter()
        .map(|p| {
            (
                tokenize(p, &vocab).expect("prompt"),
                guardlab::lab::render(if p.is_empty() { "white square tag0" } else { p })
                    .expect("render"),
            )
        })
        .collect();
    let (max_rel, checked) =
        gradient_check(&model, &batch, 9, 0.01, 1e-4).map_err(|e| e.to_string())?;
    let detail = format!("max relative error {max_rel:.2e} over {checked} sampled parameters");
    ensure(max_rel <= 1e-3, detail.clone())?;
    Ok(detail)
}

// ---------------------------------------------------------------------------

#[test]
fn acceptance_gate() {
    let mut gate = Gate { failures: Vec::new() };

    gate.run("P1", "reduction identity (guard -> plain guidance)", p1_reduction_identity);
    gate.run("P2", "batched three-stream fidelity", p2_batching_fidelity);
    gate.run("P3", "spike recovery on synthetic maps", p3_spike_recovery);
    gate.run("P4", "attenuation locality", p4_attenuation_locality);

    let verbatim = verbatim_setting();
    gate.run("P5", "memorization induction", || p5_induction(&verbatim));

    let template = template_setting();
    gate.run("P6", "mitigation trend under the selection rule", || {
        p6_mitigation_trend(&verbatim, &template)
    });

    let (p7, p8) = match p7_p8_diagnostics(&verbatim) {
        Ok((a, b)) => (Ok(a), Ok(b)),
        Err(e) => (Err(e.clone()), Err(e)),
    };
    gate.run("P7", "EOT mass dominance for memorized prompts", || p7);
    gate.run("P8", "text-conditional signal separation", || p8);

    let mitigation = {
        let mut g = eval_guidance(50);
        g.tau = 2.0;
        g.attenuation.alpha = 0.25;
        SweepPoint { method: Method::CaAttenuation, guidance: g }
    };
    gate.run("P9", "non-memorized robustness", || p9_robustness(&verbatim, &mitigation));
    gate.run("P10", "selection protocol oracle", p10_selection_protocol);
    gate.run("P11", "gradient sanity", p11_gradient_sanity);

    assert!(
        gate.failures.is_empty(),
        "acceptance criteria failed:\n{}",
        gate.failures.join("\n")
    );
}
