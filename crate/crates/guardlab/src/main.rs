use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};

use guardlab::attention::{AttentionTrace, SiteSelector};
use guardlab::config::LabConfig;
use guardlab::guidance::{generate, RunSpec};
use guardlab::harness::{
    block_mass_trajectory, ca_mass_trajectory, load_records, nonmemorized_robustness,
    records_csv, run_selection, run_sweep, SweepPoint, SweepSpec,
};
use guardlab::lab::{make_dataset, SimReference, ToyDataset};
use guardlab::model::Model;
use guardlab::plot::{line_plot, save_image_png, scatter_plot};
use guardlab::store::ArrayStore;
use guardlab::text::tokenize;

#[derive(Parser)]
#[command(name = "guardlab", about = "Train, probe, and mitigate memorization in a toy diffusion model")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Build the dataset and train a checkpoint.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides the dataset and training seeds.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// 0 means all cores.
        #[arg(long, default_value_t = 0)]
        workers: usize,
    },
    /// Generate one image with a mitigation method and write the run report.
    Generate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        prompt: String,
    },
    /// Turn a trace archive into attention-mass trajectories and plots.
    Analyze {
        #[arg(long)]
        trace: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Token position to track; defaults to the EOT slot of --prompt.
        #[arg(long)]
        token: Option<usize>,
        #[arg(long)]
        prompt: Option<String>,
    },
    /// Evaluate every sweep point against the dataset's memorized prompts.
    Sweep {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        workers: usize,
    },
    /// Apply the budgeted selection rule to a sweep record store.
    Select {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        records: PathBuf,
        /// Alignment reference; defaults to the best no-mitigation record.
        #[arg(long)]
        reference_align: Option<f64>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Emit tables and frontier plots from a record store.
    Report {
        #[arg(long)]
        records: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Paired metrics on non-memorized prompts with and without mitigation.
    Robustness {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
}

fn load_config(path: &Option<PathBuf>) -> anyhow::Result<LabConfig> {
    match path {
        Some(p) => LabConfig::load(p).with_context(|| format!("loading config {}", p.display())),
        None => Ok(LabConfig::default()),
    }
}

fn load_dataset(path: &Path) -> anyhow::Result<ToyDataset> {
    ToyDataset::load(path).with_context(|| format!("loading dataset {}", path.display()))
}

fn main() {
    if let Err(e) = run() {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn run() -> anyhow::Result<()> {
    match Cli::parse().cmd {
        Cmd::Train { config, seed, out, workers } => {
            let mut cfg = load_config(&config)?;
            if let Some(s) = seed {
                cfg.dataset.seed = s;
                cfg.training.seed = s;
            }
            std::fs::create_dir_all(&out)?;
            let dataset = make_dataset(&cfg.dataset.to_spec())?;
            dataset.save(&out.join("dataset.bin"))?;
            let items: Vec<_> = dataset
                .pairs
                .iter()
                .map(|(p, img)| Ok((tokenize(p, &guardlab::text::Vocab::default())?, img.clone())))
                .collect::<guardlab::Result<Vec<_>>>()?;
            let train_cfg = cfg.training.to_config(workers);
            eprintln!(
                "training on {} pairs for {} epochs",
                items.len(),
                train_cfg.epochs
            );
            let (model, report) = guardlab::train::train(&items, &train_cfg)?;
            model.save(out.join("model.bin"))?;
            std::fs::write(out.join("train_report.json"), serde_json::to_vec_pretty(&report)?)?;
            println!("final loss {:.4}; checkpoint at {}", report.final_loss, out.join("model.bin").display());
        }
        Cmd::Generate { config, seed, out, checkpoint, prompt } => {
            let cfg = load_config(&config)?;
            let model = Model::load(&checkpoint)?;
            let method = cfg.guidance.to_method()?;
            let mut spec = RunSpec::new(method, cfg.guidance.guidance.clone(), seed.unwrap_or(0));
            spec.record_trace = cfg.guidance.record_trace;
            let result = generate(&model, &prompt, &spec)?;
            std::fs::create_dir_all(&out)?;
            save_image_png(&out.join("image.png"), &result.image, 8)?;
            std::fs::write(out.join("report.json"), serde_json::to_vec_pretty(&result.report)?)?;
            if let Some(trace) = &result.trace {
                trace.to_store().save(out.join("trace.bin"))?;
            }
            println!("wrote {}", out.join("image.png").display());
        }
        Cmd::Analyze { trace, out, token, prompt } => {
            let store = ArrayStore::load(&trace)?;
            let trace = AttentionTrace::from_store(&store)?;
            let token = match (token, &prompt) {
                (Some(t), _) => t,
                (None, Some(p)) => {
                    tokenize(p, &guardlab::text::Vocab::default())?.eot_pos
                }
                (None, None) => bail!("pass --token or --prompt to pick the tracked position"),
            };
            let steps = trace.entries.iter().map(|e| e.step).max().map_or(0, |s| s + 1);
            std::fs::create_dir_all(&out)?;
            let agg = ca_mass_trajectory(&trace, token, &SiteSelector::all_blocks(), steps)?;
            if !agg.complete {
                eprintln!("warning: trace is missing steps; series is partial");
            }
            let blocks = block_mass_trajectory(&trace, token, steps)?;
            let mut csv = String::from("step,aggregate");
            for (b, _) in &blocks {
                csv.push_str(&format!(",{b}"));
            }
            csv.push('\n');
            for (i, step) in agg.steps.iter().enumerate() {
                csv.push_str(&format!("{step},{:.6}", agg.values[i]));
                for (_, t) in &blocks {
                    let v = t
                        .steps
                        .iter()
                        .position(|s| s == step)
                        .map(|j| t.values[j]);
                    match v {
                        Some(v) => csv.push_str(&format!(",{v:.6}")),
                        None => csv.push(','),
                    }
                }
                csv.push('\n');
            }
            std::fs::write(out.join("ca_mass.csv"), csv)?;
            let mut series = vec![agg.values.clone()];
            series.extend(blocks.iter().map(|(_, t)| t.values.clone()));
            line_plot(&out.join("ca_mass.png"), &series)?;
            println!("wrote {}", out.join("ca_mass.csv").display());
        }
        Cmd::Sweep { config, seed, checkpoint, dataset, out, workers } => {
            let cfg = load_config(&config)?;
            let model = Model::load(&checkpoint)?;
            let dataset = load_dataset(&dataset)?;
            let prompts = dataset.evaluation_prompts();
            if prompts.is_empty() {
                bail!("dataset has no memorized or template prompts to evaluate");
            }
            let reference_images = dataset.training_images();
            let sim_ref = SimReference::new(&reference_images)?;
            let points = cfg.sweep.expand(&cfg.guidance.guidance)?;
            let spec = SweepSpec {
                prompts,
                generations_per_prompt: cfg.sweep.generations_per_prompt,
                base_seed: seed.unwrap_or(cfg.sweep.base_seed),
                points,
            };
            let records_dir = out.join("records");
            let records = run_sweep(&model, &spec, &sim_ref, &reference_images, &records_dir, workers)?;
            std::fs::write(out.join("records.csv"), records_csv(&records))?;
            println!("{} records in {}", records.len(), records_dir.display());
        }
        Cmd::Select { config, records, reference_align, out } => {
            let cfg = load_config(&config)?;
            let records = load_records(&records)?;
            if records.is_empty() {
                bail!("record store is empty");
            }
            let reference = match reference_align {
                Some(r) => r,
                None => records
                    .iter()
                    .filter(|r| r.point.method.tag() == "none")
                    .map(|r| r.align)
                    .fold(f64::NEG_INFINITY, f64::max),
            };
            if !reference.is_finite() {
                bail!("no no-mitigation record found; pass --reference-align");
            }
            let rule = cfg.selection.to_rule(reference);
            std::fs::create_dir_all(&out)?;
            match run_selection(&records, &rule)? {
                Some(chosen) => {
                    std::fs::write(out.join("selected.json"), serde_json::to_vec_pretty(chosen)?)?;
                    println!(
                        "selected {} (sim {:.4}, align {:.4}, floor {:.4})",
                        chosen.config_id,
                        chosen.sim,
                        chosen.align,
                        rule.alignment_floor()
                    );
                }
                None => {
                    println!("no feasible config (floor {:.4})", rule.alignment_floor());
                }
            }
        }
        Cmd::Report { records, out } => {
            let records = load_records(&records)?;
            if records.is_empty() {
                bail!("record store is empty");
            }
            std::fs::create_dir_all(&out)?;
            std::fs::write(out.join("records.csv"), records_csv(&records))?;
            // Pareto view: sim (lower is better) against align, one color
            // per method family.
            let mut by_method: std::collections::BTreeMap<&str, Vec<(f64, f64)>> =
                std::collections::BTreeMap::new();
            for r in &records {
                by_method.entry(r.point.method.tag()).or_default().push((r.sim, r.align));
            }
            let groups: Vec<Vec<(f64, f64)>> = by_method.values().cloned().collect();
            scatter_plot(&out.join("frontier.png"), &groups, None)?;
            println!("wrote {}", out.join("records.csv").display());
        }
        Cmd::Robustness { config, seed, checkpoint, dataset, out } => {
            let cfg = load_config(&config)?;
            let model = Model::load(&checkpoint)?;
            let dataset = load_dataset(&dataset)?;
            if dataset.held_out_prompts.is_empty() {
                bail!("dataset has no held-out prompts");
            }
            let sim_ref = SimReference::new(&dataset.training_images())?;
            let point = SweepPoint {
                method: cfg.guidance.to_method()?,
                guidance: cfg.guidance.guidance.clone(),
            };
            let report = nonmemorized_robustness(
                &model,
                &dataset.held_out_prompts,
                &point,
                seed.unwrap_or(0),
                &sim_ref,
            )?;
            std::fs::create_dir_all(&out)?;
            std::fs::write(out.join("robustness.json"), serde_json::to_vec_pretty(&report)?)?;
            println!(
                "sim {:.4} -> {:.4} (ci {:.4}); align {:.4} -> {:.4} (ci {:.4})",
                report.baseline.sim,
                report.mitigated.sim,
                report.baseline.sim_ci,
                report.baseline.align,
                report.mitigated.align,
                report.baseline.align_ci
            );
        }
    }
    Ok(())
}
