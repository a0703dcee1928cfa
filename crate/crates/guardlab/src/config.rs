//! TOML experiment configuration: schema-versioned sections for the model,
//! dataset, training, guidance, sweep grids, and the selection rule.

use serde::{Deserialize, Serialize};

use crate::attenuate::StepMode;
use crate::baselines::ParaphraseTable;
use crate::error::{Error, Result};
use crate::guidance::{GuidanceConfig, Method};
use crate::harness::{Objective, SelectionRule, SweepPoint};
use crate::lab::DatasetSpec;
use crate::train::TrainConfig;

pub const CONFIG_SCHEMA_VERSION: u32 = 1;

fn default_schema_version() -> u32 {
    CONFIG_SCHEMA_VERSION
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabConfig {
    #[serde(default = "default_schema_version")]
    pub schema_version: u32,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub dataset: DatasetSection,
    #[serde(default)]
    pub training: TrainingSection,
    #[serde(default)]
    pub guidance: GuidanceSection,
    #[serde(default)]
    pub sweep: SweepSection,
    #[serde(default)]
    pub selection: SelectionSection,
}

impl Default for LabConfig {
    fn default() -> Self {
        LabConfig {
            schema_version: CONFIG_SCHEMA_VERSION,
            model: ModelSection::default(),
            dataset: DatasetSection::default(),
            training: TrainingSection::default(),
            guidance: GuidanceSection::default(),
            sweep: SweepSection::default(),
            selection: SelectionSection::default(),
        }
    }
}

impl LabConfig {
    pub fn from_toml(text: &str) -> Result<LabConfig> {
        let cfg: LabConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        if cfg.schema_version != CONFIG_SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "config schema version {} unsupported (expected {})",
                cfg.schema_version, CONFIG_SCHEMA_VERSION
            )));
        }
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<LabConfig> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Serialization(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelSection {
    pub init_seed: u64,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection { init_seed: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetKind {
    Verbatim,
    Template,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetSection {
    pub kind: DatasetKind,
    pub seed: u64,
    pub base_size: usize,
    pub memorized_count: usize,
    pub copies: usize,
    pub duplication_threshold: usize,
    pub template_variants: usize,
}

impl Default for DatasetSection {
    fn default() -> Self {
        let spec = DatasetSpec::verbatim_default(0);
        DatasetSection {
            kind: DatasetKind::Verbatim,
            seed: spec.seed,
            base_size: spec.base_size,
            memorized_count: spec.memorized_count,
            copies: spec.copies,
            duplication_threshold: spec.duplication_threshold,
            template_variants: spec.template_variants,
        }
    }
}

impl DatasetSection {
    pub fn to_spec(&self) -> DatasetSpec {
        let mut spec = match self.kind {
            DatasetKind::Verbatim => DatasetSpec::verbatim_default(self.seed),
            DatasetKind::Template => DatasetSpec::template_default(self.seed),
        };
        spec.base_size = self.base_size;
        spec.copies = self.copies;
        spec.duplication_threshold = self.duplication_threshold;
        match self.kind {
            DatasetKind::Verbatim => {
                spec.memorized_count = self.memorized_count;
                spec.template_variants = 0;
            }
            DatasetKind::Template => {
                spec.memorized_count = self.memorized_count;
                spec.template_variants = self.template_variants;
            }
        }
        spec
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub cond_dropout: f64,
    pub seed: u64,
    pub target_loss: Option<f64>,
}

impl Default for TrainingSection {
    fn default() -> Self {
        let c = TrainConfig::default();
        TrainingSection {
            epochs: c.epochs,
            batch_size: c.batch_size,
            lr: c.lr,
            cond_dropout: c.cond_dropout,
            seed: c.seed,
            target_loss: c.target_loss,
        }
    }
}

impl TrainingSection {
    pub fn to_config(&self, workers: usize) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            lr: self.lr,
            cond_dropout: self.cond_dropout,
            seed: self.seed,
            workers,
            target_loss: self.target_loss,
        }
    }
}

/// Method plus its knobs, flattened for ergonomic TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GuidanceSection {
    pub method: String,
    pub guidance: GuidanceConfig,
    pub rta_k: usize,
    pub wen_gamma: f64,
    pub ren_bot_boost: f64,
    pub record_trace: bool,
}

impl Default for GuidanceSection {
    fn default() -> Self {
        GuidanceSection {
            method: "none".into(),
            guidance: GuidanceConfig::default(),
            rta_k: 1,
            wen_gamma: 0.7,
            ren_bot_boost: 1.0,
            record_trace: false,
        }
    }
}

impl GuidanceSection {
    pub fn to_method(&self) -> Result<Method> {
        Ok(match self.method.as_str() {
            "none" => Method::None,
            "rta" => Method::Rta { k: self.rta_k },
            "wen_scale" => Method::WenScale { gamma: self.wen_gamma },
            "ren_mask" => Method::RenMask { bot_boost: self.ren_bot_boost },
            "ca_attenuation" => Method::CaAttenuation,
            "ca_guard" => Method::CaGuard,
            "semantic_guard" => Method::SemanticGuard { table: ParaphraseTable::default_toy() },
            other => {
                return Err(Error::Config(format!("unknown method \"{other}\"")));
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepSection {
    pub methods: Vec<String>,
    pub taus: Vec<f64>,
    pub alphas: Vec<f64>,
    pub rs: Vec<f64>,
    pub scales: Vec<f64>,
    pub steps: Vec<usize>,
    pub step_modes: Vec<StepMode>,
    pub rta_ks: Vec<usize>,
    pub wen_gammas: Vec<f64>,
    pub ren_boosts: Vec<f64>,
    pub generations_per_prompt: usize,
    pub base_seed: u64,
}

impl Default for SweepSection {
    fn default() -> Self {
        SweepSection {
            methods: vec!["none".into(), "ca_attenuation".into(), "ca_guard".into()],
            taus: vec![1.0, 2.0, 3.0],
            alphas: vec![0.1, 0.25, 0.5, 0.75, 1.0],
            rs: vec![0.0, 0.5, 1.0, 2.0],
            scales: vec![7.5],
            steps: vec![50],
            step_modes: vec![StepMode::EveryStep],
            rta_ks: vec![1, 2, 3],
            wen_gammas: vec![0.3, 0.5, 0.7],
            ren_boosts: vec![0.5, 1.0, 2.0],
            generations_per_prompt: crate::harness::GENERATIONS_PER_PROMPT,
            base_seed: 0,
        }
    }
}

impl SweepSection {
    /// Cartesian expansion of each method family over its relevant axes.
    pub fn expand(&self, base: &GuidanceConfig) -> Result<Vec<SweepPoint>> {
        let mut points = Vec::new();
        let mut seen = std::collections::BTreeSet::new();
        let mut push = |points: &mut Vec<SweepPoint>, p: SweepPoint| {
            if seen.insert(p.config_id()) {
                points.push(p);
            }
        };
        for method in &self.methods {
            for &s in &self.scales {
                for &steps in &self.steps {
                    for &mode in &self.step_modes {
                        let mut g = base.clone();
                        g.s = s;
                        g.steps = steps;
                        g.attenuation.step_mode = mode;
                        match method.as_str() {
                            "none" => push(&mut points, SweepPoint {
                                method: Method::None,
                                guidance: g,
                            }),
                            "rta" => {
                                for &k in &self.rta_ks {
                                    push(&mut points, SweepPoint {
                                        method: Method::Rta { k },
                                        guidance: g.clone(),
                                    });
                                }
                            }
                            "wen_scale" => {
                                for &gamma in &self.wen_gammas {
                                    push(&mut points, SweepPoint {
                                        method: Method::WenScale { gamma },
                                        guidance: g.clone(),
                                    });
                                }
                            }
                            "ren_mask" => {
                                for &b in &self.ren_boosts {
                                    push(&mut points, SweepPoint {
                                        method: Method::RenMask { bot_boost: b },
                                        guidance: g.clone(),
                                    });
                                }
                            }
                            "ca_attenuation" | "ca_guard" | "semantic_guard" => {
                                let rs: &[f64] = match method.as_str() {
                                    "ca_attenuation" => &[0.0],
                                    _ => &self.rs,
                                };
                                for &tau in &self.taus {
                                    for &alpha in &self.alphas {
                                        for &r in rs {
                                            let mut gg = g.clone();
                                            gg.tau = tau;
                                            gg.attenuation.alpha = alpha;
                                            gg.r = r;
                                            let m = match method.as_str() {
                                                "ca_attenuation" => Method::CaAttenuation,
                                                "ca_guard" => Method::CaGuard,
                                                _ => Method::SemanticGuard {
                                                    table: ParaphraseTable::default_toy(),
                                                },
                                            };
                                            push(&mut points, SweepPoint {
                                                method: m,
                                                guidance: gg,
                                            });
                                        }
                                    }
                                }
                            }
                            other => {
                                return Err(Error::Config(format!(
                                    "unknown sweep method \"{other}\""
                                )));
                            }
                        }
                    }
                }
            }
        }
        Ok(points)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SelectionSection {
    pub degradation_budget: f64,
    pub objective: Objective,
}

impl Default for SelectionSection {
    fn default() -> Self {
        SelectionSection { degradation_budget: 0.15, objective: Objective::BestSim }
    }
}

impl SelectionSection {
    pub fn to_rule(&self, reference_align: f64) -> SelectionRule {
        SelectionRule {
            reference_align,
            degradation_budget: self.degradation_budget,
            objective: self.objective,
        }
    }
}
