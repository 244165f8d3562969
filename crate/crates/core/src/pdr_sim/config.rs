use std::path::{Path, PathBuf};
use std::sync::Arc;

use super::{generate_pool, PdrConfig, PoolItem, Population, Rule, SimModel, Timing};
use crate::error::{Error, Result};
use crate::features::format_float;
use crate::kv::{KvDocument, Section};
use crate::model::load_model;

/// Where a simulated decision model comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum ModelSource {
    Oracle,
    Perturbed {
        ability_scale: f64,
        learning_scale: f64,
        forgetting_d: Option<f64>,
        intercept_shift: f64,
    },
    File(PathBuf),
}

/// Everything a simulation run needs, read from the key-value format:
/// `[simulation]`, `[timing]`, `[population]`, `[pool]` or repeated
/// `[item]`, repeated `[rule]` and repeated `[model]` sections.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulationConfig {
    pub students: usize,
    pub seed: u64,
    pub mastery_threshold: f64,
    pub timing: Timing,
    pub population: Population,
    pub pool: Vec<PoolItem>,
    pub pdrs: Vec<PdrConfig>,
    pub models: Vec<(String, ModelSource)>,
}

fn cfg_err(s: &Section, e: Error) -> Error {
    match e {
        Error::Config { .. } => e,
        other => Error::config(s.line, other.to_string()),
    }
}

impl SimulationConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let doc = KvDocument::parse(text)?;
        for s in &doc.sections {
            if !["simulation", "timing", "population", "pool", "item", "rule", "model"].contains(&s.name.as_str()) {
                return Err(Error::config(s.line, format!("unknown section [{}]", s.name)));
            }
        }
        let empty = Section::new("");
        let sim = doc.section("simulation").unwrap_or(&empty);
        sim.check_keys(&["students", "seed", "mastery_threshold"])?;
        let students = sim.parse_or("students", 500usize)?;
        let seed = sim.parse_or("seed", 0u64)?;
        let mastery_threshold = sim.parse_or("mastery_threshold", 0.95)?;
        if !(mastery_threshold > 0.0 && mastery_threshold < 1.0) || students == 0 {
            return Err(Error::config(sim.line, "need students >= 1 and mastery_threshold in (0, 1)"));
        }

        let t = doc.section("timing").unwrap_or(&empty);
        t.check_keys(&[
            "success_duration_ms",
            "failure_duration_multiplier",
            "feedback_duration_ms",
            "time_budget_ms",
        ])?;
        let d = Timing::default();
        let timing = Timing {
            success_duration_ms: t.parse_or("success_duration_ms", d.success_duration_ms)?,
            failure_duration_multiplier: t.parse_or("failure_duration_multiplier", d.failure_duration_multiplier)?,
            feedback_duration_ms: t.parse_or("feedback_duration_ms", d.feedback_duration_ms)?,
            time_budget_ms: t.parse_or("time_budget_ms", d.time_budget_ms)?,
        };
        timing.validate().map_err(|e| cfg_err(t, e))?;

        let p = doc.section("population").unwrap_or(&empty);
        p.check_keys(&["ability_sd", "learning_rate", "recency_weight", "forgetting_d"])?;
        let dp = Population::default();
        let population = Population {
            ability_sd: p.parse_or("ability_sd", dp.ability_sd)?,
            learning_rate: p.parse_or("learning_rate", dp.learning_rate)?,
            recency_weight: p.parse_or("recency_weight", dp.recency_weight)?,
            forgetting_d: p.parse_or("forgetting_d", dp.forgetting_d)?,
        };
        if !(population.ability_sd >= 0.0 && population.forgetting_d > 0.0) {
            return Err(Error::config(p.line, "need ability_sd >= 0 and forgetting_d > 0"));
        }

        let mut pool = Vec::new();
        for s in doc.sections_named("item") {
            s.check_keys(&["id", "intercept", "part", "tags"])?;
            let tags = match s.get("tags") {
                None => Vec::new(),
                Some(e) => e
                    .value
                    .split_whitespace()
                    .map(|t| t.parse::<u32>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| Error::config(e.line, "tags must be space-separated integers"))?,
            };
            let part: u8 = s.parse_or("part", 1)?;
            if !(1..=7).contains(&part) {
                return Err(Error::config(s.line, "part must be in 1..7"));
            }
            pool.push(PoolItem {
                id: Arc::from(s.require("id")?.value.as_str()),
                part,
                tags,
                intercept: s
                    .parse_opt("intercept")?
                    .ok_or_else(|| Error::config(s.line, "[item] is missing `intercept`"))?,
            });
        }
        if let Some(s) = doc.section("pool") {
            if !pool.is_empty() {
                return Err(Error::config(s.line, "use either [pool] or [item] sections, not both"));
            }
            s.check_keys(&["size", "intercept_min", "intercept_max"])?;
            let size: usize = s.parse_or("size", 30)?;
            pool = generate_pool(size, s.parse_or("intercept_min", -3.0)?, s.parse_or("intercept_max", 3.0)?);
        }
        if pool.is_empty() {
            pool = generate_pool(30, -3.0, 3.0);
        }

        let mut pdrs = Vec::new();
        for s in doc.sections_named("rule") {
            s.check_keys(&["name", "kind", "threshold", "n", "p_star"])?;
            let kind = s.require("kind")?;
            let rule = match kind.value.as_str() {
                "mastery" => Rule::Mastery {
                    threshold: s.parse_or("threshold", 0.95)?,
                },
                "drop_n" => Rule::DropN { n: s.parse_or("n", 3)? },
                "target_difficulty" => Rule::TargetDifficulty {
                    p_star: s.parse_opt("p_star")?.ok_or_else(|| Error::config(s.line, "missing `p_star`"))?,
                },
                other => return Err(Error::config(kind.line, format!("unknown rule kind `{other}`"))),
            };
            let name = s.get("name").map_or_else(|| kind.value.clone(), |e| e.value.clone());
            pdrs.push(PdrConfig::new(&name, rule, timing).map_err(|e| cfg_err(s, e))?);
        }
        if pdrs.is_empty() {
            return Err(Error::config(0, "at least one [rule] section is required"));
        }

        let mut models = Vec::new();
        for s in doc.sections_named("model") {
            s.check_keys(&[
                "name",
                "kind",
                "ability_scale",
                "learning_scale",
                "forgetting_d",
                "intercept_shift",
                "path",
            ])?;
            let kind = s.require("kind")?;
            let source = match kind.value.as_str() {
                "oracle" => ModelSource::Oracle,
                "perturbed" => ModelSource::Perturbed {
                    ability_scale: s.parse_or("ability_scale", 1.0)?,
                    learning_scale: s.parse_or("learning_scale", 1.0)?,
                    forgetting_d: s.parse_opt("forgetting_d")?,
                    intercept_shift: s.parse_or("intercept_shift", 0.0)?,
                },
                "file" => ModelSource::File(PathBuf::from(&s.require("path")?.value)),
                other => return Err(Error::config(kind.line, format!("unknown model kind `{other}`"))),
            };
            let name = s.get("name").map_or_else(|| kind.value.clone(), |e| e.value.clone());
            models.push((name, source));
        }
        if models.is_empty() {
            models.push(("oracle".to_string(), ModelSource::Oracle));
        }
        Ok(SimulationConfig {
            students,
            seed,
            mastery_threshold,
            timing,
            population,
            pool,
            pdrs,
            models,
        })
    }

    /// Loads file-backed models relative to `base`.
    pub fn resolve_models(&self, base: &Path) -> Result<Vec<(String, SimModel)>> {
        self.models
            .iter()
            .map(|(name, src)| {
                let m = match src {
                    ModelSource::Oracle => SimModel::Oracle,
                    ModelSource::Perturbed {
                        ability_scale,
                        learning_scale,
                        forgetting_d,
                        intercept_shift,
                    } => SimModel::Perturbed {
                        ability_scale: *ability_scale,
                        learning_scale: *learning_scale,
                        forgetting_d: *forgetting_d,
                        intercept_shift: *intercept_shift,
                    },
                    ModelSource::File(p) => {
                        let path = if p.is_absolute() { p.clone() } else { base.join(p) };
                        let f = std::fs::File::open(&path)?;
                        SimModel::Fitted(Arc::new(load_model(std::io::BufReader::new(f))?))
                    }
                };
                Ok((name.clone(), m))
            })
            .collect()
    }

    /// Canonical text form of the effective configuration.
    pub fn to_text(&self) -> String {
        let mut sections = Vec::new();
        let mut s = Section::new("simulation");
        s.push("students", self.students);
        s.push("seed", self.seed);
        s.push("mastery_threshold", format_float(self.mastery_threshold));
        sections.push(s);
        let mut s = Section::new("timing");
        s.push("success_duration_ms", self.timing.success_duration_ms);
        s.push("failure_duration_multiplier", format_float(self.timing.failure_duration_multiplier));
        s.push("feedback_duration_ms", self.timing.feedback_duration_ms);
        s.push("time_budget_ms", self.timing.time_budget_ms);
        sections.push(s);
        let mut s = Section::new("population");
        s.push("ability_sd", format_float(self.population.ability_sd));
        s.push("learning_rate", format_float(self.population.learning_rate));
        s.push("recency_weight", format_float(self.population.recency_weight));
        s.push("forgetting_d", format_float(self.population.forgetting_d));
        sections.push(s);
        for it in &self.pool {
            let mut s = Section::new("item");
            s.push("id", &it.id);
            s.push("intercept", format_float(it.intercept));
            s.push("part", it.part);
            let tags: Vec<String> = it.tags.iter().map(|t| t.to_string()).collect();
            s.push("tags", tags.join(" "));
            sections.push(s);
        }
        for p in &self.pdrs {
            let mut s = Section::new("rule");
            s.push("name", &p.name);
            match p.rule {
                Rule::Mastery { threshold } => {
                    s.push("kind", "mastery");
                    s.push("threshold", format_float(threshold));
                }
                Rule::DropN { n } => {
                    s.push("kind", "drop_n");
                    s.push("n", n);
                }
                Rule::TargetDifficulty { p_star } => {
                    s.push("kind", "target_difficulty");
                    s.push("p_star", format_float(p_star));
                }
            }
            sections.push(s);
        }
        for (name, src) in &self.models {
            let mut s = Section::new("model");
            s.push("name", name);
            match src {
                ModelSource::Oracle => s.push("kind", "oracle"),
                ModelSource::Perturbed {
                    ability_scale,
                    learning_scale,
                    forgetting_d,
                    intercept_shift,
                } => {
                    s.push("kind", "perturbed");
                    s.push("ability_scale", format_float(*ability_scale));
                    s.push("learning_scale", format_float(*learning_scale));
                    if let Some(d) = forgetting_d {
                        s.push("forgetting_d", format_float(*d));
                    }
                    s.push("intercept_shift", format_float(*intercept_shift));
                }
                ModelSource::File(p) => {
                    s.push("kind", "file");
                    s.push("path", p.display());
                }
            }
            sections.push(s);
        }
        KvDocument { sections }.to_text()
    }
}
