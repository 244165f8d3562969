use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::kv::{KvDocument, Section};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FeatureKind {
    Intercept,
    Count,
    LogCount,
    Recency,
    RecencyWeightedCount,
    Errordec,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Level {
    Item,
    Student,
    Part,
    TagComboInPart,
    Cluster,
    Lecture,
    OverallSuccess,
    OverallFailure,
}

impl FeatureKind {
    pub fn name(self) -> &'static str {
        match self {
            FeatureKind::Intercept => "intercept",
            FeatureKind::Count => "count",
            FeatureKind::LogCount => "log_count",
            FeatureKind::Recency => "recency",
            FeatureKind::RecencyWeightedCount => "recency_weighted_count",
            FeatureKind::Errordec => "errordec",
        }
    }

    /// Name of the nonlinear parameter this kind carries, if any.
    pub fn param_name(self) -> Option<&'static str> {
        match self {
            FeatureKind::Recency => Some("d"),
            FeatureKind::RecencyWeightedCount => Some("w"),
            FeatureKind::Errordec => Some("dec"),
            _ => None,
        }
    }

    /// Search interval for the nonlinear parameter.
    pub fn param_bounds(self) -> Option<(f64, f64)> {
        match self {
            FeatureKind::Recency => Some((0.001, 1.2)),
            FeatureKind::RecencyWeightedCount | FeatureKind::Errordec => Some((0.01, 1.0)),
            _ => None,
        }
    }

    fn default_param(self) -> Option<f64> {
        match self {
            FeatureKind::Recency => Some(0.5),
            FeatureKind::RecencyWeightedCount => Some(0.5),
            FeatureKind::Errordec => Some(0.9),
            _ => None,
        }
    }
}

impl FromStr for FeatureKind {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Ok(match s {
            "intercept" => FeatureKind::Intercept,
            "count" => FeatureKind::Count,
            "log_count" => FeatureKind::LogCount,
            "recency" => FeatureKind::Recency,
            "recency_weighted_count" => FeatureKind::RecencyWeightedCount,
            "errordec" => FeatureKind::Errordec,
            other => return Err(format!("unknown feature kind `{other}`")),
        })
    }
}

impl Level {
    pub const ALL: [Level; 8] = [
        Level::Item,
        Level::Student,
        Level::Part,
        Level::TagComboInPart,
        Level::Cluster,
        Level::Lecture,
        Level::OverallSuccess,
        Level::OverallFailure,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Level::Item => "item",
            Level::Student => "student",
            Level::Part => "part",
            Level::TagComboInPart => "tag_combo_in_part",
            Level::Cluster => "cluster",
            Level::Lecture => "lecture",
            Level::OverallSuccess => "overall_success",
            Level::OverallFailure => "overall_failure",
        }
    }

    /// Levels whose events identify a specific instance (an item, a combo...).
    pub fn has_instances(self) -> bool {
        matches!(
            self,
            Level::Item | Level::Student | Level::Part | Level::TagComboInPart | Level::Cluster
        )
    }
}

impl FromStr for Level {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Level::ALL
            .iter()
            .copied()
            .find(|l| l.name() == s)
            .ok_or_else(|| format!("unknown level `{s}`"))
    }
}

impl fmt::Display for FeatureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One predictor: a function of history at some level.
#[derive(Debug, Clone, PartialEq)]
pub struct Descriptor {
    pub kind: FeatureKind,
    pub level: Level,
    /// The decay exponent `d`, weight `w` or decay `dec`, depending on kind.
    pub param: Option<f64>,
    /// Instances seen this many times or fewer share a fallback column.
    pub min_occurrence: u32,
    /// Give each instance its own coefficient (intercepts always do).
    pub per_instance: bool,
    /// Route rare or unseen instances to a per-part fallback column.
    pub fallback: bool,
}

impl Descriptor {
    pub fn new(kind: FeatureKind, level: Level) -> Self {
        Descriptor {
            kind,
            level,
            param: kind.default_param(),
            min_occurrence: 0,
            per_instance: false,
            fallback: true,
        }
    }

    pub fn with_param(mut self, v: f64) -> Self {
        self.param = Some(v);
        self
    }

    pub fn with_min_occurrence(mut self, n: u32) -> Self {
        self.min_occurrence = n;
        self
    }

    pub fn per_instance(mut self) -> Self {
        self.per_instance = true;
        self
    }

    pub fn without_fallback(mut self) -> Self {
        self.fallback = false;
        self
    }

    /// True when the descriptor maps each instance to its own column.
    pub fn is_instanced(&self) -> bool {
        self.kind == FeatureKind::Intercept || self.per_instance
    }

    pub fn label(&self) -> String {
        format!("{}:{}", self.kind, self.level)
    }

    fn validate(&self) -> Result<()> {
        use FeatureKind::*;
        use Level::*;
        let ok = match self.kind {
            Intercept => self.level.has_instances(),
            Count | LogCount => true,
            Recency | RecencyWeightedCount => self.level.has_instances(),
            Errordec => self.level == Student,
        };
        if !ok {
            return Err(Error::param(format!("{} is not defined at level {}", self.kind, self.level)));
        }
        if self.per_instance && !self.level.has_instances() {
            return Err(Error::param(format!("level {} has no instances", self.level)));
        }
        match (self.kind.param_name(), self.param) {
            (None, Some(_)) => Err(Error::param(format!("{} takes no nonlinear parameter", self.kind))),
            (Some(name), None) => Err(Error::param(format!("{} needs `{name}`", self.kind))),
            (Some(name), Some(v)) => {
                let legal = match self.kind {
                    Recency => v > 0.0 && v.is_finite(),
                    _ => v > 0.0 && v <= 1.0,
                };
                if legal {
                    Ok(())
                } else {
                    Err(Error::param(format!("{name} = {v} is out of range for {}", self.kind)))
                }
            }
            (None, None) => Ok(()),
        }
    }
}

/// Ordered list of feature descriptors.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSpec {
    descriptors: Vec<Descriptor>,
}

impl FeatureSpec {
    pub fn new(descriptors: Vec<Descriptor>) -> Result<Self> {
        if descriptors.is_empty() {
            return Err(Error::param("feature spec has no descriptors"));
        }
        for d in &descriptors {
            d.validate()?;
        }
        if descriptors.iter().filter(|d| d.kind == FeatureKind::Errordec).count() > 1 {
            return Err(Error::param("at most one errordec descriptor is allowed"));
        }
        if descriptors.len() > u16::MAX as usize {
            return Err(Error::param("too many descriptors"));
        }
        Ok(FeatureSpec { descriptors })
    }

    pub fn descriptors(&self) -> &[Descriptor] {
        &self.descriptors
    }

    pub fn len(&self) -> usize {
        self.descriptors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.descriptors.is_empty()
    }

    pub fn errordec_index(&self) -> Option<usize> {
        self.descriptors.iter().position(|d| d.kind == FeatureKind::Errordec)
    }

    pub fn errordec_param(&self) -> Option<f64> {
        self.errordec_index().and_then(|i| self.descriptors[i].param)
    }

    /// Indices of descriptors with a nonlinear parameter.
    pub fn nonlinear_indices(&self) -> Vec<usize> {
        (0..self.descriptors.len())
            .filter(|&i| self.descriptors[i].kind.param_name().is_some())
            .collect()
    }

    /// Replaces a descriptor's nonlinear parameter, checking its range.
    pub fn set_param(&mut self, index: usize, value: f64) -> Result<()> {
        let mut d = self.descriptors[index].clone();
        d.param = Some(value);
        d.validate()?;
        self.descriptors[index] = d;
        Ok(())
    }

    pub fn uses_level(&self, level: Level) -> bool {
        self.descriptors.iter().any(|d| d.level == level)
    }

    /// The same spec minus the errordec descriptor (None if nothing remains).
    pub fn without_errordec(&self) -> Option<FeatureSpec> {
        let rest: Vec<_> = self
            .descriptors
            .iter()
            .filter(|d| d.kind != FeatureKind::Errordec)
            .cloned()
            .collect();
        if rest.is_empty() {
            None
        } else {
            Some(FeatureSpec { descriptors: rest })
        }
    }

    pub fn from_kv(doc: &KvDocument) -> Result<Self> {
        let mut descriptors = Vec::new();
        for s in &doc.sections {
            if s.name != "feature" {
                continue;
            }
            s.check_keys(&["kind", "level", "d", "w", "dec", "min_occurrence", "per_instance", "fallback"])?;
            let kind_entry = s.require("kind")?;
            let kind: FeatureKind = kind_entry
                .value
                .parse()
                .map_err(|e: String| Error::config(kind_entry.line, e))?;
            let level_entry = s.require("level")?;
            let level: Level = level_entry
                .value
                .parse()
                .map_err(|e: String| Error::config(level_entry.line, e))?;
            let mut d = Descriptor::new(kind, level);
            for name in ["d", "w", "dec"] {
                if let Some(v) = s.parse_opt::<f64>(name)? {
                    if kind.param_name() != Some(name) {
                        let line = s.get(name).map(|e| e.line).unwrap_or(s.line);
                        return Err(Error::config(line, format!("`{name}` does not apply to {kind}")));
                    }
                    d.param = Some(v);
                }
            }
            d.min_occurrence = s.parse_or("min_occurrence", 0u32)?;
            d.per_instance = s.parse_or("per_instance", false)?;
            d.fallback = s.parse_or("fallback", true)?;
            d.validate().map_err(|e| Error::config(s.line, e.to_string()))?;
            descriptors.push(d);
        }
        FeatureSpec::new(descriptors)
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::from_kv(&KvDocument::parse(text)?)
    }

    pub fn to_kv(&self) -> KvDocument {
        let sections = self
            .descriptors
            .iter()
            .map(|d| {
                let mut s = Section::new("feature");
                s.push("kind", d.kind);
                s.push("level", d.level);
                if let (Some(name), Some(v)) = (d.kind.param_name(), d.param) {
                    s.push(name, format_float(v));
                }
                if d.min_occurrence != 0 {
                    s.push("min_occurrence", d.min_occurrence);
                }
                if d.per_instance {
                    s.push("per_instance", true);
                }
                if !d.fallback {
                    s.push("fallback", false);
                }
                s
            })
            .collect();
        KvDocument { sections }
    }

    pub fn to_text(&self) -> String {
        self.to_kv().to_text()
    }
}

/// Shortest representation that parses back to the same bits.
pub(crate) fn format_float(v: f64) -> String {
    format!("{v:?}")
}
