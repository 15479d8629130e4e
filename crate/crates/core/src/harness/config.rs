use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::backends::BackendConfig;
use crate::domain::DEFAULT_WINDOW;
use crate::merging::MergeParams;
use crate::retrieval::{SimilarityParams, Strategy};
use crate::tracking::TrackingParams;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompanySpec {
    pub ticker: String,
    /// Name used in prompts; the ticker when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
}

impl CompanySpec {
    pub fn new(ticker: impl Into<String>, name: impl Into<String>) -> Self {
        CompanySpec { ticker: ticker.into(), name: Some(name.into()) }
    }

    pub fn display_name(&self) -> &str {
        self.name.as_deref().unwrap_or(&self.ticker)
    }
}

/// Inclusive date range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DateRange {
    pub start: NaiveDate,
    pub end: NaiveDate,
}

impl DateRange {
    pub fn contains(&self, d: NaiveDate) -> bool {
        self.start <= d && d <= self.end
    }
}

/// What fills the `{information}` slot of the prompts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Representation {
    /// Structured events with chains and incremental information.
    #[default]
    Event,
    /// Per-document plain-text summaries.
    Summary,
    /// Clusters of similar document summaries.
    ClusterOpinion,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct AblationFlags {
    pub representation: Representation,
    pub delta_info: bool,
    pub strategy: Strategy,
}

impl Default for AblationFlags {
    fn default() -> Self {
        AblationFlags { representation: Representation::Event, delta_info: true, strategy: Strategy::Full }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReflectionParams {
    /// Also reflect on days whose next-day move is flat.
    pub include_flat: bool,
}

impl Default for ReflectionParams {
    fn default() -> Self {
        ReflectionParams { include_flat: true }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct DataPaths {
    /// Line-delimited news documents.
    pub news: PathBuf,
    /// CSV with columns `company,date,daily_return`.
    pub prices: PathBuf,
    /// Store directory; in-memory when absent.
    pub store: Option<PathBuf>,
    /// Directory of prompt overrides (`<name>.txt`).
    pub prompts: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BacktestConfig {
    pub companies: Vec<CompanySpec>,
    pub train: DateRange,
    pub test: DateRange,
    #[serde(default = "default_window")]
    pub window: usize,
    #[serde(default)]
    pub ablation: AblationFlags,
    /// `retrieval.window` always follows the top-level `window`.
    #[serde(default)]
    pub retrieval: SimilarityParams,
    #[serde(default)]
    pub merge: MergeParams,
    #[serde(default)]
    pub tracking: TrackingParams,
    #[serde(default)]
    pub reflection: ReflectionParams,
    #[serde(default)]
    pub backend: BackendConfig,
    #[serde(default)]
    pub data: DataPaths,
}

fn default_window() -> usize {
    DEFAULT_WINDOW
}

impl BacktestConfig {
    pub fn new(companies: Vec<CompanySpec>, train: DateRange, test: DateRange) -> Self {
        BacktestConfig {
            companies,
            train,
            test,
            window: DEFAULT_WINDOW,
            ablation: AblationFlags::default(),
            retrieval: SimilarityParams::default(),
            merge: MergeParams::default(),
            tracking: TrackingParams::default(),
            reflection: ReflectionParams::default(),
            backend: BackendConfig::default(),
            data: DataPaths::default(),
        }
    }

    /// Parses TOML. Relative data paths resolve against `base_dir`.
    pub fn from_toml(text: &str, base_dir: &Path) -> Result<Self, HarnessError> {
        let mut cfg: BacktestConfig = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        let rebase = |p: &mut PathBuf| {
            if p.is_relative() && !p.as_os_str().is_empty() {
                *p = base_dir.join(&*p);
            }
        };
        rebase(&mut cfg.data.news);
        rebase(&mut cfg.data.prices);
        if let Some(p) = cfg.data.store.as_mut() {
            rebase(p);
        }
        if let Some(p) = cfg.data.prompts.as_mut() {
            rebase(p);
        }
        if let Some(f) = cfg.backend.fixture.as_mut() {
            if Path::new(f).is_relative() {
                *f = base_dir.join(&*f).display().to_string();
            }
        }
        cfg.normalize();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = fs::read_to_string(path).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn normalize(&mut self) {
        self.retrieval.window = self.window;
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(m));
        if self.companies.is_empty() {
            return bad("no companies configured".into());
        }
        let mut seen = BTreeSet::new();
        for c in &self.companies {
            if c.ticker.trim().is_empty() || !seen.insert(&c.ticker) {
                return bad(format!("empty or duplicate ticker {:?}", c.ticker));
            }
        }
        for (name, r) in [("train", self.train), ("test", self.test)] {
            if r.start > r.end {
                return bad(format!("{name} range {}..{} is empty", r.start, r.end));
            }
        }
        if self.train.end >= self.test.start {
            return bad(format!("train end {} is not before test start {}", self.train.end, self.test.start));
        }
        if self.window == 0 {
            return bad("window must be at least 1".into());
        }
        if self.retrieval.window != self.window {
            return bad(format!("retrieval.window {} differs from window {}", self.retrieval.window, self.window));
        }
        if !(0.0..=1.0).contains(&self.retrieval.alpha) {
            return bad(format!("retrieval.alpha {} outside [0, 1]", self.retrieval.alpha));
        }
        if !(-1.0..=1.0).contains(&self.merge.cosine_threshold) {
            return bad(format!("merge.cosine_threshold {} outside [-1, 1]", self.merge.cosine_threshold));
        }
        if self.tracking.k_track == 0 {
            return bad("tracking.k_track must be at least 1".into());
        }
        if self.ablation.representation != Representation::Event && self.ablation.delta_info {
            return bad(format!(
                "representation {:?} has no event chains; set ablation.delta_info = false",
                self.ablation.representation
            ));
        }
        if self.ablation.strategy != Strategy::None && self.retrieval.coarse_k == 0 {
            return bad(format!("strategy {:?} needs retrieval.coarse_k >= 1", self.ablation.strategy));
        }
        Ok(())
    }

    pub fn company(&self, ticker: &str) -> Option<&CompanySpec> {
        self.companies.iter().find(|c| c.ticker == ticker)
    }
}
