//! Experiment configuration: the JSON schema the CLI consumes.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::glm::GlmFamily;
use crate::policy::PolicyKind;
use crate::rewards::AggregationSpec;

fn default_update_every() -> usize {
    1
}

fn default_max_reward() -> f64 {
    1.0
}

/// One experiment: problem dimensions, horizon, policy roster, and
/// output location. Keys in the JSON file match the field names; unknown
/// keys are rejected so typos cannot silently change an experiment.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Number of candidate items.
    pub n: usize,
    /// Number of display positions per round.
    pub k: usize,
    /// Context dimension.
    pub d: usize,
    /// Horizon (rounds per run).
    pub t: usize,
    /// Random-initialization rounds at the start of every run.
    pub t0: usize,
    /// Independent repetitions per policy.
    pub runs: usize,
    /// Root seed; per-run streams are derived from it.
    pub base_seed: u64,
    /// Policies to execute (curves are paired across them).
    pub policies: Vec<PolicyKind>,
    pub family: GlmFamily,
    pub spec: AggregationSpec,
    /// Output stem: CSVs land at `<output>_raw.csv` / `<output>_agg.csv`.
    pub output: PathBuf,
    /// Feedback is buffered and applied in batches of this size.
    #[serde(default = "default_update_every")]
    pub update_every: usize,
    /// Largest admissible single outcome (reward ceiling).
    #[serde(default = "default_max_reward")]
    pub max_reward: f64,
}

impl ExperimentConfig {
    pub fn from_json(json: &str) -> Result<Self> {
        serde_json::from_str(json).map_err(|e| Error::Config(format!("config: {e}")))
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        Self::from_json(&text)
    }

    /// Structural validation. Returns advisory warnings (experiment is
    /// runnable but potentially ill-posed) on success.
    pub fn validate(&self) -> Result<Vec<String>> {
        if self.k > self.n {
            return Err(Error::Config(format!(
                "k = {} exceeds n = {} items",
                self.k, self.n
            )));
        }
        if self.k == 0 || self.d == 0 {
            return Err(Error::Config("k and d must be at least 1".into()));
        }
        if self.t0 >= self.t {
            return Err(Error::Config(format!(
                "t0 = {} must be smaller than the horizon t = {}",
                self.t0, self.t
            )));
        }
        if self.runs == 0 {
            return Err(Error::Config("runs must be at least 1".into()));
        }
        if self.update_every == 0 {
            return Err(Error::Config("update_every must be at least 1".into()));
        }
        if self.policies.is_empty() {
            return Err(Error::Config("at least one policy is required".into()));
        }
        for p in &self.policies {
            if let PolicyKind::Ucr { xi } = p {
                if !(*xi >= 0.0) || !xi.is_finite() {
                    return Err(Error::Config(format!(
                        "ucr xi must be finite and nonnegative, got {xi}"
                    )));
                }
            }
        }
        if !(self.max_reward > 0.0) || !self.max_reward.is_finite() {
            return Err(Error::Config(format!(
                "max_reward must be positive and finite, got {}",
                self.max_reward
            )));
        }
        self.spec
            .validate(self.n)
            .map_err(|e| Error::Config(e.to_string()))?;
        if let AggregationSpec::Revenue { prices } = &self.spec {
            let max_price = prices.iter().cloned().fold(0.0, f64::max);
            if max_price > self.max_reward {
                return Err(Error::Config(format!(
                    "largest price {max_price} exceeds max_reward {}; revenue outcomes would be rejected",
                    self.max_reward
                )));
            }
        }
        if let GlmFamily::Linear { noise_scale } = self.family {
            if !(noise_scale >= 0.0) || !noise_scale.is_finite() {
                return Err(Error::Config(format!(
                    "noise_scale must be finite and nonnegative, got {noise_scale}"
                )));
            }
            if matches!(self.spec, AggregationSpec::ClickThrough) {
                return Err(Error::Config(
                    "click_through needs means in [0, 1), which the linear family does not guarantee"
                        .into(),
                ));
            }
        }
        if self.output.as_os_str().is_empty() {
            return Err(Error::Config("output path must not be empty".into()));
        }

        let mut warnings = Vec::new();
        // coverage heuristic: with fewer than ~2 observations per item
        // expected during initialization, early selects will often have
        // to fall back to random rounds
        if self.t0 * self.k < 2 * self.n {
            warnings.push(format!(
                "t0 * k = {} < 2n = {}: initialization may leave items unseen or poorly covered",
                self.t0 * self.k,
                2 * self.n
            ));
        }
        Ok(warnings)
    }
}
