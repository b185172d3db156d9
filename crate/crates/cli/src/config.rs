//! Run configuration: one self-describing JSON document per run.
//!
//! Flags only choose the command and file paths; every parameter that affects
//! results lives in the config so the file itself is the reproducibility
//! artifact.  The master seed is required — there is no wall-clock fallback.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use earlystop::dqn::TrainingConfig;
use earlystop::harness::{DGPConfig, Method};
use earlystop::policy::Policy;
use earlystop::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed; every named random stream derives from it.
    pub seed: u64,
    #[serde(default)]
    pub dgp: DGPConfig,
    #[serde(default)]
    pub training: TrainingConfig,
    #[serde(default = "default_methods")]
    pub methods: Vec<MethodConfig>,
    /// Trajectories per experiment; defaults to about 50k total.
    #[serde(default)]
    pub replications_per_experiment: Option<usize>,
}

fn default_methods() -> Vec<MethodConfig> {
    vec![
        MethodConfig::Ffht { alpha: None },
        MethodConfig::AlphaSpending { alpha: None },
        MethodConfig::Bfht {},
        MethodConfig::Bfhod {},
        MethodConfig::Bf { threshold: 3.0 },
        MethodConfig::Bf { threshold: 10.0 },
        MethodConfig::Bf { threshold: 30.0 },
        MethodConfig::Pos {
            threshold: 3.0,
            prior_odds: None,
        },
        MethodConfig::Avp {
            alpha: None,
            tau: None,
        },
        MethodConfig::Rl {},
    ]
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "id", rename_all = "snake_case", deny_unknown_fields)]
pub enum MethodConfig {
    Ffht {
        #[serde(default)]
        alpha: Option<f64>,
    },
    AlphaSpending {
        #[serde(default)]
        alpha: Option<f64>,
    },
    Bfht {},
    Bfhod {},
    Bf {
        threshold: f64,
    },
    Pos {
        threshold: f64,
        #[serde(default)]
        prior_odds: Option<f64>,
    },
    Avp {
        #[serde(default)]
        alpha: Option<f64>,
        #[serde(default)]
        tau: Option<f64>,
    },
    Rl {},
}

impl MethodConfig {
    pub fn needs_policy(&self) -> bool {
        matches!(self, MethodConfig::Rl {})
    }

    pub fn to_method(&self, policy: Option<&Arc<Policy>>) -> Result<Method> {
        Ok(match self {
            MethodConfig::Ffht { alpha } => Method::Ffht {
                alpha: alpha.unwrap_or(0.05),
            },
            MethodConfig::AlphaSpending { alpha } => Method::AlphaSpending {
                alpha: alpha.unwrap_or(0.05),
            },
            MethodConfig::Bfht {} => Method::Bfht,
            MethodConfig::Bfhod {} => Method::Bfhod,
            MethodConfig::Bf { threshold } => Method::BayesFactor {
                threshold: *threshold,
                priors: None,
            },
            MethodConfig::Pos {
                threshold,
                prior_odds,
            } => Method::PosteriorOdds {
                threshold: *threshold,
                priors: None,
                prior_odds: *prior_odds,
            },
            MethodConfig::Avp { alpha, tau } => Method::Avp {
                alpha: alpha.unwrap_or(0.05),
                tau: *tau,
            },
            MethodConfig::Rl {} => Method::Rl(Arc::clone(policy.ok_or_else(|| {
                Error::InvalidConfig {
                    field: "methods".into(),
                    reason: "method 'rl' requires --policy".into(),
                }
            })?)),
        })
    }
}

impl RunConfig {
    pub fn load(path: &std::path::Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })?;
        let cfg: RunConfig = serde_json::from_str(&text).map_err(|e| Error::InvalidConfig {
            field: path.display().to_string(),
            reason: e.to_string(),
        })?;
        cfg.dgp.validate()?;
        cfg.training.validate()?;
        if let Some(0) = cfg.replications_per_experiment {
            return Err(Error::InvalidConfig {
                field: "replications_per_experiment".into(),
                reason: "must be at least 1".into(),
            });
        }
        Ok(cfg)
    }

    /// Apply a `--seed` override and propagate the master seed to the
    /// components that carry their own copy.
    pub fn with_seed(mut self, seed_override: Option<u64>) -> RunConfig {
        if let Some(s) = seed_override {
            self.seed = s;
        }
        self.dgp.seed = self.seed;
        self.training.seed = self.seed;
        self
    }
}

/// Belief-state observation supplied to `slice` and `recommend`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObservationJson {
    pub week: u32,
    pub w_bar_tr: f64,
    pub w_bar_c: f64,
    #[serde(default)]
    pub terminated: bool,
}

impl ObservationJson {
    pub fn to_state(self) -> earlystop::env::BeliefState {
        earlystop::env::BeliefState {
            w_bar: earlystop::conjugate::PerGroup::new(self.w_bar_tr, self.w_bar_c),
            week: self.week,
            terminated: self.terminated,
        }
    }
}

/// Axes specification for `slice`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AxesSpec {
    pub week: u32,
    #[serde(default)]
    pub w_bar_tr: f64,
    #[serde(default)]
    pub w_bar_c: f64,
    pub axis1: AxisSpec,
    pub axis2: AxisSpec,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AxisSpec {
    pub field: String,
    pub values: Vec<f64>,
}
