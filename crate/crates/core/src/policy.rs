//! Trained decision policy: Q-network plus the normalization constants it
//! was fitted with, serialized as a single JSON checkpoint.
//!
//! The checkpoint is the deployment artifact, so its format is pinned:
//! `{version, input_spec, feature_norm, reward_scale, layers}` with every
//! number written as a decimal with 17 significant digits (enough to make
//! save -> load -> save byte-identical).

use std::fmt::Write as _;
use std::path::Path;

use serde::Deserialize;

use crate::conjugate::GroupId;
use crate::env::{self, Action, BeliefState, ExperimentContext};
use crate::error::{Error, Result};
use crate::nn::{Dense, Mlp};

pub const CHECKPOINT_VERSION: u32 = 1;

/// Per-feature affine normalization: `(x - shift) / scale`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureNorm {
    pub shift: Vec<f64>,
    pub scale: Vec<f64>,
}

impl FeatureNorm {
    pub fn identity(dim: usize) -> Self {
        FeatureNorm {
            shift: vec![0.0; dim],
            scale: vec![1.0; dim],
        }
    }

    /// Fit shift/scale to the sample mean and standard deviation of a cohort
    /// of raw feature vectors.  Constant features get unit scale.
    pub fn fit(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if n < 2 {
            return Err(Error::Domain {
                name: "feature_norm",
                reason: "needs at least two rows to fit".into(),
            });
        }
        let dim = rows[0].len();
        let mut shift = vec![0.0; dim];
        for row in rows {
            for (s, v) in shift.iter_mut().zip(row) {
                *s += v;
            }
        }
        for s in shift.iter_mut() {
            *s /= n as f64;
        }
        let mut scale = vec![0.0; dim];
        for row in rows {
            for ((sc, m), v) in scale.iter_mut().zip(&shift).zip(row) {
                *sc += (v - m) * (v - m);
            }
        }
        for sc in scale.iter_mut() {
            *sc = (*sc / (n as f64 - 1.0)).sqrt();
            if *sc < 1e-9 {
                *sc = 1.0;
            }
        }
        Ok(FeatureNorm { shift, scale })
    }

    pub fn apply(&self, raw: &mut [f64]) {
        for ((v, m), s) in raw.iter_mut().zip(&self.shift).zip(&self.scale) {
            *v = (*v - m) / s;
        }
    }
}

/// Ordered feature names for a given experiment horizon.
pub fn input_spec_for_horizon(horizon: u32) -> Vec<String> {
    let mut spec = vec![
        "w_bar_tr".to_string(),
        "w_bar_c".to_string(),
        "week_frac".to_string(),
        "terminated".to_string(),
        "mu0_tr".to_string(),
        "mu0_c".to_string(),
        "sigma0_tr".to_string(),
        "sigma0_c".to_string(),
        "sigma_tr".to_string(),
        "sigma_c".to_string(),
    ];
    for t in 1..=horizon {
        spec.push(format!("n_tr_{t}"));
    }
    for t in 1..=horizon {
        spec.push(format!("n_c_{t}"));
    }
    spec.push("weekly_cost".to_string());
    spec.push("hurdle_cost".to_string());
    spec.push("post_horizon_h".to_string());
    spec
}

/// Raw (unnormalized) feature vector: belief state, progress, then the full
/// context so one network can serve every experiment.
pub fn raw_features(state: &BeliefState, ctx: &ExperimentContext) -> Vec<f64> {
    let horizon = ctx.horizon();
    let mut f = Vec::with_capacity(13 + 2 * horizon as usize);
    f.push(state.w_bar.treatment);
    f.push(state.w_bar.control);
    f.push(f64::from(state.week) / f64::from(horizon));
    f.push(if state.terminated { 1.0 } else { 0.0 });
    f.push(ctx.priors.treatment.mean);
    f.push(ctx.priors.control.mean);
    f.push(ctx.priors.treatment.sd);
    f.push(ctx.priors.control.sd);
    f.push(ctx.noise.treatment.sd);
    f.push(ctx.noise.control.sd);
    for g in GroupId::BOTH {
        for &n in ctx.schedule.weekly(g) {
            f.push(f64::from(n));
        }
    }
    f.push(ctx.weekly_cost);
    f.push(ctx.hurdle_cost);
    f.push(f64::from(ctx.post_horizon));
    f
}

/// Normalized feature vector.
pub fn featurize(state: &BeliefState, ctx: &ExperimentContext, norm: &FeatureNorm) -> Vec<f64> {
    let mut f = raw_features(state, ctx);
    norm.apply(&mut f);
    f
}

/// Q-network checkpoint: the network, its feature normalization, the reward
/// scale used during training, and the feature names it expects.
#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    pub net: Mlp,
    pub feature_norm: FeatureNorm,
    pub reward_scale: f64,
    pub input_spec: Vec<String>,
}

impl Policy {
    /// Validate internal consistency (shapes chain, 3 outputs, positive
    /// scales).
    pub fn validate(&self) -> Result<()> {
        self.net.check_shapes()?;
        if self.net.output_dim() != Action::COUNT {
            return Err(Error::ShapeMismatch {
                got: self.net.output_dim(),
                want: Action::COUNT,
            });
        }
        if self.net.input_dim() != self.input_spec.len() {
            return Err(Error::ShapeMismatch {
                got: self.input_spec.len(),
                want: self.net.input_dim(),
            });
        }
        if self.feature_norm.shift.len() != self.input_spec.len()
            || self.feature_norm.scale.len() != self.input_spec.len()
        {
            return Err(Error::ShapeMismatch {
                got: self.feature_norm.shift.len(),
                want: self.input_spec.len(),
            });
        }
        if !self.feature_norm.scale.iter().all(|&s| s > 0.0 && s.is_finite()) {
            return Err(Error::Domain {
                name: "feature_norm.scale",
                reason: "entries must be positive and finite".into(),
            });
        }
        if !(self.reward_scale > 0.0 && self.reward_scale.is_finite()) {
            return Err(Error::Domain {
                name: "reward_scale",
                reason: format!("{}", self.reward_scale),
            });
        }
        Ok(())
    }

    /// Q-values for an already-normalized feature vector.
    pub fn q_forward(&self, features: &[f64]) -> Result<[f64; 3]> {
        let out = self.net.forward(features)?;
        Ok([out[0], out[1], out[2]])
    }

    /// Q-values at a belief state.
    pub fn q_values(&self, state: &BeliefState, ctx: &ExperimentContext) -> Result<[f64; 3]> {
        self.q_forward(&featurize(state, ctx, &self.feature_norm))
    }

    /// Greedy action: argmax of the Q-values over the actions legal at this
    /// week, ties broken by the lowest action code.
    pub fn act(&self, state: &BeliefState, ctx: &ExperimentContext) -> Result<Action> {
        let q = self.q_values(state, ctx)?;
        let legal = env::action_space(state.week, ctx.horizon())?;
        let mut best = legal[0];
        for &a in &legal[1..] {
            if q[a.code()] > q[best.code()] {
                best = a;
            }
        }
        Ok(best)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json_string()).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Policy> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })?;
        Policy::from_json_str(&text)
    }

    /// Serialize with a fixed field order and 17-significant-digit decimals.
    pub fn to_json_string(&self) -> String {
        let mut s = String::new();
        s.push_str("{\n");
        let _ = write!(s, "  \"version\": {},\n", CHECKPOINT_VERSION);
        s.push_str("  \"input_spec\": [");
        for (i, name) in self.input_spec.iter().enumerate() {
            if i > 0 {
                s.push_str(", ");
            }
            let _ = write!(s, "{}", serde_json::to_string(name).unwrap());
        }
        s.push_str("],\n");
        s.push_str("  \"feature_norm\": {\"shift\": ");
        push_f64_array(&mut s, &self.feature_norm.shift);
        s.push_str(", \"scale\": ");
        push_f64_array(&mut s, &self.feature_norm.scale);
        s.push_str("},\n");
        let _ = write!(s, "  \"reward_scale\": {},\n", fmt_f64(self.reward_scale));
        s.push_str("  \"layers\": [\n");
        for (i, layer) in self.net.layers.iter().enumerate() {
            let _ = write!(
                s,
                "    {{\"rows\": {}, \"cols\": {}, \"weights\": ",
                layer.rows, layer.cols
            );
            push_f64_array(&mut s, &layer.weights);
            s.push_str(", \"biases\": ");
            push_f64_array(&mut s, &layer.biases);
            s.push('}');
            if i + 1 < self.net.layers.len() {
                s.push(',');
            }
            s.push('\n');
        }
        s.push_str("  ]\n}\n");
        s
    }

    pub fn from_json_str(text: &str) -> Result<Policy> {
        let parsed: CheckpointJson = serde_json::from_str(text).map_err(|e| Error::PolicyParse {
            offset: offset_of(text, e.line(), e.column()),
            message: e.to_string(),
        })?;
        if parsed.version != CHECKPOINT_VERSION {
            return Err(Error::PolicyParse {
                offset: 0,
                message: format!("unsupported checkpoint version {}", parsed.version),
            });
        }
        let policy = Policy {
            net: Mlp {
                layers: parsed.layers,
            },
            feature_norm: FeatureNorm {
                shift: parsed.feature_norm.shift,
                scale: parsed.feature_norm.scale,
            },
            reward_scale: parsed.reward_scale,
            input_spec: parsed.input_spec,
        };
        policy.validate()?;
        Ok(policy)
    }
}

/// Decimal with 17 significant digits; round-trips f64 exactly.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn push_f64_array(s: &mut String, values: &[f64]) {
    s.push('[');
    for (i, v) in values.iter().enumerate() {
        if i > 0 {
            s.push_str(", ");
        }
        let _ = write!(s, "{}", fmt_f64(*v));
    }
    s.push(']');
}

fn offset_of(text: &str, line: usize, column: usize) -> usize {
    if line == 0 {
        return 0;
    }
    let mut offset = 0;
    for (i, l) in text.split('\n').enumerate() {
        if i + 1 == line {
            return offset + column.saturating_sub(1).min(l.len());
        }
        offset += l.len() + 1;
    }
    text.len()
}

#[derive(Deserialize)]
struct CheckpointJson {
    version: u32,
    input_spec: Vec<String>,
    feature_norm: NormJson,
    reward_scale: f64,
    layers: Vec<Dense>,
}

#[derive(Deserialize)]
struct NormJson {
    shift: Vec<f64>,
    scale: Vec<f64>,
}
