//! Finite-horizon contextual Q-learning with experience replay.
//!
//! A single network, conditioned on the week index and the experiment's
//! context features, is trained across a cohort of environments with
//! epsilon-greedy exploration and undiscounted TD targets.  Targets at the
//! final week (or after a stop) are the raw reward; bootstrapping always
//! maximizes over the actions that are actually legal next week.
//!
//! Training is plain minibatch gradient descent with a fixed learning rate,
//! no target network, rewards divided by a cohort-level scale fitted during a
//! short random-policy warmup.  Everything is driven by named seed streams,
//! so the same config, cohort, and seed reproduce the returned policy bit for
//! bit.

use rand::Rng;

use crate::env::{self, Action, BeliefState, ExperimentContext};
use crate::error::{Error, Result};
use crate::nn::Mlp;
use crate::policy::{featurize, input_spec_for_horizon, FeatureNorm, Policy};
use crate::rng::stream;

/// One stored transition.  `next_features` is absent exactly when the
/// transition ended the episode (a stop action, which is forced at the final
/// week).
#[derive(Debug, Clone)]
pub struct ReplayItem {
    pub features: Vec<f64>,
    pub action: Action,
    /// Reward in scaled units.
    pub reward: f64,
    pub next_features: Option<Vec<f64>>,
    pub week: u32,
}

/// Hyperparameters for [`train`].
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct TrainingConfig {
    pub episodes: usize,
    pub replay_capacity: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Exploration probability decays linearly from `epsilon_start` to
    /// `epsilon_end` over the first `epsilon_decay_fraction` of episodes.
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    pub epsilon_decay_fraction: f64,
    pub hidden_widths: Vec<usize>,
    pub seed: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            episodes: 20_000,
            replay_capacity: 100_000,
            batch_size: 64,
            learning_rate: 1e-3,
            epsilon_start: 1.0,
            epsilon_end: 0.05,
            epsilon_decay_fraction: 0.8,
            hidden_widths: vec![128, 128],
            seed: 0,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("replay_capacity", self.replay_capacity as f64),
            ("batch_size", self.batch_size as f64),
            ("learning_rate", self.learning_rate),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidConfig {
                    field: name.into(),
                    reason: format!("must be positive, got {v}"),
                });
            }
        }
        for (name, v) in [
            ("epsilon_start", self.epsilon_start),
            ("epsilon_end", self.epsilon_end),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidConfig {
                    field: name.into(),
                    reason: format!("must be in [0,1], got {v}"),
                });
            }
        }
        if self.epsilon_end > self.epsilon_start {
            return Err(Error::InvalidConfig {
                field: "epsilon_end".into(),
                reason: "schedule must be nonincreasing".into(),
            });
        }
        if !(0.0..=1.0).contains(&self.epsilon_decay_fraction) {
            return Err(Error::InvalidConfig {
                field: "epsilon_decay_fraction".into(),
                reason: format!("must be in [0,1], got {}", self.epsilon_decay_fraction),
            });
        }
        if self.hidden_widths.is_empty() || self.hidden_widths.contains(&0) {
            return Err(Error::InvalidConfig {
                field: "hidden_widths".into(),
                reason: format!("{:?}", self.hidden_widths),
            });
        }
        Ok(())
    }

    /// Exploration probability for episode `e` of `self.episodes`.
    pub fn epsilon(&self, episode: usize) -> f64 {
        let cutoff = (self.episodes as f64 * self.epsilon_decay_fraction).max(1.0);
        if episode as f64 >= cutoff {
            return self.epsilon_end;
        }
        let frac = episode as f64 / cutoff;
        self.epsilon_start + (self.epsilon_end - self.epsilon_start) * frac
    }
}

/// Undiscounted TD target for one stored transition: the reward alone when
/// the transition was terminal, otherwise reward plus the best legal
/// next-week Q-value.
pub fn td_target(item: &ReplayItem, policy: &Policy, horizon: u32) -> Result<f64> {
    match &item.next_features {
        None => Ok(item.reward),
        Some(next) => {
            let q = policy.q_forward(next)?;
            let legal = env::action_space(item.week + 1, horizon)?;
            let best = legal
                .iter()
                .map(|a| q[a.code()])
                .fold(f64::NEG_INFINITY, f64::max);
            Ok(item.reward + best)
        }
    }
}

/// Outcome of a training run: the policy and the (unscaled) return of every
/// behavior episode.
pub struct TrainResult {
    pub policy: Policy,
    pub episode_returns: Vec<f64>,
}

fn greedy(policy: &Policy, state: &BeliefState, ctx: &ExperimentContext) -> Result<Action> {
    policy.act(state, ctx)
}

/// Train a contextual Q-network over a cohort of experiment contexts.
pub fn train(cfg: &TrainingConfig, cohort: &[ExperimentContext]) -> Result<TrainResult> {
    cfg.validate()?;
    if cohort.is_empty() {
        return Err(Error::InvalidConfig {
            field: "cohort".into(),
            reason: "must be nonempty".into(),
        });
    }
    let horizon = cohort[0].horizon();
    for ctx in cohort {
        if ctx.horizon() != horizon {
            return Err(Error::InvalidConfig {
                field: "cohort".into(),
                reason: "mixed horizons in one cohort".into(),
            });
        }
    }
    let input_spec = input_spec_for_horizon(horizon);

    // Random-policy warmup fits the feature normalization and reward scale.
    let warmup_episodes = cohort.len().clamp(128, 2000);
    let mut warm_rows: Vec<Vec<f64>> = Vec::new();
    let mut warm_rewards: Vec<f64> = Vec::new();
    for w in 0..warmup_episodes {
        let ctx = &cohort[w % cohort.len()];
        let mut rng = stream(cfg.seed, "dqn/warmup", &[w as u64]);
        let mut state = env::initial_state(ctx, &mut rng);
        loop {
            warm_rows.push(crate::policy::raw_features(&state, ctx));
            let legal = env::action_space(state.week, horizon)?;
            let action = legal[rng.random_range(0..legal.len())];
            let out = env::step(&state, action, ctx, &mut rng)?;
            if out.reward != 0.0 {
                warm_rewards.push(out.reward);
            }
            if out.next.terminated {
                break;
            }
            state = out.next;
        }
    }
    let feature_norm = FeatureNorm::fit(&warm_rows)?;
    let reward_scale = {
        let rms = (warm_rewards.iter().map(|r| r * r).sum::<f64>()
            / warm_rewards.len().max(1) as f64)
            .sqrt();
        if rms > 1e-9 {
            rms
        } else {
            1.0
        }
    };

    let mut dims = vec![input_spec.len()];
    dims.extend_from_slice(&cfg.hidden_widths);
    dims.push(Action::COUNT);
    let net = Mlp::init(&dims, &mut stream(cfg.seed, "dqn/init", &[]))?;

    let mut policy = Policy {
        net,
        feature_norm,
        reward_scale,
        input_spec,
    };

    let mut replay: Vec<ReplayItem> = Vec::with_capacity(cfg.replay_capacity.min(1 << 20));
    let mut write_head = 0usize;
    let mut episode_returns = Vec::with_capacity(cfg.episodes);
    let mut max_scaled_reward: f64 = 1.0;

    for e in 0..cfg.episodes {
        let mut rng = stream(cfg.seed, "dqn/episode", &[e as u64]);
        let ctx = &cohort[rng.random_range(0..cohort.len())];
        let mut state = env::initial_state(ctx, &mut rng);
        let eps = cfg.epsilon(e);
        let mut ep_return = 0.0;
        loop {
            let legal = env::action_space(state.week, horizon)?;
            let action = if rng.random::<f64>() < eps {
                legal[rng.random_range(0..legal.len())]
            } else {
                greedy(&policy, &state, ctx)?
            };
            let out = env::step(&state, action, ctx, &mut rng)?;
            ep_return += out.reward;
            let scaled = out.reward / policy.reward_scale;
            max_scaled_reward = max_scaled_reward.max(scaled.abs());
            let item = ReplayItem {
                features: featurize(&state, ctx, &policy.feature_norm),
                action,
                reward: scaled,
                next_features: if out.next.terminated {
                    None
                } else {
                    Some(featurize(&out.next, ctx, &policy.feature_norm))
                },
                week: state.week,
            };
            if replay.len() < cfg.replay_capacity {
                replay.push(item);
            } else {
                replay[write_head] = item;
                write_head = (write_head + 1) % cfg.replay_capacity;
            }

            if replay.len() >= cfg.batch_size {
                learn_step(&mut policy, &replay, cfg, horizon, max_scaled_reward, &mut rng)?;
            }

            if out.next.terminated {
                break;
            }
            state = out.next;
        }
        episode_returns.push(ep_return);
    }

    Ok(TrainResult {
        policy,
        episode_returns,
    })
}

fn learn_step<R: Rng>(
    policy: &mut Policy,
    replay: &[ReplayItem],
    cfg: &TrainingConfig,
    horizon: u32,
    max_scaled_reward: f64,
    rng: &mut R,
) -> Result<()> {
    let guard = 1e6 * f64::from(horizon) * max_scaled_reward;
    let batch = cfg.batch_size;
    let mut grads = policy.net.zero_gradients();
    for _ in 0..batch {
        let item = &replay[rng.random_range(0..replay.len())];
        let target = td_target(item, policy, horizon)?;
        let trace = policy.net.forward_trace(&item.features)?;
        let q = trace.activations.last().unwrap();
        let predicted = q[item.action.code()];
        let worst = q
            .iter()
            .chain(std::iter::once(&target))
            .fold(0.0f64, |m, v| m.max(v.abs()));
        if worst > guard {
            return Err(Error::Divergence {
                magnitude: worst,
                guard,
            });
        }
        let mut grad_out = [0.0; Action::COUNT];
        grad_out[item.action.code()] = 2.0 * (predicted - target) / batch as f64;
        policy.net.backward(&trace, &grad_out, &mut grads);
    }
    policy.net.sgd_step(&grads, cfg.learning_rate);
    Ok(())
}
