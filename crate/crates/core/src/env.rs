//! Episodic decision environment for a running experiment.
//!
//! One episode is one experiment.  The first decision happens at the end of
//! week 1, after the opening week has already been observed (an experiment
//! always runs at least one week).  At each decision point the agent keeps
//! running, stops and launches, or stops without launching; stopping is
//! absorbing.  Rewards use the current posterior mean of the effect, which
//! leaves the expected total unchanged but removes most of the variance.
//! The trajectory utility evaluates the same sums against the true effect.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::conjugate::{
    self, GaussianSummary, GroupId, GroupPrior, NoiseModel, PerGroup, SampleSchedule,
};
use crate::error::{Error, Result};

/// Decision available at a decision point.  The integer codes are part of the
/// checkpoint format and must not change.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Action {
    Continue,
    StopLaunch,
    StopNoLaunch,
}

impl Action {
    pub const COUNT: usize = 3;

    pub fn code(self) -> usize {
        match self {
            Action::Continue => 0,
            Action::StopLaunch => 1,
            Action::StopNoLaunch => 2,
        }
    }

    pub fn from_code(code: usize) -> Option<Action> {
        match code {
            0 => Some(Action::Continue),
            1 => Some(Action::StopLaunch),
            2 => Some(Action::StopNoLaunch),
            _ => None,
        }
    }

    pub fn is_stop(self) -> bool {
        self != Action::Continue
    }
}

/// Everything known about an experiment before it starts: priors, noise,
/// trigger schedule, costs, and horizons.  This doubles as the context vector
/// that lets one policy generalize across experiments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ContextJson", into = "ContextJson")]
pub struct ExperimentContext {
    pub priors: PerGroup<GroupPrior>,
    pub noise: PerGroup<NoiseModel>,
    pub schedule: SampleSchedule,
    /// Weekly cost of keeping the experiment running.
    pub weekly_cost: f64,
    /// One-time cost of launching the feature.
    pub hurdle_cost: f64,
    /// Post-experiment extrapolation horizon in weeks.
    pub post_horizon: u32,
}

impl ExperimentContext {
    pub fn new(
        priors: PerGroup<GroupPrior>,
        noise: PerGroup<NoiseModel>,
        schedule: SampleSchedule,
        weekly_cost: f64,
        hurdle_cost: f64,
        post_horizon: u32,
    ) -> Result<Self> {
        if schedule.horizon() < 2 {
            return Err(Error::Domain {
                name: "horizon",
                reason: format!("needs at least 2 weeks, got {}", schedule.horizon()),
            });
        }
        if !(weekly_cost.is_finite() && weekly_cost >= 0.0) {
            return Err(Error::Domain {
                name: "weekly_cost",
                reason: format!("must be finite and >= 0, got {weekly_cost}"),
            });
        }
        if !(hurdle_cost.is_finite() && hurdle_cost >= 0.0) {
            return Err(Error::Domain {
                name: "hurdle_cost",
                reason: format!("must be finite and >= 0, got {hurdle_cost}"),
            });
        }
        if post_horizon < 1 {
            return Err(Error::Domain {
                name: "post_horizon",
                reason: "must be at least 1 week".into(),
            });
        }
        Ok(Self {
            priors,
            noise,
            schedule,
            weekly_cost,
            hurdle_cost,
            post_horizon,
        })
    }

    /// Maximum experiment duration in weeks.
    pub fn horizon(&self) -> u32 {
        self.schedule.horizon()
    }

    /// Full-horizon triggered customers across both groups.
    pub fn total_customers(&self) -> f64 {
        self.schedule.cum_count_both(self.horizon()) as f64
    }
}

/// Flat JSON wire format for [`ExperimentContext`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ContextJson {
    pub mu0_tr: f64,
    pub sigma0_tr: f64,
    pub mu0_c: f64,
    pub sigma0_c: f64,
    pub sigma_tr: f64,
    pub sigma_c: f64,
    pub n_tr: Vec<u32>,
    pub n_c: Vec<u32>,
    pub weekly_cost: f64,
    pub hurdle_cost: f64,
    pub horizon_t: u32,
    pub post_horizon_h: u32,
}

impl TryFrom<ContextJson> for ExperimentContext {
    type Error = Error;

    fn try_from(j: ContextJson) -> Result<Self> {
        let schedule = SampleSchedule::new(j.n_tr, j.n_c)?;
        if schedule.horizon() != j.horizon_t {
            return Err(Error::InvalidConfig {
                field: "horizon_t".into(),
                reason: format!(
                    "horizon_t = {} but schedules have {} weeks",
                    j.horizon_t,
                    schedule.horizon()
                ),
            });
        }
        ExperimentContext::new(
            PerGroup::new(
                GroupPrior::new(j.mu0_tr, j.sigma0_tr)?,
                GroupPrior::new(j.mu0_c, j.sigma0_c)?,
            ),
            PerGroup::new(NoiseModel::new(j.sigma_tr)?, NoiseModel::new(j.sigma_c)?),
            schedule,
            j.weekly_cost,
            j.hurdle_cost,
            j.post_horizon_h,
        )
    }
}

impl From<ExperimentContext> for ContextJson {
    fn from(ctx: ExperimentContext) -> Self {
        ContextJson {
            mu0_tr: ctx.priors.treatment.mean,
            sigma0_tr: ctx.priors.treatment.sd,
            mu0_c: ctx.priors.control.mean,
            sigma0_c: ctx.priors.control.sd,
            sigma_tr: ctx.noise.treatment.sd,
            sigma_c: ctx.noise.control.sd,
            n_tr: ctx.schedule.weekly(GroupId::Treatment).to_vec(),
            n_c: ctx.schedule.weekly(GroupId::Control).to_vec(),
            weekly_cost: ctx.weekly_cost,
            hurdle_cost: ctx.hurdle_cost,
            horizon_t: ctx.schedule.horizon(),
            post_horizon_h: ctx.post_horizon,
        }
    }
}

/// Belief state: cumulative group means, the week index, and whether the
/// experiment has already been stopped.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BeliefState {
    pub w_bar: PerGroup<f64>,
    pub week: u32,
    pub terminated: bool,
}

/// Ground-truth group means for evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrueEffect {
    pub mu_tr: f64,
    pub mu_c: f64,
}

impl TrueEffect {
    pub fn delta(&self) -> f64 {
        self.mu_tr - self.mu_c
    }
}

/// Result of one environment step.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub next: BeliefState,
    pub reward: f64,
    /// Effect posterior the reward was computed from.
    pub info: GaussianSummary,
}

static ALL_ACTIONS: [Action; 3] = [Action::Continue, Action::StopLaunch, Action::StopNoLaunch];
static STOP_ACTIONS: [Action; 2] = [Action::StopLaunch, Action::StopNoLaunch];

/// Actions available at a week: all three strictly before the horizon, stop
/// actions only at the final week.
pub fn action_space(week: u32, horizon: u32) -> Result<&'static [Action]> {
    if week < 1 || week > horizon {
        return Err(Error::WeekOutOfRange { week, horizon });
    }
    if week < horizon {
        Ok(&ALL_ACTIONS)
    } else {
        Ok(&STOP_ACTIONS)
    }
}

/// Population-level impact of launching at the end of `week`: the effect
/// extrapolated over the remaining experiment weeks plus the post horizon,
/// across every customer triggered over the full schedule.
pub fn launch_impact(delta_hat: f64, ctx: &ExperimentContext, week: u32) -> f64 {
    let remaining = (ctx.post_horizon + ctx.horizon() - week) as f64;
    delta_hat * remaining * ctx.total_customers()
}

/// Per-step reward for a given effect estimate.  Both the environment reward
/// (posterior-mean effect) and the trajectory utility (true effect) evaluate
/// this one code path so their sums agree bit for bit.
fn reward_with_effect(
    week: u32,
    terminated: bool,
    action: Action,
    effect: f64,
    ctx: &ExperimentContext,
) -> Result<f64> {
    if terminated {
        return Ok(0.0);
    }
    let horizon = ctx.horizon();
    if !action_space(week, horizon)?.contains(&action) {
        return Err(Error::IllegalAction {
            action,
            week,
            horizon,
        });
    }
    Ok(match action {
        Action::Continue => {
            let exposure = ctx.schedule.cum_count(GroupId::Treatment, week + 1) as f64;
            -ctx.weekly_cost + effect * exposure
        }
        Action::StopLaunch => launch_impact(effect, ctx, week) - ctx.hurdle_cost,
        Action::StopNoLaunch => 0.0,
    })
}

/// Posterior of the treatment effect at the current state.
pub fn delta_estimate(state: &BeliefState, ctx: &ExperimentContext) -> Result<GaussianSummary> {
    let mut posts = Vec::with_capacity(2);
    for g in GroupId::BOTH {
        let coeffs = conjugate::weight_coeffs(&ctx.schedule, g, state.week)?;
        posts.push(conjugate::posterior_mean(
            ctx.priors.get(g),
            ctx.noise.get(g),
            *state.w_bar.get(g),
            &coeffs,
        ));
    }
    Ok(conjugate::delta_posterior(&posts[0], &posts[1]))
}

/// Instant reward of `action` in `state`, using the current posterior mean of
/// the effect.
pub fn reward(state: &BeliefState, action: Action, ctx: &ExperimentContext) -> Result<f64> {
    if state.terminated {
        return Ok(0.0);
    }
    let delta = delta_estimate(state, ctx)?;
    reward_with_effect(state.week, state.terminated, action, delta.mean, ctx)
}

/// The same per-step reward with the posterior mean replaced by the true
/// effect; summing this along a trajectory reproduces
/// [`trajectory_utility`]'s total bit for bit.
pub fn reward_from_truth(
    state: &BeliefState,
    action: Action,
    truth: &TrueEffect,
    ctx: &ExperimentContext,
) -> Result<f64> {
    reward_with_effect(state.week, state.terminated, action, truth.delta(), ctx)
}

/// Advance the environment one decision.  Continuing samples the next belief
/// state from the posterior-predictive transition; stopping freezes the state.
pub fn step<R: Rng>(
    state: &BeliefState,
    action: Action,
    ctx: &ExperimentContext,
    rng: &mut R,
) -> Result<StepOutcome> {
    let info = delta_estimate(state, ctx)?;
    if state.terminated {
        return Ok(StepOutcome {
            next: *state,
            reward: 0.0,
            info,
        });
    }
    let reward = reward_with_effect(state.week, false, action, info.mean, ctx)?;
    let next = match action {
        Action::Continue => conjugate::sample_transition(state, ctx, rng)?,
        Action::StopLaunch | Action::StopNoLaunch => BeliefState {
            terminated: true,
            ..*state
        },
    };
    Ok(StepOutcome { next, reward, info })
}

/// Week-1 belief state for a fresh experiment: draw each group mean from its
/// prior, then the opening week's cumulative mean from the outcome model.
pub fn initial_state<R: Rng>(ctx: &ExperimentContext, rng: &mut R) -> BeliefState {
    let mut w = [0.0f64; 2];
    for (slot, g) in w.iter_mut().zip(GroupId::BOTH) {
        let prior = ctx.priors.get(g);
        let mu = GaussianSummary {
            mean: prior.mean,
            variance: prior.sd * prior.sd,
        }
        .sample(rng);
        let n1 = ctx.schedule.cum_count(g, 1) as f64;
        let sd = ctx.noise.get(g).sd / n1.sqrt();
        *slot = GaussianSummary {
            mean: mu,
            variance: sd * sd,
        }
        .sample(rng);
    }
    BeliefState {
        w_bar: PerGroup::new(w[0], w[1]),
        week: 1,
        terminated: false,
    }
}

/// Week-1 belief state with group means fixed to the ground truth.
pub fn initial_state_from_truth<R: Rng>(
    ctx: &ExperimentContext,
    truth: &TrueEffect,
    rng: &mut R,
) -> BeliefState {
    let mut w = [0.0f64; 2];
    for (slot, g) in w.iter_mut().zip(GroupId::BOTH) {
        let mu = match g {
            GroupId::Treatment => truth.mu_tr,
            GroupId::Control => truth.mu_c,
        };
        let n1 = ctx.schedule.cum_count(g, 1) as f64;
        let sd = ctx.noise.get(g).sd / n1.sqrt();
        *slot = GaussianSummary {
            mean: mu,
            variance: sd * sd,
        }
        .sample(rng);
    }
    BeliefState {
        w_bar: PerGroup::new(w[0], w[1]),
        week: 1,
        terminated: false,
    }
}

/// Advance one week with the data-generating group means fixed to the truth
/// (evaluation-time transitions).
pub fn advance_from_truth<R: Rng>(
    state: &BeliefState,
    ctx: &ExperimentContext,
    truth: &TrueEffect,
    rng: &mut R,
) -> Result<BeliefState> {
    if state.terminated {
        return Err(Error::Terminated);
    }
    let mut w = [0.0f64; 2];
    for (slot, g) in w.iter_mut().zip(GroupId::BOTH) {
        let mu = match g {
            GroupId::Treatment => truth.mu_tr,
            GroupId::Control => truth.mu_c,
        };
        let pred = conjugate::predictive_next(
            ctx.noise.get(g),
            mu,
            *state.w_bar.get(g),
            &ctx.schedule,
            g,
            state.week,
        )?;
        *slot = pred.sample(rng);
    }
    Ok(BeliefState {
        w_bar: PerGroup::new(w[0], w[1]),
        week: state.week + 1,
        terminated: false,
    })
}

/// Labeled components of a trajectory's utility under the true effect.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UtilityBreakdown {
    /// Signed running-cost term (zero or negative).
    pub opportunity_cost: f64,
    /// Treatment-group exposure impact accrued while the experiment ran.
    pub experiment_impact: f64,
    /// Launch term including the hurdle cost (zero if never launched).
    pub launch_impact: f64,
    /// Week-ordered sum of the per-step terms above.
    pub total: f64,
}

/// Evaluate a trajectory's utility against the true effect.  The total is the
/// week-ordered sum of the same per-step rewards the environment would emit
/// with the posterior mean replaced by the true effect.
pub fn trajectory_utility(
    traj: &[(BeliefState, Action)],
    truth: &TrueEffect,
    ctx: &ExperimentContext,
) -> Result<UtilityBreakdown> {
    if traj.is_empty() {
        return Err(Error::MalformedTrajectory("empty trajectory".into()));
    }
    let delta = truth.delta();
    let mut out = UtilityBreakdown {
        opportunity_cost: 0.0,
        experiment_impact: 0.0,
        launch_impact: 0.0,
        total: 0.0,
    };
    let mut stops = 0u32;
    let mut prev: Option<(u32, bool, Action)> = None;
    for (state, action) in traj {
        if let Some((prev_week, prev_term, prev_action)) = prev {
            let expect_term = prev_term || prev_action.is_stop();
            if state.terminated != expect_term {
                return Err(Error::MalformedTrajectory(format!(
                    "termination flag at week {} inconsistent with prior action",
                    state.week
                )));
            }
            let expect_week = if expect_term { prev_week } else { prev_week + 1 };
            if state.week != expect_week {
                return Err(Error::MalformedTrajectory(format!(
                    "week jumped from {prev_week} to {}",
                    state.week
                )));
            }
        }
        if !state.terminated && action.is_stop() {
            stops += 1;
            if stops > 1 {
                return Err(Error::MalformedTrajectory("more than one stop".into()));
            }
        }
        let r = reward_with_effect(state.week, state.terminated, *action, delta, ctx)?;
        if !state.terminated {
            match action {
                Action::Continue => {
                    out.opportunity_cost += -ctx.weekly_cost;
                    out.experiment_impact +=
                        delta * ctx.schedule.cum_count(GroupId::Treatment, state.week + 1) as f64;
                }
                Action::StopLaunch => out.launch_impact += r,
                Action::StopNoLaunch => {}
            }
        }
        out.total += r;
        prev = Some((state.week, state.terminated, *action));
    }
    Ok(out)
}
