//! Simulation meta-analysis: cohort generation, method evaluation, metric
//! aggregation, the value-of-information checker, and policy-behavior slices.
//!
//! Evaluation separates two worlds.  Data is generated from the *true* group
//! means (the ground truth drawn when the cohort was built), while every
//! decision procedure only sees the belief state.  Utility components are
//! scored against the truth; the per-step environment rewards (posterior-mean
//! form) are recorded alongside so the two accountings can be reconciled.
//!
//! All randomness is split per (experiment, replication) from one master
//! seed, so parallel and serial runs produce identical outcomes.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::sync::Arc;

use crate::baselines::{self, OneSidedPriors, SeqStats};
use crate::conjugate::{GroupId, GroupPrior, NoiseModel, PerGroup, SampleSchedule};
use crate::env::{
    self, Action, BeliefState, ExperimentContext, TrueEffect, UtilityBreakdown,
};
use crate::error::{Error, Result};
use crate::policy::Policy;
use crate::rng::stream;

/// Simulated data-generating process for a cohort of experiments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DGPConfig {
    pub n_experiments: usize,
    /// Customers per experiment that could ever trigger.
    pub customers_per_experiment: u64,
    pub horizon_t: u32,
    pub post_horizon_h: u32,
    /// Beta-geometric trigger-model parameter ranges.
    pub alpha_range: (f64, f64),
    pub beta_range: (f64, f64),
    pub mu0_tr: f64,
    pub sigma0_tr: f64,
    pub mu0_c: f64,
    pub sigma0_c: f64,
    pub sigma_tr: f64,
    pub sigma_c: f64,
    /// Split across experiments in proportion to their trigger counts.
    pub total_weekly_cost: f64,
    pub hurdle_cost: f64,
    pub seed: u64,
}

impl Default for DGPConfig {
    fn default() -> Self {
        DGPConfig {
            n_experiments: 3000,
            customers_per_experiment: 10_000,
            horizon_t: 4,
            post_horizon_h: 52,
            alpha_range: (0.1, 1.0),
            beta_range: (4.0, 60.0),
            mu0_tr: 0.1,
            sigma0_tr: 2.83,
            mu0_c: 0.1,
            sigma0_c: 2.0,
            sigma_tr: 100.0,
            sigma_c: 100.0,
            total_weekly_cost: 1.5e8,
            hurdle_cost: 0.0,
            seed: 0,
        }
    }
}

impl DGPConfig {
    pub fn validate(&self) -> Result<()> {
        let field = |name: &str, ok: bool, reason: String| -> Result<()> {
            if ok {
                Ok(())
            } else {
                Err(Error::InvalidConfig {
                    field: name.into(),
                    reason,
                })
            }
        };
        field(
            "n_experiments",
            self.n_experiments >= 1,
            "must be at least 1".into(),
        )?;
        field(
            "customers_per_experiment",
            self.customers_per_experiment >= 1,
            "must be at least 1".into(),
        )?;
        field("horizon_t", self.horizon_t >= 2, "must be at least 2".into())?;
        field(
            "post_horizon_h",
            self.post_horizon_h >= 1,
            "must be at least 1".into(),
        )?;
        for (name, (lo, hi)) in [("alpha_range", self.alpha_range), ("beta_range", self.beta_range)]
        {
            field(name, lo > 0.0 && hi >= lo, format!("bad range ({lo}, {hi})"))?;
        }
        for (name, v) in [
            ("sigma0_tr", self.sigma0_tr),
            ("sigma0_c", self.sigma0_c),
            ("sigma_tr", self.sigma_tr),
            ("sigma_c", self.sigma_c),
        ] {
            field(name, v > 0.0 && v.is_finite(), format!("must be positive, got {v}"))?;
        }
        field(
            "total_weekly_cost",
            self.total_weekly_cost >= 0.0 && self.total_weekly_cost.is_finite(),
            format!("must be nonnegative, got {}", self.total_weekly_cost),
        )?;
        field(
            "hurdle_cost",
            self.hurdle_cost >= 0.0 && self.hurdle_cost.is_finite(),
            format!("must be nonnegative, got {}", self.hurdle_cost),
        )?;
        Ok(())
    }
}

/// Sign label of an experiment's true effect.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroundTruthLabel {
    Positive,
    Negative,
    Null,
}

/// One generated experiment: its context and hidden ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortExperiment {
    pub ctx: ExperimentContext,
    pub truth: TrueEffect,
    pub label: GroundTruthLabel,
}

impl CohortExperiment {
    fn label_for(truth: &TrueEffect) -> GroundTruthLabel {
        match truth.delta().partial_cmp(&0.0) {
            Some(std::cmp::Ordering::Greater) => GroundTruthLabel::Positive,
            Some(std::cmp::Ordering::Less) => GroundTruthLabel::Negative,
            _ => GroundTruthLabel::Null,
        }
    }
}

/// Expected weekly trigger counts under a beta-geometric first-trigger model:
/// a customer's weekly trigger chance is Beta(alpha, beta), so the week-k
/// trigger probability is `m_k = alpha / (alpha+beta) * prod (beta+j-1) /
/// (alpha+beta+j)`.  Counts are rounded expectations with at least one
/// first-week customer.
pub fn beta_geometric_sizes(alpha: f64, beta: f64, customers: u64, horizon: u32) -> Result<Vec<u32>> {
    if !(alpha > 0.0 && beta > 0.0) {
        return Err(Error::Domain {
            name: "beta_geometric",
            reason: format!("alpha, beta must be positive, got ({alpha}, {beta})"),
        });
    }
    let mut m_k = alpha / (alpha + beta);
    let mut counts = Vec::with_capacity(horizon as usize);
    for k in 1..=horizon {
        let n = (customers as f64 * m_k).round();
        counts.push(n.clamp(0.0, u32::MAX as f64) as u32);
        m_k *= (beta + f64::from(k) - 1.0) / (alpha + beta + f64::from(k));
    }
    if counts[0] == 0 {
        counts[0] = 1;
    }
    Ok(counts)
}

/// Generate a cohort: per experiment, draw trigger-model parameters and true
/// group means, split the weekly counts evenly across arms, then decompose
/// the total weekly cost in proportion to trigger counts.
pub fn generate_cohort(cfg: &DGPConfig) -> Result<Vec<CohortExperiment>> {
    cfg.validate()?;
    struct Draft {
        schedule: SampleSchedule,
        truth: TrueEffect,
        customers: u64,
    }
    let mut drafts = Vec::with_capacity(cfg.n_experiments);
    for i in 0..cfg.n_experiments {
        let mut rng = stream(cfg.seed, "cohort", &[i as u64]);
        let alpha = rng.random_range(cfg.alpha_range.0..=cfg.alpha_range.1);
        let beta = rng.random_range(cfg.beta_range.0..=cfg.beta_range.1);
        let totals =
            beta_geometric_sizes(alpha, beta, cfg.customers_per_experiment, cfg.horizon_t)?;
        let mut per_group: Vec<u32> = totals
            .iter()
            .map(|&n| (f64::from(n) / 2.0).round() as u32)
            .collect();
        if per_group[0] == 0 {
            per_group[0] = 1;
        }
        let schedule = SampleSchedule::symmetric(per_group)?;
        let truth = TrueEffect {
            mu_tr: crate::conjugate::GaussianSummary {
                mean: cfg.mu0_tr,
                variance: cfg.sigma0_tr * cfg.sigma0_tr,
            }
            .sample(&mut rng),
            mu_c: crate::conjugate::GaussianSummary {
                mean: cfg.mu0_c,
                variance: cfg.sigma0_c * cfg.sigma0_c,
            }
            .sample(&mut rng),
        };
        let customers = schedule.cum_count_both(cfg.horizon_t);
        drafts.push(Draft {
            schedule,
            truth,
            customers,
        });
    }
    let total_customers: u64 = drafts.iter().map(|d| d.customers).sum();
    drafts
        .into_iter()
        .map(|d| {
            let weekly_cost =
                cfg.total_weekly_cost * d.customers as f64 / total_customers as f64;
            let ctx = ExperimentContext::new(
                PerGroup::new(
                    GroupPrior::new(cfg.mu0_tr, cfg.sigma0_tr)?,
                    GroupPrior::new(cfg.mu0_c, cfg.sigma0_c)?,
                ),
                PerGroup::new(NoiseModel::new(cfg.sigma_tr)?, NoiseModel::new(cfg.sigma_c)?),
                d.schedule,
                weekly_cost,
                cfg.hurdle_cost,
                cfg.post_horizon_h,
            )?;
            Ok(CohortExperiment {
                label: CohortExperiment::label_for(&d.truth),
                truth: d.truth,
                ctx,
            })
        })
        .collect()
}

/// Default replications per experiment so the whole cohort contributes about
/// fifty thousand trajectories.
pub fn default_replications(n_experiments: usize) -> usize {
    50_000usize.div_ceil(n_experiments.max(1))
}

/// A per-experiment instantiation of a decision procedure.
pub trait WeekRule: Send + Sync {
    /// Decide from the prefix of weekly statistics (most recent last) and the
    /// current belief state.
    fn decide(
        &self,
        prefix: &[SeqStats],
        state: &BeliefState,
        ctx: &ExperimentContext,
    ) -> Result<Action>;
}

/// A named decision procedure that can be instantiated per experiment.
pub trait DecisionProcedure: Sync {
    fn id(&self) -> String;
    fn prepare(&self, ctx: &ExperimentContext) -> Result<Box<dyn WeekRule>>;
}

/// The built-in comparison methods.
#[derive(Clone)]
pub enum Method {
    Ffht {
        alpha: f64,
    },
    AlphaSpending {
        alpha: f64,
    },
    Bfht,
    Bfhod,
    /// Sequential one-sided Bayes factor; priors default to a symmetric
    /// zero-centered design at the context's prior effect scale.
    BayesFactor {
        threshold: f64,
        priors: Option<OneSidedPriors>,
    },
    PosteriorOdds {
        threshold: f64,
        priors: Option<OneSidedPriors>,
        prior_odds: Option<f64>,
    },
    Avp {
        alpha: f64,
        tau: Option<f64>,
    },
    Rl(Arc<Policy>),
}

fn trim_num(v: f64) -> String {
    if v == v.trunc() {
        format!("{}", v as i64)
    } else {
        format!("{v}")
    }
}

/// Prior effect scale of a context: the standard deviation of the effect
/// under the two independent group priors.
pub fn prior_effect_sd(ctx: &ExperimentContext) -> f64 {
    (ctx.priors.treatment.sd.powi(2) + ctx.priors.control.sd.powi(2)).sqrt()
}

impl DecisionProcedure for Method {
    fn id(&self) -> String {
        match self {
            Method::Ffht { .. } => "ffht".into(),
            Method::AlphaSpending { .. } => "alpha_spending".into(),
            Method::Bfht => "bfht".into(),
            Method::Bfhod => "bfhod".into(),
            Method::BayesFactor { threshold, .. } => format!("bf_{}", trim_num(*threshold)),
            Method::PosteriorOdds { threshold, .. } => format!("pos_{}", trim_num(*threshold)),
            Method::Avp { .. } => "avp".into(),
            Method::Rl(_) => "rl".into(),
        }
    }

    fn prepare(&self, ctx: &ExperimentContext) -> Result<Box<dyn WeekRule>> {
        let horizon = ctx.horizon();
        Ok(match self {
            Method::Ffht { alpha } => Box::new(FfhtRule {
                alpha: *alpha,
                horizon,
            }),
            Method::AlphaSpending { alpha } => {
                let fractions = info_fractions(ctx)?;
                // Solved per experiment; a few hundred grid points keep the
                // boundary error far below the cohort's sampling noise.
                let boundaries = baselines::obf_boundaries_with_points(&fractions, *alpha, 401)?;
                Box::new(SpendingRule { boundaries, horizon })
            }
            Method::Bfht => Box::new(BfhtRule { horizon }),
            Method::Bfhod => Box::new(BfhodRule { horizon }),
            Method::BayesFactor { threshold, priors } => Box::new(BfRule {
                threshold: *threshold,
                priors: priors
                    .map_or_else(|| OneSidedPriors::symmetric(prior_effect_sd(ctx)), Ok)?,
                prior_odds: 1.0,
                use_prior_odds: false,
                horizon,
            }),
            Method::PosteriorOdds {
                threshold,
                priors,
                prior_odds,
            } => {
                let priors = priors
                    .map_or_else(|| OneSidedPriors::symmetric(prior_effect_sd(ctx)), Ok)?;
                Box::new(BfRule {
                    threshold: *threshold,
                    prior_odds: prior_odds.unwrap_or_else(|| priors.prior_odds()),
                    priors,
                    use_prior_odds: true,
                    horizon,
                })
            }
            Method::Avp { alpha, tau } => Box::new(AvpRule {
                alpha: *alpha,
                tau: tau.unwrap_or_else(|| prior_effect_sd(ctx)),
                horizon,
            }),
            Method::Rl(policy) => Box::new(RlRule {
                policy: Arc::clone(policy),
            }),
        })
    }
}

/// Information fractions of the schedule: inverse-variance of the effect
/// estimate relative to the full horizon.
pub fn info_fractions(ctx: &ExperimentContext) -> Result<Vec<f64>> {
    let horizon = ctx.horizon();
    let var_at = |week: u32| -> Result<f64> {
        let mut v = 0.0;
        for g in GroupId::BOTH {
            let coeffs = crate::conjugate::weight_coeffs(&ctx.schedule, g, week)?;
            v += ctx.noise.get(g).sd.powi(2) / coeffs.customer_weeks;
        }
        Ok(v)
    };
    let full = var_at(horizon)?;
    (1..=horizon).map(|w| Ok(full / var_at(w)?)).collect()
}

struct FfhtRule {
    alpha: f64,
    horizon: u32,
}

impl WeekRule for FfhtRule {
    fn decide(&self, prefix: &[SeqStats], _state: &BeliefState, _ctx: &ExperimentContext) -> Result<Action> {
        Ok(baselines::ffht_decide(prefix.last().unwrap(), self.horizon, self.alpha).action)
    }
}

struct SpendingRule {
    boundaries: Vec<f64>,
    horizon: u32,
}

impl WeekRule for SpendingRule {
    fn decide(&self, prefix: &[SeqStats], state: &BeliefState, _ctx: &ExperimentContext) -> Result<Action> {
        Ok(baselines::alpha_spending_decide(
            prefix.last().unwrap(),
            &self.boundaries,
            state.week,
            self.horizon,
        )
        .action)
    }
}

struct BfhtRule {
    horizon: u32,
}

impl WeekRule for BfhtRule {
    fn decide(&self, _prefix: &[SeqStats], state: &BeliefState, ctx: &ExperimentContext) -> Result<Action> {
        let post = env::delta_estimate(state, ctx)?;
        Ok(baselines::bfht_decide(&post, state.week, self.horizon).action)
    }
}

struct BfhodRule {
    horizon: u32,
}

impl WeekRule for BfhodRule {
    fn decide(&self, _prefix: &[SeqStats], state: &BeliefState, ctx: &ExperimentContext) -> Result<Action> {
        let post = env::delta_estimate(state, ctx)?;
        Ok(baselines::bfhod_decide(&post, ctx, state.week, self.horizon).action)
    }
}

struct BfRule {
    threshold: f64,
    priors: OneSidedPriors,
    prior_odds: f64,
    use_prior_odds: bool,
    horizon: u32,
}

impl WeekRule for BfRule {
    fn decide(&self, prefix: &[SeqStats], state: &BeliefState, _ctx: &ExperimentContext) -> Result<Action> {
        let stats = prefix.last().unwrap();
        let bf = baselines::bayes_factor_one_sided(
            stats.delta_raw(),
            stats.delta_raw_variance().sqrt(),
            &self.priors,
        );
        let statistic = if self.use_prior_odds {
            baselines::posterior_odds(bf, self.prior_odds)
        } else {
            bf
        };
        Ok(baselines::bf_decide(statistic, self.threshold, state.week, self.horizon).action)
    }
}

struct AvpRule {
    alpha: f64,
    tau: f64,
    horizon: u32,
}

impl WeekRule for AvpRule {
    fn decide(&self, prefix: &[SeqStats], state: &BeliefState, _ctx: &ExperimentContext) -> Result<Action> {
        let lambdas: Vec<f64> = prefix
            .iter()
            .map(|s| {
                baselines::msprt_lambda(
                    1.0,
                    s.delta_raw(),
                    0.0,
                    s.delta_raw_variance().sqrt(),
                    self.tau,
                )
            })
            .collect();
        let current = prefix.last().unwrap();
        Ok(baselines::avp_decide(
            &lambdas,
            current.delta_raw(),
            self.alpha,
            state.week,
            self.horizon,
        )
        .action)
    }
}

struct RlRule {
    policy: Arc<Policy>,
}

impl WeekRule for RlRule {
    fn decide(&self, _prefix: &[SeqStats], state: &BeliefState, ctx: &ExperimentContext) -> Result<Action> {
        self.policy.act(state, ctx)
    }
}

/// One evaluated trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeOutcome {
    pub experiment: usize,
    pub replication: usize,
    pub stop_week: u32,
    pub final_action: Action,
    pub utility: UtilityBreakdown,
    /// Sum of the environment's posterior-mean rewards along the trajectory.
    pub reward_sum: f64,
}

/// Evaluate one decision procedure over the cohort.
///
/// Per trajectory: the opening week is simulated from the true group means,
/// then rule decisions alternate with truth-driven transitions until a stop.
/// The data stream for (experiment, replication) does not depend on the
/// method, so methods see common random numbers.
pub fn run_method<M: DecisionProcedure>(
    method: &M,
    cohort: &[CohortExperiment],
    n_reps: usize,
    master_seed: u64,
) -> Result<Vec<EpisodeOutcome>> {
    if cohort.is_empty() || n_reps == 0 {
        return Err(Error::EmptyOutcomes);
    }
    let per_experiment: Vec<Vec<EpisodeOutcome>> = cohort
        .par_iter()
        .enumerate()
        .map(|(exp_idx, experiment)| -> Result<Vec<EpisodeOutcome>> {
            let rule = method.prepare(&experiment.ctx)?;
            let mut outcomes = Vec::with_capacity(n_reps);
            for rep in 0..n_reps {
                outcomes.push(run_episode(
                    rule.as_ref(),
                    experiment,
                    exp_idx,
                    rep,
                    master_seed,
                )?);
            }
            Ok(outcomes)
        })
        .collect::<Result<_>>()?;
    Ok(per_experiment.into_iter().flatten().collect())
}

fn run_episode(
    rule: &dyn WeekRule,
    experiment: &CohortExperiment,
    exp_idx: usize,
    rep: usize,
    master_seed: u64,
) -> Result<EpisodeOutcome> {
    let ctx = &experiment.ctx;
    let mut rng = stream(master_seed, "eval", &[exp_idx as u64, rep as u64]);
    let mut state = env::initial_state_from_truth(ctx, &experiment.truth, &mut rng);
    let mut prefix: Vec<SeqStats> = Vec::with_capacity(ctx.horizon() as usize);
    let mut traj: Vec<(BeliefState, Action)> = Vec::with_capacity(ctx.horizon() as usize);
    let mut reward_sum = 0.0;
    loop {
        prefix.push(SeqStats::from_state(&state, ctx)?);
        let action = rule.decide(&prefix, &state, ctx)?;
        if !env::action_space(state.week, ctx.horizon())?.contains(&action) {
            return Err(Error::IllegalAction {
                action,
                week: state.week,
                horizon: ctx.horizon(),
            });
        }
        reward_sum += env::reward(&state, action, ctx)?;
        traj.push((state, action));
        if action.is_stop() {
            let utility = env::trajectory_utility(&traj, &experiment.truth, ctx)?;
            return Ok(EpisodeOutcome {
                experiment: exp_idx,
                replication: rep,
                stop_week: state.week,
                final_action: action,
                utility,
                reward_sum,
            });
        }
        state = env::advance_from_truth(&state, ctx, &experiment.truth, &mut rng)?;
    }
}

/// One comparison-table row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub method: String,
    /// Fraction of trajectories stopped before the final week.
    pub pct_early: f64,
    /// Launch rate among experiments whose true effect is not positive.
    pub type_i: f64,
    /// Launch rate among experiments with a truly positive effect; absent
    /// when the cohort has none.
    pub power: Option<f64>,
    /// False launches over all launches (zero when nothing launched).
    pub fdr: f64,
    pub avg_weeks: f64,
    /// Average running cost actually paid (positive magnitude).
    pub avg_opp_cost: f64,
    pub avg_launch_impact: f64,
    pub avg_exp_impact: f64,
    /// Average total utility against the truth, with its standard error.
    pub avg_reward: f64,
    pub reward_stderr: f64,
}

/// Aggregate evaluated trajectories into a comparison-table row.
pub fn compute_metrics(
    method_id: &str,
    outcomes: &[EpisodeOutcome],
    cohort: &[CohortExperiment],
) -> Result<MetricsRow> {
    if outcomes.is_empty() {
        return Err(Error::EmptyOutcomes);
    }
    let horizon = cohort[0].ctx.horizon();
    let n = outcomes.len() as f64;
    let mut early = 0usize;
    let mut weeks = 0.0;
    let mut launches_null = 0usize;
    let mut nulls = 0usize;
    let mut launches_pos = 0usize;
    let mut positives = 0usize;
    let mut false_launches = 0usize;
    let mut true_launches = 0usize;
    let mut opp = 0.0;
    let mut launch = 0.0;
    let mut exp_impact = 0.0;
    let mut total_sum = 0.0;
    let mut total_sq = 0.0;
    for o in outcomes {
        let delta = cohort[o.experiment].truth.delta();
        let launched = o.final_action == Action::StopLaunch;
        if o.stop_week < horizon {
            early += 1;
        }
        weeks += f64::from(o.stop_week);
        if delta <= 0.0 {
            nulls += 1;
            if launched {
                launches_null += 1;
                false_launches += 1;
            }
        } else {
            positives += 1;
            if launched {
                launches_pos += 1;
                true_launches += 1;
            }
        }
        opp += -o.utility.opportunity_cost;
        launch += o.utility.launch_impact;
        exp_impact += o.utility.experiment_impact;
        total_sum += o.utility.total;
        total_sq += o.utility.total * o.utility.total;
    }
    let avg_reward = total_sum / n;
    let reward_var = (total_sq - n * avg_reward * avg_reward) / (n - 1.0).max(1.0);
    Ok(MetricsRow {
        method: method_id.to_string(),
        pct_early: early as f64 / n,
        type_i: if nulls == 0 {
            0.0
        } else {
            launches_null as f64 / nulls as f64
        },
        power: if positives == 0 {
            None
        } else {
            Some(launches_pos as f64 / positives as f64)
        },
        fdr: if false_launches + true_launches == 0 {
            0.0
        } else {
            false_launches as f64 / (false_launches + true_launches) as f64
        },
        avg_weeks: weeks / n,
        avg_opp_cost: opp / n,
        avg_launch_impact: launch / n,
        avg_exp_impact: exp_impact / n,
        avg_reward,
        reward_stderr: (reward_var.max(0.0) / n).sqrt(),
    })
}

/// Both sides of the one-step value-of-information identity, estimated by
/// Monte Carlo with independent streams per side.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lemma1Gap {
    pub lhs: f64,
    pub rhs: f64,
    /// Combined standard error of `lhs - rhs`.
    pub stderr: f64,
    /// Expected gain in the launch-decision term from one more week of data.
    pub info_term: f64,
    pub info_stderr: f64,
}

/// Compare deciding with the fixed-horizon Bayes-optimal rule at `t_prime`
/// against waiting one more week, from a common sampled history.  The hurdle
/// cost is set to zero for the comparison.
pub fn lemma1_gap(
    ctx: &ExperimentContext,
    t_prime: u32,
    n_mc: usize,
    master_seed: u64,
) -> Result<Lemma1Gap> {
    let horizon = ctx.horizon();
    if t_prime < 1 || t_prime >= horizon {
        return Err(Error::WeekOutOfRange {
            week: t_prime,
            horizon: horizon - 1,
        });
    }
    let mut ctx0 = ctx.clone();
    ctx0.hurdle_cost = 0.0;

    // Sample one history h at week t'.
    let mut h_rng = stream(master_seed, "lemma1/history", &[]);
    let mut state = env::initial_state(&ctx0, &mut h_rng);
    while state.week < t_prime {
        state = crate::conjugate::sample_transition(&state, &ctx0, &mut h_rng)?;
    }
    let delta_h = env::delta_estimate(&state, &ctx0)?.mean;
    let launch_now = delta_h > 0.0;
    let value_now = if launch_now {
        env::launch_impact(delta_h, &ctx0, t_prime)
    } else {
        0.0
    };
    let exposure_next = ctx0.schedule.cum_count(GroupId::Treatment, t_prime + 1) as f64;
    let n_full = ctx0.total_customers();
    let multiplier_now = f64::from(ctx0.post_horizon + horizon - t_prime);

    // Side 1: simulate the deferred policy's extra step through the
    // environment and subtract the immediate decision's value.
    let mut lhs_samples = Vec::with_capacity(n_mc);
    for i in 0..n_mc {
        let mut rng = stream(master_seed, "lemma1/defer", &[i as u64]);
        let next = crate::conjugate::sample_transition(&state, &ctx0, &mut rng)?;
        let delta_next = env::delta_estimate(&next, &ctx0)?.mean;
        let launch_reward = if delta_next > 0.0 {
            env::launch_impact(delta_next, &ctx0, t_prime + 1)
        } else {
            0.0
        };
        let defer_value = -ctx0.weekly_cost + delta_h * exposure_next + launch_reward;
        lhs_samples.push(defer_value - value_now);
    }

    // Side 2: the closed-form decomposition, estimated from an independent
    // stream of one-week posteriors.
    let mut rhs_samples = Vec::with_capacity(n_mc);
    let mut info_samples = Vec::with_capacity(n_mc);
    let launch_ind = if launch_now { delta_h } else { 0.0 };
    for i in 0..n_mc {
        let mut rng = stream(master_seed, "lemma1/decompose", &[i as u64]);
        let next = crate::conjugate::sample_transition(&state, &ctx0, &mut rng)?;
        let delta_next = env::delta_estimate(&next, &ctx0)?.mean;
        let kept = if delta_next > 0.0 { delta_next } else { 0.0 };
        let info = kept - launch_ind;
        info_samples.push(info);
        rhs_samples.push(
            info * n_full * multiplier_now - kept * n_full + delta_h * exposure_next
                - ctx0.weekly_cost,
        );
    }

    let mean_se = |xs: &[f64]| -> (f64, f64) {
        let m = xs.iter().sum::<f64>() / xs.len() as f64;
        let var = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() as f64 - 1.0);
        (m, (var / xs.len() as f64).sqrt())
    };
    let (lhs, se_lhs) = mean_se(&lhs_samples);
    let (rhs, se_rhs) = mean_se(&rhs_samples);
    let (info_term, info_stderr) = mean_se(&info_samples);
    Ok(Lemma1Gap {
        lhs,
        rhs,
        stderr: (se_lhs * se_lhs + se_rhs * se_rhs).sqrt(),
        info_term,
        info_stderr,
    })
}

/// Fields a policy slice can vary.
pub const SLICE_FIELDS: [&str; 7] = [
    "weekly_cost",
    "hurdle_cost",
    "delta_post_mean",
    "w_bar_tr",
    "w_bar_c",
    "sigma_tr",
    "sigma_c",
];

fn apply_slice_field(
    field: &str,
    value: f64,
    ctx: &mut ExperimentContext,
    state: &mut BeliefState,
) -> Result<()> {
    match field {
        "weekly_cost" => ctx.weekly_cost = value,
        "hurdle_cost" => ctx.hurdle_cost = value,
        "w_bar_tr" => state.w_bar.treatment = value,
        "w_bar_c" => state.w_bar.control = value,
        "sigma_tr" => ctx.noise.treatment = NoiseModel::new(value)?,
        "sigma_c" => ctx.noise.control = NoiseModel::new(value)?,
        "delta_post_mean" => {
            // Shift the treatment cumulative mean until the effect posterior
            // mean hits the requested value; the map is affine in w_bar.
            let current = env::delta_estimate(state, ctx)?.mean;
            let mut probe = *state;
            probe.w_bar.treatment += 1.0;
            let slope = env::delta_estimate(&probe, ctx)?.mean - current;
            if slope.abs() < 1e-300 {
                return Err(Error::Domain {
                    name: "delta_post_mean",
                    reason: "posterior mean does not respond to the data".into(),
                });
            }
            state.w_bar.treatment += (value - current) / slope;
        }
        other => {
            return Err(Error::UnknownField {
                field: other.to_string(),
                valid: SLICE_FIELDS.join(", "),
            })
        }
    }
    Ok(())
}

/// Recommended action over a 2-D grid of context/state perturbations, rows
/// indexed by `axis1` values and columns by `axis2` values.
pub fn policy_slice(
    policy: &Policy,
    base_ctx: &ExperimentContext,
    base_state: &BeliefState,
    axis1: (&str, &[f64]),
    axis2: (&str, &[f64]),
) -> Result<Vec<Vec<Action>>> {
    let mut grid = Vec::with_capacity(axis1.1.len());
    for &v1 in axis1.1 {
        let mut row = Vec::with_capacity(axis2.1.len());
        for &v2 in axis2.1 {
            let mut ctx = base_ctx.clone();
            let mut state = *base_state;
            apply_slice_field(axis1.0, v1, &mut ctx, &mut state)?;
            apply_slice_field(axis2.0, v2, &mut ctx, &mut state)?;
            row.push(policy.act(&state, &ctx)?);
        }
        grid.push(row);
    }
    Ok(grid)
}

/// Spearman rank correlation with average ranks for ties; zero when either
/// side is constant.
pub fn spearman(xs: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(xs.len(), ys.len());
    let rank = |vals: &[f64]| -> Vec<f64> {
        let mut idx: Vec<usize> = (0..vals.len()).collect();
        idx.sort_by(|&a, &b| vals[a].partial_cmp(&vals[b]).unwrap());
        let mut ranks = vec![0.0; vals.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && vals[idx[j + 1]] == vals[idx[i]] {
                j += 1;
            }
            let avg = (i + j) as f64 / 2.0 + 1.0;
            for &k in &idx[i..=j] {
                ranks[k] = avg;
            }
            i = j + 1;
        }
        ranks
    };
    let rx = rank(xs);
    let ry = rank(ys);
    let mx = rx.iter().sum::<f64>() / rx.len() as f64;
    let my = ry.iter().sum::<f64>() / ry.len() as f64;
    let mut cov = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for (a, b) in rx.iter().zip(&ry) {
        cov += (a - mx) * (b - my);
        vx += (a - mx) * (a - mx);
        vy += (b - my) * (b - my);
    }
    if vx == 0.0 || vy == 0.0 {
        return 0.0;
    }
    cov / (vx * vy).sqrt()
}

/// Monte-Carlo value of a policy in the Bayesian environment (truth drawn
/// from the prior implicitly through the posterior-predictive transitions).
pub fn monte_carlo_policy_value<F>(
    ctx: &ExperimentContext,
    mut act: F,
    episodes: usize,
    master_seed: u64,
    purpose: &str,
) -> Result<(f64, f64)>
where
    F: FnMut(&BeliefState, &ExperimentContext) -> Result<Action>,
{
    let mut totals = Vec::with_capacity(episodes);
    for e in 0..episodes {
        let mut rng = stream(master_seed, purpose, &[e as u64]);
        let mut state = env::initial_state(ctx, &mut rng);
        let mut total = 0.0;
        loop {
            let action = act(&state, ctx)?;
            let out = env::step(&state, action, ctx, &mut rng)?;
            total += out.reward;
            if out.next.terminated {
                break;
            }
            state = out.next;
        }
        totals.push(total);
    }
    let mean = totals.iter().sum::<f64>() / episodes as f64;
    let var =
        totals.iter().map(|t| (t - mean) * (t - mean)).sum::<f64>() / (episodes as f64 - 1.0);
    Ok((mean, (var / episodes as f64).sqrt()))
}
