//! Exact backward-induction oracle on a discretized belief grid.
//!
//! For small horizons the pair of cumulative group means is discretized per
//! week, the Gaussian one-week-ahead predictive (group mean integrated out)
//! is projected onto the next week's grid as interval probabilities, and the
//! optimal Q-table follows by undiscounted backward induction.  The grids are
//! widened recursively so every cell's predictive mass stays on the next grid.
//!
//! Because the two groups evolve independently, the transition factorizes and
//! each value backup is two small matrix products instead of a dense
//! cells^2 x cells^2 kernel.

use crate::conjugate::{self, GroupId, PerGroup};
use crate::env::{self, Action, BeliefState, ExperimentContext};
use crate::error::{Error, Result};
use crate::normal;

/// Discretization request: cells per axis and how many marginal standard
/// deviations each week's grid must span.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub cells: usize,
    pub coverage_sd: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            cells: 60,
            coverage_sd: 8.0,
        }
    }
}

/// Uniform 1-D grid over `[lo, hi]` with `cells` cells.
#[derive(Debug, Clone, PartialEq)]
pub struct GridAxis {
    pub lo: f64,
    pub hi: f64,
    pub cells: usize,
}

impl GridAxis {
    fn width(&self) -> f64 {
        (self.hi - self.lo) / self.cells as f64
    }

    pub fn center(&self, i: usize) -> f64 {
        self.lo + (i as f64 + 0.5) * self.width()
    }

    fn lower_edge(&self, i: usize) -> f64 {
        self.lo + i as f64 * self.width()
    }

    pub fn nearest(&self, x: f64) -> usize {
        if self.width() <= 0.0 {
            return 0;
        }
        let raw = ((x - self.lo) / self.width()).floor();
        raw.clamp(0.0, (self.cells - 1) as f64) as usize
    }
}

/// Optimal tabular Q-values per (week, belief cell, action).
#[derive(Debug, Clone)]
pub struct TabularQ {
    pub horizon: u32,
    pub cells: usize,
    /// Per-week axes, indexed `week - 1`.
    pub grids: Vec<PerGroup<GridAxis>>,
    /// `q[week - 1][i_tr * cells + i_c][action]`; continuing at the final
    /// week is marked with negative infinity.
    pub q: Vec<Vec<[f64; 3]>>,
    /// Optimal value of a fresh experiment, integrating the week-1 belief
    /// over its marginal law.
    pub initial_value: f64,
}

impl TabularQ {
    pub fn cell_index(&self, state: &BeliefState) -> (usize, usize) {
        let axes = &self.grids[(state.week - 1) as usize];
        (
            axes.treatment.nearest(state.w_bar.treatment),
            axes.control.nearest(state.w_bar.control),
        )
    }

    pub fn q_at_state(&self, state: &BeliefState) -> [f64; 3] {
        let (i, j) = self.cell_index(state);
        self.q[(state.week - 1) as usize][i * self.cells + j]
    }

    /// Greedy action at a state, masked to the legal set, ties to the lowest
    /// action code.
    pub fn greedy_action(&self, state: &BeliefState) -> Result<Action> {
        let q = self.q_at_state(state);
        let legal = env::action_space(state.week, self.horizon)?;
        let mut best = legal[0];
        for &a in &legal[1..] {
            if q[a.code()] > q[best.code()] {
                best = a;
            }
        }
        Ok(best)
    }

    pub fn value_at(&self, week: u32, i_tr: usize, i_c: usize) -> f64 {
        let q = &self.q[(week - 1) as usize][i_tr * self.cells + i_c];
        if week == self.horizon {
            q[1].max(q[2])
        } else {
            q[0].max(q[1]).max(q[2])
        }
    }
}

/// Posterior mean of a group's weekly effect as an affine map of the
/// cumulative mean: `m_post(w) = intercept + slope * w`.
struct AffinePosterior {
    intercept: f64,
    slope: f64,
    variance: f64,
}

fn affine_posterior(ctx: &ExperimentContext, g: GroupId, week: u32) -> Result<AffinePosterior> {
    let coeffs = conjugate::weight_coeffs(&ctx.schedule, g, week)?;
    let prior = ctx.priors.get(g);
    let noise = ctx.noise.get(g);
    let zero = conjugate::posterior_mean(prior, noise, 0.0, &coeffs);
    let one = conjugate::posterior_mean(prior, noise, 1.0, &coeffs);
    Ok(AffinePosterior {
        intercept: zero.mean,
        slope: one.mean - zero.mean,
        variance: zero.variance,
    })
}

/// Interval probabilities of `N(mean, sd)` over an axis, tails folded into
/// the boundary cells so each row sums to one.
fn project_gaussian(axis: &GridAxis, mean: f64, sd: f64, out: &mut [f64]) {
    let n = axis.cells;
    let mut prev_cdf = 0.0;
    for j in 0..n {
        let upper = if j + 1 == n {
            1.0
        } else {
            normal::cdf((axis.lower_edge(j + 1) - mean) / sd)
        };
        out[j] = (upper - prev_cdf).max(0.0);
        prev_cdf = upper;
    }
}

/// Solve the optimal stopping problem by backward induction on the belief
/// grid.
pub fn dp_solve(ctx: &ExperimentContext, spec: &GridSpec) -> Result<TabularQ> {
    let horizon = ctx.horizon();
    if horizon > 6 {
        return Err(Error::Domain {
            name: "dp horizon",
            reason: format!("backward induction supports at most 6 weeks, got {horizon}"),
        });
    }
    if spec.cells < 2 || spec.cells > 200 {
        return Err(Error::Domain {
            name: "grid cells",
            reason: format!("must be in 2..=200, got {}", spec.cells),
        });
    }
    let cells = spec.cells;

    // Recursive per-week spans: week 1 from the prior-marginal law, later
    // weeks from the predictive applied at the current extremes.
    let mut grids: Vec<PerGroup<GridAxis>> = Vec::with_capacity(horizon as usize);
    let mut week1_marginals = PerGroup::new((0.0, 0.0), (0.0, 0.0));
    {
        let mut axes = Vec::with_capacity(2);
        for g in GroupId::BOTH {
            let prior = ctx.priors.get(g);
            let n1 = ctx.schedule.cum_count(g, 1) as f64;
            let sd = (prior.sd * prior.sd + ctx.noise.get(g).sd.powi(2) / n1).sqrt();
            let m = prior.mean;
            match g {
                GroupId::Treatment => week1_marginals.treatment = (m, sd),
                GroupId::Control => week1_marginals.control = (m, sd),
            }
            axes.push(GridAxis {
                lo: m - spec.coverage_sd * sd,
                hi: m + spec.coverage_sd * sd,
                cells,
            });
        }
        let c_axis = axes.pop().unwrap();
        let t_axis = axes.pop().unwrap();
        grids.push(PerGroup::new(t_axis, c_axis));
    }
    for week in 1..horizon {
        let prev = &grids[(week - 1) as usize];
        let mut axes = Vec::with_capacity(2);
        for g in GroupId::BOTH {
            let post = affine_posterior(ctx, g, week)?;
            let n_now = ctx.schedule.cum_count(g, week) as f64;
            let n_next = ctx.schedule.cum_count(g, week + 1) as f64;
            let data_slope = n_now / n_next;
            let pred_sd = (post.variance + ctx.noise.get(g).sd.powi(2) / n_next).sqrt();
            let pred_mean =
                |w: f64| post.intercept + (post.slope + data_slope) * w;
            let prev_axis = prev.get(g);
            let lo = pred_mean(prev_axis.lo) - spec.coverage_sd * pred_sd;
            let hi = pred_mean(prev_axis.hi) + spec.coverage_sd * pred_sd;
            // Require the new span to hold +-6 predictive deviations from
            // every reachable cell center.
            let tight_lo = pred_mean(prev_axis.center(0)) - 6.0 * pred_sd;
            let tight_hi = pred_mean(prev_axis.center(cells - 1)) + 6.0 * pred_sd;
            if tight_lo < lo || tight_hi > hi {
                return Err(Error::GridCoverage { week: week + 1 });
            }
            axes.push(GridAxis { lo, hi, cells });
        }
        let c_axis = axes.pop().unwrap();
        let t_axis = axes.pop().unwrap();
        grids.push(PerGroup::new(t_axis, c_axis));
    }

    // Factorized per-group transition matrices, week l -> l+1.
    let mut trans: Vec<PerGroup<Vec<f64>>> = Vec::with_capacity((horizon - 1) as usize);
    for week in 1..horizon {
        let mut per_group = Vec::with_capacity(2);
        for g in GroupId::BOTH {
            let post = affine_posterior(ctx, g, week)?;
            let n_now = ctx.schedule.cum_count(g, week) as f64;
            let n_next = ctx.schedule.cum_count(g, week + 1) as f64;
            let data_slope = n_now / n_next;
            let pred_sd = (post.variance + ctx.noise.get(g).sd.powi(2) / n_next).sqrt();
            let from_axis = grids[(week - 1) as usize].get(g);
            let to_axis = grids[week as usize].get(g);
            let mut matrix = vec![0.0; cells * cells];
            for i in 0..cells {
                let mean = post.intercept + (post.slope + data_slope) * from_axis.center(i);
                project_gaussian(to_axis, mean, pred_sd, &mut matrix[i * cells..(i + 1) * cells]);
            }
            per_group.push(matrix);
        }
        let c_m = per_group.pop().unwrap();
        let t_m = per_group.pop().unwrap();
        trans.push(PerGroup::new(t_m, c_m));
    }

    // Effect posterior mean per cell at a given week.
    let delta_at = |week: u32, w_tr: f64, w_c: f64| -> Result<f64> {
        let tr = affine_posterior(ctx, GroupId::Treatment, week)?;
        let c = affine_posterior(ctx, GroupId::Control, week)?;
        Ok(tr.intercept + tr.slope * w_tr - (c.intercept + c.slope * w_c))
    };

    let mut q: Vec<Vec<[f64; 3]>> = vec![Vec::new(); horizon as usize];

    // Terminal week: only the stop actions exist.
    {
        let week = horizon;
        let axes = &grids[(week - 1) as usize];
        let tr_post = affine_posterior(ctx, GroupId::Treatment, week)?;
        let c_post = affine_posterior(ctx, GroupId::Control, week)?;
        let mut layer = Vec::with_capacity(cells * cells);
        for i in 0..cells {
            let m_tr = tr_post.intercept + tr_post.slope * axes.treatment.center(i);
            for j in 0..cells {
                let m_c = c_post.intercept + c_post.slope * axes.control.center(j);
                let delta = m_tr - m_c;
                let launch = env::launch_impact(delta, ctx, week) - ctx.hurdle_cost;
                layer.push([f64::NEG_INFINITY, launch, 0.0]);
            }
        }
        q[(week - 1) as usize] = layer;
    }

    // Backward sweep.
    let mut v_next: Vec<f64> = q[(horizon - 1) as usize]
        .iter()
        .map(|cell| cell[1].max(cell[2]))
        .collect();
    for week in (1..horizon).rev() {
        let axes = &grids[(week - 1) as usize];
        let t = &trans[(week - 1) as usize];
        // tmp[i_tr][j_c] = sum_{j_tr} P_tr[i_tr][j_tr] V[j_tr][j_c]
        let mut tmp = vec![0.0; cells * cells];
        for i in 0..cells {
            let row = &t.treatment[i * cells..(i + 1) * cells];
            let out = &mut tmp[i * cells..(i + 1) * cells];
            for (p, vrow) in row.iter().zip(v_next.chunks(cells)) {
                if *p == 0.0 {
                    continue;
                }
                for (o, v) in out.iter_mut().zip(vrow) {
                    *o += p * v;
                }
            }
        }
        let exposure_next = ctx.schedule.cum_count(GroupId::Treatment, week + 1) as f64;
        let mut layer = Vec::with_capacity(cells * cells);
        for i in 0..cells {
            let tmp_row = &tmp[i * cells..(i + 1) * cells];
            for j in 0..cells {
                let ev: f64 = t.control[j * cells..(j + 1) * cells]
                    .iter()
                    .zip(tmp_row)
                    .map(|(p, v)| p * v)
                    .sum();
                let delta = delta_at(week, axes.treatment.center(i), axes.control.center(j))?;
                let q_continue = -ctx.weekly_cost + delta * exposure_next + ev;
                let q_launch = env::launch_impact(delta, ctx, week) - ctx.hurdle_cost;
                layer.push([q_continue, q_launch, 0.0]);
            }
        }
        v_next = layer
            .iter()
            .map(|cell| cell[0].max(cell[1]).max(cell[2]))
            .collect();
        q[(week - 1) as usize] = layer;
    }

    // Integrate the week-1 value over the prior-marginal belief law.
    let mut p_tr = vec![0.0; cells];
    let mut p_c = vec![0.0; cells];
    let (m_tr, sd_tr) = week1_marginals.treatment;
    let (m_c, sd_c) = week1_marginals.control;
    project_gaussian(&grids[0].treatment, m_tr, sd_tr, &mut p_tr);
    project_gaussian(&grids[0].control, m_c, sd_c, &mut p_c);
    let mut initial_value = 0.0;
    for (i, pt) in p_tr.iter().enumerate() {
        for (j, pc) in p_c.iter().enumerate() {
            initial_value += pt * pc * v_next[i * cells + j];
        }
    }

    Ok(TabularQ {
        horizon,
        cells,
        grids,
        q,
        initial_value,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conjugate::{GroupPrior, NoiseModel, SampleSchedule};
    use crate::rng::stream;

    fn ctx(
        mu0: (f64, f64),
        sd0: f64,
        sigma: f64,
        weekly: Vec<u32>,
        cost: f64,
        hurdle: f64,
        post_horizon: u32,
    ) -> ExperimentContext {
        ExperimentContext::new(
            PerGroup::new(
                GroupPrior::new(mu0.0, sd0).unwrap(),
                GroupPrior::new(mu0.1, sd0).unwrap(),
            ),
            PerGroup::new(NoiseModel::new(sigma).unwrap(), NoiseModel::new(sigma).unwrap()),
            SampleSchedule::symmetric(weekly).unwrap(),
            cost,
            hurdle,
            post_horizon,
        )
        .unwrap()
    }

    #[test]
    fn terminal_layer_is_launch_reward_or_zero() {
        let c = ctx((0.3, 0.0), 0.5, 1.0, vec![20, 10, 10], 1.0, 2.0, 12);
        let tab = dp_solve(&c, &GridSpec { cells: 20, coverage_sd: 8.0 }).unwrap();
        let axes = &tab.grids[2];
        for i in [0usize, 7, 19] {
            for j in [0usize, 11, 19] {
                let cell = tab.q[2][i * 20 + j];
                let state = BeliefState {
                    w_bar: PerGroup::new(axes.treatment.center(i), axes.control.center(j)),
                    week: 3,
                    terminated: false,
                };
                let delta = env::delta_estimate(&state, &c).unwrap().mean;
                let want = env::launch_impact(delta, &c, 3) - c.hurdle_cost;
                assert!((cell[1] - want).abs() < 1e-9);
                assert_eq!(cell[2], 0.0);
                assert_eq!(cell[0], f64::NEG_INFINITY);
            }
        }
    }

    #[test]
    fn huge_running_cost_stops_everywhere_at_week_one() {
        let c = ctx((0.1, 0.0), 0.5, 1.0, vec![20, 10, 10], 1e9, 0.0, 12);
        let tab = dp_solve(&c, &GridSpec { cells: 24, coverage_sd: 8.0 }).unwrap();
        for cell in &tab.q[0] {
            assert!(cell[0] < cell[1].max(cell[2]));
        }
    }

    #[test]
    fn value_is_nonincreasing_in_running_cost() {
        let base = ctx((0.2, 0.0), 0.6, 1.5, vec![30, 20, 10, 10], 3.0, 1.0, 12);
        let mut doubled = base.clone();
        doubled.weekly_cost *= 2.0;
        let spec = GridSpec { cells: 40, coverage_sd: 8.0 };
        let v1 = dp_solve(&base, &spec).unwrap().initial_value;
        let v2 = dp_solve(&doubled, &spec).unwrap().initial_value;
        assert!(v2 <= v1 + 1e-9, "{v2} > {v1}");
    }

    #[test]
    fn coverage_error_when_grid_too_narrow() {
        let c = ctx((0.2, 0.0), 0.6, 1.5, vec![30, 20, 10], 3.0, 1.0, 12);
        match dp_solve(&c, &GridSpec { cells: 30, coverage_sd: 3.0 }) {
            Err(Error::GridCoverage { .. }) => {}
            other => panic!("expected coverage error, got {:?}", other.map(|_| ())),
        }
    }

    /// With vanishing noise the problem is deterministic: compare against
    /// exhaustive enumeration of all stop-week/launch choices.
    #[test]
    fn zero_noise_matches_deterministic_enumeration() {
        for (mu_tr, cost, hurdle) in [(0.15, 2.0, 10.0), (-0.1, 0.5, 0.0), (0.05, 20.0, 0.0)] {
            let c = ctx((mu_tr, 0.0), 1e-7, 1e-7, vec![30, 20, 10, 10], cost, hurdle, 12);
            let tab = dp_solve(&c, &GridSpec { cells: 30, coverage_sd: 8.0 }).unwrap();
            let delta = mu_tr;
            let horizon = 4u32;
            let mut best = f64::NEG_INFINITY;
            for stop_week in 1..=horizon {
                let mut run_reward = 0.0;
                for t in 1..stop_week {
                    run_reward += -cost
                        + delta * c.schedule.cum_count(GroupId::Treatment, t + 1) as f64;
                }
                let launch = run_reward + env::launch_impact(delta, &c, stop_week) - hurdle;
                let no_launch = run_reward;
                best = best.max(launch).max(no_launch);
            }
            assert!(
                (tab.initial_value - best).abs() <= 1e-6 * best.abs().max(1.0),
                "dp {} vs enumeration {best}",
                tab.initial_value
            );
        }
    }

    /// Monte-Carlo rollouts following the tabular greedy policy should match
    /// the claimed optimal value.
    #[test]
    fn greedy_rollouts_recover_initial_value() {
        let c = ctx((0.2, 0.0), 0.5, 1.0, vec![30, 20, 10, 10], 2.0, 5.0, 12);
        let tab = dp_solve(&c, &GridSpec { cells: 80, coverage_sd: 8.0 }).unwrap();
        let episodes = 40_000;
        let mut total = 0.0;
        let mut totals = Vec::with_capacity(episodes);
        for e in 0..episodes {
            let mut rng = stream(17, "dp-rollout", &[e as u64]);
            let mut state = env::initial_state(&c, &mut rng);
            let mut ep = 0.0;
            loop {
                let action = tab.greedy_action(&state).unwrap();
                let out = env::step(&state, action, &c, &mut rng).unwrap();
                ep += out.reward;
                if out.next.terminated {
                    break;
                }
                state = out.next;
            }
            total += ep;
            totals.push(ep);
        }
        let mean = total / episodes as f64;
        let sd = (totals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
            / (episodes as f64 - 1.0))
            .sqrt();
        let se = sd / (episodes as f64).sqrt();
        // Allow discretization bias alongside the Monte-Carlo error.
        let tol = 4.0 * se + 0.01 * tab.initial_value.abs().max(1.0);
        assert!(
            (mean - tab.initial_value).abs() < tol,
            "rollout mean {mean} vs dp {} (se {se})",
            tab.initial_value
        );
    }
}
