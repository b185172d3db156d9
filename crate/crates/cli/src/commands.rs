//! Command implementations.  Each command validates everything it needs
//! before writing any output file.

use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use earlystop::env::{self, Action, ExperimentContext};
use earlystop::harness::{
    self, CohortExperiment, DecisionProcedure, MetricsRow,
};
use earlystop::policy::{fmt_f64, Policy};
use earlystop::{report, Error, Result};

use crate::config::{AxesSpec, MethodConfig, ObservationJson, RunConfig};

fn read_json<T: serde::de::DeserializeOwned>(path: &Path, what: &str) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|e| Error::InvalidConfig {
        field: format!("{what} ({})", path.display()),
        reason: e.to_string(),
    })
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|source| Error::Io {
            path: dir.display().to_string(),
            source,
        })?;
    }
    std::fs::write(path, contents).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn cmd_simulate(config: &RunConfig, out_dir: &Path) -> Result<std::path::PathBuf> {
    let cohort = harness::generate_cohort(&config.dgp)?;
    let path = out_dir.join("cohort.json");
    write_file(&path, &serde_json::to_string_pretty(&cohort).unwrap())?;
    Ok(path)
}

pub fn cmd_train(
    config: &RunConfig,
    cohort_path: &Path,
    out_dir: &Path,
) -> Result<(std::path::PathBuf, std::path::PathBuf)> {
    let cohort: Vec<CohortExperiment> = read_json(cohort_path, "cohort")?;
    let contexts: Vec<ExperimentContext> = cohort.into_iter().map(|e| e.ctx).collect();
    let result = earlystop::dqn::train(&config.training, &contexts)?;
    let policy_path = out_dir.join("policy.json");
    let curve_path = out_dir.join("training_curve.csv");
    let mut curve = String::from("episode,return\n");
    for (i, r) in result.episode_returns.iter().enumerate() {
        let _ = writeln!(curve, "{i},{}", fmt_f64(*r));
    }
    write_file(&policy_path, &result.policy.to_json_string())?;
    write_file(&curve_path, &curve)?;
    Ok((policy_path, curve_path))
}

pub fn cmd_evaluate(
    config: &RunConfig,
    cohort_path: &Path,
    policy_path: Option<&Path>,
    out_dir: &Path,
) -> Result<std::path::PathBuf> {
    if config.methods.is_empty() {
        return Err(Error::InvalidConfig {
            field: "methods".into(),
            reason: "at least one method is required".into(),
        });
    }
    let cohort: Vec<CohortExperiment> = read_json(cohort_path, "cohort")?;
    if cohort.is_empty() {
        return Err(Error::InvalidConfig {
            field: "cohort".into(),
            reason: "cohort file holds no experiments".into(),
        });
    }
    let policy: Option<Arc<Policy>> = match policy_path {
        Some(p) => Some(Arc::new(Policy::load(p)?)),
        None => None,
    };
    if policy.is_none() && config.methods.iter().any(MethodConfig::needs_policy) {
        return Err(Error::InvalidConfig {
            field: "methods".into(),
            reason: "method 'rl' requires --policy".into(),
        });
    }
    let n_reps = config
        .replications_per_experiment
        .unwrap_or_else(|| harness::default_replications(cohort.len()));
    let mut rows: Vec<MetricsRow> = Vec::with_capacity(config.methods.len());
    for mc in &config.methods {
        let method = mc.to_method(policy.as_ref())?;
        let outcomes = harness::run_method(&method, &cohort, n_reps, config.seed)?;
        rows.push(harness::compute_metrics(&method.id(), &outcomes, &cohort)?);
    }
    let (csv_path, _txt) = report::write_report(&rows, out_dir)?;
    Ok(csv_path)
}

pub fn cmd_slice(
    policy_path: &Path,
    context_path: &Path,
    axes_path: &Path,
    out_dir: &Path,
    json: bool,
) -> Result<String> {
    let policy = Policy::load(policy_path)?;
    let ctx: ExperimentContext = read_json(context_path, "context")?;
    let axes: AxesSpec = read_json(axes_path, "axes")?;
    if axes.week < 1 || axes.week > ctx.horizon() {
        return Err(Error::WeekOutOfRange {
            week: axes.week,
            horizon: ctx.horizon(),
        });
    }
    let state = ObservationJson {
        week: axes.week,
        w_bar_tr: axes.w_bar_tr,
        w_bar_c: axes.w_bar_c,
        terminated: false,
    }
    .to_state();
    let grid = harness::policy_slice(
        &policy,
        &ctx,
        &state,
        (&axes.axis1.field, &axes.axis1.values),
        (&axes.axis2.field, &axes.axis2.values),
    )?;
    let csv = report::slice_to_csv(
        (&axes.axis1.field, &axes.axis1.values),
        (&axes.axis2.field, &axes.axis2.values),
        &grid,
    );
    write_file(&out_dir.join("slice.csv"), &csv)?;
    if json {
        let codes: Vec<Vec<usize>> = grid
            .iter()
            .map(|row| row.iter().map(|a| a.code()).collect())
            .collect();
        Ok(serde_json::json!({
            "axis1": {"field": axes.axis1.field, "values": axes.axis1.values},
            "axis2": {"field": axes.axis2.field, "values": axes.axis2.values},
            "actions": codes,
        })
        .to_string())
    } else {
        Ok(csv)
    }
}

pub fn cmd_recommend(
    policy_path: &Path,
    context_path: &Path,
    observations_path: &Path,
    json: bool,
) -> Result<String> {
    let policy = Policy::load(policy_path)?;
    let ctx: ExperimentContext = read_json(context_path, "context")?;
    let obs: ObservationJson = read_json(observations_path, "observations")?;
    if obs.week < 1 || obs.week > ctx.horizon() {
        return Err(Error::WeekOutOfRange {
            week: obs.week,
            horizon: ctx.horizon(),
        });
    }
    let state = obs.to_state();
    let delta = env::delta_estimate(&state, &ctx)?;
    let q = policy.q_values(&state, &ctx)?;
    let action = policy.act(&state, &ctx)?;
    let name = match action {
        Action::Continue => "continue",
        Action::StopLaunch => "stop_launch",
        Action::StopNoLaunch => "stop_no_launch",
    };
    if json {
        Ok(serde_json::json!({
            "action": name,
            "action_code": action.code(),
            "terminated": state.terminated,
            "delta_mean": delta.mean,
            "delta_variance": delta.variance,
            "q_values": q,
        })
        .to_string())
    } else {
        let mut out = String::new();
        let _ = writeln!(out, "recommended action: {name}");
        if state.terminated {
            let _ = writeln!(out, "note: experiment already terminated; action has no effect");
        }
        let _ = writeln!(
            out,
            "effect posterior: mean {} variance {}",
            fmt_f64(delta.mean),
            fmt_f64(delta.variance)
        );
        let _ = writeln!(
            out,
            "q-values: continue {} stop_launch {} stop_no_launch {}",
            fmt_f64(q[0]),
            fmt_f64(q[1]),
            fmt_f64(q[2])
        );
        Ok(out)
    }
}
