//! Baseline collection, plan-driven injection, validation and labeling.
//!
//! Each (baseline, plan) pair is an independent job. Results are always
//! merged back in sorted order so outputs are byte-identical across runs and
//! thread counts.

pub mod dataset;
pub mod demo;
pub mod normalize;
pub mod split;

use std::collections::BTreeMap;
use std::fmt;
use std::ops::RangeInclusive;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::gateway::Gateway;
use crate::jsonl::JsonlError;
use crate::manipulator::{sample_plans, InjectionPlan, ManipulatorError, PlanHook, TargetStatus};
use crate::sim::{run, Scenario, SimError, Suite, TaskInstance};
use crate::taxonomy::{AttributionEntry, AttributionMap, Trajectory};

pub use dataset::{build_dataset, compute_manifest, DatasetManifest};
pub use normalize::{normalize_external_labels, ExternalRecord, NormalizedRecord};
pub use split::{split, Splits};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Io(#[from] JsonlError),
    #[error("cannot build a dataset from zero labeled trajectories")]
    EmptyDataset,
    #[error("baseline {0} does not map to a scenario/task in the suite")]
    UnknownBaseline(String),
    #[error(transparent)]
    Manipulator(#[from] ManipulatorError),
    #[error(transparent)]
    Sim(#[from] SimError),
}

/// Derives a per-item seed from a run seed and a stable key.
pub fn derive_seed(seed: u64, key: &str) -> u64 {
    let digest = Sha256::digest(format!("{seed}:{key}").as_bytes());
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}

/// Runs jobs on a bounded pool, preserving input order.
pub(crate) fn par_map<T, R, F>(items: &[T], parallel: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    if parallel <= 1 {
        return items.iter().map(f).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallel)
        .build()
        .expect("thread pool");
    pool.install(|| items.par_iter().map(f).collect())
}

fn baseline_id(scenario: &Scenario, task: &TaskInstance) -> String {
    format!("{}/{}", scenario.name, task.id)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DroppedBaseline {
    pub id: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default)]
pub struct BaselineSet {
    /// Successful runs, sorted by id.
    pub retained: Vec<Trajectory>,
    pub dropped: Vec<DroppedBaseline>,
}

impl BaselineSet {
    pub fn attempted(&self) -> usize {
        self.retained.len() + self.dropped.len()
    }
}

/// Runs every (scenario, task) pair and keeps the successful ones.
pub fn collect_baselines(suite: &Suite, gateway: Option<&Gateway>, parallel: usize) -> BaselineSet {
    let jobs: Vec<(&Scenario, &TaskInstance)> = suite
        .scenarios
        .iter()
        .flat_map(|s| suite.tasks.iter().map(move |t| (s, t)))
        .collect();
    let results = par_map(&jobs, parallel, |(scenario, task)| {
        let id = baseline_id(scenario, task);
        let outcome = run(scenario, task, None, gateway).map(|mut t| {
            t.id = id.clone();
            t
        });
        (id, outcome)
    });
    let mut set = BaselineSet::default();
    for (id, outcome) in results {
        match outcome {
            Ok(t) if !t.failed => set.retained.push(t),
            Ok(_) => set.dropped.push(DroppedBaseline { id, reason: "baseline failed".into() }),
            Err(e) => set.dropped.push(DroppedBaseline { id, reason: e.to_string() }),
        }
    }
    set.retained.sort_by(|a, b| a.id.cmp(&b.id));
    set.dropped.sort_by(|a, b| a.id.cmp(&b.id));
    set
}

/// Looks up the scenario and task a baseline id was produced from.
pub fn resolve_baseline<'s>(
    suite: &'s Suite,
    baseline_id: &str,
) -> Result<(&'s Scenario, &'s TaskInstance), PipelineError> {
    let unknown = || PipelineError::UnknownBaseline(baseline_id.to_string());
    let (scenario, task) = baseline_id.split_once('/').ok_or_else(unknown)?;
    Ok((
        suite.scenario(scenario).ok_or_else(unknown)?,
        suite.task(task).ok_or_else(unknown)?,
    ))
}

/// Plans for one baseline, with a seed derived from the run seed and its id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BaselinePlans {
    pub baseline_id: String,
    pub plans: Vec<InjectionPlan>,
}

pub fn plan_baselines(
    baselines: &[Trajectory],
    k_plans: usize,
    targets_per_plan: RangeInclusive<usize>,
    seed: u64,
) -> Result<Vec<BaselinePlans>, PipelineError> {
    baselines
        .iter()
        .map(|b| {
            let plans = sample_plans(&b.roster, k_plans, targets_per_plan.clone(), derive_seed(seed, &b.id))?;
            Ok(BaselinePlans { baseline_id: b.id.clone(), plans })
        })
        .collect()
}

/// A faulty re-run of a baseline under one plan, judged but not yet labeled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub baseline_id: String,
    pub framework: String,
    pub task: String,
    pub plan: InjectionPlan,
    pub trajectory: Option<Trajectory>,
    #[serde(default)]
    pub target_status: BTreeMap<String, TargetStatus>,
    /// Why the re-run was aborted, if it was.
    pub error: Option<String>,
}

pub fn candidate_id(baseline_id: &str, plan_id: &str) -> String {
    format!("{baseline_id}#{plan_id}")
}

/// Re-runs the baseline's configuration once per plan with the manipulator
/// armed. `agents` serves live agents and judges; `manipulator` backs the
/// attacks.
pub fn generate_faulty(
    scenario: &Scenario,
    task: &TaskInstance,
    baseline: &Trajectory,
    plans: &[InjectionPlan],
    manipulator: &Gateway,
    agents: Option<&Gateway>,
) -> Vec<Candidate> {
    plans
        .iter()
        .map(|plan| run_candidate(scenario, task, baseline, plan, manipulator, agents))
        .collect()
}

fn run_candidate(
    scenario: &Scenario,
    task: &TaskInstance,
    baseline: &Trajectory,
    plan: &InjectionPlan,
    manipulator: &Gateway,
    agents: Option<&Gateway>,
) -> Candidate {
    let mut candidate = Candidate {
        baseline_id: baseline.id.clone(),
        framework: baseline.framework.clone(),
        task: baseline.task.clone(),
        plan: plan.clone(),
        trajectory: None,
        target_status: BTreeMap::new(),
        error: None,
    };
    if let Err(e) = plan.validate() {
        candidate.error = Some(e.to_string());
        return candidate;
    }
    let mut hook = PlanHook::new(plan, manipulator);
    match run(scenario, task, Some(&mut hook), agents) {
        Ok(mut t) => {
            t.id = candidate_id(&baseline.id, &plan.id);
            t.baseline_id = Some(baseline.id.clone());
            candidate.trajectory = Some(t);
        }
        Err(e) => candidate.error = Some(e.to_string()),
    }
    candidate.target_status = hook.status().clone();
    candidate
}

/// Generates candidates for many baselines on a bounded pool.
pub fn generate_all(
    suite: &Suite,
    baselines: &[Trajectory],
    plans: &[BaselinePlans],
    manipulator: &Gateway,
    agents: Option<&Gateway>,
    parallel: usize,
) -> Result<Vec<Candidate>, PipelineError> {
    let by_id: BTreeMap<&str, &Trajectory> = baselines.iter().map(|b| (b.id.as_str(), b)).collect();
    let mut jobs = Vec::new();
    for bp in plans {
        let baseline = by_id
            .get(bp.baseline_id.as_str())
            .ok_or_else(|| PipelineError::UnknownBaseline(bp.baseline_id.clone()))?;
        let (scenario, task) = resolve_baseline(suite, &bp.baseline_id)?;
        for plan in &bp.plans {
            jobs.push((scenario, task, *baseline, plan));
        }
    }
    let mut out = par_map(&jobs, parallel, |(scenario, task, baseline, plan)| {
        run_candidate(scenario, task, baseline, plan, manipulator, agents)
    });
    out.sort_by(|a, b| (&a.baseline_id, &a.plan.id).cmp(&(&b.baseline_id, &b.plan.id)));
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DiscardReason {
    Aborted(String),
    NotFailed,
    NoAppliedTargets,
}

impl fmt::Display for DiscardReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DiscardReason::Aborted(e) => write!(f, "aborted: {e}"),
            DiscardReason::NotFailed => f.write_str("not_failed"),
            DiscardReason::NoAppliedTargets => f.write_str("no_applied_targets"),
        }
    }
}

/// Plan targets actually realized in the trajectory: the agent has an
/// injected step carrying exactly the target's modes.
pub fn applied_targets<'p>(t: &Trajectory, plan: &'p InjectionPlan) -> Vec<&'p crate::manipulator::InjectionTarget> {
    plan.targets
        .iter()
        .filter(|target| {
            t.steps.iter().any(|s| {
                s.agent == target.agent_name
                    && s.injection.as_ref().is_some_and(|inj| inj.modes == target.modes)
            })
        })
        .collect()
}

/// Keeps a candidate iff it failed and at least one target was applied; the
/// label is the plan restricted to applied targets.
pub fn validate_and_label(candidate: &Candidate) -> Result<Trajectory, DiscardReason> {
    let Some(t) = &candidate.trajectory else {
        return Err(DiscardReason::Aborted(candidate.error.clone().unwrap_or_default()));
    };
    if !t.failed {
        return Err(DiscardReason::NotFailed);
    }
    let applied = applied_targets(t, &candidate.plan);
    if applied.is_empty() {
        return Err(DiscardReason::NoAppliedTargets);
    }
    let entries = applied
        .into_iter()
        .map(|target| AttributionEntry { agent_name: target.agent_name.clone(), modes: target.modes.clone() })
        .collect();
    let mut labeled = t.clone();
    labeled.ground_truth = Some(AttributionMap::new(entries).expect("plan targets are unique and non-empty"));
    Ok(labeled)
}

/// One line of the attempt log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttemptRecord {
    pub baseline_id: String,
    pub plan_id: String,
    pub framework: String,
    pub failed: Option<bool>,
    pub applied_targets: Vec<String>,
    pub discard_reason: Option<String>,
}

/// Labels every candidate, returning the kept trajectories and the full
/// attempt log, both in (baseline_id, plan_id) order.
pub fn label_candidates(candidates: &[Candidate]) -> (Vec<Trajectory>, Vec<AttemptRecord>) {
    let mut sorted: Vec<&Candidate> = candidates.iter().collect();
    sorted.sort_by(|a, b| (&a.baseline_id, &a.plan.id).cmp(&(&b.baseline_id, &b.plan.id)));
    let mut labeled = Vec::new();
    let mut attempts = Vec::with_capacity(sorted.len());
    for c in sorted {
        let applied = c
            .trajectory
            .as_ref()
            .map(|t| applied_targets(t, &c.plan).into_iter().map(|t| t.agent_name.clone()).collect())
            .unwrap_or_default();
        let result = validate_and_label(c);
        attempts.push(AttemptRecord {
            baseline_id: c.baseline_id.clone(),
            plan_id: c.plan.id.clone(),
            framework: c.framework.clone(),
            failed: c.trajectory.as_ref().map(|t| t.failed),
            applied_targets: applied,
            discard_reason: result.as_ref().err().map(|r| r.to_string()),
        });
        if let Ok(t) = result {
            labeled.push(t);
        }
    }
    (labeled, attempts)
}
