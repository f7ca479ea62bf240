//! Independent oracles and fixtures shared by the integration tests.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use faultline::gateway::{Gateway, MockRule};
use faultline::manipulator::TargetStatus;
use faultline::pipeline::demo::demo_suite;
use faultline::pipeline::{
    collect_baselines, generate_all, label_candidates, plan_baselines, AttemptRecord, Candidate,
};
use faultline::reward::RewardConfig;
use faultline::sim::Suite;
use faultline::taxonomy::{AttributionMap, ErrorMode, Trajectory};
use rand::seq::IndexedRandom;
use rand::Rng;

pub type Pairs = Vec<(String, ErrorMode)>;

pub fn mode(i: usize) -> ErrorMode {
    ErrorMode::from_index(i).unwrap()
}

pub fn agent_name(i: usize) -> String {
    format!("Agent{i}")
}

/// Random label with 1..=max_pairs distinct pairs over `n_agents` agents.
pub fn random_gt<R: Rng>(rng: &mut R, n_agents: usize, max_pairs: usize) -> Vec<(String, ErrorMode)> {
    let n = rng.random_range(1..=max_pairs);
    let mut pairs = BTreeSet::new();
    while pairs.len() < n {
        pairs.insert((agent_name(rng.random_range(0..n_agents)), mode(rng.random_range(0..ErrorMode::COUNT))));
    }
    pairs.into_iter().collect()
}

/// Random prediction list over the same alphabet, duplicates allowed.
pub fn random_pred<R: Rng>(rng: &mut R, n_agents: usize, max_len: usize) -> Vec<(String, ErrorMode)> {
    (0..rng.random_range(0..=max_len))
        .map(|_| (agent_name(rng.random_range(0..n_agents)), mode(rng.random_range(0..ErrorMode::COUNT))))
        .collect()
}

/// A valid reward config with random constants.
pub fn random_reward_config<R: Rng>(rng: &mut R) -> RewardConfig {
    let c_error = rng.random_range(0.05..1.0);
    let c_agent = c_error + rng.random_range(0.0..1.0);
    let c_pair = c_agent + rng.random_range(0.05..1.0);
    RewardConfig {
        c_pair,
        c_agent,
        c_error,
        c_bonus: rng.random_range(0.0..0.5),
        p_fp: rng.random_range(0.0..1.0),
        d_dup: rng.random_range(0.0..1.0),
        q_quant: rng.random_range(0.0..1.0),
        r_mal: -rng.random_range(0.1..2.0),
        clamp: *[None, Some((-1.0, 1.0)), Some((-5.0, 5.0))].choose(rng).unwrap(),
    }
}

/// Reward computed by walking the branch table one prediction at a time,
/// with every set kept as a plain list.
pub fn hand_trace_reward(gt: &[(String, ErrorMode)], pred: &[(String, ErrorMode)], cfg: &RewardConfig) -> f64 {
    let mut gt_pairs: Vec<(String, ErrorMode)> = Vec::new();
    for p in gt {
        if !gt_pairs.contains(p) {
            gt_pairs.push(p.clone());
        }
    }
    let gt_agents: Vec<&String> = gt_pairs.iter().map(|(a, _)| a).collect();
    let gt_modes: Vec<ErrorMode> = gt_pairs.iter().map(|(_, m)| *m).collect();

    let mut seen: Vec<&(String, ErrorMode)> = Vec::new();
    let mut agents_paid: Vec<&String> = Vec::new();
    let mut modes_paid: Vec<ErrorMode> = Vec::new();
    let mut total = cfg.c_bonus;
    for p in pred {
        if seen.contains(&p) {
            total -= cfg.d_dup;
            continue;
        }
        seen.push(p);
        let (a, m) = (&p.0, p.1);
        if gt_pairs.contains(p) {
            total += cfg.c_pair;
            agents_paid.push(a);
            modes_paid.push(m);
        } else if gt_agents.contains(&a) && !agents_paid.contains(&a) {
            total += cfg.c_agent;
            agents_paid.push(a);
        } else if gt_modes.contains(&m) && !modes_paid.contains(&m) {
            total += cfg.c_error;
            modes_paid.push(m);
        } else {
            total -= cfg.p_fp;
        }
    }
    if pred.len() > 2 * gt_pairs.len() {
        total -= cfg.q_quant * (pred.len() - 2 * gt_pairs.len()) as f64;
    }
    let ratio = total / (gt_pairs.len() as f64 * cfg.c_pair + cfg.c_bonus);
    match cfg.clamp {
        Some((lo, hi)) => ratio.max(lo).min(hi),
        None => ratio,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NaivePrf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn naive_prf(tp: usize, fp: usize, fn_: usize) -> NaivePrf {
    let precision = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
    let recall = if tp + fn_ == 0 { 0.0 } else { tp as f64 / (tp + fn_) as f64 };
    let f1 = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
    NaivePrf { precision, recall, f1 }
}

/// Class key used by the recount scorer: (agent or "", mode index or 99).
type Key = (String, usize);

fn keys(pairs: &[(String, ErrorMode)], level: &str) -> Vec<Key> {
    let mut out: Vec<Key> = Vec::new();
    for (a, m) in pairs {
        let k = match level {
            "pair" => (a.clone(), m.index()),
            "agent" => (a.clone(), 99),
            _ => (String::new(), m.index()),
        };
        if !out.contains(&k) {
            out.push(k);
        }
    }
    out
}

/// Recount scorer: tallies every class by scanning each sample, then
/// averages. Returns (micro, macro).
pub fn naive_scores(samples: &[(Pairs, Pairs)], level: &str) -> (NaivePrf, NaivePrf) {
    let projected: Vec<(Vec<Key>, Vec<Key>)> = samples.iter().map(|(g, p)| (keys(g, level), keys(p, level))).collect();
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for (g, p) in &projected {
        for k in p {
            if g.contains(k) {
                tp += 1;
            } else {
                fp += 1;
            }
        }
        fn_ += g.iter().filter(|k| !p.contains(k)).count();
    }
    let micro = naive_prf(tp, fp, fn_);

    let mut classes: Vec<Key> = if level == "error" {
        (0..ErrorMode::COUNT).map(|i| (String::new(), i)).collect()
    } else {
        projected.iter().flat_map(|(g, p)| g.iter().chain(p)).cloned().collect()
    };
    classes.sort();
    classes.dedup();
    let mut rows = Vec::new();
    for c in &classes {
        let (mut tp, mut fp, mut fn_) = (0, 0, 0);
        for (g, p) in &projected {
            match (g.contains(c), p.contains(c)) {
                (true, true) => tp += 1,
                (false, true) => fp += 1,
                (true, false) => fn_ += 1,
                (false, false) => {}
            }
        }
        if tp + fp + fn_ > 0 {
            rows.push(naive_prf(tp, fp, fn_));
        }
    }
    let n = rows.len() as f64;
    let avg = |f: fn(&NaivePrf) -> f64| if rows.is_empty() { 0.0 } else { rows.iter().map(f).sum::<f64>() / n };
    let macro_ = NaivePrf { precision: avg(|r| r.precision), recall: avg(|r| r.recall), f1: avg(|r| r.f1) };
    (micro, macro_)
}

pub struct PipelineRun {
    pub suite: Suite,
    pub baselines: Vec<Trajectory>,
    pub candidates: Vec<Candidate>,
    pub dataset: Vec<Trajectory>,
    pub attempts: Vec<AttemptRecord>,
}

/// Offline pipeline over the demo suite with the number-corrupting mock.
pub fn run_pipeline(per_domain: usize, plans_per_baseline: usize, seed: u64, parallel: usize) -> PipelineRun {
    let suite = demo_suite(per_domain);
    let baselines = collect_baselines(&suite, None, parallel).retained;
    let plans = plan_baselines(&baselines, plans_per_baseline, 1..=2, seed).unwrap();
    let gw = Gateway::mock(MockRule::CorruptNumber);
    let candidates = generate_all(&suite, &baselines, &plans, &gw, None, parallel).unwrap();
    let (dataset, attempts) = label_candidates(&candidates);
    PipelineRun { suite, baselines, candidates, dataset, attempts }
}

/// Checks every dataset record against its candidate: failed, non-empty
/// label backed by injected steps, and label equal to the plan restricted to
/// the targets the hook reported as applied.
pub fn check_soundness(run: &PipelineRun) -> Result<(), String> {
    let by_id: BTreeMap<String, &Candidate> =
        run.candidates.iter().map(|c| (format!("{}#{}", c.baseline_id, c.plan.id), c)).collect();
    for t in &run.dataset {
        if !t.failed {
            return Err(format!("{} is not failed", t.id));
        }
        let gt = t.ground_truth.as_ref().ok_or_else(|| format!("{} has no ground truth", t.id))?;
        if gt.is_empty() {
            return Err(format!("{} has an empty label", t.id));
        }
        for entry in gt.entries() {
            let backed = t.steps.iter().any(|s| {
                s.agent == entry.agent_name && s.injection.as_ref().is_some_and(|inj| inj.modes == entry.modes)
            });
            if !backed {
                return Err(format!("{}: {} has no injected step with modes {:?}", t.id, entry.agent_name, entry.modes));
            }
        }
        let c = by_id.get(&t.id).ok_or_else(|| format!("{} has no candidate", t.id))?;
        let refined = AttributionMap::from_pairs(
            c.plan
                .targets
                .iter()
                .filter(|tg| c.target_status.get(&tg.agent_name) == Some(&TargetStatus::Applied))
                .flat_map(|tg| tg.modes.iter().map(move |m| (tg.agent_name.clone(), *m))),
        );
        if &refined != gt {
            return Err(format!("{}: label {:?} differs from refined plan {:?}", t.id, gt, refined));
        }
    }
    Ok(())
}

/// Byte image of the dataset as it is written to disk.
pub fn dataset_bytes(dataset: &[Trajectory]) -> String {
    dataset.iter().map(|t| t.to_json_line() + "\n").collect()
}

/// Synthetic dataset of `per_task` labeled records for each task tag.
pub fn synthetic_dataset(per_task: &[(&str, usize)]) -> Vec<Trajectory> {
    let mut out = Vec::new();
    for (task, n) in per_task {
        for i in 0..*n {
            out.push(Trajectory {
                id: format!("{task}-{i:04}"),
                framework: "chain".into(),
                task: task.to_string(),
                query: "q".into(),
                roster: vec![],
                steps: vec![],
                final_answer: String::new(),
                failed: true,
                ground_truth: Some(AttributionMap::from_pairs([("A", mode(i % ErrorMode::COUNT))])),
                baseline_id: Some(format!("b/{task}")),
            });
        }
    }
    out
}

/// Split contract: deterministic, disjoint, covering, per-task test size
/// `min(per_task_test, n)` and train within one item of `train_frac` of the
/// remainder.
pub fn check_split_contract(dataset: &[Trajectory], per_task_test: usize, train_frac: f64, seed: u64) -> Result<(), String> {
    use faultline::pipeline::split;
    let a = split(dataset, per_task_test, train_frac, seed);
    let b = split(dataset, per_task_test, train_frac, seed);
    if a != b {
        return Err("split is not deterministic".into());
    }
    let mut seen = BTreeSet::new();
    let mut per_task: BTreeMap<&str, [usize; 3]> = BTreeMap::new();
    for (slot, part) in [&a.test, &a.train, &a.val].into_iter().enumerate() {
        for t in part {
            if !seen.insert(t.id.clone()) {
                return Err(format!("{} appears in two splits", t.id));
            }
            per_task.entry(&t.task).or_default()[slot] += 1;
        }
    }
    let all: BTreeSet<String> = dataset.iter().map(|t| t.id.clone()).collect();
    if seen != all {
        return Err(format!("splits cover {} of {} ids", seen.len(), all.len()));
    }
    let mut available: BTreeMap<&str, usize> = BTreeMap::new();
    for t in dataset {
        *available.entry(&t.task).or_default() += 1;
    }
    for (task, n) in available {
        let [test, train, val] = per_task.get(task).copied().unwrap_or_default();
        if test != n.min(per_task_test) {
            return Err(format!("task {task}: test {test}, expected {}", n.min(per_task_test)));
        }
        let rest = (train + val) as f64;
        if (train as f64 - rest * train_frac).abs() > 1.0 {
            return Err(format!("task {task}: train {train} of remainder {rest}"));
        }
    }
    Ok(())
}
