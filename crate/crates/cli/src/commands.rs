use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use clap::Args;
use faultline::dcl::fixture::{check_fixture, DclFixture, DclInstance};
use faultline::dcl::Dims;
use faultline::jsonl;
use faultline::metrics::{evaluate_predictions, run_zero_shot};
use faultline::pipeline::dataset::{write_manifest, SplitSizes};
use faultline::pipeline::demo::demo_suite;
use faultline::pipeline::{
    self, collect_baselines, compute_manifest, derive_seed, generate_all, label_candidates, plan_baselines,
    AttemptRecord, BaselinePlans, Candidate, ExternalRecord,
};
use faultline::prompts::EvalStyle;
use faultline::reward::{grouped_advantages, score_prediction, RewardBreakdown};
use faultline::sim::{EvaluatorKind, Suite};
use faultline::taxonomy::{PredictionRecord, Trajectory};
use serde::Serialize;
use serde_json::{json, Map, Value};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).expect("serializable") + "\n";
    Ok(jsonl::write_text(path, &text)?)
}

fn read_dataset(path: &Path) -> CliResult<Vec<Trajectory>> {
    Ok(jsonl::read(path)?)
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Suite TOML with [[scenario]] and [[task]] tables.
    #[arg(long, conflicts_with = "demo", required_unless_present = "demo")]
    suite: Option<PathBuf>,
    /// Use the built-in offline suite with this many tasks per domain.
    #[arg(long)]
    demo: Option<usize>,
}

pub fn simulate(cfg: &RunConfig, a: SimulateArgs) -> CliResult<()> {
    let out = cfg.out_dir()?;
    let suite = match (&a.suite, a.demo) {
        (Some(path), _) => Suite::load(path)?,
        (None, Some(n)) if n > 0 => demo_suite(n),
        _ => return Err(CliError::Usage("--demo must be at least 1".into())),
    };
    let gateway = cfg.gateway()?;
    let needs = suite.scenarios.iter().any(|s| s.needs_gateway())
        || suite.tasks.iter().any(|t| t.evaluator == EvaluatorKind::Judge);
    if needs && gateway.is_none() {
        return Err(CliError::Usage("suite has live agents or judge tasks; pass --backend".into()));
    }
    let set = collect_baselines(&suite, gateway.as_ref(), cfg.parallel);
    let suite_text = toml::to_string(&suite).map_err(|e| CliError::Data(format!("serializing suite: {e}")))?;
    jsonl::write_text(&out.join("suite.toml"), &suite_text)?;
    jsonl::write(&out.join("baselines.jsonl"), &set.retained)?;
    jsonl::write(&out.join("dropped.jsonl"), &set.dropped)?;
    println!("retained {} of {} baselines", set.retained.len(), set.attempted());
    Ok(())
}

#[derive(Debug, Args)]
pub struct PlanArgs {
    #[arg(long)]
    baselines: PathBuf,
    /// Distinct plans per baseline.
    #[arg(long, default_value_t = 4)]
    plans_per_baseline: usize,
    #[arg(long, default_value_t = 1)]
    min_targets: usize,
    #[arg(long, default_value_t = 2)]
    max_targets: usize,
}

pub fn plan(cfg: &RunConfig, a: PlanArgs) -> CliResult<()> {
    let out = cfg.out_dir()?;
    let baselines = read_dataset(&a.baselines)?;
    let plans = plan_baselines(&baselines, a.plans_per_baseline, a.min_targets..=a.max_targets, cfg.seeds.plans)?;
    jsonl::write(&out.join("plans.jsonl"), &plans)?;
    println!("{} plans for {} baselines", plans.iter().map(|p| p.plans.len()).sum::<usize>(), plans.len());
    Ok(())
}

#[derive(Debug, Args)]
pub struct InjectArgs {
    #[arg(long)]
    suite: PathBuf,
    #[arg(long)]
    baselines: PathBuf,
    #[arg(long)]
    plans: PathBuf,
}

pub fn inject(cfg: &RunConfig, a: InjectArgs) -> CliResult<()> {
    let out = cfg.out_dir()?;
    let suite = Suite::load(&a.suite)?;
    let baselines = read_dataset(&a.baselines)?;
    let plans: Vec<BaselinePlans> = jsonl::read(&a.plans)?;
    let gateway = cfg.require_gateway()?;
    let candidates = generate_all(&suite, &baselines, &plans, &gateway, Some(&gateway), cfg.parallel)?;
    let aborted = candidates.iter().filter(|c| c.error.is_some()).count();
    jsonl::write(&out.join("candidates.jsonl"), &candidates)?;
    println!("{} candidates ({aborted} aborted)", candidates.len());
    Ok(())
}

#[derive(Debug, Args)]
pub struct BuildArgs {
    /// candidates.jsonl from `inject`.
    #[arg(long = "in")]
    input: PathBuf,
}

pub fn build(cfg: &RunConfig, a: BuildArgs) -> CliResult<()> {
    let out = cfg.out_dir()?;
    let candidates: Vec<Candidate> = jsonl::read(&a.input)?;
    let (labeled, attempts) = label_candidates(&candidates);
    let manifest = pipeline::build_dataset(&labeled, &attempts, out, cfg.seeds.plans)?;
    println!("{} labeled trajectories from {} candidates", manifest.total_trajectories, attempts.len());
    Ok(())
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// Test items drawn per task tag.
    #[arg(long, default_value_t = 100)]
    per_task_test: usize,
    #[arg(long, default_value_t = 0.8)]
    train_frac: f64,
}

pub fn split(cfg: &RunConfig, a: SplitArgs) -> CliResult<()> {
    let out = cfg.out_dir()?;
    if !(0.0..=1.0).contains(&a.train_frac) {
        return Err(CliError::Usage("--train-frac must be within [0, 1]".into()));
    }
    let dataset = read_dataset(&a.dataset)?;
    let splits = pipeline::split(&dataset, a.per_task_test, a.train_frac, cfg.seeds.splits);
    for w in &splits.warnings {
        log::warn!("{w}");
    }
    splits.write(out)?;
    let sizes = splits.sizes();
    write_json(&out.join("splits.json"), &json!({ "seed": cfg.seeds.splits, "sizes": sizes, "warnings": splits.warnings }))?;
    println!("test {}, train {}, val {}", sizes.test, sizes.train, sizes.val);
    Ok(())
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// Attempt log; enables the success-rate table.
    #[arg(long)]
    attempts: Option<PathBuf>,
    /// Directory holding splits/{test,train,val}.jsonl.
    #[arg(long)]
    splits: Option<PathBuf>,
}

pub fn stats(cfg: &RunConfig, a: StatsArgs) -> CliResult<()> {
    let out = cfg.out_dir()?;
    let dataset = read_dataset(&a.dataset)?;
    let attempts: Vec<AttemptRecord> = match &a.attempts {
        Some(p) => jsonl::read(p)?,
        None => Vec::new(),
    };
    let mut manifest = compute_manifest(&dataset, &attempts, cfg.seeds.plans);
    if let Some(dir) = &a.splits {
        let count = |name: &str| -> CliResult<usize> {
            Ok(jsonl::read_lines(&dir.join("splits").join(format!("{name}.jsonl")))?.len())
        };
        manifest.splits = Some(SplitSizes { test: count("test")?, train: count("train")?, val: count("val")? });
    }
    write_manifest(&manifest, out)?;
    print!("{}", manifest.render_text());
    Ok(())
}

#[derive(Debug, Args)]
pub struct NormalizeArgs {
    /// JSONL records with `id` and `mistake_reason`.
    #[arg(long = "in")]
    input: PathBuf,
}

pub fn normalize(cfg: &RunConfig, a: NormalizeArgs) -> CliResult<()> {
    let out = cfg.out_dir()?;
    let records: Vec<ExternalRecord> = jsonl::read(&a.input)?;
    let gateway = cfg.require_gateway()?;
    let normalized = pipeline::normalize_external_labels(records, &gateway, cfg.parallel);
    let unmapped = normalized.iter().filter(|r| r.unmapped).count();
    jsonl::write(&out.join("normalized.jsonl"), &normalized)?;
    println!("{} mapped, {unmapped} unmapped", normalized.len() - unmapped);
    Ok(())
}

fn unknown_prediction_ids(dataset: &[Trajectory], predictions: &[PredictionRecord]) -> Vec<String> {
    let known: BTreeSet<&str> = dataset.iter().map(|t| t.id.as_str()).collect();
    let unknown: BTreeSet<&str> = predictions.iter().map(|p| p.id.as_str()).filter(|id| !known.contains(id)).collect();
    unknown.into_iter().map(str::to_string).collect()
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    predictions: PathBuf,
}

#[derive(Serialize)]
struct ScoreLine<'a> {
    id: &'a str,
    #[serde(flatten)]
    breakdown: RewardBreakdown,
}

pub fn score(cfg: &RunConfig, a: ScoreArgs) -> CliResult<()> {
    let out = cfg.out_dir()?;
    let dataset = read_dataset(&a.dataset)?;
    let predictions: Vec<PredictionRecord> = jsonl::read(&a.predictions)?;
    let unknown = unknown_prediction_ids(&dataset, &predictions);
    if !unknown.is_empty() {
        return Err(CliError::Data(format!("predictions reference unknown ids: {}", unknown.join(", "))));
    }
    let by_id: std::collections::BTreeMap<&str, &PredictionRecord> =
        predictions.iter().map(|p| (p.id.as_str(), p)).collect();
    let mut lines = Vec::new();
    let mut missing = Vec::new();
    for t in &dataset {
        let Some(p) = by_id.get(t.id.as_str()) else {
            missing.push(t.id.clone());
            continue;
        };
        let gt = t
            .ground_truth
            .as_ref()
            .ok_or_else(|| CliError::Data(format!("{} has no ground truth", t.id)))?;
        lines.push(ScoreLine { id: &t.id, breakdown: score_prediction(&p.parse(), gt, &cfg.reward)? });
    }
    let n = lines.len();
    let mean = if n == 0 { 0.0 } else { lines.iter().map(|l| l.breakdown.r).sum::<f64>() / n as f64 };
    let malformed = lines.iter().filter(|l| !l.breakdown.well_formed).count();
    jsonl::write(&out.join("scores.jsonl"), &lines)?;
    write_json(
        &out.join("score_summary.json"),
        &json!({ "scored": n, "mean_reward": mean, "malformed": malformed, "missing": missing, "config": cfg.reward }),
    )?;
    println!("scored {n}, mean reward {mean:.4}, malformed {malformed}, missing {}", missing.len());
    Ok(())
}

#[derive(Debug, Args)]
pub struct AdvantagesArgs {
    /// JSONL with a group key (`group`, `prompt_id` or `id`) and a reward
    /// (`reward` or `r`).
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long, default_value_t = 1e-6)]
    epsilon: f64,
}

fn field<'a>(obj: &'a Map<String, Value>, keys: &[&str]) -> Option<&'a Value> {
    keys.iter().find_map(|k| obj.get(*k))
}

pub fn advantages(cfg: &RunConfig, a: AdvantagesArgs) -> CliResult<()> {
    let out = cfg.out_dir()?;
    let rows: Vec<Map<String, Value>> = jsonl::read(&a.input)?;
    let mut tagged = Vec::with_capacity(rows.len());
    for (i, row) in rows.iter().enumerate() {
        let group = match field(row, &["group", "prompt_id", "id"]) {
            Some(Value::String(s)) => s.clone(),
            Some(v @ Value::Number(_)) => v.to_string(),
            _ => return Err(CliError::Data(format!("line {}: missing group key", i + 1))),
        };
        let reward = field(row, &["reward", "r"])
            .and_then(Value::as_f64)
            .ok_or_else(|| CliError::Data(format!("line {}: missing numeric reward", i + 1)))?;
        tagged.push((group, reward));
    }
    let adv = grouped_advantages(&tagged, a.epsilon)?;
    let lines: Vec<Map<String, Value>> = rows
        .into_iter()
        .zip(adv)
        .map(|(mut row, v)| {
            row.insert("advantage".into(), json!(v));
            row
        })
        .collect();
    jsonl::write(&out.join("advantages.jsonl"), &lines)?;
    println!("{} advantages", lines.len());
    Ok(())
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// Predictions JSONL; without it the backend is queried zero-shot.
    #[arg(long)]
    predictions: Option<PathBuf>,
    #[arg(long, default_value = "standard")]
    style: EvalStyle,
}

pub fn eval(cfg: &RunConfig, a: EvalArgs) -> CliResult<()> {
    let out = cfg.out_dir()?;
    let dataset = read_dataset(&a.dataset)?;
    let predictions = match &a.predictions {
        Some(path) => jsonl::read(path)?,
        None => {
            let gateway = cfg.require_gateway()?;
            let zs = run_zero_shot(&dataset, &gateway, a.style, cfg.parallel);
            jsonl::write(&out.join("predictions.jsonl"), &zs.predictions)?;
            let failures: Vec<Value> = zs.failures.iter().map(|(id, e)| json!({ "id": id, "error": e })).collect();
            jsonl::write(&out.join("failures.jsonl"), &failures)?;
            zs.predictions
        }
    };
    let report = evaluate_predictions(&dataset, &predictions);
    if !report.unknown_ids.is_empty() {
        log::warn!("predictions reference unknown ids: {}", report.unknown_ids.join(", "));
    }
    write_json(&out.join("report.json"), &report)?;
    let text = report.render_text();
    jsonl::write_text(&out.join("report.txt"), &text)?;
    print!("{text}");
    Ok(())
}

#[derive(Debug, Args)]
pub struct DclCheckArgs {
    /// Fixture JSON files to verify (repeatable).
    #[arg(long = "fixture")]
    fixtures: Vec<PathBuf>,
    /// Random instances to generate (default 100 when no fixture is given).
    #[arg(long)]
    random: Option<usize>,
    /// Use the full default dimensions instead of small ones.
    #[arg(long)]
    full_dims: bool,
    #[arg(long, default_value_t = 1e-9)]
    tolerance: f64,
    /// Also write generated instances with expectations under --out/fixtures.
    #[arg(long)]
    emit: bool,
}

pub fn dcl_check(cfg: &RunConfig, a: DclCheckArgs) -> CliResult<()> {
    let mut fixtures: Vec<(String, DclFixture)> = Vec::new();
    for path in &a.fixtures {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        let f: DclFixture =
            serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        fixtures.push((path.display().to_string(), f));
    }
    let n_random = a.random.unwrap_or(if a.fixtures.is_empty() { 100 } else { 0 });
    let dims = if a.full_dims { Dims::default() } else { Dims { embed: 32, hidden: 16, projection: 16, rank: 8, agent_slots: 6 } };
    for i in 0..n_random {
        let instance = DclInstance::random(derive_seed(cfg.seeds.sim, &format!("dcl-{i}")), dims);
        let expected = Some(instance.evaluate()?);
        fixtures.push((format!("random-{i:03}"), DclFixture { instance, expected }));
    }
    if a.emit {
        let out = cfg.out_dir()?;
        for (name, f) in fixtures.iter().filter(|(n, _)| n.starts_with("random-")) {
            write_json(&out.join("fixtures").join(format!("{name}.json")), f)?;
        }
    }

    let mut worst: Vec<(String, f64, usize)> = Vec::new();
    for (name, f) in &fixtures {
        for line in check_fixture(f, a.tolerance)? {
            let slot = match worst.iter_mut().find(|(op, _, _)| *op == line.op) {
                Some(s) => s,
                None => {
                    worst.push((line.op.clone(), 0.0, 0));
                    worst.last_mut().unwrap()
                }
            };
            slot.1 = slot.1.max(line.max_abs_diff);
            if !line.pass {
                slot.2 += 1;
                log::warn!("{name}: {} differs by {:e}", line.op, line.max_abs_diff);
            }
        }
    }
    let mut failed = 0;
    for (op, diff, fails) in &worst {
        let status = if *fails == 0 { "PASS" } else { "FAIL" };
        println!("{status} {op:<18} instances {:>4}  max |diff| {diff:.3e}  failures {fails}", fixtures.len());
        failed += fails;
    }
    if failed > 0 {
        return Err(CliError::Data(format!("{failed} operation checks exceeded tolerance {:e}", a.tolerance)));
    }
    Ok(())
}
