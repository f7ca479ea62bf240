//! Dataset assembly and the manifest: composition counts and per-framework
//! injection success rates.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AttemptRecord, PipelineError};
use crate::jsonl;
use crate::taxonomy::{ErrorMode, Trajectory};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameworkInjection {
    /// Mean roster size over the framework's labeled trajectories.
    pub agents: f64,
    pub attempts: usize,
    pub labeled: usize,
    /// labeled / attempts.
    pub success_rate: f64,
    /// Mean number of labeled agents per trajectory.
    pub avg_injected_agents: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSizes {
    pub test: usize,
    pub train: usize,
    pub val: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub schema_version: u32,
    pub generator_seed: u64,
    pub total_trajectories: usize,
    /// Sum of (agent, mode) pairs over all labels.
    pub total_error_instances: usize,
    pub by_task: BTreeMap<String, usize>,
    pub by_framework: BTreeMap<String, usize>,
    /// Error instances per mode; all 14 codes are present.
    pub by_mode: BTreeMap<String, usize>,
    pub injection: BTreeMap<String, FrameworkInjection>,
    pub splits: Option<SplitSizes>,
}

/// Recomputes every manifest facet from the dataset and the attempt log.
pub fn compute_manifest(dataset: &[Trajectory], attempts: &[AttemptRecord], seed: u64) -> DatasetManifest {
    let mut by_task = BTreeMap::new();
    let mut by_framework = BTreeMap::new();
    let mut by_mode: BTreeMap<String, usize> = ErrorMode::all().map(|m| (m.code().to_string(), 0)).collect();
    let mut total_pairs = 0;
    let mut roster_sum: BTreeMap<&str, usize> = BTreeMap::new();
    let mut injected_sum: BTreeMap<&str, usize> = BTreeMap::new();
    for t in dataset {
        *by_task.entry(t.task.clone()).or_insert(0) += 1;
        *by_framework.entry(t.framework.clone()).or_insert(0) += 1;
        *roster_sum.entry(&t.framework).or_insert(0) += t.roster.len();
        if let Some(gt) = &t.ground_truth {
            *injected_sum.entry(&t.framework).or_insert(0) += gt.entries().len();
            for (_, mode) in gt.pairs() {
                *by_mode.get_mut(mode.code()).unwrap() += 1;
                total_pairs += 1;
            }
        }
    }

    let mut attempts_by_fw: BTreeMap<&str, usize> = BTreeMap::new();
    let mut labeled_by_fw: BTreeMap<&str, usize> = BTreeMap::new();
    for a in attempts {
        *attempts_by_fw.entry(&a.framework).or_insert(0) += 1;
        if a.discard_reason.is_none() {
            *labeled_by_fw.entry(&a.framework).or_insert(0) += 1;
        }
    }
    let injection = attempts_by_fw
        .iter()
        .map(|(&fw, &n)| {
            let labeled = labeled_by_fw.get(fw).copied().unwrap_or(0);
            let kept = by_framework.get(fw).copied().unwrap_or(0);
            let mean = |sum: Option<&usize>| if kept == 0 { 0.0 } else { *sum.unwrap_or(&0) as f64 / kept as f64 };
            let row = FrameworkInjection {
                agents: mean(roster_sum.get(fw)),
                attempts: n,
                labeled,
                success_rate: labeled as f64 / n as f64,
                avg_injected_agents: mean(injected_sum.get(fw)),
            };
            (fw.to_string(), row)
        })
        .collect();

    DatasetManifest {
        schema_version: SCHEMA_VERSION,
        generator_seed: seed,
        total_trajectories: dataset.len(),
        total_error_instances: total_pairs,
        by_task,
        by_framework,
        by_mode,
        injection,
        splits: None,
    }
}

fn by_count_desc(map: &BTreeMap<String, usize>) -> Vec<(&str, usize)> {
    let mut rows: Vec<_> = map.iter().map(|(k, &v)| (k.as_str(), v)).collect();
    rows.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
    rows
}

impl DatasetManifest {
    /// Plain-text rendering: a composition table (tasks, frameworks, modes)
    /// followed by the injection success-rate table.
    pub fn render_text(&self) -> String {
        let tasks = by_count_desc(&self.by_task);
        let frameworks = by_count_desc(&self.by_framework);
        let modes: Vec<(&str, usize)> = self.by_mode.iter().map(|(k, &v)| (k.as_str(), v)).collect();
        let (left_modes, right_modes) = modes.split_at(modes.len().div_ceil(2));

        let mut out = String::new();
        writeln!(out, "Dataset composition (schema v{}, seed {})", self.schema_version, self.generator_seed).unwrap();
        writeln!(out).unwrap();
        let header = ["Tasks", "Count", "MAS", "Count", "Mode", "Count", "Mode", "Count"];
        let rows = tasks.len().max(frameworks.len()).max(left_modes.len());
        let cell = |v: Option<&(&str, usize)>| match v {
            Some((k, n)) => (k.to_string(), n.to_string()),
            None => (String::new(), String::new()),
        };
        let mut table: Vec<[String; 8]> = Vec::new();
        for i in 0..rows {
            let (t, tn) = cell(tasks.get(i));
            let (f, fnn) = cell(frameworks.get(i));
            let (m1, m1n) = cell(left_modes.get(i));
            let (m2, m2n) = cell(right_modes.get(i));
            table.push([t, tn, f, fnn, m1, m1n, m2, m2n]);
        }
        let total = self.total_trajectories.to_string();
        table.push([
            "Total".into(),
            total.clone(),
            "Total".into(),
            total,
            "Total".into(),
            String::new(),
            String::new(),
            self.total_error_instances.to_string(),
        ]);
        render_table(&mut out, &header, &table);

        writeln!(out).unwrap();
        writeln!(out, "Injection success rates").unwrap();
        writeln!(out).unwrap();
        let header = ["MAS", "#Agents", "Avg Inject", "Attempts", "Labeled", "Success Rate"];
        let table: Vec<[String; 6]> = self
            .injection
            .iter()
            .map(|(fw, r)| {
                [
                    fw.clone(),
                    format!("{:.1}", r.agents),
                    format!("{:.2}", r.avg_injected_agents),
                    r.attempts.to_string(),
                    r.labeled.to_string(),
                    format!("{:.1}%", r.success_rate * 100.0),
                ]
            })
            .collect();
        render_table(&mut out, &header, &table);

        if let Some(s) = &self.splits {
            writeln!(out).unwrap();
            writeln!(out, "Splits: test {}, train {}, val {}", s.test, s.train, s.val).unwrap();
        }
        out
    }
}

/// Left-aligned name columns, right-aligned counts.
fn render_table<const N: usize>(out: &mut String, header: &[&str; N], rows: &[[String; N]]) {
    let mut widths: [usize; N] = header.map(str::len);
    for row in rows {
        for (w, c) in widths.iter_mut().zip(row) {
            *w = (*w).max(c.chars().count());
        }
    }
    let numeric = |i: usize| i > 0 && header[i] != "MAS" && header[i] != "Mode";
    let line = |cells: Vec<&str>| {
        let parts: Vec<String> = cells
            .iter()
            .enumerate()
            .map(|(i, c)| if numeric(i) { format!("{c:>w$}", w = widths[i]) } else { format!("{c:<w$}", w = widths[i]) })
            .collect();
        parts.join("  ").trim_end().to_string()
    };
    writeln!(out, "{}", line(header.to_vec())).unwrap();
    let rule: usize = widths.iter().sum::<usize>() + 2 * (N - 1);
    writeln!(out, "{}", "-".repeat(rule)).unwrap();
    for row in rows {
        writeln!(out, "{}", line(row.iter().map(String::as_str).collect())).unwrap();
    }
}

/// Writes dataset.jsonl, attempts.jsonl, manifest.json and manifest.txt.
pub fn build_dataset(
    labeled: &[Trajectory],
    attempts: &[AttemptRecord],
    out_dir: &Path,
    seed: u64,
) -> Result<DatasetManifest, PipelineError> {
    if labeled.is_empty() {
        return Err(PipelineError::EmptyDataset);
    }
    let mut dataset: Vec<&Trajectory> = labeled.iter().collect();
    dataset.sort_by(|a, b| (&a.baseline_id, &a.id).cmp(&(&b.baseline_id, &b.id)));
    let mut log: Vec<&AttemptRecord> = attempts.iter().collect();
    log.sort_by(|a, b| (&a.baseline_id, &a.plan_id).cmp(&(&b.baseline_id, &b.plan_id)));

    let owned: Vec<Trajectory> = dataset.iter().map(|t| (*t).clone()).collect();
    let manifest = compute_manifest(&owned, attempts, seed);
    jsonl::write(&out_dir.join("dataset.jsonl"), &dataset)?;
    jsonl::write(&out_dir.join("attempts.jsonl"), &log)?;
    write_manifest(&manifest, out_dir)?;
    Ok(manifest)
}

pub fn write_manifest(manifest: &DatasetManifest, out_dir: &Path) -> Result<(), PipelineError> {
    let json = serde_json::to_string_pretty(manifest).expect("manifest serializes") + "\n";
    jsonl::write_text(&out_dir.join("manifest.json"), &json)?;
    jsonl::write_text(&out_dir.join("manifest.txt"), &manifest.render_text())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::taxonomy::{AgentRef, AttributionMap};

    fn labeled(id: &str, fw: &str, task: &str, pairs: &[(&str, &str)]) -> Trajectory {
        let roster = ["A", "B", "C"]
            .iter()
            .enumerate()
            .map(|(index, n)| AgentRef { name: n.to_string(), role: String::new(), index })
            .collect();
        Trajectory {
            id: id.into(),
            framework: fw.into(),
            task: task.into(),
            query: "q".into(),
            roster,
            steps: vec![],
            final_answer: "x".into(),
            failed: true,
            ground_truth: Some(AttributionMap::from_pairs(pairs.iter().map(|(a, m)| (a.to_string(), m.parse().unwrap())))),
            baseline_id: Some(id.split('#').next().unwrap().into()),
        }
    }

    fn attempt(b: &str, p: &str, fw: &str, kept: bool) -> AttemptRecord {
        AttemptRecord {
            baseline_id: b.into(),
            plan_id: p.into(),
            framework: fw.into(),
            failed: Some(kept),
            applied_targets: vec![],
            discard_reason: (!kept).then(|| "not_failed".into()),
        }
    }

    fn sample() -> (Vec<Trajectory>, Vec<AttemptRecord>) {
        let data = vec![
            labeled("s/t2#p00", "chain", "math", &[("A", "FM-1.1"), ("B", "FM-2.3")]),
            labeled("s/t1#p01", "chain", "gsm8k", &[("A", "FM-1.1")]),
            labeled("d/t1#p00", "debate", "gsm8k", &[("C", "FM-3.3"), ("C", "FM-1.1")]),
        ];
        let attempts = vec![
            attempt("s/t1", "p00", "chain", false),
            attempt("s/t1", "p01", "chain", true),
            attempt("s/t2", "p00", "chain", true),
            attempt("d/t1", "p00", "debate", true),
        ];
        (data, attempts)
    }

    #[test]
    fn manifest_recount() {
        let (data, attempts) = sample();
        let m = compute_manifest(&data, &attempts, 7);
        assert_eq!(m.total_trajectories, 3);
        assert_eq!(m.by_task.values().sum::<usize>(), 3);
        assert_eq!(m.by_framework.values().sum::<usize>(), 3);
        assert_eq!(m.by_mode.len(), 14);
        assert_eq!(m.by_mode["FM-1.1"], 3);
        assert_eq!(m.by_mode.values().sum::<usize>(), m.total_error_instances);
        assert_eq!(m.total_error_instances, 5);
        let chain = &m.injection["chain"];
        assert_eq!((chain.attempts, chain.labeled), (3, 2));
        assert!((chain.success_rate - 2.0 / 3.0).abs() < 1e-12);
        assert!((chain.avg_injected_agents - 1.5).abs() < 1e-12);
        assert_eq!(m.injection["debate"].success_rate, 1.0);
    }

    #[test]
    fn build_writes_sorted_and_deterministic() {
        let (data, attempts) = sample();
        let dir = tempfile::tempdir().unwrap();
        let m = build_dataset(&data, &attempts, dir.path(), 1).unwrap();
        assert_eq!(m.total_trajectories, 3);
        let text = std::fs::read_to_string(dir.path().join("dataset.jsonl")).unwrap();
        let ids: Vec<String> = text
            .lines()
            .map(|l| serde_json::from_str::<Trajectory>(l).unwrap().id)
            .collect();
        assert_eq!(ids, ["d/t1#p00", "s/t1#p01", "s/t2#p00"]);

        let mut rev = data.clone();
        rev.reverse();
        let dir2 = tempfile::tempdir().unwrap();
        build_dataset(&rev, &attempts, dir2.path(), 1).unwrap();
        for f in ["dataset.jsonl", "attempts.jsonl", "manifest.json", "manifest.txt"] {
            assert_eq!(std::fs::read(dir.path().join(f)).unwrap(), std::fs::read(dir2.path().join(f)).unwrap(), "{f}");
        }
        assert!(matches!(build_dataset(&[], &attempts, dir.path(), 1), Err(PipelineError::EmptyDataset)));
    }

    #[test]
    fn text_tables_have_every_facet() {
        let (data, attempts) = sample();
        let text = compute_manifest(&data, &attempts, 7).render_text();
        for needle in ["Tasks", "MAS", "Mode", "FM-1.1", "FM-3.3", "Total", "#Agents", "Avg Inject", "Success Rate", "66.7%", "100.0%"] {
            assert!(text.contains(needle), "missing {needle}\n{text}");
        }
    }
}
