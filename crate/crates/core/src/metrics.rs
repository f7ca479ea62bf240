//! Pair-, agent- and error-level precision/recall/F1 with micro and macro
//! averaging, and zero-shot prediction through the gateway.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};

use crate::gateway::{ChatMessage, Gateway, AGENT_TEMPERATURE};
use crate::pipeline::par_map;
use crate::prompts::{render_eval_prompt, EvalStyle};
use crate::sim::render_context;
use crate::taxonomy::{AttributionMap, ErrorMode, ParsedPrediction, PredictionRecord, Trajectory};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Level {
    Pair,
    Agent,
    Error,
}

impl Level {
    pub const ALL: [Level; 3] = [Level::Pair, Level::Agent, Level::Error];

    pub fn as_str(self) -> &'static str {
        match self {
            Level::Pair => "pair",
            Level::Agent => "agent",
            Level::Error => "error",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Item {
    Pair(String, ErrorMode),
    Agent(String),
    Error(ErrorMode),
}

impl fmt::Display for Item {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Item::Pair(a, m) => write!(f, "{a}:{}", m.code()),
            Item::Agent(a) => f.write_str(a),
            Item::Error(m) => f.write_str(m.code()),
        }
    }
}

pub type ItemSet = BTreeSet<Item>;

fn project(pairs: &[(String, ErrorMode)], level: Level) -> ItemSet {
    pairs
        .iter()
        .map(|(a, m)| match level {
            Level::Pair => Item::Pair(a.trim().to_string(), *m),
            Level::Agent => Item::Agent(a.trim().to_string()),
            Level::Error => Item::Error(*m),
        })
        .collect()
}

/// Projects a label and a prediction onto `level`; duplicates collapse.
pub fn level_items(gt: &AttributionMap, pred: &[(String, ErrorMode)], level: Level) -> (ItemSet, ItemSet) {
    (project(&gt.pairs(), level), project(pred, level))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Counts {
    pub fn scores(self) -> Prf {
        Prf::from_counts(self.tp, self.fp, self.fn_)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl Prf {
    pub fn from_counts(tp: usize, fp: usize, fn_: usize) -> Prf {
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
        Prf { precision, recall, f1 }
    }
}

pub fn micro_counts(samples: &[(ItemSet, ItemSet)]) -> Counts {
    let mut c = Counts::default();
    for (gt, pred) in samples {
        let tp = gt.intersection(pred).count();
        c.tp += tp;
        c.fp += pred.len() - tp;
        c.fn_ += gt.len() - tp;
    }
    c
}

pub fn micro_scores(samples: &[(ItemSet, ItemSet)]) -> Prf {
    micro_counts(samples).scores()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassRow {
    pub class: String,
    #[serde(flatten)]
    pub counts: Counts,
    #[serde(flatten)]
    pub scores: Prf,
    /// False for classes with no support and no predictions.
    pub included: bool,
}

/// Class universe: all 14 modes at the error level, observed agents or
/// pairs otherwise.
fn class_universe(samples: &[(ItemSet, ItemSet)], level: Level) -> BTreeSet<Item> {
    match level {
        Level::Error => ErrorMode::all().map(Item::Error).collect(),
        _ => samples.iter().flat_map(|(g, p)| g.iter().chain(p)).cloned().collect(),
    }
}

/// Unweighted mean of per-class P/R/F1 over classes with support or
/// predictions, plus the full per-class table.
pub fn macro_scores(samples: &[(ItemSet, ItemSet)], level: Level) -> (Prf, Vec<ClassRow>) {
    let mut counts: BTreeMap<Item, Counts> = class_universe(samples, level).into_iter().map(|c| (c, Counts::default())).collect();
    for (gt, pred) in samples {
        for item in gt.union(pred) {
            let c = counts.get_mut(item).expect("universe covers observed items");
            match (gt.contains(item), pred.contains(item)) {
                (true, true) => c.tp += 1,
                (false, true) => c.fp += 1,
                (true, false) => c.fn_ += 1,
                (false, false) => unreachable!(),
            }
        }
    }
    let rows: Vec<ClassRow> = counts
        .into_iter()
        .map(|(class, c)| ClassRow {
            class: class.to_string(),
            counts: c,
            scores: c.scores(),
            included: c.tp + c.fp + c.fn_ > 0,
        })
        .collect();
    let included: Vec<&ClassRow> = rows.iter().filter(|r| r.included).collect();
    let n = included.len();
    let mean = |f: fn(&Prf) -> f64| if n == 0 { 0.0 } else { included.iter().map(|r| f(&r.scores)).sum::<f64>() / n as f64 };
    let avg = Prf { precision: mean(|p| p.precision), recall: mean(|p| p.recall), f1: mean(|p| p.f1) };
    (avg, rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelReport {
    pub micro: Prf,
    pub micro_counts: Counts,
    #[serde(rename = "macro")]
    pub macro_: Prf,
    pub classes: Vec<ClassRow>,
}

pub fn level_report(samples: &[(ItemSet, ItemSet)], level: Level) -> LevelReport {
    let micro_counts = micro_counts(samples);
    let (macro_, classes) = macro_scores(samples, level);
    LevelReport { micro: micro_counts.scores(), micro_counts, macro_, classes }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub samples: usize,
    pub unparsable: usize,
    /// Dataset ids with no prediction (scored as empty).
    pub missing: Vec<String>,
    /// Prediction ids absent from the dataset (ignored).
    pub unknown_ids: Vec<String>,
    pub pair: LevelReport,
    pub agent: LevelReport,
    pub error: LevelReport,
}

impl EvalReport {
    pub fn level(&self, level: Level) -> &LevelReport {
        match level {
            Level::Pair => &self.pair,
            Level::Agent => &self.agent,
            Level::Error => &self.error,
        }
    }

    pub fn render_text(&self) -> String {
        let mut out = String::new();
        writeln!(
            out,
            "samples {}  unparsable {}  missing {}  unknown ids {}",
            self.samples,
            self.unparsable,
            self.missing.len(),
            self.unknown_ids.len()
        )
        .unwrap();
        writeln!(out).unwrap();
        writeln!(out, "{:<6}  {:>8}  {:>8}  {:>8}  {:>8}  {:>8}  {:>8}", "level", "micro-P", "micro-R", "micro-F1", "macro-P", "macro-R", "macro-F1").unwrap();
        for level in Level::ALL {
            let r = self.level(level);
            writeln!(
                out,
                "{:<6}  {:>8.4}  {:>8.4}  {:>8.4}  {:>8.4}  {:>8.4}  {:>8.4}",
                level.as_str(),
                r.micro.precision,
                r.micro.recall,
                r.micro.f1,
                r.macro_.precision,
                r.macro_.recall,
                r.macro_.f1
            )
            .unwrap();
        }
        for level in Level::ALL {
            let rows = &self.level(level).classes;
            let width = rows.iter().map(|r| r.class.chars().count()).max().unwrap_or(5).max(5);
            writeln!(out).unwrap();
            writeln!(out, "{} classes", level.as_str()).unwrap();
            writeln!(out, "{:<width$}  {:>5}  {:>5}  {:>5}  {:>6}  {:>6}  {:>6}", "class", "TP", "FP", "FN", "P", "R", "F1").unwrap();
            for r in rows {
                let mark = if r.included { "" } else { "  (excluded)" };
                writeln!(
                    out,
                    "{:<width$}  {:>5}  {:>5}  {:>5}  {:>6.3}  {:>6.3}  {:>6.3}{mark}",
                    r.class, r.counts.tp, r.counts.fp, r.counts.fn_, r.scores.precision, r.scores.recall, r.scores.f1
                )
                .unwrap();
            }
        }
        out
    }
}

/// Scores predictions against dataset labels. Missing predictions count as
/// empty; unparsable ones count as empty and as unparsable.
pub fn evaluate_predictions(dataset: &[Trajectory], predictions: &[PredictionRecord]) -> EvalReport {
    let known: BTreeSet<&str> = dataset.iter().map(|t| t.id.as_str()).collect();
    let mut by_id: BTreeMap<&str, ParsedPrediction> = BTreeMap::new();
    let mut unknown_ids = BTreeSet::new();
    for p in predictions {
        if known.contains(p.id.as_str()) {
            by_id.insert(&p.id, p.parse());
        } else {
            unknown_ids.insert(p.id.clone());
        }
    }
    let empty = AttributionMap::from_pairs(Vec::<(String, ErrorMode)>::new());
    let mut missing = Vec::new();
    let mut unparsable = 0;
    let mut per_level: [Vec<(ItemSet, ItemSet)>; 3] = Default::default();
    for t in dataset {
        let gt = t.ground_truth.as_ref().unwrap_or(&empty);
        let pairs: &[(String, ErrorMode)] = match by_id.get(t.id.as_str()) {
            Some(p) if p.well_formed => &p.pairs,
            Some(_) => {
                unparsable += 1;
                &[]
            }
            None => {
                missing.push(t.id.clone());
                &[]
            }
        };
        for (slot, level) in per_level.iter_mut().zip(Level::ALL) {
            slot.push(level_items(gt, pairs, level));
        }
    }
    let [pair, agent, error] = per_level;
    EvalReport {
        samples: dataset.len(),
        unparsable,
        missing,
        unknown_ids: unknown_ids.into_iter().collect(),
        pair: level_report(&pair, Level::Pair),
        agent: level_report(&agent, Level::Agent),
        error: level_report(&error, Level::Error),
    }
}

/// The conversation shown to an evaluated model: the task line and one
/// `[agent] content` block per turn. Injected originals are never shown.
pub fn serialize_conversation(t: &Trajectory) -> String {
    let turns: Vec<(&str, &str)> = t.steps.iter().map(|s| (s.agent.as_str(), s.content.as_str())).collect();
    render_context(&t.query, &turns)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ZeroShotOutput {
    /// Sorted by id; `raw` holds the model output, `faulty_agents` its parse.
    pub predictions: Vec<PredictionRecord>,
    /// (id, error) for samples whose request failed.
    pub failures: Vec<(String, String)>,
}

pub fn run_zero_shot(dataset: &[Trajectory], gateway: &Gateway, style: EvalStyle, parallel: usize) -> ZeroShotOutput {
    let results = par_map(dataset, parallel, |t| {
        let prompt = render_eval_prompt(style, &serialize_conversation(t));
        let req = gateway.request(vec![ChatMessage::user(prompt)], AGENT_TEMPERATURE);
        (t.id.clone(), gateway.complete(&req))
    });
    let mut out = ZeroShotOutput::default();
    for (id, result) in results {
        match result {
            Ok(raw) => {
                let parsed = crate::taxonomy::parse_prediction(&raw);
                let mut record = PredictionRecord::from_pairs(id, &parsed.pairs);
                if !parsed.well_formed {
                    record.faulty_agents = None;
                }
                record.raw = Some(raw);
                out.predictions.push(record);
            }
            Err(e) => out.failures.push((id, e.to_string())),
        }
    }
    out.predictions.sort_by(|a, b| a.id.cmp(&b.id));
    out.failures.sort();
    out
}
