//! Error-mode taxonomy, trajectory data model and the prediction parser.
//!
//! Everything downstream (injection, labeling, reward, metrics) speaks in
//! terms of the types defined here. Canonical serialization keeps attribution
//! entries sorted by agent name and mode sets sorted by code, so artifacts
//! written from these types are byte-stable.

use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::Value;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TaxonomyError {
    #[error("unknown error-mode code {0:?}")]
    UnknownCode(String),
    #[error("attribution entry for {0:?} has an empty mode set")]
    EmptyModeSet(String),
    #[error("duplicate attribution entry for agent {0:?}")]
    DuplicateAgent(String),
}

/// High-level failure category an error mode belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Category {
    Specification,
    InterAgent,
    Verification,
}

impl Category {
    pub fn as_str(self) -> &'static str {
        match self {
            Category::Specification => "specification",
            Category::InterAgent => "inter-agent",
            Category::Verification => "verification",
        }
    }
}

struct ModeDef {
    code: &'static str,
    title: &'static str,
    description: &'static str,
}

const MODE_DEFS: [ModeDef; 14] = [
    ModeDef {
        code: "FM-1.1",
        title: "Task specification deviation",
        description: "Agent deviates from specified task requirements (e.g., was asked to write code in Python, but used JavaScript).",
    },
    ModeDef {
        code: "FM-1.2",
        title: "Role specification deviation",
        description: "Agent acts outside its designated role (e.g., a 'CodeWriter' agent starts criticizing other agents' work, which is the 'Critic's' role).",
    },
    ModeDef {
        code: "FM-1.3",
        title: "Add redundant steps",
        description: "Agent adds unnecessary or duplicate steps (e.g., imports a library that was already imported in a previous step).",
    },
    ModeDef {
        code: "FM-1.4",
        title: "Remove conversation history",
        description: "Agent ignores or removes important context from previous turns (e.g., ignores a user's correction from the previous message).",
    },
    ModeDef {
        code: "FM-1.5",
        title: "Remove termination conditions",
        description: "Agent fails to define proper stopping criteria, leading to loops or unfinished tasks (e.g., writes a recursive function with no base case).",
    },
    ModeDef {
        code: "FM-2.1",
        title: "Repeat handled tasks",
        description: "Agent redundantly handles already completed tasks (e.g., re-writes a piece of code that was already finalized and approved).",
    },
    ModeDef {
        code: "FM-2.2",
        title: "Make request ambiguous",
        description: "Agent provides unclear or confusing instructions to other agents (e.g., asks another agent to \"handle the data\" without specifying how).",
    },
    ModeDef {
        code: "FM-2.3",
        title: "Deviate from main goal",
        description: "Agent pursues objectives unrelated to the main task (e.g., starts discussing the history of programming languages in the middle of a coding task).",
    },
    ModeDef {
        code: "FM-2.4",
        title: "Hide important information",
        description: "Agent withholds crucial information needed by other agents (e.g., knows a library has a bug but doesn't mention it).",
    },
    ModeDef {
        code: "FM-2.5",
        title: "Ignore other agents",
        description: "Agent fails to consider input, corrections, or questions from other agents.",
    },
    ModeDef {
        code: "FM-2.6",
        title: "Inconsistent reasoning",
        description: "Agent's logic contradicts its own previous statements (e.g., in step 2 agent says 'option A is best', but in step 4 says 'option A is a bad choice' without new information).",
    },
    ModeDef {
        code: "FM-3.1",
        title: "Premature termination",
        description: "Agent stops or declares the task complete before all requirements are met.",
    },
    ModeDef {
        code: "FM-3.2",
        title: "Remove verification steps",
        description: "Agent skips necessary validation or testing steps (e.g., writes code but doesn't write any unit tests for it).",
    },
    ModeDef {
        code: "FM-3.3",
        title: "Incorrect verification",
        description: "Agent performs flawed or wrong verification (e.g., writes a test that doesn't actually check for the correct condition).",
    },
];

/// One of the 14 taxonomy error modes. Ordering follows code order.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ErrorMode(u8);

impl ErrorMode {
    pub const COUNT: usize = 14;

    pub fn all() -> impl Iterator<Item = ErrorMode> + Clone {
        (0..Self::COUNT as u8).map(ErrorMode)
    }

    /// Position in code order, `0..14`.
    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn from_index(index: usize) -> Option<ErrorMode> {
        (index < Self::COUNT).then_some(ErrorMode(index as u8))
    }

    pub fn code(self) -> &'static str {
        MODE_DEFS[self.index()].code
    }

    pub fn title(self) -> &'static str {
        MODE_DEFS[self.index()].title
    }

    pub fn description(self) -> &'static str {
        MODE_DEFS[self.index()].description
    }

    pub fn category(self) -> Category {
        match self.major() {
            1 => Category::Specification,
            2 => Category::InterAgent,
            _ => Category::Verification,
        }
    }

    fn major(self) -> u8 {
        self.code().as_bytes()[3] - b'0'
    }
}

impl fmt::Debug for ErrorMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl fmt::Display for ErrorMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for ErrorMode {
    type Err = TaxonomyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        canonical_mode(s)
    }
}

impl Serialize for ErrorMode {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.code())
    }
}

impl<'de> Deserialize<'de> for ErrorMode {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(deserializer)?;
        canonical_mode(&raw).map_err(serde::de::Error::custom)
    }
}

/// Resolves `FM-x.y` or the alias `EM-x.y` (case-insensitive, surrounding
/// whitespace ignored) to its canonical mode.
pub fn canonical_mode(code: &str) -> Result<ErrorMode, TaxonomyError> {
    let trimmed = code.trim();
    let unknown = || TaxonomyError::UnknownCode(code.to_string());
    if trimmed.len() != 6 || !trimmed.is_ascii() {
        return Err(unknown());
    }
    let prefix = trimmed[..3].to_ascii_uppercase();
    if prefix != "FM-" && prefix != "EM-" {
        return Err(unknown());
    }
    let canonical = format!("FM-{}", &trimmed[3..]);
    MODE_DEFS
        .iter()
        .position(|def| def.code == canonical)
        .map(|i| ErrorMode(i as u8))
        .ok_or_else(unknown)
}

/// An agent in a roster.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentRef {
    pub name: String,
    pub role: String,
    pub index: usize,
}

/// Manipulator strategy used for a single injection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    PromptInjection,
    ResponseCorruption,
}

impl Strategy {
    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::PromptInjection => "prompt_injection",
            Strategy::ResponseCorruption => "response_corruption",
        }
    }
}

/// Marks a turn whose content was produced under an injection.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InjectionRecord {
    pub strategy: Strategy,
    pub modes: BTreeSet<ErrorMode>,
    pub original_content: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Step {
    pub index: usize,
    pub agent: String,
    pub context_digest: String,
    pub content: String,
    pub injection: Option<InjectionRecord>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributionEntry {
    pub agent_name: String,
    pub modes: BTreeSet<ErrorMode>,
}

/// Ground-truth or predicted attribution: faulty agents and their modes.
///
/// Entries are kept sorted by agent name.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct AttributionMap {
    entries: Vec<AttributionEntry>,
}

impl AttributionMap {
    pub fn new(entries: Vec<AttributionEntry>) -> Result<Self, TaxonomyError> {
        let mut seen = HashSet::new();
        for entry in &entries {
            if entry.modes.is_empty() {
                return Err(TaxonomyError::EmptyModeSet(entry.agent_name.clone()));
            }
            if !seen.insert(entry.agent_name.as_str()) {
                return Err(TaxonomyError::DuplicateAgent(entry.agent_name.clone()));
            }
        }
        let mut entries = entries;
        entries.sort_by(|a, b| a.agent_name.cmp(&b.agent_name));
        Ok(AttributionMap { entries })
    }

    /// Groups pairs by agent. Duplicate pairs collapse.
    pub fn from_pairs<I, S>(pairs: I) -> Self
    where
        I: IntoIterator<Item = (S, ErrorMode)>,
        S: Into<String>,
    {
        let mut grouped: std::collections::BTreeMap<String, BTreeSet<ErrorMode>> =
            Default::default();
        for (agent, mode) in pairs {
            grouped.entry(agent.into()).or_default().insert(mode);
        }
        AttributionMap {
            entries: grouped
                .into_iter()
                .map(|(agent_name, modes)| AttributionEntry { agent_name, modes })
                .collect(),
        }
    }

    pub fn entries(&self) -> &[AttributionEntry] {
        &self.entries
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn agents(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.agent_name.as_str())
    }

    pub fn pair_count(&self) -> usize {
        self.entries.iter().map(|e| e.modes.len()).sum()
    }

    /// Pairs in canonical order (agent name, then mode code).
    pub fn pairs(&self) -> Vec<(String, ErrorMode)> {
        self.entries
            .iter()
            .flat_map(|e| e.modes.iter().map(|m| (e.agent_name.clone(), *m)))
            .collect()
    }
}

impl<'de> Deserialize<'de> for AttributionMap {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Raw {
            entries: Vec<AttributionEntry>,
        }
        let raw = Raw::deserialize(deserializer)?;
        AttributionMap::new(raw.entries).map_err(serde::de::Error::custom)
    }
}

/// `{(n, y) : y ∈ Y_n}` over all entries.
pub fn flatten_pairs(map: &AttributionMap) -> BTreeSet<(String, ErrorMode)> {
    map.pairs().into_iter().collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trajectory {
    pub id: String,
    pub framework: String,
    pub task: String,
    pub query: String,
    pub roster: Vec<AgentRef>,
    pub steps: Vec<Step>,
    pub final_answer: String,
    pub failed: bool,
    pub ground_truth: Option<AttributionMap>,
    pub baseline_id: Option<String>,
}

impl Trajectory {
    pub fn has_agent(&self, name: &str) -> bool {
        self.roster.iter().any(|a| a.name == name)
    }

    /// Canonical single-line JSON.
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("trajectory serializes")
    }
}

/// Checks every data-model invariant. Empty result means valid.
pub fn validate_trajectory(t: &Trajectory) -> Vec<String> {
    let mut violations = Vec::new();
    if t.id.trim().is_empty() {
        violations.push("id: must be non-empty".to_string());
    }

    let mut names = HashSet::new();
    for (pos, agent) in t.roster.iter().enumerate() {
        if agent.name.trim().is_empty() {
            violations.push(format!("roster[{pos}].name: must be non-empty"));
        }
        if !names.insert(agent.name.as_str()) {
            violations.push(format!("roster[{pos}].name: duplicate name {:?}", agent.name));
        }
        if agent.index != pos {
            violations.push(format!(
                "roster[{pos}].index: expected {pos}, found {}",
                agent.index
            ));
        }
    }

    for (pos, step) in t.steps.iter().enumerate() {
        if step.index != pos {
            violations.push(format!(
                "steps[{pos}].index: indices must be contiguous from 0, found {}",
                step.index
            ));
        }
        if !names.contains(step.agent.as_str()) {
            violations.push(format!(
                "steps[{pos}].agent: {:?} is not in the roster",
                step.agent
            ));
        }
        if let Some(inj) = &step.injection {
            if inj.original_content == step.content {
                violations.push(format!(
                    "steps[{pos}].injection.original_content: must differ from content"
                ));
            }
            if inj.modes.is_empty() {
                violations.push(format!("steps[{pos}].injection.modes: must be non-empty"));
            }
        }
    }

    if let Some(gt) = &t.ground_truth {
        if !t.failed {
            violations.push("failed: must be true when ground_truth is present".to_string());
        }
        if gt.is_empty() {
            violations.push("ground_truth.entries: must be non-empty".to_string());
        }
        for entry in gt.entries() {
            if !names.contains(entry.agent_name.as_str()) {
                violations.push(format!(
                    "ground_truth.entries: agent {:?} is not in the roster",
                    entry.agent_name
                ));
            }
        }
    }

    if t.baseline_id.is_none() && t.ground_truth.is_none() && t.steps.iter().any(|s| s.injection.is_some()) {
        violations.push("steps: a baseline trajectory must not carry injections".to_string());
    }

    violations
}

/// A model's attribution output after parsing.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedPrediction {
    pub pairs: Vec<(String, ErrorMode)>,
    pub well_formed: bool,
    /// Entries inside the accepted object that were dropped (unknown code,
    /// missing key, wrong type).
    pub skipped: usize,
    pub raw: String,
}

impl ParsedPrediction {
    pub fn malformed(raw: &str) -> Self {
        ParsedPrediction {
            pairs: Vec::new(),
            well_formed: false,
            skipped: 0,
            raw: raw.to_string(),
        }
    }
}

/// Finds the last JSON object in `text` carrying a `"faulty_agents"` list and
/// extracts its `(agent_name, error_type)` records in output order.
///
/// Never fails: text without such an object yields `well_formed = false`.
pub fn parse_prediction(text: &str) -> ParsedPrediction {
    for (start, _) in text.char_indices().rev().filter(|(_, c)| *c == '{') {
        let mut stream = serde_json::Deserializer::from_str(&text[start..]).into_iter::<Value>();
        let Some(Ok(Value::Object(obj))) = stream.next() else {
            continue;
        };
        let Some(Value::Array(items)) = obj.get("faulty_agents") else {
            continue;
        };
        let mut pairs = Vec::with_capacity(items.len());
        let mut skipped = 0;
        for item in items {
            match prediction_entry(item) {
                Some(pair) => pairs.push(pair),
                None => skipped += 1,
            }
        }
        return ParsedPrediction {
            pairs,
            well_formed: true,
            skipped,
            raw: text.to_string(),
        };
    }
    ParsedPrediction::malformed(text)
}

fn prediction_entry(item: &Value) -> Option<(String, ErrorMode)> {
    let obj = item.as_object()?;
    let agent = obj.get("agent_name")?.as_str()?.trim();
    if agent.is_empty() {
        return None;
    }
    let mode = canonical_mode(obj.get("error_type")?.as_str()?).ok()?;
    Some((agent.to_string(), mode))
}

/// Renders pairs in the `{"faulty_agents": [...]}` output format.
pub fn serialize_prediction(pairs: &[(String, ErrorMode)]) -> String {
    let items: Vec<Value> = pairs
        .iter()
        .map(|(agent, mode)| serde_json::json!({"agent_name": agent, "error_type": mode.code()}))
        .collect();
    serde_json::json!({ "faulty_agents": items }).to_string()
}

/// One line of a predictions file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub faulty_agents: Option<Value>,
    /// Unparsed model output; when present it is parsed instead of `faulty_agents`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw: Option<String>,
}

impl PredictionRecord {
    pub fn from_pairs(id: impl Into<String>, pairs: &[(String, ErrorMode)]) -> Self {
        let value: Value = serde_json::from_str(&serialize_prediction(pairs)).expect("valid json");
        PredictionRecord {
            id: id.into(),
            faulty_agents: value.get("faulty_agents").cloned(),
            raw: None,
        }
    }

    pub fn parse(&self) -> ParsedPrediction {
        match (&self.raw, &self.faulty_agents) {
            (Some(raw), _) => parse_prediction(raw),
            (None, Some(value)) => {
                let text = serde_json::json!({ "faulty_agents": value }).to_string();
                parse_prediction(&text)
            }
            (None, None) => ParsedPrediction::malformed(""),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mode(code: &str) -> ErrorMode {
        canonical_mode(code).unwrap()
    }

    fn baseline() -> Trajectory {
        Trajectory {
            id: "t0".into(),
            framework: "chain".into(),
            task: "gsm8k".into(),
            query: "1+1?".into(),
            roster: vec![
                AgentRef { name: "A".into(), role: "solver".into(), index: 0 },
                AgentRef { name: "B".into(), role: "checker".into(), index: 1 },
            ],
            steps: vec![
                Step { index: 0, agent: "A".into(), context_digest: "q".into(), content: "2".into(), injection: None },
                Step { index: 1, agent: "B".into(), context_digest: "q".into(), content: "answer: 2".into(), injection: None },
            ],
            final_answer: "2".into(),
            failed: false,
            ground_truth: None,
            baseline_id: None,
        }
    }

    #[test]
    fn canonical_mode_cases() {
        assert_eq!(mode("FM-2.3").code(), "FM-2.3");
        assert_eq!(mode("EM-1.4").code(), "FM-1.4");
        assert_eq!(mode("  fm-3.1 ").code(), "FM-3.1");
        assert!(matches!(canonical_mode("FM-4.1"), Err(TaxonomyError::UnknownCode(_))));
        assert!(canonical_mode("FM-1.6").is_err());
        assert!(canonical_mode("FM-2.7").is_err());
        assert!(canonical_mode("").is_err());
        assert!(canonical_mode("XM-1.1").is_err());
    }

    #[test]
    fn fourteen_modes_with_categories() {
        let all: Vec<_> = ErrorMode::all().collect();
        assert_eq!(all.len(), 14);
        let spec = all.iter().filter(|m| m.category() == Category::Specification).count();
        let inter = all.iter().filter(|m| m.category() == Category::InterAgent).count();
        let verif = all.iter().filter(|m| m.category() == Category::Verification).count();
        assert_eq!((spec, inter, verif), (5, 6, 3));
        for m in all {
            assert_eq!(canonical_mode(m.code()).unwrap(), m);
        }
    }

    #[test]
    fn definitions_match_evaluation_prompt() {
        let prompt = include_str!("../assets/eval_standard.txt");
        for m in ErrorMode::all() {
            let line = format!("- {}: **{}** - {}", m.code(), m.title(), m.description());
            assert!(prompt.contains(&line), "missing definition line for {m}");
        }
    }

    #[test]
    fn flatten_pairs_cases() {
        let map = AttributionMap::from_pairs([("A", mode("FM-1.1")), ("A", mode("FM-2.3"))]);
        let flat = flatten_pairs(&map);
        assert_eq!(flat.len(), 2);
        assert!(flat.contains(&("A".to_string(), mode("FM-1.1"))));
        assert!(flatten_pairs(&AttributionMap::default()).is_empty());

        let two = AttributionMap::from_pairs([("A", mode("FM-1.1")), ("B", mode("FM-1.1"))]);
        // hand enumeration: one pair per entry
        let mut expected = BTreeSet::new();
        for entry in two.entries() {
            for m in &entry.modes {
                expected.insert((entry.agent_name.clone(), *m));
            }
        }
        assert_eq!(flatten_pairs(&two), expected);
        assert_eq!(expected.len(), 2);
    }

    #[test]
    fn attribution_map_rejects_bad_entries() {
        let empty = AttributionEntry { agent_name: "A".into(), modes: BTreeSet::new() };
        assert!(matches!(AttributionMap::new(vec![empty]), Err(TaxonomyError::EmptyModeSet(_))));
        let e = || AttributionEntry { agent_name: "A".into(), modes: [mode("FM-1.1")].into() };
        assert!(matches!(AttributionMap::new(vec![e(), e()]), Err(TaxonomyError::DuplicateAgent(_))));
        let json = r#"{"entries":[{"agent_name":"A","modes":[]}]}"#;
        assert!(serde_json::from_str::<AttributionMap>(json).is_err());
    }

    #[test]
    fn canonical_serialization_sorts_entries_and_modes() {
        let map = AttributionMap::new(vec![
            AttributionEntry { agent_name: "Zed".into(), modes: [mode("FM-3.1"), mode("FM-1.2")].into() },
            AttributionEntry { agent_name: "Amy".into(), modes: [mode("FM-2.2")].into() },
        ])
        .unwrap();
        assert_eq!(
            serde_json::to_string(&map).unwrap(),
            r#"{"entries":[{"agent_name":"Amy","modes":["FM-2.2"]},{"agent_name":"Zed","modes":["FM-1.2","FM-3.1"]}]}"#
        );
    }

    #[test]
    fn parse_contract_examples() {
        let p = parse_prediction(r#"{"faulty_agents":[{"agent_name":"Solver","error_type":"FM-3.1"}]}"#);
        assert!(p.well_formed);
        assert_eq!(p.pairs, vec![("Solver".to_string(), mode("FM-3.1"))]);

        let p = parse_prediction("Step 1: the solver did fine.\nStep 3: Final Judgment\n{\"faulty_agents\": []}");
        assert!(p.well_formed);
        assert!(p.pairs.is_empty());

        let p = parse_prediction("no json here");
        assert!(!p.well_formed);
        assert!(p.pairs.is_empty());
    }

    #[test]
    fn parse_last_object_wins_and_skips_bad_entries() {
        let text = r#"draft {"faulty_agents":[{"agent_name":"A","error_type":"FM-1.1"}]}
final {"faulty_agents":[{"agent_name":" B ","error_type":"em-2.2"},{"agent_name":"C","error_type":"FM-9.9"},{"agent_name":"D"}]}"#;
        let p = parse_prediction(text);
        assert!(p.well_formed);
        assert_eq!(p.pairs, vec![("B".to_string(), mode("FM-2.2"))]);
        assert_eq!(p.skipped, 2);
    }

    #[test]
    fn parse_rejects_wrong_shapes() {
        for text in [
            r#"{"faulty_agents": "none"}"#,
            r#"{"faulty_agent": []}"#,
            r#"{"faulty_agents": [}"#,
            r#"[{"agent_name":"A","error_type":"FM-1.1"}]"#,
            "{'faulty_agents': []}",
        ] {
            assert!(!parse_prediction(text).well_formed, "accepted {text}");
        }
    }

    #[test]
    fn validate_baseline_and_violations() {
        let t = baseline();
        assert!(validate_trajectory(&t).is_empty());

        let mut bad = baseline();
        bad.failed = true;
        bad.baseline_id = Some("t0".into());
        bad.ground_truth = Some(AttributionMap::from_pairs([("Ghost", mode("FM-1.1"))]));
        let v = validate_trajectory(&bad);
        assert_eq!(v.len(), 1, "{v:?}");
        assert!(v[0].contains("Ghost"));

        let mut gap = baseline();
        gap.steps[1].index = 2;
        let v = validate_trajectory(&gap);
        assert_eq!(v.len(), 1, "{v:?}");
        assert!(v[0].starts_with("steps[1].index"));

        let mut unflagged = baseline();
        unflagged.ground_truth = Some(AttributionMap::from_pairs([("A", mode("FM-1.1"))]));
        assert!(validate_trajectory(&unflagged).iter().any(|v| v.starts_with("failed")));
    }

    #[test]
    fn prediction_record_parses_raw_first() {
        let rec = PredictionRecord {
            id: "x".into(),
            faulty_agents: Some(serde_json::json!([])),
            raw: Some("garbage".into()),
        };
        assert!(!rec.parse().well_formed);
        let rec = PredictionRecord::from_pairs("x", &[("A".into(), mode("FM-1.5"))]);
        assert_eq!(rec.parse().pairs, vec![("A".to_string(), mode("FM-1.5"))]);
        let rec: PredictionRecord = serde_json::from_str(r#"{"id":"x","faulty_agents":5}"#).unwrap();
        assert!(!rec.parse().well_formed);
    }
}
