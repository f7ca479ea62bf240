//! Deterministic scripted multi-agent executor.
//!
//! A [`Scenario`] fixes a topology and one behavior per roster agent; [`run`]
//! drives it on a [`TaskInstance`] and returns a judged [`Trajectory`]. An
//! optional [`TurnHook`] can rewrite a turn's input context or output, which
//! is how the manipulator arms a re-run.

pub mod answer;
pub mod topology;

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{ChatMessage, Gateway, GatewayError, AGENT_TEMPERATURE};
use crate::taxonomy::{AgentRef, InjectionRecord, Step, Trajectory};

pub use answer::{extract_answer, EvaluatorKind};
pub use topology::{schedule, TopologyKind, TopologySpec};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid topology: {0}")]
    InvalidTopology(String),
    #[error("invalid task {id}: {reason}")]
    InvalidTask { id: String, reason: String },
    #[error("invalid scenario {name}: {reason}")]
    InvalidScenario { name: String, reason: String },
    #[error("script for agent {agent} exhausted at its turn {occurrence}")]
    BehaviorExhausted { agent: String, occurrence: usize },
    #[error("{0} requires a gateway")]
    NeedsGateway(String),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("reading suite {path}: {reason}")]
    Suite { path: String, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    Math,
    Gsm8k,
    CodeLike,
    Science,
    MultipleChoice,
    Agentic,
}

impl Domain {
    pub const ALL: [Domain; 6] = [
        Domain::Math,
        Domain::Gsm8k,
        Domain::CodeLike,
        Domain::Science,
        Domain::MultipleChoice,
        Domain::Agentic,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Domain::Math => "math",
            Domain::Gsm8k => "gsm8k",
            Domain::CodeLike => "code_like",
            Domain::Science => "science",
            Domain::MultipleChoice => "multiple_choice",
            Domain::Agentic => "agentic",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskInstance {
    pub id: String,
    pub domain: Domain,
    pub query: String,
    pub reference_answer: String,
    pub evaluator: EvaluatorKind,
}

impl TaskInstance {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |reason: &str| {
            Err(SimError::InvalidTask { id: self.id.clone(), reason: reason.to_string() })
        };
        if self.id.trim().is_empty() {
            return bad("id must be non-empty");
        }
        if self.evaluator.is_numeric() && answer::parse_number(&self.reference_answer).is_none() {
            return bad("numeric evaluators need a numeric reference answer");
        }
        if self.evaluator == EvaluatorKind::ChoiceLetter {
            let r = self.reference_answer.trim();
            if r.len() != 1 || !('A'..='J').contains(&r.chars().next().unwrap()) {
                return bad("choice_letter reference must be a single letter A-J");
            }
        }
        Ok(())
    }
}

/// Context-driven scripted policies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Rule {
    /// Repeats the content of the last turn visible in the context, or the
    /// query when no turn is visible.
    RestatePrevious,
    /// Emits `answer: <reference>`.
    EmitReferenceAnswer,
    /// Emits `answer: <x>` for the most frequent answer among visible turns
    /// (ties go to the earliest seen). For free-text evaluators only turns
    /// with an `answer:` marker count.
    AggregateMajority,
}

/// How an agent produces its action.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Behavior {
    /// Canned responses, one per scheduled turn of the agent.
    Script { script: Vec<String> },
    Rule { rule: Rule },
    /// Model-backed agent called through the gateway at temperature 0.
    Live { live: bool },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentSpec {
    pub name: String,
    #[serde(default)]
    pub role: String,
    #[serde(flatten)]
    pub behavior: Behavior,
}

/// A topology plus roster: one simulated MAS configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    /// Tag recorded in trajectories; defaults to the topology kind.
    #[serde(default)]
    pub framework: String,
    #[serde(flatten)]
    pub topology: TopologySpec,
    pub agents: Vec<AgentSpec>,
}

impl Scenario {
    pub fn new(name: impl Into<String>, topology: TopologySpec, agents: Vec<AgentSpec>) -> Self {
        Scenario {
            name: name.into(),
            framework: topology.kind.as_str().to_string(),
            topology,
            agents,
        }
    }

    pub fn framework(&self) -> &str {
        if self.framework.is_empty() {
            self.topology.kind.as_str()
        } else {
            &self.framework
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        self.topology.validate()?;
        let bad = |reason: String| Err(SimError::InvalidScenario { name: self.name.clone(), reason });
        if self.agents.len() != self.topology.agent_count {
            return bad(format!(
                "{} agents listed for agent_count {}",
                self.agents.len(),
                self.topology.agent_count
            ));
        }
        let mut seen = std::collections::HashSet::new();
        for a in &self.agents {
            if a.name.trim().is_empty() || a.name.contains(['[', ']', '\n']) {
                return bad(format!("agent name {:?} must be non-empty without brackets or newlines", a.name));
            }
            if !seen.insert(a.name.as_str()) {
                return bad(format!("duplicate agent name {:?}", a.name));
            }
        }
        Ok(())
    }

    pub fn roster(&self) -> Vec<AgentRef> {
        self.agents
            .iter()
            .enumerate()
            .map(|(index, a)| AgentRef {
                name: a.name.clone(),
                role: if a.role.is_empty() {
                    self.topology.default_role(index).to_string()
                } else {
                    a.role.clone()
                },
                index,
            })
            .collect()
    }

    pub fn needs_gateway(&self) -> bool {
        self.agents.iter().any(|a| matches!(a.behavior, Behavior::Live { live: true }))
    }
}

/// Topology/task configuration file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Suite {
    #[serde(default, rename = "scenario")]
    pub scenarios: Vec<Scenario>,
    #[serde(default, rename = "task")]
    pub tasks: Vec<TaskInstance>,
}

impl Suite {
    pub fn from_toml(text: &str) -> Result<Suite, SimError> {
        let suite: Suite = toml::from_str(text)
            .map_err(|e| SimError::Suite { path: "<inline>".into(), reason: e.to_string() })?;
        suite.validate()?;
        Ok(suite)
    }

    pub fn load(path: &Path) -> Result<Suite, SimError> {
        let text = std::fs::read_to_string(path).map_err(|e| SimError::Suite {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        Self::from_toml(&text).map_err(|e| match e {
            SimError::Suite { reason, .. } => {
                SimError::Suite { path: path.display().to_string(), reason }
            }
            other => other,
        })
    }

    pub fn validate(&self) -> Result<(), SimError> {
        for s in &self.scenarios {
            s.validate()?;
        }
        for t in &self.tasks {
            t.validate()?;
        }
        Ok(())
    }

    pub fn scenario(&self, name: &str) -> Option<&Scenario> {
        self.scenarios.iter().find(|s| s.name == name)
    }

    pub fn task(&self, id: &str) -> Option<&TaskInstance> {
        self.tasks.iter().find(|t| t.id == id)
    }
}

/// Identifies the turn being executed.
#[derive(Debug, Clone)]
pub struct TurnInfo<'a> {
    pub step: usize,
    pub agent_index: usize,
    pub agent: &'a AgentRef,
    /// 1-based count of this agent's turns so far, including this one.
    pub occurrence: usize,
    pub task: &'a TaskInstance,
}

/// Result of a turn handled by a hook.
#[derive(Debug, Clone)]
pub struct TurnOutcome {
    pub context: String,
    pub content: String,
    pub injection: Option<InjectionRecord>,
}

/// Observes every turn and may replace it.
pub trait TurnHook {
    /// `act` runs the agent's policy on a given context and is pure for a
    /// fixed turn. Returning `None` lets the harness act normally.
    fn intercept(
        &mut self,
        turn: &TurnInfo<'_>,
        context: &str,
        act: &mut dyn FnMut(&str) -> Result<String, SimError>,
    ) -> Result<Option<TurnOutcome>, SimError>;
}

/// Prefix of a turn line in rendered contexts and conversations.
pub fn turn_header(agent: &str) -> String {
    format!("[{agent}] ")
}

/// Renders one turn; continuation lines are indented so turn boundaries
/// stay unambiguous.
pub fn render_turn(agent: &str, content: &str) -> String {
    format!("{}{}", turn_header(agent), content.replace('\n', "\n    "))
}

/// The text an agent sees: the task line followed by its visible turns.
pub fn render_context(query: &str, turns: &[(&str, &str)]) -> String {
    let mut out = format!("Task: {}", query.replace('\n', "\n    "));
    for (agent, content) in turns {
        out.push('\n');
        out.push_str(&render_turn(agent, content));
    }
    out
}

/// Inverse of [`render_context`], lenient on rewritten text: returns the
/// task text and the `(agent, content)` blocks.
pub fn parse_context(text: &str) -> (String, Vec<(String, String)>) {
    let mut query = String::new();
    let mut blocks: Vec<(String, String)> = Vec::new();
    for (i, line) in text.split('\n').enumerate() {
        let header = line
            .strip_prefix('[')
            .and_then(|rest| rest.find("] ").map(|end| (&rest[..end], &rest[end + 2..])))
            .filter(|(name, _)| !name.is_empty());
        if let Some((name, content)) = header {
            blocks.push((name.to_string(), content.to_string()));
            continue;
        }
        let cont = line.strip_prefix("    ").unwrap_or(line);
        match blocks.last_mut() {
            Some((_, content)) => {
                content.push('\n');
                content.push_str(cont);
            }
            None if i == 0 => query.push_str(line.strip_prefix("Task: ").unwrap_or(line)),
            None => {
                query.push('\n');
                query.push_str(cont);
            }
        }
    }
    (query, blocks)
}

fn apply_rule(rule: Rule, context: &str, task: &TaskInstance) -> String {
    match rule {
        Rule::EmitReferenceAnswer => format!("answer: {}", task.reference_answer),
        Rule::RestatePrevious => {
            let (query, blocks) = parse_context(context);
            blocks.last().map(|(_, c)| c.clone()).unwrap_or(query)
        }
        Rule::AggregateMajority => {
            let (_, blocks) = parse_context(context);
            let mut tally: Vec<(String, usize)> = Vec::new();
            for (_, content) in &blocks {
                if !task.evaluator.is_numeric()
                    && task.evaluator != EvaluatorKind::ChoiceLetter
                    && !content.to_lowercase().contains("answer:")
                {
                    continue;
                }
                let ans = extract_answer(content, task.evaluator);
                if ans.is_empty() {
                    continue;
                }
                match tally.iter_mut().find(|(a, _)| *a == ans) {
                    Some((_, n)) => *n += 1,
                    None => tally.push((ans, 1)),
                }
            }
            let best = tally.iter().map(|(_, n)| *n).max();
            match tally.into_iter().find(|(_, n)| Some(*n) == best) {
                Some((ans, _)) => format!("answer: {ans}"),
                None => "No answer could be aggregated.".to_string(),
            }
        }
    }
}

fn act(
    behavior: &Behavior,
    agent: &AgentRef,
    occurrence: usize,
    context: &str,
    task: &TaskInstance,
    gateway: Option<&Gateway>,
) -> Result<String, SimError> {
    match behavior {
        Behavior::Script { script } => {
            script
                .get(occurrence - 1)
                .cloned()
                .ok_or_else(|| SimError::BehaviorExhausted { agent: agent.name.clone(), occurrence })
        }
        Behavior::Rule { rule } => Ok(apply_rule(*rule, context, task)),
        Behavior::Live { .. } => {
            let gateway = gateway.ok_or_else(|| SimError::NeedsGateway(format!("live agent {}", agent.name)))?;
            let system = format!(
                "You are {}, acting as the {} in a multi-agent system. Continue the collaboration and end with 'answer: <final answer>'.",
                agent.name, agent.role
            );
            let req = gateway.request(
                vec![ChatMessage::system(system), ChatMessage::user(context)],
                AGENT_TEMPERATURE,
            );
            Ok(gateway.complete(&req)?)
        }
    }
}

/// Runs `scenario` on `task` to termination and judges the outcome.
///
/// `gateway` serves live agents and the judge evaluator; the hook carries its
/// own backend.
pub fn run(
    scenario: &Scenario,
    task: &TaskInstance,
    mut hook: Option<&mut dyn TurnHook>,
    gateway: Option<&Gateway>,
) -> Result<Trajectory, SimError> {
    scenario.validate()?;
    task.validate()?;
    let topo = &scenario.topology;
    let roster = scenario.roster();
    let mut steps: Vec<Step> = Vec::with_capacity(topo.run_length());
    let mut speakers: Vec<usize> = Vec::with_capacity(topo.run_length());
    let mut occurrences: HashMap<usize, usize> = HashMap::new();

    for step in 0..topo.run_length() {
        let agent_index = topo.schedule(step);
        let agent = &roster[agent_index];
        let behavior = &scenario.agents[agent_index].behavior;
        let occurrence = {
            let n = occurrences.entry(agent_index).or_default();
            *n += 1;
            *n
        };
        let visible: Vec<(&str, &str)> = topo
            .visible_steps(&speakers)
            .into_iter()
            .map(|i| (steps[i].agent.as_str(), steps[i].content.as_str()))
            .collect();
        let context = render_context(&task.query, &visible);

        let mut policy = |ctx: &str| act(behavior, agent, occurrence, ctx, task, gateway);
        let turn = TurnInfo { step, agent_index, agent, occurrence, task };
        let outcome = match hook.as_deref_mut() {
            Some(h) => h.intercept(&turn, &context, &mut policy)?,
            None => None,
        };
        let outcome = match outcome {
            Some(o) => o,
            None => {
                let content = policy(&context)?;
                TurnOutcome { context, content, injection: None }
            }
        };
        steps.push(Step {
            index: step,
            agent: agent.name.clone(),
            context_digest: outcome.context,
            content: outcome.content,
            injection: outcome.injection,
        });
        speakers.push(agent_index);
    }

    let last = steps.last().map(|s| s.content.as_str()).unwrap_or("");
    let final_answer = extract_answer(last, task.evaluator);
    let mut trajectory = Trajectory {
        id: format!("{}/{}", scenario.name, task.id),
        framework: scenario.framework().to_string(),
        task: task.domain.as_str().to_string(),
        query: task.query.clone(),
        roster,
        steps,
        final_answer,
        failed: false,
        ground_truth: None,
        baseline_id: None,
    };
    trajectory.failed = judge_outcome(&trajectory, task, gateway)?;
    Ok(trajectory)
}

/// `true` when the trajectory's final answer does not solve the task.
pub fn judge_outcome(
    t: &Trajectory,
    task: &TaskInstance,
    gateway: Option<&Gateway>,
) -> Result<bool, SimError> {
    let answer = t.final_answer.trim();
    let reference = task.reference_answer.trim();
    Ok(match task.evaluator {
        EvaluatorKind::Numeric => answer::numeric_failed(answer, reference, false),
        EvaluatorKind::NumericTolerant => answer::numeric_failed(answer, reference, true),
        EvaluatorKind::ChoiceLetter | EvaluatorKind::Exact => answer != reference,
        EvaluatorKind::Judge => {
            let gateway = gateway.ok_or_else(|| SimError::NeedsGateway("judge evaluator".into()))?;
            answer::judge_semantic(&task.query, reference, answer, gateway)?
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::MockRule;
    use crate::taxonomy::validate_trajectory;

    fn task(reference: &str, evaluator: EvaluatorKind) -> TaskInstance {
        TaskInstance {
            id: "t1".into(),
            domain: Domain::Gsm8k,
            query: "How many?".into(),
            reference_answer: reference.into(),
            evaluator,
        }
    }

    fn scripted(name: &str, lines: &[&str]) -> AgentSpec {
        AgentSpec {
            name: name.into(),
            role: String::new(),
            behavior: Behavior::Script { script: lines.iter().map(|s| s.to_string()).collect() },
        }
    }

    fn rule(name: &str, rule: Rule) -> AgentSpec {
        AgentSpec { name: name.into(), role: String::new(), behavior: Behavior::Rule { rule } }
    }

    struct CorruptLast;

    impl TurnHook for CorruptLast {
        fn intercept(
            &mut self,
            turn: &TurnInfo<'_>,
            context: &str,
            act: &mut dyn FnMut(&str) -> Result<String, SimError>,
        ) -> Result<Option<TurnOutcome>, SimError> {
            if turn.step != 1 {
                return Ok(None);
            }
            let original = act(context)?;
            Ok(Some(TurnOutcome {
                context: context.to_string(),
                content: "answer: 8".into(),
                injection: Some(InjectionRecord {
                    strategy: crate::taxonomy::Strategy::ResponseCorruption,
                    modes: ["FM-3.3".parse().unwrap()].into(),
                    original_content: original,
                }),
            }))
        }
    }

    #[test]
    fn forced_success_and_failure() {
        let scenario = Scenario::new(
            "c2",
            TopologySpec::new(TopologyKind::Chain, 2, 1),
            vec![scripted("A", &["step A"]), scripted("B", &["answer: 7"])],
        );
        let t = run(&scenario, &task("7", EvaluatorKind::Numeric), None, None).unwrap();
        assert!(!t.failed);
        assert_eq!(t.steps.len(), 2);
        assert_eq!(t.final_answer, "7");
        assert!(validate_trajectory(&t).is_empty());

        let t = run(&scenario, &task("7", EvaluatorKind::Numeric), Some(&mut CorruptLast), None).unwrap();
        assert!(t.failed);
        assert_eq!(t.steps[1].injection.as_ref().unwrap().original_content, "answer: 7");
    }

    #[test]
    fn debate_length() {
        let agents = (0..4).map(|i| rule(&format!("D{i}"), Rule::EmitReferenceAnswer)).collect();
        let scenario = Scenario::new("d", TopologySpec::new(TopologyKind::Debate, 4, 2), agents);
        let t = run(&scenario, &task("5", EvaluatorKind::Numeric), None, None).unwrap();
        assert_eq!(t.steps.len(), 3 * 2 + 1);
        assert_eq!(t.steps.last().unwrap().agent, "D3");
    }

    #[test]
    fn script_exhaustion() {
        let scenario = Scenario::new(
            "c2",
            TopologySpec::new(TopologyKind::Chain, 2, 2),
            vec![scripted("A", &["x"]), scripted("B", &["answer: 7", "y"])],
        );
        let err = run(&scenario, &task("7", EvaluatorKind::Numeric), None, None).unwrap_err();
        assert!(matches!(err, SimError::BehaviorExhausted { ref agent, occurrence: 2 } if agent == "A"));
    }

    #[test]
    fn rules_read_context() {
        let t = task("7", EvaluatorKind::Numeric);
        let ctx = render_context("q", &[("A", "answer: 3"), ("B", "answer: 4\nmore"), ("C", "answer: 3")]);
        assert_eq!(apply_rule(Rule::RestatePrevious, &ctx, &t), "answer: 3");
        assert_eq!(apply_rule(Rule::AggregateMajority, &ctx, &t), "answer: 3");
        assert_eq!(apply_rule(Rule::RestatePrevious, "Task: q", &t), "q");
        let (_, blocks) = parse_context(&ctx);
        assert_eq!(blocks[1], ("B".to_string(), "answer: 4\nmore".to_string()));
        let tie = render_context("q", &[("A", "answer: 9"), ("B", "answer: 4")]);
        assert_eq!(apply_rule(Rule::AggregateMajority, &tie, &t), "answer: 9");
    }

    #[test]
    fn judging_paths() {
        let mut t = run(
            &Scenario::new(
                "c2",
                TopologySpec::new(TopologyKind::Chain, 2, 1),
                vec![scripted("A", &["x"]), scripted("B", &["answer: (B)"])],
            ),
            &task("C", EvaluatorKind::ChoiceLetter),
            None,
            None,
        )
        .unwrap();
        assert!(t.failed);
        t.final_answer = "42".into();
        assert!(!judge_outcome(&t, &task("42", EvaluatorKind::Numeric), None).unwrap());

        let judge = task("Paris", EvaluatorKind::Judge);
        assert!(matches!(judge_outcome(&t, &judge, None), Err(SimError::NeedsGateway(_))));
        let yes = Gateway::mock(MockRule::FixedAnswer("Aligned. Correct".into()));
        let no = Gateway::mock(MockRule::FixedAnswer("Incorrect".into()));
        assert!(!judge_outcome(&t, &judge, Some(&yes)).unwrap());
        assert!(judge_outcome(&t, &judge, Some(&no)).unwrap());
    }

    #[test]
    fn task_validation() {
        assert!(task("abc", EvaluatorKind::Numeric).validate().is_err());
        assert!(task("K", EvaluatorKind::ChoiceLetter).validate().is_err());
        assert!(task("\\frac{1}{2}", EvaluatorKind::NumericTolerant).validate().is_ok());
    }

    #[test]
    fn suite_toml_roundtrip() {
        let text = r#"
[[scenario]]
name = "chain2"
kind = "chain"
agent_count = 2
max_steps = 4
agents = [
  { name = "Planner", rule = "emit-reference-answer" },
  { name = "Writer", role = "writer", script = ["answer: 3"] },
]

[[task]]
id = "g1"
domain = "gsm8k"
query = "1+2?"
reference_answer = "3"
evaluator = "numeric"
"#;
        let suite = Suite::from_toml(text).unwrap();
        assert_eq!(suite.scenarios[0].topology.rounds, 1);
        assert_eq!(suite.scenarios[0].framework(), "chain");
        let t = run(&suite.scenarios[0], &suite.tasks[0], None, None).unwrap();
        assert!(!t.failed);
        assert_eq!(t.roster[0].role, "chain node");
    }
}
