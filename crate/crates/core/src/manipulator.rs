//! Injection plans and the adaptive manipulator that realizes them.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::ops::RangeInclusive;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{ChatMessage, Gateway, GatewayError, MANIPULATOR_TEMPERATURE};
use crate::prompts::{attack_mode_block, ATTACK_PROMPT_INJECTION, ATTACK_RESPONSE_CORRUPTION};
use crate::sim::{parse_context, SimError, TurnHook, TurnInfo, TurnOutcome};
use crate::taxonomy::{AgentRef, ErrorMode, InjectionRecord, Strategy};

#[derive(Debug, Error)]
pub enum ManipulatorError {
    #[error("targets-per-plan range {lo}..={hi} infeasible for a roster of {roster}")]
    InfeasibleRange { lo: usize, hi: usize, roster: usize },
    #[error("only {found} distinct plans exist for the requested shape, {wanted} requested")]
    PlanSpaceExhausted { wanted: usize, found: usize },
    #[error("invalid plan {id}: {reason}")]
    InvalidPlan { id: String, reason: String },
    #[error("injection failed: {0}")]
    InjectionFailed(String),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Agent(#[from] SimError),
}

fn first_occurrence() -> usize {
    1
}

fn is_first(n: &usize) -> bool {
    *n == 1
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct InjectionTarget {
    pub agent_name: String,
    pub modes: BTreeSet<ErrorMode>,
    pub strategy: Strategy,
    /// Which scheduled turn of the agent is hit, 1-based.
    #[serde(default = "first_occurrence", skip_serializing_if = "is_first")]
    pub occurrence: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InjectionPlan {
    pub id: String,
    pub targets: Vec<InjectionTarget>,
    pub rng_seed: u64,
}

impl InjectionPlan {
    pub fn validate(&self) -> Result<(), ManipulatorError> {
        let bad = |reason: String| Err(ManipulatorError::InvalidPlan { id: self.id.clone(), reason });
        if self.targets.is_empty() {
            return bad("targets must be non-empty".into());
        }
        let mut seen = HashSet::new();
        for t in &self.targets {
            if !seen.insert(t.agent_name.as_str()) {
                return bad(format!("agent {:?} targeted twice", t.agent_name));
            }
            if t.modes.is_empty() {
                return bad(format!("target {:?} has no modes", t.agent_name));
            }
            if t.occurrence == 0 {
                return bad(format!("target {:?} has occurrence 0", t.agent_name));
            }
        }
        Ok(())
    }

    pub fn target_for(&self, agent: &str) -> Option<&InjectionTarget> {
        self.targets.iter().find(|t| t.agent_name == agent)
    }

    fn key(&self) -> Vec<InjectionTarget> {
        let mut targets = self.targets.clone();
        targets.sort();
        targets
    }
}

/// Samples `k_plans` pairwise-distinct plans for `roster`, each with a number
/// of targets drawn uniformly from `targets_per_plan`.
pub fn sample_plans(
    roster: &[AgentRef],
    k_plans: usize,
    targets_per_plan: RangeInclusive<usize>,
    rng_seed: u64,
) -> Result<Vec<InjectionPlan>, ManipulatorError> {
    let (lo, hi) = (*targets_per_plan.start(), *targets_per_plan.end());
    if lo == 0 || lo > hi || hi > roster.len() {
        return Err(ManipulatorError::InfeasibleRange { lo, hi, roster: roster.len() });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut plans: Vec<InjectionPlan> = Vec::with_capacity(k_plans);
    let mut seen: HashSet<Vec<InjectionTarget>> = HashSet::new();
    // consecutive duplicate draws before the plan space counts as exhausted
    const MAX_MISSES: usize = 5_000;
    let mut misses = 0;
    while plans.len() < k_plans {
        if misses == MAX_MISSES {
            return Err(ManipulatorError::PlanSpaceExhausted { wanted: k_plans, found: plans.len() });
        }
        let n_targets = rng.random_range(lo..=hi);
        let mut agents = sample(&mut rng, roster.len(), n_targets).into_vec();
        agents.sort_unstable();
        let targets = agents
            .into_iter()
            .map(|a| sample_target(&mut rng, &roster[a].name))
            .collect();
        let plan = InjectionPlan { id: format!("p{:02}", plans.len()), targets, rng_seed };
        if seen.insert(plan.key()) {
            plans.push(plan);
            misses = 0;
        } else {
            misses += 1;
        }
    }
    Ok(plans)
}

fn sample_target(rng: &mut ChaCha8Rng, agent: &str) -> InjectionTarget {
    let n_modes = rng.random_range(1..=2);
    let modes = sample(rng, ErrorMode::COUNT, n_modes)
        .into_iter()
        .map(|i| ErrorMode::from_index(i).expect("index in range"))
        .collect();
    let strategy = if rng.random_bool(0.5) {
        Strategy::PromptInjection
    } else {
        Strategy::ResponseCorruption
    };
    InjectionTarget { agent_name: agent.to_string(), modes, strategy, occurrence: 1 }
}

/// Agent-side facts substituted into the attack templates.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AgentContext {
    pub role_name: String,
    pub role_type: String,
    pub agent_id: String,
    pub system_message: String,
    pub tools: String,
    pub external_tools: String,
    pub description: String,
    pub model_type: String,
    pub history_len: usize,
}

impl AgentContext {
    pub fn for_agent(agent: &AgentRef, model: &str, history_len: usize) -> Self {
        AgentContext {
            role_name: agent.name.clone(),
            role_type: agent.role.clone(),
            agent_id: agent.index.to_string(),
            system_message: "N/A".into(),
            tools: "None".into(),
            external_tools: "None".into(),
            description: agent.role.clone(),
            model_type: model.to_string(),
            history_len,
        }
    }

    fn fill(&self, template: &str) -> String {
        template
            .replace("[AGENT_ROLE_NAME]", &self.role_name)
            .replace("[AGENT_ROLE_TYPE]", &self.role_type)
            .replace("[AGENT_ID]", &self.agent_id)
            .replace("[TRUNCATED_SYSTEM_MESSAGE]", &truncate_chars(&self.system_message, 200))
            .replace("[TOOL_LIST]", &self.tools)
            .replace("[EXTERNAL_TOOL_LIST]", &self.external_tools)
            .replace("[AGENT_DESCRIPTION]", &self.description)
            .replace("[MODEL_TYPE]", &self.model_type)
            .replace("[HISTORY_LENGTH]", &self.history_len.to_string())
    }
}

fn truncate_chars(s: &str, max: usize) -> String {
    s.chars().take(max).collect()
}

/// The context section of the prompt-injection template, reused for the
/// corruption template's `[SAME CONTEXT INFORMATION AS ABOVE]` slot.
fn context_section() -> &'static str {
    let start = ATTACK_PROMPT_INJECTION.find("- Role Name:").expect("context block");
    let end = ATTACK_PROMPT_INJECTION.find(" messages\n").expect("context block end") + " messages".len();
    &ATTACK_PROMPT_INJECTION[start..end]
}

/// Instruction blocks for the target's modes in code order.
pub fn mode_instructions(modes: &BTreeSet<ErrorMode>) -> String {
    modes.iter().map(|m| attack_mode_block(*m)).collect::<Vec<_>>().join("\n\n")
}

/// Fills the attack template matching the target's strategy.
pub fn render_attack(target: &InjectionTarget, ctx: &AgentContext, payload: &str) -> String {
    let instruction = mode_instructions(&target.modes);
    let template = match target.strategy {
        Strategy::PromptInjection => ATTACK_PROMPT_INJECTION.to_string(),
        Strategy::ResponseCorruption => {
            ATTACK_RESPONSE_CORRUPTION.replace("[SAME CONTEXT INFORMATION AS ABOVE]", context_section())
        }
    };
    // payload last so its text is never scanned for placeholders
    let filled = ctx
        .fill(&template)
        .replace("[SPECIFIC FM ERROR INSTRUCTION BASED ON TYPE AND STRATEGY]", &instruction);
    let slot = match target.strategy {
        Strategy::PromptInjection => "[ORIGINAL_PROMPT]",
        Strategy::ResponseCorruption => "[ORIGINAL_RESPONSE]",
    };
    filled.replacen(slot, payload, 1)
}

/// A successfully manipulated turn.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Applied {
    pub context: String,
    pub content: String,
    pub record: InjectionRecord,
}

fn manipulate(
    gateway: &Gateway,
    target: &InjectionTarget,
    ctx: &AgentContext,
    payload: &str,
) -> Result<String, ManipulatorError> {
    let prompt = render_attack(target, ctx, payload);
    // the payload is repeated as the user turn so mock rules see only it
    let req = gateway.request(
        vec![ChatMessage::system(prompt), ChatMessage::user(payload)],
        MANIPULATOR_TEMPERATURE,
    );
    let out = gateway.complete(&req)?;
    if out.trim().is_empty() {
        return Err(ManipulatorError::InjectionFailed("manipulator returned empty output".into()));
    }
    Ok(out)
}

/// Realizes `target` on one turn.
///
/// `act` runs the agent on a given input. Prompt injection rewrites the input
/// and lets the agent act on it; response corruption rewrites the action.
/// A rewrite that leaves the action unchanged counts as a failed injection.
pub fn apply(
    target: &InjectionTarget,
    ctx: &AgentContext,
    context: &str,
    act: &mut dyn FnMut(&str) -> Result<String, SimError>,
    gateway: &Gateway,
) -> Result<Applied, ManipulatorError> {
    let original = act(context)?;
    let (context, content) = match target.strategy {
        Strategy::ResponseCorruption => {
            if original.trim().is_empty() {
                return Err(ManipulatorError::InjectionFailed("agent produced no output to corrupt".into()));
            }
            (context.to_string(), manipulate(gateway, target, ctx, &original)?)
        }
        Strategy::PromptInjection => {
            let poisoned = manipulate(gateway, target, ctx, context)?;
            let content = act(&poisoned)?;
            (poisoned, content)
        }
    };
    if content == original {
        return Err(ManipulatorError::InjectionFailed("agent output unchanged by injection".into()));
    }
    Ok(Applied {
        context,
        content,
        record: InjectionRecord {
            strategy: target.strategy,
            modes: target.modes.clone(),
            original_content: original,
        },
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", content = "reason", rename_all = "snake_case")]
pub enum TargetStatus {
    /// The agent never reached the targeted turn.
    Pending,
    Applied,
    Failed(String),
}

/// Turn hook that arms one plan during a run.
pub struct PlanHook<'a> {
    plan: &'a InjectionPlan,
    gateway: &'a Gateway,
    status: BTreeMap<String, TargetStatus>,
}

impl<'a> PlanHook<'a> {
    pub fn new(plan: &'a InjectionPlan, gateway: &'a Gateway) -> Self {
        let status = plan
            .targets
            .iter()
            .map(|t| (t.agent_name.clone(), TargetStatus::Pending))
            .collect();
        PlanHook { plan, gateway, status }
    }

    /// Per-target outcome, keyed by agent name.
    pub fn status(&self) -> &BTreeMap<String, TargetStatus> {
        &self.status
    }

    pub fn applied_agents(&self) -> Vec<String> {
        self.status
            .iter()
            .filter(|(_, s)| **s == TargetStatus::Applied)
            .map(|(a, _)| a.clone())
            .collect()
    }
}

impl TurnHook for PlanHook<'_> {
    fn intercept(
        &mut self,
        turn: &TurnInfo<'_>,
        context: &str,
        act: &mut dyn FnMut(&str) -> Result<String, SimError>,
    ) -> Result<Option<TurnOutcome>, SimError> {
        let Some(target) = self.plan.target_for(&turn.agent.name) else {
            return Ok(None);
        };
        if target.occurrence != turn.occurrence {
            return Ok(None);
        }
        let history = parse_context(context).1.len();
        let ctx = AgentContext::for_agent(turn.agent, self.gateway.model(), history);
        match apply(target, &ctx, context, act, self.gateway) {
            Ok(applied) => {
                self.status.insert(target.agent_name.clone(), TargetStatus::Applied);
                Ok(Some(TurnOutcome {
                    context: applied.context,
                    content: applied.content,
                    injection: Some(applied.record),
                }))
            }
            Err(ManipulatorError::InjectionFailed(reason)) => {
                self.status.insert(target.agent_name.clone(), TargetStatus::Failed(reason));
                Ok(None)
            }
            Err(ManipulatorError::Gateway(e)) => Err(SimError::Gateway(e)),
            Err(ManipulatorError::Agent(e)) => Err(e),
            Err(other) => Err(SimError::InvalidScenario {
                name: self.plan.id.clone(),
                reason: other.to_string(),
            }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::MockRule;

    fn roster(n: usize) -> Vec<AgentRef> {
        (0..n)
            .map(|i| AgentRef { name: format!("Agent{i}"), role: "worker".into(), index: i })
            .collect()
    }

    fn target(strategy: Strategy, modes: &[&str]) -> InjectionTarget {
        InjectionTarget {
            agent_name: "Agent0".into(),
            modes: modes.iter().map(|m| m.parse().unwrap()).collect(),
            strategy,
            occurrence: 1,
        }
    }

    fn ctx() -> AgentContext {
        AgentContext::for_agent(&roster(1)[0], "mock", 2)
    }

    #[test]
    fn plan_cardinality_and_determinism() {
        let plans = sample_plans(&roster(3), 5, 1..=1, 7).unwrap();
        assert_eq!(plans.len(), 5);
        assert!(plans.iter().all(|p| p.targets.len() == 1 && p.validate().is_ok()));
        assert_eq!(plans, sample_plans(&roster(3), 5, 1..=1, 7).unwrap());
        let keys: HashSet<_> = plans.iter().map(|p| p.key()).collect();
        assert_eq!(keys.len(), 5);
    }

    #[test]
    fn plan_shape_constraints() {
        let plans = sample_plans(&roster(4), 50, 2..=3, 1).unwrap();
        for p in &plans {
            assert!((2..=3).contains(&p.targets.len()));
            for t in &p.targets {
                assert!((1..=2).contains(&t.modes.len()));
            }
        }
        assert!(matches!(
            sample_plans(&roster(2), 1, 1..=3, 0),
            Err(ManipulatorError::InfeasibleRange { .. })
        ));
        assert!(sample_plans(&roster(2), 1, 0..=1, 0).is_err());
    }

    #[test]
    fn strategy_split_is_fair() {
        let plans = sample_plans(&roster(1), 10_000, 1..=1, 42);
        // a one-agent roster has only 2 * (14 + 91) distinct single-target plans
        assert!(matches!(plans, Err(ManipulatorError::PlanSpaceExhausted { found: 210, .. })));

        let plans = sample_plans(&roster(16), 1_000, 10..=10, 42).unwrap();
        let targets: Vec<_> = plans.iter().flat_map(|p| &p.targets).collect();
        assert_eq!(targets.len(), 10_000);
        let pi = targets.iter().filter(|t| t.strategy == Strategy::PromptInjection).count();
        let frac = pi as f64 / targets.len() as f64;
        assert!((frac - 0.5).abs() <= 0.02, "{frac}");
    }

    #[test]
    fn render_examples() {
        let p = render_attack(&target(Strategy::PromptInjection, &["FM-1.3"]), &ctx(), "Task: x");
        assert!(p.contains("TRAP the agent in repetitive task loops"));
        assert!(p.contains("ORIGINAL INPUT TO CORRUPT:\n```\nTask: x\n```"));
        assert!(p.contains("- Role Name: Agent0\n"));
        assert!(p.contains("- Recent History: 2 messages"));

        let c = render_attack(&target(Strategy::ResponseCorruption, &["FM-2.1"]), &ctx(), "answer: 7");
        assert!(c.contains("ORIGINAL CORRECT RESPONSE TO CORRUPT:\nanswer: 7\n"));
        assert!(c.contains("- Model Type: mock"));
        assert!(!c.contains("[SAME CONTEXT"));

        let two = render_attack(&target(Strategy::PromptInjection, &["FM-2.5", "FM-1.1"]), &ctx(), "x");
        let first = two.find("FM-1.1: Task specification deviation").unwrap();
        let second = two.find("FM-2.5: Ignore other agents").unwrap();
        assert!(first < second);
        assert_eq!(two.matches("FM-1.1:").count(), 1);
        assert_eq!(two.matches("FM-2.5:").count(), 1);
    }

    #[test]
    fn payload_is_not_template_scanned() {
        let p = render_attack(&target(Strategy::PromptInjection, &["FM-1.1"]), &ctx(), "[AGENT_ID] [ORIGINAL_PROMPT]");
        assert!(p.contains("```\n[AGENT_ID] [ORIGINAL_PROMPT]\n```"));
    }

    #[test]
    fn apply_with_mocks() {
        let mut agent = |_: &str| Ok::<_, SimError>("answer: 7".to_string());
        let marker = Gateway::mock(MockRule::InjectMarker);
        let out = apply(&target(Strategy::ResponseCorruption, &["FM-3.3"]), &ctx(), "Task: q", &mut agent, &marker).unwrap();
        assert!(out.content.ends_with("[INJECTED]"));
        assert_eq!(out.record.original_content, "answer: 7");

        let corrupt = Gateway::mock(MockRule::CorruptNumber);
        let out = apply(&target(Strategy::ResponseCorruption, &["FM-3.3"]), &ctx(), "Task: q", &mut agent, &corrupt).unwrap();
        assert_eq!(out.content, "answer: 8");

        let echo = Gateway::mock(MockRule::Echo);
        let err = apply(&target(Strategy::ResponseCorruption, &["FM-3.3"]), &ctx(), "Task: q", &mut agent, &echo);
        assert!(matches!(err, Err(ManipulatorError::InjectionFailed(_))));

        let empty = Gateway::mock(MockRule::FixedAnswer("  ".into()));
        let err = apply(&target(Strategy::ResponseCorruption, &["FM-3.3"]), &ctx(), "Task: q", &mut agent, &empty);
        assert!(matches!(err, Err(ManipulatorError::InjectionFailed(_))));
    }

    #[test]
    fn prompt_injection_acts_on_poisoned_input() {
        let mut agent = |ctx: &str| Ok::<_, SimError>(format!("saw: {}", ctx.lines().last().unwrap()));
        let g = Gateway::mock(MockRule::CorruptNumber);
        let out = apply(&target(Strategy::PromptInjection, &["FM-1.4"]), &ctx(), "Task: q\n[B] answer: 3", &mut agent, &g).unwrap();
        assert_eq!(out.context, "Task: q\n[B] answer: 4");
        assert_eq!(out.content, "saw: [B] answer: 4");
        assert_eq!(out.record.original_content, "saw: [B] answer: 3");
        assert_eq!(out.record.strategy, Strategy::PromptInjection);
    }
}
