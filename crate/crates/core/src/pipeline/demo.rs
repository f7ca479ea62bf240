//! A self-contained suite of rule-driven scenarios and synthetic tasks that
//! runs fully offline. Every scenario solves every task when left alone.

use crate::sim::{AgentSpec, Behavior, Domain, EvaluatorKind, Rule, Scenario, Suite, TaskInstance, TopologyKind, TopologySpec};

fn agent(name: &str, role: &str, rule: Rule) -> AgentSpec {
    AgentSpec { name: name.into(), role: role.into(), behavior: Behavior::Rule { rule } }
}

fn scenario(name: &str, framework: &str, kind: TopologyKind, rounds: usize, agents: Vec<AgentSpec>) -> Scenario {
    let mut s = Scenario::new(name, TopologySpec::new(kind, agents.len(), rounds), agents);
    s.framework = framework.into();
    s
}

/// One scenario per topology.
pub fn demo_scenarios() -> Vec<Scenario> {
    use Rule::*;
    vec![
        scenario(
            "chain-3",
            "macnet-chain",
            TopologyKind::Chain,
            1,
            vec![
                agent("Planner", "planner", EmitReferenceAnswer),
                agent("Solver", "solver", RestatePrevious),
                agent("Reporter", "reporter", RestatePrevious),
            ],
        ),
        scenario(
            "star-4",
            "macnet-star",
            TopologyKind::Star,
            1,
            vec![
                agent("Hub", "coordinator", AggregateMajority),
                agent("Analyst", "analyst", EmitReferenceAnswer),
                agent("Calculator", "calculator", EmitReferenceAnswer),
                agent("Reviewer", "reviewer", RestatePrevious),
            ],
        ),
        scenario(
            "tree-4",
            "macnet-tree",
            TopologyKind::Tree,
            1,
            vec![
                agent("Root", "aggregator", AggregateMajority),
                agent("Branch", "summarizer", RestatePrevious),
                agent("LeafA", "solver", EmitReferenceAnswer),
                agent("LeafB", "solver", EmitReferenceAnswer),
            ],
        ),
        scenario(
            "mesh-3",
            "dylan",
            TopologyKind::FullyConnected,
            2,
            vec![
                agent("Proposer", "proposer", EmitReferenceAnswer),
                agent("Ranker", "ranker", AggregateMajority),
                agent("Finalizer", "finalizer", AggregateMajority),
            ],
        ),
        scenario(
            "debate-4",
            "llm-debate",
            TopologyKind::Debate,
            2,
            vec![
                agent("DebaterA", "debater", EmitReferenceAnswer),
                agent("DebaterB", "debater", AggregateMajority),
                agent("DebaterC", "debater", AggregateMajority),
                agent("Judge", "aggregator", AggregateMajority),
            ],
        ),
        scenario(
            "sce-4",
            "agentverse",
            TopologyKind::SolverCriticEvaluator,
            1,
            vec![
                agent("Solver", "solver", EmitReferenceAnswer),
                agent("CriticA", "critic", RestatePrevious),
                agent("CriticB", "critic", RestatePrevious),
                agent("Evaluator", "evaluator", RestatePrevious),
            ],
        ),
        scenario(
            "orch-3",
            "magentic-one",
            TopologyKind::OrchestratorExecutor,
            1,
            vec![
                agent("Orchestrator", "orchestrator", RestatePrevious),
                agent("Coder", "executor", EmitReferenceAnswer),
                agent("WebSurfer", "executor", EmitReferenceAnswer),
            ],
        ),
    ]
}

fn task(id: String, domain: Domain, query: String, reference: String, evaluator: EvaluatorKind) -> TaskInstance {
    TaskInstance { id, domain, query, reference_answer: reference, evaluator }
}

/// `per_domain` synthetic tasks for each of the six domains.
pub fn demo_tasks(per_domain: usize) -> Vec<TaskInstance> {
    let mut out = Vec::new();
    for i in 0..per_domain {
        let (a, b) = (3 + 7 * i, 5 + 4 * i);
        out.push(task(
            format!("gsm8k-{i:03}"),
            Domain::Gsm8k,
            format!("A shop sells {a} apples in the morning and {b} in the afternoon. How many apples are sold in total?"),
            (a + b).to_string(),
            EvaluatorKind::Numeric,
        ));
        let (p, q) = (1 + i % 7, 9 + i % 5);
        out.push(task(
            format!("math-{i:03}"),
            Domain::Math,
            format!("Simplify the ratio of {p} to {q} and give it as a fraction."),
            format!("\\frac{{{p}}}{{{q}}}"),
            EvaluatorKind::NumericTolerant,
        ));
        let (d, t) = (4 * (i + 3), 2);
        out.push(task(
            format!("science-{i:03}"),
            Domain::Science,
            format!("A cart travels {d} m in {t} s at constant speed. What is its speed in m/s?"),
            (d / t).to_string(),
            EvaluatorKind::NumericTolerant,
        ));
        let n = 3 + i;
        out.push(task(
            format!("code-{i:03}"),
            Domain::CodeLike,
            format!("What does the Python expression sum(range({n})) evaluate to?"),
            (n * (n - 1) / 2).to_string(),
            EvaluatorKind::Exact,
        ));
        let letters = ["A", "B", "C", "D"];
        let right = letters[i % 4];
        let x = 10 + i;
        let options: Vec<String> = letters
            .iter()
            .enumerate()
            .map(|(k, l)| format!("({l}) {}", if *l == right { 2 * x } else { 2 * x + k + 1 }))
            .collect();
        out.push(task(
            format!("mc-{i:03}"),
            Domain::MultipleChoice,
            format!("Which option equals {x} doubled? {}", options.join(" ")),
            right.to_string(),
            EvaluatorKind::ChoiceLetter,
        ));
        out.push(task(
            format!("agentic-{i:03}"),
            Domain::Agentic,
            format!("Look up the booking reference for order {} and report it exactly.", 500 + i),
            format!("BK-{}", 7100 + 13 * i),
            EvaluatorKind::Exact,
        ));
    }
    out
}

pub fn demo_suite(per_domain: usize) -> Suite {
    Suite { scenarios: demo_scenarios(), tasks: demo_tasks(per_domain) }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::run;

    #[test]
    fn demo_suite_is_valid_and_solves_everything() {
        let suite = demo_suite(3);
        suite.validate().unwrap();
        assert_eq!(suite.scenarios.len(), TopologyKind::ALL.len());
        for s in &suite.scenarios {
            for t in &suite.tasks {
                let traj = run(s, t, None, None).unwrap();
                assert!(!traj.failed, "{} on {} failed: {:?}", s.name, t.id, traj.final_answer);
            }
        }
    }
}
