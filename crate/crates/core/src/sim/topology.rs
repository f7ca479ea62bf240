use serde::{Deserialize, Serialize};

use super::SimError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TopologyKind {
    Chain,
    Star,
    Tree,
    FullyConnected,
    Debate,
    SolverCriticEvaluator,
    OrchestratorExecutor,
}

impl TopologyKind {
    pub const ALL: [TopologyKind; 7] = [
        TopologyKind::Chain,
        TopologyKind::Star,
        TopologyKind::Tree,
        TopologyKind::FullyConnected,
        TopologyKind::Debate,
        TopologyKind::SolverCriticEvaluator,
        TopologyKind::OrchestratorExecutor,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TopologyKind::Chain => "chain",
            TopologyKind::Star => "star",
            TopologyKind::Tree => "tree",
            TopologyKind::FullyConnected => "fully_connected",
            TopologyKind::Debate => "debate",
            TopologyKind::SolverCriticEvaluator => "solver_critic_evaluator",
            TopologyKind::OrchestratorExecutor => "orchestrator_executor",
        }
    }

    fn min_agents(self) -> usize {
        match self {
            TopologyKind::SolverCriticEvaluator => 3,
            _ => 2,
        }
    }
}

/// Static scheduling topology.
///
/// Roster conventions: star/orchestrator_executor put the hub at index 0;
/// debate puts the aggregator last; solver_critic_evaluator is solver 0,
/// critics `1..n-1`, evaluator `n-1`; tree is a binary heap rooted at 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TopologySpec {
    pub kind: TopologyKind,
    pub agent_count: usize,
    #[serde(default = "default_rounds")]
    pub rounds: usize,
    /// Step cap; 0 (the default when omitted) means no cap.
    #[serde(default)]
    pub max_steps: usize,
}

fn default_rounds() -> usize {
    1
}

impl TopologySpec {
    pub fn new(kind: TopologyKind, agent_count: usize, rounds: usize) -> Self {
        let mut spec = TopologySpec { kind, agent_count, rounds, max_steps: 0 };
        spec.max_steps = spec.natural_length().max(agent_count);
        spec
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |msg: String| Err(SimError::InvalidTopology(msg));
        if !(2..=16).contains(&self.agent_count) {
            return bad(format!("agent_count {} outside [2, 16]", self.agent_count));
        }
        if self.agent_count < self.kind.min_agents() {
            return bad(format!(
                "{} needs at least {} agents",
                self.kind.as_str(),
                self.kind.min_agents()
            ));
        }
        if self.rounds == 0 {
            return bad("rounds must be >= 1".into());
        }
        if self.max_steps != 0 && self.max_steps < self.agent_count {
            return bad(format!(
                "max_steps {} below agent_count {}",
                self.max_steps, self.agent_count
            ));
        }
        Ok(())
    }

    /// Steps until the terminal turn, ignoring `max_steps`.
    pub fn natural_length(&self) -> usize {
        let n = self.agent_count;
        let r = self.rounds;
        match self.kind {
            TopologyKind::Chain | TopologyKind::Tree | TopologyKind::FullyConnected => n * r,
            TopologyKind::Star | TopologyKind::OrchestratorExecutor => 2 * (n - 1) * r + 1,
            TopologyKind::Debate => (n - 1) * r + 1,
            TopologyKind::SolverCriticEvaluator => (n + 1) * r,
        }
    }

    /// Number of turns a run executes.
    pub fn run_length(&self) -> usize {
        match self.max_steps {
            0 => self.natural_length(),
            cap => self.natural_length().min(cap),
        }
    }

    /// Roster index of the agent speaking at `step`.
    pub fn schedule(&self, step: usize) -> usize {
        let n = self.agent_count;
        match self.kind {
            TopologyKind::Chain | TopologyKind::FullyConnected => step % n,
            TopologyKind::Tree => n - 1 - step % n,
            TopologyKind::Star | TopologyKind::OrchestratorExecutor => {
                if step.is_multiple_of(2) {
                    0
                } else {
                    1 + ((step - 1) / 2) % (n - 1)
                }
            }
            TopologyKind::Debate => {
                let debaters = n - 1;
                if step < debaters * self.rounds {
                    step % debaters
                } else {
                    n - 1
                }
            }
            TopologyKind::SolverCriticEvaluator => {
                let pos = step % (n + 1);
                if pos == 0 || pos == n - 1 {
                    0
                } else if pos == n {
                    n - 1
                } else {
                    pos
                }
            }
        }
    }

    /// Indices of prior steps visible to the speaker of step `speakers.len()`,
    /// given the speakers of all earlier steps.
    pub fn visible_steps(&self, speakers: &[usize]) -> Vec<usize> {
        let step = speakers.len();
        let me = self.schedule(step);
        let latest_by = |agent: usize| speakers.iter().rposition(|&s| s == agent);
        match self.kind {
            TopologyKind::Chain => step.checked_sub(1).into_iter().collect(),
            TopologyKind::Tree => {
                let mut seen: Vec<usize> = [2 * me + 1, 2 * me + 2]
                    .into_iter()
                    .filter(|&c| c < self.agent_count)
                    .filter_map(latest_by)
                    .collect();
                seen.sort_unstable();
                seen
            }
            TopologyKind::Star => {
                if me == 0 {
                    (0..step).collect()
                } else {
                    (0..step).filter(|&i| speakers[i] == 0).collect()
                }
            }
            TopologyKind::OrchestratorExecutor => {
                if me == 0 {
                    (0..step).collect()
                } else {
                    latest_by(0).into_iter().collect()
                }
            }
            TopologyKind::FullyConnected
            | TopologyKind::Debate
            | TopologyKind::SolverCriticEvaluator => (0..step).collect(),
        }
    }

    pub fn default_role(&self, index: usize) -> &'static str {
        let n = self.agent_count;
        match self.kind {
            TopologyKind::Chain => "chain node",
            TopologyKind::FullyConnected => "peer",
            TopologyKind::Tree if index == 0 => "root",
            TopologyKind::Tree => "tree node",
            TopologyKind::Star if index == 0 => "hub",
            TopologyKind::Star => "spoke",
            TopologyKind::OrchestratorExecutor if index == 0 => "orchestrator",
            TopologyKind::OrchestratorExecutor => "executor",
            TopologyKind::Debate if index == n - 1 => "aggregator",
            TopologyKind::Debate => "debater",
            TopologyKind::SolverCriticEvaluator if index == 0 => "solver",
            TopologyKind::SolverCriticEvaluator if index == n - 1 => "evaluator",
            TopologyKind::SolverCriticEvaluator => "critic",
        }
    }
}

/// Free-function form of [`TopologySpec::schedule`].
pub fn schedule(topology: &TopologySpec, step: usize) -> usize {
    topology.schedule(step)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_examples() {
        // 4 mod 3
        assert_eq!(TopologySpec::new(TopologyKind::Chain, 3, 2).schedule(4), 1);
        assert_eq!(TopologySpec::new(TopologyKind::Star, 4, 1).schedule(0), 0);
        let debate = TopologySpec::new(TopologyKind::Debate, 4, 2);
        assert_eq!(debate.schedule(6), 3);
        assert_eq!(debate.natural_length(), 3 * 2 + 1);
    }

    #[test]
    fn enumerated_tables() {
        let table = |spec: TopologySpec| (0..spec.natural_length()).map(|s| spec.schedule(s)).collect::<Vec<_>>();
        assert_eq!(table(TopologySpec::new(TopologyKind::Star, 4, 1)), vec![0, 1, 0, 2, 0, 3, 0]);
        assert_eq!(
            table(TopologySpec::new(TopologyKind::Debate, 4, 2)),
            vec![0, 1, 2, 0, 1, 2, 3]
        );
        assert_eq!(
            table(TopologySpec::new(TopologyKind::SolverCriticEvaluator, 3, 2)),
            vec![0, 1, 0, 2, 0, 1, 0, 2]
        );
        assert_eq!(
            table(TopologySpec::new(TopologyKind::SolverCriticEvaluator, 4, 1)),
            vec![0, 1, 2, 0, 3]
        );
        assert_eq!(table(TopologySpec::new(TopologyKind::Tree, 5, 1)), vec![4, 3, 2, 1, 0]);
        assert_eq!(
            table(TopologySpec::new(TopologyKind::OrchestratorExecutor, 3, 1)),
            vec![0, 1, 0, 2, 0]
        );
    }

    #[test]
    fn visibility_rules() {
        let tree = TopologySpec::new(TopologyKind::Tree, 5, 1);
        // order 4,3,2,1,0; node 1 has children 3 and 4
        assert_eq!(tree.visible_steps(&[4, 3, 2]), vec![0, 1]);
        assert_eq!(tree.visible_steps(&[4, 3, 2, 1]), vec![2, 3]);
        assert!(tree.visible_steps(&[]).is_empty());

        let star = TopologySpec::new(TopologyKind::Star, 3, 1);
        assert_eq!(star.visible_steps(&[0, 1, 0]), vec![0, 2]);
        assert_eq!(star.visible_steps(&[0, 1, 0, 2]), vec![0, 1, 2, 3]);

        let oe = TopologySpec::new(TopologyKind::OrchestratorExecutor, 3, 1);
        assert_eq!(oe.visible_steps(&[0, 1, 0]), vec![2]);

        let chain = TopologySpec::new(TopologyKind::Chain, 3, 1);
        assert_eq!(chain.visible_steps(&[0, 1]), vec![1]);
    }

    #[test]
    fn validation() {
        let mut t = TopologySpec::new(TopologyKind::Chain, 1, 1);
        assert!(t.validate().is_err());
        t.agent_count = 17;
        assert!(t.validate().is_err());
        assert!(TopologySpec::new(TopologyKind::SolverCriticEvaluator, 2, 1).validate().is_err());
        let mut ok = TopologySpec::new(TopologyKind::Chain, 3, 1);
        assert!(ok.validate().is_ok());
        ok.max_steps = 2;
        assert!(ok.validate().is_err());
    }
}
