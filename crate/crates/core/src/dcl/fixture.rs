//! Self-describing verification instances: inputs, parameters and the
//! expected outputs of every operation, stored as JSON.

use ndarray::{Array2, Axis};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::*;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DclInstance {
    pub params: DCLParams,
    pub banks: PrototypeBank,
    /// T × d.
    pub turns: Array2<f64>,
    pub labels: Labels,
    pub contrastive: ContrastiveBatch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Expected {
    pub attention: Vec<f64>,
    pub p_agent: Vec<f64>,
    pub p_error: Vec<f64>,
    pub p_pair: Vec<Vec<f64>>,
    pub top_k: Vec<usize>,
    pub loss_cls: f64,
    pub loss_con: f64,
    pub loss_hier: f64,
    pub loss_total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DclFixture {
    #[serde(flatten)]
    pub instance: DclInstance,
    pub expected: Option<Expected>,
}

fn rows(m: &Array2<f64>) -> Vec<Vec<f64>> {
    m.rows().into_iter().map(|r| r.to_vec()).collect()
}

impl DclInstance {
    /// A random instance with 2..=8 turns, 1..=3 labeled pairs and a random
    /// joint-head variant.
    pub fn random(seed: u64, dims: Dims) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = DCLParams::random(&mut rng, dims);
        params.head = [JointHead::Full, JointHead::OnlyBilinear, JointHead::OnlyMix][rng.random_range(0..3)];
        params.gamma = rng.random_range(0.5..1.5);
        let banks = PrototypeBank::new(
            random_matrix(&mut rng, dims.agent_slots, dims.embed, 1.0),
            random_matrix(&mut rng, ErrorMode::COUNT, dims.embed, 1.0),
        )
        .expect("gaussian rows are non-zero");
        let t = rng.random_range(2..=8);
        let turns = random_matrix(&mut rng, t, dims.embed, 1.0);

        let n_pairs = rng.random_range(1..=3);
        let pairs: Vec<(usize, ErrorMode)> = (0..n_pairs)
            .map(|_| {
                let slot = rng.random_range(0..dims.agent_slots);
                (slot, ErrorMode::from_index(rng.random_range(0..ErrorMode::COUNT)).unwrap())
            })
            .collect();
        let labels = Labels::from_pairs(dims.agent_slots, &pairs);

        let k = params.top_k.min(t);
        let picked = sample(&mut rng, t, k).into_vec();
        let evidence = turns.select(Axis(0), &picked);
        let counterparts = &evidence + &random_matrix(&mut rng, k, dims.embed, 0.3);
        let slots: Vec<usize> = pairs.iter().map(|p| p.0).collect();
        let modes: Vec<ErrorMode> = pairs.iter().map(|p| p.1).collect();
        let contrastive =
            contrastive_batch(evidence.view(), counterparts.view(), &banks, &slots, &modes).expect("consistent shapes");
        DclInstance { params, banks, turns, labels, contrastive }
    }

    pub fn evaluate(&self) -> Result<Expected, DclError> {
        self.params.validate()?;
        let p = &self.params;
        let alpha = attention_weights(self.turns.view(), p)?;
        let out = bag_and_probs(self.turns.view(), alpha.view(), &self.banks, p)?;
        let top_k = top_k_evidence(alpha.view(), p.top_k.min(alpha.len()))?;
        let cls = loss_cls(out.p_agent.view(), out.p_error.view(), out.p_pair.view(), &self.labels)?;
        let cb = &self.contrastive;
        let con = loss_con(&cb.anchors, &cb.positives, cb.batch.view(), p.tau_c)?;
        let hier = loss_hier(out.p_agent.view(), out.p_error.view(), out.p_pair.view())?;
        Ok(Expected {
            attention: alpha.to_vec(),
            p_agent: out.p_agent.to_vec(),
            p_error: out.p_error.to_vec(),
            p_pair: rows(&out.p_pair),
            top_k,
            loss_cls: cls,
            loss_con: con,
            loss_hier: hier,
            loss_total: loss_total(LossComponents { cls, con, hier }, p.lambda),
        })
    }

    pub fn evaluate_naive(&self) -> Expected {
        let p = &self.params;
        let turns = rows(&self.turns);
        let alpha = naive::attention_weights(&turns, p);
        let probs = naive::bag_and_probs(&turns, &alpha, &self.banks, p);
        let top_k = naive::top_k_evidence(&alpha, p.top_k.min(alpha.len()));
        let cls = naive::loss_cls(&probs.p_agent, &probs.p_error, &probs.p_pair, &self.labels);
        let cb = &self.contrastive;
        let con = naive::loss_con(&cb.anchors, &cb.positives, &rows(&cb.batch), p.tau_c);
        let hier = naive::loss_hier(&probs.p_agent, &probs.p_error, &probs.p_pair);
        Expected {
            attention: alpha,
            p_agent: probs.p_agent,
            p_error: probs.p_error,
            p_pair: probs.p_pair,
            top_k,
            loss_cls: cls,
            loss_con: con,
            loss_hier: hier,
            loss_total: naive::loss_total(LossComponents { cls, con, hier }, p.lambda),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckLine {
    pub op: String,
    pub max_abs_diff: f64,
    pub pass: bool,
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    if a.len() != b.len() {
        return f64::INFINITY;
    }
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Per-operation comparison of two evaluations. Attention must also be a
/// probability vector.
pub fn compare(got: &Expected, want: &Expected, tol: f64) -> Vec<CheckLine> {
    let flat = |m: &[Vec<f64>]| m.concat();
    let probs = [got.p_agent.clone(), got.p_error.clone(), flat(&got.p_pair)].concat();
    let probs_want = [want.p_agent.clone(), want.p_error.clone(), flat(&want.p_pair)].concat();
    let mut lines = vec![
        ("attention_weights", max_diff(&got.attention, &want.attention)),
        ("bag_and_probs", max_diff(&probs, &probs_want)),
        ("top_k_evidence", if got.top_k == want.top_k { 0.0 } else { f64::INFINITY }),
        ("loss_cls", (got.loss_cls - want.loss_cls).abs()),
        ("loss_con", (got.loss_con - want.loss_con).abs()),
        ("loss_hier", (got.loss_hier - want.loss_hier).abs()),
        ("loss_total", (got.loss_total - want.loss_total).abs()),
    ]
    .into_iter()
    .map(|(op, diff)| CheckLine { op: op.to_string(), max_abs_diff: diff, pass: diff <= tol })
    .collect::<Vec<_>>();
    let sum: f64 = got.attention.iter().sum();
    let normalized = (sum - 1.0).abs() <= 1e-9 && got.attention.iter().all(|&a| a > 0.0);
    lines[0].pass &= normalized;
    lines
}

/// Checks one fixture: the vectorized path against the naive path and,
/// when present, against the stored expectations.
pub fn check_fixture(f: &DclFixture, tol: f64) -> Result<Vec<CheckLine>, DclError> {
    let got = f.instance.evaluate()?;
    let mut lines = compare(&got, &f.instance.evaluate_naive(), tol);
    if let Some(want) = &f.expected {
        for (line, stored) in lines.iter_mut().zip(compare(&got, want, tol)) {
            line.max_abs_diff = line.max_abs_diff.max(stored.max_abs_diff);
            line.pass &= stored.pass;
        }
    }
    Ok(lines)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dims() -> Dims {
        Dims { embed: 12, hidden: 6, projection: 8, rank: 4, agent_slots: 4 }
    }

    #[test]
    fn fast_and_naive_agree() {
        for seed in 0..20 {
            let inst = DclInstance::random(seed, dims());
            let lines = compare(&inst.evaluate().unwrap(), &inst.evaluate_naive(), 1e-9);
            assert!(lines.iter().all(|l| l.pass), "seed {seed}: {lines:?}");
        }
    }

    #[test]
    fn fixture_round_trips_through_json() {
        let inst = DclInstance::random(3, dims());
        let fixture = DclFixture { expected: Some(inst.evaluate().unwrap()), instance: inst };
        let text = serde_json::to_string(&fixture).unwrap();
        let back: DclFixture = serde_json::from_str(&text).unwrap();
        assert!(check_fixture(&back, 1e-12).unwrap().iter().all(|l| l.pass));

        let mut tampered = back.clone();
        tampered.expected.as_mut().unwrap().loss_hier += 1e-3;
        let lines = check_fixture(&tampered, 1e-9).unwrap();
        assert!(!lines.iter().find(|l| l.op == "loss_hier").unwrap().pass);
    }
}
