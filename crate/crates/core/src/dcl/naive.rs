//! Scalar-loop reference versions of the forward math. Nothing here calls a
//! vectorized ndarray routine; every sum is written out by hand.

#![allow(clippy::needless_range_loop)]

use super::{DCLParams, JointHead, Labels, LossComponents, LossWeights, PrototypeBank, PROB_CLIP};

fn logistic(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

pub fn attention_weights(turns: &[Vec<f64>], params: &DCLParams) -> Vec<f64> {
    let (h, d) = params.v.dim();
    let mut scores = Vec::with_capacity(turns.len());
    for turn in turns {
        let mut s = 0.0;
        for i in 0..h {
            let mut pre = 0.0;
            for j in 0..d {
                pre += params.v[[i, j]] * turn[j];
            }
            s += params.w[i] * pre.tanh();
        }
        scores.push(s);
    }
    let total: f64 = scores.iter().map(|s| s.exp()).sum();
    scores.iter().map(|s| s.exp() / total).collect()
}

pub struct NaiveProbs {
    pub bag: Vec<f64>,
    pub p_agent: Vec<f64>,
    pub p_error: Vec<f64>,
    pub p_pair: Vec<Vec<f64>>,
}

fn project(params: &DCLParams, x: &[f64]) -> Vec<f64> {
    let (p, d) = params.proj.dim();
    (0..p).map(|i| (0..d).map(|j| params.proj[[i, j]] * x[j]).sum()).collect()
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for i in 0..a.len() {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na.sqrt() * nb.sqrt())
    }
}

pub fn bag_and_probs(turns: &[Vec<f64>], alpha: &[f64], banks: &PrototypeBank, params: &DCLParams) -> NaiveProbs {
    let d = params.v.ncols();
    let mut bag = vec![0.0; d];
    for (t, turn) in turns.iter().enumerate() {
        for j in 0..d {
            bag[j] += alpha[t] * turn[j];
        }
    }
    let u = project(params, &bag);
    let logits = |protos: &ndarray::Array2<f64>| -> Vec<f64> {
        (0..protos.nrows())
            .map(|k| {
                let row: Vec<f64> = (0..d).map(|j| protos[[k, j]]).collect();
                params.logit_scale * cosine(&u, &project(params, &row))
            })
            .collect()
    };
    let a = logits(&banks.agents);
    let e = logits(&banks.errors);

    let r = params.bil_bag.nrows();
    let g: Vec<f64> = (0..r).map(|q| (0..d).map(|j| params.bil_bag[[q, j]] * bag[j]).sum()).collect();
    let mut p_pair = vec![vec![0.0; e.len()]; a.len()];
    for k in 0..a.len() {
        for m in 0..e.len() {
            let mut bil = 0.0;
            for q in 0..r {
                bil += g[q] * params.bil_agent[[k, q]] * params.bil_error[[m, q]];
            }
            let mix = params.gamma * (a[k] + e[m]);
            let z = match params.head {
                JointHead::Full => bil + mix,
                JointHead::OnlyBilinear => bil,
                JointHead::OnlyMix => mix,
            };
            p_pair[k][m] = logistic(z);
        }
    }
    NaiveProbs {
        bag,
        p_agent: a.iter().map(|&z| logistic(z)).collect(),
        p_error: e.iter().map(|&z| logistic(z)).collect(),
        p_pair,
    }
}

/// Repeated selection of the largest remaining weight; strict comparison
/// keeps the lower index on ties.
pub fn top_k_evidence(alpha: &[f64], k: usize) -> Vec<usize> {
    let mut taken = vec![false; alpha.len()];
    let mut out = Vec::with_capacity(k);
    for _ in 0..k {
        let mut best: Option<usize> = None;
        for i in 0..alpha.len() {
            if !taken[i] && best.is_none_or(|b| alpha[i] > alpha[b]) {
                best = Some(i);
            }
        }
        let b = best.expect("k <= len");
        taken[b] = true;
        out.push(b);
    }
    out
}

fn bce(p: f64, y: f64) -> f64 {
    let p = p.clamp(PROB_CLIP, 1.0 - PROB_CLIP);
    -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
}

pub fn loss_cls(p_agent: &[f64], p_error: &[f64], p_pair: &[Vec<f64>], labels: &Labels) -> f64 {
    let mut la = 0.0;
    for k in 0..p_agent.len() {
        la += bce(p_agent[k], labels.agent[k]);
    }
    let mut le = 0.0;
    for m in 0..p_error.len() {
        le += bce(p_error[m], labels.error[m]);
    }
    let mut lp = 0.0;
    let mut n = 0;
    for k in 0..p_pair.len() {
        for m in 0..p_pair[k].len() {
            lp += bce(p_pair[k][m], labels.pair[[k, m]]);
            n += 1;
        }
    }
    la / p_agent.len() as f64 + le / p_error.len() as f64 + lp / n as f64
}

pub fn loss_con(anchors: &[usize], positives: &[Vec<usize>], batch: &[Vec<f64>], tau: f64) -> f64 {
    let mut total = 0.0;
    for (idx, &a) in anchors.iter().enumerate() {
        let mut denom = 0.0;
        for (j, row) in batch.iter().enumerate() {
            if j != a {
                denom += (cosine(&batch[a], row) / tau).exp();
            }
        }
        let mut inner = 0.0;
        for &p in &positives[idx] {
            inner += ((cosine(&batch[a], &batch[p]) / tau).exp() / denom).ln();
        }
        total += -inner / positives[idx].len() as f64;
    }
    total
}

pub fn loss_hier(p_agent: &[f64], p_error: &[f64], p_pair: &[Vec<f64>]) -> f64 {
    let mut total = 0.0;
    let mut n = 0;
    for k in 0..p_agent.len() {
        for m in 0..p_error.len() {
            let bound = if p_agent[k] < p_error[m] { p_agent[k] } else { p_error[m] };
            let gap = p_pair[k][m] - bound;
            if gap > 0.0 {
                total += gap * gap;
            }
            n += 1;
        }
    }
    total / n as f64
}

pub fn loss_total(c: LossComponents, w: LossWeights) -> f64 {
    [(w.cls, c.cls), (w.con, c.con), (w.hier, c.hier)].iter().map(|(a, b)| a * b).sum()
}
