//! Forward math of the disentangled contrastive attribution model.
//!
//! A trajectory is a bag of turn embeddings. Attention pools the bag into one
//! vector; agent and error heads score it against prototype banks by scaled
//! cosine; a joint head combines a low-rank bilinear term with the marginal
//! logits. Three losses (classification, supervised contrastive, hierarchy
//! hinge) are combined with fixed weights.
//!
//! [`naive`] re-implements every operation with scalar loops and is used as
//! the reference evaluator.

pub mod fixture;
pub mod naive;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::taxonomy::ErrorMode;

pub const DEFAULT_EMBED_DIM: usize = 384;
pub const DEFAULT_PROJECTION_DIM: usize = 128;
pub const DEFAULT_RANK: usize = 64;
pub const DEFAULT_HIDDEN: usize = 128;
pub const DEFAULT_GAMMA: f64 = 1.0;
pub const DEFAULT_TAU: f64 = 0.07;
pub const DEFAULT_TOP_K: usize = 3;
pub const DEFAULT_LOGIT_SCALE: f64 = 10.0;
pub const PROB_CLIP: f64 = 1e-7;
const NORM_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DclError {
    #[error("dimension mismatch in {what}: expected {expected}, found {found}")]
    Dimension { what: String, expected: usize, found: usize },
    #[error("bag has no turns")]
    EmptyBag,
    #[error("top-k of {k} requested from {n} turns")]
    TopKTooLarge { k: usize, n: usize },
    #[error("anchor {0} has no positives")]
    EmptyPositives(usize),
    #[error("index {index} out of range for batch of {len}")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("prototype row {0} has zero norm")]
    ZeroPrototype(usize),
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
}

fn check_dim(what: &str, expected: usize, found: usize) -> Result<(), DclError> {
    if expected == found {
        Ok(())
    } else {
        Err(DclError::Dimension { what: what.to_string(), expected, found })
    }
}

/// Which terms enter the joint pair logit.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JointHead {
    #[default]
    Full,
    OnlyBilinear,
    OnlyMix,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub cls: f64,
    pub con: f64,
    pub hier: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { cls: 1.0, con: 0.4, hier: 0.6 }
    }
}

/// Row-normalized agent and error prototypes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrototypeBank {
    pub agents: Array2<f64>,
    pub errors: Array2<f64>,
}

fn normalize_rows(mut m: Array2<f64>) -> Result<Array2<f64>, DclError> {
    for (i, mut row) in m.rows_mut().into_iter().enumerate() {
        let norm = row.dot(&row).sqrt();
        if !norm.is_finite() || norm <= NORM_EPS {
            return Err(DclError::ZeroPrototype(i));
        }
        row /= norm;
    }
    Ok(m)
}

impl PrototypeBank {
    /// Normalizes caller-supplied definition embeddings.
    pub fn new(agents: Array2<f64>, errors: Array2<f64>) -> Result<Self, DclError> {
        check_dim("error prototype count", ErrorMode::COUNT, errors.nrows())?;
        check_dim("prototype width", agents.ncols(), errors.ncols())?;
        Ok(PrototypeBank { agents: normalize_rows(agents)?, errors: normalize_rows(errors)? })
    }

    pub fn dim(&self) -> usize {
        self.agents.ncols()
    }

    pub fn agent_slots(&self) -> usize {
        self.agents.nrows()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DCLParams {
    /// Attention projection, hidden × d.
    pub v: Array2<f64>,
    /// Attention scorer, hidden.
    pub w: Array1<f64>,
    /// Shared projection for bag and prototypes, p × d.
    pub proj: Array2<f64>,
    /// Bilinear bag factor, r × d.
    pub bil_bag: Array2<f64>,
    /// Bilinear agent-slot factors, K × r.
    pub bil_agent: Array2<f64>,
    /// Bilinear error-mode factors, 14 × r.
    pub bil_error: Array2<f64>,
    pub gamma: f64,
    pub tau_c: f64,
    pub lambda: LossWeights,
    pub top_k: usize,
    pub logit_scale: f64,
    pub head: JointHead,
}

/// Sizes used to draw random parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub embed: usize,
    pub hidden: usize,
    pub projection: usize,
    pub rank: usize,
    pub agent_slots: usize,
}

impl Default for Dims {
    fn default() -> Self {
        Dims {
            embed: DEFAULT_EMBED_DIM,
            hidden: DEFAULT_HIDDEN,
            projection: DEFAULT_PROJECTION_DIM,
            rank: DEFAULT_RANK,
            agent_slots: 8,
        }
    }
}

/// Matrix of N(0, scale²) entries.
pub fn random_matrix<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize, scale: f64) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || scale * rng.sample::<f64, _>(StandardNormal))
}

impl DCLParams {
    /// Xavier-scaled random parameters with default hyperparameters.
    pub fn random<R: Rng + ?Sized>(rng: &mut R, dims: Dims) -> Self {
        let xavier = |a: usize, b: usize| (2.0 / (a + b) as f64).sqrt();
        DCLParams {
            v: random_matrix(rng, dims.hidden, dims.embed, xavier(dims.hidden, dims.embed)),
            w: Array1::from_shape_simple_fn(dims.hidden, || xavier(dims.hidden, 1) * rng.sample::<f64, _>(StandardNormal)),
            proj: random_matrix(rng, dims.projection, dims.embed, xavier(dims.projection, dims.embed)),
            bil_bag: random_matrix(rng, dims.rank, dims.embed, xavier(dims.rank, dims.embed)),
            bil_agent: random_matrix(rng, dims.agent_slots, dims.rank, xavier(dims.agent_slots, dims.rank)),
            bil_error: random_matrix(rng, ErrorMode::COUNT, dims.rank, xavier(ErrorMode::COUNT, dims.rank)),
            gamma: DEFAULT_GAMMA,
            tau_c: DEFAULT_TAU,
            lambda: LossWeights::default(),
            top_k: DEFAULT_TOP_K,
            logit_scale: DEFAULT_LOGIT_SCALE,
            head: JointHead::Full,
        }
    }

    pub fn validate(&self) -> Result<(), DclError> {
        let d = self.v.ncols();
        check_dim("attention scorer", self.v.nrows(), self.w.len())?;
        check_dim("projection width", d, self.proj.ncols())?;
        check_dim("bilinear bag width", d, self.bil_bag.ncols())?;
        check_dim("bilinear agent rank", self.bil_bag.nrows(), self.bil_agent.ncols())?;
        check_dim("bilinear error rank", self.bil_bag.nrows(), self.bil_error.ncols())?;
        check_dim("bilinear error rows", ErrorMode::COUNT, self.bil_error.nrows())?;
        if self.tau_c.is_nan() || self.tau_c <= 0.0 {
            return Err(DclError::InvalidParam(format!("tau_c must be positive, got {}", self.tau_c)));
        }
        let l = self.lambda;
        if !(l.cls >= 0.0 && l.con >= 0.0 && l.hier >= 0.0) {
            return Err(DclError::InvalidParam("loss weights must be non-negative".into()));
        }
        if self.top_k == 0 {
            return Err(DclError::InvalidParam("top_k must be at least 1".into()));
        }
        Ok(())
    }

    pub fn embed_dim(&self) -> usize {
        self.v.ncols()
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn cosine(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    let denom = (a.dot(&a) * b.dot(&b)).sqrt();
    if denom <= NORM_EPS {
        0.0
    } else {
        a.dot(&b) / denom
    }
}

/// α = softmax_t(wᵀ tanh(V h_t)) over the rows of `turns` (T × d).
pub fn attention_weights(turns: ArrayView2<f64>, params: &DCLParams) -> Result<Array1<f64>, DclError> {
    if turns.nrows() == 0 {
        return Err(DclError::EmptyBag);
    }
    check_dim("turn embedding", params.embed_dim(), turns.ncols())?;
    let hidden = params.v.dot(&turns.t()).mapv(f64::tanh);
    let scores = params.w.dot(&hidden);
    Ok(softmax(scores.view()))
}

pub fn softmax(scores: ArrayView1<f64>) -> Array1<f64> {
    let max = scores.fold(f64::NEG_INFINITY, |m, &s| m.max(s));
    let exp = scores.mapv(|s| (s - max).exp());
    let total = exp.sum();
    exp / total
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BagOutput {
    pub bag: Array1<f64>,
    pub agent_logits: Array1<f64>,
    pub error_logits: Array1<f64>,
    /// K × 14.
    pub pair_logits: Array2<f64>,
    pub p_agent: Array1<f64>,
    pub p_error: Array1<f64>,
    pub p_pair: Array2<f64>,
}

pub fn bag_and_probs(
    turns: ArrayView2<f64>,
    alpha: ArrayView1<f64>,
    banks: &PrototypeBank,
    params: &DCLParams,
) -> Result<BagOutput, DclError> {
    check_dim("attention length", turns.nrows(), alpha.len())?;
    check_dim("turn embedding", params.embed_dim(), turns.ncols())?;
    check_dim("prototype width", params.embed_dim(), banks.dim())?;
    check_dim("agent slots", banks.agent_slots(), params.bil_agent.nrows())?;
    let bag = alpha.dot(&turns);
    let u = params.proj.dot(&bag);
    let head = |protos: &Array2<f64>| -> Array1<f64> {
        let projected = protos.dot(&params.proj.t());
        projected.rows().into_iter().map(|row| params.logit_scale * cosine(u.view(), row)).collect()
    };
    let agent_logits = head(&banks.agents);
    let error_logits = head(&banks.errors);

    let g = params.bil_bag.dot(&bag);
    let bilinear = (&params.bil_agent * &g).dot(&params.bil_error.t());
    let mix = &agent_logits.view().insert_axis(Axis(1)) + &error_logits.view().insert_axis(Axis(0));
    let pair_logits = match params.head {
        JointHead::Full => bilinear + params.gamma * mix,
        JointHead::OnlyBilinear => bilinear,
        JointHead::OnlyMix => params.gamma * mix,
    };
    Ok(BagOutput {
        p_agent: agent_logits.mapv(sigmoid),
        p_error: error_logits.mapv(sigmoid),
        p_pair: pair_logits.mapv(sigmoid),
        bag,
        agent_logits,
        error_logits,
        pair_logits,
    })
}

/// Indices of the `k` largest weights, ties to the lower index.
pub fn top_k_evidence(alpha: ArrayView1<f64>, k: usize) -> Result<Vec<usize>, DclError> {
    if k > alpha.len() {
        return Err(DclError::TopKTooLarge { k, n: alpha.len() });
    }
    let mut idx: Vec<usize> = (0..alpha.len()).collect();
    idx.sort_by(|&a, &b| alpha[b].total_cmp(&alpha[a]).then(a.cmp(&b)));
    idx.truncate(k);
    Ok(idx)
}

/// Binary targets for the three heads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Labels {
    pub agent: Array1<f64>,
    pub error: Array1<f64>,
    pub pair: Array2<f64>,
}

impl Labels {
    /// Targets from (slot, mode) pairs; marginals are the projections.
    pub fn from_pairs(agent_slots: usize, pairs: &[(usize, ErrorMode)]) -> Self {
        let mut l = Labels {
            agent: Array1::zeros(agent_slots),
            error: Array1::zeros(ErrorMode::COUNT),
            pair: Array2::zeros((agent_slots, ErrorMode::COUNT)),
        };
        for &(k, m) in pairs {
            l.agent[k] = 1.0;
            l.error[m.index()] = 1.0;
            l.pair[[k, m.index()]] = 1.0;
        }
        l
    }
}

fn mean_bce<'a>(p: impl Iterator<Item = &'a f64>, y: impl Iterator<Item = &'a f64>) -> f64 {
    let mut total = 0.0;
    let mut n = 0usize;
    for (&p, &y) in p.zip(y) {
        let p = p.clamp(PROB_CLIP, 1.0 - PROB_CLIP);
        total -= y * p.ln() + (1.0 - y) * (1.0 - p).ln();
        n += 1;
    }
    if n == 0 {
        0.0
    } else {
        total / n as f64
    }
}

/// Sum over the three levels of the mean clipped binary cross-entropy.
pub fn loss_cls(
    p_agent: ArrayView1<f64>,
    p_error: ArrayView1<f64>,
    p_pair: ArrayView2<f64>,
    labels: &Labels,
) -> Result<f64, DclError> {
    check_dim("agent labels", p_agent.len(), labels.agent.len())?;
    check_dim("error labels", p_error.len(), labels.error.len())?;
    check_dim("pair label rows", p_pair.nrows(), labels.pair.nrows())?;
    check_dim("pair label cols", p_pair.ncols(), labels.pair.ncols())?;
    Ok(mean_bce(p_agent.iter(), labels.agent.iter())
        + mean_bce(p_error.iter(), labels.error.iter())
        + mean_bce(p_pair.iter(), labels.pair.iter()))
}

/// Supervised contrastive loss over rows of `batch`. For each anchor the
/// denominator runs over every other row.
pub fn loss_con(
    anchors: &[usize],
    positives: &[Vec<usize>],
    batch: ArrayView2<f64>,
    tau: f64,
) -> Result<f64, DclError> {
    check_dim("positive lists", anchors.len(), positives.len())?;
    let n = batch.nrows();
    let in_range = |i: usize| if i < n { Ok(()) } else { Err(DclError::IndexOutOfRange { index: i, len: n }) };
    let norms: Array1<f64> = batch.rows().into_iter().map(|r| r.dot(&r).sqrt().max(NORM_EPS)).collect();
    let unit = &batch / &norms.view().insert_axis(Axis(1));
    let sims = unit.dot(&unit.t()) / tau;

    let mut total = 0.0;
    for (&a, pos) in anchors.iter().zip(positives) {
        in_range(a)?;
        if pos.is_empty() {
            return Err(DclError::EmptyPositives(a));
        }
        let row = sims.row(a);
        let max = (0..n).filter(|&j| j != a).map(|j| row[j]).fold(f64::NEG_INFINITY, f64::max);
        let lse = max + (0..n).filter(|&j| j != a).map(|j| (row[j] - max).exp()).sum::<f64>().ln();
        let mut term = 0.0;
        for &p in pos {
            in_range(p)?;
            term += row[p] - lse;
        }
        total -= term / pos.len() as f64;
    }
    Ok(total)
}

/// Mean over (k, m) of max(0, p_pair − min(p_agent, p_error))².
pub fn loss_hier(p_agent: ArrayView1<f64>, p_error: ArrayView1<f64>, p_pair: ArrayView2<f64>) -> Result<f64, DclError> {
    check_dim("pair rows", p_agent.len(), p_pair.nrows())?;
    check_dim("pair cols", p_error.len(), p_pair.ncols())?;
    let bound = Array2::from_shape_fn(p_pair.raw_dim(), |(k, m)| p_agent[k].min(p_error[m]));
    let excess = (&p_pair - &bound).mapv(|x| x.max(0.0).powi(2));
    Ok(excess.mean().unwrap_or(0.0))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossComponents {
    pub cls: f64,
    pub con: f64,
    pub hier: f64,
}

pub fn loss_total(c: LossComponents, w: LossWeights) -> f64 {
    w.cls * c.cls + w.con * c.con + w.hier * c.hier
}

/// Rows and index lists for one trajectory's contrastive term.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContrastiveBatch {
    pub batch: Array2<f64>,
    pub anchors: Vec<usize>,
    pub positives: Vec<Vec<usize>>,
}

/// Stacks evidence turns (anchors), their baseline counterparts, and both
/// prototype banks. Each anchor's positives are its counterpart plus the
/// prototypes of the labeled agents and modes; everything else acts as a
/// negative.
pub fn contrastive_batch(
    evidence: ArrayView2<f64>,
    counterparts: ArrayView2<f64>,
    banks: &PrototypeBank,
    labeled_slots: &[usize],
    labeled_modes: &[ErrorMode],
) -> Result<ContrastiveBatch, DclError> {
    check_dim("counterpart count", evidence.nrows(), counterparts.nrows())?;
    check_dim("evidence width", banks.dim(), evidence.ncols())?;
    check_dim("counterpart width", banks.dim(), counterparts.ncols())?;
    let e = evidence.nrows();
    let k = banks.agent_slots();
    let batch = ndarray::concatenate(
        Axis(0),
        &[evidence, counterparts, banks.agents.view(), banks.errors.view()],
    )
    .expect("equal widths");
    let mut shared = Vec::new();
    for &slot in labeled_slots {
        if slot >= k {
            return Err(DclError::IndexOutOfRange { index: slot, len: k });
        }
        shared.push(2 * e + slot);
    }
    shared.extend(labeled_modes.iter().map(|m| 2 * e + k + m.index()));
    let positives = (0..e).map(|i| std::iter::once(e + i).chain(shared.iter().copied()).collect()).collect();
    Ok(ContrastiveBatch { batch, anchors: (0..e).collect(), positives })
}
