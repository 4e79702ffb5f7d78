//! Loss functions and their analytic gradients.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{smooth_l1, BoxDelta};

/// Whether an (embedding, label) pair should be pulled together or apart.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PairLabel {
    Match,
    NonMatch,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairLoss {
    pub loss: f64,
    pub du: Vec<f64>,
    pub dv: Vec<f64>,
}

/// Cosine embedding loss for unit vectors: `1 - u.v` for matching pairs and
/// `max(0, u.v - margin)` for non-matching pairs.
pub fn cosine_embedding_loss(u: &[f64], v: &[f64], label: PairLabel, margin: f64) -> Result<PairLoss> {
    if u.len() != v.len() {
        return Err(Error::DimensionMismatch { expected: u.len(), got: v.len() });
    }
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    let zero = || vec![0.0; u.len()];
    Ok(match label {
        PairLabel::Match => PairLoss {
            loss: 1.0 - dot,
            du: v.iter().map(|x| -x).collect(),
            dv: u.iter().map(|x| -x).collect(),
        },
        PairLabel::NonMatch if dot > margin => PairLoss { loss: dot - margin, du: v.to_vec(), dv: u.to_vec() },
        PairLabel::NonMatch => PairLoss { loss: 0.0, du: zero(), dv: zero() },
    })
}

pub fn sigmoid(s: f64) -> f64 {
    if s >= 0.0 {
        1.0 / (1.0 + (-s).exp())
    } else {
        let e = s.exp();
        e / (1.0 + e)
    }
}

/// Binary logistic loss on a logit, with `d loss / d score = sigmoid(s) - label`.
pub fn logistic_loss(score: f64, label: bool) -> (f64, f64) {
    let y = if label { 1.0 } else { 0.0 };
    let loss = score.max(0.0) - score * y + (-score.abs()).exp().ln_1p();
    (loss, sigmoid(score) - y)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub rpn_reg: f64,
    pub rpn_score: f64,
    pub out_reg: f64,
    pub out_score: f64,
    pub embed: f64,
    /// Non-matching pairs are penalized once their cosine exceeds this.
    pub margin: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { rpn_reg: 0.01, rpn_score: 0.01, out_reg: 0.1, out_score: 0.1, embed: 3.0, margin: 0.1 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let w = [self.rpn_reg, self.rpn_score, self.out_reg, self.out_score, self.embed];
        if w.iter().any(|x| !(*x >= 0.0)) || !(0.0..1.0).contains(&self.margin) {
            return Err(Error::Config("loss weights must be nonnegative and the margin in [0,1)".into()));
        }
        Ok(())
    }

    pub fn scaled(&self, k: f64) -> Self {
        Self {
            rpn_reg: self.rpn_reg * k,
            rpn_score: self.rpn_score * k,
            out_reg: self.out_reg * k,
            out_score: self.out_score * k,
            embed: self.embed * k,
            margin: self.margin,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegressionTerm {
    pub pred: BoxDelta,
    pub target: BoxDelta,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreTerm {
    pub logit: f64,
    pub label: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingPair {
    /// Label-side embedding.
    pub u: Vec<f64>,
    /// Region-side embedding.
    pub v: Vec<f64>,
    pub label: PairLabel,
}

/// Inputs of the five-term objective. Each term is averaged over its entries;
/// an empty term contributes zero.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LossBatch {
    pub rpn_reg: Vec<RegressionTerm>,
    pub rpn_score: Vec<ScoreTerm>,
    pub out_reg: Vec<RegressionTerm>,
    pub out_score: Vec<ScoreTerm>,
    pub embed: Vec<EmbeddingPair>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LossBreakdown {
    pub rpn_reg: f64,
    pub rpn_score: f64,
    pub out_reg: f64,
    pub out_score: f64,
    pub embed: f64,
    pub total: f64,
}

/// Gradients of the total loss with respect to every prediction in the batch.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LossGrads {
    pub rpn_reg: Vec<[f64; 4]>,
    pub rpn_score: Vec<f64>,
    pub out_reg: Vec<[f64; 4]>,
    pub out_score: Vec<f64>,
    pub embed_u: Vec<Vec<f64>>,
    pub embed_v: Vec<Vec<f64>>,
}

fn regression(terms: &[RegressionTerm], weight: f64) -> (f64, Vec<[f64; 4]>) {
    if terms.is_empty() {
        return (0.0, Vec::new());
    }
    let n = terms.len() as f64;
    let mut total = 0.0;
    let grads = terms
        .iter()
        .map(|t| {
            let (p, q) = (t.pred.as_array(), t.target.as_array());
            let mut g = [0.0; 4];
            for i in 0..4 {
                let (l, d) = smooth_l1(p[i], q[i]);
                total += l;
                g[i] = weight * d / n;
            }
            g
        })
        .collect();
    (total / n, grads)
}

fn scoring(terms: &[ScoreTerm], weight: f64) -> (f64, Vec<f64>) {
    if terms.is_empty() {
        return (0.0, Vec::new());
    }
    let n = terms.len() as f64;
    let mut total = 0.0;
    let grads = terms
        .iter()
        .map(|t| {
            let (l, d) = logistic_loss(t.logit, t.label);
            total += l;
            weight * d / n
        })
        .collect();
    (total / n, grads)
}

/// Weighted sum of the two RPN terms, the two output terms and the
/// embedding term.
pub fn total_loss(batch: &LossBatch, weights: &LossWeights) -> Result<(LossBreakdown, LossGrads)> {
    let (rpn_reg, g_rpn_reg) = regression(&batch.rpn_reg, weights.rpn_reg);
    let (rpn_score, g_rpn_score) = scoring(&batch.rpn_score, weights.rpn_score);
    let (out_reg, g_out_reg) = regression(&batch.out_reg, weights.out_reg);
    let (out_score, g_out_score) = scoring(&batch.out_score, weights.out_score);

    let mut embed = 0.0;
    let (mut gu, mut gv) = (Vec::new(), Vec::new());
    if !batch.embed.is_empty() {
        let n = batch.embed.len() as f64;
        let k = weights.embed / n;
        for pair in &batch.embed {
            let pl = cosine_embedding_loss(&pair.u, &pair.v, pair.label, weights.margin)?;
            embed += pl.loss;
            gu.push(pl.du.iter().map(|x| x * k).collect());
            gv.push(pl.dv.iter().map(|x| x * k).collect());
        }
        embed /= n;
    }
    let total = weights.rpn_reg * rpn_reg
        + weights.rpn_score * rpn_score
        + weights.out_reg * out_reg
        + weights.out_score * out_score
        + weights.embed * embed;
    Ok((
        LossBreakdown { rpn_reg, rpn_score, out_reg, out_score, embed, total },
        LossGrads {
            rpn_reg: g_rpn_reg,
            rpn_score: g_rpn_score,
            out_reg: g_out_reg,
            out_score: g_out_score,
            embed_u: gu,
            embed_v: gv,
        },
    ))
}
