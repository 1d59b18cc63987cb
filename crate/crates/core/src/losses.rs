//! Prediction, hardening and load-balancing losses.
//!
//! Scalar loss arithmetic runs in `f64` regardless of the model precision so
//! the entropy clamp stays representable when activations saturate in `f32`.

use serde::{Deserialize, Serialize};

use crate::model::{ForwardTrace, GradSeed};
use crate::numeric::{argmax, log_sum_exp, softmax_into, Scalar, Tensor2};
use crate::{Error, Result};

/// Clamp applied to Bernoulli probabilities before taking logs.
pub const ENTROPY_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_pred: f64,
    pub l_harden: f64,
    pub l_balance: f64,
    pub h: f64,
    pub alpha: f64,
    pub total: f64,
}

/// Per-batch dispatch fractions `f` and mean coefficients `p`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchRoutingStats {
    pub f: Vec<f64>,
    pub p: Vec<f64>,
}

/// How the hardening entropy is reduced over the batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HardenNorm {
    #[default]
    Mean,
    Sum,
}

/// Term coefficients of `pred * L_pred + h * L_harden + alpha * L_balance`.
///
/// `pred` is 1 in training; the gradient checker zeroes it to isolate the
/// other terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub pred: f64,
    pub h: f64,
    pub alpha: f64,
    pub harden_norm: HardenNorm,
}

impl LossWeights {
    pub fn new(h: f64, alpha: f64) -> Self {
        Self {
            pred: 1.0,
            h,
            alpha,
            harden_norm: HardenNorm::Mean,
        }
    }
}

fn check_label(label: usize, classes: usize) -> Result<()> {
    if label >= classes {
        return Err(Error::Domain(format!("label {label} out of range for {classes} classes")));
    }
    Ok(())
}

/// `-log softmax(logits)[label]` via log-sum-exp.
pub fn cross_entropy<T: Scalar>(logits: &[T], label: usize) -> Result<f64> {
    check_label(label, logits.len())?;
    let v: Vec<f64> = logits.iter().map(|x| x.to_f64_lossy()).collect();
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numeric("non-finite logits in cross entropy".into()));
    }
    Ok(log_sum_exp(&v) - v[label])
}

/// Entropy (nats) of a Bernoulli variable with success probability `p`.
pub fn bernoulli_entropy(p: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Domain(format!("Bernoulli probability {p} outside [0, 1]")));
    }
    Ok(entropy_clamped(p))
}

#[inline]
fn entropy_clamped(p: f64) -> f64 {
    let q = p.clamp(ENTROPY_EPS, 1.0 - ENTROPY_EPS);
    -q * q.ln() - (1.0 - q) * (1.0 - q).ln()
}

/// dH/dp, zero where the clamp is active.
#[inline]
fn entropy_slope(p: f64) -> f64 {
    if p <= ENTROPY_EPS || p >= 1.0 - ENTROPY_EPS {
        0.0
    } else {
        ((1.0 - p) / p).ln()
    }
}

fn require_rows<T: Scalar>(trace: &ForwardTrace<T>) -> Result<usize> {
    match trace.batch_size() {
        0 => Err(Error::Domain("empty batch".into())),
        b => Ok(b),
    }
}

/// Node entropy summed over nodes and reduced over the batch.
pub fn hardening_loss<T: Scalar>(trace: &ForwardTrace<T>, norm: HardenNorm) -> Result<f64> {
    let b = require_rows(trace)?;
    let total: f64 = trace
        .node_act
        .as_slice()
        .iter()
        .map(|s| entropy_clamped(s.to_f64_lossy()))
        .sum();
    Ok(match norm {
        HardenNorm::Mean => total / b as f64,
        HardenNorm::Sum => total,
    })
}

/// Hard dispatch fractions (argmax of `c`, ties to the lower index) and
/// mean coefficients.
pub fn routing_stats<T: Scalar>(trace: &ForwardTrace<T>) -> Result<BatchRoutingStats> {
    let b = require_rows(trace)?;
    let leaves = trace.leaf_count();
    let mut f = vec![0.0; leaves];
    let mut p = vec![0.0; leaves];
    for r in 0..b {
        let row = trace.coeffs.row(r);
        f[argmax(row)] += 1.0;
        for (acc, c) in p.iter_mut().zip(row) {
            *acc += c.to_f64_lossy();
        }
    }
    let inv = 1.0 / b as f64;
    f.iter_mut().for_each(|v| *v *= inv);
    p.iter_mut().for_each(|v| *v *= inv);
    Ok(BatchRoutingStats { f, p })
}

/// `2^d * sum_i f_i P_i`.
pub fn balance_loss(stats: &BatchRoutingStats, depth: usize) -> Result<f64> {
    let leaves = 1usize << depth;
    if stats.f.len() != leaves || stats.p.len() != leaves {
        return Err(Error::Dimension(format!(
            "depth {depth} needs {leaves} leaves, stats have f={} p={}",
            stats.f.len(),
            stats.p.len()
        )));
    }
    let s: f64 = stats.f.iter().zip(&stats.p).map(|(f, p)| f * p).sum();
    Ok(leaves as f64 * s)
}

pub fn total_loss(l_pred: f64, l_harden: f64, l_balance: f64, h: f64, alpha: f64) -> Result<LossBreakdown> {
    if [l_pred, l_harden, l_balance, h, alpha].iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite loss component".into()));
    }
    if h < 0.0 || alpha < 0.0 {
        return Err(Error::Domain(format!("loss coefficients must be >= 0 (h={h}, alpha={alpha})")));
    }
    Ok(LossBreakdown {
        l_pred,
        l_harden,
        l_balance,
        h,
        alpha,
        total: l_pred + h * l_harden + alpha * l_balance,
    })
}

/// Mean cross entropy over rows and its derivative w.r.t. the logits.
pub fn prediction_loss<T: Scalar>(logits: &Tensor2<T>, labels: &[usize], scale: f64) -> Result<(f64, Tensor2<T>)> {
    let b = logits.rows();
    if b == 0 {
        return Err(Error::Domain("empty batch".into()));
    }
    if labels.len() != b {
        return Err(Error::Dimension(format!("{} labels for {b} rows", labels.len())));
    }
    let classes = logits.cols();
    let mut grad = Tensor2::zeros(b, classes);
    let mut total = 0.0;
    let mut row64 = vec![0.0f64; classes];
    let mut prob = vec![0.0f64; classes];
    let g = scale / b as f64;
    for (r, &label) in labels.iter().enumerate() {
        check_label(label, classes)?;
        for (d, s) in row64.iter_mut().zip(logits.row(r)) {
            *d = s.to_f64_lossy();
        }
        total += log_sum_exp(&row64) - row64[label];
        softmax_into(&row64, &mut prob);
        prob[label] -= 1.0;
        for (o, p) in grad.row_mut(r).iter_mut().zip(&prob) {
            *o = T::lit(g * p);
        }
    }
    let loss = total / b as f64;
    if !loss.is_finite() {
        return Err(Error::Numeric("non-finite prediction loss".into()));
    }
    Ok((loss, grad))
}

/// Loss value, routing statistics, and the upstream derivatives for
/// [`FffModel::backward`](crate::model::FffModel::backward).
///
/// `frozen_dispatch` replaces the measured `f` (used when finite-differencing
/// with `f` held constant). `f` never receives gradient either way.
pub fn objective<T: Scalar>(
    trace: &ForwardTrace<T>,
    labels: &[usize],
    weights: &LossWeights,
    frozen_dispatch: Option<&[f64]>,
) -> Result<(LossBreakdown, BatchRoutingStats, GradSeed<T>)> {
    let b = require_rows(trace)?;
    let (l_pred, d_logits) = prediction_loss(&trace.logits, labels, weights.pred)?;
    let mut stats = routing_stats(trace)?;
    if let Some(f) = frozen_dispatch {
        if f.len() != stats.f.len() {
            return Err(Error::Dimension("frozen dispatch has the wrong length".into()));
        }
        stats.f = f.to_vec();
    }
    let leaves = trace.leaf_count();
    let depth = leaves.trailing_zeros() as usize;
    let l_harden = hardening_loss(trace, weights.harden_norm)?;
    let l_balance = balance_loss(&stats, depth)?;

    let mut seed = GradSeed {
        d_logits,
        d_coeffs: None,
        d_node_act: None,
    };
    if weights.h != 0.0 {
        let scale = match weights.harden_norm {
            HardenNorm::Mean => weights.h / b as f64,
            HardenNorm::Sum => weights.h,
        };
        let mut d = Tensor2::zeros(b, trace.node_count());
        for (o, s) in d.as_mut_slice().iter_mut().zip(trace.node_act.as_slice()) {
            *o = T::lit(scale * entropy_slope(s.to_f64_lossy()));
        }
        seed.d_node_act = Some(d);
    }
    if weights.alpha != 0.0 {
        let scale = weights.alpha * leaves as f64 / b as f64;
        let per_leaf: Vec<T> = stats.f.iter().map(|f| T::lit(scale * f)).collect();
        let mut d = Tensor2::zeros(b, leaves);
        for r in 0..b {
            d.row_mut(r).copy_from_slice(&per_leaf);
        }
        seed.d_coeffs = Some(d);
    }

    let breakdown = LossBreakdown {
        l_pred,
        l_harden,
        l_balance,
        h: weights.h,
        alpha: weights.alpha,
        total: weights.pred * l_pred + weights.h * l_harden + weights.alpha * l_balance,
    };
    if !breakdown.total.is_finite() {
        return Err(Error::Numeric("non-finite total loss".into()));
    }
    Ok((breakdown, stats, seed))
}
