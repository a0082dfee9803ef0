//! CTC loss: log-space forward algorithm over blank-augmented alignments,
//! with the forward-backward gradient for training.
//!
//! The collapse rule removes consecutive repeats, then blanks; repeats in
//! the target therefore need a separating blank, which the feasibility
//! check accounts for.

use ndarray::Array2;
use thiserror::Error;

use super::lstm::{backward, forward_cached, IdentifierModel, LstmGrads, PredictionDistribution};
use super::{labels_of, BLANK};
use crate::features::FeatureSequence;
use crate::graph::LayerKind;

#[derive(Debug, Error)]
pub enum CtcError {
    #[error("target longer than representable: need at least {need} steps, have {have}")]
    Infeasible { need: usize, have: usize },
    #[error("distribution has zero steps")]
    EmptyDistribution,
    #[error(transparent)]
    Lstm(#[from] super::lstm::LstmError),
}

/// Minimum frame count that can emit `target` under the collapse rule.
pub fn min_frames(target: &[usize]) -> usize {
    let repeats = target.windows(2).filter(|w| w[0] == w[1]).count();
    target.len() + repeats
}

fn log_sum_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

fn log_sum_exp3(a: f64, b: f64, c: f64) -> f64 {
    log_sum_exp(log_sum_exp(a, b), c)
}

/// Blank-augmented label sequence: blank, z1, blank, z2, ..., blank.
fn augment(target: &[usize]) -> Vec<usize> {
    let mut s = Vec::with_capacity(2 * target.len() + 1);
    s.push(BLANK);
    for &z in target {
        s.push(z);
        s.push(BLANK);
    }
    s
}

struct Lattice {
    /// log alpha, T x S
    alpha: Array2<f64>,
    /// log beta, T x S
    beta: Array2<f64>,
    aug: Vec<usize>,
    log_p_target: f64,
}

fn forward_backward(logp: &Array2<f64>, target: &[usize]) -> Result<Lattice, CtcError> {
    let t_len = logp.nrows();
    if t_len == 0 {
        return Err(CtcError::EmptyDistribution);
    }
    let need = min_frames(target);
    if need > t_len {
        return Err(CtcError::Infeasible { need, have: t_len });
    }
    let aug = augment(target);
    let s_len = aug.len();
    let neg = f64::NEG_INFINITY;

    let mut alpha = Array2::from_elem((t_len, s_len), neg);
    alpha[(0, 0)] = logp[(0, BLANK)];
    if s_len > 1 {
        alpha[(0, 1)] = logp[(0, aug[1])];
    }
    for t in 1..t_len {
        for s in 0..s_len {
            let stay = alpha[(t - 1, s)];
            let prev = if s >= 1 { alpha[(t - 1, s - 1)] } else { neg };
            let skip = if s >= 2 && aug[s] != BLANK && aug[s] != aug[s - 2] {
                alpha[(t - 1, s - 2)]
            } else {
                neg
            };
            let total = log_sum_exp3(stay, prev, skip);
            if total != neg {
                alpha[(t, s)] = total + logp[(t, aug[s])];
            }
        }
    }

    let mut beta = Array2::from_elem((t_len, s_len), neg);
    beta[(t_len - 1, s_len - 1)] = logp[(t_len - 1, aug[s_len - 1])];
    if s_len > 1 {
        beta[(t_len - 1, s_len - 2)] = logp[(t_len - 1, aug[s_len - 2])];
    }
    for t in (0..t_len - 1).rev() {
        for s in 0..s_len {
            let stay = beta[(t + 1, s)];
            let next = if s + 1 < s_len { beta[(t + 1, s + 1)] } else { neg };
            let skip = if s + 2 < s_len && aug[s + 2] != BLANK && aug[s + 2] != aug[s] {
                beta[(t + 1, s + 2)]
            } else {
                neg
            };
            let total = log_sum_exp3(stay, next, skip);
            if total != neg {
                beta[(t, s)] = total + logp[(t, aug[s])];
            }
        }
    }

    let tail = if s_len > 1 {
        log_sum_exp(alpha[(t_len - 1, s_len - 1)], alpha[(t_len - 1, s_len - 2)])
    } else {
        alpha[(t_len - 1, 0)]
    };
    Ok(Lattice { alpha, beta, aug, log_p_target: tail })
}

fn log_probs(p: &PredictionDistribution) -> Array2<f64> {
    p.probs.mapv(|v| if v > 0.0 { v.ln() } else { f64::NEG_INFINITY })
}

/// -log of the total probability of every alignment collapsing to `target`.
pub fn ctc_loss(p: &PredictionDistribution, target: &[LayerKind]) -> Result<f64, CtcError> {
    let labels = labels_of(target);
    let lattice = forward_backward(&log_probs(p), &labels)?;
    Ok(-lattice.log_p_target)
}

/// Loss and its exact gradient with respect to the softmax logits.
fn loss_and_dlogits(
    probs: &Array2<f64>,
    target: &[usize],
) -> Result<(f64, Array2<f64>), CtcError> {
    let logp = probs.mapv(|v| if v > 0.0 { v.ln() } else { f64::NEG_INFINITY });
    let lattice = forward_backward(&logp, target)?;
    let (t_len, a_len) = probs.dim();
    let s_len = lattice.aug.len();

    // State posterior mass per (t, class), in probability space.
    let mut dlogits = probs.clone();
    for t in 0..t_len {
        let mut class_mass = vec![0.0f64; a_len];
        for s in 0..s_len {
            // alpha and beta both include logp at (t, s); divide one out.
            let joint = lattice.alpha[(t, s)] + lattice.beta[(t, s)]
                - logp[(t, lattice.aug[s])]
                - lattice.log_p_target;
            if joint.is_finite() {
                class_mass[lattice.aug[s]] += joint.exp();
            }
        }
        for k in 0..a_len {
            dlogits[(t, k)] -= class_mass[k];
        }
    }
    Ok((-lattice.log_p_target, dlogits))
}

/// Analytic gradient of `ctc_loss(lstm_forward(m, x), target)` with respect
/// to every model parameter. Returns the loss alongside.
pub fn ctc_grad(
    m: &IdentifierModel,
    x: &FeatureSequence,
    target: &[LayerKind],
) -> Result<(f64, LstmGrads), CtcError> {
    let cache = forward_cached(m, x)?;
    let labels = labels_of(target);
    let (loss, dlogits) = loss_and_dlogits(&cache.probs, &labels)?;
    Ok((loss, backward(m, &cache, &dlogits)))
}

/// Brute-force reference: enumerate every length-T path over the alphabet,
/// collapse it, and sum the probabilities of paths matching `target`.
/// Exponential; test and verification use only.
pub fn ctc_loss_by_enumeration(
    p: &PredictionDistribution,
    target: &[usize],
    alphabet: usize,
) -> f64 {
    fn collapse(path: &[usize]) -> Vec<usize> {
        let mut out = Vec::new();
        let mut last = usize::MAX;
        for &s in path {
            if s != last {
                out.push(s);
                last = s;
            }
        }
        out.retain(|&s| s != BLANK);
        out
    }
    let t_len = p.steps();
    let mut total = 0.0f64;
    let mut path = vec![0usize; t_len];
    loop {
        let prob: f64 = path.iter().enumerate().map(|(t, &s)| p.probs[(t, s)]).product();
        if collapse(&path) == target {
            total += prob;
        }
        // odometer increment
        let mut i = 0;
        loop {
            if i == t_len {
                return -total.ln();
            }
            path[i] += 1;
            if path[i] < alphabet {
                break;
            }
            path[i] = 0;
            i += 1;
        }
    }
}
