//! Adam training loop for the LSTM-CTC identifier.
//!
//! Mini-batch gradients are computed per sample (in parallel when a rayon
//! pool is available) and reduced in index order, so the result does not
//! depend on worker count. Determinism given (config, seed) is a contract.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::ctc::{ctc_grad, CtcError};
use super::decode::beam_decode;
use super::lstm::{lstm_forward, IdentifierModel, GATES};
use super::metrics::label_error_rate;
use super::LayerSequence;
use crate::features::{FeatureSequence, FEATURE_DIM};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub hidden_dim: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    pub clip_norm: f64,
    pub seed: u64,
    /// Beam width used when scoring the validation set.
    pub beam_width: usize,
    /// Stop once validation LER reaches this value (None: fixed epoch count).
    pub early_stop_ler: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            hidden_dim: 128,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            batch_size: 16,
            clip_norm: 5.0,
            seed: 0,
            beam_width: 8,
            early_stop_ler: None,
        }
    }
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("training dataset is empty")]
    EmptyDataset,
    #[error("loss diverged to NaN at epoch {epoch}, batch {batch}")]
    Diverged { epoch: usize, batch: usize },
    #[error("infeasible sample {index}: {source}")]
    BadSample { index: usize, source: CtcError },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_ler: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: IdentifierModel,
    pub curve: Vec<EpochStats>,
    /// Epoch of the returned checkpoint (best validation LER when a
    /// validation set was supplied, else the final epoch).
    pub best_epoch: usize,
}

struct Adam {
    m: IdentifierModel,
    v: IdentifierModel,
    step: u64,
}

impl Adam {
    fn new(d_in: usize, d_h: usize) -> Adam {
        Adam {
            m: IdentifierModel::zeros(d_in, d_h),
            v: IdentifierModel::zeros(d_in, d_h),
            step: 0,
        }
    }

    fn update(&mut self, model: &mut IdentifierModel, grads: &IdentifierModel, cfg: &TrainConfig) {
        self.step += 1;
        let b1 = cfg.beta1;
        let b2 = cfg.beta2;
        let bias1 = 1.0 - b1.powi(self.step as i32);
        let bias2 = 1.0 - b2.powi(self.step as i32);
        let lr = cfg.learning_rate;
        let eps = cfg.epsilon;

        let apply = |p: &mut f64, g: f64, m: &mut f64, v: &mut f64| {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let m_hat = *m / bias1;
            let v_hat = *v / bias2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        };

        for g in 0..GATES {
            for ((p, gr), (m, v)) in model.wx[g]
                .iter_mut()
                .zip(grads.wx[g].iter())
                .zip(self.m.wx[g].iter_mut().zip(self.v.wx[g].iter_mut()))
            {
                apply(p, *gr, m, v);
            }
            for ((p, gr), (m, v)) in model.wh[g]
                .iter_mut()
                .zip(grads.wh[g].iter())
                .zip(self.m.wh[g].iter_mut().zip(self.v.wh[g].iter_mut()))
            {
                apply(p, *gr, m, v);
            }
            for ((p, gr), (m, v)) in model.b[g]
                .iter_mut()
                .zip(grads.b[g].iter())
                .zip(self.m.b[g].iter_mut().zip(self.v.b[g].iter_mut()))
            {
                apply(p, *gr, m, v);
            }
        }
        for ((p, gr), (m, v)) in model
            .w_out
            .iter_mut()
            .zip(grads.w_out.iter())
            .zip(self.m.w_out.iter_mut().zip(self.v.w_out.iter_mut()))
        {
            apply(p, *gr, m, v);
        }
        for ((p, gr), (m, v)) in model
            .b_out
            .iter_mut()
            .zip(grads.b_out.iter())
            .zip(self.m.b_out.iter_mut().zip(self.v.b_out.iter_mut()))
        {
            apply(p, *gr, m, v);
        }
    }
}

fn accumulate(into: &mut IdentifierModel, from: &IdentifierModel, scale: f64) {
    for g in 0..GATES {
        into.wx[g].zip_mut_with(&from.wx[g], |a, b| *a += scale * b);
        into.wh[g].zip_mut_with(&from.wh[g], |a, b| *a += scale * b);
        into.b[g].zip_mut_with(&from.b[g], |a, b| *a += scale * b);
    }
    into.w_out.zip_mut_with(&from.w_out, |a, b| *a += scale * b);
    into.b_out.zip_mut_with(&from.b_out, |a, b| *a += scale * b);
}

fn grad_norm(g: &IdentifierModel) -> f64 {
    g.flatten().iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn scale_params(g: &mut IdentifierModel, s: f64) {
    for gate in 0..GATES {
        g.wx[gate].mapv_inplace(|v| v * s);
        g.wh[gate].mapv_inplace(|v| v * s);
        g.b[gate].mapv_inplace(|v| v * s);
    }
    g.w_out.mapv_inplace(|v| v * s);
    g.b_out.mapv_inplace(|v| v * s);
}

/// Scores a model on a labeled corpus.
pub fn validation_ler(
    model: &IdentifierModel,
    corpus: &[(FeatureSequence, LayerSequence)],
    beam_width: usize,
) -> f64 {
    let preds: Vec<LayerSequence> = corpus
        .par_iter()
        .map(|(x, _)| match lstm_forward(model, x) {
            Ok(p) => beam_decode(&p, beam_width),
            Err(_) => Vec::new(),
        })
        .collect();
    let oracles: Vec<LayerSequence> = corpus.iter().map(|(_, z)| z.clone()).collect();
    label_error_rate(&preds, &oracles).expect("nonempty oracle sequences")
}

/// Trains an identifier. With a validation set the returned model is the
/// best-validation-LER checkpoint; otherwise the final-epoch weights.
pub fn train(
    dataset: &[(FeatureSequence, LayerSequence)],
    validation: Option<&[(FeatureSequence, LayerSequence)]>,
    cfg: &TrainConfig,
) -> Result<TrainOutcome, TrainError> {
    if dataset.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    // surface infeasible targets before the loop
    for (i, (x, z)) in dataset.iter().enumerate() {
        let need = super::ctc::min_frames(&super::labels_of(z));
        if need > x.len() {
            return Err(TrainError::BadSample {
                index: i,
                source: CtcError::Infeasible { need, have: x.len() },
            });
        }
    }

    let mut model = IdentifierModel::init(FEATURE_DIM, cfg.hidden_dim, cfg.seed);
    let mut adam = Adam::new(FEATURE_DIM, cfg.hidden_dim);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x7261_696e);
    let mut curve = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, IdentifierModel)> = None;

    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..dataset.len()).collect();
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;

        for (batch_no, batch) in order.chunks(cfg.batch_size.max(1)).enumerate() {
            let results: Vec<Result<(f64, IdentifierModel), CtcError>> = batch
                .par_iter()
                .map(|&i| {
                    let (x, z) = &dataset[i];
                    ctc_grad(&model, x, z)
                })
                .collect();

            let mut total = IdentifierModel::zeros(FEATURE_DIM, cfg.hidden_dim);
            let mut batch_loss = 0.0;
            for (pos, r) in results.into_iter().enumerate() {
                let (loss, grads) = r.map_err(|source| TrainError::BadSample {
                    index: batch[pos],
                    source,
                })?;
                if !loss.is_finite() {
                    return Err(TrainError::Diverged { epoch, batch: batch_no });
                }
                batch_loss += loss;
                accumulate(&mut total, &grads, 1.0 / batch.len() as f64);
            }
            epoch_loss += batch_loss;

            let norm = grad_norm(&total);
            if !norm.is_finite() {
                return Err(TrainError::Diverged { epoch, batch: batch_no });
            }
            if cfg.clip_norm > 0.0 && norm > cfg.clip_norm {
                scale_params(&mut total, cfg.clip_norm / norm);
            }
            adam.update(&mut model, &total, cfg);
        }

        let train_loss = epoch_loss / dataset.len() as f64;
        let val_ler = validation.map(|v| validation_ler(&model, v, cfg.beam_width));
        curve.push(EpochStats { epoch, train_loss, val_ler });

        if let Some(ler) = val_ler {
            let improved = best.as_ref().map(|(b, _, _)| ler < *b).unwrap_or(true);
            if improved {
                best = Some((ler, epoch, model.clone()));
            }
            if let Some(stop) = cfg.early_stop_ler {
                if ler <= stop {
                    break;
                }
            }
        }
    }

    let (model, best_epoch) = match best {
        Some((_, e, m)) => (m, e),
        None => {
            let last = curve.len().saturating_sub(1);
            (model, last)
        }
    };
    Ok(TrainOutcome { model, curve, best_epoch })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{extract, fit_stats, normalize, DEFAULT_KDD_CAP};
    use crate::gen::{generate, GenConfig};
    use crate::graph::layer_sequence_of;
    use crate::sim::{simulate, SimConfig};

    fn toy_corpus(count: usize, base_seed: u64) -> Vec<(FeatureSequence, LayerSequence)> {
        let mut raws = Vec::new();
        for i in 0..count {
            let cfg = GenConfig {
                seed: base_seed + i as u64,
                block_count_range: (2, 4),
                block_weights: (1.0, 0.0, 0.0),
                fc_threshold: 0,
                ..GenConfig::default()
            };
            let g = generate(&cfg).unwrap();
            let t = simulate(&g, &SimConfig::default(), base_seed + i as u64);
            raws.push((extract(&t), layer_sequence_of(&g)));
        }
        let stats = fit_stats(raws.iter().map(|(x, _)| x), DEFAULT_KDD_CAP);
        raws.into_iter()
            .map(|(x, z)| (normalize(&x, Some(&stats)).unwrap(), z))
            .collect()
    }

    #[test]
    fn loss_decreases_on_toy_corpus() {
        let corpus = toy_corpus(20, 500);
        let cfg = TrainConfig {
            epochs: 10,
            hidden_dim: 24,
            batch_size: 8,
            seed: 1,
            ..TrainConfig::default()
        };
        let out = train(&corpus, None, &cfg).unwrap();
        let first = out.curve.first().unwrap().train_loss;
        let last = out.curve.last().unwrap().train_loss;
        assert!(
            last < first,
            "loss should decrease over 10 epochs: first {first}, last {last}"
        );
        // strictly decreasing over the first epochs
        for w in out.curve.windows(2).take(9) {
            assert!(
                w[1].train_loss < w[0].train_loss,
                "epoch {} loss {} did not improve on {}",
                w[1].epoch,
                w[1].train_loss,
                w[0].train_loss
            );
        }
    }

    #[test]
    fn training_is_seed_deterministic() {
        let corpus = toy_corpus(6, 900);
        let cfg = TrainConfig {
            epochs: 2,
            hidden_dim: 12,
            batch_size: 4,
            seed: 9,
            ..TrainConfig::default()
        };
        let a = train(&corpus, None, &cfg).unwrap();
        let b = train(&corpus, None, &cfg).unwrap();
        assert_eq!(a.model, b.model);
        assert_eq!(a.curve.len(), b.curve.len());
        for (x, y) in a.curve.iter().zip(&b.curve) {
            assert_eq!(x.train_loss, y.train_loss);
        }
    }

    #[test]
    fn empty_dataset_rejected() {
        assert!(matches!(
            train(&[], None, &TrainConfig::default()),
            Err(TrainError::EmptyDataset)
        ));
    }
}
