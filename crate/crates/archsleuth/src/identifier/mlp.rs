//! Per-kernel MLP baseline: classifies each kernel independently, then
//! merges consecutive identical predictions into one layer. No inter-layer
//! context reaches this model; comparing it against the LSTM-CTC identifier
//! quantifies how much the layer context contributes.
//!
//! The merge rule is favorable to the baseline: genuinely adjacent layers of
//! the same kind collapse into one, and the baseline is not charged for it.

use ndarray::{Array1, Array2, Axis};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::train::TrainConfig;
use super::LayerSequence;
use crate::features::{FeatureSequence, FEATURE_DIM};
use crate::graph::LayerKind;

/// Seven output classes, one per layer kind; no blank.
pub const MLP_CLASSES: usize = 7;

#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
    pub w3: Array2<f64>,
    pub b3: Array1<f64>,
}

impl MlpModel {
    pub fn init(hidden: usize, seed: u64) -> MlpModel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut mk = |rows: usize, cols: usize| {
            let scale = 1.0 / (cols as f64).sqrt();
            Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-scale..scale))
        };
        MlpModel {
            w1: mk(hidden, FEATURE_DIM),
            b1: Array1::zeros(hidden),
            w2: mk(hidden, hidden),
            b2: Array1::zeros(hidden),
            w3: mk(MLP_CLASSES, hidden),
            b3: Array1::zeros(MLP_CLASSES),
        }
    }

    pub fn hidden_dim(&self) -> usize {
        self.b1.len()
    }

    fn logits(&self, x: &Array1<f64>) -> (Array1<f64>, Array1<f64>, Array1<f64>) {
        let h1 = (self.w1.dot(x) + &self.b1).mapv(|v| v.max(0.0));
        let h2 = (self.w2.dot(&h1) + &self.b2).mapv(|v| v.max(0.0));
        let u = self.w3.dot(&h2) + &self.b3;
        (h1, h2, u)
    }

    pub fn predict_kernel(&self, feature: [f64; FEATURE_DIM]) -> LayerKind {
        let x = Array1::from_iter(feature);
        let (_, _, u) = self.logits(&x);
        let arg = u
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc })
            .0;
        LayerKind::ALL[arg]
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut v = Vec::new();
        v.extend(self.w1.iter());
        v.extend(self.b1.iter());
        v.extend(self.w2.iter());
        v.extend(self.b2.iter());
        v.extend(self.w3.iter());
        v.extend(self.b3.iter());
        v
    }

    pub fn assign_from_flat(&mut self, flat: &[f64]) {
        let mut it = flat.iter().copied();
        for arr in [&mut self.w1, &mut self.w2, &mut self.w3] {
            for v in arr.iter_mut() {
                *v = it.next().expect("flat length");
            }
        }
        for arr in [&mut self.b1, &mut self.b2, &mut self.b3] {
            for v in arr.iter_mut() {
                *v = it.next().expect("flat length");
            }
        }
        assert!(it.next().is_none());
    }
}

fn class_index(kind: LayerKind) -> usize {
    LayerKind::ALL.iter().position(|k| *k == kind).unwrap()
}

/// Cross-entropy gradient for one kernel sample.
fn sample_grad(m: &MlpModel, x: [f64; FEATURE_DIM], label: usize) -> (f64, MlpModel) {
    let xv = Array1::from_iter(x);
    let (h1, h2, u) = m.logits(&xv);
    let max = u.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps = u.mapv(|v| (v - max).exp());
    let sum: f64 = exps.sum();
    let probs = exps / sum;
    let loss = -(probs[label].max(1e-300)).ln();

    let mut du = probs;
    du[label] -= 1.0;

    let mut g = MlpModel {
        w1: Array2::zeros(m.w1.dim()),
        b1: Array1::zeros(m.b1.len()),
        w2: Array2::zeros(m.w2.dim()),
        b2: Array1::zeros(m.b2.len()),
        w3: Array2::zeros(m.w3.dim()),
        b3: Array1::zeros(m.b3.len()),
    };
    g.w3 = du.view().insert_axis(Axis(1)).dot(&h2.view().insert_axis(Axis(0)));
    g.b3 = du.clone();
    let dh2 = m.w3.t().dot(&du) * h2.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
    g.w2 = dh2.view().insert_axis(Axis(1)).dot(&h1.view().insert_axis(Axis(0)));
    g.b2 = dh2.clone();
    let dh1 = m.w2.t().dot(&dh2) * h1.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
    g.w1 = dh1.view().insert_axis(Axis(1)).dot(&xv.view().insert_axis(Axis(0)));
    g.b1 = dh1;
    (loss, g)
}

/// Trains the per-kernel classifier with Adam over shuffled mini-batches.
/// `samples` pairs one normalized kernel feature with its owning layer kind.
pub fn train_mlp(
    samples: &[([f64; FEATURE_DIM], LayerKind)],
    hidden: usize,
    cfg: &TrainConfig,
) -> MlpModel {
    assert!(!samples.is_empty(), "mlp training set must be nonempty");
    let mut model = MlpModel::init(hidden, cfg.seed);
    let mut flat_m = vec![0.0; model.flatten().len()];
    let mut flat_v = vec![0.0; flat_m.len()];
    let mut step = 0u64;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x6d6c70);

    for _epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..samples.len()).collect();
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size.max(1)) {
            let grads: Vec<(f64, MlpModel)> = batch
                .par_iter()
                .map(|&i| sample_grad(&model, samples[i].0, class_index(samples[i].1)))
                .collect();
            let mut total = vec![0.0; flat_m.len()];
            for (_, g) in &grads {
                for (t, v) in total.iter_mut().zip(g.flatten()) {
                    *t += v / batch.len() as f64;
                }
            }
            step += 1;
            let bias1 = 1.0 - cfg.beta1.powi(step as i32);
            let bias2 = 1.0 - cfg.beta2.powi(step as i32);
            let mut params = model.flatten();
            for i in 0..params.len() {
                flat_m[i] = cfg.beta1 * flat_m[i] + (1.0 - cfg.beta1) * total[i];
                flat_v[i] = cfg.beta2 * flat_v[i] + (1.0 - cfg.beta2) * total[i] * total[i];
                let m_hat = flat_m[i] / bias1;
                let v_hat = flat_v[i] / bias2;
                params[i] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
            }
            model.assign_from_flat(&params);
        }
    }
    model
}

/// Per-kernel argmax kinds with consecutive duplicates merged.
pub fn mlp_predict(m: &MlpModel, x: &FeatureSequence) -> LayerSequence {
    let kinds: Vec<LayerKind> =
        x.features.iter().map(|f| m.predict_kernel(f.as_array())).collect();
    collapse_kernel_predictions(&kinds)
}

/// Merge rule shared by the baseline and by oracle-assisted tests.
pub fn collapse_kernel_predictions(kinds: &[LayerKind]) -> LayerSequence {
    let mut out = Vec::new();
    for &k in kinds {
        if out.last() != Some(&k) {
            out.push(k);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::KernelFeature;

    #[test]
    fn collapse_merges_consecutive_duplicates() {
        use LayerKind::*;
        assert_eq!(
            collapse_kernel_predictions(&[Conv, Conv, Conv, Bn, Relu, Relu]),
            vec![Conv, Bn, Relu]
        );
        assert!(collapse_kernel_predictions(&[]).is_empty());
    }

    #[test]
    fn perfect_kernel_predictions_recover_chain_sequence() {
        // a chain trace where each layer lowers to a run of kernels
        use LayerKind::*;
        let per_kernel = [Conv, Conv, Bn, Relu, Pool, Fc];
        assert_eq!(
            collapse_kernel_predictions(&per_kernel),
            vec![Conv, Bn, Relu, Pool, Fc]
        );
    }

    #[test]
    fn untrained_model_still_yields_bounded_ler() {
        let m = MlpModel::init(16, 3);
        let features: Vec<KernelFeature> = (0..5)
            .map(|i| KernelFeature {
                exec_cycles: i as f64,
                read_bytes: 1.0,
                write_bytes: 1.0,
                read_write_ratio: 1.0,
                input_write_ratio: 1.0,
                dependency_distance: 1.0,
            })
            .collect();
        let fs = FeatureSequence { features, stats: None, normalized: true };
        let pred = mlp_predict(&m, &fs);
        assert!(pred.len() <= 5);
    }

    #[test]
    fn training_separates_an_easy_two_class_problem() {
        let mut samples = Vec::new();
        for i in 0..200 {
            let v = if i % 2 == 0 { 1.0 } else { -1.0 };
            let kind = if i % 2 == 0 { LayerKind::Conv } else { LayerKind::Relu };
            samples.push(([v, v, -v, v, 0.5 * v, -0.5 * v], kind));
        }
        let cfg = TrainConfig { epochs: 30, batch_size: 32, seed: 4, ..TrainConfig::default() };
        let m = train_mlp(&samples, 16, &cfg);
        let correct = samples
            .iter()
            .filter(|(x, k)| m.predict_kernel(*x) == *k)
            .count();
        assert!(correct as f64 / samples.len() as f64 > 0.95);
    }
}
