//! Single-layer LSTM with an affine softmax head over the label alphabet.

use ndarray::{Array1, Array2, Axis};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use super::ALPHABET;
use crate::features::{FeatureSequence, FEATURE_DIM};

/// Gate order used throughout: input, forget, output, cell candidate.
pub const GATES: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct IdentifierModel {
    pub input_dim: usize,
    pub hidden_dim: usize,
    /// Per-gate input weights, hidden x input.
    pub wx: [Array2<f64>; GATES],
    /// Per-gate recurrent weights, hidden x hidden.
    pub wh: [Array2<f64>; GATES],
    /// Per-gate biases.
    pub b: [Array1<f64>; GATES],
    /// Output projection, alphabet x hidden.
    pub w_out: Array2<f64>,
    pub b_out: Array1<f64>,
    pub version: String,
}

pub const MODEL_VERSION: &str = "archsleuth-lstm-v1";

impl IdentifierModel {
    pub fn zeros(input_dim: usize, hidden_dim: usize) -> Self {
        IdentifierModel {
            input_dim,
            hidden_dim,
            wx: std::array::from_fn(|_| Array2::zeros((hidden_dim, input_dim))),
            wh: std::array::from_fn(|_| Array2::zeros((hidden_dim, hidden_dim))),
            b: std::array::from_fn(|_| Array1::zeros(hidden_dim)),
            w_out: Array2::zeros((ALPHABET, hidden_dim)),
            b_out: Array1::zeros(ALPHABET),
            version: MODEL_VERSION.to_string(),
        }
    }

    /// Seeded uniform init scaled by fan-in.
    pub fn init(input_dim: usize, hidden_dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m = Self::zeros(input_dim, hidden_dim);
        let mut fill = |a: &mut Array2<f64>| {
            let scale = 1.0 / (a.ncols() as f64).sqrt();
            for v in a.iter_mut() {
                *v = rng.gen_range(-scale..scale);
            }
        };
        for g in 0..GATES {
            fill(&mut m.wx[g]);
            fill(&mut m.wh[g]);
        }
        fill(&mut m.w_out);
        // forget-gate bias starts positive so early training retains state
        m.b[1].fill(1.0);
        m
    }

    /// Flat view of every parameter, in a fixed order. Used by the optimizer
    /// mirrors and by finite-difference checks.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for g in 0..GATES {
            out.extend(self.wx[g].iter());
            out.extend(self.wh[g].iter());
            out.extend(self.b[g].iter());
        }
        out.extend(self.w_out.iter());
        out.extend(self.b_out.iter());
        out
    }

    pub fn assign_from_flat(&mut self, flat: &[f64]) {
        let mut it = flat.iter().copied();
        for g in 0..GATES {
            for v in self.wx[g].iter_mut() {
                *v = it.next().expect("flat length");
            }
            for v in self.wh[g].iter_mut() {
                *v = it.next().expect("flat length");
            }
            for v in self.b[g].iter_mut() {
                *v = it.next().expect("flat length");
            }
        }
        for v in self.w_out.iter_mut() {
            *v = it.next().expect("flat length");
        }
        for v in self.b_out.iter_mut() {
            *v = it.next().expect("flat length");
        }
        assert!(it.next().is_none(), "flat vector longer than parameter count");
    }

    pub fn param_count(&self) -> usize {
        GATES * (self.hidden_dim * self.input_dim + self.hidden_dim * self.hidden_dim + self.hidden_dim)
            + ALPHABET * self.hidden_dim
            + ALPHABET
    }
}

/// Gradients mirror the model layout.
pub type LstmGrads = IdentifierModel;

/// Row-stochastic T x alphabet matrix of per-step label probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionDistribution {
    pub probs: Array2<f64>,
}

impl PredictionDistribution {
    pub fn steps(&self) -> usize {
        self.probs.nrows()
    }

    pub fn from_rows(rows: Vec<[f64; ALPHABET]>) -> Self {
        let t = rows.len();
        let mut probs = Array2::zeros((t, ALPHABET));
        for (i, row) in rows.into_iter().enumerate() {
            for (j, v) in row.into_iter().enumerate() {
                probs[(i, j)] = v;
            }
        }
        PredictionDistribution { probs }
    }
}

#[derive(Debug, Error)]
pub enum LstmError {
    #[error("input feature dimension {got} does not match model input dim {want}")]
    DimensionMismatch { got: usize, want: usize },
    #[error("sequence must contain at least one step")]
    EmptySequence,
}

pub(crate) struct ForwardCache {
    pub xs: Vec<Array1<f64>>,
    pub gates: Vec<[Array1<f64>; GATES]>, // activated i, f, o, g per step
    pub cs: Vec<Array1<f64>>,
    pub tanh_cs: Vec<Array1<f64>>,
    pub hs: Vec<Array1<f64>>,
    pub probs: Array2<f64>,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub(crate) fn forward_cached(
    m: &IdentifierModel,
    x: &FeatureSequence,
) -> Result<ForwardCache, LstmError> {
    if x.is_empty() {
        return Err(LstmError::EmptySequence);
    }
    if m.input_dim != FEATURE_DIM {
        return Err(LstmError::DimensionMismatch { got: FEATURE_DIM, want: m.input_dim });
    }
    let t_len = x.len();
    let h_dim = m.hidden_dim;
    let mut cache = ForwardCache {
        xs: Vec::with_capacity(t_len),
        gates: Vec::with_capacity(t_len),
        cs: Vec::with_capacity(t_len),
        tanh_cs: Vec::with_capacity(t_len),
        hs: Vec::with_capacity(t_len),
        probs: Array2::zeros((t_len, ALPHABET)),
    };
    let mut h = Array1::zeros(h_dim);
    let mut c: Array1<f64> = Array1::zeros(h_dim);
    for (t, f) in x.features.iter().enumerate() {
        let xv = Array1::from_iter(f.as_array());
        let mut acts: [Array1<f64>; GATES] = std::array::from_fn(|_| Array1::zeros(h_dim));
        for g in 0..GATES {
            let mut a = m.wx[g].dot(&xv) + m.wh[g].dot(&h) + &m.b[g];
            if g == 3 {
                a.mapv_inplace(f64::tanh);
            } else {
                a.mapv_inplace(sigmoid);
            }
            acts[g] = a;
        }
        let new_c = &acts[1] * &c + &acts[0] * &acts[3];
        let tanh_c = new_c.mapv(f64::tanh);
        let new_h = &acts[2] * &tanh_c;

        let logits = m.w_out.dot(&new_h) + &m.b_out;
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps = logits.mapv(|v| (v - max).exp());
        let sum: f64 = exps.sum();
        cache.probs.row_mut(t).assign(&(exps / sum));

        cache.xs.push(xv);
        cache.gates.push(acts);
        cache.cs.push(new_c.clone());
        cache.tanh_cs.push(tanh_c);
        cache.hs.push(new_h.clone());
        c = new_c;
        h = new_h;
    }
    Ok(cache)
}

/// Runs the recurrence and softmax head over a normalized feature sequence.
pub fn lstm_forward(
    m: &IdentifierModel,
    x: &FeatureSequence,
) -> Result<PredictionDistribution, LstmError> {
    Ok(PredictionDistribution { probs: forward_cached(m, x)?.probs })
}

/// Backpropagation through time given per-step logit gradients.
pub(crate) fn backward(
    m: &IdentifierModel,
    cache: &ForwardCache,
    dlogits: &Array2<f64>,
) -> LstmGrads {
    let t_len = cache.xs.len();
    let h_dim = m.hidden_dim;
    let mut grads = IdentifierModel::zeros(m.input_dim, h_dim);

    let mut dh_next: Array1<f64> = Array1::zeros(h_dim);
    let mut dc_next: Array1<f64> = Array1::zeros(h_dim);

    for t in (0..t_len).rev() {
        let du = dlogits.row(t).to_owned();
        grads.b_out += &du;
        // w_out gradient: du (A) outer h (H)
        let h = &cache.hs[t];
        grads
            .w_out
            .zip_mut_with(&du.view().insert_axis(Axis(1)).dot(&h.view().insert_axis(Axis(0))), |a, b| {
                *a += b
            });

        let mut dh = m.w_out.t().dot(&du) + &dh_next;
        let [i_g, f_g, o_g, g_g] = &cache.gates[t];
        let tanh_c = &cache.tanh_cs[t];

        let do_ = &dh * tanh_c;
        let dc = &dh * o_g * &tanh_c.mapv(|v| 1.0 - v * v) + &dc_next;

        let c_prev: Array1<f64> =
            if t == 0 { Array1::zeros(h_dim) } else { cache.cs[t - 1].clone() };
        let di = &dc * g_g;
        let dg = &dc * i_g;
        let df = &dc * &c_prev;

        let da_i = &di * i_g * &i_g.mapv(|v| 1.0 - v);
        let da_f = &df * f_g * &f_g.mapv(|v| 1.0 - v);
        let da_o = &do_ * o_g * &o_g.mapv(|v| 1.0 - v);
        let da_g = &dg * &g_g.mapv(|v| 1.0 - v * v);

        let h_prev: Array1<f64> =
            if t == 0 { Array1::zeros(h_dim) } else { cache.hs[t - 1].clone() };
        let x = &cache.xs[t];

        dh = Array1::zeros(h_dim);
        for (gi, da) in [&da_i, &da_f, &da_o, &da_g].into_iter().enumerate() {
            grads.wx[gi]
                .zip_mut_with(&da.view().insert_axis(Axis(1)).dot(&x.view().insert_axis(Axis(0))), |a, b| *a += b);
            grads.wh[gi].zip_mut_with(
                &da.view().insert_axis(Axis(1)).dot(&h_prev.view().insert_axis(Axis(0))),
                |a, b| *a += b,
            );
            grads.b[gi] += da;
            dh += &m.wh[gi].t().dot(da);
        }

        dc_next = &dc * f_g;
        dh_next = dh;
    }
    grads
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::KernelFeature;

    fn seq(rows: usize, seed: u64) -> FeatureSequence {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let features = (0..rows)
            .map(|_| {
                let v: [f64; FEATURE_DIM] = std::array::from_fn(|_| rng.gen_range(-1.0..1.0));
                KernelFeature {
                    exec_cycles: v[0],
                    read_bytes: v[1],
                    write_bytes: v[2],
                    read_write_ratio: v[3],
                    input_write_ratio: v[4],
                    dependency_distance: v[5],
                }
            })
            .collect();
        FeatureSequence { features, stats: None, normalized: true }
    }

    #[test]
    fn zero_weights_give_uniform_rows() {
        let m = IdentifierModel::zeros(FEATURE_DIM, 16);
        let p = lstm_forward(&m, &seq(4, 1)).unwrap();
        for row in p.probs.rows() {
            for v in row {
                assert!((v - 1.0 / ALPHABET as f64).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn single_step_is_row_stochastic() {
        let m = IdentifierModel::init(FEATURE_DIM, 8, 3);
        let p = lstm_forward(&m, &seq(1, 2)).unwrap();
        assert_eq!(p.probs.nrows(), 1);
        assert!((p.probs.row(0).sum() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn random_model_rows_sum_to_one() {
        let m = IdentifierModel::init(FEATURE_DIM, 32, 7);
        let p = lstm_forward(&m, &seq(9, 5)).unwrap();
        for row in p.probs.rows() {
            assert!((row.sum() - 1.0).abs() < 1e-9);
            assert!(row.iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn forward_is_deterministic() {
        let m = IdentifierModel::init(FEATURE_DIM, 16, 11);
        let x = seq(6, 4);
        assert_eq!(lstm_forward(&m, &x).unwrap(), lstm_forward(&m, &x).unwrap());
    }

    #[test]
    fn flatten_roundtrip() {
        let m = IdentifierModel::init(FEATURE_DIM, 8, 1);
        let flat = m.flatten();
        assert_eq!(flat.len(), m.param_count());
        let mut other = IdentifierModel::zeros(FEATURE_DIM, 8);
        other.assign_from_flat(&flat);
        assert_eq!(m.wx, other.wx);
        assert_eq!(m.w_out, other.w_out);
    }

    #[test]
    fn empty_sequence_rejected() {
        let m = IdentifierModel::zeros(FEATURE_DIM, 4);
        let empty = FeatureSequence { features: vec![], stats: None, normalized: true };
        assert!(matches!(lstm_forward(&m, &empty), Err(LstmError::EmptySequence)));
    }
}
