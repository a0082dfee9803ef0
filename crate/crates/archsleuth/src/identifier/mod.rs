//! The layer-sequence identifier: an LSTM with a softmax head trained under
//! CTC loss and decoded by prefix beam search, plus the per-kernel MLP
//! baseline and the label-error-rate metric.

pub mod checkpoint;
pub mod ctc;
pub mod decode;
pub mod lstm;
pub mod metrics;
pub mod mlp;
pub mod train;

use crate::graph::LayerKind;

/// Output classes: one CTC blank (index 0) plus the seven layer kinds.
pub const ALPHABET: usize = 8;
pub const BLANK: usize = 0;

/// A predicted or oracle run of layer kinds. Blank never appears here; it
/// exists only inside CTC alignments.
pub type LayerSequence = Vec<LayerKind>;

pub fn label_of(kind: LayerKind) -> usize {
    1 + LayerKind::ALL.iter().position(|k| *k == kind).expect("kind in table")
}

pub fn kind_of(label: usize) -> Option<LayerKind> {
    if label == BLANK {
        None
    } else {
        LayerKind::ALL.get(label - 1).copied()
    }
}

pub fn labels_of(seq: &[LayerKind]) -> Vec<usize> {
    seq.iter().map(|k| label_of(*k)).collect()
}

pub use ctc::{ctc_grad, ctc_loss, CtcError};
pub use decode::{beam_decode, greedy_decode};
pub use lstm::{lstm_forward, IdentifierModel, PredictionDistribution};
pub use metrics::{edit_distance, label_error_rate};
pub use mlp::{mlp_predict, MlpModel};
pub use train::{train, TrainConfig, TrainError, TrainOutcome};
