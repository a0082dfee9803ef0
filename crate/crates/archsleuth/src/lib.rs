//! archsleuth reconstructs a neural network's architecture — layer sequence,
//! topology, and dimension sizes — from bus-level observations of its
//! inference run: kernel events, memory request traces, and PCIe copy sizes.
//!
//! The pipeline has three reconstruction steps on top of a synthetic trace
//! oracle:
//!
//! 1. per-kernel feature extraction and LSTM-CTC layer sequence
//!    identification ([`features`], [`identifier`]),
//! 2. layer topology reconstruction from read-after-write address patterns
//!    ([`topo`]),
//! 3. dimension estimation from bus volumes under per-kind constraints
//!    ([`dims`]).
//!
//! Training data comes from randomly generated computational graphs
//! ([`gen`]) lowered to traces by the simulator ([`sim`]). The `examples/`
//! directory has one runnable example per capability; the `archsleuth`
//! binary wires the same library calls into `gen`, `train`, `extract`,
//! `eval`, and `e2e` subcommands.

pub mod dims;
pub mod features;
pub mod gen;
pub mod graph;
pub mod identifier;
pub mod pipeline;
pub mod sim;
pub mod topo;
pub mod trace;

pub use graph::{layer_sequence_of, validate_graph, ComputationalGraph, DimensionSpec, LayerKind};
pub use trace::TraceBundle;
