//! Random computational-graph generation.
//!
//! Graphs are assembled block by block with two sources of randomness:
//! topological (which block type comes next, branch counts) and dimensional
//! (channels, kernel/stride/padding draws). The first layer's input and the
//! final output size are fixed by the config, as they would be on one
//! deployment platform.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{
    validate_graph, ComputationalGraph, DimensionSpec, LayerKind, LayerNode,
};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GenConfig {
    pub seed: u64,
    /// Inclusive [min, max] number of body blocks per graph.
    pub block_count_range: (u32, u32),
    /// Probabilities for (sequential, add, concat) blocks; must sum to 1.
    pub block_weights: (f64, f64, f64),
    /// Inclusive [2, max] branch count for concat blocks.
    pub concat_branch_range: (u32, u32),
    /// Feature-map volume (elements, batch excluded) below which FC blocks
    /// may be sampled. 0 disables FC entirely.
    pub fc_threshold: u64,
    pub channel_choices: Vec<u64>,
    pub kernel_choices: Vec<u64>,
    pub stride_choices: Vec<u64>,
    pub padding_choices: Vec<u64>,
    /// (N, IC, IH, IW) of the whole-network input.
    pub fixed_input: (u64, u64, u64, u64),
    pub fixed_output_classes: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            seed: 0,
            block_count_range: (3, 12),
            block_weights: (0.5, 0.3, 0.2),
            concat_branch_range: (2, 3),
            fc_threshold: 4096,
            // Chosen so that no two choices (or 4x multiples arising from a
            // halved/doubled spatial size) coincide; keeps the dimension
            // constraint system uniquely solvable at the backbone level.
            channel_choices: vec![24, 40, 56, 88, 120],
            kernel_choices: vec![1, 3, 5, 7],
            stride_choices: vec![1, 2],
            padding_choices: vec![0, 1, 2, 3],
            fixed_input: (1, 3, 32, 32),
            fixed_output_classes: 10,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<(), GenError> {
        let (a, b, c) = self.block_weights;
        if (a + b + c - 1.0).abs() > 1e-9 || a < 0.0 || b < 0.0 || c < 0.0 {
            return Err(GenError::Config("block_weights must be nonnegative and sum to 1".into()));
        }
        if self.block_count_range.0 > self.block_count_range.1 || self.block_count_range.0 == 0 {
            return Err(GenError::Config("block_count_range must be a nonempty range >= 1".into()));
        }
        if self.concat_branch_range.0 < 2 || self.concat_branch_range.0 > self.concat_branch_range.1
        {
            return Err(GenError::Config("concat_branch_range must start at >= 2".into()));
        }
        for (name, set) in [
            ("channel_choices", &self.channel_choices),
            ("kernel_choices", &self.kernel_choices),
            ("stride_choices", &self.stride_choices),
        ] {
            if set.is_empty() || set.iter().any(|&v| v == 0) {
                return Err(GenError::Config(format!("{name} must be nonempty with values >= 1")));
            }
        }
        if self.padding_choices.is_empty() {
            return Err(GenError::Config("padding_choices must be nonempty".into()));
        }
        let (n, ic, ih, iw) = self.fixed_input;
        if n == 0 || ic == 0 || ih == 0 || iw == 0 || self.fixed_output_classes == 0 {
            return Err(GenError::Config("fixed input/output sizes must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum GenError {
    #[error("invalid generator config: {0}")]
    Config(String),
    #[error("generation failed: {0}")]
    Unsatisfiable(String),
    #[error("dataset count must be >= 1")]
    EmptyDataset,
    #[error("split fraction must lie strictly between 0 and 1")]
    BadSplit,
}

/// Incremental builder: tracks the current tip and assigns ids in execution
/// order, so the stored node order is the schedule.
struct Builder {
    graph: ComputationalGraph,
    next_id: u64,
}

impl Builder {
    fn new() -> Self {
        Builder { graph: ComputationalGraph::new(), next_id: 0 }
    }

    fn push(&mut self, kind: LayerKind, dims: DimensionSpec, preds: &[u64]) -> u64 {
        let id = self.next_id;
        self.next_id += 1;
        self.graph.nodes.push(LayerNode { id, kind, dims });
        for &p in preds {
            self.graph.edges.push((p, id));
        }
        id
    }
}

/// Shape of the tensor at some point of the build, batch excluded.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Shape {
    c: u64,
    h: u64,
    w: u64,
}

impl Shape {
    fn volume(&self) -> u64 {
        self.c * self.h * self.w
    }
}

struct Gen<'a> {
    cfg: &'a GenConfig,
    rng: ChaCha8Rng,
    b: Builder,
    /// Set once an FC layer has been emitted; conv blocks are no longer valid.
    fc_mode: bool,
}

impl<'a> Gen<'a> {
    fn pick(&mut self, set: &[u64]) -> u64 {
        *set.choose(&mut self.rng).expect("validated nonempty")
    }

    fn dims_passthrough(&self, n: u64, s: Shape) -> DimensionSpec {
        DimensionSpec { n, ic: s.c, ih: s.h, iw: s.w, oc: s.c, oh: s.h, ow: s.w, k: 1, p: 0, s: 1 }
    }

    /// Samples conv dims with free padding, resampling padding (then kernel)
    /// until the window formula yields a positive output size.
    fn sample_conv(&mut self, n: u64, input: Shape, oc: u64) -> Result<DimensionSpec, GenError> {
        let mut kernels = self.cfg.kernel_choices.clone();
        kernels.shuffle(&mut self.rng);
        for k in kernels {
            for _ in 0..16 {
                let p = self.pick(&self.cfg.padding_choices);
                let s = self.pick(&self.cfg.stride_choices);
                if let (Some(oh), Some(ow)) = (
                    DimensionSpec::window_out(input.h, k, p, s),
                    DimensionSpec::window_out(input.w, k, p, s),
                ) {
                    if oh >= 1 && ow >= 1 {
                        return Ok(DimensionSpec {
                            n,
                            ic: input.c,
                            ih: input.h,
                            iw: input.w,
                            oc,
                            oh,
                            ow,
                            k,
                            p,
                            s,
                        });
                    }
                }
            }
        }
        Err(GenError::Unsatisfiable(format!(
            "no kernel in {:?} fits a {}x{} feature map with paddings {:?}",
            self.cfg.kernel_choices, input.h, input.w, self.cfg.padding_choices
        )))
    }

    /// Conv with "same" padding (odd kernel, p=(k-1)/2) and a given stride;
    /// used inside add/concat blocks so branch spatial sizes provably agree.
    fn sample_same_conv(
        &mut self,
        n: u64,
        input: Shape,
        oc: u64,
        stride: u64,
    ) -> Result<DimensionSpec, GenError> {
        let odd: Vec<u64> = self
            .cfg
            .kernel_choices
            .iter()
            .copied()
            .filter(|&k| k % 2 == 1 && self.cfg.padding_choices.contains(&((k - 1) / 2)) && k <= input.h + (k - 1))
            .collect();
        if odd.is_empty() {
            return Err(GenError::Unsatisfiable(
                "no odd kernel with matching padding available for branch blocks".into(),
            ));
        }
        let k = *odd.choose(&mut self.rng).unwrap();
        let p = (k - 1) / 2;
        let oh = DimensionSpec::window_out(input.h, k, p, stride)
            .ok_or_else(|| GenError::Unsatisfiable("kernel larger than padded feature map".into()))?;
        let ow = DimensionSpec::window_out(input.w, k, p, stride).unwrap();
        Ok(DimensionSpec { n, ic: input.c, ih: input.h, iw: input.w, oc, oh, ow, k, p, s: stride })
    }

    fn push_bn_relu(&mut self, n: u64, tip: u64, shape: Shape, with_bn: bool) -> u64 {
        let mut tip = tip;
        if with_bn {
            tip = self.b.push(LayerKind::Bn, self.dims_passthrough(n, shape), &[tip]);
        }
        self.b.push(LayerKind::Relu, self.dims_passthrough(n, shape), &[tip])
    }

    /// Plain sequential block; returns the new tip and shape.
    fn sequential_block(
        &mut self,
        n: u64,
        tip: Option<u64>,
        shape: Shape,
    ) -> Result<(u64, Shape), GenError> {
        let allow_fc = self.fc_mode
            || (shape.volume() < self.cfg.fc_threshold && self.cfg.fc_threshold > 0);
        let use_fc = self.fc_mode || (allow_fc && self.rng.gen_bool(0.5));
        let with_bn = self.rng.gen_bool(0.5);
        let preds: Vec<u64> = tip.into_iter().collect();

        if use_fc {
            self.fc_mode = true;
            let oc = self.pick(&self.cfg.channel_choices);
            let dims = DimensionSpec {
                n,
                ic: shape.volume(),
                ih: 1,
                iw: 1,
                oc,
                oh: 1,
                ow: 1,
                k: 1,
                p: 0,
                s: 1,
            };
            let fc = self.b.push(LayerKind::Fc, dims, &preds);
            let out = Shape { c: oc, h: 1, w: 1 };
            let tip = self.push_bn_relu(n, fc, out, with_bn);
            return Ok((tip, out));
        }

        let oc = self.pick(&self.cfg.channel_choices);
        let conv = self.sample_conv(n, shape, oc)?;
        let mut out = Shape { c: conv.oc, h: conv.oh, w: conv.ow };
        let conv_id = self.b.push(LayerKind::Conv, conv, &preds);
        let mut tip = self.push_bn_relu(n, conv_id, out, with_bn);

        // (Conv, ReLU, Pool) variant
        if self.rng.gen_bool(0.4) && out.h > 1 {
            if let Some(pool) = self.sample_pool(n, out) {
                out = Shape { c: pool.oc, h: pool.oh, w: pool.ow };
                tip = self.b.push(LayerKind::Pool, pool, &[tip]);
            }
        }
        Ok((tip, out))
    }

    fn sample_pool(&mut self, n: u64, input: Shape) -> Option<DimensionSpec> {
        for _ in 0..16 {
            let k = self.pick(&self.cfg.kernel_choices).min(input.h);
            let s = self.pick(&self.cfg.stride_choices);
            let p = 0;
            if let (Some(oh), Some(ow)) = (
                DimensionSpec::window_out(input.h, k, p, s),
                DimensionSpec::window_out(input.w, k, p, s),
            ) {
                if oh >= 1 && ow >= 1 && (oh < input.h || s == 1) {
                    return Some(DimensionSpec {
                        n,
                        ic: input.c,
                        ih: input.h,
                        iw: input.w,
                        oc: input.c,
                        oh,
                        ow,
                        k,
                        p,
                        s,
                    });
                }
            }
        }
        None
    }

    /// Residual block: same-padding main path, shortcut converging in an Add,
    /// trailing ReLU. The shortcut is scheduled after the main branch.
    fn add_block(&mut self, n: u64, tip: u64, shape: Shape) -> Result<(u64, Shape), GenError> {
        let stride = if shape.h > 1 { self.pick(&self.cfg.stride_choices) } else { 1 };
        let oc = self.pick(&self.cfg.channel_choices);
        let with_bn = self.rng.gen_bool(0.7);

        let conv1 = self.sample_same_conv(n, shape, oc, stride)?;
        let mid = Shape { c: conv1.oc, h: conv1.oh, w: conv1.ow };
        let c1 = self.b.push(LayerKind::Conv, conv1, &[tip]);
        let r1 = self.push_bn_relu(n, c1, mid, with_bn);

        let conv2 = self.sample_same_conv(n, mid, oc, 1)?;
        let out = Shape { c: conv2.oc, h: conv2.oh, w: conv2.ow };
        let mut main_tip = self.b.push(LayerKind::Conv, conv2, &[r1]);
        if with_bn {
            main_tip = self.b.push(LayerKind::Bn, self.dims_passthrough(n, out), &[main_tip]);
        }

        // Shortcut: identity when dims are unchanged, else a 1x1 conv.
        let shortcut_tip = if out == shape {
            tip
        } else {
            let sc = DimensionSpec {
                n,
                ic: shape.c,
                ih: shape.h,
                iw: shape.w,
                oc,
                oh: out.h,
                ow: out.w,
                k: 1,
                p: 0,
                s: stride,
            };
            debug_assert_eq!(DimensionSpec::window_out(shape.h, 1, 0, stride), Some(out.h));
            let mut sc_tip = self.b.push(LayerKind::Conv, sc, &[tip]);
            if with_bn {
                sc_tip = self.b.push(LayerKind::Bn, self.dims_passthrough(n, out), &[sc_tip]);
            }
            sc_tip
        };

        let add = self.b.push(
            LayerKind::Add,
            self.dims_passthrough(n, out),
            &[main_tip, shortcut_tip],
        );
        let relu = self.b.push(LayerKind::Relu, self.dims_passthrough(n, out), &[add]);
        Ok((relu, out))
    }

    /// Inception-style block: stride-1 branches concatenated along channels.
    fn concat_block(&mut self, n: u64, tip: u64, shape: Shape) -> Result<(u64, Shape), GenError> {
        let branches =
            self.rng.gen_range(self.cfg.concat_branch_range.0..=self.cfg.concat_branch_range.1);
        let mut tails = Vec::new();
        let mut c_sum = 0;
        for _ in 0..branches {
            let oc = self.pick(&self.cfg.channel_choices);
            let with_bn = self.rng.gen_bool(0.5);
            if self.rng.gen_bool(0.25) {
                // branch containing an add sub-block (stride 1)
                let conv1 = self.sample_same_conv(n, shape, oc, 1)?;
                let mid = Shape { c: oc, h: conv1.oh, w: conv1.ow };
                let c1 = self.b.push(LayerKind::Conv, conv1, &[tip]);
                let r1 = self.push_bn_relu(n, c1, mid, with_bn);
                let conv2 = self.sample_same_conv(n, mid, oc, 1)?;
                let mut main = self.b.push(LayerKind::Conv, conv2, &[r1]);
                if with_bn {
                    main = self.b.push(LayerKind::Bn, self.dims_passthrough(n, mid), &[main]);
                }
                let sc = DimensionSpec {
                    n,
                    ic: shape.c,
                    ih: shape.h,
                    iw: shape.w,
                    oc,
                    oh: mid.h,
                    ow: mid.w,
                    k: 1,
                    p: 0,
                    s: 1,
                };
                let sc_tip = self.b.push(LayerKind::Conv, sc, &[tip]);
                let add =
                    self.b.push(LayerKind::Add, self.dims_passthrough(n, mid), &[main, sc_tip]);
                let relu = self.b.push(LayerKind::Relu, self.dims_passthrough(n, mid), &[add]);
                tails.push((relu, mid));
                c_sum += oc;
            } else {
                let conv = self.sample_same_conv(n, shape, oc, 1)?;
                let bo = Shape { c: oc, h: conv.oh, w: conv.ow };
                let c1 = self.b.push(LayerKind::Conv, conv, &[tip]);
                let relu = self.push_bn_relu(n, c1, bo, with_bn);
                tails.push((relu, bo));
                c_sum += oc;
            }
        }
        let sp = tails[0].1;
        let out = Shape { c: c_sum, h: sp.h, w: sp.w };
        let dims = DimensionSpec {
            n,
            ic: c_sum,
            ih: sp.h,
            iw: sp.w,
            oc: c_sum,
            oh: sp.h,
            ow: sp.w,
            k: 1,
            p: 0,
            s: 1,
        };
        let pred_ids: Vec<u64> = tails.iter().map(|(t, _)| *t).collect();
        let concat = self.b.push(LayerKind::Concat, dims, &pred_ids);
        Ok((concat, out))
    }
}

/// Generates one random graph. Deterministic in `cfg` (including its seed).
pub fn generate(cfg: &GenConfig) -> Result<ComputationalGraph, GenError> {
    cfg.validate()?;
    let (n, ic, ih, iw) = cfg.fixed_input;
    let mut g = Gen {
        cfg,
        rng: ChaCha8Rng::seed_from_u64(cfg.seed),
        b: Builder::new(),
        fc_mode: false,
    };

    let blocks = g.rng.gen_range(cfg.block_count_range.0..=cfg.block_count_range.1);
    let mut shape = Shape { c: ic, h: ih, w: iw };
    let mut tip: Option<u64> = None;

    for _ in 0..blocks {
        let (w_seq, w_add, _w_conc) = cfg.block_weights;
        let draw: f64 = g.rng.gen();
        // The first block has no predecessor to branch from, and once the
        // graph has flattened into FC layers branching blocks are invalid;
        // both cases fall back to a sequential block.
        let branchy_ok = !g.fc_mode && tip.is_some();
        let (new_tip, new_shape) = if branchy_ok && draw >= w_seq && draw < w_seq + w_add {
            g.add_block(n, tip.unwrap(), shape)?
        } else if branchy_ok && draw >= w_seq + w_add {
            g.concat_block(n, tip.unwrap(), shape)?
        } else {
            g.sequential_block(n, tip, shape)?
        };
        tip = Some(new_tip);
        shape = new_shape;
    }

    // Head: pool down to 1x1 (when spatial extent remains) and a final FC
    // sized to the fixed class count.
    let mut tip = tip.expect("at least one block");
    if shape.h > 1 || shape.w > 1 {
        let dims = DimensionSpec {
            n,
            ic: shape.c,
            ih: shape.h,
            iw: shape.w,
            oc: shape.c,
            oh: 1,
            ow: 1,
            k: shape.h.max(shape.w),
            p: 0,
            s: 1,
        };
        // Non-square head windows cannot arise: every block preserves squareness.
        debug_assert_eq!(shape.h, shape.w);
        tip = g.b.push(LayerKind::Pool, dims, &[tip]);
        shape = Shape { c: shape.c, h: 1, w: 1 };
    }
    let fc = DimensionSpec {
        n,
        ic: shape.volume(),
        ih: 1,
        iw: 1,
        oc: cfg.fixed_output_classes,
        oh: 1,
        ow: 1,
        k: 1,
        p: 0,
        s: 1,
    };
    g.b.push(LayerKind::Fc, fc, &[tip]);

    let graph = g.b.graph;
    debug_assert!(validate_graph(&graph).is_empty(), "{:?}", validate_graph(&graph));
    Ok(graph)
}

/// Generates `count` graphs with per-graph seeds `cfg.seed + index`, then
/// partitions them with a seed-derived shuffle. Returns (train, validation).
pub fn generate_dataset(
    cfg: &GenConfig,
    count: usize,
    split: f64,
) -> Result<(Vec<ComputationalGraph>, Vec<ComputationalGraph>), GenError> {
    let (train_idx, val_idx) = split_indices(cfg.seed, count, split)?;
    let sample = |i: usize| {
        let mut c = cfg.clone();
        c.seed = cfg.seed.wrapping_add(i as u64);
        generate(&c)
    };
    let train = train_idx.iter().map(|&i| sample(i)).collect::<Result<Vec<_>, _>>()?;
    let val = val_idx.iter().map(|&i| sample(i)).collect::<Result<Vec<_>, _>>()?;
    Ok((train, val))
}

/// Deterministic split assignment used by both the in-memory dataset helper
/// and the CLI dataset writer.
pub fn split_indices(seed: u64, count: usize, split: f64) -> Result<(Vec<usize>, Vec<usize>), GenError> {
    if count == 0 {
        return Err(GenError::EmptyDataset);
    }
    if !(split > 0.0 && split < 1.0) {
        return Err(GenError::BadSplit);
    }
    let mut indices: Vec<usize> = (0..count).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_5911f7_u64);
    indices.shuffle(&mut rng);
    let n_train = ((count as f64) * split).round() as usize;
    let n_train = n_train.clamp(1, count.saturating_sub(1).max(1));
    let (train, val) = indices.split_at(n_train.min(count));
    let mut train = train.to_vec();
    let mut val = val.to_vec();
    train.sort_unstable();
    val.sort_unstable();
    Ok((train, val))
}
