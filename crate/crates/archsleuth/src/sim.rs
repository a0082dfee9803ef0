//! Synthetic trace oracle.
//!
//! Lowers a computational graph to a kernel/request trace that reproduces
//! the architectural behavior a bus snooper observes on a real device:
//! feature maps are the only tensors that are written and later read, Add
//! and ReLU re-read nearly their whole input, Concat re-reads over half,
//! and consumers whose producer ran long ago find the data flushed.
//!
//! Everything not pinned by those published statistics (conv lowering
//! variants, magnitudes of the latency model) is config-driven.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::graph::{ComputationalGraph, LayerKind, LayerNode};
use crate::trace::{
    AccessKind, Allocation, KernelEvent, MemoryRequest, PcieDirection, PciePosition, PcieRecord,
    TensorClass, TraceBundle,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CacheModel {
    /// Consumers miss at a kind/reuse-distance-driven rate.
    ReuseThreshold,
    /// Full LRU over cache lines; miss rates are emergent.
    FullLru,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimConfig {
    pub line_size: u64,
    pub element_size: u64,
    pub cache_capacity_lines: u64,
    /// When set, weight tensors stay cached and produce no bus reads,
    /// mirroring libraries that prioritize weight reuse.
    pub weight_cache_priority: bool,
    /// Number of distinct conv lowerings in play (up to 7).
    pub conv_algo_count: usize,
    /// Clamp on kernels per conv lowering.
    pub kernels_per_conv_range: (u32, u32),
    /// Cycles per arithmetic op.
    pub lat_alpha: f64,
    /// Cycles per bus byte.
    pub lat_beta: f64,
    /// Multiplicative duration jitter amplitude (0 disables).
    pub jitter: f64,
    pub relu_add_missrate: f64,
    pub concat_missrate: f64,
    /// Short-reuse read miss rate for other kinds.
    pub default_missrate: f64,
    /// Read miss rate once the reuse distance exceeds the cache capacity.
    pub flushed_missrate: f64,
    pub cache_model: CacheModel,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            line_size: 32,
            element_size: 4,
            cache_capacity_lines: 8192,
            weight_cache_priority: true,
            conv_algo_count: 7,
            kernels_per_conv_range: (1, 4),
            lat_alpha: 0.05,
            lat_beta: 0.1,
            jitter: 0.05,
            relu_add_missrate: 0.98,
            concat_missrate: 0.55,
            default_missrate: 0.15,
            flushed_missrate: 0.99,
            cache_model: CacheModel::ReuseThreshold,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), String> {
        for (name, v) in [
            ("relu_add_missrate", self.relu_add_missrate),
            ("concat_missrate", self.concat_missrate),
            ("default_missrate", self.default_missrate),
            ("flushed_missrate", self.flushed_missrate),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(format!("{name} must lie in [0, 1]"));
            }
        }
        if self.line_size == 0 || self.element_size == 0 {
            return Err("line_size and element_size must be >= 1".into());
        }
        if self.conv_algo_count == 0 || self.conv_algo_count > CONV_PROFILES.len() {
            return Err(format!("conv_algo_count must lie in 1..={}", CONV_PROFILES.len()));
        }
        if self.kernels_per_conv_range.0 == 0
            || self.kernels_per_conv_range.0 > self.kernels_per_conv_range.1
        {
            return Err("kernels_per_conv_range must be a nonempty range >= 1".into());
        }
        Ok(())
    }
}

/// Conv lowering profiles: (kernel count, workspace read overhead as a
/// fraction of in+out bytes, latency factor). Single-kernel lowerings carry
/// no workspace traffic so their read volume stays bounded by the input.
const CONV_PROFILES: [(u32, f64, f64); 7] = [
    (1, 0.00, 1.00),
    (2, 0.05, 0.85),
    (2, 0.10, 0.80),
    (3, 0.08, 0.75),
    (3, 0.15, 0.70),
    (4, 0.12, 0.65),
    (1, 0.00, 1.10),
];

struct Allocator {
    cursor: u64,
    line: u64,
    allocations: Vec<Allocation>,
}

impl Allocator {
    fn new(line: u64) -> Self {
        Allocator { cursor: 0x1000_0000, line, allocations: Vec::new() }
    }

    fn alloc(&mut self, bytes: u64, class: TensorClass) -> usize {
        let lines = bytes.div_ceil(self.line).max(1);
        let a = Allocation { start: self.cursor, bytes: lines * self.line, class };
        self.cursor += lines * self.line;
        self.allocations.push(a);
        self.allocations.len() - 1
    }

    fn lines(&self, idx: usize) -> u64 {
        self.allocations[idx].bytes / self.line
    }

    fn line_addr(&self, idx: usize, line_no: u64) -> u64 {
        self.allocations[idx].start + line_no * self.line
    }
}

struct LruCache {
    capacity: usize,
    map: std::collections::HashMap<u64, u64>,
    clock: u64,
}

impl LruCache {
    fn new(capacity: u64) -> Self {
        LruCache { capacity: capacity as usize, map: Default::default(), clock: 0 }
    }

    /// Returns true on hit; inserts/refreshes either way.
    fn touch(&mut self, line: u64) -> bool {
        self.clock += 1;
        let hit = self.map.insert(line, self.clock).is_some();
        if self.map.len() > self.capacity {
            if let Some((&victim, _)) = self.map.iter().min_by_key(|(_, &t)| t) {
                self.map.remove(&victim);
            }
        }
        hit
    }
}

/// Where a layer's output lives and when it was produced.
#[derive(Clone, Copy)]
struct Produced {
    region: usize,
    /// Cumulative bus bytes at the end of the writing kernel.
    bus_bytes_at_write: u64,
}

pub fn simulate(g: &ComputationalGraph, cfg: &SimConfig, seed: u64) -> TraceBundle {
    debug_assert!(cfg.validate().is_ok());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut alloc = Allocator::new(cfg.line_size);
    let elem = cfg.element_size;

    let input_bytes = g.input_size() * elem;
    let input_region = alloc.alloc(input_bytes, TensorClass::Input);

    let mut produced: std::collections::HashMap<u64, Produced> = Default::default();
    let mut kernels: Vec<KernelEvent> = Vec::new();
    let mut cum_bus_bytes: u64 = 0;
    let mut clock: u64 = 0;
    let mut lru = LruCache::new(cfg.cache_capacity_lines);

    for node in &g.nodes {
        let preds = g.predecessors(node.id);
        let out_bytes = node.dims.n * node.dims.output_volume() * elem;
        let out_region = alloc.alloc(out_bytes, TensorClass::FeatureMap { layer_id: node.id });

        // Inputs this layer reads: (region, producer summary).
        let inputs: Vec<(usize, Option<Produced>)> = if preds.is_empty() {
            vec![(input_region, None)]
        } else {
            preds
                .iter()
                .map(|p| {
                    let pr = *produced.get(p).expect("producer scheduled earlier");
                    (pr.region, Some(pr))
                })
                .collect()
        };

        let (kernel_count, ws_frac, lat_factor) = plan_lowering(node, cfg, &mut rng);
        let in_bytes_total: u64 =
            inputs.iter().map(|(r, _)| alloc.allocations[*r].bytes).sum();
        let ws_bytes = (ws_frac * (in_bytes_total + out_bytes) as f64) as u64;
        let ws_region = (ws_bytes > 0)
            .then(|| alloc.alloc(ws_bytes, TensorClass::Workspace { layer_id: node.id }));

        let weight_region = (!cfg.weight_cache_priority)
            .then(|| weight_bytes(node, elem))
            .flatten()
            .map(|wb| alloc.alloc(wb, TensorClass::Weights { layer_id: node.id }));

        let ops_total = compute_ops(node) * lat_factor;

        for ki in 0..kernel_count {
            let index = kernels.len() as u32;
            let mut reads: Vec<u64> = Vec::new();
            let mut writes: Vec<u64> = Vec::new();

            if ki == 0 {
                // The first kernel of the lowering pulls the layer inputs.
                for (region, prod) in &inputs {
                    let n_lines = alloc.lines(*region);
                    match cfg.cache_model {
                        CacheModel::ReuseThreshold => {
                            let frac = read_fraction(node.kind, *prod, cum_bus_bytes, cfg);
                            let k = miss_lines(n_lines, frac);
                            for l in 0..k {
                                reads.push(alloc.line_addr(*region, l));
                            }
                        }
                        CacheModel::FullLru => {
                            for l in 0..n_lines {
                                let addr = alloc.line_addr(*region, l);
                                if !lru.touch(addr) {
                                    reads.push(addr);
                                }
                            }
                        }
                    }
                }
                if let Some(w) = weight_region {
                    // Cold parameter traffic; read-only, so never RAW.
                    for l in 0..alloc.lines(w) {
                        reads.push(alloc.line_addr(w, l));
                    }
                }
            }
            if let Some(ws) = ws_region {
                // Workspace traffic is read-only scratch data: reads of a
                // pristine region, so it never forms a cross-kernel RAW pair.
                let ws_lines = alloc.lines(ws);
                let share = kernel_count.saturating_sub(1).max(1) as u64;
                let (from, to) = if kernel_count == 1 {
                    (0, ws_lines)
                } else if ki == 0 {
                    (0, 0)
                } else {
                    let per = ws_lines / share;
                    let a = per * (ki as u64 - 1);
                    let b = if ki == kernel_count - 1 { ws_lines } else { per * ki as u64 };
                    (a, b)
                };
                for l in from..to {
                    let addr = alloc.line_addr(ws, l);
                    match cfg.cache_model {
                        CacheModel::ReuseThreshold => reads.push(addr),
                        CacheModel::FullLru => {
                            if !lru.touch(addr) {
                                reads.push(addr);
                            }
                        }
                    }
                }
            }
            if ki == kernel_count - 1 {
                let n_lines = alloc.lines(out_region);
                for l in 0..n_lines {
                    let addr = alloc.line_addr(out_region, l);
                    writes.push(addr);
                    if cfg.cache_model == CacheModel::FullLru {
                        lru.touch(addr);
                    }
                }
            }

            let bus_bytes = (reads.len() + writes.len()) as u64 * cfg.line_size;
            let ops_share = ops_total / kernel_count as f64;
            let mut duration = cfg.lat_alpha * ops_share + cfg.lat_beta * bus_bytes as f64;
            if cfg.jitter > 0.0 {
                duration *= 1.0 + rng.gen_range(-cfg.jitter..=cfg.jitter);
            }
            let duration = (duration.max(1.0)) as u64;
            let start = clock;
            let end = start + duration.max(1);
            clock = end;
            cum_bus_bytes += bus_bytes;

            let total_req = (reads.len() + writes.len()) as u64;
            let step = duration.max(1) as f64 / (total_req + 1) as f64;
            let ts_of = |i: u64| start + ((step * (i + 1) as f64) as u64).min(duration - 1);
            let mut requests = Vec::with_capacity(total_req as usize);
            for (i, addr) in reads.iter().enumerate() {
                requests.push(MemoryRequest {
                    address: *addr,
                    kind: AccessKind::Read,
                    timestamp: ts_of(i as u64),
                    kernel_index: index,
                });
            }
            for (j, addr) in writes.iter().enumerate() {
                requests.push(MemoryRequest {
                    address: *addr,
                    kind: AccessKind::Write,
                    timestamp: ts_of((reads.len() + j) as u64),
                    kernel_index: index,
                });
            }

            kernels.push(KernelEvent { index, start, end, layer_id: node.id, requests });
        }

        produced.insert(
            node.id,
            Produced { region: out_region, bus_bytes_at_write: cum_bus_bytes },
        );
    }

    let pcie = vec![
        PcieRecord {
            direction: PcieDirection::HostToDevice,
            bytes: input_bytes,
            position: PciePosition::BeforeFirstKernel,
        },
        PcieRecord {
            direction: PcieDirection::DeviceToHost,
            bytes: g.output_size() * elem,
            position: PciePosition::AfterLastKernel,
        },
    ];

    TraceBundle {
        kernels,
        pcie,
        line_size: cfg.line_size,
        element_size: elem,
        allocations: alloc.allocations,
    }
}

fn plan_lowering(node: &LayerNode, cfg: &SimConfig, rng: &mut ChaCha8Rng) -> (u32, f64, f64) {
    match node.kind {
        LayerKind::Conv => {
            let profile = CONV_PROFILES[rng.gen_range(0..cfg.conv_algo_count)];
            let (lo, hi) = cfg.kernels_per_conv_range;
            let count = profile.0.clamp(lo, hi);
            let ws = if count == 1 { 0.0 } else { profile.1 };
            (count, ws, profile.2)
        }
        _ => (1, 0.0, 1.0),
    }
}

/// Bus-visible fraction of a consumer's read of one input tensor.
fn read_fraction(
    consumer: LayerKind,
    producer: Option<Produced>,
    cum_bus_bytes: u64,
    cfg: &SimConfig,
) -> f64 {
    match consumer {
        LayerKind::Relu | LayerKind::Add => cfg.relu_add_missrate,
        LayerKind::Concat => cfg.concat_missrate,
        _ => match producer {
            // The network input is cold: every line misses.
            None => 1.0,
            Some(p) => {
                let between = cum_bus_bytes.saturating_sub(p.bus_bytes_at_write);
                if between > cfg.cache_capacity_lines * cfg.line_size {
                    cfg.flushed_missrate
                } else {
                    cfg.default_missrate
                }
            }
        },
    }
}

/// Lines actually read: ceil keeps the observed rate at or above the
/// configured one, and at least one line always reaches the bus.
fn miss_lines(n_lines: u64, fraction: f64) -> u64 {
    if n_lines == 0 || fraction <= 0.0 {
        return 0;
    }
    ((n_lines as f64 * fraction).ceil() as u64).clamp(1, n_lines)
}

fn weight_bytes(node: &LayerNode, elem: u64) -> Option<u64> {
    let d = &node.dims;
    match node.kind {
        LayerKind::Conv => Some(d.oc * d.ic * d.k * d.k * elem),
        LayerKind::Fc => Some(d.ic * d.oc * elem),
        LayerKind::Bn => Some(2 * d.ic * elem),
        _ => None,
    }
}

fn compute_ops(node: &LayerNode) -> f64 {
    let d = &node.dims;
    let n = d.n as f64;
    let out = d.output_volume() as f64;
    match node.kind {
        LayerKind::Conv => 2.0 * n * out * (d.ic * d.k * d.k) as f64,
        LayerKind::Fc => 2.0 * n * (d.ic * d.oc) as f64,
        LayerKind::Bn => 4.0 * n * out,
        LayerKind::Relu => n * out,
        LayerKind::Pool => n * out * (d.k * d.k) as f64,
        LayerKind::Add => 2.0 * n * out,
        LayerKind::Concat => n * out,
    }
}

/// Perturbs each kernel's read and write volumes by an independent factor
/// drawn uniformly from [1-pct, 1+pct], realized by dropping or duplicating
/// requests. Surviving requests keep their addresses; labels are untouched.
pub fn inject_noise(t: &TraceBundle, pct: f64, seed: u64) -> TraceBundle {
    assert!((0.0..=1.0).contains(&pct), "noise fraction must lie in [0, 1]");
    if pct == 0.0 {
        return t.clone();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = t.clone();
    for kernel in &mut out.kernels {
        let reads: Vec<usize> = kernel
            .requests
            .iter()
            .enumerate()
            .filter(|(_, r)| r.kind == AccessKind::Read)
            .map(|(i, _)| i)
            .collect();
        let writes: Vec<usize> = kernel
            .requests
            .iter()
            .enumerate()
            .filter(|(_, r)| r.kind == AccessKind::Write)
            .map(|(i, _)| i)
            .collect();

        let mut drop_set: Vec<usize> = Vec::new();
        let mut dup_set: Vec<MemoryRequest> = Vec::new();
        for group in [reads, writes] {
            if group.is_empty() {
                continue;
            }
            let n = group.len() as i64;
            let factor = 1.0 + rng.gen_range(-pct..=pct);
            // Truncation bounds the realized change by n*pct exactly.
            let delta = ((n as f64) * (factor - 1.0)).trunc() as i64;
            if delta < 0 {
                let mut idx = group.clone();
                idx.shuffle(&mut rng);
                drop_set.extend(idx.into_iter().take((-delta) as usize));
            } else {
                for _ in 0..delta {
                    let pick = *group.choose(&mut rng).unwrap();
                    dup_set.push(kernel.requests[pick]);
                }
            }
        }
        drop_set.sort_unstable();
        drop_set.dedup();
        let mut kept = Vec::with_capacity(kernel.requests.len());
        for (i, r) in kernel.requests.iter().enumerate() {
            if drop_set.binary_search(&i).is_err() {
                kept.push(*r);
            }
        }
        kept.extend(dup_set);
        kernel.requests = kept;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gen::{generate, GenConfig};
    use crate::graph::{DimensionSpec, LayerKind, LayerNode};
    use std::collections::HashMap;

    fn no_jitter() -> SimConfig {
        SimConfig { jitter: 0.0, ..SimConfig::default() }
    }

    fn single_relu(volume_side: u64, channels: u64) -> ComputationalGraph {
        let d = DimensionSpec {
            n: 1,
            ic: channels,
            ih: volume_side,
            iw: volume_side,
            oc: channels,
            oh: volume_side,
            ow: volume_side,
            k: 1,
            p: 0,
            s: 1,
        };
        ComputationalGraph {
            nodes: vec![LayerNode { id: 0, kind: LayerKind::Relu, dims: d }],
            edges: vec![],
        }
    }

    #[test]
    fn relu_volumes_track_input() {
        let g = single_relu(56, 64);
        let cfg = no_jitter();
        let t = simulate(&g, &cfg, 1);
        assert_eq!(t.kernels.len(), 1);
        let input_bytes = g.input_size() * cfg.element_size;
        let k = &t.kernels[0];
        let lines = input_bytes.div_ceil(cfg.line_size);
        let expected_read = miss_lines(lines, cfg.relu_add_missrate) * cfg.line_size;
        assert_eq!(k.read_bytes(cfg.line_size), expected_read);
        assert_eq!(k.write_bytes(cfg.line_size), lines * cfg.line_size);
        // the observed rate never falls below the configured one
        assert!(k.read_bytes(cfg.line_size) as f64 >= 0.98 * input_bytes as f64);
    }

    /// An add block: x -> conv -> bn -> relu -> conv -> bn -> add(x) -> relu.
    fn add_block_graph() -> ComputationalGraph {
        let cfg = GenConfig {
            seed: 3,
            block_count_range: (1, 1),
            block_weights: (0.0, 1.0, 0.0),
            ..GenConfig::default()
        };
        generate(&cfg).unwrap()
    }

    #[test]
    fn add_kernel_read_rate_exceeds_98_percent() {
        let g = add_block_graph();
        let cfg = no_jitter();
        let t = simulate(&g, &cfg, 5);
        let add_node = g.nodes.iter().find(|n| n.kind == LayerKind::Add).unwrap();
        let add_kernel =
            t.kernels.iter().find(|k| k.layer_id == add_node.id).expect("add kernel");
        let two_inputs = 2 * add_node.dims.n * add_node.dims.output_volume() * cfg.element_size;
        assert!(
            add_kernel.read_bytes(cfg.line_size) as f64 >= 0.98 * two_inputs as f64,
            "add reads {} of {}",
            add_kernel.read_bytes(cfg.line_size),
            two_inputs
        );
    }

    #[test]
    fn concat_kernel_read_rate_exceeds_half() {
        let cfg_g = GenConfig {
            seed: 8,
            block_count_range: (1, 1),
            block_weights: (0.0, 0.0, 1.0),
            ..GenConfig::default()
        };
        // first block is forced sequential; use two blocks so the concat lands
        let cfg_g = GenConfig { block_count_range: (2, 2), ..cfg_g };
        let g = generate(&cfg_g).unwrap();
        let concat = g.nodes.iter().find(|n| n.kind == LayerKind::Concat);
        let concat = match concat {
            Some(c) => c,
            None => return, // seed produced no concat; other seeds cover it
        };
        let cfg = no_jitter();
        let t = simulate(&g, &cfg, 5);
        let k = t.kernels.iter().find(|k| k.layer_id == concat.id).unwrap();
        let total_in = concat.dims.n * concat.dims.input_volume() * cfg.element_size;
        assert!(k.read_bytes(cfg.line_size) as f64 >= 0.50 * total_in as f64);
    }

    #[test]
    fn simulation_is_deterministic() {
        let g = add_block_graph();
        let cfg = SimConfig::default();
        assert_eq!(simulate(&g, &cfg, 99), simulate(&g, &cfg, 99));
    }

    #[test]
    fn raw_pairs_only_from_feature_maps() {
        for seed in 0..20u64 {
            let g = generate(&GenConfig { seed, ..GenConfig::default() }).unwrap();
            let t = simulate(&g, &SimConfig::default(), seed);
            let mut writers: HashMap<u64, u32> = HashMap::new();
            let class_of = |addr: u64| {
                t.allocations.iter().find(|a| a.contains(addr)).map(|a| a.class)
            };
            for k in &t.kernels {
                for r in &k.requests {
                    match r.kind {
                        AccessKind::Read => {
                            if writers.contains_key(&r.address) {
                                match class_of(r.address) {
                                    Some(TensorClass::FeatureMap { .. }) => {}
                                    other => panic!(
                                        "RAW pair on non-feature-map allocation {other:?} (seed {seed})"
                                    ),
                                }
                            }
                        }
                        AccessKind::Write => {
                            writers.insert(r.address, k.index);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn kernels_are_ordered_and_contiguous_per_layer() {
        let g = add_block_graph();
        let t = simulate(&g, &SimConfig::default(), 0);
        let mut last_end = 0;
        for (i, k) in t.kernels.iter().enumerate() {
            assert_eq!(k.index as usize, i);
            assert!(k.start >= last_end, "kernels must not overlap");
            assert!(k.end > k.start);
            last_end = k.end;
        }
        // kernels of one layer are contiguous, and layers appear in node order
        let mut seen = Vec::new();
        for k in &t.kernels {
            if seen.last() != Some(&k.layer_id) {
                assert!(!seen.contains(&k.layer_id), "layer kernels interleaved");
                seen.push(k.layer_id);
            }
        }
        let order: Vec<u64> = g.nodes.iter().map(|n| n.id).collect();
        assert_eq!(seen, order);
    }

    #[test]
    fn chain_write_volume_equals_consumer_input() {
        let cfg_g = GenConfig {
            seed: 21,
            block_weights: (1.0, 0.0, 0.0),
            fc_threshold: 0,
            ..GenConfig::default()
        };
        let g = generate(&cfg_g).unwrap();
        let cfg = no_jitter();
        let t = simulate(&g, &cfg, 0);
        let mut write_bytes: HashMap<u64, u64> = HashMap::new();
        for k in &t.kernels {
            *write_bytes.entry(k.layer_id).or_default() += k.write_bytes(cfg.line_size);
        }
        for &(a, b) in &g.edges {
            let consumer = g.node(b).unwrap();
            let logical_in = consumer.dims.n * consumer.dims.input_volume() * cfg.element_size;
            assert_eq!(write_bytes[&a], logical_in.div_ceil(cfg.line_size) * cfg.line_size);
        }
    }

    #[test]
    fn noise_zero_is_identity_and_bounds_hold() {
        let g = add_block_graph();
        let cfg = no_jitter();
        let t = simulate(&g, &cfg, 7);
        assert_eq!(inject_noise(&t, 0.0, 3), t);

        let noisy = inject_noise(&t, 0.05, 3);
        for (orig, pert) in t.kernels.iter().zip(&noisy.kernels) {
            for kind in [AccessKind::Read, AccessKind::Write] {
                let n0 = orig.requests.iter().filter(|r| r.kind == kind).count() as f64;
                let n1 = pert.requests.iter().filter(|r| r.kind == kind).count() as f64;
                if n0 > 0.0 {
                    assert!((n1 - n0).abs() <= n0 * 0.05 + 1e-9, "volume moved beyond 5%");
                }
            }
            assert_eq!(orig.layer_id, pert.layer_id);
        }
        // surviving request addresses are a subset of the original addresses
        let orig_addrs: std::collections::HashSet<u64> =
            t.kernels.iter().flat_map(|k| k.requests.iter().map(|r| r.address)).collect();
        for k in &noisy.kernels {
            for r in &k.requests {
                assert!(orig_addrs.contains(&r.address));
            }
        }
    }

    #[test]
    fn lru_cache_model_runs() {
        let g = add_block_graph();
        let cfg = SimConfig { cache_model: CacheModel::FullLru, ..no_jitter() };
        let t = simulate(&g, &cfg, 4);
        assert!(!t.kernels.is_empty());
        // writes still cover the full output of the final layer
        let last = g.nodes.last().unwrap();
        let k = t.kernels.iter().find(|k| k.layer_id == last.id).unwrap();
        let out_bytes = last.dims.n * last.dims.output_volume() * cfg.element_size;
        assert_eq!(k.write_bytes(cfg.line_size), out_bytes.div_ceil(cfg.line_size) * cfg.line_size);
    }
}
