//! Per-kernel feature extraction.
//!
//! Each kernel becomes a six-dimension tuple: duration, bus read and write
//! volumes, the read/write ratio, the ratio of the inferred input volume to
//! the write volume, and the dependency distance to the farthest kernel
//! whose writes this kernel re-reads.

use std::collections::HashMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::trace::{AccessKind, TraceBundle};

pub const FEATURE_DIM: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelFeature {
    /// Kernel duration in cycles.
    pub exec_cycles: f64,
    /// Bus read volume in bytes.
    pub read_bytes: f64,
    /// Bus write volume in bytes.
    pub write_bytes: f64,
    /// read_bytes / write_bytes (write floor of one line keeps it finite).
    pub read_write_ratio: f64,
    /// input volume / write_bytes, where the input volume is the previous
    /// kernel's write volume (the host-to-device copy for the first kernel).
    pub input_write_ratio: f64,
    /// Max kernel-index distance to a read-after-write producer; 0 if none.
    pub dependency_distance: f64,
}

impl KernelFeature {
    pub fn as_array(&self) -> [f64; FEATURE_DIM] {
        [
            self.exec_cycles,
            self.read_bytes,
            self.write_bytes,
            self.read_write_ratio,
            self.input_write_ratio,
            self.dependency_distance,
        ]
    }

    fn from_array(v: [f64; FEATURE_DIM]) -> KernelFeature {
        KernelFeature {
            exec_cycles: v[0],
            read_bytes: v[1],
            write_bytes: v[2],
            read_write_ratio: v[3],
            input_write_ratio: v[4],
            dependency_distance: v[5],
        }
    }

    /// 3-D projection (duration, R/W ratio, I/O ratio) used by the scatter
    /// diagnostic of per-kernel separability.
    pub fn scatter_projection(&self) -> [f64; 3] {
        [self.exec_cycles, self.read_write_ratio, self.input_write_ratio]
    }
}

/// Per-dimension standardization parameters, fitted on the training corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: [f64; FEATURE_DIM],
    pub std: [f64; FEATURE_DIM],
    /// Dependency distances are clipped here before standardization.
    pub kdd_cap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSequence {
    pub features: Vec<KernelFeature>,
    /// Stats used for normalization; present once normalized.
    pub stats: Option<NormStats>,
    pub normalized: bool,
}

impl FeatureSequence {
    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }
}

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("sequence is already normalized; normalize applies exactly once")]
    AlreadyNormalized,
    #[error("feature file parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
}

/// Extracts the raw (un-normalized) feature sequence of a trace.
pub fn extract(t: &TraceBundle) -> FeatureSequence {
    let line = t.line_size as f64;
    let kdd = compute_all_kdd(t);
    let h2d = t.host_to_device_bytes().unwrap_or(0) as f64;

    let mut features = Vec::with_capacity(t.kernels.len());
    let mut prev_write = h2d;
    for k in &t.kernels {
        let r_v = k.read_bytes(t.line_size) as f64;
        let w_v = k.write_bytes(t.line_size) as f64;
        let denom = w_v.max(line);
        features.push(KernelFeature {
            exec_cycles: (k.end - k.start) as f64,
            read_bytes: r_v,
            write_bytes: w_v,
            read_write_ratio: r_v / denom,
            input_write_ratio: prev_write / denom,
            dependency_distance: kdd[k.index as usize] as f64,
        });
        prev_write = w_v;
    }
    FeatureSequence { features, stats: None, normalized: false }
}

/// Dependency distance of one kernel: the maximum index gap to an earlier
/// kernel whose written address this kernel reads.
pub fn compute_kdd(t: &TraceBundle, kernel_index: usize) -> u64 {
    compute_all_kdd(t)[kernel_index]
}

fn compute_all_kdd(t: &TraceBundle) -> Vec<u64> {
    let mut last_writer: HashMap<u64, u32> = HashMap::new();
    let mut out = Vec::with_capacity(t.kernels.len());
    for k in &t.kernels {
        // Reads see the map as of the previous kernel, so request order
        // within a kernel cannot matter.
        let mut best = 0u64;
        for r in k.requests.iter().filter(|r| r.kind == AccessKind::Read) {
            if let Some(&w) = last_writer.get(&r.address) {
                best = best.max((k.index - w) as u64);
            }
        }
        for r in k.requests.iter().filter(|r| r.kind == AccessKind::Write) {
            last_writer.insert(r.address, k.index);
        }
        out.push(best);
    }
    out
}

/// log1p on the volume-like dimensions, cap on the dependency distance.
fn pre_transform(raw: [f64; FEATURE_DIM], kdd_cap: f64) -> [f64; FEATURE_DIM] {
    [
        raw[0].ln_1p(),
        raw[1].ln_1p(),
        raw[2].ln_1p(),
        raw[3],
        raw[4],
        raw[5].min(kdd_cap),
    ]
}

/// Fits normalization statistics over a training corpus.
pub fn fit_stats<'a>(
    sequences: impl IntoIterator<Item = &'a FeatureSequence>,
    kdd_cap: f64,
) -> NormStats {
    let mut sum = [0.0; FEATURE_DIM];
    let mut sum_sq = [0.0; FEATURE_DIM];
    let mut count = 0.0;
    for seq in sequences {
        assert!(!seq.normalized, "stats must be fitted on raw features");
        for f in &seq.features {
            let v = pre_transform(f.as_array(), kdd_cap);
            for d in 0..FEATURE_DIM {
                sum[d] += v[d];
                sum_sq[d] += v[d] * v[d];
            }
            count += 1.0;
        }
    }
    let mut mean = [0.0; FEATURE_DIM];
    let mut std = [1.0; FEATURE_DIM];
    if count > 0.0 {
        for d in 0..FEATURE_DIM {
            mean[d] = sum[d] / count;
            let var = (sum_sq[d] / count - mean[d] * mean[d]).max(0.0);
            std[d] = var.sqrt();
        }
    }
    NormStats { mean, std, kdd_cap }
}

/// Standardizes a raw sequence. With `stats` of the training set the result
/// is comparable across corpora; without, stats are fitted on the sequence
/// itself. Zero-variance dimensions are centered only.
pub fn normalize(
    fs: &FeatureSequence,
    stats: Option<&NormStats>,
) -> Result<FeatureSequence, FeatureError> {
    if fs.normalized {
        return Err(FeatureError::AlreadyNormalized);
    }
    let stats = match stats {
        Some(s) => s.clone(),
        None => fit_stats([fs], DEFAULT_KDD_CAP),
    };
    let features = fs
        .features
        .iter()
        .map(|f| {
            let v = pre_transform(f.as_array(), stats.kdd_cap);
            let mut out = [0.0; FEATURE_DIM];
            for d in 0..FEATURE_DIM {
                let centered = v[d] - stats.mean[d];
                out[d] = if stats.std[d] > 0.0 { centered / stats.std[d] } else { centered };
            }
            KernelFeature::from_array(out)
        })
        .collect();
    Ok(FeatureSequence { features, stats: Some(stats), normalized: true })
}

pub const DEFAULT_KDD_CAP: f64 = 64.0;

/// Versioned text format: header, stats line, one kernel per line with six
/// tab-separated decimal fields.
pub fn to_feature_text(fs: &FeatureSequence) -> String {
    let mut out = String::from("#features v1\n");
    match &fs.stats {
        None => out.push_str("#stats none\n"),
        Some(s) => {
            out.push_str("#stats");
            for d in 0..FEATURE_DIM {
                write!(out, "\t{}\t{}", s.mean[d], s.std[d]).unwrap();
            }
            write!(out, "\t{}", s.kdd_cap).unwrap();
            out.push('\n');
        }
    }
    for f in &fs.features {
        let v = f.as_array();
        writeln!(out, "{}\t{}\t{}\t{}\t{}\t{}", v[0], v[1], v[2], v[3], v[4], v[5]).unwrap();
    }
    out
}

pub fn from_feature_text(text: &str) -> Result<FeatureSequence, FeatureError> {
    let parse_err = |line: usize, message: &str| FeatureError::Parse {
        line,
        message: message.to_string(),
    };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == "#features v1" => {}
        _ => return Err(parse_err(1, "expected `#features v1` header")),
    }
    let stats = match lines.next() {
        Some((_, s)) if s.trim() == "#stats none" => None,
        Some((i, s)) => {
            let fields: Vec<&str> = s.split_whitespace().collect();
            if fields.first() != Some(&"#stats") || fields.len() != 2 * FEATURE_DIM + 2 {
                return Err(parse_err(i + 1, "malformed stats line"));
            }
            let nums: Option<Vec<f64>> = fields[1..].iter().map(|v| v.parse().ok()).collect();
            let nums = nums.ok_or_else(|| parse_err(i + 1, "malformed stats number"))?;
            let mut mean = [0.0; FEATURE_DIM];
            let mut std = [0.0; FEATURE_DIM];
            for d in 0..FEATURE_DIM {
                mean[d] = nums[2 * d];
                std[d] = nums[2 * d + 1];
            }
            Some(NormStats { mean, std, kdd_cap: nums[2 * FEATURE_DIM] })
        }
        None => return Err(parse_err(2, "missing stats line")),
    };
    let mut features = Vec::new();
    for (i, raw) in lines {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let nums: Option<Vec<f64>> = line.split('\t').map(|v| v.parse().ok()).collect();
        let nums = nums.filter(|v| v.len() == FEATURE_DIM).ok_or_else(|| {
            parse_err(i + 1, "expected 6 tab-separated decimal fields")
        })?;
        features.push(KernelFeature::from_array([
            nums[0], nums[1], nums[2], nums[3], nums[4], nums[5],
        ]));
    }
    let normalized = stats.is_some();
    Ok(FeatureSequence { features, stats, normalized })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gen::{generate, GenConfig};
    use crate::sim::{simulate, SimConfig};
    use crate::trace::{KernelEvent, MemoryRequest, PcieDirection, PciePosition, PcieRecord};

    fn chain_cfg(seed: u64) -> GenConfig {
        GenConfig {
            seed,
            block_weights: (1.0, 0.0, 0.0),
            fc_threshold: 0,
            ..GenConfig::default()
        }
    }

    fn one_kernel_sim() -> SimConfig {
        SimConfig { jitter: 0.0, kernels_per_conv_range: (1, 1), ..SimConfig::default() }
    }

    #[test]
    fn empty_trace_gives_empty_sequence() {
        let t = TraceBundle {
            kernels: vec![],
            pcie: vec![],
            line_size: 32,
            element_size: 4,
            allocations: vec![],
        };
        assert!(extract(&t).is_empty());
    }

    #[test]
    fn first_kernel_input_volume_is_h2d_bytes() {
        let g = generate(&chain_cfg(4)).unwrap();
        let cfg = one_kernel_sim();
        let t = simulate(&g, &cfg, 0);

        // independent recomputation from the serialized trace text
        let text = t.to_trace_text();
        let h2d: f64 = text
            .lines()
            .find(|l| l.starts_with("P h2d"))
            .and_then(|l| l.split_whitespace().nth(2))
            .and_then(|v| v.parse().ok())
            .unwrap();
        let first_writes = text
            .lines()
            .filter(|l| l.starts_with("M 0 W"))
            .count() as f64
            * cfg.line_size as f64;

        let fs = extract(&t);
        let expected = h2d / first_writes.max(cfg.line_size as f64);
        assert!((fs.features[0].input_write_ratio - expected).abs() < 1e-12);
    }

    #[test]
    fn chain_kernels_have_dependency_distance_one() {
        let g = generate(&chain_cfg(9)).unwrap();
        let t = simulate(&g, &one_kernel_sim(), 0);

        // brute-force oracle: scan all earlier kernels' writes per read
        for k in 1..t.kernels.len() {
            let mut brute = 0u64;
            for r in &t.kernels[k].requests {
                if r.kind != AccessKind::Read {
                    continue;
                }
                for earlier in t.kernels[..k].iter().rev() {
                    if earlier
                        .requests
                        .iter()
                        .any(|w| w.kind == AccessKind::Write && w.address == r.address)
                    {
                        brute = brute.max((k - earlier.index as usize) as u64);
                        break;
                    }
                }
            }
            assert_eq!(compute_kdd(&t, k), brute, "kernel {k}");
            assert_eq!(brute, 1, "chain kernel {k} must depend on its predecessor");
        }
        assert_eq!(compute_kdd(&t, 0), 0, "first kernel reads only cold data");
    }

    #[test]
    fn add_kernel_distance_spans_the_main_branch() {
        let cfg_g = GenConfig {
            seed: 3,
            block_count_range: (1, 1),
            block_weights: (0.0, 1.0, 0.0),
            ..GenConfig::default()
        };
        let g = generate(&cfg_g).unwrap();
        let t = simulate(&g, &one_kernel_sim(), 0);
        let add_node = g.nodes.iter().find(|n| n.kind == crate::graph::LayerKind::Add).unwrap();
        let add_kernel = t.kernels.iter().find(|k| k.layer_id == add_node.id).unwrap();

        // brute-force oracle over the simulated block
        let mut brute = 0u64;
        let ki = add_kernel.index as usize;
        for r in &add_kernel.requests {
            if r.kind != AccessKind::Read {
                continue;
            }
            for earlier in t.kernels[..ki].iter().rev() {
                if earlier
                    .requests
                    .iter()
                    .any(|w| w.kind == AccessKind::Write && w.address == r.address)
                {
                    brute = brute.max((ki - earlier.index as usize) as u64);
                    break;
                }
            }
        }
        let kdd = compute_kdd(&t, ki);
        assert_eq!(kdd, brute);
        assert!(kdd > 1, "add depends on the divergence point across the main branch");

        // the divergence producer writes just before the main branch starts
        let divergence = g.predecessors(add_node.id);
        let far = divergence
            .iter()
            .map(|p| t.kernels.iter().filter(|k| k.layer_id == *p).last().unwrap().index)
            .min()
            .unwrap();
        assert_eq!(kdd, (add_kernel.index - far) as u64);
    }

    #[test]
    fn extraction_is_order_stable() {
        let g = generate(&chain_cfg(2)).unwrap();
        let mut t = simulate(&g, &SimConfig::default(), 1);
        let base = extract(&t);
        for k in &mut t.kernels {
            k.requests.reverse();
        }
        let permuted = extract(&t);
        assert_eq!(base, permuted);
    }

    #[test]
    fn normalize_contract() {
        let g = generate(&chain_cfg(5)).unwrap();
        let t = simulate(&g, &SimConfig::default(), 2);
        let raw = extract(&t);
        let stats = fit_stats([&raw], DEFAULT_KDD_CAP);
        let normed = normalize(&raw, Some(&stats)).unwrap();
        assert!(normed.normalized);
        assert!(matches!(normalize(&normed, Some(&stats)), Err(FeatureError::AlreadyNormalized)));
        assert!(normed.features.iter().all(|f| f.as_array().iter().all(|v| v.is_finite())));
    }

    #[test]
    fn constant_dimension_centers_to_zero() {
        let f = KernelFeature {
            exec_cycles: 10.0,
            read_bytes: 32.0,
            write_bytes: 32.0,
            read_write_ratio: 1.0,
            input_write_ratio: 1.0,
            dependency_distance: 1.0,
        };
        let fs = FeatureSequence { features: vec![f, f, f], stats: None, normalized: false };
        let normed = normalize(&fs, None).unwrap();
        for nf in &normed.features {
            for v in nf.as_array() {
                assert!(v.abs() < 1e-12);
            }
        }
    }

    #[test]
    fn feature_file_roundtrip() {
        let g = generate(&chain_cfg(6)).unwrap();
        let t = simulate(&g, &SimConfig::default(), 3);
        let raw = extract(&t);
        let back = from_feature_text(&to_feature_text(&raw)).unwrap();
        assert_eq!(raw, back);

        let normed = normalize(&raw, None).unwrap();
        let back = from_feature_text(&to_feature_text(&normed)).unwrap();
        assert_eq!(normed, back);
    }

    #[test]
    fn single_kernel_layer_volume_bounds() {
        // zero noise: read volume bounded by the logical input, write volume
        // equal to the logical output, for every single-kernel layer
        let g = generate(&chain_cfg(12)).unwrap();
        let cfg = one_kernel_sim();
        let t = simulate(&g, &cfg, 0);
        let by_layer: std::collections::HashMap<u64, Vec<&KernelEvent>> = {
            let mut m: std::collections::HashMap<u64, Vec<&KernelEvent>> = Default::default();
            for k in &t.kernels {
                m.entry(k.layer_id).or_default().push(k);
            }
            m
        };
        for n in &g.nodes {
            let ks = &by_layer[&n.id];
            if ks.len() != 1 {
                continue;
            }
            let input_lines =
                (n.dims.n * n.dims.input_volume() * cfg.element_size).div_ceil(cfg.line_size);
            let in_cap = match n.kind {
                crate::graph::LayerKind::Add => 2 * input_lines * cfg.line_size,
                _ => input_lines * cfg.line_size,
            };
            assert!(ks[0].read_bytes(cfg.line_size) <= in_cap, "layer {}", n.id);
            let out_bytes = n.dims.n * n.dims.output_volume() * cfg.element_size;
            assert_eq!(
                ks[0].write_bytes(cfg.line_size),
                out_bytes.div_ceil(cfg.line_size) * cfg.line_size
            );
        }
    }

    #[test]
    fn fresh_address_reader_has_zero_distance() {
        let t = TraceBundle {
            kernels: vec![KernelEvent {
                index: 0,
                start: 0,
                end: 5,
                layer_id: 0,
                requests: vec![MemoryRequest {
                    address: 0x40,
                    kind: AccessKind::Read,
                    timestamp: 1,
                    kernel_index: 0,
                }],
            }],
            pcie: vec![PcieRecord {
                direction: PcieDirection::HostToDevice,
                bytes: 64,
                position: PciePosition::BeforeFirstKernel,
            }],
            line_size: 32,
            element_size: 4,
            allocations: vec![],
        };
        assert_eq!(compute_kdd(&t, 0), 0);
    }
}
