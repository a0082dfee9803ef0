//! Bus-observation data model and the on-disk trace format.
//!
//! A [`TraceBundle`] is what a bus snooper would see: kernel events with
//! line-granular memory requests plus the two PCIe copy records. Ground
//! truth (which layer owns a kernel) lives in a sidecar labels file, never
//! in the trace itself.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::LayerKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AccessKind {
    Read,
    Write,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryRequest {
    /// Line-aligned byte address.
    pub address: u64,
    pub kind: AccessKind,
    /// Abstract cycle stamp, within the owning kernel's [start, end].
    pub timestamp: u64,
    pub kernel_index: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KernelEvent {
    pub index: u32,
    pub start: u64,
    pub end: u64,
    /// Ground-truth layer id. Held out from extraction; evaluation only.
    pub layer_id: u64,
    pub requests: Vec<MemoryRequest>,
}

impl KernelEvent {
    pub fn read_bytes(&self, line_size: u64) -> u64 {
        self.requests.iter().filter(|r| r.kind == AccessKind::Read).count() as u64 * line_size
    }

    pub fn write_bytes(&self, line_size: u64) -> u64 {
        self.requests.iter().filter(|r| r.kind == AccessKind::Write).count() as u64 * line_size
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PcieDirection {
    HostToDevice,
    DeviceToHost,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PciePosition {
    BeforeFirstKernel,
    AfterLastKernel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PcieRecord {
    pub direction: PcieDirection,
    pub bytes: u64,
    pub position: PciePosition,
}

/// What a memory region held, recorded by the simulator for property checks
/// and evaluation. Not part of the trace file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TensorClass {
    /// The network input image; read-only.
    Input,
    /// Activation data produced by one layer.
    FeatureMap { layer_id: u64 },
    /// Layer parameters; read-only.
    Weights { layer_id: u64 },
    /// Scratch traffic of a convolution lowering.
    Workspace { layer_id: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Allocation {
    pub start: u64,
    pub bytes: u64,
    pub class: TensorClass,
}

impl Allocation {
    pub fn contains(&self, addr: u64) -> bool {
        addr >= self.start && addr < self.start + self.bytes
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceBundle {
    pub kernels: Vec<KernelEvent>,
    pub pcie: Vec<PcieRecord>,
    pub line_size: u64,
    pub element_size: u64,
    /// Simulator metadata; omitted by the trace writer.
    #[serde(default)]
    pub allocations: Vec<Allocation>,
}

impl TraceBundle {
    pub fn host_to_device_bytes(&self) -> Option<u64> {
        self.pcie
            .iter()
            .find(|p| p.direction == PcieDirection::HostToDevice)
            .map(|p| p.bytes)
    }

    pub fn device_to_host_bytes(&self) -> Option<u64> {
        self.pcie
            .iter()
            .find(|p| p.direction == PcieDirection::DeviceToHost)
            .map(|p| p.bytes)
    }

    /// Serializes to the versioned text trace format. Ground-truth layer ids
    /// and allocation tags are deliberately not written.
    pub fn to_trace_text(&self) -> String {
        let mut out = String::new();
        writeln!(out, "#trace v1 line={} elem={}", self.line_size, self.element_size).unwrap();
        for p in self.pcie.iter().filter(|p| p.position == PciePosition::BeforeFirstKernel) {
            writeln!(out, "P {} {}", dir_token(p.direction), p.bytes).unwrap();
        }
        for k in &self.kernels {
            writeln!(out, "K {} {} {}", k.index, k.start, k.end).unwrap();
            for r in &k.requests {
                writeln!(
                    out,
                    "M {} {} {:x} {}",
                    r.kernel_index,
                    match r.kind {
                        AccessKind::Read => "R",
                        AccessKind::Write => "W",
                    },
                    r.address,
                    r.timestamp
                )
                .unwrap();
            }
        }
        for p in self.pcie.iter().filter(|p| p.position == PciePosition::AfterLastKernel) {
            writeln!(out, "P {} {}", dir_token(p.direction), p.bytes).unwrap();
        }
        out
    }

    pub fn from_trace_text(text: &str) -> Result<TraceBundle, TraceParseError> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines
            .next()
            .ok_or(TraceParseError::new(1, "empty trace file"))?;
        let (line_size, element_size) = parse_header(header).map_err(|m| TraceParseError::new(1, m))?;

        let mut bundle = TraceBundle {
            kernels: Vec::new(),
            pcie: Vec::new(),
            line_size,
            element_size,
            allocations: Vec::new(),
        };
        let mut seen_kernel = false;

        for (idx, raw) in lines {
            let lineno = idx + 1;
            let line = raw.trim_end();
            if line.is_empty() {
                continue;
            }
            let mut f = line.split_ascii_whitespace();
            match f.next() {
                Some("K") => {
                    seen_kernel = true;
                    let index: u32 = parse_field(f.next(), lineno, "kernel index")?;
                    let start: u64 = parse_field(f.next(), lineno, "kernel start")?;
                    let end: u64 = parse_field(f.next(), lineno, "kernel end")?;
                    if end <= start {
                        return Err(TraceParseError::new(lineno, "kernel end must exceed start"));
                    }
                    if index as usize != bundle.kernels.len() {
                        return Err(TraceParseError::new(lineno, "kernel indices must be contiguous"));
                    }
                    bundle.kernels.push(KernelEvent {
                        index,
                        start,
                        end,
                        layer_id: u64::MAX,
                        requests: Vec::new(),
                    });
                }
                Some("M") => {
                    let kidx: u32 = parse_field(f.next(), lineno, "request kernel index")?;
                    let kind = match f.next() {
                        Some("R") => AccessKind::Read,
                        Some("W") => AccessKind::Write,
                        _ => return Err(TraceParseError::new(lineno, "request kind must be R or W")),
                    };
                    let addr_str = f
                        .next()
                        .ok_or(TraceParseError::new(lineno, "missing request address"))?;
                    let address = u64::from_str_radix(addr_str.trim_start_matches("0x"), 16)
                        .map_err(|_| TraceParseError::new(lineno, "bad hex address"))?;
                    let timestamp: u64 = parse_field(f.next(), lineno, "request timestamp")?;
                    let kernel = bundle
                        .kernels
                        .get_mut(kidx as usize)
                        .ok_or(TraceParseError::new(lineno, "request for unknown kernel"))?;
                    if address % line_size != 0 {
                        return Err(TraceParseError::new(lineno, "address not line-aligned"));
                    }
                    kernel.requests.push(MemoryRequest {
                        address,
                        kind,
                        timestamp,
                        kernel_index: kidx,
                    });
                }
                Some("P") => {
                    let direction = match f.next() {
                        Some("h2d") => PcieDirection::HostToDevice,
                        Some("d2h") => PcieDirection::DeviceToHost,
                        _ => return Err(TraceParseError::new(lineno, "pcie direction must be h2d or d2h")),
                    };
                    let bytes: u64 = parse_field(f.next(), lineno, "pcie bytes")?;
                    bundle.pcie.push(PcieRecord {
                        direction,
                        bytes,
                        position: if seen_kernel {
                            PciePosition::AfterLastKernel
                        } else {
                            PciePosition::BeforeFirstKernel
                        },
                    });
                }
                Some(other) => {
                    return Err(TraceParseError::new(
                        lineno,
                        format!("unknown record tag {other:?}"),
                    ))
                }
                None => {}
            }
        }
        Ok(bundle)
    }
}

fn dir_token(d: PcieDirection) -> &'static str {
    match d {
        PcieDirection::HostToDevice => "h2d",
        PcieDirection::DeviceToHost => "d2h",
    }
}

fn parse_header(line: &str) -> Result<(u64, u64), String> {
    let mut f = line.split_ascii_whitespace();
    if f.next() != Some("#trace") || f.next() != Some("v1") {
        return Err("expected `#trace v1` header".into());
    }
    let mut line_size = None;
    let mut elem = None;
    for kv in f {
        match kv.split_once('=') {
            Some(("line", v)) => line_size = v.parse().ok(),
            Some(("elem", v)) => elem = v.parse().ok(),
            _ => return Err(format!("unexpected header field {kv:?}")),
        }
    }
    match (line_size, elem) {
        (Some(l), Some(e)) if l > 0 && e > 0 => Ok((l, e)),
        _ => Err("header must carry line=<bytes> elem=<bytes>".into()),
    }
}

fn parse_field<T: std::str::FromStr>(
    field: Option<&str>,
    lineno: usize,
    what: &str,
) -> Result<T, TraceParseError> {
    field
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| TraceParseError::new(lineno, format!("missing or malformed {what}")))
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("trace parse error at line {line}: {message}")]
pub struct TraceParseError {
    pub line: usize,
    pub message: String,
}

impl TraceParseError {
    fn new(line: usize, message: impl Into<String>) -> Self {
        TraceParseError { line, message: message.into() }
    }
}

/// Sidecar ground truth: one row per kernel with its owning layer and kind.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceLabels {
    /// (kernel index, layer id, layer kind), in kernel order.
    pub kernels: Vec<(u32, u64, LayerKind)>,
}

impl TraceLabels {
    pub fn from_bundle(t: &TraceBundle, kind_of: impl Fn(u64) -> LayerKind) -> TraceLabels {
        TraceLabels {
            kernels: t
                .kernels
                .iter()
                .map(|k| (k.index, k.layer_id, kind_of(k.layer_id)))
                .collect(),
        }
    }

    /// Kind labels in kernel order, the per-kernel classifier target.
    pub fn kernel_kinds(&self) -> Vec<LayerKind> {
        self.kernels.iter().map(|&(_, _, k)| k).collect()
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from("#labels v1\n");
        for (idx, layer, kind) in &self.kernels {
            writeln!(out, "K {} {} {}", idx, layer, kind.token()).unwrap();
        }
        out
    }

    pub fn from_text(text: &str) -> Result<TraceLabels, TraceParseError> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h.trim() == "#labels v1" => {}
            _ => return Err(TraceParseError::new(1, "expected `#labels v1` header")),
        }
        let mut kernels = Vec::new();
        for (idx, raw) in lines {
            let lineno = idx + 1;
            let line = raw.trim();
            if line.is_empty() {
                continue;
            }
            let mut f = line.split_ascii_whitespace();
            if f.next() != Some("K") {
                return Err(TraceParseError::new(lineno, "expected K record"));
            }
            let kidx: u32 = parse_field(f.next(), lineno, "kernel index")?;
            let layer: u64 = parse_field(f.next(), lineno, "layer id")?;
            let kind = f
                .next()
                .and_then(LayerKind::from_token)
                .ok_or(TraceParseError::new(lineno, "bad layer kind token"))?;
            kernels.push((kidx, layer, kind));
        }
        Ok(TraceLabels { kernels })
    }
}
