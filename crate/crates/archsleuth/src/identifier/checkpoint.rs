//! Versioned text checkpoints: model dims, alphabet, normalization stats,
//! and row-major weight matrices in decimal text. Loading validates shapes.

use std::fmt::Write as _;

use ndarray::{Array1, Array2};
use thiserror::Error;

use super::lstm::{IdentifierModel, GATES, MODEL_VERSION};
use super::mlp::MlpModel;
use crate::features::{NormStats, FEATURE_DIM};
use crate::graph::LayerKind;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: IdentifierModel,
    pub stats: NormStats,
    /// Per-kernel baseline trained on the same corpus, when available.
    pub mlp: Option<MlpModel>,
    /// Hash of the dataset manifest this checkpoint was trained on.
    pub dataset_hash: String,
}

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("shape mismatch for {name}: expected {expect}, found {found}")]
    Shape { name: String, expect: String, found: String },
}

fn perr(line: usize, message: impl Into<String>) -> CheckpointError {
    CheckpointError::Parse { line, message: message.into() }
}

const GATE_NAMES: [&str; GATES] = ["gate_input", "gate_forget", "gate_output", "gate_cell"];

pub fn to_text(c: &Checkpoint) -> String {
    let mut out = String::new();
    writeln!(out, "#checkpoint v1").unwrap();
    writeln!(out, "version {}", c.model.version).unwrap();
    writeln!(out, "input_dim {}", c.model.input_dim).unwrap();
    writeln!(out, "hidden_dim {}", c.model.hidden_dim).unwrap();
    write!(out, "alphabet blank").unwrap();
    for k in LayerKind::ALL {
        write!(out, " {}", k.token()).unwrap();
    }
    out.push('\n');
    writeln!(out, "dataset_hash {}", c.dataset_hash).unwrap();
    write!(out, "stats").unwrap();
    for d in 0..FEATURE_DIM {
        write!(out, " {} {}", c.stats.mean[d], c.stats.std[d]).unwrap();
    }
    writeln!(out, " {}", c.stats.kdd_cap).unwrap();

    for g in 0..GATES {
        let m = &c.model.wx[g];
        write_matrix(&mut out, &format!("{}_wx", GATE_NAMES[g]), m.nrows(), m.ncols(), m.iter().copied());
        let m = &c.model.wh[g];
        write_matrix(&mut out, &format!("{}_wh", GATE_NAMES[g]), m.nrows(), m.ncols(), m.iter().copied());
        let b = &c.model.b[g];
        write_matrix(&mut out, &format!("{}_b", GATE_NAMES[g]), 1, b.len(), b.iter().copied());
    }
    write_matrix(&mut out, "head_w", c.model.w_out.nrows(), c.model.w_out.ncols(), c.model.w_out.iter().copied());
    write_matrix(&mut out, "head_b", 1, c.model.b_out.len(), c.model.b_out.iter().copied());

    if let Some(mlp) = &c.mlp {
        writeln!(out, "mlp hidden {}", mlp.hidden_dim()).unwrap();
        write_matrix(&mut out, "mlp_w1", mlp.w1.nrows(), mlp.w1.ncols(), mlp.w1.iter().copied());
        write_matrix(&mut out, "mlp_b1", 1, mlp.b1.len(), mlp.b1.iter().copied());
        write_matrix(&mut out, "mlp_w2", mlp.w2.nrows(), mlp.w2.ncols(), mlp.w2.iter().copied());
        write_matrix(&mut out, "mlp_b2", 1, mlp.b2.len(), mlp.b2.iter().copied());
        write_matrix(&mut out, "mlp_w3", mlp.w3.nrows(), mlp.w3.ncols(), mlp.w3.iter().copied());
        write_matrix(&mut out, "mlp_b3", 1, mlp.b3.len(), mlp.b3.iter().copied());
    }
    out
}

fn write_matrix(
    out: &mut String,
    name: &str,
    rows: usize,
    cols: usize,
    mut data: impl Iterator<Item = f64>,
) {
    writeln!(out, "matrix {name} {rows} {cols}").unwrap();
    for _ in 0..rows {
        let mut first = true;
        for _ in 0..cols.max(1) {
            if let Some(v) = data.next() {
                if !first {
                    out.push(' ');
                }
                write!(out, "{v}").unwrap();
                first = false;
            }
        }
        out.push('\n');
    }
}

struct Reader<'a> {
    lines: Vec<&'a str>,
    pos: usize,
}

impl<'a> Reader<'a> {
    fn next(&mut self) -> Option<(usize, &'a str)> {
        while self.pos < self.lines.len() {
            let i = self.pos;
            self.pos += 1;
            let line = self.lines[i].trim_end();
            if !line.is_empty() {
                return Some((i + 1, line));
            }
        }
        None
    }

    fn peek(&self) -> Option<&'a str> {
        self.lines[self.pos..]
            .iter()
            .map(|l| l.trim_end())
            .find(|l| !l.is_empty())
    }

    fn expect_matrix(&mut self, name: &str) -> Result<(usize, Vec<f64>, usize), CheckpointError> {
        let (lineno, header) =
            self.next().ok_or_else(|| perr(self.lines.len(), format!("missing matrix {name}")))?;
        let mut f = header.split_ascii_whitespace();
        if f.next() != Some("matrix") || f.next() != Some(name) {
            return Err(perr(lineno, format!("expected `matrix {name}`, found {header:?}")));
        }
        let rows: usize = f
            .next()
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| perr(lineno, "bad matrix row count"))?;
        let cols: usize = f
            .next()
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| perr(lineno, "bad matrix col count"))?;
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows {
            let (ln, row) =
                self.next().ok_or_else(|| perr(self.lines.len(), "truncated matrix"))?;
            for tok in row.split_ascii_whitespace() {
                let v: f64 = tok.parse().map_err(|_| perr(ln, "bad matrix value"))?;
                data.push(v);
            }
        }
        if data.len() != rows * cols {
            return Err(CheckpointError::Shape {
                name: name.into(),
                expect: format!("{rows}x{cols}"),
                found: format!("{} values", data.len()),
            });
        }
        Ok((rows, data, cols))
    }
}

pub fn from_text(text: &str) -> Result<Checkpoint, CheckpointError> {
    let mut r = Reader { lines: text.lines().collect(), pos: 0 };
    match r.next() {
        Some((_, l)) if l == "#checkpoint v1" => {}
        other => return Err(perr(1, format!("expected `#checkpoint v1`, found {other:?}"))),
    }
    let mut version = MODEL_VERSION.to_string();
    let mut input_dim = 0usize;
    let mut hidden_dim = 0usize;
    let mut dataset_hash = String::new();
    let mut stats: Option<NormStats> = None;

    loop {
        let peek = r.peek().unwrap_or("");
        if peek.starts_with("matrix ") {
            break;
        }
        let (lineno, line) = match r.next() {
            Some(v) => v,
            None => break,
        };
        let (key, rest) = line.split_once(' ').unwrap_or((line, ""));
        match key {
            "version" => version = rest.to_string(),
            "input_dim" => {
                input_dim = rest.parse().map_err(|_| perr(lineno, "bad input_dim"))?
            }
            "hidden_dim" => {
                hidden_dim = rest.parse().map_err(|_| perr(lineno, "bad hidden_dim"))?
            }
            "dataset_hash" => dataset_hash = rest.to_string(),
            "alphabet" => {
                let toks: Vec<&str> = rest.split_ascii_whitespace().collect();
                let expect: Vec<String> = std::iter::once("blank".to_string())
                    .chain(LayerKind::ALL.iter().map(|k| k.token().to_string()))
                    .collect();
                if toks != expect.iter().map(|s| s.as_str()).collect::<Vec<_>>() {
                    return Err(perr(lineno, "unexpected alphabet"));
                }
            }
            "stats" => {
                let nums: Option<Vec<f64>> =
                    rest.split_ascii_whitespace().map(|v| v.parse().ok()).collect();
                let nums = nums.ok_or_else(|| perr(lineno, "bad stats value"))?;
                if nums.len() != 2 * FEATURE_DIM + 1 {
                    return Err(perr(lineno, "stats line must carry 13 numbers"));
                }
                let mut mean = [0.0; FEATURE_DIM];
                let mut std = [0.0; FEATURE_DIM];
                for d in 0..FEATURE_DIM {
                    mean[d] = nums[2 * d];
                    std[d] = nums[2 * d + 1];
                }
                stats = Some(NormStats { mean, std, kdd_cap: nums[2 * FEATURE_DIM] });
            }
            other => return Err(perr(lineno, format!("unknown header key {other:?}"))),
        }
    }

    if input_dim != FEATURE_DIM {
        return Err(CheckpointError::Shape {
            name: "input_dim".into(),
            expect: FEATURE_DIM.to_string(),
            found: input_dim.to_string(),
        });
    }
    if hidden_dim == 0 {
        return Err(perr(1, "missing hidden_dim"));
    }
    let stats = stats.ok_or_else(|| perr(1, "missing stats line"))?;

    let mut model = IdentifierModel::zeros(input_dim, hidden_dim);
    model.version = version;
    let shape_check = |name: &str, rows: usize, cols: usize, er: usize, ec: usize| {
        if rows != er || cols != ec {
            Err(CheckpointError::Shape {
                name: name.into(),
                expect: format!("{er}x{ec}"),
                found: format!("{rows}x{cols}"),
            })
        } else {
            Ok(())
        }
    };

    for g in 0..GATES {
        let name = format!("{}_wx", GATE_NAMES[g]);
        let (rows, data, cols) = r.expect_matrix(&name)?;
        shape_check(&name, rows, cols, hidden_dim, input_dim)?;
        model.wx[g] = Array2::from_shape_vec((rows, cols), data).unwrap();

        let name = format!("{}_wh", GATE_NAMES[g]);
        let (rows, data, cols) = r.expect_matrix(&name)?;
        shape_check(&name, rows, cols, hidden_dim, hidden_dim)?;
        model.wh[g] = Array2::from_shape_vec((rows, cols), data).unwrap();

        let name = format!("{}_b", GATE_NAMES[g]);
        let (rows, data, cols) = r.expect_matrix(&name)?;
        shape_check(&name, rows, cols, 1, hidden_dim)?;
        model.b[g] = Array1::from_vec(data);
    }
    let (rows, data, cols) = r.expect_matrix("head_w")?;
    shape_check("head_w", rows, cols, super::ALPHABET, hidden_dim)?;
    model.w_out = Array2::from_shape_vec((rows, cols), data).unwrap();
    let (rows, data, cols) = r.expect_matrix("head_b")?;
    shape_check("head_b", rows, cols, 1, super::ALPHABET)?;
    model.b_out = Array1::from_vec(data);

    let mlp = match r.next() {
        Some((lineno, line)) if line.starts_with("mlp hidden") => {
            let hidden: usize = line
                .rsplit(' ')
                .next()
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| perr(lineno, "bad mlp hidden size"))?;
            let mut m = MlpModel::init(hidden, 0);
            let (rows, data, cols) = r.expect_matrix("mlp_w1")?;
            shape_check("mlp_w1", rows, cols, hidden, FEATURE_DIM)?;
            m.w1 = Array2::from_shape_vec((rows, cols), data).unwrap();
            let (_, data, cols) = r.expect_matrix("mlp_b1")?;
            shape_check("mlp_b1", 1, cols, 1, hidden)?;
            m.b1 = Array1::from_vec(data);
            let (rows, data, cols) = r.expect_matrix("mlp_w2")?;
            shape_check("mlp_w2", rows, cols, hidden, hidden)?;
            m.w2 = Array2::from_shape_vec((rows, cols), data).unwrap();
            let (_, data, cols) = r.expect_matrix("mlp_b2")?;
            shape_check("mlp_b2", 1, cols, 1, hidden)?;
            m.b2 = Array1::from_vec(data);
            let (rows, data, cols) = r.expect_matrix("mlp_w3")?;
            shape_check("mlp_w3", rows, cols, super::mlp::MLP_CLASSES, hidden)?;
            m.w3 = Array2::from_shape_vec((rows, cols), data).unwrap();
            let (_, data, cols) = r.expect_matrix("mlp_b3")?;
            shape_check("mlp_b3", 1, cols, 1, super::mlp::MLP_CLASSES)?;
            m.b3 = Array1::from_vec(data);
            Some(m)
        }
        Some((lineno, other)) => return Err(perr(lineno, format!("unexpected trailer {other:?}"))),
        None => None,
    };

    Ok(Checkpoint { model, stats, mlp, dataset_hash })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        Checkpoint {
            model: IdentifierModel::init(FEATURE_DIM, 8, 5),
            stats: NormStats { mean: [1.0; FEATURE_DIM], std: [2.0; FEATURE_DIM], kdd_cap: 64.0 },
            mlp: Some(MlpModel::init(6, 7)),
            dataset_hash: "abc123".into(),
        }
    }

    #[test]
    fn roundtrip() {
        let c = sample();
        let text = to_text(&c);
        let back = from_text(&text).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn roundtrip_without_mlp() {
        let mut c = sample();
        c.mlp = None;
        assert_eq!(from_text(&to_text(&c)).unwrap(), c);
    }

    #[test]
    fn shape_validation() {
        let c = sample();
        let text = to_text(&c);
        // corrupt the hidden dim so every matrix mismatches
        let bad = text.replace("hidden_dim 8", "hidden_dim 16");
        assert!(matches!(from_text(&bad), Err(CheckpointError::Shape { .. })));
    }

    #[test]
    fn truncation_detected() {
        let c = sample();
        let text = to_text(&c);
        let cut: String = text.lines().take(10).collect::<Vec<_>>().join("\n");
        assert!(from_text(&cut).is_err());
    }
}
