//! Sequence metrics: edit distance, label error rate, and the alignment
//! traceback used to map predicted positions onto oracle positions.

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("prediction and oracle lists differ in length ({preds} vs {oracles})")]
    LengthMismatch { preds: usize, oracles: usize },
    #[error("oracle sequence {index} is empty")]
    EmptyOracle { index: usize },
}

/// Levenshtein distance: minimum insertions, substitutions, and deletions
/// turning `a` into `b`.
pub fn edit_distance<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    if a.is_empty() {
        return b.len();
    }
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0usize; b.len() + 1];
    for (i, xa) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, xb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(xa != xb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Mean over samples of edit distance normalized by oracle length.
pub fn label_error_rate<T: PartialEq>(
    preds: &[Vec<T>],
    oracles: &[Vec<T>],
) -> Result<f64, MetricError> {
    if preds.len() != oracles.len() {
        return Err(MetricError::LengthMismatch { preds: preds.len(), oracles: oracles.len() });
    }
    let mut total = 0.0;
    for (index, (p, z)) in preds.iter().zip(oracles).enumerate() {
        if z.is_empty() {
            return Err(MetricError::EmptyOracle { index });
        }
        total += edit_distance(p, z) as f64 / z.len() as f64;
    }
    Ok(total / preds.len().max(1) as f64)
}

/// One aligned pair of positions; `None` on either side marks an insertion
/// or deletion.
pub type AlignmentPair = (Option<usize>, Option<usize>);

/// Minimum-edit alignment between two sequences, as (a_pos, b_pos) pairs in
/// order. Matched and substituted positions appear as (Some, Some).
pub fn align<T: PartialEq>(a: &[T], b: &[T]) -> Vec<AlignmentPair> {
    let n = a.len();
    let m = b.len();
    let mut dp = vec![vec![0usize; m + 1]; n + 1];
    for i in 0..=n {
        dp[i][0] = i;
    }
    for j in 0..=m {
        dp[0][j] = j;
    }
    for i in 1..=n {
        for j in 1..=m {
            let sub = dp[i - 1][j - 1] + usize::from(a[i - 1] != b[j - 1]);
            dp[i][j] = sub.min(dp[i - 1][j] + 1).min(dp[i][j - 1] + 1);
        }
    }
    let mut pairs = Vec::new();
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        if i > 0 && j > 0 && dp[i][j] == dp[i - 1][j - 1] + usize::from(a[i - 1] != b[j - 1]) {
            pairs.push((Some(i - 1), Some(j - 1)));
            i -= 1;
            j -= 1;
        } else if i > 0 && dp[i][j] == dp[i - 1][j] + 1 {
            pairs.push((Some(i - 1), None));
            i -= 1;
        } else {
            pairs.push((None, Some(j - 1)));
            j -= 1;
        }
    }
    pairs.reverse();
    pairs
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::LayerKind::{self, *};
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;
    use std::collections::HashMap;

    /// Memoized recursive definition, kept independent of the iterative DP.
    fn recursive_ed(a: &[u8], b: &[u8], memo: &mut HashMap<(usize, usize), usize>) -> usize {
        fn go(a: &[u8], b: &[u8], i: usize, j: usize, memo: &mut HashMap<(usize, usize), usize>) -> usize {
            if i == 0 {
                return j;
            }
            if j == 0 {
                return i;
            }
            if let Some(&v) = memo.get(&(i, j)) {
                return v;
            }
            let sub = go(a, b, i - 1, j - 1, memo) + usize::from(a[i - 1] != b[j - 1]);
            let del = go(a, b, i - 1, j, memo) + 1;
            let ins = go(a, b, i, j - 1, memo) + 1;
            let v = sub.min(del).min(ins);
            memo.insert((i, j), v);
            v
        }
        go(a, b, a.len(), b.len(), memo)
    }

    #[test]
    fn identity_and_single_deletion() {
        let x = vec![Conv, Bn, Relu];
        assert_eq!(edit_distance(&x, &x), 0);
        assert_eq!(edit_distance(&[Conv, Bn, Relu], &[Conv, Relu]), 1);
    }

    #[test]
    fn triangle_inequality_on_random_triples() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let mk = |rng: &mut ChaCha8Rng| -> Vec<u8> {
                (0..rng.gen_range(0..=6)).map(|_| rng.gen_range(0..3u8)).collect()
            };
            let (a, b, c) = (mk(&mut rng), mk(&mut rng), mk(&mut rng));
            let ab = edit_distance(&a, &b);
            let bc = edit_distance(&b, &c);
            let ac = edit_distance(&a, &c);
            assert!(ac <= ab + bc, "triangle violated: {a:?} {b:?} {c:?}");
            let mut memo = HashMap::new();
            assert_eq!(ab, recursive_ed(&a, &b, &mut memo));
        }
    }

    #[test]
    fn ler_examples() {
        let same: Vec<Vec<LayerKind>> = vec![vec![Conv, Relu], vec![Fc]];
        assert_eq!(label_error_rate(&same, &same).unwrap(), 0.0);

        // single pair with ED=3 against an oracle of length 73
        let oracle: Vec<u8> = (0..73).map(|i| (i % 3) as u8).collect();
        let mut pred = oracle.clone();
        pred[0] = 9;
        pred[10] = 9;
        pred.remove(50);
        assert_eq!(edit_distance(&pred, &oracle), 3);
        let ler = label_error_rate(&[pred], &[oracle]).unwrap();
        assert!((ler - 3.0 / 73.0).abs() < 1e-15);
    }

    #[test]
    fn empty_oracle_rejected() {
        let preds: Vec<Vec<LayerKind>> = vec![vec![Conv]];
        let oracles: Vec<Vec<LayerKind>> = vec![vec![]];
        assert_eq!(
            label_error_rate(&preds, &oracles),
            Err(MetricError::EmptyOracle { index: 0 })
        );
    }

    #[test]
    fn alignment_cost_matches_edit_distance() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..100 {
            let mk = |rng: &mut ChaCha8Rng| -> Vec<u8> {
                (0..rng.gen_range(0..=8)).map(|_| rng.gen_range(0..3u8)).collect()
            };
            let (a, b) = (mk(&mut rng), mk(&mut rng));
            let pairs = align(&a, &b);
            let cost: usize = pairs
                .iter()
                .map(|p| match p {
                    (Some(i), Some(j)) => usize::from(a[*i] != b[*j]),
                    _ => 1,
                })
                .sum();
            assert_eq!(cost, edit_distance(&a, &b));
            // every position appears exactly once per side, in order
            let a_pos: Vec<usize> = pairs.iter().filter_map(|p| p.0).collect();
            let b_pos: Vec<usize> = pairs.iter().filter_map(|p| p.1).collect();
            assert_eq!(a_pos, (0..a.len()).collect::<Vec<_>>());
            assert_eq!(b_pos, (0..b.len()).collect::<Vec<_>>());
        }
    }
}
