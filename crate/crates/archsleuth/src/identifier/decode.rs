//! CTC decoding.
//!
//! [`beam_decode`] runs a best-first search over label prefixes. Each node
//! carries the exact total probability of all labelings beginning with that
//! prefix, so the most probable remaining prefix is expanded at every
//! iteration and the search ends as soon as one complete labeling outweighs
//! every remaining prefix. With an unbounded beam this marginalizes
//! exhaustively; a finite beam prunes the frontier.

use ndarray::Array2;

use super::lstm::PredictionDistribution;
use super::{kind_of, LayerSequence, ALPHABET, BLANK};

#[derive(Debug, Clone)]
struct Prefix {
    labels: Vec<usize>,
    /// log mass of paths collapsing exactly to `labels`, ending in blank.
    lp_b: Vec<f64>,
    /// log mass of paths collapsing exactly to `labels`, ending mid-run.
    lp_nb: Vec<f64>,
    /// log total probability of labelings with this prefix (incl. itself).
    gamma: f64,
    /// log probability of the labeling equal to this prefix.
    lambda: f64,
}

fn lse(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

fn at(v: &[f64], t: usize, base: f64) -> f64 {
    if t == 0 {
        base
    } else {
        v[t - 1]
    }
}

/// Deterministic ordering: larger gamma first, then shorter, then lexicographic.
fn better(a: &Prefix, b: &Prefix) -> std::cmp::Ordering {
    b.gamma
        .partial_cmp(&a.gamma)
        .unwrap_or(std::cmp::Ordering::Equal)
        .then(a.labels.len().cmp(&b.labels.len()))
        .then(a.labels.cmp(&b.labels))
}

struct Search {
    logp: Array2<f64>,
    /// ln sum of non-blank probabilities per step.
    log_nonblank: Vec<f64>,
    /// ln sum of non-blank probabilities excluding one label, per step.
    log_excl: Vec<[f64; ALPHABET]>,
    t_len: usize,
}

impl Search {
    fn new(p: &PredictionDistribution) -> Search {
        let t_len = p.steps();
        let logp = p.probs.mapv(|v| if v > 0.0 { v.ln() } else { f64::NEG_INFINITY });
        let mut log_nonblank = Vec::with_capacity(t_len);
        let mut log_excl = Vec::with_capacity(t_len);
        for t in 0..t_len {
            let row = p.probs.row(t);
            let nb: f64 = (1..ALPHABET).map(|c| row[c]).sum();
            log_nonblank.push(if nb > 0.0 { nb.ln() } else { f64::NEG_INFINITY });
            let mut ex = [f64::NEG_INFINITY; ALPHABET];
            for (e, slot) in ex.iter_mut().enumerate() {
                let s = nb - if e == BLANK { 0.0 } else { row[e] };
                *slot = if s > 0.0 { s.ln() } else { f64::NEG_INFINITY };
            }
            log_excl.push(ex);
        }
        Search { logp, log_nonblank, log_excl, t_len }
    }

    /// The empty prefix: all-blank paths keep it; any non-blank escapes it.
    fn root(&self) -> Prefix {
        let mut lp_b = Vec::with_capacity(self.t_len);
        let mut acc = 0.0;
        for t in 0..self.t_len {
            acc += self.logp[(t, BLANK)];
            lp_b.push(acc);
        }
        let lp_nb = vec![f64::NEG_INFINITY; self.t_len];
        let lambda = lp_b[self.t_len - 1];
        let gamma = self.finish(&lp_b, &lp_nb, 0.0, BLANK, lambda);
        Prefix { labels: Vec::new(), lp_b, lp_nb, gamma, lambda }
    }

    /// Total prefix mass: the labeling itself plus every escape into a
    /// longer labeling. Collapse is monotone over time, so mass that leaves
    /// the prefix at time t stays beyond it forever and is counted once.
    fn finish(&self, lp_b: &[f64], lp_nb: &[f64], base_b: f64, last: usize, lambda: f64) -> f64 {
        let mut gamma = lambda;
        for t in 0..self.t_len {
            let from_b = at(lp_b, t, base_b) + self.log_nonblank[t];
            let from_nb = at(lp_nb, t, f64::NEG_INFINITY) + self.log_excl[t][last];
            gamma = lse(gamma, lse(from_b, from_nb));
        }
        gamma
    }

    fn extend(&self, parent: &Prefix, c: usize, parent_is_root: bool) -> Prefix {
        let neg = f64::NEG_INFINITY;
        let parent_base_b = if parent_is_root { 0.0 } else { neg };
        let parent_last = parent.labels.last().copied().unwrap_or(BLANK);
        let mut lp_b = vec![neg; self.t_len];
        let mut lp_nb = vec![neg; self.t_len];
        for t in 0..self.t_len {
            let enter_from_blank = at(&parent.lp_b, t, parent_base_b);
            let enter_from_run =
                if c != parent_last { at(&parent.lp_nb, t, neg) } else { neg };
            let continue_run = at(&lp_nb, t, neg);
            lp_nb[t] =
                self.logp[(t, c)] + lse(continue_run, lse(enter_from_blank, enter_from_run));
            lp_b[t] = self.logp[(t, BLANK)] + lse(at(&lp_b, t, neg), at(&lp_nb, t, neg));
            // note: at() on the vectors being built reads index t-1, already final
        }
        let lambda = lse(lp_b[self.t_len - 1], lp_nb[self.t_len - 1]);
        let mut labels = parent.labels.clone();
        labels.push(c);
        let gamma = self.finish(&lp_b, &lp_nb, neg, c, lambda);
        Prefix { labels, lp_b, lp_nb, gamma, lambda }
    }
}

/// CTC prefix beam search over collapsed label sequences. `beam_width`
/// bounds the retained frontier; `usize::MAX` makes the search exhaustive.
pub fn beam_decode(p: &PredictionDistribution, beam_width: usize) -> LayerSequence {
    assert!(beam_width >= 1, "beam width must be >= 1");
    if p.steps() == 0 {
        return Vec::new();
    }
    let search = Search::new(p);
    let root = search.root();
    let mut best = (root.lambda, root.labels.clone());
    let mut frontier = vec![root];

    let max_iters = search.t_len * ALPHABET * beam_width.min(1 << 20) + 1024;
    for _ in 0..max_iters {
        let top = match frontier.iter().enumerate().min_by(|(_, a), (_, b)| better(a, b)) {
            Some((i, _)) => i,
            None => break,
        };
        let node = frontier.swap_remove(top);
        // A single labeling already beats every remaining prefix: done.
        if best.0 >= node.gamma {
            break;
        }
        if node.labels.len() >= search.t_len {
            continue;
        }
        let is_root = node.labels.is_empty();
        for c in 1..ALPHABET {
            let child = search.extend(&node, c, is_root);
            if child.gamma == f64::NEG_INFINITY {
                continue;
            }
            if child.lambda > best.0
                || (child.lambda == best.0 && child.labels < best.1)
            {
                best = (child.lambda, child.labels.clone());
            }
            frontier.push(child);
        }
        if frontier.len() > beam_width {
            frontier.sort_by(better);
            frontier.truncate(beam_width);
        }
    }

    best.1.into_iter().filter_map(kind_of).collect()
}

/// Collapse of the per-step argmax path: repeats merged, then blanks removed.
pub fn greedy_decode(p: &PredictionDistribution) -> LayerSequence {
    let mut out = Vec::new();
    let mut last = BLANK;
    for row in p.probs.rows() {
        let (argmax, _) = row
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc });
        if argmax != last && argmax != BLANK {
            if let Some(k) = kind_of(argmax) {
                out.push(k);
            }
        }
        last = argmax;
    }
    out
}

/// Exhaustive reference decoder: enumerates every path, accumulates the
/// probability of each collapsed sequence, and returns the argmax.
/// Test and verification use only.
pub fn decode_by_enumeration(p: &PredictionDistribution, alphabet: usize) -> Vec<usize> {
    use std::collections::HashMap;
    let t_len = p.steps();
    let mut mass: HashMap<Vec<usize>, f64> = HashMap::new();
    let mut path = vec![0usize; t_len];
    loop {
        let prob: f64 = path.iter().enumerate().map(|(t, &s)| p.probs[(t, s)]).product();
        let mut collapsed = Vec::new();
        let mut last = usize::MAX;
        for &s in &path {
            if s != last {
                collapsed.push(s);
                last = s;
            }
        }
        collapsed.retain(|&s| s != BLANK);
        *mass.entry(collapsed).or_insert(0.0) += prob;

        let mut i = 0;
        loop {
            if i == t_len {
                let mut entries: Vec<(Vec<usize>, f64)> = mass.into_iter().collect();
                entries.sort_by(|a, b| {
                    b.1.partial_cmp(&a.1).unwrap().then(a.0.len().cmp(&b.0.len())).then(a.0.cmp(&b.0))
                });
                return entries[0].0.clone();
            }
            path[i] += 1;
            if path[i] < alphabet {
                break;
            }
            path[i] = 0;
            i += 1;
        }
    }
}
