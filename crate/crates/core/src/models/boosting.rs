//! Histogram-based gradient-boosted regression trees.
//!
//! Trees grow depth-first up to `max_depth`, split on quantile bin edges,
//! and use Newton leaf values `-G / (H + L2)`. Splits must leave at least
//! `min_samples_leaf` rows on each side.

use super::linear::sigmoid;
use super::Design;

const MAX_BINS: usize = 32;
const L2: f64 = 1.0;
const MIN_GAIN: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Loss {
    Squared,
    Logistic,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct BoostParams {
    pub learning_rate: f64,
    pub max_depth: usize,
    pub min_samples_leaf: usize,
    pub n_estimators: usize,
}

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Leaf(f64),
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    fn predict(&self, row: &[f64]) -> f64 {
        let mut idx = 0;
        loop {
            match self.nodes[idx] {
                Node::Leaf(v) => return v,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => idx = if row[feature] <= threshold { left } else { right },
            }
        }
    }
}

/// Per-feature bin edges; bin `b` holds values in `(edge[b-1], edge[b]]`.
struct Binned {
    edges: Vec<Vec<f64>>,
    /// Column-major bin indices.
    bins: Vec<Vec<u8>>,
}

impl Binned {
    fn new(x: &Design) -> Self {
        let mut edges = Vec::with_capacity(x.p);
        let mut bins = Vec::with_capacity(x.p);
        let mut col = vec![0.0; x.n];
        for f in 0..x.p {
            for (i, c) in col.iter_mut().enumerate() {
                *c = x.row(i)[f];
            }
            let mut sorted = col.clone();
            sorted.sort_by(f64::total_cmp);
            sorted.dedup();
            let e: Vec<f64> = if sorted.len() <= MAX_BINS {
                sorted
            } else {
                let mut e: Vec<f64> = (1..=MAX_BINS)
                    .map(|q| sorted[(q * sorted.len()) / MAX_BINS - 1])
                    .collect();
                e.dedup();
                e
            };
            let b: Vec<u8> = col
                .iter()
                .map(|&v| e.partition_point(|&edge| edge < v).min(e.len() - 1) as u8)
                .collect();
            edges.push(e);
            bins.push(b);
        }
        Self { edges, bins }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Booster {
    base: f64,
    learning_rate: f64,
    trees: Vec<Tree>,
    loss: Loss,
}

impl Booster {
    /// Raw additive score (log-odds for the logistic loss).
    pub(crate) fn raw(&self, row: &[f64]) -> f64 {
        self.base + self.learning_rate * self.trees.iter().map(|t| t.predict(row)).sum::<f64>()
    }

    pub(crate) fn predict(&self, row: &[f64]) -> f64 {
        match self.loss {
            Loss::Squared => self.raw(row),
            Loss::Logistic => sigmoid(self.raw(row)),
        }
    }
}

struct Grower<'a> {
    binned: &'a Binned,
    grad: &'a [f64],
    hess: &'a [f64],
    params: BoostParams,
    nodes: Vec<Node>,
}

impl Grower<'_> {
    fn leaf_value(&self, rows: &[usize]) -> f64 {
        let (g, h) = rows
            .iter()
            .fold((0.0, 0.0), |(g, h), &i| (g + self.grad[i], h + self.hess[i]));
        -g / (h + L2)
    }

    fn grow(&mut self, rows: &mut [usize], depth: usize) -> usize {
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf(0.0));
        let min_leaf = self.params.min_samples_leaf.max(1);
        let split = if depth < self.params.max_depth && rows.len() >= 2 * min_leaf {
            self.best_split(rows, min_leaf)
        } else {
            None
        };
        match split {
            None => {
                self.nodes[id] = Node::Leaf(self.leaf_value(rows));
            }
            Some((feature, bin)) => {
                let col = &self.binned.bins[feature];
                let mut k = 0;
                for j in 0..rows.len() {
                    if col[rows[j]] as usize <= bin {
                        rows.swap(j, k);
                        k += 1;
                    }
                }
                let threshold = self.binned.edges[feature][bin];
                let (l, r) = rows.split_at_mut(k);
                let left = self.grow(l, depth + 1);
                let right = self.grow(r, depth + 1);
                self.nodes[id] = Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                };
            }
        }
        id
    }

    fn best_split(&self, rows: &[usize], min_leaf: usize) -> Option<(usize, usize)> {
        let (g_tot, h_tot) = rows
            .iter()
            .fold((0.0, 0.0), |(g, h), &i| (g + self.grad[i], h + self.hess[i]));
        let parent = g_tot * g_tot / (h_tot + L2);
        let n = rows.len();
        let mut best: Option<(f64, usize, usize)> = None;
        let mut hg = [0.0f64; MAX_BINS];
        let mut hh = [0.0f64; MAX_BINS];
        let mut hc = [0usize; MAX_BINS];
        for (f, col) in self.binned.bins.iter().enumerate() {
            let nb = self.binned.edges[f].len();
            if nb < 2 {
                continue;
            }
            hg[..nb].fill(0.0);
            hh[..nb].fill(0.0);
            hc[..nb].fill(0);
            for &i in rows {
                let b = col[i] as usize;
                hg[b] += self.grad[i];
                hh[b] += self.hess[i];
                hc[b] += 1;
            }
            let (mut gl, mut hl, mut cl) = (0.0, 0.0, 0usize);
            for b in 0..nb - 1 {
                gl += hg[b];
                hl += hh[b];
                cl += hc[b];
                if cl < min_leaf {
                    continue;
                }
                if n - cl < min_leaf {
                    break;
                }
                let (gr, hr) = (g_tot - gl, h_tot - hl);
                let gain = gl * gl / (hl + L2) + gr * gr / (hr + L2) - parent;
                if gain > MIN_GAIN && best.map_or(true, |(bg, _, _)| gain > bg) {
                    best = Some((gain, f, b));
                }
            }
        }
        best.map(|(_, f, b)| (f, b))
    }
}

/// Fits a booster on targets `y` (in `[0, 1]` for the logistic loss).
pub(crate) fn fit_booster(x: &Design, y: &[f64], loss: Loss, params: BoostParams) -> Booster {
    let n = x.n;
    let mean = y.iter().sum::<f64>() / n as f64;
    let base = match loss {
        Loss::Squared => mean,
        Loss::Logistic => {
            let m = mean.clamp(1e-6, 1.0 - 1e-6);
            (m / (1.0 - m)).ln()
        }
    };
    let binned = Binned::new(x);
    let mut raw = vec![base; n];
    let mut grad = vec![0.0; n];
    let mut hess = vec![1.0; n];
    let mut trees = Vec::with_capacity(params.n_estimators);
    let mut rows: Vec<usize> = (0..n).collect();
    for _ in 0..params.n_estimators {
        for i in 0..n {
            match loss {
                Loss::Squared => {
                    grad[i] = raw[i] - y[i];
                }
                Loss::Logistic => {
                    let p = sigmoid(raw[i]);
                    grad[i] = p - y[i];
                    hess[i] = (p * (1.0 - p)).max(1e-12);
                }
            }
        }
        rows.iter_mut().enumerate().for_each(|(i, r)| *r = i);
        let mut grower = Grower {
            binned: &binned,
            grad: &grad,
            hess: &hess,
            params,
            nodes: Vec::new(),
        };
        grower.grow(&mut rows, 0);
        let tree = Tree {
            nodes: grower.nodes,
        };
        for (i, r) in raw.iter_mut().enumerate() {
            *r += params.learning_rate * tree.predict(x.row(i));
        }
        trees.push(tree);
    }
    Booster {
        base,
        learning_rate: params.learning_rate,
        trees,
        loss,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(depth: usize, leaf: usize) -> BoostParams {
        BoostParams {
            learning_rate: 0.3,
            max_depth: depth,
            min_samples_leaf: leaf,
            n_estimators: 100,
        }
    }

    #[test]
    fn fits_a_step_function() {
        let n = 200;
        let data: Vec<f64> = (0..n).map(|i| i as f64 / n as f64).collect();
        let y: Vec<f64> = data.iter().map(|&v| if v > 0.5 { 1.0 } else { 0.0 }).collect();
        let x = Design { n, p: 1, data };
        let b = fit_booster(&x, &y, Loss::Squared, params(2, 5));
        assert!(b.predict(&[0.1]) < 0.05);
        assert!(b.predict(&[0.9]) > 0.95);
    }

    #[test]
    fn logistic_loss_stays_in_unit_interval() {
        let n = 100;
        let data: Vec<f64> = (0..n).map(|i| (i % 10) as f64).collect();
        let y: Vec<f64> = data.iter().map(|&v| if v >= 5.0 { 1.0 } else { 0.0 }).collect();
        let x = Design { n, p: 1, data };
        let b = fit_booster(&x, &y, Loss::Logistic, params(3, 5));
        for v in 0..10 {
            let p = b.predict(&[v as f64]);
            assert!((0.0..=1.0).contains(&p));
        }
        assert!(b.predict(&[9.0]) > 0.9 && b.predict(&[0.0]) < 0.1);
    }

    #[test]
    fn min_samples_leaf_blocks_tiny_splits() {
        // Only 4 rows: with min_samples_leaf = 3 no split is possible.
        let x = Design { n: 4, p: 1, data: vec![0.0, 1.0, 2.0, 3.0] };
        let y = [0.0, 0.0, 1.0, 1.0];
        let b = fit_booster(&x, &y, Loss::Squared, params(3, 3));
        assert_eq!(b.predict(&[0.0]), b.predict(&[3.0]));
    }
}
