//! Tree growing: grouped half-samples, honest subsample partitioning, and
//! exact split search over observed covariate values.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{ForestConfig, ForestKind, ForestModel, Node, Tree, TREES_PER_GROUP};
use crate::matrix::Matrix;
use crate::stats;

const GROUP_SEED_SALT: u64 = 0x9d2c_5680_u64;

pub(super) enum GrowTask<'a> {
    Regression {
        x: &'a Matrix,
        y: &'a [f64],
    },
    Causal {
        x: &'a Matrix,
        gamma_y: &'a [f64],
        gamma_p: &'a [f64],
        treated: &'a [bool],
    },
}

impl<'a> GrowTask<'a> {
    fn x(&self) -> &Matrix {
        match self {
            GrowTask::Regression { x, .. } => x,
            GrowTask::Causal { x, .. } => x,
        }
    }

    fn kind(&self) -> ForestKind {
        match self {
            GrowTask::Regression { .. } => ForestKind::Regression,
            GrowTask::Causal { .. } => ForestKind::Causal,
        }
    }
}

pub(super) fn grow_forest(task: &GrowTask, cfg: &ForestConfig) -> ForestModel {
    let x = task.x();
    let n = x.nrows();
    let trees: Vec<Tree> = (0..cfg.num_trees)
        .into_par_iter()
        .map(|b| grow_tree(task, cfg, n, b))
        .collect();
    ForestModel {
        kind: task.kind(),
        config: cfg.clone(),
        trees,
        n_rows: n,
        n_features: x.ncols(),
        schema_hash: stats::fnv1a(&(x.ncols() as u64).to_le_bytes()),
        trees_per_group: TREES_PER_GROUP,
    }
}

/// Draws `k` distinct items from `pool` (order randomized).
fn sample_from<T: Copy>(rng: &mut ChaCha8Rng, pool: &[T], k: usize) -> Vec<T> {
    let k = k.min(pool.len());
    let mut shuffled: Vec<T> = pool.to_vec();
    shuffled.shuffle(rng);
    shuffled.truncate(k);
    shuffled
}

fn grow_tree(task: &GrowTask, cfg: &ForestConfig, n: usize, tree_index: usize) -> Tree {
    let group = tree_index / TREES_PER_GROUP;
    // Trees in a group share one half-sample; the group seed depends only on
    // the group index so the pair draws identical halves.
    let mut group_rng =
        ChaCha8Rng::seed_from_u64(stats::derive_seed(cfg.master_seed ^ GROUP_SEED_SALT, group as u64));
    let mut tree_rng =
        ChaCha8Rng::seed_from_u64(stats::derive_seed(cfg.master_seed, tree_index as u64));

    let treated = match task {
        GrowTask::Causal { treated, .. } => Some(*treated),
        GrowTask::Regression { .. } => None,
    };

    // Half-sample, stratified by treated flag for causal forests so both
    // groups stay represented.
    let half = match treated {
        Some(flags) => {
            let treated_pool: Vec<u32> =
                (0..n as u32).filter(|&i| flags[i as usize]).collect();
            let control_pool: Vec<u32> =
                (0..n as u32).filter(|&i| !flags[i as usize]).collect();
            let mut half = sample_from(&mut group_rng, &treated_pool, div_ceil(treated_pool.len(), 2));
            half.extend(sample_from(&mut group_rng, &control_pool, div_ceil(control_pool.len(), 2)));
            half
        }
        None => {
            let pool: Vec<u32> = (0..n as u32).collect();
            sample_from(&mut group_rng, &pool, div_ceil(n, 2))
        }
    };

    // Tree subsample inside the half-sample.
    let target = ((cfg.subsample_fraction * n as f64).round() as usize).max(2);
    let subsample = if target >= half.len() {
        half
    } else {
        sample_from(&mut tree_rng, &half, target)
    };

    // Honesty partition: split half selects splits, estimate half fills
    // leaves. Stratified for causal forests.
    let (split_rows, est_rows) = match treated {
        Some(flags) => {
            let tr: Vec<u32> = subsample.iter().copied().filter(|&i| flags[i as usize]).collect();
            let co: Vec<u32> = subsample.iter().copied().filter(|&i| !flags[i as usize]).collect();
            let (mut s1, e1) = honesty_split(&mut tree_rng, tr, cfg.honesty_fraction);
            let (s2, e2) = honesty_split(&mut tree_rng, co, cfg.honesty_fraction);
            let mut est = e1;
            s1.extend(s2);
            est.extend(e2);
            (s1, est)
        }
        None => honesty_split(&mut tree_rng, subsample, cfg.honesty_fraction),
    };

    let mut builder = TreeBuilder { task, cfg, rng: tree_rng, nodes: Vec::new() };
    builder.build(split_rows.clone(), est_rows.clone());

    let mut split_sorted = split_rows;
    split_sorted.sort_unstable();
    let mut est_sorted = est_rows;
    est_sorted.sort_unstable();
    Tree { nodes: builder.nodes, split_rows: split_sorted, est_rows: est_sorted }
}

fn div_ceil(a: usize, b: usize) -> usize {
    (a + b - 1) / b
}

fn honesty_split(
    rng: &mut ChaCha8Rng,
    mut rows: Vec<u32>,
    honesty_fraction: f64,
) -> (Vec<u32>, Vec<u32>) {
    rows.shuffle(rng);
    if rows.len() < 2 {
        return (rows, Vec::new());
    }
    let split_n = ((honesty_fraction * rows.len() as f64).round() as usize)
        .clamp(1, rows.len() - 1);
    let est = rows.split_off(split_n);
    (rows, est)
}

struct TreeBuilder<'a, 'b> {
    task: &'b GrowTask<'a>,
    cfg: &'b ForestConfig,
    rng: ChaCha8Rng,
    nodes: Vec<Node>,
}

struct BestSplit {
    feature: u32,
    threshold: f64,
    score: f64,
}

impl<'a, 'b> TreeBuilder<'a, 'b> {
    fn build(&mut self, split_rows: Vec<u32>, est_rows: Vec<u32>) {
        self.nodes.push(Node::Leaf { value: f64::NAN, rows: Vec::new() });
        let mut stack = vec![(0usize, split_rows, est_rows)];
        while let Some((idx, srows, erows)) = stack.pop() {
            match self.find_best_split(&srows, &erows) {
                Some(best) => {
                    let x = self.task.x();
                    let f = best.feature as usize;
                    let (sl, sr): (Vec<u32>, Vec<u32>) =
                        srows.iter().partition(|&&r| x.get(r as usize, f) <= best.threshold);
                    let (el, er): (Vec<u32>, Vec<u32>) =
                        erows.iter().partition(|&&r| x.get(r as usize, f) <= best.threshold);
                    let left = self.nodes.len() as u32;
                    self.nodes.push(Node::Leaf { value: f64::NAN, rows: Vec::new() });
                    let right = self.nodes.len() as u32;
                    self.nodes.push(Node::Leaf { value: f64::NAN, rows: Vec::new() });
                    self.nodes[idx] =
                        Node::Split { feature: best.feature, threshold: best.threshold, left, right };
                    stack.push((left as usize, sl, el));
                    stack.push((right as usize, sr, er));
                }
                None => {
                    self.nodes[idx] = self.make_leaf(erows);
                }
            }
        }
    }

    fn make_leaf(&self, est_rows: Vec<u32>) -> Node {
        let value = match self.task {
            GrowTask::Regression { y, .. } => {
                if est_rows.is_empty() {
                    f64::NAN
                } else {
                    est_rows.iter().map(|&r| y[r as usize]).sum::<f64>() / est_rows.len() as f64
                }
            }
            GrowTask::Causal { gamma_y, gamma_p, .. } => {
                let mut num = 0.0;
                let mut den = 0.0;
                for &r in &est_rows {
                    let gy = gamma_y[r as usize];
                    let gp = gamma_p[r as usize];
                    num += gy * gp;
                    den += gp * gp;
                }
                if den > 0.0 {
                    num / den
                } else {
                    f64::NAN
                }
            }
        };
        Node::Leaf { value, rows: est_rows }
    }

    fn find_best_split(&mut self, srows: &[u32], erows: &[u32]) -> Option<BestSplit> {
        let n_s = srows.len();
        if n_s < 2 * self.cfg.min_leaf_size {
            return None;
        }
        let x = self.task.x();
        let n_features = x.ncols();
        let mut feature_order: Vec<usize> = (0..n_features).collect();
        feature_order.shuffle(&mut self.rng);
        feature_order.truncate(self.cfg.mtry);

        let mut best: Option<BestSplit> = None;
        for &f in &feature_order {
            let candidate = match self.task {
                GrowTask::Regression { y, .. } => self.scan_regression(srows, erows, f, y),
                GrowTask::Causal { gamma_y, gamma_p, treated, .. } => {
                    self.scan_causal(srows, erows, f, gamma_y, gamma_p, treated)
                }
            };
            if let Some(c) = candidate {
                if best.as_ref().map_or(true, |b| c.score > b.score) {
                    best = Some(c);
                }
            }
        }
        best
    }

    /// Sorted (value, row) pairs for a feature.
    fn sorted_by_feature(&self, rows: &[u32], f: usize) -> Vec<(f64, u32)> {
        let x = self.task.x();
        let mut pairs: Vec<(f64, u32)> =
            rows.iter().map(|&r| (x.get(r as usize, f), r)).collect();
        pairs.sort_unstable_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        pairs
    }

    fn scan_regression(
        &self,
        srows: &[u32],
        erows: &[u32],
        f: usize,
        y: &[f64],
    ) -> Option<BestSplit> {
        let svals = self.sorted_by_feature(srows, f);
        let evals = self.sorted_by_feature(erows, f);
        let n_s = svals.len();
        let n_e = evals.len();
        let min_leaf = self.cfg.min_leaf_size;

        let total_sum: f64 = svals.iter().map(|&(_, r)| y[r as usize]).sum();
        let parent_term = total_sum * total_sum / n_s as f64;

        let mut best: Option<BestSplit> = None;
        let mut left_sum = 0.0;
        let mut eptr = 0usize;
        for c in 0..n_s - 1 {
            left_sum += y[svals[c].1 as usize];
            if svals[c].0 >= svals[c + 1].0 {
                continue;
            }
            let threshold = svals[c].0;
            let n_l = c + 1;
            let n_r = n_s - n_l;
            if n_l < min_leaf || n_r < min_leaf {
                continue;
            }
            while eptr < n_e && evals[eptr].0 <= threshold {
                eptr += 1;
            }
            // Keep every leaf populated on the estimate half.
            if eptr == 0 || eptr == n_e {
                continue;
            }
            let right_sum = total_sum - left_sum;
            let gain =
                left_sum * left_sum / n_l as f64 + right_sum * right_sum / n_r as f64 - parent_term;
            if gain > 0.0 && best.as_ref().map_or(true, |b| gain > b.score) {
                best = Some(BestSplit { feature: f as u32, threshold, score: gain });
            }
        }
        best
    }

    #[allow(clippy::too_many_arguments)]
    fn scan_causal(
        &self,
        srows: &[u32],
        erows: &[u32],
        f: usize,
        gamma_y: &[f64],
        gamma_p: &[f64],
        treated: &[bool],
    ) -> Option<BestSplit> {
        let svals = self.sorted_by_feature(srows, f);
        let evals = self.sorted_by_feature(erows, f);
        let n_s = svals.len();
        let n_e = evals.len();
        let min_leaf = self.cfg.min_leaf_size;
        let min_t = self.cfg.min_treated_per_leaf;
        let min_c = self.cfg.min_control_per_leaf;

        let mut total_a = 0.0; // sum of gamma_y * gamma_p
        let mut total_b = 0.0; // sum of gamma_p^2
        for &(_, r) in &svals {
            let gy = gamma_y[r as usize];
            let gp = gamma_p[r as usize];
            total_a += gy * gp;
            total_b += gp * gp;
        }
        let total_treated_e = evals.iter().filter(|&&(_, r)| treated[r as usize]).count();
        let total_control_e = n_e - total_treated_e;
        if total_treated_e < 2 * min_t || total_control_e < 2 * min_c {
            return None;
        }
        let den_floor = 1e-12 * total_b.max(1e-300);

        let mut best: Option<BestSplit> = None;
        let mut left_a = 0.0;
        let mut left_b = 0.0;
        let mut eptr = 0usize;
        let mut left_treated_e = 0usize;
        for c in 0..n_s - 1 {
            let r = svals[c].1 as usize;
            let gy = gamma_y[r];
            let gp = gamma_p[r];
            left_a += gy * gp;
            left_b += gp * gp;
            if svals[c].0 >= svals[c + 1].0 {
                continue;
            }
            let threshold = svals[c].0;
            let n_l = c + 1;
            let n_r = n_s - n_l;
            if n_l < min_leaf || n_r < min_leaf {
                continue;
            }
            while eptr < n_e && evals[eptr].0 <= threshold {
                if treated[evals[eptr].1 as usize] {
                    left_treated_e += 1;
                }
                eptr += 1;
            }
            let left_control_e = eptr - left_treated_e;
            let right_treated_e = total_treated_e - left_treated_e;
            let right_control_e = total_control_e - left_control_e;
            if left_treated_e < min_t
                || right_treated_e < min_t
                || left_control_e < min_c
                || right_control_e < min_c
            {
                continue;
            }
            let right_a = total_a - left_a;
            let right_b = total_b - left_b;
            if left_b <= den_floor || right_b <= den_floor {
                continue;
            }
            let tau_l = left_a / left_b;
            let tau_r = right_a / right_b;
            let nl = n_l as f64;
            let nr = n_r as f64;
            let nn = n_s as f64;
            let heterogeneity = (nl * nr) / (nn * nn) * (tau_l - tau_r) * (tau_l - tau_r);
            let imbalance = (nl - nr).abs() / nn;
            let score = heterogeneity - self.cfg.imbalance_penalty * imbalance;
            if score > 0.0 && best.as_ref().map_or(true, |b| score > b.score) {
                best = Some(BestSplit { feature: f as u32, threshold, score });
            }
        }
        best
    }
}
