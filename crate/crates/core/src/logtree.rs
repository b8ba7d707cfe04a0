//! Log-space sampling tree.
//!
//! A complete binary tree stored in a flat array whose leaves hold
//! unnormalized log-weights and whose internal nodes hold the logsumexp of
//! their two children. The root is therefore the log-normalizer of the
//! softmax over all leaves. Updates and draws both cost O(log n) and never
//! leave log space, so logits spanning hundreds of orders of magnitude can
//! be stored without the underflow/overflow a plain sum-tree suffers.
//!
//! Layout: node 0 is the root, node `p` has children `2p + 1` and `2p + 2`,
//! and leaf `i` lives at `leaves - 1 + i` where `leaves` is the capacity
//! rounded up to a power of two. Padding leaves hold `-inf`.

use rand::Rng;

use crate::error::{Error, Result};

/// Stable `ln(e^a + e^b)`.
///
/// Shifts both arguments by their maximum so the only exponential evaluated
/// is `e^{-|a-b|} <= 1`, then uses `ln_1p` for the remaining sum.
#[inline]
pub fn log_add_exp(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    if hi == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    hi + (lo - hi).exp().ln_1p()
}

/// Stable logsumexp over a slice; `-inf` for an empty slice.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|&x| (x - m).exp()).sum::<f64>().ln()
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogSumExpTree {
    capacity: usize,
    leaves: usize,
    nodes: Vec<f64>,
    written: Vec<bool>,
    size: usize,
    writes: u64,
}

impl LogSumExpTree {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::invalid("tree capacity must be at least 1"));
        }
        let leaves = capacity.next_power_of_two();
        Ok(Self {
            capacity,
            leaves,
            nodes: vec![f64::NEG_INFINITY; 2 * leaves - 1],
            written: vec![false; capacity],
            size: 0,
            writes: 0,
        })
    }

    /// Builds a tree from a vector of logits in O(n).
    ///
    /// The node array is identical to the one obtained by calling
    /// [`set_logit`](Self::set_logit) on every entry in turn. An empty input
    /// yields an empty tree of capacity 1 (root `-inf`).
    pub fn from_logits(logits: &[f64]) -> Result<Self> {
        for (i, &l) in logits.iter().enumerate() {
            check_logit(l).map_err(|e| Error::invalid(format!("logit {i}: {e}")))?;
        }
        let mut tree = Self::new(logits.len().max(1))?;
        let base = tree.leaves - 1;
        tree.nodes[base..base + logits.len()].copy_from_slice(logits);
        for p in (0..base).rev() {
            tree.nodes[p] = log_add_exp(tree.nodes[2 * p + 1], tree.nodes[2 * p + 2]);
        }
        tree.written[..logits.len()].fill(true);
        tree.size = logits.len();
        tree.writes = tree.nodes.len() as u64;
        Ok(tree)
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Number of distinct leaves that have been written at least once.
    pub fn size(&self) -> usize {
        self.size
    }

    /// Log of the normalizer, i.e. the root value.
    pub fn log_norm(&self) -> f64 {
        self.nodes[0]
    }

    pub fn logit(&self, index: usize) -> Result<f64> {
        self.check_index(index)?;
        Ok(self.nodes[self.leaves - 1 + index])
    }

    /// Raw node array (root first). Exposed for diagnostics and tests.
    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    /// Leaf values, excluding padding.
    pub fn leaf_logits(&self) -> &[f64] {
        let base = self.leaves - 1;
        &self.nodes[base..base + self.capacity]
    }

    /// Total number of node writes performed so far.
    pub fn node_writes(&self) -> u64 {
        self.writes
    }

    pub fn set_logit(&mut self, index: usize, logit: f64) -> Result<()> {
        self.check_index(index)?;
        check_logit(logit)?;
        if !self.written[index] {
            self.written[index] = true;
            self.size += 1;
        }
        let mut n = self.leaves - 1 + index;
        self.nodes[n] = logit;
        self.writes += 1;
        while n != 0 {
            n = (n - 1) / 2;
            self.nodes[n] = log_add_exp(self.nodes[2 * n + 1], self.nodes[2 * n + 2]);
            self.writes += 1;
        }
        Ok(())
    }

    /// `ln P(index)` under the softmax over leaves.
    pub fn log_prob(&self, index: usize) -> Result<f64> {
        let leaf = self.logit(index)?;
        if leaf == f64::NEG_INFINITY {
            return Ok(f64::NEG_INFINITY);
        }
        Ok(leaf - self.log_norm())
    }

    /// Maps `u ∈ [0, 1)` to a leaf index.
    ///
    /// Descends from the root with `r = ln u + root`: go left while
    /// `r < left.value`, otherwise go right and set
    /// `r ← r + ln_1p(-e^{left.value - r})`. A child holding `-inf` is never
    /// entered, which also absorbs rounding that pushes `r` past a subtree's
    /// mass, so the result is always a live leaf.
    pub fn sample(&self, u: f64) -> Result<usize> {
        if self.log_norm() == f64::NEG_INFINITY {
            return Err(Error::EmptyDistribution);
        }
        if !(0.0..1.0).contains(&u) {
            return Err(Error::invalid(format!("u = {u} outside [0, 1)")));
        }
        let mut r = u.ln() + self.log_norm();
        let mut n = 0;
        while n < self.leaves - 1 {
            let left = 2 * n + 1;
            let right = left + 1;
            let v = self.nodes[left];
            if self.nodes[right] == f64::NEG_INFINITY || (r < v && v != f64::NEG_INFINITY) {
                n = left;
            } else if v == f64::NEG_INFINITY {
                n = right;
            } else {
                n = right;
                r += (-(v - r).exp()).ln_1p();
            }
        }
        Ok(n + 1 - self.leaves)
    }

    pub fn sample_with<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<usize> {
        self.sample(rng.random::<f64>())
    }

    pub fn sample_batch<R: Rng + ?Sized>(&self, rng: &mut R, n: usize) -> Result<Vec<usize>> {
        (0..n).map(|_| self.sample_with(rng)).collect()
    }

    fn check_index(&self, index: usize) -> Result<()> {
        if index >= self.capacity {
            return Err(Error::invalid(format!(
                "leaf index {index} out of range for capacity {}",
                self.capacity
            )));
        }
        Ok(())
    }
}

fn check_logit(l: f64) -> Result<()> {
    if l.is_nan() || l == f64::INFINITY {
        return Err(Error::invalid(format!(
            "logit must be finite or -inf, got {l}"
        )));
    }
    Ok(())
}
