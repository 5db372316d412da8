//! Bucket-cluster negative sampling.
//!
//! Items start in buckets given by their attribute category. Each refresh
//! recomputes bucket centres as member means and reassigns every item by a
//! score that mixes the original bucket (weight `1 - λ`) with closeness to
//! each centre (weight `λ`). Negatives for an anchor are drawn from the other
//! buckets, proportionally to bucket size.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use serde::Serialize;

use crate::corpus::{Attributes, ItemId};
use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::scalar::Scalar;

/// How the distance term enters the assignment score.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum AssignRule {
    /// `λ · (1 − ‖e−μ_b‖² / Σ_k ‖e−μ_k‖²)`: closer centres score higher.
    #[default]
    Nearest,
    /// `λ · ‖e−μ_b‖² / Σ_k ‖e−μ_k‖²` taken verbatim.
    Literal,
}

impl std::str::FromStr for AssignRule {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "nearest" => Ok(AssignRule::Nearest),
            "literal" => Ok(AssignRule::Literal),
            other => Err(format!("unknown assignment rule {other:?}")),
        }
    }
}

#[derive(Clone, Debug)]
pub struct BucketState<T> {
    k: usize,
    centers: Option<Vec<Vec<T>>>,
    /// Indexed by item; slot 0 (padding) is unused.
    orig: Vec<usize>,
    assign: Vec<usize>,
    members: Vec<Vec<ItemId>>,
    pub lambda: f64,
    pub n_neg: usize,
    pub rule: AssignRule,
}

#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct BucketCensus {
    pub sizes: Vec<usize>,
    pub reseeded: Vec<usize>,
}

/// Folds categories onto `k` buckets: identity when there are at most `k`
/// categories, `category mod k` otherwise.
pub fn init_buckets<T: Scalar>(attributes: &Attributes, k: usize, lambda: f64, n_neg: usize) -> BucketState<T> {
    assert!(k >= 2, "at least two buckets are required");
    let fold = attributes.num_categories() > k;
    let mut orig = vec![0; attributes.num_items() + 1];
    for (i, slot) in orig.iter_mut().enumerate().skip(1) {
        let c = attributes.category(ItemId(i as u32)).0 as usize;
        *slot = if fold { c % k } else { c };
    }
    let mut state = BucketState {
        k,
        centers: None,
        assign: orig.clone(),
        orig,
        members: Vec::new(),
        lambda,
        n_neg,
        rule: AssignRule::Nearest,
    };
    state.rebuild_members();
    state
}

fn squared_distance<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| (x - y) * (x - y)).sum()
}

impl<T: Scalar> BucketState<T> {
    pub fn num_buckets(&self) -> usize {
        self.k
    }

    pub fn num_items(&self) -> usize {
        self.orig.len() - 1
    }

    pub fn original(&self, item: ItemId) -> usize {
        self.orig[item.index()]
    }

    pub fn bucket(&self, item: ItemId) -> usize {
        self.assign[item.index()]
    }

    pub fn members(&self, bucket: usize) -> &[ItemId] {
        &self.members[bucket]
    }

    pub fn centers(&self) -> Option<&[Vec<T>]> {
        self.centers.as_deref()
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.members.iter().map(Vec::len).collect()
    }

    fn rebuild_members(&mut self) {
        self.members = vec![Vec::new(); self.k];
        for (i, &b) in self.assign.iter().enumerate().skip(1) {
            self.members[b].push(ItemId(i as u32));
        }
    }

    /// Sets each centre to the mean embedding of its current members. An
    /// empty bucket is reseeded at a uniformly drawn item's embedding; the
    /// reseeded bucket ids are returned.
    pub fn recompute_centers<R: Rng + ?Sized>(&mut self, embeddings: &Tensor<T>, rng: &mut R) -> Vec<usize> {
        let d = embeddings.cols();
        let mut sums = vec![vec![T::zero(); d]; self.k];
        let mut counts = vec![0usize; self.k];
        for i in 1..=self.num_items() {
            let b = self.assign[i];
            counts[b] += 1;
            for (s, &v) in sums[b].iter_mut().zip(embeddings.row(i)) {
                *s += v;
            }
        }
        let mut reseeded = Vec::new();
        for b in 0..self.k {
            if counts[b] == 0 {
                let pick = rng.random_range(1..=self.num_items());
                sums[b] = embeddings.row(pick).to_vec();
                reseeded.push(b);
                log::warn!("bucket {b} empty; reseeded at item {pick}");
            } else {
                let n = T::from_usize_lossy(counts[b]);
                sums[b].iter_mut().for_each(|s| *s /= n);
            }
        }
        self.centers = Some(sums);
        reseeded
    }

    /// Best bucket for `item` with embedding `e`; ties go to the smallest id.
    pub fn assign_bucket(&self, item: ItemId, e: &[T], lambda: f64) -> usize {
        let centers = self.centers.as_ref().expect("centers must be computed before assignment");
        let dists: Vec<f64> = centers.iter().map(|c| squared_distance(e, c).as_f64()).collect();
        let total: f64 = dists.iter().sum();
        let orig = self.orig[item.index()];
        let mut best = 0;
        let mut best_score = f64::NEG_INFINITY;
        for (b, &dist) in dists.iter().enumerate() {
            let ratio = if total > 0.0 { dist / total } else { 0.0 };
            let closeness = match self.rule {
                AssignRule::Nearest => 1.0 - ratio,
                AssignRule::Literal => ratio,
            };
            let prior = if b == orig { 1.0 } else { 0.0 };
            let score = (1.0 - lambda) * prior + lambda * closeness;
            if score > best_score {
                best = b;
                best_score = score;
            }
        }
        best
    }

    /// Recomputes centres and reassigns every item (one epoch refresh).
    pub fn refresh<R: Rng + ?Sized>(&mut self, embeddings: &Tensor<T>, rng: &mut R) -> BucketCensus {
        let reseeded = self.recompute_centers(embeddings, rng);
        let assign: Vec<usize> = (0..=self.num_items())
            .map(|i| {
                if i == 0 {
                    0
                } else {
                    self.assign_bucket(ItemId(i as u32), embeddings.row(i), self.lambda)
                }
            })
            .collect();
        self.assign = assign;
        self.rebuild_members();
        BucketCensus {
            sizes: self.sizes(),
            reseeded,
        }
    }

    /// `n_neg` items drawn with replacement from buckets other than the
    /// anchor's: bucket by size, then an item uniformly within it.
    pub fn draw_negatives<R: Rng + ?Sized>(&self, anchor: ItemId, rng: &mut R) -> Result<Vec<ItemId>> {
        if self.n_neg == 0 {
            return Ok(Vec::new());
        }
        let own = self.assign[anchor.index()];
        let weights: Vec<usize> = self
            .members
            .iter()
            .enumerate()
            .map(|(b, m)| if b == own { 0 } else { m.len() })
            .collect();
        let dist = WeightedIndex::new(&weights).map_err(|_| Error::SamplingImpossible { anchor: anchor.0 })?;
        Ok((0..self.n_neg)
            .map(|_| {
                let members = &self.members[dist.sample(rng)];
                members[rng.random_range(0..members.len())]
            })
            .collect())
    }
}

/// Uniform negatives over all items except the anchor (the ablation that
/// replaces bucket sampling).
pub fn draw_uniform_negatives<R: Rng + ?Sized>(
    num_items: usize,
    anchor: ItemId,
    n: usize,
    rng: &mut R,
) -> Result<Vec<ItemId>> {
    if n == 0 {
        return Ok(Vec::new());
    }
    if num_items < 2 {
        return Err(Error::SamplingImpossible { anchor: anchor.0 });
    }
    Ok((0..n)
        .map(|_| {
            // Draw from 1..=N-1 and skip over the anchor.
            let raw = rng.random_range(1..num_items as u32);
            ItemId(if raw >= anchor.0 { raw + 1 } else { raw })
        })
        .collect())
}
