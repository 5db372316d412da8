//! Full-ranking evaluation with Recall@K and NDCG@K.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::Serialize;

use crate::corpus::{ItemId, Split, UserId};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const DEFAULT_KS: [usize; 2] = [10, 20];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalSplit {
    Train,
    Validation,
    Test,
}

impl std::str::FromStr for EvalSplit {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "train" => Ok(EvalSplit::Train),
            "val" | "validation" => Ok(EvalSplit::Validation),
            "test" => Ok(EvalSplit::Test),
            other => Err(format!("unknown split {other:?}")),
        }
    }
}

impl std::fmt::Display for EvalSplit {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            EvalSplit::Train => "train",
            EvalSplit::Validation => "validation",
            EvalSplit::Test => "test",
        })
    }
}

/// One held-out next-item prediction.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EvalEvent {
    pub user: UserId,
    pub prefix: Vec<ItemId>,
    pub target: ItemId,
}

impl EvalEvent {
    /// Items in the prefix other than the target itself.
    pub fn exclusions(&self) -> BTreeSet<ItemId> {
        let mut set: BTreeSet<ItemId> = self.prefix.iter().copied().collect();
        set.remove(&self.target);
        set
    }
}

/// Every held-out event of `which`, per user in split order. The second
/// value counts users without any event.
pub fn split_events(split: &Split, which: EvalSplit) -> (Vec<EvalEvent>, usize) {
    let mut events = Vec::new();
    let mut skipped = 0;
    for (k, &user) in split.users.iter().enumerate() {
        let mut history: Vec<ItemId> = Vec::new();
        let held: &[ItemId] = match which {
            EvalSplit::Train => {
                history.extend(split.train[k].first().copied());
                split.train[k].get(1..).unwrap_or(&[])
            }
            EvalSplit::Validation => {
                history.extend_from_slice(&split.train[k]);
                &split.val[k]
            }
            EvalSplit::Test => {
                history.extend_from_slice(&split.train[k]);
                history.extend_from_slice(&split.val[k]);
                &split.test[k]
            }
        };
        if held.is_empty() {
            skipped += 1;
            continue;
        }
        for &target in held {
            events.push(EvalEvent {
                user,
                prefix: history.clone(),
                target,
            });
            history.push(target);
        }
    }
    (events, skipped)
}

/// `1 + #{non-excluded items scoring >= target}` excluding the target
/// itself: ties count against the target. `scores` is indexed by item id;
/// slot 0 (padding) is ignored.
pub fn full_rank<T: Scalar>(scores: &[T], target: ItemId, exclusions: &BTreeSet<ItemId>) -> Result<usize> {
    if target.is_pad() || target.index() >= scores.len() {
        return Err(Error::TargetOutOfVocab(target.0));
    }
    if exclusions.contains(&target) {
        return Err(Error::TargetExcluded(target.0));
    }
    let t = scores[target.index()];
    let better = (1..scores.len())
        .filter(|&i| i != target.index() && !exclusions.contains(&ItemId(i as u32)))
        .filter(|&i| scores[i] >= t)
        .count();
    Ok(better + 1)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Metrics {
    pub recall: f64,
    pub ndcg: f64,
}

pub fn ndcg_at(rank: usize, k: usize) -> f64 {
    if rank <= k {
        1.0 / ((rank + 1) as f64).log2()
    } else {
        0.0
    }
}

/// Mean Recall@K and NDCG@K over `ranks`; zero for an empty list.
pub fn rank_metrics(ranks: &[usize], k: usize) -> Metrics {
    assert!(k >= 1, "K must be positive");
    if ranks.is_empty() {
        return Metrics { recall: 0.0, ndcg: 0.0 };
    }
    let n = ranks.len() as f64;
    let hits = ranks.iter().filter(|&&r| r <= k).count() as f64;
    let gain: f64 = ranks.iter().map(|&r| ndcg_at(r, k)).sum();
    Metrics {
        recall: hits / n,
        ndcg: gain / n,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RankedEvent {
    pub user: UserId,
    pub target: ItemId,
    pub rank: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RankReport {
    pub split: EvalSplit,
    pub ranks: Vec<RankedEvent>,
    pub metrics: BTreeMap<usize, Metrics>,
    pub users_evaluated: usize,
    pub users_skipped: usize,
}

impl RankReport {
    pub fn from_ranks(split: EvalSplit, ranks: Vec<RankedEvent>, users_skipped: usize, ks: &[usize]) -> Self {
        let plain: Vec<usize> = ranks.iter().map(|r| r.rank).collect();
        let metrics = ks.iter().map(|&k| (k, rank_metrics(&plain, k))).collect();
        let users_evaluated = ranks.iter().map(|r| r.user).collect::<BTreeSet<_>>().len();
        RankReport {
            split,
            ranks,
            metrics,
            users_evaluated,
            users_skipped,
        }
    }

    pub fn events(&self) -> usize {
        self.ranks.len()
    }

    pub fn metric(&self, k: usize) -> Option<Metrics> {
        self.metrics.get(&k).copied()
    }

    pub fn to_json_value(&self) -> serde_json::Value {
        let mut map = serde_json::Map::new();
        for (k, m) in &self.metrics {
            map.insert(k.to_string(), serde_json::json!({ "recall": m.recall, "ndcg": m.ndcg }));
        }
        map.insert("users_evaluated".into(), self.users_evaluated.into());
        map.insert("users_skipped".into(), self.users_skipped.into());
        map.insert("events".into(), self.events().into());
        map.insert("split".into(), self.split.to_string().into());
        serde_json::Value::Object(map)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(&self.to_json_value()).expect("report serializes");
        s.push('\n');
        s
    }

    /// Recall and NDCG columns for every K, one data row.
    pub fn to_table(&self, label: &str) -> String {
        let mut header = format!("{:<16}", "model");
        let mut row = format!("{label:<16}");
        for k in self.metrics.keys() {
            header.push_str(&format!(" {:>10}", format!("Recall@{k}")));
        }
        for k in self.metrics.keys() {
            header.push_str(&format!(" {:>10}", format!("NDCG@{k}")));
        }
        for m in self.metrics.values() {
            row.push_str(&format!(" {:>10.4}", m.recall));
        }
        for m in self.metrics.values() {
            row.push_str(&format!(" {:>10.4}", m.ndcg));
        }
        format!(
            "# split={} events={} users={} skipped={} (every held-out event is ranked)\n{header}\n{row}\n",
            self.split,
            self.events(),
            self.users_evaluated,
            self.users_skipped
        )
    }
}

/// Anything that can score the whole catalogue for a user history.
/// Returned scores are indexed by item id, slot 0 unused.
pub trait Scorer<T>: Sync {
    fn score_all(&self, user: UserId, prefix: &[ItemId]) -> Result<Vec<T>>;
}

/// Ranks every event of `which`. Events are scored in parallel unless
/// `serial` is set; results are collected in event order either way.
pub fn evaluate<T: Scalar, S: Scorer<T>>(
    scorer: &S,
    split: &Split,
    which: EvalSplit,
    ks: &[usize],
    serial: bool,
) -> Result<RankReport> {
    let (events, skipped) = split_events(split, which);
    let rank_one = |e: &EvalEvent| -> Result<RankedEvent> {
        let scores = scorer.score_all(e.user, &e.prefix)?;
        let rank = full_rank(&scores, e.target, &e.exclusions())?;
        Ok(RankedEvent {
            user: e.user,
            target: e.target,
            rank,
        })
    };
    let ranks: Vec<RankedEvent> = if serial {
        events.iter().map(rank_one).collect::<Result<_>>()?
    } else {
        events.par_iter().map(rank_one).collect::<Result<_>>()?
    };
    Ok(RankReport::from_ranks(which, ranks, skipped, ks))
}
