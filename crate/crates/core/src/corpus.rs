//! Interaction logs, vocabularies, chronological splits and fixed-length
//! windows.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;

use indexmap::IndexMap;
use serde::Serialize;

use crate::error::{Error, Result};

/// Dense item index. `0` is reserved for padding; real items are `1..=N`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct ItemId(pub u32);

impl ItemId {
    pub const PAD: ItemId = ItemId(0);

    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn is_pad(self) -> bool {
        self.0 == 0
    }
}

impl fmt::Display for ItemId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Dense user index `0..M`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct UserId(pub u32);

impl UserId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// Dense attribute category index.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct CategoryId(pub u32);

#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    users: Vec<String>,
    /// Index 0 holds the padding placeholder.
    items: Vec<String>,
    sequences: Vec<Vec<ItemId>>,
}

#[derive(Clone, Debug, Serialize)]
pub struct CorpusSummary {
    pub users: usize,
    pub items: usize,
    pub interactions: usize,
    pub sparsity: f64,
}

impl Corpus {
    /// Builds a corpus from per-user sequences of external item ids that are
    /// already in chronological order.
    pub fn from_sequences<U, I>(sequences: impl IntoIterator<Item = (U, Vec<I>)>) -> Result<Corpus>
    where
        U: Into<String>,
        I: AsRef<str>,
    {
        let mut builder = CorpusBuilder::default();
        for (user, items) in sequences {
            let u = builder.user(user.into());
            for item in items {
                let i = builder.item(item.as_ref());
                builder.sequences[u].push(i);
            }
        }
        builder.finish()
    }

    pub fn num_users(&self) -> usize {
        self.users.len()
    }

    /// Number of real items `N` (padding excluded).
    pub fn num_items(&self) -> usize {
        self.items.len() - 1
    }

    pub fn user_name(&self, u: UserId) -> &str {
        &self.users[u.index()]
    }

    pub fn item_name(&self, i: ItemId) -> &str {
        &self.items[i.index()]
    }

    pub fn item_id(&self, name: &str) -> Option<ItemId> {
        self.items
            .iter()
            .skip(1)
            .position(|n| n == name)
            .map(|p| ItemId(p as u32 + 1))
    }

    pub fn sequence(&self, u: UserId) -> &[ItemId] {
        &self.sequences[u.index()]
    }

    pub fn sequences(&self) -> &[Vec<ItemId>] {
        &self.sequences
    }

    pub fn users(&self) -> impl Iterator<Item = UserId> {
        (0..self.users.len() as u32).map(UserId)
    }

    pub fn items(&self) -> impl Iterator<Item = ItemId> {
        (1..self.items.len() as u32).map(ItemId)
    }

    pub fn summary(&self) -> CorpusSummary {
        let interactions: usize = self.sequences.iter().map(Vec::len).sum();
        let cells = (self.num_users() * self.num_items()) as f64;
        CorpusSummary {
            users: self.num_users(),
            items: self.num_items(),
            interactions,
            sparsity: 1.0 - interactions as f64 / cells,
        }
    }
}

#[derive(Default)]
struct CorpusBuilder {
    users: IndexMap<String, ()>,
    items: IndexMap<String, ()>,
    sequences: Vec<Vec<ItemId>>,
}

impl CorpusBuilder {
    fn user(&mut self, name: String) -> usize {
        let (idx, fresh) = self.users.insert_full(name, ());
        if fresh.is_none() {
            self.sequences.push(Vec::new());
        }
        idx
    }

    fn item(&mut self, name: &str) -> ItemId {
        if let Some(idx) = self.items.get_index_of(name) {
            return ItemId(idx as u32 + 1);
        }
        let (idx, _) = self.items.insert_full(name.to_string(), ());
        ItemId(idx as u32 + 1)
    }

    fn finish(self) -> Result<Corpus> {
        if self.users.is_empty() || self.items.is_empty() {
            return Err(Error::EmptyCorpus(Default::default()));
        }
        let mut items = vec!["<pad>".to_string()];
        items.extend(self.items.into_keys());
        Ok(Corpus {
            users: self.users.into_keys().collect(),
            items,
            sequences: self.sequences,
        })
    }
}

/// Reads `user \t item \t timestamp` lines. Per-user sequences are sorted by
/// timestamp with ties kept in input order; repeated items are retained.
/// Users and items are numbered in order of first appearance.
pub fn load_sequences(path: &Path) -> Result<Corpus> {
    let text = std::fs::read_to_string(path)?;
    parse_sequences(&text, path)
}

pub fn parse_sequences(text: &str, path: &Path) -> Result<Corpus> {
    let mut builder = CorpusBuilder::default();
    let mut stamped: Vec<Vec<(f64, ItemId)>> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: lineno + 1,
            message,
        };
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(parse_err(format!("expected 3 tab-separated fields, found {}", fields.len())));
        }
        let (user, item, ts) = (fields[0].trim(), fields[1].trim(), fields[2].trim());
        if user.is_empty() || item.is_empty() {
            return Err(parse_err("empty user or item id".into()));
        }
        let ts: f64 = ts
            .parse()
            .ok()
            .filter(|t: &f64| t.is_finite())
            .ok_or_else(|| parse_err(format!("invalid timestamp {ts:?}")))?;
        let u = builder.user(user.to_string());
        if u == stamped.len() {
            stamped.push(Vec::new());
        }
        let i = builder.item(item);
        stamped[u].push((ts, i));
    }
    if stamped.is_empty() {
        return Err(Error::EmptyCorpus(path.to_path_buf()));
    }
    for (seq, events) in builder.sequences.iter_mut().zip(stamped.iter_mut()) {
        // Stable: equal timestamps keep line order.
        events.sort_by(|a, b| a.0.total_cmp(&b.0));
        seq.extend(events.iter().map(|&(_, i)| i));
    }
    builder.finish().map_err(|_| Error::EmptyCorpus(path.to_path_buf()))
}

/// Writes the corpus back as TSV triples using the position as timestamp.
pub fn write_sequences(corpus: &Corpus, path: &Path) -> Result<()> {
    let mut out = String::new();
    for u in corpus.users() {
        for (t, &i) in corpus.sequence(u).iter().enumerate() {
            out.push_str(&format!("{}\t{}\t{}\n", corpus.user_name(u), corpus.item_name(i), t));
        }
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Item categories; index 0 (padding) maps to the unknown category.
#[derive(Clone, Debug, PartialEq)]
pub struct Attributes {
    categories: Vec<CategoryId>,
    names: Vec<String>,
    unknown: CategoryId,
    has_unknown: bool,
}

impl Attributes {
    /// Every item in the unknown category.
    pub fn all_unknown(num_items: usize) -> Attributes {
        Attributes {
            categories: vec![CategoryId(0); num_items + 1],
            names: Vec::new(),
            unknown: CategoryId(0),
            has_unknown: true,
        }
    }

    /// Builds from explicit per-item category names; `None` means unknown.
    pub fn from_names(per_item: &[Option<String>]) -> Attributes {
        let distinct: BTreeSet<&str> = per_item.iter().flatten().map(String::as_str).collect();
        let names: Vec<String> = distinct.into_iter().map(str::to_string).collect();
        let unknown = CategoryId(names.len() as u32);
        let mut categories = vec![unknown];
        categories.extend(per_item.iter().map(|c| match c {
            Some(name) => CategoryId(names.binary_search(name).expect("collected above") as u32),
            None => unknown,
        }));
        let has_unknown = per_item.iter().any(Option::is_none);
        Attributes {
            categories,
            names,
            unknown,
            has_unknown,
        }
    }

    pub fn category(&self, item: ItemId) -> CategoryId {
        self.categories[item.index()]
    }

    pub fn unknown(&self) -> CategoryId {
        self.unknown
    }

    pub fn num_items(&self) -> usize {
        self.categories.len() - 1
    }

    /// Named categories, plus one if any item has no category.
    pub fn num_categories(&self) -> usize {
        self.names.len() + usize::from(self.has_unknown)
    }

    pub fn category_name(&self, c: CategoryId) -> Option<&str> {
        self.names.get(c.0 as usize).map(String::as_str)
    }
}

/// Reads `item \t category` lines. Category strings are mapped to dense ids
/// in sorted order, so the mapping does not depend on line order. Items
/// missing from the file, or not in the corpus, fall into the unknown
/// category.
pub fn load_attributes(path: &Path, corpus: &Corpus) -> Result<Attributes> {
    let text = std::fs::read_to_string(path)?;
    parse_attributes(&text, path, corpus)
}

pub fn parse_attributes(text: &str, path: &Path, corpus: &Corpus) -> Result<Attributes> {
    let lookup: std::collections::HashMap<&str, ItemId> =
        corpus.items().map(|i| (corpus.item_name(i), i)).collect();
    let mut per_item: Vec<Option<String>> = vec![None; corpus.num_items()];
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 2 || fields[0].trim().is_empty() || fields[1].trim().is_empty() {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: lineno + 1,
                message: "expected `item<TAB>category`".into(),
            });
        }
        if let Some(&item) = lookup.get(fields[0].trim()) {
            per_item[item.index() - 1] = Some(fields[1].trim().to_string());
        }
    }
    Ok(Attributes::from_names(&per_item))
}

pub fn write_attributes(corpus: &Corpus, attributes: &Attributes, path: &Path) -> Result<()> {
    let mut out = String::new();
    for item in corpus.items() {
        if let Some(name) = attributes.category_name(attributes.category(item)) {
            out.push_str(&format!("{}\t{}\n", corpus.item_name(item), name));
        }
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Per-user chronological train/validation/test partition.
#[derive(Clone, Debug, PartialEq)]
pub struct Split {
    /// Users that were long enough to split, in corpus order.
    pub users: Vec<UserId>,
    pub train: Vec<Vec<ItemId>>,
    pub val: Vec<Vec<ItemId>>,
    pub test: Vec<Vec<ItemId>>,
    /// Users with fewer than [`MIN_SPLIT_LEN`] interactions.
    pub dropped: Vec<UserId>,
}

pub const MIN_SPLIT_LEN: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios {
            train: 0.8,
            val: 0.1,
            test: 0.1,
        }
    }
}

/// `(n_train, n_val, n_test)` for a sequence of length `len >= 3`.
pub fn split_sizes(len: usize, ratios: SplitRatios) -> (usize, usize, usize) {
    // Guard against 0.1 * 30 = 3.0000000000000004 style products.
    let floor = |r: f64| (r * len as f64 + 1e-9).floor() as usize;
    let mut n_train = floor(ratios.train).max(1);
    let mut n_val = floor(ratios.val);
    while n_train + n_val >= len {
        if n_val > 0 {
            n_val -= 1;
        } else {
            n_train -= 1;
        }
    }
    (n_train, n_val, len - n_train - n_val)
}

pub fn chronological_split(corpus: &Corpus, ratios: SplitRatios) -> Result<Split> {
    let total = ratios.train + ratios.val + ratios.test;
    if (total - 1.0).abs() > 1e-9 || [ratios.train, ratios.val, ratios.test].iter().any(|&r| r < 0.0) {
        return Err(Error::Config(format!("split ratios must be non-negative and sum to 1, got {total}")));
    }
    let mut split = Split {
        users: Vec::new(),
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
        dropped: Vec::new(),
    };
    for u in corpus.users() {
        let seq = corpus.sequence(u);
        if seq.len() < MIN_SPLIT_LEN {
            split.dropped.push(u);
            continue;
        }
        let (n_train, n_val, _) = split_sizes(seq.len(), ratios);
        split.users.push(u);
        split.train.push(seq[..n_train].to_vec());
        split.val.push(seq[n_train..n_train + n_val].to_vec());
        split.test.push(seq[n_train + n_val..].to_vec());
    }
    if !split.dropped.is_empty() {
        log::info!(
            "dropped {} users with fewer than {MIN_SPLIT_LEN} interactions",
            split.dropped.len()
        );
    }
    Ok(split)
}

/// Fixed-capacity view of the most recent items, left-padded.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Window {
    pub items: Vec<ItemId>,
    pub mask: Vec<bool>,
}

impl Window {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn valid_positions(&self) -> Vec<usize> {
        self.mask
            .iter()
            .enumerate()
            .filter_map(|(i, &m)| m.then_some(i))
            .collect()
    }
}

pub fn window(sequence: &[ItemId], m: usize) -> Window {
    assert!(m >= 1, "window capacity must be positive");
    let keep = sequence.len().min(m);
    let pad = m - keep;
    let mut items = vec![ItemId::PAD; pad];
    items.extend_from_slice(&sequence[sequence.len() - keep..]);
    let mut mask = vec![false; pad];
    mask.extend(std::iter::repeat_n(true, keep));
    Window { items, mask }
}
