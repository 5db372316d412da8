//! Planted-block synthetic corpora.

use std::collections::BTreeMap;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;

use crate::corpus::{Attributes, Corpus};
use crate::error::{Error, Result};
use crate::rng::stream;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SynthConfig {
    pub blocks: usize,
    pub items_per_block: usize,
    pub users: usize,
    pub min_len: usize,
    pub max_len: usize,
    /// Probability that a step emits an item from another block.
    pub noise: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            blocks: 2,
            items_per_block: 20,
            users: 200,
            min_len: 10,
            max_len: 20,
            noise: 0.1,
            seed: 0,
        }
    }
}

pub fn item_name(block: usize, k: usize) -> String {
    format!("b{block}i{k}")
}

/// Each user picks one block and walks around it as a ring (steps of 1, 2
/// or 3 with probabilities 0.6, 0.3, 0.1). A noisy step emits a uniform item
/// from another block without moving. Item categories are block ids.
pub fn synth_corpus(config: &SynthConfig) -> Result<(Corpus, Attributes)> {
    if config.blocks < 2 {
        return Err(Error::Config("synthetic corpora need at least two blocks".into()));
    }
    if config.items_per_block == 0 || config.users == 0 || config.min_len == 0 || config.min_len > config.max_len {
        return Err(Error::Config("synthetic corpus sizes must be positive with min_len <= max_len".into()));
    }
    if !(0.0..=1.0).contains(&config.noise) {
        return Err(Error::Config("noise must lie in [0, 1]".into()));
    }
    let mut rng = stream(config.seed, &[]);
    let steps = WeightedIndex::new([0.6, 0.3, 0.1]).expect("valid weights");
    let ipb = config.items_per_block;
    let mut sequences = Vec::with_capacity(config.users);
    for u in 0..config.users {
        let block = rng.random_range(0..config.blocks);
        let len = rng.random_range(config.min_len..=config.max_len);
        let mut pos = rng.random_range(0..ipb);
        let mut seq = Vec::with_capacity(len);
        for _ in 0..len {
            if rng.random_bool(config.noise) {
                let other = (block + rng.random_range(1..config.blocks)) % config.blocks;
                seq.push(item_name(other, rng.random_range(0..ipb)));
            } else {
                seq.push(item_name(block, pos));
                pos = (pos + 1 + steps.sample(&mut rng)) % ipb;
            }
        }
        sequences.push((format!("u{u}"), seq));
    }
    let corpus = Corpus::from_sequences(sequences)?;
    let block_of: BTreeMap<String, String> = (0..config.blocks)
        .flat_map(|b| (0..ipb).map(move |k| (item_name(b, k), format!("block{b}"))))
        .collect();
    let per_item: Vec<Option<String>> = corpus
        .items()
        .map(|i| block_of.get(corpus.item_name(i)).cloned())
        .collect();
    Ok((corpus, Attributes::from_names(&per_item)))
}
