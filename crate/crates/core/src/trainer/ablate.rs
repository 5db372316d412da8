//! Variant comparison tables.

use serde::Serialize;

use super::config::{RunConfig, Variant};
use super::train::{prepare_from, train};
use crate::corpus::{Attributes, Corpus};
use crate::error::{Error, Result};
use crate::eval::{EvalSplit, DEFAULT_KS};

#[derive(Clone, Debug, Serialize)]
pub struct AblationRow {
    pub variant: Variant,
    /// Mean over seeds, `(recall, ndcg)` per K in [`DEFAULT_KS`] order.
    pub recall: Vec<f64>,
    pub ndcg: Vec<f64>,
    pub per_seed_ndcg10: Vec<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct AblationTable {
    pub ks: Vec<usize>,
    pub seeds: Vec<u64>,
    pub rows: Vec<AblationRow>,
}

/// `value (±x.x%)` relative to `base`; `n/a` when the base is zero.
pub fn format_delta(value: f64, base: f64) -> String {
    if base == 0.0 {
        return format!("{value:.4} (n/a)");
    }
    let pct = (value - base) / base * 100.0;
    // Keep "-0.0" from appearing for tiny negative deltas.
    let pct = if pct.abs() < 0.05 { 0.0 } else { pct };
    if pct > 0.0 {
        format!("{value:.4} (+{pct:.1}%)")
    } else {
        format!("{value:.4} ({pct:.1}%)")
    }
}

impl AblationTable {
    pub fn row(&self, v: Variant) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.variant == v)
    }

    /// One row per variant; deltas are against `full` when it was run.
    pub fn render(&self) -> String {
        let base = self.row(Variant::Full).cloned();
        let mut out = format!("{:<18}", "variant");
        for k in &self.ks {
            out.push_str(&format!(" {:>18}", format!("Recall@{k}")));
        }
        for k in &self.ks {
            out.push_str(&format!(" {:>18}", format!("NDCG@{k}")));
        }
        out.push('\n');
        for row in &self.rows {
            out.push_str(&format!("{:<18}", row.variant.to_string()));
            let cells = row.recall.iter().chain(&row.ndcg).enumerate();
            for (c, &v) in cells {
                let cell = match &base {
                    Some(b) => {
                        let reference = b.recall.iter().chain(&b.ndcg).nth(c).copied().unwrap_or(0.0);
                        format_delta(v, reference)
                    }
                    None => format!("{v:.4}"),
                };
                out.push_str(&format!(" {cell:>18}"));
            }
            out.push('\n');
        }
        out
    }
}

/// Trains every variant under every seed and reports mean test metrics.
pub fn ablate(
    base: &RunConfig,
    corpus: &Corpus,
    attributes: &Attributes,
    variants: &[Variant],
    seeds: &[u64],
) -> Result<AblationTable> {
    if seeds.is_empty() || variants.is_empty() {
        return Err(Error::Config("ablation needs at least one variant and one seed".into()));
    }
    let mut rows = Vec::with_capacity(variants.len());
    for &variant in variants {
        let mut recall = vec![0.0; DEFAULT_KS.len()];
        let mut ndcg = vec![0.0; DEFAULT_KS.len()];
        let mut per_seed = Vec::with_capacity(seeds.len());
        for &seed in seeds {
            let mut config = base.clone();
            config.variant = variant;
            config.seed = Some(seed);
            let prepared = prepare_from::<f64>(&config, corpus.clone(), attributes.clone())?;
            let trained = train(&config, &prepared, |_| {})?;
            let report = trained.evaluate(&prepared, EvalSplit::Test)?;
            for (i, &k) in DEFAULT_KS.iter().enumerate() {
                let m = report.metric(k).expect("default K present");
                recall[i] += m.recall / seeds.len() as f64;
                ndcg[i] += m.ndcg / seeds.len() as f64;
            }
            per_seed.push(report.metric(10).map_or(0.0, |m| m.ndcg));
            log::info!("ablation {variant} seed {seed}: ndcg@10 {:.4}", per_seed.last().unwrap());
        }
        rows.push(AblationRow {
            variant,
            recall,
            ndcg,
            per_seed_ndcg10: per_seed,
        });
    }
    Ok(AblationTable {
        ks: DEFAULT_KS.to_vec(),
        seeds: seeds.to_vec(),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn delta_formatting() {
        assert_eq!(format_delta(0.2802, 0.3148), "0.2802 (-11.0%)");
        assert_eq!(format_delta(0.5, 0.5), "0.5000 (0.0%)");
        assert_eq!(format_delta(0.55, 0.5), "0.5500 (+10.0%)");
        assert_eq!(format_delta(0.1, 0.0), "0.1000 (n/a)");
    }
}
