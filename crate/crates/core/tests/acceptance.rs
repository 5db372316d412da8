//! Acceptance criteria 1-12. Prints one PASS/FAIL line per criterion.
//! With `ACCEPTANCE_STRICT=1` the process exits non-zero if any criterion fails.

use std::collections::{BTreeMap, BTreeSet};
use std::time::{Duration, Instant};

use num_rational::Ratio;
use rand::{Rng, SeedableRng};

use guesr_core::buckets::init_buckets;
use guesr_core::corpus::{write_attributes, write_sequences, Attributes, Corpus, ItemId};
use guesr_core::encoders::{
    lightgcn_forward, transformer_forward, AttentionHead, BlockWeights, GraphEncoderConfig, TransformerWeights,
};
use guesr_core::eval::{evaluate, full_rank, EvalSplit, RankReport, DEFAULT_KS};
use guesr_core::girg::{build_girg, normalize_weights, raw_weights, EdgeKey, GirgConfig, WeightedGraph};
use guesr_core::interest::{dynamic_route, fuse_interests, project_capsule, score_pair, CapsuleConfig};
use guesr_core::numerics::{grad_check, NumericError, Tape, Tensor, Var};
use guesr_core::objective::{bce_loss, info_nce_loss, ContrastiveForm};
use guesr_core::rng::StreamRng;
use guesr_core::trainer::{
    ablate, evaluate_checkpoint, prepare, prepare_from, synth_corpus, train, RunConfig, SynthConfig, Variant,
};
use guesr_core::views::{sample_view, ViewSample};

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        passed,
        detail: detail.into(),
    }
}

fn rng(seed: u64) -> StreamRng {
    StreamRng::seed_from_u64(seed)
}

fn secs(d: Duration) -> String {
    format!("{:.2}s", d.as_secs_f64())
}

/// Reports produced along the way, checked together by criterion 12.
#[derive(Default)]
struct Reports(Vec<(String, RankReport)>);

// ---------------------------------------------------------------- 1

fn position_pair_oracle(seqs: &[Vec<ItemId>], n: usize) -> BTreeMap<EdgeKey, Ratio<i64>> {
    let mut w = BTreeMap::new();
    for s in seqs {
        for p in 0..s.len() {
            for q in p + 1..s.len() {
                if q - p <= n && s[p] != s[q] {
                    let key = (s[p].min(s[q]), s[p].max(s[q]));
                    *w.entry(key).or_insert(Ratio::from_integer(0)) += Ratio::new(1, (q - p) as i64);
                }
            }
        }
    }
    w
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut r = rng(1);
    let mut mismatches = 0;
    for _ in 0..100 {
        let users = r.random_range(1..=10);
        let items = r.random_range(1..=8u32);
        let n = r.random_range(1..=3);
        let seqs: Vec<Vec<ItemId>> = (0..users)
            .map(|_| {
                let len = r.random_range(0..=6);
                (0..len).map(|_| ItemId(r.random_range(1..=items))).collect()
            })
            .collect();
        let got: BTreeMap<EdgeKey, Ratio<i64>> = raw_weights(&seqs, n);
        if got != position_pair_oracle(&seqs, n) {
            mismatches += 1;
        }
    }
    let elapsed = start.elapsed();
    outcome(
        mismatches == 0 && elapsed < Duration::from_secs(10),
        format!("GIRG raw weights vs position-pair oracle: {mismatches}/100 mismatches, {}", secs(elapsed)),
    )
}

// ---------------------------------------------------------------- 2

fn criterion_2() -> Outcome {
    let single = vec![vec![ItemId(1), ItemId(2)]];
    let raw: BTreeMap<EdgeKey, f64> = raw_weights(&single, 3);
    let norm = normalize_weights(2, &raw).edges[&(ItemId(1), ItemId(2))].1;
    let toy = vec![vec![ItemId(1), ItemId(2), ItemId(3)], vec![ItemId(2), ItemId(1)]];
    let mut counts = Vec::new();
    for step in 0..10 {
        let config = GirgConfig {
            max_interval: 2,
            epsilon: step as f64 * 0.1,
            unweighted: false,
        };
        let g: WeightedGraph<f64> = build_girg(&toy, 3, &config);
        counts.push(g.pruned_edges());
    }
    let monotone = counts.windows(2).all(|w| w[0] <= w[1]);
    outcome(
        (norm - 1.0).abs() < 1e-12 && monotone,
        format!("single edge w'={norm}; pruned counts over eps 0.0..0.9: {counts:?}"),
    )
}

// ---------------------------------------------------------------- 3

fn criterion_3() -> Outcome {
    let g = WeightedGraph::<f64>::from_weighted_edges(2, &[(1, 2, 1.0)]);
    let mut r = rng(3);
    let draws = 10_000;
    let mut hits = 0;
    for _ in 0..draws {
        let v = sample_view(&g, ItemId(1), 2, &mut r).expect("anchor exists");
        hits += usize::from(v.nodes.contains(&ItemId(2)));
    }
    // Two rounds at p = 0.5 each: the first round either takes the neighbour
    // or leaves the frontier empty, so inclusion stays at 0.5.
    let freq = hits as f64 / draws as f64;
    outcome(
        (freq - 0.5).abs() <= 0.02,
        format!("inclusion frequency {freq:.4} over {draws} draws (target 0.50 +/- 0.02)"),
    )
}

// ---------------------------------------------------------------- 4

fn criterion_4() -> Outcome {
    // Bucket sizes 4, 8, 12, 16; the anchor sits in the smallest.
    let sizes = [4usize, 8, 12, 16];
    let mut names = Vec::new();
    for (b, &n) in sizes.iter().enumerate() {
        names.extend(std::iter::repeat_n(Some(format!("c{b}")), n));
    }
    let attrs = Attributes::from_names(&names);
    let draws = 10_000;
    let state = init_buckets::<f64>(&attrs, 4, 0.5, draws);
    let anchor = ItemId(1);
    let own = state.bucket(anchor);
    let negatives = state.draw_negatives(anchor, &mut rng(4)).expect("other buckets exist");
    let same = negatives.iter().filter(|&&n| state.bucket(n) == own).count();
    let mut per_bucket = [0usize; 4];
    for n in &negatives {
        per_bucket[state.bucket(*n)] += 1;
    }
    let others: usize = sizes.iter().enumerate().filter(|(b, _)| *b != own).map(|(_, s)| s).sum();
    let mut worst = 0.0f64;
    for (b, &s) in sizes.iter().enumerate() {
        if b == own {
            continue;
        }
        let expected = s as f64 / others as f64;
        let observed = per_bucket[b] as f64 / draws as f64;
        worst = worst.max((observed - expected).abs() / expected);
    }

    let mut refreshed = init_buckets::<f64>(&attrs, 4, 0.0, 1);
    let emb = Tensor::<f64>::random_normal(attrs.num_items() + 1, 6, 1.0, &mut rng(44));
    refreshed.refresh(&emb, &mut rng(45));
    let items = 1..=attrs.num_items() as u32;
    let unchanged = items.clone().all(|i| refreshed.bucket(ItemId(i)) == refreshed.original(ItemId(i)));
    outcome(
        same == 0 && worst <= 0.05 && unchanged,
        format!(
            "{same} same-bucket negatives in {draws}; worst relative size deviation {:.2}%; lambda=0 keeps original buckets: {unchanged}",
            worst * 100.0
        ),
    )
}

// ---------------------------------------------------------------- 5

type Builder = Box<dyn Fn(&mut Tape<f64>, &[Var]) -> Result<Var, NumericError>>;

fn from_core(e: guesr_core::Error) -> NumericError {
    match e {
        guesr_core::Error::Numeric(n) => n,
        other => panic!("unexpected error in gradient check: {other}"),
    }
}

fn gradient_cases() -> Vec<(&'static str, Vec<(usize, usize)>, bool, Builder)> {
    let sq = |t: &mut Tape<f64>, v: Var| -> Result<Var, NumericError> {
        let m = t.mul(v, v)?;
        t.sum(m)
    };
    vec![
        ("add", vec![(2, 3), (2, 3)], false, Box::new(move |t, v| { let x = t.add(v[0], v[1])?; sq(t, x) })),
        ("sub", vec![(2, 3), (2, 3)], false, Box::new(move |t, v| { let x = t.sub(v[0], v[1])?; sq(t, x) })),
        ("mul", vec![(2, 3), (2, 3)], false, Box::new(move |t, v| { let x = t.mul(v[0], v[1])?; t.sum(x) })),
        ("div", vec![(2, 3), (2, 3)], true, Box::new(move |t, v| { let x = t.div(v[0], v[1])?; t.sum(x) })),
        ("add_row", vec![(3, 2), (1, 2)], false, Box::new(move |t, v| { let x = t.add_row(v[0], v[1])?; sq(t, x) })),
        ("scale", vec![(2, 2), (1, 1)], false, Box::new(move |t, v| { let x = t.scale(v[0], v[1])?; sq(t, x) })),
        ("scale_const", vec![(2, 2)], false, Box::new(move |t, v| { let x = t.scale_const(v[0], -1.7)?; sq(t, x) })),
        ("add_const", vec![(2, 2)], false, Box::new(move |t, v| { let x = t.add_const(v[0], 0.3)?; sq(t, x) })),
        ("matmul", vec![(2, 3), (3, 4)], false, Box::new(move |t, v| { let x = t.matmul(v[0], v[1])?; sq(t, x) })),
        ("transpose", vec![(2, 3), (2, 3)], false, Box::new(move |t, v| { let x = t.transpose(v[0])?; let y = t.matmul(v[1], x)?; sq(t, y) })),
        ("select_rows", vec![(4, 2)], false, Box::new(move |t, v| { let x = t.select_rows(v[0], &[3, 0, 3])?; sq(t, x) })),
        ("softmax_rows", vec![(2, 4), (2, 4)], false, Box::new(move |t, v| { let x = t.softmax_rows(v[0])?; let y = t.mul(x, v[1])?; t.sum(y) })),
        ("relu", vec![(3, 3)], false, Box::new(move |t, v| { let x = t.relu(v[0])?; sq(t, x) })),
        ("sigmoid", vec![(3, 3)], false, Box::new(move |t, v| { let x = t.sigmoid(v[0])?; sq(t, x) })),
        ("tanh", vec![(3, 3)], false, Box::new(move |t, v| { let x = t.tanh(v[0])?; sq(t, x) })),
        ("exp", vec![(2, 2)], false, Box::new(move |t, v| { let x = t.exp(v[0])?; t.sum(x) })),
        ("log", vec![(2, 2)], true, Box::new(move |t, v| { let x = t.log(v[0])?; t.sum(x) })),
        ("sqrt", vec![(2, 2)], true, Box::new(move |t, v| { let x = t.sqrt(v[0])?; t.sum(x) })),
        ("clamp", vec![(3, 3)], false, Box::new(move |t, v| { let x = t.clamp(v[0], -0.5, 0.5)?; sq(t, x) })),
        ("l2_norm", vec![(2, 3)], false, Box::new(move |t, v| t.l2_norm(v[0]))),
        ("sum", vec![(2, 3)], false, Box::new(move |t, v| { let x = t.exp(v[0])?; t.sum(x) })),
        ("mean", vec![(2, 3)], false, Box::new(move |t, v| { let x = t.exp(v[0])?; t.mean(x) })),
        ("masked_fill", vec![(2, 2)], false, Box::new(move |t, v| { let x = t.masked_fill(v[0], &[true, false, false, true], 0.0)?; let y = t.exp(x)?; t.sum(y) })),
        ("concat_rows", vec![(1, 3), (2, 3)], false, Box::new(move |t, v| { let x = t.concat_rows(&[v[0], v[1]])?; let y = t.exp(x)?; let w = t.transpose(v[1])?; let z = t.matmul(y, w)?; t.sum(z) })),
        ("concat_cols", vec![(2, 1), (2, 2)], false, Box::new(move |t, v| { let x = t.concat_cols(&[v[0], v[1]])?; let y = t.tanh(x)?; sq(t, y) })),
        ("info_nce", vec![(1, 4), (1, 4), (3, 4)], false, Box::new(move |t, v| {
            info_nce_loss(t, v[0], v[1], v[2], 0.2, ContrastiveForm::Standard, 0).map_err(from_core)
        })),
        ("bce", vec![(5, 1)], false, Box::new(move |t, v| {
            let p = t.sigmoid(v[0])?;
            bce_loss(t, p, &[true, false, false, true, false])
        })),
        ("full_forward", full_forward_shapes(), false, Box::new(full_forward)),
        ("graph_contrastive", vec![(6, 4), (1, 3), (1, 4)], false, Box::new(graph_contrastive)),
    ]
}

const D: usize = 4;

fn full_forward_shapes() -> Vec<(usize, usize)> {
    let h = D / 2;
    vec![
        (4, D), // sequence embeddings
        (4, D), // positions
        (D, h), (D, h), (D, h), (D, h), (D, h), (D, h), // two heads
        (D, D), (D, D), (1, D), (D, D), (1, D), // wo, ffn
        (D, D), // wz
        (D, D), (D, D), // capsule projections
        (3, D), // targets
        (1, D), // user
    ]
}

/// Sequence encoder, routing, projection, fusion, scoring and BCE in one pass.
fn full_forward(t: &mut Tape<f64>, v: &[Var]) -> Result<Var, NumericError> {
    let heads = vec![
        AttentionHead { wq: v[2], wk: v[3], wv: v[4] },
        AttentionHead { wq: v[5], wk: v[6], wv: v[7] },
    ];
    let block = BlockWeights { heads, wo: v[8], ffn_w1: v[9], ffn_b1: v[10], ffn_w2: v[11], ffn_b2: v[12] };
    let weights = TransformerWeights { positions: v[1], blocks: vec![block], wz: v[13] };
    let mask = [false, true, true, true];
    let z = transformer_forward(t, v[0], &mask, &weights).map_err(from_core)?;
    let caps = dynamic_route(t, z, &mask, &CapsuleConfig { capsules: 2, iterations: 2 }).map_err(from_core)?;
    let projected = vec![project_capsule(t, caps[0], v[14])?, project_capsule(t, caps[1], v[15])?];
    let fused = fuse_interests(t, &projected, v[16], v[17])?;
    let scored = score_pair(t, fused.q, v[16])?;
    bce_loss(t, scored.prob, &[true, false, false])
}

/// LightGCN over two views plus negatives into InfoNCE.
fn graph_contrastive(t: &mut Tape<f64>, v: &[Var]) -> Result<Var, NumericError> {
    let cfg = GraphEncoderConfig { layers: 2 };
    let view = |nodes: &[u32], edges: &[(u32, u32)]| ViewSample {
        anchor: ItemId(nodes[0]),
        nodes: nodes.iter().copied().map(ItemId).collect(),
        edges: edges.iter().map(|&(a, b)| (ItemId(a), ItemId(b))).collect(),
        depth: 2,
    };
    let v1 = view(&[1, 2, 3], &[(1, 2), (2, 3)]);
    let v2 = view(&[1, 3, 4], &[(1, 3), (1, 4), (3, 4)]);
    let e1 = lightgcn_forward(t, &v1, v[0], v[1], &cfg).map_err(from_core)?.anchor;
    let e2 = lightgcn_forward(t, &v2, v[0], v[1], &cfg).map_err(from_core)?.anchor;
    let n5 = lightgcn_forward(t, &view(&[5, 4], &[(4, 5)]), v[0], v[1], &cfg).map_err(from_core)?.anchor;
    let extra = t.add(n5, v[2])?;
    let negs = t.concat_rows(&[n5, extra])?;
    let negs = t.select_rows(negs, &[0, 1, 1])?;
    info_nce_loss(t, e1, e2, negs, 0.5, ContrastiveForm::Standard, 1).map_err(from_core)
}

fn criterion_5() -> Outcome {
    let start = Instant::now();
    let mut r = rng(5);
    let mut failures = Vec::new();
    let mut worst = 0.0f64;
    let cases = gradient_cases();
    for (name, shapes, positive, build) in &cases {
        for _ in 0..20 {
            let inputs: Vec<Tensor<f64>> = shapes
                .iter()
                .map(|&(a, b)| {
                    let t = Tensor::random_normal(a, b, 1.0, &mut r);
                    if *positive {
                        t.map(|x: f64| x.abs() + 0.5)
                    } else {
                        t
                    }
                })
                .collect();
            match grad_check(|t, v| build(t, v), &inputs, 1e-4, 1e-5) {
                Ok(report) => {
                    worst = worst.max(report.worst());
                    if !report.passed() {
                        failures.push(format!("{name} ({:.2e})", report.worst()));
                    }
                }
                Err(e) => failures.push(format!("{name}: {e}")),
            }
        }
    }
    let elapsed = start.elapsed();
    failures.dedup();
    outcome(
        failures.is_empty() && elapsed < Duration::from_secs(60),
        format!(
            "{} expressions x 20 points, worst relative error {worst:.2e}, {}{}",
            cases.len(),
            secs(elapsed),
            if failures.is_empty() { String::new() } else { format!("; failing: {}", failures.join(", ")) }
        ),
    )
}

// ---------------------------------------------------------------- 6

fn criterion_6() -> Outcome {
    let mut r = rng(6);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let k = r.random_range(1..=8usize);
        let layers = r.random_range(1..=3usize);
        let d = 3;
        // Random node ids from a catalogue of 12, anchor first.
        let mut ids: Vec<u32> = (1..=12).collect();
        for i in (1..ids.len()).rev() {
            ids.swap(i, r.random_range(0..=i));
        }
        let nodes: Vec<ItemId> = ids[..k].iter().copied().map(ItemId).collect();
        let mut edges = Vec::new();
        for a in 0..k {
            for b in a + 1..k {
                if r.random_bool(0.4) {
                    edges.push((nodes[a].min(nodes[b]), nodes[a].max(nodes[b])));
                }
            }
        }
        edges.sort();
        let view = ViewSample { anchor: nodes[0], nodes: nodes.clone(), edges: edges.clone(), depth: 2 };
        let table = Tensor::<f64>::random_normal(13, d, 1.0, &mut r);
        let alpha = Tensor::<f64>::random_normal(1, layers + 1, 1.0, &mut r);

        let mut tape = Tape::new();
        let tv = tape.constant(table.clone()).unwrap();
        let av = tape.constant(alpha.clone()).unwrap();
        let out = lightgcn_forward(&mut tape, &view, tv, av, &GraphEncoderConfig { layers }).unwrap();
        let got = tape.value(out.nodes).clone();

        // Dense oracle: Â = D^-1/2 A D^-1/2, E = Σ α_l Â^l E0.
        let pos = |x: ItemId| nodes.iter().position(|&n| n == x).unwrap();
        let mut adj = vec![vec![0.0; k]; k];
        for &(a, b) in &edges {
            adj[pos(a)][pos(b)] = 1.0;
            adj[pos(b)][pos(a)] = 1.0;
        }
        let deg: Vec<f64> = adj.iter().map(|row| row.iter().sum()).collect();
        let norm: Vec<Vec<f64>> = (0..k)
            .map(|i| {
                (0..k)
                    .map(|j| if adj[i][j] > 0.0 { 1.0 / (deg[i] * deg[j]).sqrt() } else { 0.0 })
                    .collect()
            })
            .collect();
        let mut layer: Vec<Vec<f64>> = nodes.iter().map(|n| table.row(n.index()).to_vec()).collect();
        let mut want: Vec<Vec<f64>> = layer.iter().map(|row| row.iter().map(|x| x * alpha.get(0, 0)).collect()).collect();
        for l in 1..=layers {
            layer = (0..k)
                .map(|i| (0..d).map(|c| (0..k).map(|j| norm[i][j] * layer[j][c]).sum()).collect())
                .collect();
            for i in 0..k {
                for c in 0..d {
                    want[i][c] += alpha.get(0, l) * layer[i][c];
                }
            }
        }
        for i in 0..k {
            for c in 0..d {
                worst = worst.max((got.get(i, c) - want[i][c]).abs());
            }
        }
    }
    outcome(worst < 1e-10, format!("50 random views, max abs deviation from dense oracle {worst:.2e}"))
}

// ---------------------------------------------------------------- 7

fn criterion_7() -> Outcome {
    let mut r = rng(7);
    let mut max_norm = 0.0f64;
    for _ in 0..1000 {
        let m = r.random_range(1..=6);
        let scale = [0.01, 1.0, 100.0][r.random_range(0..3)];
        let z = Tensor::<f64>::random_normal(m, 4, scale, &mut r);
        let mask: Vec<bool> = (0..m).map(|i| i == m - 1 || r.random_bool(0.7)).collect();
        let mut tape = Tape::new();
        let zv = tape.constant(z).unwrap();
        let caps = dynamic_route(&mut tape, zv, &mask, &CapsuleConfig { capsules: 3, iterations: 3 }).unwrap();
        for c in caps {
            max_norm = max_norm.max(tape.value(c).squared_norm().sqrt());
        }
    }

    // Single valid item: h = z_1, so o = squash(z_1) for every capsule and T.
    let mut single_ok = true;
    for t_iter in 1..=4 {
        let z1 = Tensor::<f64>::random_normal(1, 4, 1.0, &mut r);
        let mut padded = Tensor::zeros(3, 4);
        padded.row_mut(2).copy_from_slice(z1.row(0));
        let mut tape = Tape::new();
        let zv = tape.constant(padded).unwrap();
        let caps = dynamic_route(&mut tape, zv, &[false, false, true], &CapsuleConfig { capsules: 2, iterations: t_iter }).unwrap();
        let n = z1.squared_norm().sqrt();
        let factor = n / (1.0 + n * n);
        for c in caps {
            for (got, h) in tape.value(c).row(0).iter().zip(z1.row(0)) {
                single_ok &= *got == h * factor;
            }
        }
    }

    let mut beta_err = 0.0f64;
    for _ in 0..200 {
        let mut tape = Tape::<f64>::new();
        let caps: Vec<Var> = (0..3)
            .map(|_| tape.constant(Tensor::random_normal(1, 4, 2.0, &mut r)).unwrap())
            .collect();
        let targets = tape.constant(Tensor::random_normal(5, 4, 2.0, &mut r)).unwrap();
        let user = tape.constant(Tensor::random_normal(1, 4, 1.0, &mut r)).unwrap();
        let fused = fuse_interests(&mut tape, &caps, targets, user).unwrap();
        let beta = tape.value(fused.beta);
        for row in 0..beta.rows() {
            beta_err = beta_err.max((beta.row(row).iter().sum::<f64>() - 1.0).abs());
        }
    }
    outcome(
        max_norm < 1.0 && single_ok && beta_err <= 1e-12,
        format!("max capsule norm {max_norm:.6}; single item gives h = z_1: {single_ok}; max |sum(beta) - 1| {beta_err:.1e}"),
    )
}

// ---------------------------------------------------------------- 8

fn criterion_8() -> Outcome {
    let mut tape = Tape::<f64>::new();
    let e = tape.constant(Tensor::row_vector(vec![0.3, -1.2, 0.5])).unwrap();
    let neg = tape.constant(Tensor::row_vector(vec![1.2, 0.3, 0.0])).unwrap();
    let loss = info_nce_loss(&mut tape, e, e, neg, 1.0, ContrastiveForm::Standard, 1).unwrap();
    let value = tape.value(loss).item();
    let expected = (1.0 + (-1.0f64).exp()).ln();
    outcome(
        (value - expected).abs() < 1e-9,
        format!("loss {value:.12} vs log(1+e^-1) = {expected:.12}"),
    )
}

// ---------------------------------------------------------------- 9

fn memorization_corpus() -> (Corpus, Attributes) {
    let seqs: Vec<(String, Vec<String>)> = (0..20)
        .map(|u| (format!("u{u}"), (0..30).map(|t| format!("i{}", (u + t) % 30)).collect()))
        .collect();
    let corpus = Corpus::from_sequences(seqs).unwrap();
    let names: Vec<Option<String>> = corpus
        .items()
        .map(|i| {
            let k: usize = corpus.item_name(i)[1..].parse().unwrap();
            Some(format!("c{}", k % 3))
        })
        .collect();
    (corpus, Attributes::from_names(&names))
}

fn criterion_9(reports: &mut Reports) -> Outcome {
    let start = Instant::now();
    let (corpus, attrs) = memorization_corpus();
    let mut config = RunConfig::from_text(
        "seed = 9\ndim = 32\nheads = 2\nmax_len = 5\ncapsules = 2\nepochs = 200\nbatch_size = 64\nlr = 0.01\nbuckets = 3\nn_neg = 4\ntheta3 = 0\ndeterministic = true",
    )
    .unwrap();
    config.seed = Some(9);
    let prepared = prepare_from::<f64>(&config, corpus, attrs).unwrap();
    let trained = match train(&config, &prepared, |_| {}) {
        Ok(t) => t,
        Err(e) => return outcome(false, format!("training failed: {e}")),
    };
    let at_one = evaluate(&trained.model, &prepared.split, EvalSplit::Train, &[1], true).unwrap();
    let recall = at_one.metric(1).unwrap().recall;
    reports.0.push(("memorization/train".into(), trained.evaluate(&prepared, EvalSplit::Train).unwrap()));
    let elapsed = start.elapsed();
    outcome(
        recall >= 0.95 && elapsed < Duration::from_secs(300),
        format!("train Recall@1 {recall:.4} over {} events, {}", at_one.events(), secs(elapsed)),
    )
}

// ---------------------------------------------------------------- 10

pub const ABLATION_CONFIG: &str = "dim = 32\nheads = 2\nmax_len = 20\ncapsules = 2\nepochs = 40\nbatch_size = 64\nlr = 0.002\nbuckets = 2\nn_neg = 8\ndeterministic = true";

fn criterion_10(reports: &mut Reports) -> Outcome {
    let start = Instant::now();
    let (corpus, attrs) = synth_corpus(&SynthConfig { blocks: 2, items_per_block: 20, users: 200, seed: 11, ..Default::default() }).unwrap();
    let config = RunConfig::from_text(ABLATION_CONFIG).unwrap();
    let variants = [Variant::Full, Variant::NoGcl, Variant::RandomNegatives];
    let table = match ablate(&config, &corpus, &attrs, &variants, &[1, 2, 3]) {
        Ok(t) => t,
        Err(e) => return outcome(false, format!("ablation failed: {e}")),
    };
    let ndcg10 = |v: Variant| table.row(v).unwrap().ndcg[0];
    let (full, no_gcl, random) = (ndcg10(Variant::Full), ndcg10(Variant::NoGcl), ndcg10(Variant::RandomNegatives));
    for line in table.render().lines() {
        println!("    {line}");
    }
    // The per-seed reports are not kept by `ablate`; rerun one seed of the
    // full model for the metric-sanity pool.
    let mut one = config.clone();
    one.seed = Some(1);
    let prepared = prepare_from::<f64>(&one, corpus, attrs).unwrap();
    if let Ok(t) = train(&one, &prepared, |_| {}) {
        reports.0.push(("synthetic/test".into(), t.evaluate(&prepared, EvalSplit::Test).unwrap()));
    }
    let elapsed = start.elapsed();
    outcome(
        full >= no_gcl && full >= random && elapsed < Duration::from_secs(1200),
        format!(
            "mean test NDCG@10 full {full:.4}, no_gcl {no_gcl:.4}, random_negatives {random:.4}; {}",
            secs(elapsed)
        ),
    )
}

// ---------------------------------------------------------------- 11

fn criterion_11(reports: &mut Reports) -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let (corpus, attrs) = synth_corpus(&SynthConfig { users: 60, seed: 12, ..Default::default() }).unwrap();
    let seq_path = dir.path().join("sequences.tsv");
    let attr_path = dir.path().join("attributes.tsv");
    write_sequences(&corpus, &seq_path).unwrap();
    write_attributes(&corpus, &attrs, &attr_path).unwrap();
    let text = format!(
        "sequences = {}\nattributes = {}\nseed = 21\ndim = 16\nheads = 2\nmax_len = 10\ncapsules = 2\nepochs = 3\nbuckets = 2\nn_neg = 4\ndeterministic = true\n",
        seq_path.display(),
        attr_path.display()
    );
    let mut artifacts = Vec::new();
    for run in 0..2 {
        let config = RunConfig::from_text(&text).unwrap();
        let prepared = prepare::<f64>(&config).unwrap();
        let trained = train(&config, &prepared, |_| {}).unwrap();
        let ckpt = dir.path().join(format!("run{run}.ckpt"));
        trained.checkpoint().save(&ckpt).unwrap();
        let report = evaluate_checkpoint::<f64>(&ckpt, EvalSplit::Test).unwrap();
        artifacts.push((std::fs::read(&ckpt).unwrap(), report.to_json()));
        if run == 0 {
            reports.0.push(("determinism/test".into(), report));
        }
    }
    let same_ckpt = artifacts[0].0 == artifacts[1].0;
    let same_report = artifacts[0].1 == artifacts[1].1;
    outcome(
        same_ckpt && same_report,
        format!(
            "checkpoints identical: {same_ckpt} ({} bytes); reports identical: {same_report}",
            artifacts[0].0.len()
        ),
    )
}

// ---------------------------------------------------------------- 12

fn criterion_12(reports: &Reports) -> Outcome {
    let mut violations = Vec::new();
    for (name, report) in &reports.0 {
        let (m10, m20) = (report.metric(10).unwrap(), report.metric(20).unwrap());
        if m20.recall < m10.recall || m20.ndcg < m10.ndcg {
            violations.push(format!("{name}: not monotone in K"));
        }
        for k in DEFAULT_KS {
            let m = report.metric(k).unwrap();
            if m.ndcg > m.recall {
                violations.push(format!("{name}: NDCG@{k} > Recall@{k}"));
            }
        }
    }

    let mut r = rng(12);
    let mut disagreements = 0;
    for _ in 0..1000 {
        let n = r.random_range(2..50usize);
        let scores: Vec<f64> = (0..=n).map(|_| (r.random_range(0..8) as f64) * 0.25).collect();
        let target = r.random_range(1..=n);
        let excluded: BTreeSet<ItemId> = (1..=n)
            .filter(|&i| i != target && r.random_bool(0.25))
            .map(|i| ItemId(i as u32))
            .collect();
        let mut ranked: Vec<usize> = (1..=n).filter(|i| !excluded.contains(&ItemId(*i as u32))).collect();
        // Descending score; the target goes last among equals.
        ranked.sort_by(|&a, &b| {
            scores[b]
                .partial_cmp(&scores[a])
                .unwrap()
                .then((a == target).cmp(&(b == target)))
                .then(a.cmp(&b))
        });
        let oracle = ranked.iter().position(|&i| i == target).unwrap() + 1;
        if full_rank(&scores, ItemId(target as u32), &excluded).unwrap() != oracle {
            disagreements += 1;
        }
    }
    outcome(
        violations.is_empty() && disagreements == 0,
        format!(
            "{} reports checked, violations: {}; full_rank vs sort oracle: {disagreements}/1000 disagreements",
            reports.0.len(),
            if violations.is_empty() { "none".to_string() } else { violations.join(", ") }
        ),
    )
}

fn main() {
    // libtest-style flags (e.g. --list from tooling) are ignored.
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let mut reports = Reports::default();
    let mut results: Vec<(u32, Outcome)> = Vec::new();
    let mut record = |n: u32, o: Outcome| {
        println!("criterion {n:>2}: {} | {}", if o.passed { "PASS" } else { "FAIL" }, o.detail);
        results.push((n, o));
    };
    record(1, criterion_1());
    record(2, criterion_2());
    record(3, criterion_3());
    record(4, criterion_4());
    record(5, criterion_5());
    record(6, criterion_6());
    record(7, criterion_7());
    record(8, criterion_8());
    // `--quick` skips the three training runs.
    if !std::env::args().any(|a| a == "--quick") {
        record(9, criterion_9(&mut reports));
        record(10, criterion_10(&mut reports));
        record(11, criterion_11(&mut reports));
    }
    record(12, criterion_12(&reports));
    let failed: Vec<u32> = results.iter().filter(|(_, o)| !o.passed).map(|(n, _)| *n).collect();
    if failed.is_empty() {
        println!("acceptance: all {} criteria passed", results.len());
    } else {
        println!("acceptance: failed criteria {failed:?}");
        if std::env::var("ACCEPTANCE_STRICT").is_ok_and(|v| v == "1") {
            std::process::exit(1);
        }
    }
}
