use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use guesr_core::corpus::{load_attributes, load_sequences, write_attributes, write_sequences, Attributes};
use guesr_core::eval::EvalSplit;
use guesr_core::trainer::{
    ablate, evaluate_checkpoint, prepare, synth_corpus, train, RunConfig, SynthConfig, Variant,
};
use guesr_core::{Error, Result};

#[derive(Parser)]
#[command(name = "guesr", version, about = "Graph-enhanced sequential recommender")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Flat `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Trailing `--key value` overrides applied after the file.
    #[arg(trailing_var_arg = true, allow_hyphen_values = true, value_name = "--KEY VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Build the item graph from the train split and write its edge list.
    BuildGraph {
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Train a model and write a checkpoint.
    Train {
        #[arg(long)]
        out: PathBuf,
        /// JSON-lines epoch log; defaults to `<out>.log.jsonl`.
        #[arg(long)]
        log: Option<PathBuf>,
        /// Also evaluate on the test split and write the JSON report here.
        #[arg(long)]
        report: Option<PathBuf>,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Full-ranking evaluation of a checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "test")]
        split: EvalSplit,
        /// JSON report path; printed to stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train each variant under each seed and compare test metrics.
    Ablate {
        #[arg(long, value_delimiter = ',', default_value = "full,no_gcl,unweighted_graph,random_negatives")]
        variants: Vec<Variant>,
        #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
        seeds: Vec<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Generate a planted-block corpus with block attributes.
    Synth {
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 2)]
        blocks: usize,
        #[arg(long, default_value_t = 20)]
        items_per_block: usize,
        #[arg(long, default_value_t = 200)]
        users: usize,
        #[arg(long, default_value_t = 10)]
        min_len: usize,
        #[arg(long, default_value_t = 20)]
        max_len: usize,
        #[arg(long, default_value_t = 0.1)]
        noise: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

/// Pairs `--key value`; a flag followed by another flag or nothing is `true`.
fn parse_overrides(raw: &[String]) -> Result<Vec<(String, String)>> {
    let mut pairs = Vec::new();
    let mut i = 0;
    while i < raw.len() {
        let key = raw[i]
            .strip_prefix("--")
            .ok_or_else(|| Error::Config(format!("expected `--key`, got {:?}", raw[i])))?;
        if let Some((k, v)) = key.split_once('=') {
            pairs.push((k.to_string(), v.to_string()));
            i += 1;
        } else if raw.get(i + 1).is_some_and(|v| !v.starts_with("--")) {
            pairs.push((key.to_string(), raw[i + 1].clone()));
            i += 2;
        } else {
            pairs.push((key.to_string(), "true".to_string()));
            i += 1;
        }
    }
    Ok(pairs)
}

fn load_config(args: &ConfigArgs) -> Result<RunConfig> {
    let mut config = match &args.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    let pairs = parse_overrides(&args.overrides)?;
    config.apply_overrides(pairs.iter().map(|(k, v)| (k.as_str(), v.as_str())))?;
    Ok(config)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text)?;
    Ok(())
}

fn build_graph(out: &Path, args: &ConfigArgs) -> Result<()> {
    let config = load_config(args)?;
    let prepared = prepare::<f64>(&config)?;
    write_text(out, &prepared.graph.to_edge_list())?;
    let stats = prepared.graph.stats();
    println!("nodes\t{}", stats.nodes);
    println!("edges\t{}", stats.edges);
    println!("pruned_edges\t{}", stats.pruned_edges);
    println!("isolated_nodes\t{}", stats.isolated_nodes);
    println!("mean_weight\t{:.6}", stats.mean_weight);
    for (degree, count) in &stats.degree_histogram {
        println!("degree\t{degree}\t{count}");
    }
    Ok(())
}

fn train_cmd(out: &Path, log: Option<&Path>, report: Option<&Path>, args: &ConfigArgs) -> Result<()> {
    let config = load_config(args)?;
    config.validate()?;
    let prepared = prepare::<f64>(&config)?;
    let log_path = log.map(Path::to_path_buf).unwrap_or_else(|| {
        let mut p = out.as_os_str().to_owned();
        p.push(".log.jsonl");
        PathBuf::from(p)
    });
    let mut log_file = BufWriter::new(File::create(&log_path)?);
    let mut io_error = None;
    let trained = train(&config, &prepared, |entry| {
        if let Err(e) = writeln!(log_file, "{}", entry.to_json_line()).and_then(|_| log_file.flush()) {
            io_error.get_or_insert(e);
        }
    })?;
    if let Some(e) = io_error {
        return Err(e.into());
    }
    trained.checkpoint().save(out)?;
    eprintln!("checkpoint written to {}", out.display());
    if let Some(path) = report {
        let report = trained.evaluate(&prepared, EvalSplit::Test)?;
        write_text(path, &report.to_json())?;
        print!("{}", report.to_table(&config.variant.to_string()));
    }
    Ok(())
}

fn eval_cmd(checkpoint: &Path, split: EvalSplit, out: Option<&Path>) -> Result<()> {
    let report = evaluate_checkpoint::<f64>(checkpoint, split)?;
    match out {
        Some(path) => {
            write_text(path, &report.to_json())?;
            print!("{}", report.to_table("model"));
        }
        None => print!("{}", report.to_json()),
    }
    Ok(())
}

fn ablate_cmd(variants: &[Variant], seeds: &[u64], out: Option<&Path>, args: &ConfigArgs) -> Result<()> {
    let mut config = load_config(args)?;
    if config.seed.is_none() {
        config.seed = seeds.first().copied();
    }
    config.validate()?;
    let path = config
        .sequences
        .clone()
        .ok_or_else(|| Error::Config("`sequences` path is required".into()))?;
    let corpus = load_sequences(&path)?;
    let attributes = match &config.attributes {
        Some(p) => load_attributes(p, &corpus)?,
        None => Attributes::all_unknown(corpus.num_items()),
    };
    let table = ablate(&config, &corpus, &attributes, variants, seeds)?;
    let rendered = table.render();
    print!("{rendered}");
    if let Some(path) = out {
        write_text(path, &rendered)?;
    }
    Ok(())
}

fn synth_cmd(out_dir: &Path, config: SynthConfig) -> Result<()> {
    let (corpus, attributes) = synth_corpus(&config)?;
    std::fs::create_dir_all(out_dir)?;
    write_sequences(&corpus, &out_dir.join("sequences.tsv"))?;
    write_attributes(&corpus, &attributes, &out_dir.join("attributes.tsv"))?;
    let s = corpus.summary();
    println!(
        "users {} items {} interactions {} sparsity {:.4}",
        s.users, s.items, s.interactions, s.sparsity
    );
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::BuildGraph { out, config } => build_graph(&out, &config),
        Command::Train {
            out,
            log,
            report,
            config,
        } => train_cmd(&out, log.as_deref(), report.as_deref(), &config),
        Command::Eval { checkpoint, split, out } => eval_cmd(&checkpoint, split, out.as_deref()),
        Command::Ablate {
            variants,
            seeds,
            out,
            config,
        } => ablate_cmd(&variants, &seeds, out.as_deref(), &config),
        Command::Synth {
            out_dir,
            blocks,
            items_per_block,
            users,
            min_len,
            max_len,
            noise,
            seed,
        } => synth_cmd(
            &out_dir,
            SynthConfig {
                blocks,
                items_per_block,
                users,
                min_len,
                max_len,
                noise,
                seed,
            },
        ),
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 2,
        Error::Divergence { .. } => 3,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
