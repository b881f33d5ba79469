//! `ragshield`: retrieval-stage defenses against corpus poisoning.
//!
//! Subcommands cover the full pipeline: build embedding indexes (`embed`),
//! craft and inject poisons (`attack`), run defended retrieval
//! (`retrieve`), evaluate attack/success rates over experiment configs
//! (`eval`), generate synthetic benchmark data (`synth`), and explore the
//! robustness theory (`theory table|flops|simulate`).

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use ragshield_core::attack::{
    build_attack, save_manifest, AttackBudget, AttackSpec, InsertPosition, PoisonManifestEntry,
};
use ragshield_core::defense::{
    build_defense, AggregationStrategy, DefenseSpec, DocStore, EmptyDocStore, RetrievalContext,
};
use ragshield_core::embed::{build_embedder, EmbedderConfig, EmbedderKind, SimilarityKind};
use ragshield_core::harness::data::{load_queries, Corpus};
use ragshield_core::harness::experiment::{run_experiment, ExperimentConfig};
use ragshield_core::harness::pipeline::{build_combo_index, build_full_index};
use ragshield_core::harness::synth::{generate, SynthConfig};
use ragshield_core::index::{IndexMethod, VectorIndex};
use ragshield_core::theory::{
    condition_table, flops, robustness_holds, worst_case_simulation, CostParams, FlopsMethod,
    MixMethod, TheoryParams,
};

#[derive(Parser)]
#[command(name = "ragshield", version, about = "Retrieval-stage defenses against corpus poisoning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build an embedding index from a JSONL corpus.
    Embed(EmbedArgs),
    /// Run defended retrieval for a query set against a built index.
    Retrieve(RetrieveArgs),
    /// Craft poisons for target queries and write a poison manifest.
    Attack(AttackArgs),
    /// Run a full experiment config: baseline, defense, ASR/SR, sweeps.
    Eval(EvalArgs),
    /// Generate a synthetic corpus, queries and qrels.
    Synth(SynthArgs),
    /// Robustness conditions, cost models and the worst-case simulator.
    #[command(subcommand)]
    Theory(TheoryCommand),
}

/// Embedder selection shared by the pipeline subcommands.
#[derive(Args, Clone)]
struct EmbedderArgs {
    /// Embedding strategy.
    #[arg(long, value_enum, default_value = "reference")]
    embedder: EmbedderChoice,
    /// Embedding dimension.
    #[arg(long, env = "EMBED_DIM", default_value_t = 512)]
    dim: usize,
    /// Remote embedding endpoint (remote embedder only).
    #[arg(long, env = "EMBED_ENDPOINT")]
    endpoint: Option<String>,
    /// Remote batch size.
    #[arg(long, env = "EMBED_BATCH", default_value_t = 32)]
    batch_size: usize,
    /// Remote request timeout in milliseconds.
    #[arg(long, env = "EMBED_TIMEOUT_MS", default_value_t = 10_000)]
    timeout_ms: u64,
    /// Remote retry budget.
    #[arg(long, default_value_t = 3)]
    max_retries: u32,
    /// n-gram orders for the reference embedder, comma-separated.
    #[arg(long, value_delimiter = ',', default_values_t = [1usize, 2])]
    ngram_orders: Vec<usize>,
    /// Skip L2 normalization of fragment embeddings before pooling.
    #[arg(long)]
    no_normalize_fragments: bool,
    /// Use cosine similarity instead of the inner product.
    #[arg(long)]
    cosine: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum EmbedderChoice {
    Reference,
    Remote,
}

impl EmbedderArgs {
    fn config(&self) -> EmbedderConfig {
        EmbedderConfig {
            kind: match self.embedder {
                EmbedderChoice::Reference => EmbedderKind::Reference,
                EmbedderChoice::Remote => EmbedderKind::Remote,
            },
            dim: self.dim,
            ngram_orders: self.ngram_orders.iter().copied().collect(),
            normalize_fragments: !self.no_normalize_fragments,
            similarity: if self.cosine {
                SimilarityKind::Cosine
            } else {
                SimilarityKind::Dot
            },
            endpoint: self.endpoint.clone(),
            timeout_ms: self.timeout_ms,
            batch_size: self.batch_size,
            max_retries: self.max_retries,
        }
    }
}

#[derive(Args)]
struct EmbedArgs {
    /// JSONL corpus: one {"_id", "title", "text"} object per line.
    #[arg(long)]
    corpus: PathBuf,
    /// Output index path (RGSIDX1 format).
    #[arg(long)]
    out: PathBuf,
    /// Index construction method.
    #[arg(long, value_enum, default_value = "full")]
    method: MethodChoice,
    /// Fragments per document (ragpart/naive methods).
    #[arg(long, default_value_t = 5)]
    n: usize,
    /// Fragments per combination (ragpart/naive methods).
    #[arg(long, default_value_t = 3)]
    k: usize,
    #[command(flatten)]
    embedder: EmbedderArgs,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodChoice {
    Full,
    Ragpart,
    Naive,
}

#[derive(Args)]
struct RetrieveArgs {
    /// Index built by `ragshield embed`.
    #[arg(long)]
    index: PathBuf,
    /// Defense strategy.
    #[arg(long, value_enum, default_value = "none")]
    defense: DefenseChoice,
    /// Aggregation for the combination defenses.
    #[arg(long, value_enum, default_value = "vote")]
    agg: AggChoice,
    /// Final result size.
    #[arg(long, default_value_t = 10)]
    p: usize,
    /// Seed for the intersection fallback.
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// JSONL queries: one {"_id", "text"} object per line.
    #[arg(long)]
    queries: PathBuf,
    /// Corpus JSONL; required by the ragmask defense for masking.
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Candidate pool multiplier (ragmask).
    #[arg(long, default_value_t = 2.0)]
    alpha: f64,
    /// Mask length in tokens (ragmask).
    #[arg(long = "mask-len", default_value_t = 10)]
    mask_len: usize,
    /// Similarity-shift threshold (ragmask).
    #[arg(long, default_value_t = 0.01)]
    delta: f32,
    /// Output results JSONL.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    embedder: EmbedderArgs,
}

#[derive(Clone, Copy, ValueEnum)]
enum DefenseChoice {
    None,
    Ragpart,
    NaiveCombo,
    Ragmask,
}

#[derive(Clone, Copy, ValueEnum)]
enum AggChoice {
    Vote,
    Intersect,
}

#[derive(Args)]
struct AttackArgs {
    /// Attack strategy.
    #[arg(long = "type", value_enum)]
    attack_type: AttackChoice,
    /// JSONL target queries.
    #[arg(long)]
    queries: PathBuf,
    /// JSONL base documents the poisons are built on.
    #[arg(long)]
    bases: PathBuf,
    /// Base documents per query.
    #[arg(long = "per-query", default_value_t = 3)]
    per_query: usize,
    /// Insertion position for query-as-poison.
    #[arg(long, value_enum, default_value = "prepend")]
    position: PositionChoice,
    /// Adversarial token budget (greedy attacks).
    #[arg(long, default_value_t = 20)]
    budget: usize,
    /// Greedy search iterations.
    #[arg(long, default_value_t = 30)]
    iters: usize,
    /// Candidate tokens scored per iteration.
    #[arg(long, default_value_t = 30)]
    cands: usize,
    /// Seed for base selection and the greedy search.
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Vocabulary file, one token per line (greedy attacks). Defaults to
    /// the distinct tokens of the queries and bases.
    #[arg(long)]
    vocab: Option<PathBuf>,
    /// Output poison manifest JSONL.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    embedder: EmbedderArgs,
}

#[derive(Clone, Copy, ValueEnum)]
enum AttackChoice {
    Query,
    Greedy,
    GreedySpread,
}

#[derive(Clone, Copy, ValueEnum)]
enum PositionChoice {
    Prepend,
    Append,
    Middle,
}

#[derive(Args)]
struct EvalArgs {
    /// Experiment config JSON.
    #[arg(long)]
    config: PathBuf,
    /// Output report JSON.
    #[arg(long)]
    out: PathBuf,
    /// Worker threads (default: all cores).
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Args)]
struct SynthArgs {
    /// Output directory for corpus.jsonl, queries.jsonl and qrels.tsv.
    #[arg(long = "out-dir")]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 1000)]
    docs: usize,
    #[arg(long, default_value_t = 64)]
    queries: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
}

#[derive(Subcommand)]
enum TheoryCommand {
    /// Render the sufficient-condition grid over N and k.
    Table(TableArgs),
    /// Exact FLOP counts for the cost models.
    Flops(FlopsArgs),
    /// Worst-case majority-vote simulation.
    Simulate(SimulateArgs),
}

#[derive(Args)]
struct TableArgs {
    #[arg(long, value_enum, default_value = "ragpart")]
    method: MixChoice,
    /// Poisoned fragments per adversarial document.
    #[arg(long)]
    np: u64,
    /// Adversarial documents.
    #[arg(long, default_value_t = 1)]
    na: u64,
    #[arg(long = "n-min", default_value_t = 3)]
    n_min: u64,
    #[arg(long = "n-max", default_value_t = 15)]
    n_max: u64,
    #[arg(long = "k-min", default_value_t = 3)]
    k_min: u64,
    #[arg(long = "k-max", default_value_t = 15)]
    k_max: u64,
    /// Emit machine-readable JSON instead of the text grid.
    #[arg(long)]
    json: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum MixChoice {
    Naive,
    Ragpart,
}

impl From<MixChoice> for MixMethod {
    fn from(c: MixChoice) -> Self {
        match c {
            MixChoice::Naive => MixMethod::Naive,
            MixChoice::Ragpart => MixMethod::Ragpart,
        }
    }
}

#[derive(Args)]
struct FlopsArgs {
    /// FLOPs per fragment-scale embedder call, e.g. 1e9.
    #[arg(long = "R")]
    r: String,
    /// Corpus size, e.g. 1e6.
    #[arg(long = "D")]
    d: String,
    #[arg(long = "N")]
    n: u64,
    #[arg(long)]
    k: u64,
    /// Embedding dimension.
    #[arg(long)]
    ne: u64,
    /// Maximum document length in tokens (ragmask model).
    #[arg(long, default_value_t = 1000)]
    l: u64,
    /// Mask length (ragmask model).
    #[arg(long, default_value_t = 10)]
    m: u64,
    #[arg(long, default_value_t = 2.0)]
    alpha: f64,
    #[arg(long, default_value_t = 10)]
    p: u64,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long, value_enum, default_value = "ragpart")]
    method: MixChoice,
    #[arg(long)]
    np: u64,
    #[arg(long, default_value_t = 1)]
    na: u64,
    #[arg(long = "N")]
    n: u64,
    #[arg(long)]
    k: u64,
    #[arg(long, default_value_t = 1)]
    p: usize,
    #[arg(long, default_value_t = 1000)]
    trials: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long)]
    json: bool,
}

fn main() {
    let cli = Cli::parse();
    let code = match run(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            1
        }
    };
    std::process::exit(code);
}

fn run(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Embed(args) => cmd_embed(args),
        Command::Retrieve(args) => cmd_retrieve(args),
        Command::Attack(args) => cmd_attack(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Synth(args) => cmd_synth(args),
        Command::Theory(cmd) => cmd_theory(cmd),
    }
}

fn cmd_embed(args: EmbedArgs) -> Result<i32> {
    let config = args.embedder.config();
    let embedder = build_embedder(&config)?;
    let corpus = Corpus::load(&args.corpus)
        .with_context(|| format!("loading corpus {}", args.corpus.display()))?;
    let index = match args.method {
        MethodChoice::Full => build_full_index(&corpus, embedder.as_ref(), &config)?,
        MethodChoice::Ragpart => {
            build_combo_index(&corpus, embedder.as_ref(), &config, args.n, args.k, IndexMethod::Ragpart)?
        }
        MethodChoice::Naive => {
            build_combo_index(&corpus, embedder.as_ref(), &config, args.n, args.k, IndexMethod::Naive)?
        }
    };
    index.persist(&args.out)?;
    eprintln!(
        "indexed {} docs into {} entries ({} embedder calls) -> {}",
        corpus.len(),
        index.len(),
        embedder.calls(),
        args.out.display()
    );
    Ok(0)
}

fn cmd_retrieve(args: RetrieveArgs) -> Result<i32> {
    let config = args.embedder.config();
    let embedder = build_embedder(&config)?;
    let index = VectorIndex::load(&args.index)
        .with_context(|| format!("loading index {}", args.index.display()))?;

    let fingerprint_mismatch = index.header().embedder_fingerprint != config.fingerprint();
    if fingerprint_mismatch {
        eprintln!(
            "warning: index was built with a different embedder config \
             (fingerprint {:#x} != {:#x}); scores may be meaningless",
            index.header().embedder_fingerprint,
            config.fingerprint()
        );
    }

    let spec = match args.defense {
        DefenseChoice::None => DefenseSpec::None,
        DefenseChoice::Ragpart => DefenseSpec::Ragpart {
            n: index.header().n as usize,
            k: index.header().k as usize,
            aggregation: match args.agg {
                AggChoice::Vote => AggregationStrategy::MajorityVote,
                AggChoice::Intersect => AggregationStrategy::Intersection,
            },
        },
        DefenseChoice::NaiveCombo => DefenseSpec::NaiveCombo {
            n: index.header().n as usize,
            k: index.header().k as usize,
            aggregation: match args.agg {
                AggChoice::Vote => AggregationStrategy::MajorityVote,
                AggChoice::Intersect => AggregationStrategy::Intersection,
            },
        },
        DefenseChoice::Ragmask => DefenseSpec::Ragmask {
            m: args.mask_len,
            delta: args.delta,
            alpha: args.alpha,
        },
    };
    let defense = build_defense(&spec, args.p, args.seed)?;

    let corpus = match &args.corpus {
        Some(path) => Some(Corpus::load(path)?),
        None => None,
    };
    if matches!(args.defense, DefenseChoice::Ragmask) && corpus.is_none() {
        bail!("--defense ragmask requires --corpus for segment masking");
    }
    let docs: &dyn DocStore = match &corpus {
        Some(c) => c,
        None => &EmptyDocStore,
    };

    let queries = load_queries(&args.queries)?;
    let mut out = std::io::BufWriter::new(std::fs::File::create(&args.out)?);
    for query in &queries {
        let emb = embedder.embed_tokens(&query.tokens())?;
        let ctx = RetrievalContext {
            index: &index,
            docs,
            embedder: embedder.as_ref(),
        };
        let result = defense.retrieve(&emb, &ctx)?;
        let mut line = serde_json::json!({
            "query_id": query.id,
            "docs": result.final_docs,
            "scores": result.final_scores,
        });
        if !result.vote_counts.is_empty() {
            line["vote_counts"] = serde_json::to_value(&result.vote_counts)?;
        }
        if result.used_fallback {
            line["used_fallback"] = serde_json::Value::Bool(true);
        }
        if !result.mask_decisions.is_empty() {
            line["mask_decisions"] = serde_json::to_value(&result.mask_decisions)?;
        }
        if fingerprint_mismatch {
            line["fingerprint_mismatch"] = serde_json::Value::Bool(true);
        }
        serde_json::to_writer(&mut out, &line)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    eprintln!(
        "retrieved top-{} for {} queries with defense {}",
        args.p,
        queries.len(),
        defense.name()
    );
    Ok(0)
}

fn cmd_attack(args: AttackArgs) -> Result<i32> {
    use rand::seq::SliceRandom;
    use rand::SeedableRng;

    let config = args.embedder.config();
    let embedder = build_embedder(&config)?;
    let queries = load_queries(&args.queries)?;
    let bases = Corpus::load(&args.bases)?;
    if bases.is_empty() {
        bail!("bases file contains no documents");
    }
    if args.per_query > bases.len() {
        bail!(
            "--per-query {} exceeds the {} available base documents",
            args.per_query,
            bases.len()
        );
    }

    let vocab: Vec<String> = match &args.vocab {
        Some(path) => std::fs::read_to_string(path)?
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(str::to_string)
            .collect(),
        None => {
            // Distinct tokens of queries and bases, sorted for determinism.
            let mut set = BTreeSet::new();
            for q in &queries {
                set.extend(q.tokens().tokens);
            }
            for id in bases.docs.keys() {
                set.extend(bases.tokens(id).expect("listed doc exists").tokens);
            }
            set.into_iter().collect()
        }
    };

    let spec = match args.attack_type {
        AttackChoice::Query => AttackSpec::QueryAsPoison {
            position: match args.position {
                PositionChoice::Prepend => InsertPosition::Prepend,
                PositionChoice::Append => InsertPosition::Append,
                PositionChoice::Middle => InsertPosition::Middle,
            },
        },
        AttackChoice::Greedy => AttackSpec::Greedy {
            vocab: vocab.clone(),
            budget: AttackBudget {
                n_tokens: args.budget,
                iterations: args.iters,
                candidates: args.cands,
                rng_seed: args.seed,
            },
        },
        AttackChoice::GreedySpread => AttackSpec::GreedySpread {
            vocab: vocab.clone(),
            budget: AttackBudget {
                n_tokens: args.budget,
                iterations: args.iters,
                candidates: args.cands,
                rng_seed: args.seed,
            },
        },
    };
    let attack = build_attack(&spec)?;

    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(args.seed);
    let base_ids: Vec<&String> = bases.docs.keys().collect();
    let mut manifest: Vec<PoisonManifestEntry> = Vec::new();
    for query in &queries {
        let chosen: Vec<&String> = base_ids
            .choose_multiple(&mut rng, args.per_query)
            .copied()
            .collect();
        for base_id in chosen {
            let base = bases.tokens(base_id).expect("listed doc exists");
            let record = attack.craft(&query.tokens(), &base, embedder.as_ref())?;
            manifest.push(PoisonManifestEntry::from(&record));
        }
    }
    save_manifest(&args.out, &manifest)?;
    eprintln!(
        "crafted {} poisons ({} queries x {} bases) -> {}",
        manifest.len(),
        queries.len(),
        args.per_query,
        args.out.display()
    );
    Ok(0)
}

fn cmd_eval(args: EvalArgs) -> Result<i32> {
    let config = ExperimentConfig::load(&args.config)
        .with_context(|| format!("loading config {}", args.config.display()))?;
    let report = run_experiment(&config, args.workers)?;
    report.write(&args.out)?;
    for point in &report.grid {
        let fmt = |v: Option<f64>| v.map_or("null".to_string(), |x| format!("{x:.4}"));
        match &point.error {
            Some(err) => eprintln!("grid {:?}: FAILED: {err}", point.params),
            None => eprintln!(
                "grid {:?}: asr {} (baseline {}), sr {} (baseline {})",
                point.params,
                fmt(point.asr),
                fmt(point.baseline_asr),
                fmt(point.sr),
                fmt(point.baseline_sr),
            ),
        }
    }
    eprintln!(
        "report -> {} ({} grid points, {} ms)",
        args.out.display(),
        report.grid.len(),
        report.wall_clock_ms
    );
    Ok(if report.has_errors() { 2 } else { 0 })
}

fn cmd_synth(args: SynthArgs) -> Result<i32> {
    let config = SynthConfig {
        seed: args.seed,
        n_docs: args.docs,
        n_queries: args.queries,
        ..Default::default()
    };
    let data = generate(&config)?;
    std::fs::create_dir_all(&args.out_dir)?;
    data.corpus.save(&args.out_dir.join("corpus.jsonl"))?;
    ragshield_core::harness::data::save_queries(&args.out_dir.join("queries.jsonl"), &data.queries)?;
    ragshield_core::harness::data::save_qrels(&args.out_dir.join("qrels.tsv"), &data.qrels)?;
    let bases: Vec<String> = data.base_ids.clone();
    std::fs::write(
        args.out_dir.join("bases.txt"),
        bases.join("\n") + "\n",
    )?;
    eprintln!(
        "wrote {} docs, {} queries, qrels and base ids to {}",
        data.corpus.len(),
        data.queries.len(),
        args.out_dir.display()
    );
    Ok(0)
}

fn parse_scaled_u64(text: &str, what: &str) -> Result<u64> {
    let value: f64 = text
        .parse()
        .with_context(|| format!("{what}: not a number: {text:?}"))?;
    if !(value.is_finite() && value >= 0.0 && value.fract() == 0.0 && value <= 2f64.powi(53)) {
        bail!("{what}: must be a nonnegative integer below 2^53, got {text:?}");
    }
    Ok(value as u64)
}

fn cmd_theory(cmd: TheoryCommand) -> Result<i32> {
    match cmd {
        TheoryCommand::Table(args) => {
            let table = condition_table(
                args.method.into(),
                args.np,
                args.na,
                (args.n_min, args.n_max),
                (args.k_min, args.k_max),
            )?;
            if args.json {
                println!("{}", serde_json::to_string_pretty(&serde_json::to_value(&table)?)?);
            } else {
                print!("{}", table.render_text());
            }
            Ok(0)
        }
        TheoryCommand::Flops(args) => {
            let cost = CostParams {
                d: parse_scaled_u64(&args.d, "--D")?,
                r: parse_scaled_u64(&args.r, "--R")?,
                n_e: args.ne,
                l: args.l,
                m: args.m,
                alpha: args.alpha,
                p: args.p,
            };
            let rows: Vec<(FlopsMethod, String)> = [
                FlopsMethod::Naive,
                FlopsMethod::RagpartEmbed,
                FlopsMethod::RagpartSimilarity,
                FlopsMethod::Ragmask,
            ]
            .into_iter()
            .map(|m| Ok((m, flops(&cost, m, args.n, args.k)?.to_string())))
            .collect::<Result<_>>()?;
            if args.json {
                let map: BTreeMap<&str, &str> =
                    rows.iter().map(|(m, v)| (m.as_str(), v.as_str())).collect();
                println!("{}", serde_json::to_string_pretty(&map)?);
            } else {
                for (m, v) in &rows {
                    println!("{:>20}: {v} FLOPs", m.as_str());
                }
            }
            Ok(0)
        }
        TheoryCommand::Simulate(args) => {
            let params = TheoryParams {
                n: args.n,
                k: args.k,
                n_p: args.np,
                n_a: args.na,
                p: args.p,
            };
            let method: MixMethod = args.method.into();
            let holds = robustness_holds(method, &params)?;
            let outcome = worst_case_simulation(method, &params, args.trials, args.seed)?;
            if args.json {
                println!(
                    "{}",
                    serde_json::to_string_pretty(&serde_json::json!({
                        "method": method.as_str(),
                        "params": params,
                        "condition_holds": holds,
                        "trials": outcome.trials,
                        "adversary_retrieved_rate": outcome.adversary_retrieved_rate,
                    }))?
                );
            } else {
                println!(
                    "method {} N={} k={} n_p={} n_a={} p={}: condition {}, \
                     adversary retrieved in {:.4} of {} worst-case trials",
                    method.as_str(),
                    params.n,
                    params.k,
                    params.n_p,
                    params.n_a,
                    params.p,
                    if holds { "HOLDS" } else { "FAILS" },
                    outcome.adversary_retrieved_rate,
                    outcome.trials
                );
            }
            Ok(0)
        }
    }
}
