//! Acceptance suite: one test per criterion, each printing a PASS line with
//! the measured values (visible under `--nocapture`).
//!
//! Run: `cargo test -p ragshield-core --test acceptance -- --nocapture`

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::time::Instant;

use num_bigint::BigUint;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ragshield_core::attack::{
    greedy_flip, query_as_poison, AttackBudget, GreedyMode, InsertPosition, PoisonManifestEntry,
    PoisonRecord,
};
use ragshield_core::defense::{AggregationStrategy, DefenseSpec};
use ragshield_core::embed::hashing::ngram_slot;
use ragshield_core::embed::reference::{embed_reference, ReferenceEmbedder};
use ragshield_core::embed::{similarity, tokenize_with_id, Embedder, EmbedderConfig, TokenSeq};
use ragshield_core::fragment::enumerate_combinations;
use ragshield_core::harness::data::{save_qrels, save_queries};
use ragshield_core::harness::experiment::{run_experiment, ExperimentConfig, ExperimentReport};
use ragshield_core::harness::synth::{generate, pick_attack_bases, SynthConfig, SynthData};
use ragshield_core::index::{IndexEntry, IndexMethod, VectorIndex};
use ragshield_core::theory::{
    binomial, condition_table, flops, poisoned_mix_count, robustness_holds,
    worst_case_simulation, CellStatus, CostParams, FlopsMethod, MixMethod, TheoryParams,
};
use ragshield_core::embed::Embedding;

// ---------------------------------------------------------------------------
// Criterion 1: condition tables reproduce the published grids cell for cell.
// ---------------------------------------------------------------------------

/// Expected grids, rows N = 3..=15, one char per k = 3..=N
/// ('y' = holds, 'x' = fails). Cells with k > N are not applicable.
const TABLE_NAIVE_NP2: [&str; 13] = [
    "x",
    "xx",
    "xxx",
    "xxxx",
    "xxxxx",
    "xxxxxx",
    "xxxxxxx",
    "xxxxxxxx",
    "yxxxxxxxx",
    "yxxxxxxxxx",
    "yxxxxxxxxxx",
    "yxxxxxxxxxxx",
    "yyxxxxxxxxxxx",
];

const TABLE_RAGPART_NP2: [&str; 13] = [
    "x",
    "xx",
    "yxx",
    "yyxx",
    "yyyxx",
    "yyyxxx",
    "yyyyxxx",
    "yyyyyxxx",
    "yyyyyxxxx",
    "yyyyyyxxxx",
    "yyyyyyyxxxx",
    "yyyyyyyyxxxx",
    "yyyyyyyyxxxxx",
];

const TABLE_NAIVE_NP3: [&str; 13] = [
    "x",
    "xx",
    "xxx",
    "xxxx",
    "xxxxx",
    "xxxxxx",
    "xxxxxxx",
    "xxxxxxxx",
    "xxxxxxxxx",
    "xxxxxxxxxx",
    "xxxxxxxxxxx",
    "xxxxxxxxxxxx",
    "xxxxxxxxxxxxx",
];

const TABLE_RAGPART_NP3: [&str; 13] = [
    "x",
    "xx",
    "xxx",
    "xxxx",
    "yxxxx",
    "yxxxxx",
    "yyxxxxx",
    "yyxxxxxx",
    "yyyxxxxxx",
    "yyyxxxxxxx",
    "yyyyxxxxxxx",
    "yyyyxxxxxxxx",
    "yyyyyxxxxxxxx",
];

fn check_grid(method: MixMethod, n_p: u64, expected: &[&str; 13]) -> usize {
    let table = condition_table(method, n_p, 1, (3, 15), (3, 15)).unwrap();
    let mut checked = 0;
    for (row, n) in (3u64..=15).enumerate() {
        for (col, k) in (3u64..=15).enumerate() {
            let got = table.cells[row][col];
            if k > n {
                assert_eq!(
                    got,
                    CellStatus::NotApplicable,
                    "{method:?} n_p={n_p}: cell ({n},{k}) must be N/A"
                );
                continue;
            }
            let want = match expected[row].as_bytes()[col] {
                b'y' => CellStatus::Holds,
                b'x' => CellStatus::Fails,
                other => panic!("bad expectation byte {other}"),
            };
            assert_eq!(got, want, "{method:?} n_p={n_p}: cell ({n},{k})");
            checked += 1;
        }
    }
    checked
}

#[test]
fn criterion_1_condition_tables_match_published_grids() {
    let start = Instant::now();
    let mut cells = 0;
    cells += check_grid(MixMethod::Naive, 2, &TABLE_NAIVE_NP2);
    cells += check_grid(MixMethod::Ragpart, 2, &TABLE_RAGPART_NP2);
    cells += check_grid(MixMethod::Naive, 3, &TABLE_NAIVE_NP3);
    cells += check_grid(MixMethod::Ragpart, 3, &TABLE_RAGPART_NP3);

    // Spot anchors.
    let t_naive2 = condition_table(MixMethod::Naive, 2, 1, (3, 15), (3, 15)).unwrap();
    assert_eq!(t_naive2.cell(11, 3), Some(CellStatus::Holds));
    assert_eq!(t_naive2.cell(10, 3), Some(CellStatus::Fails));
    let t_rag2 = condition_table(MixMethod::Ragpart, 2, 1, (3, 15), (3, 15)).unwrap();
    assert_eq!(t_rag2.cell(5, 3), Some(CellStatus::Holds));
    assert_eq!(t_rag2.cell(5, 4), Some(CellStatus::Fails));
    let t_rag3 = condition_table(MixMethod::Ragpart, 3, 1, (3, 15), (3, 15)).unwrap();
    assert_eq!(t_rag3.cell(7, 3), Some(CellStatus::Holds));

    let elapsed = start.elapsed();
    assert!(elapsed.as_secs() < 1, "tables took {elapsed:?}, budget 1 s");
    println!(
        "PASS criterion 1: all four condition grids match, {cells} non-N/A cells, {elapsed:?}"
    );
}

// ---------------------------------------------------------------------------
// Criterion 2: FLOP worked example, exact integers.
// ---------------------------------------------------------------------------

#[test]
fn criterion_2_flop_worked_example_is_exact() {
    let cost = CostParams {
        d: 1_000_000,
        r: 1_000_000_000,
        n_e: 512,
        ..Default::default()
    };
    let naive = flops(&cost, FlopsMethod::Naive, 5, 3).unwrap();
    let ragpart = flops(&cost, FlopsMethod::RagpartEmbed, 5, 3).unwrap();
    assert_eq!(naive, BigUint::from(3u64) * BigUint::from(10u64).pow(16));
    assert_eq!(
        ragpart,
        BigUint::from(5u64) * BigUint::from(10u64).pow(15)
            + BigUint::from(1536u64) * BigUint::from(10u64).pow(7)
    );
    println!("PASS criterion 2: naive {naive} FLOPs, partition-embed {ragpart} FLOPs, exact");
}

// ---------------------------------------------------------------------------
// Criterion 3: condition <-> worst-case simulation equivalence.
// ---------------------------------------------------------------------------

#[test]
fn criterion_3_condition_simulation_equivalence() {
    let start = Instant::now();
    let mut holding_points = 0usize;
    for method in [MixMethod::Naive, MixMethod::Ragpart] {
        for n in 1..=12u64 {
            for k in 1..=n {
                for n_p in 0..=n.min(3) {
                    for n_a in 0..=2u64 {
                        let params = TheoryParams { n, k, n_p, n_a, p: 1 };
                        if !robustness_holds(method, &params).unwrap() {
                            continue;
                        }
                        let sim = worst_case_simulation(method, &params, 1000, 7).unwrap();
                        assert_eq!(
                            sim.adversary_retrieved_rate, 0.0,
                            "{method:?} {params:?}: condition holds but adversary got through"
                        );
                        holding_points += 1;
                    }
                }
            }
        }
    }

    // Points where the condition fails and the constructed worst case must
    // always retrieve the adversary.
    let failing: [(MixMethod, u64, u64, u64, u64); 12] = [
        (MixMethod::Naive, 5, 3, 2, 1),
        (MixMethod::Naive, 5, 3, 2, 2),
        (MixMethod::Naive, 6, 3, 2, 1),
        (MixMethod::Naive, 7, 4, 2, 1),
        (MixMethod::Naive, 9, 3, 3, 1),
        (MixMethod::Naive, 12, 5, 2, 1),
        (MixMethod::Ragpart, 4, 3, 2, 1),
        (MixMethod::Ragpart, 5, 4, 2, 1),
        (MixMethod::Ragpart, 8, 6, 2, 1),
        (MixMethod::Ragpart, 10, 8, 2, 2),
        (MixMethod::Ragpart, 5, 3, 3, 1),
        (MixMethod::Ragpart, 6, 4, 3, 2),
    ];
    for (method, n, k, n_p, n_a) in failing {
        let params = TheoryParams { n, k, n_p, n_a, p: 1 };
        assert!(
            !robustness_holds(method, &params).unwrap(),
            "{method:?} {params:?} unexpectedly holds"
        );
        let sim = worst_case_simulation(method, &params, 1000, 7).unwrap();
        assert_eq!(
            sim.adversary_retrieved_rate, 1.0,
            "{method:?} {params:?}: constructed worst case must always retrieve"
        );
    }

    let elapsed = start.elapsed();
    assert!(elapsed.as_secs() < 30, "simulation sweep took {elapsed:?}, budget 30 s");
    println!(
        "PASS criterion 3: {holding_points} holding points at rate 0.0, \
         {} failing points at rate 1.0, {elapsed:?}",
        failing.len()
    );
}

// ---------------------------------------------------------------------------
// Criteria 4, 5, 7 share the desk-scale protocol.
// ---------------------------------------------------------------------------

struct Protocol {
    corpus: PathBuf,
    queries: PathBuf,
    qrels: PathBuf,
    poisons: PathBuf,
}

/// Writes the synthetic corpus plus a query-as-poison manifest (3 background
/// bases per query, query prepended) into `dir`.
fn desk_protocol(dir: &Path, synth: &SynthConfig, attack_seed: u64) -> (SynthData, Protocol) {
    let data = generate(synth).unwrap();
    let embedder = ReferenceEmbedder::new(EmbedderConfig::reference(512));

    let mut manifest: Vec<PoisonManifestEntry> = Vec::new();
    for (query_id, bases) in pick_attack_bases(&data, 3, attack_seed) {
        let query = data.queries.iter().find(|q| q.id == query_id).unwrap();
        for base_id in bases {
            let base = data.corpus.tokens(&base_id).unwrap();
            let record: PoisonRecord =
                query_as_poison(&query.tokens(), &base, InsertPosition::Prepend, &embedder)
                    .unwrap();
            manifest.push(PoisonManifestEntry::from(&record));
        }
    }

    let paths = Protocol {
        corpus: dir.join("corpus.jsonl"),
        queries: dir.join("queries.jsonl"),
        qrels: dir.join("qrels.tsv"),
        poisons: dir.join("poisons.jsonl"),
    };
    data.corpus.save(&paths.corpus).unwrap();
    save_queries(&paths.queries, &data.queries).unwrap();
    save_qrels(&paths.qrels, &data.qrels).unwrap();
    ragshield_core::attack::save_manifest(&paths.poisons, &manifest).unwrap();
    (data, paths)
}

fn experiment_config(paths: &Protocol, defense: DefenseSpec, seed: u64) -> ExperimentConfig {
    ExperimentConfig {
        corpus: paths.corpus.clone(),
        queries: paths.queries.clone(),
        qrels: Some(paths.qrels.clone()),
        poisons: Some(paths.poisons.clone()),
        embedder: EmbedderConfig::reference(512),
        defense,
        p: 10,
        rng_seed: seed,
        sweep: None,
    }
}

const RAGPART_SPEC: DefenseSpec = DefenseSpec::Ragpart {
    n: 5,
    k: 3,
    aggregation: AggregationStrategy::MajorityVote,
};

/// Calibrated for the reference embedder's inner-product scale: an injected
/// 8-token query costs ~15 similarity when masked, benign segments at most
/// ~7.
const RAGMASK_SPEC: DefenseSpec = DefenseSpec::Ragmask {
    m: 10,
    delta: 10.0,
    alpha: 2.0,
};

#[test]
fn criterion_4_end_to_end_defense_trend() {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let (_, paths) = desk_protocol(dir.path(), &SynthConfig::default(), 1234);

    let ragpart = run_experiment(&experiment_config(&paths, RAGPART_SPEC, 7), Some(1)).unwrap();
    let ragmask = run_experiment(&experiment_config(&paths, RAGMASK_SPEC, 7), Some(1)).unwrap();

    let point = &ragpart.grid[0];
    assert!(point.error.is_none(), "{:?}", point.error);
    let baseline_asr = point.baseline_asr.unwrap();
    let ragpart_asr = point.asr.unwrap();
    let ragpart_sr_drop = point.sr_drop.unwrap();
    assert!(
        baseline_asr >= 0.90,
        "undefended attack too weak: ASR {baseline_asr}"
    );
    assert!(ragpart_asr <= 0.10, "partition defense ASR {ragpart_asr}");
    assert!(
        ragpart_sr_drop <= 0.25,
        "partition defense SR drop {ragpart_sr_drop}"
    );

    let point = &ragmask.grid[0];
    assert!(point.error.is_none(), "{:?}", point.error);
    let ragmask_asr = point.asr.unwrap();
    let ragmask_sr_drop = point.sr_drop.unwrap();
    assert!(ragmask_asr <= 0.15, "mask defense ASR {ragmask_asr}");
    assert!(
        ragmask_sr_drop <= 0.10,
        "mask defense SR drop {ragmask_sr_drop}"
    );

    let elapsed = start.elapsed();
    assert!(
        elapsed.as_secs() < 300,
        "end-to-end protocol took {elapsed:?}, budget 5 min"
    );
    println!(
        "PASS criterion 4: baseline ASR {baseline_asr:.3}; partition ASR {ragpart_asr:.3} \
         SR drop {ragpart_sr_drop:.3}; mask ASR {ragmask_asr:.3} SR drop {ragmask_sr_drop:.3}; \
         {elapsed:?} single-threaded"
    );
}

// ---------------------------------------------------------------------------
// Criterion 5: huge delta turns the mask defense into a byte-identical no-op.
// ---------------------------------------------------------------------------

fn per_query_bytes(report: &ExperimentReport) -> Vec<u8> {
    serde_json::to_vec(&serde_json::to_value(&report.grid[0].per_query).unwrap()).unwrap()
}

#[test]
fn criterion_5_ragmask_no_op_limit() {
    for seed in 0..10u64 {
        let dir = tempfile::tempdir().unwrap();
        let synth = SynthConfig {
            seed: 100 + seed,
            n_docs: 220,
            n_queries: 8,
            ..Default::default()
        };
        let (_, paths) = desk_protocol(dir.path(), &synth, 9000 + seed);

        let noop_mask = DefenseSpec::Ragmask {
            m: 10,
            delta: 1.0e6,
            alpha: 2.0,
        };
        let masked = run_experiment(&experiment_config(&paths, noop_mask, seed), Some(1)).unwrap();
        let none = run_experiment(&experiment_config(&paths, DefenseSpec::None, seed), Some(1))
            .unwrap();
        assert!(masked.grid[0].error.is_none());
        assert_eq!(
            per_query_bytes(&masked),
            per_query_bytes(&none),
            "seed {seed}: masked output differs from undefended output"
        );
        assert_eq!(masked.grid[0].asr, none.grid[0].asr);
        assert_eq!(masked.grid[0].sr, none.grid[0].sr);
    }
    println!("PASS criterion 5: delta=1e6 output byte-identical to defense=none across 10 seeds");
}

// ---------------------------------------------------------------------------
// Criterion 6: oracle suites.
// ---------------------------------------------------------------------------

#[test]
fn criterion_6a_top_p_matches_full_sort_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(61);
    for trial in 0..100 {
        let docs = rng.gen_range(1..=10_000);
        let dim = rng.gen_range(1..=8);
        let p = rng.gen_range(1..=20);
        let entries: Vec<IndexEntry> = (0..docs)
            .map(|d| IndexEntry {
                doc_id: format!("d{d:05}"),
                combo_id: 0,
                vector: Embedding::new(
                    (0..dim).map(|_| (rng.gen_range(-100i32..=100) as f32) / 8.0).collect(),
                ),
            })
            .collect();
        let query = Embedding::new(
            (0..dim).map(|_| (rng.gen_range(-100i32..=100) as f32) / 8.0).collect(),
        );

        // Independent oracle: score everything with a scalar loop, full sort.
        let mut oracle: Vec<(String, f32)> = entries
            .iter()
            .map(|e| {
                let mut acc = 0.0f32;
                for i in 0..dim {
                    acc += e.vector.values[i] * query.values[i];
                }
                (e.doc_id.clone(), acc)
            })
            .collect();
        oracle.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        oracle.truncate(p);

        let index = VectorIndex::build(entries, 1, 1, IndexMethod::Full, 0).unwrap();
        let got = index.top_p(0, &query, p).unwrap();
        assert_eq!(got.entries, oracle, "trial {trial}");
    }
    println!("PASS criterion 6a: top-p equals the full-sort oracle on 100 random indexes");
}

#[test]
fn criterion_6b_unigram_additivity_exact() {
    let cfg = EmbedderConfig::reference_unigram(512);
    let vocab: Vec<String> = (0..20).map(|i| format!("word{i:02}")).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(62);
    for _ in 0..1000 {
        let mut draw = |rng: &mut ChaCha8Rng| {
            let len = rng.gen_range(0..=8);
            TokenSeq::new(
                (0..len).map(|_| vocab.choose(rng).unwrap().clone()).collect(),
                "",
            )
        };
        let a = draw(&mut rng);
        let b = draw(&mut rng);
        let ea = embed_reference(&a, &cfg);
        let eb = embed_reference(&b, &cfg);
        let ej = embed_reference(&TokenSeq::concat(&[&a, &b]), &cfg);
        for i in 0..cfg.dim {
            // Exact: f32 integer-valued accumulation, bit-for-bit.
            assert_eq!(ej.values[i].to_bits(), (ea.values[i] + eb.values[i]).to_bits());
        }
    }
    println!("PASS criterion 6b: embed(A+B) = embed(A) + embed(B) exactly on 1000 random pairs");
}

/// Exhaustive search over every fill of the slots, using per-gram
/// contribution tables derived from the public hash contract. The table
/// shortcut is validated against the black-box embed+similarity path on
/// sampled fills before use.
fn exhaustive_optimum(
    base: &TokenSeq,
    slots: &[usize],
    vocab: &[String],
    query_emb: &Embedding,
    cfg: &EmbedderConfig,
) -> f32 {
    let n = slots.len();
    let v = vocab.len();
    let dim = cfg.dim;
    let contribution = |tokens: &[&str]| -> f32 {
        let (idx, sign) = ngram_slot(tokens, dim);
        sign * query_emb.values[idx]
    };

    // The document with slot tokens removed contributes a constant; each
    // fill adds its slots' unigrams plus the bigrams crossing slot
    // boundaries. Precompute every possible such term.
    let mut poisoned: Vec<Option<&str>> = Vec::new();
    {
        let mut slot_iter = slots.iter().peekable();
        let mut base_iter = base.tokens.iter();
        for pos in 0..base.len() + n {
            if slot_iter.peek() == Some(&&pos) {
                slot_iter.next();
                poisoned.push(None);
            } else {
                poisoned.push(Some(base_iter.next().unwrap().as_str()));
            }
        }
    }

    // Constant part: grams not touching any slot.
    let mut constant = 0.0f32;
    for (i, tok) in poisoned.iter().enumerate() {
        if let Some(t) = tok {
            constant += contribution(&[t]);
            if i + 1 < poisoned.len() {
                if let Some(u) = poisoned[i + 1] {
                    constant += contribution(&[t, u]);
                }
            }
        }
    }

    // Per-slot unigram table and boundary bigram tables.
    let uni: Vec<f32> = vocab.iter().map(|w| contribution(&[w])).collect();
    // bigram_with_prev[s][w]: bigram (prev_token, w) when slot s follows a
    // fixed base token; analogous for next. Slot-slot adjacencies get a
    // v x v table.
    let mut prev_fixed: Vec<Option<Vec<f32>>> = vec![None; n];
    let mut next_fixed: Vec<Option<Vec<f32>>> = vec![None; n];
    let mut pair_table: BTreeMap<(usize, usize), Vec<f32>> = BTreeMap::new();
    for (s, &pos) in slots.iter().enumerate() {
        if pos > 0 {
            if let Some(t) = poisoned[pos - 1] {
                prev_fixed[s] =
                    Some(vocab.iter().map(|w| contribution(&[t, w])).collect());
            }
        }
        if pos + 1 < poisoned.len() {
            match poisoned[pos + 1] {
                Some(t) => {
                    next_fixed[s] =
                        Some(vocab.iter().map(|w| contribution(&[w, t])).collect());
                }
                None => {
                    // Adjacent slot: v x v table, row = this slot's token.
                    let next_slot = slots.iter().position(|&q| q == pos + 1).unwrap();
                    let mut table = Vec::with_capacity(v * v);
                    for a in vocab {
                        for b in vocab {
                            table.push(contribution(&[a, b]));
                        }
                    }
                    pair_table.insert((s, next_slot), table);
                }
            }
        }
    }

    let score_fill = |fill: &[usize]| -> f32 {
        let mut acc = constant;
        for (s, &w) in fill.iter().enumerate() {
            acc += uni[w];
            if let Some(t) = &prev_fixed[s] {
                acc += t[w];
            }
            if let Some(t) = &next_fixed[s] {
                acc += t[w];
            }
        }
        for (&(s, next), table) in &pair_table {
            acc += table[fill[s] * v + fill[next]];
        }
        acc
    };

    // Validate the table shortcut against the black-box embedding path.
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for _ in 0..5 {
        let fill: Vec<usize> = (0..n).map(|_| rng.gen_range(0..v)).collect();
        let mut tokens: Vec<String> = Vec::with_capacity(poisoned.len());
        let mut fill_iter = fill.iter();
        for tok in &poisoned {
            match tok {
                Some(t) => tokens.push((*t).to_string()),
                None => tokens.push(vocab[*fill_iter.next().unwrap()].clone()),
            }
        }
        let direct = similarity(
            &embed_reference(&TokenSeq::new(tokens, ""), cfg),
            query_emb,
        )
        .unwrap();
        let table = score_fill(&fill);
        assert!(
            (direct - table).abs() < 1e-3,
            "oracle shortcut disagrees with direct embedding: {direct} vs {table}"
        );
    }

    // Exhaustive maximum over all v^n fills.
    let mut best = f32::NEG_INFINITY;
    let mut fill = vec![0usize; n];
    loop {
        let s = score_fill(&fill);
        if s > best {
            best = s;
        }
        let mut carry = 0;
        loop {
            if carry == n {
                return best;
            }
            fill[carry] += 1;
            if fill[carry] < v {
                break;
            }
            fill[carry] = 0;
            carry += 1;
        }
    }
}

#[test]
fn criterion_6c_greedy_reaches_90pct_of_exhaustive_optimum() {
    let cfg = EmbedderConfig::reference(512);
    let embedder = ReferenceEmbedder::new(cfg.clone());
    let mut rng = ChaCha8Rng::seed_from_u64(63);

    let mut ratios = Vec::new();
    for trial in 0..50u64 {
        // Query and a 20-token vocabulary containing its terms plus decoys.
        let query_words: Vec<String> = (0..6).map(|i| format!("term{trial:02}x{i}")).collect();
        let mut vocab = query_words.clone();
        for d in 0..14 {
            vocab.push(format!("decoy{trial:02}x{d}"));
        }
        let query = TokenSeq::new(query_words, format!("q{trial}"));
        let query_emb = embed_reference(&query, &cfg);

        let base_len = rng.gen_range(20..40);
        let base = TokenSeq::new(
            (0..base_len).map(|i| format!("base{trial:02}x{i}")).collect(),
            format!("d{trial}"),
        );

        let budget = AttackBudget {
            n_tokens: 4,
            iterations: 30,
            candidates: 30,
            rng_seed: trial,
        };
        let record = greedy_flip(
            &query_emb,
            &base,
            &vocab,
            &budget,
            GreedyMode::Concentrated,
            &embedder,
        )
        .unwrap();

        let base_sim = similarity(&embed_reference(&base, &cfg), &query_emb).unwrap();
        let slots: Vec<usize> = record.injected_spans.iter().map(|&(p, _)| p).collect();
        let slot_positions: Vec<usize> = (slots[0]..slots[0] + 4).collect();
        let optimum = exhaustive_optimum(&base, &slot_positions, &vocab, &query_emb, &cfg);

        let greedy_gain = record.achieved_similarity - base_sim;
        let optimum_gain = optimum - base_sim;
        assert!(optimum_gain > 0.0, "degenerate trial {trial}");
        let ratio = greedy_gain / optimum_gain;
        assert!(
            ratio >= 0.90,
            "trial {trial}: greedy gain {greedy_gain} vs optimum {optimum_gain} (ratio {ratio})"
        );
        ratios.push(ratio);
    }
    let mean: f32 = ratios.iter().sum::<f32>() / ratios.len() as f32;
    println!(
        "PASS criterion 6c: greedy vs exhaustive optimum on 50 trials, \
         min ratio {:.3}, mean {:.3}",
        ratios.iter().fold(f32::INFINITY, |a, &b| a.min(b)),
        mean
    );
}

#[test]
fn criterion_6d_combinatorial_identity_by_enumeration() {
    for n in 1..=12u64 {
        for k in 1..=n {
            for n_p in 0..=n {
                // Oracle: classify every subset by how many of the first n_p
                // indices it contains.
                let combos = enumerate_combinations(n as usize, k as usize).unwrap();
                let mut exactly_one = 0u128;
                let mut two_plus = 0u128;
                for combo in &combos {
                    match combo.indices.iter().filter(|&&i| (i as u64) < n_p).count() {
                        0 => {}
                        1 => exactly_one += 1,
                        _ => two_plus += 1,
                    }
                }
                // C(N,k) = C(N-n_p,k) + n_p*C(N-n_p,k-1) + |mixes with >= 2|.
                assert_eq!(
                    binomial(n, k),
                    binomial(n - n_p, k) + u128::from(n_p) * binomial(n - n_p, k - 1) + two_plus
                );
                assert_eq!(
                    u128::from(n_p) * binomial(n - n_p, k - 1),
                    exactly_one,
                    "n={n} k={k} n_p={n_p}"
                );
                // And the implementation's counts agree with the enumeration.
                assert_eq!(
                    poisoned_mix_count(MixMethod::Ragpart, n, k, n_p).unwrap(),
                    two_plus
                );
            }
        }
    }
    println!("PASS criterion 6d: binomial decomposition verified by exhaustive enumeration, N <= 12");
}

// ---------------------------------------------------------------------------
// Criterion 7: byte-identical reports across reruns and worker counts.
// ---------------------------------------------------------------------------

#[test]
fn criterion_7_report_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let (_, paths) = desk_protocol(dir.path(), &SynthConfig::default(), 1234);

    for spec in [RAGPART_SPEC, RAGMASK_SPEC] {
        let config = experiment_config(&paths, spec, 7);
        let first = run_experiment(&config, Some(1)).unwrap().to_canonical_json().unwrap();
        let second = run_experiment(&config, Some(1)).unwrap().to_canonical_json().unwrap();
        let parallel = run_experiment(&config, Some(4)).unwrap().to_canonical_json().unwrap();
        assert_eq!(first, second, "rerun with the same seed differs");
        assert_eq!(first, parallel, "worker count changes the report bytes");
    }
    println!("PASS criterion 7: reports byte-identical across reruns and worker counts 1 vs 4");
}
