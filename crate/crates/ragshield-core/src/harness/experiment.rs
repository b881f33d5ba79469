//! Experiment orchestration: poison injection, defended retrieval against a
//! same-seed no-defense baseline, ASR/SR metrics, parameter sweeps, and
//! deterministic JSON reports.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::data::{load_qrels, load_queries, Corpus, Qrels, Query};
use super::metrics::{asr, sr, PoisonTargets, RetrievedSets};
use super::pipeline::{build_combo_index, build_full_index};
use crate::attack::{inject, load_manifest, records_from_manifest, PoisonManifestEntry};
use crate::defense::{build_defense, DefenseSpec, RetrievalContext};
use crate::embed::{build_embedder, Embedder, EmbedderConfig, Embedding};
use crate::error::{Error, Result};
use crate::index::{IndexMethod, VectorIndex};

/// One experiment: inputs, embedder, defense, result size and seed, plus
/// optional sweep axes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub corpus: PathBuf,
    pub queries: PathBuf,
    #[serde(default)]
    pub qrels: Option<PathBuf>,
    /// Poison manifest to inject before retrieval.
    #[serde(default)]
    pub poisons: Option<PathBuf>,
    #[serde(default)]
    pub embedder: EmbedderConfig,
    pub defense: DefenseSpec,
    pub p: usize,
    #[serde(default)]
    pub rng_seed: u64,
    #[serde(default)]
    pub sweep: Option<SweepAxes>,
}

/// Sweep axes; empty lists mean "use the defense's configured value".
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SweepAxes {
    #[serde(default)]
    pub n: Vec<usize>,
    #[serde(default)]
    pub k: Vec<usize>,
    #[serde(default)]
    pub m: Vec<usize>,
    #[serde(default)]
    pub delta: Vec<f32>,
    #[serde(default)]
    pub alpha: Vec<f64>,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<ExperimentConfig> {
        let bytes = std::fs::read(path)?;
        let config: ExperimentConfig = serde_json::from_slice(&bytes)?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.p == 0 {
            return Err(Error::usage("p must be >= 1"));
        }
        self.embedder.validate()?;
        for (what, path) in [
            ("corpus", Some(&self.corpus)),
            ("queries", Some(&self.queries)),
            ("qrels", self.qrels.as_ref()),
            ("poisons", self.poisons.as_ref()),
        ] {
            if let Some(path) = path {
                if !path.exists() {
                    return Err(Error::usage(format!(
                        "{what} file {} does not exist",
                        path.display()
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Embedder invocations per pipeline stage, for cost accounting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct EmbedderCalls {
    pub full_index: u64,
    pub combo_index: u64,
    pub queries: u64,
    pub defense: u64,
}

/// Retrieval outcome for one query under the configured defense.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerQueryOutcome {
    pub query_id: String,
    pub retrieved: Vec<String>,
    pub poison_hit: bool,
    pub golden_hit: bool,
}

/// Metrics and outcomes for one sweep grid point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPointReport {
    /// Axis values in effect at this point.
    pub params: BTreeMap<String, Value>,
    pub defense: String,
    pub baseline_asr: Option<f64>,
    pub baseline_sr: Option<f64>,
    pub asr: Option<f64>,
    pub sr: Option<f64>,
    /// `baseline - defended`; positive is good.
    pub asr_drop: Option<f64>,
    /// `baseline - defended`; positive is a utility loss.
    pub sr_drop: Option<f64>,
    pub per_query: Vec<PerQueryOutcome>,
    pub embedder_calls: EmbedderCalls,
    pub warnings: Vec<String>,
    /// Failure that aborted this grid point; the sweep continues.
    pub error: Option<String>,
}

/// Full experiment output. Wall-clock time is tracked but never serialized:
/// report JSON is byte-identical across reruns and worker counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: Value,
    pub grid: Vec<GridPointReport>,
    #[serde(skip)]
    pub wall_clock_ms: u128,
}

impl ExperimentReport {
    /// Stable serialized form: sorted keys, two-space indent, trailing
    /// newline.
    pub fn to_canonical_json(&self) -> Result<String> {
        let value = serde_json::to_value(self)?;
        let mut out = serde_json::to_string_pretty(&value)?;
        out.push('\n');
        Ok(out)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_canonical_json()?)?;
        Ok(())
    }

    pub fn has_errors(&self) -> bool {
        self.grid.iter().any(|g| g.error.is_some())
    }
}

/// Expands the sweep axes for the configured defense into concrete specs.
fn grid_points(config: &ExperimentConfig) -> Vec<(BTreeMap<String, Value>, DefenseSpec)> {
    let sweep = config.sweep.clone().unwrap_or_default();
    let axis = |values: &[Value], fallback: Value| -> Vec<Value> {
        if values.is_empty() {
            vec![fallback]
        } else {
            values.to_vec()
        }
    };
    let mut points = Vec::new();
    match &config.defense {
        DefenseSpec::None => points.push((BTreeMap::new(), DefenseSpec::None)),
        DefenseSpec::Ragpart { n, k, aggregation } | DefenseSpec::NaiveCombo { n, k, aggregation } => {
            let ns = axis(
                &sweep.n.iter().map(|v| Value::from(*v)).collect::<Vec<_>>(),
                Value::from(*n),
            );
            let ks = axis(
                &sweep.k.iter().map(|v| Value::from(*v)).collect::<Vec<_>>(),
                Value::from(*k),
            );
            for nv in &ns {
                for kv in &ks {
                    let mut params = BTreeMap::new();
                    params.insert("n".to_string(), nv.clone());
                    params.insert("k".to_string(), kv.clone());
                    let n = nv.as_u64().unwrap_or(0) as usize;
                    let k = kv.as_u64().unwrap_or(0) as usize;
                    let spec = match &config.defense {
                        DefenseSpec::Ragpart { .. } => DefenseSpec::Ragpart {
                            n,
                            k,
                            aggregation: *aggregation,
                        },
                        _ => DefenseSpec::NaiveCombo {
                            n,
                            k,
                            aggregation: *aggregation,
                        },
                    };
                    points.push((params, spec));
                }
            }
        }
        DefenseSpec::Ragmask { m, delta, alpha } => {
            let ms = axis(
                &sweep.m.iter().map(|v| Value::from(*v)).collect::<Vec<_>>(),
                Value::from(*m),
            );
            let deltas = axis(
                &sweep.delta.iter().map(|v| Value::from(*v)).collect::<Vec<_>>(),
                Value::from(*delta),
            );
            let alphas = axis(
                &sweep.alpha.iter().map(|v| Value::from(*v)).collect::<Vec<_>>(),
                Value::from(*alpha),
            );
            for mv in &ms {
                for dv in &deltas {
                    for av in &alphas {
                        let mut params = BTreeMap::new();
                        params.insert("m".to_string(), mv.clone());
                        params.insert("delta".to_string(), dv.clone());
                        params.insert("alpha".to_string(), av.clone());
                        points.push((
                            params,
                            DefenseSpec::Ragmask {
                                m: mv.as_u64().unwrap_or(0) as usize,
                                delta: dv.as_f64().unwrap_or(f64::NAN) as f32,
                                alpha: av.as_f64().unwrap_or(f64::NAN),
                            },
                        ));
                    }
                }
            }
        }
    }
    points
}

struct LoadedInputs {
    poisoned: Corpus,
    queries: Vec<Query>,
    qrels: Qrels,
    targets: PoisonTargets,
    qrels_warnings: Vec<String>,
}

fn load_inputs(config: &ExperimentConfig) -> Result<LoadedInputs> {
    let corpus = Corpus::load(&config.corpus)?;
    let queries = load_queries(&config.queries)?;
    let qrels = match &config.qrels {
        Some(path) => load_qrels(path, Some(&corpus))?,
        None => Qrels::default(),
    };
    let manifest: Vec<PoisonManifestEntry> = match &config.poisons {
        Some(path) => load_manifest(path)?,
        None => Vec::new(),
    };
    let records = records_from_manifest(&manifest);
    let (poisoned, _) = inject(&corpus, &records)?;
    let mut targets: PoisonTargets = BTreeMap::new();
    for entry in &manifest {
        targets
            .entry(entry.target_query_id.clone())
            .or_insert_with(BTreeSet::new)
            .insert(entry.poison_id.clone());
    }
    Ok(LoadedInputs {
        poisoned,
        queries,
        qrels_warnings: qrels.warnings.clone(),
        qrels,
        targets,
    })
}

fn retrieve_all(
    defense: &dyn crate::defense::Defense,
    queries: &[Query],
    query_embs: &[Embedding],
    index: &VectorIndex,
    corpus: &Corpus,
    embedder: &dyn Embedder,
    pool: &rayon::ThreadPool,
) -> Result<RetrievedSets> {
    let results: Result<Vec<(String, Vec<String>)>> = pool.install(|| {
        queries
            .par_iter()
            .zip(query_embs.par_iter())
            .map(|(query, emb)| {
                let ctx = RetrievalContext {
                    index,
                    docs: corpus,
                    embedder,
                };
                let result = defense.retrieve(emb, &ctx)?;
                Ok((query.id.clone(), result.final_docs))
            })
            .collect()
    });
    Ok(results?.into_iter().collect())
}

fn run_grid_point(
    inputs: &LoadedInputs,
    config: &ExperimentConfig,
    spec: &DefenseSpec,
    pool: &rayon::ThreadPool,
) -> Result<(RetrievedSets, RetrievedSets, EmbedderCalls)> {
    let embedder = build_embedder(&config.embedder)?;
    let mut calls = EmbedderCalls::default();

    let query_embs: Result<Vec<Embedding>> = pool.install(|| {
        inputs
            .queries
            .par_iter()
            .map(|q| embedder.embed_tokens(&q.tokens()))
            .collect()
    });
    let query_embs = query_embs?;
    calls.queries = embedder.calls();

    let full_index = build_full_index(&inputs.poisoned, embedder.as_ref(), &config.embedder)?;
    calls.full_index = embedder.calls() - calls.queries;

    // Baseline first: same corpus, same seed, no defense.
    let baseline_defense = build_defense(&DefenseSpec::None, config.p, config.rng_seed)?;
    let baseline = retrieve_all(
        baseline_defense.as_ref(),
        &inputs.queries,
        &query_embs,
        &full_index,
        &inputs.poisoned,
        embedder.as_ref(),
        pool,
    )?;

    let defense = build_defense(spec, config.p, config.rng_seed)?;
    let before_defense = embedder.calls();
    let defended = match defense.required_method() {
        IndexMethod::Full => {
            let defended = retrieve_all(
                defense.as_ref(),
                &inputs.queries,
                &query_embs,
                &full_index,
                &inputs.poisoned,
                embedder.as_ref(),
                pool,
            )?;
            calls.defense = embedder.calls() - before_defense;
            defended
        }
        method @ (IndexMethod::Ragpart | IndexMethod::Naive) => {
            let (n, k) = match spec {
                DefenseSpec::Ragpart { n, k, .. } | DefenseSpec::NaiveCombo { n, k, .. } => (*n, *k),
                _ => unreachable!("combo index implies a combo defense"),
            };
            let combo_index = build_combo_index(
                &inputs.poisoned,
                embedder.as_ref(),
                &config.embedder,
                n,
                k,
                method,
            )?;
            calls.combo_index = embedder.calls() - before_defense;
            let before_retrieve = embedder.calls();
            let defended = retrieve_all(
                defense.as_ref(),
                &inputs.queries,
                &query_embs,
                &combo_index,
                &inputs.poisoned,
                embedder.as_ref(),
                pool,
            )?;
            calls.defense = embedder.calls() - before_retrieve;
            defended
        }
    };
    Ok((baseline, defended, calls))
}

/// Runs the configured experiment: the no-defense baseline first, then the
/// defense, per sweep grid point. A failing point is recorded and the sweep
/// continues. All randomness derives from `config.rng_seed`; the report is
/// byte-identical for a fixed config and seed regardless of `workers`.
pub fn run_experiment(
    config: &ExperimentConfig,
    workers: Option<usize>,
) -> Result<ExperimentReport> {
    let start = Instant::now();
    config.validate()?;
    let inputs = load_inputs(config)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.unwrap_or(0))
        .build()
        .map_err(|e| Error::usage(format!("thread pool: {e}")))?;

    let mut grid = Vec::new();
    for (params, spec) in grid_points(config) {
        let point = match run_grid_point(&inputs, config, &spec, &pool) {
            Ok((baseline, defended, calls)) => {
                let baseline_asr = asr(&baseline, &inputs.targets);
                let baseline_sr = sr(&baseline, &inputs.qrels);
                let defended_asr = asr(&defended, &inputs.targets);
                let defended_sr = sr(&defended, &inputs.qrels);
                let per_query = defended
                    .iter()
                    .map(|(query_id, retrieved)| {
                        let poison_hit = inputs
                            .targets
                            .get(query_id)
                            .is_some_and(|t| retrieved.iter().any(|d| t.contains(d)));
                        let golden_hit = inputs
                            .qrels
                            .golden_for(query_id)
                            .is_some_and(|g| retrieved.iter().any(|d| g.contains(d)));
                        PerQueryOutcome {
                            query_id: query_id.clone(),
                            retrieved: retrieved.clone(),
                            poison_hit,
                            golden_hit,
                        }
                    })
                    .collect();
                GridPointReport {
                    params,
                    defense: spec.name().to_string(),
                    baseline_asr,
                    baseline_sr,
                    asr: defended_asr,
                    sr: defended_sr,
                    asr_drop: baseline_asr.zip(defended_asr).map(|(b, d)| b - d),
                    sr_drop: baseline_sr.zip(defended_sr).map(|(b, d)| b - d),
                    per_query,
                    embedder_calls: calls,
                    warnings: inputs.qrels_warnings.clone(),
                    error: None,
                }
            }
            Err(err) => GridPointReport {
                params,
                defense: spec.name().to_string(),
                baseline_asr: None,
                baseline_sr: None,
                asr: None,
                sr: None,
                asr_drop: None,
                sr_drop: None,
                per_query: Vec::new(),
                embedder_calls: EmbedderCalls::default(),
                warnings: inputs.qrels_warnings.clone(),
                error: Some(err.to_string()),
            },
        };
        grid.push(point);
    }

    Ok(ExperimentReport {
        config: serde_json::to_value(config)?,
        grid,
        wall_clock_ms: start.elapsed().as_millis(),
    })
}
