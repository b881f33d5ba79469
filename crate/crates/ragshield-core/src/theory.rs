//! Combinatorial robustness conditions, condition grids, FLOP cost models,
//! and a worst-case aggregation simulator.
//!
//! For a document split into `N` fragments with `n_p` of them poisoned, the
//! number of size-`k` mixes that remain adversarial is
//!
//! - naive baseline: `C(N,k) - C(N-n_p,k)` (any mix touching a poisoned
//!   fragment), and
//! - partition defense: `C(N,k) - C(N-n_p,k) - n_p * C(N-n_p,k-1)` (mean
//!   pooling neutralizes mixes with exactly one poisoned fragment).
//!
//! With `n_a` adversarial documents, majority voting provably excludes all
//! of them when each contributes fewer than `C(N,k) / (n_a + 1)` poisoned
//! mixes; the comparison is evaluated in exact integer arithmetic.

use num_bigint::BigUint;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::defense::aggregate_majority;
use crate::error::{Error, Result};
use crate::index::RankedList;

/// Which combination scheme a count refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MixMethod {
    Naive,
    Ragpart,
}

impl MixMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            MixMethod::Naive => "naive",
            MixMethod::Ragpart => "ragpart",
        }
    }
}

/// Exact binomial coefficient; zero when `k > n`.
pub fn binomial(n: u64, k: u64) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * u128::from(n - i) / u128::from(i + 1);
    }
    acc
}

/// Parameters of the robustness condition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TheoryParams {
    /// Fragments per document.
    pub n: u64,
    /// Combination size.
    pub k: u64,
    /// Poisoned fragments per adversarial document.
    pub n_p: u64,
    /// Adversarial documents in the corpus.
    pub n_a: u64,
    /// Final result size.
    pub p: usize,
}

impl TheoryParams {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.k > self.n {
            return Err(Error::usage(format!(
                "k={} must satisfy 1 <= k <= N={}",
                self.k, self.n
            )));
        }
        if self.n_p > self.n {
            return Err(Error::usage(format!(
                "n_p={} cannot exceed N={}",
                self.n_p, self.n
            )));
        }
        if self.p == 0 {
            return Err(Error::usage("p must be >= 1"));
        }
        Ok(())
    }
}

/// Number of size-`k` mixes that count as adversarial for one document with
/// `n_p` poisoned fragments.
pub fn poisoned_mix_count(method: MixMethod, n: u64, k: u64, n_p: u64) -> Result<u128> {
    if k == 0 || k > n {
        return Err(Error::usage(format!("k={k} must satisfy 1 <= k <= N={n}")));
    }
    if n_p > n {
        return Err(Error::usage(format!("n_p={n_p} cannot exceed N={n}")));
    }
    let total = binomial(n, k);
    let clean = binomial(n - n_p, k);
    Ok(match method {
        MixMethod::Naive => total - clean,
        MixMethod::Ragpart => {
            let single = u128::from(n_p) * binomial(n - n_p, k - 1);
            total - clean - single
        }
    })
}

/// Sufficient condition for majority-vote robustness: each adversary's
/// poisoned-mix count stays under `C(N,k) / (n_a + 1)`, compared exactly.
pub fn robustness_holds(method: MixMethod, params: &TheoryParams) -> Result<bool> {
    params.validate()?;
    let count = poisoned_mix_count(method, params.n, params.k, params.n_p)?;
    let total = binomial(params.n, params.k);
    // count < total / (n_a + 1), kept in integers.
    Ok(count * u128::from(params.n_a + 1) < total)
}

/// One cell of a condition grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellStatus {
    Holds,
    Fails,
    NotApplicable,
}

impl CellStatus {
    pub fn symbol(self) -> &'static str {
        match self {
            CellStatus::Holds => "✓",
            CellStatus::Fails => "✗",
            CellStatus::NotApplicable => "N/A",
        }
    }
}

/// A rendered condition grid over ranges of `N` and `k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionTable {
    pub method: MixMethod,
    pub n_p: u64,
    pub n_a: u64,
    pub n_values: Vec<u64>,
    pub k_values: Vec<u64>,
    /// Row-major: `cells[i][j]` is the status at `(n_values[i], k_values[j])`.
    pub cells: Vec<Vec<CellStatus>>,
}

/// Evaluates the condition on the grid `n_range x k_range` (inclusive).
/// Cells with `k > N` are not applicable.
pub fn condition_table(
    method: MixMethod,
    n_p: u64,
    n_a: u64,
    n_range: (u64, u64),
    k_range: (u64, u64),
) -> Result<ConditionTable> {
    if n_range.0 > n_range.1 || k_range.0 > k_range.1 {
        return Err(Error::usage("empty table range"));
    }
    if n_range.0 == 0 || k_range.0 == 0 {
        return Err(Error::usage("table ranges start at 1"));
    }
    let n_values: Vec<u64> = (n_range.0..=n_range.1).collect();
    let k_values: Vec<u64> = (k_range.0..=k_range.1).collect();
    let mut cells = Vec::with_capacity(n_values.len());
    for &n in &n_values {
        let mut row = Vec::with_capacity(k_values.len());
        for &k in &k_values {
            if k > n || n_p > n {
                row.push(CellStatus::NotApplicable);
                continue;
            }
            let params = TheoryParams {
                n,
                k,
                n_p,
                n_a,
                p: 1,
            };
            row.push(if robustness_holds(method, &params)? {
                CellStatus::Holds
            } else {
                CellStatus::Fails
            });
        }
        cells.push(row);
    }
    Ok(ConditionTable {
        method,
        n_p,
        n_a,
        n_values,
        k_values,
        cells,
    })
}

impl ConditionTable {
    /// Plain-text rendering in the familiar `N \ k` layout.
    pub fn render_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "robustness condition: method={} n_p={} n_a={}\n",
            self.method.as_str(),
            self.n_p,
            self.n_a
        ));
        out.push_str(&format!("{:>4}", "N\\k"));
        for k in &self.k_values {
            out.push_str(&format!("{k:>5}"));
        }
        out.push('\n');
        for (i, n) in self.n_values.iter().enumerate() {
            out.push_str(&format!("{n:>4}"));
            for cell in &self.cells[i] {
                out.push_str(&format!("{:>5}", cell.symbol()));
            }
            out.push('\n');
        }
        out
    }

    pub fn cell(&self, n: u64, k: u64) -> Option<CellStatus> {
        let i = self.n_values.iter().position(|&v| v == n)?;
        let j = self.k_values.iter().position(|&v| v == k)?;
        Some(self.cells[i][j])
    }
}

/// Inputs of the FLOP cost models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostParams {
    /// Corpus size `D`.
    pub d: u64,
    /// FLOPs for one fragment-scale embedder forward pass (`R`).
    pub r: u64,
    /// Embedding dimension.
    pub n_e: u64,
    /// Maximum document length in tokens.
    pub l: u64,
    /// Mask length.
    pub m: u64,
    pub alpha: f64,
    pub p: u64,
}

impl Default for CostParams {
    fn default() -> Self {
        Self {
            d: 1_000_000,
            r: 1_000_000_000,
            n_e: 512,
            l: 1000,
            m: 10,
            alpha: 2.0,
            p: 10,
        }
    }
}

impl CostParams {
    pub fn validate(&self) -> Result<()> {
        if self.r == 0 || self.n_e == 0 || self.l == 0 || self.m == 0 || self.p == 0 {
            return Err(Error::usage("cost parameters must be positive"));
        }
        if !(self.alpha > 1.0) {
            return Err(Error::usage("alpha must be > 1"));
        }
        Ok(())
    }
}

/// Which pipeline stage the FLOP model covers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlopsMethod {
    /// Embed every k-fragment mix: `D * C(N,k) * k * R`.
    Naive,
    /// Embed fragments once, then pool: `D * N * R + D * C(N,k) * k * n_e`.
    RagpartEmbed,
    /// Score all mixes against a query: `2 * n_e * D * C(N,k)`.
    RagpartSimilarity,
    /// Sanitize a candidate pool: `R * ceil(l/m) * ceil(alpha * p)`.
    Ragmask,
}

impl FlopsMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            FlopsMethod::Naive => "naive",
            FlopsMethod::RagpartEmbed => "ragpart_embed",
            FlopsMethod::RagpartSimilarity => "ragpart_similarity",
            FlopsMethod::Ragmask => "ragmask",
        }
    }
}

/// Exact FLOP count for one cost model.
pub fn flops(cost: &CostParams, method: FlopsMethod, n: u64, k: u64) -> Result<BigUint> {
    cost.validate()?;
    if matches!(method, FlopsMethod::Naive | FlopsMethod::RagpartEmbed | FlopsMethod::RagpartSimilarity)
        && (k == 0 || k > n)
    {
        return Err(Error::usage(format!("k={k} must satisfy 1 <= k <= N={n}")));
    }
    let d = BigUint::from(cost.d);
    let combos = BigUint::from(binomial(n, k));
    Ok(match method {
        FlopsMethod::Naive => d * combos * BigUint::from(k) * BigUint::from(cost.r),
        FlopsMethod::RagpartEmbed => {
            let embed = &d * BigUint::from(n) * BigUint::from(cost.r);
            let pool = &d * combos * BigUint::from(k) * BigUint::from(cost.n_e);
            embed + pool
        }
        FlopsMethod::RagpartSimilarity => {
            BigUint::from(2u32) * BigUint::from(cost.n_e) * d * combos
        }
        FlopsMethod::Ragmask => {
            let segments = cost.l.div_ceil(cost.m);
            let pool = (cost.alpha * cost.p as f64).ceil() as u64;
            BigUint::from(cost.r) * BigUint::from(segments) * BigUint::from(pool)
        }
    })
}

/// Outcome of the worst-case aggregation simulation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationOutcome {
    pub trials: usize,
    pub adversary_retrieved_rate: f64,
}

/// Simulates majority voting under the worst-case poisoned-mix placement.
///
/// Per trial: `p - 1` clean documents appear in every per-combination top-p
/// list; each of the `n_a` adversaries claims its poisoned-mix count of
/// columns (at most one adversary per column while capacity allows),
/// displacing the bottom-ranked clean document there. Adversary ids sort
/// before clean ids, so count ties resolve in the adversary's favor — the
/// genuinely worst case. Reports the fraction of trials in which any
/// adversary survives into the aggregated top-p.
pub fn worst_case_simulation(
    method: MixMethod,
    params: &TheoryParams,
    trials: usize,
    seed: u64,
) -> Result<SimulationOutcome> {
    params.validate()?;
    if trials == 0 {
        return Err(Error::usage("trials must be >= 1"));
    }
    let total = binomial(params.n, params.k);
    if total > 10_000_000 {
        return Err(Error::usage(format!(
            "simulation grid C({},{}) = {total} is too large",
            params.n, params.k
        )));
    }
    let columns = total as usize;
    let x = poisoned_mix_count(method, params.n, params.k, params.n_p)? as usize;
    let p = params.p;
    let n_a = params.n_a as usize;

    let clean_ids: Vec<String> = (0..p).map(|i| format!("doc_{i:04}")).collect();
    let adv_ids: Vec<String> = (0..n_a).map(|a| format!("adv_{a:04}")).collect();

    let hit_count: usize = (0..trials)
        .into_par_iter()
        .map(|trial| {
            // Independent stream per trial keeps the result identical under
            // any worker count.
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (trial as u64).wrapping_mul(0x9e37_79b9));
            // columns[c] = list of doc indices; clean docs first, ranked.
            let mut cols: Vec<Vec<&str>> = vec![clean_ids.iter().map(String::as_str).collect(); columns];
            let mut order: Vec<usize> = (0..columns).collect();
            order.shuffle(&mut rng);

            // Pass 1 places each adversary into columns without any poison
            // yet; pass 2 relaxes that when demand exceeds capacity.
            let mut poisoned_in: Vec<usize> = vec![0; columns];
            for adv in &adv_ids {
                let mut placed = 0;
                for pass in 0..2 {
                    if placed == x {
                        break;
                    }
                    for &c in &order {
                        if placed == x {
                            break;
                        }
                        if pass == 0 && poisoned_in[c] > 0 {
                            continue;
                        }
                        let col = &mut cols[c];
                        // A document appears at most once per list, and only
                        // clean docs can be displaced.
                        if col.len() - poisoned_in[c] == 0
                            || col.iter().any(|d| *d == adv.as_str())
                        {
                            continue;
                        }
                        // Displace the bottom-ranked clean doc.
                        let clean_left = col.len() - poisoned_in[c];
                        col.remove(clean_left - 1);
                        col.push(adv.as_str());
                        poisoned_in[c] += 1;
                        placed += 1;
                    }
                }
            }

            let lists: Vec<RankedList> = cols
                .into_iter()
                .map(|docs| RankedList {
                    entries: docs
                        .into_iter()
                        .enumerate()
                        .map(|(rank, d)| (d.to_string(), (p - rank) as f32))
                        .collect(),
                })
                .collect();
            let result = aggregate_majority(lists, p);
            let hit = result
                .final_docs
                .iter()
                .any(|d| d.starts_with("adv_"));
            usize::from(hit)
        })
        .sum();

    Ok(SimulationOutcome {
        trials,
        adversary_retrieved_rate: hit_count as f64 / trials as f64,
    })
}
