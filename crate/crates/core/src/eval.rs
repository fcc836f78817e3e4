//! Filtered ranking and MRR / Hits@K reports.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::data::{FilterIndex, Triple};
use crate::error::{Error, Result};
use crate::model::Model;

/// How ties between the true tail and competitors are resolved.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TieBreak {
    /// Uniform position among the tied block.
    #[default]
    Random,
    /// True tail ranked after every tied competitor.
    Pessimistic,
    /// True tail ranked before every tied competitor.
    Optimistic,
}

impl std::str::FromStr for TieBreak {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(TieBreak::Random),
            "pessimistic" => Ok(TieBreak::Pessimistic),
            "optimistic" => Ok(TieBreak::Optimistic),
            _ => Err(Error::domain(format!("unknown tie-break mode `{s}`"))),
        }
    }
}

/// Competitors of the true tail, after filtering.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RankCounts {
    pub greater: usize,
    pub tied: usize,
}

/// Counts candidates `j ≠ t_true` outside `filter` scoring above or equal to
/// the true tail. `filter` must be sorted and contain `t_true`.
pub fn rank_counts(scores: &[f64], t_true: usize, filter: &[usize]) -> Result<RankCounts> {
    let Some(&target) = scores.get(t_true) else {
        return Err(Error::domain(format!(
            "true tail {t_true} outside the candidate pool of {}",
            scores.len()
        )));
    };
    if filter.binary_search(&t_true).is_err() {
        return Err(Error::domain(format!(
            "filter index lacks the true tail {t_true}"
        )));
    }
    if !target.is_finite() {
        return Err(Error::numeric("ranking", format!("score of true tail {t_true} is {target}")));
    }
    let (mut greater, mut tied) = (0usize, 0usize);
    for (j, &s) in scores.iter().enumerate() {
        if s > target {
            greater += 1;
        } else if s == target {
            tied += 1;
        } else if s.is_nan() {
            return Err(Error::numeric("ranking", format!("score of candidate {j} is NaN")));
        }
    }
    // the true tail ties with itself; filtered entities are removed
    tied -= 1;
    for &j in filter {
        if j == t_true {
            continue;
        }
        let s = scores[j];
        if s > target {
            greater -= 1;
        } else if s == target {
            tied -= 1;
        }
    }
    Ok(RankCounts { greater, tied })
}

/// Filtered rank of `t_true` (1 = best). `rng` is only drawn from under
/// [`TieBreak::Random`] when there are ties.
pub fn rank_filtered<R: Rng + ?Sized>(
    scores: &[f64],
    t_true: usize,
    filter: &[usize],
    tie_break: TieBreak,
    rng: &mut R,
) -> Result<usize> {
    let RankCounts { greater, tied } = rank_counts(scores, t_true, filter)?;
    let extra = match tie_break {
        TieBreak::Optimistic => 0,
        TieBreak::Pessimistic => tied,
        TieBreak::Random if tied == 0 => 0,
        TieBreak::Random => rng.random_range(0..=tied),
    };
    Ok(1 + greater + extra)
}

/// Aggregated ranking metrics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MetricReport {
    pub mrr: f64,
    pub h1: f64,
    pub h3: f64,
    pub h10: f64,
    pub n_queries: usize,
}

impl MetricReport {
    /// Metrics of a rank list. Reciprocal ranks are summed in ascending rank
    /// order, so the result does not depend on query order.
    pub fn from_ranks(ranks: &[usize]) -> Result<Self> {
        if ranks.is_empty() {
            return Err(Error::domain("cannot compute metrics of an empty query set"));
        }
        if ranks.contains(&0) {
            return Err(Error::domain("ranks start at 1"));
        }
        let mut sorted = ranks.to_vec();
        sorted.sort_unstable();
        let n = sorted.len() as f64;
        let mrr = sorted.iter().map(|&r| 1.0 / r as f64).sum::<f64>() / n;
        let hits = |k: usize| sorted.partition_point(|&r| r <= k) as f64 / n;
        Ok(MetricReport {
            mrr,
            h1: hits(1),
            h3: hits(3),
            h10: hits(10),
            n_queries: sorted.len(),
        })
    }
}

/// Evaluation settings.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EvalOptions {
    pub tie_break: TieBreak,
    pub seed: u64,
    /// Worker threads; 1 runs on the calling thread.
    pub threads: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            tie_break: TieBreak::Random,
            seed: 0,
            threads: 1,
        }
    }
}

/// Seed for the tie-break draw of one query, a pure function of the evaluation
/// seed and the query (splitmix64 finaliser over the four words).
fn query_seed(seed: u64, q: &Triple) -> u64 {
    let mut x = seed;
    for w in [q.head as u64, q.relation as u64, q.tail as u64] {
        x = x.wrapping_add(w).wrapping_add(0x9e37_79b9_7f4a_7c15);
        x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        x ^= x >> 31;
    }
    x
}

fn rank_one(model: &Model, q: &Triple, filter: &FilterIndex, opts: &EvalOptions) -> Result<usize> {
    let scores = model.score_against_all(q.head, q.relation)?;
    let mut rng = ChaCha8Rng::seed_from_u64(query_seed(opts.seed, q));
    rank_filtered(&scores, q.tail, filter.tails(q.head, q.relation), opts.tie_break, &mut rng)
}

/// Filtered tail rank of every query, in query order.
pub fn rank_queries(
    model: &Model,
    queries: &[Triple],
    filter: &FilterIndex,
    opts: &EvalOptions,
) -> Result<Vec<usize>> {
    if opts.threads <= 1 {
        return queries.iter().map(|q| rank_one(model, q, filter, opts)).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.threads)
        .build()
        .map_err(|e| Error::domain(format!("thread pool: {e}")))?;
    pool.install(|| queries.par_iter().map(|q| rank_one(model, q, filter, opts)).collect())
}

/// Pooled metrics over all queries (pass reciprocal-augmented splits to cover
/// both prediction directions).
pub fn evaluate_split(
    model: &Model,
    queries: &[Triple],
    filter: &FilterIndex,
    opts: &EvalOptions,
) -> Result<MetricReport> {
    if queries.is_empty() {
        return Err(Error::domain("empty evaluation split"));
    }
    MetricReport::from_ranks(&rank_queries(model, queries, filter, opts)?)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RelationReport {
    pub relation: String,
    pub n: usize,
    pub mrr: f64,
    pub h1: f64,
    pub h3: f64,
    pub h10: f64,
}

/// Groups ranks by `relation_name(query.relation)` and reports each group,
/// sorted by name.
pub fn per_relation_report(
    queries: &[Triple],
    ranks: &[usize],
    relation_name: impl Fn(usize) -> String,
) -> Result<Vec<RelationReport>> {
    if queries.len() != ranks.len() {
        return Err(Error::domain("one rank per query expected"));
    }
    let mut groups: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (q, &r) in queries.iter().zip(ranks) {
        groups.entry(relation_name(q.relation)).or_default().push(r);
    }
    groups
        .into_iter()
        .map(|(relation, rs)| {
            let m = MetricReport::from_ranks(&rs)?;
            Ok(RelationReport {
                relation,
                n: m.n_queries,
                mrr: m.mrr,
                h1: m.h1,
                h3: m.h3,
                h10: m.h10,
            })
        })
        .collect()
}

/// Writes `split,n_queries,mrr,h1,h3,h10` with one data row.
pub fn write_metrics_csv(path: impl AsRef<Path>, split: &str, m: &MetricReport) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["split", "n_queries", "mrr", "h1", "h3", "h10"])?;
    w.write_record([
        split.to_owned(),
        m.n_queries.to_string(),
        m.mrr.to_string(),
        m.h1.to_string(),
        m.h3.to_string(),
        m.h10.to_string(),
    ])?;
    w.flush().map_err(|e| Error::io(path, e))
}

/// Writes `relation,n,mrr,h1,h3,h10`.
pub fn write_per_relation_csv(path: impl AsRef<Path>, rows: &[RelationReport]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    w.write_record(["relation", "n", "mrr", "h1", "h3", "h10"])?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
