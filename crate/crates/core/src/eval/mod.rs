//! Time-consistent filtered ranking and the chronological evaluation pass.

mod analysis;

pub use analysis::{analyze_states, truncation_experiment, write_analysis_csv, AnalysisRow, TruncationRow};

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{EntityId, Quadruple, RelationId, Split, TemporalKG};
use crate::error::{EstError, Result};
use crate::memory::DualStateMemory;
use crate::model::{EstModel, StateSource};
use crate::train::{apply_writes, Ablation, PendingWrite};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FilterMode {
    /// Removes objects seen for `(s, r)` at any earlier timestamp.
    #[serde(rename = "rolling")]
    Rolling,
    /// Removes other objects that are correct at the query timestamp.
    #[serde(rename = "standard")]
    TimeAwareStandard,
}

impl fmt::Display for FilterMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FilterMode::Rolling => "rolling",
            FilterMode::TimeAwareStandard => "standard",
        })
    }
}

impl FromStr for FilterMode {
    type Err = EstError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "rolling" => Ok(FilterMode::Rolling),
            "standard" => Ok(FilterMode::TimeAwareStandard),
            _ => Err(EstError::Config(format!("unknown filter '{s}' (valid: rolling, standard)"))),
        }
    }
}

/// `1 + #{e not filtered, e != gold : score[e] > score[gold]}`.
pub fn filtered_rank(scores: &[f64], gold: EntityId, filter: &HashSet<EntityId>) -> Result<usize> {
    if gold >= scores.len() {
        return Err(EstError::Validation(format!(
            "gold entity {gold} out of range for {} scores",
            scores.len()
        )));
    }
    let g = scores[gold];
    let better = scores
        .iter()
        .enumerate()
        .filter(|(e, s)| *e != gold && **s > g && !filter.contains(e))
        .count();
    Ok(1 + better)
}

/// Incrementally maintained filter state for one evaluation pass.
#[derive(Debug, Clone)]
pub struct RollingFilter {
    mode: FilterMode,
    seen: HashMap<(EntityId, RelationId), HashSet<EntityId>>,
}

impl RollingFilter {
    pub fn new(mode: FilterMode) -> Self {
        RollingFilter {
            mode,
            seen: HashMap::new(),
        }
    }

    pub fn mode(&self) -> FilterMode {
        self.mode
    }

    /// Reveals facts; call only after every query at their timestamp is ranked.
    pub fn observe(&mut self, facts: &[Quadruple]) {
        for q in facts {
            self.seen.entry((q.subject, q.relation)).or_default().insert(q.object);
        }
    }

    /// Entities excluded from the ranking of `query` (never the gold object).
    pub fn filter_set(&self, kg: &TemporalKG, query: &Quadruple) -> HashSet<EntityId> {
        let mut set: HashSet<EntityId> = match self.mode {
            FilterMode::Rolling => self
                .seen
                .get(&(query.subject, query.relation))
                .cloned()
                .unwrap_or_default(),
            FilterMode::TimeAwareStandard => kg
                .objects_at(query.subject, query.relation, query.time)
                .iter()
                .copied()
                .collect(),
        };
        set.remove(&query.object);
        set
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RankedQuery {
    pub query: Quadruple,
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankingReport {
    pub per_query: Vec<RankedQuery>,
    pub mrr: f64,
    pub hits1: f64,
    pub hits3: f64,
    pub hits10: f64,
    pub query_count: usize,
}

impl RankingReport {
    pub fn from_ranks(per_query: Vec<RankedQuery>) -> Result<Self> {
        if per_query.is_empty() {
            return Err(EstError::Config("no queries to aggregate".into()));
        }
        if per_query.iter().any(|q| q.rank == 0) {
            return Err(EstError::Validation("ranks start at 1".into()));
        }
        let n = per_query.len() as f64;
        let hits = |k: usize| per_query.iter().filter(|q| q.rank <= k).count() as f64 / n;
        Ok(RankingReport {
            mrr: per_query.iter().map(|q| 1.0 / q.rank as f64).sum::<f64>() / n,
            hits1: hits(1),
            hits3: hits(3),
            hits10: hits(10),
            query_count: per_query.len(),
            per_query,
        })
    }

    pub fn write_ranks_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "subject,relation,object,time,rank")?;
        for q in &self.per_query {
            let f = q.query;
            writeln!(out, "{},{},{},{},{}", f.subject, f.relation, f.object, f.time, q.rank)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalOptions {
    pub filter: FilterMode,
    pub history_len: usize,
    pub ablation: Ablation,
}

fn states<'a>(memory: &'a DualStateMemory, ablation: Ablation) -> StateSource<'a> {
    if ablation.wo_state {
        StateSource::Zeros
    } else {
        StateSource::Memory(memory)
    }
}

/// Splits time-sorted facts into per-timestamp runs.
pub(crate) fn by_timestamp(facts: &[Quadruple]) -> impl Iterator<Item = &[Quadruple]> {
    facts.chunk_by(|a, b| a.time == b.time)
}

/// Advances memory through `facts` without scoring: per timestamp, contexts
/// come from the frozen state, then all writes are applied.
pub fn replay_memory(
    kg: &TemporalKG,
    model: &EstModel,
    memory: &mut DualStateMemory,
    facts: &[Quadruple],
    opts: &EvalOptions,
) -> Result<()> {
    if opts.ablation.wo_state {
        return Ok(());
    }
    for group in by_timestamp(facts) {
        let mut writes = Vec::with_capacity(group.len());
        for q in group {
            let (_, ctx) = model.forward_query(
                kg,
                StateSource::Memory(memory),
                q.subject,
                q.relation,
                q.time,
                opts.history_len,
                opts.ablation.wo_context,
            )?;
            writes.push(PendingWrite::from_context(q.subject, ctx));
        }
        apply_writes(memory, &writes)?;
    }
    Ok(())
}

/// Ranks every query of `split` in timestamp order, revealing each
/// timestamp's facts to the filter and the memory only after scoring it.
///
/// `memory` should hold the end-of-training state; facts between the end of
/// training and the start of `split` are replayed into it first.
pub fn evaluate(
    kg: &TemporalKG,
    model: &EstModel,
    memory: &mut DualStateMemory,
    split: Split,
    opts: &EvalOptions,
) -> Result<RankingReport> {
    let range = kg.split_range(split);
    let train_end = kg.split_range(Split::Train).end;
    if range.start < train_end {
        return Err(EstError::Config(format!("cannot evaluate on the {split} split")));
    }
    replay_memory(kg, model, memory, &kg.facts()[train_end..range.start], opts)?;
    rank_split(kg, model, memory, split, opts)
}

/// [`evaluate`] without the replay: `memory` must already reflect every
/// fact before the split.
pub fn rank_split(
    kg: &TemporalKG,
    model: &EstModel,
    memory: &mut DualStateMemory,
    split: Split,
    opts: &EvalOptions,
) -> Result<RankingReport> {
    let range = kg.split_range(split);
    if range.is_empty() {
        return Err(EstError::Config(format!("{split} split is empty")));
    }
    let facts = kg.facts();
    let mut filter = RollingFilter::new(opts.filter);
    filter.observe(&facts[..range.start]);
    let mut ranked = Vec::with_capacity(range.len());
    for group in by_timestamp(&facts[range]) {
        let mut writes = Vec::with_capacity(group.len());
        for q in group {
            let (scores, ctx) = model.forward_query(
                kg,
                states(memory, opts.ablation),
                q.subject,
                q.relation,
                q.time,
                opts.history_len,
                opts.ablation.wo_context,
            )?;
            if let Some(bad) = scores.iter().find(|s| !s.is_finite()) {
                return Err(EstError::Numeric(format!("non-finite score {bad} for query {q:?}")));
            }
            let rank = filtered_rank(&scores, q.object, &filter.filter_set(kg, q))?;
            ranked.push(RankedQuery { query: *q, rank });
            writes.push(PendingWrite::from_context(q.subject, ctx));
        }
        filter.observe(group);
        if !opts.ablation.wo_state {
            apply_writes(memory, &writes)?;
        }
    }
    RankingReport::from_ranks(ranked)
}
