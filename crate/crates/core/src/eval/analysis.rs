//! Chronological truncation sweeps and state-displacement analysis.

use std::collections::HashMap;
use std::io::Write;

use crate::data::{EntityId, Split, TemporalKG};
use crate::error::{EstError, Result};
use crate::memory::{csv_field, DualStateMemory, SlowSnapshot};
use crate::model::{EstModel, ModelConfig};
use crate::train::{train, TrainConfig};

use super::{evaluate, RankingReport};

#[derive(Debug, Clone, PartialEq)]
pub struct TruncationRow {
    pub percent: u32,
    pub train_timestamps: usize,
    /// `None` when the fraction was skipped; see `note`.
    pub report: Option<RankingReport>,
    pub note: Option<String>,
}

/// Retrains from scratch on the earliest `percent`% of training timestamps
/// for every entry of `percents` and evaluates each run on the test split.
pub fn truncation_experiment(
    kg: &TemporalKG,
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    percents: &[u32],
) -> Result<Vec<TruncationRow>> {
    let mut rows = Vec::with_capacity(percents.len());
    for &percent in percents {
        if percent == 0 || percent > 100 {
            return Err(EstError::Config(format!("fraction {percent}% is not in 1..=100")));
        }
        let skipped = |n: usize, why: String| TruncationRow {
            percent,
            train_timestamps: n,
            report: None,
            note: Some(why),
        };
        let sub = match kg.truncate_train(percent) {
            Ok(sub) => sub,
            Err(e) => {
                rows.push(skipped(0, e.to_string()));
                continue;
            }
        };
        let n = sub.timestamps(Split::Train).len();
        if n < 3 {
            rows.push(skipped(n, format!("{percent}% keeps only {n} training timestamps (need 3)")));
            continue;
        }
        let mut model = EstModel::new(model_cfg.clone(), cfg.seed)?;
        let mut memory = DualStateMemory::new(kg.entity_count(), model_cfg.dim, cfg.memory)?;
        train(&sub, &mut model, &mut memory, cfg)?;
        let report = evaluate(&sub, &model, &mut memory, Split::Test, &cfg.eval_options())?;
        rows.push(TruncationRow {
            percent,
            train_timestamps: n,
            report: Some(report),
            note: None,
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisRow {
    pub rank: usize,
    pub entity: EntityId,
    pub name: Option<String>,
    pub displacement: f64,
    pub gate_mean: f64,
    pub gate_std: f64,
    /// Perceiver gates observed for the entity; zero when it never appeared
    /// in a history window, in which case the gate fields are meaningless.
    pub gate_count: u64,
}

impl AnalysisRow {
    pub fn label(&self) -> String {
        self.name.clone().unwrap_or_else(|| self.entity.to_string())
    }
}

/// Top-`top_k` entities by slow-state displacement since `baseline`.
pub fn analyze_states(
    memory: &DualStateMemory,
    baseline: Option<&SlowSnapshot>,
    names: Option<&HashMap<EntityId, String>>,
    top_k: usize,
) -> Result<Vec<AnalysisRow>> {
    let baseline = baseline.ok_or_else(|| EstError::Validation("analysis needs a baseline snapshot".into()))?;
    let rows = memory.displacement_report(baseline, top_k)?;
    Ok(rows
        .into_iter()
        .enumerate()
        .map(|(i, r)| AnalysisRow {
            rank: i + 1,
            entity: r.entity,
            name: names.and_then(|m| m.get(&r.entity).cloned()),
            displacement: r.displacement,
            gate_mean: r.gate_mean,
            gate_std: r.gate_std,
            gate_count: r.gate_count,
        })
        .collect())
}

pub fn write_analysis_csv<W: Write>(rows: &[AnalysisRow], mut out: W) -> std::io::Result<()> {
    writeln!(out, "rank,entity_id,entity,displacement,gate_mean,gate_std,gate_count")?;
    for r in rows {
        let (mean, std) = match r.gate_count {
            0 => (String::new(), String::new()),
            _ => (format!("{:.6}", r.gate_mean), format!("{:.6}", r.gate_std)),
        };
        writeln!(
            out,
            "{},{},{},{:.6},{mean},{std},{}",
            r.rank,
            r.entity,
            csv_field(&r.label()),
            r.displacement,
            r.gate_count
        )?;
    }
    Ok(())
}
