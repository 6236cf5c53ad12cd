//! Seeded synthetic temporal graphs for desk-scale checks of the state
//! mechanism.
//!
//! * `Periodic`: every subject cycles through a private list of
//!   `(relation, object)` pairs, so the next object is visible in the
//!   recent window.
//! * `LongMemory`: a key entity is tagged with a random target; askers
//!   linked to the key must recall that target well after the tag has left
//!   every window they can see. Only state carried by the key can answer.
//! * `Noise`: uniform random facts.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Quadruple, TemporalKG, Time};
use crate::error::{EstError, Result};

pub const TAG_RELATION: usize = 0;
pub const LINK_RELATION: usize = 1;
pub const RECALL_RELATION: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PatternMode {
    Periodic,
    LongMemory,
    Noise,
}

impl std::str::FromStr for PatternMode {
    type Err = EstError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "periodic" => Ok(PatternMode::Periodic),
            "long_memory" => Ok(PatternMode::LongMemory),
            "noise" => Ok(PatternMode::Noise),
            other => Err(EstError::Config(format!(
                "unknown synthetic mode {other:?} (expected periodic, long_memory, noise)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub mode: PatternMode,
    pub entity_count: usize,
    pub relation_count: usize,
    pub timestamp_count: usize,
    /// Longest per-subject cycle (periodic).
    pub period: usize,
    /// Window length the long-memory probes must defeat.
    pub history_len: usize,
    /// Facts per snapshot (noise).
    pub facts_per_timestamp: usize,
    /// Askers sharing one key (long memory).
    pub askers_per_key: usize,
    /// Repeats of the tag event right after it (long memory).
    pub echo_count: usize,
    pub inverse: bool,
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        GeneratorSpec {
            mode: PatternMode::Periodic,
            entity_count: 48,
            relation_count: 4,
            timestamp_count: 100,
            period: 2,
            history_len: 8,
            facts_per_timestamp: 10,
            askers_per_key: 3,
            echo_count: 3,
            inverse: true,
        }
    }
}

/// A recall query paired with the latest event carrying its answer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MemoryProbe {
    pub query: Quadruple,
    pub tag: Quadruple,
}

#[derive(Debug, Clone)]
pub struct SyntheticData {
    /// Base facts before inverse augmentation, time-sorted.
    pub facts: Vec<Quadruple>,
    pub kg: TemporalKG,
    pub probes: Vec<MemoryProbe>,
}

pub fn generate_synthetic(spec: &GeneratorSpec, seed: u64) -> Result<SyntheticData> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    if spec.timestamp_count < 3 {
        return Err(EstError::Generation("timestamp_count must be at least 3".into()));
    }
    if spec.entity_count < 2 || spec.relation_count == 0 {
        return Err(EstError::Generation("need at least 2 entities and 1 relation".into()));
    }
    let (mut facts, probes) = match spec.mode {
        PatternMode::Periodic => (periodic(spec, &mut rng)?, Vec::new()),
        PatternMode::LongMemory => long_memory(spec, &mut rng)?,
        PatternMode::Noise => (noise(spec, &mut rng), Vec::new()),
    };
    facts.sort_by_key(|q| q.time);
    let kg = TemporalKG::from_chronological(
        &facts,
        spec.entity_count,
        spec.relation_count,
        (0.8, 0.1, 0.1),
        spec.inverse,
    )?;
    Ok(SyntheticData { facts, kg, probes })
}

fn periodic(spec: &GeneratorSpec, rng: &mut ChaCha8Rng) -> Result<Vec<Quadruple>> {
    let period = spec.period;
    if period == 0 {
        return Err(EstError::Generation("period must be positive".into()));
    }
    let subjects = spec.entity_count / (1 + period);
    if subjects == 0 {
        return Err(EstError::Generation(format!(
            "{} entities cannot hold one subject with {period} private objects",
            spec.entity_count
        )));
    }
    let mut ids: Vec<usize> = (0..spec.entity_count).collect();
    ids.shuffle(rng);
    let mut relations: Vec<usize> = (0..spec.relation_count).collect();
    let mut facts = Vec::with_capacity(subjects * spec.timestamp_count);
    for s in 0..subjects {
        let subject = ids[s];
        let objects = &ids[subjects + s * period..subjects + (s + 1) * period];
        let own_period = rng.gen_range(period.div_ceil(2)..=period);
        let phase = rng.gen_range(0..own_period);
        relations.shuffle(rng);
        for t in 0..spec.timestamp_count {
            let slot = (t + phase) % own_period;
            facts.push(Quadruple::new(
                subject,
                relations[slot % spec.relation_count],
                objects[slot],
                t as Time,
            ));
        }
    }
    Ok(facts)
}

fn noise(spec: &GeneratorSpec, rng: &mut ChaCha8Rng) -> Vec<Quadruple> {
    let mut facts = Vec::with_capacity(spec.timestamp_count * spec.facts_per_timestamp);
    for t in 0..spec.timestamp_count {
        for _ in 0..spec.facts_per_timestamp {
            facts.push(Quadruple::new(
                rng.gen_range(0..spec.entity_count),
                rng.gen_range(0..spec.relation_count),
                rng.gen_range(0..spec.entity_count),
                t as Time,
            ));
        }
    }
    facts
}

/// Episode layout for one key and its askers, relative to the tag time `t0`:
///
/// ```text
/// t0            (key, tag, target)
/// t0+1..=t0+E   (key, tag, target)            echoes
/// t0+E+L+1+i    (asker_i, link, key)
/// t0+E+L+2+i    (asker_i, recall, target)
/// ```
///
/// The newest window entry of every recall is at least `L + 1` steps
/// younger than the last echo, and no asker ever interacts with the target
/// inside the episode before its recall.
fn long_memory(spec: &GeneratorSpec, rng: &mut ChaCha8Rng) -> Result<(Vec<Quadruple>, Vec<MemoryProbe>)> {
    if spec.relation_count < 3 {
        return Err(EstError::Generation(
            "long_memory needs at least 3 relations (tag, link, recall)".into(),
        ));
    }
    let askers = spec.askers_per_key.max(1);
    let echoes = spec.echo_count;
    let window = spec.history_len.max(1);
    let pool = (spec.entity_count / 3).max(2);
    let groups = spec.entity_count.saturating_sub(pool) / (1 + askers);
    if groups == 0 {
        return Err(EstError::Generation(format!(
            "{} entities leave no room for a key with {askers} askers",
            spec.entity_count
        )));
    }
    let episode = echoes + window + 2 + askers;
    if spec.timestamp_count < episode {
        return Err(EstError::Generation(format!(
            "timestamp_count {} is shorter than one episode ({episode} steps for L={window})",
            spec.timestamp_count
        )));
    }
    let mut ids: Vec<usize> = (0..spec.entity_count).collect();
    ids.shuffle(rng);
    let targets = &ids[..pool];
    let mut facts = Vec::new();
    let mut probes = Vec::new();
    let horizon = spec.timestamp_count;
    for g in 0..groups {
        let base = pool + g * (1 + askers);
        let key = ids[base];
        let group_askers = &ids[base + 1..base + 1 + askers];
        let mut t0 = (g * episode) / groups;
        while t0 + episode <= horizon {
            let target = targets[rng.gen_range(0..targets.len())];
            let mut last_tag = Quadruple::new(key, TAG_RELATION, target, t0 as Time);
            facts.push(last_tag);
            for e in 1..=echoes {
                last_tag = Quadruple::new(key, TAG_RELATION, target, (t0 + e) as Time);
                facts.push(last_tag);
            }
            for (i, &asker) in group_askers.iter().enumerate() {
                let link_time = t0 + echoes + window + 1 + i;
                facts.push(Quadruple::new(asker, LINK_RELATION, key, link_time as Time));
                let recall = Quadruple::new(asker, RECALL_RELATION, target, (link_time + 1) as Time);
                facts.push(recall);
                probes.push(MemoryProbe {
                    query: recall,
                    tag: last_tag,
                });
            }
            t0 += episode;
        }
    }
    Ok((facts, probes))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Split;

    #[test]
    fn periodic_is_deterministic() {
        let spec = GeneratorSpec {
            entity_count: 4,
            period: 2,
            timestamp_count: 20,
            ..GeneratorSpec::default()
        };
        let a = generate_synthetic(&spec, 7).unwrap();
        let b = generate_synthetic(&spec, 7).unwrap();
        assert_eq!(a.facts, b.facts);
        assert_eq!(a.kg.facts(), b.kg.facts());
        let c = generate_synthetic(&spec, 8).unwrap();
        assert_ne!(a.facts, c.facts);
    }

    #[test]
    fn noise_respects_bounds() {
        let spec = GeneratorSpec {
            mode: PatternMode::Noise,
            entity_count: 12,
            relation_count: 3,
            timestamp_count: 10,
            facts_per_timestamp: 10,
            ..GeneratorSpec::default()
        };
        let data = generate_synthetic(&spec, 1).unwrap();
        assert_eq!(data.facts.len(), 100);
        for q in &data.facts {
            assert!(q.subject < 12 && q.object < 12 && q.relation < 3 && q.time < 10);
        }
    }

    #[test]
    fn long_memory_tags_fall_outside_windows() {
        let spec = GeneratorSpec {
            mode: PatternMode::LongMemory,
            entity_count: 50,
            timestamp_count: 200,
            history_len: 8,
            inverse: true,
            ..GeneratorSpec::default()
        };
        let data = generate_synthetic(&spec, 3).unwrap();
        let kg = &data.kg;
        let test_start = kg.timestamps(Split::Test)[0];
        let test_probes: Vec<_> = data.probes.iter().filter(|p| p.query.time >= test_start).collect();
        assert!(!test_probes.is_empty());
        for p in &data.probes {
            let w = kg.get_history(p.query.subject, p.query.time, 8).unwrap();
            let newest = w.latest_time().expect("askers always have a link in their window");
            assert!(newest >= p.tag.time + 9, "tag at {} vs newest {}", p.tag.time, newest);
        }
    }

    #[test]
    fn long_memory_rejects_short_horizon() {
        let spec = GeneratorSpec {
            mode: PatternMode::LongMemory,
            timestamp_count: 10,
            history_len: 8,
            ..GeneratorSpec::default()
        };
        assert!(matches!(generate_synthetic(&spec, 0), Err(EstError::Generation(_))));
    }
}
