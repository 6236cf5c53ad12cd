//! Temporal knowledge graph storage: parsing, inverse augmentation,
//! chronological splitting and per-subject history lookup.

pub mod synthetic;

use std::collections::{BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::ops::Range;
use std::path::Path;

use crate::error::{EstError, Result};

pub type EntityId = usize;
pub type RelationId = usize;
pub type Time = u32;

/// One timestamped fact `(subject, relation, object, time)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Quadruple {
    pub subject: EntityId,
    pub relation: RelationId,
    pub object: EntityId,
    pub time: Time,
}

impl Quadruple {
    pub const fn new(subject: EntityId, relation: RelationId, object: EntityId, time: Time) -> Self {
        Quadruple {
            subject,
            relation,
            object,
            time,
        }
    }
}

/// One past interaction of a subject as seen from its own history.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HistoryEntry {
    pub object: EntityId,
    pub relation: RelationId,
    pub time: Time,
}

/// The `L` most recent interactions strictly before `query_time`, oldest first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HistoryWindow {
    pub entries: Vec<HistoryEntry>,
    pub query_time: Time,
}

impl HistoryWindow {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Time of the newest entry, if any.
    pub fn latest_time(&self) -> Option<Time> {
        self.entries.last().map(|e| e.time)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        })
    }
}

/// Parses tab-separated `subject relation object raw_time [...]` lines.
///
/// Times are normalized to snapshot indices by integer division with
/// `time_step`. Blank lines are skipped and extra columns ignored.
pub fn parse_quadruples<R: BufRead>(reader: R, time_step: u32) -> Result<Vec<Quadruple>> {
    if time_step == 0 {
        return Err(EstError::Validation("time_step must be positive".into()));
    }
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| EstError::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        let trimmed = line.trim_end_matches(['\r', '\n']);
        if trimmed.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = trimmed.split('\t').collect();
        if fields.len() < 4 {
            return Err(EstError::Parse {
                line: line_no,
                message: format!("expected at least 4 tab-separated fields, found {}", fields.len()),
            });
        }
        let mut vals = [0i64; 4];
        for (slot, field) in vals.iter_mut().zip(&fields[..4]) {
            *slot = field.trim().parse::<i64>().map_err(|_| EstError::Parse {
                line: line_no,
                message: format!("non-integer field {field:?}"),
            })?;
        }
        if let Some(neg) = vals.iter().find(|v| **v < 0) {
            return Err(EstError::Validation(format!(
                "line {line_no}: negative value {neg}"
            )));
        }
        let time = vals[3] / i64::from(time_step);
        let time = Time::try_from(time).map_err(|_| {
            EstError::Validation(format!("line {line_no}: time {time} out of range"))
        })?;
        out.push(Quadruple::new(
            vals[0] as usize,
            vals[1] as usize,
            vals[2] as usize,
            time,
        ));
    }
    Ok(out)
}

pub fn parse_quadruples_file(path: &Path, time_step: u32) -> Result<Vec<Quadruple>> {
    let file = File::open(path).map_err(|e| EstError::io(path, e))?;
    parse_quadruples(BufReader::new(file), time_step)
}

/// Returns every fact followed by its inverse `(o, r + base, s, t)`.
pub fn add_inverse_relations(facts: &[Quadruple], relation_count_base: usize) -> Result<Vec<Quadruple>> {
    let mut out = Vec::with_capacity(facts.len() * 2);
    for q in facts {
        if q.relation >= relation_count_base {
            return Err(EstError::Validation(format!(
                "relation {} >= relation_count_base {relation_count_base}",
                q.relation
            )));
        }
        out.push(*q);
        out.push(inverse_of(q, relation_count_base));
    }
    Ok(out)
}

/// Maps a fact to its inverse-direction counterpart and back.
pub fn inverse_of(q: &Quadruple, relation_count_base: usize) -> Quadruple {
    let relation = if q.relation >= relation_count_base {
        q.relation - relation_count_base
    } else {
        q.relation + relation_count_base
    };
    Quadruple::new(q.object, relation, q.subject, q.time)
}

/// Last timestamp of the train and valid periods.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitBoundaries {
    pub train_end: Time,
    pub valid_end: Time,
}

/// Picks split boundaries on timestamp edges.
///
/// Each boundary is the smallest timestamp whose cumulative fact share
/// reaches the target ratio, clamped so that every split keeps at least one
/// timestamp. `facts` must be sorted by time.
pub fn split_boundaries(facts: &[Quadruple], ratios: (f64, f64, f64)) -> Result<SplitBoundaries> {
    let (r_train, r_valid, r_test) = ratios;
    if [r_train, r_valid, r_test].iter().any(|r| r.is_nan() || *r <= 0.0) || ((r_train + r_valid + r_test) - 1.0).abs() > 1e-9 {
        return Err(EstError::Split(format!(
            "ratios must be positive and sum to 1, got ({r_train}, {r_valid}, {r_test})"
        )));
    }
    if facts.windows(2).any(|w| w[0].time > w[1].time) {
        return Err(EstError::Split("facts are not sorted by time".into()));
    }
    // (timestamp, cumulative count through it)
    let mut cumulative: Vec<(Time, usize)> = Vec::new();
    for (i, q) in facts.iter().enumerate() {
        match cumulative.last_mut() {
            Some(last) if last.0 == q.time => last.1 = i + 1,
            _ => cumulative.push((q.time, i + 1)),
        }
    }
    if cumulative.len() < 3 {
        return Err(EstError::Split(format!(
            "need at least 3 distinct timestamps, found {}",
            cumulative.len()
        )));
    }
    let n = facts.len() as f64;
    let first_reaching = |target: f64, from: usize| -> usize {
        cumulative
            .iter()
            .enumerate()
            .skip(from)
            .find(|(_, (_, c))| *c as f64 >= target * n - 1e-9)
            .map(|(i, _)| i)
            .unwrap_or(cumulative.len() - 1)
    };
    let last = cumulative.len() - 1;
    let train_idx = first_reaching(r_train, 0).min(last - 2);
    let valid_idx = first_reaching(r_train + r_valid, train_idx + 1).min(last - 1);
    Ok(SplitBoundaries {
        train_end: cumulative[train_idx].0,
        valid_end: cumulative[valid_idx].0,
    })
}

/// Indexed fact store with chronological splits and per-subject histories.
#[derive(Debug, Clone)]
pub struct TemporalKG {
    entity_count: usize,
    relation_count_base: usize,
    inverse: bool,
    facts: Vec<Quadruple>,
    train: Range<usize>,
    valid: Range<usize>,
    test: Range<usize>,
    history: Vec<Vec<HistoryEntry>>,
    same_time: HashMap<(EntityId, RelationId, Time), Vec<EntityId>>,
}

impl TemporalKG {
    /// Splits time-sorted base facts 8:1:1-style and builds the indexes.
    pub fn from_chronological(
        facts: &[Quadruple],
        entity_count: usize,
        relation_count_base: usize,
        ratios: (f64, f64, f64),
        inverse: bool,
    ) -> Result<Self> {
        let mut sorted = facts.to_vec();
        sorted.sort_by_key(|q| q.time);
        let b = split_boundaries(&sorted, ratios)?;
        let (mut train, mut valid, mut test) = (Vec::new(), Vec::new(), Vec::new());
        for q in sorted {
            if q.time <= b.train_end {
                train.push(q);
            } else if q.time <= b.valid_end {
                valid.push(q);
            } else {
                test.push(q);
            }
        }
        Self::from_splits(&train, &valid, &test, entity_count, relation_count_base, inverse)
    }

    /// Builds a graph from pre-split base facts (benchmark-style train/valid/test).
    pub fn from_splits(
        train: &[Quadruple],
        valid: &[Quadruple],
        test: &[Quadruple],
        entity_count: usize,
        relation_count_base: usize,
        inverse: bool,
    ) -> Result<Self> {
        for (name, part) in [("train", train), ("valid", valid), ("test", test)] {
            if part.is_empty() {
                return Err(EstError::Split(format!("{name} split is empty")));
            }
            for q in part {
                if q.subject >= entity_count || q.object >= entity_count {
                    return Err(EstError::Validation(format!(
                        "entity id out of range in {q:?} (entity_count {entity_count})"
                    )));
                }
                if q.relation >= relation_count_base {
                    return Err(EstError::Validation(format!(
                        "relation id out of range in {q:?} (relation_count {relation_count_base})"
                    )));
                }
            }
        }
        let span = |p: &[Quadruple]| {
            let lo = p.iter().map(|q| q.time).min().unwrap_or(0);
            let hi = p.iter().map(|q| q.time).max().unwrap_or(0);
            (lo, hi)
        };
        let (_, train_hi) = span(train);
        let (valid_lo, valid_hi) = span(valid);
        let (test_lo, _) = span(test);
        if !(train_hi < valid_lo && valid_hi < test_lo) {
            return Err(EstError::Split(format!(
                "splits overlap in time: train ends {train_hi}, valid spans {valid_lo}..={valid_hi}, test starts {test_lo}"
            )));
        }

        let augment = |p: &[Quadruple]| -> Result<Vec<Quadruple>> {
            let mut v = if inverse {
                add_inverse_relations(p, relation_count_base)?
            } else {
                p.to_vec()
            };
            v.sort_by_key(|q| q.time);
            Ok(v)
        };
        let mut facts = augment(train)?;
        let train_len = facts.len();
        facts.extend(augment(valid)?);
        let valid_len = facts.len() - train_len;
        facts.extend(augment(test)?);

        let mut history = vec![Vec::new(); entity_count];
        let mut same_time: HashMap<(EntityId, RelationId, Time), Vec<EntityId>> = HashMap::new();
        for q in &facts {
            history[q.subject].push(HistoryEntry {
                object: q.object,
                relation: q.relation,
                time: q.time,
            });
            same_time
                .entry((q.subject, q.relation, q.time))
                .or_default()
                .push(q.object);
        }
        // facts are already time-sorted, stable sort keeps input order on ties
        for h in &mut history {
            h.sort_by_key(|e| e.time);
        }
        let total = facts.len();
        Ok(TemporalKG {
            entity_count,
            relation_count_base,
            inverse,
            facts,
            train: 0..train_len,
            valid: train_len..train_len + valid_len,
            test: train_len + valid_len..total,
            history,
            same_time,
        })
    }

    pub fn entity_count(&self) -> usize {
        self.entity_count
    }

    pub fn relation_count_base(&self) -> usize {
        self.relation_count_base
    }

    /// Number of relation ids in use, including inverse relations.
    pub fn relation_count(&self) -> usize {
        if self.inverse {
            2 * self.relation_count_base
        } else {
            self.relation_count_base
        }
    }

    pub fn has_inverse(&self) -> bool {
        self.inverse
    }

    /// All facts, time-sorted, train then valid then test.
    pub fn facts(&self) -> &[Quadruple] {
        &self.facts
    }

    pub fn split(&self, split: Split) -> &[Quadruple] {
        &self.facts[self.split_range(split)]
    }

    pub fn split_range(&self, split: Split) -> Range<usize> {
        match split {
            Split::Train => self.train.clone(),
            Split::Valid => self.valid.clone(),
            Split::Test => self.test.clone(),
        }
    }

    /// Distinct timestamps of a split, ascending.
    pub fn timestamps(&self, split: Split) -> Vec<Time> {
        let set: BTreeSet<Time> = self.split(split).iter().map(|q| q.time).collect();
        set.into_iter().collect()
    }

    /// Count of original (non-inverse) facts in a split.
    pub fn base_fact_count(&self, split: Split) -> usize {
        let n = self.split(split).len();
        if self.inverse {
            n / 2
        } else {
            n
        }
    }

    /// Distinct snapshot count over all splits.
    pub fn snapshot_count(&self) -> usize {
        let set: BTreeSet<Time> = self.facts.iter().map(|q| q.time).collect();
        set.len()
    }

    /// Full time-sorted interaction list of a subject.
    pub fn subject_history(&self, subject: EntityId) -> Result<&[HistoryEntry]> {
        self.history
            .get(subject)
            .map(Vec::as_slice)
            .ok_or_else(|| EstError::Lookup(format!("unknown entity {subject}")))
    }

    /// The `len` most recent interactions of `subject` strictly before `query_time`.
    pub fn get_history(&self, subject: EntityId, query_time: Time, len: usize) -> Result<HistoryWindow> {
        if len == 0 {
            return Err(EstError::Contract("history length must be at least 1".into()));
        }
        let all = self.subject_history(subject)?;
        let end = all.partition_point(|e| e.time < query_time);
        let start = end.saturating_sub(len);
        Ok(HistoryWindow {
            entries: all[start..end].to_vec(),
            query_time,
        })
    }

    /// Distinct objects `subject` interacted with strictly before `time`, in first-seen order.
    pub fn past_objects(&self, subject: EntityId, time: Time) -> Result<Vec<EntityId>> {
        let all = self.subject_history(subject)?;
        let end = all.partition_point(|e| e.time < time);
        let mut seen = vec![false; self.entity_count];
        let mut out = Vec::new();
        for e in &all[..end] {
            if !seen[e.object] {
                seen[e.object] = true;
                out.push(e.object);
            }
        }
        Ok(out)
    }

    /// Objects `o` with `(subject, relation, o, time)` in the graph.
    pub fn objects_at(&self, subject: EntityId, relation: RelationId, time: Time) -> &[EntityId] {
        self.same_time
            .get(&(subject, relation, time))
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    /// Copy of this graph whose training split keeps only the earliest
    /// `percent`% of training timestamps.
    pub fn truncate_train(&self, percent: u32) -> Result<TemporalKG> {
        if percent == 0 || percent > 100 {
            return Err(EstError::Config(format!("fraction {percent}% is not in 1..=100")));
        }
        let times = self.timestamps(Split::Train);
        let keep = ((times.len() as u64 * u64::from(percent)) / 100) as usize;
        if keep == 0 {
            return Err(EstError::Split(format!("{percent}% keeps no training timestamps")));
        }
        let cutoff = times[keep - 1];
        let mut out = self.clone();
        let kept = self.split(Split::Train).iter().filter(|q| q.time <= cutoff).count();
        out.train = 0..kept;
        Ok(out)
    }
}

/// Summary counts in the layout of common benchmark statistics tables.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetSummary {
    pub entities: usize,
    pub relations: usize,
    pub train: usize,
    pub valid: usize,
    pub test: usize,
    pub snapshots: usize,
}

impl DatasetSummary {
    pub fn of(kg: &TemporalKG) -> Self {
        DatasetSummary {
            entities: kg.entity_count(),
            relations: kg.relation_count_base(),
            train: kg.base_fact_count(Split::Train),
            valid: kg.base_fact_count(Split::Valid),
            test: kg.base_fact_count(Split::Test),
            snapshots: kg.snapshot_count(),
        }
    }
}

impl std::fmt::Display for DatasetSummary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "entities\t{}", self.entities)?;
        writeln!(f, "relations\t{}", self.relations)?;
        writeln!(f, "train\t{}", self.train)?;
        writeln!(f, "valid\t{}", self.valid)?;
        writeln!(f, "test\t{}", self.test)?;
        write!(f, "snapshots\t{}", self.snapshots)
    }
}

/// Loads a benchmark-style directory holding `train.txt`, `valid.txt`,
/// `test.txt` and optionally `stat.txt` (`entities<TAB>relations`).
pub fn load_dataset_dir(dir: &Path, time_step: u32, inverse: bool) -> Result<TemporalKG> {
    let train = parse_quadruples_file(&dir.join("train.txt"), time_step)?;
    let valid = parse_quadruples_file(&dir.join("valid.txt"), time_step)?;
    let test = parse_quadruples_file(&dir.join("test.txt"), time_step)?;
    let (entities, relations) = match read_stat(&dir.join("stat.txt"))? {
        Some(counts) => counts,
        None => infer_counts(train.iter().chain(&valid).chain(&test)),
    };
    TemporalKG::from_splits(&train, &valid, &test, entities, relations, inverse)
}

/// Loads one fact file and splits it chronologically.
pub fn load_single_file(
    path: &Path,
    time_step: u32,
    inverse: bool,
    ratios: (f64, f64, f64),
) -> Result<TemporalKG> {
    let facts = parse_quadruples_file(path, time_step)?;
    let (entities, relations) = infer_counts(facts.iter());
    TemporalKG::from_chronological(&facts, entities, relations, ratios, inverse)
}

fn infer_counts<'a>(facts: impl Iterator<Item = &'a Quadruple>) -> (usize, usize) {
    let mut entities = 0;
    let mut relations = 0;
    for q in facts {
        entities = entities.max(q.subject + 1).max(q.object + 1);
        relations = relations.max(q.relation + 1);
    }
    (entities, relations)
}

fn read_stat(path: &Path) -> Result<Option<(usize, usize)>> {
    if !path.exists() {
        return Ok(None);
    }
    let text = std::fs::read_to_string(path).map_err(|e| EstError::io(path, e))?;
    let nums: Vec<usize> = text
        .split_whitespace()
        .take(2)
        .map(|s| s.parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| EstError::Parse {
            line: 1,
            message: format!("{}: {e}", path.display()),
        })?;
    match nums.as_slice() {
        [e, r] => Ok(Some((*e, *r))),
        _ => Err(EstError::Parse {
            line: 1,
            message: format!("{}: expected two counts", path.display()),
        }),
    }
}

/// Reads an `id<TAB>name` mapping file.
pub fn load_id_names(path: &Path) -> Result<HashMap<usize, String>> {
    let file = File::open(path).map_err(|e| EstError::io(path, e))?;
    let mut out = HashMap::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| EstError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let (id, name) = line.split_once('\t').ok_or_else(|| EstError::Parse {
            line: idx + 1,
            message: "expected id<TAB>name".into(),
        })?;
        let id = id.trim().parse::<usize>().map_err(|_| EstError::Parse {
            line: idx + 1,
            message: format!("non-integer id {id:?}"),
        })?;
        out.insert(id, name.to_string());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn q(s: usize, r: usize, o: usize, t: Time) -> Quadruple {
        Quadruple::new(s, r, o, t)
    }

    #[test]
    fn parses_and_normalizes_time() {
        let out = parse_quadruples("0\t3\t5\t48\n".as_bytes(), 24).unwrap();
        assert_eq!(out, vec![q(0, 3, 5, 2)]);
        let out = parse_quadruples("7\t0\t7\t0\n".as_bytes(), 1).unwrap();
        assert_eq!(out, vec![q(7, 0, 7, 0)]);
        let out = parse_quadruples("1\t2\t3\t30\t99\n\n".as_bytes(), 24).unwrap();
        assert_eq!(out, vec![q(1, 2, 3, 1)]);
    }

    #[test]
    fn parse_errors_name_the_line() {
        match parse_quadruples("1\t2\tX\t24".as_bytes(), 24) {
            Err(EstError::Parse { line: 1, .. }) => {}
            other => panic!("expected parse error, got {other:?}"),
        }
        match parse_quadruples("0\t0\t0\t0\n1\t2\t3".as_bytes(), 1) {
            Err(EstError::Parse { line: 2, .. }) => {}
            other => panic!("expected parse error, got {other:?}"),
        }
        assert!(matches!(
            parse_quadruples("-1\t0\t0\t0".as_bytes(), 1),
            Err(EstError::Validation(_))
        ));
    }

    #[test]
    fn inverse_augmentation() {
        let out = add_inverse_relations(&[q(0, 1, 2, 5)], 3).unwrap();
        assert_eq!(out, vec![q(0, 1, 2, 5), q(2, 4, 0, 5)]);
        assert!(add_inverse_relations(&[], 3).unwrap().is_empty());
        assert!(add_inverse_relations(&[q(0, 3, 1, 0)], 3).is_err());
    }

    #[test]
    fn split_on_exact_fractions() {
        let facts: Vec<_> = (0..10).map(|t| q(0, 0, 1, t)).collect();
        let b = split_boundaries(&facts, (0.8, 0.1, 0.1)).unwrap();
        assert_eq!(b, SplitBoundaries { train_end: 7, valid_end: 8 });
        let kg = TemporalKG::from_chronological(&facts, 2, 1, (0.8, 0.1, 0.1), false).unwrap();
        assert_eq!(kg.timestamps(Split::Train), (0..8).collect::<Vec<_>>());
        assert_eq!(kg.timestamps(Split::Valid), vec![8]);
        assert_eq!(kg.timestamps(Split::Test), vec![9]);
    }

    #[test]
    fn split_needs_three_timestamps() {
        let facts: Vec<_> = (0..10).map(|_| q(0, 0, 1, 4)).collect();
        assert!(matches!(
            split_boundaries(&facts, (0.8, 0.1, 0.1)),
            Err(EstError::Split(_))
        ));
    }

    #[test]
    fn skewed_split_matches_brute_force() {
        // 90 facts at t=0, then one fact at each of t=1..=10
        let mut facts: Vec<_> = (0..90).map(|_| q(0, 0, 1, 0)).collect();
        facts.extend((1..=10).map(|t| q(0, 0, 1, t)));
        let b = split_boundaries(&facts, (0.8, 0.1, 0.1)).unwrap();
        // brute force: first t with cum >= 80 is t=0; first t>0 with cum >= 90 is t=1
        let n = facts.len();
        let cum = |t: Time| facts.iter().filter(|f| f.time <= t).count();
        let train_end = (0..=10).find(|t| cum(*t) * 10 >= 8 * n).unwrap();
        let valid_end = (train_end + 1..=10).find(|t| cum(*t) * 10 >= 9 * n).unwrap();
        assert_eq!(b, SplitBoundaries { train_end, valid_end });
        let kg = TemporalKG::from_chronological(&facts, 2, 1, (0.8, 0.1, 0.1), true).unwrap();
        let tr = kg.timestamps(Split::Train);
        let va = kg.timestamps(Split::Valid);
        let te = kg.timestamps(Split::Test);
        assert!(tr.last() < va.first() && va.last() < te.first());
    }

    fn line_kg(times: &[Time]) -> TemporalKG {
        let mut train: Vec<_> = times.iter().map(|t| q(0, 0, 1, *t)).collect();
        train.push(q(2, 0, 1, 0));
        let valid = vec![q(2, 0, 1, 100)];
        let test = vec![q(2, 0, 1, 101)];
        TemporalKG::from_splits(&train, &valid, &test, 3, 1, false).unwrap()
    }

    #[test]
    fn history_window_is_strict_and_recent() {
        let kg = line_kg(&[1, 2, 3, 4]);
        let w = kg.get_history(0, 4, 2).unwrap();
        assert_eq!(w.entries.iter().map(|e| e.time).collect::<Vec<_>>(), vec![2, 3]);
        let kg = line_kg(&[1, 5]);
        let w = kg.get_history(0, 5, 4).unwrap();
        assert_eq!(w.entries.iter().map(|e| e.time).collect::<Vec<_>>(), vec![1]);
        let w = kg.get_history(1, 50, 4).unwrap();
        assert!(w.is_empty());
        assert!(matches!(kg.get_history(9, 1, 4), Err(EstError::Lookup(_))));
    }

    #[test]
    fn truncation_keeps_leading_timestamps() {
        let facts: Vec<_> = (0..100).map(|t| q(0, 0, 1, t)).collect();
        let kg = TemporalKG::from_chronological(&facts, 2, 1, (0.8, 0.1, 0.1), false).unwrap();
        let half = kg.truncate_train(50).unwrap();
        assert_eq!(half.timestamps(Split::Train), (0..40).collect::<Vec<_>>());
        assert_eq!(half.split(Split::Test), kg.split(Split::Test));
        let full = kg.truncate_train(100).unwrap();
        assert_eq!(full.split(Split::Train), kg.split(Split::Train));
    }
}
