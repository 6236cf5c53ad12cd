//! Persistent per-entity state: a fast exponential-moving-average track and
//! a slow track that consolidates only when the two diverge.

use std::io::Write;

use crate::codec::{Reader, Writer};
use crate::data::EntityId;
use crate::error::{EstError, Result};

const MAGIC: &[u8; 8] = b"ESTSTATE";
const VERSION: u32 = 1;

/// Largest double below 1; keeps saturated gates inside the open interval.
const GATE_MAX: f64 = 1.0 - f64::EPSILON / 2.0;

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Welford accumulator; `std` is the population standard deviation.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RunningStats {
    pub count: u64,
    pub mean: f64,
    m2: f64,
}

impl RunningStats {
    pub fn push(&mut self, x: f64) {
        self.count += 1;
        let delta = x - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (x - self.mean);
    }

    pub fn variance(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            self.m2 / self.count as f64
        }
    }

    pub fn std(&self) -> f64 {
        self.variance().sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MemoryParams {
    pub lambda: f64,
    pub kappa: f64,
    pub gamma: f64,
}

impl Default for MemoryParams {
    fn default() -> Self {
        MemoryParams {
            lambda: 0.2,
            kappa: 5.0,
            gamma: 0.5,
        }
    }
}

impl MemoryParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda < 1.0) {
            return Err(EstError::Config(format!("lambda {} not in (0,1)", self.lambda)));
        }
        if !(self.kappa > 0.0 && self.kappa.is_finite()) {
            return Err(EstError::Config(format!("kappa {} must be positive", self.kappa)));
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(EstError::Config(format!("gamma {} must be non-negative", self.gamma)));
        }
        Ok(())
    }

    /// Consolidation gate for a given surprise `delta`.
    pub fn gate(&self, delta: f64) -> f64 {
        sigmoid(self.kappa * (delta - self.gamma)).clamp(f64::MIN_POSITIVE, GATE_MAX)
    }
}

/// Frozen copy of the slow buffer, used as a displacement baseline.
#[derive(Debug, Clone, PartialEq)]
pub struct SlowSnapshot {
    pub entity_count: usize,
    pub dim: usize,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DisplacementRow {
    pub entity: EntityId,
    pub displacement: f64,
    pub gate_mean: f64,
    pub gate_std: f64,
    pub gate_count: u64,
}

/// Global fast/slow entity-state buffers. Not trainable.
#[derive(Debug, Clone, PartialEq)]
pub struct DualStateMemory {
    entity_count: usize,
    dim: usize,
    params: MemoryParams,
    fast: Vec<f64>,
    slow: Vec<f64>,
    update_count: Vec<u64>,
    slow_gate: Vec<RunningStats>,
    perceiver_gate: Vec<RunningStats>,
}

impl DualStateMemory {
    pub fn new(entity_count: usize, dim: usize, params: MemoryParams) -> Result<Self> {
        params.validate()?;
        if dim == 0 {
            return Err(EstError::Config("state dimension must be positive".into()));
        }
        Ok(DualStateMemory {
            entity_count,
            dim,
            params,
            fast: vec![0.0; entity_count * dim],
            slow: vec![0.0; entity_count * dim],
            update_count: vec![0; entity_count],
            slow_gate: vec![RunningStats::default(); entity_count],
            perceiver_gate: vec![RunningStats::default(); entity_count],
        })
    }

    pub fn entity_count(&self) -> usize {
        self.entity_count
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn params(&self) -> MemoryParams {
        self.params
    }

    fn rows(&self, entity: EntityId) -> Result<std::ops::Range<usize>> {
        if entity >= self.entity_count {
            return Err(EstError::Lookup(format!(
                "entity {entity} out of range ({} entities)",
                self.entity_count
            )));
        }
        Ok(entity * self.dim..(entity + 1) * self.dim)
    }

    pub fn read_slow(&self, entity: EntityId) -> Result<&[f64]> {
        Ok(&self.slow[self.rows(entity)?])
    }

    pub fn read_fast(&self, entity: EntityId) -> Result<&[f64]> {
        Ok(&self.fast[self.rows(entity)?])
    }

    /// Writes `context` into the fast track and consolidates into the slow
    /// track. Returns the applied slow gate.
    pub fn update(&mut self, entity: EntityId, context: &[f64]) -> Result<f64> {
        let rows = self.rows(entity)?;
        if context.len() != self.dim {
            return Err(EstError::Validation(format!(
                "context has dimension {}, memory has {}",
                context.len(),
                self.dim
            )));
        }
        if context.iter().any(|x| !x.is_finite()) {
            return Err(EstError::Numeric(format!("non-finite context for entity {entity}")));
        }
        let lambda = self.params.lambda;
        let fast = &mut self.fast[rows.clone()];
        let slow = &mut self.slow[rows];
        let mut sq = 0.0;
        for ((f, s), c) in fast.iter_mut().zip(slow.iter()).zip(context) {
            *f = (1.0 - lambda) * *f + lambda * c;
            let d = *f - s;
            sq += d * d;
        }
        let gate = self.params.gate(sq.sqrt());
        for (s, f) in slow.iter_mut().zip(fast.iter()) {
            *s += gate * (*f - *s);
        }
        self.update_count[entity] += 1;
        self.slow_gate[entity].push(gate);
        Ok(gate)
    }

    /// Records the dimension-averaged perceiver gate observed when `entity`
    /// was fused into a history window.
    pub fn record_perceiver_gate(&mut self, entity: EntityId, mean_gate: f64) -> Result<()> {
        self.rows(entity)?;
        self.perceiver_gate[entity].push(mean_gate);
        Ok(())
    }

    pub fn update_count(&self, entity: EntityId) -> u64 {
        self.update_count.get(entity).copied().unwrap_or(0)
    }

    pub fn total_updates(&self) -> u64 {
        self.update_count.iter().sum()
    }

    pub fn slow_gate_stats(&self, entity: EntityId) -> Option<RunningStats> {
        self.slow_gate.get(entity).copied()
    }

    pub fn perceiver_gate_stats(&self, entity: EntityId) -> Option<RunningStats> {
        self.perceiver_gate.get(entity).copied()
    }

    pub fn snapshot_slow(&self) -> SlowSnapshot {
        SlowSnapshot {
            entity_count: self.entity_count,
            dim: self.dim,
            data: self.slow.clone(),
        }
    }

    /// Entities ranked by how far their slow state moved since `baseline`.
    pub fn displacement_report(&self, baseline: &SlowSnapshot, top_k: usize) -> Result<Vec<DisplacementRow>> {
        if baseline.dim != self.dim || baseline.entity_count != self.entity_count {
            return Err(EstError::Validation(format!(
                "baseline is {}x{}, memory is {}x{}",
                baseline.entity_count, baseline.dim, self.entity_count, self.dim
            )));
        }
        if top_k == 0 {
            return Err(EstError::Validation("top_k must be at least 1".into()));
        }
        let mut rows: Vec<DisplacementRow> = (0..self.entity_count)
            .map(|e| {
                let r = e * self.dim..(e + 1) * self.dim;
                let displacement = self.slow[r.clone()]
                    .iter()
                    .zip(&baseline.data[r])
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
                let stats = self.perceiver_gate[e];
                DisplacementRow {
                    entity: e,
                    displacement,
                    gate_mean: stats.mean,
                    gate_std: stats.std(),
                    gate_count: stats.count,
                }
            })
            .collect();
        rows.sort_by(|a, b| {
            b.displacement
                .total_cmp(&a.displacement)
                .then(a.entity.cmp(&b.entity))
        });
        rows.truncate(top_k);
        Ok(rows)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.bytes(MAGIC);
        w.u32(VERSION);
        w.u64(self.entity_count as u64);
        w.u64(self.dim as u64);
        w.f64s(&self.fast);
        w.f64s(&self.slow);
        w.f64(self.params.lambda);
        w.f64(self.params.kappa);
        w.f64(self.params.gamma);
        for e in 0..self.entity_count {
            w.u64(self.update_count[e]);
            for s in [&self.slow_gate[e], &self.perceiver_gate[e]] {
                w.u64(s.count);
                w.f64(s.mean);
                w.f64(s.m2);
            }
        }
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        if r.take(MAGIC.len())? != MAGIC {
            return Err(EstError::Deserialize("not a state checkpoint (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(EstError::Deserialize(format!("unsupported state version {version}")));
        }
        let entity_count = r.usize()?;
        let dim = r.usize()?;
        let cells = entity_count
            .checked_mul(dim)
            .ok_or_else(|| EstError::Deserialize("buffer size overflow".into()))?;
        let fast = r.f64s(cells)?;
        let slow = r.f64s(cells)?;
        let params = MemoryParams {
            lambda: r.f64()?,
            kappa: r.f64()?,
            gamma: r.f64()?,
        };
        params
            .validate()
            .map_err(|e| EstError::Deserialize(e.to_string()))?;
        let mut update_count = Vec::with_capacity(entity_count);
        let mut slow_gate = Vec::with_capacity(entity_count);
        let mut perceiver_gate = Vec::with_capacity(entity_count);
        for _ in 0..entity_count {
            update_count.push(r.u64()?);
            for target in [&mut slow_gate, &mut perceiver_gate] {
                target.push(RunningStats {
                    count: r.u64()?,
                    mean: r.f64()?,
                    m2: r.f64()?,
                });
            }
        }
        r.expect_end()?;
        Ok(DualStateMemory {
            entity_count,
            dim,
            params,
            fast,
            slow,
            update_count,
            slow_gate,
            perceiver_gate,
        })
    }

    /// One CSV row per entity: `entity,s0,s1,...` of the slow state.
    pub fn write_slow_csv<W: Write>(&self, mut out: W, names: Option<&std::collections::HashMap<usize, String>>) -> std::io::Result<()> {
        write!(out, "entity")?;
        for i in 0..self.dim {
            write!(out, ",s{i}")?;
        }
        writeln!(out)?;
        for e in 0..self.entity_count {
            match names.and_then(|n| n.get(&e)) {
                Some(name) => write!(out, "{}", csv_field(name))?,
                None => write!(out, "{e}")?,
            }
            for x in &self.slow[e * self.dim..(e + 1) * self.dim] {
                write!(out, ",{x}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

pub(crate) fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mem(dim: usize) -> DualStateMemory {
        DualStateMemory::new(6, dim, MemoryParams::default()).unwrap()
    }

    #[test]
    fn fresh_memory_reads_zero() {
        let m = mem(4);
        assert_eq!(m.read_slow(3).unwrap(), &[0.0; 4]);
        assert!(matches!(m.read_slow(6), Err(EstError::Lookup(_))));
    }

    #[test]
    fn first_update_matches_closed_form() {
        let d = 4;
        let mut m = mem(d);
        let gate = m.update(3, &vec![1.0; d]).unwrap();
        let fast = m.read_fast(3).unwrap().to_vec();
        assert!(fast.iter().all(|x| (*x - 0.2).abs() < 1e-15));
        let delta = 0.2 * (d as f64).sqrt();
        let expected_gate = 1.0 / (1.0 + (-5.0 * (delta - 0.5)).exp());
        assert!((gate - expected_gate).abs() < 1e-15);
        for x in m.read_slow(3).unwrap() {
            assert!((x - expected_gate * 0.2).abs() < 1e-15);
        }
        assert_eq!(m.read_slow(3).unwrap(), m.read_slow(3).unwrap());
        assert_eq!(m.update_count(3), 1);
    }

    #[test]
    fn gate_values() {
        let p = MemoryParams::default();
        assert_eq!(p.gate(0.5), 0.5);
        assert!((p.gate(1.5) - 0.9933071490757153).abs() < 1e-12);
        assert!(p.gate(1e6) < 1.0);
        assert!(p.gate(-1e6) > 0.0);
    }

    #[test]
    fn non_finite_context_leaves_buffers() {
        let mut m = mem(2);
        m.update(0, &[1.0, 2.0]).unwrap();
        let before = m.clone();
        assert!(matches!(m.update(0, &[f64::NAN, 0.0]), Err(EstError::Numeric(_))));
        assert_eq!(m, before);
    }

    #[test]
    fn displacement_ranking() {
        let mut m = mem(3);
        let base = m.snapshot_slow();
        let rows = m.displacement_report(&base, 3).unwrap();
        assert_eq!(rows.iter().map(|r| r.entity).collect::<Vec<_>>(), vec![0, 1, 2]);
        assert!(rows.iter().all(|r| r.displacement == 0.0));
        m.update(4, &[3.0, 0.0, 0.0]).unwrap();
        let rows = m.displacement_report(&base, 2).unwrap();
        assert_eq!(rows[0].entity, 4);
        assert!(rows[0].displacement > 0.0);
        let wrong = SlowSnapshot {
            entity_count: 6,
            dim: 2,
            data: vec![0.0; 12],
        };
        assert!(m.displacement_report(&wrong, 1).is_err());
    }

    #[test]
    fn gate_stats_population_std() {
        let mut m = mem(2);
        m.record_perceiver_gate(1, 0.8).unwrap();
        m.record_perceiver_gate(1, 0.9).unwrap();
        let s = m.perceiver_gate_stats(1).unwrap();
        assert!((s.mean - 0.85).abs() < 1e-12);
        assert!((s.std() - 0.05).abs() < 1e-12);
    }

    #[test]
    fn checkpoint_round_trip_and_truncation() {
        let fresh = mem(3);
        let back = DualStateMemory::from_bytes(&fresh.to_bytes()).unwrap();
        assert_eq!(back, fresh);
        assert_eq!(back.total_updates(), 0);

        let mut m = mem(3);
        m.update(2, &[0.3, -1.0, 7.5]).unwrap();
        m.update(2, &[1.0 / 3.0, 2.0, -0.1]).unwrap();
        m.record_perceiver_gate(5, 0.25).unwrap();
        let bytes = m.to_bytes();
        let back = DualStateMemory::from_bytes(&bytes).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.to_bytes(), bytes);
        assert!(matches!(
            DualStateMemory::from_bytes(&bytes[..bytes.len() - 5]),
            Err(EstError::Deserialize(_))
        ));
        assert!(DualStateMemory::from_bytes(b"garbage").is_err());
    }
}
