#![allow(dead_code)]

use std::collections::HashSet;

use est_core::data::{Quadruple, TemporalKG};
use est_core::eval::FilterMode;
use est_core::memory::{DualStateMemory, MemoryParams};
use est_core::model::params::Gradients;
use est_core::model::{BackboneKind, EstModel, ModelConfig, ScorerKind, StateSource};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Largest `|a - n| / max(|a|, |n|, 1e-6)` over every scalar parameter.
pub struct GradCheck {
    pub worst: f64,
    pub at: String,
    pub scalars: usize,
}

fn grad_instance() -> (TemporalKG, DualStateMemory) {
    let q = Quadruple::new;
    let train = vec![q(0, 0, 1, 0), q(0, 1, 2, 1), q(0, 2, 3, 2), q(0, 0, 4, 3), q(0, 1, 5, 5)];
    let kg = TemporalKG::from_splits(&train, &[q(1, 0, 2, 6)], &[q(1, 0, 2, 7)], 6, 3, true).unwrap();
    let mut mem = DualStateMemory::new(6, 8, MemoryParams::default()).unwrap();
    for e in 0..6 {
        let c: Vec<f64> = (0..8).map(|i| ((e * 8 + i) as f64 * 0.37).sin()).collect();
        mem.update(e, &c).unwrap();
    }
    (kg, mem)
}

/// Central differences against the tape gradient on a d=8, L'=4 query with
/// three negatives. `wo_context` checks the cold-start query path instead.
pub fn gradient_check(backbone: BackboneKind, scorer: ScorerKind, wo_context: bool) -> GradCheck {
    let (kg, mem) = grad_instance();
    let query = Quadruple::new(0, 2, 3, 6);
    let negatives = [1, 4, 5];
    let mut mc = ModelConfig::new(6, 6);
    mc.dim = 8;
    mc.time_dim = 4;
    mc.history_len = 4;
    mc.backbone = backbone;
    mc.scorer = scorer;
    mc.mamba_state = 3;
    let model = EstModel::new(mc, 3).unwrap();
    let states = StateSource::Memory(&mem);
    let loss = |m: &EstModel| m.query_loss(&kg, states, &query, &negatives, 4, wo_context, None).unwrap().loss;

    let mut grads = Gradients::zeros_like(model.params());
    model
        .query_loss(&kg, states, &query, &negatives, 4, wo_context, Some((&mut grads, 1.0)))
        .unwrap();
    let h = 1e-5;
    let mut out = GradCheck { worst: 0.0, at: String::new(), scalars: 0 };
    for id in model.params().ids() {
        for i in 0..model.params().get(id).data.len() {
            let mut probe = model.clone();
            probe.params_mut().get_mut(id).data[i] += h;
            let up = loss(&probe);
            probe.params_mut().get_mut(id).data[i] -= 2.0 * h;
            let down = loss(&probe);
            let num = (up - down) / (2.0 * h);
            let ana = grads.get(id)[i];
            let rel = (ana - num).abs() / ana.abs().max(num.abs()).max(1e-6);
            out.scalars += 1;
            if rel > out.worst {
                out.worst = rel;
                out.at = format!("{}[{i}] analytic {ana:e} numeric {num:e}", model.params().name(id));
            }
        }
    }
    out
}

/// Perturbs each input row of a length-`len` sequence and returns the
/// largest change seen in any strictly earlier output, plus the smallest
/// change seen at the perturbed position itself.
pub fn causality_probe(backbone: BackboneKind, len: usize, seed: u64) -> (f64, f64) {
    let mut mc = ModelConfig::new(10, 4);
    mc.dim = 8;
    mc.time_dim = 4;
    mc.history_len = len;
    mc.backbone = backbone;
    mc.mamba_state = 4;
    let model = EstModel::new(mc, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xca05a1);
    let u: Vec<Vec<f64>> = (0..len).map(|_| (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
    let base = model.run_backbone(&u).unwrap();
    let mut leak = 0.0f64;
    let mut min_self = f64::INFINITY;
    for j in 0..len {
        let mut v = u.clone();
        for x in v[j].iter_mut() {
            *x += rng.gen_range(0.5..1.5);
        }
        let out = model.run_backbone(&v).unwrap();
        for k in 0..j {
            for (a, b) in out[k].iter().zip(&base[k]) {
                leak = leak.max((a - b).abs());
            }
        }
        let own: f64 = out[j].iter().zip(&base[j]).map(|(a, b)| (a - b).abs()).sum();
        min_self = min_self.min(own);
    }
    (leak, min_self)
}

/// Random toy graph with `t_count` timestamps; the last two are the valid
/// and test snapshots.
pub fn random_toy_kg(rng: &mut impl Rng, inverse: bool) -> TemporalKG {
    let entities = rng.gen_range(3..=20);
    let relations = rng.gen_range(1..=3);
    let t_count = rng.gen_range(3..=5u32);
    let snap = |t: u32, rng: &mut dyn rand::RngCore| -> Vec<Quadruple> {
        let n = rng.gen_range(1..=8);
        let mut facts: Vec<Quadruple> = (0..n)
            .map(|_| {
                Quadruple::new(
                    rng.gen_range(0..entities),
                    rng.gen_range(0..relations),
                    rng.gen_range(0..entities),
                    t,
                )
            })
            .collect();
        facts.sort();
        facts.dedup();
        facts
    };
    let mut train = Vec::new();
    for t in 0..t_count - 2 {
        train.extend(snap(t, rng));
    }
    let valid = snap(t_count - 2, rng);
    let test = snap(t_count - 1, rng);
    TemporalKG::from_splits(&train, &valid, &test, entities, relations, inverse).unwrap()
}

/// Filtered rank recomputed from scratch over every fact in `kg`.
pub fn brute_force_rank(kg: &TemporalKG, q: &Quadruple, scores: &[f64], mode: FilterMode) -> usize {
    let filtered: HashSet<usize> = kg
        .facts()
        .iter()
        .filter(|f| f.subject == q.subject && f.relation == q.relation && f.object != q.object)
        .filter(|f| match mode {
            FilterMode::Rolling => f.time < q.time,
            FilterMode::TimeAwareStandard => f.time == q.time,
        })
        .map(|f| f.object)
        .collect();
    let gold = scores[q.object];
    1 + (0..scores.len())
        .filter(|e| *e != q.object && !filtered.contains(e) && scores[*e] > gold)
        .count()
}
