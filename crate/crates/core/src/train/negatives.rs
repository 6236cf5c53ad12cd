//! Negative candidates for the softmax objective.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::data::{EntityId, Quadruple, TemporalKG};
use crate::error::{EstError, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NegativeSet {
    /// Past objects of the subject first, then uniform fillers.
    pub candidates: Vec<EntityId>,
    pub counterfactual_count: usize,
    pub filler_count: usize,
}

/// Draws up to `k` distinct entities from `pool`, skipping `excluded`, and
/// marks each pick in `excluded`.
fn draw_fillers<R: Rng>(entity_count: usize, excluded: &mut [bool], k: usize, rng: &mut R) -> Vec<EntityId> {
    let available = excluded.iter().filter(|x| !**x).count();
    let want = k.min(available);
    let mut out = Vec::with_capacity(want);
    if want * 4 < available {
        // sparse: rejection sampling stays cheap
        while out.len() < want {
            let e = rng.gen_range(0..entity_count);
            if !excluded[e] {
                excluded[e] = true;
                out.push(e);
            }
        }
    } else {
        let mut pool: Vec<EntityId> = (0..entity_count).filter(|e| !excluded[*e]).collect();
        let (picked, _) = pool.partial_shuffle(rng, want);
        for &e in picked.iter() {
            excluded[e] = true;
            out.push(e);
        }
    }
    out
}

/// Historically plausible negatives: distinct past objects of the subject
/// that are not correct at the query time, topped up with uniform draws.
pub fn sample_negatives<R: Rng>(kg: &TemporalKG, query: &Quadruple, k: usize, rng: &mut R) -> Result<NegativeSet> {
    let n = kg.entity_count();
    if n <= 1 {
        return Err(EstError::Sampling(format!("need at least 2 entities, have {n}")));
    }
    if k == 0 {
        return Err(EstError::Sampling("negative count must be at least 1".into()));
    }
    let mut excluded = vec![false; n];
    excluded[query.object] = true;
    for &o in kg.objects_at(query.subject, query.relation, query.time) {
        excluded[o] = true;
    }
    let mut past: Vec<EntityId> = kg
        .past_objects(query.subject, query.time)?
        .into_iter()
        .filter(|o| !excluded[*o])
        .collect();
    let take = k.min(past.len());
    let (picked, _) = past.partial_shuffle(rng, take);
    let mut candidates = picked.to_vec();
    for &e in &candidates {
        excluded[e] = true;
    }
    let counterfactual_count = candidates.len();
    let fillers = draw_fillers(n, &mut excluded, k - counterfactual_count, rng);
    let filler_count = fillers.len();
    candidates.extend(fillers);
    Ok(NegativeSet {
        candidates,
        counterfactual_count,
        filler_count,
    })
}

/// Up to `k` distinct entities drawn uniformly, never the gold object.
pub fn sample_uniform_negatives<R: Rng>(entity_count: usize, gold: EntityId, k: usize, rng: &mut R) -> Result<NegativeSet> {
    if entity_count <= 1 {
        return Err(EstError::Sampling(format!("need at least 2 entities, have {entity_count}")));
    }
    if gold >= entity_count {
        return Err(EstError::Sampling(format!("gold entity {gold} out of range")));
    }
    let mut excluded = vec![false; entity_count];
    excluded[gold] = true;
    let candidates = draw_fillers(entity_count, &mut excluded, k, rng);
    Ok(NegativeSet {
        filler_count: candidates.len(),
        candidates,
        counterfactual_count: 0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn toy() -> TemporalKG {
        let q = Quadruple::new;
        let train = [q(0, 0, 2, 0), q(0, 1, 5, 1), q(1, 0, 3, 1), q(0, 0, 5, 2), q(0, 0, 7, 2)];
        TemporalKG::from_splits(&train, &[q(1, 0, 4, 3)], &[q(2, 0, 1, 4)], 10, 2, false).unwrap()
    }

    #[test]
    fn empty_history_uses_fillers_only() {
        let kg = toy();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let n = sample_negatives(&kg, &Quadruple::new(3, 0, 1, 2), 4, &mut rng).unwrap();
        assert_eq!(n.counterfactual_count, 0);
        assert_eq!(n.filler_count, 4);
        assert!(!n.candidates.contains(&1));
    }

    #[test]
    fn past_objects_first_gold_and_same_time_excluded() {
        let kg = toy();
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = sample_negatives(&kg, &Quadruple::new(0, 0, 5, 2), 4, &mut rng).unwrap();
            // past objects before t=2 are {2,5}; 5 is gold, 7 is correct at t=2
            assert_eq!(n.counterfactual_count, 1);
            assert_eq!(n.candidates[0], 2);
            assert_eq!(n.filler_count, 3);
            assert!(!n.candidates.contains(&5) && !n.candidates.contains(&7));
            let mut sorted = n.candidates.clone();
            sorted.sort_unstable();
            sorted.dedup();
            assert_eq!(sorted.len(), 4);
        }
    }

    #[test]
    fn same_seed_same_set() {
        let kg = toy();
        let q = Quadruple::new(0, 0, 5, 2);
        let a = sample_negatives(&kg, &q, 6, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let b = sample_negatives(&kg, &q, 6, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn uniform_never_returns_gold() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for i in 0..10_000 {
            let gold = i % 10;
            let n = sample_uniform_negatives(10, gold, 1 + i % 9, &mut rng).unwrap();
            assert!(!n.candidates.contains(&gold));
        }
    }

    #[test]
    fn single_entity_is_an_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(sample_uniform_negatives(1, 0, 3, &mut rng), Err(EstError::Sampling(_))));
    }
}
