mod common;

use std::collections::HashSet;

use est_core::data::synthetic::{generate_synthetic, GeneratorSpec};
use est_core::data::{Split, TemporalKG};
use est_core::eval::{filtered_rank, FilterMode, RankedQuery, RankingReport, RollingFilter};
use est_core::memory::DualStateMemory;
use est_core::model::{EstModel, ModelConfig};
use est_core::train::{ccl_loss, sample_negatives, train, Ablation, TrainConfig};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn tiny_setup(ablation: Ablation, seed: u64) -> (TemporalKG, EstModel, DualStateMemory, TrainConfig) {
    let kg = generate_synthetic(&GeneratorSpec { timestamp_count: 24, ..GeneratorSpec::default() }, seed)
        .unwrap()
        .kg;
    let mut mc = ModelConfig::new(kg.entity_count(), kg.relation_count());
    mc.dim = 8;
    mc.time_dim = 4;
    mc.history_len = 4;
    let cfg = TrainConfig {
        epochs: 1,
        batch_size: 7,
        neg_count: 5,
        warmup_epochs: 0,
        history_len: 4,
        ablation,
        seed,
        validate: false,
        ..TrainConfig::default()
    };
    let model = EstModel::new(mc, seed).unwrap();
    let memory = DualStateMemory::new(kg.entity_count(), 8, cfg.memory).unwrap();
    (kg, model, memory, cfg)
}

#[test]
fn epoch_step_and_write_counts() {
    for ablation in [Ablation::NONE, Ablation { wo_state: true, ..Ablation::NONE }] {
        let (kg, mut model, mut memory, cfg) = tiny_setup(ablation, 1);
        let log = train(&kg, &mut model, &mut memory, &cfg).unwrap();
        let n = kg.split(Split::Train).len();
        assert_eq!(log.steps_per_epoch, n.div_ceil(cfg.batch_size));
        assert_eq!(log.epochs[0].step, log.steps_per_epoch);
        let expected = if ablation.wo_state { 0 } else { n as u64 };
        assert_eq!(memory.total_updates(), expected);
    }
}

#[test]
fn training_is_bit_reproducible() {
    let run = |seed| {
        let (kg, mut model, mut memory, mut cfg) = tiny_setup(Ablation::NONE, seed);
        cfg.epochs = 2;
        train(&kg, &mut model, &mut memory, &cfg).unwrap();
        (model.to_bytes(), memory.to_bytes())
    };
    assert_eq!(run(4), run(4));
    assert_ne!(run(4).0, run(5).0);
}

#[test]
fn loss_decreases_on_periodic_data() {
    let (kg, mut model, mut memory, mut cfg) = tiny_setup(Ablation::NONE, 2);
    cfg.epochs = 5;
    cfg.warmup_epochs = 1;
    let log = train(&kg, &mut model, &mut memory, &cfg).unwrap();
    assert!(log.epochs[4].loss < log.epochs[0].loss, "{:?}", log.epochs);
}

#[test]
fn training_log_csv_layout() {
    let (kg, mut model, mut memory, cfg) = tiny_setup(Ablation::NONE, 3);
    let log = train(&kg, &mut model, &mut memory, &cfg).unwrap();
    let mut out = Vec::new();
    log.write_csv(&mut out, &["run".into()]).unwrap();
    let text = String::from_utf8(out).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "# run");
    assert_eq!(lines[1], "epoch,step,lr,loss,valid_mrr,wall_clock_secs");
    assert_eq!(lines.len(), 3);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn ccl_loss_is_positive(logits in prop::collection::vec(-30.0..30.0f64, 2..40)) {
        let loss = ccl_loss(&logits);
        prop_assert!(loss > 0.0);
        // Direct -log softmax; the logit range keeps exp from overflowing.
        let direct = logits.iter().map(|l| l.exp()).sum::<f64>().ln() - logits[0];
        prop_assert!((loss - direct).abs() <= 1e-9 * direct.abs().max(1.0));
    }

    #[test]
    fn negatives_exclude_true_objects(seed in 0u64..200, k in 1usize..80) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let kg = common::random_toy_kg(&mut rng, seed % 2 == 0);
        for q in kg.split(Split::Train) {
            let set = sample_negatives(&kg, q, k, &mut rng).unwrap();
            let forbidden: HashSet<usize> = kg.objects_at(q.subject, q.relation, q.time).iter().copied().chain([q.object]).collect();
            let distinct: HashSet<usize> = set.candidates.iter().copied().collect();
            prop_assert_eq!(distinct.len(), set.candidates.len());
            prop_assert!(set.candidates.iter().all(|c| !forbidden.contains(c)));
            prop_assert_eq!(set.candidates.len(), k.min(kg.entity_count() - forbidden.len()));
            prop_assert_eq!(set.counterfactual_count + set.filler_count, set.candidates.len());
            let past: HashSet<usize> = kg.past_objects(q.subject, q.time).unwrap().into_iter().collect();
            prop_assert!(set.candidates[..set.counterfactual_count].iter().all(|c| past.contains(c)));
        }
    }

    #[test]
    fn rank_properties(
        scores in prop::collection::vec(-8i32..8, 2..20),
        gold_pick in any::<prop::sample::Index>(),
        filter_mask in prop::collection::vec(any::<bool>(), 20),
        shift in -100i32..100,
    ) {
        // Quarter-unit scores keep every shifted sum exact.
        let scores: Vec<f64> = scores.iter().map(|s| *s as f64 / 4.0).collect();
        let gold = gold_pick.index(scores.len());
        let filter: HashSet<usize> = (0..scores.len()).filter(|e| filter_mask[*e] && *e != gold).collect();
        let rank = filtered_rank(&scores, gold, &filter).unwrap();
        let raw = filtered_rank(&scores, gold, &HashSet::new()).unwrap();
        prop_assert!(rank >= 1 && rank <= scores.len());
        prop_assert!(rank <= raw);
        let shifted: Vec<f64> = scores.iter().map(|s| s + shift as f64).collect();
        prop_assert_eq!(filtered_rank(&shifted, gold, &filter).unwrap(), rank);
    }

    #[test]
    fn rolling_filter_only_grows(seed in 0u64..300) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let kg = common::random_toy_kg(&mut rng, false);
        let mut filter = RollingFilter::new(FilterMode::Rolling);
        let probes: Vec<_> = kg.facts().to_vec();
        let mut previous: Vec<HashSet<usize>> = vec![HashSet::new(); probes.len()];
        for t in 0..=kg.facts().last().unwrap().time {
            let snapshot: Vec<_> = kg.facts().iter().filter(|q| q.time == t).copied().collect();
            filter.observe(&snapshot);
            for (i, p) in probes.iter().enumerate() {
                let mut set = filter.filter_set(&kg, p);
                set.insert(p.object);
                prop_assert!(previous[i].is_subset(&set));
                previous[i] = set;
            }
        }
    }

    #[test]
    fn metrics_follow_ranks(ranks in prop::collection::vec(1usize..30, 1..50)) {
        let q = est_core::data::Quadruple::new(0, 0, 0, 0);
        let per: Vec<RankedQuery> = ranks.iter().map(|r| RankedQuery { query: q, rank: *r }).collect();
        let report = RankingReport::from_ranks(per).unwrap();
        let n = ranks.len() as f64;
        let mrr = ranks.iter().map(|r| 1.0 / *r as f64).sum::<f64>() / n;
        prop_assert!((report.mrr - mrr).abs() < 1e-12);
        prop_assert_eq!(report.hits10, ranks.iter().filter(|r| **r <= 10).count() as f64 / n);
        prop_assert!(report.hits1 <= report.hits3 && report.hits3 <= report.hits10);
        prop_assert!(report.mrr >= report.hits1 && report.mrr <= 1.0);
    }
}
