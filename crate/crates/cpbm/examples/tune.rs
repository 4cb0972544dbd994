// Scratch harness for estimator tuning runs. Not part of the deliverable
// test suite; prints RelError comparisons for manual inspection.

use std::time::Instant;

use cpbm::clicksim::{draw_examination_weights, run_ab_test};
use cpbm::corpus::{generate_corpus, make_rankers, CorpusConfig, Split};
use cpbm::estimator::{fit, ModelFamily, TrainConfig};
use cpbm::eval::rel_error;
use cpbm::harvest::harvest;
use cpbm::rng::derive_seed;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let eta: f64 = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(0.5);
    let zeta: f64 = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(1.0);
    let n_servings: u64 = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(50_000);
    let perturbation: f64 = args.get(4).map(|s| s.parse().unwrap()).unwrap_or(0.5);
    let weight_decay: f64 = args.get(9).map(|s| s.parse().unwrap()).unwrap_or(3e-3);
    let lr: f64 = args.get(5).map(|s| s.parse().unwrap()).unwrap_or(2.0);
    let epochs: usize = args.get(6).map(|s| s.parse().unwrap()).unwrap_or(600);
    let seed: u64 = args.get(7).map(|s| s.parse().unwrap()).unwrap_or(42);
    let n_queries: usize = args.get(8).map(|s| s.parse().unwrap()).unwrap_or(2000);

    let t0 = Instant::now();
    let corpus = generate_corpus(&CorpusConfig {
        n_queries,
        candidates_per_query: 30,
        context_dim: 10,
        n_features: 30,
        zeta,
        sigma: 0.35,
        relevance_rate: 0.3,
        query_noise_share: 0.6,
        filter_no_relevant: true,
        seed: derive_seed(seed, "corpus", 0),
    })
    .unwrap();
    println!("corpus: {} queries ({:?})", corpus.queries.len(), t0.elapsed());

    let rankers = make_rankers(
        &corpus,
        2,
        perturbation,
        &[1, 1],
        derive_seed(seed, "rankers", 0),
    )
    .unwrap();
    let truth = draw_examination_weights(eta, 10, derive_seed(seed, "truth", 0));

    let t1 = Instant::now();
    let log = run_ab_test(
        &corpus,
        Split::Train,
        &rankers,
        &[0.5, 0.5],
        &truth,
        0.1,
        10,
        n_servings,
        derive_seed(seed, "log", 0),
    )
    .unwrap();
    println!(
        "log: {} records, {} clicks ({:?})",
        log.records.len(),
        log.records.iter().filter(|r| r.click == 1).count(),
        t1.elapsed()
    );

    let t2 = Instant::now();
    let dataset = harvest(&log, &rankers, &corpus).unwrap();
    println!(
        "harvest: {} records, {} entries, pairs {:?} ({:?})",
        dataset.records.len(),
        dataset.n_entries(),
        dataset.pair_counts(),
        t2.elapsed()
    );

    let (train, val) = dataset.split_records(|r| r.query_id % 10 != 9);
    let cfg = TrainConfig {
        learning_rate: lr,
        max_epochs: epochs,
        early_stopping_patience: 60,
        weight_decay,
        seed: derive_seed(seed, "fit", 0),
        ..TrainConfig::default()
    };

    let test_contexts: Vec<Vec<f64>> = corpus
        .split_queries(Split::Test)
        .iter()
        .map(|q| q.context.clone())
        .collect();

    for family in [
        ModelFamily::Pbm,
        ModelFamily::Cpbm,
        ModelFamily::CpbmContextFreeRel,
    ] {
        let t3 = Instant::now();
        let result = fit(family, &train, &val, &cfg).unwrap();
        let (re, per_rank) = rel_error(&result.model, &test_contexts, &truth).unwrap();
        let accepted = result.curve.iter().filter(|s| s.accepted).count();
        println!(
            "{family}: RelError {re:.4} (epochs {} accepted {accepted}, best val {:.1}, {:?})",
            result.curve.len(),
            result.best_val_objective,
            t3.elapsed()
        );
        println!(
            "  per-rank: {:?}",
            per_rank.iter().map(|v| (v * 1000.0).round() / 1000.0).collect::<Vec<_>>()
        );
        if family == ModelFamily::Pbm {
            let ratios = result.model.relative_propensities(&[]).unwrap();
            println!(
                "  pbm ratios: {:?}",
                ratios.iter().map(|v| (v * 1000.0).round() / 1000.0).collect::<Vec<_>>()
            );
        }
    }
}
