// Scratch harness for the relevance-head ablation: neural g(k,k',x) vs
// context-free pairwise relevance, across seeds and zeta values.

use cpbm::clicksim::{draw_examination_weights, run_ab_test};
use cpbm::corpus::{generate_corpus, make_rankers, CorpusConfig, Split};
use cpbm::estimator::{fit, ModelFamily, TrainConfig};
use cpbm::eval::rel_error;
use cpbm::harvest::harvest;
use cpbm::rng::derive_seed;
use cpbm::stats::{mean, std_dev};

fn cell(eta: f64, zeta: f64, n_servings: u64, decay: f64, rel_decay: Option<f64>, seed: u64, n_queries: usize, qns: f64) -> (f64, f64) {
    let corpus = generate_corpus(&CorpusConfig {
        n_queries,
        candidates_per_query: 30,
        context_dim: 10,
        n_features: 30,
        zeta,
        sigma: 0.35,
        relevance_rate: 0.3,
        query_noise_share: qns,
        filter_no_relevant: true,
        seed: derive_seed(seed, "corpus", 0),
    })
    .unwrap();
    let rankers = make_rankers(&corpus, 2, 0.5, &[1, 1], derive_seed(seed, "rankers", 0)).unwrap();
    let truth = draw_examination_weights(eta, 10, derive_seed(seed, "truth", 0));
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
    let dataset = harvest(&log, &rankers, &corpus).unwrap();
    let (train, val) = dataset.split_records(|r| r.query_id % 10 != 9);
    let cfg = TrainConfig {
        weight_decay: decay,
        relevance_weight_decay: rel_decay,
        seed: derive_seed(seed, "fit", 0),
        ..TrainConfig::default()
    };
    let test_contexts: Vec<Vec<f64>> = corpus
        .split_queries(Split::Test)
        .iter()
        .map(|q| q.context.clone())
        .collect();
    let neural = fit(ModelFamily::Cpbm, &train, &val, &cfg).unwrap();
    let cf = fit(ModelFamily::CpbmContextFreeRel, &train, &val, &cfg).unwrap();
    let (re_n, _) = rel_error(&neural.model, &test_contexts, &truth).unwrap();
    let (re_c, _) = rel_error(&cf.model, &test_contexts, &truth).unwrap();
    (re_n, re_c)
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let eta: f64 = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(1.0);
    let n_servings: u64 = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(20_000);
    let decay: f64 = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(1e-3);
    let n_seeds: u64 = args.get(4).map(|s| s.parse().unwrap()).unwrap_or(8);
    let n_queries: usize = args.get(5).map(|s| s.parse().unwrap()).unwrap_or(6000);
    let rel_decay: Option<f64> = args.get(6).map(|s| s.parse().unwrap());
    let qns: f64 = args.get(7).map(|s| s.parse().unwrap()).unwrap_or(0.6);

    for zeta in [0.0, 1.0] {
        let mut reductions = Vec::new();
        let mut neurals = Vec::new();
        let mut cfs = Vec::new();
        for seed in 0..n_seeds {
            let (re_n, re_c) = cell(eta, zeta, n_servings, decay, rel_decay, 9000 + seed, n_queries, qns);
            reductions.push(re_c - re_n);
            neurals.push(re_n);
            cfs.push(re_c);
        }
        println!(
            "zeta {zeta}: reduction mean {:+.4} std {:.4} | neural {:.4} cf {:.4} (eta={eta}, decay={decay}, n={n_servings})",
            mean(&reductions),
            std_dev(&reductions),
            mean(&neurals),
            mean(&cfs),
        );
    }
}
