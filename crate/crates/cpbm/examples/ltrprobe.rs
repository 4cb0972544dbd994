// Scratch harness for the IPS-weighted LTR closure: AvgRank under true,
// CPBM, and PBM propensity weights.

use cpbm::clicksim::{draw_examination_weights, run_ab_test};
use cpbm::corpus::{generate_corpus, make_rankers, CorpusConfig, Split};
use cpbm::estimator::{fit, ModelFamily, TrainConfig};
use cpbm::harvest::harvest;
use cpbm::ltr::{avg_rank, train_ips_ranker, IpsTrainConfig, PropensitySource};
use cpbm::rng::derive_seed;
use cpbm::stats::{mean, std_dev};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let eta: f64 = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(10.0);
    let n_servings: u64 = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(50_000);
    let n_seeds: u64 = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(3);
    let lr: f64 = args.get(4).map(|s| s.parse().unwrap()).unwrap_or(0.5);
    let epochs: usize = args.get(5).map(|s| s.parse().unwrap()).unwrap_or(120);
    let eps_minus: f64 = args.get(6).map(|s| s.parse().unwrap()).unwrap_or(0.1);
    let tau: f64 = args.get(7).map(|s| s.parse().unwrap()).unwrap_or(0.1);
    let perturbation: f64 = args.get(8).map(|s| s.parse().unwrap()).unwrap_or(0.5);

    let mut by_source: Vec<Vec<f64>> = vec![Vec::new(); 3];
    for seed in 0..n_seeds {
        let corpus = generate_corpus(&CorpusConfig {
            n_queries: 6000,
            candidates_per_query: 30,
            context_dim: 10,
            n_features: 30,
            zeta: 1.0,
            sigma: 0.35,
            relevance_rate: 0.3,
            query_noise_share: 0.6,
            filter_no_relevant: true,
            seed: derive_seed(seed, "corpus", 0),
        })
        .unwrap();
        let rankers =
            make_rankers(&corpus, 2, perturbation, &[1, 1], derive_seed(seed, "rankers", 0))
                .unwrap();
        let truth = draw_examination_weights(eta, 10, derive_seed(seed, "truth", 0));
        let log = run_ab_test(
            &corpus,
            Split::Train,
            &rankers,
            &[0.5, 0.5],
            &truth,
            eps_minus,
            10,
            n_servings,
            derive_seed(seed, "log", 0),
        )
        .unwrap();
        let dataset = harvest(&log, &rankers, &corpus).unwrap();
        let (train, val) = dataset.split_records(|r| r.query_id % 10 != 9);
        let cfg = TrainConfig {
            seed: derive_seed(seed, "fit", 0),
            ..TrainConfig::default()
        };
        let pbm = fit(ModelFamily::Pbm, &train, &val, &cfg).unwrap().model;
        let cpbm = fit(ModelFamily::Cpbm, &train, &val, &cfg).unwrap().model;

        let ltr_cfg = IpsTrainConfig {
            learning_rate: lr,
            epochs,
            clip_threshold: tau,
            seed: derive_seed(seed, "ltr", 0),
            ..IpsTrainConfig::default()
        };
        let sources = [
            PropensitySource::True(&truth),
            PropensitySource::Estimated(&cpbm),
            PropensitySource::Estimated(&pbm),
        ];
        let mut line = format!("seed {seed}:");
        for (i, source) in sources.iter().enumerate() {
            let ranker = train_ips_ranker(&log, source, &corpus, &ltr_cfg).unwrap();
            let ar = avg_rank(&ranker, &corpus, Split::Test).unwrap();
            by_source[i].push(ar);
            line.push_str(&format!(" {:.4}", ar));
        }
        println!("{line}  (true / cpbm / pbm)");
    }
    for (name, values) in ["true", "cpbm", "pbm"].iter().zip(&by_source) {
        println!(
            "{name}: mean {:.4} std {:.4}",
            mean(values),
            std_dev(values)
        );
    }
}
