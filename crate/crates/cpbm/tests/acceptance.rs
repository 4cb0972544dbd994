//! Acceptance suite: one test per criterion, each printing a PASS line with
//! the measured quantities. Run with `cargo test -p cpbm --test acceptance
//! -- --nocapture` to see the measurements.

use std::sync::OnceLock;

use cpbm::clicksim::{draw_examination_weights, run_ab_test, run_swap_experiment, ExaminationParams};
use cpbm::corpus::{generate_corpus, make_rankers, Corpus, CorpusConfig, Document, Query, Ranker, Split};
use cpbm::estimator::{
    allpairs_objective, cross_entropy_form, fit, objective_gradient, ModelFamily,
    TrainConfig,
};
use cpbm::eval::{rel_error, swap_gold_standard, test_objective};
use cpbm::harvest::{
    build_interventional_index, compute_assignment_weights, group_counts, harvest, HarvestDataset,
};
use cpbm::ltr::{avg_rank, train_ips_ranker, IpsTrainConfig, PropensitySource};
use cpbm::rng::derive_seed;
use cpbm::stats::{mean, pooled_std, spearman_rho, std_dev};
use cpbm::testutil::{random_dataset, random_model};

const K_MAX: usize = 10;
const CONTEXT_DIM: usize = 10;

fn corpus_config(zeta: f64, seed: u64) -> CorpusConfig {
    CorpusConfig {
        n_queries: 6000,
        candidates_per_query: 30,
        context_dim: CONTEXT_DIM,
        n_features: 30,
        zeta,
        sigma: 0.35,
        relevance_rate: 0.3,
        query_noise_share: 0.6,
        filter_no_relevant: true,
        seed,
    }
}

fn train_config(seed: u64) -> TrainConfig {
    TrainConfig {
        seed,
        ..TrainConfig::default()
    }
}

/// One simulated experiment: corpus, two historic rankers, examination
/// truth, a training click log, and the harvested splits.
struct Experiment {
    truth: ExaminationParams,
    train: HarvestDataset,
    val: HarvestDataset,
    heldout: HarvestDataset,
    test_contexts: Vec<Vec<f64>>,
}

fn run_experiment(eta: f64, zeta: f64, n_servings: u64, seed: u64) -> Experiment {
    let corpus = generate_corpus(&corpus_config(zeta, derive_seed(seed, "corpus", 0))).unwrap();
    let rankers = make_rankers(&corpus, 2, 0.5, &[1, 1], derive_seed(seed, "rankers", 0)).unwrap();
    let truth = draw_examination_weights(eta, CONTEXT_DIM, derive_seed(seed, "examination", 0));
    let log = run_ab_test(
        &corpus,
        Split::Train,
        &rankers,
        &[0.5, 0.5],
        &truth,
        0.1,
        K_MAX,
        n_servings,
        derive_seed(seed, "log", 0),
    )
    .unwrap();
    let dataset = harvest(&log, &rankers, &corpus).unwrap();
    let (train, val) = dataset.split_records(|r| r.query_id % 10 != 9);

    let heldout_log = run_ab_test(
        &corpus,
        Split::Test,
        &rankers,
        &[0.5, 0.5],
        &truth,
        0.1,
        K_MAX,
        n_servings / 5,
        derive_seed(seed, "heldout-log", 0),
    )
    .unwrap();
    let heldout = harvest(&heldout_log, &rankers, &corpus).unwrap();

    let test_contexts = corpus
        .split_queries(Split::Test)
        .iter()
        .map(|q| q.context.clone())
        .collect();
    Experiment {
        truth,
        train,
        val,
        heldout,
        test_contexts,
    }
}

#[test]
fn criterion_01_proposition1_equivalence() {
    let start = std::time::Instant::now();
    let mut max_rel = 0.0f64;
    for case in 0..100u64 {
        let k_max = 2 + (case % 4) as usize; // 2..=5
        let t = (case % 3) as usize;
        let data = random_dataset(case, 50, k_max, t, 1 + (case % 3) as usize);
        let grouped = group_counts(&data);
        let family = match case % 3 {
            0 => ModelFamily::Pbm,
            1 => ModelFamily::Cpbm,
            _ => ModelFamily::CpbmContextFreeRel,
        };
        let model = random_model(family, t, k_max, case ^ 0xabcd);
        let a = allpairs_objective(&data, &model, 1e-6).unwrap();
        let b = cross_entropy_form(&grouped, &model, 1e-6).unwrap();
        let rel = (a - b).abs() / (a.abs() + 1.0);
        max_rel = max_rel.max(rel);
        assert!(
            rel <= 1e-9,
            "case {case}: objective {a} vs grouped form {b} (rel {rel})"
        );
    }
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs() < 10, "took {elapsed:?}");
    println!(
        "PASS criterion 1 (Proposition-1 equivalence): 100 instances, max relative gap {max_rel:.3e}, {elapsed:?}"
    );
}

#[test]
fn criterion_02_gradient_correctness() {
    let start = std::time::Instant::now();
    let step = 1e-5;
    let mut worst = 0.0f64;
    for case in 0..10u64 {
        let k_max = 3 + (case % 3) as usize;
        let t = 1 + (case % 3) as usize;
        let data = random_dataset(1000 + case, 40, k_max, t, 2);
        let family = match case % 3 {
            0 => ModelFamily::Pbm,
            1 => ModelFamily::Cpbm,
            _ => ModelFamily::CpbmContextFreeRel,
        };
        let mut model = random_model(family, t, k_max, 77 + case);
        let grad = objective_gradient(&data, &model, 1e-6).unwrap();
        #[allow(clippy::needless_range_loop)] // params are re-borrowed mutably inside
        for i in 0..model.params().len() {
            let orig = model.params()[i];
            model.params_mut()[i] = orig + step;
            let plus = allpairs_objective(&data, &model, 1e-6).unwrap();
            model.params_mut()[i] = orig - step;
            let minus = allpairs_objective(&data, &model, 1e-6).unwrap();
            model.params_mut()[i] = orig;
            let fd = (plus - minus) / (2.0 * step);
            let denom = grad[i].abs().max(fd.abs()).max(1e-7);
            let rel = (grad[i] - fd).abs() / denom;
            worst = worst.max(rel);
            assert!(
                rel <= 1e-4,
                "case {case} param {i}: analytic {} vs fd {fd} (rel {rel})",
                grad[i]
            );
        }
    }
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs() < 30, "took {elapsed:?}");
    println!(
        "PASS criterion 2 (gradient correctness): 10 instances, max relative deviation {worst:.3e}, {elapsed:?}"
    );
}

/// Toy setup shared by criteria 3 and 4: five documents whose scores under
/// three unit-weight rankers give the placements d1 -> 1/2/3, d2 -> 2/1/1,
/// d3 -> 3/3/2, d4 -> 4/5/5, d5 -> 5/4/4.
fn toy_corpus_and_rankers() -> (Corpus, Vec<Ranker>) {
    let scores: [[f64; 3]; 5] = [
        [5.0, 4.0, 3.0],
        [4.0, 5.0, 5.0],
        [3.0, 3.0, 4.0],
        [2.0, 1.0, 1.0],
        [1.0, 2.0, 2.0],
    ];
    let candidates: Vec<Document> = scores
        .iter()
        .enumerate()
        .map(|(i, feats)| Document {
            doc_id: (i + 1) as u64,
            features: feats.to_vec(),
            relevance: i % 2 == 0,
        })
        .collect();
    let corpus = Corpus {
        queries: vec![Query {
            query_id: 0,
            context: vec![0.4, -0.2],
            candidates,
        }],
        splits: vec![Split::Train],
        context_dim: 2,
        n_features: 3,
    };
    let rankers = (0..3)
        .map(|i| {
            let mut weights = vec![0.0; 3];
            weights[i] = 1.0;
            Ranker {
                ranker_id: i as u32,
                weights,
                traffic: 1,
            }
        })
        .collect();
    (corpus, rankers)
}

#[test]
fn criterion_03_unbiasedness_of_grouped_labels() {
    let start = std::time::Instant::now();
    let (corpus, rankers) = toy_corpus_and_rankers();
    let k_max = 5;
    // Context-dependent examination truth over the single fixed context.
    let truth = ExaminationParams {
        weights: vec![0.5, -0.3],
        eta: 0.5,
    };
    let x = corpus.queries[0].context.clone();

    let n_servings = 50_000u64;
    let log = run_ab_test(
        &corpus,
        Split::Train,
        &rankers,
        &[1.0 / 3.0; 3],
        &truth,
        0.0,
        k_max,
        n_servings,
        314,
    )
    .unwrap();
    let dataset = harvest(&log, &rankers, &corpus).unwrap();
    let grouped = group_counts(&dataset);
    let index = build_interventional_index(&rankers, &corpus.queries, k_max);

    // True average relevance per pair: the relevant fraction of member docs.
    let r_true = |k: usize, kp: usize| -> f64 {
        let members: Vec<u64> = (1..=5u64).filter(|&d| index.in_set(0, d, k, kp)).collect();
        let rel = members
            .iter()
            .filter(|&&d| corpus.queries[0].candidates[(d - 1) as usize].relevance)
            .count();
        rel as f64 / members.len() as f64
    };

    let mut checked = 0;
    for (&(bucket, k, kp), cell) in &grouped.cells {
        assert_eq!(bucket, 0, "single fixed context expected");
        if cell.n_hat < 100 {
            continue;
        }
        // Standard error of y_hat: the sample std of the per-record c_hat
        // contributions (0 for records served elsewhere) over sqrt(N).
        let values: Vec<f64> = dataset
            .records
            .iter()
            .filter(|r| r.attainable.contains(k) && r.attainable.contains(kp))
            .map(|r| {
                if r.position == k && r.clicked {
                    r.ips_weight
                } else {
                    0.0
                }
            })
            .collect();
        assert_eq!(values.len() as u64, cell.n_hat);
        let se = std_dev(&values) / (values.len() as f64).sqrt();
        let expected = truth.propensity(&x, k) * r_true(k, kp);
        assert!(
            (cell.y_hat - expected).abs() <= 3.0 * se + 1e-9,
            "pair ({k},{kp}): y_hat {} vs p*r {expected} (se {se})",
            cell.y_hat
        );
        checked += 1;
    }
    assert!(checked >= 8, "only {checked} pairs had N >= 100");
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs() < 120, "took {elapsed:?}");
    println!(
        "PASS criterion 3 (unbiasedness): {checked} ordered pairs within 3 SE over {n_servings} servings, {elapsed:?}"
    );
}

#[test]
fn criterion_04_toy_example_exactness() {
    let (corpus, rankers) = toy_corpus_and_rankers();
    let index = build_interventional_index(&rankers, &corpus.queries, 5);
    // d1 is in S[1,2], S[1,3], S[2,3].
    assert!(index.in_set(0, 1, 1, 2));
    assert!(index.in_set(0, 1, 1, 3));
    assert!(index.in_set(0, 1, 2, 3));
    // d2 is in S[1,2] only.
    assert!(index.in_set(0, 2, 1, 2));
    assert!(!index.in_set(0, 2, 1, 3));
    assert!(!index.in_set(0, 2, 2, 3));

    let weights = compute_assignment_weights(&rankers, &corpus.queries, 5);
    let third = 1.0 / 3.0;
    for k in 1..=3 {
        assert!((weights.weight(0, 1, k) - third).abs() < 1e-15);
    }
    assert!((weights.weight(0, 4, 4) - third).abs() < 1e-15);
    assert!((weights.weight(0, 4, 5) - 2.0 * third).abs() < 1e-15);
    println!(
        "PASS criterion 4 (toy-example exactness): memberships and assignment weights reproduce the worked values"
    );
}

#[test]
fn criterion_05_pbm_recovery_at_eta_zero() {
    let start = std::time::Instant::now();
    let exp = run_experiment(0.0, 0.0, 25_000, 500);
    let result = fit(
        ModelFamily::Pbm,
        &exp.train,
        &exp.val,
        &train_config(derive_seed(500, "fit", 0)),
    )
    .unwrap();
    let ratios = result.model.relative_propensities(&[]).unwrap();
    let mut worst = 0.0f64;
    for k in 1..=K_MAX {
        let gap = (ratios[k - 1] - 1.0 / k as f64).abs();
        worst = worst.max(gap);
        assert!(
            gap <= 0.05,
            "position {k}: ratio {} vs {} (gap {gap})",
            ratios[k - 1],
            1.0 / k as f64
        );
    }
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs() < 300, "took {elapsed:?}");
    println!(
        "PASS criterion 5 (PBM recovery at eta=0): max |ratio - 1/k| = {worst:.4} <= 0.05, {elapsed:?}"
    );
}

#[test]
fn criterion_06_swap_gold_standard() {
    let start = std::time::Instant::now();
    // Context independent of relevance (zeta = 0) so the pooled CTR ratio
    // converges to the context-averaged relative propensity.
    let corpus = generate_corpus(&corpus_config(0.0, derive_seed(600, "corpus", 0))).unwrap();
    let rankers = make_rankers(&corpus, 1, 0.0, &[1], derive_seed(600, "rankers", 0)).unwrap();
    let truth = draw_examination_weights(0.5, CONTEXT_DIM, derive_seed(600, "examination", 0));

    let train_queries = corpus.split_queries(Split::Train);
    let true_avg = |k: usize| -> f64 {
        train_queries
            .iter()
            .map(|q| truth.propensity(&q.context, k))
            .sum::<f64>()
            / train_queries.len() as f64
    };

    let n_per_pair = 100_000u64;
    let mut worst = 0.0f64;
    for k in 2..=K_MAX {
        let log = run_swap_experiment(
            &corpus,
            Split::Train,
            &rankers[0],
            k,
            &truth,
            0.1,
            K_MAX,
            n_per_pair,
            derive_seed(600, "swap", k as u64),
        )
        .unwrap();
        let estimate = swap_gold_standard(std::slice::from_ref(&log), derive_seed(600, "ci", k as u64))
            .unwrap();
        let observed = estimate.ratio(k).expect("clicks observed at the anchor");
        let expected = true_avg(k) / true_avg(1);
        let rel = (observed - expected).abs() / expected;
        worst = worst.max(rel);
        assert!(
            rel <= 0.05,
            "pair (1,{k}): estimate {observed} vs truth {expected} (rel {rel})"
        );
        // The bootstrap interval must contain the point estimate.
        let pos = &estimate.positions[0];
        let (lo, hi) = pos.ci.expect("bootstrap interval");
        assert!(lo <= observed && observed <= hi);
    }
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs() < 300, "took {elapsed:?}");
    println!(
        "PASS criterion 6 (swap gold standard): 9 pairs at 1e5 servings each, max relative error {worst:.4} <= 0.05, {elapsed:?}"
    );
}

/// Shared output of the criterion-7 runs, reused by criteria 9 and the
/// test-objective direction check.
struct HeadlineRuns {
    pbm_eta05: Vec<f64>,
    cpbm_eta05: Vec<f64>,
    pbm_eta0: Vec<f64>,
    cpbm_eta0: Vec<f64>,
    cpbm_per_rank_eta05: Vec<Vec<f64>>,
    test_obj_pbm: Vec<f64>,
    test_obj_cpbm: Vec<f64>,
}

static HEADLINE: OnceLock<HeadlineRuns> = OnceLock::new();

fn headline_runs() -> &'static HeadlineRuns {
    HEADLINE.get_or_init(|| {
        let mut out = HeadlineRuns {
            pbm_eta05: Vec::new(),
            cpbm_eta05: Vec::new(),
            pbm_eta0: Vec::new(),
            cpbm_eta0: Vec::new(),
            cpbm_per_rank_eta05: Vec::new(),
            test_obj_pbm: Vec::new(),
            test_obj_cpbm: Vec::new(),
        };
        for seed in 0..6u64 {
            for &eta in &[0.5f64, 0.0] {
                let run_seed = derive_seed(700, &format!("eta{eta}"), seed);
                let exp = run_experiment(eta, 1.0, 50_000, run_seed);
                let pbm = fit(
                    ModelFamily::Pbm,
                    &exp.train,
                    &exp.val,
                    &train_config(derive_seed(run_seed, "fit-pbm", 0)),
                )
                .unwrap();
                let cpbm = fit(
                    ModelFamily::Cpbm,
                    &exp.train,
                    &exp.val,
                    &train_config(derive_seed(run_seed, "fit-cpbm", 0)),
                )
                .unwrap();
                let (re_pbm, _) = rel_error(&pbm.model, &exp.test_contexts, &exp.truth).unwrap();
                let (re_cpbm, per_rank) =
                    rel_error(&cpbm.model, &exp.test_contexts, &exp.truth).unwrap();
                if eta == 0.5 {
                    out.pbm_eta05.push(re_pbm);
                    out.cpbm_eta05.push(re_cpbm);
                    out.cpbm_per_rank_eta05.push(per_rank);
                    out.test_obj_pbm
                        .push(test_objective(&pbm.model, &exp.heldout).unwrap());
                    out.test_obj_cpbm
                        .push(test_objective(&cpbm.model, &exp.heldout).unwrap());
                } else {
                    out.pbm_eta0.push(re_pbm);
                    out.cpbm_eta0.push(re_cpbm);
                }
            }
        }
        out
    })
}

#[test]
fn criterion_07_cpbm_vs_pbm_headline() {
    let start = std::time::Instant::now();
    let runs = headline_runs();

    let pbm_mean = mean(&runs.pbm_eta05);
    let cpbm_mean = mean(&runs.cpbm_eta05);
    assert!(
        cpbm_mean <= 0.6 * pbm_mean,
        "eta=0.5: CPBM {cpbm_mean} vs PBM {pbm_mean} (ratio {})",
        cpbm_mean / pbm_mean
    );

    let gap = (mean(&runs.pbm_eta0) - mean(&runs.cpbm_eta0)).abs();
    assert!(
        gap <= 0.05,
        "eta=0: PBM {} vs CPBM {} (gap {gap})",
        mean(&runs.pbm_eta0),
        mean(&runs.cpbm_eta0)
    );

    println!(
        "PASS criterion 7 (CPBM vs PBM): eta=0.5 RelError PBM {:.4}+-{:.4}, CPBM {:.4}+-{:.4} \
         (improvement {:.1}%); eta=0 gap {:.4} <= 0.05; 6 seeds, {:?}",
        pbm_mean,
        std_dev(&runs.pbm_eta05),
        cpbm_mean,
        std_dev(&runs.cpbm_eta05),
        (1.0 - cpbm_mean / pbm_mean) * 100.0,
        gap,
        start.elapsed()
    );
}

#[test]
fn criterion_07b_test_objective_direction() {
    let runs = headline_runs();
    // On context-dependent data the CPBM scores a higher held-out AllPairs
    // objective than the featureless PBM.
    let pbm = mean(&runs.test_obj_pbm);
    let cpbm = mean(&runs.test_obj_cpbm);
    assert!(
        cpbm > pbm,
        "held-out objective: CPBM {cpbm} should exceed PBM {pbm}"
    );
    println!(
        "PASS criterion 7b (held-out objective direction): CPBM {cpbm:.1} > PBM {pbm:.1} (mean over 6 seeds)"
    );
}

#[test]
fn criterion_08_data_scaling_trend() {
    let start = std::time::Instant::now();
    let sizes = [1_000u64, 5_000, 20_000, 50_000];
    let mut errors: Vec<Vec<f64>> = vec![Vec::new(); sizes.len()];
    for seed in 0..6u64 {
        // One draw of corpus/rankers/truth per seed; smaller logs are
        // serving-stream prefixes of larger ones, so size is the only
        // variable within a seed.
        let run_seed = derive_seed(800, "scaling", seed);
        for (i, &n) in sizes.iter().enumerate() {
            let exp = run_experiment(0.5, 1.0, n, run_seed);
            let result = fit(
                ModelFamily::Cpbm,
                &exp.train,
                &exp.val,
                &train_config(derive_seed(run_seed, "fit", i as u64)),
            )
            .unwrap();
            let (re, _) = rel_error(&result.model, &exp.test_contexts, &exp.truth).unwrap();
            errors[i].push(re);
        }
    }
    let means: Vec<f64> = errors.iter().map(|v| mean(v)).collect();
    for i in 0..sizes.len() - 1 {
        let allowance = pooled_std(&errors[i], &errors[i + 1]);
        assert!(
            means[i + 1] <= means[i] + allowance,
            "RelError rose from {} ({} servings) to {} ({} servings), pooled std {allowance}",
            means[i],
            sizes[i],
            means[i + 1],
            sizes[i + 1]
        );
    }
    println!(
        "PASS criterion 8 (data scaling): CPBM RelError means {:?} non-increasing within 1 pooled std, {:?}",
        means
            .iter()
            .map(|m| (m * 10_000.0).round() / 10_000.0)
            .collect::<Vec<_>>(),
        start.elapsed()
    );
}

#[test]
fn criterion_09_per_rank_error_shape() {
    let runs = headline_runs();
    // Pool the 6 seeds' per-rank vectors: each (position, error) pair is a
    // data point for the rank correlation.
    let mut positions = Vec::new();
    let mut errors = Vec::new();
    for per_rank in &runs.cpbm_per_rank_eta05 {
        for (k, &err) in per_rank.iter().enumerate() {
            positions.push((k + 1) as f64);
            errors.push(err);
        }
    }
    let rho = spearman_rho(&positions, &errors);
    assert!(rho > 0.0, "Spearman rho between position and error: {rho}");
    println!(
        "PASS criterion 9 (per-rank error shape): Spearman rho = {rho:.4} > 0 over {} pooled points",
        errors.len()
    );
}

#[test]
fn criterion_10_relevance_model_ablation() {
    let start = std::time::Instant::now();
    let n_seeds = 20u64;
    let mut reductions_z1 = Vec::new();
    let mut reductions_z0 = Vec::new();
    for &zeta in &[1.0f64, 0.0] {
        for seed in 0..n_seeds {
            let run_seed = derive_seed(1000, &format!("ablation-z{zeta}"), seed);
            let exp = run_experiment(0.5, zeta, 50_000, run_seed);
            let neural = fit(
                ModelFamily::Cpbm,
                &exp.train,
                &exp.val,
                &train_config(derive_seed(run_seed, "fit-neural", 0)),
            )
            .unwrap();
            let context_free = fit(
                ModelFamily::CpbmContextFreeRel,
                &exp.train,
                &exp.val,
                &train_config(derive_seed(run_seed, "fit-cf", 0)),
            )
            .unwrap();
            let (re_n, _) = rel_error(&neural.model, &exp.test_contexts, &exp.truth).unwrap();
            let (re_c, _) =
                rel_error(&context_free.model, &exp.test_contexts, &exp.truth).unwrap();
            if zeta == 1.0 {
                reductions_z1.push(re_c - re_n);
            } else {
                reductions_z0.push(re_c - re_n);
            }
        }
    }
    let mean_z1 = mean(&reductions_z1);
    let mean_z0 = mean(&reductions_z0);
    assert!(
        mean_z1 >= 0.0,
        "zeta=1: mean error reduction {mean_z1} (std {}) should be nonnegative",
        std_dev(&reductions_z1)
    );
    assert!(
        mean_z0.abs() <= 0.01,
        "zeta=0: mean error reduction {mean_z0} (std {}) should be within +-0.01",
        std_dev(&reductions_z0)
    );
    println!(
        "PASS criterion 10 (relevance-model ablation): reduction at zeta=1 {:+.4}+-{:.4} >= 0, \
         at zeta=0 {:+.4}+-{:.4} within +-0.01; 20 seeds, {:?}",
        mean_z1,
        std_dev(&reductions_z1),
        mean_z0,
        std_dev(&reductions_z0),
        start.elapsed()
    );
}

#[test]
fn criterion_11_ltr_closure() {
    let start = std::time::Instant::now();
    let mut avg_true = Vec::new();
    let mut avg_cpbm = Vec::new();
    let mut avg_pbm = Vec::new();
    for seed in 0..6u64 {
        let run_seed = derive_seed(1100, "ltr", seed);
        // Strong context dependence, per the learning experiment's setup.
        let corpus =
            generate_corpus(&corpus_config(1.0, derive_seed(run_seed, "corpus", 0))).unwrap();
        let rankers =
            make_rankers(&corpus, 2, 0.5, &[1, 1], derive_seed(run_seed, "rankers", 0)).unwrap();
        let truth =
            draw_examination_weights(10.0, CONTEXT_DIM, derive_seed(run_seed, "examination", 0));
        let log = run_ab_test(
            &corpus,
            Split::Train,
            &rankers,
            &[0.5, 0.5],
            &truth,
            0.1,
            K_MAX,
            50_000,
            derive_seed(run_seed, "log", 0),
        )
        .unwrap();
        let dataset = harvest(&log, &rankers, &corpus).unwrap();
        let (train, val) = dataset.split_records(|r| r.query_id % 10 != 9);
        let pbm = fit(
            ModelFamily::Pbm,
            &train,
            &val,
            &train_config(derive_seed(run_seed, "fit-pbm", 0)),
        )
        .unwrap();
        let cpbm = fit(
            ModelFamily::Cpbm,
            &train,
            &val,
            &train_config(derive_seed(run_seed, "fit-cpbm", 0)),
        )
        .unwrap();

        let ltr_cfg = IpsTrainConfig {
            seed: derive_seed(run_seed, "ltr", 0),
            ..IpsTrainConfig::default()
        };
        let sources = [
            PropensitySource::True(&truth),
            PropensitySource::Estimated(&cpbm.model),
            PropensitySource::Estimated(&pbm.model),
        ];
        let mut ranks = [0.0f64; 3];
        for (i, source) in sources.iter().enumerate() {
            let ranker = train_ips_ranker(&log, source, &corpus, &ltr_cfg).unwrap();
            ranks[i] = avg_rank(&ranker, &corpus, Split::Test).unwrap();
        }
        avg_true.push(ranks[0]);
        avg_cpbm.push(ranks[1]);
        avg_pbm.push(ranks[2]);
    }

    let (m_true, m_cpbm, m_pbm) = (mean(&avg_true), mean(&avg_cpbm), mean(&avg_pbm));
    let slack_tc = pooled_std(&avg_true, &avg_cpbm);
    let slack_cp = pooled_std(&avg_cpbm, &avg_pbm);
    assert!(
        m_true <= m_cpbm + slack_tc,
        "AvgRank(true) {m_true} should not exceed AvgRank(cpbm) {m_cpbm} + {slack_tc}"
    );
    assert!(
        m_cpbm <= m_pbm + slack_cp,
        "AvgRank(cpbm) {m_cpbm} should not exceed AvgRank(pbm) {m_pbm} + {slack_cp}"
    );
    println!(
        "PASS criterion 11 (LTR closure): AvgRank true {m_true:.3} <= cpbm {m_cpbm:.3} (+{slack_tc:.3}) <= pbm {m_pbm:.3} (+{slack_cp:.3}); 6 seeds, {:?}",
        start.elapsed()
    );
}
