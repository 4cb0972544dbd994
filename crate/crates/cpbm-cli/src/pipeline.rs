//! Stage implementations shared by the subcommands and the sweep runner.

use std::io::Write;
use std::path::Path;

use cpbm::clicksim::{draw_examination_weights, run_ab_test, ClickLog, ExaminationParams};
use cpbm::corpus::{
    generate_corpus, load_rankers, make_rankers, save_rankers, Corpus, Ranker, Split,
};
use cpbm::estimator::{fit, load_model, save_model, FitResult, Model, ModelFamily, TrainConfig};
use cpbm::eval::{rel_error, test_objective, EvalReport};
use cpbm::harvest::{harvest, HarvestDataset};
use cpbm::ltr::{avg_rank, train_ips_ranker, PropensitySource};

use crate::config::ExperimentConfig;
use crate::manifest::{files, path_in, Manifest};
use crate::CliError;

/// Fraction of harvested queries reserved for validation: queries whose id
/// hashes to bucket 9 of 10. Query-disjoint so that early stopping detects
/// context overfitting.
pub fn split_train_val(dataset: &HarvestDataset) -> (HarvestDataset, HarvestDataset) {
    dataset.split_records(|r| r.query_id % 10 != 9)
}

pub struct SimArtifacts {
    pub corpus: Corpus,
    pub rankers: Vec<Ranker>,
    pub truth: ExaminationParams,
    pub log: ClickLog,
    pub heldout_log: Option<ClickLog>,
}

/// Run the simulation stages in memory with seeds derived from `manifest`.
pub fn simulate_in_memory(
    config: &ExperimentConfig,
    manifest: &mut Manifest,
) -> Result<SimArtifacts, CliError> {
    let mut corpus_cfg = config.corpus.clone();
    corpus_cfg.seed = manifest.stage("corpus", 0, files::CORPUS);
    let corpus = generate_corpus(&corpus_cfg)?;

    let ranker_seed = manifest.stage("rankers", 0, files::RANKERS);
    let rankers = make_rankers(
        &corpus,
        config.rankers.m,
        config.rankers.perturbation_scale,
        &config.rankers.traffic_vector(),
        ranker_seed,
    )?;
    if config.rankers.m == 1 {
        eprintln!(
            "warning: a single ranker produces no implicit interventions; harvesting will be empty"
        );
    }

    let truth_seed = manifest.stage("examination", 0, files::EXAMINATION);
    let truth = draw_examination_weights(
        config.simulation.eta,
        config.corpus.context_dim,
        truth_seed,
    );

    let probs = config.simulation.assignment_probs(config.rankers.m);
    let log_seed = manifest.stage("log", 0, files::CLICK_LOG);
    let log = run_ab_test(
        &corpus,
        Split::Train,
        &rankers,
        &probs,
        &truth,
        config.simulation.eps_minus,
        config.simulation.k_max,
        config.simulation.n_servings,
        log_seed,
    )?;

    let heldout_log = if config.simulation.heldout_servings > 0 {
        let seed = manifest.stage("heldout-log", 0, files::HELDOUT_LOG);
        Some(run_ab_test(
            &corpus,
            Split::Test,
            &rankers,
            &probs,
            &truth,
            config.simulation.eps_minus,
            config.simulation.k_max,
            config.simulation.heldout_servings,
            seed,
        )?)
    } else {
        None
    };

    Ok(SimArtifacts {
        corpus,
        rankers,
        truth,
        log,
        heldout_log,
    })
}

pub fn cmd_simulate(config: &ExperimentConfig) -> Result<(), CliError> {
    let out = &config.out_dir;
    std::fs::create_dir_all(out)?;
    let mut manifest = Manifest::new(config.seed);
    let artifacts = simulate_in_memory(config, &mut manifest)?;

    artifacts.corpus.save(path_in(out, files::CORPUS))?;
    save_rankers(&artifacts.rankers, path_in(out, files::RANKERS))?;
    let truth_json = serde_json::to_string_pretty(&artifacts.truth)
        .map_err(|e| CliError::data(e.to_string()))?;
    std::fs::write(path_in(out, files::EXAMINATION), truth_json + "\n")?;
    artifacts.log.save(path_in(out, files::CLICK_LOG))?;
    if let Some(heldout) = &artifacts.heldout_log {
        heldout.save(path_in(out, files::HELDOUT_LOG))?;
    }
    manifest.save(out)?;

    println!(
        "simulate: {} queries, {} rankers, {} servings ({} records), heldout {} servings -> {}",
        artifacts.corpus.queries.len(),
        artifacts.rankers.len(),
        artifacts.log.n_servings(),
        artifacts.log.records.len(),
        artifacts
            .heldout_log
            .as_ref()
            .map_or(0, |l| l.n_servings()),
        out.display()
    );
    Ok(())
}

pub fn cmd_harvest(config: &ExperimentConfig) -> Result<(), CliError> {
    let out = &config.out_dir;
    let _manifest = Manifest::load(out)?;
    let corpus = Corpus::load(path_in(out, files::CORPUS))?;
    let rankers = load_rankers(path_in(out, files::RANKERS))?;

    let log = ClickLog::load(path_in(out, files::CLICK_LOG))?;
    let dataset = harvest(&log, &rankers, &corpus)?;
    dataset.save(path_in(out, files::HARVEST))?;
    println!(
        "harvest: {} records -> {} interventional records, {} label entries",
        log.records.len(),
        dataset.records.len(),
        dataset.n_entries()
    );
    for ((k, kp), n) in dataset.pair_counts() {
        println!("  pair ({k},{kp}): {n} entries");
    }

    let heldout_path = path_in(out, files::HELDOUT_LOG);
    if heldout_path.exists() {
        let heldout_log = ClickLog::load(heldout_path)?;
        let heldout = harvest(&heldout_log, &rankers, &corpus)?;
        heldout.save(path_in(out, files::HELDOUT_HARVEST))?;
        println!(
            "harvest (heldout): {} interventional records, {} label entries",
            heldout.records.len(),
            heldout.n_entries()
        );
    }
    Ok(())
}

/// Families fitted by `cpbm fit`.
pub const FIT_FAMILIES: [ModelFamily; 2] = [ModelFamily::Pbm, ModelFamily::Cpbm];

fn train_config_for(config: &ExperimentConfig, family: ModelFamily) -> TrainConfig {
    match family {
        ModelFamily::Pbm => config.pbm.clone(),
        ModelFamily::Cpbm | ModelFamily::CpbmContextFreeRel => config.cpbm.clone(),
    }
}

pub fn write_curves(path: &Path, result: &FitResult) -> Result<(), CliError> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "epoch,train_objective,val_objective,accepted")?;
    for stat in &result.curve {
        writeln!(
            out,
            "{},{},{},{}",
            stat.epoch, stat.train_objective, stat.val_objective, stat.accepted
        )?;
    }
    Ok(())
}

pub fn cmd_fit(config: &ExperimentConfig) -> Result<(), CliError> {
    let out = &config.out_dir;
    let manifest = Manifest::load(out)?;
    let dataset = HarvestDataset::load(path_in(out, files::HARVEST)).map_err(|e| {
        CliError::data(format!("{e}; run `cpbm harvest` first"))
    })?;
    if dataset.is_empty() {
        return Err(CliError::data(
            "no interventions harvested: the rankers never disagree, so neither model is \
             identifiable from this log",
        ));
    }
    let (train, val) = split_train_val(&dataset);

    for family in FIT_FAMILIES {
        let mut train_cfg = train_config_for(config, family);
        train_cfg.seed = manifest.seed_of(&format!("fit-{family}"), 0);
        let result = fit(family, &train, &val, &train_cfg)?;
        let family_name = family.to_string();
        save_model(&result.model, path_in(out, &files::model(&family_name)))?;
        write_curves(&path_in(out, &files::curves(&family_name)), &result)?;
        println!(
            "fit {family_name}: {} epochs, best validation objective {:.3}",
            result.curve.len(),
            result.best_val_objective
        );
    }
    Ok(())
}

pub fn test_contexts(corpus: &Corpus) -> Vec<Vec<f64>> {
    corpus
        .split_queries(Split::Test)
        .iter()
        .map(|q| q.context.clone())
        .collect()
}

pub fn cmd_eval(config: &ExperimentConfig) -> Result<(), CliError> {
    let out = &config.out_dir;
    let corpus = Corpus::load(path_in(out, files::CORPUS))?;
    let truth: ExaminationParams = serde_json::from_str(&std::fs::read_to_string(path_in(
        out,
        files::EXAMINATION,
    ))?)
    .map_err(|e| CliError::data(format!("examination params: {e}")))?;
    let heldout_path = path_in(out, files::HELDOUT_HARVEST);
    let heldout = if heldout_path.exists() {
        Some(HarvestDataset::load(heldout_path)?)
    } else {
        None
    };
    let contexts = test_contexts(&corpus);

    let mut rows = vec![EvalReport::csv_header(config.simulation.k_max)];
    for family in FIT_FAMILIES {
        let family_name = family.to_string();
        let model_path = path_in(out, &files::model(&family_name));
        if !model_path.exists() {
            continue;
        }
        let model = load_model(model_path)?;
        let (scalar, per_rank) = rel_error(&model, &contexts, &truth)?;
        let objective = match &heldout {
            Some(data) if !data.is_empty() => test_objective(&model, data)?,
            _ => f64::NAN,
        };
        let report = EvalReport {
            run_id: format!("seed{}", config.seed),
            model_family: family_name,
            eta: config.simulation.eta,
            zeta: config.corpus.zeta,
            n_queries: config.simulation.n_servings,
            seed: config.seed,
            rel_error: scalar,
            per_rank_error: per_rank,
            test_objective: objective,
            n_test: contexts.len(),
        };
        println!("{}", report.summary());
        rows.push(report.csv_row());
    }
    if rows.len() == 1 {
        return Err(CliError::data(
            "no fitted models found; run `cpbm fit` first",
        ));
    }
    std::fs::write(path_in(out, files::EVAL), rows.join("\n") + "\n")?;
    Ok(())
}

pub fn cmd_learn(config: &ExperimentConfig) -> Result<(), CliError> {
    let out = &config.out_dir;
    let corpus = Corpus::load(path_in(out, files::CORPUS))?;
    let truth: ExaminationParams = serde_json::from_str(&std::fs::read_to_string(path_in(
        out,
        files::EXAMINATION,
    ))?)
    .map_err(|e| CliError::data(format!("examination params: {e}")))?;
    let log = ClickLog::load(path_in(out, files::CLICK_LOG))?;
    let manifest = Manifest::load(out)?;

    let mut ltr_cfg = config.ltr.clone();
    ltr_cfg.seed = manifest.seed_of("ltr", 0);

    let mut models: Vec<(String, Model)> = Vec::new();
    for family in FIT_FAMILIES {
        let path = path_in(out, &files::model(&family.to_string()));
        if path.exists() {
            models.push((family.to_string(), load_model(path)?));
        }
    }

    let mut rows = vec!["weighting,avg_rank".to_string()];
    let true_source = PropensitySource::True(&truth);
    let ranker = train_ips_ranker(&log, &true_source, &corpus, &ltr_cfg)?;
    let skyline = avg_rank(&ranker, &corpus, Split::Test)?;
    save_rankers(&[ranker], path_in(out, "ranker_true.json"))?;
    println!("learn [true]: AvgRank {skyline:.4}");
    rows.push(format!("true,{skyline}"));

    for (name, model) in &models {
        let source = PropensitySource::Estimated(model);
        let ranker = train_ips_ranker(&log, &source, &corpus, &ltr_cfg)?;
        let value = avg_rank(&ranker, &corpus, Split::Test)?;
        save_rankers(&[ranker], path_in(out, &format!("ranker_{name}.json")))?;
        println!("learn [{name}]: AvgRank {value:.4}");
        rows.push(format!("{name},{value}"));
    }
    std::fs::write(path_in(out, files::AVGRANK), rows.join("\n") + "\n")?;
    Ok(())
}
