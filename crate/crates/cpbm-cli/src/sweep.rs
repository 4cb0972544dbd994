//! Sweep runner: independent experiment cells over one axis, in parallel
//! worker threads, with a deterministic, sorted results CSV.

use std::io::Write;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use cpbm::clicksim::{draw_examination_weights, run_ab_test};
use cpbm::corpus::{generate_corpus, make_rankers, Split};
use cpbm::estimator::{fit, ModelFamily};
use cpbm::eval::{rel_error, test_objective};
use cpbm::harvest::harvest;
use cpbm::rng::derive_seed;

use crate::config::ExperimentConfig;
use crate::manifest::{files, path_in};
use crate::pipeline::split_train_val;
use crate::CliError;

#[derive(Debug, Clone)]
struct SweepRow {
    value: f64,
    repetition: u64,
    family: String,
    rel_error: f64,
    test_objective: f64,
    per_rank: Vec<f64>,
}

struct Cell {
    value: f64,
    value_index: usize,
    repetition: u64,
}

/// Families fitted per axis: the zeta sweep ablates the relevance head, the
/// others compare context-free vs contextual propensities.
fn families_for(axis: &str) -> Vec<ModelFamily> {
    match axis {
        "zeta" => vec![ModelFamily::Cpbm, ModelFamily::CpbmContextFreeRel],
        _ => vec![ModelFamily::Pbm, ModelFamily::Cpbm],
    }
}

fn run_cell(
    config: &ExperimentConfig,
    axis: &str,
    cell: &Cell,
    families: &[ModelFamily],
) -> Result<Vec<SweepRow>, CliError> {
    // Per-cell config override along the axis.
    let mut cell_config = config.clone();
    match axis {
        "n-queries" => cell_config.simulation.n_servings = cell.value as u64,
        "eta" => cell_config.simulation.eta = cell.value,
        "zeta" => cell_config.corpus.zeta = cell.value,
        "rank" => {}
        other => return Err(CliError::usage(format!("unknown sweep axis `{other}`"))),
    }

    let label = format!("sweep-{axis}-{}", cell.value_index);
    let seed_of = |stage: &str| {
        derive_seed(
            config.seed,
            &format!("{label}-{stage}"),
            cell.repetition,
        )
    };

    let mut corpus_cfg = cell_config.corpus.clone();
    corpus_cfg.seed = seed_of("corpus");
    let corpus = generate_corpus(&corpus_cfg)?;
    let rankers = make_rankers(
        &corpus,
        cell_config.rankers.m,
        cell_config.rankers.perturbation_scale,
        &cell_config.rankers.traffic_vector(),
        seed_of("rankers"),
    )?;
    let truth = draw_examination_weights(
        cell_config.simulation.eta,
        cell_config.corpus.context_dim,
        seed_of("examination"),
    );
    let probs = cell_config.simulation.assignment_probs(cell_config.rankers.m);
    let log = run_ab_test(
        &corpus,
        Split::Train,
        &rankers,
        &probs,
        &truth,
        cell_config.simulation.eps_minus,
        cell_config.simulation.k_max,
        cell_config.simulation.n_servings,
        seed_of("log"),
    )?;
    let dataset = harvest(&log, &rankers, &corpus)?;
    if dataset.is_empty() {
        return Err(CliError::data(format!(
            "no interventions harvested in sweep cell {axis}={} rep {}",
            cell.value, cell.repetition
        )));
    }
    let (train, val) = split_train_val(&dataset);

    let heldout = if cell_config.simulation.heldout_servings > 0 {
        let log = run_ab_test(
            &corpus,
            Split::Test,
            &rankers,
            &probs,
            &truth,
            cell_config.simulation.eps_minus,
            cell_config.simulation.k_max,
            cell_config.simulation.heldout_servings,
            seed_of("heldout-log"),
        )?;
        Some(harvest(&log, &rankers, &corpus)?)
    } else {
        None
    };

    let contexts: Vec<Vec<f64>> = corpus
        .split_queries(Split::Test)
        .iter()
        .map(|q| q.context.clone())
        .collect();

    let mut rows = Vec::with_capacity(families.len());
    for &family in families {
        let mut train_cfg = match family {
            ModelFamily::Pbm => cell_config.pbm.clone(),
            _ => cell_config.cpbm.clone(),
        };
        train_cfg.seed = seed_of(&format!("fit-{family}"));
        let result = fit(family, &train, &val, &train_cfg)?;
        let (scalar, per_rank) = rel_error(&result.model, &contexts, &truth)?;
        let objective = match &heldout {
            Some(data) if !data.is_empty() => test_objective(&result.model, data)?,
            _ => f64::NAN,
        };
        rows.push(SweepRow {
            value: cell.value,
            repetition: cell.repetition,
            family: family.to_string(),
            rel_error: scalar,
            test_objective: objective,
            per_rank,
        });
    }
    Ok(rows)
}

pub fn cmd_sweep(config: &ExperimentConfig, axis: &str, threads: usize) -> Result<(), CliError> {
    let (values, repetitions): (Vec<f64>, u64) = match axis {
        "n-queries" => (
            config.sweep.n_queries.iter().map(|&n| n as f64).collect(),
            config.sweep.repetitions,
        ),
        "eta" => (config.sweep.eta.clone(), config.sweep.repetitions),
        "zeta" => (config.sweep.zeta.clone(), config.sweep.zeta_repetitions),
        "rank" => (vec![config.simulation.eta], config.sweep.repetitions),
        other => return Err(CliError::usage(format!("unknown sweep axis `{other}`"))),
    };
    if values.is_empty() {
        return Err(CliError::usage(format!(
            "sweep axis `{axis}` has no values in the config"
        )));
    }
    let families = families_for(axis);

    let cells: Vec<Cell> = values
        .iter()
        .enumerate()
        .flat_map(|(value_index, &value)| {
            (0..repetitions).map(move |repetition| Cell {
                value,
                value_index,
                repetition,
            })
        })
        .collect();

    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<SweepRow>> = Mutex::new(Vec::new());
    let failure: Mutex<Option<CliError>> = Mutex::new(None);

    std::thread::scope(|scope| {
        for _ in 0..threads.max(1) {
            scope.spawn(|| loop {
                let idx = next.fetch_add(1, Ordering::SeqCst);
                if idx >= cells.len() || failure.lock().unwrap().is_some() {
                    break;
                }
                match run_cell(config, axis, &cells[idx], &families) {
                    Ok(rows) => results.lock().unwrap().extend(rows),
                    Err(err) => {
                        failure.lock().unwrap().get_or_insert(err);
                        break;
                    }
                }
            });
        }
    });
    if let Some(err) = failure.into_inner().unwrap() {
        return Err(err);
    }

    let mut rows = results.into_inner().unwrap();
    rows.sort_by(|a, b| {
        a.value
            .total_cmp(&b.value)
            .then(a.repetition.cmp(&b.repetition))
            .then(a.family.cmp(&b.family))
    });

    let out = &config.out_dir;
    std::fs::create_dir_all(out)?;
    let path = path_in(out, &files::sweep(axis));
    let mut file = std::io::BufWriter::new(std::fs::File::create(&path)?);
    let k_max = config.simulation.k_max;
    let rank_cols: Vec<String> = (1..=k_max).map(|k| format!("per_rank_{k}")).collect();
    writeln!(
        file,
        "axis,value,repetition,model_family,rel_error,test_objective,{}",
        rank_cols.join(",")
    )?;
    for row in &rows {
        let ranks: Vec<String> = row.per_rank.iter().map(|v| format!("{v}")).collect();
        writeln!(
            file,
            "{axis},{},{},{},{},{},{}",
            row.value,
            row.repetition,
            row.family,
            row.rel_error,
            row.test_objective,
            ranks.join(",")
        )?;
    }
    file.flush()?;
    println!(
        "sweep {axis}: {} cells x {} families -> {}",
        cells.len(),
        families.len(),
        path.display()
    );
    Ok(())
}
