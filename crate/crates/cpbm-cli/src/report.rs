//! Aggregate sweep results into mean/std summaries and plot-ready series.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use cpbm::stats::{mean, std_dev};

use crate::config::ExperimentConfig;
use crate::CliError;

#[derive(Debug, Clone)]
struct ResultRow {
    axis: String,
    value: f64,
    family: String,
    rel_error: f64,
    per_rank: Vec<f64>,
}

fn parse_results(path: &Path) -> Result<Vec<ResultRow>, CliError> {
    let content = std::fs::read_to_string(path)
        .map_err(|e| CliError::data(format!("cannot read {}: {e}", path.display())))?;
    let mut lines = content.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| CliError::data("results CSV is empty"))?;
    let columns: Vec<&str> = header.split(',').collect();
    let find = |name: &str| {
        columns
            .iter()
            .position(|c| *c == name)
            .ok_or_else(|| CliError::data(format!("results CSV lacks a `{name}` column")))
    };
    let col_axis = find("axis")?;
    let col_value = find("value")?;
    let col_family = find("model_family")?;
    let col_rel = find("rel_error")?;
    let rank_cols: Vec<usize> = columns
        .iter()
        .enumerate()
        .filter(|(_, c)| c.starts_with("per_rank_"))
        .map(|(i, _)| i)
        .collect();

    let mut rows = Vec::new();
    for (idx, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != columns.len() {
            return Err(CliError::data(format!(
                "row {}: expected {} fields, found {}",
                idx + 1,
                columns.len(),
                fields.len()
            )));
        }
        let parse_f64 = |s: &str, what: &str| -> Result<f64, CliError> {
            s.parse().map_err(|_| {
                CliError::data(format!("row {}: `{s}` is not a number ({what})", idx + 1))
            })
        };
        rows.push(ResultRow {
            axis: fields[col_axis].to_string(),
            value: parse_f64(fields[col_value], "value")?,
            family: fields[col_family].to_string(),
            rel_error: parse_f64(fields[col_rel], "rel_error")?,
            per_rank: rank_cols
                .iter()
                .map(|&c| parse_f64(fields[c], "per_rank"))
                .collect::<Result<_, _>>()?,
        });
    }
    Ok(rows)
}

pub fn cmd_report(config: &ExperimentConfig, input: Option<&Path>) -> Result<(), CliError> {
    let default_input = config.out_dir.join("sweep_eta.csv");
    let input = input.unwrap_or(&default_input);
    let rows = parse_results(input)?;
    if rows.is_empty() {
        return Err(CliError::data("results CSV has no data rows"));
    }
    let axis = rows[0].axis.clone();
    let out_dir = config.out_dir.join("report");
    std::fs::create_dir_all(&out_dir)?;

    // Group by (value, family).
    let mut groups: BTreeMap<(u64, String), Vec<&ResultRow>> = BTreeMap::new();
    for row in &rows {
        groups
            .entry((row.value.to_bits(), row.family.clone()))
            .or_default()
            .push(row);
    }

    let summary_path = out_dir.join("summary.csv");
    let mut summary = std::io::BufWriter::new(std::fs::File::create(&summary_path)?);
    writeln!(summary, "axis,value,model_family,n,mean_rel_error,std_rel_error")?;
    let mut series: BTreeMap<String, Vec<(f64, f64, f64)>> = BTreeMap::new();
    let mut means: BTreeMap<(u64, String), f64> = BTreeMap::new();
    for ((value_bits, family), group) in &groups {
        let value = f64::from_bits(*value_bits);
        let errors: Vec<f64> = group.iter().map(|r| r.rel_error).collect();
        let (m, s) = (mean(&errors), std_dev(&errors));
        if errors.len() == 1 {
            eprintln!(
                "warning: single repetition for {axis}={value} {family}; std reported as 0"
            );
        }
        writeln!(summary, "{axis},{value},{family},{},{m},{s}", errors.len())?;
        series.entry(family.clone()).or_default().push((value, m, s));
        means.insert((*value_bits, family.clone()), m);
    }
    summary.flush()?;

    // Plot-ready per-family series: x, mean, std.
    for (family, points) in &series {
        let path = out_dir.join(format!("series_{family}.csv"));
        let mut file = std::io::BufWriter::new(std::fs::File::create(&path)?);
        writeln!(file, "{axis},mean_rel_error,std_rel_error")?;
        for (x, m, s) in points {
            writeln!(file, "{x},{m},{s}")?;
        }
    }

    // Per-rank series (position, mean, std) per family, pooled over values.
    for family in series.keys() {
        let filtered: Vec<&ResultRow> = rows.iter().filter(|r| &r.family == family).collect();
        let k_max = filtered.iter().map(|r| r.per_rank.len()).max().unwrap_or(0);
        if k_max == 0 {
            continue;
        }
        let path = out_dir.join(format!("per_rank_{family}.csv"));
        let mut file = std::io::BufWriter::new(std::fs::File::create(&path)?);
        writeln!(file, "position,mean_error,std_error")?;
        for k in 0..k_max {
            let values: Vec<f64> = filtered
                .iter()
                .filter_map(|r| r.per_rank.get(k).copied())
                .collect();
            writeln!(file, "{},{},{}", k + 1, mean(&values), std_dev(&values))?;
        }
    }

    // Improvement table when both pbm and cpbm appear (relative decrease in
    // mean RelError of the contextual model).
    let values: std::collections::BTreeSet<u64> = groups.keys().map(|(v, _)| *v).collect();
    let mut improvement_lines = vec!["value,pbm_rel_error,cpbm_rel_error,improvement_pct".to_string()];
    for value_bits in values {
        let pbm = means.get(&(value_bits, "pbm".to_string()));
        let cpbm = means.get(&(value_bits, "cpbm".to_string()));
        if let (Some(&p), Some(&c)) = (pbm, cpbm) {
            let pct = (1.0 - c / p) * 100.0;
            let value = f64::from_bits(value_bits);
            improvement_lines.push(format!("{value},{p},{c},{pct}"));
            println!(
                "{axis}={value}: PBM {p:.6} vs CPBM {c:.6} -> improvement {pct:.2}%"
            );
        }
    }
    if improvement_lines.len() > 1 {
        std::fs::write(
            out_dir.join("improvement.csv"),
            improvement_lines.join("\n") + "\n",
        )?;
    }

    println!("report: {} -> {}", input.display(), out_dir.display());
    Ok(())
}
