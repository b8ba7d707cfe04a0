//! Collects every evaluation summary under the output directory into one table.

use std::path::Path;

use serde::Serialize;

use super::eval::{write_csv, SummaryRow};
use crate::config::RunConfig;
use crate::error::{CliError, Result};

#[derive(Debug, Serialize)]
pub struct ReportRow {
    pub algorithm: String,
    pub es: u8,
    pub seeds: usize,
    pub episodes: usize,
    pub mean_normalized: f64,
    pub se_normalized: Option<f64>,
}

fn read_summary(path: &Path) -> Result<Vec<SummaryRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => CliError::io(path, io),
        other => CliError::Data(format!("{}: {other:?}", path.display())),
    })?;
    r.deserialize()
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

pub fn collect(out: &Path) -> Result<Vec<ReportRow>> {
    let eval = out.join("eval");
    let listing = std::fs::read_dir(&eval).map_err(|e| CliError::io(&eval, e))?;
    let mut algos: Vec<String> = listing
        .filter_map(|e| e.ok())
        .filter(|e| e.path().join("summary.csv").is_file())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .collect();
    algos.sort();
    if algos.is_empty() {
        return Err(CliError::Data(format!(
            "no evaluation summaries under {}",
            eval.display()
        )));
    }
    let mut rows = Vec::new();
    for algo in algos {
        for s in read_summary(&eval.join(&algo).join("summary.csv"))? {
            rows.push(ReportRow {
                algorithm: algo.clone(),
                es: s.es,
                seeds: s.seeds,
                episodes: s.episodes,
                mean_normalized: s.mean_normalized,
                se_normalized: s.se_normalized,
            });
        }
    }
    Ok(rows)
}

pub fn run(cfg: &RunConfig) -> Result<()> {
    let out = cfg.out_dir();
    let rows = collect(&out)?;
    let path = out.join("report.csv");
    write_csv(&path, &rows)?;
    println!("{:<8} {:>3} {:>6} {:>10}", "algo", "es", "seeds", "score");
    for r in &rows {
        let se = r
            .se_normalized
            .map(|s| format!(" ± {s:.1}"))
            .unwrap_or_default();
        println!(
            "{:<8} {:>3} {:>6} {:>6.1}{se}",
            r.algorithm, r.es, r.seeds, r.mean_normalized
        );
    }
    eprintln!("wrote {}", path.display());
    Ok(())
}
