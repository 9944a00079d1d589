//! Plain-file reports for a finished run.
//!
//! Everything a downstream analysis usually wants lands in a `reports/`
//! directory as CSV (risk summaries, parameter posteriors, model-comparison
//! measures, correlation densities) plus a human-readable `summary.txt`.
//! The CSVs are derived purely from the merged result and per-subdomain
//! fits, so regenerating reports never refits anything.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::inference::{ParamDraws, SubmodelFit};
use crate::merge::MergedResult;
use crate::pipeline::SubdomainTiming;
use crate::stats::{kde, mean, quantile_sorted, sd};

/// What the report writer needs. `fits` and `timings` may be empty when a
/// report is regenerated from a persisted merged result alone; the
/// per-subdomain files are simply skipped.
pub struct ReportInputs<'a> {
    pub merged: &'a MergedResult,
    pub fits: &'a [SubmodelFit],
    pub timings: &'a [SubdomainTiming],
    pub workers: Option<usize>,
}

struct ParamRow {
    name: String,
    mean: f64,
    sd: f64,
    q025: f64,
    median: f64,
    q975: f64,
}

fn param_rows(params: &ParamDraws) -> Vec<ParamRow> {
    params
        .names
        .iter()
        .enumerate()
        .map(|(k, name)| {
            let mut col = params.column(k);
            col.sort_by(|a, b| a.partial_cmp(b).unwrap());
            ParamRow {
                name: name.clone(),
                mean: mean(&col),
                sd: sd(&col),
                q025: quantile_sorted(&col, 0.025),
                median: quantile_sorted(&col, 0.5),
                q975: quantile_sorted(&col, 0.975),
            }
        })
        .collect()
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    let f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::Writer::from_writer(f))
}

fn finish(mut w: csv::Writer<fs::File>, path: &Path) -> Result<()> {
    w.flush().map_err(|e| Error::io(path, e))
}

fn write_risks(path: &Path, merged: &MergedResult) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record([
        "area",
        "disease",
        "mean",
        "median",
        "sd",
        "q025",
        "q975",
        "prob_exceed_one",
        "cpo",
    ])
    .map_err(|e| Error::input(format!("{}: {e}", path.display())))?;
    for j in 0..merged.n_diseases {
        for i in 0..merged.n_areas {
            let n = j * merged.n_areas + i;
            let s = &merged.summaries[n];
            w.write_record([
                merged.area_ids[i].as_str(),
                merged.disease_names[j].as_str(),
                &format!("{:.6}", s.mean),
                &format!("{:.6}", s.median),
                &format!("{:.6}", s.sd),
                &format!("{:.6}", s.q025),
                &format!("{:.6}", s.q975),
                &format!("{:.6}", s.exceed_one),
                &format!("{:.6e}", merged.cpo[n]),
            ])
            .map_err(|e| Error::input(format!("{}: {e}", path.display())))?;
        }
    }
    finish(w, path)
}

fn write_params(path: &Path, params: &ParamDraws) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["parameter", "mean", "sd", "q025", "median", "q975"])
        .map_err(|e| Error::input(format!("{}: {e}", path.display())))?;
    for row in param_rows(params) {
        w.write_record([
            row.name.as_str(),
            &format!("{:.6}", row.mean),
            &format!("{:.6}", row.sd),
            &format!("{:.6}", row.q025),
            &format!("{:.6}", row.median),
            &format!("{:.6}", row.q975),
        ])
        .map_err(|e| Error::input(format!("{}: {e}", path.display())))?;
    }
    finish(w, path)
}

fn write_params_local(path: &Path, fits: &[SubmodelFit]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["subdomain", "parameter", "mean", "sd", "q025", "median", "q975"])
        .map_err(|e| Error::input(format!("{}: {e}", path.display())))?;
    for (d, fit) in fits.iter().enumerate() {
        for row in param_rows(&fit.params) {
            w.write_record([
                &d.to_string(),
                row.name.as_str(),
                &format!("{:.6}", row.mean),
                &format!("{:.6}", row.sd),
                &format!("{:.6}", row.q025),
                &format!("{:.6}", row.median),
                &format!("{:.6}", row.q975),
            ])
            .map_err(|e| Error::input(format!("{}: {e}", path.display())))?;
        }
    }
    finish(w, path)
}

fn write_criteria(path: &Path, merged: &MergedResult) -> Result<()> {
    let c = &merged.criteria;
    let mut w = csv_writer(path)?;
    w.write_record(["measure", "value"])
        .map_err(|e| Error::input(format!("{}: {e}", path.display())))?;
    let log_score = -merged.cpo.iter().map(|p| p.ln()).sum::<f64>() / merged.cpo.len() as f64;
    let rows: [(&str, f64); 8] = [
        ("mean_neg_log_lik", c.mean_neg_log_lik),
        ("mean_deviance", c.mean_deviance),
        ("deviance_at_mean", c.deviance_at_mean),
        ("p_d", c.p_d),
        ("dic", c.dic),
        ("p_waic", c.p_waic),
        ("waic", c.waic),
        ("log_score", log_score),
    ];
    for (name, value) in rows {
        w.write_record([name, &format!("{value:.6}")])
            .map_err(|e| Error::input(format!("{}: {e}", path.display())))?;
    }
    finish(w, path)
}

fn write_correlation_density(path: &Path, params: &ParamDraws) -> Result<bool> {
    let rho: Vec<usize> = params
        .names
        .iter()
        .enumerate()
        .filter(|(_, n)| n.starts_with("rho_"))
        .map(|(k, _)| k)
        .collect();
    if rho.is_empty() {
        return Ok(false);
    }
    let mut w = csv_writer(path)?;
    w.write_record(["parameter", "x", "density"])
        .map_err(|e| Error::input(format!("{}: {e}", path.display())))?;
    for k in rho {
        let col = params.column(k);
        let (grid, dens) = kde(&col, 128);
        for (x, d) in grid.iter().zip(&dens) {
            w.write_record([params.names[k].as_str(), &format!("{x:.6}"), &format!("{d:.6}")])
                .map_err(|e| Error::input(format!("{}: {e}", path.display())))?;
        }
    }
    finish(w, path)?;
    Ok(true)
}

fn write_summary(path: &Path, inputs: &ReportInputs) -> Result<()> {
    use std::fmt::Write as _;
    let m = inputs.merged;
    let mut s = String::new();
    let _ = writeln!(s, "Joint disease-risk smoothing: run summary");
    let _ = writeln!(s, "=========================================");
    let _ = writeln!(s);
    let _ = writeln!(s, "areas:        {}", m.n_areas);
    let _ = writeln!(
        s,
        "diseases:     {} ({})",
        m.n_diseases,
        m.disease_names.join(", ")
    );
    let _ = writeln!(s, "draws kept:   {}", m.n_draws);
    if !inputs.fits.is_empty() {
        let _ = writeln!(s, "subdomains:   {}", inputs.fits.len());
    }
    if let Some(workers) = inputs.workers {
        let _ = writeln!(s, "workers:      {workers}");
    }
    let _ = writeln!(s);
    let _ = writeln!(s, "Parameter posteriors (median [95% interval])");
    for row in param_rows(&m.params) {
        let _ = writeln!(
            s,
            "  {:<16} {:>9.4} [{:>9.4}, {:>9.4}]",
            row.name, row.median, row.q025, row.q975
        );
    }
    let _ = writeln!(s);
    let _ = writeln!(s, "Model comparison");
    let _ = writeln!(s, "  DIC:  {:>12.3}  (p_d   {:>8.2})", m.criteria.dic, m.criteria.p_d);
    let _ = writeln!(s, "  WAIC: {:>12.3}  (p_waic {:>7.2})", m.criteria.waic, m.criteria.p_waic);
    if !inputs.timings.is_empty() {
        let total: f64 = inputs.timings.iter().map(|t| t.seconds).sum();
        let _ = writeln!(s);
        let _ = writeln!(s, "Subdomain fits ({total:.1}s of fit time)");
        for t in inputs.timings {
            let _ = writeln!(
                s,
                "  {:>4}  {:>6} areas  {:>8.2}s{}",
                t.subdomain,
                t.n_areas,
                t.seconds,
                if t.reused { "  (reused)" } else { "" }
            );
        }
    }
    if !m.warnings.is_empty() {
        let _ = writeln!(s);
        let _ = writeln!(s, "Warnings");
        for w in &m.warnings {
            let _ = writeln!(s, "  - {w}");
        }
    }
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

/// Write the full report set into `dir` (created if needed) and return the
/// paths written.
pub fn write_reports(dir: &Path, inputs: &ReportInputs) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();

    let p = dir.join("risks.csv");
    write_risks(&p, inputs.merged)?;
    written.push(p);

    let p = dir.join("params.csv");
    write_params(&p, &inputs.merged.params)?;
    written.push(p);

    if !inputs.fits.is_empty() {
        let p = dir.join("params_local.csv");
        write_params_local(&p, inputs.fits)?;
        written.push(p);
    }

    let p = dir.join("criteria.csv");
    write_criteria(&p, inputs.merged)?;
    written.push(p);

    let p = dir.join("correlation_density.csv");
    if write_correlation_density(&p, &inputs.merged.params)? {
        written.push(p);
    }

    let p = dir.join("summary.txt");
    write_summary(&p, inputs)?;
    written.push(p);

    Ok(written)
}
