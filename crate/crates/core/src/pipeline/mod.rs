//! End-to-end run orchestration.
//!
//! A run takes a graph, a count panel, and a partition plan, fits every
//! subdomain (in parallel), and merges the results. Each finished fit is
//! persisted to disk as soon as it exists, tagged with a fingerprint of the
//! inputs, so a killed run resumes where it stopped: blobs whose fingerprint
//! matches are reloaded, everything else is refit. Fits are seeded per
//! subdomain from the root seed, so outputs do not depend on worker count or
//! scheduling order.

pub mod config;
pub mod ingest;
pub mod report;

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{subgraph, AreaGraph, PartitionPlan};
use crate::inference::{fit_submodel, CountPanel, SubmodelFit};
use crate::merge::{merge_fits, MergeOptions, MergedResult};
use crate::seed::{self, Purpose};

pub use config::{parse_config, PipelineConfig};
pub use ingest::read_counts_csv;

/// Wall-clock record for one subdomain fit.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SubdomainTiming {
    pub subdomain: usize,
    /// Areas in the expanded (overlapping) member set actually fit.
    pub n_areas: usize,
    pub seconds: f64,
    /// True when the fit was reloaded from a previous run instead of redone.
    pub reused: bool,
}

/// Everything a finished run hands back to the caller.
#[derive(Debug)]
pub struct RunOutcome {
    pub merged: MergedResult,
    pub fits: Vec<SubmodelFit>,
    pub timings: Vec<SubdomainTiming>,
    pub workers: usize,
}

/// On-disk wrapper for one persisted fit. The fingerprint covers the graph,
/// the panel, the plan, and the fit configuration; a blob only counts as
/// resumable when all four are unchanged.
#[derive(Serialize, Deserialize)]
struct FitBlob {
    fingerprint: u64,
    subdomain: usize,
    fit: SubmodelFit,
}

/// On-disk wrapper for the merged result, fingerprinted the same way.
#[derive(Serialize, Deserialize)]
pub struct MergedBlob {
    pub fingerprint: u64,
    pub merged: MergedResult,
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn run_fingerprint(
    graph: &AreaGraph,
    panel: &CountPanel,
    plan: &PartitionPlan,
    cfg: &PipelineConfig,
) -> Result<u64> {
    let enc = bincode::serialize(&(graph, panel, plan, &cfg.fit, &cfg.risk_merge))
        .map_err(|e| Error::numeric(format!("could not encode run inputs: {e}")))?;
    Ok(fnv1a(&enc))
}

/// Worker-thread count for a run: the MVRISK_WORKERS environment variable
/// wins, then the config, then the machine's available parallelism.
pub fn resolve_workers(cfg: &PipelineConfig) -> Result<usize> {
    if let Ok(raw) = std::env::var("MVRISK_WORKERS") {
        let n: usize = raw
            .trim()
            .parse()
            .map_err(|_| Error::config(format!("MVRISK_WORKERS is not a thread count: {raw:?}")))?;
        if n == 0 {
            return Err(Error::config("MVRISK_WORKERS must be at least 1"));
        }
        return Ok(n);
    }
    if let Some(n) = cfg.workers {
        return Ok(n);
    }
    Ok(std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1))
}

/// Serialize `value` to `path` via a temporary file and rename, so readers
/// never observe a half-written blob even if the process dies mid-write.
fn save_atomic<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let bytes = bincode::serialize(value)
        .map_err(|e| Error::numeric(format!("could not encode {}: {e}", path.display())))?;
    let tmp = path.with_extension("tmp");
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))?;
    Ok(())
}

fn fit_path(run_dir: &Path, d: usize) -> PathBuf {
    run_dir.join("fits").join(format!("fit_{d:04}.bin"))
}

/// Try to reload a previously persisted fit. Any failure (missing file,
/// truncated bytes, stale fingerprint) just means "refit": resume must never
/// turn a damaged cache into a hard error.
fn load_fit(path: &Path, fingerprint: u64, d: usize) -> Option<SubmodelFit> {
    let bytes = fs::read(path).ok()?;
    let blob: FitBlob = bincode::deserialize(&bytes).ok()?;
    if blob.fingerprint == fingerprint && blob.subdomain == d {
        Some(blob.fit)
    } else {
        None
    }
}

/// Load a persisted merged result, verifying it belongs to these inputs.
pub fn load_merged(
    path: &Path,
    graph: &AreaGraph,
    panel: &CountPanel,
    plan: &PartitionPlan,
    cfg: &PipelineConfig,
) -> Result<MergedResult> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let blob: MergedBlob = bincode::deserialize(&bytes)
        .map_err(|_| Error::input(format!("{} is not a merged-result file", path.display())))?;
    let want = run_fingerprint(graph, panel, plan, cfg)?;
    if blob.fingerprint != want {
        return Err(Error::input(format!(
            "{} was produced from different inputs or settings",
            path.display()
        )));
    }
    Ok(blob.merged)
}

/// Load a persisted merged result without checking what produced it.
pub fn load_merged_unchecked(path: &Path) -> Result<MergedResult> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let blob: MergedBlob = bincode::deserialize(&bytes)
        .map_err(|_| Error::input(format!("{} is not a merged-result file", path.display())))?;
    Ok(blob.merged)
}

/// Collect whatever subdomain fits a run directory still holds, ordered by
/// subdomain index. Used when regenerating reports; unreadable blobs are
/// skipped rather than fatal.
pub fn load_fits_unchecked(run_dir: &Path) -> Vec<SubmodelFit> {
    let fits_dir = run_dir.join("fits");
    let mut found: Vec<(usize, SubmodelFit)> = Vec::new();
    if let Ok(entries) = fs::read_dir(&fits_dir) {
        for entry in entries.flatten() {
            let path = entry.path();
            if path.extension().map(|e| e == "bin") != Some(true) {
                continue;
            }
            if let Ok(bytes) = fs::read(&path) {
                if let Ok(blob) = bincode::deserialize::<FitBlob>(&bytes) {
                    found.push((blob.subdomain, blob.fit));
                }
            }
        }
    }
    found.sort_by_key(|(d, _)| *d);
    found.into_iter().map(|(_, f)| f).collect()
}

fn fit_one(
    d: usize,
    graph: &AreaGraph,
    panel: &CountPanel,
    plan: &PartitionPlan,
    cfg: &PipelineConfig,
    fingerprint: u64,
    run_dir: Option<&Path>,
) -> Result<(SubmodelFit, SubdomainTiming)> {
    let start = Instant::now();
    if let Some(dir) = run_dir {
        if let Some(fit) = load_fit(&fit_path(dir, d), fingerprint, d) {
            let timing = SubdomainTiming {
                subdomain: d,
                n_areas: fit.n_areas,
                seconds: start.elapsed().as_secs_f64(),
                reused: true,
            };
            return Ok((fit, timing));
        }
    }
    let sub = subgraph(graph, &plan.expanded[d])?;
    let sub_panel = panel.restrict(&sub.global_index)?;
    let mut fit_cfg = cfg.fit.clone();
    fit_cfg.seed = seed::derive(cfg.fit.seed, Purpose::Fit, d as u64);
    let mut fit = fit_submodel(&sub.graph, &sub_panel, &fit_cfg).map_err(|e| match e {
        Error::Numeric(msg) => Error::Numeric(format!("subdomain {d}: {msg}")),
        other => other,
    })?;
    fit.area_global = sub.global_index;
    if let Some(dir) = run_dir {
        let blob = FitBlob {
            fingerprint,
            subdomain: d,
            fit: fit.clone(),
        };
        save_atomic(&fit_path(dir, d), &blob)?;
    }
    let timing = SubdomainTiming {
        subdomain: d,
        n_areas: fit.n_areas,
        seconds: start.elapsed().as_secs_f64(),
        reused: false,
    };
    Ok((fit, timing))
}

/// Fit every subdomain of `plan` and merge into full-region results.
///
/// With a `run_dir`, fits are persisted under `fits/`, the merged result is
/// written to `merged.bin`, and a `manifest.json` records what ran; calling
/// again with the same inputs reuses finished fits. With `None`, everything
/// stays in memory.
pub fn run_pipeline(
    graph: &AreaGraph,
    panel: &CountPanel,
    plan: &PartitionPlan,
    cfg: &PipelineConfig,
    run_dir: Option<&Path>,
) -> Result<RunOutcome> {
    if plan.home.len() != graph.n_areas() {
        return Err(Error::input(format!(
            "partition plan covers {} areas but the graph has {}",
            plan.home.len(),
            graph.n_areas()
        )));
    }
    if graph.area_ids() != panel.area_ids.as_slice() {
        return Err(Error::input(
            "graph and count panel disagree on area identity or order",
        ));
    }
    let fingerprint = run_fingerprint(graph, panel, plan, cfg)?;
    if let Some(dir) = run_dir {
        fs::create_dir_all(dir.join("fits")).map_err(|e| Error::io(dir.join("fits"), e))?;
    }
    let workers = resolve_workers(cfg)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::config(format!("could not start {workers} workers: {e}")))?;

    let started = Instant::now();
    let results: Result<Vec<(SubmodelFit, SubdomainTiming)>> = pool.install(|| {
        (0..plan.n_subdomains)
            .into_par_iter()
            .map(|d| fit_one(d, graph, panel, plan, cfg, fingerprint, run_dir))
            .collect()
    });
    let results = results?;
    let (fits, timings): (Vec<_>, Vec<_>) = results.into_iter().unzip();

    let opts = MergeOptions {
        strategy: cfg.risk_merge,
        seed: cfg.fit.seed,
    };
    let merged = merge_fits(plan, &fits, panel, &opts)?;

    if let Some(dir) = run_dir {
        let blob = MergedBlob {
            fingerprint,
            merged: merged.clone(),
        };
        save_atomic(&dir.join("merged.bin"), &blob)?;
        write_manifest(dir, graph, plan, cfg, workers, &timings, started.elapsed().as_secs_f64())?;
    }

    Ok(RunOutcome {
        merged,
        fits,
        timings,
        workers,
    })
}

#[derive(Serialize)]
struct Manifest<'a> {
    n_areas: usize,
    n_edges: usize,
    n_subdomains: usize,
    partition_order: usize,
    workers: usize,
    risk_merge: crate::merge::RiskMerge,
    fit: &'a crate::inference::FitConfig,
    total_seconds: f64,
    subdomains: &'a [SubdomainTiming],
}

fn write_manifest(
    dir: &Path,
    graph: &AreaGraph,
    plan: &PartitionPlan,
    cfg: &PipelineConfig,
    workers: usize,
    timings: &[SubdomainTiming],
    total_seconds: f64,
) -> Result<()> {
    let manifest = Manifest {
        n_areas: graph.n_areas(),
        n_edges: graph.edges().len(),
        n_subdomains: plan.n_subdomains,
        partition_order: plan.order,
        workers,
        risk_merge: cfg.risk_merge,
        fit: &cfg.fit,
        total_seconds,
        subdomains: timings,
    };
    let path = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::numeric(format!("could not encode manifest: {e}")))?;
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{expand_partition, lattice};

    fn small_panel(g: &AreaGraph, j: usize) -> CountPanel {
        let i = g.n_areas();
        let names: Vec<String> = (0..j).map(|d| format!("d{d}")).collect();
        let observed: Vec<u64> = (0..i * j).map(|n| ((n * 13 + 5) % 9) as u64 + 1).collect();
        let expected: Vec<f64> = (0..i * j).map(|n| 3.0 + (n % 5) as f64).collect();
        CountPanel::new(g.area_ids().to_vec(), names, observed, expected).unwrap()
    }

    fn two_block_plan(g: &AreaGraph, cols: usize) -> PartitionPlan {
        // Left half vs right half of the lattice, one-hop overlap.
        let home: Vec<usize> = (0..g.n_areas())
            .map(|i| if i % cols < cols / 2 { 0 } else { 1 })
            .collect();
        expand_partition(g, &home, 1).unwrap()
    }

    fn quick_cfg() -> PipelineConfig {
        let mut cfg = PipelineConfig::default();
        cfg.fit.draws = 40;
        cfg.fit.seed = 11;
        cfg.workers = Some(2);
        cfg
    }

    #[test]
    fn partitioned_run_produces_full_region_results() {
        let g = lattice(4, 4);
        let panel = small_panel(&g, 2);
        let plan = two_block_plan(&g, 4);
        let cfg = quick_cfg();
        let out = run_pipeline(&g, &panel, &plan, &cfg, None).unwrap();
        assert_eq!(out.merged.n_areas, 16);
        assert_eq!(out.merged.risk_draws.len(), 16 * 2 * 40);
        assert_eq!(out.fits.len(), 2);
        assert_eq!(out.timings.len(), 2);
        assert!(out.timings.iter().all(|t| !t.reused));
    }

    #[test]
    fn worker_count_does_not_change_results() {
        let g = lattice(4, 4);
        let panel = small_panel(&g, 2);
        let plan = two_block_plan(&g, 4);
        let mut cfg = quick_cfg();
        cfg.workers = Some(1);
        let serial = run_pipeline(&g, &panel, &plan, &cfg, None).unwrap();
        cfg.workers = Some(4);
        let parallel = run_pipeline(&g, &panel, &plan, &cfg, None).unwrap();
        assert_eq!(serial.merged.risk_draws, parallel.merged.risk_draws);
        assert_eq!(serial.merged.params.values, parallel.merged.params.values);
    }

    #[test]
    fn resume_reuses_fits_and_reproduces_the_run() {
        let g = lattice(4, 4);
        let panel = small_panel(&g, 2);
        let plan = two_block_plan(&g, 4);
        let cfg = quick_cfg();
        let dir = tempfile::tempdir().unwrap();

        let first = run_pipeline(&g, &panel, &plan, &cfg, Some(dir.path())).unwrap();
        assert!(dir.path().join("fits/fit_0000.bin").exists());
        assert!(dir.path().join("merged.bin").exists());
        assert!(dir.path().join("manifest.json").exists());

        // Kill-and-restart: lose one blob, corrupt the other.
        fs::remove_file(dir.path().join("fits/fit_0001.bin")).unwrap();
        let p0 = dir.path().join("fits/fit_0000.bin");
        let bytes = fs::read(&p0).unwrap();
        fs::write(dir.path().join("fits/fit_0000.keep"), &bytes).unwrap();

        let second = run_pipeline(&g, &panel, &plan, &cfg, Some(dir.path())).unwrap();
        assert!(second.timings.iter().any(|t| t.reused));
        assert!(second.timings.iter().any(|t| !t.reused));
        assert_eq!(first.merged.risk_draws, second.merged.risk_draws);

        // Truncated blob: refit silently rather than erroring.
        fs::write(&p0, &bytes[..bytes.len() / 2]).unwrap();
        let third = run_pipeline(&g, &panel, &plan, &cfg, Some(dir.path())).unwrap();
        assert_eq!(first.merged.risk_draws, third.merged.risk_draws);
    }

    #[test]
    fn stale_fingerprint_forces_refit() {
        let g = lattice(4, 4);
        let panel = small_panel(&g, 2);
        let plan = two_block_plan(&g, 4);
        let mut cfg = quick_cfg();
        let dir = tempfile::tempdir().unwrap();
        run_pipeline(&g, &panel, &plan, &cfg, Some(dir.path())).unwrap();

        cfg.fit.seed = 999;
        let rerun = run_pipeline(&g, &panel, &plan, &cfg, Some(dir.path())).unwrap();
        assert!(rerun.timings.iter().all(|t| !t.reused));
    }

    #[test]
    fn merged_blob_round_trips_with_fingerprint_check() {
        let g = lattice(3, 4);
        let panel = small_panel(&g, 2);
        let plan = PartitionPlan::single(g.n_areas());
        let cfg = quick_cfg();
        let dir = tempfile::tempdir().unwrap();
        let out = run_pipeline(&g, &panel, &plan, &cfg, Some(dir.path())).unwrap();

        let loaded =
            load_merged(&dir.path().join("merged.bin"), &g, &panel, &plan, &cfg).unwrap();
        assert_eq!(loaded.risk_draws, out.merged.risk_draws);

        let mut other = cfg.clone();
        other.fit.draws = 41;
        let err = load_merged(&dir.path().join("merged.bin"), &g, &panel, &plan, &other);
        assert!(err.is_err());
    }

    #[test]
    fn single_subdomain_plan_equals_direct_fit() {
        let g = lattice(3, 4);
        let panel = small_panel(&g, 2);
        let plan = PartitionPlan::single(g.n_areas());
        let cfg = quick_cfg();
        let out = run_pipeline(&g, &panel, &plan, &cfg, None).unwrap();

        let mut fit_cfg = cfg.fit.clone();
        fit_cfg.seed = seed::derive(cfg.fit.seed, Purpose::Fit, 0);
        let direct = fit_submodel(&g, &panel, &fit_cfg).unwrap();
        assert_eq!(out.merged.risk_draws, direct.risk_draws);
        assert_eq!(out.merged.params.values, direct.params.values);
    }
}
