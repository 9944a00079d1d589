//! Command-line front end: fit, merge, simulate, score, report.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use mvrisk::error::{Error, Result};
use mvrisk::graph::{build_graph, expand_partition, lattice, parse_edge_list, parse_partition, AreaGraph, PartitionPlan};
use mvrisk::inference::CountPanel;
use mvrisk::merge::RiskMerge;
use mvrisk::pipeline::report::{write_reports, ReportInputs};
use mvrisk::pipeline::{
    load_fits_unchecked, load_merged_unchecked, parse_config, read_counts_csv, run_pipeline,
    PipelineConfig,
};
use mvrisk::simulate::{score_merged, ScenarioSpec, Simulator};

#[derive(Parser)]
#[command(
    name = "mvrisk",
    version,
    about = "Joint smoothing of disease risks over areal maps",
    long_about = "Fits multivariate Poisson models with spatially correlated random effects, \
                  either over the whole map at once or over a partition whose subdomain \
                  posteriors are merged afterwards."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum MergeArg {
    Ownership,
    Mixture,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScenarioArg {
    /// One covariance matrix shared across the whole map.
    Shared,
    /// Correlations that change from region to region.
    Regional,
}

/// Options shared by the two fitting commands.
#[derive(Args)]
struct FitArgs {
    /// Edge-list file: `label<TAB>label` per line, single labels for
    /// isolated areas, `#` comments.
    #[arg(long)]
    graph: PathBuf,
    /// Long-format counts CSV with area, disease, observed and either
    /// expected or age_group + population columns.
    #[arg(long)]
    counts: PathBuf,
    /// Optional `key = value` config file with [model], [partition] and
    /// [pipeline] sections.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run directory; fits and results are persisted here and reused on
    /// rerun when inputs are unchanged.
    #[arg(long)]
    out: PathBuf,
    /// Override the number of posterior draws.
    #[arg(long)]
    draws: Option<usize>,
    /// Override the root seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the worker thread count.
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the whole map as a single domain.
    FitGlobal(FitArgs),
    /// Fit the subdomains of a partition in parallel, then merge.
    FitPartition {
        #[command(flatten)]
        common: FitArgs,
        /// Partition file: `label<TAB>subdomain` per line.
        #[arg(long)]
        partition: PathBuf,
        /// Override the neighbourhood expansion order.
        #[arg(long)]
        order: Option<usize>,
        /// Override how per-area posteriors are combined.
        #[arg(long, value_enum)]
        merge: Option<MergeArg>,
    },
    /// Regenerate report files from a finished run directory.
    Report {
        /// Run directory holding merged.bin (and optionally fits/).
        #[arg(long)]
        run: PathBuf,
    },
    /// Generate a synthetic data set with known truth.
    Simulate {
        #[arg(long, value_enum)]
        scenario: ScenarioArg,
        #[arg(long, default_value_t = 20)]
        rows: usize,
        #[arg(long, default_value_t = 20)]
        cols: usize,
        /// Region side length for the regional scenario.
        #[arg(long, default_value_t = 10)]
        block: usize,
        /// Home tiles per axis in the emitted partition file.
        #[arg(long, default_value_t = 2)]
        tiles: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Replicate index; different replicates share the truth recipe but
        /// draw fresh fields and counts.
        #[arg(long, default_value_t = 0)]
        replicate: u64,
        /// Output directory for graph.tsv, counts.csv, partition.tsv and
        /// the truth files.
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a finished run against simulation truth.
    Score {
        /// Run directory holding merged.bin.
        #[arg(long)]
        run: PathBuf,
        /// Directory with truth_risks.csv and truth_params.csv, as written
        /// by `simulate`.
        #[arg(long)]
        truth: PathBuf,
    },
    /// Write a rook-adjacency lattice edge list (for demos and tests).
    Lattice {
        #[arg(long)]
        rows: usize,
        #[arg(long)]
        cols: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn load_graph(path: &Path) -> Result<AreaGraph> {
    let text = read_to_string(path)?;
    let (edges, labels) = parse_edge_list(&text)?;
    build_graph(&edges, &labels)
}

fn load_config(path: Option<&Path>) -> Result<PipelineConfig> {
    match path {
        Some(p) => parse_config(&read_to_string(p)?),
        None => Ok(PipelineConfig::default()),
    }
}

fn apply_overrides(cfg: &mut PipelineConfig, args: &FitArgs) {
    if let Some(d) = args.draws {
        cfg.fit.draws = d;
    }
    if let Some(s) = args.seed {
        cfg.fit.seed = s;
    }
    if let Some(w) = args.workers {
        cfg.workers = Some(w);
    }
}

fn run_and_report(
    graph: &AreaGraph,
    panel: &CountPanel,
    plan: &PartitionPlan,
    cfg: &PipelineConfig,
    out: &Path,
) -> Result<()> {
    let outcome = run_pipeline(graph, panel, plan, cfg, Some(out))?;
    let inputs = ReportInputs {
        merged: &outcome.merged,
        fits: &outcome.fits,
        timings: &outcome.timings,
        workers: Some(outcome.workers),
    };
    let written = write_reports(&out.join("reports"), &inputs)?;
    println!(
        "fit {} areas x {} diseases over {} subdomain(s) with {} worker(s)",
        outcome.merged.n_areas,
        outcome.merged.n_diseases,
        plan.n_subdomains,
        outcome.workers
    );
    println!(
        "DIC {:.3}  WAIC {:.3}  (p_d {:.2}, p_waic {:.2})",
        outcome.merged.criteria.dic,
        outcome.merged.criteria.waic,
        outcome.merged.criteria.p_d,
        outcome.merged.criteria.p_waic
    );
    for w in &outcome.merged.warnings {
        eprintln!("warning: {w}");
    }
    for p in written {
        println!("wrote {}", p.display());
    }
    Ok(())
}

fn cmd_fit_global(args: FitArgs) -> Result<()> {
    let graph = load_graph(&args.graph)?;
    let panel = read_counts_csv(&args.counts, &graph)?;
    let mut cfg = load_config(args.config.as_deref())?;
    apply_overrides(&mut cfg, &args);
    let plan = PartitionPlan::single(graph.n_areas());
    run_and_report(&graph, &panel, &plan, &cfg, &args.out)
}

fn cmd_fit_partition(
    common: FitArgs,
    partition: PathBuf,
    order: Option<usize>,
    merge: Option<MergeArg>,
) -> Result<()> {
    let graph = load_graph(&common.graph)?;
    let panel = read_counts_csv(&common.counts, &graph)?;
    let mut cfg = load_config(common.config.as_deref())?;
    apply_overrides(&mut cfg, &common);
    if let Some(k) = order {
        cfg.partition_order = k;
    }
    if let Some(m) = merge {
        cfg.risk_merge = match m {
            MergeArg::Ownership => RiskMerge::Ownership,
            MergeArg::Mixture => RiskMerge::Mixture,
        };
    }
    let home = parse_partition(&read_to_string(&partition)?, &graph)?;
    let plan = expand_partition(&graph, &home, cfg.partition_order)?;
    run_and_report(&graph, &panel, &plan, &cfg, &common.out)
}

fn cmd_report(run: PathBuf) -> Result<()> {
    let merged = load_merged_unchecked(&run.join("merged.bin"))?;
    let fits = load_fits_unchecked(&run);
    let inputs = ReportInputs {
        merged: &merged,
        fits: &fits,
        timings: &[],
        workers: None,
    };
    for p in write_reports(&run.join("reports"), &inputs)? {
        println!("wrote {}", p.display());
    }
    Ok(())
}

fn write_edge_list(path: &Path, graph: &AreaGraph) -> Result<()> {
    use std::fmt::Write as _;
    let mut text = String::new();
    // Declare every label first so parsers index areas in panel order even
    // when early areas only appear on the right side of an edge.
    for id in graph.area_ids() {
        let _ = writeln!(text, "{id}");
    }
    for &(a, b) in graph.edges() {
        let _ = writeln!(text, "{}\t{}", graph.area_ids()[a], graph.area_ids()[b]);
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_tile_partition(path: &Path, rows: usize, cols: usize, tiles: usize) -> Result<()> {
    use std::fmt::Write as _;
    let tiles = tiles.max(1);
    let tr = rows.div_ceil(tiles);
    let tc = cols.div_ceil(tiles);
    let mut text = String::new();
    for r in 0..rows {
        for c in 0..cols {
            let sub = (r / tr) * tiles + c / tc;
            let _ = writeln!(text, "r{r}c{c}\ts{sub}");
        }
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn cmd_simulate(
    scenario: ScenarioArg,
    rows: usize,
    cols: usize,
    block: usize,
    tiles: usize,
    seed: u64,
    replicate: u64,
    out: PathBuf,
) -> Result<()> {
    let spec = match scenario {
        ScenarioArg::Shared => ScenarioSpec::shared_covariance(rows, cols),
        ScenarioArg::Regional => ScenarioSpec::regional_correlations(rows, cols, block),
    };
    let sim = Simulator::new(&spec)?;
    let rep = sim.replicate(seed, replicate)?;
    fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;

    write_edge_list(&out.join("graph.tsv"), &sim.graph)?;
    write_tile_partition(&out.join("partition.tsv"), rows, cols, tiles)?;

    let counts_path = out.join("counts.csv");
    let f = fs::File::create(&counts_path).map_err(|e| Error::io(&counts_path, e))?;
    let mut w = csv::Writer::from_writer(f);
    let io_err = |e: csv::Error| Error::input(format!("{}: {e}", counts_path.display()));
    w.write_record(["area", "disease", "observed", "expected"]).map_err(io_err)?;
    let panel = &rep.panel;
    for j in 0..panel.n_diseases {
        for i in 0..panel.n_areas {
            w.write_record([
                panel.area_ids[i].as_str(),
                panel.disease_names[j].as_str(),
                &panel.observed()[j * panel.n_areas + i].to_string(),
                &format!("{:.6}", panel.expected()[j * panel.n_areas + i]),
            ])
            .map_err(io_err)?;
        }
    }
    w.flush().map_err(|e| Error::io(&counts_path, e))?;

    let risks_path = out.join("truth_risks.csv");
    let f = fs::File::create(&risks_path).map_err(|e| Error::io(&risks_path, e))?;
    let mut w = csv::Writer::from_writer(f);
    let io_err = |e: csv::Error| Error::input(format!("{}: {e}", risks_path.display()));
    w.write_record(["area", "disease", "risk"]).map_err(io_err)?;
    for j in 0..panel.n_diseases {
        for i in 0..panel.n_areas {
            w.write_record([
                panel.area_ids[i].as_str(),
                panel.disease_names[j].as_str(),
                &format!("{:.12}", rep.truth_risks[j * panel.n_areas + i]),
            ])
            .map_err(io_err)?;
        }
    }
    w.flush().map_err(|e| Error::io(&risks_path, e))?;

    let params_path = out.join("truth_params.csv");
    let f = fs::File::create(&params_path).map_err(|e| Error::io(&params_path, e))?;
    let mut w = csv::Writer::from_writer(f);
    let io_err = |e: csv::Error| Error::input(format!("{}: {e}", params_path.display()));
    w.write_record(["parameter", "value"]).map_err(io_err)?;
    for (name, value) in &rep.truth_params {
        w.write_record([name.as_str(), &format!("{value:.12}")]).map_err(io_err)?;
    }
    w.flush().map_err(|e| Error::io(&params_path, e))?;

    println!(
        "simulated {} ({} x {} areas, {} diseases, seed {seed}, replicate {replicate})",
        spec.name, rows, cols, spec.disease_names.len()
    );
    for name in ["graph.tsv", "counts.csv", "partition.tsv", "truth_risks.csv", "truth_params.csv"]
    {
        println!("wrote {}", out.join(name).display());
    }
    Ok(())
}

fn read_truth_risks(path: &Path) -> Result<HashMap<(String, String), f64>> {
    let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(f);
    let mut out = HashMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::input(format!("{}: {e}", path.display())))?;
        let (area, disease, risk) = match (rec.get(0), rec.get(1), rec.get(2)) {
            (Some(a), Some(d), Some(r)) => (a, d, r),
            _ => return Err(Error::input(format!("{}: expected area,disease,risk rows", path.display()))),
        };
        let value: f64 = risk
            .parse()
            .map_err(|_| Error::input(format!("{}: bad risk value {risk:?}", path.display())))?;
        out.insert((area.to_string(), disease.to_string()), value);
    }
    Ok(out)
}

fn read_truth_params(path: &Path) -> Result<Vec<(String, f64)>> {
    let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(f);
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::input(format!("{}: {e}", path.display())))?;
        let (name, value) = match (rec.get(0), rec.get(1)) {
            (Some(n), Some(v)) => (n, v),
            _ => return Err(Error::input(format!("{}: expected parameter,value rows", path.display()))),
        };
        let value: f64 = value
            .parse()
            .map_err(|_| Error::input(format!("{}: bad value {value:?}", path.display())))?;
        out.push((name.to_string(), value));
    }
    Ok(out)
}

fn cmd_score(run: PathBuf, truth: PathBuf) -> Result<()> {
    let merged = load_merged_unchecked(&run.join("merged.bin"))?;
    let risk_map = read_truth_risks(&truth.join("truth_risks.csv"))?;
    let truth_params = read_truth_params(&truth.join("truth_params.csv"))?;

    let mut truth_risks = Vec::with_capacity(merged.n_areas * merged.n_diseases);
    for j in 0..merged.n_diseases {
        for i in 0..merged.n_areas {
            let key = (merged.area_ids[i].clone(), merged.disease_names[j].clone());
            let r = risk_map.get(&key).ok_or_else(|| {
                Error::input(format!(
                    "truth file has no risk for area {:?}, disease {:?}",
                    key.0, key.1
                ))
            })?;
            truth_risks.push(*r);
        }
    }

    let report = score_merged(&merged, &truth_risks, &truth_params)?;

    let path = run.join("reports").join("accuracy.csv");
    fs::create_dir_all(path.parent().unwrap()).map_err(|e| Error::io(path.parent().unwrap(), e))?;
    let f = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    let mut w = csv::Writer::from_writer(f);
    let io_err = |e: csv::Error| Error::input(format!("{}: {e}", path.display()));
    w.write_record(["measure", "value"]).map_err(io_err)?;
    w.write_record(["marb", &format!("{:.6}", report.marb)]).map_err(io_err)?;
    w.write_record(["mrrmse", &format!("{:.6}", report.mrrmse)]).map_err(io_err)?;
    w.write_record(["param_coverage", &format!("{:.6}", report.param_coverage)]).map_err(io_err)?;
    w.write_record(["params_covered", &report.params_covered.to_string()]).map_err(io_err)?;
    w.write_record(["params_total", &report.params_total.to_string()]).map_err(io_err)?;
    w.flush().map_err(|e| Error::io(&path, e))?;

    println!(
        "MARB {:.4}  MRRMSE {:.4}  parameter coverage {}/{}",
        report.marb, report.mrrmse, report.params_covered, report.params_total
    );
    println!("wrote {}", path.display());
    Ok(())
}

fn cmd_lattice(rows: usize, cols: usize, out: PathBuf) -> Result<()> {
    let g = lattice(rows, cols);
    write_edge_list(&out, &g)?;
    println!("wrote {} ({} areas, {} edges)", out.display(), g.n_areas(), g.edges().len());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::FitGlobal(args) => cmd_fit_global(args),
        Command::FitPartition {
            common,
            partition,
            order,
            merge,
        } => cmd_fit_partition(common, partition, order, merge),
        Command::Report { run } => cmd_report(run),
        Command::Simulate {
            scenario,
            rows,
            cols,
            block,
            tiles,
            seed,
            replicate,
            out,
        } => cmd_simulate(scenario, rows, cols, block, tiles, seed, replicate, out),
        Command::Score { run, truth } => cmd_score(run, truth),
        Command::Lattice { rows, cols, out } => cmd_lattice(rows, cols, out),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
