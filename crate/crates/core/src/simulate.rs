//! Synthetic panels with known truth, for calibration and accuracy studies.
//!
//! Spatial fields are drawn from the model's own prior: vec(Theta) is
//! normal with covariance Sigma_b (x) Q^+, realized through the dense
//! eigendecomposition of the structure matrix (sums over each component
//! are zero by construction because positive-eigenvalue eigenvectors are
//! orthogonal to the component indicators). Counts are Poisson with mean
//! E exp(alpha + theta).
//!
//! Two preset families cover the situations the pipeline is built for:
//!
//! * a shared between-disease covariance over the whole domain, the
//!   setting where a single global fit is well specified, and
//! * region-varying correlations on a lattice of rectangular blocks, where
//!   only a partitioned fit can adapt and a global fit is misspecified.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::cov::BetweenDiseaseCov;
use crate::error::{Error, Result};
use crate::graph::{lattice, structure_matrix, subgraph, AreaGraph, StructureMatrix};
use crate::inference::CountPanel;
use crate::merge::MergedResult;
use crate::seed::{self, Purpose};
use crate::stats::quantile_sorted;

/// Largest domain for which the dense eigendecomposition is attempted.
const MAX_EIGEN_AREAS: usize = 5000;

/// Per-disease baseline expected counts, close to registry data for a
/// frequent, a moderate and a rare cause.
const BASELINE_EXPECTED: [f64; 3] = [20.6, 10.5, 4.2];

/// Correlation triples (rho_12, rho_13, rho_23) cycled over regions in the
/// region-varying preset; shipped alongside the crate and embedded here.
pub fn region_correlation_presets() -> Vec<[f64; 3]> {
    let text = include_str!("../data/region_correlation_presets.csv");
    let mut out = Vec::new();
    for line in text.lines().skip(1) {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() == 4 {
            out.push([
                fields[1].parse().expect("shipped preset parses"),
                fields[2].parse().expect("shipped preset parses"),
                fields[3].parse().expect("shipped preset parses"),
            ]);
        }
    }
    assert_eq!(out.len(), 15);
    out
}

/// What varies across the domain in a scenario.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum TruthSpec {
    /// One covariance for the whole domain.
    Shared { sigma2: Vec<f64>, rho: Vec<f64> },
    /// Block-wise regions, each with its own correlation triple; variances
    /// shared. `block` divides both lattice dimensions.
    Regional { sigma2: Vec<f64>, block: usize },
}

/// A complete recipe for generating replicated synthetic panels.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub disease_names: Vec<String>,
    pub alpha: Vec<f64>,
    /// Expected count per disease, constant over areas.
    pub expected_per_disease: Vec<f64>,
    pub truth: TruthSpec,
}

impl ScenarioSpec {
    /// Three diseases, one covariance everywhere: variances
    /// (0.25, 0.16, 0.09) and correlations (0.70, 0.50, 0.10).
    pub fn shared_covariance(rows: usize, cols: usize) -> ScenarioSpec {
        ScenarioSpec {
            name: "shared".into(),
            rows,
            cols,
            disease_names: vec!["d1".into(), "d2".into(), "d3".into()],
            alpha: vec![0.0, 0.0, 0.0],
            expected_per_disease: BASELINE_EXPECTED.to_vec(),
            truth: TruthSpec::Shared {
                sigma2: vec![0.25, 0.16, 0.09],
                rho: vec![0.70, 0.50, 0.10],
            },
        }
    }

    /// Three diseases, shared variances (0.5, 0.4, 0.3), correlations
    /// cycling through the shipped presets over `block` x `block` regions.
    pub fn regional_correlations(rows: usize, cols: usize, block: usize) -> ScenarioSpec {
        ScenarioSpec {
            name: "regional".into(),
            rows,
            cols,
            disease_names: vec!["d1".into(), "d2".into(), "d3".into()],
            alpha: vec![-0.20, -0.10, 0.10],
            expected_per_disease: BASELINE_EXPECTED.to_vec(),
            truth: TruthSpec::Regional {
                sigma2: vec![0.5, 0.4, 0.3],
                block,
            },
        }
    }

    pub fn n_diseases(&self) -> usize {
        self.disease_names.len()
    }
}

/// Zero-mean draws from N(0, Q^+) per disease, through the positive
/// eigenpairs of the structure matrix.
pub struct ThetaSampler {
    n: usize,
    /// (1/sqrt(lambda), eigenvector) for every positive eigenvalue.
    modes: Vec<(f64, Vec<f64>)>,
}

impl ThetaSampler {
    pub fn new(q: &StructureMatrix) -> Result<Self> {
        let n = q.q.rows();
        if n > MAX_EIGEN_AREAS {
            return Err(Error::config(format!(
                "field simulation uses a dense eigendecomposition; {n} areas exceeds the \
                 {MAX_EIGEN_AREAS}-area limit"
            )));
        }
        let dense = q.q.to_dense();
        let qd = DMatrix::from_fn(n, n, |r, c| dense[[r, c]]);
        let eig = qd.symmetric_eigen();
        let lmax = eig.eigenvalues.iter().fold(1.0f64, |a, &b| a.max(b));
        let tol = 1e-9 * lmax;
        let mut modes = Vec::new();
        for m in 0..n {
            let lambda = eig.eigenvalues[m];
            if lambda > tol {
                let v: Vec<f64> = (0..n).map(|i| eig.eigenvectors[(i, m)]).collect();
                modes.push((1.0 / lambda.sqrt(), v));
            }
        }
        if modes.len() != n - q.components.len() {
            return Err(Error::numeric(
                "eigenvalue split does not match the component count",
            ));
        }
        Ok(ThetaSampler { n, modes })
    }

    /// One joint field for all diseases, disease-major. `chol_l` is the
    /// lower Cholesky factor of the between-disease covariance.
    pub fn sample<R: Rng>(&self, chol_l: &DMatrix<f64>, rng: &mut R) -> Vec<f64> {
        let j = chol_l.nrows();
        let mut theta = vec![0.0; self.n * j];
        let mut z = vec![0.0; j];
        for (inv_sqrt_lambda, v) in &self.modes {
            for zd in z.iter_mut() {
                *zd = rng.sample(StandardNormal);
            }
            for d in 0..j {
                let mut w = 0.0;
                for e in 0..=d {
                    w += chol_l[(d, e)] * z[e];
                }
                let c = w * inv_sqrt_lambda;
                for i in 0..self.n {
                    theta[d * self.n + i] += c * v[i];
                }
            }
        }
        theta
    }
}

/// A generated replicate: the observable panel plus everything the
/// generator knew.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimulatedPanel {
    pub panel: CountPanel,
    /// True relative risks exp(alpha + theta), disease-major.
    pub truth_risks: Vec<f64>,
    pub truth_theta: Vec<f64>,
    pub truth_alpha: Vec<f64>,
    /// Named truth for globally shared parameters, aligned with fit
    /// parameter names; empty when the truth varies regionally.
    pub truth_params: Vec<(String, f64)>,
}

/// Reusable generator: the eigendecompositions are done once, replicates
/// are cheap.
pub struct Simulator {
    pub spec: ScenarioSpec,
    pub graph: AreaGraph,
    /// (global indices, sampler, covariance Cholesky) per field region.
    regions: Vec<(Vec<usize>, ThetaSampler, DMatrix<f64>)>,
    truth_params: Vec<(String, f64)>,
}

impl Simulator {
    pub fn new(spec: &ScenarioSpec) -> Result<Self> {
        let j = spec.n_diseases();
        if spec.alpha.len() != j || spec.expected_per_disease.len() != j {
            return Err(Error::config(
                "scenario disease names, intercepts and expected counts disagree",
            ));
        }
        let graph = lattice(spec.rows, spec.cols);
        let mut regions = Vec::new();
        let mut truth_params = Vec::new();
        match &spec.truth {
            TruthSpec::Shared { sigma2, rho } => {
                let cov = shared_cov(sigma2, rho, j)?;
                let q = structure_matrix(&graph);
                let sampler = ThetaSampler::new(&q)?;
                let l = cov
                    .cov
                    .clone()
                    .cholesky()
                    .ok_or_else(|| Error::config("scenario covariance not positive definite"))?
                    .l();
                regions.push(((0..graph.n_areas()).collect(), sampler, l));
                for d in 0..j {
                    truth_params.push((format!("sigma2_{}", spec.disease_names[d]), sigma2[d]));
                }
                let mut k = 0;
                for a in 0..j {
                    for b in (a + 1)..j {
                        truth_params.push((
                            format!("rho_{}_{}", spec.disease_names[a], spec.disease_names[b]),
                            rho[k],
                        ));
                        k += 1;
                    }
                }
            }
            TruthSpec::Regional { sigma2, block } => {
                if j != 3 {
                    return Err(Error::config(
                        "regional correlation presets are triples; the scenario needs 3 diseases",
                    ));
                }
                let b = *block;
                if b == 0 || spec.rows % b != 0 || spec.cols % b != 0 {
                    return Err(Error::config(format!(
                        "block size {b} must divide the {}x{} lattice",
                        spec.rows, spec.cols
                    )));
                }
                let presets = region_correlation_presets();
                let blocks_per_row = spec.cols / b;
                let n_regions = (spec.rows / b) * blocks_per_row;
                for reg in 0..n_regions {
                    let (br, bc) = (reg / blocks_per_row, reg % blocks_per_row);
                    let mut members = Vec::with_capacity(b * b);
                    for r in 0..b {
                        for c in 0..b {
                            members.push((br * b + r) * spec.cols + (bc * b + c));
                        }
                    }
                    let sub = subgraph(&graph, &members)?;
                    let q = structure_matrix(&sub.graph);
                    let sampler = ThetaSampler::new(&q)?;
                    let triple = presets[reg % presets.len()];
                    let mut rho = DMatrix::identity(3, 3);
                    rho[(0, 1)] = triple[0];
                    rho[(1, 0)] = triple[0];
                    rho[(0, 2)] = triple[1];
                    rho[(2, 0)] = triple[1];
                    rho[(1, 2)] = triple[2];
                    rho[(2, 1)] = triple[2];
                    let cov = BetweenDiseaseCov::from_parts(sigma2, &rho)?;
                    let l = cov
                        .cov
                        .clone()
                        .cholesky()
                        .ok_or_else(|| {
                            Error::config("regional covariance not positive definite")
                        })?
                        .l();
                    regions.push((sub.global_index, sampler, l));
                }
            }
        }
        Ok(Simulator {
            spec: spec.clone(),
            graph,
            regions,
            truth_params,
        })
    }

    /// Generate replicate `rep` under `root_seed`. Fields and counts use
    /// separate derived streams, so the same field can be re-dressed with
    /// fresh counts and replicates are independent of evaluation order.
    pub fn replicate(&self, root_seed: u64, rep: u64) -> Result<SimulatedPanel> {
        let spec = &self.spec;
        let i = self.graph.n_areas();
        let j = spec.n_diseases();

        let mut field_rng = seed::rng(root_seed, Purpose::SimField, rep);
        let mut theta = vec![0.0f64; i * j];
        for (members, sampler, chol_l) in &self.regions {
            let local = sampler.sample(chol_l, &mut field_rng);
            for d in 0..j {
                for (li, &gi) in members.iter().enumerate() {
                    theta[d * i + gi] = local[d * members.len() + li];
                }
            }
        }

        let mut risks = vec![0.0f64; i * j];
        let mut expected = vec![0.0f64; i * j];
        for d in 0..j {
            for a in 0..i {
                risks[d * i + a] = (spec.alpha[d] + theta[d * i + a]).exp();
                expected[d * i + a] = spec.expected_per_disease[d];
            }
        }

        let mut count_rng = seed::rng(root_seed, Purpose::SimCounts, rep);
        let mut observed = vec![0u64; i * j];
        for n in 0..i * j {
            let mu = expected[n] * risks[n];
            let pois = Poisson::new(mu)
                .map_err(|_| Error::numeric(format!("invalid Poisson mean {mu}")))?;
            observed[n] = pois.sample(&mut count_rng) as u64;
        }

        let panel = CountPanel::new(
            self.graph.area_ids().to_vec(),
            spec.disease_names.clone(),
            observed,
            expected,
        )?;
        Ok(SimulatedPanel {
            panel,
            truth_risks: risks,
            truth_theta: theta,
            truth_alpha: spec.alpha.clone(),
            truth_params: self.truth_params.clone(),
        })
    }
}

fn shared_cov(sigma2: &[f64], rho: &[f64], j: usize) -> Result<BetweenDiseaseCov> {
    if sigma2.len() != j || rho.len() != j * (j - 1) / 2 {
        return Err(Error::config("scenario variance/correlation lengths disagree"));
    }
    let mut rho_m = DMatrix::identity(j, j);
    let mut k = 0;
    for a in 0..j {
        for b in (a + 1)..j {
            rho_m[(a, b)] = rho[k];
            rho_m[(b, a)] = rho[k];
            k += 1;
        }
    }
    BetweenDiseaseCov::from_parts(sigma2, &rho_m)
}

/// Risk-recovery and coverage measures for one fitted replicate. Point
/// estimates are posterior medians; multi-replicate studies aggregate the
/// per-cell relative errors across replicates before averaging.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AccuracyReport {
    /// Mean over cells of |median - truth| / truth.
    pub marb: f64,
    /// Root mean square over cells of (median - truth) / truth.
    pub mrrmse: f64,
    /// Fraction of named truth parameters inside their central 95%
    /// posterior interval; NaN when the scenario has no shared truth.
    pub param_coverage: f64,
    pub params_covered: usize,
    pub params_total: usize,
}

/// Score a merged (or single-fit) result against the generating truth:
/// `truth_risks` disease-major in the result's area order, `truth_params`
/// named like the fit parameters.
pub fn score_merged(
    result: &MergedResult,
    truth_risks: &[f64],
    truth_params: &[(String, f64)],
) -> Result<AccuracyReport> {
    let cells = result.n_areas * result.n_diseases;
    if truth_risks.len() != cells {
        return Err(Error::input("truth and result cover different cells"));
    }
    let s = result.n_draws;
    let mut marb = 0.0;
    let mut mrrmse = 0.0;
    for n in 0..cells {
        let r_true = truth_risks[n];
        let mut col: Vec<f64> = (0..s).map(|draw| result.risk_draws[draw * cells + n]).collect();
        col.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let med = quantile_sorted(&col, 0.5);
        let rel = (med - r_true) / r_true;
        marb += rel.abs();
        mrrmse += rel * rel;
    }
    marb /= cells as f64;
    mrrmse = (mrrmse / cells as f64).sqrt();

    let mut covered = 0usize;
    let mut total = 0usize;
    for (name, value) in truth_params {
        if let Some(k) = result.params.index_of(name) {
            let mut col = result.params.column(k);
            col.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let lo = quantile_sorted(&col, 0.025);
            let hi = quantile_sorted(&col, 0.975);
            total += 1;
            if *value >= lo && *value <= hi {
                covered += 1;
            }
        }
    }
    Ok(AccuracyReport {
        marb,
        mrrmse,
        param_coverage: if total > 0 {
            covered as f64 / total as f64
        } else {
            f64::NAN
        },
        params_covered: covered,
        params_total: total,
    })
}
