//! Model fitting: Laplace-approximated posterior for one (sub)domain.
//!
//! The entry point is [`fit_submodel`]: given an areal graph and a panel of
//! observed/expected counts it maximizes the hyperparameter posterior,
//! approximates the posterior covariance at the mode, and draws joint
//! samples of (hyperparameters, intercepts, spatial effects) from which
//! all reported quantities are computed.

pub(crate) mod factor;
mod laplace;
mod newton;
mod summaries;

use serde::{Deserialize, Serialize};

use crate::cov::HyperState;
use crate::error::{Error, Result};

pub use laplace::fit_submodel;
pub use summaries::{cpo_cells, risk_summaries, RiskSummary};

/// Observed and expected counts for every (area, disease) cell, stored
/// disease-major: index `j * n_areas + i`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CountPanel {
    pub n_areas: usize,
    pub n_diseases: usize,
    pub area_ids: Vec<String>,
    pub disease_names: Vec<String>,
    observed: Vec<u64>,
    expected: Vec<f64>,
}

impl CountPanel {
    pub fn new(
        area_ids: Vec<String>,
        disease_names: Vec<String>,
        observed: Vec<u64>,
        expected: Vec<f64>,
    ) -> Result<Self> {
        let i = area_ids.len();
        let j = disease_names.len();
        if i == 0 || j == 0 {
            return Err(Error::input("count panel needs at least one area and one disease"));
        }
        if observed.len() != i * j || expected.len() != i * j {
            return Err(Error::input(format!(
                "count panel is {} areas x {} diseases but has {} observed / {} expected cells",
                i,
                j,
                observed.len(),
                expected.len()
            )));
        }
        for (k, &e) in expected.iter().enumerate() {
            if !e.is_finite() || e <= 0.0 {
                return Err(Error::input(format!(
                    "expected count for area {:?}, disease {:?} is {}; must be finite and positive",
                    area_ids[k % i],
                    disease_names[k / i],
                    e
                )));
            }
        }
        let mut sorted = disease_names.clone();
        sorted.sort();
        sorted.dedup();
        if sorted.len() != j {
            return Err(Error::input("duplicate disease name in count panel"));
        }
        Ok(CountPanel {
            n_areas: i,
            n_diseases: j,
            area_ids,
            disease_names,
            observed,
            expected,
        })
    }

    pub fn observed(&self) -> &[u64] {
        &self.observed
    }

    pub fn expected(&self) -> &[f64] {
        &self.expected
    }

    pub fn cell(&self, disease: usize, area: usize) -> usize {
        disease * self.n_areas + area
    }

    /// Panel restricted to a subset of areas (same diseases), given by
    /// indices into this panel's area order.
    pub fn restrict(&self, keep: &[usize]) -> Result<CountPanel> {
        let mut area_ids = Vec::with_capacity(keep.len());
        for &i in keep {
            if i >= self.n_areas {
                return Err(Error::input(format!("area index {i} out of range")));
            }
            area_ids.push(self.area_ids[i].clone());
        }
        let mut observed = Vec::with_capacity(keep.len() * self.n_diseases);
        let mut expected = Vec::with_capacity(keep.len() * self.n_diseases);
        for j in 0..self.n_diseases {
            for &i in keep {
                observed.push(self.observed[self.cell(j, i)]);
                expected.push(self.expected[self.cell(j, i)]);
            }
        }
        CountPanel::new(area_ids, self.disease_names.clone(), observed, expected)
    }
}

/// Tuning knobs for one model fit. Defaults are sensible for panels up to a
/// few thousand areas.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct FitConfig {
    /// Posterior draws kept after mode finding.
    pub draws: usize,
    /// Degrees of freedom of the covariance prior; `None` means J + 2.
    pub dof: Option<f64>,
    pub newton_tol: f64,
    pub newton_max_iter: usize,
    pub hyper_tol: f64,
    pub hyper_max_iter: usize,
    /// Seed for the posterior sampling stream.
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            draws: 1000,
            dof: None,
            newton_tol: 1e-8,
            newton_max_iter: 50,
            hyper_tol: 1e-5,
            hyper_max_iter: 200,
            seed: 0,
        }
    }
}

/// Posterior mode of the latent part: intercepts and spatial effects at the
/// hyperparameter mode.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LatentState {
    pub alpha: Vec<f64>,
    /// Spatial effects, disease-major, each (disease, component) block
    /// summing to zero.
    pub u: Vec<f64>,
}

/// Named scalar parameter draws, draw-major: `values[s * names.len() + k]`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParamDraws {
    pub names: Vec<String>,
    pub n_draws: usize,
    pub values: Vec<f64>,
}

impl ParamDraws {
    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn column(&self, k: usize) -> Vec<f64> {
        (0..self.n_draws)
            .map(|s| self.values[s * self.names.len() + k])
            .collect()
    }
}

/// Convergence and stability record for one fit.
#[derive(Debug, Clone, Serialize, Deserialize, Default)]
pub struct FitDiagnostics {
    pub hyper_iterations: usize,
    pub hyper_evals: usize,
    pub hyper_grad_norm: f64,
    /// Log posterior (up to the model's fixed constants) at the mode.
    pub objective_at_mode: f64,
    pub newton_iterations_at_mode: usize,
    pub n_components: usize,
    pub sample_retries: usize,
    pub elapsed_secs: f64,
    pub warnings: Vec<String>,
}

/// Everything produced by fitting the model on one (sub)domain.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SubmodelFit {
    pub area_ids: Vec<String>,
    pub disease_names: Vec<String>,
    /// Positions of this fit's areas in the full study region; identity for
    /// a global fit, set by the caller when fitting a subdomain.
    pub area_global: Vec<usize>,
    pub n_areas: usize,
    pub n_diseases: usize,
    pub observed: Vec<u64>,
    pub expected: Vec<f64>,
    pub hyper_mode: HyperState,
    pub hyper_cov: nalgebra::DMatrix<f64>,
    pub latent_mode: LatentState,
    /// Sparse curvature of the joint (spatial effects, intercepts) block at
    /// the mode: the precision of the Gaussian approximation.
    pub latent_precision: sprs::CsMat<f64>,
    pub n_draws: usize,
    /// Hyperparameter draws, draw-major, length `n_draws * dim(theta)`.
    pub hyper_draws: Vec<f64>,
    /// Relative-risk draws, draw-major over disease-major cells:
    /// `risk_draws[s * (I*J) + j*I + i]`.
    pub risk_draws: Vec<f64>,
    /// Variance, correlation and intercept draws by name.
    pub params: ParamDraws,
    /// Leave-one-out predictive density per cell, disease-major.
    pub cpo: Vec<f64>,
    /// Posterior risk summaries per cell, disease-major.
    pub summaries: Vec<RiskSummary>,
    pub config: FitConfig,
    pub diagnostics: FitDiagnostics,
}

impl SubmodelFit {
    /// Risk draws for one cell.
    pub fn cell_draws(&self, disease: usize, area: usize) -> Vec<f64> {
        let cells = self.n_areas * self.n_diseases;
        let n = disease * self.n_areas + area;
        (0..self.n_draws).map(|s| self.risk_draws[s * cells + n]).collect()
    }
}

/// Canonical parameter naming shared by fits and consensus combination:
/// variances first, then upper-triangle correlations, then intercepts.
pub fn param_names(disease_names: &[String]) -> Vec<String> {
    let j = disease_names.len();
    let mut names = Vec::new();
    for d in disease_names {
        names.push(format!("sigma2_{d}"));
    }
    for a in 0..j {
        for b in (a + 1)..j {
            names.push(format!("rho_{}_{}", disease_names[a], disease_names[b]));
        }
    }
    for d in disease_names {
        names.push(format!("alpha_{d}"));
    }
    names
}
