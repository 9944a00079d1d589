//! Between-disease covariance model and joint precision assembly.
//!
//! The smoothing engine couples J diseases through a J x J covariance matrix
//! Sigma_b whose diagonal carries the per-disease smoothing variances and
//! whose off-diagonals carry between-disease correlations. Sigma_b is
//! parameterized through a Bartlett-style factorization: a lower-triangular
//! factor A with
//!
//! ```text
//!     A[j][j] = exp(theta_j)          (diagonal, kept positive)
//!     A[j][l] = n_jl for l < j        (free off-diagonal cells)
//!     Sigma_b = A A'
//! ```
//!
//! so exactly J(J+1)/2 unconstrained real numbers describe any SPD matrix.
//! Under a Wishart prior with upsilon degrees of freedom and identity scale,
//! the factor cells are independent: exp(theta_j)^2 is chi-square with
//! upsilon - j + 1 degrees of freedom and the n_jl are standard normal,
//! which gives the closed-form hyperprior density implemented here.
//!
//! The joint latent field over I areas and J diseases has precision
//! Omega_b (x) Q, the Kronecker product of the between-disease precision
//! Omega_b = Sigma_b^{-1} with the areal structure matrix Q. The product is
//! assembled sparsely; because Q is rank deficient (one deficiency per graph
//! component), the assembly also reports the sum-to-zero constraint sets,
//! one per (disease, component) pair.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sprs::CsMat;
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::graph::StructureMatrix;

const LN_2PI: f64 = 1.8378770664093453;

/// Unconstrained hyperparameter vector of length J(J+1)/2.
///
/// The first J entries are the log-diagonals theta_j of the Bartlett factor;
/// the remaining J(J-1)/2 are the off-diagonal cells in row-major
/// lower-triangle order: (1,0), (2,0), (2,1), (3,0), ...
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperState {
    theta: Vec<f64>,
    n_diseases: usize,
    dof: f64,
}

impl HyperState {
    /// Number of free hyperparameters for J diseases.
    pub fn dim(n_diseases: usize) -> usize {
        n_diseases * (n_diseases + 1) / 2
    }

    pub fn new(theta: Vec<f64>, n_diseases: usize, dof: f64) -> Result<Self> {
        if theta.len() != Self::dim(n_diseases) {
            return Err(Error::input(format!(
                "hyperparameter vector has length {}, expected {} for {} diseases",
                theta.len(),
                Self::dim(n_diseases),
                n_diseases
            )));
        }
        if !theta.iter().all(|t| t.is_finite()) {
            return Err(Error::input("non-finite hyperparameter"));
        }
        if !(dof.is_finite() && dof > (n_diseases as f64) - 1.0) {
            return Err(Error::input(format!(
                "degrees of freedom {dof} too small for {n_diseases} diseases"
            )));
        }
        Ok(HyperState {
            theta,
            n_diseases,
            dof,
        })
    }

    /// All-zero state (identity covariance) with the default upsilon = J + 2.
    pub fn zero(n_diseases: usize) -> Self {
        HyperState {
            theta: vec![0.0; Self::dim(n_diseases)],
            n_diseases,
            dof: n_diseases as f64 + 2.0,
        }
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn n_diseases(&self) -> usize {
        self.n_diseases
    }

    pub fn dof(&self) -> f64 {
        self.dof
    }

    /// Same diseases and dof, different coordinates.
    pub fn with_theta(&self, theta: Vec<f64>) -> Result<Self> {
        Self::new(theta, self.n_diseases, self.dof)
    }

    /// Index of off-diagonal cell (row, col), row > col, within theta.
    pub fn off_index(n_diseases: usize, row: usize, col: usize) -> usize {
        debug_assert!(col < row && row < n_diseases);
        n_diseases + row * (row - 1) / 2 + col
    }
}

/// Between-disease covariance with derived variance/correlation views.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BetweenDiseaseCov {
    /// Sigma_b itself (the inverse of the Kronecker factor Omega_b).
    pub cov: DMatrix<f64>,
    /// Per-disease variances, the diagonal of cov.
    pub sigma2: Vec<f64>,
    /// Correlation matrix with unit diagonal.
    pub rho: DMatrix<f64>,
}

impl BetweenDiseaseCov {
    /// Wrap an SPD matrix, extracting variances and correlations.
    pub fn from_cov(cov: DMatrix<f64>) -> Result<Self> {
        let j = cov.nrows();
        if cov.ncols() != j || j == 0 {
            return Err(Error::input("covariance must be square and non-empty"));
        }
        if cov.clone().cholesky().is_none() {
            return Err(Error::input("covariance is not positive definite"));
        }
        let sigma2: Vec<f64> = (0..j).map(|d| cov[(d, d)]).collect();
        let mut rho = DMatrix::zeros(j, j);
        for a in 0..j {
            for b in 0..j {
                rho[(a, b)] = cov[(a, b)] / (sigma2[a] * sigma2[b]).sqrt();
            }
        }
        Ok(BetweenDiseaseCov { cov, sigma2, rho })
    }

    /// Build from variances and a correlation matrix.
    pub fn from_parts(sigma2: &[f64], rho: &DMatrix<f64>) -> Result<Self> {
        let j = sigma2.len();
        if rho.nrows() != j || rho.ncols() != j {
            return Err(Error::input("correlation matrix dimension mismatch"));
        }
        let mut cov = DMatrix::zeros(j, j);
        for a in 0..j {
            for b in 0..j {
                cov[(a, b)] = rho[(a, b)] * (sigma2[a] * sigma2[b]).sqrt();
            }
        }
        Self::from_cov(cov)
    }

    pub fn n_diseases(&self) -> usize {
        self.cov.nrows()
    }

    /// Omega_b = cov^{-1}, via Cholesky, symmetrized bit-exactly: downstream
    /// sparse assembly mirrors entries across the diagonal and the
    /// factorization rejects matrices that are not exactly symmetric.
    pub fn precision(&self) -> Result<DMatrix<f64>> {
        let mut p = self
            .cov
            .clone()
            .cholesky()
            .map(|c| c.inverse())
            .ok_or_else(|| Error::numeric("between-disease covariance numerically singular"))?;
        let j = p.nrows();
        for a in 0..j {
            for b in (a + 1)..j {
                let v = 0.5 * (p[(a, b)] + p[(b, a)]);
                p[(a, b)] = v;
                p[(b, a)] = v;
            }
        }
        Ok(p)
    }
}

/// Lower-triangular Bartlett factor for the given hyperparameters.
fn bartlett_factor(h: &HyperState) -> DMatrix<f64> {
    let j = h.n_diseases();
    let mut a = DMatrix::zeros(j, j);
    for d in 0..j {
        a[(d, d)] = h.theta()[d].exp();
    }
    for row in 1..j {
        for col in 0..row {
            a[(row, col)] = h.theta()[HyperState::off_index(j, row, col)];
        }
    }
    a
}

/// Map hyperparameters to the covariance Sigma_b = A A'.
pub fn bartlett_cov(h: &HyperState) -> Result<BetweenDiseaseCov> {
    let a = bartlett_factor(h);
    let cov = &a * a.transpose();
    if !cov.iter().all(|v| v.is_finite()) {
        return Err(Error::numeric(
            "overflow while building the between-disease covariance",
        ));
    }
    BetweenDiseaseCov::from_cov(cov)
}

/// Recover hyperparameters from a target covariance (Cholesky with positive
/// diagonal is the unique Bartlett factor).
pub fn bartlett_invert(target: &BetweenDiseaseCov) -> Result<HyperState> {
    let j = target.n_diseases();
    let chol = target
        .cov
        .clone()
        .cholesky()
        .ok_or_else(|| Error::input("target covariance is not positive definite"))?;
    let a = chol.l();
    let mut theta = vec![0.0; HyperState::dim(j)];
    for d in 0..j {
        theta[d] = a[(d, d)].ln();
    }
    for row in 1..j {
        for col in 0..row {
            theta[HyperState::off_index(j, row, col)] = a[(row, col)];
        }
    }
    HyperState::new(theta, j, j as f64 + 2.0)
}

/// Chi-square log-density evaluated at exp(2 theta), written directly in
/// terms of theta so extreme values underflow to -inf instead of NaN.
fn chi2_ln_pdf_exp2(theta: f64, df: f64) -> f64 {
    let x = (2.0 * theta).exp();
    (df / 2.0 - 1.0) * (2.0 * theta) - x / 2.0 - (df / 2.0) * std::f64::consts::LN_2
        - ln_gamma(df / 2.0)
}

/// Log hyperprior density of theta.
///
/// With upsilon degrees of freedom, exp(theta_j)^2 follows a chi-square law
/// with upsilon - j + 1 degrees of freedom (j counted from 1) and the
/// off-diagonal cells are standard normal. Including the Jacobian of the
/// log transform gives
///
/// ```text
///     log pi(theta) = J log 2 + 2 sum_j theta_j
///                   + sum_j log f_{chi2}(exp(2 theta_j); upsilon - j + 1)
///                   + sum_{j>l} log phi(n_jl)
/// ```
pub fn log_prior_hyper(h: &HyperState) -> f64 {
    let j = h.n_diseases();
    let mut lp = j as f64 * std::f64::consts::LN_2;
    for d in 0..j {
        let theta = h.theta()[d];
        let df = h.dof() - d as f64;
        lp += 2.0 * theta + chi2_ln_pdf_exp2(theta, df);
    }
    for t in &h.theta()[j..] {
        lp += -0.5 * LN_2PI - 0.5 * t * t;
    }
    lp
}

/// Analytic gradient of [`log_prior_hyper`] (used by tests and diagnostics).
pub fn log_prior_hyper_grad(h: &HyperState) -> Vec<f64> {
    let j = h.n_diseases();
    let mut g = Vec::with_capacity(h.theta().len());
    for d in 0..j {
        let df = h.dof() - d as f64;
        g.push(df - (2.0 * h.theta()[d]).exp());
    }
    for t in &h.theta()[j..] {
        g.push(-t);
    }
    g
}

/// Precomputed sparsity plan for Omega_b (x) Q with room for a diagonal
/// addition. The pattern depends only on Q and J, so one plan serves every
/// hyperparameter value during a fit; only the numeric values are refilled.
#[derive(Debug, Clone)]
pub struct KronPattern {
    n_areas: usize,
    n_diseases: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    /// Per non-zero: the Q value it scales and the Omega_b row block.
    q_val: Vec<f64>,
    block_row: Vec<u32>,
    /// Position of the (n, n) entry in the value array, per latent index n.
    diag_pos: Vec<usize>,
}

impl KronPattern {
    /// Build the plan from a structure matrix (whose pattern must include
    /// every diagonal entry; [`crate::graph::structure_matrix`] guarantees
    /// that, keeping explicit zeros for isolated areas).
    pub fn new(q: &CsMat<f64>, n_diseases: usize) -> Self {
        debug_assert!(q.is_csc());
        let i = q.rows();
        let j = n_diseases;
        let n = i * j;
        let q_indptr: Vec<usize> = q.indptr().to_proper().to_vec();
        let q_indices = q.indices();
        let q_data = q.data();

        let nnz = j * j * q_data.len();
        let mut indptr = Vec::with_capacity(n + 1);
        let mut indices = Vec::with_capacity(nnz);
        let mut q_val = Vec::with_capacity(nnz);
        let mut block_row = Vec::with_capacity(nnz);
        let mut diag_pos = vec![0usize; n];
        indptr.push(0);
        for bc in 0..j {
            for k in 0..i {
                let (lo, hi) = (q_indptr[k], q_indptr[k + 1]);
                for br in 0..j {
                    for t in lo..hi {
                        let row = br * i + q_indices[t];
                        if row == bc * i + k {
                            diag_pos[row] = indices.len();
                        }
                        indices.push(row);
                        q_val.push(q_data[t]);
                        block_row.push(br as u32);
                    }
                }
                indptr.push(indices.len());
            }
        }
        KronPattern {
            n_areas: i,
            n_diseases: j,
            indptr,
            indices,
            q_val,
            block_row,
            diag_pos,
        }
    }

    pub fn n_latent(&self) -> usize {
        self.n_areas * self.n_diseases
    }

    /// Allocate a matrix with this pattern, values filled for `omega` and an
    /// optional diagonal addition.
    pub fn matrix(&self, omega: &DMatrix<f64>, diag_add: Option<&[f64]>) -> CsMat<f64> {
        let n = self.n_latent();
        let mut out = CsMat::new_csc(
            (n, n),
            self.indptr.clone(),
            self.indices.clone(),
            vec![0.0; self.indices.len()],
        );
        self.fill(omega, diag_add, &mut out);
        out
    }

    /// Refill values in place (same pattern).
    pub fn fill(&self, omega: &DMatrix<f64>, diag_add: Option<&[f64]>, out: &mut CsMat<f64>) {
        debug_assert_eq!(out.nnz(), self.indices.len());
        let i = self.n_areas;
        let data = out.data_mut();
        for bc in 0..self.n_diseases {
            let (lo, hi) = (self.indptr[bc * i], self.indptr[(bc + 1) * i]);
            for t in lo..hi {
                data[t] = omega[(self.block_row[t] as usize, bc)] * self.q_val[t];
            }
        }
        if let Some(m) = diag_add {
            debug_assert_eq!(m.len(), self.n_latent());
            for (n, &add) in m.iter().enumerate() {
                data[self.diag_pos[n]] += add;
            }
        }
    }
}

/// Sparse joint precision for vec(Theta) plus its constraint sets.
///
/// The latent vector stacks diseases contiguously: entry j * I + i belongs
/// to disease j and area i.
#[derive(Debug, Clone)]
pub struct JointPrecision {
    pub prec: CsMat<f64>,
    /// Sum-to-zero sets, one per (disease, component), disease-major order.
    /// Each is a sorted list of latent indices.
    pub constraints: Vec<Vec<usize>>,
    pub n_areas: usize,
    pub n_diseases: usize,
}

/// Constraint sets for a given structure matrix and disease count.
pub fn constraint_sets(q: &StructureMatrix, n_diseases: usize) -> Vec<Vec<usize>> {
    let i = q.q.rows();
    let mut sets = Vec::with_capacity(n_diseases * q.n_components());
    for j in 0..n_diseases {
        for comp in &q.components {
            sets.push(comp.iter().map(|&a| j * i + a).collect());
        }
    }
    sets
}

/// Assemble Omega_b (x) Q sparsely.
pub fn assemble_precision(
    cov: &BetweenDiseaseCov,
    q: &StructureMatrix,
    n_diseases: usize,
) -> Result<JointPrecision> {
    if cov.n_diseases() != n_diseases {
        return Err(Error::input("covariance dimension does not match diseases"));
    }
    let omega = cov.precision()?;
    let pattern = KronPattern::new(&q.q, n_diseases);
    let prec = pattern.matrix(&omega, None);
    Ok(JointPrecision {
        prec,
        constraints: constraint_sets(q, n_diseases),
        n_areas: q.q.rows(),
        n_diseases,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_graph, structure_matrix};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn path3() -> StructureMatrix {
        let labels: Vec<String> = ["A", "B", "C"].iter().map(|s| s.to_string()).collect();
        let g = build_graph(&[("A", "B"), ("B", "C")], &labels).unwrap();
        structure_matrix(&g)
    }

    #[test]
    fn identity_at_zero() {
        let h = HyperState::zero(2);
        let c = bartlett_cov(&h).unwrap();
        assert_eq!(c.cov, DMatrix::identity(2, 2));
        assert_eq!(c.rho[(0, 1)], 0.0);
        assert_eq!(c.sigma2, vec![1.0, 1.0]);
    }

    #[test]
    fn two_disease_worked_example() {
        // A = [[2, 0], [1, 1]] so A A' = [[4, 2], [2, 2]].
        let h = HyperState::new(vec![2f64.ln(), 0.0, 1.0], 2, 4.0).unwrap();
        let c = bartlett_cov(&h).unwrap();
        assert_relative_eq!(c.cov[(0, 0)], 4.0, max_relative = 1e-14);
        assert_relative_eq!(c.cov[(0, 1)], 2.0, max_relative = 1e-14);
        assert_relative_eq!(c.cov[(1, 1)], 2.0, max_relative = 1e-14);
        assert_relative_eq!(c.rho[(0, 1)], 2.0 / 8f64.sqrt(), max_relative = 1e-14);
    }

    #[test]
    fn invert_identity() {
        let c = BetweenDiseaseCov::from_cov(DMatrix::identity(3, 3)).unwrap();
        let h = bartlett_invert(&c).unwrap();
        assert!(h.theta().iter().all(|&t| t == 0.0));
    }

    #[test]
    fn invert_worked_example() {
        let c =
            BetweenDiseaseCov::from_cov(DMatrix::from_row_slice(2, 2, &[4.0, 2.0, 2.0, 2.0]))
                .unwrap();
        let h = bartlett_invert(&c).unwrap();
        assert_relative_eq!(h.theta()[0], 2f64.ln(), max_relative = 1e-14);
        assert_relative_eq!(h.theta()[1], 0.0, epsilon = 1e-14);
        assert_relative_eq!(h.theta()[2], 1.0, max_relative = 1e-14);
    }

    #[test]
    fn three_disease_preset_round_trip() {
        // Variances and correlations used by the simulation presets.
        let sigma2 = [0.25, 0.16, 0.09];
        let mut rho = DMatrix::identity(3, 3);
        rho[(0, 1)] = 0.7;
        rho[(1, 0)] = 0.7;
        rho[(0, 2)] = 0.5;
        rho[(2, 0)] = 0.5;
        rho[(1, 2)] = 0.1;
        rho[(2, 1)] = 0.1;
        let target = BetweenDiseaseCov::from_parts(&sigma2, &rho).unwrap();
        let h = bartlett_invert(&target).unwrap();
        let back = bartlett_cov(&h).unwrap();
        for a in 0..3 {
            for b in 0..3 {
                assert_relative_eq!(back.cov[(a, b)], target.cov[(a, b)], epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn hyperprior_reference_value() {
        // Independent evaluation through statrs distribution objects.
        use statrs::distribution::{ChiSquared, Continuous, Normal};
        let h = HyperState::new(vec![0.0, 0.0, 0.0], 2, 4.0).unwrap();
        let expect = 2.0 * std::f64::consts::LN_2
            + ChiSquared::new(4.0).unwrap().ln_pdf(1.0)
            + ChiSquared::new(3.0).unwrap().ln_pdf(1.0)
            + Normal::new(0.0, 1.0).unwrap().ln_pdf(0.0);
        assert_relative_eq!(log_prior_hyper(&h), expect, max_relative = 1e-12);
    }

    #[test]
    fn hyperprior_off_diagonal_translation() {
        // Moving one off-diagonal cell only shifts its own normal term.
        let base = HyperState::new(vec![0.3, -0.2, 0.4], 2, 4.0).unwrap();
        let moved = HyperState::new(vec![0.3, -0.2, 1.1], 2, 4.0).unwrap();
        let delta = log_prior_hyper(&moved) - log_prior_hyper(&base);
        let expect = -0.5 * (1.1f64 * 1.1 - 0.4 * 0.4);
        assert_relative_eq!(delta, expect, max_relative = 1e-12);
    }

    #[test]
    fn hyperprior_extreme_theta_is_neg_inf() {
        let h = HyperState::new(vec![400.0, 0.0, 0.0], 2, 4.0).unwrap();
        assert_eq!(log_prior_hyper(&h), f64::NEG_INFINITY);
        // And the covariance construction reports overflow instead of
        // panicking.
        let h2 = HyperState::new(vec![400.0, 400.0, 0.0], 2, 4.0).unwrap();
        assert!(bartlett_cov(&h2).is_err());
    }

    #[test]
    fn hyperprior_gradient_matches_finite_differences() {
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let j = rng.gen_range(1..4usize);
            let theta: Vec<f64> = (0..HyperState::dim(j))
                .map(|_| rng.gen_range(-1.5..1.5))
                .collect();
            let h = HyperState::new(theta.clone(), j, j as f64 + 2.0).unwrap();
            let grad = log_prior_hyper_grad(&h);
            for k in 0..theta.len() {
                let step = 1e-5;
                let mut up = theta.clone();
                up[k] += step;
                let mut dn = theta.clone();
                dn[k] -= step;
                let fd = (log_prior_hyper(&h.with_theta(up).unwrap())
                    - log_prior_hyper(&h.with_theta(dn).unwrap()))
                    / (2.0 * step);
                let scale = grad[k].abs().max(1.0);
                assert!(
                    (grad[k] - fd).abs() / scale < 1e-5,
                    "component {k}: analytic {} vs fd {fd}",
                    grad[k]
                );
            }
        }
    }

    #[test]
    fn kronecker_scalar_identity() {
        let q = path3();
        let cov = BetweenDiseaseCov::from_cov(DMatrix::from_element(1, 1, 1.0)).unwrap();
        let jp = assemble_precision(&cov, &q, 1).unwrap();
        assert_eq!(jp.prec.to_dense(), q.q.to_dense());
        assert_eq!(jp.constraints, vec![vec![0, 1, 2]]);
    }

    #[test]
    fn kronecker_block_diagonal_for_identity_cov() {
        let q = path3();
        let cov = BetweenDiseaseCov::from_cov(DMatrix::identity(2, 2)).unwrap();
        let jp = assemble_precision(&cov, &q, 2).unwrap();
        let dense = jp.prec.to_dense();
        let qd = q.q.to_dense();
        for a in 0..6 {
            for b in 0..6 {
                let expect = if a / 3 == b / 3 { qd[[a % 3, b % 3]] } else { 0.0 };
                assert_eq!(dense[[a, b]], expect);
            }
        }
    }

    #[test]
    fn kronecker_matches_dense_oracle() {
        let q = path3();
        let cov =
            BetweenDiseaseCov::from_cov(DMatrix::from_row_slice(2, 2, &[4.0, 2.0, 2.0, 2.0]))
                .unwrap();
        let jp = assemble_precision(&cov, &q, 2).unwrap();
        let omega = cov.precision().unwrap();
        let qd = q.q.to_dense();
        let dense = jp.prec.to_dense();
        for a in 0..6 {
            for b in 0..6 {
                let expect = omega[(a / 3, b / 3)] * qd[[a % 3, b % 3]];
                assert!((dense[[a, b]] - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn null_space_dimension_counts_components() {
        // Two components x two diseases: four near-zero eigenvalues.
        let labels: Vec<String> = ["A", "B", "C", "D", "E"].iter().map(|s| s.to_string()).collect();
        let g = build_graph(&[("A", "B"), ("B", "C"), ("D", "E")], &labels).unwrap();
        let q = structure_matrix(&g);
        let cov =
            BetweenDiseaseCov::from_cov(DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 0.5]))
                .unwrap();
        let jp = assemble_precision(&cov, &q, 2).unwrap();
        let dense = DMatrix::from_fn(10, 10, |a, b| jp.prec.to_dense()[[a, b]]);
        let eig = dense.symmetric_eigen();
        let zeros = eig.eigenvalues.iter().filter(|&&l| l.abs() < 1e-8).count();
        assert_eq!(zeros, 4);
        assert_eq!(jp.constraints.len(), 4);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn covariance_is_spd_for_all_finite_theta(
            theta in proptest::collection::vec(-3.0f64..3.0, 6)
        ) {
            let h = HyperState::new(theta, 3, 5.0).unwrap();
            let c = bartlett_cov(&h).unwrap();
            // Cholesky-by-construction: the factorization must succeed.
            prop_assert!(c.cov.clone().cholesky().is_some());
            for d in 0..3 {
                prop_assert!(c.sigma2[d] > 0.0);
                prop_assert!((c.rho[(d, d)] - 1.0).abs() < 1e-12);
            }
            for a in 0..3 {
                for b in 0..3 {
                    prop_assert!(c.rho[(a, b)].abs() <= 1.0 + 1e-12);
                }
            }
        }

        #[test]
        fn bartlett_round_trip(
            theta in proptest::collection::vec(-2.0f64..2.0, 6)
        ) {
            let h = HyperState::new(theta.clone(), 3, 5.0).unwrap();
            let c = bartlett_cov(&h).unwrap();
            let back = bartlett_invert(&c).unwrap();
            for k in 0..theta.len() {
                let scale = theta[k].abs().max(1.0);
                prop_assert!((back.theta()[k] - theta[k]).abs() / scale < 1e-10);
            }
        }
    }
}
