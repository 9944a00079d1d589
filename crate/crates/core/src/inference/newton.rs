//! Constrained mode finding for the latent Gaussian field.
//!
//! One (sub)domain carries a latent vector u = vec(Theta) of length I*J
//! (disease-major: entry j*I + i is disease j, area i) plus J free
//! intercepts alpha. The log-joint to maximize at fixed hyperparameters is
//!
//! ```text
//!     f(alpha, u) = sum_n [ O_n eta_n - E_n exp(eta_n) ] - u' P u / 2
//!     eta_n = u_n + alpha_{disease(n)},    P = Omega_b (x) Q
//! ```
//!
//! subject to one sum-to-zero constraint per (disease, graph component):
//! A u = 0. P is rank deficient exactly along the rows of A, so the
//! curvature matrix C = P + diag(mu) with mu_n = E_n exp(eta_n) > 0 is
//! positive definite outright and sparse. Each Newton step solves the KKT
//! system by block elimination:
//!
//! * factor C once (sparse LDL', pattern reused across iterations),
//! * form W_A = C^{-1} A', W_B = C^{-1} G_ua and the small dense Schur
//!   system in (d_alpha, lambda) of size J + J*components,
//! * recover du = C^{-1}(g_u - G_ua d_alpha - A' lambda).
//!
//! The same pieces give everything the Laplace approximation needs at the
//! mode: the constrained log-determinant of the joint curvature through the
//! identity det(V' C V) = det(C) det(A C^{-1} A') / det(A A') for an
//! orthonormal null-space basis V of A, the marginal precision of alpha,
//! and exact draws from the constrained Gaussian via kriging correction.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::StandardNormal;
use sprs::CsMat;

use crate::cov::{constraint_sets, KronPattern};
use crate::error::{Error, Result};
use crate::graph::StructureMatrix;
use crate::inference::factor::SparseChol;
use crate::inference::CountPanel;

/// Sum-to-zero constraint layout. The sets partition the latent indices:
/// every (disease, area) cell belongs to exactly one (disease, component).
pub(crate) struct Constraints {
    pub sets: Vec<Vec<usize>>,
    pub set_of: Vec<usize>,
    pub sizes: Vec<f64>,
    /// log det(A A') = sum over sets of log |set|.
    pub logdet_aat: f64,
}

impl Constraints {
    pub fn new(q: &StructureMatrix, n_diseases: usize) -> Self {
        let sets = constraint_sets(q, n_diseases);
        let n = q.q.rows() * n_diseases;
        let mut set_of = vec![usize::MAX; n];
        for (r, set) in sets.iter().enumerate() {
            for &i in set {
                set_of[i] = r;
            }
        }
        debug_assert!(set_of.iter().all(|&r| r != usize::MAX));
        let sizes: Vec<f64> = sets.iter().map(|s| s.len() as f64).collect();
        let logdet_aat = sizes.iter().map(|s| s.ln()).sum();
        Constraints {
            sets,
            set_of,
            sizes,
            logdet_aat,
        }
    }

    /// Constraint sums: (A x)_r = sum over set r.
    pub fn mul(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.sets.len()];
        for (n, &xn) in x.iter().enumerate() {
            out[self.set_of[n]] += xn;
        }
        out
    }

    /// Exact projection onto {A u = 0}; keeps constraint drift at the level
    /// of floating-point roundoff throughout the iteration.
    pub fn project(&self, u: &mut [f64]) {
        let au = self.mul(u);
        for (n, un) in u.iter_mut().enumerate() {
            let r = self.set_of[n];
            *un -= au[r] / self.sizes[r];
        }
    }
}

/// Pieces produced at a converged mode, sufficient both for the Laplace
/// objective and for drawing from the constrained Gaussian approximation.
pub(crate) struct ModeInfo {
    pub loglik: f64,
    pub quad: f64,
    pub logdet_c: f64,
    pub logdet_s_a: f64,
    pub logdet_p_alpha: f64,
    pub iterations: usize,
    pub mu: Vec<f64>,
    /// C^{-1} A', one dense column per constraint.
    pub w_a: Vec<Vec<f64>>,
    /// C^{-1} G_ua, one dense column per disease.
    pub w_b: Vec<Vec<f64>>,
    pub s_a_chol: Cholesky<f64, Dyn>,
    pub p_alpha_chol: Cholesky<f64, Dyn>,
}

/// Mutable state for repeated mode finding across hyperparameter values.
/// The sparse pattern, symbolic factorization and the latent state are all
/// reused, so evaluations near each other converge in very few steps.
pub(crate) struct LatentWorkspace {
    pub n_areas: usize,
    pub n_diseases: usize,
    pattern: KronPattern,
    prior: CsMat<f64>,
    curvature: CsMat<f64>,
    chol: Option<SparseChol>,
    pub cons: Constraints,
    observed: Vec<f64>,
    expected: Vec<f64>,
    pub alpha: Vec<f64>,
    pub u: Vec<f64>,
}

impl LatentWorkspace {
    pub fn new(q: &StructureMatrix, panel: &CountPanel) -> Result<Self> {
        let i = panel.n_areas;
        let j = panel.n_diseases;
        let pattern = KronPattern::new(&q.q, j);
        let zeros = DMatrix::zeros(j, j);
        let prior = pattern.matrix(&zeros, None);
        let curvature = pattern.matrix(&zeros, None);
        let cons = Constraints::new(q, j);
        let observed: Vec<f64> = panel.observed().iter().map(|&o| o as f64).collect();
        let expected = panel.expected().to_vec();

        // Flat-prior intercepts start at the per-disease Poisson MLE.
        let mut alpha = Vec::with_capacity(j);
        for d in 0..j {
            let o: f64 = observed[d * i..(d + 1) * i].iter().sum();
            let e: f64 = expected[d * i..(d + 1) * i].iter().sum();
            if o <= 0.0 {
                return Err(Error::numeric(format!(
                    "disease {:?} has no observed cases in this domain; its intercept is not estimable",
                    panel.disease_names[d]
                )));
            }
            alpha.push((o / e).ln());
        }

        Ok(LatentWorkspace {
            n_areas: i,
            n_diseases: j,
            pattern,
            prior,
            curvature,
            chol: None,
            cons,
            observed,
            expected,
            alpha,
            u: vec![0.0; i * j],
        })
    }

    pub fn n_latent(&self) -> usize {
        self.n_areas * self.n_diseases
    }

    pub fn chol(&self) -> &SparseChol {
        self.chol.as_ref().expect("factorization exists after latent_mode")
    }

    /// Poisson means and log-likelihood (without the log-factorial constant)
    /// at an arbitrary state.
    fn poisson_parts(&self, alpha: &[f64], u: &[f64], mu_out: &mut [f64]) -> f64 {
        let i = self.n_areas;
        let mut ll = 0.0;
        for (n, &un) in u.iter().enumerate() {
            let eta = un + alpha[n / i];
            let mu = self.expected[n] * eta.exp();
            mu_out[n] = mu;
            ll += self.observed[n] * eta - mu;
        }
        ll
    }

    fn prior_mul(&self, v: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|x| *x = 0.0);
        for (col, vec) in self.prior.outer_iterator().enumerate() {
            let vc = v[col];
            if vc != 0.0 {
                for (row, &val) in vec.iter() {
                    out[row] += val * vc;
                }
            }
        }
    }

    fn quad_prior(&self, v: &[f64]) -> f64 {
        let mut acc = 0.0;
        for (col, vec) in self.prior.outer_iterator().enumerate() {
            let vc = v[col];
            if vc != 0.0 {
                for (row, &val) in vec.iter() {
                    acc += val * v[row] * vc;
                }
            }
        }
        acc
    }

    /// Per-disease sums weighted by mu: (G_alpha,u x)_j = sum_{n in j} mu_n x_n.
    fn g_alpha_u(&self, mu: &[f64], x: &[f64]) -> Vec<f64> {
        let i = self.n_areas;
        let mut out = vec![0.0; self.n_diseases];
        for n in 0..x.len() {
            out[n / i] += mu[n] * x[n];
        }
        out
    }

    /// Newton iteration to the constrained mode at fixed Omega_b.
    ///
    /// Converges when the projected gradient max-norm drops below `tol`;
    /// errors after `max_iter` steps, reporting the final gradient norm.
    pub fn latent_mode(
        &mut self,
        omega: &DMatrix<f64>,
        tol: f64,
        max_iter: usize,
    ) -> Result<ModeInfo> {
        let n = self.n_latent();
        let i_areas = self.n_areas;
        let j = self.n_diseases;
        let nc = self.cons.sets.len();
        self.pattern.fill(omega, None, &mut self.prior);
        self.cons.project(&mut self.u);

        let mut mu = vec![0.0; n];
        let mut pu = vec![0.0; n];
        let mut grad_u = vec![0.0; n];
        let mut mu_try = vec![0.0; n];
        let mut iterations = 0;

        loop {
            let alpha_now = self.alpha.clone();
            let u_now = self.u.clone();
            let loglik = self.poisson_parts(&alpha_now, &u_now, &mut mu);
            if !loglik.is_finite() {
                return Err(Error::numeric("likelihood overflow at latent state"));
            }
            self.prior_mul(&u_now, &mut pu);
            let quad: f64 = u_now.iter().zip(&pu).map(|(a, b)| a * b).sum();
            let f0 = loglik - 0.5 * quad;

            for nn in 0..n {
                grad_u[nn] = self.observed[nn] - mu[nn] - pu[nn];
            }
            let mut grad_a = vec![0.0; j];
            for nn in 0..n {
                grad_a[nn / i_areas] += self.observed[nn] - mu[nn];
            }

            // Curvature and factorization at the current point.
            self.pattern.fill(omega, Some(&mu), &mut self.curvature);
            match &mut self.chol {
                Some(c) => c.update(&self.curvature)?,
                None => self.chol = Some(SparseChol::new(&self.curvature)?),
            }
            let chol = self.chol.as_ref().unwrap();

            let w_a: Vec<Vec<f64>> = self
                .cons
                .sets
                .iter()
                .map(|set| {
                    let mut rhs = vec![0.0; n];
                    for &idx in set {
                        rhs[idx] = 1.0;
                    }
                    chol.solve(&rhs)
                })
                .collect();
            let w_b: Vec<Vec<f64>> = (0..j)
                .map(|d| {
                    let mut rhs = vec![0.0; n];
                    for a in 0..i_areas {
                        let idx = d * i_areas + a;
                        rhs[idx] = mu[idx];
                    }
                    chol.solve(&rhs)
                })
                .collect();
            let w = chol.solve(&grad_u);

            // Small dense blocks.
            let s_a = DMatrix::from_fn(nc, nc, |r, c| {
                self.cons.sets[r].iter().map(|&ii| w_a[c][ii]).sum::<f64>()
            });
            let ga_wa = {
                let mut m = DMatrix::zeros(j, nc);
                for (c, col) in w_a.iter().enumerate() {
                    let v = self.g_alpha_u(&mu, col);
                    for r in 0..j {
                        m[(r, c)] = v[r];
                    }
                }
                m
            };
            let ga_wb = {
                let mut m = DMatrix::zeros(j, j);
                for (c, col) in w_b.iter().enumerate() {
                    let v = self.g_alpha_u(&mu, col);
                    for r in 0..j {
                        m[(r, c)] = v[r];
                    }
                }
                m
            };
            let a_wb = {
                let mut m = DMatrix::zeros(nc, j);
                for (c, col) in w_b.iter().enumerate() {
                    let v = self.cons.mul(col);
                    for r in 0..nc {
                        m[(r, c)] = v[r];
                    }
                }
                m
            };
            let d_aa = self.g_alpha_u(&mu, &vec![1.0; n]);

            // Projected gradient for the convergence decision.
            let mut pg_max = 0.0f64;
            let a_g = self.cons.mul(&grad_u);
            for nn in 0..n {
                let r = self.cons.set_of[nn];
                pg_max = pg_max.max((grad_u[nn] - a_g[r] / self.cons.sizes[r]).abs());
            }
            for d in 0..j {
                pg_max = pg_max.max(grad_a[d].abs());
            }

            if pg_max < tol {
                let logdet_c = chol.log_det()?;
                let s_a_chol = Cholesky::new(s_a).ok_or_else(|| {
                    Error::numeric("constraint Schur complement not positive definite")
                })?;
                let logdet_s_a = chol_log_det(&s_a_chol);
                // Marginal precision of alpha on the constrained subspace:
                // P_a = D_aa - G_au W_B + (G_au W_A) S_A^{-1} (G_au W_A)'.
                let cross = s_a_chol.solve(&ga_wa.transpose());
                let mut p_alpha = &ga_wa * cross - ga_wb;
                for d in 0..j {
                    p_alpha[(d, d)] += d_aa[d];
                }
                let p_alpha_chol = Cholesky::new(p_alpha).ok_or_else(|| {
                    Error::numeric("intercept marginal precision not positive definite")
                })?;
                let logdet_p_alpha = chol_log_det(&p_alpha_chol);
                return Ok(ModeInfo {
                    loglik,
                    quad,
                    logdet_c,
                    logdet_s_a,
                    logdet_p_alpha,
                    iterations,
                    mu,
                    w_a,
                    w_b,
                    s_a_chol,
                    p_alpha_chol,
                });
            }

            if iterations >= max_iter {
                return Err(Error::numeric(format!(
                    "latent Newton did not converge in {max_iter} iterations \
                     (projected gradient max-norm {pg_max:.3e})"
                )));
            }
            iterations += 1;

            // Dense KKT Schur system in (d_alpha, lambda).
            let dim = j + nc;
            let mut m_small = DMatrix::zeros(dim, dim);
            for r in 0..j {
                for c in 0..j {
                    m_small[(r, c)] = -ga_wb[(r, c)];
                }
                m_small[(r, r)] += d_aa[r];
                for c in 0..nc {
                    m_small[(r, j + c)] = -ga_wa[(r, c)];
                }
            }
            for r in 0..nc {
                for c in 0..j {
                    m_small[(j + r, c)] = -a_wb[(r, c)];
                }
                for c in 0..nc {
                    m_small[(j + r, j + c)] = -s_a_chol_free(&w_a, &self.cons.sets, r, c);
                }
            }
            let ga_w = self.g_alpha_u(&mu, &w);
            let a_w = self.cons.mul(&w);
            let a_u = self.cons.mul(&u_now);
            let mut rhs = DVector::zeros(dim);
            for r in 0..j {
                rhs[r] = grad_a[r] - ga_w[r];
            }
            for r in 0..nc {
                rhs[j + r] = -a_u[r] - a_w[r];
            }
            let sol = m_small
                .lu()
                .solve(&rhs)
                .ok_or_else(|| Error::numeric("singular KKT system in latent Newton"))?;
            let d_alpha: Vec<f64> = (0..j).map(|d| sol[d]).collect();
            let lambda: Vec<f64> = (0..nc).map(|r| sol[j + r]).collect();
            let mut du = w.clone();
            for nn in 0..n {
                for d in 0..j {
                    du[nn] -= w_b[d][nn] * d_alpha[d];
                }
                for r in 0..nc {
                    du[nn] -= w_a[r][nn] * lambda[r];
                }
            }

            // Backtracking on the objective along the Newton direction.
            let dirderiv: f64 = grad_u.iter().zip(&du).map(|(g, d)| g * d).sum::<f64>()
                + grad_a.iter().zip(&d_alpha).map(|(g, d)| g * d).sum::<f64>();
            let mut t = 1.0;
            let mut accepted = false;
            for _ in 0..40 {
                let alpha_try: Vec<f64> = alpha_now
                    .iter()
                    .zip(&d_alpha)
                    .map(|(a, d)| a + t * d)
                    .collect();
                let u_try: Vec<f64> = u_now.iter().zip(&du).map(|(a, d)| a + t * d).collect();
                let ll_try = self.poisson_parts(&alpha_try, &u_try, &mut mu_try);
                let f_try = ll_try - 0.5 * self.quad_prior(&u_try);
                // Near the mode the predicted improvement drops below the
                // roundoff in f0 itself; the absolute slack keeps full
                // Newton steps acceptable there instead of stalling.
                let slack = 1e-12 * (1.0 + f0.abs());
                if f_try.is_finite() && f_try >= f0 + 1e-4 * t * dirderiv.max(0.0) - slack {
                    self.alpha = alpha_try;
                    self.u = u_try;
                    self.cons.project(&mut self.u);
                    accepted = true;
                    break;
                }
                t *= 0.5;
            }
            if !accepted {
                return Err(Error::numeric(format!(
                    "latent Newton line search failed (projected gradient {pg_max:.3e})"
                )));
            }
        }
    }

    /// One draw from the Gaussian approximation at a converged mode.
    ///
    /// alpha comes from its marginal N(alpha*, P_alpha^{-1}); u given alpha
    /// comes from the unconstrained conditional corrected back onto the
    /// constraint manifold by kriging, which yields an exact draw from the
    /// constrained conditional.
    pub fn sample_latent<R: Rng>(&self, info: &ModeInfo, rng: &mut R) -> (Vec<f64>, Vec<f64>) {
        let j = self.n_diseases;
        let n = self.n_latent();
        let xi = DVector::from_fn(j, |_, _| rng.sample::<f64, _>(StandardNormal));
        let shift = info
            .p_alpha_chol
            .l()
            .transpose()
            .solve_upper_triangular(&xi)
            .expect("positive definite Cholesky factor");
        let alpha_s: Vec<f64> = (0..j).map(|d| self.alpha[d] + shift[d]).collect();

        let mut y = self.chol().sample_zero_mean(rng);
        for nn in 0..n {
            let mut mean = self.u[nn];
            for d in 0..j {
                mean -= info.w_b[d][nn] * shift[d];
            }
            y[nn] += mean;
        }
        let ay = DVector::from_vec(self.cons.mul(&y));
        let z = info.s_a_chol.solve(&ay);
        let mut u_s = y;
        for nn in 0..n {
            for (r, col) in info.w_a.iter().enumerate() {
                u_s[nn] -= col[nn] * z[r];
            }
        }
        (alpha_s, u_s)
    }

    /// Augmented (u, alpha) curvature at the mode, in sparse form: the
    /// Gaussian-approximation precision reported with a fit.
    pub fn augmented_precision(&self, omega: &DMatrix<f64>, mu: &[f64]) -> CsMat<f64> {
        let n = self.n_latent();
        let i_areas = self.n_areas;
        let j = self.n_diseases;
        let mut c_mode = self.curvature.clone();
        self.pattern.fill(omega, Some(mu), &mut c_mode);

        let mut indptr = Vec::with_capacity(n + j + 1);
        let mut indices = Vec::new();
        let mut data = Vec::new();
        indptr.push(0usize);
        let cp = c_mode.indptr().to_proper().to_vec();
        for col in 0..n {
            for t in cp[col]..cp[col + 1] {
                indices.push(c_mode.indices()[t]);
                data.push(c_mode.data()[t]);
            }
            indices.push(n + col / i_areas);
            data.push(mu[col]);
            indptr.push(indices.len());
        }
        for d in 0..j {
            let mut total = 0.0;
            for a in 0..i_areas {
                let idx = d * i_areas + a;
                indices.push(idx);
                data.push(mu[idx]);
                total += mu[idx];
            }
            indices.push(n + d);
            data.push(total);
            indptr.push(indices.len());
        }
        CsMat::new_csc((n + j, n + j), indptr, indices, data)
    }
}

fn chol_log_det(c: &Cholesky<f64, Dyn>) -> f64 {
    let l = c.l_dirty();
    let mut acc = 0.0;
    for k in 0..l.nrows() {
        acc += l[(k, k)].ln();
    }
    2.0 * acc
}

/// Entry (r, c) of S_A = A C^{-1} A' recomputed from the solved columns;
/// kept as a function so the KKT assembly cannot drift from the definition.
fn s_a_chol_free(w_a: &[Vec<f64>], sets: &[Vec<usize>], r: usize, c: usize) -> f64 {
    sets[r].iter().map(|&ii| w_a[c][ii]).sum()
}
