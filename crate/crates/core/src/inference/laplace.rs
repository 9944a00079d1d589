//! Hyperparameter posterior: Laplace objective, BFGS mode finding,
//! curvature-based covariance, and joint posterior sampling.
//!
//! For hyperparameters theta (Bartlett coordinates of the between-disease
//! covariance), the marginal posterior is approximated by integrating the
//! latent block (u, alpha) out with a Laplace approximation at its
//! constrained mode:
//!
//! ```text
//!   l(theta) = log pi(theta)
//!            + (1/2) [ (I - c) log det Omega + J log pdet Q ]   prior normalizer
//!            - (dim_u/2) ln 2pi
//!            + loglik(eta*) - u*' P u* / 2                       joint at the mode
//!            + ((dim_u + J)/2) ln 2pi
//!            - (1/2) log det H_V                                 curvature term
//! ```
//!
//! with dim_u = J (I - c) the constrained latent dimension and
//!
//! ```text
//!   log det H_V = log det C + log det S_A - log det A A' + log det P_alpha
//! ```
//!
//! the determinant of the joint (u, alpha) curvature restricted to the
//! constraint manifold, assembled from the pieces the Newton solver already
//! factors. The Poisson log-likelihood omits the log-factorial term
//! throughout; it is constant in all parameters and cancels from every
//! comparison the crate makes.

use std::f64::consts::PI;
use std::time::Instant;

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use sprs::CsMat;

use crate::cov::{bartlett_cov, log_prior_hyper, BetweenDiseaseCov, HyperState};
use crate::error::{Error, Result};
use crate::graph::{structure_matrix, AreaGraph, StructureMatrix};
use crate::inference::factor::SparseChol;
use crate::inference::newton::{LatentWorkspace, ModeInfo};
use crate::inference::summaries::{cpo_cells, risk_summaries};
use crate::inference::{
    param_names, CountPanel, FitConfig, FitDiagnostics, LatentState, ParamDraws, SubmodelFit,
};
use crate::seed::{self, Purpose};

/// Graph-dependent constants of the objective.
pub(crate) struct GraphConsts {
    /// Log pseudo-determinant of the structure matrix: product of its
    /// positive eigenvalues. Computed per connected component by grounding
    /// (Laplacians satisfy pdet = |component| times the determinant with
    /// one row and column removed).
    pub logpdet_q: f64,
    pub n_components: usize,
}

impl GraphConsts {
    pub fn new(q: &StructureMatrix) -> Result<Self> {
        let i = q.q.rows();
        let mut drop = vec![false; i];
        for comp in &q.components {
            drop[comp[0]] = true;
        }
        let keep: Vec<usize> = (0..i).filter(|&k| !drop[k]).collect();
        let mut logpdet: f64 = q.components.iter().map(|c| (c.len() as f64).ln()).sum();
        if !keep.is_empty() {
            let mut newpos = vec![usize::MAX; i];
            for (p, &k) in keep.iter().enumerate() {
                newpos[k] = p;
            }
            let mut indptr = vec![0usize];
            let mut indices = Vec::new();
            let mut data = Vec::new();
            for &col in &keep {
                for (row, &val) in q.q.outer_view(col).expect("column in range").iter() {
                    if newpos[row] != usize::MAX {
                        indices.push(newpos[row]);
                        data.push(val);
                    }
                }
                indptr.push(indices.len());
            }
            let reduced = CsMat::new_csc((keep.len(), keep.len()), indptr, indices, data);
            logpdet += SparseChol::new(&reduced)?.log_det()?;
        }
        Ok(GraphConsts {
            logpdet_q: logpdet,
            n_components: q.components.len(),
        })
    }
}

/// One successful objective evaluation.
pub(crate) struct HyperEval {
    pub value: f64,
    pub info: ModeInfo,
    pub omega: DMatrix<f64>,
}

/// Shared context for repeated objective evaluations.
pub(crate) struct EvalCtx<'a> {
    pub ws: &'a mut LatentWorkspace,
    pub consts: &'a GraphConsts,
    pub cfg: &'a FitConfig,
    pub dof: f64,
    pub evals: usize,
}

impl<'a> EvalCtx<'a> {
    pub fn try_eval(&mut self, theta: &[f64]) -> Result<HyperEval> {
        self.evals += 1;
        let j = self.ws.n_diseases;
        let hs = HyperState::new(theta.to_vec(), j, self.dof)?;
        let cov = bartlett_cov(&hs)?;
        let omega = cov.precision()?;
        let info = self
            .ws
            .latent_mode(&omega, self.cfg.newton_tol, self.cfg.newton_max_iter)?;

        let ln_2pi = (2.0 * PI).ln();
        let jf = j as f64;
        let i_minus_c = (self.ws.n_areas - self.consts.n_components) as f64;
        // Exact triangular determinant of the Bartlett factorization.
        let logdet_omega = -2.0 * theta[..j].iter().sum::<f64>();
        // The ln(2pi) powers of the prior normalizer and of the Laplace
        // integral cancel except for the J flat-prior intercepts.
        let value = log_prior_hyper(&hs)
            + 0.5 * (i_minus_c * logdet_omega + jf * self.consts.logpdet_q)
            + info.loglik
            - 0.5 * info.quad
            + 0.5 * jf * ln_2pi
            - 0.5
                * (info.logdet_c + info.logdet_s_a - self.ws.cons.logdet_aat
                    + info.logdet_p_alpha);
        if !value.is_finite() {
            return Err(Error::numeric("hyperparameter objective not finite"));
        }
        Ok(HyperEval { value, info, omega })
    }

    /// Central-difference gradient of F = -value, shrinking the step when a
    /// perturbed point is infeasible.
    fn fd_grad(&mut self, x: &DVector<f64>) -> Result<DVector<f64>> {
        let p = x.len();
        let mut g = DVector::zeros(p);
        for k in 0..p {
            let mut h = 1e-4 * x[k].abs().max(1.0);
            let mut done = false;
            for _ in 0..4 {
                let mut xp = x.clone();
                xp[k] += h;
                let mut xm = x.clone();
                xm[k] -= h;
                let fp = self.try_eval(xp.as_slice());
                let fm = self.try_eval(xm.as_slice());
                if let (Ok(a), Ok(b)) = (fp, fm) {
                    g[k] = -(a.value - b.value) / (2.0 * h);
                    done = true;
                    break;
                }
                h *= 0.1;
            }
            if !done {
                return Err(Error::numeric(format!(
                    "objective gradient: both offsets of coordinate {k} infeasible"
                )));
            }
        }
        Ok(g)
    }
}

pub(crate) struct HyperOpt {
    pub x: DVector<f64>,
    pub value: f64,
    pub iterations: usize,
    pub grad_norm: f64,
    pub warnings: Vec<String>,
}

/// BFGS ascent on l(theta) from theta = 0 (identity between-disease
/// covariance), implemented as descent on F = -l with backtracking.
pub(crate) fn maximize_hyper(ctx: &mut EvalCtx) -> Result<HyperOpt> {
    let p = ctx.ws.n_diseases * (ctx.ws.n_diseases + 1) / 2;
    let mut x = DVector::zeros(p);
    let mut fx = -ctx.try_eval(x.as_slice())?.value;
    let mut g = ctx.fd_grad(&x)?;
    let mut hinv = DMatrix::identity(p, p);
    let mut warnings = Vec::new();
    let mut iterations = 0;

    loop {
        let grad_norm = g.amax();
        if grad_norm < ctx.cfg.hyper_tol {
            return Ok(HyperOpt {
                x,
                value: -fx,
                iterations,
                grad_norm,
                warnings,
            });
        }
        if iterations >= ctx.cfg.hyper_max_iter {
            warnings.push(format!(
                "hyperparameter optimization stopped at the iteration cap with \
                 gradient max-norm {grad_norm:.3e}"
            ));
            return Ok(HyperOpt {
                x,
                value: -fx,
                iterations,
                grad_norm,
                warnings,
            });
        }
        iterations += 1;

        let mut dir = -(&hinv * &g);
        let mut gd = g.dot(&dir);
        if !(gd < 0.0) {
            hinv = DMatrix::identity(p, p);
            dir = -g.clone();
            gd = -g.dot(&g);
        }

        let mut step = None;
        let mut t = 1.0;
        for _ in 0..40 {
            let xt = &x + &dir * t;
            if let Ok(ev) = ctx.try_eval(xt.as_slice()) {
                let ft = -ev.value;
                if ft <= fx + 1e-4 * t * gd {
                    step = Some((xt, ft));
                    break;
                }
            }
            t *= 0.5;
        }
        let Some((xt, ft)) = step else {
            warnings.push(format!(
                "hyperparameter line search stalled at gradient max-norm {grad_norm:.3e}; \
                 treating the current iterate as the mode"
            ));
            return Ok(HyperOpt {
                x,
                value: -fx,
                iterations,
                grad_norm,
                warnings,
            });
        };

        let gt = ctx.fd_grad(&xt)?;
        let s = &xt - &x;
        let y = &gt - &g;
        let sy = s.dot(&y);
        if sy > 1e-10 * s.norm() * y.norm() {
            let rho = 1.0 / sy;
            let eye = DMatrix::identity(p, p);
            let left = &eye - (&s * y.transpose()) * rho;
            hinv = &left * hinv * left.transpose() + (&s * s.transpose()) * rho;
        }
        x = xt;
        fx = ft;
        g = gt;
    }
}

/// Posterior covariance of theta from the central-difference Hessian at the
/// mode. If the curvature is not negative definite (flat or noisy
/// directions), its spectrum is clamped and a warning recorded.
pub(crate) fn hyper_covariance(
    ctx: &mut EvalCtx,
    x: &DVector<f64>,
    value_at_mode: f64,
    warnings: &mut Vec<String>,
) -> Result<DMatrix<f64>> {
    let p = x.len();
    let steps: Vec<f64> = (0..p).map(|k| 1e-3 * x[k].abs().max(1.0)).collect();
    let mut probe = |shifts: &[(usize, f64)]| -> Result<f64> {
        let mut xt = x.clone();
        for &(k, d) in shifts {
            xt[k] += d;
        }
        Ok(ctx.try_eval(xt.as_slice())?.value)
    };

    let mut hess = DMatrix::zeros(p, p);
    for k in 0..p {
        let vp = probe(&[(k, steps[k])])?;
        let vm = probe(&[(k, -steps[k])])?;
        hess[(k, k)] = (vp - 2.0 * value_at_mode + vm) / (steps[k] * steps[k]);
    }
    for k in 0..p {
        for l in (k + 1)..p {
            let pp = probe(&[(k, steps[k]), (l, steps[l])])?;
            let pm = probe(&[(k, steps[k]), (l, -steps[l])])?;
            let mp = probe(&[(k, -steps[k]), (l, steps[l])])?;
            let mm = probe(&[(k, -steps[k]), (l, -steps[l])])?;
            let v = (pp - pm - mp + mm) / (4.0 * steps[k] * steps[l]);
            hess[(k, l)] = v;
            hess[(l, k)] = v;
        }
    }

    let prec = -hess;
    let cov = match Cholesky::new(prec.clone()) {
        Some(c) => c.inverse(),
        None => {
            warnings.push(
                "hyperparameter curvature at the mode is not negative definite; \
                 eigenvalues clamped before inversion"
                    .into(),
            );
            let eig = prec.symmetric_eigen();
            let lmax = eig
                .eigenvalues
                .iter()
                .fold(0.0f64, |a, &b| a.max(b.abs()));
            let floor = (1e-6 * lmax).max(1e-12);
            let mut inv = DMatrix::zeros(p, p);
            for k in 0..p {
                let lambda = eig.eigenvalues[k].max(floor);
                let v = eig.eigenvectors.column(k);
                inv += v * v.transpose() / lambda;
            }
            inv
        }
    };
    let mut cov = cov;
    for a in 0..p {
        for b in (a + 1)..p {
            let v = 0.5 * (cov[(a, b)] + cov[(b, a)]);
            cov[(a, b)] = v;
            cov[(b, a)] = v;
        }
    }
    Ok(cov)
}

struct SampleSet {
    hyper: Vec<f64>,
    risks: Vec<f64>,
    params: Vec<f64>,
    retries: usize,
}

/// Joint posterior draws: theta from the Gaussian approximation at the
/// hyper mode, then (alpha, u) from the (exact-given-theta) constrained
/// Gaussian conditional at the refitted latent mode. A small retry budget
/// absorbs the occasional infeasible theta draw far in the tails.
fn sample_posterior(
    ctx: &mut EvalCtx,
    x_mode: &DVector<f64>,
    hyper_cov: &DMatrix<f64>,
) -> Result<SampleSet> {
    let cfg_draws = ctx.cfg.draws;
    let p = x_mode.len();
    let i = ctx.ws.n_areas;
    let j = ctx.ws.n_diseases;
    let cells = i * j;
    let n_params = param_names_len(j);
    let mut rng = seed::rng(ctx.cfg.seed, Purpose::Fit, 0);
    let l_hyper = Cholesky::new(hyper_cov.clone())
        .ok_or_else(|| Error::numeric("hyperparameter covariance not positive definite"))?
        .l();

    let mode_alpha = ctx.ws.alpha.clone();
    let mode_u = ctx.ws.u.clone();
    let mut hyper = Vec::with_capacity(cfg_draws * p);
    let mut risks = Vec::with_capacity(cfg_draws * cells);
    let mut params = Vec::with_capacity(cfg_draws * n_params);
    let mut retries = 0usize;
    const MAX_RETRIES: usize = 50;

    for _ in 0..cfg_draws {
        loop {
            let xi = DVector::from_fn(p, |_, _| rng.sample::<f64, _>(StandardNormal));
            let theta_s = x_mode + &l_hyper * xi;
            let attempt = (|| -> Result<(BetweenDiseaseCov, Vec<f64>, Vec<f64>)> {
                let hs = HyperState::new(theta_s.as_slice().to_vec(), j, ctx.dof)?;
                let cov = bartlett_cov(&hs)?;
                let omega = cov.precision()?;
                let info = ctx.ws.latent_mode(
                    &omega,
                    ctx.cfg.newton_tol,
                    ctx.cfg.newton_max_iter,
                )?;
                let (alpha_s, u_s) = ctx.ws.sample_latent(&info, &mut rng);
                Ok((cov, alpha_s, u_s))
            })();
            match attempt {
                Ok((cov, alpha_s, u_s)) => {
                    hyper.extend_from_slice(theta_s.as_slice());
                    for n in 0..cells {
                        risks.push((u_s[n] + alpha_s[n / i]).exp());
                    }
                    for d in 0..j {
                        params.push(cov.sigma2[d]);
                    }
                    for a in 0..j {
                        for b in (a + 1)..j {
                            params.push(cov.rho[(a, b)]);
                        }
                    }
                    params.extend_from_slice(&alpha_s);
                    break;
                }
                Err(e) => {
                    retries += 1;
                    ctx.ws.alpha.copy_from_slice(&mode_alpha);
                    ctx.ws.u.copy_from_slice(&mode_u);
                    if retries > MAX_RETRIES {
                        return Err(Error::numeric(format!(
                            "posterior sampling kept drawing infeasible hyperparameters: {e}"
                        )));
                    }
                }
            }
        }
    }
    Ok(SampleSet {
        hyper,
        risks,
        params,
        retries,
    })
}

fn param_names_len(j: usize) -> usize {
    2 * j + j * (j - 1) / 2
}

/// Fit the joint model on one (sub)domain.
pub fn fit_submodel(graph: &AreaGraph, panel: &CountPanel, cfg: &FitConfig) -> Result<SubmodelFit> {
    let started = Instant::now();
    if graph.n_areas() != panel.n_areas {
        return Err(Error::input(format!(
            "graph has {} areas but counts cover {}",
            graph.n_areas(),
            panel.n_areas
        )));
    }
    if graph.area_ids() != panel.area_ids.as_slice() {
        return Err(Error::input(
            "graph and count panel disagree on area identity or order",
        ));
    }
    if cfg.draws < 2 {
        return Err(Error::config("draws must be at least 2"));
    }
    let j = panel.n_diseases;
    let dof = cfg.dof.unwrap_or(j as f64 + 2.0);

    let q = structure_matrix(graph);
    let consts = GraphConsts::new(&q)?;
    let mut ws = LatentWorkspace::new(&q, panel)?;
    let mut ctx = EvalCtx {
        ws: &mut ws,
        consts: &consts,
        cfg,
        dof,
        evals: 0,
    };

    let opt = maximize_hyper(&mut ctx)?;
    let mut warnings = opt.warnings.clone();

    // Re-evaluate at the mode so the workspace state, curvature factor and
    // mode pieces all refer to it.
    let mode_eval = ctx.try_eval(opt.x.as_slice())?;
    let latent_mode = LatentState {
        alpha: ctx.ws.alpha.clone(),
        u: ctx.ws.u.clone(),
    };
    let latent_precision = ctx.ws.augmented_precision(&mode_eval.omega, &mode_eval.info.mu);
    let newton_iterations_at_mode = mode_eval.info.iterations;

    let hyper_cov = hyper_covariance(&mut ctx, &opt.x, mode_eval.value, &mut warnings)?;
    let samples = sample_posterior(&mut ctx, &opt.x, &hyper_cov)?;
    let evals = ctx.evals;

    let cells = panel.n_areas * j;
    let cpo = cpo_cells(&samples.risks, cfg.draws, panel)?;
    let summaries = risk_summaries(&samples.risks, cfg.draws, cells);
    let params = ParamDraws {
        names: param_names(&panel.disease_names),
        n_draws: cfg.draws,
        values: samples.params,
    };

    let hyper_mode = HyperState::new(opt.x.as_slice().to_vec(), j, dof)?;
    Ok(SubmodelFit {
        area_ids: panel.area_ids.clone(),
        disease_names: panel.disease_names.clone(),
        area_global: (0..panel.n_areas).collect(),
        n_areas: panel.n_areas,
        n_diseases: j,
        observed: panel.observed().to_vec(),
        expected: panel.expected().to_vec(),
        hyper_mode,
        hyper_cov,
        latent_mode,
        latent_precision,
        n_draws: cfg.draws,
        hyper_draws: samples.hyper,
        risk_draws: samples.risks,
        params,
        cpo,
        summaries,
        config: cfg.clone(),
        diagnostics: FitDiagnostics {
            hyper_iterations: opt.iterations,
            hyper_evals: evals,
            hyper_grad_norm: opt.grad_norm,
            objective_at_mode: opt.value,
            newton_iterations_at_mode,
            n_components: consts.n_components,
            sample_retries: samples.retries,
            elapsed_secs: started.elapsed().as_secs_f64(),
            warnings,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_graph, lattice};
    use crate::inference::newton::LatentWorkspace;

    fn to_dense(m: &CsMat<f64>) -> DMatrix<f64> {
        let d = m.to_dense();
        DMatrix::from_fn(m.rows(), m.cols(), |r, c| d[[r, c]])
    }

    fn test_panel(i: usize, j: usize) -> CountPanel {
        let area_ids = (0..i).map(|k| format!("a{k}")).collect();
        let names = (0..j).map(|d| format!("d{d}")).collect();
        let observed: Vec<u64> = (0..i * j).map(|n| ((n * 7 + 3) % 11 + 1) as u64).collect();
        let expected: Vec<f64> = (0..i * j).map(|n| 4.0 + (n % 3) as f64).collect();
        CountPanel::new(area_ids, names, observed, expected).unwrap()
    }

    #[test]
    fn logpdet_matches_dense_eigenvalues() {
        let cases: Vec<crate::graph::AreaGraph> = vec![
            lattice(4, 5),
            build_graph(
                &[("a", "b"), ("b", "c"), ("d", "e")],
                &["a", "b", "c", "d", "e", "f"]
                    .iter()
                    .map(|s| s.to_string())
                    .collect::<Vec<_>>(),
            )
            .unwrap(),
        ];
        for g in cases {
            let q = structure_matrix(&g);
            let consts = GraphConsts::new(&q).unwrap();
            let qd = to_dense(&q.q);
            let eig = qd.symmetric_eigen();
            let dense: f64 = eig
                .eigenvalues
                .iter()
                .filter(|&&l| l > 1e-9)
                .map(|l| l.ln())
                .sum();
            assert!(
                (consts.logpdet_q - dense).abs() < 1e-8,
                "{} vs {}",
                consts.logpdet_q,
                dense
            );
        }
    }

    /// The whole objective against a dense computation in explicit
    /// null-space coordinates: u = V z with V an orthonormal basis of the
    /// constraint null space, Newton on (z, alpha), then the textbook
    /// Laplace integral with dense determinants. No block elimination, no
    /// determinant identities.
    #[test]
    fn objective_matches_dense_marginalization() {
        // A lattice component plus an edge component: two components so the
        // constraint count, grounding and pdet corrections all participate.
        let mut edges: Vec<(String, String)> = Vec::new();
        let mut labels: Vec<String> = Vec::new();
        let g = lattice(3, 3);
        for r in 0..3 {
            for c in 0..3 {
                labels.push(format!("r{r}c{c}"));
            }
        }
        for &(a, b) in g.edges() {
            edges.push((labels[a].clone(), labels[b].clone()));
        }
        labels.push("x0".into());
        labels.push("x1".into());
        edges.push(("x0".into(), "x1".into()));
        let g = build_graph(
            &edges
                .iter()
                .map(|(a, b)| (a.as_str(), b.as_str()))
                .collect::<Vec<_>>(),
            &labels,
        )
        .unwrap();

        let q = structure_matrix(&g);
        let consts = GraphConsts::new(&q).unwrap();
        let panel = test_panel(11, 2);
        let mut ws = LatentWorkspace::new(&q, &panel).unwrap();
        let cfg = FitConfig::default();
        let mut ctx = EvalCtx {
            ws: &mut ws,
            consts: &consts,
            cfg: &cfg,
            dof: 4.0,
            evals: 0,
        };
        let theta = [0.2, -0.1, 0.3];
        let engine = ctx.try_eval(&theta).unwrap().value;

        // Dense oracle.
        let j = 2usize;
        let i = 11usize;
        let n = i * j;
        let hs = HyperState::new(theta.to_vec(), j, 4.0).unwrap();
        let cov = bartlett_cov(&hs).unwrap();
        let omega = cov.precision().unwrap();
        let qd = to_dense(&q.q);
        let p_mat = omega.kronecker(&qd);
        let sets = crate::cov::constraint_sets(&q, j);
        let nc = sets.len();
        let a_mat = DMatrix::from_fn(nc, n, |r, c| {
            if sets[r].contains(&c) {
                1.0
            } else {
                0.0
            }
        });
        // Orthonormal null-space basis via the projector's unit eigenspace.
        let aat_inv = (&a_mat * a_mat.transpose()).try_inverse().unwrap();
        let proj = DMatrix::identity(n, n) - a_mat.transpose() * aat_inv * &a_mat;
        let eig = proj.symmetric_eigen();
        let keep: Vec<usize> = (0..n).filter(|&k| eig.eigenvalues[k] > 0.5).collect();
        let dim_z = keep.len();
        assert_eq!(dim_z, n - nc);
        let v = DMatrix::from_fn(n, dim_z, |r, c| eig.eigenvectors[(r, keep[c])]);

        // Dense Newton in (z, alpha).
        let pv = v.transpose() * &p_mat * &v;
        let mut z: DVector<f64> = DVector::zeros(dim_z);
        let mut alpha: DVector<f64> = DVector::zeros(j);
        let mut hess = DMatrix::zeros(dim_z + j, dim_z + j);
        let mut g_star = 0.0;
        for it in 0..100 {
            let u = &v * &z;
            let mut mu = DVector::zeros(n);
            let mut loglik = 0.0;
            for k in 0..n {
                mu[k] = panel.expected()[k] * (u[k] + alpha[k / i]).exp();
                loglik += panel.observed()[k] as f64 * (u[k] + alpha[k / i]) - mu[k];
            }
            let mut grad_u = DVector::zeros(n);
            let mut grad_a = DVector::zeros(j);
            for k in 0..n {
                grad_u[k] = panel.observed()[k] as f64 - mu[k];
                grad_a[k / i] += grad_u[k];
            }
            let grad_z = v.transpose() * &grad_u - &pv * &z;
            let mut grad = DVector::zeros(dim_z + j);
            for k in 0..dim_z {
                grad[k] = grad_z[k];
            }
            for d in 0..j {
                grad[dim_z + d] = grad_a[d];
            }
            // Curvature blocks.
            let vm = DMatrix::from_fn(dim_z, n, |r, c| v[(c, r)] * mu[c]);
            let czz = &vm * &v + &pv;
            let cza = DMatrix::from_fn(dim_z, j, |r, d| {
                (0..i).map(|a| vm[(r, d * i + a)]).sum::<f64>()
            });
            for r in 0..dim_z {
                for c in 0..dim_z {
                    hess[(r, c)] = czz[(r, c)];
                }
                for d in 0..j {
                    hess[(r, dim_z + d)] = cza[(r, d)];
                    hess[(dim_z + d, r)] = cza[(r, d)];
                }
            }
            for d in 0..j {
                for e in 0..j {
                    hess[(dim_z + d, dim_z + e)] = 0.0;
                }
                hess[(dim_z + d, dim_z + d)] = (0..i).map(|a| mu[d * i + a]).sum::<f64>();
            }
            if grad.amax() < 1e-12 {
                g_star = loglik - 0.5 * (z.transpose() * &pv * &z)[(0, 0)];
                break;
            }
            assert!(it < 99, "dense oracle Newton did not converge");
            let step = hess.clone().lu().solve(&grad).unwrap();
            for k in 0..dim_z {
                z[k] += step[k];
            }
            for d in 0..j {
                alpha[d] += step[dim_z + d];
            }
        }

        let ln_2pi = (2.0 * PI).ln();
        let jf = j as f64;
        let i_minus_c = (i - consts.n_components) as f64;
        let logdet_omega = -2.0 * (theta[0] + theta[1]);
        let logdet_h = hess.cholesky().unwrap().determinant().ln();
        let oracle = log_prior_hyper(&hs)
            + 0.5 * (i_minus_c * logdet_omega + jf * consts.logpdet_q)
            - 0.5 * dim_z as f64 * ln_2pi
            + g_star
            + 0.5 * (dim_z + j) as f64 * ln_2pi
            - 0.5 * logdet_h;

        assert!(
            (engine - oracle).abs() < 1e-6,
            "engine {engine} vs oracle {oracle}"
        );
    }

    #[test]
    fn fit_smoke_test_on_small_lattice() {
        let g = lattice(3, 3);
        let mut panel = test_panel(9, 2);
        panel.area_ids = g.area_ids().to_vec();
        let cfg = FitConfig {
            draws: 60,
            seed: 11,
            ..FitConfig::default()
        };
        let fit = fit_submodel(&g, &panel, &cfg).unwrap();
        assert_eq!(fit.n_draws, 60);
        assert_eq!(fit.risk_draws.len(), 60 * 18);
        assert!(fit.risk_draws.iter().all(|r| r.is_finite() && *r > 0.0));
        assert_eq!(fit.params.names.len(), 5);
        assert_eq!(fit.params.names[2], "rho_d0_d1");
        for s in &fit.summaries {
            assert!(s.q025 <= s.median && s.median <= s.q975);
            assert!(s.sd > 0.0);
            assert!((0.0..=1.0).contains(&s.exceed_one));
        }
        for c in &fit.cpo {
            assert!(*c > 0.0 && *c <= 1.0);
        }
        for sum in crate::cov::constraint_sets(&structure_matrix(&g), 2)
            .iter()
            .map(|set| set.iter().map(|&k| fit.latent_mode.u[k]).sum::<f64>())
        {
            assert!(sum.abs() < 1e-8);
        }
        assert!(fit.diagnostics.hyper_grad_norm < 1e-4);
        assert!(fit.diagnostics.warnings.is_empty(), "{:?}", fit.diagnostics.warnings);
    }
}
