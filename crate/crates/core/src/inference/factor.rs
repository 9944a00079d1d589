//! Sparse LDL' factorization wrapper.
//!
//! Thin layer over sprs-ldl that adds the two things the engine needs
//! beyond solving: the log-determinant of an SPD matrix and exact draws
//! from N(0, C^{-1}) through the factor. The fill-reducing permutation is
//! computed once; repeated factorizations of matrices with the same pattern
//! reuse the symbolic analysis through `update`.

use rand::Rng;
use rand_distr::StandardNormal;
use sprs::{CsMat, FillInReduction, PermOwnedI, SymmetryCheck};
use sprs_ldl::{ldl_ltsolve, Ldl, LdlNumeric};

use crate::error::{Error, Result};

pub struct SparseChol {
    numeric: LdlNumeric<f64, usize>,
    perm: PermOwnedI<usize>,
    n: usize,
}

impl SparseChol {
    /// Factor a symmetric positive definite matrix with reverse
    /// Cuthill-McKee ordering. Symmetry is checked here, once; later
    /// `update` calls trust the caller to keep the same pattern.
    pub fn new(mat: &CsMat<f64>) -> Result<Self> {
        let builder = Ldl::new()
            .check_symmetry(SymmetryCheck::CheckSymmetry)
            .fill_in_reduction(FillInReduction::ReverseCuthillMcKee);
        let perm = builder.perm(mat.view());
        let numeric = LdlNumeric::new_perm(mat.view(), perm.owned_clone(), SymmetryCheck::CheckSymmetry)
            .map_err(|e| Error::numeric(format!("sparse factorization failed: {e:?}")))?;
        Ok(SparseChol {
            numeric,
            perm,
            n: mat.rows(),
        })
    }

    /// Refactor a matrix with the same non-zero pattern.
    pub fn update(&mut self, mat: &CsMat<f64>) -> Result<()> {
        self.numeric
            .update(mat.view())
            .map_err(|e| Error::numeric(format!("sparse refactorization failed: {e:?}")))
    }

    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        self.numeric.solve(rhs)
    }

    /// log det of the factored matrix; errors if any pivot is non-positive,
    /// which means the matrix was not positive definite.
    pub fn log_det(&self) -> Result<f64> {
        let mut acc = 0.0;
        for &d in self.numeric.d() {
            if d <= 0.0 || !d.is_finite() {
                return Err(Error::numeric(format!(
                    "matrix not positive definite (pivot {d})"
                )));
            }
            acc += d.ln();
        }
        Ok(acc)
    }

    /// Draw from N(0, C^{-1}) where C is the factored matrix.
    ///
    /// With P C P' = L D L', the vector P' L'^{-T} ... more precisely
    /// y = P' L'^{-1} D^{-1/2} xi has covariance P' (L D L')^{-1} P = C^{-1}.
    pub fn sample_zero_mean<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        let d = self.numeric.d();
        let mut w: Vec<f64> = (0..self.n)
            .map(|k| {
                let xi: f64 = rng.sample(StandardNormal);
                xi / d[k].sqrt()
            })
            .collect();
        ldl_ltsolve(&self.numeric.l(), &mut w);
        let mut y = vec![0.0; self.n];
        for (k, &wk) in w.iter().enumerate() {
            y[self.perm.at(k)] = wk;
        }
        y
    }
}
