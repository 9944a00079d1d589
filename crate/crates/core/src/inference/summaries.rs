//! Posterior summaries computed from risk draws.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inference::CountPanel;
use crate::stats::{log_sum_exp, mean, poisson_ln_pmf, quantile_sorted, sd};

/// Per-cell posterior summary of the relative risk.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct RiskSummary {
    pub mean: f64,
    pub median: f64,
    pub sd: f64,
    pub q025: f64,
    pub q975: f64,
    /// Posterior probability that the risk exceeds one.
    pub exceed_one: f64,
}

/// Summaries for every cell from draw-major risk draws
/// (`draws[s * cells + n]`).
pub fn risk_summaries(draws: &[f64], n_draws: usize, cells: usize) -> Vec<RiskSummary> {
    assert_eq!(draws.len(), n_draws * cells);
    let mut out = Vec::with_capacity(cells);
    let mut col = vec![0.0; n_draws];
    for n in 0..cells {
        for s in 0..n_draws {
            col[s] = draws[s * cells + n];
        }
        let m = mean(&col);
        let dev = sd(&col);
        let exceed = col.iter().filter(|&&r| r > 1.0).count() as f64 / n_draws as f64;
        col.sort_by(|a, b| a.partial_cmp(b).unwrap());
        out.push(RiskSummary {
            mean: m,
            median: quantile_sorted(&col, 0.5),
            sd: dev,
            q025: quantile_sorted(&col, 0.025),
            q975: quantile_sorted(&col, 0.975),
            exceed_one: exceed,
        });
    }
    out
}

/// Leave-one-out predictive density per cell by the harmonic-mean identity:
/// CPO_n = [ S^{-1} sum_s p(O_n | r_ns)^{-1} ]^{-1}, evaluated in log space
/// and clamped into (0, 1].
pub fn cpo_cells(draws: &[f64], n_draws: usize, panel: &CountPanel) -> Result<Vec<f64>> {
    let cells = panel.n_areas * panel.n_diseases;
    assert_eq!(draws.len(), n_draws * cells);
    let mut out = Vec::with_capacity(cells);
    let mut neg_lp = vec![0.0; n_draws];
    for n in 0..cells {
        let o = panel.observed()[n];
        let e = panel.expected()[n];
        let mut all_impossible = true;
        for s in 0..n_draws {
            let lp = poisson_ln_pmf(o, e * draws[s * cells + n]);
            if lp.is_finite() {
                all_impossible = false;
            }
            neg_lp[s] = -lp;
        }
        if all_impossible {
            return Err(Error::numeric(format!(
                "predictive density vanished in every draw for area {:?}, disease {:?}",
                panel.area_ids[n % panel.n_areas],
                panel.disease_names[n / panel.n_areas]
            )));
        }
        let log_cpo = (n_draws as f64).ln() - log_sum_exp(&neg_lp);
        let cpo = log_cpo.exp().min(1.0).max(f64::MIN_POSITIVE);
        out.push(cpo);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn summaries_match_hand_values() {
        // Two cells, four draws each, chosen so every summary is exact.
        let draws = vec![
            1.0, 10.0, //
            2.0, 20.0, //
            3.0, 30.0, //
            4.0, 40.0,
        ];
        let s = risk_summaries(&draws, 4, 2);
        assert_eq!(s[0].median, 2.5);
        assert_eq!(s[0].mean, 2.5);
        assert_eq!(s[1].median, 25.0);
        assert!((s[0].sd - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
        // h = (n-1)p = 0.075 for q025: between first and second order stats.
        assert!((s[0].q025 - (1.0 + 0.075 * 1.0)).abs() < 1e-12);
        assert_eq!(s[0].exceed_one, 0.75);
        assert_eq!(s[1].exceed_one, 1.0);
    }

    #[test]
    fn cpo_recovers_plain_average_when_density_is_constant() {
        // If every draw gives the same risk the harmonic mean is that
        // density itself.
        let panel = CountPanel::new(
            vec!["a".into()],
            vec!["d".into()],
            vec![3],
            vec![2.0],
        )
        .unwrap();
        let draws = vec![1.5; 8];
        let cpo = cpo_cells(&draws, 8, &panel).unwrap();
        let expect = poisson_ln_pmf(3, 3.0).exp();
        assert!((cpo[0] - expect).abs() < 1e-12);
    }

    #[test]
    fn cpo_is_harmonic_not_arithmetic() {
        let panel = CountPanel::new(
            vec!["a".into()],
            vec!["d".into()],
            vec![2],
            vec![1.0],
        )
        .unwrap();
        let draws = vec![0.5, 4.0];
        let cpo = cpo_cells(&draws, 2, &panel).unwrap();
        let p1 = poisson_ln_pmf(2, 0.5).exp();
        let p2 = poisson_ln_pmf(2, 4.0).exp();
        let harmonic = 2.0 / (1.0 / p1 + 1.0 / p2);
        assert!((cpo[0] - harmonic).abs() < 1e-14);
        assert!((cpo[0] - 0.5 * (p1 + p2)).abs() > 1e-3);
    }

    #[test]
    fn cpo_errors_when_every_draw_is_impossible() {
        // Positive count with risk 0 in all draws: density identically zero.
        let panel = CountPanel::new(
            vec!["a".into()],
            vec!["d".into()],
            vec![2],
            vec![1.0],
        )
        .unwrap();
        let draws = vec![0.0, 0.0];
        assert!(cpo_cells(&draws, 2, &panel).is_err());
    }
}
