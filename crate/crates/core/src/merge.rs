//! Recombining per-subdomain fits into study-region results.
//!
//! Risks are local quantities: each area's posterior lives in every
//! subdomain whose expanded member set contains the area. Two merge rules
//! are offered. Ownership keeps, for each area, the draws from the
//! subdomain that owns it (its home), which is exact for disjoint
//! partitions and the default. The mixture rule pools the draws of every
//! subdomain containing the area with weights proportional to that
//! subdomain's leave-one-out predictive density for the cell, which
//! rewards the fit that explains the cell best.
//!
//! Shared parameters (between-disease variances and correlations,
//! intercepts) are global quantities estimated once per subdomain; their
//! subposterior draws are pooled by consensus averaging with inverse
//! variance weights.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::PartitionPlan;
use crate::inference::{cpo_cells, risk_summaries, CountPanel, ParamDraws, RiskSummary, SubmodelFit};
use crate::seed::{self, Purpose};
use crate::stats::{mean, poisson_ln_pmf, variance};
use rand::Rng;

/// How per-area risk posteriors are combined across subdomains.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RiskMerge {
    /// Each area keeps the draws of its home subdomain.
    Ownership,
    /// Per-cell mixture over all containing subdomains, weighted by CPO.
    Mixture,
}

#[derive(Debug, Clone)]
pub struct MergeOptions {
    pub strategy: RiskMerge,
    /// Root seed for mixture resampling (unused by ownership).
    pub seed: u64,
}

impl Default for MergeOptions {
    fn default() -> Self {
        MergeOptions {
            strategy: RiskMerge::Ownership,
            seed: 0,
        }
    }
}

/// Model comparison measures over the full region, computed from merged
/// risk draws against the observed counts.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Criteria {
    /// Posterior mean of the negative log-likelihood (natural units).
    pub mean_neg_log_lik: f64,
    /// Posterior mean deviance, -2 log p averaged over draws.
    pub mean_deviance: f64,
    /// Deviance at the posterior mean risks.
    pub deviance_at_mean: f64,
    /// Effective number of parameters, mean_deviance - deviance_at_mean.
    pub p_d: f64,
    pub dic: f64,
    pub p_waic: f64,
    pub waic: f64,
}

/// Full-region results after merging.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MergedResult {
    pub area_ids: Vec<String>,
    pub disease_names: Vec<String>,
    pub n_areas: usize,
    pub n_diseases: usize,
    pub n_draws: usize,
    /// Merged risk draws, draw-major over disease-major cells.
    pub risk_draws: Vec<f64>,
    pub summaries: Vec<RiskSummary>,
    pub cpo: Vec<f64>,
    /// Consensus draws of the shared parameters.
    pub params: ParamDraws,
    pub criteria: Criteria,
    pub warnings: Vec<String>,
}

/// Merge subdomain fits over a partition plan into study-region results.
///
/// `panel` is the full-region panel the partition was taken from; it fixes
/// the global area order and supplies the counts for the comparison
/// criteria.
pub fn merge_fits(
    plan: &PartitionPlan,
    fits: &[SubmodelFit],
    panel: &CountPanel,
    opts: &MergeOptions,
) -> Result<MergedResult> {
    if fits.len() != plan.n_subdomains {
        return Err(Error::input(format!(
            "plan has {} subdomains but {} fits were supplied",
            plan.n_subdomains,
            fits.len()
        )));
    }
    if plan.home.len() != panel.n_areas {
        return Err(Error::input(
            "partition plan and count panel cover different numbers of areas",
        ));
    }
    let n_draws = fits[0].n_draws;
    let j = panel.n_diseases;
    let i_glob = panel.n_areas;
    for (d, f) in fits.iter().enumerate() {
        if f.n_draws != n_draws {
            return Err(Error::input(format!(
                "subdomain {d} has {} draws, expected {n_draws}",
                f.n_draws
            )));
        }
        if f.disease_names != panel.disease_names {
            return Err(Error::input(format!("subdomain {d} fit covers different diseases")));
        }
        if f.area_global.len() != f.n_areas {
            return Err(Error::input(format!("subdomain {d} fit has no global area mapping")));
        }
        for (li, &gi) in f.area_global.iter().enumerate() {
            if gi >= i_glob || f.area_ids[li] != panel.area_ids[gi] {
                return Err(Error::input(format!(
                    "subdomain {d} area {:?} does not line up with the global panel",
                    f.area_ids.get(li)
                )));
            }
        }
    }

    // Per-fit map global area -> local index.
    let local_of: Vec<Vec<Option<usize>>> = fits
        .iter()
        .map(|f| {
            let mut m = vec![None; i_glob];
            for (li, &gi) in f.area_global.iter().enumerate() {
                m[gi] = Some(li);
            }
            m
        })
        .collect();
    for (gi, &owner) in plan.home.iter().enumerate() {
        if local_of[owner][gi].is_none() {
            return Err(Error::input(format!(
                "area {:?} is owned by subdomain {owner} but missing from its fit",
                panel.area_ids[gi]
            )));
        }
    }

    let cells = i_glob * j;
    let mut warnings = Vec::new();
    let mut risk_draws = vec![0.0f64; n_draws * cells];
    match opts.strategy {
        RiskMerge::Ownership => {
            for gi in 0..i_glob {
                let owner = plan.home[gi];
                let f = &fits[owner];
                let li = local_of[owner][gi].expect("checked above");
                let cells_d = f.n_areas * j;
                for dis in 0..j {
                    let tgt = dis * i_glob + gi;
                    let src = dis * f.n_areas + li;
                    for s in 0..n_draws {
                        risk_draws[s * cells + tgt] = f.risk_draws[s * cells_d + src];
                    }
                }
            }
        }
        RiskMerge::Mixture => {
            for gi in 0..i_glob {
                let containing: Vec<usize> = (0..fits.len())
                    .filter(|&d| local_of[d][gi].is_some())
                    .collect();
                for dis in 0..j {
                    let tgt = dis * i_glob + gi;
                    let weights: Vec<f64> = containing
                        .iter()
                        .map(|&d| {
                            let li = local_of[d][gi].unwrap();
                            fits[d].cpo[dis * fits[d].n_areas + li]
                        })
                        .collect();
                    let total: f64 = weights.iter().sum();
                    if !(total > 0.0) {
                        return Err(Error::numeric(format!(
                            "every containing subdomain has zero predictive weight for \
                             area {:?}, disease {:?}",
                            panel.area_ids[gi], panel.disease_names[dis]
                        )));
                    }
                    // Seeded per cell so the result is independent of
                    // worker scheduling and area traversal order.
                    let mut rng = seed::rng(opts.seed, Purpose::Mixture, tgt as u64);
                    for s in 0..n_draws {
                        let pick = rng.gen::<f64>() * total;
                        let mut acc = 0.0;
                        let mut chosen = *containing.last().unwrap();
                        for (k, &d) in containing.iter().enumerate() {
                            acc += weights[k];
                            if pick < acc {
                                chosen = d;
                                break;
                            }
                        }
                        let f = &fits[chosen];
                        let li = local_of[chosen][gi].unwrap();
                        let t = rng.gen_range(0..n_draws);
                        risk_draws[s * cells + tgt] =
                            f.risk_draws[t * (f.n_areas * j) + dis * f.n_areas + li];
                    }
                }
            }
        }
    }

    let subposteriors: Vec<&ParamDraws> = fits.iter().map(|f| &f.params).collect();
    let (params, mut cmc_warnings) = cmc_combine(&subposteriors)?;
    warnings.append(&mut cmc_warnings);

    let summaries = risk_summaries(&risk_draws, n_draws, cells);
    let cpo = cpo_cells(&risk_draws, n_draws, panel)?;
    let criteria = deviance_criteria(&risk_draws, n_draws, panel.observed(), panel.expected())?;

    Ok(MergedResult {
        area_ids: panel.area_ids.clone(),
        disease_names: panel.disease_names.clone(),
        n_areas: i_glob,
        n_diseases: j,
        n_draws,
        risk_draws,
        summaries,
        cpo,
        params,
        criteria,
        warnings,
    })
}

/// Consensus combination of subposterior draws: draw s of the combined
/// posterior is the inverse-variance weighted average of draw s from every
/// subdomain. A single subdomain passes through verbatim. A parameter with
/// zero variance in some subdomain (it can happen when a subdomain pins a
/// parameter exactly) falls back to that subdomain's draws with a warning,
/// since its precision weight would be infinite.
pub fn cmc_combine(sets: &[&ParamDraws]) -> Result<(ParamDraws, Vec<String>)> {
    if sets.is_empty() {
        return Err(Error::input("no subposteriors to combine"));
    }
    if sets.len() == 1 {
        return Ok(((*sets[0]).clone(), Vec::new()));
    }
    let names = sets[0].names.clone();
    let n_draws = sets[0].n_draws;
    for (d, s) in sets.iter().enumerate() {
        if s.names != names {
            return Err(Error::input(format!(
                "subposterior {d} has different parameter names"
            )));
        }
        if s.n_draws != n_draws {
            return Err(Error::input(format!(
                "subposterior {d} has {} draws, expected {n_draws}",
                s.n_draws
            )));
        }
    }
    if n_draws < 2 {
        return Err(Error::input("consensus combination needs at least two draws"));
    }

    let p = names.len();
    let mut warnings = Vec::new();
    let mut values = vec![0.0f64; n_draws * p];
    for k in 0..p {
        let cols: Vec<Vec<f64>> = sets.iter().map(|s| s.column(k)).collect();
        let vars: Vec<f64> = cols.iter().map(|c| variance(c)).collect();
        if let Some(d0) = vars.iter().position(|&v| v == 0.0) {
            warnings.push(format!(
                "parameter {:?} has zero variance in subdomain {d0}; using its draws directly",
                names[k]
            ));
            for s in 0..n_draws {
                values[s * p + k] = cols[d0][s];
            }
            continue;
        }
        let inv: Vec<f64> = vars.iter().map(|v| 1.0 / v).collect();
        let total: f64 = inv.iter().sum();
        for s in 0..n_draws {
            let mut acc = 0.0;
            for (d, c) in cols.iter().enumerate() {
                acc += inv[d] / total * c[s];
            }
            values[s * p + k] = acc;
        }
    }
    Ok((
        ParamDraws {
            names,
            n_draws,
            values,
        },
        warnings,
    ))
}

/// DIC and WAIC from risk draws against observed counts. Densities include
/// their log-factorial terms, so the absolute values are the conventional
/// ones; comparisons on the same data are unaffected either way.
pub fn deviance_criteria(
    risk_draws: &[f64],
    n_draws: usize,
    observed: &[u64],
    expected: &[f64],
) -> Result<Criteria> {
    let cells = observed.len();
    if expected.len() != cells || risk_draws.len() != n_draws * cells {
        return Err(Error::input("criteria inputs have inconsistent shapes"));
    }
    if n_draws < 2 {
        return Err(Error::input("criteria need at least two draws"));
    }

    // Per-draw total log-likelihood.
    let mut total_lp = vec![0.0f64; n_draws];
    // Per-cell log densities for WAIC.
    let mut cell_lp = vec![0.0f64; n_draws];
    let mut lppd = 0.0;
    let mut p_waic = 0.0;
    for n in 0..cells {
        for s in 0..n_draws {
            let lp = poisson_ln_pmf(observed[n], expected[n] * risk_draws[s * cells + n]);
            cell_lp[s] = lp;
            total_lp[s] += lp;
        }
        lppd += crate::stats::log_sum_exp(&cell_lp) - (n_draws as f64).ln();
        p_waic += variance(&cell_lp);
    }
    if total_lp.iter().any(|lp| !lp.is_finite()) {
        return Err(Error::numeric(
            "a posterior draw assigns zero likelihood to the observed counts",
        ));
    }

    let mean_lp = mean(&total_lp);
    let mean_deviance = -2.0 * mean_lp;

    let mut dev_at_mean = 0.0;
    for n in 0..cells {
        let rbar = (0..n_draws).map(|s| risk_draws[s * cells + n]).sum::<f64>() / n_draws as f64;
        dev_at_mean += poisson_ln_pmf(observed[n], expected[n] * rbar);
    }
    let deviance_at_mean = -2.0 * dev_at_mean;
    let p_d = mean_deviance - deviance_at_mean;

    Ok(Criteria {
        mean_neg_log_lik: -mean_lp,
        mean_deviance,
        deviance_at_mean,
        p_d,
        dic: mean_deviance + p_d,
        p_waic,
        waic: -2.0 * (lppd - p_waic),
    })
}
