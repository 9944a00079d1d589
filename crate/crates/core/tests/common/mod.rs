//! Shared helpers for the integration suites.

pub mod mcmc;

use mvrisk::graph::AreaGraph;
use mvrisk::inference::CountPanel;

/// Deterministic counts at a realistic registry scale: expected counts
/// between 15 and 30 with observed counts implying relative risks roughly
/// in [0.7, 1.5]. Same panel on every run.
pub fn registry_panel(g: &AreaGraph, n_diseases: usize) -> CountPanel {
    let i = g.n_areas();
    let names: Vec<String> = (0..n_diseases).map(|d| format!("d{d}")).collect();
    let risk_cycle = [1.30, 0.72, 1.00, 1.48, 0.85, 1.12, 0.95, 1.22];
    let mut observed = Vec::with_capacity(i * n_diseases);
    let mut expected = Vec::with_capacity(i * n_diseases);
    for n in 0..i * n_diseases {
        let e = 15.0 + (n % 4) as f64 * 5.0;
        let r = risk_cycle[n % risk_cycle.len()];
        observed.push((e * r).round() as u64);
        expected.push(e);
    }
    CountPanel::new(g.area_ids().to_vec(), names, observed, expected).unwrap()
}

/// Path graph with `n` areas labelled p0..p(n-1).
pub fn path_graph(n: usize) -> AreaGraph {
    let labels: Vec<String> = (0..n).map(|k| format!("p{k}")).collect();
    let edges: Vec<(String, String)> = (1..n)
        .map(|k| (format!("p{}", k - 1), format!("p{k}")))
        .collect();
    mvrisk::graph::build_graph(&edges, &labels).unwrap()
}

/// Cycle graph with `n` areas labelled c0..c(n-1).
pub fn cycle_graph(n: usize) -> AreaGraph {
    let labels: Vec<String> = (0..n).map(|k| format!("c{k}")).collect();
    let mut edges: Vec<(String, String)> = (1..n)
        .map(|k| (format!("c{}", k - 1), format!("c{k}")))
        .collect();
    edges.push((format!("c{}", n - 1), "c0".to_string()));
    mvrisk::graph::build_graph(&edges, &labels).unwrap()
}
