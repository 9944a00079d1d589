//! Areal adjacency graphs, their structure matrices, and domain partitions.
//!
//! The spatial domain is an undirected graph: one node per areal unit, one
//! edge per pair of neighbouring units. The intrinsic autoregressive prior
//! used by the inference engine is built from the graph Laplacian
//!
//! ```text
//!     Q = D_w - W
//! ```
//!
//! where W is the binary adjacency matrix and D_w the diagonal of node
//! degrees. Q is symmetric positive semi-definite with one null-space
//! dimension per connected component, which is where the per-component
//! sum-to-zero constraints of the latent field come from.
//!
//! Partitions split the domain into D subdomains for independent fitting.
//! A k-order plan grows every subdomain by k breadth-first hops so that
//! neighbouring information can flow across subdomain borders; the original
//! ("home") assignment stays authoritative when results are merged back.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use sprs::CsMat;

use crate::error::{Error, Result};

/// Undirected areal adjacency with external string labels.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AreaGraph {
    n_areas: usize,
    /// Canonical edge list: each pair stored once with a < b.
    edges: Vec<(usize, usize)>,
    /// Sorted neighbour lists, one per area.
    adjacency: Vec<Vec<usize>>,
    area_ids: Vec<String>,
}

impl AreaGraph {
    pub fn n_areas(&self) -> usize {
        self.n_areas
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.adjacency[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.adjacency[i].len()
    }

    pub fn area_ids(&self) -> &[String] {
        &self.area_ids
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.area_ids.iter().position(|l| l == label)
    }
}

/// Build a graph from unordered label pairs plus the authoritative label
/// order (which fixes node indices).
pub fn build_graph<S: AsRef<str>>(edge_list: &[(S, S)], labels: &[String]) -> Result<AreaGraph> {
    let n = labels.len();
    let mut index = HashMap::with_capacity(n);
    for (i, l) in labels.iter().enumerate() {
        if index.insert(l.as_str(), i).is_some() {
            return Err(Error::input(format!("duplicate area label {l:?}")));
        }
    }
    let mut canon: Vec<(usize, usize)> = Vec::with_capacity(edge_list.len());
    for (a, b) in edge_list {
        let (a, b) = (a.as_ref(), b.as_ref());
        let ia = *index
            .get(a)
            .ok_or_else(|| Error::input(format!("edge references unknown area {a:?}")))?;
        let ib = *index
            .get(b)
            .ok_or_else(|| Error::input(format!("edge references unknown area {b:?}")))?;
        if ia == ib {
            return Err(Error::input(format!("self-loop on area {a:?}")));
        }
        canon.push((ia.min(ib), ia.max(ib)));
    }
    canon.sort_unstable();
    canon.dedup();

    let mut adjacency = vec![Vec::new(); n];
    for &(a, b) in &canon {
        adjacency[a].push(b);
        adjacency[b].push(a);
    }
    for list in &mut adjacency {
        list.sort_unstable();
    }
    Ok(AreaGraph {
        n_areas: n,
        edges: canon,
        adjacency,
        area_ids: labels.to_vec(),
    })
}

/// Parse an edge-list file (UTF-8 text).
///
/// One `label_a<TAB>label_b` pair per line; `#` starts a comment; blank
/// lines are skipped. A line holding a single label declares an area with
/// no neighbours, which is how isolated areas enter the label universe.
/// Labels are indexed in order of first appearance.
pub fn parse_edge_list(text: &str) -> Result<(Vec<(String, String)>, Vec<String>)> {
    let mut labels: Vec<String> = Vec::new();
    let mut seen: HashMap<String, ()> = HashMap::new();
    let mut edges = Vec::new();
    let note = |l: &str, labels: &mut Vec<String>, seen: &mut HashMap<String, ()>| {
        if seen.insert(l.to_string(), ()).is_none() {
            labels.push(l.to_string());
        }
    };
    for (lineno, raw) in text.lines().enumerate() {
        let line = match raw.find('#') {
            Some(p) => &raw[..p],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split('\t').map(str::trim).filter(|s| !s.is_empty());
        match (parts.next(), parts.next(), parts.next()) {
            (Some(a), Some(b), None) => {
                note(a, &mut labels, &mut seen);
                note(b, &mut labels, &mut seen);
                edges.push((a.to_string(), b.to_string()));
            }
            (Some(a), None, None) => note(a, &mut labels, &mut seen),
            _ => {
                return Err(Error::input(format!(
                    "edge list line {}: expected `a<TAB>b`, got {raw:?}",
                    lineno + 1
                )))
            }
        }
    }
    Ok((edges, labels))
}

/// Structure matrix Q = D_w - W together with component information.
#[derive(Debug, Clone)]
pub struct StructureMatrix {
    /// Sparse symmetric Q in column-compressed form.
    pub q: CsMat<f64>,
    /// Connected components, each a sorted list of area indices, ordered by
    /// smallest member. Their count equals the rank deficiency of Q.
    pub components: Vec<Vec<usize>>,
    /// Component id per area.
    pub component_of: Vec<usize>,
}

impl StructureMatrix {
    pub fn n_components(&self) -> usize {
        self.components.len()
    }
}

/// Compute Q = D_w - W.
pub fn structure_matrix(g: &AreaGraph) -> StructureMatrix {
    let n = g.n_areas();
    let mut indptr = Vec::with_capacity(n + 1);
    let mut indices = Vec::new();
    let mut data = Vec::new();
    indptr.push(0usize);
    for k in 0..n {
        let deg = g.degree(k);
        let mut placed_diag = deg == 0;
        for &r in g.neighbors(k) {
            if !placed_diag && r > k {
                indices.push(k);
                data.push(deg as f64);
                placed_diag = true;
            }
            indices.push(r);
            data.push(-1.0);
        }
        if !placed_diag {
            indices.push(k);
            data.push(deg as f64);
        } else if deg == 0 {
            // Isolated area: keep an explicit zero diagonal so the matrix
            // still covers every area's row.
            indices.push(k);
            data.push(0.0);
        }
        indptr.push(indices.len());
    }
    let q = CsMat::new_csc((n, n), indptr, indices, data);
    let components = connected_components(g);
    let mut component_of = vec![0usize; n];
    for (c, members) in components.iter().enumerate() {
        for &i in members {
            component_of[i] = c;
        }
    }
    StructureMatrix {
        q,
        components,
        component_of,
    }
}

/// Connected components as sorted index lists, ordered by smallest member.
pub fn connected_components(g: &AreaGraph) -> Vec<Vec<usize>> {
    let n = g.n_areas();
    let mut comp = vec![usize::MAX; n];
    let mut out: Vec<Vec<usize>> = Vec::new();
    let mut stack = Vec::new();
    for start in 0..n {
        if comp[start] != usize::MAX {
            continue;
        }
        let c = out.len();
        let mut members = vec![start];
        comp[start] = c;
        stack.push(start);
        while let Some(v) = stack.pop() {
            for &w in g.neighbors(v) {
                if comp[w] == usize::MAX {
                    comp[w] = c;
                    members.push(w);
                    stack.push(w);
                }
            }
        }
        members.sort_unstable();
        out.push(members);
    }
    out
}

/// Assignment of areas to subdomains plus the k-order expanded member sets.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PartitionPlan {
    pub n_subdomains: usize,
    /// Home subdomain (0-based) per area; every area has exactly one.
    pub home: Vec<usize>,
    /// Expansion order.
    pub order: usize,
    /// Per-subdomain sorted member lists after k-order growth.
    pub expanded: Vec<Vec<usize>>,
}

impl PartitionPlan {
    /// The trivial plan: one subdomain holding the whole domain.
    pub fn single(n_areas: usize) -> Self {
        PartitionPlan {
            n_subdomains: 1,
            home: vec![0; n_areas],
            order: 0,
            expanded: vec![(0..n_areas).collect()],
        }
    }
}

/// Grow each home set by k breadth-first hops on the full graph.
pub fn expand_partition(g: &AreaGraph, home: &[usize], k: usize) -> Result<PartitionPlan> {
    let n = g.n_areas();
    if home.len() != n {
        return Err(Error::input(format!(
            "partition covers {} areas but the graph has {n}",
            home.len()
        )));
    }
    let d = match home.iter().max() {
        Some(&m) => m + 1,
        None => return Err(Error::input("empty partition")),
    };
    let mut counts = vec![0usize; d];
    for &h in home {
        counts[h] += 1;
    }
    if let Some(empty) = counts.iter().position(|&c| c == 0) {
        return Err(Error::input(format!(
            "subdomain {} has no home areas",
            empty + 1
        )));
    }

    let mut expanded = Vec::with_capacity(d);
    for sub in 0..d {
        // Multi-source BFS from the home set, depth-limited to k.
        let mut dist = vec![usize::MAX; n];
        let mut frontier: Vec<usize> = (0..n).filter(|&i| home[i] == sub).collect();
        for &i in &frontier {
            dist[i] = 0;
        }
        let mut depth = 0;
        while depth < k && !frontier.is_empty() {
            let mut next = Vec::new();
            for &v in &frontier {
                for &w in g.neighbors(v) {
                    if dist[w] == usize::MAX {
                        dist[w] = depth + 1;
                        next.push(w);
                    }
                }
            }
            frontier = next;
            depth += 1;
        }
        let members: Vec<usize> = (0..n).filter(|&i| dist[i] != usize::MAX).collect();
        expanded.push(members);
    }
    Ok(PartitionPlan {
        n_subdomains: d,
        home: home.to_vec(),
        order: k,
        expanded,
    })
}

/// Parse a partition file: one `label<TAB>subdomain_id` per line, `#`
/// comments. Subdomain ids are arbitrary strings mapped to consecutive
/// indices in order of first appearance.
pub fn parse_partition(text: &str, g: &AreaGraph) -> Result<Vec<usize>> {
    let n = g.n_areas();
    let mut index = HashMap::with_capacity(n);
    for (i, l) in g.area_ids().iter().enumerate() {
        index.insert(l.as_str(), i);
    }
    let mut sub_ids: Vec<String> = Vec::new();
    let mut home = vec![usize::MAX; n];
    for (lineno, raw) in text.lines().enumerate() {
        let line = match raw.find('#') {
            Some(p) => &raw[..p],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split('\t').map(str::trim).filter(|s| !s.is_empty());
        let (label, sub) = match (parts.next(), parts.next(), parts.next()) {
            (Some(a), Some(s), None) => (a, s),
            _ => {
                return Err(Error::input(format!(
                    "partition line {}: expected `label<TAB>subdomain`, got {raw:?}",
                    lineno + 1
                )))
            }
        };
        let i = *index
            .get(label)
            .ok_or_else(|| Error::input(format!("partition references unknown area {label:?}")))?;
        if home[i] != usize::MAX {
            return Err(Error::input(format!(
                "area {label:?} assigned to more than one subdomain"
            )));
        }
        let sub_idx = match sub_ids.iter().position(|s| s == sub) {
            Some(p) => p,
            None => {
                sub_ids.push(sub.to_string());
                sub_ids.len() - 1
            }
        };
        home[i] = sub_idx;
    }
    if let Some(missing) = home.iter().position(|&h| h == usize::MAX) {
        return Err(Error::input(format!(
            "area {:?} missing from the partition file",
            g.area_ids()[missing]
        )));
    }
    Ok(home)
}

/// Induced subgraph on `members`, with a back-map to global indices.
#[derive(Debug, Clone)]
pub struct SubGraph {
    pub graph: AreaGraph,
    /// Local index -> global index.
    pub global_index: Vec<usize>,
}

pub fn subgraph(g: &AreaGraph, members: &[usize]) -> Result<SubGraph> {
    if members.is_empty() {
        return Err(Error::input("subgraph over an empty member set"));
    }
    let mut sorted = members.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    if *sorted.last().unwrap() >= g.n_areas() {
        return Err(Error::input("subgraph member index out of range"));
    }
    let mut local = HashMap::with_capacity(sorted.len());
    for (li, &gi) in sorted.iter().enumerate() {
        local.insert(gi, li);
    }
    let mut edges = Vec::new();
    for &(a, b) in g.edges() {
        if let (Some(&la), Some(&lb)) = (local.get(&a), local.get(&b)) {
            edges.push((la.min(lb), la.max(lb)));
        }
    }
    let mut adjacency = vec![Vec::new(); sorted.len()];
    for &(a, b) in &edges {
        adjacency[a].push(b);
        adjacency[b].push(a);
    }
    for list in &mut adjacency {
        list.sort_unstable();
    }
    let area_ids = sorted.iter().map(|&gi| g.area_ids()[gi].clone()).collect();
    Ok(SubGraph {
        graph: AreaGraph {
            n_areas: sorted.len(),
            edges,
            adjacency,
            area_ids,
        },
        global_index: sorted,
    })
}

/// Regular side-by-side lattice with rook adjacency, labelled `r<row>c<col>`.
/// Handy for simulations and examples; rows and columns are 0-based.
pub fn lattice(rows: usize, cols: usize) -> AreaGraph {
    let label = |r: usize, c: usize| format!("r{r}c{c}");
    let mut labels = Vec::with_capacity(rows * cols);
    let mut edges: Vec<(String, String)> = Vec::new();
    for r in 0..rows {
        for c in 0..cols {
            labels.push(label(r, c));
            if c + 1 < cols {
                edges.push((label(r, c), label(r, c + 1)));
            }
            if r + 1 < rows {
                edges.push((label(r, c), label(r + 1, c)));
            }
        }
    }
    build_graph(&edges, &labels).expect("lattice construction cannot fail")
}
