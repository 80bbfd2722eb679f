//! Cluster decomposition of scale-labelled trees.
//!
//! A cluster on scale n is a maximal connected set of nodes and lines with
//! all line scales <= n and at least one line on scale n. Self-energy
//! clusters have one entering and one exiting line, interior scales at
//! least two below the external ones, and close external momenta with equal
//! small divisors (decided on the lattice, never by value comparison).

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::ModelView;
use crate::scalar::RealScalar;
use crate::trees::{LabeledTree, NodeKind};
use crate::{Mode, Sign, Variant};

/// A tree with one admissible scale per line; the line exiting node v is
/// indexed by v, the root node's line included.
#[derive(Clone, Debug)]
pub struct ScaledTree {
    pub tree: std::rc::Rc<LabeledTree>,
    pub scales: Vec<i32>,
}

#[derive(Clone, Debug)]
pub struct Cluster {
    /// Node ids inside the cluster.
    pub nodes: Vec<usize>,
    /// Interior lines, as the ids of the nodes they exit.
    pub lines: Vec<usize>,
    /// Max interior line scale.
    pub scale: i32,
    /// Lines entering from outside (ids of the exiting nodes below).
    pub entering: Vec<usize>,
    /// Line leaving the cluster: the id of the node it exits.
    pub exiting: Option<usize>,
    /// Sum of internal-node orders.
    pub order: usize,
}

#[derive(Clone, Debug)]
pub struct SelfEnergyFlag {
    pub cluster: usize,
    /// Interior lines on the path from the entering line to the exiting one
    /// (node ids; empty when the entering line reaches the exit node).
    pub path: Vec<usize>,
    pub e_class: bool,
    pub depth: usize,
    /// min of the two external scales
    pub n_t: i32,
}

#[derive(Clone, Debug, Default)]
pub struct Decomposition {
    pub clusters: Vec<Cluster>,
    pub self_energy: Vec<SelfEnergyFlag>,
    /// Node ids whose exiting line both exits one self-energy cluster and
    /// enters another.
    pub resonant_lines: Vec<usize>,
}

impl Decomposition {
    pub fn self_energy_containing_line(&self, line: usize) -> Vec<usize> {
        self.self_energy
            .iter()
            .enumerate()
            .filter(|(_, se)| self.clusters[se.cluster].lines.contains(&line))
            .map(|(i, _)| i)
            .collect()
    }
}

fn parents(tree: &LabeledTree) -> Vec<Option<usize>> {
    let mut p = vec![None; tree.nodes.len()];
    for (v, node) in tree.nodes.iter().enumerate() {
        for &c in &node.children {
            p[c] = Some(v);
        }
    }
    p
}

/// Unique cluster decomposition by scale, with self-energy flags, depths and
/// resonant lines.
pub fn detect_clusters<K: RealScalar>(
    view: &ModelView<K>,
    scaled: &ScaledTree,
) -> Result<Decomposition> {
    let tree = &scaled.tree;
    let n_nodes = tree.nodes.len();
    let parent = parents(tree);
    let momenta = tree.momenta();

    // edges: line of node v connects v to parent(v); the root line has no
    // upper endpoint and is external to every cluster
    let mut thresholds: Vec<i32> = (0..n_nodes)
        .filter(|&v| parent[v].is_some())
        .map(|v| scaled.scales[v])
        .collect();
    thresholds.sort_unstable();
    thresholds.dedup();

    let mut clusters: Vec<Cluster> = Vec::new();
    let mut seen: std::collections::BTreeSet<Vec<usize>> = std::collections::BTreeSet::new();

    for &n in &thresholds {
        // union-find over edges with scale <= n
        let mut comp: Vec<usize> = (0..n_nodes).collect();
        fn find(comp: &mut Vec<usize>, i: usize) -> usize {
            if comp[i] != i {
                let r = find(comp, comp[i]);
                comp[i] = r;
            }
            comp[i]
        }
        for v in 0..n_nodes {
            if let Some(p) = parent[v] {
                if scaled.scales[v] <= n {
                    let a = find(&mut comp, v);
                    let b = find(&mut comp, p);
                    comp[a] = b;
                }
            }
        }
        let mut groups: std::collections::BTreeMap<usize, Vec<usize>> =
            std::collections::BTreeMap::new();
        for v in 0..n_nodes {
            let r = find(&mut comp, v);
            groups.entry(r).or_default().push(v);
        }
        for members in groups.values() {
            // interior lines: edges within the member set and scale <= n
            let set: std::collections::BTreeSet<usize> = members.iter().cloned().collect();
            let lines: Vec<usize> = members
                .iter()
                .cloned()
                .filter(|&v| {
                    parent[v].is_some_and(|p| set.contains(&p)) && scaled.scales[v] <= n
                })
                .collect();
            if lines.is_empty() {
                continue;
            }
            let max_scale = lines.iter().map(|&v| scaled.scales[v]).max().unwrap();
            if max_scale != n {
                continue; // this component is recorded at its own scale
            }
            if !seen.insert(members.clone()) {
                continue;
            }
            let entering: Vec<usize> = (0..n_nodes)
                .filter(|&v| {
                    !set.contains(&v) && parent[v].is_some_and(|p| set.contains(&p))
                })
                .collect();
            let exiting = members
                .iter()
                .cloned()
                .find(|&v| parent[v].map_or(true, |p| !set.contains(&p)));
            let order = members
                .iter()
                .map(|&v| tree.nodes[v].kind.order())
                .sum();
            clusters.push(Cluster {
                nodes: members.clone(),
                lines,
                scale: n,
                entering,
                exiting,
                order,
            });
        }
    }

    // self-energy conditions
    let spec = view.spec();
    let mut flags = Vec::new();
    for (ci, cl) in clusters.iter().enumerate() {
        if cl.entering.len() != 1 {
            continue;
        }
        let Some(v_out) = cl.exiting else { continue };
        // the root line exits the tree, not a node; it still counts as the
        // exiting line, with its own scale and momentum
        let enter = cl.entering[0];
        let n_out = scaled.scales[v_out];
        let n_in = scaled.scales[enter];
        let n_t = n_out.min(n_in);
        if cl.scale > n_t - 2 {
            continue;
        }
        let j_out = tree.nodes[v_out].kind.component();
        let j_in = tree.nodes[enter].kind.component();
        let nu_out = &momenta[v_out];
        let nu_in = &momenta[enter];
        if nu_out.sub(nu_in).norm1() > 2 {
            continue;
        }
        let equal = match tree.variant {
            Variant::RealX => spec.equal_divisor(j_out, nu_out, j_in, nu_in),
            Variant::ComplexZw => spec.zw_equal_divisor(
                j_out,
                tree.nodes[v_out].line_sign,
                nu_out,
                j_in,
                tree.nodes[enter].line_sign,
                nu_in,
            ),
        };
        if !equal {
            continue;
        }
        // path from the entering line to the exiting one
        let attach = parent[enter].expect("entering line has an upper endpoint");
        let mut path = Vec::new();
        let mut w = attach;
        while w != v_out {
            path.push(w);
            w = parent[w].ok_or_else(|| {
                Error::Assertion("entering line not below the exiting line".into())
            })?;
        }
        let e_class = attach == v_out
            && matches!(tree.nodes[v_out].kind, NodeKind::Counterterm { .. });
        flags.push(SelfEnergyFlag {
            cluster: ci,
            path,
            e_class,
            depth: 0,
            n_t,
        });
    }

    // depths: one plus the number of strictly containing self-energy clusters
    let node_sets: Vec<std::collections::BTreeSet<usize>> = flags
        .iter()
        .map(|f| clusters[f.cluster].nodes.iter().cloned().collect())
        .collect();
    for i in 0..flags.len() {
        let mut depth = 1;
        for l in 0..flags.len() {
            if l != i && node_sets[l].len() > node_sets[i].len() {
                if node_sets[i].iter().all(|v| node_sets[l].contains(v)) {
                    depth += 1;
                }
            }
        }
        flags[i].depth = depth;
    }

    // resonant lines: exit one self-energy cluster and enter another
    let mut resonant = Vec::new();
    for v in 0..n_nodes {
        let exits_some = flags
            .iter()
            .any(|f| clusters[f.cluster].exiting == Some(v));
        let enters_some = flags
            .iter()
            .any(|f| clusters[f.cluster].entering == vec![v]);
        if exits_some && enters_some {
            resonant.push(v);
        }
    }

    Ok(Decomposition {
        clusters,
        self_energy: flags,
        resonant_lines: resonant,
    })
}

/// Counting statistics and structural checks over a set of scaled trees.
#[derive(Serialize, Debug, Clone, Default)]
pub struct CountingReport {
    pub lemma: String,
    pub trees_scanned: u64,
    pub assignments_scanned: u64,
    /// per scale n: sup over trees of N_n(theta) * 2^(n/tau) / k(theta)
    pub counting_sup: Vec<(i32, f64)>,
    pub self_energy_found: u64,
    pub resonant_lines_found: u64,
    pub resonant_structure_violations: Vec<String>,
    pub displacement_violations: Vec<String>,
    pub gamma_window_violations: Vec<String>,
}

impl CountingReport {
    pub fn ok(&self) -> bool {
        self.resonant_structure_violations.is_empty()
            && self.displacement_violations.is_empty()
            && self.gamma_window_violations.is_empty()
    }
}

/// Scan one scaled tree into the report. `e1` and `e2` are the displacement
/// constants (4 and 7 by convention).
pub fn scan_scaled_tree<K: RealScalar>(
    view: &ModelView<K>,
    scaled: &ScaledTree,
    tau: f64,
    e1: i64,
    e2: i64,
    report: &mut CountingReport,
) -> Result<()> {
    let tree = &scaled.tree;
    let k = tree.order();
    if k == 0 {
        return Ok(());
    }
    let dec = detect_clusters(view, scaled)?;
    let momenta = tree.momenta();
    let parent = parents(tree);
    report.assignments_scanned += 1;
    report.self_energy_found += dec.self_energy.len() as u64;
    report.resonant_lines_found += dec.resonant_lines.len() as u64;

    // counting statistic: non-resonant lines on scale >= n
    let max_scale = scaled.scales.iter().cloned().max().unwrap_or(-1);
    for n in 1..=max_scale {
        let count = (0..tree.nodes.len())
            .filter(|v| scaled.scales[*v] >= n && !dec.resonant_lines.contains(v))
            .count() as f64;
        if count == 0.0 {
            continue;
        }
        let ratio = count * 2f64.powf(n as f64 / tau) / k as f64;
        match report.counting_sup.iter_mut().find(|(m, _)| *m == n) {
            Some((_, r)) => {
                if ratio > *r {
                    *r = ratio;
                }
            }
            None => report.counting_sup.push((n, ratio)),
        }
    }

    // every resonant line has, in the deepest self-energy cluster containing
    // it (or the whole tree), a non-resonant line on scale >= n - 1
    for &line in &dec.resonant_lines {
        let n = scaled.scales[line];
        let containing = dec.self_energy_containing_line(line);
        let search_lines: Vec<usize> = match containing
            .iter()
            .max_by_key(|&&i| dec.self_energy[i].depth)
        {
            Some(&i) => dec.clusters[dec.self_energy[i].cluster].lines.clone(),
            None => (0..tree.nodes.len()).collect(),
        };
        let found = search_lines
            .iter()
            .any(|&l| scaled.scales[l] >= n - 1 && !dec.resonant_lines.contains(&l));
        if !found {
            report
                .resonant_structure_violations
                .push(format!("resonant line {line} at scale {n} lacks a companion"));
        }
    }

    // displacement along the path of each self-energy cluster: the line
    // momentum splits as own part plus the entering momentum, with the own
    // part bounded by e1 times the order outside deeper clusters
    for (i, se) in dec.self_energy.iter().enumerate() {
        let cl = &dec.clusters[se.cluster];
        let enter = cl.entering[0];
        let nu_in = &momenta[enter];
        // order of the cluster outside deeper self-energy clusters
        let mut inner_order = 0usize;
        for (l, other) in dec.self_energy.iter().enumerate() {
            if l != i && other.depth == se.depth + 1 {
                let onodes = &dec.clusters[other.cluster].nodes;
                if onodes.iter().all(|v| cl.nodes.contains(v)) {
                    inner_order += dec.clusters[other.cluster].order;
                }
            }
        }
        let k_ring = cl.order.saturating_sub(inner_order) as i64;
        for &pl in &se.path {
            // skip lines with a shell line between them and the entering line
            let mut blocked = false;
            let mut w = parent[enter].unwrap();
            loop {
                if w == pl {
                    break;
                }
                if momenta[w].is_unit(tree.nodes[w].kind.component(), tree.nodes[w].line_sign) {
                    blocked = true;
                    break;
                }
                w = parent[w].unwrap();
            }
            if blocked {
                continue;
            }
            // only lines whose deepest containing cluster is this one
            let deepest = dec
                .self_energy_containing_line(pl)
                .into_iter()
                .max_by_key(|&l| dec.self_energy[l].depth);
            if deepest != Some(i) {
                continue;
            }
            let own = momenta[pl].sub(nu_in).norm1();
            let bound = if k_ring >= 1 { e1 * k_ring } else { 2 };
            if own > bound {
                report.displacement_violations.push(format!(
                    "path line {pl}: own momentum {own} exceeds {bound}"
                ));
            }
        }
    }

    // root-to-line displacement: the momentum change from any line to the
    // root is bounded by e2 times the order outside the line's subtree and
    // outside self-energy clusters contained there
    let root = tree.root;
    let nu_root = &momenta[root];
    for v in 0..tree.nodes.len() {
        if v == root || matches!(tree.nodes[v].kind, NodeKind::End { .. }) {
            continue;
        }
        // subtree below v
        let mut below = vec![false; tree.nodes.len()];
        let mut stack = vec![v];
        while let Some(w) = stack.pop() {
            below[w] = true;
            for &c in &tree.nodes[w].children {
                stack.push(c);
            }
        }
        let gamma_order: usize = (0..tree.nodes.len())
            .filter(|&w| !below[w])
            .map(|w| tree.nodes[w].kind.order())
            .sum();
        // subtract self-energy clusters fully outside the subtree
        let mut se_inside_gamma = 0usize;
        for se in &dec.self_energy {
            let cl = &dec.clusters[se.cluster];
            if se.depth == 1 && cl.nodes.iter().all(|w| !below[*w]) {
                se_inside_gamma += cl.order;
            }
        }
        let k_gamma = gamma_order.saturating_sub(se_inside_gamma) as i64;
        if k_gamma >= 1 {
            let diff = nu_root.sub(&momenta[v]).norm1();
            if diff > e2 * k_gamma {
                report.displacement_violations.push(format!(
                    "line {v}: root displacement {diff} exceeds {}",
                    e2 * k_gamma
                ));
            }
        }
    }

    // scale-window consistency: an admissible scale locates the divisor in
    // its dyadic window (one-sided at scale zero)
    let spec = view.spec();
    let part = crate::freq::ScalePartition::new(
        spec.gamma.clone(),
        crate::freq::PsiShape::SmoothstepC1,
    );
    for v in 0..tree.nodes.len() {
        let n = scaled.scales[v];
        if n < 0 {
            continue;
        }
        let delta = crate::trees::line_divisor(view, tree, &momenta, v);
        if !part.window_holds(&delta, n) {
            report
                .gamma_window_violations
                .push(format!("line {v} at scale {n} outside its window"));
        }
    }

    let _ = Mode::zero(1);
    let _ = Sign::Plus;
    Ok(())
}

/// Sweep every tree class of order <= k_max (real formulation) through all
/// admissible scale assignments and collect the counting report.
pub fn verify_counting<K: RealScalar>(
    view: &ModelView<K>,
    part: &crate::freq::ScalePartition<K>,
    k_max: usize,
    e1: i64,
    e2: i64,
) -> Result<CountingReport> {
    let spec = view.spec();
    let tau = spec.tau_num as f64 / spec.tau_den as f64;
    let en = crate::trees::Enumerator::new(view);
    let mut report = CountingReport {
        lemma: "scaled-tree-counting".into(),
        ..Default::default()
    };
    let signs: &[Sign] = match view.variant() {
        Variant::RealX => &[Sign::Plus],
        Variant::ComplexZw => &[Sign::Plus, Sign::Minus],
    };
    for k in 1..=k_max {
        for j in 1..=spec.d {
            for sign in signs {
                for nu in crate::mode_ball(spec.d, k as i64 + 1) {
                    for class in en.classes(k, j, &nu, *sign)?.iter() {
                        report.trees_scanned += 1;
                        let assignments =
                            crate::trees::scale_assignments(view, part, &class.tree)?;
                        for a in assignments {
                            let scaled = ScaledTree {
                                tree: class.tree.clone(),
                                scales: a,
                            };
                            scan_scaled_tree(view, &scaled, tau, e1, e2, &mut report)?;
                        }
                    }
                }
            }
        }
    }
    report.counting_sup.sort_unstable_by_key(|(n, _)| *n);
    Ok(report)
}
