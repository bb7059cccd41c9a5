//! Post-hoc Explanation-Tree transformations: path-channel extraction,
//! masking of intermediate variables (with weight products along bypass
//! paths), and leave-N-out sequence merging.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use crate::engine::node_signature;
use crate::error::{Result, TsceError};
use crate::graph::{Edge, TemporalCausalGraph, Variable};
use crate::rules::{
    apply_er3, eval_er_binary, eval_er_continuous, eval_er_score, CausalScenario, Relation,
    Sibling,
};
use crate::tree::{ExplanationTree, Mode};

/// Trims the tree to the root -> `target` path plus, for every node on the
/// path, its descendants down to relative depth `w`. Node annotations and
/// sequence ids are kept as-is.
pub fn path_channel(
    tree: &ExplanationTree,
    target: (&str, usize),
    w: usize,
) -> Result<ExplanationTree> {
    tree.validate()?;
    let matches: Vec<usize> = tree
        .nodes
        .iter()
        .filter(|n| n.var == target.0 && n.t == target.1)
        .map(|n| n.id)
        .collect();
    let target_id = match matches.as_slice() {
        [] => {
            return Err(TsceError::TreeOp(format!(
                "target ({}, {}) is not in the tree",
                target.0, target.1
            )))
        }
        [id] => *id,
        _ => {
            return Err(TsceError::TreeOp(format!(
                "target ({}, {}) matches {} nodes; the root path is not unique",
                target.0,
                target.1,
                matches.len()
            )))
        }
    };
    let path = tree.path_from_root(target_id)?;
    let mut retained: BTreeSet<usize> = path.iter().copied().collect();
    for &p in &path {
        // breadth-limited closure below each path node
        let mut frontier = vec![p];
        for _ in 0..w {
            let mut next = Vec::new();
            for id in frontier {
                for c in tree.children_of(id) {
                    if retained.insert(c) {
                        next.push(c);
                    }
                    next.push(c);
                }
            }
            frontier = next;
        }
    }
    Ok(rebuild(tree, &retained))
}

/// Rebuilds a tree from a retained subset of node ids, renumbering ids to
/// stay positional while preserving relative order and all annotations.
fn rebuild(tree: &ExplanationTree, retained: &BTreeSet<usize>) -> ExplanationTree {
    let mut remap = BTreeMap::new();
    let mut nodes = Vec::new();
    for &old in retained {
        let mut n = tree.nodes[old].clone();
        remap.insert(old, nodes.len());
        n.id = nodes.len();
        nodes.push(n);
    }
    let edges = tree
        .edges
        .iter()
        .filter(|(p, c)| retained.contains(p) && retained.contains(c))
        .map(|(p, c)| (remap[p], remap[c]))
        .collect();
    ExplanationTree {
        mode: tree.mode,
        k: tree.k,
        selection: tree.selection.clone(),
        nodes,
        edges,
    }
}

const MASK_PATH_BOUND: usize = 100_000;

/// Removes the masked variables from a graph. Every simple path between
/// unmasked endpoints whose interior lies wholly in the masked set becomes a
/// bypass edge with weight = product of the path weights and lag = sum of the
/// path lags; parallel bypasses onto the same (src, dst, lag) are summed, and
/// merged into a pre-existing direct edge when one exists.
pub fn mask_graph(
    g: &TemporalCausalGraph,
    masked: &BTreeSet<String>,
) -> Result<TemporalCausalGraph> {
    for m in masked {
        g.variable(m)?;
        let has_in = g.edges().iter().any(|e| &e.dst == m);
        let has_out = g.edges().iter().any(|e| &e.src == m && &e.dst != m);
        if !has_in || !has_out {
            return Err(TsceError::TreeOp(format!(
                "variable {m:?} is not intermediate (needs both incoming and outgoing edges)"
            )));
        }
    }
    // Sum of weight products per (src, dst, total lag) over simple paths with
    // masked interiors.
    let mut bypass: BTreeMap<(String, String, u32), f64> = BTreeMap::new();
    let mut count = 0usize;
    for start in g.variables().iter().filter(|v| !masked.contains(&v.name)) {
        // stack entries: (current var, product, lag sum, visited interior)
        let mut stack: Vec<(String, f64, u32, Vec<String>)> = Vec::new();
        for e in g.edges().iter().filter(|e| e.src == start.name) {
            if masked.contains(&e.dst) {
                stack.push((e.dst.clone(), e.weight, e.lag, vec![e.dst.clone()]));
            }
        }
        while let Some((cur, prod, lag, visited)) = stack.pop() {
            count += 1;
            if count > MASK_PATH_BOUND {
                return Err(TsceError::TreeOp(format!(
                    "masking enumerated more than {MASK_PATH_BOUND} bypass paths"
                )));
            }
            for e in g.edges().iter().filter(|e| e.src == cur) {
                if masked.contains(&e.dst) {
                    if !visited.contains(&e.dst) {
                        let mut v2 = visited.clone();
                        v2.push(e.dst.clone());
                        stack.push((e.dst.clone(), prod * e.weight, lag + e.lag, v2));
                    }
                } else {
                    *bypass
                        .entry((start.name.clone(), e.dst.clone(), lag + e.lag))
                        .or_insert(0.0) += prod * e.weight;
                }
            }
        }
    }
    let variables: Vec<Variable> = g
        .variables()
        .iter()
        .filter(|v| !masked.contains(&v.name))
        .cloned()
        .collect();
    let mut edges: Vec<Edge> = g
        .edges()
        .iter()
        .filter(|e| !masked.contains(&e.src) && !masked.contains(&e.dst))
        .cloned()
        .collect();
    for ((src, dst, lag), w) in bypass {
        if let Some(e) = edges
            .iter_mut()
            .find(|e| e.src == src && e.dst == dst && e.lag == lag)
        {
            e.weight += w;
        } else {
            edges.push(Edge {
                src,
                dst,
                lag,
                weight: w,
            });
        }
    }
    edges.retain(|e| e.weight != 0.0);
    TemporalCausalGraph::new_unbounded_lag(variables, edges)
}

/// Rule dispatch shared with the engine, reconstructed from node annotations:
/// continuous when both endpoints carry statistics, binary when both values
/// are exact bits, sign-only otherwise.
fn reevaluate(
    alpha: f64,
    x: Option<f64>,
    phi_x: Option<f64>,
    y: Option<f64>,
    phi_y: Option<f64>,
) -> Result<(crate::rules::ErTriple, Option<f64>)> {
    match (x, y, phi_x, phi_y) {
        (Some(x), Some(y), Some(phi_x), Some(phi_y)) => {
            let er = eval_er_continuous(
                &CausalScenario {
                    alpha,
                    x,
                    y,
                    phi_x,
                    phi_y,
                },
                Relation::Less,
            )?;
            Ok((er, Some((x - phi_x).abs())))
        }
        (Some(x), Some(y), _, _) if (x == 0.0 || x == 1.0) && (y == 0.0 || y == 1.0) => {
            Ok((eval_er_binary(alpha, x as u8, y as u8)?, None))
        }
        _ => Ok((eval_er_score(alpha), None)),
    }
}

/// Splices all nodes of the masked variables out of the tree: each masked
/// node's children are reattached to its parent with the product of the two
/// edge coefficients, their rules are re-evaluated against the new combined
/// edge, and the "mostly" marker and sequence ids are recomputed.
pub fn mask_tree(tree: &ExplanationTree, masked: &BTreeSet<String>) -> Result<ExplanationTree> {
    tree.validate()?;
    let mut tree = tree.clone();
    loop {
        let target = tree.nodes.iter().find(|n| masked.contains(&n.var)).cloned();
        let Some(m) = target else { break };
        if m.id == tree.root().id {
            return Err(TsceError::TreeOp(format!(
                "cannot mask the root variable {:?}",
                m.var
            )));
        }
        if tree.is_leaf(m.id) {
            return Err(TsceError::TreeOp(format!(
                "cannot mask leaf node {:?} at t = {}",
                m.var, m.t
            )));
        }
        let parent = tree.parent_of(m.id).expect("non-root node has a parent");
        let m_alpha = m.alpha.ok_or_else(|| {
            TsceError::TreeOp(format!("node {:?} carries no coefficient", m.var))
        })?;
        let parent_node = tree.nodes[parent].clone();
        // reattach children with combined coefficients and fresh rules
        let child_ids = tree.children_of(m.id);
        for c in child_ids {
            let child = &mut tree.nodes[c];
            let alpha = child.alpha.unwrap_or(1.0) * m_alpha;
            let (x, phi_x, y, phi_y) = match tree.mode {
                Mode::Retrospective => (child.value, child.phi, parent_node.value, parent_node.phi),
                Mode::Anticipative => (parent_node.value, parent_node.phi, child.value, child.phi),
            };
            let (er, _) = reevaluate(alpha, x, phi_x, y, phi_y)?;
            child.alpha = Some(alpha);
            child.er = Some(er);
        }
        // rewire edges and drop the masked node
        for e in tree.edges.iter_mut() {
            if e.0 == m.id {
                e.0 = parent;
            }
        }
        tree.edges.retain(|(_, c)| *c != m.id);
        let retained: BTreeSet<usize> = tree
            .nodes
            .iter()
            .map(|n| n.id)
            .filter(|id| *id != m.id)
            .collect();
        tree = rebuild(&tree, &retained);
    }
    if tree.mode == Mode::Retrospective {
        refresh_er3(&mut tree);
    }
    crate::engine::assign_sequences(&mut tree);
    Ok(tree)
}

/// Recomputes the "mostly" marker across every sibling group.
fn refresh_er3(tree: &mut ExplanationTree) {
    for id in 0..tree.nodes.len() {
        let child_ids = tree.children_of(id);
        if child_ids.is_empty() {
            continue;
        }
        let mut sibs: Vec<Sibling> = child_ids
            .iter()
            .map(|&c| {
                let n = &tree.nodes[c];
                let deviation = match (n.value, n.phi) {
                    (Some(v), Some(phi)) => Some((v - phi).abs()),
                    _ => None,
                };
                Sibling {
                    er: n.er.unwrap(),
                    alpha: n.alpha.unwrap_or(0.0),
                    deviation,
                    name: n.var.clone(),
                    t: n.t,
                }
            })
            .collect();
        apply_er3(&mut sibs);
        for (s, &c) in sibs.iter().zip(&child_ids) {
            tree.nodes[c].er = Some(s.er);
        }
    }
}

/// Merges interrupted sequences: per same-variable chain, a run of at most
/// `max_gap` nodes sandwiched between two segments with equal child-indicator
/// signatures is absorbed into the surrounding sequence. With `rewrite` set,
/// the interrupters' child indicators are overwritten to the surrounding
/// signature. Topology is never changed; the operation is idempotent.
pub fn leave_n_out(
    tree: &ExplanationTree,
    max_gap: usize,
    rewrite: bool,
) -> Result<ExplanationTree> {
    if max_gap == 0 {
        return Err(TsceError::InvalidArgument("max_gap must be >= 1".into()));
    }
    tree.validate()?;
    let mut tree = tree.clone();

    let mut vars: Vec<String> = tree
        .nodes
        .iter()
        .filter(|n| n.seq.is_some())
        .map(|n| n.var.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    vars.sort();

    for var in &vars {
        loop {
            // chain nodes in descending time, grouped into runs by seq id
            let mut chain: Vec<usize> = tree
                .nodes
                .iter()
                .filter(|n| &n.var == var && n.seq.is_some())
                .map(|n| n.id)
                .collect();
            chain.sort_by(|a, b| tree.nodes[*b].t.cmp(&tree.nodes[*a].t));
            let mut runs: Vec<Vec<usize>> = Vec::new();
            for id in chain {
                match runs.last_mut() {
                    Some(run)
                        if tree.nodes[*run.last().unwrap()].seq == tree.nodes[id].seq
                            && tree.nodes[*run.last().unwrap()].t == tree.nodes[id].t + 1 =>
                    {
                        run.push(id)
                    }
                    _ => runs.push(vec![id]),
                }
            }
            let mut merged = false;
            for i in 0..runs.len().saturating_sub(2) {
                let gap = &runs[i + 1];
                if gap.len() > max_gap {
                    continue;
                }
                let sig_a = node_signature(&tree, runs[i][0]);
                let sig_b = node_signature(&tree, runs[i + 2][0]);
                if sig_a != sig_b {
                    continue;
                }
                // segments must be time-contiguous through the gap
                let a_last = tree.nodes[*runs[i].last().unwrap()].t;
                let gap_first = tree.nodes[gap[0]].t;
                let gap_last = tree.nodes[*gap.last().unwrap()].t;
                let b_first = tree.nodes[runs[i + 2][0]].t;
                if a_last != gap_first + 1 || gap_last != b_first + 1 {
                    continue;
                }
                let keep = tree.nodes[runs[i][0]].seq;
                if rewrite {
                    for &g in gap {
                        rewrite_children(&mut tree, g, &sig_a);
                    }
                }
                for &g in gap.iter().chain(runs[i + 2].iter()) {
                    tree.nodes[g].seq = keep;
                }
                merged = true;
                break;
            }
            if !merged {
                break;
            }
        }
    }
    redensify_seq_ids(&mut tree);
    Ok(tree)
}

/// Overwrites a node's child indicators to match the surrounding signature,
/// pairing children by (variable, time offset). Leaves the node untouched if
/// its children cannot be paired one-to-one.
fn rewrite_children(tree: &mut ExplanationTree, id: usize, sig: &[(String, i64, [i8; 3])]) {
    let node_t = tree.nodes[id].t as i64;
    let child_ids = tree.children_of(id);
    let mut pairing = Vec::new();
    let mut used = HashSet::new();
    for &c in &child_ids {
        let key = (tree.nodes[c].var.clone(), node_t - tree.nodes[c].t as i64);
        let found = sig
            .iter()
            .enumerate()
            .find(|(i, (v, off, _))| !used.contains(i) && *v == key.0 && *off == key.1);
        match found {
            Some((i, (_, _, er))) => {
                used.insert(i);
                pairing.push((c, *er));
            }
            None => return,
        }
    }
    if pairing.len() != sig.len() {
        return;
    }
    for (c, er) in pairing {
        if let Ok(triple) = crate::rules::ErTriple::from_array(er) {
            tree.nodes[c].er = Some(triple);
        }
    }
}

/// Renumbers sequence ids densely from zero in (variable name, descending
/// time) order, matching the assignment order of the engine.
fn redensify_seq_ids(tree: &mut ExplanationTree) {
    let mut ordered: Vec<usize> = tree
        .nodes
        .iter()
        .filter(|n| n.seq.is_some())
        .map(|n| n.id)
        .collect();
    ordered.sort_by(|a, b| {
        let (na, nb) = (&tree.nodes[*a], &tree.nodes[*b]);
        na.var.cmp(&nb.var).then(nb.t.cmp(&na.t))
    });
    let mut remap: BTreeMap<usize, usize> = BTreeMap::new();
    for id in &ordered {
        let old = tree.nodes[*id].seq.unwrap();
        let next = remap.len();
        remap.entry(old).or_insert(next);
    }
    for id in ordered {
        let old = tree.nodes[id].seq.unwrap();
        tree.nodes[id].seq = Some(remap[&old]);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::hans_graph;
    use crate::rules::ErTriple;
    use crate::tree::TreeNode;

    fn node(id: usize, var: &str, t: usize, er: Option<ErTriple>, alpha: Option<f64>) -> TreeNode {
        TreeNode {
            id,
            var: var.into(),
            t,
            context: "default".into(),
            value: Some(1.0),
            phi: Some(2.0),
            er,
            alpha,
            seq: None,
        }
    }

    /// Mobility_5 <- {Health_5 <- Age_5, Mobility_4}; Age also under Health.
    fn sample_tree() -> ExplanationTree {
        let mut tree = ExplanationTree {
            mode: Mode::Retrospective,
            k: 2,
            selection: "all".into(),
            nodes: vec![
                node(0, "Mobility", 5, None, None),
                node(1, "Mobility", 4, Some(ErTriple::because(-1)), Some(0.6)),
                node(2, "Health", 5, Some(ErTriple::because(-1)), Some(0.5)),
                node(3, "Health", 4, Some(ErTriple::because(-1)), Some(0.6)),
                node(4, "Age", 5, Some(ErTriple::because(1)), Some(-0.2)),
            ],
            edges: vec![(0, 1), (0, 2), (2, 3), (2, 4)],
        };
        crate::engine::assign_sequences(&mut tree);
        tree
    }

    #[test]
    fn path_channel_bare_chain() {
        let tree = sample_tree();
        let out = path_channel(&tree, ("Age", 5), 0).unwrap();
        let vars: Vec<(&str, usize)> = out.nodes.iter().map(|n| (n.var.as_str(), n.t)).collect();
        assert_eq!(vars, vec![("Mobility", 5), ("Health", 5), ("Age", 5)]);
        out.validate().unwrap();
    }

    #[test]
    fn path_channel_with_large_width_is_identity() {
        let tree = sample_tree();
        let out = path_channel(&tree, ("Age", 5), 5).unwrap();
        assert_eq!(out.nodes.len(), tree.nodes.len());
        assert_eq!(out.edges.len(), tree.edges.len());
    }

    #[test]
    fn path_channel_rejects_missing_or_ambiguous_target() {
        let tree = sample_tree();
        assert!(path_channel(&tree, ("Age", 99), 0).is_err());
        let mut dup = tree.clone();
        dup.nodes.push(node(5, "Age", 5, Some(ErTriple::because(1)), Some(0.5)));
        dup.edges.push((1, 5));
        assert!(path_channel(&dup, ("Age", 5), 0).is_err());
    }

    #[test]
    fn mask_health_in_hans_graph() {
        let masked: BTreeSet<String> = ["Health".to_string()].into();
        let out = mask_graph(&hans_graph(), &masked).unwrap();
        let am = out
            .edges()
            .iter()
            .find(|e| e.src == "Age" && e.dst == "Mobility" && e.lag == 0)
            .unwrap();
        assert!((am.weight - (-0.2 * 0.5)).abs() < 1e-12);
        let nm = out
            .edges()
            .iter()
            .find(|e| e.src == "Nutrition" && e.dst == "Mobility" && e.lag == 0)
            .unwrap();
        assert!((nm.weight - 0.6 * 0.5).abs() < 1e-12);
        assert!(out.variable("Health").is_err());
    }

    #[test]
    fn empty_mask_is_identity() {
        let out = mask_graph(&hans_graph(), &BTreeSet::new()).unwrap();
        assert_eq!(out.edges(), hans_graph().edges());
    }

    #[test]
    fn masking_a_leaf_or_source_is_rejected() {
        let g = crate::graph::hans_static_graph();
        // Mobility has no outgoing edges, Age no incoming ones.
        for v in ["Mobility", "Age"] {
            let masked: BTreeSet<String> = [v.to_string()].into();
            assert!(mask_graph(&g, &masked).is_err());
        }
    }

    #[test]
    fn mask_tree_splices_and_reweights() {
        // Mobility_5 <- Health_5 <- Age_5 chain; mask Health.
        let mut tree = ExplanationTree {
            mode: Mode::Retrospective,
            k: 2,
            selection: "all".into(),
            nodes: vec![
                TreeNode {
                    value: Some(26.2),
                    phi: Some(30.0),
                    ..node(0, "Mobility", 5, None, None)
                },
                TreeNode {
                    value: Some(2.6),
                    phi: Some(10.0),
                    ..node(1, "Health", 5, Some(ErTriple::because(-1)), Some(0.5))
                },
                TreeNode {
                    value: Some(93.8),
                    phi: Some(55.0),
                    ..node(2, "Age", 5, Some(ErTriple::because(1)), Some(-0.2))
                },
            ],
            edges: vec![(0, 1), (1, 2)],
        };
        crate::engine::assign_sequences(&mut tree);
        let masked: BTreeSet<String> = ["Health".to_string()].into();
        let out = mask_tree(&tree, &masked).unwrap();
        assert_eq!(out.nodes.len(), 2);
        let age = out.nodes.iter().find(|n| n.var == "Age").unwrap();
        assert!((age.alpha.unwrap() - (-0.1)).abs() < 1e-12);
        // alpha -0.1, Age high, Mobility low: still "because high Age"
        assert_eq!(age.er.unwrap(), ErTriple::because(1));
        assert_eq!(out.parent_of(age.id), Some(0));
    }

    #[test]
    fn mask_tree_rejects_root_and_leaves() {
        let tree = sample_tree();
        let masked: BTreeSet<String> = ["Mobility".to_string()].into();
        assert!(mask_tree(&tree, &masked).is_err());
        let masked: BTreeSet<String> = ["Age".to_string()].into();
        assert!(mask_tree(&tree, &masked).is_err());
    }

    /// Chain of x-nodes over times 9..=1 (node 9..1 non-leaf except the last
    /// leaf at t=0), with an ER flip at the given times.
    fn chain_tree(flip_at: &[usize]) -> ExplanationTree {
        let mut nodes = Vec::new();
        let mut edges = Vec::new();
        for (i, t) in (0..10).rev().enumerate() {
            let er = if i == 0 {
                None
            } else if flip_at.contains(&t) {
                Some(ErTriple::although(1))
            } else {
                Some(ErTriple::because(-1))
            };
            nodes.push(node(i, "x", t, er, er.map(|_| 0.6)));
            if i > 0 {
                edges.push((i - 1, i));
            }
        }
        let mut tree = ExplanationTree {
            mode: Mode::Retrospective,
            k: 10,
            selection: "all".into(),
            nodes,
            edges,
        };
        crate::engine::assign_sequences(&mut tree);
        tree
    }

    fn distinct_ids(tree: &ExplanationTree) -> usize {
        tree.nodes
            .iter()
            .filter_map(|n| n.seq)
            .collect::<BTreeSet<_>>()
            .len()
    }

    #[test]
    fn single_interrupter_is_absorbed() {
        // flip at t=5 interrupts the child-signature chain at nodes t=6 (sees
        // the flipped child) — one-node gap between equal segments.
        let tree = chain_tree(&[5]);
        assert!(distinct_ids(&tree) > 1);
        let out = leave_n_out(&tree, 1, false).unwrap();
        assert_eq!(distinct_ids(&out), 1);
        assert_eq!(out.nodes.len(), tree.nodes.len());
        assert_eq!(out.edges, tree.edges);
        // idempotent
        let again = leave_n_out(&out, 1, false).unwrap();
        assert_eq!(again, out);
    }

    #[test]
    fn gap_larger_than_n_is_kept() {
        let tree = chain_tree(&[4, 5]);
        let before = distinct_ids(&tree);
        let out = leave_n_out(&tree, 1, false).unwrap();
        assert_eq!(distinct_ids(&out), before);
    }

    #[test]
    fn rewrite_flag_overwrites_interrupter_children() {
        let tree = chain_tree(&[5]);
        let out = leave_n_out(&tree, 1, true).unwrap();
        // the flipped child at t=5 got rewritten to the surrounding encoding
        let flipped = out.nodes.iter().find(|n| n.t == 5).unwrap();
        assert_eq!(flipped.er.unwrap(), ErTriple::because(-1));
    }
}
