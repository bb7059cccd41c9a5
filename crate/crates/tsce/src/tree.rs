//! The Explanation Tree data structure shared by the engine, the tree
//! operations and the verbalizer, plus its JSON wire format.

use serde::{Deserialize, Serialize};

use crate::error::{Result, TsceError};
use crate::rules::ErTriple;

pub const TREE_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Retrospective,
    Anticipative,
}

/// One node of an Explanation Tree. Non-root nodes carry the ER triple and
/// the edge coefficient relative to their tree parent. `value`/`phi` are
/// absent for anticipative frontier nodes that lie beyond the recorded data.
#[derive(Debug, Clone, PartialEq)]
pub struct TreeNode {
    pub id: usize,
    pub var: String,
    pub t: usize,
    pub context: String,
    pub value: Option<f64>,
    pub phi: Option<f64>,
    pub er: Option<ErTriple>,
    pub alpha: Option<f64>,
    pub seq: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExplanationTree {
    pub mode: Mode,
    pub k: usize,
    /// Human/CLI spelling of the selection filter (`all`, `theta:0.05`, ...).
    pub selection: String,
    /// Nodes in breadth-first order; ids equal vector indices.
    pub nodes: Vec<TreeNode>,
    /// Directed (parent id, child id) pairs in attachment order.
    pub edges: Vec<(usize, usize)>,
}

impl ExplanationTree {
    pub fn root(&self) -> &TreeNode {
        &self.nodes[0]
    }

    pub fn node(&self, id: usize) -> Result<&TreeNode> {
        self.nodes
            .get(id)
            .ok_or_else(|| TsceError::TreeOp(format!("node id {id} out of range")))
    }

    /// Child ids of `id` in attachment order.
    pub fn children_of(&self, id: usize) -> Vec<usize> {
        self.edges
            .iter()
            .filter(|(p, _)| *p == id)
            .map(|(_, c)| *c)
            .collect()
    }

    pub fn parent_of(&self, id: usize) -> Option<usize> {
        self.edges.iter().find(|(_, c)| *c == id).map(|(p, _)| *p)
    }

    pub fn is_leaf(&self, id: usize) -> bool {
        !self.edges.iter().any(|(p, _)| *p == id)
    }

    /// Ids along the root -> `id` path, inclusive.
    pub fn path_from_root(&self, id: usize) -> Result<Vec<usize>> {
        self.node(id)?;
        let mut path = vec![id];
        let mut cur = id;
        while let Some(p) = self.parent_of(cur) {
            path.push(p);
            cur = p;
        }
        path.reverse();
        if path[0] != self.root().id {
            return Err(TsceError::TreeOp(format!(
                "node {id} is not connected to the root"
            )));
        }
        Ok(path)
    }

    /// Sanity checks shared by deserialization and the tree operations.
    pub fn validate(&self) -> Result<()> {
        if self.nodes.is_empty() {
            return Err(TsceError::TreeOp("tree has no nodes".into()));
        }
        for (i, n) in self.nodes.iter().enumerate() {
            if n.id != i {
                return Err(TsceError::TreeOp(format!(
                    "node at position {i} carries id {}",
                    n.id
                )));
            }
        }
        if self.nodes[0].er.is_some() {
            return Err(TsceError::TreeOp("root node must not carry an ER triple".into()));
        }
        let mut seen_child = vec![false; self.nodes.len()];
        for &(p, c) in &self.edges {
            if p >= self.nodes.len() || c >= self.nodes.len() {
                return Err(TsceError::TreeOp(format!("edge ({p}, {c}) out of range")));
            }
            if c == 0 {
                return Err(TsceError::TreeOp("root cannot be a child".into()));
            }
            if seen_child[c] {
                return Err(TsceError::TreeOp(format!("node {c} has two parents")));
            }
            seen_child[c] = true;
            if self.nodes[c].er.is_none() {
                return Err(TsceError::TreeOp(format!(
                    "non-root node {c} is missing its ER triple"
                )));
            }
        }
        for (i, seen) in seen_child.iter().enumerate().skip(1) {
            if !seen {
                return Err(TsceError::TreeOp(format!("node {i} is disconnected")));
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// JSON wire format
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct NodeJson {
    id: usize,
    var: String,
    t: usize,
    context: String,
    value: Option<f64>,
    phi: Option<f64>,
    er: Option<[i8; 3]>,
    alpha: Option<f64>,
    seq: Option<usize>,
}

#[derive(Serialize, Deserialize)]
struct TreeJson {
    version: u32,
    mode: Mode,
    k: usize,
    selection: String,
    nodes: Vec<NodeJson>,
    edges: Vec<(usize, usize)>,
}

impl ExplanationTree {
    pub fn to_json(&self) -> Result<String> {
        let raw = TreeJson {
            version: TREE_FORMAT_VERSION,
            mode: self.mode,
            k: self.k,
            selection: self.selection.clone(),
            nodes: self
                .nodes
                .iter()
                .map(|n| NodeJson {
                    id: n.id,
                    var: n.var.clone(),
                    t: n.t,
                    context: n.context.clone(),
                    value: n.value,
                    phi: n.phi,
                    er: n.er.map(|e| e.as_array()),
                    alpha: n.alpha,
                    seq: n.seq,
                })
                .collect(),
            edges: self.edges.clone(),
        };
        Ok(serde_json::to_string_pretty(&raw)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let raw: TreeJson = serde_json::from_str(s)?;
        if raw.version != TREE_FORMAT_VERSION {
            return Err(TsceError::TreeOp(format!(
                "unsupported tree format version {}",
                raw.version
            )));
        }
        let mut nodes = Vec::with_capacity(raw.nodes.len());
        for n in raw.nodes {
            nodes.push(TreeNode {
                id: n.id,
                var: n.var,
                t: n.t,
                context: n.context,
                value: n.value,
                phi: n.phi,
                er: n.er.map(ErTriple::from_array).transpose()?,
                alpha: n.alpha,
                seq: n.seq,
            });
        }
        let tree = ExplanationTree {
            mode: raw.mode,
            k: raw.k,
            selection: raw.selection,
            nodes,
            edges: raw.edges,
        };
        tree.validate()?;
        Ok(tree)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn node(id: usize, var: &str, t: usize, er: Option<ErTriple>) -> TreeNode {
        TreeNode {
            id,
            var: var.into(),
            t,
            context: "default".into(),
            value: Some(1.0),
            phi: Some(0.5),
            er,
            alpha: er.map(|_| 0.6),
            seq: None,
        }
    }

    fn small_tree() -> ExplanationTree {
        ExplanationTree {
            mode: Mode::Retrospective,
            k: 2,
            selection: "all".into(),
            nodes: vec![
                node(0, "Health", 5, None),
                node(1, "Health", 4, Some(ErTriple::because(-1))),
                node(2, "Age", 5, Some(ErTriple::because(1))),
            ],
            edges: vec![(0, 1), (0, 2)],
        }
    }

    #[test]
    fn queries() {
        let t = small_tree();
        t.validate().unwrap();
        assert_eq!(t.root().var, "Health");
        assert_eq!(t.children_of(0), vec![1, 2]);
        assert_eq!(t.parent_of(2), Some(0));
        assert!(t.is_leaf(1));
        assert!(!t.is_leaf(0));
        assert_eq!(t.path_from_root(2).unwrap(), vec![0, 2]);
    }

    #[test]
    fn json_round_trip_is_byte_identical() {
        let t = small_tree();
        let s = t.to_json().unwrap();
        let t2 = ExplanationTree::from_json(&s).unwrap();
        assert_eq!(t, t2);
        assert_eq!(s, t2.to_json().unwrap());
    }

    #[test]
    fn validation_rejects_broken_trees() {
        let mut t = small_tree();
        t.edges.push((1, 2)); // second parent for node 2
        assert!(t.validate().is_err());

        let mut t = small_tree();
        t.nodes[1].er = None;
        assert!(t.validate().is_err());

        let mut t = small_tree();
        t.edges.clear(); // nodes 1, 2 disconnected
        assert!(t.validate().is_err());
    }
}
