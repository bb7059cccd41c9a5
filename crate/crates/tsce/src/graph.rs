//! Weighted temporal causal graphs and context-indexed graph sets.
//!
//! A [`TemporalCausalGraph`] holds variables and weighted lagged edges. Edges
//! carry a lag of 0 (immediate effect) or 1 (delayed effect). The zero-lag
//! sub-graph must be acyclic; lag-1 self-loops are the only permitted cycles.
//! Graphs are immutable after construction, so all queries are pure and the
//! structures can be shared freely between threads.

use std::collections::{BTreeSet, HashMap, HashSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::error::{Result, TsceError};
use crate::predicate::Predicate;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VarKind {
    Continuous,
    Binary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Variable {
    pub name: String,
    pub kind: VarKind,
}

impl Variable {
    pub fn continuous(name: &str) -> Self {
        Variable {
            name: name.to_string(),
            kind: VarKind::Continuous,
        }
    }

    pub fn binary(name: &str) -> Self {
        Variable {
            name: name.to_string(),
            kind: VarKind::Binary,
        }
    }
}

/// A weighted causal edge from `src` at time `t - lag` to `dst` at time `t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub src: String,
    pub dst: String,
    pub lag: u32,
    pub weight: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TemporalCausalGraph {
    variables: Vec<Variable>,
    edges: Vec<Edge>,
}

/// A node of the unrolled (full-time) graph: variable name plus time index.
pub type TimedVar = (String, usize);

impl TemporalCausalGraph {
    /// Validates and constructs a graph. Rejects duplicate variable names,
    /// edges with undeclared endpoints, zero weights, lags outside {0, 1},
    /// zero-lag self-edges, duplicate (src, dst, lag) edges, and zero-lag
    /// cycles.
    pub fn new(variables: Vec<Variable>, edges: Vec<Edge>) -> Result<Self> {
        let mut names = HashSet::new();
        for v in &variables {
            if !names.insert(v.name.clone()) {
                return Err(TsceError::InvalidGraph(format!(
                    "duplicate variable name {:?}",
                    v.name
                )));
            }
        }
        let mut seen_edges = HashSet::new();
        for e in &edges {
            if !names.contains(&e.src) {
                return Err(TsceError::InvalidGraph(format!(
                    "edge source {:?} is not a declared variable",
                    e.src
                )));
            }
            if !names.contains(&e.dst) {
                return Err(TsceError::InvalidGraph(format!(
                    "edge target {:?} is not a declared variable",
                    e.dst
                )));
            }
            if e.weight == 0.0 || !e.weight.is_finite() {
                return Err(TsceError::InvalidGraph(format!(
                    "edge {} -> {} has invalid weight {}",
                    e.src, e.dst, e.weight
                )));
            }
            if e.lag > 1 {
                return Err(TsceError::InvalidGraph(format!(
                    "edge {} -> {} has lag {} (only 0 and 1 are supported)",
                    e.src, e.dst, e.lag
                )));
            }
            if e.lag == 0 && e.src == e.dst {
                return Err(TsceError::InvalidGraph(format!(
                    "zero-lag self-edge on {:?}",
                    e.src
                )));
            }
            if !seen_edges.insert((e.src.clone(), e.dst.clone(), e.lag)) {
                return Err(TsceError::InvalidGraph(format!(
                    "duplicate edge {} -> {} (lag {})",
                    e.src, e.dst, e.lag
                )));
            }
        }
        let g = TemporalCausalGraph { variables, edges };
        g.check_zero_lag_acyclic()?;
        Ok(g)
    }

    /// Like [`new`](Self::new) but without the lag <= 1 cap. Masking
    /// intermediate variables can legitimately produce longer lags (the lag of
    /// a bypass edge is the sum of the lags along the masked path).
    pub fn new_unbounded_lag(variables: Vec<Variable>, edges: Vec<Edge>) -> Result<Self> {
        let mut names = HashSet::new();
        for v in &variables {
            if !names.insert(v.name.clone()) {
                return Err(TsceError::InvalidGraph(format!(
                    "duplicate variable name {:?}",
                    v.name
                )));
            }
        }
        let mut seen_edges = HashSet::new();
        for e in &edges {
            if !names.contains(&e.src) || !names.contains(&e.dst) {
                return Err(TsceError::InvalidGraph(format!(
                    "edge {} -> {} has an undeclared endpoint",
                    e.src, e.dst
                )));
            }
            if e.weight == 0.0 || !e.weight.is_finite() {
                return Err(TsceError::InvalidGraph(format!(
                    "edge {} -> {} has invalid weight {}",
                    e.src, e.dst, e.weight
                )));
            }
            if e.lag == 0 && e.src == e.dst {
                return Err(TsceError::InvalidGraph(format!(
                    "zero-lag self-edge on {:?}",
                    e.src
                )));
            }
            if !seen_edges.insert((e.src.clone(), e.dst.clone(), e.lag)) {
                return Err(TsceError::InvalidGraph(format!(
                    "duplicate edge {} -> {} (lag {})",
                    e.src, e.dst, e.lag
                )));
            }
        }
        let g = TemporalCausalGraph { variables, edges };
        g.check_zero_lag_acyclic()?;
        Ok(g)
    }

    fn check_zero_lag_acyclic(&self) -> Result<()> {
        // Kahn's algorithm over the zero-lag sub-graph.
        let mut indeg: HashMap<&str, usize> =
            self.variables.iter().map(|v| (v.name.as_str(), 0)).collect();
        for e in self.edges.iter().filter(|e| e.lag == 0) {
            *indeg.get_mut(e.dst.as_str()).unwrap() += 1;
        }
        let mut queue: VecDeque<&str> = indeg
            .iter()
            .filter(|(_, d)| **d == 0)
            .map(|(n, _)| *n)
            .collect();
        let mut seen = 0;
        while let Some(n) = queue.pop_front() {
            seen += 1;
            for e in self.edges.iter().filter(|e| e.lag == 0 && e.src == n) {
                let d = indeg.get_mut(e.dst.as_str()).unwrap();
                *d -= 1;
                if *d == 0 {
                    queue.push_back(e.dst.as_str());
                }
            }
        }
        if seen != self.variables.len() {
            return Err(TsceError::InvalidGraph(
                "zero-lag sub-graph contains a cycle".into(),
            ));
        }
        Ok(())
    }

    pub fn variables(&self) -> &[Variable] {
        &self.variables
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn variable(&self, name: &str) -> Result<&Variable> {
        self.variables
            .iter()
            .find(|v| v.name == name)
            .ok_or_else(|| TsceError::VariableNotFound(name.to_string()))
    }

    pub fn kind_of(&self, name: &str) -> Result<VarKind> {
        Ok(self.variable(name)?.kind)
    }

    /// Causal parents of `(v, t)` in the unrolled graph: `(src, t - lag)` for
    /// every incoming edge whose lag does not reach below time zero.
    pub fn parents(&self, v: &str, t: usize) -> Result<BTreeSet<TimedVar>> {
        self.variable(v)?;
        Ok(self
            .edges
            .iter()
            .filter(|e| e.dst == v && t >= e.lag as usize)
            .map(|e| (e.src.clone(), t - e.lag as usize))
            .collect())
    }

    /// Causal children of `(v, t)`: `(dst, t + lag)` for every outgoing edge.
    pub fn children(&self, v: &str, t: usize) -> Result<BTreeSet<TimedVar>> {
        self.variable(v)?;
        Ok(self
            .edges
            .iter()
            .filter(|e| e.src == v)
            .map(|e| (e.dst.clone(), t + e.lag as usize))
            .collect())
    }

    /// Incoming edges of `v`, with the parent time for an evaluation at `t`.
    /// Edges whose lag would reach before time zero are dropped.
    pub fn parent_edges(&self, v: &str, t: usize) -> Result<Vec<(&Edge, usize)>> {
        self.variable(v)?;
        Ok(self
            .edges
            .iter()
            .filter(|e| e.dst == v && t >= e.lag as usize)
            .map(|e| (e, t - e.lag as usize))
            .collect())
    }

    /// Outgoing edges of `v`, with the child time for an evaluation at `t`.
    pub fn child_edges(&self, v: &str, t: usize) -> Result<Vec<(&Edge, usize)>> {
        self.variable(v)?;
        Ok(self
            .edges
            .iter()
            .filter(|e| e.src == v)
            .map(|e| (e, t + e.lag as usize))
            .collect())
    }

    /// Transitive closure of `parents`, excluding `(v, t)` itself.
    pub fn ancestors(&self, v: &str, t: usize) -> Result<BTreeSet<TimedVar>> {
        self.variable(v)?;
        let mut out = BTreeSet::new();
        let mut queue = VecDeque::from([(v.to_string(), t)]);
        while let Some((u, s)) = queue.pop_front() {
            for p in self.parents(&u, s)? {
                if p != (v.to_string(), t) && out.insert(p.clone()) {
                    queue.push_back(p);
                }
            }
        }
        out.remove(&(v.to_string(), t));
        Ok(out)
    }

    /// Transitive closure of `children` within the time window `[0, horizon]`,
    /// excluding `(v, t)` itself.
    pub fn descendants(&self, v: &str, t: usize, horizon: usize) -> Result<BTreeSet<TimedVar>> {
        self.variable(v)?;
        if horizon < t {
            return Err(TsceError::InvalidArgument(format!(
                "descendants horizon {horizon} is before start time {t}"
            )));
        }
        let mut out = BTreeSet::new();
        let mut queue = VecDeque::from([(v.to_string(), t)]);
        while let Some((u, s)) = queue.pop_front() {
            for c in self.children(&u, s)? {
                if c.1 <= horizon && c != (v.to_string(), t) && out.insert(c.clone()) {
                    queue.push_back(c);
                }
            }
        }
        out.remove(&(v.to_string(), t));
        Ok(out)
    }
}

/// One named context: a predicate over a data row plus the graph that governs
/// rows matching it. The graph is optional on disk so a context file can be
/// used as input to discovery (which produces the graphs).
#[derive(Debug, Clone)]
pub struct Context {
    pub name: String,
    pub predicate: Predicate,
    pub graph: Option<TemporalCausalGraph>,
}

impl Context {
    pub fn graph(&self) -> Result<&TemporalCausalGraph> {
        self.graph.as_ref().ok_or_else(|| {
            TsceError::InvalidArgument(format!("context {:?} carries no graph", self.name))
        })
    }
}

/// Ordered set of contexts. Exactly one context should match any row; ties
/// are broken by declaration order (first match wins).
#[derive(Debug, Clone)]
pub struct ContextSet {
    pub contexts: Vec<Context>,
}

impl ContextSet {
    pub fn single(name: &str, graph: TemporalCausalGraph) -> Self {
        ContextSet {
            contexts: vec![Context {
                name: name.to_string(),
                predicate: Predicate::True,
                graph: Some(graph),
            }],
        }
    }

    /// First context whose predicate holds on the row. A row matching no
    /// context is an explicit error, never a silent default.
    pub fn select_context(&self, row: &HashMap<String, f64>) -> Result<&Context> {
        for c in &self.contexts {
            if c.predicate.eval(row)? {
                return Ok(c);
            }
        }
        let mut desc: Vec<String> = row.iter().map(|(k, v)| format!("{k}={v}")).collect();
        desc.sort();
        Err(TsceError::NoContextMatched(desc.join(", ")))
    }

    pub fn context(&self, name: &str) -> Result<&Context> {
        self.contexts
            .iter()
            .find(|c| c.name == name)
            .ok_or_else(|| TsceError::InvalidArgument(format!("unknown context {name:?}")))
    }

    /// Checks predicate exclusivity against actual data rows. Returns one
    /// warning per row matched by more than one context; rows matched by no
    /// context are a hard error.
    pub fn check_exclusive<'a, I>(&self, rows: I) -> Result<Vec<String>>
    where
        I: IntoIterator<Item = &'a HashMap<String, f64>>,
    {
        let mut warnings = Vec::new();
        for (i, row) in rows.into_iter().enumerate() {
            let mut matched = Vec::new();
            for c in &self.contexts {
                if c.predicate.eval(row)? {
                    matched.push(c.name.as_str());
                }
            }
            match matched.len() {
                0 => {
                    let mut desc: Vec<String> =
                        row.iter().map(|(k, v)| format!("{k}={v}")).collect();
                    desc.sort();
                    return Err(TsceError::NoContextMatched(format!(
                        "row {i}: {}",
                        desc.join(", ")
                    )));
                }
                1 => {}
                _ => warnings.push(format!(
                    "row {i} matches multiple contexts: {} (first match {} wins)",
                    matched.join(", "),
                    matched[0]
                )),
            }
        }
        Ok(warnings)
    }
}

// ---------------------------------------------------------------------------
// JSON formats
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct GraphJson {
    variables: Vec<Variable>,
    edges: Vec<Edge>,
}

#[derive(Serialize, Deserialize)]
struct ContextJson {
    name: String,
    predicate: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    graph: Option<GraphJson>,
}

#[derive(Serialize, Deserialize)]
struct ContextSetJson {
    contexts: Vec<ContextJson>,
}

impl TemporalCausalGraph {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&GraphJson {
            variables: self.variables.clone(),
            edges: self.edges.clone(),
        })?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let raw: GraphJson = serde_json::from_str(s)?;
        TemporalCausalGraph::new(raw.variables, raw.edges)
    }
}

impl ContextSet {
    pub fn to_json(&self) -> Result<String> {
        let raw = ContextSetJson {
            contexts: self
                .contexts
                .iter()
                .map(|c| ContextJson {
                    name: c.name.clone(),
                    predicate: c.predicate.to_string(),
                    graph: c.graph.as_ref().map(|g| GraphJson {
                        variables: g.variables.clone(),
                        edges: g.edges.clone(),
                    }),
                })
                .collect(),
        };
        Ok(serde_json::to_string_pretty(&raw)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let raw: ContextSetJson = serde_json::from_str(s)?;
        let mut contexts = Vec::new();
        for c in raw.contexts {
            contexts.push(Context {
                name: c.name,
                predicate: Predicate::parse(&c.predicate)?,
                graph: match c.graph {
                    Some(g) => Some(TemporalCausalGraph::new(g.variables, g.edges)?),
                    None => None,
                },
            });
        }
        if contexts.is_empty() {
            return Err(TsceError::InvalidArgument("empty context set".into()));
        }
        Ok(ContextSet { contexts })
    }
}

/// The weighted full-time Causal Hans graph: immediate effects
/// Age -> Nutrition (0.5), Age -> Health (-0.2), Nutrition -> Health (0.6),
/// Health -> Mobility (0.5), plus lag-1 self-effects on every variable.
pub fn hans_graph() -> TemporalCausalGraph {
    let vars = vec![
        Variable::continuous("Age"),
        Variable::continuous("Nutrition"),
        Variable::continuous("Health"),
        Variable::continuous("Mobility"),
    ];
    let e = |src: &str, dst: &str, lag: u32, weight: f64| Edge {
        src: src.into(),
        dst: dst.into(),
        lag,
        weight,
    };
    let edges = vec![
        e("Age", "Nutrition", 0, 0.5),
        e("Age", "Health", 0, -0.2),
        e("Nutrition", "Health", 0, 0.6),
        e("Health", "Mobility", 0, 0.5),
        e("Age", "Age", 1, 1.0),
        e("Nutrition", "Nutrition", 1, 0.6),
        e("Health", "Health", 1, 0.6),
        e("Mobility", "Mobility", 1, 0.6),
    ];
    TemporalCausalGraph::new(vars, edges).expect("hans graph is valid")
}

/// The zero-lag Causal Hans graph used by the static special case.
pub fn hans_static_graph() -> TemporalCausalGraph {
    let vars = vec![
        Variable::continuous("Age"),
        Variable::continuous("Nutrition"),
        Variable::continuous("Health"),
        Variable::continuous("Mobility"),
    ];
    let e = |src: &str, dst: &str, weight: f64| Edge {
        src: src.into(),
        dst: dst.into(),
        lag: 0,
        weight,
    };
    let edges = vec![
        e("Age", "Nutrition", 0.5),
        e("Age", "Health", -0.2),
        e("Nutrition", "Health", 0.6),
        e("Health", "Mobility", 0.5),
    ];
    TemporalCausalGraph::new(vars, edges).expect("static hans graph is valid")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn timed(name: &str, t: usize) -> TimedVar {
        (name.to_string(), t)
    }

    #[test]
    fn hans_parents_of_mobility() {
        let g = hans_graph();
        let p = g.parents("Mobility", 5).unwrap();
        let expected: BTreeSet<_> = [timed("Health", 5), timed("Mobility", 4)].into();
        assert_eq!(p, expected);
    }

    #[test]
    fn lag_reaching_negative_time_is_dropped() {
        let g = TemporalCausalGraph::new(
            vec![Variable::continuous("Age")],
            vec![Edge {
                src: "Age".into(),
                dst: "Age".into(),
                lag: 1,
                weight: 1.0,
            }],
        )
        .unwrap();
        assert!(g.parents("Age", 0).unwrap().is_empty());
        assert_eq!(g.parents("Age", 1).unwrap(), [timed("Age", 0)].into());
    }

    #[test]
    fn hans_children_of_health() {
        let g = hans_graph();
        let c = g.children("Health", 5).unwrap();
        let expected: BTreeSet<_> = [timed("Mobility", 5), timed("Health", 6)].into();
        assert_eq!(c, expected);
    }

    #[test]
    fn leaf_variable_has_no_children() {
        let g = hans_static_graph();
        assert!(g.children("Mobility", 3).unwrap().is_empty());
    }

    #[test]
    fn unknown_variable_is_rejected() {
        let g = hans_graph();
        assert!(matches!(
            g.parents("Bogus", 0),
            Err(TsceError::VariableNotFound(_))
        ));
    }

    #[test]
    fn ancestors_cross_the_health_chain() {
        let g = hans_graph();
        let a = g.ancestors("Mobility", 2).unwrap();
        assert!(a.contains(&timed("Age", 0)));
        assert!(a.contains(&timed("Health", 2)));
        assert!(a.contains(&timed("Mobility", 1)));
        // Root with no parents has no ancestors.
        let g0 = hans_static_graph();
        assert!(g0.ancestors("Age", 0).unwrap().is_empty());
    }

    #[test]
    fn descendants_at_horizon_t_stay_zero_lag() {
        let g = hans_graph();
        let d = g.descendants("Age", 3, 3).unwrap();
        for (_, t) in &d {
            assert_eq!(*t, 3);
        }
        let expected: BTreeSet<_> = [
            timed("Nutrition", 3),
            timed("Health", 3),
            timed("Mobility", 3),
        ]
        .into();
        assert_eq!(d, expected);
        assert!(g.descendants("Age", 3, 2).is_err());
    }

    #[test]
    fn zero_lag_cycle_is_rejected() {
        let vars = vec![Variable::continuous("a"), Variable::continuous("b")];
        let edges = vec![
            Edge {
                src: "a".into(),
                dst: "b".into(),
                lag: 0,
                weight: 1.0,
            },
            Edge {
                src: "b".into(),
                dst: "a".into(),
                lag: 0,
                weight: 1.0,
            },
        ];
        assert!(TemporalCausalGraph::new(vars, edges).is_err());
    }

    #[test]
    fn zero_weight_and_zero_lag_self_edge_are_rejected() {
        let vars = vec![Variable::continuous("a"), Variable::continuous("b")];
        assert!(TemporalCausalGraph::new(
            vars.clone(),
            vec![Edge {
                src: "a".into(),
                dst: "b".into(),
                lag: 0,
                weight: 0.0
            }]
        )
        .is_err());
        assert!(TemporalCausalGraph::new(
            vars,
            vec![Edge {
                src: "a".into(),
                dst: "a".into(),
                lag: 0,
                weight: 1.0
            }]
        )
        .is_err());
    }

    fn killer_contexts_without_graphs() -> ContextSet {
        ContextSet {
            contexts: vec![
                Context {
                    name: "C_K,1".into(),
                    predicate: Predicate::parse("powerup_exists == 1 and enemy_exists == 1")
                        .unwrap(),
                    graph: None,
                },
                Context {
                    name: "C_K,2".into(),
                    predicate: Predicate::parse("powerup_exists == 0 and enemy_exists == 1")
                        .unwrap(),
                    graph: None,
                },
                Context {
                    name: "C_K,3".into(),
                    predicate: Predicate::parse("powerup_exists == 0 and enemy_exists == 0")
                        .unwrap(),
                    graph: None,
                },
            ],
        }
    }

    #[test]
    fn killer_context_selection() {
        let cs = killer_contexts_without_graphs();
        let mk = |p: f64, e: f64| {
            HashMap::from([
                ("powerup_exists".to_string(), p),
                ("enemy_exists".to_string(), e),
            ])
        };
        assert_eq!(cs.select_context(&mk(1.0, 1.0)).unwrap().name, "C_K,1");
        assert_eq!(cs.select_context(&mk(0.0, 1.0)).unwrap().name, "C_K,2");
        assert_eq!(cs.select_context(&mk(0.0, 0.0)).unwrap().name, "C_K,3");
        assert!(matches!(
            cs.select_context(&mk(1.0, 0.0)),
            Err(TsceError::NoContextMatched(_))
        ));
    }

    #[test]
    fn single_context_always_matches() {
        let cs = ContextSet::single("only", hans_graph());
        let row = HashMap::from([("Age".to_string(), 40.0)]);
        assert_eq!(cs.select_context(&row).unwrap().name, "only");
    }

    #[test]
    fn exclusivity_check_warns_on_overlap() {
        let cs = ContextSet {
            contexts: vec![
                Context {
                    name: "a".into(),
                    predicate: Predicate::parse("x == 1").unwrap(),
                    graph: None,
                },
                Context {
                    name: "b".into(),
                    predicate: Predicate::parse("x == 1 or x == 0").unwrap(),
                    graph: None,
                },
            ],
        };
        let rows = vec![
            HashMap::from([("x".to_string(), 1.0)]),
            HashMap::from([("x".to_string(), 0.0)]),
        ];
        let warnings = cs.check_exclusive(rows.iter()).unwrap();
        assert_eq!(warnings.len(), 1);
        assert!(warnings[0].contains("row 0"));
    }

    #[test]
    fn graph_json_round_trip() {
        let g = hans_graph();
        let s = g.to_json().unwrap();
        let g2 = TemporalCausalGraph::from_json(&s).unwrap();
        assert_eq!(g.variables(), g2.variables());
        assert_eq!(g.edges(), g2.edges());
    }

    #[test]
    fn context_set_json_round_trip() {
        let cs = ContextSet::single("only", hans_graph());
        let s = cs.to_json().unwrap();
        let cs2 = ContextSet::from_json(&s).unwrap();
        assert_eq!(cs2.contexts.len(), 1);
        assert_eq!(cs2.contexts[0].name, "only");
        assert!(cs2.contexts[0].graph.is_some());
    }

    // Random graph generation for property tests.
    fn arb_graph() -> impl Strategy<Value = TemporalCausalGraph> {
        let nvars = 5usize;
        // For each ordered pair (i, j): an optional zero-lag edge i -> j for
        // i < j (keeps the zero-lag part acyclic) and an optional lag-1 edge.
        proptest::collection::vec(
            (any::<bool>(), any::<bool>(), 0.1f64..2.0, 0.1f64..2.0),
            nvars * nvars,
        )
        .prop_map(move |cells| {
            let vars: Vec<Variable> = (0..nvars)
                .map(|i| Variable::continuous(&format!("v{i}")))
                .collect();
            let mut edges = Vec::new();
            for i in 0..nvars {
                for j in 0..nvars {
                    let (zero, one, w0, w1) = cells[i * nvars + j];
                    if zero && i < j {
                        edges.push(Edge {
                            src: format!("v{i}"),
                            dst: format!("v{j}"),
                            lag: 0,
                            weight: w0,
                        });
                    }
                    if one {
                        edges.push(Edge {
                            src: format!("v{i}"),
                            dst: format!("v{j}"),
                            lag: 1,
                            weight: w1,
                        });
                    }
                }
            }
            TemporalCausalGraph::new(vars, edges).unwrap()
        })
    }

    proptest! {
        #[test]
        fn parents_children_are_mirrors(g in arb_graph(), t in 0usize..4) {
            for v in g.variables() {
                for (u, s) in g.parents(&v.name, t).unwrap() {
                    prop_assert!(g.children(&u, s).unwrap().contains(&(v.name.clone(), t)));
                }
                for (u, s) in g.children(&v.name, t).unwrap() {
                    prop_assert!(g.parents(&u, s).unwrap().contains(&(v.name.clone(), t)));
                }
            }
        }

        #[test]
        fn parents_match_brute_force_edge_scan(g in arb_graph(), t in 0usize..4) {
            for v in g.variables() {
                let got = g.parents(&v.name, t).unwrap();
                let mut expected = BTreeSet::new();
                for e in g.edges() {
                    if e.dst == v.name && t as i64 - e.lag as i64 >= 0 {
                        expected.insert((e.src.clone(), t - e.lag as usize));
                    }
                }
                prop_assert_eq!(got, expected);
            }
        }

        #[test]
        fn closures_match_bfs_oracle(g in arb_graph(), t in 0usize..4, horizon in 4usize..8) {
            // One-step fixpoint oracle for ancestors.
            for v in g.variables() {
                let anc = g.ancestors(&v.name, t).unwrap();
                // fixpoint: repeated expansion of parents until stable
                let mut acc: BTreeSet<TimedVar> = g.parents(&v.name, t).unwrap();
                loop {
                    let mut next = acc.clone();
                    for (u, s) in &acc {
                        next.extend(g.parents(u, *s).unwrap());
                    }
                    next.remove(&(v.name.clone(), t));
                    if next == acc { break; }
                    acc = next;
                }
                prop_assert_eq!(anc, acc);

                let des = g.descendants(&v.name, t, horizon).unwrap();
                let mut acc: BTreeSet<TimedVar> = g.children(&v.name, t).unwrap()
                    .into_iter().filter(|(_, s)| *s <= horizon).collect();
                loop {
                    let mut next = acc.clone();
                    for (u, s) in &acc {
                        next.extend(g.children(u, *s).unwrap().into_iter().filter(|(_, s2)| *s2 <= horizon));
                    }
                    next.remove(&(v.name.clone(), t));
                    if next == acc { break; }
                    acc = next;
                }
                prop_assert_eq!(des, acc);
            }
        }
    }
}
