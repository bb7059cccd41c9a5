//! Why-question validation and the explanation-tree construction: recursive
//! expansion over causal parents (retrospective) or children (anticipative),
//! with candidate selection filters, duplicate/closure exclusion, per-step
//! context re-selection and sequence-indicator assignment.

use std::collections::{BTreeSet, HashMap, HashSet, VecDeque};

use crate::data::{PanelDataset, PopulationStatistic};
use crate::error::{Result, TsceError};
use crate::graph::{ContextSet, TemporalCausalGraph, TimedVar, VarKind};
use crate::rules::{
    apply_er3, eval_er_binary, eval_er_continuous, eval_er_score, CausalScenario, ErTriple,
    Relation, Sibling,
};
use crate::tree::{ExplanationTree, Mode, TreeNode};

// ---------------------------------------------------------------------------
// Data views
// ---------------------------------------------------------------------------

/// A single subject's time series as seen by the engine: per-(variable, t)
/// values, optional population statistics, and full rows for context
/// selection.
pub trait DataView {
    fn horizon(&self) -> usize;
    fn value(&self, var: &str, t: usize) -> Result<f64>;
    /// Population statistic at `(var, t)`; `None` when the data source has no
    /// population (behaviour mode).
    fn phi(&self, var: &str, t: usize) -> Result<Option<f64>>;
    fn row(&self, t: usize) -> Result<HashMap<String, f64>>;
}

/// One individual of a panel dataset plus the statistic the questions refer
/// to.
pub struct PanelView<'a> {
    pub dataset: &'a PanelDataset,
    pub individual: usize,
    pub stat: PopulationStatistic,
}

impl DataView for PanelView<'_> {
    fn horizon(&self) -> usize {
        self.dataset.horizon()
    }

    fn value(&self, var: &str, t: usize) -> Result<f64> {
        self.dataset.get(self.individual, t, var)
    }

    fn phi(&self, var: &str, t: usize) -> Result<Option<f64>> {
        Ok(Some(self.dataset.statistic(self.stat, var, t)?))
    }

    fn row(&self, t: usize) -> Result<HashMap<String, f64>> {
        self.dataset.row(self.individual, t)
    }
}

/// A standalone series (e.g. one game rollout): rows of named values over
/// time, with no population statistic behind them.
pub struct SeriesView {
    vars: Vec<String>,
    rows: Vec<Vec<f64>>,
}

impl SeriesView {
    pub fn new(vars: Vec<String>, rows: Vec<Vec<f64>>) -> Result<Self> {
        if rows.iter().any(|r| r.len() != vars.len()) {
            return Err(TsceError::Dataset(
                "series rows must match the variable list".into(),
            ));
        }
        Ok(SeriesView { vars, rows })
    }
}

impl DataView for SeriesView {
    fn horizon(&self) -> usize {
        self.rows.len()
    }

    fn value(&self, var: &str, t: usize) -> Result<f64> {
        let vi = self
            .vars
            .iter()
            .position(|v| v == var)
            .ok_or_else(|| TsceError::VariableNotFound(var.to_string()))?;
        self.rows
            .get(t)
            .map(|r| r[vi])
            .ok_or_else(|| TsceError::Dataset(format!("time {t} out of range")))
    }

    fn phi(&self, _var: &str, _t: usize) -> Result<Option<f64>> {
        Ok(None)
    }

    fn row(&self, t: usize) -> Result<HashMap<String, f64>> {
        let row = self
            .rows
            .get(t)
            .ok_or_else(|| TsceError::Dataset(format!("time {t} out of range")))?;
        Ok(self.vars.iter().cloned().zip(row.iter().copied()).collect())
    }
}

// ---------------------------------------------------------------------------
// Questions and selection
// ---------------------------------------------------------------------------

/// A why-question about one subject's variable at one time step. Continuous
/// questions carry a relation and a population statistic; behaviour questions
/// (binary variable is active) carry neither.
#[derive(Debug, Clone)]
pub struct WhyQuestion {
    pub variable: String,
    pub t: usize,
    pub relation: Option<Relation>,
    pub statistic: Option<PopulationStatistic>,
}

/// Outcome of a successful validation.
#[derive(Debug, Clone)]
pub struct ValidatedQuestion {
    pub context: String,
    pub value: f64,
    pub phi: Option<f64>,
}

/// Candidate-selection filter over the raw parent/child set.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SelectionMode {
    All,
    Threshold,
    TopN,
    ThresholdOrTopN,
}

#[derive(Debug, Clone, Copy)]
pub struct SelectionConfig {
    pub mode: SelectionMode,
    pub theta: f64,
    pub n: usize,
    pub k: usize,
}

impl SelectionConfig {
    pub fn all(k: usize) -> Self {
        SelectionConfig {
            mode: SelectionMode::All,
            theta: 0.0,
            n: 0,
            k,
        }
    }

    /// Parses the CLI spelling: `all`, `theta:X`, `topn:N`, `theta:X+topn:N`.
    pub fn parse(spec: &str, k: usize) -> Result<Self> {
        let mut theta = None;
        let mut n = None;
        if spec == "all" {
            return Ok(SelectionConfig::all(k));
        }
        for part in spec.split('+') {
            if let Some(v) = part.strip_prefix("theta:") {
                let v: f64 = v.parse().map_err(|_| {
                    TsceError::InvalidArgument(format!("bad theta in selection {spec:?}"))
                })?;
                if v < 0.0 || theta.replace(v).is_some() {
                    return Err(TsceError::InvalidArgument(format!(
                        "bad selection spec {spec:?}"
                    )));
                }
            } else if let Some(v) = part.strip_prefix("topn:") {
                let v: usize = v.parse().map_err(|_| {
                    TsceError::InvalidArgument(format!("bad topn in selection {spec:?}"))
                })?;
                if v == 0 || n.replace(v).is_some() {
                    return Err(TsceError::InvalidArgument(format!(
                        "bad selection spec {spec:?}"
                    )));
                }
            } else {
                return Err(TsceError::InvalidArgument(format!(
                    "unknown selection spec {spec:?} (expected all, theta:X, topn:N or theta:X+topn:N)"
                )));
            }
        }
        Ok(match (theta, n) {
            (Some(theta), None) => SelectionConfig {
                mode: SelectionMode::Threshold,
                theta,
                n: 0,
                k,
            },
            (None, Some(n)) => SelectionConfig {
                mode: SelectionMode::TopN,
                theta: 0.0,
                n,
                k,
            },
            (Some(theta), Some(n)) => SelectionConfig {
                mode: SelectionMode::ThresholdOrTopN,
                theta,
                n,
                k,
            },
            (None, None) => unreachable!("spec != all implies at least one part"),
        })
    }

    pub fn label(&self) -> String {
        match self.mode {
            SelectionMode::All => "all".to_string(),
            SelectionMode::Threshold => format!("theta:{}", self.theta),
            SelectionMode::TopN => format!("topn:{}", self.n),
            SelectionMode::ThresholdOrTopN => format!("theta:{}+topn:{}", self.theta, self.n),
        }
    }
}

/// One selected explainer: a parent (retrospective) or child (anticipative)
/// with its edge coefficient oriented cause -> effect.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub var: String,
    pub t: usize,
    pub alpha: f64,
}

// ---------------------------------------------------------------------------
// Operations
// ---------------------------------------------------------------------------

/// Checks a why-question against the data and contexts. Continuous questions
/// must hold strictly against the statistic; behaviour questions require a
/// binary variable whose value is 1 in a matched context.
pub fn validate_question(
    q: &WhyQuestion,
    view: &dyn DataView,
    cs: &ContextSet,
) -> Result<ValidatedQuestion> {
    if q.t >= view.horizon() {
        return Err(TsceError::InvalidQuestion(format!(
            "time {} is outside the recorded horizon {}",
            q.t,
            view.horizon()
        )));
    }
    let row = view.row(q.t)?;
    let ctx = cs.select_context(&row)?;
    let graph = ctx.graph()?;
    let kind = graph.kind_of(&q.variable)?;
    let value = view.value(&q.variable, q.t)?;
    match (&q.statistic, &q.relation) {
        (Some(stat), Some(rel)) => {
            stat.validate()?;
            if kind != VarKind::Continuous {
                return Err(TsceError::InvalidQuestion(format!(
                    "{} is not a continuous variable",
                    q.variable
                )));
            }
            let phi = view.phi(&q.variable, q.t)?.ok_or_else(|| {
                TsceError::InvalidQuestion(
                    "data source provides no population statistic".into(),
                )
            })?;
            if !rel.holds(value, phi) {
                return Err(TsceError::InvalidQuestion(format!(
                    "{} {} {} does not hold (value {}, statistic {})",
                    q.variable,
                    rel.symbol(),
                    phi,
                    value,
                    phi
                )));
            }
            Ok(ValidatedQuestion {
                context: ctx.name.clone(),
                value,
                phi: Some(phi),
            })
        }
        (None, None) => {
            if kind != VarKind::Binary {
                return Err(TsceError::InvalidQuestion(format!(
                    "behaviour question requires a binary variable, {} is continuous",
                    q.variable
                )));
            }
            if value != 1.0 {
                return Err(TsceError::InvalidQuestion(format!(
                    "{} is not active at t = {} (value {})",
                    q.variable, q.t, value
                )));
            }
            Ok(ValidatedQuestion {
                context: ctx.name.clone(),
                value,
                phi: None,
            })
        }
        _ => Err(TsceError::InvalidQuestion(
            "question must carry both relation and statistic, or neither".into(),
        )),
    }
}

/// Candidate explainers of `(v, t)` under `g`: parents in retrospective mode,
/// children in anticipative mode, filtered per the selection config and
/// ordered by |alpha| descending, then name, then time.
pub fn select_explainers(
    g: &TemporalCausalGraph,
    v: &str,
    t: usize,
    cfg: &SelectionConfig,
    mode: Mode,
) -> Result<Vec<Candidate>> {
    let raw = match mode {
        Mode::Retrospective => g.parent_edges(v, t)?,
        Mode::Anticipative => g.child_edges(v, t)?,
    };
    let mut cands: Vec<Candidate> = raw
        .into_iter()
        .map(|(e, time)| Candidate {
            var: match mode {
                Mode::Retrospective => e.src.clone(),
                Mode::Anticipative => e.dst.clone(),
            },
            t: time,
            alpha: e.weight,
        })
        .collect();
    cands.sort_by(|a, b| {
        b.alpha
            .abs()
            .partial_cmp(&a.alpha.abs())
            .unwrap()
            .then_with(|| a.var.cmp(&b.var))
            .then_with(|| a.t.cmp(&b.t))
    });
    let kept: Vec<Candidate> = match cfg.mode {
        SelectionMode::All => cands,
        SelectionMode::Threshold => cands
            .into_iter()
            .filter(|c| c.alpha.abs() > cfg.theta)
            .collect(),
        SelectionMode::TopN => cands.into_iter().take(cfg.n).collect(),
        SelectionMode::ThresholdOrTopN => cands
            .into_iter()
            .enumerate()
            .filter(|(i, c)| *i < cfg.n || c.alpha.abs() > cfg.theta)
            .map(|(_, c)| c)
            .collect(),
    };
    Ok(kept)
}

fn to_bit(v: f64, var: &str) -> Result<u8> {
    if v == 0.0 {
        Ok(0)
    } else if v == 1.0 {
        Ok(1)
    } else {
        Err(TsceError::InvalidArgument(format!(
            "binary variable {var} has non-binary value {v}"
        )))
    }
}

struct Evaluated {
    er: ErTriple,
    /// |x - phi_x| when the continuous rule was used.
    deviation: Option<f64>,
}

/// Rule dispatch for one cause -> effect pair. Falls back to the sign-only
/// score rule when either endpoint has no recorded value (anticipative
/// frontier) or when the continuous rule has no statistics to compare
/// against.
#[allow(clippy::too_many_arguments)]
fn evaluate_pair(
    alpha: f64,
    cause_kind: VarKind,
    effect_kind: VarKind,
    cause_var: &str,
    effect_var: &str,
    x: Option<f64>,
    phi_x: Option<f64>,
    y: Option<f64>,
    phi_y: Option<f64>,
    relation: Relation,
) -> Result<Evaluated> {
    let (x, y) = match (x, y) {
        (Some(x), Some(y)) => (x, y),
        _ => {
            return Ok(Evaluated {
                er: eval_er_score(alpha),
                deviation: None,
            })
        }
    };
    if cause_kind == VarKind::Binary && effect_kind == VarKind::Binary {
        let er = eval_er_binary(alpha, to_bit(x, cause_var)?, to_bit(y, effect_var)?)?;
        return Ok(Evaluated {
            er,
            deviation: None,
        });
    }
    match (phi_x, phi_y) {
        (Some(phi_x), Some(phi_y)) => {
            let er = eval_er_continuous(
                &CausalScenario {
                    alpha,
                    x,
                    y,
                    phi_x,
                    phi_y,
                },
                relation,
            )?;
            Ok(Evaluated {
                er,
                deviation: Some((x - phi_x).abs()),
            })
        }
        _ => Ok(Evaluated {
            er: eval_er_score(alpha),
            deviation: None,
        }),
    }
}

/// Builds the Explanation Tree for a validated why-question: breadth-first
/// expansion where every selected candidate is attached, but a candidate is
/// expanded further only while the depth budget lasts, its (variable, time)
/// pair is new to the tree, and it is not in the root's excluded closure
/// (descendants retrospectively, ancestors anticipatively).
pub fn explain(
    q: &WhyQuestion,
    mode: Mode,
    cs: &ContextSet,
    view: &dyn DataView,
    cfg: &SelectionConfig,
) -> Result<ExplanationTree> {
    let vq = validate_question(q, view, cs)?;
    let root_graph = cs.context(&vq.context)?.graph()?;
    let horizon = view.horizon();
    let closure: BTreeSet<TimedVar> = match mode {
        Mode::Retrospective => root_graph.descendants(&q.variable, q.t, horizon - 1)?,
        Mode::Anticipative => root_graph.ancestors(&q.variable, q.t)?,
    };
    let relation = q.relation.unwrap_or(Relation::Less);

    let mut tree = ExplanationTree {
        mode,
        k: cfg.k,
        selection: cfg.label(),
        nodes: vec![TreeNode {
            id: 0,
            var: q.variable.clone(),
            t: q.t,
            context: vq.context.clone(),
            value: Some(vq.value),
            phi: vq.phi,
            er: None,
            alpha: None,
            seq: None,
        }],
        edges: Vec::new(),
    };
    let mut seen: HashSet<TimedVar> = HashSet::from([(q.variable.clone(), q.t)]);
    let mut queue: VecDeque<(usize, usize, bool)> = VecDeque::from([(0, 0, true)]);

    while let Some((id, depth, expandable)) = queue.pop_front() {
        if !expandable || depth >= cfg.k {
            continue;
        }
        let (node_var, node_t, node_ctx, node_value, node_phi) = {
            let n = &tree.nodes[id];
            (n.var.clone(), n.t, n.context.clone(), n.value, n.phi)
        };
        let graph = match cs.context(&node_ctx)?.graph() {
            Ok(g) => g,
            Err(_) => continue,
        };
        if graph.variable(&node_var).is_err() {
            continue;
        }
        let node_kind = graph.kind_of(&node_var)?;
        let candidates = select_explainers(graph, &node_var, node_t, cfg, mode)?;

        let mut sibs: Vec<Sibling> = Vec::new();
        let mut sib_ids: Vec<usize> = Vec::new();
        for cand in candidates {
            let recorded = cand.t < horizon;
            let cand_ctx = if recorded {
                cs.select_context(&view.row(cand.t)?)?.name.clone()
            } else {
                node_ctx.clone()
            };
            let cand_value = if recorded {
                Some(view.value(&cand.var, cand.t)?)
            } else {
                None
            };
            let cand_phi = if recorded {
                view.phi(&cand.var, cand.t)?
            } else {
                None
            };
            let cand_kind = graph.kind_of(&cand.var)?;
            let ev = match mode {
                Mode::Retrospective => evaluate_pair(
                    cand.alpha,
                    cand_kind,
                    node_kind,
                    &cand.var,
                    &node_var,
                    cand_value,
                    cand_phi,
                    node_value,
                    node_phi,
                    relation,
                )?,
                Mode::Anticipative => evaluate_pair(
                    cand.alpha,
                    node_kind,
                    cand_kind,
                    &node_var,
                    &cand.var,
                    node_value,
                    node_phi,
                    cand_value,
                    cand_phi,
                    relation,
                )?,
            };
            let key = (cand.var.clone(), cand.t);
            let child_expandable = recorded && !seen.contains(&key) && !closure.contains(&key);
            seen.insert(key);
            let child_id = tree.nodes.len();
            tree.nodes.push(TreeNode {
                id: child_id,
                var: cand.var.clone(),
                t: cand.t,
                context: cand_ctx,
                value: cand_value,
                phi: cand_phi,
                er: Some(ev.er),
                alpha: Some(cand.alpha),
                seq: None,
            });
            tree.edges.push((id, child_id));
            queue.push_back((child_id, depth + 1, child_expandable));
            sibs.push(Sibling {
                er: ev.er,
                alpha: cand.alpha,
                deviation: ev.deviation,
                name: cand.var,
                t: cand.t,
            });
            sib_ids.push(child_id);
        }
        if mode == Mode::Retrospective {
            apply_er3(&mut sibs);
            for (s, cid) in sibs.iter().zip(&sib_ids) {
                tree.nodes[*cid].er = Some(s.er);
            }
        }
    }

    assign_sequences(&mut tree);
    Ok(tree)
}

/// The child-indicator signature of a node: the multiset of
/// (child variable, time offset, child ER triple) over its direct children.
/// The er3 ("mostly") marker is zeroed out: it ranks a child against its
/// siblings rather than describing the cause-effect pair itself, so it must
/// not break otherwise identical patterns apart.
pub fn node_signature(tree: &ExplanationTree, id: usize) -> Vec<(String, i64, [i8; 3])> {
    let node_t = tree.nodes[id].t as i64;
    let mut sig: Vec<(String, i64, [i8; 3])> = tree
        .children_of(id)
        .into_iter()
        .map(|c| {
            let child = &tree.nodes[c];
            let er = child.er.map(|e| e.as_array()).unwrap_or([0, 0, 0]);
            (child.var.clone(), node_t - child.t as i64, [er[0], er[1], 0])
        })
        .collect();
    sig.sort();
    sig
}

/// Assigns sequence ids: per variable, non-leaf nodes in descending time
/// order share an id while consecutive (time difference one) and carrying
/// identical child-indicator signatures. Leaves get no id. Ids are dense from
/// zero, deterministic across runs.
pub fn assign_sequences(tree: &mut ExplanationTree) {
    for n in tree.nodes.iter_mut() {
        n.seq = None;
    }
    let mut per_var: HashMap<String, Vec<usize>> = HashMap::new();
    for n in &tree.nodes {
        if !tree.is_leaf(n.id) {
            per_var.entry(n.var.clone()).or_default().push(n.id);
        }
    }
    let mut vars: Vec<&String> = per_var.keys().collect();
    vars.sort();
    let mut next_id = 0usize;
    let mut assignments: Vec<(usize, usize)> = Vec::new();
    for var in vars {
        let mut ids = per_var[var].clone();
        ids.sort_by(|a, b| tree.nodes[*b].t.cmp(&tree.nodes[*a].t));
        let mut prev: Option<(usize, Vec<(String, i64, [i8; 3])>, usize)> = None;
        for id in ids {
            let t = tree.nodes[id].t;
            let sig = node_signature(tree, id);
            let seq = match &prev {
                Some((pt, psig, pseq)) if *pt == t + 1 && *psig == sig => *pseq,
                _ => {
                    let s = next_id;
                    next_id += 1;
                    s
                }
            };
            assignments.push((id, seq));
            prev = Some((t, sig, seq));
        }
    }
    for (id, seq) in assignments {
        tree.nodes[id].seq = Some(seq);
    }
}
