//! Template-based rendering of Explanation Trees into English sentences.
//!
//! Wording is driven by a TOML lexicon so the same encodings verbalize
//! naturally across domains (population statistics over a health panel vs.
//! binary agent behaviour in a grid game). Rendering is a pure function of
//! (tree, lexicon, flags): clause order is fixed by ("mostly" marker, |alpha|
//! descending, variable name, time), so output is golden-file stable.

use std::collections::BTreeSet;
use std::path::Path;

use crate::error::{Result, TsceError};
use crate::tree::{ExplanationTree, Mode, TreeNode};

/// Wording table. See `Lexicon::from_toml_str` for the key set.
#[derive(Debug, Clone)]
pub struct Lexicon {
    root: toml::Value,
}

/// Which sentence family to use: statements about population statistics
/// ("was below average") or about binary behaviour ("is targeting the
/// enemy").
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LexiconKind {
    Population,
    Behaviour,
}

impl Lexicon {
    /// Parses a lexicon.
    ///
    /// Recognized keys (all optional except the per-variable table):
    ///
    /// ```toml
    /// [style]
    /// owner = "Hans'"          # subject prefix of the first sentence
    /// owner_follow = "his"     # possessive inside clauses / later sentences
    /// kind = "population"      # or "behaviour"
    /// because = "because of"   # population clause connector
    /// mostly = "mostly because"
    /// despite = "despite"
    ///
    /// [time]
    /// unit = "year"
    /// units = "years"
    /// current = "in the current year"   # zero-lag clause phrase
    /// prev = "one year before"          # lag-1 clause phrase
    /// span = "for the past"             # sequence span prefix
    /// persist = "persistently"          # same-variable lagged marker
    /// subject_now = ""                  # subject time phrase at root time
    ///
    /// [var.Health]
    /// noun = "Health"
    /// high = "high"   # adjective (population) or full phrase (behaviour)
    /// low = "low"
    /// ```
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let root: toml::Value = s
            .parse()
            .map_err(|e| TsceError::Lexicon(format!("invalid lexicon TOML: {e}")))?;
        Ok(Lexicon { root })
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    fn lookup(&self, table: &str, key: &str) -> Option<&str> {
        self.root.get(table)?.get(key)?.as_str()
    }

    fn style(&self, key: &str, default: &str) -> String {
        self.lookup("style", key).unwrap_or(default).to_string()
    }

    fn time(&self, key: &str, default: &str) -> String {
        self.lookup("time", key).unwrap_or(default).to_string()
    }

    pub fn kind(&self) -> LexiconKind {
        match self.lookup("style", "kind") {
            Some("behaviour") => LexiconKind::Behaviour,
            _ => LexiconKind::Population,
        }
    }

    fn var(&self, name: &str, key: &str) -> Result<String> {
        self.root
            .get("var")
            .and_then(|v| v.get(name))
            .and_then(|v| v.get(key))
            .and_then(|v| v.as_str())
            .map(|s| s.to_string())
            .ok_or_else(|| TsceError::Lexicon(format!("lexicon is missing var.{name}.{key}")))
    }

    fn noun(&self, name: &str) -> Result<String> {
        self.var(name, "noun")
    }

    /// "high"/"low" wording for a +1/-1 side.
    fn sided(&self, name: &str, side: i8) -> Result<String> {
        self.var(name, if side > 0 { "high" } else { "low" })
    }
}

fn capitalize(s: &str) -> String {
    let mut cs = s.chars();
    match cs.next() {
        Some(c) => c.to_uppercase().collect::<String>() + cs.as_str(),
        None => String::new(),
    }
}

fn number_word(n: usize) -> String {
    const WORDS: [&str; 12] = [
        "one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten", "eleven",
        "twelve",
    ];
    match n {
        1..=12 => WORDS[n - 1].to_string(),
        _ => n.to_string(),
    }
}

/// Coefficient suffix wording: 3 decimals, trailing zeros trimmed.
fn format_coefficient(alpha: f64) -> String {
    let s = format!("{:.3}", alpha.abs());
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s.is_empty() {
        "0".to_string()
    } else {
        s.to_string()
    }
}

/// A child prepared for clause rendering.
struct Clause {
    var: String,
    /// `node.t - child.t`.
    lag: i64,
    side: i8,
    alpha: f64,
    mostly: bool,
    supporting: bool,
}

fn clauses_of(tree: &ExplanationTree, node: &TreeNode) -> Result<Vec<Clause>> {
    let children = tree.children_of(node.id);
    if children.is_empty() {
        return Err(TsceError::TreeOp(format!(
            "node {:?} at t = {} has no evaluated children to verbalize",
            node.var, node.t
        )));
    }
    let mut out = Vec::new();
    for c in children {
        let child = &tree.nodes[c];
        let er = child.er.expect("validated non-root node carries ER");
        if !er.fired() && er.er2 == 0 {
            continue; // inactive indicator (both endpoints at their statistic)
        }
        out.push(Clause {
            var: child.var.clone(),
            lag: node.t as i64 - child.t as i64,
            side: if er.er1 != 0 { er.er1 } else { er.er2 },
            alpha: child.alpha.unwrap_or(0.0),
            mostly: er.er3 == 1,
            supporting: er.er1 != 0,
        });
    }
    // "mostly" first, then |alpha| descending, name, earlier offsets first
    out.sort_by(|a, b| {
        b.mostly
            .cmp(&a.mostly)
            .then(b.alpha.abs().partial_cmp(&a.alpha.abs()).unwrap())
            .then(a.var.cmp(&b.var))
            .then(a.lag.cmp(&b.lag))
    });
    Ok(out)
}

/// The node's own high/low side: from its indicator if present, from the
/// recorded deviation otherwise (the root).
fn subject_side(node: &TreeNode) -> Result<i8> {
    if let Some(er) = node.er {
        let s = if er.er1 != 0 { er.er1 } else { er.er2 };
        if s != 0 {
            return Ok(s);
        }
    }
    match (node.value, node.phi) {
        (Some(v), Some(phi)) if v != phi => Ok(if v > phi { 1 } else { -1 }),
        // binary behaviour node: the bit itself is the side
        (Some(v), None) => Ok(if v >= 0.5 { 1 } else { -1 }),
        _ => Err(TsceError::TreeOp(format!(
            "cannot determine the deviation side of {:?} at t = {}",
            node.var, node.t
        ))),
    }
}

fn lag_phrase(lex: &Lexicon, lag: i64) -> String {
    match lag {
        0 => lex.time("current", "in the current year"),
        1 => lex.time("prev", "one year before"),
        n => format!(
            "{} {} before",
            number_word(n.unsigned_abs() as usize),
            lex.time("units", "years")
        ),
    }
}

/// Population clause: "his low Health persistently one year before".
fn population_clause(lex: &Lexicon, c: &Clause, subject_var: &str) -> Result<String> {
    let persist = if c.var == subject_var && c.lag >= 1 {
        format!(" {}", lex.time("persist", "persistently"))
    } else {
        String::new()
    };
    Ok(format!(
        "{} {} {}{} {}",
        lex.style("owner_follow", "his"),
        lex.sided(&c.var, c.side)?,
        lex.noun(&c.var)?,
        persist,
        lag_phrase(lex, c.lag),
    ))
}

/// ", mostly because A and because of B and C, despite D" (population).
fn population_clause_block(lex: &Lexicon, clauses: &[Clause], subject_var: &str) -> Result<String> {
    let because: Vec<&Clause> = clauses.iter().filter(|c| c.supporting).collect();
    let although: Vec<&Clause> = clauses.iter().filter(|c| !c.supporting).collect();
    let mut out = String::new();
    if !because.is_empty() {
        out.push_str(", ");
        let texts: Vec<String> = because
            .iter()
            .map(|c| population_clause(lex, c, subject_var))
            .collect::<Result<_>>()?;
        if because[0].mostly {
            out.push_str(&format!("{} {}", lex.style("mostly", "mostly because"), texts[0]));
            if texts.len() > 1 {
                out.push_str(&format!(
                    " and {} {}",
                    lex.style("because", "because of"),
                    texts[1..].join(" and ")
                ));
            }
        } else {
            out.push_str(&format!(
                "{} {}",
                lex.style("because", "because of"),
                texts.join(" and ")
            ));
        }
    }
    if !although.is_empty() {
        let texts: Vec<String> = although
            .iter()
            .map(|c| population_clause(lex, c, subject_var))
            .collect::<Result<_>>()?;
        out.push_str(&format!(
            ", {} {}",
            lex.style("despite", "despite"),
            texts.join(" and ")
        ));
    }
    Ok(out)
}

/// Behaviour clause block: "mostly because A, because B and because C
/// continuously in the previous time step, although D".
fn behaviour_clause_block(lex: &Lexicon, clauses: &[Clause]) -> Result<String> {
    let because: Vec<&Clause> = clauses.iter().filter(|c| c.supporting).collect();
    let although: Vec<&Clause> = clauses.iter().filter(|c| !c.supporting).collect();
    let uniform_lag = because
        .first()
        .map(|c0| because.iter().all(|c| c.lag == c0.lag))
        .unwrap_or(false);
    let time_of = |lag: i64| match lag {
        0 => lex.time("current", "in the same time step"),
        1 => lex.time("prev", "in the previous time step"),
        n => format!(
            "{} {} before",
            number_word(n.unsigned_abs() as usize),
            lex.time("units", "time steps")
        ),
    };
    let mut parts = Vec::new();
    for (i, c) in because.iter().enumerate() {
        let connector = if i == 0 && c.mostly {
            lex.style("mostly", "mostly because")
        } else {
            "because".to_string()
        };
        let mut clause = format!("{connector} {}", lex.sided(&c.var, c.side)?);
        if !uniform_lag {
            clause.push_str(&format!(" {}", time_of(c.lag)));
        }
        parts.push(clause);
    }
    let mut out = String::new();
    if !parts.is_empty() {
        out.push_str(", ");
        if parts.len() == 1 {
            out.push_str(&parts[0]);
        } else {
            out.push_str(&parts[..parts.len() - 1].join(", "));
            out.push_str(&format!(" and {}", parts[parts.len() - 1]));
        }
        if uniform_lag {
            out.push_str(&format!(
                " {} {}",
                lex.time("persist", "continuously"),
                time_of(because[0].lag)
            ));
        }
    }
    for c in &although {
        out.push_str(&format!(
            ", although {} {}",
            lex.sided(&c.var, c.side)?,
            time_of(c.lag)
        ));
    }
    Ok(out)
}

fn render_node_with_owner(
    tree: &ExplanationTree,
    id: usize,
    lex: &Lexicon,
    owner: &str,
) -> Result<String> {
    let node = tree.node(id)?;
    let clauses = clauses_of(tree, node)?;
    let side = subject_side(node)?;
    match lex.kind() {
        LexiconKind::Population => {
            let root_t = tree.root().t as i64;
            let offset = root_t - node.t as i64;
            let subject_time = if offset == 0 {
                let now = lex.time("subject_now", "");
                if now.is_empty() {
                    String::new()
                } else {
                    format!(" {now}")
                }
            } else {
                format!(" {}", lag_phrase(lex, offset))
            };
            Ok(capitalize(&format!(
                "{owner} {} was {} average{subject_time}{}.",
                lex.noun(&node.var)?,
                if side > 0 { "above" } else { "below" },
                population_clause_block(lex, &clauses, &node.var)?,
            )))
        }
        LexiconKind::Behaviour => Ok(capitalize(&format!(
            "{owner} is {}{}{}.",
            if side > 0 { "" } else { "not " },
            lex.noun(&node.var)?,
            behaviour_clause_block(lex, &clauses)?,
        ))),
    }
}

/// One sentence for an explained node: subject deviation, then "because"
/// clauses ("mostly" first, |alpha| descending), then "despite/although"
/// clauses.
pub fn render_node(tree: &ExplanationTree, id: usize, lex: &Lexicon) -> Result<String> {
    render_node_with_owner(tree, id, lex, &lex.style("owner", "the"))
}

fn render_sequence_with_owner(
    tree: &ExplanationTree,
    run: &[usize],
    lex: &Lexicon,
    owner: &str,
) -> Result<String> {
    if run.len() < 2 {
        return match run {
            [only] => render_node_with_owner(tree, *only, lex, owner),
            _ => Err(TsceError::TreeOp("empty sequence".into())),
        };
    }
    let var = &tree.nodes[run[0]].var;
    if run.iter().any(|&id| &tree.nodes[id].var != var) {
        return Err(TsceError::TreeOp("sequence mixes variables".into()));
    }
    let mut ids: Vec<usize> = run.to_vec();
    ids.sort_by(|a, b| tree.nodes[*b].t.cmp(&tree.nodes[*a].t));
    let newest = ids[0];
    let node = &tree.nodes[newest];
    let clauses = clauses_of(tree, node)?;
    let side = subject_side(node)?;
    match lex.kind() {
        LexiconKind::Population => Ok(capitalize(&format!(
            "{owner} {} has been consistently {} average {} {} {}{}.",
            lex.noun(var)?,
            if side > 0 { "above" } else { "below" },
            lex.time("span", "for the past"),
            number_word(ids.len()),
            lex.time("units", "years"),
            population_clause_block(lex, &clauses, var)?,
        ))),
        LexiconKind::Behaviour => {
            let t_min = tree.nodes[*ids.last().unwrap()].t;
            let t_max = node.t;
            Ok(capitalize(&format!(
                "{owner} is {}{}, {} {} {} to {}{}.",
                if side > 0 { "" } else { "not " },
                lex.noun(var)?,
                lex.time("span", "constantly over"),
                lex.time("units", "actions"),
                t_min,
                t_max,
                behaviour_clause_block(lex, &clauses)?,
            )))
        }
    }
}

/// One summarizing sentence for a maximal same-sequence run of nodes,
/// described through the children of the most recent node. Singleton runs
/// fall back to `render_node`.
pub fn render_sequence(tree: &ExplanationTree, run: &[usize], lex: &Lexicon) -> Result<String> {
    render_sequence_with_owner(tree, run, lex, &lex.style("owner", "the"))
}

/// "X has a positive effect on A, B and a negative effect on C and D in the
/// next time step." Positives before negatives, each group ordered by
/// |alpha| descending; optional "(4.338)"-style coefficient suffixes.
pub fn render_anticipative(
    tree: &ExplanationTree,
    id: usize,
    lex: &Lexicon,
    with_coefficients: bool,
) -> Result<String> {
    if tree.mode != Mode::Anticipative {
        return Err(TsceError::TreeOp(
            "anticipative rendering requires an anticipative tree".into(),
        ));
    }
    let node = tree.node(id)?;
    let mut effects: Vec<(&TreeNode, f64)> = tree
        .children_of(id)
        .into_iter()
        .map(|c| {
            let child = &tree.nodes[c];
            (child, child.alpha.unwrap_or(0.0))
        })
        .filter(|(_, a)| *a != 0.0)
        .collect();
    if effects.is_empty() {
        return Err(TsceError::TreeOp(format!(
            "node {:?} at t = {} has no effects to verbalize",
            node.var, node.t
        )));
    }
    effects.sort_by(|a, b| {
        b.1.abs()
            .partial_cmp(&a.1.abs())
            .unwrap()
            .then(a.0.var.cmp(&b.0.var))
    });
    let describe = |group: &[(&TreeNode, f64)]| -> Result<Vec<String>> {
        group
            .iter()
            .map(|(n, a)| {
                let mut s = lex.noun(&n.var)?;
                if with_coefficients {
                    s.push_str(&format!(" ({})", format_coefficient(*a)));
                }
                Ok(s)
            })
            .collect()
    };
    let positive: Vec<(&TreeNode, f64)> = effects.iter().filter(|(_, a)| *a > 0.0).cloned().collect();
    let negative: Vec<(&TreeNode, f64)> = effects.iter().filter(|(_, a)| *a < 0.0).cloned().collect();
    let mut parts = Vec::new();
    if !positive.is_empty() {
        parts.push(format!(
            "a positive effect on {}",
            describe(&positive)?.join(", ")
        ));
    }
    if !negative.is_empty() {
        let texts = describe(&negative)?;
        let list = if texts.len() == 1 {
            texts[0].clone()
        } else {
            format!(
                "{} and {}",
                texts[..texts.len() - 1].join(", "),
                texts[texts.len() - 1]
            )
        };
        parts.push(format!("a negative effect on {list}"));
    }
    Ok(capitalize(&format!(
        "{} has {} in the next time step.",
        lex.noun(&node.var)?,
        parts.join(" and "),
    )))
}

/// Renders the whole tree, one sentence per explained node or sequence, in
/// breadth-first node order; sequences of two or more nodes are summarized
/// once. The first sentence uses `style.owner`, later ones the capitalized
/// `style.owner_follow`. Sentences are joined by newlines.
pub fn render_tree(
    tree: &ExplanationTree,
    lex: &Lexicon,
    with_coefficients: bool,
) -> Result<String> {
    tree.validate()?;
    let mut sentences: Vec<String> = Vec::new();
    if tree.mode == Mode::Anticipative {
        for node in &tree.nodes {
            if !tree.is_leaf(node.id) {
                sentences.push(render_anticipative(tree, node.id, lex, with_coefficients)?);
            }
        }
    } else {
        let mut consumed: BTreeSet<usize> = BTreeSet::new();
        for node in &tree.nodes {
            if tree.is_leaf(node.id) || consumed.contains(&node.id) {
                continue;
            }
            let owner = if sentences.is_empty() {
                lex.style("owner", "the")
            } else {
                capitalize(&lex.style("owner_follow", "his"))
            };
            let run: Vec<usize> = match node.seq {
                Some(s) => tree
                    .nodes
                    .iter()
                    .filter(|n| n.seq == Some(s))
                    .map(|n| n.id)
                    .collect(),
                None => vec![node.id],
            };
            let sentence = if run.len() >= 2 {
                consumed.extend(run.iter().copied());
                render_sequence_with_owner(tree, &run, lex, &owner)?
            } else {
                render_node_with_owner(tree, node.id, lex, &owner)?
            };
            sentences.push(sentence);
        }
    }
    Ok(sentences.join("\n"))
}
