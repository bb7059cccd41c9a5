//! Explanation rules: the continuous exhibition/inhibition pair (ER1/ER2),
//! the binary behaviour variant, the sign-only score rule, and the "mostly"
//! complementary rule (ER3).
//!
//! The encoding of a fired rule is the parent's side: +1 for a high parent,
//! -1 for a low one. ER1 ("because") fires when the parent's deviation pushes
//! the child toward its observed side given the edge sign; ER2 ("although")
//! fires when it opposes it. On the signs of (alpha, x - phi_x, y - phi_y)
//! this is: ER1 iff the product of the three signs is positive, ER2 iff
//! negative; a parent or child sitting exactly on its statistic fires nothing.

use serde::{Deserialize, Serialize};

use crate::error::{Result, TsceError};

/// The relation R of a why-question.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Relation {
    #[serde(rename = "<")]
    Less,
    #[serde(rename = ">")]
    Greater,
}

impl Relation {
    pub fn complement(self) -> Relation {
        match self {
            Relation::Less => Relation::Greater,
            Relation::Greater => Relation::Less,
        }
    }

    pub fn holds(self, x: f64, y: f64) -> bool {
        match self {
            Relation::Less => x < y,
            Relation::Greater => x > y,
        }
    }

    pub fn symbol(self) -> &'static str {
        match self {
            Relation::Less => "<",
            Relation::Greater => ">",
        }
    }
}

impl std::str::FromStr for Relation {
    type Err = TsceError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "<" => Ok(Relation::Less),
            ">" => Ok(Relation::Greater),
            _ => Err(TsceError::InvalidArgument(format!(
                "relation must be < or >, got {s:?}"
            ))),
        }
    }
}

/// One rule evaluation for an edge X -> Y.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErTriple {
    pub er1: i8,
    pub er2: i8,
    pub er3: u8,
}

impl ErTriple {
    pub const NONE: ErTriple = ErTriple {
        er1: 0,
        er2: 0,
        er3: 0,
    };

    pub fn because(side: i8) -> ErTriple {
        ErTriple {
            er1: side,
            er2: 0,
            er3: 0,
        }
    }

    pub fn although(side: i8) -> ErTriple {
        ErTriple {
            er1: 0,
            er2: side,
            er3: 0,
        }
    }

    pub fn fired(&self) -> bool {
        self.er1 != 0 || self.er2 != 0
    }

    pub fn as_array(&self) -> [i8; 3] {
        [self.er1, self.er2, self.er3 as i8]
    }

    pub fn from_array(a: [i8; 3]) -> Result<ErTriple> {
        if !(-1..=1).contains(&a[0]) || !(-1..=1).contains(&a[1]) || !(0..=1).contains(&a[2]) {
            return Err(TsceError::InvalidArgument(format!("bad ER triple {a:?}")));
        }
        if a[0] != 0 && a[1] != 0 {
            return Err(TsceError::InvalidArgument(
                "er1 and er2 are mutually exclusive".into(),
            ));
        }
        Ok(ErTriple {
            er1: a[0],
            er2: a[1],
            er3: a[2] as u8,
        })
    }
}

/// A causal scenario for one weighted edge X -> Y: the edge coefficient, the
/// parent value x with its statistic phi_x, and the child value y with phi_y.
#[derive(Debug, Clone, Copy)]
pub struct CausalScenario {
    pub alpha: f64,
    pub x: f64,
    pub y: f64,
    pub phi_x: f64,
    pub phi_y: f64,
}

fn side(value: f64, phi: f64) -> i8 {
    if value > phi {
        1
    } else if value < phi {
        -1
    } else {
        0
    }
}

/// Continuous fundamental rules. `relation_question` is the R of the
/// validated why-question; the fired rule is invariant to it given the
/// observed sides of x and y, so it is accepted for interface completeness
/// and validation only.
pub fn eval_er_continuous(c: &CausalScenario, _relation_question: Relation) -> Result<ErTriple> {
    if c.alpha == 0.0 {
        return Err(TsceError::InvalidArgument(
            "causal scenario with alpha = 0 (edge should not exist)".into(),
        ));
    }
    let sx = side(c.x, c.phi_x);
    let sy = side(c.y, c.phi_y);
    if sx == 0 || sy == 0 {
        return Ok(ErTriple::NONE);
    }
    let s_alpha: i8 = if c.alpha > 0.0 { 1 } else { -1 };
    if s_alpha * sx * sy > 0 {
        Ok(ErTriple::because(sx))
    } else {
        Ok(ErTriple::although(sx))
    }
}

/// Binary behaviour rule: fires iff
/// `(s(alpha) < 0 and x xor y) or (s(alpha) > 0 and x == y)`.
/// The encoding is the parent state (+1 for x = 1, -1 for x = 0); non-firing
/// scenarios keep the parent-state encoding in er2 ("although").
pub fn eval_er_binary(alpha: f64, x: u8, y: u8) -> Result<ErTriple> {
    if alpha == 0.0 {
        return Err(TsceError::InvalidArgument(
            "causal scenario with alpha = 0 (edge should not exist)".into(),
        ));
    }
    if x > 1 || y > 1 {
        return Err(TsceError::InvalidArgument(format!(
            "binary rule inputs must be 0 or 1, got x={x}, y={y}"
        )));
    }
    let state: i8 = if x == 1 { 1 } else { -1 };
    let fires = if alpha < 0.0 { x != y } else { x == y };
    if fires {
        Ok(ErTriple::because(state))
    } else {
        Ok(ErTriple::although(state))
    }
}

/// Score rule for continuous behaviour parents: the indicator is the sign of
/// the coefficient alone.
pub fn eval_er_score(alpha: f64) -> ErTriple {
    ErTriple::because(if alpha >= 0.0 { 1 } else { -1 })
}

/// One sibling entry for the "mostly" rule.
#[derive(Debug, Clone)]
pub struct Sibling {
    pub er: ErTriple,
    pub alpha: f64,
    /// |x - phi_x| for continuous parents; `None` for binary parents, whose
    /// score degrades to |alpha|.
    pub deviation: Option<f64>,
    /// Tie-break key: variable name, then time (earlier wins).
    pub name: String,
    pub t: usize,
}

impl Sibling {
    fn score(&self) -> f64 {
        match self.deviation {
            Some(d) => (self.alpha * d).abs(),
            None => self.alpha.abs(),
        }
    }
}

/// Marks er3 = 1 on the single "because" sibling with the largest
/// |alpha * (x - phi_x)| (|alpha| for binaries). Requires at least two
/// because-siblings; ties break by variable name, then earlier time.
pub fn apply_er3(siblings: &mut [Sibling]) {
    for s in siblings.iter_mut() {
        s.er.er3 = 0;
    }
    let because: Vec<usize> = (0..siblings.len())
        .filter(|&i| siblings[i].er.er1 != 0)
        .collect();
    if because.len() < 2 {
        return;
    }
    let mut best = because[0];
    for &i in &because[1..] {
        let (si, sb) = (siblings[i].score(), siblings[best].score());
        let better = si > sb
            || (si == sb
                && (siblings[i].name.as_str(), siblings[i].t)
                    < (siblings[best].name.as_str(), siblings[best].t));
        if better {
            best = i;
        }
    }
    siblings[best].er.er3 = 1;
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn scenario(alpha: f64, x: f64, phi_x: f64, y: f64, phi_y: f64) -> CausalScenario {
        CausalScenario {
            alpha,
            x,
            y,
            phi_x,
            phi_y,
        }
    }

    #[test]
    fn poor_health_explains_poor_mobility() {
        // alpha=+0.5, Health 2.6 below phi, Mobility 26.2 below phi -> because low parent
        let c = scenario(0.5, 2.6, 10.0, 26.2, 30.0);
        assert_eq!(
            eval_er_continuous(&c, Relation::Less).unwrap(),
            ErTriple::because(-1)
        );
    }

    #[test]
    fn high_age_explains_poor_health() {
        // alpha=-0.2, Age 93.8 above phi, Health below phi -> because high parent
        let c = scenario(-0.2, 93.8, 55.0, 2.6, 10.0);
        assert_eq!(
            eval_er_continuous(&c, Relation::Less).unwrap(),
            ErTriple::because(1)
        );
    }

    #[test]
    fn good_food_habits_despite_poor_health() {
        // alpha=+0.6, Nutrition above phi, Health below phi -> although high parent
        let c = scenario(0.6, 58.8, 40.0, 2.6, 10.0);
        assert_eq!(
            eval_er_continuous(&c, Relation::Less).unwrap(),
            ErTriple::although(1)
        );
    }

    #[test]
    fn boundary_values_fire_nothing() {
        let c = scenario(0.5, 10.0, 10.0, 26.2, 30.0);
        assert_eq!(eval_er_continuous(&c, Relation::Less).unwrap(), ErTriple::NONE);
        let c = scenario(0.5, 2.6, 10.0, 30.0, 30.0);
        assert_eq!(eval_er_continuous(&c, Relation::Less).unwrap(), ErTriple::NONE);
    }

    #[test]
    fn zero_alpha_is_rejected() {
        let c = scenario(0.0, 1.0, 0.0, 1.0, 0.0);
        assert!(eval_er_continuous(&c, Relation::Less).is_err());
        assert!(eval_er_binary(0.0, 1, 1).is_err());
    }

    /// Independent truth-table oracle: enumerates the "deviation pushes the
    /// child toward its observed side" semantics literally.
    fn continuous_oracle(alpha_positive: bool, x_high: bool, y_high: bool) -> ErTriple {
        let parent_side: i8 = if x_high { 1 } else { -1 };
        // direction the parent's deviation pushes the child
        let push_high = alpha_positive == x_high;
        let supports = push_high == y_high;
        if supports {
            ErTriple::because(parent_side)
        } else {
            ErTriple::although(parent_side)
        }
    }

    #[test]
    fn continuous_truth_table_matches_oracle() {
        for (ap, xh, yh) in itertools_cube() {
            let alpha = if ap { 0.7 } else { -0.7 };
            let x = if xh { 1.5 } else { -1.5 };
            let y = if yh { 2.5 } else { -2.5 };
            let c = scenario(alpha, x, 0.0, y, 0.0);
            for r in [Relation::Less, Relation::Greater] {
                assert_eq!(
                    eval_er_continuous(&c, r).unwrap(),
                    continuous_oracle(ap, xh, yh),
                    "alpha_pos={ap} x_high={xh} y_high={yh}"
                );
            }
        }
    }

    fn itertools_cube() -> Vec<(bool, bool, bool)> {
        let mut v = Vec::new();
        for a in [false, true] {
            for b in [false, true] {
                for c in [false, true] {
                    v.push((a, b, c));
                }
            }
        }
        v
    }

    #[test]
    fn binary_examples_from_behaviour_tables() {
        // alpha>0, x=1, y=1 -> because the enemy was targeted
        assert_eq!(eval_er_binary(1.0, 1, 1).unwrap(), ErTriple::because(1));
        // alpha<0, x=0, y=1 -> because the player did not collide
        assert_eq!(eval_er_binary(-0.5, 0, 1).unwrap(), ErTriple::because(-1));
        // alpha>0, x=0, y=1 -> although (not)
        assert_eq!(eval_er_binary(0.3, 0, 1).unwrap(), ErTriple::although(-1));
    }

    #[test]
    fn binary_truth_table_matches_formula() {
        for (ap, x, y) in itertools_cube() {
            let alpha = if ap { 0.4 } else { -0.4 };
            let (xb, yb) = (x as u8, y as u8);
            let fires = (!ap && (xb ^ yb) == 1) || (ap && xb == yb);
            let state: i8 = if xb == 1 { 1 } else { -1 };
            let expected = if fires {
                ErTriple::because(state)
            } else {
                ErTriple::although(state)
            };
            assert_eq!(eval_er_binary(alpha, xb, yb).unwrap(), expected);
        }
    }

    #[test]
    fn binary_rejects_non_binary_input() {
        assert!(eval_er_binary(1.0, 2, 0).is_err());
    }

    #[test]
    fn score_rule_is_sign_only() {
        assert_eq!(eval_er_score(4.338), ErTriple::because(1));
        assert_eq!(eval_er_score(-0.479), ErTriple::because(-1));
        assert_eq!(eval_er_score(123.0), eval_er_score(1.0));
    }

    fn sib(er: ErTriple, alpha: f64, dev: Option<f64>, name: &str, t: usize) -> Sibling {
        Sibling {
            er,
            alpha,
            deviation: dev,
            name: name.into(),
            t,
        }
    }

    #[test]
    fn er3_marks_strongest_because_sibling() {
        let mut sibs = vec![
            sib(ErTriple::because(-1), 0.6, Some(12.0), "Health", 4),
            sib(ErTriple::because(1), -0.2, Some(20.0), "Age", 5),
            sib(ErTriple::although(1), 0.6, Some(3.0), "Nutrition", 5),
        ];
        apply_er3(&mut sibs);
        assert_eq!(sibs[0].er.er3, 1); // |0.6*12| = 7.2 > |0.2*20| = 4
        assert_eq!(sibs[1].er.er3, 0);
        assert_eq!(sibs[2].er.er3, 0);
    }

    #[test]
    fn er3_needs_two_because_siblings() {
        let mut sibs = vec![
            sib(ErTriple::because(-1), 0.6, Some(12.0), "Health", 4),
            sib(ErTriple::although(1), 0.6, Some(30.0), "Nutrition", 5),
        ];
        apply_er3(&mut sibs);
        assert!(sibs.iter().all(|s| s.er.er3 == 0));
        let mut empty: Vec<Sibling> = vec![];
        apply_er3(&mut empty);
    }

    #[test]
    fn er3_ties_break_by_name_then_time() {
        let mut sibs = vec![
            sib(ErTriple::because(1), 0.5, Some(2.0), "b", 3),
            sib(ErTriple::because(1), 0.5, Some(2.0), "a", 4),
            sib(ErTriple::because(1), 0.5, Some(2.0), "a", 2),
        ];
        apply_er3(&mut sibs);
        assert_eq!(sibs[2].er.er3, 1); // name "a", earlier time
    }

    #[test]
    fn er3_matches_linear_scan_oracle() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let n = rng.gen_range(0..6);
            let mut sibs: Vec<Sibling> = (0..n)
                .map(|i| {
                    let because = rng.gen_bool(0.6);
                    let er = if because {
                        ErTriple::because(1)
                    } else {
                        ErTriple::although(1)
                    };
                    sib(
                        er,
                        rng.gen_range(-2.0..2.0f64),
                        Some(rng.gen_range(0.0..5.0)),
                        &format!("v{i}"),
                        i,
                    )
                })
                .filter(|s| s.alpha != 0.0)
                .collect();
            apply_er3(&mut sibs);
            let because: Vec<&Sibling> = sibs.iter().filter(|s| s.er.er1 != 0).collect();
            let marked: Vec<&Sibling> = sibs.iter().filter(|s| s.er.er3 == 1).collect();
            if because.len() < 2 {
                assert!(marked.is_empty());
            } else {
                assert_eq!(marked.len(), 1);
                let max = because
                    .iter()
                    .map(|s| s.score())
                    .fold(f64::NEG_INFINITY, f64::max);
                assert_eq!(marked[0].score(), max);
                for s in &because {
                    assert!(marked[0].score() >= s.score());
                }
            }
        }
    }

    proptest! {
        /// Exclusivity: exactly one of {er1 fired, er2 fired, nothing}.
        #[test]
        fn continuous_rule_is_exclusive(alpha in -3.0f64..3.0, x in -5.0f64..5.0, y in -5.0f64..5.0) {
            prop_assume!(alpha != 0.0);
            let er = eval_er_continuous(&scenario(alpha, x, 0.0, y, 0.0), Relation::Less).unwrap();
            let states = [(er.er1 != 0), (er.er2 != 0)];
            prop_assert!(!(states[0] && states[1]));
        }

        /// Negating alpha with fixed sides swaps the rule, keeping the encoding.
        #[test]
        fn sign_flip_antisymmetry(alpha in 0.01f64..3.0, x in -5.0f64..5.0, y in -5.0f64..5.0) {
            prop_assume!(x != 0.0 && y != 0.0);
            let a = eval_er_continuous(&scenario(alpha, x, 0.0, y, 0.0), Relation::Less).unwrap();
            let b = eval_er_continuous(&scenario(-alpha, x, 0.0, y, 0.0), Relation::Less).unwrap();
            prop_assert_eq!(a.er1, b.er2);
            prop_assert_eq!(a.er2, b.er1);
        }

        /// Scale invariance: positive rescaling of values and statistics
        /// leaves the triple unchanged.
        #[test]
        fn scale_invariance(alpha in -3.0f64..3.0, x in -5.0f64..5.0, y in -5.0f64..5.0,
                            px in -2.0f64..2.0, py in -2.0f64..2.0, k in 0.1f64..10.0) {
            prop_assume!(alpha != 0.0);
            let a = eval_er_continuous(&scenario(alpha, x, px, y, py), Relation::Less).unwrap();
            let b = eval_er_continuous(&scenario(alpha, k * x, k * px, k * y, k * py), Relation::Less).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
