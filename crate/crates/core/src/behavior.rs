//! Probability tables of the two-input, two-output scenario, the Hardy
//! functional, the CH expression and the local (classical) bound.

use std::collections::BTreeMap;

use nalgebra::{Matrix4, Vector4};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Outcome index of `+`.
pub const PLUS: usize = 0;
/// Outcome index of `-`.
pub const MINUS: usize = 1;

const TOL: f64 = 1e-9;

/// Joint distribution `p(a,b|x,y)`, stored as `p[a][b][x][y]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Behavior {
    p: [[[[f64; 2]; 2]; 2]; 2],
}

impl Behavior {
    /// Validating constructor.
    pub fn new(p: [[[[f64; 2]; 2]; 2]; 2]) -> Result<Self> {
        let b = Self { p };
        b.validate()?;
        Ok(b)
    }

    /// Skips validation; for solver intermediates.
    pub fn from_raw(p: [[[[f64; 2]; 2]; 2]; 2]) -> Self {
        Self { p }
    }

    pub fn uniform() -> Self {
        Self::from_raw([[[[0.25; 2]; 2]; 2]; 2])
    }

    pub fn from_fn(mut f: impl FnMut(usize, usize, usize, usize) -> f64) -> Self {
        let mut p = [[[[0.0; 2]; 2]; 2]; 2];
        for (a, pa) in p.iter_mut().enumerate() {
            for (b, pab) in pa.iter_mut().enumerate() {
                for (x, pabx) in pab.iter_mut().enumerate() {
                    for (y, v) in pabx.iter_mut().enumerate() {
                        *v = f(a, b, x, y);
                    }
                }
            }
        }
        Self { p }
    }

    pub fn validate(&self) -> Result<()> {
        for (a, b, x, y, v) in self.indexed() {
            if !(-TOL..=1.0 + TOL).contains(&v) || !v.is_finite() {
                return Err(Error::InvalidBehavior(format!(
                    "p({},{}|{x},{y}) = {v} is not a probability",
                    label(a),
                    label(b)
                )));
            }
        }
        for x in 0..2 {
            for y in 0..2 {
                let s: f64 = (0..2).flat_map(|a| (0..2).map(move |b| (a, b))).map(|(a, b)| self.p[a][b][x][y]).sum();
                if (s - 1.0).abs() > TOL {
                    return Err(Error::InvalidBehavior(format!("slice ({x},{y}) sums to {s}")));
                }
            }
        }
        Ok(())
    }

    pub fn get(&self, a: usize, b: usize, x: usize, y: usize) -> f64 {
        self.p[a][b][x][y]
    }

    pub fn table(&self) -> &[[[[f64; 2]; 2]; 2]; 2] {
        &self.p
    }

    /// All sixteen cells in `(a, b, x, y)` lexicographic order.
    pub fn cells(&self) -> impl Iterator<Item = f64> + '_ {
        self.indexed().map(|(_, _, _, _, v)| v)
    }

    pub fn indexed(&self) -> impl Iterator<Item = (usize, usize, usize, usize, f64)> + '_ {
        (0..16).map(move |i| {
            let (a, b, x, y) = (i >> 3 & 1, i >> 2 & 1, i >> 1 & 1, i & 1);
            (a, b, x, y, self.p[a][b][x][y])
        })
    }

    /// Alice's marginal `p(a|x)` computed with Bob's input `y`.
    pub fn alice_marginal(&self, a: usize, x: usize, y: usize) -> f64 {
        self.p[a][PLUS][x][y] + self.p[a][MINUS][x][y]
    }

    pub fn bob_marginal(&self, b: usize, y: usize, x: usize) -> f64 {
        self.p[PLUS][b][x][y] + self.p[MINUS][b][x][y]
    }

    /// Convex combination `sum_k w_k b_k`.
    pub fn mixture(parts: &[(f64, Behavior)]) -> Self {
        Self::from_fn(|a, b, x, y| parts.iter().map(|(w, q)| w * q.p[a][b][x][y]).sum())
    }
}

fn label(o: usize) -> char {
    if o == PLUS {
        '+'
    } else {
        '-'
    }
}

fn key(a: usize, b: usize, x: usize, y: usize) -> String {
    format!("{},{}|{x},{y}", label(a), label(b))
}

#[derive(Serialize, Deserialize)]
struct BehaviorJson {
    p: BTreeMap<String, f64>,
}

impl Serialize for Behavior {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let p = self.indexed().map(|(a, b, x, y, v)| (key(a, b, x, y), v)).collect();
        BehaviorJson { p }.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Behavior {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let raw = BehaviorJson::deserialize(deserializer)?;
        if raw.p.len() != 16 {
            return Err(D::Error::custom(format!("expected 16 cells, found {}", raw.p.len())));
        }
        let mut missing = None;
        let b = Behavior::from_fn(|a, b, x, y| {
            let k = key(a, b, x, y);
            match raw.p.get(&k) {
                Some(v) => *v,
                None => {
                    missing.get_or_insert(k);
                    f64::NAN
                }
            }
        });
        if let Some(k) = missing {
            return Err(D::Error::custom(format!("missing cell \"{k}\"")));
        }
        b.validate().map_err(D::Error::custom)?;
        Ok(b)
    }
}

/// The Hardy probability and the three constraint cells.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HardyReport {
    /// `p(+,+|A1,B1)`
    pub hardy: f64,
    /// `p(+,+|A0,B0)`
    pub c1: f64,
    /// `p(+,-|A1,B0)`
    pub c2: f64,
    /// `p(-,+|A0,B1)`
    pub c3: f64,
    pub eps_star: f64,
}

pub fn hardy_report(b: &Behavior) -> HardyReport {
    let [c1, c2, c3] = constraint_cells(b);
    HardyReport {
        hardy: b.get(PLUS, PLUS, 1, 1),
        c1,
        c2,
        c3,
        eps_star: c1.max(c2).max(c3),
    }
}

pub fn constraint_cells(b: &Behavior) -> [f64; 3] {
    [b.get(PLUS, PLUS, 0, 0), b.get(PLUS, MINUS, 1, 0), b.get(MINUS, PLUS, 0, 1)]
}

/// CH expression in Hardy form; nonpositive on local behaviors.
pub fn ch_value(b: &Behavior) -> f64 {
    let [c1, c2, c3] = constraint_cells(b);
    b.get(PLUS, PLUS, 1, 1) - c1 - c2 - c3
}

/// Local bound `min(3 eps, 1)` on the Hardy probability.
pub fn local_bound(eps: f64) -> Result<f64> {
    if eps.is_nan() || eps < 0.0 {
        return Err(Error::InvalidArgument(format!("eps must be nonnegative, got {eps}")));
    }
    Ok((3.0 * eps).min(1.0))
}

/// True when both marginals are independent of the remote input.
pub fn is_no_signaling(b: &Behavior) -> bool {
    (0..2).all(|o| {
        (0..2).all(|input| {
            (b.alice_marginal(o, input, 0) - b.alice_marginal(o, input, 1)).abs() <= TOL
                && (b.bob_marginal(o, input, 0) - b.bob_marginal(o, input, 1)).abs() <= TOL
        })
    })
}

/// One of the sixteen local deterministic strategies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct DeterministicStrategy {
    pub alice: [usize; 2],
    pub bob: [usize; 2],
}

impl DeterministicStrategy {
    pub fn all() -> impl Iterator<Item = Self> {
        (0..16usize).map(|i| Self {
            alice: [i >> 3 & 1, i >> 2 & 1],
            bob: [i >> 1 & 1, i & 1],
        })
    }

    pub fn behavior(&self) -> Behavior {
        Behavior::from_fn(|a, b, x, y| {
            if self.alice[x] == a && self.bob[y] == b {
                1.0
            } else {
                0.0
            }
        })
    }
}

/// Maximum Hardy probability over the local polytope when every constraint
/// cell is at most `eps`. Solved exactly by enumerating the basic solutions
/// of the 4-row standard-form LP (16 weights plus 3 slacks).
pub fn local_lp_oracle(eps: f64) -> Result<f64> {
    if eps.is_nan() || eps < 0.0 {
        return Err(Error::InvalidArgument(format!("eps must be nonnegative, got {eps}")));
    }
    let strategies: Vec<Behavior> = DeterministicStrategy::all().map(|s| s.behavior()).collect();
    // Column j: (1, c1, c2, c3) for a strategy, a unit slack column otherwise.
    let mut columns = Vec::with_capacity(19);
    let mut gains = Vec::with_capacity(19);
    for b in &strategies {
        let [c1, c2, c3] = constraint_cells(b);
        columns.push(Vector4::new(1.0, c1, c2, c3));
        gains.push(b.get(PLUS, PLUS, 1, 1));
    }
    for k in 1..4 {
        let mut e = Vector4::zeros();
        e[k] = 1.0;
        columns.push(e);
        gains.push(0.0);
    }
    let rhs = Vector4::new(1.0, eps, eps, eps);

    let n = columns.len();
    let mut best = f64::NEG_INFINITY;
    for i in 0..n {
        for j in i + 1..n {
            for k in j + 1..n {
                for l in k + 1..n {
                    let basis = [i, j, k, l];
                    let m = Matrix4::from_columns(&basis.map(|c| columns[c]));
                    let lu = m.lu();
                    if lu.determinant().abs() < 1e-12 {
                        continue;
                    }
                    let Some(x) = lu.solve(&rhs) else { continue };
                    if x.iter().any(|&v| v < -1e-12) {
                        continue;
                    }
                    let value: f64 = basis.iter().zip(x.iter()).map(|(&c, v)| gains[c] * v).sum();
                    best = best.max(value);
                }
            }
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quantum::{born_behavior, make_hardy_optimal};
    use proptest::prelude::*;

    #[test]
    fn report_examples() {
        let r = hardy_report(&born_behavior(&make_hardy_optimal(0.0).model));
        assert!((r.hardy - 0.0901699437).abs() < 1e-10);
        assert!(r.eps_star.abs() < 1e-12);

        let r = hardy_report(&Behavior::uniform());
        assert_eq!((r.hardy, r.eps_star), (0.25, 0.25));

        let s = DeterministicStrategy {
            alice: [PLUS, PLUS],
            bob: [MINUS, MINUS],
        };
        let r = hardy_report(&s.behavior());
        assert_eq!((r.hardy, r.c2), (0.0, 1.0));
    }

    #[test]
    fn ch_examples() {
        for s in DeterministicStrategy::all() {
            assert!(ch_value(&s.behavior()) <= 0.0, "{s:?}");
        }
        let ch = ch_value(&born_behavior(&make_hardy_optimal(0.0).model));
        assert!((ch - 0.0901699437).abs() < 1e-10);
        assert_eq!(ch_value(&Behavior::uniform()), -0.5);
    }

    #[test]
    fn local_bound_examples() {
        assert_eq!(local_bound(0.0).unwrap(), 0.0);
        assert!((local_bound(0.1).unwrap() - 0.3).abs() < 1e-15);
        assert_eq!(local_bound(0.5).unwrap(), 1.0);
        assert!(local_bound(-0.1).is_err());
    }

    #[test]
    fn lp_oracle_examples() {
        assert!(local_lp_oracle(0.0).unwrap().abs() < 1e-9);
        assert!((local_lp_oracle(1.0 / 3.0).unwrap() - 1.0).abs() < 1e-9);
        assert!((local_lp_oracle(0.1).unwrap() - 0.3).abs() < 1e-9);
        assert!((local_lp_oracle(0.6).unwrap() - 1.0).abs() < 1e-9);
        assert!(local_lp_oracle(-1e-3).is_err());
    }

    #[test]
    fn lp_oracle_never_exceeds_three_eps() {
        for i in 0..=34 {
            let eps = i as f64 / 100.0;
            assert!(local_lp_oracle(eps).unwrap() <= 3.0 * eps + 1e-9);
        }
    }

    #[test]
    fn no_signaling_examples() {
        assert!(is_no_signaling(&Behavior::uniform()));
        assert!(is_no_signaling(&born_behavior(&make_hardy_optimal(0.7).model)));
        // Alice's A0 marginal shifted by 0.1 between Bob's inputs.
        let mut t = *Behavior::uniform().table();
        t[PLUS][PLUS][0][0] = 0.35;
        t[MINUS][PLUS][0][0] = 0.15;
        let b = Behavior::new(t).unwrap();
        assert!(!is_no_signaling(&b));
    }

    #[test]
    fn validation_rejects_bad_tables() {
        let mut t = *Behavior::uniform().table();
        t[PLUS][PLUS][1][0] = 0.3;
        assert!(Behavior::new(t).is_err());
        t[PLUS][PLUS][1][0] = -0.25;
        t[MINUS][MINUS][1][0] = 0.75;
        assert!(Behavior::new(t).is_err());
    }

    /// Every mixture of deterministic strategies whose constraint cells all
    /// vanish has zero Hardy probability.
    #[test]
    fn local_mixtures_with_zero_constraints_have_zero_hardy() {
        let vertices: Vec<Behavior> = DeterministicStrategy::all().map(|s| s.behavior()).collect();
        // rational grid over all triples of vertices, weights k/6
        for i in 0..16 {
            for j in i..16 {
                for k in j..16 {
                    for wi in 0..=6 {
                        for wj in 0..=(6 - wi) {
                            let wk = 6 - wi - wj;
                            let b = Behavior::mixture(&[
                                (wi as f64 / 6.0, vertices[i]),
                                (wj as f64 / 6.0, vertices[j]),
                                (wk as f64 / 6.0, vertices[k]),
                            ]);
                            let r = hardy_report(&b);
                            if r.eps_star == 0.0 {
                                assert_eq!(r.hardy, 0.0);
                            }
                            assert!(ch_value(&b) <= 1e-15);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn json_layout() {
        let json = serde_json::to_value(Behavior::uniform()).unwrap();
        let p = json.get("p").unwrap().as_object().unwrap();
        assert_eq!(p.len(), 16);
        assert_eq!(p["+,-|1,0"], 0.25);
        let missing = r#"{"p": {"+,+|0,0": 1.0}}"#;
        assert!(serde_json::from_str::<Behavior>(missing).is_err());
    }

    proptest! {
        #[test]
        fn json_round_trip_is_bit_exact(raw in proptest::collection::vec(1e-6f64..1.0, 16)) {
            let b = Behavior::from_fn(|a, b, x, y| {
                let base = 4 * (2 * x + y);
                let s: f64 = raw[base..base + 4].iter().sum();
                raw[base + 2 * a + b] / s
            });
            let text = serde_json::to_string(&b).unwrap();
            let back: Behavior = serde_json::from_str(&text).unwrap();
            for (u, v) in b.cells().zip(back.cells()) {
                prop_assert_eq!(u.to_bits(), v.to_bits());
            }
        }

        #[test]
        fn ch_equals_hardy_when_constraints_vanish(w in proptest::collection::vec(0.0f64..1.0, 16)) {
            let total: f64 = w.iter().sum::<f64>() + 1e-12;
            let parts: Vec<(f64, Behavior)> = DeterministicStrategy::all()
                .zip(w.iter())
                .map(|(s, &wi)| (wi / total, s.behavior()))
                .collect();
            let b = Behavior::mixture(&parts);
            let r = hardy_report(&b);
            if r.eps_star == 0.0 {
                prop_assert_eq!(ch_value(&b), r.hardy);
            }
            prop_assert!(ch_value(&b) <= 1e-12);
        }
    }
}
