//! NPA moment-matrix relaxation of Hardy-probability maximization.
//!
//! Operators are the `+` projectors `E1 = Pi_{+|A0}`, `E2 = Pi_{+|A1}`,
//! `F1 = Pi_{+|B0}`, `F2 = Pi_{+|B1}`. Words are reduced with `P^2 = P` and
//! `[E, F] = 0`; the moment matrix is taken real symmetric, so a word and
//! its adjoint share one moment variable.

use std::collections::HashMap;
use std::fmt;

use num_complex::Complex64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::quantum::{identity, CMatrix, QuantumModel};
use crate::sdp::{self, ConicProgram, LinearConstraint, PsdBlock, Residuals, Solution, SolverOptions, Status};

pub const MAX_LEVEL: usize = 3;

/// Operator letter. `E*` act on Alice, `F*` on Bob.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Letter {
    E1,
    E2,
    F1,
    F2,
}

impl Letter {
    fn is_alice(self) -> bool {
        matches!(self, Letter::E1 | Letter::E2)
    }

    /// Measurement index (0 or 1) within the party.
    fn input(self) -> u8 {
        match self {
            Letter::E1 | Letter::F1 => 0,
            Letter::E2 | Letter::F2 => 1,
        }
    }
}

/// Reduced monomial: alternating Alice letters times alternating Bob
/// letters, each stored as measurement indices.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Word {
    pub alice: Vec<u8>,
    pub bob: Vec<u8>,
}

impl Word {
    pub fn identity() -> Self {
        Self {
            alice: Vec::new(),
            bob: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.alice.len() + self.bob.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn adjoint(&self) -> Self {
        Self {
            alice: self.alice.iter().rev().copied().collect(),
            bob: self.bob.iter().rev().copied().collect(),
        }
    }

    /// Representative shared by a word and its adjoint.
    pub fn symmetric_key(&self) -> Self {
        let adj = self.adjoint();
        if adj < *self {
            adj
        } else {
            self.clone()
        }
    }

    /// Length, then longer Alice part first, then Alice and Bob letters.
    fn sort_key(&self) -> (usize, std::cmp::Reverse<usize>, &[u8], &[u8]) {
        (self.len(), std::cmp::Reverse(self.alice.len()), &self.alice, &self.bob)
    }
}

impl PartialOrd for Word {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Word {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.sort_key().cmp(&other.sort_key())
    }
}

impl fmt::Display for Word {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_empty() {
            return write!(f, "1");
        }
        for &i in &self.alice {
            write!(f, "E{}", i + 1)?;
        }
        for &i in &self.bob {
            write!(f, "F{}", i + 1)?;
        }
        Ok(())
    }
}

fn collapse(seq: impl IntoIterator<Item = u8>) -> Vec<u8> {
    let mut out: Vec<u8> = Vec::new();
    for l in seq {
        if out.last() != Some(&l) {
            out.push(l);
        }
    }
    out
}

/// Canonical form of a product of letters. Never zero: only `+`
/// projectors appear, so no orthogonality relation applies.
pub fn reduce(letters: &[Letter]) -> Word {
    Word {
        alice: collapse(letters.iter().filter(|l| l.is_alice()).map(|l| l.input())),
        bob: collapse(letters.iter().filter(|l| !l.is_alice()).map(|l| l.input())),
    }
}

/// `u^dagger v`, reduced.
pub fn product(u: &Word, v: &Word) -> Word {
    Word {
        alice: collapse(u.alice.iter().rev().chain(&v.alice).copied()),
        bob: collapse(u.bob.iter().rev().chain(&v.bob).copied()),
    }
}

fn alternating(len: usize) -> Vec<Vec<u8>> {
    if len == 0 {
        return vec![Vec::new()];
    }
    (0..2u8).map(|start| (0..len).map(|i| (start + i as u8) % 2).collect()).collect()
}

fn check_level(level: usize) -> Result<()> {
    if (1..=MAX_LEVEL).contains(&level) {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("hierarchy level must be in 1..={MAX_LEVEL}, got {level}")))
    }
}

/// All reduced words of length at most `level`, in canonical order.
pub fn generate_words(level: usize) -> Result<Vec<Word>> {
    check_level(level)?;
    let mut words = Vec::new();
    for la in 0..=level {
        for lb in 0..=level - la {
            for alice in alternating(la) {
                for bob in alternating(lb) {
                    words.push(Word {
                        alice: alice.clone(),
                        bob,
                    });
                }
            }
        }
    }
    words.sort();
    Ok(words)
}

/// Affine expression over moment ids, `sum coef * y[id]`.
pub type MomentExpr = Vec<(usize, f64)>;

/// The moment SDP at a given hierarchy level and constraint bound.
#[derive(Debug, Clone)]
pub struct MomentProblem {
    pub eps: f64,
    pub level: usize,
    pub words: Vec<Word>,
    /// Canonical word of each moment id; id 0 is the identity.
    pub moments: Vec<Word>,
    pub index: HashMap<Word, usize>,
    /// `ids[u][v]` is the moment id at position `(u, v)`.
    pub ids: Vec<Vec<usize>>,
    pub objective: usize,
    /// `p(+,+|A0,B0)`, `p(+,-|A1,B0)`, `p(-,+|A0,B1)` as moment expressions.
    pub constraints: [MomentExpr; 3],
    pub program: ConicProgram,
}

impl MomentProblem {
    pub fn id_of(&self, w: &Word) -> Option<usize> {
        self.index.get(&w.symmetric_key()).copied()
    }

    pub fn dim(&self) -> usize {
        self.words.len()
    }

    pub fn debug_dump(&self) -> String {
        let mut out = String::new();
        for (id, w) in self.moments.iter().enumerate() {
            out.push_str(&format!("moment {id} {w}\n"));
        }
        out.push_str(&self.program.to_text());
        out
    }

    /// Dense moment matrix for a moment vector.
    pub fn moment_matrix(&self, y: &[f64]) -> nalgebra::DMatrix<f64> {
        let n = self.dim();
        nalgebra::DMatrix::from_fn(n, n, |i, j| y[self.ids[i][j]])
    }

    pub fn constraint_values(&self, y: &[f64]) -> [f64; 3] {
        self.constraints.clone().map(|e| e.iter().map(|&(k, a)| a * y[k]).sum())
    }
}

pub fn build_problem(eps: f64, level: usize) -> Result<MomentProblem> {
    check_level(level)?;
    if eps.is_nan() || eps < 0.0 {
        return Err(Error::InvalidArgument(format!("eps must be nonnegative, got {eps}")));
    }
    let words = generate_words(level)?;
    let n = words.len();

    let mut keys: Vec<Word> = Vec::new();
    let mut raw = vec![vec![Word::identity(); n]; n];
    for (i, u) in words.iter().enumerate() {
        for (j, v) in words.iter().enumerate() {
            let key = product(u, v).symmetric_key();
            keys.push(key.clone());
            raw[i][j] = key;
        }
    }
    // The single-letter and two-letter moments used below must exist.
    for w in ["E1F1", "E2F1", "E1F2", "E2F2"] {
        let letters: Vec<Letter> = w
            .as_bytes()
            .chunks(2)
            .map(|c| match c {
                b"E1" => Letter::E1,
                b"E2" => Letter::E2,
                b"F1" => Letter::F1,
                _ => Letter::F2,
            })
            .collect();
        keys.push(reduce(&letters).symmetric_key());
    }
    keys.sort();
    keys.dedup();
    let index: HashMap<Word, usize> = keys.iter().cloned().enumerate().map(|(i, w)| (w, i)).collect();
    let ids: Vec<Vec<usize>> = raw.iter().map(|row| row.iter().map(|w| index[w]).collect()).collect();

    let id = |letters: &[Letter]| index[&reduce(letters).symmetric_key()];
    use Letter::*;
    let objective = id(&[E2, F2]);
    let constraints: [MomentExpr; 3] = [
        vec![(id(&[E1, F1]), 1.0)],
        vec![(id(&[E2]), 1.0), (id(&[E2, F1]), -1.0)],
        vec![(id(&[F2]), 1.0), (id(&[E1, F2]), -1.0)],
    ];

    let mut program = ConicProgram {
        num_vars: keys.len(),
        objective: vec![(objective, 1.0)],
        psd_blocks: Vec::new(),
        equalities: vec![LinearConstraint::new(vec![(0, 1.0)], 1.0)],
        inequalities: Vec::new(),
    };
    for c in &constraints {
        if eps == 0.0 {
            program.equalities.push(LinearConstraint::new(c.clone(), 0.0));
        } else {
            program.inequalities.push(LinearConstraint::new(c.clone(), eps));
        }
    }

    let kernel = if eps == 0.0 { kernel_generators(&words) } else { Vec::new() };
    if kernel.is_empty() {
        let mut block = PsdBlock::new(n);
        for (i, row) in ids.iter().enumerate() {
            for (j, &m) in row.iter().enumerate().skip(i) {
                block.linear.push((m, i, j, 1.0));
            }
        }
        program.psd_blocks.push(block);
    } else {
        let mut seen = std::collections::HashSet::new();
        for v in &kernel {
            for row in &ids {
                let mut terms: Vec<(usize, f64)> = Vec::new();
                for &(j, a) in v {
                    match terms.iter_mut().find(|t| t.0 == row[j]) {
                        Some(t) => t.1 += a,
                        None => terms.push((row[j], a)),
                    }
                }
                terms.retain(|t| t.1 != 0.0);
                terms.sort_by_key(|t| t.0);
                let key: Vec<(usize, i64)> = terms.iter().map(|&(k, a)| (k, a as i64)).collect();
                if !terms.is_empty() && seen.insert(key) {
                    program.equalities.push(LinearConstraint::new(terms, 0.0));
                }
            }
        }
        program.psd_blocks.push(restricted_block(&ids, keys.len(), &kernel));
    }

    Ok(MomentProblem {
        eps,
        level,
        words,
        moments: keys,
        index,
        ids,
        objective,
        constraints,
        program,
    })
}

/// With all three constraints at zero, `E1 F1`, `E2 (1 - F1)` and
/// `(1 - E1) F2` annihilate the state, and so does every word times them.
/// Returns those vectors (as sparse coefficients over `words`) that fit in
/// the word list.
fn kernel_generators(words: &[Word]) -> Vec<Vec<(usize, f64)>> {
    let pos: HashMap<&Word, usize> = words.iter().enumerate().map(|(i, w)| (w, i)).collect();
    let term = |a: &[u8], b: &[u8], c: f64| (Word { alice: a.to_vec(), bob: b.to_vec() }, c);
    let polys = [
        vec![term(&[0], &[0], 1.0)],
        vec![term(&[1], &[], 1.0), term(&[1], &[0], -1.0)],
        vec![term(&[], &[1], 1.0), term(&[0], &[1], -1.0)],
    ];
    let mut out = Vec::new();
    for w in words {
        for poly in &polys {
            let mut vec: Vec<(usize, f64)> = Vec::new();
            let mut fits = true;
            for (t, c) in poly {
                let prod = Word {
                    alice: collapse(w.alice.iter().chain(&t.alice).copied()),
                    bob: collapse(w.bob.iter().chain(&t.bob).copied()),
                };
                match pos.get(&prod) {
                    Some(&j) => match vec.iter_mut().find(|e| e.0 == j) {
                        Some(e) => e.1 += c,
                        None => vec.push((j, *c)),
                    },
                    None => fits = false,
                }
            }
            vec.retain(|e| e.1 != 0.0);
            if fits && !vec.is_empty() {
                out.push(vec);
            }
        }
    }
    out
}

/// Moment matrix compressed onto the orthogonal complement of `kernel`.
fn restricted_block(ids: &[Vec<usize>], num_vars: usize, kernel: &[Vec<(usize, f64)>]) -> PsdBlock {
    let n = ids.len();
    let k = nalgebra::DMatrix::from_fn(n, kernel.len(), |i, j| {
        kernel[j].iter().find(|e| e.0 == i).map_or(0.0, |e| e.1)
    });
    // Left singular vectors with zero singular value span the complement.
    let kkt = &k * k.transpose();
    let eig = kkt.symmetric_eigen();
    let scale = eig.eigenvalues.iter().copied().fold(0.0, f64::max).max(1.0);
    let cols: Vec<usize> = (0..n).filter(|&i| eig.eigenvalues[i] <= 1e-10 * scale).collect();
    let q = nalgebra::DMatrix::from_fn(n, cols.len(), |i, j| eig.eigenvectors[(i, cols[j])]);
    let m = cols.len();

    let mut per_var: Vec<Vec<(usize, usize)>> = vec![Vec::new(); num_vars];
    for (i, row) in ids.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            per_var[v].push((i, j));
        }
    }
    let mut block = PsdBlock::new(m);
    for (var, cells) in per_var.iter().enumerate() {
        if cells.is_empty() {
            continue;
        }
        for a in 0..m {
            for b in a..m {
                let v: f64 = cells.iter().map(|&(i, j)| q[(i, a)] * q[(j, b)]).sum();
                if v.abs() > 1e-13 {
                    block.linear.push((var, a, b, v));
                }
            }
        }
    }
    block
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoundStatus {
    Optimal,
    NearOptimal,
    Failed,
}

#[derive(Debug, Clone, Serialize)]
pub struct NpaBound {
    pub eps: f64,
    pub level: usize,
    /// Upper bound from the dual certificate, clipped to `[0, 1]`. `None`
    /// when the solver failed.
    pub value: Option<f64>,
    /// Objective of the optimal moment vector.
    pub primal_value: f64,
    pub solver_status: BoundStatus,
    pub residuals: Residuals,
    pub iterations: usize,
}

pub fn upper_bound(eps: f64, level: usize) -> Result<NpaBound> {
    upper_bound_with(eps, level, &SolverOptions::default())
}

pub fn upper_bound_with(eps: f64, level: usize, opts: &SolverOptions) -> Result<NpaBound> {
    let problem = build_problem(eps, level)?;
    let sol = sdp::solve_with(&problem.program, opts)?;
    Ok(bound_from_solution(eps, level, &sol))
}

fn bound_from_solution(eps: f64, level: usize, sol: &Solution) -> NpaBound {
    let solver_status = match sol.status {
        Status::Optimal => BoundStatus::Optimal,
        Status::NearOptimal => BoundStatus::NearOptimal,
        _ => BoundStatus::Failed,
    };
    let value = match solver_status {
        BoundStatus::Failed => None,
        _ => Some(sol.dual_bound.max(sol.objective_value).clamp(0.0, 1.0)),
    };
    NpaBound {
        eps,
        level,
        value,
        primal_value: sol.objective_value,
        solver_status,
        residuals: sol.residuals,
        iterations: sol.iterations,
    }
}

/// Moment vector `Re <W>` of every moment of `problem` in a quantum model.
pub fn moments_from_model(problem: &MomentProblem, model: &QuantumModel) -> Vec<f64> {
    let (da, db) = model.state.dims();
    let rho = model.state.density();
    let product_of = |letters: &[u8], meas: &[crate::quantum::BinaryMeasurement; 2], d: usize| -> CMatrix {
        letters.iter().fold(identity(d), |acc, &i| acc * meas[i as usize].effect_plus())
    };
    problem
        .moments
        .iter()
        .map(|w| {
            let op = crate::quantum::kron(&product_of(&w.alice, &model.alice, da), &product_of(&w.bob, &model.bob, db));
            let v: Complex64 = (rho * op).trace();
            v.re
        })
        .collect()
}
