//! Small dense semidefinite programs in linear-matrix-inequality form:
//!
//! ```text
//! maximize    c . y
//! subject to  F0 + sum_k y_k F_k  >= 0      (each PSD block)
//!             E y  = beta
//!             a_i . y <= h_i
//! ```
//!
//! Equalities are eliminated by substitution, inequalities become 1x1
//! blocks, and the result is solved with an infeasible primal-dual
//! interior-point method (HKM direction, Mehrotra predictor-corrector).
//! Every [`Solution`] carries residuals recomputed from the original program
//! by [`check_certificate`].

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};

pub type Mat = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Sparse linear constraint `sum terms <op> rhs`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearConstraint {
    pub terms: Vec<(usize, f64)>,
    pub rhs: f64,
}

impl LinearConstraint {
    pub fn new(terms: Vec<(usize, f64)>, rhs: f64) -> Self {
        Self { terms, rhs }
    }

    pub fn eval(&self, y: &[f64]) -> f64 {
        self.terms.iter().map(|&(k, a)| a * y[k]).sum()
    }
}

/// Affine symmetric matrix `F0 + sum_k y_k F_k`, stored by its upper triangle.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PsdBlock {
    pub dim: usize,
    /// `(row, col, value)` of `F0` with `row <= col`.
    pub constant: Vec<(usize, usize, f64)>,
    /// `(variable, row, col, value)` of the `F_k` with `row <= col`.
    pub linear: Vec<(usize, usize, usize, f64)>,
}

impl PsdBlock {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            ..Self::default()
        }
    }

    /// Dense value of the block at `y`.
    pub fn eval(&self, y: &[f64]) -> Mat {
        let mut m = Mat::zeros(self.dim, self.dim);
        for &(r, c, v) in &self.constant {
            add_sym(&mut m, r, c, v);
        }
        for &(k, r, c, v) in &self.linear {
            add_sym(&mut m, r, c, v * y[k]);
        }
        m
    }
}

fn add_sym(m: &mut Mat, r: usize, c: usize, v: f64) {
    m[(r, c)] += v;
    if r != c {
        m[(c, r)] += v;
    }
}

/// Trace inner product with the weight of an upper-triangle entry.
fn entry_weight(r: usize, c: usize) -> f64 {
    if r == c {
        1.0
    } else {
        2.0
    }
}

/// A maximization over `num_vars` real variables.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ConicProgram {
    pub num_vars: usize,
    pub objective: Vec<(usize, f64)>,
    pub psd_blocks: Vec<PsdBlock>,
    pub equalities: Vec<LinearConstraint>,
    pub inequalities: Vec<LinearConstraint>,
}

impl ConicProgram {
    pub fn validate(&self) -> Result<()> {
        let var_ok = |k: usize| k < self.num_vars;
        if let Some(&(k, _)) = self.objective.iter().find(|t| !var_ok(t.0)) {
            return Err(Error::MalformedProgram(format!("objective references variable {k}")));
        }
        for (b, block) in self.psd_blocks.iter().enumerate() {
            let pos_ok = |r: usize, c: usize| r <= c && c < block.dim;
            for &(r, c, _) in &block.constant {
                if !pos_ok(r, c) {
                    return Err(Error::MalformedProgram(format!(
                        "block {b}: constant entry ({r},{c}) is not in the upper triangle of a {0}x{0} matrix",
                        block.dim
                    )));
                }
            }
            for &(k, r, c, _) in &block.linear {
                if !var_ok(k) {
                    return Err(Error::MalformedProgram(format!("block {b} references variable {k}")));
                }
                if !pos_ok(r, c) {
                    return Err(Error::MalformedProgram(format!(
                        "block {b}: entry ({r},{c}) is not in the upper triangle of a {0}x{0} matrix",
                        block.dim
                    )));
                }
            }
        }
        for (kind, list) in [("equality", &self.equalities), ("inequality", &self.inequalities)] {
            for (i, con) in list.iter().enumerate() {
                if let Some(&(k, _)) = con.terms.iter().find(|t| !var_ok(t.0)) {
                    return Err(Error::MalformedProgram(format!("{kind} {i} references variable {k}")));
                }
            }
        }
        Ok(())
    }

    pub fn objective_at(&self, y: &[f64]) -> f64 {
        self.objective.iter().map(|&(k, c)| c * y[k]).sum()
    }

    /// Every PSD block followed by one 1x1 slack block per inequality.
    fn cone_blocks(&self) -> Vec<PsdBlock> {
        let mut blocks = self.psd_blocks.clone();
        for ineq in &self.inequalities {
            let mut b = PsdBlock::new(1);
            b.constant.push((0, 0, ineq.rhs));
            b.linear.extend(ineq.terms.iter().map(|&(k, a)| (k, 0, 0, -a)));
            blocks.push(b);
        }
        blocks
    }

    /// Plain-text dump: one line per constraint, listing `variable coefficient`
    /// pairs. Not a stable format.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let terms = |t: &[(usize, f64)]| t.iter().map(|(k, a)| format!("{k} {a}")).collect::<Vec<_>>().join(" ");
        let _ = writeln!(out, "vars {}", self.num_vars);
        let _ = writeln!(out, "max {}", terms(&self.objective));
        for (b, block) in self.psd_blocks.iter().enumerate() {
            let _ = writeln!(out, "psd {b} dim {}", block.dim);
            for &(r, c, v) in &block.constant {
                let _ = writeln!(out, "  ({r},{c}) const {v}");
            }
            let mut entries = block.linear.clone();
            entries.sort_by_key(|&(k, r, c, _)| (r, c, k));
            for &(k, r, c, v) in &entries {
                let _ = writeln!(out, "  ({r},{c}) {k} {v}");
            }
        }
        for e in &self.equalities {
            let _ = writeln!(out, "eq {} = {}", terms(&e.terms), e.rhs);
        }
        for e in &self.inequalities {
            let _ = writeln!(out, "le {} <= {}", terms(&e.terms), e.rhs);
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Status {
    Optimal,
    NearOptimal,
    Infeasible,
    Unbounded,
    Failed,
}

/// Certificate quality of a candidate solution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Residuals {
    /// `max |E y - beta|`.
    pub equality: f64,
    /// Smallest eigenvalue over all blocks of `F(y)`, inequality slacks included.
    pub min_eigenvalue: f64,
    /// `dual_bound - objective`.
    pub gap: f64,
    /// `max |c + F*(X) - E^T w|`; zero means `dual_bound` is a valid upper bound.
    pub dual_infeasibility: f64,
    /// Smallest eigenvalue of the dual matrix `X`.
    pub dual_min_eigenvalue: f64,
}

impl Residuals {
    pub fn certifies_optimal(&self) -> bool {
        self.equality <= 1e-8
            && self.min_eigenvalue >= -1e-8
            && self.gap.abs() <= 1e-7
            && self.dual_infeasibility <= 1e-8
            && self.dual_min_eigenvalue >= -1e-8
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub values: Vec<f64>,
    pub objective_value: f64,
    /// Objective of the dual certificate; an upper bound on `objective_value`
    /// up to `residuals.dual_infeasibility`.
    pub dual_bound: f64,
    pub status: Status,
    pub residuals: Residuals,
    pub iterations: usize,
    /// Dual matrices, one per cone block (PSD blocks then inequality slacks).
    pub dual: Vec<Mat>,
    /// Multipliers of the equality constraints.
    pub equality_duals: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    pub gap_tol: f64,
    pub max_iter: usize,
    /// Rescale each variable so its constraint matrices have unit norm.
    pub diagonal_scaling: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            gap_tol: 1e-9,
            max_iter: 200,
            diagonal_scaling: false,
        }
    }
}

/// Recompute every residual of `s` against `p`.
pub fn check_certificate(p: &ConicProgram, s: &Solution) -> Residuals {
    let y = &s.values;
    let equality = p
        .equalities
        .iter()
        .map(|e| (e.eval(y) - e.rhs).abs())
        .fold(0.0, f64::max);
    let blocks = p.cone_blocks();
    let min_eigenvalue = blocks
        .iter()
        .map(|b| min_sym_eigenvalue(&b.eval(y)))
        .fold(f64::INFINITY, f64::min);

    let (dual_bound, dual_infeasibility, dual_min_eigenvalue) = if s.dual.len() == blocks.len() {
        let (bound, grad) = dual_value_and_gradient(p, &blocks, &s.dual, &s.equality_duals);
        let infeas = grad.iter().map(|g| g.abs()).fold(0.0, f64::max);
        let xmin = s.dual.iter().map(min_sym_eigenvalue).fold(f64::INFINITY, f64::min);
        (bound, infeas, xmin)
    } else {
        (f64::NAN, f64::INFINITY, f64::NEG_INFINITY)
    };
    Residuals {
        equality,
        min_eigenvalue,
        gap: dual_bound - p.objective_at(y),
        dual_infeasibility,
        dual_min_eigenvalue,
    }
}

/// `(<F0, X> + beta . w,  c + F*(X) - E^T w)`.
fn dual_value_and_gradient(p: &ConicProgram, blocks: &[PsdBlock], x: &[Mat], w: &[f64]) -> (f64, Vec<f64>) {
    let mut grad = vec![0.0; p.num_vars];
    for &(k, c) in &p.objective {
        grad[k] += c;
    }
    let mut bound = 0.0;
    for (b, xb) in blocks.iter().zip(x) {
        for &(r, c, v) in &b.constant {
            bound += entry_weight(r, c) * v * xb[(r, c)];
        }
        for &(k, r, c, v) in &b.linear {
            grad[k] += entry_weight(r, c) * v * xb[(r, c)];
        }
    }
    for (e, &wi) in p.equalities.iter().zip(w) {
        bound += e.rhs * wi;
        for &(k, a) in &e.terms {
            grad[k] -= a * wi;
        }
    }
    (bound, grad)
}

fn min_sym_eigenvalue(m: &Mat) -> f64 {
    if m.nrows() == 0 {
        return f64::INFINITY;
    }
    if m.nrows() == 1 {
        return m[(0, 0)];
    }
    let s = (m + m.transpose()) * 0.5;
    s.symmetric_eigen().eigenvalues.iter().copied().fold(f64::INFINITY, f64::min)
}

/// Solve with default options.
pub fn solve(p: &ConicProgram) -> Result<Solution> {
    solve_with(p, &SolverOptions::default())
}

pub fn solve_with(p: &ConicProgram, opts: &SolverOptions) -> Result<Solution> {
    p.validate()?;
    let Some(elim) = Elimination::new(p) else {
        return Ok(trivial_solution(p, Status::Infeasible));
    };
    let reduced = Reduced::new(p, &elim, opts.diagonal_scaling);
    let outcome = reduced.run(opts);

    let y = elim.expand(&reduced.unscale(&outcome.z));
    let x = outcome.x;
    let w = equality_multipliers(p, &p.cone_blocks(), &x, &elim);
    let mut sol = Solution {
        objective_value: p.objective_at(&y),
        values: y,
        dual_bound: f64::NAN,
        status: Status::Failed,
        residuals: Residuals {
            equality: 0.0,
            min_eigenvalue: 0.0,
            gap: 0.0,
            dual_infeasibility: 0.0,
            dual_min_eigenvalue: 0.0,
        },
        iterations: outcome.iterations,
        dual: x,
        equality_duals: w,
    };
    sol.residuals = check_certificate(p, &sol);
    sol.dual_bound = sol.objective_value + sol.residuals.gap;
    sol.status = match outcome.verdict {
        Verdict::Infeasible => Status::Infeasible,
        Verdict::Unbounded => Status::Unbounded,
        // The residuals are recomputed from scratch, so a run that ends on a
        // numerical breakdown still counts when its last iterate certifies.
        _ if sol.residuals.certifies_optimal() => Status::Optimal,
        _ if near_optimal(&sol.residuals) => Status::NearOptimal,
        _ => Status::Failed,
    };
    Ok(sol)
}

fn near_optimal(r: &Residuals) -> bool {
    r.equality <= 1e-6
        && r.min_eigenvalue >= -1e-6
        && r.gap.abs() <= 1e-4
        && r.dual_infeasibility <= 1e-6
        && r.dual_min_eigenvalue >= -1e-6
}

fn trivial_solution(p: &ConicProgram, status: Status) -> Solution {
    let values = vec![0.0; p.num_vars];
    let mut sol = Solution {
        objective_value: p.objective_at(&values),
        values,
        dual_bound: f64::NAN,
        status,
        residuals: Residuals {
            equality: f64::INFINITY,
            min_eigenvalue: f64::NEG_INFINITY,
            gap: f64::NAN,
            dual_infeasibility: f64::INFINITY,
            dual_min_eigenvalue: f64::NEG_INFINITY,
        },
        iterations: 0,
        dual: Vec::new(),
        equality_duals: Vec::new(),
    };
    sol.residuals = check_certificate(p, &sol);
    sol
}

/// Least-squares `w` with `E^T w = c + F*(X)`.
fn equality_multipliers(p: &ConicProgram, blocks: &[PsdBlock], x: &[Mat], elim: &Elimination) -> Vec<f64> {
    if p.equalities.is_empty() || x.len() != blocks.len() {
        return vec![0.0; p.equalities.len()];
    }
    let (_, g) = dual_value_and_gradient(p, blocks, x, &vec![0.0; p.equalities.len()]);
    let et = Mat::from_fn(p.num_vars, p.equalities.len(), |k, i| elim.dense[(i, k)]);
    let svd = et.svd(true, true);
    match svd.solve(&Vector::from_vec(g), 1e-12) {
        Ok(w) => w.iter().copied().collect(),
        Err(_) => vec![0.0; p.equalities.len()],
    }
}

/// `y = offset + basis z`, from Gauss-Jordan elimination of `E y = beta`.
struct Elimination {
    dense: Mat,
    offset: Vector,
    basis: Mat,
}

impl Elimination {
    /// `None` when the equalities are inconsistent.
    fn new(p: &ConicProgram) -> Option<Self> {
        let n = p.num_vars;
        let m = p.equalities.len();
        let mut dense = Mat::zeros(m, n);
        let mut rhs = Vector::zeros(m);
        for (i, e) in p.equalities.iter().enumerate() {
            for &(k, a) in &e.terms {
                dense[(i, k)] += a;
            }
            rhs[i] = e.rhs;
        }
        let mut a = dense.clone();
        let mut pivots: Vec<(usize, usize)> = Vec::new();
        let mut row = 0;
        for col in 0..n {
            if row == m {
                break;
            }
            let (best, val) = (row..m)
                .map(|r| (r, a[(r, col)].abs()))
                .max_by(|x, y| x.1.total_cmp(&y.1))
                .expect("nonempty range");
            if val <= 1e-12 {
                continue;
            }
            a.swap_rows(row, best);
            rhs.swap_rows(row, best);
            let piv = a[(row, col)];
            for c in 0..n {
                a[(row, c)] /= piv;
            }
            rhs[row] /= piv;
            for r in 0..m {
                if r != row {
                    let f = a[(r, col)];
                    if f != 0.0 {
                        for c in 0..n {
                            a[(r, c)] -= f * a[(row, c)];
                        }
                        rhs[r] -= f * rhs[row];
                    }
                }
            }
            pivots.push((row, col));
            row += 1;
        }
        if (row..m).any(|r| rhs[r].abs() > 1e-9) {
            return None;
        }
        let is_pivot: Vec<bool> = (0..n).map(|c| pivots.iter().any(|&(_, pc)| pc == c)).collect();
        let free: Vec<usize> = (0..n).filter(|&c| !is_pivot[c]).collect();
        let mut offset = Vector::zeros(n);
        let mut basis = Mat::zeros(n, free.len());
        for (j, &f) in free.iter().enumerate() {
            basis[(f, j)] = 1.0;
        }
        for &(r, c) in &pivots {
            offset[c] = rhs[r];
            for (j, &f) in free.iter().enumerate() {
                basis[(c, j)] = -a[(r, f)];
            }
        }
        Some(Self { dense, offset, basis })
    }

    fn expand(&self, z: &Vector) -> Vec<f64> {
        (&self.offset + &self.basis * z).iter().copied().collect()
    }
}

/// Dense reduced problem: maximize `b . z + const` s.t. `G0 + sum z_j G_j >= 0`.
struct Reduced {
    b: Vector,
    g0: Vec<Mat>,
    /// `g[block][j]`; `None` when the matrix is zero in that block.
    g: Vec<Vec<Option<Mat>>>,
    scale: Vector,
}

enum Verdict {
    Converged,
    Stalled,
    MaxIter,
    Infeasible,
    Unbounded,
    NumericalFailure,
}

struct Outcome {
    z: Vector,
    x: Vec<Mat>,
    iterations: usize,
    verdict: Verdict,
}

impl Reduced {
    fn new(p: &ConicProgram, elim: &Elimination, diagonal_scaling: bool) -> Self {
        let nz = elim.basis.ncols();
        let blocks = p.cone_blocks();
        let y0: Vec<f64> = elim.offset.iter().copied().collect();
        let mut g0 = Vec::with_capacity(blocks.len());
        let mut g = Vec::with_capacity(blocks.len());
        for blk in &blocks {
            g0.push(blk.eval(&y0));
            // F_k for each original variable, then combine through the basis.
            let mut per_var: Vec<Vec<(usize, usize, f64)>> = vec![Vec::new(); p.num_vars];
            for &(k, r, c, v) in &blk.linear {
                per_var[k].push((r, c, v));
            }
            let mut gb: Vec<Option<Mat>> = vec![None; nz];
            for (k, entries) in per_var.iter().enumerate() {
                if entries.is_empty() {
                    continue;
                }
                for j in 0..nz {
                    let coef = elim.basis[(k, j)];
                    if coef == 0.0 {
                        continue;
                    }
                    let m = gb[j].get_or_insert_with(|| Mat::zeros(blk.dim, blk.dim));
                    for &(r, c, v) in entries {
                        add_sym(m, r, c, coef * v);
                    }
                }
            }
            g.push(gb);
        }
        let mut cvec = Vector::zeros(p.num_vars);
        for &(k, c) in &p.objective {
            cvec[k] += c;
        }
        let b = elim.basis.transpose() * cvec;

        let mut scale = Vector::from_element(nz, 1.0);
        if diagonal_scaling {
            for j in 0..nz {
                let norm: f64 = g.iter().filter_map(|gb| gb[j].as_ref()).map(|m| m.norm_squared()).sum::<f64>().sqrt();
                if norm > 0.0 {
                    scale[j] = 1.0 / norm;
                }
            }
        }
        let mut reduced = Self { b, g0, g, scale };
        reduced.apply_scaling();
        reduced
    }

    fn apply_scaling(&mut self) {
        for j in 0..self.b.len() {
            let s = self.scale[j];
            if s != 1.0 {
                self.b[j] *= s;
                for gb in &mut self.g {
                    if let Some(m) = gb[j].as_mut() {
                        *m *= s;
                    }
                }
            }
        }
    }

    fn unscale(&self, z: &Vector) -> Vector {
        z.component_mul(&self.scale)
    }

    fn nvars(&self) -> usize {
        self.b.len()
    }

    /// `sum_j z_j G_j` in every block.
    fn apply(&self, z: &Vector) -> Vec<Mat> {
        self.g0
            .iter()
            .zip(&self.g)
            .map(|(g0, gb)| {
                let mut m = Mat::zeros(g0.nrows(), g0.ncols());
                for (j, gj) in gb.iter().enumerate() {
                    if let Some(gj) = gj {
                        if z[j] != 0.0 {
                            m += gj * z[j];
                        }
                    }
                }
                m
            })
            .collect()
    }

    /// `<G_j, X>` for every `j`.
    fn adjoint(&self, x: &[Mat]) -> Vector {
        let mut out = Vector::zeros(self.nvars());
        for (gb, xb) in self.g.iter().zip(x) {
            for (j, gj) in gb.iter().enumerate() {
                if let Some(gj) = gj {
                    out[j] += gj.dot(xb);
                }
            }
        }
        out
    }

    fn run(&self, opts: &SolverOptions) -> Outcome {
        let nz = self.nvars();
        let dims: Vec<usize> = self.g0.iter().map(|m| m.nrows()).collect();
        let total: usize = dims.iter().sum();
        let b_norm = self.b.norm();
        let c_norm: f64 = self.g0.iter().map(|m| m.norm_squared()).sum::<f64>().sqrt();

        let mut z = Vector::zeros(nz);
        if total == 0 {
            let verdict = if b_norm > 0.0 { Verdict::Unbounded } else { Verdict::Converged };
            return Outcome {
                z,
                x: Vec::new(),
                iterations: 0,
                verdict,
            };
        }

        // Initial point scaled to the data.
        let gmax = (0..nz)
            .map(|j| self.g.iter().filter_map(|gb| gb[j].as_ref()).map(|m| m.norm_squared()).sum::<f64>().sqrt())
            .fold(0.0, f64::max);
        let n = total as f64;
        let ratio = (0..nz)
            .map(|j| {
                let gj: f64 = self.g.iter().filter_map(|gb| gb[j].as_ref()).map(|m| m.norm_squared()).sum::<f64>().sqrt();
                (1.0 + self.b[j].abs()) / (1.0 + gj)
            })
            .fold(0.0, f64::max);
        let xi = 10f64.max(n.sqrt()).max(n * ratio);
        let eta = 10f64.max(n.sqrt()).max(gmax).max(c_norm);
        let mut x: Vec<Mat> = dims.iter().map(|&d| Mat::identity(d, d) * xi).collect();
        let mut zmat: Vec<Mat> = dims.iter().map(|&d| Mat::identity(d, d) * eta).collect();

        let mut stall = 0;
        for iter in 0..opts.max_iter {
            let gz = self.apply(&z);
            // Dual residual Rd = G0 + G(z) - Z; primal residual rp = b + G*(X).
            let rd: Vec<Mat> = self.g0.iter().zip(&gz).zip(&zmat).map(|((g0, gz), zm)| g0 + gz - zm).collect();
            let rp = &self.b + self.adjoint(&x);
            let mu = inner(&x, &zmat) / n;
            let pobj: f64 = self.g0.iter().zip(&x).map(|(g0, xb)| g0.dot(xb)).sum();
            let dobj = self.b.dot(&z);
            let rel_gap = (pobj - dobj).abs() / (1.0 + pobj.abs() + dobj.abs());
            let pinf = rp.norm() / (1.0 + b_norm);
            let dinf = rd.iter().map(|m| m.norm_squared()).sum::<f64>().sqrt() / (1.0 + c_norm);

            if std::env::var_os("HARDY_SDP_TRACE").is_some() {
                eprintln!("{iter:3} pobj {pobj:.10e} dobj {dobj:.10e} gap {rel_gap:.2e} pinf {pinf:.2e} dinf {dinf:.2e} mu {mu:.2e}");
            }
            if rel_gap <= opts.gap_tol && pinf <= opts.gap_tol && dinf <= opts.gap_tol {
                return Outcome {
                    z,
                    x,
                    iterations: iter,
                    verdict: Verdict::Converged,
                };
            }
            let xnorm = x.iter().map(|m| m.norm()).fold(0.0, f64::max);
            if xnorm > 1e10 && pobj < -1e8 {
                return Outcome {
                    z,
                    x,
                    iterations: iter,
                    verdict: Verdict::Infeasible,
                };
            }
            if z.norm() > 1e10 && dobj > 1e8 && dinf < 1e-6 {
                return Outcome {
                    z,
                    x,
                    iterations: iter,
                    verdict: Verdict::Unbounded,
                };
            }
            if xnorm > 1e12 {
                return Outcome {
                    z,
                    x,
                    iterations: iter,
                    verdict: Verdict::Infeasible,
                };
            }

            let Some(step) = self.newton_step(&x, &zmat, &rd, &rp, mu, n) else {
                return Outcome {
                    z,
                    x,
                    iterations: iter,
                    verdict: Verdict::NumericalFailure,
                };
            };
            let (dx, dz, dzm, ap, ad) = step;
            for (xb, d) in x.iter_mut().zip(&dx) {
                *xb += d * ap;
                symmetrize(xb);
            }
            z += &dz * ad;
            for (zb, d) in zmat.iter_mut().zip(&dzm) {
                *zb += d * ad;
                symmetrize(zb);
            }
            if ap.max(ad) < 1e-8 {
                stall += 1;
                if stall >= 3 {
                    return Outcome {
                        z,
                        x,
                        iterations: iter + 1,
                        verdict: Verdict::Stalled,
                    };
                }
            } else {
                stall = 0;
            }
        }
        Outcome {
            z,
            x,
            iterations: opts.max_iter,
            verdict: Verdict::MaxIter,
        }
    }

    /// Mehrotra predictor-corrector step. Returns `(dX, dz, dZ, alpha_p, alpha_d)`.
    #[allow(clippy::type_complexity)]
    fn newton_step(
        &self,
        x: &[Mat],
        zmat: &[Mat],
        rd: &[Mat],
        rp: &Vector,
        mu: f64,
        n: f64,
    ) -> Option<(Vec<Mat>, Vector, Vec<Mat>, f64, f64)> {
        let nz = self.nvars();
        let zinv: Vec<Mat> = zmat.iter().map(spd_inverse).collect::<Option<_>>()?;

        // Schur complement M_ij = tr(G_i X G_j Z^-1).
        let mut schur = Mat::zeros(nz, nz);
        for ((gb, xb), zi) in self.g.iter().zip(x).zip(&zinv) {
            let t: Vec<Option<Mat>> = gb.iter().map(|gj| gj.as_ref().map(|gj| xb * gj * zi)).collect();
            for (j, tj) in t.iter().enumerate() {
                let Some(tj) = tj else { continue };
                let tjt = tj.transpose();
                for (i, gi) in gb.iter().enumerate().take(j + 1) {
                    if let Some(gi) = gi {
                        let v = gi.dot(&tjt);
                        schur[(i, j)] += v;
                        if i != j {
                            schur[(j, i)] += v;
                        }
                    }
                }
            }
        }
        let schur = (&schur + schur.transpose()) * 0.5;
        let chol = schur.clone().cholesky();
        let lu = if chol.is_none() { Some(schur.clone().lu()) } else { None };
        let solve_schur = |rhs: &Vector| -> Option<Vector> {
            match &chol {
                Some(c) => Some(c.solve(rhs)),
                None => lu.as_ref()?.solve(rhs),
            }
        };

        let direction = |sigma: f64, corr: Option<&[Mat]>| -> Option<(Vec<Mat>, Vector, Vec<Mat>)> {
            // K = sigma mu Z^-1 - X - sym(X Rd Z^-1) - corr
            let k: Vec<Mat> = (0..x.len())
                .map(|b| {
                    let mut kb = &zinv[b] * (sigma * mu) - &x[b] - sym(&(&x[b] * &rd[b] * &zinv[b]));
                    if let Some(c) = corr {
                        kb -= &c[b];
                    }
                    kb
                })
                .collect();
            let rhs = rp + self.adjoint(&k);
            let dz = solve_schur(&rhs)?;
            let gdz = self.apply(&dz);
            let dzm: Vec<Mat> = rd.iter().zip(&gdz).map(|(r, g)| r + g).collect();
            let dx: Vec<Mat> = (0..x.len())
                .map(|b| {
                    let mut d = &zinv[b] * (sigma * mu) - &x[b] - sym(&(&x[b] * &dzm[b] * &zinv[b]));
                    if let Some(c) = corr {
                        d -= &c[b];
                    }
                    d
                })
                .collect();
            Some((dx, dz, dzm))
        };

        let (dxa, _, dza) = direction(0.0, None)?;
        let apa = max_step(x, &dxa)?.min(1.0);
        let ada = max_step(zmat, &dza)?.min(1.0);
        let xa: Vec<Mat> = x.iter().zip(&dxa).map(|(m, d)| m + d * apa).collect();
        let za: Vec<Mat> = zmat.iter().zip(&dza).map(|(m, d)| m + d * ada).collect();
        let mu_aff = inner(&xa, &za) / n;
        let sigma = if mu > 0.0 { (mu_aff / mu).max(0.0).powi(3).min(1.0) } else { 0.0 };
        let corr: Vec<Mat> = (0..x.len()).map(|b| sym(&(&dxa[b] * &dza[b] * &zinv[b]))).collect();

        let (dx, dz, dzm) = direction(sigma, Some(&corr))?;
        let gamma = 0.98;
        let ap = (gamma * max_step(x, &dx)?).min(1.0);
        let ad = (gamma * max_step(zmat, &dzm)?).min(1.0);
        Some((dx, dz, dzm, ap, ad))
    }
}

fn sym(m: &Mat) -> Mat {
    (m + m.transpose()) * 0.5
}

fn symmetrize(m: &mut Mat) {
    let s = sym(m);
    *m = s;
}

fn inner(a: &[Mat], b: &[Mat]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x.dot(y)).sum()
}

fn spd_inverse(m: &Mat) -> Option<Mat> {
    let chol = m.clone().cholesky()?;
    Some(sym(&chol.inverse()))
}

/// Largest `alpha` keeping `M + alpha D` positive definite (infinite if unbounded).
fn max_step(m: &[Mat], d: &[Mat]) -> Option<f64> {
    let mut alpha = f64::INFINITY;
    for (mb, db) in m.iter().zip(d) {
        if mb.nrows() == 1 {
            if db[(0, 0)] < 0.0 {
                alpha = alpha.min(-mb[(0, 0)] / db[(0, 0)]);
            }
            continue;
        }
        let chol = mb.clone().cholesky()?;
        let l = chol.l();
        let w = l.solve_lower_triangular(db)?;
        let w2 = l.solve_lower_triangular(&w.transpose())?;
        let lo = min_sym_eigenvalue(&w2);
        if lo < 0.0 {
            alpha = alpha.min(-1.0 / lo);
        }
    }
    Some(alpha)
}
