//! Two-qubit lower bound: maximize `p(+,+|A1,B1)` over two-qubit states
//! and measurements with the three constraint cells at most `eps`.
//!
//! Parameters: a lower-triangular complex factor `L` (16 reals, diagonal
//! `1 + p_k`, so the zero vector is the maximally mixed state) and, for each
//! of `A0, A1, B0, B1`, a polar and an azimuthal angle of the `+` eigenvector,
//! plus two eigenvalue logits in POVM mode.
//!
//! Each restart runs a staged penalty method with BFGS on analytic
//! gradients; the best candidates are polished, pushed back onto the
//! feasible set by Gauss-Newton steps and re-verified through
//! [`born_behavior`].

use nalgebra::{DMatrix, DVector, Matrix2, Matrix4, Vector2};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::behavior::{constraint_cells, hardy_report, Behavior};
use crate::error::{Error, Result};
use crate::quantum::{born_behavior, c, hardy_amplitude, BinaryMeasurement, CMatrix, CVector, QuantumModel, State};

pub const STATE_PARAMS: usize = 16;
/// Allowed constraint excess of a reported point.
pub const FEASIBILITY_TOL: f64 = 1e-9;
pub const DEFAULT_RESTARTS: usize = 200;

const PENALTY_STAGES: [f64; 3] = [1e2, 1e4, 1e6];
/// The linear penalty at `eps = 0` starts soft so the search can find the
/// non-trivial branch before the constraints pin it.
const ZERO_EPS_STAGES: [f64; 5] = [1.0, 1e1, 1e2, 1e4, 1e6];
const POLISH_STAGES: [f64; 2] = [1e4, 1e6];
const STEP_TOL: f64 = 1e-10;
/// Cells below this are indistinguishable from zero in double precision.
const ROUNDOFF_FLOOR: f64 = 1e-15;

type M2 = Matrix2<Complex64>;
type M4 = Matrix4<Complex64>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariationalPoint {
    pub state_params: Vec<f64>,
    /// `A0, A1, B0, B1`, each `[polar, azimuth]` or, in POVM mode,
    /// `[polar, azimuth, logit_plus, logit_minus]`.
    pub meas_params: Vec<f64>,
    pub povm: bool,
}

fn per_measurement(povm: bool) -> usize {
    if povm {
        4
    } else {
        2
    }
}

impl VariationalPoint {
    pub fn num_params(povm: bool) -> usize {
        STATE_PARAMS + 4 * per_measurement(povm)
    }

    pub fn zeros(povm: bool) -> Self {
        Self::from_vec(&vec![0.0; Self::num_params(povm)], povm)
    }

    /// Every parameter uniform in `[-1, 1]`.
    pub fn random(povm: bool, rng: &mut impl Rng) -> Self {
        let v: Vec<f64> = (0..Self::num_params(povm)).map(|_| rng.random_range(-1.0..=1.0)).collect();
        Self::from_vec(&v, povm)
    }

    pub fn from_vec(v: &[f64], povm: bool) -> Self {
        assert_eq!(v.len(), Self::num_params(povm), "parameter vector length");
        Self {
            state_params: v[..STATE_PARAMS].to_vec(),
            meas_params: v[STATE_PARAMS..].to_vec(),
            povm,
        }
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = self.state_params.clone();
        v.extend_from_slice(&self.meas_params);
        v
    }

    /// The two-qubit optimum at phase `theta`: `L` has the optimal state as
    /// its only column, `A0 = B0` measure `|0>`, `A1 = B1` the `|+>` vector.
    pub fn hardy_optimal(theta: f64, povm: bool) -> Self {
        let a = hardy_amplitude();
        let b = (1.0 - 2.0 * a * a).sqrt();
        let n = (1.0 - a * a).sqrt();
        let mut s = vec![0.0; STATE_PARAMS];
        s[..4].copy_from_slice(&[-1.0; 4]);
        // off-diagonal order (1,0), (2,0), (2,1), (3,0), ...
        s[4] = a;
        s[6] = a;
        s[10] = b * theta.cos();
        s[11] = b * theta.sin();
        let polar = 2.0 * (b / n).acos();
        let azimuth = theta + std::f64::consts::PI;
        let extra: &[f64] = if povm { &[40.0, -40.0] } else { &[] };
        let mut m = Vec::new();
        for (t, f) in [(0.0, 0.0), (polar, azimuth), (0.0, 0.0), (polar, azimuth)] {
            m.extend_from_slice(&[t, f]);
            m.extend_from_slice(extra);
        }
        Self {
            state_params: s,
            meas_params: m,
            povm,
        }
    }
}

fn off_diagonal() -> impl Iterator<Item = (usize, usize)> {
    (1..4).flat_map(|i| (0..i).map(move |j| (i, j)))
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Decoded parameters in fixed-size form.
struct Fast {
    l: M4,
    trace: f64,
    rho: M4,
    v: [Vector2<Complex64>; 4],
    dv: [[Vector2<Complex64>; 2]; 4],
    lam: [(f64, f64); 4],
    eff: [M2; 4],
    povm: bool,
}

impl Fast {
    fn new(x: &[f64], povm: bool) -> Self {
        let mut l = M4::zeros();
        for k in 0..4 {
            l[(k, k)] = c(1.0 + x[k], 0.0);
        }
        for (m, (i, j)) in off_diagonal().enumerate() {
            l[(i, j)] = c(x[4 + 2 * m], x[5 + 2 * m]);
        }
        let mut rho = l * l.adjoint();
        let mut trace = rho.trace().re;
        if trace < 1e-300 {
            // Only the exact zero factor lands here.
            rho = M4::identity() * c(0.25, 0.0);
            trace = 0.0;
        } else {
            rho /= c(trace, 0.0);
        }
        let k = per_measurement(povm);
        let mut v = [Vector2::zeros(); 4];
        let mut dv = [[Vector2::zeros(); 2]; 4];
        let mut lam = [(1.0, 0.0); 4];
        let mut eff = [M2::zeros(); 4];
        for m in 0..4 {
            let p = &x[STATE_PARAMS + k * m..STATE_PARAMS + k * (m + 1)];
            let (t, f) = (p[0], p[1]);
            let (s, co) = (t / 2.0).sin_cos();
            let ph = Complex64::from_polar(1.0, f);
            v[m] = Vector2::new(c(co, 0.0), ph * s);
            dv[m] = [
                Vector2::new(c(-s / 2.0, 0.0), ph * (co / 2.0)),
                Vector2::new(c(0.0, 0.0), ph * c(0.0, s)),
            ];
            if povm {
                lam[m] = (sigmoid(p[2]), sigmoid(p[3]));
            }
            let proj = v[m] * v[m].adjoint();
            let (l1, l2) = lam[m];
            eff[m] = M2::identity() * c(l2, 0.0) + proj * c(l1 - l2, 0.0);
        }
        Self {
            l,
            trace,
            rho,
            v,
            dv,
            lam,
            eff,
            povm,
        }
    }

    fn op(&self, o: Op) -> M2 {
        match o {
            Op::Eff(k) => self.eff[k],
            Op::Comp(k) => M2::identity() - self.eff[k],
        }
    }

    fn expect(&self, a: Op, b: Op) -> f64 {
        (self.rho * kron2(&self.op(a), &self.op(b))).trace().re
    }

    /// `[hardy, c1, c2, c3]`.
    fn values(&self) -> [f64; 4] {
        QUANTITIES.map(|(a, b)| self.expect(a, b))
    }

    /// Gradient of `sum_q w_q quantity_q` with respect to the parameters.
    fn gradient(&self, w: [f64; 4], out: &mut [f64]) {
        let mut m = M4::zeros();
        let mut env = [M2::zeros(); 4];
        for (q, &(a, b)) in QUANTITIES.iter().enumerate() {
            if w[q] == 0.0 {
                continue;
            }
            let (xa, xb) = (self.op(a), self.op(b));
            m += kron2(&xa, &xb) * c(w[q], 0.0);
            let sa = partial_b(&(self.rho * kron2(&M2::identity(), &xb)));
            let sb = partial_a(&(self.rho * kron2(&xa, &M2::identity())));
            for (o, s) in [(a, sa), (b, sb)] {
                match o {
                    Op::Eff(k) => env[k] += s * c(w[q], 0.0),
                    Op::Comp(k) => env[k] -= s * c(w[q], 0.0),
                }
            }
        }

        if self.trace > 0.0 {
            let f = (self.rho * m).trace().re;
            let g = (m * self.l - self.l * c(f, 0.0)) * c(2.0 / self.trace, 0.0);
            for k in 0..4 {
                out[k] = g[(k, k)].re;
            }
            for (n, (i, j)) in off_diagonal().enumerate() {
                out[4 + 2 * n] = g[(i, j)].re;
                out[5 + 2 * n] = g[(i, j)].im;
            }
        } else {
            out[..STATE_PARAMS].fill(0.0);
        }

        let k = per_measurement(self.povm);
        for (mi, s) in env.iter().enumerate() {
            let base = STATE_PARAMS + k * mi;
            let (l1, l2) = self.lam[mi];
            let vs = self.v[mi].adjoint() * s;
            for (d, dv) in self.dv[mi].iter().enumerate() {
                out[base + d] = 2.0 * (l1 - l2) * (vs * dv)[(0, 0)].re;
            }
            if self.povm {
                let on = (vs * self.v[mi])[(0, 0)].re;
                out[base + 2] = l1 * (1.0 - l1) * on;
                out[base + 3] = l2 * (1.0 - l2) * (s.trace().re - on);
            }
        }
    }
}

#[derive(Clone, Copy)]
enum Op {
    Eff(usize),
    Comp(usize),
}

/// `p(+,+|A1,B1)`, `p(+,+|A0,B0)`, `p(+,-|A1,B0)`, `p(-,+|A0,B1)`.
const QUANTITIES: [(Op, Op); 4] = [
    (Op::Eff(1), Op::Eff(3)),
    (Op::Eff(0), Op::Eff(2)),
    (Op::Eff(1), Op::Comp(2)),
    (Op::Comp(0), Op::Eff(3)),
];

fn kron2(a: &M2, b: &M2) -> M4 {
    M4::from_fn(|r, col| a[(r / 2, col / 2)] * b[(r % 2, col % 2)])
}

fn partial_b(m: &M4) -> M2 {
    M2::from_fn(|i, j| m[(2 * i, 2 * j)] + m[(2 * i + 1, 2 * j + 1)])
}

fn partial_a(m: &M4) -> M2 {
    M2::from_fn(|i, j| m[(i, j)] + m[(2 + i, 2 + j)])
}

/// Valid two-qubit model of a parameter point; total on all inputs.
pub fn decode(p: &VariationalPoint) -> QuantumModel {
    let f = Fast::new(&p.to_vec(), p.povm);
    let rho = CMatrix::from_fn(4, 4, |i, j| f.rho[(i, j)]);
    let rho = (&rho + rho.adjoint()) * c(0.5, 0.0);
    let state = State::new(rho, (2, 2)).expect("L L^dagger / trace is a density matrix");
    let meas = |m: usize| {
        if p.povm {
            let e = CMatrix::from_fn(2, 2, |i, j| f.eff[m][(i, j)]);
            BinaryMeasurement::new((&e + e.adjoint()) * c(0.5, 0.0)).expect("eigenvalues in [0,1]")
        } else {
            BinaryMeasurement::rank_one(&CVector::from_fn(2, |i, _| f.v[m][i])).expect("unit vector")
        }
    };
    QuantumModel::new(state, [meas(0), meas(1)], [meas(2), meas(3)]).expect("qubit dimensions")
}

/// Verified evaluation of a point through the Born rule.
#[derive(Debug, Clone, Serialize)]
pub struct PointEval {
    pub hardy: f64,
    pub cells: [f64; 3],
    /// `max(0, max_i cells_i - eps)`.
    pub excess: f64,
}

pub fn evaluate(p: &VariationalPoint, eps: f64) -> PointEval {
    let b: Behavior = born_behavior(&decode(p));
    let cells = constraint_cells(&b);
    let excess = cells.iter().map(|&x| x - eps).fold(0.0, f64::max);
    PointEval {
        hardy: hardy_report(&b).hardy,
        cells,
        excess,
    }
}

/// Penalty state of one optimization stage.
struct Penalty {
    eps: f64,
    mu: f64,
    lambda: [f64; 3],
}

impl Penalty {
    /// With `eps = 0` every cell is a probability held at its minimum, so its
    /// gradient vanishes on the feasible set; the linear penalty `mu * c` is
    /// smooth there and drives the excess down like `1 / mu^2`. For `eps > 0`
    /// an augmented Lagrangian.
    fn value_and_weights(&self, vals: &[f64; 4]) -> (f64, [f64; 4]) {
        let mut f = -vals[0];
        let mut w = [-1.0, 0.0, 0.0, 0.0];
        for i in 0..3 {
            let cval = vals[i + 1];
            if self.eps == 0.0 {
                f += self.mu * cval;
                w[i + 1] = self.mu;
            } else {
                let g = cval - self.eps;
                let shifted = (self.mu * g + self.lambda[i]).max(0.0);
                f += (shifted * shifted - self.lambda[i] * self.lambda[i]) / (2.0 * self.mu);
                w[i + 1] = shifted;
            }
        }
        (f, w)
    }

    fn update(&mut self, vals: &[f64; 4]) {
        if self.eps > 0.0 {
            for i in 0..3 {
                self.lambda[i] = (self.lambda[i] + self.mu * (vals[i + 1] - self.eps)).max(0.0);
            }
        }
    }
}

fn objective(x: &[f64], povm: bool, pen: &Penalty, grad: &mut [f64]) -> f64 {
    let f = Fast::new(x, povm);
    let vals = f.values();
    let (val, w) = pen.value_and_weights(&vals);
    f.gradient(w, grad);
    val
}

/// BFGS with backtracking line search. Stops when a step moves no
/// coordinate by more than `STEP_TOL`.
fn bfgs(x0: Vec<f64>, max_iter: usize, mut fg: impl FnMut(&[f64], &mut [f64]) -> f64) -> Vec<f64> {
    let n = x0.len();
    let mut x = DVector::from_vec(x0);
    let mut g = DVector::zeros(n);
    let mut fx = fg(x.as_slice(), g.as_mut_slice());
    let mut h = DMatrix::<f64>::identity(n, n);
    let mut g_new = DVector::zeros(n);
    let mut reset = false;
    for _ in 0..max_iter {
        if !fx.is_finite() || g.amax() < 1e-14 {
            break;
        }
        let mut d = -(&h * &g);
        let mut slope = g.dot(&d);
        if slope >= 0.0 {
            h.fill_with_identity();
            d = -g.clone();
            slope = -g.norm_squared();
        }
        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..50 {
            let xn = &x + &d * alpha;
            let fnew = fg(xn.as_slice(), g_new.as_mut_slice());
            if fnew.is_finite() && fnew <= fx + 1e-4 * alpha * slope {
                accepted = Some((xn, fnew));
                break;
            }
            alpha *= 0.5;
        }
        let Some((xn, fnew)) = accepted else {
            if reset {
                break;
            }
            reset = true;
            h.fill_with_identity();
            continue;
        };
        reset = false;
        let s = &xn - &x;
        let yv = &g_new - &g;
        let sy = s.dot(&yv);
        let small_step = s.amax() < STEP_TOL;
        x = xn;
        fx = fnew;
        std::mem::swap(&mut g, &mut g_new);
        if small_step {
            break;
        }
        if sy > 1e-16 {
            let rho = 1.0 / sy;
            let hy = &h * &yv;
            let yhy = yv.dot(&hy);
            // H+ = H - rho (s y^T H + H y s^T) + (rho^2 y^T H y + rho) s s^T
            h -= (&s * hy.transpose() + &hy * s.transpose()) * rho;
            h += (&s * s.transpose()) * (rho * rho * yhy + rho);
        }
    }
    x.iter().copied().collect()
}

fn run_stages(x0: Vec<f64>, eps: f64, povm: bool, stages: &[f64], outer: usize, max_iter: usize) -> Vec<f64> {
    let mut x = x0;
    let mut pen = Penalty {
        eps,
        mu: stages[0],
        lambda: [0.0; 3],
    };
    for &mu in stages {
        pen.mu = mu;
        let rounds = if eps == 0.0 { 1 } else { outer };
        for _ in 0..rounds {
            x = bfgs(x, max_iter, |z, g| objective(z, povm, &pen, g));
            pen.update(&Fast::new(&x, povm).values());
        }
    }
    x
}

/// Gauss-Newton steps on the violated cells until every excess is gone.
fn restore(mut x: Vec<f64>, eps: f64, povm: bool) -> Vec<f64> {
    let n = x.len();
    let margin = if eps > 0.0 { 1e-12 } else { 0.0 };
    let mut grad = vec![0.0; n];
    for _ in 0..80 {
        let f = Fast::new(&x, povm);
        let vals = f.values();
        let viol: Vec<usize> = (0..3).filter(|&i| vals[i + 1] - eps > -0.5 * margin).collect();
        let worst = viol.iter().map(|&i| vals[i + 1] - eps).fold(f64::NEG_INFINITY, f64::max);
        if viol.is_empty() || (eps == 0.0 && worst <= ROUNDOFF_FLOOR) || (eps > 0.0 && worst <= 0.0) {
            break;
        }
        let k = viol.len();
        let mut j = DMatrix::<f64>::zeros(k, n);
        let mut r = DVector::<f64>::zeros(k);
        for (row, &i) in viol.iter().enumerate() {
            let mut w = [0.0; 4];
            w[i + 1] = 1.0;
            f.gradient(w, &mut grad);
            if eps == 0.0 {
                // The cells vanish quadratically; Newton on the square root
                // lands on the feasible set instead of creeping towards it.
                let root = vals[i + 1].max(1e-300).sqrt();
                let scaled: Vec<f64> = grad.iter().map(|g| g / (2.0 * root)).collect();
                j.row_mut(row).copy_from_slice(&scaled);
                r[row] = root;
            } else {
                j.row_mut(row).copy_from_slice(&grad);
                r[row] = vals[i + 1] - (eps - margin);
            }
        }
        let jjt = &j * j.transpose() + DMatrix::identity(k, k) * 1e-30;
        let Some(sol) = jjt.lu().solve(&r) else { break };
        let step = j.transpose() * sol;
        if step.amax() < 1e-17 {
            break;
        }
        for (xi, si) in x.iter_mut().zip(step.iter()) {
            *xi -= si;
        }
    }
    x
}

/// No excess beyond roundoff: `cells <= eps`, or below the roundoff floor
/// when `eps = 0`.
fn strictly_feasible(e: &PointEval, eps: f64) -> bool {
    let floor = if eps == 0.0 { ROUNDOFF_FLOOR } else { 0.0 };
    e.cells.iter().all(|&c| c - eps <= floor)
}

/// Local refinement with tight penalties followed by feasibility restoration.
///
/// A strictly feasible input is returned unchanged unless refinement beats
/// it. At `eps = 0` a roundoff-level excess still lets the value move by
/// ~1e-8, so smaller gains are not trusted there.
pub fn polish(point: &VariationalPoint, eps: f64) -> VariationalPoint {
    let x = run_stages(point.to_vec(), eps, point.povm, &POLISH_STAGES, 6, 2000);
    let x = restore(x, eps, point.povm);
    let out = VariationalPoint::from_vec(&x, point.povm);
    let before = evaluate(point, eps);
    let after = evaluate(&out, eps);
    let resolution = if eps == 0.0 { 1e-8 } else { 1e-13 };
    let keep_input = if strictly_feasible(&before, eps) {
        !strictly_feasible(&after, eps) || after.hardy <= before.hardy + resolution
    } else {
        !strictly_feasible(&after, eps) && before.excess <= FEASIBILITY_TOL
    };
    if keep_input {
        point.clone()
    } else {
        out
    }
}

#[derive(Debug, Clone)]
pub struct LowerBoundOptions {
    pub restarts: usize,
    pub seed: u64,
    pub povm: bool,
    /// Extra starting points (e.g. optima found at a smaller eps), polished
    /// alongside the best random restarts.
    pub warm_starts: Vec<VariationalPoint>,
    /// How many of the best random restarts get polished.
    pub polish_top: usize,
    /// For a projective search at `eps > 0`, also run this fraction of the
    /// restarts over POVM effects. Rank-one projectors cannot express the
    /// trivial measurements that reach 1 near `eps = 1/3`.
    pub povm_fraction: f64,
}

impl Default for LowerBoundOptions {
    fn default() -> Self {
        Self {
            restarts: DEFAULT_RESTARTS,
            seed: 0,
            povm: false,
            warm_starts: Vec::new(),
            polish_top: 8,
            povm_fraction: 0.25,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct LowerBoundResult {
    pub eps: f64,
    /// Verified Hardy probability of `best_point`; NaN when nothing feasible
    /// was found.
    pub value: f64,
    pub best_point: VariationalPoint,
    pub feasible: bool,
    pub restarts_used: usize,
    pub seed: u64,
    pub cells: [f64; 3],
}

pub fn lower_bound(eps: f64, restarts: usize, seed: u64) -> Result<LowerBoundResult> {
    lower_bound_with(
        eps,
        &LowerBoundOptions {
            restarts,
            seed,
            ..LowerBoundOptions::default()
        },
    )
}

pub fn lower_bound_with(eps: f64, opts: &LowerBoundOptions) -> Result<LowerBoundResult> {
    let main = search(eps, opts)?;
    if opts.povm || eps == 0.0 || opts.povm_fraction <= 0.0 {
        return Ok(main);
    }
    let extra = LowerBoundOptions {
        restarts: ((opts.restarts as f64 * opts.povm_fraction).ceil() as usize).max(1),
        povm: true,
        warm_starts: Vec::new(),
        ..opts.clone()
    };
    let alt = search(eps, &extra)?;
    let restarts_used = main.restarts_used + alt.restarts_used;
    // Projective points win ties; the POVM branch only has to cover what
    // they cannot reach.
    let better = alt.feasible && (!main.feasible || alt.value > main.value + 1e-10);
    let best = if better { alt } else { main };
    Ok(LowerBoundResult { restarts_used, ..best })
}

fn search(eps: f64, opts: &LowerBoundOptions) -> Result<LowerBoundResult> {
    if !eps.is_finite() || eps < 0.0 {
        return Err(Error::InvalidArgument(format!("eps must be nonnegative, got {eps}")));
    }
    if opts.restarts == 0 {
        return Err(Error::InvalidArgument("restarts must be at least 1".into()));
    }
    if let Some(w) = opts.warm_starts.iter().find(|w| w.povm != opts.povm) {
        return Err(Error::InvalidArgument(format!("warm start in the wrong mode (povm = {})", w.povm)));
    }
    let povm = opts.povm;

    // Merit of a coarse optimum: hardy minus the squared excess at the
    // final penalty weight.
    let coarse: Vec<(usize, f64, Vec<f64>)> = (0..opts.restarts)
        .into_par_iter()
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed.wrapping_add(k as u64));
            let start = VariationalPoint::random(povm, &mut rng).to_vec();
            let stages: &[f64] = if eps == 0.0 { &ZERO_EPS_STAGES } else { &PENALTY_STAGES };
            let x = run_stages(start, eps, povm, stages, 3, 300);
            let vals = Fast::new(&x, povm).values();
            let excess: f64 = vals[1..].iter().map(|&c| (c - eps).max(0.0).powi(2)).sum();
            (k, vals[0] - 1e6 * excess, x)
        })
        .collect();
    let mut order: Vec<usize> = (0..coarse.len()).collect();
    order.sort_by(|&a, &b| coarse[b].1.total_cmp(&coarse[a].1).then(a.cmp(&b)));

    let mut candidates: Vec<(usize, VariationalPoint)> = order
        .iter()
        .take(opts.polish_top.max(1))
        .map(|&i| (coarse[i].0, VariationalPoint::from_vec(&coarse[i].2, povm)))
        .collect();
    candidates.extend(opts.warm_starts.iter().cloned().enumerate().map(|(k, w)| (opts.restarts + k, w)));

    let polished: Vec<(usize, VariationalPoint, PointEval)> = candidates
        .into_par_iter()
        .map(|(k, p)| {
            let q = polish(&p, eps);
            let e = evaluate(&q, eps);
            (k, q, e)
        })
        .collect();

    let best = polished
        .iter()
        .filter(|(_, _, e)| e.excess <= FEASIBILITY_TOL)
        .max_by(|a, b| a.2.hardy.total_cmp(&b.2.hardy).then(b.0.cmp(&a.0)));
    Ok(match best {
        Some((_, p, e)) => LowerBoundResult {
            eps,
            value: e.hardy,
            best_point: p.clone(),
            feasible: true,
            restarts_used: opts.restarts,
            seed: opts.seed,
            cells: e.cells,
        },
        None => {
            let (_, p, e) = &polished[0];
            LowerBoundResult {
                eps,
                value: f64::NAN,
                best_point: p.clone(),
                feasible: false,
                restarts_used: opts.restarts,
                seed: opts.seed,
                cells: e.cells,
            }
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quantum::hardy_max;

    fn fd_gradient(x: &[f64], povm: bool, w: [f64; 4]) -> Vec<f64> {
        let h = 1e-6;
        (0..x.len())
            .map(|i| {
                let mut xp = x.to_vec();
                let mut xm = x.to_vec();
                xp[i] += h;
                xm[i] -= h;
                let f = |z: &[f64]| {
                    let v = Fast::new(z, povm).values();
                    (0..4).map(|q| w[q] * v[q]).sum::<f64>()
                };
                (f(&xp) - f(&xm)) / (2.0 * h)
            })
            .collect()
    }

    #[test]
    fn analytic_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for povm in [false, true] {
            for _ in 0..5 {
                let x = VariationalPoint::random(povm, &mut rng).to_vec();
                let w = [-1.0, 0.7, 2.0, -0.3];
                let mut g = vec![0.0; x.len()];
                Fast::new(&x, povm).gradient(w, &mut g);
                let fd = fd_gradient(&x, povm, w);
                for (a, b) in g.iter().zip(&fd) {
                    assert!((a - b).abs() < 1e-7, "povm={povm}: {a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn fast_values_match_born_rule() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for povm in [false, true] {
            let p = VariationalPoint::random(povm, &mut rng);
            let v = Fast::new(&p.to_vec(), povm).values();
            let b = born_behavior(&decode(&p));
            let cells = constraint_cells(&b);
            assert!((v[0] - hardy_report(&b).hardy).abs() < 1e-12);
            for i in 0..3 {
                assert!((v[i + 1] - cells[i]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_point_is_maximally_mixed() {
        let m = decode(&VariationalPoint::zeros(false));
        let rho = m.state.density();
        assert!((rho - CMatrix::identity(4, 4) * c(0.25, 0.0)).norm() < 1e-15);
        let z = CMatrix::from_fn(2, 2, |i, j| c(if i == 0 && j == 0 { 1.0 } else { 0.0 }, 0.0));
        assert!((m.alice[0].effect_plus() - z).norm() < 1e-15);
    }

    #[test]
    fn hardy_optimal_parameters_decode_to_the_optimum() {
        for povm in [false, true] {
            for theta in [0.0, 0.8, -2.0] {
                let e = evaluate(&VariationalPoint::hardy_optimal(theta, povm), 0.0);
                assert!((e.hardy - hardy_max()).abs() < 1e-12, "{e:?}");
                assert!(e.excess < 1e-15, "{e:?}");
            }
        }
    }

    #[test]
    fn random_points_decode_to_valid_models() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for k in 0..50 {
            let povm = k % 2 == 0;
            let v: Vec<f64> = (0..VariationalPoint::num_params(povm)).map(|_| rng.random_range(-20.0..20.0)).collect();
            let b = born_behavior(&decode(&VariationalPoint::from_vec(&v, povm)));
            assert!(b.validate().is_ok());
        }
    }

    #[test]
    fn polish_keeps_the_exact_optimum() {
        let p = VariationalPoint::hardy_optimal(0.0, false);
        let q = polish(&p, 0.0);
        let e = evaluate(&q, 0.0);
        assert!((e.hardy - hardy_max()).abs() < 1e-10);
        assert!(e.excess <= FEASIBILITY_TOL);
    }

    #[test]
    fn polish_recovers_from_a_perturbation() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut v = VariationalPoint::hardy_optimal(0.0, false).to_vec();
        for x in &mut v {
            *x += rng.random_range(-1e-3..1e-3);
        }
        let q = polish(&VariationalPoint::from_vec(&v, false), 0.0);
        let e = evaluate(&q, 0.0);
        assert!(e.excess <= FEASIBILITY_TOL, "{e:?}");
        assert!((e.hardy - hardy_max()).abs() < 1e-8, "{e:?}");
    }

    #[test]
    fn rejects_bad_arguments() {
        assert!(lower_bound(-0.1, 10, 0).is_err());
        assert!(lower_bound(0.1, 0, 0).is_err());
    }

    #[test]
    fn deterministic_in_seed() {
        let a = lower_bound(0.05, 6, 11).unwrap();
        let b = lower_bound(0.05, 6, 11).unwrap();
        assert_eq!(a.value.to_bits(), b.value.to_bits());
        assert_eq!(a.best_point, b.best_point);
    }

    #[test]
    fn finds_the_optimum_at_zero_for_several_seeds() {
        for seed in [0, 1, 2] {
            let r = lower_bound(0.0, 200, seed).unwrap();
            assert!(r.feasible);
            assert!(r.value >= 0.0901699 - 1e-6, "seed {seed}: {}", r.value);
            assert!(r.value <= hardy_max() + 1e-7, "seed {seed}: {}", r.value);
        }
    }

    #[test]
    fn reaches_the_trivial_bound_at_one_third() {
        let r = lower_bound(1.0 / 3.0, 50, 0).unwrap();
        assert!(r.value >= 0.999, "{}", r.value);
        assert!(r.cells.iter().all(|&c| c <= 1.0 / 3.0 + FEASIBILITY_TOL));
        let projective_only = lower_bound_with(
            1.0 / 3.0,
            &LowerBoundOptions {
                restarts: 50,
                povm_fraction: 0.0,
                ..LowerBoundOptions::default()
            },
        )
        .unwrap();
        assert!(!projective_only.best_point.povm && projective_only.value < 0.99);
    }

    #[test]
    fn close_to_the_level_three_bound() {
        let lo = lower_bound(0.05, 200, 0).unwrap().value;
        let up = crate::npa::upper_bound(0.05, 3).unwrap().value.unwrap();
        assert!(lo <= up + 1e-6 && up - lo <= 1e-3, "{lo} {up}");
    }
}
