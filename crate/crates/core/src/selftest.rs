//! Self-testing of the Hardy state: direct sums of two-qubit optima are
//! mapped by a local isometry onto `|junk>_AB (x) |phi>_A'B'`.
//!
//! Local bases follow the computational convention: block `i` of a party
//! spans `|2i>` (outcome `+` of the first measurement) and `|2i+1>`.

use num_complex::Complex64;
use serde::Serialize;

use crate::behavior::{hardy_report, HardyReport};
use crate::error::{Error, Result};
use crate::quantum::{
    born_behavior, c, hardy_amplitude, hardy_plus_vector, hardy_state_vector, kron, outer, partial_trace, BinaryMeasurement,
    CMatrix, CVector, QuantumModel, State,
};

/// Tolerance on normalization of weight vectors.
const WEIGHT_TOL: f64 = 1e-12;
/// Singular values below this count as zero in the Schmidt rank.
pub const SCHMIDT_TOL: f64 = 1e-9;

/// `sum_ij sqrt(q_ij) |phi_ij>` on `(2 |r|) x (2 |s|)` dimensions.
#[derive(Debug, Clone)]
pub struct DirectSumHardyState {
    pub r: Vec<f64>,
    pub s: Vec<f64>,
    pub theta: f64,
    /// Amplitude used for every block; the Hardy value unless built with
    /// [`DirectSumHardyState::diagnostic`].
    pub a: f64,
    pub vector: CVector,
}

fn check_probabilities(name: &str, w: &[f64]) -> Result<()> {
    if w.is_empty() {
        return Err(Error::InvalidState(format!("{name} must have at least one block")));
    }
    if w.iter().any(|&x| !x.is_finite() || x < 0.0) {
        return Err(Error::InvalidState(format!("{name} has a negative or non-finite weight")));
    }
    let sum: f64 = w.iter().sum();
    if (sum - 1.0).abs() > WEIGHT_TOL {
        return Err(Error::InvalidState(format!("{name} sums to {sum}, expected 1")));
    }
    Ok(())
}

impl DirectSumHardyState {
    pub fn new(r: Vec<f64>, s: Vec<f64>, theta: f64) -> Result<Self> {
        check_probabilities("r", &r)?;
        check_probabilities("s", &s)?;
        let q: Vec<Vec<f64>> = r.iter().map(|&ri| s.iter().map(|&sj| ri * sj).collect()).collect();
        Ok(Self::assemble(r, s, &q, theta, hardy_amplitude()))
    }

    /// Build from a full weight table `q[i][j]`. Rejects tables that are not
    /// the product of their marginals.
    pub fn from_weights(q: &[Vec<f64>], theta: f64) -> Result<Self> {
        let (r, s) = marginals(q)?;
        for (i, row) in q.iter().enumerate() {
            for (j, &qij) in row.iter().enumerate() {
                if (qij - r[i] * s[j]).abs() > 1e-12 {
                    return Err(Error::InvalidState(format!(
                        "block weights are not of product form: q[{i}][{j}] = {qij}, r_i s_j = {}",
                        r[i] * s[j]
                    )));
                }
            }
        }
        Self::new(r, s, theta)
    }

    /// Unchecked variant for negative tests: any weight table, any amplitude.
    /// The stored `r` and `s` are the marginals of `q`.
    pub fn diagnostic(q: &[Vec<f64>], theta: f64, a: f64) -> Result<Self> {
        let (r, s) = marginals(q)?;
        if !(0.0..=std::f64::consts::FRAC_1_SQRT_2).contains(&a) {
            return Err(Error::InvalidState(format!("amplitude {a} outside [0, 1/sqrt 2]")));
        }
        Ok(Self::assemble(r, s, q, theta, a))
    }

    fn assemble(r: Vec<f64>, s: Vec<f64>, q: &[Vec<f64>], theta: f64, a: f64) -> Self {
        let (da, db) = (2 * r.len(), 2 * s.len());
        let phi = hardy_state_vector(a, theta);
        let mut vector = CVector::zeros(da * db);
        for (i, row) in q.iter().enumerate() {
            for (j, &qij) in row.iter().enumerate() {
                let w = qij.sqrt();
                for (k, amp) in phi.iter().enumerate() {
                    let (x, y) = (2 * i + k / 2, 2 * j + k % 2);
                    vector[x * db + y] += amp * w;
                }
            }
        }
        Self { r, s, theta, a, vector }
    }

    pub fn dims(&self) -> (usize, usize) {
        (2 * self.r.len(), 2 * self.s.len())
    }

    pub fn state(&self) -> State {
        State::pure(&self.vector, self.dims()).expect("direct sum of normalized blocks")
    }

    /// Block-diagonal Hardy measurements: computational first measurement,
    /// the optimal `|+>` projector in every block for the second.
    pub fn model(&self) -> QuantumModel {
        let (da, db) = self.dims();
        let plus = outer(&hardy_plus_vector(hardy_amplitude(), self.theta));
        let side = |d: usize| {
            let mut z = CMatrix::zeros(d, d);
            let mut p = CMatrix::zeros(d, d);
            for k in 0..d / 2 {
                z[(2 * k, 2 * k)] = c(1.0, 0.0);
                p.view_mut((2 * k, 2 * k), (2, 2)).copy_from(&plus);
            }
            [
                BinaryMeasurement::projector(z).expect("diagonal projector"),
                BinaryMeasurement::projector(p).expect("block projector"),
            ]
        };
        QuantumModel::new(self.state(), side(da), side(db)).expect("dimensions match")
    }
}

fn marginals(q: &[Vec<f64>]) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = q.first().map_or(0, Vec::len);
    if n == 0 || q.iter().any(|row| row.len() != n) {
        return Err(Error::InvalidState("weight table must be a nonempty rectangle".into()));
    }
    let flat: Vec<f64> = q.iter().flatten().copied().collect();
    check_probabilities("q", &flat)?;
    let r = q.iter().map(|row| row.iter().sum()).collect();
    let s = (0..n).map(|j| q.iter().map(|row| row[j]).sum()).collect();
    Ok((r, s))
}

/// The local isometry restricted to the `|0>`-ancilla sector, as a
/// `2 dim x dim` matrix: `|2k> -> |2k, 0>`, `|2k+1> -> |2k, 1>` in
/// (system, ancilla) order.
pub fn isometry_map(dim: usize) -> Result<CMatrix> {
    if dim == 0 || dim % 2 == 1 {
        return Err(Error::InvalidArgument(format!("isometry needs an even local dimension, got {dim}")));
    }
    let mut m = CMatrix::zeros(2 * dim, dim);
    for col in 0..dim {
        let row = if col % 2 == 0 { 2 * col } else { 2 * (col - 1) + 1 };
        m[(row, col)] = c(1.0, 0.0);
    }
    Ok(m)
}

#[derive(Debug, Clone)]
pub struct IsometryResult {
    /// Output vector ordered `(A, B, A', B')`.
    pub output: CVector,
    /// System dimensions `(dA, dB)`.
    pub dims: (usize, usize),
    /// Reduced state on `AB`.
    pub junk: CMatrix,
    /// Reduced state on `A'B'`.
    pub extracted: CMatrix,
    /// `<phi| extracted |phi>`.
    pub fidelity: f64,
    /// Schmidt rank of `output` across `AB | A'B'`.
    pub schmidt_rank: usize,
    /// Phase of `<11| extracted |01>`.
    pub phase: f64,
}

pub fn run_selftest(state: &DirectSumHardyState) -> IsometryResult {
    let (da, db) = state.dims();
    let phi_a = isometry_map(da).expect("even dimension");
    let phi_b = isometry_map(db).expect("even dimension");
    // (A A')(B B') ordering straight out of the Kronecker product.
    let raw = kron(&phi_a, &phi_b) * &state.vector;
    let mut output = CVector::zeros(raw.len());
    for x in 0..da {
        for ap in 0..2 {
            for y in 0..db {
                for bp in 0..2 {
                    let from = ((x * 2 + ap) * db + y) * 2 + bp;
                    let to = ((x * db + y) * 2 + ap) * 2 + bp;
                    output[to] = raw[from];
                }
            }
        }
    }
    let rho = outer(&output);
    let junk = partial_trace(&rho, da * db, 4, true);
    let extracted = partial_trace(&rho, da * db, 4, false);
    let phi = hardy_state_vector(hardy_amplitude(), state.theta);
    let fidelity = (phi.adjoint() * &extracted * &phi)[(0, 0)].re;

    let split = CMatrix::from_fn(da * db, 4, |i, j| output[i * 4 + j]);
    let schmidt_rank = split.singular_values().iter().filter(|&&v| v > SCHMIDT_TOL).count();
    let phase = extracted[(3, 1)].arg();

    IsometryResult {
        output,
        dims: (da, db),
        junk,
        extracted,
        fidelity,
        schmidt_rank,
        phase,
    }
}

/// Hardy report of the block-diagonal optimal measurements on `state`.
pub fn hardy_of_directsum(state: &DirectSumHardyState) -> HardyReport {
    hardy_report(&born_behavior(&state.model()))
}

/// Signed difference of two angles, wrapped to `(-pi, pi]`.
pub fn phase_difference(a: f64, b: f64) -> f64 {
    let d = Complex64::from_polar(1.0, a - b);
    d.arg()
}

#[derive(Debug, Clone, Serialize)]
pub struct SelftestReport {
    pub fidelity: f64,
    pub hardy: f64,
    pub eps_star: f64,
    pub schmidt_rank: usize,
    pub phase_error: f64,
}

pub fn selftest_report(state: &DirectSumHardyState) -> SelftestReport {
    let res = run_selftest(state);
    let h = hardy_of_directsum(state);
    SelftestReport {
        fidelity: res.fidelity,
        hardy: h.hardy,
        eps_star: h.eps_star,
        schmidt_rank: res.schmidt_rank,
        phase_error: phase_difference(res.phase, state.theta).abs(),
    }
}
