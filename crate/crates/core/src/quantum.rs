//! Finite-dimensional bipartite quantum models and the Born rule.
//!
//! States are stored as density matrices, measurements by the effect of
//! their `+` outcome. [`make_hardy_optimal`] builds the two-qubit state and
//! measurements that reach the maximal Hardy probability.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::behavior::{Behavior, MINUS, PLUS};
use crate::error::{Error, Result};

pub type CMatrix = DMatrix<Complex64>;
pub type CVector = DVector<Complex64>;

/// Tolerance for Hermiticity, positivity, trace and idempotence checks.
pub const TOL: f64 = 1e-9;

/// `sqrt((3 - sqrt 5) / 2)`, the amplitude of `|01>` and `|10>` in the optimal state.
pub fn hardy_amplitude() -> f64 {
    ((3.0 - 5f64.sqrt()) / 2.0).sqrt()
}

/// Largest Hardy probability reachable by quantum systems, `(5 sqrt 5 - 11) / 2`.
pub fn hardy_max() -> f64 {
    (5.0 * 5f64.sqrt() - 11.0) / 2.0
}

pub fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

pub fn kron(a: &CMatrix, b: &CMatrix) -> CMatrix {
    a.kronecker(b)
}

pub fn identity(d: usize) -> CMatrix {
    CMatrix::identity(d, d)
}

pub fn outer(v: &CVector) -> CMatrix {
    v * v.adjoint()
}

/// Largest entrywise modulus of `m - m^dagger`.
pub fn hermitian_deviation(m: &CMatrix) -> f64 {
    if !m.is_square() {
        return f64::INFINITY;
    }
    let n = m.nrows();
    let mut dev = 0f64;
    for i in 0..n {
        for j in i..n {
            dev = dev.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    dev
}

pub fn max_abs(m: &CMatrix) -> f64 {
    m.iter().fold(0f64, |acc, z| acc.max(z.norm()))
}

/// Eigen-decomposition of a Hermitian matrix with eigenvalues in ascending
/// order. Column `k` of the returned matrix is the eigenvector of value `k`.
pub fn eig_hermitian(m: &CMatrix) -> Result<(Vec<f64>, CMatrix)> {
    if !m.is_square() {
        return Err(Error::DimensionMismatch(format!(
            "eig_hermitian needs a square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    let dev = hermitian_deviation(m);
    if dev > TOL {
        return Err(Error::NotHermitian(dev));
    }
    // Symmetrize so the routine only sees the Hermitian part.
    let h = (m + m.adjoint()) * c(0.5, 0.0);
    let eig = h.symmetric_eigen();
    let mut order: Vec<usize> = (0..m.nrows()).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vectors = CMatrix::zeros(m.nrows(), m.ncols());
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    Ok((values, vectors))
}

/// Smallest eigenvalue of a Hermitian matrix (no Hermiticity check).
pub fn min_eigenvalue(m: &CMatrix) -> f64 {
    let h = (m + m.adjoint()) * c(0.5, 0.0);
    h.symmetric_eigen()
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// Partial trace of an operator on `A (x) B`, keeping the `keep_first` factor
/// when true and the second factor otherwise.
pub fn partial_trace(m: &CMatrix, da: usize, db: usize, keep_first: bool) -> CMatrix {
    assert_eq!(m.nrows(), da * db);
    if keep_first {
        CMatrix::from_fn(da, da, |i, j| (0..db).map(|k| m[(i * db + k, j * db + k)]).sum())
    } else {
        CMatrix::from_fn(db, db, |i, j| (0..da).map(|k| m[(k * db + i, k * db + j)]).sum())
    }
}

/// A bipartite density matrix on `C^dA (x) C^dB`.
#[derive(Debug, Clone, PartialEq)]
pub struct State {
    density: CMatrix,
    dims: (usize, usize),
}

impl State {
    pub fn new(density: CMatrix, dims: (usize, usize)) -> Result<Self> {
        let d = dims.0 * dims.1;
        if density.nrows() != d || density.ncols() != d {
            return Err(Error::DimensionMismatch(format!(
                "density is {}x{} but local dims {:?} require {d}x{d}",
                density.nrows(),
                density.ncols(),
                dims
            )));
        }
        let dev = hermitian_deviation(&density);
        if dev > TOL {
            return Err(Error::NotHermitian(dev));
        }
        let trace = density.trace();
        if (trace.re - 1.0).abs() > TOL || trace.im.abs() > TOL {
            return Err(Error::InvalidState(format!("trace {trace} differs from 1")));
        }
        let lo = min_eigenvalue(&density);
        if lo < -TOL {
            return Err(Error::InvalidState(format!("negative eigenvalue {lo:.3e}")));
        }
        Ok(Self { density, dims })
    }

    /// Pure state `|v><v|`; `v` is normalized first.
    pub fn pure(v: &CVector, dims: (usize, usize)) -> Result<Self> {
        let norm = v.norm();
        if norm == 0.0 {
            return Err(Error::InvalidState("zero vector".into()));
        }
        Self::new(outer(&(v / c(norm, 0.0))), dims)
    }

    pub fn maximally_mixed(dims: (usize, usize)) -> Self {
        let d = dims.0 * dims.1;
        Self {
            density: identity(d) * c(1.0 / d as f64, 0.0),
            dims,
        }
    }

    pub fn density(&self) -> &CMatrix {
        &self.density
    }

    pub fn dims(&self) -> (usize, usize) {
        self.dims
    }
}

/// A two-outcome measurement given by the effect of its `+` outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryMeasurement {
    effect_plus: CMatrix,
    projective: bool,
}

impl BinaryMeasurement {
    /// General POVM: requires `0 <= effect <= 1`.
    pub fn new(effect_plus: CMatrix) -> Result<Self> {
        if !effect_plus.is_square() {
            return Err(Error::DimensionMismatch("effect must be square".into()));
        }
        let dev = hermitian_deviation(&effect_plus);
        if dev > TOL {
            return Err(Error::NotHermitian(dev));
        }
        let (values, _) = eig_hermitian(&effect_plus)?;
        let (lo, hi) = (values[0], values[values.len() - 1]);
        if lo < -TOL || hi > 1.0 + TOL {
            return Err(Error::InvalidMeasurement(format!(
                "effect spectrum [{lo:.3e}, {hi:.3e}] leaves [0, 1]"
            )));
        }
        let projective = max_abs(&(&effect_plus * &effect_plus - &effect_plus)) <= TOL;
        Ok(Self {
            effect_plus,
            projective,
        })
    }

    /// Projective measurement; fails unless the effect is idempotent.
    pub fn projector(effect_plus: CMatrix) -> Result<Self> {
        let m = Self::new(effect_plus)?;
        if !m.projective {
            return Err(Error::InvalidMeasurement("effect is not a projector".into()));
        }
        Ok(m)
    }

    /// Rank-one projector onto `v` in dimension `v.len()`.
    pub fn rank_one(v: &CVector) -> Result<Self> {
        let norm = v.norm();
        if norm == 0.0 {
            return Err(Error::InvalidMeasurement("zero vector".into()));
        }
        Self::projector(outer(&(v / c(norm, 0.0))))
    }

    pub fn dim(&self) -> usize {
        self.effect_plus.nrows()
    }

    pub fn is_projective(&self) -> bool {
        self.projective
    }

    pub fn effect(&self, outcome: usize) -> CMatrix {
        if outcome == PLUS {
            self.effect_plus.clone()
        } else {
            identity(self.dim()) - &self.effect_plus
        }
    }

    pub fn effect_plus(&self) -> &CMatrix {
        &self.effect_plus
    }

    /// `Pi_+ - Pi_-`.
    pub fn observable(&self) -> CMatrix {
        &self.effect_plus * c(2.0, 0.0) - identity(self.dim())
    }
}

/// A state together with two binary measurements per party.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantumModel {
    pub state: State,
    pub alice: [BinaryMeasurement; 2],
    pub bob: [BinaryMeasurement; 2],
}

impl QuantumModel {
    pub fn new(state: State, alice: [BinaryMeasurement; 2], bob: [BinaryMeasurement; 2]) -> Result<Self> {
        let (da, db) = state.dims();
        for m in &alice {
            if m.dim() != da {
                return Err(Error::DimensionMismatch(format!(
                    "Alice measurement has dim {} but state has dA = {da}",
                    m.dim()
                )));
            }
        }
        for m in &bob {
            if m.dim() != db {
                return Err(Error::DimensionMismatch(format!(
                    "Bob measurement has dim {} but state has dB = {db}",
                    m.dim()
                )));
            }
        }
        Ok(Self { state, alice, bob })
    }
}

/// `p(a,b|x,y) = tr(rho Pi_{a|x} (x) Pi_{b|y})` for all sixteen cells.
pub fn born_behavior(model: &QuantumModel) -> Behavior {
    let rho = model.state.density();
    let mut p = [[[[0.0; 2]; 2]; 2]; 2];
    for (x, ma) in model.alice.iter().enumerate() {
        for (y, mb) in model.bob.iter().enumerate() {
            for a in [PLUS, MINUS] {
                let ea = ma.effect(a);
                for b in [PLUS, MINUS] {
                    let op = kron(&ea, &mb.effect(b));
                    // tr(rho op) without forming the product
                    let val: Complex64 = rho.iter().zip(op.transpose().iter()).map(|(r, o)| r * o).sum();
                    p[a][b][x][y] = val.re;
                }
            }
        }
    }
    Behavior::from_raw(p)
}

/// The two-qubit model reaching the maximal Hardy probability.
#[derive(Debug, Clone)]
pub struct HardyOptimal {
    pub a: f64,
    pub theta: f64,
    pub model: QuantumModel,
}

impl HardyOptimal {
    /// `a(|01> + |10>) + e^{i theta} sqrt(1 - 2a^2) |11>`.
    pub fn state_vector(&self) -> CVector {
        hardy_state_vector(self.a, self.theta)
    }

    /// `(sqrt(1 - 2a^2)|0> - e^{i theta} a |1>) / sqrt(1 - a^2)`.
    pub fn plus_vector(&self) -> CVector {
        hardy_plus_vector(self.a, self.theta)
    }
}

pub fn hardy_state_vector(a: f64, theta: f64) -> CVector {
    let b = (1.0 - 2.0 * a * a).sqrt();
    CVector::from_vec(vec![
        c(0.0, 0.0),
        c(a, 0.0),
        c(a, 0.0),
        Complex64::from_polar(b, theta),
    ])
}

pub fn hardy_plus_vector(a: f64, theta: f64) -> CVector {
    let b = (1.0 - 2.0 * a * a).sqrt();
    let n = (1.0 - a * a).sqrt();
    CVector::from_vec(vec![c(b / n, 0.0), -Complex64::from_polar(a / n, theta)])
}

pub fn basis_vector(d: usize, k: usize) -> CVector {
    let mut v = CVector::zeros(d);
    v[k] = c(1.0, 0.0);
    v
}

pub fn make_hardy_optimal(theta: f64) -> HardyOptimal {
    let a = hardy_amplitude();
    let state = State::pure(&hardy_state_vector(a, theta), (2, 2)).expect("normalized two-qubit state");
    let z = BinaryMeasurement::rank_one(&basis_vector(2, 0)).expect("computational projector");
    let plus = BinaryMeasurement::rank_one(&hardy_plus_vector(a, theta)).expect("rank-one projector");
    let model = QuantumModel::new(state, [z.clone(), plus.clone()], [z, plus]).expect("qubit dims match");
    HardyOptimal { a, theta, model }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn real(rows: usize, cols: usize, data: &[f64]) -> CMatrix {
        CMatrix::from_row_iterator(rows, cols, data.iter().map(|&x| c(x, 0.0)))
    }

    fn random_hermitian(d: usize, rng: &mut impl Rng) -> CMatrix {
        let g = CMatrix::from_fn(d, d, |_, _| c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
        (&g + g.adjoint()) * c(0.5, 0.0)
    }

    fn random_unitary(d: usize, rng: &mut impl Rng) -> CMatrix {
        let (_, v) = eig_hermitian(&random_hermitian(d, rng)).unwrap();
        v
    }

    #[test]
    fn kron_examples() {
        assert_eq!(kron(&identity(2), &identity(2)), identity(4));
        let z = real(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        let expected = CMatrix::from_diagonal(&CVector::from_vec(
            [1.0, 1.0, -1.0, -1.0].iter().map(|&x| c(x, 0.0)).collect(),
        ));
        assert_eq!(kron(&z, &identity(2)), expected);
        let p0 = outer(&basis_vector(2, 0));
        let p1 = outer(&basis_vector(2, 1));
        assert_eq!(kron(&p0, &p1), outer(&basis_vector(4, 1)));
        let k = kron(&real(2, 3, &[1.0; 6]), &real(3, 1, &[1.0; 3]));
        assert_eq!((k.nrows(), k.ncols()), (6, 3));
    }

    #[test]
    fn eig_examples() {
        let (vals, _) = eig_hermitian(&real(2, 2, &[1.0, 0.0, 0.0, -1.0])).unwrap();
        assert_eq!(vals, vec![-1.0, 1.0]);
        let (vals, vecs) = eig_hermitian(&real(2, 2, &[0.0, 1.0, 1.0, 0.0])).unwrap();
        assert!((vals[0] + 1.0).abs() < 1e-12 && (vals[1] - 1.0).abs() < 1e-12);
        let s = 0.5f64.sqrt();
        // up to a global phase per column
        let minus = CVector::from_vec(vec![c(s, 0.0), c(-s, 0.0)]);
        let plus = CVector::from_vec(vec![c(s, 0.0), c(s, 0.0)]);
        assert!((vecs.column(0).dotc(&minus).norm() - 1.0).abs() < 1e-12);
        assert!((vecs.column(1).dotc(&plus).norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn eig_rejects_non_hermitian() {
        let m = real(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        assert!(matches!(eig_hermitian(&m), Err(Error::NotHermitian(_))));
    }

    #[test]
    fn eig_reconstructs_random_hermitian() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let h = random_hermitian(6, &mut rng);
            let (vals, v) = eig_hermitian(&h).unwrap();
            assert!(vals.windows(2).all(|w| w[0] <= w[1]));
            let d = CMatrix::from_diagonal(&CVector::from_vec(vals.iter().map(|&x| c(x, 0.0)).collect()));
            assert!(max_abs(&(&v * d * v.adjoint() - &h)) <= 1e-9);
            assert!(max_abs(&(v.adjoint() * &v - identity(6))) <= 1e-9);
        }
    }

    #[test]
    fn hardy_optimal_coefficients() {
        let h = make_hardy_optimal(0.0);
        let v = h.state_vector();
        let expected = [0.0, 0.6180339887, 0.6180339887, 0.4858682718];
        for (z, e) in v.iter().zip(expected) {
            assert!((z.re - e).abs() < 1e-10 && z.im.abs() < 1e-15);
        }
        assert!((v.norm() - 1.0).abs() < 1e-12);
        let plus = h.plus_vector();
        assert!((plus[0].re - 0.6180339887).abs() < 1e-10);
        assert!((plus[1].re + 0.7861513778).abs() < 1e-10);

        let flipped = make_hardy_optimal(std::f64::consts::PI).state_vector();
        for k in 0..3 {
            assert!((flipped[k] - v[k]).norm() < 1e-15);
        }
        assert!((flipped[3] + v[3]).norm() < 1e-12);
    }

    #[test]
    fn born_rule_on_hardy_optimal() {
        let b = born_behavior(&make_hardy_optimal(0.0).model);
        assert!(b.get(PLUS, PLUS, 0, 0).abs() < 1e-15);
        assert!((b.get(PLUS, PLUS, 1, 1) - 0.0901699437).abs() < 1e-10);
        assert!((b.get(PLUS, PLUS, 1, 1) - hardy_max()).abs() < 1e-12);
    }

    #[test]
    fn born_rule_on_maximally_mixed() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut meas = || {
            let v = CVector::from_fn(2, |_, _| c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
            BinaryMeasurement::rank_one(&v).unwrap()
        };
        let model = QuantumModel::new(
            State::maximally_mixed((2, 2)),
            [meas(), meas()],
            [meas(), meas()],
        )
        .unwrap();
        let b = born_behavior(&model);
        for v in b.cells() {
            assert!((v - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn model_rejects_dimension_mismatch() {
        let z2 = BinaryMeasurement::rank_one(&basis_vector(2, 0)).unwrap();
        let z3 = BinaryMeasurement::rank_one(&basis_vector(3, 0)).unwrap();
        let err = QuantumModel::new(
            State::maximally_mixed((2, 2)),
            [z2.clone(), z3],
            [z2.clone(), z2],
        );
        assert!(matches!(err, Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn state_validation() {
        assert!(State::new(identity(4), (2, 2)).is_err());
        let bad = real(2, 2, &[1.5, 0.0, 0.0, -0.5]);
        assert!(matches!(State::new(bad, (2, 1)), Err(Error::InvalidState(_))));
        assert!(BinaryMeasurement::new(real(2, 2, &[1.2, 0.0, 0.0, 0.0])).is_err());
        let half = BinaryMeasurement::new(identity(2) * c(0.5, 0.0)).unwrap();
        assert!(!half.is_projective());
        assert!(BinaryMeasurement::projector(identity(2) * c(0.5, 0.0)).is_err());
    }

    proptest! {
        #[test]
        fn hardy_optimal_for_every_theta(theta in -10.0f64..10.0) {
            let b = born_behavior(&make_hardy_optimal(theta).model);
            prop_assert!((b.get(PLUS, PLUS, 1, 1) - hardy_max()).abs() < 1e-10);
            prop_assert!(b.get(PLUS, PLUS, 0, 0).abs() < 1e-12);
            prop_assert!(b.get(PLUS, MINUS, 1, 0).abs() < 1e-12);
            prop_assert!(b.get(MINUS, PLUS, 0, 1).abs() < 1e-12);
        }

        #[test]
        fn born_behavior_is_invariant_under_local_unitaries(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (da, db) = (2, 3);
            let g = CMatrix::from_fn(6, 6, |_, _| c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
            let rho = &g * g.adjoint();
            let tr = rho.trace();
            let state = State::new(rho / tr, (da, db)).unwrap();
            let proj = |d: usize, rng: &mut ChaCha8Rng| {
                let v = CVector::from_fn(d, |_, _| c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
                BinaryMeasurement::rank_one(&v).unwrap()
            };
            let alice = [proj(da, &mut rng), proj(da, &mut rng)];
            let bob = [proj(db, &mut rng), proj(db, &mut rng)];
            let model = QuantumModel::new(state.clone(), alice.clone(), bob.clone()).unwrap();

            let u = random_unitary(da, &mut rng);
            let v = random_unitary(db, &mut rng);
            let uv = kron(&u, &v);
            let rotated = State::new(&uv * state.density() * uv.adjoint(), (da, db)).unwrap();
            let conj = |m: &BinaryMeasurement, w: &CMatrix| {
                BinaryMeasurement::new(w * m.effect_plus() * w.adjoint()).unwrap()
            };
            let rotated_model = QuantumModel::new(
                rotated,
                [conj(&alice[0], &u), conj(&alice[1], &u)],
                [conj(&bob[0], &v), conj(&bob[1], &v)],
            ).unwrap();
            let (p, q) = (born_behavior(&model), born_behavior(&rotated_model));
            for (x, y) in p.cells().zip(q.cells()) {
                prop_assert!((x - y).abs() < 1e-9);
            }
            prop_assert!(p.validate().is_ok());
            prop_assert!(crate::behavior::is_no_signaling(&p));
        }
    }
}
