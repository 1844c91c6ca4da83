//! Joint block decomposition of two `+/-1` observables into invariant
//! subspaces of dimension at most two, and the blockwise split of a
//! behavior that it induces.
//!
//! The +1 eigenspace of `A0` is rotated so that the compression of `A1` to
//! it is diagonal with entries `cos(phi)`. Each such vector `v` pairs with
//! the normalized component of `A1 v` in the -1 eigenspace of `A0` when
//! `sin(phi)` exceeds [`PAIRING_TOL`]; what remains splits into common
//! eigenvectors.

use std::cmp::Ordering;

use num_complex::Complex64;

use crate::behavior::Behavior;
use crate::error::{Error, Result};
use crate::quantum::{
    born_behavior, c, eig_hermitian, hermitian_deviation, identity, kron, max_abs, BinaryMeasurement, CMatrix,
    CVector, QuantumModel, State,
};

/// Below this `sin(phi)` a direction is treated as a common eigenvector.
pub const PAIRING_TOL: f64 = 1e-7;

const TOL: f64 = 1e-9;

/// Hermitian operator with spectrum in `{+1, -1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Observable {
    matrix: CMatrix,
}

impl Observable {
    pub fn new(matrix: CMatrix) -> Result<Self> {
        let dev = hermitian_deviation(&matrix);
        if dev > TOL {
            return Err(Error::NotHermitian(dev));
        }
        let d = matrix.nrows();
        let inv = max_abs(&(&matrix * &matrix - identity(d)));
        if inv > TOL {
            return Err(Error::NotInvolution(inv));
        }
        Ok(Self { matrix })
    }

    /// `Pi_+ - Pi_-` of a projective measurement.
    pub fn from_measurement(m: &BinaryMeasurement) -> Result<Self> {
        Self::new(m.observable())
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.matrix
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    /// `d x k` matrix with orthonormal columns, `k` in {1, 2}.
    pub basis: CMatrix,
    pub a0: CMatrix,
    pub a1: CMatrix,
    /// Angle `phi` with `A0 A1 = e^{+-i phi}` on the block; 0 or pi for 1-dim blocks.
    pub phase: f64,
}

impl Block {
    pub fn dim(&self) -> usize {
        self.basis.ncols()
    }

    pub fn projector(&self) -> CMatrix {
        &self.basis * self.basis.adjoint()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockDecomposition {
    pub dim: usize,
    pub blocks: Vec<Block>,
}

impl BlockDecomposition {
    pub fn max_block(&self) -> usize {
        self.blocks.iter().map(Block::dim).max().unwrap_or(0)
    }

    /// `(sum_i V_i A0^i V_i^dagger, sum_i V_i A1^i V_i^dagger)`.
    pub fn reconstruct(&self) -> (CMatrix, CMatrix) {
        let mut a0 = CMatrix::zeros(self.dim, self.dim);
        let mut a1 = CMatrix::zeros(self.dim, self.dim);
        for b in &self.blocks {
            a0 += &b.basis * &b.a0 * b.basis.adjoint();
            a1 += &b.basis * &b.a1 * b.basis.adjoint();
        }
        (a0, a1)
    }

    /// Max-abs error of reconstructing the given pair.
    pub fn reconstruction_error(&self, a0: &Observable, a1: &Observable) -> f64 {
        let (r0, r1) = self.reconstruct();
        max_abs(&(r0 - a0.matrix())).max(max_abs(&(r1 - a1.matrix())))
    }

    /// Max-abs deviation of `sum_i V_i V_i^dagger` from the identity.
    pub fn completeness_error(&self) -> f64 {
        let mut sum = CMatrix::zeros(self.dim, self.dim);
        for b in &self.blocks {
            sum += b.projector();
        }
        max_abs(&(sum - identity(self.dim)))
    }
}

fn columns_where(m: &CMatrix, keep: impl Fn(usize) -> bool) -> CMatrix {
    let cols: Vec<_> = (0..m.ncols()).filter(|&k| keep(k)).map(|k| m.column(k).into_owned()).collect();
    if cols.is_empty() {
        CMatrix::zeros(m.nrows(), 0)
    } else {
        CMatrix::from_columns(&cols)
    }
}

/// Orthonormal basis of the range of an orthogonal projector.
fn range_basis(p: &CMatrix) -> Result<CMatrix> {
    let (vals, vecs) = eig_hermitian(p)?;
    Ok(columns_where(&vecs, |k| vals[k] > 0.5))
}

fn compress(basis: &CMatrix, op: &CMatrix) -> CMatrix {
    basis.adjoint() * op * basis
}

fn lexicographic(u: &CMatrix, v: &CMatrix) -> Ordering {
    u.iter()
        .zip(v.iter())
        .map(|(x, y)| x.re.total_cmp(&y.re).then(x.im.total_cmp(&y.im)))
        .find(|o| o.is_ne())
        .unwrap_or(Ordering::Equal)
}

/// Fix the global phase of a vector so its largest entry is real positive.
fn normalize_phase(v: &mut CVector) {
    if let Some(big) = v.iter().copied().max_by(|x, y| x.norm().total_cmp(&y.norm())) {
        if big.norm() > 0.0 {
            let phase = big.conj() / big.norm();
            *v *= phase;
        }
    }
}

pub fn decompose(a0: &Observable, a1: &Observable) -> Result<BlockDecomposition> {
    let d = a0.dim();
    if a1.dim() != d {
        return Err(Error::DimensionMismatch(format!("observables of dims {d} and {}", a1.dim())));
    }
    let (m0, m1) = (a0.matrix(), a1.matrix());
    let (vals, vecs) = eig_hermitian(m0)?;
    let plus = columns_where(&vecs, |k| vals[k] > 0.0);
    let minus = columns_where(&vecs, |k| vals[k] <= 0.0);

    // Rotate the +1 eigenspace so that A1 compressed to it is diagonal.
    let mut blocks = Vec::with_capacity(d);
    let mut paired_minus: Vec<CVector> = Vec::new();
    if plus.ncols() > 0 {
        let (_, rot) = eig_hermitian(&compress(&plus, m1))?;
        let plus = &plus * rot;
        let minus_proj = &minus * minus.adjoint();
        for k in 0..plus.ncols() {
            let mut v: CVector = plus.column(k).into_owned();
            normalize_phase(&mut v);
            let r = &minus_proj * (m1 * &v);
            let sin = r.norm();
            let basis = if sin > PAIRING_TOL {
                let w = r / c(sin, 0.0);
                paired_minus.push(w.clone());
                CMatrix::from_columns(&[v, w])
            } else {
                CMatrix::from_columns(&[v])
            };
            blocks.push(make_block(basis, m0, m1));
        }
    }

    // Whatever is left of the -1 eigenspace carries common eigenvectors.
    if minus.ncols() > paired_minus.len() {
        let mut rest = &minus * minus.adjoint();
        for w in &paired_minus {
            rest -= w * w.adjoint();
        }
        let rest = range_basis(&((&rest + rest.adjoint()) * c(0.5, 0.0)))?;
        let (_, rot) = eig_hermitian(&compress(&rest, m1))?;
        let rest = &rest * rot;
        for k in 0..rest.ncols() {
            let mut v: CVector = rest.column(k).into_owned();
            normalize_phase(&mut v);
            blocks.push(make_block(CMatrix::from_columns(&[v]), m0, m1));
        }
    }

    blocks.sort_by(|x, y| y.phase.total_cmp(&x.phase).then_with(|| lexicographic(&x.basis, &y.basis)));
    Ok(BlockDecomposition { dim: d, blocks })
}

fn make_block(basis: CMatrix, m0: &CMatrix, m1: &CMatrix) -> Block {
    let a0 = compress(&basis, m0);
    let a1 = compress(&basis, m1);
    let phase = if basis.ncols() == 2 {
        a1[(0, 0)].re.clamp(-1.0, 1.0).acos()
    } else if (a0[(0, 0)].re * a1[(0, 0)].re) > 0.0 {
        0.0
    } else {
        std::f64::consts::PI
    };
    Block { basis, a0, a1, phase }
}

/// Weights `q_ij` and block behaviors `p_ij` of a model whose observables
/// are split by `da` (Alice) and `db` (Bob).
#[derive(Debug, Clone)]
pub struct BlockwiseBehavior {
    pub weights: Vec<Vec<f64>>,
    /// `None` where `q_ij <= 1e-12`.
    pub behaviors: Vec<Vec<Option<Behavior>>>,
}

impl BlockwiseBehavior {
    /// `sum_ij q_ij p_ij`.
    pub fn recombined(&self) -> Behavior {
        let parts: Vec<(f64, Behavior)> = self
            .weights
            .iter()
            .flatten()
            .zip(self.behaviors.iter().flatten())
            .filter_map(|(q, p)| p.map(|p| (*q, p)))
            .collect();
        Behavior::mixture(&parts)
    }

    pub fn total_weight(&self) -> f64 {
        self.weights.iter().flatten().sum()
    }
}

fn check_matches(m: &[BinaryMeasurement; 2], dec: &BlockDecomposition, who: &str) -> Result<()> {
    if dec.dim != m[0].dim() {
        return Err(Error::DimensionMismatch(format!(
            "{who}'s decomposition has dim {} but measurements have dim {}",
            dec.dim,
            m[0].dim()
        )));
    }
    let (r0, r1) = dec.reconstruct();
    let err = max_abs(&(r0 - m[0].observable())).max(max_abs(&(r1 - m[1].observable())));
    if err > TOL {
        return Err(Error::InvalidArgument(format!(
            "{who}'s decomposition does not reproduce the measured observables (error {err:.3e})"
        )));
    }
    Ok(())
}

pub fn blockwise_behavior(
    model: &QuantumModel,
    da: &BlockDecomposition,
    db: &BlockDecomposition,
) -> Result<BlockwiseBehavior> {
    check_matches(&model.alice, da, "Alice")?;
    check_matches(&model.bob, db, "Bob")?;
    let rho = model.state.density();
    let mut weights = Vec::with_capacity(da.blocks.len());
    let mut behaviors = Vec::with_capacity(da.blocks.len());
    for bi in &da.blocks {
        let mut qrow = Vec::with_capacity(db.blocks.len());
        let mut prow = Vec::with_capacity(db.blocks.len());
        for bj in &db.blocks {
            let v = kron(&bi.basis, &bj.basis);
            let compressed = compress(&v, rho);
            let q = compressed.trace().re;
            qrow.push(q);
            if q <= 1e-12 {
                prow.push(None);
                continue;
            }
            let state = State::new(compressed / Complex64::new(q, 0.0), (bi.dim(), bj.dim()))?;
            let local = |meas: &BinaryMeasurement, basis: &CMatrix| {
                BinaryMeasurement::new(compress(basis, meas.effect_plus()))
            };
            let alice = [local(&model.alice[0], &bi.basis)?, local(&model.alice[1], &bi.basis)?];
            let bob = [local(&model.bob[0], &bj.basis)?, local(&model.bob[1], &bj.basis)?];
            prow.push(Some(born_behavior(&QuantumModel::new(state, alice, bob)?)));
        }
        weights.push(qrow);
        behaviors.push(prow);
    }
    Ok(BlockwiseBehavior { weights, behaviors })
}

/// Decomposition of each party's observables in `model`.
pub fn decompose_model(model: &QuantumModel) -> Result<(BlockDecomposition, BlockDecomposition)> {
    let obs = |m: &[BinaryMeasurement; 2]| -> Result<BlockDecomposition> {
        decompose(&Observable::from_measurement(&m[0])?, &Observable::from_measurement(&m[1])?)
    };
    Ok((obs(&model.alice)?, obs(&model.bob)?))
}

/// Random pair of involutions `U (direct sum of blocks) U^dagger`: `pairs`
/// generic two-dimensional blocks plus `singles` one-dimensional blocks
/// with random signs. Used by the examples, the CLI and the tests.
pub fn random_block_pair(pairs: usize, singles: usize, rng: &mut impl rand::Rng) -> (Observable, Observable) {
    let d = 2 * pairs + singles;
    let mut a0 = CMatrix::zeros(d, d);
    let mut a1 = CMatrix::zeros(d, d);
    for k in 0..pairs {
        let phi: f64 = rng.random_range(0.05..std::f64::consts::PI - 0.05);
        let chi: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        let o = 2 * k;
        a0[(o, o)] = c(1.0, 0.0);
        a0[(o + 1, o + 1)] = c(-1.0, 0.0);
        a1[(o, o)] = c(phi.cos(), 0.0);
        a1[(o + 1, o + 1)] = c(-phi.cos(), 0.0);
        a1[(o, o + 1)] = Complex64::from_polar(phi.sin(), chi);
        a1[(o + 1, o)] = Complex64::from_polar(phi.sin(), -chi);
    }
    for k in 2 * pairs..d {
        let s0 = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let s1 = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        a0[(k, k)] = c(s0, 0.0);
        a1[(k, k)] = c(s1, 0.0);
    }
    let u = random_unitary(d, rng);
    let a0 = &u * a0 * u.adjoint();
    let a1 = &u * a1 * u.adjoint();
    let herm = |m: CMatrix| (&m + m.adjoint()) * c(0.5, 0.0);
    (
        Observable::new(herm(a0)).expect("conjugated involution"),
        Observable::new(herm(a1)).expect("conjugated involution"),
    )
}

/// Haar-like random unitary from the eigenvectors of a random Hermitian matrix.
pub fn random_unitary(d: usize, rng: &mut impl rand::Rng) -> CMatrix {
    let g = CMatrix::from_fn(d, d, |_, _| c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
    let (_, v) = eig_hermitian(&((&g + g.adjoint()) * c(0.5, 0.0))).expect("Hermitian by construction");
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::behavior::hardy_report;
    use crate::quantum::{hardy_max, make_hardy_optimal};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn diag(v: &[f64]) -> CMatrix {
        CMatrix::from_diagonal(&CVector::from_vec(v.iter().map(|&x| c(x, 0.0)).collect()))
    }

    #[test]
    fn commuting_pair_gives_one_dimensional_blocks() {
        let z = Observable::new(diag(&[1.0, -1.0])).unwrap();
        let dec = decompose(&z, &z).unwrap();
        assert_eq!(dec.blocks.len(), 2);
        assert!(dec.blocks.iter().all(|b| b.dim() == 1 && b.phase == 0.0));
        assert!(dec.reconstruction_error(&z, &z) < 1e-12);
    }

    #[test]
    fn anticommuting_qubit_pair_is_one_block() {
        let z = Observable::new(diag(&[1.0, -1.0])).unwrap();
        let x = Observable::new(CMatrix::from_row_slice(2, 2, &[c(0.0, 0.0), c(1.0, 0.0), c(1.0, 0.0), c(0.0, 0.0)]))
            .unwrap();
        let dec = decompose(&z, &x).unwrap();
        assert_eq!(dec.blocks.len(), 1);
        assert_eq!(dec.blocks[0].dim(), 2);
        assert!((dec.blocks[0].phase - std::f64::consts::FRAC_PI_2).abs() < 1e-12);
        assert!(dec.reconstruction_error(&z, &x) < 1e-12);
    }

    #[test]
    fn rejects_non_involutions() {
        assert!(matches!(Observable::new(diag(&[1.0, 0.5])), Err(Error::NotInvolution(_))));
        let z2 = Observable::new(diag(&[1.0, -1.0])).unwrap();
        let z3 = Observable::new(diag(&[1.0, -1.0, 1.0])).unwrap();
        assert!(decompose(&z2, &z3).is_err());
    }

    #[test]
    fn recovers_four_random_blocks_in_dimension_eight() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let (a0, a1) = random_block_pair(4, 0, &mut rng);
            let dec = decompose(&a0, &a1).unwrap();
            assert_eq!(dec.blocks.len(), 4);
            assert_eq!(dec.max_block(), 2);
            assert!(dec.reconstruction_error(&a0, &a1) <= 1e-9);
            assert!(dec.completeness_error() <= 1e-9);
        }
    }

    #[test]
    fn round_trip_over_seeds_and_dimensions() {
        for d in [2usize, 4, 6, 8] {
            for seed in 0..100u64 {
                let mut rng = ChaCha8Rng::seed_from_u64(seed * 31 + d as u64);
                let pairs = rng.random_range(0..=d / 2);
                let (a0, a1) = random_block_pair(pairs, d - 2 * pairs, &mut rng);
                let dec = decompose(&a0, &a1).unwrap();
                assert!(dec.max_block() <= 2);
                assert_eq!(dec.blocks.iter().map(Block::dim).sum::<usize>(), d);
                assert!(dec.reconstruction_error(&a0, &a1) <= 1e-9, "d={d} seed={seed}");
                assert!(dec.completeness_error() <= 1e-9);
                for b in &dec.blocks {
                    let k = b.dim();
                    assert!(max_abs(&(&b.a0 * &b.a0 - identity(k))) <= 1e-9);
                    assert!(max_abs(&(&b.a1 * &b.a1 - identity(k))) <= 1e-9);
                }
            }
        }
    }

    #[test]
    fn output_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (a0, a1) = random_block_pair(2, 2, &mut rng);
        assert_eq!(decompose(&a0, &a1).unwrap(), decompose(&a0, &a1).unwrap());
    }

    #[test]
    fn single_block_hardy_model() {
        let model = make_hardy_optimal(0.0).model;
        let (da, db) = decompose_model(&model).unwrap();
        assert_eq!((da.blocks.len(), db.blocks.len()), (1, 1));
        let split = blockwise_behavior(&model, &da, &db).unwrap();
        assert!((split.weights[0][0] - 1.0).abs() < 1e-12);
        let global = born_behavior(&model);
        for (u, v) in split.behaviors[0][0].unwrap().cells().zip(global.cells()) {
            assert!((u - v).abs() < 1e-12);
        }
    }

    /// Two copies of the optimal qubit model on each side, weights r x s.
    fn doubled_hardy(r: [f64; 2], s: [f64; 2]) -> QuantumModel {
        let h = make_hardy_optimal(0.0);
        let phi = h.state_vector();
        let mut psi = CVector::zeros(16);
        for i in 0..2 {
            for j in 0..2 {
                let w = (r[i] * s[j]).sqrt();
                for (k, amp) in phi.iter().enumerate() {
                    let (la, lb) = (2 * i + k / 2, 2 * j + k % 2);
                    psi[4 * la + lb] += amp * c(w, 0.0);
                }
            }
        }
        let lift = |m: &BinaryMeasurement| {
            let mut e = CMatrix::zeros(4, 4);
            e.view_mut((0, 0), (2, 2)).copy_from(m.effect_plus());
            e.view_mut((2, 2), (2, 2)).copy_from(m.effect_plus());
            BinaryMeasurement::projector(e).unwrap()
        };
        let alice = [lift(&h.model.alice[0]), lift(&h.model.alice[1])];
        let bob = [lift(&h.model.bob[0]), lift(&h.model.bob[1])];
        QuantumModel::new(State::pure(&psi, (4, 4)).unwrap(), alice, bob).unwrap()
    }

    #[test]
    fn direct_sum_of_hardy_copies() {
        let model = doubled_hardy([0.3, 0.7], [0.3, 0.7]);
        let (da, db) = decompose_model(&model).unwrap();
        assert_eq!(da.max_block(), 2);
        let split = blockwise_behavior(&model, &da, &db).unwrap();
        assert!((split.total_weight() - 1.0).abs() < 1e-9);
        for row in &split.behaviors {
            for p in row.iter().flatten() {
                assert!((hardy_report(p).hardy - 0.0901699437).abs() < 1e-10);
            }
        }
        let global = born_behavior(&model);
        for (u, v) in split.recombined().cells().zip(global.cells()) {
            assert!((u - v).abs() < 1e-9);
        }
    }

    #[test]
    fn state_on_one_block_pair() {
        let model = doubled_hardy([1.0, 0.0], [0.0, 1.0]);
        let (da, db) = decompose_model(&model).unwrap();
        let split = blockwise_behavior(&model, &da, &db).unwrap();
        let nonzero = split.weights.iter().flatten().filter(|&&q| q > 1e-12).count();
        assert_eq!(nonzero, 1);
        assert!(split.weights.iter().flatten().all(|&q| q < 1e-12 || (q - 1.0).abs() < 1e-9));
    }

    #[test]
    fn rejects_mismatched_decomposition() {
        let model = make_hardy_optimal(0.0).model;
        let z = Observable::new(diag(&[1.0, -1.0])).unwrap();
        let wrong = decompose(&z, &z).unwrap();
        let (_, db) = decompose_model(&model).unwrap();
        assert!(blockwise_behavior(&model, &wrong, &db).is_err());
    }

    #[test]
    fn convexity_on_random_models() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..30 {
            let (a0, a1) = random_block_pair(2, 1, &mut rng);
            let (b0, b1) = random_block_pair(1, 2, &mut rng);
            let g = CMatrix::from_fn(20, 20, |_, _| c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
            let rho = &g * g.adjoint();
            let tr = rho.trace();
            let state = State::new(rho / tr, (5, 4)).unwrap();
            let meas = |o: &Observable| {
                let d = o.dim();
                BinaryMeasurement::projector((o.matrix() + identity(d)) * c(0.5, 0.0)).unwrap()
            };
            let model = QuantumModel::new(state, [meas(&a0), meas(&a1)], [meas(&b0), meas(&b1)]).unwrap();
            let (da, db) = decompose_model(&model).unwrap();
            let split = blockwise_behavior(&model, &da, &db).unwrap();
            assert!(split.weights.iter().flatten().all(|&q| q >= -1e-12));
            assert!((split.total_weight() - 1.0).abs() < 1e-9);
            for (u, v) in split.recombined().cells().zip(born_behavior(&model).cells()) {
                assert!((u - v).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn hardy_is_a_convex_sum_bounded_by_the_qubit_maximum() {
        let model = doubled_hardy([0.45, 0.55], [0.8, 0.2]);
        let (da, db) = decompose_model(&model).unwrap();
        let split = blockwise_behavior(&model, &da, &db).unwrap();
        let global = hardy_report(&born_behavior(&model)).hardy;
        let mut sum = 0.0;
        let mut best = f64::NEG_INFINITY;
        for (q, p) in split.weights.iter().flatten().zip(split.behaviors.iter().flatten()) {
            if let Some(p) = p {
                let h = hardy_report(p).hardy;
                sum += q * h;
                best = best.max(h);
            }
        }
        assert!((global - sum).abs() < 1e-9);
        assert!(global <= best + 1e-12 && best <= hardy_max() + 1e-9);
        // sanity: the lifted projectors are rank two
        let rank = |m: &BinaryMeasurement| m.effect_plus().trace().re.round() as usize;
        assert_eq!(rank(&model.alice[1]), 2);
    }
}
