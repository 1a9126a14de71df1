//! Dense complex linear algebra for one and two qubits.
//!
//! Two-qubit objects use the ordered basis `{HH, HV, VH, VV}` with Alice as
//! the first tensor factor, so index `2 * a + b` holds Alice's `a` and Bob's
//! `b` (`H = 0`, `V = 1`). Every constructor and product in this module keeps
//! to that convention.

use std::fmt;
use std::ops::{Add, Mul, Sub};

use num_complex::Complex64;

use crate::error::{QsvError, Result};

pub type C64 = Complex64;

const ZERO: C64 = C64::new(0.0, 0.0);
const ONE: C64 = C64::new(1.0, 0.0);

/// Tolerance on the norm of a state vector.
pub const NORM_TOL: f64 = 1e-12;
/// Tolerance on `max |A - A†|` for Hermitian operators.
pub const HERMITIAN_TOL: f64 = 1e-12;
/// Tolerance on the trace of a density matrix.
pub const TRACE_TOL: f64 = 1e-10;
/// Most negative eigenvalue tolerated in a density matrix.
pub const POSITIVITY_TOL: f64 = 1e-10;
/// Eigenvalues closer than this are treated as one degenerate eigenspace.
pub const DEGENERACY_TOL: f64 = 1e-10;

// ---------------------------------------------------------------------------
// Single qubit
// ---------------------------------------------------------------------------

/// Normalised single-qubit state in the ordered basis `{H, V}`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Qubit([C64; 2]);

impl Qubit {
    pub fn new(h: C64, v: C64) -> Result<Self> {
        let norm = (h.norm_sqr() + v.norm_sqr()).sqrt();
        if (norm - 1.0).abs() > NORM_TOL {
            return Err(QsvError::Domain(format!(
                "single-qubit state has norm {norm}, expected 1"
            )));
        }
        Ok(Qubit([h, v]))
    }

    /// Builds `h|H> + v|V>` and rescales it to unit norm.
    pub fn normalized(h: C64, v: C64) -> Self {
        let norm = (h.norm_sqr() + v.norm_sqr()).sqrt();
        Qubit([h / norm, v / norm])
    }

    pub fn h() -> Self {
        Qubit([ONE, ZERO])
    }

    pub fn v() -> Self {
        Qubit([ZERO, ONE])
    }

    /// `(|H> + |V>)/√2`, the +1 eigenstate of Pauli X.
    pub fn plus() -> Self {
        Qubit::normalized(ONE, ONE)
    }

    /// `(|H> - |V>)/√2`
    pub fn minus() -> Self {
        Qubit::normalized(ONE, -ONE)
    }

    /// `(|H> + i|V>)/√2`, the +1 eigenstate of Pauli Y.
    pub fn r() -> Self {
        Qubit::normalized(ONE, C64::i())
    }

    /// `(|H> - i|V>)/√2`
    pub fn l() -> Self {
        Qubit::normalized(ONE, -C64::i())
    }

    pub fn amplitudes(&self) -> [C64; 2] {
        self.0
    }

    /// `<self|other>`
    pub fn inner(&self, other: &Qubit) -> C64 {
        self.0[0].conj() * other.0[0] + self.0[1].conj() * other.0[1]
    }

    pub fn projector(&self) -> Operator2 {
        let mut m = [[ZERO; 2]; 2];
        for (i, row) in m.iter_mut().enumerate() {
            for (j, e) in row.iter_mut().enumerate() {
                *e = self.0[i] * self.0[j].conj();
            }
        }
        Operator2(m)
    }
}

/// Single-qubit operator, row-major.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Operator2(pub [[C64; 2]; 2]);

impl Operator2 {
    pub fn identity() -> Self {
        Operator2([[ONE, ZERO], [ZERO, ONE]])
    }

    pub fn zero() -> Self {
        Operator2([[ZERO; 2]; 2])
    }

    pub fn pauli_x() -> Self {
        Operator2([[ZERO, ONE], [ONE, ZERO]])
    }

    pub fn pauli_y() -> Self {
        Operator2([[ZERO, -C64::i()], [C64::i(), ZERO]])
    }

    pub fn pauli_z() -> Self {
        Operator2([[ONE, ZERO], [ZERO, -ONE]])
    }

    pub fn adjoint(&self) -> Self {
        let m = &self.0;
        Operator2([[m[0][0].conj(), m[1][0].conj()], [m[0][1].conj(), m[1][1].conj()]])
    }

    pub fn apply(&self, q: &Qubit) -> [C64; 2] {
        let m = &self.0;
        [
            m[0][0] * q.0[0] + m[0][1] * q.0[1],
            m[1][0] * q.0[0] + m[1][1] * q.0[1],
        ]
    }

    pub fn max_abs_diff(&self, other: &Operator2) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..2 {
            for j in 0..2 {
                worst = worst.max((self.0[i][j] - other.0[i][j]).norm());
            }
        }
        worst
    }
}

impl Add for Operator2 {
    type Output = Operator2;
    fn add(self, rhs: Operator2) -> Operator2 {
        let mut out = self;
        for i in 0..2 {
            for j in 0..2 {
                out.0[i][j] += rhs.0[i][j];
            }
        }
        out
    }
}

impl Mul for Operator2 {
    type Output = Operator2;
    fn mul(self, rhs: Operator2) -> Operator2 {
        let mut out = Operator2::zero();
        for i in 0..2 {
            for j in 0..2 {
                out.0[i][j] = self.0[i][0] * rhs.0[0][j] + self.0[i][1] * rhs.0[1][j];
            }
        }
        out
    }
}

// ---------------------------------------------------------------------------
// Two qubits
// ---------------------------------------------------------------------------

/// Dense 4×4 complex matrix, row-major, basis `{HH, HV, VH, VV}`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Matrix4(pub [[C64; 4]; 4]);

impl Matrix4 {
    pub fn zero() -> Self {
        Matrix4([[ZERO; 4]; 4])
    }

    pub fn identity() -> Self {
        Matrix4::diag([1.0; 4])
    }

    pub fn diag(d: [f64; 4]) -> Self {
        let mut m = Matrix4::zero();
        for (i, x) in d.iter().enumerate() {
            m.0[i][i] = C64::new(*x, 0.0);
        }
        m
    }

    /// `|a><b|`
    pub fn outer(a: &[C64; 4], b: &[C64; 4]) -> Self {
        let mut m = Matrix4::zero();
        for i in 0..4 {
            for j in 0..4 {
                m.0[i][j] = a[i] * b[j].conj();
            }
        }
        m
    }

    pub fn scale(&self, s: f64) -> Self {
        let mut out = *self;
        out.0.iter_mut().flatten().for_each(|e| *e *= s);
        out
    }

    pub fn adjoint(&self) -> Self {
        let mut out = Matrix4::zero();
        for i in 0..4 {
            for j in 0..4 {
                out.0[i][j] = self.0[j][i].conj();
            }
        }
        out
    }

    pub fn trace(&self) -> C64 {
        (0..4).map(|i| self.0[i][i]).sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.0.iter().flatten().map(|e| e.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.0.iter().flatten().map(|e| e.norm()).fold(0.0, f64::max)
    }

    pub fn hermitian_deviation(&self) -> f64 {
        (*self - self.adjoint()).max_abs()
    }

    pub fn apply(&self, v: &[C64; 4]) -> [C64; 4] {
        let mut out = [ZERO; 4];
        for (i, o) in out.iter_mut().enumerate() {
            *o = (0..4).map(|j| self.0[i][j] * v[j]).sum();
        }
        out
    }

    /// `<a|M|b>`
    pub fn sandwich(&self, a: &[C64; 4], b: &[C64; 4]) -> C64 {
        let mb = self.apply(b);
        (0..4).map(|i| a[i].conj() * mb[i]).sum()
    }

    /// `tr(self · other)` without forming the product.
    pub fn trace_product(&self, other: &Matrix4) -> C64 {
        let mut acc = ZERO;
        for i in 0..4 {
            for k in 0..4 {
                acc += self.0[i][k] * other.0[k][i];
            }
        }
        acc
    }

    /// Row-major `[re, im]` pairs, the layout used by JSON exports.
    pub fn to_re_im_rows(&self) -> Vec<Vec<[f64; 2]>> {
        self.0
            .iter()
            .map(|row| row.iter().map(|e| [e.re, e.im]).collect())
            .collect()
    }
}

impl Add for Matrix4 {
    type Output = Matrix4;
    fn add(self, rhs: Matrix4) -> Matrix4 {
        let mut out = self;
        for i in 0..4 {
            for j in 0..4 {
                out.0[i][j] += rhs.0[i][j];
            }
        }
        out
    }
}

impl Sub for Matrix4 {
    type Output = Matrix4;
    fn sub(self, rhs: Matrix4) -> Matrix4 {
        let mut out = self;
        for i in 0..4 {
            for j in 0..4 {
                out.0[i][j] -= rhs.0[i][j];
            }
        }
        out
    }
}

impl Mul for Matrix4 {
    type Output = Matrix4;
    fn mul(self, rhs: Matrix4) -> Matrix4 {
        let mut out = Matrix4::zero();
        for i in 0..4 {
            for j in 0..4 {
                out.0[i][j] = (0..4).map(|k| self.0[i][k] * rhs.0[k][j]).sum();
            }
        }
        out
    }
}

/// Normalised two-qubit pure state.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PureState {
    amps: [C64; 4],
    /// Angle in degrees when built from the target family.
    theta_deg: Option<f64>,
}

impl PureState {
    pub fn new(amps: [C64; 4]) -> Result<Self> {
        let norm = amps.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > NORM_TOL {
            return Err(QsvError::Domain(format!(
                "two-qubit state has norm {norm}, expected 1"
            )));
        }
        Ok(PureState { amps, theta_deg: None })
    }

    fn normalized(amps: [C64; 4]) -> Self {
        let norm = amps.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
        PureState { amps: amps.map(|a| a / norm), theta_deg: None }
    }

    /// Computational basis state `|ab>` with `a`, `b` in `{0 = H, 1 = V}`.
    pub fn basis(alice: usize, bob: usize) -> Self {
        let mut amps = [ZERO; 4];
        amps[2 * alice + bob] = ONE;
        PureState { amps, theta_deg: None }
    }

    pub fn amplitudes(&self) -> &[C64; 4] {
        &self.amps
    }

    pub fn theta_deg(&self) -> Option<f64> {
        self.theta_deg
    }

    /// `<self|other>`
    pub fn inner(&self, other: &PureState) -> C64 {
        self.amps.iter().zip(&other.amps).map(|(a, b)| a.conj() * b).sum()
    }

    pub fn projector(&self) -> HermitianOperator {
        HermitianOperator(Matrix4::outer(&self.amps, &self.amps))
    }

    pub fn density(&self) -> DensityMatrix {
        DensityMatrix(Matrix4::outer(&self.amps, &self.amps))
    }
}

fn check_angle(theta_deg: f64) -> Result<f64> {
    if !theta_deg.is_finite() || !(0.0..=90.0).contains(&theta_deg) {
        return Err(QsvError::Domain(format!(
            "theta = {theta_deg}° must lie in [0°, 90°]"
        )));
    }
    Ok(theta_deg.to_radians())
}

/// `|Ψ(θ)> = cosθ|HV> - sinθ|VH>`.
///
/// The family is entangled for `0° < θ < 90°`; the closed endpoints are
/// accepted as product-state limits and anything else is a domain error.
pub fn target_state(theta_deg: f64) -> Result<PureState> {
    let t = check_angle(theta_deg)?;
    let (s, c) = t.sin_cos();
    Ok(PureState {
        amps: [ZERO, C64::new(c, 0.0), C64::new(-s, 0.0), ZERO],
        theta_deg: Some(theta_deg),
    })
}

/// `|Ψ⊥(θ)> = sinθ|HV> + cosθ|VH>`, the unit vector orthogonal to
/// `|Ψ(θ)>`, `|HH>` and `|VV>`.
pub fn orthogonal_state(theta_deg: f64) -> Result<PureState> {
    let t = check_angle(theta_deg)?;
    let (s, c) = t.sin_cos();
    Ok(PureState {
        amps: [ZERO, C64::new(s, 0.0), C64::new(c, 0.0), ZERO],
        theta_deg: Some(theta_deg),
    })
}

/// Kronecker product with the left operand on Alice's side.
pub trait Tensor<Rhs = Self> {
    type Output;
    fn tensor(&self, rhs: &Rhs) -> Self::Output;
}

impl Tensor for Qubit {
    type Output = PureState;
    fn tensor(&self, rhs: &Qubit) -> PureState {
        let mut amps = [ZERO; 4];
        for a in 0..2 {
            for b in 0..2 {
                amps[2 * a + b] = self.0[a] * rhs.0[b];
            }
        }
        PureState { amps, theta_deg: None }
    }
}

impl Tensor for Operator2 {
    type Output = Matrix4;
    fn tensor(&self, rhs: &Operator2) -> Matrix4 {
        let mut m = Matrix4::zero();
        for a in 0..2 {
            for b in 0..2 {
                for c in 0..2 {
                    for d in 0..2 {
                        m.0[2 * a + b][2 * c + d] = self.0[a][c] * rhs.0[b][d];
                    }
                }
            }
        }
        m
    }
}

pub fn tensor<T: Tensor>(alice: &T, bob: &T) -> T::Output {
    alice.tensor(bob)
}

// ---------------------------------------------------------------------------
// Hermitian operators and density matrices
// ---------------------------------------------------------------------------

/// 4×4 Hermitian operator.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HermitianOperator(Matrix4);

impl HermitianOperator {
    pub fn new(m: Matrix4) -> Result<Self> {
        let deviation = m.hermitian_deviation();
        if deviation > HERMITIAN_TOL {
            return Err(QsvError::NotHermitian { deviation });
        }
        Ok(HermitianOperator(m))
    }

    pub fn identity() -> Self {
        HermitianOperator(Matrix4::identity())
    }

    pub fn matrix(&self) -> &Matrix4 {
        &self.0
    }

    pub fn eigh(&self) -> Eigen {
        eigh_unchecked(&self.0)
    }

    /// Real linear combination `Σ wᵢ Aᵢ`, Hermitian by construction.
    pub fn combine<'a, I>(terms: I) -> Self
    where
        I: IntoIterator<Item = (f64, &'a HermitianOperator)>,
    {
        let m = terms
            .into_iter()
            .fold(Matrix4::zero(), |acc, (w, op)| acc + op.0.scale(w));
        HermitianOperator(m)
    }

    pub fn frobenius_distance(&self, other: &HermitianOperator) -> f64 {
        (self.0 - other.0).frobenius_norm()
    }
}

/// Two-qubit density matrix.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DensityMatrix(Matrix4);

impl DensityMatrix {
    /// Validates Hermiticity, unit trace and positivity.
    pub fn new(m: Matrix4) -> Result<Self> {
        let deviation = m.hermitian_deviation();
        if deviation > HERMITIAN_TOL {
            return Err(QsvError::InvalidDensity(format!(
                "not Hermitian (max |A - A†| = {deviation:e})"
            )));
        }
        let tr = m.trace().re;
        if (tr - 1.0).abs() > TRACE_TOL {
            return Err(QsvError::InvalidDensity(format!("trace is {tr}, expected 1")));
        }
        let min = eigh_unchecked(&m).values[3];
        if min < -POSITIVITY_TOL {
            return Err(QsvError::InvalidDensity(format!(
                "negative eigenvalue {min}"
            )));
        }
        Ok(DensityMatrix(m))
    }

    pub fn maximally_mixed() -> Self {
        DensityMatrix(Matrix4::identity().scale(0.25))
    }

    pub fn matrix(&self) -> &Matrix4 {
        &self.0
    }

    /// `v·self + (1 - v)·other`; stays a density matrix for `v ∈ [0, 1]`.
    pub fn mix(&self, v: f64, other: &DensityMatrix) -> DensityMatrix {
        DensityMatrix(self.0.scale(v) + other.0.scale(1.0 - v))
    }

    /// `(P σ P) / tr(P σ)` for a projector `P`, with the branch probability.
    /// Returns `None` when the branch has zero probability.
    pub fn condition(&self, projector: &Matrix4) -> Option<(DensityMatrix, f64)> {
        let prob = projector.trace_product(&self.0).re;
        if prob <= 0.0 {
            return None;
        }
        let m = (*projector * self.0 * *projector).scale(1.0 / prob);
        Some((DensityMatrix(m), prob))
    }
}

impl From<PureState> for DensityMatrix {
    fn from(p: PureState) -> Self {
        p.density()
    }
}

/// `tr(op · σ)`; the imaginary part is discarded.
pub fn expectation(op: &HermitianOperator, sigma: &DensityMatrix) -> f64 {
    op.0.trace_product(&sigma.0).re
}

/// `<ψ|σ|ψ>`
pub fn fidelity(sigma: &DensityMatrix, psi: &PureState) -> f64 {
    expectation(&psi.projector(), sigma)
}

// ---------------------------------------------------------------------------
// Eigendecomposition
// ---------------------------------------------------------------------------

/// Eigenpairs in descending eigenvalue order.
#[derive(Clone, Debug)]
pub struct Eigen {
    pub values: [f64; 4],
    pub vectors: [PureState; 4],
}

impl Eigen {
    /// `Σ λᵢ |vᵢ><vᵢ|`
    pub fn reconstruct(&self) -> Matrix4 {
        self.values
            .iter()
            .zip(&self.vectors)
            .fold(Matrix4::zero(), |acc, (l, v)| {
                acc + Matrix4::outer(&v.amps, &v.amps).scale(*l)
            })
    }
}

impl fmt::Display for Eigen {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let vals: Vec<String> = self.values.iter().map(|v| format!("{v:.9}")).collect();
        write!(f, "[{}]", vals.join(", "))
    }
}

/// Hermitian eigendecomposition of a 4×4 matrix.
pub fn eigh(m: &Matrix4) -> Result<Eigen> {
    let deviation = m.hermitian_deviation();
    if deviation > HERMITIAN_TOL {
        return Err(QsvError::NotHermitian { deviation });
    }
    Ok(eigh_unchecked(m))
}

const MAX_SWEEPS: usize = 64;

/// Cyclic complex Jacobi. Each rotation first removes the phase of the pivot
/// `a_pq` and then applies a real Givens rotation that zeroes it.
fn eigh_unchecked(m: &Matrix4) -> Eigen {
    let mut a = (*m + m.adjoint()).scale(0.5);
    let mut v = Matrix4::identity();
    let scale = a.frobenius_norm().max(f64::MIN_POSITIVE);

    for _ in 0..MAX_SWEEPS {
        let off: f64 = (0..4)
            .flat_map(|p| (p + 1..4).map(move |q| (p, q)))
            .map(|(p, q)| a.0[p][q].norm_sqr())
            .sum();
        if off.sqrt() <= 1e-17 * scale {
            break;
        }
        for p in 0..3 {
            for q in p + 1..4 {
                let apq = a.0[p][q];
                let b = apq.norm();
                if b <= 1e-300 {
                    continue;
                }
                let phase = apq / b;
                let t = 0.5 * (2.0 * b).atan2(a.0[q][q].re - a.0[p][p].re);
                let (s, c) = t.sin_cos();
                let mut g = Matrix4::identity();
                g.0[p][p] = C64::new(c, 0.0);
                g.0[p][q] = C64::new(s, 0.0);
                g.0[q][p] = phase.conj() * -s;
                g.0[q][q] = phase.conj() * c;
                a = g.adjoint() * a * g;
                v = v * g;
            }
        }
    }

    let mut order: Vec<usize> = (0..4).collect();
    order.sort_by(|&i, &j| a.0[j][j].re.total_cmp(&a.0[i][i].re));
    let values: [f64; 4] = std::array::from_fn(|k| a.0[order[k]][order[k]].re);
    let mut vecs: [[C64; 4]; 4] = std::array::from_fn(|k| std::array::from_fn(|i| v.0[i][order[k]]));

    // Re-orthonormalise inside each degenerate group.
    let mut start = 0;
    while start < 4 {
        let mut end = start + 1;
        while end < 4 && (values[end - 1] - values[end]).abs() <= DEGENERACY_TOL {
            end += 1;
        }
        for k in start..end {
            for j in start..k {
                let proj: C64 = (0..4).map(|i| vecs[j][i].conj() * vecs[k][i]).sum();
                for i in 0..4 {
                    let sub = proj * vecs[j][i];
                    vecs[k][i] -= sub;
                }
            }
            let norm = vecs[k].iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
            vecs[k].iter_mut().for_each(|x| *x /= norm);
        }
        start = end;
    }

    let vectors = vecs.map(|mut amps| {
        // Fix the global phase: largest component real and positive.
        let pivot = amps
            .iter()
            .copied()
            .max_by(|x, y| x.norm().total_cmp(&y.norm()))
            .unwrap_or(ONE);
        let phase = pivot.conj() / pivot.norm();
        amps.iter_mut().for_each(|x| *x *= phase);
        PureState::normalized(amps)
    });

    Eigen { values, vectors }
}
