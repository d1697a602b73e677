//! Exact two-photon polarization algebra.
//!
//! States live in the four-dimensional product space with basis order
//! `HH, HV, VH, VV`; photon 1 is the left tensor factor, so the index of a
//! basis state is `2 * pol(photon1) + pol(photon2)` with `H = 0`, `V = 1`.
//!
//! Rotations are real rotations of the H/V frame: a positive angle turns H
//! toward V. Measuring "at 45 degrees" rotates the state by `-pi/4` on both
//! photons and then projects onto H/V.

use nalgebra::{Matrix2, Matrix4, Vector4};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type Amplitudes = Vector4<Complex64>;
pub type DensityMatrix = Matrix4<Complex64>;

/// Tolerance for the norm/trace/hermiticity invariants.
pub const STATE_TOL: f64 = 1e-12;

/// Polarization of a single photon in the H/V basis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Pol {
    H,
    V,
}

impl Pol {
    pub fn index(self) -> usize {
        match self {
            Pol::H => 0,
            Pol::V => 1,
        }
    }
}

/// Basis states in canonical order.
pub const BASIS: [(Pol, Pol); 4] = [(Pol::H, Pol::H), (Pol::H, Pol::V), (Pol::V, Pol::H), (Pol::V, Pol::V)];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BellKind {
    PsiPlus,
    PsiMinus,
    PhiPlus,
    PhiMinus,
}

/// Which photon(s) an operation acts on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Target {
    First,
    Second,
    Both,
}

impl Target {
    fn hits(self, photon: usize) -> bool {
        matches!(
            (self, photon),
            (Target::Both, _) | (Target::First, 0) | (Target::Second, 1)
        )
    }
}

/// A normalized pure two-photon polarization state.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoPhotonState {
    amplitudes: Amplitudes,
}

impl TwoPhotonState {
    /// Builds a state from raw amplitudes, normalizing them.
    pub fn from_amplitudes(amplitudes: [Complex64; 4]) -> Result<Self> {
        let v = Amplitudes::from_column_slice(&amplitudes);
        let norm = v.norm();
        if !norm.is_finite() || norm == 0.0 {
            return Err(Error::InvalidState(format!("amplitude vector has norm {norm}")));
        }
        Ok(Self {
            amplitudes: v.unscale(norm),
        })
    }

    pub fn amplitudes(&self) -> &Amplitudes {
        &self.amplitudes
    }

    pub fn amplitude(&self, p1: Pol, p2: Pol) -> Complex64 {
        self.amplitudes[2 * p1.index() + p2.index()]
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amplitudes.norm_squared()
    }

    /// `|<self|other>|^2`.
    pub fn fidelity(&self, other: &TwoPhotonState) -> f64 {
        self.amplitudes.dotc(&other.amplitudes).norm_sqr()
    }

    pub fn to_density(&self) -> DensityState {
        DensityState {
            matrix: self.amplitudes * self.amplitudes.adjoint(),
        }
    }

    pub(crate) fn from_normalized(amplitudes: Amplitudes) -> Self {
        Self { amplitudes }
    }
}

pub fn bell_state(kind: BellKind) -> TwoPhotonState {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let c = |re: f64| Complex64::new(re, 0.0);
    let amps = match kind {
        BellKind::PsiPlus => [c(0.0), c(s), c(s), c(0.0)],
        BellKind::PsiMinus => [c(0.0), c(s), c(-s), c(0.0)],
        BellKind::PhiPlus => [c(s), c(0.0), c(0.0), c(s)],
        BellKind::PhiMinus => [c(s), c(0.0), c(0.0), c(-s)],
    };
    TwoPhotonState::from_normalized(Amplitudes::from_column_slice(&amps))
}

/// `(|HH> + e^{i theta}|VV>)/sqrt(2)`.
pub fn phi_with_phase(theta: f64) -> TwoPhotonState {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    TwoPhotonState::from_normalized(Amplitudes::new(
        Complex64::new(s, 0.0),
        Complex64::new(0.0, 0.0),
        Complex64::new(0.0, 0.0),
        Complex64::from_polar(s, theta),
    ))
}

/// Multiplies each basis amplitude by `e^{i phase}` once per targeted photon
/// that is V in that basis state.
pub fn apply_phase_on_v(state: &TwoPhotonState, target: Target, phase: f64) -> TwoPhotonState {
    let mut out = state.amplitudes;
    for (i, &(p1, p2)) in BASIS.iter().enumerate() {
        let n = [p1, p2]
            .iter()
            .enumerate()
            .filter(|&(photon, &p)| p == Pol::V && target.hits(photon))
            .count();
        if n > 0 {
            out[i] *= Complex64::from_polar(1.0, phase * n as f64);
        }
    }
    TwoPhotonState::from_normalized(out)
}

/// Single-photon rotation: H -> cos H + sin V, V -> -sin H + cos V.
pub fn rotation_matrix(angle: f64) -> Matrix2<Complex64> {
    let (s, c) = angle.sin_cos();
    Matrix2::new(
        Complex64::new(c, 0.0),
        Complex64::new(-s, 0.0),
        Complex64::new(s, 0.0),
        Complex64::new(c, 0.0),
    )
}

/// Two-photon operator `first (x) second`.
pub fn kron(first: &Matrix2<Complex64>, second: &Matrix2<Complex64>) -> Matrix4<Complex64> {
    Matrix4::from_fn(|r, c| first[(r / 2, c / 2)] * second[(r % 2, c % 2)])
}

pub fn rotation_operator(target: Target, angle: f64) -> Matrix4<Complex64> {
    let id = Matrix2::identity();
    let r = rotation_matrix(angle);
    match target {
        Target::First => kron(&r, &id),
        Target::Second => kron(&id, &r),
        Target::Both => kron(&r, &r),
    }
}

pub fn apply_rotation(state: &TwoPhotonState, target: Target, angle: f64) -> TwoPhotonState {
    TwoPhotonState::from_normalized(rotation_operator(target, angle) * state.amplitudes)
}

/// Probabilities of agreeing vs disagreeing outcomes in one measurement basis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParityDistribution {
    pub p_correlated: f64,
    pub p_anticorrelated: f64,
    pub basis_angle: f64,
}

impl ParityDistribution {
    /// Builds a distribution from an unnormalized correlated weight; the
    /// result is clamped to `[0, 1]` so the pair always sums to one.
    pub fn from_correlated(p_correlated: f64, basis_angle: f64) -> Self {
        let p = p_correlated.clamp(0.0, 1.0);
        Self {
            p_correlated: p,
            p_anticorrelated: 1.0 - p,
            basis_angle,
        }
    }
}

/// A 4x4 density matrix over the canonical basis.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityState {
    matrix: DensityMatrix,
}

impl DensityState {
    /// Wraps a matrix after checking hermiticity, unit trace and positivity.
    pub fn new(matrix: DensityMatrix) -> Result<Self> {
        let herm = (matrix - matrix.adjoint()).camax();
        if herm > STATE_TOL {
            return Err(Error::InvalidState(format!(
                "density matrix not Hermitian (max deviation {herm:e})"
            )));
        }
        let tr = matrix.trace();
        if (tr.re - 1.0).abs() > STATE_TOL || tr.im.abs() > STATE_TOL {
            return Err(Error::InvalidState(format!("density trace {tr}")));
        }
        let min_eig = matrix
            .symmetric_eigenvalues()
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min);
        if min_eig < -1e-10 {
            return Err(Error::InvalidState(format!(
                "density matrix has negative eigenvalue {min_eig:e}"
            )));
        }
        Ok(Self { matrix })
    }

    pub(crate) fn from_trusted(matrix: DensityMatrix) -> Self {
        Self { matrix }
    }

    pub fn matrix(&self) -> &DensityMatrix {
        &self.matrix
    }

    pub fn trace(&self) -> Complex64 {
        self.matrix.trace()
    }

    pub fn conjugated_by(&self, unitary: &Matrix4<Complex64>) -> DensityState {
        DensityState {
            matrix: unitary * self.matrix * unitary.adjoint(),
        }
    }

    /// Diagonal in the canonical basis, as probabilities.
    pub fn populations(&self) -> [f64; 4] {
        std::array::from_fn(|i| self.matrix[(i, i)].re)
    }
}

/// Anything parity statistics can be computed for.
pub trait Measurable {
    fn rotated_populations(&self, basis_angle: f64) -> [f64; 4];
}

impl Measurable for TwoPhotonState {
    fn rotated_populations(&self, basis_angle: f64) -> [f64; 4] {
        let rotated = rotation_operator(Target::Both, -basis_angle) * self.amplitudes;
        std::array::from_fn(|i| rotated[i].norm_sqr())
    }
}

impl Measurable for DensityState {
    fn rotated_populations(&self, basis_angle: f64) -> [f64; 4] {
        self.conjugated_by(&rotation_operator(Target::Both, -basis_angle))
            .populations()
    }
}

pub fn parity_probabilities<S: Measurable + ?Sized>(state: &S, basis_angle: f64) -> ParityDistribution {
    let p = state.rotated_populations(basis_angle);
    let corr = p[0] + p[3];
    let anti = p[1] + p[2];
    ParityDistribution::from_correlated(corr / (corr + anti), basis_angle)
}

/// Joint outcome probabilities when photon 1 is measured at `angle1` and
/// photon 2 at `angle2`, in canonical order.
pub fn joint_probabilities(state: &DensityState, angle1: f64, angle2: f64) -> [f64; 4] {
    let u = kron(&rotation_matrix(-angle1), &rotation_matrix(-angle2));
    let p = state.conjugated_by(&u).populations();
    let total: f64 = p.iter().map(|x| x.max(0.0)).sum();
    std::array::from_fn(|i| p[i].max(0.0) / total)
}
