//! Two-level system algebra: the [`SystemOperator`] matrix type, Pauli
//! matrices, the spin Hamiltonian, closed-form propagation and the bare
//! contour propagator with the observable inserted at the measurement time.

use std::fmt;
use std::ops::{Add, AddAssign, Mul, MulAssign, Neg, Sub};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);
const I: Complex64 = Complex64::new(0.0, 1.0);

/// A 2×2 complex matrix stored row-major.
#[derive(Clone, Copy, PartialEq, Default)]
pub struct SystemOperator(pub [Complex64; 4]);

impl SystemOperator {
    pub const ZERO: Self = Self([ZERO, ZERO, ZERO, ZERO]);
    pub const IDENTITY: Self = Self([ONE, ZERO, ZERO, ONE]);
    pub const SIGMA_X: Self = Self([ZERO, ONE, ONE, ZERO]);
    pub const SIGMA_Y: Self = Self([ZERO, Complex64::new(0.0, -1.0), I, ZERO]);
    pub const SIGMA_Z: Self = Self([ONE, ZERO, ZERO, Complex64::new(-1.0, 0.0)]);

    pub fn new(a: Complex64, b: Complex64, c: Complex64, d: Complex64) -> Self {
        Self([a, b, c, d])
    }

    pub fn from_real(a: f64, b: f64, c: f64, d: f64) -> Self {
        Self([a.into(), b.into(), c.into(), d.into()])
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> Complex64 {
        self.0[2 * row + col]
    }

    #[inline]
    pub fn trace(&self) -> Complex64 {
        self.0[0] + self.0[3]
    }

    #[inline]
    pub fn det(&self) -> Complex64 {
        self.0[0] * self.0[3] - self.0[1] * self.0[2]
    }

    pub fn adjoint(&self) -> Self {
        let [a, b, c, d] = self.0;
        Self([a.conj(), c.conj(), b.conj(), d.conj()])
    }

    #[inline]
    pub fn scale(&self, s: Complex64) -> Self {
        let [a, b, c, d] = self.0;
        Self([a * s, b * s, c * s, d * s])
    }

    #[inline]
    pub fn scale_re(&self, s: f64) -> Self {
        let [a, b, c, d] = self.0;
        Self([a * s, b * s, c * s, d * s])
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    /// Largest absolute entry difference.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.0
            .iter()
            .zip(other.0.iter())
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        self.max_abs_diff(&self.adjoint()) <= tol
    }

    /// Operator (spectral) norm: the largest singular value.
    pub fn op_norm(&self) -> f64 {
        // Largest eigenvalue of A†A = [[p, q], [q*, r]], written without
        // cancellation so near-unitary inputs give 1 to rounding.
        let [a, b, c, d] = self.0;
        let p = a.norm_sqr() + c.norm_sqr();
        let r = b.norm_sqr() + d.norm_sqr();
        let q = a.conj() * b + c.conj() * d;
        let half_gap = 0.5 * (p - r);
        (0.5 * (p + r) + (half_gap * half_gap + q.norm_sqr()).sqrt()).sqrt()
    }
}

impl fmt::Debug for SystemOperator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let [a, b, c, d] = self.0;
        write!(f, "[[{a}, {b}], [{c}, {d}]]")
    }
}

impl Add for SystemOperator {
    type Output = Self;
    #[inline]
    fn add(self, rhs: Self) -> Self {
        let (x, y) = (self.0, rhs.0);
        Self([x[0] + y[0], x[1] + y[1], x[2] + y[2], x[3] + y[3]])
    }
}

impl AddAssign for SystemOperator {
    #[inline]
    fn add_assign(&mut self, rhs: Self) {
        for (a, b) in self.0.iter_mut().zip(rhs.0) {
            *a += b;
        }
    }
}

impl Sub for SystemOperator {
    type Output = Self;
    #[inline]
    fn sub(self, rhs: Self) -> Self {
        let (x, y) = (self.0, rhs.0);
        Self([x[0] - y[0], x[1] - y[1], x[2] - y[2], x[3] - y[3]])
    }
}

impl Neg for SystemOperator {
    type Output = Self;
    fn neg(self) -> Self {
        self.scale_re(-1.0)
    }
}

impl Mul for SystemOperator {
    type Output = Self;
    #[inline]
    fn mul(self, rhs: Self) -> Self {
        let [a, b, c, d] = self.0;
        let [e, f, g, h] = rhs.0;
        Self([a * e + b * g, a * f + b * h, c * e + d * g, c * f + d * h])
    }
}

impl MulAssign for SystemOperator {
    #[inline]
    fn mul_assign(&mut self, rhs: Self) {
        *self = *self * rhs;
    }
}

impl Mul<Complex64> for SystemOperator {
    type Output = Self;
    #[inline]
    fn mul(self, rhs: Complex64) -> Self {
        self.scale(rhs)
    }
}

impl Mul<f64> for SystemOperator {
    type Output = Self;
    #[inline]
    fn mul(self, rhs: f64) -> Self {
        self.scale_re(rhs)
    }
}

/// e^{−iθH} for a Hermitian 2×2 `h`, via H = a·Id + b·n̂·σ.
pub fn evolve(h: &SystemOperator, theta: f64) -> SystemOperator {
    let a = 0.5 * (h.0[0].re + h.0[3].re);
    let bz = 0.5 * (h.0[0].re - h.0[3].re);
    let bx = h.0[1].re;
    let by = -h.0[1].im;
    let b = (bx * bx + by * by + bz * bz).sqrt();
    let phase = Complex64::from_polar(1.0, -theta * a);
    let (s, c) = (theta * b).sin_cos();
    if b == 0.0 {
        return SystemOperator::IDENTITY.scale(phase);
    }
    // cos(θb)·Id − i sin(θb)·(n̂·σ)
    let k = s / b;
    let m = SystemOperator([
        Complex64::new(c, -k * bz),
        Complex64::new(-k * by, -k * bx),
        Complex64::new(k * by, -k * bx),
        Complex64::new(c, k * bz),
    ]);
    m.scale(phase)
}

/// Preset initial states of the spin.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitialState {
    /// |1⟩⟨1|, the σ_z = +1 state.
    Up,
    /// |2⟩⟨2|.
    Down,
    /// Id/2.
    Mixed,
}

impl InitialState {
    pub fn density_matrix(self) -> SystemOperator {
        match self {
            InitialState::Up => SystemOperator::from_real(1.0, 0.0, 0.0, 0.0),
            InitialState::Down => SystemOperator::from_real(0.0, 0.0, 0.0, 1.0),
            InitialState::Mixed => SystemOperator::from_real(0.5, 0.0, 0.0, 0.5),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Observable {
    SigmaX,
    SigmaY,
    SigmaZ,
    Identity,
}

impl Observable {
    pub fn operator(self) -> SystemOperator {
        match self {
            Observable::SigmaX => SystemOperator::SIGMA_X,
            Observable::SigmaY => SystemOperator::SIGMA_Y,
            Observable::SigmaZ => SystemOperator::SIGMA_Z,
            Observable::Identity => SystemOperator::IDENTITY,
        }
    }
}

/// Spin parameters in units of the tunneling Δ.
#[derive(Clone, Debug, PartialEq)]
pub struct SystemSpec {
    pub epsilon: f64,
    pub delta: f64,
    pub rho_s: SystemOperator,
    pub observable: SystemOperator,
}

impl Default for SystemSpec {
    fn default() -> Self {
        Self {
            epsilon: 0.0,
            delta: 1.0,
            rho_s: InitialState::Up.density_matrix(),
            observable: SystemOperator::SIGMA_Z,
        }
    }
}

impl SystemSpec {
    pub fn new(epsilon: f64, delta: f64) -> Self {
        Self {
            epsilon,
            delta,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.epsilon.is_finite() || !self.delta.is_finite() {
            return Err(Error::InvalidArgument("epsilon and delta must be finite".into()));
        }
        validate_density_matrix(&self.rho_s)?;
        if !self.observable.is_finite() {
            return Err(Error::InvalidArgument("observable has non-finite entries".into()));
        }
        Ok(())
    }

    /// H_s = ε σ_z + Δ σ_x.
    pub fn hamiltonian(&self) -> SystemOperator {
        SystemOperator::from_real(self.epsilon, self.delta, self.delta, -self.epsilon)
    }

    /// Bare system propagator between contour times `s_i ≤ s_f` in `[0, 2t]`.
    pub fn bare_propagator(&self, s_f: f64, s_i: f64, t: f64) -> Result<SystemOperator> {
        if !(0.0..=2.0 * t).contains(&s_i) || !(0.0..=2.0 * t).contains(&s_f) {
            return Err(Error::Domain(format!(
                "bare propagator arguments ({s_f}, {s_i}) outside [0, {}]",
                2.0 * t
            )));
        }
        if s_i > s_f {
            return Err(Error::Domain(format!("unordered arguments: s_i = {s_i} > s_f = {s_f}")));
        }
        Ok(bare_propagator_unchecked(&self.hamiltonian(), &self.observable, s_f, s_i, t))
    }
}

#[inline]
pub(crate) fn bare_propagator_unchecked(
    h: &SystemOperator,
    observable: &SystemOperator,
    s_f: f64,
    s_i: f64,
    t: f64,
) -> SystemOperator {
    if s_f < t {
        evolve(h, s_f - s_i)
    } else if s_i >= t {
        evolve(h, s_i - s_f)
    } else {
        evolve(h, t - s_f) * *observable * evolve(h, t - s_i)
    }
}

pub fn validate_density_matrix(rho: &SystemOperator) -> Result<()> {
    const TOL: f64 = 1e-10;
    if !rho.is_finite() || !rho.is_hermitian(TOL) {
        return Err(Error::InvalidArgument("density matrix must be finite and Hermitian".into()));
    }
    let tr = rho.trace();
    if (tr - Complex64::new(1.0, 0.0)).norm() > TOL {
        return Err(Error::InvalidArgument(format!("density matrix trace {tr} ≠ 1")));
    }
    // For a Hermitian 2×2 with unit trace, PSD ⇔ det ≥ 0.
    if rho.det().re < -TOL {
        return Err(Error::InvalidArgument("density matrix is not positive semidefinite".into()));
    }
    Ok(())
}

/// tr(ρ_s · A).
#[inline]
pub fn expectation(rho_s: &SystemOperator, a: &SystemOperator) -> Complex64 {
    let r = rho_s.0;
    let m = a.0;
    r[0] * m[0] + r[1] * m[2] + r[2] * m[1] + r[3] * m[3]
}
