//! Parameters, Fock basis, Hamiltonian, atomic coherent states and the
//! single-state observables of the two-mode Bose-Hubbard dimer.
//!
//! Units: hbar = 1, so rates and energies are both in s^-1. Fock index `n`
//! counts the atoms in well 1, i.e. amplitude `n` belongs to `|n, N - n>`.

use std::f64::consts::{PI, TAU};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{DimerError, Result};
use crate::linalg::SymTridiagonal;

pub type C64 = Complex64;

/// Coherence magnitude below which the relative phase is reported undefined.
pub const PHASE_UNDEFINED_BELOW: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DimerParams {
    n_atoms: usize,
    tunneling: f64,
    interaction: f64,
}

impl DimerParams {
    /// `tunneling` (J) and `interaction` (U) in s^-1.
    ///
    /// J = 0 is accepted: it is the exactly solvable limit used by the
    /// revival and perturbation modules.
    pub fn new(n_atoms: usize, tunneling: f64, interaction: f64) -> Result<Self> {
        if n_atoms == 0 {
            return Err(DimerError::InvalidParams("N must be at least 1".into()));
        }
        if !(tunneling.is_finite() && tunneling >= 0.0) {
            return Err(DimerError::InvalidParams(format!(
                "tunneling must be finite and >= 0, got {tunneling}"
            )));
        }
        if !(interaction.is_finite() && interaction >= 0.0) {
            return Err(DimerError::InvalidParams(format!(
                "interaction must be finite and >= 0, got {interaction}"
            )));
        }
        Ok(Self {
            n_atoms,
            tunneling,
            interaction,
        })
    }

    /// Builds the parameters from J and Lambda = U (N - 1) / (2 J).
    pub fn from_lambda(n_atoms: usize, tunneling: f64, lambda: f64) -> Result<Self> {
        if !(lambda.is_finite() && lambda >= 0.0) {
            return Err(DimerError::InvalidParams(format!(
                "lambda must be finite and >= 0, got {lambda}"
            )));
        }
        if !(tunneling > 0.0) {
            return Err(DimerError::InvalidParams(
                "lambda needs a positive tunneling rate".into(),
            ));
        }
        if n_atoms < 2 {
            if lambda == 0.0 {
                return Self::new(n_atoms, tunneling, 0.0);
            }
            return Err(DimerError::InvalidParams(
                "lambda is identically zero for a single atom".into(),
            ));
        }
        Self::new(
            n_atoms,
            tunneling,
            2.0 * tunneling * lambda / (n_atoms - 1) as f64,
        )
    }

    pub fn n_atoms(&self) -> usize {
        self.n_atoms
    }

    pub fn tunneling(&self) -> f64 {
        self.tunneling
    }

    pub fn interaction(&self) -> f64 {
        self.interaction
    }

    /// Lambda = U (N - 1) / (2 J); infinite at J = 0 with U (N - 1) > 0.
    pub fn lambda(&self) -> f64 {
        let num = self.interaction * (self.n_atoms - 1) as f64;
        if num == 0.0 {
            0.0
        } else {
            num / (2.0 * self.tunneling)
        }
    }

    /// Same J and U with a different atom number (used after atom loss).
    pub fn with_atoms(&self, n_atoms: usize) -> Self {
        Self { n_atoms, ..*self }
    }

    pub fn dim(&self) -> usize {
        self.n_atoms + 1
    }
}

/// Pure state in the (N+1)-dimensional Fock basis.
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    amps: Vec<C64>,
}

impl StateVector {
    /// Normalizes the given amplitudes.
    pub fn from_amplitudes(amps: Vec<C64>) -> Result<Self> {
        if amps.is_empty() {
            return Err(DimerError::InvalidInput("state needs at least one amplitude".into()));
        }
        let norm = crate::linalg::norm_sqr(&amps).sqrt();
        if !(norm > 0.0 && norm.is_finite()) {
            return Err(DimerError::InvalidInput(format!("cannot normalize state with norm {norm}")));
        }
        Ok(Self {
            amps: amps.into_iter().map(|a| a / norm).collect(),
        })
    }

    /// Stores amplitudes as given. Only the quantum-jump machinery produces
    /// sub-unit norms, and only between steps.
    pub(crate) fn from_raw(amps: Vec<C64>) -> Self {
        debug_assert!(!amps.is_empty());
        Self { amps }
    }

    pub fn fock(n_atoms: usize, n: usize) -> Self {
        assert!(n <= n_atoms, "Fock index {n} exceeds N = {n_atoms}");
        let mut amps = vec![C64::new(0.0, 0.0); n_atoms + 1];
        amps[n] = C64::new(1.0, 0.0);
        Self { amps }
    }

    /// `(|N, 0> + |0, N>) / sqrt(2)`.
    pub fn noon(n_atoms: usize) -> Self {
        assert!(n_atoms >= 1);
        let mut amps = vec![C64::new(0.0, 0.0); n_atoms + 1];
        amps[0] = C64::new(0.5f64.sqrt(), 0.0);
        amps[n_atoms] = C64::new(0.5f64.sqrt(), 0.0);
        Self { amps }
    }

    pub fn n_atoms(&self) -> usize {
        self.amps.len() - 1
    }

    pub fn dim(&self) -> usize {
        self.amps.len()
    }

    pub fn amplitudes(&self) -> &[C64] {
        &self.amps
    }

    pub fn into_amplitudes(self) -> Vec<C64> {
        self.amps
    }

    pub fn norm_sqr(&self) -> f64 {
        crate::linalg::norm_sqr(&self.amps)
    }

    pub fn normalized(mut self) -> Result<Self> {
        let norm = self.norm_sqr().sqrt();
        if !(norm > 0.0) {
            return Err(DimerError::InvalidInput("zero state cannot be normalized".into()));
        }
        self.amps.iter_mut().for_each(|a| *a /= norm);
        Ok(self)
    }

    pub fn inner(&self, other: &StateVector) -> C64 {
        crate::linalg::inner(&self.amps, &other.amps)
    }

    /// Expectation value of the Hamiltonian.
    pub fn energy(&self, params: &DimerParams) -> f64 {
        let h = build_hamiltonian(&params.with_atoms(self.n_atoms()));
        crate::linalg::inner(&self.amps, &h.apply(&self.amps)).re / self.norm_sqr()
    }
}

/// Population imbalance and relative phase; a point on the Bloch sphere.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhasePoint {
    z: f64,
    phi: f64,
}

impl PhasePoint {
    /// `phi` is reduced to `[0, 2 pi)`.
    pub fn new(z: f64, phi: f64) -> Result<Self> {
        if !(z.is_finite() && (-1.0..=1.0).contains(&z)) {
            return Err(DimerError::InvalidInput(format!("z = {z} outside [-1, 1]")));
        }
        if !phi.is_finite() {
            return Err(DimerError::InvalidInput(format!("phi = {phi} is not finite")));
        }
        Ok(Self {
            z,
            phi: reduce_phase(phi),
        })
    }

    pub fn z(&self) -> f64 {
        self.z
    }

    pub fn phi(&self) -> f64 {
        self.phi
    }
}

pub fn reduce_phase(phi: f64) -> f64 {
    let r = phi.rem_euclid(TAU);
    // rem_euclid can round up to exactly TAU for tiny negative inputs
    if r >= TAU {
        0.0
    } else {
        r
    }
}

/// Moments `rho_ij = <a_i^dag a_j>` of the single-particle density matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Spdm {
    pub rho11: f64,
    pub rho22: f64,
    pub rho12: C64,
}

impl Spdm {
    pub fn rho21(&self) -> C64 {
        self.rho12.conj()
    }

    pub fn trace(&self) -> f64 {
        self.rho11 + self.rho22
    }

    /// Eigenvalues, largest first.
    pub fn eigenvalues(&self) -> (f64, f64) {
        let mean = 0.5 * self.trace();
        let half_gap = (0.25 * (self.rho11 - self.rho22).powi(2) + self.rho12.norm_sqr()).sqrt();
        (mean + half_gap, mean - half_gap)
    }
}

pub fn build_hamiltonian(params: &DimerParams) -> SymTridiagonal {
    let n_atoms = params.n_atoms();
    let u = params.interaction();
    let j = params.tunneling();
    let diag = (0..=n_atoms).map(|n| interaction_energy(n_atoms, n, u)).collect();
    let off = (0..n_atoms).map(|n| -j * hop(n_atoms, n)).collect();
    SymTridiagonal::new(diag, off)
}

/// `(U / 2) [n (n - 1) + (N - n)(N - n - 1)]`, the J = 0 energy of `|n, N - n>`.
pub fn interaction_energy(n_atoms: usize, n: usize, u: f64) -> f64 {
    let n1 = n as f64;
    let n2 = (n_atoms - n) as f64;
    0.5 * u * (n1 * (n1 - 1.0) + n2 * (n2 - 1.0))
}

/// `<n+1, N-n-1| a1^dag a2 |n, N-n> = sqrt((n + 1)(N - n))`.
pub(crate) fn hop(n_atoms: usize, n: usize) -> f64 {
    (((n + 1) * (n_atoms - n)) as f64).sqrt()
}

fn ln_factorials(n: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(n + 1);
    let mut acc = 0.0;
    out.push(0.0);
    for k in 1..=n {
        acc += (k as f64).ln();
        out.push(acc);
    }
    out
}

/// `exponent * ln(base)` with the convention 0^0 = 1.
fn log_pow(base: f64, exponent: f64) -> f64 {
    if exponent == 0.0 {
        0.0
    } else if base <= 0.0 {
        f64::NEG_INFINITY
    } else {
        exponent * base.ln()
    }
}

/// Atomic coherent state `|z, phi>` of `params.n_atoms()` atoms.
pub fn coherent_state(params: &DimerParams, point: PhasePoint) -> StateVector {
    coherent_state_n(params.n_atoms(), point)
}

/// Coherent state expanded in Fock states, binomial weights evaluated in
/// log space.
pub fn coherent_state_n(n_atoms: usize, point: PhasePoint) -> StateVector {
    let lf = ln_factorials(n_atoms);
    let p1 = 0.5 * (1.0 + point.z());
    let p2 = 0.5 * (1.0 - point.z());
    let amps: Vec<C64> = (0..=n_atoms)
        .map(|n| {
            let m = n_atoms - n;
            let ln_mag = 0.5 * (lf[n_atoms] - lf[n] - lf[m])
                + log_pow(p1, 0.5 * n as f64)
                + log_pow(p2, 0.5 * m as f64);
            C64::from_polar(ln_mag.exp(), point.phi() * m as f64)
        })
        .collect();
    StateVector::from_amplitudes(amps).expect("coherent state always has nonzero norm")
}

pub fn spdm(state: &StateVector) -> Spdm {
    let amps = state.amplitudes();
    let n_atoms = state.n_atoms();
    let mut rho11 = 0.0;
    let mut rho22 = 0.0;
    let mut rho12 = C64::new(0.0, 0.0);
    for (n, c) in amps.iter().enumerate() {
        let p = c.norm_sqr();
        rho11 += p * n as f64;
        rho22 += p * (n_atoms - n) as f64;
        if n < n_atoms {
            rho12 += amps[n + 1].conj() * c * hop(n_atoms, n);
        }
    }
    Spdm { rho11, rho22, rho12 }
}

/// Largest eigenvalue of the single-particle density matrix over `atom_count`.
pub fn condensate_fraction(rho: &Spdm, atom_count: f64) -> Result<f64> {
    if !(atom_count > 0.0) {
        return Err(DimerError::EmptySystem);
    }
    let disc = (rho.rho11 - rho.rho22).powi(2) + 4.0 * (rho.rho12 * rho.rho21()).re;
    Ok((rho.rho11 + rho.rho22 + disc.max(0.0).sqrt()) / (2.0 * atom_count))
}

/// `<n1 n2>` for a pure state.
pub fn number_correlation(state: &StateVector) -> f64 {
    let n_atoms = state.n_atoms();
    state
        .amplitudes()
        .iter()
        .enumerate()
        .map(|(n, c)| c.norm_sqr() * (n * (n_atoms - n)) as f64)
        .sum()
}

/// `|<a1^dag a2>|^2 - <n1 n2>`; positive values certify EPR entanglement.
pub fn epr(state: &StateVector) -> f64 {
    epr_from_moments(spdm(state).rho12, number_correlation(state))
}

pub fn epr_from_moments(rho12: C64, n1n2: f64) -> f64 {
    rho12.norm_sqr() - n1n2
}

/// Imbalance and (possibly undefined) relative phase of a moment matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImbalancePhase {
    pub z: f64,
    pub phi: Option<f64>,
}

pub fn imbalance_and_phase(rho: &Spdm) -> Result<ImbalancePhase> {
    let total = rho.trace();
    if !(total > 0.0) {
        return Err(DimerError::EmptySystem);
    }
    let z = ((rho.rho11 - rho.rho22) / total).clamp(-1.0, 1.0);
    let phi = if rho.rho12.norm() < PHASE_UNDEFINED_BELOW {
        None
    } else {
        Some(reduce_phase(rho.rho12.arg()))
    };
    Ok(ImbalancePhase { z, phi })
}

/// Every scalar observable of a single pure state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observables {
    pub z: f64,
    pub phi: Option<f64>,
    pub condensate_fraction: f64,
    pub epr: f64,
    pub atoms: f64,
}

/// Raw expectation values from which every observable is derived; these are
/// linear in the density matrix and therefore the quantities to average
/// over stochastic trajectories.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Moments {
    pub n1: f64,
    pub n2: f64,
    pub rho12: C64,
    pub n1n2: f64,
    pub atoms: f64,
}

impl Moments {
    pub fn of_state(state: &StateVector) -> Self {
        let rho = spdm(state);
        Self {
            n1: rho.rho11,
            n2: rho.rho22,
            rho12: rho.rho12,
            n1n2: number_correlation(state),
            atoms: state.n_atoms() as f64,
        }
    }

    pub fn spdm(&self) -> Spdm {
        Spdm {
            rho11: self.n1,
            rho22: self.n2,
            rho12: self.rho12,
        }
    }

    /// NaN entries stand for the quantities that are undefined once every
    /// atom has been lost.
    pub fn observables(&self) -> Observables {
        let rho = self.spdm();
        let (z, phi) = match imbalance_and_phase(&rho) {
            Ok(ip) => (ip.z, ip.phi),
            Err(_) => (f64::NAN, None),
        };
        Observables {
            z,
            phi,
            condensate_fraction: condensate_fraction(&rho, self.atoms).unwrap_or(f64::NAN),
            epr: epr_from_moments(self.rho12, self.n1n2),
            atoms: self.atoms,
        }
    }
}

pub fn observe(state: &StateVector) -> Observables {
    Moments::of_state(state).observables()
}

/// Regular grid over the Bloch sphere in (z, phi): z spans [-1, 1] with both
/// poles included, phi spans [0, 2 pi) with `n_phi` equal steps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseGrid {
    pub n_z: usize,
    pub n_phi: usize,
}

impl PhaseGrid {
    pub fn new(n_z: usize, n_phi: usize) -> Result<Self> {
        if n_z < 2 || n_phi < 2 {
            return Err(DimerError::InvalidInput(format!(
                "grid needs at least 2 nodes per axis, got {n_z} x {n_phi}"
            )));
        }
        Ok(Self { n_z, n_phi })
    }

    pub fn z_axis(&self) -> Vec<f64> {
        (0..self.n_z)
            .map(|i| -1.0 + 2.0 * i as f64 / (self.n_z - 1) as f64)
            .collect()
    }

    pub fn phi_axis(&self) -> Vec<f64> {
        (0..self.n_phi)
            .map(|j| 2.0 * PI * j as f64 / self.n_phi as f64)
            .collect()
    }

    /// Nodes in row-major order (z outer, phi inner).
    pub fn points(&self) -> Vec<PhasePoint> {
        let phis = self.phi_axis();
        self.z_axis()
            .into_iter()
            .flat_map(|z| {
                phis.iter()
                    .map(move |&phi| PhasePoint::new(z, phi).expect("grid node in range"))
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn reference_params() -> DimerParams {
        DimerParams::new(40, 10.0, 100.0 / 39.0).unwrap()
    }

    #[test]
    fn lambda_is_derived() {
        let p = reference_params();
        assert_relative_eq!(p.lambda(), 5.0, epsilon = 1e-12);
        let q = DimerParams::from_lambda(40, 10.0, 5.0).unwrap();
        assert_relative_eq!(q.interaction(), 100.0 / 39.0, epsilon = 1e-12);
        assert!(DimerParams::new(0, 1.0, 1.0).is_err());
        assert!(DimerParams::new(3, -1.0, 1.0).is_err());
        assert!(DimerParams::new(3, 1.0, -1.0).is_err());
        assert_eq!(DimerParams::new(3, 0.0, 1.0).unwrap().lambda(), f64::INFINITY);
    }

    #[test]
    fn hamiltonian_single_atom() {
        let h = build_hamiltonian(&DimerParams::new(1, 10.0, 3.0).unwrap());
        assert_eq!(h.to_dense(), nalgebra::DMatrix::from_row_slice(2, 2, &[0.0, -10.0, -10.0, 0.0]));
    }

    #[test]
    fn hamiltonian_two_atoms_by_hand() {
        let h = build_hamiltonian(&DimerParams::new(2, 1.0, 1.0).unwrap());
        assert_eq!(h.diag(), &[1.0, 0.0, 1.0]);
        for &o in h.off_diag() {
            assert_relative_eq!(o, -(2.0f64).sqrt(), epsilon = 1e-15);
        }
    }

    #[test]
    fn hamiltonian_relabel_symmetry() {
        let h = build_hamiltonian(&reference_params()).to_dense();
        let n = h.nrows();
        for i in 0..n {
            for j in 0..n {
                assert_eq!(h[(i, j)], h[(n - 1 - i, n - 1 - j)]);
                assert_eq!(h[(i, j)], h[(j, i)]);
            }
        }
    }

    #[test]
    fn coherent_state_poles_and_equator() {
        let s = coherent_state_n(7, PhasePoint::new(1.0, 2.0).unwrap());
        assert_relative_eq!(s.amplitudes()[7].norm(), 1.0, epsilon = 1e-15);
        assert!(s.amplitudes()[..7].iter().all(|a| a.norm() == 0.0));

        let s = coherent_state_n(1, PhasePoint::new(0.0, 0.0).unwrap());
        for a in s.amplitudes() {
            assert_relative_eq!(a.re, 0.5f64.sqrt(), epsilon = 1e-15);
            assert_eq!(a.im, 0.0);
        }
    }

    #[test]
    fn coherent_state_large_n_is_normalized() {
        let s = coherent_state_n(2000, PhasePoint::new(0.3, 1.0).unwrap());
        assert_relative_eq!(s.norm_sqr(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn spdm_examples() {
        let f = StateVector::fock(5, 2);
        let r = spdm(&f);
        assert_eq!((r.rho11, r.rho22), (2.0, 3.0));
        assert_eq!(r.rho12, C64::new(0.0, 0.0));

        // amplitudes (1/2, 1/sqrt2, 1/2) for N = 2 at z = 0, phi = 0
        let c = coherent_state_n(2, PhasePoint::new(0.0, 0.0).unwrap());
        let r = spdm(&c);
        assert_relative_eq!(r.rho11, 1.0, epsilon = 1e-14);
        assert_relative_eq!(r.rho22, 1.0, epsilon = 1e-14);
        assert_relative_eq!(r.rho12.re, 1.0, epsilon = 1e-14);
        assert_relative_eq!(r.rho12.im, 0.0, epsilon = 1e-14);

        let r = spdm(&StateVector::noon(2));
        assert_relative_eq!(r.rho11, 1.0, epsilon = 1e-14);
        assert_relative_eq!(r.rho22, 1.0, epsilon = 1e-14);
        assert_eq!(r.rho12.norm(), 0.0);
    }

    #[test]
    fn condensate_fraction_examples() {
        let c = coherent_state_n(12, PhasePoint::new(-0.4, 2.2).unwrap());
        let cf = condensate_fraction(&spdm(&c), 12.0).unwrap();
        assert_relative_eq!(cf, 1.0, epsilon = 1e-12);

        for n in 0..=6 {
            let cf = condensate_fraction(&spdm(&StateVector::fock(6, n)), 6.0).unwrap();
            assert_relative_eq!(cf, n.max(6 - n) as f64 / 6.0, epsilon = 1e-15);
        }
        let cf = condensate_fraction(&spdm(&StateVector::noon(9)), 9.0).unwrap();
        assert_relative_eq!(cf, 0.5, epsilon = 1e-15);
        assert_eq!(
            condensate_fraction(&spdm(&StateVector::fock(3, 1)), 0.0),
            Err(DimerError::EmptySystem)
        );
    }

    #[test]
    fn epr_examples() {
        assert_eq!(epr(&StateVector::fock(8, 3)), -15.0);
        let c = coherent_state_n(40, PhasePoint::new(0.95, PI).unwrap());
        assert_relative_eq!(epr(&c), 0.975, epsilon = 1e-10);
    }

    #[test]
    fn imbalance_and_phase_examples() {
        let c = coherent_state_n(10, PhasePoint::new(0.3, 1.7).unwrap());
        let ip = imbalance_and_phase(&spdm(&c)).unwrap();
        assert_relative_eq!(ip.z, 0.3, epsilon = 1e-12);
        assert_relative_eq!(ip.phi.unwrap(), 1.7, epsilon = 1e-12);

        let ip = imbalance_and_phase(&spdm(&StateVector::fock(10, 7))).unwrap();
        assert_relative_eq!(ip.z, 0.4, epsilon = 1e-15);
        assert_eq!(ip.phi, None);

        let c = coherent_state_n(10, PhasePoint::new(0.0, PI).unwrap());
        let ip = imbalance_and_phase(&spdm(&c)).unwrap();
        assert!(ip.z.abs() < 1e-14);
        assert_relative_eq!(ip.phi.unwrap(), PI, epsilon = 1e-12);
    }

    #[test]
    fn phase_point_reduces_phase() {
        let p = PhasePoint::new(0.0, -0.5).unwrap();
        assert_relative_eq!(p.phi(), TAU - 0.5, epsilon = 1e-15);
        assert!(PhasePoint::new(1.01, 0.0).is_err());
        assert_eq!(reduce_phase(-1e-300), 0.0);
    }

    #[test]
    fn phase_grid_axes() {
        let g = PhaseGrid::new(3, 4).unwrap();
        assert_eq!(g.z_axis(), vec![-1.0, 0.0, 1.0]);
        assert_relative_eq!(g.phi_axis()[2], PI);
        assert_eq!(g.points().len(), 12);
        assert!(PhaseGrid::new(1, 4).is_err());
    }
}
