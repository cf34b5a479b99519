//! Degenerate perturbation theory about the J = 0 limit.
//!
//! Energies are rescaled by `N U`, giving `H / (N U) = H0 + lambda V` with
//! `lambda = J / (N U)`, diagonal `H0` and the hopping matrix `V`. Level
//! `m` is the degenerate pair of Fock states `m` and `N - m`. The
//! corrections of order k are eigenvalues of `P W_k P`, where `P` projects
//! onto the pair and `L^-1` is the reduced resolvent
//! `1 / (eps_l - eps_m)` off the pair, zero on it.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{DimerError, Result};
use crate::model::{hop, interaction_energy};

/// Fock-state energies at J = 0, in s^-1.
pub fn unperturbed_energies(n_atoms: usize, u: f64) -> Vec<f64> {
    (0..=n_atoms).map(|n| interaction_energy(n_atoms, n, u)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct PerturbationSetup {
    n_atoms: usize,
    lambda_small: f64,
    /// Rescaled unperturbed energies `eps_n / (N U)`.
    h0: Vec<f64>,
    /// `V[n]` couples `n` and `n + 1`; `V` has zero diagonal.
    v: Vec<f64>,
    level: usize,
}

impl PerturbationSetup {
    pub fn new(n_atoms: usize, tunneling: f64, interaction: f64, level: usize) -> Result<Self> {
        if n_atoms == 0 {
            return Err(DimerError::InvalidParams("N must be at least 1".into()));
        }
        if !(interaction > 0.0 && interaction.is_finite()) {
            return Err(DimerError::InvalidParams(
                "perturbation theory about J = 0 needs U > 0".into(),
            ));
        }
        if !(tunneling >= 0.0 && tunneling.is_finite()) {
            return Err(DimerError::InvalidParams(format!("invalid tunneling {tunneling}")));
        }
        if 2 * level > n_atoms {
            return Err(DimerError::InvalidInput(format!(
                "level {level} does not exist for N = {n_atoms}"
            )));
        }
        let scale = n_atoms as f64 * interaction;
        Ok(Self {
            n_atoms,
            lambda_small: tunneling / scale,
            h0: unperturbed_energies(n_atoms, interaction)
                .into_iter()
                .map(|e| e / scale)
                .collect(),
            v: (0..n_atoms).map(|n| -hop(n_atoms, n)).collect(),
            level,
        })
    }

    /// Pure structure (lambda = 0, energies in units of N U).
    pub fn structural(n_atoms: usize, level: usize) -> Result<Self> {
        Self::new(n_atoms, 0.0, 1.0, level)
    }

    pub fn n_atoms(&self) -> usize {
        self.n_atoms
    }

    pub fn lambda_small(&self) -> f64 {
        self.lambda_small
    }

    pub fn level(&self) -> usize {
        self.level
    }

    pub fn h0(&self) -> &[f64] {
        &self.h0
    }

    pub fn pair(&self) -> (usize, usize) {
        (self.level, self.n_atoms - self.level)
    }

    fn in_pair(&self, l: usize) -> bool {
        l == self.level || l == self.n_atoms - self.level
    }

    /// Diagonal of `L^-1`.
    pub fn resolvent(&self) -> Vec<f64> {
        let e = self.h0[self.level];
        self.h0
            .iter()
            .enumerate()
            .map(|(l, &h)| if self.in_pair(l) { 0.0 } else { 1.0 / (h - e) })
            .collect()
    }

    pub fn v_dense(&self) -> DMatrix<f64> {
        let d = self.n_atoms + 1;
        DMatrix::from_fn(d, d, |i, j| {
            if j == i + 1 {
                self.v[i]
            } else if i == j + 1 {
                self.v[j]
            } else {
                0.0
            }
        })
    }

    pub fn resolvent_dense(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&nalgebra::DVector::from_vec(self.resolvent()))
    }

    /// `P W P` as the 2x2 matrix on (m, N - m); a single entry when the
    /// level is the unpaired middle state of even N.
    pub fn project(&self, w: &WMatrix) -> DMatrix<f64> {
        let (a, b) = self.pair();
        if a == b {
            return DMatrix::from_element(1, 1, w.matrix[(a, a)]);
        }
        DMatrix::from_row_slice(
            2,
            2,
            &[w.matrix[(a, a)], w.matrix[(a, b)], w.matrix[(b, a)], w.matrix[(b, b)]],
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WMatrix {
    pub order: usize,
    pub matrix: DMatrix<f64>,
}

pub fn build_w1(setup: &PerturbationSetup) -> WMatrix {
    WMatrix {
        order: 1,
        matrix: setup.v_dense(),
    }
}

/// `W_2 = -V L^-1 V`, assembled entry by entry: nonzero only on the main
/// and the +-2 diagonals.
///
/// Requires the pair states to be at least three sites apart so that
/// `P W_2 P` is diagonal; closer pairs are the lowest levels where the
/// degeneracy already splits at second order.
pub fn build_w2(setup: &PerturbationSetup) -> Result<WMatrix> {
    let n_atoms = setup.n_atoms;
    let m = setup.level;
    if 2 * m >= n_atoms || n_atoms - 2 * m <= 2 {
        return Err(DimerError::OutOfRegime(format!(
            "level {m} of N = {n_atoms} is too close to the bottom of the spectrum"
        )));
    }
    let r = setup.resolvent();
    let v = &setup.v;
    let d = n_atoms + 1;
    let mut w = DMatrix::zeros(d, d);
    for i in 0..d {
        let mut diag = 0.0;
        if i > 0 {
            diag -= v[i - 1] * v[i - 1] * r[i - 1];
        }
        if i + 1 < d {
            diag -= v[i] * v[i] * r[i + 1];
        }
        w[(i, i)] = diag;
        if i + 2 < d {
            let x = -v[i] * v[i + 1] * r[i + 1];
            w[(i, i + 2)] = x;
            w[(i + 2, i)] = x;
        }
    }
    Ok(WMatrix { order: 2, matrix: w })
}

/// `W_3 = V (L^-1 V)^2` by dense products.
pub fn build_w3(setup: &PerturbationSetup) -> WMatrix {
    let v = setup.v_dense();
    let lv = setup.resolvent_dense() * &v;
    WMatrix {
        order: 3,
        matrix: &v * &lv * &lv,
    }
}

/// `W_4 = -V (L^-1 V)^3 - e2 V (L^-1)^2 V`, with `e2` the second-order
/// correction of the level.
pub fn build_w4(setup: &PerturbationSetup, e2: f64) -> WMatrix {
    let v = setup.v_dense();
    let l = setup.resolvent_dense();
    let lv = &l * &v;
    WMatrix {
        order: 4,
        matrix: -(&v * &lv * &lv * &lv) - (&v * &l * &l * &v) * e2,
    }
}

/// Rescaled second- and fourth-order corrections of the setup's level:
/// the diagonal entries of `P W_2 P` and `P W_4 P` at `(m, m)`.
pub fn level_corrections(setup: &PerturbationSetup) -> Result<(f64, f64)> {
    let w2 = build_w2(setup)?;
    let m = setup.level;
    let e2 = w2.matrix[(m, m)];
    let w4 = build_w4(setup, e2);
    Ok((e2, w4.matrix[(m, m)]))
}

fn check_regime(n_atoms: usize, interaction: f64) -> Result<()> {
    if n_atoms < 7 {
        return Err(DimerError::OutOfRegime(format!(
            "the three-level expansion needs N >= 7, got N = {n_atoms}"
        )));
    }
    if !(interaction > 0.0) {
        return Err(DimerError::InvalidParams("perturbation theory about J = 0 needs U > 0".into()));
    }
    Ok(())
}

/// Rescaled second-order coefficients of the three highest levels, in
/// closed form.
pub fn second_order_coefficients(n_atoms: usize) -> [f64; 3] {
    let n = n_atoms as f64;
    [
        n * n / (n - 1.0),
        n * (n * n - n + 2.0) / ((n - 3.0) * (n - 1.0)),
        n * (n * n - 3.0 * n + 8.0) / ((n - 5.0) * (n - 3.0)),
    ]
}

/// Top three energies (s^-1) through second order in `J / (N U)`.
pub fn second_order_levels(n_atoms: usize, tunneling: f64, interaction: f64) -> Result<[f64; 3]> {
    check_regime(n_atoms, interaction)?;
    let scale = n_atoms as f64 * interaction;
    let lam = tunneling / scale;
    let eps = unperturbed_energies(n_atoms, interaction);
    let c = second_order_coefficients(n_atoms);
    Ok([0, 1, 2].map(|m| eps[m] + scale * c[m] * lam * lam))
}

/// Beat frequencies (Hz) to order Lambda^-2.
pub fn perturbative_frequencies(n_atoms: usize, tunneling: f64, interaction: f64) -> Result<(f64, f64)> {
    check_regime(n_atoms, interaction)?;
    let n = n_atoms as f64;
    let inv_l2 = if tunneling == 0.0 {
        0.0
    } else {
        let lambda = interaction * (n - 1.0) / (2.0 * tunneling);
        1.0 / (lambda * lambda)
    };
    let f_fast = interaction * (n - 1.0) / (2.0 * PI) * (1.0 - fast_coefficient(n_atoms) * inv_l2);
    let f_slow = interaction / PI * (1.0 + slow_coefficient(n_atoms) * inv_l2);
    Ok((f_fast, f_slow))
}

/// Coefficient `a` in `f_fast = U (N - 1) / 2 pi * (1 - a / Lambda^2)`.
pub fn fast_coefficient(n_atoms: usize) -> f64 {
    let n = n_atoms as f64;
    (n + 1.0) / (2.0 * (n - 3.0))
}

/// Coefficient `b` in `f_slow = U / pi * (1 + b / Lambda^2)`.
pub fn slow_coefficient(n_atoms: usize) -> f64 {
    let n = n_atoms as f64;
    1.5 * (n - 1.0) * (n + 1.0) / ((n - 5.0) * (n - 3.0))
}

/// Odd matrix: zero wherever `i + j` is even (the main diagonal included).
pub fn is_odd_matrix(a: &DMatrix<f64>, tol: f64) -> bool {
    zero_on_parity(a, 0, tol)
}

/// Even matrix: zero wherever `i + j` is odd.
pub fn is_even_matrix(a: &DMatrix<f64>, tol: f64) -> bool {
    zero_on_parity(a, 1, tol)
}

fn zero_on_parity(a: &DMatrix<f64>, parity: usize, tol: f64) -> bool {
    let (r, c) = a.shape();
    (0..r).all(|i| (0..c).all(|j| (i + j) % 2 != parity || a[(i, j)].abs() <= tol))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OddOrderReport {
    pub n_atoms: usize,
    pub level: usize,
    /// Level excluded because its pair already splits at second order.
    pub skipped: bool,
    pub max_w2_pair_offdiag: f64,
    pub max_w3_pair_entry: f64,
    pub max_w3_diagonal: f64,
    pub v_is_odd: bool,
    pub resolvent_is_even: bool,
    pub w2_is_even: bool,
    pub w3_is_odd: bool,
}

impl OddOrderReport {
    pub fn passed(&self, tol: f64) -> bool {
        self.skipped
            || (self.v_is_odd
                && self.resolvent_is_even
                && self.w2_is_even
                && self.w3_is_odd
                && self.max_w3_diagonal <= tol
                && self.max_w3_pair_entry <= tol)
    }
}

/// Checks that `W_3` has a vanishing diagonal on the degenerate pair of
/// `level` and that the odd/even structure behind it holds.
pub fn verify_odd_order_vanishing(n_atoms: usize, level: usize) -> Result<OddOrderReport> {
    let setup = PerturbationSetup::structural(n_atoms, level)?;
    let v = setup.v_dense();
    let l = setup.resolvent_dense();
    let vlv = -(&v * &l * &v);
    let (a, b) = setup.pair();
    let max_w2_pair_offdiag = vlv[(a, b)].abs().max(vlv[(b, a)].abs());
    let skipped = a == b || max_w2_pair_offdiag > 1e-12;
    let w3 = build_w3(&setup).matrix;
    let tol = 1e-12;
    Ok(OddOrderReport {
        n_atoms,
        level,
        skipped,
        max_w2_pair_offdiag,
        max_w3_pair_entry: [w3[(a, a)], w3[(a, b)], w3[(b, a)], w3[(b, b)]]
            .iter()
            .fold(0.0f64, |m, x| m.max(x.abs())),
        max_w3_diagonal: w3.diagonal().iter().fold(0.0f64, |m, x| m.max(x.abs())),
        v_is_odd: is_odd_matrix(&v, tol),
        resolvent_is_even: is_even_matrix(&l, tol),
        w2_is_even: is_even_matrix(&vlv, tol),
        w3_is_odd: is_odd_matrix(&w3, tol),
    })
}
