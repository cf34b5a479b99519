//! Exact revivals of the J = 0 dynamics.
//!
//! Without tunneling every Fock state only acquires the phase
//! `exp(-i U t h_n)` with integer `h_n = [n(n-1) + (N-n)(N-n-1)] / 2`. At
//! `tau = pi / U` these phases are signs whose pattern depends on N mod 4.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::dynamics::evolve_spectral;
use crate::error::{DimerError, Result};
use crate::model::{observe, spdm, DimerParams, StateVector, C64};
use crate::spectra::diagonalize;

pub fn revival_period(interaction: f64) -> Result<f64> {
    if !(interaction > 0.0) {
        return Err(DimerError::NoRevival);
    }
    Ok(PI / interaction)
}

/// Map applied to the Fock amplitudes by evolution over one period.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PhaseAction {
    Identity,
    GlobalMinus,
    /// `c_n -> (-1)^n c_n`
    Alternating,
    /// `c_n -> -(-1)^n c_n`
    MinusAlternating,
}

impl PhaseAction {
    pub fn sign(&self, n: usize) -> f64 {
        let alt = if n.is_multiple_of(2) { 1.0 } else { -1.0 };
        match self {
            PhaseAction::Identity => 1.0,
            PhaseAction::GlobalMinus => -1.0,
            PhaseAction::Alternating => alt,
            PhaseAction::MinusAlternating => -alt,
        }
    }

    pub fn apply(&self, state: &StateVector) -> StateVector {
        let amps = state
            .amplitudes()
            .iter()
            .enumerate()
            .map(|(n, c)| c * self.sign(n))
            .collect();
        StateVector::from_raw(amps)
    }

    /// True when the map is a global phase, i.e. the state itself revives.
    pub fn is_global(&self) -> bool {
        matches!(self, PhaseAction::Identity | PhaseAction::GlobalMinus)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RevivalPattern {
    pub n_atoms: usize,
    /// `N mod 4`, with 0 reported as 4.
    pub n_mod4_case: usize,
    pub action: PhaseAction,
}

pub fn revival_phase_pattern(n_atoms: usize) -> Result<RevivalPattern> {
    if n_atoms == 0 {
        return Err(DimerError::InvalidParams("N must be at least 1".into()));
    }
    let case = match n_atoms % 4 {
        0 => 4,
        r => r,
    };
    let action = match case {
        1 => PhaseAction::Identity,
        2 => PhaseAction::MinusAlternating,
        3 => PhaseAction::GlobalMinus,
        _ => PhaseAction::Alternating,
    };
    Ok(RevivalPattern {
        n_atoms,
        n_mod4_case: case,
        action,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WavefunctionRevival {
    /// `max_n |psi(tau)_n - predicted_n|` with the predicted signs as is.
    pub deviation: f64,
    /// Same after removing the best-fit global phase.
    pub deviation_up_to_phase: f64,
}

fn evolve_j0(n_atoms: usize, interaction: f64, state0: &StateVector, t: f64) -> Result<StateVector> {
    let params = DimerParams::new(n_atoms, 0.0, interaction)?;
    Ok(evolve_spectral(state0, &diagonalize(&params)?, t))
}

fn check_state(n_atoms: usize, state0: &StateVector) -> Result<()> {
    if state0.n_atoms() != n_atoms {
        return Err(DimerError::InvalidInput(format!(
            "state has {} atoms, expected {n_atoms}",
            state0.n_atoms()
        )));
    }
    Ok(())
}

/// Evolves `state0` at J = 0 for one period and compares with the
/// predicted sign pattern.
pub fn verify_wavefunction_revival(n_atoms: usize, interaction: f64, state0: &StateVector) -> Result<WavefunctionRevival> {
    check_state(n_atoms, state0)?;
    let tau = revival_period(interaction)?;
    let pattern = revival_phase_pattern(n_atoms)?;
    let evolved = evolve_j0(n_atoms, interaction, state0, tau)?;
    let predicted = pattern.action.apply(state0);
    let max_dev = |a: &[C64], b: &[C64]| a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max);
    let deviation = max_dev(evolved.amplitudes(), predicted.amplitudes());
    let overlap = predicted.inner(&evolved);
    let phase = if overlap.norm() > 0.0 {
        overlap / overlap.norm()
    } else {
        C64::new(1.0, 0.0)
    };
    let aligned: Vec<C64> = predicted.amplitudes().iter().map(|c| c * phase).collect();
    Ok(WavefunctionRevival {
        deviation,
        deviation_up_to_phase: max_dev(evolved.amplitudes(), &aligned),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObservableRevival {
    pub condensate_fraction_deviation: f64,
    pub epr_deviation: f64,
    pub rho12_initial: C64,
    pub rho12_at_tau: C64,
}

impl ObservableRevival {
    /// `|rho12(tau) + rho12(0)|`, which vanishes when the coherence flips.
    pub fn sign_flip_residual(&self) -> f64 {
        (self.rho12_at_tau + self.rho12_initial).norm()
    }
}

/// Condensate fraction and EPR after one period at J = 0, which revive for
/// every N even when the wavefunction does not.
pub fn verify_observable_revival(n_atoms: usize, interaction: f64, state0: &StateVector) -> Result<ObservableRevival> {
    check_state(n_atoms, state0)?;
    let tau = revival_period(interaction)?;
    let evolved = evolve_j0(n_atoms, interaction, state0, tau)?;
    let (a, b) = (observe(state0), observe(&evolved));
    Ok(ObservableRevival {
        condensate_fraction_deviation: (a.condensate_fraction - b.condensate_fraction).abs(),
        epr_deviation: (a.epr - b.epr).abs(),
        rho12_initial: spdm(state0).rho12,
        rho12_at_tau: spdm(&evolved).rho12,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{coherent_state_n, PhasePoint};
    use approx::assert_relative_eq;

    #[test]
    fn period() {
        assert_relative_eq!(revival_period(PI).unwrap(), 1.0);
        assert!((revival_period(100.0 / 39.0).unwrap() - 1.225).abs() < 5e-4);
        assert_eq!(revival_period(0.0), Err(DimerError::NoRevival));
    }

    #[test]
    fn patterns_by_residue() {
        assert_eq!(revival_phase_pattern(5).unwrap().action, PhaseAction::Identity);
        assert_eq!(revival_phase_pattern(7).unwrap().action, PhaseAction::GlobalMinus);
        assert_eq!(revival_phase_pattern(4).unwrap().action, PhaseAction::Alternating);
        assert_eq!(revival_phase_pattern(6).unwrap().action, PhaseAction::MinusAlternating);
        assert_eq!(revival_phase_pattern(8).unwrap().n_mod4_case, 4);
    }

    #[test]
    fn pattern_matches_integer_phases() {
        // exp(-i pi h_n) = (-1)^h_n
        for n_atoms in 1..=20usize {
            let action = revival_phase_pattern(n_atoms).unwrap().action;
            for n in 0..=n_atoms {
                let h = (n * n.saturating_sub(1) + (n_atoms - n) * (n_atoms - n).saturating_sub(1)) / 2;
                let sign = if h % 2 == 0 { 1.0 } else { -1.0 };
                assert_eq!(action.sign(n), sign, "N={n_atoms} n={n}");
            }
        }
    }

    #[test]
    fn wavefunction_revival_examples() {
        let s = coherent_state_n(6, PhasePoint::new(0.31, 2.4).unwrap());
        assert!(verify_wavefunction_revival(6, 1.3, &s).unwrap().deviation < 1e-12);
        let s = coherent_state_n(3, PhasePoint::new(-0.5, 0.7).unwrap());
        assert!(verify_wavefunction_revival(3, 0.8, &s).unwrap().deviation < 1e-12);
        for n in 1..=9 {
            let r = verify_wavefunction_revival(n, 2.0, &StateVector::fock(n, n / 3)).unwrap();
            assert!(r.deviation_up_to_phase < 1e-12);
        }
    }

    #[test]
    fn observables_revive_and_coherence_flips() {
        let s = coherent_state_n(4, PhasePoint::new(0.2, 1.1).unwrap());
        let r = verify_observable_revival(4, 0.9, &s).unwrap();
        assert!(r.condensate_fraction_deviation < 1e-10 && r.epr_deviation < 1e-10);
        assert!(r.sign_flip_residual() < 1e-10);
        assert!(r.rho12_initial.norm() > 0.1);

        let s = coherent_state_n(5, PhasePoint::new(0.2, 1.1).unwrap());
        let r = verify_observable_revival(5, 0.9, &s).unwrap();
        assert!(r.condensate_fraction_deviation < 1e-12 && r.epr_deviation < 1e-12);
    }

    #[test]
    fn double_period_restores_even_n() {
        let s = coherent_state_n(6, PhasePoint::new(0.4, 0.3).unwrap());
        let u = 1.7;
        let back = evolve_j0(6, u, &s, 2.0 * revival_period(u).unwrap()).unwrap();
        let dev = back
            .amplitudes()
            .iter()
            .zip(s.amplitudes())
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max);
        assert!(dev < 1e-12);
    }
}
