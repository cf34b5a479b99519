//! Unitary time evolution, observable time series and their power spectra.

use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{DimerError, Result};
use crate::linalg;
use crate::model::{build_hamiltonian, observe, DimerParams, Observables, StateVector, C64};
use crate::spectra::{project_top_k_in, EigenDecomposition};

/// Relative norm drift at which RK4 gives up.
pub const RK4_NORM_TOLERANCE: f64 = 1e-6;

/// `psi(t) = sum_n a_n exp(-i E_n t) |E_n>` with `a_n = <E_n|psi(0)>`.
pub fn evolve_spectral(state0: &StateVector, eig: &EigenDecomposition, t: f64) -> StateVector {
    let coeffs = eig.coefficients(state0);
    evolve_coefficients(&coeffs, eig, t)
}

fn evolve_coefficients(coeffs: &[C64], eig: &EigenDecomposition, t: f64) -> StateVector {
    let phased: Vec<C64> = coeffs
        .iter()
        .zip(eig.energies())
        .map(|(a, &e)| a * C64::from_polar(1.0, -e * t))
        .collect();
    StateVector::from_raw(eig.synthesize(&phased))
}

/// Default RK4 step: `1e-4 / max(J, U N)`.
pub fn default_rk4_dt(params: &DimerParams) -> f64 {
    let scale = params
        .tunneling()
        .max(params.interaction() * params.n_atoms() as f64);
    if scale > 0.0 {
        1e-4 / scale
    } else {
        1e-4
    }
}

/// Classical fourth-order Runge-Kutta for `i dpsi/dt = H psi`, without
/// renormalization. `dt = None` picks [`default_rk4_dt`]; the last step is
/// shortened to land exactly on `t`, and negative `t` integrates backwards.
pub fn evolve_rk4(state0: &StateVector, params: &DimerParams, t: f64, dt: Option<f64>) -> Result<StateVector> {
    let dt = dt.unwrap_or_else(|| default_rk4_dt(params));
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(DimerError::InvalidInput(format!("dt must be positive, got {dt}")));
    }
    if state0.n_atoms() != params.n_atoms() {
        return Err(DimerError::InvalidInput("state and params differ in N".into()));
    }
    let h = build_hamiltonian(params);
    let n = state0.dim();
    let norm0 = state0.norm_sqr();
    let mut psi = state0.amplitudes().to_vec();
    let steps = (t.abs() / dt).ceil() as usize;
    if steps == 0 {
        return Ok(state0.clone());
    }
    let h_step = t / steps as f64;
    let minus_i = C64::new(0.0, -1.0);
    let (mut k1, mut k2, mut k3, mut k4) = (vec![C64::default(); n], vec![C64::default(); n], vec![C64::default(); n], vec![C64::default(); n]);
    let mut tmp = vec![C64::default(); n];
    for _ in 0..steps {
        h.apply_into(&psi, &mut k1);
        k1.iter_mut().for_each(|x| *x *= minus_i);
        for i in 0..n {
            tmp[i] = psi[i] + k1[i] * (0.5 * h_step);
        }
        h.apply_into(&tmp, &mut k2);
        k2.iter_mut().for_each(|x| *x *= minus_i);
        for i in 0..n {
            tmp[i] = psi[i] + k2[i] * (0.5 * h_step);
        }
        h.apply_into(&tmp, &mut k3);
        k3.iter_mut().for_each(|x| *x *= minus_i);
        for i in 0..n {
            tmp[i] = psi[i] + k3[i] * h_step;
        }
        h.apply_into(&tmp, &mut k4);
        k4.iter_mut().for_each(|x| *x *= minus_i);
        for i in 0..n {
            psi[i] += (k1[i] + (k2[i] + k3[i]) * 2.0 + k4[i]) * (h_step / 6.0);
        }
    }
    let drift = (linalg::norm_sqr(&psi) - norm0).abs() / norm0;
    if drift > RK4_NORM_TOLERANCE {
        return Err(DimerError::StepTooLarge(format!(
            "RK4 norm drift {drift:.3e} with dt = {dt:e}"
        )));
    }
    Ok(StateVector::from_raw(psi))
}

/// Sampled observables of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeries {
    pub times: Vec<f64>,
    pub records: Vec<Observables>,
    /// Top-k projection norm per time, when requested.
    pub projection_norm: Option<Vec<f64>>,
}

impl TimeSeries {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn condensate_fraction(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.condensate_fraction).collect()
    }

    pub fn epr(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.epr).collect()
    }

    pub fn z(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.z).collect()
    }
}

pub fn check_time_grid(t_grid: &[f64]) -> Result<()> {
    if t_grid.is_empty() {
        return Err(DimerError::InvalidInput("empty time grid".into()));
    }
    if t_grid.iter().any(|t| !t.is_finite()) {
        return Err(DimerError::InvalidInput("non-finite time in grid".into()));
    }
    if t_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(DimerError::InvalidInput("time grid must be strictly increasing".into()));
    }
    Ok(())
}

/// `n` points `0, dt, 2 dt, ...` computed by multiplication (no drift).
pub fn uniform_grid(t_final: f64, dt: f64) -> Result<Vec<f64>> {
    if !(dt > 0.0 && t_final >= 0.0 && t_final.is_finite()) {
        return Err(DimerError::InvalidInput(format!(
            "need dt > 0 and t_final >= 0, got dt = {dt}, t_final = {t_final}"
        )));
    }
    let n = (t_final / dt + 1e-9).floor() as usize;
    Ok((0..=n).map(|i| i as f64 * dt).collect())
}

/// Observables of the spectrally evolved state at each time.
pub fn observable_series(state0: &StateVector, eig: &EigenDecomposition, t_grid: &[f64]) -> Result<TimeSeries> {
    series_impl(state0, eig, t_grid, None)
}

/// As [`observable_series`], also recording the top-`k` projection norm.
pub fn observable_series_with_projection(
    state0: &StateVector,
    eig: &EigenDecomposition,
    t_grid: &[f64],
    k: usize,
) -> Result<TimeSeries> {
    series_impl(state0, eig, t_grid, Some(k))
}

fn series_impl(state0: &StateVector, eig: &EigenDecomposition, t_grid: &[f64], k: Option<usize>) -> Result<TimeSeries> {
    check_time_grid(t_grid)?;
    if state0.dim() != eig.dim() {
        return Err(DimerError::InvalidInput("state and decomposition differ in N".into()));
    }
    let coeffs = eig.coefficients(state0);
    let basis = k.map(|_| eig.localized());
    let rows: Vec<(Observables, Option<f64>)> = t_grid
        .par_iter()
        .map(|&t| {
            let psi = evolve_coefficients(&coeffs, eig, t);
            let proj = match (&basis, k) {
                (Some(b), Some(k)) => Some(project_top_k_in(&psi, b, k)?.norm_sq),
                _ => None,
            };
            Ok((observe(&psi), proj))
        })
        .collect::<Result<_>>()?;
    let projection_norm = k.map(|_| rows.iter().map(|r| r.1.unwrap_or(f64::NAN)).collect());
    Ok(TimeSeries {
        times: t_grid.to_vec(),
        records: rows.into_iter().map(|r| r.0).collect(),
        projection_norm,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Peak {
    pub frequency: f64,
    pub power: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralPeaks {
    /// Local maxima above DC, strongest first.
    pub peaks: Vec<Peak>,
    /// Bin spacing, the inverse of the record span.
    pub resolution: f64,
    pub nyquist: f64,
}

impl SpectralPeaks {
    pub fn strongest(&self) -> Option<Peak> {
        self.peaks.first().copied()
    }

    /// Strongest peak with frequency in `[lo, hi]`.
    pub fn strongest_in(&self, lo: f64, hi: f64) -> Option<Peak> {
        self.peaks
            .iter()
            .find(|p| p.frequency >= lo && p.frequency <= hi)
            .copied()
    }
}

/// Power spectrum of a uniformly sampled real series after mean removal,
/// rectangular window, peaks refined by a parabola through the three bins
/// around each local maximum.
pub fn power_spectrum(values: &[f64], times: &[f64]) -> Result<SpectralPeaks> {
    let n = values.len();
    if n != times.len() {
        return Err(DimerError::InvalidInput("values and times differ in length".into()));
    }
    if n < 16 {
        return Err(DimerError::InvalidInput(format!("need at least 16 samples, got {n}")));
    }
    let dt = (times[n - 1] - times[0]) / (n - 1) as f64;
    if !(dt > 0.0) || times.windows(2).any(|w| ((w[1] - w[0]) - dt).abs() > 1e-6 * dt) {
        return Err(DimerError::NonUniformSampling);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let scale = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut buf: Vec<C64> = values.iter().map(|v| C64::new(v - mean, 0.0)).collect();
    let resolution = 1.0 / (n as f64 * dt);
    let nyquist = 0.5 / dt;
    let var = buf.iter().map(|c| c.re * c.re).sum::<f64>() / n as f64;
    if var <= (1e-12 * scale).powi(2) {
        return Ok(SpectralPeaks {
            peaks: Vec::new(),
            resolution,
            nyquist,
        });
    }
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let half = n / 2;
    let power: Vec<f64> = buf[..=half].iter().map(|c| c.norm_sqr()).collect();
    let pmax = power[1..].iter().fold(0.0f64, |m, &p| m.max(p));
    let mut peaks = Vec::new();
    for k in 1..=half {
        let left = power[k - 1];
        let right = if k < half { power[k + 1] } else { f64::NEG_INFINITY };
        if !(power[k] > left && power[k] >= right) || power[k] <= 1e-12 * pmax {
            continue;
        }
        let (offset, peak_power) = if k < half {
            let denom = left - 2.0 * power[k] + right;
            if denom < 0.0 {
                let d = 0.5 * (left - right) / denom;
                (d, power[k] - 0.25 * (left - right) * d)
            } else {
                (0.0, power[k])
            }
        } else {
            (0.0, power[k])
        };
        peaks.push(Peak {
            frequency: ((k as f64 + offset) * resolution).clamp(0.0, nyquist),
            power: peak_power,
        });
    }
    peaks.sort_by(|a, b| b.power.total_cmp(&a.power));
    Ok(SpectralPeaks {
        peaks,
        resolution,
        nyquist,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{coherent_state_n, PhasePoint};
    use crate::spectra::diagonalize;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    fn reference_params() -> DimerParams {
        DimerParams::new(40, 10.0, 100.0 / 39.0).unwrap()
    }

    fn distance(a: &StateVector, b: &StateVector) -> f64 {
        a.amplitudes()
            .iter()
            .zip(b.amplitudes())
            .map(|(x, y)| (x - y).norm_sqr())
            .sum::<f64>()
            .sqrt()
    }

    #[test]
    fn zero_time_is_identity() {
        let p = DimerParams::new(8, 1.0, 0.5).unwrap();
        let eig = diagonalize(&p).unwrap();
        let s = coherent_state_n(8, PhasePoint::new(0.3, 2.0).unwrap());
        assert!(distance(&evolve_spectral(&s, &eig, 0.0), &s) < 1e-13);
        assert_eq!(evolve_rk4(&s, &p, 0.0, None).unwrap(), s);
    }

    #[test]
    fn rabi_oscillation_single_atom() {
        let j = 10.0;
        let p = DimerParams::new(1, j, 0.0).unwrap();
        let eig = diagonalize(&p).unwrap();
        let s = StateVector::fock(1, 1);
        for t in [0.01, 0.1, 0.37] {
            let exact = (j * t).cos().powi(2);
            assert_relative_eq!(evolve_spectral(&s, &eig, t).amplitudes()[1].norm_sqr(), exact, epsilon = 1e-12);
            let rk = evolve_rk4(&s, &p, t, Some(1e-5)).unwrap();
            assert_relative_eq!(rk.amplitudes()[1].norm_sqr(), exact, epsilon = 1e-9);
        }
    }

    #[test]
    fn stationary_state_has_constant_observables() {
        let eig = diagonalize(&DimerParams::new(10, 1.0, 0.4).unwrap()).unwrap();
        let grid: Vec<f64> = (0..20).map(|i| i as f64 * 0.3).collect();
        let ts = observable_series(&eig.eigenstate(3), &eig, &grid).unwrap();
        for r in &ts.records {
            assert_relative_eq!(r.condensate_fraction, ts.records[0].condensate_fraction, epsilon = 1e-12);
            assert_relative_eq!(r.epr, ts.records[0].epr, epsilon = 1e-10);
            assert_relative_eq!(r.z, ts.records[0].z, epsilon = 1e-12);
        }
    }

    #[test]
    fn composition_and_reversal() {
        let p = reference_params();
        let eig = diagonalize(&p).unwrap();
        let s = coherent_state_n(40, PhasePoint::new(0.95, PI).unwrap());
        let a = evolve_spectral(&evolve_spectral(&s, &eig, 0.3), &eig, 0.45);
        let b = evolve_spectral(&s, &eig, 0.75);
        assert!(distance(&a, &b) < 1e-10);
        let back = evolve_spectral(&evolve_spectral(&s, &eig, 0.6), &eig, -0.6);
        assert!(distance(&back, &s) < 1e-10);
        assert_relative_eq!(b.norm_sqr(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn rk4_agrees_with_spectral_small() {
        let p = DimerParams::new(6, 2.0, 1.0).unwrap();
        let eig = diagonalize(&p).unwrap();
        let s = coherent_state_n(6, PhasePoint::new(-0.4, 1.0).unwrap());
        let a = evolve_rk4(&s, &p, 0.8, None).unwrap();
        let b = evolve_spectral(&s, &eig, 0.8);
        assert!(distance(&a, &b) < 1e-8);
        assert_relative_eq!(a.energy(&p), s.energy(&p), max_relative = 1e-9);
        assert!(evolve_rk4(&s, &p, 0.8, Some(0.5)).is_err());
    }

    #[test]
    fn series_rejects_bad_grids() {
        let eig = diagonalize(&DimerParams::new(3, 1.0, 1.0).unwrap()).unwrap();
        let s = StateVector::fock(3, 0);
        assert!(observable_series(&s, &eig, &[0.0, 0.0]).is_err());
        assert!(observable_series(&s, &eig, &[]).is_err());
    }

    #[test]
    fn cosine_peak() {
        let times: Vec<f64> = (0..1000).map(|i| i as f64 * 0.01).collect();
        let vals: Vec<f64> = times.iter().map(|t| (2.0 * PI * 3.0 * t).cos()).collect();
        let sp = power_spectrum(&vals, &times).unwrap();
        assert!((sp.strongest().unwrap().frequency - 3.0).abs() <= sp.resolution);
        assert_relative_eq!(sp.nyquist, 50.0, epsilon = 1e-9);

        let off: Vec<f64> = times.iter().map(|t| (2.0 * PI * 3.04 * t).sin()).collect();
        let sp = power_spectrum(&off, &times).unwrap();
        assert!((sp.strongest().unwrap().frequency - 3.04).abs() < 0.05);
    }

    #[test]
    fn constant_series_has_no_peak() {
        let times: Vec<f64> = (0..64).map(|i| i as f64 * 0.1).collect();
        let sp = power_spectrum(&vec![0.7; 64], &times).unwrap();
        assert!(sp.peaks.is_empty());
    }

    #[test]
    fn spectrum_input_checks() {
        let mut times: Vec<f64> = (0..32).map(|i| i as f64 * 0.1).collect();
        times[5] += 0.03;
        assert_eq!(power_spectrum(&[0.0; 32], &times), Err(DimerError::NonUniformSampling));
        assert!(power_spectrum(&[0.0; 8], &times[..8]).is_err());
    }

    #[test]
    fn uniform_grid_endpoints() {
        let g = uniform_grid(4.0, 0.01).unwrap();
        assert_eq!(g.len(), 401);
        assert_relative_eq!(g[400], 4.0, epsilon = 1e-12);
    }
}
