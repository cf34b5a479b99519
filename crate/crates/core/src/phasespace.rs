//! Phase-space scans over coherent initial states, entangled fractions,
//! Husimi fields and the equal-area map of the Bloch sphere.

use std::f64::consts::TAU;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dissipation::{JumpConfig, LossEngine, LossSchedule};
use crate::dynamics::{check_time_grid, evolve_spectral};
use crate::error::{DimerError, Result};
use crate::model::{coherent_state_n, observe, DimerParams, PhaseGrid, PhasePoint, StateVector};
use crate::spectra::diagonalize;

/// Real field on a (z, phi) grid, row-major with z as the outer index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanField {
    pub z_grid: Vec<f64>,
    pub phi_grid: Vec<f64>,
    pub values: Vec<f64>,
    pub observable: String,
    pub time: f64,
    pub params: DimerParams,
}

impl ScanField {
    pub fn new(grid: &PhaseGrid, values: Vec<f64>, observable: String, time: f64, params: DimerParams) -> Self {
        assert_eq!(values.len(), grid.n_z * grid.n_phi, "field size mismatch");
        Self {
            z_grid: grid.z_axis(),
            phi_grid: grid.phi_axis(),
            values,
            observable,
            time,
            params,
        }
    }

    pub fn get(&self, iz: usize, iphi: usize) -> f64 {
        self.values[iz * self.phi_grid.len() + iphi]
    }

    /// `(z, phi, value)` for every node, z outer.
    pub fn nodes(&self) -> impl Iterator<Item = (f64, f64, f64)> + '_ {
        let np = self.phi_grid.len();
        self.values
            .iter()
            .enumerate()
            .map(move |(k, &v)| (self.z_grid[k / np], self.phi_grid[k % np], v))
    }

    pub fn argmax(&self) -> (usize, usize) {
        let k = (0..self.values.len())
            .max_by(|&a, &b| self.values[a].total_cmp(&self.values[b]))
            .unwrap_or(0);
        (k / self.phi_grid.len(), k % self.phi_grid.len())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScanObservable {
    CondensateFraction,
    Epr,
}

impl ScanObservable {
    pub fn name(&self) -> &'static str {
        match self {
            ScanObservable::CondensateFraction => "condensate_fraction",
            ScanObservable::Epr => "epr",
        }
    }
}

/// Observable after unitary evolution to `t_final` from the coherent state
/// at every grid node.
pub fn scan_observable(params: &DimerParams, grid: &PhaseGrid, t_final: f64, observable: ScanObservable) -> Result<ScanField> {
    let eig = diagonalize(params)?;
    let values = grid
        .points()
        .par_iter()
        .map(|&p| {
            let s = evolve_spectral(&coherent_state_n(params.n_atoms(), p), &eig, t_final);
            let o = observe(&s);
            match observable {
                ScanObservable::CondensateFraction => o.condensate_fraction,
                ScanObservable::Epr => o.epr,
            }
        })
        .collect();
    Ok(ScanField::new(grid, values, observable.name().into(), t_final, *params))
}

/// `|<z, phi|psi>|^2` at every node.
pub fn husimi_field(state: &StateVector, grid: &PhaseGrid) -> ScanField {
    let n = state.n_atoms();
    let values = grid
        .points()
        .par_iter()
        .map(|&p| coherent_state_n(n, p).inner(state).norm_sqr())
        .collect();
    // the field itself does not depend on the Hamiltonian
    let params = DimerParams::new(n.max(1), 0.0, 0.0).expect("valid placeholder params");
    ScanField::new(grid, values, "husimi".into(), 0.0, params)
}

/// Cylindrical equal-area map: `x = phi`, `y = z`.
pub fn lambert_project(point: PhasePoint) -> (f64, f64) {
    (point.phi(), point.z())
}

/// Inverse of [`lambert_project`] for `x` in [0, 2 pi), `y` in [-1, 1].
pub fn lambert_unproject(x: f64, y: f64) -> Result<PhasePoint> {
    PhasePoint::new(y, x)
}

/// `n_z * n_phi` points at the cell centres of a uniform (z, phi) grid.
/// Uniform in z is uniform in area on the sphere, and no sample sits on a
/// pole.
pub fn uniform_samples(n_z: usize, n_phi: usize) -> Vec<PhasePoint> {
    let mut out = Vec::with_capacity(n_z * n_phi);
    for i in 0..n_z {
        let z = -1.0 + (i as f64 + 0.5) * 2.0 / n_z as f64;
        for j in 0..n_phi {
            let phi = (j as f64 + 0.5) * TAU / n_phi as f64;
            out.push(PhasePoint::new(z, phi).expect("cell centre in range"));
        }
    }
    out
}

/// Splits a sample count into the most nearly square `n_z x n_phi` grid
/// with `n_z <= n_phi`.
pub fn sample_grid_shape(samples: usize) -> (usize, usize) {
    let n_z = (1..=samples)
        .take_while(|k| k * k <= samples)
        .filter(|k| samples.is_multiple_of(*k))
        .last()
        .unwrap_or(1);
    (n_z, samples / n_z)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FractionSeries {
    pub times: Vec<f64>,
    pub fraction: Vec<f64>,
    pub n_samples: usize,
}

pub const MIN_FRACTION_SAMPLES: usize = 100;

/// Fraction of coherent initial states with EPR > 0 at each time. With a
/// loss schedule an initial state counts when the EPR value averaged over
/// its trajectories is positive; sample `i` uses the seed
/// `sample_seed(config.rng_seed, i)`.
pub fn entangled_fraction(
    params: &DimerParams,
    samples: &[PhasePoint],
    t_grid: &[f64],
    loss: Option<(&LossSchedule, &JumpConfig)>,
) -> Result<FractionSeries> {
    if samples.len() < MIN_FRACTION_SAMPLES {
        return Err(DimerError::InvalidInput(format!(
            "need at least {MIN_FRACTION_SAMPLES} samples, got {}",
            samples.len()
        )));
    }
    check_time_grid(t_grid)?;
    let n = params.n_atoms();
    let flags: Vec<Vec<bool>> = match loss {
        None => {
            let eig = diagonalize(params)?;
            samples
                .par_iter()
                .map(|&p| {
                    let s = coherent_state_n(n, p);
                    let coeffs = eig.coefficients(&s);
                    t_grid
                        .iter()
                        .map(|&t| {
                            let phased: Vec<_> = coeffs
                                .iter()
                                .zip(eig.energies())
                                .map(|(a, &e)| a * crate::model::C64::from_polar(1.0, -e * t))
                                .collect();
                            let psi = StateVector::from_raw(eig.synthesize(&phased));
                            crate::model::epr(&psi) > 0.0
                        })
                        .collect()
                })
                .collect()
        }
        Some((schedule, config)) => {
            let engine = LossEngine::new(params, schedule, config, t_grid)?;
            samples
                .par_iter()
                .enumerate()
                .map(|(i, &p)| {
                    let ens = engine.ensemble(&coherent_state_n(n, p), sample_seed(config.rng_seed, i as u64))?;
                    Ok(ens.trajectory_epr().into_iter().map(|e| e > 0.0).collect())
                })
                .collect::<Result<_>>()?
        }
    };
    let len = flags[0].len();
    let times = match loss {
        Some((_, config)) => t_grid.iter().step_by(config.record_stride).copied().collect(),
        None => t_grid.to_vec(),
    };
    let fraction = (0..len)
        .map(|k| flags.iter().filter(|f| f[k]).count() as f64 / samples.len() as f64)
        .collect();
    Ok(FractionSeries {
        times,
        fraction,
        n_samples: samples.len(),
    })
}

/// SplitMix64 mix of a base seed and a sample index.
pub fn sample_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    fn reference_params() -> DimerParams {
        DimerParams::new(40, 10.0, 100.0 / 39.0).unwrap()
    }

    #[test]
    fn scans_at_time_zero() {
        let g = PhaseGrid::new(9, 8).unwrap();
        let p = DimerParams::from_lambda(12, 10.0, 5.0).unwrap();
        let c = scan_observable(&p, &g, 0.0, ScanObservable::CondensateFraction).unwrap();
        assert!(c.values.iter().all(|v| (v - 1.0).abs() < 1e-12));
        let e = scan_observable(&p, &g, 0.0, ScanObservable::Epr).unwrap();
        for (z, _, v) in e.nodes() {
            assert_relative_eq!(v, 12.0 * (1.0 - z * z) / 4.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn relabel_symmetry_of_scan() {
        let g = PhaseGrid::new(11, 10).unwrap();
        let p = DimerParams::from_lambda(10, 10.0, 3.0).unwrap();
        let f = scan_observable(&p, &g, 0.37, ScanObservable::Epr).unwrap();
        for i in 0..11 {
            for j in 0..10 {
                let jj = (10 - j) % 10;
                assert!((f.get(i, j) - f.get(10 - i, jj)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn husimi_peak_bounds_and_normalization() {
        let g = PhaseGrid::new(81, 80).unwrap();
        let p0 = PhasePoint::new(0.5, 2.0).unwrap();
        let s = coherent_state_n(10, p0);
        let h = husimi_field(&s, &g);
        let (iz, ip) = h.argmax();
        assert!((h.z_grid[iz] - 0.5).abs() <= 0.5 * 2.0 / 80.0 + 1e-12);
        assert!((h.phi_grid[ip] - 2.0).abs() <= 0.5 * TAU / 80.0 + 1e-12);
        assert!(h.values.iter().all(|v| (0.0..=1.0 + 1e-12).contains(v)));

        // midpoint rule on cell centres
        let (nz, np) = (200, 200);
        let area = (2.0 / nz as f64) * (TAU / np as f64);
        let integral: f64 = uniform_samples(nz, np)
            .iter()
            .map(|&q| coherent_state_n(10, q).inner(&s).norm_sqr())
            .sum::<f64>()
            * area;
        assert_relative_eq!(integral * 11.0 / (4.0 * PI), 1.0, epsilon = 1e-3);
    }

    #[test]
    fn lambert_examples() {
        assert_eq!(lambert_project(PhasePoint::new(0.0, 0.0).unwrap()), (0.0, 0.0));
        assert_eq!(lambert_project(PhasePoint::new(1.0, PI).unwrap()), (PI, 1.0));
        let q = lambert_unproject(1.0, -0.3).unwrap();
        assert_eq!((q.z(), q.phi()), (-0.3, 1.0));
    }

    #[test]
    fn samples_and_shape() {
        let s = uniform_samples(20, 25);
        assert_eq!(s.len(), 500);
        assert!(s.iter().all(|p| p.z().abs() < 1.0));
        assert_eq!(sample_grid_shape(500), (20, 25));
        let (a, b) = sample_grid_shape(10_000);
        assert_eq!((a, b), (100, 100));
    }

    #[test]
    fn fraction_starts_at_one() {
        let p = reference_params();
        let samples = uniform_samples(10, 12);
        let fs = entangled_fraction(&p, &samples, &[0.0, 0.5], None).unwrap();
        assert_eq!(fs.fraction[0], 1.0);
        assert!(fs.fraction[1] < 1.0);
        assert!(entangled_fraction(&p, &samples[..50], &[0.0], None).is_err());
    }

    #[test]
    fn lossless_schedule_matches_unitary_fraction() {
        let p = DimerParams::from_lambda(12, 10.0, 5.0).unwrap();
        let samples = uniform_samples(10, 10);
        let g: Vec<f64> = (0..20).map(|i| i as f64 * 0.05).collect();
        let none = LossSchedule::none();
        let cfg = JumpConfig::new(&none, 12, 1, 2);
        let a = entangled_fraction(&p, &samples, &g, None).unwrap();
        let b = entangled_fraction(&p, &samples, &g, Some((&none, &cfg))).unwrap();
        assert_eq!(a.fraction, b.fraction);
    }

    #[test]
    fn seeds_differ_per_sample() {
        assert_ne!(sample_seed(1, 0), sample_seed(1, 1));
        assert_ne!(sample_seed(1, 0), sample_seed(2, 0));
    }
}
