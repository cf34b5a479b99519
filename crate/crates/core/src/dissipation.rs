//! Localized atom loss: quantum-jump trajectories, ensemble averages and a
//! density-matrix integrator of the Lindblad equation used as an oracle.
//!
//! Loss from well j at rate `gamma_j` has jump operator `sqrt(gamma_j) a_j`.
//! Between jumps a trajectory follows `H' = H - (i/2)(gamma_1 n_1 + gamma_2 n_2)`;
//! each jump removes one atom and shrinks the Fock space from M + 1 to M
//! states.
//!
//! Two unravelings of the same master equation are available:
//!
//! * [`JumpMethod::FixedStep`]: one uniform number per step of length `dt`;
//!   a jump happens with probability `dt * sum_j gamma_j <n_j>`, otherwise
//!   the state takes one `exp(-i H' dt)` step. The state is renormalized
//!   after every step.
//! * [`JumpMethod::WaitingTime`]: the unnormalized state decays under `H'`
//!   until its squared norm falls below a uniform threshold, which marks
//!   the next jump. The crossing is located on the same `dt` grid by
//!   bisection with precomputed propagators for `2^k dt`, so its cost scales
//!   with the number of jumps instead of the number of steps.
//!
//! Spans without loss are propagated exactly in the eigenbasis of the
//! current atom number. Record times inside a loss window are rounded to
//! the window's step grid.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{check_time_grid, TimeSeries};
use crate::error::{DimerError, Result};
use crate::linalg::{self, matvec};
use crate::model::{build_hamiltonian, hop, DimerParams, Moments, Observables, StateVector, C64};
use crate::spectra::{diagonalize, EigenDecomposition};

/// Largest allowed `max_j gamma_j * N * dt`.
pub const MAX_STEP_LOSS: f64 = 0.01;
/// Largest allowed jump probability in a single fixed step.
pub const MAX_JUMP_PROBABILITY: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWindow {
    pub t_start: f64,
    pub t_end: f64,
    pub gamma1: f64,
    pub gamma2: f64,
}

impl LossWindow {
    fn is_lossy(&self) -> bool {
        self.gamma1 > 0.0 || self.gamma2 > 0.0
    }
}

/// Piecewise-constant loss rates; zero outside the windows.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LossSchedule {
    windows: Vec<LossWindow>,
}

impl LossSchedule {
    pub fn new(mut windows: Vec<LossWindow>) -> Result<Self> {
        for w in &windows {
            if !(w.t_start >= 0.0 && w.t_end > w.t_start && w.t_end.is_finite()) {
                return Err(DimerError::InvalidInput(format!(
                    "loss window [{}, {}] must satisfy 0 <= start < end",
                    w.t_start, w.t_end
                )));
            }
            if !(w.gamma1 >= 0.0 && w.gamma2 >= 0.0 && w.gamma1.is_finite() && w.gamma2.is_finite()) {
                return Err(DimerError::InvalidInput("loss rates must be finite and >= 0".into()));
            }
        }
        windows.sort_by(|a, b| a.t_start.total_cmp(&b.t_start));
        if windows.windows(2).any(|p| p[1].t_start < p[0].t_end) {
            return Err(DimerError::InvalidInput("loss windows overlap".into()));
        }
        Ok(Self { windows })
    }

    pub fn none() -> Self {
        Self::default()
    }

    /// Loss from one well (1 or 2) at `rate` during `[t_start, t_end)`.
    pub fn single(well: u8, rate: f64, t_start: f64, t_end: f64) -> Result<Self> {
        let (gamma1, gamma2) = match well {
            1 => (rate, 0.0),
            2 => (0.0, rate),
            _ => return Err(DimerError::InvalidInput(format!("well must be 1 or 2, got {well}"))),
        };
        Self::new(vec![LossWindow {
            t_start,
            t_end,
            gamma1,
            gamma2,
        }])
    }

    pub fn windows(&self) -> &[LossWindow] {
        &self.windows
    }

    pub fn rates_at(&self, t: f64) -> (f64, f64) {
        self.windows
            .iter()
            .find(|w| t >= w.t_start && t < w.t_end)
            .map(|w| (w.gamma1, w.gamma2))
            .unwrap_or((0.0, 0.0))
    }

    pub fn max_rate(&self) -> f64 {
        self.windows
            .iter()
            .fold(0.0f64, |m, w| m.max(w.gamma1).max(w.gamma2))
    }

    pub fn is_lossless(&self) -> bool {
        !self.windows.iter().any(LossWindow::is_lossy)
    }

    fn lossy_windows(&self) -> impl Iterator<Item = &LossWindow> {
        self.windows.iter().filter(|w| w.is_lossy())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum JumpMethod {
    FixedStep,
    WaitingTime,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JumpConfig {
    /// Step length inside loss windows, seconds.
    pub dt: f64,
    pub rng_seed: u64,
    pub n_trajectories: usize,
    /// Keep every `record_stride`-th point of the requested time grid.
    pub record_stride: usize,
    pub method: JumpMethod,
}

impl JumpConfig {
    /// Default step `min(1e-4, 0.01 / (gamma_max N))`, stride 1, fixed steps.
    pub fn new(schedule: &LossSchedule, n_atoms: usize, rng_seed: u64, n_trajectories: usize) -> Self {
        Self {
            dt: default_dt(schedule, n_atoms),
            rng_seed,
            n_trajectories,
            record_stride: 1,
            method: JumpMethod::FixedStep,
        }
    }

    pub fn with_method(mut self, method: JumpMethod) -> Self {
        self.method = method;
        self
    }

    pub fn validate(&self, schedule: &LossSchedule, n_atoms: usize) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(DimerError::InvalidInput(format!("dt must be positive, got {}", self.dt)));
        }
        if self.n_trajectories == 0 {
            return Err(DimerError::InvalidInput("need at least one trajectory".into()));
        }
        if self.record_stride == 0 {
            return Err(DimerError::InvalidInput("record stride must be >= 1".into()));
        }
        let load = schedule.max_rate() * n_atoms as f64 * self.dt;
        if load > MAX_STEP_LOSS * (1.0 + 1e-12) {
            return Err(DimerError::StepTooLarge(format!(
                "gamma_max * N * dt = {load:.3e} exceeds {MAX_STEP_LOSS}"
            )));
        }
        Ok(())
    }
}

pub fn default_dt(schedule: &LossSchedule, n_atoms: usize) -> f64 {
    let g = schedule.max_rate() * n_atoms as f64;
    if g > 0.0 {
        (MAX_STEP_LOSS / g).min(1e-4)
    } else {
        1e-4
    }
}

fn occupations(psi: &[C64]) -> (f64, f64) {
    let m = psi.len() - 1;
    let mut n1 = 0.0;
    let mut n2 = 0.0;
    for (n, c) in psi.iter().enumerate() {
        let p = c.norm_sqr();
        n1 += p * n as f64;
        n2 += p * (m - n) as f64;
    }
    (n1, n2)
}

/// `(dt gamma_1 <n_1>, dt gamma_2 <n_2>)`.
pub fn jump_probabilities(state: &StateVector, gamma1: f64, gamma2: f64, dt: f64) -> Result<(f64, f64)> {
    let norm = state.norm_sqr();
    let (n1, n2) = occupations(state.amplitudes());
    let p = (dt * gamma1 * n1 / norm, dt * gamma2 * n2 / norm);
    if p.0 + p.1 > MAX_JUMP_PROBABILITY {
        return Err(DimerError::StepTooLarge(format!(
            "jump probability {:.3e} per step exceeds {MAX_JUMP_PROBABILITY}",
            p.0 + p.1
        )));
    }
    Ok(p)
}

/// `a_well |psi>` on the (M+1)-dimensional space, landing in M dimensions.
fn annihilate(psi: &[C64], well: u8) -> Vec<C64> {
    let m = psi.len() - 1;
    match well {
        1 => (1..=m).map(|n| psi[n] * (n as f64).sqrt()).collect(),
        _ => (0..m).map(|n| psi[n] * ((m - n) as f64).sqrt()).collect(),
    }
}

/// Removes one atom from `well` (1 or 2) and renormalizes.
pub fn apply_jump(state: &StateVector, well: u8) -> Result<StateVector> {
    if well != 1 && well != 2 {
        return Err(DimerError::InvalidInput(format!("well must be 1 or 2, got {well}")));
    }
    if state.n_atoms() == 0 {
        return Err(DimerError::InvalidJump(well));
    }
    let out = annihilate(state.amplitudes(), well);
    let norm = linalg::norm_sqr(&out);
    if norm == 0.0 {
        return Err(DimerError::InvalidJump(well));
    }
    StateVector::from_amplitudes(out)
}

/// `exp(-i H' dt)` for `M` atoms.
fn nonunitary_propagator(params: &DimerParams, m: usize, gamma1: f64, gamma2: f64, dt: f64) -> DMatrix<C64> {
    let h = build_hamiltonian(&params.with_atoms(m));
    let d = m + 1;
    let mut a = DMatrix::from_fn(d, d, |i, j| C64::new(0.0, -dt * h.get(i, j)));
    for n in 0..d {
        a[(n, n)] -= C64::new(0.5 * dt * (gamma1 * n as f64 + gamma2 * (m - n) as f64), 0.0);
    }
    a.exp()
}

/// One step of the no-jump evolution, not renormalized.
pub fn nonunitary_step(state: &StateVector, params: &DimerParams, gamma1: f64, gamma2: f64, dt: f64) -> StateVector {
    let p = nonunitary_propagator(params, state.n_atoms(), gamma1, gamma2, dt);
    let mut out = vec![C64::default(); state.dim()];
    matvec(&p, state.amplitudes(), &mut out);
    StateVector::from_raw(out)
}

/// State conditioned on no jump during `[0, t]`, renormalized.
pub fn conditional_no_jump(state: &StateVector, params: &DimerParams, gamma1: f64, gamma2: f64, t: f64) -> Result<StateVector> {
    nonunitary_step(state, params, gamma1, gamma2, t).normalized()
}

fn moments_of(psi: &[C64]) -> Moments {
    let norm = linalg::norm_sqr(psi);
    let m = psi.len() - 1;
    if m == 0 {
        return Moments::default();
    }
    let mut out = Moments {
        atoms: m as f64,
        ..Moments::default()
    };
    for (n, c) in psi.iter().enumerate() {
        let p = c.norm_sqr();
        out.n1 += p * n as f64;
        out.n2 += p * (m - n) as f64;
        out.n1n2 += p * (n * (m - n)) as f64;
        if n < m {
            out.rho12 += psi[n + 1].conj() * c * hop(m, n);
        }
    }
    out.n1 /= norm;
    out.n2 /= norm;
    out.n1n2 /= norm;
    out.rho12 /= norm;
    out
}

/// Ensemble-averaged moments with their standard errors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSeries {
    pub times: Vec<f64>,
    pub mean: Vec<Moments>,
    /// Standard error of each mean; the real and imaginary parts of
    /// `rho12` carry their own errors.
    pub stderr: Vec<Moments>,
    /// Condensate fraction and EPR evaluated on each trajectory and then
    /// averaged. Unlike the observables of the averaged moments these do not
    /// mix trajectories that lost different numbers of atoms. NaN for the
    /// density-matrix oracle.
    pub trajectory_mean: Vec<TrajectoryAverage>,
    pub trajectory_stderr: Vec<TrajectoryAverage>,
    pub n_trajectories: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryAverage {
    pub condensate_fraction: f64,
    pub epr: f64,
}

impl TrajectoryAverage {
    const UNDEFINED: Self = Self {
        condensate_fraction: f64::NAN,
        epr: f64::NAN,
    };
}

impl EnsembleSeries {
    /// Observables evaluated on the averaged moments.
    pub fn observables(&self) -> Vec<Observables> {
        self.mean.iter().map(Moments::observables).collect()
    }

    pub fn condensate_fraction(&self) -> Vec<f64> {
        self.observables().iter().map(|o| o.condensate_fraction).collect()
    }

    pub fn epr(&self) -> Vec<f64> {
        self.mean.iter().map(|m| m.epr_value()).collect()
    }

    pub fn trajectory_condensate_fraction(&self) -> Vec<f64> {
        self.trajectory_mean.iter().map(|a| a.condensate_fraction).collect()
    }

    pub fn trajectory_epr(&self) -> Vec<f64> {
        self.trajectory_mean.iter().map(|a| a.epr).collect()
    }
}

impl Moments {
    fn epr_value(&self) -> f64 {
        crate::model::epr_from_moments(self.rho12, self.n1n2)
    }

    /// Moments followed by the trajectory's own condensate fraction and EPR.
    fn to_array(self) -> [f64; CHANNELS] {
        let c = if self.atoms > 0.0 {
            self.observables().condensate_fraction
        } else {
            f64::NAN
        };
        [self.n1, self.n2, self.rho12.re, self.rho12.im, self.n1n2, self.atoms, c, self.epr_value()]
    }

    fn from_array(a: [f64; CHANNELS]) -> Self {
        Self {
            n1: a[0],
            n2: a[1],
            rho12: C64::new(a[2], a[3]),
            n1n2: a[4],
            atoms: a[5],
        }
    }
}

const CHANNELS: usize = 8;

/// Welford accumulator per record time. NaN entries (the condensate
/// fraction of a trajectory that lost every atom) are left out of their
/// channel.
#[derive(Clone)]
struct Accumulator {
    count: usize,
    counts: Vec<[usize; CHANNELS]>,
    mean: Vec<[f64; CHANNELS]>,
    m2: Vec<[f64; CHANNELS]>,
}

impl Accumulator {
    fn new(len: usize) -> Self {
        Self {
            count: 0,
            counts: vec![[0; CHANNELS]; len],
            mean: vec![[0.0; CHANNELS]; len],
            m2: vec![[0.0; CHANNELS]; len],
        }
    }

    fn push(&mut self, rec: &[Moments]) {
        self.count += 1;
        for (((count, mean), m2), x) in self.counts.iter_mut().zip(&mut self.mean).zip(&mut self.m2).zip(rec) {
            let x = x.to_array();
            for i in 0..CHANNELS {
                if x[i].is_nan() {
                    continue;
                }
                count[i] += 1;
                let d = x[i] - mean[i];
                mean[i] += d / count[i] as f64;
                m2[i] += d * (x[i] - mean[i]);
            }
        }
    }

    fn finish(self, times: Vec<f64>) -> EnsembleSeries {
        let se: Vec<[f64; CHANNELS]> = self
            .m2
            .iter()
            .zip(&self.counts)
            .map(|(m2, count)| {
                std::array::from_fn(|i| {
                    let n = count[i] as f64;
                    if count[i] > 1 {
                        (m2[i].max(0.0) / (n - 1.0) / n).sqrt()
                    } else {
                        0.0
                    }
                })
            })
            .collect();
        let mean: Vec<[f64; CHANNELS]> = self
            .mean
            .iter()
            .zip(&self.counts)
            .map(|(m, count)| std::array::from_fn(|i| if count[i] > 0 { m[i] } else { f64::NAN }))
            .collect();
        let traj = |a: &[f64; CHANNELS]| TrajectoryAverage {
            condensate_fraction: a[6],
            epr: a[7],
        };
        EnsembleSeries {
            times,
            trajectory_mean: mean.iter().map(traj).collect(),
            trajectory_stderr: se.iter().map(traj).collect(),
            mean: mean.into_iter().map(Moments::from_array).collect(),
            stderr: se.into_iter().map(Moments::from_array).collect(),
            n_trajectories: self.count,
        }
    }
}

/// Propagators for one loss window, indexed by atom number.
struct WindowPropagators {
    window: LossWindow,
    tick: f64,
    ticks: usize,
    /// `ladder[m][k] = exp(-i H'_m 2^k tick)`.
    ladder: Vec<Vec<DMatrix<C64>>>,
}

/// Everything a trajectory needs that does not depend on the random draws:
/// eigendecompositions for every atom number, window propagators, the
/// record grid and the deterministic evolution up to the first loss window.
pub struct LossEngine {
    params: DimerParams,
    config: JumpConfig,
    times: Vec<f64>,
    eig: Vec<Option<EigenDecomposition>>,
    windows: Vec<WindowPropagators>,
}

const TRAJECTORY_CHUNK: usize = 256;

impl LossEngine {
    pub fn new(params: &DimerParams, schedule: &LossSchedule, config: &JumpConfig, t_grid: &[f64]) -> Result<Self> {
        check_time_grid(t_grid)?;
        if t_grid[0] < 0.0 {
            return Err(DimerError::InvalidInput("record times must be >= 0".into()));
        }
        config.validate(schedule, params.n_atoms())?;
        let n_atoms = params.n_atoms();
        let times: Vec<f64> = t_grid.iter().step_by(config.record_stride).copied().collect();
        let eig = (0..=n_atoms)
            .map(|m| {
                if m == 0 {
                    Ok(None)
                } else {
                    diagonalize(&params.with_atoms(m)).map(Some)
                }
            })
            .collect::<Result<Vec<_>>>()?;
        let windows = schedule
            .lossy_windows()
            .map(|w| {
                let span = w.t_end - w.t_start;
                let ticks = ((span / config.dt) * (1.0 - 1e-12)).ceil().max(1.0) as usize;
                let tick = span / ticks as f64;
                let levels = match config.method {
                    JumpMethod::FixedStep => 1,
                    JumpMethod::WaitingTime => usize::BITS as usize - ticks.leading_zeros() as usize,
                };
                let ladder = (0..=n_atoms)
                    .into_par_iter()
                    .map(|m| {
                        let mut l = Vec::with_capacity(levels);
                        l.push(nonunitary_propagator(params, m, w.gamma1, w.gamma2, tick));
                        for k in 1..levels {
                            let p = &l[k - 1] * &l[k - 1];
                            l.push(p);
                        }
                        l
                    })
                    .collect();
                WindowPropagators {
                    window: *w,
                    tick,
                    ticks,
                    ladder,
                }
            })
            .collect();
        Ok(Self {
            params: *params,
            config: *config,
            times,
            eig,
            windows,
        })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    fn evolve_free(&self, psi: &[C64], t: f64) -> Vec<C64> {
        let m = psi.len() - 1;
        match &self.eig[m] {
            None => psi.to_vec(),
            Some(eig) => {
                if t == 0.0 {
                    return psi.to_vec();
                }
                let coeffs: Vec<C64> = eig
                    .eigenvectors()
                    .iter()
                    .zip(eig.energies())
                    .map(|(v, &e)| linalg::real_inner(v, psi) * C64::from_polar(1.0, -e * t))
                    .collect();
                eig.synthesize(&coeffs)
            }
        }
    }

    /// Records before the first loss window and the state at its start.
    fn prefix(&self, state0: &StateVector) -> (Vec<Moments>, f64, Vec<C64>) {
        let t_loss = self.windows.first().map(|w| w.window.t_start).unwrap_or(f64::INFINITY);
        let psi0 = state0.amplitudes();
        let recs = self
            .times
            .iter()
            .take_while(|&&t| t < t_loss)
            .map(|&t| moments_of(&self.evolve_free(psi0, t)))
            .collect();
        if t_loss.is_finite() {
            (recs, t_loss, self.evolve_free(psi0, t_loss))
        } else {
            (recs, f64::INFINITY, psi0.to_vec())
        }
    }

    fn check_state(&self, state0: &StateVector) -> Result<()> {
        if state0.n_atoms() != self.params.n_atoms() {
            return Err(DimerError::InvalidInput("state and params differ in N".into()));
        }
        Ok(())
    }

    /// One realization with stream `index` of the configured seed.
    pub fn trajectory(&self, state0: &StateVector, seed: u64, index: u64) -> Result<Vec<Moments>> {
        self.check_state(state0)?;
        let state0 = state0.clone().normalized()?;
        let (mut recs, t0, psi) = self.prefix(&state0);
        if recs.len() < self.times.len() {
            let mut rng = trajectory_rng(seed, index);
            recs.extend(self.run_from(psi, t0, recs.len(), &mut rng)?);
        }
        Ok(recs)
    }

    /// Ensemble over `config.n_trajectories` streams of `seed`.
    pub fn ensemble(&self, state0: &StateVector, seed: u64) -> Result<EnsembleSeries> {
        self.check_state(state0)?;
        let state0 = state0.clone().normalized()?;
        let (prefix, t0, psi) = self.prefix(&state0);
        let n_traj = self.config.n_trajectories;
        let mut acc = Accumulator::new(self.times.len());
        if prefix.len() == self.times.len() {
            // nothing stochastic left: every trajectory is the same
            for _ in 0..n_traj {
                acc.push(&prefix);
            }
            return Ok(acc.finish(self.times.clone()));
        }
        let first = prefix.len();
        let mut start = 0;
        while start < n_traj {
            let end = (start + TRAJECTORY_CHUNK).min(n_traj);
            let chunk: Vec<Vec<Moments>> = (start..end)
                .into_par_iter()
                .map(|i| {
                    let mut rng = trajectory_rng(seed, i as u64);
                    self.run_from(psi.clone(), t0, first, &mut rng)
                })
                .collect::<Result<_>>()?;
            let mut full = prefix.clone();
            for tail in chunk {
                full.truncate(first);
                full.extend(tail);
                acc.push(&full);
            }
            start = end;
        }
        Ok(acc.finish(self.times.clone()))
    }

    fn run_from(&self, mut psi: Vec<C64>, mut t: f64, first: usize, rng: &mut ChaCha8Rng) -> Result<Vec<Moments>> {
        let times = &self.times;
        let mut rec = first;
        let mut out = Vec::with_capacity(times.len() - first);
        let mut threshold = draw_threshold(rng);
        for wp in &self.windows {
            let w = &wp.window;
            if w.t_end <= t {
                continue;
            }
            while rec < times.len() && times[rec] < w.t_start {
                out.push(moments_of(&self.evolve_free(&psi, times[rec] - t)));
                rec += 1;
            }
            psi = self.evolve_free(&psi, w.t_start - t);
            let mut k = 0usize;
            while rec < times.len() && times[rec] < w.t_end {
                let target = (((times[rec] - w.t_start) / wp.tick).round() as usize).min(wp.ticks);
                self.advance(wp, &mut psi, &mut k, target, &mut threshold, rng)?;
                out.push(moments_of(&psi));
                rec += 1;
            }
            self.advance(wp, &mut psi, &mut k, wp.ticks, &mut threshold, rng)?;
            t = w.t_end;
        }
        while rec < times.len() {
            out.push(moments_of(&self.evolve_free(&psi, times[rec] - t)));
            rec += 1;
        }
        Ok(out)
    }

    fn advance(
        &self,
        wp: &WindowPropagators,
        psi: &mut Vec<C64>,
        k: &mut usize,
        target: usize,
        threshold: &mut f64,
        rng: &mut ChaCha8Rng,
    ) -> Result<()> {
        match self.config.method {
            JumpMethod::FixedStep => {
                while *k < target {
                    fixed_step(wp, psi, rng)?;
                    *k += 1;
                }
                Ok(())
            }
            JumpMethod::WaitingTime => waiting_time_advance(wp, psi, k, target, threshold, rng),
        }
    }
}

fn trajectory_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Uniform on (0, 1].
fn draw_threshold(rng: &mut ChaCha8Rng) -> f64 {
    1.0 - rng.random::<f64>()
}

fn apply_in_place(p: &DMatrix<C64>, psi: &mut Vec<C64>, scratch: &mut Vec<C64>) {
    scratch.resize(psi.len(), C64::default());
    matvec(p, psi, scratch);
    std::mem::swap(psi, scratch);
}

fn choose_and_jump(wp: &WindowPropagators, psi: &mut Vec<C64>, u: f64) -> Result<()> {
    let (n1, n2) = occupations(psi);
    let r1 = wp.window.gamma1 * n1;
    let r2 = wp.window.gamma2 * n2;
    let well = if u * (r1 + r2) < r1 { 1 } else { 2 };
    let out = annihilate(psi, well);
    let norm = linalg::norm_sqr(&out).sqrt();
    if norm == 0.0 {
        return Err(DimerError::InvalidJump(well));
    }
    *psi = out.into_iter().map(|c| c / norm).collect();
    Ok(())
}

fn fixed_step(wp: &WindowPropagators, psi: &mut Vec<C64>, rng: &mut ChaCha8Rng) -> Result<()> {
    let m = psi.len() - 1;
    let (n1, n2) = occupations(psi);
    let dp1 = wp.tick * wp.window.gamma1 * n1;
    let dp2 = wp.tick * wp.window.gamma2 * n2;
    if dp1 + dp2 > MAX_JUMP_PROBABILITY {
        return Err(DimerError::StepTooLarge(format!(
            "jump probability {:.3e} per step exceeds {MAX_JUMP_PROBABILITY}",
            dp1 + dp2
        )));
    }
    let r: f64 = rng.random();
    if r < dp1 + dp2 {
        let well = if r < dp1 { 1 } else { 2 };
        let out = annihilate(psi, well);
        *psi = out;
    } else {
        let mut scratch = Vec::with_capacity(m + 1);
        apply_in_place(&wp.ladder[m][0], psi, &mut scratch);
    }
    let norm = linalg::norm_sqr(psi).sqrt();
    if norm == 0.0 {
        return Err(DimerError::InvalidJump(0));
    }
    psi.iter_mut().for_each(|c| *c /= norm);
    Ok(())
}

fn waiting_time_advance(
    wp: &WindowPropagators,
    psi: &mut Vec<C64>,
    k: &mut usize,
    target: usize,
    threshold: &mut f64,
    rng: &mut ChaCha8Rng,
) -> Result<()> {
    let mut trial = Vec::with_capacity(psi.len());
    while *k < target {
        let m = psi.len() - 1;
        let ladder = &wp.ladder[m];
        let remaining = target - *k;
        let top = (usize::BITS - 1 - remaining.leading_zeros()) as usize;
        let level = top.min(ladder.len() - 1);
        trial.resize(psi.len(), C64::default());
        matvec(&ladder[level], psi, &mut trial);
        if linalg::norm_sqr(&trial) > *threshold {
            std::mem::swap(psi, &mut trial);
            *k += 1 << level;
            continue;
        }
        // the crossing lies in (k, k + 2^level]; bisect down to one step
        for l in (0..level).rev() {
            matvec(&ladder[l], psi, &mut trial);
            if linalg::norm_sqr(&trial) > *threshold {
                std::mem::swap(psi, &mut trial);
                *k += 1 << l;
            }
        }
        matvec(&ladder[0], psi, &mut trial);
        std::mem::swap(psi, &mut trial);
        *k += 1;
        let u: f64 = rng.random();
        choose_and_jump(wp, psi, u)?;
        *threshold = draw_threshold(rng);
    }
    Ok(())
}

/// A single stochastic realization (stream 0 of the configured seed).
pub fn run_trajectory(
    state0: &StateVector,
    params: &DimerParams,
    schedule: &LossSchedule,
    config: &JumpConfig,
    t_grid: &[f64],
) -> Result<TimeSeries> {
    let engine = LossEngine::new(params, schedule, config, t_grid)?;
    let recs = engine.trajectory(state0, config.rng_seed, 0)?;
    Ok(TimeSeries {
        times: engine.times().to_vec(),
        records: recs.iter().map(Moments::observables).collect(),
        projection_norm: None,
    })
}

/// Trajectory `i` uses stream `i` of `config.rng_seed`; reduction runs in
/// index order so results do not depend on the thread count.
pub fn run_ensemble(
    state0: &StateVector,
    params: &DimerParams,
    schedule: &LossSchedule,
    config: &JumpConfig,
    t_grid: &[f64],
) -> Result<EnsembleSeries> {
    LossEngine::new(params, schedule, config, t_grid)?.ensemble(state0, config.rng_seed)
}

/// Largest atom number accepted by [`master_equation_oracle`].
pub const ORACLE_MAX_ATOMS: usize = 12;

/// Default oracle step `min(1e-4, 0.005 / omega_max)`.
pub fn oracle_dt(params: &DimerParams, schedule: &LossSchedule) -> f64 {
    let omega = build_hamiltonian(params).norm_inf() + 0.5 * schedule.max_rate() * params.n_atoms() as f64;
    if omega > 0.0 {
        (0.005 / omega).min(1e-4)
    } else {
        1e-4
    }
}

/// Block-diagonal density matrix over atom numbers 0..=N.
type Blocks = Vec<DMatrix<C64>>;

struct Lindblad {
    h: Vec<DMatrix<C64>>,
}

impl Lindblad {
    fn new(params: &DimerParams) -> Self {
        let h = (0..=params.n_atoms())
            .map(|m| build_hamiltonian(&params.with_atoms(m)).to_dense().map(|x| C64::new(x, 0.0)))
            .collect();
        Self { h }
    }

    fn rhs(&self, rho: &Blocks, g1: f64, g2: f64) -> Blocks {
        let top = rho.len() - 1;
        let i = C64::new(0.0, 1.0);
        (0..=top)
            .map(|m| {
                let d = m + 1;
                let mut heff = self.h[m].clone();
                for n in 0..d {
                    heff[(n, n)] -= i * (0.5 * (g1 * n as f64 + g2 * (m - n) as f64));
                }
                let r = &rho[m];
                let mut out = -(&heff * r) * i + (r * heff.adjoint()) * i;
                if m < top && (g1 > 0.0 || g2 > 0.0) {
                    // feeding from the M + 1 block through a_1 and a_2
                    let src = &rho[m + 1];
                    for a in 0..d {
                        for b in 0..d {
                            let mut acc = C64::default();
                            if g1 > 0.0 {
                                acc += src[(a + 1, b + 1)] * (g1 * (((a + 1) * (b + 1)) as f64).sqrt());
                            }
                            if g2 > 0.0 {
                                acc += src[(a, b)] * (g2 * (((m + 1 - a) * (m + 1 - b)) as f64).sqrt());
                            }
                            out[(a, b)] += acc;
                        }
                    }
                }
                out
            })
            .collect()
    }
}

fn axpy(rho: &Blocks, k: &Blocks, h: f64) -> Blocks {
    rho.iter().zip(k).map(|(r, k)| r + k * C64::new(h, 0.0)).collect()
}

fn block_moments(rho: &Blocks) -> Moments {
    let mut out = Moments::default();
    for (m, r) in rho.iter().enumerate() {
        for n in 0..=m {
            let p = r[(n, n)].re;
            out.n1 += p * n as f64;
            out.n2 += p * (m - n) as f64;
            out.n1n2 += p * (n * (m - n)) as f64;
            out.atoms += p * m as f64;
            if n < m {
                out.rho12 += r[(n, n + 1)] * hop(m, n);
            }
        }
    }
    out
}

fn trace(rho: &Blocks) -> f64 {
    rho.iter().map(|r| r.trace().re).sum()
}

/// RK4 integration of the Lindblad equation for loss from both wells,
/// returning exact moments (zero standard errors). `dt = None` uses
/// [`oracle_dt`].
pub fn master_equation_oracle(
    state0: &StateVector,
    params: &DimerParams,
    schedule: &LossSchedule,
    t_grid: &[f64],
    dt: Option<f64>,
) -> Result<EnsembleSeries> {
    let n_atoms = params.n_atoms();
    if n_atoms > ORACLE_MAX_ATOMS {
        return Err(DimerError::OracleTooLarge(n_atoms));
    }
    if state0.n_atoms() != n_atoms {
        return Err(DimerError::InvalidInput("state and params differ in N".into()));
    }
    check_time_grid(t_grid)?;
    if t_grid[0] < 0.0 {
        return Err(DimerError::InvalidInput("record times must be >= 0".into()));
    }
    let dt = dt.unwrap_or_else(|| oracle_dt(params, schedule));
    let lind = Lindblad::new(params);
    let psi = state0.clone().normalized()?;
    let mut rho: Blocks = (0..=n_atoms)
        .map(|m| DMatrix::zeros(m + 1, m + 1))
        .collect();
    let v = nalgebra::DVector::from_column_slice(psi.amplitudes());
    rho[n_atoms] = &v * v.adjoint();

    let mut breaks: Vec<f64> = schedule
        .windows()
        .iter()
        .flat_map(|w| [w.t_start, w.t_end])
        .collect();
    breaks.extend_from_slice(t_grid);
    breaks.retain(|&b| b > 0.0);
    breaks.sort_by(f64::total_cmp);
    breaks.dedup();

    let mut t = 0.0;
    let mut out = Vec::with_capacity(t_grid.len());
    let mut next_rec = 0;
    if t_grid[0] == 0.0 {
        out.push(block_moments(&rho));
        next_rec = 1;
    }
    for &b in &breaks {
        if next_rec >= t_grid.len() {
            break;
        }
        let (g1, g2) = schedule.rates_at(0.5 * (t + b));
        let steps = ((b - t) / dt).ceil().max(1.0) as usize;
        let h = (b - t) / steps as f64;
        for _ in 0..steps {
            let k1 = lind.rhs(&rho, g1, g2);
            let k2 = lind.rhs(&axpy(&rho, &k1, 0.5 * h), g1, g2);
            let k3 = lind.rhs(&axpy(&rho, &k2, 0.5 * h), g1, g2);
            let k4 = lind.rhs(&axpy(&rho, &k3, h), g1, g2);
            for (m, r) in rho.iter_mut().enumerate() {
                *r += (&k1[m] + (&k2[m] + &k3[m]) * C64::new(2.0, 0.0) + &k4[m]) * C64::new(h / 6.0, 0.0);
                let sym = (&*r + r.adjoint()) * C64::new(0.5, 0.0);
                *r = sym;
            }
        }
        t = b;
        let tr = trace(&rho);
        if (tr - 1.0).abs() > 1e-8 {
            return Err(DimerError::StepTooLarge(format!("oracle trace drifted to {tr}")));
        }
        if (b - t_grid[next_rec]).abs() <= 1e-12 * b.abs().max(1.0) {
            out.push(block_moments(&rho));
            next_rec += 1;
        }
    }
    Ok(EnsembleSeries {
        times: t_grid.to_vec(),
        stderr: vec![Moments::default(); out.len()],
        trajectory_mean: vec![TrajectoryAverage::UNDEFINED; out.len()],
        trajectory_stderr: vec![TrajectoryAverage::UNDEFINED; out.len()],
        mean: out,
        n_trajectories: 0,
    })
}
