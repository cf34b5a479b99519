use std::f64::consts::PI;

use bhdimer::dissipation::{master_equation_oracle, run_ensemble, run_trajectory, JumpConfig, LossSchedule};
use bhdimer::dynamics::{evolve_rk4, evolve_spectral, observable_series, observable_series_with_projection, uniform_grid};
use bhdimer::meanfield::f_mf;
use bhdimer::model::{coherent_state_n, DimerParams, PhaseGrid, PhasePoint, StateVector};
use bhdimer::perturb::{perturbative_frequencies, verify_odd_order_vanishing};
use bhdimer::phasespace::{
    entangled_fraction, husimi_field, sample_grid_shape, scan_observable, uniform_samples, ScanField, ScanObservable,
};
use bhdimer::revival::{verify_observable_revival, verify_wavefunction_revival};
use bhdimer::spectra::{beats_near_fixed_point, diagonalize, project_top_k, projection_norm_field, Parity};
use serde_json::{json, Value};

use crate::config::{Method, Opts, ScanKind};
use crate::error::CliError;
use crate::output::{Cell, Output, Table};

fn initial_point(o: &Opts) -> Result<PhasePoint, CliError> {
    Ok(PhasePoint::new(o.z0.unwrap_or(0.0), o.phi0.unwrap_or(0.0))?)
}

fn params_json(p: &DimerParams) -> Value {
    json!({
        "n_atoms": p.n_atoms(),
        "tunneling": p.tunneling(),
        "interaction": p.interaction(),
        "lambda": if p.lambda().is_finite() { json!(p.lambda()) } else { Value::Null },
    })
}

fn schedule_json(s: &LossSchedule) -> Value {
    serde_json::to_value(s.windows()).expect("windows serialize")
}

fn jump_config(o: &Opts, sched: &LossSchedule, n_atoms: usize, traj: usize, method: Method) -> JumpConfig {
    let mut cfg = JumpConfig::new(sched, n_atoms, o.seed.unwrap_or(0), traj).with_method(method.into());
    if let Some(dt) = o.jump_dt {
        cfg.dt = dt;
    }
    cfg
}

pub fn spectrum(o: &Opts) -> Result<Output, CliError> {
    let p = o.params()?;
    let point = initial_point(o)?;
    let k = o.top_k.unwrap_or(3).min(p.dim());
    let eig = diagonalize(&p)?;
    let state = coherent_state_n(p.n_atoms(), point);
    let overlaps = eig.coefficients(&state);
    let top = project_top_k(&state, &eig, k)?;

    let mut t = Table::new(&["kind", "index", "value", "aux"]);
    for (i, (&e, c)) in eig.energies().iter().zip(&overlaps).enumerate() {
        let parity = match eig.parity(i) {
            Parity::Even => 1.0,
            Parity::Odd => -1.0,
        };
        t.push(vec!["energy".into(), i.into(), e.into(), parity.into()]);
        t.push(vec!["overlap".into(), i.into(), c.norm().into(), e.into()]);
    }
    for (rank, (c, &e)) in top.coefficients.iter().zip(&top.energies).enumerate() {
        t.push(vec!["projection".into(), rank.into(), c.norm().into(), e.into()]);
    }
    t.push(vec!["projection_norm_sq".into(), k.into(), top.norm_sq.into(), Cell::Empty]);
    let beats = if p.n_atoms() >= 2 {
        let b = beats_near_fixed_point(&eig)?;
        for (name, v) in [("f_fast", b.f_fast), ("f_mid", b.f_mid), ("f_sum", b.f_sum), ("f_slow", b.f_slow)] {
            t.push(vec![name.into(), 0usize.into(), v.into(), Cell::Empty]);
        }
        json!(b)
    } else {
        Value::Null
    };
    Ok(Output {
        table: t,
        results: json!({ "beats": beats, "top_projection": top }),
        config: json!({ "params": params_json(&p), "z0": point.z(), "phi0": point.phi(), "top_k": k }),
    })
}

pub fn evolve(o: &Opts) -> Result<Output, CliError> {
    let p = o.params()?;
    let point = initial_point(o)?;
    let sched = o.schedule()?;
    let grid = uniform_grid(o.t_final.unwrap_or(1.0), o.dt_record.unwrap_or(0.01))?;
    let state = coherent_state_n(p.n_atoms(), point);
    let mut config = json!({
        "params": params_json(&p), "z0": point.z(), "phi0": point.phi(),
        "t_final": grid.last(), "dt_record": o.dt_record.unwrap_or(0.01),
        "loss": schedule_json(&sched),
    });

    if sched.is_lossless() {
        let eig = diagonalize(&p)?;
        let series = match o.top_k {
            Some(k) => observable_series_with_projection(&state, &eig, &grid, k)?,
            None => observable_series(&state, &eig, &grid)?,
        };
        let mut cols = vec!["t", "z", "phi", "c", "epr", "atoms"];
        if o.top_k.is_some() {
            cols.push("projection_norm");
            config["top_k"] = json!(o.top_k);
        }
        let mut t = Table::new(&cols);
        for (i, (time, r)) in series.times.iter().zip(&series.records).enumerate() {
            let mut row: Vec<Cell> = vec![
                (*time).into(),
                r.z.into(),
                r.phi.into(),
                r.condensate_fraction.into(),
                r.epr.into(),
                r.atoms.into(),
            ];
            if let Some(pn) = &series.projection_norm {
                row.push(pn[i].into());
            }
            t.push(row);
        }
        return Ok(Output {
            table: t,
            results: json!({ "mode": "unitary" }),
            config,
        });
    }

    let method = o.method.unwrap_or(Method::Fixed);
    let cfg = jump_config(o, &sched, p.n_atoms(), o.trajectories.unwrap_or(1000), method);
    config["seed"] = json!(cfg.rng_seed);
    config["method"] = json!(method);
    config["jump_dt"] = json!(cfg.dt);
    if o.single_trajectory {
        let series = run_trajectory(&state, &p, &sched, &cfg, &grid)?;
        let mut t = Table::new(&["t", "z", "phi", "c", "epr", "atoms"]);
        for (time, r) in series.times.iter().zip(&series.records) {
            t.push(vec![
                (*time).into(),
                r.z.into(),
                r.phi.into(),
                r.condensate_fraction.into(),
                r.epr.into(),
                r.atoms.into(),
            ]);
        }
        config["single_trajectory"] = json!(true);
        return Ok(Output {
            table: t,
            results: json!({ "mode": "single_trajectory" }),
            config,
        });
    }

    config["trajectories"] = json!(cfg.n_trajectories);
    let ens = run_ensemble(&state, &p, &sched, &cfg, &grid)?;
    let mut t = Table::new(&[
        "t", "z", "phi", "c", "epr", "atoms", "c_traj", "c_traj_se", "epr_traj", "epr_traj_se", "n1", "n1_se", "n2",
        "n2_se", "rho12_re_se", "rho12_im_se", "n1n2_se", "atoms_se",
    ]);
    for (i, (time, r)) in ens.times.iter().zip(ens.observables()).enumerate() {
        let (m, se) = (&ens.mean[i], &ens.stderr[i]);
        let (tm, ts) = (&ens.trajectory_mean[i], &ens.trajectory_stderr[i]);
        t.push(vec![
            (*time).into(),
            r.z.into(),
            r.phi.into(),
            r.condensate_fraction.into(),
            r.epr.into(),
            r.atoms.into(),
            tm.condensate_fraction.into(),
            ts.condensate_fraction.into(),
            tm.epr.into(),
            ts.epr.into(),
            m.n1.into(),
            se.n1.into(),
            m.n2.into(),
            se.n2.into(),
            se.rho12.re.into(),
            se.rho12.im.into(),
            se.n1n2.into(),
            se.atoms.into(),
        ]);
    }
    Ok(Output {
        table: t,
        results: json!({ "mode": "ensemble", "n_trajectories": ens.n_trajectories }),
        config,
    })
}

fn field_table(f: &ScanField) -> Table {
    let mut t = Table::new(&["z", "phi", "value"]);
    for (z, phi, v) in f.nodes() {
        t.push(vec![z.into(), phi.into(), v.into()]);
    }
    t
}

pub fn scan(o: &Opts) -> Result<Output, CliError> {
    let p = o.params()?;
    let (nz, nphi) = o.grid_shape(101)?;
    let grid = PhaseGrid::new(nz, nphi)?;
    let kind = o.observable.unwrap_or(ScanKind::C);
    let t_final = o.t_final.unwrap_or(1.0);
    let mut config = json!({ "params": params_json(&p), "grid": [nz, nphi], "observable": kind, "t_final": t_final });
    let field = match kind {
        ScanKind::C => scan_observable(&p, &grid, t_final, ScanObservable::CondensateFraction)?,
        ScanKind::Epr => scan_observable(&p, &grid, t_final, ScanObservable::Epr)?,
        ScanKind::Projection => {
            let k = o.top_k.unwrap_or(3);
            config["top_k"] = json!(k);
            config["t_final"] = json!(0.0);
            projection_norm_field(&p, &grid, k)?
        }
        ScanKind::Husimi => {
            let point = initial_point(o)?;
            config["z0"] = json!(point.z());
            config["phi0"] = json!(point.phi());
            let s = evolve_spectral(&coherent_state_n(p.n_atoms(), point), &diagonalize(&p)?, t_final);
            husimi_field(&s, &grid)
        }
    };
    let (iz, iphi) = field.argmax();
    Ok(Output {
        table: field_table(&field),
        results: json!({
            "observable": field.observable,
            "argmax": { "z": field.z_grid[iz], "phi": field.phi_grid[iphi], "value": field.get(iz, iphi) },
        }),
        config,
    })
}

pub fn frequencies(o: &Opts) -> Result<Output, CliError> {
    let n = o.n_atoms.ok_or_else(|| CliError::Config("--n-atoms is required".into()))?;
    let j = o.tunneling.ok_or_else(|| CliError::Config("--tunneling is required".into()))?;
    let lambdas = o.lambda_list()?;
    let mut t = Table::new(&[
        "lambda", "interaction", "f_fast", "f_mid", "f_sum", "f_slow", "f_mf", "f_fast_0", "f_slow_0", "f_fast_2",
        "f_slow_2", "rel_err_fast_2", "rel_err_slow_2", "order_fast", "order_slow",
    ]);
    let mut prev: Option<(f64, f64, f64)> = None;
    for &lambda in &lambdas {
        let p = DimerParams::from_lambda(n, j, lambda)?;
        let u = p.interaction();
        let exact = beats_near_fixed_point(&diagonalize(&p)?)?;
        let fmf = f_mf(&p).unwrap_or(f64::NAN);
        let f0 = (u * (n as f64 - 1.0) / (2.0 * PI), u / PI);
        let (f2_fast, f2_slow) = perturbative_frequencies(n, j, u).unwrap_or((f64::NAN, f64::NAN));
        let err_fast = (f2_fast - exact.f_fast) / exact.f_fast;
        let err_slow = (f2_slow - exact.f_slow) / exact.f_slow;
        // local slope of log|residual| against log Lambda
        let order = |a: f64, b: f64, l0: f64| (a / b).abs().ln() / (lambda / l0).ln();
        let (of, os) = match prev {
            Some((l0, ef, es)) => (order(ef, err_fast, l0), order(es, err_slow, l0)),
            None => (f64::NAN, f64::NAN),
        };
        prev = Some((lambda, err_fast, err_slow));
        t.push(
            [
                lambda, u, exact.f_fast, exact.f_mid, exact.f_sum, exact.f_slow, fmf, f0.0, f0.1, f2_fast, f2_slow,
                err_fast, err_slow, of, os,
            ]
            .into_iter()
            .map(Cell::from)
            .collect(),
        );
    }
    Ok(Output {
        table: t,
        results: Value::Null,
        config: json!({ "n_atoms": n, "tunneling": j, "lambdas": lambdas }),
    })
}

pub fn entangled(o: &Opts) -> Result<Output, CliError> {
    let p = o.params()?;
    let sched = o.schedule()?;
    let samples = o.samples.unwrap_or(500);
    let (nz, nphi) = sample_grid_shape(samples);
    let points = uniform_samples(nz, nphi);
    let grid = uniform_grid(o.t_final.unwrap_or(3.0), o.dt_record.unwrap_or(0.01))?;
    let free = entangled_fraction(&p, &points, &grid, None)?;
    let mut config = json!({
        "params": params_json(&p), "samples": samples, "sample_grid": [nz, nphi],
        "t_final": grid.last(), "dt_record": o.dt_record.unwrap_or(0.01), "loss": schedule_json(&sched),
    });
    let lossy = if sched.is_lossless() {
        None
    } else {
        let method = o.method.unwrap_or(Method::Waiting);
        let cfg = jump_config(o, &sched, p.n_atoms(), o.trajectories.unwrap_or(200), method);
        config["seed"] = json!(cfg.rng_seed);
        config["method"] = json!(method);
        config["trajectories"] = json!(cfg.n_trajectories);
        config["jump_dt"] = json!(cfg.dt);
        Some(entangled_fraction(&p, &points, &grid, Some((&sched, &cfg)))?)
    };

    // revival markers at multiples of 1/f_slow, on the nearest grid time
    let period = if p.tunneling() == 0.0 {
        PI / p.interaction()
    } else {
        1.0 / beats_near_fixed_point(&diagonalize(&p)?)?.f_slow
    };
    let dt = grid.get(1).map_or(1.0, |t1| t1 - grid[0]);
    let mut marker = vec![0usize; grid.len()];
    let mut markers = Vec::new();
    let mut m = 1;
    while period.is_finite() && m as f64 * period <= grid[grid.len() - 1] + 0.5 * dt {
        let target = m as f64 * period;
        let i = ((target - grid[0]) / dt).round() as usize;
        marker[i.min(grid.len() - 1)] = m;
        markers.push(target);
        m += 1;
    }

    let mut cols = vec!["t", "fraction"];
    if lossy.is_some() {
        cols.push("fraction_loss");
    }
    cols.push("revival_marker");
    let mut t = Table::new(&cols);
    for i in 0..grid.len() {
        let mut row = vec![grid[i].into(), free.fraction[i].into()];
        if let Some(l) = &lossy {
            row.push(l.fraction[i].into());
        }
        row.push(marker[i].into());
        t.push(row);
    }
    Ok(Output {
        table: t,
        results: json!({ "revival_period": period, "revival_times": markers }),
        config,
    })
}

struct Checks {
    table: Table,
    report: Vec<Value>,
    failed: usize,
}

impl Checks {
    fn new() -> Self {
        Self {
            table: Table::new(&["check", "passed", "value", "tolerance"]),
            report: Vec::new(),
            failed: 0,
        }
    }

    fn add(&mut self, name: String, value: f64, tol: f64) {
        let passed = value <= tol;
        self.failed += !passed as usize;
        self.table
            .push(vec![Cell::Text(name.clone()), Cell::Int(passed as i64), value.into(), tol.into()]);
        self.report.push(json!({ "check": name, "passed": passed, "value": value, "tolerance": tol }));
    }
}

/// Deterministic, well-spread points on the sphere for the revival suite.
fn spread_points(count: usize, offset: usize) -> impl Iterator<Item = PhasePoint> {
    let golden = 0.5 * (5f64.sqrt() - 1.0);
    (0..count).map(move |i| {
        let k = (i + offset) as f64;
        let z = -0.98 + 1.96 * ((k * golden).fract());
        let phi = 2.0 * PI * ((k * golden * golden + 0.1).fract());
        PhasePoint::new(z, phi).expect("inside the sphere")
    })
}

pub fn verify(o: &Opts) -> Result<(Output, usize), CliError> {
    let mut c = Checks::new();
    let u = 1.3;
    for n in 1..=12usize {
        let (mut wf, mut obs, mut flip) = (0.0f64, 0.0f64, 0.0f64);
        for point in spread_points(50, n * 50) {
            let s = coherent_state_n(n, point);
            wf = wf.max(verify_wavefunction_revival(n, u, &s)?.deviation);
            let r = verify_observable_revival(n, u, &s)?;
            obs = obs.max(r.condensate_fraction_deviation).max(r.epr_deviation);
            flip = flip.max(r.sign_flip_residual());
        }
        c.add(format!("revival_phase_pattern_N{n}"), wf, 1e-12);
        c.add(format!("revival_observables_N{n}"), obs, 1e-10);
        if n % 2 == 0 {
            c.add(format!("revival_rho12_sign_flip_N{n}"), flip, 1e-10);
        }
    }
    for n in [8, 12, 20] {
        for level in 0..3 {
            let r = verify_odd_order_vanishing(n, level)?;
            let lemmas = (r.v_is_odd && r.resolvent_is_even && r.w2_is_even && r.w3_is_odd) as u8 as f64;
            c.add(format!("parity_lemmas_N{n}_level{level}"), 1.0 - lemmas, 0.0);
            c.add(format!("w3_diagonal_N{n}_level{level}"), r.max_w3_diagonal.max(r.max_w3_pair_entry), 1e-12);
        }
    }

    let p = DimerParams::from_lambda(20, 10.0, 5.0)?;
    let s = coherent_state_n(20, PhasePoint::new(0.9, PI)?);
    let a = evolve_spectral(&s, &diagonalize(&p)?, 0.5);
    let b = evolve_rk4(&s, &p, 0.5, None)?;
    c.add("spectral_vs_rk4".into(), max_dev(&a, &b), 1e-6);

    // quantum jumps against the master equation; 4 standard errors keeps
    // false alarms rare over 40 comparisons
    let p = DimerParams::from_lambda(6, 10.0, 5.0)?;
    let s = coherent_state_n(6, PhasePoint::new(0.6, PI)?);
    let sched = LossSchedule::single(2, 2.0, 0.5, 1.0)?;
    let grid: Vec<f64> = (0..20).map(|i| 2.0 * i as f64 / 19.0).collect();
    let traj = o.trajectories.unwrap_or(2000);
    let cfg = jump_config(o, &sched, 6, traj, o.method.unwrap_or(Method::Fixed));
    let ens = run_ensemble(&s, &p, &sched, &cfg, &grid)?;
    let ora = master_equation_oracle(&s, &p, &sched, &grid, None)?;
    let worst = (0..grid.len())
        .map(|i| {
            let d1 = (ens.mean[i].n1 - ora.mean[i].n1).abs() / (4.0 * ens.stderr[i].n1 + 1e-6);
            let d2 = (ens.mean[i].n2 - ora.mean[i].n2).abs() / (4.0 * ens.stderr[i].n2 + 1e-6);
            d1.max(d2)
        })
        .fold(0.0, f64::max);
    c.add("jumps_vs_master_equation".into(), worst, 1.0);

    let failed = c.failed;
    let out = Output {
        table: c.table,
        results: json!({ "passed": failed == 0, "failed": failed, "checks": c.report }),
        config: json!({ "trajectories": traj, "seed": cfg.rng_seed, "method": o.method.unwrap_or(Method::Fixed) }),
    };
    Ok((out, failed))
}

fn max_dev(a: &StateVector, b: &StateVector) -> f64 {
    a.amplitudes()
        .iter()
        .zip(b.amplitudes())
        .map(|(x, y)| (x - y).norm())
        .fold(0.0, f64::max)
}
