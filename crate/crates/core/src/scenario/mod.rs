//! Scenario pipelines behind the `sim` command: figure reproductions,
//! steady-state sweeps and a generic custom run, each producing an
//! [`OutputTable`].

pub mod config;
pub mod output;
pub mod truncation;

use log::info;
use rayon::prelude::*;

pub use config::{Observable, Probe, Scenario, ScenarioConfig, SweepParam};
pub use output::OutputTable;
pub use truncation::{choose_truncation, TruncationChoice, TruncationOptions};

use crate::correlations::{
    correlation_report, field_statistics, purity, quantum_discord_x, x_structure, CorrelationReport,
};
use crate::dynamics::{evolve, evolve_propagator, steady_state, Trajectory};
use crate::error::{Error, Result};
use crate::model::{
    build_generator, derived_params, initial_state, AtomicInitial, CollectiveOps, FieldInitial,
    Frame, SystemConfig,
};
use crate::operator::{
    annihilation, atomic_reduction, field_reduction, trace_distance, DensityMatrix, HilbertLayout,
};
use config::{CustomMode, Engine};

/// Runs the configured scenario; per-point failures are recorded in the
/// table rather than aborting the run.
pub fn run(cfg: &ScenarioConfig) -> Result<OutputTable> {
    let mut table = match cfg.scenario {
        Scenario::Fig1Purity | Scenario::Fig1Correlations => run_fig1(cfg)?,
        Scenario::Fig2Sweep => run_fig2(cfg)?,
        Scenario::Fig3Thermal => run_fig3(cfg)?,
        Scenario::Custom => run_custom(cfg)?,
        Scenario::WindowReport => run_window_report(cfg)?,
    };
    let mut meta = vec![("scenario".to_string(), cfg.scenario.name().to_string())];
    meta.extend(
        cfg.echo
            .iter()
            .map(|(k, v)| (format!("config.{k}"), v.clone())),
    );
    let rest = std::mem::take(&mut table);
    let mut out = OutputTable::new(rest.columns().to_vec());
    for (k, v) in meta.into_iter().chain(rest.metadata().iter().cloned()) {
        out.add_metadata(k, v);
    }
    for row in rest.rows() {
        out.push_row(row.clone())?;
    }
    for f in rest.failures() {
        out.add_failure(f.clone());
    }
    Ok(out)
}

fn truncation_options(cfg: &ScenarioConfig, system: &SystemConfig) -> TruncationOptions {
    TruncationOptions {
        tol: cfg.truncation_tol,
        limit: cfg.truncation_limit,
        start: 1,
        steady: cfg.steady_options(system),
        field: cfg.initial_field,
    }
}

/// Truncation for one system: the harness result when `n_max = auto`,
/// otherwise the configured value.
fn resolve_truncation(
    cfg: &ScenarioConfig,
    system: &SystemConfig,
    initial: &AtomicInitial,
) -> Result<SystemConfig> {
    if cfg.auto_truncation && system.layout().has_field() {
        let choice = choose_truncation(
            system,
            initial,
            &cfg.probes,
            &truncation_options(cfg, system),
        )?;
        Ok(system.with_n_max(choice.n_max))
    } else {
        Ok(system.clone())
    }
}

/// Grid with the initial time 0 prepended when missing.
fn grid_from_zero(times: &[f64]) -> (Vec<f64>, usize) {
    if times.first() == Some(&0.0) {
        (times.to_vec(), 0)
    } else {
        (
            std::iter::once(0.0).chain(times.iter().copied()).collect(),
            1,
        )
    }
}

fn trajectory(
    system: &SystemConfig,
    rho0: &DensityMatrix,
    times: &[f64],
    engine: Engine,
    tol: f64,
) -> Result<Trajectory> {
    let generator = build_generator(system)?;
    match engine {
        Engine::Rk => evolve(&generator, rho0, times, tol),
        Engine::Propagator => evolve_propagator(&generator, rho0, times),
    }
}

fn atoms_of(rho: &DensityMatrix) -> Result<DensityMatrix> {
    if rho.layout().has_field() {
        atomic_reduction(rho)
    } else {
        Ok(rho.clone())
    }
}

/// Closed-form discord of the X part, NaN when the formula is inapplicable.
fn qd_xform(rho_ab: &DensityMatrix) -> f64 {
    x_structure(rho_ab, 1e-8)
        .and_then(|(x, _)| quantum_discord_x(&x))
        .unwrap_or(f64::NAN)
}

fn stats_note(traj: &Trajectory) -> String {
    let s = &traj.stats;
    format!(
        "steps={} rejected={} rhs={} max_trace_drift={:.3e} renormalizations={} min_eigenvalue={:.3e} error_estimate={:.3e}",
        s.accepted_steps,
        s.rejected_steps,
        s.rhs_evaluations,
        s.max_trace_drift,
        s.renormalizations,
        s.min_eigenvalue,
        s.error_estimate
    )
}

/// Purity curves for several atom numbers, or the two-atom correlations,
/// on a log-spaced time grid starting from all atoms excited and the
/// displaced-frame vacuum.
pub fn run_fig1(cfg: &ScenarioConfig) -> Result<OutputTable> {
    let (times, skip) = grid_from_zero(&cfg.times);
    let initial = &cfg.initial_atoms[0];
    let initial_field = cfg.initial_field;

    let evolve_for = |n_atoms: usize| -> Result<(SystemConfig, Trajectory)> {
        let system = SystemConfig {
            n_atoms,
            ..cfg.system.clone()
        };
        let system = resolve_truncation(cfg, &system, initial)?;
        let rho0 = initial_state(system.layout(), initial, initial_field)?;
        info!("fig1: N = {n_atoms}, n_max = {}", system.n_max);
        let traj = trajectory(&system, &rho0, &times, cfg.engine, cfg.integrator_tol)?;
        Ok((system, traj))
    };

    match cfg.scenario {
        Scenario::Fig1Correlations => {
            if cfg.system.n_atoms != 2 {
                return Err(Error::Config("fig1-correlations needs n_atoms = 2".into()));
            }
            let (system, traj) = evolve_for(2)?;
            let mut table = OutputTable::new([
                "t",
                "purity",
                "qd",
                "qd_xform",
                "eof",
                "concurrence",
                "x_violation",
            ]);
            table.add_metadata("n_max", system.n_max);
            table.add_metadata("integrator", stats_note(&traj));
            let rows: Vec<Result<Vec<f64>>> = traj.states[skip..]
                .par_iter()
                .zip(&traj.times[skip..])
                .map(|(rho, &t)| {
                    let atoms = atoms_of(rho)?;
                    let r = correlation_report(&atoms)?;
                    Ok(vec![
                        t,
                        r.purity,
                        r.qd,
                        qd_xform(&atoms),
                        r.eof,
                        r.concurrence,
                        r.x_structure_violation,
                    ])
                })
                .collect();
            for row in rows {
                table.push_row(row?)?;
            }
            Ok(table)
        }
        _ => {
            let runs: Vec<Result<(SystemConfig, Trajectory)>> =
                cfg.atom_counts.par_iter().map(|&n| evolve_for(n)).collect();
            let mut columns = vec!["t".to_string()];
            columns.extend(cfg.atom_counts.iter().map(|n| format!("purity_n{n}")));
            let mut table = OutputTable::new(columns);
            let mut curves = Vec::new();
            for (n, run) in cfg.atom_counts.iter().zip(runs) {
                let (system, traj) = run?;
                table.add_metadata(format!("n_max.n{n}"), system.n_max);
                table.add_metadata(format!("window_hi.n{n}"), derived_params(&system).window_hi);
                table.add_metadata(format!("integrator.n{n}"), stats_note(&traj));
                let p: Vec<f64> = traj.states[skip..]
                    .iter()
                    .map(|rho| atoms_of(rho).map(|a| purity(&a)))
                    .collect::<Result<_>>()?;
                curves.push(p);
            }
            for (k, &t) in times[skip..].iter().enumerate() {
                let mut row = vec![t];
                row.extend(curves.iter().map(|c| c[k]));
                table.push_row(row)?;
            }
            Ok(table)
        }
    }
}

/// One steady-state point of a sweep.
#[derive(Clone, Debug)]
pub struct SteadyPoint {
    pub n_max: usize,
    pub residual: f64,
    pub method: &'static str,
    pub report: CorrelationReport,
    pub qd_xform: f64,
    pub atoms: DensityMatrix,
}

/// Steady state of `system` from `initial` with the field in `field`, with
/// automatic or fixed truncation as configured.
pub fn steady_point(
    cfg: &ScenarioConfig,
    system: &SystemConfig,
    initial: &AtomicInitial,
) -> Result<SteadyPoint> {
    let (n_max, ss) = if cfg.auto_truncation && system.layout().has_field() {
        let choice = choose_truncation(
            system,
            initial,
            &cfg.probes,
            &truncation_options(cfg, system),
        )?;
        (choice.n_max, choice.steady)
    } else {
        let generator = build_generator(system)?;
        let rho0 = initial_state(system.layout(), initial, cfg.initial_field)?;
        (
            system.n_max,
            steady_state(&generator, &rho0, &cfg.steady_options(system))?,
        )
    };
    let atoms = atoms_of(&ss.rho_ss)?;
    Ok(SteadyPoint {
        n_max,
        residual: ss.residual,
        method: ss.method.name(),
        report: correlation_report(&atoms)?,
        qd_xform: qd_xform(&atoms),
        atoms,
    })
}

/// Steady-state sweep over `outer` coupling values × initial states × the
/// configured sweep parameter, in long format.
fn steady_sweep(cfg: &ScenarioConfig, outer: &[f64]) -> Result<OutputTable> {
    let sweep = cfg
        .sweep
        .as_ref()
        .ok_or_else(|| Error::Config("this scenario needs a sweep".into()))?;
    if cfg.system.n_atoms != 2 {
        return Err(Error::Config(
            "steady-state correlation sweeps need n_atoms = 2".into(),
        ));
    }
    let mut jobs = Vec::new();
    for &g in outer {
        for (i, init) in cfg.initial_atoms.iter().enumerate() {
            for &v in &sweep.values {
                let mut system = SystemConfig {
                    g,
                    ..cfg.system.clone()
                };
                sweep.param.apply(&mut system, v);
                jobs.push((g, i, init, v, system));
            }
        }
    }
    let results: Vec<Result<SteadyPoint>> = jobs
        .par_iter()
        .map(|(_, _, init, _, system)| steady_point(cfg, system, init))
        .collect();

    let mut table = OutputTable::new([
        "g",
        "initial",
        sweep.param.name(),
        "n_max",
        "residual",
        "qd",
        "qd_xform",
        "eof",
        "concurrence",
        "x_violation",
        "purity",
    ]);
    for (i, init) in cfg.initial_atoms.iter().enumerate() {
        table.add_metadata(format!("initial.{i}"), init.name());
    }
    let mut max_residual = 0.0f64;
    for ((g, i, init, v, _), res) in jobs.iter().zip(results) {
        match res {
            Ok(p) => {
                max_residual = max_residual.max(p.residual);
                let r = &p.report;
                table.push_row(vec![
                    *g,
                    *i as f64,
                    *v,
                    p.n_max as f64,
                    p.residual,
                    r.qd,
                    p.qd_xform,
                    r.eof,
                    r.concurrence,
                    r.x_structure_violation,
                    r.purity,
                ])?;
                table.add_metadata(
                    "point",
                    format!(
                        "g={g} initial={} {}={v} n_max={} residual={:.3e} method={} qd_method={}",
                        init.name(),
                        sweep.param.name(),
                        p.n_max,
                        p.residual,
                        p.method,
                        r.qd_method.name()
                    ),
                );
            }
            Err(e) => {
                let mut row = vec![*g, *i as f64, *v];
                row.resize(table.columns().len(), f64::NAN);
                table.push_row(row)?;
                table.add_failure(format!(
                    "g={g} initial={} {}={v}: {e}",
                    init.name(),
                    sweep.param.name()
                ));
            }
        }
    }
    table.add_metadata("max_residual", format!("{max_residual:.3e}"));
    Ok(table)
}

/// Stationary correlations against the drive strength for each coupling in
/// `g_values`, computed in the displaced frame without adiabatic elimination.
pub fn run_fig2(cfg: &ScenarioConfig) -> Result<OutputTable> {
    let outer = match &cfg.sweep {
        Some(s) if s.param == SweepParam::G => vec![cfg.system.g],
        _ => cfg.g_values.clone(),
    };
    steady_sweep(cfg, &outer)
}

/// Stationary correlations against the reservoir temperature with no drive.
pub fn run_fig3(cfg: &ScenarioConfig) -> Result<OutputTable> {
    if cfg.system.epsilon != 0.0 {
        return Err(Error::Config("fig3-thermal needs epsilon = 0".into()));
    }
    steady_sweep(cfg, &[cfg.system.g])
}

/// Semiclassical time window `(1, (κ/(g√N))²)` in units of 1/κ.
pub fn window_report(system: &SystemConfig) -> (f64, f64) {
    let p = derived_params(system);
    (p.window_lo, p.window_hi)
}

fn run_window_report(cfg: &ScenarioConfig) -> Result<OutputTable> {
    let mut table = OutputTable::new(["n_atoms", "g", "window_lo", "window_hi", "degenerate"]);
    table.add_metadata("note", "window_hi decreases as 1/N at fixed g");
    for &n in &cfg.atom_counts {
        let system = SystemConfig {
            n_atoms: n,
            ..cfg.system.clone()
        };
        let (lo, hi) = window_report(&system);
        table.push_row(vec![
            n as f64,
            system.g,
            lo,
            hi,
            if hi <= lo { 1.0 } else { 0.0 },
        ])?;
    }
    Ok(table)
}

/// Field initial state of `to` equivalent to `field` in `from`; the two
/// frames differ by a displacement of the cavity by α.
fn map_field(
    field: FieldInitial,
    from: Frame,
    to: Frame,
    alpha: crate::operator::C64,
) -> Result<FieldInitial> {
    let shift = match (from, to) {
        (Frame::Displaced, Frame::LabRotating) => alpha,
        (Frame::LabRotating, Frame::Displaced) => -alpha,
        _ => return Ok(field),
    };
    match field {
        FieldInitial::Vacuum => Ok(FieldInitial::Coherent(shift)),
        FieldInitial::Coherent(b) if (b + shift).norm() == 0.0 => Ok(FieldInitial::Vacuum),
        FieldInitial::Coherent(b) => Ok(FieldInitial::Coherent(b + shift)),
        other => Err(Error::Config(format!(
            "cannot map initial field {other:?} between {from} and {to}"
        ))),
    }
}

fn observe(rho: &DensityMatrix, observables: &[Observable]) -> Result<Vec<f64>> {
    let atoms = atoms_of(rho)?;
    let report = if observables.iter().any(|o| o.is_two_qubit()) {
        Some(correlation_report(&atoms)?)
    } else {
        None
    };
    let field = if rho.layout().has_field() && observables.iter().any(|o| o.needs_field()) {
        Some(field_reduction(rho)?)
    } else {
        None
    };
    let stats = field.as_ref().map(field_statistics);
    observables
        .iter()
        .map(|o| {
            let r = report.as_ref();
            let f = field.as_ref();
            Ok(match o {
                Observable::Purity => purity(&atoms),
                Observable::Qd => r.map_or(f64::NAN, |r| r.qd),
                Observable::QdXform => qd_xform(&atoms),
                Observable::Eof => r.map_or(f64::NAN, |r| r.eof),
                Observable::Concurrence => r.map_or(f64::NAN, |r| r.concurrence),
                Observable::XViolation => r.map_or(f64::NAN, |r| r.x_structure_violation),
                Observable::NBar => f.map_or(f64::NAN, |f| {
                    (0..f.dim()).map(|n| n as f64 * f.matrix()[(n, n)].re).sum()
                }),
                Observable::G2 => match &stats {
                    Some(Ok(s)) => s.g2,
                    _ => f64::NAN,
                },
                Observable::MandelQ => match &stats {
                    Some(Ok(s)) => s.mandel_q,
                    _ => f64::NAN,
                },
                Observable::FieldRe | Observable::FieldIm => match f {
                    Some(f) => {
                        let a = annihilation(f.dim() - 1)?;
                        let v = f.expectation(&a)?;
                        if *o == Observable::FieldRe {
                            v.re
                        } else {
                            v.im
                        }
                    }
                    None => f64::NAN,
                },
                Observable::Sz => {
                    let ops =
                        CollectiveOps::new(HilbertLayout::atoms(atoms.layout().atom_count()))?;
                    atoms.expectation(&ops.s_z)?.re
                }
            })
        })
        .collect()
}

/// Generic pipeline: build the generator, pick the truncation, then either
/// evolve over the time grid or find the steady state, tabulating the
/// requested observables. With `compare_frame` set, the same physical
/// initial state is also run in the other frame and the trace distance
/// between the two atomic states is added.
pub fn run_custom(cfg: &ScenarioConfig) -> Result<OutputTable> {
    let initial = &cfg.initial_atoms[0];
    if cfg.initial_atoms.len() != 1 {
        return Err(Error::Config(
            "custom runs take one initial atomic state".into(),
        ));
    }
    let system = resolve_truncation(cfg, &cfg.system, initial)?;
    for o in &cfg.observables {
        if o.is_two_qubit() && system.n_atoms != 2 {
            return Err(Error::Config(format!(
                "observable {} needs n_atoms = 2",
                o.name()
            )));
        }
        if o.needs_field() && !system.layout().has_field() {
            return Err(Error::Config(format!(
                "observable {} needs a cavity field",
                o.name()
            )));
        }
    }
    let compare = match cfg.compare_frame {
        Some(frame) => {
            let other = SystemConfig {
                frame,
                n_max: cfg.compare_n_max,
                ..system.clone()
            };
            let field = map_field(
                cfg.initial_field,
                system.frame,
                frame,
                derived_params(&system).alpha,
            )?;
            Some((other, field))
        }
        None => None,
    };

    let mut columns: Vec<String> = Vec::new();
    if cfg.mode == CustomMode::Evolve {
        columns.push("t".into());
    }
    columns.extend(cfg.observables.iter().map(|o| o.name().to_string()));
    if compare.is_some() {
        columns.push("trace_distance".into());
    }
    let mut table = OutputTable::new(columns);
    table.add_metadata("n_max", system.n_max);
    let rho0 = initial_state(system.layout(), initial, cfg.initial_field)?;

    match cfg.mode {
        CustomMode::Steady => {
            let generator = build_generator(&system)?;
            let ss = steady_state(&generator, &rho0, &cfg.steady_options(&system))?;
            table.add_metadata("residual", format!("{:.3e}", ss.residual));
            table.add_metadata("steady_method", ss.method.name());
            let mut row = observe(&ss.rho_ss, &cfg.observables)?;
            if let Some((other, field)) = &compare {
                let g2 = build_generator(other)?;
                let r2 = initial_state(other.layout(), initial, *field)?;
                let ss2 = steady_state(&g2, &r2, &cfg.steady_options(other))?;
                table.add_metadata("compare_residual", format!("{:.3e}", ss2.residual));
                row.push(trace_distance(
                    &atoms_of(&ss.rho_ss)?,
                    &atoms_of(&ss2.rho_ss)?,
                )?);
            }
            table.push_row(row)?;
        }
        CustomMode::Evolve => {
            let (times, skip) = grid_from_zero(&cfg.times);
            let traj = trajectory(&system, &rho0, &times, cfg.engine, cfg.integrator_tol)?;
            table.add_metadata("integrator", stats_note(&traj));
            let other_traj = match &compare {
                Some((other, field)) => {
                    let r2 = initial_state(other.layout(), initial, *field)?;
                    let t2 = trajectory(other, &r2, &times, cfg.engine, cfg.integrator_tol)?;
                    table.add_metadata("compare_integrator", stats_note(&t2));
                    Some(t2)
                }
                None => None,
            };
            let rows: Vec<Result<Vec<f64>>> = (skip..times.len())
                .into_par_iter()
                .map(|k| {
                    let mut row = vec![times[k]];
                    row.extend(observe(&traj.states[k], &cfg.observables)?);
                    if let Some(t2) = &other_traj {
                        row.push(trace_distance(
                            &atoms_of(&traj.states[k])?,
                            &atoms_of(&t2.states[k])?,
                        )?);
                    }
                    Ok(row)
                })
                .collect();
            for row in rows {
                table.push_row(row?)?;
            }
        }
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn resolve(scenario: Scenario, items: &[(&str, &str)]) -> ScenarioConfig {
        let pairs: Vec<(String, String)> = items
            .iter()
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect();
        ScenarioConfig::resolve(scenario, &pairs).unwrap()
    }

    #[test]
    fn window_examples() {
        let one = SystemConfig {
            n_atoms: 1,
            g: 0.01,
            ..Default::default()
        };
        assert!((window_report(&one).1 - 1e4).abs() < 1e-6);
        let four = SystemConfig {
            n_atoms: 4,
            g: 0.01,
            ..Default::default()
        };
        assert!((window_report(&four).1 - 2.5e3).abs() < 1e-6);
        let strong = SystemConfig {
            n_atoms: 1,
            g: 1.0,
            ..Default::default()
        };
        let (lo, hi) = window_report(&strong);
        assert!(hi <= lo);
        let cfg = resolve(
            Scenario::WindowReport,
            &[("g", "1"), ("atom_counts", "1,2")],
        );
        let t = run(&cfg).unwrap();
        assert_eq!(t.column("degenerate").unwrap(), vec![1.0, 1.0]);
    }

    #[test]
    fn field_mapping_between_frames() {
        let a = crate::operator::C64::new(0.0, -1.0);
        assert_eq!(
            map_field(
                FieldInitial::Vacuum,
                Frame::Displaced,
                Frame::LabRotating,
                a
            )
            .unwrap(),
            FieldInitial::Coherent(a)
        );
        assert_eq!(
            map_field(
                FieldInitial::Coherent(a),
                Frame::LabRotating,
                Frame::Displaced,
                a
            )
            .unwrap(),
            FieldInitial::Vacuum
        );
        assert!(map_field(
            FieldInitial::Fock(1),
            Frame::Displaced,
            Frame::LabRotating,
            a
        )
        .is_err());
        assert_eq!(
            map_field(
                FieldInitial::Fock(1),
                Frame::Displaced,
                Frame::EffectiveAtomic,
                a
            )
            .unwrap(),
            FieldInitial::Fock(1)
        );
    }

    #[test]
    fn custom_steady_coherent_field() {
        let cfg = resolve(
            Scenario::Custom,
            &[
                ("n_atoms", "1"),
                ("g", "0.001"),
                ("frame", "lab-rotating"),
                ("n_max", "15"),
                ("initial_atoms", "all-g"),
                ("mode", "steady"),
                ("observables", "nbar,g2,mandel_q,a_re,a_im"),
            ],
        );
        let t = run(&cfg).unwrap();
        let row = &t.rows()[0];
        assert!((row[0] - 1.0).abs() < 1e-3);
        assert!((row[1] - 1.0).abs() < 1e-3);
        assert!(row[2].abs() < 1e-3);
        assert!(row[3].abs() < 1e-3 && (row[4] + 1.0).abs() < 1e-3);
    }

    #[test]
    fn custom_rejects_inapplicable_observables() {
        let cfg = resolve(
            Scenario::Custom,
            &[("n_atoms", "1"), ("n_max", "2"), ("observables", "qd")],
        );
        assert!(run(&cfg).is_err());
        let cfg = resolve(
            Scenario::Custom,
            &[("frame", "effective-atomic"), ("observables", "nbar")],
        );
        assert!(run(&cfg).is_err());
    }

    #[test]
    fn small_sweep_reports_every_point() {
        let cfg = resolve(
            Scenario::Fig2Sweep,
            &[
                ("g_values", "0.1"),
                ("sweep_values", "1,2"),
                ("sweep_range", ""),
            ],
        );
        let t = run(&cfg).unwrap();
        assert_eq!(t.rows().len(), 4);
        assert!(t.failures().is_empty());
        assert!(t
            .metadata()
            .iter()
            .any(|(k, v)| k == "config.g_values" && v == "0.1"));
    }

    #[test]
    fn sweep_failures_do_not_abort() {
        let cfg = resolve(
            Scenario::Fig3Thermal,
            &[
                ("sweep_values", "0,5"),
                ("probes", "qd,eof,nbar"),
                ("truncation_limit", "4"),
                ("initial_atoms", "all-g"),
            ],
        );
        let t = run(&cfg).unwrap();
        assert_eq!(t.rows().len(), 2);
        assert_eq!(t.failures().len(), 1);
        assert!(t.rows()[1][5].is_nan());
    }
}
