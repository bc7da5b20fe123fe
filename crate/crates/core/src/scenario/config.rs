//! Flat `key = value` configuration with per-scenario defaults.
//!
//! Every key has a default, so the resolved configuration is a complete,
//! ordered map that can be echoed into output metadata and fed back in to
//! reproduce a run.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::dynamics::{MethodChoice, SteadyStateMethod, SteadyStateOptions};
use crate::error::{Error, Result};
use crate::model::{derived_params, AtomicInitial, FieldInitial, Frame, SystemConfig, KAPPA};
use crate::operator::C64;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scenario {
    Fig1Purity,
    Fig1Correlations,
    Fig2Sweep,
    Fig3Thermal,
    Custom,
    WindowReport,
}

impl Scenario {
    pub const ALL: [Scenario; 6] = [
        Scenario::Fig1Purity,
        Scenario::Fig1Correlations,
        Scenario::Fig2Sweep,
        Scenario::Fig3Thermal,
        Scenario::Custom,
        Scenario::WindowReport,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Scenario::Fig1Purity => "fig1-purity",
            Scenario::Fig1Correlations => "fig1-correlations",
            Scenario::Fig2Sweep => "fig2-sweep",
            Scenario::Fig3Thermal => "fig3-thermal",
            Scenario::Custom => "custom",
            Scenario::WindowReport => "window-report",
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scenario::ALL
            .iter()
            .copied()
            .find(|sc| sc.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown scenario '{s}'")))
    }
}

/// Parameter a sweep varies.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepParam {
    Epsilon,
    G,
    NTh,
}

impl SweepParam {
    pub fn name(&self) -> &'static str {
        match self {
            SweepParam::Epsilon => "epsilon",
            SweepParam::G => "g",
            SweepParam::NTh => "n_th",
        }
    }

    pub fn apply(&self, cfg: &mut SystemConfig, value: f64) {
        match self {
            SweepParam::Epsilon => cfg.epsilon = value,
            SweepParam::G => cfg.g = value,
            SweepParam::NTh => cfg.n_th = value,
        }
    }
}

impl FromStr for SweepParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "epsilon" => Ok(SweepParam::Epsilon),
            "g" => Ok(SweepParam::G),
            "n_th" => Ok(SweepParam::NTh),
            other => Err(Error::Config(format!(
                "sweep parameter must be one of epsilon, g, n_th (got '{other}')"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sweep {
    pub param: SweepParam,
    pub values: Vec<f64>,
}

/// Steady-state functionals used to test truncation convergence.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Probe {
    Qd,
    Eof,
    NBar,
    Purity,
}

impl Probe {
    pub fn name(&self) -> &'static str {
        match self {
            Probe::Qd => "qd",
            Probe::Eof => "eof",
            Probe::NBar => "nbar",
            Probe::Purity => "purity",
        }
    }
}

impl FromStr for Probe {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "qd" => Ok(Probe::Qd),
            "eof" => Ok(Probe::Eof),
            "nbar" => Ok(Probe::NBar),
            "purity" => Ok(Probe::Purity),
            other => Err(Error::Config(format!("unknown probe '{other}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CustomMode {
    Evolve,
    Steady,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Engine {
    /// Adaptive Runge–Kutta.
    Rk,
    /// Exact propagator with repeated squaring.
    Propagator,
}

/// Quantities a custom run can tabulate.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Observable {
    Purity,
    Qd,
    QdXform,
    Eof,
    Concurrence,
    XViolation,
    NBar,
    G2,
    MandelQ,
    FieldRe,
    FieldIm,
    Sz,
}

impl Observable {
    pub fn name(&self) -> &'static str {
        match self {
            Observable::Purity => "purity",
            Observable::Qd => "qd",
            Observable::QdXform => "qd_xform",
            Observable::Eof => "eof",
            Observable::Concurrence => "concurrence",
            Observable::XViolation => "x_violation",
            Observable::NBar => "nbar",
            Observable::G2 => "g2",
            Observable::MandelQ => "mandel_q",
            Observable::FieldRe => "a_re",
            Observable::FieldIm => "a_im",
            Observable::Sz => "s_z",
        }
    }

    /// Needs exactly two atoms.
    pub fn is_two_qubit(&self) -> bool {
        matches!(
            self,
            Observable::Qd
                | Observable::QdXform
                | Observable::Eof
                | Observable::Concurrence
                | Observable::XViolation
        )
    }

    pub fn needs_field(&self) -> bool {
        matches!(
            self,
            Observable::NBar
                | Observable::G2
                | Observable::MandelQ
                | Observable::FieldRe
                | Observable::FieldIm
        )
    }
}

impl FromStr for Observable {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        const ALL: [Observable; 12] = [
            Observable::Purity,
            Observable::Qd,
            Observable::QdXform,
            Observable::Eof,
            Observable::Concurrence,
            Observable::XViolation,
            Observable::NBar,
            Observable::G2,
            Observable::MandelQ,
            Observable::FieldRe,
            Observable::FieldIm,
            Observable::Sz,
        ];
        ALL.iter()
            .copied()
            .find(|o| o.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown observable '{s}'")))
    }
}

/// Fully resolved run configuration.
#[derive(Clone, Debug)]
pub struct ScenarioConfig {
    pub scenario: Scenario,
    pub system: SystemConfig,
    /// Choose the truncation with the convergence harness.
    pub auto_truncation: bool,
    pub initial_atoms: Vec<AtomicInitial>,
    pub initial_field: FieldInitial,
    pub sweep: Option<Sweep>,
    /// Coupling values of the ε sweep.
    pub g_values: Vec<f64>,
    /// Atom numbers for the purity curves and the window report.
    pub atom_counts: Vec<usize>,
    pub times: Vec<f64>,
    pub mode: CustomMode,
    pub engine: Engine,
    pub observables: Vec<Observable>,
    pub compare_frame: Option<Frame>,
    pub compare_n_max: usize,
    pub integrator_tol: f64,
    pub residual_tol: f64,
    /// Steady-state integration budget; `None` picks it from the rates.
    pub t_max: Option<f64>,
    pub steady_method: MethodChoice,
    pub probes: Vec<Probe>,
    pub truncation_tol: f64,
    pub truncation_limit: usize,
    /// Resolved key/value pairs in key order.
    pub echo: Vec<(String, String)>,
}

fn defaults(scenario: Scenario) -> BTreeMap<&'static str, &'static str> {
    let mut m: BTreeMap<&'static str, &'static str> = [
        ("n_atoms", "2"),
        ("g", "0.01"),
        ("epsilon", "1"),
        ("delta", "0"),
        ("delta_atom", "0"),
        ("n_th", "0"),
        ("n_max", "auto"),
        ("frame", "displaced"),
        ("initial_atoms", "all-e"),
        ("initial_field", "vacuum"),
        ("sweep_param", "none"),
        ("sweep_values", ""),
        ("sweep_range", ""),
        ("points_per_decade", "12"),
        ("g_values", "0.01,0.1,1"),
        ("atom_counts", "1,2,3"),
        ("time_grid", "log"),
        ("t_start", "0.1"),
        ("t_end", "1e6"),
        ("t_points", "101"),
        ("times", ""),
        ("mode", "evolve"),
        ("engine", "rk"),
        ("observables", "purity"),
        ("compare_frame", "none"),
        ("compare_n_max", "20"),
        ("integrator_tol", "1e-10"),
        ("residual_tol", "1e-9"),
        ("t_max", "auto"),
        ("steady_method", "auto"),
        ("nullspace_max_coords", "100000"),
        ("probes", "qd,eof,nbar"),
        ("truncation_tol", "1e-6"),
        ("truncation_limit", "256"),
    ]
    .into_iter()
    .collect();
    match scenario {
        Scenario::Fig1Purity => {
            m.insert("probes", "purity");
            m.insert("engine", "propagator");
        }
        Scenario::Fig1Correlations => {
            m.insert("probes", "purity,qd,eof");
            m.insert("engine", "propagator");
        }
        Scenario::Fig2Sweep => {
            m.insert("initial_atoms", "e-g,all-g");
            m.insert("sweep_param", "epsilon");
            m.insert("sweep_range", "1e-3:10");
        }
        Scenario::Fig3Thermal => {
            m.insert("g", "0.1");
            m.insert("epsilon", "0");
            m.insert("frame", "thermal");
            m.insert("initial_atoms", "e-g,all-g");
            m.insert("sweep_param", "n_th");
            m.insert("sweep_values", "0,0.25,0.5,1,1.5,2,3,4,5,6,7,8,9,10");
            m.insert("probes", "qd,eof");
        }
        Scenario::Custom | Scenario::WindowReport => {}
    }
    m
}

/// Reads `key = value` lines; `#` starts a comment.
pub fn parse_config_text(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key = value", lineno + 1)))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

pub fn read_config_file(path: &Path) -> Result<Vec<(String, String)>> {
    parse_config_text(&std::fs::read_to_string(path)?)
}

/// Splits `key=value`.
pub fn parse_override(s: &str) -> Result<(String, String)> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override '{s}' is not key=value")))?;
    Ok((k.trim().to_string(), v.trim().to_string()))
}

fn num<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse '{v}'")))
}

fn list<T: FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| num(key, s))
        .collect()
}

fn parse_list<T>(v: &str, f: impl Fn(&str) -> Result<T>) -> Result<Vec<T>> {
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(f)
        .collect()
}

/// `lo`, `hi` and everything in between at `per_decade` log-spaced points,
/// endpoints included.
pub fn log_grid(lo: f64, hi: f64, per_decade: usize) -> Result<Vec<f64>> {
    if !(lo > 0.0 && hi > lo && per_decade > 0) {
        return Err(Error::Config(format!(
            "log grid needs 0 < lo < hi and points per decade > 0 (got {lo}, {hi}, {per_decade})"
        )));
    }
    let decades = (hi / lo).log10();
    let steps = (decades * per_decade as f64).round().max(1.0) as usize;
    Ok((0..=steps)
        .map(|k| {
            if k == steps {
                hi
            } else {
                lo * 10f64.powf(decades * k as f64 / steps as f64)
            }
        })
        .collect())
}

fn parse_field(v: &str) -> Result<FieldInitial> {
    let bad = || Error::Config(format!("initial_field: cannot parse '{v}'"));
    if v == "vacuum" {
        return Ok(FieldInitial::Vacuum);
    }
    let (kind, arg) = v.split_once(':').ok_or_else(bad)?;
    match kind {
        "fock" => Ok(FieldInitial::Fock(arg.trim().parse().map_err(|_| bad())?)),
        "thermal" => Ok(FieldInitial::Thermal(
            arg.trim().parse().map_err(|_| bad())?,
        )),
        "coherent" => {
            let parts: Vec<f64> = list("initial_field", arg)?;
            match parts.as_slice() {
                [re] => Ok(FieldInitial::Coherent(C64::new(*re, 0.0))),
                [re, im] => Ok(FieldInitial::Coherent(C64::new(*re, *im))),
                _ => Err(bad()),
            }
        }
        _ => Err(bad()),
    }
}

impl ScenarioConfig {
    /// Defaults for `scenario` overlaid with `pairs` in order (later wins).
    pub fn resolve(scenario: Scenario, pairs: &[(String, String)]) -> Result<Self> {
        let defaults = defaults(scenario);
        let mut map: BTreeMap<String, String> = defaults
            .iter()
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect();
        for (k, v) in pairs {
            if !defaults.contains_key(k.as_str()) {
                return Err(Error::Config(format!("unknown key '{k}'")));
            }
            map.insert(k.clone(), v.clone());
        }
        let get = |k: &str| map[k].as_str();

        let n_max_raw = get("n_max");
        let auto_truncation = n_max_raw == "auto";
        let system = SystemConfig {
            n_atoms: num("n_atoms", get("n_atoms"))?,
            g: num("g", get("g"))?,
            epsilon: num("epsilon", get("epsilon"))?,
            delta: num("delta", get("delta"))?,
            delta_atom: num("delta_atom", get("delta_atom"))?,
            n_th: num("n_th", get("n_th"))?,
            n_max: if auto_truncation {
                1
            } else {
                num("n_max", n_max_raw)?
            },
            frame: get("frame").parse()?,
        };

        let atoms_raw = get("initial_atoms");
        let initial_atoms = if atoms_raw.starts_with("custom:") {
            vec![atoms_raw.parse()?]
        } else {
            parse_list(atoms_raw, |s| s.parse())?
        };
        if initial_atoms.is_empty() {
            return Err(Error::Config("initial_atoms is empty".into()));
        }

        let per_decade: usize = num("points_per_decade", get("points_per_decade"))?;
        let sweep = match get("sweep_param") {
            "none" => None,
            p => {
                let param: SweepParam = p.parse()?;
                let values = match (get("sweep_values"), get("sweep_range")) {
                    (v, _) if !v.is_empty() => list("sweep_values", v)?,
                    (_, r) if !r.is_empty() => {
                        let (lo, hi) = r
                            .split_once(':')
                            .ok_or_else(|| Error::Config("sweep_range must be lo:hi".into()))?;
                        log_grid(num("sweep_range", lo)?, num("sweep_range", hi)?, per_decade)?
                    }
                    _ => {
                        return Err(Error::Config(
                            "sweep needs sweep_values or sweep_range".into(),
                        ))
                    }
                };
                if values.is_empty() {
                    return Err(Error::Config("sweep has no values".into()));
                }
                Some(Sweep { param, values })
            }
        };

        let times = if !get("times").is_empty() {
            list("times", get("times"))?
        } else {
            let (t0, t1): (f64, f64) =
                (num("t_start", get("t_start"))?, num("t_end", get("t_end"))?);
            match get("time_grid") {
                "log" => log_grid(t0, t1, per_decade)?,
                "linear" => {
                    let n: usize = num("t_points", get("t_points"))?;
                    if n < 2 || !(t1 > t0) {
                        return Err(Error::Config(
                            "linear grid needs t_points >= 2 and t_end > t_start".into(),
                        ));
                    }
                    (0..n)
                        .map(|k| t0 + (t1 - t0) * k as f64 / (n - 1) as f64)
                        .collect()
                }
                other => {
                    return Err(Error::Config(format!(
                        "time_grid must be log or linear, got '{other}'"
                    )))
                }
            }
        };

        let steady_method = match get("steady_method") {
            "auto" => MethodChoice::Auto {
                max_coords: num("nullspace_max_coords", get("nullspace_max_coords"))?,
            },
            "nullspace" => MethodChoice::Force(SteadyStateMethod::Nullspace),
            "integration" => MethodChoice::Force(SteadyStateMethod::LongTimeIntegration),
            other => return Err(Error::Config(format!("unknown steady_method '{other}'"))),
        };

        let cfg = ScenarioConfig {
            scenario,
            system,
            auto_truncation,
            initial_atoms,
            initial_field: parse_field(get("initial_field"))?,
            sweep,
            g_values: list("g_values", get("g_values"))?,
            atom_counts: list("atom_counts", get("atom_counts"))?,
            times,
            mode: match get("mode") {
                "evolve" => CustomMode::Evolve,
                "steady" => CustomMode::Steady,
                other => {
                    return Err(Error::Config(format!(
                        "mode must be evolve or steady, got '{other}'"
                    )))
                }
            },
            engine: match get("engine") {
                "rk" => Engine::Rk,
                "propagator" => Engine::Propagator,
                other => {
                    return Err(Error::Config(format!(
                        "engine must be rk or propagator, got '{other}'"
                    )))
                }
            },
            observables: parse_list(get("observables"), |s| s.parse())?,
            compare_frame: match get("compare_frame") {
                "none" => None,
                f => Some(f.parse()?),
            },
            compare_n_max: num("compare_n_max", get("compare_n_max"))?,
            integrator_tol: num("integrator_tol", get("integrator_tol"))?,
            residual_tol: num("residual_tol", get("residual_tol"))?,
            t_max: match get("t_max") {
                "auto" => None,
                v => Some(num("t_max", v)?),
            },
            steady_method,
            probes: parse_list(get("probes"), |s| s.parse())?,
            truncation_tol: num("truncation_tol", get("truncation_tol"))?,
            truncation_limit: num("truncation_limit", get("truncation_limit"))?,
            echo: map.into_iter().collect(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<()> {
        let mut probe = self.system.clone();
        if let Some(sweep) = &self.sweep {
            // Check every sweep point, not just the base values.
            for &v in &sweep.values {
                sweep.param.apply(&mut probe, v);
                probe.validate()?;
            }
        } else {
            probe.validate()?;
        }
        for (name, v) in [
            ("integrator_tol", self.integrator_tol),
            ("residual_tol", self.residual_tol),
            ("truncation_tol", self.truncation_tol),
        ] {
            if !(v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.times.iter().any(|t| !(*t >= 0.0)) || self.times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config(
                "times must be nonnegative and strictly increasing".into(),
            ));
        }
        if self.atom_counts.contains(&0) || self.g_values.iter().any(|&g| !(g >= 0.0)) {
            return Err(Error::Config(
                "atom_counts must be >= 1 and g_values >= 0".into(),
            ));
        }
        Ok(())
    }

    /// Steady-state options for one system, with the integration budget
    /// derived from its slowest rates unless set explicitly.
    pub fn steady_options(&self, system: &SystemConfig) -> SteadyStateOptions {
        let gamma = derived_params(system).gamma_eff.max(1e-300);
        let t_max = self.t_max.unwrap_or(match system.frame {
            Frame::Thermal => 50.0 * (1.0 + 2.0 * system.n_th) / KAPPA + 50.0 / gamma,
            _ => 50.0 / gamma,
        });
        SteadyStateOptions {
            residual_tol: self.residual_tol,
            t_max: t_max.min(1e12),
            integrator_tol: self.integrator_tol,
            method: self.steady_method,
        }
    }
}
