//! Fock-space truncation chosen by doubling until steady-state probes settle.

use log::debug;

use super::config::Probe;
use crate::correlations::{correlation_report, purity};
use crate::dynamics::{steady_state, SteadyStateOptions, SteadyStateResult};
use crate::error::{Error, Result};
use crate::model::{build_generator, initial_state, AtomicInitial, FieldInitial, SystemConfig};
use crate::operator::{atomic_reduction, field_reduction, DensityMatrix};

#[derive(Clone, Debug)]
pub struct TruncationOptions {
    /// Largest allowed change of any probe between `n` and `2n`.
    pub tol: f64,
    /// Give up once `2n` would exceed this.
    pub limit: usize,
    pub start: usize,
    pub steady: SteadyStateOptions,
    pub field: FieldInitial,
}

impl Default for TruncationOptions {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            limit: 256,
            start: 1,
            steady: SteadyStateOptions::default(),
            field: FieldInitial::Vacuum,
        }
    }
}

#[derive(Clone, Debug)]
pub struct TruncationChoice {
    pub n_max: usize,
    /// Largest probe change between `n_max` and `2·n_max`.
    pub max_change: f64,
    /// Probe values at `n_max`, NaN where a probe does not apply.
    pub probe_values: Vec<f64>,
    /// Steady state at `n_max`.
    pub steady: SteadyStateResult,
}

/// Probe values of a state; NaN for probes that do not apply (discord for
/// N ≠ 2, photon number without a field).
pub fn probe_values(rho: &DensityMatrix, probes: &[Probe]) -> Result<Vec<f64>> {
    let layout = rho.layout();
    let atoms = if layout.has_field() {
        atomic_reduction(rho)?
    } else {
        rho.clone()
    };
    let report =
        if layout.atom_count() == 2 && probes.iter().any(|p| matches!(p, Probe::Qd | Probe::Eof)) {
            Some(correlation_report(&atoms)?)
        } else {
            None
        };
    probes
        .iter()
        .map(|p| {
            Ok(match p {
                Probe::Qd => report.map_or(f64::NAN, |r| r.qd),
                Probe::Eof => report.map_or(f64::NAN, |r| r.eof),
                Probe::Purity => purity(&atoms),
                Probe::NBar => {
                    if layout.has_field() {
                        let f = field_reduction(rho)?;
                        (0..f.dim()).map(|n| n as f64 * f.matrix()[(n, n)].re).sum()
                    } else {
                        f64::NAN
                    }
                }
            })
        })
        .collect()
}

fn steady_at(
    cfg: &SystemConfig,
    initial: &AtomicInitial,
    probes: &[Probe],
    opts: &TruncationOptions,
) -> Result<(SteadyStateResult, Vec<f64>)> {
    let generator = build_generator(cfg)?;
    let rho0 = initial_state(cfg.layout(), initial, opts.field)?;
    let ss = steady_state(&generator, &rho0, &opts.steady)?;
    let values = probe_values(&ss.rho_ss, probes)?;
    Ok((ss, values))
}

/// Smallest `n_max` in the doubling sequence `start, 2·start, …` for which
/// doubling once more changes every probe by less than `opts.tol`.
pub fn choose_truncation(
    cfg: &SystemConfig,
    initial: &AtomicInitial,
    probes: &[Probe],
    opts: &TruncationOptions,
) -> Result<TruncationChoice> {
    cfg.validate()?;
    if !cfg.layout().has_field() {
        let (steady, probe_values) = steady_at(cfg, initial, probes, opts)?;
        return Ok(TruncationChoice {
            n_max: cfg.n_max,
            max_change: 0.0,
            probe_values,
            steady,
        });
    }
    let mut n = opts.start.max(1);
    let mut current = steady_at(&cfg.with_n_max(n), initial, probes, opts)?;
    while 2 * n <= opts.limit {
        let next = steady_at(&cfg.with_n_max(2 * n), initial, probes, opts)?;
        let change = current
            .1
            .iter()
            .zip(&next.1)
            .filter(|(a, b)| a.is_finite() && b.is_finite())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        debug!("truncation n_max = {n}: probe change {change:.3e}");
        if change < opts.tol {
            return Ok(TruncationChoice {
                n_max: n,
                max_change: change,
                probe_values: current.1,
                steady: current.0,
            });
        }
        n *= 2;
        current = next;
    }
    Err(Error::TruncationNotConverged(opts.limit))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Frame;

    #[test]
    fn displaced_frame_needs_few_photons() {
        let cfg = SystemConfig {
            g: 0.01,
            epsilon: 1.0,
            frame: Frame::Displaced,
            ..Default::default()
        };
        let probes = [Probe::Qd, Probe::Eof, Probe::NBar];
        let choice = choose_truncation(
            &cfg,
            &AtomicInitial::AllGround,
            &probes,
            &TruncationOptions::default(),
        )
        .unwrap();
        assert!(choice.n_max <= 8);
        // Harness monotonicity: the chosen value agrees with its doubling.
        let (_, doubled) = steady_at(
            &cfg.with_n_max(2 * choice.n_max),
            &AtomicInitial::AllGround,
            &probes,
            &TruncationOptions::default(),
        )
        .unwrap();
        for (a, b) in choice.probe_values.iter().zip(&doubled) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn cold_thermal_cavity_stays_small() {
        let cfg = SystemConfig {
            g: 0.1,
            epsilon: 0.0,
            n_th: 0.0,
            frame: Frame::Thermal,
            ..Default::default()
        };
        let choice = choose_truncation(
            &cfg,
            &AtomicInitial::ExcitedGround,
            &[Probe::Qd, Probe::Eof, Probe::NBar],
            &TruncationOptions::default(),
        )
        .unwrap();
        assert!(choice.n_max <= 4);
    }

    #[test]
    fn hot_cavity_needs_a_long_tail() {
        let cfg = SystemConfig {
            n_atoms: 1,
            g: 0.1,
            epsilon: 0.0,
            n_th: 5.0,
            frame: Frame::Thermal,
            ..Default::default()
        };
        let choice = choose_truncation(
            &cfg,
            &AtomicInitial::AllGround,
            &[Probe::NBar, Probe::Purity],
            &TruncationOptions::default(),
        )
        .unwrap();
        assert!(choice.n_max >= 30);
        // Truncated geometric mean photon number, summed directly.
        let x: f64 = 5.0 / 6.0;
        let weights: Vec<f64> = (0..=choice.n_max).map(|n| x.powi(n as i32)).collect();
        let z: f64 = weights.iter().sum();
        let mean: f64 = weights
            .iter()
            .enumerate()
            .map(|(n, w)| n as f64 * w)
            .sum::<f64>()
            / z;
        assert!((choice.probe_values[0] - mean).abs() < 1e-6);
    }

    #[test]
    fn reports_failure_at_limit() {
        let cfg = SystemConfig {
            n_atoms: 1,
            g: 0.1,
            epsilon: 0.0,
            n_th: 5.0,
            frame: Frame::Thermal,
            ..Default::default()
        };
        let opts = TruncationOptions {
            limit: 4,
            ..Default::default()
        };
        assert!(matches!(
            choose_truncation(&cfg, &AtomicInitial::AllGround, &[Probe::NBar], &opts),
            Err(Error::TruncationNotConverged(4))
        ));
    }
}
