//! Time evolution and steady states of Lindblad generators.
//!
//! Three engines share the same [`Generator`]:
//!
//! * [`evolve`]: adaptive Dormand–Prince 5(4) on the density matrix, using
//!   sparse operator products. Good for short and moderate horizons.
//! * [`evolve_propagator`]: exact propagation with `exp(L·h)` of the real
//!   superoperator and repeated squaring. Suited to very long, log-spaced time
//!   grids on small Hilbert spaces.
//! * [`steady_state`]: long-time integration, or a null-space projection
//!   through the resolvent of the superoperator.

use faer::linalg::solvers::Solve;
use log::debug;
use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::{apply_generator, Generator};
use crate::operator::{CMatrix, DensityMatrix, Operator, StateTolerance, C64, ZERO};

/// Step accounting and invariant monitoring for one run.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct IntegratorStats {
    pub accepted_steps: usize,
    pub rejected_steps: usize,
    pub rhs_evaluations: usize,
    /// Largest |Tr ρ − 1| seen after an accepted step, before renormalizing.
    pub max_trace_drift: f64,
    pub renormalizations: usize,
    pub max_hermiticity_violation: f64,
    /// Smallest eigenvalue over the stored states.
    pub min_eigenvalue: f64,
    /// Sum of the accepted local error estimates (entrywise max norm).
    pub error_estimate: f64,
}

/// States of a run at the requested times.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<DensityMatrix>,
    pub stats: IntegratorStats,
}

/// `Tr(ρ(t) · observable)` for every stored state.
pub fn record(traj: &Trajectory, observable: &Operator) -> Result<Vec<f64>> {
    let violation = observable.hermiticity_violation();
    if violation > crate::operator::TOL_HERM {
        return Err(Error::NotHermitian(violation));
    }
    traj.states
        .iter()
        .map(|rho| {
            let v = rho.expectation(observable)?;
            if v.im.abs() > 1e-10 {
                return Err(Error::InvalidState(format!(
                    "expectation value has imaginary part {:.3e}",
                    v.im
                )));
            }
            Ok(v.re)
        })
        .collect()
}

fn check_grid(rho0: &DensityMatrix, gen: &Generator, t_grid: &[f64]) -> Result<()> {
    gen.hamiltonian().require_layout(rho0.layout())?;
    if t_grid.is_empty() {
        return Err(Error::InvalidParameter("empty time grid".into()));
    }
    if t_grid.iter().any(|t| !t.is_finite()) || t_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidParameter(
            "time grid must be finite and strictly increasing".into(),
        ));
    }
    Ok(())
}

fn store(
    m: &CMatrix,
    layout: crate::operator::HilbertLayout,
    time: f64,
    limit: f64,
    stats: &mut IntegratorStats,
) -> Result<DensityMatrix> {
    let op = Operator::new(layout, m.clone())?;
    stats.max_hermiticity_violation = stats
        .max_hermiticity_violation
        .max(op.hermiticity_violation());
    let tol = StateTolerance {
        hermiticity: limit,
        trace: limit,
        positivity: limit,
    };
    let rho = DensityMatrix::with_tolerance(op, tol).map_err(|e| Error::Integration {
        time,
        reason: format!("{e}; truncation too small or step failure"),
    })?;
    stats.min_eigenvalue = stats.min_eigenvalue.min(rho.min_eigenvalue());
    Ok(rho)
}

// Dormand–Prince 5(4) tableau.
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
// Fifth-order minus embedded fourth-order weights.
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

/// Adaptive Dormand–Prince stepper on a density matrix.
struct Dopri5<'a> {
    gen: &'a Generator,
    y: CMatrix,
    t: f64,
    h: f64,
    tol: f64,
    k: Vec<CMatrix>,
    stage: CMatrix,
    scratch: CMatrix,
    stats: IntegratorStats,
}

impl<'a> Dopri5<'a> {
    fn new(gen: &'a Generator, y0: CMatrix, t0: f64, tol: f64) -> Self {
        let d = y0.nrows();
        let mut s = Self {
            gen,
            y: y0,
            t: t0,
            h: 0.0,
            tol,
            k: vec![CMatrix::zeros(d, d); 7],
            stage: CMatrix::zeros(d, d),
            scratch: CMatrix::zeros(d, d),
            stats: IntegratorStats {
                min_eigenvalue: f64::INFINITY,
                ..Default::default()
            },
        };
        let (k0, scratch) = (&mut s.k[0], &mut s.scratch);
        gen.apply_into(&s.y, k0, scratch);
        s.stats.rhs_evaluations += 1;
        let scale = s.k[0].iter().fold(0.0f64, |m, z| m.max(z.norm()));
        s.h = if scale > 0.0 {
            (0.01 * tol.powf(0.2) / scale).max(1e-8)
        } else {
            1.0
        };
        s
    }

    /// Entrywise max of the current derivative, i.e. the steady-state residual.
    fn residual(&self) -> f64 {
        self.k[0].iter().fold(0.0f64, |m, z| m.max(z.norm()))
    }

    /// Advance exactly to `t_end`.
    fn advance_to(&mut self, t_end: f64) -> Result<()> {
        const MAX_STEPS: usize = 50_000_000;
        while self.t < t_end {
            if self.stats.accepted_steps + self.stats.rejected_steps > MAX_STEPS {
                return Err(Error::Integration {
                    time: self.t,
                    reason: "step budget exhausted".into(),
                });
            }
            let remaining = t_end - self.t;
            let last = self.h >= remaining;
            let h = if last { remaining } else { self.h };
            let err = self.try_step(h);
            if !err.is_finite() {
                return Err(Error::Integration {
                    time: self.t,
                    reason: "non-finite state".into(),
                });
            }
            let factor = if err == 0.0 {
                5.0
            } else {
                (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
            };
            if err <= 1.0 {
                self.accept(h, err);
                if last {
                    self.t = t_end;
                    // Keep the step the controller wants, not the clipped one.
                    self.h = self.h.max(h * factor);
                } else {
                    self.h = h * factor;
                }
            } else {
                self.stats.rejected_steps += 1;
                self.h = h * factor.min(1.0);
                if self.h < 1e-14 * t_end.abs().max(1.0) {
                    return Err(Error::Integration {
                        time: self.t,
                        reason: "step size underflow".into(),
                    });
                }
            }
        }
        Ok(())
    }

    /// Computes stages into `k[1..]` and the candidate into `stage`; returns
    /// the scaled error norm.
    fn try_step(&mut self, h: f64) -> f64 {
        let d = self.y.nrows();
        for s in 1..7 {
            self.stage.copy_from(&self.y);
            for (j, &a) in A[s].iter().enumerate().take(s) {
                if a != 0.0 {
                    let w = C64::new(h * a, 0.0);
                    self.stage.zip_apply(&self.k[j], |y, k| *y += w * k);
                }
            }
            let (before, after) = self.k.split_at_mut(s);
            let _ = before;
            self.gen
                .apply_into(&self.stage, &mut after[0], &mut self.scratch);
            self.stats.rhs_evaluations += 1;
        }
        // Stage 7 was evaluated at the fifth-order solution (FSAL), which is
        // what `stage` now holds.
        let mut err = 0.0f64;
        for j in 0..d {
            for i in 0..d {
                let mut e = ZERO;
                for (s, &w) in E.iter().enumerate() {
                    if w != 0.0 {
                        e += self.k[s][(i, j)] * w;
                    }
                }
                err = err.max((e * h).norm());
            }
        }
        err / self.tol
    }

    fn accept(&mut self, h: f64, err: f64) {
        self.stats.accepted_steps += 1;
        self.stats.error_estimate += err * self.tol;
        std::mem::swap(&mut self.y, &mut self.stage);
        self.k.swap(0, 6);
        // The right-hand side is only the Lindblad map on Hermitian input and
        // can amplify rounding-level anti-Hermitian parts, so project back.
        let d = self.y.nrows();
        for j in 0..d {
            self.y[(j, j)].im = 0.0;
            for i in 0..j {
                let avg = (self.y[(i, j)] + self.y[(j, i)].conj()) * 0.5;
                self.y[(i, j)] = avg;
                self.y[(j, i)] = avg.conj();
            }
        }
        self.t += h;
        let tr = self.y.trace();
        let drift = (tr - C64::new(1.0, 0.0)).norm();
        self.stats.max_trace_drift = self.stats.max_trace_drift.max(drift);
        if drift > 1e-12 {
            let inv = C64::new(1.0 / tr.re, 0.0);
            self.y *= inv;
            self.stats.renormalizations += 1;
            let (k0, scratch) = (&mut self.k[0], &mut self.scratch);
            self.gen.apply_into(&self.y, k0, scratch);
            self.stats.rhs_evaluations += 1;
        }
    }
}

/// Integrate from `t_grid[0]` (where the state is `rho0`) through every grid
/// time with local error tolerance `tol`. Stored states that violate the
/// density-matrix invariants by more than `10·tol` abort the run.
pub fn evolve(
    gen: &Generator,
    rho0: &DensityMatrix,
    t_grid: &[f64],
    tol: f64,
) -> Result<Trajectory> {
    check_grid(rho0, gen, t_grid)?;
    if !(tol > 0.0) {
        return Err(Error::InvalidParameter("tolerance must be positive".into()));
    }
    let layout = rho0.layout();
    let limit = (10.0 * tol).max(crate::operator::TOL_POSITIVITY);
    let mut stepper = Dopri5::new(gen, rho0.matrix().clone(), t_grid[0], tol);
    let mut states = Vec::with_capacity(t_grid.len());
    for &t in t_grid {
        stepper.advance_to(t)?;
        states.push(store(&stepper.y, layout, t, limit, &mut stepper.stats)?);
    }
    Ok(Trajectory {
        times: t_grid.to_vec(),
        states,
        stats: stepper.stats,
    })
}

/// Coordinate kinds of the real Hermitian basis.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Coord {
    /// `|i⟩⟨i|`.
    Diag(usize),
    /// `(|i⟩⟨j| + |j⟩⟨i|)/√2`, i < j.
    Re(usize, usize),
    /// `(−i|i⟩⟨j| + i|j⟩⟨i|)/√2`, i < j.
    Im(usize, usize),
}

/// Real matrix of a Lindblad generator acting on Hermitian operators,
/// expressed in an orthonormal Hermitian basis. Optionally restricted to the
/// block of matrix elements `ρ_ij` with equal excitation charge.
#[derive(Clone, Debug)]
pub struct Superoperator {
    dim: usize,
    coords: Vec<Coord>,
    /// `pair_index[i * dim + j]` (i ≤ j): coordinate index of Diag or Re.
    pair_index: Vec<usize>,
    /// Sparse columns, row indices ascending.
    columns: Vec<Vec<(usize, f64)>>,
    sector: bool,
}

const ABSENT: usize = usize::MAX;

impl Superoperator {
    /// Full superoperator on all `dim²` real coordinates.
    pub fn new(gen: &Generator) -> Result<Self> {
        Self::build(gen, None)
    }

    /// Restriction to charge-diagonal elements, when the generator conserves
    /// the excitation charge. Returns `None` if it does not.
    pub fn charge_sector(gen: &Generator) -> Result<Option<Self>> {
        match gen.excitation_charges() {
            Some(q) => Ok(Some(Self::build(gen, Some(&q))?)),
            None => Ok(None),
        }
    }

    fn build(gen: &Generator, charges: Option<&[i64]>) -> Result<Self> {
        let dim = gen.dim();
        let keep = |i: usize, j: usize| charges.is_none_or(|q| q[i] == q[j]);
        let mut coords = Vec::new();
        let mut pair_index = vec![ABSENT; dim * dim];
        for i in 0..dim {
            for j in i..dim {
                if !keep(i, j) {
                    continue;
                }
                pair_index[i * dim + j] = coords.len();
                if i == j {
                    coords.push(Coord::Diag(i));
                } else {
                    coords.push(Coord::Re(i, j));
                    coords.push(Coord::Im(i, j));
                }
            }
        }
        let n = coords.len();
        let mut columns = Vec::with_capacity(n);
        let h_eff = gen.h_eff_sparse();
        let jumps: Vec<_> = gen.jumps_sparse().collect();
        let sqrt2 = std::f64::consts::SQRT_2;
        let mut entries: Vec<(usize, usize, C64)> = Vec::new();
        let mut col: Vec<(usize, f64)> = Vec::new();

        for c in 0..n {
            let (i, j, phase, half) = match coords[c] {
                Coord::Diag(i) => (i, i, C64::new(1.0, 0.0), 0.5),
                Coord::Re(i, j) => (i, j, C64::new(1.0, 0.0), std::f64::consts::FRAC_1_SQRT_2),
                Coord::Im(i, j) => (i, j, C64::new(0.0, -1.0), std::f64::consts::FRAC_1_SQRT_2),
            };
            if matches!(coords[c], Coord::Im(..)) && c > 0 && matches!(coords[c - 1], Coord::Re(..))
            {
                // Same M = L(|i⟩⟨j|) as the preceding Re column.
            } else {
                entries.clear();
                // −i H_eff |i⟩⟨j|
                for &(k, v) in h_eff.column(i) {
                    entries.push((k, j, C64::new(0.0, -1.0) * v));
                }
                // +i |i⟩⟨j| H_eff†
                for &(l, v) in h_eff.column(j) {
                    entries.push((i, l, C64::new(0.0, 1.0) * v.conj()));
                }
                // 2r (A|i⟩)(A|j⟩)†
                for (a, rate2) in &jumps {
                    for &(k, u) in a.column(i) {
                        for &(l, w) in a.column(j) {
                            entries.push((k, l, u * w.conj() * *rate2));
                        }
                    }
                }
            }
            col.clear();
            // Hermitian image Y = half·(phase·M + (phase·M)†); read its upper triangle.
            for &(k, l, v) in &entries {
                let w = phase * v * half;
                let (r, s, y) = if k < l {
                    (k, l, w)
                } else if k > l {
                    (l, k, w.conj())
                } else {
                    (k, k, C64::new(2.0 * w.re, 0.0))
                };
                let idx = pair_index[r * dim + s];
                if idx == ABSENT {
                    if y.norm() == 0.0 {
                        continue;
                    }
                    return Err(Error::InvalidParameter(
                        "generator leaks out of the excitation sector".into(),
                    ));
                }
                if r == s {
                    col.push((idx, y.re));
                } else {
                    col.push((idx, sqrt2 * y.re));
                    col.push((idx + 1, -sqrt2 * y.im));
                }
            }
            col.sort_unstable_by_key(|e| e.0);
            let mut merged: Vec<(usize, f64)> = Vec::with_capacity(col.len());
            for &(r, v) in &col {
                match merged.last_mut() {
                    Some(last) if last.0 == r => last.1 += v,
                    _ => merged.push((r, v)),
                }
            }
            merged.retain(|e| e.1 != 0.0);
            columns.push(merged);
        }
        Ok(Self {
            dim,
            coords,
            pair_index,
            columns,
            sector: charges.is_some(),
        })
    }

    /// Number of real coordinates.
    pub fn size(&self) -> usize {
        self.coords.len()
    }

    pub fn is_sector(&self) -> bool {
        self.sector
    }

    /// Dense copy of the real matrix.
    pub fn dense(&self) -> DMatrix<f64> {
        let n = self.size();
        let mut m = DMatrix::zeros(n, n);
        for (c, col) in self.columns.iter().enumerate() {
            for &(r, v) in col {
                m[(r, c)] = v;
            }
        }
        m
    }

    /// `L x` in coordinates.
    pub fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.size());
        for (col, &xc) in self.columns.iter().zip(x.iter()) {
            if xc != 0.0 {
                for &(r, v) in col {
                    out[r] += v * xc;
                }
            }
        }
        out
    }

    /// `Lᵀ x` in coordinates.
    fn apply_transpose(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(
            self.size(),
            self.columns
                .iter()
                .map(|col| col.iter().map(|&(r, v)| v * x[r]).sum::<f64>()),
        )
    }

    /// Induced 1-norm (largest absolute column sum).
    pub fn norm_1(&self) -> f64 {
        self.columns
            .iter()
            .map(|col| col.iter().map(|e| e.1.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    /// Sparse LU factors of `s·I − L`.
    fn shifted_lu(&self, s: f64) -> Result<faer::sparse::linalg::solvers::Lu<usize, f64>> {
        use faer::sparse::{SparseColMat, Triplet};
        let n = self.size();
        let mut triplets = Vec::with_capacity(n + self.columns.iter().map(Vec::len).sum::<usize>());
        for (c, col) in self.columns.iter().enumerate() {
            triplets.extend(col.iter().map(|&(r, v)| Triplet::new(r, c, -v)));
            triplets.push(Triplet::new(c, c, s));
        }
        let singular = |e: &dyn std::fmt::Debug| {
            Error::InvalidParameter(format!("shifted Liouvillian: {e:?}"))
        };
        let m = SparseColMat::<usize, f64>::try_new_from_triplets(n, n, &triplets)
            .map_err(|e| singular(&e))?;
        m.sp_lu().map_err(|e| singular(&e))
    }

    /// Whether every nonzero element of `m` has a coordinate.
    pub fn supports(&self, m: &CMatrix) -> bool {
        let d = self.dim;
        (0..d).all(|i| {
            (i..d).all(|j| self.pair_index[i * d + j] != ABSENT || m[(i, j)].norm() == 0.0)
        })
    }

    pub fn to_coords(&self, m: &CMatrix) -> DVector<f64> {
        let sqrt2 = std::f64::consts::SQRT_2;
        DVector::from_iterator(
            self.coords.len(),
            self.coords.iter().map(|c| match *c {
                Coord::Diag(i) => m[(i, i)].re,
                Coord::Re(i, j) => sqrt2 * m[(i, j)].re,
                Coord::Im(i, j) => -sqrt2 * m[(i, j)].im,
            }),
        )
    }

    pub fn from_coords(&self, x: &DVector<f64>) -> CMatrix {
        let d = self.dim;
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let mut m = CMatrix::zeros(d, d);
        for (c, &v) in self.coords.iter().zip(x.iter()) {
            match *c {
                Coord::Diag(i) => m[(i, i)] = C64::new(v, 0.0),
                Coord::Re(i, j) => {
                    m[(i, j)].re = s * v;
                    m[(j, i)].re = s * v;
                }
                Coord::Im(i, j) => {
                    m[(i, j)].im = -s * v;
                    m[(j, i)].im = s * v;
                }
            }
        }
        m
    }

    fn trace_of(&self, x: &DVector<f64>) -> f64 {
        self.coords
            .iter()
            .zip(x.iter())
            .filter(|(c, _)| matches!(c, Coord::Diag(_)))
            .map(|(_, v)| v)
            .sum()
    }
}

/// Superoperator for `gen`, restricted to the excitation sector when the
/// generator conserves it and every state in `states` lies inside it.
pub fn superoperator_for(gen: &Generator, states: &[&DensityMatrix]) -> Result<Superoperator> {
    if let Some(sector) = Superoperator::charge_sector(gen)? {
        if states.iter().all(|r| sector.supports(r.matrix())) {
            return Ok(sector);
        }
    }
    Superoperator::new(gen)
}

/// `exp(L·h)` with `‖L·h‖₁ ≤ 1/2`, squared on demand.
struct PowerTable {
    step: f64,
    powers: Vec<DMatrix<f64>>,
    matvecs: usize,
}

impl PowerTable {
    fn new(l: &DMatrix<f64>) -> Self {
        let norm = (0..l.ncols())
            .map(|j| l.column(j).iter().map(|x| x.abs()).sum::<f64>())
            .fold(0.0f64, f64::max);
        let mut step = 1.0f64;
        while norm * step > 0.5 {
            step *= 0.5;
        }
        let p0 = (l * step).exp();
        Self {
            step,
            powers: vec![p0],
            matvecs: 0,
        }
    }

    fn power(&mut self, j: usize) -> &DMatrix<f64> {
        while self.powers.len() <= j {
            let last = self.powers.last().unwrap();
            let sq = last * last;
            self.powers.push(sq);
        }
        &self.powers[j]
    }

    /// `x ← exp(L·dt) x`.
    fn advance(&mut self, l: &DMatrix<f64>, x: &mut DVector<f64>, dt: f64) {
        let whole = (dt / self.step).floor();
        let mut m = whole as u64;
        let rem = dt - whole * self.step;
        let mut j = 0;
        while m > 0 {
            if m & 1 == 1 {
                *x = self.power(j) * &*x;
                self.matvecs += 1;
            }
            m >>= 1;
            j += 1;
        }
        if rem > 0.0 {
            // Taylor series on the vector; ‖L·rem‖ ≤ 1/2.
            let mut term = x.clone();
            let mut acc = x.clone();
            for k in 1..40 {
                term = l * &term * (rem / k as f64);
                self.matvecs += 1;
                acc += &term;
                if term.amax() < 1e-18 * acc.amax().max(1e-300) {
                    break;
                }
            }
            *x = acc;
        }
    }
}

/// Exact propagation on the real superoperator: `ρ(t) = exp(L(t − t₀)) ρ₀`.
/// Cost is dominated by `O(log₂(t_max/h))` squarings of a `D × D` matrix, so
/// this is meant for small Hilbert spaces and long horizons.
pub fn evolve_propagator(
    gen: &Generator,
    rho0: &DensityMatrix,
    t_grid: &[f64],
) -> Result<Trajectory> {
    check_grid(rho0, gen, t_grid)?;
    let sup = superoperator_for(gen, &[rho0])?;
    debug!("propagator on {} real coordinates", sup.size());
    let l = sup.dense();
    let mut table = PowerTable::new(&l);
    let mut x = sup.to_coords(rho0.matrix());
    let layout = rho0.layout();
    let mut stats = IntegratorStats {
        min_eigenvalue: f64::INFINITY,
        ..Default::default()
    };
    let mut states = Vec::with_capacity(t_grid.len());
    let mut t = t_grid[0];
    for &target in t_grid {
        if target > t {
            table.advance(&l, &mut x, target - t);
            t = target;
            stats.accepted_steps += 1;
        }
        let tr = sup.trace_of(&x);
        let drift = (tr - 1.0).abs();
        stats.max_trace_drift = stats.max_trace_drift.max(drift);
        if drift > 1e-12 {
            x /= tr;
            stats.renormalizations += 1;
        }
        states.push(store(&sup.from_coords(&x), layout, t, 1e-7, &mut stats)?);
    }
    stats.rhs_evaluations = table.matvecs;
    Ok(Trajectory {
        times: t_grid.to_vec(),
        states,
        stats,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SteadyStateMethod {
    LongTimeIntegration,
    Nullspace,
}

impl SteadyStateMethod {
    pub fn name(&self) -> &'static str {
        match self {
            SteadyStateMethod::LongTimeIntegration => "long-time-integration",
            SteadyStateMethod::Nullspace => "nullspace",
        }
    }
}

/// Which steady-state engine to use.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MethodChoice {
    /// Null-space projection when the (sector) superoperator has at most
    /// `max_coords` real coordinates, long-time integration otherwise.
    Auto {
        max_coords: usize,
    },
    Force(SteadyStateMethod),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SteadyStateOptions {
    /// Required `‖L ρ‖_max`.
    pub residual_tol: f64,
    /// Integration budget (model time).
    pub t_max: f64,
    pub integrator_tol: f64,
    pub method: MethodChoice,
}

impl Default for SteadyStateOptions {
    fn default() -> Self {
        Self {
            residual_tol: 1e-9,
            t_max: 1e6,
            integrator_tol: 1e-10,
            method: MethodChoice::Auto {
                max_coords: 100_000,
            },
        }
    }
}

#[derive(Clone, Debug)]
pub struct SteadyStateResult {
    pub rho_ss: DensityMatrix,
    /// Entrywise max of `L ρ_ss`.
    pub residual: f64,
    /// Model time integrated; infinite for the null-space projection.
    pub elapsed_model_time: f64,
    pub method: SteadyStateMethod,
}

/// Long-time limit of `exp(L t) ρ₀`.
pub fn steady_state(
    gen: &Generator,
    rho0: &DensityMatrix,
    opts: &SteadyStateOptions,
) -> Result<SteadyStateResult> {
    steady_states(gen, std::slice::from_ref(rho0), opts)?
        .pop()
        .expect("one result per initial state")
}

/// Steady states for several initial states of the same generator. The
/// outer error covers setup failures; each inner result is per state.
pub fn steady_states(
    gen: &Generator,
    initial: &[DensityMatrix],
    opts: &SteadyStateOptions,
) -> Result<Vec<Result<SteadyStateResult>>> {
    if !(opts.residual_tol > 0.0) {
        return Err(Error::InvalidParameter(
            "residual_tol must be positive".into(),
        ));
    }
    for rho in initial {
        gen.hamiltonian().require_layout(rho.layout())?;
    }
    let method = match opts.method {
        MethodChoice::Force(m) => m,
        MethodChoice::Auto { max_coords } => {
            let d = gen.dim();
            let refs: Vec<&DensityMatrix> = initial.iter().collect();
            let sector_size = Superoperator::charge_sector_size(gen, &refs);
            if sector_size.unwrap_or(d * d) <= max_coords {
                SteadyStateMethod::Nullspace
            } else {
                SteadyStateMethod::LongTimeIntegration
            }
        }
    };
    debug!("steady state via {} (dim {})", method.name(), gen.dim());
    match method {
        SteadyStateMethod::LongTimeIntegration => Ok(initial
            .iter()
            .map(|rho| steady_by_integration(gen, rho, opts))
            .collect()),
        SteadyStateMethod::Nullspace => steady_by_resolvent(gen, initial, opts),
    }
}

impl Superoperator {
    /// Size of the charge-sector restriction without building it.
    fn charge_sector_size(gen: &Generator, states: &[&DensityMatrix]) -> Option<usize> {
        let q = gen.excitation_charges()?;
        let d = gen.dim();
        let inside = states.iter().all(|r| {
            let m = r.matrix();
            (0..d).all(|i| (0..d).all(|j| q[i] == q[j] || m[(i, j)].norm() == 0.0))
        });
        if !inside {
            return None;
        }
        let mut count = 0;
        for i in 0..d {
            for j in 0..d {
                if q[i] == q[j] {
                    count += 1;
                }
            }
        }
        Some(count)
    }
}

fn steady_by_integration(
    gen: &Generator,
    rho0: &DensityMatrix,
    opts: &SteadyStateOptions,
) -> Result<SteadyStateResult> {
    // The residual floor scales with the local error, so keep it well below.
    let tol = opts.integrator_tol.min(1e-3 * opts.residual_tol);
    let mut stepper = Dopri5::new(gen, rho0.matrix().clone(), 0.0, tol);
    let mut chunk = 1.0f64;
    loop {
        if stepper.residual() < opts.residual_tol {
            break;
        }
        if stepper.t >= opts.t_max {
            return Err(Error::NotConverged {
                residual: stepper.residual(),
                tolerance: opts.residual_tol,
                elapsed: stepper.t,
            });
        }
        let target = (stepper.t + chunk).min(opts.t_max);
        // Check the residual after every accepted step inside the chunk.
        while stepper.t < target {
            let next = (stepper.t + stepper.h).min(target);
            stepper.advance_to(next)?;
            if stepper.residual() < opts.residual_tol {
                break;
            }
        }
        chunk = (chunk * 2.0).min(1e4);
    }
    finish(
        gen,
        rho0.layout(),
        stepper.y,
        opts,
        stepper.t,
        SteadyStateMethod::LongTimeIntegration,
    )
}

fn finish(
    gen: &Generator,
    layout: crate::operator::HilbertLayout,
    m: CMatrix,
    opts: &SteadyStateOptions,
    elapsed: f64,
    method: SteadyStateMethod,
) -> Result<SteadyStateResult> {
    let mut m = m;
    let herm = (&m + m.adjoint()) * C64::new(0.5, 0.0);
    m = herm;
    let tr = m.trace().re;
    m /= C64::new(tr, 0.0);
    let tol = StateTolerance {
        hermiticity: 1e-10,
        trace: 1e-9,
        positivity: 1e-8,
    };
    let rho = DensityMatrix::with_tolerance(Operator::new(layout, m)?, tol)?;
    let residual = apply_generator(gen, &rho)?.max_abs();
    if residual > opts.residual_tol {
        return Err(Error::NotConverged {
            residual,
            tolerance: opts.residual_tol,
            elapsed,
        });
    }
    Ok(SteadyStateResult {
        rho_ss: rho,
        residual,
        elapsed_model_time: elapsed,
        method,
    })
}

/// Kernel vectors of `L` (or `Lᵀ`) from `count` fixed starting vectors pushed
/// through the resolvent, orthonormalized. `None` when the sample has full
/// rank, so the kernel may be larger than the sample.
fn kernel_basis(
    sup: &Superoperator,
    lu: &faer::sparse::linalg::solvers::Lu<usize, f64>,
    s: f64,
    transpose: bool,
    count: usize,
) -> Option<DMatrix<f64>> {
    let n = sup.size();
    let apply = |v: &DVector<f64>| {
        if transpose {
            sup.apply_transpose(v)
        } else {
            sup.apply(v)
        }
    };
    let mut sample = DMatrix::zeros(n, count);
    for k in 0..count {
        // Deterministic, well spread starting vector.
        let mut v = DVector::from_fn(n, |j, _| {
            ((j * 7919 + k * 104_729 + 1) as f64 * 0.618_033_988_749_895).fract() - 0.5
        });
        let mut best = f64::INFINITY;
        let mut best_v = v.clone();
        let mut prev = f64::INFINITY;
        for _ in 0..200 {
            let m = faer::MatMut::from_column_major_slice_mut(v.as_mut_slice(), n, 1);
            if transpose {
                lu.solve_transpose_in_place(m);
            } else {
                lu.solve_in_place(m);
            }
            v *= s;
            let scale = v.amax();
            if !(scale.is_finite() && scale > 0.0) {
                return None;
            }
            v /= scale;
            let res = apply(&v).amax();
            if res < best {
                best = res;
                best_v.copy_from(&v);
            }
            let stalled = res > 0.9 * prev;
            prev = res;
            if stalled && res > 0.98 * best {
                break;
            }
        }
        sample.set_column(k, &best_v);
    }
    let qr = sample.col_piv_qr();
    let r = qr.r();
    let top = r.diagonal().amax();
    let rank = (0..count)
        .take_while(|&i| r[(i, i)].abs() > 1e-6 * top)
        .count();
    if rank == count {
        return None;
    }
    Some(qr.q().columns(0, rank).into_owned())
}

/// Recomputes the kernel weights of converged states from conserved
/// quantities. Near-singular solves leave errors of order eps·‖L‖/s along a
/// degenerate kernel, which the residual cannot see; the oblique projector
/// `R (Wᵀ R)⁻¹ Wᵀ` built from right and left kernel bases does not.
fn reweight_on_kernel(
    sup: &Superoperator,
    lu: &faer::sparse::linalg::solvers::Lu<usize, f64>,
    s: f64,
    xs: &mut [DVector<f64>],
    initial: &[DensityMatrix],
    target: f64,
) {
    let mut count = 4;
    let right = loop {
        match kernel_basis(sup, lu, s, false, count) {
            Some(r) => break r,
            None if count < 32 => count *= 2,
            None => return,
        }
    };
    let dim = right.ncols();
    if dim <= 1 {
        return;
    }
    // Slow modes near the working shift damp too weakly to leave clean
    // samples. A tiny shift damps them at once, and the drift it adds lies
    // along the kernel, which a basis does not care about.
    let tiny = 1e-10 * sup.norm_1();
    let Ok(lu) = sup.shifted_lu(tiny) else {
        return;
    };
    let (Some(right), Some(left)) = (
        kernel_basis(sup, &lu, tiny, false, dim + 1),
        kernel_basis(sup, &lu, tiny, true, dim + 1),
    ) else {
        return;
    };
    if left.ncols() != dim || right.ncols() != dim {
        debug!(
            "kernel bases disagree: {dim}, {} right, {} left",
            right.ncols(),
            left.ncols()
        );
        return;
    }
    let Some(inv) = (left.transpose() * &right).try_inverse() else {
        return;
    };
    debug!("degenerate kernel of dimension {dim}");
    for (x, rho0) in xs.iter_mut().zip(initial) {
        let x0 = sup.to_coords(rho0.matrix());
        let mut y = &right * (&inv * (left.transpose() * x0));
        y /= sup.trace_of(&y);
        let res = sup.apply(&y).amax();
        if res <= target.max(sup.apply(x).amax()) {
            *x = y;
        }
    }
}

/// Projection onto the kernel of L along its range, computed as the limit of
/// `(s (s − L)⁻¹)ᵏ ρ₀`. Each factor damps a mode with eigenvalue λ by
/// `|s/(s − λ)|` and leaves the kernel untouched, so degenerate kernels
/// (conserved quantities) keep the weights fixed by ρ₀.
fn steady_by_resolvent(
    gen: &Generator,
    initial: &[DensityMatrix],
    opts: &SteadyStateOptions,
) -> Result<Vec<Result<SteadyStateResult>>> {
    let refs: Vec<&DensityMatrix> = initial.iter().collect();
    let sup = superoperator_for(gen, &refs)?;
    let n = sup.size();
    let norm = sup.norm_1().max(1e-300);
    debug!(
        "resolvent projection on {n} real coordinates (sector: {})",
        sup.is_sector()
    );

    let mut xs: Vec<DVector<f64>> = initial.iter().map(|r| sup.to_coords(r.matrix())).collect();
    let mut done = vec![false; xs.len()];
    // Stop on the residual ‖L x‖ rather than on the step: rounding in each
    // solve moves x along the (possibly degenerate) kernel without bound, so
    // iterating past convergence only accumulates error.
    let target = 0.01 * opts.residual_tol;
    let mut last = None;
    for &rel in &[1e-6, 1e-8, 1e-10] {
        let s = rel * norm;
        let lu = sup.shifted_lu(s)?;
        for (x, finished) in xs.iter_mut().zip(done.iter_mut()) {
            if *finished {
                continue;
            }
            let mut best = sup.apply(x).amax();
            let mut prev = best;
            let mut best_x = x.clone();
            for _ in 0..200 {
                let mut next = x.clone();
                lu.solve_in_place(faer::MatMut::from_column_major_slice_mut(
                    next.as_mut_slice(),
                    n,
                    1,
                ));
                if !next.iter().all(|v| v.is_finite()) {
                    return Err(Error::InvalidParameter(
                        "singular shifted Liouvillian".into(),
                    ));
                }
                next *= s;
                let tr = sup.trace_of(&next);
                next /= tr;
                *x = next;
                let res = sup.apply(x).amax();
                if res < best {
                    best = res;
                    best_x.copy_from(x);
                }
                // Slow modes comparable to s still damp geometrically, so
                // only true stagnation moves on to a smaller shift.
                let stalled = res > 0.9 * prev;
                prev = res;
                if stalled && (best <= target || res > 0.98 * best) {
                    break;
                }
            }
            debug!("resolvent shift {s:.3e}: residual {best:.3e}");
            *x = best_x;
            if best <= target {
                *finished = true;
            }
        }
        last = Some((s, lu));
        if done.iter().all(|&d| d) {
            break;
        }
    }
    if let Some((s, lu)) = last {
        reweight_on_kernel(&sup, &lu, s, &mut xs, initial, target);
    }
    Ok(xs
        .into_iter()
        .zip(initial)
        .map(|(x, rho0)| {
            finish(
                gen,
                rho0.layout(),
                sup.from_coords(&x),
                opts,
                f64::INFINITY,
                SteadyStateMethod::Nullspace,
            )
        })
        .collect())
}
