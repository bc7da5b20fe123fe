//! State functionals: purity, entropy, quantum discord, concurrence,
//! entanglement of formation and photon statistics.
//!
//! Two-qubit matrices use the product basis `{|ee⟩, |eg⟩, |ge⟩, |gg⟩}`,
//! with elements labelled 1–4 in that order. All entropies are in bits.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::operator::{
    hermitian_eigen, hermitian_spectrum, CMatrix, DensityMatrix, HilbertLayout, C64,
};

/// Eigenvalues in `[−CLIP, 0)` are treated as zero; below that entropy fails.
const CLIP: f64 = 1e-9;
/// Eigenvalues under this are dropped from entropy sums.
const DROP: f64 = 1e-12;

/// `Tr ρ²`.
pub fn purity(rho: &DensityMatrix) -> f64 {
    rho.matrix().iter().map(|z| z.norm_sqr()).sum()
}

fn entropy_of(spectrum: &[f64]) -> Result<f64> {
    let mut s = 0.0;
    for &l in spectrum {
        if l < -CLIP {
            return Err(Error::InvalidState(format!(
                "negative eigenvalue {l:.3e} in entropy"
            )));
        }
        if l > DROP {
            s -= l * l.log2();
        }
    }
    Ok(s.max(0.0))
}

/// `−p log₂ p − (1−p) log₂(1−p)`.
pub fn binary_entropy(p: f64) -> f64 {
    let term = |x: f64| if x > 0.0 { -x * x.log2() } else { 0.0 };
    term(p) + term(1.0 - p)
}

/// `−Σ λ log₂ λ` over the spectrum of ρ.
pub fn von_neumann_entropy(rho: &DensityMatrix) -> Result<f64> {
    entropy_of(&hermitian_spectrum(rho.op())?)
}

/// Elements of a two-qubit X state.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct XStateElements {
    pub p11: f64,
    pub p22: f64,
    pub p33: f64,
    pub p44: f64,
    pub c14: C64,
    pub c23: C64,
}

impl XStateElements {
    /// Checks positivity and normalisation within `tol`.
    pub fn validate(&self, tol: f64) -> Result<()> {
        let p = [self.p11, self.p22, self.p33, self.p44];
        if p.iter().any(|&x| !(x >= -tol)) {
            return Err(Error::InvalidState(format!("negative population in {p:?}")));
        }
        let sum: f64 = p.iter().sum();
        if (sum - 1.0).abs() > tol {
            return Err(Error::InvalidState(format!("populations sum to {sum}")));
        }
        let bound = |a: f64, b: f64| (a.max(0.0) * b.max(0.0)).sqrt() + tol;
        if self.c14.norm() > bound(self.p11, self.p44)
            || self.c23.norm() > bound(self.p22, self.p33)
        {
            return Err(Error::InvalidState(
                "coherence exceeds positivity bound".into(),
            ));
        }
        Ok(())
    }

    pub fn to_matrix(&self) -> CMatrix {
        let mut m = CMatrix::zeros(4, 4);
        m[(0, 0)] = C64::new(self.p11, 0.0);
        m[(1, 1)] = C64::new(self.p22, 0.0);
        m[(2, 2)] = C64::new(self.p33, 0.0);
        m[(3, 3)] = C64::new(self.p44, 0.0);
        m[(0, 3)] = self.c14;
        m[(3, 0)] = self.c14.conj();
        m[(1, 2)] = self.c23;
        m[(2, 1)] = self.c23.conj();
        m
    }

    /// Eigenvalues of the two 2×2 blocks.
    fn spectrum(&self) -> [f64; 4] {
        let block = |a: f64, d: f64, c: C64| {
            let mean = 0.5 * (a + d);
            let r = (0.25 * (a - d).powi(2) + c.norm_sqr()).sqrt();
            (mean + r, mean - r)
        };
        let (l1, l2) = block(self.p11, self.p44, self.c14);
        let (l3, l4) = block(self.p22, self.p33, self.c23);
        [l1, l2, l3, l4]
    }
}

fn require_two_qubits(rho: &DensityMatrix) -> Result<()> {
    rho.op().require_layout(HilbertLayout::atoms(2))
}

/// Splits a two-qubit state into its X elements and the largest magnitude
/// among the elements an X state must have zero (ρ₁₂, ρ₁₃, ρ₂₄, ρ₃₄).
pub fn x_structure(rho_ab: &DensityMatrix, tol: f64) -> Result<(XStateElements, f64)> {
    require_two_qubits(rho_ab)?;
    let m = rho_ab.matrix();
    let x = XStateElements {
        p11: m[(0, 0)].re,
        p22: m[(1, 1)].re,
        p33: m[(2, 2)].re,
        p44: m[(3, 3)].re,
        c14: m[(0, 3)],
        c23: m[(1, 2)],
    };
    x.validate(tol)?;
    let violation = [(0, 1), (0, 2), (1, 3), (2, 3)]
        .iter()
        .flat_map(|&(i, j)| [m[(i, j)].norm(), m[(j, i)].norm()])
        .fold(0.0f64, f64::max);
    Ok((x, violation))
}

/// Closed-form discord of an X state with `ρ₂₂ = ρ₃₃`.
pub fn quantum_discord_x(x: &XStateElements) -> Result<f64> {
    x.validate(CLIP)?;
    if (x.p22 - x.p33).abs() > 1e-6 {
        return Err(Error::FormulaInapplicable(format!(
            "ρ22 = {:.6e} differs from ρ33 = {:.6e}",
            x.p22, x.p33
        )));
    }
    let s_ab = entropy_of(&x.spectrum())?;
    let s_a = binary_entropy((x.p11 + x.p22).clamp(0.0, 1.0));

    let term = |p: f64, q: f64| {
        let (p, q) = (p.max(0.0), q.max(0.0));
        if p <= 0.0 || p + q <= 0.0 {
            0.0
        } else {
            p * (p / (p + q)).log2()
        }
    };
    let d1 = term(x.p11, x.p22) + term(x.p33, x.p44) + term(x.p22, x.p11) + term(x.p44, x.p33);
    let beta = ((x.p11 - x.p44).powi(2) + 4.0 * (x.c23.norm() + x.c14.norm()).powi(2))
        .sqrt()
        .min(1.0);
    let d2 = -binary_entropy(0.5 * (1.0 + beta));

    let qd = s_a - s_ab - d1.max(d2);
    if qd < -CLIP {
        return Err(Error::InvalidState(format!("negative discord {qd:.3e}")));
    }
    Ok(qd.max(0.0))
}

/// Which qubit the discord measurement acts on.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MeasuredQubit {
    A,
    B,
}

fn entropy_2x2(a: f64, d: f64, b: C64) -> f64 {
    let mean = 0.5 * (a + d);
    let r = (0.25 * (a - d).powi(2) + b.norm_sqr()).sqrt();
    let norm = a + d;
    if norm <= 0.0 {
        return 0.0;
    }
    binary_entropy(((mean + r) / norm).clamp(0.0, 1.0))
}

/// Average entropy of the unmeasured qubit after a projective measurement
/// along `(θ, φ)` on the measured one.
fn conditional_entropy(m: &CMatrix, side: MeasuredQubit, theta: f64, phi: f64) -> f64 {
    // Measurement vectors |+n⟩, |−n⟩ in the local {e, g} basis.
    let (c, s) = ((0.5 * theta).cos(), (0.5 * theta).sin());
    let ph = C64::from_polar(1.0, phi);
    let kets = [
        [C64::new(c, 0.0), ph * s],
        [-ph.conj() * s, C64::new(c, 0.0)],
    ];
    let idx = |a: usize, b: usize| 2 * a + b;
    let mut total = 0.0;
    for k in &kets {
        // Unnormalised conditional state σ_uv = ⟨k|ρ|k⟩ on the other qubit.
        let mut sigma = [[C64::new(0.0, 0.0); 2]; 2];
        for u in 0..2 {
            for v in 0..2 {
                let mut acc = C64::new(0.0, 0.0);
                for x in 0..2 {
                    for y in 0..2 {
                        let (r, col) = match side {
                            MeasuredQubit::B => (idx(u, x), idx(v, y)),
                            MeasuredQubit::A => (idx(x, u), idx(y, v)),
                        };
                        acc += k[x].conj() * m[(r, col)] * k[y];
                    }
                }
                sigma[u][v] = acc;
            }
        }
        let p = sigma[0][0].re + sigma[1][1].re;
        if p > DROP {
            total += p * entropy_2x2(sigma[0][0].re, sigma[1][1].re, sigma[0][1]);
        }
    }
    total
}

/// Discord by direct minimisation over projective measurements on qubit B:
/// `S(ρ_B) − S(ρ_AB) + min Σ_k p_k S(ρ_A|k)`. The measurement direction is
/// searched on a `grid_density × grid_density` grid in `(θ, φ)` followed by
/// three rounds of local refinement.
pub fn quantum_discord_bruteforce(rho_ab: &DensityMatrix, grid_density: usize) -> Result<f64> {
    quantum_discord_bruteforce_on(rho_ab, grid_density, MeasuredQubit::B)
}

pub fn quantum_discord_bruteforce_on(
    rho_ab: &DensityMatrix,
    grid_density: usize,
    side: MeasuredQubit,
) -> Result<f64> {
    require_two_qubits(rho_ab)?;
    if grid_density < 2 {
        return Err(Error::InvalidParameter(
            "grid density must be at least 2".into(),
        ));
    }
    let m = rho_ab.matrix();
    let s_ab = von_neumann_entropy(rho_ab)?;
    let s_measured = {
        let (a, d, b) = match side {
            MeasuredQubit::B => (
                m[(0, 0)] + m[(2, 2)],
                m[(1, 1)] + m[(3, 3)],
                m[(0, 1)] + m[(2, 3)],
            ),
            MeasuredQubit::A => (
                m[(0, 0)] + m[(1, 1)],
                m[(2, 2)] + m[(3, 3)],
                m[(0, 2)] + m[(1, 3)],
            ),
        };
        entropy_2x2(a.re, d.re, b)
    };

    let f = |theta: f64, phi: f64| conditional_entropy(m, side, theta, phi);
    let n = grid_density;
    let (dt, dp) = (PI / n as f64, 2.0 * PI / n as f64);
    let mut grid: Vec<(f64, f64, f64)> = Vec::with_capacity((n + 1) * n);
    for i in 0..=n {
        for j in 0..n {
            let (t, p) = (i as f64 * dt, j as f64 * dp);
            grid.push((f(t, p), t, p));
        }
    }
    grid.sort_by(|a, b| a.0.total_cmp(&b.0));
    // Refine the few best cells; separate basins can be nearly degenerate.
    let mut best = f64::INFINITY;
    for &(v0, t0, p0) in grid.iter().take(4) {
        let (mut v, mut t, mut p) = (v0, t0, p0);
        let (mut ht, mut hp) = (dt, dp);
        for _ in 0..3 {
            let (ct, cp) = (t, p);
            for a in 0..8 {
                for b in 0..8 {
                    let tt = (ct - ht + 2.0 * ht * a as f64 / 7.0).clamp(0.0, PI);
                    let pp = cp - hp + 2.0 * hp * b as f64 / 7.0;
                    let val = f(tt, pp);
                    if val < v {
                        (v, t, p) = (val, tt, pp);
                    }
                }
            }
            ht *= 2.0 / 7.0;
            hp *= 2.0 / 7.0;
        }
        best = best.min(v);
    }
    Ok((s_measured - s_ab + best).max(0.0))
}

/// `2·max{0, |ρ₁₄| − √(ρ₂₂ρ₃₃), |ρ₂₃| − √(ρ₁₁ρ₄₄)}`.
pub fn concurrence(x: &XStateElements) -> f64 {
    let a = x.c14.norm() - (x.p22.max(0.0) * x.p33.max(0.0)).sqrt();
    let b = x.c23.norm() - (x.p11.max(0.0) * x.p44.max(0.0)).sqrt();
    (2.0 * a.max(b).max(0.0)).min(1.0)
}

/// Wootters concurrence of an arbitrary two-qubit state.
pub fn concurrence_wootters(rho_ab: &DensityMatrix) -> Result<f64> {
    require_two_qubits(rho_ab)?;
    let m = rho_ab.matrix();
    let (vals, vecs) = hermitian_eigen(rho_ab.op())?;
    let sqrt_diag = CMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
        4,
        vals.iter().map(|&l| C64::new(l.max(0.0).sqrt(), 0.0)),
    ));
    let sqrt_rho = &vecs * sqrt_diag * vecs.adjoint();
    // σ_y ⊗ σ_y is real and anti-diagonal in this basis.
    let yy = CMatrix::from_fn(4, 4, |i, j| {
        if i + j == 3 {
            C64::new(if i == 0 || i == 3 { -1.0 } else { 1.0 }, 0.0)
        } else {
            C64::new(0.0, 0.0)
        }
    });
    let tilde = &yy * m.conjugate() * &yy;
    let r = &sqrt_rho * tilde * &sqrt_rho;
    let r = (&r + r.adjoint()) * C64::new(0.5, 0.0);
    let mut lambdas: Vec<f64> = r
        .symmetric_eigenvalues()
        .iter()
        .map(|&l| l.max(0.0).sqrt())
        .collect();
    lambdas.sort_by(|a, b| b.total_cmp(a));
    Ok((lambdas[0] - lambdas[1] - lambdas[2] - lambdas[3]).clamp(0.0, 1.0))
}

/// Entanglement of formation for concurrence `c`.
pub fn eof_from_concurrence(c: f64) -> f64 {
    let c = c.clamp(0.0, 1.0);
    if c == 0.0 {
        return 0.0;
    }
    binary_entropy(0.5 * (1.0 + (1.0 - c * c).sqrt()))
}

pub fn eof(x: &XStateElements) -> f64 {
    eof_from_concurrence(concurrence(x))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FieldStats {
    pub n_bar: f64,
    /// `⟨a†a†aa⟩ / n̄²`.
    pub g2: f64,
    /// `(⟨n²⟩ − ⟨n⟩² − ⟨n⟩) / ⟨n⟩`.
    pub mandel_q: f64,
}

/// Photon statistics of a field-only state.
pub fn field_statistics(rho_field: &DensityMatrix) -> Result<FieldStats> {
    let layout = rho_field.layout();
    if layout.atom_count() != 0 || !layout.has_field() {
        return Err(Error::InvalidParameter(format!(
            "field statistics need a field-only state, got {layout}"
        )));
    }
    let m = rho_field.matrix();
    let (mut n1, mut n2, mut fact2) = (0.0, 0.0, 0.0);
    for k in 0..m.nrows() {
        let p = m[(k, k)].re;
        let n = k as f64;
        n1 += n * p;
        n2 += n * n * p;
        fact2 += n * (n - 1.0) * p;
    }
    if n1 < 1e-9 {
        return Err(Error::VacuumField(n1));
    }
    Ok(FieldStats {
        n_bar: n1,
        g2: fact2 / (n1 * n1),
        mandel_q: (n2 - n1 * n1 - n1) / n1,
    })
}

/// Grid density of the brute-force discord search.
pub const ORACLE_GRID: usize = 64;
/// Largest off-X element for which the closed forms are used.
pub const X_FORM_TOL: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DiscordMethod {
    /// Closed-form X-state expression.
    Analytic,
    /// Measurement minimisation; used when the state is not of X form.
    BruteForce,
}

impl DiscordMethod {
    pub fn name(&self) -> &'static str {
        match self {
            DiscordMethod::Analytic => "analytic",
            DiscordMethod::BruteForce => "bruteforce",
        }
    }
}

/// Correlation summary of a two-qubit atomic state.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CorrelationReport {
    pub purity: f64,
    pub s_a: f64,
    pub s_ab: f64,
    pub qd: f64,
    pub eof: f64,
    pub concurrence: f64,
    pub x_structure_violation: f64,
    pub qd_method: DiscordMethod,
}

/// Closed forms when the state has X structure with `ρ₂₂ = ρ₃₃`; otherwise
/// the brute-force discord and the Wootters concurrence.
pub fn correlation_report(rho_ab: &DensityMatrix) -> Result<CorrelationReport> {
    require_two_qubits(rho_ab)?;
    let (x, violation) = x_structure(rho_ab, 1e-8)?;
    let s_ab = von_neumann_entropy(rho_ab)?;
    let m = rho_ab.matrix();
    let s_a = entropy_2x2(
        (m[(0, 0)] + m[(1, 1)]).re,
        (m[(2, 2)] + m[(3, 3)]).re,
        m[(0, 2)] + m[(1, 3)],
    );
    let analytic = if violation <= X_FORM_TOL {
        match quantum_discord_x(&x) {
            Ok(qd) => Some(qd),
            Err(Error::FormulaInapplicable(_)) => None,
            Err(e) => return Err(e),
        }
    } else {
        None
    };
    let (qd, concurrence, qd_method) = match analytic {
        Some(qd) => (qd, concurrence(&x), DiscordMethod::Analytic),
        None => (
            quantum_discord_bruteforce(rho_ab, ORACLE_GRID)?,
            concurrence_wootters(rho_ab)?,
            DiscordMethod::BruteForce,
        ),
    };
    Ok(CorrelationReport {
        purity: purity(rho_ab),
        s_a,
        s_ab,
        qd,
        eof: eof_from_concurrence(concurrence),
        concurrence,
        x_structure_violation: violation,
        qd_method,
    })
}
