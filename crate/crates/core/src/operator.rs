//! Operators and states on the composite field ⊗ atoms Hilbert space.
//!
//! Every operator carries a [`HilbertLayout`]: an optional truncated Fock
//! factor for the cavity mode followed by `N` two-level atoms. The factor
//! order is fixed (field first, then atoms `0..N`), so the basis index of a
//! product state is `n · 2^N + atoms`, with atom 0 the most significant bit.
//!
//! The local atomic basis is `{|e⟩, |g⟩}` in that order. For two atoms this
//! gives the basis `{|ee⟩, |eg⟩, |ge⟩, |gg⟩}`.

use std::fmt;

use log::warn;
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;
pub type CMatrix = DMatrix<C64>;
pub type CVector = DVector<C64>;

/// Maximum entrywise `|ρ − ρ†|` accepted for a density matrix.
pub const TOL_HERM: f64 = 1e-10;
/// Maximum `|Tr ρ − 1|` accepted for a density matrix.
pub const TOL_TRACE: f64 = 1e-9;
/// Most negative eigenvalue accepted for a density matrix.
pub const TOL_POSITIVITY: f64 = 1e-9;

pub(crate) const ZERO: C64 = C64::new(0.0, 0.0);
pub(crate) const ONE: C64 = C64::new(1.0, 0.0);
pub(crate) const I: C64 = C64::new(0.0, 1.0);

/// One tensor factor of a layout.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Factor {
    Field,
    /// Zero-based atom index.
    Atom(usize),
}

/// Shape of a composite Hilbert space: `fock_dim` (0 means no field factor)
/// followed by `atom_count` qubits.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct HilbertLayout {
    atom_count: usize,
    fock_dim: usize,
}

impl HilbertLayout {
    pub fn new(atom_count: usize, fock_dim: usize) -> Self {
        Self {
            atom_count,
            fock_dim,
        }
    }

    /// Atoms only, no field factor.
    pub fn atoms(atom_count: usize) -> Self {
        Self::new(atom_count, 0)
    }

    /// A bare field mode of dimension `fock_dim`.
    pub fn field(fock_dim: usize) -> Self {
        Self::new(0, fock_dim)
    }

    pub fn atom_count(&self) -> usize {
        self.atom_count
    }

    pub fn fock_dim(&self) -> usize {
        self.fock_dim
    }

    pub fn has_field(&self) -> bool {
        self.fock_dim > 0
    }

    pub fn atom_dim(&self) -> usize {
        1 << self.atom_count
    }

    pub fn dim(&self) -> usize {
        self.fock_dim.max(1) * self.atom_dim()
    }

    /// Factors in storage order.
    pub fn factors(&self) -> Vec<Factor> {
        let mut out = Vec::with_capacity(self.atom_count + 1);
        if self.has_field() {
            out.push(Factor::Field);
        }
        out.extend((0..self.atom_count).map(Factor::Atom));
        out
    }

    pub fn factor_dim(&self, factor: Factor) -> Option<usize> {
        match factor {
            Factor::Field if self.has_field() => Some(self.fock_dim),
            Factor::Atom(j) if j < self.atom_count => Some(2),
            _ => None,
        }
    }

    pub fn contains(&self, factor: Factor) -> bool {
        self.factor_dim(factor).is_some()
    }

    /// Photon number of a basis index (0 when there is no field factor).
    pub fn photon_number(&self, index: usize) -> usize {
        index / self.atom_dim()
    }

    /// Number of excited atoms in a basis index.
    pub fn excitations(&self, index: usize) -> usize {
        let atoms = index % self.atom_dim();
        // |e⟩ is local index 0, so excited atoms are the zero bits.
        self.atom_count - atoms.count_ones() as usize
    }
}

impl fmt::Display for HilbertLayout {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.has_field() {
            write!(f, "field[{}] x {} atoms", self.fock_dim, self.atom_count)
        } else {
            write!(f, "{} atoms", self.atom_count)
        }
    }
}

/// A square complex matrix acting on a [`HilbertLayout`].
#[derive(Clone, Debug, PartialEq)]
pub struct Operator {
    layout: HilbertLayout,
    matrix: CMatrix,
}

impl Operator {
    pub fn new(layout: HilbertLayout, matrix: CMatrix) -> Result<Self> {
        let dim = layout.dim();
        if matrix.nrows() != dim || matrix.ncols() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: matrix.nrows().max(matrix.ncols()),
            });
        }
        Ok(Self { layout, matrix })
    }

    pub(crate) fn from_parts(layout: HilbertLayout, matrix: CMatrix) -> Self {
        debug_assert_eq!(matrix.nrows(), layout.dim());
        Self { layout, matrix }
    }

    pub fn identity(layout: HilbertLayout) -> Self {
        let d = layout.dim();
        Self::from_parts(layout, CMatrix::identity(d, d))
    }

    pub fn zeros(layout: HilbertLayout) -> Self {
        let d = layout.dim();
        Self::from_parts(layout, CMatrix::zeros(d, d))
    }

    /// Diagonal operator from real entries.
    pub fn diagonal(layout: HilbertLayout, entries: &[f64]) -> Result<Self> {
        let d = layout.dim();
        if entries.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: entries.len(),
            });
        }
        let diag = CVector::from_iterator(d, entries.iter().map(|&x| C64::new(x, 0.0)));
        Ok(Self::from_parts(layout, CMatrix::from_diagonal(&diag)))
    }

    /// Projector `|ψ⟩⟨ψ|` (not normalized).
    pub fn projector(layout: HilbertLayout, ket: &CVector) -> Result<Self> {
        if ket.len() != layout.dim() {
            return Err(Error::DimensionMismatch {
                expected: layout.dim(),
                found: ket.len(),
            });
        }
        Ok(Self::from_parts(layout, ket * ket.adjoint()))
    }

    pub fn layout(&self) -> HilbertLayout {
        self.layout
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.matrix
    }

    pub fn into_matrix(self) -> CMatrix {
        self.matrix
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn dagger(&self) -> Self {
        Self::from_parts(self.layout, self.matrix.adjoint())
    }

    pub fn trace(&self) -> C64 {
        self.matrix.trace()
    }

    /// `Tr(self · other)` without forming the product.
    pub fn trace_product(&self, other: &Operator) -> Result<C64> {
        self.require_layout(other.layout)?;
        let d = self.dim();
        let mut acc = ZERO;
        for i in 0..d {
            for k in 0..d {
                acc += self.matrix[(i, k)] * other.matrix[(k, i)];
            }
        }
        Ok(acc)
    }

    /// Largest entrywise `|A − A†|`.
    pub fn hermiticity_violation(&self) -> f64 {
        let d = self.dim();
        let mut worst = 0.0f64;
        for j in 0..d {
            for i in 0..=j {
                let diff = self.matrix[(i, j)] - self.matrix[(j, i)].conj();
                worst = worst.max(diff.norm());
            }
        }
        worst
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        self.hermiticity_violation() <= tol
    }

    /// Largest entrywise magnitude.
    pub fn max_abs(&self) -> f64 {
        self.matrix.iter().fold(0.0f64, |m, z| m.max(z.norm()))
    }

    pub fn scale(&self, factor: C64) -> Self {
        Self::from_parts(self.layout, &self.matrix * factor)
    }

    pub fn scale_real(&self, factor: f64) -> Self {
        self.scale(C64::new(factor, 0.0))
    }

    pub fn try_add(&self, other: &Operator) -> Result<Self> {
        self.require_layout(other.layout)?;
        Ok(Self::from_parts(self.layout, &self.matrix + &other.matrix))
    }

    pub fn try_sub(&self, other: &Operator) -> Result<Self> {
        self.require_layout(other.layout)?;
        Ok(Self::from_parts(self.layout, &self.matrix - &other.matrix))
    }

    pub fn try_mul(&self, other: &Operator) -> Result<Self> {
        self.require_layout(other.layout)?;
        Ok(Self::from_parts(self.layout, &self.matrix * &other.matrix))
    }

    /// `[A, B] = AB − BA`.
    pub fn commutator(&self, other: &Operator) -> Result<Self> {
        self.require_layout(other.layout)?;
        Ok(Self::from_parts(
            self.layout,
            &self.matrix * &other.matrix - &other.matrix * &self.matrix,
        ))
    }

    pub fn apply(&self, ket: &CVector) -> Result<CVector> {
        if ket.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: ket.len(),
            });
        }
        Ok(&self.matrix * ket)
    }

    pub(crate) fn require_layout(&self, other: HilbertLayout) -> Result<()> {
        if self.layout != other {
            return Err(Error::LayoutMismatch {
                expected: self.layout,
                found: other,
            });
        }
        Ok(())
    }
}

macro_rules! impl_binop {
    ($trait:ident, $method:ident, $checked:ident) => {
        impl std::ops::$trait<&Operator> for &Operator {
            type Output = Operator;
            /// Panics on layout mismatch; use the `try_*` form for fallible code.
            fn $method(self, rhs: &Operator) -> Operator {
                self.$checked(rhs).expect("operator layouts must match")
            }
        }
    };
}

impl_binop!(Add, add, try_add);
impl_binop!(Sub, sub, try_sub);
impl_binop!(Mul, mul, try_mul);

fn atom_op(entries: [[C64; 2]; 2]) -> Operator {
    let m = CMatrix::from_fn(2, 2, |i, j| entries[i][j]);
    Operator::from_parts(HilbertLayout::atoms(1), m)
}

/// `σ_z = |e⟩⟨e| − |g⟩⟨g|`.
pub fn sigma_z() -> Operator {
    atom_op([[ONE, ZERO], [ZERO, -ONE]])
}

pub fn sigma_x() -> Operator {
    atom_op([[ZERO, ONE], [ONE, ZERO]])
}

pub fn sigma_y() -> Operator {
    atom_op([[ZERO, -I], [I, ZERO]])
}

/// `σ_+ = |e⟩⟨g|`.
pub fn sigma_plus() -> Operator {
    atom_op([[ZERO, ONE], [ZERO, ZERO]])
}

/// `σ_- = |g⟩⟨e|`.
pub fn sigma_minus() -> Operator {
    atom_op([[ZERO, ZERO], [ONE, ZERO]])
}

pub fn atom_identity() -> Operator {
    Operator::identity(HilbertLayout::atoms(1))
}

/// Kronecker product `a ⊗ b`. The field factor, if any, must come from `a`.
pub fn tensor(a: &Operator, b: &Operator) -> Result<Operator> {
    let (la, lb) = (a.layout, b.layout);
    let a_trivial = la.dim() == 1;
    if lb.has_field() && !a_trivial {
        return Err(Error::IncompatibleLayouts(format!(
            "field factor of right operand ({lb}) cannot follow {la}"
        )));
    }
    let layout = HilbertLayout::new(
        la.atom_count + lb.atom_count,
        if la.has_field() {
            la.fock_dim
        } else {
            lb.fock_dim
        },
    );
    Ok(Operator::from_parts(layout, a.matrix.kronecker(&b.matrix)))
}

/// Tensor `local` on `site` with identities on every other factor of `layout`.
pub fn embed(local: &Operator, site: Factor, layout: HilbertLayout) -> Result<Operator> {
    let expected = match site {
        Factor::Field => {
            if !layout.has_field() {
                return Err(Error::InvalidFactor {
                    factor: site,
                    layout,
                });
            }
            HilbertLayout::field(layout.fock_dim)
        }
        Factor::Atom(j) => {
            if j >= layout.atom_count {
                return Err(Error::InvalidFactor {
                    factor: site,
                    layout,
                });
            }
            HilbertLayout::atoms(1)
        }
    };
    if local.layout != expected {
        return Err(Error::LayoutMismatch {
            expected,
            found: local.layout,
        });
    }
    let (left, right) = match site {
        Factor::Field => (1, layout.atom_dim()),
        Factor::Atom(j) => (
            layout.fock_dim.max(1) << j,
            1 << (layout.atom_count - j - 1),
        ),
    };
    let m = CMatrix::identity(left, left)
        .kronecker(&local.matrix)
        .kronecker(&CMatrix::identity(right, right));
    Ok(Operator::from_parts(layout, m))
}

/// Truncated annihilation operator on `{|0⟩, …, |n_max⟩}`.
pub fn annihilation(n_max: usize) -> Result<Operator> {
    if n_max < 1 {
        return Err(Error::InvalidParameter(format!(
            "Fock truncation n_max must be >= 1, got {n_max}"
        )));
    }
    let d = n_max + 1;
    let mut m = CMatrix::zeros(d, d);
    for n in 1..d {
        m[(n - 1, n)] = C64::new((n as f64).sqrt(), 0.0);
    }
    Ok(Operator::from_parts(HilbertLayout::field(d), m))
}

pub fn number_operator(n_max: usize) -> Result<Operator> {
    let a = annihilation(n_max)?;
    Ok(&a.dagger() * &a)
}

/// `D(α) = exp(α a† − α* a)` on the truncated space.
pub fn displacement(alpha: C64, n_max: usize) -> Result<Operator> {
    let a = annihilation(n_max)?;
    if alpha.norm_sqr() > 0.25 * n_max as f64 {
        warn!(
            "displacement |alpha|^2 = {:.3} is not small against n_max = {n_max}; truncation error expected",
            alpha.norm_sqr()
        );
    }
    let generator = a.matrix.adjoint() * alpha - &a.matrix * alpha.conj();
    Ok(Operator::from_parts(a.layout, generator.exp()))
}

/// Fock state `|n⟩` as a ket on `n_max + 1` levels.
pub fn fock_ket(n: usize, n_max: usize) -> Result<CVector> {
    if n > n_max {
        return Err(Error::InvalidParameter(format!(
            "Fock level {n} exceeds truncation {n_max}"
        )));
    }
    let mut v = CVector::zeros(n_max + 1);
    v[n] = ONE;
    Ok(v)
}

/// Coherent-state amplitudes `e^{−|α|²/2} αⁿ/√n!`, truncated and renormalized.
pub fn coherent_ket(alpha: C64, n_max: usize) -> CVector {
    let mut v = CVector::zeros(n_max + 1);
    let mut amp = C64::new((-0.5 * alpha.norm_sqr()).exp(), 0.0);
    for n in 0..=n_max {
        if n > 0 {
            amp *= alpha / (n as f64).sqrt();
        }
        v[n] = amp;
    }
    let norm = v.norm();
    v / C64::new(norm, 0.0)
}

/// Thermal photon-number populations `n_thⁿ/(1+n_th)^{n+1}`, renormalized on
/// the truncated space.
pub fn thermal_populations(n_th: f64, n_max: usize) -> Vec<f64> {
    let ratio = n_th / (1.0 + n_th);
    let mut p: Vec<f64> = (0..=n_max).map(|n| ratio.powi(n as i32)).collect();
    let total: f64 = p.iter().sum();
    p.iter_mut().for_each(|x| *x /= total);
    p
}

/// Sorted eigen-decomposition of a Hermitian operator.
pub fn hermitian_eigen(op: &Operator) -> Result<(Vec<f64>, CMatrix)> {
    let violation = op.hermiticity_violation();
    if violation > TOL_HERM * op.max_abs().max(1.0) {
        return Err(Error::NotHermitian(violation));
    }
    let eig = SymmetricEigen::new(op.matrix.clone());
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = CMatrix::from_fn(op.dim(), op.dim(), |r, c| eig.eigenvectors[(r, order[c])]);
    Ok((values, vectors))
}

/// Real spectrum of a Hermitian operator in ascending order.
pub fn hermitian_spectrum(op: &Operator) -> Result<Vec<f64>> {
    hermitian_eigen(op).map(|(values, _)| values)
}

/// Tolerances used when validating a [`DensityMatrix`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StateTolerance {
    pub hermiticity: f64,
    pub trace: f64,
    pub positivity: f64,
}

impl Default for StateTolerance {
    fn default() -> Self {
        Self {
            hermiticity: TOL_HERM,
            trace: TOL_TRACE,
            positivity: TOL_POSITIVITY,
        }
    }
}

/// Hermitian, unit-trace, positive semidefinite operator.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityMatrix {
    op: Operator,
}

impl DensityMatrix {
    pub fn new(op: Operator) -> Result<Self> {
        Self::with_tolerance(op, StateTolerance::default())
    }

    pub fn with_tolerance(op: Operator, tol: StateTolerance) -> Result<Self> {
        let herm = op.hermiticity_violation();
        if herm > tol.hermiticity {
            return Err(Error::InvalidState(format!(
                "hermiticity violation {herm:.3e} > {:.1e}",
                tol.hermiticity
            )));
        }
        let tr = op.trace();
        if (tr - ONE).norm() > tol.trace {
            return Err(Error::InvalidState(format!(
                "trace {tr} differs from 1 by more than {:.1e}",
                tol.trace
            )));
        }
        let min_eig = min_eigenvalue(&op.matrix);
        if min_eig < -tol.positivity {
            return Err(Error::InvalidState(format!(
                "eigenvalue {min_eig:.3e} below -{:.1e}",
                tol.positivity
            )));
        }
        Ok(Self { op })
    }

    pub(crate) fn from_trusted(op: Operator) -> Self {
        Self { op }
    }

    /// Pure state from a ket, normalized.
    pub fn pure(layout: HilbertLayout, ket: &CVector) -> Result<Self> {
        let norm = ket.norm();
        if norm == 0.0 {
            return Err(Error::InvalidState("zero ket".into()));
        }
        let psi = ket / C64::new(norm, 0.0);
        Self::new(Operator::projector(layout, &psi)?)
    }

    /// `I/d`.
    pub fn maximally_mixed(layout: HilbertLayout) -> Self {
        let d = layout.dim();
        Self::from_trusted(Operator::identity(layout).scale_real(1.0 / d as f64))
    }

    /// `a ⊗ b`.
    pub fn product(a: &DensityMatrix, b: &DensityMatrix) -> Result<Self> {
        Ok(Self::from_trusted(tensor(&a.op, &b.op)?))
    }

    pub fn op(&self) -> &Operator {
        &self.op
    }

    pub fn into_op(self) -> Operator {
        self.op
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.op.matrix
    }

    pub fn layout(&self) -> HilbertLayout {
        self.op.layout
    }

    pub fn dim(&self) -> usize {
        self.op.dim()
    }

    /// `Tr(ρ A)`.
    pub fn expectation(&self, observable: &Operator) -> Result<C64> {
        self.op.trace_product(observable)
    }

    pub fn min_eigenvalue(&self) -> f64 {
        min_eigenvalue(&self.op.matrix)
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        let mut v: Vec<f64> = SymmetricEigen::new(self.op.matrix.clone())
            .eigenvalues
            .iter()
            .copied()
            .collect();
        v.sort_by(f64::total_cmp);
        v
    }
}

fn min_eigenvalue(m: &CMatrix) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    let herm = (m + m.adjoint()) * C64::new(0.5, 0.0);
    SymmetricEigen::new(herm)
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// Trace distance `½ Σ |λ_i(ρ − σ)|`.
pub fn trace_distance(rho: &DensityMatrix, sigma: &DensityMatrix) -> Result<f64> {
    rho.op.require_layout(sigma.layout())?;
    let diff = rho.matrix() - sigma.matrix();
    let herm = (&diff + diff.adjoint()) * C64::new(0.5, 0.0);
    Ok(0.5
        * SymmetricEigen::new(herm)
            .eigenvalues
            .iter()
            .map(|x| x.abs())
            .sum::<f64>())
}

/// Reduced state on the factors in `keep`.
pub fn partial_trace(rho: &DensityMatrix, keep: &[Factor]) -> Result<DensityMatrix> {
    let layout = rho.layout();
    if keep.is_empty() {
        return Err(Error::InvalidFactorSet("nothing to keep".into()));
    }
    let mut kept: Vec<Factor> = keep.to_vec();
    kept.sort();
    kept.dedup();
    if kept.len() != keep.len() {
        return Err(Error::InvalidFactorSet("duplicate factors".into()));
    }
    for &f in &kept {
        if !layout.contains(f) {
            return Err(Error::InvalidFactor { factor: f, layout });
        }
    }

    let factors = layout.factors();
    let dims: Vec<usize> = factors
        .iter()
        .map(|&f| layout.factor_dim(f).unwrap())
        .collect();
    // Row-major strides: the last factor varies fastest.
    let mut strides = vec![1usize; dims.len()];
    for k in (0..dims.len().saturating_sub(1)).rev() {
        strides[k] = strides[k + 1] * dims[k + 1];
    }
    let is_kept: Vec<bool> = factors.iter().map(|f| kept.contains(f)).collect();

    // Full index offsets contributed by the kept and traced sub-indices.
    let offsets = |want_kept: bool| -> Vec<usize> {
        let mut out = vec![0usize];
        for k in 0..dims.len() {
            if is_kept[k] != want_kept {
                continue;
            }
            let mut next = Vec::with_capacity(out.len() * dims[k]);
            for &base in &out {
                for d in 0..dims[k] {
                    next.push(base + d * strides[k]);
                }
            }
            out = next;
        }
        out
    };
    let kept_off = offsets(true);
    let traced_off = offsets(false);

    let m = rho.matrix();
    let kd = kept_off.len();
    let reduced = CMatrix::from_fn(kd, kd, |r, c| {
        traced_off
            .iter()
            .map(|&t| m[(kept_off[r] + t, kept_off[c] + t)])
            .sum()
    });

    let has_field = kept.contains(&Factor::Field);
    let atoms = kept.iter().filter(|f| matches!(f, Factor::Atom(_))).count();
    let new_layout = HilbertLayout::new(atoms, if has_field { layout.fock_dim } else { 0 });
    Ok(DensityMatrix::from_trusted(Operator::from_parts(
        new_layout, reduced,
    )))
}

/// Trace out the field, keeping every atom.
pub fn atomic_reduction(rho: &DensityMatrix) -> Result<DensityMatrix> {
    let layout = rho.layout();
    if !layout.has_field() {
        return Ok(rho.clone());
    }
    let atoms: Vec<Factor> = (0..layout.atom_count).map(Factor::Atom).collect();
    partial_trace(rho, &atoms)
}

/// Trace out every atom, keeping the field.
pub fn field_reduction(rho: &DensityMatrix) -> Result<DensityMatrix> {
    partial_trace(rho, &[Factor::Field])
}
