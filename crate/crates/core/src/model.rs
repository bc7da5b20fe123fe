//! Hamiltonians and Lindblad generators for N atoms in a driven, leaky cavity.
//!
//! All rates and frequencies are in units of the cavity decay rate κ, which
//! is fixed to 1; times are in units of 1/κ. Dissipators use the convention
//! `L[A]ρ = 2AρA† − A†Aρ − ρA†A`, so a rate κ damps field amplitudes at κ
//! and photon number at 2κ.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::operator::{
    annihilation, coherent_ket, embed, fock_ket, sigma_plus, sigma_z, tensor, thermal_populations,
    CMatrix, CVector, DensityMatrix, Factor, HilbertLayout, Operator, C64, I, ONE, TOL_HERM,
};
use crate::sparse::SparseMatrix;

/// Cavity decay rate; the unit of every other rate.
pub const KAPPA: f64 = 1.0;

/// Which master equation a [`SystemConfig`] describes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Frame {
    /// Laser-rotating frame with coherent cavity drive.
    LabRotating,
    /// Displaced picture: the coherent drive moved into an atomic Rabi term.
    Displaced,
    /// Atoms only, field adiabatically eliminated.
    EffectiveAtomic,
    /// Undriven cavity coupled to a thermal reservoir.
    Thermal,
}

impl Frame {
    pub fn name(&self) -> &'static str {
        match self {
            Frame::LabRotating => "lab-rotating",
            Frame::Displaced => "displaced",
            Frame::EffectiveAtomic => "effective-atomic",
            Frame::Thermal => "thermal",
        }
    }
}

impl fmt::Display for Frame {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Frame {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lab-rotating" | "lab" => Ok(Frame::LabRotating),
            "displaced" => Ok(Frame::Displaced),
            "effective-atomic" | "effective" => Ok(Frame::EffectiveAtomic),
            "thermal" => Ok(Frame::Thermal),
            other => Err(Error::Config(format!("unknown frame '{other}'"))),
        }
    }
}

/// Physical parameters, in units of κ.
#[derive(Clone, Debug, PartialEq)]
pub struct SystemConfig {
    pub n_atoms: usize,
    /// Atom–field coupling g.
    pub g: f64,
    /// Drive strength ε.
    pub epsilon: f64,
    /// Cavity–drive detuning δ = ω − ω_L.
    pub delta: f64,
    /// Atom–drive detuning Δ = ω₀ − ω_L.
    pub delta_atom: f64,
    /// Mean thermal photon number of the reservoir.
    pub n_th: f64,
    /// Highest retained Fock level.
    pub n_max: usize,
    pub frame: Frame,
}

impl Default for SystemConfig {
    fn default() -> Self {
        Self {
            n_atoms: 2,
            g: 0.01,
            epsilon: 1.0,
            delta: 0.0,
            delta_atom: 0.0,
            n_th: 0.0,
            n_max: 4,
            frame: Frame::Displaced,
        }
    }
}

impl SystemConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        if self.n_atoms < 1 {
            return bad("n_atoms must be >= 1".into());
        }
        if self.n_max < 1 {
            return bad("n_max must be >= 1".into());
        }
        for (name, v) in [
            ("g", self.g),
            ("epsilon", self.epsilon),
            ("n_th", self.n_th),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return bad(format!("{name} must be finite and >= 0, got {v}"));
            }
        }
        for (name, v) in [("delta", self.delta), ("delta_atom", self.delta_atom)] {
            if !v.is_finite() {
                return bad(format!("{name} must be finite, got {v}"));
            }
        }
        if self.frame == Frame::Thermal && (self.epsilon != 0.0 || self.delta != 0.0) {
            return bad("thermal frame requires epsilon = 0 and delta = 0".into());
        }
        Ok(())
    }

    /// Layout of the generator this config builds.
    pub fn layout(&self) -> HilbertLayout {
        match self.frame {
            Frame::EffectiveAtomic => HilbertLayout::atoms(self.n_atoms),
            _ => HilbertLayout::new(self.n_atoms, self.n_max + 1),
        }
    }

    pub fn with_frame(&self, frame: Frame) -> Self {
        Self {
            frame,
            ..self.clone()
        }
    }

    pub fn with_n_max(&self, n_max: usize) -> Self {
        Self {
            n_max,
            ..self.clone()
        }
    }

    fn require_frame(&self, expected: Frame) -> Result<()> {
        self.validate()?;
        if self.frame != expected {
            return Err(Error::FrameMismatch {
                expected: expected.name(),
                found: self.frame.name(),
            });
        }
        Ok(())
    }
}

/// Closed-form quantities derived from a [`SystemConfig`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DerivedParams {
    /// Coherent amplitude α = −iε/(κ + iδ).
    pub alpha: C64,
    /// Ω = g√N α.
    pub omega_drive: C64,
    /// Ω_eff = g α √N.
    pub omega_eff: C64,
    /// Γ_eff = g²N/κ.
    pub gamma_eff: f64,
    /// |ε/κ|².
    pub n_bar_max: f64,
    pub window_lo: f64,
    /// (κ/(g√N))², infinite for g = 0.
    pub window_hi: f64,
}

impl DerivedParams {
    /// True when the semiclassical window is empty.
    pub fn window_degenerate(&self) -> bool {
        self.window_hi <= self.window_lo
    }
}

pub fn derived_params(cfg: &SystemConfig) -> DerivedParams {
    let n = cfg.n_atoms as f64;
    let alpha = C64::new(0.0, -cfg.epsilon) / C64::new(KAPPA, cfg.delta);
    let coupling = cfg.g * n.sqrt();
    let gamma_eff = cfg.g * cfg.g * n / KAPPA;
    DerivedParams {
        alpha,
        omega_drive: alpha * coupling,
        omega_eff: alpha * coupling,
        gamma_eff,
        n_bar_max: (cfg.epsilon / KAPPA).powi(2),
        window_lo: 1.0,
        window_hi: if coupling > 0.0 {
            (KAPPA / coupling).powi(2)
        } else {
            f64::INFINITY
        },
    }
}

/// Field and collective atomic operators on one layout.
#[derive(Clone, Debug)]
pub struct CollectiveOps {
    pub layout: HilbertLayout,
    /// Cavity annihilation operator (absent for atoms-only layouts).
    pub a: Option<Operator>,
    /// S₊ = (1/√N) Σ σ₊ʲ.
    pub s_plus: Operator,
    pub s_minus: Operator,
    /// S_z = Σ σ_zʲ.
    pub s_z: Operator,
}

impl CollectiveOps {
    pub fn new(layout: HilbertLayout) -> Result<Self> {
        let n = layout.atom_count();
        if n == 0 {
            return Err(Error::InvalidParameter("layout has no atoms".into()));
        }
        let mut s_plus = Operator::zeros(layout);
        let mut s_z = Operator::zeros(layout);
        let (sp, sz) = (sigma_plus(), sigma_z());
        for j in 0..n {
            s_plus = &s_plus + &embed(&sp, Factor::Atom(j), layout)?;
            s_z = &s_z + &embed(&sz, Factor::Atom(j), layout)?;
        }
        let s_plus = s_plus.scale_real(1.0 / (n as f64).sqrt());
        let a = if layout.has_field() {
            Some(embed(
                &annihilation(layout.fock_dim() - 1)?,
                Factor::Field,
                layout,
            )?)
        } else {
            None
        };
        Ok(Self {
            layout,
            a,
            s_minus: s_plus.dagger(),
            s_plus,
            s_z,
        })
    }

    pub fn field(&self) -> Result<&Operator> {
        self.a
            .as_ref()
            .ok_or_else(|| Error::InvalidParameter("layout has no field factor".into()))
    }

    /// a†a.
    pub fn number(&self) -> Result<Operator> {
        let a = self.field()?;
        Ok(&a.dagger() * a)
    }
}

/// A jump operator with its (nonnegative) rate.
#[derive(Clone, Debug)]
pub struct Dissipator {
    pub jump: Operator,
    pub rate: f64,
}

/// Lindblad generator `ρ̇ = −i[H, ρ] + Σ rate · L[A]ρ`.
#[derive(Clone, Debug)]
pub struct Generator {
    hamiltonian: Operator,
    dissipators: Vec<Dissipator>,
    compiled: Compiled,
}

#[derive(Clone, Debug)]
struct Compiled {
    /// H − i Σ rate A†A.
    h_eff: SparseMatrix,
    /// (A, A†, 2·rate).
    jumps: Vec<(SparseMatrix, SparseMatrix, f64)>,
}

impl Generator {
    pub fn new(hamiltonian: Operator, dissipators: Vec<Dissipator>) -> Result<Self> {
        let violation = hamiltonian.hermiticity_violation();
        if violation > TOL_HERM {
            return Err(Error::NotHermitian(violation));
        }
        let layout = hamiltonian.layout();
        let mut h_eff = hamiltonian.matrix().clone();
        let mut jumps = Vec::with_capacity(dissipators.len());
        for d in &dissipators {
            d.jump.require_layout(layout)?;
            if !(d.rate >= 0.0) || !d.rate.is_finite() {
                return Err(Error::InvalidParameter(format!(
                    "dissipator rate must be finite and >= 0, got {}",
                    d.rate
                )));
            }
            let a = d.jump.matrix();
            h_eff -= a.adjoint() * a * (I * d.rate);
            let sparse = SparseMatrix::from_dense(a);
            let adjoint = sparse.adjoint();
            jumps.push((sparse, adjoint, 2.0 * d.rate));
        }
        Ok(Self {
            hamiltonian,
            dissipators,
            compiled: Compiled {
                h_eff: SparseMatrix::from_dense(&h_eff),
                jumps,
            },
        })
    }

    pub fn hamiltonian(&self) -> &Operator {
        &self.hamiltonian
    }

    pub fn dissipators(&self) -> &[Dissipator] {
        &self.dissipators
    }

    pub fn layout(&self) -> HilbertLayout {
        self.hamiltonian.layout()
    }

    pub fn dim(&self) -> usize {
        self.hamiltonian.dim()
    }

    /// Nonzeros of the non-Hermitian effective Hamiltonian and jumps, used to
    /// estimate right-hand-side cost.
    pub fn nnz(&self) -> usize {
        self.compiled.h_eff.nnz() + self.compiled.jumps.iter().map(|j| j.0.nnz()).sum::<usize>()
    }

    /// `out = L(ρ)` for a raw matrix; `scratch` must have the same shape.
    pub(crate) fn apply_into(&self, rho: &CMatrix, out: &mut CMatrix, scratch: &mut CMatrix) {
        let c = &self.compiled;
        c.h_eff.left_mul_into(rho, -I, scratch);
        let d = rho.nrows();
        for j in 0..d {
            for i in 0..d {
                out[(i, j)] = scratch[(i, j)] + scratch[(j, i)].conj();
            }
        }
        for (a, a_dag, rate2) in &c.jumps {
            a.left_mul_into(rho, ONE, scratch);
            a_dag.right_mul_add(scratch, C64::new(*rate2, 0.0), out);
        }
    }

    pub(crate) fn h_eff_sparse(&self) -> &SparseMatrix {
        &self.compiled.h_eff
    }

    pub(crate) fn jumps_sparse(&self) -> impl Iterator<Item = (&SparseMatrix, f64)> {
        self.compiled.jumps.iter().map(|(a, _, r)| (a, *r))
    }

    /// Integer excitation charges `q_i = n_i + (#excited atoms)_i` if the
    /// generator conserves them: H is block diagonal in q and every jump
    /// shifts q by a fixed amount.
    pub fn excitation_charges(&self) -> Option<Vec<i64>> {
        let layout = self.layout();
        let q: Vec<i64> = (0..layout.dim())
            .map(|i| (layout.photon_number(i) + layout.excitations(i)) as i64)
            .collect();
        let conserves = |m: &CMatrix, shift: Option<i64>| -> Option<i64> {
            let mut shift = shift;
            for j in 0..m.ncols() {
                for i in 0..m.nrows() {
                    if m[(i, j)].norm() == 0.0 {
                        continue;
                    }
                    let s = q[i] - q[j];
                    match shift {
                        None => shift = Some(s),
                        Some(t) if t != s => return None,
                        _ => {}
                    }
                }
            }
            Some(shift.unwrap_or(0))
        };
        conserves(self.hamiltonian.matrix(), Some(0))?;
        for d in &self.dissipators {
            conserves(d.jump.matrix(), None)?;
        }
        Some(q)
    }
}

/// `dρ/dt = −i[H, ρ] + Σ rate (2AρA† − A†Aρ − ρA†A)`.
pub fn apply_generator(generator: &Generator, rho: &DensityMatrix) -> Result<Operator> {
    generator.hamiltonian.require_layout(rho.layout())?;
    let d = generator.dim();
    let mut out = CMatrix::zeros(d, d);
    let mut scratch = CMatrix::zeros(d, d);
    generator.apply_into(rho.matrix(), &mut out, &mut scratch);
    Ok(Operator::from_parts(generator.layout(), out))
}

/// Same as [`apply_generator`] for an arbitrary (not necessarily physical)
/// operator, e.g. a perturbation or a basis element.
pub fn apply_generator_to(generator: &Generator, x: &Operator) -> Result<Operator> {
    generator.hamiltonian.require_layout(x.layout())?;
    let d = generator.dim();
    let mut out = CMatrix::zeros(d, d);
    let mut scratch = CMatrix::zeros(d, d);
    generator.apply_into(x.matrix(), &mut out, &mut scratch);
    Ok(Operator::from_parts(generator.layout(), out))
}

fn hc_sum(op: &Operator) -> Operator {
    op + &op.dagger()
}

/// `V_L = δ a†a + ½Δ S_z + (g√N S₊ a + ε a + h.c.)` with dissipator (a, κ).
pub fn build_rotating_frame(cfg: &SystemConfig) -> Result<Generator> {
    cfg.require_frame(Frame::LabRotating)?;
    if cfg.n_th != 0.0 {
        return Err(Error::InvalidParameter(
            "lab-rotating frame is zero temperature; use the thermal frame for n_th > 0".into(),
        ));
    }
    let ops = CollectiveOps::new(cfg.layout())?;
    let a = ops.field()?;
    let coupling = cfg.g * (cfg.n_atoms as f64).sqrt();
    let mut h = ops.number()?.scale_real(cfg.delta);
    h = &h + &ops.s_z.scale_real(0.5 * cfg.delta_atom);
    let drive = &(&ops.s_plus * a).scale_real(coupling) + &a.scale_real(cfg.epsilon);
    h = &h + &hc_sum(&drive);
    Generator::new(
        h,
        vec![Dissipator {
            jump: a.clone(),
            rate: KAPPA,
        }],
    )
}

/// `H_JC + H_SC` with `H_JC = δa†a + g√N(aS₊ + h.c.)`,
/// `H_SC = ½ΔS_z + (ΩS₊ + h.c.)`; dissipator (a, κ).
pub fn build_displaced(cfg: &SystemConfig) -> Result<Generator> {
    cfg.require_frame(Frame::Displaced)?;
    if cfg.n_th != 0.0 {
        return Err(Error::InvalidParameter(
            "displaced frame is zero temperature; use the thermal frame for n_th > 0".into(),
        ));
    }
    let p = derived_params(cfg);
    let ops = CollectiveOps::new(cfg.layout())?;
    let a = ops.field()?;
    let coupling = cfg.g * (cfg.n_atoms as f64).sqrt();
    let h_jc =
        &ops.number()?.scale_real(cfg.delta) + &hc_sum(&(a * &ops.s_plus).scale_real(coupling));
    let h_sc =
        &ops.s_z.scale_real(0.5 * cfg.delta_atom) + &hc_sum(&ops.s_plus.scale(p.omega_drive));
    Generator::new(
        &h_jc + &h_sc,
        vec![Dissipator {
            jump: a.clone(),
            rate: KAPPA,
        }],
    )
}

/// Atoms only: `H = Ω_eff S₊ + h.c.` with collective dissipator (S₋, Γ_eff).
pub fn build_effective_atomic(cfg: &SystemConfig) -> Result<Generator> {
    cfg.require_frame(Frame::EffectiveAtomic)?;
    let p = derived_params(cfg);
    let ops = CollectiveOps::new(cfg.layout())?;
    let h = hc_sum(&ops.s_plus.scale(p.omega_eff));
    Generator::new(
        h,
        vec![Dissipator {
            jump: ops.s_minus.clone(),
            rate: p.gamma_eff,
        }],
    )
}

/// Undriven cavity with thermal reservoir: dissipators (a, κ(n_th+1)) and
/// (a†, κ n_th); zero-rate channels are omitted.
pub fn build_thermal(cfg: &SystemConfig) -> Result<Generator> {
    cfg.require_frame(Frame::Thermal)?;
    let ops = CollectiveOps::new(cfg.layout())?;
    let a = ops.field()?;
    let coupling = cfg.g * (cfg.n_atoms as f64).sqrt();
    let h = &ops.s_z.scale_real(0.5 * cfg.delta_atom)
        + &hc_sum(&(&ops.s_plus * a).scale_real(coupling));
    let mut dissipators = vec![Dissipator {
        jump: a.clone(),
        rate: KAPPA * (cfg.n_th + 1.0),
    }];
    if cfg.n_th > 0.0 {
        dissipators.push(Dissipator {
            jump: a.dagger(),
            rate: KAPPA * cfg.n_th,
        });
    }
    Generator::new(h, dissipators)
}

/// Dispatch on `cfg.frame`.
pub fn build_generator(cfg: &SystemConfig) -> Result<Generator> {
    match cfg.frame {
        Frame::LabRotating => build_rotating_frame(cfg),
        Frame::Displaced => build_displaced(cfg),
        Frame::EffectiveAtomic => build_effective_atomic(cfg),
        Frame::Thermal => build_thermal(cfg),
    }
}

/// Field-only generator of an empty driven cavity at temperature `n_th`:
/// `H = δa†a + ε(a + a†)`, dissipators (a, κ(n_th+1)), (a†, κ n_th).
pub fn build_empty_cavity(epsilon: f64, delta: f64, n_th: f64, n_max: usize) -> Result<Generator> {
    let a = annihilation(n_max)?;
    let h = &(&a.dagger() * &a).scale_real(delta) + &hc_sum(&a.scale_real(epsilon));
    let mut dissipators = vec![Dissipator {
        jump: a.clone(),
        rate: KAPPA * (n_th + 1.0),
    }];
    if n_th > 0.0 {
        dissipators.push(Dissipator {
            jump: a.dagger(),
            rate: KAPPA * n_th,
        });
    }
    Generator::new(h, dissipators)
}

/// Initial state of the atoms.
#[derive(Clone, Debug, PartialEq)]
pub enum AtomicInitial {
    AllExcited,
    AllGround,
    /// First atom excited, the rest in the ground state (|e,g⟩ for N = 2).
    ExcitedGround,
    /// Amplitudes over the 2^N atomic basis (|e⟩ = local index 0).
    Custom(Vec<C64>),
}

impl AtomicInitial {
    pub fn name(&self) -> String {
        match self {
            AtomicInitial::AllExcited => "all-e".into(),
            AtomicInitial::AllGround => "all-g".into(),
            AtomicInitial::ExcitedGround => "e-g".into(),
            AtomicInitial::Custom(_) => "custom".into(),
        }
    }

    pub fn ket(&self, n_atoms: usize) -> Result<CVector> {
        let d = 1usize << n_atoms;
        let mut v = CVector::zeros(d);
        match self {
            AtomicInitial::AllExcited => v[0] = ONE,
            AtomicInitial::AllGround => v[d - 1] = ONE,
            // Atom 0 is the most significant bit and |e⟩ is 0, so the
            // remaining atoms all in |g⟩ gives index 2^{N-1} − 1.
            AtomicInitial::ExcitedGround => v[(d >> 1) - 1] = ONE,
            AtomicInitial::Custom(amps) => {
                if amps.len() != d {
                    return Err(Error::InvalidParameter(format!(
                        "custom atomic state needs {d} amplitudes, got {}",
                        amps.len()
                    )));
                }
                v = CVector::from_column_slice(amps);
                let norm = v.norm();
                if norm == 0.0 {
                    return Err(Error::InvalidParameter(
                        "custom atomic state is zero".into(),
                    ));
                }
                v /= C64::new(norm, 0.0);
            }
        }
        Ok(v)
    }
}

impl FromStr for AtomicInitial {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all-e" | "ee" | "e-e" => Ok(AtomicInitial::AllExcited),
            "all-g" | "gg" | "g-g" => Ok(AtomicInitial::AllGround),
            "e-g" | "eg" => Ok(AtomicInitial::ExcitedGround),
            other => {
                // custom:re,im;re,im;...
                let body = other.strip_prefix("custom:").ok_or_else(|| {
                    Error::Config(format!("unknown initial atomic state '{other}'"))
                })?;
                let amps = body
                    .split(';')
                    .map(|pair| {
                        let mut it = pair.split(',').map(str::trim);
                        let re = it.next().unwrap_or("0");
                        let im = it.next().unwrap_or("0");
                        let parse = |x: &str| {
                            x.parse::<f64>().map_err(|_| {
                                Error::Config(format!("bad amplitude component '{x}'"))
                            })
                        };
                        Ok(C64::new(parse(re)?, parse(im)?))
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(AtomicInitial::Custom(amps))
            }
        }
    }
}

/// Initial state of the cavity mode.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum FieldInitial {
    Vacuum,
    Fock(usize),
    Coherent(C64),
    Thermal(f64),
}

/// `ρ_field ⊗ |ψ_atoms⟩⟨ψ_atoms|` on `layout` (field factor omitted for
/// atoms-only layouts).
pub fn initial_state(
    layout: HilbertLayout,
    atoms: &AtomicInitial,
    field: FieldInitial,
) -> Result<DensityMatrix> {
    let atom_layout = HilbertLayout::atoms(layout.atom_count());
    let atomic = DensityMatrix::pure(atom_layout, &atoms.ket(layout.atom_count())?)?;
    if !layout.has_field() {
        return Ok(atomic);
    }
    let n_max = layout.fock_dim() - 1;
    let field_layout = HilbertLayout::field(layout.fock_dim());
    let field_state = match field {
        FieldInitial::Vacuum => DensityMatrix::pure(field_layout, &fock_ket(0, n_max)?)?,
        FieldInitial::Fock(n) => DensityMatrix::pure(field_layout, &fock_ket(n, n_max)?)?,
        FieldInitial::Coherent(alpha) => {
            DensityMatrix::pure(field_layout, &coherent_ket(alpha, n_max))?
        }
        FieldInitial::Thermal(n_th) => DensityMatrix::new(Operator::diagonal(
            field_layout,
            &thermal_populations(n_th, n_max),
        )?)?,
    };
    Ok(DensityMatrix::from_trusted(tensor(
        field_state.op(),
        atomic.op(),
    )?))
}
