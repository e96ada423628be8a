//! Rothe time stepping for the Wentzell and Signorini problems.
//!
//! The interval `[0, T]` is split into `m` equal steps of size `h`. Given `u^i`, the next
//! state minimizes
//!
//! ```text
//! ½ vᵀ A v − bᵀv + Σ_k ℓ_k j(sel(v)_k),    A = K + (α/h) selᵀ diag(ℓ) sel,
//! b = F(t_{i+1}) + (α/h) selᵀ diag(ℓ) sel(u^i)
//! ```
//!
//! where `sel` is the interface trace (Wentzell, with `β` times the tangential stiffness
//! added to `K`) or the jump (Signorini, with the interface flux subtracted from `b`).

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::convex::{JSpec, Selector, ViOptions, ViSolver};
use crate::error::{CoercivityViolation, Error, Result};
use crate::fem::{
    assemble_interface_load, assemble_interface_mass, assemble_load, assemble_stiffness,
    assemble_tangential_stiffness, bilateral_energy_matrix, initial_state, ProblemData,
};
use crate::linalg::{dot, mat_vec, quadratic_form, SparseMatrix, SpdFactor};
use crate::mesh::{BidomainMesh, DofMap, DofMode};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProblemKind {
    Wentzell,
    Signorini,
    /// Wentzell-type dynamics spread over a layer of elements.
    ThinLayer,
}

impl ProblemKind {
    pub fn name(self) -> &'static str {
        match self {
            ProblemKind::Wentzell => "wentzell",
            ProblemKind::Signorini => "signorini",
            ProblemKind::ThinLayer => "thinlayer",
        }
    }
}

/// Smallest step count with `T/m ≤ α_#/σ_#`.
pub fn min_signorini_steps(sigma_min: f64, alpha_min: f64, t_end: f64) -> usize {
    let x = sigma_min * t_end / alpha_min;
    // tolerate representation error in exact ratios such as 1 · 1 / 0.1
    ((x - 1e-9 * x).ceil() as usize).max(1)
}

/// Rejects step counts under which the bilateral per-step form may lose coercivity.
pub fn check_coercivity(data: &ProblemData) -> Result<()> {
    let min_steps = min_signorini_steps(data.sigma_min(), data.alpha_min(), data.t_end);
    if data.steps < min_steps {
        return Err(Error::Coercivity(CoercivityViolation {
            steps: data.steps,
            min_steps,
            h: data.h(),
            h_max: data.alpha_min() / data.sigma_min(),
        }));
    }
    Ok(())
}

/// The per-step operator of one problem, factorized once and reused for every step.
pub struct RotheScheme {
    kind: ProblemKind,
    mesh: BidomainMesh,
    dofs: DofMap,
    data: ProblemData,
    selector: Selector,
    nodes: Vec<usize>,
    lengths: Vec<f64>,
    /// `(α/h) selᵀ diag(ℓ) sel`
    memory: SparseMatrix,
    matrix: SparseMatrix,
    solver: ViSolver,
    options: ViOptions,
}

impl RotheScheme {
    pub fn wentzell(mesh: &BidomainMesh, dofs: &DofMap, data: &ProblemData, options: ViOptions) -> Result<Self> {
        if dofs.mode() != DofMode::Continuous {
            return Err(Error::Mode("the Wentzell problem needs a continuous DOF map".into()));
        }
        let im = assemble_interface_mass(mesh, dofs, 1.0)?;
        let nodes = dofs.interface().iter().map(|i| i.node).collect();
        Self::assemble(ProblemKind::Wentzell, mesh, dofs, data, im.selector, nodes, im.lengths, options)
    }

    pub fn signorini(mesh: &BidomainMesh, dofs: &DofMap, data: &ProblemData, options: ViOptions) -> Result<Self> {
        if dofs.mode() != DofMode::Bilateral {
            return Err(Error::Mode("the Signorini problem needs a bilateral DOF map".into()));
        }
        data.validate()?;
        check_coercivity(data)?;
        let im = assemble_interface_mass(mesh, dofs, 1.0)?;
        let nodes = dofs.interface().iter().map(|i| i.node).collect();
        Self::assemble(ProblemKind::Signorini, mesh, dofs, data, im.selector, nodes, im.lengths, options)
    }

    /// Scheme with an arbitrary selector; `lengths` weight both the memory term and `j`.
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn assemble(
        kind: ProblemKind,
        mesh: &BidomainMesh,
        dofs: &DofMap,
        data: &ProblemData,
        selector: Selector,
        nodes: Vec<usize>,
        lengths: Vec<f64>,
        options: ViOptions,
    ) -> Result<Self> {
        data.validate()?;
        let n = dofs.n_dofs();
        let mut k = assemble_stiffness(mesh, dofs, data.sigma1, data.sigma2)?;
        if kind == ProblemKind::Wentzell && data.beta > 0.0 {
            k = &k + &assemble_tangential_stiffness(mesh, dofs, data.beta)?;
        }
        let scaled: Vec<f64> = lengths.iter().map(|l| data.alpha / data.h() * l).collect();
        let memory = selector.weighted_gram(&scaled, n);
        let matrix = &k + &memory;
        let solver = ViSolver::new(&matrix, &lengths, &selector)?;
        Ok(RotheScheme {
            kind,
            mesh: mesh.clone(),
            dofs: dofs.clone(),
            data: data.clone(),
            selector,
            nodes,
            lengths,
            memory,
            matrix,
            solver,
            options,
        })
    }

    pub fn kind(&self) -> ProblemKind {
        self.kind
    }

    pub fn matrix(&self) -> &SparseMatrix {
        &self.matrix
    }

    pub fn selector(&self) -> &Selector {
        &self.selector
    }

    /// Interface quadrature lengths `ℓ_k` aligned with the selector.
    pub fn lengths(&self) -> &[f64] {
        &self.lengths
    }

    pub fn data(&self) -> &ProblemData {
        &self.data
    }

    /// Right-hand side of the step ending at `t_next`.
    pub fn rhs(&self, u_prev: &[f64], t_next: f64) -> Result<Vec<f64>> {
        let mut b = assemble_load(&self.mesh, &self.dofs, &self.data.f, t_next)?;
        if self.kind == ProblemKind::Signorini {
            let g = assemble_interface_load(&self.mesh, &self.dofs, &self.data.g, t_next)?;
            b.iter_mut().zip(g).for_each(|(x, y)| *x -= y);
        }
        let m = mat_vec(&self.memory, u_prev);
        b.iter_mut().zip(m).for_each(|(x, y)| *x += y);
        Ok(b)
    }

    pub fn step(&self, u_prev: &[f64], t_next: f64) -> Result<Vec<f64>> {
        let b = self.rhs(u_prev, t_next)?;
        Ok(self.solver.solve(&b, &self.data.j, Some(u_prev), &self.options)?.v)
    }

    pub fn initial_state(&self) -> Result<Vec<f64>> {
        initial_state(&self.mesh, &self.dofs, &self.data.initial)
    }

    pub fn run(&self) -> Result<RotheTrajectory> {
        self.run_from(self.initial_state()?)
    }

    pub fn run_from(&self, u0: Vec<f64>) -> Result<RotheTrajectory> {
        if u0.len() != self.dofs.n_dofs() {
            return Err(Error::InvalidArgument("initial state does not match the DOF map".into()));
        }
        let m = self.data.steps;
        let h = self.data.h();
        let mut steps = Vec::with_capacity(m + 1);
        steps.push(u0);
        for i in 0..m {
            let t = if i + 1 == m { self.data.t_end } else { (i + 1) as f64 * h };
            let next = self.step(&steps[i], t)?;
            steps.push(next);
        }
        Ok(RotheTrajectory {
            kind: self.kind,
            t_end: self.data.t_end,
            steps,
            selector: self.selector.clone(),
            nodes: self.nodes.clone(),
            lengths: self.lengths.clone(),
        })
    }
}

pub fn run_wentzell(mesh: &BidomainMesh, dofs: &DofMap, data: &ProblemData, options: ViOptions) -> Result<RotheTrajectory> {
    RotheScheme::wentzell(mesh, dofs, data, options)?.run()
}

pub fn run_signorini(mesh: &BidomainMesh, dofs: &DofMap, data: &ProblemData, options: ViOptions) -> Result<RotheTrajectory> {
    RotheScheme::signorini(mesh, dofs, data, options)?.run()
}

/// The states `u^0, …, u^m` of one run together with the interface bookkeeping needed
/// to evaluate its norms.
#[derive(Debug, Clone, PartialEq)]
pub struct RotheTrajectory {
    pub kind: ProblemKind,
    pub t_end: f64,
    pub steps: Vec<Vec<f64>>,
    pub selector: Selector,
    /// Mesh node of each selector entry.
    pub nodes: Vec<usize>,
    pub lengths: Vec<f64>,
}

impl RotheTrajectory {
    pub fn m(&self) -> usize {
        self.steps.len() - 1
    }

    pub fn h(&self) -> f64 {
        self.t_end / self.m() as f64
    }

    pub fn time(&self, i: usize) -> f64 {
        if i == self.m() {
            self.t_end
        } else {
            i as f64 * self.h()
        }
    }

    fn locate(&self, t: f64) -> Result<(usize, f64)> {
        if !(0.0..=self.t_end).contains(&t) {
            return Err(Error::Range { t, start: 0.0, end: self.t_end });
        }
        let s = t / self.h();
        let i = (s.ceil() as usize).clamp(1, self.m());
        Ok((i, s - (i - 1) as f64))
    }

    /// Piecewise-linear Rothe interpolant.
    pub fn interpolant(&self, t: f64) -> Result<Vec<f64>> {
        let (i, s) = self.locate(t)?;
        // grid times reproduce the stored states exactly
        if (s - 1.0).abs() < 1e-12 {
            return Ok(self.steps[i].clone());
        }
        if s.abs() < 1e-12 {
            return Ok(self.steps[i - 1].clone());
        }
        Ok(self.steps[i - 1]
            .iter()
            .zip(&self.steps[i])
            .map(|(a, b)| a + s * (b - a))
            .collect())
    }

    /// Step function: `u^{i+1}` on `(t_i, t_{i+1}]` and `u^1` at `t = 0`.
    pub fn step_function(&self, t: f64) -> Result<&[f64]> {
        let (i, _) = self.locate(t)?;
        Ok(&self.steps[i])
    }

    /// Trace or jump of every state.
    pub fn interface_series(&self) -> Vec<Vec<f64>> {
        self.steps.iter().map(|u| self.selector.apply(u)).collect()
    }

    /// `Z^i = (u^i − u^{i−1})/h` for `i = 1..m`.
    pub fn derivative_series(&self) -> Vec<Vec<f64>> {
        let h = self.h();
        self.steps
            .windows(2)
            .map(|w| w[1].iter().zip(&w[0]).map(|(a, b)| (a - b) / h).collect())
            .collect()
    }

    /// `Σ ℓ_k sel(v)_k²`.
    pub fn interface_norm_sq(&self, v: &[f64]) -> f64 {
        lumped_norm_sq(&self.selector.apply(v), &self.lengths)
    }

    /// Interface L² norm of each `Z^i`.
    pub fn derivative_interface_norms(&self) -> Vec<f64> {
        self.derivative_series()
            .iter()
            .map(|z| self.interface_norm_sq(z).sqrt())
            .collect()
    }

    /// `‖Z_m‖²` in `L²(Σ)`: `Σ h ‖sel Z^i‖²`.
    pub fn derivative_l2_sigma_sq(&self) -> f64 {
        let h = self.h();
        self.derivative_interface_norms().iter().map(|z| h * z * z).sum()
    }

    pub fn sup_derivative_interface(&self) -> f64 {
        self.derivative_interface_norms().into_iter().fold(0.0, f64::max)
    }

    pub fn write_csv(&self, dir: &Path, name: &str) -> Result<()> {
        let mut w = BufWriter::new(File::create(dir.join(name))?);
        writeln!(w, "step,t,dof_id,value")?;
        for (i, u) in self.steps.iter().enumerate() {
            let t = self.time(i);
            for (d, v) in u.iter().enumerate() {
                writeln!(w, "{i},{t:.16e},{d},{v:.16e}")?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_interface_csv(&self, dir: &Path, name: &str) -> Result<()> {
        let mut w = BufWriter::new(File::create(dir.join(name))?);
        writeln!(w, "step,t,node_id,trace_or_jump")?;
        for (i, s) in self.interface_series().iter().enumerate() {
            let t = self.time(i);
            for (node, v) in self.nodes.iter().zip(s) {
                writeln!(w, "{i},{t:.16e},{node},{v:.16e}")?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

pub fn lumped_norm_sq(values: &[f64], lengths: &[f64]) -> f64 {
    values.iter().zip(lengths).map(|(v, l)| l * v * v).sum()
}

/// Composite trapezoid approximation of `∫_0^T Σ_k ℓ_k (a_k − b_k)² dt` for two series of
/// per-node values on the same uniform grid of step `h`, square-rooted.
pub fn series_distance(a: &[Vec<f64>], b: &[Vec<f64>], lengths: &[f64], h: f64) -> Result<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::InvalidArgument("series lengths differ".into()));
    }
    let last = a.len() - 1;
    let mut sum = 0.0;
    for (i, (x, y)) in a.iter().zip(b).enumerate() {
        if x.len() != lengths.len() || y.len() != lengths.len() {
            return Err(Error::InvalidArgument("series entries do not match the quadrature".into()));
        }
        let diff: Vec<f64> = x.iter().zip(y).map(|(p, q)| p - q).collect();
        let w = if i == 0 || i == last { 0.5 } else { 1.0 };
        sum += w * h * lumped_norm_sq(&diff, lengths);
    }
    Ok(sum.sqrt())
}

/// Coarse-grid samples of two runs on nested time grids.
fn common_grid<'a>(a: &'a RotheTrajectory, b: &'a RotheTrajectory) -> Result<(Vec<&'a [f64]>, Vec<&'a [f64]>, f64)> {
    let (ma, mb) = (a.m(), b.m());
    if a.selector != b.selector || a.lengths != b.lengths || a.t_end != b.t_end {
        return Err(Error::InvalidArgument("trajectories live on different discretizations".into()));
    }
    let (coarse, fine, mc) = if ma <= mb { (a, b, ma) } else { (b, a, mb) };
    let mf = fine.m();
    if mf % mc != 0 {
        return Err(Error::InvalidArgument(format!("time grids with {ma} and {mb} steps are not nested")));
    }
    let r = mf / mc;
    let xs: Vec<&[f64]> = coarse.steps.iter().map(|v| v.as_slice()).collect();
    let ys: Vec<&[f64]> = (0..=mc).map(|i| fine.steps[i * r].as_slice()).collect();
    if ma <= mb {
        Ok((xs, ys, coarse.h()))
    } else {
        Ok((ys, xs, coarse.h()))
    }
}

/// Discrete `L²(Σ)` distance between the traces (or jumps) of two runs.
pub fn interface_distance(a: &RotheTrajectory, b: &RotheTrajectory) -> Result<f64> {
    let (xs, ys, h) = common_grid(a, b)?;
    let sa: Vec<Vec<f64>> = xs.iter().map(|u| a.selector.apply(u)).collect();
    let sb: Vec<Vec<f64>> = ys.iter().map(|u| a.selector.apply(u)).collect();
    series_distance(&sa, &sb, &a.lengths, h)
}

/// Discrete `L²(0,T; energy)` distance, the energy norm given by `norm`.
pub fn energy_distance(a: &RotheTrajectory, b: &RotheTrajectory, norm: &SparseMatrix) -> Result<f64> {
    let (xs, ys, h) = common_grid(a, b)?;
    let last = xs.len() - 1;
    let mut sum = 0.0;
    for (i, (x, y)) in xs.iter().zip(&ys).enumerate() {
        let d: Vec<f64> = x.iter().zip(y.iter()).map(|(p, q)| p - q).collect();
        let w = if i == 0 || i == last { 0.5 } else { 1.0 };
        sum += w * h * quadratic_form(norm, &d);
    }
    Ok(sum.max(0.0).sqrt())
}

/// The norm of the solution space: `K₁ = ∫∇u·∇v + β∫_Γ ∂_s u ∂_s v` for Wentzell,
/// `∫∇u·∇v + ∫_Γ [u][v]` for Signorini.
pub fn energy_matrix(mesh: &BidomainMesh, dofs: &DofMap, beta: f64) -> Result<SparseMatrix> {
    match dofs.mode() {
        DofMode::Continuous => {
            let k = assemble_stiffness(mesh, dofs, 1.0, 1.0)?;
            Ok(&k + &assemble_tangential_stiffness(mesh, dofs, beta)?)
        }
        DofMode::Bilateral => bilateral_energy_matrix(mesh, dofs),
    }
}

/// One line of an estimate audit.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimateRecord {
    pub step: usize,
    pub id: &'static str,
    pub lhs: f64,
    /// The bound, or the ratio `lhs / data norm` for estimates with a generic constant.
    pub rhs_or_ratio: f64,
    /// `None` for ratios: their check is boundedness across an m-sweep.
    pub pass: Option<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimateReport {
    pub records: Vec<EstimateRecord>,
    /// `h Σ_k ‖F(t_k)‖²_*`.
    pub source_norm_sq: f64,
    /// `h Σ_k ‖G(t_k)‖²_*` (Signorini only).
    pub flux_norm_sq: f64,
    /// `Σ ℓ_k S_k²`.
    pub initial_interface_sq: f64,
}

impl EstimateReport {
    /// Every explicit inequality holds.
    pub fn all_pass(&self) -> bool {
        self.records.iter().all(|r| r.pass != Some(false))
    }

    pub fn ratio(&self, id: &str) -> Option<f64> {
        self.records
            .iter()
            .find(|r| r.id == id && r.pass.is_none())
            .map(|r| r.rhs_or_ratio)
    }

    pub fn write_csv(&self, dir: &Path, name: &str) -> Result<()> {
        let mut w = BufWriter::new(File::create(dir.join(name))?);
        writeln!(w, "step,inequality_id,lhs,rhs_or_ratio,pass")?;
        for r in &self.records {
            let pass = match r.pass {
                Some(true) => "true",
                Some(false) => "false",
                None => "na",
            };
            writeln!(w, "{},{},{:.16e},{:.16e},{pass}", r.step, r.id, r.lhs, r.rhs_or_ratio)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Estimate identifiers.
pub mod ids {
    /// `α_# ‖u^{i+1}‖²_Γ ≤ max{1/σ_#, 1} ‖f‖² + α^# ‖S‖²_Γ`
    pub const INTERFACE_BOUND: &str = "interface_bound";
    /// `min{σ_#, 1} h Σ_{k≤i} ‖u^k‖²_{H_β} ≤ max{1/σ_#, 1} ‖f‖² + α^# ‖S‖²_Γ`
    pub const ENERGY_BOUND: &str = "energy_bound";
    /// `α ‖sel u^{i+1}‖²_Γ ≤ α ‖sel u^i‖²_Γ` when all sources vanish
    pub const CONTRACTION: &str = "contraction";
    /// `max_i α_# ‖[u^i]‖²_Γ / (‖f‖² + ‖g‖² + ‖S‖²_Γ)`
    pub const JUMP_RATIO: &str = "jump_ratio";
    /// `‖ũ_m‖²_{L²(0,T;V)} / (‖f‖² + ‖g‖² + ‖S‖²_Γ)`
    pub const ENERGY_RATIO: &str = "energy_ratio";
    /// `(max_i ‖u^i‖² + ‖Z_m‖²_{L²(Σ)}) / (‖f‖² + ‖g‖² + ‖u^0‖²)`
    pub const DERIVATIVE_RATIO: &str = "derivative_ratio";
}

fn ratio(lhs: f64, rhs: f64) -> f64 {
    if rhs > 0.0 {
        lhs / rhs
    } else if lhs == 0.0 {
        0.0
    } else {
        f64::INFINITY
    }
}

/// Audits the a priori estimates of a trajectory produced from `data`.
pub fn check_estimates(
    traj: &RotheTrajectory,
    mesh: &BidomainMesh,
    dofs: &DofMap,
    data: &ProblemData,
) -> Result<EstimateReport> {
    let expected = match dofs.mode() {
        DofMode::Continuous => ProblemKind::Wentzell,
        DofMode::Bilateral => ProblemKind::Signorini,
    };
    if traj.kind != expected || traj.m() != data.steps || traj.t_end != data.t_end {
        return Err(Error::InvalidArgument("trajectory does not belong to these data".into()));
    }
    if traj.steps.iter().any(|u| u.len() != dofs.n_dofs()) || traj.selector != dofs.interface_selector() {
        return Err(Error::InvalidArgument("trajectory does not match the DOF map".into()));
    }
    let m = traj.m();
    let h = traj.h();
    let norm = energy_matrix(mesh, dofs, data.beta)?;
    let factor = SpdFactor::new(&norm)?;
    let mut source_norm_sq = 0.0;
    let mut flux_norm_sq = 0.0;
    for k in 1..=m {
        let t = traj.time(k);
        source_norm_sq += h * factor.dual_norm(&assemble_load(mesh, dofs, &data.f, t)?).powi(2);
        if expected == ProblemKind::Signorini {
            flux_norm_sq += h * factor.dual_norm(&assemble_interface_load(mesh, dofs, &data.g, t)?).powi(2);
        }
    }
    let s0 = traj.interface_norm_sq(&traj.steps[0]);
    let (a_lo, a_hi) = (data.alpha_min(), data.alpha_max());
    let energies: Vec<f64> = traj.steps.iter().map(|u| quadratic_form(&norm, u)).collect();
    let mut records = Vec::new();

    if expected == ProblemKind::Wentzell {
        let rhs = (1.0 / data.sigma_min()).max(1.0) * source_norm_sq + a_hi * s0;
        let slack = 1e-12 * (1.0 + rhs);
        let c = data.sigma_min().min(1.0);
        let mut cumulative = 0.0;
        for i in 1..=m {
            let lhs = a_lo * traj.interface_norm_sq(&traj.steps[i]);
            records.push(EstimateRecord {
                step: i,
                id: ids::INTERFACE_BOUND,
                lhs,
                rhs_or_ratio: rhs,
                pass: Some(lhs <= rhs + slack),
            });
            cumulative += c * h * energies[i];
            records.push(EstimateRecord {
                step: i,
                id: ids::ENERGY_BOUND,
                lhs: cumulative,
                rhs_or_ratio: rhs,
                pass: Some(cumulative <= rhs + slack),
            });
        }
    }

    if data.f.is_zero() && (expected == ProblemKind::Wentzell || data.g.is_zero()) {
        for i in 1..=m {
            let lhs = data.alpha * traj.interface_norm_sq(&traj.steps[i]);
            let rhs = data.alpha * traj.interface_norm_sq(&traj.steps[i - 1]);
            records.push(EstimateRecord {
                step: i,
                id: ids::CONTRACTION,
                lhs,
                rhs_or_ratio: rhs,
                pass: Some(lhs <= rhs + 1e-12 * (1.0 + rhs)),
            });
        }
    }

    let core = source_norm_sq + flux_norm_sq;
    let sup_energy = energies[1..].iter().copied().fold(0.0, f64::max);
    let derivative_lhs = sup_energy + traj.derivative_l2_sigma_sq();
    if expected == ProblemKind::Signorini {
        let jump_lhs = (1..=m)
            .map(|i| a_lo * traj.interface_norm_sq(&traj.steps[i]))
            .fold(0.0, f64::max);
        records.push(EstimateRecord {
            step: m,
            id: ids::JUMP_RATIO,
            lhs: jump_lhs,
            rhs_or_ratio: ratio(jump_lhs, core + s0),
            pass: None,
        });
        let energy_lhs: f64 = energies[1..].iter().map(|e| h * e).sum();
        records.push(EstimateRecord {
            step: m,
            id: ids::ENERGY_RATIO,
            lhs: energy_lhs,
            rhs_or_ratio: ratio(energy_lhs, core + s0),
            pass: None,
        });
    }
    records.push(EstimateRecord {
        step: m,
        id: ids::DERIVATIVE_RATIO,
        lhs: derivative_lhs,
        rhs_or_ratio: ratio(derivative_lhs, core + energies[0]),
        pass: None,
    });

    Ok(EstimateReport {
        records,
        source_norm_sq,
        flux_norm_sq,
        initial_interface_sq: s0,
    })
}

/// Relative spread `(max − min) / max` of a sweep of nonnegative values; 0 for all-zero.
pub fn relative_drift(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(0.0, f64::max);
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    if max > 0.0 {
        (max - min) / max
    } else {
        0.0
    }
}

/// Stationary state `K u = F(0) − G(0)`: the compatible initial state for `j = 0`.
pub fn stationary_state(mesh: &BidomainMesh, dofs: &DofMap, data: &ProblemData) -> Result<Vec<f64>> {
    let (k, rhs) = compatibility_operator(mesh, dofs, data)?;
    SpdFactor::new(&k).map(|f| f.solve(&rhs))
}

/// `K` of the problem matching the DOF map and the time-0 load `F(0) − G(0)`.
fn compatibility_operator(mesh: &BidomainMesh, dofs: &DofMap, data: &ProblemData) -> Result<(SparseMatrix, Vec<f64>)> {
    let mut k = assemble_stiffness(mesh, dofs, data.sigma1, data.sigma2)?;
    let mut rhs = assemble_load(mesh, dofs, &data.f, 0.0)?;
    match dofs.mode() {
        DofMode::Continuous => {
            if data.beta > 0.0 {
                k = &k + &assemble_tangential_stiffness(mesh, dofs, data.beta)?;
            }
        }
        DofMode::Bilateral => {
            let g = assemble_interface_load(mesh, dofs, &data.g, 0.0)?;
            rhs.iter_mut().zip(g).for_each(|(x, y)| *x -= y);
        }
    }
    Ok((k, rhs))
}

/// Largest violation of the time-0 compatibility inequality
/// `(Ku⁰)·(v − u⁰) + Σ ℓ_k (j(sel v) − j(S)) ≥ (F(0) − G(0))·(v − u⁰)`
/// over 200 random probes `v = u⁰ + z`, `z ∈ [−1, 1]^n`, and `v = u⁰ ± e_i`.
pub fn compatibility_residual(mesh: &BidomainMesh, dofs: &DofMap, data: &ProblemData) -> Result<f64> {
    data.validate()?;
    let (k, rhs) = compatibility_operator(mesh, dofs, data)?;
    let u0 = initial_state(mesh, dofs, &data.initial)?;
    let selector = dofs.interface_selector();
    let lengths = mesh.interface_node_lengths();
    let j: &JSpec = &data.j;
    let phi_s: f64 = selector.apply(&u0).iter().zip(&lengths).map(|(s, l)| l * j.value(*s)).sum();
    if !phi_s.is_finite() {
        return Ok(f64::INFINITY);
    }
    let grad: Vec<f64> = mat_vec(&k, &u0).iter().zip(&rhs).map(|(a, b)| a - b).collect();
    let n = dofs.n_dofs();
    let mut worst: f64 = 0.0;
    let mut probe = |z: &[f64]| {
        let v: Vec<f64> = u0.iter().zip(z).map(|(a, b)| a + b).collect();
        let phi_v: f64 = selector.apply(&v).iter().zip(&lengths).map(|(s, l)| l * j.value(*s)).sum();
        if phi_v.is_finite() {
            worst = worst.max(-(dot(&grad, z) + phi_v - phi_s));
        }
    };
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    for _ in 0..200 {
        let z: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..=1.0)).collect();
        probe(&z);
    }
    let mut z = vec![0.0; n];
    for i in 0..n {
        for s in [1.0, -1.0] {
            z[i] = s;
            probe(&z);
        }
        z[i] = 0.0;
    }
    Ok(worst)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegularityReport {
    pub compatibility_residual: f64,
    /// Compatibility holds to 1e-9, so the derivative bounds are expected.
    pub guaranteed: bool,
    /// The indicator functional: the derivative bounds are reported but not claimed.
    pub flagged: bool,
    /// `‖sel Z^i‖_Γ` for `i = 1..m`.
    pub derivative_interface: Vec<f64>,
    /// `‖Z^i‖` in the energy norm.
    pub derivative_energy: Vec<f64>,
    pub derivative_l2_sigma_sq: f64,
    pub sup_derivative_interface: f64,
}

pub fn regularity_diagnostics(
    traj: &RotheTrajectory,
    mesh: &BidomainMesh,
    dofs: &DofMap,
    data: &ProblemData,
) -> Result<RegularityReport> {
    let residual = compatibility_residual(mesh, dofs, data)?;
    let norm = energy_matrix(mesh, dofs, data.beta)?;
    let z = traj.derivative_series();
    Ok(RegularityReport {
        compatibility_residual: residual,
        guaranteed: residual <= 1e-9,
        flagged: matches!(data.j, JSpec::IntervalIndicator { .. }),
        derivative_interface: traj.derivative_interface_norms(),
        derivative_energy: z.iter().map(|v| quadratic_form(&norm, v).max(0.0).sqrt()).collect(),
        derivative_l2_sigma_sq: traj.derivative_l2_sigma_sq(),
        sup_derivative_interface: traj.sup_derivative_interface(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::{InitialData, InitialProfile, SourceProfile, SpaceTimeField};
    use crate::linalg::to_dense;
    use crate::mesh::{build_dof_map, build_inclusion_mesh, build_strip_mesh};

    fn data(mesh: &BidomainMesh, j: JSpec, f: SourceProfile, s: InitialProfile, steps: usize) -> ProblemData {
        ProblemData {
            sigma1: 1.0,
            sigma2: 2.0,
            alpha: 0.5,
            beta: 0.3,
            j,
            f: f.sample(mesh.nodes(), 1.0).unwrap(),
            g: SpaceTimeField::zero(mesh.n_nodes(), 1.0),
            initial: InitialData::Profile(s),
            t_end: 1.0,
            steps,
        }
    }

    #[test]
    fn zero_fixed_point() {
        let mesh = build_strip_mesh(2, 2, 2).unwrap();
        let dofs = build_dof_map(&mesh, DofMode::Continuous).unwrap();
        let d = data(&mesh, JSpec::AbsVal { lambda: 1.0 }, SourceProfile::Zero, InitialProfile::Zero, 4);
        let traj = run_wentzell(&mesh, &dofs, &d, ViOptions::default()).unwrap();
        assert!(traj.steps.iter().flatten().all(|&x| x == 0.0));
    }

    #[test]
    fn single_step_matches_step_call() {
        let mesh = build_strip_mesh(2, 2, 2).unwrap();
        let dofs = build_dof_map(&mesh, DofMode::Continuous).unwrap();
        let d = data(&mesh, JSpec::Quadratic { c: 0.2 }, SourceProfile::Constant(1.0), InitialProfile::Sin(1.0), 1);
        let scheme = RotheScheme::wentzell(&mesh, &dofs, &d, ViOptions::default()).unwrap();
        let traj = scheme.run().unwrap();
        let u0 = scheme.initial_state().unwrap();
        assert_eq!(traj.steps.len(), 2);
        assert_eq!(traj.steps[1], scheme.step(&u0, 1.0).unwrap());
    }

    #[test]
    fn linear_steps_match_dense_solve() {
        let mesh = build_strip_mesh(2, 2, 2).unwrap();
        let dofs = build_dof_map(&mesh, DofMode::Continuous).unwrap();
        let d = data(&mesh, JSpec::Zero, SourceProfile::SinXY(3.0), InitialProfile::Sin(0.5), 4);
        let scheme = RotheScheme::wentzell(&mesh, &dofs, &d, ViOptions::default()).unwrap();
        let traj = scheme.run().unwrap();
        let a = to_dense(scheme.matrix()).cholesky().unwrap();
        for i in 0..4 {
            let b = scheme.rhs(&traj.steps[i], traj.time(i + 1)).unwrap();
            let x = a.solve(&nalgebra::DVector::from_vec(b));
            let scale = x.amax().max(1e-300);
            for (p, q) in x.iter().zip(&traj.steps[i + 1]) {
                assert!((p - q).abs() <= 1e-9 * scale, "{} vs {}: {:e}", p, q, (p - q).abs() / scale);
            }
        }
    }

    #[test]
    fn trajectory_identities() {
        let mesh = build_inclusion_mesh(8).unwrap();
        let dofs = build_dof_map(&mesh, DofMode::Continuous).unwrap();
        let d = data(&mesh, JSpec::AbsVal { lambda: 0.2 }, SourceProfile::LinearT(2.0), InitialProfile::Sin(1.0), 5);
        let traj = run_wentzell(&mesh, &dofs, &d, ViOptions::default()).unwrap();
        let h = traj.h();
        for i in 0..=5 {
            assert_eq!(traj.interpolant(traj.time(i)).unwrap(), traj.steps[i]);
        }
        let mut acc = traj.steps[0].clone();
        for z in traj.derivative_series() {
            acc.iter_mut().zip(&z).for_each(|(a, b)| *a += h * b);
        }
        for (a, b) in acc.iter().zip(&traj.steps[5]) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(traj.step_function(0.0).unwrap(), traj.steps[1].as_slice());
        assert!(matches!(traj.interpolant(1.5), Err(Error::Range { .. })));
    }

    #[test]
    fn coercivity_gate() {
        assert_eq!(min_signorini_steps(1.0, 0.1, 1.0), 10);
        let mesh = build_inclusion_mesh(4).unwrap();
        let dofs = build_dof_map(&mesh, DofMode::Bilateral).unwrap();
        let mut d = data(&mesh, JSpec::Zero, SourceProfile::Zero, InitialProfile::Constant(1.0), 5);
        d.sigma2 = 1.0;
        d.alpha = 0.1;
        match run_signorini(&mesh, &dofs, &d, ViOptions::default()) {
            Err(Error::Coercivity(v)) => assert_eq!(v.min_steps, 10),
            other => panic!("unexpected {other:?}"),
        }
        d.steps = 10;
        assert!(run_signorini(&mesh, &dofs, &d, ViOptions::default()).is_ok());
    }

    #[test]
    fn estimates_hold_with_sources() {
        let mesh = build_inclusion_mesh(8).unwrap();
        let dofs = build_dof_map(&mesh, DofMode::Continuous).unwrap();
        let d = data(&mesh, JSpec::PositivePart { lambda: 0.5 }, SourceProfile::SinXY(5.0), InitialProfile::Sin(1.0), 8);
        let traj = run_wentzell(&mesh, &dofs, &d, ViOptions::default()).unwrap();
        let report = check_estimates(&traj, &mesh, &dofs, &d).unwrap();
        assert!(report.all_pass());
        assert!(report.ratio(ids::DERIVATIVE_RATIO).unwrap().is_finite());
    }

    #[test]
    fn zero_data_gives_zero_estimates() {
        let mesh = build_inclusion_mesh(4).unwrap();
        let dofs = build_dof_map(&mesh, DofMode::Bilateral).unwrap();
        let d = data(&mesh, JSpec::Zero, SourceProfile::Zero, InitialProfile::Zero, 4);
        let traj = run_signorini(&mesh, &dofs, &d, ViOptions::default()).unwrap();
        let report = check_estimates(&traj, &mesh, &dofs, &d).unwrap();
        assert!(report.records.iter().all(|r| r.lhs == 0.0));
        let reg = regularity_diagnostics(&traj, &mesh, &dofs, &d).unwrap();
        assert_eq!(reg.sup_derivative_interface, 0.0);
        assert_eq!(reg.compatibility_residual, 0.0);
    }

    #[test]
    fn mismatched_trajectory_rejected() {
        let mesh = build_inclusion_mesh(4).unwrap();
        let dofs = build_dof_map(&mesh, DofMode::Continuous).unwrap();
        let d = data(&mesh, JSpec::Zero, SourceProfile::Zero, InitialProfile::Sin(1.0), 4);
        let traj = run_wentzell(&mesh, &dofs, &d, ViOptions::default()).unwrap();
        let mut other = d.clone();
        other.steps = 8;
        assert!(matches!(check_estimates(&traj, &mesh, &dofs, &other), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn compatibility_of_stationary_state() {
        let mesh = build_strip_mesh(3, 3, 3).unwrap();
        let dofs = build_dof_map(&mesh, DofMode::Continuous).unwrap();
        let mut d = data(&mesh, JSpec::Zero, SourceProfile::Constant(2.0), InitialProfile::Zero, 4);
        d.initial = InitialData::State(stationary_state(&mesh, &dofs, &d).unwrap());
        assert!(compatibility_residual(&mesh, &dofs, &d).unwrap() <= 1e-9);
        let n = dofs.n_dofs();
        d.initial = InitialData::State((0..n).map(|i| ((i * 37 % 11) as f64 - 5.0) / 5.0).collect());
        assert!(compatibility_residual(&mesh, &dofs, &d).unwrap() > 0.0);
    }

    #[test]
    fn distances() {
        let mesh = build_inclusion_mesh(4).unwrap();
        let dofs = build_dof_map(&mesh, DofMode::Continuous).unwrap();
        let d = data(&mesh, JSpec::Zero, SourceProfile::Zero, InitialProfile::Sin(1.0), 4);
        let a = run_wentzell(&mesh, &dofs, &d, ViOptions::default()).unwrap();
        let mut d8 = d.clone();
        d8.steps = 8;
        let b = run_wentzell(&mesh, &dofs, &d8, ViOptions::default()).unwrap();
        assert_eq!(interface_distance(&a, &a).unwrap(), 0.0);
        let ab = interface_distance(&a, &b).unwrap();
        assert_eq!(ab, interface_distance(&b, &a).unwrap());
        assert!(ab > 0.0);
        let mut d6 = d.clone();
        d6.steps = 6;
        let c = run_wentzell(&mesh, &dofs, &d6, ViOptions::default()).unwrap();
        assert!(matches!(interface_distance(&a, &c), Err(Error::InvalidArgument(_))));
        let k = energy_matrix(&mesh, &dofs, 0.3).unwrap();
        assert_eq!(energy_distance(&a, &b, &k).unwrap(), energy_distance(&b, &a, &k).unwrap());
    }

    #[test]
    fn drift_definition() {
        assert_eq!(relative_drift(&[0.0, 0.0]), 0.0);
        assert!((relative_drift(&[1.0, 0.9, 0.95]) - 0.1).abs() < 1e-15);
    }
}
