//! P1 finite element assembly for the bidomain problems.
//!
//! All matrices and vectors are indexed by the DOFs of a [`DofMap`]; Dirichlet nodes
//! without a DOF are dropped from every element contribution. Interface integrals are
//! mass-lumped so that each interface node carries one quadrature weight.

use nalgebra_sparse::{CooMatrix, CsrMatrix};

use crate::convex::{JSpec, Selector};
use crate::error::{Error, Result};
use crate::linalg::{dot, mat_vec, SparseMatrix, SpdFactor};
use crate::mesh::{BidomainMesh, DofMap, DofMode, Side, Subdomain};

/// Nodal samples of a scalar field at increasing times, linear in between.
#[derive(Debug, Clone, PartialEq)]
pub struct SpaceTimeField {
    times: Vec<f64>,
    values: Vec<Vec<f64>>,
}

impl SpaceTimeField {
    pub fn new(times: Vec<f64>, values: Vec<Vec<f64>>) -> Result<SpaceTimeField> {
        if times.is_empty() || times.len() != values.len() {
            return Err(Error::InvalidArgument("field needs one sample per time".into()));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) || times.iter().any(|t| !t.is_finite()) {
            return Err(Error::InvalidArgument("field sample times must increase strictly".into()));
        }
        let n = values[0].len();
        if values.iter().any(|v| v.len() != n) {
            return Err(Error::InvalidArgument("field samples differ in length".into()));
        }
        Ok(SpaceTimeField { times, values })
    }

    /// Zero field over `[0, t_end]`.
    pub fn zero(n_nodes: usize, t_end: f64) -> SpaceTimeField {
        SpaceTimeField {
            times: vec![0.0, t_end],
            values: vec![vec![0.0; n_nodes]; 2],
        }
    }

    /// Samples `f(x, y, t)` at every node for each of `times`.
    pub fn from_fn(nodes: &[[f64; 2]], times: &[f64], f: impl Fn(f64, f64, f64) -> f64) -> Result<SpaceTimeField> {
        let values = times
            .iter()
            .map(|&t| nodes.iter().map(|p| f(p[0], p[1], t)).collect())
            .collect();
        SpaceTimeField::new(times.to_vec(), values)
    }

    pub fn n_nodes(&self) -> usize {
        self.values[0].len()
    }

    pub fn start(&self) -> f64 {
        self.times[0]
    }

    pub fn end(&self) -> f64 {
        *self.times.last().unwrap()
    }

    pub fn eval(&self, t: f64) -> Result<Vec<f64>> {
        let (start, end) = (self.start(), self.end());
        if !(t >= start && t <= end) {
            return Err(Error::Range { t, start, end });
        }
        if self.times.len() == 1 {
            return Ok(self.values[0].clone());
        }
        let k = self.times.partition_point(|&s| s <= t).clamp(1, self.times.len() - 1);
        let (t0, t1) = (self.times[k - 1], self.times[k]);
        let s = (t - t0) / (t1 - t0);
        Ok(self.values[k - 1]
            .iter()
            .zip(&self.values[k])
            .map(|(a, b)| a + s * (b - a))
            .collect())
    }

    /// Largest nodal difference quotient between consecutive samples.
    pub fn lipschitz(&self) -> f64 {
        self.times
            .windows(2)
            .zip(self.values.windows(2))
            .flat_map(|(t, v)| {
                let dt = t[1] - t[0];
                v[0].iter().zip(&v[1]).map(move |(a, b)| (b - a).abs() / dt)
            })
            .fold(0.0, f64::max)
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().flatten().all(|&v| v == 0.0)
    }
}

/// Closed-form source families.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SourceProfile {
    Zero,
    Constant(f64),
    /// `A t`
    LinearT(f64),
    /// `A sin(πx) sin(πy) t`
    SinXY(f64),
}

impl SourceProfile {
    /// Every family is linear in time, so samples at the two endpoints are exact.
    pub fn sample(&self, nodes: &[[f64; 2]], t_end: f64) -> Result<SpaceTimeField> {
        if !(t_end > 0.0) {
            return Err(Error::InvalidArgument(format!("final time must be positive, got {t_end}")));
        }
        let p = *self;
        SpaceTimeField::from_fn(nodes, &[0.0, t_end], move |x, y, t| match p {
            SourceProfile::Zero => 0.0,
            SourceProfile::Constant(a) => a,
            SourceProfile::LinearT(a) => a * t,
            SourceProfile::SinXY(a) => {
                a * (std::f64::consts::PI * x).sin() * (std::f64::consts::PI * y).sin() * t
            }
        })
    }
}

/// Interface datum `S` as a function of position.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InitialProfile {
    Zero,
    Constant(f64),
    /// `A sin(2π(x + y))`
    Sin(f64),
}

impl InitialProfile {
    pub fn eval(&self, x: f64, y: f64) -> f64 {
        match *self {
            InitialProfile::Zero => 0.0,
            InitialProfile::Constant(a) => a,
            InitialProfile::Sin(a) => a * (2.0 * std::f64::consts::PI * (x + y)).sin(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum InitialData {
    /// `S` given on Γ; the initial state is its default extension.
    Profile(InitialProfile),
    /// Explicit initial DOF vector; `S` is its trace or jump.
    State(Vec<f64>),
}

/// Coefficients and data shared by both problems.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemData {
    pub sigma1: f64,
    pub sigma2: f64,
    pub alpha: f64,
    /// Surface diffusion; only used by the Wentzell problem.
    pub beta: f64,
    pub j: JSpec,
    pub f: SpaceTimeField,
    /// Interface flux; only used by the Signorini problem.
    pub g: SpaceTimeField,
    pub initial: InitialData,
    pub t_end: f64,
    pub steps: usize,
}

impl ProblemData {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if !(self.sigma1 > 0.0 && self.sigma2 > 0.0) || !self.sigma1.is_finite() || !self.sigma2.is_finite() {
            return bad(format!("conductivities must be positive, got {} and {}", self.sigma1, self.sigma2));
        }
        if !(self.alpha > 0.0) || !self.alpha.is_finite() {
            return bad(format!("alpha must be positive, got {}", self.alpha));
        }
        if !(self.beta >= 0.0) || !self.beta.is_finite() {
            return bad(format!("beta must be nonnegative, got {}", self.beta));
        }
        if !(self.t_end > 0.0) || !self.t_end.is_finite() {
            return bad(format!("final time must be positive, got {}", self.t_end));
        }
        if self.steps == 0 {
            return bad("at least one time step is required".into());
        }
        for (name, field) in [("f", &self.f), ("g", &self.g)] {
            if field.start() > 0.0 || field.end() < self.t_end {
                return bad(format!("{name} does not cover [0, {}]", self.t_end));
            }
        }
        self.j.validate()
    }

    pub fn h(&self) -> f64 {
        self.t_end / self.steps as f64
    }

    pub fn sigma_min(&self) -> f64 {
        self.sigma1.min(self.sigma2)
    }

    pub fn sigma_max(&self) -> f64 {
        self.sigma1.max(self.sigma2)
    }

    /// `α` is constant, so `α_# = α^# = α`.
    pub fn alpha_min(&self) -> f64 {
        self.alpha
    }

    pub fn alpha_max(&self) -> f64 {
        self.alpha
    }

    /// Time Lipschitz constant of `f`.
    pub fn d(&self) -> f64 {
        self.f.lipschitz()
    }

    /// Time Lipschitz constant of `g`.
    pub fn d2(&self) -> f64 {
        self.g.lipschitz()
    }
}

/// The initial DOF vector. Profiles are extended by zero off Γ; in bilateral mode the
/// profile is placed on side 2 so that the jump equals `S`.
pub fn initial_state(mesh: &BidomainMesh, dofs: &DofMap, initial: &InitialData) -> Result<Vec<f64>> {
    match initial {
        InitialData::State(u) => {
            if u.len() != dofs.n_dofs() {
                return Err(Error::InvalidArgument(format!(
                    "initial state has {} entries for {} DOFs",
                    u.len(),
                    dofs.n_dofs()
                )));
            }
            Ok(u.clone())
        }
        InitialData::Profile(p) => {
            let mut u = vec![0.0; dofs.n_dofs()];
            for i in dofs.interface() {
                let [x, y] = mesh.nodes()[i.node];
                u[i.side2] = p.eval(x, y);
            }
            Ok(u)
        }
    }
}

fn gradients(mesh: &BidomainMesh, e: usize) -> ([[f64; 2]; 3], f64) {
    let p = mesh.elements()[e].map(|k| mesh.nodes()[k]);
    let area = mesh.element_area(e);
    let grads = [0, 1, 2].map(|i| {
        let a = p[(i + 1) % 3];
        let b = p[(i + 2) % 3];
        [(a[1] - b[1]) / (2.0 * area), (b[0] - a[0]) / (2.0 * area)]
    });
    (grads, area)
}

fn finish(n: usize, triplets: impl IntoIterator<Item = (usize, usize, f64)>) -> SparseMatrix {
    let mut coo = CooMatrix::new(n, n);
    for (r, c, v) in triplets {
        coo.push(r, c, v);
    }
    CsrMatrix::from(&coo)
}

/// `∫ σ ∇u·∇v` with `σ = σ1` on Ω1, `σ2` on Ω2 and 1 in a layer.
pub fn assemble_stiffness(mesh: &BidomainMesh, dofs: &DofMap, sigma1: f64, sigma2: f64) -> Result<SparseMatrix> {
    if !(sigma1 > 0.0 && sigma2 > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "conductivities must be positive, got {sigma1} and {sigma2}"
        )));
    }
    let mut triplets = Vec::with_capacity(9 * mesh.elements().len());
    for e in 0..mesh.elements().len() {
        let sigma = match mesh.subdomains()[e] {
            Subdomain::Omega1 => sigma1,
            Subdomain::Omega2 => sigma2,
            Subdomain::Layer => 1.0,
        };
        let (g, area) = gradients(mesh, e);
        let ed = dofs.element_dofs(mesh, e);
        for a in 0..3 {
            for b in 0..3 {
                if let (Some(r), Some(c)) = (ed[a], ed[b]) {
                    triplets.push((r, c, sigma * area * (g[a][0] * g[b][0] + g[a][1] * g[b][1])));
                }
            }
        }
    }
    Ok(finish(dofs.n_dofs(), triplets))
}

/// Consistent `∫_{Ω1} u v`, the right-hand side of the Poincaré pencil.
pub fn assemble_omega1_mass(mesh: &BidomainMesh, dofs: &DofMap) -> SparseMatrix {
    let mut triplets = Vec::new();
    for e in 0..mesh.elements().len() {
        if mesh.subdomains()[e] != Subdomain::Omega1 {
            continue;
        }
        let area = mesh.element_area(e);
        let ed = dofs.element_dofs(mesh, e);
        for a in 0..3 {
            for b in 0..3 {
                if let (Some(r), Some(c)) = (ed[a], ed[b]) {
                    let m = if a == b { area / 6.0 } else { area / 12.0 };
                    triplets.push((r, c, m));
                }
            }
        }
    }
    finish(dofs.n_dofs(), triplets)
}

/// Lumped interface quadrature.
#[derive(Debug, Clone, PartialEq)]
pub struct InterfaceMass {
    /// `ℓ_k`: half the summed length of the interface edges at node `k`.
    pub lengths: Vec<f64>,
    /// `α ℓ_k`.
    pub weights: Vec<f64>,
    pub selector: Selector,
}

impl InterfaceMass {
    /// `selᵀ diag(weights) sel`.
    pub fn matrix(&self, n_dofs: usize) -> SparseMatrix {
        self.selector.weighted_gram(&self.weights, n_dofs)
    }

    /// `Σ w_k sel(v)_k²`.
    pub fn norm_sq(&self, v: &[f64]) -> f64 {
        self.selector
            .apply(v)
            .iter()
            .zip(&self.weights)
            .map(|(x, w)| w * x * x)
            .sum()
    }
}

pub fn assemble_interface_mass(mesh: &BidomainMesh, dofs: &DofMap, alpha: f64) -> Result<InterfaceMass> {
    if !(alpha > 0.0) {
        return Err(Error::InvalidArgument(format!("alpha must be positive, got {alpha}")));
    }
    let lengths = mesh.interface_node_lengths();
    let weights = lengths.iter().map(|l| alpha * l).collect();
    Ok(InterfaceMass {
        lengths,
        weights,
        selector: dofs.interface_selector(),
    })
}

/// `β ∫_Γ ∂_s u ∂_s v ds` as the P1 stiffness along the interface polyline.
pub fn assemble_tangential_stiffness(mesh: &BidomainMesh, dofs: &DofMap, beta: f64) -> Result<SparseMatrix> {
    if dofs.mode() != DofMode::Continuous {
        return Err(Error::Mode("tangential stiffness needs a continuous DOF map".into()));
    }
    if !(beta >= 0.0) {
        return Err(Error::InvalidArgument(format!("beta must be nonnegative, got {beta}")));
    }
    let mut triplets = Vec::new();
    if beta > 0.0 {
        for edge in mesh.interface_edges() {
            let k = beta / mesh.edge_length(edge.nodes);
            let [a, b] = edge.nodes.map(|n| dofs.dof(n, Side::One).expect("interface nodes carry DOFs"));
            triplets.extend([(a, a, k), (b, b, k), (a, b, -k), (b, a, -k)]);
        }
    }
    Ok(finish(dofs.n_dofs(), triplets))
}

/// `∫ f v dx` with `f` replaced by its nodal interpolant; layer elements carry no source.
pub fn assemble_load(mesh: &BidomainMesh, dofs: &DofMap, f: &SpaceTimeField, t: f64) -> Result<Vec<f64>> {
    check_field(mesh, f)?;
    let fv = f.eval(t)?;
    let mut load = vec![0.0; dofs.n_dofs()];
    for e in 0..mesh.elements().len() {
        if mesh.subdomains()[e] == Subdomain::Layer {
            continue;
        }
        let area = mesh.element_area(e);
        let nodes = mesh.elements()[e];
        let sum: f64 = nodes.iter().map(|&k| fv[k]).sum();
        for (a, d) in dofs.element_dofs(mesh, e).into_iter().enumerate() {
            if let Some(d) = d {
                // consistent mass row: area/12 · (2, 1, 1)
                load[d] += area / 12.0 * (sum + fv[nodes[a]]);
            }
        }
    }
    Ok(load)
}

/// Lumped `∫_Γ g v1 ds` on the side-1 DOFs.
pub fn assemble_interface_load(mesh: &BidomainMesh, dofs: &DofMap, g: &SpaceTimeField, t: f64) -> Result<Vec<f64>> {
    if dofs.mode() != DofMode::Bilateral {
        return Err(Error::Mode("the interface flux only enters the bilateral problem".into()));
    }
    check_field(mesh, g)?;
    let gv = g.eval(t)?;
    let mut load = vec![0.0; dofs.n_dofs()];
    for (i, l) in dofs.interface().iter().zip(mesh.interface_node_lengths()) {
        load[i.side1] += l * gv[i.node];
    }
    Ok(load)
}

fn check_field(mesh: &BidomainMesh, f: &SpaceTimeField) -> Result<()> {
    if f.n_nodes() != mesh.n_nodes() {
        return Err(Error::InvalidArgument(format!(
            "field has {} nodal values for {} nodes",
            f.n_nodes(),
            mesh.n_nodes()
        )));
    }
    Ok(())
}

/// `∫ ∇u·∇v + ∫_Γ [u][v]` with lumped jump mass: the norm on the bilateral space.
pub fn bilateral_energy_matrix(mesh: &BidomainMesh, dofs: &DofMap) -> Result<SparseMatrix> {
    if dofs.mode() != DofMode::Bilateral {
        return Err(Error::Mode("the jump norm needs a bilateral DOF map".into()));
    }
    let k = assemble_stiffness(mesh, dofs, 1.0, 1.0)?;
    let jump = assemble_interface_mass(mesh, dofs, 1.0)?.matrix(dofs.n_dofs());
    Ok(&k + &jump)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoincareEstimate {
    pub constant: f64,
    pub iterations: usize,
    /// Eigenvalue estimate after each iteration.
    pub trace: Vec<f64>,
}

/// Smallest `C` with `∫_{Ω1} v1² ≤ C (∫ |∇v|² + ∫_Γ [v]²)` over the discrete space.
pub fn poincare_constant(mesh: &BidomainMesh, dofs: &DofMap) -> Result<f64> {
    poincare_estimate(mesh, dofs, 1e-8, 10_000).map(|p| p.constant)
}

/// Inverse power iteration on the pencil `(K + JᵀℓJ) v = λ M_{Ω1} v`; `C = 1/λ_min`.
pub fn poincare_estimate(mesh: &BidomainMesh, dofs: &DofMap, tol: f64, max_iter: usize) -> Result<PoincareEstimate> {
    let k = bilateral_energy_matrix(mesh, dofs)?;
    let m = assemble_omega1_mass(mesh, dofs);
    let factor = SpdFactor::new(&k)?;
    let n = dofs.n_dofs();
    let mut v = vec![1.0; n];
    let mut trace = Vec::new();
    let mut lambda = f64::INFINITY;
    for it in 1..=max_iter {
        let w = factor.solve(&mat_vec(&m, &v));
        let mass = dot(&mat_vec(&m, &w), &w);
        if !(mass > 0.0) {
            return Err(Error::Numeric {
                message: "iterate has no mass on Ω1".into(),
                trace,
            });
        }
        let next = dot(&mat_vec(&k, &w), &w) / mass;
        let scale = mass.sqrt();
        v = w.into_iter().map(|x| x / scale).collect();
        trace.push(next);
        let converged = (lambda - next).abs() <= tol * next.abs();
        lambda = next;
        if converged {
            return Ok(PoincareEstimate {
                constant: 1.0 / lambda,
                iterations: it,
                trace,
            });
        }
    }
    Err(Error::Numeric {
        message: format!("inverse iteration did not converge in {max_iter} iterations"),
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{asymmetry, to_dense};
    use crate::mesh::{build_dof_map, build_inclusion_mesh, build_strip_mesh};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn constants_in_kernel_before_elimination() {
        let mesh = build_strip_mesh(3, 2, 4).unwrap();
        let dofs = DofMap::unconstrained(&mesh, DofMode::Continuous).unwrap();
        let k = assemble_stiffness(&mesh, &dofs, 2.0, 0.5).unwrap();
        let r = mat_vec(&k, &vec![1.0; dofs.n_dofs()]);
        assert!(r.iter().all(|x| x.abs() < 1e-12));
    }

    #[test]
    fn stiffness_linear_in_sigma() {
        let mesh = build_inclusion_mesh(4).unwrap();
        let dofs = build_dof_map(&mesh, DofMode::Bilateral).unwrap();
        let a = to_dense(&assemble_stiffness(&mesh, &dofs, 1.5, 0.3).unwrap());
        let b = to_dense(&assemble_stiffness(&mesh, &dofs, 3.0, 0.6).unwrap());
        assert!((b - 2.0 * a).amax() < 1e-12);
        assert!(matches!(assemble_stiffness(&mesh, &dofs, 0.0, 1.0), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn corner_diagonal_by_hand() {
        // φ = 1 − x on the lower triangle and 1 − y on the upper one: 0.5 + 0.5
        let mesh = build_strip_mesh(1, 1, 1).unwrap();
        let dofs = DofMap::unconstrained(&mesh, DofMode::Continuous).unwrap();
        let k = to_dense(&assemble_stiffness(&mesh, &dofs, 1.0, 1.0).unwrap());
        let corner = dofs.dof(0, Side::One).unwrap();
        assert!((k[(corner, corner)] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn symmetric_and_semidefinite() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mesh = build_inclusion_mesh(8).unwrap();
        let dofs = build_dof_map(&mesh, DofMode::Continuous).unwrap();
        let k = assemble_stiffness(&mesh, &dofs, 1.0, 4.0).unwrap();
        let t = assemble_tangential_stiffness(&mesh, &dofs, 0.7).unwrap();
        for a in [&k, &t] {
            assert!(asymmetry(a) <= 1e-12);
            for _ in 0..100 {
                let v: Vec<f64> = (0..dofs.n_dofs()).map(|_| rng.random_range(-1.0..1.0)).collect();
                assert!(dot(&mat_vec(a, &v), &v) >= -1e-10);
            }
        }
    }

    #[test]
    fn interface_weights() {
        let mesh = build_strip_mesh(1, 1, 2).unwrap();
        let dofs = build_dof_map(&mesh, DofMode::Continuous).unwrap();
        let im = assemble_interface_mass(&mesh, &dofs, 1.0).unwrap();
        assert_eq!(im.weights, vec![0.25, 0.5, 0.25]);
        let im2 = assemble_interface_mass(&mesh, &dofs, 2.0).unwrap();
        assert_eq!(im2.weights, vec![0.5, 1.0, 0.5]);
        let mesh = build_inclusion_mesh(12).unwrap();
        let dofs = build_dof_map(&mesh, DofMode::Bilateral).unwrap();
        let im = assemble_interface_mass(&mesh, &dofs, 0.3).unwrap();
        assert!((im.weights.iter().sum::<f64>() - 0.6).abs() < 1e-10);
    }

    #[test]
    fn lumped_quadrature_order() {
        // ∫_Γ e^y ds on the strip interface
        let exact = std::f64::consts::E - 1.0;
        let err = |ny: usize| {
            let mesh = build_strip_mesh(1, 1, ny).unwrap();
            let nodes = mesh.interface_nodes();
            let l = mesh.interface_node_lengths();
            let q: f64 = nodes.iter().zip(&l).map(|(&k, w)| w * mesh.nodes()[k][1].exp()).sum();
            (q - exact).abs()
        };
        let order = (err(8) / err(16)).log2();
        assert!(order >= 1.9, "order {order}");
    }

    #[test]
    fn tangential_chain() {
        let mesh = build_strip_mesh(1, 1, 2).unwrap();
        let dofs = DofMap::unconstrained(&mesh, DofMode::Continuous).unwrap();
        let t = to_dense(&assemble_tangential_stiffness(&mesh, &dofs, 1.0).unwrap());
        let ids: Vec<usize> = mesh.interface_nodes().iter().map(|&k| dofs.dof(k, Side::One).unwrap()).collect();
        let expected = [[2.0, -2.0, 0.0], [-2.0, 4.0, -2.0], [0.0, -2.0, 2.0]];
        for a in 0..3 {
            for b in 0..3 {
                assert!((t[(ids[a], ids[b])] - expected[a][b]).abs() < 1e-14);
            }
        }
        let zero = assemble_tangential_stiffness(&mesh, &dofs, 0.0).unwrap();
        assert_eq!(zero.nnz(), 0);
        let bil = build_dof_map(&mesh, DofMode::Bilateral).unwrap();
        assert!(matches!(assemble_tangential_stiffness(&mesh, &bil, 1.0), Err(Error::Mode(_))));
    }

    #[test]
    fn loads() {
        let mesh = build_strip_mesh(1, 1, 1).unwrap();
        let dofs = DofMap::unconstrained(&mesh, DofMode::Continuous).unwrap();
        let one = SourceProfile::Constant(1.0).sample(mesh.nodes(), 1.0).unwrap();
        let b = assemble_load(&mesh, &dofs, &one, 0.5).unwrap();
        assert!((b.iter().sum::<f64>() - 2.0).abs() < 1e-14);
        let zero = SpaceTimeField::zero(mesh.n_nodes(), 1.0);
        assert!(assemble_load(&mesh, &dofs, &zero, 0.3).unwrap().iter().all(|&x| x == 0.0));

        let lin = SourceProfile::SinXY(2.0).sample(mesh.nodes(), 2.0).unwrap();
        let mesh4 = build_strip_mesh(2, 2, 2).unwrap();
        let lin4 = SourceProfile::SinXY(2.0).sample(mesh4.nodes(), 2.0).unwrap();
        let dofs4 = build_dof_map(&mesh4, DofMode::Continuous).unwrap();
        let b0 = assemble_load(&mesh4, &dofs4, &lin4, 0.0).unwrap();
        let b2 = assemble_load(&mesh4, &dofs4, &lin4, 2.0).unwrap();
        let b1 = assemble_load(&mesh4, &dofs4, &lin4, 1.0).unwrap();
        for k in 0..b1.len() {
            assert!((b1[k] - 0.5 * (b0[k] + b2[k])).abs() < 1e-14);
        }
        assert!(matches!(assemble_load(&mesh, &dofs, &lin, 2.5), Err(Error::Range { .. })));
    }

    #[test]
    fn interface_load() {
        let mesh = build_inclusion_mesh(8).unwrap();
        let dofs = build_dof_map(&mesh, DofMode::Bilateral).unwrap();
        let g = SourceProfile::Constant(1.0).sample(mesh.nodes(), 1.0).unwrap();
        let gm = SourceProfile::Constant(-1.0).sample(mesh.nodes(), 1.0).unwrap();
        let a = assemble_interface_load(&mesh, &dofs, &g, 0.2).unwrap();
        let b = assemble_interface_load(&mesh, &dofs, &gm, 0.2).unwrap();
        assert!((a.iter().sum::<f64>() - 2.0).abs() < 1e-12);
        assert!(a.iter().zip(&b).all(|(x, y)| *x == -*y));
        for i in dofs.interface() {
            assert_eq!(a[i.side2], 0.0);
        }
        let zero = SpaceTimeField::zero(mesh.n_nodes(), 1.0);
        assert!(assemble_interface_load(&mesh, &dofs, &zero, 0.2).unwrap().iter().all(|&x| x == 0.0));
        let cont = build_dof_map(&mesh, DofMode::Continuous).unwrap();
        assert!(matches!(assemble_interface_load(&mesh, &cont, &g, 0.2), Err(Error::Mode(_))));
    }

    #[test]
    fn field_lipschitz() {
        let nodes = [[0.5, 0.5], [0.0, 0.0]];
        let f = SourceProfile::LinearT(3.0).sample(&nodes, 2.0).unwrap();
        assert!((f.lipschitz() - 3.0).abs() < 1e-14);
        assert_eq!(SourceProfile::Constant(4.0).sample(&nodes, 2.0).unwrap().lipschitz(), 0.0);
    }

    #[test]
    fn poincare_positive_and_converging() {
        let c: Vec<f64> = [8, 16]
            .iter()
            .map(|&n| {
                let mesh = build_inclusion_mesh(n).unwrap();
                let dofs = build_dof_map(&mesh, DofMode::Bilateral).unwrap();
                poincare_constant(&mesh, &dofs).unwrap()
            })
            .collect();
        assert!(c.iter().all(|&x| x > 0.0 && x.is_finite()));
        assert!((c[0] - c[1]).abs() <= 0.25 * c[1]);
    }

    #[test]
    fn poincare_reports_trace_on_cap() {
        let mesh = build_inclusion_mesh(4).unwrap();
        let dofs = build_dof_map(&mesh, DofMode::Bilateral).unwrap();
        match poincare_estimate(&mesh, &dofs, 1e-300, 3) {
            Err(Error::Numeric { trace, .. }) => assert_eq!(trace.len(), 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn jump_norm_has_trivial_kernel() {
        // ∇v = 0 and [v] = 0 with the outer Dirichlet condition leave only v = 0
        let mesh = build_inclusion_mesh(4).unwrap();
        let dofs = build_dof_map(&mesh, DofMode::Bilateral).unwrap();
        let k = bilateral_energy_matrix(&mesh, &dofs).unwrap();
        let eig = to_dense(&k).symmetric_eigen();
        assert!(eig.eigenvalues.min() > 1e-6);
    }

    #[test]
    fn initial_profile_extension() {
        let mesh = build_inclusion_mesh(8).unwrap();
        for mode in [DofMode::Continuous, DofMode::Bilateral] {
            let dofs = build_dof_map(&mesh, mode).unwrap();
            let u = initial_state(&mesh, &dofs, &InitialData::Profile(InitialProfile::Sin(0.7))).unwrap();
            let s = dofs.interface_selector().apply(&u);
            for (i, v) in dofs.interface().iter().zip(s) {
                let [x, y] = mesh.nodes()[i.node];
                assert!((v - InitialProfile::Sin(0.7).eval(x, y)).abs() < 1e-12);
            }
        }
    }
}
