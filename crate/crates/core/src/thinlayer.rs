//! Thin porous layer around the inclusion and its ε → 0 limit.
//!
//! The layer `S_ε` is a band of grid cells just outside the inner square, `εγ` wide on
//! each side (γ constant per side). It has unit conductivity and no source, and it carries
//! the interface dynamics spread over its volume:
//!
//! ```text
//! (α/(εγh)) ∫_{S_ε} (u^{i+1} − u^i)(v − u^{i+1}) + (1/(εγ)) ∫_{S_ε} j(v) − j(u^{i+1})
//! ```
//!
//! Both integrals are lumped onto layer nodes with weights `W_k = Σ_e (|e|/3)/(εγ)_e`.
//! As the band shrinks, the transverse layer average of the solution approaches the trace
//! of the Wentzell solution with `β = 0`.

use std::path::Path;

use crate::convex::{JSpec, Selector, ViOptions};
use crate::error::{Error, Result};
use crate::fem::{InitialData, ProblemData};
use crate::mesh::{build_dof_map, build_inclusion_grid, build_inclusion_mesh, BidomainMesh, DofMap, DofMode, Side, Subdomain};
use crate::rothe::{lumped_norm_sq, run_wentzell, series_distance, ProblemKind, RotheScheme, RotheTrajectory};

/// Inclusion mesh with a tagged layer band; sides ordered left, right, bottom, top.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerMesh {
    pub mesh: BidomainMesh,
    pub dofs: DofMap,
    pub n: usize,
    pub epsilon: f64,
    pub gamma: [f64; 4],
    /// Band width in cells per side.
    pub cells: [usize; 4],
    /// Layer nodes in ascending order and their lumped weights.
    pub layer_nodes: Vec<usize>,
    pub weights: Vec<f64>,
}

impl LayerMesh {
    /// Snapped band width `εγ` per side.
    pub fn widths(&self) -> [f64; 4] {
        self.cells.map(|c| c as f64 / self.n as f64)
    }

    pub fn layer_area(&self) -> f64 {
        (0..self.mesh.elements().len())
            .filter(|&e| self.mesh.subdomains()[e] == Subdomain::Layer)
            .map(|e| self.mesh.element_area(e))
            .sum()
    }

    /// Lumped `∫_{S_ε} w/(εγ) dx` for nodal values `w` over all mesh nodes.
    pub fn layer_integral(&self, w: &[f64]) -> f64 {
        self.layer_nodes.iter().zip(&self.weights).map(|(&k, c)| c * w[k]).sum()
    }
}

/// Builds the layer mesh; `εγ` is snapped to a whole number of cells on each side.
pub fn build_layer_mesh(n: usize, epsilon: f64, gamma: [f64; 4]) -> Result<LayerMesh> {
    if !(epsilon > 0.0) || gamma.iter().any(|g| !(*g > 0.0)) {
        return Err(Error::InvalidArgument("layer thickness parameters must be positive".into()));
    }
    if n == 0 || !n.is_multiple_of(4) {
        return Err(Error::InvalidArgument(format!(
            "inclusion mesh resolution must be a positive multiple of 4, got {n}"
        )));
    }
    let cells = gamma.map(|g| (epsilon * g * n as f64).round() as usize);
    if let Some(side) = cells.iter().position(|&c| c == 0) {
        return Err(Error::Geometry(format!(
            "band width {} on side {side} is below one cell at n = {n}",
            epsilon * gamma[side]
        )));
    }
    let mesh = build_inclusion_grid(n, cells)?;
    let dofs = build_dof_map(&mesh, DofMode::Continuous)?;
    let width = cells.map(|c| c as f64 / n as f64);

    let mut weight = vec![0.0; mesh.n_nodes()];
    let mut in_layer = vec![false; mesh.n_nodes()];
    for e in 0..mesh.elements().len() {
        if mesh.subdomains()[e] != Subdomain::Layer {
            continue;
        }
        let [cx, cy] = mesh.centroid(e);
        // corner cells take the width of the left or right side
        let w = if cx < 0.25 {
            width[0]
        } else if cx > 0.75 {
            width[1]
        } else if cy < 0.25 {
            width[2]
        } else {
            width[3]
        };
        let share = mesh.element_area(e) / 3.0 / w;
        for k in mesh.elements()[e] {
            weight[k] += share;
            in_layer[k] = true;
        }
    }
    let layer_nodes: Vec<usize> = (0..mesh.n_nodes()).filter(|&k| in_layer[k]).collect();
    let weights = layer_nodes.iter().map(|&k| weight[k]).collect();
    Ok(LayerMesh {
        mesh,
        dofs,
        n,
        epsilon,
        gamma,
        cells,
        layer_nodes,
        weights,
    })
}

/// Nodal values of a DOF vector; Dirichlet nodes read as zero.
fn nodal(dofs: &DofMap, n_nodes: usize, u: &[f64]) -> Vec<f64> {
    (0..n_nodes)
        .map(|k| dofs.dof(k, Side::One).map_or(0.0, |d| u[d]))
        .collect()
}

/// The initial state on the layer mesh: the profile, evaluated at the closest point of
/// the inner square, on every layer node; zero elsewhere.
pub fn layer_initial_state(layer: &LayerMesh, initial: &InitialData) -> Result<Vec<f64>> {
    match initial {
        InitialData::State(u) => {
            if u.len() != layer.dofs.n_dofs() {
                return Err(Error::InvalidArgument("initial state does not match the layer mesh".into()));
            }
            Ok(u.clone())
        }
        InitialData::Profile(p) => {
            let mut u = vec![0.0; layer.dofs.n_dofs()];
            for &k in &layer.layer_nodes {
                let [x, y] = layer.mesh.nodes()[k];
                let d = layer.dofs.dof(k, Side::One).expect("layer nodes are interior");
                u[d] = p.eval(x.clamp(0.25, 0.75), y.clamp(0.25, 0.75));
            }
            Ok(u)
        }
    }
}

fn check_eligible(data: &ProblemData) -> Result<()> {
    if !data.j.has_quadratic_growth() {
        return Err(Error::IneligibleFunctional(format!(
            "{} lacks the quadratic growth bound the layer limit needs",
            data.j.name()
        )));
    }
    if data.beta != 0.0 {
        return Err(Error::InvalidArgument("the layer problem has no surface diffusion; set beta = 0".into()));
    }
    Ok(())
}

/// Per-step scheme of the layer problem.
pub fn layer_scheme(data: &ProblemData, layer: &LayerMesh, options: ViOptions) -> Result<RotheScheme> {
    check_eligible(data)?;
    let selector = Selector::Trace(
        layer
            .layer_nodes
            .iter()
            .map(|&k| layer.dofs.dof(k, Side::One).expect("layer nodes are interior"))
            .collect(),
    );
    RotheScheme::assemble(
        ProblemKind::ThinLayer,
        &layer.mesh,
        &layer.dofs,
        data,
        selector,
        layer.layer_nodes.clone(),
        layer.weights.clone(),
        options,
    )
}

pub fn run_perturbed(data: &ProblemData, layer: &LayerMesh, options: ViOptions) -> Result<RotheTrajectory> {
    let scheme = layer_scheme(data, layer, options)?;
    scheme.run_from(layer_initial_state(layer, &data.initial)?)
}

/// Transverse average `(1/(εγ)) ∫ u dτ` across the band at each interface node, by the
/// trapezoid rule along the grid line normal to Γ. Corner nodes average both normals.
pub fn layer_average(layer: &LayerMesh, u: &[f64]) -> Result<Vec<f64>> {
    if u.len() != layer.dofs.n_dofs() {
        return Err(Error::InvalidArgument("state does not match the layer mesh".into()));
    }
    let values = nodal(&layer.dofs, layer.mesh.n_nodes(), u);
    let n = layer.n;
    let (lo, hi) = (n / 4, 3 * n / 4);
    let grid = layer.mesh.grid();
    let line = |i: usize, j: usize, di: isize, dj: isize, cells: usize| -> f64 {
        let at = |k: usize| {
            let ii = (i as isize + di * k as isize) as usize;
            let jj = (j as isize + dj * k as isize) as usize;
            values[grid.index(ii, jj)]
        };
        let inner: f64 = (1..cells).map(at).sum();
        (0.5 * at(0) + inner + 0.5 * at(cells)) / cells as f64
    };
    let [cl, cr, cb, ct] = layer.cells;
    let mut out = Vec::new();
    for &k in &layer.mesh.interface_nodes() {
        let (i, j) = (k % (n + 1), k / (n + 1));
        let mut sum = 0.0;
        let mut count = 0.0;
        if i == lo {
            sum += line(i, j, -1, 0, cl);
            count += 1.0;
        }
        if i == hi {
            sum += line(i, j, 1, 0, cr);
            count += 1.0;
        }
        if j == lo {
            sum += line(i, j, 0, -1, cb);
            count += 1.0;
        }
        if j == hi {
            sum += line(i, j, 0, 1, ct);
            count += 1.0;
        }
        out.push(sum / count);
    }
    Ok(out)
}

/// `|lumped ∫_{S_ε} w/(εγ) dx − lumped ∫_Γ w ds|` for a function `w(x, y)`.
pub fn layer_quadrature_error(layer: &LayerMesh, w: impl Fn(f64, f64) -> f64) -> f64 {
    let values: Vec<f64> = layer.mesh.nodes().iter().map(|p| w(p[0], p[1])).collect();
    let gamma: f64 = layer
        .mesh
        .interface_nodes()
        .iter()
        .zip(layer.mesh.interface_node_lengths())
        .map(|(&k, l)| l * values[k])
        .sum();
    (layer.layer_integral(&values) - gamma).abs()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThinLayerRow {
    pub epsilon: f64,
    pub band_width_cells: usize,
    /// `‖layer_average(u_ε) − trace(u)‖` in `L²(0,T; L²(Γ))`.
    pub distance: f64,
    /// `max_i (Σ_k W_k (u^i_k)²)^{1/2}`: the layer norm weighted by `1/(εγ)`.
    pub layer_norm_bound: f64,
}

#[derive(Debug, Clone)]
pub struct ThinLayerStudy {
    pub rows: Vec<ThinLayerRow>,
    pub reference: RotheTrajectory,
    pub trajectories: Vec<RotheTrajectory>,
}

impl ThinLayerStudy {
    pub fn write_csv(&self, dir: &Path) -> Result<()> {
        use std::io::Write;
        let mut w = std::io::BufWriter::new(std::fs::File::create(dir.join("thinlayer.csv"))?);
        writeln!(w, "epsilon,band_width_cells,distance_L2SigmaGamma,layer_norm_bound")?;
        for r in &self.rows {
            writeln!(
                w,
                "{:.16e},{},{:.16e},{:.16e}",
                r.epsilon, r.band_width_cells, r.distance, r.layer_norm_bound
            )?;
        }
        w.flush()?;
        for (k, t) in self.trajectories.iter().enumerate() {
            t.write_csv(dir, &format!("trajectory_eps{k}.csv"))?;
        }
        Ok(())
    }
}

/// Distance of the layer problem to the `β = 0` Wentzell solution for each `ε`.
pub fn convergence_study(
    data: &ProblemData,
    eps_list: &[f64],
    gamma: [f64; 4],
    n: usize,
    options: ViOptions,
) -> Result<ThinLayerStudy> {
    if eps_list.is_empty() || eps_list.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(Error::InvalidArgument("eps_list must be nonempty and strictly decreasing".into()));
    }
    check_eligible(data)?;
    let layers = eps_list
        .iter()
        .map(|&eps| build_layer_mesh(n, eps, gamma))
        .collect::<Result<Vec<_>>>()?;
    let reference = reference_run(data, n, options)?;
    let mut rows = Vec::with_capacity(layers.len());
    let mut trajectories = Vec::with_capacity(layers.len());
    for (eps, layer) in eps_list.iter().zip(&layers) {
        let (row, traj) = study_member(data, *eps, layer, &reference, options)?;
        rows.push(row);
        trajectories.push(traj);
    }
    Ok(ThinLayerStudy {
        rows,
        reference,
        trajectories,
    })
}

/// The `β = 0` Wentzell run on the plain inclusion mesh of resolution `n`.
pub fn reference_run(data: &ProblemData, n: usize, options: ViOptions) -> Result<RotheTrajectory> {
    let mesh = build_inclusion_mesh(n)?;
    let dofs = build_dof_map(&mesh, DofMode::Continuous)?;
    let mut limit = data.clone();
    limit.beta = 0.0;
    run_wentzell(&mesh, &dofs, &limit, options)
}

/// One row of [`convergence_study`], given the reference run.
pub fn study_member(
    data: &ProblemData,
    epsilon: f64,
    layer: &LayerMesh,
    reference: &RotheTrajectory,
    options: ViOptions,
) -> Result<(ThinLayerRow, RotheTrajectory)> {
    let traj = run_perturbed(data, layer, options)?;
    if traj.m() != reference.m() {
        return Err(Error::InvalidArgument("reference and layer runs use different time grids".into()));
    }
    let averages = traj
        .steps
        .iter()
        .map(|u| layer_average(layer, u))
        .collect::<Result<Vec<_>>>()?;
    let traces = reference.interface_series();
    let distance = series_distance(&averages, &traces, &reference.lengths, traj.h())?;
    let layer_norm_bound = traj
        .steps
        .iter()
        .map(|u| lumped_norm_sq(&traj.selector.apply(u), &traj.lengths).sqrt())
        .fold(0.0, f64::max);
    Ok((
        ThinLayerRow {
            epsilon,
            band_width_cells: *layer.cells.iter().max().unwrap(),
            distance,
            layer_norm_bound,
        },
        traj,
    ))
}

/// Whether a functional may be used in the layer study.
pub fn is_eligible(j: &JSpec) -> bool {
    j.has_quadratic_growth()
}
