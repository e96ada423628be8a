//! Structured bidomain triangulations and degree-of-freedom maps.
//!
//! Two geometries are supported:
//!
//! * `Strip`: Ω = [0,2]×[0,1] with Ω1 = [0,1]×[0,1]. The interface Γ = {1}×(0,1) is
//!   relatively open, Dirichlet data sit on the left edge of Ω1 and the right edge of Ω2,
//!   and the top/bottom edges are Neumann.
//! * `Inclusion`: Ω = [0,1]² with the inner square Ω1 = [0.25,0.75]². Γ = ∂Ω1 is a closed
//!   loop and the whole outer boundary is Dirichlet.
//!
//! Every grid cell is split along its lower-left/upper-right diagonal into two
//! counter-clockwise linear triangles.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::convex::Selector;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Subdomain {
    Omega1,
    Omega2,
    Layer,
}

impl Subdomain {
    pub fn name(self) -> &'static str {
        match self {
            Subdomain::Omega1 => "omega1",
            Subdomain::Omega2 => "omega2",
            Subdomain::Layer => "layer",
        }
    }

    /// Which trace of an interface node an element of this subdomain sees.
    pub fn side(self) -> Side {
        match self {
            Subdomain::Omega1 => Side::One,
            Subdomain::Omega2 | Subdomain::Layer => Side::Two,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Geometry {
    Strip,
    Inclusion,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InterfaceEdge {
    pub nodes: [usize; 2],
    /// Unit normal pointing from Ω1 into its neighbour.
    pub normal: [f64; 2],
}

/// Tensor grid underlying every mesh built here; node `(i, j)` has index `j * xs.len() + i`.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Grid {
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
}

impl Grid {
    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.xs.len() + i
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BidomainMesh {
    nodes: Vec<[f64; 2]>,
    elements: Vec<[usize; 3]>,
    subdomain: Vec<Subdomain>,
    interface_edges: Vec<InterfaceEdge>,
    dirichlet_edges: Vec<[usize; 2]>,
    neumann_edges: Vec<[usize; 2]>,
    geometry: Geometry,
    grid: Grid,
}

/// Strip mesh with `nx1` cells across Ω1, `nx2` across Ω2 and `ny` vertically.
pub fn build_strip_mesh(nx1: usize, nx2: usize, ny: usize) -> Result<BidomainMesh> {
    if nx1 == 0 || nx2 == 0 || ny == 0 {
        return Err(Error::InvalidArgument(format!(
            "strip mesh needs positive cell counts, got ({nx1}, {nx2}, {ny})"
        )));
    }
    let mut xs: Vec<f64> = (0..=nx1).map(|i| i as f64 / nx1 as f64).collect();
    xs.extend((1..=nx2).map(|i| 1.0 + i as f64 / nx2 as f64));
    let ys: Vec<f64> = (0..=ny).map(|j| j as f64 / ny as f64).collect();
    let grid = Grid { xs, ys };
    let ncx = nx1 + nx2;

    let (nodes, elements, subdomain) = triangulate(&grid, |i, _| {
        if i < nx1 {
            Subdomain::Omega1
        } else {
            Subdomain::Omega2
        }
    });

    let interface_edges = (0..ny)
        .map(|j| InterfaceEdge {
            nodes: [grid.index(nx1, j), grid.index(nx1, j + 1)],
            normal: [1.0, 0.0],
        })
        .collect();
    let mut dirichlet_edges = Vec::with_capacity(2 * ny);
    for j in 0..ny {
        dirichlet_edges.push([grid.index(0, j), grid.index(0, j + 1)]);
    }
    for j in 0..ny {
        dirichlet_edges.push([grid.index(ncx, j), grid.index(ncx, j + 1)]);
    }
    let mut neumann_edges = Vec::with_capacity(2 * ncx);
    for i in 0..ncx {
        neumann_edges.push([grid.index(i, 0), grid.index(i + 1, 0)]);
    }
    for i in 0..ncx {
        neumann_edges.push([grid.index(i, ny), grid.index(i + 1, ny)]);
    }

    Ok(BidomainMesh {
        nodes,
        elements,
        subdomain,
        interface_edges,
        dirichlet_edges,
        neumann_edges,
        geometry: Geometry::Strip,
        grid,
    })
}

/// Inclusion mesh with `n` cells per unit length; `n` must be a positive multiple of 4.
pub fn build_inclusion_mesh(n: usize) -> Result<BidomainMesh> {
    build_inclusion_grid(n, [0; 4])
}

/// Inclusion grid whose cells within `band` cells (left, right, bottom, top) of the inner
/// square are tagged as a layer.
pub(crate) fn build_inclusion_grid(n: usize, band: [usize; 4]) -> Result<BidomainMesh> {
    if n == 0 || !n.is_multiple_of(4) {
        return Err(Error::InvalidArgument(format!(
            "inclusion mesh resolution must be a positive multiple of 4, got {n}"
        )));
    }
    let lo = n / 4;
    let hi = 3 * n / 4;
    let [bl, br, bb, bt] = band;
    if bl >= lo || bb >= lo || br >= n - hi || bt >= n - hi {
        return Err(Error::Geometry(format!(
            "layer of {band:?} cells does not fit strictly inside the domain at n = {n}"
        )));
    }
    let coords: Vec<f64> = (0..=n).map(|i| i as f64 / n as f64).collect();
    let grid = Grid {
        xs: coords.clone(),
        ys: coords,
    };

    let (nodes, elements, subdomain) = triangulate(&grid, |i, j| {
        let inner = (lo..hi).contains(&i) && (lo..hi).contains(&j);
        let banded = (lo - bl..hi + br).contains(&i) && (lo - bb..hi + bt).contains(&j);
        if inner {
            Subdomain::Omega1
        } else if banded {
            Subdomain::Layer
        } else {
            Subdomain::Omega2
        }
    });

    // counter-clockwise loop around the inner square
    let mut interface_edges = Vec::with_capacity(4 * (hi - lo));
    for i in lo..hi {
        interface_edges.push(InterfaceEdge {
            nodes: [grid.index(i, lo), grid.index(i + 1, lo)],
            normal: [0.0, -1.0],
        });
    }
    for j in lo..hi {
        interface_edges.push(InterfaceEdge {
            nodes: [grid.index(hi, j), grid.index(hi, j + 1)],
            normal: [1.0, 0.0],
        });
    }
    for i in (lo..hi).rev() {
        interface_edges.push(InterfaceEdge {
            nodes: [grid.index(i + 1, hi), grid.index(i, hi)],
            normal: [0.0, 1.0],
        });
    }
    for j in (lo..hi).rev() {
        interface_edges.push(InterfaceEdge {
            nodes: [grid.index(lo, j + 1), grid.index(lo, j)],
            normal: [-1.0, 0.0],
        });
    }

    let mut dirichlet_edges = Vec::with_capacity(4 * n);
    for i in 0..n {
        dirichlet_edges.push([grid.index(i, 0), grid.index(i + 1, 0)]);
    }
    for j in 0..n {
        dirichlet_edges.push([grid.index(n, j), grid.index(n, j + 1)]);
    }
    for i in (0..n).rev() {
        dirichlet_edges.push([grid.index(i + 1, n), grid.index(i, n)]);
    }
    for j in (0..n).rev() {
        dirichlet_edges.push([grid.index(0, j + 1), grid.index(0, j)]);
    }

    Ok(BidomainMesh {
        nodes,
        elements,
        subdomain,
        interface_edges,
        dirichlet_edges,
        neumann_edges: Vec::new(),
        geometry: Geometry::Inclusion,
        grid,
    })
}

fn triangulate(
    grid: &Grid,
    tag: impl Fn(usize, usize) -> Subdomain,
) -> (Vec<[f64; 2]>, Vec<[usize; 3]>, Vec<Subdomain>) {
    let (nx, ny) = (grid.xs.len(), grid.ys.len());
    let nodes = (0..ny)
        .flat_map(|j| grid.xs.iter().map(move |&x| (x, j)))
        .map(|(x, j)| [x, grid.ys[j]])
        .collect();
    let mut elements = Vec::with_capacity(2 * (nx - 1) * (ny - 1));
    let mut subdomain = Vec::with_capacity(elements.capacity());
    for j in 0..ny - 1 {
        for i in 0..nx - 1 {
            let n00 = grid.index(i, j);
            let n10 = grid.index(i + 1, j);
            let n01 = grid.index(i, j + 1);
            let n11 = grid.index(i + 1, j + 1);
            let t = tag(i, j);
            elements.push([n00, n10, n11]);
            elements.push([n00, n11, n01]);
            subdomain.push(t);
            subdomain.push(t);
        }
    }
    (nodes, elements, subdomain)
}

impl BidomainMesh {
    pub fn nodes(&self) -> &[[f64; 2]] {
        &self.nodes
    }

    pub fn elements(&self) -> &[[usize; 3]] {
        &self.elements
    }

    pub fn subdomains(&self) -> &[Subdomain] {
        &self.subdomain
    }

    pub fn interface_edges(&self) -> &[InterfaceEdge] {
        &self.interface_edges
    }

    pub fn dirichlet_edges(&self) -> &[[usize; 2]] {
        &self.dirichlet_edges
    }

    pub fn neumann_edges(&self) -> &[[usize; 2]] {
        &self.neumann_edges
    }

    pub fn geometry(&self) -> Geometry {
        self.geometry
    }

    pub(crate) fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    /// Signed area of element `e` (positive for counter-clockwise vertices).
    pub fn element_area(&self, e: usize) -> f64 {
        let [a, b, c] = self.elements[e].map(|k| self.nodes[k]);
        0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))
    }

    pub fn edge_length(&self, edge: [usize; 2]) -> f64 {
        let [a, b] = edge.map(|k| self.nodes[k]);
        (b[0] - a[0]).hypot(b[1] - a[1])
    }

    pub fn interface_length(&self) -> f64 {
        self.interface_edges
            .iter()
            .map(|e| self.edge_length(e.nodes))
            .sum()
    }

    /// Analytic measure of Ω.
    pub fn domain_area(&self) -> f64 {
        match self.geometry {
            Geometry::Strip => 2.0,
            Geometry::Inclusion => 1.0,
        }
    }

    /// Interface nodes in ascending index order.
    pub fn interface_nodes(&self) -> Vec<usize> {
        let mut nodes: Vec<usize> = self
            .interface_edges
            .iter()
            .flat_map(|e| e.nodes)
            .collect();
        nodes.sort_unstable();
        nodes.dedup();
        nodes
    }

    pub fn dirichlet_mask(&self) -> Vec<bool> {
        let mut mask = vec![false; self.nodes.len()];
        for e in &self.dirichlet_edges {
            mask[e[0]] = true;
            mask[e[1]] = true;
        }
        mask
    }

    /// Half the summed length of the interface edges adjacent to each interface node,
    /// aligned with [`BidomainMesh::interface_nodes`].
    pub fn interface_node_lengths(&self) -> Vec<f64> {
        let nodes = self.interface_nodes();
        let position: HashMap<usize, usize> =
            nodes.iter().enumerate().map(|(k, &n)| (n, k)).collect();
        let mut lengths = vec![0.0; nodes.len()];
        for e in &self.interface_edges {
            let half = 0.5 * self.edge_length(e.nodes);
            for n in e.nodes {
                lengths[position[&n]] += half;
            }
        }
        lengths
    }

    /// Full structural audit; returns the first violated invariant.
    pub fn audit(&self) -> Result<()> {
        for e in 0..self.elements.len() {
            if self.element_area(e) <= 0.0 {
                return Err(Error::Geometry(format!("element {e} has nonpositive area")));
            }
        }

        let mut edge_elements: HashMap<[usize; 2], Vec<usize>> = HashMap::new();
        for (e, tri) in self.elements.iter().enumerate() {
            for k in 0..3 {
                edge_elements
                    .entry(edge_key([tri[k], tri[(k + 1) % 3]]))
                    .or_default()
                    .push(e);
            }
        }

        let mut boundary: Vec<[usize; 2]> = self
            .dirichlet_edges
            .iter()
            .chain(&self.neumann_edges)
            .map(|&e| edge_key(e))
            .collect();
        boundary.sort_unstable();
        let before = boundary.len();
        boundary.dedup();
        if boundary.len() != before {
            return Err(Error::Geometry("duplicate boundary edge".into()));
        }
        for (edge, owners) in &edge_elements {
            let on_boundary = boundary.binary_search(edge).is_ok();
            match (owners.len(), on_boundary) {
                (1, true) | (2, false) => {}
                (count, _) => {
                    return Err(Error::Geometry(format!(
                        "edge {edge:?} is shared by {count} elements (boundary: {on_boundary})"
                    )))
                }
            }
        }
        if boundary
            .iter()
            .any(|e| !edge_elements.contains_key(e))
        {
            return Err(Error::Geometry("boundary edge not owned by any element".into()));
        }

        for ie in &self.interface_edges {
            let owners = edge_elements.get(&edge_key(ie.nodes)).ok_or_else(|| {
                Error::Geometry(format!("interface edge {:?} not in the mesh", ie.nodes))
            })?;
            let tags: Vec<Subdomain> = owners.iter().map(|&e| self.subdomain[e]).collect();
            let ok = tags.len() == 2
                && tags.contains(&Subdomain::Omega1)
                && tags.iter().any(|&t| t != Subdomain::Omega1);
            if !ok {
                return Err(Error::Geometry(format!(
                    "interface edge {:?} bounded by {tags:?}",
                    ie.nodes
                )));
            }
            let n = ie.normal;
            if ((n[0] * n[0] + n[1] * n[1]).sqrt() - 1.0).abs() > 1e-12 {
                return Err(Error::Geometry("interface normal is not a unit vector".into()));
            }
            // the normal must point away from the Ω1 element's centroid
            let inner = owners
                .iter()
                .copied()
                .find(|&e| self.subdomain[e] == Subdomain::Omega1)
                .expect("checked above");
            let c = self.centroid(inner);
            let p = self.nodes[ie.nodes[0]];
            if (p[0] - c[0]) * n[0] + (p[1] - c[1]) * n[1] <= 0.0 {
                return Err(Error::Geometry(format!(
                    "interface normal at {:?} points into Ω1",
                    ie.nodes
                )));
            }
        }

        let dirichlet_length: f64 = self
            .dirichlet_edges
            .iter()
            .map(|&e| self.edge_length(e))
            .sum();
        if dirichlet_length <= 0.0 {
            return Err(Error::Geometry("Dirichlet boundary has zero measure".into()));
        }

        let omega1_nodes: Vec<bool> = {
            let mut mask = vec![false; self.nodes.len()];
            for (tri, t) in self.elements.iter().zip(&self.subdomain) {
                if *t == Subdomain::Omega1 {
                    tri.iter().for_each(|&k| mask[k] = true);
                }
            }
            mask
        };
        let outer_touches_omega1 = self
            .dirichlet_edges
            .iter()
            .chain(&self.neumann_edges)
            .any(|e| {
                edge_elements[&edge_key(*e)]
                    .iter()
                    .any(|&el| self.subdomain[el] == Subdomain::Omega1)
            });
        match self.geometry {
            Geometry::Strip => {
                let gamma1 = self.dirichlet_edges.iter().any(|e| {
                    edge_elements[&edge_key(*e)]
                        .iter()
                        .any(|&el| self.subdomain[el] == Subdomain::Omega1)
                });
                if !gamma1 {
                    return Err(Error::Geometry("strip geometry without Dirichlet part on Ω1".into()));
                }
            }
            Geometry::Inclusion => {
                if outer_touches_omega1 {
                    return Err(Error::Geometry("inclusion Ω1 touches the outer boundary".into()));
                }
                let outer: Vec<bool> = {
                    let mut mask = vec![false; self.nodes.len()];
                    for e in self.dirichlet_edges.iter().chain(&self.neumann_edges) {
                        mask[e[0]] = true;
                        mask[e[1]] = true;
                    }
                    mask
                };
                if (0..self.nodes.len()).any(|k| omega1_nodes[k] && outer[k]) {
                    return Err(Error::Geometry("∂Ω1 intersects ∂Ω".into()));
                }
                let mut degree: HashMap<usize, usize> = HashMap::new();
                for ie in &self.interface_edges {
                    for n in ie.nodes {
                        *degree.entry(n).or_default() += 1;
                    }
                }
                if degree.values().any(|&d| d != 2) {
                    return Err(Error::Geometry("interface edges do not form a closed loop".into()));
                }
                // consecutive edges chain head to tail
                let m = self.interface_edges.len();
                for k in 0..m {
                    if self.interface_edges[k].nodes[1] != self.interface_edges[(k + 1) % m].nodes[0] {
                        return Err(Error::Geometry("interface loop is not ordered".into()));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn centroid(&self, e: usize) -> [f64; 2] {
        let [a, b, c] = self.elements[e].map(|k| self.nodes[k]);
        [(a[0] + b[0] + c[0]) / 3.0, (a[1] + b[1] + c[1]) / 3.0]
    }

    /// Writes `nodes.csv` and `elements.csv` into `dir`.
    pub fn write_csv(&self, dir: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(dir.join("nodes.csv"))?);
        writeln!(w, "id,x,y")?;
        for (k, p) in self.nodes.iter().enumerate() {
            writeln!(w, "{k},{:.16e},{:.16e}", p[0], p[1])?;
        }
        w.flush()?;
        let mut w = BufWriter::new(File::create(dir.join("elements.csv"))?);
        writeln!(w, "id,n0,n1,n2,subdomain")?;
        for (k, (tri, t)) in self.elements.iter().zip(&self.subdomain).enumerate() {
            writeln!(w, "{k},{},{},{},{}", tri[0], tri[1], tri[2], t.name())?;
        }
        w.flush()?;
        Ok(())
    }
}

fn edge_key(e: [usize; 2]) -> [usize; 2] {
    [e[0].min(e[1]), e[0].max(e[1])]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DofMode {
    /// One trace per interface node: u1 = u2 on Γ.
    Continuous,
    /// Interface nodes carry a side-1 and a side-2 value; the jump is side2 − side1.
    Bilateral,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    One,
    Two,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum NodeDofs {
    Fixed,
    Single(usize),
    Split(usize, usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InterfaceDof {
    pub node: usize,
    pub side1: usize,
    /// Equal to `side1` in continuous mode.
    pub side2: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DofMap {
    mode: DofMode,
    node_dofs: Vec<NodeDofs>,
    owners: Vec<(usize, Side)>,
    interface: Vec<InterfaceDof>,
}

/// DOF map with Dirichlet nodes eliminated.
pub fn build_dof_map(mesh: &BidomainMesh, mode: DofMode) -> Result<DofMap> {
    DofMap::build(mesh, mode, true)
}

impl DofMap {
    /// Like [`build_dof_map`] but keeps the Dirichlet nodes as unknowns.
    pub fn unconstrained(mesh: &BidomainMesh, mode: DofMode) -> Result<DofMap> {
        DofMap::build(mesh, mode, false)
    }

    fn build(mesh: &BidomainMesh, mode: DofMode, eliminate: bool) -> Result<DofMap> {
        let dirichlet = mesh.dirichlet_mask();
        let interface = mesh.interface_nodes();
        let mut is_interface = vec![false; mesh.n_nodes()];
        for &k in &interface {
            if eliminate && dirichlet[k] {
                return Err(Error::Geometry(format!("interface node {k} lies on the Dirichlet boundary")));
            }
            is_interface[k] = true;
        }
        let mut node_dofs = Vec::with_capacity(mesh.n_nodes());
        let mut owners = Vec::with_capacity(mesh.n_nodes() + interface.len());
        for k in 0..mesh.n_nodes() {
            let next = owners.len();
            if eliminate && dirichlet[k] {
                node_dofs.push(NodeDofs::Fixed);
            } else if mode == DofMode::Bilateral && is_interface[k] {
                node_dofs.push(NodeDofs::Split(next, next + 1));
                owners.push((k, Side::One));
                owners.push((k, Side::Two));
            } else {
                node_dofs.push(NodeDofs::Single(next));
                owners.push((k, Side::One));
            }
        }
        let interface = interface
            .into_iter()
            .map(|node| match node_dofs[node] {
                NodeDofs::Single(d) => InterfaceDof {
                    node,
                    side1: d,
                    side2: d,
                },
                NodeDofs::Split(a, b) => InterfaceDof {
                    node,
                    side1: a,
                    side2: b,
                },
                NodeDofs::Fixed => unreachable!("interface nodes are never eliminated"),
            })
            .collect();
        Ok(DofMap {
            mode,
            node_dofs,
            owners,
            interface,
        })
    }

    /// Renumbers DOFs: old DOF `d` becomes `perm[d]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<DofMap> {
        let n = self.n_dofs();
        let mut seen = vec![false; n];
        if perm.len() != n || perm.iter().any(|&p| p >= n || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::InvalidArgument("DOF permutation is not a bijection".into()));
        }
        let node_dofs = self
            .node_dofs
            .iter()
            .map(|nd| match *nd {
                NodeDofs::Fixed => NodeDofs::Fixed,
                NodeDofs::Single(d) => NodeDofs::Single(perm[d]),
                NodeDofs::Split(a, b) => NodeDofs::Split(perm[a], perm[b]),
            })
            .collect();
        let mut owners = vec![(0, Side::One); n];
        for (d, &owner) in self.owners.iter().enumerate() {
            owners[perm[d]] = owner;
        }
        let interface = self
            .interface
            .iter()
            .map(|i| InterfaceDof {
                node: i.node,
                side1: perm[i.side1],
                side2: perm[i.side2],
            })
            .collect();
        Ok(DofMap {
            mode: self.mode,
            node_dofs,
            owners,
            interface,
        })
    }

    pub fn mode(&self) -> DofMode {
        self.mode
    }

    pub fn n_dofs(&self) -> usize {
        self.owners.len()
    }

    pub fn dof(&self, node: usize, side: Side) -> Option<usize> {
        match (self.node_dofs[node], side) {
            (NodeDofs::Fixed, _) => None,
            (NodeDofs::Single(d), _) => Some(d),
            (NodeDofs::Split(a, _), Side::One) => Some(a),
            (NodeDofs::Split(_, b), Side::Two) => Some(b),
        }
    }

    pub fn element_dofs(&self, mesh: &BidomainMesh, e: usize) -> [Option<usize>; 3] {
        let side = mesh.subdomains()[e].side();
        mesh.elements()[e].map(|k| self.dof(k, side))
    }

    /// The (node, side) pair that owns `dof`.
    pub fn owner(&self, dof: usize) -> (usize, Side) {
        self.owners[dof]
    }

    /// Interface node records in ascending node order.
    pub fn interface(&self) -> &[InterfaceDof] {
        &self.interface
    }

    /// Trace selector (continuous) or jump selector (bilateral) over the interface nodes.
    pub fn interface_selector(&self) -> Selector {
        match self.mode {
            DofMode::Continuous => Selector::Trace(self.interface.iter().map(|i| i.side1).collect()),
            DofMode::Bilateral => {
                Selector::Jump(self.interface.iter().map(|i| (i.side1, i.side2)).collect())
            }
        }
    }

    /// Scatters per-node values into a DOF vector, writing `side1` and `side2` values.
    pub fn from_nodal(&self, side1: &[f64], side2: &[f64]) -> Vec<f64> {
        self.owners
            .iter()
            .map(|&(node, side)| match side {
                Side::One => side1[node],
                Side::Two => side2[node],
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn shared_by(mesh: &BidomainMesh, edge: [usize; 2]) -> Vec<Subdomain> {
        let key = edge_key(edge);
        mesh.elements()
            .iter()
            .enumerate()
            .filter(|(_, t)| (0..3).any(|k| edge_key([t[k], t[(k + 1) % 3]]) == key))
            .map(|(e, _)| mesh.subdomains()[e])
            .collect()
    }

    #[test]
    fn minimal_strip() {
        let mesh = build_strip_mesh(1, 1, 1).unwrap();
        assert_eq!(mesh.elements().len(), 4);
        assert_eq!(mesh.interface_edges().len(), 1);
        assert_eq!(mesh.interface_edges()[0].normal, [1.0, 0.0]);
        assert!((mesh.interface_length() - 1.0).abs() < 1e-15);
        mesh.audit().unwrap();
    }

    #[test]
    fn strip_counts_and_interface_length() {
        let mesh = build_strip_mesh(2, 2, 2).unwrap();
        assert_eq!(mesh.elements().len(), 16);
        assert!((mesh.interface_length() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn strip_interface_adjacency_exhaustive() {
        let mesh = build_strip_mesh(3, 2, 4).unwrap();
        for ie in mesh.interface_edges() {
            let mut tags = shared_by(&mesh, ie.nodes);
            tags.sort_by_key(|t| t.name());
            assert_eq!(tags, vec![Subdomain::Omega1, Subdomain::Omega2]);
        }
    }

    #[test]
    fn zero_counts_rejected() {
        assert!(matches!(build_strip_mesh(0, 1, 1), Err(Error::InvalidArgument(_))));
        assert!(matches!(build_strip_mesh(1, 1, 0), Err(Error::InvalidArgument(_))));
        assert!(matches!(build_inclusion_mesh(6), Err(Error::InvalidArgument(_))));
        assert!(matches!(build_inclusion_mesh(0), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn inclusion_counts() {
        let mesh = build_inclusion_mesh(4).unwrap();
        assert_eq!(mesh.elements().len(), 32);
        assert_eq!(mesh.interface_edges().len(), 8);
        mesh.audit().unwrap();
        for n in [4, 8, 12, 16] {
            let mesh = build_inclusion_mesh(n).unwrap();
            assert!((mesh.interface_length() - 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn inclusion_is_interior() {
        let mesh = build_inclusion_mesh(8).unwrap();
        let mut outer = vec![false; mesh.n_nodes()];
        for e in mesh.dirichlet_edges() {
            outer[e[0]] = true;
            outer[e[1]] = true;
        }
        for (tri, t) in mesh.elements().iter().zip(mesh.subdomains()) {
            if *t == Subdomain::Omega1 {
                assert!(tri.iter().all(|&k| !outer[k]));
            }
        }
    }

    #[test]
    fn audits_and_areas() {
        let meshes = [
            build_strip_mesh(1, 1, 1).unwrap(),
            build_strip_mesh(3, 2, 4).unwrap(),
            build_strip_mesh(5, 3, 2).unwrap(),
            build_inclusion_mesh(4).unwrap(),
            build_inclusion_mesh(16).unwrap(),
        ];
        for mesh in &meshes {
            mesh.audit().unwrap();
            let area: f64 = (0..mesh.elements().len()).map(|e| mesh.element_area(e)).sum();
            assert!((area - mesh.domain_area()).abs() < 1e-12);
        }
    }

    #[test]
    fn audit_catches_broken_normal() {
        let mut mesh = build_strip_mesh(2, 2, 2).unwrap();
        mesh.interface_edges[0].normal = [-1.0, 0.0];
        assert!(mesh.audit().is_err());
    }

    #[test]
    fn dof_modes_on_minimal_strip() {
        let mesh = build_strip_mesh(1, 1, 1).unwrap();
        let cont = build_dof_map(&mesh, DofMode::Continuous).unwrap();
        let bil = build_dof_map(&mesh, DofMode::Bilateral).unwrap();
        assert_eq!(cont.interface().len(), 2);
        for i in cont.interface() {
            assert_eq!(i.side1, i.side2);
        }
        for i in bil.interface() {
            assert_ne!(i.side1, i.side2);
        }
        // 6 nodes, 4 on the Dirichlet edges
        assert_eq!(cont.n_dofs(), 2);
        assert_eq!(bil.n_dofs(), 4);
    }

    #[test]
    fn inclusion_dof_census() {
        let mesh = build_inclusion_mesh(4).unwrap();
        let cont = build_dof_map(&mesh, DofMode::Continuous).unwrap();
        let bil = build_dof_map(&mesh, DofMode::Bilateral).unwrap();
        let free = mesh.dirichlet_mask().iter().filter(|&&d| !d).count();
        assert_eq!(cont.n_dofs(), free);
        assert_eq!(bil.n_dofs() - cont.n_dofs(), 8);
    }

    #[test]
    fn bilateral_sides_are_separated() {
        let mesh = build_inclusion_mesh(8).unwrap();
        let dofs = build_dof_map(&mesh, DofMode::Bilateral).unwrap();
        let side1: Vec<usize> = dofs.interface().iter().map(|i| i.side1).collect();
        let side2: Vec<usize> = dofs.interface().iter().map(|i| i.side2).collect();
        for e in 0..mesh.elements().len() {
            for d in dofs.element_dofs(&mesh, e).into_iter().flatten() {
                match mesh.subdomains()[e] {
                    Subdomain::Omega1 => assert!(!side2.contains(&d)),
                    _ => assert!(!side1.contains(&d)),
                }
            }
        }
    }

    #[test]
    fn dof_owner_round_trip() {
        for mode in [DofMode::Continuous, DofMode::Bilateral] {
            let mesh = build_strip_mesh(3, 2, 4).unwrap();
            let dofs = build_dof_map(&mesh, mode).unwrap();
            for d in 0..dofs.n_dofs() {
                let (node, side) = dofs.owner(d);
                assert_eq!(dofs.dof(node, side), Some(d));
            }
            let dirichlet = mesh.dirichlet_mask();
            for k in 0..mesh.n_nodes() {
                assert_eq!(dofs.dof(k, Side::One).is_none(), dirichlet[k]);
            }
        }
    }

    #[test]
    fn permutation_keeps_owners() {
        let mesh = build_inclusion_mesh(4).unwrap();
        let dofs = build_dof_map(&mesh, DofMode::Bilateral).unwrap();
        let n = dofs.n_dofs();
        let perm: Vec<usize> = (0..n).map(|d| (d * 7 + 3) % n).collect();
        let p = dofs.permuted(&perm).unwrap();
        for d in 0..n {
            assert_eq!(p.owner(perm[d]), dofs.owner(d));
        }
        assert!(dofs.permuted(&vec![0; n]).is_err());
    }
}
