//! Convex interface functionals and the variational-inequality solver.
//!
//! Every per-step problem has the form
//!
//! ```text
//! minimize  E(v) = ½ vᵀAv − bᵀv + Σ_k w_k · j(sel(v)_k)
//! ```
//!
//! with `A` symmetric positive definite and `sel` either the trace of selected DOFs or
//! the jump `v[side2] − v[side1]` at interface nodes. [`ViSolver`] eliminates the DOFs
//! the selector does not touch (they enter `E` quadratically), then runs proximal
//! Gauss–Seidel on the remaining dense interface system. For the jump selector the
//! interface coordinates are `(v[side1], jump)` so that `j` acts on single coordinates.

use nalgebra::DMatrix;
use nalgebra_sparse::{CooMatrix, CsrMatrix};

use crate::error::{Error, Result};
use crate::linalg::{dot, mat_vec, SparseMatrix, SpdFactor};

/// Catalog of admissible interface functionals: convex, lower semicontinuous,
/// nonnegative and vanishing at zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum JSpec {
    Zero,
    /// `λ|x|`
    AbsVal { lambda: f64 },
    /// `λ max(x, 0)`; its subdifferential is a scaled Heaviside graph.
    PositivePart { lambda: f64 },
    /// `c x²`
    Quadratic { c: f64 },
    /// 0 on `[a, b]`, +∞ outside.
    IntervalIndicator { a: f64, b: f64 },
}

impl JSpec {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            JSpec::Zero => true,
            JSpec::AbsVal { lambda } | JSpec::PositivePart { lambda } => lambda > 0.0 && lambda.is_finite(),
            JSpec::Quadratic { c } => c > 0.0 && c.is_finite(),
            JSpec::IntervalIndicator { a, b } => a <= 0.0 && 0.0 <= b,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("invalid interface functional {self:?}")))
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            JSpec::Zero => "zero",
            JSpec::AbsVal { .. } => "absval",
            JSpec::PositivePart { .. } => "positive_part",
            JSpec::Quadratic { .. } => "quadratic",
            JSpec::IntervalIndicator { .. } => "interval_indicator",
        }
    }

    /// `j(x)`; `f64::INFINITY` outside the effective domain.
    pub fn value(&self, x: f64) -> f64 {
        match *self {
            JSpec::Zero => 0.0,
            JSpec::AbsVal { lambda } => lambda * x.abs(),
            JSpec::PositivePart { lambda } => lambda * x.max(0.0),
            JSpec::Quadratic { c } => c * x * x,
            JSpec::IntervalIndicator { a, b } => {
                let eps = interval_slack(a, b);
                if (a - eps..=b + eps).contains(&x) {
                    0.0
                } else {
                    f64::INFINITY
                }
            }
        }
    }

    /// The minimizer of `½(v − x)² + w·j(v)`.
    pub fn prox(&self, x: f64, w: f64) -> f64 {
        debug_assert!(w > 0.0);
        match *self {
            JSpec::Zero => x,
            JSpec::AbsVal { lambda } => {
                let t = w * lambda;
                if x > t {
                    x - t
                } else if x < -t {
                    x + t
                } else {
                    0.0
                }
            }
            JSpec::PositivePart { lambda } => {
                let t = w * lambda;
                if x > t {
                    x - t
                } else if x < 0.0 {
                    x
                } else {
                    0.0
                }
            }
            JSpec::Quadratic { c } => x / (1.0 + 2.0 * w * c),
            JSpec::IntervalIndicator { a, b } => x.clamp(a, b),
        }
    }

    /// Subdifferential at `x` as a closed interval, `None` outside the domain.
    pub fn subdifferential(&self, x: f64) -> Option<(f64, f64)> {
        let inf = f64::INFINITY;
        Some(match *self {
            JSpec::Zero => (0.0, 0.0),
            JSpec::AbsVal { lambda } => {
                if x > 0.0 {
                    (lambda, lambda)
                } else if x < 0.0 {
                    (-lambda, -lambda)
                } else {
                    (-lambda, lambda)
                }
            }
            JSpec::PositivePart { lambda } => {
                if x > 0.0 {
                    (lambda, lambda)
                } else if x < 0.0 {
                    (0.0, 0.0)
                } else {
                    (0.0, lambda)
                }
            }
            JSpec::Quadratic { c } => (2.0 * c * x, 2.0 * c * x),
            JSpec::IntervalIndicator { a, b } => {
                let eps = interval_slack(a, b);
                if x < a - eps || x > b + eps {
                    return None;
                }
                (
                    if x <= a + eps { -inf } else { 0.0 },
                    if x >= b - eps { inf } else { 0.0 },
                )
            }
        })
    }

    /// One-sided directional derivative `j'(x; d)`.
    pub fn directional_derivative(&self, x: f64, d: f64) -> f64 {
        match self.subdifferential(x) {
            None => f64::INFINITY,
            Some(_) if d == 0.0 => 0.0,
            Some((lo, hi)) => {
                if d > 0.0 {
                    d * hi
                } else {
                    d * lo
                }
            }
        }
    }

    /// The piece of `j` that is active at `x`.
    fn branch(&self, x: f64) -> Branch {
        let smooth = |slope: f64| Branch::Smooth { slope, curvature: 0.0 };
        match *self {
            JSpec::Zero => smooth(0.0),
            JSpec::AbsVal { lambda } => {
                if x == 0.0 {
                    Branch::Fixed(0.0)
                } else {
                    smooth(lambda.copysign(x))
                }
            }
            JSpec::PositivePart { lambda } => {
                if x > 0.0 {
                    smooth(lambda)
                } else if x < 0.0 {
                    smooth(0.0)
                } else {
                    Branch::Fixed(0.0)
                }
            }
            JSpec::Quadratic { c } => Branch::Smooth { slope: 0.0, curvature: 2.0 * c },
            JSpec::IntervalIndicator { a, b } => {
                let eps = interval_slack(a, b);
                if x <= a + eps {
                    Branch::Fixed(a)
                } else if x >= b - eps {
                    Branch::Fixed(b)
                } else {
                    smooth(0.0)
                }
            }
        }
    }

    /// Whether `j(d) ≤ C(d² + 1)` holds for some constant `C`.
    pub fn has_quadratic_growth(&self) -> bool {
        !matches!(self, JSpec::IntervalIndicator { .. })
    }
}

/// Local form of `j`: pinned at a kink, or `slope·x + ½ curvature·x²` nearby.
#[derive(Debug, Clone, Copy, PartialEq)]
enum Branch {
    Fixed(f64),
    Smooth { slope: f64, curvature: f64 },
}

impl Branch {
    fn scaled(self, w: f64) -> Branch {
        match self {
            Branch::Fixed(v) => Branch::Fixed(v),
            Branch::Smooth { slope, curvature } => Branch::Smooth {
                slope: w * slope,
                curvature: w * curvature,
            },
        }
    }
}

const MAX_POLISHES: usize = 3;

/// Rounding allowance at the ends of an indicator interval: a jump rebuilt from clamped
/// solver coordinates may land a few ulps outside.
fn interval_slack(a: f64, b: f64) -> f64 {
    1e-12 * (1.0 + a.abs().max(b.abs()))
}

/// Maps a DOF vector to one scalar per interface node.
#[derive(Debug, Clone, PartialEq)]
pub enum Selector {
    /// `sel(v)_k = v[dofs[k]]`
    Trace(Vec<usize>),
    /// `sel(v)_k = v[side2] − v[side1]` for `pairs[k] = (side1, side2)`
    Jump(Vec<(usize, usize)>),
}

impl Selector {
    pub fn len(&self) -> usize {
        match self {
            Selector::Trace(d) => d.len(),
            Selector::Jump(p) => p.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        match self {
            Selector::Trace(d) => d.iter().map(|&i| v[i]).collect(),
            Selector::Jump(p) => p.iter().map(|&(a, b)| v[b] - v[a]).collect(),
        }
    }

    /// `selᵀ y`: spreads per-node values back onto DOFs.
    pub fn transpose_apply(&self, y: &[f64], n: usize) -> Vec<f64> {
        let mut out = vec![0.0; n];
        match self {
            Selector::Trace(d) => d.iter().zip(y).for_each(|(&i, &v)| out[i] += v),
            Selector::Jump(p) => p.iter().zip(y).for_each(|(&(a, b), &v)| {
                out[a] -= v;
                out[b] += v;
            }),
        }
        out
    }

    /// Selected DOFs; for jumps all side-1 DOFs first, then all side-2 DOFs.
    fn dofs(&self) -> Vec<usize> {
        match self {
            Selector::Trace(d) => d.clone(),
            Selector::Jump(p) => p.iter().map(|x| x.0).chain(p.iter().map(|x| x.1)).collect(),
        }
    }

    /// `selᵀ diag(w) sel` as a sparse matrix.
    pub fn weighted_gram(&self, w: &[f64], n: usize) -> SparseMatrix {
        let mut coo = CooMatrix::new(n, n);
        match self {
            Selector::Trace(d) => d.iter().zip(w).for_each(|(&i, &wk)| coo.push(i, i, wk)),
            Selector::Jump(p) => p.iter().zip(w).for_each(|(&(a, b), &wk)| {
                coo.push(a, a, wk);
                coo.push(b, b, wk);
                coo.push(a, b, -wk);
                coo.push(b, a, -wk);
            }),
        }
        CsrMatrix::from(&coo)
    }
}

/// `E(v) = ½vᵀAv − bᵀv + Σ w_k j(sel(v)_k)`.
pub fn vi_energy(a: &SparseMatrix, b: &[f64], weights: &[f64], selector: &Selector, j: &JSpec, v: &[f64]) -> f64 {
    let quad = 0.5 * dot(&mat_vec(a, v), v) - dot(b, v);
    let nonsmooth: f64 = selector
        .apply(v)
        .iter()
        .zip(weights)
        .map(|(&x, &w)| w * j.value(x))
        .sum();
    quad + nonsmooth
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ViOptions {
    /// Relative energy stagnation over a sweep (and relative coordinate change).
    pub tol: f64,
    /// Sweep cap; `None` means `max(50 · n_dofs, 5000)`.
    pub max_sweeps: Option<usize>,
}

impl Default for ViOptions {
    fn default() -> Self {
        ViOptions {
            tol: 1e-10,
            max_sweeps: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ViSolution {
    pub v: Vec<f64>,
    /// Energy after each sweep, starting with the initial iterate.
    pub energy_trace: Vec<f64>,
    pub sweeps: usize,
}

/// Factorized form of one VI operator; reusable across right-hand sides.
pub struct ViSolver {
    n: usize,
    selector: Selector,
    weights: Vec<f64>,
    free: Vec<usize>,
    selected: Vec<usize>,
    /// Rows of `A` restricted to (selected row, free column).
    a_if: Vec<Vec<(usize, f64)>>,
    free_factor: Option<SpdFactor>,
    /// `A_FF⁻¹ A_FI`
    coupling: DMatrix<f64>,
    /// Schur complement in solver coordinates.
    reduced: DMatrix<f64>,
}

impl ViSolver {
    pub fn new(a: &SparseMatrix, weights: &[f64], selector: &Selector) -> Result<ViSolver> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(Error::InvalidArgument("VI matrix is not square".into()));
        }
        if weights.len() != selector.len() {
            return Err(Error::InvalidArgument(format!(
                "{} weights for {} selected values",
                weights.len(),
                selector.len()
            )));
        }
        if weights.iter().any(|&w| !(w > 0.0)) {
            return Err(Error::InvalidArgument("interface weights must be positive".into()));
        }
        let selected = selector.dofs();
        let mut position = vec![usize::MAX; n];
        for (k, &d) in selected.iter().enumerate() {
            if d >= n || position[d] != usize::MAX {
                return Err(Error::InvalidArgument(format!("selector DOF {d} is out of range or repeated")));
            }
            position[d] = k;
        }
        let free: Vec<usize> = (0..n).filter(|&d| position[d] == usize::MAX).collect();
        let mut free_pos = vec![usize::MAX; n];
        for (k, &d) in free.iter().enumerate() {
            free_pos[d] = k;
        }

        let ni = selected.len();
        let nf = free.len();
        let mut a_ff = CooMatrix::new(nf, nf);
        let mut a_fi = DMatrix::zeros(nf, ni);
        let mut a_ii = DMatrix::zeros(ni, ni);
        let mut a_if = vec![Vec::new(); ni];
        for (r, row) in a.row_iter().enumerate() {
            for (&c, &v) in row.col_indices().iter().zip(row.values()) {
                match (free_pos[r], free_pos[c]) {
                    (usize::MAX, usize::MAX) => a_ii[(position[r], position[c])] += v,
                    (usize::MAX, fc) => a_if[position[r]].push((fc, v)),
                    (fr, usize::MAX) => a_fi[(fr, position[c])] += v,
                    (fr, fc) => a_ff.push(fr, fc, v),
                }
            }
        }

        let (free_factor, coupling) = if nf > 0 {
            let factor = SpdFactor::new(&CsrMatrix::from(&a_ff))?;
            let x = factor.solve_many(&a_fi);
            (Some(factor), x)
        } else {
            (None, DMatrix::zeros(0, ni))
        };

        let mut schur = a_ii;
        for (i, row) in a_if.iter().enumerate() {
            for &(f, v) in row {
                for c in 0..ni {
                    schur[(i, c)] -= v * coupling[(f, c)];
                }
            }
        }
        let schur: DMatrix<f64> = (&schur + schur.transpose()) * 0.5;

        let reduced = match selector {
            Selector::Trace(_) => schur,
            Selector::Jump(p) => {
                let k = p.len();
                let s11 = schur.view((0, 0), (k, k));
                let s12 = schur.view((0, k), (k, k));
                let s21 = schur.view((k, 0), (k, k));
                let s22 = schur.view((k, k), (k, k));
                let mut r = DMatrix::zeros(2 * k, 2 * k);
                r.view_mut((0, 0), (k, k)).copy_from(&(s11 + s12 + s21 + s22));
                r.view_mut((0, k), (k, k)).copy_from(&(s12 + s22));
                r.view_mut((k, 0), (k, k)).copy_from(&(s21 + s22));
                r.view_mut((k, k), (k, k)).copy_from(&s22);
                r
            }
        };
        if let Some(i) = (0..reduced.nrows()).find(|&i| !(reduced[(i, i)] > 0.0)) {
            return Err(Error::numeric(format!(
                "nonpositive pivot {:e} at interface coordinate {i}: matrix is not positive definite",
                reduced[(i, i)]
            )));
        }

        Ok(ViSolver {
            n,
            selector: selector.clone(),
            weights: weights.to_vec(),
            free,
            selected,
            a_if,
            free_factor,
            coupling,
            reduced,
        })
    }

    pub fn n_dofs(&self) -> usize {
        self.n
    }

    /// Weight and `j`-carrying flag of each solver coordinate.
    fn nonsmooth_weight(&self, i: usize) -> Option<f64> {
        match &self.selector {
            Selector::Trace(_) => Some(self.weights[i]),
            Selector::Jump(p) => i.checked_sub(p.len()).map(|k| self.weights[k]),
        }
    }

    fn to_coords(&self, v_sel: &[f64]) -> Vec<f64> {
        match &self.selector {
            Selector::Trace(_) => v_sel.to_vec(),
            Selector::Jump(p) => {
                let k = p.len();
                let mut y = v_sel[..k].to_vec();
                y.extend((0..k).map(|i| v_sel[k + i] - v_sel[i]));
                y
            }
        }
    }

    fn from_coords(&self, y: &[f64]) -> Vec<f64> {
        match &self.selector {
            Selector::Trace(_) => y.to_vec(),
            Selector::Jump(p) => {
                let k = p.len();
                let mut v = y[..k].to_vec();
                v.extend((0..k).map(|i| y[i] + y[k + i]));
                v
            }
        }
    }

    fn reduced_energy(&self, y: &[f64], rhs: &[f64], j: &JSpec) -> f64 {
        let s = &self.reduced;
        let mut e = 0.0;
        for c in 0..y.len() {
            let col = s.column(c);
            let sy: f64 = col.iter().zip(y).map(|(a, b)| a * b).sum();
            e += 0.5 * sy * y[c] - rhs[c] * y[c];
            if let Some(w) = self.nonsmooth_weight(c) {
                e += w * j.value(y[c]);
            }
        }
        e
    }

    /// Exact minimization over the face of the current iterate: coordinates at a kink stay
    /// fixed, the rest solve the linear system of their smooth branch. Accepted only if
    /// every coordinate stays on its branch and the energy does not increase.
    fn polish(&self, y: &[f64], rhs: &[f64], j: &JSpec, energy: f64) -> Option<(Vec<f64>, f64)> {
        let branches: Vec<Branch> = (0..y.len())
            .map(|i| match self.nonsmooth_weight(i) {
                Some(w) => j.branch(y[i]).scaled(w),
                None => Branch::Smooth { slope: 0.0, curvature: 0.0 },
            })
            .collect();
        let free: Vec<usize> = (0..y.len()).filter(|&i| matches!(branches[i], Branch::Smooth { .. })).collect();
        if free.is_empty() {
            return None;
        }
        let s = &self.reduced;
        let mut z = y.to_vec();
        let mut m = DMatrix::zeros(free.len(), free.len());
        let mut r = nalgebra::DVector::zeros(free.len());
        for (a, &i) in free.iter().enumerate() {
            let Branch::Smooth { slope, curvature } = branches[i] else { unreachable!() };
            r[a] = rhs[i] - slope;
            for (c, &k) in free.iter().enumerate() {
                m[(a, c)] = s[(i, k)];
            }
            m[(a, a)] += curvature;
            for (k, b) in branches.iter().enumerate() {
                if let Branch::Fixed(v) = *b {
                    r[a] -= s[(i, k)] * v;
                }
            }
        }
        let x = m.cholesky()?.solve(&r);
        for (a, &i) in free.iter().enumerate() {
            z[i] = x[a];
        }
        for (i, b) in branches.iter().enumerate() {
            if let Branch::Fixed(v) = *b {
                z[i] = v;
            }
            if let Some(w) = self.nonsmooth_weight(i) {
                if j.branch(z[i]).scaled(w) != *b {
                    return None;
                }
            }
        }
        let e = self.reduced_energy(&z, rhs, j);
        (e <= energy + 1e-14 * (1.0 + energy.abs())).then_some((z, e))
    }

    /// Minimizes the energy for right-hand side `b`, starting from `initial` (or zero).
    pub fn solve(&self, b: &[f64], j: &JSpec, initial: Option<&[f64]>, opts: &ViOptions) -> Result<ViSolution> {
        j.validate()?;
        if b.len() != self.n || initial.is_some_and(|v| v.len() != self.n) {
            return Err(Error::InvalidArgument("vector length does not match the VI matrix".into()));
        }
        if !(opts.tol > 0.0) {
            return Err(Error::InvalidArgument("solver tolerance must be positive".into()));
        }
        let max_sweeps = opts.max_sweeps.unwrap_or((50 * self.n).max(5000));

        let b_free: Vec<f64> = self.free.iter().map(|&d| b[d]).collect();
        let c = match &self.free_factor {
            Some(f) => f.solve(&b_free),
            None => Vec::new(),
        };
        let offset = -0.5 * dot(&b_free, &c);
        let mut b_sel: Vec<f64> = self.selected.iter().map(|&d| b[d]).collect();
        for (i, row) in self.a_if.iter().enumerate() {
            b_sel[i] -= row.iter().map(|&(f, v)| v * c[f]).sum::<f64>();
        }
        let rhs = match &self.selector {
            Selector::Trace(_) => b_sel,
            Selector::Jump(p) => {
                let k = p.len();
                let mut r: Vec<f64> = (0..k).map(|i| b_sel[i] + b_sel[k + i]).collect();
                r.extend_from_slice(&b_sel[k..]);
                r
            }
        };

        let mut y = match initial {
            Some(v) => self.to_coords(&self.selected.iter().map(|&d| v[d]).collect::<Vec<_>>()),
            None => vec![0.0; self.selected.len()],
        };
        for (i, yi) in y.iter_mut().enumerate() {
            if self.nonsmooth_weight(i).is_some() && !j.value(*yi).is_finite() {
                *yi = j.prox(*yi, 1.0);
            }
        }

        let s = &self.reduced;
        let mut energy = self.reduced_energy(&y, &rhs, j);
        let mut trace = vec![energy + offset];
        let mut sweeps = 0;
        let mut polishes = 0;
        loop {
            if sweeps >= max_sweeps {
                return Err(Error::NonConvergence {
                    sweeps,
                    energy_trace: trace,
                });
            }
            sweeps += 1;
            let mut max_step: f64 = 0.0;
            for i in 0..y.len() {
                let col = s.column(i);
                let d = col[i];
                let sy: f64 = col.iter().zip(&y).map(|(a, b)| a * b).sum();
                let r = rhs[i] - sy + d * y[i];
                let old = y[i];
                let new = match self.nonsmooth_weight(i) {
                    Some(w) => j.prox(r / d, w / d),
                    None => r / d,
                };
                #[cfg(debug_assertions)]
                {
                    let wj = self.nonsmooth_weight(i).map_or(0.0, |w| w * (j.value(new) - j.value(old)));
                    let change = 0.5 * d * (new * new - old * old) - r * (new - old) + wj;
                    let scale = 1.0 + d * (new * new + old * old) + r.abs() * (new.abs() + old.abs());
                    debug_assert!(
                        change <= 1e-12 * scale,
                        "coordinate update increased the energy by {change:e}"
                    );
                }
                y[i] = new;
                max_step = max_step.max((new - old).abs());
            }
            let next = self.reduced_energy(&y, &rhs, j);
            trace.push(next + offset);
            let decrease = energy - next;
            energy = next;
            let y_scale = y.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
            if decrease <= opts.tol * (1.0 + energy.abs()) && max_step <= opts.tol * (1.0 + y_scale) {
                if polishes == MAX_POLISHES {
                    break;
                }
                polishes += 1;
                match self.polish(&y, &rhs, j, energy) {
                    Some((z, e)) => {
                        y = z;
                        energy = e;
                        trace.push(e + offset);
                    }
                    None => break,
                }
            }
        }

        let v_sel = self.from_coords(&y);
        let mut v = vec![0.0; self.n];
        for (k, &d) in self.selected.iter().enumerate() {
            v[d] = v_sel[k];
        }
        for (f, &d) in self.free.iter().enumerate() {
            let coupled: f64 = (0..v_sel.len()).map(|k| self.coupling[(f, k)] * v_sel[k]).sum();
            v[d] = c[f] - coupled;
        }
        Ok(ViSolution {
            v,
            energy_trace: trace,
            sweeps,
        })
    }
}

/// One-shot convenience wrapper around [`ViSolver`].
pub fn solve_vi(
    a: &SparseMatrix,
    b: &[f64],
    weights: &[f64],
    selector: &Selector,
    j: &JSpec,
    tol: f64,
    max_sweeps: Option<usize>,
) -> Result<ViSolution> {
    ViSolver::new(a, weights, selector)?.solve(b, j, None, &ViOptions { tol, max_sweeps })
}

/// Grid-search minimizer of the VI energy for systems of at most three DOFs.
///
/// The search is exhaustive on a coarse lattice over `range` and then repeatedly
/// exhaustive on a ±20-point window of a ten times finer lattice around the incumbent,
/// down to `step`. Every lattice point is a multiple of `step` away from `range.0`.
pub fn brute_force_vi(
    a: &SparseMatrix,
    b: &[f64],
    weights: &[f64],
    selector: &Selector,
    j: &JSpec,
    range: (f64, f64),
    step: f64,
) -> Result<Vec<f64>> {
    let n = a.nrows();
    if n == 0 || n > 3 {
        return Err(Error::UnsupportedSize(format!("brute force supports 1 to 3 DOFs, got {n}")));
    }
    let (lo, hi) = range;
    if !(step > 0.0) || !(hi > lo) {
        return Err(Error::InvalidArgument("invalid grid".into()));
    }
    let dense = crate::linalg::to_dense(a);
    let energy = |v: &[f64]| -> f64 {
        let mut e = 0.0;
        for r in 0..n {
            let av: f64 = (0..n).map(|c| dense[(r, c)] * v[c]).sum();
            e += 0.5 * av * v[r] - b[r] * v[r];
        }
        e + selector
            .apply(v)
            .iter()
            .zip(weights)
            .map(|(&x, &w)| w * j.value(x))
            .sum::<f64>()
    };

    let total = ((hi - lo) / step).round() as i64;
    let mut stride: i64 = 1;
    while total / stride > 40 {
        stride *= 10;
    }
    // lattice indices of the incumbent; starts at the centre with a window covering all
    let mut best = vec![total / 2; n];
    let mut half_width = total;
    loop {
        let mut best_e = f64::INFINITY;
        let mut best_idx = best.clone();
        let count = (2 * half_width / stride + 1) as usize;
        let mut idx = vec![0usize; n];
        let mut v = vec![0.0; n];
        'grid: loop {
            let mut valid = true;
            let mut point = vec![0i64; n];
            for d in 0..n {
                let k = best[d] - (half_width / stride) * stride + idx[d] as i64 * stride;
                if k < 0 || k > total {
                    valid = false;
                }
                point[d] = k;
                v[d] = lo + k as f64 * step;
            }
            if valid {
                let e = energy(&v);
                if e < best_e {
                    best_e = e;
                    best_idx = point;
                }
            }
            for d in 0..n {
                idx[d] += 1;
                if idx[d] < count {
                    continue 'grid;
                }
                idx[d] = 0;
            }
            break;
        }
        if !best_e.is_finite() {
            return Err(Error::numeric("no grid point has finite energy"));
        }
        best = best_idx;
        if stride == 1 {
            break;
        }
        stride /= 10;
        half_width = 20 * stride;
    }
    Ok(best.iter().map(|&k| lo + k as f64 * step).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn catalog() -> Vec<JSpec> {
        vec![
            JSpec::Zero,
            JSpec::AbsVal { lambda: 1.3 },
            JSpec::PositivePart { lambda: 0.7 },
            JSpec::Quadratic { c: 0.5 },
            JSpec::IntervalIndicator { a: -0.4, b: 0.9 },
        ]
    }

    fn dense_to_sparse(d: &DMatrix<f64>) -> SparseMatrix {
        CsrMatrix::from(&CooMatrix::from(d))
    }

    /// Grid-search oracle for the scalar prox.
    fn prox_by_grid(j: &JSpec, x: f64, w: f64) -> f64 {
        let mut best = (f64::INFINITY, 0.0);
        let mut k = -500_000i64;
        while k <= 500_000 {
            let v = k as f64 * 1e-5;
            let e = 0.5 * (v - x) * (v - x) + w * j.value(v);
            if e < best.0 {
                best = (e, v);
            }
            k += 1;
        }
        best.1
    }

    #[test]
    fn values() {
        assert_eq!(JSpec::Zero.value(5.0), 0.0);
        assert_eq!(JSpec::AbsVal { lambda: 2.0 }.value(-3.0), 6.0);
        let pp = JSpec::PositivePart { lambda: 1.0 };
        assert_eq!(pp.value(-3.0), 0.0);
        assert_eq!(pp.value(2.0), 2.0);
        assert!(JSpec::IntervalIndicator { a: -1.0, b: 1.0 }.value(2.0).is_infinite());
    }

    #[test]
    fn prox_matches_grid_search() {
        let x = prox_by_grid(&JSpec::AbsVal { lambda: 1.0 }, 3.0, 1.0);
        assert!((x - 2.0).abs() < 1e-5);
        assert!((JSpec::AbsVal { lambda: 1.0 }.prox(3.0, 1.0) - 2.0).abs() < 1e-15);
        let q = JSpec::Quadratic { c: 0.5 };
        assert!((prox_by_grid(&q, 1.0, 1.0) - 0.5).abs() < 1e-5);
        assert!((q.prox(1.0, 1.0) - 0.5).abs() < 1e-15);
        for x in [-2.0, 3.0, 1.5, 0.0] {
            assert_eq!(JSpec::Zero.prox(x, 0.7), x);
        }
    }

    #[test]
    fn functional_axioms() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for j in catalog() {
            assert_eq!(j.value(0.0), 0.0);
            for _ in 0..1000 {
                let x: f64 = rng.random_range(-5.0..5.0);
                let y: f64 = rng.random_range(-5.0..5.0);
                assert!(j.value(x) >= 0.0);
                let mid = j.value(0.5 * (x + y));
                let avg = 0.5 * (j.value(x) + j.value(y));
                assert!(mid <= avg + 1e-12, "{j:?} not midpoint convex at {x}, {y}");
            }
        }
    }

    #[test]
    fn prox_nonexpansive_and_optimal() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for j in catalog() {
            for _ in 0..1000 {
                let x: f64 = rng.random_range(-5.0..5.0);
                let y: f64 = rng.random_range(-5.0..5.0);
                let w: f64 = rng.random_range(0.05..3.0);
                let (px, py) = (j.prox(x, w), j.prox(y, w));
                assert!((px - py).abs() <= (x - y).abs() + 1e-15);
                let (lo, hi) = j.subdifferential(px).expect("prox lands in the domain");
                let g = (x - px) / w;
                assert!(g >= lo - 1e-10 && g <= hi + 1e-10, "{j:?}: {g} not in [{lo}, {hi}]");
            }
        }
    }

    #[test]
    fn absval_inclusion_explicit() {
        let j = JSpec::AbsVal { lambda: 0.8 };
        for (x, w) in [(0.3, 1.0), (2.0, 0.5), (-4.0, 2.0)] {
            let p = j.prox(x, w);
            if p == 0.0 {
                assert!((x - p).abs() <= w * 0.8 + 1e-10);
            } else {
                assert!(((x - p) / w - 0.8 * p.signum()).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn growth_flag() {
        assert!(catalog()[..4].iter().all(|j| j.has_quadratic_growth()));
        assert!(!JSpec::IntervalIndicator { a: -1.0, b: 1.0 }.has_quadratic_growth());
    }

    #[test]
    fn one_dof_absval() {
        let a = dense_to_sparse(&DMatrix::from_element(1, 1, 2.0));
        let sel = Selector::Trace(vec![0]);
        let j = JSpec::AbsVal { lambda: 1.0 };
        let sol = solve_vi(&a, &[3.0], &[1.0], &sel, &j, 1e-12, None).unwrap();
        assert!((sol.v[0] - 1.0).abs() < 1e-12);
        let bf = brute_force_vi(&a, &[3.0], &[1.0], &sel, &j, (-5.0, 5.0), 1e-4).unwrap();
        assert!((bf[0] - sol.v[0]).abs() <= 1e-4);
    }

    #[test]
    fn linear_case_is_a_direct_solve() {
        let d = DMatrix::from_row_slice(3, 3, &[4.0, -1.0, 0.5, -1.0, 3.0, -0.2, 0.5, -0.2, 2.0]);
        let a = dense_to_sparse(&d);
        let b = [1.0, -2.0, 0.5];
        let exact = d.clone().lu().solve(&nalgebra::DVector::from_column_slice(&b)).unwrap();
        for sel in [Selector::Trace(vec![2, 0]), Selector::Jump(vec![(0, 1)])] {
            let w = vec![0.5; sel.len()];
            let sol = solve_vi(&a, &b, &w, &sel, &JSpec::Zero, 1e-12, None).unwrap();
            for k in 0..3 {
                assert!((sol.v[k] - exact[k]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn symmetric_data_gives_symmetric_solution() {
        let d = DMatrix::from_row_slice(2, 2, &[3.0, -1.0, -1.0, 3.0]);
        let a = dense_to_sparse(&d);
        let sol = solve_vi(
            &a,
            &[2.0, 2.0],
            &[1.0, 1.0],
            &Selector::Trace(vec![0, 1]),
            &JSpec::AbsVal { lambda: 0.5 },
            1e-12,
            None,
        )
        .unwrap();
        assert!((sol.v[0] - sol.v[1]).abs() < 1e-12);
    }

    #[test]
    fn jump_coupling_does_not_stall() {
        // Per-DOF coordinate descent sticks at the origin here; the jump coordinates do not.
        let d = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let a = dense_to_sparse(&d);
        let sel = Selector::Jump(vec![(0, 1)]);
        let j = JSpec::AbsVal { lambda: 10.0 };
        let sol = solve_vi(&a, &[1.0, 1.0], &[1.0], &sel, &j, 1e-12, None).unwrap();
        assert!((sol.v[0] - 1.0).abs() < 1e-10 && (sol.v[1] - 1.0).abs() < 1e-10);
    }

    #[test]
    fn energy_trace_monotone_and_first_order_optimal() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let n = 6;
        let m = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let d = &m * m.transpose() + DMatrix::identity(n, n) * 0.5;
        let a = dense_to_sparse(&d);
        let b: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        for (sel, j) in [
            (Selector::Trace(vec![1, 3, 4]), JSpec::AbsVal { lambda: 0.6 }),
            (Selector::Jump(vec![(0, 2), (5, 1)]), JSpec::PositivePart { lambda: 1.1 }),
            (Selector::Jump(vec![(0, 2), (5, 1)]), JSpec::IntervalIndicator { a: -0.2, b: 0.1 }),
        ] {
            let w = vec![0.8; sel.len()];
            let solver = ViSolver::new(&a, &w, &sel).unwrap();
            let sol = solver.solve(&b, &j, None, &ViOptions { tol: 1e-13, max_sweeps: None }).unwrap();
            for pair in sol.energy_trace.windows(2) {
                assert!(pair[1] <= pair[0] + 1e-12 * (1.0 + pair[0].abs()));
            }
            let grad: Vec<f64> = mat_vec(&a, &sol.v).iter().zip(&b).map(|(x, y)| x - y).collect();
            let sv = sel.apply(&sol.v);
            for _ in 0..100 {
                let z: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
                let dir: Vec<f64> = z.iter().zip(&sol.v).map(|(a, b)| a - b).collect();
                let sd = sel.apply(&dir);
                let deriv = dot(&grad, &dir)
                    + sv.iter().zip(&sd).zip(&w).map(|((&x, &dx), &wk)| wk * j.directional_derivative(x, dx)).sum::<f64>();
                assert!(deriv >= -1e-8, "{j:?} {sel:?}: directional derivative {deriv:e}");
            }
            // start independence
            let init: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
            let other = solver.solve(&b, &j, Some(&init), &ViOptions { tol: 1e-13, max_sweeps: None }).unwrap();
            let diff: Vec<f64> = other.v.iter().zip(&sol.v).map(|(x, y)| x - y).collect();
            assert!(dot(&mat_vec(&a, &diff), &diff).sqrt() < 10.0 * 1e-13 + 1e-9);
        }
    }

    #[test]
    fn indefinite_matrix_is_rejected() {
        let d = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        let a = dense_to_sparse(&d);
        let err = ViSolver::new(&a, &[1.0], &Selector::Trace(vec![0])).err().unwrap();
        assert!(matches!(err, Error::Numeric { .. }));
        let d = DMatrix::from_row_slice(1, 1, &[-1.0]);
        let err = ViSolver::new(&dense_to_sparse(&d), &[1.0], &Selector::Trace(vec![0])).err().unwrap();
        assert!(matches!(err, Error::Numeric { .. }));
    }

    #[test]
    fn sweep_cap_reports_trace() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 5;
        let m = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let d = &m * m.transpose() + DMatrix::identity(n, n) * 0.01;
        let a = dense_to_sparse(&d);
        let sel = Selector::Trace((0..n).collect());
        let err = ViSolver::new(&a, &vec![1.0; n], &sel)
            .unwrap()
            .solve(&[1.0; 5], &JSpec::AbsVal { lambda: 0.1 }, None, &ViOptions { tol: 1e-14, max_sweeps: Some(2) })
            .unwrap_err();
        match err {
            Error::NonConvergence { sweeps, energy_trace } => {
                assert_eq!(sweeps, 2);
                assert_eq!(energy_trace.len(), 3);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn brute_force_limits_and_refinement() {
        let d = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.5]);
        let a = dense_to_sparse(&d);
        let b = [1.3, -0.7];
        let sel = Selector::Jump(vec![(0, 1)]);
        let j = JSpec::AbsVal { lambda: 0.4 };
        let exact = solve_vi(&a, &b, &[1.0], &sel, &j, 1e-13, None).unwrap().v;
        let err = |step: f64| {
            let bf = brute_force_vi(&a, &b, &[1.0], &sel, &j, (-3.0, 3.0), step).unwrap();
            bf.iter().zip(&exact).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
        };
        let (coarse, fine) = (err(1e-2), err(1e-3));
        assert!(coarse <= 1e-2 && fine <= 1e-3);
        assert!(fine < coarse);

        let big = dense_to_sparse(&DMatrix::identity(4, 4));
        assert!(matches!(
            brute_force_vi(&big, &[0.0; 4], &[1.0], &Selector::Trace(vec![0]), &j, (-1.0, 1.0), 0.1),
            Err(Error::UnsupportedSize(_))
        ));
    }
}
