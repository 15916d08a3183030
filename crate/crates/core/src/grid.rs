//! Flat compact source domains sampled on uniform grids.
//!
//! Nodes are numbered `i0 + n0 * i1`. Periodic kinds place `N` nodes at
//! `x_j = j h` with `h = L / N`; Dirichlet kinds place `N` nodes on the closed
//! segment with `h = L / (N - 1)` and boundary nodes carry zero volume weight.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Serialized grid descriptor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GridSpec {
    Circle {
        length: f64,
        nodes: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        inverse_metric: Option<Vec<f64>>,
    },
    Torus2 {
        lengths: [f64; 2],
        nodes: [usize; 2],
        #[serde(default, skip_serializing_if = "Option::is_none")]
        inverse_metric: Option<Vec<f64>>,
    },
    Interval {
        length: f64,
        nodes: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        inverse_metric: Option<Vec<f64>>,
    },
    Rectangle {
        lengths: [f64; 2],
        nodes: [usize; 2],
        #[serde(default, skip_serializing_if = "Option::is_none")]
        inverse_metric: Option<Vec<f64>>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Axis {
    pub length: f64,
    pub nodes: usize,
    pub spacing: f64,
}

/// A discretized flat domain with its boundary policy.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "GridSpec", into = "GridSpec")]
pub struct DomainGrid {
    spec: GridSpec,
    axes: Vec<Axis>,
    inverse_metric: Vec<f64>,
    periodic: bool,
    /// Per axis `(a, b, w)` with `b` the forward neighbor of `a`.
    edge_lists: Vec<Vec<(usize, usize, f64)>>,
    weights: Vec<f64>,
}

/// Grids are equal when their descriptors are; the rest is derived.
impl PartialEq for DomainGrid {
    fn eq(&self, other: &Self) -> bool {
        self.spec == other.spec
    }
}

impl From<DomainGrid> for GridSpec {
    fn from(grid: DomainGrid) -> Self {
        grid.spec
    }
}

impl TryFrom<GridSpec> for DomainGrid {
    type Error = Error;

    fn try_from(spec: GridSpec) -> Result<Self> {
        DomainGrid::new(spec)
    }
}

impl DomainGrid {
    pub fn new(spec: GridSpec) -> Result<Self> {
        let (lengths, nodes, inv, periodic): (Vec<f64>, Vec<usize>, &Option<Vec<f64>>, bool) = match &spec {
            GridSpec::Circle { length, nodes, inverse_metric } => (vec![*length], vec![*nodes], inverse_metric, true),
            GridSpec::Torus2 { lengths, nodes, inverse_metric } => (lengths.to_vec(), nodes.to_vec(), inverse_metric, true),
            GridSpec::Interval { length, nodes, inverse_metric } => (vec![*length], vec![*nodes], inverse_metric, false),
            GridSpec::Rectangle { lengths, nodes, inverse_metric } => {
                (lengths.to_vec(), nodes.to_vec(), inverse_metric, false)
            }
        };
        let min_nodes = if periodic { 3 } else { 4 };
        let mut axes = Vec::with_capacity(lengths.len());
        for (&length, &n) in lengths.iter().zip(&nodes) {
            if !(length.is_finite() && length > 0.0) {
                return Err(Error::InvalidDescriptor(format!("grid length must be positive, got {length}")));
            }
            if n < min_nodes {
                return Err(Error::InvalidDescriptor(format!("grid axis needs at least {min_nodes} nodes, got {n}")));
            }
            let spacing = if periodic { length / n as f64 } else { length / (n - 1) as f64 };
            axes.push(Axis { length, nodes: n, spacing });
        }
        let inverse_metric = match inv {
            None => vec![1.0; axes.len()],
            Some(g) if g.len() == axes.len() && g.iter().all(|v| v.is_finite() && *v > 0.0) => g.clone(),
            Some(g) => {
                return Err(Error::InvalidDescriptor(format!(
                    "inverse_metric must hold {} positive entries, got {g:?}",
                    axes.len()
                )))
            }
        };
        let mut grid = Self { spec, axes, inverse_metric, periodic, edge_lists: Vec::new(), weights: Vec::new() };
        let cell: f64 = grid.axes.iter().map(|a| a.spacing).product();
        grid.weights = (0..grid.node_count()).map(|i| if grid.is_boundary(i) { 0.0 } else { cell }).collect();
        grid.edge_lists = (0..grid.dim()).map(|axis| grid.build_edges(axis)).collect();
        Ok(grid)
    }

    pub fn circle(length: f64, nodes: usize) -> Result<Self> {
        Self::new(GridSpec::Circle { length, nodes, inverse_metric: None })
    }

    pub fn torus2(lengths: [f64; 2], nodes: [usize; 2]) -> Result<Self> {
        Self::new(GridSpec::Torus2 { lengths, nodes, inverse_metric: None })
    }

    pub fn interval(length: f64, nodes: usize) -> Result<Self> {
        Self::new(GridSpec::Interval { length, nodes, inverse_metric: None })
    }

    pub fn rectangle(lengths: [f64; 2], nodes: [usize; 2]) -> Result<Self> {
        Self::new(GridSpec::Rectangle { lengths, nodes, inverse_metric: None })
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn axis(&self, i: usize) -> &Axis {
        &self.axes[i]
    }

    pub fn spacing(&self, i: usize) -> f64 {
        self.axes[i].spacing
    }

    pub fn is_periodic(&self) -> bool {
        self.periodic
    }

    /// Diagonal entry `g^{ii}` of the constant inverse domain metric.
    pub fn inverse_metric(&self, i: usize) -> f64 {
        self.inverse_metric[i]
    }

    pub fn node_count(&self) -> usize {
        self.axes.iter().map(|a| a.nodes).product()
    }

    /// Per-axis index of a node.
    #[inline]
    pub fn multi_index(&self, idx: usize) -> [usize; 2] {
        let n0 = self.axes[0].nodes;
        [idx % n0, idx / n0]
    }

    #[inline]
    fn flat_index(&self, multi: [usize; 2]) -> usize {
        multi[0] + self.axes[0].nodes * multi[1]
    }

    pub fn coordinates(&self, idx: usize) -> Vec<f64> {
        let m = self.multi_index(idx);
        self.axes.iter().enumerate().map(|(i, a)| m[i] as f64 * a.spacing).collect()
    }

    pub fn is_boundary(&self, idx: usize) -> bool {
        if self.periodic {
            return false;
        }
        let m = self.multi_index(idx);
        self.axes.iter().enumerate().any(|(i, a)| m[i] == 0 || m[i] == a.nodes - 1)
    }

    pub fn interior_nodes(&self) -> Vec<usize> {
        (0..self.node_count()).filter(|&i| !self.is_boundary(i)).collect()
    }

    /// Node `offset` steps away along `axis`, wrapping on periodic grids.
    #[inline]
    pub fn neighbor(&self, idx: usize, axis: usize, offset: isize) -> Option<usize> {
        let mut m = self.multi_index(idx);
        let n = self.axes[axis].nodes as isize;
        let j = m[axis] as isize + offset;
        let j = if self.periodic {
            j.rem_euclid(n)
        } else if (0..n).contains(&j) {
            j
        } else {
            return None;
        };
        m[axis] = j as usize;
        Some(self.flat_index(m))
    }

    /// Quadrature weight per node.
    pub fn volume_weights(&self) -> Vec<f64> {
        self.weights.clone()
    }

    pub(crate) fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn total_volume(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// Largest stable explicit time step `c h_min² / max g^{ii}`.
    pub fn stability_bound(&self, cfl_safety: f64) -> f64 {
        let hmin = self.axes.iter().map(|a| a.spacing).fold(f64::INFINITY, f64::min);
        let gmax = self.inverse_metric.iter().copied().fold(0.0, f64::max);
        cfl_safety * hmin * hmin / gmax
    }

    /// Edges along `axis` as `(from, to, weight)`; the weight is the cell volume
    /// halved for each transverse Dirichlet boundary the edge lies on.
    pub(crate) fn edges(&self, axis: usize) -> &[(usize, usize, f64)] {
        &self.edge_lists[axis]
    }

    fn build_edges(&self, axis: usize) -> Vec<(usize, usize, f64)> {
        let cell: f64 = self.axes.iter().map(|a| a.spacing).product();
        let mut out = Vec::new();
        for idx in 0..self.node_count() {
            let Some(next) = self.neighbor(idx, axis, 1) else { continue };
            let mut w = cell;
            if !self.periodic {
                let m = self.multi_index(idx);
                for (k, a) in self.axes.iter().enumerate() {
                    if k != axis && (m[k] == 0 || m[k] == a.nodes - 1) {
                        w *= 0.5;
                    }
                }
            }
            out.push((idx, next, w));
        }
        out
    }

    fn check_len(&self, field: &[f64]) -> Result<()> {
        if field.len() != self.node_count() {
            return Err(Error::ShapeMismatch { expected: self.node_count(), got: field.len() });
        }
        Ok(())
    }

    /// First derivative along `axis` at `idx`; `rel(k)` returns the field at
    /// node `k` minus the field at `idx`.
    #[inline]
    pub(crate) fn first_diff_at<F: Fn(usize) -> f64>(&self, idx: usize, axis: usize, rel: F) -> f64 {
        let h = self.axes[axis].spacing;
        match (self.neighbor(idx, axis, -1), self.neighbor(idx, axis, 1)) {
            (Some(p), Some(q)) => (rel(q) - rel(p)) / (2.0 * h),
            (None, Some(q)) => {
                let q2 = self.neighbor(idx, axis, 2).expect("axis has at least 4 nodes");
                (4.0 * rel(q) - rel(q2)) / (2.0 * h)
            }
            (Some(p), None) => {
                let p2 = self.neighbor(idx, axis, -2).expect("axis has at least 4 nodes");
                (rel(p2) - 4.0 * rel(p)) / (2.0 * h)
            }
            (None, None) => unreachable!("axis has at least 3 nodes"),
        }
    }

    /// Second derivative along `axis` at `idx`; compact three-point stencil in
    /// the interior, second-order one-sided four-point stencil at Dirichlet ends.
    #[inline]
    pub(crate) fn second_diff_at<F: Fn(usize) -> f64>(&self, idx: usize, axis: usize, rel: F) -> f64 {
        let h = self.axes[axis].spacing;
        match (self.neighbor(idx, axis, -1), self.neighbor(idx, axis, 1)) {
            (Some(p), Some(q)) => (rel(p) + rel(q)) / (h * h),
            (None, Some(_)) | (Some(_), None) => {
                let sign = if self.neighbor(idx, axis, 1).is_some() { 1 } else { -1 };
                let at = |k: isize| rel(self.neighbor(idx, axis, sign * k).expect("axis has at least 4 nodes"));
                (-5.0 * at(1) + 4.0 * at(2) - at(3)) / (h * h)
            }
            (None, None) => unreachable!("axis has at least 3 nodes"),
        }
    }

    /// `∂u/∂x^axis` on every node.
    pub fn first_diff(&self, field: &[f64], axis: usize) -> Result<Vec<f64>> {
        self.check_len(field)?;
        Ok((0..field.len()).map(|i| self.first_diff_at(i, axis, |k| field[k] - field[i])).collect())
    }

    /// `∂²u/∂x^i∂x^j` on every node; mixed derivatives by nested central differences.
    pub fn second_diff(&self, field: &[f64], i: usize, j: usize) -> Result<Vec<f64>> {
        self.check_len(field)?;
        if i == j {
            Ok((0..field.len()).map(|n| self.second_diff_at(n, i, |k| field[k] - field[n])).collect())
        } else {
            let inner = self.first_diff(field, j)?;
            self.first_diff(&inner, i)
        }
    }

    /// The `k` smallest eigenvalues of `−Δ` on the grid (zero Dirichlet data on
    /// boundary nodes), from the closed-form discrete Fourier/sine spectrum.
    pub fn domain_laplacian_eigs(&self, k: usize) -> Result<Vec<f64>> {
        let dof = if self.periodic { self.node_count() } else { self.interior_nodes().len() };
        if k > dof {
            return Err(Error::InvalidDescriptor(format!("requested {k} eigenvalues of a {dof}-dimensional operator")));
        }
        let per_axis: Vec<Vec<f64>> = self
            .axes
            .iter()
            .zip(&self.inverse_metric)
            .map(|(a, g)| {
                let h2 = a.spacing * a.spacing;
                if self.periodic {
                    (0..a.nodes).map(|m| g * 4.0 / h2 * (PI * m as f64 / a.nodes as f64).sin().powi(2)).collect()
                } else {
                    (1..a.nodes - 1)
                        .map(|m| g * 4.0 / h2 * (PI * m as f64 / (2.0 * (a.nodes - 1) as f64)).sin().powi(2))
                        .collect()
                }
            })
            .collect();
        let mut all: Vec<f64> = per_axis[0].clone();
        for next in &per_axis[1..] {
            all = all.iter().flat_map(|a| next.iter().map(move |b| a + b)).collect();
        }
        all.sort_by(f64::total_cmp);
        all.truncate(k);
        Ok(all)
    }
}
